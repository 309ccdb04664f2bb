use proptest::prelude::*;
use rdncnn_core::network::{LayerKind, Network, NetworkConfig};
use rdncnn_core::ops::Mode;
use rdncnn_core::rng::{normal_tensor, seeded};
use rdncnn_core::{Error, Tensor};

fn cfg(depth: usize, filters: usize) -> NetworkConfig {
    NetworkConfig {
        depth,
        filters,
        kernel_size: 3,
        input_channels: 1,
    }
}

/// `(k^2 C F + F) + (D - 2)(k^2 F^2 + 3F) + (k^2 F C + C)`
fn closed_form(c: &NetworkConfig) -> usize {
    let (d, f, k, ch) = (c.depth, c.filters, c.kernel_size, c.input_channels);
    (k * k * ch * f + f) + (d - 2) * (k * k * f * f + 3 * f) + (k * k * f * ch + ch)
}

#[test]
fn reduced_network_layout() {
    let net = Network::new(NetworkConfig::REDUCED, 0).unwrap();
    let kinds: Vec<LayerKind> = net.layers().iter().map(|l| l.kind()).collect();
    assert_eq!(kinds.len(), 12);
    assert_eq!(kinds[0], LayerKind::ConvRelu);
    assert!(kinds[1..11].iter().all(|k| *k == LayerKind::ConvBnRelu));
    assert_eq!(kinds[11], LayerKind::Conv);
    assert_eq!(net.count_parameters(), 371_777);
    assert_eq!(net.kernel_weight_count(), 369_792);
}

#[test]
fn full_network_count_follows_architecture() {
    let net = Network::new(NetworkConfig::FULL, 0).unwrap();
    assert_eq!(net.count_parameters(), 557_057);
    assert_eq!(net.count_parameters(), closed_form(&NetworkConfig::FULL));
}

#[test]
fn minimal_network() {
    let net = Network::new(cfg(3, 1), 0).unwrap();
    let kinds: Vec<LayerKind> = net.layers().iter().map(|l| l.kind()).collect();
    assert_eq!(
        kinds,
        vec![LayerKind::ConvRelu, LayerKind::ConvBnRelu, LayerKind::Conv]
    );
    assert_eq!(Network::new(cfg(3, 4), 0).unwrap().count_parameters(), 233);
}

#[test]
fn invalid_configs_rejected() {
    for bad in [
        cfg(2, 4),
        cfg(5, 0),
        NetworkConfig {
            kernel_size: 4,
            ..cfg(5, 4)
        },
        NetworkConfig {
            input_channels: 0,
            ..cfg(5, 4)
        },
    ] {
        assert!(matches!(
            Network::new(bad, 0),
            Err(Error::InvalidArgument(_))
        ));
    }
}

#[test]
fn initialization_is_seeded() {
    let a = Network::new(cfg(5, 8), 42).unwrap();
    let b = Network::new(cfg(5, 8), 42).unwrap();
    let c = Network::new(cfg(5, 8), 43).unwrap();
    for ((la, lb), lc) in a.layers().iter().zip(b.layers()).zip(c.layers()) {
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&la.kernel), bits(&lb.kernel));
        assert_ne!(bits(&la.kernel), bits(&lc.kernel));
        assert!(la.bias.data().iter().all(|&v| v == 0.0));
        if let Some(bn) = &la.bn {
            assert!(bn.gamma.data().iter().all(|&v| v == 1.0));
            assert!(bn.beta.data().iter().all(|&v| v == 0.0));
            assert!(bn.stats.mean.data().iter().all(|&v| v == 0.0));
            assert!(bn.stats.var.data().iter().all(|&v| v == 1.0));
        }
    }
}

#[test]
fn he_initialization_scale() {
    let net = Network::new(NetworkConfig::REDUCED, 1).unwrap();
    let k = &net.layers()[5].kernel;
    let var = k.data().iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / k.len() as f64;
    let expected = 2.0 / (9.0 * 64.0);
    assert!(
        (var / expected - 1.0).abs() < 0.05,
        "variance {var} vs {expected}"
    );
}

#[test]
fn output_shape_equals_input_shape() {
    let mut net = Network::new(cfg(4, 4), 0).unwrap();
    let x = Tensor::full(&[1, 1, 40, 40], 0.5);
    assert_eq!(net.forward(&x, Mode::Train).unwrap().shape(), x.shape());
    assert_eq!(net.infer(&x).unwrap().shape(), x.shape());
}

#[test]
fn zero_final_layer_means_zero_residual() {
    let mut net = Network::new(cfg(4, 4), 3).unwrap();
    let last = net.layers_mut().last_mut().unwrap();
    last.kernel.fill(0.0);
    last.bias.fill(0.0);
    let mut rng = seeded(1);
    let x = normal_tensor(&[2, 1, 9, 7], 0.2, &mut rng).map(|v| (v + 0.5).clamp(0.0, 1.0));
    assert!(net.infer(&x).unwrap().data().iter().all(|&v| v == 0.0));
    assert_eq!(net.denoise(&x).unwrap(), x);
}

#[test]
fn denoise_clamps_to_unit_range() {
    let mut net = Network::new(cfg(3, 2), 3).unwrap();
    let last = net.layers_mut().last_mut().unwrap();
    last.kernel.fill(0.0);
    last.bias.fill(-0.5);
    let x = Tensor::full(&[1, 1, 4, 4], 0.75);
    assert!(net.denoise(&x).unwrap().data().iter().all(|&v| v == 1.0));
}

#[test]
fn infer_is_deterministic_and_pure() {
    let net = Network::new(cfg(5, 4), 9).unwrap();
    let x = normal_tensor(&[1, 1, 12, 12], 0.3, &mut seeded(2));
    let a = net.infer(&x).unwrap();
    let b = net.infer(&x).unwrap();
    assert_eq!(a, b);
}

#[test]
fn input_channel_mismatch_rejected() {
    let mut net = Network::new(cfg(3, 2), 0).unwrap();
    let x = Tensor::zeros(&[1, 2, 4, 4]);
    assert!(matches!(
        net.forward(&x, Mode::Infer),
        Err(Error::InvalidArgument(_))
    ));
    assert!(net.denoise(&x).is_err());
}

#[test]
fn backward_needs_a_train_forward() {
    let mut net = Network::new(cfg(3, 2), 0).unwrap();
    let g = Tensor::zeros(&[1, 1, 4, 4]);
    assert!(matches!(net.backward(&g), Err(Error::InvalidState(_))));
    net.forward(&Tensor::full(&[1, 1, 4, 4], 0.2), Mode::Infer)
        .unwrap();
    assert!(matches!(net.backward(&g), Err(Error::InvalidState(_))));
}

#[test]
fn zero_upstream_gives_zero_gradients() {
    let mut net = Network::new(cfg(4, 3), 5).unwrap();
    let x = normal_tensor(&[2, 1, 6, 6], 0.3, &mut seeded(4));
    net.forward(&x, Mode::Train).unwrap();
    net.backward(&Tensor::zeros(x.shape())).unwrap();
    for slot in net.parameters_mut() {
        assert!(slot.grad.data().iter().all(|&g| g == 0.0));
    }
}

#[test]
fn repeated_passes_give_identical_gradients() {
    let x = normal_tensor(&[3, 1, 8, 8], 0.3, &mut seeded(6));
    let g = normal_tensor(&[3, 1, 8, 8], 1.0, &mut seeded(7));
    let grads = |net: &mut Network| {
        net.forward(&x, Mode::Train).unwrap();
        net.backward(&g).unwrap();
        net.parameters_mut()
            .iter()
            .flat_map(|s| {
                s.grad
                    .data()
                    .iter()
                    .map(|v| v.to_bits())
                    .collect::<Vec<_>>()
            })
            .collect::<Vec<u32>>()
    };
    let mut a = Network::new(cfg(4, 4), 8).unwrap();
    let mut b = a.clone();
    assert_eq!(grads(&mut a), grads(&mut b));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn shape_is_preserved(n in 1usize..3, h in 1usize..12, w in 1usize..12, seed in 0u64..1000) {
        let mut net = Network::new(cfg(3, 2), seed).unwrap();
        let x = normal_tensor(&[n, 1, h, w], 0.3, &mut seeded(seed));
        let y = net.infer(&x).unwrap();
        prop_assert_eq!(y.shape(), x.shape());
        if n * h * w >= 2 {
            let y = net.forward(&x, Mode::Train).unwrap();
            prop_assert_eq!(y.shape(), x.shape());
        }
    }

    #[test]
    fn count_matches_closed_form(depth in 3usize..20, filters in 1usize..80, k in prop::sample::select(vec![1usize, 3, 5]), c in 1usize..4) {
        let config = NetworkConfig { depth, filters, kernel_size: k, input_channels: c };
        let net = Network::new(config, 0).unwrap();
        prop_assert_eq!(net.count_parameters(), closed_form(&config));
        let layers = net.layers();
        prop_assert_eq!(layers[0].kind(), LayerKind::ConvRelu);
        prop_assert!(layers[1..depth - 1].iter().all(|l| l.kind() == LayerKind::ConvBnRelu));
        prop_assert_eq!(layers[depth - 1].kind(), LayerKind::Conv);
    }
}

#[test]
fn count_ignores_parameter_values() {
    let mut net = Network::new(cfg(4, 5), 0).unwrap();
    let before = net.count_parameters();
    for slot in net.parameters_mut() {
        slot.value.fill(0.0);
    }
    assert_eq!(net.count_parameters(), before);
}
