//! Adam with bias correction.

use crate::dsd::mask::Mask;
use crate::error::{Error, Result};
use crate::network::{Network, ParamRole};
use crate::tensor::Tensor;

pub const ADAM_BETA1: f32 = 0.9;
pub const ADAM_BETA2: f32 = 0.999;
pub const ADAM_EPSILON: f32 = 1e-8;

/// First and second moments for every trainable tensor, in
/// [`Network::parameters_mut`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    step: u64,
}

impl OptimizerState {
    pub fn new(net: &Network) -> Self {
        let shapes = net.parameter_shapes();
        OptimizerState {
            first: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            second: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Tensor] {
        &self.second
    }

    pub fn reset(&mut self) {
        for t in self.first.iter_mut().chain(self.second.iter_mut()) {
            t.fill(0.0);
        }
        self.step = 0;
    }

    pub(crate) fn check_compatible(&self, net: &Network) -> Result<()> {
        let shapes = net.parameter_shapes();
        let ok = shapes.len() == self.first.len()
            && shapes
                .iter()
                .zip(&self.first)
                .all(|(s, m)| s.as_slice() == m.shape());
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("optimizer state does not match the network"))
        }
    }

    pub(crate) fn zero_masked(&mut self, slot: usize, active: &[bool]) {
        for t in [&mut self.first[slot], &mut self.second[slot]] {
            for (m, &a) in t.data_mut().iter_mut().zip(active) {
                if !a {
                    *m = 0.0;
                }
            }
        }
    }
}

/// One Adam update of `value` in place. Positions where `active` is false
/// keep their value and zero moments.
#[allow(clippy::too_many_arguments)]
pub fn adam_update(
    value: &mut [f32],
    grad: &[f32],
    first: &mut [f32],
    second: &mut [f32],
    step: u64,
    lr: f32,
    active: Option<&[bool]>,
) {
    let t = step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for i in 0..value.len() {
        if let Some(active) = active {
            if !active[i] {
                first[i] = 0.0;
                second[i] = 0.0;
                continue;
            }
        }
        let g = grad[i];
        first[i] = ADAM_BETA1 * first[i] + (1.0 - ADAM_BETA1) * g;
        second[i] = ADAM_BETA2 * second[i] + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = first[i] / c1;
        let v_hat = second[i] / c2;
        value[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
    }
}

/// Applies one optimizer step to every trainable tensor of `net` using its
/// current gradients. With a mask, frozen kernel positions are skipped.
pub fn adam_step(
    net: &mut Network,
    opt: &mut OptimizerState,
    lr: f32,
    mask: Option<&Mask>,
) -> Result<()> {
    opt.check_compatible(net)?;
    if let Some(mask) = mask {
        mask.check_compatible(net)?;
    }
    opt.step += 1;
    let step = opt.step;
    for (idx, slot) in net.parameters_mut().into_iter().enumerate() {
        let active = match (mask, slot.role) {
            (Some(m), ParamRole::Kernel) => Some(m.layers()[slot.layer].as_slice()),
            _ => None,
        };
        adam_update(
            slot.value.data_mut(),
            slot.grad.data(),
            opt.first[idx].data_mut(),
            opt.second[idx].data_mut(),
            step,
            lr,
            active,
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_fresh_state_does_not_move() {
        let mut value = [0.3f32, -1.0];
        let (mut m, mut v) = ([0.0; 2], [0.0; 2]);
        adam_update(&mut value, &[0.0, 0.0], &mut m, &mut v, 1, 1e-3, None);
        assert_eq!(value, [0.3, -1.0]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
        let mut value = [0.0f32];
        let (mut m, mut v) = ([0.0; 1], [0.0; 1]);
        adam_update(&mut value, &[1.0], &mut m, &mut v, 1, 1e-3, None);
        let expected = -1e-3 / (1.0 + 1e-8);
        assert!((value[0] as f64 - expected).abs() < 1e-9);

        let mut value = [0.0f32];
        let (mut m, mut v) = ([0.0; 1], [0.0; 1]);
        adam_update(&mut value, &[-250.0], &mut m, &mut v, 1, 1e-3, None);
        assert!((value[0] - 1e-3).abs() < 1e-9);
    }

    #[test]
    fn inactive_positions_are_frozen() {
        let mut value = [0.0f32, 0.0];
        let (mut m, mut v) = ([0.5; 2], [0.5; 2]);
        adam_update(
            &mut value,
            &[1.0, 1.0],
            &mut m,
            &mut v,
            3,
            1e-2,
            Some(&[false, true]),
        );
        assert_eq!(value[0], 0.0);
        assert_eq!((m[0], v[0]), (0.0, 0.0));
        assert!(value[1] < 0.0);
    }

    #[test]
    fn repeated_updates_are_deterministic() {
        let run = || {
            let mut value = [0.1f32, 0.2, -0.3];
            let (mut m, mut v) = ([0.0; 3], [0.0; 3]);
            for t in 1..=50 {
                let g = [value[0] * 2.0, value[1] - 1.0, (t as f32).sin()];
                adam_update(&mut value, &g, &mut m, &mut v, t, 1e-2, None);
            }
            value
        };
        assert_eq!(run().map(f32::to_bits), run().map(f32::to_bits));
    }
}
