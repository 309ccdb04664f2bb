//! Same-padded, stride-1 2-D convolution.
//!
//! Both passes unroll each batch item into columns (rows ordered channel,
//! kernel row, kernel column) and multiply with a single-threaded sgemm, so
//! every output element is reduced in one fixed order. Work is split across
//! batch items only; the batch reduction of the kernel gradient runs in item
//! order afterwards, so results do not depend on the rayon pool size.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Conv2dGrads {
    pub input: Tensor,
    pub kernel: Tensor,
    pub bias: Tensor,
}

struct Geometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    f: usize,
    k: usize,
}

impl Geometry {
    fn pad(&self) -> usize {
        (self.k - 1) / 2
    }
    fn hp(&self) -> usize {
        self.h + self.k - 1
    }
    fn wp(&self) -> usize {
        self.w + self.k - 1
    }
}

fn geometry(input: &Tensor, kernel: &Tensor) -> Result<Geometry> {
    let [n, c, h, w] = input.dims4("conv2d input")?;
    let [f, kc, kh, kw] = kernel.dims4("conv2d kernel")?;
    if kc != c {
        return Err(Error::invalid(format!(
            "conv2d: input has {c} channels but kernel expects {kc}"
        )));
    }
    if kh != kw || kh % 2 == 0 {
        return Err(Error::invalid(format!(
            "conv2d: kernel must be square with odd size, got {kh}x{kw}"
        )));
    }
    Ok(Geometry {
        n,
        c,
        h,
        w,
        f,
        k: kh,
    })
}

/// Zero-pads every `H x W` plane to `(H + k - 1) x (W + k - 1)`.
fn pad_planes(data: &[f32], g: &Geometry) -> Vec<f32> {
    let (hp, wp, p) = (g.hp(), g.wp(), g.pad());
    let mut out = vec![0.0f32; g.n * g.c * hp * wp];
    for (src, dst) in data
        .chunks_exact(g.h * g.w)
        .zip(out.chunks_exact_mut(hp * wp))
    {
        for y in 0..g.h {
            let row = &src[y * g.w..(y + 1) * g.w];
            dst[(y + p) * wp + p..(y + p) * wp + p + g.w].copy_from_slice(row);
        }
    }
    out
}

/// Unrolls one padded item `[C, Hp, Wp]` into columns `[C*k*k, H*W]`, rows
/// ordered channel, kernel row, kernel column.
fn im2col(pad_n: &[f32], g: &Geometry, cols: &mut [f32]) {
    let (hp, wp, k) = (g.hp(), g.wp(), g.k);
    let plane = g.h * g.w;
    for c in 0..g.c {
        let src = &pad_n[c * hp * wp..(c + 1) * hp * wp];
        for i in 0..k {
            for j in 0..k {
                let row =
                    &mut cols[((c * k + i) * k + j) * plane..((c * k + i) * k + j + 1) * plane];
                for y in 0..g.h {
                    row[y * g.w..(y + 1) * g.w]
                        .copy_from_slice(&src[(y + i) * wp + j..(y + i) * wp + j + g.w]);
                }
            }
        }
    }
}

/// `c = a(m x k) * b(k x n) + beta * c`, all row-major.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_transposed: bool,
    b: &[f32],
    b_transposed: bool,
    beta: f32,
    c: &mut [f32],
) {
    let (rsa, csa) = if a_transposed {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_transposed {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: slices hold m*k, k*n and m*n elements addressed by these strides.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn conv2d_forward(input: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let g = geometry(input, kernel)?;
    if bias.shape() != [g.f] {
        return Err(Error::invalid(format!(
            "conv2d: bias shape {:?} does not match {} filters",
            bias.shape(),
            g.f
        )));
    }
    let padded = pad_planes(input.data(), &g);
    let (hp, wp, k) = (g.hp(), g.wp(), g.k);
    let plane = g.h * g.w;
    let ckk = g.c * k * k;
    let kdata = kernel.data();
    let bdata = bias.data();

    let mut out = vec![0.0f32; g.n * g.f * plane];
    out.par_chunks_mut(g.f * plane)
        .zip(padded.par_chunks(g.c * hp * wp))
        .for_each_init(
            || vec![0.0f32; ckk * plane],
            |cols, (out_n, pad_n)| {
                im2col(pad_n, &g, cols);
                for (f, out_f) in out_n.chunks_exact_mut(plane).enumerate() {
                    out_f.fill(bdata[f]);
                }
                gemm(g.f, ckk, plane, kdata, false, cols, false, 1.0, out_n);
            },
        );
    Tensor::from_vec(&[g.n, g.f, g.h, g.w], out)
}

pub fn conv2d_backward(grad_out: &Tensor, input: &Tensor, kernel: &Tensor) -> Result<Conv2dGrads> {
    let g = geometry(input, kernel)?;
    if grad_out.shape() != [g.n, g.f, g.h, g.w] {
        return Err(Error::invalid(format!(
            "conv2d backward: gradient shape {:?} does not match output [{}, {}, {}, {}]",
            grad_out.shape(),
            g.n,
            g.f,
            g.h,
            g.w
        )));
    }
    let (hp, wp, k, p) = (g.hp(), g.wp(), g.k, g.pad());
    let plane = g.h * g.w;
    let ckk = g.c * k * k;
    let kdata = kernel.data();
    let gout = grad_out.data();
    let padded = pad_planes(input.data(), &g);

    // Per item: kernel gradient gout(F x HW) * cols^T, and column gradient
    // kernel^T * gout scattered back onto the padded input.
    let per_item: Vec<(Vec<f32>, Vec<f32>)> = gout
        .par_chunks(g.f * plane)
        .zip(padded.par_chunks(g.c * hp * wp))
        .map_init(
            || {
                (
                    vec![0.0f32; ckk * plane],
                    vec![0.0f32; ckk * plane],
                    vec![0.0f32; hp * wp],
                )
            },
            |(cols, dcols, acc), (gout_n, pad_n)| {
                im2col(pad_n, &g, cols);
                let mut gk = vec![0.0f32; g.f * ckk];
                gemm(g.f, plane, ckk, gout_n, false, cols, true, 0.0, &mut gk);
                gemm(ckk, g.f, plane, kdata, true, gout_n, false, 0.0, dcols);

                let mut gin = vec![0.0f32; g.c * plane];
                for (c, gin_c) in gin.chunks_exact_mut(plane).enumerate() {
                    acc.fill(0.0);
                    for i in 0..k {
                        for j in 0..k {
                            let row = &dcols
                                [((c * k + i) * k + j) * plane..((c * k + i) * k + j + 1) * plane];
                            for y in 0..g.h {
                                let d = &mut acc[(y + i) * wp + j..(y + i) * wp + j + g.w];
                                for (a, &v) in d.iter_mut().zip(&row[y * g.w..(y + 1) * g.w]) {
                                    *a += v;
                                }
                            }
                        }
                    }
                    for y in 0..g.h {
                        gin_c[y * g.w..(y + 1) * g.w]
                            .copy_from_slice(&acc[(y + p) * wp + p..(y + p) * wp + p + g.w]);
                    }
                }
                (gk, gin)
            },
        )
        .collect();

    // Batch reduction in item order.
    let mut grad_k = vec![0.0f32; g.f * ckk];
    let mut grad_in = Vec::with_capacity(g.n * g.c * plane);
    for (gk, gin) in per_item {
        for (a, b) in grad_k.iter_mut().zip(&gk) {
            *a += b;
        }
        grad_in.extend_from_slice(&gin);
    }

    let mut grad_b = vec![0.0f32; g.f];
    for (f, gb) in grad_b.iter_mut().enumerate() {
        let mut sum = 0.0f32;
        for n in 0..g.n {
            sum += gout[(n * g.f + f) * plane..(n * g.f + f + 1) * plane]
                .iter()
                .sum::<f32>();
        }
        *gb = sum;
    }

    Ok(Conv2dGrads {
        input: Tensor::from_vec(&[g.n, g.c, g.h, g.w], grad_in)?,
        kernel: Tensor::from_vec(kernel.shape(), grad_k)?,
        bias: Tensor::from_vec(&[g.f], grad_b)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal_tensor, seeded};

    /// Direct six-loop reference in `f64`, independent of the production kernel.
    fn reference_conv(input: &Tensor, kernel: &Tensor, bias: &Tensor) -> Vec<f64> {
        let [n, c, h, w] = input.dims4("").unwrap();
        let [f, _, k, _] = kernel.dims4("").unwrap();
        let p = (k as isize - 1) / 2;
        let x = input.data();
        let kw = kernel.data();
        let mut out = vec![0.0f64; n * f * h * w];
        for b in 0..n {
            for o in 0..f {
                for y in 0..h {
                    for xx in 0..w {
                        let mut s = bias.data()[o] as f64;
                        for ci in 0..c {
                            for i in 0..k {
                                for j in 0..k {
                                    let yy = y as isize + i as isize - p;
                                    let xc = xx as isize + j as isize - p;
                                    if yy < 0 || xc < 0 || yy >= h as isize || xc >= w as isize {
                                        continue;
                                    }
                                    let iv = x[((b * c + ci) * h + yy as usize) * w + xc as usize];
                                    s += kw[((o * c + ci) * k + i) * k + j] as f64 * iv as f64;
                                }
                            }
                        }
                        out[((b * f + o) * h + y) * w + xx] = s;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let input = Tensor::ones(&[1, 1, 3, 3]);
        let mut kernel = Tensor::zeros(&[1, 1, 3, 3]);
        kernel.data_mut()[4] = 1.0;
        let out = conv2d_forward(&input, &kernel, &Tensor::zeros(&[1])).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn zero_kernel_gives_bias_everywhere() {
        let mut rng = seeded(3);
        let input = normal_tensor(&[2, 2, 5, 4], 1.0, &mut rng);
        let kernel = Tensor::zeros(&[3, 2, 3, 3]);
        let bias = Tensor::from_vec(&[3], vec![0.25, -1.5, 7.0]).unwrap();
        let out = conv2d_forward(&input, &kernel, &bias).unwrap();
        for (idx, v) in out.data().iter().enumerate() {
            assert_eq!(*v, bias.data()[(idx / 20) % 3]);
        }
    }

    /// Pixel-range input with He-scaled kernels, the regime the network runs in.
    fn operating_point(shape: [usize; 6], rng: &mut crate::rng::Rng) -> (Tensor, Tensor, Tensor) {
        let [n, c, h, w, f, k] = shape;
        let input =
            normal_tensor(&[n, c, h, w], 1.0, rng).map(|v| (v * 0.25 + 0.5).clamp(0.0, 1.0));
        let std = (2.0 / (k * k * c) as f32).sqrt();
        let kernel = normal_tensor(&[f, c, k, k], std, rng);
        let bias = normal_tensor(&[f], 0.1, rng);
        (input, kernel, bias)
    }

    #[test]
    fn matches_direct_loop_reference() {
        for seed in 0..20 {
            let mut rng = seeded(seed);
            let (input, kernel, bias) = operating_point([1, 2, 4, 4, 3, 3], &mut rng);
            let out = conv2d_forward(&input, &kernel, &bias).unwrap();
            for (a, b) in out
                .data()
                .iter()
                .zip(reference_conv(&input, &kernel, &bias))
            {
                assert!((*a as f64 - b).abs() < 1e-6, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn matches_reference_on_odd_shapes() {
        let mut rng = seeded(11);
        for shape in [
            [2, 3, 7, 5, 2, 5],
            [1, 1, 1, 1, 1, 3],
            [3, 1, 2, 9, 4, 1],
            [2, 16, 6, 6, 16, 3],
        ] {
            let (input, kernel, bias) = operating_point(shape, &mut rng);
            let out = conv2d_forward(&input, &kernel, &bias).unwrap();
            for (a, b) in out
                .data()
                .iter()
                .zip(reference_conv(&input, &kernel, &bias))
            {
                assert!((*a as f64 - b).abs() < 1e-6, "{shape:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn rejects_channel_mismatch() {
        let input = Tensor::zeros(&[1, 2, 4, 4]);
        let kernel = Tensor::zeros(&[1, 3, 3, 3]);
        let err = conv2d_forward(&input, &kernel, &Tensor::zeros(&[1])).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
        let err = conv2d_backward(&Tensor::zeros(&[1, 1, 4, 4]), &input, &kernel).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let mut rng = seeded(5);
        let input = normal_tensor(&[2, 2, 4, 4], 1.0, &mut rng);
        let kernel = normal_tensor(&[3, 2, 3, 3], 1.0, &mut rng);
        let grads = conv2d_backward(&Tensor::zeros(&[2, 3, 4, 4]), &input, &kernel).unwrap();
        assert!(grads.input.data().iter().all(|&v| v == 0.0));
        assert!(grads.kernel.data().iter().all(|&v| v == 0.0));
        assert!(grads.bias.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bias_gradient_of_ones_is_plane_size() {
        let input = Tensor::ones(&[1, 1, 3, 3]);
        let mut kernel = Tensor::zeros(&[1, 1, 3, 3]);
        kernel.data_mut()[4] = 1.0;
        let grads = conv2d_backward(&Tensor::ones(&[1, 1, 3, 3]), &input, &kernel).unwrap();
        assert_eq!(grads.bias.data(), &[9.0]);
    }
}
