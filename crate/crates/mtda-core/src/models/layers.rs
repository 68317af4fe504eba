//! Trainable layers with explicit forward/backward passes.
//!
//! Every forward returns a cache holding exactly what its backward needs.
//! Parameter gradients accumulate into the layer until [`zero_grad`] runs,
//! so one optimizer step can absorb several scaled backward passes.

use ndarray::{Array1, Array2, Array4, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;

/// Visitor over named parameter/gradient slabs, used by optimizers,
/// checkpoints, and checksums.
pub type ParamVisitorMut<'v, S> = dyn FnMut(&str, &[usize], &mut [S], &mut [S]) + 'v;
/// Read-only variant of [`ParamVisitorMut`].
pub type ParamVisitor<'v, S> = dyn FnMut(&str, &[usize], &[S]) + 'v;

fn kaiming_uniform<S: Scalar>(rng: &mut ChaCha8Rng, fan_in: usize, n: usize) -> Vec<S> {
    let bound = (6.0 / fan_in as f64).sqrt();
    (0..n)
        .map(|_| S::from_f64c(bound * (2.0 * rng.gen::<f64>() - 1.0)))
        .collect()
}

/// 3x3 convolution, stride 1, zero padding 1 (spatial size preserved).
#[derive(Debug, Clone)]
pub struct Conv2d<S> {
    pub c_in: usize,
    pub c_out: usize,
    weight: Array2<S>, // (c_out, c_in*9)
    bias: Array1<S>,
    grad_weight: Array2<S>,
    grad_bias: Array1<S>,
}

pub struct Conv2dCache<S> {
    cols: Array2<S>, // (c_in*9, b*h*w)
    b: usize,
    h: usize,
    w: usize,
}

const K: usize = 3;

fn im2col<S: Scalar>(x: &Array4<S>) -> Array2<S> {
    let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let mut cols = Array2::<S>::zeros((c * K * K, b * h * w));
    for bi in 0..b {
        for ci in 0..c {
            for ky in 0..K {
                for kx in 0..K {
                    let krow = ci * K * K + ky * K + kx;
                    for y in 0..h {
                        let sy = y as i64 + ky as i64 - 1;
                        if sy < 0 || sy >= h as i64 {
                            continue;
                        }
                        for x_ in 0..w {
                            let sx = x_ as i64 + kx as i64 - 1;
                            if sx < 0 || sx >= w as i64 {
                                continue;
                            }
                            cols[[krow, bi * h * w + y * w + x_]] =
                                x[[bi, ci, sy as usize, sx as usize]];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im<S: Scalar>(cols: &Array2<S>, b: usize, c: usize, h: usize, w: usize) -> Array4<S> {
    let mut out = Array4::<S>::zeros((b, c, h, w));
    for bi in 0..b {
        for ci in 0..c {
            for ky in 0..K {
                for kx in 0..K {
                    let krow = ci * K * K + ky * K + kx;
                    for y in 0..h {
                        let sy = y as i64 + ky as i64 - 1;
                        if sy < 0 || sy >= h as i64 {
                            continue;
                        }
                        for x_ in 0..w {
                            let sx = x_ as i64 + kx as i64 - 1;
                            if sx < 0 || sx >= w as i64 {
                                continue;
                            }
                            out[[bi, ci, sy as usize, sx as usize]] +=
                                cols[[krow, bi * h * w + y * w + x_]];
                        }
                    }
                }
            }
        }
    }
    out
}

impl<S: Scalar> Conv2d<S> {
    pub fn new(c_in: usize, c_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let fan_in = c_in * K * K;
        let weight =
            Array2::from_shape_vec((c_out, fan_in), kaiming_uniform(rng, fan_in, c_out * fan_in))
                .unwrap();
        Self {
            c_in,
            c_out,
            weight,
            bias: Array1::zeros(c_out),
            grad_weight: Array2::zeros((c_out, fan_in)),
            grad_bias: Array1::zeros(c_out),
        }
    }

    pub fn forward(&self, x: &Array4<S>) -> (Array4<S>, Conv2dCache<S>) {
        let (b, h, w) = (x.shape()[0], x.shape()[2], x.shape()[3]);
        debug_assert_eq!(x.shape()[1], self.c_in);
        let cols = im2col(x);
        let y2 = self.weight.dot(&cols); // (c_out, b*h*w)
        let mut y = Array4::<S>::zeros((b, self.c_out, h, w));
        for bi in 0..b {
            for co in 0..self.c_out {
                let bias = self.bias[co];
                for yy in 0..h {
                    for xx in 0..w {
                        y[[bi, co, yy, xx]] = y2[[co, bi * h * w + yy * w + xx]] + bias;
                    }
                }
            }
        }
        (y, Conv2dCache { cols, b, h, w })
    }

    /// Accumulate parameter gradients and return the input gradient.
    pub fn backward(&mut self, grad_y: &Array4<S>, cache: &Conv2dCache<S>) -> Array4<S> {
        let (b, h, w) = (cache.b, cache.h, cache.w);
        let mut g2 = Array2::<S>::zeros((self.c_out, b * h * w));
        for bi in 0..b {
            for co in 0..self.c_out {
                for yy in 0..h {
                    for xx in 0..w {
                        g2[[co, bi * h * w + yy * w + xx]] = grad_y[[bi, co, yy, xx]];
                    }
                }
            }
        }
        self.grad_weight = &self.grad_weight + &g2.dot(&cache.cols.t());
        self.grad_bias = &self.grad_bias + &g2.sum_axis(Axis(1));
        let grad_cols = self.weight.t().dot(&g2);
        col2im(&grad_cols, b, self.c_in, h, w)
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut ParamVisitorMut<'_, S>) {
        let ws = self.weight.shape().to_vec();
        f(
            &format!("{prefix}.weight"),
            &ws,
            self.weight.as_slice_mut().unwrap(),
            self.grad_weight.as_slice_mut().unwrap(),
        );
        let bs = self.bias.shape().to_vec();
        f(
            &format!("{prefix}.bias"),
            &bs,
            self.bias.as_slice_mut().unwrap(),
            self.grad_bias.as_slice_mut().unwrap(),
        );
    }

    pub fn visit(&self, prefix: &str, f: &mut ParamVisitor<'_, S>) {
        f(&format!("{prefix}.weight"), self.weight.shape(), self.weight.as_slice().unwrap());
        f(&format!("{prefix}.bias"), self.bias.shape(), self.bias.as_slice().unwrap());
    }
}

/// Fully connected layer: y = x W^T + b.
#[derive(Debug, Clone)]
pub struct Linear<S> {
    pub in_dim: usize,
    weight: Array2<S>, // (out, in)
    bias: Array1<S>,
    grad_weight: Array2<S>,
    grad_bias: Array1<S>,
}

pub struct LinearCache<S> {
    input: Array2<S>,
}

impl<S: Scalar> Linear<S> {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let weight = Array2::from_shape_vec(
            (out_dim, in_dim),
            kaiming_uniform(rng, in_dim, out_dim * in_dim),
        )
        .unwrap();
        Self {
            in_dim,
            weight,
            bias: Array1::zeros(out_dim),
            grad_weight: Array2::zeros((out_dim, in_dim)),
            grad_bias: Array1::zeros(out_dim),
        }
    }

    pub fn forward(&self, x: &Array2<S>) -> (Array2<S>, LinearCache<S>) {
        debug_assert_eq!(x.shape()[1], self.in_dim);
        let y = x.dot(&self.weight.t()) + &self.bias;
        (y, LinearCache { input: x.clone() })
    }

    pub fn backward(&mut self, grad_y: &Array2<S>, cache: &LinearCache<S>) -> Array2<S> {
        self.grad_weight = &self.grad_weight + &grad_y.t().dot(&cache.input);
        self.grad_bias = &self.grad_bias + &grad_y.sum_axis(Axis(0));
        grad_y.dot(&self.weight)
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut ParamVisitorMut<'_, S>) {
        let ws = self.weight.shape().to_vec();
        f(
            &format!("{prefix}.weight"),
            &ws,
            self.weight.as_slice_mut().unwrap(),
            self.grad_weight.as_slice_mut().unwrap(),
        );
        let bs = self.bias.shape().to_vec();
        f(
            &format!("{prefix}.bias"),
            &bs,
            self.bias.as_slice_mut().unwrap(),
            self.grad_bias.as_slice_mut().unwrap(),
        );
    }

    pub fn visit(&self, prefix: &str, f: &mut ParamVisitor<'_, S>) {
        f(&format!("{prefix}.weight"), self.weight.shape(), self.weight.as_slice().unwrap());
        f(&format!("{prefix}.bias"), self.bias.shape(), self.bias.as_slice().unwrap());
    }
}

/// ReLU over a 4-d activation map. Cache is the sign mask.
pub fn relu4<S: Scalar>(x: &Array4<S>) -> (Array4<S>, Array4<bool>) {
    let mask = x.mapv(|v| v > S::zero());
    let y = x.mapv(|v| if v > S::zero() { v } else { S::zero() });
    (y, mask)
}

pub fn relu4_backward<S: Scalar>(grad_y: &Array4<S>, mask: &Array4<bool>) -> Array4<S> {
    let mut g = grad_y.clone();
    g.zip_mut_with(mask, |v, &m| {
        if !m {
            *v = S::zero();
        }
    });
    g
}

/// ReLU over a 2-d activation matrix.
pub fn relu2<S: Scalar>(x: &Array2<S>) -> (Array2<S>, Array2<bool>) {
    let mask = x.mapv(|v| v > S::zero());
    let y = x.mapv(|v| if v > S::zero() { v } else { S::zero() });
    (y, mask)
}

pub fn relu2_backward<S: Scalar>(grad_y: &Array2<S>, mask: &Array2<bool>) -> Array2<S> {
    let mut g = grad_y.clone();
    g.zip_mut_with(mask, |v, &m| {
        if !m {
            *v = S::zero();
        }
    });
    g
}

/// 2x2 max pooling with stride 2. Ties resolve to the first (row-major)
/// maximal element so forward and backward stay deterministic.
pub fn maxpool2<S: Scalar>(x: &Array4<S>) -> (Array4<S>, Array4<u8>) {
    let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    debug_assert!(h % 2 == 0 && w % 2 == 0);
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Array4::<S>::zeros((b, c, oh, ow));
    let mut arg = Array4::<u8>::zeros((b, c, oh, ow));
    for bi in 0..b {
        for ci in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = x[[bi, ci, 2 * oy, 2 * ox]];
                    let mut best_k = 0u8;
                    for k in 1..4u8 {
                        let (dy, dx) = ((k / 2) as usize, (k % 2) as usize);
                        let v = x[[bi, ci, 2 * oy + dy, 2 * ox + dx]];
                        if v > best {
                            best = v;
                            best_k = k;
                        }
                    }
                    y[[bi, ci, oy, ox]] = best;
                    arg[[bi, ci, oy, ox]] = best_k;
                }
            }
        }
    }
    (y, arg)
}

pub fn maxpool2_backward<S: Scalar>(
    grad_y: &Array4<S>,
    arg: &Array4<u8>,
    h: usize,
    w: usize,
) -> Array4<S> {
    let (b, c, oh, ow) = (
        grad_y.shape()[0],
        grad_y.shape()[1],
        grad_y.shape()[2],
        grad_y.shape()[3],
    );
    let mut g = Array4::<S>::zeros((b, c, h, w));
    for bi in 0..b {
        for ci in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let k = arg[[bi, ci, oy, ox]];
                    let (dy, dx) = ((k / 2) as usize, (k % 2) as usize);
                    g[[bi, ci, 2 * oy + dy, 2 * ox + dx]] += grad_y[[bi, ci, oy, ox]];
                }
            }
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(1)
    }

    #[test]
    fn conv_preserves_spatial_size() {
        let conv = Conv2d::<f64>::new(2, 5, &mut rng());
        let x = Array4::from_shape_fn((3, 2, 6, 6), |(b, c, y, x)| {
            (b + c + y + x) as f64 * 0.01
        });
        let (y, _) = conv.forward(&x);
        assert_eq!(y.shape(), &[3, 5, 6, 6]);
    }

    #[test]
    fn linear_shapes_and_determinism() {
        let a = Linear::<f64>::new(4, 3, &mut rng());
        let b = Linear::<f64>::new(4, 3, &mut rng());
        let x = Array2::from_shape_fn((2, 4), |(i, j)| (i * 4 + j) as f64 * 0.1);
        let (ya, _) = a.forward(&x);
        let (yb, _) = b.forward(&x);
        assert_eq!(ya, yb);
        assert_eq!(ya.shape(), &[2, 3]);
    }

    #[test]
    fn maxpool_backward_routes_to_argmax() {
        let mut x = Array4::<f64>::zeros((1, 1, 2, 2));
        x[[0, 0, 1, 0]] = 5.0;
        let (y, arg) = maxpool2(&x);
        assert_eq!(y[[0, 0, 0, 0]], 5.0);
        let mut gy = Array4::<f64>::zeros((1, 1, 1, 1));
        gy[[0, 0, 0, 0]] = 2.0;
        let gx = maxpool2_backward(&gy, &arg, 2, 2);
        assert_eq!(gx[[0, 0, 1, 0]], 2.0);
        assert_eq!(gx[[0, 0, 0, 0]], 0.0);
    }

    fn flat_params(c: &Conv2d<f64>) -> Vec<f64> {
        let mut v = Vec::new();
        c.visit("c", &mut |_, _, s| v.extend_from_slice(s));
        v
    }

    fn set_params(c: &mut Conv2d<f64>, flat: &[f64]) {
        let mut off = 0;
        c.visit_mut("c", &mut |_, _, s, _| {
            s.copy_from_slice(&flat[off..off + s.len()]);
            off += s.len();
        });
    }

    // Central-difference check of the conv parameter gradient through a
    // fixed linear read-out of the output map.
    #[test]
    fn conv_gradient_matches_finite_difference() {
        let mut conv = Conv2d::<f64>::new(1, 2, &mut rng());
        let x = Array4::from_shape_fn((2, 1, 4, 4), |(b, _, y, xx)| {
            ((b * 16 + y * 4 + xx) as f64).sin() * 0.5 + 0.5
        });
        let readout = |y: &Array4<f64>| -> f64 {
            y.iter().enumerate().map(|(i, v)| v * (i as f64 * 0.01).cos()).sum()
        };
        let (y, cache) = conv.forward(&x);
        let grad_y = Array4::from_shape_fn(y.raw_dim(), |(b, c, yy, xx)| {
            let i = ((b * 2 + c) * 4 + yy) * 4 + xx;
            (i as f64 * 0.01).cos()
        });
        conv.backward(&grad_y, &cache);

        let mut analytic = Vec::new();
        conv.visit_mut("c", &mut |_, _, _, g| analytic.extend_from_slice(g));

        let base = flat_params(&conv);
        let eps = 1e-5;
        let mut max_rel = 0.0f64;
        for slot in 0..base.len() {
            let mut probe = conv.clone();
            let mut theta = base.clone();
            theta[slot] += eps;
            set_params(&mut probe, &theta);
            let plus = readout(&probe.forward(&x).0);
            theta[slot] -= 2.0 * eps;
            set_params(&mut probe, &theta);
            let minus = readout(&probe.forward(&x).0);
            let fd = (plus - minus) / (2.0 * eps);
            let rel = (analytic[slot] - fd).abs() / fd.abs().max(1e-8);
            max_rel = max_rel.max(rel);
        }
        assert!(max_rel < 1e-5, "max relative error {max_rel}");
    }
}
