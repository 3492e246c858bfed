//! Same-size 2-D convolution (odd square filters, stride 1, zero padding
//! `(F - 1) / 2`).
//!
//! Dense inputs go through im2col and a GEMM per batch item. Very sparse
//! inputs, such as the pin plane fed to the first stage, use a scatter
//! kernel whose cost scales with the number of non-zero input values.
//! Both paths reduce in a fixed order, so results never depend on the
//! number of worker threads.

use rayon::prelude::*;

use super::scalar::{gemm, Op, Scalar};
use crate::error::{Error, Result};
use crate::tensor::Tensor4;

/// Inputs with at most this fraction of non-zero values use the scatter kernel.
const SPARSE_DENSITY: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T> {
    /// `(c_out, c_in, F, F)`.
    pub weights: Tensor4<T>,
    pub bias: Vec<T>,
}

/// Gradients of a convolution with respect to its input and parameters.
#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    /// `None` when the caller did not ask for it.
    pub input: Option<Tensor4<T>>,
    pub weights: Tensor4<T>,
    pub bias: Vec<T>,
}

struct Geometry {
    c_in: usize,
    c_out: usize,
    f: usize,
    pad: usize,
    h: usize,
    w: usize,
}

impl Geometry {
    fn k(&self) -> usize {
        self.c_in * self.f * self.f
    }

    fn hw(&self) -> usize {
        self.h * self.w
    }
}

impl<T: Scalar> ConvLayer<T> {
    /// Zero-initialized layer.
    pub fn new(c_in: usize, c_out: usize, filter: usize) -> Result<Self> {
        if filter.is_multiple_of(2) || c_in == 0 || c_out == 0 {
            return Err(Error::validation(format!(
                "convolution needs an odd filter and non-zero channels, got F={filter} {c_in}->{c_out}"
            )));
        }
        Ok(ConvLayer {
            weights: Tensor4::zeros([c_out, c_in, filter, filter]),
            bias: vec![T::zero(); c_out],
        })
    }

    pub fn c_out(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn c_in(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn filter(&self) -> usize {
        self.weights.shape()[2]
    }

    pub fn padding(&self) -> usize {
        (self.filter() - 1) / 2
    }

    pub fn cast<U: Scalar>(&self) -> ConvLayer<U> {
        ConvLayer {
            weights: self.weights.map(|v| U::from_f64(v.as_f64())),
            bias: self.bias.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    fn geometry(&self, input: &Tensor4<T>) -> Result<Geometry> {
        if input.channels() != self.c_in() {
            return Err(Error::shape(format!(
                "convolution expects {} input channels, got {}",
                self.c_in(),
                input.channels()
            )));
        }
        Ok(Geometry {
            c_in: self.c_in(),
            c_out: self.c_out(),
            f: self.filter(),
            pad: self.padding(),
            h: input.height(),
            w: input.width(),
        })
    }

    pub fn forward(&self, input: &Tensor4<T>) -> Result<Tensor4<T>> {
        let g = self.geometry(input)?;
        let [n, _, h, w] = input.shape();
        let mut out = Tensor4::zeros([n, g.c_out, h, w]);
        if out.is_empty() {
            return Ok(out);
        }
        let sparse = is_sparse(input);
        let wts = self.weights.as_slice();
        out.as_mut_slice()
            .par_chunks_mut(g.c_out * g.hw())
            .zip(input.as_slice().par_chunks(g.c_in * g.hw()))
            .for_each_init(Vec::new, |col, (y, x)| {
                for (o, plane) in y.chunks_mut(g.hw()).enumerate() {
                    plane.fill(self.bias[o]);
                }
                if sparse {
                    scatter_forward(&g, wts, x, y);
                } else {
                    col.resize(g.k() * g.hw(), T::zero());
                    im2col(&g, x, col);
                    gemm(g.c_out, g.k(), g.hw(), wts, Op::N, col, Op::N, T::one(), y);
                }
            });
        Ok(out)
    }

    /// Backpropagates `grad_out` through the layer evaluated at `input`.
    pub fn backward(
        &self,
        input: &Tensor4<T>,
        grad_out: &Tensor4<T>,
        want_input_grad: bool,
    ) -> Result<ConvGrads<T>> {
        let g = self.geometry(input)?;
        let [n, _, h, w] = input.shape();
        if grad_out.shape() != [n, g.c_out, h, w] {
            return Err(Error::shape(format!(
                "output gradient {:?} does not match forward output {:?}",
                grad_out.shape(),
                [n, g.c_out, h, w]
            )));
        }
        let wts = self.weights.as_slice();
        let sparse = is_sparse(input);
        let wlen = g.c_out * g.k();

        // Per-item weight gradients, summed afterwards in item order.
        let partials: Vec<Vec<T>> = (0..n)
            .into_par_iter()
            .map_init(Vec::new, |col, i| {
                let x = input.item(i);
                let dy = grad_out.item(i);
                let mut dw = vec![T::zero(); wlen];
                if sparse {
                    scatter_weight_grad(&g, x, dy, &mut dw);
                } else {
                    col.resize(g.k() * g.hw(), T::zero());
                    im2col(&g, x, col);
                    gemm(g.c_out, g.hw(), g.k(), dy, Op::N, col, Op::T, T::zero(), &mut dw);
                }
                dw
            })
            .collect();
        let mut dw = vec![T::zero(); wlen];
        for p in &partials {
            for (a, &b) in dw.iter_mut().zip(p) {
                *a = *a + b;
            }
        }

        let mut db = vec![T::zero(); g.c_out];
        for i in 0..n {
            for (o, acc) in db.iter_mut().enumerate() {
                *acc = *acc + grad_out.plane(i, o).iter().fold(T::zero(), |s, &v| s + v);
            }
        }

        let dx = if want_input_grad {
            let mut dx = Tensor4::zeros(input.shape());
            if !dx.is_empty() {
                dx.as_mut_slice()
                    .par_chunks_mut(g.c_in * g.hw())
                    .zip(grad_out.as_slice().par_chunks(g.c_out * g.hw()))
                    .for_each_init(Vec::new, |col, (dxi, dy)| {
                        col.resize(g.k() * g.hw(), T::zero());
                        gemm(g.k(), g.c_out, g.hw(), wts, Op::T, dy, Op::N, T::zero(), col);
                        col2im(&g, col, dxi);
                    });
            }
            Some(dx)
        } else {
            None
        };

        Ok(ConvGrads {
            input: dx,
            weights: Tensor4::from_vec(self.weights.shape(), dw)?,
            bias: db,
        })
    }
}

fn is_sparse<T: Scalar>(input: &Tensor4<T>) -> bool {
    let nnz = input.as_slice().iter().filter(|v| !v.is_zero()).count();
    (nnz as f64) <= SPARSE_DENSITY * input.len() as f64
}

/// Columns `x0..x1` of an output row read input columns `x0 + kx - pad ..`.
fn valid_cols(g: &Geometry, kx: usize) -> (usize, usize) {
    let x0 = g.pad.saturating_sub(kx).min(g.w);
    let x1 = (g.w + g.pad).saturating_sub(kx).min(g.w).max(x0);
    (x0, x1)
}

/// Unfolds one item `(c_in, h, w)` into a `(c_in*F*F) × (h*w)` matrix.
fn im2col<T: Scalar>(g: &Geometry, x: &[T], col: &mut [T]) {
    let hw = g.hw();
    for c in 0..g.c_in {
        let src = &x[c * hw..(c + 1) * hw];
        for ky in 0..g.f {
            for kx in 0..g.f {
                let row = ((c * g.f + ky) * g.f + kx) * hw;
                let row = &mut col[row..row + hw];
                let (x0, x1) = valid_cols(g, kx);
                for y in 0..g.h {
                    let dst = &mut row[y * g.w..(y + 1) * g.w];
                    let iy = (y + ky).wrapping_sub(g.pad);
                    if iy >= g.h || x0 == x1 {
                        dst.fill(T::zero());
                        continue;
                    }
                    dst[..x0].fill(T::zero());
                    let ix0 = x0 + kx - g.pad;
                    dst[x0..x1].copy_from_slice(&src[iy * g.w + ix0..iy * g.w + ix0 + (x1 - x0)]);
                    dst[x1..].fill(T::zero());
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: folds columns back, summing overlaps.
fn col2im<T: Scalar>(g: &Geometry, col: &[T], dx: &mut [T]) {
    let hw = g.hw();
    dx.fill(T::zero());
    for c in 0..g.c_in {
        let dst = &mut dx[c * hw..(c + 1) * hw];
        for ky in 0..g.f {
            for kx in 0..g.f {
                let row = ((c * g.f + ky) * g.f + kx) * hw;
                let row = &col[row..row + hw];
                let (x0, x1) = valid_cols(g, kx);
                if x0 == x1 {
                    continue;
                }
                for y in 0..g.h {
                    let iy = (y + ky).wrapping_sub(g.pad);
                    if iy >= g.h {
                        continue;
                    }
                    let ix0 = x0 + kx - g.pad;
                    let d = &mut dst[iy * g.w + ix0..iy * g.w + ix0 + (x1 - x0)];
                    for (a, &b) in d.iter_mut().zip(&row[y * g.w + x0..y * g.w + x1]) {
                        *a = *a + b;
                    }
                }
            }
        }
    }
}

/// Range of filter taps `k` for which `i + pad - k` lands inside `0..len`.
fn tap_range(i: usize, pad: usize, f: usize, len: usize) -> std::ops::Range<usize> {
    let lo = (i + pad + 1).saturating_sub(len);
    let hi = (i + pad + 1).min(f);
    lo..hi.max(lo)
}

fn scatter_forward<T: Scalar>(g: &Geometry, wts: &[T], x: &[T], y: &mut [T]) {
    let hw = g.hw();
    let ff = g.f * g.f;
    for c in 0..g.c_in {
        for (p, &v) in x[c * hw..(c + 1) * hw].iter().enumerate() {
            if v.is_zero() {
                continue;
            }
            let (iy, ix) = (p / g.w, p % g.w);
            for o in 0..g.c_out {
                let kernel = &wts[(o * g.c_in + c) * ff..(o * g.c_in + c + 1) * ff];
                let out = &mut y[o * hw..(o + 1) * hw];
                for ky in tap_range(iy, g.pad, g.f, g.h) {
                    let oy = iy + g.pad - ky;
                    for kx in tap_range(ix, g.pad, g.f, g.w) {
                        let ox = ix + g.pad - kx;
                        let o = &mut out[oy * g.w + ox];
                        *o = *o + kernel[ky * g.f + kx] * v;
                    }
                }
            }
        }
    }
}

fn scatter_weight_grad<T: Scalar>(g: &Geometry, x: &[T], dy: &[T], dw: &mut [T]) {
    let hw = g.hw();
    let ff = g.f * g.f;
    for c in 0..g.c_in {
        for (p, &v) in x[c * hw..(c + 1) * hw].iter().enumerate() {
            if v.is_zero() {
                continue;
            }
            let (iy, ix) = (p / g.w, p % g.w);
            for o in 0..g.c_out {
                let grad = &dy[o * hw..(o + 1) * hw];
                let kernel = &mut dw[(o * g.c_in + c) * ff..(o * g.c_in + c + 1) * ff];
                for ky in tap_range(iy, g.pad, g.f, g.h) {
                    let oy = iy + g.pad - ky;
                    for kx in tap_range(ix, g.pad, g.f, g.w) {
                        let ox = ix + g.pad - kx;
                        let k = &mut kernel[ky * g.f + kx];
                        *k = *k + grad[oy * g.w + ox] * v;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct six-loop convolution.
    fn naive(layer: &ConvLayer<f64>, x: &Tensor4<f64>) -> Tensor4<f64> {
        let [n, c_in, h, w] = x.shape();
        let (c_out, f, pad) = (layer.c_out(), layer.filter(), layer.padding() as isize);
        let mut out = Tensor4::zeros([n, c_out, h, w]);
        for b in 0..n {
            for o in 0..c_out {
                for y in 0..h {
                    for xx in 0..w {
                        let mut s = layer.bias[o];
                        for c in 0..c_in {
                            for ky in 0..f {
                                for kx in 0..f {
                                    let iy = y as isize + ky as isize - pad;
                                    let ix = xx as isize + kx as isize - pad;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    s += layer.weights.get(o, c, ky, kx)
                                        * x.get(b, c, iy as usize, ix as usize);
                                }
                            }
                        }
                        out.set(b, o, y, xx, s);
                    }
                }
            }
        }
        out
    }

    fn random_layer(rng: &mut ChaCha8Rng, c_in: usize, c_out: usize, f: usize) -> ConvLayer<f64> {
        let mut layer = ConvLayer::new(c_in, c_out, f).unwrap();
        for v in layer.weights.as_mut_slice() {
            *v = rng.random_range(-1.0..1.0);
        }
        for v in &mut layer.bias {
            *v = rng.random_range(-1.0..1.0);
        }
        layer
    }

    fn random_input(rng: &mut ChaCha8Rng, shape: [usize; 4], density: f64) -> Tensor4<f64> {
        let len = shape.iter().product();
        let data = (0..len)
            .map(|_| if rng.random_bool(density) { rng.random_range(-1.0..1.0) } else { 0.0 })
            .collect();
        Tensor4::from_vec(shape, data).unwrap()
    }

    fn max_diff(a: &Tensor4<f64>, b: &Tensor4<f64>) -> f64 {
        a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn degenerate_one_by_one() {
        let mut layer = ConvLayer::<f64>::new(1, 1, 1).unwrap();
        layer.weights.as_mut_slice()[0] = 3.0;
        layer.bias[0] = 0.5;
        let x = Tensor4::from_vec([1, 1, 1, 1], vec![2.0]).unwrap();
        let y = layer.forward(&x).unwrap();
        assert_eq!(y.as_slice(), &[6.5]);

        let g = Tensor4::from_vec([1, 1, 1, 1], vec![0.25]).unwrap();
        let grads = layer.backward(&x, &g, true).unwrap();
        assert_eq!(grads.weights.as_slice(), &[0.5]);
        assert_eq!(grads.input.unwrap().as_slice(), &[0.75]);
        assert_eq!(grads.bias, vec![0.25]);
    }

    #[test]
    fn network_stage_shapes() {
        let head = ConvLayer::<f32>::new(1, 16, 33).unwrap();
        assert_eq!(head.padding(), 16);
        let y = head.forward(&Tensor4::zeros([1, 1, 32, 32])).unwrap();
        assert_eq!(y.shape(), [1, 16, 32, 32]);
        let inner = ConvLayer::<f32>::new(16, 16, 3).unwrap();
        assert_eq!(inner.padding(), 1);
        assert_eq!(inner.forward(&y).unwrap().shape(), [1, 16, 32, 32]);
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let layer = ConvLayer::<f32>::new(2, 4, 3).unwrap();
        assert!(layer.forward(&Tensor4::zeros([1, 3, 5, 5])).is_err());
        assert!(ConvLayer::<f32>::new(2, 4, 4).is_err());
    }

    #[test]
    fn dense_and_sparse_paths_match_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &(c_in, c_out, f, h, w, density) in &[
            (3, 4, 3, 6, 7, 1.0),
            (2, 3, 5, 5, 4, 0.6),
            (1, 5, 9, 4, 6, 0.02),
            (1, 4, 33, 12, 10, 0.01),
            (2, 2, 3, 8, 8, 0.03),
        ] {
            let layer = random_layer(&mut rng, c_in, c_out, f);
            let x = random_input(&mut rng, [3, c_in, h, w], density);
            let got = layer.forward(&x).unwrap();
            assert!(max_diff(&got, &naive(&layer, &x)) < 1e-12, "F={f} density={density}");
        }
    }

    #[test]
    fn zero_output_gradient_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let layer = random_layer(&mut rng, 2, 3, 3);
        let x = random_input(&mut rng, [2, 2, 5, 5], 1.0);
        let g = layer.backward(&x, &Tensor4::zeros([2, 3, 5, 5]), true).unwrap();
        assert!(g.weights.as_slice().iter().all(|&v| v == 0.0));
        assert!(g.bias.iter().all(|&v| v == 0.0));
        assert!(g.input.unwrap().as_slice().iter().all(|&v| v == 0.0));
    }

    /// Weight gradients are linear in the input, so the scatter result must
    /// equal the difference of two GEMM results.
    #[test]
    fn sparse_and_dense_weight_gradients_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let layer = random_layer(&mut rng, 1, 3, 7);
        let x = random_input(&mut rng, [2, 1, 9, 9], 0.04);
        let dy = random_input(&mut rng, [2, 3, 9, 9], 1.0);
        let sparse = layer.backward(&x, &dy, false).unwrap();
        // A dense copy of the same input forces the GEMM path.
        let mut dense_x = x.clone();
        let shift = 1e3;
        dense_x.as_mut_slice().iter_mut().for_each(|v| *v += shift);
        let dense = layer.backward(&dense_x, &dy, false).unwrap();
        let shifted = layer.backward(&Tensor4::filled(x.shape(), shift), &dy, false).unwrap();
        for ((s, d), c) in sparse
            .weights
            .as_slice()
            .iter()
            .zip(dense.weights.as_slice())
            .zip(shifted.weights.as_slice())
        {
            assert!((s - (d - c)).abs() < 1e-8, "{s} vs {}", d - c);
        }
    }
}
