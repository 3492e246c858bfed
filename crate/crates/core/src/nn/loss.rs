//! Class-weighted softmax cross-entropy over per-pixel per-layer decisions,
//! plus the L2 weight penalty.
//!
//! Scores of shape `N × (α·β) × H × W` are viewed as a `(N·H·W·α) × β`
//! matrix: channel `i·β + j` at pixel `(y, x)` of item `n` lands in row
//! `((n·H + y)·W + x)·α + i`, column `j`. Labels `N × α × H × W` flatten to
//! a vector in the same row order.

use super::scalar::Scalar;
use crate::error::{Error, Result};
use crate::tensor::Tensor4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// `[k0, k1]`: weight of background and foreground decisions.
    pub class_weights: [f64; 2],
    /// L2 coefficient λ on convolution weights.
    pub l2: f64,
}

impl LossConfig {
    pub fn new(k0: f64, k1: f64, l2: f64) -> Result<LossConfig> {
        if !(k0 > 0.0 && k1 > 0.0 && l2 >= 0.0) || !(k0.is_finite() && k1.is_finite() && l2.is_finite()) {
            return Err(Error::validation(format!(
                "loss needs k0, k1 > 0 and lambda >= 0, got {k0}, {k1}, {l2}"
            )));
        }
        Ok(LossConfig {
            class_weights: [k0, k1],
            l2,
        })
    }
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            class_weights: [1.0, 3.0],
            l2: 1e-5,
        }
    }
}

/// Row-major `rows × cols` score matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> ScoreMatrix<T> {
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// Reshapes `N × (α·β) × H × W` scores into the `(N·H·W·α) × β` matrix.
pub fn scores_to_matrix<T: Scalar>(scores: &Tensor4<T>, classes: usize) -> Result<ScoreMatrix<T>> {
    let [n, ch, h, w] = scores.shape();
    if classes == 0 || ch % classes != 0 {
        return Err(Error::shape(format!("{ch} score channels do not split into {classes} classes")));
    }
    let layers = ch / classes;
    let rows = n * h * w * layers;
    let mut data = vec![T::zero(); rows * classes];
    let hw = h * w;
    for b in 0..n {
        for c in 0..ch {
            let (layer, class) = (c / classes, c % classes);
            for (p, &v) in scores.plane(b, c).iter().enumerate() {
                let row = (b * hw + p) * layers + layer;
                data[row * classes + class] = v;
            }
        }
    }
    Ok(ScoreMatrix {
        rows,
        cols: classes,
        data,
    })
}

/// Inverse of [`scores_to_matrix`].
pub fn matrix_to_scores<T: Scalar>(m: &ScoreMatrix<T>, shape: [usize; 4]) -> Result<Tensor4<T>> {
    let [n, ch, h, w] = shape;
    if m.cols == 0 || ch % m.cols != 0 || n * h * w * (ch / m.cols) != m.rows {
        return Err(Error::shape(format!(
            "{}x{} matrix does not reshape to {shape:?}",
            m.rows, m.cols
        )));
    }
    let layers = ch / m.cols;
    let hw = h * w;
    let mut out = Tensor4::zeros(shape);
    let dst = out.as_mut_slice();
    for b in 0..n {
        for c in 0..ch {
            let (layer, class) = (c / m.cols, c % m.cols);
            let base = (b * ch + c) * hw;
            for p in 0..hw {
                let row = (b * hw + p) * layers + layer;
                dst[base + p] = m.data[row * m.cols + class];
            }
        }
    }
    Ok(out)
}

/// Flattens `N × α × H × W` binary labels into the matrix row order.
pub fn labels_to_vector<T: Scalar>(labels: &Tensor4<T>) -> Result<Vec<u8>> {
    let [n, layers, h, w] = labels.shape();
    let hw = h * w;
    let mut out = vec![0u8; n * hw * layers];
    for b in 0..n {
        for l in 0..layers {
            for (p, &v) in labels.plane(b, l).iter().enumerate() {
                let class = if v == T::zero() {
                    0
                } else if v == T::one() {
                    1
                } else {
                    return Err(Error::validation(format!(
                        "label {v:?} at item {b}, layer {l}, pixel {p} is not 0 or 1"
                    )));
                };
                out[(b * hw + p) * layers + l] = class;
            }
        }
    }
    Ok(out)
}

/// Mean class-weighted cross-entropy and its gradient with respect to the scores.
///
/// `loss = (1/R) Σ_r k[y_r] · (−log softmax(S_r)[y_r])` over the `R` rows,
/// `grad_r = k[y_r] · (softmax(S_r) − onehot(y_r)) / R`.
pub fn weighted_xent<T: Scalar>(
    scores: &ScoreMatrix<T>,
    labels: &[u8],
    config: &LossConfig,
) -> Result<(f64, ScoreMatrix<T>)> {
    let cols = scores.cols;
    if cols != config.class_weights.len() {
        return Err(Error::shape(format!(
            "{cols} score columns but {} class weights",
            config.class_weights.len()
        )));
    }
    if labels.len() != scores.rows {
        return Err(Error::shape(format!(
            "{} labels for {} score rows",
            labels.len(),
            scores.rows
        )));
    }
    if scores.rows == 0 {
        return Err(Error::validation("cross-entropy over zero rows"));
    }
    let inv_rows = 1.0 / scores.rows as f64;
    let mut grad = vec![T::zero(); scores.data.len()];
    let mut total = 0.0f64;
    let mut probs = vec![0.0f64; cols];
    for (r, &y) in labels.iter().enumerate() {
        let y = y as usize;
        if y >= cols {
            return Err(Error::validation(format!("label {y} at row {r} outside 0..{cols}")));
        }
        let row = scores.row(r);
        let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (p, &s) in probs.iter_mut().zip(row) {
            *p = (s.as_f64() - max).exp();
            sum += *p;
        }
        let k = config.class_weights[y];
        total += k * (sum.ln() - (row[y].as_f64() - max));
        for (j, (g, p)) in grad[r * cols..(r + 1) * cols].iter_mut().zip(&probs).enumerate() {
            let target = if j == y { 1.0 } else { 0.0 };
            *g = T::from_f64(k * (p / sum - target) * inv_rows);
        }
    }
    Ok((
        total * inv_rows,
        ScoreMatrix {
            rows: scores.rows,
            cols,
            data: grad,
        },
    ))
}

/// `λ Σ w²` over every block, with gradient `2λw` per weight.
pub fn l2_penalty<T: Scalar>(blocks: &[&[T]], lambda: f64) -> (f64, Vec<Vec<T>>) {
    let penalty = lambda
        * blocks
            .iter()
            .map(|b| b.iter().map(|w| w.as_f64().powi(2)).sum::<f64>())
            .sum::<f64>();
    let grads = blocks
        .iter()
        .map(|b| b.iter().map(|&w| T::from_f64(2.0 * lambda * w.as_f64())).collect())
        .collect();
    (penalty, grads)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_row(a: f64, b: f64) -> ScoreMatrix<f64> {
        ScoreMatrix {
            rows: 1,
            cols: 2,
            data: vec![a, b],
        }
    }

    #[test]
    fn equal_scores_single_row() {
        let cfg = LossConfig::default();
        let (l1, g1) = weighted_xent(&one_row(0.0, 0.0), &[1], &cfg).unwrap();
        assert!((l1 - 3.0 * 2f64.ln()).abs() < 1e-12);
        assert_eq!(g1.data, vec![1.5, -1.5]);
        let (l0, _) = weighted_xent(&one_row(0.0, 0.0), &[0], &cfg).unwrap();
        assert!((l0 - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn huge_scores_stay_finite() {
        let cfg = LossConfig::default();
        let (l, g) = weighted_xent(&one_row(1e4, -1e4), &[0], &cfg).unwrap();
        assert!((0.0..1e-12).contains(&l));
        assert!(g.data.iter().all(|v| v.is_finite()));
        let (l, _) = weighted_xent(&one_row(1e4, -1e4), &[1], &cfg).unwrap();
        assert!((l - 3.0 * 2e4).abs() < 1e-6);
    }

    #[test]
    fn label_out_of_range() {
        let cfg = LossConfig::default();
        assert!(weighted_xent(&one_row(0.0, 0.0), &[2], &cfg).is_err());
        assert!(weighted_xent(&one_row(0.0, 0.0), &[0, 1], &cfg).is_err());
    }

    #[test]
    fn reshape_pairs_channels_per_layer() {
        // 1 item, 2 layers x 2 classes, 1x2 pixels.
        let t = Tensor4::from_vec([1, 4, 1, 2], vec![0., 1., 10., 11., 20., 21., 30., 31.]).unwrap();
        let m = scores_to_matrix(&t, 2).unwrap();
        assert_eq!((m.rows, m.cols), (4, 2));
        // row = pixel * layers + layer
        assert_eq!(m.row(0), &[0., 10.]);
        assert_eq!(m.row(1), &[20., 30.]);
        assert_eq!(m.row(2), &[1., 11.]);
        assert_eq!(m.row(3), &[21., 31.]);
        assert_eq!(matrix_to_scores(&m, t.shape()).unwrap(), t);
    }

    #[test]
    fn l2_arithmetic() {
        let w = [2.0f64];
        let (p, g) = l2_penalty(&[&w], 1e-5);
        assert!((p - 4e-5).abs() < 1e-18);
        assert!((g[0][0] - 4e-5).abs() < 1e-18);
        let (p, g) = l2_penalty(&[&w], 0.0);
        assert_eq!((p, g[0][0]), (0.0, 0.0));
    }

    #[test]
    fn rejects_bad_config() {
        assert!(LossConfig::new(0.0, 3.0, 1e-5).is_err());
        assert!(LossConfig::new(1.0, 3.0, -1.0).is_err());
    }
}
