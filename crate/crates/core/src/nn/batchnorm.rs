//! Per-channel batch normalization over `(n, h, w)`.

use super::scalar::Scalar;
use crate::error::{Error, Result};
use crate::tensor::Tensor4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Normalize with batch statistics.
    Train,
    /// Normalize with running statistics.
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormLayer<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: T,
    pub epsilon: T,
}

/// Batch mean and biased variance per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// Values kept from a training forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct BnCache<T> {
    pub normalized: Tensor4<T>,
    pub inv_std: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct BnGrads<T> {
    pub input: Tensor4<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

impl<T: Scalar> BatchNormLayer<T> {
    /// `gamma = 1`, `beta = 0`, running mean 0, running variance 1.
    pub fn new(channels: usize, momentum: f64, epsilon: f64) -> Result<Self> {
        if epsilon.is_nan() || epsilon <= 0.0 || !(0.0..=1.0).contains(&momentum) {
            return Err(Error::validation(format!(
                "batch norm needs epsilon > 0 and momentum in [0, 1], got {epsilon}, {momentum}"
            )));
        }
        Ok(BatchNormLayer {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum: T::from_f64(momentum),
            epsilon: T::from_f64(epsilon),
        })
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn cast<U: Scalar>(&self) -> BatchNormLayer<U> {
        let c = |v: &[T]| v.iter().map(|x| U::from_f64(x.as_f64())).collect();
        BatchNormLayer {
            gamma: c(&self.gamma),
            beta: c(&self.beta),
            running_mean: c(&self.running_mean),
            running_var: c(&self.running_var),
            momentum: U::from_f64(self.momentum.as_f64()),
            epsilon: U::from_f64(self.epsilon.as_f64()),
        }
    }

    fn check(&self, x: &Tensor4<T>) -> Result<()> {
        if x.channels() != self.channels() {
            return Err(Error::shape(format!(
                "batch norm has {} channels, input has {}",
                self.channels(),
                x.channels()
            )));
        }
        Ok(())
    }

    /// Normalizes with batch statistics. Does not touch the running
    /// statistics; pass the returned [`BatchStats`] to
    /// [`update_running`](Self::update_running) for that.
    pub fn forward_train(&self, x: &Tensor4<T>) -> Result<(Tensor4<T>, BnCache<T>, BatchStats<T>)> {
        self.check(x)?;
        let [n, c, h, w] = x.shape();
        let count = n * h * w;
        if count < 2 {
            return Err(Error::validation(format!(
                "training-mode batch norm needs at least 2 values per channel, got {count}"
            )));
        }
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        let mut inv_std = vec![T::zero(); c];
        for ch in 0..c {
            let planes = || (0..n).flat_map(move |i| x.plane(i, ch).iter());
            let mu = planes().map(|v| v.as_f64()).sum::<f64>() / count as f64;
            let sigma2 = planes().map(|v| (v.as_f64() - mu).powi(2)).sum::<f64>() / count as f64;
            mean[ch] = T::from_f64(mu);
            var[ch] = T::from_f64(sigma2);
            inv_std[ch] = T::from_f64(1.0 / (sigma2 + self.epsilon.as_f64()).sqrt());
        }
        let mut normalized = Tensor4::zeros(x.shape());
        let mut out = Tensor4::zeros(x.shape());
        let plane = h * w;
        for (i, ((xs, ns), ys)) in x
            .as_slice()
            .chunks(plane)
            .zip(normalized.as_mut_slice().chunks_mut(plane))
            .zip(out.as_mut_slice().chunks_mut(plane))
            .enumerate()
        {
            let ch = i % c;
            let (m, s, g, b) = (mean[ch], inv_std[ch], self.gamma[ch], self.beta[ch]);
            for ((&xv, nv), yv) in xs.iter().zip(ns.iter_mut()).zip(ys.iter_mut()) {
                *nv = (xv - m) * s;
                *yv = g * *nv + b;
            }
        }
        Ok((out, BnCache { normalized, inv_std }, BatchStats { mean, var }))
    }

    /// `running = (1 - momentum) * running + momentum * batch`.
    pub fn update_running(&mut self, stats: &BatchStats<T>) {
        let m = self.momentum;
        let keep = T::one() - m;
        for (r, &b) in self.running_mean.iter_mut().zip(&stats.mean) {
            *r = keep * *r + m * b;
        }
        for (r, &b) in self.running_var.iter_mut().zip(&stats.var) {
            *r = keep * *r + m * b;
        }
    }

    pub fn forward_eval(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.check(x)?;
        let c = x.channels();
        let mut out = x.clone();
        let scale: Vec<T> = (0..c)
            .map(|ch| self.gamma[ch] / (self.running_var[ch] + self.epsilon).sqrt())
            .collect();
        for (i, ys) in out.as_mut_slice().chunks_mut(x.plane_len()).enumerate() {
            let ch = i % c;
            for y in ys {
                *y = (*y - self.running_mean[ch]) * scale[ch] + self.beta[ch];
            }
        }
        Ok(out)
    }

    /// Convenience wrapper; training mode also updates the running statistics.
    pub fn forward(&mut self, x: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>> {
        match mode {
            Mode::Train => {
                let (y, _, stats) = self.forward_train(x)?;
                self.update_running(&stats);
                Ok(y)
            }
            Mode::Eval => self.forward_eval(x),
        }
    }

    /// Backward pass of [`forward_train`](Self::forward_train).
    pub fn backward(&self, cache: &BnCache<T>, grad_out: &Tensor4<T>) -> Result<BnGrads<T>> {
        cache.normalized.same_shape(grad_out, "batch norm gradient")?;
        let [n, c, h, w] = grad_out.shape();
        let count = (n * h * w) as f64;
        let mut dgamma = vec![T::zero(); c];
        let mut dbeta = vec![T::zero(); c];
        for ch in 0..c {
            let (mut sg, mut sb) = (0.0f64, 0.0f64);
            for i in 0..n {
                for (&dy, &xh) in grad_out.plane(i, ch).iter().zip(cache.normalized.plane(i, ch)) {
                    sg += (dy * xh).as_f64();
                    sb += dy.as_f64();
                }
            }
            dgamma[ch] = T::from_f64(sg);
            dbeta[ch] = T::from_f64(sb);
        }
        let mut dx = Tensor4::zeros(grad_out.shape());
        let plane = h * w;
        let m = T::from_f64(count);
        for (i, ((dxs, dys), xhs)) in dx
            .as_mut_slice()
            .chunks_mut(plane)
            .zip(grad_out.as_slice().chunks(plane))
            .zip(cache.normalized.as_slice().chunks(plane))
            .enumerate()
        {
            let ch = i % c;
            let k = self.gamma[ch] * cache.inv_std[ch] / m;
            for ((d, &dy), &xh) in dxs.iter_mut().zip(dys).zip(xhs) {
                *d = k * (m * dy - dbeta[ch] - xh * dgamma[ch]);
            }
        }
        Ok(BnGrads {
            input: dx,
            gamma: dgamma,
            beta: dbeta,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_channel_normalizes_to_zero() {
        let bn = BatchNormLayer::<f64>::new(2, 0.1, 1e-5).unwrap();
        let x = Tensor4::filled([3, 2, 2, 2], 4.5);
        let (y, _, stats) = bn.forward_train(&x).unwrap();
        assert!(y.as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(stats.var, vec![0.0, 0.0]);
    }

    #[test]
    fn shift_sets_channel_mean() {
        let mut bn = BatchNormLayer::<f64>::new(2, 0.1, 1e-5).unwrap();
        bn.beta = vec![5.0, -1.0];
        let x = Tensor4::from_vec([2, 2, 3, 1], (0..12).map(|i| (i * i) as f64).collect()).unwrap();
        let (y, _, _) = bn.forward_train(&x).unwrap();
        for (ch, want) in [(0, 5.0), (1, -1.0)] {
            let vals: Vec<f64> = (0..2).flat_map(|i| y.plane(i, ch).to_vec()).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            assert!((mean - want).abs() < 1e-12);
        }
    }

    #[test]
    fn running_stats_follow_momentum() {
        let mut bn = BatchNormLayer::<f64>::new(1, 0.1, 1e-5).unwrap();
        let x = Tensor4::from_vec([1, 1, 1, 4], vec![1.0, 2.0, 3.0, 6.0]).unwrap();
        bn.forward(&x, Mode::Train).unwrap();
        assert!((bn.running_mean[0] - 0.3).abs() < 1e-12);
        // biased variance of the batch is 3.5
        assert!((bn.running_var[0] - (0.9 + 0.35)).abs() < 1e-12);
    }

    #[test]
    fn eval_matches_train_when_running_stats_equal_batch_stats() {
        let mut bn = BatchNormLayer::<f64>::new(1, 0.1, 1e-5).unwrap();
        bn.gamma = vec![1.7];
        bn.beta = vec![0.2];
        let x = Tensor4::from_vec([2, 1, 1, 3], vec![0.5, -1.0, 2.0, 4.0, 0.0, 1.0]).unwrap();
        let (train, _, stats) = bn.forward_train(&x).unwrap();
        bn.running_mean = stats.mean;
        bn.running_var = stats.var;
        let eval = bn.forward_eval(&x).unwrap();
        for (a, b) in train.as_slice().iter().zip(eval.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_value_per_channel_is_rejected() {
        let bn = BatchNormLayer::<f32>::new(3, 0.1, 1e-5).unwrap();
        assert!(bn.forward_train(&Tensor4::zeros([1, 3, 1, 1])).is_err());
        assert!(BatchNormLayer::<f32>::new(3, 0.1, 0.0).is_err());
    }
}
