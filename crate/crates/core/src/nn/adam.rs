//! Adam with bias-corrected moments.

use super::scalar::Scalar;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One named parameter block and its gradient.
pub struct ParamBlock<'a, T> {
    pub name: &'a str,
    pub values: &'a mut [T],
    pub grads: &'a [T],
}

/// First and second moments for every parameter block, plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub first: Vec<Vec<T>>,
    pub second: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig, block_sizes: &[usize]) -> Self {
        AdamState {
            config,
            step: 0,
            first: block_sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            second: block_sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    /// Applies one update. Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, blocks: &mut [ParamBlock<'_, T>]) -> Result<()> {
        if blocks.len() != self.first.len() {
            return Err(Error::shape(format!(
                "optimizer tracks {} blocks, got {}",
                self.first.len(),
                blocks.len()
            )));
        }
        for (b, m) in blocks.iter().zip(&self.first) {
            if b.values.len() != m.len() || b.grads.len() != m.len() {
                return Err(Error::shape(format!("block {} changed size", b.name)));
            }
            if b.grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {}", b.name)));
            }
        }

        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let correct1 = 1.0 - beta1.powi(t);
        let correct2 = 1.0 - beta2.powi(t);
        let (b1, b2) = (T::from_f64(beta1), T::from_f64(beta2));
        let (c1, c2) = (T::one() - b1, T::one() - b2);
        let lr = T::from_f64(learning_rate);
        let eps = T::from_f64(epsilon);
        let (inv1, inv2) = (T::from_f64(1.0 / correct1), T::from_f64(1.0 / correct2));

        for ((b, m), v) in blocks.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            for (((p, &g), mi), vi) in b.values.iter_mut().zip(b.grads).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + c1 * g;
                *vi = b2 * *vi + c2 * g * g;
                let m_hat = *mi * inv1;
                let v_hat = *vi * inv2;
                *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
