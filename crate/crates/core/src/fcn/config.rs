use crate::error::{Error, Result};
use crate::layout::{GridDims, LayerId};
use crate::nn::{LossConfig, DEFAULT_LEAKY_SLOPE};

/// Shape and hyperparameters of the network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FcnConfig {
    pub n_stages: usize,
    /// Filter size of the first stage.
    pub first_filter: usize,
    /// Filter size of every later stage.
    pub inner_filter: usize,
    /// Layout layers predicted per pixel (α).
    pub layers: usize,
    /// Classes per decision (β).
    pub classes: usize,
    pub dims: GridDims,
    pub leaky_slope: f64,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
    pub loss: LossConfig,
}

impl Default for FcnConfig {
    fn default() -> Self {
        FcnConfig {
            n_stages: 15,
            first_filter: 33,
            inner_filter: 3,
            layers: LayerId::COUNT,
            classes: 2,
            dims: GridDims::default(),
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            bn_momentum: 0.1,
            bn_epsilon: 1e-5,
            loss: LossConfig::default(),
        }
    }
}

impl FcnConfig {
    /// Channels carried between stages, `layers * classes`.
    pub fn channels(&self) -> usize {
        self.layers * self.classes
    }

    /// Filter size of stage `i` (0-based).
    pub fn filter_of(&self, stage: usize) -> usize {
        if stage == 0 {
            self.first_filter
        } else {
            self.inner_filter
        }
    }

    pub fn with_first_filter(self, first_filter: usize) -> FcnConfig {
        FcnConfig { first_filter, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_stages < 2 {
            return Err(Error::validation(format!("need at least 2 stages, got {}", self.n_stages)));
        }
        if self.first_filter.is_multiple_of(2) || self.inner_filter.is_multiple_of(2) {
            return Err(Error::validation(format!(
                "filters must be odd, got {} and {}",
                self.first_filter, self.inner_filter
            )));
        }
        if self.classes != 2 || self.layers != LayerId::COUNT {
            return Err(Error::validation(format!(
                "the comparator needs {} layers of 2 classes, got {}x{}",
                LayerId::COUNT,
                self.layers,
                self.classes
            )));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::validation(format!("leaky slope {} outside (0, 1)", self.leaky_slope)));
        }
        let extent = self.dims.height.max(self.dims.width);
        let needed = min_stages(self.first_filter, self.inner_filter, extent);
        if self.n_stages < needed {
            return Err(Error::validation(format!(
                "{} stages with filters {}/{} do not cover a {extent}-pixel grid; need {needed}",
                self.n_stages, self.first_filter, self.inner_filter
            )));
        }
        LossConfig::new(self.loss.class_weights[0], self.loss.class_weights[1], self.loss.l2)?;
        Ok(())
    }
}

/// Smallest stage count whose receptive field spans `extent` pixels.
///
/// A stack of odd filters sees `first + (n - 1) * (inner - 1)` pixels; the
/// two farthest pixels of the grid are `extent - 1` apart.
pub fn min_stages(first_filter: usize, inner_filter: usize, extent: usize) -> usize {
    let target = extent.saturating_sub(1);
    if first_filter >= target {
        return 1;
    }
    let step = inner_filter.saturating_sub(1);
    if step == 0 {
        return usize::MAX;
    }
    1 + (target - first_filter).div_ceil(step)
}
