//! The stage stack: conv + batch norm + leaky ReLU, with a bare conv last.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::FcnConfig;
use crate::error::{Error, Result};
use crate::nn::{
    init_conv, l2_penalty, labels_to_vector, leaky_relu, leaky_relu_backward, matrix_to_scores, scores_to_matrix,
    weighted_xent, BatchNormLayer, BatchStats, BnCache, ConvLayer, Scalar,
};
use crate::tensor::Tensor4;

#[derive(Debug, Clone, PartialEq)]
pub struct Stage<T> {
    pub conv: ConvLayer<T>,
    /// Absent on the last stage, which emits raw scores.
    pub norm: Option<BatchNormLayer<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    config: FcnConfig,
    stages: Vec<Stage<T>>,
}

struct StageTrace<T> {
    input: Tensor4<T>,
    norm: Option<NormTrace<T>>,
}

struct NormTrace<T> {
    cache: BnCache<T>,
    /// Batch-norm output, the input of the activation.
    pre_activation: Tensor4<T>,
}

/// Intermediate values of a training-mode forward pass.
pub struct Trace<T> {
    stages: Vec<StageTrace<T>>,
    /// Batch statistics per stage, `None` for the last stage.
    pub stats: Vec<Option<BatchStats<T>>>,
}

/// Parameter gradients, one entry per block in [`Network::block_names`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub blocks: Vec<Vec<T>>,
}

/// Loss and gradients of one mini-batch under training-mode statistics.
pub struct Objective<T> {
    /// Data term plus L2 penalty.
    pub loss: f64,
    pub data_loss: f64,
    pub penalty: f64,
    pub grads: Gradients<T>,
    pub scores: Tensor4<T>,
    pub stats: Vec<Option<BatchStats<T>>>,
}

impl<T: Scalar> Network<T> {
    /// Builds the stack and draws every convolution from one seeded stream.
    pub fn build(config: FcnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ch = config.channels();
        let mut stages = Vec::with_capacity(config.n_stages);
        for i in 0..config.n_stages {
            let c_in = if i == 0 { 1 } else { ch };
            let mut conv = ConvLayer::new(c_in, ch, config.filter_of(i))?;
            init_conv(&mut conv, &mut rng);
            let norm = if i + 1 < config.n_stages {
                Some(BatchNormLayer::new(ch, config.bn_momentum, config.bn_epsilon)?)
            } else {
                None
            };
            stages.push(Stage { conv, norm });
        }
        Ok(Network { config, stages })
    }

    pub fn config(&self) -> &FcnConfig {
        &self.config
    }

    pub fn stages(&self) -> &[Stage<T>] {
        &self.stages
    }

    pub fn stages_mut(&mut self) -> &mut [Stage<T>] {
        &mut self.stages
    }

    /// Reassembles a network from stored stages.
    pub fn from_stages(config: FcnConfig, stages: Vec<Stage<T>>) -> Result<Self> {
        config.validate()?;
        let template = Network::<T>::build(config, 0)?;
        if stages.len() != template.stages.len() {
            return Err(Error::shape(format!(
                "{} stages for a {}-stage network",
                stages.len(),
                template.stages.len()
            )));
        }
        for (i, (s, t)) in stages.iter().zip(&template.stages).enumerate() {
            let same_norm = match (&s.norm, &t.norm) {
                (Some(a), Some(b)) => a.channels() == b.channels(),
                (None, None) => true,
                _ => false,
            };
            if s.conv.weights.shape() != t.conv.weights.shape() || s.conv.bias.len() != t.conv.bias.len() || !same_norm {
                return Err(Error::shape(format!("stage {} does not match the configuration", i + 1)));
            }
        }
        Ok(Network { config, stages })
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            config: self.config,
            stages: self
                .stages
                .iter()
                .map(|s| Stage {
                    conv: s.conv.cast(),
                    norm: s.norm.as_ref().map(|n| n.cast()),
                })
                .collect(),
        }
    }

    fn slope(&self) -> T {
        T::from_f64(self.config.leaky_slope)
    }

    fn check_input(&self, data: &Tensor4<T>) -> Result<()> {
        let [_, c, h, w] = data.shape();
        if c != 1 || h != self.config.dims.height || w != self.config.dims.width {
            return Err(Error::shape(format!(
                "network expects N x 1 x {} x {} input, got {:?}",
                self.config.dims.height,
                self.config.dims.width,
                data.shape()
            )));
        }
        Ok(())
    }

    /// Scores under running statistics.
    pub fn forward(&self, data: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.check_input(data)?;
        let slope = self.slope();
        let mut x = data.clone();
        for stage in &self.stages {
            let z = stage.conv.forward(&x)?;
            x = match &stage.norm {
                Some(bn) => leaky_relu(&bn.forward_eval(&z)?, slope),
                None => z,
            };
        }
        Ok(x)
    }

    /// Scores under batch statistics, keeping what the backward pass needs.
    pub fn forward_train(&self, data: &Tensor4<T>) -> Result<(Tensor4<T>, Trace<T>)> {
        self.check_input(data)?;
        let slope = self.slope();
        let mut x = data.clone();
        let mut stages = Vec::with_capacity(self.stages.len());
        let mut stats = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            let z = stage.conv.forward(&x)?;
            match &stage.norm {
                Some(bn) => {
                    let (y, cache, s) = bn.forward_train(&z)?;
                    let a = leaky_relu(&y, slope);
                    stages.push(StageTrace {
                        input: std::mem::replace(&mut x, a),
                        norm: Some(NormTrace {
                            cache,
                            pre_activation: y,
                        }),
                    });
                    stats.push(Some(s));
                }
                None => {
                    stages.push(StageTrace {
                        input: std::mem::replace(&mut x, z),
                        norm: None,
                    });
                    stats.push(None);
                }
            }
        }
        Ok((x, Trace { stages, stats }))
    }

    /// Backpropagates score gradients to every parameter block.
    pub fn backward(&self, trace: &Trace<T>, grad_scores: &Tensor4<T>) -> Result<Gradients<T>> {
        let slope = self.slope();
        let mut per_stage = Vec::with_capacity(self.stages.len());
        let mut g = grad_scores.clone();
        for (i, (stage, st)) in self.stages.iter().zip(&trace.stages).enumerate().rev() {
            let mut norm_grads = None;
            if let (Some(bn), Some(nt)) = (&stage.norm, &st.norm) {
                let ga = leaky_relu_backward(&nt.pre_activation, &g, slope);
                let bg = bn.backward(&nt.cache, &ga)?;
                g = bg.input;
                norm_grads = Some((bg.gamma, bg.beta));
            }
            let cg = stage.conv.backward(&st.input, &g, i > 0)?;
            if let Some(gi) = cg.input {
                g = gi;
            }
            per_stage.push((cg.weights.into_vec(), cg.bias, norm_grads));
        }
        per_stage.reverse();
        let mut blocks = Vec::new();
        for (w, b, n) in per_stage {
            blocks.push(w);
            blocks.push(b);
            if let Some((gamma, beta)) = n {
                blocks.push(gamma);
                blocks.push(beta);
            }
        }
        Ok(Gradients { blocks })
    }

    /// Full training objective on one batch: weighted cross-entropy over the
    /// reshaped scores plus the L2 penalty on convolution weights.
    pub fn objective(&self, data: &Tensor4<T>, labels: &Tensor4<T>) -> Result<Objective<T>> {
        let (scores, trace) = self.forward_train(data)?;
        let [n, _, h, w] = scores.shape();
        if labels.shape() != [n, self.config.layers, h, w] {
            return Err(Error::shape(format!(
                "labels {:?} do not match scores {:?}",
                labels.shape(),
                scores.shape()
            )));
        }
        let matrix = scores_to_matrix(&scores, self.config.classes)?;
        let targets = labels_to_vector(labels)?;
        let (data_loss, grad_matrix) = weighted_xent(&matrix, &targets, &self.config.loss)?;
        let grad_scores = matrix_to_scores(&grad_matrix, scores.shape())?;
        let mut grads = self.backward(&trace, &grad_scores)?;

        let weights: Vec<&[T]> = self.stages.iter().map(|s| s.conv.weights.as_slice()).collect();
        let (penalty, l2_grads) = l2_penalty(&weights, self.config.loss.l2);
        for (idx, g) in self.weight_block_indices().into_iter().zip(l2_grads) {
            for (a, b) in grads.blocks[idx].iter_mut().zip(g) {
                *a = *a + b;
            }
        }
        Ok(Objective {
            loss: data_loss + penalty,
            data_loss,
            penalty,
            grads,
            scores,
            stats: trace.stats,
        })
    }

    /// Folds batch statistics into the running estimates.
    pub fn update_running(&mut self, stats: &[Option<BatchStats<T>>]) {
        for (stage, s) in self.stages.iter_mut().zip(stats) {
            if let (Some(bn), Some(s)) = (&mut stage.norm, s) {
                bn.update_running(s);
            }
        }
    }

    /// `stageK.weights`, `stageK.bias`, `stageK.gamma`, `stageK.beta` with 1-based K.
    pub fn block_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (i, s) in self.stages.iter().enumerate() {
            let k = i + 1;
            names.push(format!("stage{k}.weights"));
            names.push(format!("stage{k}.bias"));
            if s.norm.is_some() {
                names.push(format!("stage{k}.gamma"));
                names.push(format!("stage{k}.beta"));
            }
        }
        names
    }

    fn weight_block_indices(&self) -> Vec<usize> {
        let mut idx = Vec::with_capacity(self.stages.len());
        let mut next = 0;
        for s in &self.stages {
            idx.push(next);
            next += if s.norm.is_some() { 4 } else { 2 };
        }
        idx
    }

    /// Trainable parameters in block order.
    pub fn blocks(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::new();
        for s in &self.stages {
            out.push(s.conv.weights.as_slice());
            out.push(&s.conv.bias);
            if let Some(bn) = &s.norm {
                out.push(&bn.gamma);
                out.push(&bn.beta);
            }
        }
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        for s in &mut self.stages {
            out.push(s.conv.weights.as_mut_slice());
            out.push(&mut s.conv.bias);
            if let Some(bn) = &mut s.norm {
                out.push(&mut bn.gamma);
                out.push(&mut bn.beta);
            }
        }
        out
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        self.blocks().iter().map(|b| b.len()).collect()
    }

    /// Number of trainable values.
    pub fn parameter_count(&self) -> usize {
        self.block_sizes().iter().sum()
    }

    pub fn conv_weight_count(&self) -> usize {
        self.stages.iter().map(|s| s.conv.weights.len()).sum()
    }
}

/// Picks the larger of each score pair: layer `i` is on iff channel `2i + 1`
/// beats channel `2i`. Ties are background.
pub fn score_comparator<T: Scalar>(scores: &Tensor4<T>) -> Result<Tensor4<u8>> {
    let [n, ch, h, w] = scores.shape();
    if ch % 2 != 0 {
        return Err(Error::shape(format!("{ch} score channels do not pair up")));
    }
    let layers = ch / 2;
    let mut out = Tensor4::filled([n, layers, h, w], 0u8);
    let hw = h * w;
    for b in 0..n {
        for l in 0..layers {
            let off = scores.plane(b, 2 * l);
            let on = scores.plane(b, 2 * l + 1);
            let base = (b * layers + l) * hw;
            for (p, (a, c)) in off.iter().zip(on).enumerate() {
                out.as_mut_slice()[base + p] = u8::from(c > a);
            }
        }
    }
    Ok(out)
}
