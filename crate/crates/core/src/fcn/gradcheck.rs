//! Finite-difference checks of every operator and of a scaled-down network.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::FcnConfig;
use super::model::Network;
use crate::error::Result;
use crate::layout::GridDims;
use crate::nn::{
    check_gradient, check_gradient_above, leaky_relu, leaky_relu_backward, weighted_xent, BatchNormLayer, ConvLayer, GradCheckReport,
    LossConfig, ScoreMatrix,
};
use crate::tensor::Tensor4;

/// Largest relative error accepted by [`suite`].
pub const TOLERANCE: f64 = 1e-4;

/// Derivatives of the whole network smaller than this are not compared.
pub const NETWORK_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NamedCheck {
    pub name: &'static str,
    pub report: GradCheckReport,
}

impl NamedCheck {
    pub fn passed(&self) -> bool {
        self.report.passes(TOLERANCE)
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor4<f64> {
    let n = shape.iter().product();
    Tensor4::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape")
}

fn dot(a: &Tensor4<f64>, b: &Tensor4<f64>) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y).sum()
}

fn merge(reports: impl IntoIterator<Item = GradCheckReport>) -> GradCheckReport {
    reports
        .into_iter()
        .reduce(|a, b| {
            let worst = if b.max_rel_error > a.max_rel_error { b } else { a };
            GradCheckReport {
                checked: a.checked + b.checked,
                skipped: a.skipped + b.skipped,
                ..worst
            }
        })
        .expect("at least one report")
}

/// Convolution on a random `2 x 3 x 8 x 8` input with 3x3 filters.
pub fn check_conv(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_tensor(&mut rng, [2, 3, 8, 8]);
    let mut layer = ConvLayer::<f64>::new(3, 4, 3)?;
    layer.weights = random_tensor(&mut rng, [4, 3, 3, 3]);
    layer.bias = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
    let r = random_tensor(&mut rng, [2, 4, 8, 8]);
    let g = layer.backward(&x, &r, true)?;

    let wrt_input = check_gradient(
        |v| {
            let xi = Tensor4::from_vec(x.shape(), v.to_vec()).expect("shape");
            dot(&layer.forward(&xi).expect("forward"), &r)
        },
        x.as_slice(),
        g.input.as_ref().expect("input gradient").as_slice(),
        None,
    );
    let wrt_weights = check_gradient(
        |v| {
            let mut l = layer.clone();
            l.weights.as_mut_slice().copy_from_slice(v);
            dot(&l.forward(&x).expect("forward"), &r)
        },
        layer.weights.as_slice(),
        g.weights.as_slice(),
        None,
    );
    let wrt_bias = check_gradient(
        |v| {
            let mut l = layer.clone();
            l.bias.copy_from_slice(v);
            dot(&l.forward(&x).expect("forward"), &r)
        },
        &layer.bias,
        &g.bias,
        None,
    );
    Ok(merge([wrt_input, wrt_weights, wrt_bias]))
}

/// Training-mode batch norm on a random `4 x 3 x 5 x 5` input.
pub fn check_batchnorm(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_tensor(&mut rng, [4, 3, 5, 5]);
    let mut bn = BatchNormLayer::<f64>::new(3, 0.1, 1e-5)?;
    bn.gamma = (0..3).map(|_| rng.random_range(0.5..1.5)).collect();
    bn.beta = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
    let r = random_tensor(&mut rng, [4, 3, 5, 5]);
    let (_, cache, _) = bn.forward_train(&x)?;
    let g = bn.backward(&cache, &r)?;
    let out = |l: &BatchNormLayer<f64>, xi: &Tensor4<f64>| dot(&l.forward_train(xi).expect("forward").0, &r);

    let wrt_input = check_gradient(
        |v| out(&bn, &Tensor4::from_vec(x.shape(), v.to_vec()).expect("shape")),
        x.as_slice(),
        g.input.as_slice(),
        None,
    );
    let wrt_gamma = check_gradient(
        |v| {
            let mut l = bn.clone();
            l.gamma.copy_from_slice(v);
            out(&l, &x)
        },
        &bn.gamma,
        &g.gamma,
        None,
    );
    let wrt_beta = check_gradient(
        |v| {
            let mut l = bn.clone();
            l.beta.copy_from_slice(v);
            out(&l, &x)
        },
        &bn.beta,
        &g.beta,
        None,
    );
    Ok(merge([wrt_input, wrt_gamma, wrt_beta]))
}

/// Leaky ReLU away from its kink.
pub fn check_leaky_relu(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = random_tensor(&mut rng, [2, 2, 4, 4]);
    for v in x.as_mut_slice() {
        if v.abs() < 1e-2 {
            *v = 0.5;
        }
    }
    let r = random_tensor(&mut rng, x.shape());
    let g = leaky_relu_backward(&x, &r, 0.01);
    Ok(check_gradient(
        |v| {
            let xi = Tensor4::from_vec(x.shape(), v.to_vec()).expect("shape");
            dot(&leaky_relu(&xi, 0.01), &r)
        },
        x.as_slice(),
        g.as_slice(),
        None,
    ))
}

/// Weighted cross-entropy on random `50 x 2` scores.
pub fn check_weighted_xent(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..100).map(|_| rng.random_range(-3.0..3.0)).collect();
    let labels: Vec<u8> = (0..50).map(|_| rng.random_range(0..2)).collect();
    let cfg = LossConfig::default();
    let m = ScoreMatrix { rows: 50, cols: 2, data };
    let (_, g) = weighted_xent(&m, &labels, &cfg)?;
    Ok(check_gradient(
        |v| {
            let mi = ScoreMatrix { rows: 50, cols: 2, data: v.to_vec() };
            weighted_xent(&mi, &labels, &cfg).expect("loss").0
        },
        &m.data,
        &g.data,
        None,
    ))
}

/// Configuration of the scaled-down network: three stages, a 5x5 head, 8x8 grid.
pub fn small_config() -> FcnConfig {
    FcnConfig {
        n_stages: 3,
        first_filter: 5,
        dims: GridDims::new(8, 8).expect("valid grid"),
        ..FcnConfig::default()
    }
}

/// Full objective of the scaled-down network on one `1 x 1 x 8 x 8` sample,
/// with respect to every trainable parameter.
///
/// Biases of normalized stages have an exact zero gradient, since batch norm
/// removes any per-channel constant; they are skipped by the floor together
/// with other derivatives below [`NETWORK_FLOOR`].
pub fn check_network(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = Network::<f64>::build(small_config(), seed)?;
    let mut data = Tensor4::zeros([1, 1, 8, 8]);
    for _ in 0..3 {
        data.set(0, 0, rng.random_range(0..8), rng.random_range(0..8), 1.0);
    }
    let mut labels = Tensor4::zeros([1, 8, 8, 8]);
    for v in labels.as_mut_slice() {
        if rng.random_bool(0.1) {
            *v = 1.0;
        }
    }
    let grads = net.objective(&data, &labels)?.grads;
    let mut reports = Vec::new();
    for (b, (values, g)) in net.blocks().iter().zip(&grads.blocks).enumerate() {
        reports.push(check_gradient_above(
            |v| {
                let mut n = net.clone();
                n.blocks_mut()[b].copy_from_slice(v);
                n.objective(&data, &labels).expect("objective").loss
            },
            values,
            g,
            None,
            NETWORK_FLOOR,
        ));
    }
    Ok(merge(reports))
}

/// Runs every check.
pub fn suite(seed: u64) -> Result<Vec<NamedCheck>> {
    Ok(vec![
        NamedCheck { name: "conv2d", report: check_conv(seed)? },
        NamedCheck { name: "batchnorm", report: check_batchnorm(seed)? },
        NamedCheck { name: "leaky_relu", report: check_leaky_relu(seed)? },
        NamedCheck { name: "weighted_xent", report: check_weighted_xent(seed)? },
        NamedCheck { name: "network", report: check_network(seed)? },
    ])
}
