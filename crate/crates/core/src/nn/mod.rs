//! Numeric building blocks of the network.

pub mod activation;
pub mod adam;
pub mod batchnorm;
pub mod conv;
pub mod gradcheck;
pub mod init;
pub mod loss;
pub mod scalar;

pub use activation::{leaky_relu, leaky_relu_backward, DEFAULT_LEAKY_SLOPE};
pub use adam::{AdamConfig, AdamState, ParamBlock};
pub use batchnorm::{BatchNormLayer, BatchStats, BnCache, BnGrads, Mode};
pub use conv::{ConvGrads, ConvLayer};
pub use gradcheck::{check_gradient, check_gradient_above, relative_error, GradCheckReport};
pub use init::{fan_in_bound, init_conv};
pub use loss::{
    l2_penalty, labels_to_vector, matrix_to_scores, scores_to_matrix, weighted_xent, LossConfig, ScoreMatrix,
};
pub use scalar::{gemm, Op, Scalar};
