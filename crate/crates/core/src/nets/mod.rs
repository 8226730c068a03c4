//! Trainable networks, losses, optimizers and the poly learning-rate schedule.

pub mod arch;
pub mod checkpoint;
mod fit;
pub mod layers;
mod loss;
mod models;
mod optim;
mod schedule;
mod tensor;

pub use fit::{fit, FitTrace, LpgObjective, LpgSample, Objective, SegObjective};
pub use layers::{ParamGroup, ParamTensor, Params};
pub use loss::{cross_entropy, softmax_cross_entropy, PROB_FLOOR};
pub use models::{
    lpg_forward, lpg_input, seg_forward, ClassProbMap, Lpg, SegNet, TwoChannelScore, IMAGE_CHANNELS,
    LPG_INPUT_CHANNELS,
};
pub use optim::{GroupRates, OptimConfig, Optimizer, OptimizerKind};
pub use schedule::{poly_lr, POLY_POWER};
pub use tensor::{softmax_channels, FeatureMap};
