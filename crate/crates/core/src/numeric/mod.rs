//! Parameter storage, a small reverse-mode tape over `f64` vectors, the
//! optimizers, a finite-difference gradient checker and the checkpoint format.

pub mod checkpoint;
pub mod gradcheck;
pub mod optim;
pub mod params;
pub mod tape;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use gradcheck::{gradcheck, GradcheckConfig, GradcheckReport, TensorReport};
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind};
pub use params::{ModelDims, ModelParams, ParamId, ParamTensor};
pub use tape::{Activation, NodeId, Tape};
