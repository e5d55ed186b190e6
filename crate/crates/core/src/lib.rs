//! Legal judgment prediction over case life-cycle records: role-aware
//! hierarchical debate encoding, claim/fact/debate attention memories with
//! multi-hop refinement, and joint judgment and fact-recognition training,
//! built on a small reverse-mode autodiff engine.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod encoders;
pub mod gradcheck;
pub mod heads;
pub mod interaction;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod params;
pub mod serve;
pub mod tensor;
pub mod train;

pub use model::{Ablation, DropoutCtx, FactOverrides, ForwardTrace, Model, ModelConfig};
