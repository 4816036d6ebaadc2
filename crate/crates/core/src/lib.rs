//! Core algorithms for seamless human intervention on dexterous hand-arm
//! policies: anchored relative hand retargeting, velocity-based residual arm
//! shared control, intervention-mode fusion, comparison retargeters, and a
//! synthetic replay harness that measures command discontinuity at the
//! intervention moment.

pub mod armshare;
pub mod baselines;
pub mod config;
pub mod hand;
pub mod intervene;
pub mod keyvec;
pub mod retarget;
pub mod sim;
pub mod solver;
pub mod spatial;

pub use hand::{HandModel, JointConfig};
pub use keyvec::{HumanHandSample, KeyVectors, NormalizationMap};
pub use spatial::{EmaFilter, Pose, Rotation, Twist};
