//! Runge-Kutta networks: residual classifiers read as explicit RK
//! discretisations of a neural ODE, trained with gradients from the matching
//! symplectic (partitioned) RK adjoint.
//!
//! ```
//! use rknet::prelude::*;
//!
//! let data = gen_point_dataset("spiral", 200, 1).unwrap();
//! let split = split(&data, 0.8, 2).unwrap();
//! let spec = ModelSpec {
//!     arch: Architecture::rk4(),
//!     activation: Activation::Tanh,
//!     width: 4,
//!     depth: 5,
//!     step: 0.1,
//!     input_dim: 2,
//!     classes: 2,
//! };
//! let mut rng = RngState::new(3);
//! let model = ModelParams::init(spec, &mut rng.child(0)).unwrap();
//! let config = TrainConfig { epochs: 1, ..TrainConfig::default() };
//! let (_, metrics) = train(model, &split, &config, &mut rng.child(1), |_| {}).unwrap();
//! assert_eq!(metrics.epochs.len(), 2);
//! ```

pub mod adjoint;
pub mod analysis;
pub mod cli;
pub mod data;
pub mod error;
pub mod network;
pub mod numerics;
pub mod tableau;
pub mod training;

pub use error::{Error, Result};

/// The commonly used items.
pub mod prelude {
    pub use crate::adjoint::{batch_gradients, finite_diff_grads, max_relative_error, ParamGrads};
    pub use crate::analysis::{accuracy, pca_fit, pca_project, prediction_grid, Bounds, PcaModel};
    pub use crate::data::{gen_point_dataset, split, LabeledDataset, SplitDataset};
    pub use crate::error::{Error, Result};
    pub use crate::network::{forward, Activation, Architecture, ModelParams, ModelSpec};
    pub use crate::numerics::{Matrix, RngState, Vector};
    pub use crate::tableau::ButcherTableau;
    pub use crate::training::{train, AdamConfig, TrainConfig};
}
