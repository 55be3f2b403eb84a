//! Staggered-grid fluid state, the Navier-Stokes residual loss and the learned surrogate.

mod env;
mod grid;
mod loss;
mod net;
mod state;
mod train;

pub use env::{generate_training_env, EnvConfig, TrainingEnv};
pub use grid::MacGrid;
pub use loss::{momentum_residuals, ns_residual_loss, ns_residual_loss_value, FluidParams, LossParts, LossValue};
pub use net::{ConvLayer, NetConfig, NetVars, SurrogateNet, IN_CHANNELS};
pub(crate) use state::expect_shape;
pub use state::{
    centers_to_faces, curl_at_centers, divergence, stagger, velocity_from_curl, velocity_from_curl_var, FluidState,
};
pub use train::{
    boundary_velocity_error, train_network, write_loss_csv, BoundaryError, LossRecord, TrainConfig, TrainResult,
};
