pub mod env;
pub mod error;
pub mod harness;
pub mod numeric;
pub mod memory;
pub mod mpc;
pub mod tsttt;
pub mod world_model;

pub use error::{Error, Result};

/// Double-precision instantiations.
pub type Tensor64 = numeric::Tensor<f64>;
pub type Tape64 = numeric::Tape<f64>;
pub type TsTttLayer64 = tsttt::TsTttLayer<f64>;
pub type TTTState64 = tsttt::TTTState<f64>;
pub type CrossAttnParams64 = memory::CrossAttnParams<f64>;
pub type MemoryBank64 = memory::MemoryBank<f64>;
pub type SurrogateEncoder64 = memory::SurrogateEncoder<f64>;
pub type WorldModel64 = world_model::WorldModel<f64>;
pub type TrainSample64 = world_model::TrainSample<f64>;
pub type AdamState64 = world_model::AdamState<f64>;
pub type Observation64 = world_model::Observation<f64>;
