//! Deterministic simulator core for four distributed-learning protocols,
//! federated learning (FL), split learning (SL), federated split learning
//! (FSL/SplitFed) and its transfer-learning variant (FSTL), over a fleet
//! of vehicular clients and one server, plus the analytic per-round latency
//! model that prices each protocol's communication and compute.
//!
//! The tensor engine is generic over the scalar type via [`scalar::Scalar`]
//! (`f32` or `f64`). The simulator's working precision is `f32` with `f64`
//! accumulation; the `f64` instantiation exists for high-precision oracles.
//! The crate root exposes concrete aliases for both.
//!
//! Determinism contract: a fixed seed and fixed input order produce
//! bit-identical parameters, records and serialized weights across runs.
//! All reductions happen in a fixed left-to-right order; conceptually
//! parallel protocol steps execute sequentially in ascending vu_id order.

pub mod arch;
pub mod error;
pub mod federation;
pub mod latency;
pub mod layer;
pub mod loss;
pub mod network;
pub mod protocols;
pub mod rng;
pub mod scalar;
pub mod split;
pub mod tensor;
pub mod weights;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Working-precision (`f32`) instantiations.
pub type Tensor32 = tensor::Tensor<f32>;
pub type Network32 = network::Network<f32>;
pub type ParamSet32 = network::ParamSet<f32>;
pub type GradientSet32 = network::GradientSet<f32>;
pub type Trace32 = network::Trace<f32>;
pub type LabeledData32 = protocols::LabeledData<f32>;
pub type FleetState32 = protocols::FleetState<f32>;
pub type SmashedBatch32 = split::SmashedBatch<f32>;
pub type CutGradient32 = split::CutGradient<f32>;
pub type SplitPair32 = split::SplitPair<f32>;

/// Oracle-precision (`f64`) instantiations.
pub type Tensor64 = tensor::Tensor<f64>;
pub type Network64 = network::Network<f64>;
pub type ParamSet64 = network::ParamSet<f64>;
pub type GradientSet64 = network::GradientSet<f64>;
