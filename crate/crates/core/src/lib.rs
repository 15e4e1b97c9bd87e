//! Desk-scale laboratory for safety-aware fine-tuning on finite alphabets.
//!
//! A fine-tuned conditional model is scored by two exact quantities: its
//! safety gap `G_s` (excess loss on the original alignment distributions) and
//! its capability gap `G_f` (excess loss on the downstream task). Two
//! fine-tuning strategies are solved here:
//!
//! * **Case I**: task loss plus `λ` times the loss on a proxy safety dataset.
//! * **Case II**: task loss restricted to a Euclidean ball of radius `ε₂`
//!   around the aligned parameters `θ_s`.
//!
//! The [`bounds`] module evaluates the upper bounds on both gaps for each
//! strategy and reports the slack against the measured gaps; [`oracle`]
//! holds independent reference solvers; [`experiments`] runs sweeps and
//! writes CSV/SVG reports.

pub mod bounds;
pub mod error;
pub mod experiments;
pub mod json;
pub mod model;
pub mod oracle;
pub mod prob;
pub mod scenario;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
pub use model::{LogitModel, LossWeights, PenaltyConstant, Variant};
pub use prob::{Alphabet, Categorical, ConditionalTable};
pub use scenario::{DistributionPair, Scenario, ScenarioConfig};
