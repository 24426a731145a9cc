//! Heat-kernel approximations for random walks conditioned to stay positive,
//! with exact lattice oracles, harmonic-function estimators, Monte Carlo
//! estimators and an experiment harness.

pub mod error;
pub mod harmonic;
pub mod harness;
pub mod increments;
pub mod kernel;
pub mod lattice_oracle;
pub mod montecarlo;
pub mod predict;
pub mod quad;
pub mod renewal;

pub use error::{Error, Result};
pub use harmonic::{Direction, HarmonicTable, Method};
pub use increments::{IncrementLaw, LatticeSpec, MomentSummary};
pub use lattice_oracle::{ConditionedLawTable, Constraint};
pub use montecarlo::McEstimate;
pub use predict::{ErrorEnvelope, PredictorInputs};
pub use renewal::SpitzerConstants;
