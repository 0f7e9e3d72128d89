//! Operating characteristics: rejection-outcome distributions, the
//! quantities derived from them, patient-level simulation, and plot grids.

mod chars;
mod curves;
mod pmf;
mod simulate;

pub use chars::{opchars_from_pmf, OpCharEntry, OpCharFlags, OpChars};
pub use curves::{curves, theta_grid, CurveData, ReferenceLines, DEFAULT_QUALITY, MAX_QUALITY, MIN_QUALITY};
pub use pmf::{outcome_pmf, PmfEvaluator, PmfMethod, RejectionPmf};
pub use simulate::{simulate_trials, SimulationResult, MIN_REPLICATES};
