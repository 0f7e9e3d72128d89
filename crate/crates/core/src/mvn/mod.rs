//! Multivariate normal probabilities and quasi-random machinery.

mod bvn;
mod corr;
mod integrate;
mod qmc;
mod quantile;

pub use bvn::{bvn_cells, bvn_rectangle, bvn_upper};
pub use corr::CorrMatrix;
pub use integrate::{mvn_rectangle, orthant_cells, MvnEstimate};
pub use qmc::{qmc_normal_stream, NormalStream, QmcSettings};
pub use quantile::equicoordinate_quantile;

/// Largest supported dimension: five experimental arms plus one auxiliary.
pub const MAX_DIM: usize = 6;
