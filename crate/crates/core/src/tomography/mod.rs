//! State estimation from calibrated quadratures.

mod extract;
mod fisher;
mod maxlik;
mod streaming;

pub use extract::{extract_eta_gamma, extract_eta_gamma_with, truncated_model, EtaGamma, ExtractModel};
pub use fisher::{fisher_covariance, fisher_sigma, FisherCovariance, SUPPORT_THRESHOLD};
pub use maxlik::{marginal_table, maxlik_diag, MarginalTable, MaxLikConfig, ReconstructionResult};
pub use streaming::{eta_from_variance, EtaEstimate, EtaUpdate, StreamingEstimator};

/// Samples per parallel work unit; fixed so sums do not depend on the thread count.
pub(crate) const REDUCTION_BLOCK: usize = 8192;
