//! Scaling-law fits, data efficiency, ensemble loss and split-wise loss.

pub mod efficiency;
pub mod ensemble;
pub mod power_law;
pub mod split_loss;

pub use efficiency::{effective_data, efficiency_ratio, implied_loss, law_profile, reference_law, EfficiencyError};
pub use ensemble::{ensemble_loss, EnsembleError, LogitTensor};
pub use power_law::{fit_power_law, fit_power_law_fixed_alpha, FitError, LossPoint, PowerLawFit};
pub use split_loss::{read_boundaries, read_nll, split_loss, DocSpan, SplitLoss, SplitLossError};
