//! Scoring against ground truth and statistical checks of fitted models.

mod matching;
mod metrics;
mod validation;

pub use matching::{match_and_score, match_components, pearson, MatchResult};
pub use metrics::{
    criteria_from, frobenius_distance, information_criteria, mean_variant_distance,
    reconstruction_metrics, DfMode, InformationCriteria, ReconstructionMetrics, TrialError,
};
pub use validation::{
    leave_one_out, p_value, permutation_tests, restrict_channels, shapley_approx,
    shapley_enumerated, shapley_exhaustive, shapley_sampled, validate_model, ChannelTable,
    ComponentNull, LeaveOneOut, NullTest, PermutationReport, ValidationOptions, ValidationReport,
};
