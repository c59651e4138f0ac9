//! Characteristic curves, expectation identities and positional coverage.

pub mod coverage;
pub mod curves;
pub mod expectation;
pub mod special;

pub use coverage::{
    attained_values, coverage_map, min_len_for_full_range, Channel, CoverageReport, CoverageRow,
    CoverageVariant, Interval, Term,
};
pub use curves::{
    char_curve_imag, char_curve_real, integral_curve, log_grid, sample_curves, write_curves_csv,
    CurveKind,
    CurveSample,
};
pub use expectation::{
    mc_aggregation_check, mc_mean_score_check, ExpectationCheck, Identity, McConfig,
};
pub use special::{cosine_integral, sine_integral};
