//! Selective state-space core.

mod lti;
mod op;
mod params;
mod scan;
mod zoh;

pub use lti::{lti_apply, lti_kernel};
pub use op::{selective_scan, ScanVars};
pub use params::{
    init_a_log, init_dt_bias, ssm_parameterize, ScanState, SelectiveInputs, SsmParams,
};
pub use scan::{
    inclusive_scan, scan_discretized, selective_scan_parallel, selective_scan_seq, ScanEvaluator,
    ScanPair, PARALLEL_MIN_LEN,
};
pub use zoh::{discretize_zoh, zoh_factor, zoh_factor_derivative, TAYLOR_THRESHOLD};
