//! Difference-in-differences on balanced panels with a common treatment
//! date, and selection of the pre-trends window length that minimizes an
//! estimated mean squared error.
//!
//! - [`panel`]: long-format data, validation, pre-trends windows
//! - [`fe_ols`]: OLS with absorbed unit and time effects
//! - [`estimators`]: TWFE, event-study and modified event-study fits plus
//!   their closed forms
//! - [`selector`]: feasible and oracle window-length rules
//! - [`simulate`]: synthetic panels and Monte Carlo evaluation

pub mod error;
pub mod estimators;
pub mod fe_ols;
pub mod output;
pub mod panel;
pub mod selector;
pub mod simulate;

pub use error::{Error, Result};
pub use estimators::{
    att_2x2, closed_form_event_study, closed_form_modified, estimate_event_study,
    estimate_modified_event_study, estimate_target, estimate_twfe, CurvePoint, EstimateRecord,
    EventStudyCurve, ModelKind, Target,
};
pub use fe_ols::{fit, DesignSpec, FitResult, SeType};
pub use output::Precision;
pub use panel::{
    load_long_csv, write_long_csv, CsvSchema, Observation, PanelDataset, ValidationReport,
};
pub use selector::{
    build_candidates, oracle_mse, oracle_select, select, CandidateTable, FailurePolicy,
    MseCandidate, OracleSpec, SelectionResult,
};
pub use simulate::{
    gen_dynamic, gen_static, monte_carlo, true_effect, McPlan, McSummary, Rule, SimConfig, SimKind,
};
