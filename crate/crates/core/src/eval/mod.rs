//! Rank correlation and conditional mutual information between measures and
//! generalization gaps over a grid of models.

mod baselines;
mod cmi;
mod rank;
mod report;

pub use baselines::{canonical_measure, depth_oracle_measure, oracle_measure, random_measure};
pub use cmi::{
    axis_entropies, cmi_summary, conditional_mi, k_min_cmi, subsets_up_to_two, Cmi, CmiSummary,
    CmiTable,
};
pub use rank::{axis_tau, granulated_kendall, grid_key, kendall_tau, AxisTau, Granulated, GridKey};
pub use report::{build_report, evaluate_measure, EvalModel, EvalReport, ReportOptions, ReportRow};
