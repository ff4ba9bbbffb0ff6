//! Closed-form cost formulas, an instrumented MAC counter and parameter
//! accounting, with CSV and plain-text reports.

mod formulas;
mod report;

pub use formulas::{
    dwa_cost, dwa_cost_without_tokens, msa_global_cost, mlp_cost, pwa_cost, sepvit_block_cost, token_overhead_share,
    two_window_blocks_cost, window_msa_cost, BlockCost,
};
pub use report::{
    analytic_param_count, analytic_report, block_comparison, component_of, count_macs_empirical, count_params,
    write_comparison_csv, CostReport, CostRow, StageComparison, StageGeometry,
};
