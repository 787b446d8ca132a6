//! Experiment plumbing behind the command-line tool: run configuration,
//! CSV input and output, and one function per subcommand.

mod commands;
mod config;
mod csvio;

pub use commands::{
    cmd_appendix_b, cmd_benchmark, cmd_estimate, cmd_simulate, cmd_train, estimate_with, load_data,
    per_seed_lines, resolve_grid, run_seed, summarize, treatment_kind, write_trace,
    BenchmarkReport, Curve, Estimate, MetricValue, SeedResult, SummaryRow, PER_SEED_HEADER,
    SUMMARY_HEADER,
};
pub use config::{GridSpec, Method, RunConfig};
pub use csvio::{fmt_exact, provenance, read_columns, read_dataset, write_columns, write_dataset};
