//! Training loops, the pairwise baseline, error metrics and the success
//! evaluator.

mod benchmark;
mod binary;
mod metrics;
mod success;
mod train;

pub use benchmark::{
    choose_sample, run_benchmark, BenchmarkConfig, EvalReport, ExampleRecord, ModelEntry, ModelReport, SelectionReport,
    SuccessRow, SuccessTable, REPORT_SCHEMA_VERSION, SAMPLE_RULE,
};
pub use binary::{binary_input, binary_target, BinaryInput, BinaryNet, NEIGHBORHOOD};
pub use metrics::{
    compute_errors, example_errors, property_group, ErrorRow, ErrorTable, ExampleErrors, SelectionCounts, SelectionScores,
};
pub use success::{
    evaluate_success, fit_circle, line_deviation, settle, FailureReason, SuccessOutcome, CIRCLE_RESIDUAL, DROP_HEIGHT,
    LINE_DEVIATION, MAX_TILT_DEG, SLOT_DISTANCE,
};
pub use train::{epoch_order, train, Control, Network, StepLog, Task, TrainConfig, TrainState};
