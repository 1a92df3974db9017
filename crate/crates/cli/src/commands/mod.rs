mod evaluate;
mod infer;
mod simulate;
mod train;

pub use evaluate::{
    cmd_evaluate, EvaluationSummary, LesionSummary, LevelSummary, ReportRow, Stat, REPORT_CSV,
    SCATTER_CSV, SUMMARY_JSON,
};
pub use infer::{cmd_infer, InferRecord};
pub use simulate::cmd_simulate;
pub use train::{cmd_train, CHECKPOINT, DIVERGENCE_DUMP, TRAIN_LOG};
