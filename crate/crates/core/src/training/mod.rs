//! Optimization: RMSprop with a decaying learning rate, L2 on weights, and
//! best-validation-epoch selection.

mod fit;
mod optimizer;
mod step;

pub use fit::{fit, history_csv, validate, EpochRecord, FitOutputs, FitResult, TrainConfig, Validation, HISTORY_HEADER};
pub use optimizer::{lr_at, RmsProp};
pub use step::{train_step, StepMetrics, StepParams};
