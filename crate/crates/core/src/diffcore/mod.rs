//! Dense tensors, reverse-mode autodiff, SGD and learning-rate schedules.

mod gradcheck;
mod graph;
mod optim;
mod schedule;
mod tensor;

pub use gradcheck::{finite_diff_check, GradCheck, FD_STEP};
pub use graph::{Gradients, Graph, NodeId};
pub use optim::{sgd_step, OptimizerState, SgdConfig};
pub use schedule::{lr_schedule, ScheduleKind, COSINE_MIN_LR};
pub use tensor::{log_sum_exp, Tensor};
