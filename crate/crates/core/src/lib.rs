//! Analysis of cyclic polling systems with priority classes.
pub mod branching;
pub mod cycletime;
pub mod distributions;
pub mod error;
pub mod model;
pub mod numerics;
pub mod optimizer;
pub mod presets;
pub mod report;
pub mod scalar;
pub mod simulator;
pub mod waiting;

pub use distributions::{BusyPeriodSpec, DistributionSpec};
pub use error::{PollError, Result};
pub use model::{Discipline, Preemption, PriorityClassSpec, QueueSpec, System, SystemSpec};
pub use report::AnalysisReport;
pub use scalar::{Scalar, Taylor};
pub use simulator::{SimConfig, SimEstimate, SimReport};
