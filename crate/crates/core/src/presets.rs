//! Ready-made systems used by tests, benches and the command line.

use crate::distributions::DistributionSpec;
use crate::model::{Discipline, Preemption, PriorityClassSpec, QueueSpec, SystemSpec};

/// Two queues, exponential services and switch-overs, `lambda = (0.6, 0.2)`,
/// unit means everywhere. Total load 0.8, mean cycle 10.
pub fn two_queue(discipline: Discipline) -> SystemSpec {
    let queue = |rate: f64| QueueSpec {
        discipline,
        preemption: Preemption::Nonpreemptive,
        switch_over: DistributionSpec::exponential(1.0),
        classes: vec![PriorityClassSpec {
            rate,
            service: DistributionSpec::exponential(1.0),
        }],
    };
    SystemSpec {
        queues: vec![queue(0.6), queue(0.2)],
    }
}

/// `n` identical queues sharing total arrival rate `total_rate`, exponential
/// services with mean `mean_service`, deterministic switch-overs summing to
/// `total_switch`.
pub fn symmetric(
    n: usize,
    discipline: Discipline,
    total_rate: f64,
    mean_service: f64,
    total_switch: f64,
) -> SystemSpec {
    SystemSpec {
        queues: (0..n)
            .map(|_| QueueSpec {
                discipline,
                preemption: Preemption::Nonpreemptive,
                switch_over: DistributionSpec::deterministic(total_switch / n as f64),
                classes: vec![PriorityClassSpec {
                    rate: total_rate / n as f64,
                    service: DistributionSpec::exponential(1.0 / mean_service),
                }],
            })
            .collect(),
    }
}
