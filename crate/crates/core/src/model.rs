//! Polling-system description, validation and derived aggregates.
//!
//! Queues are visited cyclically `0, 1, ..., N-1`. Within a queue, classes are
//! listed in priority order: index 0 is served first. Indices are zero-based
//! throughout the API.

use serde::{Deserialize, Serialize};

use crate::distributions::{BusyPeriodSpec, DistributionSpec};
use crate::error::{PollError, Result};

/// Largest admissible total utilization.
pub const MAX_LOAD: f64 = 1.0 - 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Discipline {
    Gated,
    Exhaustive,
    GloballyGated,
}

impl Discipline {
    pub fn name(self) -> &'static str {
        match self {
            Discipline::Gated => "gated",
            Discipline::Exhaustive => "exhaustive",
            Discipline::GloballyGated => "globally_gated",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preemption {
    #[default]
    Nonpreemptive,
    PreemptiveResume,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorityClassSpec {
    pub rate: f64,
    pub service: DistributionSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueueSpec {
    pub discipline: Discipline,
    #[serde(default)]
    pub preemption: Preemption,
    pub switch_over: DistributionSpec,
    pub classes: Vec<PriorityClassSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub queues: Vec<QueueSpec>,
}

impl SystemSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| PollError::Config(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("system spec serializes")
    }

    pub fn len(&self) -> usize {
        self.queues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queues.is_empty()
    }

    pub fn is_globally_gated(&self) -> bool {
        self.queues
            .first()
            .is_some_and(|q| q.discipline == Discipline::GloballyGated)
    }

    /// Structural checks only: shapes, parameters, discipline mix. No load check.
    pub fn check_shape(&self) -> Result<()> {
        if self.queues.is_empty() {
            return Err(PollError::BadShape("system has no queues".into()));
        }
        let gg = self
            .queues
            .iter()
            .filter(|q| q.discipline == Discipline::GloballyGated)
            .count();
        if gg != 0 && gg != self.queues.len() {
            return Err(PollError::BadShape(
                "globally gated must be used at every queue or at none".into(),
            ));
        }
        for (i, q) in self.queues.iter().enumerate() {
            if q.classes.is_empty() {
                return Err(PollError::BadShape(format!("queue {} has no classes", i + 1)));
            }
            if q.preemption == Preemption::PreemptiveResume && q.discipline != Discipline::Exhaustive {
                return Err(PollError::BadShape(format!(
                    "queue {}: preemptive resume requires exhaustive service",
                    i + 1
                )));
            }
            q.switch_over.validate()?;
            for (k, c) in q.classes.iter().enumerate() {
                if !(c.rate.is_finite() && c.rate >= 0.0) {
                    return Err(PollError::BadShape(format!(
                        "class ({}, {}) has invalid rate {}",
                        i + 1,
                        k + 1,
                        c.rate
                    )));
                }
                c.service.validate()?;
            }
        }
        Ok(())
    }

    /// Full validation for analytic use.
    pub fn validate(&self) -> Result<Aggregates> {
        self.check_shape()?;
        let agg = Aggregates::compute(self);
        if !(agg.rho < MAX_LOAD) {
            return Err(PollError::Unstable { rho: agg.rho });
        }
        if agg.mean_switch_total <= 0.0 {
            return Err(PollError::ZeroSwitchover);
        }
        Ok(agg)
    }
}

/// Per-queue aggregates.
#[derive(Clone, Debug)]
pub struct QueueAggregate {
    pub lambda: f64,
    /// Rate-weighted mixture of the class service laws.
    pub service: DistributionSpec,
    pub rho: f64,
    pub class_rho: Vec<f64>,
    pub mean_intervisit: f64,
}

#[derive(Clone, Debug)]
pub struct Aggregates {
    pub queues: Vec<QueueAggregate>,
    pub rho: f64,
    pub mean_switch_total: f64,
    pub second_moment_switch_total: f64,
    pub mean_cycle: f64,
}

impl Aggregates {
    fn compute(spec: &SystemSpec) -> Self {
        let mut queues = Vec::with_capacity(spec.queues.len());
        let mut rho = 0.0;
        let mut mean_s = 0.0;
        let mut var_s = 0.0;
        for q in &spec.queues {
            let lambda: f64 = q.classes.iter().map(|c| c.rate).sum();
            let service = class_mixture(&q.classes).unwrap_or_else(|| q.classes[0].service.clone());
            let class_rho: Vec<f64> = q.classes.iter().map(|c| c.rate * c.service.mean()).collect();
            let qr: f64 = class_rho.iter().sum();
            rho += qr;
            mean_s += q.switch_over.mean();
            var_s += q.switch_over.variance();
            queues.push(QueueAggregate {
                lambda,
                service,
                rho: qr,
                class_rho,
                mean_intervisit: 0.0,
            });
        }
        let mean_cycle = if rho < 1.0 { mean_s / (1.0 - rho) } else { f64::INFINITY };
        for q in &mut queues {
            q.mean_intervisit = (1.0 - q.rho) * mean_cycle;
        }
        Aggregates {
            queues,
            rho,
            mean_switch_total: mean_s,
            second_moment_switch_total: var_s + mean_s * mean_s,
            mean_cycle,
        }
    }
}

/// Rate-weighted mixture of a list of classes, or `None` when all rates vanish.
pub fn class_mixture(classes: &[PriorityClassSpec]) -> Option<DistributionSpec> {
    let total: f64 = classes.iter().map(|c| c.rate).sum();
    if total <= 0.0 {
        return None;
    }
    if classes.len() == 1 {
        return Some(classes[0].service.clone());
    }
    Some(DistributionSpec::mixture(
        classes
            .iter()
            .filter(|c| c.rate > 0.0)
            .map(|c| (c.rate / total, c.service.clone()))
            .collect(),
    ))
}

/// A validated system ready for analytic evaluation. Immutable.
#[derive(Clone, Debug)]
pub struct System {
    spec: SystemSpec,
    agg: Aggregates,
    busy: Vec<BusyPeriodSpec>,
}

impl System {
    pub fn new(spec: SystemSpec) -> Result<Self> {
        let agg = spec.validate()?;
        let busy = agg
            .queues
            .iter()
            .map(|q| BusyPeriodSpec::new(q.service.clone(), q.lambda))
            .collect();
        Ok(System { spec, agg, busy })
    }

    pub fn spec(&self) -> &SystemSpec {
        &self.spec
    }

    pub fn aggregates(&self) -> &Aggregates {
        &self.agg
    }

    pub fn n(&self) -> usize {
        self.spec.queues.len()
    }

    pub fn queue(&self, i: usize) -> &QueueSpec {
        &self.spec.queues[i]
    }

    pub fn discipline(&self, i: usize) -> Discipline {
        self.spec.queues[i].discipline
    }

    pub fn is_globally_gated(&self) -> bool {
        self.spec.is_globally_gated()
    }

    pub fn lambda(&self, i: usize) -> f64 {
        self.agg.queues[i].lambda
    }

    pub fn service(&self, i: usize) -> &DistributionSpec {
        &self.agg.queues[i].service
    }

    pub fn switch_over(&self, i: usize) -> &DistributionSpec {
        &self.spec.queues[i].switch_over
    }

    pub fn busy_period(&self, i: usize) -> &BusyPeriodSpec {
        &self.busy[i]
    }

    pub fn rho(&self) -> f64 {
        self.agg.rho
    }

    pub fn rho_queue(&self, i: usize) -> f64 {
        self.agg.queues[i].rho
    }

    pub fn rho_class(&self, i: usize, k: usize) -> f64 {
        self.agg.queues[i].class_rho[k]
    }

    pub fn mean_cycle(&self) -> f64 {
        self.agg.mean_cycle
    }

    pub fn mean_intervisit(&self, i: usize) -> f64 {
        self.agg.queues[i].mean_intervisit
    }

    /// Iterator over all `(queue, class)` index pairs in queue-major order.
    pub fn classes(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.spec
            .queues
            .iter()
            .enumerate()
            .flat_map(|(i, q)| (0..q.classes.len()).map(move |k| (i, k)))
    }

    pub fn class_count(&self) -> usize {
        self.spec.queues.iter().map(|q| q.classes.len()).sum()
    }
}
