//! Service-time thresholds as priority levels.
//!
//! A queue's jobs are split into bands by service requirement; shorter bands
//! get higher priority. Thresholds are searched in quantile coordinates
//! `q = F(t)`, where the band masses are simply differences of `q`.

use rayon::prelude::*;
use serde::Serialize;

use crate::distributions::{truncate_exponential, DistributionSpec};
use crate::error::{PollError, Result};
use crate::model::{Discipline, PriorityClassSpec, System, SystemSpec};
use crate::presets;
use crate::waiting::{mean_waiting_with, Residuals};

/// Stopping tolerance on the objective between coordinate sweeps.
pub const VALUE_TOL: f64 = 1e-6;
/// Golden-section tolerance in quantile coordinates.
const QUANTILE_TOL: f64 = 1e-7;
/// Smallest band mass kept open during the search.
const MIN_MASS: f64 = 1e-9;
const MAX_SWEEPS: usize = 200;
/// Exponents of the quantile-spaced starting points.
const START_EXPONENTS: [f64; 5] = [0.5, 0.75, 1.0, 1.5, 2.0];

/// Thresholds for one queue and the classes they induce.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdPolicy {
    pub queue: usize,
    pub thresholds: Vec<f64>,
    pub classes: Vec<PriorityClassSpec>,
}

impl ThresholdPolicy {
    /// Bands `[t_{k-1}, t_k)` of queue `i`, rates proportional to band mass.
    pub fn new(spec: &SystemSpec, i: usize, thresholds: &[f64]) -> Result<Self> {
        let q = spec
            .queues
            .get(i)
            .ok_or_else(|| PollError::BadShape(format!("no queue {}", i + 1)))?;
        if q.classes.len() != 1 {
            return Err(PollError::BadShape(format!(
                "queue {} already has {} classes; thresholds apply to a single class",
                i + 1,
                q.classes.len()
            )));
        }
        let ok = thresholds.iter().all(|t| t.is_finite() && *t > 0.0)
            && thresholds.windows(2).all(|w| w[0] < w[1]);
        if !ok {
            return Err(PollError::BadShape(format!(
                "thresholds must be positive and strictly increasing: {thresholds:?}"
            )));
        }
        let base = &q.classes[0];
        let mut edges = Vec::with_capacity(thresholds.len() + 2);
        edges.push(0.0);
        edges.extend_from_slice(thresholds);
        edges.push(f64::INFINITY);
        let classes = match &base.service {
            DistributionSpec::Exponential { rate } => edges
                .windows(2)
                .map(|w| {
                    let (service, p) = truncate_exponential(*rate, w[0], w[1])?;
                    Ok(PriorityClassSpec {
                        rate: base.rate * p,
                        service,
                    })
                })
                .collect::<Result<Vec<_>>>()?,
            DistributionSpec::Deterministic { value } => edges
                .windows(2)
                .map(|w| PriorityClassSpec {
                    rate: if w[0] <= *value && *value < w[1] { base.rate } else { 0.0 },
                    service: base.service.clone(),
                })
                .collect(),
            other => return Err(PollError::UnsupportedFamily(other.family_name())),
        };
        Ok(ThresholdPolicy {
            queue: i,
            thresholds: thresholds.to_vec(),
            classes,
        })
    }

    pub fn apply(&self, spec: &SystemSpec) -> SystemSpec {
        let mut out = spec.clone();
        out.queues[self.queue].classes = self.classes.clone();
        out
    }
}

/// `spec` with queue `i` split at `thresholds`.
pub fn apply_thresholds(spec: &SystemSpec, i: usize, thresholds: &[f64]) -> Result<SystemSpec> {
    Ok(ThresholdPolicy::new(spec, i, thresholds)?.apply(spec))
}

/// Arrival-weighted mean wait over the classes of queue `i`.
pub fn overall_mean_wait(spec: &SystemSpec, i: usize) -> Result<f64> {
    let sys = System::new(spec.clone())?;
    let res = Residuals::compute(&sys)?;
    overall_with(&sys, &res, i)
}

fn overall_with(sys: &System, res: &Residuals, i: usize) -> Result<f64> {
    let lambda = sys.lambda(i);
    let mut acc = 0.0;
    for (k, c) in sys.queue(i).classes.iter().enumerate() {
        if c.rate > 0.0 {
            acc += c.rate / lambda * mean_waiting_with(sys, res, i, k)?;
        }
    }
    Ok(acc)
}

/// Objective over quantile coordinates for one exponential queue. The cycle
/// structure does not depend on the priority order, so residual moments are
/// computed once.
struct Objective<'a> {
    spec: &'a SystemSpec,
    queue: usize,
    rate: f64,
    residuals: Residuals,
}

impl<'a> Objective<'a> {
    fn new(spec: &'a SystemSpec, queue: usize) -> Result<Self> {
        let sys = System::new(spec.clone())?;
        let q = sys.queue(queue);
        let rate = match (q.classes.len(), &q.classes[0].service) {
            (1, DistributionSpec::Exponential { rate }) => *rate,
            (1, other) => return Err(PollError::UnsupportedFamily(other.family_name())),
            (n, _) => {
                return Err(PollError::BadShape(format!(
                    "queue {} already has {n} classes",
                    queue + 1
                )))
            }
        };
        Ok(Objective {
            spec,
            queue,
            rate,
            residuals: Residuals::compute(&sys)?,
        })
    }

    fn thresholds(&self, q: &[f64]) -> Vec<f64> {
        q.iter().map(|p| -(-p).ln_1p() / self.rate).collect()
    }

    fn value(&self, q: &[f64]) -> Result<f64> {
        let spec = apply_thresholds(self.spec, self.queue, &self.thresholds(q))?;
        let sys = System::new(spec)?;
        overall_with(&sys, &self.residuals, self.queue)
    }

    /// Objective with infeasible points mapped to infinity for the search.
    fn penalised(&self, q: &[f64]) -> f64 {
        self.value(q).unwrap_or(f64::INFINITY)
    }
}

fn golden_section<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

fn coordinate_descent(obj: &Objective, mut q: Vec<f64>) -> (Vec<f64>, f64) {
    let mut best = obj.penalised(&q);
    for _ in 0..MAX_SWEEPS {
        let before = best;
        for j in 0..q.len() {
            let lo = if j == 0 { 0.0 } else { q[j - 1] } + MIN_MASS;
            let hi = if j + 1 == q.len() { 1.0 } else { q[j + 1] } - MIN_MASS;
            if hi <= lo {
                continue;
            }
            let mut trial = q.clone();
            let (x, fx) = golden_section(
                |x| {
                    trial[j] = x;
                    obj.penalised(&trial)
                },
                lo,
                hi,
                QUANTILE_TOL,
            );
            if fx < best {
                q[j] = x;
                best = fx;
            }
        }
        if before - best < VALUE_TOL {
            break;
        }
    }
    (q, best)
}

/// Outcome of [`optimize_thresholds`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Optimum {
    pub thresholds: Vec<f64>,
    pub value: f64,
}

/// Thresholds minimising the overall mean wait of queue `i` with `k` levels.
///
/// Coordinate descent with golden-section line searches, restarted from five
/// quantile-spaced points `q_j = 1 - (1 - j/k)^a`; the best run wins.
pub fn optimize_thresholds(spec: &SystemSpec, i: usize, k: usize) -> Result<Optimum> {
    let obj = Objective::new(spec, i)?;
    if k == 1 {
        return Ok(Optimum {
            thresholds: Vec::new(),
            value: obj.value(&[])?,
        });
    }
    if k == 0 {
        return Err(PollError::BadShape("need at least one priority level".into()));
    }
    let runs: Vec<(Vec<f64>, f64)> = START_EXPONENTS
        .par_iter()
        .map(|&a| {
            let start: Vec<f64> = (1..k)
                .map(|j| 1.0 - (1.0 - j as f64 / k as f64).powf(a))
                .collect();
            coordinate_descent(&obj, start)
        })
        .collect();
    let (q, value) = runs
        .into_iter()
        .fold(None::<(Vec<f64>, f64)>, |best, run| match best {
            Some(b) if b.1 <= run.1 => Some(b),
            _ => Some(run),
        })
        .expect("at least one start");
    if !value.is_finite() {
        return Err(PollError::NoConvergence {
            iterations: MAX_SWEEPS,
            residual: value,
        });
    }
    Ok(Optimum {
        thresholds: obj.thresholds(&q),
        value,
    })
}

/// Equal-mass band edges of `Exp(rate)`.
pub fn quantile_thresholds(rate: f64, levels: usize) -> Vec<f64> {
    (1..levels)
        .map(|j| -(-(j as f64) / levels as f64).ln_1p() / rate)
        .collect()
}

/// Smallest number of bands accepted by [`sjf_limit`].
pub const MIN_SJF_LEVELS: usize = 50;

/// Overall mean wait of queue `i` under `levels` equal-mass bands, an
/// approximation of shortest-job-first.
pub fn sjf_limit(spec: &SystemSpec, i: usize, levels: usize) -> Result<f64> {
    if levels < MIN_SJF_LEVELS {
        return Err(PollError::Config(format!(
            "SJF approximation needs at least {MIN_SJF_LEVELS} levels, got {levels}"
        )));
    }
    let obj = Objective::new(spec, i)?;
    let thresholds = quantile_thresholds(obj.rate, levels);
    let split = apply_thresholds(spec, i, &thresholds)?;
    let sys = System::new(split)?;
    overall_with(&sys, &obj.residuals, i)
}

/// One point of the symmetric-system comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub n: usize,
    pub discipline: Discipline,
    pub policy: &'static str,
    pub mean_wait: f64,
}

/// Mean wait in symmetric systems (total rate `total_rate`, `Exp` service
/// with mean `mean_service`, deterministic total switch-over `total_switch`)
/// under FCFS and under SJF bands applied at every queue.
pub fn symmetric_sweep(
    ns: &[usize],
    disciplines: &[Discipline],
    total_rate: f64,
    mean_service: f64,
    total_switch: f64,
    levels: usize,
) -> Result<Vec<SweepPoint>> {
    if levels < MIN_SJF_LEVELS {
        return Err(PollError::Config(format!(
            "SJF approximation needs at least {MIN_SJF_LEVELS} levels, got {levels}"
        )));
    }
    let jobs: Vec<(usize, Discipline)> = ns
        .iter()
        .flat_map(|&n| disciplines.iter().map(move |&d| (n, d)))
        .collect();
    let rows: Vec<Result<[SweepPoint; 2]>> = jobs
        .par_iter()
        .map(|&(n, d)| {
            let spec = presets::symmetric(n, d, total_rate, mean_service, total_switch);
            let fcfs = overall_mean_wait(&spec, 0)?;
            let bands = quantile_thresholds(1.0 / mean_service, levels);
            let mut sjf = spec.clone();
            for i in 0..n {
                sjf = apply_thresholds(&sjf, i, &bands)?;
            }
            let sjf_value = overall_mean_wait(&sjf, 0)?;
            Ok([
                SweepPoint { n, discipline: d, policy: "fcfs", mean_wait: fcfs },
                SweepPoint { n, discipline: d, policy: "sjf", mean_wait: sjf_value },
            ])
        })
        .collect();
    let mut out = Vec::with_capacity(rows.len() * 2);
    for r in rows {
        out.extend(r?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    #[test]
    fn empty_threshold_list_is_identity() {
        let spec = presets::two_queue(Discipline::Gated);
        assert_eq!(apply_thresholds(&spec, 0, &[]).unwrap(), spec);
    }

    #[test]
    fn median_split_halves_the_rate() {
        let spec = presets::two_queue(Discipline::Gated);
        let split = apply_thresholds(&spec, 0, &[std::f64::consts::LN_2]).unwrap();
        let c = &split.queues[0].classes;
        assert!((c[0].rate - 0.3).abs() < 1e-15);
        assert!((c[1].rate - 0.3).abs() < 1e-15);
    }

    #[test]
    fn band_mixture_reproduces_the_service_lst() {
        let spec = presets::two_queue(Discipline::Gated);
        let split = apply_thresholds(&spec, 0, &[0.2, 0.9, 2.5]).unwrap();
        let classes = &split.queues[0].classes;
        for w in [0.0, 0.1, 0.7, 2.0, 9.0] {
            let mix: f64 = classes
                .iter()
                .map(|c| c.rate / 0.6 * c.service.lst(Complex64::new(w, 0.0)).re)
                .sum();
            assert!((mix - 1.0 / (1.0 + w)).abs() < 1e-14, "{w}");
        }
        let rates: f64 = classes.iter().map(|c| c.rate).sum();
        assert!((rates - 0.6).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_thresholds_and_families() {
        let spec = presets::two_queue(Discipline::Gated);
        assert!(apply_thresholds(&spec, 0, &[1.0, 0.5]).is_err());
        assert!(apply_thresholds(&spec, 0, &[0.0]).is_err());
        let mut erlang = spec.clone();
        erlang.queues[0].classes[0].service = DistributionSpec::Erlang { shape: 2, rate: 2.0 };
        assert!(matches!(
            apply_thresholds(&erlang, 0, &[1.0]),
            Err(PollError::UnsupportedFamily(_))
        ));
    }

    #[test]
    fn single_level_is_fcfs() {
        let spec = presets::two_queue(Discipline::Exhaustive);
        let sys = System::new(spec.clone()).unwrap();
        let fcfs = crate::waiting::mean_waiting(&sys, 0, 0).unwrap();
        let opt = optimize_thresholds(&spec, 0, 1).unwrap();
        assert!((opt.value - fcfs).abs() < 1e-12);
        assert!((overall_mean_wait(&spec, 0).unwrap() - fcfs).abs() < 1e-12);
    }

    #[test]
    fn refinement_never_hurts_and_sjf_bounds() {
        for d in [Discipline::Gated, Discipline::Exhaustive, Discipline::GloballyGated] {
            let spec = presets::two_queue(d);
            let fcfs = overall_mean_wait(&spec, 0).unwrap();
            let k2 = optimize_thresholds(&spec, 0, 2).unwrap();
            let k3 = optimize_thresholds(&spec, 0, 3).unwrap();
            let sjf = sjf_limit(&spec, 0, 200).unwrap();
            assert!(k2.value < fcfs, "{d:?}");
            assert!(k3.value <= k2.value + VALUE_TOL, "{d:?}");
            assert!(sjf <= k3.value, "{d:?}");
            assert_eq!(k3.thresholds.len(), 2);
        }
    }

    #[test]
    fn deterministic_service_puts_everyone_in_one_band() {
        let mut spec = presets::two_queue(Discipline::Gated);
        spec.queues[0].classes[0].service = DistributionSpec::deterministic(1.0);
        let split = apply_thresholds(&spec, 0, &[0.5, 2.0]).unwrap();
        let rates: Vec<f64> = split.queues[0].classes.iter().map(|c| c.rate).collect();
        assert_eq!(rates, vec![0.0, 0.6, 0.0]);
        let a = overall_mean_wait(&spec, 0).unwrap();
        let b = overall_mean_wait(&split, 0).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn sjf_needs_enough_levels() {
        let spec = presets::two_queue(Discipline::Gated);
        assert!(sjf_limit(&spec, 0, 10).is_err());
    }
}
