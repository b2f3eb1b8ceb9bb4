//! Discrete-event simulation of the polling model.
//!
//! The engine follows the operational rules literally: gates are snapshots of
//! the arrival sequence counter, exhaustive queues are emptied, switch-overs
//! keep running while the system is empty, and preempted jobs resume with
//! their remaining work. Statistics are gathered by an [`Observer`], so the
//! same engine drives estimates, waiting-time samples and scripted traces.

use std::collections::{BTreeMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::distributions::DistributionSpec;
use crate::error::{PollError, Result};
use crate::model::{Discipline, Preemption, SystemSpec};

/// Longest queue length tracked by the time-average histogram; longer
/// states are lumped into the last bin.
pub const HIST_LEN: usize = 256;

/// Simulation run lengths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimConfig {
    pub seed: u64,
    pub replications: usize,
    pub cycles: usize,
    pub warmup: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 1,
            replications: 30,
            cycles: 20_000,
            warmup: 1_000,
        }
    }
}

/// Replication mean and 95% confidence half-width of one quantity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimEstimate {
    pub estimate: f64,
    pub half_width: f64,
    pub replications: usize,
    pub cycles: usize,
    pub warmup: usize,
}

impl SimEstimate {
    /// Whether `value` lies within `k` half-widths of the estimate.
    pub fn covers(&self, value: f64, k: f64) -> bool {
        (value - self.estimate).abs() <= k * self.half_width
    }
}

/// Output of [`simulate`].
#[derive(Debug, Clone, Serialize)]
pub struct SimReport {
    /// Keyed by `W[i,k]`, `W[i]`, `C[j]`, `C2[j]`, `Cstar[j]`, `Cstar2[j]`,
    /// `I[i]`, `L[i,k]` and `P_empty_cycle_start`, indices starting at 1.
    pub estimates: BTreeMap<String, SimEstimate>,
    /// Time-average distribution of the number of customers of each class,
    /// averaged over replications: `queue_length_pmf[i][k][n]`.
    pub queue_length_pmf: Vec<Vec<Vec<f64>>>,
    /// Set when the offered load is at least one.
    pub unstable: bool,
}

impl SimReport {
    pub fn get(&self, key: &str) -> Option<&SimEstimate> {
        self.estimates.get(key)
    }
}

#[derive(Debug, Clone, Copy)]
struct Job {
    seq: u64,
    arrival: f64,
    remaining: f64,
    started: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Phase {
    Serving { queue: usize, class: usize, end: f64 },
    Switching { from: usize, end: f64 },
    /// Only used when every switch-over is identically zero and the system
    /// is empty; the server waits at `queue` for the next arrival.
    Idle { queue: usize },
}

/// Callbacks from the engine. All times are absolute.
pub(crate) trait Observer {
    /// Time advances from `from` to `to` with `counts` customers present.
    fn advance(&mut self, _from: f64, _to: f64, _counts: &[Vec<usize>]) {}
    fn service_start(&mut self, _queue: usize, _class: usize, _seq: u64, _arrival: f64, _t: f64) {}
    fn departure(&mut self, _queue: usize, _class: usize, _seq: u64, _arrival: f64, _t: f64) {}
    fn visit_begin(&mut self, _queue: usize, _t: f64, _system_empty: bool) {}
    fn visit_end(&mut self, _queue: usize, _t: f64) {}
    fn done(&self) -> bool;
}

/// Where arrivals come from.
enum Arrivals {
    Poisson { next: Vec<Vec<f64>> },
    Script { jobs: VecDeque<ScriptedJob> },
}

/// A predetermined arrival used by [`run_script`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScriptedJob {
    pub time: f64,
    pub queue: usize,
    pub class: usize,
    pub service: f64,
}

/// One customer's history in a scripted run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JobRecord {
    pub queue: usize,
    pub class: usize,
    pub arrival: f64,
    pub start: f64,
    pub departure: f64,
}

struct Engine<'a, R: Rng> {
    spec: &'a SystemSpec,
    rng: R,
    arrivals: Arrivals,
    queues: Vec<Vec<VecDeque<Job>>>,
    counts: Vec<Vec<usize>>,
    total: usize,
    gate: Vec<u64>,
    seq: u64,
    now: f64,
    phase: Phase,
    current: Option<Job>,
    zero_switch: bool,
}

impl<'a, R: Rng> Engine<'a, R> {
    fn new(spec: &'a SystemSpec, mut rng: R, script: Option<Vec<ScriptedJob>>) -> Self {
        let arrivals = match script {
            Some(mut jobs) => {
                jobs.sort_by(|a, b| a.time.total_cmp(&b.time));
                Arrivals::Script { jobs: jobs.into() }
            }
            None => {
                let next = spec
                    .queues
                    .iter()
                    .map(|q| {
                        q.classes
                            .iter()
                            .map(|c| exp_gap(&mut rng, c.rate))
                            .collect()
                    })
                    .collect();
                Arrivals::Poisson { next }
            }
        };
        let zero_switch = spec
            .queues
            .iter()
            .all(|q| matches!(q.switch_over, DistributionSpec::Deterministic { value } if value == 0.0));
        let n = spec.queues.len();
        let mut engine = Engine {
            spec,
            rng,
            arrivals,
            queues: spec
                .queues
                .iter()
                .map(|q| vec![VecDeque::new(); q.classes.len()])
                .collect(),
            counts: spec.queues.iter().map(|q| vec![0; q.classes.len()]).collect(),
            total: 0,
            gate: vec![0; n],
            seq: 0,
            now: 0.0,
            phase: Phase::Idle { queue: n - 1 },
            current: None,
            zero_switch,
        };
        // The server starts by switching into queue 1.
        let s = engine.spec.queues[n - 1].switch_over.sample(&mut engine.rng);
        engine.phase = Phase::Switching { from: n - 1, end: s };
        engine
    }

    fn next_arrival(&self) -> Option<(f64, usize, usize)> {
        match &self.arrivals {
            Arrivals::Poisson { next } => {
                let mut best: Option<(f64, usize, usize)> = None;
                for (i, row) in next.iter().enumerate() {
                    for (k, &t) in row.iter().enumerate() {
                        if best.is_none_or(|(b, _, _)| t < b) {
                            best = Some((t, i, k));
                        }
                    }
                }
                best.filter(|b| b.0.is_finite())
            }
            Arrivals::Script { jobs } => jobs.front().map(|j| (j.time, j.queue, j.class)),
        }
    }

    fn run<O: Observer>(&mut self, obs: &mut O, horizon: f64) {
        while !obs.done() {
            let arrival = self.next_arrival();
            let server = match self.phase {
                Phase::Serving { end, .. } | Phase::Switching { end, .. } => Some(end),
                Phase::Idle { .. } => None,
            };
            let take_arrival = match (arrival, server) {
                (Some((ta, _, _)), Some(ts)) => ta <= ts,
                (Some(_), None) => true,
                (None, Some(_)) => false,
                (None, None) => return,
            };
            let t = if take_arrival { arrival.unwrap().0 } else { server.unwrap() };
            if t > horizon {
                return;
            }
            obs.advance(self.now, t, &self.counts);
            self.now = t;
            if take_arrival {
                let (_, i, k) = arrival.unwrap();
                self.arrive(obs, i, k);
            } else {
                self.server_event(obs);
            }
        }
    }

    fn arrive<O: Observer>(&mut self, obs: &mut O, i: usize, k: usize) {
        let service = match &mut self.arrivals {
            Arrivals::Poisson { next } => {
                let rate = self.spec.queues[i].classes[k].rate;
                next[i][k] = self.now + exp_gap(&mut self.rng, rate);
                self.spec.queues[i].classes[k].service.sample(&mut self.rng)
            }
            Arrivals::Script { jobs } => jobs.pop_front().map(|j| j.service).unwrap_or(0.0),
        };
        self.seq += 1;
        self.queues[i][k].push_back(Job {
            seq: self.seq,
            arrival: self.now,
            remaining: service,
            started: false,
        });
        self.counts[i][k] += 1;
        self.total += 1;

        match self.phase {
            Phase::Serving { queue, class, end }
                if queue == i
                    && k < class
                    && self.spec.queues[i].preemption == Preemption::PreemptiveResume =>
            {
                let mut job = self.current.take().expect("serving without a job");
                job.remaining = (end - self.now).max(0.0);
                self.queues[queue][class].push_front(job);
                let started = self.start_next(obs, queue);
                debug_assert!(started);
            }
            Phase::Idle { queue } => {
                self.phase = Phase::Switching { from: queue, end: self.now };
            }
            _ => {}
        }
    }

    fn server_event<O: Observer>(&mut self, obs: &mut O) {
        match self.phase {
            Phase::Serving { queue, class, .. } => {
                let job = self.current.take().expect("serving without a job");
                self.counts[queue][class] -= 1;
                self.total -= 1;
                obs.departure(queue, class, job.seq, job.arrival, self.now);
                if !self.start_next(obs, queue) {
                    self.end_visit(obs, queue);
                }
            }
            Phase::Switching { from, .. } => {
                let j = (from + 1) % self.spec.queues.len();
                obs.visit_begin(j, self.now, self.total == 0);
                match self.spec.queues[j].discipline {
                    Discipline::Gated => self.gate[j] = self.seq,
                    Discipline::Exhaustive => self.gate[j] = u64::MAX,
                    Discipline::GloballyGated => {
                        if j == 0 {
                            self.gate.iter_mut().for_each(|g| *g = self.seq);
                        }
                    }
                }
                if !self.start_next(obs, j) {
                    self.end_visit(obs, j);
                }
            }
            Phase::Idle { .. } => unreachable!("idle server has no pending event"),
        }
    }

    fn end_visit<O: Observer>(&mut self, obs: &mut O, i: usize) {
        obs.visit_end(i, self.now);
        if self.zero_switch && self.total == 0 {
            self.phase = Phase::Idle { queue: i };
            return;
        }
        let s = self.spec.queues[i].switch_over.sample(&mut self.rng);
        self.phase = Phase::Switching { from: i, end: self.now + s };
    }

    /// Starts the highest-priority eligible job at queue `i`, if any.
    fn start_next<O: Observer>(&mut self, obs: &mut O, i: usize) -> bool {
        let gate = self.gate[i];
        for k in 0..self.queues[i].len() {
            let eligible = self.queues[i][k].front().is_some_and(|j| j.seq <= gate);
            if eligible {
                let mut job = self.queues[i][k].pop_front().unwrap();
                if !job.started {
                    job.started = true;
                    obs.service_start(i, k, job.seq, job.arrival, self.now);
                }
                self.phase = Phase::Serving {
                    queue: i,
                    class: k,
                    end: self.now + job.remaining,
                };
                self.current = Some(job);
                return true;
            }
        }
        false
    }
}

fn exp_gap<R: Rng>(rng: &mut R, rate: f64) -> f64 {
    if rate > 0.0 {
        let e: f64 = Exp1.sample(rng);
        e / rate
    } else {
        f64::INFINITY
    }
}

fn replication_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Default)]
struct Running {
    sum: f64,
    sq: f64,
    n: u64,
}

impl Running {
    fn push(&mut self, x: f64) {
        self.sum += x;
        self.sq += x * x;
        self.n += 1;
    }
    fn mean(&self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            self.sum / self.n as f64
        }
    }
    fn mean_sq(&self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            self.sq / self.n as f64
        }
    }
}

/// Per-replication statistics over the measurement window.
struct Stats {
    warmup: usize,
    cycles: usize,
    cycle_starts: usize,
    measuring: bool,
    finished: bool,
    window_start: f64,
    window_end: f64,
    wait: Vec<Vec<Running>>,
    cycle: Vec<Running>,
    cycle_star: Vec<Running>,
    intervisit: Vec<Running>,
    last_begin: Vec<Option<f64>>,
    last_end: Vec<Option<f64>>,
    area: Vec<Vec<f64>>,
    hist: Vec<Vec<Vec<f64>>>,
    empty_starts: usize,
    counted_starts: usize,
}

impl Stats {
    fn new(spec: &SystemSpec, warmup: usize, cycles: usize) -> Self {
        let n = spec.queues.len();
        let per_class = |v| -> Vec<Vec<_>> {
            spec.queues.iter().map(|q| vec![v; q.classes.len()]).collect()
        };
        Stats {
            warmup,
            cycles,
            cycle_starts: 0,
            measuring: false,
            finished: false,
            window_start: 0.0,
            window_end: 0.0,
            wait: spec
                .queues
                .iter()
                .map(|q| vec![Running::default(); q.classes.len()])
                .collect(),
            cycle: vec![Running::default(); n],
            cycle_star: vec![Running::default(); n],
            intervisit: vec![Running::default(); n],
            last_begin: vec![None; n],
            last_end: vec![None; n],
            area: per_class(0.0),
            hist: spec
                .queues
                .iter()
                .map(|q| vec![vec![0.0; HIST_LEN]; q.classes.len()])
                .collect(),
            empty_starts: 0,
            counted_starts: 0,
        }
    }
}

impl Observer for Stats {
    fn advance(&mut self, from: f64, to: f64, counts: &[Vec<usize>]) {
        if !self.measuring {
            return;
        }
        let dt = to - from;
        for (i, row) in counts.iter().enumerate() {
            for (k, &c) in row.iter().enumerate() {
                self.area[i][k] += dt * c as f64;
                self.hist[i][k][c.min(HIST_LEN - 1)] += dt;
            }
        }
    }

    fn service_start(&mut self, queue: usize, class: usize, _seq: u64, arrival: f64, t: f64) {
        if self.measuring && arrival >= self.window_start {
            self.wait[queue][class].push(t - arrival);
        }
    }

    fn visit_begin(&mut self, queue: usize, t: f64, system_empty: bool) {
        if queue == 0 {
            self.cycle_starts += 1;
            if self.cycle_starts == self.warmup + 1 {
                self.measuring = true;
                self.window_start = t;
            } else if self.cycle_starts == self.warmup + self.cycles + 1 {
                self.measuring = false;
                self.finished = true;
                self.window_end = t;
            }
            if self.measuring {
                self.counted_starts += 1;
                if system_empty {
                    self.empty_starts += 1;
                }
            }
        }
        if !self.measuring && !self.finished {
            return;
        }
        if let Some(prev) = self.last_begin[queue] {
            self.cycle[queue].push(t - prev);
        }
        if let Some(prev) = self.last_end[queue] {
            self.intervisit[queue].push(t - prev);
        }
        self.last_begin[queue] = Some(t);
    }

    fn visit_end(&mut self, queue: usize, t: f64) {
        if !self.measuring {
            return;
        }
        if let Some(prev) = self.last_end[queue] {
            self.cycle_star[queue].push(t - prev);
        }
        self.last_end[queue] = Some(t);
    }

    fn done(&self) -> bool {
        self.finished
    }
}

struct ReplicationResult {
    values: BTreeMap<String, f64>,
    pmf: Vec<Vec<Vec<f64>>>,
}

fn run_replication(spec: &SystemSpec, cfg: &SimConfig, rep: usize) -> ReplicationResult {
    let rng = replication_rng(cfg.seed, rep as u64);
    let mut engine = Engine::new(spec, rng, None);
    let mut stats = Stats::new(spec, cfg.warmup, cfg.cycles);
    engine.run(&mut stats, f64::INFINITY);

    let duration = stats.window_end - stats.window_start;
    let mut values = BTreeMap::new();
    for (i, q) in spec.queues.iter().enumerate() {
        let (mut sum, mut n) = (0.0, 0u64);
        for k in 0..q.classes.len() {
            let w = &stats.wait[i][k];
            values.insert(format!("W[{},{}]", i + 1, k + 1), w.mean());
            values.insert(format!("L[{},{}]", i + 1, k + 1), stats.area[i][k] / duration);
            sum += w.sum;
            n += w.n;
        }
        values.insert(format!("W[{}]", i + 1), if n == 0 { f64::NAN } else { sum / n as f64 });
        values.insert(format!("C[{}]", i + 1), stats.cycle[i].mean());
        values.insert(format!("C2[{}]", i + 1), stats.cycle[i].mean_sq());
        values.insert(format!("Cstar[{}]", i + 1), stats.cycle_star[i].mean());
        values.insert(format!("Cstar2[{}]", i + 1), stats.cycle_star[i].mean_sq());
        values.insert(format!("I[{}]", i + 1), stats.intervisit[i].mean());
    }
    values.insert(
        "P_empty_cycle_start".into(),
        stats.empty_starts as f64 / stats.counted_starts.max(1) as f64,
    );
    let pmf = stats
        .hist
        .iter()
        .map(|row| {
            row.iter()
                .map(|h| h.iter().map(|x| x / duration).collect())
                .collect()
        })
        .collect();
    ReplicationResult { values, pmf }
}

/// Student-t 97.5% quantile with `df` degrees of freedom.
fn t_quantile(df: usize) -> f64 {
    StudentsT::new(0.0, 1.0, df as f64)
        .map(|t| t.inverse_cdf(0.975))
        .unwrap_or(f64::NAN)
}

/// Runs independent replications and summarises them.
///
/// Replication `r` draws from a ChaCha8 generator seeded with `cfg.seed` on
/// stream `r`, so results do not depend on the thread count.
pub fn simulate(spec: &SystemSpec, cfg: &SimConfig) -> Result<SimReport> {
    spec.check_shape()?;
    if cfg.replications < 10 {
        return Err(PollError::Config(format!(
            "at least 10 replications are needed, got {}",
            cfg.replications
        )));
    }
    if cfg.cycles == 0 {
        return Err(PollError::Config("cycles per replication must be positive".into()));
    }
    let rho: f64 = spec
        .queues
        .iter()
        .flat_map(|q| q.classes.iter().map(|c| c.rate * c.service.mean()))
        .sum();

    let reps: Vec<ReplicationResult> = (0..cfg.replications)
        .into_par_iter()
        .map(|r| run_replication(spec, cfg, r))
        .collect();

    let r = reps.len() as f64;
    let tq = t_quantile(reps.len() - 1);
    let mut estimates = BTreeMap::new();
    for key in reps[0].values.keys() {
        let xs: Vec<f64> = reps.iter().map(|rep| rep.values[key]).collect();
        let mean = xs.iter().sum::<f64>() / r;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (r - 1.0);
        estimates.insert(
            key.clone(),
            SimEstimate {
                estimate: mean,
                half_width: tq * (var / r).sqrt(),
                replications: reps.len(),
                cycles: cfg.cycles,
                warmup: cfg.warmup,
            },
        );
    }

    let mut pmf = reps[0].pmf.clone();
    for rep in &reps[1..] {
        for (acc, row) in pmf.iter_mut().zip(&rep.pmf) {
            for (a, h) in acc.iter_mut().zip(row) {
                for (x, y) in a.iter_mut().zip(h) {
                    *x += y;
                }
            }
        }
    }
    pmf.iter_mut()
        .flatten()
        .flatten()
        .for_each(|x| *x /= r);

    Ok(SimReport {
        estimates,
        queue_length_pmf: pmf,
        unstable: rho >= 1.0,
    })
}

/// Collects every `stride[i][k]`-th waiting time per class.
struct Sampler {
    warmup: usize,
    cycle_starts: usize,
    wanted: Vec<(usize, usize)>,
    stride: Vec<Vec<u64>>,
    seen: Vec<Vec<u64>>,
    target: usize,
    samples: Vec<Vec<Vec<f64>>>,
}

impl Observer for Sampler {
    fn service_start(&mut self, queue: usize, class: usize, _seq: u64, arrival: f64, t: f64) {
        if self.cycle_starts <= self.warmup || self.samples[queue][class].len() >= self.target {
            return;
        }
        self.seen[queue][class] += 1;
        if self.seen[queue][class] % self.stride[queue][class] == 0 {
            self.samples[queue][class].push(t - arrival);
        }
    }

    fn visit_begin(&mut self, queue: usize, _t: f64, _empty: bool) {
        if queue == 0 {
            self.cycle_starts += 1;
        }
    }

    fn done(&self) -> bool {
        self.wanted
            .iter()
            .all(|&(i, k)| self.samples[i][k].len() >= self.target)
    }
}

/// Number of independent streams used by [`waiting_samples_for`].
const SAMPLE_STREAMS: usize = 8;

/// Waiting times of the listed classes, `n` per class.
///
/// Consecutive samples of a class are separated by a stride of roughly five
/// cycles' worth of that class's arrivals, so they are close to independent.
/// Work is split over a fixed number of generator streams.
pub fn waiting_samples_for(
    spec: &SystemSpec,
    seed: u64,
    n: usize,
    classes: &[(usize, usize)],
) -> Result<Vec<((usize, usize), f64)>> {
    spec.check_shape()?;
    for &(i, k) in classes {
        if i >= spec.queues.len() || k >= spec.queues[i].classes.len() {
            return Err(PollError::BadShape(format!("no class ({}, {})", i + 1, k + 1)));
        }
        if spec.queues[i].classes[k].rate <= 0.0 {
            return Err(PollError::BadShape(format!(
                "class ({}, {}) has no arrivals to sample",
                i + 1,
                k + 1
            )));
        }
    }
    let mean_cycle = {
        let s: f64 = spec.queues.iter().map(|q| q.switch_over.mean()).sum();
        let rho: f64 = spec
            .queues
            .iter()
            .flat_map(|q| q.classes.iter().map(|c| c.rate * c.service.mean()))
            .sum();
        if rho < 1.0 && s > 0.0 {
            s / (1.0 - rho)
        } else {
            1.0
        }
    };
    let stride: Vec<Vec<u64>> = spec
        .queues
        .iter()
        .map(|q| {
            q.classes
                .iter()
                .map(|c| ((5.0 * c.rate * mean_cycle).ceil() as u64).max(1))
                .collect()
        })
        .collect();
    let per_stream = n.div_ceil(SAMPLE_STREAMS);
    let parts: Vec<Vec<Vec<Vec<f64>>>> = (0..SAMPLE_STREAMS)
        .into_par_iter()
        .map(|s| {
            let mut sampler = Sampler {
                warmup: 1_000,
                cycle_starts: 0,
                wanted: classes.to_vec(),
                stride: stride.clone(),
                seen: spec.queues.iter().map(|q| vec![0; q.classes.len()]).collect(),
                target: per_stream,
                samples: spec.queues.iter().map(|q| vec![Vec::new(); q.classes.len()]).collect(),
            };
            let mut engine = Engine::new(spec, replication_rng(seed, s as u64), None);
            engine.run(&mut sampler, f64::INFINITY);
            sampler.samples
        })
        .collect();
    let mut out = Vec::with_capacity(n * classes.len());
    for &(i, k) in classes {
        let merged = parts.iter().flat_map(|p| p[i][k].iter().copied()).take(n);
        out.extend(merged.map(|w| ((i, k), w)));
    }
    Ok(out)
}

/// Waiting times for every class, `n` per class.
pub fn waiting_samples(spec: &SystemSpec, seed: u64, n: usize) -> Result<Vec<((usize, usize), f64)>> {
    let classes: Vec<(usize, usize)> = spec
        .queues
        .iter()
        .enumerate()
        .flat_map(|(i, q)| (0..q.classes.len()).map(move |k| (i, k)))
        .filter(|&(i, k)| spec.queues[i].classes[k].rate > 0.0)
        .collect();
    waiting_samples_for(spec, seed, n, &classes)
}

#[derive(Default)]
struct Recorder {
    starts: BTreeMap<u64, f64>,
    records: Vec<(u64, JobRecord)>,
}

impl Observer for Recorder {
    fn service_start(&mut self, _queue: usize, _class: usize, seq: u64, _arrival: f64, t: f64) {
        self.starts.insert(seq, t);
    }
    fn departure(&mut self, queue: usize, class: usize, seq: u64, arrival: f64, t: f64) {
        let start = self.starts.remove(&seq).unwrap_or(f64::NAN);
        self.records.push((
            seq,
            JobRecord {
                queue,
                class,
                arrival,
                start,
                departure: t,
            },
        ));
    }
    fn done(&self) -> bool {
        false
    }
}

/// Replays a fixed arrival script until `horizon` and returns the served
/// customers in arrival order. Switch-overs are still drawn from `spec`
/// using a generator seeded with `seed`.
pub fn run_script(
    spec: &SystemSpec,
    script: &[ScriptedJob],
    horizon: f64,
    seed: u64,
) -> Result<Vec<JobRecord>> {
    spec.check_shape()?;
    for j in script {
        if j.queue >= spec.queues.len() || j.class >= spec.queues[j.queue].classes.len() {
            return Err(PollError::BadShape(format!(
                "script refers to missing class ({}, {})",
                j.queue + 1,
                j.class + 1
            )));
        }
    }
    let mut engine = Engine::new(spec, replication_rng(seed, 0), Some(script.to_vec()));
    let mut rec = Recorder::default();
    engine.run(&mut rec, horizon);
    rec.records.sort_by_key(|r| r.0);
    Ok(rec.records.into_iter().map(|r| r.1).collect())
}
