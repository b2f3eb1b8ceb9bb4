//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line
//! to stderr (bypassing output capture) before asserting.

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pollcalc_core::cycletime::{cycle_lst_begin, Cycles};
use pollcalc_core::numerics::{derivative_at_zero, waiting_cdf, cdf_grid, EulerParams, TransformFn};
use pollcalc_core::optimizer::{apply_thresholds, optimize_thresholds, overall_mean_wait, sjf_limit};
use pollcalc_core::simulator::{simulate, waiting_samples_for, SimConfig};
use pollcalc_core::waiting::{
    all_mean_waits, pseudo_conservation_residual, waiting_lst_exhaustive_priority,
    waiting_lst_gated_priority, waiting_lst_nonpriority, ClassView, Formula, Waiting, WaitingLst,
};
use pollcalc_core::{
    presets, AnalysisReport, Discipline, DistributionSpec, Preemption, PriorityClassSpec, QueueSpec,
    System, SystemSpec,
};

const DISCIPLINES: [Discipline; 3] = [Discipline::Gated, Discipline::Exhaustive, Discipline::GloballyGated];

fn report(n: u32, title: &str, pass: bool, detail: &str, started: Instant) {
    let line = format!(
        "criterion {n} [{}] {title}: {detail} ({:.1}s)\n",
        if pass { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64()
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "criterion {n} failed: {detail}");
}

fn c(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

fn s_grid() -> Vec<f64> {
    (1..=50).map(|j| j as f64 / 10.0).collect()
}

#[test]
fn criterion_1_mean_cycle_time() {
    let t0 = Instant::now();
    let mut worst_mean: f64 = 0.0;
    let mut worst_deriv: f64 = 0.0;
    for d in DISCIPLINES {
        let spec = presets::two_queue(d);
        // E(S) / (1 - rho) from the raw inputs.
        let es: f64 = spec.queues.iter().map(|q| q.switch_over.mean()).sum();
        let rho: f64 = spec.queues.iter().map(|q| q.classes[0].rate * q.classes[0].service.mean()).sum();
        let oracle = es / (1.0 - rho);
        worst_mean = worst_mean.max((oracle - 10.0).abs());
        let sys = Arc::new(System::new(spec).unwrap());
        worst_mean = worst_mean.max((sys.mean_cycle() - 10.0).abs());
        let starts = if d == Discipline::GloballyGated { 1 } else { sys.n() };
        for j in 0..starts {
            let s = sys.clone();
            let f = TransformFn::lst(10.0, move |w| cycle_lst_begin(&s, j, w));
            let m = derivative_at_zero(&f, 1).unwrap();
            worst_deriv = worst_deriv.max((m - 10.0).abs());
        }
    }
    let pass = worst_mean < 1e-12 && worst_deriv < 1e-7;
    report(
        1,
        "mean cycle time",
        pass,
        &format!("|E(C) - 10| = {worst_mean:.1e}, max |-gamma_j'(0) - 10| = {worst_deriv:.1e}"),
        t0,
    );
}

#[test]
fn criterion_2_sjf_limits() {
    let t0 = Instant::now();
    let targets = [(Discipline::Gated, 10.38), (Discipline::Exhaustive, 3.53), (Discipline::GloballyGated, 9.75)];
    let mut pass = true;
    let mut parts = Vec::new();
    for (d, target) in targets {
        let v = sjf_limit(&presets::two_queue(d), 0, 200).unwrap();
        pass &= (v - target).abs() <= 0.05;
        parts.push(format!("{} {v:.4} (reference {target})", d.name()));
    }
    report(2, "SJF limits", pass, &parts.join(", "), t0);
}

#[test]
fn criterion_3_symmetric_closed_forms() {
    let t0 = Instant::now();
    let mut worst: f64 = 0.0;
    let mut pass = true;
    for d in [Discipline::Gated, Discipline::Exhaustive] {
        let mut seq = Vec::new();
        for n in [2usize, 4, 8, 16] {
            let sys = System::new(presets::symmetric(n, d, 0.8, 1.0, 2.0)).unwrap();
            let w = all_mean_waits(&sys).unwrap();
            let sign = if d == Discipline::Gated { 1.0 } else { -1.0 };
            let oracle = 4.0 + 1.0 + (1.0 + sign / n as f64) * 4.0;
            for row in &w {
                worst = worst.max((row[0] - oracle).abs());
            }
            seq.push(w[0][0]);
        }
        let monotone = if d == Discipline::Gated {
            seq.windows(2).all(|p| p[1] < p[0])
        } else {
            seq.windows(2).all(|p| p[1] > p[0])
        };
        let towards_nine = seq.windows(2).all(|p| (p[1] - 9.0).abs() < (p[0] - 9.0).abs());
        pass &= monotone && towards_nine;
    }
    pass &= worst < 1e-6;
    report(3, "symmetric closed forms", pass, &format!("max deviation {worst:.1e}, trends ok = {pass}"), t0);
}

fn random_distribution(rng: &mut ChaCha8Rng, mean: f64) -> DistributionSpec {
    match rng.random_range(0..4) {
        0 => DistributionSpec::exponential(1.0 / mean),
        1 => {
            let shape = rng.random_range(2..=4u32);
            DistributionSpec::Erlang { shape, rate: shape as f64 / mean }
        }
        2 => DistributionSpec::deterministic(mean),
        _ => {
            let p: f64 = rng.random_range(0.1..0.9);
            let r1 = rng.random_range(0.5..4.0) / mean;
            // Second rate chosen so that the mean is preserved.
            let rest = mean - p / r1;
            if rest <= 0.0 {
                return DistributionSpec::exponential(1.0 / mean);
            }
            DistributionSpec::HyperExponential { weights: vec![p, 1.0 - p], rates: vec![r1, (1.0 - p) / rest] }
        }
    }
}

fn random_spec(rng: &mut ChaCha8Rng, discipline: Discipline, preemptive: bool) -> SystemSpec {
    let n = rng.random_range(1..=4usize);
    let rho_total: f64 = rng.random_range(0.05..0.9);
    let mut queues = Vec::with_capacity(n);
    let mut weights = Vec::new();
    for _ in 0..n {
        let k = rng.random_range(1..=3usize);
        let mut classes = Vec::with_capacity(k);
        for _ in 0..k {
            let mean = rng.random_range(0.2..2.0);
            classes.push(PriorityClassSpec { rate: 1.0, service: random_distribution(rng, mean) });
            weights.push(rng.random_range(0.05..1.0));
        }
        let preemption = if preemptive && discipline == Discipline::Exhaustive && rng.random_bool(0.7) {
            Preemption::PreemptiveResume
        } else {
            Preemption::Nonpreemptive
        };
        let s_mean = rng.random_range(0.1..2.0);
        queues.push(QueueSpec { discipline, preemption, switch_over: random_distribution(rng, s_mean), classes });
    }
    // Scale rates so the loads follow `weights` and sum to `rho_total`.
    let wsum: f64 = weights.iter().sum();
    let mut j = 0;
    for q in &mut queues {
        for c in &mut q.classes {
            c.rate = rho_total * weights[j] / wsum / c.service.mean();
            j += 1;
        }
    }
    SystemSpec { queues }
}

#[test]
fn criterion_4_pseudo_conservation() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    let mut count = 0;
    let cases = [
        (Discipline::Gated, false, "gated"),
        (Discipline::Exhaustive, false, "exhaustive"),
        (Discipline::Exhaustive, true, "exhaustive-preemptive"),
        (Discipline::GloballyGated, false, "globally-gated"),
    ];
    let mut parts = Vec::new();
    for (d, pre, name) in cases {
        let mut local: f64 = 0.0;
        for _ in 0..50 {
            let spec = random_spec(&mut rng, d, pre);
            let sys = System::new(spec).unwrap();
            let r = pseudo_conservation_residual(&sys).unwrap();
            local = local.max(r.abs());
            count += 1;
        }
        parts.push(format!("{name} {local:.1e}"));
        worst = worst.max(local);
    }
    report(
        4,
        "pseudo-conservation",
        worst < 1e-7,
        &format!("{count} random systems, max |residual|: {}", parts.join(", ")),
        t0,
    );
}

#[test]
fn criterion_5_analytic_vs_simulation() {
    let t0 = Instant::now();
    let cfg = SimConfig { seed: 20240501, replications: 30, cycles: 20_000, warmup: 1_000 };
    let mut checked = 0;
    let mut failures = Vec::new();
    for d in DISCIPLINES {
        for k in 1..=3usize {
            let base = presets::two_queue(d);
            let opt = optimize_thresholds(&base, 0, k).unwrap();
            let spec = apply_thresholds(&base, 0, &opt.thresholds).unwrap();
            let sys = System::new(spec.clone()).unwrap();
            let analytic = AnalysisReport::build(&sys).unwrap();
            let sim = simulate(&spec, &cfg).unwrap();
            let mut keys: Vec<String> = (1..=k).map(|c| format!("W[1,{c}]")).collect();
            keys.push("W[2,1]".into());
            keys.push("C2[1]".into());
            if d != Discipline::GloballyGated {
                keys.push("C2[2]".into());
            }
            for key in keys {
                let a = analytic.get(&key).unwrap();
                let e = sim.get(&key).unwrap();
                checked += 1;
                if !e.covers(a, 3.0) {
                    failures.push(format!(
                        "{} K={k} {key}: analytic {a:.4}, sim {:.4} +- {:.4}",
                        d.name(),
                        e.estimate,
                        e.half_width
                    ));
                }
            }
        }
    }
    let detail = if failures.is_empty() {
        format!("{checked} quantities within 3 half-widths")
    } else {
        failures.join("; ")
    };
    report(5, "analytic vs simulation", failures.is_empty(), &detail, t0);
}

/// One-sample Kolmogorov-Smirnov distance against a CDF.
fn ks_distance(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(j, &x)| {
            let f = cdf(x);
            (f - j as f64 / n).abs().max(((j + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn criterion_6_distribution_agreement() {
    let t0 = Instant::now();
    let n = 100_000;
    let critical = 1.628 / (n as f64).sqrt();
    let mut pass = true;
    let mut parts = Vec::new();
    // Gated: low class of a two-level split; exhaustive: high class.
    for (d, class) in [(Discipline::Gated, 1usize), (Discipline::Exhaustive, 0usize)] {
        let base = presets::two_queue(d);
        let opt = optimize_thresholds(&base, 0, 2).unwrap();
        let spec = apply_thresholds(&base, 0, &opt.thresholds).unwrap();
        let sys = Arc::new(System::new(spec.clone()).unwrap());
        let lst = WaitingLst::new(&sys, 0, class).unwrap();
        let grid = cdf_grid(lst.mean(), lst.second_moment(), 400);
        // Near a band threshold the density has a kink and the series error
        // is around 1e-6; the comparison only needs the CDF to about 1e-3.
        let params = EulerParams { tolerance: 1e-5, ..EulerParams::default() };
        let inverted = waiting_cdf(sys.clone(), 0, class, &grid, &params).unwrap();
        let mut waits: Vec<f64> = waiting_samples_for(&spec, 77, n, &[(0, class)])
            .unwrap()
            .into_iter()
            .map(|(_, w)| w)
            .collect();
        let dist = ks_distance(&mut waits, |x| inverted.interpolate(x).clamp(0.0, 1.0));
        pass &= dist < critical && waits.len() == n;
        parts.push(format!(
            "{} class {}: D = {dist:.5}, inversion error {:.1e}",
            d.name(),
            class + 1,
            inverted.max_error()
        ));
    }
    report(
        6,
        "waiting-time distribution vs simulation",
        pass,
        &format!("{} (1% critical value {critical:.5})", parts.join(", ")),
        t0,
    );
}

#[test]
fn criterion_7_transform_identities() {
    let t0 = Instant::now();
    let mut worst = [0.0f64; 4];

    // Remark identity at every exhaustive queue and class.
    let base = presets::two_queue(Discipline::Exhaustive);
    let spec = apply_thresholds(&base, 0, &[0.6, 1.6]).unwrap();
    let sys = System::new(spec).unwrap();
    let cy = Cycles::new(&sys);
    for i in 0..sys.n() {
        let collapsed = WaitingLst::with_formula(&sys, ClassView::collapsed(&sys, i), Formula::NonpriorityExhaustive).unwrap();
        for &s in &s_grid() {
            let pi = sys.busy_period(i).busy_period_lst(c(s)).unwrap();
            let lhs = collapsed.eval(c(s) + (1.0 - pi) * sys.lambda(i)).unwrap();
            let rhs = (1.0 - cy.complete(i, c(s)).unwrap()) / (s * sys.mean_cycle());
            worst[0] = worst[0].max((lhs - rhs).norm());
        }
    }

    // Compact and decomposed exhaustive forms, every class.
    let w = Waiting::unchecked(&sys);
    for (i, k) in sys.classes() {
        let v = ClassView::new(&sys, i, k).unwrap();
        for &s in &s_grid() {
            for x in [c(s), Complex64::new(s, 2.0 * s)] {
                let a = w.eval(Formula::ExhaustiveCompact, &v, x).unwrap();
                let b = w.eval(Formula::ExhaustiveDecomposed, &v, x).unwrap();
                worst[1] = worst[1].max((a - b).norm());
            }
        }
    }

    // Intervisit time through the completion cycle and through the visit GF.
    for i in 0..sys.n() {
        for &s in &s_grid() {
            let a = cy.intervisit_via_cycle(i, c(s)).unwrap();
            let b = cy.intervisit_via_visit(i, c(s)).unwrap();
            worst[2] = worst[2].max((a - b).norm());
        }
    }

    // Globally gated cycle: product form against its functional equation.
    let gg = System::new(presets::two_queue(Discipline::GloballyGated)).unwrap();
    let gcy = Cycles::new(&gg);
    for &s in &s_grid() {
        worst[3] = worst[3].max(gcy.gg_functional_residual(c(s)).unwrap());
        worst[3] = worst[3].max(gcy.gg_functional_residual(Complex64::new(s, s)).unwrap());
    }

    let pass = worst.iter().all(|&x| x < 1e-9);
    report(
        7,
        "transform identities",
        pass,
        &format!(
            "residual-cycle identity {:.1e}, exhaustive forms {:.1e}, intervisit routes {:.1e}, globally gated cycle {:.1e}",
            worst[0], worst[1], worst[2], worst[3]
        ),
        t0,
    );
}

#[test]
fn criterion_8_degeneracy_collapses() {
    let t0 = Instant::now();
    let g = System::new(presets::two_queue(Discipline::Gated)).unwrap();
    let e = System::new(presets::two_queue(Discipline::Exhaustive)).unwrap();
    let star = WaitingLst::with_formula(&e, ClassView::collapsed(&e, 0), Formula::NonpriorityCycleStar).unwrap();
    let mut worst_k1: f64 = 0.0;
    for &s in &s_grid() {
        for x in [c(s), Complex64::new(s, 1.5 * s)] {
            for i in 0..2 {
                let a = waiting_lst_gated_priority(&g, i, 0, x).unwrap();
                let b = waiting_lst_nonpriority(&g, i, x).unwrap();
                worst_k1 = worst_k1.max((a - b).norm());
                let a = waiting_lst_exhaustive_priority(&e, i, 0, x, Preemption::Nonpreemptive).unwrap();
                let b = waiting_lst_nonpriority(&e, i, x).unwrap();
                worst_k1 = worst_k1.max((a - b).norm());
            }
            let a = waiting_lst_exhaustive_priority(&e, 0, 0, x, Preemption::Nonpreemptive).unwrap();
            worst_k1 = worst_k1.max((a - star.eval(x).unwrap()).norm());
        }
    }

    // A middle class with idle neighbours: preemption cannot matter.
    let mut spec = presets::two_queue(Discipline::Exhaustive);
    let svc = DistributionSpec::exponential(1.0);
    spec.queues[0].classes = vec![
        PriorityClassSpec { rate: 0.0, service: DistributionSpec::exponential(2.0) },
        PriorityClassSpec { rate: 0.6, service: svc },
        PriorityClassSpec { rate: 0.0, service: DistributionSpec::deterministic(3.0) },
    ];
    let np = System::new(spec.clone()).unwrap();
    spec.queues[0].preemption = Preemption::PreemptiveResume;
    let pr = System::new(spec).unwrap();
    let mut worst_pr: f64 = 0.0;
    for &s in &s_grid() {
        for x in [c(s), Complex64::new(s, s)] {
            let a = waiting_lst_exhaustive_priority(&np, 0, 1, x, Preemption::Nonpreemptive).unwrap();
            let b = waiting_lst_exhaustive_priority(&pr, 0, 1, x, Preemption::PreemptiveResume).unwrap();
            worst_pr = worst_pr.max((a - b).norm());
        }
    }
    let pass = worst_k1 < 1e-10 && worst_pr < 1e-10;
    report(
        8,
        "degeneracy collapses",
        pass,
        &format!("single class vs nonpriority forms {worst_k1:.1e}, preemptive vs nonpreemptive {worst_pr:.1e}"),
        t0,
    );
}

#[test]
fn criterion_9_priority_level_trend() {
    let t0 = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for d in DISCIPLINES {
        let spec = presets::two_queue(d);
        let fcfs = overall_mean_wait(&spec, 0).unwrap();
        let mut values = vec![fcfs];
        for k in 2..=4 {
            values.push(optimize_thresholds(&spec, 0, k).unwrap().value);
        }
        let sjf = sjf_limit(&spec, 0, 200).unwrap();
        let nonincreasing = values.windows(2).all(|p| p[1] <= p[0] + 1e-9);
        let gain = (fcfs - values[3]) / (fcfs - sjf);
        pass &= nonincreasing && gain >= 0.8;
        parts.push(format!(
            "{} K=1..4 [{}] SJF {sjf:.3} gain {:.1}%",
            d.name(),
            values.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join(", "),
            100.0 * gain
        ));
    }
    report(9, "priority-level trend", pass, &parts.join("; "), t0);
}
