//! The `pollcalc` command line: argument model, command execution and CSV
//! output. Every command builds its files in memory and writes them only
//! after all validation has passed.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use pollcalc_core::numerics::{cdf_grid, invert_gf, invert_lst_unchecked, EulerParams, TransformFn};
use pollcalc_core::optimizer::{
    optimize_thresholds, sjf_limit, symmetric_sweep, MIN_SJF_LEVELS,
};
use pollcalc_core::simulator::{simulate, waiting_samples};
use pollcalc_core::waiting::{QueueLengthGf, SharedWaitingLst};
use pollcalc_core::{
    AnalysisReport, Discipline, PollError, SimConfig, SimReport, System, SystemSpec,
};

/// Error estimate above which inversion output is flagged.
pub const INVERSION_TARGET: f64 = 1e-8;
/// Half-widths allowed between analytic and simulated values in `verify`.
pub const VERIFY_HALF_WIDTHS: f64 = 3.0;

#[derive(Parser, Debug)]
#[command(
    name = "pollcalc",
    version,
    about = "Exact analysis and simulation of cyclic polling systems with priority levels"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// System description in JSON.
    #[arg(long)]
    pub config: PathBuf,
    /// Directory for the CSV output; created if missing.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Master seed for simulation.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone)]
pub struct SimArgs {
    /// Independent replications (at least 10).
    #[arg(long, default_value_t = 30)]
    pub reps: usize,
    /// Measured cycles per replication.
    #[arg(long, default_value_t = 20_000)]
    pub cycles: usize,
    /// Cycles discarded at the start of each replication.
    #[arg(long, default_value_t = 1_000)]
    pub warmup: usize,
}

#[derive(Args, Debug, Clone)]
pub struct InvArgs {
    /// Series terms in the waiting-time inversion.
    #[arg(long = "inv-terms", default_value_t = 40)]
    pub terms: usize,
    /// Partial sums entering the Euler average.
    #[arg(long = "inv-euler", default_value_t = 12)]
    pub euler: usize,
    /// Radius of the circle for queue-length inversion; by default chosen
    /// for an aliasing error of 1e-12.
    #[arg(long = "inv-radius")]
    pub radius: Option<f64>,
    /// Points on each waiting-time grid.
    #[arg(long, default_value_t = 200)]
    pub points: usize,
    /// Largest queue length in the distribution output.
    #[arg(long = "n-max", default_value_t = 50)]
    pub n_max: usize,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Analytic means, cycle moments and the conservation residual.
    Analyze {
        #[command(flatten)]
        common: Common,
    },
    /// Discrete-event simulation estimates with confidence half-widths.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sim: SimArgs,
        /// Also dump this many waiting times per class.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Analytic values side by side with simulation.
    Verify {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sim: SimArgs,
    },
    /// Service-time thresholds for one queue, and the SJF limit.
    Optimize {
        #[command(flatten)]
        common: Common,
        /// Largest number of priority levels.
        #[arg(long = "K", default_value_t = 4)]
        k_max: usize,
        /// Bands used for the SJF approximation.
        #[arg(long, default_value_t = 200)]
        levels: usize,
        /// Queue to split (1-based).
        #[arg(long, default_value_t = 1)]
        queue: usize,
        /// Also sweep symmetric systems of 1 to this many queues.
        #[arg(long)]
        symmetric: Option<usize>,
        /// Total arrival rate of the symmetric systems.
        #[arg(long, default_value_t = 0.8)]
        sym_rate: f64,
        /// Mean exponential service time of the symmetric systems.
        #[arg(long, default_value_t = 1.0)]
        sym_service: f64,
        /// Total deterministic switch-over time of the symmetric systems.
        #[arg(long, default_value_t = 2.0)]
        sym_switch: f64,
    },
    /// Waiting-time CDFs and queue-length distributions per class.
    Invert {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inv: InvArgs,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Analyze { common }
            | Command::Simulate { common, .. }
            | Command::Verify { common, .. }
            | Command::Optimize { common, .. }
            | Command::Invert { common, .. } => common,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Command::Analyze { .. } => "analyze",
            Command::Simulate { .. } => "simulate",
            Command::Verify { .. } => "verify",
            Command::Optimize { .. } => "optimize",
            Command::Invert { .. } => "invert",
        }
    }
}

/// Why a command did not succeed.
#[derive(Debug)]
pub enum Failure {
    /// Bad configuration or arguments; nothing was written.
    Invalid(anyhow::Error),
    /// A computation failed.
    Runtime(anyhow::Error),
    /// `verify` found disagreements; the table was written.
    Verify { failed: usize, total: usize },
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Runtime(_) => 1,
            Failure::Invalid(_) => 2,
            Failure::Verify { .. } => 3,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Invalid(e) => write!(f, "invalid input: {e:#}"),
            Failure::Runtime(e) => write!(f, "{e:#}"),
            Failure::Verify { failed, total } => {
                write!(f, "{failed} of {total} quantities outside {VERIFY_HALF_WIDTHS} half-widths")
            }
        }
    }
}

fn is_validation(e: &PollError) -> bool {
    matches!(
        e,
        PollError::Unstable { .. }
            | PollError::ZeroSwitchover
            | PollError::BadShape(_)
            | PollError::Config(_)
            | PollError::UnsupportedFamily(_)
            | PollError::EmptyBand { .. }
    )
}

impl From<PollError> for Failure {
    fn from(e: PollError) -> Self {
        if is_validation(&e) {
            Failure::Invalid(e.into())
        } else {
            Failure::Runtime(e.into())
        }
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure::Invalid(anyhow::anyhow!(msg.into()))
}

/// Files produced by a command, written together at the end.
#[derive(Debug, Default)]
pub struct Output {
    pub files: Vec<(String, Vec<u8>)>,
    pub summary: String,
}

impl Output {
    fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    fn write(&self, dir: &Path) -> anyhow::Result<()> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        }
        Ok(())
    }
}

fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new().flexible(false).from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

fn num(x: f64) -> String {
    format!("{x}")
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

struct Loaded {
    spec: SystemSpec,
    hash: String,
}

fn load(path: &Path) -> Result<Loaded, Failure> {
    let bytes = fs::read(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::Invalid)?;
    let text = std::str::from_utf8(&bytes)
        .context("config is not UTF-8")
        .map_err(Failure::Invalid)?;
    let spec = SystemSpec::from_json(text)?;
    spec.check_shape()?;
    Ok(Loaded {
        spec,
        hash: sha256_hex(&bytes),
    })
}

fn provenance(cmd: &Command, hash: &str, extra: Vec<(&str, String)>) -> Vec<u8> {
    let mut rows = vec![
        vec!["tool".into(), "pollcalc".into()],
        vec!["version".into(), env!("CARGO_PKG_VERSION").into()],
        vec!["command".into(), cmd.name().into()],
        vec!["config_sha256".into(), hash.into()],
    ];
    rows.extend(extra.into_iter().map(|(k, v)| vec![k.to_string(), v]));
    csv_bytes(&["key", "value"], &rows)
}

fn sim_config(seed: u64, s: &SimArgs) -> Result<SimConfig, Failure> {
    if s.reps < 10 {
        return Err(invalid(format!("--reps must be at least 10, got {}", s.reps)));
    }
    if s.cycles == 0 {
        return Err(invalid("--cycles must be positive"));
    }
    Ok(SimConfig {
        seed,
        replications: s.reps,
        cycles: s.cycles,
        warmup: s.warmup,
    })
}

fn sim_extra(cfg: &SimConfig) -> Vec<(&'static str, String)> {
    vec![
        ("seed", cfg.seed.to_string()),
        ("replications", cfg.replications.to_string()),
        ("cycles", cfg.cycles.to_string()),
        ("warmup", cfg.warmup.to_string()),
    ]
}

fn analysis_extra(r: &AnalysisReport) -> Vec<(&'static str, String)> {
    vec![
        ("product_terms", r.truncation.terms.to_string()),
        ("product_tail_bound", num(r.truncation.tail_bound)),
    ]
}

/// Runs one command and returns the files it produced.
pub fn execute(cmd: &Command) -> Result<Output, Failure> {
    let common = cmd.common();
    let loaded = load(&common.config)?;
    let mut out = Output::default();
    match cmd {
        Command::Analyze { .. } => {
            let sys = System::new(loaded.spec)?;
            let report = AnalysisReport::build(&sys)?;
            let rows: Vec<Vec<String>> =
                report.rows.iter().map(|(k, v)| vec![k.clone(), num(*v)]).collect();
            out.add("analysis.csv", csv_bytes(&["quantity", "value"], &rows));
            out.add("provenance.csv", provenance(cmd, &loaded.hash, analysis_extra(&report)));
            for (k, v) in &report.rows {
                let _ = writeln!(out.summary, "{k:<24} {v:.6}");
            }
        }
        Command::Simulate { sim, samples, .. } => {
            let cfg = sim_config(common.seed, sim)?;
            let report = simulate(&loaded.spec, &cfg)?;
            out.add("simulation.csv", sim_csv(&report));
            if let Some(n) = samples {
                let waits = waiting_samples(&loaded.spec, common.seed, *n)?;
                let rows: Vec<Vec<String>> = waits
                    .iter()
                    .map(|((i, k), w)| vec![format!("{}:{}", i + 1, k + 1), num(*w)])
                    .collect();
                out.add("waits.csv", csv_bytes(&["class", "wait"], &rows));
            }
            out.add("provenance.csv", provenance(cmd, &loaded.hash, sim_extra(&cfg)));
            if report.unstable {
                let _ = writeln!(out.summary, "warning: offered load is at least 1; estimates drift with run length");
            }
            for (k, e) in &report.estimates {
                let _ = writeln!(out.summary, "{k:<24} {:.6} +- {:.6}", e.estimate, e.half_width);
            }
        }
        Command::Verify { sim, .. } => {
            let cfg = sim_config(common.seed, sim)?;
            let sys = System::new(loaded.spec.clone())?;
            let analytic = AnalysisReport::build(&sys)?;
            let report = simulate(&loaded.spec, &cfg)?;
            let mut rows = Vec::new();
            let mut failed = 0;
            for (key, a) in &analytic.rows {
                let Some(e) = report.get(key) else { continue };
                if !(a.is_finite() && e.estimate.is_finite()) {
                    continue;
                }
                let pass = e.covers(*a, VERIFY_HALF_WIDTHS);
                failed += usize::from(!pass);
                rows.push(vec![
                    key.clone(),
                    num(*a),
                    num(e.estimate),
                    num(e.half_width),
                    pass.to_string(),
                ]);
                let _ = writeln!(
                    out.summary,
                    "{key:<24} {a:>12.6} {:>12.6} +- {:<10.6} {}",
                    e.estimate,
                    e.half_width,
                    if pass { "pass" } else { "FAIL" }
                );
            }
            out.add(
                "verify.csv",
                csv_bytes(&["quantity", "analytic", "estimate", "halfwidth", "pass"], &rows),
            );
            let mut extra = sim_extra(&cfg);
            extra.extend(analysis_extra(&analytic));
            out.add("provenance.csv", provenance(cmd, &loaded.hash, extra));
            if failed > 0 {
                out.write(&common.out).map_err(Failure::Runtime)?;
                print!("{}", out.summary);
                return Err(Failure::Verify {
                    failed,
                    total: rows.len(),
                });
            }
        }
        Command::Optimize {
            k_max,
            levels,
            queue,
            symmetric,
            sym_rate,
            sym_service,
            sym_switch,
            ..
        } => {
            if *k_max == 0 {
                return Err(invalid("--K must be at least 1"));
            }
            if *levels < MIN_SJF_LEVELS {
                return Err(invalid(format!("--levels must be at least {MIN_SJF_LEVELS}")));
            }
            if *queue == 0 || *queue > loaded.spec.queues.len() {
                return Err(invalid(format!("--queue must be between 1 and {}", loaded.spec.queues.len())));
            }
            if let Some(n) = symmetric {
                if *n == 0 || !(*sym_rate > 0.0 && *sym_service > 0.0 && *sym_switch > 0.0) {
                    return Err(invalid("symmetric sweep needs --symmetric >= 1 and positive parameters"));
                }
                if sym_rate * sym_service >= 1.0 {
                    return Err(invalid("symmetric sweep load must be below 1"));
                }
            }
            System::new(loaded.spec.clone())?;
            let i = queue - 1;
            let width = k_max - 1;
            let mut rows = Vec::new();
            for k in 1..=*k_max {
                let opt = optimize_thresholds(&loaded.spec, i, k)?;
                let mut row = vec![k.to_string()];
                row.extend(opt.thresholds.iter().map(|t| num(*t)));
                row.resize(1 + width, String::new());
                row.push(num(opt.value));
                let _ = writeln!(out.summary, "K = {k:<3} mean wait {:.6}  thresholds {:?}", opt.value, opt.thresholds);
                rows.push(row);
            }
            let sjf = sjf_limit(&loaded.spec, i, *levels)?;
            let mut row = vec!["sjf".to_string()];
            row.resize(1 + width, String::new());
            row.push(num(sjf));
            rows.push(row);
            let _ = writeln!(out.summary, "SJF ({levels} bands) mean wait {sjf:.6}");
            let mut header: Vec<String> = vec!["K".into()];
            header.extend((1..=width).map(|j| format!("t_{j}")));
            header.push("overall_mean_wait".into());
            let header: Vec<&str> = header.iter().map(String::as_str).collect();
            out.add("thresholds.csv", csv_bytes(&header, &rows));

            if let Some(n_max) = symmetric {
                let ns: Vec<usize> = (1..=*n_max).collect();
                let points = symmetric_sweep(
                    &ns,
                    &[Discipline::Gated, Discipline::Exhaustive],
                    *sym_rate,
                    *sym_service,
                    *sym_switch,
                    *levels,
                )?;
                let rows: Vec<Vec<String>> = points
                    .iter()
                    .map(|p| {
                        vec![
                            p.n.to_string(),
                            p.discipline.name().to_string(),
                            p.policy.to_string(),
                            num(p.mean_wait),
                        ]
                    })
                    .collect();
                out.add("symmetric.csv", csv_bytes(&["N", "discipline", "policy", "mean_wait"], &rows));
            }
            out.add(
                "provenance.csv",
                provenance(
                    cmd,
                    &loaded.hash,
                    vec![("queue", queue.to_string()), ("K", k_max.to_string()), ("levels", levels.to_string())],
                ),
            );
        }
        Command::Invert { inv, .. } => {
            let params = EulerParams {
                terms: inv.terms,
                euler: inv.euler,
                tolerance: INVERSION_TARGET,
                ..EulerParams::default()
            };
            if inv.euler < 2 || inv.euler >= inv.terms {
                return Err(invalid("--inv-euler must be at least 2 and below --inv-terms"));
            }
            if inv.points < 2 {
                return Err(invalid("--points must be at least 2"));
            }
            let m = 2.0 * (inv.n_max as f64 + 1.0);
            let digits = match inv.radius {
                None => pollcalc_core::numerics::DEFAULT_ALIASING_DIGITS,
                Some(r) if r > 0.0 && r < 1.0 => -m * r.log10(),
                Some(r) => return Err(invalid(format!("--inv-radius must lie in (0, 1), got {r}"))),
            };
            let sys = Arc::new(System::new(loaded.spec)?);
            let mut cdf_rows = Vec::new();
            let mut pmf_rows = Vec::new();
            let mut worst: f64 = 0.0;
            for (i, k) in sys.classes().collect::<Vec<_>>() {
                if sys.queue(i).classes[k].rate <= 0.0 {
                    continue;
                }
                let label = format!("{}:{}", i + 1, k + 1);
                let lst = SharedWaitingLst::new(sys.clone(), i, k)?;
                let grid = cdf_grid(lst.mean(), lst.second_moment(), inv.points);
                let scale = lst.mean().max(1e-3 * sys.mean_cycle());
                let f = TransformFn::lst(scale, move |w| lst.eval(w));
                let g = invert_lst_unchecked(&f, &grid, &params)?;
                worst = worst.max(g.max_error());
                for j in 0..g.abscissae.len() {
                    cdf_rows.push(vec![label.clone(), num(g.abscissae[j]), num(g.values[j]), num(g.errors[j])]);
                }
                let s = sys.clone();
                let mean_len = QueueLengthGf::new(&sys, i, k)?.mean()?;
                let gf = TransformFn::gf(mean_len, move |z| QueueLengthGf::new(&s, i, k)?.eval(z));
                let p = invert_gf(&gf, inv.n_max, digits)?;
                for n in 0..p.values.len() {
                    pmf_rows.push(vec![label.clone(), n.to_string(), num(p.values[n]), num(p.errors[n])]);
                }
                let _ = writeln!(
                    out.summary,
                    "class {label}: {} CDF points, max error {:.1e}; P(n <= {}) = {:.6}",
                    g.abscissae.len(),
                    g.max_error(),
                    inv.n_max,
                    p.values.iter().sum::<f64>()
                );
            }
            if worst > INVERSION_TARGET {
                let _ = writeln!(
                    out.summary,
                    "warning: largest inversion error estimate {worst:.1e} exceeds {INVERSION_TARGET:.0e}; see the error column"
                );
            }
            out.add("cdf.csv", csv_bytes(&["class", "t", "cdf", "error"], &cdf_rows));
            out.add("queue_length.csv", csv_bytes(&["class", "n", "probability", "error"], &pmf_rows));
            out.add(
                "provenance.csv",
                provenance(
                    cmd,
                    &loaded.hash,
                    vec![
                        ("inv_a", num(params.a)),
                        ("inv_terms", params.terms.to_string()),
                        ("inv_euler", params.euler.to_string()),
                        ("aliasing_digits", num(digits)),
                        ("max_cdf_error", num(worst)),
                    ],
                ),
            );
        }
    }
    Ok(out)
}

fn sim_csv(report: &SimReport) -> Vec<u8> {
    let rows: Vec<Vec<String>> = report
        .estimates
        .iter()
        .map(|(k, e)| vec![k.clone(), num(e.estimate), num(e.half_width)])
        .collect();
    csv_bytes(&["quantity", "estimate", "halfwidth"], &rows)
}

/// Caps the global thread pool from `POLLCALC_THREADS`, if set.
pub fn configure_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("POLLCALC_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| invalid(format!("POLLCALC_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Runtime(e.into()))
}

/// Runs `cli` to completion, writing files and printing the summary.
pub fn run(cli: &Cli) -> Result<(), Failure> {
    configure_threads()?;
    let out = execute(&cli.command)?;
    out.write(&cli.command.common().out).map_err(Failure::Runtime)?;
    print!("{}", out.summary);
    Ok(())
}
