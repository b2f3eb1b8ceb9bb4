//! Waiting-time transforms and means per priority class.
//!
//! A class `(i, k)` sees the rest of its queue split into higher-priority
//! customers (`H`, classes before `k`) and lower-priority customers (`L`,
//! classes after `k`). Every transform is written once over [`Scalar`]: at
//! complex points it feeds inversion, on a [`Taylor`] jet it yields exact
//! moments. Removable `0/0` points at the origin are cancelled on the jet;
//! complex evaluations very close to the origin use the jet's polynomial.

use std::sync::Arc;

use num_complex::Complex64;

use crate::cycletime::{lst_moments, Cycles};
use crate::distributions::{busy_period, DistributionSpec};
use crate::error::{PollError, Result};
use crate::model::{class_mixture, Discipline, Preemption, System};
use crate::scalar::{Scalar, Taylor};

/// Agreement required between the two forms of a dual-form transform.
pub const FORM_TOL: f64 = 1e-9;
/// Relative agreement required between the two exhaustive mean formulas.
pub const MEAN_FORM_TOL: f64 = 1e-8;
/// Below `|w| E(C)` of this size complex evaluation uses the local series.
pub const SERIES_RADIUS: f64 = 3e-3;

/// The split of a queue as seen from one class.
#[derive(Clone, Debug)]
pub struct ClassView {
    pub queue: usize,
    /// `None` when the whole queue is collapsed into a single class.
    pub class: Option<usize>,
    pub lambda_h: f64,
    pub beta_h: Option<DistributionSpec>,
    pub lambda_ik: f64,
    pub beta_ik: DistributionSpec,
    pub lambda_l: f64,
    pub beta_l: Option<DistributionSpec>,
    pub rho_h: f64,
    pub rho_ik: f64,
    pub rho_l: f64,
}

impl ClassView {
    pub fn new(sys: &System, i: usize, k: usize) -> Result<Self> {
        let q = sys.queue(i);
        if k >= q.classes.len() {
            return Err(PollError::BadShape(format!("queue {} has no class {}", i + 1, k + 1)));
        }
        let high = &q.classes[..k];
        let low = &q.classes[k + 1..];
        let rate = |cs: &[crate::model::PriorityClassSpec]| cs.iter().map(|c| c.rate).sum::<f64>();
        let load = |cs: &[crate::model::PriorityClassSpec]| cs.iter().map(|c| c.rate * c.service.mean()).sum::<f64>();
        Ok(ClassView {
            queue: i,
            class: Some(k),
            lambda_h: rate(high),
            beta_h: class_mixture(high),
            lambda_ik: q.classes[k].rate,
            beta_ik: q.classes[k].service.clone(),
            lambda_l: rate(low),
            beta_l: class_mixture(low),
            rho_h: load(high),
            rho_ik: sys.rho_class(i, k),
            rho_l: load(low),
        })
    }

    /// All classes of queue `i` merged into one.
    pub fn collapsed(sys: &System, i: usize) -> Self {
        ClassView {
            queue: i,
            class: None,
            lambda_h: 0.0,
            beta_h: None,
            lambda_ik: sys.lambda(i),
            beta_ik: sys.service(i).clone(),
            lambda_l: 0.0,
            beta_l: None,
            rho_h: 0.0,
            rho_ik: sys.rho_queue(i),
            rho_l: 0.0,
        }
    }

    /// `lambda_H (1 - beta_H(w))`.
    fn h_load<T: Scalar>(&self, w: T) -> T {
        load_term(self.lambda_h, self.beta_h.as_ref(), w)
    }

    fn k_load<T: Scalar>(&self, w: T) -> T {
        load_term(self.lambda_ik, Some(&self.beta_ik), w)
    }

    /// `pi_H(w)`, the busy period of higher-priority work.
    fn pi_h<T: Scalar>(&self, w: T) -> Result<T> {
        match &self.beta_h {
            Some(b) if self.lambda_h > 0.0 => busy_period(b, self.lambda_h, w),
            _ => Ok(T::one()),
        }
    }

    /// `w + lambda_H (1 - pi_H(w))`: time scale stretched by higher-priority work.
    fn stretch<T: Scalar>(&self, w: T) -> Result<T> {
        if self.lambda_h == 0.0 {
            return Ok(w);
        }
        Ok(w + (T::one() - self.pi_h(w)?) * self.lambda_h)
    }

    /// `beta*_ik`, the completion time of one class-`k` service.
    pub fn completion<T: Scalar>(&self, w: T) -> Result<T> {
        Ok(self.beta_ik.lst(self.stretch(w)?))
    }
}

fn load_term<T: Scalar>(rate: f64, dist: Option<&DistributionSpec>, w: T) -> T {
    match dist {
        Some(d) if rate != 0.0 => (T::one() - d.lst(w)) * rate,
        _ => T::from_f64(0.0),
    }
}

/// The waiting-time expressions that can be evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Formula {
    /// Gated queue, past/residual cycle form.
    GatedPriority,
    /// Gated queue, M/G/1 factor times vacation factor.
    GatedDecomposed,
    /// Exhaustive queue, single-fraction form.
    ExhaustiveCompact,
    /// Exhaustive queue, product of three interpretable factors.
    ExhaustiveDecomposed,
    ExhaustivePreemptive,
    /// Lowest class of an exhaustive queue through the completion cycle.
    ExhaustiveLowest,
    GloballyGated,
    /// Collapsed gated queue, decomposition form.
    NonpriorityGated,
    /// Collapsed exhaustive queue through the intervisit time.
    NonpriorityExhaustive,
    /// Collapsed exhaustive queue through the completion cycle.
    NonpriorityCycleStar,
}

/// Transform evaluator for one system.
#[derive(Clone, Copy)]
pub struct Waiting<'a> {
    sys: &'a System,
    cy: Cycles<'a>,
    checks: bool,
}

impl<'a> Waiting<'a> {
    pub fn new(sys: &'a System) -> Self {
        Waiting { sys, cy: Cycles::new(sys), checks: true }
    }

    /// Skip the built-in cross-checks (route and form agreement).
    pub fn unchecked(sys: &'a System) -> Self {
        Waiting { checks: false, ..Self::new(sys) }
    }

    pub fn system(&self) -> &'a System {
        self.sys
    }

    fn intervisit<T: Scalar>(&self, i: usize, w: T) -> Result<T> {
        if self.checks || self.sys.lambda(i) == 0.0 {
            self.cy.intervisit(i, w)
        } else {
            self.cy.intervisit_via_visit(i, w)
        }
    }

    fn require(&self, v: &ClassView, d: Discipline) -> Result<()> {
        if self.sys.discipline(v.queue) != d {
            return Err(PollError::Unsupported(format!(
                "formula needs a {} queue, queue {} is {}",
                d.name(),
                v.queue + 1,
                self.sys.discipline(v.queue).name()
            )));
        }
        Ok(())
    }

    /// Evaluate one formula.
    pub fn eval<T: Scalar>(&self, f: Formula, v: &ClassView, w: T) -> Result<T> {
        let ec = self.sys.mean_cycle();
        let i = v.queue;
        match f {
            Formula::GatedPriority => {
                self.require(v, Discipline::Gated)?;
                let (hl, kl) = (v.h_load(w), v.k_load(w));
                let num = self.cy.begin(i, hl + kl)? - self.cy.begin(i, w + hl)?;
                Ok(T::div_removable(num, (w - kl) * ec))
            }
            Formula::GatedDecomposed => {
                self.require(v, Discipline::Gated)?;
                let (hl, kl) = (v.h_load(w), v.k_load(w));
                let keep = 1.0 - v.rho_ik;
                let mg1 = T::div_removable(w * keep, w - kl);
                let num = self.cy.begin(i, hl + kl)? - self.cy.begin(i, w + hl)?;
                Ok(mg1 * T::div_removable(num, w * (keep * ec)))
            }
            Formula::ExhaustiveCompact => {
                self.require(v, Discipline::Exhaustive)?;
                let y = v.stretch(w)?;
                let rho_i = self.sys.rho_queue(i);
                let num = (T::one() - self.intervisit(i, y)?) * ((1.0 - rho_i) / self.sys.mean_intervisit(i))
                    + load_term(v.lambda_l, v.beta_l.as_ref(), y);
                let den = v.beta_ik.lst(y) * v.lambda_ik - v.lambda_ik + w;
                Ok(T::div_removable(num, den))
            }
            Formula::ExhaustiveDecomposed | Formula::ExhaustivePreemptive => {
                self.require(v, Discipline::Exhaustive)?;
                let y = v.stretch(w)?;
                let rho_i = self.sys.rho_queue(i);
                let free = 1.0 - v.rho_h - v.rho_ik;
                let rho_star = v.rho_ik / (1.0 - v.rho_h);
                let mg1 = T::div_removable(w * (1.0 - rho_star), w - load_term(v.lambda_ik, Some(&v.beta_ik), y));
                let mut vac = T::div_removable(
                    T::one() - self.intervisit(i, y)?,
                    y * self.sys.mean_intervisit(i),
                ) * ((1.0 - rho_i) / free);
                if v.rho_l > 0.0 {
                    let share = v.rho_l / free;
                    if f == Formula::ExhaustivePreemptive {
                        vac = vac + share;
                    } else {
                        let bl = v.beta_l.as_ref().expect("positive load implies classes");
                        vac = vac + T::div_removable(T::one() - bl.lst(y), y * bl.mean()) * share;
                    }
                }
                let mut busy = T::from_f64(1.0 - v.rho_h);
                if v.rho_h > 0.0 {
                    let bh = v.beta_h.as_ref().expect("positive load implies classes");
                    let mean_bp = bh.mean() / (1.0 - v.rho_h);
                    busy = busy + T::div_removable(T::one() - v.pi_h(w)?, w * mean_bp) * v.rho_h;
                }
                Ok(mg1 * vac * busy)
            }
            Formula::ExhaustiveLowest => {
                self.require(v, Discipline::Exhaustive)?;
                if v.lambda_l != 0.0 || v.class.map_or(false, |k| k + 1 != self.sys.queue(i).classes.len()) {
                    return Err(PollError::Unsupported("formula holds for the lowest class only".into()));
                }
                let a = w - load_term(v.lambda_ik, Some(&v.beta_ik), v.stretch(w)?);
                Ok(T::div_removable(T::one() - self.cy.complete(i, a)?, a * ec))
            }
            Formula::GloballyGated => {
                if !self.sys.is_globally_gated() {
                    return Err(PollError::Unsupported("system is not globally gated".into()));
                }
                let mut prefix = T::one();
                let mut a = v.h_load(w);
                for j in 0..i {
                    prefix = prefix * self.sys.switch_over(j).lst(w);
                    a = a + load_term(self.sys.lambda(j), Some(self.sys.service(j)), w);
                }
                let kl = v.k_load(w);
                let num = self.cy.begin(0, a + kl)? - self.cy.begin(0, w + a)?;
                Ok(prefix * T::div_removable(num, (w - kl) * ec))
            }
            Formula::NonpriorityGated => {
                self.require(v, Discipline::Gated)?;
                let (l, rho) = (self.sys.lambda(i), self.sys.rho_queue(i));
                let b = load_term(l, Some(self.sys.service(i)), w);
                let mg1 = T::div_removable(w * (1.0 - rho), w - b);
                let num = self.cy.begin(i, b)? - self.cy.begin(i, w)?;
                Ok(mg1 * T::div_removable(num, w * ((1.0 - rho) * ec)))
            }
            Formula::NonpriorityExhaustive => {
                self.require(v, Discipline::Exhaustive)?;
                let (l, rho) = (self.sys.lambda(i), self.sys.rho_queue(i));
                let b = load_term(l, Some(self.sys.service(i)), w);
                let mg1 = T::div_removable(w * (1.0 - rho), w - b);
                let res = T::div_removable(T::one() - self.intervisit(i, w)?, w * self.sys.mean_intervisit(i));
                Ok(mg1 * res)
            }
            Formula::NonpriorityCycleStar => {
                self.require(v, Discipline::Exhaustive)?;
                let a = w - load_term(self.sys.lambda(i), Some(self.sys.service(i)), w);
                Ok(T::div_removable(T::one() - self.cy.complete(i, a)?, a * ec))
            }
        }
    }

    /// Evaluate `f`, and when checks are on compare against `check`.
    pub fn eval_checked<T: Scalar>(&self, f: Formula, check: Option<Formula>, v: &ClassView, w: T) -> Result<T> {
        let a = self.eval(f, v, w)?;
        if let (true, Some(g)) = (self.checks, check) {
            let b = self.eval(g, v, w)?;
            let d = a.distance(&b);
            if !(d <= FORM_TOL) {
                return Err(PollError::FormMismatch { what: form_name(f), difference: d });
            }
        }
        Ok(a)
    }
}

fn form_name(f: Formula) -> &'static str {
    match f {
        Formula::GatedPriority => "gated priority waiting transform",
        Formula::ExhaustiveCompact => "exhaustive priority waiting transform",
        _ => "waiting transform",
    }
}

/// Primary formula for a class and the formula it is checked against.
pub fn default_formula(sys: &System, i: usize) -> (Formula, Option<Formula>) {
    match (sys.discipline(i), sys.queue(i).preemption) {
        (Discipline::Gated, _) => (Formula::GatedPriority, Some(Formula::GatedDecomposed)),
        (Discipline::Exhaustive, Preemption::Nonpreemptive) => {
            (Formula::ExhaustiveCompact, Some(Formula::ExhaustiveDecomposed))
        }
        (Discipline::Exhaustive, Preemption::PreemptiveResume) => (Formula::ExhaustivePreemptive, None),
        (Discipline::GloballyGated, _) => (Formula::GloballyGated, None),
    }
}

/// A ready-to-evaluate waiting-time transform of one class.
#[derive(Clone)]
pub struct WaitingLst<'a> {
    waiting: Waiting<'a>,
    view: ClassView,
    formula: Formula,
    check: Option<Formula>,
    jet: Taylor,
    scale: f64,
}

impl<'a> WaitingLst<'a> {
    /// Transform of class `k` of queue `i` under the queue's own discipline.
    pub fn new(sys: &'a System, i: usize, k: usize) -> Result<Self> {
        let (f, check) = default_formula(sys, i);
        Self::build(Waiting::new(sys), ClassView::new(sys, i, k)?, f, check)
    }

    /// Transform under an explicit formula, without cross-checks.
    pub fn with_formula(sys: &'a System, view: ClassView, formula: Formula) -> Result<Self> {
        Self::build(Waiting::new(sys), view, formula, None)
    }

    pub fn build(waiting: Waiting<'a>, view: ClassView, formula: Formula, check: Option<Formula>) -> Result<Self> {
        let jet = waiting.eval_checked(formula, check, &view, Taylor::variable())?;
        let scale = waiting.system().mean_cycle();
        Ok(WaitingLst { waiting, view, formula, check, jet, scale })
    }

    /// Skip per-point cross-checks (the jet was already checked).
    pub fn fast(mut self) -> Self {
        self.waiting.checks = false;
        self
    }

    pub fn view(&self) -> &ClassView {
        &self.view
    }

    pub fn formula(&self) -> Formula {
        self.formula
    }

    /// Expansion at the origin; coefficient `k` is `(-1)^k E(W^k) / k!`.
    pub fn jet(&self) -> Taylor {
        self.jet
    }

    pub fn mean(&self) -> f64 {
        lst_moments(self.jet).0
    }

    pub fn second_moment(&self) -> f64 {
        lst_moments(self.jet).1
    }

    pub fn eval(&self, w: Complex64) -> Result<Complex64> {
        eval_near_origin(&self.waiting, &self.view, self.formula, self.check, &self.jet, self.scale, w)
    }
}

/// Evaluation shared by the borrowed and owned transforms: exactly one at
/// the origin, the jet polynomial close to it, the formula elsewhere.
fn eval_near_origin(
    waiting: &Waiting,
    view: &ClassView,
    formula: Formula,
    check: Option<Formula>,
    jet: &Taylor,
    scale: f64,
    w: Complex64,
) -> Result<Complex64> {
    if w.re < 0.0 || !w.re.is_finite() || !w.im.is_finite() {
        return Err(PollError::Domain(format!("Re w = {} must be nonnegative", w.re)));
    }
    if w.re == 0.0 && w.im == 0.0 {
        return Ok(Complex64::new(1.0, 0.0));
    }
    if w.norm() * scale < SERIES_RADIUS {
        return Ok(jet.eval_poly(w, jet.valid_terms()));
    }
    waiting.eval_checked(formula, check, view, w)
}

/// A [`WaitingLst`] that owns a handle to its system, so it can live in
/// `'static` closures such as the ones inversion takes.
#[derive(Clone)]
pub struct SharedWaitingLst {
    sys: Arc<System>,
    view: ClassView,
    formula: Formula,
    check: Option<Formula>,
    jet: Taylor,
    scale: f64,
    checks: bool,
}

impl SharedWaitingLst {
    pub fn new(sys: Arc<System>, i: usize, k: usize) -> Result<Self> {
        let lst = WaitingLst::new(&sys, i, k)?;
        Ok(SharedWaitingLst {
            view: lst.view,
            formula: lst.formula,
            check: lst.check,
            jet: lst.jet,
            scale: lst.scale,
            checks: true,
            sys: sys.clone(),
        })
    }

    pub fn fast(mut self) -> Self {
        self.checks = false;
        self
    }

    pub fn mean(&self) -> f64 {
        lst_moments(self.jet).0
    }

    pub fn second_moment(&self) -> f64 {
        lst_moments(self.jet).1
    }

    pub fn eval(&self, w: Complex64) -> Result<Complex64> {
        let waiting = Waiting { checks: self.checks, ..Waiting::new(&self.sys) };
        eval_near_origin(&waiting, &self.view, self.formula, self.check, &self.jet, self.scale, w)
    }
}

fn check_omega(w: Complex64) -> Result<()> {
    if w.re < 0.0 {
        return Err(PollError::Domain(format!("Re w = {} must be nonnegative", w.re)));
    }
    Ok(())
}

/// Waiting transform of a queue with its classes merged, gated or exhaustive.
pub fn waiting_lst_nonpriority(sys: &System, i: usize, w: Complex64) -> Result<Complex64> {
    check_omega(w)?;
    let f = match sys.discipline(i) {
        Discipline::Gated => Formula::NonpriorityGated,
        Discipline::Exhaustive => Formula::NonpriorityExhaustive,
        Discipline::GloballyGated => Formula::GloballyGated,
    };
    WaitingLst::with_formula(sys, ClassView::collapsed(sys, i), f)?.eval(w)
}

pub fn waiting_lst_gated_priority(sys: &System, i: usize, k: usize, w: Complex64) -> Result<Complex64> {
    check_omega(w)?;
    let lst = WaitingLst::build(
        Waiting::new(sys),
        ClassView::new(sys, i, k)?,
        Formula::GatedPriority,
        Some(Formula::GatedDecomposed),
    )?;
    lst.eval(w)
}

pub fn waiting_lst_exhaustive_priority(
    sys: &System,
    i: usize,
    k: usize,
    w: Complex64,
    mode: Preemption,
) -> Result<Complex64> {
    check_omega(w)?;
    let (f, check) = match mode {
        Preemption::Nonpreemptive => (Formula::ExhaustiveCompact, Some(Formula::ExhaustiveDecomposed)),
        Preemption::PreemptiveResume => (Formula::ExhaustivePreemptive, None),
    };
    WaitingLst::build(Waiting::new(sys), ClassView::new(sys, i, k)?, f, check)?.eval(w)
}

pub fn waiting_lst_globally_gated(sys: &System, i: usize, k: usize, w: Complex64) -> Result<Complex64> {
    check_omega(w)?;
    WaitingLst::build(Waiting::new(sys), ClassView::new(sys, i, k)?, Formula::GloballyGated, None)?.eval(w)
}

/// Residual moments of the cycle quantities that drive the mean waits.
/// They depend only on per-queue aggregates, so splitting a queue into
/// priority classes leaves them unchanged.
#[derive(Clone, Debug)]
pub struct Residuals {
    pub mean_cycle: f64,
    /// `E(C_i^2) / (2 E(C))` for gated queues.
    pub cycle: Vec<Option<f64>>,
    /// `E(I_i^2) / (2 E(I_i))` for exhaustive queues.
    pub intervisit: Vec<Option<f64>>,
    /// `E(C*_i^2) / (2 E(C))` for exhaustive queues.
    pub cycle_star: Vec<Option<f64>>,
    /// Residual cycle from queue 1 of a globally gated system.
    pub global: Option<f64>,
}

impl Residuals {
    pub fn compute(sys: &System) -> Result<Self> {
        let cy = Cycles::new(sys);
        let ec = sys.mean_cycle();
        let n = sys.n();
        let mut r = Residuals {
            mean_cycle: ec,
            cycle: vec![None; n],
            intervisit: vec![None; n],
            cycle_star: vec![None; n],
            global: None,
        };
        if sys.is_globally_gated() {
            let (_, m2) = lst_moments(cy.gg_cycle(Taylor::variable())?.value);
            r.global = Some(m2 / (2.0 * ec));
            return Ok(r);
        }
        for i in 0..n {
            match sys.discipline(i) {
                Discipline::Gated => {
                    let (_, m2) = cy.cycle_moments(i)?;
                    r.cycle[i] = Some(m2 / (2.0 * ec));
                }
                Discipline::Exhaustive => {
                    let (m1, m2) = cy.intervisit_moments(i)?;
                    r.intervisit[i] = Some(m2 / (2.0 * m1));
                    let (_, s2) = cy.cycle_star_moments(i)?;
                    r.cycle_star[i] = Some(s2 / (2.0 * ec));
                }
                Discipline::GloballyGated => unreachable!("checked above"),
            }
        }
        Ok(r)
    }
}

/// Closed-form mean wait of class `k` at queue `i`.
pub fn mean_waiting(sys: &System, i: usize, k: usize) -> Result<f64> {
    mean_waiting_with(sys, &Residuals::compute(sys)?, i, k)
}

/// [`mean_waiting`] with precomputed residual moments.
pub fn mean_waiting_with(sys: &System, res: &Residuals, i: usize, k: usize) -> Result<f64> {
    let v = ClassView::new(sys, i, k)?;
    let q = sys.queue(i);
    let missing = || PollError::Unsupported("residual moments computed for another system".into());
    match q.discipline {
        Discipline::Gated => {
            let c = res.cycle[i].ok_or_else(missing)?;
            Ok((1.0 + 2.0 * v.rho_h + v.rho_ik) * c)
        }
        Discipline::Exhaustive => {
            let i_res = res.intervisit[i].ok_or_else(missing)?;
            let c_star = res.cycle_star[i].ok_or_else(missing)?;
            let rho_i = sys.rho_queue(i);
            let work = |cs: &[crate::model::PriorityClassSpec]| {
                cs.iter().map(|c| c.rate * c.service.second_moment() / 2.0).sum::<f64>()
            };
            let skipped = match q.preemption {
                Preemption::Nonpreemptive => 0.0,
                Preemption::PreemptiveResume => work(&q.classes[k + 1..]),
            };
            let den = (1.0 - v.rho_h) * (1.0 - v.rho_h - v.rho_ik);
            let a = (work(&q.classes) - skipped + (1.0 - rho_i) * i_res) / den;
            let b = ((1.0 - rho_i).powi(2) * c_star - skipped) / den;
            let d = (a - b).abs();
            if d > MEAN_FORM_TOL * a.abs().max(1e-300) {
                return Err(PollError::FormMismatch { what: "exhaustive mean waiting time", difference: d });
            }
            Ok(a)
        }
        Discipline::GloballyGated => {
            let c = res.global.ok_or_else(missing)?;
            let mut s = 0.0;
            let mut r = 0.0;
            for j in 0..i {
                s += sys.switch_over(j).mean();
                r += sys.rho_queue(j);
            }
            Ok(s + (1.0 + 2.0 * r + 2.0 * v.rho_h + v.rho_ik) * c)
        }
    }
}

/// Mean completion time of one class-`k` service; equals `E(B_ik)` unless the
/// queue is preemptive.
pub fn mean_service_in_system(sys: &System, i: usize, k: usize) -> Result<f64> {
    let v = ClassView::new(sys, i, k)?;
    Ok(match sys.queue(i).preemption {
        Preemption::PreemptiveResume => v.beta_ik.mean() / (1.0 - v.rho_h),
        Preemption::Nonpreemptive => v.beta_ik.mean(),
    })
}

pub fn mean_sojourn(sys: &System, i: usize, k: usize) -> Result<f64> {
    Ok(mean_waiting(sys, i, k)? + mean_service_in_system(sys, i, k)?)
}

/// GF of the number of class-`(i,k)` customers in the system at an arbitrary
/// epoch, by the distributional form of Little's law.
pub struct QueueLengthGf<'a> {
    lst: WaitingLst<'a>,
    preemptive: bool,
}

impl<'a> QueueLengthGf<'a> {
    pub fn new(sys: &'a System, i: usize, k: usize) -> Result<Self> {
        Ok(QueueLengthGf {
            lst: WaitingLst::new(sys, i, k)?,
            preemptive: sys.queue(i).preemption == Preemption::PreemptiveResume,
        })
    }

    pub fn eval(&self, z: Complex64) -> Result<Complex64> {
        if z.norm() > 1.0 + 1e-12 {
            return Err(PollError::Domain(format!("|z| = {} exceeds 1", z.norm())));
        }
        let v = self.lst.view();
        let w = (1.0 - z) * v.lambda_ik;
        let w = Complex64::new(w.re.max(0.0), w.im);
        let service = if self.preemptive { v.completion(w)? } else { v.beta_ik.lst(w) };
        Ok(self.lst.eval(w)? * service)
    }

    /// Mean number in system.
    pub fn mean(&self) -> Result<f64> {
        let v = self.lst.view();
        let b = if self.preemptive { v.beta_ik.mean() / (1.0 - v.rho_h) } else { v.beta_ik.mean() };
        Ok(v.lambda_ik * (self.lst.mean() + b))
    }
}

pub fn marginal_queue_length_gf(sys: &System, i: usize, k: usize, z: Complex64) -> Result<Complex64> {
    QueueLengthGf::new(sys, i, k)?.eval(z)
}

/// Mean work left at queue `i` when its visit ends.
pub fn leftover_work(sys: &System, i: usize) -> f64 {
    let ec = sys.mean_cycle();
    let rho_i = sys.rho_queue(i);
    match sys.discipline(i) {
        Discipline::Gated => rho_i * rho_i * ec,
        Discipline::Exhaustive => 0.0,
        Discipline::GloballyGated => {
            let before: f64 = (0..=i).map(|j| sys.rho_queue(j)).sum();
            let switches: f64 = (0..i).map(|j| sys.switch_over(j).mean()).sum();
            rho_i * (ec * before + switches)
        }
    }
}

/// Right-hand side of the pseudo-conservation law.
pub fn conservation_rhs(sys: &System) -> f64 {
    let agg = sys.aggregates();
    let rho = agg.rho;
    let es = agg.mean_switch_total;
    let mut mg1 = 0.0;
    let mut sq = 0.0;
    for (i, q) in sys.spec().queues.iter().enumerate() {
        for c in &q.classes {
            mg1 += c.rate * c.service.second_moment() / 2.0;
        }
        sq += sys.rho_queue(i).powi(2);
    }
    let z: f64 = (0..sys.n()).map(|i| leftover_work(sys, i)).sum();
    rho / (1.0 - rho) * mg1 + rho * agg.second_moment_switch_total / (2.0 * es) + (rho * rho - sq) * es / (2.0 * (1.0 - rho)) + z
}

/// Load-weighted sum of the given mean waits, with the work a preempted
/// customer still holds while higher classes are served.
pub fn conservation_lhs(sys: &System, means: &[Vec<f64>]) -> f64 {
    let mut lhs = 0.0;
    for (i, q) in sys.spec().queues.iter().enumerate() {
        let mut rho_h = 0.0;
        for (k, c) in q.classes.iter().enumerate() {
            lhs += sys.rho_class(i, k) * means[i][k];
            if q.preemption == Preemption::PreemptiveResume && rho_h > 0.0 {
                lhs += c.rate * c.service.second_moment() / 2.0 * rho_h / (1.0 - rho_h);
            }
            rho_h += sys.rho_class(i, k);
        }
    }
    lhs
}

/// All closed-form class means, indexed `[queue][class]`.
pub fn all_mean_waits(sys: &System) -> Result<Vec<Vec<f64>>> {
    let res = Residuals::compute(sys)?;
    (0..sys.n())
        .map(|i| (0..sys.queue(i).classes.len()).map(|k| mean_waiting_with(sys, &res, i, k)).collect())
        .collect()
}

/// Pseudo-conservation law: left-hand side minus right-hand side.
pub fn pseudo_conservation_residual(sys: &System) -> Result<f64> {
    let means = all_mean_waits(sys)?;
    Ok(conservation_lhs(sys, &means) - conservation_rhs(sys))
}
