//! Cycle-time and intervisit-time transforms.
//!
//! `theta_i` is the transform of the time the server spends at queue `i`
//! because of one customer found there (its service time when gated, its
//! busy period when exhaustive) and `psi_i(w) = w + lambda_i (1 - theta_i(w))`.
//! Compositions of the `psi_i` along the cycle turn the joint queue-length
//! GFs at polling epochs into cycle-time transforms.

use num_complex::Complex64;

use crate::branching::{infinite_product, Branching, Epoch, ProductEval};
use crate::distributions::busy_period;
use crate::error::{PollError, Result};
use crate::model::{Discipline, System};
use crate::scalar::{Scalar, Taylor};

/// Allowed disagreement between the two intervisit routes.
pub const ROUTE_TOL: f64 = 1e-8;

#[derive(Clone, Copy)]
pub struct Cycles<'a> {
    sys: &'a System,
    br: Branching<'a>,
}

impl<'a> Cycles<'a> {
    pub fn new(sys: &'a System) -> Self {
        Cycles { sys, br: Branching::new(sys) }
    }

    pub fn system(&self) -> &'a System {
        self.sys
    }

    pub fn theta<T: Scalar>(&self, i: usize, w: T) -> Result<T> {
        match self.sys.discipline(i) {
            Discipline::Exhaustive => busy_period(self.sys.service(i), self.sys.lambda(i), w),
            _ => Ok(self.sys.service(i).lst(w)),
        }
    }

    pub fn psi<T: Scalar>(&self, i: usize, w: T) -> Result<T> {
        let l = self.sys.lambda(i);
        if l == 0.0 {
            return Ok(w);
        }
        Ok(w + (T::one() - self.theta(i, w)?) * l)
    }

    /// `out[i] = psi_{i,end}(w)` for every queue. With `star`, the entry at
    /// `end` is the full-cycle composition instead of the identity.
    pub fn psi_chain<T: Scalar>(&self, end: usize, w: T, star: bool) -> Result<Vec<T>> {
        let n = self.sys.n();
        let mut out = vec![w; n];
        let mut x = w;
        let mut m = end;
        for _ in 1..n {
            x = self.psi(m, x)?;
            m = (m + n - 1) % n;
            out[m] = x;
        }
        if star {
            out[end] = self.psi(m, x)?;
        }
        Ok(out)
    }

    fn require_non_gg(&self) -> Result<()> {
        if self.sys.is_globally_gated() {
            return Err(PollError::Unsupported(
                "per-queue cycle transforms need gated/exhaustive queues".into(),
            ));
        }
        Ok(())
    }

    /// Transform of the cycle starting at a visit beginning to queue `j`.
    pub fn begin<T: Scalar>(&self, j: usize, w: T) -> Result<T> {
        if self.sys.is_globally_gated() {
            if j == 0 {
                return Ok(self.gg_cycle(w)?.value);
            }
            return Err(PollError::Unsupported(
                "globally gated cycles start at queue 1".into(),
            ));
        }
        let n = self.sys.n();
        let psi = self.psi_chain((j + n - 1) % n, w, false)?;
        let mut prod = T::one();
        let mut args = Vec::with_capacity(n);
        for (i, p) in psi.iter().enumerate() {
            prod = prod * self.sys.switch_over(i).lst(*p);
            args.push(self.theta(i, *p)?);
        }
        Ok(prod * self.br.visit(j, Epoch::Begin, &args)?)
    }

    /// Transform of the time between two visit completions of queue `j`.
    pub fn complete<T: Scalar>(&self, j: usize, w: T) -> Result<T> {
        self.require_non_gg()?;
        let psi_star = self.psi_chain(j, w, true)?;
        let mut prod = T::one();
        let mut args = Vec::with_capacity(self.sys.n());
        for (i, p) in psi_star.iter().enumerate() {
            prod = prod * self.sys.switch_over(i).lst(*p);
            // theta arguments use the plain chain, whose entry at j is w
            let q = if i == j { w } else { *p };
            args.push(self.theta(i, q)?);
        }
        Ok(prod * self.br.visit(j, Epoch::Complete, &args)?)
    }

    /// Intervisit transform through the completion cycle.
    pub fn intervisit_via_cycle<T: Scalar>(&self, i: usize, w: T) -> Result<T> {
        self.require_exhaustive(i)?;
        let l = self.sys.lambda(i);
        let arg = if l == 0.0 { w } else { w - (T::one() - self.sys.service(i).lst(w)) * l };
        self.complete(i, arg)
    }

    /// Intervisit transform through the visit-beginning GF at `1 - w/lambda_i`.
    pub fn intervisit_via_visit<T: Scalar>(&self, i: usize, w: T) -> Result<T> {
        self.require_exhaustive(i)?;
        let l = self.sys.lambda(i);
        if l == 0.0 {
            return Err(PollError::Unsupported(
                "the visit-beginning route needs a positive arrival rate".into(),
            ));
        }
        let mut z = vec![T::one(); self.sys.n()];
        z[i] = T::one() - w / l;
        self.br.visit(i, Epoch::Begin, &z)
    }

    /// Intervisit transform of exhaustive queue `i`, cross-checked between
    /// both routes wherever both are defined.
    pub fn intervisit<T: Scalar>(&self, i: usize, w: T) -> Result<T> {
        if self.sys.lambda(i) == 0.0 {
            return self.intervisit_via_cycle(i, w);
        }
        let a = self.intervisit_via_visit(i, w)?;
        let l = self.sys.lambda(i);
        let shifted = w.value() - l * (1.0 - self.sys.service(i).lst(w.value()));
        if shifted.re >= 0.0 {
            let b = self.intervisit_via_cycle(i, w)?;
            let d = a.distance(&b);
            if !(d <= ROUTE_TOL) {
                return Err(PollError::RouteMismatch(d));
            }
        }
        Ok(a)
    }

    fn require_exhaustive(&self, i: usize) -> Result<()> {
        if self.sys.discipline(i) != Discipline::Exhaustive {
            return Err(PollError::Unsupported(format!(
                "queue {} is not exhaustive",
                i + 1
            )));
        }
        Ok(())
    }

    /// `delta(w) = sum_ik lambda_ik (1 - beta_ik(w))`.
    pub fn delta<T: Scalar>(&self, w: T) -> T {
        let mut s = T::from_f64(0.0);
        for (i, k) in self.sys.classes() {
            let c = &self.sys.queue(i).classes[k];
            if c.rate != 0.0 {
                s = s + (T::one() - c.service.lst(w)) * c.rate;
            }
        }
        s
    }

    /// `prod_i sigma_i(w)`.
    pub fn switch_total<T: Scalar>(&self, w: T) -> T {
        (0..self.sys.n()).fold(T::one(), |p, i| p * self.sys.switch_over(i).lst(w))
    }

    /// Cycle transform of a globally gated system, `prod_n sigma(delta^n(w))`.
    pub fn gg_cycle<T: Scalar>(&self, w: T) -> Result<ProductEval<T>> {
        infinite_product(vec![w], self.sys.rho(), |x| {
            Ok((self.switch_total(x[0]), vec![self.delta(x[0])]))
        })
    }

    /// `|gamma(w) - sigma(w) gamma(delta(w))|` for a globally gated system.
    pub fn gg_functional_residual(&self, w: Complex64) -> Result<f64> {
        let lhs = self.gg_cycle(w)?.value;
        let rhs = self.switch_total(w) * self.gg_cycle(self.delta(w))?.value;
        Ok((lhs - rhs).norm())
    }

    /// First two moments of the cycle starting at a visit beginning to `j`.
    pub fn cycle_moments(&self, j: usize) -> Result<(f64, f64)> {
        Ok(lst_moments(self.begin(j, Taylor::variable())?))
    }

    /// First two moments of the completion-to-completion cycle of `j`.
    pub fn cycle_star_moments(&self, j: usize) -> Result<(f64, f64)> {
        Ok(lst_moments(self.complete(j, Taylor::variable())?))
    }

    pub fn intervisit_moments(&self, i: usize) -> Result<(f64, f64)> {
        Ok(lst_moments(self.intervisit(i, Taylor::variable())?))
    }
}

/// Mean and second moment from a transform expanded at zero.
pub fn lst_moments(t: Taylor) -> (f64, f64) {
    (-t.derivative(1), t.derivative(2))
}

fn check_omega(w: Complex64) -> Result<()> {
    if w.re < 0.0 || !w.re.is_finite() || !w.im.is_finite() {
        return Err(PollError::Domain(format!("Re w = {} must be nonnegative", w.re)));
    }
    Ok(())
}

pub fn cycle_lst_begin(sys: &System, j: usize, w: Complex64) -> Result<Complex64> {
    check_omega(w)?;
    Cycles::new(sys).begin(j, w)
}

pub fn cycle_lst_complete(sys: &System, j: usize, w: Complex64) -> Result<Complex64> {
    check_omega(w)?;
    Cycles::new(sys).complete(j, w)
}

pub fn intervisit_lst(sys: &System, i: usize, w: Complex64) -> Result<Complex64> {
    check_omega(w)?;
    Cycles::new(sys).intervisit(i, w)
}

/// Globally gated cycle transform, verified against its functional equation.
pub fn globally_gated_cycle_lst(sys: &System, w: Complex64) -> Result<Complex64> {
    check_omega(w)?;
    if !sys.is_globally_gated() {
        return Err(PollError::Unsupported("system is not globally gated".into()));
    }
    let c = Cycles::new(sys);
    let v = c.gg_cycle(w)?.value;
    let r = (v - c.switch_total(w) * c.gg_cycle(c.delta(w))?.value).norm();
    if r > 1e-10 {
        return Err(PollError::FormMismatch { what: "globally gated cycle functional equation", difference: r });
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::branching::{cycle_start_gf, visit_gf, GfVector};
    use crate::distributions::DistributionSpec;
    use crate::model::{PriorityClassSpec, QueueSpec, SystemSpec};
    use crate::presets::two_queue;

    fn c(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    fn sys(d: Discipline) -> System {
        System::new(two_queue(d)).unwrap()
    }

    fn three_mixed() -> System {
        let mut spec = two_queue(Discipline::Gated);
        spec.queues[1].discipline = Discipline::Exhaustive;
        spec.queues.push(QueueSpec {
            discipline: Discipline::Exhaustive,
            preemption: Default::default(),
            switch_over: DistributionSpec::deterministic(0.5),
            classes: vec![PriorityClassSpec { rate: 0.05, service: DistributionSpec::Erlang { shape: 2, rate: 2.0 } }],
        });
        System::new(spec).unwrap()
    }

    #[test]
    fn transforms_are_one_at_zero() {
        for s in [sys(Discipline::Gated), sys(Discipline::Exhaustive), three_mixed()] {
            let cy = Cycles::new(&s);
            for j in 0..s.n() {
                assert_eq!(cy.begin(j, c(0.0)).unwrap(), c(1.0));
                assert_eq!(cy.complete(j, c(0.0)).unwrap(), c(1.0));
            }
        }
    }

    #[test]
    fn mean_cycle_is_start_independent() {
        for s in [sys(Discipline::Gated), sys(Discipline::Exhaustive), three_mixed()] {
            let cy = Cycles::new(&s);
            for j in 0..s.n() {
                let (m, _) = cy.cycle_moments(j).unwrap();
                let (ms, _) = cy.cycle_star_moments(j).unwrap();
                assert!((m - s.mean_cycle()).abs() < 1e-9 * s.mean_cycle(), "{m}");
                assert!((ms - s.mean_cycle()).abs() < 1e-9 * s.mean_cycle(), "{ms}");
            }
        }
    }

    #[test]
    fn brute_force_chain_matches_recursion() {
        let s = three_mixed();
        let cy = Cycles::new(&s);
        let n = s.n();
        let w = Complex64::new(0.4, 0.3);
        for end in 0..n {
            let chain = cy.psi_chain(end, w, true).unwrap();
            for i in 0..n {
                // explicit index list i+1, ..., end (cyclic), applied innermost first
                let mut idx = Vec::new();
                let mut m = (i + 1) % n;
                loop {
                    idx.push(m);
                    if m == end {
                        break;
                    }
                    m = (m + 1) % n;
                }
                if i == end {
                    // star entry covers the whole cycle
                    idx.clear();
                    let mut m = (end + 1) % n;
                    for _ in 0..n {
                        idx.push(m);
                        m = (m + 1) % n;
                    }
                }
                let mut x = w;
                for &q in idx.iter().rev() {
                    x = cy.psi(q, x).unwrap();
                }
                assert!((x - chain[i]).norm() < 1e-14, "end {end} i {i}");
            }
        }
    }

    #[test]
    fn single_queue_cycle() {
        let spec = SystemSpec { queues: vec![two_queue(Discipline::Gated).queues[0].clone()] };
        let s = System::new(spec).unwrap();
        let cy = Cycles::new(&s);
        let w = c(0.7);
        let direct = s.switch_over(0).lst(w) * cycle_start_gf(&s, &GfVector(vec![s.service(0).lst(w)])).unwrap();
        assert!((cy.begin(0, w).unwrap() - direct).norm() < 1e-15);
    }

    #[test]
    fn gated_visit_beginning_marginal_is_cycle_arrivals() {
        let s = three_mixed();
        let cy = Cycles::new(&s);
        for z in [0.0, 0.3, 0.8] {
            let v = visit_gf(&s, 0, Epoch::Begin, &GfVector::real(&[z, 1.0, 1.0])).unwrap();
            let g = cy.begin(0, c(0.6 * (1.0 - z))).unwrap();
            assert!((v - g).norm() < 1e-12);
        }
    }

    #[test]
    fn intervisit_routes_agree_and_mean() {
        let s = sys(Discipline::Exhaustive);
        let cy = Cycles::new(&s);
        for w in [0.1, 0.5, 1.0, 2.5, 5.0] {
            let a = cy.intervisit_via_visit(0, c(w)).unwrap();
            let b = cy.intervisit_via_cycle(0, c(w)).unwrap();
            assert!((a - b).norm() < 1e-10, "w {w}");
        }
        let (m, _) = cy.intervisit_moments(0).unwrap();
        assert!((m - 4.0).abs() < 1e-9);
        let (m2, _) = cy.intervisit_moments(1).unwrap();
        assert!((m2 - 8.0).abs() < 1e-9);
    }

    #[test]
    fn intervisit_rejects_gated_queue() {
        let s = sys(Discipline::Gated);
        assert!(matches!(intervisit_lst(&s, 0, c(1.0)), Err(PollError::Unsupported(_))));
    }

    #[test]
    fn globally_gated_cycle() {
        let s = sys(Discipline::GloballyGated);
        let cy = Cycles::new(&s);
        assert_eq!(globally_gated_cycle_lst(&s, c(0.0)).unwrap(), c(1.0));
        let (m, _) = lst_moments(cy.gg_cycle(Taylor::variable()).unwrap().value);
        assert!((m - 10.0).abs() < 1e-9);
        for w in [0.05, 0.3, 1.0, 4.0] {
            assert!(cy.gg_functional_residual(c(w)).unwrap() < 1e-10);
            assert!(cy.gg_functional_residual(Complex64::new(w, 2.0 * w)).unwrap() < 1e-10);
        }
    }

    #[test]
    fn globally_gated_start_gf_is_cycle_arrivals() {
        let s = sys(Discipline::GloballyGated);
        let br = Branching::new(&s);
        let cy = Cycles::new(&s);
        for (z1, z2) in [(0.2, 0.9), (0.7, 0.1), (0.0, 0.0)] {
            let p = br.gg_cycle_start(&[c(z1), c(z2)]).unwrap().value;
            let g = cy.gg_cycle(c(0.6 * (1.0 - z1) + 0.2 * (1.0 - z2))).unwrap().value;
            assert!((p - g).norm() < 1e-12);
        }
        for w in [0.1, 1.0, 3.0] {
            let w = c(w);
            let lhs = cy.gg_cycle(w).unwrap().value;
            let b = s.service(0).lst(w);
            let rhs = cy.switch_total(w) * br.gg_cycle_start(&[b, b]).unwrap().value;
            assert!((lhs - rhs).norm() < 1e-12);
        }
    }

    #[test]
    fn rejects_negative_real_part() {
        let s = sys(Discipline::Gated);
        assert!(matches!(cycle_lst_begin(&s, 0, c(-0.1)), Err(PollError::Domain(_))));
    }

    #[test]
    fn completely_monotone_on_positive_axis() {
        let s = three_mixed();
        let cy = Cycles::new(&s);
        for j in 0..s.n() {
            for w in [0.05, 0.5, 2.0] {
                let t = cy.begin(j, Taylor::variable() + w).unwrap();
                assert!(t.c[0] > 0.0 && t.c[1] < 0.0 && t.c[2] > 0.0);
            }
        }
    }
}
