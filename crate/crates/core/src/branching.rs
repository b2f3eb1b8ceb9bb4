//! Joint queue lengths at polling epochs via a multitype branching process
//! with immigration.
//!
//! For gated and exhaustive systems the types are the queues; a customer
//! present at the start of a cycle (visit beginning to queue 0) is replaced
//! during that cycle by a random population with GF `h_i`. For globally gated
//! systems every class is its own type and all arrivals of a cycle are served
//! in the next one.
//!
//! The cycle-start GF is the infinite product `prod_n g(f_n(z))`, truncated
//! once a factor is within `PRODUCT_TOL` of one.

use num_complex::Complex64;

use crate::distributions::busy_period;
use crate::error::{PollError, Result};
use crate::model::{Discipline, System};
use crate::scalar::Scalar;

pub const PRODUCT_TOL: f64 = 1e-14;
/// Tail bound above which a truncated product is rejected.
pub const MAX_TAIL_BOUND: f64 = 1e-10;

/// Hard cap on product terms for a given total load.
pub fn max_terms(rho: f64) -> usize {
    if rho <= 0.0 {
        50
    } else {
        (PRODUCT_TOL.ln() / rho.ln()).ceil() as usize + 50
    }
}

/// A point of the (closed) polydisc of GF arguments.
#[derive(Clone, Debug, PartialEq)]
pub struct GfVector(pub Vec<Complex64>);

impl GfVector {
    pub fn ones(n: usize) -> Self {
        GfVector(vec![Complex64::new(1.0, 0.0); n])
    }

    pub fn real(values: &[f64]) -> Self {
        GfVector(values.iter().map(|&x| Complex64::new(x, 0.0)).collect())
    }

    fn check(&self, n: usize) -> Result<()> {
        if self.0.len() != n {
            return Err(PollError::BadShape(format!(
                "GF argument has {} entries, system has {n} types",
                self.0.len()
            )));
        }
        if let Some(z) = self.0.iter().find(|z| z.norm() > 1.0 + 1e-12) {
            return Err(PollError::Domain(format!("|z| = {} exceeds 1", z.norm())));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Epoch {
    Begin,
    Complete,
}

/// Value of a truncated infinite product with its diagnostics.
#[derive(Clone, Copy, Debug)]
pub struct ProductEval<T> {
    pub value: T,
    pub terms: usize,
    pub tail_bound: f64,
}

/// Multiply `factor(z_n)` over the orbit `z_{n+1} = step(z_n)` until the
/// factors settle at one.
pub(crate) fn infinite_product<T, F>(start: Vec<T>, rho: f64, mut next: F) -> Result<ProductEval<T>>
where
    T: Scalar,
    F: FnMut(&[T]) -> Result<(T, Vec<T>)>,
{
    let cap = max_terms(rho);
    let mut z = start;
    let mut acc = T::one();
    let mut prev_dev = f64::NAN;
    let mut ratio = rho.clamp(0.0, 0.999);
    for n in 0..cap {
        let (factor, z_next) = next(&z)?;
        if !factor.is_finite() {
            return Err(PollError::Truncation { terms: n, tail_bound: f64::INFINITY });
        }
        acc = acc * factor;
        let dev = factor.factor_deviation(&acc);
        if prev_dev > 0.0 && dev > 0.0 {
            ratio = (dev / prev_dev).clamp(ratio.min(rho), 0.999);
        }
        if dev < PRODUCT_TOL {
            return Ok(ProductEval {
                value: acc,
                terms: n + 1,
                tail_bound: dev * ratio / (1.0 - ratio),
            });
        }
        prev_dev = dev;
        z = z_next;
    }
    let tail_bound = prev_dev * ratio / (1.0 - ratio);
    if tail_bound > MAX_TAIL_BOUND {
        return Err(PollError::Truncation { terms: cap, tail_bound });
    }
    Ok(ProductEval { value: acc, terms: cap, tail_bound })
}

/// Branching-process view of a validated system.
#[derive(Clone, Copy)]
pub struct Branching<'a> {
    sys: &'a System,
}

impl<'a> Branching<'a> {
    pub fn new(sys: &'a System) -> Self {
        Branching { sys }
    }

    pub fn system(&self) -> &'a System {
        self.sys
    }

    /// `sum_j lambda_j (1 - z_j)`, optionally skipping one queue.
    fn arrival_exponent<T: Scalar>(&self, z: &[T], skip: Option<usize>) -> T {
        let mut s = T::from_f64(0.0);
        for (j, zj) in z.iter().enumerate() {
            if Some(j) == skip {
                continue;
            }
            let l = self.sys.lambda(j);
            if l != 0.0 {
                s = s + (T::one() - *zj) * l;
            }
        }
        s
    }

    /// Replacement GF of one queue-`i` customer during its visit.
    pub fn h<T: Scalar>(&self, i: usize, z: &[T]) -> Result<T> {
        match self.sys.discipline(i) {
            Discipline::Gated => Ok(self.sys.service(i).lst(self.arrival_exponent(z, None))),
            Discipline::Exhaustive => {
                let bp = self.sys.busy_period(i);
                busy_period(&bp.base, bp.rate, self.arrival_exponent(z, Some(i)))
            }
            Discipline::GloballyGated => Err(PollError::Unsupported(
                "queue-level offspring is undefined for globally gated systems".into(),
            )),
        }
    }

    /// All offspring GFs `f^(1..N)(z)` in one downward pass.
    pub fn offspring_all<T: Scalar>(&self, z: &[T]) -> Result<Vec<T>> {
        if self.sys.is_globally_gated() {
            return Err(PollError::Unsupported(
                "use the class-level offspring for globally gated systems".into(),
            ));
        }
        let n = self.sys.n();
        let mut w = z.to_vec();
        for i in (0..n).rev() {
            w[i] = self.h(i, &w)?;
        }
        Ok(w)
    }

    /// Immigration GF given `z` and the offspring values `f(z)`.
    fn immigration_with<T: Scalar>(&self, z: &[T], f: &[T]) -> T {
        let n = self.sys.n();
        let mut g = T::one();
        for i in 0..n {
            let mut s = T::from_f64(0.0);
            for j in 0..n {
                let l = self.sys.lambda(j);
                if l == 0.0 {
                    continue;
                }
                let zj = if j <= i { z[j] } else { f[j] };
                s = s + (T::one() - zj) * l;
            }
            g = g * self.sys.switch_over(i).lst(s);
        }
        g
    }

    pub fn immigration<T: Scalar>(&self, z: &[T]) -> Result<T> {
        let f = self.offspring_all(z)?;
        Ok(self.immigration_with(z, &f))
    }

    /// Joint queue-length GF at the start of a cycle, with diagnostics.
    ///
    /// For globally gated systems the argument is per queue and every class
    /// of a queue receives that queue's argument.
    pub fn cycle_start<T: Scalar>(&self, z: &[T]) -> Result<ProductEval<T>> {
        if self.sys.is_globally_gated() {
            let zc = self.expand_to_classes(z);
            return self.gg_cycle_start(&zc);
        }
        infinite_product(z.to_vec(), self.sys.rho(), |zn| {
            let f = self.offspring_all(zn)?;
            let g = self.immigration_with(zn, &f);
            Ok((g, f))
        })
    }

    fn expand_to_classes<T: Scalar>(&self, z: &[T]) -> Vec<T> {
        self.sys.classes().map(|(i, _)| z[i]).collect()
    }

    /// Joint GF at a visit beginning or completion of queue `i`.
    pub fn visit<T: Scalar>(&self, i: usize, epoch: Epoch, z: &[T]) -> Result<T> {
        if self.sys.is_globally_gated() {
            if i == 0 && epoch == Epoch::Begin {
                return Ok(self.cycle_start(z)?.value);
            }
            return Err(PollError::Unsupported(
                "globally gated visit GFs are only available at the cycle start".into(),
            ));
        }
        let mut arg = z.to_vec();
        if epoch == Epoch::Complete {
            arg[i] = self.h(i, z)?;
        }
        let mut factor = T::one();
        for m in (0..i).rev() {
            factor = factor * self.sys.switch_over(m).lst(self.arrival_exponent(&arg, None));
            arg[m] = self.h(m, &arg)?;
        }
        Ok(factor * self.cycle_start(&arg)?.value)
    }

    /// Joint GF over all classes at a visit epoch of queue `i`: per-queue
    /// rate-weighted averages of the class arguments, fed to [`Self::visit`].
    pub fn priority_visit<T: Scalar>(&self, i: usize, epoch: Epoch, z: &[Vec<T>]) -> Result<T> {
        if z.len() != self.sys.n() {
            return Err(PollError::BadShape("one argument list per queue expected".into()));
        }
        if self.sys.is_globally_gated() && i == 0 && epoch == Epoch::Begin {
            let flat: Vec<T> = z.iter().flatten().copied().collect();
            return Ok(self.gg_cycle_start(&flat)?.value);
        }
        let mut zq = Vec::with_capacity(z.len());
        for (j, zj) in z.iter().enumerate() {
            let q = self.sys.queue(j);
            if zj.len() != q.classes.len() {
                return Err(PollError::BadShape(format!(
                    "queue {} expects {} class arguments",
                    j + 1,
                    q.classes.len()
                )));
            }
            let lam = self.sys.lambda(j);
            if lam == 0.0 {
                zq.push(T::one());
                continue;
            }
            let mut s = T::from_f64(0.0);
            for (c, zc) in q.classes.iter().zip(zj) {
                s = s + *zc * (c.rate / lam);
            }
            zq.push(s);
        }
        self.visit(i, epoch, &zq)
    }

    fn class_exponent<T: Scalar>(&self, zc: &[T]) -> T {
        let mut s = T::from_f64(0.0);
        for ((i, k), z) in self.sys.classes().zip(zc) {
            let r = self.sys.queue(i).classes[k].rate;
            if r != 0.0 {
                s = s + (T::one() - *z) * r;
            }
        }
        s
    }

    /// Class-level offspring of a globally gated system.
    pub fn gg_offspring_all<T: Scalar>(&self, zc: &[T]) -> Vec<T> {
        let x = self.class_exponent(zc);
        self.sys
            .classes()
            .map(|(i, k)| self.sys.queue(i).classes[k].service.lst(x))
            .collect()
    }

    pub fn gg_immigration<T: Scalar>(&self, zc: &[T]) -> T {
        let x = self.class_exponent(zc);
        (0..self.sys.n()).fold(T::one(), |g, i| g * self.sys.switch_over(i).lst(x))
    }

    /// Class-level cycle-start GF of a globally gated system.
    pub fn gg_cycle_start<T: Scalar>(&self, zc: &[T]) -> Result<ProductEval<T>> {
        if zc.len() != self.sys.class_count() {
            return Err(PollError::BadShape("one argument per class expected".into()));
        }
        infinite_product(zc.to_vec(), self.sys.rho(), |zn| {
            Ok((self.gg_immigration(zn), self.gg_offspring_all(zn)))
        })
    }
}

fn require_gated_or_exhaustive(sys: &System) -> Result<()> {
    if sys.is_globally_gated() {
        return Err(PollError::Unsupported(
            "operation defined for gated/exhaustive systems".into(),
        ));
    }
    Ok(())
}

/// Offspring GF `f^(i)(z)` of queue `i`.
pub fn offspring_gf(sys: &System, i: usize, z: &GfVector) -> Result<Complex64> {
    require_gated_or_exhaustive(sys)?;
    z.check(sys.n())?;
    Ok(Branching::new(sys).offspring_all(&z.0)?[i])
}

/// Total immigration GF `g(z)`.
pub fn immigration_gf(sys: &System, z: &GfVector) -> Result<Complex64> {
    require_gated_or_exhaustive(sys)?;
    z.check(sys.n())?;
    Branching::new(sys).immigration(&z.0)
}

/// Joint queue-length GF at the start of a cycle (visit beginning to queue 0).
pub fn cycle_start_gf(sys: &System, z: &GfVector) -> Result<Complex64> {
    Ok(cycle_start_gf_diagnostics(sys, z)?.value)
}

pub fn cycle_start_gf_diagnostics(sys: &System, z: &GfVector) -> Result<ProductEval<Complex64>> {
    z.check(sys.n())?;
    Branching::new(sys).cycle_start(&z.0)
}

pub fn visit_gf(sys: &System, i: usize, epoch: Epoch, z: &GfVector) -> Result<Complex64> {
    z.check(sys.n())?;
    Branching::new(sys).visit(i, epoch, &z.0)
}

pub fn priority_visit_gf(sys: &System, i: usize, epoch: Epoch, z: &[Vec<Complex64>]) -> Result<Complex64> {
    for zj in z {
        GfVector(zj.clone()).check(zj.len())?;
    }
    Branching::new(sys).priority_visit(i, epoch, z)
}
