//! Numerical differentiation at the origin and transform inversion.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;

use crate::error::{PollError, Result};
use crate::model::System;
use crate::waiting::SharedWaitingLst;

/// Largest relative disagreement tolerated between extrapolation levels.
pub const EXTRAPOLATION_TOL: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransformKind {
    /// Laplace–Stieltjes transform, argument `w` with `Re w >= 0`.
    Lst,
    /// Probability generating function, argument `|z| <= 1`.
    Gf,
}

type Evaluator = dyn Fn(Complex64) -> Result<Complex64> + Send + Sync;

/// An evaluable transform with the metadata inversion needs.
#[derive(Clone)]
pub struct TransformFn {
    eval: Arc<Evaluator>,
    pub kind: TransformKind,
    /// Typical size of the variable (a mean, if known).
    pub scale: f64,
    /// Mass at zero, when known in advance.
    pub atom: Option<f64>,
}

impl TransformFn {
    pub fn lst<F>(scale: f64, f: F) -> Self
    where
        F: Fn(Complex64) -> Result<Complex64> + Send + Sync + 'static,
    {
        TransformFn { eval: Arc::new(f), kind: TransformKind::Lst, scale: scale.max(f64::MIN_POSITIVE), atom: None }
    }

    pub fn gf<F>(scale: f64, f: F) -> Self
    where
        F: Fn(Complex64) -> Result<Complex64> + Send + Sync + 'static,
    {
        TransformFn { eval: Arc::new(f), kind: TransformKind::Gf, scale: scale.max(f64::MIN_POSITIVE), atom: None }
    }

    pub fn with_atom(mut self, atom: f64) -> Self {
        self.atom = Some(atom);
        self
    }

    pub fn eval(&self, x: Complex64) -> Result<Complex64> {
        (self.eval)(x)
    }

    /// The transform as a function of `w` on the Laplace side; a GF `f` is
    /// read as the LST `f(exp(-w))` of the same count.
    fn on_laplace_side(&self, w: Complex64) -> Result<Complex64> {
        match self.kind {
            TransformKind::Lst => self.eval(w),
            TransformKind::Gf => self.eval((-w).exp()),
        }
    }
}

/// Extrapolate estimates at steps `h, h/2, h/4, ...` whose errors are even
/// in `h`. Returns the estimate and its change from the previous level.
fn richardson(mut row: Vec<f64>) -> (f64, f64) {
    let mut factor = 4.0;
    let mut previous = row[row.len() - 1];
    while row.len() > 1 {
        previous = row[row.len() - 1];
        row = row.windows(2).map(|p| (factor * p[1] - p[0]) / (factor - 1.0)).collect();
        factor *= 4.0;
    }
    (row[0], (row[0] - previous).abs())
}

/// `E(X)` or `E(X^2)` of an LST (`(-1)^order f^(order)(0)`), or the
/// factorial moment of a GF, by differentiating along the imaginary axis.
///
/// At `w = ih`, `Im f = -h E(X) + O(h^3)` and `Re f = 1 - h^2 E(X^2)/2 + O(h^4)`,
/// so neither estimate suffers the cancellation of real central differences
/// and no evaluation leaves the closed right half-plane.
pub fn derivative_at_zero(f: &TransformFn, order: u32) -> Result<f64> {
    if !(1..=2).contains(&order) {
        return Err(PollError::Domain(format!("order {order} not supported")));
    }
    let moment = |k: u32| -> Result<f64> {
        let h0 = 1e-3 / f.scale;
        let mut d = Vec::with_capacity(4);
        for j in 0..4 {
            let h = h0 / f64::from(1u32 << j);
            let v = f.on_laplace_side(Complex64::new(0.0, h))?;
            d.push(if k == 1 { -v.im / h } else { 2.0 * (1.0 - v.re) / (h * h) });
        }
        let (est, spread) = richardson(d);
        if spread > EXTRAPOLATION_TOL * est.abs().max(f64::MIN_POSITIVE) {
            return Err(PollError::IllConditioned(spread / est.abs().max(f64::MIN_POSITIVE)));
        }
        Ok(est)
    };
    match (f.kind, order) {
        (_, 1) => moment(1),
        (TransformKind::Lst, _) => moment(2),
        (TransformKind::Gf, _) => Ok(moment(2)? - moment(1)?),
    }
}

/// Parameters of the Fourier-series inversion with Euler summation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EulerParams {
    /// Damping; the discretization error is about `exp(-a)`.
    pub a: f64,
    /// Total number of series terms.
    pub terms: usize,
    /// Partial sums entering the binomial average.
    pub euler: usize,
    /// Largest accepted error estimate.
    pub tolerance: f64,
}

impl Default for EulerParams {
    fn default() -> Self {
        EulerParams { a: 23.0, terms: 40, euler: 12, tolerance: 1e-8 }
    }
}

impl EulerParams {
    fn check(&self) -> Result<()> {
        if self.euler < 2 || self.euler >= self.terms || !(self.a > 0.0) {
            return Err(PollError::Config(format!(
                "inversion needs 2 <= euler ({}) < terms ({}) and a > 0",
                self.euler, self.terms
            )));
        }
        Ok(())
    }
}

/// Values of a distribution on a grid with error estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct InversionGrid {
    pub abscissae: Vec<f64>,
    pub values: Vec<f64>,
    pub errors: Vec<f64>,
}

impl InversionGrid {
    pub fn max_error(&self) -> f64 {
        self.errors.iter().copied().fold(0.0, f64::max)
    }

    /// Linear interpolation of the values, clamped at the grid ends.
    pub fn interpolate(&self, x: f64) -> f64 {
        let xs = &self.abscissae;
        if x <= xs[0] {
            return self.values[0];
        }
        let last = xs.len() - 1;
        if x >= xs[last] {
            return self.values[last];
        }
        let j = xs.partition_point(|&a| a <= x);
        let (x0, x1) = (xs[j - 1], xs[j]);
        let (y0, y1) = (self.values[j - 1], self.values[j]);
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    }
}

fn binomial_row(m: usize) -> Vec<f64> {
    let mut row = vec![1.0];
    for _ in 0..m {
        let mut next = vec![1.0; row.len() + 1];
        for j in 1..row.len() {
            next[j] = row[j - 1] + row[j];
        }
        row = next;
    }
    let total = 2f64.powi(m as i32);
    row.into_iter().map(|b| b / total).collect()
}

/// `F(t)` and an error estimate for one `t > 0`.
fn euler_cdf(f: &TransformFn, t: f64, p: &EulerParams) -> Result<(f64, f64)> {
    let a = p.a;
    let cdf_transform = |s: Complex64| -> Result<Complex64> { Ok(f.eval(s)? / s) };
    let scale = (a / 2.0).exp() / t;
    let mut partial = Vec::with_capacity(p.terms);
    let mut sum = cdf_transform(Complex64::new(a / (2.0 * t), 0.0))?.re / 2.0;
    for k in 1..=p.terms {
        let s = Complex64::new(a, 2.0 * PI * k as f64) / (2.0 * t);
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        sum += sign * cdf_transform(s)?.re;
        partial.push(sum * scale);
    }
    let m = p.euler - 1;
    let n = p.terms - 1 - m;
    let weights = binomial_row(m);
    let average = |start: usize| weights.iter().enumerate().map(|(j, w)| w * partial[start + j]).sum::<f64>();
    let est = average(n);
    let prev = average(n - 1);
    Ok((est, (est - prev).abs()))
}

/// CDF values of the distribution with LST `f` on `t_grid` by Fourier-series
/// inversion of `f(s)/s` with Euler summation. Points `t <= 0` get the mass
/// at zero.
pub fn invert_lst_unchecked(f: &TransformFn, t_grid: &[f64], p: &EulerParams) -> Result<InversionGrid> {
    p.check()?;
    if f.kind != TransformKind::Lst {
        return Err(PollError::Domain("LST inversion needs an LST".into()));
    }
    // Without a known atom, read it off far along the real axis; the change
    // over the last two decades bounds the error.
    let atom = match f.atom {
        Some(a) => (a, 0.0),
        None => {
            let near = f.eval(Complex64::new(1e10 / f.scale, 0.0))?.re;
            let far = f.eval(Complex64::new(1e12 / f.scale, 0.0))?.re;
            (far, (near - far).abs())
        }
    };
    let results: Vec<Result<(f64, f64)>> = t_grid
        .par_iter()
        .map(|&t| if t <= 0.0 { Ok(atom) } else { euler_cdf(f, t, p) })
        .collect();
    let mut values = Vec::with_capacity(t_grid.len());
    let mut errors = Vec::with_capacity(t_grid.len());
    for r in results {
        let (v, e) = r?;
        values.push(v);
        errors.push(e);
    }
    Ok(InversionGrid { abscissae: t_grid.to_vec(), values, errors })
}

/// [`invert_lst_unchecked`], failing when any error estimate exceeds the
/// tolerance.
pub fn invert_lst(f: &TransformFn, t_grid: &[f64], p: &EulerParams) -> Result<InversionGrid> {
    let g = invert_lst_unchecked(f, t_grid, p)?;
    let e = g.max_error();
    if !(e <= p.tolerance) {
        return Err(PollError::Accuracy(e));
    }
    Ok(g)
}

/// Default aliasing exponent: the aliasing error is about `10^-12`.
pub const DEFAULT_ALIASING_DIGITS: f64 = 12.0;

/// Probabilities `p_0..p_{n_max}` of a count with GF `f`, by an FFT over a
/// circle of radius `r` chosen so that `r^M = 10^-digits`.
pub fn invert_gf(f: &TransformFn, n_max: usize, digits: f64) -> Result<InversionGrid> {
    if f.kind != TransformKind::Gf {
        return Err(PollError::Domain("GF inversion needs a GF".into()));
    }
    if !(digits > 0.0) {
        return Err(PollError::Config("aliasing digits must be positive".into()));
    }
    let m = 2 * (n_max + 1);
    let r = 10f64.powf(-digits / m as f64);
    let points: Vec<Result<Complex64>> = (0..m)
        .into_par_iter()
        .map(|j| f.eval(Complex64::from_polar(r, 2.0 * PI * j as f64 / m as f64)))
        .collect();
    let mut buf = points.into_iter().collect::<Result<Vec<_>>>()?;
    FftPlanner::new().plan_fft_forward(m).process(&mut buf);
    let alias = 10f64.powf(-digits);
    let alias = alias / (1.0 - alias);
    let mut values = Vec::with_capacity(n_max + 1);
    let mut errors = Vec::with_capacity(n_max + 1);
    let mut rn = 1.0;
    for x in buf.iter().take(n_max + 1) {
        values.push(x.re / (m as f64 * rn));
        errors.push(alias + f64::EPSILON * m as f64 / rn);
        rn *= r;
    }
    let total: f64 = values.iter().sum();
    if total > 1.0 + 1e-8 {
        return Err(PollError::Accuracy(total - 1.0));
    }
    Ok(InversionGrid { abscissae: (0..=n_max).map(|n| n as f64).collect(), values, errors })
}

/// Uniform grid on `[0, mean + 15 sd]` for a waiting-time CDF.
pub fn cdf_grid(mean: f64, second_moment: f64, points: usize) -> Vec<f64> {
    let sd = (second_moment - mean * mean).max(0.0).sqrt();
    let t_max = (mean + 15.0 * sd).max(f64::MIN_POSITIVE);
    let points = points.max(2);
    (0..points).map(|j| t_max * j as f64 / (points - 1) as f64).collect()
}

/// Waiting-time CDF of class `(i, k)` on `t_grid`.
pub fn waiting_cdf(sys: Arc<System>, i: usize, k: usize, t_grid: &[f64], p: &EulerParams) -> Result<InversionGrid> {
    let lst = SharedWaitingLst::new(sys.clone(), i, k)?;
    let scale = lst.mean().max(1e-3 * sys.mean_cycle());
    let f = TransformFn::lst(scale, move |w| lst.eval(w));
    invert_lst(&f, t_grid, p)
}

/// Waiting-time CDF of class `(i, k)` on [`cdf_grid`] with `points` points.
pub fn waiting_cdf_auto(sys: Arc<System>, i: usize, k: usize, points: usize, p: &EulerParams) -> Result<InversionGrid> {
    let lst = SharedWaitingLst::new(sys.clone(), i, k)?;
    let grid = cdf_grid(lst.mean(), lst.second_moment(), points);
    waiting_cdf(sys, i, k, &grid, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::DistributionSpec;

    fn dist(d: DistributionSpec) -> TransformFn {
        let mean = d.mean();
        TransformFn::lst(mean, move |w| Ok(d.lst(w)))
    }

    #[test]
    fn derivatives_of_closed_forms() {
        let e = dist(DistributionSpec::exponential(1.0));
        assert!((derivative_at_zero(&e, 1).unwrap() - 1.0).abs() < 1e-7);
        assert!((derivative_at_zero(&e, 2).unwrap() - 2.0).abs() < 1e-7);
        let d = dist(DistributionSpec::deterministic(2.0));
        assert!((derivative_at_zero(&d, 2).unwrap() - 4.0).abs() < 1e-7);
        let er = dist(DistributionSpec::Erlang { shape: 3, rate: 0.5 });
        assert!((derivative_at_zero(&er, 2).unwrap() - 48.0).abs() < 48.0 * 1e-7);
    }

    #[test]
    fn gf_factorial_moments() {
        // Poisson(2): E N = 2, E N(N-1) = 4
        let p = TransformFn::gf(2.0, |z| Ok(((z - 1.0) * 2.0).exp()));
        assert!((derivative_at_zero(&p, 1).unwrap() - 2.0).abs() < 1e-7);
        assert!((derivative_at_zero(&p, 2).unwrap() - 4.0).abs() < 1e-7);
    }

    #[test]
    fn rough_transform_is_flagged() {
        // |w|^(3/2) has no second derivative at the origin
        let f = TransformFn::lst(1.0, |w: Complex64| Ok(1.0 - w + w.powf(1.5)));
        assert!(matches!(derivative_at_zero(&f, 2), Err(PollError::IllConditioned(_))));
    }

    #[test]
    fn inverts_exponential_and_erlang() {
        let p = EulerParams::default();
        let g = invert_lst(&dist(DistributionSpec::exponential(1.0)), &[0.0, 0.5, 1.0, 3.0], &p).unwrap();
        assert!(g.values[0].abs() < 1e-6);
        assert!((g.values[2] - (1.0 - (-1.0f64).exp())).abs() < 1e-7);
        for (t, v) in g.abscissae.iter().zip(&g.values).skip(1) {
            assert!((v - (1.0 - (-t).exp())).abs() < 1e-7);
        }
        let er = invert_lst(&dist(DistributionSpec::Erlang { shape: 2, rate: 1.0 }), &[2.0], &p).unwrap();
        assert!((er.values[0] - (1.0 - 3.0 * (-2.0f64).exp())).abs() < 1e-7);
    }

    #[test]
    fn reports_atom_at_zero() {
        let mix = DistributionSpec::mixture(vec![
            (0.3, DistributionSpec::deterministic(0.0)),
            (0.7, DistributionSpec::exponential(1.0)),
        ]);
        let g = invert_lst(&dist(mix), &[0.0, 1.0], &EulerParams::default()).unwrap();
        assert!((g.values[0] - 0.3).abs() < 1e-6);
        assert!((g.values[1] - (0.3 + 0.7 * (1.0 - (-1.0f64).exp()))).abs() < 1e-7);
    }

    #[test]
    fn bad_parameters_rejected() {
        let p = EulerParams { euler: 50, ..Default::default() };
        assert!(matches!(
            invert_lst(&dist(DistributionSpec::exponential(1.0)), &[1.0], &p),
            Err(PollError::Config(_))
        ));
    }

    #[test]
    fn inverts_generating_functions() {
        let poisson = TransformFn::gf(1.0, |z| Ok((z - 1.0).exp()));
        let g = invert_gf(&poisson, 30, DEFAULT_ALIASING_DIGITS).unwrap();
        assert!((g.values[0] - (-1.0f64).exp()).abs() < 1e-10);
        assert!((g.values[3] - (-1.0f64).exp() / 6.0).abs() < 1e-10);
        let point = invert_gf(&TransformFn::gf(1.0, Ok), 5, DEFAULT_ALIASING_DIGITS).unwrap();
        assert!((point.values[1] - 1.0).abs() < 1e-10);
        assert!(point.values.iter().enumerate().all(|(n, p)| n == 1 || p.abs() < 1e-10));
        let one = invert_gf(&TransformFn::gf(1.0, |_| Ok(Complex64::new(1.0, 0.0))), 5, 12.0).unwrap();
        assert!((one.values[0] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn round_trip_through_inversion() {
        // re-transform the inverted Erlang CDF by trapezoid and compare
        let d = DistributionSpec::Erlang { shape: 2, rate: 2.0 };
        let grid: Vec<f64> = (1..=600).map(|j| j as f64 * 0.025).collect();
        let g = invert_lst(&dist(d.clone()), &grid, &EulerParams::default()).unwrap();
        for w in [0.5, 1.0, 2.0] {
            // f(w) = w * integral of exp(-w t) F(t) dt
            let mut acc = 0.0;
            let mut prev = (0.0, 0.0);
            for (t, v) in grid.iter().zip(&g.values) {
                let y = (-w * t).exp() * v;
                acc += 0.5 * (y + prev.1) * (t - prev.0);
                prev = (*t, y);
            }
            acc += (-w * prev.0).exp() / w;
            let want = d.lst(Complex64::new(w, 0.0)).re;
            assert!((w * acc - want).abs() < 1e-3, "{} vs {want}", w * acc);
        }
    }

    #[test]
    fn interpolation() {
        let g = InversionGrid { abscissae: vec![0.0, 1.0, 2.0], values: vec![0.0, 0.5, 1.0], errors: vec![0.0; 3] };
        assert_eq!(g.interpolate(0.5), 0.25);
        assert_eq!(g.interpolate(-1.0), 0.0);
        assert_eq!(g.interpolate(5.0), 1.0);
    }

    #[test]
    fn waiting_cdf_integrates_to_the_mean() {
        use crate::model::Discipline;
        use crate::presets;
        for d in [Discipline::Gated, Discipline::Exhaustive, Discipline::GloballyGated] {
            let sys = Arc::new(System::new(presets::two_queue(d)).unwrap());
            let mean = crate::waiting::mean_waiting(&sys, 0, 0).unwrap();
            let g = waiting_cdf_auto(sys, 0, 0, 601, &EulerParams::default()).unwrap();
            assert!(g.values.windows(2).all(|w| w[1] >= w[0] - 1e-8), "{d:?}");
            assert!((g.values.last().unwrap() - 1.0).abs() < 1e-4, "{d:?}");
            // Trapezoid rule for the integral of 1 - F.
            let xs = &g.abscissae;
            let tail: f64 = (1..xs.len())
                .map(|j| (xs[j] - xs[j - 1]) * (2.0 - g.values[j] - g.values[j - 1]) / 2.0)
                .sum();
            assert!((tail - mean).abs() < 2e-3 * mean, "{d:?}: {tail} vs {mean}");
        }
    }
}
