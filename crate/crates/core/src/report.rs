//! Analytic summary of a system, in the row form the command line writes.

use serde::Serialize;

use crate::branching::{cycle_start_gf_diagnostics, GfVector};
use crate::cycletime::Cycles;
use crate::error::Result;
use crate::model::{Discipline, System};
use crate::waiting::{
    conservation_lhs, conservation_rhs, mean_service_in_system, mean_waiting_with, Residuals,
};

/// How the infinite product behind the cycle-start GF was truncated at `z = 0`,
/// the slowest-converging real point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Truncation {
    pub terms: usize,
    pub tail_bound: f64,
}

/// Analytic quantities of one system. Row keys use 1-based indices and match
/// the simulator's estimate keys where both exist.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub rows: Vec<(String, f64)>,
    /// Load-weighted mean waits minus the pseudo-conservation right-hand side.
    pub conservation_residual: f64,
    pub truncation: Truncation,
}

impl AnalysisReport {
    pub fn build(sys: &System) -> Result<Self> {
        let n = sys.n();
        let cy = Cycles::new(sys);
        let res = Residuals::compute(sys)?;
        let mut rows: Vec<(String, f64)> = Vec::new();
        let mut push = |k: String, v: f64| rows.push((k, v));

        push("rho".into(), sys.rho());
        for i in 0..n {
            push(format!("rho[{}]", i + 1), sys.rho_queue(i));
        }
        push("EC".into(), sys.mean_cycle());

        let gg = sys.is_globally_gated();
        for j in 0..n {
            if gg && j > 0 {
                continue;
            }
            let (m1, m2) = cy.cycle_moments(j)?;
            push(format!("C[{}]", j + 1), m1);
            push(format!("C2[{}]", j + 1), m2);
        }
        if !gg {
            for j in 0..n {
                let (m1, m2) = cy.cycle_star_moments(j)?;
                push(format!("Cstar[{}]", j + 1), m1);
                push(format!("Cstar2[{}]", j + 1), m2);
            }
        }
        for i in 0..n {
            push(format!("I[{}]", i + 1), sys.mean_intervisit(i));
            if sys.discipline(i) == Discipline::Exhaustive {
                let (_, m2) = cy.intervisit_moments(i)?;
                push(format!("I2[{}]", i + 1), m2);
            }
        }

        let mut means = Vec::with_capacity(n);
        for i in 0..n {
            let q = sys.queue(i);
            let mut row = Vec::with_capacity(q.classes.len());
            let mut overall = 0.0;
            for (k, c) in q.classes.iter().enumerate() {
                let w = mean_waiting_with(sys, &res, i, k)?;
                let b = mean_service_in_system(sys, i, k)?;
                push(format!("W[{},{}]", i + 1, k + 1), w);
                push(format!("T[{},{}]", i + 1, k + 1), w + b);
                push(format!("L[{},{}]", i + 1, k + 1), c.rate * (w + b));
                if sys.lambda(i) > 0.0 {
                    overall += c.rate / sys.lambda(i) * w;
                }
                row.push(w);
            }
            push(format!("W[{}]", i + 1), overall);
            means.push(row);
        }

        let zero = GfVector::real(&vec![0.0; n]);
        let diag = cycle_start_gf_diagnostics(sys, &zero)?;
        push("P_empty_cycle_start".into(), diag.value.re);

        let residual = conservation_lhs(sys, &means) - conservation_rhs(sys);
        push("conservation_residual".into(), residual);

        Ok(AnalysisReport {
            rows,
            conservation_residual: residual,
            truncation: Truncation {
                terms: diag.terms,
                tail_bound: diag.tail_bound,
            },
        })
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.rows.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    #[test]
    fn two_queue_rows() {
        for d in [Discipline::Gated, Discipline::Exhaustive, Discipline::GloballyGated] {
            let sys = System::new(presets::two_queue(d)).unwrap();
            let r = AnalysisReport::build(&sys).unwrap();
            assert!((r.get("EC").unwrap() - 10.0).abs() < 1e-12);
            assert!((r.get("C[1]").unwrap() - 10.0).abs() < 1e-9);
            assert!(r.conservation_residual.abs() < 1e-9);
            let p = r.get("P_empty_cycle_start").unwrap();
            assert!(p > 0.0 && p < 1.0);
            assert!(r.truncation.tail_bound < 1e-10);
        }
    }

    #[test]
    fn rows_are_deterministic() {
        let sys = System::new(presets::two_queue(Discipline::Exhaustive)).unwrap();
        let a = AnalysisReport::build(&sys).unwrap();
        let b = AnalysisReport::build(&sys).unwrap();
        assert_eq!(a, b);
    }
}
