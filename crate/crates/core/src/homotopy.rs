//! Homotopy on relaxed vanishing and complementarity constraints: every
//! tagged product row `P(z) ≤ 0` is solved as `P(z) ≤ τ` for a decreasing
//! sequence of τ, each solve warm-started from the last accepted point.

use std::fmt::Write as _;

use log::debug;
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, SolveError};
use crate::nlp::{solve_nlp, IpmOptions, NlpProblem, NlpSolution, NlpStatus};
use crate::transcription::TranscribedNlp;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomotopyParams {
    pub tau0: f64,
    pub eps0: f64,
    pub tau_min: f64,
    pub kappa0: f64,
    pub kappa1: f64,
    pub max_outer: usize,
    pub max_consecutive_failures: usize,
    /// Stop as soon as an accepted τ falls below this instead of `tau_min`.
    pub tau_stop_override: Option<f64>,
}

impl Default for HomotopyParams {
    fn default() -> Self {
        HomotopyParams {
            tau0: 100.0,
            eps0: 0.6,
            tau_min: 1e-3,
            kappa0: 1.6,
            kappa1: 1.2,
            max_outer: 50,
            max_consecutive_failures: 10,
            tau_stop_override: None,
        }
    }
}

impl HomotopyParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidParameter(m.to_string()));
        if !(self.tau0 > 1.0) {
            return bad("tau0 must exceed 1");
        }
        if !(self.eps0 > 0.0 && self.eps0 < 1.0) {
            return bad("eps0 must lie in (0, 1)");
        }
        if !(self.tau_min > 0.0 && self.tau_min < 1.0) {
            return bad("tau_min must lie in (0, 1)");
        }
        if !(self.kappa0 > 1.0 && self.kappa1 > 1.0) {
            return bad("kappa0 and kappa1 must exceed 1");
        }
        if self.max_outer == 0 {
            return bad("max_outer must be positive");
        }
        if let Some(t) = self.tau_stop_override {
            if !(t > 0.0) {
                return bad("tau_stop_override must be positive");
            }
        }
        Ok(())
    }

    fn stop_tau(&self) -> f64 {
        self.tau_stop_override.unwrap_or(self.tau_min)
    }
}

/// The attempted τ values of a run in which every solve succeeds.
pub fn simulated_schedule(params: &HomotopyParams) -> Vec<f64> {
    let mut out = Vec::new();
    let (mut tau_star, mut eps) = (params.tau0, params.eps0);
    while tau_star > params.stop_tau() && out.len() < params.max_outer {
        let tau = (eps * tau_star).min(params.tau0);
        out.push(tau);
        tau_star = tau;
        eps /= params.kappa1;
    }
    out
}

/// An NLP with product rows tagged for relaxation.
#[derive(Debug, Clone)]
pub struct RelaxableProblem {
    pub nlp: NlpProblem,
    pub relaxable: Vec<usize>,
    /// Variables whose distance from {0, 1} is reported in the trace.
    pub indicators: Vec<usize>,
}

impl From<&TranscribedNlp> for RelaxableProblem {
    fn from(t: &TranscribedNlp) -> Self {
        RelaxableProblem {
            nlp: t.problem.clone(),
            relaxable: t.relaxable.clone(),
            indicators: t.indicators.iter().map(|r| r.delta).collect(),
        }
    }
}

impl RelaxableProblem {
    pub fn relax(&self, tau: f64) -> NlpProblem {
        let mut rhs = vec![0.0; self.nlp.num_ineq()];
        for &r in &self.relaxable {
            rhs[r] = tau;
        }
        self.nlp.with_rhs(rhs).expect("rhs length matches")
    }

    /// Largest tagged product value at `z` (violation of the unrelaxed rows).
    pub fn vanishing_violation(&self, z: &[f64]) -> Result<f64, crate::EvalError> {
        let ev = self.nlp.with_rhs(vec![0.0; self.nlp.num_ineq()]).expect("rhs length").evaluate(z)?;
        Ok(self.relaxable.iter().fold(0.0, |m, &r| m.max(ev.ineq[r])))
    }

    pub fn max_fractionality(&self, z: &[f64]) -> f64 {
        self.indicators.iter().fold(0.0, |m, &i| m.max(z[i].min(1.0 - z[i]).max(0.0)))
    }
}

/// Every tagged product row becomes `P(z) ≤ τ`.
pub fn relax_vanishing(problem: &TranscribedNlp, tau: f64) -> NlpProblem {
    RelaxableProblem::from(problem).relax(tau)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub tau: f64,
    pub status: NlpStatus,
    pub objective: f64,
    pub vanishing_violation: f64,
    pub max_fractionality: f64,
    pub accepted: bool,
    pub tau_star: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HomotopyTrace {
    pub rows: Vec<TraceRow>,
}

impl HomotopyTrace {
    pub fn accepted_taus(&self) -> Vec<f64> {
        self.rows.iter().filter(|r| r.accepted).map(|r| r.tau).collect()
    }

    pub fn attempted_taus(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.tau).collect()
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("iteration\ttau\tstatus\tobjective\tvanishing_violation\tmax_fractionality\taccepted\ttau_star\n");
        for r in &self.rows {
            let status = serde_json::to_value(r.status).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
            let _ = writeln!(
                s,
                "{}\t{:e}\t{}\t{:.12e}\t{:e}\t{:e}\t{}\t{:e}",
                r.iteration, r.tau, status, r.objective, r.vanishing_violation, r.max_fractionality, r.accepted, r.tau_star
            );
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HomotopyStatus {
    Converged,
    IterationLimit,
    Stalled,
}

#[derive(Debug, Clone)]
pub struct HomotopySolution {
    pub status: HomotopyStatus,
    /// Last accepted NLP solution; `None` if no relaxation was ever solved.
    pub solution: Option<NlpSolution>,
    /// τ of the last accepted solve.
    pub tau: f64,
    pub trace: HomotopyTrace,
}

impl HomotopySolution {
    pub fn x(&self) -> Option<&[f64]> {
        self.solution.as_ref().map(|s| s.x.as_slice())
    }
}

/// Run the homotopy from `guess`.
pub fn solve_homotopy(p: &RelaxableProblem, params: &HomotopyParams, guess: &[f64], ipm: &IpmOptions) -> Result<HomotopySolution, SolveError> {
    params.validate()?;
    let mut trace = HomotopyTrace::default();
    let record = |trace: &mut HomotopyTrace, tau: f64, s: &NlpSolution, accepted: bool, tau_star: f64| -> Result<(), SolveError> {
        trace.rows.push(TraceRow {
            iteration: trace.rows.len(),
            tau,
            status: s.status,
            objective: s.objective,
            vanishing_violation: p.vanishing_violation(&s.x)?,
            max_fractionality: p.max_fractionality(&s.x),
            accepted,
            tau_star,
        });
        Ok(())
    };
    if p.relaxable.is_empty() {
        let s = solve_nlp(&p.nlp, guess, ipm)?;
        let ok = s.status == NlpStatus::Optimal;
        record(&mut trace, 0.0, &s, ok, 0.0)?;
        return Ok(HomotopySolution {
            status: if ok { HomotopyStatus::Converged } else { HomotopyStatus::Stalled },
            solution: ok.then_some(s),
            tau: 0.0,
            trace,
        });
    }
    let mut tau_star = params.tau0;
    let mut eps = params.eps0;
    let mut z = guess.to_vec();
    let mut stored: Option<NlpSolution> = None;
    let mut failures = 0usize;
    let mut status = HomotopyStatus::Converged;
    while tau_star > params.stop_tau() {
        if trace.rows.len() >= params.max_outer {
            status = HomotopyStatus::IterationLimit;
            break;
        }
        let tau = (eps * tau_star).min(params.tau0);
        let s = solve_nlp(&p.relax(tau), &z, ipm).map_err(|e| SolveError::NlpFailure(e.to_string()))?;
        let solved = s.status == NlpStatus::Optimal;
        // A success at τ ≥ τ⋆ (after backoff pushed ε above 1) only refreshes
        // the warm start, so accepted τ values keep decreasing.
        let accepted = solved && tau < tau_star;
        if solved {
            eps /= params.kappa1;
            failures = 0;
            if accepted {
                tau_star = tau;
            }
        } else {
            eps *= params.kappa0;
            failures += 1;
        }
        record(&mut trace, tau, &s, accepted, tau_star)?;
        debug!("homotopy tau {tau:.4e} status {:?} objective {:.6}", s.status, s.objective);
        if solved {
            z = s.x.clone();
            if accepted {
                stored = Some(s);
            }
        } else if failures >= params.max_consecutive_failures {
            status = HomotopyStatus::Stalled;
            break;
        }
    }
    Ok(HomotopySolution {
        status,
        tau: if stored.is_some() { tau_star } else { f64::NAN },
        solution: stored,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expr;

    #[test]
    fn schedule_matches_update_rules() {
        let s = simulated_schedule(&HomotopyParams::default());
        let expect = [60.0, 30.0, 12.5, 4.340_277_8];
        for (a, b) in s.iter().zip(expect) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
        // closed form: τ_k = τ0 · Π_{j<k} ε0 / κ1^j
        let mut tau = 100.0;
        for (k, a) in s.iter().enumerate() {
            tau *= 0.6 / 1.2f64.powi(k as i32);
            assert!((a - tau).abs() <= 1e-12 * tau);
        }
        assert!(*s.last().unwrap() <= 1e-3);
    }

    #[test]
    fn params_validation() {
        let mut p = HomotopyParams::default();
        assert!(p.validate().is_ok());
        p.tau0 = 1.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn relaxation_arithmetic() {
        // δ·G ≤ τ with δ = 0.5, G = 1.
        let d = Expr::var(0);
        let nlp = NlpProblem::new(1, vec![0.0], vec![1.0], Expr::zero(), vec![], vec![&d * 1.0]).unwrap();
        let rp = RelaxableProblem {
            nlp,
            relaxable: vec![0],
            indicators: vec![0],
        };
        assert_eq!(rp.relax(0.6).max_violation(&[0.5]).unwrap(), 0.0);
        assert!(rp.relax(0.0).max_violation(&[0.5]).unwrap() > 0.0);
        assert_eq!(rp.relax(0.6).rhs(), &[0.6]);
    }
}
