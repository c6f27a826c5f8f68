//! Dispatch a resolved configuration to the builders and solvers.

use std::time::{Instant, SystemTime, UNIX_EPOCH};

use trigger_ocp::homotopy::{solve_homotopy, HomotopyStatus, RelaxableProblem};
use trigger_ocp::minlp::{enumerate_exhaustive, solve_bnb, write_node_log, MinlpProblem, MinlpStatus};
use trigger_ocp::scenarios::docking::{build_docking_ocp, DockingProblem};
use trigger_ocp::scenarios::pdg::{build_pdg_ocp, PdgProblem};
use trigger_ocp::scenarios::ugv::{build_ugv_ocp, UgvProblem};
use trigger_ocp::transcription::TranscribedNlp;
use trigger_ocp::{ModelError, NlpProblem, NlpStatus, SolveError};

use crate::config::{ResolvedConfig, ScenarioParams, SolverKind};
use crate::record::{Decomposition, Outcome, ResultsRecord, SCHEMA_VERSION};

pub enum Built {
    Ugv(UgvProblem),
    Pdg(PdgProblem),
    Docking(DockingProblem),
}

impl Built {
    pub fn new(cfg: &ResolvedConfig) -> Result<Built, ModelError> {
        Ok(match &cfg.params {
            ScenarioParams::Ugv(p) => Built::Ugv(build_ugv_ocp(p, &cfg.regions, cfg.formulation)?),
            ScenarioParams::Pdg(p) => Built::Pdg(build_pdg_ocp(p, &cfg.regions, cfg.formulation)?),
            ScenarioParams::Docking(p) => Built::Docking(build_docking_ocp(p, cfg.formulation)?),
        })
    }

    pub fn nlp(&self) -> &TranscribedNlp {
        match self {
            Built::Ugv(p) => &p.nlp,
            Built::Pdg(p) => &p.nlp,
            Built::Docking(p) => &p.nlp,
        }
    }

    pub fn initial_guess(&self) -> Result<Vec<f64>, ModelError> {
        match self {
            Built::Ugv(p) => p.initial_guess(),
            Built::Pdg(p) => p.initial_guess(),
            Built::Docking(p) => p.initial_guess(),
        }
    }

    fn summary(&self, z: &[f64]) -> Summary {
        let nlp = self.nlp();
        match self {
            Built::Ugv(p) => {
                let b = p.breakdown(z);
                Summary {
                    decomposition: Decomposition {
                        control_effort: b.control_effort,
                        indicator: b.indicator,
                        rate_penalty: 0.0,
                        slack: 0.0,
                    },
                    final_state: nlp.state(z, p.params.n),
                    final_mass: None,
                    sum_delta: b.sum_delta,
                    per_region: b.per_region,
                }
            }
            Built::Pdg(p) => {
                let b = p.breakdown(z);
                Summary {
                    decomposition: Decomposition {
                        control_effort: b.mass,
                        indicator: b.indicator,
                        rate_penalty: b.rate,
                        slack: b.slack,
                    },
                    final_state: p.lander_state(z, p.params.n),
                    final_mass: Some(b.final_mass),
                    sum_delta: b.sum_delta,
                    per_region: b.per_region,
                }
            }
            Built::Docking(p) => {
                let indicator: f64 = nlp.indicators.iter().map(|r| -r.weight * z[r.delta]).sum();
                Summary {
                    decomposition: Decomposition {
                        control_effort: p.control_effort(z),
                        indicator,
                        rate_penalty: 0.0,
                        slack: 0.0,
                    },
                    final_state: nlp.state(z, p.params.n),
                    final_mass: None,
                    sum_delta: nlp.indicators.iter().map(|r| z[r.delta]).sum(),
                    per_region: Vec::new(),
                }
            }
        }
    }
}

struct Summary {
    decomposition: Decomposition,
    final_state: Vec<f64>,
    final_mass: Option<f64>,
    sum_delta: f64,
    per_region: Vec<f64>,
}

/// A finished run: the record, the best point (if any) and the trace text.
pub struct RunOutput {
    pub record: ResultsRecord,
    pub solution: Option<Vec<f64>>,
    /// Homotopy trace or branch-and-bound node log, tab-separated.
    pub trace: String,
}

struct SolverResult {
    outcome: Outcome,
    status: String,
    message: Option<String>,
    x: Option<Vec<f64>>,
    /// Problem the point was solved against, for the violation report.
    solved: Option<NlpProblem>,
    nodes: Option<usize>,
    homotopy_iterations: Option<usize>,
    final_tau: Option<f64>,
    trace: String,
}

fn snake<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_value(v).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
}

fn failure(e: SolveError) -> SolverResult {
    SolverResult {
        outcome: Outcome::SolverFailure,
        status: "error".into(),
        message: Some(e.to_string()),
        x: None,
        solved: None,
        nodes: None,
        homotopy_iterations: None,
        final_tau: None,
        trace: String::new(),
    }
}

fn run_minlp(cfg: &ResolvedConfig, nlp: &TranscribedNlp, guess: &[f64]) -> SolverResult {
    let opts = cfg.settings.bnb();
    let p = MinlpProblem::from(nlp);
    let res = match cfg.solver {
        SolverKind::Enumerate => enumerate_exhaustive(&p, guess, cfg.settings.enumerate_cap, &opts),
        _ => solve_bnb(&p, guess, &opts),
    };
    let s = match res {
        Ok(s) => s,
        Err(e) => return failure(e),
    };
    let mut log = Vec::new();
    write_node_log(&s.node_log, &mut log).expect("writing to memory");
    let outcome = match (s.status, &s.best) {
        (MinlpStatus::Infeasible, _) => Outcome::Infeasible,
        (_, None) => Outcome::SolverFailure,
        (_, Some(_)) => Outcome::Solved,
    };
    SolverResult {
        outcome,
        status: snake(&s.status),
        message: None,
        x: s.best.as_ref().map(|b| b.x.clone()),
        solved: Some(nlp.problem.clone()),
        nodes: Some(s.nodes),
        homotopy_iterations: None,
        final_tau: None,
        trace: String::from_utf8(log).expect("node log is UTF-8"),
    }
}

fn run_homotopy(cfg: &ResolvedConfig, nlp: &TranscribedNlp, guess: &[f64]) -> SolverResult {
    let params = cfg.settings.homotopy(cfg.params.tau_min());
    let rp = RelaxableProblem::from(nlp);
    let s = match solve_homotopy(&rp, &params, guess, &cfg.settings.ipm()) {
        Ok(s) => s,
        Err(e) => return failure(e),
    };
    let first_infeasible = s.solution.is_none() && s.trace.rows.first().is_some_and(|r| r.status == NlpStatus::LocallyInfeasible);
    let outcome = match s.status {
        HomotopyStatus::Converged => Outcome::Solved,
        _ if first_infeasible => Outcome::Infeasible,
        _ => Outcome::SolverFailure,
    };
    SolverResult {
        outcome,
        status: snake(&s.status),
        message: None,
        x: s.x().map(|x| x.to_vec()),
        solved: Some(rp.relax(s.tau)),
        nodes: None,
        homotopy_iterations: Some(s.trace.rows.len()),
        final_tau: s.solution.as_ref().map(|_| s.tau),
        trace: s.trace.to_tsv(),
    }
}

/// Build, solve and summarize. Model errors are returned; solver outcomes,
/// including failures, come back inside the record.
pub fn run(cfg: &ResolvedConfig) -> Result<RunOutput, ModelError> {
    let built = Built::new(cfg)?;
    let guess = built.initial_guess()?;
    let nbin = built.nlp().integer_vars.len();
    if cfg.solver == SolverKind::Enumerate && nbin > cfg.settings.enumerate_cap {
        return Err(ModelError::InvalidParameter(format!(
            "{nbin} binaries exceed the enumeration cap {} (solver.enumerate_cap)",
            cfg.settings.enumerate_cap
        )));
    }
    let t = Instant::now();
    let res = match cfg.solver {
        SolverKind::Homotopy => run_homotopy(cfg, built.nlp(), &guess),
        SolverKind::Bnb | SolverKind::Enumerate => run_minlp(cfg, built.nlp(), &guess),
    };
    let runtime_seconds = t.elapsed().as_secs_f64();
    let summary = res.x.as_ref().map(|x| built.summary(x));
    let objective = match &res.x {
        Some(x) => Some(built.nlp().problem.evaluate(x).map_err(|e| ModelError::InvalidParameter(e.to_string()))?.objective),
        None => None,
    };
    let max_violation = match (&res.x, &res.solved) {
        (Some(x), Some(p)) => p.max_violation(x).ok(),
        _ => None,
    };
    let record = ResultsRecord {
        schema_version: SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        run_id: cfg.run_id(),
        config_hash: cfg.hash(),
        scenario: cfg.scenario(),
        formulation: cfg.formulation,
        solver: cfg.solver,
        outcome: res.outcome,
        status: res.status,
        message: res.message,
        objective,
        decomposition: summary.as_ref().map(|s| s.decomposition),
        final_state: summary.as_ref().map(|s| s.final_state.clone()),
        final_mass: summary.as_ref().and_then(|s| s.final_mass),
        sum_delta: summary.as_ref().map(|s| s.sum_delta),
        sum_delta_per_region: summary.as_ref().map(|s| s.per_region.clone()),
        max_violation,
        nodes: res.nodes,
        homotopy_iterations: res.homotopy_iterations,
        final_tau: res.final_tau,
        runtime_seconds,
        created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
    };
    Ok(RunOutput {
        record,
        solution: res.x,
        trace: res.trace,
    })
}
