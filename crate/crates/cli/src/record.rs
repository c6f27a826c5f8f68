//! Persisted results of one run.

use serde::{Deserialize, Serialize};

use crate::config::{Scenario, SolverKind};
use trigger_ocp::scenarios::Formulation;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Solved,
    Infeasible,
    SolverFailure,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Solved => 0,
            Outcome::Infeasible => 2,
            Outcome::SolverFailure => 3,
        }
    }
}

/// Objective terms. `control_effort` is `Σ‖u‖²` for the vehicle models and
/// the fuel term `−w₀ m_N` for the lander.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub control_effort: f64,
    pub indicator: f64,
    pub rate_penalty: f64,
    pub slack: f64,
}

impl Decomposition {
    pub fn total(&self) -> f64 {
        self.control_effort + self.indicator + self.rate_penalty + self.slack
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultsRecord {
    pub schema_version: u32,
    pub tool_version: String,
    pub run_id: String,
    pub config_hash: String,
    pub scenario: Scenario,
    pub formulation: Formulation,
    pub solver: SolverKind,
    pub outcome: Outcome,
    /// Solver-specific status, e.g. `optimal_within_tree` or `converged`.
    pub status: String,
    pub message: Option<String>,
    pub objective: Option<f64>,
    pub decomposition: Option<Decomposition>,
    pub final_state: Option<Vec<f64>>,
    pub final_mass: Option<f64>,
    pub sum_delta: Option<f64>,
    pub sum_delta_per_region: Option<Vec<f64>>,
    pub max_violation: Option<f64>,
    pub nodes: Option<usize>,
    pub homotopy_iterations: Option<usize>,
    pub final_tau: Option<f64>,
    pub runtime_seconds: f64,
    pub created_unix: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum RecordError {
    #[error("record does not parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("schema version {0} is not supported")]
    Schema(u32),
    #[error("decomposition sums to {sum}, objective is {objective}")]
    Decomposition { sum: f64, objective: f64 },
}

impl ResultsRecord {
    pub fn validate(&self) -> Result<(), RecordError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(RecordError::Schema(self.schema_version));
        }
        if let (Some(obj), Some(d)) = (self.objective, &self.decomposition) {
            if (d.total() - obj).abs() > 1e-6 {
                return Err(RecordError::Decomposition { sum: d.total(), objective: obj });
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<ResultsRecord, RecordError> {
        let r: ResultsRecord = serde_json::from_str(text)?;
        r.validate()?;
        Ok(r)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("record serializes") + "\n"
    }

    /// Copy with the fields that legitimately differ between identical runs cleared.
    pub fn without_timing(&self) -> ResultsRecord {
        ResultsRecord {
            runtime_seconds: 0.0,
            created_unix: 0,
            ..self.clone()
        }
    }
}
