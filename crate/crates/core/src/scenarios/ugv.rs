//! Ground vehicle visiting monitoring regions (single-track kinematics).

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::polytope::{Polytope, PolytopeDim};
use super::Formulation;
use crate::error::ModelError;
use crate::expr::{Expr, Scalar};
use crate::logic::ImplicationSpec;
use crate::transcription::{transcribe, Dynamics, FinalTime, GroupActivation, NodeVars, OcpSpec, TranscribedNlp};

/// Which indicators the final-node reward covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalReward {
    AllRegions,
    FirstRegion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UgvParams {
    pub wheelbase: f64,
    pub a_max: f64,
    pub psi_max_deg: f64,
    pub theta_max_deg: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub phi_max_deg: f64,
    pub t_d: f64,
    pub n: usize,
    /// `(p_x, p_y, θ, v, φ)` with angles in degrees.
    pub x0: [f64; 5],
    pub xn: [f64; 5],
    /// Signed weight; the cost adds `w·Σδ`, so `w < 0` rewards visits.
    pub w: f64,
    pub big_m: f64,
    pub tau_min: f64,
    pub substeps: usize,
    /// Workspace box on both position components.
    pub position_box: [f64; 2],
    pub terminal_reward: TerminalReward,
    pub fix_terminal_state: bool,
}

impl Default for UgvParams {
    fn default() -> Self {
        UgvParams {
            wheelbase: 0.1,
            a_max: 0.05,
            psi_max_deg: 0.5,
            theta_max_deg: 175.0,
            v_min: 0.1,
            v_max: 0.8,
            phi_max_deg: 5.0,
            t_d: 3.8,
            n: 20,
            x0: [0.0, 0.0, 0.0, 0.15, 0.0],
            xn: [10.0, 10.0, 0.0, 0.15, 0.0],
            w: -38.0,
            big_m: 12.0,
            tau_min: 1e-4,
            substeps: 4,
            position_box: [-1.0, 11.0],
            terminal_reward: TerminalReward::AllRegions,
            fix_terminal_state: true,
        }
    }
}

impl UgvParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let pos = [
            ("wheelbase", self.wheelbase),
            ("a_max", self.a_max),
            ("psi_max_deg", self.psi_max_deg),
            ("theta_max_deg", self.theta_max_deg),
            ("v_min", self.v_min),
            ("phi_max_deg", self.phi_max_deg),
            ("t_d", self.t_d),
            ("big_m", self.big_m),
            ("tau_min", self.tau_min),
        ];
        for (name, v) in pos {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ModelError::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.v_max > self.v_min) {
            return Err(ModelError::InvalidParameter("v_max must exceed v_min".into()));
        }
        if !(self.phi_max_deg < 90.0) {
            return Err(ModelError::InvalidParameter("phi_max_deg must be below 90".into()));
        }
        if self.n < 1 || self.substeps < 1 {
            return Err(ModelError::InvalidParameter("n and substeps must be at least 1".into()));
        }
        if !(self.w <= 0.0) {
            return Err(ModelError::InvalidParameter(format!("visit weight w must be nonpositive, got {}", self.w)));
        }
        if !(self.position_box[0] < self.position_box[1]) {
            return Err(ModelError::InvalidParameter("position_box must be increasing".into()));
        }
        Ok(())
    }

    pub fn final_time(&self) -> f64 {
        self.t_d * self.n as f64
    }

    /// Reward magnitude `|w|` used by the indicator cost `-|w|·δ`.
    pub fn reward(&self) -> f64 {
        -self.w
    }

    fn state_si(v: &[f64; 5]) -> Vec<f64> {
        vec![v[0], v[1], v[2].to_radians(), v[3], v[4].to_radians()]
    }
}

/// `(v cos θ, v sin θ, v tan φ / L, a, ψ)`.
pub fn ugv_dynamics<S: Scalar>(x: &[S], u: &[S], wheelbase: f64) -> Vec<S> {
    let (theta, v, phi) = (&x[2], &x[3], &x[4]);
    vec![
        v.clone() * theta.cos(),
        v.clone() * theta.sin(),
        v.clone() * phi.tan() / wheelbase,
        u[0].clone(),
        u[1].clone(),
    ]
}

/// The five rectangular monitoring regions used by default.
pub fn default_regions() -> Vec<Polytope> {
    let boxes = [
        ([1.5, -0.5], [2.7, 0.7]),
        ([3.0, 2.2], [4.2, 3.4]),
        ([5.2, 4.0], [6.4, 5.2]),
        ([6.2, 6.8], [7.4, 8.0]),
        ([8.6, 8.8], [9.8, 10.0]),
    ];
    boxes
        .iter()
        .enumerate()
        .map(|(i, (lo, hi))| Polytope::rectangle(format!("target_{}", i + 1), *lo, *hi).expect("valid rectangle"))
        .collect()
}

#[derive(Debug, Clone)]
pub struct UgvProblem {
    pub params: UgvParams,
    pub regions: Vec<Polytope>,
    pub formulation: Formulation,
    pub nlp: TranscribedNlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UgvBreakdown {
    pub control_effort: f64,
    pub indicator: f64,
    pub sum_delta: f64,
    pub per_region: Vec<f64>,
}

pub fn build_ugv_ocp(params: &UgvParams, regions: &[Polytope], formulation: Formulation) -> Result<UgvProblem, ModelError> {
    params.validate()?;
    for r in regions {
        r.validate()?;
        if r.dim != PolytopeDim::Position2 {
            return Err(ModelError::Dimension(format!("region {} is not a planar position polytope", r.name)));
        }
    }
    let l = params.wheelbase;
    let dynamics: Dynamics = Arc::new(move |x: &[Expr], u: &[Expr]| ugv_dynamics(x, u, l));
    let mut ocp = OcpSpec::new(5, 2, params.n, FinalTime::Fixed(params.final_time()), dynamics);
    ocp.x0 = UgvParams::state_si(&params.x0).into_iter().map(Some).collect();
    if params.fix_terminal_state {
        ocp.xn = UgvParams::state_si(&params.xn).into_iter().map(Some).collect();
    }
    let (th, ph) = (params.theta_max_deg.to_radians(), params.phi_max_deg.to_radians());
    let [plo, phi_box] = params.position_box;
    ocp.x_lower = vec![plo, plo, -th, params.v_min, -ph];
    ocp.x_upper = vec![phi_box, phi_box, th, params.v_max, ph];
    let psi = params.psi_max_deg.to_radians();
    ocp.u_lower = vec![-params.a_max, -psi];
    ocp.u_upper = vec![params.a_max, psi];
    ocp.x_scale = vec![1.0, 1.0, 1.0, 0.1, ph];
    ocp.u_scale = vec![params.a_max, psi];
    ocp.stage_cost = Some(Arc::new(|nv: &NodeVars| Expr::squared_norm(nv.u.expect("stage control"))));

    let mode = formulation.indicator_mode();
    let reward = params.reward();
    let big_m = params.big_m;
    let terminal = params.terminal_reward;
    let regs: Vec<Polytope> = regions.to_vec();
    ocp.implications = Some(Arc::new(move |nv: &NodeVars| {
        let p = &nv.x[..2];
        regs.iter()
            .enumerate()
            .map(|(i, r)| {
                let w = if nv.k == nv.horizon && terminal == TerminalReward::FirstRegion && i > 0 {
                    0.0
                } else {
                    reward
                };
                ImplicationSpec::indicator(r.rows_expr(p), mode, big_m, w).with_group(i)
            })
            .collect()
    }));
    ocp.group_activation = (0..regions.len())
        .map(|i| GroupActivation {
            group: i,
            min_active: 1.0,
        })
        .collect();
    let nlp = transcribe(&ocp, params.substeps)?;
    Ok(UgvProblem {
        params: params.clone(),
        regions: regions.to_vec(),
        formulation,
        nlp,
    })
}

impl UgvProblem {
    /// Straight-line states from start to goal, zero controls, δ = 1.
    pub fn initial_guess(&self) -> Result<Vec<f64>, ModelError> {
        let x0 = UgvParams::state_si(&self.params.x0);
        let xn = UgvParams::state_si(&self.params.xn);
        self.nlp.interpolated_guess(&x0, &xn, &[0.0, 0.0])
    }

    /// `δ[k][i]` for nodes `0..=N` and regions.
    pub fn delta_matrix(&self, z: &[f64]) -> Vec<Vec<f64>> {
        let nr = self.regions.len();
        let mut out = vec![vec![0.0; nr]; self.params.n + 1];
        for rec in &self.nlp.indicators {
            if let Some(i) = rec.group {
                out[rec.node][i] = z[rec.delta];
            }
        }
        out
    }

    pub fn breakdown(&self, z: &[f64]) -> UgvBreakdown {
        let control_effort: f64 = self.nlp.controls(z).iter().map(|u| u.iter().map(|v| v * v).sum::<f64>()).sum();
        let indicator: f64 = self.nlp.indicators.iter().map(|r| -r.weight * z[r.delta]).sum();
        let d = self.delta_matrix(z);
        let per_region: Vec<f64> = (0..self.regions.len()).map(|i| d.iter().map(|row| row[i]).sum()).collect();
        UgvBreakdown {
            control_effort,
            indicator,
            sum_delta: per_region.iter().sum(),
            per_region,
        }
    }
}
