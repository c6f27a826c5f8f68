//! Soft docking with state-triggered velocity and line-of-sight limits.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::Formulation;
use crate::error::ModelError;
use crate::expr::Expr;
use crate::logic::{Heaviside, ImplicationSpec, LogicMode};
use crate::transcription::{transcribe, Dynamics, FinalTime, NodeVars, OcpSpec, TranscribedNlp};

/// Smoothing added under the square root of the distance.
const NORM_SMOOTHING: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DockingGeometry {
    /// Docking site.
    pub p_f: [f64; 3],
    /// Radius inside which both limits apply.
    pub r: f64,
    /// Speed limit slope: `‖v‖ ≤ α ‖p − p_f‖`.
    pub alpha: f64,
    /// Approach-cone half angle.
    pub theta_max_deg: f64,
    /// Unit docking axis.
    pub e_f: [f64; 3],
}

impl Default for DockingGeometry {
    fn default() -> Self {
        DockingGeometry {
            p_f: [0.0; 3],
            r: 10.0,
            alpha: 0.1,
            theta_max_deg: 30.0,
            e_f: [1.0, 0.0, 0.0],
        }
    }
}

impl DockingGeometry {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidParameter(m));
        if !(self.r > 0.0 && self.r.is_finite()) {
            return bad(format!("radius must be positive, got {}", self.r));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(self.theta_max_deg > 0.0 && self.theta_max_deg < 90.0) {
            return bad(format!("theta_max_deg must lie in (0, 90), got {}", self.theta_max_deg));
        }
        let n = self.e_f.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !((n - 1.0).abs() <= 1e-9) {
            return bad(format!("docking axis must have unit norm, got {n}"));
        }
        Ok(())
    }
}

fn smooth_norm(v: &[Expr]) -> Expr {
    (Expr::squared_norm(v) + NORM_SMOOTHING).sqrt()
}

/// Trigger `H = r − ‖p − p_f‖` with consequences
/// `G₁ = ‖v‖² − α²‖p − p_f‖²` (soft docking, squared so it stays smooth at
/// rest) and
/// `G₂ = ‖p − p_f‖ cos θ_max − (p − p_f)ᵀ e_f` (line of sight).
/// Big-M values are left at zero for the caller to set.
pub fn docking_triggers(p: &[Expr], v: &[Expr], geom: &DockingGeometry, mode: LogicMode, heaviside: Heaviside) -> Result<Vec<ImplicationSpec>, ModelError> {
    geom.validate()?;
    if p.len() != 3 || v.len() != 3 {
        return Err(ModelError::Dimension("docking triggers need 3D position and velocity".into()));
    }
    if !matches!(mode, LogicMode::TriggerEpsBigM | LogicMode::TriggerMpcc) {
        return Err(ModelError::InvalidParameter("docking triggers need a trigger mode".into()));
    }
    let d: Vec<Expr> = p.iter().zip(&geom.p_f).map(|(x, c)| x - *c).collect();
    let dist = smooth_norm(&d);
    let h = geom.r - &dist;
    let g1 = Expr::squared_norm(v) - Expr::squared_norm(&d).scale(geom.alpha * geom.alpha);
    let g2 = dist.scale(geom.theta_max_deg.to_radians().cos()) - Expr::affine(&geom.e_f, &d, 0.0);
    Ok(vec![
        ImplicationSpec::triggered(h.clone(), vec![g1], mode, heaviside),
        ImplicationSpec::triggered(h, vec![g2], mode, heaviside),
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DockingParams {
    pub geometry: DockingGeometry,
    pub p0: [f64; 3],
    pub v0: [f64; 3],
    /// Contact speed along `-e_f` at the final node.
    pub v_contact: f64,
    /// Componentwise acceleration limit.
    pub u_max: f64,
    /// Componentwise speed limit.
    pub v_max: f64,
    /// Half-width of the position box around the docking site.
    pub position_half_width: f64,
    pub n: usize,
    pub t_f: f64,
    pub epsilon: f64,
    pub tau_min: f64,
}

impl Default for DockingParams {
    fn default() -> Self {
        DockingParams {
            geometry: DockingGeometry::default(),
            p0: [30.0, 15.0, 0.0],
            v0: [0.0; 3],
            v_contact: 0.01,
            u_max: 0.05,
            v_max: 1.0,
            position_half_width: 40.0,
            n: 30,
            t_f: 150.0,
            epsilon: 1e-3,
            tau_min: 1e-4,
        }
    }
}

impl DockingParams {
    pub fn final_velocity(&self) -> [f64; 3] {
        self.geometry.e_f.map(|v| -self.v_contact * v)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.geometry.validate()?;
        let bad = |m: String| Err(ModelError::InvalidParameter(m));
        for (name, v) in [
            ("u_max", self.u_max),
            ("v_max", self.v_max),
            ("position_half_width", self.position_half_width),
            ("t_f", self.t_f),
            ("epsilon", self.epsilon),
            ("tau_min", self.tau_min),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.v_contact >= 0.0 && self.v_contact <= self.v_max) {
            return bad(format!("v_contact must lie in [0, v_max], got {}", self.v_contact));
        }
        if self.n < 1 {
            return bad("n must be at least 1".into());
        }
        for j in 0..3 {
            if (self.p0[j] - self.geometry.p_f[j]).abs() > self.position_half_width {
                return bad("p0 lies outside the position box".into());
            }
            if self.v0[j].abs() > self.v_max {
                return bad("v0 exceeds v_max".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct DockingProblem {
    pub params: DockingParams,
    pub formulation: Formulation,
    pub nlp: TranscribedNlp,
}

/// Per-node trigger and consequence values at a solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DockingNode {
    pub k: usize,
    pub distance: f64,
    pub speed: f64,
    pub h: f64,
    pub g_speed: f64,
    pub g_cone: f64,
}

/// Double-integrator chaser from `p0` to contact at the docking site with the
/// two triggered limits at nodes `0..N`. MINLP uses the ε-big-M trigger,
/// MPVC the complementarity trigger.
pub fn build_docking_ocp(params: &DockingParams, formulation: Formulation) -> Result<DockingProblem, ModelError> {
    params.validate()?;
    let dynamics: Dynamics = Arc::new(|x: &[Expr], u: &[Expr]| {
        let mut f: Vec<Expr> = x[3..6].to_vec();
        f.extend(u.iter().cloned());
        f
    });
    let mut ocp = OcpSpec::new(6, 3, params.n, FinalTime::Fixed(params.t_f), dynamics);
    let pf = params.geometry.p_f;
    let hw = params.position_half_width;
    ocp.x0 = params.p0.iter().chain(&params.v0).copied().map(Some).collect();
    let vf = params.final_velocity();
    ocp.xn = pf.iter().copied().chain(vf).map(Some).collect();
    ocp.x_lower = pf.iter().map(|c| c - hw).chain([-params.v_max; 3]).collect();
    ocp.x_upper = pf.iter().map(|c| c + hw).chain([params.v_max; 3]).collect();
    ocp.u_lower = vec![-params.u_max; 3];
    ocp.u_upper = vec![params.u_max; 3];
    ocp.x_scale = vec![10.0, 10.0, 10.0, 0.1, 0.1, 0.1];
    ocp.u_scale = vec![params.u_max; 3];
    let uw = 1.0 / (params.u_max * params.u_max);
    ocp.stage_cost = Some(Arc::new(move |nv: &NodeVars| Expr::squared_norm(nv.u.expect("stage control")).scale(uw)));

    let (mode, heaviside) = match formulation {
        Formulation::Minlp => (LogicMode::TriggerEpsBigM, Heaviside::DeltaVariable),
        Formulation::Mpvc => (LogicMode::TriggerMpcc, Heaviside::DeltaVariable),
    };
    // Bounds over the box: ‖p − p_f‖ ≤ D, ‖v‖ ≤ √3 v_max.
    let g = &params.geometry;
    let dmax = (3.0 * hw * hw + NORM_SMOOTHING).sqrt();
    let vmax = (3.0 * params.v_max * params.v_max + NORM_SMOOTHING).sqrt();
    let upper = g.r.max(vmax * vmax).max(dmax * (1.0 + g.theta_max_deg.to_radians().cos())) * 1.01 + 1.0;
    let lower = (dmax - g.r).max(0.0) * 1.01 + 1.0;
    let geom = g.clone();
    let eps = params.epsilon;
    ocp.implications = Some(Arc::new(move |nv: &NodeVars| {
        if nv.u.is_none() {
            return Vec::new();
        }
        docking_triggers(&nv.x[0..3], &nv.x[3..6], &geom, mode, heaviside)
            .expect("validated geometry")
            .into_iter()
            .map(|s| ImplicationSpec {
                epsilon: eps,
                ..s.with_big_m(upper, lower)
            })
            .collect()
    }));
    let nlp = transcribe(&ocp, 1)?;
    Ok(DockingProblem {
        params: params.clone(),
        formulation,
        nlp,
    })
}

impl DockingProblem {
    /// Straight line from `p0` to the docking site at constant velocity.
    pub fn initial_guess(&self) -> Result<Vec<f64>, ModelError> {
        let p = &self.params;
        let pf = p.geometry.p_f;
        let vel: Vec<f64> = (0..3).map(|j| (pf[j] - p.p0[j]) / p.t_f).collect();
        let states: Vec<Vec<f64>> = (0..=p.n)
            .map(|k| {
                let s = k as f64 / p.n as f64;
                let mut x: Vec<f64> = (0..3).map(|j| p.p0[j] + s * (pf[j] - p.p0[j])).collect();
                if k == 0 {
                    x.extend(p.v0);
                } else if k == p.n {
                    x.extend(p.final_velocity());
                } else {
                    x.extend(vel.iter().copied());
                }
                x
            })
            .collect();
        self.nlp.pack_guess(&states, &vec![vec![0.0; 3]; p.n], None)
    }

    pub fn node_report(&self, z: &[f64]) -> Vec<DockingNode> {
        let g = &self.params.geometry;
        let c = g.theta_max_deg.to_radians().cos();
        (0..self.params.n)
            .map(|k| {
                let x = self.nlp.state(z, k);
                let d: Vec<f64> = (0..3).map(|j| x[j] - g.p_f[j]).collect();
                let dist = d.iter().map(|v| v * v).sum::<f64>().sqrt();
                let speed = x[3..6].iter().map(|v| v * v).sum::<f64>().sqrt();
                let along: f64 = d.iter().zip(&g.e_f).map(|(a, b)| a * b).sum();
                DockingNode {
                    k,
                    distance: dist,
                    speed,
                    h: g.r - dist,
                    g_speed: speed * speed - g.alpha * g.alpha * dist * dist,
                    g_cone: dist * c - along,
                }
            })
            .collect()
    }

    /// Largest consequence value over nodes whose trigger is strictly active.
    pub fn triggered_violation(&self, z: &[f64]) -> f64 {
        self.node_report(z)
            .iter()
            .filter(|n| n.h > 0.0)
            .fold(0.0, |m, n| m.max(n.g_speed).max(n.g_cone))
    }

    pub fn control_effort(&self, z: &[f64]) -> f64 {
        let w = 1.0 / (self.params.u_max * self.params.u_max);
        self.nlp.controls(z).iter().map(|u| u.iter().map(|v| v * v).sum::<f64>() * w).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval(p: [f64; 3], v: [f64; 3]) -> (f64, f64, f64) {
        let vars: Vec<Expr> = (0..6).map(Expr::var).collect();
        let specs = docking_triggers(&vars[0..3], &vars[3..6], &DockingGeometry::default(), LogicMode::TriggerMpcc, Heaviside::KktLp).unwrap();
        let z: Vec<f64> = p.iter().chain(&v).copied().collect();
        let h = match &specs[0].trigger {
            crate::logic::Trigger::Expr(h) => h.eval(&z).unwrap(),
            _ => unreachable!(),
        };
        (h, specs[0].consequence[0].eval(&z).unwrap(), specs[1].consequence[0].eval(&z).unwrap())
    }

    #[test]
    fn trigger_values() {
        // twice the radius away: inactive
        let (h, _, _) = eval([20.0, 0.0, 0.0], [1.0, 0.0, 0.0]);
        assert!(h < 0.0);
        // on the axis inside the radius at rest: both consequences hold
        let (h, g1, g2) = eval([5.0, 0.0, 0.0], [0.0; 3]);
        assert!(h > 0.0 && g1 < 0.0 && g2 < 0.0);
        // on the boundary
        let (h, _, _) = eval([0.0, 10.0, 0.0], [0.0; 3]);
        assert!(h.abs() < 1e-6);
        // off-axis inside: cone violated
        let (_, _, g2) = eval([0.0, 5.0, 0.0], [0.0; 3]);
        assert!(g2 > 0.0);
    }

    #[test]
    fn geometry_validation() {
        let g = DockingGeometry {
            e_f: [1.0, 1.0, 0.0],
            ..DockingGeometry::default()
        };
        assert!(g.validate().is_err());
        let vars: Vec<Expr> = (0..6).map(Expr::var).collect();
        assert!(docking_triggers(&vars[0..3], &vars[3..6], &DockingGeometry::default(), LogicMode::IndicatorBigM, Heaviside::DeltaVariable).is_err());
    }

    #[test]
    fn builds_both_formulations() {
        let a = build_docking_ocp(&DockingParams::default(), Formulation::Minlp).unwrap();
        assert_eq!(a.nlp.integer_vars.len(), 2 * 30);
        let b = build_docking_ocp(&DockingParams::default(), Formulation::Mpvc).unwrap();
        assert!(b.nlp.integer_vars.is_empty());
        assert!(!b.nlp.relaxable.is_empty());
    }
}
