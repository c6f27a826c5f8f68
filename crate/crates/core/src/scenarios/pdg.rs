//! Mars powered descent with divert-feasible regions.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::polytope::{pyramid_regions, Polytope, PolytopeDim};
use super::Formulation;
use crate::error::ModelError;
use crate::expr::{Expr, Scalar};
use crate::logic::ImplicationSpec;
use crate::transcription::{augment_with_rate_control, transcribe, Dynamics, ExtraVar, FinalTime, NodeVars, OcpSpec, TranscribedNlp};

/// Smoothing added under the square root of the glide-slope and pointing norms.
const NORM_SMOOTHING: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LanderParams {
    pub gamma_gs_deg: f64,
    pub gamma_p_deg: f64,
    pub omega: [f64; 3],
    pub g_mars: f64,
    pub g_earth: f64,
    pub isp: f64,
    pub rho_lb: f64,
    pub rho_ub: f64,
    pub m_wet: f64,
    pub m_dry: f64,
    pub r0: [f64; 3],
    /// Initial velocity in km/h.
    pub v0_kmh: [f64; 3],
    /// Componentwise velocity limit in km/h.
    pub v_max_kmh: f64,
    pub n: usize,
    pub t_f: f64,
    pub w0: f64,
    pub w1: f64,
    pub w2: f64,
    pub tau_min: f64,
    pub slack_r_lower: [f64; 3],
    pub slack_r_upper: [f64; 3],
    pub slack_v_bound: f64,
    /// Position box used for bounds and for the big-M values.
    pub position_lower: [f64; 3],
    pub position_upper: [f64; 3],
    /// Read the componentwise thrust bound as `ρ_lb ≤ u_j ≤ ρ_ub` instead of `|u_j| ≤ ρ_ub`.
    pub literal_thrust_bounds: bool,
    pub substeps: usize,
}

impl Default for LanderParams {
    fn default() -> Self {
        LanderParams {
            gamma_gs_deg: 86.0,
            gamma_p_deg: 40.0,
            omega: [3.5e-3, 0.0, 2e-3],
            g_mars: -3.71,
            g_earth: 9.807,
            isp: 225.0,
            rho_lb: 4971.0,
            rho_ub: 13258.0,
            m_wet: 1905.0,
            m_dry: 1505.0,
            r0: [2000.0, 0.0, 1500.0],
            v0_kmh: [288.0, 108.0, -270.0],
            v_max_kmh: 500.0,
            n: 50,
            t_f: 75.0,
            w0: 1e-3,
            w1: 1e3,
            w2: 1e-3,
            tau_min: 1e-3,
            slack_r_lower: [-5.0, -5.0, 0.0],
            slack_r_upper: [5.0, 5.0, 5.0],
            slack_v_bound: 0.01,
            position_lower: [-1000.0, -2000.0, 0.0],
            position_upper: [3000.0, 2000.0, 2000.0],
            literal_thrust_bounds: false,
            substeps: 1,
        }
    }
}

impl LanderParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidParameter(m));
        if !(self.rho_lb > 0.0 && self.rho_lb < self.rho_ub) {
            return bad(format!("need 0 < rho_lb < rho_ub, got {} and {}", self.rho_lb, self.rho_ub));
        }
        if !(self.m_dry > 0.0 && self.m_dry < self.m_wet) {
            return bad(format!("need 0 < m_dry < m_wet, got {} and {}", self.m_dry, self.m_wet));
        }
        if !(self.gamma_p_deg > 0.0 && self.gamma_p_deg < 90.0) {
            return bad(format!("gamma_p_deg must lie in (0, 90), got {}", self.gamma_p_deg));
        }
        if !(self.gamma_gs_deg > 0.0 && self.gamma_gs_deg < 90.0) {
            return bad(format!("gamma_gs_deg must lie in (0, 90), got {}", self.gamma_gs_deg));
        }
        for (name, v) in [("g_earth", self.g_earth), ("isp", self.isp), ("v_max_kmh", self.v_max_kmh), ("t_f", self.t_f), ("tau_min", self.tau_min)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [("w0", self.w0), ("w1", self.w1), ("w2", self.w2), ("slack_v_bound", self.slack_v_bound)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be nonnegative, got {v}"));
            }
        }
        if self.n < 1 || self.substeps < 1 {
            return bad("n and substeps must be at least 1".into());
        }
        for j in 0..3 {
            if !(self.slack_r_lower[j] <= self.slack_r_upper[j]) {
                return bad("slack_r_lower must not exceed slack_r_upper".into());
            }
            if !(self.position_lower[j] < self.position_upper[j]) {
                return bad("position box must be increasing".into());
            }
            if !(self.r0[j] >= self.position_lower[j] && self.r0[j] <= self.position_upper[j]) {
                return bad("r0 lies outside the position box".into());
            }
            if self.slack_r_lower[j] < self.position_lower[j] || self.slack_r_upper[j] > self.position_upper[j] {
                return bad("terminal slack box must lie inside the position box".into());
            }
        }
        if self.v0().iter().any(|v| v.abs() > self.v_max()) {
            return bad("v0 exceeds v_max".into());
        }
        Ok(())
    }

    pub fn v0(&self) -> [f64; 3] {
        self.v0_kmh.map(|v| v / 3.6)
    }

    pub fn v_max(&self) -> f64 {
        self.v_max_kmh / 3.6
    }

    /// `α = 1 / (g_earth · I_sp)`.
    pub fn alpha(&self) -> f64 {
        1.0 / (self.g_earth * self.isp)
    }
}

/// The three inverted pyramids used by default.
pub fn default_pyramids() -> Vec<Polytope> {
    pyramid_regions(70.0, &[[2000.0, 400.0, 0.0], [1000.0, 250.0, 0.0], [100.0, -100.0, 0.0]], [1.0; 4]).expect("valid pyramids")
}

fn cross<S: Scalar>(w: [f64; 3], v: &[S]) -> Vec<S> {
    vec![
        v[2].clone() * w[1] - v[1].clone() * w[2],
        v[0].clone() * w[2] - v[2].clone() * w[0],
        v[1].clone() * w[0] - v[0].clone() * w[1],
    ]
}

/// `(ṙ, v̇, ṁ)` for state `(r, v, m)` and thrust `u`.
pub fn lander_dynamics<S: Scalar>(x: &[S], u: &[S], params: &LanderParams) -> Vec<S> {
    let (r, v, m) = (&x[0..3], &x[3..6], &x[6]);
    let w = params.omega;
    let wwr = cross(w, &cross(w, r));
    let wv = cross(w, v);
    let mut out: Vec<S> = v.to_vec();
    for j in 0..3 {
        let mut a = u[j].clone() / m.clone() - wwr[j].clone() - wv[j].clone() * 2.0;
        if j == 2 {
            a = a + params.g_mars;
        }
        out.push(a);
    }
    out.push(S::norm(u) * (-params.alpha()));
    out
}

#[derive(Debug, Clone)]
pub struct PdgProblem {
    pub params: LanderParams,
    pub regions: Vec<Polytope>,
    pub formulation: Formulation,
    /// Big-M value per region.
    pub big_m: Vec<f64>,
    pub nlp: TranscribedNlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdgBreakdown {
    /// `−w₀ m_N`.
    pub mass: f64,
    /// `−w₁ Σδ`.
    pub indicator: f64,
    /// `w₂ Σ‖μ‖²`.
    pub rate: f64,
    /// `‖s_r‖² + ‖s_v‖²`.
    pub slack: f64,
    pub sum_delta: f64,
    pub per_region: Vec<f64>,
    pub final_mass: f64,
    pub final_position: [f64; 3],
    pub final_velocity: [f64; 3],
}

impl PdgBreakdown {
    pub fn total(&self) -> f64 {
        self.mass + self.indicator + self.rate + self.slack
    }
}

/// Largest violation of each constraint family over the grid, in physical
/// units: metres for the glide slope and slacks, newtons for thrust rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdgConstraintReport {
    pub glide_slope: f64,
    pub pointing: f64,
    pub thrust_lower: f64,
    pub thrust_upper: f64,
    pub mass_increase: f64,
    pub final_mass_below_dry: f64,
    pub slack_position: f64,
    pub slack_velocity: f64,
}

impl PdgConstraintReport {
    pub fn max(&self) -> f64 {
        [
            self.glide_slope,
            self.pointing,
            self.thrust_lower,
            self.thrust_upper,
            self.mass_increase,
            self.final_mass_below_dry,
            self.slack_position,
            self.slack_velocity,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

fn region_block(p: &Polytope) -> usize {
    match p.dim {
        PolytopeDim::Position3 => 3,
        PolytopeDim::PositionVelocity6 => 6,
        PolytopeDim::Position2 => 0,
    }
}

/// Upper bound of `A ξ + b` over a box, maximised over rows.
fn region_big_m(p: &Polytope, lo: &[f64], hi: &[f64]) -> f64 {
    p.a.iter()
        .zip(&p.b)
        .map(|(row, b)| row.iter().enumerate().map(|(j, a)| (a * lo[j]).max(a * hi[j])).sum::<f64>() + b)
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn build_pdg_ocp(params: &LanderParams, regions: &[Polytope], formulation: Formulation) -> Result<PdgProblem, ModelError> {
    params.validate()?;
    for r in regions {
        r.validate()?;
        if region_block(r) == 0 {
            return Err(ModelError::Dimension(format!(
                "region {} must be a 3D position or 6D position-velocity polytope",
                r.name
            )));
        }
    }
    let vmax = params.v_max();
    let mut lo: Vec<f64> = params.position_lower.to_vec();
    let mut hi: Vec<f64> = params.position_upper.to_vec();
    lo.extend([-vmax; 3]);
    hi.extend([vmax; 3]);
    let big_m: Vec<f64> = regions.iter().map(|r| {
        let m = region_big_m(r, &lo, &hi).max(0.0);
        m * (1.0 + 1e-9) + 1e-9
    }).collect();

    let prm = params.clone();
    let dynamics: Dynamics = Arc::new(move |x: &[Expr], u: &[Expr]| lander_dynamics(x, u, &prm));
    let mut ocp = OcpSpec::new(7, 3, params.n, FinalTime::Fixed(params.t_f), dynamics);
    let v0 = params.v0();
    ocp.x0 = params.r0.iter().chain(&v0).copied().chain([params.m_wet]).map(Some).collect();
    lo.push(params.m_dry);
    hi.push(params.m_wet);
    ocp.x_lower = lo.clone();
    ocp.x_upper = hi.clone();
    let (ulo, uhi) = if params.literal_thrust_bounds {
        (params.rho_lb, params.rho_ub)
    } else {
        (-params.rho_ub, params.rho_ub)
    };
    ocp.u_lower = vec![ulo; 3];
    ocp.u_upper = vec![uhi; 3];
    ocp.x_scale = vec![1000.0, 1000.0, 1000.0, 100.0, 100.0, 100.0, 1000.0];
    ocp.u_scale = vec![1e4; 3];
    ocp.extras = (0..3)
        .map(|j| ExtraVar {
            name: format!("s_r{j}"),
            lower: params.slack_r_lower[j],
            upper: params.slack_r_upper[j],
            scale: 1.0,
            guess: 0.0,
        })
        .chain((0..3).map(|j| ExtraVar {
            name: format!("s_v{j}"),
            lower: -params.slack_v_bound,
            upper: params.slack_v_bound,
            scale: 0.01,
            guess: 0.0,
        }))
        .collect();
    ocp.terminal_equalities = Some(Arc::new(|nv: &NodeVars| {
        // r_N − s_r = 0, v_N − s_v = 0
        (0..6).map(|j| &nv.x[j] - &nv.extras[j]).collect()
    }));
    let w0 = params.w0;
    ocp.terminal_cost = Some(Arc::new(move |nv: &NodeVars| nv.x[6].scale(-w0) + Expr::squared_norm(nv.extras)));
    let (cgs, cp) = (params.gamma_gs_deg.to_radians().cos(), params.gamma_p_deg.to_radians().cos());
    let (rlb, rub) = (params.rho_lb / params.rho_ub, params.rho_ub);
    ocp.path_constraints = Some(Arc::new(move |nv: &NodeVars| {
        let Some(u) = nv.u else {
            return Vec::new();
        };
        let r: Vec<Expr> = nv.x[0..3].iter().map(|e| e.scale(1e-3)).collect();
        let un: Vec<Expr> = u.iter().map(|e| e.scale(1.0 / rub)).collect();
        let u2 = Expr::squared_norm(&un);
        vec![
            // glide slope: cos γ_gs ‖r‖ − r_z ≤ 0
            (Expr::squared_norm(&r) + NORM_SMOOTHING).sqrt().scale(cgs) - &r[2],
            // pointing: cos γ_p ‖u‖ − u_z ≤ 0
            (&u2 + NORM_SMOOTHING).sqrt().scale(cp) - &un[2],
            // ρ_lb² ≤ ‖u‖² ≤ ρ_ub², normalised by ρ_ub²
            rlb * rlb - &u2,
            &u2 - 1.0,
        ]
    }));
    let mode = formulation.indicator_mode();
    let w1 = params.w1;
    let regs: Vec<Polytope> = regions.to_vec();
    let ms = big_m.clone();
    ocp.implications = Some(Arc::new(move |nv: &NodeVars| {
        regs.iter()
            .zip(&ms)
            .enumerate()
            .map(|(i, (r, m))| ImplicationSpec::indicator(r.rows_expr(&nv.x[..region_block(r)]), mode, *m, w1).with_group(i))
            .collect()
    }));
    let mut aug = augment_with_rate_control(&ocp, params.w2)?;
    aug.u_scale = vec![1000.0; 3];
    let nlp = transcribe(&aug, params.substeps)?;
    Ok(PdgProblem {
        params: params.clone(),
        regions: regions.to_vec(),
        formulation,
        big_m,
        nlp,
    })
}

impl PdgProblem {
    /// Physical `(r, v, m)` at node `k`.
    pub fn lander_state(&self, z: &[f64], k: usize) -> Vec<f64> {
        let mut s = self.nlp.state(z, k);
        s.truncate(7);
        s
    }

    /// Thrust at node `k < N`.
    pub fn thrust(&self, z: &[f64], k: usize) -> [f64; 3] {
        let s = self.nlp.state(z, k);
        [s[7], s[8], s[9]]
    }

    /// Thrust rate `μ_k`.
    pub fn thrust_rate(&self, z: &[f64], k: usize) -> Vec<f64> {
        self.nlp.control(z, k)
    }

    /// Straight-line states from the initial state to rest at the origin,
    /// hover thrust, zero rates, δ = 1 and zero slacks.
    pub fn initial_guess(&self) -> Result<Vec<f64>, ModelError> {
        let p = &self.params;
        let n = p.n;
        let hover = p.m_wet * -p.g_mars;
        let mdot = hover * p.alpha();
        let v0 = p.v0();
        let states: Vec<Vec<f64>> = (0..=n)
            .map(|k| {
                let s = k as f64 / n as f64;
                let t = p.t_f * s;
                let mut x: Vec<f64> = p.r0.iter().chain(&v0).map(|a| a * (1.0 - s)).collect();
                x.push((p.m_wet - mdot * t).max(p.m_dry));
                x.extend([0.0, 0.0, hover]);
                x
            })
            .collect();
        let controls = vec![vec![0.0; 3]; n];
        self.nlp.pack_guess(&states, &controls, None)
    }

    /// `δ[k][i]` for nodes `0..=N` and regions.
    pub fn delta_matrix(&self, z: &[f64]) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.regions.len()]; self.params.n + 1];
        for rec in &self.nlp.indicators {
            if let Some(i) = rec.group {
                out[rec.node][i] = z[rec.delta];
            }
        }
        out
    }

    pub fn breakdown(&self, z: &[f64]) -> PdgBreakdown {
        let p = &self.params;
        let n = p.n;
        let xn = self.lander_state(z, n);
        let ex = self.nlp.extra_values(z);
        let rate: f64 = (0..n).map(|k| self.thrust_rate(z, k).iter().map(|v| v * v).sum::<f64>()).sum::<f64>() * p.w2;
        let d = self.delta_matrix(z);
        let per_region: Vec<f64> = (0..self.regions.len()).map(|i| d.iter().map(|row| row[i]).sum()).collect();
        let sum_delta: f64 = per_region.iter().sum();
        PdgBreakdown {
            mass: -p.w0 * xn[6],
            indicator: -p.w1 * sum_delta,
            rate,
            slack: ex.iter().map(|v| v * v).sum(),
            sum_delta,
            per_region,
            final_mass: xn[6],
            final_position: [xn[0], xn[1], xn[2]],
            final_velocity: [xn[3], xn[4], xn[5]],
        }
    }

    /// Evaluate the physical path constraints at every node, independently
    /// of the transcribed rows.
    pub fn constraint_report(&self, z: &[f64]) -> PdgConstraintReport {
        let p = &self.params;
        let n = p.n;
        let (cgs, cp) = (p.gamma_gs_deg.to_radians().cos(), p.gamma_p_deg.to_radians().cos());
        let mut rep = PdgConstraintReport {
            glide_slope: 0.0,
            pointing: 0.0,
            thrust_lower: 0.0,
            thrust_upper: 0.0,
            mass_increase: 0.0,
            final_mass_below_dry: 0.0,
            slack_position: 0.0,
            slack_velocity: 0.0,
        };
        for k in 0..n {
            let x = self.lander_state(z, k);
            let u = self.thrust(z, k);
            let rn = f64::norm(&x[0..3]);
            let un = f64::norm(&u);
            rep.glide_slope = rep.glide_slope.max(cgs * rn - x[2]);
            rep.pointing = rep.pointing.max(cp * un - u[2]);
            rep.thrust_lower = rep.thrust_lower.max(p.rho_lb - un);
            rep.thrust_upper = rep.thrust_upper.max(un - p.rho_ub);
            let next = self.lander_state(z, k + 1);
            rep.mass_increase = rep.mass_increase.max(next[6] - x[6]);
        }
        let xn = self.lander_state(z, n);
        rep.final_mass_below_dry = (p.m_dry - xn[6]).max(0.0);
        for j in 0..3 {
            rep.slack_position = rep
                .slack_position
                .max(p.slack_r_lower[j] - xn[j])
                .max(xn[j] - p.slack_r_upper[j]);
            rep.slack_velocity = rep.slack_velocity.max(xn[3 + j].abs() - p.slack_v_bound);
        }
        rep
    }

    /// Pointing angle `arccos(u_z / ‖u‖)` in degrees per control node.
    pub fn pointing_angles_deg(&self, z: &[f64]) -> Vec<f64> {
        (0..self.params.n)
            .map(|k| {
                let u = self.thrust(z, k);
                (u[2] / f64::norm(&u)).clamp(-1.0, 1.0).acos().to_degrees()
            })
            .collect()
    }

    /// Glide-slope angle `arccos(r_z / ‖r‖)` in degrees per node (0 at the origin).
    pub fn glide_slope_angles_deg(&self, z: &[f64]) -> Vec<f64> {
        (0..=self.params.n)
            .map(|k| {
                let x = self.lander_state(z, k);
                let rn = f64::norm(&x[0..3]);
                if rn > 0.0 {
                    (x[2] / rn).clamp(-1.0, 1.0).acos().to_degrees()
                } else {
                    0.0
                }
            })
            .collect()
    }
}
