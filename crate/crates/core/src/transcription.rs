//! Direct multiple shooting with fixed-step RK4.
//!
//! Variable layout: extras (slacks), optional final time, then per node
//! `x_k, u_k, aux_k` with `u_N` absent. States and controls are scaled:
//! the NLP variable is `x / x_scale`, and every model callback sees
//! physical expressions.

use std::ops::Range;
use std::sync::Arc;

use crate::error::ModelError;
use crate::expr::{Expr, Interval, Scalar};
use crate::logic::{self, AuxRole, Classification, ImplicationSpec, IndicatorRecord};
use crate::nlp::NlpProblem;

/// Symbolic view of one grid node handed to model callbacks.
pub struct NodeVars<'a> {
    pub k: usize,
    pub horizon: usize,
    pub x: &'a [Expr],
    /// `None` at the final node.
    pub u: Option<&'a [Expr]>,
    pub extras: &'a [Expr],
    /// Shooting interval length `t_f / N`.
    pub t_d: &'a Expr,
    pub t_f: &'a Expr,
}

pub type Dynamics = Arc<dyn Fn(&[Expr], &[Expr]) -> Vec<Expr> + Send + Sync>;
pub type NodeFn<T> = Arc<dyn Fn(&NodeVars) -> T + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FinalTime {
    Fixed(f64),
    Free { lower: f64, upper: f64, guess: f64 },
}

impl FinalTime {
    pub fn guess(&self) -> f64 {
        match *self {
            FinalTime::Fixed(t) => t,
            FinalTime::Free { guess, .. } => guess,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtraVar {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub scale: f64,
    pub guess: f64,
}

/// Lower bound on the number of active indicators in a group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupActivation {
    pub group: usize,
    pub min_active: f64,
}

#[derive(Clone)]
pub struct OcpSpec {
    pub nx: usize,
    pub nu: usize,
    pub dynamics: Dynamics,
    /// `L(x_k, u_k, t_d)`, summed over `k < N`.
    pub stage_cost: Option<NodeFn<Expr>>,
    /// `E(x_N, t_f)`.
    pub terminal_cost: Option<NodeFn<Expr>>,
    /// Rows `c ≤ 0` at every node; at `k = N` these are the terminal constraints.
    pub path_constraints: Option<NodeFn<Vec<Expr>>>,
    /// Rows `c = 0` at the final node.
    pub terminal_equalities: Option<NodeFn<Vec<Expr>>>,
    /// Implications compiled at every node.
    pub implications: Option<NodeFn<Vec<ImplicationSpec>>>,
    pub group_activation: Vec<GroupActivation>,
    pub x0: Vec<Option<f64>>,
    pub xn: Vec<Option<f64>>,
    pub x_lower: Vec<f64>,
    pub x_upper: Vec<f64>,
    pub u_lower: Vec<f64>,
    pub u_upper: Vec<f64>,
    pub x_scale: Vec<f64>,
    pub u_scale: Vec<f64>,
    pub extras: Vec<ExtraVar>,
    pub horizon: usize,
    pub final_time: FinalTime,
    /// State dimension before rate augmentation, if augmented.
    pub augmented_from: Option<usize>,
}

impl std::fmt::Debug for OcpSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OcpSpec")
            .field("nx", &self.nx)
            .field("nu", &self.nu)
            .field("horizon", &self.horizon)
            .field("final_time", &self.final_time)
            .finish_non_exhaustive()
    }
}

impl OcpSpec {
    /// Spec with unit scaling, unbounded boxes and no costs or constraints.
    pub fn new(nx: usize, nu: usize, horizon: usize, final_time: FinalTime, dynamics: Dynamics) -> OcpSpec {
        OcpSpec {
            nx,
            nu,
            dynamics,
            stage_cost: None,
            terminal_cost: None,
            path_constraints: None,
            terminal_equalities: None,
            implications: None,
            group_activation: Vec::new(),
            x0: vec![None; nx],
            xn: vec![None; nx],
            x_lower: vec![f64::NEG_INFINITY; nx],
            x_upper: vec![f64::INFINITY; nx],
            u_lower: vec![f64::NEG_INFINITY; nu],
            u_upper: vec![f64::INFINITY; nu],
            x_scale: vec![1.0; nx],
            u_scale: vec![1.0; nu],
            extras: Vec::new(),
            horizon,
            final_time,
            augmented_from: None,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let dim = |name: &str, len: usize, want: usize| {
            if len == want {
                Ok(())
            } else {
                Err(ModelError::Dimension(format!("{name} has length {len}, expected {want}")))
            }
        };
        dim("x0", self.x0.len(), self.nx)?;
        dim("xn", self.xn.len(), self.nx)?;
        dim("x_lower", self.x_lower.len(), self.nx)?;
        dim("x_upper", self.x_upper.len(), self.nx)?;
        dim("x_scale", self.x_scale.len(), self.nx)?;
        dim("u_lower", self.u_lower.len(), self.nu)?;
        dim("u_upper", self.u_upper.len(), self.nu)?;
        dim("u_scale", self.u_scale.len(), self.nu)?;
        if self.horizon < 1 {
            return Err(ModelError::InvalidParameter("horizon must be at least 1".into()));
        }
        match self.final_time {
            FinalTime::Fixed(t) if !(t > 0.0 && t.is_finite()) => {
                return Err(ModelError::InvalidParameter(format!("final time must be positive, got {t}")))
            }
            FinalTime::Free { lower, upper, guess } if !(lower > 0.0 && lower <= guess && guess <= upper) => {
                return Err(ModelError::InvalidParameter(format!(
                    "free final time needs 0 < lower <= guess <= upper, got {lower}, {guess}, {upper}"
                )))
            }
            _ => {}
        }
        if self.x_scale.iter().chain(&self.u_scale).chain(self.extras.iter().map(|e| &e.scale)).any(|s| !(*s > 0.0)) {
            return Err(ModelError::InvalidParameter("scales must be positive".into()));
        }
        Ok(())
    }
}

/// One classical RK4 step of `ẋ = f(x, u)`.
pub fn rk4_step<S: Scalar, F: Fn(&[S], &[S]) -> Vec<S> + ?Sized>(f: &F, x: &[S], u: &[S], h: &S) -> Vec<S> {
    let axpy = |a: &[S], k: &[S], c: &S| -> Vec<S> { a.iter().zip(k).map(|(ai, ki)| ai.clone() + c.clone() * ki.clone()).collect() };
    let half = h.clone() * 0.5;
    let k1 = f(x, u);
    let k2 = f(&axpy(x, &k1, &half), u);
    let k3 = f(&axpy(x, &k2, &half), u);
    let k4 = f(&axpy(x, &k3, h), u);
    let sixth = h.clone() / 6.0;
    (0..x.len())
        .map(|i| {
            let incr = k1[i].clone() + k2[i].clone() * 2.0 + k3[i].clone() * 2.0 + k4[i].clone();
            x[i].clone() + sixth.clone() * incr
        })
        .collect()
}

/// `steps` RK4 steps over an interval of length `t`.
pub fn integrate<S: Scalar, F: Fn(&[S], &[S]) -> Vec<S> + ?Sized>(f: &F, x: &[S], u: &[S], t: &S, steps: usize) -> Vec<S> {
    let h = t.clone() / steps as f64;
    let mut x = x.to_vec();
    for _ in 0..steps {
        x = rk4_step(f, &x, u, &h);
    }
    x
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeLayout {
    pub state: Range<usize>,
    pub control: Option<Range<usize>>,
    pub aux: Range<usize>,
}

#[derive(Debug, Clone)]
pub struct AuxInfo {
    pub index: usize,
    pub role: AuxRole,
    pub trigger: Option<Expr>,
}

#[derive(Debug, Clone)]
pub struct TranscribedNlp {
    pub problem: NlpProblem,
    pub nx: usize,
    pub nu: usize,
    pub horizon: usize,
    pub steps_per_interval: usize,
    pub final_time: FinalTime,
    pub nodes: Vec<NodeLayout>,
    pub extras: Range<usize>,
    pub final_time_var: Option<usize>,
    pub x_scale: Vec<f64>,
    pub u_scale: Vec<f64>,
    pub extra_scale: Vec<f64>,
    pub extra_guess: Vec<f64>,
    pub integer_vars: Vec<usize>,
    /// Inequality rows relaxed to `≤ τ` by the homotopy.
    pub relaxable: Vec<usize>,
    pub indicators: Vec<IndicatorRecord>,
    pub aux: Vec<AuxInfo>,
    pub classification: Classification,
    /// Equality rows holding the shooting gaps, `nx` per interval.
    pub gap_rows: Range<usize>,
}

impl TranscribedNlp {
    pub fn num_vars(&self) -> usize {
        self.problem.num_vars()
    }

    /// `t_d = t_f / N`.
    pub fn t_d(&self, z: &[f64]) -> f64 {
        self.t_f(z) / self.horizon as f64
    }

    pub fn t_f(&self, z: &[f64]) -> f64 {
        match self.final_time_var {
            Some(i) => z[i],
            None => self.final_time.guess(),
        }
    }

    pub fn state(&self, z: &[f64], k: usize) -> Vec<f64> {
        z[self.nodes[k].state.clone()].iter().zip(&self.x_scale).map(|(v, s)| v * s).collect()
    }

    pub fn control(&self, z: &[f64], k: usize) -> Vec<f64> {
        match &self.nodes[k].control {
            Some(r) => z[r.clone()].iter().zip(&self.u_scale).map(|(v, s)| v * s).collect(),
            None => Vec::new(),
        }
    }

    pub fn states(&self, z: &[f64]) -> Vec<Vec<f64>> {
        (0..=self.horizon).map(|k| self.state(z, k)).collect()
    }

    pub fn controls(&self, z: &[f64]) -> Vec<Vec<f64>> {
        (0..self.horizon).map(|k| self.control(z, k)).collect()
    }

    pub fn extra_values(&self, z: &[f64]) -> Vec<f64> {
        z[self.extras.clone()].iter().zip(&self.extra_scale).map(|(v, s)| v * s).collect()
    }

    pub fn deltas(&self, z: &[f64]) -> Vec<f64> {
        self.indicators.iter().map(|r| z[r.delta]).collect()
    }

    /// Largest absolute shooting gap in scaled units.
    pub fn max_gap(&self, z: &[f64]) -> Result<f64, crate::EvalError> {
        let ev = self.problem.evaluate(z)?;
        Ok(ev.eq[self.gap_rows.clone()].iter().fold(0.0, |m, v| m.max(v.abs())))
    }

    /// Assemble a decision vector from physical states, controls and extras.
    /// Indicators start at 1; complementarity auxiliaries and multipliers
    /// are set consistently with the trigger values at the guess.
    pub fn pack_guess(&self, states: &[Vec<f64>], controls: &[Vec<f64>], extras: Option<&[f64]>) -> Result<Vec<f64>, ModelError> {
        if states.len() != self.horizon + 1 || controls.len() != self.horizon {
            return Err(ModelError::Dimension(format!(
                "guess has {} states and {} controls, expected {} and {}",
                states.len(),
                controls.len(),
                self.horizon + 1,
                self.horizon
            )));
        }
        let mut z = vec![0.0; self.num_vars()];
        let ex = extras.map(|e| e.to_vec()).unwrap_or_else(|| self.extra_guess.clone());
        if ex.len() != self.extras.len() {
            return Err(ModelError::Dimension(format!("extras guess has length {}", ex.len())));
        }
        for (i, (v, s)) in ex.iter().zip(&self.extra_scale).enumerate() {
            z[self.extras.start + i] = v / s;
        }
        if let Some(i) = self.final_time_var {
            z[i] = self.final_time.guess();
        }
        for (k, node) in self.nodes.iter().enumerate() {
            if states[k].len() != self.nx {
                return Err(ModelError::Dimension(format!("state guess {k} has length {}", states[k].len())));
            }
            for (j, idx) in node.state.clone().enumerate() {
                z[idx] = states[k][j] / self.x_scale[j];
            }
            if let Some(r) = &node.control {
                if controls[k].len() != self.nu {
                    return Err(ModelError::Dimension(format!("control guess {k} has length {}", controls[k].len())));
                }
                for (j, idx) in r.clone().enumerate() {
                    z[idx] = controls[k][j] / self.u_scale[j];
                }
            }
        }
        for a in &self.aux {
            let h = match &a.trigger {
                Some(t) => t.eval(&z)?,
                None => 0.0,
            };
            z[a.index] = match a.role {
                AuxRole::Delta => 1.0,
                AuxRole::Complementarity => h.max(0.0),
                AuxRole::Lambda1 => (-h).max(0.0),
                AuxRole::Lambda2 => h.max(0.0),
            };
        }
        Ok(z)
    }

    /// Guess from straight-line state interpolation between `x0` and `xn`
    /// with constant controls.
    pub fn interpolated_guess(&self, x0: &[f64], xn: &[f64], u: &[f64]) -> Result<Vec<f64>, ModelError> {
        let n = self.horizon as f64;
        let states: Vec<Vec<f64>> = (0..=self.horizon)
            .map(|k| {
                let t = k as f64 / n;
                x0.iter().zip(xn).map(|(a, b)| a + t * (b - a)).collect()
            })
            .collect();
        let controls = vec![u.to_vec(); self.horizon];
        self.pack_guess(&states, &controls, None)
    }
}

struct Builder {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Builder {
    fn push(&mut self, lo: f64, hi: f64) -> usize {
        self.lower.push(lo);
        self.upper.push(hi);
        self.lower.len() - 1
    }

    fn intervals(&self) -> Vec<Interval> {
        self.lower.iter().zip(&self.upper).map(|(&l, &u)| Interval::new(l, u)).collect()
    }
}

fn scaled_block(b: &mut Builder, lower: &[f64], upper: &[f64], scale: &[f64], fixed: Option<&[Option<f64>]>) -> (Range<usize>, Vec<Expr>) {
    let start = b.lower.len();
    let mut phys = Vec::with_capacity(scale.len());
    for j in 0..scale.len() {
        let (lo, hi) = match fixed.and_then(|f| f[j]) {
            Some(v) => (v, v),
            None => (lower[j], upper[j]),
        };
        let i = b.push(lo / scale[j], hi / scale[j]);
        phys.push(Expr::var(i).scale(scale[j]));
    }
    (start..b.lower.len(), phys)
}

/// Build the NLP for `ocp` with `steps_per_interval` RK4 steps per shooting
/// interval.
pub fn transcribe(ocp: &OcpSpec, steps_per_interval: usize) -> Result<TranscribedNlp, ModelError> {
    ocp.validate()?;
    if steps_per_interval < 1 {
        return Err(ModelError::InvalidParameter("steps_per_interval must be at least 1".into()));
    }
    let n = ocp.horizon;
    let mut b = Builder {
        lower: Vec::new(),
        upper: Vec::new(),
    };

    let ex_start = b.lower.len();
    let extras: Vec<Expr> = ocp
        .extras
        .iter()
        .map(|e| Expr::var(b.push(e.lower / e.scale, e.upper / e.scale)).scale(e.scale))
        .collect();
    let extras_range = ex_start..b.lower.len();
    let (t_f, tf_var) = match ocp.final_time {
        FinalTime::Fixed(t) => (Expr::constant(t), None),
        FinalTime::Free { lower, upper, .. } => {
            let i = b.push(lower, upper);
            (Expr::var(i), Some(i))
        }
    };
    let t_d = t_f.scale(1.0 / n as f64);

    let mut nodes = Vec::with_capacity(n + 1);
    let mut xs: Vec<Vec<Expr>> = Vec::with_capacity(n + 1);
    let mut xs_scaled: Vec<Vec<Expr>> = Vec::with_capacity(n + 1);
    let mut us: Vec<Vec<Expr>> = Vec::with_capacity(n);
    let mut objective = Vec::new();
    let mut eqs = Vec::new();
    let mut ineqs = Vec::new();
    let mut relaxable = Vec::new();
    let mut integer_vars = Vec::new();
    let mut indicators = Vec::new();
    let mut aux_info = Vec::new();
    let mut classes = Vec::new();

    for k in 0..=n {
        let fixed = if k == 0 {
            Some(ocp.x0.as_slice())
        } else if k == n {
            Some(ocp.xn.as_slice())
        } else {
            None
        };
        let (srange, x) = scaled_block(&mut b, &ocp.x_lower, &ocp.x_upper, &ocp.x_scale, fixed);
        xs_scaled.push(srange.clone().map(Expr::var).collect());
        let (crange, u) = if k < n {
            let (r, u) = scaled_block(&mut b, &ocp.u_lower, &ocp.u_upper, &ocp.u_scale, None);
            (Some(r), Some(u))
        } else {
            (None, None)
        };
        let nv = NodeVars {
            k,
            horizon: n,
            x: &x,
            u: u.as_deref(),
            extras: &extras,
            t_d: &t_d,
            t_f: &t_f,
        };
        if k < n {
            if let Some(l) = &ocp.stage_cost {
                objective.push(l(&nv));
            }
        } else if let Some(e) = &ocp.terminal_cost {
            objective.push(e(&nv));
        }
        if let Some(c) = &ocp.path_constraints {
            ineqs.extend(c(&nv));
        }
        if k == n {
            if let Some(c) = &ocp.terminal_equalities {
                eqs.extend(c(&nv));
            }
        }
        let aux_start = b.lower.len();
        if let Some(imp) = &ocp.implications {
            for spec in imp(&nv) {
                spec.validate(&b.intervals())?;
                let first = b.lower.len();
                let out = logic::reformulate(&spec, first)?;
                for (j, v) in out.vars.iter().enumerate() {
                    let idx = b.push(v.lower, v.upper);
                    if v.integer {
                        integer_vars.push(idx);
                    }
                    let trigger = match &spec.trigger {
                        logic::Trigger::Expr(h) => Some(h.clone()),
                        logic::Trigger::Indicator => None,
                    };
                    aux_info.push(AuxInfo {
                        index: idx,
                        role: v.role,
                        trigger,
                    });
                    if Some(j) == out.delta {
                        indicators.push(IndicatorRecord {
                            delta: idx,
                            consequence: spec.consequence.clone(),
                            weight: spec.weight,
                            mode: spec.mode,
                            node: k,
                            group: spec.group,
                            trigger: match &spec.trigger {
                                logic::Trigger::Expr(h) => Some(h.clone()),
                                logic::Trigger::Indicator => None,
                            },
                            epsilon: spec.epsilon,
                        });
                    }
                }
                for c in out.inequalities {
                    if c.relaxable {
                        relaxable.push(ineqs.len());
                    }
                    ineqs.push(c.expr);
                }
                eqs.extend(out.equalities);
                objective.push(out.cost);
                classes.push(out.classification);
            }
        }
        nodes.push(NodeLayout {
            state: srange,
            control: crange,
            aux: aux_start..b.lower.len(),
        });
        xs.push(x);
        if let Some(u) = u {
            us.push(u);
        }
    }

    // Shooting gaps in scaled units, after any terminal equalities.
    let gap_start = eqs.len();
    let f = ocp.dynamics.clone();
    let fref = |x: &[Expr], u: &[Expr]| f(x, u);
    for k in 0..n {
        let next = integrate(&fref, &xs[k], &us[k], &t_d, steps_per_interval);
        if next.len() != ocp.nx {
            return Err(ModelError::Dimension(format!("dynamics returned {} components, expected {}", next.len(), ocp.nx)));
        }
        for (j, phi) in next.iter().enumerate() {
            eqs.push(&xs_scaled[k + 1][j] - phi.scale(1.0 / ocp.x_scale[j]));
        }
    }
    let gap_rows = gap_start..eqs.len();

    for g in &ocp.group_activation {
        let members: Vec<Expr> = indicators.iter().filter(|r| r.group == Some(g.group)).map(|r| Expr::var(r.delta)).collect();
        if members.is_empty() {
            return Err(ModelError::InvalidParameter(format!("activation group {} has no indicators", g.group)));
        }
        // min_active − Σ δ ≤ 0
        let mut terms: Vec<Expr> = members.iter().map(|d| -d.clone()).collect();
        terms.push(Expr::constant(g.min_active));
        ineqs.push(Expr::sum(terms));
    }

    let classification = if classes.contains(&Classification::Minlp) {
        Classification::Minlp
    } else if classes.contains(&Classification::Mpcc) {
        Classification::Mpcc
    } else if classes.contains(&Classification::Mpvc) {
        Classification::Mpvc
    } else {
        Classification::Nlp
    };
    let nvars = b.lower.len();
    let problem = NlpProblem::new(nvars, b.lower, b.upper, Expr::sum(objective), eqs, ineqs)
        .map_err(|e| ModelError::InvalidParameter(e.to_string()))?;
    Ok(TranscribedNlp {
        problem,
        nx: ocp.nx,
        nu: ocp.nu,
        horizon: n,
        steps_per_interval,
        final_time: ocp.final_time,
        nodes,
        extras: extras_range,
        final_time_var: tf_var,
        x_scale: ocp.x_scale.clone(),
        u_scale: ocp.u_scale.clone(),
        extra_scale: ocp.extras.iter().map(|e| e.scale).collect(),
        extra_guess: ocp.extras.iter().map(|e| e.guess).collect(),
        integer_vars,
        relaxable,
        indicators,
        aux: aux_info,
        classification,
        gap_rows,
    })
}

fn wrap_node<T: 'static>(inner: NodeFn<T>, nx: usize) -> NodeFn<T> {
    Arc::new(move |nv: &NodeVars| {
        let (x, u) = nv.x.split_at(nx);
        let view = NodeVars {
            k: nv.k,
            horizon: nv.horizon,
            x,
            u: nv.u.map(|_| u),
            extras: nv.extras,
            t_d: nv.t_d,
            t_f: nv.t_f,
        };
        inner(&view)
    })
}

/// Append the controls to the state and make their rates the new controls.
/// Callbacks of `ocp` keep seeing the original `(x, u)` pair, where `u` is
/// read from the augmented state; the stage cost gains `rate_weight·‖μ‖²`.
pub fn augment_with_rate_control(ocp: &OcpSpec, rate_weight: f64) -> Result<OcpSpec, ModelError> {
    if ocp.augmented_from.is_some() {
        return Err(ModelError::InvalidParameter("spec is already rate-augmented".into()));
    }
    if ocp.nu == 0 {
        return Err(ModelError::InvalidParameter("spec has no controls to augment".into()));
    }
    let (nx, nu) = (ocp.nx, ocp.nu);
    let f = ocp.dynamics.clone();
    let dynamics: Dynamics = Arc::new(move |x: &[Expr], mu: &[Expr]| {
        let (xs, us) = x.split_at(nx);
        let mut out = f(xs, us);
        out.extend(mu.iter().cloned());
        out
    });
    let inner_cost = ocp.stage_cost.clone().map(|c| wrap_node(c, nx));
    let stage_cost: NodeFn<Expr> = Arc::new(move |nv: &NodeVars| {
        let mu = nv.u.unwrap_or(&[]);
        let rate = Expr::squared_norm(mu).scale(rate_weight);
        match &inner_cost {
            Some(c) => c(nv) + rate,
            None => rate,
        }
    });
    let cat = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().chain(b).copied().collect() };
    Ok(OcpSpec {
        nx: nx + nu,
        nu,
        dynamics,
        stage_cost: Some(stage_cost),
        terminal_cost: ocp.terminal_cost.clone().map(|c| wrap_node(c, nx)),
        path_constraints: ocp.path_constraints.clone().map(|c| wrap_node(c, nx)),
        terminal_equalities: ocp.terminal_equalities.clone().map(|c| wrap_node(c, nx)),
        implications: ocp.implications.clone().map(|c| wrap_node(c, nx)),
        group_activation: ocp.group_activation.clone(),
        x0: ocp.x0.iter().copied().chain(std::iter::repeat(None).take(nu)).collect(),
        xn: ocp.xn.iter().copied().chain(std::iter::repeat(None).take(nu)).collect(),
        x_lower: cat(&ocp.x_lower, &ocp.u_lower),
        x_upper: cat(&ocp.x_upper, &ocp.u_upper),
        u_lower: vec![f64::NEG_INFINITY; nu],
        u_upper: vec![f64::INFINITY; nu],
        x_scale: cat(&ocp.x_scale, &ocp.u_scale),
        u_scale: ocp.u_scale.clone(),
        extras: ocp.extras.clone(),
        horizon: ocp.horizon,
        final_time: ocp.final_time,
        augmented_from: Some(nx),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nlp::{solve_nlp, IpmOptions, NlpStatus};

    fn decay(x: &[f64], _u: &[f64]) -> Vec<f64> {
        vec![-x[0]]
    }

    #[test]
    fn rk4_decay_step() {
        let x = rk4_step(&decay, &[1.0], &[], &0.1);
        assert!((x[0] - 0.904_837_5).abs() < 1e-9);
        assert!((x[0] - (-0.1f64).exp()).abs() < 1e-7);
    }

    #[test]
    fn rk4_zero_field_is_exact() {
        let zero = |x: &[f64], _: &[f64]| vec![0.0; x.len()];
        assert_eq!(rk4_step(&zero, &[1.0, 2.0], &[], &0.37), vec![1.0, 2.0]);
    }

    #[test]
    fn rk4_fourth_order() {
        let err = |steps: usize| (integrate(&decay, &[1.0], &[], &1.0, steps)[0] - (-1.0f64).exp()).abs();
        let ratio = err(10) / err(20);
        assert!((ratio - 16.0).abs() < 2.0, "ratio {ratio}");
    }

    fn integrator_spec(n: usize) -> OcpSpec {
        let f: Dynamics = Arc::new(|_x: &[Expr], u: &[Expr]| vec![u[0].clone()]);
        let mut ocp = OcpSpec::new(1, 1, n, FinalTime::Fixed(1.0), f);
        ocp.x0 = vec![Some(0.0)];
        ocp.xn = vec![Some(1.0)];
        ocp.stage_cost = Some(Arc::new(|nv: &NodeVars| Expr::squared_norm(nv.u.unwrap())));
        ocp
    }

    #[test]
    fn layout_and_counts() {
        let t = transcribe(&integrator_spec(4), 2).unwrap();
        assert_eq!(t.num_vars(), 5 + 4);
        assert_eq!(t.problem.num_eq(), 4);
        assert_eq!(t.nodes[1].state, 2..3);
        assert_eq!(t.nodes[1].control, Some(3..4));
        assert_eq!(t.nodes[4].control, None);
    }

    #[test]
    fn min_energy_transfer() {
        let t = transcribe(&integrator_spec(5), 1).unwrap();
        let z0 = t.interpolated_guess(&[0.0], &[1.0], &[0.0]).unwrap();
        let sol = solve_nlp(&t.problem, &z0, &IpmOptions::default()).unwrap();
        assert_eq!(sol.status, NlpStatus::Optimal);
        for u in t.controls(&sol.x) {
            assert!((u[0] - 1.0).abs() < 1e-6);
        }
        assert!(t.max_gap(&sol.x).unwrap() < 1e-6);
    }

    #[test]
    fn trivial_dynamics_pins_terminal_state() {
        let f: Dynamics = Arc::new(|x: &[Expr], _u: &[Expr]| vec![Expr::zero(); x.len()]);
        let mut ocp = OcpSpec::new(1, 1, 1, FinalTime::Fixed(2.0), f);
        ocp.x0 = vec![Some(3.0)];
        let t = transcribe(&ocp, 1).unwrap();
        let z = t.interpolated_guess(&[3.0], &[1.0], &[0.0]).unwrap();
        let ev = t.problem.evaluate(&z).unwrap();
        assert!((ev.eq[0] - (-2.0)).abs() < 1e-12);
    }

    #[test]
    fn augmentation() {
        let ocp = integrator_spec(3);
        let aug = augment_with_rate_control(&ocp, 0.5).unwrap();
        assert_eq!((aug.nx, aug.nu), (2, 1));
        assert!(augment_with_rate_control(&aug, 0.5).is_err());
        let t = transcribe(&aug, 1).unwrap();
        // zero rate keeps the control state constant
        let states: Vec<Vec<f64>> = (0..=3).map(|k| vec![k as f64 / 3.0, 1.0]).collect();
        let z = t.pack_guess(&states, &vec![vec![0.0]; 3], None).unwrap();
        assert!(t.max_gap(&z).unwrap() < 1e-12);
    }

    #[test]
    fn free_final_time() {
        // Reach x = 1 with |u| <= 1 and cost t_f: optimum t_f = 1.
        let f: Dynamics = Arc::new(|_x: &[Expr], u: &[Expr]| vec![u[0].clone()]);
        let mut ocp = OcpSpec::new(1, 1, 4, FinalTime::Free { lower: 0.1, upper: 10.0, guess: 3.0 }, f);
        ocp.x0 = vec![Some(0.0)];
        ocp.xn = vec![Some(1.0)];
        ocp.u_lower = vec![-1.0];
        ocp.u_upper = vec![1.0];
        ocp.terminal_cost = Some(Arc::new(|nv: &NodeVars| nv.t_f.clone()));
        let t = transcribe(&ocp, 1).unwrap();
        let z0 = t.interpolated_guess(&[0.0], &[1.0], &[0.3]).unwrap();
        let sol = solve_nlp(&t.problem, &z0, &IpmOptions::default()).unwrap();
        assert_eq!(sol.status, NlpStatus::Optimal);
        assert!((t.t_f(&sol.x) - 1.0).abs() < 1e-5);
    }
}
