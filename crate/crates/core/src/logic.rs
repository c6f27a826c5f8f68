//! Compilation of logical implications into smooth or mixed-integer
//! constraint sets, and the rounding/polishing post-processors.
//!
//! A unit reads "trigger active ⇒ G(z) ≤ 0". The trigger is either an
//! indicator variable δ created by the compiler, or a state-dependent
//! expression H(z) with "active" meaning H(z) > 0.
//!
//! | mode                  | trigger | constraints                                        |
//! |-----------------------|---------|----------------------------------------------------|
//! | `IndicatorBigM`       | δ ∈ {0,1} | G ≤ M(1-δ)                                       |
//! | `IndicatorVanishing`  | δ ∈ [0,1] | δ·G ≤ 0 (relaxable)                              |
//! | `IndicatorVanishing`  | H       | H·G ≤ 0 (relaxable, the bare product)              |
//! | `TriggerEpsBigM`      | H       | H ≤ Mδ, H ≥ -m(1-δ)+ε, G ≤ M(1-δ), δ ∈ {0,1}       |
//! | `TriggerMpcc`         | H       | y ≥ 0, H - y ≤ 0, y(y-H) ≤ 0, y·G ≤ 0 (relaxable)  |

use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::expr::{Expr, Interval};

/// Tolerance for reading a relaxed indicator as 1.
pub const INTEGRALITY_TOL: f64 = 1e-5;
/// Consequence values up to this are treated as satisfied when polishing.
pub const POLISH_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogicMode {
    IndicatorBigM,
    IndicatorVanishing,
    TriggerEpsBigM,
    TriggerMpcc,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Heaviside {
    DeltaVariable,
    Sigmoid { beta: f64 },
    KktLp,
}

impl Heaviside {
    pub const DEFAULT_BETA: f64 = 10.0;
}

#[derive(Debug, Clone)]
pub enum Trigger {
    /// The compiler allocates an indicator variable δ.
    Indicator,
    /// State-dependent trigger H(z), active when positive.
    Expr(Expr),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Nlp,
    Minlp,
    Mpvc,
    Mpcc,
}

#[derive(Debug, Clone)]
pub struct ImplicationSpec {
    pub trigger: Trigger,
    pub consequence: Vec<Expr>,
    pub mode: LogicMode,
    pub big_m: f64,
    /// Lower bound magnitude `m` with `H >= -m` on the bound box.
    pub lower_m: f64,
    pub epsilon: f64,
    /// Reward weight, stored nonnegative; the cost term is `-w·σ`.
    pub weight: f64,
    pub heaviside: Heaviside,
    /// Activation group, for "at least `count` active" constraints.
    pub group: Option<usize>,
}

impl ImplicationSpec {
    pub const DEFAULT_EPSILON: f64 = 1e-3;

    pub fn indicator(consequence: Vec<Expr>, mode: LogicMode, big_m: f64, weight: f64) -> ImplicationSpec {
        ImplicationSpec {
            trigger: Trigger::Indicator,
            consequence,
            mode,
            big_m,
            lower_m: big_m,
            epsilon: Self::DEFAULT_EPSILON,
            weight,
            heaviside: Heaviside::DeltaVariable,
            group: None,
        }
    }

    pub fn triggered(h: Expr, consequence: Vec<Expr>, mode: LogicMode, heaviside: Heaviside) -> ImplicationSpec {
        ImplicationSpec {
            trigger: Trigger::Expr(h),
            consequence,
            mode,
            big_m: 0.0,
            lower_m: 0.0,
            epsilon: Self::DEFAULT_EPSILON,
            weight: 0.0,
            heaviside,
            group: None,
        }
    }

    pub fn with_group(mut self, group: usize) -> Self {
        self.group = Some(group);
        self
    }

    pub fn with_big_m(mut self, big_m: f64, lower_m: f64) -> Self {
        self.big_m = big_m;
        self.lower_m = lower_m;
        self
    }

    pub fn with_weight(mut self, weight: f64) -> Self {
        self.weight = weight;
        self
    }

    fn uses_big_m(&self) -> bool {
        matches!(self.mode, LogicMode::IndicatorBigM | LogicMode::TriggerEpsBigM)
    }

    /// Parameter checks plus the interval-arithmetic big-M check over the
    /// variable box `bounds`.
    pub fn validate(&self, bounds: &[Interval]) -> Result<(), ModelError> {
        if !(self.weight >= 0.0) {
            return Err(ModelError::InvalidParameter(format!(
                "weight must be nonnegative, got {}",
                self.weight
            )));
        }
        match (&self.trigger, self.mode) {
            (Trigger::Indicator, LogicMode::TriggerEpsBigM | LogicMode::TriggerMpcc) => {
                return Err(ModelError::InvalidParameter(
                    "trigger modes need a trigger expression".into(),
                ))
            }
            (Trigger::Expr(_), LogicMode::IndicatorBigM) => {
                return Err(ModelError::InvalidParameter(
                    "big-M indicator mode takes no trigger expression".into(),
                ))
            }
            _ => {}
        }
        if self.mode == LogicMode::TriggerMpcc && self.heaviside == Heaviside::DeltaVariable && self.weight > 0.0 {
            return Err(ModelError::InvalidParameter(
                "the complementarity trigger has no indicator variable; use a sigmoid or KKT Heaviside".into(),
            ));
        }
        if let Heaviside::Sigmoid { beta } = self.heaviside {
            if !(beta > 0.0) {
                return Err(ModelError::InvalidParameter(format!("sigmoid beta must be positive, got {beta}")));
            }
        }
        if self.uses_big_m() {
            if !(self.big_m > 0.0) {
                return Err(ModelError::InvalidParameter(format!("big-M must be positive, got {}", self.big_m)));
            }
            for g in &self.consequence {
                let iv = g.interval(bounds);
                if !(iv.hi <= self.big_m) {
                    return Err(ModelError::InvalidBigM {
                        m: self.big_m,
                        bound: iv.hi,
                    });
                }
            }
        }
        if self.mode == LogicMode::TriggerEpsBigM {
            if !(self.epsilon > 0.0) {
                return Err(ModelError::InvalidParameter(format!("epsilon must be positive, got {}", self.epsilon)));
            }
            if let Trigger::Expr(h) = &self.trigger {
                let iv = h.interval(bounds);
                if !(iv.hi <= self.big_m) {
                    return Err(ModelError::InvalidBigM {
                        m: self.big_m,
                        bound: iv.hi,
                    });
                }
                if !(iv.lo >= -self.lower_m) {
                    return Err(ModelError::InvalidBigM {
                        m: self.lower_m,
                        bound: -iv.lo,
                    });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuxRole {
    Delta,
    Complementarity,
    Lambda1,
    Lambda2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuxVar {
    pub role: AuxRole,
    pub lower: f64,
    pub upper: f64,
    pub integer: bool,
}

#[derive(Debug, Clone)]
pub struct TaggedConstraint {
    pub expr: Expr,
    /// Product constraint relaxed to `expr <= τ` by the homotopy.
    pub relaxable: bool,
}

#[derive(Debug, Clone)]
pub struct ReformulationOutput {
    /// New variables, numbered from the `first_var` passed to [`reformulate`].
    pub vars: Vec<AuxVar>,
    pub inequalities: Vec<TaggedConstraint>,
    pub equalities: Vec<Expr>,
    pub cost: Expr,
    pub classification: Classification,
    /// Offset into `vars` of the variable that plays the role of σ(H) in the
    /// cost, if any.
    pub delta: Option<usize>,
}

/// `1 / (1 + exp(-β h))`.
pub fn sigmoid(h: &Expr, beta: f64) -> Expr {
    (1.0 + (h.scale(-beta)).exp()).recip()
}

/// Compile one implication. New variables are `first_var, first_var+1, …`.
pub fn reformulate(spec: &ImplicationSpec, first_var: usize) -> Result<ReformulationOutput, ModelError> {
    let mut vars = Vec::new();
    let mut ineq = Vec::new();
    let mut eq = Vec::new();
    let mut delta = None;
    let new_var = |vars: &mut Vec<AuxVar>, role, lower, upper, integer| {
        vars.push(AuxVar {
            role,
            lower,
            upper,
            integer,
        });
        Expr::var(first_var + vars.len() - 1)
    };
    let mut sigma: Option<Expr> = None;
    let classification;
    match spec.mode {
        LogicMode::IndicatorBigM => {
            if !matches!(spec.trigger, Trigger::Indicator) {
                return Err(ModelError::InvalidParameter("big-M indicator mode takes no trigger expression".into()));
            }
            let d = new_var(&mut vars, AuxRole::Delta, 0.0, 1.0, true);
            delta = Some(0);
            for g in &spec.consequence {
                ineq.push(TaggedConstraint {
                    expr: big_m_row(g, &d, spec.big_m),
                    relaxable: false,
                });
            }
            sigma = Some(d);
            classification = Classification::Minlp;
        }
        LogicMode::IndicatorVanishing => {
            let t = match &spec.trigger {
                Trigger::Indicator => {
                    let d = new_var(&mut vars, AuxRole::Delta, 0.0, 1.0, false);
                    delta = Some(0);
                    sigma = Some(d.clone());
                    d
                }
                Trigger::Expr(h) => h.clone(),
            };
            for g in &spec.consequence {
                ineq.push(TaggedConstraint {
                    expr: &t * g,
                    relaxable: true,
                });
            }
            classification = Classification::Mpvc;
        }
        LogicMode::TriggerEpsBigM => {
            let Trigger::Expr(h) = &spec.trigger else {
                return Err(ModelError::InvalidParameter("trigger modes need a trigger expression".into()));
            };
            let d = new_var(&mut vars, AuxRole::Delta, 0.0, 1.0, true);
            delta = Some(0);
            ineq.push(TaggedConstraint {
                expr: h - &d * spec.big_m,
                relaxable: false,
            });
            // -m(1-δ) + ε - H <= 0
            ineq.push(TaggedConstraint {
                expr: Expr::sum([d.scale(spec.lower_m), -h.clone(), Expr::constant(spec.epsilon - spec.lower_m)]),
                relaxable: false,
            });
            for g in &spec.consequence {
                ineq.push(TaggedConstraint {
                    expr: big_m_row(g, &d, spec.big_m),
                    relaxable: false,
                });
            }
            if spec.heaviside == Heaviside::DeltaVariable {
                sigma = Some(d);
            }
            classification = Classification::Minlp;
        }
        LogicMode::TriggerMpcc => {
            let Trigger::Expr(h) = &spec.trigger else {
                return Err(ModelError::InvalidParameter("trigger modes need a trigger expression".into()));
            };
            let y = new_var(&mut vars, AuxRole::Complementarity, 0.0, f64::INFINITY, false);
            ineq.push(TaggedConstraint {
                expr: h - &y,
                relaxable: false,
            });
            ineq.push(TaggedConstraint {
                expr: &y * (&y - h),
                relaxable: true,
            });
            for g in &spec.consequence {
                ineq.push(TaggedConstraint {
                    expr: &y * g,
                    relaxable: true,
                });
            }
            classification = Classification::Mpcc;
        }
    }

    // Heaviside representations that need their own machinery.
    if let Trigger::Expr(h) = &spec.trigger {
        match spec.heaviside {
            Heaviside::Sigmoid { beta } => sigma = Some(sigmoid(h, beta)),
            Heaviside::KktLp => {
                let d = new_var(&mut vars, AuxRole::Delta, 0.0, 1.0, false);
                let l1 = new_var(&mut vars, AuxRole::Lambda1, 0.0, f64::INFINITY, false);
                let l2 = new_var(&mut vars, AuxRole::Lambda2, 0.0, f64::INFINITY, false);
                delta = Some(vars.len() - 3);
                ineq.push(TaggedConstraint {
                    expr: &d * &l1,
                    relaxable: true,
                });
                ineq.push(TaggedConstraint {
                    expr: (1.0 - &d) * &l2,
                    relaxable: true,
                });
                // Stationarity of max_δ δH over [0, 1], so that H > 0 gives δ = 1.
                eq.push(Expr::sum([h.clone(), l1, -l2]));
                sigma = Some(d);
            }
            Heaviside::DeltaVariable => {
                if spec.mode == LogicMode::TriggerMpcc && spec.weight > 0.0 {
                    return Err(ModelError::InvalidParameter(
                        "the complementarity trigger has no indicator variable; use a sigmoid or KKT Heaviside".into(),
                    ));
                }
            }
        }
    }
    let cost = match (&sigma, spec.weight) {
        (Some(s), w) if w > 0.0 => s.scale(-w),
        _ => Expr::zero(),
    };
    Ok(ReformulationOutput {
        vars,
        inequalities: ineq,
        equalities: eq,
        cost,
        classification,
        delta,
    })
}

/// `G - M(1 - δ)`.
fn big_m_row(g: &Expr, d: &Expr, m: f64) -> Expr {
    Expr::sum([g.clone(), d.scale(m), Expr::constant(-m)])
}

/// Round relaxed indicators: 1 exactly where the relaxed value is 1 (within
/// [`INTEGRALITY_TOL`]), 0 elsewhere.
pub fn round_relaxed(delta: &[f64]) -> Vec<f64> {
    delta
        .iter()
        .map(|&d| if d >= 1.0 - INTEGRALITY_TOL { 1.0 } else { 0.0 })
        .collect()
}

/// One compiled indicator as recorded by the transcription.
#[derive(Debug, Clone)]
pub struct IndicatorRecord {
    pub delta: usize,
    pub consequence: Vec<Expr>,
    pub weight: f64,
    pub mode: LogicMode,
    pub node: usize,
    pub group: Option<usize>,
    /// Trigger expression for the trigger modes.
    pub trigger: Option<Expr>,
    pub epsilon: f64,
}

/// Raise every rewarded indicator whose consequence already holds to 1.
/// Only indicator modes are touched; the trigger modes tie δ to H.
pub fn polish_indicators(z: &[f64], records: &[IndicatorRecord]) -> Vec<f64> {
    let mut out = z.to_vec();
    for r in records {
        if r.weight <= 0.0 || !matches!(r.mode, LogicMode::IndicatorBigM | LogicMode::IndicatorVanishing) {
            continue;
        }
        if out[r.delta] >= 1.0 {
            continue;
        }
        let holds = r
            .consequence
            .iter()
            .all(|g| g.eval(z).map(|v| v <= POLISH_TOL).unwrap_or(false));
        if holds {
            out[r.delta] = 1.0;
        }
    }
    out
}

/// Indices that violate the polished-optimality property: consequence
/// satisfied with margin, positive weight, indicator not at 1.
pub fn unpolished_indices(z: &[f64], records: &[IndicatorRecord], margin: f64) -> Vec<usize> {
    records
        .iter()
        .enumerate()
        .filter(|(_, r)| {
            r.weight > 0.0
                && z[r.delta] <= 1.0 - margin
                && r.consequence.iter().all(|g| g.eval(z).map(|v| v <= -margin).unwrap_or(false))
        })
        .map(|(i, _)| i)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sign {
    Negative,
    Zero,
    Positive,
}

impl Sign {
    pub const ALL: [Sign; 3] = [Sign::Negative, Sign::Zero, Sign::Positive];

    pub fn value(self, magnitude: f64) -> f64 {
        match self {
            Sign::Negative => -magnitude,
            Sign::Zero => 0.0,
            Sign::Positive => magnitude,
        }
    }
}

/// Constraint sets the truth table is checked against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruthForm {
    /// Reference: (H > 0) ⇒ (G ≤ 0).
    Implication,
    /// G ≤ M(1 - δ) with δ fixed to [H > 0].
    BigM,
    /// H·G ≤ 0.
    BareProduct,
    EpsBigM,
    Mpcc,
}

/// Whether `form` admits the point `(H, G) = (h, g)`, searching the
/// auxiliary variables over a finite candidate set.
pub fn admits(form: TruthForm, h: f64, g: f64, big_m: f64, epsilon: f64) -> bool {
    if form == TruthForm::Implication {
        return !(h > 0.0) || g <= 0.0;
    }
    let hv = Expr::var(0);
    let gv = Expr::var(1);
    let spec = match form {
        TruthForm::BigM => ImplicationSpec::indicator(vec![gv.clone()], LogicMode::IndicatorBigM, big_m, 0.0),
        TruthForm::BareProduct => {
            ImplicationSpec::triggered(hv.clone(), vec![gv.clone()], LogicMode::IndicatorVanishing, Heaviside::DeltaVariable)
        }
        TruthForm::EpsBigM => {
            let mut s = ImplicationSpec::triggered(hv.clone(), vec![gv.clone()], LogicMode::TriggerEpsBigM, Heaviside::DeltaVariable)
                .with_big_m(big_m, big_m);
            s.epsilon = epsilon;
            s
        }
        TruthForm::Mpcc => {
            ImplicationSpec::triggered(hv.clone(), vec![gv.clone()], LogicMode::TriggerMpcc, Heaviside::DeltaVariable)
        }
        TruthForm::Implication => unreachable!(),
    };
    let out = match reformulate(&spec, 2) {
        Ok(o) => o,
        Err(_) => return false,
    };
    let candidates = |v: &AuxVar| -> Vec<f64> {
        if form == TruthForm::BigM && v.role == AuxRole::Delta {
            return vec![if h > 0.0 { 1.0 } else { 0.0 }];
        }
        let mut c = vec![0.0, 1.0, h, h.max(0.0)];
        if v.lower.is_finite() {
            c.push(v.lower);
        }
        if v.upper.is_finite() {
            c.push(v.upper);
        }
        c.retain(|x| *x >= v.lower && *x <= v.upper && (!v.integer || *x == 0.0 || *x == 1.0));
        c
    };
    let cands: Vec<Vec<f64>> = out.vars.iter().map(candidates).collect();
    let mut idx = vec![0usize; cands.len()];
    loop {
        let mut z = vec![h, g];
        z.extend(idx.iter().zip(&cands).map(|(&i, c)| c[i]));
        let ok = out
            .inequalities
            .iter()
            .all(|c| c.expr.eval(&z).map(|v| v <= 0.0).unwrap_or(false))
            && out.equalities.iter().all(|e| e.eval(&z).map(|v| v == 0.0).unwrap_or(false));
        if ok {
            return true;
        }
        // Next candidate combination.
        let mut k = 0;
        loop {
            if k == idx.len() {
                return false;
            }
            idx[k] += 1;
            if idx[k] < cands[k].len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

/// Truth-table driver with unit magnitudes.
pub fn check_truth_table(h: Sign, g: Sign, form: TruthForm) -> bool {
    admits(form, h.value(1.0), g.value(1.0), 12.0, ImplicationSpec::DEFAULT_EPSILON)
}
