//! Helpers shared by the integration tests and the acceptance harness.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use trigger_ocp::logic::{reformulate, ImplicationSpec, LogicMode};
use trigger_ocp::minlp::MinlpProblem;
use trigger_ocp::{Expr, NlpProblem};

pub fn rng(seed: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform point inside the variable bounds; unbounded sides are cut at
/// `±span` around the finite side (or zero).
pub fn random_point(p: &NlpProblem, span: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    p.lower()
        .iter()
        .zip(p.upper())
        .map(|(&lo, &hi)| {
            let (a, b) = match (lo.is_finite(), hi.is_finite()) {
                (true, true) => (lo, hi),
                (true, false) => (lo, lo + span),
                (false, true) => (hi - span, hi),
                (false, false) => (-span, span),
            };
            if a == b {
                a
            } else {
                rng.gen_range(a..=b)
            }
        })
        .collect()
}

/// `|a - f| / max(1, |a|)`.
pub fn rel_err(ad: f64, fd: f64) -> f64 {
    (ad - fd).abs() / ad.abs().max(1.0)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct FdReport {
    pub max_rel: f64,
    pub entries: usize,
    /// Finite-difference entries above `1e-7` outside the sparsity pattern.
    pub outside_pattern: usize,
}

impl FdReport {
    pub fn merge(&mut self, o: FdReport) {
        self.max_rel = self.max_rel.max(o.max_rel);
        self.entries += o.entries;
        self.outside_pattern += o.outside_pattern;
    }
}

/// All function values of a problem stacked into one vector.
fn stacked(p: &NlpProblem, x: &[f64]) -> Vec<f64> {
    let e = p.evaluate(x).expect("eval at offset");
    let mut v = vec![e.objective];
    v.extend(e.eq);
    v.extend(e.ineq);
    v
}

/// Ridders extrapolation of central differences along coordinate `j`,
/// elementwise over the stacked function values. Each entry keeps the
/// tableau value with the smallest error estimate.
pub fn ridders_column(p: &NlpProblem, x: &[f64], j: usize) -> Vec<f64> {
    const CON: f64 = 2.0;
    const LEVELS: usize = 16;
    let mut xp = x.to_vec();
    let mut central = |h: f64| {
        xp[j] = x[j] + h;
        let a = stacked(p, &xp);
        xp[j] = x[j] - h;
        let b = stacked(p, &xp);
        xp[j] = x[j];
        a.iter().zip(&b).map(|(a, b)| (a - b) / (2.0 * h)).collect::<Vec<f64>>()
    };
    let mut h = 1e-2 * x[j].abs().max(1.0);
    let first = central(h);
    let m = first.len();
    let mut best = first.clone();
    let mut err = vec![f64::INFINITY; m];
    let mut prev: Vec<Vec<f64>> = vec![first];
    for _ in 1..LEVELS {
        h /= CON;
        let mut row = vec![central(h)];
        let mut fac = CON * CON;
        for k in 1..=prev.len() {
            let r: Vec<f64> = row[k - 1].iter().zip(&prev[k - 1]).map(|(a, b)| (a * fac - b) / (fac - 1.0)).collect();
            for i in 0..m {
                let e = (r[i] - row[k - 1][i]).abs().max((r[i] - prev[k - 1][i]).abs());
                if e <= err[i] {
                    err[i] = e;
                    best[i] = r[i];
                }
            }
            row.push(r);
            fac *= CON * CON;
        }
        prev = row;
    }
    best
}

/// Compare the objective gradient and both constraint Jacobians against
/// extrapolated central differences, column by column.
pub fn fd_check(p: &NlpProblem, x: &[f64]) -> FdReport {
    let d = p.derivatives(x).expect("derivatives at sample");
    let je = d.jac_eq.to_dense();
    let ji = d.jac_ineq.to_dense();
    let in_eq = pattern(&d.jac_eq);
    let in_ineq = pattern(&d.jac_ineq);
    let (ne, ni) = (je.len(), ji.len());
    let mut rep = FdReport::default();
    for j in 0..x.len() {
        let col = ridders_column(p, x, j);
        let mut see = |ad: f64, fd: f64, present: bool| {
            rep.entries += 1;
            rep.max_rel = rep.max_rel.max(rel_err(ad, fd));
            if !present && fd.abs() > 1e-7 {
                rep.outside_pattern += 1;
            }
        };
        see(d.gradient[j], col[0], true);
        for r in 0..ne {
            see(je[r][j], col[1 + r], in_eq[r].contains(&j));
        }
        for r in 0..ni {
            see(ji[r][j], col[1 + ne + r], in_ineq[r].contains(&j));
        }
    }
    rep
}

fn pattern(m: &trigger_ocp::nlp::CsrMatrix) -> Vec<Vec<usize>> {
    (0..m.nrows).map(|r| m.col_idx[m.row_ptr[r]..m.row_ptr[r + 1]].to_vec()).collect()
}

/// Convex quadratic MINLP: `‖L z - r‖² + cᵀz` over `z = (x, b)` with random
/// linear constraints that hold at a random reference point.
pub fn random_convex_minlp(rng: &mut ChaCha8Rng) -> (MinlpProblem, Vec<f64>) {
    let nx = rng.gen_range(2..=4);
    let nb = rng.gen_range(1..=8);
    let n = nx + nb;
    let z: Vec<Expr> = (0..n).map(Expr::var).collect();
    let rows = n + 2;
    let mut terms = Vec::new();
    for _ in 0..rows {
        let coef: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r = rng.gen_range(-2.0..2.0);
        terms.push(Expr::affine(&coef, &z, -r).square());
    }
    let c: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    terms.push(Expr::affine(&c, &z, 0.0));
    let objective = Expr::sum(terms);
    let x_ref: Vec<f64> = (0..nx).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let b_ref: Vec<f64> = (0..nb).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
    let z_ref: Vec<f64> = x_ref.iter().chain(&b_ref).copied().collect();
    let ncons = rng.gen_range(1..=3);
    let mut ineq = Vec::new();
    for _ in 0..ncons {
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let at: f64 = a.iter().zip(&z_ref).map(|(a, v)| a * v).sum();
        let slack = rng.gen_range(0.1..1.0);
        ineq.push(Expr::affine(&a, &z, -(at + slack)));
    }
    let mut lower = vec![-5.0; nx];
    let mut upper = vec![5.0; nx];
    lower.extend(vec![0.0; nb]);
    upper.extend(vec![1.0; nb]);
    let nlp = NlpProblem::new(n, lower, upper, objective, vec![], ineq).expect("valid problem");
    let integer: Vec<usize> = (nx..n).collect();
    let mut guess = vec![0.0; nx];
    guess.extend(vec![0.5; nb]);
    (MinlpProblem::new(nlp, integer).expect("binaries boxed"), guess)
}

/// Relaxed big-M indicator instance: reward each `δ_i` whose half-space
/// `a_iᵀx + b_i ≤ 0` holds, with `x` pulled toward a random target.
pub struct IndicatorInstance {
    pub nlp: NlpProblem,
    pub nx: usize,
    pub deltas: Vec<usize>,
    /// Compiled big-M row `G_i - M_i(1 - δ_i)` for each indicator.
    pub big_m_rows: Vec<Expr>,
    pub big_m: Vec<f64>,
}

pub fn random_indicator_instance(rng: &mut ChaCha8Rng) -> IndicatorInstance {
    let nx = 2;
    let k = rng.gen_range(2..=6);
    let x: Vec<Expr> = (0..nx).map(Expr::var).collect();
    let target: Vec<f64> = (0..nx).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let mut cost = vec![Expr::sum(x.iter().zip(&target).map(|(xi, t)| (xi - *t).square())).scale(0.1)];
    let mut ineq = Vec::new();
    let mut rows = Vec::new();
    let mut deltas = Vec::new();
    let mut big_m = Vec::new();
    let mut lower = vec![-4.0; nx];
    let mut upper = vec![4.0; nx];
    for i in 0..k {
        let a: Vec<f64> = (0..nx).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b = rng.gen_range(-2.0..2.0);
        // max over the box of aᵀx + b
        let bound = a.iter().map(|v| 4.0 * v.abs()).sum::<f64>() + b;
        let m = bound.max(0.0) + 1.0;
        let g = Expr::affine(&a, &x, b);
        let spec = ImplicationSpec::indicator(vec![g], LogicMode::IndicatorBigM, m, rng.gen_range(0.5..2.0));
        let out = reformulate(&spec, nx + i).expect("compiles");
        cost.push(out.cost);
        for c in out.inequalities {
            ineq.push(c.expr.clone());
            rows.push(c.expr);
        }
        deltas.push(nx + i);
        big_m.push(m);
        lower.push(0.0);
        upper.push(1.0);
    }
    let n = nx + k;
    let nlp = NlpProblem::new(n, lower, upper, Expr::sum(cost), vec![], ineq).expect("valid problem");
    IndicatorInstance {
        nlp,
        nx,
        deltas,
        big_m_rows: rows,
        big_m,
    }
}

/// Short-horizon instances of every scenario model and formulation, for the
/// derivative checks.
pub fn derivative_models() -> Vec<(String, NlpProblem)> {
    use trigger_ocp::scenarios::docking::{build_docking_ocp, DockingParams};
    use trigger_ocp::scenarios::pdg::{build_pdg_ocp, default_pyramids, LanderParams};
    use trigger_ocp::scenarios::ugv::{build_ugv_ocp, default_regions, UgvParams};
    use trigger_ocp::scenarios::Formulation;
    let mut out = Vec::new();
    for f in [Formulation::Minlp, Formulation::Mpvc] {
        let ugv = UgvParams {
            n: 3,
            ..UgvParams::default()
        };
        let p = build_ugv_ocp(&ugv, &default_regions(), f).expect("ugv builds");
        out.push((format!("ugv/{f:?}"), p.nlp.problem));
        let pdg = LanderParams {
            n: 3,
            ..LanderParams::default()
        };
        let p = build_pdg_ocp(&pdg, &default_pyramids(), f).expect("pdg builds");
        out.push((format!("pdg/{f:?}"), p.nlp.problem));
        let dock = DockingParams {
            n: 3,
            ..DockingParams::default()
        };
        let p = build_docking_ocp(&dock, f).expect("docking builds");
        out.push((format!("docking/{f:?}"), p.nlp.problem));
    }
    out
}
