//! Primal-dual interior-point method with a filter line search.
//!
//! Inequalities get slacks, `h(z) + s = 0, s >= 0`, and the slack step is
//! eliminated so the Newton system only carries `(dz, dλ, dν)`. Monotone
//! barrier updates, inertia-corrected sparse LDLᵀ, gradient-based problem
//! scaling, and an ℓ1-elastic feasibility restoration phase whose failure to
//! reach a feasible point is reported as local infeasibility.

use std::sync::Arc;

use log::{debug, trace};
use serde::{Deserialize, Serialize};

use super::ldl::{sym_matvec, NumericLdl, SymbolicLdl};
use super::{EvalWorkspace, NlpProblem, Proximal};
use crate::error::{EvalError, NlpError};
use crate::expr::Expr;

#[derive(Debug, Clone, PartialEq)]
pub struct IpmOptions {
    /// Scaled KKT tolerance.
    pub tol: f64,
    /// Unscaled constraint violation tolerance.
    pub constr_viol_tol: f64,
    pub max_iter: usize,
    pub mu_init: f64,
    pub bound_push: f64,
    /// Downscale objective/constraint rows whose gradient exceeds this.
    pub max_gradient: f64,
    pub gradient_scaling: bool,
    pub restoration: bool,
    pub max_restorations: usize,
}

impl Default for IpmOptions {
    fn default() -> Self {
        IpmOptions {
            tol: 1e-6,
            constr_viol_tol: 1e-6,
            max_iter: 3000,
            mu_init: 0.1,
            bound_push: 1e-2,
            max_gradient: 100.0,
            gradient_scaling: true,
            restoration: true,
            max_restorations: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NlpStatus {
    Optimal,
    LocallyInfeasible,
    MaxIter,
    NumericFailure,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KktResidual {
    pub stationarity: f64,
    pub feasibility: f64,
    pub complementarity: f64,
}

impl KktResidual {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.feasibility).max(self.complementarity)
    }
}

/// Outcome of the restoration phase when no feasible point was found.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfeasibilityCertificate {
    /// Largest constraint violation at the restoration optimum.
    pub violation: f64,
    /// KKT residual of the elastic feasibility problem there.
    pub stationarity: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Scaling {
    pub objective: f64,
    pub eq: Vec<f64>,
    pub ineq: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NlpSolution {
    pub status: NlpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub lambda_eq: Vec<f64>,
    pub nu_ineq: Vec<f64>,
    pub z_lower: Vec<f64>,
    pub z_upper: Vec<f64>,
    pub kkt: KktResidual,
    pub max_violation: f64,
    pub iterations: usize,
    pub restorations: usize,
    pub certificate: Option<InfeasibilityCertificate>,
    pub scaling: Scaling,
}

const KAPPA_EPS: f64 = 10.0;
const KAPPA_MU: f64 = 0.2;
const THETA_MU: f64 = 1.5;
const TAU_MIN: f64 = 0.99;
const KAPPA_SIGMA: f64 = 1e10;
const S_MAX: f64 = 100.0;
const S_PHI: f64 = 2.3;
const S_THETA: f64 = 1.1;
const DELTA_SW: f64 = 1.0;
const ETA_PHI: f64 = 1e-8;
const GAMMA_THETA: f64 = 1e-5;
const GAMMA_PHI: f64 = 1e-8;
const GAMMA_ALPHA: f64 = 0.05;
const DELTA_W0: f64 = 1e-4;
const DELTA_W_MIN: f64 = 1e-20;
const DELTA_W_MAX: f64 = 1e40;
const KAPPA_W_MINUS: f64 = 1.0 / 3.0;
const KAPPA_W_PLUS: f64 = 8.0;
const KAPPA_W_PLUS_BAR: f64 = 100.0;
const DELTA_C_BAR: f64 = 1e-8;
const KAPPA_C: f64 = 0.25;
const STATIC_REG: f64 = 1e-10;
const RESTO_RHO: f64 = 1000.0;
const RESTO_PUSH: f64 = 1e-2;
const MAX_LSQ_MULT: f64 = 1e3;
/// Violation (relative to the tolerance) above which a converged
/// restoration counts as infeasible even if the confirmation stalls.
const RESTO_GROSS: f64 = 1e4;

/// KKT pattern shared by every solve on one problem structure.
#[derive(Debug)]
pub(crate) struct KktSymbolic {
    sym: SymbolicLdl,
    entries: Vec<(usize, usize)>,
    hess_off: usize,
    jeq_off: usize,
    jin_off: usize,
    deq_off: usize,
    din_off: usize,
    jeq_rows: Vec<usize>,
    jin_rows: Vec<usize>,
}

impl KktSymbolic {
    fn build(p: &NlpProblem) -> KktSymbolic {
        let n = p.num_vars();
        let me = p.num_eq();
        let mi = p.num_ineq();
        let mut entries = Vec::new();
        for j in 0..n {
            entries.push((j, j));
        }
        let hess_off = entries.len();
        let (hr, hc) = p.hessian_pattern();
        for (&r, &c) in hr.iter().zip(hc) {
            entries.push((r, c));
        }
        let jeq_off = entries.len();
        let je = p.jac_eq_pattern();
        let mut jeq_rows = Vec::new();
        for r in 0..me {
            for k in je.row_ptr[r]..je.row_ptr[r + 1] {
                entries.push((n + r, je.col_idx[k]));
                jeq_rows.push(r);
            }
        }
        let jin_off = entries.len();
        let ji = p.jac_ineq_pattern();
        let mut jin_rows = Vec::new();
        for r in 0..mi {
            for k in ji.row_ptr[r]..ji.row_ptr[r + 1] {
                entries.push((n + me + r, ji.col_idx[k]));
                jin_rows.push(r);
            }
        }
        let deq_off = entries.len();
        for r in 0..me {
            entries.push((n + r, n + r));
        }
        let din_off = entries.len();
        for r in 0..mi {
            entries.push((n + me + r, n + me + r));
        }
        let sym = SymbolicLdl::analyze(n + me + mi, &entries);
        KktSymbolic {
            sym,
            entries,
            hess_off,
            jeq_off,
            jin_off,
            deq_off,
            din_off,
            jeq_rows,
            jin_rows,
        }
    }
}

/// Elastic feasibility problem over `(z, p, n, q)`:
/// `min ρ Σ(p + n + q) + prox  s.t.  g(z) - p + n = 0,  h(z) - q <= rhs`.
#[derive(Debug)]
pub(crate) struct RestorationTemplate {
    problem: NlpProblem,
}

impl RestorationTemplate {
    fn build(p: &NlpProblem) -> Result<RestorationTemplate, NlpError> {
        let n = p.num_vars();
        let me = p.num_eq();
        let mi = p.num_ineq();
        let nt = n + 2 * me + mi;
        let elastic: Vec<Expr> = (n..nt).map(Expr::var).collect();
        let objective = Expr::sum(elastic.iter().map(|e| e.scale(RESTO_RHO)));
        let eq = p
            .equality_exprs()
            .iter()
            .enumerate()
            .map(|(i, g)| Expr::sum([g.clone(), -Expr::var(n + i), Expr::var(n + me + i)]))
            .collect();
        let ineq = p
            .inequality_exprs()
            .iter()
            .enumerate()
            .map(|(i, h)| h - Expr::var(n + 2 * me + i))
            .collect();
        let mut lo = p.lower().to_vec();
        let mut hi = p.upper().to_vec();
        lo.resize(nt, 0.0);
        hi.resize(nt, f64::INFINITY);
        Ok(RestorationTemplate {
            problem: NlpProblem::new(nt, lo, hi, objective, eq, ineq)?,
        })
    }
}

#[derive(Debug, Clone)]
struct Iterate {
    x: Vec<f64>,
    s: Vec<f64>,
    lam: Vec<f64>,
    nu: Vec<f64>,
    zl: Vec<f64>,
    zu: Vec<f64>,
    f: f64,
    g: Vec<f64>,
    h: Vec<f64>,
    grad: Vec<f64>,
    jg: Vec<f64>,
    jh: Vec<f64>,
}

/// Direction of a Newton step.
#[derive(Debug, Clone)]
struct Step {
    dx: Vec<f64>,
    ds: Vec<f64>,
    dlam: Vec<f64>,
    dnu: Vec<f64>,
    dzl: Vec<f64>,
    dzu: Vec<f64>,
}

#[derive(Debug)]
enum LineSearch {
    Accepted { alpha: f64, f_type: bool },
    Failed,
}

struct Solver<'a> {
    p: &'a NlpProblem,
    opts: &'a IpmOptions,
    ws: EvalWorkspace,
    kkt: Arc<KktSymbolic>,
    num: NumericLdl,
    n: usize,
    me: usize,
    mi: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
    fixed: Vec<bool>,
    has_lo: Vec<bool>,
    has_hi: Vec<bool>,
    sf: f64,
    sg: Vec<f64>,
    sh: Vec<f64>,
    prox_diag: Vec<f64>,
    // per-iteration buffers
    hess: Vec<f64>,
    vals: Vec<f64>,
    vals_fact: Vec<f64>,
    rhs: Vec<f64>,
    sol: Vec<f64>,
    resid: Vec<f64>,
    delta_w_last: f64,
    filter: Vec<(f64, f64)>,
    theta_max: f64,
    theta_min: f64,
    restorations: usize,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, b| a.max(b.abs()))
}

fn push_into(x: f64, lo: f64, hi: f64, push: f64) -> f64 {
    let mut x = x;
    let w = hi - lo;
    if lo.is_finite() {
        let pl = (push * lo.abs().max(1.0)).min(if w.is_finite() { push * w } else { f64::INFINITY });
        x = x.max(lo + pl);
    }
    if hi.is_finite() {
        let pu = (push * hi.abs().max(1.0)).min(if w.is_finite() { push * w } else { f64::INFINITY });
        x = x.min(hi - pu);
    }
    if lo.is_finite() && hi.is_finite() && !(x > lo && x < hi) {
        x = 0.5 * (lo + hi);
    }
    x
}

/// Solve the NLP from `x0`. Returns `Err` only for malformed input; solver
/// outcomes are reported through [`NlpSolution::status`].
pub fn solve_nlp(problem: &NlpProblem, x0: &[f64], opts: &IpmOptions) -> Result<NlpSolution, NlpError> {
    let n = problem.num_vars();
    if x0.len() != n {
        return Err(NlpError::InvalidGuess(format!("guess has length {}, expected {n}", x0.len())));
    }
    if let Some(i) = x0.iter().position(|v| !v.is_finite()) {
        return Err(NlpError::InvalidGuess(format!("component {i} is not finite")));
    }
    let mut solver = Solver::new(problem, opts);
    solver.run(x0)
}

impl<'a> Solver<'a> {
    fn new(p: &'a NlpProblem, opts: &'a IpmOptions) -> Solver<'a> {
        let kkt = p.s.kkt_cache.get_or_init(|| Arc::new(KktSymbolic::build(p))).clone();
        let n = p.num_vars();
        let me = p.num_eq();
        let mi = p.num_ineq();
        let lo = p.lower().to_vec();
        let hi = p.upper().to_vec();
        let fixed: Vec<bool> = (0..n).map(|i| lo[i] == hi[i]).collect();
        let has_lo = (0..n).map(|i| !fixed[i] && lo[i].is_finite()).collect();
        let has_hi = (0..n).map(|i| !fixed[i] && hi[i].is_finite()).collect();
        let mut prox_diag = vec![0.0; n];
        if let Some(px) = &p.proximal {
            for i in 0..px.center.len() {
                prox_diag[i] = px.weight * px.scaling[i] * px.scaling[i];
            }
        }
        let ne = kkt.entries.len();
        let dim = n + me + mi;
        Solver {
            p,
            opts,
            ws: p.workspace(),
            num: kkt.sym.numeric(),
            kkt,
            n,
            me,
            mi,
            lo,
            hi,
            fixed,
            has_lo,
            has_hi,
            sf: 1.0,
            sg: vec![1.0; me],
            sh: vec![1.0; mi],
            prox_diag,
            hess: vec![0.0; p.hessian_pattern().0.len()],
            vals: vec![0.0; ne],
            vals_fact: vec![0.0; ne],
            rhs: vec![0.0; dim],
            sol: vec![0.0; dim],
            resid: vec![0.0; dim],
            delta_w_last: 0.0,
            filter: Vec::new(),
            theta_max: f64::INFINITY,
            theta_min: 0.0,
            restorations: 0,
        }
    }

    fn empty_iterate(&self) -> Iterate {
        Iterate {
            x: vec![0.0; self.n],
            s: vec![0.0; self.mi],
            lam: vec![0.0; self.me],
            nu: vec![1.0; self.mi],
            zl: vec![0.0; self.n],
            zu: vec![0.0; self.n],
            f: 0.0,
            g: vec![0.0; self.me],
            h: vec![0.0; self.mi],
            grad: vec![0.0; self.n],
            jg: vec![0.0; self.p.jac_eq_pattern().values.len()],
            jh: vec![0.0; self.p.jac_ineq_pattern().values.len()],
        }
    }

    /// Values and first/second-order data at `it.x`, scaled.
    fn eval_full(&mut self, it: &mut Iterate) -> Result<(), EvalError> {
        let f = self.p.derivatives_into(
            &it.x,
            &mut self.ws,
            &mut it.g,
            &mut it.h,
            &mut it.grad,
            &mut it.jg,
            &mut it.jh,
        )?;
        it.f = self.sf * f;
        for v in it.grad.iter_mut() {
            *v *= self.sf;
        }
        for i in 0..self.me {
            it.g[i] *= self.sg[i];
        }
        for i in 0..self.mi {
            it.h[i] *= self.sh[i];
        }
        for (k, v) in it.jg.iter_mut().enumerate() {
            *v *= self.sg[self.kkt.jeq_rows[k]];
        }
        for (k, v) in it.jh.iter_mut().enumerate() {
            *v *= self.sh[self.kkt.jin_rows[k]];
        }
        for j in 0..self.n {
            if self.fixed[j] {
                it.grad[j] = 0.0;
            }
        }
        Ok(())
    }

    fn eval_values(&mut self, x: &[f64], g: &mut [f64], h: &mut [f64]) -> Result<f64, EvalError> {
        let f = self.p.eval_into(x, &mut self.ws, g, h)?;
        for i in 0..self.me {
            g[i] *= self.sg[i];
        }
        for i in 0..self.mi {
            h[i] *= self.sh[i];
        }
        Ok(self.sf * f)
    }

    fn compute_scaling(&mut self, x: &[f64]) -> Result<(), EvalError> {
        if !self.opts.gradient_scaling {
            return Ok(());
        }
        let mut it = self.empty_iterate();
        it.x = x.to_vec();
        self.eval_full(&mut it)?;
        let gmax = self.opts.max_gradient;
        let down = |v: f64| if v > gmax { gmax / v } else { 1.0 };
        self.sf = down(inf_norm(&it.grad));
        let je = self.p.jac_eq_pattern();
        for r in 0..self.me {
            let m = inf_norm(&it.jg[je.row_ptr[r]..je.row_ptr[r + 1]]);
            self.sg[r] = down(m);
        }
        let ji = self.p.jac_ineq_pattern();
        for r in 0..self.mi {
            let m = inf_norm(&it.jh[ji.row_ptr[r]..ji.row_ptr[r + 1]]);
            self.sh[r] = down(m);
        }
        Ok(())
    }

    fn theta(g: &[f64], h: &[f64], s: &[f64]) -> f64 {
        g.iter().map(|v| v.abs()).sum::<f64>() + h.iter().zip(s).map(|(a, b)| (a + b).abs()).sum::<f64>()
    }

    fn barrier(&self, f: f64, x: &[f64], s: &[f64], mu: f64) -> f64 {
        let mut phi = f;
        for j in 0..self.n {
            if self.has_lo[j] {
                phi -= mu * (x[j] - self.lo[j]).ln();
            }
            if self.has_hi[j] {
                phi -= mu * (self.hi[j] - x[j]).ln();
            }
        }
        for v in s {
            phi -= mu * v.ln();
        }
        phi
    }

    fn barrier_slope(&self, it: &Iterate, d: &Step, mu: f64) -> f64 {
        let mut v = 0.0;
        for j in 0..self.n {
            if self.fixed[j] {
                continue;
            }
            let mut gj = it.grad[j];
            if self.has_lo[j] {
                gj -= mu / (it.x[j] - self.lo[j]);
            }
            if self.has_hi[j] {
                gj += mu / (self.hi[j] - it.x[j]);
            }
            v += gj * d.dx[j];
        }
        for i in 0..self.mi {
            v -= mu / it.s[i] * d.ds[i];
        }
        v
    }

    /// Scaled KKT residual components; `mu > 0` gives the barrier-problem
    /// error. With `use_slacks == false` the slack is taken as `max(-h, 0)`.
    fn kkt_error(&self, it: &Iterate, mu: f64, use_slacks: bool) -> (KktResidual, f64, f64) {
        let n = self.n;
        let mut r = it.grad.clone();
        let je = self.p.jac_eq_pattern();
        for row in 0..self.me {
            for k in je.row_ptr[row]..je.row_ptr[row + 1] {
                r[je.col_idx[k]] += it.jg[k] * it.lam[row];
            }
        }
        let ji = self.p.jac_ineq_pattern();
        for row in 0..self.mi {
            for k in ji.row_ptr[row]..ji.row_ptr[row + 1] {
                r[ji.col_idx[k]] += it.jh[k] * it.nu[row];
            }
        }
        let mut stat: f64 = 0.0;
        let mut compl: f64 = 0.0;
        let mut zsum = 0.0;
        let mut nz = 0usize;
        for j in 0..n {
            if self.fixed[j] {
                continue;
            }
            let rj = r[j] - it.zl[j] + it.zu[j];
            stat = stat.max(rj.abs());
            if self.has_lo[j] {
                compl = compl.max(((it.x[j] - self.lo[j]) * it.zl[j] - mu).abs());
                zsum += it.zl[j];
                nz += 1;
            }
            if self.has_hi[j] {
                compl = compl.max(((self.hi[j] - it.x[j]) * it.zu[j] - mu).abs());
                zsum += it.zu[j];
                nz += 1;
            }
        }
        let mut feas: f64 = inf_norm(&it.g);
        for i in 0..self.mi {
            let si = if use_slacks { it.s[i] } else { (-it.h[i]).max(0.0) };
            if use_slacks {
                feas = feas.max((it.h[i] + si).abs());
            } else {
                feas = feas.max(it.h[i].max(0.0));
            }
            compl = compl.max((si * it.nu[i] - mu).abs());
            zsum += it.nu[i];
            nz += 1;
        }
        let lsum: f64 = it.lam.iter().map(|v| v.abs()).sum();
        let m = self.me + nz;
        let sd = if m > 0 { (S_MAX.max((lsum + zsum) / m as f64)) / S_MAX } else { 1.0 };
        let sc = if nz > 0 { (S_MAX.max(zsum / nz as f64)) / S_MAX } else { 1.0 };
        (
            KktResidual {
                stationarity: stat / sd,
                feasibility: feas,
                complementarity: compl / sc,
            },
            sd,
            sc,
        )
    }

    fn unscaled_violation(&self, it: &Iterate) -> f64 {
        let mut v: f64 = 0.0;
        for i in 0..self.me {
            v = v.max((it.g[i] / self.sg[i]).abs());
        }
        for i in 0..self.mi {
            v = v.max(it.h[i] / self.sh[i]);
        }
        for j in 0..self.n {
            v = v.max(self.lo[j] - it.x[j]).max(it.x[j] - self.hi[j]);
        }
        v
    }

    fn sigma_x(&self, it: &Iterate, j: usize) -> f64 {
        let mut s = 0.0;
        if self.has_lo[j] {
            s += it.zl[j] / (it.x[j] - self.lo[j]);
        }
        if self.has_hi[j] {
            s += it.zu[j] / (self.hi[j] - it.x[j]);
        }
        s
    }

    /// Fill `self.vals` with the unregularized KKT matrix.
    fn assemble(&mut self, it: &Iterate, delta_w: f64, delta_c: f64) {
        let k = &self.kkt;
        let n = self.n;
        for j in 0..n {
            self.vals[j] = if self.fixed[j] {
                1.0
            } else {
                self.sigma_x(it, j) + delta_w + self.sf * self.prox_diag[j]
            };
        }
        let (hr, hc) = self.p.hessian_pattern();
        for t in 0..self.hess.len() {
            let v = if self.fixed[hr[t]] || self.fixed[hc[t]] {
                0.0
            } else {
                self.hess[t]
            };
            self.vals[k.hess_off + t] = v;
        }
        let je = self.p.jac_eq_pattern();
        for t in 0..it.jg.len() {
            self.vals[k.jeq_off + t] = if self.fixed[je.col_idx[t]] { 0.0 } else { it.jg[t] };
        }
        let ji = self.p.jac_ineq_pattern();
        for t in 0..it.jh.len() {
            self.vals[k.jin_off + t] = if self.fixed[ji.col_idx[t]] { 0.0 } else { it.jh[t] };
        }
        for r in 0..self.me {
            self.vals[k.deq_off + r] = -delta_c;
        }
        for r in 0..self.mi {
            self.vals[k.din_off + r] = -(it.s[r] / it.nu[r]) - delta_c;
        }
    }

    /// Factor `self.vals` plus static regularization; true if the inertia is
    /// `(n, me + mi, 0)`.
    fn factor(&mut self) -> bool {
        let k = &self.kkt;
        self.vals_fact.copy_from_slice(&self.vals);
        for r in 0..self.me {
            self.vals_fact[k.deq_off + r] -= STATIC_REG;
        }
        match k.sym.factor(&self.vals_fact, &mut self.num, 1e-300) {
            Ok(inertia) => inertia.positive == self.n && inertia.negative == self.me + self.mi,
            Err(_) => false,
        }
    }

    /// Solve with the current factor and refine against `self.vals`.
    fn solve_refined(&mut self) {
        let dim = self.rhs.len();
        self.sol.copy_from_slice(&self.rhs);
        self.kkt.sym.solve(&mut self.num, &mut self.sol);
        let bnorm = inf_norm(&self.rhs).max(1.0);
        let mut corr = vec![0.0; dim];
        for _ in 0..5 {
            sym_matvec(dim, &self.kkt.entries, &self.vals, &self.sol, &mut self.resid);
            for i in 0..dim {
                self.resid[i] = self.rhs[i] - self.resid[i];
            }
            if inf_norm(&self.resid) <= 1e-14 * bnorm {
                break;
            }
            corr.copy_from_slice(&self.resid);
            self.kkt.sym.solve(&mut self.num, &mut corr);
            for i in 0..dim {
                self.sol[i] += corr[i];
            }
        }
    }

    /// Inertia-corrected factorization. Returns false when the
    /// regularization limit is exceeded.
    fn factor_with_correction(&mut self, it: &Iterate, mu: f64) -> bool {
        self.assemble(it, 0.0, 0.0);
        if self.factor() {
            return true;
        }
        let delta_c = if self.me + self.mi > 0 {
            DELTA_C_BAR * mu.powf(KAPPA_C)
        } else {
            0.0
        };
        self.assemble(it, 0.0, delta_c);
        if self.me + self.mi > 0 && self.factor() {
            return true;
        }
        let mut dw = if self.delta_w_last == 0.0 {
            DELTA_W0
        } else {
            (KAPPA_W_MINUS * self.delta_w_last).max(DELTA_W_MIN)
        };
        loop {
            self.assemble(it, dw, delta_c);
            if self.factor() {
                self.delta_w_last = dw;
                return true;
            }
            dw *= if self.delta_w_last == 0.0 {
                KAPPA_W_PLUS_BAR
            } else {
                KAPPA_W_PLUS
            };
            if dw > DELTA_W_MAX {
                return false;
            }
        }
    }

    fn compute_step(&mut self, it: &Iterate, mu: f64) -> Option<Step> {
        let n = self.n;
        let (me, mi) = (self.me, self.mi);
        self.p.hessian_into(
            &self.ws,
            self.sf,
            &it.lam.iter().zip(&self.sg).map(|(l, s)| l * s).collect::<Vec<_>>(),
            &it.nu.iter().zip(&self.sh).map(|(l, s)| l * s).collect::<Vec<_>>(),
            &mut self.hess,
        );
        if self.hess.iter().any(|v| !v.is_finite()) {
            return None;
        }
        // Before factoring, the fast path reuses the last regularization
        // only if the unregularized matrix has wrong inertia.
        if !self.factor_with_correction(it, mu) {
            return None;
        }
        // Right-hand side.
        let mut rx = it.grad.clone();
        let je = self.p.jac_eq_pattern();
        for row in 0..me {
            for k in je.row_ptr[row]..je.row_ptr[row + 1] {
                rx[je.col_idx[k]] += it.jg[k] * it.lam[row];
            }
        }
        let ji = self.p.jac_ineq_pattern();
        for row in 0..mi {
            for k in ji.row_ptr[row]..ji.row_ptr[row + 1] {
                rx[ji.col_idx[k]] += it.jh[k] * it.nu[row];
            }
        }
        for j in 0..n {
            if self.fixed[j] {
                self.rhs[j] = 0.0;
                continue;
            }
            let mut r = rx[j];
            if self.has_lo[j] {
                r -= mu / (it.x[j] - self.lo[j]);
            }
            if self.has_hi[j] {
                r += mu / (self.hi[j] - it.x[j]);
            }
            self.rhs[j] = -r;
        }
        for i in 0..me {
            self.rhs[n + i] = -it.g[i];
        }
        for i in 0..mi {
            self.rhs[n + me + i] = -(it.h[i] + mu / it.nu[i]);
        }
        self.solve_refined();
        if self.sol.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let dx = self.sol[..n].to_vec();
        let dlam = self.sol[n..n + me].to_vec();
        let dnu = self.sol[n + me..].to_vec();
        let ds = (0..mi)
            .map(|i| mu / it.nu[i] - it.s[i] - it.s[i] / it.nu[i] * dnu[i])
            .collect();
        let mut dzl = vec![0.0; n];
        let mut dzu = vec![0.0; n];
        for j in 0..n {
            if self.has_lo[j] {
                let d = it.x[j] - self.lo[j];
                dzl[j] = mu / d - it.zl[j] - it.zl[j] / d * dx[j];
            }
            if self.has_hi[j] {
                let d = self.hi[j] - it.x[j];
                dzu[j] = mu / d - it.zu[j] + it.zu[j] / d * dx[j];
            }
        }
        Some(Step {
            dx,
            ds,
            dlam,
            dnu,
            dzl,
            dzu,
        })
    }

    fn max_step(&self, it: &Iterate, d: &Step, tau: f64) -> (f64, f64) {
        let mut ap: f64 = 1.0;
        for j in 0..self.n {
            if self.has_lo[j] && d.dx[j] < 0.0 {
                ap = ap.min(-tau * (it.x[j] - self.lo[j]) / d.dx[j]);
            }
            if self.has_hi[j] && d.dx[j] > 0.0 {
                ap = ap.min(tau * (self.hi[j] - it.x[j]) / d.dx[j]);
            }
        }
        for i in 0..self.mi {
            if d.ds[i] < 0.0 {
                ap = ap.min(-tau * it.s[i] / d.ds[i]);
            }
        }
        let mut ad: f64 = 1.0;
        for j in 0..self.n {
            if self.has_lo[j] && d.dzl[j] < 0.0 {
                ad = ad.min(-tau * it.zl[j] / d.dzl[j]);
            }
            if self.has_hi[j] && d.dzu[j] < 0.0 {
                ad = ad.min(-tau * it.zu[j] / d.dzu[j]);
            }
        }
        for i in 0..self.mi {
            if d.dnu[i] < 0.0 {
                ad = ad.min(-tau * it.nu[i] / d.dnu[i]);
            }
        }
        (ap, ad)
    }

    fn in_filter(&self, theta: f64, phi: f64) -> bool {
        self.filter.iter().any(|&(t, p)| theta >= t && phi >= p)
    }

    fn line_search(&mut self, it: &Iterate, d: &Step, mu: f64, alpha_max: f64, trial: &mut Iterate) -> LineSearch {
        let theta0 = Self::theta(&it.g, &it.h, &it.s);
        let phi0 = self.barrier(it.f, &it.x, &it.s, mu);
        let slope = self.barrier_slope(it, d, mu);
        let alpha_min = if slope < 0.0 {
            GAMMA_ALPHA
                * GAMMA_THETA.min(GAMMA_PHI * theta0 / -slope).min(if theta0 <= self.theta_min {
                    DELTA_SW * theta0.powf(S_THETA) / (-slope).powf(S_PHI)
                } else {
                    f64::INFINITY
                })
        } else {
            GAMMA_ALPHA * GAMMA_THETA
        };
        // Tiny steps are taken without a line search.
        let tiny = (0..self.n).all(|j| d.dx[j].abs() / (1.0 + it.x[j].abs()) < 10.0 * f64::EPSILON);
        let mut alpha = alpha_max;
        loop {
            for j in 0..self.n {
                trial.x[j] = it.x[j] + alpha * d.dx[j];
            }
            for i in 0..self.mi {
                trial.s[i] = it.s[i] + alpha * d.ds[i];
            }
            let xt = trial.x.clone();
            let v = self.eval_values(&xt, &mut trial.g, &mut trial.h);
            if let Ok(f) = v {
                if f.is_finite() && trial.g.iter().chain(&trial.h).all(|v| v.is_finite()) {
                    if tiny {
                        return LineSearch::Accepted { alpha, f_type: true };
                    }
                    let theta = Self::theta(&trial.g, &trial.h, &trial.s);
                    let phi = self.barrier(f, &trial.x, &trial.s, mu);
                    if theta <= self.theta_max && !self.in_filter(theta, phi) {
                        let switching = slope < 0.0
                            && alpha * (-slope).powf(S_PHI) > DELTA_SW * theta0.powf(S_THETA);
                        if theta0 <= self.theta_min && switching {
                            if phi <= phi0 + ETA_PHI * alpha * slope {
                                return LineSearch::Accepted { alpha, f_type: true };
                            }
                        } else if theta <= (1.0 - GAMMA_THETA) * theta0 || phi <= phi0 - GAMMA_PHI * theta0 {
                            return LineSearch::Accepted { alpha, f_type: false };
                        }
                    }
                }
            }
            alpha *= 0.5;
            if alpha < alpha_min {
                return LineSearch::Failed;
            }
        }
    }

    fn init_multipliers(&mut self, it: &mut Iterate) {
        if self.me == 0 {
            return;
        }
        let n = self.n;
        let me = self.me;
        let k = self.kkt.clone();
        self.vals.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..n {
            self.vals[j] = 1.0;
        }
        let je = self.p.jac_eq_pattern();
        for t in 0..it.jg.len() {
            self.vals[k.jeq_off + t] = if self.fixed[je.col_idx[t]] { 0.0 } else { it.jg[t] };
        }
        for r in 0..self.mi {
            self.vals[k.din_off + r] = -1.0;
        }
        for r in 0..me {
            self.vals[k.deq_off + r] = -1e-8;
        }
        if !self.factor() {
            return;
        }
        let mut r = it.grad.clone();
        let ji = self.p.jac_ineq_pattern();
        for row in 0..self.mi {
            for t in ji.row_ptr[row]..ji.row_ptr[row + 1] {
                r[ji.col_idx[t]] += it.jh[t] * it.nu[row];
            }
        }
        for j in 0..n {
            self.rhs[j] = if self.fixed[j] { 0.0 } else { -(r[j] - it.zl[j] + it.zu[j]) };
        }
        for i in n..self.rhs.len() {
            self.rhs[i] = 0.0;
        }
        self.solve_refined();
        let lam = &self.sol[n..n + me];
        if inf_norm(lam) <= MAX_LSQ_MULT && lam.iter().all(|v| v.is_finite()) {
            it.lam.copy_from_slice(lam);
        }
    }

    fn safeguard_duals(&self, it: &mut Iterate, mu: f64) {
        for j in 0..self.n {
            if self.has_lo[j] {
                let d = it.x[j] - self.lo[j];
                it.zl[j] = it.zl[j].clamp(mu / (KAPPA_SIGMA * d), KAPPA_SIGMA * mu / d);
            }
            if self.has_hi[j] {
                let d = self.hi[j] - it.x[j];
                it.zu[j] = it.zu[j].clamp(mu / (KAPPA_SIGMA * d), KAPPA_SIGMA * mu / d);
            }
        }
        for i in 0..self.mi {
            it.nu[i] = it.nu[i].clamp(mu / (KAPPA_SIGMA * it.s[i]), KAPPA_SIGMA * mu / it.s[i]);
        }
    }

    fn reset_filter(&mut self, it: &Iterate) {
        let theta0 = Self::theta(&it.g, &it.h, &it.s);
        self.filter.clear();
        self.theta_max = 1e4 * theta0.max(1.0);
        self.theta_min = 1e-4 * theta0.max(1.0);
    }

    fn run(&mut self, x0: &[f64]) -> Result<NlpSolution, NlpError> {
        let n = self.n;
        let mut it = self.empty_iterate();
        for j in 0..n {
            it.x[j] = if self.fixed[j] {
                self.lo[j]
            } else {
                push_into(x0[j], self.lo[j], self.hi[j], self.opts.bound_push)
            };
        }
        self.compute_scaling(&it.x.clone())?;
        self.eval_full(&mut it)?;
        for i in 0..self.mi {
            it.s[i] = (-it.h[i]).max(self.opts.bound_push * it.h[i].abs().max(1.0));
        }
        for j in 0..n {
            if self.has_lo[j] {
                it.zl[j] = 1.0;
            }
            if self.has_hi[j] {
                it.zu[j] = 1.0;
            }
        }
        self.init_multipliers(&mut it);

        let mut mu = self.opts.mu_init;
        let mu_min = self.opts.tol / 10.0;
        self.reset_filter(&it);
        let mut trial = it.clone();
        let mut iter = 0usize;
        let mut certificate = None;
        let status = loop {
            let (e0, _, _) = self.kkt_error(&it, 0.0, false);
            if e0.max() <= self.opts.tol && self.unscaled_violation(&it) <= self.opts.constr_viol_tol {
                break NlpStatus::Optimal;
            }
            if iter >= self.opts.max_iter {
                break NlpStatus::MaxIter;
            }
            loop {
                let (emu, _, _) = self.kkt_error(&it, mu, true);
                if emu.max() > KAPPA_EPS * mu || mu <= mu_min {
                    break;
                }
                mu = mu_min.max((KAPPA_MU * mu).min(mu.powf(THETA_MU)));
                self.reset_filter(&it);
            }
            let tau = TAU_MIN.max(1.0 - mu);
            trace!(
                "iter {iter} mu {mu:.2e} f {:.6e} theta {:.2e} e0 {:.2e}",
                it.f,
                Self::theta(&it.g, &it.h, &it.s),
                e0.max()
            );
            iter += 1;

            let step = self.compute_step(&it, mu);
            let accepted = match &step {
                Some(d) => {
                    let (ap, ad) = self.max_step(&it, d, tau);
                    match self.line_search(&it, d, mu, ap, &mut trial) {
                        LineSearch::Accepted { alpha, f_type } => Some((d, alpha, ad, f_type)),
                        LineSearch::Failed => None,
                    }
                }
                None => None,
            };
            match accepted {
                Some((d, alpha, ad, f_type)) => {
                    if !f_type {
                        let theta0 = Self::theta(&it.g, &it.h, &it.s);
                        let phi0 = self.barrier(it.f, &it.x, &it.s, mu);
                        self.filter.push(((1.0 - GAMMA_THETA) * theta0, phi0 - GAMMA_PHI * theta0));
                    }
                    std::mem::swap(&mut it.x, &mut trial.x);
                    std::mem::swap(&mut it.s, &mut trial.s);
                    for i in 0..self.me {
                        it.lam[i] += alpha * d.dlam[i];
                    }
                    for i in 0..self.mi {
                        it.nu[i] += ad * d.dnu[i];
                    }
                    for j in 0..n {
                        it.zl[j] += ad * d.dzl[j];
                        it.zu[j] += ad * d.dzu[j];
                    }
                    if self.eval_full(&mut it).is_err() {
                        break NlpStatus::NumericFailure;
                    }
                    self.safeguard_duals(&mut it, mu);
                    trial.x.copy_from_slice(&it.x);
                    trial.s.copy_from_slice(&it.s);
                }
                None => {
                    if !self.opts.restoration || self.restorations >= self.opts.max_restorations {
                        debug!("line search failed without restoration at iter {iter}");
                        break NlpStatus::NumericFailure;
                    }
                    self.restorations += 1;
                    match self.restore(&mut it, mu)? {
                        RestoreOutcome::Continue => {
                            trial = it.clone();
                        }
                        RestoreOutcome::Infeasible(c) => {
                            certificate = Some(c);
                            break NlpStatus::LocallyInfeasible;
                        }
                        RestoreOutcome::Failed => break NlpStatus::NumericFailure,
                    }
                }
            }
        };
        Ok(self.finish(&it, status, iter, certificate))
    }

    fn restore(&mut self, it: &mut Iterate, mu: f64) -> Result<RestoreOutcome, NlpError> {
        let template = {
            let mut guard = self.p.s.restoration.lock().expect("restoration cache lock");
            match &*guard {
                Some(t) => t.clone(),
                None => {
                    let t = Arc::new(RestorationTemplate::build(self.p)?);
                    *guard = Some(t.clone());
                    t
                }
            }
        };
        let (n, me, mi) = (self.n, self.me, self.mi);
        let theta_before = Self::theta(&it.g, &it.h, &it.s);
        let mut lo = self.lo.clone();
        let mut hi = self.hi.clone();
        let nt = n + 2 * me + mi;
        lo.resize(nt, 0.0);
        hi.resize(nt, f64::INFINITY);
        let zeta = mu.sqrt();
        let scaling: Vec<f64> = it.x.iter().map(|v| 1.0f64.min(1.0 / v.abs())).collect();
        let base = template
            .problem
            .with_bounds(lo, hi)?
            .with_rhs(self.p.rhs().to_vec())?;
        // Unscaled constraint values for the elastic start.
        let mut x0 = it.x.clone();
        for i in 0..me {
            x0.push((it.g[i] / self.sg[i]).max(0.0) + RESTO_PUSH);
        }
        for i in 0..me {
            x0.push((-it.g[i] / self.sg[i]).max(0.0) + RESTO_PUSH);
        }
        for i in 0..mi {
            x0.push((it.h[i] / self.sh[i]).max(0.0) + RESTO_PUSH);
        }
        let inner_opts = IpmOptions {
            restoration: false,
            max_iter: self.opts.max_iter.min(1000),
            ..self.opts.clone()
        };
        let solve = |weight: f64, center: &[f64], start: &[f64]| -> Result<NlpSolution, NlpError> {
            let prob = base.with_proximal(Proximal {
                weight,
                center: center.to_vec(),
                scaling: scaling.clone(),
            })?;
            solve_nlp(&prob, start, &inner_opts)
        };
        let sol = solve(zeta, &it.x, &x0)?;
        debug!(
            "restoration: status {:?} iterations {} violation {:.3e}",
            sol.status,
            sol.iterations,
            self.p.max_violation(&sol.x[..n]).unwrap_or(f64::INFINITY)
        );
        let xr = sol.x[..n].to_vec();
        let viol = match self.p.max_violation(&xr) {
            Ok(v) => v,
            Err(_) => return Ok(RestoreOutcome::Failed),
        };
        if sol.status == NlpStatus::Optimal && viol > self.opts.constr_viol_tol {
            // Confirm with a much weaker proximal pull before declaring
            // infeasibility.
            let confirm = solve(zeta * 1e-4, &xr, &sol.x)?;
            let xc = confirm.x[..n].to_vec();
            let vc = self.p.max_violation(&xc).unwrap_or(f64::INFINITY);
            debug!("restoration confirm: status {:?} iterations {} violation {vc:.3e}", confirm.status, confirm.iterations);
            if confirm.status == NlpStatus::Optimal && vc > self.opts.constr_viol_tol {
                it.x = xc;
                if self.eval_full(it).is_err() {
                    return Ok(RestoreOutcome::Failed);
                }
                return Ok(RestoreOutcome::Infeasible(InfeasibilityCertificate {
                    violation: vc,
                    stationarity: confirm.kkt.stationarity,
                }));
            }
            if vc <= self.opts.constr_viol_tol {
                return self.resume_from(it, xc, mu, theta_before);
            }
            if viol.min(vc) > RESTO_GROSS * self.opts.constr_viol_tol {
                let (xb, vb, stat) = if vc < viol {
                    (xc, vc, confirm.kkt.stationarity)
                } else {
                    (xr, viol, sol.kkt.stationarity)
                };
                it.x = xb;
                if self.eval_full(it).is_err() {
                    return Ok(RestoreOutcome::Failed);
                }
                return Ok(RestoreOutcome::Infeasible(InfeasibilityCertificate {
                    violation: vb,
                    stationarity: stat,
                }));
            }
            return Ok(RestoreOutcome::Failed);
        }
        self.resume_from(it, xr, mu, theta_before)
    }

    fn resume_from(&mut self, it: &mut Iterate, x: Vec<f64>, mu: f64, theta_before: f64) -> Result<RestoreOutcome, NlpError> {
        let n = self.n;
        let old = it.clone();
        for j in 0..n {
            it.x[j] = if self.fixed[j] {
                self.lo[j]
            } else {
                push_into(x[j], self.lo[j], self.hi[j], 1e-10)
            };
        }
        if self.eval_full(it).is_err() {
            *it = old;
            return Ok(RestoreOutcome::Failed);
        }
        for i in 0..self.mi {
            it.s[i] = (-it.h[i]).max(mu.min(1e-2));
        }
        let theta = Self::theta(&it.g, &it.h, &it.s);
        if !(theta < theta_before) && theta > self.opts.constr_viol_tol {
            *it = old;
            return Ok(RestoreOutcome::Failed);
        }
        for j in 0..n {
            if self.has_lo[j] {
                it.zl[j] = it.zl[j].min(1e3);
            }
            if self.has_hi[j] {
                it.zu[j] = it.zu[j].min(1e3);
            }
        }
        for v in it.nu.iter_mut() {
            *v = v.min(1e3);
        }
        self.safeguard_duals(it, mu);
        self.init_multipliers(it);
        self.reset_filter(it);
        Ok(RestoreOutcome::Continue)
    }

    fn finish(&mut self, it: &Iterate, status: NlpStatus, iterations: usize, certificate: Option<InfeasibilityCertificate>) -> NlpSolution {
        let (kkt, _, _) = self.kkt_error(it, 0.0, false);
        let objective = self.p.evaluate(&it.x).map(|e| e.objective).unwrap_or(f64::NAN);
        let sf = self.sf;
        NlpSolution {
            status,
            x: it.x.clone(),
            objective,
            lambda_eq: it.lam.iter().zip(&self.sg).map(|(l, s)| l * s / sf).collect(),
            nu_ineq: it.nu.iter().zip(&self.sh).map(|(l, s)| l * s / sf).collect(),
            z_lower: it.zl.iter().map(|z| z / sf).collect(),
            z_upper: it.zu.iter().map(|z| z / sf).collect(),
            kkt,
            max_violation: self.unscaled_violation(it),
            iterations,
            restorations: self.restorations,
            certificate,
            scaling: Scaling {
                objective: sf,
                eq: self.sg.clone(),
                ineq: self.sh.clone(),
            },
        }
    }
}

enum RestoreOutcome {
    Continue,
    Infeasible(InfeasibilityCertificate),
    Failed,
}

/// Largest scaled KKT residual component of `sol` for `problem`, using the
/// scaling recorded in the solution (unit scaling if it is empty).
pub fn kkt_residual(problem: &NlpProblem, sol: &NlpSolution) -> f64 {
    kkt_components(problem, sol).map(|k| k.max()).unwrap_or(f64::INFINITY)
}

/// Component-wise version of [`kkt_residual`].
pub fn kkt_components(problem: &NlpProblem, sol: &NlpSolution) -> Result<KktResidual, EvalError> {
    let opts = IpmOptions::default();
    let mut s = Solver::new(problem, &opts);
    let me = problem.num_eq();
    let mi = problem.num_ineq();
    if sol.lambda_eq.len() != me || sol.nu_ineq.len() != mi || sol.x.len() != problem.num_vars() {
        return Err(EvalError::Dimension {
            expected: problem.num_vars(),
            got: sol.x.len(),
        });
    }
    if sol.scaling.eq.len() == me && sol.scaling.ineq.len() == mi && sol.scaling.objective > 0.0 {
        s.sf = sol.scaling.objective;
        s.sg = sol.scaling.eq.clone();
        s.sh = sol.scaling.ineq.clone();
    }
    let mut it = s.empty_iterate();
    it.x = sol.x.clone();
    s.eval_full(&mut it)?;
    let sf = s.sf;
    it.lam = sol.lambda_eq.iter().zip(&s.sg).map(|(l, g)| l * sf / g).collect();
    it.nu = sol.nu_ineq.iter().zip(&s.sh).map(|(l, g)| l * sf / g).collect();
    it.zl = sol.z_lower.iter().map(|z| z * sf).collect();
    it.zu = sol.z_upper.iter().map(|z| z * sf).collect();
    Ok(s.kkt_error(&it, 0.0, false).0)
}
