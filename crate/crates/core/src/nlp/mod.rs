//! Smooth nonlinear programs and their interior-point solver.
//!
//! ```text
//! minimize    f(z)
//! subject to  g(z) = 0,  h(z) <= rhs,  lb <= z <= ub
//! ```
//!
//! Functions are [`Expr`] graphs compiled once into tapes. Bounds and the
//! right-hand side of the inequalities can be swapped cheaply (branch and
//! bound, homotopy) without recompiling.

mod ipm;
pub mod ldl;
mod tape;

use std::collections::BTreeMap;
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{EvalError, NlpError};
use crate::expr::{Expr, Node};
use tape::{unpack, Tape, TapeScratch};

pub use ipm::{
    kkt_components, kkt_residual, solve_nlp, InfeasibilityCertificate, IpmOptions, KktResidual, NlpSolution, NlpStatus, Scaling,
};

#[derive(Debug, Clone, Copy, PartialEq)]
enum RootKind {
    Objective(f64),
    Eq(usize),
    Ineq(usize),
}

#[derive(Debug, Clone)]
struct RootMeta {
    tape: usize,
    root: usize,
    kind: RootKind,
    /// Local dependency index and its target: a gradient index for objective
    /// terms, a Jacobian value position for constraints.
    grad: Vec<(u32, usize)>,
    /// Packed local Hessian index and its position in the Hessian pattern.
    hess: Vec<(u32, usize)>,
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for r in 0..self.nrows {
            for p in self.row_ptr[r]..self.row_ptr[r + 1] {
                d[r][self.col_idx[p]] += self.values[p];
            }
        }
        d
    }

    /// `y += Aᵀ w`.
    pub fn transpose_mul_add(&self, w: &[f64], y: &mut [f64]) {
        for r in 0..self.nrows {
            let wr = w[r];
            if wr == 0.0 {
                continue;
            }
            for p in self.row_ptr[r]..self.row_ptr[r + 1] {
                y[self.col_idx[p]] += self.values[p] * wr;
            }
        }
    }

    /// `y = A x`.
    pub fn mul(&self, x: &[f64], y: &mut [f64]) {
        for r in 0..self.nrows {
            y[r] = (self.row_ptr[r]..self.row_ptr[r + 1])
                .map(|p| self.values[p] * x[self.col_idx[p]])
                .sum();
        }
    }

    fn with_pattern(nrows: usize, ncols: usize, rows: &[Vec<usize>]) -> CsrMatrix {
        let mut row_ptr = vec![0];
        let mut col_idx = Vec::new();
        for r in rows {
            col_idx.extend_from_slice(r);
            row_ptr.push(col_idx.len());
        }
        let nnz = col_idx.len();
        CsrMatrix {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values: vec![0.0; nnz],
        }
    }
}

/// Lower triangle of a symmetric matrix as coordinate entries (`row >= col`).
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricCoo {
    pub n: usize,
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub values: Vec<f64>,
}

impl SymmetricCoo {
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for k in 0..self.values.len() {
            let (i, j) = (self.rows[k], self.cols[k]);
            d[i][j] += self.values[k];
            if i != j {
                d[j][i] += self.values[k];
            }
        }
        d
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub objective: f64,
    /// Equality residuals `g(z)`.
    pub eq: Vec<f64>,
    /// Inequality residuals `h(z) - rhs`, feasible when `<= 0`.
    pub ineq: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Derivatives {
    pub gradient: Vec<f64>,
    pub jac_eq: CsrMatrix,
    pub jac_ineq: CsrMatrix,
}

/// Diagonal proximal term `weight/2 * Σ (scaling_i (z_i - center_i))²` over
/// the first `center.len()` variables, added to the objective natively.
#[derive(Debug, Clone, PartialEq)]
pub struct Proximal {
    pub weight: f64,
    pub center: Vec<f64>,
    pub scaling: Vec<f64>,
}

pub(crate) struct Structure {
    n: usize,
    m_eq: usize,
    m_ineq: usize,
    objective_constant: f64,
    tapes: Vec<Tape>,
    roots: Vec<RootMeta>,
    jac_eq: CsrMatrix,
    jac_ineq: CsrMatrix,
    hess_rows: Vec<usize>,
    hess_cols: Vec<usize>,
    objective: Expr,
    equalities: Vec<Expr>,
    inequalities: Vec<Expr>,
    pub(crate) kkt_cache: OnceLock<Arc<ipm::KktSymbolic>>,
    pub(crate) restoration: Mutex<Option<Arc<ipm::RestorationTemplate>>>,
}

impl std::fmt::Debug for Structure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Structure")
            .field("n", &self.n)
            .field("m_eq", &self.m_eq)
            .field("m_ineq", &self.m_ineq)
            .field("tapes", &self.tapes.len())
            .finish()
    }
}

/// A nonlinear program. Cloning is cheap; clones share the compiled
/// structure.
#[derive(Debug, Clone)]
pub struct NlpProblem {
    pub(crate) s: Arc<Structure>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    rhs: Vec<f64>,
    pub(crate) proximal: Option<Proximal>,
}

/// Reusable evaluation buffers for one problem structure.
#[derive(Debug, Clone)]
pub struct EvalWorkspace {
    scratch: Vec<TapeScratch>,
}

fn split_terms(e: &Expr, coef: f64, out: &mut Vec<(f64, Expr)>, constant: &mut f64) {
    match e.node() {
        Node::Const(c) => *constant += coef * c,
        Node::Sum(children) => {
            for c in children {
                split_terms(c, coef, out, constant);
            }
        }
        Node::Neg(a) => split_terms(a, -coef, out, constant),
        Node::Product(a, b) => match (a.as_const(), b.as_const()) {
            (Some(k), _) => split_terms(b, coef * k, out, constant),
            (_, Some(k)) => split_terms(a, coef * k, out, constant),
            _ => out.push((coef, e.clone())),
        },
        _ => out.push((coef, e.clone())),
    }
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Partition roots into groups that share interior nodes.
fn group_roots(roots: &[Expr]) -> Vec<Vec<usize>> {
    let mut parent: Vec<usize> = (0..roots.len()).collect();
    let mut owner: HashMap<*const Node, usize> = HashMap::new();
    for (r, root) in roots.iter().enumerate() {
        let mut stack = vec![root];
        while let Some(e) = stack.pop() {
            if matches!(e.node(), Node::Const(_) | Node::Var(_)) {
                continue;
            }
            match owner.get(&e.ptr()) {
                Some(&o) => {
                    if o != r {
                        let (a, b) = (find(&mut parent, o), find(&mut parent, r));
                        if a != b {
                            parent[a] = b;
                        }
                    }
                }
                None => {
                    owner.insert(e.ptr(), r);
                    stack.extend(e.children());
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for r in 0..roots.len() {
        let g = find(&mut parent, r);
        groups.entry(g).or_default().push(r);
    }
    let mut out: Vec<Vec<usize>> = groups.into_values().collect();
    out.sort_by_key(|g| g[0]);
    out
}

impl NlpProblem {
    /// Build a problem over `n` variables. Inequalities are `h(z) <= 0`
    /// until a right-hand side is set with [`NlpProblem::with_rhs`].
    pub fn new(
        n: usize,
        lower: Vec<f64>,
        upper: Vec<f64>,
        objective: Expr,
        equalities: Vec<Expr>,
        inequalities: Vec<Expr>,
    ) -> Result<NlpProblem, NlpError> {
        if lower.len() != n || upper.len() != n {
            return Err(NlpError::InvalidProblem(format!(
                "bound vectors have lengths {} and {}, expected {n}",
                lower.len(),
                upper.len()
            )));
        }
        for i in 0..n {
            if lower[i].is_nan() || upper[i].is_nan() || lower[i] > upper[i] {
                return Err(NlpError::InvalidProblem(format!(
                    "variable {i} has bounds [{}, {}]",
                    lower[i], upper[i]
                )));
            }
        }
        let all = std::iter::once(&objective).chain(&equalities).chain(&inequalities);
        for e in all {
            if let Some(v) = e.max_var() {
                if v >= n {
                    return Err(NlpError::InvalidProblem(format!(
                        "expression references variable {v} but the problem has {n}"
                    )));
                }
            }
        }
        let m_ineq = inequalities.len();
        let s = Structure::build(n, objective, equalities, inequalities);
        Ok(NlpProblem {
            s: Arc::new(s),
            lower,
            upper,
            rhs: vec![0.0; m_ineq],
            proximal: None,
        })
    }

    pub fn num_vars(&self) -> usize {
        self.s.n
    }

    pub fn num_eq(&self) -> usize {
        self.s.m_eq
    }

    pub fn num_ineq(&self) -> usize {
        self.s.m_ineq
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    pub fn objective_expr(&self) -> &Expr {
        &self.s.objective
    }

    pub fn equality_exprs(&self) -> &[Expr] {
        &self.s.equalities
    }

    pub fn inequality_exprs(&self) -> &[Expr] {
        &self.s.inequalities
    }

    /// Same structure with new variable bounds.
    pub fn with_bounds(&self, lower: Vec<f64>, upper: Vec<f64>) -> Result<NlpProblem, NlpError> {
        let n = self.s.n;
        if lower.len() != n || upper.len() != n {
            return Err(NlpError::InvalidProblem("bound length mismatch".into()));
        }
        if let Some(i) = (0..n).find(|&i| !(lower[i] <= upper[i])) {
            return Err(NlpError::InvalidProblem(format!(
                "variable {i} has bounds [{}, {}]",
                lower[i], upper[i]
            )));
        }
        Ok(NlpProblem {
            lower,
            upper,
            ..self.clone()
        })
    }

    /// Same structure with inequalities read as `h(z) <= rhs`.
    pub fn with_rhs(&self, rhs: Vec<f64>) -> Result<NlpProblem, NlpError> {
        if rhs.len() != self.s.m_ineq {
            return Err(NlpError::InvalidProblem("rhs length mismatch".into()));
        }
        Ok(NlpProblem { rhs, ..self.clone() })
    }

    pub fn with_proximal(&self, proximal: Proximal) -> Result<NlpProblem, NlpError> {
        if proximal.center.len() != proximal.scaling.len() || proximal.center.len() > self.s.n {
            return Err(NlpError::InvalidProblem("proximal term dimension mismatch".into()));
        }
        Ok(NlpProblem {
            proximal: Some(proximal),
            ..self.clone()
        })
    }

    pub fn workspace(&self) -> EvalWorkspace {
        EvalWorkspace {
            scratch: self.s.tapes.iter().map(|t| t.scratch()).collect(),
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), EvalError> {
        if x.len() != self.s.n {
            return Err(EvalError::Dimension {
                expected: self.s.n,
                got: x.len(),
            });
        }
        Ok(())
    }

    fn proximal_value(&self, x: &[f64]) -> f64 {
        match &self.proximal {
            Some(p) => {
                0.5 * p.weight
                    * p.center
                        .iter()
                        .zip(&p.scaling)
                        .zip(x)
                        .map(|((c, d), xi)| (d * (xi - c)).powi(2))
                        .sum::<f64>()
            }
            None => 0.0,
        }
    }

    /// Objective and constraint residuals, written into caller buffers.
    pub(crate) fn eval_into(
        &self,
        x: &[f64],
        ws: &mut EvalWorkspace,
        eq: &mut [f64],
        ineq: &mut [f64],
    ) -> Result<f64, EvalError> {
        self.check_dim(x)?;
        for (t, s) in self.s.tapes.iter().zip(ws.scratch.iter_mut()) {
            t.eval_values(x, s)?;
        }
        let mut f = self.s.objective_constant;
        for r in &self.s.roots {
            let v = self.s.tapes[r.tape].root_value(r.root, &ws.scratch[r.tape]);
            match r.kind {
                RootKind::Objective(c) => f += c * v,
                RootKind::Eq(i) => eq[i] = v,
                RootKind::Ineq(i) => ineq[i] = v - self.rhs[i],
            }
        }
        Ok(f + self.proximal_value(x))
    }

    /// Values and first derivatives; second-order data stays in `ws` for
    /// [`NlpProblem::hessian_into`].
    pub(crate) fn derivatives_into(
        &self,
        x: &[f64],
        ws: &mut EvalWorkspace,
        eq: &mut [f64],
        ineq: &mut [f64],
        grad: &mut [f64],
        jac_eq: &mut [f64],
        jac_ineq: &mut [f64],
    ) -> Result<f64, EvalError> {
        self.check_dim(x)?;
        for (t, s) in self.s.tapes.iter().zip(ws.scratch.iter_mut()) {
            t.eval_second_order(x, s)?;
        }
        grad.iter_mut().for_each(|g| *g = 0.0);
        jac_eq.iter_mut().for_each(|g| *g = 0.0);
        jac_ineq.iter_mut().for_each(|g| *g = 0.0);
        let mut f = self.s.objective_constant;
        for r in &self.s.roots {
            let t = &self.s.tapes[r.tape];
            let s = &ws.scratch[r.tape];
            let v = t.root_value(r.root, s);
            match r.kind {
                RootKind::Objective(c) => {
                    f += c * v;
                    for &(l, pos) in &r.grad {
                        grad[pos] += c * t.root_grad(r.root, l, s);
                    }
                }
                RootKind::Eq(i) => {
                    eq[i] = v;
                    for &(l, pos) in &r.grad {
                        jac_eq[pos] += t.root_grad(r.root, l, s);
                    }
                }
                RootKind::Ineq(i) => {
                    ineq[i] = v - self.rhs[i];
                    for &(l, pos) in &r.grad {
                        jac_ineq[pos] += t.root_grad(r.root, l, s);
                    }
                }
            }
        }
        if let Some(p) = &self.proximal {
            for i in 0..p.center.len() {
                grad[i] += p.weight * p.scaling[i] * p.scaling[i] * (x[i] - p.center[i]);
            }
        }
        Ok(f + self.proximal_value(x))
    }

    /// Lagrangian Hessian values (pattern of [`NlpProblem::hessian_pattern`])
    /// from the data left in `ws` by the last derivative evaluation. The
    /// proximal diagonal is not included.
    pub(crate) fn hessian_into(&self, ws: &EvalWorkspace, sigma: f64, lam: &[f64], nu: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for r in &self.s.roots {
            if r.hess.is_empty() {
                continue;
            }
            let w = match r.kind {
                RootKind::Objective(c) => sigma * c,
                RootKind::Eq(i) => lam[i],
                RootKind::Ineq(i) => nu[i],
            };
            if w == 0.0 {
                continue;
            }
            let t = &self.s.tapes[r.tape];
            let s = &ws.scratch[r.tape];
            for &(p, pos) in &r.hess {
                out[pos] += w * t.root_hess(r.root, p, s);
            }
        }
    }

    pub(crate) fn jac_eq_pattern(&self) -> &CsrMatrix {
        &self.s.jac_eq
    }

    pub(crate) fn jac_ineq_pattern(&self) -> &CsrMatrix {
        &self.s.jac_ineq
    }

    /// Lower-triangular Hessian pattern as `(rows, cols)`.
    pub fn hessian_pattern(&self) -> (&[usize], &[usize]) {
        (&self.s.hess_rows, &self.s.hess_cols)
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<Evaluation, EvalError> {
        let mut ws = self.workspace();
        let mut eq = vec![0.0; self.s.m_eq];
        let mut ineq = vec![0.0; self.s.m_ineq];
        let objective = self.eval_into(x, &mut ws, &mut eq, &mut ineq)?;
        Ok(Evaluation { objective, eq, ineq })
    }

    pub fn derivatives(&self, x: &[f64]) -> Result<Derivatives, EvalError> {
        let mut ws = self.workspace();
        self.derivatives_with(x, &mut ws)
    }

    fn derivatives_with(&self, x: &[f64], ws: &mut EvalWorkspace) -> Result<Derivatives, EvalError> {
        let mut eq = vec![0.0; self.s.m_eq];
        let mut ineq = vec![0.0; self.s.m_ineq];
        let mut gradient = vec![0.0; self.s.n];
        let mut jac_eq = self.s.jac_eq.clone();
        let mut jac_ineq = self.s.jac_ineq.clone();
        self.derivatives_into(
            x,
            ws,
            &mut eq,
            &mut ineq,
            &mut gradient,
            &mut jac_eq.values,
            &mut jac_ineq.values,
        )?;
        Ok(Derivatives {
            gradient,
            jac_eq,
            jac_ineq,
        })
    }

    /// Hessian of `sigma f + lamᵀ g + nuᵀ h`, including any proximal term.
    pub fn lagrangian_hessian(&self, x: &[f64], sigma: f64, lam: &[f64], nu: &[f64]) -> Result<SymmetricCoo, EvalError> {
        let mut ws = self.workspace();
        self.derivatives_with(x, &mut ws)?;
        let mut values = vec![0.0; self.s.hess_rows.len()];
        self.hessian_into(&ws, sigma, lam, nu, &mut values);
        let mut out = SymmetricCoo {
            n: self.s.n,
            rows: self.s.hess_rows.clone(),
            cols: self.s.hess_cols.clone(),
            values,
        };
        if let Some(p) = &self.proximal {
            for i in 0..p.center.len() {
                out.rows.push(i);
                out.cols.push(i);
                out.values.push(sigma * p.weight * p.scaling[i] * p.scaling[i]);
            }
        }
        Ok(out)
    }

    /// Largest violation of bounds, equalities and inequalities.
    pub fn max_violation(&self, x: &[f64]) -> Result<f64, EvalError> {
        let e = self.evaluate(x)?;
        Ok(self.violation_of(x, &e.eq, &e.ineq))
    }

    pub(crate) fn violation_of(&self, x: &[f64], eq: &[f64], ineq: &[f64]) -> f64 {
        let mut v: f64 = 0.0;
        for g in eq {
            v = v.max(g.abs());
        }
        for h in ineq {
            v = v.max(*h);
        }
        for i in 0..self.s.n {
            v = v.max(self.lower[i] - x[i]).max(x[i] - self.upper[i]);
        }
        v
    }
}

impl Structure {
    fn build(n: usize, objective: Expr, equalities: Vec<Expr>, inequalities: Vec<Expr>) -> Structure {
        let mut terms = Vec::new();
        let mut objective_constant = 0.0;
        split_terms(&objective, 1.0, &mut terms, &mut objective_constant);

        let mut exprs: Vec<Expr> = Vec::new();
        let mut kinds: Vec<RootKind> = Vec::new();
        for (c, e) in terms {
            exprs.push(e);
            kinds.push(RootKind::Objective(c));
        }
        for (i, e) in equalities.iter().enumerate() {
            exprs.push(e.clone());
            kinds.push(RootKind::Eq(i));
        }
        for (i, e) in inequalities.iter().enumerate() {
            exprs.push(e.clone());
            kinds.push(RootKind::Ineq(i));
        }

        let groups = group_roots(&exprs);
        let mut tapes = Vec::with_capacity(groups.len());
        // (tape, root-in-tape) per global root index
        let mut placement = vec![(0usize, 0usize); exprs.len()];
        for g in &groups {
            let roots: Vec<Expr> = g.iter().map(|&r| exprs[r].clone()).collect();
            for (k, &r) in g.iter().enumerate() {
                placement[r] = (tapes.len(), k);
            }
            tapes.push(Tape::compile(&roots));
        }

        // Jacobian patterns.
        let mut eq_rows: Vec<Vec<usize>> = vec![Vec::new(); equalities.len()];
        let mut ineq_rows: Vec<Vec<usize>> = vec![Vec::new(); inequalities.len()];
        let mut hess_set: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for (r, kind) in kinds.iter().enumerate() {
            let (t, k) = placement[r];
            let tape = &tapes[t];
            let cols: Vec<usize> = tape.root_deps(k).iter().map(|&l| tape.vars[l as usize]).collect();
            match kind {
                RootKind::Eq(i) => eq_rows[*i].extend(cols),
                RootKind::Ineq(i) => ineq_rows[*i].extend(cols),
                RootKind::Objective(_) => {}
            }
            for &p in tape.root_pattern(k) {
                let (a, b) = unpack(p);
                let (ga, gb) = (tape.vars[a as usize], tape.vars[b as usize]);
                hess_set.insert((ga.max(gb), ga.min(gb)), 0);
            }
        }
        for row in eq_rows.iter_mut().chain(ineq_rows.iter_mut()) {
            row.sort_unstable();
            row.dedup();
        }
        let jac_eq = CsrMatrix::with_pattern(equalities.len(), n, &eq_rows);
        let jac_ineq = CsrMatrix::with_pattern(inequalities.len(), n, &ineq_rows);

        // Order Hessian entries column-major for deterministic assembly.
        let mut keys: Vec<(usize, usize)> = hess_set.keys().copied().collect();
        keys.sort_unstable_by_key(|&(i, j)| (j, i));
        for (pos, k) in keys.iter().enumerate() {
            hess_set.insert(*k, pos);
        }
        let hess_rows = keys.iter().map(|k| k.0).collect();
        let hess_cols = keys.iter().map(|k| k.1).collect();

        let jac_pos = |m: &CsrMatrix, row: usize, col: usize| -> usize {
            let s = &m.col_idx[m.row_ptr[row]..m.row_ptr[row + 1]];
            m.row_ptr[row] + s.binary_search(&col).expect("column in row pattern")
        };
        let mut roots = Vec::with_capacity(exprs.len());
        for (r, kind) in kinds.iter().enumerate() {
            let (t, k) = placement[r];
            let tape = &tapes[t];
            let grad = tape
                .root_deps(k)
                .iter()
                .map(|&l| {
                    let col = tape.vars[l as usize];
                    let pos = match kind {
                        RootKind::Objective(_) => col,
                        RootKind::Eq(i) => jac_pos(&jac_eq, *i, col),
                        RootKind::Ineq(i) => jac_pos(&jac_ineq, *i, col),
                    };
                    (l, pos)
                })
                .collect();
            let hess = tape
                .root_pattern(k)
                .iter()
                .map(|&p| {
                    let (a, b) = unpack(p);
                    let (ga, gb) = (tape.vars[a as usize], tape.vars[b as usize]);
                    (p, hess_set[&(ga.max(gb), ga.min(gb))])
                })
                .collect();
            roots.push(RootMeta {
                tape: t,
                root: k,
                kind: *kind,
                grad,
                hess,
            });
        }

        Structure {
            n,
            m_eq: equalities.len(),
            m_ineq: inequalities.len(),
            objective_constant,
            tapes,
            roots,
            jac_eq,
            jac_ineq,
            hess_rows,
            hess_cols,
            objective,
            equalities,
            inequalities,
            kkt_cache: OnceLock::new(),
            restoration: Mutex::new(None),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(p: &NlpProblem, x: &[f64]) {
        let h = 1e-6;
        let d = p.derivatives(x).unwrap();
        let jeq = d.jac_eq.to_dense();
        let jin = d.jac_ineq.to_dense();
        for j in 0..x.len() {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[j] += h;
            xm[j] -= h;
            let ep = p.evaluate(&xp).unwrap();
            let em = p.evaluate(&xm).unwrap();
            let fd = (ep.objective - em.objective) / (2.0 * h);
            assert!((fd - d.gradient[j]).abs() < 1e-5 * (1.0 + fd.abs()), "grad {j}: {fd} vs {}", d.gradient[j]);
            for i in 0..p.num_eq() {
                let fd = (ep.eq[i] - em.eq[i]) / (2.0 * h);
                assert!((fd - jeq[i][j]).abs() < 1e-5 * (1.0 + fd.abs()));
            }
            for i in 0..p.num_ineq() {
                let fd = (ep.ineq[i] - em.ineq[i]) / (2.0 * h);
                assert!((fd - jin[i][j]).abs() < 1e-5 * (1.0 + fd.abs()));
            }
        }
    }

    #[test]
    fn grouping_and_derivatives() {
        let x: Vec<Expr> = (0..4).map(Expr::var).collect();
        let shared = x[0].sin() * &x[1];
        let obj = Expr::sum([x[2].square(), x[3].square() * 3.0, Expr::constant(2.0)]);
        let eq = vec![&shared + &x[2], &shared * &x[3] - 1.0];
        let ineq = vec![Expr::norm(&[x[0].clone(), x[3].clone()]) - 2.0];
        let p = NlpProblem::new(4, vec![-5.0; 4], vec![5.0; 4], obj, eq, ineq).unwrap();
        // Two equality roots share `shared`; each objective term is alone.
        assert_eq!(p.s.tapes.len(), 4);
        fd_check(&p, &[0.3, -0.7, 1.1, 0.4]);
        let e = p.evaluate(&[0.0, 0.0, 1.0, 1.0]).unwrap();
        assert!((e.objective - 6.0).abs() < 1e-14);
        // Objective Hessian is diagonal after splitting.
        let (rows, cols) = p.hessian_pattern();
        assert!(rows.iter().zip(cols).all(|(r, c)| r >= c));
    }
}
