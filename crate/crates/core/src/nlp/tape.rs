//! Flattened evaluation tapes with forward-mode second derivatives.
//!
//! A tape holds a group of root expressions that share interior nodes. All
//! derivatives are taken with respect to the tape's local variables, whose
//! count `d` stays small for stage-wise optimal control models. Each slot
//! carries its structural gradient and Hessian support so the forward sweep
//! only touches entries that can be nonzero.

use std::collections::HashMap;

use crate::error::EvalError;
use crate::expr::{scalar_pow, scalar_sqrt, scalar_tan, Expr, Node};

#[derive(Debug, Clone, Copy)]
enum Op {
    Const(f64),
    Var(u32),
    Sum { start: u32, len: u32 },
    Mul(u32, u32),
    Scale(f64, u32),
    Pow(u32, f64),
    Neg(u32),
    Sin(u32),
    Cos(u32),
    Tan(u32),
    Exp(u32),
    Sqrt(u32),
    SqNorm { start: u32, len: u32 },
    Norm { start: u32, len: u32, guard: f64 },
}

#[inline]
pub(crate) fn packed(i: u32, j: u32) -> u32 {
    let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
    hi * (hi + 1) / 2 + lo
}

#[inline]
pub(crate) fn unpack(p: u32) -> (u32, u32) {
    let mut i = (((8.0 * p as f64 + 1.0).sqrt() - 1.0) / 2.0) as u32;
    while (i + 1) * (i + 2) / 2 <= p {
        i += 1;
    }
    while i * (i + 1) / 2 > p {
        i -= 1;
    }
    (i, p - i * (i + 1) / 2)
}

fn merge_sorted(a: &[u32], b: &[u32]) -> Vec<u32> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(b[j]);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

fn outer_pairs(a: &[u32], b: &[u32]) -> Vec<u32> {
    let mut v: Vec<u32> = a.iter().flat_map(|&i| b.iter().map(move |&j| packed(i, j))).collect();
    v.sort_unstable();
    v.dedup();
    v
}

#[derive(Debug, Clone)]
pub(crate) struct Tape {
    ops: Vec<Op>,
    args: Vec<u32>,
    /// Global variable index of each local variable.
    pub vars: Vec<usize>,
    deps: Vec<Vec<u32>>,
    pattern: Vec<Vec<u32>>,
    pub roots: Vec<u32>,
}

/// Per-tape scratch buffers; entries outside a slot's structural support are
/// never written and therefore stay zero.
#[derive(Debug, Clone)]
pub(crate) struct TapeScratch {
    pub val: Vec<f64>,
    grad: Vec<f64>,
    hess: Vec<f64>,
}

impl Tape {
    pub fn compile(roots: &[Expr]) -> Tape {
        let refs: Vec<&Expr> = roots.iter().collect();
        let order = Expr::topo_order(&refs);
        let mut slot_of: HashMap<*const Node, u32> = HashMap::with_capacity(order.len());
        let mut var_local: HashMap<usize, u32> = HashMap::new();
        let mut vars = Vec::new();
        let mut ops = Vec::with_capacity(order.len());
        let mut args = Vec::new();
        for e in &order {
            let s = |c: &Expr| slot_of[&c.ptr()];
            let op = match e.node() {
                Node::Const(c) => Op::Const(*c),
                Node::Var(i) => {
                    let l = *var_local.entry(*i).or_insert_with(|| {
                        vars.push(*i);
                        (vars.len() - 1) as u32
                    });
                    Op::Var(l)
                }
                Node::Sum(c) | Node::SquaredNorm(c) | Node::Norm { args: c, .. } => {
                    let start = args.len() as u32;
                    args.extend(c.iter().map(s));
                    let len = c.len() as u32;
                    match e.node() {
                        Node::Sum(_) => Op::Sum { start, len },
                        Node::SquaredNorm(_) => Op::SqNorm { start, len },
                        Node::Norm { guard, .. } => Op::Norm { start, len, guard: *guard },
                        _ => unreachable!(),
                    }
                }
                Node::Product(a, b) => match (a.as_const(), b.as_const()) {
                    (Some(c), _) => Op::Scale(c, s(b)),
                    (_, Some(c)) => Op::Scale(c, s(a)),
                    _ => Op::Mul(s(a), s(b)),
                },
                Node::Power(a, p) => Op::Pow(s(a), *p),
                Node::Neg(a) => Op::Neg(s(a)),
                Node::Sin(a) => Op::Sin(s(a)),
                Node::Cos(a) => Op::Cos(s(a)),
                Node::Tan(a) => Op::Tan(s(a)),
                Node::Exp(a) => Op::Exp(s(a)),
                Node::Sqrt(a) => Op::Sqrt(s(a)),
            };
            slot_of.insert(e.ptr(), ops.len() as u32);
            ops.push(op);
        }
        let roots = roots.iter().map(|r| slot_of[&r.ptr()]).collect();
        let mut tape = Tape {
            ops,
            args,
            vars,
            deps: Vec::new(),
            pattern: Vec::new(),
            roots,
        };
        tape.analyze();
        tape
    }

    fn arg_slice(&self, start: u32, len: u32) -> &[u32] {
        &self.args[start as usize..(start + len) as usize]
    }

    fn analyze(&mut self) {
        let n = self.ops.len();
        let mut deps: Vec<Vec<u32>> = Vec::with_capacity(n);
        let mut pat: Vec<Vec<u32>> = Vec::with_capacity(n);
        for k in 0..n {
            let (d, p) = match self.ops[k] {
                Op::Const(_) => (vec![], vec![]),
                Op::Var(l) => (vec![l], vec![]),
                Op::Sum { start, len } => {
                    let mut d = Vec::new();
                    let mut p = Vec::new();
                    for &c in self.arg_slice(start, len) {
                        d = merge_sorted(&d, &deps[c as usize]);
                        p = merge_sorted(&p, &pat[c as usize]);
                    }
                    (d, p)
                }
                Op::Scale(_, a) | Op::Neg(a) => (deps[a as usize].clone(), pat[a as usize].clone()),
                Op::Mul(a, b) => {
                    let (a, b) = (a as usize, b as usize);
                    let d = merge_sorted(&deps[a], &deps[b]);
                    let p = merge_sorted(&merge_sorted(&pat[a], &pat[b]), &outer_pairs(&deps[a], &deps[b]));
                    (d, p)
                }
                Op::Pow(a, e) if e == 1.0 => (deps[a as usize].clone(), pat[a as usize].clone()),
                Op::Pow(a, _)
                | Op::Sin(a)
                | Op::Cos(a)
                | Op::Tan(a)
                | Op::Exp(a)
                | Op::Sqrt(a) => {
                    let a = a as usize;
                    let p = merge_sorted(&pat[a], &outer_pairs(&deps[a], &deps[a]));
                    (deps[a].clone(), p)
                }
                Op::SqNorm { start, len } => {
                    let mut d = Vec::new();
                    let mut p = Vec::new();
                    for &c in self.arg_slice(start, len) {
                        let c = c as usize;
                        d = merge_sorted(&d, &deps[c]);
                        p = merge_sorted(&p, &pat[c]);
                        p = merge_sorted(&p, &outer_pairs(&deps[c], &deps[c]));
                    }
                    (d, p)
                }
                Op::Norm { start, len, .. } => {
                    let mut d = Vec::new();
                    let mut p = Vec::new();
                    for &c in self.arg_slice(start, len) {
                        d = merge_sorted(&d, &deps[c as usize]);
                        p = merge_sorted(&p, &pat[c as usize]);
                    }
                    let p = merge_sorted(&p, &outer_pairs(&d, &d));
                    (d, p)
                }
            };
            deps.push(d);
            pat.push(p);
        }
        self.deps = deps;
        self.pattern = pat;
    }

    pub fn nvars(&self) -> usize {
        self.vars.len()
    }

    pub fn root_deps(&self, r: usize) -> &[u32] {
        &self.deps[self.roots[r] as usize]
    }

    pub fn root_pattern(&self, r: usize) -> &[u32] {
        &self.pattern[self.roots[r] as usize]
    }

    /// Derivative buffers are sized on the first second-order evaluation.
    pub fn scratch(&self) -> TapeScratch {
        TapeScratch {
            val: vec![0.0; self.ops.len()],
            grad: Vec::new(),
            hess: Vec::new(),
        }
    }

    fn value_op(&self, k: usize, val: &[f64], x: &[f64]) -> Result<f64, EvalError> {
        let v = |i: u32| val[i as usize];
        Ok(match self.ops[k] {
            Op::Const(c) => c,
            Op::Var(l) => x[self.vars[l as usize]],
            Op::Sum { start, len } => self.arg_slice(start, len).iter().map(|&c| v(c)).sum(),
            Op::Mul(a, b) => v(a) * v(b),
            Op::Scale(c, a) => c * v(a),
            Op::Pow(a, p) => scalar_pow(v(a), p)?,
            Op::Neg(a) => -v(a),
            Op::Sin(a) => v(a).sin(),
            Op::Cos(a) => v(a).cos(),
            Op::Tan(a) => scalar_tan(v(a))?,
            Op::Exp(a) => v(a).exp(),
            Op::Sqrt(a) => scalar_sqrt(v(a))?,
            Op::SqNorm { start, len } => self.arg_slice(start, len).iter().map(|&c| v(c) * v(c)).sum(),
            Op::Norm { start, len, guard } => {
                let r = self
                    .arg_slice(start, len)
                    .iter()
                    .map(|&c| v(c) * v(c))
                    .sum::<f64>()
                    .sqrt();
                if r < guard {
                    return Err(EvalError::Domain("norm argument inside guard radius"));
                }
                r
            }
        })
    }

    /// Values only; root values are `scratch.val[roots[r]]`.
    pub fn eval_values(&self, x: &[f64], scratch: &mut TapeScratch) -> Result<(), EvalError> {
        for k in 0..self.ops.len() {
            let v = self.value_op(k, &scratch.val, x)?;
            scratch.val[k] = v;
        }
        Ok(())
    }

    /// Values, gradients and Hessians of every slot.
    pub fn eval_second_order(&self, x: &[f64], s: &mut TapeScratch) -> Result<(), EvalError> {
        let d = self.nvars();
        let dh = d * (d + 1) / 2;
        if s.grad.len() != self.ops.len() * d {
            s.grad = vec![0.0; self.ops.len() * d];
            s.hess = vec![0.0; self.ops.len() * dh];
        }
        for k in 0..self.ops.len() {
            let v = self.value_op(k, &s.val, x)?;
            s.val[k] = v;
            let gk = k * d;
            let hk = k * dh;
            match self.ops[k] {
                Op::Const(_) => {}
                Op::Var(l) => s.grad[gk + l as usize] = 1.0,
                Op::Sum { start, len } => {
                    let children = self.arg_slice(start, len);
                    for &i in &self.deps[k] {
                        let i = i as usize;
                        s.grad[gk + i] = children.iter().map(|&c| s.grad[c as usize * d + i]).sum();
                    }
                    for &p in &self.pattern[k] {
                        let p = p as usize;
                        s.hess[hk + p] = children.iter().map(|&c| s.hess[c as usize * dh + p]).sum();
                    }
                }
                Op::Scale(c, a) => {
                    let (ga, ha) = (a as usize * d, a as usize * dh);
                    for &i in &self.deps[k] {
                        s.grad[gk + i as usize] = c * s.grad[ga + i as usize];
                    }
                    for &p in &self.pattern[k] {
                        s.hess[hk + p as usize] = c * s.hess[ha + p as usize];
                    }
                }
                Op::Neg(a) => {
                    let (ga, ha) = (a as usize * d, a as usize * dh);
                    for &i in &self.deps[k] {
                        s.grad[gk + i as usize] = -s.grad[ga + i as usize];
                    }
                    for &p in &self.pattern[k] {
                        s.hess[hk + p as usize] = -s.hess[ha + p as usize];
                    }
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (s.val[a as usize], s.val[b as usize]);
                    let (ga, gb) = (a as usize * d, b as usize * d);
                    let (ha, hb) = (a as usize * dh, b as usize * dh);
                    for &i in &self.deps[k] {
                        let i = i as usize;
                        s.grad[gk + i] = va * s.grad[gb + i] + vb * s.grad[ga + i];
                    }
                    for &p in &self.pattern[k] {
                        let (i, j) = unpack(p);
                        let (i, j) = (i as usize, j as usize);
                        let p = p as usize;
                        s.hess[hk + p] = va * s.hess[hb + p]
                            + vb * s.hess[ha + p]
                            + s.grad[ga + i] * s.grad[gb + j]
                            + s.grad[ga + j] * s.grad[gb + i];
                    }
                }
                Op::Pow(a, _)
                | Op::Sin(a)
                | Op::Cos(a)
                | Op::Tan(a)
                | Op::Exp(a)
                | Op::Sqrt(a) => {
                    let u = s.val[a as usize];
                    let (d1, d2) = match self.ops[k] {
                        Op::Pow(_, p) => (p * scalar_pow(u, p - 1.0)?, p * (p - 1.0) * scalar_pow(u, p - 2.0)?),
                        Op::Sin(_) => (u.cos(), -u.sin()),
                        Op::Cos(_) => (-u.sin(), -u.cos()),
                        Op::Tan(_) => {
                            let sec2 = 1.0 + v * v;
                            (sec2, 2.0 * v * sec2)
                        }
                        Op::Exp(_) => (v, v),
                        Op::Sqrt(_) => {
                            if v <= 0.0 {
                                return Err(EvalError::Domain("square root derivative at zero"));
                            }
                            (0.5 / v, -0.25 / (v * u))
                        }
                        _ => unreachable!(),
                    };
                    let ga = a as usize * d;
                    let ha = a as usize * dh;
                    for &i in &self.deps[k] {
                        s.grad[gk + i as usize] = d1 * s.grad[ga + i as usize];
                    }
                    for &p in &self.pattern[k] {
                        let (i, j) = unpack(p);
                        let p = p as usize;
                        s.hess[hk + p] = d1 * s.hess[ha + p] + d2 * s.grad[ga + i as usize] * s.grad[ga + j as usize];
                    }
                }
                Op::SqNorm { start, len } => {
                    let children = self.arg_slice(start, len);
                    for &i in &self.deps[k] {
                        let i = i as usize;
                        s.grad[gk + i] = children
                            .iter()
                            .map(|&c| 2.0 * s.val[c as usize] * s.grad[c as usize * d + i])
                            .sum();
                    }
                    for &p in &self.pattern[k] {
                        let (i, j) = unpack(p);
                        let (i, j, p) = (i as usize, j as usize, p as usize);
                        s.hess[hk + p] = children
                            .iter()
                            .map(|&c| {
                                let c = c as usize;
                                2.0 * (s.val[c] * s.hess[c * dh + p] + s.grad[c * d + i] * s.grad[c * d + j])
                            })
                            .sum();
                    }
                }
                Op::Norm { start, len, .. } => {
                    let children = self.arg_slice(start, len);
                    let r = v;
                    for &i in &self.deps[k] {
                        let i = i as usize;
                        s.grad[gk + i] = children
                            .iter()
                            .map(|&c| s.val[c as usize] * s.grad[c as usize * d + i])
                            .sum::<f64>()
                            / r;
                    }
                    for &p in &self.pattern[k] {
                        let (i, j) = unpack(p);
                        let (i, j, p) = (i as usize, j as usize, p as usize);
                        let acc: f64 = children
                            .iter()
                            .map(|&c| {
                                let c = c as usize;
                                s.grad[c * d + i] * s.grad[c * d + j] + s.val[c] * s.hess[c * dh + p]
                            })
                            .sum();
                        s.hess[hk + p] = (acc - s.grad[gk + i] * s.grad[gk + j]) / r;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn root_value(&self, r: usize, s: &TapeScratch) -> f64 {
        s.val[self.roots[r] as usize]
    }

    pub fn root_grad(&self, r: usize, local: u32, s: &TapeScratch) -> f64 {
        s.grad[self.roots[r] as usize * self.nvars() + local as usize]
    }

    pub fn root_hess(&self, r: usize, p: u32, s: &TapeScratch) -> f64 {
        let d = self.nvars();
        s.hess[self.roots[r] as usize * (d * (d + 1) / 2) + p as usize]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pack_roundtrip() {
        for i in 0..40u32 {
            for j in 0..=i {
                assert_eq!(unpack(packed(i, j)), (i, j));
            }
        }
    }

    #[test]
    fn structural_pattern_of_product() {
        let x = Expr::var(0);
        let y = Expr::var(1);
        let z = Expr::var(2);
        // x*y + z: only the (x, y) cross term is structurally nonzero.
        let e = &x * &y + &z;
        let t = Tape::compile(&[e]);
        let locals: Vec<(usize, usize)> = t
            .root_pattern(0)
            .iter()
            .map(|&p| {
                let (i, j) = unpack(p);
                (t.vars[i as usize], t.vars[j as usize])
            })
            .collect();
        assert_eq!(locals.len(), 1);
        let (a, b) = locals[0];
        assert_eq!((a.max(b), a.min(b)), (1, 0));
    }
}
