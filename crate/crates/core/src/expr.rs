//! Scalar expression graphs.
//!
//! An [`Expr`] is a cheaply clonable handle to an immutable node. Shared
//! sub-expressions are shared by pointer, so a Runge-Kutta step built from
//! repeated right-hand-side evaluations stays a DAG instead of blowing up
//! into a tree. Graphs are compiled into tapes by [`crate::nlp`] for
//! evaluation and exact first/second derivatives.

use std::collections::HashMap;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::sync::Arc;

use crate::error::EvalError;

/// Radius below which a Euclidean norm refuses to be evaluated.
pub const NORM_GUARD: f64 = 1e-9;

#[derive(Clone)]
pub struct Expr(pub(crate) Arc<Node>);

#[derive(Debug)]
pub enum Node {
    Const(f64),
    Var(usize),
    Sum(Vec<Expr>),
    Product(Expr, Expr),
    Power(Expr, f64),
    Neg(Expr),
    Sin(Expr),
    Cos(Expr),
    Tan(Expr),
    Exp(Expr),
    Sqrt(Expr),
    SquaredNorm(Vec<Expr>),
    /// Euclidean norm; evaluation fails when the argument norm is below `guard`.
    Norm { args: Vec<Expr>, guard: f64 },
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.node() {
            Node::Const(c) => write!(f, "{c}"),
            Node::Var(i) => write!(f, "x{i}"),
            other => write!(f, "{other:?}"),
        }
    }
}

impl Expr {
    pub fn constant(value: f64) -> Self {
        Expr(Arc::new(Node::Const(value)))
    }

    pub fn var(index: usize) -> Self {
        Expr(Arc::new(Node::Var(index)))
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    pub fn node(&self) -> &Node {
        &self.0
    }

    pub(crate) fn ptr(&self) -> *const Node {
        Arc::as_ptr(&self.0)
    }

    pub fn as_const(&self) -> Option<f64> {
        match self.node() {
            Node::Const(c) => Some(*c),
            _ => None,
        }
    }

    pub fn as_var(&self) -> Option<usize> {
        match self.node() {
            Node::Var(i) => Some(*i),
            _ => None,
        }
    }

    /// Sum of any number of terms. Constants are folded and unshared nested
    /// sums are flattened.
    pub fn sum<I: IntoIterator<Item = Expr>>(terms: I) -> Self {
        let mut out = Vec::new();
        let mut constant = 0.0;
        for t in terms {
            match t.node() {
                Node::Const(c) => constant += c,
                Node::Sum(children) if Arc::strong_count(&t.0) == 1 => {
                    for c in children {
                        match c.node() {
                            Node::Const(v) => constant += v,
                            _ => out.push(c.clone()),
                        }
                    }
                }
                _ => out.push(t),
            }
        }
        if constant != 0.0 {
            out.push(Expr::constant(constant));
        }
        match out.len() {
            0 => Expr::zero(),
            1 => out.pop().unwrap(),
            _ => Expr(Arc::new(Node::Sum(out))),
        }
    }

    pub fn product(a: &Expr, b: &Expr) -> Self {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Expr::constant(x * y),
            (Some(x), None) => b.scale(x),
            (None, Some(y)) => a.scale(y),
            _ => Expr(Arc::new(Node::Product(a.clone(), b.clone()))),
        }
    }

    /// `c * self`, with the trivial cases folded.
    pub fn scale(&self, c: f64) -> Self {
        if c == 1.0 {
            return self.clone();
        }
        if c == 0.0 {
            return Expr::zero();
        }
        if c == -1.0 {
            return -self.clone();
        }
        match self.node() {
            Node::Const(v) => Expr::constant(c * v),
            Node::Product(l, r) => {
                if let Some(k) = l.as_const() {
                    return Expr::product(&Expr::constant(k * c), r);
                }
                Expr(Arc::new(Node::Product(Expr::constant(c), self.clone())))
            }
            _ => Expr(Arc::new(Node::Product(Expr::constant(c), self.clone()))),
        }
    }

    pub fn powf(&self, p: f64) -> Self {
        if p == 1.0 {
            return self.clone();
        }
        if p == 0.0 {
            return Expr::constant(1.0);
        }
        match self.node() {
            Node::Const(v) => Expr::constant(v.powf(p)),
            _ => Expr(Arc::new(Node::Power(self.clone(), p))),
        }
    }

    pub fn recip(&self) -> Self {
        self.powf(-1.0)
    }

    pub fn square(&self) -> Self {
        self.powf(2.0)
    }

    fn unary(&self, f: fn(f64) -> f64, make: fn(Expr) -> Node) -> Self {
        match self.node() {
            Node::Const(v) => Expr::constant(f(*v)),
            _ => Expr(Arc::new(make(self.clone()))),
        }
    }

    pub fn sin(&self) -> Self {
        self.unary(f64::sin, Node::Sin)
    }

    pub fn cos(&self) -> Self {
        self.unary(f64::cos, Node::Cos)
    }

    pub fn tan(&self) -> Self {
        self.unary(f64::tan, Node::Tan)
    }

    pub fn exp(&self) -> Self {
        self.unary(f64::exp, Node::Exp)
    }

    pub fn sqrt(&self) -> Self {
        self.unary(f64::sqrt, Node::Sqrt)
    }

    pub fn squared_norm(args: &[Expr]) -> Self {
        if args.is_empty() {
            return Expr::zero();
        }
        Expr(Arc::new(Node::SquaredNorm(args.to_vec())))
    }

    pub fn norm(args: &[Expr]) -> Self {
        Self::guarded_norm(args, NORM_GUARD)
    }

    pub fn guarded_norm(args: &[Expr], guard: f64) -> Self {
        Expr(Arc::new(Node::Norm {
            args: args.to_vec(),
            guard,
        }))
    }

    /// Dot product of two expression vectors.
    pub fn dot(a: &[Expr], b: &[Expr]) -> Self {
        assert_eq!(a.len(), b.len(), "dot: length mismatch");
        Expr::sum(a.iter().zip(b).map(|(x, y)| Expr::product(x, y)))
    }

    /// Affine form `Σ coeffs[i] * args[i] + offset`.
    pub fn affine(coeffs: &[f64], args: &[Expr], offset: f64) -> Self {
        assert_eq!(coeffs.len(), args.len(), "affine: length mismatch");
        let mut terms: Vec<Expr> = coeffs
            .iter()
            .zip(args)
            .filter(|(c, _)| **c != 0.0)
            .map(|(c, a)| a.scale(*c))
            .collect();
        terms.push(Expr::constant(offset));
        Expr::sum(terms)
    }

    pub fn children(&self) -> Vec<&Expr> {
        match self.node() {
            Node::Const(_) | Node::Var(_) => vec![],
            Node::Sum(c) | Node::SquaredNorm(c) | Node::Norm { args: c, .. } => c.iter().collect(),
            Node::Product(a, b) => vec![a, b],
            Node::Power(a, _)
            | Node::Neg(a)
            | Node::Sin(a)
            | Node::Cos(a)
            | Node::Tan(a)
            | Node::Exp(a)
            | Node::Sqrt(a) => vec![a],
        }
    }

    /// Nodes reachable from `roots`, children before parents, each once.
    pub(crate) fn topo_order(roots: &[&Expr]) -> Vec<Expr> {
        let mut seen: HashMap<*const Node, ()> = HashMap::new();
        let mut order = Vec::new();
        let mut stack: Vec<(Expr, bool)> = roots.iter().rev().map(|r| ((*r).clone(), false)).collect();
        while let Some((e, expanded)) = stack.pop() {
            if expanded {
                order.push(e);
                continue;
            }
            if seen.insert(e.ptr(), ()).is_some() {
                continue;
            }
            stack.push((e.clone(), true));
            for c in e.children().into_iter().rev() {
                if !seen.contains_key(&c.ptr()) {
                    stack.push((c.clone(), false));
                }
            }
        }
        order
    }

    /// Largest variable index referenced, if any.
    pub fn max_var(&self) -> Option<usize> {
        Self::topo_order(&[self]).iter().filter_map(|e| e.as_var()).max()
    }

    /// Plain value evaluation (memoized over the DAG).
    pub fn eval(&self, x: &[f64]) -> Result<f64, EvalError> {
        let order = Self::topo_order(&[self]);
        let mut vals: HashMap<*const Node, f64> = HashMap::with_capacity(order.len());
        for e in &order {
            let get = |c: &Expr| vals[&c.ptr()];
            let v = match e.node() {
                Node::Const(c) => *c,
                Node::Var(i) => *x.get(*i).ok_or(EvalError::Dimension {
                    expected: *i + 1,
                    got: x.len(),
                })?,
                Node::Sum(c) => c.iter().map(get).sum(),
                Node::Product(a, b) => get(a) * get(b),
                Node::Power(a, p) => scalar_pow(get(a), *p)?,
                Node::Neg(a) => -get(a),
                Node::Sin(a) => get(a).sin(),
                Node::Cos(a) => get(a).cos(),
                Node::Tan(a) => scalar_tan(get(a))?,
                Node::Exp(a) => get(a).exp(),
                Node::Sqrt(a) => scalar_sqrt(get(a))?,
                Node::SquaredNorm(c) => c.iter().map(|a| get(a).powi(2)).sum(),
                Node::Norm { args, guard } => {
                    let r = args.iter().map(|a| get(a).powi(2)).sum::<f64>().sqrt();
                    if r < *guard {
                        return Err(EvalError::Domain("norm argument inside guard radius"));
                    }
                    r
                }
            };
            vals.insert(e.ptr(), v);
        }
        Ok(vals[&self.ptr()])
    }

    /// Conservative enclosure of the expression's range over a variable box.
    pub fn interval(&self, bounds: &[Interval]) -> Interval {
        let order = Self::topo_order(&[self]);
        let mut vals: HashMap<*const Node, Interval> = HashMap::with_capacity(order.len());
        for e in &order {
            let get = |c: &Expr| vals[&c.ptr()];
            let v = match e.node() {
                Node::Const(c) => Interval::point(*c),
                Node::Var(i) => bounds.get(*i).copied().unwrap_or(Interval::ENTIRE),
                Node::Sum(c) => c.iter().fold(Interval::point(0.0), |acc, a| acc + get(a)),
                Node::Product(a, b) => get(a) * get(b),
                Node::Power(a, p) => get(a).powf(*p),
                Node::Neg(a) => -get(a),
                Node::Sin(a) => get(a).sin(),
                Node::Cos(a) => get(a).cos(),
                Node::Tan(a) => get(a).tan(),
                Node::Exp(a) => get(a).exp(),
                Node::Sqrt(a) => get(a).sqrt(),
                Node::SquaredNorm(c) => c
                    .iter()
                    .fold(Interval::point(0.0), |acc, a| acc + get(a).powf(2.0)),
                Node::Norm { args, .. } => args
                    .iter()
                    .fold(Interval::point(0.0), |acc, a| acc + get(a).powf(2.0))
                    .sqrt(),
            };
            vals.insert(e.ptr(), v);
        }
        vals[&self.ptr()]
    }
}

pub(crate) fn scalar_pow(v: f64, p: f64) -> Result<f64, EvalError> {
    if p.fract() != 0.0 && v < 0.0 {
        return Err(EvalError::Domain("fractional power of a negative number"));
    }
    if p < 0.0 && v == 0.0 {
        return Err(EvalError::Domain("negative power of zero"));
    }
    Ok(if p == 2.0 { v * v } else { v.powf(p) })
}

pub(crate) fn scalar_sqrt(v: f64) -> Result<f64, EvalError> {
    if v < 0.0 {
        return Err(EvalError::Domain("square root of a negative number"));
    }
    Ok(v.sqrt())
}

pub(crate) fn scalar_tan(v: f64) -> Result<f64, EvalError> {
    if v.cos().abs() < 1e-12 {
        return Err(EvalError::Domain("tangent at an odd multiple of pi/2"));
    }
    Ok(v.tan())
}

impl From<f64> for Expr {
    fn from(v: f64) -> Self {
        Expr::constant(v)
    }
}

impl Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        match self.node() {
            Node::Const(c) => Expr::constant(-c),
            Node::Neg(inner) => inner.clone(),
            _ => Expr(Arc::new(Node::Neg(self))),
        }
    }
}

impl Neg for &Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        -self.clone()
    }
}

macro_rules! binop {
    ($trait:ident, $method:ident, $body:expr) => {
        impl $trait<Expr> for Expr {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                let f: fn(&Expr, &Expr) -> Expr = $body;
                f(&self, &rhs)
            }
        }
        impl $trait<&Expr> for Expr {
            type Output = Expr;
            fn $method(self, rhs: &Expr) -> Expr {
                let f: fn(&Expr, &Expr) -> Expr = $body;
                f(&self, rhs)
            }
        }
        impl $trait<&Expr> for &Expr {
            type Output = Expr;
            fn $method(self, rhs: &Expr) -> Expr {
                let f: fn(&Expr, &Expr) -> Expr = $body;
                f(self, rhs)
            }
        }
        impl $trait<Expr> for &Expr {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                let f: fn(&Expr, &Expr) -> Expr = $body;
                f(self, &rhs)
            }
        }
        impl $trait<f64> for Expr {
            type Output = Expr;
            fn $method(self, rhs: f64) -> Expr {
                let f: fn(&Expr, &Expr) -> Expr = $body;
                f(&self, &Expr::constant(rhs))
            }
        }
        impl $trait<f64> for &Expr {
            type Output = Expr;
            fn $method(self, rhs: f64) -> Expr {
                let f: fn(&Expr, &Expr) -> Expr = $body;
                f(self, &Expr::constant(rhs))
            }
        }
        impl $trait<Expr> for f64 {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                let f: fn(&Expr, &Expr) -> Expr = $body;
                f(&Expr::constant(self), &rhs)
            }
        }
        impl $trait<&Expr> for f64 {
            type Output = Expr;
            fn $method(self, rhs: &Expr) -> Expr {
                let f: fn(&Expr, &Expr) -> Expr = $body;
                f(&Expr::constant(self), rhs)
            }
        }
    };
}

binop!(Add, add, |a, b| Expr::sum([a.clone(), b.clone()]));
binop!(Sub, sub, |a, b| Expr::sum([a.clone(), -b.clone()]));
binop!(Mul, mul, |a, b| Expr::product(a, b));
binop!(Div, div, |a, b| match b.as_const() {
    Some(c) => a.scale(1.0 / c),
    None => Expr::product(a, &b.recip()),
});

/// Numeric types the model code is written against, so the same dynamics
/// function can be evaluated on `f64` or traced into an [`Expr`].
pub trait Scalar:
    Clone
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn from_f64(v: f64) -> Self;
    fn sin(&self) -> Self;
    fn cos(&self) -> Self;
    fn tan(&self) -> Self;
    fn exp(&self) -> Self;
    fn sqrt(&self) -> Self;
    fn powf(&self, p: f64) -> Self;
    fn norm(v: &[Self]) -> Self;
    fn squared_norm(v: &[Self]) -> Self;
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn sin(&self) -> Self {
        f64::sin(*self)
    }
    fn cos(&self) -> Self {
        f64::cos(*self)
    }
    fn tan(&self) -> Self {
        f64::tan(*self)
    }
    fn exp(&self) -> Self {
        f64::exp(*self)
    }
    fn sqrt(&self) -> Self {
        f64::sqrt(*self)
    }
    fn powf(&self, p: f64) -> Self {
        f64::powf(*self, p)
    }
    fn norm(v: &[Self]) -> Self {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
    fn squared_norm(v: &[Self]) -> Self {
        v.iter().map(|x| x * x).sum()
    }
}

impl Scalar for Expr {
    fn from_f64(v: f64) -> Self {
        Expr::constant(v)
    }
    fn sin(&self) -> Self {
        Expr::sin(self)
    }
    fn cos(&self) -> Self {
        Expr::cos(self)
    }
    fn tan(&self) -> Self {
        Expr::tan(self)
    }
    fn exp(&self) -> Self {
        Expr::exp(self)
    }
    fn sqrt(&self) -> Self {
        Expr::sqrt(self)
    }
    fn powf(&self, p: f64) -> Self {
        Expr::powf(self, p)
    }
    fn norm(v: &[Self]) -> Self {
        Expr::norm(v)
    }
    fn squared_norm(v: &[Self]) -> Self {
        Expr::squared_norm(v)
    }
}

/// Closed interval `[lo, hi]`, possibly unbounded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const ENTIRE: Interval = Interval {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
    };

    pub fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi || lo.is_nan() || hi.is_nan());
        Interval { lo, hi }
    }

    pub fn point(v: f64) -> Self {
        Interval { lo: v, hi: v }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    fn hull(vals: &[f64]) -> Self {
        let lo = vals.iter().copied().fold(f64::INFINITY, |a, b| a.min(if b.is_nan() { f64::NEG_INFINITY } else { b }));
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, |a, b| a.max(if b.is_nan() { f64::INFINITY } else { b }));
        Interval { lo, hi }
    }

    pub fn powf(self, p: f64) -> Self {
        if p == 2.0 {
            let a = self.lo * self.lo;
            let b = self.hi * self.hi;
            if self.contains(0.0) {
                return Interval::new(0.0, a.max(b));
            }
            return Interval::new(a.min(b), a.max(b));
        }
        if p.fract() == 0.0 && p > 0.0 {
            let ip = p as i32;
            let a = self.lo.powi(ip);
            let b = self.hi.powi(ip);
            if ip % 2 == 0 {
                let lo = if self.contains(0.0) { 0.0 } else { a.min(b) };
                return Interval::new(lo, a.max(b));
            }
            return Interval::new(a, b);
        }
        if p < 0.0 && self.contains(0.0) {
            return Interval::ENTIRE;
        }
        let lo = self.lo.max(0.0);
        if p.fract() != 0.0 && self.hi < 0.0 {
            return Interval::ENTIRE;
        }
        let (a, b) = if p.fract() != 0.0 { (lo.powf(p), self.hi.powf(p)) } else { (self.lo.powf(p), self.hi.powf(p)) };
        Interval::hull(&[a, b])
    }

    pub fn sqrt(self) -> Self {
        Interval::new(self.lo.max(0.0).sqrt(), self.hi.max(0.0).sqrt())
    }

    pub fn exp(self) -> Self {
        Interval::new(self.lo.exp(), self.hi.exp())
    }

    pub fn sin(self) -> Self {
        periodic_range(self, f64::sin, std::f64::consts::FRAC_PI_2)
    }

    pub fn cos(self) -> Self {
        periodic_range(self, f64::cos, 0.0)
    }

    pub fn tan(self) -> Self {
        let half = std::f64::consts::FRAC_PI_2;
        // Monotone on each branch; anything spanning a pole is unbounded.
        let k_lo = ((self.lo + half) / std::f64::consts::PI).floor();
        let k_hi = ((self.hi + half) / std::f64::consts::PI).floor();
        if k_lo != k_hi || !self.lo.is_finite() || !self.hi.is_finite() {
            return Interval::ENTIRE;
        }
        Interval::new(self.lo.tan(), self.hi.tan())
    }
}

/// Range of sin/cos over an interval: endpoints plus any interior extrema,
/// which sit at `phase + k*pi`.
fn periodic_range(x: Interval, f: fn(f64) -> f64, phase: f64) -> Interval {
    if !x.lo.is_finite() || !x.hi.is_finite() || x.hi - x.lo >= 2.0 * std::f64::consts::PI {
        return Interval::new(-1.0, 1.0);
    }
    let mut vals = vec![f(x.lo), f(x.hi)];
    let pi = std::f64::consts::PI;
    let mut k = ((x.lo - phase) / pi).ceil();
    while phase + k * pi <= x.hi {
        vals.push(f(phase + k * pi));
        k += 1.0;
    }
    Interval::hull(&vals)
}

impl Add for Interval {
    type Output = Interval;
    fn add(self, o: Interval) -> Interval {
        Interval::hull(&[self.lo + o.lo, self.hi + o.hi])
    }
}

impl Neg for Interval {
    type Output = Interval;
    fn neg(self) -> Interval {
        Interval::new(-self.hi, -self.lo)
    }
}

impl Mul for Interval {
    type Output = Interval;
    fn mul(self, o: Interval) -> Interval {
        let prod = |a: f64, b: f64| if a == 0.0 || b == 0.0 { 0.0 } else { a * b };
        Interval::hull(&[
            prod(self.lo, o.lo),
            prod(self.lo, o.hi),
            prod(self.hi, o.lo),
            prod(self.hi, o.hi),
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_folding() {
        let x = Expr::var(0);
        let e = (&x * 0.0) + 3.0;
        assert_eq!(e.as_const(), Some(3.0));
        assert_eq!((Expr::constant(2.0) * 3.0).as_const(), Some(6.0));
        assert!((x.clone() * 1.0).as_var() == Some(0));
    }

    #[test]
    fn eval_basic() {
        let x = Expr::var(0);
        let y = Expr::var(1);
        let e = &x * &x + &y * &y;
        assert_eq!(e.eval(&[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(e.eval(&[3.0, 4.0]).unwrap(), 25.0);
        let n = Expr::norm(&[x.clone(), y.clone()]);
        assert_eq!(n.eval(&[3.0, 4.0]).unwrap(), 5.0);
        assert!(n.eval(&[0.0, 0.0]).is_err());
        assert!(x.sqrt().eval(&[-1.0, 0.0]).is_err());
    }

    #[test]
    fn dag_sharing_is_preserved() {
        let x = Expr::var(0);
        let mut e = x.clone();
        for _ in 0..60 {
            // Each level references the previous one twice.
            e = &e * 0.5 + e.sin() * 0.5;
        }
        let order = Expr::topo_order(&[&e]);
        assert!(order.len() < 1000);
        assert!(e.eval(&[0.3]).unwrap().is_finite());
    }

    #[test]
    fn interval_encloses_samples() {
        let x = Expr::var(0);
        let y = Expr::var(1);
        let e = x.sin() * &y - y.square() + (x.clone() * 0.3).exp();
        let b = [Interval::new(-1.0, 2.5), Interval::new(-0.5, 1.5)];
        let iv = e.interval(&b);
        for i in 0..=20 {
            for j in 0..=20 {
                let p = [-1.0 + 3.5 * i as f64 / 20.0, -0.5 + 2.0 * j as f64 / 20.0];
                let v = e.eval(&p).unwrap();
                assert!(iv.contains(v), "{v} not in {iv:?}");
            }
        }
    }

    #[test]
    fn interval_trig_extrema() {
        let s = Interval::new(0.0, 3.0).sin();
        assert!((s.hi - 1.0).abs() < 1e-15);
        let c = Interval::new(-0.5, 0.5).cos();
        assert!((c.hi - 1.0).abs() < 1e-15);
        assert_eq!(Interval::new(1.0, 2.0).tan(), Interval::ENTIRE);
    }
}
