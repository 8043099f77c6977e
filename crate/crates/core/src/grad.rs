//! Reverse-mode differentiation over an explicit expression tape.
//!
//! Each node stores its forward value and the local partial derivatives with
//! respect to its parents, computed eagerly during the forward pass. A
//! backward sweep in reverse insertion order accumulates adjoints. Fused
//! nodes (dot products, sums, log-sum-exp) keep the tape small for the
//! batch-level losses.
//!
//! ```
//! use hyp3d::{Parameter, Real, Tape};
//!
//! let mut w = Parameter::new("w", vec![1.0, -2.0]);
//! let tape = Tape::new();
//! let vars = tape.param(&w);
//! let loss = Real::dot(&vars, &vars) * 0.5;
//! let grads = tape.backward(loss).unwrap();
//! grads.accumulate(&mut w, &vars);
//! assert_eq!(w.grad, vec![1.0, -2.0]);
//! ```

use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Op {
    Leaf,
    Const,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    AddConst,
    MulConst,
    Exp,
    Ln,
    Sqrt,
    Sinh,
    Cosh,
    Asinh,
    Acosh,
    Asin,
    Acos,
    Abs,
    Recip,
    Clamp,
    Relu,
    StopGrad,
    Dot,
    Sum,
    LogSumExp,
}

impl Op {
    fn name(self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Const => "const",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::Neg => "neg",
            Op::AddConst => "add_const",
            Op::MulConst => "mul_const",
            Op::Exp => "exp",
            Op::Ln => "ln",
            Op::Sqrt => "sqrt",
            Op::Sinh => "sinh",
            Op::Cosh => "cosh",
            Op::Asinh => "asinh",
            Op::Acosh => "acosh",
            Op::Asin => "asin",
            Op::Acos => "acos",
            Op::Abs => "abs",
            Op::Recip => "recip",
            Op::Clamp => "clamp",
            Op::Relu => "relu",
            Op::StopGrad => "stopgrad",
            Op::Dot => "dot",
            Op::Sum => "sum",
            Op::LogSumExp => "log_sum_exp",
        }
    }
}

#[derive(Default)]
struct TapeInner {
    values: Vec<f64>,
    ops: Vec<Op>,
    // edges of node i live in edge_parent[edge_start[i]..edge_start[i + 1]]
    edge_start: Vec<u32>,
    edge_parent: Vec<u32>,
    edge_weight: Vec<f64>,
    saturated: usize,
}

impl TapeInner {
    fn push(&mut self, op: Op, value: f64, edges: impl IntoIterator<Item = (u32, f64)>) -> u32 {
        if self.edge_start.is_empty() {
            self.edge_start.push(0);
        }
        for (p, w) in edges {
            self.edge_parent.push(p);
            self.edge_weight.push(w);
        }
        self.edge_start.push(self.edge_parent.len() as u32);
        self.values.push(value);
        self.ops.push(op);
        (self.values.len() - 1) as u32
    }
}

/// Expression tape. Single-threaded; build one per optimisation step.
#[derive(Default)]
pub struct Tape {
    inner: RefCell<TapeInner>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: u32,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var(#{} = {})", self.idx, self.value())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A differentiable leaf.
    pub fn var(&self, value: f64) -> Var<'_> {
        self.node(Op::Leaf, value, [])
    }

    pub fn constant(&self, value: f64) -> Var<'_> {
        self.node(Op::Const, value, [])
    }

    /// Leaves for every coordinate of `p`, in order.
    pub fn param(&self, p: &Parameter) -> Vec<Var<'_>> {
        p.value.iter().map(|&v| self.var(v)).collect()
    }

    /// Drops every node but keeps the allocations for reuse.
    pub fn clear(&mut self) {
        let inner = self.inner.get_mut();
        inner.values.clear();
        inner.ops.clear();
        inner.edge_start.clear();
        inner.edge_parent.clear();
        inner.edge_weight.clear();
        inner.saturated = 0;
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of clamp nodes whose input fell outside the clamp range.
    pub fn saturated_clamps(&self) -> usize {
        self.inner.borrow().saturated
    }

    fn node(&self, op: Op, value: f64, edges: impl IntoIterator<Item = (u32, f64)>) -> Var<'_> {
        let idx = self.inner.borrow_mut().push(op, value, edges);
        Var { tape: self, idx }
    }

    fn value_of(&self, idx: u32) -> f64 {
        self.inner.borrow().values[idx as usize]
    }

    /// Reverse sweep from `loss`.
    ///
    /// Fails if any node the loss depends on holds a non-finite value; the
    /// earliest such node is reported.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        assert!(std::ptr::eq(self, loss.tape), "loss belongs to another tape");
        let inner = self.inner.borrow();
        let n = loss.idx as usize + 1;
        let mut reach = vec![false; n];
        reach[n - 1] = true;
        for i in (0..n).rev() {
            if !reach[i] {
                continue;
            }
            let (s, e) = (inner.edge_start[i] as usize, inner.edge_start[i + 1] as usize);
            for &p in &inner.edge_parent[s..e] {
                reach[p as usize] = true;
            }
        }
        if let Some(i) = (0..n).find(|&i| reach[i] && !inner.values[i].is_finite()) {
            return Err(Error::NonFinite {
                op: inner.ops[i].name(),
                node: i,
            });
        }

        let mut adj = vec![0.0; n];
        adj[n - 1] = 1.0;
        for i in (0..n).rev() {
            let g = adj[i];
            if g == 0.0 {
                continue;
            }
            let (s, e) = (inner.edge_start[i] as usize, inner.edge_start[i + 1] as usize);
            for k in s..e {
                adj[inner.edge_parent[k] as usize] += inner.edge_weight[k] * g;
            }
        }
        Ok(Gradients { adj })
    }
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Clone, Debug)]
pub struct Gradients {
    adj: Vec<f64>,
}

impl Gradients {
    /// ∂loss/∂v; zero for nodes created after the loss.
    pub fn wrt(&self, v: Var<'_>) -> f64 {
        self.adj.get(v.idx as usize).copied().unwrap_or(0.0)
    }

    /// Adds the gradients of `vars` into `p.grad`.
    pub fn accumulate(&self, p: &mut Parameter, vars: &[Var<'_>]) {
        assert_eq!(p.grad.len(), vars.len(), "shape mismatch for `{}`", p.tag);
        for (g, v) in p.grad.iter_mut().zip(vars) {
            *g += self.wrt(*v);
        }
    }
}

/// A named trainable vector with its gradient accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub tag: String,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Parameter {
    pub fn new(tag: impl Into<String>, value: Vec<f64>) -> Self {
        let grad = vec![0.0; value.len()];
        Self {
            tag: tag.into(),
            value,
            grad,
        }
    }

    pub fn scalar(tag: impl Into<String>, value: f64) -> Self {
        Self::new(tag, vec![value])
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

impl<'t> Var<'t> {
    pub fn value(self) -> f64 {
        self.tape.value_of(self.idx)
    }

    pub fn tape(self) -> &'t Tape {
        self.tape
    }

    fn unary(self, op: Op, value: f64, partial: f64) -> Self {
        self.tape.node(op, value, [(self.idx, partial)])
    }

    fn binary(self, other: Self, op: Op, value: f64, da: f64, db: f64) -> Self {
        debug_assert!(std::ptr::eq(self.tape, other.tape));
        self.tape
            .node(op, value, [(self.idx, da), (other.idx, db)])
    }
}

impl<'t> Add for Var<'t> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        let v = self.value() + rhs.value();
        self.binary(rhs, Op::Add, v, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        let v = self.value() - rhs.value();
        self.binary(rhs, Op::Sub, v, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        let (a, b) = (self.value(), rhs.value());
        self.binary(rhs, Op::Mul, a * b, b, a)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        let (a, b) = (self.value(), rhs.value());
        self.binary(rhs, Op::Div, a / b, 1.0 / b, -a / (b * b))
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Self;
    fn neg(self) -> Self {
        self.unary(Op::Neg, -self.value(), -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Self;
    fn add(self, rhs: f64) -> Self {
        self.unary(Op::AddConst, self.value() + rhs, 1.0)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Self;
    fn sub(self, rhs: f64) -> Self {
        self.unary(Op::AddConst, self.value() - rhs, 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Self;
    fn mul(self, rhs: f64) -> Self {
        self.unary(Op::MulConst, self.value() * rhs, rhs)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Self;
    fn div(self, rhs: f64) -> Self {
        self.unary(Op::MulConst, self.value() / rhs, 1.0 / rhs)
    }
}

impl<'t> Real for Var<'t> {
    fn value(self) -> f64 {
        Var::value(self)
    }

    fn lit(self, v: f64) -> Self {
        self.tape.constant(v)
    }

    fn exp(self) -> Self {
        let e = self.value().exp();
        self.unary(Op::Exp, e, e)
    }

    fn ln(self) -> Self {
        let x = self.value();
        self.unary(Op::Ln, x.ln(), 1.0 / x)
    }

    fn sqrt(self) -> Self {
        let s = self.value().sqrt();
        let d = if s > 0.0 { 0.5 / s } else { 0.0 };
        self.unary(Op::Sqrt, s, d)
    }

    fn sinh(self) -> Self {
        let x = self.value();
        self.unary(Op::Sinh, x.sinh(), x.cosh())
    }

    fn cosh(self) -> Self {
        let x = self.value();
        self.unary(Op::Cosh, x.cosh(), x.sinh())
    }

    fn asinh(self) -> Self {
        let x = self.value();
        self.unary(Op::Asinh, x.asinh(), 1.0 / (x * x + 1.0).sqrt())
    }

    fn acosh(self) -> Self {
        let x = self.value();
        self.unary(Op::Acosh, x.acosh(), 1.0 / (x * x - 1.0).sqrt())
    }

    fn asin(self) -> Self {
        let x = self.value();
        self.unary(Op::Asin, x.asin(), 1.0 / (1.0 - x * x).sqrt())
    }

    fn acos(self) -> Self {
        let x = self.value();
        self.unary(Op::Acos, x.acos(), -1.0 / (1.0 - x * x).sqrt())
    }

    fn abs(self) -> Self {
        let x = self.value();
        let d = if x > 0.0 {
            1.0
        } else if x < 0.0 {
            -1.0
        } else {
            0.0
        };
        self.unary(Op::Abs, x.abs(), d)
    }

    fn recip(self) -> Self {
        let x = self.value();
        self.unary(Op::Recip, 1.0 / x, -1.0 / (x * x))
    }

    fn clamp(self, lo: f64, hi: f64) -> Self {
        let x = self.value();
        if x < lo || x > hi {
            self.tape.inner.borrow_mut().saturated += 1;
            let v = if x < lo { lo } else { hi };
            self.unary(Op::Clamp, v, 0.0)
        } else {
            self.unary(Op::Clamp, x, 1.0)
        }
    }

    fn saturate(self, v: f64) -> Self {
        self.tape.inner.borrow_mut().saturated += 1;
        self.unary(Op::Clamp, v, 0.0)
    }

    fn relu(self) -> Self {
        let x = self.value();
        if x > 0.0 {
            self.unary(Op::Relu, x, 1.0)
        } else {
            self.unary(Op::Relu, 0.0, 0.0)
        }
    }

    fn detach(self) -> Self {
        self.tape.node(Op::StopGrad, self.value(), [])
    }

    fn dot(a: &[Self], b: &[Self]) -> Self {
        assert_eq!(a.len(), b.len(), "dot length mismatch");
        let tape = a.first().or(b.first()).expect("dot of empty slices").tape;
        let (v, edges) = {
            let inner = tape.inner.borrow();
            let mut v = 0.0;
            let mut edges = Vec::with_capacity(2 * a.len());
            for (x, y) in a.iter().zip(b) {
                let (xv, yv) = (inner.values[x.idx as usize], inner.values[y.idx as usize]);
                v += xv * yv;
                edges.push((x.idx, yv));
                edges.push((y.idx, xv));
            }
            (v, edges)
        };
        tape.node(Op::Dot, v, edges)
    }

    fn dot_f64(a: &[Self], b: &[f64]) -> Self {
        assert_eq!(a.len(), b.len(), "dot length mismatch");
        let tape = a.first().expect("dot of empty slices").tape;
        let v = {
            let inner = tape.inner.borrow();
            a.iter()
                .zip(b)
                .fold(0.0, |acc, (x, y)| acc + inner.values[x.idx as usize] * y)
        };
        tape.node(Op::Dot, v, a.iter().zip(b).map(|(x, &y)| (x.idx, y)))
    }

    fn sum(xs: &[Self]) -> Self {
        let tape = xs.first().expect("sum of empty slice").tape;
        let v = {
            let inner = tape.inner.borrow();
            xs.iter().fold(0.0, |acc, x| acc + inner.values[x.idx as usize])
        };
        tape.node(Op::Sum, v, xs.iter().map(|x| (x.idx, 1.0)))
    }

    fn log_sum_exp(xs: &[Self]) -> Self {
        let tape = xs.first().expect("log_sum_exp of empty slice").tape;
        let vals: Vec<f64> = {
            let inner = tape.inner.borrow();
            xs.iter().map(|x| inner.values[x.idx as usize]).collect()
        };
        let m = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let s = vals.iter().fold(0.0, |acc, x| acc + (x - m).exp());
        let lse = m + s.ln();
        tape.node(
            Op::LogSumExp,
            lse,
            xs.iter()
                .zip(&vals)
                .map(|(x, v)| (x.idx, (v - lse).exp())),
        )
    }
}

/// Outcome of a finite-difference comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub op_name: String,
    pub max_rel_error: f64,
    /// Flat index over the concatenated parameter coordinates.
    pub worst_coordinate: usize,
    pub step: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// `|a − n| / max(1e-8, |a| + |n|)`.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares the gradients already accumulated in `params` against central
/// differences of `f`.
///
/// `f` is evaluated with the parameter values perturbed in place; values are
/// restored afterwards.
pub fn finite_diff_check<F>(
    op_name: &str,
    mut f: F,
    params: &mut [Parameter],
    step: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&[Parameter]) -> f64,
{
    if !(1e-7..=1e-3).contains(&step) {
        return Err(crate::error::contract(
            "finite_diff_check",
            format!("step {step} outside [1e-7, 1e-3]"),
        ));
    }
    let mut report = GradCheckReport {
        op_name: op_name.to_string(),
        max_rel_error: 0.0,
        worst_coordinate: 0,
        step,
    };
    let mut flat = 0;
    for pi in 0..params.len() {
        for ci in 0..params[pi].len() {
            let orig = params[pi].value[ci];
            params[pi].value[ci] = orig + step;
            let up = f(params);
            params[pi].value[ci] = orig - step;
            let down = f(params);
            params[pi].value[ci] = orig;
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::NonFiniteProbe {
                    tag: params[pi].tag.clone(),
                    coord: ci,
                });
            }
            let numeric = (up - down) / (2.0 * step);
            let err = rel_error(params[pi].grad[ci], numeric);
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_coordinate = flat;
            }
            flat += 1;
        }
    }
    Ok(report)
}

/// A scalar function of parameter vectors written once for any [`Real`].
pub trait Objective {
    fn eval<S: Real>(&self, params: &[Vec<S>]) -> S;
}

/// Result of [`check_objective`]: the report plus the number of clamps that
/// saturated while recording the analytic pass.
#[derive(Clone, Debug)]
pub struct ObjectiveCheck {
    pub report: GradCheckReport,
    pub saturated_clamps: usize,
    pub value: f64,
}

/// Differentiates `obj` on a tape, then checks it against central
/// differences of its `f64` evaluation.
pub fn check_objective<O: Objective>(
    op_name: &str,
    obj: &O,
    params: &mut [Parameter],
    step: f64,
) -> Result<ObjectiveCheck> {
    let tape = Tape::new();
    let vars: Vec<Vec<Var<'_>>> = params.iter().map(|p| tape.param(p)).collect();
    let loss = obj.eval(&vars);
    let grads = tape.backward(loss)?;
    for (p, v) in params.iter_mut().zip(&vars) {
        p.zero_grad();
        grads.accumulate(p, v);
    }
    let saturated_clamps = tape.saturated_clamps();
    let value = loss.value();
    let report = finite_diff_check(
        op_name,
        |ps| {
            let vals: Vec<Vec<f64>> = ps.iter().map(|p| p.value.clone()).collect();
            obj.eval(&vals)
        },
        params,
        step,
    )?;
    Ok(ObjectiveCheck {
        report,
        saturated_clamps,
        value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_square_norm_gradient_is_identity() {
        let mut w = Parameter::new("w", vec![0.5, -1.5, 3.0]);
        let tape = Tape::new();
        let v = tape.param(&w);
        let loss = Real::dot(&v, &v) * 0.5;
        tape.backward(loss).unwrap().accumulate(&mut w, &v);
        assert_eq!(w.grad, w.value);
    }

    #[test]
    fn stopgrad_blocks_exactly() {
        let mut w = Parameter::new("w", vec![2.0, 3.0]);
        let tape = Tape::new();
        let v = tape.param(&w);
        let d: Vec<_> = v.iter().map(|x| x.detach()).collect();
        let loss = Real::dot(&d, &d) + v[0] * 0.0;
        assert_eq!(loss.value(), 13.0);
        tape.backward(loss).unwrap().accumulate(&mut w, &v);
        assert_eq!(w.grad, vec![0.0, 0.0]);
    }

    #[test]
    fn non_finite_names_first_offender() {
        let tape = Tape::new();
        let x = tape.var(-1.0);
        let y = x.ln();
        let z = y * 2.0 + 1.0;
        match tape.backward(z) {
            Err(Error::NonFinite { op, node }) => {
                assert_eq!(op, "ln");
                assert_eq!(node, 1);
            }
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn unreachable_non_finite_is_ignored() {
        let tape = Tape::new();
        let x = tape.var(-1.0);
        let _junk = x.ln();
        let y = x * x;
        assert!(tape.backward(y).is_ok());
    }

    #[test]
    fn clamp_saturation_counts_and_passes_zero() {
        let tape = Tape::new();
        let x = tape.var(2.0);
        let y = x.clamp(-1.0, 1.0);
        assert_eq!(y.value(), 1.0);
        assert_eq!(tape.saturated_clamps(), 1);
        assert_eq!(tape.backward(y).unwrap().wrt(x), 0.0);
    }

    #[test]
    fn log_sum_exp_matches_f64() {
        let xs = [0.3, -2.0, 5.5, 1.25];
        let tape = Tape::new();
        let vs: Vec<_> = xs.iter().map(|&x| tape.var(x)).collect();
        let l = Real::log_sum_exp(&vs);
        assert!((l.value() - f64::log_sum_exp(&xs)).abs() < 1e-15);
        let g = tape.backward(l).unwrap();
        let total: f64 = vs.iter().map(|v| g.wrt(*v)).sum();
        assert!((total - 1.0).abs() < 1e-14);
    }

    struct Quadratic;
    impl Objective for Quadratic {
        fn eval<S: Real>(&self, p: &[Vec<S>]) -> S {
            let x = &p[0];
            // x^T A x with A = [[2, 1], [1, 3]] plus a linear term
            x[0] * x[0] * 2.0 + x[0] * x[1] * 2.0 + x[1] * x[1] * 3.0 + x[1] * 0.7
        }
    }

    #[test]
    fn quadratic_form_checks_tightly() {
        let mut ps = vec![Parameter::new("x", vec![0.4, -1.1])];
        let chk = check_objective("quadratic", &Quadratic, &mut ps, 1e-5).unwrap();
        assert!(chk.report.max_rel_error < 1e-9, "{:?}", chk.report);
    }

    #[test]
    fn step_outside_range_is_rejected() {
        let mut ps = vec![Parameter::new("x", vec![0.0])];
        assert!(finite_diff_check("q", |_| 0.0, &mut ps, 1e-2).is_err());
    }

    #[test]
    fn non_finite_probe_reports_tag() {
        let mut ps = vec![Parameter::new("alpha", vec![0.0])];
        let err = finite_diff_check("ln", |p| p[0].value[0].ln(), &mut ps, 1e-5).unwrap_err();
        match err {
            Error::NonFiniteProbe { tag, coord } => {
                assert_eq!(tag, "alpha");
                assert_eq!(coord, 0);
            }
            e => panic!("{e:?}"),
        }
    }
}
