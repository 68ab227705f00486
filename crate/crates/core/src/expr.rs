//! Expression trees over up to four variables.
//!
//! Charts, worldlines, component functions and test forms are all built from
//! [`Expr`]. Trees are immutable and shared through `Arc`; each node lazily
//! compiles itself into a flat evaluation tape the first time it is evaluated,
//! with common subtrees (shared `Arc`s) evaluated once.
//!
//! Constructors normalize as they build (constant folding, `0 + x = x`,
//! `-(-x) = x`, ...). The parser goes through the same constructors, so a
//! printed expression parses back to a structurally identical tree.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, OnceLock};

use crate::error::{Error, Result};
use crate::jets::{Jet2, DIM};

#[derive(Clone)]
pub struct Expr(Arc<Inner>);

struct Inner {
    node: Node,
    tape: OnceLock<Tape>,
}

#[derive(Clone, PartialEq)]
pub enum Node {
    Const(f64),
    Var(usize),
    Add(Expr, Expr),
    Sub(Expr, Expr),
    Mul(Expr, Expr),
    Div(Expr, Expr),
    Neg(Expr),
    /// Power with a constant exponent.
    Pow(Expr, f64),
    Exp(Expr),
    Sin(Expr),
    Cos(Expr),
    Sqrt(Expr),
    /// `atan2(y, x)`.
    Atan2(Expr, Expr),
    /// `k`-th derivative of `u -> exp(-1/u)` (zero for `u <= 0`).
    Flat(u32, Expr),
}

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0) || self.0.node == other.0.node
    }
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({})", self.display(VarNames::Spacetime))
    }
}

impl From<f64> for Expr {
    fn from(c: f64) -> Self {
        Expr::constant(c)
    }
}

impl Expr {
    fn wrap(node: Node) -> Self {
        Expr(Arc::new(Inner {
            node,
            tape: OnceLock::new(),
        }))
    }

    pub fn node(&self) -> &Node {
        &self.0.node
    }

    pub fn constant(c: f64) -> Self {
        Self::wrap(Node::Const(c))
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    pub fn one() -> Self {
        Self::constant(1.0)
    }

    pub fn var(i: usize) -> Self {
        assert!(i < DIM, "variable index {i} out of range");
        Self::wrap(Node::Var(i))
    }

    /// The parameter of a curve or component function (variable 0).
    pub fn tau() -> Self {
        Self::var(0)
    }

    pub fn as_const(&self) -> Option<f64> {
        match self.node() {
            Node::Const(c) => Some(*c),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_const() == Some(0.0)
    }

    pub fn add(a: &Expr, b: &Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Expr::constant(x + y),
            (Some(x), _) if x == 0.0 => b.clone(),
            (_, Some(y)) if y == 0.0 => a.clone(),
            _ => Self::wrap(Node::Add(a.clone(), b.clone())),
        }
    }

    pub fn sub(a: &Expr, b: &Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Expr::constant(x - y),
            (Some(x), _) if x == 0.0 => Expr::neg(b),
            (_, Some(y)) if y == 0.0 => a.clone(),
            _ => Self::wrap(Node::Sub(a.clone(), b.clone())),
        }
    }

    pub fn mul(a: &Expr, b: &Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Expr::constant(x * y),
            (Some(x), _) | (_, Some(x)) if x == 0.0 => Expr::zero(),
            (Some(x), _) if x == 1.0 => b.clone(),
            (_, Some(y)) if y == 1.0 => a.clone(),
            (Some(x), _) if x == -1.0 => Expr::neg(b),
            (_, Some(y)) if y == -1.0 => Expr::neg(a),
            _ => Self::wrap(Node::Mul(a.clone(), b.clone())),
        }
    }

    pub fn div(a: &Expr, b: &Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) if y != 0.0 => Expr::constant(x / y),
            (Some(x), _) if x == 0.0 => Expr::zero(),
            (_, Some(y)) if y == 1.0 => a.clone(),
            _ => Self::wrap(Node::Div(a.clone(), b.clone())),
        }
    }

    pub fn neg(a: &Expr) -> Expr {
        match a.node() {
            Node::Const(c) => Expr::constant(-c),
            Node::Neg(inner) => inner.clone(),
            _ => Self::wrap(Node::Neg(a.clone())),
        }
    }

    pub fn powf(&self, p: f64) -> Expr {
        if p == 0.0 {
            return Expr::one();
        }
        if p == 1.0 {
            return self.clone();
        }
        if let Some(c) = self.as_const() {
            let v = c.powf(p);
            if v.is_finite() {
                return Expr::constant(v);
            }
        }
        Self::wrap(Node::Pow(self.clone(), p))
    }

    pub fn exp(&self) -> Expr {
        match self.as_const() {
            Some(c) => Expr::constant(c.exp()),
            None => Self::wrap(Node::Exp(self.clone())),
        }
    }

    pub fn sin(&self) -> Expr {
        match self.as_const() {
            Some(c) => Expr::constant(c.sin()),
            None => Self::wrap(Node::Sin(self.clone())),
        }
    }

    pub fn cos(&self) -> Expr {
        match self.as_const() {
            Some(c) => Expr::constant(c.cos()),
            None => Self::wrap(Node::Cos(self.clone())),
        }
    }

    pub fn sqrt(&self) -> Expr {
        match self.as_const() {
            Some(c) if c >= 0.0 => Expr::constant(c.sqrt()),
            _ => Self::wrap(Node::Sqrt(self.clone())),
        }
    }

    pub fn atan2(y: &Expr, x: &Expr) -> Expr {
        match (y.as_const(), x.as_const()) {
            (Some(a), Some(b)) if a != 0.0 || b != 0.0 => Expr::constant(a.atan2(b)),
            _ => Self::wrap(Node::Atan2(y.clone(), x.clone())),
        }
    }

    pub fn flat(&self, k: u32) -> Expr {
        match self.as_const() {
            Some(c) => Expr::constant(crate::jets::flat_derivative(k, c)),
            None => Self::wrap(Node::Flat(k, self.clone())),
        }
    }

    /// Smooth bump `exp(-1/(1-u^2))` for `|u| < 1`, zero elsewhere.
    pub fn bump(u: &Expr) -> Expr {
        Expr::sub(&Expr::one(), &u.powf(2.0)).flat(0)
    }

    /// Smooth step: 0 for `u <= 0`, 1 for `u >= 1`, flat at both ends.
    pub fn smooth_step(u: &Expr) -> Expr {
        let rise = u.flat(0);
        let fall = Expr::sub(&Expr::one(), u).flat(0);
        Expr::div(&rise, &Expr::add(&rise, &fall))
    }

    pub fn sum<I: IntoIterator<Item = Expr>>(terms: I) -> Expr {
        terms
            .into_iter()
            .fold(Expr::zero(), |acc, t| Expr::add(&acc, &t))
    }

    pub fn product<I: IntoIterator<Item = Expr>>(factors: I) -> Expr {
        factors
            .into_iter()
            .fold(Expr::one(), |acc, t| Expr::mul(&acc, &t))
    }

    /// Symbolic partial derivative with respect to variable `var`.
    pub fn diff(&self, var: usize) -> Expr {
        let mut memo = HashMap::new();
        self.diff_memo(var, &mut memo)
    }

    fn diff_memo(&self, var: usize, memo: &mut HashMap<*const Inner, Expr>) -> Expr {
        let key = Arc::as_ptr(&self.0);
        if let Some(d) = memo.get(&key) {
            return d.clone();
        }
        let d = match self.node() {
            Node::Const(_) => Expr::zero(),
            Node::Var(i) => {
                if *i == var {
                    Expr::one()
                } else {
                    Expr::zero()
                }
            }
            Node::Add(a, b) => Expr::add(&a.diff_memo(var, memo), &b.diff_memo(var, memo)),
            Node::Sub(a, b) => Expr::sub(&a.diff_memo(var, memo), &b.diff_memo(var, memo)),
            Node::Mul(a, b) => {
                let da = a.diff_memo(var, memo);
                let db = b.diff_memo(var, memo);
                Expr::add(&Expr::mul(&da, b), &Expr::mul(a, &db))
            }
            Node::Div(a, b) => {
                let da = a.diff_memo(var, memo);
                let db = b.diff_memo(var, memo);
                if db.is_zero() {
                    Expr::div(&da, b)
                } else {
                    let num = Expr::sub(&Expr::mul(&da, b), &Expr::mul(a, &db));
                    Expr::div(&num, &b.powf(2.0))
                }
            }
            Node::Neg(a) => Expr::neg(&a.diff_memo(var, memo)),
            Node::Pow(a, p) => {
                let da = a.diff_memo(var, memo);
                let outer = Expr::mul(&Expr::constant(*p), &a.powf(p - 1.0));
                Expr::mul(&outer, &da)
            }
            Node::Exp(a) => Expr::mul(self, &a.diff_memo(var, memo)),
            Node::Sin(a) => Expr::mul(&a.cos(), &a.diff_memo(var, memo)),
            Node::Cos(a) => Expr::neg(&Expr::mul(&a.sin(), &a.diff_memo(var, memo))),
            Node::Sqrt(a) => {
                let da = a.diff_memo(var, memo);
                Expr::div(&da, &Expr::mul(&Expr::constant(2.0), self))
            }
            Node::Atan2(y, x) => {
                let dy = y.diff_memo(var, memo);
                let dx = x.diff_memo(var, memo);
                let num = Expr::sub(&Expr::mul(x, &dy), &Expr::mul(y, &dx));
                let den = Expr::add(&x.powf(2.0), &y.powf(2.0));
                Expr::div(&num, &den)
            }
            Node::Flat(k, a) => Expr::mul(&a.flat(k + 1), &a.diff_memo(var, memo)),
        };
        memo.insert(key, d.clone());
        d
    }

    /// Replaces each variable `i` by `values[i]`.
    pub fn substitute(&self, values: &[Expr]) -> Expr {
        let mut memo = HashMap::new();
        self.subst_memo(values, &mut memo)
    }

    fn subst_memo(&self, values: &[Expr], memo: &mut HashMap<*const Inner, Expr>) -> Expr {
        let key = Arc::as_ptr(&self.0);
        if let Some(e) = memo.get(&key) {
            return e.clone();
        }
        let mut s = |e: &Expr| e.subst_memo(values, memo);
        let out = match self.node() {
            Node::Const(_) => self.clone(),
            Node::Var(i) => values
                .get(*i)
                .cloned()
                .unwrap_or_else(|| panic!("no substitution for variable {i}")),
            Node::Add(a, b) => {
                let (a, b) = (s(a), s(b));
                Expr::add(&a, &b)
            }
            Node::Sub(a, b) => {
                let (a, b) = (s(a), s(b));
                Expr::sub(&a, &b)
            }
            Node::Mul(a, b) => {
                let (a, b) = (s(a), s(b));
                Expr::mul(&a, &b)
            }
            Node::Div(a, b) => {
                let (a, b) = (s(a), s(b));
                Expr::div(&a, &b)
            }
            Node::Neg(a) => Expr::neg(&s(a)),
            Node::Pow(a, p) => s(a).powf(*p),
            Node::Exp(a) => s(a).exp(),
            Node::Sin(a) => s(a).sin(),
            Node::Cos(a) => s(a).cos(),
            Node::Sqrt(a) => s(a).sqrt(),
            Node::Atan2(y, x) => {
                let (y, x) = (s(y), s(x));
                Expr::atan2(&y, &x)
            }
            Node::Flat(k, a) => s(a).flat(*k),
        };
        memo.insert(key, out.clone());
        out
    }

    /// Whether the expression depends on variable `var`.
    pub fn depends_on(&self, var: usize) -> bool {
        self.tape()
            .ops
            .iter()
            .any(|op| matches!(op, Op::Var(i) if *i == var))
    }

    fn tape(&self) -> &Tape {
        self.0.tape.get_or_init(|| Tape::compile(self))
    }

    /// Value at `x`.
    pub fn eval(&self, x: &[f64; DIM]) -> Result<f64> {
        self.tape().eval(x)
    }

    /// Value, gradient and Hessian at `x`.
    pub fn jet(&self, x: &[f64; DIM]) -> Result<Jet2> {
        self.tape().jet(x)
    }

    /// Value of a one-parameter function at `tau`.
    pub fn eval_tau(&self, tau: f64) -> Result<f64> {
        self.eval(&[tau, 0.0, 0.0, 0.0])
    }

    /// Value and first two derivatives of a one-parameter function at `tau`.
    pub fn jet_tau(&self, tau: f64) -> Result<(f64, f64, f64)> {
        let j = self.jet(&[tau, 0.0, 0.0, 0.0])?;
        Ok((j.value, j.grad[0], j.hess_at(0, 0)))
    }

    pub fn display(&self, names: VarNames) -> Display<'_> {
        Display { expr: self, names }
    }

    /// Number of distinct nodes after sharing.
    pub fn node_count(&self) -> usize {
        self.tape().ops.len()
    }
}

macro_rules! impl_binop {
    ($trait:ident, $method:ident, $ctor:path) => {
        impl std::ops::$trait<Expr> for Expr {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                $ctor(&self, &rhs)
            }
        }
        impl std::ops::$trait<&Expr> for &Expr {
            type Output = Expr;
            fn $method(self, rhs: &Expr) -> Expr {
                $ctor(self, rhs)
            }
        }
        impl std::ops::$trait<f64> for Expr {
            type Output = Expr;
            fn $method(self, rhs: f64) -> Expr {
                $ctor(&self, &Expr::constant(rhs))
            }
        }
        impl std::ops::$trait<Expr> for f64 {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                $ctor(&Expr::constant(self), &rhs)
            }
        }
    };
}

impl_binop!(Add, add, Expr::add);
impl_binop!(Sub, sub, Expr::sub);
impl_binop!(Mul, mul, Expr::mul);
impl_binop!(Div, div, Expr::div);

impl std::ops::Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::neg(&self)
    }
}

impl std::ops::Neg for &Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::neg(self)
    }
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Const(f64),
    Var(usize),
    Add(u32, u32),
    Sub(u32, u32),
    Mul(u32, u32),
    Div(u32, u32),
    Neg(u32),
    Pow(u32, f64),
    Exp(u32),
    Sin(u32),
    Cos(u32),
    Sqrt(u32),
    Atan2(u32, u32),
    Flat(u32, u32),
}

#[derive(Debug)]
struct Tape {
    ops: Vec<Op>,
}

impl Tape {
    fn compile(root: &Expr) -> Tape {
        Self::compile_many(std::slice::from_ref(root)).0
    }

    fn compile_many(roots: &[Expr]) -> (Tape, Vec<u32>) {
        let mut ops = Vec::new();
        let mut seen: HashMap<*const Inner, u32> = HashMap::new();
        let outputs = roots.iter().map(|r| Self::emit(r, &mut ops, &mut seen)).collect();
        (Tape { ops }, outputs)
    }

    fn emit(e: &Expr, ops: &mut Vec<Op>, seen: &mut HashMap<*const Inner, u32>) -> u32 {
        let key = Arc::as_ptr(&e.0);
        if let Some(&i) = seen.get(&key) {
            return i;
        }
        let mut go = |x: &Expr, ops: &mut Vec<Op>| Self::emit(x, ops, seen);
        let op = match e.node() {
            Node::Const(c) => Op::Const(*c),
            Node::Var(i) => Op::Var(*i),
            Node::Add(a, b) => {
                let (a, b) = (go(a, ops), go(b, ops));
                Op::Add(a, b)
            }
            Node::Sub(a, b) => {
                let (a, b) = (go(a, ops), go(b, ops));
                Op::Sub(a, b)
            }
            Node::Mul(a, b) => {
                let (a, b) = (go(a, ops), go(b, ops));
                Op::Mul(a, b)
            }
            Node::Div(a, b) => {
                let (a, b) = (go(a, ops), go(b, ops));
                Op::Div(a, b)
            }
            Node::Neg(a) => Op::Neg(go(a, ops)),
            Node::Pow(a, p) => Op::Pow(go(a, ops), *p),
            Node::Exp(a) => Op::Exp(go(a, ops)),
            Node::Sin(a) => Op::Sin(go(a, ops)),
            Node::Cos(a) => Op::Cos(go(a, ops)),
            Node::Sqrt(a) => Op::Sqrt(go(a, ops)),
            Node::Atan2(y, x) => {
                let (y, x) = (go(y, ops), go(x, ops));
                Op::Atan2(y, x)
            }
            Node::Flat(k, a) => Op::Flat(*k, go(a, ops)),
        };
        ops.push(op);
        let idx = (ops.len() - 1) as u32;
        seen.insert(key, idx);
        idx
    }

    fn eval(&self, x: &[f64; DIM]) -> Result<f64> {
        Ok(*self.eval_all(x)?.last().expect("empty tape"))
    }

    fn jet(&self, x: &[f64; DIM]) -> Result<Jet2> {
        Ok(*self.jet_all(x)?.last().expect("empty tape"))
    }

    fn eval_all(&self, x: &[f64; DIM]) -> Result<Vec<f64>> {
        let mut v: Vec<f64> = Vec::with_capacity(self.ops.len());
        for op in &self.ops {
            let r = match *op {
                Op::Const(c) => c,
                Op::Var(i) => x[i],
                Op::Add(a, b) => v[a as usize] + v[b as usize],
                Op::Sub(a, b) => v[a as usize] - v[b as usize],
                Op::Mul(a, b) => v[a as usize] * v[b as usize],
                Op::Div(a, b) => {
                    let d = v[b as usize];
                    if d == 0.0 {
                        return Err(Error::Domain { op: "division", value: d });
                    }
                    v[a as usize] / d
                }
                Op::Neg(a) => -v[a as usize],
                Op::Pow(a, p) => {
                    let base = v[a as usize];
                    if p.fract() == 0.0 {
                        if p < 0.0 && base == 0.0 {
                            return Err(Error::Domain { op: "pow", value: base });
                        }
                        base.powi(p as i32)
                    } else {
                        if base < 0.0 {
                            return Err(Error::Domain { op: "pow", value: base });
                        }
                        base.powf(p)
                    }
                }
                Op::Exp(a) => v[a as usize].exp(),
                Op::Sin(a) => v[a as usize].sin(),
                Op::Cos(a) => v[a as usize].cos(),
                Op::Sqrt(a) => {
                    let s = v[a as usize];
                    if s < 0.0 {
                        return Err(Error::Domain { op: "sqrt", value: s });
                    }
                    s.sqrt()
                }
                Op::Atan2(y, xx) => {
                    let (yv, xv) = (v[y as usize], v[xx as usize]);
                    if yv == 0.0 && xv == 0.0 {
                        return Err(Error::Domain { op: "atan2", value: 0.0 });
                    }
                    yv.atan2(xv)
                }
                Op::Flat(k, a) => crate::jets::flat_derivative(k, v[a as usize]),
            };
            v.push(r);
        }
        Ok(v)
    }

    fn jet_all(&self, x: &[f64; DIM]) -> Result<Vec<Jet2>> {
        let mut v: Vec<Jet2> = Vec::with_capacity(self.ops.len());
        for op in &self.ops {
            let r = match *op {
                Op::Const(c) => Jet2::constant(c),
                Op::Var(i) => Jet2::seed(x, i),
                Op::Add(a, b) => v[a as usize] + v[b as usize],
                Op::Sub(a, b) => v[a as usize] - v[b as usize],
                Op::Mul(a, b) => v[a as usize] * v[b as usize],
                Op::Div(a, b) => v[a as usize].div(&v[b as usize])?,
                Op::Neg(a) => -v[a as usize],
                Op::Pow(a, p) => v[a as usize].powf(p)?,
                Op::Exp(a) => v[a as usize].exp(),
                Op::Sin(a) => v[a as usize].sin(),
                Op::Cos(a) => v[a as usize].cos(),
                Op::Sqrt(a) => v[a as usize].sqrt()?,
                Op::Atan2(y, xx) => v[y as usize].atan2(&v[xx as usize])?,
                Op::Flat(k, a) => v[a as usize].flat(k),
            };
            v.push(r);
        }
        Ok(v)
    }
}

/// Several expressions compiled into one tape, so subtrees they share are
/// evaluated once per point.
#[derive(Debug)]
pub struct ExprSet {
    exprs: Vec<Expr>,
    tape: Tape,
    outputs: Vec<u32>,
}

impl Clone for ExprSet {
    fn clone(&self) -> Self {
        ExprSet::new(self.exprs.clone())
    }
}

impl ExprSet {
    pub fn new(exprs: Vec<Expr>) -> Self {
        let (tape, outputs) = Tape::compile_many(&exprs);
        Self { exprs, tape, outputs }
    }

    pub fn exprs(&self) -> &[Expr] {
        &self.exprs
    }

    pub fn len(&self) -> usize {
        self.exprs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exprs.is_empty()
    }

    pub fn eval_into(&self, x: &[f64; DIM], out: &mut [f64]) -> Result<()> {
        if self.exprs.is_empty() {
            return Ok(());
        }
        let v = self.tape.eval_all(x)?;
        for (o, &i) in out.iter_mut().zip(&self.outputs) {
            *o = v[i as usize];
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64; DIM]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.exprs.len()];
        self.eval_into(x, &mut out)?;
        Ok(out)
    }

    pub fn jet(&self, x: &[f64; DIM]) -> Result<Vec<Jet2>> {
        if self.exprs.is_empty() {
            return Ok(Vec::new());
        }
        let v = self.tape.jet_all(x)?;
        Ok(self.outputs.iter().map(|&i| v[i as usize]).collect())
    }

    pub fn eval_tau(&self, tau: f64) -> Result<Vec<f64>> {
        self.eval(&[tau, 0.0, 0.0, 0.0])
    }

    /// Value and first two derivatives of each one-parameter function.
    pub fn jet_tau(&self, tau: f64) -> Result<Vec<[f64; 3]>> {
        Ok(self
            .jet(&[tau, 0.0, 0.0, 0.0])?
            .into_iter()
            .map(|j| [j.value, j.grad[0], j.hess_at(0, 0)])
            .collect())
    }
}

/// How variables are named when printing and parsing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarNames {
    /// `x0 .. x3`
    Spacetime,
    /// `tau` (variable 0 only)
    Tau,
}

impl VarNames {
    fn name(self, i: usize) -> String {
        match self {
            VarNames::Spacetime => format!("x{i}"),
            VarNames::Tau => {
                if i == 0 {
                    "tau".to_string()
                } else {
                    format!("x{i}")
                }
            }
        }
    }

    fn lookup(self, ident: &str) -> Option<usize> {
        match self {
            VarNames::Tau => match ident {
                "tau" | "τ" | "t" => Some(0),
                _ => None,
            },
            VarNames::Spacetime => match ident {
                "x0" => Some(0),
                "x1" => Some(1),
                "x2" => Some(2),
                "x3" => Some(3),
                _ => None,
            },
        }
    }
}

pub struct Display<'a> {
    expr: &'a Expr,
    names: VarNames,
}

const PREC_ADD: u8 = 1;
const PREC_MUL: u8 = 2;
const PREC_NEG: u8 = 3;
const PREC_POW: u8 = 4;
const PREC_ATOM: u8 = 5;

fn precedence(e: &Expr) -> u8 {
    match e.node() {
        Node::Const(c) if *c < 0.0 || (*c == 0.0 && c.is_sign_negative()) => PREC_NEG,
        Node::Const(_) | Node::Var(_) => PREC_ATOM,
        Node::Add(..) | Node::Sub(..) => PREC_ADD,
        Node::Mul(..) | Node::Div(..) => PREC_MUL,
        Node::Neg(_) => PREC_NEG,
        Node::Pow(..) => PREC_POW,
        _ => PREC_ATOM,
    }
}

impl Display<'_> {
    fn write(&self, e: &Expr, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names = self.names;
        let sub = |x: &Expr, min: u8, f: &mut fmt::Formatter<'_>| -> fmt::Result {
            if precedence(x) < min {
                write!(f, "(")?;
                self.write(x, f)?;
                write!(f, ")")
            } else {
                self.write(x, f)
            }
        };
        match e.node() {
            Node::Const(c) => write!(f, "{c:?}"),
            Node::Var(i) => write!(f, "{}", names.name(*i)),
            Node::Add(a, b) => {
                sub(a, PREC_ADD, f)?;
                write!(f, " + ")?;
                sub(b, PREC_ADD + 1, f)
            }
            Node::Sub(a, b) => {
                sub(a, PREC_ADD, f)?;
                write!(f, " - ")?;
                sub(b, PREC_ADD + 1, f)
            }
            Node::Mul(a, b) => {
                sub(a, PREC_MUL, f)?;
                write!(f, "*")?;
                sub(b, PREC_MUL + 1, f)
            }
            Node::Div(a, b) => {
                sub(a, PREC_MUL, f)?;
                write!(f, "/")?;
                sub(b, PREC_MUL + 1, f)
            }
            Node::Neg(a) => {
                write!(f, "-")?;
                sub(a, PREC_NEG, f)
            }
            Node::Pow(a, p) => {
                sub(a, PREC_ATOM, f)?;
                if *p < 0.0 {
                    write!(f, "^({p:?})")
                } else {
                    write!(f, "^{p:?}")
                }
            }
            Node::Exp(a) => self.call("exp", &[a], f),
            Node::Sin(a) => self.call("sin", &[a], f),
            Node::Cos(a) => self.call("cos", &[a], f),
            Node::Sqrt(a) => self.call("sqrt", &[a], f),
            Node::Atan2(y, x) => self.call("atan2", &[y, x], f),
            Node::Flat(k, a) => {
                if *k == 0 {
                    self.call("flat", &[a], f)
                } else {
                    write!(f, "flat(")?;
                    self.write(a, f)?;
                    write!(f, ", {k})")
                }
            }
        }
    }

    fn call(&self, name: &str, args: &[&Expr], f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{name}(")?;
        for (i, a) in args.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            self.write(a, f)?;
        }
        write!(f, ")")
    }
}

impl fmt::Display for Display<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write(self.expr, f)
    }
}

/// Expression syntax error with the 1-based column where it was detected.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("column {column}: {message}")]
pub struct ParseError {
    pub column: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Sym(char),
}

fn tokenize(src: &str) -> std::result::Result<Vec<(Token, usize)>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            let value = text.parse::<f64>().map_err(|_| ParseError {
                column: col,
                message: format!("malformed number `{text}`"),
            })?;
            out.push((Token::Num(value), col));
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push((Token::Ident(chars[start..i].iter().collect()), col));
        } else if "+-*/^(),".contains(c) {
            out.push((Token::Sym(c), col));
            i += 1;
        } else {
            return Err(ParseError {
                column: col,
                message: format!("unexpected character `{c}`"),
            });
        }
    }
    Ok(out)
}

/// Parses expressions in the scene grammar: real literals, variables,
/// named parameters, `+ - * / ^`, parentheses, and the functions
/// `sin cos exp sqrt atan2 flat bump step`. Constants `pi` and `e` are
/// predefined.
pub struct Parser<'a> {
    names: VarNames,
    params: &'a HashMap<String, f64>,
}

impl<'a> Parser<'a> {
    pub fn new(names: VarNames, params: &'a HashMap<String, f64>) -> Self {
        Self { names, params }
    }

    pub fn parse(&self, src: &str) -> std::result::Result<Expr, ParseError> {
        let tokens = tokenize(src)?;
        let mut state = ParseState {
            tokens,
            pos: 0,
            end_col: src.chars().count() + 1,
        };
        let e = self.expr(&mut state)?;
        if let Some((tok, col)) = state.tokens.get(state.pos) {
            return Err(ParseError {
                column: *col,
                message: format!("unexpected token {tok:?}"),
            });
        }
        Ok(e)
    }

    fn expr(&self, s: &mut ParseState) -> std::result::Result<Expr, ParseError> {
        let mut lhs = self.term(s)?;
        while let Some(op) = s.peek_sym(&['+', '-']) {
            s.pos += 1;
            let rhs = self.term(s)?;
            lhs = if op == '+' {
                Expr::add(&lhs, &rhs)
            } else {
                Expr::sub(&lhs, &rhs)
            };
        }
        Ok(lhs)
    }

    fn term(&self, s: &mut ParseState) -> std::result::Result<Expr, ParseError> {
        let mut lhs = self.unary(s)?;
        while let Some(op) = s.peek_sym(&['*', '/']) {
            s.pos += 1;
            let rhs = self.unary(s)?;
            lhs = if op == '*' {
                Expr::mul(&lhs, &rhs)
            } else {
                Expr::div(&lhs, &rhs)
            };
        }
        Ok(lhs)
    }

    fn unary(&self, s: &mut ParseState) -> std::result::Result<Expr, ParseError> {
        if s.peek_sym(&['-']).is_some() {
            s.pos += 1;
            let inner = self.unary(s)?;
            return Ok(Expr::neg(&inner));
        }
        if s.peek_sym(&['+']).is_some() {
            s.pos += 1;
            return self.unary(s);
        }
        self.power(s)
    }

    fn power(&self, s: &mut ParseState) -> std::result::Result<Expr, ParseError> {
        let base = self.atom(s)?;
        if s.peek_sym(&['^']).is_some() {
            let col = s.col();
            s.pos += 1;
            let exponent = self.unary(s)?;
            let p = exponent.as_const().ok_or_else(|| ParseError {
                column: col,
                message: "exponent must be a constant".into(),
            })?;
            return Ok(base.powf(p));
        }
        Ok(base)
    }

    fn atom(&self, s: &mut ParseState) -> std::result::Result<Expr, ParseError> {
        let col = s.col();
        let Some((tok, _)) = s.tokens.get(s.pos).cloned() else {
            return Err(ParseError {
                column: col,
                message: "unexpected end of expression".into(),
            });
        };
        s.pos += 1;
        match tok {
            Token::Num(v) => Ok(Expr::constant(v)),
            Token::Sym('(') => {
                let e = self.expr(s)?;
                s.expect(')')?;
                Ok(e)
            }
            Token::Ident(name) => {
                if s.peek_sym(&['(']).is_some() {
                    s.pos += 1;
                    let mut args = vec![self.expr(s)?];
                    while s.peek_sym(&[',']).is_some() {
                        s.pos += 1;
                        args.push(self.expr(s)?);
                    }
                    s.expect(')')?;
                    return self.call(&name, args, col);
                }
                if let Some(i) = self.names.lookup(&name) {
                    return Ok(Expr::var(i));
                }
                if let Some(v) = self.params.get(&name) {
                    return Ok(Expr::constant(*v));
                }
                match name.as_str() {
                    "pi" => Ok(Expr::constant(std::f64::consts::PI)),
                    "e" => Ok(Expr::constant(std::f64::consts::E)),
                    _ => Err(ParseError {
                        column: col,
                        message: format!("unknown identifier `{name}`"),
                    }),
                }
            }
            Token::Sym(c) => Err(ParseError {
                column: col,
                message: format!("unexpected `{c}`"),
            }),
        }
    }

    fn call(&self, name: &str, args: Vec<Expr>, col: usize) -> std::result::Result<Expr, ParseError> {
        let arity = |n: usize| -> std::result::Result<(), ParseError> {
            if args.len() == n {
                Ok(())
            } else {
                Err(ParseError {
                    column: col,
                    message: format!("`{name}` takes {n} argument(s), got {}", args.len()),
                })
            }
        };
        match name {
            "sin" => arity(1).map(|_| args[0].sin()),
            "cos" => arity(1).map(|_| args[0].cos()),
            "exp" => arity(1).map(|_| args[0].exp()),
            "sqrt" => arity(1).map(|_| args[0].sqrt()),
            "bump" => arity(1).map(|_| Expr::bump(&args[0])),
            "step" => arity(1).map(|_| Expr::smooth_step(&args[0])),
            "atan2" => arity(2).map(|_| Expr::atan2(&args[0], &args[1])),
            "flat" => match args.len() {
                1 => Ok(args[0].flat(0)),
                2 => match args[1].as_const() {
                    Some(k) if k >= 0.0 && k.fract() == 0.0 && k <= 20.0 => {
                        Ok(args[0].flat(k as u32))
                    }
                    _ => Err(ParseError {
                        column: col,
                        message: "flat derivative order must be an integer in 0..=20".into(),
                    }),
                },
                n => Err(ParseError {
                    column: col,
                    message: format!("`flat` takes 1 or 2 arguments, got {n}"),
                }),
            },
            _ => Err(ParseError {
                column: col,
                message: format!("unknown function `{name}`"),
            }),
        }
    }
}

struct ParseState {
    tokens: Vec<(Token, usize)>,
    pos: usize,
    end_col: usize,
}

impl ParseState {
    fn col(&self) -> usize {
        self.tokens
            .get(self.pos)
            .map(|(_, c)| *c)
            .unwrap_or(self.end_col)
    }

    fn peek_sym(&self, syms: &[char]) -> Option<char> {
        match self.tokens.get(self.pos) {
            Some((Token::Sym(c), _)) if syms.contains(c) => Some(*c),
            _ => None,
        }
    }

    fn expect(&mut self, c: char) -> std::result::Result<(), ParseError> {
        if self.peek_sym(&[c]).is_some() {
            self.pos += 1;
            Ok(())
        } else {
            Err(ParseError {
                column: self.col(),
                message: format!("expected `{c}`"),
            })
        }
    }
}

/// Parses with no named parameters.
pub fn parse(src: &str, names: VarNames) -> std::result::Result<Expr, ParseError> {
    let empty = HashMap::new();
    Parser::new(names, &empty).parse(src)
}
