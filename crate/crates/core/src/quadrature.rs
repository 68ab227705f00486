//! Adaptive composite Gauss-Legendre quadrature.
//!
//! Each panel is integrated with a 16-point rule and compared against the sum
//! of the same rule on its two halves; panels whose discrepancy exceeds the
//! tolerance are bisected. Panels are refined one level at a time and the
//! panels of a level are evaluated with [`crate::par::map`], so the result does
//! not depend on scheduling.
//!
//! [`CumulativeIntegral`] keeps the integrand samples of every accepted panel
//! as a Legendre expansion, which integrates in closed form to give the running
//! integral at any point of the interval.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::par::{self, Execution};

/// Number of nodes per panel.
pub const NODES: usize = 16;

/// A Gauss-Legendre rule on [-1, 1].
#[derive(Debug, Clone)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Gauss-Legendre nodes and weights by Newton iteration on `P_n`.
pub fn gauss_legendre(n: usize) -> Rule {
    assert!(n > 0);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        dp = if d != 0.0 { d } else { dp };
        // ascending order
        nodes[n - 1 - i] = x;
        weights[n - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    Rule { nodes, weights }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Legendre polynomials `P_0 .. P_{n}` at `x`.
fn legendre_all(n: usize, x: f64, out: &mut [f64]) {
    out[0] = 1.0;
    if n >= 1 {
        out[1] = x;
    }
    for k in 2..=n {
        let kf = k as f64;
        out[k] = ((2.0 * kf - 1.0) * x * out[k - 1] - (kf - 1.0) * out[k - 2]) / kf;
    }
}

struct Tables {
    rule: Rule,
    /// `legendre[j][n] = P_n(x_j)`
    legendre: Vec<[f64; NODES]>,
}

fn tables() -> &'static Tables {
    static T: OnceLock<Tables> = OnceLock::new();
    T.get_or_init(|| {
        let rule = gauss_legendre(NODES);
        let legendre = rule
            .nodes
            .iter()
            .map(|&x| {
                let mut p = [0.0; NODES + 1];
                legendre_all(NODES, x, &mut p);
                let mut out = [0.0; NODES];
                out.copy_from_slice(&p[..NODES]);
                out
            })
            .collect();
        Tables { rule, legendre }
    })
}

/// The 16-point rule used for every panel.
pub fn panel_rule() -> &'static Rule {
    &tables().rule
}

/// Rule nodes on `panels` equal panels of `[a, b]`, in increasing order.
pub fn node_grid(a: f64, b: f64, panels: usize) -> Vec<f64> {
    let rule = panel_rule();
    let width = (b - a) / panels as f64;
    let mut out = Vec::with_capacity(panels * NODES);
    for p in 0..panels {
        let mid = a + width * (p as f64 + 0.5);
        out.extend(rule.nodes.iter().map(|x| mid + 0.5 * width * x));
    }
    out
}

#[derive(Debug, Clone, Copy)]
pub struct QuadOptions {
    /// Absolute error allowed per panel.
    pub abs_tol: f64,
    /// Error allowed per panel relative to the panel's integral.
    pub rel_tol: f64,
    /// Uniform panels the interval is split into before adapting.
    pub initial_panels: usize,
    pub max_depth: u32,
    pub max_panels: usize,
    pub execution: Execution,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self {
            abs_tol: 1e-10,
            rel_tol: 1e-10,
            initial_panels: 16,
            max_depth: 40,
            max_panels: 1 << 16,
            execution: Execution::default(),
        }
    }
}

impl QuadOptions {
    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadReport {
    pub values: Vec<f64>,
    pub error_estimate: f64,
    pub nodes_used: usize,
}

/// An accepted panel with the integrand sampled at the rule's nodes.
#[derive(Debug, Clone)]
struct Leaf {
    a: f64,
    b: f64,
    /// `samples[j * dim + k]`: component `k` at node `j`.
    samples: Vec<f64>,
    integral: Vec<f64>,
}

struct Pending {
    a: f64,
    b: f64,
    depth: u32,
    whole: Option<Vec<f64>>,
}

struct Outcome {
    left: Leaf,
    right: Leaf,
    error: Vec<f64>,
    evaluations: usize,
}

fn sample<F>(dim: usize, f: &F, a: f64, b: f64) -> Result<Vec<f64>>
where
    F: Fn(f64, &mut [f64]) -> Result<()>,
{
    let rule = panel_rule();
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    let mut out = vec![0.0; NODES * dim];
    for (j, &x) in rule.nodes.iter().enumerate() {
        f(mid + half * x, &mut out[j * dim..(j + 1) * dim])?;
    }
    Ok(out)
}

fn integrate_samples(dim: usize, samples: &[f64], a: f64, b: f64) -> Vec<f64> {
    let rule = panel_rule();
    let half = 0.5 * (b - a);
    let mut total = vec![0.0; dim];
    for (j, &w) in rule.weights.iter().enumerate() {
        for k in 0..dim {
            total[k] += w * samples[j * dim + k];
        }
    }
    total.iter_mut().for_each(|t| *t *= half);
    total
}

fn refine<F>(dim: usize, f: &F, a: f64, b: f64, opts: &QuadOptions) -> Result<(Vec<Leaf>, f64, usize)>
where
    F: Fn(f64, &mut [f64]) -> Result<()> + Sync,
{
    if !(a < b) || !a.is_finite() || !b.is_finite() {
        return Err(Error::BadInterval { start: a, end: b });
    }
    let n0 = opts.initial_panels.max(1);
    let width = (b - a) / n0 as f64;
    let mut pending: Vec<Pending> = (0..n0)
        .map(|i| Pending {
            a: a + width * i as f64,
            b: if i + 1 == n0 { b } else { a + width * (i + 1) as f64 },
            depth: 0,
            whole: None,
        })
        .collect();
    let mut leaves = Vec::new();
    let mut total_error = 0.0;
    let mut evaluations = 0;
    let mut worst: Option<(f64, f64, f64)> = None;

    while !pending.is_empty() {
        if leaves.len() + 2 * pending.len() > opts.max_panels {
            let p = &pending[0];
            return Err(Error::Quadrature {
                start: p.a,
                end: p.b,
                estimate: f64::INFINITY,
            });
        }
        let outcomes: Vec<Outcome> = par::try_map(&pending, opts.execution, |p| {
            let mut evaluations = 0;
            let whole = match &p.whole {
                Some(w) => w.clone(),
                None => {
                    evaluations += NODES;
                    sample(dim, f, p.a, p.b)?
                }
            };
            let m = 0.5 * (p.a + p.b);
            let ls = sample(dim, f, p.a, m)?;
            let rs = sample(dim, f, m, p.b)?;
            evaluations += 2 * NODES;
            let iw = integrate_samples(dim, &whole, p.a, p.b);
            let il = integrate_samples(dim, &ls, p.a, m);
            let ir = integrate_samples(dim, &rs, m, p.b);
            let error = (0..dim).map(|k| (iw[k] - il[k] - ir[k]).abs()).collect();
            Ok(Outcome {
                left: Leaf { a: p.a, b: m, samples: ls, integral: il },
                right: Leaf { a: m, b: p.b, samples: rs, integral: ir },
                error,
                evaluations,
            })
        })?;

        let mut next = Vec::new();
        for (p, o) in pending.into_iter().zip(outcomes) {
            evaluations += o.evaluations;
            let converged = (0..dim).all(|k| {
                let value = o.left.integral[k] + o.right.integral[k];
                o.error[k] <= opts.abs_tol + opts.rel_tol * value.abs()
            });
            let err = o.error.iter().cloned().fold(0.0, f64::max);
            if converged || p.depth >= opts.max_depth {
                if !converged && worst.is_none_or(|w| err > w.2) {
                    worst = Some((p.a, p.b, err));
                }
                total_error += err;
                leaves.push(o.left);
                leaves.push(o.right);
            } else {
                let m = o.left.b;
                next.push(Pending { a: p.a, b: m, depth: p.depth + 1, whole: Some(o.left.samples) });
                next.push(Pending { a: m, b: p.b, depth: p.depth + 1, whole: Some(o.right.samples) });
            }
        }
        pending = next;
    }

    if let Some((start, end, estimate)) = worst {
        return Err(Error::Quadrature { start, end, estimate });
    }
    leaves.sort_by(|x, y| x.a.total_cmp(&y.a));
    Ok((leaves, total_error, evaluations))
}

/// Integrates a vector-valued function of one variable over `[a, b]`.
///
/// `f(t, out)` writes the `dim` components of the integrand at `t`.
pub fn integrate_vec<F>(dim: usize, f: F, a: f64, b: f64, opts: &QuadOptions) -> Result<QuadReport>
where
    F: Fn(f64, &mut [f64]) -> Result<()> + Sync,
{
    let (leaves, error_estimate, nodes_used) = refine(dim, &f, a, b, opts)?;
    let mut values = vec![0.0; dim];
    for leaf in &leaves {
        for k in 0..dim {
            values[k] += leaf.integral[k];
        }
    }
    Ok(QuadReport { values, error_estimate, nodes_used })
}

/// Integrates a scalar function over `[a, b]`, returning `(value, error estimate, evaluations)`.
pub fn integrate<F>(f: F, a: f64, b: f64, opts: &QuadOptions) -> Result<(f64, f64, usize)>
where
    F: Fn(f64) -> Result<f64> + Sync,
{
    let r = integrate_vec(
        1,
        |t, out| {
            out[0] = f(t)?;
            Ok(())
        },
        a,
        b,
        opts,
    )?;
    Ok((r.values[0], r.error_estimate, r.nodes_used))
}

#[derive(Debug, Clone)]
struct Segment {
    a: f64,
    b: f64,
    /// Running integral at `a`.
    base: Vec<f64>,
    /// `coeffs[n * dim + k]`: Legendre coefficient `n` of component `k`.
    coeffs: Vec<f64>,
}

/// Running integral `t -> \int_a^t f` of a smooth vector-valued function.
#[derive(Debug, Clone)]
pub struct CumulativeIntegral {
    dim: usize,
    a: f64,
    b: f64,
    segments: Vec<Segment>,
    error_estimate: f64,
    nodes_used: usize,
}

impl CumulativeIntegral {
    pub fn build<F>(dim: usize, f: F, a: f64, b: f64, opts: &QuadOptions) -> Result<Self>
    where
        F: Fn(f64, &mut [f64]) -> Result<()> + Sync,
    {
        let (leaves, error_estimate, nodes_used) = refine(dim, &f, a, b, opts)?;
        let t = tables();
        let mut running = vec![0.0; dim];
        let mut segments = Vec::with_capacity(leaves.len());
        for leaf in leaves {
            let mut coeffs = vec![0.0; NODES * dim];
            for n in 0..NODES {
                let scale = (2 * n + 1) as f64 / 2.0;
                for k in 0..dim {
                    let mut c = 0.0;
                    for j in 0..NODES {
                        c += t.rule.weights[j] * leaf.samples[j * dim + k] * t.legendre[j][n];
                    }
                    coeffs[n * dim + k] = scale * c;
                }
            }
            segments.push(Segment { a: leaf.a, b: leaf.b, base: running.clone(), coeffs });
            for k in 0..dim {
                running[k] += leaf.integral[k];
            }
        }
        Ok(Self { dim, a, b, segments, error_estimate, nodes_used })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.a, self.b)
    }

    pub fn error_estimate(&self) -> f64 {
        self.error_estimate
    }

    pub fn nodes_used(&self) -> usize {
        self.nodes_used
    }

    pub fn panel_count(&self) -> usize {
        self.segments.len()
    }

    /// Writes `\int_a^t f` into `out`.
    pub fn eval(&self, t: f64, out: &mut [f64]) -> Result<()> {
        let slack = 1e-12 * (self.b - self.a).abs().max(1.0);
        if t < self.a - slack || t > self.b + slack {
            return Err(Error::OutsideInterval { tau: t, start: self.a, end: self.b });
        }
        let t = t.clamp(self.a, self.b);
        let idx = self
            .segments
            .partition_point(|s| s.b < t)
            .min(self.segments.len() - 1);
        let seg = &self.segments[idx];
        let x = ((2.0 * t - seg.a - seg.b) / (seg.b - seg.a)).clamp(-1.0, 1.0);
        let mut p = [0.0; NODES + 1];
        legendre_all(NODES, x, &mut p);
        let half = 0.5 * (seg.b - seg.a);
        for k in 0..self.dim {
            let mut acc = seg.coeffs[k] * (x + 1.0);
            for n in 1..NODES {
                acc += seg.coeffs[n * self.dim + k] * (p[n + 1] - p[n - 1]) / (2 * n + 1) as f64;
            }
            out[k] = seg.base[k] + half * acc;
        }
        Ok(())
    }

    pub fn total(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.eval(self.b, &mut out).expect("endpoint is inside the interval");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rule_integrates_polynomials_exactly() {
        let r = gauss_legendre(NODES);
        assert_relative_eq!(r.weights.iter().sum::<f64>(), 2.0, max_relative = 1e-14);
        for deg in 0..2 * NODES {
            let exact = if deg % 2 == 0 { 2.0 / (deg as f64 + 1.0) } else { 0.0 };
            let approx: f64 = r
                .nodes
                .iter()
                .zip(&r.weights)
                .map(|(x, w)| w * x.powi(deg as i32))
                .sum();
            assert!((approx - exact).abs() < 1e-14, "degree {deg}");
        }
        assert!(r.nodes.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn constant_integrand_is_exact_at_one_panel() {
        let opts = QuadOptions { initial_panels: 1, ..Default::default() };
        let (v, err, n) = integrate(|_| Ok(3.0), 0.0, 2.0, &opts).unwrap();
        assert_relative_eq!(v, 6.0, max_relative = 1e-15);
        assert!(err < 1e-14);
        assert_eq!(n, 3 * NODES);
    }

    #[test]
    fn oscillatory_integral() {
        let (v, _, _) = integrate(|t| Ok((10.0 * t).sin()), 0.0, 3.0, &QuadOptions::default()).unwrap();
        assert_relative_eq!(v, (1.0 - 30f64.cos()) / 10.0, max_relative = 1e-12);
    }

    #[test]
    fn running_integral_matches_closed_form() {
        let c = CumulativeIntegral::build(
            2,
            |t, out| {
                out[0] = t.cos();
                out[1] = (-t * t).exp() * t;
                Ok(())
            },
            -1.0,
            4.0,
            &QuadOptions::default(),
        )
        .unwrap();
        let mut out = [0.0; 2];
        for i in 0..=50 {
            let t = -1.0 + 5.0 * i as f64 / 50.0;
            c.eval(t, &mut out).unwrap();
            assert!((out[0] - (t.sin() - (-1f64).sin())).abs() < 1e-12);
            let exact = 0.5 * ((-1f64).exp() - (-t * t).exp());
            assert!((out[1] - exact).abs() < 1e-12);
        }
        assert!(c.eval(4.5, &mut out).is_err());
    }

    #[test]
    fn errors_propagate() {
        let r = integrate(
            |t| if t > 0.5 { Err(Error::Domain { op: "sqrt", value: t }) } else { Ok(t) },
            0.0,
            1.0,
            &QuadOptions::default(),
        );
        assert!(matches!(r, Err(Error::Domain { .. })));
    }

    #[test]
    fn non_convergence_reports_worst_panel() {
        let opts = QuadOptions { max_depth: 3, ..Default::default() };
        let r = integrate(|t| Ok(if t > 0.3 { 1.0 } else { 0.0 }), 0.0, 1.0, &opts);
        match r {
            Err(Error::Quadrature { start, end, .. }) => assert!(start <= 0.3 && 0.3 <= end),
            other => panic!("expected quadrature failure, got {other:?}"),
        }
    }

    #[test]
    fn sequential_and_parallel_agree_bitwise() {
        let f = |t: f64| Ok((3.0 * t).sin() * (-t).exp());
        let a = integrate(f, 0.0, 7.0, &QuadOptions::default().with_execution(Execution::Sequential)).unwrap();
        let b = integrate(f, 0.0, 7.0, &QuadOptions::default().with_execution(Execution::Parallel)).unwrap();
        assert_eq!(a, b);
    }
}
