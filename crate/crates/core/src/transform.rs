//! Transport of dipole and quadrupole components between charts.
//!
//! Dipoles transform tensorially,
//! `γ̂^{cd} = (dτ/dτ̂) A^c_a A^d_b γ^{ab}`. Quadrupoles pick up a term built
//! from the chart's second derivatives:
//!
//! ```text
//! γ̂^{def} = (dτ/dτ̂) (A^d_a A^e_b A^f_c γ^{abc} + P^{de} V^f + P^{df} V^e)
//! P^{de}(τ) = κ0^{de} + ∫_{τ0}^{τ} γ^{abc} (A^d_c A^e_{ab} − A^e_c A^d_{ab}) dτ'
//! ```
//!
//! where `V = d/dτ x̂(C(τ))`. `P` is integrated once with adaptive quadrature
//! and stored as a [`CumulativeIntegral`]; the transported components are
//! evaluated lazily at any `τ̂`, together with their first two derivatives.

use std::sync::Arc;

use crate::chart::{Chart, SINGULAR_DET};
use crate::error::{Error, Result};
use crate::expr::ExprSet;
use crate::multipole::{ComponentSource, Components, DipoleComponents, QuadrupoleComponents};
use crate::quadrature::{node_grid, CumulativeIntegral, QuadOptions};
use crate::tensor::{self, antisymmetry_defect, ComponentArray, Mat4, Tensor3, Vec4};
use crate::worldline::{Reparametrization, Worldline, CHECK_PANELS};

/// Independent entries `(d, e)`, `d < e`, of an antisymmetric 4x4 array.
pub const PAIRS: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

const BINOM: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [1.0, 2.0, 1.0]];

/// `out_k = Σ_{i+j=k} C(k,i) f(x_i, y_j)` for `k < n`.
fn series_product<X, Y, Z: ComponentArray>(xs: &[X], ys: &[Y], n: usize, f: impl Fn(&X, &Y) -> Z) -> Vec<Z> {
    (0..n)
        .map(|k| {
            let mut out = Z::zero();
            for i in 0..=k {
                let term = f(&xs[i], &ys[k - i]);
                for (o, t) in out.flat_mut().iter_mut().zip(term.flat()) {
                    *o += BINOM[k][i] * t;
                }
            }
            out
        })
        .collect()
}

/// Replaces index `slot` of `t` by `a[new][old]`.
fn contract_slot(a: &Mat4, t: &Tensor3, slot: usize) -> Tensor3 {
    let mut out = Tensor3::zero();
    for i in 0..4 {
        for j in 0..4 {
            for k in 0..4 {
                out[i][j][k] = (0..4)
                    .map(|x| match slot {
                        0 => a[i][x] * t[x][j][k],
                        1 => a[j][x] * t[i][x][k],
                        _ => a[k][x] * t[i][j][x],
                    })
                    .sum();
            }
        }
    }
    out
}

fn push3_series(a: &[Mat4], g: &[Tensor3], n: usize) -> Vec<Tensor3> {
    let mut s = g[..n].to_vec();
    for slot in [2, 1, 0] {
        s = series_product(a, &s, n, |x, y| contract_slot(x, y, slot));
    }
    s
}

fn push2_series(a: &[Mat4], g: &[Mat4], n: usize) -> Vec<Mat4> {
    let half = series_product(a, g, n, tensor::mat_mul);
    series_product(&half, a, n, |h, a| {
        std::array::from_fn(|c| std::array::from_fn(|d| (0..4).map(|b| h[c][b] * a[d][b]).sum()))
    })
}

/// `S^{de} = γ^{abc} (A^d_c A^e_{ab} − A^e_c A^d_{ab})`, as a series.
fn integrand_series(g: &[Tensor3], a: &[Mat4], h: &[Tensor3], n: usize) -> Vec<Mat4> {
    // W^{ce} = γ^{abc} A^e_{ab}
    let w = series_product(g, h, n, |g, h| {
        let mut w = Mat4::zero();
        for c in 0..4 {
            for e in 0..4 {
                let mut s = 0.0;
                for x in 0..4 {
                    for y in 0..4 {
                        s += g[x][y][c] * h[e][x][y];
                    }
                }
                w[c][e] = s;
            }
        }
        w
    });
    series_product(a, &w, n, |a, w| {
        let aw = tensor::mat_mul(a, w);
        std::array::from_fn(|d| std::array::from_fn(|e| aw[d][e] - aw[e][d]))
    })
}

/// Chart derivatives along a worldline as functions of `τ`.
struct Along {
    jacobian: ExprSet,
    hessian: ExprSet,
    velocity: ExprSet,
}

struct AlongSeries {
    a: Vec<Mat4>,
    h: Vec<Tensor3>,
    v: Vec<Vec4>,
}

impl Along {
    fn new(chart: &Chart, worldline: &Worldline) -> Self {
        let subs = worldline.components().to_vec();
        let jac = chart.jacobian_exprs();
        let jacobian = ExprSet::new((0..16).map(|i| jac[i / 4][i % 4].substitute(&subs)).collect());
        let hessian = ExprSet::new(
            (0..64)
                .map(|i| jac[i / 16][(i / 4) % 4].diff(i % 4).substitute(&subs))
                .collect(),
        );
        let velocity = ExprSet::new(
            chart
                .forward()
                .iter()
                .map(|f| f.substitute(&subs).diff(0))
                .collect(),
        );
        Self { jacobian, hessian, velocity }
    }

    fn taylor<A: ComponentArray>(set: &ExprSet, tau: f64, n: usize) -> Result<Vec<A>> {
        let x = [tau, 0.0, 0.0, 0.0];
        if n <= 1 {
            return Ok(vec![A::from_flat(&set.eval(&x)?)]);
        }
        let j = set.jet_tau(tau)?;
        Ok((0..n)
            .map(|k| {
                let mut a = A::zero();
                for (o, t) in a.flat_mut().iter_mut().zip(&j) {
                    *o = t[k];
                }
                a
            })
            .collect())
    }

    /// Series of length `n` for `A` and `V`, `n - 1` for the Hessian.
    fn series(&self, tau: f64, n: usize, with_hessian: bool) -> Result<AlongSeries> {
        let a = Self::taylor::<Mat4>(&self.jacobian, tau, n)?;
        let h = if with_hessian { Self::taylor::<Tensor3>(&self.hessian, tau, n.max(1))? } else { Vec::new() };
        let v = Self::taylor::<Vec4>(&self.velocity, tau, n)?;
        Ok(AlongSeries { a, h, v })
    }
}

fn component_series<A: ComponentArray>(c: &Components<A>, tau: f64, n: usize) -> Result<Vec<A>> {
    if n > c.max_order() + 1 {
        return Err(Error::NotDifferentiable);
    }
    let mut buf = vec![0.0; n * A::LEN];
    c.source().eval(tau, n, &mut buf)?;
    Ok((0..n).map(|k| A::from_flat(&buf[k * A::LEN..])).collect())
}

/// Parameter map `τ̂ -> τ` with three derivatives (the identity if absent).
fn param_series(rep: &Option<Reparametrization>, tau_hat: f64) -> Result<[f64; 4]> {
    match rep {
        Some(r) => r.series(tau_hat),
        None => Ok([tau_hat, 1.0, 0.0, 0.0]),
    }
}

/// Series of `τ̂ -> τ'(τ̂) X(τ(τ̂))` from the series of `X` in `τ`.
fn with_rate<A: ComponentArray>(xs: &[A], t: [f64; 4], n: usize) -> Vec<A> {
    let (r, r1, r2) = (t[1], t[2], t[3]);
    // derivatives of X∘τ
    let comp: Vec<A> = (0..n)
        .map(|k| {
            let mut o = A::zero();
            for (i, v) in o.flat_mut().iter_mut().enumerate() {
                *v = match k {
                    0 => xs[0].flat()[i],
                    1 => xs[1].flat()[i] * r,
                    _ => xs[2].flat()[i] * r * r + xs[1].flat()[i] * r1,
                };
            }
            o
        })
        .collect();
    let rs = [r, r1, r2];
    series_product(&rs, &comp, n, |s, x| {
        let mut o = *x;
        o.flat_mut().iter_mut().for_each(|v| *v *= s);
        o
    })
}

fn check_along(chart: &Chart, worldline: &Worldline) -> Result<()> {
    let (a, b) = worldline.interval();
    for tau in node_grid(a, b, CHECK_PANELS).into_iter().chain([a, b]) {
        let p = worldline.point(tau)?;
        let jac = chart.jacobian_at(&p)?;
        let d = tensor::det(&jac);
        if d.abs() < SINGULAR_DET {
            return Err(Error::SingularJacobian { chart: chart.name().to_string(), det: d, point: p });
        }
    }
    Ok(())
}

fn check_rep(rep: &Option<Reparametrization>, worldline: &Worldline) -> Result<()> {
    if let Some(r) = rep {
        worldline.reparametrize(r)?;
    }
    Ok(())
}

/// Options for [`transform_quadrupole`].
#[derive(Clone, Copy, Debug)]
pub struct TransformOptions {
    pub quad: QuadOptions,
    /// Integration constant added to `P`; must be antisymmetric.
    pub kappa0: Mat4,
}

impl Default for TransformOptions {
    fn default() -> Self {
        Self { quad: QuadOptions::default(), kappa0: Mat4::zero() }
    }
}

struct DipoleTransport {
    gamma: DipoleComponents,
    along: Along,
    rep: Option<Reparametrization>,
}

impl ComponentSource for DipoleTransport {
    fn len(&self) -> usize {
        16
    }

    fn max_order(&self) -> usize {
        self.gamma.max_order().min(2)
    }

    fn eval(&self, tau_hat: f64, orders: usize, out: &mut [f64]) -> Result<()> {
        let t = param_series(&self.rep, tau_hat)?;
        let tau = t[0];
        let g = component_series(&self.gamma, tau, orders)?;
        let s = self.along.series(tau, orders, false)?;
        let x = push2_series(&s.a, &g, orders);
        for (k, m) in with_rate(&x, t, orders).iter().enumerate() {
            out[k * 16..(k + 1) * 16].copy_from_slice(m.flat());
        }
        Ok(())
    }
}

/// `γ̂^{cd}(τ̂) = (dτ/dτ̂) A^c_a A^d_b γ^{ab}(τ(τ̂))`.
pub fn transform_dipole(
    gamma: &DipoleComponents,
    chart: &Chart,
    worldline: &Worldline,
    rep: Option<&Reparametrization>,
) -> Result<DipoleComponents> {
    check_along(chart, worldline)?;
    let rep = rep.cloned();
    check_rep(&rep, worldline)?;
    Ok(DipoleComponents::from_source(Arc::new(DipoleTransport {
        gamma: gamma.clone(),
        along: Along::new(chart, worldline),
        rep,
    })))
}

struct Shared {
    gamma: QuadrupoleComponents,
    along: Along,
    rep: Option<Reparametrization>,
    integral: CumulativeIntegral,
    kappa0: Mat4,
}

impl Shared {
    /// `P` and its first `n - 1` derivatives at `τ`.
    fn p_series(&self, tau: f64, n: usize, g: &[Tensor3], s: &AlongSeries) -> Result<Vec<Mat4>> {
        let mut packed = [0.0; 6];
        self.integral.eval(tau, &mut packed)?;
        let mut p = self.kappa0;
        for (k, &(d, e)) in PAIRS.iter().enumerate() {
            p[d][e] += packed[k];
            p[e][d] -= packed[k];
        }
        let mut out = vec![p];
        if n > 1 {
            out.extend(integrand_series(g, &s.a, &s.h, n - 1));
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Part {
    Full,
    Tensorial,
    Dipole,
    P,
}

struct QuadrupoleTransport {
    shared: Arc<Shared>,
    part: Part,
}

impl ComponentSource for QuadrupoleTransport {
    fn len(&self) -> usize {
        match self.part {
            Part::Full | Part::Tensorial => 64,
            Part::Dipole | Part::P => 16,
        }
    }

    fn max_order(&self) -> usize {
        self.shared.gamma.max_order().min(2)
    }

    fn eval(&self, tau_hat: f64, orders: usize, out: &mut [f64]) -> Result<()> {
        let sh = &self.shared;
        let n = orders;
        let t = match self.part {
            Part::P => [tau_hat, 1.0, 0.0, 0.0],
            _ => param_series(&sh.rep, tau_hat)?,
        };
        let tau = t[0];
        let write = |k: usize, vals: &[f64], out: &mut [f64]| {
            let len = vals.len();
            out[k * len..(k + 1) * len].copy_from_slice(vals);
        };
        match self.part {
            Part::Dipole => {
                let g = component_series(&sh.gamma, tau, n)?;
                let s = sh.along.series(tau, n, true)?;
                let ps = integrand_series(&g, &s.a, &s.h, n);
                for (k, m) in with_rate(&ps, t, n).iter().enumerate() {
                    write(k, m.flat(), out);
                }
            }
            Part::P => {
                let need_h = n > 1;
                let g = component_series(&sh.gamma, tau, n.saturating_sub(1).max(1))?;
                let s = sh.along.series(tau, n.saturating_sub(1).max(1), need_h)?;
                for (k, m) in sh.p_series(tau, n, &g, &s)?.iter().enumerate() {
                    write(k, m.flat(), out);
                }
            }
            Part::Full | Part::Tensorial => {
                let g = component_series(&sh.gamma, tau, n)?;
                let full = self.part == Part::Full;
                let s = sh.along.series(tau, n, full && n > 1)?;
                let mut x = push3_series(&s.a, &g, n);
                if full {
                    let p = sh.p_series(tau, n, &g, &s)?;
                    let pv = series_product(&p, &s.v, n, |p, v| {
                        let mut o = Tensor3::zero();
                        for d in 0..4 {
                            for e in 0..4 {
                                for f in 0..4 {
                                    o[d][e][f] = p[d][e] * v[f] + p[d][f] * v[e];
                                }
                            }
                        }
                        o
                    });
                    for (xk, pk) in x.iter_mut().zip(&pv) {
                        for (a, b) in xk.flat_mut().iter_mut().zip(pk.flat()) {
                            *a += b;
                        }
                    }
                }
                for (k, m) in with_rate(&x, t, n).iter().enumerate() {
                    write(k, m.flat(), out);
                }
            }
        }
        Ok(())
    }
}

/// Outcome of [`transform_quadrupole`].
#[derive(Clone)]
pub struct TransportResult {
    shared: Arc<Shared>,
    worldline_hat: Worldline,
    gamma_hat: QuadrupoleComponents,
}

impl std::fmt::Debug for TransportResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TransportResult")
            .field("worldline_hat", &self.worldline_hat)
            .field("kappa0", &self.shared.kappa0)
            .field("panels", &self.shared.integral.panel_count())
            .finish()
    }
}

impl TransportResult {
    /// Components in the new chart, as functions of `τ̂`.
    pub fn gamma_hat(&self) -> &QuadrupoleComponents {
        &self.gamma_hat
    }

    /// The worldline in the new chart and parameter.
    pub fn worldline_hat(&self) -> &Worldline {
        &self.worldline_hat
    }

    pub fn kappa0(&self) -> Mat4 {
        self.shared.kappa0
    }

    /// `P` as a function of the original parameter `τ`.
    pub fn p(&self) -> Components<Mat4> {
        self.part(Part::P)
    }

    pub fn p_at(&self, tau: f64) -> Result<Mat4> {
        self.p().at(tau)
    }

    /// The integrand of `P` at `τ`.
    pub fn p_rate_at(&self, tau: f64) -> Result<Mat4> {
        self.p().rate_at(tau)
    }

    /// `(dτ/dτ̂) A A A γ`, the part of `γ̂` that transforms as a tensor.
    pub fn tensorial_part(&self) -> QuadrupoleComponents {
        self.part(Part::Tensorial)
    }

    /// The dipole equivalent to the `P` terms of `γ̂`: `d/dτ̂ P(τ(τ̂))`.
    pub fn dipole_part(&self) -> DipoleComponents {
        self.part(Part::Dipole)
    }

    pub fn quadrature_error_estimate(&self) -> f64 {
        self.shared.integral.error_estimate()
    }

    pub fn nodes_used(&self) -> usize {
        self.shared.integral.nodes_used()
    }

    fn part<A: ComponentArray>(&self, part: Part) -> Components<A> {
        Components::from_source(Arc::new(QuadrupoleTransport { shared: self.shared.clone(), part }))
    }
}

/// Transports quadrupole components through `chart`, optionally changing the
/// parameter with `rep`.
pub fn transform_quadrupole(
    gamma: &QuadrupoleComponents,
    chart: &Chart,
    worldline: &Worldline,
    rep: Option<&Reparametrization>,
    opts: &TransformOptions,
) -> Result<TransportResult> {
    let (r, idx) = antisymmetry_defect(&opts.kappa0);
    if r > 0.0 {
        return Err(Error::Symmetry { indices: idx.to_vec(), tau: f64::NAN, residual: r });
    }
    gamma.check_symmetry_on(worldline, 1e-10)?;
    check_along(chart, worldline)?;
    let rep = rep.cloned();
    check_rep(&rep, worldline)?;
    let mut worldline_hat = worldline.push_through_chart(chart)?;
    if let Some(r) = &rep {
        worldline_hat = worldline_hat.reparametrize(r)?;
    }
    let along = Along::new(chart, worldline);
    let (a, b) = worldline.interval();
    let integral = CumulativeIntegral::build(
        6,
        |tau, out| {
            let g = component_series(gamma, tau, 1)?;
            let s = along.series(tau, 1, true)?;
            let m = integrand_series(&g, &s.a, &s.h, 1)[0];
            for (k, &(d, e)) in PAIRS.iter().enumerate() {
                out[k] = m[d][e];
            }
            Ok(())
        },
        a,
        b,
        &opts.quad,
    )?;
    let shared = Arc::new(Shared { gamma: gamma.clone(), along, rep, integral, kappa0: opts.kappa0 });
    let gamma_hat = Components::from_source(Arc::new(QuadrupoleTransport { shared: shared.clone(), part: Part::Full }));
    Ok(TransportResult { shared, worldline_hat, gamma_hat })
}

/// Antisymmetric array with `value` in slot `(d, e)` and `-value` in `(e, d)`.
pub fn antisymmetric(entries: &[((usize, usize), f64)]) -> Mat4 {
    let mut m = Mat4::zero();
    for &((d, e), v) in entries {
        m[d][e] += v;
        m[e][d] -= v;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chart::{cylindrical_pair, linear_pair, lorentz_boost};
    use crate::expr::{parse, Expr, VarNames};
    use crate::multipole::{make_static_dipole, Components};
    use approx::assert_abs_diff_eq;

    fn worked_example(kappa: f64) -> QuadrupoleComponents {
        let mut t = Tensor3::zero();
        t[2][1][1] = 2.0 * kappa;
        t[1][2][1] = -kappa;
        t[1][1][2] = -kappa;
        QuadrupoleComponents::constant(&t)
    }

    #[test]
    fn cylindrical_example_produces_a_dipole() {
        let pair = cylindrical_pair();
        let c = Worldline::static_at([1.0, 0.3, 0.0], 0.0, 10.0).unwrap();
        let opts = TransformOptions { kappa0: antisymmetric(&[((1, 2), 0.5)]), ..Default::default() };
        let tr = transform_quadrupole(&worked_example(2.0), &pair.forward, &c, None, &opts).unwrap();
        for i in 0..=10 {
            let tau = i as f64;
            let p = tr.p_at(tau).unwrap();
            assert_abs_diff_eq!(p[1][2], 2.0 * tau + 0.5, epsilon = 1e-10);
            assert_abs_diff_eq!(p[2][1], -(2.0 * tau + 0.5), epsilon = 1e-10);
            let g = tr.gamma_hat().at(tau).unwrap();
            assert_abs_diff_eq!(g[1][2][0], 2.0 * tau + 0.5, epsilon = 1e-10);
            assert_abs_diff_eq!(g[1][0][2], 2.0 * tau + 0.5, epsilon = 1e-10);
            assert_abs_diff_eq!(g[0][1][2], 0.0, epsilon = 1e-12);
            let d = tr.dipole_part().at(tau).unwrap();
            assert_abs_diff_eq!(d[1][2], 2.0, epsilon = 1e-12);
            assert_abs_diff_eq!(d[2][1], -2.0, epsilon = 1e-12);
        }
        assert!(tr.gamma_hat().check_symmetry(&[0.5, 3.0, 9.5], 1e-10).is_ok());
    }

    #[test]
    fn linear_charts_are_tensorial() {
        let m: Mat4 = [[1.0, 0.2, 0.0, 0.1], [0.0, 1.1, -0.3, 0.0], [0.2, 0.0, 0.9, 0.0], [0.0, 0.1, 0.0, 1.0]];
        let pair = linear_pair(&m, &[0.0; 4]).unwrap();
        let c = Worldline::new(
            ["tau", "0.2*sin(tau)", "0.1*tau", "0"].map(|s| parse(s, VarNames::Tau).unwrap()),
            0.0,
            3.0,
        )
        .unwrap();
        let tr = transform_quadrupole(&worked_example(1.0), &pair.forward, &c, None, &Default::default()).unwrap();
        let g = worked_example(1.0).at(0.0).unwrap();
        let expect = tensor::push_forward3(&m, &g);
        for tau in [0.0, 1.0, 2.9] {
            assert_eq!(tr.p_at(tau).unwrap(), Mat4::zero());
            let got = tr.gamma_hat().at(tau).unwrap();
            for (x, y) in got.flat().iter().zip(expect.flat()) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-14);
            }
        }
        assert_eq!(tr.dipole_part().at(1.0).unwrap(), Mat4::zero());
    }

    #[test]
    fn rotation_moves_an_electric_dipole() {
        let m: Mat4 = [[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, -1.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0]];
        let pair = linear_pair(&m, &[0.0; 4]).unwrap();
        let c = Worldline::adapted(0.0, 1.0).unwrap();
        let d = transform_dipole(&make_static_dipole([1.0, 0.0, 0.0], [0.0; 3]), &pair.forward, &c, None).unwrap();
        let g = d.at(0.5).unwrap();
        assert_abs_diff_eq!(g[0][2], 1.0);
        assert_abs_diff_eq!(g[0][1], 0.0);
    }

    #[test]
    fn boosted_electric_dipole_gains_magnetic_part() {
        let v = 0.6;
        let gam = 1.0 / (1.0_f64 - v * v).sqrt();
        let boost = lorentz_boost(v).unwrap().forward;
        let c = Worldline::adapted(0.0, 1.0).unwrap();
        let d = transform_dipole(&make_static_dipole([0.0, 1.0, 0.0], [0.0; 3]), &boost, &c, None).unwrap();
        let g = d.at(0.5).unwrap();
        // γ̂^{cd} = Λ^c_a Λ^d_b γ^{ab} with γ^{02} = 1
        assert_abs_diff_eq!(g[0][2], gam, epsilon = 1e-14);
        assert_abs_diff_eq!(g[1][2], gam * v, epsilon = 1e-14);
    }

    #[test]
    fn derivatives_of_transported_components_match_difference_quotients() {
        let pair = cylindrical_pair();
        let c = Worldline::new(
            ["tau", "1.2 + 0.1*sin(tau)", "0.4*cos(0.5*tau)", "0.2*tau"].map(|s| parse(s, VarNames::Tau).unwrap()),
            0.0,
            4.0,
        )
        .unwrap();
        let mut e = vec![Expr::zero(); 64];
        let tau = Expr::tau();
        let f = &tau * &tau * 0.1 + 1.0;
        e[tensor::flat_index3(2, 1, 1)] = f.clone() * 2.0;
        e[tensor::flat_index3(1, 2, 1)] = -f.clone();
        e[tensor::flat_index3(1, 1, 2)] = -f;
        let g = Components::from_exprs(e).unwrap();
        let rep = Reparametrization::new(parse("tau + 0.25*tau^2", VarNames::Tau).unwrap(), 0.0, 20f64.sqrt() - 2.0).unwrap();
        let tr = transform_quadrupole(&g, &pair.forward, &c, Some(&rep), &Default::default()).unwrap();
        let t0 = 1.1;
        let h = 1e-4;
        let [v, d1, d2] = tr.gamma_hat().series(t0).unwrap();
        let vp = tr.gamma_hat().at(t0 + h).unwrap();
        let vm = tr.gamma_hat().at(t0 - h).unwrap();
        for i in 0..64 {
            let fd1 = (vp.flat()[i] - vm.flat()[i]) / (2.0 * h);
            let fd2 = (vp.flat()[i] - 2.0 * v.flat()[i] + vm.flat()[i]) / (h * h);
            assert_abs_diff_eq!(d1.flat()[i], fd1, epsilon = 1e-6);
            assert_abs_diff_eq!(d2.flat()[i], fd2, epsilon = 1e-4);
        }
    }

    #[test]
    fn rejects_bad_input() {
        let c = Worldline::adapted(0.0, 1.0).unwrap();
        let mut t = Tensor3::zero();
        t[1][2][1] = 1.0;
        let bad = QuadrupoleComponents::constant(&t);
        let pair = cylindrical_pair();
        assert!(matches!(
            transform_quadrupole(&bad, &Chart::identity(), &c, None, &Default::default()),
            Err(Error::Symmetry { .. })
        ));
        let on_axis = Worldline::static_at([0.0, 0.0, 0.0], 0.0, 1.0).unwrap();
        assert!(transform_quadrupole(&worked_example(1.0), &pair.forward, &on_axis, None, &Default::default()).is_err());
        let opts = TransformOptions { kappa0: [[1.0; 4]; 4], ..Default::default() };
        assert!(transform_quadrupole(&worked_example(1.0), &Chart::identity(), &c, None, &opts).is_err());
    }
}
