//! Monopole, dipole and quadrupole component functions on a worldline.
//!
//! Components are functions of the worldline parameter. They are usually
//! expression trees, but transported components carry a numerically
//! integrated term and implement [`ComponentSource`] directly. Every source
//! can report its value and, up to [`ComponentSource::max_order`], its
//! derivatives in the parameter.

use std::fmt;
use std::marker::PhantomData;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::expr::{Expr, ExprSet};
use crate::quadrature::node_grid;
use crate::tensor::{
    self, antisymmetry_defect, flat_index2, flat_index3, quadrupole_defect, ComponentArray, Mat4, Tensor3,
};
use crate::worldline::Worldline;
pub use crate::zeta::{gamma_from_zeta, zeta_from_gamma, AdaptedCoefficients, IntegrationConstants};

/// A vector of functions of one parameter with derivatives.
pub trait ComponentSource: Send + Sync {
    fn len(&self) -> usize;

    /// Highest derivative order [`ComponentSource::eval`] can produce.
    fn max_order(&self) -> usize;

    /// Writes derivatives `0..orders` of every component, order-major:
    /// `out[k * len + i]` is the `k`-th derivative of component `i`.
    fn eval(&self, tau: f64, orders: usize, out: &mut [f64]) -> Result<()>;

    fn exprs(&self) -> Option<&[Expr]> {
        None
    }
}

struct ExprSource {
    set: ExprSet,
}

impl ComponentSource for ExprSource {
    fn len(&self) -> usize {
        self.set.len()
    }

    fn max_order(&self) -> usize {
        2
    }

    fn eval(&self, tau: f64, orders: usize, out: &mut [f64]) -> Result<()> {
        let n = self.set.len();
        match orders {
            0 => Ok(()),
            1 => self.set.eval_into(&[tau, 0.0, 0.0, 0.0], &mut out[..n]),
            2 | 3 => {
                let j = self.set.jet_tau(tau)?;
                for (i, t) in j.iter().enumerate() {
                    for k in 0..orders {
                        out[k * n + i] = t[k];
                    }
                }
                Ok(())
            }
            _ => Err(Error::NotDifferentiable),
        }
    }

    fn exprs(&self) -> Option<&[Expr]> {
        Some(self.set.exprs())
    }
}

/// Derivative of another source.
struct Shifted {
    inner: Arc<dyn ComponentSource>,
    shift: usize,
}

impl ComponentSource for Shifted {
    fn len(&self) -> usize {
        self.inner.len()
    }

    fn max_order(&self) -> usize {
        self.inner.max_order() - self.shift
    }

    fn eval(&self, tau: f64, orders: usize, out: &mut [f64]) -> Result<()> {
        let n = self.len();
        let mut buf = vec![0.0; (orders + self.shift) * n];
        self.inner.eval(tau, orders + self.shift, &mut buf)?;
        out[..orders * n].copy_from_slice(&buf[self.shift * n..]);
        Ok(())
    }
}

struct Combination {
    terms: Vec<(f64, Arc<dyn ComponentSource>)>,
    len: usize,
}

impl ComponentSource for Combination {
    fn len(&self) -> usize {
        self.len
    }

    fn max_order(&self) -> usize {
        self.terms.iter().map(|t| t.1.max_order()).min().unwrap_or(usize::MAX)
    }

    fn eval(&self, tau: f64, orders: usize, out: &mut [f64]) -> Result<()> {
        let m = orders * self.len;
        out[..m].iter_mut().for_each(|v| *v = 0.0);
        let mut buf = vec![0.0; m];
        for (s, src) in &self.terms {
            src.eval(tau, orders, &mut buf)?;
            for (o, b) in out[..m].iter_mut().zip(&buf) {
                *o += s * b;
            }
        }
        Ok(())
    }
}

/// Parameter dependent component array of type `A`.
pub struct Components<A: ComponentArray> {
    src: Arc<dyn ComponentSource>,
    _kind: PhantomData<A>,
}

impl<A: ComponentArray> Clone for Components<A> {
    fn clone(&self) -> Self {
        Self { src: self.src.clone(), _kind: PhantomData }
    }
}

impl<A: ComponentArray> fmt::Debug for Components<A> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.exprs() {
            Some(e) => {
                let nz = e.iter().filter(|x| !x.is_zero()).count();
                write!(f, "Components({} entries, {nz} nonzero expressions)", A::LEN)
            }
            None => write!(f, "Components({} entries, numeric)", A::LEN),
        }
    }
}

pub type DipoleComponents = Components<Mat4>;
pub type QuadrupoleComponents = Components<Tensor3>;

impl<A: ComponentArray> Components<A> {
    /// From `A::LEN` expressions in `τ`, in flat row-major order.
    pub fn from_exprs(exprs: Vec<Expr>) -> Result<Self> {
        if exprs.len() != A::LEN {
            return Err(Error::InvalidParameters(format!(
                "expected {} component expressions, got {}",
                A::LEN,
                exprs.len()
            )));
        }
        if let Some(i) = (1..4).find(|&i| exprs.iter().any(|e| e.depends_on(i))) {
            return Err(Error::InvalidParameters(format!(
                "component functions may only depend on τ, found variable x{i}"
            )));
        }
        Ok(Self::from_source(Arc::new(ExprSource { set: ExprSet::new(exprs) })))
    }

    pub fn from_source(src: Arc<dyn ComponentSource>) -> Self {
        assert_eq!(src.len(), A::LEN, "source length does not match the component array");
        Self { src, _kind: PhantomData }
    }

    pub fn constant(value: &A) -> Self {
        Self::from_exprs(value.flat().iter().map(|&v| Expr::constant(v)).collect())
            .expect("constant expressions")
    }

    pub fn zero() -> Self {
        Self::constant(&A::zero())
    }

    pub fn source(&self) -> &Arc<dyn ComponentSource> {
        &self.src
    }

    pub fn exprs(&self) -> Option<&[Expr]> {
        self.src.exprs()
    }

    pub fn max_order(&self) -> usize {
        self.src.max_order()
    }

    pub fn at(&self, tau: f64) -> Result<A> {
        let mut out = A::zero();
        self.src.eval(tau, 1, out.flat_mut())?;
        Ok(out)
    }

    /// Value with its first and second derivatives.
    pub fn series(&self, tau: f64) -> Result<[A; 3]> {
        if self.src.max_order() < 2 {
            return Err(Error::NotDifferentiable);
        }
        let mut buf = vec![0.0; 3 * A::LEN];
        self.src.eval(tau, 3, &mut buf)?;
        Ok(std::array::from_fn(|k| A::from_flat(&buf[k * A::LEN..])))
    }

    /// Value and first derivative.
    pub fn with_rate(&self, tau: f64) -> Result<[A; 2]> {
        if self.src.max_order() < 1 {
            return Err(Error::NotDifferentiable);
        }
        let mut buf = vec![0.0; 2 * A::LEN];
        self.src.eval(tau, 2, &mut buf)?;
        Ok(std::array::from_fn(|k| A::from_flat(&buf[k * A::LEN..])))
    }

    pub fn rate_at(&self, tau: f64) -> Result<A> {
        Ok(self.with_rate(tau)?[1])
    }

    /// Componentwise derivative. Symbolic when the components are expressions.
    pub fn derivative(&self) -> Result<Self> {
        if let Some(e) = self.exprs() {
            return Self::from_exprs(e.iter().map(|x| x.diff(0)).collect());
        }
        if self.src.max_order() == 0 {
            return Err(Error::NotDifferentiable);
        }
        Ok(Self::from_source(Arc::new(Shifted { inner: self.src.clone(), shift: 1 })))
    }

    /// `Σ s_i c_i`, symbolic if every term is.
    pub fn combine(terms: &[(f64, &Self)]) -> Self {
        if terms.iter().all(|(_, c)| c.exprs().is_some()) {
            let exprs = (0..A::LEN)
                .map(|i| {
                    Expr::sum(terms.iter().map(|(s, c)| Expr::constant(*s) * c.exprs().unwrap()[i].clone()))
                })
                .collect();
            return Self::from_exprs(exprs).expect("same length");
        }
        Self::from_source(Arc::new(Combination {
            terms: terms.iter().map(|(s, c)| (*s, c.src.clone())).collect(),
            len: A::LEN,
        }))
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self::combine(&[(s, self)])
    }

    /// Largest absolute entry over the given parameter values.
    pub fn max_abs(&self, taus: &[f64]) -> Result<f64> {
        let mut m: f64 = 0.0;
        for &t in taus {
            m = m.max(self.at(t)?.max_abs());
        }
        Ok(m)
    }
}

/// Arrays subject to index symmetry constraints.
pub trait Constrained: ComponentArray {
    /// Largest violation and the indices where it occurs.
    fn defect(&self) -> (f64, Vec<usize>);
}

impl Constrained for Mat4 {
    fn defect(&self) -> (f64, Vec<usize>) {
        let (r, i) = antisymmetry_defect(self);
        (r, i.to_vec())
    }
}

impl Constrained for Tensor3 {
    fn defect(&self) -> (f64, Vec<usize>) {
        let (r, i) = quadrupole_defect(self);
        (r, i.to_vec())
    }
}

impl<A: Constrained> Components<A> {
    /// Fails with the first sample whose violation exceeds `tol` times the
    /// sample's largest entry (or `tol` if that is below one).
    pub fn check_symmetry(&self, taus: &[f64], tol: f64) -> Result<()> {
        for &tau in taus {
            let v = self.at(tau)?;
            let (residual, indices) = v.defect();
            if residual > tol * v.max_abs().max(1.0) {
                return Err(Error::Symmetry { indices, tau, residual });
            }
        }
        Ok(())
    }

    pub fn check_symmetry_on(&self, worldline: &Worldline, tol: f64) -> Result<()> {
        let (a, b) = worldline.interval();
        self.check_symmetry(&node_grid(a, b, 4), tol)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Monopole {
    pub q: f64,
}

/// Sum of a monopole, a dipole and a quadrupole on one worldline.
#[derive(Clone, Debug, Default)]
pub struct Bundle {
    pub monopole: Option<Monopole>,
    pub dipole: Option<DipoleComponents>,
    pub quadrupole: Option<QuadrupoleComponents>,
}

impl Bundle {
    pub fn monopole(q: f64) -> Self {
        Self { monopole: Some(Monopole { q }), ..Default::default() }
    }

    pub fn dipole(d: DipoleComponents) -> Self {
        Self { dipole: Some(d), ..Default::default() }
    }

    pub fn quadrupole(q: QuadrupoleComponents) -> Self {
        Self { quadrupole: Some(q), ..Default::default() }
    }

    /// Largest component magnitude over the given parameter values.
    pub fn scale(&self, taus: &[f64]) -> Result<f64> {
        let mut s = self.monopole.map_or(0.0, |m| m.q.abs());
        if let Some(d) = &self.dipole {
            s = s.max(d.max_abs(taus)?);
        }
        if let Some(q) = &self.quadrupole {
            s = s.max(q.max_abs(taus)?);
        }
        Ok(s)
    }
}

fn c(v: f64) -> Expr {
    Expr::constant(v)
}

/// `γ^{0μ} = p_ED^μ`, `γ^{μν} = ε^{μνσ} p_MD_σ`, antisymmetric.
pub fn make_static_dipole(p_ed: [f64; 3], p_md: [f64; 3]) -> DipoleComponents {
    let mut g = Mat4::zero();
    for mu in 1..4 {
        g[0][mu] = p_ed[mu - 1];
        g[mu][0] = -p_ed[mu - 1];
        for nu in 1..4 {
            g[mu][nu] = (1..4).map(|s| tensor::levi_civita(mu, nu, s) * p_md[s - 1]).sum();
        }
    }
    DipoleComponents::constant(&g)
}

/// Spatial toroidal pattern projected onto the quadrupole constraints.
#[derive(Clone, Debug)]
pub struct Toroidal {
    pub components: QuadrupoleComponents,
    pub raw: Tensor3,
    pub projected: Tensor3,
    /// Norm of the part removed by the projection.
    pub projection_norm: f64,
}

/// Starts from `T^ν δ^{μσ} + T^σ δ^{μν} − 2 T^σ δ^{νσ}` on spatial indices and
/// projects onto the constraint set.
pub fn make_toroidal_quadrupole(t: [f64; 3]) -> Toroidal {
    let d = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
    let mut raw = Tensor3::zero();
    for mu in 1..4 {
        for nu in 1..4 {
            for s in 1..4 {
                raw[mu][nu][s] = t[nu - 1] * d(mu, s) + t[s - 1] * d(mu, nu) - 2.0 * t[s - 1] * d(nu, s);
            }
        }
    }
    let projected = tensor::project_quadrupole(&raw);
    let removed: Vec<f64> = raw.flat().iter().zip(projected.flat()).map(|(a, b)| a - b).collect();
    Toroidal {
        components: QuadrupoleComponents::constant(&projected),
        raw,
        projected,
        projection_norm: tensor::norm(&removed),
    }
}

/// `γ^{ab} = w^a Ċ^b − w^b Ċ^a`.
pub fn make_electric_dipole(w: &[Expr; 4], worldline: &Worldline) -> DipoleComponents {
    let v = worldline.velocity_exprs();
    let exprs = (0..16)
        .map(|i| {
            let (a, b) = (i / 4, i % 4);
            &w[a] * &v[b] - &w[b] * &v[a]
        })
        .collect();
    DipoleComponents::from_exprs(exprs).expect("sixteen entries")
}

/// `γ^{abc} = Ċ^a (q^{bc} + q^{cb}) − Ċ^b q^{ac} − Ċ^c q^{ab}`.
pub fn make_electric_quadrupole(q: &[[Expr; 4]; 4], worldline: &Worldline) -> QuadrupoleComponents {
    let v = worldline.velocity_exprs();
    let exprs = (0..64)
        .map(|i| {
            let (a, b, cc) = (i / 16, (i / 4) % 4, i % 4);
            &v[a] * &(&q[b][cc] + &q[cc][b]) - &v[b] * &q[a][cc] - &v[cc] * &q[a][b]
        })
        .collect();
    QuadrupoleComponents::from_exprs(exprs).expect("sixty-four entries")
}

fn check_antisymmetric(p: &[[Expr; 4]; 4], worldline: &Worldline) -> Result<()> {
    let (a, b) = worldline.interval();
    for tau in node_grid(a, b, 2) {
        let m: Mat4 = {
            let mut m = Mat4::zero();
            for i in 0..4 {
                for j in 0..4 {
                    m[i][j] = p[i][j].eval_tau(tau)?;
                }
            }
            m
        };
        let (r, idx) = antisymmetry_defect(&m);
        if r > 1e-12 * m.max_abs().max(1.0) {
            return Err(Error::Symmetry { indices: idx.to_vec(), tau, residual: r });
        }
    }
    Ok(())
}

/// `γ^{abc} = p^{ab} Ċ^c + p^{ac} Ċ^b` for antisymmetric `p`.
pub fn embed_dipole_as_quadrupole(p: &[[Expr; 4]; 4], worldline: &Worldline) -> Result<QuadrupoleComponents> {
    check_antisymmetric(p, worldline)?;
    let v = worldline.velocity_exprs();
    let exprs = (0..64)
        .map(|i| {
            let (a, b, cc) = (i / 16, (i / 4) % 4, i % 4);
            &p[a][b] * &v[cc] + &p[a][cc] * &v[b]
        })
        .collect();
    QuadrupoleComponents::from_exprs(exprs)
}

/// The dipole `γ^{ab} = ṗ^{ab}` that an embedded `p` is equivalent to.
pub fn extract_dipole(p: &Components<Mat4>) -> Result<DipoleComponents> {
    p.derivative()
}

/// Expressions of a 4x4 array, for constructors that take one.
pub fn mat_exprs(m: &Mat4) -> [[Expr; 4]; 4] {
    std::array::from_fn(|i| std::array::from_fn(|j| c(m[i][j])))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ComponentKind {
    Dipole,
    Quadrupole,
    ElectricDipoleModGauge,
    ElectricQuadrupoleModGauge,
}

fn numerical_rank(m: DMatrix<f64>) -> usize {
    let sv = m.singular_values();
    let max = sv.iter().cloned().fold(0.0, f64::max);
    sv.iter().filter(|&&s| s > 1e-10 * max.max(1.0)).count()
}

/// Number of independent components of each kind at a fixed parameter value.
///
/// For dipoles and quadrupoles this is the nullity of the symmetry
/// constraints; for the electric forms it is the rank of the map from the
/// free vector (or matrix) to the components, which quotients out the gauge
/// directions. A generic timelike velocity is used.
pub fn component_rank(kind: ComponentKind) -> usize {
    let v = [1.0, 0.31, -0.17, 0.23];
    match kind {
        ComponentKind::Dipole => {
            let mut rows = Vec::new();
            for a in 0..4 {
                for b in a..4 {
                    let mut r = vec![0.0; 16];
                    r[flat_index2(a, b)] += 1.0;
                    r[flat_index2(b, a)] += 1.0;
                    rows.push(r);
                }
            }
            16 - numerical_rank(DMatrix::from_fn(rows.len(), 16, |i, j| rows[i][j]))
        }
        ComponentKind::Quadrupole => {
            let mut rows = Vec::new();
            for a in 0..4 {
                for b in 0..4 {
                    for cc in 0..4 {
                        let mut r = vec![0.0; 64];
                        r[flat_index3(a, b, cc)] += 1.0;
                        r[flat_index3(a, cc, b)] -= 1.0;
                        rows.push(r);
                        let mut r = vec![0.0; 64];
                        r[flat_index3(a, b, cc)] += 1.0;
                        r[flat_index3(b, cc, a)] += 1.0;
                        r[flat_index3(cc, a, b)] += 1.0;
                        rows.push(r);
                    }
                }
            }
            64 - numerical_rank(DMatrix::from_fn(rows.len(), 64, |i, j| rows[i][j]))
        }
        ComponentKind::ElectricDipoleModGauge => {
            // column k: image of w = e_k
            numerical_rank(DMatrix::from_fn(16, 4, |row, k| {
                let (a, b) = (row / 4, row % 4);
                let w = |i: usize| if i == k { 1.0 } else { 0.0 };
                w(a) * v[b] - w(b) * v[a]
            }))
        }
        ComponentKind::ElectricQuadrupoleModGauge => numerical_rank(DMatrix::from_fn(64, 16, |row, k| {
            let (a, b, cc) = (row / 16, (row / 4) % 4, row % 4);
            let q = |i: usize, j: usize| if 4 * i + j == k { 1.0 } else { 0.0 };
            v[a] * (q(b, cc) + q(cc, b)) - v[b] * q(a, cc) - v[cc] * q(a, b)
        })),
    }
}
