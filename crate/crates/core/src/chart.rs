//! Coordinate charts `x -> x̂(x)` with exact first and second derivatives.

use std::fmt;
use std::sync::{Arc, OnceLock};

use crate::error::{Error, Result};
use crate::expr::{Expr, ExprSet, VarNames};
use crate::jets::Jet2;
use crate::tensor::{self, Mat4, Tensor3, Vec4};

/// Below this `|det A|` a Jacobian is treated as singular.
pub const SINGULAR_DET: f64 = 1e-12;

/// A condition `expr > 0` that points of the chart domain must satisfy.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainRule {
    pub expr: Expr,
    pub description: String,
}

#[derive(Clone)]
pub struct Chart(Arc<Inner>);

struct Inner {
    name: String,
    forward: [Expr; 4],
    domain: Vec<DomainRule>,
    set: ExprSet,
    jacobian: OnceLock<[[Expr; 4]; 4]>,
}

impl fmt::Debug for Chart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let comps: Vec<String> = self
            .0
            .forward
            .iter()
            .map(|e| e.display(VarNames::Spacetime).to_string())
            .collect();
        f.debug_struct("Chart")
            .field("name", &self.0.name)
            .field("forward", &comps)
            .finish()
    }
}

impl Chart {
    pub fn new(name: impl Into<String>, forward: [Expr; 4]) -> Self {
        Self::with_domain(name, forward, Vec::new())
    }

    pub fn with_domain(name: impl Into<String>, forward: [Expr; 4], domain: Vec<DomainRule>) -> Self {
        let set = ExprSet::new(forward.to_vec());
        Chart(Arc::new(Inner {
            name: name.into(),
            forward,
            domain,
            set,
            jacobian: OnceLock::new(),
        }))
    }

    pub fn identity() -> Self {
        Self::new("identity", std::array::from_fn(Expr::var))
    }

    pub fn name(&self) -> &str {
        &self.0.name
    }

    pub fn forward(&self) -> &[Expr; 4] {
        &self.0.forward
    }

    pub fn domain(&self) -> &[DomainRule] {
        &self.0.domain
    }

    /// Renamed copy.
    pub fn named(&self, name: impl Into<String>) -> Self {
        Self::with_domain(name, self.0.forward.clone(), self.0.domain.clone())
    }

    pub fn check_domain(&self, x: &Vec4) -> Result<()> {
        for rule in &self.0.domain {
            let v = rule.expr.eval(x).map_err(|_| self.outside(rule, x))?;
            if !(v > 0.0) {
                return Err(self.outside(rule, x));
            }
        }
        Ok(())
    }

    fn outside(&self, rule: &DomainRule, x: &Vec4) -> Error {
        Error::OutsideChart {
            chart: self.0.name.clone(),
            rule: rule.description.clone(),
            point: *x,
        }
    }

    pub fn apply(&self, x: &Vec4) -> Result<Vec4> {
        self.check_domain(x)?;
        let v = self.0.set.eval(x)?;
        Ok([v[0], v[1], v[2], v[3]])
    }

    /// Value, gradient and Hessian of each output coordinate.
    pub fn jets(&self, x: &Vec4) -> Result<[Jet2; 4]> {
        self.check_domain(x)?;
        let j = self.0.set.jet(x)?;
        Ok([j[0], j[1], j[2], j[3]])
    }

    fn checked_jacobian(&self, jets: &[Jet2; 4], x: &Vec4) -> Result<Mat4> {
        let a: Mat4 = std::array::from_fn(|i| jets[i].grad);
        let det = tensor::det(&a);
        if det.abs() < SINGULAR_DET || !det.is_finite() {
            return Err(Error::SingularJacobian {
                chart: self.0.name.clone(),
                det,
                point: *x,
            });
        }
        Ok(a)
    }

    /// `A^a_b = ∂x̂^a/∂x^b`.
    pub fn jacobian_at(&self, x: &Vec4) -> Result<Mat4> {
        let jets = self.jets(x)?;
        self.checked_jacobian(&jets, x)
    }

    /// `A^a_{bc} = ∂²x̂^a/∂x^b∂x^c`.
    pub fn hessian_at(&self, x: &Vec4) -> Result<Tensor3> {
        let jets = self.jets(x)?;
        self.checked_jacobian(&jets, x)?;
        Ok(std::array::from_fn(|a| jets[a].hessian()))
    }

    /// Image, Jacobian and Hessian from one jet pass.
    pub fn derivatives_at(&self, x: &Vec4) -> Result<(Vec4, Mat4, Tensor3)> {
        let jets = self.jets(x)?;
        let a = self.checked_jacobian(&jets, x)?;
        Ok((
            std::array::from_fn(|i| jets[i].value),
            a,
            std::array::from_fn(|i| jets[i].hessian()),
        ))
    }

    /// Symbolic Jacobian entries `[a][b] = ∂x̂^a/∂x^b`.
    pub fn jacobian_exprs(&self) -> &[[Expr; 4]; 4] {
        self.0
            .jacobian
            .get_or_init(|| std::array::from_fn(|a| std::array::from_fn(|b| self.0.forward[a].diff(b))))
    }

    /// `self ∘ inner`: first apply `inner`, then `self`.
    pub fn compose(&self, inner: &Chart) -> Chart {
        let subs = inner.forward().to_vec();
        let forward = std::array::from_fn(|a| self.0.forward[a].substitute(&subs));
        let mut domain = inner.0.domain.clone();
        domain.extend(self.0.domain.iter().map(|r| DomainRule {
            expr: r.expr.substitute(&subs),
            description: format!("{} (after {})", r.description, inner.name()),
        }));
        Chart::with_domain(format!("{}∘{}", self.name(), inner.name()), forward, domain)
    }
}

/// A chart together with its inverse.
#[derive(Clone, Debug)]
pub struct ChartPair {
    pub forward: Chart,
    pub inverse: Chart,
}

/// Worst discrepancies found by [`ChartPair::check`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairCheck {
    pub round_trip: f64,
    pub jacobian: f64,
}

impl ChartPair {
    pub fn new(forward: Chart, inverse: Chart) -> Self {
        Self { forward, inverse }
    }

    pub fn swapped(&self) -> Self {
        Self::new(self.inverse.clone(), self.forward.clone())
    }

    /// Round-trip and inverse-Jacobian residuals over sample points of the
    /// forward chart's domain.
    pub fn check(&self, points: &[Vec4]) -> Result<PairCheck> {
        let mut worst = PairCheck { round_trip: 0.0, jacobian: 0.0 };
        for x in points {
            let (xh, a, _) = self.forward.derivatives_at(x)?;
            let (back, b, _) = self.inverse.derivatives_at(&xh)?;
            let scale = tensor::norm(x).max(1.0);
            let rt = (0..4).map(|i| (back[i] - x[i]).abs()).fold(0.0, f64::max) / scale;
            let prod = tensor::mat_mul(&b, &a);
            let jac = (0..4)
                .flat_map(|i| (0..4).map(move |j| (i, j)))
                .map(|(i, j)| (prod[i][j] - if i == j { 1.0 } else { 0.0 }).abs())
                .fold(0.0, f64::max);
            worst.round_trip = worst.round_trip.max(rt);
            worst.jacobian = worst.jacobian.max(jac);
        }
        Ok(worst)
    }
}

/// What a registry name resolves to.
#[derive(Clone, Debug)]
pub enum Registered {
    Chart(Chart),
    Pair(ChartPair),
}

impl Registered {
    pub fn chart(&self) -> &Chart {
        match self {
            Registered::Chart(c) => c,
            Registered::Pair(p) => &p.forward,
        }
    }

    pub fn pair(&self) -> Option<&ChartPair> {
        match self {
            Registered::Pair(p) => Some(p),
            Registered::Chart(_) => None,
        }
    }
}

pub const REGISTRY_NAMES: [&str; 8] = [
    "identity",
    "linear",
    "lorentz_boost",
    "cylindrical_to_cartesian",
    "cartesian_to_cylindrical",
    "spherical_to_cartesian",
    "cartesian_to_spherical",
    "polynomial",
];

fn x(i: usize) -> Expr {
    Expr::var(i)
}

fn c(v: f64) -> Expr {
    Expr::constant(v)
}

fn rule(expr: Expr, description: &str) -> DomainRule {
    DomainRule { expr, description: description.to_string() }
}

fn no_params(name: &str, params: &[f64]) -> Result<()> {
    if params.is_empty() {
        Ok(())
    } else {
        Err(Error::InvalidParameters(format!("`{name}` takes no parameters, got {}", params.len())))
    }
}

/// Looks up a built-in chart. Invertible charts come back as pairs.
///
/// * `linear`: 16 row-major entries of `M`, optionally followed by a 4-vector
///   offset `b`, giving `x̂ = M x + b`.
/// * `lorentz_boost`: `[v]`, a boost along `x^1` under which a particle at
///   rest acquires velocity `+v`.
/// * `polynomial`: quadruples `(a, b, c, k)` each adding `k x^b x^c` to
///   `x̂^a` on top of the identity.
pub fn registry_get(name: &str, params: &[f64]) -> Result<Registered> {
    match name {
        "identity" => {
            no_params(name, params)?;
            Ok(Registered::Pair(ChartPair::new(Chart::identity(), Chart::identity())))
        }
        "linear" => linear(params).map(Registered::Pair),
        "lorentz_boost" => {
            let [v] = params else {
                return Err(Error::InvalidParameters("lorentz_boost takes one velocity".into()));
            };
            lorentz_boost(*v).map(Registered::Pair)
        }
        "cylindrical_to_cartesian" => {
            no_params(name, params)?;
            Ok(Registered::Pair(cylindrical_pair()))
        }
        "cartesian_to_cylindrical" => {
            no_params(name, params)?;
            Ok(Registered::Pair(cylindrical_pair().swapped()))
        }
        "spherical_to_cartesian" => {
            no_params(name, params)?;
            Ok(Registered::Pair(spherical_pair()))
        }
        "cartesian_to_spherical" => {
            no_params(name, params)?;
            Ok(Registered::Pair(spherical_pair().swapped()))
        }
        "polynomial" => polynomial(params).map(Registered::Chart),
        other => Err(Error::UnknownChart(other.to_string())),
    }
}

fn affine_chart(name: String, m: &Mat4, b: &Vec4) -> Chart {
    let forward = std::array::from_fn(|a| {
        let mut e = c(b[a]);
        for k in 0..4 {
            e = e + c(m[a][k]) * x(k);
        }
        e
    });
    Chart::new(name, forward)
}

/// `x̂ = M x + b` with its inverse.
pub fn linear_pair(m: &Mat4, b: &Vec4) -> Result<ChartPair> {
    let d = tensor::det(m);
    if d.abs() < SINGULAR_DET || !d.is_finite() {
        return Err(Error::InvalidParameters(format!("linear chart matrix is singular (det = {d:e})")));
    }
    let inv = tensor::inverse(m).expect("nonsingular");
    let mb = tensor::mat_vec(&inv, b);
    let neg: Vec4 = mb.map(|v| -v);
    Ok(ChartPair::new(affine_chart("linear".into(), m, b), affine_chart("linear_inverse".into(), &inv, &neg)))
}

fn linear(params: &[f64]) -> Result<ChartPair> {
    let (m, b) = match params.len() {
        16 => (params, [0.0; 4]),
        20 => (&params[..16], [params[16], params[17], params[18], params[19]]),
        n => {
            return Err(Error::InvalidParameters(format!(
                "linear takes 16 matrix entries and an optional 4-vector offset, got {n} values"
            )))
        }
    };
    let m: Mat4 = std::array::from_fn(|i| std::array::from_fn(|j| m[4 * i + j]));
    linear_pair(&m, &b)
}

pub fn lorentz_boost(v: f64) -> Result<ChartPair> {
    if !(v.abs() < 1.0) {
        return Err(Error::InvalidParameters(format!("boost velocity must satisfy |v| < 1, got {v}")));
    }
    let make = |v: f64, name: &str| {
        let g = 1.0 / (1.0 - v * v).sqrt();
        let mut m = [[0.0; 4]; 4];
        m[0][0] = g;
        m[0][1] = g * v;
        m[1][0] = g * v;
        m[1][1] = g;
        m[2][2] = 1.0;
        m[3][3] = 1.0;
        affine_chart(name.into(), &m, &[0.0; 4])
    };
    Ok(ChartPair::new(make(v, "lorentz_boost"), make(-v, "lorentz_boost_inverse")))
}

/// `(t, r, θ, z) -> (t, r cos θ, r sin θ, z)` with its inverse.
pub fn cylindrical_pair() -> ChartPair {
    let pi = std::f64::consts::PI;
    let forward = Chart::with_domain(
        "cylindrical_to_cartesian",
        [x(0), x(1) * x(2).cos(), x(1) * x(2).sin(), x(3)],
        vec![
            rule(x(1), "r > 0"),
            rule(c(pi) - x(2), "θ < π"),
            rule(x(2) + c(pi), "θ > -π"),
        ],
    );
    let rho = (x(1).powf(2.0) + x(2).powf(2.0)).sqrt();
    let inverse = Chart::with_domain(
        "cartesian_to_cylindrical",
        [x(0), rho.clone(), Expr::atan2(&x(2), &x(1)), x(3)],
        vec![
            rule(x(1).powf(2.0) + x(2).powf(2.0), "off the axis x = y = 0"),
            rule(x(1) + rho, "off the branch cut y = 0, x < 0"),
        ],
    );
    ChartPair::new(forward, inverse)
}

/// `(t, r, θ, φ) -> (t, r sin θ cos φ, r sin θ sin φ, r cos θ)` with its inverse.
pub fn spherical_pair() -> ChartPair {
    let pi = std::f64::consts::PI;
    let forward = Chart::with_domain(
        "spherical_to_cartesian",
        [
            x(0),
            x(1) * x(2).sin() * x(3).cos(),
            x(1) * x(2).sin() * x(3).sin(),
            x(1) * x(2).cos(),
        ],
        vec![
            rule(x(1), "r > 0"),
            rule(x(2), "θ > 0"),
            rule(c(pi) - x(2), "θ < π"),
            rule(c(pi) - x(3), "φ < π"),
            rule(x(3) + c(pi), "φ > -π"),
        ],
    );
    let rho2 = x(1).powf(2.0) + x(2).powf(2.0);
    let rho = rho2.sqrt();
    let r = (rho2.clone() + x(3).powf(2.0)).sqrt();
    let inverse = Chart::with_domain(
        "cartesian_to_spherical",
        [x(0), r, Expr::atan2(&rho, &x(3)), Expr::atan2(&x(2), &x(1))],
        vec![
            rule(rho2, "off the axis x = y = 0"),
            rule(x(1) + rho, "off the branch cut y = 0, x < 0"),
        ],
    );
    ChartPair::new(forward, inverse)
}

fn polynomial(params: &[f64]) -> Result<Chart> {
    if !params.len().is_multiple_of(4) {
        return Err(Error::InvalidParameters(
            "polynomial takes quadruples (a, b, c, coefficient)".into(),
        ));
    }
    let mut forward: [Expr; 4] = std::array::from_fn(x);
    for q in params.chunks(4) {
        let idx = |v: f64| -> Result<usize> {
            if v.fract() == 0.0 && (0.0..4.0).contains(&v) {
                Ok(v as usize)
            } else {
                Err(Error::InvalidParameters(format!("polynomial index {v} is not one of 0..=3")))
            }
        };
        let (a, b, cc) = (idx(q[0])?, idx(q[1])?, idx(q[2])?);
        forward[a] = &forward[a] + &(c(q[3]) * x(b) * x(cc));
    }
    Ok(Chart::new("polynomial", forward))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn identity_has_unit_jacobian_and_no_hessian() {
        let ch = registry_get("identity", &[]).unwrap();
        let p = [0.3, -1.0, 2.0, 5.0];
        let a = ch.chart().jacobian_at(&p).unwrap();
        let h = ch.chart().hessian_at(&p).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(a[i][j], if i == j { 1.0 } else { 0.0 });
                for k in 0..4 {
                    assert_eq!(h[i][j][k], 0.0);
                }
            }
        }
    }

    #[test]
    fn cylindrical_derivatives_on_the_axis_point() {
        let pair = cylindrical_pair();
        let p = [0.0, 1.0, 0.0, 0.0];
        let a = pair.forward.jacobian_at(&p).unwrap();
        assert_abs_diff_eq!(a[1][1], 1.0);
        assert_abs_diff_eq!(a[2][1], 0.0);
        assert_abs_diff_eq!(a[1][2], 0.0);
        assert_abs_diff_eq!(a[2][2], 1.0);
        let h = pair.forward.hessian_at(&p).unwrap();
        assert_abs_diff_eq!(h[1][1][2], 0.0);
        assert_abs_diff_eq!(h[1][2][1], 0.0);
        assert_abs_diff_eq!(h[2][1][2], 1.0);
        assert_abs_diff_eq!(h[2][2][1], 1.0);
        assert_abs_diff_eq!(h[1][2][2], -1.0);
        assert_abs_diff_eq!(h[2][2][2], 0.0);
    }

    #[test]
    fn quadratic_chart_hessian() {
        let ch = registry_get("polynomial", &[1.0, 2.0, 2.0, 1.0]).unwrap();
        let h = ch.chart().hessian_at(&[0.1, 0.2, 0.3, 0.4]).unwrap();
        for a in 0..4 {
            for b in 0..4 {
                for cc in 0..4 {
                    let expect = if (a, b, cc) == (1, 2, 2) { 2.0 } else { 0.0 };
                    assert_eq!(h[a][b][cc], expect);
                }
            }
        }
    }

    #[test]
    fn linear_jacobian_is_the_matrix() {
        let m: Vec<f64> = (0..16).map(|i| if i % 5 == 0 { 2.0 } else { 0.1 * i as f64 }).collect();
        let ch = registry_get("linear", &m).unwrap();
        let a = ch.chart().jacobian_at(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_abs_diff_eq!(a[i][j], m[4 * i + j], epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn zero_boost_is_identity() {
        let pair = lorentz_boost(0.0).unwrap();
        let a = pair.forward.jacobian_at(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(a[i][j], if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn registry_errors() {
        assert!(matches!(registry_get("torus", &[]), Err(Error::UnknownChart(_))));
        assert!(matches!(registry_get("lorentz_boost", &[1.0]), Err(Error::InvalidParameters(_))));
        assert!(matches!(registry_get("linear", &[0.0; 16]), Err(Error::InvalidParameters(_))));
    }

    #[test]
    fn domain_and_singularity_are_reported() {
        let pair = cylindrical_pair();
        assert!(matches!(
            pair.forward.jacobian_at(&[0.0, -1.0, 0.0, 0.0]),
            Err(Error::OutsideChart { .. })
        ));
        let ch = Chart::new("collapse", [x(0), x(1), x(1), x(3)]);
        assert!(matches!(ch.jacobian_at(&[0.0; 4]), Err(Error::SingularJacobian { .. })));
    }

    #[test]
    fn pairs_round_trip() {
        let pts: Vec<Vec4> = (0..20)
            .map(|i| {
                let s = i as f64;
                [s * 0.1, 0.5 + 0.1 * s, -2.5 + 0.25 * s, 0.2 * s - 1.0]
            })
            .collect();
        let check = cylindrical_pair().check(&pts).unwrap();
        assert!(check.round_trip < 1e-12 && check.jacobian < 1e-12, "{check:?}");
        let sph: Vec<Vec4> = pts.iter().map(|p| [p[0], p[1], 0.3 + 0.1 * p[0], p[2]]).collect();
        let check = spherical_pair().check(&sph).unwrap();
        assert!(check.round_trip < 1e-12 && check.jacobian < 1e-12, "{check:?}");
        let check = lorentz_boost(0.6).unwrap().check(&pts).unwrap();
        assert!(check.round_trip < 1e-12 && check.jacobian < 1e-12, "{check:?}");
    }

    #[test]
    fn composition_follows_the_chain_rule() {
        let outer = lorentz_boost(0.3).unwrap().forward;
        let inner = cylindrical_pair().forward;
        let both = outer.compose(&inner);
        let p = [0.5, 1.3, 0.7, -0.2];
        let direct = both.jacobian_at(&p).unwrap();
        let chained = tensor::mat_mul(&outer.jacobian_at(&inner.apply(&p).unwrap()).unwrap(), &inner.jacobian_at(&p).unwrap());
        for i in 0..4 {
            for j in 0..4 {
                assert_abs_diff_eq!(direct[i][j], chained[i][j], epsilon = 1e-12);
            }
        }
    }
}
