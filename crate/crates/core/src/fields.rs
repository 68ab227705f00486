//! Potentials of static point multipoles at the origin.
//!
//! With `φ_M = 1/(4π ε0 r)`:
//!
//! ```text
//! monopole             φ = q φ_M
//! electric dipole      φ = p^μ ∂_μ φ_M
//! magnetic dipole      A = p × ∇φ_M
//! electric quadrupole  φ = γ^{0μν} ∂_μ ∂_ν φ_M
//! magnetic quadrupole  A^μ = γ^{μνσ} ∂_ν ∂_σ φ_M
//! ```

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::jets::Jet2;
use crate::par::{self, Execution};
use crate::tensor::{levi_civita, Mat4, Tensor3};

pub const EPSILON0_SI: f64 = 8.8541878128e-12;

/// Radii of a falloff fit: `FALLOFF_SAMPLES` log-spaced points on
/// `[FALLOFF_MIN_R, FALLOFF_MAX_R]`.
pub const FALLOFF_MIN_R: f64 = 10.0;
pub const FALLOFF_MAX_R: f64 = 1000.0;
pub const FALLOFF_SAMPLES: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Units {
    pub epsilon0: f64,
}

impl Units {
    pub fn natural() -> Self {
        Self { epsilon0: 1.0 }
    }

    pub fn si() -> Self {
        Self { epsilon0: EPSILON0_SI }
    }

    fn coulomb(&self) -> f64 {
        1.0 / (4.0 * PI * self.epsilon0)
    }
}

impl Default for Units {
    fn default() -> Self {
        Self::natural()
    }
}

/// A static point source at the origin. Spatial indices run over 0..3 here,
/// standing for 1..=3.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StaticSource {
    Monopole { q: f64 },
    ElectricDipole { p: [f64; 3] },
    MagneticDipole { p: [f64; 3] },
    /// `γ^{0μν}`, symmetric.
    ElectricQuadrupole { gamma: [[f64; 3]; 3] },
    /// `γ^{μνσ}`, symmetric in `νσ` with vanishing cyclic sum.
    MagneticQuadrupole { gamma: [[[f64; 3]; 3]; 3] },
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Potentials {
    pub scalar: f64,
    pub vector: [f64; 3],
}

impl Potentials {
    pub fn magnitude(&self) -> f64 {
        (self.scalar * self.scalar + self.vector.iter().map(|a| a * a).sum::<f64>()).sqrt()
    }

    fn add(&mut self, other: &Potentials) {
        self.scalar += other.scalar;
        for k in 0..3 {
            self.vector[k] += other.vector[k];
        }
    }
}

impl StaticSource {
    pub fn kind(&self) -> &'static str {
        match self {
            StaticSource::Monopole { .. } => "monopole",
            StaticSource::ElectricDipole { .. } => "electric_dipole",
            StaticSource::MagneticDipole { .. } => "magnetic_dipole",
            StaticSource::ElectricQuadrupole { .. } => "electric_quadrupole",
            StaticSource::MagneticQuadrupole { .. } => "magnetic_quadrupole",
        }
    }

    /// Expected falloff exponent.
    pub fn order(&self) -> i32 {
        match self {
            StaticSource::Monopole { .. } => -1,
            StaticSource::ElectricDipole { .. } | StaticSource::MagneticDipole { .. } => -2,
            _ => -3,
        }
    }

    /// Checks the symmetries of quadrupole moments.
    pub fn validate(&self, tol: f64) -> Result<()> {
        match self {
            StaticSource::ElectricQuadrupole { gamma } => {
                for m in 0..3 {
                    for n in 0..3 {
                        let r = (gamma[m][n] - gamma[n][m]).abs();
                        if r > tol {
                            return Err(Error::Symmetry { indices: vec![0, m + 1, n + 1], tau: 0.0, residual: r });
                        }
                    }
                }
                Ok(())
            }
            StaticSource::MagneticQuadrupole { gamma } => {
                for a in 0..3 {
                    for b in 0..3 {
                        for c in 0..3 {
                            let sym = (gamma[a][b][c] - gamma[a][c][b]).abs();
                            let cyc = (gamma[a][b][c] + gamma[b][c][a] + gamma[c][a][b]).abs();
                            let r = sym.max(cyc);
                            if r > tol {
                                return Err(Error::Symmetry { indices: vec![a + 1, b + 1, c + 1], tau: 0.0, residual: r });
                            }
                        }
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Electric part `p^μ = γ^{0μ}` and magnetic part `p_σ = ½ ε_{σμν} γ^{μν}`.
    pub fn from_dipole(gamma: &Mat4) -> [StaticSource; 2] {
        let ed = std::array::from_fn(|m| gamma[0][m + 1]);
        let md = std::array::from_fn(|s| {
            let mut v = 0.0;
            for m in 1..4 {
                for n in 1..4 {
                    v += 0.5 * levi_civita(s + 1, m, n) * gamma[m][n];
                }
            }
            v
        });
        [StaticSource::ElectricDipole { p: ed }, StaticSource::MagneticDipole { p: md }]
    }

    /// The `γ^{0μν}` and `γ^{μνσ}` slices of a quadrupole.
    pub fn from_quadrupole(gamma: &Tensor3) -> [StaticSource; 2] {
        [
            StaticSource::ElectricQuadrupole {
                gamma: std::array::from_fn(|m| std::array::from_fn(|n| gamma[0][m + 1][n + 1])),
            },
            StaticSource::MagneticQuadrupole {
                gamma: std::array::from_fn(|a| {
                    std::array::from_fn(|b| std::array::from_fn(|c| gamma[a + 1][b + 1][c + 1]))
                }),
            },
        ]
    }

    /// Potentials from the value, gradient and Hessian of `φ_M`.
    fn combine(&self, g: f64, grad: [f64; 3], hess: [[f64; 3]; 3]) -> Potentials {
        let mut out = Potentials::default();
        match self {
            StaticSource::Monopole { q } => out.scalar = q * g,
            StaticSource::ElectricDipole { p } => out.scalar = (0..3).map(|m| p[m] * grad[m]).sum(),
            StaticSource::MagneticDipole { p } => {
                out.vector = [
                    p[1] * grad[2] - p[2] * grad[1],
                    p[2] * grad[0] - p[0] * grad[2],
                    p[0] * grad[1] - p[1] * grad[0],
                ]
            }
            StaticSource::ElectricQuadrupole { gamma } => {
                for m in 0..3 {
                    for n in 0..3 {
                        out.scalar += gamma[m][n] * hess[m][n];
                    }
                }
            }
            StaticSource::MagneticQuadrupole { gamma } => {
                for (a, slot) in out.vector.iter_mut().enumerate() {
                    for b in 0..3 {
                        for c in 0..3 {
                            *slot += gamma[a][b][c] * hess[b][c];
                        }
                    }
                }
            }
        }
        out
    }

    /// Symbolic potentials in the variables `x^1..x^3`.
    pub fn potential_exprs(&self, units: Units) -> (Expr, [Expr; 3]) {
        let r = Expr::sum((1..4).map(|m| Expr::var(m).powf(2.0))).sqrt();
        let g = Expr::constant(units.coulomb()) / r;
        let grad: [Expr; 3] = std::array::from_fn(|m| g.diff(m + 1));
        let hess: [[Expr; 3]; 3] = std::array::from_fn(|m| std::array::from_fn(|n| grad[m].diff(n + 1)));
        let c = Expr::constant;
        let zero = || [Expr::zero(), Expr::zero(), Expr::zero()];
        match self {
            StaticSource::Monopole { q } => (c(*q) * g, zero()),
            StaticSource::ElectricDipole { p } => (Expr::sum((0..3).map(|m| c(p[m]) * grad[m].clone())), zero()),
            StaticSource::MagneticDipole { p } => {
                let cross = |i: usize, j: usize| c(p[i]) * grad[j].clone() - c(p[j]) * grad[i].clone();
                (Expr::zero(), [cross(1, 2), cross(2, 0), cross(0, 1)])
            }
            StaticSource::ElectricQuadrupole { gamma } => (
                Expr::sum((0..3).flat_map(|m| (0..3).map(move |n| (m, n))).map(|(m, n)| c(gamma[m][n]) * hess[m][n].clone())),
                zero(),
            ),
            StaticSource::MagneticQuadrupole { gamma } => (
                Expr::zero(),
                std::array::from_fn(|a| {
                    Expr::sum(
                        (0..3)
                            .flat_map(|b| (0..3).map(move |c| (b, c)))
                            .map(|(b, cc)| c(gamma[a][b][cc]) * hess[b][cc].clone()),
                    )
                }),
            ),
        }
    }
}

/// Value, gradient and Hessian of `φ_M` at `x`, by jets.
fn coulomb_jet(x: &[f64; 3], units: Units) -> Result<Jet2> {
    let r2 = x.iter().map(|v| v * v).sum::<f64>();
    if r2 == 0.0 {
        return Err(Error::Domain { op: "potential at the origin", value: 0.0 });
    }
    let vars = Jet2::variables(&[0.0, x[0], x[1], x[2]]);
    let sq = vars[1] * vars[1] + vars[2] * vars[2] + vars[3] * vars[3];
    Ok(sq.sqrt()?.recip()?.scale(units.coulomb()))
}

pub fn potential_at(source: &StaticSource, x: &[f64; 3], units: Units) -> Result<Potentials> {
    superposed_potential_at(std::slice::from_ref(source), x, units)
}

/// Sum of the potentials of several sources at the origin.
pub fn superposed_potential_at(sources: &[StaticSource], x: &[f64; 3], units: Units) -> Result<Potentials> {
    let j = coulomb_jet(x, units)?;
    let grad = [j.grad[1], j.grad[2], j.grad[3]];
    let hess = std::array::from_fn(|m| std::array::from_fn(|n| j.hess_at(m + 1, n + 1)));
    let mut out = Potentials::default();
    for s in sources {
        out.add(&s.combine(j.value, grad, hess));
    }
    Ok(out)
}

/// Radii of a falloff fit.
pub fn falloff_radii() -> Vec<f64> {
    log_radii(FALLOFF_SAMPLES)
}

/// `n` log-spaced radii between the falloff fit limits.
pub fn log_radii(n: usize) -> Vec<f64> {
    let (a, b) = (FALLOFF_MIN_R.ln(), FALLOFF_MAX_R.ln());
    let d = (n.max(2) - 1) as f64;
    (0..n).map(|i| (a + (b - a) * i as f64 / d).exp()).collect()
}

/// `(r, potentials)` along a ray from the origin.
pub fn ray(sources: &[StaticSource], direction: &[f64; 3], radii: &[f64], units: Units) -> Result<Vec<(f64, Potentials)>> {
    let n = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::InvalidParameters("direction must be a nonzero finite vector".into()));
    }
    let u = direction.map(|v| v / n);
    radii
        .iter()
        .map(|&r| Ok((r, superposed_potential_at(sources, &u.map(|v| v * r), units)?)))
        .collect()
}

/// Least-squares slope of `log |potential|` against `log r`.
pub fn falloff_exponent(source: &StaticSource, direction: &[f64; 3], units: Units) -> Result<f64> {
    superposed_falloff_exponent(std::slice::from_ref(source), direction, units)
}

pub fn superposed_falloff_exponent(sources: &[StaticSource], direction: &[f64; 3], units: Units) -> Result<f64> {
    let samples = ray(sources, direction, &falloff_radii(), units)?;
    loglog_slope(&samples)
}

/// Least-squares slope of `log |potential|` against `log r` over ray samples.
pub fn loglog_slope(samples: &[(f64, Potentials)]) -> Result<f64> {
    let mut pts = Vec::with_capacity(samples.len());
    for (r, p) in samples {
        let m = p.magnitude();
        if !(m > 0.0) || !m.is_finite() {
            return Err(Error::VanishingPotential);
        }
        pts.push((r.ln(), m.ln()));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    Ok(sxy / sxx)
}

/// Falloff exponents of many (source, direction) cases.
pub fn falloff_sweep(
    cases: &[(StaticSource, [f64; 3])],
    units: Units,
    execution: Execution,
) -> Result<Vec<f64>> {
    par::try_map(cases, execution, |(s, d)| falloff_exponent(s, d, units))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn eq_33() -> StaticSource {
        let mut gamma = [[0.0; 3]; 3];
        gamma[2][2] = 1.0;
        StaticSource::ElectricQuadrupole { gamma }
    }

    #[test]
    fn monopole_value() {
        let s = StaticSource::Monopole { q: 4.0 * PI };
        assert_relative_eq!(potential_at(&s, &[0.0, 2.0, 0.0], Units::natural()).unwrap().scalar, 0.5, max_relative = 1e-15);
        let si = StaticSource::Monopole { q: 4.0 * PI * EPSILON0_SI };
        assert_relative_eq!(potential_at(&si, &[0.0, 0.0, 2.0], Units::si()).unwrap().scalar, 0.5, max_relative = 1e-14);
        assert!(potential_at(&s, &[0.0; 3], Units::natural()).is_err());
    }

    #[test]
    fn electric_dipole_vanishes_in_the_midplane() {
        let s = StaticSource::ElectricDipole { p: [0.0, 0.0, 1.0] };
        assert_eq!(potential_at(&s, &[1.0, 2.0, 0.0], Units::natural()).unwrap().scalar, 0.0);
        let x = [0.3, -0.4, 1.2];
        let r: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        // ∂_z (1/4πr) = −z/(4π r³)
        assert_relative_eq!(
            potential_at(&s, &x, Units::natural()).unwrap().scalar,
            -x[2] / (4.0 * PI * r.powi(3)),
            max_relative = 1e-13
        );
    }

    #[test]
    fn electric_quadrupole_closed_form() {
        for x in [[0.3, -0.4, 1.2], [2.0, 1.0, -0.5], [0.0, 0.0, 3.0]] {
            let r2: f64 = x.iter().map(|v| v * v).sum();
            let expect = (3.0 * x[2] * x[2] - r2) / (4.0 * PI * r2.powf(2.5));
            assert_relative_eq!(potential_at(&eq_33(), &x, Units::natural()).unwrap().scalar, expect, max_relative = 1e-12);
        }
    }

    #[test]
    fn jets_match_symbolic_potentials() {
        let sources = [
            StaticSource::Monopole { q: 1.3 },
            StaticSource::ElectricDipole { p: [0.2, -1.0, 0.5] },
            StaticSource::MagneticDipole { p: [1.0, 0.4, -0.3] },
            eq_33(),
            StaticSource::from_quadrupole(&crate::multipole::make_toroidal_quadrupole([0.0, 0.0, 1.0]).projected)[1],
        ];
        let x = [0.7, -0.2, 0.9];
        for s in &sources {
            let jet = potential_at(s, &x, Units::natural()).unwrap();
            let (phi, a) = s.potential_exprs(Units::natural());
            let p = [0.0, x[0], x[1], x[2]];
            assert_relative_eq!(jet.scalar, phi.eval(&p).unwrap(), max_relative = 1e-12, epsilon = 1e-15);
            for k in 0..3 {
                assert_relative_eq!(jet.vector[k], a[k].eval(&p).unwrap(), max_relative = 1e-12, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn falloffs_follow_the_order() {
        let dir = [0.3, 0.5, 0.8];
        for s in [
            StaticSource::Monopole { q: 1.0 },
            StaticSource::ElectricDipole { p: [1.0, 0.0, 0.0] },
            StaticSource::MagneticDipole { p: [0.0, 0.0, 1.0] },
            eq_33(),
        ] {
            let e = falloff_exponent(&s, &dir, Units::natural()).unwrap();
            assert!((e - s.order() as f64).abs() < 0.01, "{} {e}", s.kind());
        }
        let s = StaticSource::ElectricDipole { p: [0.0, 0.0, 1.0] };
        assert!(matches!(falloff_exponent(&s, &[1.0, 0.0, 0.0], Units::natural()), Err(Error::VanishingPotential)));
    }

    #[test]
    fn dipole_split() {
        let g = crate::multipole::make_static_dipole([1.0, 2.0, 3.0], [-1.0, 0.5, 4.0]).at(0.0).unwrap();
        assert_eq!(
            StaticSource::from_dipole(&g),
            [StaticSource::ElectricDipole { p: [1.0, 2.0, 3.0] }, StaticSource::MagneticDipole { p: [-1.0, 0.5, 4.0] }]
        );
    }

    #[test]
    fn asymmetric_quadrupoles_are_rejected() {
        let mut gamma = [[0.0; 3]; 3];
        gamma[0][1] = 1.0;
        assert!(StaticSource::ElectricQuadrupole { gamma }.validate(1e-12).is_err());
        assert!(eq_33().validate(1e-12).is_ok());
    }
}
