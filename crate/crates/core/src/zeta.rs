//! Coefficients of a current in adapted coordinates.
//!
//! On the worldline `C(τ) = (τ, 0, 0, 0)` a current of order at most two acts
//! on a test form as
//!
//! ```text
//! ∫ ( ζ^{∅,0} φ_0 + ζ^{μ,0} ∂_μ φ_0 + ζ^{∅,ν} φ_ν + ζ^{μ,ν} ∂_μ φ_ν
//!     + Σ_{μ≤ν} ζ^{μν,0} ∂_μ∂_ν φ_0 + Σ_{μ≤ν} ζ^{μν,ρ} ∂_μ∂_ν φ_ρ ) dτ
//! ```
//!
//! with Greek indices spatial. Integrating a monopole plus quadrupole by parts
//! gives
//!
//! ```text
//! ζ^{∅,0} = q             ζ^{νρ,0} = γ^{0νρ}     ζ^{νρ,μ} = γ^{μνρ}     (ν < ρ)
//! ζ^{ν,0} = ½ γ̇^{ν00}     ζ^{νν,0} = ½ γ^{0νν}   ζ^{νν,μ} = ½ γ^{μνν}
//! ζ^{∅,μ} = ½ γ̈^{μ00}     ζ^{ν,μ}  = −γ̇^{μ0ν}
//! ```
//!
//! Going back, `γ^{ν00}` and the part of `γ^{μ0ν}` antisymmetric in `μν` are
//! integrals, fixed up to six constants.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::multipole::{ComponentSource, Components, Monopole, QuadrupoleComponents};
use crate::pairing::{crossing, PairingReport, TestForm};
use crate::quadrature::{integrate_vec, CumulativeIntegral, QuadOptions};
use crate::tensor::{ComponentArray, Tensor3, Zeta, ZETA_LEN};
use crate::worldline::Worldline;

pub type AdaptedCoefficients = Components<Zeta>;

/// Unordered spatial pairs `μ ≤ ν` in storage order.
pub const SPATIAL_PAIRS: [(usize, usize); 6] = [(1, 1), (1, 2), (1, 3), (2, 2), (2, 3), (3, 3)];

fn pair_index(mu: usize, nu: usize) -> usize {
    let (a, b) = if mu <= nu { (mu, nu) } else { (nu, mu) };
    SPATIAL_PAIRS.iter().position(|&p| p == (a, b)).expect("spatial indices")
}

/// Position of `ζ^{∅,0}`.
pub const EMPTY_0: usize = 0;

/// Position of `ζ^{μ,0}`.
pub fn mu_0(mu: usize) -> usize {
    mu
}

/// Position of `ζ^{∅,ν}`.
pub fn empty_nu(nu: usize) -> usize {
    3 + nu
}

/// Position of `ζ^{μ,ν}`.
pub fn mu_nu(mu: usize, nu: usize) -> usize {
    7 + 3 * (mu - 1) + (nu - 1)
}

/// Position of `ζ^{μν,0}`; symmetric in `μν`.
pub fn pair_0(mu: usize, nu: usize) -> usize {
    16 + pair_index(mu, nu)
}

/// Position of `ζ^{μν,ρ}`; symmetric in `μν`.
pub fn pair_rho(mu: usize, nu: usize, rho: usize) -> usize {
    22 + 3 * pair_index(mu, nu) + (rho - 1)
}

/// The forward dictionary for any scalar type. `g(k, a, b, c)` is the `k`-th
/// derivative of `γ^{abc}`.
fn dictionary<T>(q: T, zero: T, g: impl Fn(usize, usize, usize, usize) -> T) -> Vec<T>
where
    T: Clone + std::ops::Mul<f64, Output = T>,
{
    let mut z = vec![zero; ZETA_LEN];
    z[EMPTY_0] = q;
    for mu in 1..4 {
        z[mu_0(mu)] = g(1, mu, 0, 0) * 0.5;
        z[empty_nu(mu)] = g(2, mu, 0, 0) * 0.5;
        for nu in 1..4 {
            z[mu_nu(nu, mu)] = g(1, mu, 0, nu) * -1.0;
        }
    }
    for &(mu, nu) in &SPATIAL_PAIRS {
        let half = if mu == nu { 0.5 } else { 1.0 };
        z[pair_0(mu, nu)] = g(0, 0, mu, nu) * half;
        for rho in 1..4 {
            z[pair_rho(mu, nu, rho)] = g(0, rho, mu, nu) * half;
        }
    }
    z
}

struct FromGamma {
    q: f64,
    gamma: QuadrupoleComponents,
}

impl ComponentSource for FromGamma {
    fn len(&self) -> usize {
        ZETA_LEN
    }

    fn max_order(&self) -> usize {
        self.gamma.max_order().saturating_sub(2)
    }

    fn eval(&self, tau: f64, orders: usize, out: &mut [f64]) -> Result<()> {
        if orders == 0 {
            return Ok(());
        }
        if orders > 1 {
            return Err(Error::NotDifferentiable);
        }
        let s = self.gamma.series(tau)?;
        let z = dictionary(self.q, 0.0, |k, a, b, c| s[k][a][b][c]);
        out[..ZETA_LEN].copy_from_slice(&z);
        Ok(())
    }
}

/// Adapted coefficients of the monopole `q` plus the quadrupole `gamma` on an
/// adapted worldline. Symbolic components give symbolic coefficients; other
/// sources need two derivatives and give values only.
pub fn zeta_from_gamma(
    gamma: &QuadrupoleComponents,
    monopole: Monopole,
    worldline: &Worldline,
) -> Result<AdaptedCoefficients> {
    if !worldline.is_adapted() {
        return Err(Error::NotAdapted);
    }
    if let Some(e) = gamma.exprs() {
        let e = e.to_vec();
        let d1: Vec<Expr> = e.iter().map(|x| x.diff(0)).collect();
        let d2: Vec<Expr> = d1.iter().map(|x| x.diff(0)).collect();
        let all = [e, d1, d2];
        let z = dictionary(Expr::constant(monopole.q), Expr::zero(), |k, a, b, c| {
            all[k][16 * a + 4 * b + c].clone()
        });
        return Components::from_exprs(z);
    }
    if gamma.max_order() < 2 {
        return Err(Error::NotDifferentiable);
    }
    Ok(Components::from_source(Arc::new(FromGamma { q: monopole.q, gamma: gamma.clone() })))
}

/// The six free constants of [`gamma_from_zeta`], fixed at the start of the
/// interval: `c^ν = ½ γ^{ν00}(τ0)` and `k^{μν}`, the part of `γ^{μ0ν}(τ0)`
/// antisymmetric in `μν`, for `μν = 12, 13, 23`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct IntegrationConstants {
    pub c: [f64; 3],
    pub k: [f64; 3],
}

const ANTI_PAIRS: [(usize, usize); 3] = [(1, 2), (1, 3), (2, 3)];

impl IntegrationConstants {
    /// The constants that make [`gamma_from_zeta`] return `gamma`.
    pub fn matching(gamma: &QuadrupoleComponents, tau0: f64) -> Result<Self> {
        let g = gamma.at(tau0)?;
        Ok(Self {
            c: std::array::from_fn(|i| 0.5 * g[i + 1][0][0]),
            k: ANTI_PAIRS.map(|(m, n)| 0.5 * (g[m][0][n] - g[n][0][m])),
        })
    }
}

struct ToGamma {
    zeta: AdaptedCoefficients,
    /// `∫ ζ^{ν,0}` then `½ ∫ (ζ^{μ,ν} − ζ^{ν,μ})` over `ANTI_PAIRS`.
    integral: CumulativeIntegral,
    constants: IntegrationConstants,
}

impl ToGamma {
    fn integrands(z: &Zeta, out: &mut [f64]) {
        for nu in 1..4 {
            out[nu - 1] = z[mu_0(nu)];
        }
        for (i, &(m, n)) in ANTI_PAIRS.iter().enumerate() {
            out[3 + i] = 0.5 * (z[mu_nu(m, n)] - z[mu_nu(n, m)]);
        }
    }

    fn assemble(z: &Zeta, integrated: &[f64; 6], constant_part: bool, c: &IntegrationConstants) -> Tensor3 {
        let cc = if constant_part { 1.0 } else { 0.0 };
        let mut g = Tensor3::zero();
        for &(mu, nu) in &SPATIAL_PAIRS {
            let twice = if mu == nu { 2.0 } else { 1.0 };
            g[0][mu][nu] = twice * z[pair_0(mu, nu)];
            g[0][nu][mu] = g[0][mu][nu];
            for rho in 1..4 {
                g[rho][mu][nu] = twice * z[pair_rho(mu, nu, rho)];
                g[rho][nu][mu] = g[rho][mu][nu];
            }
        }
        for nu in 1..4 {
            g[nu][0][0] = 2.0 * (integrated[nu - 1] + cc * c.c[nu - 1]);
            g[0][0][nu] = -0.5 * g[nu][0][0];
            g[0][nu][0] = g[0][0][nu];
        }
        let mut anti = [[0.0; 4]; 4];
        for (i, &(m, n)) in ANTI_PAIRS.iter().enumerate() {
            anti[m][n] = integrated[3 + i] + cc * c.k[i];
            anti[n][m] = -anti[m][n];
        }
        for mu in 1..4 {
            for nu in 1..4 {
                g[mu][0][nu] = -0.5 * g[0][mu][nu] + anti[mu][nu];
                g[mu][nu][0] = g[mu][0][nu];
            }
        }
        g
    }
}

impl ComponentSource for ToGamma {
    fn len(&self) -> usize {
        64
    }

    fn max_order(&self) -> usize {
        self.zeta.max_order().min(2)
    }

    fn eval(&self, tau: f64, orders: usize, out: &mut [f64]) -> Result<()> {
        if orders == 0 {
            return Ok(());
        }
        let mut zbuf = vec![0.0; orders * ZETA_LEN];
        self.zeta.source().eval(tau, orders, &mut zbuf)?;
        let zs: Vec<Zeta> = (0..orders).map(|k| Zeta::from_flat(&zbuf[k * ZETA_LEN..])).collect();
        let mut integrated = [0.0; 6];
        self.integral.eval(tau, &mut integrated)?;
        out[..64].copy_from_slice(Tensor3::flat(&Self::assemble(&zs[0], &integrated, true, &self.constants)));
        for k in 1..orders {
            // the k-th derivative of an integral is the (k−1)-th of its integrand
            let mut d = [0.0; 6];
            Self::integrands(&zs[k - 1], &mut d);
            let g = Self::assemble(&zs[k], &d, false, &self.constants);
            out[k * 64..(k + 1) * 64].copy_from_slice(g.flat());
        }
        Ok(())
    }
}

/// Monopole and quadrupole with the given adapted coefficients, assuming they
/// are closed. `q` is read at the start of the interval.
pub fn gamma_from_zeta(
    zeta: &AdaptedCoefficients,
    interval: (f64, f64),
    constants: IntegrationConstants,
    opts: &QuadOptions,
) -> Result<(Monopole, QuadrupoleComponents)> {
    let (a, b) = interval;
    let integral = CumulativeIntegral::build(
        6,
        |t, out| {
            ToGamma::integrands(&zeta.at(t)?, out);
            Ok(())
        },
        a,
        b,
        opts,
    )?;
    let q = zeta.at(a)?[EMPTY_0];
    let src = ToGamma { zeta: zeta.clone(), integral, constants };
    Ok((Monopole { q }, Components::from_source(Arc::new(src))))
}

/// Names of the closedness conditions, in checking order.
pub const CONDITIONS: [&str; 7] = [
    "dζ^{∅,0}/dτ = 0",
    "dζ^{μ,0}/dτ = ζ^{∅,μ}",
    "ζ^{μ,μ} = dζ^{μμ,0}/dτ",
    "ζ^{μ,ν} + ζ^{ν,μ} = dζ^{μν,0}/dτ",
    "ζ^{μμ,μ} = 0",
    "ζ^{μμ,ρ} + ζ^{μρ,μ} = 0",
    "ζ^{12,3} + ζ^{13,2} + ζ^{23,1} = 0",
];

/// Largest absolute residual of each closedness condition at one point.
pub fn closedness_residuals_at(z: &Zeta, dz: &Zeta) -> [f64; 7] {
    let mut r = [0.0f64; 7];
    r[0] = dz[EMPTY_0].abs();
    for mu in 1..4 {
        r[1] = r[1].max((dz[mu_0(mu)] - z[empty_nu(mu)]).abs());
        r[2] = r[2].max((z[mu_nu(mu, mu)] - dz[pair_0(mu, mu)]).abs());
        r[4] = r[4].max(z[pair_rho(mu, mu, mu)].abs());
        for nu in 1..4 {
            if nu != mu {
                r[3] = r[3].max((z[mu_nu(mu, nu)] + z[mu_nu(nu, mu)] - dz[pair_0(mu, nu)]).abs());
                r[5] = r[5].max((z[pair_rho(mu, mu, nu)] + z[pair_rho(mu, nu, mu)]).abs());
            }
        }
    }
    r[6] = (z[pair_rho(1, 2, 3)] + z[pair_rho(1, 3, 2)] + z[pair_rho(2, 3, 1)]).abs();
    r
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClosednessReport {
    /// Worst residual of each condition over the samples, relative to `scale`.
    pub residuals: [f64; 7],
    pub scale: f64,
    pub tol: f64,
}

impl ClosednessReport {
    pub fn closed(&self) -> bool {
        self.residuals.iter().all(|&r| r <= self.tol)
    }

    /// Indices of the conditions that fail.
    pub fn violations(&self) -> Vec<usize> {
        (0..7).filter(|&i| self.residuals[i] > self.tol).collect()
    }
}

/// Checks the closedness conditions at the given parameter values.
pub fn check_closedness(zeta: &AdaptedCoefficients, taus: &[f64], tol: f64) -> Result<ClosednessReport> {
    let mut worst = [0.0f64; 7];
    let mut scale: f64 = 1.0;
    for &t in taus {
        let [z, dz] = zeta.with_rate(t)?;
        scale = scale.max(z.max_abs()).max(dz.max_abs());
        for (w, r) in worst.iter_mut().zip(closedness_residuals_at(&z, &dz)) {
            *w = w.max(r);
        }
    }
    Ok(ClosednessReport { residuals: worst.map(|w| w / scale), scale, tol })
}

/// Pairs a current given by adapted coefficients with a form.
pub fn pair_adapted(
    zeta: &AdaptedCoefficients,
    worldline: &Worldline,
    form: &TestForm,
    opts: &QuadOptions,
) -> Result<PairingReport> {
    if !worldline.is_adapted() {
        return Err(Error::NotAdapted);
    }
    let (range, touches_boundary) = crossing(worldline, form)?;
    let Some((lo, hi)) = range else {
        return Ok(PairingReport {
            value: 0.0,
            quadrature_error_estimate: 0.0,
            nodes_used: 0,
            crossing: None,
            touches_boundary: false,
        });
    };
    let r = integrate_vec(
        1,
        |tau, out| {
            let z = zeta.at(tau)?;
            let j = form.jets(&[tau, 0.0, 0.0, 0.0])?;
            let mut s = z[EMPTY_0] * j[0].value;
            for mu in 1..4 {
                s += z[mu_0(mu)] * j[0].grad[mu];
                s += z[empty_nu(mu)] * j[mu].value;
                for nu in 1..4 {
                    s += z[mu_nu(mu, nu)] * j[nu].grad[mu];
                }
            }
            for &(mu, nu) in &SPATIAL_PAIRS {
                s += z[pair_0(mu, nu)] * j[0].hess_at(mu, nu);
                for rho in 1..4 {
                    s += z[pair_rho(mu, nu, rho)] * j[rho].hess_at(mu, nu);
                }
            }
            out[0] = s;
            Ok(())
        },
        lo,
        hi,
        opts,
    )?;
    Ok(PairingReport {
        value: r.values[0],
        quadrature_error_estimate: r.error_estimate,
        nodes_used: r.nodes_used,
        crossing: Some((lo, hi)),
        touches_boundary,
    })
}
