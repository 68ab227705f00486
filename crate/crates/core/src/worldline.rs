//! Parametrized curves `C^a(τ)` and their reparametrizations.

use std::fmt;
use std::sync::Arc;

use crate::chart::Chart;
use crate::error::{Error, Result};
use crate::expr::{Expr, ExprSet, VarNames};
use crate::quadrature::node_grid;
use crate::tensor::{Taylor, Vec4};

/// Panels of the node grid used for regularity and domain checks.
pub const CHECK_PANELS: usize = 16;

#[derive(Clone)]
pub struct Worldline(Arc<Inner>);

struct Inner {
    components: [Expr; 4],
    start: f64,
    end: f64,
    set: ExprSet,
}

impl fmt::Debug for Worldline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let comps: Vec<String> = self
            .0
            .components
            .iter()
            .map(|e| e.display(VarNames::Tau).to_string())
            .collect();
        f.debug_struct("Worldline")
            .field("components", &comps)
            .field("interval", &(self.0.start, self.0.end))
            .finish()
    }
}

impl Worldline {
    /// A curve given by four functions of `τ` (variable 0) on `[start, end]`.
    pub fn new(components: [Expr; 4], start: f64, end: f64) -> Result<Self> {
        if !(start < end) || !start.is_finite() || !end.is_finite() {
            return Err(Error::BadInterval { start, end });
        }
        if let Some(i) = (1..4).find(|&i| components.iter().any(|c| c.depends_on(i))) {
            return Err(Error::InvalidParameters(format!(
                "worldline components may only depend on τ, found variable x{i}"
            )));
        }
        let set = ExprSet::new(components.to_vec());
        Ok(Worldline(Arc::new(Inner { components, start, end, set })))
    }

    /// `C(τ) = (τ, 0, 0, 0)`.
    pub fn adapted(start: f64, end: f64) -> Result<Self> {
        Self::new([Expr::tau(), Expr::zero(), Expr::zero(), Expr::zero()], start, end)
    }

    /// `C(τ) = (τ, x^1, x^2, x^3)` for a fixed spatial point.
    pub fn static_at(point: [f64; 3], start: f64, end: f64) -> Result<Self> {
        Self::new(
            [
                Expr::tau(),
                Expr::constant(point[0]),
                Expr::constant(point[1]),
                Expr::constant(point[2]),
            ],
            start,
            end,
        )
    }

    pub fn components(&self) -> &[Expr; 4] {
        &self.0.components
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.0.start, self.0.end)
    }

    /// Whether the components are literally `(τ, 0, 0, 0)`.
    pub fn is_adapted(&self) -> bool {
        let c = &self.0.components;
        *c[0].node() == *Expr::tau().node() && c[1..].iter().all(Expr::is_zero)
    }

    fn check_tau(&self, tau: f64) -> Result<()> {
        let slack = 1e-12 * (self.0.end - self.0.start).max(1.0);
        if tau < self.0.start - slack || tau > self.0.end + slack || tau.is_nan() {
            return Err(Error::OutsideInterval { tau, start: self.0.start, end: self.0.end });
        }
        Ok(())
    }

    pub fn point(&self, tau: f64) -> Result<Vec4> {
        self.check_tau(tau)?;
        let v = self.0.set.eval_tau(tau)?;
        Ok([v[0], v[1], v[2], v[3]])
    }

    /// Position and velocity from one jet pass.
    pub fn eval(&self, tau: f64) -> Result<(Vec4, Vec4)> {
        let t = self.taylor(tau)?;
        Ok((t.map(|c| c[0]), t.map(|c| c[1])))
    }

    /// Position with its first two `τ`-derivatives, per component.
    pub fn taylor(&self, tau: f64) -> Result<[Taylor; 4]> {
        self.check_tau(tau)?;
        let j = self.0.set.jet_tau(tau)?;
        Ok([j[0], j[1], j[2], j[3]])
    }

    pub fn velocity_exprs(&self) -> [Expr; 4] {
        std::array::from_fn(|a| self.0.components[a].diff(0))
    }

    /// Fails at the first check node where the velocity vanishes.
    pub fn check_regular(&self) -> Result<()> {
        for tau in node_grid(self.0.start, self.0.end, CHECK_PANELS) {
            let (_, v) = self.eval(tau)?;
            if v.iter().all(|c| *c == 0.0) || v.iter().any(|c| !c.is_finite()) {
                return Err(Error::IrregularWorldline { tau });
            }
        }
        Ok(())
    }

    /// The image curve `τ -> x̂(C(τ))`. The chart's domain is checked at the
    /// grid nodes and at both endpoints.
    pub fn push_through_chart(&self, chart: &Chart) -> Result<Worldline> {
        let (a, b) = self.interval();
        let mut taus = node_grid(a, b, CHECK_PANELS);
        taus.push(a);
        taus.push(b);
        for tau in taus {
            chart.check_domain(&self.point(tau)?)?;
        }
        let subs = self.0.components.to_vec();
        let comps = std::array::from_fn(|i| chart.forward()[i].substitute(&subs));
        Worldline::new(comps, a, b)
    }

    /// The same curve in the new parameter `τ̂`, `C(τ(τ̂))`.
    pub fn reparametrize(&self, rep: &Reparametrization) -> Result<Worldline> {
        let (a, b) = self.interval();
        let (ah, bh) = rep.interval_hat();
        let ta = rep.map().eval_tau(ah)?;
        let tb = rep.map().eval_tau(bh)?;
        let tol = 1e-10 * (b - a).abs().max(1.0);
        if (ta - a).abs() > tol || (tb - b).abs() > tol {
            return Err(Error::InvalidParameters(format!(
                "reparametrization maps [{ah}, {bh}] to [{ta}, {tb}], expected [{a}, {b}]"
            )));
        }
        let subs = [rep.map().clone(), Expr::zero(), Expr::zero(), Expr::zero()];
        let comps = std::array::from_fn(|i| self.0.components[i].substitute(&subs));
        Worldline::new(comps, ah, bh)
    }
}

/// An orientation preserving change of parameter `τ = τ(τ̂)`.
#[derive(Clone, Debug)]
pub struct Reparametrization {
    map: Expr,
    rate: Expr,
    start: f64,
    end: f64,
}

impl Reparametrization {
    /// `map` is `τ` as a function of `τ̂` (variable 0) on `[start, end]`.
    pub fn new(map: Expr, start: f64, end: f64) -> Result<Self> {
        if !(start < end) {
            return Err(Error::BadInterval { start, end });
        }
        let rate = map.diff(0);
        for tau_hat in node_grid(start, end, CHECK_PANELS).into_iter().chain([start, end]) {
            let r = rate.eval_tau(tau_hat)?;
            if !(r > 0.0) {
                return Err(Error::BadReparametrization { tau_hat, rate: r });
            }
        }
        Ok(Self { map, rate, start, end })
    }

    /// Affine map taking `[start, end]` onto `[tau0, tau1]`.
    pub fn affine(start: f64, end: f64, tau0: f64, tau1: f64) -> Result<Self> {
        let s = (tau1 - tau0) / (end - start);
        Self::new(Expr::constant(tau0) + Expr::constant(s) * (Expr::tau() - Expr::constant(start)), start, end)
    }

    pub fn map(&self) -> &Expr {
        &self.map
    }

    pub fn interval_hat(&self) -> (f64, f64) {
        (self.start, self.end)
    }

    pub fn tau(&self, tau_hat: f64) -> Result<f64> {
        self.map.eval_tau(tau_hat)
    }

    /// `τ(τ̂)` with its first three derivatives.
    pub fn series(&self, tau_hat: f64) -> Result<[f64; 4]> {
        let (t0, t1, t2) = self.map.jet_tau(tau_hat)?;
        let (_, _, r2) = self.rate.jet_tau(tau_hat)?;
        Ok([t0, t1, t2, r2])
    }
}
