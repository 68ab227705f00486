//! Distributional pairings of multipole currents with test forms.
//!
//! A current supported on a worldline acts on a compactly supported covector
//! field `φ_a` by
//!
//! ```text
//! monopole    q ∫ Ċ^a φ_a dτ
//! dipole      −∫ γ^{ab} ∂_b φ_a dτ
//! quadrupole  ½ ∫ γ^{abc} ∂_b ∂_c φ_a dτ
//! ```
//!
//! These numbers do not depend on the chart, which makes them an independent
//! check on [`crate::transform`]. The classification probes (closedness, order,
//! electric order, charge) are built on the same pairings with specially
//! shaped test forms.

use std::sync::{Arc, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::chart::ChartPair;
use crate::error::{Error, Result};
use crate::expr::{Expr, ExprSet};
use crate::jets::Jet2;
use crate::multipole::{Bundle, DipoleComponents, Monopole, QuadrupoleComponents};
use crate::par::{self, Execution};
use crate::quadrature::{integrate_vec, node_grid, QuadOptions};
use crate::tensor::{Mat4, Tensor3, Vec4};
use crate::worldline::Worldline;

/// Seed used when none is given.
pub const DEFAULT_SEED: u64 = 0x5eed_2024;

/// Pass threshold relative to the probe magnitude.
pub const PASS_FACTOR: f64 = 1e-8;
/// Residuals above this (relative) refute a property.
pub const FAIL_FACTOR: f64 = 1e-4;

/// Panels of the grid used to locate where a worldline crosses a support.
const SCAN_PANELS: usize = 64;

/// An axis-aligned box `|x^a − center^a| < half_widths^a`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SupportBox {
    pub center: Vec4,
    pub half_widths: Vec4,
}

impl SupportBox {
    pub fn new(center: Vec4, half_widths: Vec4) -> Result<Self> {
        for (axis, &w) in half_widths.iter().enumerate() {
            if !(w > 0.0) || !w.is_finite() {
                return Err(Error::DegenerateSupport(w, axis));
            }
        }
        Ok(Self { center, half_widths })
    }

    pub fn contains(&self, x: &Vec4) -> bool {
        (0..4).all(|a| (x[a] - self.center[a]).abs() < self.half_widths[a])
    }

    /// `Π_b bump((x^b − c^b)/w^b)`.
    pub fn bump(&self) -> Expr {
        Expr::product((0..4).map(|b| Expr::bump(&self.scaled(b))))
    }

    /// `(x^b − c^b)/w^b`.
    pub fn scaled(&self, b: usize) -> Expr {
        (Expr::var(b) - Expr::constant(self.center[b])) * (1.0 / self.half_widths[b])
    }

    /// Regular grid of `n^4` interior points.
    pub fn grid(&self, n: usize) -> Vec<Vec4> {
        let u: Vec<f64> = (0..n).map(|i| -0.9 + 1.8 * (i as f64 + 0.5) / n as f64).collect();
        let mut out = Vec::with_capacity(n.pow(4));
        for &a in &u {
            for &b in &u {
                for &c in &u {
                    for &d in &u {
                        let s = [a, b, c, d];
                        out.push(std::array::from_fn(|k| self.center[k] + s[k] * self.half_widths[k]));
                    }
                }
            }
        }
        out
    }
}

/// Where a test form can be nonzero.
#[derive(Clone, Debug)]
pub struct Support {
    /// The box, in the coordinates given by `to_box`.
    pub bounds: SupportBox,
    /// Maps the form's coordinates to the box's; `None` if they agree.
    pub to_box: Option<ChartPair>,
}

impl Support {
    pub fn contains(&self, x: &Vec4) -> bool {
        match &self.to_box {
            None => self.bounds.contains(x),
            Some(pair) => pair.forward.apply(x).is_ok_and(|y| self.bounds.contains(&y)),
        }
    }

    fn sample_points(&self, n: usize) -> Vec<Vec4> {
        let grid = self.bounds.grid(n);
        match &self.to_box {
            None => grid,
            Some(pair) => grid.iter().filter_map(|p| pair.inverse.apply(p).ok()).collect(),
        }
    }

    /// Bounding box of the support in the form's own coordinates, padded by 10%.
    pub fn bounding_box(&self) -> Result<SupportBox> {
        if self.to_box.is_none() {
            return Ok(self.bounds);
        }
        let pts = self.sample_points(6);
        let mut lo = [f64::INFINITY; 4];
        let mut hi = [f64::NEG_INFINITY; 4];
        for p in &pts {
            for k in 0..4 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let center = std::array::from_fn(|k| 0.5 * (lo[k] + hi[k]));
        let hw = std::array::from_fn(|k| (0.55 * (hi[k] - lo[k])).max(1e-9));
        SupportBox::new(center, hw)
    }
}

/// A compactly supported covector field `φ_a(x)`.
#[derive(Clone)]
pub struct TestForm(Arc<FormInner>);

struct FormInner {
    components: [Expr; 4],
    set: ExprSet,
    support: Support,
    norm: OnceLock<Result<f64>>,
}

impl std::fmt::Debug for TestForm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TestForm").field("support", &self.0.support.bounds).finish()
    }
}

impl TestForm {
    /// Components that vanish outside `support`. The caller is responsible for
    /// that; [`make_test_form`] guarantees it.
    pub fn from_components(components: [Expr; 4], support: Support) -> Self {
        let set = ExprSet::new(components.to_vec());
        TestForm(Arc::new(FormInner { components, set, support, norm: OnceLock::new() }))
    }

    pub fn components(&self) -> &[Expr; 4] {
        &self.0.components
    }

    pub fn support(&self) -> &Support {
        &self.0.support
    }

    pub fn eval(&self, x: &Vec4) -> Result<Vec4> {
        let v = self.0.set.eval(x)?;
        Ok([v[0], v[1], v[2], v[3]])
    }

    pub fn jets(&self, x: &Vec4) -> Result<[Jet2; 4]> {
        let j = self.0.set.jet(x)?;
        Ok([j[0], j[1], j[2], j[3]])
    }

    /// Largest value, first or second derivative over a grid of the support.
    pub fn norm(&self) -> Result<f64> {
        self.0
            .norm
            .get_or_init(|| {
                let mut m: f64 = 0.0;
                for p in self.0.support.sample_points(5) {
                    for j in self.jets(&p)? {
                        m = m.max(j.value.abs());
                        m = j.grad.iter().fold(m, |m, g| m.max(g.abs()));
                        m = j.hess.iter().fold(m, |m, h| m.max(h.abs()));
                    }
                }
                Ok(m)
            })
            .clone()
    }

    /// The same form multiplied by `s`.
    pub fn scaled(&self, s: f64) -> TestForm {
        TestForm::from_components(
            self.0.components.clone().map(|c| c * s),
            self.0.support.clone(),
        )
    }
}

/// `φ_a = poly_a · Π_b bump((x^b − c^b)/w^b)`.
pub fn make_test_form(poly: [Expr; 4], support: SupportBox) -> Result<TestForm> {
    let support = SupportBox::new(support.center, support.half_widths)?;
    let bump = support.bump();
    let comps = poly.map(|p| &p * &bump);
    Ok(TestForm::from_components(comps, Support { bounds: support, to_box: None }))
}

/// `φ_a(x) = (∂x̂^b/∂x^a) φ̂_b(x̂(x))` where `x̂ = pair.forward(x)`.
///
/// `form_hat` lives in the coordinates `x̂`. Its support must lie in the
/// domain of `pair.inverse`.
pub fn pull_back_test_form(form_hat: &TestForm, pair: &ChartPair) -> Result<TestForm> {
    if form_hat.support().to_box.is_some() {
        return Err(Error::InvalidParameters("pulling back an already pulled back form".into()));
    }
    let bounds = form_hat.support().bounds;
    for p in bounds.grid(4) {
        pair.inverse.check_domain(&p)?;
    }
    let subs = pair.forward.forward().to_vec();
    let jac = pair.forward.jacobian_exprs();
    let hat: Vec<Expr> = form_hat.components().iter().map(|c| c.substitute(&subs)).collect();
    let comps = std::array::from_fn(|a| Expr::sum((0..4).map(|b| &jac[b][a] * &hat[b])));
    Ok(TestForm::from_components(comps, Support { bounds, to_box: Some(pair.clone()) }))
}

/// Result of one pairing.
#[derive(Clone, Debug, PartialEq)]
pub struct PairingReport {
    pub value: f64,
    pub quadrature_error_estimate: f64,
    pub nodes_used: usize,
    /// Parameter range where the worldline meets the support, if anywhere.
    pub crossing: Option<(f64, f64)>,
    /// Whether the support reaches an end of the worldline, where boundary
    /// terms spoil chart and closedness identities.
    pub touches_boundary: bool,
}

#[derive(Clone, Copy)]
struct Terms<'a> {
    q: f64,
    dipole: Option<&'a DipoleComponents>,
    quadrupole: Option<&'a QuadrupoleComponents>,
}

impl<'a> Terms<'a> {
    fn of(b: &'a Bundle) -> Self {
        Terms {
            q: b.monopole.map_or(0.0, |m| m.q),
            dipole: b.dipole.as_ref(),
            quadrupole: b.quadrupole.as_ref(),
        }
    }
}

pub(crate) fn crossing(worldline: &Worldline, form: &TestForm) -> Result<(Option<(f64, f64)>, bool)> {
    let (a, b) = worldline.interval();
    let mut taus = vec![a];
    taus.extend(node_grid(a, b, SCAN_PANELS));
    taus.push(b);
    let mut first = None;
    let mut last = None;
    for (i, &t) in taus.iter().enumerate() {
        if form.support().contains(&worldline.point(t)?) {
            first.get_or_insert(i);
            last = Some(i);
        }
    }
    let (Some(i), Some(j)) = (first, last) else {
        return Ok((None, false));
    };
    let touches = i == 0 || j == taus.len() - 1;
    let lo = taus[i.saturating_sub(1)];
    let hi = taus[(j + 1).min(taus.len() - 1)];
    Ok((Some((lo, hi)), touches))
}

fn pair_terms(terms: Terms, worldline: &Worldline, form: &TestForm, opts: &QuadOptions) -> Result<PairingReport> {
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
            let (x, v) = worldline.eval(tau)?;
            let j = form.jets(&x)?;
            let mut s = 0.0;
            if terms.q != 0.0 {
                s += terms.q * (0..4).map(|a| v[a] * j[a].value).sum::<f64>();
            }
            if let Some(d) = terms.dipole {
                let g: Mat4 = d.at(tau)?;
                for a in 0..4 {
                    for b in 0..4 {
                        s -= g[a][b] * j[a].grad[b];
                    }
                }
            }
            if let Some(q) = terms.quadrupole {
                let g: Tensor3 = q.at(tau)?;
                for a in 0..4 {
                    for b in 0..4 {
                        for c in 0..4 {
                            s += 0.5 * g[a][b][c] * j[a].hess_at(b, c);
                        }
                    }
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

/// `q ∫ Ċ^a φ_a dτ`.
pub fn pair_monopole(m: &Monopole, worldline: &Worldline, form: &TestForm, opts: &QuadOptions) -> Result<PairingReport> {
    pair_terms(Terms { q: m.q, dipole: None, quadrupole: None }, worldline, form, opts)
}

/// `−∫ γ^{ab} ∂_b φ_a dτ`.
pub fn pair_dipole(
    gamma: &DipoleComponents,
    worldline: &Worldline,
    form: &TestForm,
    opts: &QuadOptions,
) -> Result<PairingReport> {
    pair_terms(Terms { q: 0.0, dipole: Some(gamma), quadrupole: None }, worldline, form, opts)
}

/// `½ ∫ γ^{abc} ∂_b ∂_c φ_a dτ`.
pub fn pair_quadrupole(
    gamma: &QuadrupoleComponents,
    worldline: &Worldline,
    form: &TestForm,
    opts: &QuadOptions,
) -> Result<PairingReport> {
    pair_terms(Terms { q: 0.0, dipole: None, quadrupole: Some(gamma) }, worldline, form, opts)
}

/// Sum of the pairings of every part of the bundle.
pub fn pair_bundle(bundle: &Bundle, worldline: &Worldline, form: &TestForm, opts: &QuadOptions) -> Result<PairingReport> {
    pair_terms(Terms::of(bundle), worldline, form, opts)
}

/// Pairs one bundle with many forms, in parallel when `opts.execution` allows.
pub fn pair_many(
    bundle: &Bundle,
    worldline: &Worldline,
    forms: &[TestForm],
    opts: &QuadOptions,
) -> Result<Vec<PairingReport>> {
    // parallelism is spent across forms, each quadrature runs sequentially
    let inner = opts.with_execution(Execution::Sequential);
    par::try_map(forms, opts.execution, |f| pair_bundle(bundle, worldline, f, &inner))
}

/// `|a − b| / max(|a|, |b|)`, or 0 when both vanish.
pub fn relative_residual(a: f64, b: f64) -> f64 {
    let m = a.abs().max(b.abs());
    if m == 0.0 {
        0.0
    } else {
        (a - b).abs() / m
    }
}

/// Random first degree polynomial centred at `center`.
fn random_poly(rng: &mut ChaCha8Rng, center: &Vec4) -> Expr {
    let mut e = Expr::constant(rng.gen_range(-1.0..1.0));
    for b in 0..4 {
        e = e + Expr::constant(rng.gen_range(-1.0..1.0)) * (Expr::var(b) - Expr::constant(center[b]));
    }
    e
}

/// Random form supported in a box around `center` with half-widths between
/// half and all of `max_half_widths`.
pub fn random_test_form(rng: &mut ChaCha8Rng, center: Vec4, max_half_widths: Vec4) -> Result<TestForm> {
    let hw = max_half_widths.map(|w| w * rng.gen_range(0.5..1.0));
    let poly = std::array::from_fn(|_| random_poly(rng, &center));
    make_test_form(poly, SupportBox::new(center, hw)?)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// What a sampled probe says about a property.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    /// Every probe was below the pass threshold.
    Consistent,
    /// Some probe exceeded the fail threshold.
    Refuted,
    Inconclusive,
}

impl Verdict {
    pub fn from_residual(r: f64) -> Self {
        if r <= PASS_FACTOR {
            Verdict::Consistent
        } else if r > FAIL_FACTOR {
            Verdict::Refuted
        } else {
            Verdict::Inconclusive
        }
    }

    pub fn passed(self) -> bool {
        self == Verdict::Consistent
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeReport {
    pub verdict: Verdict,
    /// Largest `|J[φ]| / (scale · ‖φ‖ · L)` over the probes, with `L` the
    /// crossing length.
    pub residual: f64,
    pub samples: usize,
    pub seed: u64,
}

impl ProbeReport {
    fn new(residual: f64, samples: usize, seed: u64) -> Self {
        Self { verdict: Verdict::from_residual(residual), residual, samples, seed }
    }

    pub fn passed(&self) -> bool {
        self.verdict.passed()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ProbeOptions {
    pub quad: QuadOptions,
    pub samples: usize,
    pub seed: u64,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        Self { quad: QuadOptions::default(), samples: 20, seed: DEFAULT_SEED }
    }
}

fn require_adapted(worldline: &Worldline) -> Result<()> {
    if worldline.is_adapted() {
        Ok(())
    } else {
        Err(Error::NotAdapted)
    }
}

/// Random support box around a point of the worldline, crossed well inside
/// the parameter interval.
fn probe_box(rng: &mut ChaCha8Rng, worldline: &Worldline) -> Result<SupportBox> {
    let (a, b) = worldline.interval();
    let len = b - a;
    let tau = a + len * rng.gen_range(0.4..0.6);
    let mut center = worldline.point(tau)?;
    for c in center.iter_mut().skip(1) {
        *c += rng.gen_range(-0.1..0.1);
    }
    let hw = [
        len * rng.gen_range(0.15..0.3),
        rng.gen_range(0.5..1.0),
        rng.gen_range(0.5..1.0),
        rng.gen_range(0.5..1.0),
    ];
    SupportBox::new(center, hw)
}

fn bundle_scale(bundle: &Bundle, worldline: &Worldline) -> Result<f64> {
    let (a, b) = worldline.interval();
    Ok(bundle.scale(&node_grid(a, b, 4))?.max(f64::MIN_POSITIVE))
}

fn run_probes(
    bundle: &Bundle,
    worldline: &Worldline,
    opts: &ProbeOptions,
    make: impl Fn(&mut ChaCha8Rng) -> Result<TestForm>,
) -> Result<ProbeReport> {
    let mut r = rng(opts.seed);
    let forms = (0..opts.samples).map(|_| make(&mut r)).collect::<Result<Vec<_>>>()?;
    let scale = bundle_scale(bundle, worldline)?;
    let reports = pair_many(bundle, worldline, &forms, &opts.quad)?;
    let mut worst: f64 = 0.0;
    for (form, rep) in forms.iter().zip(&reports) {
        let len = rep.crossing.map_or(1.0, |(lo, hi)| (hi - lo).max(1.0));
        let magnitude = scale * form.norm()? * len;
        if magnitude > 0.0 {
            worst = worst.max(rep.value.abs() / magnitude);
        }
    }
    Ok(ProbeReport::new(worst, opts.samples, opts.seed))
}

/// `λ = (c·z)(1 + small polynomial)` with `z` the spatial coordinates, so
/// that `λ` vanishes on an adapted worldline.
fn vanishing_scalar(rng: &mut ChaCha8Rng) -> Expr {
    let c: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
    let lin = Expr::sum((1..4).map(|m| Expr::constant(c[m - 1]) * Expr::var(m)));
    let wobble = Expr::sum((0..4).map(|m| Expr::constant(0.3 * rng.gen_range(-1.0..1.0)) * Expr::var(m)));
    &lin * &(Expr::one() + wobble * 0.1)
}

/// Checks `J[λ^{k+1} φ] = 0` for random `λ` vanishing on the worldline.
pub fn test_order(bundle: &Bundle, worldline: &Worldline, k: u32, opts: &ProbeOptions) -> Result<ProbeReport> {
    require_adapted(worldline)?;
    run_probes(bundle, worldline, opts, |rng| {
        let bx = probe_box(rng, worldline)?;
        let psi = random_test_form(rng, bx.center, bx.half_widths)?;
        let lam = vanishing_scalar(rng).powf(k as f64 + 1.0);
        let comps = psi.components().clone().map(|c| &lam * &c);
        Ok(TestForm::from_components(comps, psi.support().clone()))
    })
}

/// Checks `J[λ^ℓ dμ] = 0` for random `λ`, `μ` vanishing on the worldline.
pub fn test_electric_order(bundle: &Bundle, worldline: &Worldline, l: u32, opts: &ProbeOptions) -> Result<ProbeReport> {
    require_adapted(worldline)?;
    run_probes(bundle, worldline, opts, |rng| {
        let bx = probe_box(rng, worldline)?;
        let mu = &vanishing_scalar(rng) * &bx.bump();
        let lam = vanishing_scalar(rng).powf(l as f64);
        let comps = std::array::from_fn(|a| &lam * &mu.diff(a));
        Ok(TestForm::from_components(comps, Support { bounds: bx, to_box: None }))
    })
}

/// `dλ` for a compactly supported random scalar `λ`.
fn exact_form(rng: &mut ChaCha8Rng, worldline: &Worldline) -> Result<TestForm> {
    let bx = probe_box(rng, worldline)?;
    let lam = &random_poly(rng, &bx.center) * &bx.bump();
    Ok(TestForm::from_components(
        std::array::from_fn(|a| lam.diff(a)),
        Support { bounds: bx, to_box: None },
    ))
}

/// Checks `J[dλ] = 0` for random compactly supported `λ`.
pub fn test_closed(bundle: &Bundle, worldline: &Worldline, opts: &ProbeOptions) -> Result<ProbeReport> {
    run_probes(bundle, worldline, opts, |rng| exact_form(rng, worldline))
}

/// A charge probe `ψ dλ`: `λ` steps from `lambda0` to `lambda1` in `x^0`
/// across `[t_start, t_end]`; `ψ` is one on a box around the worldline and
/// vanishes outside a larger one.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChargeProbe {
    pub lambda0: f64,
    pub lambda1: f64,
    pub t_start: f64,
    pub t_end: f64,
    /// Shape of the step: 0 for `S(u)`, 1 for `S(u)²(3 − 2 S(u))`.
    pub profile: u8,
    /// Spatial box on which `ψ` is nonzero.
    pub center: [f64; 3],
    pub half_widths: [f64; 3],
    /// Fraction of each half-width on which `ψ = 1`.
    pub plateau: f64,
}

impl ChargeProbe {
    fn lambda(&self) -> Expr {
        let u = (Expr::var(0) - Expr::constant(self.t_start)) * (1.0 / (self.t_end - self.t_start));
        let s = Expr::smooth_step(&u);
        let h = match self.profile {
            0 => s,
            _ => &(&s * &s) * &(Expr::constant(3.0) - s.clone() * 2.0),
        };
        Expr::constant(self.lambda0) + h * (self.lambda1 - self.lambda0)
    }

    fn psi(&self) -> Expr {
        let rho2 = self.plateau * self.plateau;
        Expr::product((1..4).map(|m| {
            let u = (Expr::var(m) - Expr::constant(self.center[m - 1])) * (1.0 / self.half_widths[m - 1]);
            let v = (Expr::one() - u.powf(2.0)) * (1.0 / (1.0 - rho2));
            Expr::smooth_step(&v)
        }))
    }

    pub fn form(&self) -> Result<TestForm> {
        if self.lambda1 == self.lambda0 {
            return Err(Error::DegenerateProbe);
        }
        if !(self.plateau > 0.0 && self.plateau < 1.0) || !(self.t_start < self.t_end) {
            return Err(Error::InvalidParameters("charge probe needs 0 < plateau < 1 and t_start < t_end".into()));
        }
        let lam = self.lambda();
        let psi = self.psi();
        let mid = 0.5 * (self.t_start + self.t_end);
        let bounds = SupportBox::new(
            [mid, self.center[0], self.center[1], self.center[2]],
            [
                0.5 * (self.t_end - self.t_start) * 1.0001,
                self.half_widths[0],
                self.half_widths[1],
                self.half_widths[2],
            ],
        )?;
        Ok(TestForm::from_components(
            std::array::from_fn(|a| &psi * &lam.diff(a)),
            Support { bounds, to_box: None },
        ))
    }

    /// Probes whose plateau covers the worldline while `x^0` crosses the step.
    /// Each uses a different window, profile, plateau and box.
    pub fn family(worldline: &Worldline, count: usize, seed: u64) -> Result<Vec<ChargeProbe>> {
        let mut r = rng(seed);
        let (a, b) = worldline.interval();
        let t0 = worldline.point(a)?[0];
        let t1 = worldline.point(b)?[0];
        if !(t1 > t0) {
            return Err(Error::InvalidParameters("charge probes need x^0 to increase along the worldline".into()));
        }
        let span = t1 - t0;
        (0..count)
            .map(|i| {
                let start = t0 + span * r.gen_range(0.2..0.35);
                let end = t0 + span * r.gen_range(0.6..0.8);
                // spatial extent of the worldline over the window
                let mut lo = [f64::INFINITY; 3];
                let mut hi = [f64::NEG_INFINITY; 3];
                for tau in node_grid(a, b, SCAN_PANELS) {
                    let p = worldline.point(tau)?;
                    if p[0] >= start - 0.01 * span && p[0] <= end + 0.01 * span {
                        for m in 0..3 {
                            lo[m] = lo[m].min(p[m + 1]);
                            hi[m] = hi[m].max(p[m + 1]);
                        }
                    }
                }
                let plateau = r.gen_range(0.4..0.7);
                let center = std::array::from_fn(|m| 0.5 * (lo[m] + hi[m]) + r.gen_range(-0.05..0.05));
                let half_widths = std::array::from_fn(|m| {
                    let need = 0.5 * (hi[m] - lo[m]) + 0.1;
                    need / plateau * r.gen_range(1.2..2.0)
                });
                Ok(ChargeProbe {
                    lambda0: r.gen_range(-1.0..1.0),
                    lambda1: r.gen_range(1.5..3.0),
                    t_start: start,
                    t_end: end,
                    profile: (i % 2) as u8,
                    center,
                    half_widths,
                    plateau,
                })
            })
            .collect()
    }
}

/// `J[ψ dλ] / (λ1 − λ0)`.
pub fn extract_charge(bundle: &Bundle, worldline: &Worldline, probe: &ChargeProbe, opts: &QuadOptions) -> Result<f64> {
    let form = probe.form()?;
    Ok(pair_bundle(bundle, worldline, &form, opts)?.value / (probe.lambda1 - probe.lambda0))
}

/// Charges from several probes, with the largest spread between them.
#[derive(Clone, Debug, PartialEq)]
pub struct ChargeReport {
    pub charges: Vec<f64>,
    pub spread: f64,
    pub seed: u64,
}

impl ChargeReport {
    pub fn mean(&self) -> f64 {
        self.charges.iter().sum::<f64>() / self.charges.len().max(1) as f64
    }
}

pub fn charge_survey(bundle: &Bundle, worldline: &Worldline, count: usize, seed: u64, opts: &QuadOptions) -> Result<ChargeReport> {
    let probes = ChargeProbe::family(worldline, count, seed)?;
    let inner = opts.with_execution(Execution::Sequential);
    let charges = par::try_map(&probes, opts.execution, |p| extract_charge(bundle, worldline, p, &inner))?;
    let max = charges.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = charges.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(ChargeReport { spread: max - min, charges, seed })
}

/// Random forms for chart comparisons: supported around `worldline_hat` at
/// fractions of its interval, in the coordinates of `worldline_hat`.
pub fn random_forms_along(
    worldline_hat: &Worldline,
    count: usize,
    max_half_widths: Vec4,
    seed: u64,
) -> Result<Vec<TestForm>> {
    let mut r = rng(seed);
    let (a, b) = worldline_hat.interval();
    (0..count)
        .map(|_| {
            let tau = a + (b - a) * r.gen_range(0.4..0.6);
            let mut center = worldline_hat.point(tau)?;
            for c in center.iter_mut().skip(1) {
                *c += r.gen_range(-0.05..0.05);
            }
            random_test_form(&mut r, center, max_half_widths)
        })
        .collect()
}

/// Linear in the bundle: used by property tests.
pub fn scaled_bundle(b: &Bundle, s: f64) -> Bundle {
    Bundle {
        monopole: b.monopole.map(|m| Monopole { q: m.q * s }),
        dipole: b.dipole.as_ref().map(|d| d.scaled(s)),
        quadrupole: b.quadrupole.as_ref().map(|q| q.scaled(s)),
    }
}
