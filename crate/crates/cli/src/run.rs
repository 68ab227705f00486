//! Executes scene jobs and assembles their reports.

use std::fmt::Write as _;

use multipole_core::expr::{Parser, VarNames};
use multipole_core::fields::{log_radii, loglog_slope, ray, StaticSource};
use multipole_core::multipole::{Bundle, DipoleComponents};
use multipole_core::pairing::{
    charge_survey, pair_bundle, pull_back_test_form, random_forms_along, relative_residual, test_closed,
    test_electric_order, test_order, ProbeOptions, ProbeReport, Verdict, DEFAULT_SEED,
};
use multipole_core::par::{self, Execution};
use multipole_core::quadrature::QuadOptions;
use multipole_core::tensor::{quadrupole_defect, Mat4};
use multipole_core::transform::{transform_dipole, transform_quadrupole, TransformOptions, TransportResult, PAIRS};
use multipole_core::worldline::Worldline;
use serde_json::{json, Value};

use crate::scene::{expectation_params, Command, Expected, Job, Part, Scene, Target};

pub const TRANSFORM_TOL: f64 = 1e-9;
pub const VERIFY_TOL: f64 = 1e-6;
pub const CHARGE_TOL: f64 = 1e-8;
pub const EXPONENT_TOL: f64 = 0.01;
/// Components whose samples all stay below this are left out of transform
/// reports.
pub const NEGLIGIBLE: f64 = 1e-13;

/// Flag overrides applied on top of each job's own settings.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub kappa0: Option<Mat4>,
    pub tol: Option<f64>,
    pub seed: Option<u64>,
    pub samples: Option<usize>,
    pub parallel: bool,
    /// Run only jobs of this kind.
    pub command: Option<Command>,
}

impl RunOptions {
    fn execution(&self) -> Execution {
        if self.parallel {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct JobReport {
    pub index: usize,
    pub command: Command,
    pub multipole: String,
    pub checks: Vec<Check>,
    pub error: Option<String>,
    pub body: String,
    pub data: Value,
    pub csv: Option<String>,
}

impl JobReport {
    pub fn passed(&self) -> bool {
        self.error.is_none() && self.checks.iter().all(|c| c.passed)
    }

    /// File stem used for this job's report files.
    pub fn stem(&self) -> String {
        format!("{:02}_{}_{}", self.index, self.command, self.multipole)
    }

    pub fn text(&self) -> String {
        let mut s = format!(
            "job {} ({} on {}): {}\n",
            self.index,
            self.command,
            self.multipole,
            if self.passed() { "PASS" } else { "FAIL" }
        );
        if let Some(e) = &self.error {
            let _ = writeln!(s, "  error: {e}");
        }
        for c in &self.checks {
            let _ = writeln!(s, "  [{}] {}: {}", if c.passed { "pass" } else { "FAIL" }, c.name, c.detail);
        }
        if !self.body.is_empty() {
            s.push('\n');
            s.push_str(&self.body);
        }
        s
    }

    pub fn json(&self) -> Value {
        json!({
            "index": self.index,
            "command": self.command,
            "multipole": self.multipole,
            "passed": self.passed(),
            "error": self.error,
            "checks": self.checks.iter().map(|c| json!({"name": c.name, "passed": c.passed, "detail": c.detail})).collect::<Vec<_>>(),
            "data": self.data,
        })
    }
}

/// Runs the selected jobs. Reports come back in scene order whether or not
/// jobs ran concurrently.
pub fn run(scene: &Scene, opts: &RunOptions) -> Vec<JobReport> {
    let selected: Vec<(usize, &Job)> = scene
        .jobs
        .iter()
        .enumerate()
        .filter(|(_, j)| opts.command.is_none_or(|c| c == j.decl.command))
        .collect();
    par::map(&selected, opts.execution(), |&(i, job)| run_job(scene, i, job, opts))
}

/// Summary of a whole run, as text and JSON.
pub fn summary(reports: &[JobReport], opts: &RunOptions) -> (String, Value) {
    let failed = reports.iter().filter(|r| !r.passed()).count();
    let mut text = String::new();
    for r in reports {
        let _ = writeln!(
            text,
            "{} job {:02} {} {}",
            if r.passed() { "PASS" } else { "FAIL" },
            r.index,
            r.command,
            r.multipole
        );
    }
    let _ = writeln!(text, "{} jobs, {} passed, {} failed", reports.len(), reports.len() - failed, failed);
    let flags = json!({
        "kappa0": opts.kappa0.map(|k| PAIRS.iter().map(|&(d, e)| k[d][e]).collect::<Vec<_>>()),
        "tol": opts.tol,
        "seed": opts.seed,
        "samples": opts.samples,
        "command": opts.command,
    });
    let value = json!({
        "flags": flags,
        "jobs": reports.iter().map(|r| json!({"index": r.index, "command": r.command, "multipole": r.multipole, "passed": r.passed(), "report": r.stem()})).collect::<Vec<_>>(),
        "passed": failed == 0,
    });
    (text, value)
}

struct Ctx<'a> {
    scene: &'a Scene,
    job: &'a Job,
    bundle: &'a Bundle,
    worldline: &'a Worldline,
    kappa0: Mat4,
    tol: Option<f64>,
    seed: u64,
    samples: Option<usize>,
    quad: QuadOptions,
}

struct Outcome {
    checks: Vec<Check>,
    body: String,
    data: Value,
    csv: Option<String>,
}

fn run_job(scene: &Scene, index: usize, job: &Job, opts: &RunOptions) -> JobReport {
    let name = &job.decl.multipole;
    let ctx = Ctx {
        scene,
        job,
        bundle: &scene.multipoles[name].bundle,
        worldline: scene.worldline_of(name),
        kappa0: opts.kappa0.unwrap_or(job.kappa0),
        tol: opts.tol.or(job.decl.tol),
        seed: opts.seed.or(job.decl.seed).unwrap_or(DEFAULT_SEED),
        samples: opts.samples.or(job.decl.samples),
        quad: QuadOptions::default().with_execution(opts.execution()),
    };
    let result = match job.decl.command {
        Command::Transform => transform_job(&ctx),
        Command::Verify => verify_job(&ctx),
        Command::Classify => classify_job(&ctx),
        Command::Charge => charge_job(&ctx),
        Command::Potentials => potentials_job(&ctx),
    };
    let mut report = JobReport {
        index,
        command: job.decl.command,
        multipole: name.clone(),
        checks: vec![],
        error: None,
        body: String::new(),
        data: Value::Null,
        csv: None,
    };
    match result {
        Ok(o) => {
            report.checks = o.checks;
            report.body = o.body;
            report.data = o.data;
            report.csv = o.csv;
        }
        Err(e) => report.error = Some(e),
    }
    report
}

type JobResult = Result<Outcome, String>;

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

fn num(x: f64) -> String {
    format!("{x:.12e}")
}

fn grid(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (a + b)];
    }
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

/// Least-squares line `slope·t + intercept` and the largest deviation from it.
fn line_fit(ts: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = ts.len() as f64;
    let mt = ts.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let stt: f64 = ts.iter().map(|t| (t - mt) * (t - mt)).sum();
    let sty: f64 = ts.iter().zip(ys).map(|(t, y)| (t - mt) * (y - my)).sum();
    let slope = if stt > 0.0 { sty / stt } else { 0.0 };
    let intercept = my - slope * mt;
    let dev = ts.iter().zip(ys).map(|(t, y)| (y - slope * t - intercept).abs()).fold(0.0, f64::max);
    (slope, intercept, dev)
}

fn transport(ctx: &Ctx, chart_name: &str) -> Result<(Option<TransportResult>, Option<DipoleComponents>, Worldline), String> {
    let chart = ctx.scene.charts[chart_name].chart();
    let rep = ctx.job.reparametrization.as_ref();
    let topts = TransformOptions { quad: ctx.quad, kappa0: ctx.kappa0 };
    let quad = match &ctx.bundle.quadrupole {
        Some(g) => Some(transform_quadrupole(g, chart, ctx.worldline, rep, &topts).map_err(e)?),
        None => None,
    };
    let dip = match &ctx.bundle.dipole {
        Some(d) => Some(transform_dipole(d, chart, ctx.worldline, rep).map_err(e)?),
        None => None,
    };
    let w_hat = match &quad {
        Some(t) => t.worldline_hat().clone(),
        None => {
            let mut w = ctx.worldline.push_through_chart(chart).map_err(e)?;
            if let Some(r) = rep {
                w = w.reparametrize(r).map_err(e)?;
            }
            w
        }
    };
    Ok((quad, dip, w_hat))
}

struct Series {
    key: String,
    against: &'static str,
    values: Vec<f64>,
}

fn transform_job(ctx: &Ctx) -> JobResult {
    let chart = ctx.job.decl.chart.as_deref().expect("validated");
    let tol = ctx.tol.unwrap_or(TRANSFORM_TOL);
    let n = ctx.samples.unwrap_or(20).max(2);
    let (quad, dip, w_hat) = transport(ctx, chart)?;
    let (a, b) = w_hat.interval();
    let taus_hat = grid(a, b, n);
    let taus: Vec<f64> = match &ctx.job.reparametrization {
        Some(r) => taus_hat.iter().map(|&t| r.tau(t)).collect::<Result<_, _>>().map_err(e)?,
        None => taus_hat.clone(),
    };
    let mut series: Vec<Series> = Vec::new();
    let mut checks = Vec::new();
    let mut symmetry = 0.0f64;
    if let Some(tr) = &quad {
        let ps: Vec<Mat4> = taus.iter().map(|&t| tr.p_at(t)).collect::<Result<_, _>>().map_err(e)?;
        let dps: Vec<Mat4> = taus_hat.iter().map(|&t| tr.dipole_part().at(t)).collect::<Result<_, _>>().map_err(e)?;
        let gs: Vec<_> = taus_hat.iter().map(|&t| tr.gamma_hat().at(t)).collect::<Result<_, _>>().map_err(e)?;
        for &(d, f) in &PAIRS {
            series.push(Series { key: format!("P^{d}{f}"), against: "tau", values: ps.iter().map(|m| m[d][f]).collect() });
        }
        for &(d, f) in &PAIRS {
            series.push(Series {
                key: format!("dipole_part^{d}{f}"),
                against: "tau_hat",
                values: dps.iter().map(|m| m[d][f]).collect(),
            });
        }
        for i in 0..64 {
            let (x, y, z) = (i / 16, (i / 4) % 4, i % 4);
            series.push(Series {
                key: format!("gamma^{x}{y}{z}"),
                against: "tau_hat",
                values: gs.iter().map(|g| g[x][y][z]).collect(),
            });
        }
        let scale = gs.iter().flat_map(|g| g.iter().flatten().flatten()).fold(1.0f64, |m, v| m.max(v.abs()));
        for g in &gs {
            symmetry = symmetry.max(quadrupole_defect(g).0 / scale);
        }
        checks.push(Check {
            name: "symmetries of gamma_hat".into(),
            passed: symmetry <= tol,
            detail: format!("largest relative defect {symmetry:.3e} over {n} samples"),
        });
    }
    if let Some(d) = &dip {
        let ds: Vec<Mat4> = taus_hat.iter().map(|&t| d.at(t)).collect::<Result<_, _>>().map_err(e)?;
        for &(x, y) in &PAIRS {
            series.push(Series { key: format!("dipole^{x}{y}"), against: "tau_hat", values: ds.iter().map(|m| m[x][y]).collect() });
        }
    }

    // expectations are re-read with the integration constant in force
    let params = expectation_params(&ctx.scene.file.parameters.iter().map(|(k, v)| (k.clone(), *v)).collect(), &ctx.kappa0);
    for (src, target) in &ctx.job.expectations {
        let key = target_key(*target);
        let expr = Parser::new(VarNames::Tau, &params).parse(src).map_err(e)?;
        let Some(s) = series.iter().find(|s| s.key == key) else {
            checks.push(Check { name: format!("{key} = {src}"), passed: false, detail: "not produced by this transform".into() });
            continue;
        };
        let ts = if s.against == "tau" { &taus } else { &taus_hat };
        let mut worst = 0.0f64;
        for (t, v) in ts.iter().zip(&s.values) {
            let want = expr.eval_tau(*t).map_err(e)?;
            worst = worst.max((v - want).abs() / want.abs().max(1.0));
        }
        checks.push(Check {
            name: format!("{key} = {src}"),
            passed: worst <= tol,
            detail: format!("largest deviation {worst:.3e} over {n} samples (tol {tol:.1e})"),
        });
    }

    let mut body = format!("chart {chart}, kappa0 {}\n", kappa0_text(&ctx.kappa0));
    let mut fits = Vec::new();
    body.push_str("linear fits (slope * t + intercept, largest deviation from the line):\n");
    for s in &series {
        let top = s.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if top <= NEGLIGIBLE {
            continue;
        }
        let ts = if s.against == "tau" { &taus } else { &taus_hat };
        let (slope, intercept, dev) = line_fit(ts, &s.values);
        let sign = if intercept < 0.0 { '-' } else { '+' };
        let _ = writeln!(body, "  {:<16} {} {} {sign} {}  (dev {:.3e})", s.key, num(slope), s.against, num(intercept.abs()), dev);
        fits.push(json!({"component": s.key, "against": s.against, "slope": slope, "intercept": intercept, "deviation": dev}));
    }
    let table: Vec<Value> = (0..n)
        .map(|i| {
            let mut row = serde_json::Map::new();
            row.insert("tau_hat".into(), json!(taus_hat[i]));
            row.insert("tau".into(), json!(taus[i]));
            for s in &series {
                if s.values.iter().any(|v| v.abs() > NEGLIGIBLE) {
                    row.insert(s.key.clone(), json!(s.values[i]));
                }
            }
            Value::Object(row)
        })
        .collect();
    let data = json!({
        "chart": chart,
        "kappa0": PAIRS.iter().map(|&(d, f)| ctx.kappa0[d][f]).collect::<Vec<_>>(),
        "quadrature_error_estimate": quad.as_ref().map(|t| t.quadrature_error_estimate()),
        "fits": fits,
        "samples": table,
    });
    Ok(Outcome { checks, body, data, csv: None })
}

fn target_key(t: Target) -> String {
    match t {
        Target::P(d, e) => format!("P^{d}{e}"),
        Target::DipolePart(d, e) => format!("dipole_part^{d}{e}"),
        Target::Dipole(a, b) => format!("dipole^{a}{b}"),
        Target::Gamma(a, b, c) => format!("gamma^{a}{b}{c}"),
    }
}

fn kappa0_text(k: &Mat4) -> String {
    PAIRS.iter().map(|&(d, e)| format!("{d}{e}={}", k[d][e])).collect::<Vec<_>>().join(",")
}

fn verify_job(ctx: &Ctx) -> JobResult {
    let chart = ctx.job.decl.chart.as_deref().expect("validated");
    let pair = ctx.scene.charts[chart].pair().expect("validated");
    let tol = ctx.tol.unwrap_or(VERIFY_TOL);
    let n = ctx.samples.unwrap_or(20);
    let hw = ctx.job.decl.half_widths.unwrap_or([1.5, 0.5, 0.5, 0.5]);
    let (quad, dip, w_hat) = transport(ctx, chart)?;
    let hatted = Bundle {
        monopole: ctx.bundle.monopole,
        dipole: dip,
        quadrupole: quad.map(|t| t.gamma_hat().clone()),
    };
    let forms = random_forms_along(&w_hat, n, hw, ctx.seed).map_err(e)?;
    let inner = ctx.quad.with_execution(Execution::Sequential);
    let rows = par::try_map(&forms, ctx.quad.execution, |f_hat| {
        let f = pull_back_test_form(f_hat, pair)?;
        let v = pair_bundle(ctx.bundle, ctx.worldline, &f, &inner)?.value;
        let v_hat = pair_bundle(&hatted, &w_hat, f_hat, &inner)?.value;
        Ok::<_, multipole_core::Error>((v, v_hat, relative_residual(v, v_hat)))
    })
    .map_err(e)?;
    let worst = rows.iter().map(|r| r.2).fold(0.0, f64::max);
    let missed = rows.iter().filter(|r| r.0 == 0.0 && r.1 == 0.0).count();
    let mut body = format!("chart {chart}, seed {}, {n} random test forms\n", ctx.seed);
    let _ = writeln!(body, "{:>4}  {:>22}  {:>22}  {:>10}", "form", "original chart", "new chart", "residual");
    for (i, (v, vh, r)) in rows.iter().enumerate() {
        let _ = writeln!(body, "{i:>4}  {:>22}  {:>22}  {r:>10.3e}", num(*v), num(*vh));
    }
    let mut checks = vec![Check {
        name: "pairings agree across charts".into(),
        passed: worst <= tol,
        detail: format!("largest relative residual {worst:.3e} over {n} forms (tol {tol:.1e})"),
    }];
    if missed > 0 {
        checks.push(Check {
            name: "forms meet the worldline".into(),
            passed: false,
            detail: format!("{missed} of {n} forms pair to zero in both charts"),
        });
    }
    let data = json!({
        "chart": chart,
        "seed": ctx.seed,
        "half_widths": hw,
        "rows": rows.iter().map(|(v, vh, r)| json!({"original": v, "transformed": vh, "residual": r})).collect::<Vec<_>>(),
    });
    Ok(Outcome { checks, body, data, csv: None })
}

fn highest_order(b: &Bundle) -> u32 {
    if b.quadrupole.is_some() {
        2
    } else if b.dipole.is_some() {
        1
    } else {
        0
    }
}

fn expected_verdict(x: Expected) -> Verdict {
    match x {
        Expected::Consistent => Verdict::Consistent,
        Expected::Refuted => Verdict::Refuted,
        Expected::Inconclusive => Verdict::Inconclusive,
    }
}

fn verdict_word(v: Verdict) -> &'static str {
    match v {
        Verdict::Consistent => "consistent",
        Verdict::Refuted => "refuted",
        Verdict::Inconclusive => "inconclusive",
    }
}

fn pass_word(b: bool) -> &'static str {
    if b {
        "pass"
    } else {
        "fail"
    }
}

fn probe_json(r: &ProbeReport) -> Value {
    json!({"verdict": verdict_word(r.verdict), "residual": r.residual, "samples": r.samples, "seed": r.seed})
}

fn classify_job(ctx: &Ctx) -> JobResult {
    let k = ctx.job.decl.order.unwrap_or_else(|| highest_order(ctx.bundle));
    let l = ctx.job.decl.electric_order.unwrap_or(k);
    let expect = &ctx.job.decl.expect;
    let po = ProbeOptions { quad: ctx.quad, samples: ctx.samples.unwrap_or(20), seed: ctx.seed };
    let tol = ctx.tol.unwrap_or(CHARGE_TOL);

    let closed = test_closed(ctx.bundle, ctx.worldline, &po).map_err(e)?;
    let charges = charge_survey(ctx.bundle, ctx.worldline, 5, ctx.seed, &ctx.quad).map_err(e)?;
    let (a, b) = ctx.worldline.interval();
    let scale = ctx.bundle.scale(&grid(a, b, 9)).map_err(e)?.max(1.0);
    let free = charges.mean().abs() <= tol * scale;
    let order = test_order(ctx.bundle, ctx.worldline, k, &po).map_err(e)?;
    let electric = test_electric_order(ctx.bundle, ctx.worldline, l, &po).map_err(e)?;

    let mut checks = Vec::new();
    let want_closed = expect.closed.unwrap_or(true);
    checks.push(Check {
        name: "closed".into(),
        passed: closed.passed() == want_closed,
        detail: format!("{} (residual {:.3e}, expected {})", pass_word(closed.passed()), closed.residual, pass_word(want_closed)),
    });
    let want_free = expect.monopole_free.unwrap_or(true);
    checks.push(Check {
        name: "monopole-free".into(),
        passed: free == want_free,
        detail: format!("{} (charge {:.3e}, expected {})", pass_word(free), charges.mean(), pass_word(want_free)),
    });
    for (name, rep, want) in [
        (format!("order ≤ {k}"), &order, expect.order),
        (format!("electric order ≤ {l}"), &electric, expect.electric_order),
    ] {
        let want = want.map_or(Verdict::Consistent, expected_verdict);
        checks.push(Check {
            name,
            passed: rep.verdict == want,
            detail: format!("{} (residual {:.3e}, expected {})", verdict_word(rep.verdict), rep.residual, verdict_word(want)),
        });
    }
    let body = format!(
        "closed: {}; monopole-free: {}; order ≤ {k}: {}; electric order ≤ {l}: {}\n",
        pass_word(closed.passed()),
        pass_word(free),
        verdict_word(order.verdict),
        verdict_word(electric.verdict)
    );
    let data = json!({
        "closed": probe_json(&closed),
        "monopole_free": {"passed": free, "charges": charges.charges, "seed": charges.seed},
        "order": {"k": k, "probe": probe_json(&order)},
        "electric_order": {"l": l, "probe": probe_json(&electric)},
    });
    Ok(Outcome { checks, body, data, csv: None })
}

fn charge_job(ctx: &Ctx) -> JobResult {
    let n = ctx.samples.unwrap_or(5);
    let tol = ctx.tol.unwrap_or(CHARGE_TOL);
    let rep = charge_survey(ctx.bundle, ctx.worldline, n, ctx.seed, &ctx.quad).map_err(e)?;
    let mean = rep.mean();
    let mut checks = vec![Check {
        name: "probes agree".into(),
        passed: rep.spread <= tol * mean.abs().max(1.0),
        detail: format!("spread {:.3e} over {n} probes", rep.spread),
    }];
    if let Some(q) = ctx.job.decl.expect.charge {
        let dev = (mean - q).abs();
        checks.push(Check {
            name: format!("charge = {q}"),
            passed: dev <= tol * q.abs().max(1.0),
            detail: format!("measured {} (deviation {dev:.3e})", num(mean)),
        });
    }
    let mut body = format!("seed {}, {n} probes\n", ctx.seed);
    for (i, q) in rep.charges.iter().enumerate() {
        let _ = writeln!(body, "  probe {i:>2}: {}", num(*q));
    }
    let _ = writeln!(body, "  mean    : {}", num(mean));
    let data = json!({"seed": rep.seed, "charges": rep.charges, "mean": mean, "spread": rep.spread});
    Ok(Outcome { checks, body, data, csv: None })
}

fn sources_from(
    monopole: Option<f64>,
    dipoles: &[Mat4],
    quadrupole: Option<&multipole_core::tensor::Tensor3>,
    parts: &[Part],
) -> Vec<StaticSource> {
    let mut out = Vec::new();
    if parts.contains(&Part::Monopole) {
        if let Some(q) = monopole {
            out.push(StaticSource::Monopole { q });
        }
    }
    if parts.contains(&Part::Dipole) {
        for d in dipoles {
            out.extend(StaticSource::from_dipole(d));
        }
    }
    if parts.contains(&Part::Quadrupole) {
        if let Some(g) = quadrupole {
            out.extend(StaticSource::from_quadrupole(g));
        }
    }
    out
}

fn potentials_job(ctx: &Ctx) -> JobResult {
    let parts = ctx.job.decl.parts.clone().unwrap_or_else(|| vec![Part::Monopole, Part::Dipole, Part::Quadrupole]);
    let direction = ctx.job.decl.direction.unwrap_or([1.0, 2.0, 3.0]);
    let n = ctx.samples.unwrap_or(multipole_core::fields::FALLOFF_SAMPLES).max(2);
    let tol = ctx.tol.unwrap_or(EXPONENT_TOL);
    let monopole = ctx.bundle.monopole.map(|m| m.q);
    let (tau, sources) = match &ctx.job.decl.chart {
        None => {
            let (a, b) = ctx.worldline.interval();
            let tau = ctx.job.decl.tau.unwrap_or(0.5 * (a + b));
            let d = ctx.bundle.dipole.as_ref().map(|d| d.at(tau)).transpose().map_err(e)?;
            let q = ctx.bundle.quadrupole.as_ref().map(|q| q.at(tau)).transpose().map_err(e)?;
            (tau, sources_from(monopole, d.as_slice(), q.as_ref(), &parts))
        }
        Some(chart) => {
            let (quad, dip, w_hat) = transport(ctx, chart)?;
            let (a, b) = w_hat.interval();
            let tau = ctx.job.decl.tau.unwrap_or(0.5 * (a + b));
            let mut dipoles = Vec::new();
            if let Some(d) = &dip {
                dipoles.push(d.at(tau).map_err(e)?);
            }
            let mut tensorial = None;
            if let Some(t) = &quad {
                dipoles.push(t.dipole_part().at(tau).map_err(e)?);
                tensorial = Some(t.tensorial_part().at(tau).map_err(e)?);
            }
            (tau, sources_from(monopole, &dipoles, tensorial.as_ref(), &parts))
        }
    };
    if sources.is_empty() {
        return Err("no static sources in the selected parts".into());
    }
    let samples = ray(&sources, &direction, &log_radii(n), ctx.scene.units()).map_err(e)?;
    let exponent = loglog_slope(&samples).map_err(e)?;
    let mut checks = Vec::new();
    if let Some(x) = ctx.job.decl.expect.exponent {
        checks.push(Check {
            name: format!("falloff r^{x}"),
            passed: (exponent - x).abs() <= tol,
            detail: format!("measured exponent {exponent:.6} (tol {tol})"),
        });
    }
    let mut csv = String::from("r,value\n");
    for (r, p) in &samples {
        let _ = writeln!(csv, "{r:e},{:e}", p.magnitude());
    }
    let kinds: Vec<&str> = sources.iter().map(|s| s.kind()).collect();
    let body = format!(
        "parameter {tau}, direction {direction:?}, sources {}\nmeasured falloff exponent {exponent:.6} over {n} radii\n",
        kinds.join(", ")
    );
    let data = json!({
        "tau": tau,
        "direction": direction,
        "sources": kinds,
        "exponent": exponent,
        "rays": samples.iter().map(|(r, p)| json!({"r": r, "scalar": p.scalar, "vector": p.vector, "value": p.magnitude()})).collect::<Vec<_>>(),
    });
    Ok(Outcome { checks, body, data, csv: Some(csv) })
}
