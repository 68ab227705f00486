//! Scene files: JSON documents declaring charts, worldlines, multipoles and
//! the jobs to run on them.
//!
//! Parsing happens in two steps. The text is first deserialized into
//! [`SceneFile`], a plain mirror of the JSON, and then compiled into a
//! [`Scene`] holding parsed expressions and constructed objects. Every
//! problem found while compiling is collected, so a broken scene reports all
//! of its errors at once.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use multipole_core::chart::{registry_get, Chart, ChartPair, Registered};
use multipole_core::expr::{Expr, Parser, VarNames};
use multipole_core::fields::Units;
use multipole_core::multipole::{
    embed_dipole_as_quadrupole, make_electric_dipole, make_electric_quadrupole, make_static_dipole,
    make_toroidal_quadrupole, Bundle, DipoleComponents, Monopole, QuadrupoleComponents,
};
use multipole_core::tensor::Mat4;
use multipole_core::transform::PAIRS;
use multipole_core::worldline::{Reparametrization, Worldline};
use multipole_core::Error as CoreError;
use serde::{Deserialize, Serialize};

/// Symmetry tolerance applied to declared components.
pub const SYMMETRY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    /// Named constants usable in every expression.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub parameters: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "UnitSystem::is_natural")]
    pub units: UnitSystem,
    #[serde(default)]
    pub charts: BTreeMap<String, ChartDecl>,
    pub worldlines: BTreeMap<String, WorldlineDecl>,
    pub multipoles: BTreeMap<String, MultipoleDecl>,
    #[serde(default)]
    pub jobs: Vec<JobDecl>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitSystem {
    #[default]
    Natural,
    Si,
}

impl UnitSystem {
    fn is_natural(&self) -> bool {
        *self == UnitSystem::Natural
    }

    pub fn units(self) -> Units {
        match self {
            UnitSystem::Natural => Units::natural(),
            UnitSystem::Si => Units::si(),
        }
    }
}

/// Either a registry entry or explicit component functions of `x0..x3`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChartDecl {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub registry: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub params: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forward: Option<[String; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inverse: Option<[String; 4]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldlineDecl {
    /// `C^a(τ)`.
    pub components: [String; 4],
    pub interval: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultipoleDecl {
    pub worldline: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monopole: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dipole: Option<DipoleDecl>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quadrupole: Option<QuadrupoleDecl>,
}

/// Component maps are keyed by index strings such as `"12"`; missing entries
/// are zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DipoleDecl {
    /// `γ^{ab}(τ)`, declared verbatim and checked for antisymmetry.
    Components(BTreeMap<String, String>),
    /// `γ^{ab} = w^a Ċ^b − w^b Ċ^a`.
    Electric([String; 4]),
    /// Electric and magnetic dipole moments of a static source.
    Static { electric: [f64; 3], magnetic: [f64; 3] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum QuadrupoleDecl {
    /// `γ^{abc}(τ)`, declared verbatim and checked against the quadrupole
    /// symmetries.
    Components(BTreeMap<String, String>),
    /// Electric quadrupole built from a symmetric `q^{ab}`; `"12"` sets both
    /// `q^{12}` and `q^{21}`.
    Electric(BTreeMap<String, String>),
    /// Quadrupole form of an antisymmetric `p^{ab}`, declared verbatim.
    EmbeddedDipole(BTreeMap<String, String>),
    /// Spatial toroidal pattern for the vector `T`.
    Toroidal([f64; 3]),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Transform,
    Verify,
    Classify,
    Charge,
    Potentials,
}

impl Command {
    pub const ALL: [Command; 5] =
        [Command::Transform, Command::Verify, Command::Classify, Command::Charge, Command::Potentials];

    pub fn name(self) -> &'static str {
        match self {
            Command::Transform => "transform",
            Command::Verify => "verify",
            Command::Classify => "classify",
            Command::Charge => "charge",
            Command::Potentials => "potentials",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Part {
    Monopole,
    Dipole,
    Quadrupole,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expected {
    Consistent,
    Refuted,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReparamDecl {
    /// `τ(τ̂)`.
    pub map: String,
    /// Interval of `τ̂`.
    pub interval: [f64; 2],
}

/// One job. Which fields apply depends on the command; the rest must be
/// left out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobDecl {
    pub command: Command,
    pub multipole: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chart: Option<String>,
    /// Integration constant, keyed by index pairs `"01"` .. `"23"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa0: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reparametrization: Option<ReparamDecl>,
    /// Parameter samples, random forms, probes or radii, by command.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub half_widths: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub electric_order: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parts: Option<Vec<Part>>,
    #[serde(default, skip_serializing_if = "Expect::is_empty")]
    pub expect: Expect,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expect {
    /// Transform: functions of the parameter keyed `P^de`, `dipole_part^de`,
    /// `gamma^abc` or `dipole^ab`. `P` is a function of the original
    /// parameter, the others of the new one. `kappa0_de` names the entries
    /// of the integration constant.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub components: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub closed: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monopole_free: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<Expected>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub electric_order: Option<Expected>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub charge: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exponent: Option<f64>,
}

impl Expect {
    fn is_empty(&self) -> bool {
        *self == Expect::default()
    }
}

/// Which transported quantity an expectation refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    P(usize, usize),
    DipolePart(usize, usize),
    Gamma(usize, usize, usize),
    Dipole(usize, usize),
}

impl Target {
    pub fn parse(key: &str) -> Option<Target> {
        let (head, idx) = key.split_once('^')?;
        let digits: Vec<usize> = idx.chars().map(|c| c.to_digit(10).map(|d| d as usize)).collect::<Option<_>>()?;
        if digits.iter().any(|&d| d > 3) {
            return None;
        }
        match (head, digits.as_slice()) {
            ("P", &[d, e]) => Some(Target::P(d, e)),
            ("dipole_part", &[d, e]) => Some(Target::DipolePart(d, e)),
            ("dipole", &[a, b]) => Some(Target::Dipole(a, b)),
            ("gamma", &[a, b, c]) => Some(Target::Gamma(a, b, c)),
            _ => None,
        }
    }
}

/// A problem found in a scene, with the position of the offending text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SceneError {
    pub line: usize,
    pub column: usize,
    /// Dotted path of the offending entry, empty for syntax errors.
    pub path: String,
    pub message: String,
}

impl fmt::Display for SceneError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            write!(f, "{}:{}: {}", self.line, self.column, self.message)
        } else {
            write!(f, "{}:{}: {}: {}", self.line, self.column, self.path, self.message)
        }
    }
}

#[derive(Debug, Clone)]
pub struct Multipole {
    pub worldline: String,
    pub bundle: Bundle,
}

#[derive(Debug, Clone)]
pub struct Job {
    pub decl: JobDecl,
    pub kappa0: Mat4,
    pub reparametrization: Option<Reparametrization>,
    pub expectations: Vec<(String, Target)>,
}

/// A validated scene.
#[derive(Debug, Clone)]
pub struct Scene {
    pub file: SceneFile,
    pub charts: BTreeMap<String, Registered>,
    pub worldlines: BTreeMap<String, Worldline>,
    pub multipoles: BTreeMap<String, Multipole>,
    pub jobs: Vec<Job>,
}

impl Scene {
    pub fn units(&self) -> Units {
        self.file.units.units()
    }

    /// Pretty-printed JSON that parses back to an equivalent scene.
    pub fn to_text(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.file).expect("scene serializes");
        s.push('\n');
        s
    }

    pub fn worldline_of(&self, multipole: &str) -> &Worldline {
        &self.worldlines[&self.multipoles[multipole].worldline]
    }
}

/// Parses and validates a scene.
pub fn parse_scene(text: &str) -> Result<Scene, Vec<SceneError>> {
    let file: SceneFile = serde_json::from_str(text).map_err(|e| {
        vec![SceneError { line: e.line(), column: e.column(), path: String::new(), message: e.to_string() }]
    })?;
    Compiler { text, file: &file, params: file.parameters.iter().map(|(k, v)| (k.clone(), *v)).collect(), errors: vec![] }
        .compile()
}

struct Compiler<'a> {
    text: &'a str,
    file: &'a SceneFile,
    params: HashMap<String, f64>,
    errors: Vec<SceneError>,
}

/// 1-based line and column of a byte offset.
fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

/// Byte offset of the first occurrence of `value` as a JSON string literal.
fn find_literal(text: &str, value: &str) -> Option<usize> {
    let quoted = serde_json::to_string(value).ok()?;
    text.find(&quoted)
}

impl Compiler<'_> {
    fn err_at(&mut self, literal: Option<&str>, extra_columns: usize, path: String, message: String) {
        let (line, column) = match literal.and_then(|l| find_literal(self.text, l)) {
            Some(off) => {
                let (l, c) = line_col(self.text, off);
                (l, c + extra_columns)
            }
            None => (1, 1),
        };
        self.errors.push(SceneError { line, column, path, message });
    }

    fn err(&mut self, near: &str, path: String, message: String) {
        self.err_at(Some(near), 0, path, message);
    }

    fn expr_with(&mut self, src: &str, names: VarNames, params: &HashMap<String, f64>, path: String) -> Option<Expr> {
        match Parser::new(names, params).parse(src) {
            Ok(e) => Some(e),
            Err(pe) => {
                // column inside the string, past the opening quote
                self.err_at(Some(src), pe.column, path, format!("malformed expression: {}", pe.message));
                None
            }
        }
    }

    fn expr(&mut self, src: &str, names: VarNames, path: String) -> Option<Expr> {
        let params = std::mem::take(&mut self.params);
        let e = self.expr_with(src, names, &params, path);
        self.params = params;
        e
    }

    fn exprs4(&mut self, srcs: &[String; 4], names: VarNames, path: &str) -> Option<[Expr; 4]> {
        let v: Vec<Option<Expr>> =
            srcs.iter().enumerate().map(|(i, s)| self.expr(s, names, format!("{path}[{i}]"))).collect();
        let v: Vec<Expr> = v.into_iter().collect::<Option<_>>()?;
        v.try_into().ok()
    }

    fn compile(mut self) -> Result<Scene, Vec<SceneError>> {
        let file = self.file;
        let mut charts = BTreeMap::new();
        for (name, decl) in &file.charts {
            if let Some(c) = self.chart(name, decl) {
                charts.insert(name.clone(), c);
            }
        }
        let mut worldlines = BTreeMap::new();
        for (name, decl) in &file.worldlines {
            let path = format!("worldlines.{name}");
            let Some(comps) = self.exprs4(&decl.components, VarNames::Tau, &format!("{path}.components")) else {
                continue;
            };
            match Worldline::new(comps, decl.interval[0], decl.interval[1]) {
                Ok(w) => {
                    worldlines.insert(name.clone(), w);
                }
                Err(e) => self.err(name, path, e.to_string()),
            }
        }
        let mut multipoles = BTreeMap::new();
        for (name, decl) in &file.multipoles {
            let path = format!("multipoles.{name}");
            let Some(w) = worldlines.get(&decl.worldline) else {
                if !file.worldlines.contains_key(&decl.worldline) {
                    self.err(&decl.worldline, path, format!("unknown worldline `{}`", decl.worldline));
                }
                continue;
            };
            if let Some(bundle) = self.bundle(name, decl, w) {
                multipoles.insert(name.clone(), Multipole { worldline: decl.worldline.clone(), bundle });
            }
        }
        let mut jobs = Vec::new();
        for (i, decl) in file.jobs.iter().enumerate() {
            if let Some(job) = self.job(i, decl, &charts) {
                jobs.push(job);
            }
        }
        if self.errors.is_empty() {
            Ok(Scene { file: file.clone(), charts, worldlines, multipoles, jobs })
        } else {
            self.errors.sort_by_key(|e| (e.line, e.column));
            Err(self.errors)
        }
    }

    fn chart(&mut self, name: &str, decl: &ChartDecl) -> Option<Registered> {
        let path = format!("charts.{name}");
        match (&decl.registry, &decl.forward) {
            (Some(reg), None) => {
                if decl.inverse.is_some() {
                    self.err(name, path, "`inverse` only applies to charts given by `forward`".into());
                    return None;
                }
                match registry_get(reg, &decl.params) {
                    Ok(r) => Some(r),
                    Err(CoreError::UnknownChart(n)) => {
                        self.err(reg, path, format!("unknown chart name `{n}`"));
                        None
                    }
                    Err(e) => {
                        self.err(name, path, e.to_string());
                        None
                    }
                }
            }
            (None, Some(fwd)) => {
                if !decl.params.is_empty() {
                    self.err(name, path.clone(), "`params` only applies to registry charts".into());
                }
                let f = self.exprs4(fwd, VarNames::Spacetime, &format!("{path}.forward"));
                let inv = decl.inverse.as_ref().map(|i| self.exprs4(i, VarNames::Spacetime, &format!("{path}.inverse")));
                let forward = Chart::new(name, f?);
                match inv {
                    None => Some(Registered::Chart(forward)),
                    Some(i) => Some(Registered::Pair(ChartPair::new(forward, Chart::new(format!("{name}^-1"), i?)))),
                }
            }
            _ => {
                self.err(name, path, "a chart needs exactly one of `registry` or `forward`".into());
                None
            }
        }
    }

    /// Parses an index-keyed component map into a flat array of `4^rank`.
    fn component_map(&mut self, map: &BTreeMap<String, String>, rank: usize, path: &str) -> Option<Vec<Expr>> {
        let mut out = vec![Expr::zero(); 4usize.pow(rank as u32)];
        let mut ok = true;
        for (key, src) in map {
            let digits: Option<Vec<usize>> = key.chars().map(|c| c.to_digit(10).map(|d| d as usize)).collect();
            let flat = match digits {
                Some(d) if d.len() == rank && d.iter().all(|&i| i < 4) => d.iter().fold(0, |acc, &i| acc * 4 + i),
                _ => {
                    self.err(key, path.to_string(), format!("`{key}` is not a list of {rank} indices in 0..3"));
                    ok = false;
                    continue;
                }
            };
            match self.expr(src, VarNames::Tau, format!("{path}.{key}")) {
                Some(e) => out[flat] = e,
                None => ok = false,
            }
        }
        ok.then_some(out)
    }

    fn matrix(&mut self, map: &BTreeMap<String, String>, path: &str) -> Option<[[Expr; 4]; 4]> {
        let flat = self.component_map(map, 2, path)?;
        Some(std::array::from_fn(|a| std::array::from_fn(|b| flat[a * 4 + b].clone())))
    }

    fn symmetry_error(&mut self, name: &str, path: String, symbol: &str, err: CoreError) {
        let message = match err {
            CoreError::Symmetry { indices, tau, residual } => {
                let idx: String = indices.iter().map(|i| i.to_string()).collect();
                format!("{symbol}^{{{idx}}} violates the component symmetries at tau = {tau} (residual {residual:e})")
            }
            other => other.to_string(),
        };
        self.err(name, path, message);
    }

    fn bundle(&mut self, name: &str, decl: &MultipoleDecl, w: &Worldline) -> Option<Bundle> {
        let path = format!("multipoles.{name}");
        let mut bundle = Bundle { monopole: decl.monopole.map(|q| Monopole { q }), ..Default::default() };
        let mut ok = true;
        if let Some(d) = &decl.dipole {
            let dp = format!("{path}.dipole");
            let comps: Option<DipoleComponents> = match d {
                DipoleDecl::Components(map) => self
                    .component_map(map, 2, &format!("{dp}.components"))
                    .and_then(|ex| self.checked(DipoleComponents::from_exprs(ex), w, name, &dp, "gamma")),
                DipoleDecl::Electric(ws) => {
                    self.exprs4(ws, VarNames::Tau, &format!("{dp}.electric")).map(|ws| make_electric_dipole(&ws, w))
                }
                DipoleDecl::Static { electric, magnetic } => Some(make_static_dipole(*electric, *magnetic)),
            };
            ok &= comps.is_some();
            bundle.dipole = comps;
        }
        if let Some(q) = &decl.quadrupole {
            let qp = format!("{path}.quadrupole");
            let comps: Option<QuadrupoleComponents> = match q {
                QuadrupoleDecl::Components(map) => self
                    .component_map(map, 3, &format!("{qp}.components"))
                    .and_then(|ex| self.checked(QuadrupoleComponents::from_exprs(ex), w, name, &qp, "gamma")),
                QuadrupoleDecl::Electric(map) => self.symmetric(map, name, &format!("{qp}.electric")).map(|q| make_electric_quadrupole(&q, w)),
                QuadrupoleDecl::EmbeddedDipole(map) => {
                    let p = self.matrix(map, &format!("{qp}.embedded_dipole"))?;
                    match embed_dipole_as_quadrupole(&p, w) {
                        Ok(g) => Some(g),
                        Err(e) => {
                            self.symmetry_error(name, qp.clone(), "p", e);
                            None
                        }
                    }
                }
                QuadrupoleDecl::Toroidal(t) => Some(make_toroidal_quadrupole(*t).components),
            };
            ok &= comps.is_some();
            bundle.quadrupole = comps;
        }
        if decl.monopole.is_none() && decl.dipole.is_none() && decl.quadrupole.is_none() {
            self.err(name, path, "a multipole needs at least one of `monopole`, `dipole`, `quadrupole`".into());
            return None;
        }
        ok.then_some(bundle)
    }

    fn checked<A>(
        &mut self,
        comps: multipole_core::Result<multipole_core::multipole::Components<A>>,
        w: &Worldline,
        name: &str,
        path: &str,
        symbol: &str,
    ) -> Option<multipole_core::multipole::Components<A>>
    where
        A: multipole_core::multipole::Constrained,
    {
        match comps.and_then(|c| c.check_symmetry_on(w, SYMMETRY_TOL).map(|_| c)) {
            Ok(c) => Some(c),
            Err(e) => {
                self.symmetry_error(name, path.to_string(), symbol, e);
                None
            }
        }
    }

    /// Symmetric `q^{ab}`: each key sets both orderings.
    fn symmetric(&mut self, map: &BTreeMap<String, String>, name: &str, path: &str) -> Option<[[Expr; 4]; 4]> {
        let flat = self.component_map(map, 2, path)?;
        let mut q: [[Expr; 4]; 4] = std::array::from_fn(|_| std::array::from_fn(|_| Expr::zero()));
        for a in 0..4 {
            for b in a..4 {
                let (x, y) = (&flat[a * 4 + b], &flat[b * 4 + a]);
                if !x.is_zero() && !y.is_zero() && x != y {
                    self.err(name, path.to_string(), format!("q^{{{a}{b}}} and q^{{{b}{a}}} are both given and differ"));
                    return None;
                }
                let v = if x.is_zero() { y.clone() } else { x.clone() };
                q[a][b] = v.clone();
                q[b][a] = v;
            }
        }
        Some(q)
    }

    fn job(&mut self, i: usize, decl: &JobDecl, charts: &BTreeMap<String, Registered>) -> Option<Job> {
        let path = format!("jobs[{i}]");
        let near = decl.multipole.as_str();
        let mut ok = true;
        if !self.file.multipoles.contains_key(&decl.multipole) {
            self.err(near, path.clone(), format!("unknown multipole `{}`", decl.multipole));
            ok = false;
        }
        if let Some(c) = &decl.chart {
            if !self.file.charts.contains_key(c) {
                self.err(c, path.clone(), format!("unknown chart name `{c}`"));
                ok = false;
            } else if decl.command == Command::Verify && charts.get(c).is_some_and(|r| r.pair().is_none()) {
                self.err(c, path.clone(), format!("chart `{c}` has no inverse; verify needs a chart pair"));
                ok = false;
            }
        }
        let needs_chart = matches!(decl.command, Command::Transform | Command::Verify);
        if needs_chart && decl.chart.is_none() {
            self.err(near, path.clone(), format!("`{}` jobs need a `chart`", decl.command));
            ok = false;
        }
        if !needs_chart && decl.command != Command::Potentials && decl.chart.is_some() {
            self.err(near, path.clone(), format!("`{}` jobs take no `chart`", decl.command));
            ok = false;
        }
        if decl.samples == Some(0) {
            self.err(near, path.clone(), "`samples` must be positive".into());
            ok = false;
        }
        if decl.tol.is_some_and(|t| !(t > 0.0)) {
            self.err(near, path.clone(), "`tol` must be positive".into());
            ok = false;
        }
        if decl.direction.is_some_and(|d| d.iter().all(|v| *v == 0.0)) {
            self.err(near, path.clone(), "`direction` must be nonzero".into());
            ok = false;
        }
        let kappa0 = match &decl.kappa0 {
            None => Mat4::default(),
            Some(map) => match kappa0_from_map(map) {
                Ok(k) => k,
                Err(msg) => {
                    self.err(near, path.clone(), msg);
                    ok = false;
                    Mat4::default()
                }
            },
        };
        let reparametrization = match &decl.reparametrization {
            None => None,
            Some(r) => {
                let map = self.expr(&r.map, VarNames::Tau, format!("{path}.reparametrization.map"));
                match map.map(|m| Reparametrization::new(m, r.interval[0], r.interval[1])) {
                    Some(Ok(rep)) => Some(rep),
                    Some(Err(e)) => {
                        self.err(&r.map, path.clone(), e.to_string());
                        ok = false;
                        None
                    }
                    None => {
                        ok = false;
                        None
                    }
                }
            }
        };
        let mut expectations = Vec::new();
        if !decl.expect.components.is_empty() && decl.command != Command::Transform {
            self.err(near, path.clone(), "component expectations only apply to `transform` jobs".into());
            ok = false;
        }
        let params = expectation_params(&self.params, &kappa0);
        for (key, src) in &decl.expect.components {
            match Target::parse(key) {
                Some(t) => {
                    ok &= self.expr_with(src, VarNames::Tau, &params, format!("{path}.expect.{key}")).is_some();
                    expectations.push((src.clone(), t));
                }
                None => {
                    self.err(key, path.clone(), format!("`{key}` names no transported component"));
                    ok = false;
                }
            }
        }
        ok.then(|| Job { decl: decl.clone(), kappa0, reparametrization, expectations })
    }
}

/// Parameters visible to expectation expressions: the scene's plus
/// `kappa0_de` for every pair.
pub fn expectation_params(base: &HashMap<String, f64>, kappa0: &Mat4) -> HashMap<String, f64> {
    let mut p = base.clone();
    for (d, e) in PAIRS {
        p.insert(format!("kappa0_{d}{e}"), kappa0[d][e]);
    }
    p
}

/// Antisymmetric matrix from entries keyed `"de"` with `d < e`.
pub fn kappa0_from_map(map: &BTreeMap<String, f64>) -> Result<Mat4, String> {
    let entries = map.iter().map(|(k, v)| (k.as_str(), *v)).collect::<Vec<_>>();
    kappa0_from_entries(&entries)
}

fn kappa0_from_entries(entries: &[(&str, f64)]) -> Result<Mat4, String> {
    let mut m = Mat4::default();
    for &(key, v) in entries {
        let pos = PAIRS.iter().position(|&(d, e)| key == format!("{d}{e}"));
        let Some(p) = pos else {
            return Err(format!("kappa0 entry `{key}` is not one of 01, 02, 03, 12, 13, 23"));
        };
        let (d, e) = PAIRS[p];
        m[d][e] = v;
        m[e][d] = -v;
    }
    Ok(m)
}

/// Parses the `--kappa0` flag: either six comma-separated values for the
/// slots 01, 02, 03, 12, 13, 23, or comma-separated `de=value` entries.
pub fn parse_kappa0(arg: &str) -> Result<Mat4, String> {
    let items: Vec<&str> = arg.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    let num = |s: &str| s.parse::<f64>().map_err(|_| format!("`{s}` is not a number"));
    if items.iter().all(|s| !s.contains('=')) {
        if items.len() != 6 {
            return Err(format!("expected 6 values for 01,02,03,12,13,23, got {}", items.len()));
        }
        let mut entries = Vec::new();
        let keys: Vec<String> = PAIRS.iter().map(|(d, e)| format!("{d}{e}")).collect();
        for (k, s) in keys.iter().zip(&items) {
            entries.push((k.as_str(), num(s)?));
        }
        return kappa0_from_entries(&entries);
    }
    let mut entries = Vec::new();
    for s in &items {
        let Some((k, v)) = s.split_once('=') else {
            return Err(format!("`{s}` is not of the form de=value"));
        };
        entries.push((k.trim(), num(v.trim())?));
    }
    kappa0_from_entries(&entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
  "charts": { "id": { "registry": "identity" } },
  "worldlines": { "rest": { "components": ["tau", "0", "0", "0"], "interval": [0, 10] } },
  "multipoles": { "q": { "worldline": "rest", "monopole": 1.0 } },
  "jobs": [ { "command": "charge", "multipole": "q" } ]
}"#;

    #[test]
    fn minimal_scene_parses() {
        let s = parse_scene(MINIMAL).unwrap();
        assert_eq!(s.jobs.len(), 1);
        assert!(s.worldlines["rest"].is_adapted());
        assert_eq!(s.multipoles["q"].bundle.monopole, Some(Monopole { q: 1.0 }));
    }

    #[test]
    fn malformed_expression_has_position() {
        let text = MINIMAL.replace("\"tau\", \"0\"", "\"tau\", \"1 +* 2\"");
        let errs = parse_scene(&text).unwrap_err();
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0].line, 3);
        assert_eq!(errs[0].path, "worldlines.rest.components[1]");
        assert!(errs[0].message.contains("malformed expression"), "{}", errs[0]);
        let line = text.lines().nth(2).unwrap();
        let start = line.find("\"1 +* 2\"").unwrap() + 1;
        assert!(errs[0].column > start && errs[0].column <= start + 7);
    }

    #[test]
    fn unknown_names_are_reported_together() {
        let text = MINIMAL
            .replace("\"identity\"", "\"toroidal_map\"")
            .replace("\"multipole\": \"q\"", "\"multipole\": \"nope\"");
        let errs = parse_scene(&text).unwrap_err();
        let msgs: Vec<_> = errs.iter().map(|e| e.message.clone()).collect();
        assert!(msgs.iter().any(|m| m.contains("unknown chart name `toroidal_map`")), "{msgs:?}");
        assert!(msgs.iter().any(|m| m.contains("unknown multipole `nope`")), "{msgs:?}");
    }

    #[test]
    fn syntax_errors_carry_serde_positions() {
        let errs = parse_scene("{\n  \"worldlines\": {,\n}").unwrap_err();
        assert_eq!(errs[0].line, 2);
    }

    #[test]
    fn kappa0_flag_forms() {
        let a = parse_kappa0("0,0,0,1.5,0,0").unwrap();
        let b = parse_kappa0("12=1.5").unwrap();
        assert_eq!(a, b);
        assert_eq!(a[2][1], -1.5);
        assert!(parse_kappa0("21=1").is_err());
        assert!(parse_kappa0("1,2").is_err());
        assert!(parse_kappa0("12=x").is_err());
    }

    #[test]
    fn targets() {
        assert_eq!(Target::parse("P^12"), Some(Target::P(1, 2)));
        assert_eq!(Target::parse("gamma^120"), Some(Target::Gamma(1, 2, 0)));
        assert_eq!(Target::parse("dipole_part^12"), Some(Target::DipolePart(1, 2)));
        assert_eq!(Target::parse("gamma^12"), None);
        assert_eq!(Target::parse("P^14"), None);
    }
}
