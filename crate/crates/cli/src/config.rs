//! Run configuration: a TOML document, validated in one pass that reports
//! every problem it finds.
//!
//! ```toml
//! seed = 7
//!
//! [physics]
//! gamma = 0.5
//! forcing = [[1, 0.5], [-2, 0.0, 0.25]]   # (k, re[, im])
//! # forcing_profile = { amplitude = 0.1, exponent = 0.6, kmax = 32 }
//! nonlinear = true
//! sign = 1
//! model = "full"                           # full | modified | decomposition
//!
//! [grid]
//! M = 128
//! N = 32
//! pad = 2
//!
//! [scheme]
//! method = "strang_split"                  # strang_split | etd_rk2 | rk4_reference
//! dt = 1e-3
//! horizon = 10
//! store_every = 100
//! checkpoint_every = 0
//!
//! [initial]
//! modes = [[0, 0.5], [1, 0.2, -0.1]]
//! # profile = { amplitude = 0.3, exponent = 0.6, kmax = 40 }
//! # random = { norm = 2.0, band = 6 }
//!
//! [diagnostics]
//! sobolev = [1, 2]
//! probes = true
//! tail_cutoffs = [8, 16]
//!
//! [experiment]
//! name = "weak_limit"
//! n_list = [8, 16, 32]
//! ensemble = 8
//! params = { sample_factors = [0.5, 1.0] }
//!
//! [bourgain]
//! damping = { trials = 50 }
//! l4 = { m = 64, l = 64, samples = 200 }
//! resonance = { trials = 10000, kmax = 1000 }
//!
//! [output]
//! dir = "out"
//! formats = ["csv", "json"]
//! ```

use std::path::PathBuf;

use dnls_core::bourgain::DampingSettings;
use dnls_core::integrator::Method;
use dnls_core::{GridSpec, C64};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

#[derive(Debug, Clone, PartialEq)]
pub enum ForcingConfig {
    Modes(Vec<(i64, C64)>),
    /// `|f̂(k)| = amplitude·⟨k⟩^{-exponent}` on `|k| <= kmax`, phases drawn from the seed.
    Profile { amplitude: f64, exponent: f64, kmax: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Model {
    Full,
    Modified,
    Decomposition,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhysicsConfig {
    pub gamma: f64,
    pub forcing: Option<ForcingConfig>,
    pub nonlinear: bool,
    pub sign: i8,
    pub model: Model,
    /// Initial `a` for the modified model; defaults to `‖u0‖²`.
    pub a0: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    pub m: usize,
    pub cutoff: Option<usize>,
    pub pad: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemeConfig {
    pub method: Method,
    pub dt: Option<f64>,
    pub horizon: f64,
    pub store_every: u64,
    /// Write a checkpoint every this many steps (0: only at the end).
    pub checkpoint_every: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialSpec {
    Modes(Vec<(i64, C64)>),
    Profile { amplitude: f64, exponent: f64, kmax: usize },
    Random { norm: f64, band: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsConfig {
    pub sobolev: Vec<f64>,
    pub probes: bool,
    pub tail_cutoffs: Vec<usize>,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            sobolev: vec![1.0, 2.0],
            probes: false,
            tail_cutoffs: Vec::new(),
        }
    }
}

pub const EXPERIMENTS: [&str; 4] = ["absorbing_ball", "weak_limit", "decomposition", "smoothing"];
pub const BOURGAIN_RUNS: [&str; 3] = ["damping", "l4", "resonance"];

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: Option<String>,
    pub n_list: Option<Vec<usize>>,
    pub ensemble: Option<usize>,
    /// Field overrides for the experiment's own settings.
    pub params: serde_json::Map<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct L4Config {
    pub m: usize,
    pub l: usize,
    pub samples: usize,
}

impl Default for L4Config {
    fn default() -> Self {
        Self { m: 64, l: 64, samples: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResonanceConfig {
    pub trials: usize,
    pub kmax: i64,
}

impl Default for ResonanceConfig {
    fn default() -> Self {
        Self { trials: 10_000, kmax: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BourgainConfig {
    pub damping: DampingSettings,
    pub l4: L4Config,
    pub resonance: ResonanceConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    pub formats: Vec<Format>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: None,
            formats: vec![Format::Csv, Format::Json],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub seed: u64,
    pub physics: Option<PhysicsConfig>,
    pub grid: Option<GridConfig>,
    pub scheme: Option<SchemeConfig>,
    pub initial: Option<InitialSpec>,
    pub diagnostics: DiagnosticsConfig,
    pub experiment: ExperimentConfig,
    pub bourgain: BourgainConfig,
    pub output: OutputConfig,
    /// The validated document, kept for snapshots and hashing.
    pub raw: Table,
}

/// All problems found in a configuration.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid configuration:\n  {}", .0.join("\n  "))]
pub struct ConfigErrors(pub Vec<String>);

impl SimConfig {
    pub fn empty() -> Self {
        parse_config("").expect("empty config is valid")
    }

    /// Replaces the seed, keeping `raw` in sync.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        let value = match i64::try_from(seed) {
            Ok(s) => Value::Integer(s),
            Err(_) => Value::String(seed.to_string()),
        };
        self.raw.insert("seed".into(), value);
        self
    }

    /// Canonical text of the validated document; parses back to an equal config.
    pub fn snapshot(&self) -> String {
        toml::to_string(&self.raw).expect("a TOML table always serializes")
    }

    /// SHA-256 over everything that determines a trajectory: all sections except
    /// `[output]`, `[experiment]`, `[bourgain]`, and the horizon and checkpoint
    /// interval, so a run may be extended from its own checkpoint.
    pub fn dynamics_hash(&self) -> [u8; 32] {
        let mut t = self.raw.clone();
        for key in ["output", "experiment", "bourgain"] {
            t.remove(key);
        }
        if let Some(Value::Table(s)) = t.get_mut("scheme") {
            s.remove("horizon");
            s.remove("checkpoint_every");
        }
        Sha256::digest(toml::to_string(&t).expect("a TOML table always serializes").as_bytes()).into()
    }
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<SimConfig, ConfigErrors> {
    let raw: Table = text.parse().map_err(|e: toml::de::Error| ConfigErrors(vec![format!("syntax: {e}")]))?;
    let mut cx = Ctx::default();
    cx.keys(&raw, "", &[
        "seed", "physics", "grid", "scheme", "initial", "diagnostics", "experiment", "bourgain", "output",
    ]);
    let seed = match raw.get("seed") {
        None => 0,
        Some(Value::Integer(i)) if *i >= 0 => *i as u64,
        Some(Value::String(s)) => s.parse().unwrap_or_else(|_| {
            cx.err(format!("seed: `{s}` is not an unsigned 64-bit integer"));
            0
        }),
        Some(v) => {
            cx.err(format!("seed: expected a nonnegative integer, got {v}"));
            0
        }
    };
    let grid = cx.section(&raw, "grid").and_then(|t| parse_grid(&mut cx, t));
    let m = grid.as_ref().map(|g| g.m);
    let physics = cx.section(&raw, "physics").and_then(|t| parse_physics(&mut cx, t, m));
    let scheme = cx.section(&raw, "scheme").and_then(|t| parse_scheme(&mut cx, t));
    let initial = cx.section(&raw, "initial").and_then(|t| parse_initial(&mut cx, t, m));
    let diagnostics = cx
        .section(&raw, "diagnostics")
        .map(|t| parse_diagnostics(&mut cx, t, m))
        .unwrap_or_default();
    let experiment_table = cx.section(&raw, "experiment");
    let experiment = parse_experiment(&mut cx, experiment_table);
    let bourgain = cx
        .section(&raw, "bourgain")
        .map(|t| parse_bourgain(&mut cx, t))
        .unwrap_or_default();
    let output = cx
        .section(&raw, "output")
        .map(|t| parse_output(&mut cx, t))
        .unwrap_or_default();

    if let (Some(p), Some(g)) = (&physics, &grid) {
        if p.model == Model::Decomposition && g.cutoff.is_none() {
            cx.err("physics.model = \"decomposition\" needs grid.N".into());
        }
    }
    if let (Some(s), Some(_)) = (&scheme, &grid) {
        if s.checkpoint_every > 0 && s.checkpoint_every % s.store_every != 0 {
            cx.err(format!(
                "scheme.checkpoint_every = {} must be a multiple of scheme.store_every = {}",
                s.checkpoint_every, s.store_every
            ));
        }
    }
    if !cx.errors.is_empty() {
        return Err(ConfigErrors(cx.errors));
    }
    Ok(SimConfig {
        seed,
        physics,
        grid,
        scheme,
        initial,
        diagnostics,
        experiment,
        bourgain,
        output,
        raw,
    })
}

#[derive(Default)]
struct Ctx {
    errors: Vec<String>,
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

impl Ctx {
    fn err(&mut self, msg: String) {
        self.errors.push(msg);
    }

    fn keys(&mut self, t: &Table, path: &str, allowed: &[&str]) {
        for key in t.keys() {
            if !allowed.contains(&key.as_str()) {
                self.err(format!("{}: unknown key (expected one of: {})", join(path, key), allowed.join(", ")));
            }
        }
    }

    fn section<'a>(&mut self, raw: &'a Table, key: &str) -> Option<&'a Table> {
        match raw.get(key)? {
            Value::Table(t) => Some(t),
            v => {
                self.err(format!("{key}: expected a table, got {}", v.type_str()));
                None
            }
        }
    }

    fn f64(&mut self, t: &Table, path: &str, key: &str) -> Option<f64> {
        let v = t.get(key)?;
        match as_f64(v) {
            Some(x) if x.is_finite() => Some(x),
            _ => {
                self.err(format!("{}: expected a finite number, got {v}", join(path, key)));
                None
            }
        }
    }

    fn require_f64(&mut self, t: &Table, path: &str, key: &str) -> Option<f64> {
        if !t.contains_key(key) {
            self.err(format!("{}: required", join(path, key)));
        }
        self.f64(t, path, key)
    }

    fn positive(&mut self, t: &Table, path: &str, key: &str, required: bool) -> Option<f64> {
        let x = if required { self.require_f64(t, path, key) } else { self.f64(t, path, key) }?;
        if x <= 0.0 {
            self.err(format!("{}: must be positive, got {x}", join(path, key)));
            return None;
        }
        Some(x)
    }

    fn uint(&mut self, t: &Table, path: &str, key: &str) -> Option<u64> {
        let v = t.get(key)?;
        match v {
            Value::Integer(i) if *i >= 0 => Some(*i as u64),
            _ => {
                self.err(format!("{}: expected a nonnegative integer, got {v}", join(path, key)));
                None
            }
        }
    }

    fn boolean(&mut self, t: &Table, path: &str, key: &str) -> Option<bool> {
        let v = t.get(key)?;
        match v {
            Value::Boolean(b) => Some(*b),
            _ => {
                self.err(format!("{}: expected true or false, got {v}", join(path, key)));
                None
            }
        }
    }

    fn string<'a>(&mut self, t: &'a Table, path: &str, key: &str) -> Option<&'a str> {
        let v = t.get(key)?;
        match v {
            Value::String(s) => Some(s),
            _ => {
                self.err(format!("{}: expected a string, got {v}", join(path, key)));
                None
            }
        }
    }

    fn array<'a>(&mut self, t: &'a Table, path: &str, key: &str) -> Option<&'a [Value]> {
        let v = t.get(key)?;
        match v {
            Value::Array(a) => Some(a),
            _ => {
                self.err(format!("{}: expected an array, got {}", join(path, key), v.type_str()));
                None
            }
        }
    }

    fn subtable<'a>(&mut self, t: &'a Table, path: &str, key: &str) -> Option<&'a Table> {
        let v = t.get(key)?;
        match v {
            Value::Table(s) => Some(s),
            _ => {
                self.err(format!("{}: expected a table, got {}", join(path, key), v.type_str()));
                None
            }
        }
    }

    fn uint_list(&mut self, t: &Table, path: &str, key: &str) -> Option<Vec<usize>> {
        let arr = self.array(t, path, key)?;
        let mut out = Vec::with_capacity(arr.len());
        for v in arr {
            match v {
                Value::Integer(i) if *i >= 0 => out.push(*i as usize),
                _ => {
                    self.err(format!("{}: entries must be nonnegative integers, got {v}", join(path, key)));
                    return None;
                }
            }
        }
        Some(out)
    }

    /// `[[k, re], [k, re, im], ...]`, with every `|k| < M/2` when `M` is known.
    fn modes(&mut self, t: &Table, path: &str, key: &str, m: Option<usize>) -> Option<Vec<(i64, C64)>> {
        let arr = self.array(t, path, key)?;
        let at = join(path, key);
        let mut out = Vec::with_capacity(arr.len());
        let mut ok = true;
        for (i, entry) in arr.iter().enumerate() {
            let parsed = match entry {
                Value::Array(a) if a.len() == 2 || a.len() == 3 => {
                    let k = a[0].as_integer();
                    let re = as_f64(&a[1]).filter(|x| x.is_finite());
                    let im = a.get(2).map_or(Some(0.0), |v| as_f64(v).filter(|x| x.is_finite()));
                    match (k, re, im) {
                        (Some(k), Some(re), Some(im)) => Some((k, C64::new(re, im))),
                        _ => None,
                    }
                }
                _ => None,
            };
            match parsed {
                Some((k, c)) => {
                    if let Some(m) = m {
                        if k.unsigned_abs() as usize >= m / 2 {
                            self.err(format!("{at}[{i}]: mode k = {k} is outside the resolved band |k| < M/2 = {}", m / 2));
                            ok = false;
                        }
                    }
                    out.push((k, c));
                }
                None => {
                    self.err(format!("{at}[{i}]: expected [k, re] or [k, re, im], got {entry}"));
                    ok = false;
                }
            }
        }
        ok.then_some(out)
    }

    /// `{ amplitude, exponent, kmax }` with `kmax < M/2`.
    fn profile(&mut self, t: &Table, path: &str, key: &str, m: Option<usize>) -> Option<(f64, f64, usize)> {
        let sub = self.subtable(t, path, key)?;
        let at = join(path, key);
        self.keys(sub, &at, &["amplitude", "exponent", "kmax"]);
        let amplitude = self.require_f64(sub, &at, "amplitude");
        let exponent = self.require_f64(sub, &at, "exponent");
        if !sub.contains_key("kmax") {
            self.err(format!("{at}.kmax: required"));
        }
        let kmax = self.uint(sub, &at, "kmax").map(|k| k as usize);
        if let (Some(k), Some(m)) = (kmax, m) {
            if k >= m / 2 {
                self.err(format!("{at}.kmax: {k} is outside the resolved band |k| < M/2 = {}", m / 2));
                return None;
            }
        }
        Some((amplitude?, exponent?, kmax?))
    }
}

fn as_f64(v: &Value) -> Option<f64> {
    match v {
        Value::Float(x) => Some(*x),
        Value::Integer(i) => Some(*i as f64),
        _ => None,
    }
}

fn parse_grid(cx: &mut Ctx, t: &Table) -> Option<GridConfig> {
    cx.keys(t, "grid", &["M", "N", "pad"]);
    if !t.contains_key("M") {
        cx.err("grid.M: required".into());
    }
    let m = cx.uint(t, "grid", "M")? as usize;
    let cutoff = cx.uint(t, "grid", "N").map(|n| n as usize);
    let pad = cx.uint(t, "grid", "pad").unwrap_or(2) as usize;
    // The core grid check owns the wording of these errors.
    match GridSpec::new(m, cutoff.unwrap_or(0), pad) {
        Ok(_) => Some(GridConfig { m, cutoff, pad }),
        Err(e) => {
            cx.err(format!("grid: {e}"));
            None
        }
    }
}

fn parse_physics(cx: &mut Ctx, t: &Table, m: Option<usize>) -> Option<PhysicsConfig> {
    cx.keys(t, "physics", &["gamma", "forcing", "forcing_profile", "nonlinear", "sign", "model", "a0"]);
    let gamma = cx.positive(t, "physics", "gamma", true);
    let forcing = match (t.contains_key("forcing"), t.contains_key("forcing_profile")) {
        (true, true) => {
            cx.err("physics: give either forcing or forcing_profile, not both".into());
            None
        }
        (true, false) => cx.modes(t, "physics", "forcing", m).map(ForcingConfig::Modes),
        (false, true) => cx
            .profile(t, "physics", "forcing_profile", m)
            .map(|(amplitude, exponent, kmax)| ForcingConfig::Profile { amplitude, exponent, kmax }),
        (false, false) => None,
    };
    let nonlinear = cx.boolean(t, "physics", "nonlinear").unwrap_or(true);
    let sign = match t.get("sign") {
        None => 1,
        Some(Value::Integer(1)) => 1,
        Some(Value::Integer(-1)) => -1,
        Some(v) => {
            cx.err(format!("physics.sign: expected 1 or -1, got {v}"));
            1
        }
    };
    let model = match cx.string(t, "physics", "model") {
        None | Some("full") => Model::Full,
        Some("modified") => Model::Modified,
        Some("decomposition") => Model::Decomposition,
        Some(other) => {
            cx.err(format!("physics.model: unknown model `{other}` (full, modified, decomposition)"));
            Model::Full
        }
    };
    let a0 = cx.f64(t, "physics", "a0");
    if let Some(a) = a0 {
        if a < 0.0 {
            cx.err(format!("physics.a0: must be nonnegative, got {a}"));
        }
        if model != Model::Modified {
            cx.err("physics.a0: only meaningful with model = \"modified\"".into());
        }
    }
    if t.contains_key("forcing") && t.contains_key("forcing_profile") {
        return None;
    }
    Some(PhysicsConfig {
        gamma: gamma?,
        forcing,
        nonlinear,
        sign,
        model,
        a0,
    })
}

fn parse_scheme(cx: &mut Ctx, t: &Table) -> Option<SchemeConfig> {
    cx.keys(t, "scheme", &["method", "dt", "horizon", "store_every", "checkpoint_every"]);
    let method = match cx.string(t, "scheme", "method") {
        None => Some(Method::StrangSplit),
        Some(s) => match s.parse::<Method>() {
            Ok(m) => Some(m),
            Err(e) => {
                cx.err(format!("scheme.method: {e}"));
                None
            }
        },
    };
    let dt = cx.positive(t, "scheme", "dt", false);
    let horizon = cx.positive(t, "scheme", "horizon", true);
    let store_every = cx.uint(t, "scheme", "store_every").unwrap_or(1);
    if store_every == 0 {
        cx.err("scheme.store_every: must be at least 1".into());
    }
    let checkpoint_every = cx.uint(t, "scheme", "checkpoint_every").unwrap_or(0);
    if let (Some(dt), Some(h)) = (dt, horizon) {
        if dt > h {
            cx.err(format!("scheme.dt: {dt} exceeds the horizon {h}"));
        }
    }
    Some(SchemeConfig {
        method: method?,
        dt,
        horizon: horizon?,
        store_every: store_every.max(1),
        checkpoint_every,
    })
}

fn parse_initial(cx: &mut Ctx, t: &Table, m: Option<usize>) -> Option<InitialSpec> {
    cx.keys(t, "initial", &["modes", "profile", "random"]);
    let given: Vec<&str> = ["modes", "profile", "random"]
        .into_iter()
        .filter(|k| t.contains_key(*k))
        .collect();
    if given.len() != 1 {
        cx.err(format!(
            "initial: give exactly one of modes, profile, random (found {})",
            if given.is_empty() { "none".to_string() } else { given.join(", ") }
        ));
        return None;
    }
    match given[0] {
        "modes" => cx.modes(t, "initial", "modes", m).map(InitialSpec::Modes),
        "profile" => cx
            .profile(t, "initial", "profile", m)
            .map(|(amplitude, exponent, kmax)| InitialSpec::Profile { amplitude, exponent, kmax }),
        _ => {
            let sub = cx.subtable(t, "initial", "random")?;
            cx.keys(sub, "initial.random", &["norm", "band"]);
            let norm = cx.require_f64(sub, "initial.random", "norm");
            if let Some(n) = norm {
                if n < 0.0 {
                    cx.err(format!("initial.random.norm: must be nonnegative, got {n}"));
                }
            }
            if !sub.contains_key("band") {
                cx.err("initial.random.band: required".into());
            }
            let band = cx.uint(sub, "initial.random", "band").map(|b| b as usize);
            if let (Some(b), Some(m)) = (band, m) {
                if b >= m / 2 {
                    cx.err(format!("initial.random.band: {b} is outside the resolved band |k| < M/2 = {}", m / 2));
                    return None;
                }
            }
            Some(InitialSpec::Random { norm: norm?, band: band? })
        }
    }
}

fn parse_diagnostics(cx: &mut Ctx, t: &Table, m: Option<usize>) -> DiagnosticsConfig {
    cx.keys(t, "diagnostics", &["sobolev", "probes", "tail_cutoffs"]);
    let mut d = DiagnosticsConfig::default();
    if let Some(arr) = cx.array(t, "diagnostics", "sobolev") {
        let vals: Option<Vec<f64>> = arr.iter().map(as_f64).collect();
        match vals {
            Some(v) if v.iter().all(|s| s.is_finite() && *s >= 0.0) => d.sobolev = v,
            _ => cx.err("diagnostics.sobolev: entries must be nonnegative numbers".into()),
        }
    }
    d.probes = cx.boolean(t, "diagnostics", "probes").unwrap_or(false);
    if let Some(cuts) = cx.uint_list(t, "diagnostics", "tail_cutoffs") {
        if let Some((m, bad)) = m.and_then(|m| cuts.iter().find(|&&n| n >= m / 2).map(|&n| (m, n))) {
            cx.err(format!("diagnostics.tail_cutoffs: cutoff exceeds resolved band: N = {bad} but M/2 = {}", m / 2));
        }
        d.tail_cutoffs = cuts;
    }
    d
}

fn parse_experiment(cx: &mut Ctx, t: Option<&Table>) -> ExperimentConfig {
    let mut e = ExperimentConfig {
        name: None,
        n_list: None,
        ensemble: None,
        params: serde_json::Map::new(),
    };
    let Some(t) = t else { return e };
    cx.keys(t, "experiment", &["name", "n_list", "ensemble", "params"]);
    if let Some(name) = cx.string(t, "experiment", "name") {
        if EXPERIMENTS.contains(&name) {
            e.name = Some(name.into());
        } else {
            cx.err(format!("experiment.name: unknown experiment `{name}` ({})", EXPERIMENTS.join(", ")));
        }
    }
    e.n_list = cx.uint_list(t, "experiment", "n_list");
    e.ensemble = cx.uint(t, "experiment", "ensemble").map(|n| n as usize);
    if e.ensemble == Some(0) {
        cx.err("experiment.ensemble: must be at least 1".into());
    }
    if let Some(p) = cx.subtable(t, "experiment", "params") {
        match serde_json::to_value(p) {
            Ok(serde_json::Value::Object(map)) => e.params = map,
            _ => cx.err("experiment.params: not representable as JSON".into()),
        }
    }
    e
}

fn parse_bourgain(cx: &mut Ctx, t: &Table) -> BourgainConfig {
    cx.keys(t, "bourgain", &["damping", "l4", "resonance"]);
    fn typed<T: for<'de> Deserialize<'de> + Default>(cx: &mut Ctx, t: &Table, key: &str) -> T {
        let Some(sub) = cx.subtable(t, "bourgain", key) else { return T::default() };
        match Value::Table(sub.clone()).try_into::<T>() {
            Ok(v) => v,
            Err(e) => {
                cx.err(format!("bourgain.{key}: {}", e.message()));
                T::default()
            }
        }
    }
    BourgainConfig {
        damping: typed(cx, t, "damping"),
        l4: typed(cx, t, "l4"),
        resonance: typed(cx, t, "resonance"),
    }
}

fn parse_output(cx: &mut Ctx, t: &Table) -> OutputConfig {
    cx.keys(t, "output", &["dir", "formats"]);
    let mut o = OutputConfig::default();
    o.dir = cx.string(t, "output", "dir").map(PathBuf::from);
    if let Some(arr) = cx.array(t, "output", "formats") {
        let mut formats = Vec::new();
        for v in arr {
            match v.as_str() {
                Some("csv") => formats.push(Format::Csv),
                Some("json") => formats.push(Format::Json),
                _ => cx.err(format!("output.formats: unknown format {v} (csv, json)")),
            }
        }
        if formats.is_empty() {
            cx.err("output.formats: at least one format is needed".into());
        }
        o.formats = formats;
    }
    o
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [physics]
        gamma = 0.5
        forcing = [[1, 0.5]]
        [grid]
        M = 128
        N = 32
        [scheme]
        dt = 1e-3
        horizon = 10
    "#;

    #[test]
    fn minimal_config_is_valid() {
        let c = parse_config(MINIMAL).unwrap();
        let p = c.physics.unwrap();
        assert_eq!(p.gamma, 0.5);
        assert_eq!(p.forcing, Some(ForcingConfig::Modes(vec![(1, C64::new(0.5, 0.0))])));
        assert_eq!(c.grid.unwrap(), GridConfig { m: 128, cutoff: Some(32), pad: 2 });
        let s = c.scheme.unwrap();
        assert_eq!((s.dt, s.horizon, s.method), (Some(1e-3), 10.0, Method::StrangSplit));
    }

    #[test]
    fn cutoff_at_half_grid_is_rejected() {
        let err = parse_config(&MINIMAL.replace("N = 32", "N = 64")).unwrap_err();
        assert_eq!(err.0.len(), 1);
        assert!(err.0[0].contains("cutoff exceeds resolved band"), "{err}");
    }

    #[test]
    fn all_errors_are_reported() {
        let text = MINIMAL.replace("gamma = 0.5", "gamma = -1").replace("horizon = 10", "horizon = 10\nhorizn = 3");
        let err = parse_config(&text).unwrap_err();
        assert_eq!(err.0.len(), 2, "{err}");
        assert!(err.0.iter().any(|e| e.contains("physics.gamma")));
        assert!(err.0.iter().any(|e| e.contains("scheme.horizn: unknown key")));
    }

    #[test]
    fn unknown_keys_everywhere() {
        let err = parse_config("colour = 1\n[grid]\nM = 16\nq = 2\n[bourgain]\nl4 = { m = 8, x = 1 }\n").unwrap_err();
        assert_eq!(err.0.len(), 3, "{err}");
    }

    #[test]
    fn modes_outside_band_and_bad_shapes() {
        let text = MINIMAL.replace("forcing = [[1, 0.5]]", "forcing = [[64, 0.5], [1], [2, \"x\"]]");
        let err = parse_config(&text).unwrap_err();
        assert_eq!(err.0.len(), 3, "{err}");
    }

    #[test]
    fn initial_needs_exactly_one_form() {
        let err = parse_config("[initial]\nmodes = [[0, 1]]\nrandom = { norm = 1, band = 2 }\n").unwrap_err();
        assert!(err.0[0].contains("exactly one"));
        let c = parse_config("[initial]\nrandom = { norm = 1.5, band = 2 }\n").unwrap();
        assert_eq!(c.initial, Some(InitialSpec::Random { norm: 1.5, band: 2 }));
    }

    #[test]
    fn snapshot_reparses_to_same_config() {
        let c = parse_config(MINIMAL).unwrap().with_seed(u64::MAX);
        let back = parse_config(&c.snapshot()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.seed, u64::MAX);
    }

    #[test]
    fn hash_ignores_horizon_and_output_only() {
        let a = parse_config(MINIMAL).unwrap();
        let b = parse_config(&MINIMAL.replace("horizon = 10", "horizon = 5\n[output]\ndir = \"x\"")).unwrap();
        assert_eq!(a.dynamics_hash(), b.dynamics_hash());
        assert_ne!(a.dynamics_hash(), a.clone().with_seed(1).dynamics_hash());
        let c = parse_config(&MINIMAL.replace("dt = 1e-3", "dt = 2e-3")).unwrap();
        assert_ne!(a.dynamics_hash(), c.dynamics_hash());
    }

    #[test]
    fn bourgain_and_experiment_sections() {
        let c = parse_config(
            "[experiment]\nname = \"weak_limit\"\nn_list = [8, 16]\nparams = { m = 64 }\n[bourgain]\ndamping = { trials = 5 }\n",
        )
        .unwrap();
        assert_eq!(c.experiment.name.as_deref(), Some("weak_limit"));
        assert_eq!(c.experiment.params["m"], 64);
        assert_eq!(c.bourgain.damping.trials, 5);
        assert_eq!(c.bourgain.damping.m, 256);
        assert!(parse_config("[experiment]\nname = \"nope\"\n").is_err());
    }
}
