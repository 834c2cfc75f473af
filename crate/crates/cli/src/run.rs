//! Command execution: builds the core objects from a validated config, runs,
//! and writes artifacts.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use dnls_core::bourgain::{damping_scaling, l4_ensemble, resonance_sweep};
use dnls_core::diagnostics::{standard_probes, DiagnosticRecord, DiagnosticsSpec};
use dnls_core::equations::{DecompState, ModifiedState, PhysParams};
use dnls_core::experiments::{
    power_law_field, random_field_with_norm, run_absorbing_ball, run_decomposition, run_smoothing,
    run_weak_limit, AbsorbingBallConfig, Check, DecompositionConfig, ExperimentOutput, ExperimentReport,
    ForcingSpec, SmoothingConfig, WeakLimitConfig,
};
use dnls_core::integrator::{
    integrate_from, AMode, DecompositionSystem, FullSystem, ModifiedSystem, SchemeSpec, System,
};
use dnls_core::{Spectral, SpectralField};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, SimState};
use crate::config::{
    ConfigErrors, ForcingConfig, Format, InitialSpec, Model, SimConfig, BOURGAIN_RUNS, EXPERIMENTS,
};
use crate::export::{export_timeseries, write_atomic, write_json};
use crate::{invariants, CliError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Command {
    Simulate { resume: Option<PathBuf> },
    Experiment(String),
    Bourgain(String),
    Check,
}

impl Command {
    fn label(&self) -> String {
        match self {
            Self::Simulate { .. } => "simulate".into(),
            Self::Experiment(n) => format!("experiment {n}"),
            Self::Bourgain(n) => format!("bourgain {n}"),
            Self::Check => "check".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub passed: bool,
    pub artifacts: Vec<PathBuf>,
    /// Short machine-readable summary, also written as `summary.json`.
    pub summary: Value,
}

/// Stream 1 draws forcing phases, stream 2 the initial data.
fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

pub fn build_forcing(cfg: &SimConfig, m: usize) -> Result<SpectralField, CliError> {
    let forcing = cfg.physics.as_ref().and_then(|p| p.forcing.as_ref());
    Ok(match forcing {
        None => SpectralField::zeros(m),
        Some(ForcingConfig::Modes(modes)) => SpectralField::from_modes(m, modes)?,
        Some(ForcingConfig::Profile { amplitude, exponent, kmax }) => {
            power_law_field(m, *amplitude, *exponent, *kmax, &mut stream(cfg.seed, 1))?
        }
    })
}

pub fn build_initial(cfg: &SimConfig, m: usize) -> Result<SpectralField, CliError> {
    let spec = cfg.initial.as_ref().ok_or_else(|| usage("simulate needs an [initial] section"))?;
    Ok(match spec {
        InitialSpec::Modes(modes) => SpectralField::from_modes(m, modes)?,
        InitialSpec::Profile { amplitude, exponent, kmax } => {
            power_law_field(m, *amplitude, *exponent, *kmax, &mut stream(cfg.seed, 2))?
        }
        InitialSpec::Random { norm, band } => random_field_with_norm(m, *band, *norm, &mut stream(cfg.seed, 2))?,
    })
}

pub fn build_params(cfg: &SimConfig, m: usize) -> Result<PhysParams, CliError> {
    let phys = cfg.physics.as_ref().ok_or_else(|| usage("simulate needs a [physics] section"))?;
    let mut p = PhysParams::new(phys.gamma, build_forcing(cfg, m)?)?.with_sign(phys.sign)?;
    if !phys.nonlinear {
        p = p.linear_only();
    }
    Ok(p)
}

pub fn build_diagnostics(cfg: &SimConfig, m: usize) -> Result<DiagnosticsSpec, CliError> {
    Ok(DiagnosticsSpec {
        sobolev: cfg.diagnostics.sobolev.clone(),
        probes: if cfg.diagnostics.probes { standard_probes(m)? } else { Vec::new() },
        tail_cutoffs: cfg.diagnostics.tail_cutoffs.clone(),
    })
}

pub fn build_scheme(cfg: &SimConfig, m: usize) -> Result<SchemeSpec, CliError> {
    let s = cfg.scheme.as_ref().ok_or_else(|| usage("simulate needs a [scheme] section"))?;
    let dt = s.dt.unwrap_or_else(|| SchemeSpec::default_dt(m));
    Ok(SchemeSpec::new(s.method, dt, s.horizon, s.store_every)?)
}

/// Runs a command and writes its artifacts under `out`.
pub fn run(cfg: &SimConfig, cmd: &Command, out: &Path) -> Result<RunOutcome, CliError> {
    let started = unix_seconds();
    let (passed, mut artifacts, summary) = match cmd {
        Command::Simulate { resume } => simulate(cfg, resume.as_deref(), out)?,
        Command::Experiment(name) => experiment(cfg, name, out)?,
        Command::Bourgain(name) => bourgain(cfg, name, out)?,
        Command::Check => {
            let report = invariants::run_suite(&invariants::DEFAULT_SIZES)?;
            finish_report(report, Vec::new(), out)?
        }
    };
    let snapshot = out.join("config.toml");
    write_atomic(&snapshot, cfg.snapshot().as_bytes())?;
    artifacts.push(snapshot);
    let summary_path = out.join("summary.json");
    write_json(&summary_path, &summary)?;
    artifacts.push(summary_path);
    // Timestamps live only here, so every other artifact is a function of (config, seed).
    let meta = json!({
        "command": cmd.label(),
        "started_unix": started,
        "finished_unix": unix_seconds(),
        "version": env!("CARGO_PKG_VERSION"),
    });
    let meta_path = out.join("run_meta.json");
    write_json(&meta_path, &meta)?;
    artifacts.push(meta_path);
    Ok(RunOutcome { passed, artifacts, summary })
}

fn unix_seconds() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

type Produced = (bool, Vec<PathBuf>, Value);

fn write_series(
    spec: &DiagnosticsSpec,
    records: &[DiagnosticRecord],
    stem: &Path,
    formats: &[Format],
    artifacts: &mut Vec<PathBuf>,
) -> Result<(), CliError> {
    for &f in formats {
        let path = stem.with_extension(match f {
            Format::Csv => "csv",
            Format::Json => "json",
        });
        export_timeseries(spec, records, f, &path)?;
        artifacts.push(path);
    }
    Ok(())
}

fn simulate(cfg: &SimConfig, resume: Option<&Path>, out: &Path) -> Result<Produced, CliError> {
    let grid = cfg.grid.as_ref().ok_or_else(|| usage("simulate needs a [grid] section"))?;
    let phys = cfg.physics.as_ref().ok_or_else(|| usage("simulate needs a [physics] section"))?;
    let every = cfg.scheme.as_ref().map_or(0, |s| s.checkpoint_every);
    let m = grid.m;
    let sp = Spectral::new(m, grid.pad)?;
    let p = build_params(cfg, m)?;
    let scheme = build_scheme(cfg, m)?;
    let diag = build_diagnostics(cfg, m)?;
    let hash = cfg.dynamics_hash();
    let ck = resume.map(|path| load_checkpoint(path, Some(&hash))).transpose()?;
    let start = ck.as_ref().map_or(0, |c| c.step);
    let resumed_kind = ck.as_ref().map(|c| c.state.kind());
    let ck_path = out.join("checkpoint.bin");
    let run = Segmenter { scheme: &scheme, diag: &diag, every, hash, path: &ck_path, resumed: ck.is_some() };
    let mismatch = |kind: &str| usage(format!("checkpoint holds a {kind} state but the config selects another model"));

    let (records, final_step, final_l2) = match phys.model {
        Model::Full => {
            let sys = FullSystem::new(sp, p)?;
            let state = match ck {
                Some(Checkpoint { state: SimState::Full(u), .. }) => u,
                Some(c) => return Err(mismatch(c.state.kind())),
                None => build_initial(cfg, m)?,
            };
            run.drive(&sys, state, start, SimState::Full)?
        }
        Model::Modified => {
            let sys = ModifiedSystem::new(sp, p, AMode::Coupled)?;
            let state = match ck {
                Some(Checkpoint { state: SimState::Modified(s), .. }) => s,
                Some(c) => return Err(mismatch(c.state.kind())),
                None => {
                    let u0 = build_initial(cfg, m)?;
                    let a0 = phys.a0.unwrap_or_else(|| u0.l2_norm_sq());
                    ModifiedState::new(u0, a0)?
                }
            };
            run.drive(&sys, state, start, SimState::Modified)?
        }
        Model::Decomposition => {
            let cutoff = grid.cutoff.ok_or_else(|| usage("decomposition needs grid.N"))?;
            let sys = DecompositionSystem::new(sp, p.clone(), cutoff)?;
            let state = match ck {
                Some(Checkpoint { state: SimState::Decomposition(s), .. }) => s,
                Some(c) => return Err(mismatch(c.state.kind())),
                None => DecompState::split(&build_initial(cfg, m)?, cutoff)?.with_z(&p)?,
            };
            run.drive(&sys, state, start, SimState::Decomposition)?
        }
    };

    let mut artifacts = vec![ck_path];
    if !records.is_empty() {
        write_series(&diag, &records, &out.join("trajectory"), &cfg.output.formats, &mut artifacts)?;
    }
    let summary = json!({
        "status": "ok",
        "command": "simulate",
        "model": match phys.model { Model::Full => "full", Model::Modified => "modified", Model::Decomposition => "decomposition" },
        "resumed_from_step": resumed_kind.map(|_| start),
        "final_step": final_step,
        "final_t": final_step as f64 * scheme.dt,
        "final_l2_sq": final_l2,
        "records": records.len(),
    });
    Ok((true, artifacts, summary))
}

struct Segmenter<'a> {
    scheme: &'a SchemeSpec,
    diag: &'a DiagnosticsSpec,
    every: u64,
    hash: [u8; 32],
    path: &'a Path,
    resumed: bool,
}

impl Segmenter<'_> {
    /// Integrates to the horizon in checkpointed segments. The first record of a
    /// segment repeats the last one already emitted (or the checkpoint sample on
    /// resume) and is dropped.
    fn drive<S: System>(
        &self,
        sys: &S,
        mut state: S::State,
        start: u64,
        wrap: impl Fn(S::State) -> SimState,
    ) -> Result<(Vec<DiagnosticRecord>, u64, f64), CliError> {
        let total = self.scheme.total_steps();
        if start > total {
            return Err(usage(format!("checkpoint at step {start} lies beyond the horizon ({total} steps)")));
        }
        let dt = self.scheme.dt;
        let mut records = Vec::new();
        let mut at = start;
        loop {
            let end = if self.every > 0 { total.min((at / self.every + 1) * self.every) } else { total };
            let seg = SchemeSpec {
                horizon: end as f64 * dt,
                ..self.scheme.clone()
            };
            debug_assert_eq!(seg.total_steps(), end);
            let traj = integrate_from(sys, state, at, &seg, self.diag)?;
            let skip = usize::from(at != start || self.resumed);
            records.extend(traj.records.into_iter().skip(skip));
            state = traj.final_state;
            at = traj.final_step;
            let ck = Checkpoint {
                config_hash: self.hash,
                step: at,
                t: at as f64 * dt,
                state: wrap(state.clone()),
            };
            save_checkpoint(&ck, self.path)?;
            log::info!("step {at}/{total} checkpointed");
            if at >= total {
                let l2 = sys.primary(&state).l2_norm_sq();
                return Ok((records, at, l2));
            }
        }
    }
}

fn raw_scheme_value(cfg: &SimConfig, key: &str) -> Option<Value> {
    let v = cfg.raw.get("scheme")?.get(key)?;
    serde_json::to_value(v).ok()
}

fn forcing_spec(cfg: &SimConfig) -> Option<ForcingSpec> {
    match cfg.physics.as_ref()?.forcing.as_ref()? {
        ForcingConfig::Modes(modes) => Some(ForcingSpec::Modes { modes: modes.clone() }),
        ForcingConfig::Profile { amplitude, exponent, kmax } => Some(ForcingSpec::PowerLaw {
            amplitude: *amplitude,
            exponent: *exponent,
            kmax: *kmax,
            seed: cfg.seed,
        }),
    }
}

/// Settings for one experiment: defaults, then values taken from the general
/// sections of the config, then `[experiment.params]`.
fn experiment_settings<T: Serialize + DeserializeOwned + Default>(
    mapped: Map<String, Value>,
    cfg: &SimConfig,
) -> Result<T, CliError> {
    let mut v = serde_json::to_value(T::default()).map_err(|e| usage(e.to_string()))?;
    let obj = v.as_object_mut().expect("experiment settings are structs");
    obj.extend(mapped);
    obj.extend(cfg.experiment.params.clone());
    serde_json::from_value(v).map_err(|e| CliError::Config(ConfigErrors(vec![format!("experiment.params: {e}")])))
}

fn mapped_fields(cfg: &SimConfig, name: &str) -> Map<String, Value> {
    let mut m = Map::new();
    let mut put = |k: &str, v: Option<Value>| {
        if let Some(v) = v {
            m.insert(k.into(), v);
        }
    };
    let gamma = cfg.physics.as_ref().map(|p| json!(p.gamma));
    let has_seed = cfg.raw.contains_key("seed");
    put("m", cfg.grid.as_ref().map(|g| json!(g.m)));
    put("dt", raw_scheme_value(cfg, "dt"));
    if name != "weak_limit" {
        put("store_every", raw_scheme_value(cfg, "store_every"));
        put("seed", has_seed.then(|| json!(cfg.seed)));
    }
    if name != "smoothing" {
        put("forcing", forcing_spec(cfg).map(|f| serde_json::to_value(f).expect("forcing serializes")));
    }
    match name {
        "absorbing_ball" => {
            put("gammas", gamma.map(|g| json!([g])));
            put("members", cfg.experiment.ensemble.map(|n| json!(n)));
        }
        "weak_limit" => {
            put("gamma", gamma);
            put("n_list", cfg.experiment.n_list.as_ref().map(|n| json!(n)));
            if let Some(InitialSpec::Modes(modes)) = &cfg.initial {
                put("u0", Some(serde_json::to_value(modes).expect("modes serialize")));
            }
        }
        "decomposition" => {
            put("gamma", gamma);
            put("cutoff", cfg.grid.as_ref().and_then(|g| g.cutoff).map(|n| json!(n)));
            put("horizon", raw_scheme_value(cfg, "horizon"));
        }
        _ => {
            put("gamma", gamma);
            put("members", cfg.experiment.ensemble.map(|n| json!(n)));
        }
    }
    m
}

fn finish_report(
    mut report: ExperimentReport,
    mut artifacts: Vec<PathBuf>,
    out: &Path,
) -> Result<Produced, CliError> {
    let path = out.join("report.json");
    artifacts.push(path.clone());
    report.artifacts = artifacts
        .iter()
        .map(|p| p.strip_prefix(out).unwrap_or(p).display().to_string())
        .collect();
    write_json(&path, &report)?;
    let failed: Vec<&Check> = report
        .checks
        .iter()
        .filter(|c| c.status != dnls_core::experiments::CheckStatus::Pass)
        .collect();
    let summary = json!({
        "status": if failed.is_empty() { "pass" } else { "checks_failed" },
        "name": report.name,
        "checks": report.checks.len(),
        "failed": failed,
    });
    Ok((report.passed(), artifacts, summary))
}

fn experiment(cfg: &SimConfig, name: &str, out: &Path) -> Result<Produced, CliError> {
    if !EXPERIMENTS.contains(&name) {
        return Err(usage(format!("unknown experiment `{name}` ({})", EXPERIMENTS.join(", "))));
    }
    let mapped = mapped_fields(cfg, name);
    let output: ExperimentOutput = match name {
        "absorbing_ball" => run_absorbing_ball(&experiment_settings::<AbsorbingBallConfig>(mapped, cfg)?)?,
        "weak_limit" => run_weak_limit(&experiment_settings::<WeakLimitConfig>(mapped, cfg)?)?,
        "decomposition" => run_decomposition(&experiment_settings::<DecompositionConfig>(mapped, cfg)?)?,
        _ => run_smoothing(&experiment_settings::<SmoothingConfig>(mapped, cfg)?)?,
    };
    let mut artifacts = Vec::new();
    for s in &output.series {
        write_series(&s.spec, &s.records, &out.join("series").join(&s.label), &cfg.output.formats, &mut artifacts)?;
    }
    finish_report(output.report, artifacts, out)
}

fn bourgain(cfg: &SimConfig, name: &str, out: &Path) -> Result<Produced, CliError> {
    let seed_override = cfg.raw.contains_key("seed").then_some(cfg.seed);
    let b = &cfg.bourgain;
    let mut artifacts = Vec::new();
    let report = match name {
        "damping" => {
            let mut settings = b.damping.clone();
            if let Some(s) = seed_override {
                settings.seed = s;
            }
            let result = damping_scaling(&settings)?;
            let path = out.join("damping.json");
            write_json(&path, &result)?;
            artifacts.push(path);
            let mut r = ExperimentReport::new("bourgain_damping", &settings)?;
            r.checks.push(Check::at_most(
                "damping-slope",
                "fitted log-log slope of the median trilinear ratio against N".into(),
                result.slope,
                -0.15,
            ));
            r.measure("median_non_increasing", result.median_non_increasing);
            r.measure("records", &result.records);
            r
        }
        "l4" => {
            let seed = seed_override.unwrap_or(0);
            let summary = l4_ensemble(b.l4.m, b.l4.l, b.l4.samples, seed)?;
            let path = out.join("l4.json");
            write_json(&path, &summary)?;
            artifacts.push(path);
            let mut r = ExperimentReport::new("bourgain_l4", &json!({ "l4": b.l4, "seed": seed }))?;
            r.checks.push(Check::from_bool(
                "l4-ratio",
                "largest sampled ‖u‖_{L⁴} / ‖u‖_{X^{3/8,0}}".into(),
                summary.max_ratio,
                "finite".into(),
                summary.max_ratio.is_finite(),
            ));
            r.measure("summary", &summary);
            r
        }
        "resonance" => {
            let seed = seed_override.unwrap_or(0);
            let sweep = resonance_sweep(b.resonance.trials, b.resonance.kmax, seed)?;
            let mut r = ExperimentReport::new("bourgain_resonance", &json!({ "resonance": b.resonance, "seed": seed }))?;
            r.checks.push(Check::at_most(
                "resonance-identity",
                format!("triples violating the identity out of {}", sweep.trials),
                sweep.failures as f64,
                0.0,
            ));
            r.measure("sweep", &sweep);
            r
        }
        other => return Err(usage(format!("unknown bourgain run `{other}` ({})", BOURGAIN_RUNS.join(", ")))),
    };
    finish_report(report, artifacts, out)
}
