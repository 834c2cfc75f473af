//! Invariant suite behind the `check` command: transform and projection
//! identities across grid sizes, exact linear decay, replay and resume.

use std::f64::consts::PI;

use dnls_core::diagnostics::DiagnosticsSpec;
use dnls_core::equations::PhysParams;
use dnls_core::experiments::{random_field_with_norm, Check, ExperimentReport};
use dnls_core::integrator::{integrate, integrate_from, FullSystem, SchemeSpec};
use dnls_core::spectral::{compensated_sum, project};
use dnls_core::{Part, Spectral, SpectralField, C64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{decode, encode, Checkpoint, SimState};
use crate::CliError;

pub const DEFAULT_SIZES: [usize; 7] = [16, 32, 64, 128, 256, 512, 1024];

/// Relative tolerance for identities that hold up to rounding.
const ROUNDING: f64 = 1e-12;

fn full_band(m: usize, rng: &mut ChaCha8Rng) -> SpectralField {
    let mut f = SpectralField::zeros(m);
    let h = m as i64 / 2;
    for k in (1 - h)..h {
        f.set(k, C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    }
    f
}

fn max_diff(a: &SpectralField, b: &SpectralField) -> f64 {
    a.coeffs().iter().zip(b.coeffs()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// Transform, Parseval, projection and dealiasing identities on one grid.
fn grid_checks(m: usize, seed: u64) -> Result<Vec<Check>, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ m as u64);
    let sp = Spectral::new(m, 2)?;
    let u = full_band(m, &mut rng);
    let samples = sp.inverse(&u)?;
    let back = sp.forward(&samples)?;
    let scale = u.coeffs().iter().map(|c| c.norm()).fold(0.0, f64::max);
    let mut checks = vec![Check::at_most(
        "roundtrip",
        format!("M = {m}: max |forward(inverse(û)) - û| / max |û|"),
        max_diff(&back, &u) / scale,
        ROUNDING,
    )];

    let quadrature = 2.0 * PI / m as f64 * compensated_sum(samples.iter().map(|z| z.norm_sqr()));
    let spectral = u.l2_norm_sq();
    checks.push(Check::at_most(
        "parseval",
        format!("M = {m}: |grid quadrature of |u|² - 2πΣ|û|²| / 2πΣ|û|²"),
        (quadrature - spectral).abs() / spectral,
        ROUNDING,
    ));

    let n = m / 4;
    let low = project(&u, n, Part::Low)?;
    let high = project(&u, n, Part::High)?;
    let split_exact = low.add(&high)? == u;
    let idempotent = project(&low, n, Part::Low)? == low && project(&high, n, Part::High)? == high;
    let disjoint = low
        .coeffs()
        .iter()
        .zip(high.coeffs())
        .all(|(a, b)| a.norm() == 0.0 || b.norm() == 0.0);
    checks.push(Check::from_bool(
        "projection",
        format!("M = {m}, N = {n}: P_N + Q_N = I, both idempotent, disjoint supports"),
        f64::from(u8::from(split_exact && idempotent && disjoint)),
        "exact".into(),
        split_exact && idempotent && disjoint,
    ));
    let pythagoras = (low.l2_norm_sq() + high.l2_norm_sq() - spectral).abs() / spectral;
    checks.push(Check::at_most(
        "projection-norms",
        format!("M = {m}: |‖P_N u‖² + ‖Q_N u‖² - ‖u‖²| / ‖u‖²"),
        pythagoras,
        ROUNDING,
    ));

    // A single mode is closed under |u|²u: the product is |a|²a in the same slot.
    let k = (m / 2 - 1) as i64;
    let a = C64::new(0.8, -0.35);
    let single = SpectralField::from_modes(m, &[(k, a)])?;
    let expected = SpectralField::from_modes(m, &[(k, a * a.norm_sqr())])?;
    checks.push(Check::at_most(
        "dealiased-cubic",
        format!("M = {m}: max coefficient error of |u|²u for u = a·e^{{i{k}x}}"),
        max_diff(&sp.cubic(&single)?, &expected),
        ROUNDING,
    ));
    Ok(checks)
}

/// `f = 0` without the cubic term: `‖u(t)‖ = e^{-γt}‖u0‖` exactly.
fn linear_decay_check() -> Result<Check, CliError> {
    let m = 128;
    let gamma = 0.7;
    let p = PhysParams::new(gamma, SpectralField::zeros(m))?.linear_only();
    let sys = FullSystem::new(Spectral::new(m, 2)?, p)?;
    let u0 = random_field_with_norm(m, m / 2 - 1, 3.0, &mut ChaCha8Rng::seed_from_u64(3))?;
    let traj = integrate(&sys, u0.clone(), &SchemeSpec::strang(1e-3, 5.0, 50)?, &DiagnosticsSpec::default())?;
    let worst = traj
        .records
        .iter()
        .map(|r| {
            let exact = (-gamma * r.t).exp() * u0.l2_norm();
            (r.l2_sq.sqrt() - exact).abs() / exact
        })
        .fold(0.0, f64::max);
    Ok(Check::at_most(
        "linear-decay",
        "max_t |‖u(t)‖ - e^{-γt}‖u0‖| / (e^{-γt}‖u0‖), M = 128".into(),
        worst,
        ROUNDING,
    ))
}

fn bits(f: &SpectralField) -> Vec<u64> {
    f.coeffs().iter().flat_map(|c| [c.re.to_bits(), c.im.to_bits()]).collect()
}

/// Two identical runs agree bit for bit, and so does a run interrupted halfway,
/// serialized through a checkpoint and resumed.
fn replay_checks() -> Result<Vec<Check>, CliError> {
    let m = 64;
    let f = SpectralField::from_modes(m, &[(1, C64::new(0.3, 0.0)), (-3, C64::new(0.0, 0.1))])?;
    let p = PhysParams::new(0.4, f)?;
    let sys = FullSystem::new(Spectral::new(m, 2)?, p)?;
    let u0 = random_field_with_norm(m, 8, 2.0, &mut ChaCha8Rng::seed_from_u64(9))?;
    let diag = DiagnosticsSpec::default();
    let full = SchemeSpec::strang(1e-3, 2.0, 100)?;
    let a = integrate(&sys, u0.clone(), &full, &diag)?;
    let b = integrate(&sys, u0.clone(), &full, &diag)?;
    let replay = bits(&a.final_state) == bits(&b.final_state) && a.records == b.records;

    let half = integrate(&sys, u0, &SchemeSpec::strang(1e-3, 1.0, 100)?, &diag)?;
    let ck = Checkpoint {
        config_hash: [0; 32],
        step: half.final_step,
        t: half.final_step as f64 * 1e-3,
        state: SimState::Full(half.final_state),
    };
    let restored = decode(&encode(&ck)).map_err(|e| CliError::Usage(e.to_string()))?;
    let SimState::Full(state) = restored.state else { unreachable!("encoded a full state") };
    let resumed = integrate_from(&sys, state, restored.step, &full, &diag)?;
    let shared = resumed.records.iter().skip(1).all(|r| a.records.iter().any(|q| q == r));
    let resume = bits(&resumed.final_state) == bits(&a.final_state) && shared;
    Ok(vec![
        Check::from_bool("replay", "two runs of one configuration agree bit for bit".into(), f64::from(u8::from(replay)), "exact".into(), replay),
        Check::from_bool(
            "resume",
            "run interrupted at t = 1 and resumed from its checkpoint matches the uninterrupted run bit for bit".into(),
            f64::from(u8::from(resume)),
            "exact".into(),
            resume,
        ),
    ])
}

pub fn run_suite(sizes: &[usize]) -> Result<ExperimentReport, CliError> {
    let mut report = ExperimentReport::new("invariants", &serde_json::json!({ "sizes": sizes }))?;
    for &m in sizes {
        report.checks.extend(grid_checks(m, 17)?);
    }
    report.checks.push(linear_decay_check()?);
    report.checks.extend(replay_checks()?);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_on_small_grids() {
        let r = run_suite(&[16, 32, 64]).unwrap();
        assert!(r.passed(), "{:#?}", r.checks);
        assert_eq!(r.checks.len(), 3 * 5 + 3);
    }
}
