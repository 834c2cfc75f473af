//! Scalar diagnostics along trajectories: the L² energy balance, the absorbing
//! ball, equicontinuity of `t ↦ ‖u(t)‖²`, frequency tails, weak pairings and
//! exponential decay fits.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::equations::{pairing, PhysParams};
use crate::error::{Error, Result};
use crate::spectral::{sobolev_norm, wavenumber, CompensatedSum, SpectralField, C64};

/// Values below this are treated as roundoff and excluded from fits.
pub const RESOLUTION_FLOOR: f64 = 1e-12;

/// Test function for weak pairings `⟨u, φ⟩`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub id: String,
    pub field: SpectralField,
}

impl Probe {
    /// `e^{ikx}`, identified as `k{k}` (negative wavenumbers as `km{|k|}`).
    pub fn mode(m: usize, k: i64) -> Result<Self> {
        let id = if k < 0 {
            format!("km{}", -k)
        } else {
            format!("k{k}")
        };
        Ok(Self {
            id,
            field: SpectralField::from_modes(m, &[(k, C64::new(1.0, 0.0))])?,
        })
    }
}

/// The family `{e^{ikx} : |k| <= 4}` (the constant included).
pub fn standard_probes(m: usize) -> Result<Vec<Probe>> {
    (-4..=4).map(|k| Probe::mode(m, k)).collect()
}

/// What to record at each stored sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsSpec {
    pub sobolev: Vec<f64>,
    pub probes: Vec<Probe>,
    pub tail_cutoffs: Vec<usize>,
}

impl Default for DiagnosticsSpec {
    fn default() -> Self {
        Self {
            sobolev: vec![1.0, 2.0],
            probes: Vec::new(),
            tail_cutoffs: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRecord {
    pub t: f64,
    pub l2_sq: f64,
    /// `(s, ‖u‖_{H^s})`.
    pub hs_norms: Vec<(f64, f64)>,
    pub pairings: Vec<(String, C64)>,
    /// Energy balance residual of the interval ending at this sample (0 for the first sample).
    pub energy_residual: f64,
    /// `(N, ‖Q_N u‖)`.
    pub tail: Vec<(usize, f64)>,
    /// `Re ∫ f ū dx`.
    pub forcing_work: f64,
}

/// Trapezoid residual of `Δ‖u‖² + 2γ∫‖u‖² - 2∫Re⟨f,u⟩` between two samples.
pub fn interval_residual(prev: &DiagnosticRecord, next: &DiagnosticRecord, gamma: f64) -> f64 {
    let dt = next.t - prev.t;
    (next.l2_sq - prev.l2_sq) + gamma * dt * (prev.l2_sq + next.l2_sq)
        - dt * (prev.forcing_work + next.forcing_work)
}

/// Diagnostics of field `u` at time `t`.
pub fn record(
    t: f64,
    u: &SpectralField,
    p: &PhysParams,
    spec: &DiagnosticsSpec,
    prev: Option<&DiagnosticRecord>,
) -> Result<DiagnosticRecord> {
    let pairings = spec
        .probes
        .iter()
        .map(|probe| Ok((probe.id.clone(), pairing(u, &probe.field)?)))
        .collect::<Result<Vec<_>>>()?;
    let mut rec = DiagnosticRecord {
        t,
        l2_sq: u.l2_norm_sq(),
        hs_norms: spec.sobolev.iter().map(|&s| (s, sobolev_norm(u, s))).collect(),
        pairings,
        energy_residual: 0.0,
        tail: tail_profile(u, &spec.tail_cutoffs)?,
        forcing_work: pairing(&p.forcing, u)?.re,
    };
    if let Some(prev) = prev {
        rec.energy_residual = interval_residual(prev, &rec, p.gamma);
    }
    Ok(rec)
}

/// `ε(N) = ‖Q_N u‖` for each cutoff. Monotone non-increasing in `N` by construction.
pub fn tail_profile(field: &SpectralField, cutoffs: &[usize]) -> Result<Vec<(usize, f64)>> {
    let m = field.m();
    let half = m / 2;
    if let Some(&bad) = cutoffs.iter().find(|&&n| n >= half) {
        return Err(Error::CutoffTooLarge { cutoff: bad, half });
    }
    if cutoffs.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter(
            "tail cutoffs must be strictly increasing".into(),
        ));
    }
    // shell[j] = Σ_{|k| = j} |û_k|²
    let mut shell = vec![0.0; half + 1];
    for (i, c) in field.coeffs().iter().enumerate() {
        shell[wavenumber(i, m).unsigned_abs() as usize] += c.norm_sqr();
    }
    // suffix[n] = Σ_{j > n} shell[j], accumulated from the top so it is monotone.
    let mut suffix = vec![0.0; half + 1];
    let mut acc = CompensatedSum::new();
    for j in (0..half).rev() {
        acc.add(shell[j + 1]);
        suffix[j] = acc.value().max(if j + 1 < half { suffix[j + 1] } else { 0.0 });
    }
    Ok(cutoffs
        .iter()
        .map(|&n| (n, (2.0 * PI * suffix[n]).sqrt()))
        .collect())
}

/// `⟨u, φ⟩ = ∫ u φ̄ dx`.
pub fn weak_pairing(u: &SpectralField, probe: &SpectralField) -> Result<C64> {
    pairing(u, probe)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyResidualReport {
    pub residuals: Vec<f64>,
    /// `max_m |r_m| / Δt_m`.
    pub max_per_unit_time: f64,
    /// `Σ |r_m| / (t_end - t_start)`.
    pub mean_per_unit_time: f64,
    /// Running balance `R(t_m) = Σ_{j<=m} r_j`, i.e. the integrated identity over `[t_0, t_m]`.
    pub cumulative: Vec<f64>,
    /// `max_m |R(t_m)| / (t_end - t_start)`. Rounding enters once per sample rather
    /// than once per `Δt`, so this stays informative at very small steps.
    pub cumulative_per_unit_time: f64,
}

pub fn energy_residual(records: &[DiagnosticRecord], p: &PhysParams) -> Result<EnergyResidualReport> {
    if records.len() < 2 {
        return Err(Error::InsufficientData(
            "energy residual needs at least two samples".into(),
        ));
    }
    let residuals: Vec<f64> = records
        .windows(2)
        .map(|w| interval_residual(&w[0], &w[1], p.gamma))
        .collect();
    let max_per_unit_time = records
        .windows(2)
        .zip(&residuals)
        .map(|(w, r)| r.abs() / (w[1].t - w[0].t))
        .fold(0.0, f64::max);
    let span = records.last().unwrap().t - records[0].t;
    let total = residuals.iter().map(|r| r.abs()).sum::<f64>();
    let mut running = CompensatedSum::new();
    let cumulative: Vec<f64> = residuals
        .iter()
        .map(|&r| {
            running.add(r);
            running.value()
        })
        .collect();
    let cumulative_per_unit_time = cumulative.iter().map(|r| r.abs()).fold(0.0, f64::max) / span;
    Ok(EnergyResidualReport {
        residuals,
        max_per_unit_time,
        mean_per_unit_time: total / span,
        cumulative,
        cumulative_per_unit_time,
    })
}

/// Right-hand side of the absorbing-ball bound,
/// `e^{-γt}‖u0‖² + (1 - e^{-γt}) ‖f‖² / γ²`.
pub fn absorbing_bound(t: f64, u0_l2_sq: f64, p: &PhysParams) -> f64 {
    let decay = (-p.gamma * t).exp();
    decay * u0_l2_sq - (-p.gamma * t).exp_m1() * p.forcing.l2_norm_sq() / (p.gamma * p.gamma)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbsorbingReport {
    /// `(t, ‖u(t)‖², bound)` for samples above the bound plus tolerance.
    pub violations: Vec<(f64, f64, f64)>,
    pub tolerance: f64,
    pub radius: f64,
    /// First sample time with `‖u‖ <= M0`.
    pub entry_time: Option<f64>,
    /// No sample after entry leaves the ball of radius `M0(1 + 1e-6)`.
    pub stays_inside: bool,
}

impl AbsorbingReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty() && self.entry_time.is_some() && self.stays_inside
    }
}

pub fn absorbing_check(
    records: &[DiagnosticRecord],
    u0: &SpectralField,
    p: &PhysParams,
) -> AbsorbingReport {
    let u0_sq = u0.l2_norm_sq();
    let tolerance = 1e-6 * (1.0 + u0_sq);
    let radius = p.absorbing_radius();
    let violations = records
        .iter()
        .filter_map(|r| {
            let bound = absorbing_bound(r.t, u0_sq, p);
            (r.l2_sq > bound + tolerance).then_some((r.t, r.l2_sq, bound))
        })
        .collect();
    let entry = records.iter().position(|r| r.l2_sq.sqrt() <= radius);
    let stays_inside = entry.is_some_and(|i| {
        records[i..]
            .iter()
            .all(|r| r.l2_sq.sqrt() <= radius * (1.0 + 1e-6))
    });
    AbsorbingReport {
        violations,
        tolerance,
        radius,
        entry_time: entry.map(|i| records[i].t),
        stays_inside,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquicontinuityReport {
    /// `sup |‖u(t1)‖² - ‖u(t0)‖²| / |t1 - t0|` over sample pairs.
    pub modulus: f64,
    /// `3γ sup ‖u‖² + ‖f‖²/γ`.
    pub bracket: f64,
}

impl EquicontinuityReport {
    pub fn within_bracket(&self) -> bool {
        self.modulus <= self.bracket
    }
}

/// The supremum of difference quotients over all pairs equals the supremum over
/// adjacent pairs, which is what is computed.
pub fn equicontinuity_modulus(records: &[DiagnosticRecord], p: &PhysParams) -> EquicontinuityReport {
    let modulus = records
        .windows(2)
        .map(|w| (w[1].l2_sq - w[0].l2_sq).abs() / (w[1].t - w[0].t))
        .fold(0.0, f64::max);
    let sup = records.iter().map(|r| r.l2_sq).fold(0.0, f64::max);
    EquicontinuityReport {
        modulus,
        bracket: 3.0 * p.gamma * sup + p.forcing.l2_norm_sq() / p.gamma,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    /// Slope of `log ‖w‖` against `t`.
    pub rate: f64,
    /// `exp(intercept)`.
    pub prefactor: f64,
    pub intercept: f64,
    pub points_used: usize,
}

/// Least-squares fit of `log y = intercept + rate·t` over samples above the floor.
pub fn decay_fit(series: &[(f64, f64)]) -> Result<DecayFit> {
    let pts: Vec<(f64, f64)> = series
        .iter()
        .filter(|(_, y)| *y > RESOLUTION_FLOOR && y.is_finite())
        .map(|&(t, y)| (t, y.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} samples above the resolution floor; need at least 2",
            pts.len()
        )));
    }
    let (slope, intercept) = linear_fit(&pts)?;
    Ok(DecayFit {
        rate: slope,
        prefactor: intercept.exp(),
        intercept,
        points_used: pts.len(),
    })
}

/// Ordinary least squares `y = intercept + slope·x`; returns `(slope, intercept)`.
pub fn linear_fit(pts: &[(f64, f64)]) -> Result<(f64, f64)> {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::InsufficientData(
            "fit abscissae are all equal".into(),
        ));
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// CSV column names for records produced under `spec`, in emission order:
/// `t, l2_sq, h{s}..., energy_residual, tail_N{n}..., pairing_{id}_re, pairing_{id}_im ...`.
pub fn csv_columns(spec: &DiagnosticsSpec) -> Vec<String> {
    let mut cols = vec!["t".to_string(), "l2_sq".to_string()];
    cols.extend(spec.sobolev.iter().map(|s| format!("h{s}")));
    cols.push("energy_residual".into());
    cols.extend(spec.tail_cutoffs.iter().map(|n| format!("tail_N{n}")));
    for probe in &spec.probes {
        cols.push(format!("pairing_{}_re", probe.id));
        cols.push(format!("pairing_{}_im", probe.id));
    }
    cols
}

/// Values of `rec` in the order of [`csv_columns`].
pub fn csv_values(rec: &DiagnosticRecord) -> Vec<f64> {
    let mut vals = vec![rec.t, rec.l2_sq];
    vals.extend(rec.hs_norms.iter().map(|h| h.1));
    vals.push(rec.energy_residual);
    vals.extend(rec.tail.iter().map(|t| t.1));
    for (_, z) in &rec.pairings {
        vals.push(z.re);
        vals.push(z.im);
    }
    vals
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{project, Part, Spectral};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn tail_of_single_mode() {
        let f = SpectralField::from_modes(32, &[(1, c(1.0, 0.0))]).unwrap();
        let t = tail_profile(&f, &[0, 1, 2, 5]).unwrap();
        assert!(t[0].1 > 0.0);
        assert!(t[1..].iter().all(|&(_, e)| e == 0.0));
        assert!(tail_profile(&f, &[16]).is_err());
        assert!(tail_profile(&f, &[3, 2]).is_err());
    }

    #[test]
    fn tail_of_geometric_profile_matches_closed_form() {
        let m = 64;
        let mut f = SpectralField::zeros(m);
        for k in -31_i64..32 {
            f.set(k, c(2f64.powi(-(k.abs() as i32)), 0.0));
        }
        let cutoffs = [0, 1, 2, 4, 8];
        for (n, eps) in tail_profile(&f, &cutoffs).unwrap() {
            // 2 Σ_{j=n+1}^{31} 4^{-j} = (2/3) 4^{-n} (1 - 4^{-(31-n)})
            let closed = 2.0 * PI * (2.0 / 3.0) * 4f64.powi(-(n as i32)) * (1.0 - 4f64.powi(-(31 - n as i32)));
            assert!((eps * eps - closed).abs() <= 1e-14 * closed, "N = {n}");
        }
    }

    #[test]
    fn tail_matches_projection_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut f = SpectralField::zeros(64);
        for k in -31..32 {
            f.set(k, c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        }
        for (n, eps) in tail_profile(&f, &[0, 3, 10, 30]).unwrap() {
            let q = project(&f, n, Part::High).unwrap().l2_norm();
            assert!((eps - q).abs() <= 1e-13 * q.max(1.0));
        }
        let t = tail_profile(&f, &[0]).unwrap();
        assert!(t[0].1 <= f.l2_norm());
    }

    #[test]
    fn pairing_matches_quadrature() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sp = Spectral::new(32, 2).unwrap();
        let mut u = SpectralField::zeros(32);
        let mut phi = SpectralField::zeros(32);
        for k in -15..16 {
            u.set(k, c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
            phi.set(k, c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        }
        let su = sp.inverse(&u).unwrap();
        let sphi = sp.inverse(&phi).unwrap();
        let quad: C64 = su.iter().zip(&sphi).map(|(a, b)| a * b.conj()).sum::<C64>() * (2.0 * PI / 32.0);
        let p = weak_pairing(&u, &phi).unwrap();
        assert!((p - quad).norm() <= 1e-10 * quad.norm());
        let self_pair = weak_pairing(&u, &u).unwrap();
        assert!(self_pair.im.abs() < 1e-12 * self_pair.re);
        assert!((self_pair.re - u.l2_norm_sq()).abs() < 1e-12 * self_pair.re);
        let swapped = weak_pairing(&phi, &u).unwrap();
        assert!((swapped - p.conj()).norm() < 1e-12 * p.norm());
    }

    #[test]
    fn exact_exponential_fit() {
        let (gamma, c0) = (0.7, 3.5);
        let series: Vec<_> = (0..50)
            .map(|i| {
                let t = i as f64 * 0.2;
                (t, c0 * (-gamma * t).exp())
            })
            .collect();
        let fit = decay_fit(&series).unwrap();
        assert!((fit.rate + gamma).abs() < 1e-10);
        assert!((fit.intercept - c0.ln()).abs() < 1e-10);
    }

    #[test]
    fn fit_censors_floor() {
        let series = vec![(0.0, 1e-13), (1.0, 0.0), (2.0, 1e-20)];
        assert!(decay_fit(&series).is_err());
        let series = vec![(0.0, 1.0), (1.0, 0.5), (2.0, 1e-14)];
        let fit = decay_fit(&series).unwrap();
        assert_eq!(fit.points_used, 2);
        assert!((fit.rate - 0.5f64.ln()).abs() < 1e-14);
    }

    fn rec(t: f64, l2_sq: f64, work: f64) -> DiagnosticRecord {
        DiagnosticRecord {
            t,
            l2_sq,
            hs_norms: vec![],
            pairings: vec![],
            energy_residual: 0.0,
            tail: vec![],
            forcing_work: work,
        }
    }

    #[test]
    fn residual_needs_two_samples() {
        let p = PhysParams::new(1.0, SpectralField::zeros(8)).unwrap();
        assert!(energy_residual(&[rec(0.0, 1.0, 0.0)], &p).is_err());
    }

    #[test]
    fn constant_steady_records_have_zero_residual_and_modulus() {
        // u = g with the cubic term off: ‖g‖² constant and γ‖g‖² = Re⟨f, g⟩.
        let f = SpectralField::from_modes(16, &[(1, c(0.4, 0.1)), (-2, c(0.0, 0.3))]).unwrap();
        let p = PhysParams::new(0.5, f).unwrap().linear_only();
        let g = crate::equations::steady_state_g(&p.forcing, p.gamma).unwrap();
        let spec = DiagnosticsSpec::default();
        let mut recs = vec![record(0.0, &g, &p, &spec, None).unwrap()];
        for i in 1..10 {
            let r = record(i as f64 * 0.1, &g, &p, &spec, recs.last()).unwrap();
            recs.push(r);
        }
        let rep = energy_residual(&recs, &p).unwrap();
        assert!(rep.max_per_unit_time < 1e-12, "{}", rep.max_per_unit_time);
        assert_eq!(equicontinuity_modulus(&recs, &p).modulus, 0.0);
    }

    #[test]
    fn cumulative_balance_is_second_order_in_sample_spacing() {
        // Exact decay E(t) = e^{-2γt} with f = 0: only the trapezoid rule contributes.
        let p = PhysParams::new(0.5, SpectralField::zeros(8)).unwrap();
        let balance = |n: usize| {
            let recs: Vec<DiagnosticRecord> = (0..=n)
                .map(|i| {
                    let t = i as f64 / n as f64;
                    rec(t, (-t).exp(), 0.0)
                })
                .collect();
            let rep = energy_residual(&recs, &p).unwrap();
            let total: f64 = rep.residuals.iter().sum();
            assert!((rep.cumulative.last().unwrap() - total).abs() < 1e-15);
            rep.cumulative_per_unit_time
        };
        let ratio = balance(50) / balance(100);
        assert!((ratio - 4.0).abs() < 0.01, "{ratio}");
    }

    #[test]
    fn absorbing_bound_with_zero_data() {
        let f = SpectralField::from_modes(16, &[(1, c(1.0, 0.0))]).unwrap();
        let p = PhysParams::new(0.5, f).unwrap();
        let b = absorbing_bound(2.0, 0.0, &p);
        let expected = (1.0 - (-1.0f64).exp()) * p.forcing.l2_norm_sq() / 0.25;
        assert!((b - expected).abs() < 1e-14 * expected);
        let p0 = PhysParams::new(0.5, SpectralField::zeros(16)).unwrap();
        assert!((absorbing_bound(2.0, 3.0, &p0) - 3.0 * (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn csv_layout() {
        let mut spec = DiagnosticsSpec::default();
        spec.tail_cutoffs = vec![4, 8];
        spec.probes = vec![Probe::mode(32, -1).unwrap()];
        let cols = csv_columns(&spec);
        assert_eq!(
            cols,
            ["t", "l2_sq", "h1", "h2", "energy_residual", "tail_N4", "tail_N8", "pairing_km1_re", "pairing_km1_im"]
        );
        let f = SpectralField::from_modes(32, &[(-1, c(1.0, 2.0))]).unwrap();
        let p = PhysParams::new(1.0, SpectralField::zeros(32)).unwrap();
        let r = record(0.5, &f, &p, &spec, None).unwrap();
        assert_eq!(csv_values(&r).len(), cols.len());
    }
}
