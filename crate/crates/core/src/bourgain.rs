//! Discrete surrogates for Bourgain-space quantities on the time-periodic torus.
//!
//! A [`SpaceTimeField`] stores coefficients `c(σ, k)` of
//! `u(t, x) = Σ c(σ, k) e^{i(σ - k²)t} e^{ikx}` on the window `t ∈ [0, 2π)`,
//! where `σ = τ + k²` is the distance to the free dispersion relation. Storing
//! `σ` rather than `τ` keeps free evolutions exactly representable on a small
//! lattice; `τ = σ - k²` stays an integer, so the field is genuinely
//! `2π`-periodic in time and every norm below is an exact finite sum.

use std::collections::HashMap;
use std::f64::consts::PI;

use num_rational::BigRational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::diagnostics::linear_fit;
use crate::error::{Error, Result};
use crate::spectral::{bracket, slot, wavenumber, CompensatedSum, SpectralField, C64};

const ZERO: C64 = C64::new(0.0, 0.0);

/// Time profile applied to a free evolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Window {
    /// No cut-off: the periodic evolution itself.
    Periodic,
    /// `ψ(t) = 1` in the middle, cosine ramps of length `rise·2π` at both ends,
    /// zero at `t = 0`.
    CosineTaper { rise: f64 },
}

impl Window {
    pub fn profile(&self, t: f64) -> f64 {
        match *self {
            Window::Periodic => 1.0,
            Window::CosineTaper { rise } => {
                let r = rise * 2.0 * PI;
                let d = t.min(2.0 * PI - t);
                if d >= r {
                    1.0
                } else {
                    0.5 - 0.5 * (PI * d / r).cos()
                }
            }
        }
    }
}

/// Coefficients `c(σ, k)` for `k ∈ [-M/2, M/2)` and `σ ∈ [-L/2, L/2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeField {
    m: usize,
    l: usize,
    /// `k`-major, both indices in FFT order.
    coeffs: Vec<C64>,
}

fn check_even(n: usize) -> Result<()> {
    if n == 0 || n % 2 != 0 {
        return Err(Error::InvalidGridSize(n));
    }
    Ok(())
}

impl SpaceTimeField {
    pub fn zeros(m: usize, l: usize) -> Result<Self> {
        check_even(m)?;
        check_even(l)?;
        Ok(Self {
            m,
            l,
            coeffs: vec![ZERO; m * l],
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn l(&self) -> usize {
        self.l
    }

    fn index(&self, sigma: i64, k: i64) -> Option<usize> {
        let ks = slot(k, self.m)?;
        let ss = slot(sigma, self.l)?;
        Some(ks * self.l + ss)
    }

    pub fn get(&self, sigma: i64, k: i64) -> C64 {
        self.index(sigma, k).map_or(ZERO, |i| self.coeffs[i])
    }

    /// Panics outside the lattice or on non-finite values.
    pub fn set(&mut self, sigma: i64, k: i64, value: C64) {
        assert!(value.re.is_finite() && value.im.is_finite(), "non-finite coefficient");
        let i = self
            .index(sigma, k)
            .unwrap_or_else(|| panic!("(σ, k) = ({sigma}, {k}) outside the lattice"));
        self.coeffs[i] = value;
    }

    /// Nonzero entries as `(σ, k, c)`.
    pub fn entries(&self) -> impl Iterator<Item = (i64, i64, C64)> + '_ {
        let (m, l) = (self.m, self.l);
        self.coeffs.iter().enumerate().filter(|(_, c)| **c != ZERO).map(move |(i, &c)| {
            (wavenumber(i % l, l), wavenumber(i / l, m), c)
        })
    }

    pub fn scale(&self, factor: C64) -> Self {
        Self {
            coeffs: self.coeffs.iter().map(|c| c * factor).collect(),
            ..self.clone()
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.m != other.m || self.l != other.l {
            return Err(Error::GridMismatch {
                left: self.m * self.l,
                right: other.m * other.l,
            });
        }
        Ok(Self {
            coeffs: self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a + b).collect(),
            ..self.clone()
        })
    }

    /// Keeps the wavenumbers selected by `keep`.
    pub fn restrict(&self, keep: impl Fn(i64) -> bool) -> Self {
        let mut out = self.clone();
        for (ks, row) in out.coeffs.chunks_mut(self.l).enumerate() {
            if !keep(wavenumber(ks, self.m)) {
                row.fill(ZERO);
            }
        }
        out
    }

    /// Builds the field from `L` time samples `û(t_j, ·)` at `t_j = 2πj/L`.
    /// Exact whenever the interaction-frame profile `e^{ik²t}û(t, k)` has its
    /// time frequencies in `[-L/2, L/2)`.
    pub fn from_time_samples(samples: &[SpectralField]) -> Result<Self> {
        let l = samples.len();
        check_even(l)?;
        let m = samples[0].m();
        let mut out = Self::zeros(m, l)?;
        let fft = FftPlanner::new().plan_fft_forward(l);
        let mut buf = vec![ZERO; l];
        for ks in 0..m {
            if ks == m / 2 {
                continue;
            }
            let k = wavenumber(ks, m);
            for (j, s) in samples.iter().enumerate() {
                if s.m() != m {
                    return Err(Error::GridMismatch { left: s.m(), right: m });
                }
                buf[j] = s.coeffs()[ks] * frame_phase(k, j, l, 1);
            }
            fft.process(&mut buf);
            for (dst, src) in out.coeffs[ks * l..(ks + 1) * l].iter_mut().zip(&buf) {
                *dst = src / l as f64;
            }
        }
        if let Some(index) = out.coeffs.iter().position(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(out)
    }

    /// `ψ(t)·e^{-it∂²}φ` sampled on `L` times and brought to the lattice.
    pub fn free_evolution(phi: &SpectralField, l: usize, window: Window) -> Result<Self> {
        check_even(l)?;
        let m = phi.m();
        let samples: Vec<SpectralField> = (0..l)
            .map(|j| {
                let t = 2.0 * PI * j as f64 / l as f64;
                let psi = window.profile(t);
                let mut s = phi.clone();
                for (ks, c) in s.coeffs_mut().iter_mut().enumerate() {
                    *c *= frame_phase(wavenumber(ks, m), j, l, -1) * psi;
                }
                s
            })
            .collect();
        Self::from_time_samples(&samples)
    }

    fn active_tau_range(&self) -> Option<(i64, i64)> {
        let mut range: Option<(i64, i64)> = None;
        for (sigma, k, _) in self.entries() {
            let tau = sigma - k * k;
            range = Some(match range {
                None => (tau, tau),
                Some((lo, hi)) => (lo.min(tau), hi.max(tau)),
            });
        }
        range
    }

    /// Fourier coefficients `û(t_j, ·)` at `P` equally spaced times, `P ≥ L`.
    pub fn time_samples(&self, p: usize) -> Result<Vec<SpectralField>> {
        if p < self.l {
            return Err(Error::InvalidParameter(format!(
                "need at least L = {} time samples, got {p}",
                self.l
            )));
        }
        let m = self.m;
        let mut series = vec![vec![ZERO; p]; m];
        let ifft = FftPlanner::new().plan_fft_inverse(p);
        for (ks, row) in series.iter_mut().enumerate() {
            let src = &self.coeffs[ks * self.l..(ks + 1) * self.l];
            if src.iter().all(|c| *c == ZERO) {
                continue;
            }
            for (ss, &c) in src.iter().enumerate() {
                let sigma = wavenumber(ss, self.l);
                row[sigma.rem_euclid(p as i64) as usize] = c;
            }
            ifft.process(row);
            let k = wavenumber(ks, m);
            for (j, v) in row.iter_mut().enumerate() {
                *v *= frame_phase(k, j, p, -1);
            }
        }
        Ok((0..p)
            .map(|j| {
                let mut f = SpectralField::zeros(m);
                for (ks, c) in f.coeffs_mut().iter_mut().enumerate() {
                    *c = series[ks][j];
                }
                f
            })
            .collect())
    }

    /// Space-time samples `u(t_j, x_i)` on a `P × pad·M` grid, `t`-major.
    fn physical_samples(&self, p: usize, pad: usize) -> Result<Vec<Vec<C64>>> {
        let grid = pad * self.m;
        let ifft = FftPlanner::new().plan_fft_inverse(grid);
        let half = self.m / 2;
        self.time_samples(p)?
            .into_iter()
            .map(|f| {
                let mut buf = vec![ZERO; grid];
                buf[..half].copy_from_slice(&f.coeffs()[..half]);
                buf[grid - half + 1..].copy_from_slice(&f.coeffs()[half + 1..]);
                ifft.process(&mut buf);
                Ok(buf)
            })
            .collect()
    }

    /// `(∫∫|u|² dt dx)^{1/2}` by the trapezoid rule on a grid that makes it exact.
    pub fn l2_space_time(&self) -> Result<f64> {
        let Some((lo, hi)) = self.active_tau_range() else {
            return Ok(0.0);
        };
        let p = (2 * (hi - lo) as usize + 2).max(self.l).next_power_of_two();
        let mut acc = CompensatedSum::new();
        for row in self.physical_samples(p, 1)? {
            for v in row {
                acc.add(v.norm_sqr());
            }
        }
        Ok((acc.value() * 4.0 * PI * PI / (p * self.m) as f64).sqrt())
    }

    /// `(∫∫|u|⁴ dt dx)^{1/4}`, exact: the spatial grid is doubled and the time grid
    /// exceeds twice the spread of the active temporal frequencies.
    pub fn l4_norm(&self) -> Result<f64> {
        let Some((lo, hi)) = self.active_tau_range() else {
            return Ok(0.0);
        };
        let p = (2 * (hi - lo) as usize + 2).max(self.l).next_power_of_two();
        let mut acc = CompensatedSum::new();
        for row in self.physical_samples(p, 2)? {
            for v in row {
                acc.add(v.norm_sqr().powi(2));
            }
        }
        Ok((acc.value() * 4.0 * PI * PI / (p * 2 * self.m) as f64).powf(0.25))
    }
}

/// `e^{dir·ik²t_j}` with `t_j = 2πj/n`, reduced exactly in integer arithmetic.
fn frame_phase(k: i64, j: usize, n: usize, dir: i64) -> C64 {
    let r = ((k * k) as i128 * j as i128).rem_euclid(n as i128) as f64;
    C64::from_polar(1.0, dir as f64 * 2.0 * PI * r / n as f64)
}

/// `‖u‖_{X^{b,s}} = 2π (Σ ⟨σ⟩^{2b} ⟨k⟩^{2s} |c(σ,k)|²)^{1/2}`.
pub fn xbs_norm(f: &SpaceTimeField, b: f64, s: f64) -> f64 {
    let mut acc = CompensatedSum::new();
    for (sigma, k, c) in f.entries() {
        acc.add(bracket(sigma as f64).powf(2.0 * b) * bracket(k as f64).powf(2.0 * s) * c.norm_sqr());
    }
    2.0 * PI * acc.value().sqrt()
}

/// `‖u‖_{L⁴} / ‖u‖_{X^{3/8,0}}`.
pub fn l4_ratio(f: &SpaceTimeField) -> Result<f64> {
    let x = xbs_norm(f, 0.375, 0.0);
    if x == 0.0 {
        return Err(Error::InvalidParameter("L4 ratio of the zero field".into()));
    }
    Ok(f.l4_norm()? / x)
}

/// Both sides of the resonance identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Resonance {
    /// `σ - σ1 - σ2 - σ̃3` in exact rational arithmetic.
    pub lhs: BigRational,
    /// `2(k3 + k1)(k3 + k2)`.
    pub rhs: i128,
}

impl Resonance {
    pub fn holds(&self) -> bool {
        self.lhs == BigRational::from_integer(self.rhs.into())
    }
}

/// Evaluates `σ - σ1 - σ2 - σ̃3` for `k = k1 + k2 + k3`, `τ = τ1 + τ2 + τ3`,
/// `σ = τ + k²`, `σi = τi + ki²` (i = 1, 2) and `σ̃3 = τ3 - k3²`. The `τ`'s enter as
/// exact rationals, so no rounding is involved.
pub fn resonance_factor(k1: i64, k2: i64, k3: i64, taus: [f64; 3]) -> Result<Resonance> {
    let q = |x: f64| {
        BigRational::from_float(x)
            .ok_or_else(|| Error::InvalidParameter(format!("non-finite frequency {x}")))
    };
    let sq = |k: i128| BigRational::from_integer((k * k).into());
    let (t1, t2, t3) = (q(taus[0])?, q(taus[1])?, q(taus[2])?);
    let tau = &t1 + &t2 + &t3;
    let (a, b, c) = (k1 as i128, k2 as i128, k3 as i128);
    let sigma = tau + sq(a + b + c);
    let s1 = t1 + sq(a);
    let s2 = t2 + sq(b);
    let s3 = t3 - sq(c);
    Ok(Resonance {
        lhs: sigma - s1 - s2 - s3,
        rhs: modulus_bound(k1, k2, k3),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResonanceSweep {
    pub trials: usize,
    pub kmax: i64,
    pub seed: u64,
    pub failures: usize,
    /// First failing `(k1, k2, k3, τ1, τ2, τ3)`, if any.
    pub first_failure: Option<(i64, i64, i64, f64, f64, f64)>,
}

/// Checks the identity on random integer triples in `[-kmax, kmax]³` with
/// random real `τ`'s.
pub fn resonance_sweep(trials: usize, kmax: i64, seed: u64) -> Result<ResonanceSweep> {
    if trials == 0 || kmax <= 0 {
        return Err(Error::InvalidParameter("need trials > 0 and kmax > 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sweep = ResonanceSweep {
        trials,
        kmax,
        seed,
        failures: 0,
        first_failure: None,
    };
    for _ in 0..trials {
        let k: [i64; 3] = std::array::from_fn(|_| rng.random_range(-kmax..=kmax));
        let taus: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1e3..1e3));
        if !resonance_factor(k[0], k[1], k[2], taus)?.holds() {
            sweep.failures += 1;
            sweep
                .first_failure
                .get_or_insert((k[0], k[1], k[2], taus[0], taus[1], taus[2]));
        }
    }
    Ok(sweep)
}

/// `2(k3 + k1)(k3 + k2)`.
pub fn modulus_bound(k1: i64, k2: i64, k3: i64) -> i128 {
    2 * (k3 as i128 + k1 as i128) * (k3 as i128 + k2 as i128)
}

/// Nonzero rows of a field: `(k, c(·, k))` with `σ` offset by `L/2`.
fn dense_rows(f: &SpaceTimeField) -> Vec<(i64, Vec<C64>)> {
    let (m, l) = (f.m, f.l);
    let half = (l / 2) as i64;
    let mut out: Vec<(i64, Vec<C64>)> = (0..m)
        .filter_map(|ks| {
            let src = &f.coeffs[ks * l..(ks + 1) * l];
            if src.iter().all(|c| *c == ZERO) {
                return None;
            }
            let mut row = vec![ZERO; l];
            for (ss, &c) in src.iter().enumerate() {
                row[(wavenumber(ss, l) + half) as usize] = c;
            }
            Some((wavenumber(ks, m), row))
        })
        .collect();
    out.sort_by_key(|r| r.0);
    out
}

/// `‖u1·u2·ū3‖_{X^{b,0}}` computed exactly on the integer `σ` lattice.
///
/// The product has spatial frequency `k = k1 + k2 - k3` and
/// `σ = σ1 + σ2 - σ3 + (k² - k1² - k2² + k3²)`; both are accumulated directly.
pub fn trilinear_xb_norm(u1: &SpaceTimeField, u2: &SpaceTimeField, u3: &SpaceTimeField, b: f64) -> f64 {
    let (r1, r2, r3) = (dense_rows(u1), dense_rows(u2), dense_rows(u3));
    if r1.is_empty() || r2.is_empty() || r3.is_empty() {
        return 0.0;
    }
    let (l1, l2, l3) = (u1.l as i64, u2.l as i64, u3.l as i64);
    let row2: HashMap<i64, &Vec<C64>> = r2.iter().map(|(k, v)| (*k, v)).collect();
    let k_lo = r1[0].0 + r2[0].0 - r3.last().unwrap().0;
    let k_hi = r1.last().unwrap().0 + r2.last().unwrap().0 - r3[0].0;
    let kmax = [r1[0].0, r1.last().unwrap().0, r2[0].0, r2.last().unwrap().0, r3[0].0, r3.last().unwrap().0, k_lo, k_hi]
        .iter()
        .map(|k| k.abs())
        .max()
        .unwrap();
    // |k² - k1² - k2² + k3²| ≤ 2 kmax², plus the σ spread of the factors.
    let offset = 2 * kmax * kmax + l1 + l2 + l3;
    let width = (2 * offset + 1) as usize;
    let mut buf = vec![ZERO; width];
    let mut touched: Vec<usize> = Vec::new();
    let mut c12 = vec![ZERO; (l1 + l2 - 1) as usize];
    let mut total = CompensatedSum::new();
    for k in k_lo..=k_hi {
        for (k1, c1s) in &r1 {
            for (k3, c3s) in &r3 {
                let k2 = k + k3 - k1;
                let Some(c2s) = row2.get(&k2) else { continue };
                // σ1 + σ2 = j - (l1 + l2)/2 for c12[j].
                c12.fill(ZERO);
                for (i1, &a) in c1s.iter().enumerate() {
                    if a == ZERO {
                        continue;
                    }
                    for (i2, &b2) in c2s.iter().enumerate() {
                        c12[i1 + i2] += a * b2;
                    }
                }
                let shift = k * k - k1 * k1 - k2 * k2 + k3 * k3;
                for (i3, c3) in c3s.iter().enumerate() {
                    if *c3 == ZERO {
                        continue;
                    }
                    let c3 = c3.conj();
                    let s3 = i3 as i64 - l3 / 2;
                    for (j, &v) in c12.iter().enumerate() {
                        let sigma = j as i64 - (l1 + l2) / 2 - s3 + shift;
                        let idx = (sigma + offset) as usize;
                        if buf[idx] == ZERO {
                            touched.push(idx);
                        }
                        buf[idx] += v * c3;
                    }
                }
            }
        }
        for &idx in &touched {
            let sigma = idx as i64 - offset;
            total.add(bracket(sigma as f64).powf(2.0 * b) * buf[idx].norm_sqr());
            buf[idx] = ZERO;
        }
        touched.clear();
    }
    2.0 * PI * total.value().sqrt()
}

/// Random field supported on the wavenumbers selected by `keep` and `σ ∈ [-L/2, L/2)`,
/// with complex Gaussian coefficients weighted by `⟨σ⟩^{-1/2}` and normalized to
/// `‖·‖_{X^{1/2,0}} = 1`.
pub fn unit_trial_field(m: usize, l: usize, keep: impl Fn(i64) -> bool, rng: &mut ChaCha8Rng) -> Result<SpaceTimeField> {
    let mut f = SpaceTimeField::zeros(m, l)?;
    let half_m = (m / 2) as i64;
    let half_l = (l / 2) as i64;
    for k in (-half_m + 1)..half_m {
        if !keep(k) {
            continue;
        }
        for sigma in -half_l..half_l {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            f.set(sigma, k, C64::new(re, im) / bracket(sigma as f64).sqrt());
        }
    }
    let norm = xbs_norm(&f, 0.5, 0.0);
    if norm == 0.0 {
        return Err(Error::InvalidParameter("trial support is empty".into()));
    }
    Ok(f.scale(C64::from(1.0 / norm)))
}

/// `‖P_{N/2}u1 · P_{N/2}u2 · conj(Q_N u3)‖_{X^{-1/2+ε,0}} / ∏‖ui‖_{X^{1/2,0}}`.
pub fn damping_ratio(u1: &SpaceTimeField, u2: &SpaceTimeField, u3: &SpaceTimeField, n: usize, eps: f64) -> Result<f64> {
    let denom = xbs_norm(u1, 0.5, 0.0) * xbs_norm(u2, 0.5, 0.0) * xbs_norm(u3, 0.5, 0.0);
    if denom == 0.0 {
        return Err(Error::InvalidParameter("damping ratio of a zero field".into()));
    }
    let low = |k: i64| k.unsigned_abs() as usize <= n / 2;
    let p1 = u1.restrict(low);
    let p2 = u2.restrict(low);
    let q3 = u3.restrict(|k| k.unsigned_abs() as usize > n);
    Ok(trilinear_xb_norm(&p1, &p2, &q3, -0.5 + eps) / denom)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DampingSettings {
    pub m: usize,
    /// Width of the `σ` band of every trial field.
    pub sigma_width: usize,
    pub n_list: Vec<usize>,
    pub trials: usize,
    pub eps: f64,
    pub seed: u64,
}

impl Default for DampingSettings {
    fn default() -> Self {
        Self {
            m: 256,
            sigma_width: 4,
            n_list: vec![8, 16, 32, 64],
            trials: 100,
            eps: 1.0 / 16.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DampingRecord {
    #[serde(rename = "N")]
    pub n: usize,
    pub median_ratio: f64,
    pub max_ratio: f64,
    pub slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DampingReport {
    pub settings: DampingSettings,
    pub records: Vec<DampingRecord>,
    /// Least-squares slope of `log median_ratio` against `log N`.
    pub slope: f64,
    /// Whether the median decreases weakly along `n_list`.
    pub median_non_increasing: bool,
}

fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64 + 1);
    rng
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Monte-Carlo scaling of the damping ratio in `N`.
///
/// Trial fields are matched to the supports the estimate sees: `u1, u2` live on
/// `|k| ≤ N/2` and `u3` on `|k| > N`, each on the unit sphere of `X^{1/2,0}`.
pub fn damping_scaling(settings: &DampingSettings) -> Result<DampingReport> {
    if settings.n_list.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "need at least 3 cutoffs to fit a slope, got {}",
            settings.n_list.len()
        )));
    }
    let half = settings.m / 2;
    if let Some(&n) = settings.n_list.iter().find(|&&n| n + 1 >= half || n < 2) {
        return Err(Error::CutoffTooLarge { cutoff: n, half });
    }
    if settings.trials == 0 {
        return Err(Error::InvalidParameter("trials must be positive".into()));
    }
    let (m, l) = (settings.m, settings.sigma_width);
    let mut stats = Vec::with_capacity(settings.n_list.len());
    for &n in &settings.n_list {
        let ratios: Vec<f64> = (0..settings.trials)
            .into_par_iter()
            .map(|trial| {
                let mut rng = trial_rng(settings.seed, trial);
                let low = |k: i64| k.unsigned_abs() as usize <= n / 2;
                let u1 = unit_trial_field(m, l, low, &mut rng)?;
                let u2 = unit_trial_field(m, l, low, &mut rng)?;
                let u3 = unit_trial_field(m, l, |k| k.unsigned_abs() as usize > n, &mut rng)?;
                damping_ratio(&u1, &u2, &u3, n, settings.eps)
            })
            .collect::<Result<_>>()?;
        let max = ratios.iter().copied().fold(0.0, f64::max);
        stats.push((n, median(ratios), max));
    }
    let pts: Vec<(f64, f64)> = stats.iter().map(|&(n, med, _)| ((n as f64).ln(), med.ln())).collect();
    let (slope, _) = linear_fit(&pts)?;
    Ok(DampingReport {
        settings: settings.clone(),
        records: stats
            .iter()
            .map(|&(n, median_ratio, max_ratio)| DampingRecord { n, median_ratio, max_ratio, slope })
            .collect(),
        slope,
        median_non_increasing: stats.windows(2).all(|w| w[1].1 <= w[0].1),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct L4Summary {
    pub m: usize,
    pub l: usize,
    pub samples: usize,
    pub max_ratio: f64,
    pub median_ratio: f64,
}

/// L⁴/X^{3/8,0} ratios over random fields with Gaussian coefficients of envelope
/// `⟨σ⟩^{-1}⟨k⟩^{-1}`.
pub fn l4_ensemble(m: usize, l: usize, samples: usize, seed: u64) -> Result<L4Summary> {
    if samples == 0 {
        return Err(Error::InvalidParameter("ensemble must be nonempty".into()));
    }
    let ratios: Vec<f64> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = trial_rng(seed, i);
            let mut f = SpaceTimeField::zeros(m, l)?;
            let (hm, hl) = ((m / 2) as i64, (l / 2) as i64);
            for k in (-hm + 1)..hm {
                for sigma in -hl..hl {
                    let re: f64 = StandardNormal.sample(&mut rng);
                    let im: f64 = StandardNormal.sample(&mut rng);
                    let w = 1.0 / (bracket(sigma as f64) * bracket(k as f64));
                    f.set(sigma, k, C64::new(re, im) * w);
                }
            }
            l4_ratio(&f)
        })
        .collect::<Result<_>>()?;
    Ok(L4Summary {
        m,
        l,
        samples,
        max_ratio: ratios.iter().copied().fold(0.0, f64::max),
        median_ratio: median(ratios),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn random_st(m: usize, l: usize, band: i64, rng: &mut ChaCha8Rng) -> SpaceTimeField {
        let mut f = SpaceTimeField::zeros(m, l).unwrap();
        for k in -band..=band {
            for sigma in -(l as i64 / 2)..(l as i64 / 2) {
                f.set(sigma, k, c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
            }
        }
        f
    }

    #[test]
    fn resonance_examples() {
        assert_eq!(modulus_bound(1, 2, 3), 40);
        let r = resonance_factor(1, 2, 3, [0.25, -1.5, 3.0]).unwrap();
        assert!(r.holds());
        assert_eq!(r.rhs, 40);
        assert_eq!(modulus_bound(5, 9, -5), 0);
        assert!(resonance_factor(5, 9, -5, [0.1, 0.2, 0.3]).unwrap().holds());
    }

    #[test]
    fn resonance_random_triples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let k: [i64; 3] = std::array::from_fn(|_| rng.random_range(-10_000..10_000));
            let taus: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1e6..1e6));
            assert!(resonance_factor(k[0], k[1], k[2], taus).unwrap().holds());
        }
        assert!(resonance_factor(1, 1, 1, [f64::NAN, 0.0, 0.0]).is_err());
    }

    #[test]
    fn resonance_sweep_is_clean_and_seeded() {
        let a = resonance_sweep(500, 50, 3).unwrap();
        assert_eq!(a.failures, 0);
        assert_eq!(a, resonance_sweep(500, 50, 3).unwrap());
        assert!(resonance_sweep(0, 50, 3).is_err());
    }

    #[test]
    fn xbs_zero_and_parseval() {
        let z = SpaceTimeField::zeros(16, 8).unwrap();
        assert_eq!(xbs_norm(&z, 0.5, 1.0), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = random_st(16, 8, 5, &mut rng);
        let direct = f.l2_space_time().unwrap();
        let x = xbs_norm(&f, 0.0, 0.0);
        assert!((direct - x).abs() < 1e-12 * x, "{direct} vs {x}");
    }

    #[test]
    fn xbs_is_monotone_and_a_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let f = random_st(16, 8, 7, &mut rng);
            let g = random_st(16, 8, 3, &mut rng);
            let (b, s) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            assert!(xbs_norm(&f, b + 0.1, s) >= xbs_norm(&f, b, s));
            assert!(xbs_norm(&f, b, s + 0.1) >= xbs_norm(&f, b, s));
            let sum = xbs_norm(&f.add(&g).unwrap(), b, s);
            assert!(sum <= xbs_norm(&f, b, s) + xbs_norm(&g, b, s) + 1e-12);
            let a = c(-2.5, 1.0);
            let scaled = xbs_norm(&f.scale(a), b, s);
            assert!((scaled - a.norm() * xbs_norm(&f, b, s)).abs() < 1e-12 * scaled);
        }
    }

    #[test]
    fn time_samples_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = random_st(16, 8, 7, &mut rng);
        let back = SpaceTimeField::from_time_samples(&f.time_samples(8).unwrap()).unwrap();
        let err = back.add(&f.scale(c(-1.0, 0.0))).unwrap();
        assert!(xbs_norm(&err, 0.0, 0.0) < 1e-12 * xbs_norm(&f, 0.0, 0.0));
    }

    #[test]
    fn free_evolution_sits_on_the_dispersion_relation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut phi = SpectralField::zeros(32);
        for k in -15..16 {
            phi.set(k, c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        }
        let f = SpaceTimeField::free_evolution(&phi, 8, Window::Periodic).unwrap();
        for (sigma, k, v) in f.entries() {
            if sigma != 0 {
                assert!(v.norm() < 1e-13, "σ = {sigma}, k = {k}");
            }
        }
        let ratio = xbs_norm(&f, 0.5, 0.0) / xbs_norm(&f, 0.0, 0.0);
        assert!((ratio - 1.0).abs() < 1e-12);
        // Only the time sampling of e^{-ik²t} is involved, so large k is exact too.
        assert!((xbs_norm(&f, 0.0, 0.0) - 2.0 * PI * phi.l2_norm() / (2.0 * PI).sqrt()).abs() < 1e-12 * phi.l2_norm());
    }

    #[test]
    fn tapered_free_evolution_leakage_is_a_window_property() {
        // c(σ, k) = ψ̂(σ) φ̂_k, so the X^{b,0}/L² ratio is the window's own factor.
        let window = Window::CosineTaper { rise: 0.25 };
        let l = 32;
        let leakage = {
            let one = SpectralField::from_modes(2, &[(0, c(1.0, 0.0))]).unwrap();
            let f = SpaceTimeField::free_evolution(&one, l, window).unwrap();
            xbs_norm(&f, 0.5, 0.0) / xbs_norm(&f, 0.0, 0.0)
        };
        assert!(leakage > 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut phi = SpectralField::zeros(32);
        for k in -15..16 {
            phi.set(k, c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        }
        let f = SpaceTimeField::free_evolution(&phi, l, window).unwrap();
        let ratio = xbs_norm(&f, 0.5, 0.0) / xbs_norm(&f, 0.0, 0.0);
        assert!((ratio - leakage).abs() < 1e-12 * leakage);
    }

    #[test]
    fn l4_ratio_of_the_constant() {
        let one = SpectralField::from_modes(8, &[(0, c(1.0, 0.0))]).unwrap();
        let f = SpaceTimeField::free_evolution(&one, 4, Window::Periodic).unwrap();
        let expected = (4.0 * PI * PI).powf(-0.25);
        assert!((l4_ratio(&f).unwrap() - expected).abs() < 1e-13);
        assert!(l4_ratio(&SpaceTimeField::zeros(8, 4).unwrap()).is_err());
    }

    #[test]
    fn l4_matches_brute_force_quadrature() {
        // Oracle: evaluate u(t, x) mode by mode on a fine grid.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let f = random_st(8, 4, 2, &mut rng);
        let (nt, nx) = (96, 48);
        let mut acc = 0.0;
        for i in 0..nt {
            let t = 2.0 * PI * i as f64 / nt as f64;
            for j in 0..nx {
                let x = 2.0 * PI * j as f64 / nx as f64;
                let u: C64 = f
                    .entries()
                    .map(|(s, k, v)| v * C64::from_polar(1.0, (s - k * k) as f64 * t + k as f64 * x))
                    .sum();
                acc += u.norm_sqr().powi(2);
            }
        }
        let brute = (acc * 4.0 * PI * PI / (nt * nx) as f64).powf(0.25);
        assert!((f.l4_norm().unwrap() - brute).abs() < 1e-12 * brute);
    }

    #[test]
    fn l4_ratio_homogeneous_and_translation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let f = random_st(16, 8, 7, &mut rng);
        let r = l4_ratio(&f).unwrap();
        assert!((l4_ratio(&f.scale(c(0.0, 3.7))).unwrap() - r).abs() < 1e-12 * r);
        let mut shifted = f.clone();
        for (sigma, k, v) in f.entries() {
            shifted.set(sigma, k, v * C64::from_polar(1.0, 0.9 * k as f64));
        }
        assert!((l4_ratio(&shifted).unwrap() - r).abs() < 1e-12 * r);
    }

    #[test]
    fn trilinear_norm_matches_sampled_product() {
        // Oracle: multiply on a space-time grid and take the lattice transform.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (m, l) = (16, 4);
        let u1 = random_st(m, l, 2, &mut rng);
        let u2 = random_st(m, l, 2, &mut rng);
        let u3 = random_st(m, l, 3, &mut rng);
        let b = -0.3;
        let fast = trilinear_xb_norm(&u1, &u2, &u3, b);
        // Direct accumulation over all entry triples.
        let mut map: HashMap<(i64, i64), C64> = HashMap::new();
        for (s1, k1, c1) in u1.entries() {
            for (s2, k2, c2) in u2.entries() {
                for (s3, k3, c3) in u3.entries() {
                    let tau = (s1 - k1 * k1) + (s2 - k2 * k2) - (s3 - k3 * k3);
                    let k = k1 + k2 - k3;
                    *map.entry((tau + k * k, k)).or_insert(ZERO) += c1 * c2 * c3.conj();
                }
            }
        }
        let slow: f64 = map.iter().map(|((s, _), v)| bracket(*s as f64).powf(2.0 * b) * v.norm_sqr()).sum();
        let slow = 2.0 * PI * slow.sqrt();
        assert!((fast - slow).abs() < 1e-12 * slow, "{fast} vs {slow}");
    }

    #[test]
    fn damping_ratio_vanishes_without_high_part() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let u1 = unit_trial_field(64, 4, |k| k.abs() <= 4, &mut rng).unwrap();
        let u2 = unit_trial_field(64, 4, |k| k.abs() <= 4, &mut rng).unwrap();
        let u3 = unit_trial_field(64, 4, |k| k.abs() <= 8, &mut rng).unwrap();
        assert!((xbs_norm(&u1, 0.5, 0.0) - 1.0).abs() < 1e-12);
        assert_eq!(damping_ratio(&u1, &u2, &u3, 8, 1.0 / 16.0).unwrap(), 0.0);
    }

    #[test]
    fn damping_needs_three_cutoffs() {
        let s = DampingSettings {
            n_list: vec![8, 16],
            ..DampingSettings::default()
        };
        assert!(matches!(damping_scaling(&s), Err(Error::InsufficientData(_))));
        let s = DampingSettings {
            m: 32,
            n_list: vec![4, 8, 16],
            ..DampingSettings::default()
        };
        assert!(matches!(damping_scaling(&s), Err(Error::CutoffTooLarge { .. })));
    }

    #[test]
    fn small_damping_scan_decreases() {
        let s = DampingSettings {
            m: 64,
            n_list: vec![4, 8, 16],
            trials: 10,
            ..DampingSettings::default()
        };
        let rep = damping_scaling(&s).unwrap();
        assert!(rep.slope < 0.0, "{}", rep.slope);
        let again = damping_scaling(&s).unwrap();
        assert_eq!(rep, again);
        let json = serde_json::to_value(&rep.records[0]).unwrap();
        for key in ["N", "median_ratio", "max_ratio", "slope"] {
            assert!(json.get(key).is_some(), "{key}");
        }
    }
}
