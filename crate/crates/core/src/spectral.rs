//! Fourier-collocation representation of 2π-periodic complex fields.
//!
//! Coefficients follow the convention `û_k = (1/M) Σ_j u(x_j) e^{-i k x_j}` with
//! `x_j = 2πj/M`, so a pure exponential `e^{ikx}` has unit coefficient. They are
//! stored in FFT order (`k = 0, 1, …, M/2-1, -M/2, …, -1`); the logical layout is
//! the centered band `[-M/2, M/2)` and the Nyquist mode `-M/2` is always zero.
//!
//! Every norm in this crate is the true integral norm on the circle, i.e.
//! `‖u‖²_{H^s} = 2π Σ_k ⟨k⟩^{2s} |û_k|²`. This differs by a factor `√(2π)` from
//! the plain ℓ² norm of the coefficients, and it is the convention under which
//! the energy identities and the `1/π` of the Wick-ordered nonlinearity hold.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Neumaier compensated summation.
#[derive(Debug, Default, Clone, Copy)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut acc = CompensatedSum::new();
    for v in values {
        acc.add(v);
    }
    acc.value()
}

/// Japanese bracket `⟨k⟩ = (1 + k²)^{1/2}`.
#[inline]
pub fn bracket(x: f64) -> f64 {
    (1.0 + x * x).sqrt()
}

/// Wavenumber of FFT-order slot `index` on an `m`-point grid.
#[inline]
pub fn wavenumber(index: usize, m: usize) -> i64 {
    if index < m / 2 {
        index as i64
    } else {
        index as i64 - m as i64
    }
}

/// FFT-order slot of wavenumber `k`, if it is resolved on an `m`-point grid.
#[inline]
pub fn slot(k: i64, m: usize) -> Option<usize> {
    let half = (m / 2) as i64;
    if k >= -half && k < half {
        Some(if k >= 0 { k as usize } else { (k + m as i64) as usize })
    } else {
        None
    }
}

fn check_grid_size(m: usize) -> Result<()> {
    if m == 0 || m % 2 != 0 {
        return Err(Error::InvalidGridSize(m));
    }
    Ok(())
}

/// Discretization parameters: grid size, projection cutoff and dealiasing pad.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub m: usize,
    pub cutoff: usize,
    pub pad: usize,
}

impl GridSpec {
    pub fn new(m: usize, cutoff: usize, pad: usize) -> Result<Self> {
        check_grid_size(m)?;
        if pad < 2 {
            return Err(Error::InvalidPad(pad));
        }
        if cutoff >= m / 2 {
            return Err(Error::CutoffTooLarge {
                cutoff,
                half: m / 2,
            });
        }
        Ok(Self { m, cutoff, pad })
    }

    pub fn padded_len(&self) -> usize {
        self.m * self.pad
    }
}

/// Complex Fourier coefficients of a 2π-periodic function.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralField {
    coeffs: Vec<C64>,
}

impl fmt::Debug for SpectralField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let nonzero: Vec<_> = self
            .modes()
            .filter(|(_, c)| c.norm_sqr() > 0.0)
            .take(8)
            .collect();
        f.debug_struct("SpectralField")
            .field("m", &self.m())
            .field("leading_modes", &nonzero)
            .finish()
    }
}

impl SpectralField {
    pub fn zeros(m: usize) -> Self {
        assert!(m > 0 && m % 2 == 0, "grid size must be even and positive");
        Self {
            coeffs: vec![C64::new(0.0, 0.0); m],
        }
    }

    /// Builds a field from FFT-ordered coefficients. The Nyquist slot is cleared.
    pub fn from_coeffs(mut coeffs: Vec<C64>) -> Result<Self> {
        check_grid_size(coeffs.len())?;
        if let Some(index) = coeffs.iter().position(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        let m = coeffs.len();
        coeffs[m / 2] = C64::new(0.0, 0.0);
        Ok(Self { coeffs })
    }

    /// Field with the given `(k, amplitude)` pairs. Unresolved wavenumbers are rejected.
    pub fn from_modes(m: usize, modes: &[(i64, C64)]) -> Result<Self> {
        check_grid_size(m)?;
        let mut field = Self::zeros(m);
        for &(k, c) in modes {
            if k == -((m / 2) as i64) || slot(k, m).is_none() {
                return Err(Error::InvalidParameter(format!(
                    "wavenumber {k} is not resolved on a {m}-point grid"
                )));
            }
            field.set(k, field.get(k) + c);
        }
        if !field.is_finite() {
            return Err(Error::NonFinite { index: 0 });
        }
        Ok(field)
    }

    pub fn m(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coeffs(&self) -> &[C64] {
        &self.coeffs
    }

    /// Mutable access to the FFT-ordered coefficients. Callers must keep the
    /// Nyquist slot at zero.
    pub fn coeffs_mut(&mut self) -> &mut [C64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<C64> {
        self.coeffs
    }

    /// Coefficient of wavenumber `k`; zero outside the resolved band.
    pub fn get(&self, k: i64) -> C64 {
        slot(k, self.m())
            .map(|i| self.coeffs[i])
            .unwrap_or_default()
    }

    /// Sets the coefficient of wavenumber `k`. Panics if `k` is unresolved or the Nyquist mode.
    pub fn set(&mut self, k: i64, value: C64) {
        let m = self.m();
        assert!(k != -((m / 2) as i64), "the Nyquist mode is held at zero");
        let i = slot(k, m).expect("wavenumber outside the resolved band");
        self.coeffs[i] = value;
    }

    /// `(k, û_k)` pairs in FFT order.
    pub fn modes(&self) -> impl Iterator<Item = (i64, C64)> + '_ {
        let m = self.m();
        self.coeffs
            .iter()
            .enumerate()
            .map(move |(i, &c)| (wavenumber(i, m), c))
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    pub fn scale(&self, factor: C64) -> Self {
        Self {
            coeffs: self.coeffs.iter().map(|&c| c * factor).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        same_grid(self, other)?;
        Ok(Self {
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        same_grid(self, other)?;
        Ok(Self {
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: C64, other: &Self) -> Result<()> {
        same_grid(self, other)?;
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += alpha * b;
        }
        Ok(())
    }

    /// True L² norm on the circle.
    pub fn l2_norm(&self) -> f64 {
        sobolev_norm(self, 0.0)
    }

    pub fn l2_norm_sq(&self) -> f64 {
        2.0 * PI * compensated_sum(self.coeffs.iter().map(|c| c.norm_sqr()))
    }
}

pub fn same_grid(a: &SpectralField, b: &SpectralField) -> Result<()> {
    if a.m() != b.m() {
        return Err(Error::GridMismatch {
            left: a.m(),
            right: b.m(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Part {
    /// `P_N`: keep `|k| <= N`.
    Low,
    /// `Q_N`: keep `|k| > N`.
    High,
}

/// Frequency projection `P_N` (low) or `Q_N` (high).
pub fn project(field: &SpectralField, cutoff: usize, part: Part) -> Result<SpectralField> {
    let m = field.m();
    if cutoff >= m / 2 {
        return Err(Error::CutoffTooLarge {
            cutoff,
            half: m / 2,
        });
    }
    let n = cutoff as i64;
    let coeffs = field
        .coeffs
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let low = wavenumber(i, m).abs() <= n;
            if low == (part == Part::Low) {
                c
            } else {
                C64::new(0.0, 0.0)
            }
        })
        .collect();
    Ok(SpectralField { coeffs })
}

/// `‖u‖_{H^s} = (2π Σ ⟨k⟩^{2s} |û_k|²)^{1/2}`.
pub fn sobolev_norm(field: &SpectralField, s: f64) -> f64 {
    let m = field.m();
    let sum = compensated_sum(
        field
            .coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| bracket(wavenumber(i, m) as f64).powf(2.0 * s) * c.norm_sqr()),
    );
    (2.0 * PI * sum).sqrt()
}

/// Transform engine for one grid size: plain and zero-padded FFT plans.
#[derive(Clone)]
pub struct Spectral {
    m: usize,
    pad: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    fwd_pad: Arc<dyn Fft<f64>>,
    inv_pad: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Spectral {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Spectral")
            .field("m", &self.m)
            .field("pad", &self.pad)
            .finish()
    }
}

impl Spectral {
    pub fn new(m: usize, pad: usize) -> Result<Self> {
        check_grid_size(m)?;
        if pad < 2 {
            return Err(Error::InvalidPad(pad));
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            m,
            pad,
            fwd: planner.plan_fft_forward(m),
            inv: planner.plan_fft_inverse(m),
            fwd_pad: planner.plan_fft_forward(m * pad),
            inv_pad: planner.plan_fft_inverse(m * pad),
        })
    }

    pub fn for_grid(grid: &GridSpec) -> Result<Self> {
        Self::new(grid.m, grid.pad)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn pad(&self) -> usize {
        self.pad
    }

    pub fn padded_len(&self) -> usize {
        self.m * self.pad
    }

    /// Collocation points `x_j = 2πj/M`.
    pub fn grid_points(&self) -> Vec<f64> {
        (0..self.m)
            .map(|j| 2.0 * PI * j as f64 / self.m as f64)
            .collect()
    }

    fn check(&self, field: &SpectralField) -> Result<()> {
        if field.m() != self.m {
            return Err(Error::GridMismatch {
                left: field.m(),
                right: self.m,
            });
        }
        Ok(())
    }

    /// Samples at `x_j = 2πj/M` to coefficients. The Nyquist coefficient is discarded.
    pub fn forward(&self, samples: &[C64]) -> Result<SpectralField> {
        if samples.len() != self.m {
            return Err(Error::GridMismatch {
                left: samples.len(),
                right: self.m,
            });
        }
        if let Some(index) = samples.iter().position(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        let mut buf = samples.to_vec();
        self.fwd.process(&mut buf);
        let norm = 1.0 / self.m as f64;
        for c in buf.iter_mut() {
            *c *= norm;
        }
        buf[self.m / 2] = C64::new(0.0, 0.0);
        Ok(SpectralField { coeffs: buf })
    }

    /// Coefficients to samples at `x_j = 2πj/M`.
    pub fn inverse(&self, field: &SpectralField) -> Result<Vec<C64>> {
        self.check(field)?;
        let mut buf = field.coeffs.clone();
        self.inv.process(&mut buf);
        Ok(buf)
    }

    /// Samples on the padded grid `x_j = 2πj/(pad·M)`.
    pub fn to_padded(&self, field: &SpectralField) -> Result<Vec<C64>> {
        self.check(field)?;
        let p = self.padded_len();
        let half = self.m / 2;
        let mut buf = vec![C64::new(0.0, 0.0); p];
        buf[..half].copy_from_slice(&field.coeffs[..half]);
        buf[p - half + 1..].copy_from_slice(&field.coeffs[half + 1..]);
        self.inv_pad.process(&mut buf);
        Ok(buf)
    }

    /// Padded-grid samples back to the resolved band `[-M/2, M/2)` (truncation).
    pub fn from_padded(&self, mut samples: Vec<C64>) -> SpectralField {
        let p = self.padded_len();
        debug_assert_eq!(samples.len(), p);
        self.fwd_pad.process(&mut samples);
        let half = self.m / 2;
        let norm = 1.0 / p as f64;
        let mut coeffs = vec![C64::new(0.0, 0.0); self.m];
        for i in 0..half {
            coeffs[i] = samples[i] * norm;
        }
        for i in half + 1..self.m {
            coeffs[i] = samples[p - self.m + i] * norm;
        }
        SpectralField { coeffs }
    }

    /// Dealiased triple product `a·b·c` with the factors flagged in `conjugate`
    /// complex-conjugated. With `pad >= 2` the truncated result is exact for all
    /// resolved inputs.
    pub fn cubic_product(
        &self,
        a: &SpectralField,
        b: &SpectralField,
        c: &SpectralField,
        conjugate: [bool; 3],
    ) -> Result<SpectralField> {
        let pick = |v: C64, conj: bool| if conj { v.conj() } else { v };
        let sa = self.to_padded(a)?;
        let sb = self.to_padded(b)?;
        let sc = self.to_padded(c)?;
        let prod = sa
            .iter()
            .zip(&sb)
            .zip(&sc)
            .map(|((&x, &y), &z)| pick(x, conjugate[0]) * pick(y, conjugate[1]) * pick(z, conjugate[2]))
            .collect();
        Ok(self.from_padded(prod))
    }

    /// Dealiased `|u|²u`.
    pub fn cubic(&self, u: &SpectralField) -> Result<SpectralField> {
        let mut s = self.to_padded(u)?;
        for x in s.iter_mut() {
            *x *= x.norm_sqr();
        }
        Ok(self.from_padded(s))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn random_field(m: usize, band: i64, seed: u64) -> SpectralField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut f = SpectralField::zeros(m);
        for k in -band..=band {
            if slot(k, m).is_some() && k != -((m / 2) as i64) {
                f.set(k, c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
            }
        }
        f
    }

    fn direct_dft(samples: &[C64], k: i64) -> C64 {
        let m = samples.len();
        samples
            .iter()
            .enumerate()
            .map(|(j, &u)| u * C64::from_polar(1.0, -(k as f64) * 2.0 * PI * j as f64 / m as f64))
            .sum::<C64>()
            / m as f64
    }

    #[test]
    fn constant_and_pure_mode() {
        let sp = Spectral::new(16, 2).unwrap();
        let one = vec![c(1.0, 0.0); 16];
        let f = sp.forward(&one).unwrap();
        assert!((f.get(0) - c(1.0, 0.0)).norm() < 1e-15);
        assert!(f.modes().filter(|&(k, _)| k != 0).all(|(_, v)| v.norm() < 1e-15));

        let x = sp.grid_points();
        let mode: Vec<_> = x.iter().map(|&x| C64::from_polar(1.0, x)).collect();
        let f = sp.forward(&mode).unwrap();
        assert!((f.get(1) - c(1.0, 0.0)).norm() < 1e-15);
        assert!(f.modes().filter(|&(k, _)| k != 1).all(|(_, v)| v.norm() < 1e-15));
    }

    #[test]
    fn linear_combination_matches_direct_sum() {
        let sp = Spectral::new(32, 2).unwrap();
        let x = sp.grid_points();
        let samples: Vec<_> = x
            .iter()
            .map(|&x| 2.0 * C64::from_polar(1.0, 3.0 * x) + c(0.0, 1.0) * C64::from_polar(1.0, -x))
            .collect();
        let f = sp.forward(&samples).unwrap();
        for k in -15..16 {
            assert!((f.get(k) - direct_dft(&samples, k)).norm() < 1e-14, "k = {k}");
        }
        assert!((f.get(3) - c(2.0, 0.0)).norm() < 1e-14);
        assert!((f.get(-1) - c(0.0, 1.0)).norm() < 1e-14);
    }

    #[test]
    fn inverse_of_unit_modes() {
        let sp = Spectral::new(8, 2).unwrap();
        let f = SpectralField::from_modes(8, &[(0, c(0.5, -2.0))]).unwrap();
        for s in sp.inverse(&f).unwrap() {
            assert!((s - c(0.5, -2.0)).norm() < 1e-15);
        }
        let f = SpectralField::from_modes(8, &[(1, c(1.0, 0.0))]).unwrap();
        for (s, x) in sp.inverse(&f).unwrap().into_iter().zip(sp.grid_points()) {
            assert!((s - C64::from_polar(1.0, x)).norm() < 1e-15);
        }
    }

    #[test]
    fn non_finite_samples_are_rejected() {
        let sp = Spectral::new(8, 2).unwrap();
        let mut s = vec![c(0.0, 0.0); 8];
        s[5] = c(f64::NAN, 0.0);
        assert_eq!(sp.forward(&s).unwrap_err(), Error::NonFinite { index: 5 });
    }

    #[test]
    fn odd_grid_and_small_pad_rejected() {
        assert!(Spectral::new(15, 2).is_err());
        assert_eq!(Spectral::new(16, 1).unwrap_err(), Error::InvalidPad(1));
        assert!(GridSpec::new(16, 8, 2).is_err());
        assert!(GridSpec::new(16, 7, 2).is_ok());
    }

    #[test]
    fn projection_examples() {
        let f = SpectralField::from_modes(16, &[(1, c(1.0, 0.0)), (5, c(1.0, 0.0))]).unwrap();
        let low = project(&f, 2, Part::Low).unwrap();
        let high = project(&f, 2, Part::High).unwrap();
        assert_eq!(low, SpectralField::from_modes(16, &[(1, c(1.0, 0.0))]).unwrap());
        assert_eq!(high, SpectralField::from_modes(16, &[(5, c(1.0, 0.0))]).unwrap());
        assert!(matches!(
            project(&f, 8, Part::Low),
            Err(Error::CutoffTooLarge { cutoff: 8, half: 8 })
        ));
    }

    #[test]
    fn projection_partition_is_exact() {
        let f = random_field(64, 31, 7);
        for n in [0, 3, 17, 31] {
            let sum = project(&f, n, Part::Low)
                .unwrap()
                .add(&project(&f, n, Part::High).unwrap())
                .unwrap();
            assert_eq!(sum, f);
        }
    }

    #[test]
    fn sobolev_examples() {
        let one = SpectralField::from_modes(8, &[(0, c(1.0, 0.0))]).unwrap();
        assert!((sobolev_norm(&one, 0.0) - (2.0 * PI).sqrt()).abs() < 1e-15);
        let e1 = SpectralField::from_modes(8, &[(1, c(1.0, 0.0))]).unwrap();
        assert!((sobolev_norm(&e1, 1.0) - (4.0 * PI).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn l2_norm_matches_trapezoid_quadrature() {
        let sp = Spectral::new(64, 2).unwrap();
        let f = random_field(64, 31, 11);
        let samples = sp.inverse(&f).unwrap();
        let quad = 2.0 * PI / 64.0 * samples.iter().map(|s| s.norm_sqr()).sum::<f64>();
        assert!((f.l2_norm_sq() - quad).abs() <= 1e-10 * quad);
        assert!((sobolev_norm(&f, 0.0).powi(2) - quad).abs() <= 1e-10 * quad);
    }

    #[test]
    fn sobolev_monotone_in_s() {
        let f = random_field(32, 15, 3);
        let mut prev = 0.0;
        for s in [-1.0, -0.5, 0.0, 0.5, 1.0, 2.0, 3.0] {
            let v = sobolev_norm(&f, s);
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn cubic_of_unimodular_mode() {
        let sp = Spectral::new(16, 2).unwrap();
        let e = SpectralField::from_modes(16, &[(1, c(1.0, 0.0))]).unwrap();
        let p = sp.cubic_product(&e, &e, &e, [false, false, true]).unwrap();
        assert!((p.get(1) - c(1.0, 0.0)).norm() < 1e-15);
        assert!(p.sub(&e).unwrap().l2_norm() < 1e-14);

        let c0 = c(0.3, -1.2);
        let f = SpectralField::from_modes(16, &[(-4, c0)]).unwrap();
        let p = sp.cubic(&f).unwrap();
        let expected = c0 * c0.norm_sqr();
        assert!((p.get(-4) - expected).norm() < 1e-14);
        assert!(p.sub(&f.scale(C64::from(c0.norm_sqr()))).unwrap().l2_norm() < 1e-13);
    }

    #[test]
    fn grid_mismatch_rejected() {
        let sp = Spectral::new(16, 2).unwrap();
        let a = SpectralField::zeros(16);
        let b = SpectralField::zeros(32);
        assert!(matches!(
            sp.cubic_product(&a, &a, &b, [false; 3]),
            Err(Error::GridMismatch { .. })
        ));
        assert!(a.add(&b).is_err());
    }

    #[test]
    fn compensated_sum_recovers_cancellation() {
        let v = [1.0, 1e100, 1.0, -1e100];
        assert_eq!(compensated_sum(v), 2.0);
    }
}
