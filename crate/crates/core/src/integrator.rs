//! Time stepping.
//!
//! The linear part `û_t = (ik² - γ)û + f̂` is solved exactly per mode, forcing
//! included through the Duhamel factor `(e^{Lh} - 1)/L`. The default scheme is
//! Strang splitting (half linear, full nonlinear, half linear), where the
//! nonlinear sub-flow `u_t = -iσ|u|²u` is the exact pointwise phase rotation
//! evaluated on the padded grid. Two exponential schemes, ETD-RK2 and the
//! integrating-factor RK4 reference, act on a packed coefficient vector and are
//! meant for cross-validation.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::diagnostics::{self, DiagnosticRecord, DiagnosticsSpec};
use crate::equations::{pairing, rhs_z, DecompState, ModifiedState, PhysParams};
use crate::error::{Error, Result};
use crate::spectral::{project, wavenumber, Part, Spectral, SpectralField, C64};

const I: C64 = C64::new(0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    StrangSplit,
    EtdRk2,
    Rk4Reference,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strang_split" | "strang" => Ok(Self::StrangSplit),
            "etd_rk2" => Ok(Self::EtdRk2),
            "rk4_reference" | "rk4" => Ok(Self::Rk4Reference),
            other => Err(Error::InvalidParameter(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeSpec {
    pub method: Method,
    pub dt: f64,
    pub horizon: f64,
    /// Diagnostics are recorded at the start, at every step index divisible by
    /// `store_every` (counted from 0, so resumed runs sample the same times) and at the end.
    pub store_every: u64,
    /// Keep the states at record times, not only their diagnostics.
    pub keep_states: bool,
}

impl SchemeSpec {
    pub fn new(method: Method, dt: f64, horizon: f64, store_every: u64) -> Result<Self> {
        let spec = Self {
            method,
            dt,
            horizon,
            store_every,
            keep_states: false,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn strang(dt: f64, horizon: f64, store_every: u64) -> Result<Self> {
        Self::new(Method::StrangSplit, dt, horizon, store_every)
    }

    pub fn keep_states(mut self) -> Self {
        self.keep_states = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.horizon >= self.dt) || !self.horizon.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "horizon {} must be at least dt = {}",
                self.horizon, self.dt
            )));
        }
        if self.store_every == 0 {
            return Err(Error::InvalidParameter("store_every must be at least 1".into()));
        }
        Ok(())
    }

    /// `min(1e-3, 0.2π/M²)`.
    pub fn default_dt(m: usize) -> f64 {
        (0.1 * 2.0 * PI / (m * m) as f64).min(1e-3)
    }

    /// Number of steps to reach the horizon; the last time is `steps·dt`.
    pub fn total_steps(&self) -> u64 {
        (self.horizon / self.dt).round() as u64
    }
}

/// `(e^z - 1)/z` without cancellation.
pub fn phi1(z: C64) -> C64 {
    if z.norm() < 1e-2 {
        // Σ z^n/(n+1)!
        let mut term = C64::new(1.0, 0.0);
        let mut sum = term;
        for n in 1..12 {
            term *= z / (n as f64 + 1.0);
            sum += term;
        }
        sum
    } else {
        expm1(z) / z
    }
}

/// `(e^z - 1 - z)/z²`.
pub fn phi2(z: C64) -> C64 {
    if z.norm() < 0.5 {
        // Σ z^n/(n+2)!
        let mut term = C64::new(0.5, 0.0);
        let mut sum = term;
        for n in 1..25 {
            term *= z / (n as f64 + 2.0);
            sum += term;
        }
        sum
    } else {
        (expm1(z) - z) / (z * z)
    }
}

/// `e^z - 1` accurate for small `|z|`.
pub fn expm1(z: C64) -> C64 {
    let (s, c) = z.im.sin_cos();
    let half = (0.5 * z.im).sin();
    C64::new(z.re.exp_m1() * c - 2.0 * half * half, z.re.exp() * s)
}

/// Exact propagator of `û_t = (ik² - γ)û + f̂` over one interval.
#[derive(Debug, Clone)]
pub struct LinearPropagator {
    mult: Vec<C64>,
    duhamel: Vec<C64>,
}

impl LinearPropagator {
    pub fn new(p: &PhysParams, h: f64, with_forcing: bool) -> Self {
        let m = p.m();
        let mut mult = Vec::with_capacity(m);
        let mut duhamel = Vec::with_capacity(m);
        for (i, &f) in p.forcing.coeffs().iter().enumerate() {
            let z = p.symbol(wavenumber(i, m)) * h;
            let decay = (-p.gamma * h).exp();
            mult.push(C64::from_polar(decay, z.im));
            duhamel.push(if with_forcing { f * h * phi1(z) } else { C64::new(0.0, 0.0) });
        }
        mult[m / 2] = C64::new(0.0, 0.0);
        duhamel[m / 2] = C64::new(0.0, 0.0);
        Self { mult, duhamel }
    }

    pub fn apply(&self, u: &mut SpectralField) {
        for ((c, m), d) in u.coeffs_mut().iter_mut().zip(&self.mult).zip(&self.duhamel) {
            *c = *c * m + d;
        }
    }

    pub fn apply_homogeneous(&self, u: &mut SpectralField) {
        for (c, m) in u.coeffs_mut().iter_mut().zip(&self.mult) {
            *c *= m;
        }
    }
}

/// One exact linear step of length `dt`.
pub fn linear_step(u: &SpectralField, dt: f64, p: &PhysParams, with_forcing: bool) -> Result<SpectralField> {
    crate::spectral::same_grid(u, &p.forcing)?;
    let mut out = u.clone();
    LinearPropagator::new(p, dt, with_forcing).apply(&mut out);
    Ok(out)
}

/// Pointwise phase rotation `u ← u·exp(-iσ(|u|² + shift)h)` on the padded grid.
fn phase_rotation(sp: &Spectral, u: &SpectralField, h: f64, sigma: f64, shift: f64) -> Result<SpectralField> {
    let mut s = sp.to_padded(u)?;
    for x in s.iter_mut() {
        let theta = -sigma * (x.norm_sqr() + shift) * h;
        *x *= C64::from_polar(1.0, theta);
    }
    Ok(sp.from_padded(s))
}

/// Exact sub-flow of `u_t = -i·sign·|u|²u` over `dt`.
pub fn nonlinear_step(sp: &Spectral, u: &SpectralField, dt: f64, sign: f64) -> Result<SpectralField> {
    if dt == 0.0 {
        return Ok(u.clone());
    }
    phase_rotation(sp, u, dt, sign, 0.0)
}

/// Half-step propagators shared by the splitting steppers.
#[derive(Debug, Clone)]
pub struct SplitCache {
    pub half_forced: LinearPropagator,
    pub half_free: LinearPropagator,
}

impl SplitCache {
    pub fn new(p: &PhysParams, h: f64) -> Self {
        Self {
            half_forced: LinearPropagator::new(p, 0.5 * h, true),
            half_free: LinearPropagator::new(p, 0.5 * h, false),
        }
    }
}

/// A system of evolution equations with a diagonal linear part.
pub trait System: Sync {
    type State: Clone + Send + Sync;

    fn params(&self) -> &PhysParams;

    /// Field used for diagnostics.
    fn primary(&self, s: &Self::State) -> SpectralField;

    /// Norm checked against the blow-up guard.
    fn guard_norm(&self, s: &Self::State) -> f64;

    fn strang_step(&self, s: &mut Self::State, t: f64, h: f64, cache: &SplitCache) -> Result<()>;

    fn pack(&self, s: &Self::State) -> Vec<C64>;

    fn unpack(&self, x: &[C64], template: &Self::State) -> Self::State;

    /// Diagonal linear rates of the packed vector.
    fn linear_rates(&self, template: &Self::State) -> Vec<C64>;

    /// Constant forcing of the packed vector.
    fn constant_forcing(&self, template: &Self::State) -> Vec<C64>;

    /// Remaining (nonlinear) part of the packed right-hand side.
    fn nonlinear(&self, x: &[C64], template: &Self::State) -> Result<Vec<C64>>;

    /// Whether the exponential schemes can integrate this system.
    fn supports_packed(&self) -> bool {
        true
    }
}

fn field_rates(p: &PhysParams) -> impl Iterator<Item = C64> + '_ {
    let m = p.m();
    (0..m).map(move |i| if i == m / 2 { C64::new(0.0, 0.0) } else { p.symbol(wavenumber(i, m)) })
}

fn split_packed(x: &[C64], m: usize, count: usize) -> Vec<SpectralField> {
    (0..count)
        .map(|j| {
            let mut f = SpectralField::zeros(m);
            f.coeffs_mut().copy_from_slice(&x[j * m..(j + 1) * m]);
            f
        })
        .collect()
}

/// The full equation.
#[derive(Debug, Clone)]
pub struct FullSystem {
    pub sp: Spectral,
    pub p: PhysParams,
}

impl FullSystem {
    pub fn new(sp: Spectral, p: PhysParams) -> Result<Self> {
        if sp.m() != p.m() {
            return Err(Error::GridMismatch { left: sp.m(), right: p.m() });
        }
        Ok(Self { sp, p })
    }
}

impl System for FullSystem {
    type State = SpectralField;

    fn params(&self) -> &PhysParams {
        &self.p
    }

    fn primary(&self, s: &SpectralField) -> SpectralField {
        s.clone()
    }

    fn guard_norm(&self, s: &SpectralField) -> f64 {
        s.l2_norm()
    }

    fn strang_step(&self, u: &mut SpectralField, _t: f64, h: f64, cache: &SplitCache) -> Result<()> {
        cache.half_forced.apply(u);
        let sigma = self.p.cubic_coeff();
        if sigma != 0.0 {
            *u = phase_rotation(&self.sp, u, h, sigma, 0.0)?;
        }
        cache.half_forced.apply(u);
        Ok(())
    }

    fn pack(&self, s: &SpectralField) -> Vec<C64> {
        s.coeffs().to_vec()
    }

    fn unpack(&self, x: &[C64], _template: &SpectralField) -> SpectralField {
        split_packed(x, self.p.m(), 1).pop().unwrap()
    }

    fn linear_rates(&self, _template: &SpectralField) -> Vec<C64> {
        field_rates(&self.p).collect()
    }

    fn constant_forcing(&self, _template: &SpectralField) -> Vec<C64> {
        self.p.forcing.coeffs().to_vec()
    }

    fn nonlinear(&self, x: &[C64], template: &SpectralField) -> Result<Vec<C64>> {
        let u = self.unpack(x, template);
        let sigma = self.p.cubic_coeff();
        if sigma == 0.0 {
            return Ok(vec![C64::new(0.0, 0.0); x.len()]);
        }
        Ok(self.sp.cubic(&u)?.scale(-I * sigma).into_coeffs())
    }
}

/// How `a(t)` is obtained for the modified equation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AMode {
    /// `a' = -2γa + 2 Re⟨f, v⟩`, advanced with an integrating factor.
    Coupled,
    /// Piecewise-linear interpolation of `(t, a)` samples (splitting scheme only).
    Tabulated(Vec<(f64, f64)>),
}

impl AMode {
    fn lookup(table: &[(f64, f64)], t: f64) -> f64 {
        match table.iter().position(|&(ti, _)| ti >= t) {
            Some(0) => table[0].1,
            Some(i) => {
                let (t0, a0) = table[i - 1];
                let (t1, a1) = table[i];
                a0 + (a1 - a0) * (t - t0) / (t1 - t0)
            }
            None => table.last().map(|x| x.1).unwrap_or(0.0),
        }
    }
}

/// The Wick-corrected modified equation with its scalar `a(t)`.
#[derive(Debug, Clone)]
pub struct ModifiedSystem {
    pub sp: Spectral,
    pub p: PhysParams,
    pub a_mode: AMode,
}

impl ModifiedSystem {
    pub fn new(sp: Spectral, p: PhysParams, a_mode: AMode) -> Result<Self> {
        if sp.m() != p.m() {
            return Err(Error::GridMismatch { left: sp.m(), right: p.m() });
        }
        if let AMode::Tabulated(table) = &a_mode {
            if table.is_empty() || table.windows(2).any(|w| w[1].0 <= w[0].0) {
                return Err(Error::InvalidParameter(
                    "a(t) table must be nonempty with increasing times".into(),
                ));
            }
        }
        Ok(Self { sp, p, a_mode })
    }

    fn table(&self) -> &[(f64, f64)] {
        match &self.a_mode {
            AMode::Tabulated(t) => t,
            AMode::Coupled => &[],
        }
    }

    fn forcing_work(&self, v: &SpectralField) -> f64 {
        pairing(&self.p.forcing, v).map(|z| z.re).unwrap_or(0.0)
    }
}

impl System for ModifiedSystem {
    type State = ModifiedState;

    fn params(&self) -> &PhysParams {
        &self.p
    }

    fn primary(&self, s: &ModifiedState) -> SpectralField {
        s.v.clone()
    }

    fn guard_norm(&self, s: &ModifiedState) -> f64 {
        s.v.l2_norm().max(s.a.abs().sqrt())
    }

    fn strang_step(&self, s: &mut ModifiedState, t: f64, h: f64, cache: &SplitCache) -> Result<()> {
        let gamma = self.p.gamma;
        let sigma = self.p.cubic_coeff();
        let (shift, a_next) = match &self.a_mode {
            AMode::Coupled => {
                // The gap d = a - ‖v‖² obeys d' = -2γd whatever v does, so it is carried
                // exactly and a is rebuilt from it afterwards. The rotation sees the
                // mean of d over the step.
                let gap0 = s.gap();
                let mean_gap = -gap0 * (-2.0 * gamma * h).exp_m1() / (2.0 * gamma * h);
                (Some(mean_gap), gap0 * (-2.0 * gamma * h).exp())
            }
            AMode::Tabulated(table) => (None, AMode::lookup(table, t + h)),
        };
        cache.half_forced.apply(&mut s.v);
        if sigma != 0.0 {
            let gap = match shift {
                Some(g) => g,
                None => AMode::lookup(self.table(), t + 0.5 * h) - s.v.l2_norm_sq(),
            };
            s.v = phase_rotation(&self.sp, &s.v, h, sigma, gap / PI)?;
        }
        cache.half_forced.apply(&mut s.v);
        s.a = match self.a_mode {
            AMode::Coupled => s.v.l2_norm_sq() + a_next,
            AMode::Tabulated(_) => a_next,
        }
        .max(0.0);
        Ok(())
    }

    fn pack(&self, s: &ModifiedState) -> Vec<C64> {
        let mut x = s.v.coeffs().to_vec();
        x.push(C64::new(s.a, 0.0));
        x
    }

    fn unpack(&self, x: &[C64], _template: &ModifiedState) -> ModifiedState {
        let m = self.p.m();
        ModifiedState {
            v: split_packed(&x[..m], m, 1).pop().unwrap(),
            a: x[m].re.max(0.0),
        }
    }

    fn linear_rates(&self, _template: &ModifiedState) -> Vec<C64> {
        let mut r: Vec<C64> = field_rates(&self.p).collect();
        r.push(C64::new(-2.0 * self.p.gamma, 0.0));
        r
    }

    fn constant_forcing(&self, _template: &ModifiedState) -> Vec<C64> {
        let mut f = self.p.forcing.coeffs().to_vec();
        f.push(C64::new(0.0, 0.0));
        f
    }

    fn nonlinear(&self, x: &[C64], template: &ModifiedState) -> Result<Vec<C64>> {
        let m = self.p.m();
        let s = self.unpack(x, template);
        let a = x[m].re;
        let sigma = self.p.cubic_coeff();
        let mut out = if sigma != 0.0 {
            let mut n = self.sp.cubic(&s.v)?;
            n.axpy(C64::from((a - s.v.l2_norm_sq()) / PI), &s.v)?;
            n.scale(-I * sigma).into_coeffs()
        } else {
            vec![C64::new(0.0, 0.0); m]
        };
        out.push(C64::new(2.0 * self.forcing_work(&s.v), 0.0));
        Ok(out)
    }

    fn supports_packed(&self) -> bool {
        matches!(self.a_mode, AMode::Coupled)
    }
}

/// The low/high splitting `u = v + w`, optionally with the remainder `z`.
#[derive(Debug, Clone)]
pub struct DecompositionSystem {
    pub sp: Spectral,
    pub p: PhysParams,
    pub cutoff: usize,
}

impl DecompositionSystem {
    pub fn new(sp: Spectral, p: PhysParams, cutoff: usize) -> Result<Self> {
        if sp.m() != p.m() {
            return Err(Error::GridMismatch { left: sp.m(), right: p.m() });
        }
        if cutoff >= p.m() / 2 {
            return Err(Error::CutoffTooLarge { cutoff, half: p.m() / 2 });
        }
        Ok(Self { sp, p, cutoff })
    }

    fn high_cubic(&self, v: &SpectralField) -> Result<SpectralField> {
        project(&self.sp.cubic(v)?, self.cutoff, Part::High)
    }
}

impl System for DecompositionSystem {
    type State = DecompState;

    fn params(&self) -> &PhysParams {
        &self.p
    }

    fn primary(&self, s: &DecompState) -> SpectralField {
        s.reconstruct()
    }

    fn guard_norm(&self, s: &DecompState) -> f64 {
        s.v.l2_norm() + s.w.l2_norm()
    }

    fn strang_step(&self, s: &mut DecompState, _t: f64, h: f64, cache: &SplitCache) -> Result<()> {
        let n = self.cutoff;
        cache.half_forced.apply(&mut s.v);
        cache.half_free.apply(&mut s.w);
        if let Some(z) = s.z.as_mut() {
            cache.half_free.apply(z);
        }
        let sigma = self.p.cubic_coeff();
        if sigma != 0.0 {
            let u = s.reconstruct();
            let u_half = phase_rotation(&self.sp, &u, 0.5 * h, sigma, 0.0)?;
            let u_full = phase_rotation(&self.sp, &u, h, sigma, 0.0)?;
            let low = [
                project(&u, n, Part::Low)?,
                project(&u_half, n, Part::Low)?,
                project(&u_full, n, Part::Low)?,
            ];
            // Q_N v under y' = -iσ Q_N(|P_N u(s) + y|² (P_N u(s) + y)), classical RK4.
            let rhs_y = |stage: usize, y: &SpectralField| -> Result<(SpectralField, SpectralField)> {
                let v = low[stage].add(y)?;
                Ok((self.high_cubic(&v)?.scale(-I * sigma), v))
            };
            let y0 = project(&s.v, n, Part::High)?;
            let (k1, v1) = rhs_y(0, &y0)?;
            let mut y = y0.clone();
            y.axpy(C64::from(0.5 * h), &k1)?;
            let (k2, v2) = rhs_y(1, &y)?;
            let mut y = y0.clone();
            y.axpy(C64::from(0.5 * h), &k2)?;
            let (k3, v3) = rhs_y(1, &y)?;
            let mut y = y0.clone();
            y.axpy(C64::from(h), &k3)?;
            let (k4, v4) = rhs_y(2, &y)?;
            let mut y_new = y0;
            for (kk, wgt) in [(&k1, 1.0), (&k2, 2.0), (&k3, 2.0), (&k4, 1.0)] {
                y_new.axpy(C64::from(h * wgt / 6.0), kk)?;
            }
            if let Some(z) = s.z.as_mut() {
                // z' = -iσ Q_N(|v|²v) evaluated through the z equation at the same stages.
                let zero = SpectralField::zeros(z.m());
                let nz = |v: &SpectralField| -> Result<SpectralField> {
                    let lin = rhs_z(&self.sp, &zero, v, n, &self.p)?;
                    Ok(lin)
                };
                let dz = [nz(&v1)?, nz(&v2)?, nz(&v3)?, nz(&v4)?];
                for (kk, wgt) in dz.iter().zip([1.0, 2.0, 2.0, 1.0]) {
                    z.axpy(C64::from(h * wgt / 6.0), kk)?;
                }
            }
            let q_u = project(&u_full, n, Part::High)?;
            s.w = q_u.sub(&y_new)?;
            s.v = low[2].add(&y_new)?;
        }
        cache.half_forced.apply(&mut s.v);
        cache.half_free.apply(&mut s.w);
        if let Some(z) = s.z.as_mut() {
            cache.half_free.apply(z);
        }
        Ok(())
    }

    fn pack(&self, s: &DecompState) -> Vec<C64> {
        let mut x = s.v.coeffs().to_vec();
        x.extend_from_slice(s.w.coeffs());
        if let Some(z) = &s.z {
            x.extend_from_slice(z.coeffs());
        }
        x
    }

    fn unpack(&self, x: &[C64], template: &DecompState) -> DecompState {
        let m = self.p.m();
        let count = if template.z.is_some() { 3 } else { 2 };
        let mut parts = split_packed(x, m, count).into_iter();
        DecompState {
            v: parts.next().unwrap(),
            w: parts.next().unwrap(),
            cutoff: template.cutoff,
            z: parts.next(),
        }
    }

    fn linear_rates(&self, template: &DecompState) -> Vec<C64> {
        let count = if template.z.is_some() { 3 } else { 2 };
        let one: Vec<C64> = field_rates(&self.p).collect();
        one.iter().cycle().take(count * one.len()).copied().collect()
    }

    fn constant_forcing(&self, template: &DecompState) -> Vec<C64> {
        let m = self.p.m();
        let count = if template.z.is_some() { 3 } else { 2 };
        let mut f = self.p.forcing.coeffs().to_vec();
        f.resize(count * m, C64::new(0.0, 0.0));
        f
    }

    fn nonlinear(&self, x: &[C64], template: &DecompState) -> Result<Vec<C64>> {
        let s = self.unpack(x, template);
        let sigma = self.p.cubic_coeff();
        if sigma == 0.0 {
            return Ok(vec![C64::new(0.0, 0.0); x.len()]);
        }
        let n = self.cutoff;
        let cu = self.sp.cubic(&s.reconstruct())?;
        let cv_high = self.high_cubic(&s.v)?;
        let dv = project(&cu, n, Part::Low)?.add(&cv_high)?.scale(-I * sigma);
        let dw = project(&cu, n, Part::High)?.sub(&cv_high)?.scale(-I * sigma);
        let mut out = dv.into_coeffs();
        out.extend_from_slice(dw.coeffs());
        if s.z.is_some() {
            out.extend_from_slice(cv_high.scale(-I * sigma).coeffs());
        }
        debug_assert_eq!(out.len(), x.len());
        Ok(out)
    }
}

/// Stored output of a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory<S> {
    pub times: Vec<f64>,
    pub steps: Vec<u64>,
    /// States at the record times; empty unless requested.
    pub states: Vec<S>,
    pub records: Vec<DiagnosticRecord>,
    pub final_state: S,
    pub final_step: u64,
}

struct PackedCoefficients {
    e_full: Vec<C64>,
    e_half: Vec<C64>,
    phi1: Vec<C64>,
    phi2: Vec<C64>,
}

impl PackedCoefficients {
    fn new(rates: &[C64], h: f64) -> Self {
        let exp = |z: C64| C64::from_polar(z.re.exp(), z.im);
        Self {
            e_full: rates.iter().map(|&r| exp(r * h)).collect(),
            e_half: rates.iter().map(|&r| exp(r * 0.5 * h)).collect(),
            phi1: rates.iter().map(|&r| phi1(r * h)).collect(),
            phi2: rates.iter().map(|&r| phi2(r * h)).collect(),
        }
    }
}

/// Nonlinear term at `offset + y`, where `offset` is the steady state of the
/// forced linear flow. Stepping `y` instead of `x` makes the affine part exact.
fn shifted_rhs<S: System>(sys: &S, y: &[C64], offset: &[C64], template: &S::State) -> Result<Vec<C64>> {
    let x: Vec<C64> = y.iter().zip(offset).map(|(a, b)| a + b).collect();
    sys.nonlinear(&x, template)
}

fn steady_offset(rates: &[C64], forcing: &[C64]) -> Vec<C64> {
    rates
        .iter()
        .zip(forcing)
        .map(|(&r, &f)| if f == C64::new(0.0, 0.0) { f } else { -f / r })
        .collect()
}

fn etd_rk2_step<S: System>(
    sys: &S,
    y: &[C64],
    h: f64,
    c: &PackedCoefficients,
    offset: &[C64],
    template: &S::State,
) -> Result<Vec<C64>> {
    let n0 = shifted_rhs(sys, y, offset, template)?;
    let a: Vec<C64> = (0..y.len())
        .map(|i| c.e_full[i] * y[i] + h * c.phi1[i] * n0[i])
        .collect();
    let na = shifted_rhs(sys, &a, offset, template)?;
    Ok((0..y.len())
        .map(|i| a[i] + h * c.phi2[i] * (na[i] - n0[i]))
        .collect())
}

fn if_rk4_step<S: System>(
    sys: &S,
    y: &[C64],
    h: f64,
    c: &PackedCoefficients,
    offset: &[C64],
    template: &S::State,
) -> Result<Vec<C64>> {
    let len = y.len();
    let k1 = shifted_rhs(sys, y, offset, template)?;
    let y2: Vec<C64> = (0..len).map(|i| c.e_half[i] * (y[i] + 0.5 * h * k1[i])).collect();
    let k2 = shifted_rhs(sys, &y2, offset, template)?;
    let y3: Vec<C64> = (0..len).map(|i| c.e_half[i] * y[i] + 0.5 * h * k2[i]).collect();
    let k3 = shifted_rhs(sys, &y3, offset, template)?;
    let y4: Vec<C64> = (0..len).map(|i| c.e_full[i] * y[i] + h * c.e_half[i] * k3[i]).collect();
    let k4 = shifted_rhs(sys, &y4, offset, template)?;
    Ok((0..len)
        .map(|i| {
            c.e_full[i] * y[i]
                + h / 6.0 * (c.e_full[i] * k1[i] + 2.0 * c.e_half[i] * (k2[i] + k3[i]) + k4[i])
        })
        .collect())
}

fn packed_step<S: System>(
    sys: &S,
    state: &S::State,
    method: Method,
    h: f64,
    c: &PackedCoefficients,
    offset: &[C64],
    template: &S::State,
) -> Result<S::State> {
    let y: Vec<C64> = sys.pack(state).iter().zip(offset).map(|(a, b)| a - b).collect();
    let y = match method {
        Method::EtdRk2 => etd_rk2_step(sys, &y, h, c, offset, template)?,
        _ => if_rk4_step(sys, &y, h, c, offset, template)?,
    };
    let x: Vec<C64> = y.iter().zip(offset).map(|(a, b)| a + b).collect();
    Ok(sys.unpack(&x, template))
}

/// Integrates from step 0 to the horizon.
pub fn integrate<S: System>(
    sys: &S,
    initial: S::State,
    scheme: &SchemeSpec,
    diag: &DiagnosticsSpec,
) -> Result<Trajectory<S::State>> {
    integrate_from(sys, initial, 0, scheme, diag)
}

/// Integrates from `start_step` (time `start_step·dt`) to the horizon.
pub fn integrate_from<S: System>(
    sys: &S,
    initial: S::State,
    start_step: u64,
    scheme: &SchemeSpec,
    diag: &DiagnosticsSpec,
) -> Result<Trajectory<S::State>> {
    scheme.validate()?;
    let p = sys.params();
    let h = scheme.dt;
    let total = scheme.total_steps();
    if start_step > total {
        return Err(Error::InvalidParameter(format!(
            "start step {start_step} lies beyond the horizon ({total} steps)"
        )));
    }
    if scheme.method != Method::StrangSplit && !sys.supports_packed() {
        return Err(Error::InvalidParameter(
            "this system is only supported by the splitting scheme".into(),
        ));
    }
    let guard_ref = sys.guard_norm(&initial).max(p.absorbing_radius());
    let limit = 1e6 * if guard_ref > 0.0 { guard_ref } else { 1.0 };

    let cache = SplitCache::new(p, h);
    let template = initial.clone();
    let packed = match scheme.method {
        Method::StrangSplit => None,
        _ => {
            let rates = sys.linear_rates(&template);
            let offset = steady_offset(&rates, &sys.constant_forcing(&template));
            Some((PackedCoefficients::new(&rates, h), offset))
        }
    };

    let mut traj = Trajectory {
        times: Vec::new(),
        steps: Vec::new(),
        states: Vec::new(),
        records: Vec::new(),
        final_state: initial.clone(),
        final_step: start_step,
    };
    let mut state = initial;
    let store = |traj: &mut Trajectory<S::State>, step: u64, state: &S::State| -> Result<()> {
        let t = step as f64 * h;
        let rec = diagnostics::record(t, &sys.primary(state), p, diag, traj.records.last())?;
        traj.times.push(t);
        traj.steps.push(step);
        traj.records.push(rec);
        if scheme.keep_states {
            traj.states.push(state.clone());
        }
        Ok(())
    };
    store(&mut traj, start_step, &state)?;

    for step in start_step..total {
        let t = step as f64 * h;
        match &packed {
            None => sys.strang_step(&mut state, t, h, &cache)?,
            Some((coef, offset)) => {
                state = packed_step(sys, &state, scheme.method, h, coef, offset, &template)?;
            }
        }
        let norm = sys.guard_norm(&state);
        if !norm.is_finite() || norm > limit {
            return Err(Error::BlowUp {
                t: (step + 1) as f64 * h,
                norm,
                limit,
            });
        }
        let next = step + 1;
        if next % scheme.store_every == 0 || next == total {
            store(&mut traj, next, &state)?;
        }
    }
    traj.final_step = total;
    traj.final_state = state;
    Ok(traj)
}
