//! Right-hand sides of the damped, driven cubic Schrödinger equation
//! `u_t + γu + i u_xx + i σ|u|²u = f` and of the derived systems built on it:
//! the Wick-ordered modified equation, the low/high frequency splitting `u = v + w`,
//! and the high-frequency remainder `z = Q_N v - Q_N g`.
//!
//! In Fourier variables the linear part is diagonal with symbol `ik² - γ`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{project, same_grid, Part, Spectral, SpectralField, C64};

const I: C64 = C64::new(0.0, 1.0);

/// Physical parameters shared by every equation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysParams {
    pub gamma: f64,
    pub forcing: SpectralField,
    /// `+1` or `-1`: sign in front of the cubic term.
    pub nonlin_sign: i8,
    /// When false the cubic term is dropped (linear damped-driven flow).
    pub nonlinear: bool,
}

impl PhysParams {
    pub fn new(gamma: f64, forcing: SpectralField) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::InvalidDamping(gamma));
        }
        if !forcing.is_finite() {
            return Err(Error::NonFinite { index: 0 });
        }
        Ok(Self {
            gamma,
            forcing,
            nonlin_sign: 1,
            nonlinear: true,
        })
    }

    pub fn with_sign(mut self, sign: i8) -> Result<Self> {
        if sign != 1 && sign != -1 {
            return Err(Error::InvalidParameter(format!(
                "nonlinearity sign must be +1 or -1, got {sign}"
            )));
        }
        self.nonlin_sign = sign;
        Ok(self)
    }

    pub fn linear_only(mut self) -> Self {
        self.nonlinear = false;
        self
    }

    /// Effective coefficient of `-i|u|²u` in `u_t`.
    pub fn cubic_coeff(&self) -> f64 {
        if self.nonlinear {
            f64::from(self.nonlin_sign)
        } else {
            0.0
        }
    }

    pub fn m(&self) -> usize {
        self.forcing.m()
    }

    /// Linear symbol `ik² - γ` of wavenumber `k`.
    pub fn symbol(&self, k: i64) -> C64 {
        let k = k as f64;
        C64::new(-self.gamma, k * k)
    }

    /// Radius `M0 = 2‖f‖/γ` of the absorbing ball.
    pub fn absorbing_radius(&self) -> f64 {
        2.0 * self.forcing.l2_norm() / self.gamma
    }
}

/// State of the modified equation: the field and the scalar `a(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModifiedState {
    pub v: SpectralField,
    pub a: f64,
}

impl ModifiedState {
    pub fn new(v: SpectralField, a: f64) -> Result<Self> {
        if !(a >= 0.0) || !a.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "a(t) must be finite and nonnegative, got {a}"
            )));
        }
        Ok(Self { v, a })
    }

    /// Gap `a - ‖v‖²`.
    pub fn gap(&self) -> f64 {
        self.a - self.v.l2_norm_sq()
    }
}

/// Low/high frequency splitting `u = v + w` at cutoff `N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompState {
    pub v: SpectralField,
    pub w: SpectralField,
    pub cutoff: usize,
    /// Optional high-frequency remainder `z = Q_N v - g_N`, evolved by its own equation.
    #[serde(default)]
    pub z: Option<SpectralField>,
}

impl DecompState {
    /// `v(0) = P_N u0`, `w(0) = Q_N u0`.
    pub fn split(u0: &SpectralField, cutoff: usize) -> Result<Self> {
        Ok(Self {
            v: project(u0, cutoff, Part::Low)?,
            w: project(u0, cutoff, Part::High)?,
            cutoff,
            z: None,
        })
    }

    /// Starts tracking `z` from `z(0) = Q_N v(0) - g_N = -g_N`.
    pub fn with_z(mut self, p: &PhysParams) -> Result<Self> {
        let g = steady_state_g(&p.forcing, p.gamma)?;
        let g_n = project(&g, self.cutoff, Part::High)?;
        let q_v = project(&self.v, self.cutoff, Part::High)?;
        self.z = Some(q_v.sub(&g_n)?);
        Ok(self)
    }

    pub fn reconstruct(&self) -> SpectralField {
        self.v.add(&self.w).expect("v and w share a grid")
    }
}

/// `∫ u φ̄ dx = 2π Σ û_k conj(φ̂_k)`, compensated.
pub fn pairing(u: &SpectralField, phi: &SpectralField) -> Result<C64> {
    same_grid(u, phi)?;
    let mut re = crate::spectral::CompensatedSum::new();
    let mut im = crate::spectral::CompensatedSum::new();
    for (a, b) in u.coeffs().iter().zip(phi.coeffs()) {
        let p = a * b.conj();
        re.add(p.re);
        im.add(p.im);
    }
    Ok(C64::new(re.value(), im.value()) * (2.0 * PI))
}

fn linear_plus_forcing(u: &SpectralField, p: &PhysParams) -> SpectralField {
    let mut out = u.clone();
    let m = u.m();
    let f = p.forcing.coeffs();
    for (i, c) in out.coeffs_mut().iter_mut().enumerate() {
        *c = p.symbol(crate::spectral::wavenumber(i, m)) * *c + f[i];
    }
    out.coeffs_mut()[m / 2] = C64::new(0.0, 0.0);
    out
}

/// `u_t = -i u_xx - γu - iσ|u|²u + f`, in Fourier variables.
pub fn rhs_full(sp: &Spectral, u: &SpectralField, p: &PhysParams) -> Result<SpectralField> {
    same_grid(u, &p.forcing)?;
    let mut out = linear_plus_forcing(u, p);
    let sigma = p.cubic_coeff();
    if sigma != 0.0 {
        let cubic = sp.cubic(u)?;
        out.axpy(-I * sigma, &cubic)?;
    }
    Ok(out)
}

/// Wick-ordered nonlinearity `Λ(u) = |u|²u - (1/π)‖u‖² u`, dealiased.
pub fn wick_lambda(sp: &Spectral, u: &SpectralField) -> Result<SpectralField> {
    let mut out = sp.cubic(u)?;
    out.axpy(C64::from(-u.l2_norm_sq() / PI), u)?;
    Ok(out)
}

/// `Λ(u)` evaluated by the resonance-free convolution sum
/// `Σ_{k1+k2-k3=k, k3∉{k1,k2}} û_{k1} û_{k2} conj(û_{k3}) - |û_k|² û_k`.
///
/// Cost is `O(M³)`; intended for cross-checks on small grids.
pub fn wick_lambda_direct(u: &SpectralField) -> SpectralField {
    let m = u.m();
    let half = (m / 2) as i64;
    let mut out = SpectralField::zeros(m);
    for k in (-half + 1)..half {
        let mut acc = C64::new(0.0, 0.0);
        for k1 in (-half + 1)..half {
            let a = u.get(k1);
            if a == C64::new(0.0, 0.0) {
                continue;
            }
            for k2 in (-half + 1)..half {
                let k3 = k1 + k2 - k;
                if k3 <= -half || k3 >= half || k3 == k1 || k3 == k2 {
                    continue;
                }
                acc += a * u.get(k2) * u.get(k3).conj();
            }
        }
        let uk = u.get(k);
        out.set(k, acc - uk * uk.norm_sqr());
    }
    out
}

/// Modified equation
/// `v_t + i v_xx + γv + iσ|v|²v + iσ/π (a - ‖v‖²) v = f` coupled with
/// `a' = -2γa + 2 Re ⟨f, v⟩`.
pub fn rhs_modified(
    sp: &Spectral,
    s: &ModifiedState,
    p: &PhysParams,
) -> Result<(SpectralField, f64)> {
    let mut dv = rhs_full(sp, &s.v, p)?;
    let gap = s.a - s.v.l2_norm_sq();
    dv.axpy(-I * (p.cubic_coeff() * gap / PI), &s.v)?;
    let da = -2.0 * p.gamma * s.a + 2.0 * pairing(&p.forcing, &s.v)?.re;
    Ok((dv, da))
}

/// Splitting system with `u := v + w`:
/// `v_t = L v + f - iσ (Q_N(|v|²v) + P_N(|u|²u))`,
/// `w_t = L w - iσ (Q_N(|u|²u) - Q_N(|v|²v))`.
pub fn rhs_decomposition(
    sp: &Spectral,
    s: &DecompState,
    p: &PhysParams,
) -> Result<(SpectralField, SpectralField)> {
    same_grid(&s.v, &s.w)?;
    same_grid(&s.v, &p.forcing)?;
    let mut dv = linear_plus_forcing(&s.v, p);
    let mut dw = linear_plus_forcing(&s.w, p);
    dw.axpy(C64::from(-1.0), &p.forcing)?;
    let sigma = p.cubic_coeff();
    if sigma != 0.0 {
        let u = s.reconstruct();
        let cu = sp.cubic(&u)?;
        let cv = sp.cubic(&s.v)?;
        let n = s.cutoff;
        let cu_low = project(&cu, n, Part::Low)?;
        let cu_high = project(&cu, n, Part::High)?;
        let cv_high = project(&cv, n, Part::High)?;
        dv.axpy(-I * sigma, &cv_high)?;
        dv.axpy(-I * sigma, &cu_low)?;
        dw.axpy(-I * sigma, &cu_high)?;
        dw.axpy(I * sigma, &cv_high)?;
    }
    Ok((dv, dw))
}

/// Right-hand side of `z_t + i z_xx + γz + iσ Q_N(|v|²v) = 0` for `z = Q_N z`.
pub fn rhs_z(
    sp: &Spectral,
    z: &SpectralField,
    v: &SpectralField,
    cutoff: usize,
    p: &PhysParams,
) -> Result<SpectralField> {
    same_grid(z, v)?;
    let low = project(z, cutoff, Part::Low)?;
    let energy = low.l2_norm_sq();
    if energy > 0.0 {
        return Err(Error::LowFrequencyContent { cutoff, energy });
    }
    let m = z.m();
    let mut out = z.clone();
    for (i, c) in out.coeffs_mut().iter_mut().enumerate() {
        *c *= p.symbol(crate::spectral::wavenumber(i, m));
    }
    let sigma = p.cubic_coeff();
    if sigma != 0.0 {
        let cv = project(&sp.cubic(v)?, cutoff, Part::High)?;
        out.axpy(-I * sigma, &cv)?;
    }
    Ok(out)
}

/// Steady state of the linear damped-driven flow, `ĝ(k) = f̂(k) / (γ - ik²)`.
pub fn steady_state_g(f: &SpectralField, gamma: f64) -> Result<SpectralField> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::InvalidDamping(gamma));
    }
    let m = f.m();
    let coeffs = f
        .coeffs()
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let k = crate::spectral::wavenumber(i, m) as f64;
            c / C64::new(gamma, -k * k)
        })
        .collect();
    SpectralField::from_coeffs(coeffs)
}
