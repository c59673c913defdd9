//! Position decoherence in the recoilless limit, where the test-particle
//! momentum in the collision kernel is frozen to a classical label `P0`.
//!
//! Coherences then decay as `D(t) = exp(-Lambda0 (2/sqrt(pi)) [1 - Phi_S(x)] t)`
//! with `Phi_S` the normalized Fourier transform of the collision kernel.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qlbe::{total_rate, Bracket, GasModel};
use crate::specfun::hyp1f1_dec;
use crate::Vec3;

/// Gas plus the frozen test-particle momentum.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecoillessModel {
    pub gas: GasModel,
    #[serde(default = "Vec3::zeros")]
    pub p0: Vec3,
}

/// Rates and caveats attached to a recoilless model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// `Lambda0 * 2/sqrt(pi)`, the prefactor used in [`decoherence_factor`].
    pub saturation_rate: f64,
    /// `Lambda(P0)`, the rate normalizing `Phi_S`.
    pub rate_at_p0: f64,
    /// `|P0| / (M v_mp)`
    pub slowness: f64,
    pub warnings: Vec<String>,
}

/// Above this `|P0| / (M v_mp)` the slow-particle formula is flagged.
pub const SLOW_PARTICLE_THRESHOLD: f64 = 0.1;

impl RecoillessModel {
    pub fn new(gas: GasModel, p0: Vec3) -> Result<Self> {
        let m = Self { gas, p0 };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        self.gas.validate()?;
        if !self.p0.iter().all(|c| c.is_finite()) {
            return Err(Error::Precondition("p0 must be finite".into()));
        }
        Ok(())
    }

    pub fn diagnostics(&self) -> Result<Diagnostics> {
        let scales = self.gas.scales();
        let slowness = self.p0.norm() / (self.gas.test_mass * scales.v_mp);
        let mut warnings = Vec::new();
        if slowness > SLOW_PARTICLE_THRESHOLD {
            warnings.push(format!(
                "|P0| = {slowness:.3} M v_mp exceeds {SLOW_PARTICLE_THRESHOLD}; the slow-particle 1F1 form is not expected to hold"
            ));
        }
        Ok(Diagnostics {
            saturation_rate: 2.0 * scales.lambda0 / PI.sqrt(),
            rate_at_p0: total_rate(&self.gas, &self.p0)?,
            slowness,
            warnings,
        })
    }
}

/// `(Phi_S(x), 1 - Phi_S(x))`, the second computed without cancellation.
fn phi_s_pair(m: &RecoillessModel, x: &Vec3) -> Result<(Complex64, Complex64)> {
    m.validate()?;
    if !m.gas.sigma.is_constant() {
        return Err(Error::Unsupported(
            "Phi_S is defined for a constant cross-section".into(),
        ));
    }
    if !x.iter().all(|c| c.is_finite()) {
        return Err(Error::Domain("position must be finite".into()));
    }
    if x.iter().all(|c| *c == 0.0) {
        return Ok((Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)));
    }
    let rate = total_rate(&m.gas, &m.p0)?;
    let minus_one = m.gas.fourier_kernel(&m.p0, x, Bracket::MinusOne)?;
    let one_minus = -minus_one / rate;
    Ok((Complex64::new(1.0, 0.0) - one_minus, one_minus))
}

/// `Phi_S(x) = (n_gas sigma / (m*^2 Lambda(P0))) int d^3Q S(Q, P0) exp(iQ.x/hbar)`.
pub fn phi_s(m: &RecoillessModel, x: &Vec3) -> Result<Complex64> {
    Ok(phi_s_pair(m, x)?.0)
}

/// `D(x, t) = exp(-Lambda0 (2/sqrt(pi)) [1 - Phi_S(x)] t)`.
pub fn decoherence_factor(m: &RecoillessModel, x: &Vec3, t: f64) -> Result<Complex64> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("time must be >= 0, got {t}")));
    }
    let (_, one_minus) = phi_s_pair(m, x)?;
    if t == 0.0 {
        return Ok(Complex64::new(1.0, 0.0));
    }
    let rate = 2.0 * m.gas.scales().lambda0 / PI.sqrt();
    Ok((-rate * t * one_minus).exp())
}

/// `1F1(1, 3/2; -4 pi x^2 / lambda_th^2)`, the slow-particle form of `Phi_S`.
pub fn slow_limit_phi_s(lambda_th: f64, x: f64) -> Result<f64> {
    if !(lambda_th > 0.0) || !lambda_th.is_finite() {
        return Err(Error::Domain(format!("lambda_th must be positive, got {lambda_th}")));
    }
    if !x.is_finite() {
        return Err(Error::Domain("separation must be finite".into()));
    }
    hyp1f1_dec(4.0 * PI * x * x / (lambda_th * lambda_th))
}

/// CSV `x_over_lambda_th,re_phi_s,im_phi_s` along `direction`.
pub fn write_phi_s_curve<W: Write>(m: &RecoillessModel, direction: &Vec3, x_over_lambda: &[f64], out: W) -> Result<()> {
    let lambda_th = m.gas.scales().lambda_th;
    let mut w = crate::cli::csv_writer(out);
    w.write_record(["x_over_lambda_th", "re_phi_s", "im_phi_s"]).map_err(crate::cli::csv_error)?;
    for &s in x_over_lambda {
        let v = phi_s(m, &(direction * (s * lambda_th)))?;
        w.write_record([crate::cli::fmt_f64(s), crate::cli::fmt_f64(v.re), crate::cli::fmt_f64(v.im)])
            .map_err(crate::cli::csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// CSV `t,abs_D` at fixed separation `x`.
pub fn write_decay_curve<W: Write>(m: &RecoillessModel, x: &Vec3, times: &[f64], out: W) -> Result<()> {
    let mut w = crate::cli::csv_writer(out);
    w.write_record(["t", "abs_D"]).map_err(crate::cli::csv_error)?;
    for &t in times {
        let d = decoherence_factor(m, x, t)?;
        w.write_record([crate::cli::fmt_f64(t), crate::cli::fmt_f64(d.norm())])
            .map_err(crate::cli::csv_error)?;
    }
    w.flush()?;
    Ok(())
}
