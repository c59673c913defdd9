//! Ingredients of the quantum linear Boltzmann equation for a test particle of
//! mass `M` in an ideal Maxwell-Boltzmann gas of particles of mass `m`.
//!
//! Integrals run in a dimensionless frame with momenta measured in
//! `p_u = sqrt(m / beta)`. With `r = m/M`, `a = 1 + r` and `h = 2 r |P| / p_u`
//! the structure-factor exponent becomes `-(a q + h cos)^2 / 8`, and the polar
//! integral of `S` is a difference of error functions.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::specfun::{self, erf_diff, one_minus_sinc, sinc, QuadratureOptions, QuadratureResult};
use crate::Vec3;

const SQRT_2PI: f64 = 2.506_628_274_631_000_5;
const TWO_SQRT_2: f64 = 2.0 * std::f64::consts::SQRT_2;

/// Proposals tried by [`sample_transfer`] before giving up.
pub const MAX_SAMPLER_ATTEMPTS: u64 = 10_000_000;

fn default_hbar() -> f64 {
    1.0
}

/// Differential cross-section `sigma(|Q|) = |f(Q)|^2`, area units.
#[derive(Clone, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum CrossSection {
    Constant { value: f64 },
    /// Piecewise-linear in `|Q|`, held flat beyond the table ends.
    Tabulated { q: Vec<f64>, sigma: Vec<f64> },
    /// Arbitrary radial function with an upper bound used by the sampler.
    #[serde(skip)]
    Function {
        f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
        bound: f64,
    },
}

impl std::fmt::Debug for CrossSection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Constant { value } => f.debug_struct("Constant").field("value", value).finish(),
            Self::Tabulated { q, .. } => write!(f, "Tabulated({} points)", q.len()),
            Self::Function { bound, .. } => write!(f, "Function(bound {bound})"),
        }
    }
}

impl CrossSection {
    pub fn eval(&self, q: f64) -> f64 {
        match self {
            Self::Constant { value } => *value,
            Self::Tabulated { q: qs, sigma } => {
                if q <= qs[0] {
                    return sigma[0];
                }
                let last = qs.len() - 1;
                if q >= qs[last] {
                    return sigma[last];
                }
                let i = qs.partition_point(|&x| x <= q);
                let t = (q - qs[i - 1]) / (qs[i] - qs[i - 1]);
                sigma[i - 1] + t * (sigma[i] - sigma[i - 1])
            }
            Self::Function { f, .. } => f(q),
        }
    }

    /// Reference value: the constant itself, or an upper bound for the other forms.
    pub fn reference(&self) -> f64 {
        match self {
            Self::Constant { value } => *value,
            Self::Tabulated { sigma, .. } => sigma.iter().cloned().fold(0.0, f64::max),
            Self::Function { bound, .. } => *bound,
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Self::Constant { .. })
    }

    fn validate(&self) -> Result<()> {
        match self {
            Self::Constant { value } => {
                if !(*value > 0.0) || !value.is_finite() {
                    return Err(Error::Precondition(format!("cross-section must be positive, got {value}")));
                }
            }
            Self::Tabulated { q, sigma } => {
                if q.len() != sigma.len() || q.len() < 2 {
                    return Err(Error::Precondition(
                        "tabulated cross-section needs matching q/sigma arrays of length >= 2".into(),
                    ));
                }
                if q[0] < 0.0 || q.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(Error::Precondition(
                        "tabulated cross-section abscissae must be increasing and >= 0".into(),
                    ));
                }
                if sigma.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
                    return Err(Error::Precondition("cross-section values must be finite and >= 0".into()));
                }
                if !(self.reference() > 0.0) {
                    return Err(Error::Precondition("cross-section vanishes identically".into()));
                }
            }
            Self::Function { bound, .. } => {
                if !(*bound > 0.0) || !bound.is_finite() {
                    return Err(Error::Precondition(format!("cross-section bound must be positive, got {bound}")));
                }
            }
        }
        Ok(())
    }
}

/// Gas and test-particle parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GasModel {
    /// Number density, 1/length^3.
    pub n_gas: f64,
    /// Gas particle mass `m`.
    #[serde(alias = "m")]
    pub gas_mass: f64,
    /// Test particle mass `M`.
    #[serde(alias = "M")]
    pub test_mass: f64,
    /// Inverse temperature, 1/energy.
    pub beta: f64,
    pub sigma: CrossSection,
    #[serde(default = "default_hbar")]
    pub hbar: f64,
    /// Free-form label for the unit system the numbers are expressed in.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub units: Option<String>,
}

/// Scales derived from a [`GasModel`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedScales {
    pub m_star: f64,
    /// Most probable gas speed `sqrt(2 / (beta m))`.
    pub v_mp: f64,
    /// Thermal de Broglie wavelength `sqrt(2 pi beta hbar^2 / m)`.
    pub lambda_th: f64,
    /// Reference rate `n_gas v_mp 4 pi sigma`.
    pub lambda0: f64,
}

/// Dimensionless description of the polar structure at one momentum.
#[derive(Debug, Clone, Copy)]
struct Frame {
    a: f64,
    h: f64,
    p_unit: f64,
    /// Converts the dimensionless radial integral into a rate.
    prefactor: f64,
}

impl Frame {
    fn tail_scale(&self) -> f64 {
        (self.h + TWO_SQRT_2) / self.a
    }

    /// `int_{-1}^{1} exp(-(a q + h c)^2 / 8) dc`
    fn polar(&self, q: f64) -> f64 {
        let aq = self.a * q;
        if self.h == 0.0 {
            return 2.0 * (-aq * aq / 8.0).exp();
        }
        SQRT_2PI / self.h * erf_diff((aq - self.h) / TWO_SQRT_2, (aq + self.h) / TWO_SQRT_2)
    }
}

fn rate_quadrature() -> QuadratureOptions {
    QuadratureOptions {
        epsabs: 1e-15,
        epsrel: 1e-11,
        max_subdivisions: 2000,
    }
}

impl GasModel {
    /// Model with `hbar = 1`.
    pub fn new(n_gas: f64, gas_mass: f64, test_mass: f64, beta: f64, sigma: CrossSection) -> Result<Self> {
        let g = Self {
            n_gas,
            gas_mass,
            test_mass,
            beta,
            sigma,
            hbar: 1.0,
            units: None,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn with_hbar(mut self, hbar: f64) -> Result<Self> {
        self.hbar = hbar;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("n_gas", self.n_gas),
            ("gas_mass", self.gas_mass),
            ("test_mass", self.test_mass),
            ("beta", self.beta),
            ("hbar", self.hbar),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Precondition(format!("{name} must be positive and finite, got {v}")));
            }
        }
        self.sigma.validate()
    }

    pub fn mass_ratio(&self) -> f64 {
        self.gas_mass / self.test_mass
    }

    pub fn m_star(&self) -> f64 {
        self.gas_mass * self.test_mass / (self.gas_mass + self.test_mass)
    }

    pub fn scales(&self) -> DerivedScales {
        let v_mp = (2.0 / (self.beta * self.gas_mass)).sqrt();
        DerivedScales {
            m_star: self.m_star(),
            v_mp,
            lambda_th: (2.0 * PI * self.beta * self.hbar * self.hbar / self.gas_mass).sqrt(),
            lambda0: self.n_gas * v_mp * 4.0 * PI * self.sigma.reference(),
        }
    }

    /// Momentum of the test particle moving at the most probable gas speed times `s`.
    pub fn momentum_at(&self, s: f64) -> f64 {
        s * self.test_mass * self.scales().v_mp
    }

    pub fn kinetic_energy(&self, p: &Vec3) -> f64 {
        p.norm_squared() / (2.0 * self.test_mass)
    }

    fn frame(&self, p: &Vec3) -> Frame {
        let r = self.mass_ratio();
        let p_unit = (self.gas_mass / self.beta).sqrt();
        let ms = self.m_star();
        Frame {
            a: 1.0 + r,
            h: 2.0 * r * p.norm() / p_unit,
            p_unit,
            prefactor: self.n_gas / (ms * ms) * p_unit.powi(3) * self.beta * SQRT_2PI * self.sigma.reference(),
        }
    }

    fn sigma_rel(&self, q: f64) -> f64 {
        match &self.sigma {
            CrossSection::Constant { .. } => 1.0,
            other => other.eval(q) / other.reference(),
        }
    }

    /// `int d^3Q w(Q) f(|Q|)` with `w = (n_gas / m*^2) sigma S(Q, P)`.
    pub(crate) fn kernel_radial_integral(&self, p: &Vec3, f: impl Fn(f64) -> f64) -> Result<QuadratureResult> {
        let fr = self.frame(p);
        let integrand = |q: f64| {
            let big_q = fr.p_unit * q;
            q * self.sigma_rel(big_q) * fr.polar(q) * f(big_q)
        };
        let r = specfun::integrate_radial_with(integrand, fr.tail_scale(), &rate_quadrature()).map_err(|e| match e {
            Error::Accuracy { context, best } => Error::Accuracy {
                context: format!("collision kernel integral at |P| = {}: {context}", p.norm()),
                best: QuadratureResult {
                    value: best.value * fr.prefactor,
                    error_estimate: best.error_estimate * fr.prefactor,
                },
            },
            e => e,
        })?;
        Ok(QuadratureResult {
            value: r.value * fr.prefactor,
            error_estimate: r.error_estimate * fr.prefactor,
        })
    }

    /// `int d^3Q w(Q) B(Q, x)` for the chosen bracket `B`.
    pub(crate) fn fourier_kernel(&self, p: &Vec3, x: &Vec3, bracket: Bracket) -> Result<Complex64> {
        let fr = self.frame(p);
        let xi = x * (fr.p_unit / self.hbar);
        let opts = QuadratureOptions {
            epsabs: 1e-14,
            ..rate_quadrature()
        };
        let value = if fr.h == 0.0 {
            let r = xi.norm();
            let bracket = |q: f64| match bracket {
                Bracket::Plain => 2.0 * sinc(q * r),
                _ => -2.0 * one_minus_sinc(q * r),
            };
            let integrand = |q: f64| {
                let aq = fr.a * q;
                q * self.sigma_rel(fr.p_unit * q) * (-aq * aq / 8.0).exp() * bracket(q)
            };
            Complex64::new(specfun::integrate_radial_with(integrand, fr.tail_scale(), &opts)?.value, 0.0)
        } else {
            let axis = p / p.norm();
            let xi_par = xi.dot(&axis);
            let xi_perp = (xi - axis * xi_par).norm();
            let inner_opts = QuadratureOptions {
                epsabs: 1e-15,
                epsrel: 1e-12,
                max_subdivisions: 500,
            };
            let mut failure: Option<Error> = None;
            let integrand = |q: f64| -> Complex64 {
                let aq = fr.a * q;
                let damping = match bracket {
                    Bracket::Plain => None,
                    Bracket::MinusOne => Some(f64::INFINITY),
                    Bracket::Compensated(q0) => Some(1.0 + (fr.p_unit * q / q0).powi(2)),
                };
                let polar = |c: f64| {
                    let g = (-(aq + fr.h * c).powi(2) / 8.0).exp();
                    let phase = Complex64::new(0.0, q * c * xi_par).exp();
                    let bessel = libm::j0(q * xi_perp * (1.0 - c * c).max(0.0).sqrt());
                    let mut v = phase * bessel;
                    if let Some(d) = damping {
                        v -= Complex64::new(1.0, q * c * xi_par / d);
                    }
                    v * g
                };
                match specfun::adaptive(polar, -1.0, 1.0, &inner_opts) {
                    Ok((v, _)) => v * (q * self.sigma_rel(fr.p_unit * q)),
                    Err((v, _)) => {
                        failure.get_or_insert_with(|| Error::Accuracy {
                            context: format!("polar Fourier integral at q = {q}"),
                            best: QuadratureResult { value: v.re, error_estimate: f64::NAN },
                        });
                        v * (q * self.sigma_rel(fr.p_unit * q))
                    }
                }
            };
            let (v, _) = specfun::integrate_radial_complex(integrand, fr.tail_scale(), &opts)?;
            if let Some(e) = failure {
                return Err(e);
            }
            v
        };
        Ok(value * fr.prefactor)
    }
}

/// Integrand bracket of [`GasModel::fourier_kernel`].
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(not(test), allow(dead_code))]
pub(crate) enum Bracket {
    /// `exp(iQ.x/hbar)`
    Plain,
    /// `exp(iQ.x/hbar) - 1`
    MinusOne,
    /// `exp(iQ.x/hbar) - 1 - (i/hbar) Q.x / (1 + Q^2/Q0^2)`
    Compensated(f64),
}

/// `E(Q, P) = Q^2/(2M) + Q.P/M`, the energy handed to the test particle.
pub fn energy_transfer(g: &GasModel, q: &Vec3, p: &Vec3) -> f64 {
    (0.5 * q.norm_squared() + q.dot(p)) / g.test_mass
}

/// Natural logarithm of [`structure_factor`].
pub fn log_structure_factor(g: &GasModel, q: &Vec3, p: &Vec3) -> Result<f64> {
    let qn = q.norm();
    if !(qn > 0.0) || !qn.is_finite() {
        return Err(Error::Domain(format!("structure factor needs 0 < |Q| < inf, got {qn}")));
    }
    // (Q^2 + 2mE)/|Q| written without dividing a small difference by |Q|
    let r = g.mass_ratio();
    let arg = qn * (1.0 + r) + 2.0 * r * q.dot(p) / qn;
    let prefactor = (g.beta * g.gas_mass / (2.0 * PI)).sqrt() / qn;
    Ok(prefactor.ln() - g.beta / (8.0 * g.gas_mass) * arg * arg)
}

/// Dynamic structure factor of the ideal gas,
/// `S(Q,P) = sqrt(beta m / 2 pi) / |Q| * exp(-beta/(8m) (Q^2 + 2 m E)^2 / Q^2)`.
pub fn structure_factor(g: &GasModel, q: &Vec3, p: &Vec3) -> Result<f64> {
    Ok(log_structure_factor(g, q, p)?.exp())
}

/// Total collision rate `Lambda(P) = (n_gas / m*^2) int d^3Q sigma(Q) S(Q, P)`.
pub fn total_rate(g: &GasModel, p: &Vec3) -> Result<f64> {
    Ok(g.kernel_radial_integral(p, |_| 1.0)?.value)
}

/// Draws a momentum transfer with density `sigma(Q) S(Q, P) / int sigma S`.
///
/// The density is that of a binary collision with a Maxwell-Boltzmann gas
/// partner, isotropic in the centre-of-mass frame: the partner velocity is
/// drawn with weight `f(v) |v - V|`, and the transfer `Q = 2 m* |w| cos(t) n`
/// has its direction `n` Lambert-distributed about the relative velocity `w`.
/// Non-constant cross-sections are handled by thinning against their bound.
pub fn sample_transfer<R: Rng + ?Sized>(g: &GasModel, p: &Vec3, rng: &mut R) -> Result<Vec3> {
    let sigma_v = (1.0 / (g.beta * g.gas_mass)).sqrt();
    let v_test = p / g.test_mass;
    let v_test_norm = v_test.norm();
    let mean_speed = (8.0 / (PI * g.beta * g.gas_mass)).sqrt();
    let p_mb = v_test_norm / (v_test_norm + mean_speed);
    let two_m_star = 2.0 * g.m_star();
    let constant = g.sigma.is_constant();
    let bound = g.sigma.reference();

    for _ in 0..MAX_SAMPLER_ATTEMPTS {
        let v = if rng.gen::<f64>() < p_mb {
            gaussian_vec(rng) * sigma_v
        } else {
            // speed density ~ v^3 exp(-v^2 / 2 sigma_v^2): v^2 / (2 sigma_v^2) ~ Gamma(2, 1)
            let u1: f64 = 1.0 - rng.gen::<f64>();
            let u2: f64 = 1.0 - rng.gen::<f64>();
            let speed = sigma_v * (2.0 * -(u1 * u2).ln()).sqrt();
            unit_vector(rng) * speed
        };
        let w = v - v_test;
        let w_norm = w.norm();
        if rng.gen::<f64>() * (v.norm() + v_test_norm) >= w_norm || w_norm == 0.0 {
            continue;
        }
        let cos_t = rng.gen::<f64>().sqrt();
        let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
        let phi = 2.0 * PI * rng.gen::<f64>();
        let axis = w / w_norm;
        let (e1, e2) = orthonormal_pair(&axis);
        let dir = axis * cos_t + (e1 * phi.cos() + e2 * phi.sin()) * sin_t;
        let q = dir * (two_m_star * w_norm * cos_t);
        if !constant && rng.gen::<f64>() * bound >= g.sigma.eval(q.norm()) {
            continue;
        }
        if q.norm() == 0.0 {
            continue;
        }
        return Ok(q);
    }
    Err(Error::Sampler {
        attempts: MAX_SAMPLER_ATTEMPTS,
        diagnostic: format!(
            "no transfer accepted at |P| = {}; cross-section bound {} may be far above typical values",
            p.norm(),
            bound
        ),
    })
}

fn gaussian_vec<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    Vec3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal))
}

fn unit_vector<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    let z = 2.0 * rng.gen::<f64>() - 1.0;
    let phi = 2.0 * PI * rng.gen::<f64>();
    let s = (1.0 - z * z).max(0.0).sqrt();
    Vec3::new(s * phi.cos(), s * phi.sin(), z)
}

pub(crate) fn orthonormal_pair(axis: &Vec3) -> (Vec3, Vec3) {
    let helper = if axis.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let e1 = axis.cross(&helper).normalize();
    let e2 = axis.cross(&e1);
    (e1, e2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gas(ratio: f64) -> GasModel {
        GasModel::new(0.7, 1.0, 1.0 / ratio, 1.3, CrossSection::Constant { value: 0.2 }).unwrap()
    }

    fn maxwell_rate(s: f64) -> f64 {
        (-s * s).exp() / PI.sqrt() + (s + 0.5 / s) * libm::erf(s)
    }

    #[test]
    fn energy_transfer_examples() {
        let g = GasModel::new(1.0, 1.0, 1.0, 1.0, CrossSection::Constant { value: 1.0 }).unwrap();
        assert_eq!(energy_transfer(&g, &Vec3::zeros(), &Vec3::new(1.0, 2.0, 3.0)), 0.0);
        assert_eq!(energy_transfer(&g, &Vec3::new(3.0, 0.0, 0.0), &Vec3::zeros()), 4.5);
        assert_eq!(energy_transfer(&g, &Vec3::new(1.0, 0.0, 0.0), &Vec3::new(-0.5, 0.0, 0.0)), 0.0);
    }

    #[test]
    fn structure_factor_at_rest_equal_masses() {
        let g = GasModel::new(1.0, 2.0, 2.0, 0.8, CrossSection::Constant { value: 1.0 }).unwrap();
        let q = Vec3::new(0.3, -1.1, 0.4);
        let qn = q.norm();
        let expected = (g.beta * g.gas_mass / (2.0 * PI)).sqrt() / qn * (-g.beta * qn * qn / (2.0 * g.gas_mass)).exp();
        assert_relative_eq!(structure_factor(&g, &q, &Vec3::zeros()).unwrap(), expected, max_relative = 1e-14);
        assert!(structure_factor(&g, &Vec3::zeros(), &Vec3::x()).is_err());
    }

    #[test]
    fn structure_factor_ignores_transverse_momentum() {
        let g = gas(0.3);
        let q = Vec3::new(1.0, 0.5, 0.0);
        let p = Vec3::new(0.2, 0.1, 0.7);
        let perp = q.cross(&Vec3::z()) * 3.0;
        let a = structure_factor(&g, &q, &p).unwrap();
        let b = structure_factor(&g, &q, &(p + perp)).unwrap();
        assert_relative_eq!(a, b, max_relative = 1e-14);
    }

    #[test]
    fn detailed_balance_spot_check() {
        let g = gas(0.5);
        let q = Vec3::new(0.4, -0.9, 1.3);
        let p = Vec3::new(-0.5, 0.2, 0.8);
        let lhs = structure_factor(&g, &q, &p).unwrap();
        let rhs = (-g.beta * energy_transfer(&g, &q, &p)).exp() * structure_factor(&g, &(-q), &(p + q)).unwrap();
        assert_relative_eq!(lhs, rhs, max_relative = 1e-12);
    }

    #[test]
    fn rate_at_rest_for_several_mass_ratios() {
        for ratio in [1e-3, 0.1, 1.0, 10.0] {
            let g = gas(ratio);
            let rate = total_rate(&g, &Vec3::zeros()).unwrap();
            assert_relative_eq!(rate, 2.0 * g.scales().lambda0 / PI.sqrt(), max_relative = 1e-10);
        }
    }

    #[test]
    fn rate_follows_mean_relative_speed() {
        for ratio in [1e-3, 0.5, 4.0] {
            let g = gas(ratio);
            let l0 = g.scales().lambda0;
            for s in [0.1, 0.5, 1.0, 2.5, 6.0] {
                let p = Vec3::new(0.0, 0.0, g.momentum_at(s));
                assert_relative_eq!(total_rate(&g, &p).unwrap() / l0, maxwell_rate(s), max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn rate_depends_on_magnitude_only() {
        let g = gas(0.2);
        let p = Vec3::new(0.3, 1.2, -0.4);
        let rotated = Vec3::new(0.0, 0.0, p.norm());
        assert_relative_eq!(total_rate(&g, &p).unwrap(), total_rate(&g, &rotated).unwrap(), max_relative = 1e-12);
    }

    #[test]
    fn rate_is_monotone_in_momentum() {
        let g = gas(1.0);
        let mut last = 0.0;
        for i in 0..=50 {
            let s = 0.1 * i as f64;
            let r = total_rate(&g, &Vec3::new(g.momentum_at(s), 0.0, 0.0)).unwrap();
            assert!(r >= last);
            last = r;
        }
    }

    #[test]
    fn rate_ratio_invariant_under_length_rescaling() {
        let g = gas(0.25);
        let c: f64 = 7.3;
        let mut h = g.clone();
        h.n_gas /= c.powi(3);
        h.sigma = CrossSection::Constant { value: 0.2 * c * c };
        h.hbar *= c;
        let p = Vec3::new(0.0, g.momentum_at(1.7), 0.0);
        let a = total_rate(&g, &p).unwrap() / g.scales().lambda0;
        let b = total_rate(&h, &p).unwrap() / h.scales().lambda0;
        assert_relative_eq!(a, b, max_relative = 1e-10);
    }

    #[test]
    fn tabulated_constant_matches_constant() {
        let g = gas(0.5);
        let mut t = g.clone();
        t.sigma = CrossSection::Tabulated {
            q: vec![0.0, 10.0],
            sigma: vec![0.2, 0.2],
        };
        let p = Vec3::new(0.5, 0.0, 0.0);
        assert_relative_eq!(total_rate(&g, &p).unwrap(), total_rate(&t, &p).unwrap(), max_relative = 1e-12);
    }

    #[test]
    fn invalid_models_rejected() {
        assert!(GasModel::new(-1.0, 1.0, 1.0, 1.0, CrossSection::Constant { value: 1.0 }).is_err());
        assert!(GasModel::new(1.0, 1.0, 1.0, 1.0, CrossSection::Constant { value: 0.0 }).is_err());
        let bad = CrossSection::Tabulated {
            q: vec![1.0, 0.5],
            sigma: vec![1.0, 1.0],
        };
        assert!(GasModel::new(1.0, 1.0, 1.0, 1.0, bad).is_err());
    }

    #[test]
    fn sampled_energy_matches_quadrature() {
        let g = gas(1.0);
        let p = Vec3::zeros();
        let rate = total_rate(&g, &p).unwrap();
        let mean_e = g.kernel_radial_integral(&p, |q| q * q / (2.0 * g.test_mass)).unwrap().value / rate;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 200_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let e = energy_transfer(&g, &sample_transfer(&g, &p, &mut rng).unwrap(), &p);
            s += e;
            s2 += e * e;
        }
        let mean = s / n as f64;
        let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - mean_e).abs() < 3.0 * se, "{mean} vs {mean_e} (se {se})");
    }

    #[test]
    fn sampled_polar_angle_matches_density_at_finite_momentum() {
        // Fraction of transfers with Q.P > 0 against the kernel integral restricted to c > 0.
        let g = gas(0.5);
        let p = Vec3::new(0.0, 0.0, g.momentum_at(1.2));
        let fr = g.frame(&p);
        let forward = specfun::integrate_radial(
            |q| {
                let aq = fr.a * q;
                q * SQRT_2PI / fr.h * erf_diff(aq / TWO_SQRT_2, (aq + fr.h) / TWO_SQRT_2)
            },
            fr.tail_scale(),
        )
        .unwrap()
        .value
            * fr.prefactor;
        let expected = forward / total_rate(&g, &p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 200_000;
        let hits = (0..n)
            .filter(|_| sample_transfer(&g, &p, &mut rng).unwrap().z > 0.0)
            .count() as f64;
        let frac = hits / n as f64;
        let se = (expected * (1.0 - expected) / n as f64).sqrt();
        assert!((frac - expected).abs() < 4.0 * se, "{frac} vs {expected}");
    }

    #[test]
    fn sampled_magnitude_with_tabulated_cross_section() {
        let mut g = gas(1.0);
        g.sigma = CrossSection::Tabulated {
            q: vec![0.0, 1.0, 2.0, 4.0],
            sigma: vec![0.1, 0.5, 0.3, 0.0],
        };
        let p = Vec3::new(0.4, 0.0, 0.0);
        let rate = total_rate(&g, &p).unwrap();
        let mean_q = g.kernel_radial_integral(&p, |q| q).unwrap().value / rate;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 100_000;
        let samples: Vec<f64> = (0..n).map(|_| sample_transfer(&g, &p, &mut rng).unwrap().norm()).collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|q| (q - mean).powi(2)).sum::<f64>() / n as f64;
        assert!((mean - mean_q).abs() < 4.0 * (var / n as f64).sqrt(), "{mean} vs {mean_q}");
    }

    #[test]
    fn sampler_is_deterministic() {
        let g = gas(0.3);
        let p = Vec3::new(0.1, 0.2, 0.3);
        let a: Vec<Vec3> = {
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            (0..10).map(|_| sample_transfer(&g, &p, &mut rng).unwrap()).collect()
        };
        let b: Vec<Vec3> = {
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            (0..10).map(|_| sample_transfer(&g, &p, &mut rng).unwrap()).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn sampler_reports_stall() {
        let mut g = gas(1.0);
        g.sigma = CrossSection::Function {
            f: Arc::new(|_| 0.0),
            bound: 1.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(sample_transfer(&g, &Vec3::zeros(), &mut rng), Err(Error::Sampler { .. })));
    }

    #[test]
    fn fourier_kernel_at_origin_is_total_rate() {
        let g = gas(0.4);
        for p in [Vec3::zeros(), Vec3::new(0.0, 0.3, 0.4)] {
            let f = g.fourier_kernel(&p, &Vec3::new(1e-300, 0.0, 0.0), Bracket::Plain).unwrap();
            assert_relative_eq!(f.re, total_rate(&g, &p).unwrap(), max_relative = 1e-9);
        }
    }

    #[test]
    fn fourier_kernel_continuous_in_momentum() {
        // The P = 0 shortcut and the general polar route must agree as |P| -> 0.
        let g = gas(0.4);
        let x = Vec3::new(0.3, 0.8, -0.2);
        let at_rest = g.fourier_kernel(&Vec3::zeros(), &x, Bracket::Plain).unwrap();
        let tiny = g.fourier_kernel(&Vec3::new(0.0, 0.0, 1e-9), &x, Bracket::Plain).unwrap();
        assert!((at_rest - tiny).norm() < 1e-7 * at_rest.norm());
        let at_rest = g.fourier_kernel(&Vec3::zeros(), &x, Bracket::Compensated(1e12)).unwrap();
        let tiny = g.fourier_kernel(&Vec3::new(0.0, 0.0, 1e-9), &x, Bracket::MinusOne).unwrap();
        assert!((at_rest - tiny).norm() < 1e-7 * at_rest.norm());
    }

    #[test]
    fn gas_json_round_trip() {
        let g = gas(0.1);
        let json = serde_json::to_string(&g).unwrap();
        assert!(json.contains("\"form\":\"constant\""));
        let back: GasModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back.test_mass, g.test_mass);
        let aliased: GasModel = serde_json::from_str(
            r#"{"n_gas":1,"m":1,"M":2,"beta":1,"sigma":{"form":"constant","value":1}}"#,
        )
        .unwrap();
        assert_eq!(aliased.test_mass, 2.0);
        assert_eq!(aliased.hbar, 1.0);
    }
}
