//! Levy triplets, characteristic exponents and characteristic functions.
//!
//! The generator of a translation-covariant pure-decoherence semigroup acts on
//! position matrix elements as multiplication by `-Psi(X - Y)` with
//!
//! ```text
//! Psi(x) = (i/hbar) b.x + 1/2 x^T D x
//!        - int dQ w(Q) [exp(i Q.x/hbar) - 1 - (i/hbar) Q.x / (1 + Q^2/Q0^2)]
//! ```
//!
//! where `w(Q) = |lambda(Q)|^2` is the jump measure and `Q0` its compensator
//! scale. `Phi(t, x) = exp(-t Psi(x))` is then the characteristic function of
//! a Levy process.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, Matrix3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qlbe::{Bracket, GasModel};
use crate::specfun::{self, one_minus_sinc, QuadratureOptions};
use crate::Vec3;

/// Compensator scale standing in for "no compensator".
pub const NO_COMPENSATOR: f64 = 1e12;

fn default_truncation() -> f64 {
    NO_COMPENSATOR
}

fn default_hbar() -> f64 {
    1.0
}

fn levy_quadrature() -> QuadratureOptions {
    QuadratureOptions {
        epsabs: 1e-15,
        epsrel: 1e-10,
        max_subdivisions: 10000,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointMass {
    pub weight: f64,
    pub q: Vec3,
}

/// Radial weight `g(|Q|)` of an isotropic jump measure.
#[derive(Clone, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum RadialDensity {
    /// `amplitude * exp(-Q^2 / width^2)`
    Gaussian { amplitude: f64, width: f64 },
    /// `amplitude * Q^(-exponent)`
    PowerLaw { amplitude: f64, exponent: f64 },
    /// Piecewise-linear table, zero outside `[q[0], q[last]]`.
    Tabulated { q: Vec<f64>, g: Vec<f64> },
    #[serde(skip)]
    Function(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl std::fmt::Debug for RadialDensity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Gaussian { amplitude, width } => f
                .debug_struct("Gaussian")
                .field("amplitude", amplitude)
                .field("width", width)
                .finish(),
            Self::PowerLaw { amplitude, exponent } => f
                .debug_struct("PowerLaw")
                .field("amplitude", amplitude)
                .field("exponent", exponent)
                .finish(),
            Self::Tabulated { q, .. } => write!(f, "Tabulated({} points)", q.len()),
            Self::Function(_) => write!(f, "Function(..)"),
        }
    }
}

impl RadialDensity {
    pub fn eval(&self, q: f64) -> f64 {
        match self {
            Self::Gaussian { amplitude, width } => amplitude * (-(q * q) / (width * width)).exp(),
            Self::PowerLaw { amplitude, exponent } => amplitude * q.powf(-exponent),
            Self::Tabulated { q: qs, g } => {
                if qs.is_empty() || q < qs[0] || q > qs[qs.len() - 1] {
                    return 0.0;
                }
                let i = qs.partition_point(|&x| x <= q).clamp(1, qs.len() - 1);
                let (q0, q1) = (qs[i - 1], qs[i]);
                let t = if q1 > q0 { (q - q0) / (q1 - q0) } else { 0.0 };
                g[i - 1] + t * (g[i] - g[i - 1])
            }
            Self::Function(f) => f(q),
        }
    }

    fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Precondition(m));
        match self {
            Self::Gaussian { amplitude, width } => {
                if !(*amplitude >= 0.0) || !(*width > 0.0) {
                    return bad(format!("gaussian density needs amplitude >= 0, width > 0 (got {amplitude}, {width})"));
                }
            }
            Self::PowerLaw { amplitude, exponent } => {
                if !(*amplitude >= 0.0) || !exponent.is_finite() {
                    return bad(format!("power-law density needs amplitude >= 0 (got {amplitude}, {exponent})"));
                }
            }
            Self::Tabulated { q, g } => {
                if q.len() != g.len() || q.len() < 2 {
                    return bad("tabulated density needs matching q/g arrays of length >= 2".into());
                }
                if q.windows(2).any(|w| !(w[1] > w[0])) || q[0] < 0.0 {
                    return bad("tabulated density abscissae must be increasing and >= 0".into());
                }
                if g.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                    return bad("tabulated density values must be finite and >= 0".into());
                }
            }
            Self::Function(_) => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JumpKind {
    /// Finite sum of weighted momentum transfers.
    PointMasses { masses: Vec<PointMass> },
    /// `w(Q) = g(|Q|)`; radial integrals use `tail_scale` as their decay length.
    IsotropicDensity { density: RadialDensity, tail_scale: f64 },
    /// `w(Q) = (n_gas / m*^2) sigma(Q) S(Q, P0)`, the recoilless collision kernel.
    StructureFactorKernel { gas: GasModel, p0: Vec3 },
}

/// Poisson part of a Levy triplet: the weight `|lambda(Q)|^2` plus the compensator scale `Q0`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JumpMeasure {
    #[serde(flatten)]
    pub kind: JumpKind,
    #[serde(default = "default_truncation")]
    pub truncation: f64,
}

impl JumpMeasure {
    pub fn none() -> Self {
        Self::point_masses(Vec::new())
    }

    pub fn point_masses(masses: Vec<PointMass>) -> Self {
        Self {
            kind: JumpKind::PointMasses { masses },
            truncation: NO_COMPENSATOR,
        }
    }

    pub fn isotropic(density: RadialDensity, tail_scale: f64) -> Self {
        Self {
            kind: JumpKind::IsotropicDensity { density, tail_scale },
            truncation: NO_COMPENSATOR,
        }
    }

    pub fn structure_factor(gas: GasModel, p0: Vec3) -> Self {
        Self {
            kind: JumpKind::StructureFactorKernel { gas, p0 },
            truncation: NO_COMPENSATOR,
        }
    }

    pub fn with_truncation(mut self, q0: f64) -> Self {
        self.truncation = q0;
        self
    }

    fn check_structure(&self) -> Result<()> {
        if !(self.truncation > 0.0) {
            return Err(Error::Precondition(format!(
                "compensator scale Q0 must be positive, got {}",
                self.truncation
            )));
        }
        match &self.kind {
            JumpKind::PointMasses { masses } => {
                for (i, m) in masses.iter().enumerate() {
                    if !(m.weight >= 0.0) || !m.weight.is_finite() || !m.q.iter().all(|c| c.is_finite()) {
                        return Err(Error::Precondition(format!(
                            "point mass {i} needs finite weight >= 0 and finite transfer"
                        )));
                    }
                }
            }
            JumpKind::IsotropicDensity { density, tail_scale } => {
                density.check()?;
                if !(*tail_scale > 0.0) || !tail_scale.is_finite() {
                    return Err(Error::Precondition(format!("tail_scale must be positive, got {tail_scale}")));
                }
            }
            JumpKind::StructureFactorKernel { gas, p0 } => {
                gas.validate()?;
                if !p0.iter().all(|c| c.is_finite()) {
                    return Err(Error::Precondition("p0 must be finite".into()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "detail", rename_all = "snake_case")]
pub enum Verdict {
    Ok,
    Violation(String),
    Indeterminate(String),
}

/// Outcome of [`validate_levy_measure`]: the verdict and `int w(Q) Q^2/(1+Q^2) dQ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevyReport {
    pub verdict: Verdict,
    pub value: f64,
    pub error_estimate: f64,
}

impl LevyReport {
    pub fn is_ok(&self) -> bool {
        self.verdict == Verdict::Ok
    }
}

/// Checks `int dQ w(Q) Q^2 / (1 + Q^2) < inf`.
///
/// Q enters as a plain number here, in whatever units the measure uses.
/// Isotropic densities are probed for power-law blow-up at both ends of the
/// radial axis before the integral is attempted.
pub fn validate_levy_measure(m: &JumpMeasure) -> Result<LevyReport> {
    m.check_structure()?;
    let levy_factor = |q2: f64| q2 / (1.0 + q2);
    match &m.kind {
        JumpKind::PointMasses { masses } => {
            let value = masses.iter().map(|pm| pm.weight * levy_factor(pm.q.norm_squared())).sum();
            Ok(LevyReport {
                verdict: Verdict::Ok,
                value,
                error_estimate: 0.0,
            })
        }
        JumpKind::IsotropicDensity { density, tail_scale } => {
            let h = |q: f64| 4.0 * PI * q * q * density.eval(q) * levy_factor(q * q);
            // Local power-law exponent d ln h / d ln q at the two ends; a
            // radial integrand ~ q^k diverges at 0 for k <= -1 and at infinity for k >= -1.
            let slope = |q: f64| {
                let (a, b) = (h(q), h(2.0 * q));
                if a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite() {
                    Some((b / a).ln() / 2f64.ln())
                } else {
                    None
                }
            };
            if !h(1e-9).is_finite() {
                return Ok(LevyReport {
                    verdict: Verdict::Violation("integrand not finite near Q = 0".into()),
                    value: f64::INFINITY,
                    error_estimate: 0.0,
                });
            }
            if let Some(k) = slope(1e-9) {
                if k <= -1.0 + 1e-6 {
                    return Ok(LevyReport {
                        verdict: Verdict::Violation(format!(
                            "integrand ~ Q^{k:.3} at the origin; integral diverges"
                        )),
                        value: f64::INFINITY,
                        error_estimate: 0.0,
                    });
                }
            }
            if let Some(k) = slope(1e9) {
                if k >= -1.0 - 1e-6 {
                    return Ok(LevyReport {
                        verdict: Verdict::Violation(format!(
                            "integrand ~ Q^{k:.3} at infinity; integral diverges"
                        )),
                        value: f64::INFINITY,
                        error_estimate: 0.0,
                    });
                }
            }
            match specfun::integrate_radial_with(h, *tail_scale, &levy_quadrature()) {
                Ok(r) => Ok(LevyReport {
                    verdict: Verdict::Ok,
                    value: r.value,
                    error_estimate: r.error_estimate,
                }),
                Err(Error::Accuracy { best, context }) => Ok(LevyReport {
                    verdict: Verdict::Indeterminate(format!("quadrature did not converge: {context}")),
                    value: best.value,
                    error_estimate: best.error_estimate,
                }),
                Err(e) => Err(e),
            }
        }
        JumpKind::StructureFactorKernel { gas, p0 } => {
            match gas.kernel_radial_integral(p0, |q| levy_factor(q * q)) {
                Ok(r) => Ok(LevyReport {
                    verdict: Verdict::Ok,
                    value: r.value,
                    error_estimate: r.error_estimate,
                }),
                Err(Error::Accuracy { best, context }) => Ok(LevyReport {
                    verdict: Verdict::Indeterminate(context),
                    value: best.value,
                    error_estimate: best.error_estimate,
                }),
                Err(e) => Err(e),
            }
        }
    }
}

mod rows {
    use nalgebra::Matrix3;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Matrix3<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: [[f64; 3]; 3] = std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)]));
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Matrix3<f64>, D::Error> {
        let rows = <[[f64; 3]; 3]>::deserialize(d)?;
        Ok(Matrix3::from_fn(|i, j| rows[i][j]))
    }
}

/// Drift `b`, diffusion `D` and jump measure of a decoherence generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LevyTriplet {
    pub drift: Vec3,
    #[serde(with = "rows")]
    pub diffusion: Matrix3<f64>,
    pub jumps: JumpMeasure,
    #[serde(default = "default_hbar")]
    pub hbar: f64,
}

impl LevyTriplet {
    /// Builds and validates a triplet (including the Levy condition on the jumps).
    pub fn new(drift: Vec3, diffusion: Matrix3<f64>, jumps: JumpMeasure, hbar: f64) -> Result<Self> {
        let t = Self {
            drift,
            diffusion,
            jumps,
            hbar,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn gaussian(drift: Vec3, diffusion: Matrix3<f64>) -> Result<Self> {
        Self::new(drift, diffusion, JumpMeasure::none(), 1.0)
    }

    pub fn pure_jump(jumps: JumpMeasure) -> Result<Self> {
        Self::new(Vec3::zeros(), Matrix3::zeros(), jumps, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.hbar > 0.0) || !self.hbar.is_finite() {
            return Err(Error::Precondition(format!("hbar must be positive, got {}", self.hbar)));
        }
        if !self.drift.iter().all(|c| c.is_finite()) {
            return Err(Error::Precondition("drift must be finite".into()));
        }
        let d = &self.diffusion;
        if !d.iter().all(|c| c.is_finite()) {
            return Err(Error::Precondition("diffusion must be finite".into()));
        }
        let scale = d.norm().max(f64::MIN_POSITIVE);
        if (d - d.transpose()).norm() > 1e-12 * scale {
            return Err(Error::Precondition("diffusion matrix is not symmetric".into()));
        }
        let min_eig = d.symmetric_eigenvalues().min();
        if min_eig < -1e-12 * scale {
            return Err(Error::Precondition(format!(
                "diffusion matrix is not positive semi-definite (eigenvalue {min_eig})"
            )));
        }
        if let JumpKind::StructureFactorKernel { gas, .. } = &self.jumps.kind {
            if gas.hbar != self.hbar {
                return Err(Error::Precondition(format!(
                    "triplet hbar {} differs from gas hbar {}",
                    self.hbar, gas.hbar
                )));
            }
        }
        let report = validate_levy_measure(&self.jumps)?;
        match report.verdict {
            Verdict::Ok => Ok(()),
            Verdict::Violation(m) => Err(Error::Precondition(format!("Levy condition violated: {m}"))),
            Verdict::Indeterminate(m) => Err(Error::Precondition(format!("Levy condition indeterminate: {m}"))),
        }
    }
}

/// `int dQ w(Q) [exp(iQ.x/hbar) - 1 - (i/hbar) Q.x/(1 + Q^2/Q0^2)]`.
fn jump_integral(jumps: &JumpMeasure, hbar: f64, x: &Vec3) -> Result<Complex64> {
    let q0 = jumps.truncation;
    match &jumps.kind {
        JumpKind::PointMasses { masses } => {
            let mut acc = Complex64::new(0.0, 0.0);
            for pm in masses {
                let theta = pm.q.dot(x) / hbar;
                let damping = 1.0 + pm.q.norm_squared() / (q0 * q0);
                let half_sin = (0.5 * theta).sin();
                acc += pm.weight * Complex64::new(-2.0 * half_sin * half_sin, theta.sin() - theta / damping);
            }
            Ok(acc)
        }
        JumpKind::IsotropicDensity {
            density: RadialDensity::PowerLaw { amplitude, exponent },
            ..
        } if *exponent > 3.0 && *exponent < 5.0 => {
            // int_0^inf u^(2-a) (1 - sin u/u) du = -pi / (2 Gamma(a-1) cos(pi (a-2)/2)), 3 < a < 5
            let r = x.norm() / hbar;
            let mellin = -PI / (2.0 * libm::tgamma(exponent - 1.0) * (0.5 * PI * (exponent - 2.0)).cos());
            Ok(Complex64::new(-4.0 * PI * amplitude * r.powf(exponent - 3.0) * mellin, 0.0))
        }
        JumpKind::IsotropicDensity { density, tail_scale } => {
            // Angular average of exp(iQ.x) is sinc(Q|x|); the compensator is odd in Q and drops out.
            let r = x.norm() / hbar;
            let integrand = |q: f64| -4.0 * PI * q * q * density.eval(q) * one_minus_sinc(q * r);
            let res = specfun::integrate_radial_with(integrand, *tail_scale, &levy_quadrature())?;
            Ok(Complex64::new(res.value, 0.0))
        }
        JumpKind::StructureFactorKernel { gas, p0 } => gas.fourier_kernel(p0, x, Bracket::Compensated(q0)),
    }
}

/// `Psi(x)`; exactly zero at `x = 0`.
pub fn characteristic_exponent(t: &LevyTriplet, x: &Vec3) -> Result<Complex64> {
    if !x.iter().all(|c| c.is_finite()) {
        return Err(Error::Domain("position difference must be finite".into()));
    }
    if x.iter().all(|c| *c == 0.0) {
        return Ok(Complex64::new(0.0, 0.0));
    }
    let gaussian = Complex64::new(0.5 * x.dot(&(t.diffusion * x)), t.drift.dot(x) / t.hbar);
    Ok(gaussian - jump_integral(&t.jumps, t.hbar, x)?)
}

/// `Phi(time, x) = exp(-time * Psi(x))`.
pub fn characteristic_function(t: &LevyTriplet, time: f64, x: &Vec3) -> Result<Complex64> {
    if !(time >= 0.0) || !time.is_finite() {
        return Err(Error::Domain(format!("time must be >= 0, got {time}")));
    }
    if time == 0.0 {
        return Ok(Complex64::new(1.0, 0.0));
    }
    Ok((-time * characteristic_exponent(t, x)?).exp())
}

/// Whether a [`CharacteristicExponent`] remembers evaluated points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CachePolicy {
    #[default]
    None,
    /// Memoize `Psi` keyed by the exact bit pattern of `x`.
    Memoize,
}

/// `Psi` bound to a validated triplet.
#[derive(Debug)]
pub struct CharacteristicExponent {
    triplet: LevyTriplet,
    policy: CachePolicy,
    memo: Mutex<HashMap<[u64; 3], Complex64>>,
}

impl CharacteristicExponent {
    pub fn new(triplet: LevyTriplet, policy: CachePolicy) -> Result<Self> {
        triplet.validate()?;
        Ok(Self {
            triplet,
            policy,
            memo: Mutex::new(HashMap::new()),
        })
    }

    pub fn triplet(&self) -> &LevyTriplet {
        &self.triplet
    }

    pub fn eval(&self, x: &Vec3) -> Result<Complex64> {
        if self.policy == CachePolicy::None {
            return characteristic_exponent(&self.triplet, x);
        }
        let key = [x[0].to_bits(), x[1].to_bits(), x[2].to_bits()];
        if let Some(v) = self.memo.lock().expect("memo poisoned").get(&key) {
            return Ok(*v);
        }
        let v = characteristic_exponent(&self.triplet, x)?;
        self.memo.lock().expect("memo poisoned").insert(key, v);
        Ok(v)
    }

    pub fn phi(&self, time: f64, x: &Vec3) -> Result<Complex64> {
        if !(time >= 0.0) || !time.is_finite() {
            return Err(Error::Domain(format!("time must be >= 0, got {time}")));
        }
        if time == 0.0 {
            return Ok(Complex64::new(1.0, 0.0));
        }
        Ok((-time * self.eval(x)?).exp())
    }
}

/// Smallest eigenvalue of the Gram matrix `M[j][k] = phi(x_j - x_k)`.
///
/// Only the upper triangle is evaluated; the lower one is its conjugate, as
/// it must be for any characteristic function.
pub fn gram_min_eigenvalue(
    phi: impl Fn(&Vec3) -> Result<Complex64>,
    points: &[Vec3],
) -> Result<f64> {
    let n = points.len();
    if n < 2 {
        return Err(Error::Precondition("Gram check needs at least two points".into()));
    }
    let mut m = DMatrix::<Complex64>::zeros(n, n);
    for j in 0..n {
        m[(j, j)] = phi(&Vec3::zeros())?;
        for k in (j + 1)..n {
            let v = phi(&(points[j] - points[k]))?;
            m[(j, k)] = v;
            m[(k, j)] = v.conj();
        }
    }
    let eig = m.symmetric_eigenvalues();
    if eig.iter().any(|e| !e.is_finite()) {
        return Err(Error::numeric("Gram eigen-decomposition produced non-finite eigenvalues"));
    }
    Ok(eig.min())
}

/// Bochner positive-definiteness check of `Phi(time, .)` on `points`.
pub fn bochner_check(t: &LevyTriplet, time: f64, points: &[Vec3]) -> Result<f64> {
    gram_min_eigenvalue(|x| characteristic_function(t, time, x), points)
}
