//! Position-representation density matrices on a one-dimensional section and
//! their evolution under a pure-decoherence semigroup.

use std::collections::HashMap;
use std::io::{Read, Write};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::levy::{characteristic_function, LevyTriplet};
use crate::Vec3;

/// `rho[j][k] = <X_j|rho|X_k>` with `X_j = axis[j] * direction`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoherenceGrid {
    axis: Vec<f64>,
    matrix: DMatrix<Complex64>,
}

#[derive(Serialize, Deserialize)]
struct GridDocument {
    axis: Vec<f64>,
    re: Vec<Vec<f64>>,
    im: Vec<Vec<f64>>,
}

impl CoherenceGrid {
    pub fn new(axis: Vec<f64>, matrix: DMatrix<Complex64>) -> Result<Self> {
        let g = Self { axis, matrix };
        g.validate()?;
        Ok(g)
    }

    /// `1/2 (|a> + |b>)(<a| + <b|)` on the two-point axis `{a, b}`.
    pub fn cat_state(a: f64, b: f64) -> Result<Self> {
        Self::new(vec![a, b], DMatrix::from_element(2, 2, Complex64::new(0.5, 0.0)))
    }

    /// Pure state `|psi><psi|` sampled on `axis`.
    pub fn from_wavefunction(axis: Vec<f64>, psi: &[Complex64]) -> Result<Self> {
        if psi.len() != axis.len() {
            return Err(Error::Precondition(format!(
                "wavefunction has {} samples for {} grid points",
                psi.len(),
                axis.len()
            )));
        }
        let n = psi.len();
        let m = DMatrix::from_fn(n, n, |j, k| psi[j] * psi[k].conj());
        Self::new(axis, m)
    }

    /// Classical mixture with the given (non-negative) populations.
    pub fn diagonal(axis: Vec<f64>, populations: &[f64]) -> Result<Self> {
        if populations.len() != axis.len() {
            return Err(Error::Precondition("population count differs from grid size".into()));
        }
        let n = axis.len();
        let mut m = DMatrix::zeros(n, n);
        for (i, p) in populations.iter().enumerate() {
            m[(i, i)] = Complex64::new(*p, 0.0);
        }
        Self::new(axis, m)
    }

    pub fn axis(&self) -> &[f64] {
        &self.axis
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    pub fn len(&self) -> usize {
        self.axis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.axis.is_empty()
    }

    /// Whether the axis spacing is uniform to 1e-12 relative.
    pub fn is_uniform(&self) -> bool {
        if self.axis.len() < 3 {
            return true;
        }
        let h = self.axis[1] - self.axis[0];
        self.axis
            .windows(2)
            .all(|w| ((w[1] - w[0]) - h).abs() <= 1e-12 * h.abs().max(f64::MIN_POSITIVE))
    }

    /// Sum of the diagonal times the grid spacing (spacing 1 for a single point).
    pub fn trace(&self) -> f64 {
        let n = self.axis.len();
        let weight = if n > 1 {
            (self.axis[n - 1] - self.axis[0]).abs() / (n - 1) as f64
        } else {
            1.0
        };
        (0..n).map(|i| self.matrix[(i, i)].re).sum::<f64>() * weight
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.matrix.clone().symmetric_eigenvalues().min()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.axis.len();
        if n == 0 {
            return Err(Error::Precondition("coherence grid is empty".into()));
        }
        if self.matrix.nrows() != n || self.matrix.ncols() != n {
            return Err(Error::Precondition(format!(
                "matrix is {}x{} but axis has {n} points",
                self.matrix.nrows(),
                self.matrix.ncols()
            )));
        }
        if self.axis.iter().any(|x| !x.is_finite()) || self.matrix.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Precondition("grid contains non-finite values".into()));
        }
        if self.axis.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Precondition("axis must be strictly increasing".into()));
        }
        for j in 0..n {
            for k in j..n {
                if (self.matrix[(j, k)] - self.matrix[(k, j)].conj()).norm() > 1e-12 {
                    return Err(Error::Precondition(format!("matrix is not Hermitian at ({j}, {k})")));
                }
            }
        }
        let min = self.min_eigenvalue();
        if min < -(n as f64) * 1e-10 {
            return Err(Error::Precondition(format!("matrix is not positive semi-definite (eigenvalue {min})")));
        }
        if !(self.trace() > 0.0) {
            return Err(Error::Precondition("trace must be positive".into()));
        }
        Ok(())
    }

    /// CSV with header `row,col,re,im`, one line per entry.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(out);
        w.write_record(["row", "col", "re", "im"]).map_err(csv_err)?;
        let n = self.len();
        for j in 0..n {
            for k in 0..n {
                let z = self.matrix[(j, k)];
                w.write_record(&[j.to_string(), k.to_string(), format!("{:.16e}", z.re), format!("{:.16e}", z.im)])
                    .map_err(csv_err)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the format of [`Self::write_csv`]; the axis is supplied separately.
    pub fn read_csv<R: Read>(input: R, axis: Vec<f64>) -> Result<Self> {
        let n = axis.len();
        let mut m = DMatrix::zeros(n, n);
        let mut seen = vec![false; n * n];
        let mut r = csv::Reader::from_reader(input);
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            let field = |i: usize| rec.get(i).ok_or_else(|| Error::config(format!("line {}", line + 2), "missing column"));
            let parse_idx = |s: &str| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|e| Error::config(format!("line {}", line + 2), e.to_string()))
            };
            let parse_val = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::config(format!("line {}", line + 2), e.to_string()))
            };
            let (j, k) = (parse_idx(field(0)?)?, parse_idx(field(1)?)?);
            if j >= n || k >= n {
                return Err(Error::Precondition(format!("entry ({j}, {k}) outside a {n}-point grid")));
            }
            m[(j, k)] = Complex64::new(parse_val(field(2)?)?, parse_val(field(3)?)?);
            seen[j * n + k] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Precondition("CSV does not cover every matrix entry".into()));
        }
        Self::new(axis, m)
    }

    pub fn to_json(&self) -> Result<String> {
        let n = self.len();
        let doc = GridDocument {
            axis: self.axis.clone(),
            re: (0..n).map(|j| (0..n).map(|k| self.matrix[(j, k)].re).collect()).collect(),
            im: (0..n).map(|j| (0..n).map(|k| self.matrix[(j, k)].im).collect()).collect(),
        };
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: GridDocument = serde_json::from_str(s)?;
        let n = doc.axis.len();
        if doc.re.len() != n || doc.im.len() != n || doc.re.iter().chain(doc.im.iter()).any(|r| r.len() != n) {
            return Err(Error::Precondition("JSON grid matrix does not match axis length".into()));
        }
        let m = DMatrix::from_fn(n, n, |j, k| Complex64::new(doc.re[j][k], doc.im[j][k]));
        Self::new(doc.axis, m)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}

fn check_direction(direction: &Vec3) -> Result<()> {
    if !((direction.norm() - 1.0).abs() <= 1e-12) {
        return Err(Error::Precondition(format!(
            "direction must be a unit vector (norm {})",
            direction.norm()
        )));
    }
    Ok(())
}

/// Multiplies every coherence by `Phi(time, (X_j - X_k) direction)`.
///
/// Each distinct separation is evaluated once; the lower triangle is the
/// conjugate of the upper one and the diagonal is left untouched.
pub fn evolve(rho0: &CoherenceGrid, t: &LevyTriplet, time: f64, direction: &Vec3) -> Result<CoherenceGrid> {
    check_direction(direction)?;
    t.validate()?;
    if !(time >= 0.0) || !time.is_finite() {
        return Err(Error::Domain(format!("time must be >= 0, got {time}")));
    }
    let n = rho0.len();
    let mut out = rho0.matrix.clone();
    if time == 0.0 {
        return Ok(rho0.clone());
    }
    let mut cache: HashMap<u64, Complex64> = HashMap::new();
    for j in 0..n {
        for k in (j + 1)..n {
            let d = rho0.axis[j] - rho0.axis[k];
            let phi = match cache.get(&d.to_bits()) {
                Some(v) => *v,
                None => {
                    let v = characteristic_function(t, time, &(direction * d))?;
                    cache.insert(d.to_bits(), v);
                    v
                }
            };
            let v = rho0.matrix[(j, k)] * phi;
            out[(j, k)] = v;
            out[(k, j)] = v.conj();
        }
    }
    Ok(CoherenceGrid {
        axis: rho0.axis.clone(),
        matrix: out,
    })
}

/// Interference visibility `|Phi(time, separation * direction)|`.
pub fn visibility(t: &LevyTriplet, time: f64, separation: f64, direction: &Vec3) -> Result<f64> {
    check_direction(direction)?;
    Ok(characteristic_function(t, time, &(direction * separation))?.norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy::{JumpMeasure, PointMass};
    use nalgebra::Matrix3;

    fn gaussian(d: f64) -> LevyTriplet {
        LevyTriplet::gaussian(Vec3::zeros(), Matrix3::identity() * (2.0 * d)).unwrap()
    }

    fn gaussian_packet(n: usize) -> CoherenceGrid {
        let axis: Vec<f64> = (0..n).map(|i| -2.0 + 4.0 * i as f64 / (n - 1) as f64).collect();
        let psi: Vec<Complex64> = axis
            .iter()
            .map(|x| Complex64::from_polar((-(x - 0.3) * (x - 0.3)).exp(), 1.7 * x))
            .collect();
        CoherenceGrid::from_wavefunction(axis, &psi).unwrap()
    }

    #[test]
    fn zero_time_is_identity() {
        let g = gaussian_packet(12);
        let out = evolve(&g, &gaussian(0.4), 0.0, &Vec3::x()).unwrap();
        assert_eq!(out, g);
    }

    #[test]
    fn diagonal_state_unchanged() {
        let g = CoherenceGrid::diagonal(vec![0.0, 1.0, 2.0], &[0.2, 0.5, 0.3]).unwrap();
        let out = evolve(&g, &gaussian(3.0), 5.0, &Vec3::z()).unwrap();
        assert_eq!(out, g);
    }

    #[test]
    fn cat_state_closed_form() {
        let (a, b, d, time) = (-0.4, 1.1, 0.3, 2.0);
        let g = CoherenceGrid::cat_state(a, b).unwrap();
        let out = evolve(&g, &gaussian(d), time, &Vec3::y()).unwrap();
        let off = 0.5 * (-time * d * (a - b) * (a - b)).exp();
        assert!((out.matrix()[(0, 1)] - Complex64::new(off, 0.0)).norm() < 1e-15);
        assert_eq!(out.matrix()[(0, 0)], Complex64::new(0.5, 0.0));
        assert_eq!(out.matrix()[(1, 1)], Complex64::new(0.5, 0.0));
    }

    #[test]
    fn composition_and_positivity() {
        let t = LevyTriplet::new(
            Vec3::new(0.3, 0.0, 0.0),
            Matrix3::identity() * 0.2,
            JumpMeasure::point_masses(vec![PointMass { weight: 0.8, q: Vec3::new(1.5, 0.0, 0.0) }]),
            1.0,
        )
        .unwrap();
        let g = gaussian_packet(16);
        let once = evolve(&evolve(&g, &t, 0.7, &Vec3::x()).unwrap(), &t, 1.1, &Vec3::x()).unwrap();
        let direct = evolve(&g, &t, 1.8, &Vec3::x()).unwrap();
        for (a, b) in once.matrix().iter().zip(direct.matrix().iter()) {
            assert!((a - b).norm() < 1e-12);
        }
        assert!(direct.min_eigenvalue() >= -16.0 * 1e-10);
        for i in 0..16 {
            assert_eq!(direct.matrix()[(i, i)], g.matrix()[(i, i)]);
        }
    }

    #[test]
    fn visibility_examples() {
        let d = 0.25;
        assert_eq!(visibility(&gaussian(d), 1.3, 0.0, &Vec3::x()).unwrap(), 1.0);
        let mut last = 1.0;
        for i in 1..20 {
            let s = 0.2 * i as f64;
            let v = visibility(&gaussian(d), 1.3, s, &Vec3::x()).unwrap();
            assert!((v - (-1.3 * d * s * s).exp()).abs() < 1e-15);
            assert!(v < last);
            last = v;
        }
        let (l2, q, tau) = (0.6, 2.0, 1.5);
        let t = LevyTriplet::pure_jump(JumpMeasure::point_masses(vec![PointMass { weight: l2, q: Vec3::new(q, 0.0, 0.0) }])).unwrap();
        for i in 0..50 {
            let s = 0.1 * i as f64;
            let v = visibility(&t, tau, s, &Vec3::x()).unwrap();
            assert!((v - (-tau * l2 * (1.0 - (q * s).cos())).exp()).abs() < 1e-12);
            assert!(v >= (-2.0 * tau * l2).exp() - 1e-15);
        }
    }

    #[test]
    fn bad_inputs() {
        let g = gaussian_packet(4);
        assert!(evolve(&g, &gaussian(1.0), 1.0, &Vec3::new(1.0, 1.0, 0.0)).is_err());
        assert!(CoherenceGrid::new(vec![0.0, 1.0], DMatrix::identity(3, 3)).is_err());
        let mut m = DMatrix::from_element(2, 2, Complex64::new(0.5, 0.0));
        m[(0, 1)] = Complex64::new(0.5, 0.1);
        assert!(CoherenceGrid::new(vec![0.0, 1.0], m).is_err());
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0].map(|x| Complex64::new(x, 0.0)));
        assert!(CoherenceGrid::new(vec![0.0, 1.0], m).is_err());
    }

    #[test]
    fn uniformity_flag() {
        assert!(gaussian_packet(8).is_uniform());
        let g = CoherenceGrid::diagonal(vec![0.0, 1.0, 3.0], &[1.0, 1.0, 1.0]).unwrap();
        assert!(!g.is_uniform());
    }

    #[test]
    fn csv_and_json_round_trip() {
        let g = gaussian_packet(5);
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("row,col,re,im\r\n"));
        let back = CoherenceGrid::read_csv(buf.as_slice(), g.axis().to_vec()).unwrap();
        assert_eq!(back, g);
        let json = g.to_json().unwrap();
        assert_eq!(CoherenceGrid::from_json(&json).unwrap(), g);
    }
}
