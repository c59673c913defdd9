//! Jump unraveling of the linear Boltzmann dynamics for superpositions of a
//! few momentum eigenstates.
//!
//! A state `sum_i alpha_i |P_i>` stays a superposition of momentum eigenstates:
//! between jumps the weights drift as `|alpha_i|^2 ~ exp(-Lambda(P_i) t)`, and at a
//! jump every branch is kicked by the same transfer `Q` while the amplitudes are
//! reweighted by `sqrt(S(Q, P_i))`. Waiting times are drawn from the exact
//! survival law `Z(t) = sum_i |alpha_i|^2 exp(-Lambda(P_i) t)`.

use std::io::Write;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qlbe::{self, GasModel};
use crate::specfun::erf;
use crate::Vec3;

/// Random source of one trajectory.
pub type TrajectoryRng = ChaCha8Rng;

/// Trajectories per reduction chunk; fixed so that results do not depend on threading.
const CHUNK: usize = 256;

/// Generator of the jump process: rates, transfer statistics and kinematics.
pub trait JumpKernel: Sync {
    fn total_rate(&self, p: &Vec3) -> Result<f64>;
    /// Log of the (unnormalized) transfer density at `Q` for a branch at `P`,
    /// up to terms that do not depend on `P`.
    fn log_weight(&self, q: &Vec3, p: &Vec3) -> Result<f64>;
    fn sample_transfer(&self, p: &Vec3, rng: &mut TrajectoryRng) -> Result<Vec3>;
    fn kinetic_energy(&self, p: &Vec3) -> f64;
}

impl JumpKernel for GasModel {
    fn total_rate(&self, p: &Vec3) -> Result<f64> {
        qlbe::total_rate(self, p)
    }

    fn log_weight(&self, q: &Vec3, p: &Vec3) -> Result<f64> {
        // sigma(|Q|) is common to all branches and cancels on normalization
        qlbe::log_structure_factor(self, q, p)
    }

    fn sample_transfer(&self, p: &Vec3, rng: &mut TrajectoryRng) -> Result<Vec3> {
        qlbe::sample_transfer(self, p, rng)
    }

    fn kinetic_energy(&self, p: &Vec3) -> f64 {
        GasModel::kinetic_energy(self, p)
    }
}

/// Momentum-independent jump process: rate `rate`, every jump adds `transfer`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantRateKernel {
    pub rate: f64,
    pub transfer: Vec3,
    pub mass: f64,
}

impl JumpKernel for ConstantRateKernel {
    fn total_rate(&self, _p: &Vec3) -> Result<f64> {
        Ok(self.rate)
    }

    fn log_weight(&self, _q: &Vec3, _p: &Vec3) -> Result<f64> {
        Ok(0.0)
    }

    fn sample_transfer(&self, _p: &Vec3, _rng: &mut TrajectoryRng) -> Result<Vec3> {
        Ok(self.transfer)
    }

    fn kinetic_energy(&self, p: &Vec3) -> f64 {
        p.norm_squared() / (2.0 * self.mass)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub amplitude: Complex64,
    pub momentum: Vec3,
}

/// `sum_i alpha_i |P_i>` with `sum_i |alpha_i|^2 = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Branch>", into = "Vec<Branch>")]
pub struct MomentumSuperposition {
    branches: Vec<Branch>,
}

impl TryFrom<Vec<Branch>> for MomentumSuperposition {
    type Error = Error;

    fn try_from(branches: Vec<Branch>) -> Result<Self> {
        Self::new(branches)
    }
}

impl From<MomentumSuperposition> for Vec<Branch> {
    fn from(s: MomentumSuperposition) -> Self {
        s.branches
    }
}

impl MomentumSuperposition {
    /// Branch momenta may coincide; such a state carries no decoherence.
    pub fn new(branches: Vec<Branch>) -> Result<Self> {
        if branches.is_empty() {
            return Err(Error::Precondition("superposition needs at least one branch".into()));
        }
        for b in &branches {
            if !b.amplitude.re.is_finite() || !b.amplitude.im.is_finite() || !b.momentum.iter().all(|c| c.is_finite()) {
                return Err(Error::Precondition("branch amplitude and momentum must be finite".into()));
            }
        }
        let norm: f64 = branches.iter().map(|b| b.amplitude.norm_sqr()).sum();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::Precondition(format!("amplitudes must be normalized (sum |alpha|^2 = {norm})")));
        }
        Ok(Self { branches })
    }

    pub fn eigenstate(p: Vec3) -> Self {
        Self {
            branches: vec![Branch {
                amplitude: Complex64::new(1.0, 0.0),
                momentum: p,
            }],
        }
    }

    /// Equal-weight superposition of two momenta.
    pub fn symmetric(p1: Vec3, p2: Vec3) -> Self {
        let a = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        Self {
            branches: vec![
                Branch { amplitude: a, momentum: p1 },
                Branch { amplitude: a, momentum: p2 },
            ],
        }
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn norm_sqr(&self) -> f64 {
        self.branches.iter().map(|b| b.amplitude.norm_sqr()).sum()
    }

    /// `|alpha_1 alpha_2^*|`, or `None` for a single branch.
    pub fn coherence(&self) -> Option<f64> {
        match self.branches.as_slice() {
            [a, b, ..] => Some(a.amplitude.norm() * b.amplitude.norm()),
            _ => None,
        }
    }

    pub fn mean_momentum(&self) -> Vec3 {
        self.branches
            .iter()
            .fold(Vec3::zeros(), |acc, b| acc + b.momentum * b.amplitude.norm_sqr())
    }

    pub fn mean_energy<K: JumpKernel + ?Sized>(&self, kernel: &K) -> f64 {
        self.branches
            .iter()
            .map(|b| b.amplitude.norm_sqr() * kernel.kinetic_energy(&b.momentum))
            .sum()
    }
}

/// Sampled states and jump log of one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub snapshots: Vec<MomentumSuperposition>,
    pub jumps: Vec<(f64, Vec3)>,
}

/// Per-trajectory random source for `(master_seed, index)`.
pub fn trajectory_rng(master_seed: u64, index: u64) -> TrajectoryRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Working state: log-weights `ln |alpha_i|^2`, phases and momenta.
struct State {
    log_w: Vec<f64>,
    phase: Vec<Complex64>,
    momenta: Vec<Vec3>,
}

impl State {
    fn from(psi: &MomentumSuperposition) -> Self {
        Self {
            log_w: psi.branches.iter().map(|b| b.amplitude.norm_sqr().ln()).collect(),
            phase: psi
                .branches
                .iter()
                .map(|b| {
                    let n = b.amplitude.norm();
                    if n > 0.0 {
                        b.amplitude / n
                    } else {
                        Complex64::new(1.0, 0.0)
                    }
                })
                .collect(),
            momenta: psi.branches.iter().map(|b| b.momentum).collect(),
        }
    }

    fn drifted(&self, rates: &[f64], tau: f64) -> Vec<f64> {
        let raw: Vec<f64> = self.log_w.iter().zip(rates).map(|(l, r)| l - r * tau).collect();
        let z = log_sum_exp(&raw);
        raw.iter().map(|l| l - z).collect()
    }

    fn snapshot(&self, log_w: &[f64], single: Option<Complex64>) -> MomentumSuperposition {
        let branches = match single {
            Some(a) => vec![Branch { amplitude: a, momentum: self.momenta[0] }],
            None => log_w
                .iter()
                .zip(&self.phase)
                .zip(&self.momenta)
                .map(|((l, ph), p)| Branch {
                    amplitude: ph * (0.5 * l).exp(),
                    momentum: *p,
                })
                .collect(),
        };
        MomentumSuperposition { branches }
    }
}

/// Time to the next jump: solves `-ln Z(tau) = target` with
/// `Z(tau) = sum_i w_i exp(-rate_i tau)`. Returns infinity if no jump ever occurs.
fn waiting_time(log_w: &[f64], rates: &[f64], target: f64) -> f64 {
    let live: Vec<(f64, f64)> = log_w
        .iter()
        .zip(rates)
        .filter(|(l, _)| **l > f64::NEG_INFINITY)
        .map(|(l, r)| (*l, *r))
        .collect();
    let first = live[0].1;
    if live.iter().all(|(_, r)| *r == first) {
        return if first > 0.0 { target / first } else { f64::INFINITY };
    }
    // Z decays to the weight of zero-rate branches, if any.
    let floor: Vec<f64> = live.iter().filter(|(_, r)| *r == 0.0).map(|(l, _)| *l).collect();
    if !floor.is_empty() && -log_sum_exp(&floor) <= target {
        return f64::INFINITY;
    }
    // -ln Z is increasing and concave, so Newton from tau = 0 approaches the root from below.
    let mut tau = 0.0;
    let mut buf = vec![0.0; live.len()];
    for _ in 0..200 {
        for (b, (l, r)) in buf.iter_mut().zip(&live) {
            *b = l - r * tau;
        }
        let ln_z = log_sum_exp(&buf);
        let f = -ln_z - target;
        let slope: f64 = live.iter().zip(&buf).map(|((_, r), b)| r * (b - ln_z).exp()).sum();
        let step = -f / slope;
        if !step.is_finite() {
            break;
        }
        tau += step;
        if step.abs() <= 1e-13 * tau.max(f64::MIN_POSITIVE) {
            break;
        }
    }
    tau
}

/// Simulates one trajectory on stream 0 of `seed` (the stream used by
/// ensemble index 0).
pub fn simulate_trajectory<K: JumpKernel + ?Sized>(
    kernel: &K,
    psi0: &MomentumSuperposition,
    t_final: f64,
    sample_times: &[f64],
    seed: u64,
) -> Result<TrajectoryRecord> {
    simulate_with_rng(kernel, psi0, t_final, sample_times, &mut trajectory_rng(seed, 0))
}

fn check_times(t_final: f64, sample_times: &[f64]) -> Result<()> {
    if !(t_final > 0.0) || !t_final.is_finite() {
        return Err(Error::Precondition(format!("t_final must be positive, got {t_final}")));
    }
    if sample_times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Precondition("sample times must be strictly increasing".into()));
    }
    if sample_times.iter().any(|t| !(*t >= 0.0 && *t <= t_final)) {
        return Err(Error::Precondition("sample times must lie in [0, t_final]".into()));
    }
    Ok(())
}

/// Simulates one trajectory with an explicit random source.
pub fn simulate_with_rng<K: JumpKernel + ?Sized>(
    kernel: &K,
    psi0: &MomentumSuperposition,
    t_final: f64,
    sample_times: &[f64],
    rng: &mut TrajectoryRng,
) -> Result<TrajectoryRecord> {
    check_times(t_final, sample_times)?;
    MomentumSuperposition::new(psi0.branches.clone())?;
    let single = if psi0.branches.len() == 1 { Some(psi0.branches[0].amplitude) } else { None };
    let mut state = State::from(psi0);
    let mut record = TrajectoryRecord {
        times: Vec::with_capacity(sample_times.len()),
        snapshots: Vec::with_capacity(sample_times.len()),
        jumps: Vec::new(),
    };
    let mut next_sample = 0;
    let mut t = 0.0;
    let mut rates = vec![0.0; state.momenta.len()];
    let numeric = |message: String, jumps: &[(f64, Vec3)]| Error::Numeric {
        message,
        jump_log: jumps.iter().map(|(t, q)| (*t, [q.x, q.y, q.z])).collect(),
    };

    loop {
        for (r, p) in rates.iter_mut().zip(&state.momenta) {
            *r = kernel.total_rate(p)?;
        }
        let mean_rate: f64 = state.log_w.iter().zip(&rates).map(|(l, r)| l.exp() * r).sum();
        if !mean_rate.is_finite() {
            return Err(numeric(format!("non-finite total rate at t = {t}"), &record.jumps));
        }
        if mean_rate < f64::MIN_POSITIVE {
            return Err(Error::Stall {
                time: t,
                diagnostic: format!("state-averaged rate {mean_rate:e} with branch rates {rates:?}"),
            });
        }
        let target = -(1.0 - rng.gen::<f64>()).ln();
        let tau = waiting_time(&state.log_w, &rates, target);
        let t_jump = t + tau;

        while next_sample < sample_times.len() && sample_times[next_sample] <= t_jump.min(t_final) {
            let ts = sample_times[next_sample];
            let lw = state.drifted(&rates, ts - t);
            record.times.push(ts);
            record.snapshots.push(state.snapshot(&lw, single));
            next_sample += 1;
        }
        if t_jump > t_final {
            break;
        }

        let lw = state.drifted(&rates, tau);
        let branch = if lw.len() == 1 {
            0
        } else {
            let weights: Vec<f64> = lw.iter().zip(&rates).map(|(l, r)| l.exp() * r).collect();
            let total: f64 = weights.iter().sum();
            let mut u = rng.gen::<f64>() * total;
            let mut chosen = weights.len() - 1;
            for (i, w) in weights.iter().enumerate() {
                if u < *w {
                    chosen = i;
                    break;
                }
                u -= w;
            }
            chosen
        };
        let q = kernel.sample_transfer(&state.momenta[branch], rng)?;
        if !q.iter().all(|c| c.is_finite()) {
            return Err(numeric(format!("non-finite transfer at t = {t_jump}"), &record.jumps));
        }
        if lw.len() > 1 {
            let mut raw = Vec::with_capacity(lw.len());
            for (l, p) in lw.iter().zip(&state.momenta) {
                raw.push(if *l == f64::NEG_INFINITY { *l } else { l + kernel.log_weight(&q, p)? });
            }
            let z = log_sum_exp(&raw);
            if !z.is_finite() {
                record.jumps.push((t_jump, q));
                return Err(numeric(format!("amplitudes lost normalization at t = {t_jump}"), &record.jumps));
            }
            state.log_w = raw.iter().map(|l| l - z).collect();
        }
        for p in state.momenta.iter_mut() {
            *p += q;
        }
        record.jumps.push((t_jump, q));
        t = t_jump;
    }
    Ok(record)
}

/// Mean and standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    /// Zero when fewer than two trajectories contribute.
    pub stderr: f64,
}

/// Ensemble averages at the sample times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub times: Vec<f64>,
    /// `E[|alpha_1 alpha_2^*| / |alpha_1(0) alpha_2^*(0)|]`, absent for single-branch states.
    pub coherence: Option<Vec<Estimate>>,
    pub mean_energy: Vec<Estimate>,
    pub mean_momentum: Vec<[Estimate; 3]>,
    pub n_trajectories: usize,
    pub n_failed: usize,
    pub master_seed: u64,
}

/// Streaming mean/variance for a fixed number of observables.
#[derive(Clone)]
struct Moments {
    n: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Moments {
    fn new(k: usize) -> Self {
        Self {
            n: 0,
            mean: vec![0.0; k],
            m2: vec![0.0; k],
        }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let d = v - *m;
            *m += d / n;
            *s += d * (v - *m);
        }
    }

    fn merge(&mut self, other: &Moments) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = other.clone();
            return;
        }
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        for i in 0..self.mean.len() {
            let d = other.mean[i] - self.mean[i];
            self.mean[i] += d * nb / n;
            self.m2[i] += other.m2[i] + d * d * na * nb / n;
        }
        self.n += other.n;
    }

    fn estimate(&self, i: usize) -> Estimate {
        let stderr = if self.n > 1 {
            (self.m2[i] / (self.n - 1) as f64 / self.n as f64).sqrt()
        } else {
            0.0
        };
        Estimate {
            mean: self.mean[i],
            stderr,
        }
    }
}

/// Runs `n` trajectories (index `i` on stream `i` of `master_seed`) and maps each
/// record through `f`. Output order is the trajectory index order.
pub fn ensemble_map<K, T, F>(
    kernel: &K,
    psi0: &MomentumSuperposition,
    t_final: f64,
    sample_times: &[f64],
    n: usize,
    master_seed: u64,
    f: F,
) -> Vec<Result<T>>
where
    K: JumpKernel + ?Sized,
    T: Send,
    F: Fn(TrajectoryRecord) -> T + Sync,
{
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = trajectory_rng(master_seed, i as u64);
            simulate_with_rng(kernel, psi0, t_final, sample_times, &mut rng).map(&f)
        })
        .collect()
}

/// Averages `n` independent trajectories.
///
/// Trajectories are reduced in fixed chunks merged in index order, so the result is
/// bit-identical for any number of worker threads. Failed trajectories are
/// excluded; more than 1% failures is an error.
pub fn run_ensemble<K: JumpKernel + ?Sized>(
    kernel: &K,
    psi0: &MomentumSuperposition,
    t_final: f64,
    sample_times: &[f64],
    n: usize,
    master_seed: u64,
) -> Result<EnsembleStats> {
    if n == 0 {
        return Err(Error::Precondition("ensemble needs at least one trajectory".into()));
    }
    check_times(t_final, sample_times)?;
    MomentumSuperposition::new(psi0.branches.clone())?;
    let c0 = psi0.coherence().filter(|c| *c > 0.0);
    let nt = sample_times.len();
    // observables per sample time: [C?], E, Px, Py, Pz
    let offset = usize::from(c0.is_some());
    let width = offset + 4;

    let chunks: Vec<(Moments, usize, Option<(usize, String)>)> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = Moments::new(width * nt);
            let mut failed = 0;
            let mut first = None;
            let mut row = vec![0.0; width * nt];
            for i in (c * CHUNK)..((c + 1) * CHUNK).min(n) {
                let mut rng = trajectory_rng(master_seed, i as u64);
                match simulate_with_rng(kernel, psi0, t_final, sample_times, &mut rng) {
                    Ok(rec) => {
                        for (k, s) in rec.snapshots.iter().enumerate() {
                            let base = k * width;
                            if let Some(c0) = c0 {
                                row[base] = s.coherence().unwrap_or(0.0) / c0;
                            }
                            row[base + offset] = s.mean_energy(kernel);
                            let p = s.mean_momentum();
                            row[base + offset + 1] = p.x;
                            row[base + offset + 2] = p.y;
                            row[base + offset + 3] = p.z;
                        }
                        acc.push(&row);
                    }
                    Err(e) => {
                        failed += 1;
                        first.get_or_insert((i, e.to_string()));
                    }
                }
            }
            (acc, failed, first)
        })
        .collect();

    let mut total = Moments::new(width * nt);
    let mut n_failed = 0;
    let mut first_failure = None;
    for (m, f, first) in &chunks {
        total.merge(m);
        n_failed += f;
        if first_failure.is_none() {
            first_failure = first.clone();
        }
    }
    if n_failed as f64 > 0.01 * n as f64 || total.n == 0 {
        return Err(Error::Ensemble {
            failures: n_failed,
            n,
            first: first_failure.map(|(i, m)| format!("trajectory {i}: {m}")).unwrap_or_default(),
        });
    }
    let at = |k: usize, j: usize| total.estimate(k * width + j);
    Ok(EnsembleStats {
        times: sample_times.to_vec(),
        coherence: c0.map(|_| (0..nt).map(|k| at(k, 0)).collect()),
        mean_energy: (0..nt).map(|k| at(k, offset)).collect(),
        mean_momentum: (0..nt)
            .map(|k| [at(k, offset + 1), at(k, offset + 2), at(k, offset + 3)])
            .collect(),
        n_trajectories: n,
        n_failed,
        master_seed,
    })
}

impl EnsembleStats {
    /// CSV `time,C_hat,C_stderr,meanE,E_stderr`; the C columns are empty for single-branch runs.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        use crate::cli::{csv_error, csv_writer, fmt_f64};
        let mut w = csv_writer(out);
        w.write_record(["time", "C_hat", "C_stderr", "meanE", "E_stderr"]).map_err(csv_error)?;
        for (k, t) in self.times.iter().enumerate() {
            let (c, cs) = match &self.coherence {
                Some(c) => (fmt_f64(c[k].mean), fmt_f64(c[k].stderr)),
                None => (String::new(), String::new()),
            };
            let e = self.mean_energy[k];
            w.write_record([fmt_f64(*t), c, cs, fmt_f64(e.mean), fmt_f64(e.stderr)]).map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Decay rate of the coherence between momenta `P1` and `P2`,
/// `gamma = Lambda(P) - Lambda0 erf(x)/x`, with `P = |P1 - P2|/2` and `x = P/(M v_mp)`.
///
/// The per-trajectory product `|alpha_1 alpha_2^*|` decays on average at
/// `(Lambda(P1) + Lambda(P2))/2 - (n_gas/m*^2) int sigma sqrt(S(Q,P1) S(Q,P2))`,
/// which for constant `sigma` and `m << M` reduces to the expression above at half
/// the separation. Constant cross-sections only.
pub fn analytic_decay_rate(g: &GasModel, p1: &Vec3, p2: &Vec3) -> Result<f64> {
    if !g.sigma.is_constant() {
        return Err(Error::Unsupported(
            "the closed-form decay rate assumes a constant cross-section".into(),
        ));
    }
    if p1 == p2 {
        return Ok(0.0);
    }
    let half = 0.5 * (p1 - p2).norm();
    let scales = g.scales();
    let x = half / (g.test_mass * scales.v_mp);
    let rate = qlbe::total_rate(g, &Vec3::new(0.0, 0.0, half))?;
    let gamma = rate - scales.lambda0 * erf(x)? / x;
    Ok(gamma.max(0.0))
}

/// Least-squares rate `gamma` of `values ~ exp(-gamma t)` (fit of `ln values` through the origin).
/// Non-positive values are skipped.
pub fn fit_decay_rate(times: &[f64], values: &[f64]) -> Result<f64> {
    if times.len() != values.len() {
        return Err(Error::Precondition("times and values differ in length".into()));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (t, v) in times.iter().zip(values) {
        if *v > 0.0 && *t > 0.0 {
            num += t * v.ln();
            den += t * t;
        }
    }
    if den == 0.0 {
        return Err(Error::Precondition("no usable points for a decay fit".into()));
    }
    Ok(-num / den)
}
