//! Batch front-end: JSON experiment configurations in, CSV results and a JSON
//! run manifest out.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::Parser;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::coherence::{evolve, CoherenceGrid};
use crate::error::{Error, Result};
use crate::levy::{characteristic_function, LevyTriplet};
use crate::posdec::{write_decay_curve, write_phi_s_curve, RecoillessModel};
use crate::qlbe::{total_rate, DerivedScales, GasModel};
use crate::unravel::{run_ensemble, MomentumSuperposition};
use crate::Vec3;

pub(crate) fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub(crate) fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(out)
}

pub(crate) fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// `Phi(time, x direction)` over a sweep of `x`.
    LevyCf,
    /// Evolves a coherence grid to `time`.
    Evolve,
    /// `Lambda(P)/Lambda0` over a sweep of `s = |P|/(M v_mp)`.
    QlbeRate,
    /// Ensemble statistics of the jump unraveling at the sweep times.
    Unravel,
    /// Recoilless `Phi_S` (sweep `x_over_lambda_th`) or `|D|` (sweep `t`).
    Posdec,
}

/// `count` equally spaced values of `variable` from `start` to `stop`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub variable: String,
    pub start: f64,
    pub stop: f64,
    pub count: usize,
}

impl Sweep {
    pub fn values(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.start];
        }
        let step = (self.stop - self.start) / (self.count - 1) as f64;
        (0..self.count)
            .map(|i| if i + 1 == self.count { self.stop } else { self.start + step * i as f64 })
            .collect()
    }
}

/// Initial coherence grid for `evolve` mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GridSpec {
    /// `psi(x) ~ exp(-(x - center)^2 / (2 width^2) + i wavenumber x)` on a uniform axis.
    GaussianPacket {
        start: f64,
        stop: f64,
        count: usize,
        center: f64,
        width: f64,
        #[serde(default)]
        wavenumber: f64,
    },
    /// Equal superposition of the two positions `a` and `b`.
    Cat { a: f64, b: f64 },
}

impl GridSpec {
    fn build(&self) -> Result<CoherenceGrid> {
        match self {
            Self::GaussianPacket {
                start,
                stop,
                count,
                center,
                width,
                wavenumber,
            } => {
                if *count < 2 || !(stop > start) || !(*width > 0.0) {
                    return Err(Error::config("grid", "needs count >= 2, stop > start and width > 0"));
                }
                let axis = Sweep {
                    variable: "x".into(),
                    start: *start,
                    stop: *stop,
                    count: *count,
                }
                .values();
                let raw: Vec<Complex64> = axis
                    .iter()
                    .map(|x| Complex64::from_polar((-(x - center).powi(2) / (2.0 * width * width)).exp(), wavenumber * x))
                    .collect();
                let h = (stop - start) / (*count - 1) as f64;
                let norm = (raw.iter().map(|z| z.norm_sqr()).sum::<f64>() * h).sqrt();
                let psi: Vec<Complex64> = raw.iter().map(|z| z / norm).collect();
                CoherenceGrid::from_wavefunction(axis, &psi)
            }
            Self::Cat { a, b } => CoherenceGrid::cat_state(*a, *b),
        }
    }
}

/// One experiment. Fields not used by the selected mode may be omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub triplet: Option<TripletDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gas: Option<GasDoc>,
    /// Frozen test-particle momentum for `posdec`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p0: Option<Vec3>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Sweep>,
    /// Evolution time for `levy-cf` and `evolve`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<f64>,
    /// Unit direction of the separation (`levy-cf`, `evolve`, `posdec`); defaults to x.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Vec3>,
    /// Fixed separation in units of the thermal wavelength for a `posdec` time sweep.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_over_lambda_th: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<MomentumSuperposition>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_final: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_trajectories: Option<usize>,
    #[serde(default)]
    pub master_seed: u64,
    /// Output directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// Worker thread cap; results do not depend on it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

/// Serde stand-ins so the config type can derive `PartialEq`.
pub type TripletDoc = serde_json::Value;
pub type GasDoc = serde_json::Value;

/// Written next to every result as `manifest.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ExperimentConfig,
    pub version: String,
    pub master_seed: u64,
    pub started_unix_seconds: u64,
    pub wall_clock_seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub derived_scales: Option<DerivedScales>,
    pub outputs: Vec<String>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

/// Parses a configuration, or the `config` member of a manifest.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(json_diagnostic)?;
    let doc = match value.get("config") {
        Some(c) if value.get("version").is_some() => c.clone(),
        _ => value,
    };
    let config: ExperimentConfig = serde_json::from_value(doc).map_err(|e| Error::config("config", e.to_string()))?;
    validate_config(&config)?;
    Ok(config)
}

fn json_diagnostic(e: serde_json::Error) -> Error {
    Error::config(format!("line {} column {}", e.line(), e.column()), e.to_string())
}

fn require<'a, T>(v: &'a Option<T>, field: &str, mode: Mode) -> Result<&'a T> {
    v.as_ref()
        .ok_or_else(|| Error::config(field, format!("required for mode {}", mode_name(mode))))
}

fn mode_name(mode: Mode) -> String {
    serde_json::to_value(mode).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
}

fn triplet_of(c: &ExperimentConfig) -> Result<LevyTriplet> {
    let t: LevyTriplet = serde_json::from_value(require(&c.triplet, "triplet", c.mode)?.clone())
        .map_err(|e| Error::config("triplet", e.to_string()))?;
    t.validate().map_err(|e| Error::config("triplet", e.to_string()))?;
    Ok(t)
}

fn gas_of(c: &ExperimentConfig) -> Result<GasModel> {
    let g: GasModel = serde_json::from_value(require(&c.gas, "gas", c.mode)?.clone())
        .map_err(|e| Error::config("gas", e.to_string()))?;
    g.validate().map_err(|e| Error::config("gas", e.to_string()))?;
    Ok(g)
}

fn direction_of(c: &ExperimentConfig) -> Result<Vec3> {
    let d = c.direction.unwrap_or_else(Vec3::x);
    if (d.norm() - 1.0).abs() > 1e-12 {
        return Err(Error::config("direction", "must be a unit vector"));
    }
    Ok(d)
}

fn sweep_of<'a>(c: &'a ExperimentConfig, allowed: &[&str]) -> Result<&'a Sweep> {
    let s = require(&c.sweep, "sweep", c.mode)?;
    if s.count < 1 {
        return Err(Error::config("sweep.count", "must be >= 1"));
    }
    if !s.start.is_finite() || !s.stop.is_finite() {
        return Err(Error::config("sweep", "range must be finite"));
    }
    if !allowed.contains(&s.variable.as_str()) {
        return Err(Error::config(
            "sweep.variable",
            format!("'{}' not available in mode {}; expected one of {allowed:?}", s.variable, mode_name(c.mode)),
        ));
    }
    Ok(s)
}

fn non_negative(v: Option<f64>, field: &str, default: f64) -> Result<f64> {
    let x = v.unwrap_or(default);
    if !(x >= 0.0) || !x.is_finite() {
        return Err(Error::config(field, format!("must be finite and >= 0, got {x}")));
    }
    Ok(x)
}

/// Checks that every field the mode needs is present and well-formed.
pub fn validate_config(c: &ExperimentConfig) -> Result<()> {
    if c.threads == Some(0) {
        return Err(Error::config("threads", "must be >= 1"));
    }
    match c.mode {
        Mode::LevyCf => {
            triplet_of(c)?;
            direction_of(c)?;
            sweep_of(c, &["x"])?;
            non_negative(c.time, "time", 1.0)?;
        }
        Mode::Evolve => {
            triplet_of(c)?;
            direction_of(c)?;
            require(&c.grid, "grid", c.mode)?.build()?;
            non_negative(c.time, "time", 1.0)?;
        }
        Mode::QlbeRate => {
            gas_of(c)?;
            sweep_of(c, &["s"])?;
        }
        Mode::Unravel => {
            gas_of(c)?;
            require(&c.initial_state, "initial_state", c.mode)?;
            let s = sweep_of(c, &["time"])?;
            if *require(&c.n_trajectories, "n_trajectories", c.mode)? == 0 {
                return Err(Error::config("n_trajectories", "must be >= 1"));
            }
            let t_final = c.t_final.unwrap_or(s.stop);
            if !(t_final > 0.0) {
                return Err(Error::config("t_final", "must be positive"));
            }
            if s.values().iter().any(|t| !(*t >= 0.0 && *t <= t_final)) || s.count > 1 && !(s.stop > s.start) {
                return Err(Error::config("sweep", "sample times must increase within [0, t_final]"));
            }
        }
        Mode::Posdec => {
            let g = gas_of(c)?;
            if !g.sigma.is_constant() {
                return Err(Error::config("gas.sigma", "posdec needs a constant cross-section"));
            }
            direction_of(c)?;
            let s = sweep_of(c, &["x_over_lambda_th", "t"])?;
            if s.variable == "t" {
                require(&c.x_over_lambda_th, "x_over_lambda_th", c.mode)?;
                if s.values().iter().any(|t| !(*t >= 0.0)) {
                    return Err(Error::config("sweep", "times must be >= 0"));
                }
            }
        }
    }
    Ok(())
}

/// Files written and warnings raised by [`run`].
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub outputs: Vec<PathBuf>,
    pub manifest: PathBuf,
    pub warnings: Vec<String>,
}

fn write_file(dir: &Path, name: &str, bytes: &[u8], outputs: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, bytes)?;
    outputs.push(path);
    Ok(())
}

/// Runs `config`, writing its CSV result(s) and `manifest.json` into `out_dir`.
pub fn run(config: &ExperimentConfig, out_dir: &Path) -> Result<RunSummary> {
    validate_config(config)?;
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let clock = Instant::now();
    let body = || execute(config, out_dir);
    let (outputs, scales, warnings) = match config.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::config("threads", e.to_string()))?
            .install(body)?,
        None => body()?,
    };
    let mut resolved = config.clone();
    resolved.output = Some(out_dir.to_path_buf());
    let manifest = Manifest {
        config: resolved,
        version: env!("CARGO_PKG_VERSION").to_string(),
        master_seed: config.master_seed,
        started_unix_seconds: started,
        wall_clock_seconds: clock.elapsed().as_secs_f64(),
        derived_scales: scales,
        outputs: outputs
            .iter()
            .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .collect(),
        warnings: warnings.clone(),
    };
    let manifest_path = out_dir.join("manifest.json");
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(RunSummary {
        outputs,
        manifest: manifest_path,
        warnings,
    })
}

type Executed = (Vec<PathBuf>, Option<DerivedScales>, Vec<String>);

fn execute(c: &ExperimentConfig, dir: &Path) -> Result<Executed> {
    fs::create_dir_all(dir)?;
    let mut outputs = Vec::new();
    let mut warnings = Vec::new();
    let mut buf = Vec::new();
    let scales = match c.mode {
        Mode::LevyCf => {
            let t = triplet_of(c)?;
            let dir_vec = direction_of(c)?;
            let time = non_negative(c.time, "time", 1.0)?;
            let mut w = csv_writer(&mut buf);
            w.write_record(["x", "re_phi", "im_phi", "abs_phi"]).map_err(csv_error)?;
            for x in sweep_of(c, &["x"])?.values() {
                let phi = characteristic_function(&t, time, &(dir_vec * x))?;
                w.write_record([fmt_f64(x), fmt_f64(phi.re), fmt_f64(phi.im), fmt_f64(phi.norm())])
                    .map_err(csv_error)?;
            }
            w.flush()?;
            drop(w);
            write_file(dir, "characteristic_function.csv", &buf, &mut outputs)?;
            None
        }
        Mode::Evolve => {
            let t = triplet_of(c)?;
            let grid = require(&c.grid, "grid", c.mode)?.build()?;
            if !grid.is_uniform() {
                warnings.push("grid axis is not uniformly spaced".into());
            }
            let out = evolve(&grid, &t, non_negative(c.time, "time", 1.0)?, &direction_of(c)?)?;
            out.write_csv(&mut buf)?;
            write_file(dir, "coherence.csv", &buf, &mut outputs)?;
            None
        }
        Mode::QlbeRate => {
            let g = gas_of(c)?;
            let scales = g.scales();
            let mut w = csv_writer(&mut buf);
            w.write_record(["s", "lambda_over_lambda0"]).map_err(csv_error)?;
            for s in sweep_of(c, &["s"])?.values() {
                let rate = total_rate(&g, &Vec3::new(0.0, 0.0, g.momentum_at(s)))?;
                w.write_record([fmt_f64(s), fmt_f64(rate / scales.lambda0)]).map_err(csv_error)?;
            }
            w.flush()?;
            drop(w);
            write_file(dir, "rates.csv", &buf, &mut outputs)?;
            Some(scales)
        }
        Mode::Unravel => {
            let g = gas_of(c)?;
            let psi = require(&c.initial_state, "initial_state", c.mode)?;
            let sweep = sweep_of(c, &["time"])?;
            let times = sweep.values();
            let t_final = c.t_final.unwrap_or(sweep.stop);
            let n = *require(&c.n_trajectories, "n_trajectories", c.mode)?;
            let stats = run_ensemble(&g, psi, t_final, &times, n, c.master_seed)?;
            if stats.n_failed > 0 {
                warnings.push(format!("{} of {} trajectories failed and were excluded", stats.n_failed, n));
            }
            stats.write_csv(&mut buf)?;
            write_file(dir, "ensemble.csv", &buf, &mut outputs)?;
            write_file(dir, "ensemble.json", serde_json::to_string_pretty(&stats)?.as_bytes(), &mut outputs)?;
            Some(g.scales())
        }
        Mode::Posdec => {
            let g = gas_of(c)?;
            let scales = g.scales();
            let model = RecoillessModel::new(g, c.p0.unwrap_or_else(Vec3::zeros))?;
            warnings.extend(model.diagnostics()?.warnings);
            let direction = direction_of(c)?;
            let sweep = sweep_of(c, &["x_over_lambda_th", "t"])?;
            if sweep.variable == "t" {
                let sep = require(&c.x_over_lambda_th, "x_over_lambda_th", c.mode)?;
                write_decay_curve(&model, &(direction * (sep * scales.lambda_th)), &sweep.values(), &mut buf)?;
                write_file(dir, "decay.csv", &buf, &mut outputs)?;
            } else {
                write_phi_s_curve(&model, &direction, &sweep.values(), &mut buf)?;
                write_file(dir, "phi_s.csv", &buf, &mut outputs)?;
            }
            Some(scales)
        }
    };
    Ok((outputs, scales, warnings))
}

/// Process exit status for an error: 2 configuration, 3 numeric, 4 ensemble failure.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } | Error::Json(_) | Error::Precondition(_) => 2,
        Error::Ensemble { .. } => 4,
        _ => 3,
    }
}

/// Command-line flags of the `decoherence` binary.
#[derive(Debug, Parser)]
#[command(name = "decoherence", version, about = "Decoherence and thermalization of a tracer particle")]
pub struct Args {
    /// Experiment configuration (JSON), or a manifest from an earlier run.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `master_seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the worker thread cap.
    #[arg(long)]
    pub threads: Option<usize>,
}

/// Loads the configuration named by `args`, applies overrides and runs it.
pub fn run_args(args: &Args) -> Result<RunSummary> {
    let text = fs::read_to_string(&args.config)
        .map_err(|e| Error::config("--config", format!("{}: {e}", args.config.display())))?;
    let mut config = parse_config(&text)?;
    if let Some(seed) = args.seed {
        config.master_seed = seed;
    }
    if let Some(t) = args.threads {
        config.threads = Some(t);
    }
    let out = args
        .out
        .clone()
        .or_else(|| config.output.clone())
        .ok_or_else(|| Error::config("output", "no output directory (set `output` or pass --out)"))?;
    run(&config, &out)
}

/// Entry point of the binary; returns the process exit status.
pub fn main_entry() -> i32 {
    let args = Args::parse();
    match run_args(&args) {
        Ok(summary) => {
            for w in &summary.warnings {
                eprintln!("warning: {w}");
            }
            for p in &summary.outputs {
                println!("{}", p.display());
            }
            println!("{}", summary.manifest.display());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gas_json() -> &'static str {
        r#"{"n_gas": 1.0, "gas_mass": 1.0, "test_mass": 1.0, "beta": 1.0, "sigma": {"form": "constant", "value": 0.1}}"#
    }

    #[test]
    fn sweep_endpoints_exact() {
        let s = Sweep {
            variable: "s".into(),
            start: 0.0,
            stop: 5.0,
            count: 51,
        };
        let v = s.values();
        assert_eq!(v.len(), 51);
        assert_eq!(v[0], 0.0);
        assert_eq!(v[50], 5.0);
        let one = Sweep { count: 1, ..s };
        assert_eq!(one.values(), vec![0.0]);
    }

    #[test]
    fn float_format_has_seventeen_digits() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(1.0).parse::<f64>().unwrap(), 1.0);
    }

    #[test]
    fn missing_fields_are_reported() {
        let e = parse_config(r#"{"mode": "qlbe-rate"}"#).unwrap_err();
        assert!(matches!(&e, Error::Config { field, .. } if field == "gas"), "{e}");
        let e = parse_config(&format!(r#"{{"mode": "qlbe-rate", "gas": {}}}"#, gas_json())).unwrap_err();
        assert!(matches!(&e, Error::Config { field, .. } if field == "sweep"));
        let e = parse_config(&format!(
            r#"{{"mode": "qlbe-rate", "gas": {}, "sweep": {{"variable": "s", "start": 0, "stop": 1, "count": 0}}}}"#,
            gas_json()
        ))
        .unwrap_err();
        assert!(matches!(&e, Error::Config { field, .. } if field == "sweep.count"));
        assert_eq!(exit_code(&e), 2);
    }

    #[test]
    fn syntax_errors_carry_position() {
        let e = parse_config("{\n  \"mode\": \"levy-cf\",,\n}").unwrap_err();
        assert!(matches!(&e, Error::Config { field, .. } if field.starts_with("line 2")), "{e}");
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(parse_config(r#"{"mode": "posdec", "bogus": 1}"#).is_err());
    }

    #[test]
    fn levy_violation_is_a_config_error() {
        let text = r#"{"mode": "levy-cf",
            "triplet": {"drift": [0,0,0], "diffusion": [[0,0,0],[0,0,0],[0,0,0]],
                        "jumps": {"kind": "isotropic_density", "density": {"form": "power_law", "amplitude": 1, "exponent": 3}, "tail_scale": 1}},
            "sweep": {"variable": "x", "start": 0, "stop": 1, "count": 3}}"#;
        let e = parse_config(text).unwrap_err();
        assert!(matches!(&e, Error::Config { field, .. } if field == "triplet"), "{e}");
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::numeric("x")), 3);
        assert_eq!(
            exit_code(&Error::Ensemble {
                failures: 2,
                n: 10,
                first: String::new()
            }),
            4
        );
    }
}
