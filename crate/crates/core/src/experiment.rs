//! Seeded Monte-Carlo sweeps over the pilot length or the antenna count.
//!
//! Every sweep point draws its covariances and pilots once, then runs
//! independent coherence blocks. Block `t` at sweep value `v` uses the stream
//! `(seed, TRIAL, v, t)`, and blocks are merged in index order, so results do
//! not depend on the worker count.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::amp::{AmpParams, AmpSolver};
use crate::detector::{ThresholdPolicy, DEFAULT_THRESHOLD};
use crate::error::{Error, Result};
use crate::metrics::{oracle_mmse, DetectionTally, NaseTally};
use crate::scenario::{
    build_covariances, gen_pilots, noise_power_from_snr_db, synthesize_rx, CovarianceSet, GroundTruth, PilotMatrix,
    SystemConfig,
};
use crate::seed::{self, label};
use crate::theory::{converged_sigma, predict_all, SigmaMethod};

/// Sweeps abort when more than this fraction of blocks diverge.
pub const MAX_DIVERGENCE_FRACTION: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepVar {
    #[serde(rename = "tau_p")]
    TauP,
    #[serde(rename = "M")]
    Antennas,
    #[serde(rename = "none")]
    None,
}

impl SweepVar {
    pub fn name(self) -> &'static str {
        match self {
            SweepVar::TauP => "tau_p",
            SweepVar::Antennas => "M",
            SweepVar::None => "none",
        }
    }

    fn apply(self, config: &mut SystemConfig, value: usize) {
        match self {
            SweepVar::TauP => config.tau_p = value,
            SweepVar::Antennas => config.antennas = value,
            SweepVar::None => {}
        }
    }
}

/// A sweep variable with its values, written `tau_p=15,25,35`, `M=4,8` or `none`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sweep {
    pub var: SweepVar,
    pub values: Vec<usize>,
}

impl FromStr for Sweep {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "none" {
            return Ok(Sweep { var: SweepVar::None, values: Vec::new() });
        }
        let (name, list) = s
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("sweep `{s}` is not of the form name=v1,v2,..")))?;
        let var = match name.trim() {
            "tau_p" => SweepVar::TauP,
            "M" | "antennas" => SweepVar::Antennas,
            other => return Err(Error::Parse(format!("unknown sweep variable `{other}`"))),
        };
        let values = list
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<usize>()
                    .map_err(|e| Error::Parse(format!("sweep value `{v}`: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Sweep { var, values })
    }
}

impl fmt::Display for Sweep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.var == SweepVar::None {
            return f.write_str("none");
        }
        let values: Vec<String> = self.values.iter().map(|v| v.to_string()).collect();
        write!(f, "{}={}", self.var.name(), values.join(","))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub system: SystemConfig,
    pub sweep: SweepVar,
    pub values: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub tol: f64,
    /// Posterior activity threshold `l`.
    pub threshold: f64,
    pub calibration_trials: usize,
    pub sigma_method: SigmaMethod,
    pub output: Option<PathBuf>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self::desk()
    }
}

impl ExperimentSpec {
    /// N = 200, M = 16, 10 dB, pilot-length sweep, 2000 blocks per point.
    pub fn desk() -> Self {
        let params = AmpParams::new(0.05, 0.1);
        Self {
            system: SystemConfig::default(),
            sweep: SweepVar::TauP,
            values: vec![15, 25, 35, 45],
            trials: 2000,
            seed: 1,
            max_iter: params.max_iter,
            tol: params.tol,
            threshold: DEFAULT_THRESHOLD,
            calibration_trials: 100,
            sigma_method: SigmaMethod::AmpAverage,
            output: None,
        }
    }

    /// N = 1000, M = 32.
    pub fn paper_scale() -> Self {
        let mut spec = Self::desk();
        spec.system.n_users = 1000;
        spec.system.antennas = 32;
        spec.values = vec![40, 60, 80, 100, 120];
        spec
    }

    pub fn sweep(&self) -> Sweep {
        Sweep { var: self.sweep, values: self.values.clone() }
    }

    pub fn set_sweep(&mut self, sweep: Sweep) {
        self.sweep = sweep.var;
        self.values = sweep.values;
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.sweep != SweepVar::None && self.values.is_empty() {
            return Err(Error::Config("sweep has no values".into()));
        }
        if self.values.contains(&0) {
            return Err(Error::Config("sweep values must be positive".into()));
        }
        if self.calibration_trials == 0 {
            return Err(Error::Config("calibration_trials must be at least 1".into()));
        }
        ThresholdPolicy::uniform(1, self.threshold)?;
        for (_, config) in self.points() {
            config.validate()?;
        }
        self.amp_params(&self.system).validate()
    }

    /// `(sweep value, config)` for every sweep point.
    pub fn points(&self) -> Vec<(usize, SystemConfig)> {
        if self.sweep == SweepVar::None {
            return vec![(0, self.system.clone())];
        }
        self.values
            .iter()
            .map(|&v| {
                let mut config = self.system.clone();
                self.sweep.apply(&mut config, v);
                (v, config)
            })
            .collect()
    }

    pub fn amp_params(&self, config: &SystemConfig) -> AmpParams {
        AmpParams {
            max_iter: self.max_iter,
            tol: self.tol,
            ..AmpParams::new(config.epsilon, config.noise_power)
        }
    }

    /// Reads a flat TOML file and applies its keys on top of `self`.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path)?;
        let file: ConfigFile = toml::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        file.apply(self)
    }
}

/// Keys accepted in a config file. Every key is optional.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub n_users: Option<usize>,
    pub antennas: Option<usize>,
    pub tau_p: Option<usize>,
    pub epsilon: Option<f64>,
    pub snr_db: Option<f64>,
    pub noise_power: Option<f64>,
    pub cell_radius: Option<f64>,
    pub guard_radius: Option<f64>,
    pub asd_deg: Option<f64>,
    pub antenna_spacing: Option<f64>,
    pub sweep: Option<String>,
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    pub max_iter: Option<usize>,
    pub tol: Option<f64>,
    pub threshold: Option<f64>,
    pub calibration_trials: Option<usize>,
    pub sigma_method: Option<SigmaMethod>,
    pub output: Option<PathBuf>,
}

impl ConfigFile {
    pub fn apply(self, spec: &mut ExperimentSpec) -> Result<()> {
        let sys = &mut spec.system;
        macro_rules! set {
            ($dst:expr, $src:expr) => {
                if let Some(v) = $src {
                    $dst = v;
                }
            };
        }
        set!(sys.n_users, self.n_users);
        set!(sys.antennas, self.antennas);
        set!(sys.tau_p, self.tau_p);
        set!(sys.epsilon, self.epsilon);
        set!(sys.cell_radius, self.cell_radius);
        set!(sys.guard_radius, self.guard_radius);
        set!(sys.asd_deg, self.asd_deg);
        set!(sys.antenna_spacing, self.antenna_spacing);
        match (self.snr_db, self.noise_power) {
            (Some(_), Some(_)) => return Err(Error::Config("give either snr_db or noise_power, not both".into())),
            (Some(db), None) => sys.noise_power = noise_power_from_snr_db(db),
            (None, Some(p)) => sys.noise_power = p,
            (None, None) => {}
        }
        if let Some(s) = self.sweep {
            spec.set_sweep(s.parse()?);
        }
        set!(spec.trials, self.trials);
        set!(spec.seed, self.seed);
        set!(spec.max_iter, self.max_iter);
        set!(spec.tol, self.tol);
        set!(spec.threshold, self.threshold);
        set!(spec.calibration_trials, self.calibration_trials);
        set!(spec.sigma_method, self.sigma_method);
        if self.output.is_some() {
            spec.output = self.output;
        }
        Ok(())
    }
}

/// Execution settings that never change the numbers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunOptions {
    pub workers: usize,
    /// Record wall time per point; off by default so output files are reproducible.
    pub timing: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            workers: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            timing: false,
        }
    }
}

/// One CSV line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub sweep: String,
    pub var: usize,
    pub p_md_sim: f64,
    pub p_md_se: f64,
    pub p_fa_sim: f64,
    pub p_fa_se: f64,
    pub p_md_pred: Option<f64>,
    pub p_fa_pred: Option<f64>,
    pub nase_amp_db: f64,
    pub nase_oracle_db: f64,
    /// Blocks that entered the averages (diverged blocks are excluded).
    pub trials: usize,
    pub wall_s: f64,
}

pub const CSV_HEADER: &str =
    "sweep,var,p_md_sim,p_md_se,p_fa_sim,p_fa_se,p_md_pred,p_fa_pred,nase_amp_db,nase_oracle_db,trials,wall_s";

/// Per-block tallies.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TrialRecord {
    pub detection: DetectionTally,
    pub amp: NaseTally,
    pub oracle: NaseTally,
}

/// Covariances, pilots and solver settings of one sweep point.
pub struct PointContext {
    pub value: usize,
    pub config: SystemConfig,
    pub covs: CovarianceSet<f64>,
    pub pilots: PilotMatrix<f64>,
    pub params: AmpParams,
    pub policy: ThresholdPolicy,
    seed: u64,
}

impl PointContext {
    pub fn new(spec: &ExperimentSpec, value: usize, config: SystemConfig) -> Result<Self> {
        let covs = build_covariances::<f64, _>(&config, &mut seed::stream(spec.seed, &[label::COVARIANCES, value as u64]))?;
        let pilots = gen_pilots::<f64, _>(&config, &mut seed::stream(spec.seed, &[label::PILOTS, value as u64]));
        Ok(Self {
            value,
            params: spec.amp_params(&config),
            policy: ThresholdPolicy::uniform(config.n_users, spec.threshold)?,
            config,
            covs,
            pilots,
            seed: spec.seed,
        })
    }

    pub fn solver(&self) -> Result<AmpSolver<'_, f64>> {
        AmpSolver::new(&self.covs, self.params.clone())
    }

    /// One coherence block: activity, channels, noise, AMP, detection, and
    /// the oracle estimate on the same data.
    pub fn trial(&self, solver: &AmpSolver<f64>, t: usize) -> Result<TrialRecord> {
        let mut rng = seed::stream(self.seed, &[label::TRIAL, self.value as u64, t as u64]);
        let truth = GroundTruth::sample(&self.config, &self.covs, &mut rng);
        let y = synthesize_rx(&self.pilots, &truth.x, self.config.noise_power, &mut rng)?;
        let report = solver.run(&y, &self.pilots)?;
        let state = &report.state;
        let decisions = self
            .policy
            .decide_all(&state.log_det_ratio, &state.quad_stat, self.config.epsilon)?;
        let mut record = TrialRecord::default();
        record.detection.add(&truth.gamma, &decisions);
        let active = truth.active_set();
        if !active.is_empty() {
            record.amp.add(&truth.x, &state.x_hat.select_columns(&active), &active);
            let oracle = oracle_mmse(&y, &self.pilots.phi, &active, &self.covs, self.config.noise_power)?;
            record.oracle.add(&truth.x, &oracle, &active);
        }
        Ok(record)
    }

    /// Runs blocks `0..trials` and keeps the per-block records in order.
    /// Diverged blocks come back as `None`.
    pub fn trials(&self, trials: usize) -> Result<Vec<Option<TrialRecord>>> {
        let solver = self.solver()?;
        let results: Vec<Result<TrialRecord>> = (0..trials).into_par_iter().map(|t| self.trial(&solver, t)).collect();
        let mut records = Vec::with_capacity(trials);
        let mut diverged = 0usize;
        for r in results {
            match r {
                Ok(rec) => records.push(Some(rec)),
                Err(Error::Divergence { .. }) => {
                    diverged += 1;
                    records.push(None);
                }
                Err(e) => return Err(e),
            }
        }
        if diverged as f64 > MAX_DIVERGENCE_FRACTION * trials as f64 {
            return Err(Error::Aborted(format!(
                "{diverged} of {trials} AMP runs diverged at {}={}",
                self.config_label(),
                self.value
            )));
        }
        Ok(records)
    }

    /// Theoretical rates averaged over users at the converged `Sigma`.
    pub fn predict(&self, spec: &ExperimentSpec) -> Result<(f64, f64)> {
        let solver = self.solver()?;
        let cal_seed = seed::mix(spec.seed, &[label::CALIBRATION, self.value as u64]);
        let sigma = converged_sigma(
            &solver,
            &self.config,
            &self.pilots,
            spec.calibration_trials,
            cal_seed,
            spec.sigma_method,
        )?;
        let p = predict_all(&self.covs, &sigma, self.config.epsilon, &self.policy)?;
        Ok((p.mean_p_md(), p.mean_p_fa()))
    }

    fn config_label(&self) -> String {
        format!("N={},M={},tau_p", self.config.n_users, self.config.antennas)
    }
}

fn run_sweep(spec: &ExperimentSpec, opts: RunOptions, predict: bool) -> Result<Vec<ResultRow>> {
    spec.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    pool.install(|| {
        spec.points()
            .into_iter()
            .map(|(value, config)| {
                let start = Instant::now();
                let ctx = PointContext::new(spec, value, config)?;
                let mut detection = DetectionTally::default();
                let mut amp = NaseTally::default();
                let mut oracle = NaseTally::default();
                let mut used = 0;
                for rec in ctx.trials(spec.trials)?.into_iter().flatten() {
                    detection.merge(&rec.detection);
                    amp.merge(&rec.amp);
                    oracle.merge(&rec.oracle);
                    used += 1;
                }
                let rates = detection.rates()?;
                let (p_md_pred, p_fa_pred) = if predict {
                    let (md, fa) = ctx.predict(spec)?;
                    (Some(md), Some(fa))
                } else {
                    (None, None)
                };
                Ok(ResultRow {
                    sweep: spec.sweep.name().to_string(),
                    var: value,
                    p_md_sim: rates.p_md,
                    p_md_se: rates.p_md_se,
                    p_fa_sim: rates.p_fa,
                    p_fa_se: rates.p_fa_se,
                    p_md_pred,
                    p_fa_pred,
                    nase_amp_db: amp.nase_db()?,
                    nase_oracle_db: oracle.nase_db()?,
                    trials: used,
                    wall_s: if opts.timing { start.elapsed().as_secs_f64() } else { 0.0 },
                })
            })
            .collect()
    })
}

/// Simulated and predicted detection rates, one row per sweep value.
pub fn run_detection_sweep(spec: &ExperimentSpec, opts: RunOptions) -> Result<Vec<ResultRow>> {
    run_sweep(spec, opts, true)
}

/// Paired AMP and oracle NASE on identical blocks. The prediction columns
/// stay empty.
pub fn run_nase_sweep(spec: &ExperimentSpec, opts: RunOptions) -> Result<Vec<ResultRow>> {
    run_sweep(spec, opts, false)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(Error::Parse(format!("unknown format `{other}`"))),
        }
    }
}

#[derive(Serialize)]
struct JsonReport<'a> {
    seed: u64,
    spec: &'a ExperimentSpec,
    rows: &'a [ResultRow],
}

pub fn write_results<W: Write>(rows: &[ResultRow], spec: &ExperimentSpec, format: OutputFormat, out: W) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::Config("no result rows to write".into()));
    }
    match format {
        OutputFormat::Csv => {
            let mut w = csv::Writer::from_writer(out);
            for row in rows {
                w.serialize(row)?;
            }
            w.flush()?;
        }
        OutputFormat::Json => {
            let mut out = out;
            serde_json::to_writer_pretty(&mut out, &JsonReport { seed: spec.seed, spec, rows })?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

pub fn emit_results(rows: &[ResultRow], spec: &ExperimentSpec, path: &Path, format: OutputFormat) -> Result<()> {
    let mut buf = Vec::new();
    write_results(rows, spec, format, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.iter().collect::<Vec<_>>().join(",");
    if header != CSV_HEADER {
        return Err(Error::Parse(format!("unexpected CSV header `{header}`")));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}
