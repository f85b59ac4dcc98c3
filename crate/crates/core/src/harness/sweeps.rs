//! The three sweep families: optimizer convergence, layer count and
//! training SNR.
//!
//! A sweep is a list of named series (one curve each). Points within a series
//! run in parallel and are collected in grid order. With a checkpoint path,
//! every finished series is persisted together with the config hash, and a
//! resumed run skips the series already on disk.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::estimator::NmseMode;

use super::config::{Kappa, ScenarioConfig};
use super::scenario::{conventional_baseline, NmseRecord, PointEstimate, ScenarioInstance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepVar {
    Iterations,
    Layers,
    Snr,
}

impl SweepVar {
    pub fn name(self) -> &'static str {
        match self {
            SweepVar::Iterations => "iterations",
            SweepVar::Layers => "layers",
            SweepVar::Snr => "snr",
        }
    }
}

impl fmt::Display for SweepVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepVar {
    type Err = SimError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iterations" => Ok(SweepVar::Iterations),
            "layers" => Ok(SweepVar::Layers),
            "snr" => Ok(SweepVar::Snr),
            other => Err(SimError::Config(format!(
                "unknown sweep variable {other:?} (expected iterations, layers or snr)"
            ))),
        }
    }
}

/// A user index or the average over users.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum UserId {
    User(usize),
    Avg,
}

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UserId::User(k) => write!(f, "{k}"),
            UserId::Avg => f.write_str("avg"),
        }
    }
}

impl From<UserId> for String {
    fn from(u: UserId) -> String {
        u.to_string()
    }
}

impl TryFrom<String> for UserId {
    type Error = String;
    fn try_from(s: String) -> std::result::Result<Self, String> {
        if s == "avg" {
            return Ok(UserId::Avg);
        }
        s.parse().map(UserId::User).map_err(|_| format!("bad user id {s:?}"))
    }
}

/// One output row. `sweep_var` is `<variable>:<series>`; `baseline` holds
/// the codebook NMSE in the configured mode where one was computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub sweep_var: String,
    pub sweep_value: f64,
    pub user_id: UserId,
    pub nmse_paper: Option<f64>,
    pub nmse_consistent: Option<f64>,
    pub nmse_mc_mean: Option<f64>,
    pub nmse_mc_stderr: Option<f64>,
    pub baseline: Option<f64>,
    pub iterations: Option<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub variable: SweepVar,
    pub grid: Vec<f64>,
    /// Series labels in output order.
    pub series: Vec<String>,
    pub records: Vec<Record>,
    pub config_hash: String,
    pub seed: u64,
    pub wall_time_s: f64,
}

impl SweepResult {
    pub fn empty(variable: SweepVar, cfg: &ScenarioConfig) -> Self {
        Self {
            variable,
            grid: Vec::new(),
            series: Vec::new(),
            records: Vec::new(),
            config_hash: cfg.hash(),
            seed: cfg.seed,
            wall_time_s: 0.0,
        }
    }

    /// Rows of one series.
    pub fn series_records(&self, label: &str) -> Vec<&Record> {
        let full = format!("{}:{label}", self.variable);
        self.records.iter().filter(|r| r.sweep_var == full).collect()
    }

    /// Average rows of one series in grid order.
    pub fn averages(&self, label: &str) -> Vec<&Record> {
        self.series_records(label).into_iter().filter(|r| r.user_id == UserId::Avg).collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Checkpoint {
    config_hash: String,
    variable: SweepVar,
    completed: Vec<(String, Vec<Record>)>,
}

type SeriesFn<'a> = Box<dyn Fn() -> Result<Vec<Record>> + Sync + 'a>;

struct Series<'a> {
    label: String,
    run: SeriesFn<'a>,
}

fn mode_value(rec: &NmseRecord, mode: NmseMode) -> f64 {
    match mode {
        NmseMode::Consistent => rec.nmse_consistent,
        NmseMode::PaperLiteral => rec.nmse_paper,
    }
}

/// Rows for one grid point: users (when enabled) then the average.
fn point_rows(
    sweep_var: &str,
    value: f64,
    est: &PointEstimate,
    baseline: Option<&PointEstimate>,
    iterations: Option<usize>,
    cfg: &ScenarioConfig,
) -> Vec<Record> {
    let row = |user_id, rec: &NmseRecord, base: Option<f64>| Record {
        sweep_var: sweep_var.to_string(),
        sweep_value: value,
        user_id,
        nmse_paper: Some(rec.nmse_paper),
        nmse_consistent: Some(rec.nmse_consistent),
        nmse_mc_mean: rec.monte_carlo.map(|m| m.0),
        nmse_mc_stderr: rec.monte_carlo.map(|m| m.1),
        baseline: base,
        iterations,
        seed: cfg.seed,
    };
    let mut out = Vec::new();
    if cfg.sweep.per_user_rows {
        for (k, rec) in est.per_user.iter().enumerate() {
            out.push(row(UserId::User(k), rec, baseline.map(|b| mode_value(&b.per_user[k], cfg.nmse_mode))));
        }
    }
    out.push(row(UserId::Avg, &est.average, baseline.map(|b| mode_value(&b.average, cfg.nmse_mode))));
    out
}

/// Optimizes one scenario and evaluates the optimum and (optionally) the
/// codebook baseline.
fn optimized_point(cfg: &ScenarioConfig, monte_carlo: bool) -> Result<(PointEstimate, Option<PointEstimate>, usize)> {
    let inst = ScenarioInstance::build(cfg)?;
    let opt = inst.optimize()?;
    let est = inst.evaluate(&opt.phases, monte_carlo)?;
    let base = if cfg.sweep.codebook {
        let (phases, _) = inst.codebook()?;
        Some(inst.evaluate(&phases, false)?)
    } else {
        None
    };
    Ok((est, base, opt.iterations_used))
}

fn run_series(
    variable: SweepVar,
    grid: Vec<f64>,
    cfg: &ScenarioConfig,
    series: Vec<Series<'_>>,
    checkpoint: Option<&Path>,
    resume: bool,
) -> Result<SweepResult> {
    let start = Instant::now();
    let hash = cfg.hash();
    let mut state = Checkpoint {
        config_hash: hash.clone(),
        variable,
        completed: Vec::new(),
    };
    if let (Some(path), true) = (checkpoint, resume) {
        if path.exists() {
            let text = std::fs::read_to_string(path).map_err(|source| SimError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            let saved: Checkpoint = serde_json::from_str(&text).map_err(|e| SimError::Format {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
            if saved.config_hash != hash || saved.variable != variable {
                return Err(SimError::Config(format!(
                    "cannot resume: {} was written for config hash {} ({}), current is {} ({})",
                    path.display(),
                    saved.config_hash,
                    saved.variable,
                    hash,
                    variable
                )));
            }
            state = saved;
        }
    }
    let labels: Vec<String> = series.iter().map(|s| s.label.clone()).collect();
    for s in &series {
        if state.completed.iter().any(|(l, _)| *l == s.label) {
            continue;
        }
        let rows = (s.run)()?;
        state.completed.push((s.label.clone(), rows));
        if let Some(path) = checkpoint {
            write_atomic(path, &serde_json::to_string(&state).expect("checkpoint serializes"))?;
        }
    }
    let mut records = Vec::new();
    for label in &labels {
        let (_, rows) = state.completed.iter().find(|(l, _)| l == label).expect("every series ran");
        records.extend(rows.iter().cloned());
    }
    Ok(SweepResult {
        variable,
        grid,
        series: labels,
        records,
        config_hash: hash,
        seed: cfg.seed,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

pub(crate) fn write_atomic(path: &Path, text: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let io = |source| SimError::Io {
        path: path.to_path_buf(),
        source,
    };
    std::fs::write(&tmp, text).map_err(io)?;
    std::fs::rename(&tmp, path).map_err(io)
}

/// Optimizer objective per AO round for each configured `(N, L)` pair.
pub fn run_convergence_sweep(cfg: &ScenarioConfig) -> Result<SweepResult> {
    run_sweep(SweepVar::Iterations, cfg, None, false)
}

/// Optimized NMSE, codebook baseline and conventional bound per layer count.
pub fn run_layer_sweep(cfg: &ScenarioConfig, layers: &[usize]) -> Result<SweepResult> {
    let mut cfg = cfg.clone();
    cfg.sweep.layers = layers.to_vec();
    run_sweep(SweepVar::Layers, &cfg, None, false)
}

/// NMSE against training SNR `τρ/σ²` (dB) with Monte-Carlo verification.
pub fn run_snr_sweep(cfg: &ScenarioConfig, snr_db: &[f64]) -> Result<SweepResult> {
    let mut cfg = cfg.clone();
    cfg.sweep.snr_db = snr_db.to_vec();
    run_sweep(SweepVar::Snr, &cfg, None, false)
}

/// Runs a sweep family, checkpointing finished series to `checkpoint`.
pub fn run_sweep(variable: SweepVar, cfg: &ScenarioConfig, checkpoint: Option<&Path>, resume: bool) -> Result<SweepResult> {
    cfg.validate()?;
    match variable {
        SweepVar::Iterations => convergence_series(cfg, checkpoint, resume),
        SweepVar::Layers => layer_series(cfg, checkpoint, resume),
        SweepVar::Snr => snr_series(cfg, checkpoint, resume),
    }
}

fn convergence_series(cfg: &ScenarioConfig, checkpoint: Option<&Path>, resume: bool) -> Result<SweepResult> {
    if cfg.sweep.convergence_pairs.is_empty() {
        return Err(SimError::Config("sweep.convergence_pairs: must not be empty".into()));
    }
    let series = cfg
        .sweep
        .convergence_pairs
        .iter()
        .map(|&[n, l]| {
            let label = format!("N={n}:L={l}");
            let var = format!("iterations:{label}");
            let run: SeriesFn = Box::new(move || {
                let mut c = cfg.with_elements(n);
                c.layers = l;
                c.validate()?;
                let inst = ScenarioInstance::build(&c)?;
                let opt = inst.optimize()?;
                Ok(opt
                    .objective_trace
                    .iter()
                    .map(|&(round, value)| {
                        let (paper, consistent) = match c.nmse_mode {
                            NmseMode::Consistent => (None, Some(value)),
                            NmseMode::PaperLiteral => (Some(value), None),
                        };
                        Record {
                            sweep_var: var.clone(),
                            sweep_value: round as f64,
                            user_id: UserId::Avg,
                            nmse_paper: paper,
                            nmse_consistent: consistent,
                            nmse_mc_mean: None,
                            nmse_mc_stderr: None,
                            baseline: None,
                            iterations: Some(opt.iterations_used),
                            seed: c.seed,
                        }
                    })
                    .collect())
            });
            Series { label, run }
        })
        .collect();
    let grid = (0..=cfg.optimizer.max_iterations).map(|i| i as f64).collect();
    run_series(SweepVar::Iterations, grid, cfg, series, checkpoint, resume)
}

fn layer_series(cfg: &ScenarioConfig, checkpoint: Option<&Path>, resume: bool) -> Result<SweepResult> {
    let grid = &cfg.sweep.layers;
    if grid.is_empty() || grid.contains(&0) {
        return Err(SimError::Config("sweep.layers: must be non-empty with entries ≥ 1".into()));
    }
    let mut series: Vec<Series> = Vec::new();
    for &n in &cfg.sweep.elements {
        let label = format!("N={n}");
        let var = format!("layers:{label}");
        series.push(Series {
            label,
            run: Box::new(move || {
                let rows: Vec<Vec<Record>> = grid
                    .par_iter()
                    .map(|&l| {
                        let mut c = cfg.with_elements(n);
                        c.layers = l;
                        let (est, base, iters) = optimized_point(&c, false)?;
                        Ok(point_rows(&var, l as f64, &est, base.as_ref(), Some(iters), &c))
                    })
                    .collect::<Result<_>>()?;
                Ok(rows.concat())
            }),
        });
        let label = format!("N={n}:conventional");
        let var = format!("layers:{label}");
        series.push(Series {
            label,
            run: Box::new(move || {
                let c = cfg.with_elements(n);
                let est = conventional_baseline(&c, false)?;
                Ok(grid
                    .iter()
                    .flat_map(|&l| point_rows(&var, l as f64, &est, None, None, &c))
                    .collect())
            }),
        });
    }
    let grid_f = grid.iter().map(|&l| l as f64).collect();
    run_series(SweepVar::Layers, grid_f, cfg, series, checkpoint, resume)
}

fn snr_series(cfg: &ScenarioConfig, checkpoint: Option<&Path>, resume: bool) -> Result<SweepResult> {
    let grid = &cfg.sweep.snr_db;
    if grid.is_empty() || grid.iter().any(|v| !v.is_finite()) {
        return Err(SimError::Config("sweep.snr_db: must be non-empty and finite".into()));
    }
    let mc = cfg.sweep.monte_carlo;
    let sim_curve = move |c: ScenarioConfig, var: String| -> SeriesFn {
        Box::new(move || {
            let rows: Vec<Vec<Record>> = grid
                .par_iter()
                .map(|&snr| {
                    let cs = c.with_snr_db(snr);
                    let (est, base, iters) = optimized_point(&cs, mc)?;
                    Ok(point_rows(&var, snr, &est, base.as_ref(), Some(iters), &cs))
                })
                .collect::<Result<_>>()?;
            Ok(rows.concat())
        })
    };
    let mut series: Vec<Series> = Vec::new();
    for (i, &n) in cfg.sweep.elements.iter().enumerate() {
        let c = cfg.with_elements(n);
        let label = format!("N={n}");
        series.push(Series {
            run: sim_curve(c.clone(), format!("snr:{label}")),
            label,
        });
        let label = format!("N={n}:conventional");
        let var = format!("snr:{label}");
        let cc = c.clone();
        series.push(Series {
            label,
            run: Box::new(move || {
                let rows: Vec<Vec<Record>> = grid
                    .par_iter()
                    .map(|&snr| {
                        let cs = cc.with_snr_db(snr);
                        let est = conventional_baseline(&cs, mc)?;
                        Ok(point_rows(&var, snr, &est, None, None, &cs))
                    })
                    .collect::<Result<_>>()?;
                Ok(rows.concat())
            }),
        });
        if i == 0 {
            for &kappa in &cfg.sweep.kappa_variants {
                let mut ck = c.clone();
                ck.kappa = Kappa::Shared(kappa);
                if ck.kappas() == c.kappas() {
                    continue;
                }
                let label = format!("N={n}:kappa={kappa}");
                series.push(Series {
                    run: sim_curve(ck, format!("snr:{label}")),
                    label,
                });
            }
        }
    }
    run_series(SweepVar::Snr, grid.clone(), cfg, series, checkpoint, resume)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny() -> ScenarioConfig {
        let mut c = ScenarioConfig {
            elements: 4,
            per_row: 2,
            layers: 2,
            antennas: 2,
            users: 2,
            trials: 50,
            codebook_size: Some(8),
            ..Default::default()
        };
        c.optimizer.max_iterations = 20;
        c.sweep.layers = vec![1, 2];
        c.sweep.elements = vec![4];
        c.sweep.snr_db = vec![130.0, 140.0];
        c.sweep.convergence_pairs = vec![[4, 2]];
        c
    }

    #[test]
    fn snr_sweep_row_count() {
        let c = tiny();
        let r = run_snr_sweep(&c, &c.sweep.snr_db.clone()).unwrap();
        // Series: SIM, conventional, κ = 0; each grid point has K + 1 rows.
        assert_eq!(r.series.len(), 3);
        assert_eq!(r.records.len(), 3 * 2 * (c.users + 1));
        for rec in &r.records {
            assert!(rec.nmse_mc_mean.is_some() == rec.nmse_mc_stderr.is_some());
        }
    }

    #[test]
    fn layer_sweep_has_bound_and_baseline() {
        let c = tiny();
        let r = run_layer_sweep(&c, &[1, 2]).unwrap();
        let sim = r.averages("N=4");
        assert_eq!(sim.len(), 2);
        assert!(sim.iter().all(|rec| rec.baseline.is_some() && rec.iterations.is_some()));
        let conv = r.averages("N=4:conventional");
        assert_eq!(conv[0].nmse_consistent, conv[1].nmse_consistent);
    }

    #[test]
    fn convergence_trace_is_monotone() {
        let r = run_convergence_sweep(&tiny()).unwrap();
        let vals: Vec<f64> = r.records.iter().map(|x| x.nmse_consistent.unwrap()).collect();
        assert!(vals.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(r.records[0].sweep_value, 0.0);
    }

    #[test]
    fn resume_rejects_other_configs_and_reuses_series() {
        let dir = tempfile::tempdir().unwrap();
        let ck = dir.path().join("run.partial.json");
        let c = tiny();
        let first = run_sweep(SweepVar::Layers, &c, Some(&ck), false).unwrap();
        let again = run_sweep(SweepVar::Layers, &c, Some(&ck), true).unwrap();
        assert_eq!(first.records, again.records);
        let other = ScenarioConfig { seed: 99, ..c };
        assert!(matches!(
            run_sweep(SweepVar::Layers, &other, Some(&ck), true),
            Err(SimError::Config(_))
        ));
    }

    #[test]
    fn user_id_parses() {
        assert_eq!(UserId::try_from("avg".to_string()), Ok(UserId::Avg));
        assert_eq!(UserId::try_from("3".to_string()), Ok(UserId::User(3)));
        assert!(UserId::try_from("x".to_string()).is_err());
        assert!("bogus".parse::<SweepVar>().is_err());
    }
}
