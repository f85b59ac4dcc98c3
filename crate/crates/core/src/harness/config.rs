//! Scenario configuration: parsing, defaults, overrides and validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Result, SimError};
use crate::estimator::NmseMode;
use crate::geometry::CorrelationKind;
use crate::optimizer::Schedule;

const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Kappa given once for all users or per user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Kappa {
    Shared(f64),
    PerUser(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathLossConfig {
    pub d0: f64,
    pub exponent: f64,
    /// Reference gain; `(λ / 4πd0)²` when absent.
    pub c0: Option<f64>,
}

impl Default for PathLossConfig {
    fn default() -> Self {
        Self {
            d0: 1.0,
            exponent: 3.5,
            c0: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrelationConfig {
    pub kind: CorrelationKind,
    /// Matrix file for `custom-file`.
    pub path: Option<PathBuf>,
}

impl Default for CorrelationConfig {
    fn default() -> Self {
        Self {
            kind: CorrelationKind::SincIsotropic,
            path: None,
        }
    }
}

/// Grids for the three sweep families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub layers: Vec<usize>,
    /// Element counts plotted as separate curves.
    pub elements: Vec<usize>,
    /// Training SNR `τρ/σ²` in dB.
    pub snr_db: Vec<f64>,
    /// Extra Rice-factor curves of the SNR sweep.
    pub kappa_variants: Vec<f64>,
    /// `[N, L]` pairs traced by the convergence sweep.
    pub convergence_pairs: Vec<[usize; 2]>,
    pub per_user_rows: bool,
    /// Skip codebook baselines (they dominate sweep runtime).
    pub codebook: bool,
    pub monte_carlo: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            layers: (1..=8).collect(),
            elements: vec![32, 64],
            snr_db: vec![110.0, 120.0, 130.0, 140.0, 150.0],
            kappa_variants: vec![0.0, 10.0],
            convergence_pairs: vec![[32, 6], [64, 6]],
            per_user_rows: true,
            codebook: true,
            monte_carlo: true,
        }
    }
}

/// Every physical and protocol parameter of a scenario. Absent fields take
/// the defaults of the reference setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub antennas: usize,
    pub users: usize,
    pub elements: usize,
    pub layers: usize,
    pub per_row: usize,
    /// Inferred as `elements / per_row` when absent.
    pub per_col: Option<usize>,
    pub carrier_hz: f64,
    /// Overrides `carrier_hz`.
    pub wavelength: Option<f64>,
    /// Stack thickness in wavelengths.
    pub thickness_wavelengths: f64,
    /// Stack thickness in meters; overrides `thickness_wavelengths`.
    pub thickness: Option<f64>,
    pub element_width_wavelengths: f64,
    pub element_height_wavelengths: f64,
    pub antenna_spacing_wavelengths: f64,
    pub height: f64,
    pub distance_min: f64,
    pub distance_max: f64,
    /// Fixed `[azimuth, elevation]` per user in radians.
    pub angles: Option<Vec<[f64; 2]>>,
    pub path_loss: PathLossConfig,
    pub kappa: Kappa,
    pub rho: f64,
    pub sigma2_dbm: f64,
    /// Overrides `sigma2_dbm`.
    pub sigma2: Option<f64>,
    /// Pilot length; `users` when absent.
    pub tau: Option<usize>,
    /// Coherence interval in slots (metadata).
    pub coherence_slots: usize,
    /// Data-phase transmit power in watts (metadata).
    pub data_power: f64,
    pub correlation: CorrelationConfig,
    pub nmse_mode: NmseMode,
    pub optimizer: Schedule,
    /// `10 · L · N` when absent.
    pub codebook_size: Option<usize>,
    /// Coherence intervals between re-optimizations.
    pub reoptimize_every: usize,
    pub seed: u64,
    pub trials: usize,
    pub sweep: SweepConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            antennas: 4,
            users: 4,
            elements: 32,
            layers: 6,
            per_row: 8,
            per_col: None,
            carrier_hz: 28e9,
            wavelength: None,
            thickness_wavelengths: 5.0,
            thickness: None,
            element_width_wavelengths: 0.5,
            element_height_wavelengths: 0.5,
            antenna_spacing_wavelengths: 0.5,
            height: 10.0,
            distance_min: 60.0,
            distance_max: 80.0,
            angles: None,
            path_loss: PathLossConfig::default(),
            kappa: Kappa::Shared(10.0),
            rho: 1.0,
            sigma2_dbm: -110.0,
            sigma2: None,
            tau: None,
            coherence_slots: 200,
            data_power: 1.0,
            correlation: CorrelationConfig::default(),
            nmse_mode: NmseMode::Consistent,
            optimizer: Schedule::default(),
            codebook_size: None,
            reoptimize_every: 1,
            seed: 1,
            trials: 1000,
            sweep: SweepConfig::default(),
        }
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

impl ScenarioConfig {
    pub fn wavelength(&self) -> f64 {
        self.wavelength.unwrap_or(SPEED_OF_LIGHT / self.carrier_hz)
    }

    pub fn per_col(&self) -> usize {
        self.per_col.unwrap_or(self.elements / self.per_row.max(1))
    }

    pub fn thickness(&self) -> f64 {
        self.thickness.unwrap_or(self.thickness_wavelengths * self.wavelength())
    }

    pub fn sigma2_watts(&self) -> f64 {
        self.sigma2.unwrap_or_else(|| dbm_to_watts(self.sigma2_dbm))
    }

    pub fn tau(&self) -> usize {
        self.tau.unwrap_or(self.users)
    }

    pub fn kappas(&self) -> Vec<f64> {
        match &self.kappa {
            Kappa::Shared(k) => vec![*k; self.users],
            Kappa::PerUser(v) => v.clone(),
        }
    }

    pub fn c0(&self) -> f64 {
        self.path_loss.c0.unwrap_or_else(|| {
            let g = self.wavelength() / (4.0 * std::f64::consts::PI * self.path_loss.d0);
            g * g
        })
    }

    pub fn codebook_size(&self) -> usize {
        self.codebook_size.unwrap_or(10 * self.layers * self.elements)
    }

    /// Training SNR `τρ/σ²` in dB.
    pub fn snr_db(&self) -> f64 {
        10.0 * (self.tau() as f64 * self.rho / self.sigma2_watts()).log10()
    }

    /// Sets `ρ` so that `τρ/σ²` equals `snr_db`.
    pub fn with_snr_db(&self, snr_db: f64) -> Self {
        let mut out = self.clone();
        out.rho = 10f64.powf(snr_db / 10.0) * self.sigma2_watts() / self.tau() as f64;
        out
    }

    /// Same scenario with `N` elements on an `N_x`-wide grid chosen as
    /// close to square as `N` allows.
    pub fn with_elements(&self, elements: usize) -> Self {
        let mut out = self.clone();
        out.elements = elements;
        if elements % self.per_row == 0 && self.per_col.is_none() && elements / self.per_row >= 1 {
            let ny = elements / self.per_row;
            // Keep the configured width unless it makes the grid very lopsided.
            if ny * 2 >= self.per_row {
                return out;
            }
        }
        let mut nx = (elements as f64).sqrt().ceil() as usize;
        while elements % nx != 0 {
            nx += 1;
        }
        out.per_row = nx;
        out.per_col = None;
        out
    }

    /// Checks every invariant, naming the offending field.
    pub fn validate(&self) -> Result<()> {
        let err = |field: &str, msg: String| Err(SimError::Config(format!("{field}: {msg}")));
        for (field, v) in [("antennas", self.antennas), ("users", self.users), ("elements", self.elements), ("layers", self.layers), ("per_row", self.per_row)] {
            if v == 0 {
                return err(field, "must be at least 1".into());
            }
        }
        if self.elements % self.per_row != 0 && self.per_col.is_none() {
            return err("per_row", format!("{} does not divide elements = {}", self.per_row, self.elements));
        }
        if self.per_row * self.per_col() != self.elements {
            return err(
                "per_col",
                format!("grid {}x{} does not hold {} elements", self.per_row, self.per_col(), self.elements),
            );
        }
        if self.tau() < self.users {
            return err("tau", format!("{} pilots cannot be orthogonal for {} users", self.tau(), self.users));
        }
        let positive = [
            ("carrier_hz", self.carrier_hz),
            ("wavelength", self.wavelength()),
            ("thickness", self.thickness()),
            ("element_width_wavelengths", self.element_width_wavelengths),
            ("element_height_wavelengths", self.element_height_wavelengths),
            ("antenna_spacing_wavelengths", self.antenna_spacing_wavelengths),
            ("rho", self.rho),
            ("sigma2", self.sigma2_watts()),
            ("data_power", self.data_power),
            ("path_loss.d0", self.path_loss.d0),
            ("path_loss.exponent", self.path_loss.exponent),
            ("path_loss.c0", self.c0()),
        ];
        for (field, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return err(field, format!("must be positive and finite, got {v}"));
            }
        }
        if !(self.height >= 0.0) {
            return err("height", format!("must be non-negative, got {}", self.height));
        }
        if !(self.distance_min >= self.path_loss.d0) {
            return err(
                "distance_min",
                format!("{} is below the reference distance d0 = {}", self.distance_min, self.path_loss.d0),
            );
        }
        if !(self.distance_max >= self.distance_min) || !self.distance_max.is_finite() {
            return err("distance_max", format!("{} is below distance_min", self.distance_max));
        }
        let kappas = self.kappas();
        if kappas.len() != self.users {
            return err("kappa", format!("{} values given for {} users", kappas.len(), self.users));
        }
        if let Some(bad) = kappas.iter().find(|k| !(**k >= 0.0 && k.is_finite())) {
            return err("kappa", format!("must be non-negative, got {bad}"));
        }
        if let Some(angles) = &self.angles {
            if angles.len() != self.users {
                return err("angles", format!("{} pairs given for {} users", angles.len(), self.users));
            }
        }
        if self.correlation.kind == CorrelationKind::CustomFile && self.correlation.path.is_none() {
            return err("correlation.path", "required for custom-file correlation".into());
        }
        if self.trials < 2 {
            return err("trials", "need at least 2 for a standard error".into());
        }
        if self.reoptimize_every == 0 {
            return err("reoptimize_every", "must be at least 1".into());
        }
        if self.codebook_size() == 0 {
            return err("codebook_size", "must be at least 1".into());
        }
        let o = &self.optimizer;
        if o.max_iterations == 0 {
            return err("optimizer.max_iterations", "must be at least 1".into());
        }
        if !(o.shrink > 0.0 && o.shrink < 1.0) {
            return err("optimizer.shrink", format!("must lie in (0, 1), got {}", o.shrink));
        }
        if !(o.initial_step > 0.0) {
            return err("optimizer.initial_step", format!("must be positive, got {}", o.initial_step));
        }
        if !(o.tolerance >= 0.0) {
            return err("optimizer.tolerance", format!("must be non-negative, got {}", o.tolerance));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        hex::encode(digest)
    }
}

/// Parses TOML or JSON (detected from the first non-blank character),
/// applies `key.path=value` overrides and validates.
pub fn load_scenario_str(text: &str, overrides: &[String]) -> Result<ScenarioConfig> {
    let mut doc: Value = if text.trim_start().starts_with('{') {
        serde_json::from_str(text).map_err(|e| SimError::Config(format!("invalid JSON: {e}")))?
    } else {
        toml::from_str(text).map_err(|e| SimError::Config(format!("invalid TOML: {e}")))?
    };
    if !doc.is_object() {
        return Err(SimError::Config("configuration must be a table".into()));
    }
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    let cfg: ScenarioConfig = serde_path_to_error::deserialize(doc).map_err(|e| {
        let path = e.path().to_string();
        SimError::Config(format!("{path}: {}", e.into_inner()))
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_scenario(path: &Path, overrides: &[String]) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| SimError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    load_scenario_str(&text, overrides)
}

/// `a.b.c=value`; the value is read as a TOML literal, falling back to a
/// bare string.
fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| SimError::Config(format!("override {assignment:?} is not of the form key=value")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(SimError::Config(format!("override {assignment:?} has an empty key")));
    }
    let value: Value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(t) => serde_json::to_value(&t["v"]).map_err(|e| SimError::Config(e.to_string()))?,
        Err(_) => Value::String(raw.trim().to_string()),
    };
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| SimError::Config(format!("{}: not a table", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}
