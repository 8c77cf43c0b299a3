use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use pdc_core::boosting::BoostParams;
use pdc_core::domain::BusinessHours;
use pdc_core::forest::ForestParams;
use pdc_core::ingest::LevelShift;
use pdc_core::tuning::{BoostGrid, ForestGrid};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const TOOL_VERSION: &str = concat!("pdc ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    pub paths: Paths,
    pub data: DataWindow,
    #[serde(default)]
    pub synthetic: Option<Synthetic>,
    pub model: ModelConfig,
    pub clustering: ClusteringConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub zones: PathBuf,
    /// Defaults to `<output_dir>/orders.csv`, the file `generate` writes.
    #[serde(default)]
    pub orders: Option<PathBuf>,
    #[serde(default)]
    pub weather: Option<PathBuf>,
    #[serde(default)]
    pub holidays: Option<PathBuf>,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataWindow {
    #[serde(default = "default_hours")]
    pub business_hours: BusinessHours,
    pub train_start: NaiveDate,
    pub train_end: NaiveDate,
    pub test_start: NaiveDate,
    pub test_end: NaiveDate,
}

fn default_hours() -> BusinessHours {
    BusinessHours {
        open_minute: 630,
        close_minute: 1290,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Synthetic {
    /// Mean orders per interval at the hourly peak, one per zone.
    pub zone_levels: Vec<f64>,
    pub hourly_shape: [f64; 24],
    #[serde(default = "flat_week")]
    pub dow_multipliers: [f64; 7],
    #[serde(default)]
    pub events: Vec<LevelShift>,
}

fn flat_week() -> [f64; 7] {
    [1.0; 7]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Rf,
    Qrf,
    Boost,
    Myopic,
    SeasonalAvg,
    SeasonalQuantile,
}

impl Family {
    pub fn has_quantiles(self) -> bool {
        matches!(self, Family::Qrf | Family::SeasonalQuantile)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub family: Family,
    #[serde(default)]
    pub lagged: bool,
    #[serde(default)]
    pub weather: bool,
    /// Fixed hyperparameters; ignored when `grid` is present.
    #[serde(default)]
    pub forest: Option<ForestParams>,
    #[serde(default)]
    pub boost: Option<BoostParams>,
    #[serde(default)]
    pub grid: Option<GridConfig>,
    #[serde(default = "default_cv_k")]
    pub cv_k: usize,
}

fn default_cv_k() -> usize {
    10
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridConfig {
    Forest(ForestGrid),
    Boost(BoostGrid),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterMethod {
    Ckmc,
    CchcIce,
    Threshold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemandInput {
    Point,
    Quantiles,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusteringConfig {
    pub method: ClusterMethod,
    #[serde(default = "default_k_range")]
    pub k_range: [usize; 2],
    #[serde(default = "one")]
    pub min_cluster_size: usize,
    #[serde(default = "three")]
    pub k_min: usize,
    #[serde(default = "nine")]
    pub s_max: usize,
    #[serde(default = "nine_f")]
    pub d_max: f64,
    #[serde(default = "point")]
    pub demand_input: DemandInput,
    #[serde(default = "default_cuts")]
    pub band_cuts: Vec<f64>,
}

fn default_k_range() -> [usize; 2] {
    [3, 6]
}
fn one() -> usize {
    1
}
fn three() -> usize {
    3
}
fn nine() -> usize {
    9
}
fn nine_f() -> f64 {
    9.0
}
fn point() -> DemandInput {
    DemandInput::Point
}
fn default_cuts() -> Vec<f64> {
    vec![0.25, 0.5, 0.75]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyName {
    None,
    NearestPickup,
    ForwardLookingPredicted,
    ForwardLookingActual,
}

impl PolicyName {
    pub fn as_str(self) -> &'static str {
        match self {
            PolicyName::None => "none",
            PolicyName::NearestPickup => "nearest_pickup",
            PolicyName::ForwardLookingPredicted => "forward_looking_predicted",
            PolicyName::ForwardLookingActual => "forward_looking_actual",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub fleet_size: usize,
    pub service_minutes: u32,
    pub idle_threshold: u32,
    pub minutes_per_hop: f64,
    /// Simulated day; defaults to the first test day.
    pub day: Option<NaiveDate>,
    /// Policy of the single detailed run in `simulation.json`.
    pub policy: PolicyName,
    pub compare: Vec<PolicyName>,
    pub repetitions: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            fleet_size: 30,
            service_minutes: 3,
            idle_threshold: 5,
            minutes_per_hop: 4.0,
            day: None,
            policy: PolicyName::ForwardLookingPredicted,
            compare: vec![
                PolicyName::NearestPickup,
                PolicyName::ForwardLookingPredicted,
                PolicyName::ForwardLookingActual,
            ],
            repetitions: 20,
        }
    }
}

/// A parsed config plus where it came from.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: PipelineConfig,
    pub base_dir: PathBuf,
    pub hash: String,
}

impl Loaded {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.config.paths.output_dir)
    }

    pub fn orders_path(&self) -> PathBuf {
        match &self.config.paths.orders {
            Some(p) => self.resolve(p),
            None => self.output_dir().join("orders.csv"),
        }
    }
}

pub fn load(path: &Path, seed: Option<u64>, overrides: &[String]) -> Result<Loaded> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
    let mut value: Value =
        serde_json::from_str(&text).with_context(|| format!("config {} is not valid JSON", path.display()))?;
    for o in overrides {
        let (key, raw) = o
            .split_once('=')
            .with_context(|| format!("override `{o}` is not key=value"))?;
        let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        set_path(&mut value, key, parsed)?;
    }
    if let Some(s) = seed {
        set_path(&mut value, "seed", Value::from(s))?;
    }
    let config: PipelineConfig = serde_path_to_error::deserialize(value.clone())
        .map_err(|e| anyhow::anyhow!("invalid config field `{}`: {}", e.path(), e.inner()))?;
    validate(&config)?;
    let canonical = serde_json::to_string(&serde_json::to_value(&config)?)?;
    let digest = Sha256::digest(canonical.as_bytes());
    let hash = digest.iter().map(|b| format!("{b:02x}")).collect();
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Loaded { config, base_dir, hash })
}

fn set_path(root: &mut Value, dotted: &str, v: Value) -> Result<()> {
    let mut at = root;
    let parts: Vec<&str> = dotted.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let Value::Object(map) = at else {
            bail!("override `{dotted}`: `{}` is not an object", parts[..i].join("."));
        };
        if i + 1 == parts.len() {
            map.insert(part.to_string(), v);
            return Ok(());
        }
        at = map
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

fn validate(c: &PipelineConfig) -> Result<()> {
    let h = c.data.business_hours;
    if BusinessHours::new(h.open_minute, h.close_minute).is_err() {
        bail!(
            "data.business_hours: [{}, {}) is not a whole number of 15-minute intervals",
            h.open_minute,
            h.close_minute
        );
    }
    let d = &c.data;
    if d.train_start > d.train_end {
        bail!("data.train_end: precedes data.train_start");
    }
    if d.test_start > d.test_end {
        bail!("data.test_end: precedes data.test_start");
    }
    if d.test_start <= d.train_end {
        bail!("data.test_start: must follow data.train_end");
    }
    let m = &c.model;
    if m.cv_k < 2 {
        bail!("model.cv_k: must be >= 2");
    }
    match (m.family, &m.grid) {
        (Family::Rf | Family::Qrf, Some(GridConfig::Boost(_))) => {
            bail!("model.grid: boosting grid given for a forest family")
        }
        (Family::Boost, Some(GridConfig::Forest(_))) => bail!("model.grid: forest grid given for boosting"),
        _ => {}
    }
    if m.weather && c.paths.weather.is_none() {
        bail!("paths.weather: required when model.weather is true");
    }
    let cl = &c.clustering;
    if cl.k_range[0] < 2 || cl.k_range[0] > cl.k_range[1] {
        bail!(
            "clustering.k_range: [{}, {}] must satisfy 2 <= lower <= upper",
            cl.k_range[0],
            cl.k_range[1]
        );
    }
    if cl.min_cluster_size == 0 {
        bail!("clustering.min_cluster_size: must be >= 1");
    }
    if cl.k_min == 0 {
        bail!("clustering.k_min: must be >= 1");
    }
    if cl.s_max == 0 {
        bail!("clustering.s_max: must be >= 1");
    }
    if !(cl.d_max > 0.0) {
        bail!("clustering.d_max: must be > 0");
    }
    if cl.band_cuts.iter().any(|q| !(*q > 0.0 && *q < 1.0)) {
        bail!("clustering.band_cuts: cut points must lie in (0, 1)");
    }
    if cl.demand_input == DemandInput::Quantiles && !m.family.has_quantiles() {
        bail!("clustering.demand_input: quantile input needs a quantile model family");
    }
    let s = &c.simulation;
    if s.fleet_size == 0 {
        bail!("simulation.fleet_size: must be >= 1");
    }
    if s.service_minutes == 0 {
        bail!("simulation.service_minutes: must be >= 1");
    }
    if s.idle_threshold == 0 {
        bail!("simulation.idle_threshold: must be >= 1");
    }
    if !(s.minutes_per_hop > 0.0 && s.minutes_per_hop.is_finite()) {
        bail!("simulation.minutes_per_hop: must be > 0");
    }
    if s.repetitions == 0 {
        bail!("simulation.repetitions: must be >= 1");
    }
    if let Some(syn) = &c.synthetic {
        if syn
            .zone_levels
            .iter()
            .chain(&syn.hourly_shape)
            .chain(&syn.dow_multipliers)
            .any(|v| !(*v >= 0.0))
        {
            bail!("synthetic: rates and multipliers must be non-negative");
        }
    }
    Ok(())
}
