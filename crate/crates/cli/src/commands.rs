use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use pdc_core::benchmarks::{seasonal_average, seasonal_quantile, SeasonalIndex};
use pdc_core::boosting::{boost_predict, fit_boost, BoostModel, BoostParams};
use pdc_core::clustering::{cchc_ice, ckmc, threshold_clusters, CchcConstraints, ClusterInput, ClusterSet};
use pdc_core::domain::{IntervalGrid, IntervalIndex, Order, ZoneId, ZoneRegistry};
use pdc_core::forest::{fit_forest, forest_point, forest_quantiles, ForestMode, ForestModel, ForestParams};
use pdc_core::ingest::{
    aggregate_orders, assemble_features, generate_synthetic, read_holidays, read_orders_csv, read_weather_csv,
    write_orders_csv, FeatureOptions, SyntheticProfile, WeatherRecord,
};
use pdc_core::metrics::{
    mcrps, point_metrics, within_cluster_medians, MetricReport, QuantileForecast, ZoneMetrics, DEFAULT_LEVELS,
};
use pdc_core::simulator::{
    compare_policies, run_simulation, write_comparison_csv, DemandOracle, NamedPolicy, RelocationPolicy, SimConfig,
};
use pdc_core::trees::Dataset;
use pdc_core::tuning::{grid_search_cv, Candidate, Grid, ModelFamily, TuningResult};
use serde::{Deserialize, Serialize};

use crate::config::{ClusterMethod, DemandInput, Family, GridConfig, Loaded, PolicyName, TOOL_VERSION};

/// Levels written to the prediction file: the nine deciles plus the quartiles.
pub const PREDICTION_LEVELS: [f64; 11] = [0.1, 0.2, 0.25, 0.3, 0.4, 0.5, 0.6, 0.7, 0.75, 0.8, 0.9];

fn level_index(q: f64) -> usize {
    PREDICTION_LEVELS
        .iter()
        .position(|&l| l == q)
        .expect("level is written")
}

struct Inputs {
    registry: ZoneRegistry,
    grid: IntervalGrid,
}

fn inputs(ctx: &Loaded) -> Result<Inputs> {
    let zones_path = ctx.resolve(&ctx.config.paths.zones);
    let registry =
        ZoneRegistry::load(&zones_path).with_context(|| format!("loading zones {}", zones_path.display()))?;
    let d = &ctx.config.data;
    let grid = IntervalGrid::new(d.business_hours, d.train_start, d.test_end)?;
    Ok(Inputs { registry, grid })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn read_orders(ctx: &Loaded) -> Result<Vec<Order>> {
    let path = ctx.orders_path();
    let file = File::open(&path).with_context(|| format!("missing orders file {}", path.display()))?;
    read_orders_csv(file).with_context(|| format!("reading {}", path.display()))
}

pub fn generate(ctx: &Loaded) -> Result<()> {
    let Inputs { registry, grid } = inputs(ctx)?;
    let syn = ctx
        .config
        .synthetic
        .as_ref()
        .context("synthetic: section required by `generate`")?;
    if syn.zone_levels.len() != registry.len() {
        bail!(
            "synthetic.zone_levels: {} levels for {} zones",
            syn.zone_levels.len(),
            registry.len()
        );
    }
    let mut profile = SyntheticProfile::from_shape(&syn.zone_levels, syn.hourly_shape, syn.dow_multipliers);
    profile.events = syn.events.clone();
    let orders = generate_synthetic(&registry, &grid, &profile, ctx.config.seed)?;
    let path = ctx.output_dir().join("orders.csv");
    let mut w = create(&path)?;
    write_orders_csv(&mut w, &orders)?;
    w.flush()?;
    eprintln!("generate: {} orders -> {}", orders.len(), path.display());
    Ok(())
}

/// Feature tables for every pick-up zone over the whole grid.
struct Features {
    tables: Vec<pdc_core::ingest::FeatureTable>,
    series: Vec<pdc_core::domain::DemandSeries>,
}

fn features(ctx: &Loaded) -> Result<Features> {
    let Inputs { registry, grid } = inputs(ctx)?;
    let orders = read_orders(ctx)?;
    let agg = aggregate_orders(&orders, &registry, &grid)?;
    let weather: Option<Vec<WeatherRecord>> = match &ctx.config.paths.weather {
        Some(p) if ctx.config.model.weather => {
            let path = ctx.resolve(p);
            let f = File::open(&path).with_context(|| format!("missing weather file {}", path.display()))?;
            Some(read_weather_csv(f)?)
        }
        _ => None,
    };
    let holidays = match &ctx.config.paths.holidays {
        Some(p) => {
            let path = ctx.resolve(p);
            read_holidays(
                &fs::read_to_string(&path).with_context(|| format!("missing holidays file {}", path.display()))?,
            )?
        }
        None => BTreeSet::new(),
    };
    let opts = FeatureOptions {
        include_lags: ctx.config.model.lagged,
        include_weather: ctx.config.model.weather,
    };
    let tables = agg
        .series
        .iter()
        .map(|s| assemble_features(s, grid.hours, weather.as_deref(), &holidays, opts))
        .collect::<pdc_core::Result<Vec<_>>>()?;
    Ok(Features {
        tables,
        series: agg.series,
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", content = "model", rename_all = "snake_case")]
enum StoredModel {
    Forest(ForestModel),
    Boost(BoostModel),
    Seasonal(SeasonalIndex),
    Myopic,
}

#[derive(Debug, Serialize, Deserialize)]
struct ZoneModelFile {
    tool_version: String,
    config_hash: String,
    zone: ZoneId,
    family: Family,
    schema: Vec<String>,
    model: StoredModel,
}

fn model_path(ctx: &Loaded, zone: ZoneId) -> std::path::PathBuf {
    ctx.output_dir().join("models").join(format!("zone_{}.json", zone.0))
}

pub fn train(ctx: &Loaded) -> Result<()> {
    let f = features(ctx)?;
    let cfg = &ctx.config;
    let seed = cfg.seed;
    for table in &f.tables {
        let zone = table
            .rows
            .first()
            .map(|r| r.zone)
            .context("a pick-up zone has no feature rows")?;
        let train = table
            .filter(|r| r.target_interval.day >= cfg.data.train_start && r.target_interval.day <= cfg.data.train_end);
        let data = Dataset::new(train.features(), train.targets())?;
        let tuned = |family: ModelFamily, grid: Grid| -> Result<Candidate> {
            let result = grid_search_cv(&data, family, &grid, cfg.model.cv_k, seed)
                .with_context(|| format!("tuning zone {zone}"))?;
            write_tuning(ctx, zone, &result)?;
            Ok(*result.best_candidate())
        };
        let model = match cfg.model.family {
            Family::Rf | Family::Qrf => {
                let (mode, fam) = if cfg.model.family == Family::Rf {
                    (ForestMode::Rf, ModelFamily::Rf)
                } else {
                    (ForestMode::Qrf, ModelFamily::Qrf)
                };
                let params = match &cfg.model.grid {
                    Some(GridConfig::Forest(g)) => match tuned(fam, Grid::Forest(g.clone()))? {
                        Candidate::Forest(p) => p,
                        Candidate::Boost(_) => unreachable!("forest grid yields forest candidates"),
                    },
                    _ => seeded_forest(cfg.model.forest.unwrap_or_default(), seed),
                };
                StoredModel::Forest(fit_forest(&data, &params, mode)?)
            }
            Family::Boost => {
                let params = match &cfg.model.grid {
                    Some(GridConfig::Boost(g)) => match tuned(ModelFamily::Boost, Grid::Boost(g.clone()))? {
                        Candidate::Boost(p) => p,
                        Candidate::Forest(_) => unreachable!("boosting grid yields boosting candidates"),
                    },
                    _ => BoostParams {
                        base_seed: seed,
                        ..cfg.model.boost.unwrap_or_default()
                    },
                };
                StoredModel::Boost(fit_boost(&data, &params)?)
            }
            Family::SeasonalAvg | Family::SeasonalQuantile => StoredModel::Seasonal(SeasonalIndex::build(
                train.rows.iter().filter_map(|r| r.target.map(|t| (r.hour, r.dow, t))),
            )?),
            Family::Myopic => StoredModel::Myopic,
        };
        let file = ZoneModelFile {
            tool_version: TOOL_VERSION.into(),
            config_hash: ctx.hash.clone(),
            zone,
            family: cfg.model.family,
            schema: table.schema.clone(),
            model,
        };
        write_json(&model_path(ctx, zone), &file)?;
    }
    eprintln!(
        "train: {} zone models -> {}",
        f.tables.len(),
        ctx.output_dir().join("models").display()
    );
    Ok(())
}

fn seeded_forest(p: ForestParams, seed: u64) -> ForestParams {
    ForestParams {
        base_seed: seed,
        tree: pdc_core::trees::TreeParams { seed, ..p.tree },
        ..p
    }
}

fn write_tuning(ctx: &Loaded, zone: ZoneId, result: &TuningResult) -> Result<()> {
    let path = ctx.output_dir().join("tuning").join(format!("zone_{}.csv", zone.0));
    let mut w = create(&path)?;
    result.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

/// One row of `predictions.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub zone: ZoneId,
    pub interval: IntervalIndex,
    pub actual: f64,
    pub point: f64,
    /// Values at [`PREDICTION_LEVELS`], when the family is quantile-capable.
    pub quantiles: Option<Vec<f64>>,
}

pub fn predict(ctx: &Loaded) -> Result<()> {
    let f = features(ctx)?;
    let cfg = &ctx.config;
    let mut out = Vec::new();
    for (table, series) in f.tables.iter().zip(&f.series) {
        let zone = series.zone;
        let path = model_path(ctx, zone);
        let text = fs::read_to_string(&path)
            .with_context(|| format!("missing model {}; run `train` first", path.display()))?;
        let file: ZoneModelFile = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if file.schema != table.schema {
            bail!(
                "model {} was trained on features {:?}, config yields {:?}",
                path.display(),
                file.schema,
                table.schema
            );
        }
        let position: BTreeMap<IntervalIndex, usize> =
            series.intervals.iter().enumerate().map(|(k, i)| (*i, k)).collect();
        for row in table
            .rows
            .iter()
            .filter(|r| r.target_interval.day >= cfg.data.test_start && r.target_interval.day <= cfg.data.test_end)
        {
            let x = row.values();
            let (point, quantiles) = match &file.model {
                StoredModel::Forest(m) if m.mode == ForestMode::Qrf => {
                    let qs = forest_quantiles(m, &x, &PREDICTION_LEVELS)?;
                    (qs[level_index(0.5)], Some(qs))
                }
                StoredModel::Forest(m) => (forest_point(m, &x)?, None),
                StoredModel::Boost(m) => (boost_predict(m, &x)?, None),
                StoredModel::Seasonal(idx) if file.family == Family::SeasonalQuantile => {
                    let qs = PREDICTION_LEVELS
                        .iter()
                        .map(|&q| seasonal_quantile(idx, row.hour, row.dow, q))
                        .collect::<pdc_core::Result<Vec<_>>>()?;
                    (qs[level_index(0.5)], Some(qs))
                }
                StoredModel::Seasonal(idx) => (seasonal_average(idx, row.hour, row.dow), None),
                StoredModel::Myopic => {
                    let k = position[&row.target_interval];
                    (pdc_core::benchmarks::myopic_predict(&series.counts[..k]), None)
                }
            };
            out.push(Prediction {
                zone,
                interval: row.target_interval,
                actual: row.target.unwrap_or(0) as f64,
                point,
                quantiles,
            });
        }
    }
    let path = ctx.output_dir().join("predictions.csv");
    write_predictions(&path, &out)?;
    eprintln!("predict: {} rows -> {}", out.len(), path.display());
    Ok(())
}

fn write_predictions(path: &Path, rows: &[Prediction]) -> Result<()> {
    let with_q = rows.iter().any(|r| r.quantiles.is_some());
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut header: Vec<String> = ["zone", "date", "slot", "actual", "point"].map(String::from).to_vec();
    if with_q {
        header.extend(PREDICTION_LEVELS.iter().map(|q| format!("q{q}")));
    }
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.zone.0.to_string(),
            r.interval.day.to_string(),
            r.interval.slot.to_string(),
            r.actual.to_string(),
            r.point.to_string(),
        ];
        if let Some(q) = &r.quantiles {
            rec.extend(q.iter().map(|v| v.to_string()));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn read_predictions(ctx: &Loaded) -> Result<Vec<Prediction>> {
    let path = ctx.output_dir().join("predictions.csv");
    let file = File::open(&path).with_context(|| format!("missing {}; run `predict` first", path.display()))?;
    let mut rdr = csv::Reader::from_reader(file);
    let with_q = rdr.headers()?.len() > 5;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .parse::<f64>()
                .with_context(|| format!("bad number in {}", path.display()))
        };
        rows.push(Prediction {
            zone: ZoneId(rec[0].parse()?),
            interval: IntervalIndex {
                day: rec[1].parse::<NaiveDate>()?,
                slot: rec[2].parse()?,
            },
            actual: num(3)?,
            point: num(4)?,
            quantiles: if with_q {
                Some((5..5 + PREDICTION_LEVELS.len()).map(num).collect::<Result<_>>()?)
            } else {
                None
            },
        });
    }
    Ok(rows)
}

/// Predictions grouped by interval, each group ordered by zone.
fn by_interval(rows: &[Prediction]) -> BTreeMap<IntervalIndex, Vec<&Prediction>> {
    let mut map: BTreeMap<IntervalIndex, Vec<&Prediction>> = BTreeMap::new();
    for r in rows {
        map.entry(r.interval).or_default().push(r);
    }
    for group in map.values_mut() {
        group.sort_by_key(|r| r.zone);
    }
    map
}

fn cluster_once(
    ctx: &Loaded,
    registry: &ZoneRegistry,
    zones: &[ZoneId],
    demand: &[Vec<f64>],
    seed: u64,
) -> Result<ClusterSet> {
    let cl = &ctx.config.clustering;
    let locations: Vec<(f64, f64)> = zones
        .iter()
        .map(|&z| {
            registry
                .zone(z)
                .map(|r| (r.lat, r.lng))
                .context("zone missing from registry")
        })
        .collect::<Result<_>>()?;
    let point: Vec<f64> = demand.iter().map(|d| if d.len() == 3 { d[1] } else { d[0] }).collect();
    Ok(match cl.method {
        ClusterMethod::Ckmc => {
            let input = if demand.iter().all(|d| d.len() == 3) {
                let q: Vec<[f64; 3]> = demand.iter().map(|d| [d[0], d[1], d[2]]).collect();
                ClusterInput::quantile_demand(&locations, &q)?
            } else {
                ClusterInput::point_demand(&locations, &point)?
            };
            ckmc(&input, (cl.k_range[0], cl.k_range[1]), cl.min_cluster_size, seed)
                .context("clustering.k_range / clustering.min_cluster_size")?
                .clusters
        }
        ClusterMethod::CchcIce => {
            let constraints = CchcConstraints {
                k_min: cl.k_min,
                s_max: cl.s_max,
                d_max: cl.d_max,
            };
            cchc_ice(
                &ClusterInput::demand_only(demand.to_vec())?,
                &registry.induced_adjacency(zones),
                &constraints,
            )?
            .clusters
        }
        ClusterMethod::Threshold => threshold_clusters(&point, &cl.band_cuts)?,
    })
}

#[derive(Serialize)]
struct HeatCell {
    zone: ZoneId,
    lat: f64,
    lng: f64,
    cluster_id: usize,
    median_value: f64,
}

#[derive(Serialize)]
struct HeatFrame {
    interval: String,
    zones: Vec<HeatCell>,
}

#[derive(Serialize)]
struct Heatmap {
    tool_version: String,
    config_hash: String,
    method: ClusterMethod,
    intervals: Vec<HeatFrame>,
}

pub fn cluster(ctx: &Loaded) -> Result<()> {
    let Inputs { registry, grid } = inputs(ctx)?;
    let preds = read_predictions(ctx)?;
    let quantile_input = ctx.config.clustering.demand_input == DemandInput::Quantiles;
    if quantile_input && preds.iter().any(|p| p.quantiles.is_none()) {
        bail!("clustering.demand_input: predictions carry no quantile columns");
    }
    let mut predicted_rows = Vec::new();
    let mut actual_rows = Vec::new();
    let mut frames = Vec::new();
    for (k, (interval, group)) in by_interval(&preds).into_iter().enumerate() {
        let zones: Vec<ZoneId> = group.iter().map(|p| p.zone).collect();
        let predicted: Vec<Vec<f64>> = group
            .iter()
            .map(|p| match (&p.quantiles, quantile_input) {
                (Some(q), true) => vec![q[level_index(0.25)], q[level_index(0.5)], q[level_index(0.75)]],
                _ => vec![p.point],
            })
            .collect();
        let actual: Vec<Vec<f64>> = group.iter().map(|p| vec![p.actual]).collect();
        let seed = ctx.config.seed.wrapping_add(k as u64);
        let p_set = cluster_once(ctx, &registry, &zones, &predicted, seed)?;
        let a_set = cluster_once(ctx, &registry, &zones, &actual, seed)?;
        let p_point: Vec<f64> = predicted
            .iter()
            .map(|d| if d.len() == 3 { d[1] } else { d[0] })
            .collect();
        let a_point: Vec<f64> = actual.iter().map(|d| d[0]).collect();
        let p_med = within_cluster_medians(&p_point, &p_set)?;
        let a_med = within_cluster_medians(&a_point, &a_set)?;
        let stamp = grid.start_timestamp(&interval).to_string();
        let mut cells = Vec::new();
        for (i, &z) in zones.iter().enumerate() {
            predicted_rows.push((stamp.clone(), z, p_set.labels[i], p_med[i]));
            actual_rows.push((stamp.clone(), z, a_set.labels[i], a_med[i]));
            let info = registry.zone(z).context("zone missing from registry")?;
            cells.push(HeatCell {
                zone: z,
                lat: info.lat,
                lng: info.lng,
                cluster_id: p_set.labels[i],
                median_value: p_med[i],
            });
        }
        frames.push(HeatFrame {
            interval: stamp,
            zones: cells,
        });
    }
    let dir = ctx.output_dir();
    write_cluster_csv(&dir.join("clusters.csv"), &predicted_rows)?;
    write_cluster_csv(&dir.join("clusters_actual.csv"), &actual_rows)?;
    write_json(
        &dir.join("heatmap.json"),
        &Heatmap {
            tool_version: TOOL_VERSION.into(),
            config_hash: ctx.hash.clone(),
            method: ctx.config.clustering.method,
            intervals: frames,
        },
    )?;
    eprintln!(
        "cluster: {} intervals -> {}",
        predicted_rows.len() / registry.pickup_zones().len().max(1),
        dir.display()
    );
    Ok(())
}

type ClusterRow = (String, ZoneId, usize, f64);

fn write_cluster_csv(path: &Path, rows: &[ClusterRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["interval", "zone", "cluster_id", "within_cluster_median"])?;
    for (interval, zone, id, median) in rows {
        w.write_record([interval.clone(), zone.0.to_string(), id.to_string(), median.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn read_cluster_csv(path: &Path) -> Result<Vec<ClusterRow>> {
    let file = File::open(path).with_context(|| format!("missing {}; run `cluster` first", path.display()))?;
    let mut rdr = csv::Reader::from_reader(file);
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        rows.push((
            rec[0].to_string(),
            ZoneId(rec[1].parse()?),
            rec[2].parse()?,
            rec[3].parse()?,
        ));
    }
    Ok(rows)
}

pub fn evaluate(ctx: &Loaded) -> Result<()> {
    let preds = read_predictions(ctx)?;
    let mut per_zone: BTreeMap<ZoneId, Vec<&Prediction>> = BTreeMap::new();
    for p in &preds {
        per_zone.entry(p.zone).or_default().push(p);
    }
    let deciles: Vec<usize> = DEFAULT_LEVELS.iter().map(|&q| level_index(q)).collect();
    let mut zones = Vec::new();
    for (&zone, rows) in &per_zone {
        let actual: Vec<f64> = rows.iter().map(|r| r.actual).collect();
        let point: Vec<f64> = rows.iter().map(|r| r.point).collect();
        let crps = if rows.iter().all(|r| r.quantiles.is_some()) {
            let forecasts = rows
                .iter()
                .map(|r| {
                    let q = r.quantiles.as_ref().expect("checked above");
                    QuantileForecast::new(DEFAULT_LEVELS.to_vec(), deciles.iter().map(|&i| q[i]).collect())
                })
                .collect::<pdc_core::Result<Vec<_>>>()?;
            Some(mcrps(&forecasts, &actual)?)
        } else {
            None
        };
        zones.push(ZoneMetrics {
            zone,
            metrics: point_metrics(&actual, &point)?,
            mcrps: crps,
        });
    }
    let dir = ctx.output_dir();
    let mut w = create(&dir.join("metrics.csv"))?;
    MetricReport::new(zones)?.write_csv(&mut w)?;
    w.flush()?;

    let predicted = read_cluster_csv(&dir.join("clusters.csv"))?;
    let actual = read_cluster_csv(&dir.join("clusters_actual.csv"))?;
    if predicted.len() != actual.len() {
        bail!("clusters.csv and clusters_actual.csv cover different intervals");
    }
    let mut pairs: BTreeMap<ZoneId, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (p, a) in predicted.iter().zip(&actual) {
        if p.0 != a.0 || p.1 != a.1 {
            bail!("cluster files disagree at interval {} zone {}", p.0, p.1);
        }
        let e = pairs.entry(p.1).or_default();
        e.0.push(a.3);
        e.1.push(p.3);
    }
    let zones = pairs
        .into_iter()
        .map(|(zone, (a, p))| {
            Ok(ZoneMetrics {
                zone,
                metrics: point_metrics(&a, &p)?,
                mcrps: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut w = create(&dir.join("cluster_eval.csv"))?;
    MetricReport::new(zones)?.write_csv(&mut w)?;
    w.flush()?;
    eprintln!("evaluate: metrics.csv, cluster_eval.csv -> {}", dir.display());
    Ok(())
}

#[derive(Serialize)]
struct SimulationArtifact<'a> {
    tool_version: String,
    config_hash: String,
    config: SimConfig,
    policy: &'a str,
    kpis: pdc_core::simulator::Kpis,
    per_order: Vec<pdc_core::simulator::OrderOutcome>,
}

pub fn simulate(ctx: &Loaded) -> Result<()> {
    let Inputs { registry, .. } = inputs(ctx)?;
    let s = &ctx.config.simulation;
    let hours = ctx.config.data.business_hours;
    let day = s.day.unwrap_or(ctx.config.data.test_start);
    let orders: Vec<Order> = read_orders(ctx)?
        .into_iter()
        .filter(|o| o.arrival.date == day)
        .collect();
    let preds = read_predictions(ctx)?;
    let oracle = |actual: bool| -> Result<DemandOracle> {
        let mut forecasts = vec![vec![0.0; registry.len()]; hours.slots_per_day() as usize];
        let mut seen = false;
        for p in preds.iter().filter(|p| p.interval.day == day) {
            forecasts[p.interval.slot as usize][p.zone.0] = if actual { p.actual } else { p.point };
            seen = true;
        }
        if !seen {
            bail!("simulation.day: no predictions for {day}");
        }
        Ok(DemandOracle { hours, forecasts })
    };
    let policy_of = |name: PolicyName| -> Result<RelocationPolicy> {
        Ok(match name {
            PolicyName::None => RelocationPolicy::None,
            PolicyName::NearestPickup => RelocationPolicy::NearestPickup,
            PolicyName::ForwardLookingPredicted => RelocationPolicy::ForwardLooking { oracle: oracle(false)? },
            PolicyName::ForwardLookingActual => RelocationPolicy::ForwardLooking { oracle: oracle(true)? },
        })
    };
    let config = SimConfig {
        fleet_size: s.fleet_size,
        service_minutes: s.service_minutes,
        idle_threshold: s.idle_threshold,
        minutes_per_hop: s.minutes_per_hop,
        hours,
        seed: ctx.config.seed,
    };
    let result = run_simulation(&orders, &registry, &config, &policy_of(s.policy)?)?;
    let dir = ctx.output_dir();
    write_json(
        &dir.join("simulation.json"),
        &SimulationArtifact {
            tool_version: TOOL_VERSION.into(),
            config_hash: ctx.hash.clone(),
            config,
            policy: s.policy.as_str(),
            kpis: result.kpis,
            per_order: result.per_order,
        },
    )?;
    let named = s
        .compare
        .iter()
        .map(|&p| {
            Ok(NamedPolicy {
                name: p.as_str().into(),
                policy: policy_of(p)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let rows = compare_policies(&orders, &registry, &config, &named, s.repetitions, ctx.config.seed)?;
    let mut w = create(&dir.join("policy_comparison.csv"))?;
    write_comparison_csv(&rows, &mut w)?;
    w.flush()?;
    eprintln!("simulate: {} orders on {day} -> {}", orders.len(), dir.display());
    Ok(())
}
