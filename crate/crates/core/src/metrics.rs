//! Forecast scoring: point errors, CRPS over quantile forecasts and the
//! within-cluster median comparison used for predict-then-cluster.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::clustering::ClusterSet;
use crate::domain::ZoneId;
use crate::error::{Error, Result};

/// Quantile levels 0.1, 0.2, ..., 0.9.
pub const DEFAULT_LEVELS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointMetrics {
    pub mae: f64,
    pub rmse: f64,
    pub rmsle: f64,
    /// Population standard deviation of `actual - predicted`.
    pub resid_std: f64,
}

pub fn point_metrics(actual: &[f64], predicted: &[f64]) -> Result<PointMetrics> {
    if actual.len() != predicted.len() {
        return Err(Error::LengthMismatch(format!(
            "{} actuals vs {} predictions",
            actual.len(),
            predicted.len()
        )));
    }
    if actual.is_empty() {
        return Err(Error::Empty("no predictions to score".into()));
    }
    if let Some(p) = predicted.iter().chain(actual).find(|v| !(**v >= 0.0)) {
        return Err(Error::InvalidInput(format!("RMSLE needs non-negative values, got {p}")));
    }
    let n = actual.len() as f64;
    let resid: Vec<f64> = actual.iter().zip(predicted).map(|(a, p)| a - p).collect();
    let mae = resid.iter().map(|r| r.abs()).sum::<f64>() / n;
    let rmse = (resid.iter().map(|r| r * r).sum::<f64>() / n).sqrt();
    let rmsle = (actual
        .iter()
        .zip(predicted)
        .map(|(a, p)| (p.ln_1p() - a.ln_1p()).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    let mean = resid.iter().sum::<f64>() / n;
    let resid_std = (resid.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
    Ok(PointMetrics {
        mae,
        rmse,
        rmsle,
        resid_std,
    })
}

/// Sorted quantile levels with their predicted values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileForecast {
    levels: Vec<f64>,
    values: Vec<f64>,
}

impl QuantileForecast {
    /// Levels must be strictly increasing inside (0, 1). Values are sorted,
    /// since crossing quantiles have no CDF reading.
    pub fn new(levels: Vec<f64>, mut values: Vec<f64>) -> Result<Self> {
        if levels.len() != values.len() {
            return Err(Error::LengthMismatch(format!(
                "{} levels vs {} values",
                levels.len(),
                values.len()
            )));
        }
        if levels.is_empty() {
            return Err(Error::Empty("quantile forecast".into()));
        }
        if let Some(&q) = levels.iter().find(|q| !(**q > 0.0 && **q < 1.0)) {
            return Err(Error::InvalidQuantile(q));
        }
        if levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput(
                "quantile levels must be strictly increasing".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("quantile values must be finite".into()));
        }
        values.sort_by(f64::total_cmp);
        Ok(Self { levels, values })
    }

    /// A degenerate forecast: every level predicts `value`.
    pub fn point_mass(value: f64) -> Self {
        Self {
            levels: DEFAULT_LEVELS.to_vec(),
            values: vec![value; DEFAULT_LEVELS.len()],
        }
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Piecewise-linear CDF through `(values[k], levels[k])`, 0 left of the first
/// knot and 1 from the last knot on; equal knots act as jumps.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalCdf {
    pub knots: Vec<f64>,
    pub levels: Vec<f64>,
}

impl EmpiricalCdf {
    pub fn eval(&self, t: f64) -> f64 {
        let k = self.knots.len();
        if t < self.knots[0] {
            return 0.0;
        }
        if t >= self.knots[k - 1] {
            return 1.0;
        }
        // Last knot <= t; it exists and is not the final knot.
        let i = self.knots.partition_point(|&x| x <= t) - 1;
        let (a, b) = (self.knots[i], self.knots[i + 1]);
        let (qa, qb) = (self.levels[i], self.levels[i + 1]);
        qa + (t - a) / (b - a) * (qb - qa)
    }
}

pub fn empirical_cdf(f: &QuantileForecast) -> EmpiricalCdf {
    EmpiricalCdf {
        knots: f.values.clone(),
        levels: f.levels.clone(),
    }
}

/// `int_a^b g(t)^2 dt` for `g` linear with `g(a) = ga`, `g(b) = gb`.
fn linear_sq_integral(a: f64, b: f64, ga: f64, gb: f64) -> f64 {
    (b - a) * (ga * ga + ga * gb + gb * gb) / 3.0
}

/// Exact `int (F(t) - 1(t >= y))^2 dt` for the forecast's piecewise CDF.
pub fn crps(f: &QuantileForecast, y: f64) -> f64 {
    let x = &f.values;
    let q = &f.levels;
    let first = x[0];
    let last = x[x.len() - 1];
    let mut total = 0.0;
    if y < first {
        total += first - y;
    }
    if y > last {
        total += y - last;
    }
    for k in 0..x.len() - 1 {
        let (a, b) = (x[k], x[k + 1]);
        if b <= a {
            continue;
        }
        let slope = (q[k + 1] - q[k]) / (b - a);
        let cdf = |t: f64| q[k] + (t - a) * slope;
        if y > a {
            let hi = b.min(y);
            total += linear_sq_integral(a, hi, cdf(a), cdf(hi));
        }
        if y < b {
            let lo = a.max(y);
            total += linear_sq_integral(lo, b, cdf(lo) - 1.0, cdf(b) - 1.0);
        }
    }
    total
}

/// Mean CRPS over aligned forecasts and outcomes.
pub fn mcrps(forecasts: &[QuantileForecast], actuals: &[f64]) -> Result<f64> {
    if forecasts.len() != actuals.len() {
        return Err(Error::LengthMismatch(format!(
            "{} forecasts vs {} actuals",
            forecasts.len(),
            actuals.len()
        )));
    }
    if forecasts.is_empty() {
        return Err(Error::Empty("no forecasts to score".into()));
    }
    let total: f64 = forecasts.iter().zip(actuals).map(|(f, &y)| crps(f, y)).sum();
    Ok(total / forecasts.len() as f64)
}

/// Median with the mean of the two central values for even sizes.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Per zone, the median demand of the cluster it belongs to.
pub fn within_cluster_medians(demand: &[f64], clusters: &ClusterSet) -> Result<Vec<f64>> {
    if clusters.labels.len() != demand.len() {
        return Err(Error::LengthMismatch(format!(
            "{} zones clustered vs {} demand values",
            clusters.labels.len(),
            demand.len()
        )));
    }
    clusters.check_partition()?;
    let per_cluster: Vec<f64> = clusters
        .clusters
        .iter()
        .map(|members| median(&members.iter().map(|&z| demand[z]).collect::<Vec<_>>()))
        .collect();
    Ok(clusters.labels.iter().map(|&l| per_cluster[l]).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct WithinClusterEval {
    /// `(actual median, predicted median)` per zone.
    pub pairs: Vec<(f64, f64)>,
    pub metrics: PointMetrics,
}

/// Compares each zone's actual within-cluster median (actual demand over the
/// actual-demand clustering) with its predicted within-cluster median
/// (predicted demand over the predicted-demand clustering).
pub fn within_cluster_median_eval(
    actual: &[f64],
    actual_clusters: &ClusterSet,
    predicted: &[f64],
    predicted_clusters: &ClusterSet,
) -> Result<WithinClusterEval> {
    if actual.len() != predicted.len() {
        return Err(Error::LengthMismatch("actual and predicted zone counts differ".into()));
    }
    let a = within_cluster_medians(actual, actual_clusters)?;
    let p = within_cluster_medians(predicted, predicted_clusters)?;
    let metrics = point_metrics(&a, &p)?;
    Ok(WithinClusterEval {
        pairs: a.into_iter().zip(p).collect(),
        metrics,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZoneMetrics {
    pub zone: ZoneId,
    pub metrics: PointMetrics,
    pub mcrps: Option<f64>,
}

/// Per-zone scores with their cross-zone mean and population std.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub zones: Vec<ZoneMetrics>,
    pub mean: ZoneSummary,
    pub std: ZoneSummary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ZoneSummary {
    pub mae: f64,
    pub rmse: f64,
    pub rmsle: f64,
    pub resid_std: f64,
    pub mcrps: Option<f64>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl MetricReport {
    pub fn new(zones: Vec<ZoneMetrics>) -> Result<Self> {
        if zones.is_empty() {
            return Err(Error::Empty("metric report needs at least one zone".into()));
        }
        let column = |f: &dyn Fn(&ZoneMetrics) -> f64| mean_std(&zones.iter().map(f).collect::<Vec<_>>());
        let mae = column(&|z| z.metrics.mae);
        let rmse = column(&|z| z.metrics.rmse);
        let rmsle = column(&|z| z.metrics.rmsle);
        let resid = column(&|z| z.metrics.resid_std);
        let mcrps = if zones.iter().all(|z| z.mcrps.is_some()) {
            Some(column(&|z| z.mcrps.unwrap_or(0.0)))
        } else {
            None
        };
        let summary = |pick: fn((f64, f64)) -> f64| ZoneSummary {
            mae: pick(mae),
            rmse: pick(rmse),
            rmsle: pick(rmsle),
            resid_std: pick(resid),
            mcrps: mcrps.map(pick),
        };
        Ok(Self {
            mean: summary(|p| p.0),
            std: summary(|p| p.1),
            zones,
        })
    }

    /// `zone,mae,rmse,rmsle,resid_std[,mcrps]` with `mean` and `std` rows last.
    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let with_crps = self.mean.mcrps.is_some();
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["zone", "mae", "rmse", "rmsle", "resid_std"];
        if with_crps {
            header.push("mcrps");
        }
        wtr.write_record(&header)?;
        let row = |label: String, m: [f64; 4], c: Option<f64>| {
            let mut r = vec![label];
            r.extend(m.iter().map(|v| v.to_string()));
            if with_crps {
                r.push(c.map_or(String::new(), |v| v.to_string()));
            }
            r
        };
        for z in &self.zones {
            let m = z.metrics;
            wtr.write_record(row(z.zone.to_string(), [m.mae, m.rmse, m.rmsle, m.resid_std], z.mcrps))?;
        }
        for (label, s) in [("mean", self.mean), ("std", self.std)] {
            wtr.write_record(row(label.into(), [s.mae, s.rmse, s.rmsle, s.resid_std], s.mcrps))?;
        }
        wtr.flush()?;
        Ok(())
    }
}
