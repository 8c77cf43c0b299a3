//! Raw orders, weather and holidays in; per-zone demand series and feature
//! tables out. Also the seeded synthetic order generator used in place of
//! proprietary transaction logs.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::domain::{
    day_of_week, BusinessHours, DemandSeries, IntervalGrid, IntervalIndex, Order, Timestamp, ZoneId, ZoneRegistry,
    INTERVAL_MINUTES,
};
use crate::error::{Error, Result};

/// Number of lagged demand terms appended by the lagged-dependent variants.
pub const LAG_TERMS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeatherRecord {
    pub day: NaiveDate,
    pub hour: u32,
    pub temp: f64,
    pub precip: f64,
    pub wind: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FeatureOptions {
    pub include_lags: bool,
    pub include_weather: bool,
}

/// Predictors for one target interval of one zone.
///
/// Calendar fields describe the target interval itself; `lags[0]` is the
/// count of the interval immediately before it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub zone: ZoneId,
    pub target_interval: IntervalIndex,
    pub hour: u32,
    pub dow: u32,
    pub holiday: bool,
    pub weather: Option<[f64; 3]>,
    pub lags: Option<[u32; LAG_TERMS]>,
    pub target: Option<u32>,
}

impl FeatureRow {
    /// Numeric feature vector in schema order.
    pub fn values(&self) -> Vec<f64> {
        let mut v = vec![self.hour as f64, self.dow as f64, if self.holiday { 1.0 } else { 0.0 }];
        if let Some(w) = self.weather {
            v.extend_from_slice(&w);
        }
        if let Some(lags) = self.lags {
            v.extend(lags.iter().map(|&l| l as f64));
        }
        v
    }
}

pub fn feature_schema(opts: FeatureOptions) -> Vec<String> {
    let mut schema = vec!["hour".to_string(), "dow".into(), "holiday".into()];
    if opts.include_weather {
        schema.extend(["temp".to_string(), "precip".into(), "wind".into()]);
    }
    if opts.include_lags {
        schema.extend((0..LAG_TERMS).map(|k| format!("lag_{}", k + 1)));
    }
    schema
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTable {
    pub schema: Vec<String>,
    pub rows: Vec<FeatureRow>,
}

impl FeatureTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn features(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(FeatureRow::values).collect()
    }

    /// Targets as reals; rows without a target map to NaN.
    pub fn targets(&self) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.target.map_or(f64::NAN, |t| t as f64))
            .collect()
    }

    /// Rows whose target interval satisfies `keep`.
    pub fn filter(&self, mut keep: impl FnMut(&FeatureRow) -> bool) -> FeatureTable {
        FeatureTable {
            schema: self.schema.clone(),
            rows: self.rows.iter().filter(|r| keep(r)).cloned().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregation {
    /// One series per pick-up zone, in zone order.
    pub series: Vec<DemandSeries>,
    /// Orders outside business hours or outside the grid's days.
    pub dropped: usize,
}

/// Counts orders per pick-up zone and grid interval.
pub fn aggregate_orders(orders: &[Order], registry: &ZoneRegistry, grid: &IntervalGrid) -> Result<Aggregation> {
    let pickups = registry.pickup_zones();
    let mut slot_of_zone = vec![None; registry.len()];
    for (k, z) in pickups.iter().enumerate() {
        slot_of_zone[z.0] = Some(k);
    }
    let mut counts = vec![vec![0u32; grid.len()]; pickups.len()];
    let mut dropped = 0;
    for order in orders {
        let row = slot_of_zone
            .get(order.pickup.0)
            .copied()
            .flatten()
            .ok_or_else(|| Error::UnknownZone {
                order_id: order.id.clone(),
                zone: order.pickup.0,
            })?;
        if order.destination.0 >= registry.len() {
            return Err(Error::UnknownZone {
                order_id: order.id.clone(),
                zone: order.destination.0,
            });
        }
        match grid.position_of(&order.arrival) {
            Some(pos) => counts[row][pos] += 1,
            None => dropped += 1,
        }
    }
    let series = pickups
        .into_iter()
        .zip(counts)
        .map(|(zone, c)| DemandSeries {
            zone,
            intervals: grid.intervals.clone(),
            counts: c,
        })
        .collect();
    Ok(Aggregation { series, dropped })
}

/// Builds the feature table of one zone's series.
///
/// With lags, the first [`LAG_TERMS`] intervals produce no row. Lags follow
/// the series order, so the first interval of a day looks back into the
/// previous day's closing intervals.
pub fn assemble_features(
    series: &DemandSeries,
    hours: BusinessHours,
    weather: Option<&[WeatherRecord]>,
    holidays: &BTreeSet<NaiveDate>,
    opts: FeatureOptions,
) -> Result<FeatureTable> {
    let weather_by_hour: Option<BTreeMap<(NaiveDate, u32), [f64; 3]>> = if opts.include_weather {
        let records = weather.ok_or_else(|| Error::MissingWeather(vec!["all hours".into()]))?;
        let mut map = BTreeMap::new();
        for r in records {
            if map.insert((r.day, r.hour), [r.temp, r.precip, r.wind]).is_some() {
                return Err(Error::InvalidInput(format!(
                    "duplicate weather record for {} hour {}",
                    r.day, r.hour
                )));
            }
        }
        Some(map)
    } else {
        None
    };

    let first = if opts.include_lags { LAG_TERMS } else { 0 };
    let mut rows = Vec::with_capacity(series.len().saturating_sub(first));
    let mut missing = BTreeSet::new();
    for k in first..series.len() {
        let interval = series.intervals[k];
        let hour = hours.slot_start_minute(interval.slot) / 60;
        let weather = match &weather_by_hour {
            Some(map) => match map.get(&(interval.day, hour)) {
                Some(w) => Some(*w),
                None => {
                    missing.insert(format!("{} hour {hour}", interval.day));
                    None
                }
            },
            None => None,
        };
        let lags = opts.include_lags.then(|| {
            let mut lags = [0u32; LAG_TERMS];
            for (j, lag) in lags.iter_mut().enumerate() {
                *lag = series.counts[k - 1 - j];
            }
            lags
        });
        rows.push(FeatureRow {
            zone: series.zone,
            target_interval: interval,
            hour,
            dow: day_of_week(interval.day),
            holiday: holidays.contains(&interval.day),
            weather,
            lags,
            target: Some(series.counts[k]),
        });
    }
    if !missing.is_empty() {
        return Err(Error::MissingWeather(missing.into_iter().collect()));
    }
    Ok(FeatureTable {
        schema: feature_schema(opts),
        rows,
    })
}

/// A multiplicative demand shock over consecutive intervals of one day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelShift {
    /// Affected zone; `None` shifts every zone.
    pub zone: Option<ZoneId>,
    pub day: NaiveDate,
    pub start_slot: u32,
    pub slots: u32,
    pub multiplier: f64,
}

/// Expected orders per 15-minute interval: `base[zone][hour] * dow[dow] * events`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticProfile {
    pub base_rates: Vec<[f64; 24]>,
    pub dow_multipliers: [f64; 7],
    #[serde(default)]
    pub events: Vec<LevelShift>,
}

impl SyntheticProfile {
    /// Per-zone level times a shared hourly shape.
    pub fn from_shape(zone_levels: &[f64], hourly_shape: [f64; 24], dow_multipliers: [f64; 7]) -> Self {
        let base_rates = zone_levels
            .iter()
            .map(|&level| {
                let mut row = [0.0; 24];
                for (r, s) in row.iter_mut().zip(hourly_shape) {
                    *r = level * s;
                }
                row
            })
            .collect();
        Self {
            base_rates,
            dow_multipliers,
            events: Vec::new(),
        }
    }

    pub fn rate(&self, zone: ZoneId, interval: &IntervalIndex, hours: BusinessHours) -> f64 {
        let hour = (hours.slot_start_minute(interval.slot) / 60) as usize;
        let mut rate = self.base_rates[zone.0][hour] * self.dow_multipliers[day_of_week(interval.day) as usize];
        for e in &self.events {
            let zone_hit = e.zone.is_none_or(|z| z == zone);
            if zone_hit
                && e.day == interval.day
                && interval.slot >= e.start_slot
                && interval.slot < e.start_slot + e.slots
            {
                rate *= e.multiplier;
            }
        }
        rate
    }

    fn validate(&self, registry: &ZoneRegistry) -> Result<()> {
        if self.base_rates.len() != registry.len() {
            return Err(Error::LengthMismatch(format!(
                "profile has {} zones, network has {}",
                self.base_rates.len(),
                registry.len()
            )));
        }
        let negative = self.base_rates.iter().flatten().any(|r| !(*r >= 0.0))
            || self.dow_multipliers.iter().any(|m| !(*m >= 0.0))
            || self.events.iter().any(|e| !(e.multiplier >= 0.0));
        if negative {
            return Err(Error::InvalidInput("synthetic rates must be non-negative".into()));
        }
        Ok(())
    }
}

/// Draws Poisson order counts per pick-up zone and interval, with arrival
/// minutes uniform inside the interval and destinations uniform over all zones.
pub fn generate_synthetic(
    registry: &ZoneRegistry,
    grid: &IntervalGrid,
    profile: &SyntheticProfile,
    seed: u64,
) -> Result<Vec<Order>> {
    profile.validate(registry)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pickups = registry.pickup_zones();
    let mut orders = Vec::new();
    for interval in &grid.intervals {
        let start = grid.hours.slot_start_minute(interval.slot);
        let mut batch = Vec::new();
        for &zone in &pickups {
            let rate = profile.rate(zone, interval, grid.hours);
            let count = if rate > 0.0 {
                Poisson::new(rate)
                    .map_err(|e| Error::InvalidInput(format!("poisson rate {rate}: {e}")))?
                    .sample(&mut rng) as u64
            } else {
                0
            };
            for _ in 0..count {
                let minute = start + rng.random_range(0..INTERVAL_MINUTES);
                let destination = ZoneId(rng.random_range(0..registry.len()));
                batch.push((minute, zone, destination));
            }
        }
        batch.sort_by_key(|&(minute, zone, _)| (minute, zone));
        for (minute, pickup, destination) in batch {
            orders.push(Order {
                id: format!("o{:07}", orders.len()),
                arrival: Timestamp {
                    date: interval.day,
                    minute,
                },
                pickup,
                destination,
            });
        }
    }
    Ok(orders)
}

#[derive(Debug, Serialize, Deserialize)]
struct OrderCsvRow {
    order_id: String,
    timestamp: String,
    pickup_zone: usize,
    dest_zone: usize,
}

/// Reads `order_id,timestamp,pickup_zone,dest_zone`.
pub fn read_orders_csv(reader: impl Read) -> Result<Vec<Order>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut orders = Vec::new();
    for row in rdr.deserialize() {
        let row: OrderCsvRow = row?;
        orders.push(Order {
            arrival: Timestamp::parse(&row.timestamp)?,
            id: row.order_id,
            pickup: ZoneId(row.pickup_zone),
            destination: ZoneId(row.dest_zone),
        });
    }
    Ok(orders)
}

pub fn write_orders_csv(writer: impl Write, orders: &[Order]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for o in orders {
        wtr.serialize(OrderCsvRow {
            order_id: o.id.clone(),
            timestamp: o.arrival.to_string(),
            pickup_zone: o.pickup.0,
            dest_zone: o.destination.0,
        })?;
    }
    if orders.is_empty() {
        wtr.write_record(["order_id", "timestamp", "pickup_zone", "dest_zone"])?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Deserialize)]
struct WeatherCsvRow {
    date: NaiveDate,
    hour: u32,
    temp_c: f64,
    precip_mm: f64,
    wind_mps: f64,
}

/// Reads `date,hour,temp_c,precip_mm,wind_mps`.
pub fn read_weather_csv(reader: impl Read) -> Result<Vec<WeatherRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let r: WeatherCsvRow = row?;
        if r.hour > 23 || r.precip_mm < 0.0 || r.wind_mps < 0.0 {
            return Err(Error::InvalidInput(format!(
                "weather record {} hour {} out of range",
                r.date, r.hour
            )));
        }
        out.push(WeatherRecord {
            day: r.date,
            hour: r.hour,
            temp: r.temp_c,
            precip: r.precip_mm,
            wind: r.wind_mps,
        });
    }
    Ok(out)
}

/// Reads one ISO date per line; blank lines are skipped.
pub fn read_holidays(text: &str) -> Result<BTreeSet<NaiveDate>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| {
            NaiveDate::parse_from_str(l, "%Y-%m-%d")
                .map_err(|_| Error::InvalidInput(format!("holiday `{l}` is not YYYY-MM-DD")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Zone;

    fn day() -> NaiveDate {
        NaiveDate::from_ymd_opt(2024, 3, 4).unwrap()
    }

    fn registry() -> ZoneRegistry {
        let zones = vec![
            Zone {
                id: ZoneId(0),
                lat: 0.0,
                lng: 0.0,
                is_pickup: true,
            },
            Zone {
                id: ZoneId(1),
                lat: 0.0,
                lng: 1.0,
                is_pickup: true,
            },
            Zone {
                id: ZoneId(2),
                lat: 0.0,
                lng: 2.0,
                is_pickup: false,
            },
        ];
        let adj = vec![
            vec![false, true, false],
            vec![true, false, true],
            vec![false, true, false],
        ];
        ZoneRegistry::checked(zones, adj).unwrap()
    }

    fn eu_grid() -> IntervalGrid {
        IntervalGrid::new(BusinessHours::new(630, 1290).unwrap(), day(), day()).unwrap()
    }

    fn order(id: &str, minute: u32, pickup: usize) -> Order {
        Order {
            id: id.into(),
            arrival: Timestamp { date: day(), minute },
            pickup: ZoneId(pickup),
            destination: ZoneId(2),
        }
    }

    #[test]
    fn aggregates_into_the_right_slot() {
        let orders = vec![
            order("a", 720, 0),
            order("b", 727, 0),
            order("c", 734, 0),
            order("d", 735, 1),
        ];
        let agg = aggregate_orders(&orders, &registry(), &eu_grid()).unwrap();
        assert_eq!(agg.series.len(), 2);
        assert_eq!(agg.series[0].counts.len(), 44);
        let noon = ((720 - 630) / 15) as usize;
        assert_eq!(agg.series[0].counts[noon], 3);
        assert_eq!(agg.series[0].counts[noon + 1], 0);
        assert_eq!(agg.series[1].counts[noon + 1], 1);
        assert_eq!(agg.dropped, 0);
    }

    #[test]
    fn drops_orders_outside_hours() {
        let orders = vec![order("early", 600, 0), order("late", 1290, 1), order("ok", 700, 1)];
        let agg = aggregate_orders(&orders, &registry(), &eu_grid()).unwrap();
        let total: u32 = agg.series.iter().flat_map(|s| s.counts.iter()).sum();
        assert_eq!(total as usize + agg.dropped, orders.len());
        assert_eq!(agg.dropped, 2);
    }

    #[test]
    fn unknown_zone_names_the_order() {
        let err = aggregate_orders(&[order("x9", 700, 2)], &registry(), &eu_grid()).unwrap_err();
        assert!(err.to_string().contains("x9"));
        let err = aggregate_orders(&[order("x8", 700, 7)], &registry(), &eu_grid()).unwrap_err();
        assert!(err.to_string().contains("x8"));
    }

    fn series(counts: Vec<u32>) -> DemandSeries {
        let grid = eu_grid();
        DemandSeries::new(ZoneId(0), grid.intervals[..counts.len()].to_vec(), counts).unwrap()
    }

    #[test]
    fn lag_rows() {
        let s = series(vec![1, 2, 3, 4, 5]);
        let opts = FeatureOptions {
            include_lags: true,
            include_weather: false,
        };
        let t = assemble_features(&s, eu_grid().hours, None, &BTreeSet::new(), opts).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.rows[0].lags, Some([4, 3, 2, 1]));
        assert_eq!(t.rows[0].target, Some(5));
        assert_eq!(t.rows[0].target_interval, s.intervals[4]);
        assert_eq!(t.schema.len(), t.rows[0].values().len());

        let short = series(vec![1, 2, 3, 4]);
        let t = assemble_features(&short, eu_grid().hours, None, &BTreeSet::new(), opts).unwrap();
        assert!(t.is_empty());
    }

    #[test]
    fn calendar_features_describe_target() {
        let s = series(vec![0; 8]);
        let holidays: BTreeSet<_> = [day()].into_iter().collect();
        let t = assemble_features(&s, eu_grid().hours, None, &holidays, FeatureOptions::default()).unwrap();
        assert_eq!(t.len(), 8);
        assert!(t.rows.iter().all(|r| r.holiday && r.dow == 0));
        assert_eq!(t.rows[0].hour, 10);
        assert_eq!(t.rows[2].hour, 11);
    }

    #[test]
    fn missing_weather_lists_gap() {
        let s = series(vec![0; 8]);
        let weather = vec![WeatherRecord {
            day: day(),
            hour: 10,
            temp: 5.0,
            precip: 0.0,
            wind: 1.0,
        }];
        let opts = FeatureOptions {
            include_lags: false,
            include_weather: true,
        };
        let err = assemble_features(&s, eu_grid().hours, Some(&weather), &BTreeSet::new(), opts).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("hour 11") && msg.contains("hour 12"), "{msg}");

        let full: Vec<_> = (10..13)
            .map(|h| WeatherRecord {
                day: day(),
                hour: h,
                temp: h as f64,
                precip: 0.0,
                wind: 1.0,
            })
            .collect();
        let t = assemble_features(&s, eu_grid().hours, Some(&full), &BTreeSet::new(), opts).unwrap();
        assert_eq!(t.rows[3].weather, Some([11.0, 0.0, 1.0]));
        let mut reversed = full.clone();
        reversed.reverse();
        let t2 = assemble_features(&s, eu_grid().hours, Some(&reversed), &BTreeSet::new(), opts).unwrap();
        assert_eq!(t, t2);
    }

    #[test]
    fn synthetic_zero_rates_and_determinism() {
        let reg = registry();
        let grid = eu_grid();
        let zero = SyntheticProfile::from_shape(&[0.0, 0.0, 0.0], [1.0; 24], [1.0; 7]);
        assert!(generate_synthetic(&reg, &grid, &zero, 1).unwrap().is_empty());

        let busy = SyntheticProfile::from_shape(&[2.0, 1.0, 0.0], [1.0; 24], [1.0; 7]);
        let a = generate_synthetic(&reg, &grid, &busy, 9).unwrap();
        let b = generate_synthetic(&reg, &grid, &busy, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|o| reg.is_pickup(o.pickup)));

        let negative = SyntheticProfile::from_shape(&[-1.0, 1.0, 0.0], [1.0; 24], [1.0; 7]);
        assert!(generate_synthetic(&reg, &grid, &negative, 1).is_err());
    }

    #[test]
    fn synthetic_rate_matches_mean() {
        let reg = registry();
        let first = day();
        let last = first + chrono::Days::new(22);
        let grid = IntervalGrid::new(BusinessHours::new(630, 1290).unwrap(), first, last).unwrap();
        assert!(grid.len() >= 1000);
        let profile = SyntheticProfile::from_shape(&[4.0, 0.0, 0.0], [1.0; 24], [1.0; 7]);
        let orders = generate_synthetic(&reg, &grid, &profile, 3).unwrap();
        let mean = orders.len() as f64 / grid.len() as f64;
        assert!((3.8..=4.2).contains(&mean), "mean {mean}");
    }

    #[test]
    fn orders_csv_roundtrip() {
        let orders = vec![order("a", 720, 0), order("b", 800, 1)];
        let mut buf = Vec::new();
        write_orders_csv(&mut buf, &orders).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("order_id,timestamp,pickup_zone,dest_zone\n"));
        assert_eq!(read_orders_csv(buf.as_slice()).unwrap(), orders);
    }

    #[test]
    fn weather_and_holiday_files() {
        let csv = "date,hour,temp_c,precip_mm,wind_mps\n2024-03-04,10,5.5,0.2,3.0\n";
        let w = read_weather_csv(csv.as_bytes()).unwrap();
        assert_eq!(w[0].hour, 10);
        assert_eq!(w[0].precip, 0.2);
        let h = read_holidays("2024-03-04\n\n2024-12-25\n").unwrap();
        assert_eq!(h.len(), 2);
        assert!(read_holidays("25/12/2024").is_err());
    }
}
