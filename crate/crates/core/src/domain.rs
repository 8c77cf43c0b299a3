//! Zones, the 15-minute interval grid, demand series and orders.
//!
//! Zone identity is positional: `ZoneId(i)` indexes row `i` of every
//! zone-by-zone matrix (adjacency, distances, travel times).

use std::fmt;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Length of one aggregation interval in minutes.
pub const INTERVAL_MINUTES: u32 = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ZoneId(pub usize);

impl fmt::Display for ZoneId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Zone {
    pub id: ZoneId,
    pub lat: f64,
    pub lng: f64,
    pub is_pickup: bool,
}

/// The service network: zone centroids plus a symmetric adjacency matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ZoneRegistry {
    zones: Vec<Zone>,
    adjacency: Vec<Vec<bool>>,
}

/// One entry of `zones.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ZoneRecord {
    pub id: usize,
    pub lat: f64,
    pub lng: f64,
    pub is_pickup: bool,
    #[serde(default)]
    pub adjacent: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    AdjacencyNotSquare,
    AdjacencyNotSymmetric { i: usize, j: usize },
    SelfAdjacent(usize),
    NoPickupZone,
    NonFiniteCentroid(usize),
    IdNotPositional { position: usize, id: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::AdjacencyNotSquare => write!(f, "adjacency not square"),
            Violation::AdjacencyNotSymmetric { i, j } => {
                write!(f, "adjacency not symmetric ({i}, {j})")
            }
            Violation::SelfAdjacent(i) => write!(f, "zone {i} adjacent to itself"),
            Violation::NoPickupZone => write!(f, "no pick-up zone"),
            Violation::NonFiniteCentroid(i) => write!(f, "zone {i} centroid not finite"),
            Violation::IdNotPositional { position, id } => {
                write!(f, "zone at position {position} has id {id}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl ZoneRegistry {
    /// Builds a registry without checking invariants; see [`validate_network`].
    pub fn new(zones: Vec<Zone>, adjacency: Vec<Vec<bool>>) -> Self {
        Self { zones, adjacency }
    }

    /// Builds a registry and fails if any invariant is violated.
    pub fn checked(zones: Vec<Zone>, adjacency: Vec<Vec<bool>>) -> Result<Self> {
        let registry = Self::new(zones, adjacency);
        let report = validate_network(&registry);
        if report.is_ok() {
            Ok(registry)
        } else {
            let msgs: Vec<String> = report.violations.iter().map(|v| v.to_string()).collect();
            Err(Error::InvalidInput(format!("zone network: {}", msgs.join("; "))))
        }
    }

    /// Builds a registry from `zones.json` records. Ids must be exactly `0..N`.
    pub fn from_records(mut records: Vec<ZoneRecord>) -> Result<Self> {
        records.sort_by_key(|r| r.id);
        let n = records.len();
        for (pos, r) in records.iter().enumerate() {
            if r.id != pos {
                return Err(Error::InvalidInput(format!(
                    "zone ids must be 0..{n} without gaps; found id {} at position {pos}",
                    r.id
                )));
            }
        }
        let mut adjacency = vec![vec![false; n]; n];
        for r in &records {
            for &j in &r.adjacent {
                if j >= n {
                    return Err(Error::InvalidInput(format!(
                        "zone {} lists unknown adjacent zone {j}",
                        r.id
                    )));
                }
                adjacency[r.id][j] = true;
            }
        }
        let zones = records
            .into_iter()
            .map(|r| Zone {
                id: ZoneId(r.id),
                lat: r.lat,
                lng: r.lng,
                is_pickup: r.is_pickup,
            })
            .collect();
        Self::checked(zones, adjacency)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let records: Vec<ZoneRecord> = serde_json::from_str(text)?;
        Self::from_records(records)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    pub fn to_records(&self) -> Vec<ZoneRecord> {
        self.zones
            .iter()
            .map(|z| ZoneRecord {
                id: z.id.0,
                lat: z.lat,
                lng: z.lng,
                is_pickup: z.is_pickup,
                adjacent: self.neighbors(z.id).map(|n| n.0).collect(),
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.zones.len()
    }

    pub fn is_empty(&self) -> bool {
        self.zones.is_empty()
    }

    pub fn zones(&self) -> &[Zone] {
        &self.zones
    }

    pub fn zone(&self, id: ZoneId) -> Option<&Zone> {
        self.zones.get(id.0)
    }

    pub fn adjacency(&self) -> &[Vec<bool>] {
        &self.adjacency
    }

    pub fn is_adjacent(&self, a: ZoneId, b: ZoneId) -> bool {
        self.adjacency[a.0][b.0]
    }

    pub fn neighbors(&self, id: ZoneId) -> impl Iterator<Item = ZoneId> + '_ {
        self.adjacency[id.0]
            .iter()
            .enumerate()
            .filter(|(_, &adj)| adj)
            .map(|(j, _)| ZoneId(j))
    }

    pub fn is_pickup(&self, id: ZoneId) -> bool {
        self.zones.get(id.0).is_some_and(|z| z.is_pickup)
    }

    pub fn pickup_zones(&self) -> Vec<ZoneId> {
        self.zones.iter().filter(|z| z.is_pickup).map(|z| z.id).collect()
    }

    /// Adjacency restricted to `subset`, indexed by position in `subset`.
    pub fn induced_adjacency(&self, subset: &[ZoneId]) -> Vec<Vec<bool>> {
        subset
            .iter()
            .map(|a| subset.iter().map(|b| self.adjacency[a.0][b.0]).collect())
            .collect()
    }
}

/// Reports every invariant violation of `registry`; empty means valid.
pub fn validate_network(registry: &ZoneRegistry) -> ValidationReport {
    let mut violations = Vec::new();
    let n = registry.zones.len();
    for (pos, z) in registry.zones.iter().enumerate() {
        if z.id.0 != pos {
            violations.push(Violation::IdNotPositional {
                position: pos,
                id: z.id.0,
            });
        }
        if !z.lat.is_finite() || !z.lng.is_finite() {
            violations.push(Violation::NonFiniteCentroid(pos));
        }
    }
    let adj = &registry.adjacency;
    if adj.len() != n || adj.iter().any(|row| row.len() != n) {
        violations.push(Violation::AdjacencyNotSquare);
    } else {
        for i in 0..n {
            if adj[i][i] {
                violations.push(Violation::SelfAdjacent(i));
            }
            for j in (i + 1)..n {
                if adj[i][j] != adj[j][i] {
                    violations.push(Violation::AdjacencyNotSymmetric { i, j });
                }
            }
        }
    }
    if !registry.zones.iter().any(|z| z.is_pickup) {
        violations.push(Violation::NoPickupZone);
    }
    ValidationReport { violations }
}

/// Daily operating window in minutes after midnight, `[open, close)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BusinessHours {
    pub open_minute: u32,
    pub close_minute: u32,
}

impl BusinessHours {
    pub fn new(open_minute: u32, close_minute: u32) -> Result<Self> {
        if close_minute <= open_minute
            || close_minute > 1440
            || !(close_minute - open_minute).is_multiple_of(INTERVAL_MINUTES)
        {
            return Err(Error::InvalidBusinessHours {
                open: open_minute,
                close: close_minute,
            });
        }
        Ok(Self {
            open_minute,
            close_minute,
        })
    }

    pub fn full_day() -> Self {
        Self {
            open_minute: 0,
            close_minute: 1440,
        }
    }

    pub fn slots_per_day(&self) -> u32 {
        (self.close_minute - self.open_minute) / INTERVAL_MINUTES
    }

    pub fn slot_start_minute(&self, slot: u32) -> u32 {
        self.open_minute + slot * INTERVAL_MINUTES
    }

    /// Slot containing `minute`, or `None` outside business hours.
    pub fn slot_of_minute(&self, minute: u32) -> Option<u32> {
        if minute < self.open_minute || minute >= self.close_minute {
            None
        } else {
            Some((minute - self.open_minute) / INTERVAL_MINUTES)
        }
    }
}

/// One 15-minute business interval; ordered chronologically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct IntervalIndex {
    pub day: NaiveDate,
    pub slot: u32,
}

/// Every business interval from `first_day` to `last_day` inclusive.
pub fn interval_sequence(
    hours: BusinessHours,
    first_day: NaiveDate,
    last_day: NaiveDate,
) -> Result<Vec<IntervalIndex>> {
    let hours = BusinessHours::new(hours.open_minute, hours.close_minute)?;
    Ok(first_day
        .iter_days()
        .take_while(|d| *d <= last_day)
        .flat_map(|day| (0..hours.slots_per_day()).map(move |slot| IntervalIndex { day, slot }))
        .collect())
}

/// Business hours plus the covered calendar days.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalGrid {
    pub hours: BusinessHours,
    pub intervals: Vec<IntervalIndex>,
}

impl IntervalGrid {
    pub fn new(hours: BusinessHours, first_day: NaiveDate, last_day: NaiveDate) -> Result<Self> {
        let intervals = interval_sequence(hours, first_day, last_day)?;
        Ok(Self { hours, intervals })
    }

    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    /// Position of the interval containing `ts`, if it lies on the grid.
    pub fn position_of(&self, ts: &Timestamp) -> Option<usize> {
        let slot = self.hours.slot_of_minute(ts.minute)?;
        let first = self.intervals.first()?.day;
        let day_offset = (ts.date - first).num_days();
        if day_offset < 0 {
            return None;
        }
        let pos = day_offset as usize * self.hours.slots_per_day() as usize + slot as usize;
        (pos < self.intervals.len()).then_some(pos)
    }

    pub fn start_timestamp(&self, interval: &IntervalIndex) -> Timestamp {
        Timestamp {
            date: interval.day,
            minute: self.hours.slot_start_minute(interval.slot),
        }
    }
}

/// Local wall-clock time: a date plus minutes after midnight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp {
    pub date: NaiveDate,
    pub minute: u32,
}

impl Timestamp {
    /// Parses `YYYY-MM-DDTHH:MM`.
    pub fn parse(text: &str) -> Result<Self> {
        let bad = || Error::InvalidInput(format!("timestamp `{text}` is not YYYY-MM-DDTHH:MM"));
        let (date, time) = text.trim().split_once('T').ok_or_else(bad)?;
        let date = NaiveDate::parse_from_str(date, "%Y-%m-%d").map_err(|_| bad())?;
        let (h, m) = time.split_once(':').ok_or_else(bad)?;
        let h: u32 = h.parse().map_err(|_| bad())?;
        let m: u32 = m.get(..2).unwrap_or(m).parse().map_err(|_| bad())?;
        if h > 23 || m > 59 {
            return Err(bad());
        }
        Ok(Self {
            date,
            minute: h * 60 + m,
        })
    }

    pub fn hour(&self) -> u32 {
        self.minute / 60
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}T{:02}:{:02}",
            self.date.format("%Y-%m-%d"),
            self.minute / 60,
            self.minute % 60
        )
    }
}

/// Day of week with Monday = 0.
pub fn day_of_week(date: NaiveDate) -> u32 {
    date.weekday().num_days_from_monday()
}

/// Chronological 15-minute order counts of one pick-up zone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandSeries {
    pub zone: ZoneId,
    pub intervals: Vec<IntervalIndex>,
    pub counts: Vec<u32>,
}

impl DemandSeries {
    pub fn new(zone: ZoneId, intervals: Vec<IntervalIndex>, counts: Vec<u32>) -> Result<Self> {
        if intervals.len() != counts.len() {
            return Err(Error::LengthMismatch(format!(
                "{} intervals vs {} counts",
                intervals.len(),
                counts.len()
            )));
        }
        if intervals.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput("series intervals not strictly increasing".into()));
        }
        Ok(Self {
            zone,
            intervals,
            counts,
        })
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Order {
    pub id: String,
    pub arrival: Timestamp,
    pub pickup: ZoneId,
    pub destination: ZoneId,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zone(i: usize, pickup: bool) -> Zone {
        Zone {
            id: ZoneId(i),
            lat: 0.0,
            lng: i as f64,
            is_pickup: pickup,
        }
    }

    #[test]
    fn smallest_valid_network() {
        let reg = ZoneRegistry::new(
            vec![zone(0, true), zone(1, true)],
            vec![vec![false, true], vec![true, false]],
        );
        assert!(validate_network(&reg).is_ok());
    }

    #[test]
    fn asymmetric_adjacency_reported() {
        let reg = ZoneRegistry::new(
            vec![zone(0, true), zone(1, true)],
            vec![vec![false, true], vec![false, false]],
        );
        let report = validate_network(&reg);
        assert_eq!(report.violations, vec![Violation::AdjacencyNotSymmetric { i: 0, j: 1 }]);
        assert_eq!(report.violations[0].to_string(), "adjacency not symmetric (0, 1)");
        assert_eq!(validate_network(&reg), report);
    }

    #[test]
    fn missing_pickup_reported() {
        let reg = ZoneRegistry::new(
            vec![zone(0, false), zone(1, false)],
            vec![vec![false, true], vec![true, false]],
        );
        let report = validate_network(&reg);
        assert!(report.violations.contains(&Violation::NoPickupZone));
        assert_eq!(Violation::NoPickupZone.to_string(), "no pick-up zone");
    }

    #[test]
    fn interval_counts() {
        let day = NaiveDate::from_ymd_opt(2024, 3, 4).unwrap();
        let eu = interval_sequence(
            BusinessHours {
                open_minute: 630,
                close_minute: 1290,
            },
            day,
            day,
        )
        .unwrap();
        assert_eq!(eu.len(), 44);
        let full = interval_sequence(BusinessHours::full_day(), day, day).unwrap();
        assert_eq!(full.len(), 96);
        let bad = interval_sequence(
            BusinessHours {
                open_minute: 600,
                close_minute: 610,
            },
            day,
            day,
        );
        assert!(matches!(bad, Err(Error::InvalidBusinessHours { .. })));
    }

    #[test]
    fn interval_sequence_is_strictly_increasing() {
        let first = NaiveDate::from_ymd_opt(2024, 2, 27).unwrap();
        let last = NaiveDate::from_ymd_opt(2024, 3, 2).unwrap();
        let hours = BusinessHours::new(630, 1290).unwrap();
        let seq = interval_sequence(hours, first, last).unwrap();
        assert_eq!(seq.len(), 5 * 44);
        assert!(seq.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn zones_json_roundtrip_and_symmetry_check() {
        let text = r#"[
            {"id": 0, "lat": 1.0, "lng": 2.0, "is_pickup": true, "adjacent": [1]},
            {"id": 1, "lat": 1.0, "lng": 3.0, "is_pickup": false, "adjacent": [0]}
        ]"#;
        let reg = ZoneRegistry::from_json_str(text).unwrap();
        assert_eq!(reg.len(), 2);
        assert!(reg.is_adjacent(ZoneId(0), ZoneId(1)));
        assert_eq!(reg.pickup_zones(), vec![ZoneId(0)]);

        let one_sided = r#"[
            {"id": 0, "lat": 1.0, "lng": 2.0, "is_pickup": true, "adjacent": [1]},
            {"id": 1, "lat": 1.0, "lng": 3.0, "is_pickup": false, "adjacent": []}
        ]"#;
        let err = ZoneRegistry::from_json_str(one_sided).unwrap_err();
        assert!(err.to_string().contains("not symmetric"));
    }

    #[test]
    fn timestamp_parse_and_format() {
        let ts = Timestamp::parse("2024-03-04T12:07").unwrap();
        assert_eq!(ts.minute, 12 * 60 + 7);
        assert_eq!(ts.to_string(), "2024-03-04T12:07");
        assert!(Timestamp::parse("2024-03-04 12:07").is_err());
        assert!(Timestamp::parse("2024-03-04T25:00").is_err());
    }

    #[test]
    fn grid_positions() {
        let day = NaiveDate::from_ymd_opt(2024, 3, 4).unwrap();
        let grid = IntervalGrid::new(BusinessHours::new(630, 1290).unwrap(), day, day.succ_opt().unwrap()).unwrap();
        let ts = Timestamp {
            date: day.succ_opt().unwrap(),
            minute: 631,
        };
        assert_eq!(grid.position_of(&ts), Some(44));
        let closed = Timestamp {
            date: day,
            minute: 1290,
        };
        assert_eq!(grid.position_of(&closed), None);
    }
}
