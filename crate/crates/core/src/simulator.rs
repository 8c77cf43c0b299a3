//! Minute-step meal-delivery fleet simulation with idle-courier relocation.

use std::collections::VecDeque;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{BusinessHours, Order, ZoneId, ZoneRegistry};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub fleet_size: usize,
    pub service_minutes: u32,
    pub idle_threshold: u32,
    pub minutes_per_hop: f64,
    pub hours: BusinessHours,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            fleet_size: 30,
            service_minutes: 3,
            idle_threshold: 5,
            minutes_per_hop: 4.0,
            hours: BusinessHours {
                open_minute: 630,
                close_minute: 1290,
            },
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fleet_size == 0 || self.service_minutes == 0 || self.idle_threshold == 0 {
            return Err(Error::InvalidInput(
                "fleet_size, service_minutes and idle_threshold must be positive".into(),
            ));
        }
        if !(self.minutes_per_hop > 0.0 && self.minutes_per_hop.is_finite()) {
            return Err(Error::InvalidInput("minutes_per_hop must be positive".into()));
        }
        BusinessHours::new(self.hours.open_minute, self.hours.close_minute)?;
        Ok(())
    }
}

/// All-pairs travel minutes: BFS hop count times minutes per hop, rounded up.
#[derive(Debug, Clone, PartialEq)]
pub struct TravelTimes {
    minutes: Vec<Vec<Option<u32>>>,
}

impl TravelTimes {
    pub fn new(registry: &ZoneRegistry, minutes_per_hop: f64) -> Self {
        let adj = registry.adjacency();
        let n = adj.len();
        let minutes = (0..n)
            .map(|src| {
                let mut hops = vec![None; n];
                hops[src] = Some(0u32);
                let mut queue = VecDeque::from([src]);
                while let Some(at) = queue.pop_front() {
                    let h = hops[at].unwrap_or(0);
                    for next in 0..n {
                        if adj[at][next] && hops[next].is_none() {
                            hops[next] = Some(h + 1);
                            queue.push_back(next);
                        }
                    }
                }
                hops.into_iter()
                    .map(|h| h.map(|h| (h as f64 * minutes_per_hop).ceil() as u32))
                    .collect()
            })
            .collect();
        Self { minutes }
    }

    pub fn get(&self, from: ZoneId, to: ZoneId) -> Result<u32> {
        self.minutes
            .get(from.0)
            .and_then(|row| row.get(to.0))
            .copied()
            .flatten()
            .ok_or(Error::Disconnected(from.0, to.0))
    }
}

pub fn travel_time(from: ZoneId, to: ZoneId, registry: &ZoneRegistry, minutes_per_hop: f64) -> Result<u32> {
    TravelTimes::new(registry, minutes_per_hop).get(from, to)
}

/// Expected orders per zone for each business slot of the simulated day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandOracle {
    pub hours: BusinessHours,
    /// `forecasts[slot][zone]`.
    pub forecasts: Vec<Vec<f64>>,
}

impl DemandOracle {
    /// Forecast for the interval containing `minute`; 0 outside the window.
    pub fn demand(&self, minute: u32, zone: ZoneId) -> f64 {
        self.hours
            .slot_of_minute(minute)
            .and_then(|s| self.forecasts.get(s as usize))
            .and_then(|row| row.get(zone.0))
            .copied()
            .unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RelocationPolicy {
    None,
    NearestPickup,
    ForwardLooking { oracle: DemandOracle },
}

impl RelocationPolicy {
    pub fn kind(&self) -> &'static str {
        match self {
            RelocationPolicy::None => "none",
            RelocationPolicy::NearestPickup => "nearest_pickup",
            RelocationPolicy::ForwardLooking { .. } => "forward_looking",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CourierStatus {
    Idle,
    Busy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Courier {
    pub id: usize,
    pub zone: ZoneId,
    pub status: CourierStatus,
    pub busy_until: u32,
    pub idle_since: u32,
}

/// Courier id and delivery minutes, or `None` when every courier is busy.
pub fn assign_order(
    couriers: &mut [Courier],
    now: u32,
    pickup: ZoneId,
    destination: ZoneId,
    travel: &TravelTimes,
    service_minutes: u32,
) -> Result<Option<(usize, u32)>> {
    let mut best: Option<(u32, usize)> = None;
    for (k, c) in couriers.iter().enumerate() {
        if c.status != CourierStatus::Idle {
            continue;
        }
        let t = travel.get(c.zone, pickup)?;
        if best.is_none_or(|b| t < b.0) {
            best = Some((t, k));
        }
    }
    let Some((to_pickup, k)) = best else {
        return Ok(None);
    };
    let duration = to_pickup + travel.get(pickup, destination)? + 2 * service_minutes;
    let c = &mut couriers[k];
    c.status = CourierStatus::Busy;
    c.busy_until = now + duration;
    c.zone = destination;
    Ok(Some((c.id, duration)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relocation {
    Stay,
    MoveTo(ZoneId),
}

pub fn relocation_target(
    couriers: &[Courier],
    courier: usize,
    now: u32,
    policy: &RelocationPolicy,
    registry: &ZoneRegistry,
    travel: &TravelTimes,
) -> Result<Relocation> {
    let here = couriers[courier].zone;
    match policy {
        RelocationPolicy::None => Ok(Relocation::Stay),
        RelocationPolicy::NearestPickup => {
            let mut best: Option<(u32, ZoneId)> = None;
            for z in registry.pickup_zones() {
                let Ok(t) = travel.get(here, z) else { continue };
                if best.is_none_or(|b| t < b.0) {
                    best = Some((t, z));
                }
            }
            Ok(match best {
                Some((_, z)) if z != here => Relocation::MoveTo(z),
                _ => Relocation::Stay,
            })
        }
        RelocationPolicy::ForwardLooking { oracle } => {
            // supply excludes the deciding courier, which could serve any candidate
            let shortage = |z: ZoneId| {
                let supply = couriers
                    .iter()
                    .enumerate()
                    .filter(|(k, c)| *k != courier && c.status == CourierStatus::Idle && c.zone == z)
                    .count();
                oracle.demand(now, z) - supply as f64
            };
            let stay = shortage(here);
            let mut best: Option<(f64, ZoneId)> = None;
            for z in registry.neighbors(here) {
                let s = shortage(z);
                if best.is_none_or(|b| s > b.0 || (s == b.0 && z < b.1)) {
                    best = Some((s, z));
                }
            }
            Ok(match best {
                Some((s, z)) if s > stay => Relocation::MoveTo(z),
                _ => Relocation::Stay,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderOutcome {
    pub order_id: String,
    pub arrival: String,
    /// `None` when rejected.
    pub courier: Option<usize>,
    pub delivery_time: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kpis {
    pub arrived: usize,
    pub delivered: usize,
    pub rejected: usize,
    /// Orders dated outside the simulated window.
    pub skipped: usize,
    pub mean_delivery_min: f64,
    pub rejection_rate: f64,
    pub relocations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub kpis: Kpis,
    pub initial_zones: Vec<ZoneId>,
    pub per_order: Vec<OrderOutcome>,
}

pub fn run_simulation(
    orders: &[Order],
    registry: &ZoneRegistry,
    config: &SimConfig,
    policy: &RelocationPolicy,
) -> Result<SimResult> {
    config.validate()?;
    let travel = TravelTimes::new(registry, config.minutes_per_hop);
    run_with(orders, registry, config, policy, &travel)
}

fn run_with(
    orders: &[Order],
    registry: &ZoneRegistry,
    config: &SimConfig,
    policy: &RelocationPolicy,
    travel: &TravelTimes,
) -> Result<SimResult> {
    if registry.is_empty() {
        return Err(Error::Empty("zone registry".into()));
    }
    let mut sorted: Vec<&Order> = orders.iter().collect();
    sorted.sort_by_key(|o| o.arrival);
    let day = sorted.first().map(|o| o.arrival.date);
    let hours = config.hours;
    let (in_window, skipped): (Vec<&Order>, Vec<&Order>) = sorted
        .into_iter()
        .partition(|o| Some(o.arrival.date) == day && hours.slot_of_minute(o.arrival.minute).is_some());

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut couriers: Vec<Courier> = (0..config.fleet_size)
        .map(|id| Courier {
            id,
            zone: ZoneId(rng.random_range(0..registry.len())),
            status: CourierStatus::Idle,
            busy_until: hours.open_minute,
            idle_since: hours.open_minute,
        })
        .collect();
    let initial_zones = couriers.iter().map(|c| c.zone).collect();

    let mut per_order = Vec::with_capacity(in_window.len());
    let mut relocations = 0;
    let mut next = 0;
    for now in hours.open_minute..hours.close_minute {
        for c in couriers.iter_mut() {
            if c.status == CourierStatus::Busy && c.busy_until <= now {
                c.status = CourierStatus::Idle;
                c.idle_since = now;
            }
        }
        while next < in_window.len() && in_window[next].arrival.minute == now {
            let o = in_window[next];
            let outcome = assign_order(
                &mut couriers,
                now,
                o.pickup,
                o.destination,
                travel,
                config.service_minutes,
            )?;
            per_order.push(OrderOutcome {
                order_id: o.id.clone(),
                arrival: o.arrival.to_string(),
                courier: outcome.map(|a| a.0),
                delivery_time: outcome.map(|a| a.1),
            });
            next += 1;
        }
        if matches!(policy, RelocationPolicy::None) {
            continue;
        }
        for k in 0..couriers.len() {
            let c = &couriers[k];
            if c.status != CourierStatus::Idle || now - c.idle_since < config.idle_threshold {
                continue;
            }
            match relocation_target(&couriers, k, now, policy, registry, travel)? {
                Relocation::Stay => couriers[k].idle_since = now,
                Relocation::MoveTo(z) => {
                    let t = travel.get(couriers[k].zone, z)?;
                    let c = &mut couriers[k];
                    c.status = CourierStatus::Busy;
                    c.busy_until = now + t;
                    c.zone = z;
                    relocations += 1;
                }
            }
        }
    }

    let delivered: Vec<u32> = per_order.iter().filter_map(|o| o.delivery_time).collect();
    let arrived = per_order.len();
    let kpis = Kpis {
        arrived,
        delivered: delivered.len(),
        rejected: arrived - delivered.len(),
        skipped: skipped.len(),
        mean_delivery_min: if delivered.is_empty() {
            0.0
        } else {
            delivered.iter().map(|&t| t as f64).sum::<f64>() / delivered.len() as f64
        },
        rejection_rate: if arrived == 0 {
            0.0
        } else {
            (arrived - delivered.len()) as f64 / arrived as f64
        },
        relocations,
    };
    Ok(SimResult {
        kpis,
        initial_zones,
        per_order,
    })
}

/// A policy under a display label, e.g. forward-looking with actual demand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedPolicy {
    pub name: String,
    pub policy: RelocationPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyComparison {
    pub policy: String,
    pub mean_delivery_min: f64,
    pub rejection_rate: f64,
    pub reduction_vs_none_pct: f64,
    /// Per-repetition KPIs in repetition order.
    pub runs: Vec<Kpis>,
}

/// Paired repetitions: repetition `r` seeds courier placement with
/// `seed + r` for every policy. The no-relocation baseline comes first.
pub fn compare_policies(
    orders: &[Order],
    registry: &ZoneRegistry,
    config: &SimConfig,
    policies: &[NamedPolicy],
    repetitions: usize,
    seed: u64,
) -> Result<Vec<PolicyComparison>> {
    config.validate()?;
    if repetitions == 0 {
        return Err(Error::InvalidInput("repetitions must be >= 1".into()));
    }
    let travel = TravelTimes::new(registry, config.minutes_per_hop);
    let mut all = vec![NamedPolicy {
        name: "none".into(),
        policy: RelocationPolicy::None,
    }];
    all.extend(policies.iter().filter(|p| p.name != "none").cloned());
    let mut rows = Vec::with_capacity(all.len());
    for p in &all {
        let runs: Vec<Kpis> = (0..repetitions)
            .into_par_iter()
            .map(|r| {
                let cfg = SimConfig {
                    seed: seed.wrapping_add(r as u64),
                    ..*config
                };
                run_with(orders, registry, &cfg, &p.policy, &travel).map(|s| s.kpis)
            })
            .collect::<Result<_>>()?;
        let reps = repetitions as f64;
        rows.push(PolicyComparison {
            policy: p.name.clone(),
            mean_delivery_min: runs.iter().map(|k| k.mean_delivery_min).sum::<f64>() / reps,
            rejection_rate: runs.iter().map(|k| k.rejection_rate).sum::<f64>() / reps,
            reduction_vs_none_pct: 0.0,
            runs,
        });
    }
    let base = rows[0].mean_delivery_min;
    for row in rows.iter_mut() {
        row.reduction_vs_none_pct = reduction_pct(base, row.mean_delivery_min);
    }
    Ok(rows)
}

pub fn reduction_pct(baseline: f64, value: f64) -> f64 {
    if baseline > 0.0 {
        100.0 * (baseline - value) / baseline
    } else {
        0.0
    }
}

pub fn write_comparison_csv<W: Write>(rows: &[PolicyComparison], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["policy", "mean_delivery_min", "rejection_rate", "reduction_vs_none_pct"])?;
    for r in rows {
        w.write_record([
            r.policy.clone(),
            format!("{:.6}", r.mean_delivery_min),
            format!("{:.6}", r.rejection_rate),
            format!("{:.6}", r.reduction_vs_none_pct),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Timestamp, Zone};

    /// Path of `n` zones; zone 0 is the only pick-up zone unless `all_pickup`.
    fn path(n: usize, all_pickup: bool) -> ZoneRegistry {
        let zones = (0..n)
            .map(|i| Zone {
                id: ZoneId(i),
                lat: 0.0,
                lng: i as f64,
                is_pickup: all_pickup || i == 0,
            })
            .collect();
        let adj = (0..n).map(|i| (0..n).map(|j| i.abs_diff(j) == 1).collect()).collect();
        ZoneRegistry::new(zones, adj)
    }

    fn courier(id: usize, zone: usize) -> Courier {
        Courier {
            id,
            zone: ZoneId(zone),
            status: CourierStatus::Idle,
            busy_until: 0,
            idle_since: 0,
        }
    }

    fn order(id: &str, at: &str, pickup: usize, dest: usize) -> Order {
        Order {
            id: id.into(),
            arrival: Timestamp::parse(at).unwrap(),
            pickup: ZoneId(pickup),
            destination: ZoneId(dest),
        }
    }

    #[test]
    fn travel_times() {
        let reg = path(4, true);
        assert_eq!(travel_time(ZoneId(2), ZoneId(2), &reg, 4.0).unwrap(), 0);
        assert_eq!(travel_time(ZoneId(0), ZoneId(1), &reg, 4.0).unwrap(), 4);
        assert_eq!(travel_time(ZoneId(0), ZoneId(3), &reg, 4.0).unwrap(), 12);
        assert_eq!(travel_time(ZoneId(0), ZoneId(3), &reg, 2.5).unwrap(), 8);
        let split = ZoneRegistry::new(reg.zones().to_vec(), vec![vec![false; 4]; 4]);
        assert!(matches!(
            travel_time(ZoneId(0), ZoneId(1), &split, 4.0),
            Err(Error::Disconnected(0, 1))
        ));
    }

    #[test]
    fn assignment_rules() {
        let reg = path(3, true);
        let travel = TravelTimes::new(&reg, 4.0);
        let mut cs = vec![courier(0, 0)];
        assert_eq!(
            assign_order(&mut cs, 10, ZoneId(0), ZoneId(1), &travel, 3).unwrap(),
            Some((0, 10))
        );
        assert_eq!(cs[0].busy_until, 20);
        assert_eq!(cs[0].zone, ZoneId(1));
        assert_eq!(
            assign_order(&mut cs, 11, ZoneId(0), ZoneId(1), &travel, 3).unwrap(),
            None
        );

        let mut cs = vec![courier(0, 0), courier(1, 2)];
        assert_eq!(
            assign_order(&mut cs, 0, ZoneId(1), ZoneId(1), &travel, 3).unwrap(),
            Some((0, 10))
        );
    }

    #[test]
    fn forward_looking_choices() {
        let reg = path(3, true);
        let travel = TravelTimes::new(&reg, 4.0);
        let hours = BusinessHours::new(0, 15).unwrap();
        let policy = |d: [f64; 3]| RelocationPolicy::ForwardLooking {
            oracle: DemandOracle {
                hours,
                forecasts: vec![d.to_vec()],
            },
        };
        let cs = vec![courier(0, 1)];
        assert_eq!(
            relocation_target(&cs, 0, 0, &policy([0.0, 3.0, 1.0]), &reg, &travel).unwrap(),
            Relocation::Stay
        );
        assert_eq!(
            relocation_target(&cs, 0, 0, &policy([3.0, 0.0, 1.0]), &reg, &travel).unwrap(),
            Relocation::MoveTo(ZoneId(0))
        );
        assert_eq!(
            relocation_target(&cs, 0, 0, &policy([2.0, 0.0, 2.0]), &reg, &travel).unwrap(),
            Relocation::MoveTo(ZoneId(0))
        );
        assert_eq!(
            relocation_target(&cs, 0, 0, &policy([0.0, 1.0, 0.0]), &reg, &travel).unwrap(),
            Relocation::Stay
        );
        // another idle courier at zone 0 absorbs its demand of 1
        let cs = vec![courier(0, 1), courier(1, 0)];
        assert_eq!(
            relocation_target(&cs, 0, 0, &policy([1.0, 0.0, 0.5]), &reg, &travel).unwrap(),
            Relocation::MoveTo(ZoneId(2))
        );
        assert_eq!(
            relocation_target(&cs, 0, 0, &policy([1.0, 0.5, 0.5]), &reg, &travel).unwrap(),
            Relocation::Stay
        );
    }

    #[test]
    fn nearest_pickup_choice() {
        let reg = path(3, false);
        let travel = TravelTimes::new(&reg, 4.0);
        let cs = vec![courier(0, 1), courier(1, 0)];
        assert_eq!(
            relocation_target(&cs, 0, 0, &RelocationPolicy::NearestPickup, &reg, &travel).unwrap(),
            Relocation::MoveTo(ZoneId(0))
        );
        assert_eq!(
            relocation_target(&cs, 1, 0, &RelocationPolicy::NearestPickup, &reg, &travel).unwrap(),
            Relocation::Stay
        );
    }

    #[test]
    fn empty_and_single_runs() {
        let reg = path(2, true);
        let cfg = SimConfig {
            fleet_size: 1,
            ..Default::default()
        };
        let r = run_simulation(&[], &reg, &cfg, &RelocationPolicy::None).unwrap();
        assert_eq!(
            (r.kpis.arrived, r.kpis.delivered, r.kpis.rejected, r.kpis.relocations),
            (0, 0, 0, 0)
        );

        let reg = path(1, true);
        let orders = [order("a", "2024-01-01T12:00", 0, 0)];
        let r = run_simulation(&orders, &reg, &cfg, &RelocationPolicy::None).unwrap();
        assert_eq!(r.per_order[0].delivery_time, Some(6));
        let again = run_simulation(&orders, &reg, &cfg, &RelocationPolicy::None).unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn colocated_fleet_only_travels_to_destination() {
        let reg = path(4, true);
        let orders: Vec<Order> = (0..40)
            .map(|i| {
                order(
                    &format!("o{i}"),
                    &format!("2024-01-01T{}:{:02}", 11 + i / 60, i % 60),
                    i % 4,
                    (i * 3 + 1) % 4,
                )
            })
            .collect();
        let cfg = SimConfig {
            fleet_size: 400,
            ..Default::default()
        };
        let r = run_simulation(&orders, &reg, &cfg, &RelocationPolicy::None).unwrap();
        // with 400 couriers on 4 zones every zone holds idle couriers throughout
        let travel = TravelTimes::new(&reg, 4.0);
        for (o, out) in orders.iter().zip(&r.per_order) {
            assert_eq!(
                out.delivery_time,
                Some(travel.get(o.pickup, o.destination).unwrap() + 6)
            );
        }
    }

    #[test]
    fn comparison_arithmetic() {
        assert_eq!(reduction_pct(20.0, 17.0), 15.0);
        let reg = path(5, false);
        let orders: Vec<Order> = (0..30)
            .map(|i| order(&format!("o{i}"), &format!("2024-01-01T12:{:02}", i), 0, 4))
            .collect();
        let cfg = SimConfig {
            fleet_size: 5,
            ..Default::default()
        };
        let none = NamedPolicy {
            name: "none".into(),
            policy: RelocationPolicy::None,
        };
        let rows = compare_policies(&orders, &reg, &cfg, &[none], 4, 9).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].reduction_vs_none_pct, 0.0);
        for k in &rows[0].runs {
            assert_eq!(k.delivered + k.rejected, k.arrived);
        }
        let mut buf = Vec::new();
        write_comparison_csv(&rows, &mut buf).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("policy,mean_delivery_min,rejection_rate,reduction_vs_none_pct\n"));
    }
}
