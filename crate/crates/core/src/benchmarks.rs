//! Naive and seasonal reference forecasters.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Next-interval forecast equal to the last observation; 0 with no history.
pub fn myopic_predict(history: &[u32]) -> f64 {
    history.last().map_or(0.0, |&c| c as f64)
}

/// Historical counts grouped by (hour, day of week), plus the pooled history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeasonalIndex {
    /// Sorted counts per `(hour, dow)`.
    #[serde(with = "bucket_entries")]
    buckets: BTreeMap<(u32, u32), Vec<u32>>,
    /// Sorted counts over every observation.
    global: Vec<u32>,
}

impl SeasonalIndex {
    /// Builds the index from `(hour, dow, count)` observations.
    pub fn build(observations: impl IntoIterator<Item = (u32, u32, u32)>) -> Result<Self> {
        let mut buckets: BTreeMap<(u32, u32), Vec<u32>> = BTreeMap::new();
        let mut global = Vec::new();
        for (hour, dow, count) in observations {
            buckets.entry((hour, dow)).or_default().push(count);
            global.push(count);
        }
        if global.is_empty() {
            return Err(Error::Empty("seasonal index needs at least one observation".into()));
        }
        for b in buckets.values_mut() {
            b.sort_unstable();
        }
        global.sort_unstable();
        Ok(Self { buckets, global })
    }

    /// The bucket for `(hour, dow)`, or the pooled history if it is empty.
    pub fn bucket(&self, hour: u32, dow: u32) -> &[u32] {
        self.buckets.get(&(hour, dow)).map_or(&self.global, Vec::as_slice)
    }

    pub fn observation_count(&self) -> usize {
        self.global.len()
    }
}

mod bucket_entries {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    type Buckets = BTreeMap<(u32, u32), Vec<u32>>;

    #[derive(Serialize, Deserialize)]
    struct Entry {
        hour: u32,
        dow: u32,
        counts: Vec<u32>,
    }

    pub fn serialize<S: Serializer>(buckets: &Buckets, s: S) -> Result<S::Ok, S::Error> {
        let entries: Vec<Entry> = buckets
            .iter()
            .map(|(&(hour, dow), counts)| Entry {
                hour,
                dow,
                counts: counts.clone(),
            })
            .collect();
        entries.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Buckets, D::Error> {
        let entries = Vec::<Entry>::deserialize(d)?;
        Ok(entries.into_iter().map(|e| ((e.hour, e.dow), e.counts)).collect())
    }
}

pub fn seasonal_average(index: &SeasonalIndex, hour: u32, dow: u32) -> f64 {
    let bucket = index.bucket(hour, dow);
    bucket.iter().map(|&c| c as f64).sum::<f64>() / bucket.len() as f64
}

/// Lower empirical quantile: smallest value whose empirical CDF reaches `q`.
pub fn seasonal_quantile(index: &SeasonalIndex, hour: u32, dow: u32, q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidQuantile(q));
    }
    Ok(lower_quantile_sorted(index.bucket(hour, dow), q) as f64)
}

/// `inf { y : #{v <= y} / n >= q }` over an ascending slice.
pub(crate) fn lower_quantile_sorted<T: Copy>(sorted: &[T], q: f64) -> T {
    let n = sorted.len();
    // Smallest k with k / n >= q, guarded against rounding in q * n.
    let mut k = (q * n as f64).ceil() as usize;
    while k > 1 && (k - 1) as f64 / n as f64 >= q {
        k -= 1;
    }
    while k < n && (k as f64) / (n as f64) < q {
        k += 1;
    }
    sorted[k.clamp(1, n) - 1]
}
