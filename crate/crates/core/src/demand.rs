//! Empirical demand model estimated from historical trips.
//!
//! All tables hold expected counts per service day. Trip ends are bucketed
//! into areas (ZIP-like codes when the history carries them, otherwise cells
//! of a square grid) and pickup times into one-hour buckets.

use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::history::{default_booking_curve, DayClass, HistoryRecord};
use crate::model::{Seconds, TimeWindow};

pub const MODEL_VERSION: u32 = 1;
pub const HOURS: usize = 24;
pub const BUCKET_SECONDS: Seconds = 3600;
/// Default grid cell edge in meters.
pub const DEFAULT_CELL_M: f64 = 2000.0;

const M_PER_DEG_LAT: f64 = 111_195.0;

/// How coordinates map to area codes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum AreaScheme {
    /// Area codes come with the data (for example ZIP codes).
    Zip,
    /// Square cells of `cell_m` meters anchored at the south-west corner.
    Grid { origin_lat: f64, origin_lon: f64, cell_m: f64 },
}

impl AreaScheme {
    /// Grid anchored at the south-west corner of all coordinates in `records`.
    pub fn grid_for(records: &[HistoryRecord], cell_m: f64) -> Self {
        let lats = records.iter().flat_map(|r| [r.pickup_lat, r.dropoff_lat]);
        let lons = records.iter().flat_map(|r| [r.pickup_lon, r.dropoff_lon]);
        let origin_lat = lats.fold(f64::INFINITY, f64::min);
        let origin_lon = lons.fold(f64::INFINITY, f64::min);
        let (origin_lat, origin_lon) = if origin_lat.is_finite() { (origin_lat, origin_lon) } else { (0.0, 0.0) };
        AreaScheme::Grid { origin_lat, origin_lon, cell_m }
    }

    /// ZIP codes when every record carries both area codes, else a grid.
    pub fn auto(records: &[HistoryRecord]) -> Self {
        if !records.is_empty() && records.iter().all(|r| r.pickup_area.is_some() && r.dropoff_area.is_some()) {
            AreaScheme::Zip
        } else {
            Self::grid_for(records, DEFAULT_CELL_M)
        }
    }

    /// Area of a coordinate. Under [`AreaScheme::Zip`] the `given` code is
    /// used and `"unknown"` stands in when it is missing.
    pub fn area(&self, lat: f64, lon: f64, given: Option<&str>) -> String {
        match self {
            AreaScheme::Zip => given.unwrap_or("unknown").to_string(),
            AreaScheme::Grid { origin_lat, origin_lon, cell_m } => {
                let row = ((lat - origin_lat) * M_PER_DEG_LAT / cell_m).floor() as i64;
                let col = ((lon - origin_lon) * M_PER_DEG_LAT * origin_lat.to_radians().cos() / cell_m).floor() as i64;
                format!("g{row}_{col}")
            }
        }
    }
}

/// Coordinate bounding box of the points seen in one area.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub min_lat: f64,
    pub max_lat: f64,
    pub min_lon: f64,
    pub max_lon: f64,
}

impl BBox {
    fn point(lat: f64, lon: f64) -> Self {
        Self { min_lat: lat, max_lat: lat, min_lon: lon, max_lon: lon }
    }

    fn extend(&mut self, lat: f64, lon: f64) {
        self.min_lat = self.min_lat.min(lat);
        self.max_lat = self.max_lat.max(lat);
        self.min_lon = self.min_lon.min(lon);
        self.max_lon = self.max_lon.max(lon);
    }

    /// Uniform point inside the box.
    pub fn sample(&self, rng: &mut impl Rng) -> (f64, f64) {
        let pick = |rng: &mut dyn rand::RngCore, lo: f64, hi: f64| if hi > lo { rng.random_range(lo..hi) } else { lo };
        (pick(rng, self.min_lat, self.max_lat), pick(rng, self.min_lon, self.max_lon))
    }
}

/// One non-zero cell of the joint (pickup area, dropoff area, hour) table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointCell {
    pub pickup: u32,
    pub dropoff: u32,
    pub hour: u8,
    pub count: f64,
}

/// Per-day-class booking statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    /// Service days of this class in the history.
    pub days: usize,
    /// Trip count of each such day.
    pub daily_counts: Vec<u32>,
    /// Expected booking calls per day in each booking-day hour.
    pub booking_rate: Vec<f64>,
}

impl ClassStats {
    fn empty() -> Self {
        Self { days: 0, daily_counts: Vec::new(), booking_rate: vec![0.0; HOURS] }
    }

    pub fn mean_daily(&self) -> f64 {
        if self.daily_counts.is_empty() {
            0.0
        } else {
            self.daily_counts.iter().map(|&c| f64::from(c)).sum::<f64>() / self.daily_counts.len() as f64
        }
    }
}

/// Bucket layout recorded with the model so consumers can check it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Buckets {
    pub hour_seconds: Seconds,
    pub hours: usize,
    /// Hour of a window is the hour containing its start.
    pub hour_of: String,
}

impl Default for Buckets {
    fn default() -> Self {
        Self { hour_seconds: BUCKET_SECONDS, hours: HOURS, hour_of: "window start".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandModel {
    pub version: u32,
    pub buckets: Buckets,
    pub scheme: AreaScheme,
    /// Sorted area codes; tables index into this list.
    pub areas: Vec<String>,
    pub bboxes: Vec<BBox>,
    /// Sorted by (pickup, dropoff, hour).
    pub joint: Vec<JointCell>,
    /// `areas.len() * HOURS`, row-major by area.
    pub pickup: Vec<f64>,
    pub dropoff: Vec<f64>,
    pub hour: Vec<f64>,
    /// Indexed by [`DayClass::index`].
    pub classes: Vec<ClassStats>,
    /// Relative frequency of 1, 2, ... passengers.
    pub passengers: Vec<f64>,
}

impl DemandModel {
    /// A model without any history.
    pub fn empty() -> Self {
        Self {
            version: MODEL_VERSION,
            buckets: Buckets::default(),
            scheme: AreaScheme::Zip,
            areas: Vec::new(),
            bboxes: Vec::new(),
            joint: Vec::new(),
            pickup: Vec::new(),
            dropoff: Vec::new(),
            hour: vec![0.0; HOURS],
            classes: vec![ClassStats::empty(), ClassStats::empty()],
            passengers: vec![1.0],
        }
    }

    /// Estimates the model. Busyness tables average over all service days;
    /// booking statistics are kept per day class. Records without a booking
    /// time spread their call over [`default_booking_curve`].
    pub fn build(records: &[HistoryRecord], scheme: AreaScheme) -> Self {
        let mut model = Self::empty();
        model.scheme = scheme;
        if records.is_empty() {
            return model;
        }
        let ends: Vec<(String, String)> = records
            .iter()
            .map(|r| {
                (
                    model.scheme.area(r.pickup_lat, r.pickup_lon, r.pickup_area.as_deref()),
                    model.scheme.area(r.dropoff_lat, r.dropoff_lon, r.dropoff_area.as_deref()),
                )
            })
            .collect();
        let mut areas: Vec<String> = ends.iter().flat_map(|(a, b)| [a.clone(), b.clone()]).collect();
        areas.sort();
        areas.dedup();
        let idx = |a: &str| areas.binary_search_by(|x| x.as_str().cmp(a)).expect("area collected") as u32;

        let mut dates: Vec<_> = records.iter().map(|r| r.date).collect();
        dates.sort();
        dates.dedup();
        let days = dates.len() as f64;

        let n = areas.len();
        let mut bboxes: Vec<Option<BBox>> = vec![None; n];
        let mut joint = std::collections::BTreeMap::<(u32, u32, u8), f64>::new();
        let mut pickup = vec![0.0; n * HOURS];
        let mut dropoff = vec![0.0; n * HOURS];
        let mut hour = vec![0.0; HOURS];
        let mut passengers: Vec<f64> = Vec::new();
        let curve = default_booking_curve();
        let mut classes = vec![ClassStats::empty(), ClassStats::empty()];
        for (r, (pa, da)) in records.iter().zip(&ends) {
            let (p, d) = (idx(pa), idx(da));
            let h = (r.pickup_time / BUCKET_SECONDS).clamp(0, HOURS as Seconds - 1) as usize;
            *joint.entry((p, d, h as u8)).or_default() += 1.0 / days;
            pickup[p as usize * HOURS + h] += 1.0 / days;
            dropoff[d as usize * HOURS + h] += 1.0 / days;
            hour[h] += 1.0 / days;
            for (a, lat, lon) in [(p, r.pickup_lat, r.pickup_lon), (d, r.dropoff_lat, r.dropoff_lon)] {
                match &mut bboxes[a as usize] {
                    Some(b) => b.extend(lat, lon),
                    slot => *slot = Some(BBox::point(lat, lon)),
                }
            }
            let k = r.passengers.max(1) as usize;
            if passengers.len() < k {
                passengers.resize(k, 0.0);
            }
            passengers[k - 1] += 1.0;
            let class = &mut classes[DayClass::of(r.date).index()];
            match r.booking_time {
                Some(t) => class.booking_rate[(t / BUCKET_SECONDS).clamp(0, HOURS as Seconds - 1) as usize] += 1.0,
                None => class.booking_rate.iter_mut().zip(curve).for_each(|(rate, c)| *rate += c),
            }
        }
        for date in &dates {
            let count = records.iter().filter(|r| r.date == *date).count() as u32;
            let class = &mut classes[DayClass::of(*date).index()];
            class.days += 1;
            class.daily_counts.push(count);
        }
        for class in &mut classes {
            if class.days > 0 {
                let days = class.days as f64;
                class.booking_rate.iter_mut().for_each(|r| *r /= days);
            }
        }
        let total: f64 = passengers.iter().sum();
        passengers.iter_mut().for_each(|p| *p /= total);

        model.areas = areas;
        model.bboxes = bboxes.into_iter().map(|b| b.expect("every area has a point")).collect();
        model.joint = joint
            .into_iter()
            .map(|((pickup, dropoff, hour), count)| JointCell { pickup, dropoff, hour, count })
            .collect();
        model.pickup = pickup;
        model.dropoff = dropoff;
        model.hour = hour;
        model.classes = classes;
        model.passengers = passengers;
        model
    }

    pub fn area_index(&self, area: &str) -> Option<usize> {
        self.areas.binary_search_by(|x| x.as_str().cmp(area)).ok()
    }

    /// Hour bucket of a window.
    pub fn hour_of(window: &TimeWindow) -> usize {
        (window.start / BUCKET_SECONDS).clamp(0, HOURS as Seconds - 1) as usize
    }

    pub fn joint_count(&self, pickup: usize, dropoff: usize, hour: usize) -> f64 {
        let key = (pickup as u32, dropoff as u32, hour as u8);
        self.joint
            .binary_search_by(|c| (c.pickup, c.dropoff, c.hour).cmp(&key))
            .map_or(0.0, |i| self.joint[i].count)
    }

    /// Expected daily counts of requests in the window's hour: between the two
    /// areas, from the pickup area, to the dropoff area, and overall. Unknown
    /// areas count as empty.
    pub fn busyness(&self, pickup_area: Option<&str>, dropoff_area: Option<&str>, window: &TimeWindow) -> [f64; 4] {
        let h = Self::hour_of(window);
        let p = pickup_area.and_then(|a| self.area_index(a));
        let d = dropoff_area.and_then(|a| self.area_index(a));
        let full = match (p, d) {
            (Some(p), Some(d)) => self.joint_count(p, d, h),
            _ => 0.0,
        };
        let by_pickup = p.map_or(0.0, |p| self.pickup[p * HOURS + h]);
        let by_dropoff = d.map_or(0.0, |d| self.dropoff[d * HOURS + h]);
        [full, by_pickup, by_dropoff, self.hour[h]]
    }

    /// Expected booking calls still to come after `clock` (seconds since
    /// midnight of the booking day), interpolating linearly inside the
    /// current hour.
    pub fn expected_remaining(&self, class: DayClass, clock: Seconds) -> f64 {
        let rate = &self.classes[class.index()].booking_rate;
        if clock < 0 {
            return rate.iter().sum();
        }
        let h = (clock / BUCKET_SECONDS) as usize;
        if h >= HOURS {
            return 0.0;
        }
        let frac = (clock % BUCKET_SECONDS) as f64 / BUCKET_SECONDS as f64;
        rate[h] * (1.0 - frac) + rate[h + 1..].iter().sum::<f64>()
    }

    pub fn class(&self, class: DayClass) -> &ClassStats {
        &self.classes[class.index()]
    }

    /// Draws (pickup area, dropoff area, hour) proportionally to the joint
    /// table. `None` for an empty model.
    pub fn sample_cell(&self, rng: &mut impl Rng) -> Option<JointCell> {
        let weights = WeightedIndex::new(self.joint.iter().map(|c| c.count)).ok()?;
        Some(self.joint[weights.sample(rng)])
    }

    /// Mean of the area bounding-box centres, the default depot position.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        if self.bboxes.is_empty() {
            return None;
        }
        let n = self.bboxes.len() as f64;
        let lat = self.bboxes.iter().map(|b| (b.min_lat + b.max_lat) / 2.0).sum::<f64>() / n;
        let lon = self.bboxes.iter().map(|b| (b.min_lon + b.max_lon) / 2.0).sum::<f64>() / n;
        Some((lat, lon))
    }

    /// Draws a passenger count from the historical histogram.
    pub fn sample_passengers(&self, rng: &mut impl Rng) -> u32 {
        WeightedIndex::new(&self.passengers).map_or(1, |w| w.sample(rng) as u32 + 1)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(text)?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    fn validate(&self) -> Result<()> {
        if self.version != MODEL_VERSION {
            return Err(Error::invalid(format!("demand model version {} is not supported", self.version)));
        }
        let n = self.areas.len();
        if self.bboxes.len() != n
            || self.pickup.len() != n * HOURS
            || self.dropoff.len() != n * HOURS
            || self.hour.len() != HOURS
            || self.classes.len() != 2
            || self.classes.iter().any(|c| c.booking_rate.len() != HOURS)
        {
            return Err(Error::invalid("demand model tables have inconsistent sizes"));
        }
        let tables = self.pickup.iter().chain(&self.dropoff).chain(&self.hour);
        if tables.chain(self.joint.iter().map(|c| &c.count)).any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("demand model has negative or non-finite counts"));
        }
        if self.joint.iter().any(|c| c.pickup as usize >= n || c.dropoff as usize >= n || c.hour as usize >= HOURS) {
            return Err(Error::invalid("demand model joint table references unknown buckets"));
        }
        Ok(())
    }
}
