//! Historical trip tables: CSV ingestion and a synthetic generator.
//!
//! The CSV has a header row with these columns (order free, extra columns
//! ignored):
//!
//! | column         | required | format                                   |
//! |----------------|----------|------------------------------------------|
//! | `date`         | yes      | `YYYY-MM-DD`, the service day             |
//! | `pickup_lat`   | yes      | degrees                                  |
//! | `pickup_lon`   | yes      | degrees                                  |
//! | `dropoff_lat`  | yes      | degrees                                  |
//! | `dropoff_lon`  | yes      | degrees                                  |
//! | `passengers`   | yes      | positive integer                         |
//! | `pickup_time`  | yes      | `HH:MM[:SS]` or seconds since midnight    |
//! | `booking_time` | no       | as `pickup_time`, on the previous day     |
//! | `pickup_area`  | no       | area code such as a ZIP code              |
//! | `dropoff_area` | no       | area code                                |
//!
//! Rows with missing or unparsable values are skipped and reported as
//! diagnostics with their line number; structural problems (missing required
//! columns, ragged rows) fail the whole file.

use std::io::{Read, Write};
use std::path::Path;

use chrono::{Datelike, Duration as ChronoDuration, NaiveDate, NaiveTime, Timelike, Weekday};
use rand::Rng;
use rand_distr::{Distribution, Exp, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Seconds;

/// Weekday/weekend split of service days.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DayClass {
    Weekday,
    Weekend,
}

impl DayClass {
    pub const ALL: [DayClass; 2] = [DayClass::Weekday, DayClass::Weekend];

    pub fn of(date: NaiveDate) -> Self {
        match date.weekday() {
            Weekday::Sat | Weekday::Sun => DayClass::Weekend,
            _ => DayClass::Weekday,
        }
    }

    pub fn index(self) -> usize {
        match self {
            DayClass::Weekday => 0,
            DayClass::Weekend => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRecord {
    pub date: NaiveDate,
    pub pickup_lat: f64,
    pub pickup_lon: f64,
    pub dropoff_lat: f64,
    pub dropoff_lon: f64,
    pub passengers: u32,
    /// Scheduled pickup, seconds since midnight of `date`.
    pub pickup_time: Seconds,
    /// Booking call, seconds since midnight of the previous day.
    pub booking_time: Option<Seconds>,
    pub pickup_area: Option<String>,
    pub dropoff_area: Option<String>,
}

/// A skipped row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct HistoryTable {
    pub records: Vec<HistoryRecord>,
    pub diagnostics: Vec<Diagnostic>,
}

const REQUIRED: [&str; 7] = [
    "date",
    "pickup_lat",
    "pickup_lon",
    "dropoff_lat",
    "dropoff_lon",
    "passengers",
    "pickup_time",
];

/// Parses `HH:MM`, `HH:MM:SS` or a plain number of seconds.
pub fn parse_clock(text: &str) -> Option<Seconds> {
    let text = text.trim();
    if let Ok(s) = text.parse::<Seconds>() {
        return (0..86_400).contains(&s).then_some(s);
    }
    let t = NaiveTime::parse_from_str(text, "%H:%M:%S")
        .or_else(|_| NaiveTime::parse_from_str(text, "%H:%M"))
        .ok()?;
    Some(Seconds::from(t.num_seconds_from_midnight()))
}

pub fn format_clock(s: Seconds) -> String {
    format!("{:02}:{:02}:{:02}", s / 3600, (s / 60) % 60, s % 60)
}

fn parse_row(get: impl Fn(&str) -> Option<String>) -> std::result::Result<HistoryRecord, String> {
    let field = |name: &str| -> std::result::Result<String, String> {
        get(name).filter(|v| !v.trim().is_empty()).ok_or_else(|| format!("missing {name}"))
    };
    let coord = |name: &str, limit: f64| -> std::result::Result<f64, String> {
        let v: f64 = field(name)?.trim().parse().map_err(|_| format!("bad {name}"))?;
        if !v.is_finite() || v.abs() > limit {
            return Err(format!("{name} out of range"));
        }
        Ok(v)
    };
    let date = NaiveDate::parse_from_str(field("date")?.trim(), "%Y-%m-%d").map_err(|_| "bad date".to_string())?;
    let passengers: u32 = field("passengers")?.trim().parse().map_err(|_| "bad passengers".to_string())?;
    if passengers == 0 {
        return Err("passengers must be positive".into());
    }
    let pickup_time = parse_clock(&field("pickup_time")?).ok_or("bad pickup_time")?;
    let booking_time = match get("booking_time").filter(|v| !v.trim().is_empty()) {
        Some(v) => Some(parse_clock(&v).ok_or("bad booking_time")?),
        None => None,
    };
    let area = |name: &str| get(name).map(|v| v.trim().to_string()).filter(|v| !v.is_empty());
    Ok(HistoryRecord {
        date,
        pickup_lat: coord("pickup_lat", 90.0)?,
        pickup_lon: coord("pickup_lon", 180.0)?,
        dropoff_lat: coord("dropoff_lat", 90.0)?,
        dropoff_lon: coord("dropoff_lon", 180.0)?,
        passengers,
        pickup_time,
        booking_time,
        pickup_area: area("pickup_area"),
        dropoff_area: area("dropoff_area"),
    })
}

/// Parses a history CSV from any reader.
pub fn parse_history(reader: impl Read) -> Result<HistoryTable> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse { line: 1, message: e.to_string() })?
        .clone();
    let position = |name: &str| headers.iter().position(|h| h.trim() == name);
    for name in REQUIRED {
        if position(name).is_none() {
            return Err(Error::Parse { line: 1, message: format!("missing column {name}") });
        }
    }
    let columns: Vec<(String, usize)> = headers.iter().enumerate().map(|(i, h)| (h.trim().to_string(), i)).collect();
    let mut table = HistoryTable::default();
    for row in rdr.records() {
        let row = row.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let get = |name: &str| {
            columns
                .iter()
                .find(|(h, _)| h == name)
                .and_then(|&(_, i)| row.get(i))
                .map(str::to_string)
        };
        match parse_row(get) {
            Ok(rec) => table.records.push(rec),
            Err(message) => table.diagnostics.push(Diagnostic { line, message }),
        }
    }
    Ok(table)
}

/// Reads a history CSV file.
pub fn ingest_history(path: impl AsRef<Path>) -> Result<HistoryTable> {
    parse_history(std::fs::File::open(path)?)
}

/// Writes records in the documented CSV layout.
pub fn write_history(records: &[HistoryRecord], writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record([
        "date",
        "pickup_lat",
        "pickup_lon",
        "dropoff_lat",
        "dropoff_lon",
        "passengers",
        "pickup_time",
        "booking_time",
        "pickup_area",
        "dropoff_area",
    ])
    .map_err(io)?;
    for r in records {
        w.write_record([
            r.date.format("%Y-%m-%d").to_string(),
            format!("{:.6}", r.pickup_lat),
            format!("{:.6}", r.pickup_lon),
            format!("{:.6}", r.dropoff_lat),
            format!("{:.6}", r.dropoff_lon),
            r.passengers.to_string(),
            format_clock(r.pickup_time),
            r.booking_time.map(format_clock).unwrap_or_default(),
            r.pickup_area.clone().unwrap_or_default(),
            r.dropoff_area.clone().unwrap_or_default(),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Share of booking calls per booking-day hour when call times are unknown:
/// a morning mass (9 to 12), a smaller afternoon mass (12 to 15) and an
/// evening mass (15 to 17).
pub fn default_booking_curve() -> [f64; 24] {
    let mut c = [0.0; 24];
    for (hours, mass) in [(9..12, 0.45), (12..15, 0.35), (15..17, 0.20)] {
        let n = hours.len() as f64;
        for h in hours {
            c[h] = mass / n;
        }
    }
    c
}

/// Parameters of the synthetic city used when no agency data is available.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub center_lat: f64,
    pub center_lon: f64,
    /// Half-width of the service area in kilometres.
    pub radius_km: f64,
    /// Number of demand hotspots (clinics, shopping, housing).
    pub hotspots: usize,
    /// Spread of trips around a hotspot in kilometres.
    pub hotspot_km: f64,
    /// Share of trip ends drawn at a hotspot rather than uniformly.
    pub hotspot_share: f64,
    pub weekday_mean: f64,
    pub weekend_mean: f64,
    /// Share of trips with more than one passenger.
    pub group_share: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            center_lat: 36.16,
            center_lon: -86.78,
            radius_km: 12.0,
            hotspots: 6,
            hotspot_km: 1.2,
            hotspot_share: 0.7,
            weekday_mean: 40.0,
            weekend_mean: 18.0,
            group_share: 0.15,
        }
    }
}

const KM_PER_DEG_LAT: f64 = 111.195;

/// Generates `days` service days of synthetic history starting at `first`.
///
/// Trip ends cluster around a fixed set of hotspots; pickup times follow a
/// morning and an afternoon peak; booking calls follow
/// [`default_booking_curve`], with calls for early pickups biased towards the
/// morning.
pub fn synthesize_history(cfg: &SynthConfig, first: NaiveDate, days: usize, rng: &mut impl Rng) -> Vec<HistoryRecord> {
    let km_per_deg_lon = KM_PER_DEG_LAT * cfg.center_lat.to_radians().cos();
    let uniform_point = |rng: &mut dyn rand::RngCore| {
        let dx = rng.random_range(-cfg.radius_km..cfg.radius_km);
        let dy = rng.random_range(-cfg.radius_km..cfg.radius_km);
        (cfg.center_lat + dy / KM_PER_DEG_LAT, cfg.center_lon + dx / km_per_deg_lon)
    };
    let hotspots: Vec<(f64, f64)> = (0..cfg.hotspots).map(|_| uniform_point(rng)).collect();
    let spread = Normal::new(0.0, cfg.hotspot_km).expect("positive spread");
    let clamp_lat = |v: f64| v.clamp(cfg.center_lat - cfg.radius_km / KM_PER_DEG_LAT, cfg.center_lat + cfg.radius_km / KM_PER_DEG_LAT);
    let clamp_lon = |v: f64| v.clamp(cfg.center_lon - cfg.radius_km / km_per_deg_lon, cfg.center_lon + cfg.radius_km / km_per_deg_lon);
    let curve = default_booking_curve();
    let booking_hours: Vec<usize> = (0..24).filter(|&h| curve[h] > 0.0).collect();
    let booking_weights: Vec<f64> = booking_hours.iter().map(|&h| curve[h]).collect();
    let booking_pick = rand::distr::weighted::WeightedIndex::new(&booking_weights).expect("positive weights");
    let morning_peak = Normal::new(8.5 * 3600.0, 1.3 * 3600.0).expect("valid");
    let afternoon_peak = Normal::new(14.5 * 3600.0, 1.8 * 3600.0).expect("valid");
    let group = Exp::new(1.5).expect("valid");

    let mut out = Vec::new();
    for d in 0..days {
        let date = first + ChronoDuration::days(d as i64);
        let mean = match DayClass::of(date) {
            DayClass::Weekday => cfg.weekday_mean,
            DayClass::Weekend => cfg.weekend_mean,
        };
        let count = Poisson::new(mean.max(1e-9)).expect("positive mean").sample(rng) as usize;
        for _ in 0..count {
            let end = |rng: &mut dyn rand::RngCore| {
                if rng.random_bool(cfg.hotspot_share) && !hotspots.is_empty() {
                    let (lat, lon) = hotspots[rng.random_range(0..hotspots.len())];
                    (
                        clamp_lat(lat + spread.sample(rng) / KM_PER_DEG_LAT),
                        clamp_lon(lon + spread.sample(rng) / km_per_deg_lon),
                    )
                } else {
                    uniform_point(rng)
                }
            };
            let (plat, plon) = end(rng);
            let (dlat, dlon) = end(rng);
            let morning = rng.random_bool(0.55);
            let t = if morning { morning_peak.sample(rng) } else { afternoon_peak.sample(rng) };
            let pickup_time = (t as Seconds).clamp(6 * 3600, 20 * 3600);
            // early pickups are mostly booked in the morning, late ones in the evening
            let booking_hour = if pickup_time < 9 * 3600 && rng.random_bool(0.5) {
                rng.random_range(9..12)
            } else if pickup_time > 17 * 3600 && rng.random_bool(0.5) {
                rng.random_range(15..17)
            } else {
                booking_hours[booking_pick.sample(rng)]
            };
            let booking_time = booking_hour as Seconds * 3600 + rng.random_range(0..3600);
            let passengers = if rng.random_bool(cfg.group_share) {
                (2 + group.sample(rng) as u32).min(6)
            } else {
                1
            };
            out.push(HistoryRecord {
                date,
                pickup_lat: plat,
                pickup_lon: plon,
                dropoff_lat: dlat,
                dropoff_lon: dlon,
                passengers,
                pickup_time,
                booking_time: Some(booking_time),
                pickup_area: None,
                dropoff_area: None,
            });
        }
    }
    out
}
