//! Seeded random instances for tests, benchmarks and the command line.
//!
//! Locations are drawn uniformly in a square around a city centre and travel
//! times use great-circle distance at urban speed, so the matrix satisfies
//! the triangle inequality.

use rand::Rng;

use crate::error::Result;
use crate::instance::Instance;
use crate::model::{Location, ProblemConfig, Seconds, TimeWindow, TravelTimeMatrix, TripRequest, URBAN_SPEED_KMH};

const M_PER_DEG_LAT: f64 = 111_195.0;

/// Shape of generated instances.
#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub trips: usize,
    pub center_lat: f64,
    pub center_lon: f64,
    /// Half the side of the service square, meters.
    pub half_side_m: f64,
    /// Service hours in which broad windows must lie, seconds since midnight.
    pub service: TimeWindow,
    /// Length of the broad windows.
    pub broad_len: Seconds,
    /// Pick a tight window for every trip.
    pub tight: bool,
    /// Probability that a trip carries more than one passenger.
    pub group_share: f64,
    pub cfg: ProblemConfig,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            trips: 20,
            center_lat: 36.16,
            center_lon: -86.78,
            half_side_m: 8000.0,
            service: TimeWindow { start: 6 * 3600, end: 20 * 3600 },
            broad_len: 3 * 3600,
            tight: true,
            group_share: 0.15,
            cfg: ProblemConfig::default(),
        }
    }
}

impl GenConfig {
    /// Small dense instances where trips often share a vehicle: a compact
    /// area and broad windows inside a three-hour span.
    pub fn tiny(trips: usize) -> Self {
        Self {
            trips,
            half_side_m: 3000.0,
            service: TimeWindow { start: 9 * 3600, end: 12 * 3600 },
            broad_len: 3600,
            ..Self::default()
        }
    }
}

/// Uniform grid start in `[w.start, w.end - len]`.
pub fn random_grid_window(w: &TimeWindow, len: Seconds, grid: Seconds, rng: &mut impl Rng) -> TimeWindow {
    let slots = ((w.len() - len) / grid).max(0);
    let start = w.start + grid * rng.random_range(0..=slots);
    TimeWindow { start, end: start + len }
}

/// A random instance. Trip `k` (ids from 1) books its call in booking-day
/// order, so booking instants are non-decreasing in id.
pub fn random_instance(gen: &GenConfig, rng: &mut impl Rng) -> Result<Instance> {
    let cfg = gen.cfg.clone();
    let dlat = gen.half_side_m / M_PER_DEG_LAT;
    let dlon = gen.half_side_m / (M_PER_DEG_LAT * gen.center_lat.to_radians().cos());
    let n_loc = 1 + 2 * gen.trips;
    let mut locations: Vec<Location> = (0..n_loc)
        .map(|id| Location {
            id,
            lat: gen.center_lat + if id == 0 { 0.0 } else { rng.random_range(-dlat..dlat) },
            lon: gen.center_lon + if id == 0 { 0.0 } else { rng.random_range(-dlon..dlon) },
            area: String::new(),
        })
        .collect();
    for loc in &mut locations {
        let row = ((loc.lat - gen.center_lat + dlat) * M_PER_DEG_LAT / 2000.0).floor() as i64;
        let col = ((loc.lon - gen.center_lon + dlon) * M_PER_DEG_LAT * gen.center_lat.to_radians().cos() / 2000.0).floor() as i64;
        loc.area = format!("g{row}_{col}");
    }
    let matrix = TravelTimeMatrix::from_locations(&locations, URBAN_SPEED_KMH);
    let mut bookings: Vec<Seconds> = (0..gen.trips).map(|_| rng.random_range(9 * 3600..17 * 3600)).collect();
    bookings.sort_unstable();
    let latest_start = (gen.service.end - gen.broad_len).max(gen.service.start);
    let slots = (latest_start - gen.service.start) / cfg.grid;
    let mut requests = Vec::with_capacity(gen.trips);
    let mut windows = Vec::with_capacity(gen.trips);
    for (k, booking_instant) in bookings.into_iter().enumerate() {
        let start = gen.service.start + cfg.grid * rng.random_range(0..=slots);
        let broad_window = TimeWindow { start, end: start + gen.broad_len };
        let passengers = if cfg.capacity >= 2 && rng.random_bool(gen.group_share) {
            rng.random_range(2..=cfg.capacity.min(3))
        } else {
            1
        };
        windows.push(random_grid_window(&broad_window, cfg.window_len, cfg.grid, rng));
        requests.push(TripRequest {
            id: k as u32 + 1,
            pickup: 1 + 2 * k,
            dropoff: 2 + 2 * k,
            passengers,
            booking_instant,
            broad_window,
        });
    }
    Instance::new(locations, matrix, cfg, requests, gen.tight.then_some(windows))
}
