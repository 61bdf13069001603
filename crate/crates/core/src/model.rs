//! Domain types for the offline vehicle routing problem with pickup windows,
//! plus the route-duration objective.
//!
//! All times are integer seconds since service-day midnight. Window bounds are
//! inclusive on both ends.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Seconds = i64;
pub type TripId = u32;
pub type LocationId = usize;

/// Mean urban driving speed used when travel times are synthesized from
/// coordinates.
pub const URBAN_SPEED_KMH: f64 = 30.0;

const EARTH_RADIUS_M: f64 = 6_371_008.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Location {
    pub id: LocationId,
    pub lat: f64,
    pub lon: f64,
    /// Area code used for demand lookups (ZIP code or grid cell).
    pub area: String,
}

/// Great-circle distance in meters.
pub fn haversine_m(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * a.sqrt().min(1.0).asin()
}

/// Dense travel-time (seconds) and distance (meters) matrices, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TravelTimeMatrix {
    size: usize,
    seconds: Vec<Seconds>,
    meters: Vec<f64>,
}

impl TravelTimeMatrix {
    pub fn new(size: usize, seconds: Vec<Seconds>, meters: Vec<f64>) -> Result<Self> {
        if seconds.len() != size * size || meters.len() != size * size {
            return Err(Error::invalid(format!(
                "matrix of size {size} needs {} entries, got {} seconds / {} meters",
                size * size,
                seconds.len(),
                meters.len()
            )));
        }
        for a in 0..size {
            for b in 0..size {
                let (t, d) = (seconds[a * size + b], meters[a * size + b]);
                if t < 0 || !d.is_finite() || d < 0.0 {
                    return Err(Error::invalid(format!("matrix entry ({a},{b}) is negative or not finite")));
                }
                if a == b && (t != 0 || d != 0.0) {
                    return Err(Error::invalid(format!("matrix diagonal ({a},{a}) is not zero")));
                }
            }
        }
        Ok(Self { size, seconds, meters })
    }

    /// Synthesizes travel times from great-circle distances at `speed_kmh`,
    /// rounded up to whole seconds. Rounding up keeps the triangle inequality
    /// exact.
    pub fn from_locations(locations: &[Location], speed_kmh: f64) -> Self {
        let size = locations.len();
        let mps = speed_kmh / 3.6;
        let mut seconds = vec![0; size * size];
        let mut meters = vec![0.0; size * size];
        for (a, la) in locations.iter().enumerate() {
            for (b, lb) in locations.iter().enumerate().skip(a + 1) {
                let d = haversine_m(la.lat, la.lon, lb.lat, lb.lon);
                let t = (d / mps).ceil() as Seconds;
                for (i, j) in [(a, b), (b, a)] {
                    seconds[i * size + j] = t;
                    meters[i * size + j] = d;
                }
            }
        }
        Self { size, seconds, meters }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn travel(&self, from: LocationId, to: LocationId) -> Seconds {
        self.seconds[from * self.size + to]
    }

    #[inline]
    pub fn distance(&self, from: LocationId, to: LocationId) -> f64 {
        self.meters[from * self.size + to]
    }

    pub fn seconds(&self) -> &[Seconds] {
        &self.seconds
    }

    pub fn meters(&self) -> &[f64] {
        &self.meters
    }

    /// Returns triples `(a, b, c)` with `travel(a,c) > travel(a,b) + travel(b,c) + 1`.
    ///
    /// Small matrices are checked exhaustively; larger ones on a deterministic
    /// sample of `max_triples` triples.
    pub fn triangle_violations(&self, max_triples: usize) -> Vec<(usize, usize, usize)> {
        let n = self.size;
        let mut out = Vec::new();
        let mut check = |a: usize, b: usize, c: usize| {
            if self.travel(a, c) > self.travel(a, b) + self.travel(b, c) + 1 {
                out.push((a, b, c));
            }
        };
        if n.pow(3) <= max_triples {
            for a in 0..n {
                for b in 0..n {
                    for c in 0..n {
                        check(a, b, c);
                    }
                }
            }
        } else {
            // splitmix64 sequence; keeps the audit reproducible without an rng dependency
            let mut state: u64 = 0x9E37_79B9_7F4A_7C15;
            let mut next = || {
                state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
                let mut z = state;
                z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
                z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
                (z ^ (z >> 31)) as usize % n
            };
            for _ in 0..max_triples {
                let (a, b, c) = (next(), next(), next());
                check(a, b, c);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeWindow {
    pub start: Seconds,
    pub end: Seconds,
}

impl TimeWindow {
    pub fn new(start: Seconds, end: Seconds) -> Result<Self> {
        if start < 0 || start > end {
            return Err(Error::invalid(format!("bad time window [{start}, {end}]")));
        }
        Ok(Self { start, end })
    }

    pub fn len(&self) -> Seconds {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn contains(&self, t: Seconds) -> bool {
        self.start <= t && t <= self.end
    }

    pub fn shifted(&self, by: Seconds) -> Self {
        Self { start: self.start + by, end: self.end + by }
    }

    pub fn contains_window(&self, other: &TimeWindow) -> bool {
        self.start <= other.start && other.end <= self.end
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TripRequest {
    pub id: TripId,
    pub pickup: LocationId,
    pub dropoff: LocationId,
    pub passengers: u32,
    /// Seconds since midnight of the booking day (when the call arrives).
    pub booking_instant: Seconds,
    pub broad_window: TimeWindow,
}

impl TripRequest {
    /// Checks the request against the fleet and booking constraints.
    pub fn validate(&self, cfg: &ProblemConfig) -> Result<()> {
        if self.pickup == self.dropoff {
            return Err(Error::invalid(format!("trip {}: pickup equals dropoff", self.id)));
        }
        if self.passengers == 0 || self.passengers > cfg.capacity {
            return Err(Error::invalid(format!(
                "trip {}: {} passengers outside 1..={}",
                self.id, self.passengers, cfg.capacity
            )));
        }
        if self.broad_window.len() < cfg.window_len {
            return Err(Error::invalid(format!(
                "trip {}: broad window shorter than {} s",
                self.id, cfg.window_len
            )));
        }
        Ok(())
    }
}

/// Fleet and booking constants shared by every solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProblemConfig {
    /// Vehicle passenger capacity.
    pub capacity: u32,
    /// Service time at every pickup and dropoff.
    pub dwell: Seconds,
    /// Maximum depot-to-depot route duration.
    pub max_route: Seconds,
    /// Maximum tight window length.
    pub window_len: Seconds,
    /// Fixed cost charged per route, in seconds-equivalent.
    pub route_overhead: Seconds,
    pub depot: LocationId,
    /// Step of the tight-window start grid.
    pub grid: Seconds,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self {
            capacity: 9,
            dwell: 180,
            max_route: 36_000,
            window_len: 1_800,
            route_overhead: 1_800,
            depot: 0,
            grid: 900,
        }
    }
}

impl ProblemConfig {
    pub fn validate(&self) -> Result<()> {
        if self.capacity == 0 || self.dwell <= 0 || self.max_route <= 0 || self.window_len <= 0 || self.grid <= 0 {
            return Err(Error::invalid("capacity and all durations must be positive"));
        }
        if self.route_overhead < 0 {
            return Err(Error::invalid("route overhead must be non-negative"));
        }
        if self.window_len % self.grid != 0 {
            return Err(Error::invalid("grid step must divide the window length"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StopKind {
    Pickup,
    Dropoff,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stop {
    pub trip: TripId,
    pub kind: StopKind,
    pub location: LocationId,
    pub arrival: Seconds,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Route {
    pub stops: Vec<Stop>,
}

impl Route {
    pub fn new(stops: Vec<Stop>) -> Self {
        Self { stops }
    }

    pub fn is_empty(&self) -> bool {
        self.stops.is_empty()
    }

    pub fn len(&self) -> usize {
        self.stops.len()
    }

    /// Trip ids in pickup order.
    pub fn trips(&self) -> impl Iterator<Item = TripId> + '_ {
        self.stops.iter().filter(|s| s.kind == StopKind::Pickup).map(|s| s.trip)
    }

    pub fn serves(&self, trip: TripId) -> bool {
        self.stops.iter().any(|s| s.trip == trip)
    }

    /// Removes both stops of `trip`, keeping the remaining order.
    pub fn without_trip(&self, trip: TripId) -> Route {
        Route { stops: self.stops.iter().filter(|s| s.trip != trip).cloned().collect() }
    }

    pub fn duration(&self, cfg: &ProblemConfig, m: &TravelTimeMatrix) -> Result<Seconds> {
        let (start, end) = route_bounds(self, cfg, m)?;
        Ok(end - start)
    }

    /// Driven distance in meters including the depot legs.
    pub fn distance(&self, cfg: &ProblemConfig, m: &TravelTimeMatrix) -> f64 {
        if self.stops.is_empty() {
            return 0.0;
        }
        let mut total = m.distance(cfg.depot, self.stops[0].location);
        for w in self.stops.windows(2) {
            total += m.distance(w[0].location, w[1].location);
        }
        total + m.distance(self.stops[self.stops.len() - 1].location, cfg.depot)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Solution {
    pub routes: Vec<Route>,
}

impl Solution {
    pub fn new(routes: Vec<Route>) -> Self {
        Self { routes }
    }

    pub fn route_of(&self, trip: TripId) -> Option<usize> {
        self.routes.iter().position(|r| r.serves(trip))
    }

    pub fn trip_count(&self) -> usize {
        self.routes.iter().map(|r| r.trips().count()).sum()
    }

    /// Sorted multiset of served trip ids (pickups).
    pub fn served_trips(&self) -> Vec<TripId> {
        let mut v: Vec<TripId> = self.routes.iter().flat_map(|r| r.trips()).collect();
        v.sort_unstable();
        v
    }

    pub fn total_duration(&self, cfg: &ProblemConfig, m: &TravelTimeMatrix) -> Result<Seconds> {
        self.routes.iter().map(|r| r.duration(cfg, m)).sum()
    }

    pub fn total_distance(&self, cfg: &ProblemConfig, m: &TravelTimeMatrix) -> f64 {
        self.routes.iter().map(|r| r.distance(cfg, m)).sum()
    }
}

/// Depot departure and return times of a route: the earliest
/// `arrival - travel(depot, stop)` and the latest
/// `arrival + dwell + travel(stop, depot)` over all stops.
pub fn route_bounds(route: &Route, cfg: &ProblemConfig, m: &TravelTimeMatrix) -> Result<(Seconds, Seconds)> {
    if route.stops.is_empty() {
        return Err(Error::EmptyRoute);
    }
    let start = route
        .stops
        .iter()
        .map(|s| s.arrival - m.travel(cfg.depot, s.location))
        .min()
        .expect("non-empty");
    let end = route
        .stops
        .iter()
        .map(|s| s.arrival + cfg.dwell + m.travel(s.location, cfg.depot))
        .max()
        .expect("non-empty");
    Ok((start, end))
}

/// Total route duration plus the per-route overhead.
pub fn solution_cost(sol: &Solution, cfg: &ProblemConfig, m: &TravelTimeMatrix) -> Result<Seconds> {
    let durations = sol.total_duration(cfg, m)?;
    Ok(durations + cfg.route_overhead * sol.routes.len() as Seconds)
}

/// A validated view of one offline VRP instance: requests paired with the
/// pickup windows currently in force.
#[derive(Debug, Clone)]
pub struct Problem<'a> {
    pub requests: &'a [TripRequest],
    pub windows: Vec<TimeWindow>,
    pub cfg: &'a ProblemConfig,
    pub matrix: &'a TravelTimeMatrix,
    index: HashMap<TripId, usize>,
}

impl<'a> Problem<'a> {
    pub fn new(
        requests: &'a [TripRequest],
        windows: Vec<TimeWindow>,
        cfg: &'a ProblemConfig,
        matrix: &'a TravelTimeMatrix,
    ) -> Result<Self> {
        if requests.len() != windows.len() {
            return Err(Error::invalid(format!(
                "{} requests but {} windows",
                requests.len(),
                windows.len()
            )));
        }
        if cfg.depot >= matrix.size() {
            return Err(Error::invalid("depot outside the travel matrix"));
        }
        let mut index = HashMap::with_capacity(requests.len());
        for (i, (r, w)) in requests.iter().zip(&windows).enumerate() {
            if index.insert(r.id, i).is_some() {
                return Err(Error::invalid(format!("duplicate trip id {}", r.id)));
            }
            if r.pickup >= matrix.size() || r.dropoff >= matrix.size() {
                return Err(Error::invalid(format!("trip {} references an unknown location", r.id)));
            }
            if r.pickup == r.dropoff {
                return Err(Error::invalid(format!("trip {}: pickup equals dropoff", r.id)));
            }
            if r.passengers == 0 || r.passengers > cfg.capacity {
                return Err(Error::invalid(format!("trip {}: passenger count out of range", r.id)));
            }
            if w.start < 0 || w.start > w.end {
                return Err(Error::invalid(format!("trip {}: bad window", r.id)));
            }
        }
        Ok(Self { requests, windows, cfg, matrix, index })
    }

    /// The problem on the requests' broad windows.
    pub fn with_broad_windows(
        requests: &'a [TripRequest],
        cfg: &'a ProblemConfig,
        matrix: &'a TravelTimeMatrix,
    ) -> Result<Self> {
        let windows = requests.iter().map(|r| r.broad_window).collect();
        Self::new(requests, windows, cfg, matrix)
    }

    pub fn len(&self) -> usize {
        self.requests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.requests.is_empty()
    }

    pub fn index_of(&self, trip: TripId) -> Option<usize> {
        self.index.get(&trip).copied()
    }

    pub fn request(&self, idx: usize) -> &TripRequest {
        &self.requests[idx]
    }

    pub fn window(&self, idx: usize) -> TimeWindow {
        self.windows[idx]
    }

    /// Direct (detour-free) ride time of a trip.
    pub fn ride_time(&self, idx: usize) -> Seconds {
        let r = &self.requests[idx];
        self.matrix.travel(r.pickup, r.dropoff)
    }

    /// Dropoff window implied by the pickup window and the direct ride time.
    pub fn dropoff_window(&self, idx: usize) -> TimeWindow {
        self.windows[idx].shifted(self.ride_time(idx))
    }

    /// Window that applies to a stop (pickup or dropoff window of its trip).
    pub fn stop_window(&self, stop: &Stop) -> Option<TimeWindow> {
        let idx = self.index_of(stop.trip)?;
        Some(match stop.kind {
            StopKind::Pickup => self.window(idx),
            StopKind::Dropoff => self.dropoff_window(idx),
        })
    }

    pub fn pickup_stop(&self, idx: usize, arrival: Seconds) -> Stop {
        let r = &self.requests[idx];
        Stop { trip: r.id, kind: StopKind::Pickup, location: r.pickup, arrival }
    }

    pub fn dropoff_stop(&self, idx: usize, arrival: Seconds) -> Stop {
        let r = &self.requests[idx];
        Stop { trip: r.id, kind: StopKind::Dropoff, location: r.dropoff, arrival }
    }

    pub fn cost(&self, sol: &Solution) -> Result<Seconds> {
        solution_cost(sol, self.cfg, self.matrix)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_matrix(n: usize, step: Seconds) -> TravelTimeMatrix {
        let mut s = vec![0; n * n];
        let mut d = vec![0.0; n * n];
        for a in 0..n {
            for b in 0..n {
                let t = (a as Seconds - b as Seconds).abs() * step;
                s[a * n + b] = t;
                d[a * n + b] = t as f64 * 8.0;
            }
        }
        TravelTimeMatrix::new(n, s, d).unwrap()
    }

    fn stop(trip: TripId, kind: StopKind, location: LocationId, arrival: Seconds) -> Stop {
        Stop { trip, kind, location, arrival }
    }

    #[test]
    fn bounds_of_single_stop() {
        let m = line_matrix(2, 600);
        let cfg = ProblemConfig::default();
        let route = Route::new(vec![stop(1, StopKind::Pickup, 1, 3600)]);
        assert_eq!(route_bounds(&route, &cfg, &m).unwrap(), (3000, 4380));
    }

    #[test]
    fn bounds_of_stop_at_depot() {
        let m = line_matrix(2, 600);
        let cfg = ProblemConfig::default();
        let route = Route::new(vec![stop(1, StopKind::Pickup, 0, 0)]);
        assert_eq!(route_bounds(&route, &cfg, &m).unwrap(), (0, 180));
    }

    #[test]
    fn empty_route_has_no_bounds() {
        let m = line_matrix(2, 600);
        let cfg = ProblemConfig::default();
        assert!(matches!(route_bounds(&Route::default(), &cfg, &m), Err(Error::EmptyRoute)));
        let sol = Solution::new(vec![Route::default()]);
        assert!(matches!(solution_cost(&sol, &cfg, &m), Err(Error::EmptyRoute)));
    }

    #[test]
    fn cost_of_empty_and_single_route() {
        let m = line_matrix(2, 600);
        let cfg = ProblemConfig::default();
        assert_eq!(solution_cost(&Solution::default(), &cfg, &m).unwrap(), 0);
        let sol = Solution::new(vec![Route::new(vec![stop(1, StopKind::Pickup, 1, 3600)])]);
        assert_eq!(solution_cost(&sol, &cfg, &m).unwrap(), 1380 + 1800);
    }

    #[test]
    fn cost_strictly_increases_with_overhead() {
        let m = line_matrix(3, 300);
        let mut cfg = ProblemConfig::default();
        let sol = Solution::new(vec![
            Route::new(vec![stop(1, StopKind::Pickup, 1, 1000)]),
            Route::new(vec![stop(2, StopKind::Pickup, 2, 5000)]),
        ]);
        let low = solution_cost(&sol, &cfg, &m).unwrap();
        cfg.route_overhead += 1;
        assert_eq!(solution_cost(&sol, &cfg, &m).unwrap(), low + 2);
    }

    #[test]
    fn matrix_rejects_bad_entries() {
        assert!(TravelTimeMatrix::new(2, vec![0, 1, 1, 0], vec![0.0; 3]).is_err());
        assert!(TravelTimeMatrix::new(2, vec![1, 1, 1, 0], vec![0.0; 4]).is_err());
        assert!(TravelTimeMatrix::new(2, vec![0, -1, 1, 0], vec![0.0; 4]).is_err());
        assert!(TravelTimeMatrix::new(2, vec![0, 1, 1, 0], vec![0.0, f64::NAN, 0.0, 0.0]).is_err());
    }

    #[test]
    fn synthesized_matrix_satisfies_triangle_inequality() {
        let locs: Vec<Location> = (0..12)
            .map(|i| Location {
                id: i,
                lat: 36.1 + 0.013 * ((i * 7) % 5) as f64,
                lon: -86.8 + 0.017 * ((i * 3) % 7) as f64,
                area: "x".into(),
            })
            .collect();
        let m = TravelTimeMatrix::from_locations(&locs, URBAN_SPEED_KMH);
        assert!(m.triangle_violations(1_000_000).is_empty());
        // 1 km at 30 km/h is 120 s
        let d = m.distance(0, 1);
        assert_eq!(m.travel(0, 1), (d / (30.0 / 3.6)).ceil() as Seconds);
    }

    #[test]
    fn triangle_audit_flags_shortcut() {
        let mut s = vec![0, 100, 500, 100, 0, 100, 500, 100, 0];
        let m = TravelTimeMatrix::new(3, s.clone(), vec![0.0; 9]).unwrap();
        assert!(!m.triangle_violations(1000).is_empty());
        s[2] = 201;
        s[6] = 201;
        let m = TravelTimeMatrix::new(3, s, vec![0.0; 9]).unwrap();
        assert!(m.triangle_violations(1000).is_empty());
    }

    #[test]
    fn problem_rejects_duplicate_ids() {
        let m = line_matrix(3, 100);
        let cfg = ProblemConfig::default();
        let w = TimeWindow { start: 0, end: 1800 };
        let r = TripRequest { id: 1, pickup: 1, dropoff: 2, passengers: 1, booking_instant: 0, broad_window: w };
        let reqs = vec![r.clone(), r];
        assert!(Problem::new(&reqs, vec![w, w], &cfg, &m).is_err());
    }
}
