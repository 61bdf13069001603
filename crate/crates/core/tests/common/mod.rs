//! Fixtures shared by the integration tests.

#![allow(dead_code)]

use chrono::NaiveDate;
use paraflex_core::demand::{AreaScheme, DemandModel};
use paraflex_core::generate::{random_instance, GenConfig};
use paraflex_core::history::{synthesize_history, HistoryRecord, SynthConfig};
use paraflex_core::instance::Instance;
use paraflex_core::{Location, Route, Seconds, Solution, StopKind, TravelTimeMatrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn first_day() -> NaiveDate {
    NaiveDate::from_ymd_opt(2024, 1, 1).unwrap()
}

/// Synthetic history and the model built from it on the default grid.
pub fn synthetic_model(days: usize, weekday_mean: f64, seed: u64) -> (Vec<HistoryRecord>, DemandModel) {
    let cfg = SynthConfig { weekday_mean, weekend_mean: weekday_mean / 2.0, ..SynthConfig::default() };
    let records = synthesize_history(&cfg, first_day(), days, &mut rng(seed));
    let dm = DemandModel::build(&records, AreaScheme::auto(&records));
    (records, dm)
}

pub fn instance(trips: usize, seed: u64) -> Instance {
    random_instance(&GenConfig { trips, ..GenConfig::default() }, &mut rng(seed)).unwrap()
}

pub fn tiny_instance(trips: usize, seed: u64) -> Instance {
    random_instance(&GenConfig::tiny(trips), &mut rng(seed)).unwrap()
}

/// Locations on a line, `step` seconds and `step` meters apart.
pub fn line_matrix(n: usize, step: Seconds) -> TravelTimeMatrix {
    let mut s = vec![0; n * n];
    let mut d = vec![0.0; n * n];
    for a in 0..n {
        for b in 0..n {
            s[a * n + b] = (a as Seconds - b as Seconds).abs() * step;
            d[a * n + b] = s[a * n + b] as f64;
        }
    }
    TravelTimeMatrix::new(n, s, d).unwrap()
}

pub fn locations(n: usize, area: impl Fn(usize) -> String) -> Vec<Location> {
    (0..n).map(|id| Location { id, lat: 36.0 + id as f64 * 1e-3, lon: -86.0, area: area(id) }).collect()
}

/// Depot-to-depot duration of a route, summed straight from the stops.
pub fn route_duration_by_hand(route: &Route, depot: usize, dwell: Seconds, m: &TravelTimeMatrix) -> Seconds {
    let first = route.stops.first().unwrap();
    let last = route.stops.last().unwrap();
    let start = first.arrival - m.travel(depot, first.location);
    let end = last.arrival + dwell + m.travel(last.location, depot);
    end - start
}

pub fn distance_by_hand(sol: &Solution, depot: usize, m: &TravelTimeMatrix) -> f64 {
    let mut total = 0.0;
    for r in &sol.routes {
        let mut at = depot;
        for s in &r.stops {
            total += m.distance(at, s.location);
            at = s.location;
        }
        total += m.distance(at, depot);
    }
    total
}

pub fn stop(trip: u32, kind: StopKind, location: usize, arrival: Seconds) -> paraflex_core::Stop {
    paraflex_core::Stop { trip, kind, location, arrival }
}
