//! Constraint checking for candidate solutions.
//!
//! Infeasibility is reported as data: [`check_feasibility`] returns one
//! [`Violation`] per broken constraint instance and an empty list for a
//! feasible solution.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{route_bounds, Problem, Route, Solution, StopKind, TripId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    /// A trip is picked up or dropped off more than once, or a stop refers to
    /// a trip outside the instance.
    DuplicateStop,
    /// A trip is never picked up.
    UnservedTrip,
    /// A pickup falls outside its window.
    WindowMiss,
    /// A dropoff happens after the pickup window end plus the direct ride.
    DropoffLate,
    /// Consecutive stops are closer in time than dwell plus travel.
    TravelTime,
    /// A route is longer than the maximum duration.
    DurationExceeded,
    /// Occupancy exceeds vehicle capacity.
    CapacityExceeded,
    /// A trip's pickup and dropoff are not an ordered pair on one route.
    PairSplit,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub trip: Option<TripId>,
    pub route: Option<usize>,
    pub detail: String,
}

impl Violation {
    fn new(kind: ViolationKind, trip: Option<TripId>, route: Option<usize>, detail: String) -> Self {
        Self { kind, trip, route, detail }
    }
}

/// Checks every constraint family of the offline problem. The result is empty
/// exactly when `sol` serves each trip once, inside its window, on time, and
/// within the travel, duration and capacity limits.
pub fn check_feasibility(sol: &Solution, problem: &Problem) -> Vec<Violation> {
    use ViolationKind::*;
    let mut out = Vec::new();
    // (route, position) of each pickup and dropoff seen per trip
    let mut pickups: HashMap<TripId, Vec<(usize, usize)>> = HashMap::new();
    let mut dropoffs: HashMap<TripId, Vec<(usize, usize)>> = HashMap::new();

    for (ri, route) in sol.routes.iter().enumerate() {
        for (si, stop) in route.stops.iter().enumerate() {
            let Some(idx) = problem.index_of(stop.trip) else {
                out.push(Violation::new(DuplicateStop, Some(stop.trip), Some(ri), "stop for a trip outside the instance".into()));
                continue;
            };
            let req = problem.request(idx);
            let expected = match stop.kind {
                StopKind::Pickup => req.pickup,
                StopKind::Dropoff => req.dropoff,
            };
            if stop.location != expected {
                out.push(Violation::new(
                    PairSplit,
                    Some(stop.trip),
                    Some(ri),
                    format!("{:?} at location {} instead of {}", stop.kind, stop.location, expected),
                ));
            }
            match stop.kind {
                StopKind::Pickup => {
                    pickups.entry(stop.trip).or_default().push((ri, si));
                    let w = problem.window(idx);
                    if !w.contains(stop.arrival) {
                        out.push(Violation::new(
                            WindowMiss,
                            Some(stop.trip),
                            Some(ri),
                            format!("pickup at {} outside [{}, {}]", stop.arrival, w.start, w.end),
                        ));
                    }
                }
                StopKind::Dropoff => {
                    dropoffs.entry(stop.trip).or_default().push((ri, si));
                    let deadline = problem.dropoff_window(idx).end;
                    if stop.arrival > deadline {
                        out.push(Violation::new(
                            DropoffLate,
                            Some(stop.trip),
                            Some(ri),
                            format!("dropoff at {} after deadline {}", stop.arrival, deadline),
                        ));
                    }
                }
            }
        }
        for pair in route.stops.windows(2) {
            let ready = pair[0].arrival + problem.cfg.dwell + problem.matrix.travel(pair[0].location, pair[1].location);
            if ready > pair[1].arrival {
                out.push(Violation::new(
                    TravelTime,
                    Some(pair[1].trip),
                    Some(ri),
                    format!("stop reached at {} but scheduled at {}", ready, pair[1].arrival),
                ));
            }
        }
        if let Ok((start, end)) = route_bounds(route, problem.cfg, problem.matrix) {
            if end - start > problem.cfg.max_route {
                out.push(Violation::new(
                    DurationExceeded,
                    None,
                    Some(ri),
                    format!("duration {} exceeds {}", end - start, problem.cfg.max_route),
                ));
            }
        }
        if let Some(peak) = peak_load(route, problem) {
            if peak > i64::from(problem.cfg.capacity) {
                out.push(Violation::new(
                    CapacityExceeded,
                    None,
                    Some(ri),
                    format!("occupancy {} exceeds capacity {}", peak, problem.cfg.capacity),
                ));
            }
        }
    }

    for req in problem.requests {
        let p = pickups.get(&req.id).map_or(&[][..], Vec::as_slice);
        let d = dropoffs.get(&req.id).map_or(&[][..], Vec::as_slice);
        if p.len() > 1 || d.len() > 1 {
            out.push(Violation::new(
                DuplicateStop,
                Some(req.id),
                None,
                format!("{} pickups and {} dropoffs", p.len(), d.len()),
            ));
        }
        match (p.first(), d.first()) {
            (None, None) => out.push(Violation::new(UnservedTrip, Some(req.id), None, "trip is not served".into())),
            (Some(&(rp, sp)), Some(&(rd, sd))) if rp == rd && sp < sd => {}
            (pp, dd) => out.push(Violation::new(
                PairSplit,
                Some(req.id),
                pp.or(dd).map(|&(r, _)| r),
                format!("pickup at {pp:?}, dropoff at {dd:?} (route, position)"),
            )),
        }
    }
    out
}

/// Highest running occupancy of a route counting only trips of the problem;
/// dropoffs without a preceding pickup are ignored.
fn peak_load(route: &Route, problem: &Problem) -> Option<i64> {
    let mut load = 0i64;
    let mut peak = 0i64;
    let mut onboard: Vec<TripId> = Vec::new();
    for stop in &route.stops {
        let idx = problem.index_of(stop.trip)?;
        let p = i64::from(problem.request(idx).passengers);
        match stop.kind {
            StopKind::Pickup => {
                onboard.push(stop.trip);
                load += p;
            }
            StopKind::Dropoff => {
                if let Some(pos) = onboard.iter().position(|&t| t == stop.trip) {
                    onboard.swap_remove(pos);
                    load -= p;
                }
            }
        }
        peak = peak.max(load);
    }
    Some(peak)
}

/// Number of passengers on board after each stop.
pub fn occupancy_profile(route: &Route, problem: &Problem) -> Result<Vec<u32>> {
    let mut load = 0u32;
    let mut onboard: Vec<TripId> = Vec::new();
    let mut out = Vec::with_capacity(route.stops.len());
    for stop in &route.stops {
        let idx = problem.index_of(stop.trip).ok_or(Error::UnknownTrip { trip: stop.trip })?;
        let p = problem.request(idx).passengers;
        match stop.kind {
            StopKind::Pickup => {
                onboard.push(stop.trip);
                load += p;
            }
            StopKind::Dropoff => {
                let pos = onboard
                    .iter()
                    .position(|&t| t == stop.trip)
                    .ok_or(Error::PairOrder { trip: stop.trip })?;
                onboard.swap_remove(pos);
                load -= p;
            }
        }
        out.push(load);
    }
    Ok(out)
}
