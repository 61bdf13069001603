//! The eight decision features fed to the value function.
//!
//! A decision state holds the confirmed requests with their tight windows,
//! the current request with its broad window and the routes built so far.
//! An action fixes a tight window for the current request together with the
//! routes after inserting it. The features describe how busy the requested
//! area and hour usually are, how many calls are still expected today, how
//! much the action lengthens the routes, and how fragmented the schedule
//! around the new trip becomes.

use serde::{Deserialize, Serialize};

use crate::demand::DemandModel;
use crate::error::{Error, Result};
use crate::greedy::GreedyParams;
use crate::history::DayClass;
use crate::model::{Location, Problem, ProblemConfig, Seconds, Solution, StopKind, TimeWindow, TravelTimeMatrix, TripId, TripRequest};

pub const FEATURE_COUNT: usize = 8;

/// Feature names in [`FeatureVector::to_array`] order.
pub const FEATURE_NAMES: [&str; FEATURE_COUNT] =
    ["bn_full", "bn_pickup", "bn_dropoff", "bn_time", "er", "ti", "di", "ts"];

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureVector {
    /// Expected daily requests between the same areas in the same hour.
    pub bn_full: f64,
    /// Expected daily requests from the same pickup area in the same hour.
    pub bn_pickup: f64,
    /// Expected daily requests to the same dropoff area in the same hour.
    pub bn_dropoff: f64,
    /// Expected daily requests in the same hour.
    pub bn_time: f64,
    /// Expected booking calls still to come today.
    pub er: f64,
    /// Increase of the summed route durations, seconds.
    pub ti: f64,
    /// Increase of the summed route distances, meters.
    pub di: f64,
    /// Imbalance of the idle gaps around the new trip, in `[0, 1]`.
    pub ts: f64,
}

impl FeatureVector {
    pub fn to_array(&self) -> [f64; FEATURE_COUNT] {
        [self.bn_full, self.bn_pickup, self.bn_dropoff, self.bn_time, self.er, self.ti, self.di, self.ts]
    }

    pub fn from_array(a: [f64; FEATURE_COUNT]) -> Self {
        Self { bn_full: a[0], bn_pickup: a[1], bn_dropoff: a[2], bn_time: a[3], er: a[4], ti: a[5], di: a[6], ts: a[7] }
    }
}

/// Everything a decision needs besides the state itself.
#[derive(Debug, Clone, Copy)]
pub struct DecisionContext<'a> {
    pub cfg: &'a ProblemConfig,
    pub matrix: &'a TravelTimeMatrix,
    /// Locations indexed by id; may be empty when no area data exists.
    pub locations: &'a [Location],
    pub demand: &'a DemandModel,
    pub greedy: &'a GreedyParams,
}

impl DecisionContext<'_> {
    /// Area code of a location, `None` when unknown.
    pub fn area(&self, location: usize) -> Option<&str> {
        self.locations.get(location).map(|l| l.area.as_str()).filter(|a| !a.is_empty())
    }
}

/// The booking state when the newest request's call comes in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BookingState {
    /// Confirmed requests followed by the current one.
    pub requests: Vec<TripRequest>,
    /// Tight windows of the confirmed requests, one per request but the last.
    pub windows: Vec<TimeWindow>,
    /// Routes serving the confirmed requests.
    pub routes: Solution,
    pub class: DayClass,
}

impl BookingState {
    pub fn new(class: DayClass) -> Self {
        Self { requests: Vec::new(), windows: Vec::new(), routes: Solution::default(), class }
    }

    /// The request awaiting a decision.
    pub fn current(&self) -> Option<&TripRequest> {
        (self.requests.len() == self.windows.len() + 1).then(|| self.requests.last()).flatten()
    }

    /// The offline problem over all requests in the state with `window`
    /// as the current request's window.
    pub fn problem<'a>(&'a self, window: TimeWindow, cfg: &'a ProblemConfig, m: &'a TravelTimeMatrix) -> Result<Problem<'a>> {
        if self.current().is_none() {
            return Err(Error::invalid("no request awaits a decision"));
        }
        let mut windows = self.windows.clone();
        windows.push(window);
        Problem::new(&self.requests, windows, cfg, m)
    }

    /// The problem over the confirmed requests only.
    pub fn confirmed_problem<'a>(&'a self, cfg: &'a ProblemConfig, m: &'a TravelTimeMatrix) -> Result<Problem<'a>> {
        Problem::new(&self.requests[..self.windows.len()], self.windows.clone(), cfg, m)
    }
}

/// Expected daily requests for the window's hour: between both areas, from
/// the pickup area, to the dropoff area, and overall.
pub fn busyness(dm: &DemandModel, pickup_area: Option<&str>, dropoff_area: Option<&str>, window: &TimeWindow) -> [f64; 4] {
    dm.busyness(pickup_area, dropoff_area, window)
}

/// Expected number of booking calls after `booking_clock` on a day of `class`.
pub fn expected_remaining(dm: &DemandModel, class: DayClass, booking_clock: Seconds) -> f64 {
    dm.expected_remaining(class, booking_clock)
}

/// Increase in summed route durations from `before` to `after`.
pub fn time_increase(before: &Solution, after: &Solution, cfg: &ProblemConfig, m: &TravelTimeMatrix) -> Result<Seconds> {
    Ok(after.total_duration(cfg, m)? - before.total_duration(cfg, m)?)
}

/// Increase in summed route distances (depot legs included), meters.
pub fn distance_increase(before: &Solution, after: &Solution, cfg: &ProblemConfig, m: &TravelTimeMatrix) -> f64 {
    after.total_distance(cfg, m) - before.total_distance(cfg, m)
}

/// `|x - y| / (x + y)` with 0 when both gaps vanish.
pub fn tightness_ratio(x: Seconds, y: Seconds) -> f64 {
    if x + y == 0 {
        0.0
    } else {
        (x - y).abs() as f64 / (x + y) as f64
    }
}

/// Idle gaps before and after `trip` on its route.
///
/// The gap before is the slack between finishing the previous stop and
/// leaving for the pickup; it is 0 when the vehicle carries another
/// passenger at that moment or when the pickup is the route's first stop.
/// The gap after is measured the same way from the dropoff to the next stop.
/// Both gaps are 0 when the trip shares the vehicle with another trip.
pub fn trip_gaps(sol: &Solution, trip: TripId, cfg: &ProblemConfig, m: &TravelTimeMatrix) -> Result<(Seconds, Seconds)> {
    let route = sol.route_of(trip).map(|r| &sol.routes[r]).ok_or(Error::TripNotServed { trip })?;
    let pos = |kind| route.stops.iter().position(|s| s.trip == trip && s.kind == kind);
    let (Some(p), Some(d)) = (pos(StopKind::Pickup), pos(StopKind::Dropoff)) else {
        return Err(Error::TripNotServed { trip });
    };
    if d != p + 1 {
        return Ok((0, 0));
    }
    let onboard_before = |k: usize| {
        route.stops[..k].iter().fold(0i64, |acc, s| match s.kind {
            StopKind::Pickup => acc + 1,
            StopKind::Dropoff => acc - 1,
        })
    };
    let idle = |from: usize, to: usize| {
        let (a, b) = (&route.stops[from], &route.stops[to]);
        (b.arrival - m.travel(a.location, b.location) - (a.arrival + cfg.dwell)).max(0)
    };
    let x = if p == 0 || onboard_before(p) > 0 { 0 } else { idle(p - 1, p) };
    let y = if d + 1 == route.stops.len() || onboard_before(d + 1) > 0 { 0 } else { idle(d, d + 1) };
    Ok((x, y))
}

/// Schedule fragmentation around `trip` in `sol`, in `[0, 1]`.
pub fn tightness(sol: &Solution, trip: TripId, cfg: &ProblemConfig, m: &TravelTimeMatrix) -> Result<f64> {
    let (x, y) = trip_gaps(sol, trip, cfg, m)?;
    Ok(tightness_ratio(x, y))
}

/// Features of choosing `window` with routes `plan` for the current request.
pub fn feature_vector(state: &BookingState, window: &TimeWindow, plan: &Solution, ctx: &DecisionContext) -> Result<FeatureVector> {
    let req = state.current().ok_or_else(|| Error::invalid("no request awaits a decision"))?;
    let [bn_full, bn_pickup, bn_dropoff, bn_time] =
        busyness(ctx.demand, ctx.area(req.pickup), ctx.area(req.dropoff), window);
    Ok(FeatureVector {
        bn_full,
        bn_pickup,
        bn_dropoff,
        bn_time,
        er: expected_remaining(ctx.demand, state.class, req.booking_instant),
        ti: time_increase(&state.routes, plan, ctx.cfg, ctx.matrix)? as f64,
        di: distance_increase(&state.routes, plan, ctx.cfg, ctx.matrix),
        ts: tightness(plan, req.id, ctx.cfg, ctx.matrix)?,
    })
}
