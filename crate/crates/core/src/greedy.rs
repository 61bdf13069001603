//! Greedy route construction.
//!
//! Routes are opened one at a time. Each open route repeatedly absorbs the
//! unserved trip whose cheapest insertion has the lowest weighted cost
//! ([`GreedyParams::gcost`]) until no trip fits under the acceptance
//! threshold ([`GreedyParams::gthreshold`]); then the next route is opened.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Problem, Route, Seconds, Solution, Stop, TimeWindow};
use crate::schedule::Node;

/// Weights of the insertion cost and acceptance threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GreedyParams {
    pub p_wait: f64,
    pub p_ratio_cost: f64,
    pub p_length: f64,
    pub p_ratio_thres: f64,
    pub p_const: f64,
}

impl Default for GreedyParams {
    fn default() -> Self {
        Self { p_wait: 0.1, p_ratio_cost: 0.1, p_length: 10.0, p_ratio_thres: 0.1, p_const: 0.1 }
    }
}

impl GreedyParams {
    /// Weighted insertion cost in seconds:
    /// `extra + (p_wait + p_ratio_cost * ratio) * wait`.
    pub fn gcost(&self, ratio: f64, extra: Seconds, wait: Seconds) -> f64 {
        extra as f64 + (self.p_wait + self.p_ratio_cost * ratio) * wait as f64
    }

    /// Acceptance threshold in hours:
    /// `p_const + p_ratio_thres * ratio + p_length * duration`, with the
    /// duration of the extended route in hours.
    pub fn gthreshold(&self, ratio: f64, duration: Seconds) -> f64 {
        self.p_const + self.p_ratio_thres * ratio + self.p_length * duration as f64 / 3600.0
    }

    /// Whether an insertion of cost `gcost` (seconds) passes the threshold of
    /// a route of `duration` seconds.
    pub fn accepts(&self, gcost: f64, ratio: f64, duration: Seconds) -> bool {
        gcost / 3600.0 < self.gthreshold(ratio, duration)
    }
}

/// Outcome of trying to insert one trip into one route.
#[derive(Debug, Clone, PartialEq)]
pub struct InsertionResult {
    /// The extended route, or the input route when the insertion failed.
    pub route: Route,
    /// Weighted cost; infinite when infeasible.
    pub cost: f64,
    pub extra_duration: Seconds,
    pub extra_wait: Seconds,
    /// Final positions of the new pickup and dropoff.
    pub placement: Option<(usize, usize)>,
}

impl InsertionResult {
    fn infeasible(route: &Route) -> Self {
        Self { route: route.clone(), cost: f64::INFINITY, extra_duration: 0, extra_wait: 0, placement: None }
    }

    pub fn is_feasible(&self) -> bool {
        self.cost.is_finite()
    }
}

/// Dropoff windows implied by pickup windows and direct ride times.
pub fn dropoff_windows(problem: &Problem) -> Vec<TimeWindow> {
    (0..problem.len()).map(|i| problem.dropoff_window(i)).collect()
}

/// Whether `b` can follow `a` when `a` is served at its earliest time.
pub fn reachable(a: &Node, b: &Node, problem: &Problem) -> bool {
    a.window.start + problem.cfg.dwell + problem.matrix.travel(a.location, b.location) <= b.window.end
}

/// Gap positions at which `node` may be inserted into `route` without an
/// evident timing conflict with its neighbours. Position `k` means "before
/// the current stop `k`"; position `route.len()` appends. Only neighbours at
/// index `from_index` or later are considered.
pub fn get_placements(route: &Route, node: &Node, from_index: usize, problem: &Problem) -> Vec<usize> {
    let nodes: Vec<Node> = route
        .stops
        .iter()
        .map(|s| problem.node(s).expect("route stops belong to the problem"))
        .collect();
    let mut out = Vec::new();
    let last = nodes.len().saturating_sub(1);
    for (k, nk) in nodes.iter().enumerate().skip(from_index) {
        if k == 0 && reachable(node, nk, problem) {
            out.push(0);
        }
        if k < last {
            if reachable(nk, node, problem) && reachable(node, &nodes[k + 1], problem) {
                out.push(k + 1);
            }
        } else if reachable(nk, node, problem) {
            out.push(k + 1);
        }
    }
    out
}

/// Inserts trip `idx` with its pickup at final position `p_idx` and its
/// dropoff at final position `d_idx`, re-times the route and prices the
/// insertion. Returns an infeasible result when the timing, capacity or
/// duration limits are broken.
pub fn adjust(
    route: &Route,
    p_idx: usize,
    d_idx: usize,
    idx: usize,
    ratio: f64,
    params: &GreedyParams,
    problem: &Problem,
) -> InsertionResult {
    if p_idx >= d_idx || d_idx > route.len() + 1 {
        return InsertionResult::infeasible(route);
    }
    let mut stops: Vec<Stop> = route.stops.clone();
    stops.insert(p_idx, problem.pickup_stop(idx, 0));
    stops.insert(d_idx, problem.dropoff_stop(idx, 0));
    let Some(new_route) = problem.retime(&Route::new(stops)) else {
        return InsertionResult::infeasible(route);
    };
    let new_duration = new_route.duration(problem.cfg, problem.matrix).expect("non-empty");
    let old_duration = if route.is_empty() { 0 } else { route.duration(problem.cfg, problem.matrix).expect("non-empty") };
    let extra = new_duration - old_duration;
    let n = route.len();
    let wait = if n > 0 && p_idx == n && d_idx == n + 1 {
        let prev = &new_route.stops[n - 1];
        let pickup = &new_route.stops[n];
        let ready = prev.arrival + problem.cfg.dwell + problem.matrix.travel(prev.location, pickup.location);
        (pickup.arrival - ready).max(0)
    } else {
        0
    };
    InsertionResult {
        cost: params.gcost(ratio, extra, wait),
        route: new_route,
        extra_duration: extra,
        extra_wait: wait,
        placement: Some((p_idx, d_idx)),
    }
}

/// Cheapest threshold-passing insertion of trip `idx` into `route`.
///
/// Insertion into an empty route always succeeds when the trip fits a
/// dedicated vehicle and is not subject to the threshold. For a non-empty
/// route, trips whose dropoff deadline is not before the route start plus the
/// maximum duration are rejected outright. Ties go to the lexicographically
/// smallest pair of positions.
pub fn insert_feasible(route: &Route, idx: usize, ratio: f64, params: &GreedyParams, problem: &Problem) -> InsertionResult {
    if route.is_empty() {
        return adjust(route, 0, 1, idx, ratio, params, problem);
    }
    let req = problem.request(idx);
    let dw = problem.dropoff_window(idx);
    let (start, _) = crate::model::route_bounds(route, problem.cfg, problem.matrix).expect("non-empty");
    if dw.end >= start + problem.cfg.max_route {
        return InsertionResult::infeasible(route);
    }
    let pickup = Node { location: req.pickup, window: problem.window(idx) };
    let dropoff = Node { location: req.dropoff, window: dw };
    let picks = get_placements(route, &pickup, 0, problem);
    let Some(&first) = picks.iter().min() else {
        return InsertionResult::infeasible(route);
    };
    let drops = get_placements(route, &dropoff, first.saturating_sub(1), problem);
    let mut best = InsertionResult::infeasible(route);
    for &gp in &picks {
        for &gd in drops.iter().filter(|&&gd| gd >= gp) {
            let res = adjust(route, gp, gd + 1, idx, ratio, params, problem);
            if !res.is_feasible() {
                continue;
            }
            let duration = res.route.duration(problem.cfg, problem.matrix).expect("non-empty");
            if params.accepts(res.cost, ratio, duration) && res.cost < best.cost {
                best = res;
            }
        }
    }
    best
}

/// The unserved trip (by index) with the cheapest insertion into `route`;
/// ties go to the lowest trip id. `None` when no trip fits.
pub fn best_assignment(
    route: &Route,
    unserved: &[usize],
    ratio: f64,
    params: &GreedyParams,
    problem: &Problem,
) -> Option<(usize, InsertionResult)> {
    let mut best: Option<(usize, InsertionResult)> = None;
    for &idx in unserved {
        let res = insert_feasible(route, idx, ratio, params, problem);
        if !res.is_feasible() {
            continue;
        }
        let better = match &best {
            None => true,
            Some((bi, b)) => {
                res.cost < b.cost || (res.cost == b.cost && problem.request(idx).id < problem.request(*bi).id)
            }
        };
        if better {
            best = Some((idx, res));
        }
    }
    best
}

/// Builds a feasible solution serving every trip of `problem`.
///
/// Fails with [`Error::Unserviceable`] when some trip cannot be served even
/// by a dedicated route.
pub fn greedy_solve(problem: &Problem, params: &GreedyParams) -> Result<Solution> {
    for idx in 0..problem.len() {
        if problem.singleton(idx).is_none() {
            return Err(Error::Unserviceable { trip: problem.request(idx).id });
        }
    }
    let total = problem.len();
    let mut unserved: Vec<usize> = (0..total).collect();
    unserved.sort_by_key(|&i| problem.request(i).id);
    let mut routes = Vec::new();
    while !unserved.is_empty() {
        let mut route = Route::default();
        loop {
            let ratio = unserved.len() as f64 / total as f64;
            let Some((idx, res)) = best_assignment(&route, &unserved, ratio, params, problem) else { break };
            route = res.route;
            unserved.retain(|&i| i != idx);
            if unserved.is_empty() {
                break;
            }
        }
        debug_assert!(!route.is_empty(), "a singleton-feasible trip always opens a route");
        routes.push(route);
    }
    Ok(Solution::new(routes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feasibility::check_feasibility;
    use crate::model::{ProblemConfig, StopKind, TravelTimeMatrix, TripRequest};

    fn matrix(n: usize, step: Seconds) -> TravelTimeMatrix {
        let mut s = vec![0; n * n];
        for a in 0..n {
            for b in 0..n {
                s[a * n + b] = (a as Seconds - b as Seconds).abs() * step;
            }
        }
        TravelTimeMatrix::new(n, s, vec![0.0; n * n]).unwrap()
    }

    fn trip(id: u32, pickup: usize, dropoff: usize, start: Seconds, end: Seconds) -> TripRequest {
        TripRequest { id, pickup, dropoff, passengers: 1, booking_instant: 0, broad_window: TimeWindow { start, end } }
    }

    #[test]
    fn gcost_closed_form() {
        let gp = GreedyParams::default();
        assert!((gp.gcost(0.5, 600, 400) - 660.0).abs() < 1e-9);
        assert!((gp.gcost(0.0, 600, 400) - (600.0 + 0.1 * 400.0)).abs() < 1e-9);
        assert_eq!(gp.gcost(0.3, 1234, 0), 1234.0);
    }

    #[test]
    fn gthreshold_closed_form() {
        let gp = GreedyParams::default();
        // 0.1 + 0.1 * 0.5 + 10 * 1.5 h
        assert!((gp.gthreshold(0.5, 5400) - 15.15).abs() < 1e-12);
        assert!((gp.gthreshold(0.0, 0) - 0.1).abs() < 1e-12);
        assert!(gp.accepts(15.0 * 3600.0, 0.5, 5400));
        assert!(!gp.accepts(15.15 * 3600.0, 0.5, 5400));
    }

    #[test]
    fn empty_route_insertion_costs_full_duration() {
        let m = matrix(3, 600);
        let cfg = ProblemConfig::default();
        let reqs = vec![trip(1, 1, 2, 3600, 5400)];
        let p = Problem::with_broad_windows(&reqs, &cfg, &m).unwrap();
        let res = insert_feasible(&Route::default(), 0, 0.7, &GreedyParams::default(), &p);
        assert!(res.is_feasible());
        assert_eq!(res.extra_wait, 0);
        assert_eq!(res.extra_duration, 600 + 180 + 600 + 180 + 1200);
        assert_eq!(res.cost, res.extra_duration as f64);
        assert_eq!(res.placement, Some((0, 1)));
    }

    #[test]
    fn appending_reports_wait() {
        let m = matrix(3, 600);
        let cfg = ProblemConfig::default();
        let reqs = vec![trip(1, 1, 2, 3600, 5400), trip(2, 2, 1, 9000, 10800)];
        let p = Problem::with_broad_windows(&reqs, &cfg, &m).unwrap();
        let gp = GreedyParams::default();
        let first = insert_feasible(&Route::default(), 0, 0.0, &gp, &p).route;
        let res = adjust(&first, 2, 3, 1, 0.0, &gp, &p);
        assert!(res.is_feasible());
        // trip 1 is served as late as possible: pickup 5220, dropoff 6000
        let d1 = first.stops[1].arrival;
        assert_eq!(first.stops[0].arrival, 5400 - 180);
        assert_eq!(res.extra_wait, 9000 - (d1 + 180));
        assert_eq!(res.cost, gp.gcost(0.0, res.extra_duration, res.extra_wait));
    }

    #[test]
    fn deadline_beyond_route_horizon_is_rejected() {
        let m = matrix(3, 600);
        let cfg = ProblemConfig { max_route: 4 * 3600, ..ProblemConfig::default() };
        let reqs = vec![trip(1, 1, 2, 3600, 5400), trip(2, 1, 2, 20000, 21800)];
        let p = Problem::with_broad_windows(&reqs, &cfg, &m).unwrap();
        let gp = GreedyParams::default();
        let route = insert_feasible(&Route::default(), 0, 0.0, &gp, &p).route;
        assert!(!insert_feasible(&route, 1, 0.0, &gp, &p).is_feasible());
    }

    #[test]
    fn placements_on_single_stop_route() {
        let m = matrix(3, 600);
        let cfg = ProblemConfig::default();
        let reqs = vec![trip(1, 1, 2, 3600, 5400), trip(2, 2, 1, 3600, 5400)];
        let p = Problem::with_broad_windows(&reqs, &cfg, &m).unwrap();
        let route = Route::new(vec![p.pickup_stop(0, 3600)]);
        let node = Node { location: 2, window: p.window(1) };
        let got = get_placements(&route, &node, 0, &p);
        assert!(got.iter().all(|&k| k <= 1));
        assert_eq!(got, vec![0, 1]);

        // a node that must be served before the route's first stop can start
        let early = Node { location: 2, window: TimeWindow { start: 0, end: 100 } };
        let late_route = Route::new(vec![p.pickup_stop(0, 3600)]);
        assert_eq!(get_placements(&late_route, &early, 0, &p), vec![0]);
        let blocked = Node { location: 2, window: TimeWindow { start: 3500, end: 3550 } };
        let first = Node { location: 1, window: TimeWindow { start: 3000, end: 3600 } };
        assert!(!reachable(&blocked, &first, &p));
    }

    #[test]
    fn separated_trips_get_separate_routes() {
        let m = matrix(3, 600);
        let cfg = ProblemConfig { max_route: 3 * 3600, ..ProblemConfig::default() };
        let reqs: Vec<_> = (0..4).map(|i| trip(i, 1, 2, 3600 + i as Seconds * 14400, 5400 + i as Seconds * 14400)).collect();
        let p = Problem::with_broad_windows(&reqs, &cfg, &m).unwrap();
        let sol = greedy_solve(&p, &GreedyParams::default()).unwrap();
        assert_eq!(sol.routes.len(), 4);
        assert!(check_feasibility(&sol, &p).is_empty());
    }

    #[test]
    fn compatible_trips_share_a_route() {
        let m = matrix(3, 600);
        let cfg = ProblemConfig::default();
        let reqs = vec![trip(1, 1, 2, 3600, 5400), trip(2, 1, 2, 3600, 5400)];
        let p = Problem::with_broad_windows(&reqs, &cfg, &m).unwrap();
        let sol = greedy_solve(&p, &GreedyParams::default()).unwrap();
        assert_eq!(sol.routes.len(), 1);
        assert!(check_feasibility(&sol, &p).is_empty());
        assert_eq!(sol.routes[0].stops.iter().filter(|s| s.kind == StopKind::Pickup).count(), 2);
    }

    #[test]
    fn unserviceable_trip_is_reported() {
        let m = matrix(3, 600);
        let cfg = ProblemConfig { max_route: 1000, ..ProblemConfig::default() };
        let reqs = vec![trip(5, 1, 2, 3600, 5400)];
        let p = Problem::with_broad_windows(&reqs, &cfg, &m).unwrap();
        assert!(matches!(greedy_solve(&p, &GreedyParams::default()), Err(Error::Unserviceable { trip: 5 })));
    }
}
