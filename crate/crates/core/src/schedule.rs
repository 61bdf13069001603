//! Arrival-time assignment for a fixed stop sequence.
//!
//! Given the order of stops, [`min_duration_times`] returns the arrival times
//! that minimize the depot-to-depot duration: a backward pass computes the
//! latest time each stop can be served while keeping every later stop inside
//! its window, the first stop is served at its latest such time, and a
//! forward pass serves every other stop as early as possible. Starting as late
//! as possible never lengthens the route because the last arrival grows at
//! most one second per second of delayed start.

use crate::model::{LocationId, Problem, Route, Seconds, Stop, StopKind, TimeWindow, TravelTimeMatrix};

/// A stop location together with the window its arrival must fall in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Node {
    pub location: LocationId,
    pub window: TimeWindow,
}

/// Minimum-duration arrival times for `nodes` visited in order, or `None`
/// when no assignment satisfies all windows and travel times.
pub fn min_duration_times(nodes: &[Node], dwell: Seconds, m: &TravelTimeMatrix) -> Option<Vec<Seconds>> {
    let n = nodes.len();
    if n == 0 {
        return Some(Vec::new());
    }
    let mut latest = vec![0; n];
    latest[n - 1] = nodes[n - 1].window.end;
    for k in (0..n - 1).rev() {
        let gap = dwell + m.travel(nodes[k].location, nodes[k + 1].location);
        latest[k] = nodes[k].window.end.min(latest[k + 1] - gap);
    }
    if latest[0] < nodes[0].window.start {
        return None;
    }
    let mut times = Vec::with_capacity(n);
    times.push(latest[0]);
    for k in 1..n {
        let ready = times[k - 1] + dwell + m.travel(nodes[k - 1].location, nodes[k].location);
        let t = ready.max(nodes[k].window.start);
        if t > latest[k] {
            return None;
        }
        times.push(t);
    }
    Some(times)
}

/// Earliest arrival times for `nodes` visited in order, or `None` when some
/// window is missed.
pub fn earliest_times(nodes: &[Node], dwell: Seconds, m: &TravelTimeMatrix) -> Option<Vec<Seconds>> {
    let mut times: Vec<Seconds> = Vec::with_capacity(nodes.len());
    for (k, node) in nodes.iter().enumerate() {
        let t = match k {
            0 => node.window.start,
            _ => (times[k - 1] + dwell + m.travel(nodes[k - 1].location, node.location)).max(node.window.start),
        };
        if t > node.window.end {
            return None;
        }
        times.push(t);
    }
    Some(times)
}

/// Depot-to-depot duration of a route visiting `nodes` at `times`, assuming
/// the first and last stops bound the route.
pub fn span(nodes: &[Node], times: &[Seconds], dwell: Seconds, depot: LocationId, m: &TravelTimeMatrix) -> Seconds {
    match (nodes.first(), nodes.last()) {
        (Some(first), Some(last)) => {
            times[times.len() - 1] - times[0] + m.travel(depot, first.location) + m.travel(last.location, depot) + dwell
        }
        _ => 0,
    }
}

impl<'a> Problem<'a> {
    /// Node of a stop, or `None` for a trip outside the problem.
    pub fn node(&self, stop: &Stop) -> Option<Node> {
        Some(Node { location: stop.location, window: self.stop_window(stop)? })
    }

    /// Re-times the stops of `route` in their current order so the duration
    /// is minimal, then checks capacity and maximum duration. Returns `None`
    /// when the order admits no feasible route.
    pub fn retime(&self, route: &Route) -> Option<Route> {
        let nodes: Vec<Node> = route.stops.iter().map(|s| self.node(s)).collect::<Option<_>>()?;
        let times = min_duration_times(&nodes, self.cfg.dwell, self.matrix)?;
        if span(&nodes, &times, self.cfg.dwell, self.cfg.depot, self.matrix) > self.cfg.max_route {
            return None;
        }
        if !self.capacity_ok(&route.stops) {
            return None;
        }
        let stops = route
            .stops
            .iter()
            .zip(times)
            .map(|(s, t)| Stop { arrival: t, ..s.clone() })
            .collect();
        Some(Route { stops })
    }

    /// Running occupancy never exceeds capacity and every dropoff follows its
    /// pickup.
    pub fn capacity_ok(&self, stops: &[Stop]) -> bool {
        let mut load: i64 = 0;
        let mut onboard = Vec::new();
        for s in stops {
            let Some(idx) = self.index_of(s.trip) else { return false };
            let p = i64::from(self.request(idx).passengers);
            match s.kind {
                StopKind::Pickup => {
                    load += p;
                    onboard.push(s.trip);
                }
                StopKind::Dropoff => {
                    let Some(pos) = onboard.iter().position(|&t| t == s.trip) else { return false };
                    onboard.swap_remove(pos);
                    load -= p;
                }
            }
            if load > i64::from(self.cfg.capacity) {
                return false;
            }
        }
        true
    }

    /// A one-trip route serving trip `idx` with minimal duration, if feasible.
    pub fn singleton(&self, idx: usize) -> Option<Route> {
        let route = Route::new(vec![self.pickup_stop(idx, 0), self.dropoff_stop(idx, 0)]);
        self.retime(&route)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TravelTimeMatrix;

    fn matrix(n: usize, step: Seconds) -> TravelTimeMatrix {
        let mut s = vec![0; n * n];
        for a in 0..n {
            for b in 0..n {
                s[a * n + b] = (a as Seconds - b as Seconds).abs() * step;
            }
        }
        TravelTimeMatrix::new(n, s, vec![0.0; n * n]).unwrap()
    }

    fn node(location: LocationId, start: Seconds, end: Seconds) -> Node {
        Node { location, window: TimeWindow { start, end } }
    }

    fn valid(nodes: &[Node], times: &[Seconds], dwell: Seconds, m: &TravelTimeMatrix) -> bool {
        nodes.iter().zip(times).all(|(n, &t)| n.window.contains(t))
            && (1..nodes.len()).all(|k| times[k - 1] + dwell + m.travel(nodes[k - 1].location, nodes[k].location) <= times[k])
    }

    /// Exhaustive search over every arrival-time assignment in a small range.
    fn brute_force_span(nodes: &[Node], dwell: Seconds, m: &TravelTimeMatrix, horizon: Seconds) -> Option<Seconds> {
        fn go(k: usize, nodes: &[Node], dwell: Seconds, m: &TravelTimeMatrix, horizon: Seconds, times: &mut Vec<Seconds>, best: &mut Option<Seconds>) {
            if k == nodes.len() {
                let s = times[times.len() - 1] - times[0];
                *best = Some(best.map_or(s, |b| b.min(s)));
                return;
            }
            let lo = if k == 0 { 0 } else { times[k - 1] + dwell + m.travel(nodes[k - 1].location, nodes[k].location) };
            for t in lo.max(nodes[k].window.start)..=nodes[k].window.end.min(horizon) {
                times.push(t);
                go(k + 1, nodes, dwell, m, horizon, times, best);
                times.pop();
            }
        }
        let mut best = None;
        go(0, nodes, dwell, m, horizon, &mut Vec::new(), &mut best);
        best
    }

    #[test]
    fn waits_are_pushed_to_the_start() {
        let m = matrix(3, 10);
        let nodes = [node(1, 0, 100), node(2, 80, 90)];
        let times = min_duration_times(&nodes, 5, &m).unwrap();
        assert_eq!(times, vec![75, 90]);
        assert_eq!(earliest_times(&nodes, 5, &m).unwrap(), vec![0, 80]);
    }

    #[test]
    fn infeasible_sequence_is_rejected() {
        let m = matrix(3, 10);
        let nodes = [node(1, 50, 60), node(2, 0, 60)];
        assert!(min_duration_times(&nodes, 5, &m).is_none());
        assert!(earliest_times(&nodes, 5, &m).is_none());
    }

    #[test]
    fn matches_brute_force_on_small_ranges() {
        let m = matrix(4, 3);
        let mut state = 12345u64;
        let mut rand = |k: i64| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 33) % k as u64) as i64
        };
        for _ in 0..300 {
            let len = 1 + rand(4) as usize;
            let nodes: Vec<Node> = (0..len)
                .map(|_| {
                    let a = rand(30);
                    node(rand(4) as usize, a, a + rand(12))
                })
                .collect();
            let fast = min_duration_times(&nodes, 2, &m);
            let slow = brute_force_span(&nodes, 2, &m, 60);
            match (fast, slow) {
                (None, None) => {}
                (Some(t), Some(best)) => {
                    assert!(valid(&nodes, &t, 2, &m));
                    assert_eq!(t[t.len() - 1] - t[0], best, "{nodes:?}");
                }
                (f, s) => panic!("disagree on {nodes:?}: {f:?} vs {s:?}"),
            }
        }
    }
}
