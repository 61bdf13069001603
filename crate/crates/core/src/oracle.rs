//! Exact optimum for tiny instances by exhaustive enumeration.
//!
//! For every subset of trips the cheapest single route is found by trying
//! every stop order with each pickup before its dropoff and timing each order
//! with the minimum-duration schedule. A dynamic program over subsets then
//! picks the cheapest partition into routes.

use crate::error::{Error, Result};
use crate::model::{solution_cost, Problem, Route, Seconds, Solution, Stop};
use crate::schedule::{min_duration_times, Node};

/// Default trip limit of [`solve_exact`].
pub const DEFAULT_LIMIT: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub best: Solution,
    pub cost: Seconds,
    /// Complete stop orders examined.
    pub explored: u64,
}

struct Search<'p, 'a> {
    problem: &'p Problem<'a>,
    stops: Vec<Stop>,
    explored: u64,
    best: Option<(Seconds, Route)>,
}

impl Search<'_, '_> {
    fn nodes(&self) -> Vec<Node> {
        self.stops.iter().map(|s| self.problem.node(s).expect("trip of the problem")).collect()
    }

    fn run(&mut self, members: &[usize], picked: u32, dropped: u32, load: u32, ready: Seconds) {
        let p = self.problem;
        let all = members.iter().fold(0u32, |acc, &i| acc | (1 << i));
        if dropped == all {
            self.explored += 1;
            self.finish();
            return;
        }
        for &i in members {
            let bit = 1u32 << i;
            let (stop, next_load) = if picked & bit == 0 {
                let l = load + p.request(i).passengers;
                if l > p.cfg.capacity {
                    continue;
                }
                (p.pickup_stop(i, 0), l)
            } else if dropped & bit == 0 {
                (p.dropoff_stop(i, 0), load - p.request(i).passengers)
            } else {
                continue;
            };
            let window = p.stop_window(&stop).expect("trip of the problem");
            let arrive = match self.stops.last() {
                None => window.start,
                Some(prev) => (ready + p.matrix.travel(prev.location, stop.location)).max(window.start),
            };
            if arrive > window.end {
                continue;
            }
            let (np, nd) = match stop.kind {
                crate::model::StopKind::Pickup => (picked | bit, dropped),
                crate::model::StopKind::Dropoff => (picked, dropped | bit),
            };
            self.stops.push(stop);
            self.run(members, np, nd, next_load, arrive + p.cfg.dwell);
            self.stops.pop();
        }
    }

    fn finish(&mut self) {
        let p = self.problem;
        let nodes = self.nodes();
        let Some(times) = min_duration_times(&nodes, p.cfg.dwell, p.matrix) else { return };
        let route = Route::new(
            self.stops
                .iter()
                .zip(times)
                .map(|(s, t)| Stop { arrival: t, ..s.clone() })
                .collect(),
        );
        let Ok(duration) = route.duration(p.cfg, p.matrix) else { return };
        if duration > p.cfg.max_route {
            return;
        }
        if self.best.as_ref().is_none_or(|(d, _)| duration < *d) {
            self.best = Some((duration, route));
        }
    }
}

/// Cheapest feasible route serving exactly the trips in `members`, with the
/// number of stop orders examined.
fn best_route(problem: &Problem, members: &[usize]) -> (Option<(Seconds, Route)>, u64) {
    let mut search = Search { problem, stops: Vec::new(), explored: 0, best: None };
    search.run(members, 0, 0, 0, 0);
    (search.best, search.explored)
}

/// Minimum-cost feasible solution of `problem`.
///
/// Fails with [`Error::TooLarge`] above `limit` trips and with
/// [`Error::Infeasible`] when no solution exists.
pub fn solve_exact(problem: &Problem, limit: usize) -> Result<OracleResult> {
    let n = problem.len();
    if n > limit || n > 16 {
        return Err(Error::TooLarge { trips: n, limit: limit.min(16) });
    }
    let full = (1usize << n) - 1;
    let mut routes: Vec<Option<(Seconds, Route)>> = vec![None; full + 1];
    let mut explored = 0;
    for (mask, slot) in routes.iter_mut().enumerate().skip(1) {
        let members: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let (best, count) = best_route(problem, &members);
        *slot = best;
        explored += count;
    }

    const INF: Seconds = Seconds::MAX / 4;
    let overhead = problem.cfg.route_overhead;
    let mut dp = vec![INF; full + 1];
    let mut choice = vec![0usize; full + 1];
    dp[0] = 0;
    for mask in 1..=full {
        let low = mask & mask.wrapping_neg();
        let rest = mask ^ low;
        // enumerate submasks of `rest`, each joined with the lowest trip
        let mut sub = rest;
        loop {
            let group = sub | low;
            if let Some((d, _)) = &routes[group] {
                let c = dp[mask ^ group].saturating_add(d + overhead);
                if c < dp[mask] {
                    dp[mask] = c;
                    choice[mask] = group;
                }
            }
            if sub == 0 {
                break;
            }
            sub = (sub - 1) & rest;
        }
    }
    if dp[full] >= INF {
        return Err(Error::Infeasible);
    }

    let mut picked = Vec::new();
    let mut mask = full;
    while mask != 0 {
        let group = choice[mask];
        picked.push(routes[group].as_ref().expect("chosen group is feasible").1.clone());
        mask ^= group;
    }
    picked.sort_by_key(|r| (r.stops[0].arrival, r.stops[0].trip));
    let best = Solution::new(picked);
    let cost = solution_cost(&best, problem.cfg, problem.matrix)?;
    debug_assert_eq!(cost, dp[full]);
    Ok(OracleResult { best, cost, explored })
}
