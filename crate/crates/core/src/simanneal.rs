//! Simulated annealing over feasible solutions.
//!
//! Each iteration applies a random number of neighbourhood operations
//! ([`swap`] and [`split_and_merge`]) to the current solution and accepts the
//! neighbour if it is cheaper, or otherwise with probability
//! `exp(-delta / (delta_avg * H))` where `H` cools geometrically from
//! `-1/ln(p_start)` to `-1/ln(p_end)` over the budget. Every operation keeps
//! the solution feasible, so the best solution seen is valid whenever the run
//! is interrupted.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::RwLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feasibility::check_feasibility;
use crate::greedy::{greedy_solve, insert_feasible, GreedyParams};
use crate::model::{route_bounds, Problem, Route, Seconds, Solution, Stop, StopKind, TripId};

/// How long an anneal runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    Iterations(u64),
    WallTime(Duration),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaParams {
    /// Acceptance probability scale at the start of the run.
    pub p_start: f64,
    /// Acceptance probability scale at the end of the run.
    pub p_end: f64,
    /// Fraction of routes altered per neighbour.
    pub p_alter: f64,
    pub budget: Budget,
    pub seed: u64,
}

impl Default for SaParams {
    fn default() -> Self {
        Self { p_start: 0.9, p_end: 0.5, p_alter: 0.4, budget: Budget::Iterations(10_000), seed: 0 }
    }
}

impl SaParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.p_end && self.p_end <= self.p_start && self.p_start < 1.0) {
            return Err(Error::invalid("need 0 < p_end <= p_start < 1"));
        }
        if !(self.p_alter > 0.0 && self.p_alter <= 1.0) {
            return Err(Error::invalid("p_alter must lie in (0, 1]"));
        }
        Ok(())
    }

    pub fn h_start(&self) -> f64 {
        temperature_for(self.p_start)
    }

    pub fn h_end(&self) -> f64 {
        temperature_for(self.p_end)
    }
}

/// Temperature at which a move of average size is accepted with probability
/// `p`: `-1 / ln(p)`.
pub fn temperature_for(p: f64) -> f64 {
    -1.0 / p.ln()
}

/// Geometric cooling schedule from `h_start` at step 0 to `h_end` at step
/// `steps - 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub h_start: f64,
    pub h_end: f64,
    pub rate: f64,
}

impl Schedule {
    pub fn new(h_start: f64, h_end: f64, steps: u64) -> Self {
        let rate = if steps > 1 { (h_end / h_start).powf(1.0 / (steps - 1) as f64) } else { 1.0 };
        Self { h_start, h_end, rate }
    }

    pub fn at_step(&self, step: u64) -> f64 {
        self.h_start * self.rate.powf(step as f64)
    }

    /// Temperature after a fraction `f` in `[0, 1]` of a wall-time budget.
    pub fn at_fraction(&self, f: f64) -> f64 {
        self.h_start * (self.h_end / self.h_start).powf(f.clamp(0.0, 1.0))
    }
}

/// Probability of accepting a move that changes the cost by `delta`.
pub fn accept_probability(delta: f64, delta_avg: f64, h: f64) -> f64 {
    (-delta / (delta_avg * h)).exp()
}

/// Number of operations applied per neighbour: `max(1, floor(routes * p_alter))`.
pub fn operation_count(routes: usize, p_alter: f64) -> usize {
    ((routes as f64 * p_alter).floor() as usize).max(1)
}

/// Best solution published by a running anneal.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub solution: Solution,
    pub cost: Seconds,
}

/// Shared handle to steer a running anneal from another thread: a stop flag
/// checked once per iteration and a read-only view of the best solution.
#[derive(Debug, Default)]
pub struct SaControl {
    stop: AtomicBool,
    iterations: AtomicU64,
    best: RwLock<Option<Snapshot>>,
}

impl SaControl {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn request_stop(&self) {
        self.stop.store(true, Ordering::SeqCst);
    }

    pub fn clear_stop(&self) {
        self.stop.store(false, Ordering::SeqCst);
    }

    pub fn stop_requested(&self) -> bool {
        self.stop.load(Ordering::SeqCst)
    }

    /// Iterations completed by the current or last run.
    pub fn iterations(&self) -> u64 {
        self.iterations.load(Ordering::Relaxed)
    }

    pub fn snapshot(&self) -> Option<Snapshot> {
        self.best.read().expect("snapshot lock").clone()
    }

    pub fn publish(&self, solution: &Solution, cost: Seconds) {
        *self.best.write().expect("snapshot lock") = Some(Snapshot { solution: solution.clone(), cost });
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaOutcome {
    pub best: Solution,
    pub cost: Seconds,
    pub iterations: u64,
    pub accepted: u64,
    /// Whether the run ended on a stop request.
    pub interrupted: bool,
}

fn bounds(route: &Route, problem: &Problem) -> (Seconds, Seconds) {
    route_bounds(route, problem.cfg, problem.matrix).expect("routes in a solution are non-empty")
}

/// Index pairs `(i, j)`, `i < j`, of routes whose service intervals intersect.
pub fn overlapping_pairs(sol: &Solution, problem: &Problem) -> Vec<(usize, usize)> {
    let spans: Vec<_> = sol.routes.iter().map(|r| bounds(r, problem)).collect();
    let mut out = Vec::new();
    for i in 0..spans.len() {
        for j in i + 1..spans.len() {
            if spans[i].0 <= spans[j].1 && spans[j].0 <= spans[i].1 {
                out.push((i, j));
            }
        }
    }
    out
}

fn pick_pair(sol: &Solution, rng: &mut impl Rng, problem: &Problem) -> Option<(usize, usize)> {
    let pairs = overlapping_pairs(sol, problem);
    if pairs.is_empty() {
        return None;
    }
    Some(pairs[rng.random_range(0..pairs.len())])
}

fn retime_or_empty(route: &Route, problem: &Problem) -> Option<Route> {
    if route.is_empty() {
        Some(Route::default())
    } else {
        problem.retime(route)
    }
}

fn trip_index(problem: &Problem, trip: TripId) -> usize {
    problem.index_of(trip).expect("solution trips belong to the problem")
}

/// Exchanges trip `t1` of route `i` with trip `t2` of route `j` when both
/// cross-insertions succeed; otherwise returns `None`.
pub fn swap_trips(
    sol: &Solution,
    (i, t1): (usize, TripId),
    (j, t2): (usize, TripId),
    problem: &Problem,
    gp: &GreedyParams,
) -> Option<Solution> {
    let r1 = retime_or_empty(&sol.routes[i].without_trip(t1), problem)?;
    let r2 = retime_or_empty(&sol.routes[j].without_trip(t2), problem)?;
    let new1 = insert_feasible(&r1, trip_index(problem, t2), 0.0, gp, problem);
    let new2 = insert_feasible(&r2, trip_index(problem, t1), 0.0, gp, problem);
    if !(new1.is_feasible() && new2.is_feasible()) {
        return None;
    }
    let mut out = sol.clone();
    out.routes[i] = new1.route;
    out.routes[j] = new2.route;
    Some(out)
}

/// Swaps one random trip between two random overlapping routes. The input is
/// returned unchanged when fewer than two routes overlap or the exchange is
/// infeasible.
pub fn swap(sol: &Solution, rng: &mut impl Rng, problem: &Problem, gp: &GreedyParams) -> Solution {
    let Some((i, j)) = pick_pair(sol, rng, problem) else { return sol.clone() };
    let trips1: Vec<TripId> = sol.routes[i].trips().collect();
    let trips2: Vec<TripId> = sol.routes[j].trips().collect();
    let t1 = trips1[rng.random_range(0..trips1.len())];
    let t2 = trips2[rng.random_range(0..trips2.len())];
    swap_trips(sol, (i, t1), (j, t2), problem, gp).unwrap_or_else(|| sol.clone())
}

/// Splits a route before the first stop arriving after the midpoint of its
/// service interval. Dropoffs whose pickup lies in the first half move to the
/// first half so that both halves are trip-complete. Both halves are re-timed.
pub fn split_route(route: &Route, problem: &Problem) -> (Route, Route) {
    let (start, end) = bounds(route, problem);
    let mid = start + (end - start) / 2;
    let cut = route.stops.iter().position(|s| s.arrival > mid).unwrap_or(route.len());
    let early: Vec<TripId> = route.stops[..cut]
        .iter()
        .filter(|s| s.kind == StopKind::Pickup)
        .map(|s| s.trip)
        .collect();
    let mut first: Vec<Stop> = route.stops[..cut].to_vec();
    let mut second = Vec::new();
    for s in &route.stops[cut..] {
        if s.kind == StopKind::Dropoff && early.contains(&s.trip) {
            first.push(s.clone());
        } else {
            second.push(s.clone());
        }
    }
    let retime = |stops: Vec<Stop>| {
        retime_or_empty(&Route::new(stops), problem).expect("a sub-sequence of a feasible route is feasible")
    };
    (retime(first), retime(second))
}

/// Starts from `base` and inserts each trip of `other` in pickup order.
/// `None` when some trip does not fit.
pub fn merge_routes(base: &Route, other: &Route, problem: &Problem, gp: &GreedyParams) -> Option<Route> {
    let mut cur = base.clone();
    for trip in other.trips() {
        let res = insert_feasible(&cur, trip_index(problem, trip), 0.0, gp, problem);
        if !res.is_feasible() {
            return None;
        }
        cur = res.route;
    }
    Some(cur)
}

/// Splits routes `i` and `j` and cross-merges the first half of each with
/// the second half of the other. Returns `None` when either merge fails.
/// Routes left empty are dropped. The same route twice yields the input.
pub fn split_and_merge_pair(
    sol: &Solution,
    i: usize,
    j: usize,
    problem: &Problem,
    gp: &GreedyParams,
) -> Option<Solution> {
    if i == j {
        return Some(sol.clone());
    }
    let (a1, a2) = split_route(&sol.routes[i], problem);
    let (b1, b2) = split_route(&sol.routes[j], problem);
    let new_i = merge_routes(&a1, &b2, problem, gp)?;
    let new_j = merge_routes(&b1, &a2, problem, gp)?;
    let mut out = sol.clone();
    out.routes[i] = new_i;
    out.routes[j] = new_j;
    out.routes.retain(|r| !r.is_empty());
    Some(out)
}

/// Random split-and-merge on a pair of overlapping routes; unchanged input
/// when no pair overlaps or a merge fails.
pub fn split_and_merge(sol: &Solution, rng: &mut impl Rng, problem: &Problem, gp: &GreedyParams) -> Solution {
    let Some((i, j)) = pick_pair(sol, rng, problem) else { return sol.clone() };
    split_and_merge_pair(sol, i, j, problem, gp).unwrap_or_else(|| sol.clone())
}

/// Applies `operation_count(|routes|, p_alter)` randomly chosen operations
/// in sequence and reports how many were attempted.
pub fn random_neighbor(
    sol: &Solution,
    p_alter: f64,
    rng: &mut impl Rng,
    problem: &Problem,
    gp: &GreedyParams,
) -> (Solution, usize) {
    let ops = operation_count(sol.routes.len(), p_alter);
    let mut cur = sol.clone();
    for _ in 0..ops {
        cur = if rng.random_bool(0.5) {
            swap(&cur, rng, problem, gp)
        } else {
            split_and_merge(&cur, rng, problem, gp)
        };
    }
    (cur, ops)
}

fn cost_of(sol: &Solution, problem: &Problem) -> Seconds {
    problem.cost(sol).expect("operations never leave empty routes")
}

/// Anneals from a feasible `initial` solution and returns the best solution
/// accepted. `on_accept` sees every accepted solution with its cost.
pub fn anneal_observed(
    initial: &Solution,
    sa: &SaParams,
    problem: &Problem,
    gp: &GreedyParams,
    control: Option<&SaControl>,
    on_accept: &mut dyn FnMut(&Solution, Seconds),
) -> Result<SaOutcome> {
    sa.validate()?;
    let violations = check_feasibility(initial, problem).len();
    if violations > 0 {
        return Err(Error::InfeasibleStart { violations });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(sa.seed);
    let steps = match sa.budget {
        Budget::Iterations(n) => n,
        Budget::WallTime(_) => 0,
    };
    let schedule = Schedule::new(sa.h_start(), sa.h_end(), steps);
    let started = Instant::now();

    let mut current = initial.clone();
    let mut current_cost = cost_of(&current, problem);
    let mut best = current.clone();
    let mut best_cost = current_cost;
    let mut delta_avg: Option<f64> = None;
    let mut solutions: u64 = 1;
    let mut iterations = 0u64;
    let mut interrupted = false;
    if let Some(c) = control {
        c.publish(&best, best_cost);
        c.iterations.store(0, Ordering::Relaxed);
    }

    loop {
        let h = match sa.budget {
            Budget::Iterations(n) => {
                if iterations >= n {
                    break;
                }
                schedule.at_step(iterations)
            }
            Budget::WallTime(limit) => {
                let elapsed = started.elapsed();
                if elapsed > limit {
                    break;
                }
                schedule.at_fraction(elapsed.as_secs_f64() / limit.as_secs_f64().max(f64::MIN_POSITIVE))
            }
        };
        if control.is_some_and(SaControl::stop_requested) {
            interrupted = true;
            break;
        }
        iterations += 1;
        if let Some(c) = control {
            c.iterations.store(iterations, Ordering::Relaxed);
        }

        let (neighbor, _) = random_neighbor(&current, sa.p_alter, &mut rng, problem, gp);
        if neighbor == current {
            continue;
        }
        let neighbor_cost = cost_of(&neighbor, problem);
        let delta = (neighbor_cost - current_cost) as f64;
        let avg = *delta_avg.get_or_insert(if delta == 0.0 { 1.0 } else { delta.abs() });
        let accept = neighbor_cost < current_cost || accept_probability(delta, avg.max(1.0), h) > rng.random::<f64>();
        if !accept {
            continue;
        }
        current = neighbor;
        current_cost = neighbor_cost;
        delta_avg = Some(avg + (delta.abs() - avg) / solutions as f64);
        solutions += 1;
        on_accept(&current, current_cost);
        if current_cost < best_cost {
            best = current.clone();
            best_cost = current_cost;
            if let Some(c) = control {
                c.publish(&best, best_cost);
            }
        }
    }
    Ok(SaOutcome { best, cost: best_cost, iterations, accepted: solutions - 1, interrupted })
}

/// [`anneal_observed`] without an observer.
pub fn anneal(
    initial: &Solution,
    sa: &SaParams,
    problem: &Problem,
    gp: &GreedyParams,
    control: Option<&SaControl>,
) -> Result<SaOutcome> {
    anneal_observed(initial, sa, problem, gp, control, &mut |_, _| {})
}

/// Runs the greedy solver, seeds the anneal with the cheaper of its output
/// and `hint` (when the hint is feasible), and returns the annealed best.
pub fn anneal_plus_greedy(
    problem: &Problem,
    hint: Option<&Solution>,
    sa: &SaParams,
    gp: &GreedyParams,
    control: Option<&SaControl>,
) -> Result<SaOutcome> {
    let greedy = greedy_solve(problem, gp)?;
    let greedy_cost = cost_of(&greedy, problem);
    let seed = match hint {
        Some(h) if check_feasibility(h, problem).is_empty() && cost_of(h, problem) < greedy_cost => h,
        _ => &greedy,
    };
    anneal(seed, sa, problem, gp, control)
}
