//! Simulated booking days and the evaluation harness.
//!
//! A booking day is drawn from the demand model. An episode replays its
//! calls in order: the policy picks a tight window and a plan for each call,
//! then the anytime solver improves the routes for as many iterations as the
//! time until the next call allows.

use std::io::Write;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::demand::DemandModel;
use crate::error::{Error, Result};
use crate::feasibility::check_feasibility;
use crate::features::{BookingState, DecisionContext};
use crate::greedy::{greedy_solve, GreedyParams};
use crate::history::{default_booking_curve, DayClass};
use crate::instance::Instance;
use crate::model::{Location, Problem, ProblemConfig, Seconds, Solution, TimeWindow, TravelTimeMatrix, TripRequest, URBAN_SPEED_KMH};
use crate::policy::{candidate_for, grid_starts, is_admissible, shaped_cost, Decision, NetPolicy, ValueNet, VrpEstimator, WindowPolicy};
use crate::simanneal::{anneal_plus_greedy, Budget, SaParams};

/// Annealing iterations per second of wall time between calls.
pub const ITERS_PER_SECOND: f64 = 30.0;
/// Cap on the iterations granted between two calls.
pub const MAX_ITERATIONS: u64 = 9000;

/// How sampled days look.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayGen {
    pub cfg: ProblemConfig,
    pub broad_len: Seconds,
    /// Broad windows lie inside this span of the service day.
    pub service: TimeWindow,
    pub speed_kmh: f64,
}

impl Default for DayGen {
    fn default() -> Self {
        Self {
            cfg: ProblemConfig::default(),
            broad_len: 3 * 3600,
            service: TimeWindow { start: 5 * 3600, end: 23 * 3600 },
            speed_kmh: URBAN_SPEED_KMH,
        }
    }
}

/// One booking day: requests in call order with their broad windows.
#[derive(Debug, Clone, PartialEq)]
pub struct DayInstance {
    pub instance: Instance,
    pub class: DayClass,
}

impl DayInstance {
    pub fn requests(&self) -> &[TripRequest] {
        &self.instance.requests
    }
}

/// Draws a day class in proportion to the days of each class in the model.
pub fn sample_class(dm: &DemandModel, rng: &mut impl Rng) -> DayClass {
    let weights: Vec<usize> = DayClass::ALL.iter().map(|&c| dm.class(c).days).collect();
    match WeightedIndex::new(&weights) {
        Ok(w) => DayClass::ALL[w.sample(rng)],
        Err(_) => DayClass::Weekday,
    }
}

fn snap(t: Seconds, grid: Seconds) -> Seconds {
    (t + grid / 2).div_euclid(grid) * grid
}

/// Samples a booking day from the demand model. `class` is drawn when not
/// given.
///
/// The request count is an observed daily count of that class, call times
/// follow the class's booking-rate curve, and areas and pickup hour come from
/// the joint busyness table. Coordinates are uniform in the area's bounding
/// box. The broad window is centred on the desired pickup time, aligned to
/// the grid and shifted to stay within the service span.
pub fn sample_day(dm: &DemandModel, gen: &DayGen, class: Option<DayClass>, rng: &mut impl Rng) -> Result<DayInstance> {
    if dm.joint.is_empty() {
        return Err(Error::invalid("demand model holds no trips"));
    }
    let class = class.unwrap_or_else(|| sample_class(dm, rng));
    let counts = match &dm.class(class).daily_counts {
        c if !c.is_empty() => c,
        _ => &dm.classes.iter().find(|c| !c.daily_counts.is_empty()).expect("a model with trips has days").daily_counts,
    };
    let n = (*counts.choose(rng).expect("non-empty") as usize).max(1);
    let rate = &dm.class(class).booking_rate;
    let rate: Vec<f64> = if rate.iter().sum::<f64>() > 0.0 { rate.clone() } else { default_booking_curve().to_vec() };
    let hours = WeightedIndex::new(&rate).map_err(|e| Error::invalid(format!("booking curve: {e}")))?;
    let mut bookings: Vec<Seconds> = (0..n).map(|_| hours.sample(rng) as Seconds * 3600 + rng.random_range(0..3600)).collect();
    bookings.sort_unstable();

    let cfg = &gen.cfg;
    let lo = grid_starts(&gen.service, &ProblemConfig { window_len: gen.broad_len, ..cfg.clone() });
    let (Some(&first), Some(&last)) = (lo.first(), lo.last()) else {
        return Err(Error::invalid("service span is shorter than a broad window"));
    };
    let mut locations = vec![Location { id: 0, lat: 0.0, lon: 0.0, area: "depot".into() }];
    let mut requests = Vec::with_capacity(n);
    for (k, booking_instant) in bookings.into_iter().enumerate() {
        let cell = dm.sample_cell(rng).expect("non-empty joint table");
        let desired = Seconds::from(cell.hour) * 3600 + rng.random_range(0..3600);
        let start = snap(desired - gen.broad_len / 2, cfg.grid).clamp(first, last);
        for area in [cell.pickup, cell.dropoff] {
            let (lat, lon) = dm.bboxes[area as usize].sample(rng);
            locations.push(Location { id: locations.len(), lat, lon, area: dm.areas[area as usize].clone() });
        }
        requests.push(TripRequest {
            id: k as u32 + 1,
            pickup: 1 + 2 * k,
            dropoff: 2 + 2 * k,
            passengers: dm.sample_passengers(rng).clamp(1, cfg.capacity),
            booking_instant,
            broad_window: TimeWindow { start, end: start + gen.broad_len },
        });
    }
    (locations[0].lat, locations[0].lon) = dm.centroid().expect("a model with trips has areas");
    let matrix = TravelTimeMatrix::from_locations(&locations, gen.speed_kmh);
    let cfg = ProblemConfig { depot: 0, ..cfg.clone() };
    Ok(DayInstance { instance: Instance::new(locations, matrix, cfg, requests, None)?, class })
}

/// The centred window of maximal length, aligned to the grid and kept
/// inside the broad window.
pub fn naive_window(broad: &TimeWindow, cfg: &ProblemConfig) -> Result<TimeWindow> {
    let starts = grid_starts(broad, cfg);
    let (Some(&first), Some(&last)) = (starts.first(), starts.last()) else {
        return Err(Error::invalid("broad window is shorter than a tight window"));
    };
    let centre = (broad.start + broad.end) / 2;
    let start = snap(centre - cfg.window_len / 2, cfg.grid).clamp(first, last);
    Ok(TimeWindow { start, end: start + cfg.window_len })
}

/// Baseline that always books the middle of the broad window.
#[derive(Debug, Clone, Copy, Default)]
pub struct NaivePolicy;

impl WindowPolicy for NaivePolicy {
    fn choose(&mut self, state: &BookingState, ctx: &DecisionContext) -> Result<Decision> {
        let req = state.current().ok_or_else(|| Error::invalid("no request awaits a decision"))?;
        let window = naive_window(&req.broad_window, ctx.cfg)?;
        let candidate = candidate_for(state, window, ctx)?;
        Ok(Decision { candidates: vec![candidate], scores: vec![0.0], chosen: 0, deadline_hit: false })
    }
}

/// Solution reported at the end of an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Finish {
    /// The routes as they stand after the last call.
    Current,
    /// A fresh greedy construction over all tight windows.
    Greedy,
}

/// Knobs of one episode.
#[derive(Clone, Copy)]
pub struct EpisodeOptions<'a> {
    pub sa: SaParams,
    /// Run the anytime solver between calls.
    pub anytime: bool,
    pub finish: Finish,
    /// Multiplier on the iterations granted between calls.
    pub budget_scale: f64,
    /// When set, every decision's shaped cost is computed with it.
    pub estimator: Option<&'a dyn VrpEstimator>,
    /// Check feasibility of every intermediate solution.
    pub audit: bool,
    pub seed: u64,
}

impl EpisodeOptions<'_> {
    pub fn new(sa: SaParams) -> Self {
        Self { sa, anytime: true, finish: Finish::Current, budget_scale: 1.0, estimator: None, audit: false, seed: 0 }
    }
}

/// What happened at one call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub trip: u32,
    pub booking_instant: Seconds,
    /// Requests confirmed before this call.
    pub confirmed: usize,
    /// Routes before this call.
    pub routes_before: usize,
    pub window: TimeWindow,
    pub candidates: usize,
    pub deadline_hit: bool,
    pub shaped_cost: Option<Seconds>,
    /// Offline cost of the chosen plan.
    pub plan_cost: Seconds,
    /// Annealing iterations granted after the decision.
    pub iterations: u64,
    /// Offline cost after the anytime step.
    pub cost_after: Seconds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub records: Vec<DecisionRecord>,
    pub windows: Vec<TimeWindow>,
    pub solution: Solution,
    pub cost: Seconds,
}

/// Iterations granted for `gap` seconds between calls.
pub fn iteration_budget(gap: Seconds, scale: f64) -> u64 {
    let base = (ITERS_PER_SECOND * gap.max(0) as f64).min(MAX_ITERATIONS as f64);
    (base * scale).round() as u64
}

fn audit(sol: &Solution, problem: &Problem, what: &str) -> Result<()> {
    match check_feasibility(sol, problem).first() {
        None => Ok(()),
        Some(v) => Err(Error::invalid(format!("{what} is infeasible: {:?} {}", v.kind, v.detail))),
    }
}

/// Plays one booking day with `policy`.
///
/// The gap after the last call is drawn from an exponential distribution
/// with the day's mean inter-arrival time.
pub fn run_episode(
    day: &DayInstance,
    policy: &mut dyn WindowPolicy,
    dm: &DemandModel,
    gp: &GreedyParams,
    opts: &EpisodeOptions,
) -> Result<EpisodeTrace> {
    let inst = &day.instance;
    let (cfg, m) = (&inst.cfg, &inst.matrix);
    let ctx = DecisionContext { cfg, matrix: m, locations: &inst.locations, demand: dm, greedy: gp };
    let requests = day.requests();
    if requests.windows(2).any(|w| w[1].booking_instant < w[0].booking_instant) {
        return Err(Error::invalid("requests must be in booking order"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let n = requests.len();
    let mean_gap = match (requests.first(), requests.last()) {
        (Some(a), Some(b)) if n > 1 => ((b.booking_instant - a.booking_instant) as f64 / (n - 1) as f64).max(1.0),
        _ => 3600.0,
    };
    let tail = Exp::new(1.0 / mean_gap).expect("positive rate");
    let mut state = BookingState::new(day.class);
    let mut records = Vec::with_capacity(n);
    for (i, req) in requests.iter().enumerate() {
        let routes_before = state.routes.routes.len();
        state.requests.push(req.clone());
        let decision = policy.choose(&state, &ctx)?;
        let choice = decision.choice();
        if !is_admissible(&choice.window, &req.broad_window, cfg) {
            return Err(Error::invalid(format!("policy chose an inadmissible window for trip {}", req.id)));
        }
        let mut tight = state.windows.clone();
        tight.push(choice.window);
        let shaped = opts.estimator.map(|e| shaped_cost(requests, &tight, e, cfg, m)).transpose()?;
        policy.observe(&choice.features, shaped)?;
        state.windows = tight;
        state.routes = choice.plan.clone();
        let problem = Problem::new(&state.requests, state.windows.clone(), cfg, m)?;
        if opts.audit {
            audit(&state.routes, &problem, "decision plan")?;
        }
        let plan_cost = problem.cost(&state.routes)?;
        let gap = match requests.get(i + 1) {
            Some(next) => next.booking_instant - req.booking_instant,
            None => tail.sample(&mut rng).round() as Seconds,
        };
        let step_seed: u64 = rng.random();
        let iterations = if opts.anytime { iteration_budget(gap, opts.budget_scale) } else { 0 };
        if opts.anytime {
            let sa = SaParams { budget: Budget::Iterations(iterations), seed: step_seed, ..opts.sa };
            state.routes = anneal_plus_greedy(&problem, Some(&state.routes), &sa, gp, None)?.best;
            if opts.audit {
                audit(&state.routes, &problem, "anytime output")?;
            }
        }
        records.push(DecisionRecord {
            trip: req.id,
            booking_instant: req.booking_instant,
            confirmed: i,
            routes_before,
            window: decision.choice().window,
            candidates: decision.candidates.len(),
            deadline_hit: decision.deadline_hit,
            shaped_cost: shaped,
            plan_cost,
            iterations,
            cost_after: problem.cost(&state.routes)?,
        });
    }
    let problem = Problem::new(&state.requests, state.windows.clone(), cfg, m)?;
    let solution = match opts.finish {
        Finish::Current => state.routes,
        Finish::Greedy => greedy_solve(&problem, gp)?,
    };
    if opts.audit {
        audit(&solution, &problem, "final solution")?;
    }
    let cost = problem.cost(&solution)?;
    Ok(EpisodeTrace { records, windows: state.windows, solution, cost })
}

/// Everything [`crate::policy::train`] needs besides its own settings.
#[derive(Clone, Copy)]
pub struct TrainEnv<'a> {
    pub demand: &'a DemandModel,
    pub day: &'a DayGen,
    pub greedy: &'a GreedyParams,
    pub sa: &'a SaParams,
    pub estimator: &'a dyn VrpEstimator,
}

/// Strategies compared by [`evaluate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    /// Learned windows with the anytime solver between calls.
    A,
    /// Learned windows, routes only from the decision plans.
    B,
    /// Centred windows with the anytime solver between calls.
    C,
    /// Centred windows, final routes from one greedy construction.
    D,
}

impl Arm {
    pub const ALL: [Arm; 4] = [Arm::A, Arm::B, Arm::C, Arm::D];

    pub fn name(self) -> &'static str {
        match self {
            Arm::A => "a",
            Arm::B => "b",
            Arm::C => "c",
            Arm::D => "d",
        }
    }

    pub fn uses_net(self) -> bool {
        matches!(self, Arm::A | Arm::B)
    }
}

impl FromStr for Arm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Arm::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::invalid(format!("unknown arm {s:?} (expected a, b, c or d)")))
    }
}

/// Shared settings of an evaluation run.
#[derive(Clone, Copy)]
pub struct EvalEnv<'a> {
    pub demand: &'a DemandModel,
    /// Needed by arms a and b.
    pub net: Option<&'a ValueNet>,
    pub greedy: &'a GreedyParams,
    pub sa: &'a SaParams,
    pub budget_scale: f64,
    pub audit: bool,
    pub seed: u64,
    /// Worker threads; 0 uses the available parallelism.
    pub threads: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub day: usize,
    pub arm: Arm,
    pub cost: Seconds,
    pub routes: usize,
    pub decisions: usize,
}

/// Median and quartiles of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

/// Quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl Quartiles {
    pub fn of(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Self { q1: quantile(&v, 0.25), median: quantile(&v, 0.5), q3: quantile(&v, 0.75) }
    }
}

/// Percent cost reduction of `arm` relative to `baseline` over the days.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reduction {
    pub arm: Arm,
    pub baseline: Arm,
    pub per_day: Vec<f64>,
    pub summary: Quartiles,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub rows: Vec<EvalRow>,
    pub reductions: Vec<Reduction>,
}

impl Evaluation {
    pub fn costs(&self, arm: Arm) -> Vec<Seconds> {
        self.rows.iter().filter(|r| r.arm == arm).map(|r| r.cost).collect()
    }

    pub fn median_cost(&self, arm: Arm) -> f64 {
        let v: Vec<f64> = self.costs(arm).into_iter().map(|c| c as f64).collect();
        Quartiles::of(&v).median
    }

    pub fn reduction(&self, arm: Arm, baseline: Arm) -> Option<&Reduction> {
        self.reductions.iter().find(|r| r.arm == arm && r.baseline == baseline)
    }
}

/// `100 (baseline - arm) / baseline`, 0 when both are 0.
pub fn percent_reduction(arm: Seconds, baseline: Seconds) -> f64 {
    if baseline == 0 {
        0.0
    } else {
        100.0 * (baseline - arm) as f64 / baseline as f64
    }
}

/// Percent reductions for every ordered pair of distinct arms in `rows`.
pub fn reductions(rows: &[EvalRow], arms: &[Arm]) -> Vec<Reduction> {
    let mut days: Vec<usize> = rows.iter().map(|r| r.day).collect();
    days.sort_unstable();
    days.dedup();
    let cost = |day: usize, arm: Arm| rows.iter().find(|r| r.day == day && r.arm == arm).map(|r| r.cost);
    let mut out = Vec::new();
    for &arm in arms {
        for &baseline in arms.iter().filter(|&&b| b != arm) {
            let per_day: Vec<f64> = days
                .iter()
                .filter_map(|&d| Some(percent_reduction(cost(d, arm)?, cost(d, baseline)?)))
                .collect();
            out.push(Reduction { arm, baseline, summary: Quartiles::of(&per_day), per_day });
        }
    }
    out
}

/// Runs one arm on one day.
pub fn run_arm(day: &DayInstance, arm: Arm, env: &EvalEnv, seed: u64) -> Result<EpisodeTrace> {
    let opts = EpisodeOptions {
        anytime: matches!(arm, Arm::A | Arm::C),
        finish: if arm == Arm::D { Finish::Greedy } else { Finish::Current },
        budget_scale: env.budget_scale,
        audit: env.audit,
        seed,
        ..EpisodeOptions::new(*env.sa)
    };
    if arm.uses_net() {
        let net = env.net.ok_or_else(|| Error::invalid(format!("arm {} needs a trained model", arm.name())))?;
        run_episode(day, &mut NetPolicy::new(net), env.demand, env.greedy, &opts)
    } else {
        run_episode(day, &mut crate::simulator::NaivePolicy, env.demand, env.greedy, &opts)
    }
}

/// Seed of the episodes on day `day`; all arms share it.
pub fn day_seed(seed: u64, day: usize) -> u64 {
    seed ^ (day as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Runs every arm on every day, days in parallel, and tabulates the costs
/// and pairwise percent reductions. The result does not depend on the
/// thread count.
pub fn evaluate(days: &[DayInstance], arms: &[Arm], env: &EvalEnv) -> Result<Evaluation> {
    if days.is_empty() {
        return Err(Error::invalid("evaluation needs at least one day"));
    }
    let threads = match env.threads {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        t => t,
    }
    .min(days.len());
    let next = std::sync::atomic::AtomicUsize::new(0);
    let per_day: Vec<Option<Result<Vec<EvalRow>>>> = (0..days.len()).map(|_| None).collect();
    let results = std::sync::Mutex::new(per_day);
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let d = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if d >= days.len() {
                    break;
                }
                let rows = arms
                    .iter()
                    .map(|&arm| {
                        let t = run_arm(&days[d], arm, env, day_seed(env.seed, d))?;
                        Ok(EvalRow { day: d, arm, cost: t.cost, routes: t.solution.routes.len(), decisions: t.records.len() })
                    })
                    .collect::<Result<Vec<_>>>();
                results.lock().expect("no poisoned workers")[d] = Some(rows);
            });
        }
    });
    let mut rows = Vec::with_capacity(days.len() * arms.len());
    for r in results.into_inner().expect("no poisoned workers") {
        rows.extend(r.expect("every day ran")?);
    }
    let reductions = reductions(&rows, arms);
    Ok(Evaluation { rows, reductions })
}

/// Writes `day,arm,cost,routes,decisions` rows.
pub fn write_results_csv(rows: &[EvalRow], writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["day", "arm", "cost", "routes", "decisions"]).map_err(csv_error)?;
    for r in rows {
        w.write_record([r.day.to_string(), r.arm.name().to_string(), r.cost.to_string(), r.routes.to_string(), r.decisions.to_string()])
            .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn naive_window_is_centred() {
        let cfg = ProblemConfig::default();
        let w = naive_window(&TimeWindow { start: 14 * 3600, end: 17 * 3600 }, &cfg).unwrap();
        assert_eq!(w, TimeWindow { start: 15 * 3600 + 900, end: 15 * 3600 + 2700 });
    }

    #[test]
    fn quartiles_interpolate() {
        let q = Quartiles::of(&[4.0, 1.0, 3.0, 2.0]);
        assert_eq!(q.median, 2.5);
        assert_eq!(q.q1, 1.75);
        assert_eq!(q.q3, 3.25);
    }

    #[test]
    fn budgets_are_capped_and_scaled() {
        assert_eq!(iteration_budget(10, 1.0), 300);
        assert_eq!(iteration_budget(3600, 1.0), MAX_ITERATIONS);
        assert_eq!(iteration_budget(3600, 0.1), 900);
        assert_eq!(iteration_budget(-5, 1.0), 0);
    }

    #[test]
    fn arms_parse() {
        assert_eq!("B".parse::<Arm>().unwrap(), Arm::B);
        assert!("e".parse::<Arm>().is_err());
    }
}
