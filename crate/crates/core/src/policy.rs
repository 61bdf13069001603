//! Window selection: candidate actions, the learned value function, the
//! argmin decision rule, shaped costs and the training loop.
//!
//! For every booking call the candidate tight windows are the grid-aligned
//! windows of maximal length inside the broad window. Each candidate comes
//! with a plan, the routes after the cheapest greedy insertion of the trip
//! (or a new route when that is cheaper or nothing fits). The value network
//! scores each candidate from its features and the lowest score wins.

use std::collections::VecDeque;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{feature_vector, BookingState, DecisionContext, FeatureVector, FEATURE_COUNT};
use crate::greedy::{greedy_solve, insert_feasible, GreedyParams};
use crate::model::{Problem, ProblemConfig, Seconds, Solution, TimeWindow, TravelTimeMatrix, TripRequest};
use crate::oracle::solve_exact;

/// Hidden layer width of the value network.
pub const HIDDEN: usize = 64;
/// Number of trainable parameters.
pub const PARAM_COUNT: usize = HIDDEN * FEATURE_COUNT + HIDDEN + HIDDEN + 1;
pub const MODEL_VERSION: u32 = 1;
/// Worst-case time allowed for one decision.
pub const DECISION_BUDGET: Duration = Duration::from_secs(2);

const W1: usize = 0;
const B1: usize = W1 + HIDDEN * FEATURE_COUNT;
const W2: usize = B1 + HIDDEN;
const B2: usize = W2 + HIDDEN;

/// One candidate action for the current request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionCandidate {
    pub window: TimeWindow,
    /// Routes after inserting the current request under `window`.
    pub plan: Solution,
    pub features: FeatureVector,
    /// Index of the existing route that absorbs the trip, `None` for a new route.
    pub route: Option<usize>,
    /// Change of the offline cost caused by the insertion, route overhead included.
    pub cost_delta: Seconds,
}

/// Grid-aligned starts of the maximal-length tight windows inside `broad`.
pub fn grid_starts(broad: &TimeWindow, cfg: &ProblemConfig) -> Vec<Seconds> {
    let first = broad.start.div_euclid(cfg.grid) * cfg.grid;
    let first = if first < broad.start { first + cfg.grid } else { first };
    (0..)
        .map(|k| first + k * cfg.grid)
        .take_while(|&s| s + cfg.window_len <= broad.end)
        .collect()
}

/// True when `window` is an admissible tight window for `broad`.
pub fn is_admissible(window: &TimeWindow, broad: &TimeWindow, cfg: &ProblemConfig) -> bool {
    window.start.rem_euclid(cfg.grid) == 0
        && window.len() <= cfg.window_len
        && broad.contains_window(window)
}

/// The cheapest way to add the current request under `window`: the best
/// greedy insertion into an existing route or a new dedicated route.
/// Returns the plan, the absorbing route and the cost change.
pub fn plan_for_window(
    state: &BookingState,
    window: TimeWindow,
    ctx: &DecisionContext,
) -> Result<(Solution, Option<usize>, Seconds)> {
    let problem = state.problem(window, ctx.cfg, ctx.matrix)?;
    let idx = problem.len() - 1;
    let mut best: Option<(usize, Seconds, crate::model::Route)> = None;
    for (j, route) in state.routes.routes.iter().enumerate() {
        let res = insert_feasible(route, idx, 0.0, ctx.greedy, &problem);
        if res.is_feasible() && best.as_ref().is_none_or(|(_, d, _)| res.extra_duration < *d) {
            best = Some((j, res.extra_duration, res.route));
        }
    }
    let single = problem.singleton(idx).map(|r| {
        let d = r.duration(ctx.cfg, ctx.matrix).expect("non-empty");
        (d + ctx.cfg.route_overhead, r)
    });
    let mut plan = state.routes.clone();
    match (best, single) {
        (Some((j, delta, route)), single) if single.as_ref().is_none_or(|(c, _)| delta <= *c) => {
            plan.routes[j] = route;
            Ok((plan, Some(j), delta))
        }
        (_, Some((c, route))) => {
            plan.routes.push(route);
            Ok((plan, None, c))
        }
        _ => Err(Error::Unserviceable { trip: problem.request(idx).id }),
    }
}

/// Candidate for one window, features included.
pub fn candidate_for(state: &BookingState, window: TimeWindow, ctx: &DecisionContext) -> Result<ActionCandidate> {
    let (plan, route, cost_delta) = plan_for_window(state, window, ctx)?;
    let features = feature_vector(state, &window, &plan, ctx)?;
    Ok(ActionCandidate { window, plan, features, route, cost_delta })
}

/// All candidates for the current request, in increasing window start.
///
/// When `deadline` passes, enumeration stops after the candidate in progress
/// and the flag in the result is set; at least one candidate is always built.
pub fn enumerate_actions(
    state: &BookingState,
    ctx: &DecisionContext,
    deadline: Option<Instant>,
) -> Result<(Vec<ActionCandidate>, bool)> {
    let req = state.current().ok_or_else(|| Error::invalid("no request awaits a decision"))?;
    let starts = grid_starts(&req.broad_window, ctx.cfg);
    if starts.is_empty() {
        return Err(Error::invalid(format!(
            "broad window of trip {} holds no {} s window on the {} s grid",
            req.id, ctx.cfg.window_len, ctx.cfg.grid
        )));
    }
    let mut out = Vec::with_capacity(starts.len());
    for s in starts {
        if !out.is_empty() && deadline.is_some_and(|d| Instant::now() >= d) {
            return Ok((out, true));
        }
        out.push(candidate_for(state, TimeWindow { start: s, end: s + ctx.cfg.window_len }, ctx)?);
    }
    Ok((out, false))
}

/// Index of the lowest score; the first (earliest window) wins ties.
pub fn argmin(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if best.is_none_or(|b| s < scores[b]) {
            best = Some(i);
        }
    }
    best
}

/// Outcome of one decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub candidates: Vec<ActionCandidate>,
    pub scores: Vec<f64>,
    pub chosen: usize,
    /// Enumeration stopped early because the decision budget ran out.
    pub deadline_hit: bool,
}

impl Decision {
    pub fn choice(&self) -> &ActionCandidate {
        &self.candidates[self.chosen]
    }
}

/// Scores every candidate with `score` and picks the argmin.
pub fn decide_with(
    state: &BookingState,
    ctx: &DecisionContext,
    budget: Option<Duration>,
    score: impl Fn(&FeatureVector) -> f64,
) -> Result<Decision> {
    let started = Instant::now();
    let deadline = budget.and_then(|b| started.checked_add(b));
    let (candidates, mut deadline_hit) = enumerate_actions(state, ctx, deadline)?;
    let scores: Vec<f64> = candidates.iter().map(|c| score(&c.features)).collect();
    deadline_hit |= budget.is_some_and(|b| started.elapsed() > b);
    let chosen = argmin(&scores).expect("at least one candidate");
    Ok(Decision { candidates, scores, chosen, deadline_hit })
}

/// The decision rule: the candidate with the lowest predicted shaped cost.
pub fn decide(net: &ValueNet, state: &BookingState, ctx: &DecisionContext) -> Result<Decision> {
    decide_with(state, ctx, Some(DECISION_BUDGET), |f| net.q(f))
}

/// Per-feature standardization plus the target scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: [f64; FEATURE_COUNT],
    pub std: [f64; FEATURE_COUNT],
    pub target_mean: f64,
    pub target_std: f64,
}

impl Default for Standardizer {
    fn default() -> Self {
        Self { mean: [0.0; FEATURE_COUNT], std: [1.0; FEATURE_COUNT], target_mean: 0.0, target_std: 1.0 }
    }
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count().max(1) as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    (mean, if std > 1e-9 { std } else { 1.0 })
}

impl Standardizer {
    /// Statistics of a set of experiences; constant columns keep unit scale.
    pub fn fit(experiences: &[Experience]) -> Self {
        let mut s = Self::default();
        if experiences.is_empty() {
            return s;
        }
        for k in 0..FEATURE_COUNT {
            (s.mean[k], s.std[k]) = mean_std(experiences.iter().map(|e| e.features.to_array()[k]));
        }
        (s.target_mean, s.target_std) = mean_std(experiences.iter().map(|e| e.target));
        s
    }

    pub fn input(&self, f: &FeatureVector) -> [f64; FEATURE_COUNT] {
        let mut x = f.to_array();
        for ((v, m), s) in x.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = (*v - m) / s;
        }
        x
    }

    pub fn target(&self, y: f64) -> f64 {
        (y - self.target_mean) / self.target_std
    }

    pub fn output(&self, z: f64) -> f64 {
        z * self.target_std + self.target_mean
    }
}

/// Adaptive-moment optimizer settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// A training example: features of a chosen action and its shaped cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Experience {
    pub features: FeatureVector,
    pub target: f64,
}

/// The value function: 8 standardized inputs, 64 rectified-linear hidden
/// units and one linear output, in standardized target units.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueNet {
    /// `w1` (hidden-major), `b1`, `w2`, `b2`, flattened.
    pub params: Vec<f64>,
    pub standardizer: Standardizer,
    pub adam: AdamConfig,
    adam_m: Vec<f64>,
    adam_v: Vec<f64>,
    adam_t: u64,
    /// Free-form description of how the weights were produced.
    pub fingerprint: String,
}

impl ValueNet {
    pub fn zeros() -> Self {
        Self::from_params(vec![0.0; PARAM_COUNT])
    }

    /// He-initialized weights and zero biases.
    pub fn init(rng: &mut impl Rng) -> Self {
        let mut params = vec![0.0; PARAM_COUNT];
        let n1 = Normal::new(0.0, (2.0 / FEATURE_COUNT as f64).sqrt()).expect("valid");
        let n2 = Normal::new(0.0, (2.0 / HIDDEN as f64).sqrt()).expect("valid");
        params[W1..B1].iter_mut().for_each(|w| *w = n1.sample(rng));
        params[W2..B2].iter_mut().for_each(|w| *w = n2.sample(rng));
        Self::from_params(params)
    }

    pub fn from_params(params: Vec<f64>) -> Self {
        assert_eq!(params.len(), PARAM_COUNT);
        Self {
            params,
            standardizer: Standardizer::default(),
            adam: AdamConfig::default(),
            adam_m: vec![0.0; PARAM_COUNT],
            adam_v: vec![0.0; PARAM_COUNT],
            adam_t: 0,
            fingerprint: String::new(),
        }
    }

    /// Network output for a standardized input.
    pub fn forward(&self, x: &[f64; FEATURE_COUNT]) -> f64 {
        let p = &self.params;
        let mut y = p[B2];
        for j in 0..HIDDEN {
            let row = &p[W1 + j * FEATURE_COUNT..W1 + (j + 1) * FEATURE_COUNT];
            let pre = p[B1 + j] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            if pre > 0.0 {
                y += p[W2 + j] * pre;
            }
        }
        y
    }

    /// Predicted shaped cost of an action, in seconds.
    pub fn q(&self, f: &FeatureVector) -> f64 {
        self.standardizer.output(self.forward(&self.standardizer.input(f)))
    }

    /// Mean squared error over `(input, target)` pairs in standardized units.
    pub fn loss(&self, batch: &[([f64; FEATURE_COUNT], f64)]) -> f64 {
        if batch.is_empty() {
            return 0.0;
        }
        batch.iter().map(|(x, t)| (self.forward(x) - t).powi(2)).sum::<f64>() / batch.len() as f64
    }

    /// Loss and its gradient with respect to [`ValueNet::params`].
    pub fn loss_and_gradient(&self, batch: &[([f64; FEATURE_COUNT], f64)]) -> (f64, Vec<f64>) {
        let p = &self.params;
        let mut grad = vec![0.0; PARAM_COUNT];
        if batch.is_empty() {
            return (0.0, grad);
        }
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        let mut pre = [0.0; HIDDEN];
        for (x, t) in batch {
            let mut y = p[B2];
            for j in 0..HIDDEN {
                let row = &p[W1 + j * FEATURE_COUNT..W1 + (j + 1) * FEATURE_COUNT];
                pre[j] = p[B1 + j] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
                if pre[j] > 0.0 {
                    y += p[W2 + j] * pre[j];
                }
            }
            let err = y - t;
            loss += err * err * scale;
            let dy = 2.0 * err * scale;
            grad[B2] += dy;
            for j in 0..HIDDEN {
                if pre[j] <= 0.0 {
                    continue;
                }
                grad[W2 + j] += dy * pre[j];
                let dh = dy * p[W2 + j];
                grad[B1 + j] += dh;
                for (g, v) in grad[W1 + j * FEATURE_COUNT..W1 + (j + 1) * FEATURE_COUNT].iter_mut().zip(x) {
                    *g += dh * v;
                }
            }
        }
        (loss, grad)
    }

    /// One optimizer step on `batch`; returns the loss before the step.
    pub fn train_step(&mut self, batch: &[([f64; FEATURE_COUNT], f64)]) -> Result<f64> {
        let (loss, grad) = self.loss_and_gradient(batch);
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged { loss });
        }
        let AdamConfig { lr, beta1, beta2, eps } = self.adam;
        self.adam_t += 1;
        let t = self.adam_t as i32;
        let (c1, c2) = (1.0 - beta1.powi(t), 1.0 - beta2.powi(t));
        for (k, &g) in grad.iter().enumerate() {
            self.adam_m[k] = beta1 * self.adam_m[k] + (1.0 - beta1) * g;
            self.adam_v[k] = beta2 * self.adam_v[k] + (1.0 - beta2) * g * g;
            self.params[k] -= lr * (self.adam_m[k] / c1) / ((self.adam_v[k] / c2).sqrt() + eps);
        }
        if self.params.iter().any(|w| !w.is_finite()) {
            return Err(Error::TrainingDiverged { loss });
        }
        Ok(loss)
    }

    /// Standardized `(input, target)` pair of an experience.
    pub fn example(&self, e: &Experience) -> ([f64; FEATURE_COUNT], f64) {
        (self.standardizer.input(&e.features), self.standardizer.target(e.target))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ModelFile::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str::<ModelFile>(text)?.try_into()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// On-disk form of a [`ValueNet`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    version: u32,
    /// Layer widths, input first.
    layers: Vec<usize>,
    /// Row-major, one row per hidden unit.
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
    standardizer: Standardizer,
    adam: AdamConfig,
    fingerprint: String,
}

impl From<&ValueNet> for ModelFile {
    fn from(net: &ValueNet) -> Self {
        let p = &net.params;
        Self {
            version: MODEL_VERSION,
            layers: vec![FEATURE_COUNT, HIDDEN, 1],
            w1: p[W1..B1].to_vec(),
            b1: p[B1..W2].to_vec(),
            w2: p[W2..B2].to_vec(),
            b2: p[B2..].to_vec(),
            standardizer: net.standardizer.clone(),
            adam: net.adam,
            fingerprint: net.fingerprint.clone(),
        }
    }
}

impl TryFrom<ModelFile> for ValueNet {
    type Error = Error;

    fn try_from(f: ModelFile) -> Result<Self> {
        if f.version != MODEL_VERSION {
            return Err(Error::invalid(format!("model file version {} is not supported", f.version)));
        }
        if f.layers != [FEATURE_COUNT, HIDDEN, 1] {
            return Err(Error::invalid(format!("unsupported layer sizes {:?}", f.layers)));
        }
        let params: Vec<f64> = [f.w1, f.b1, f.w2, f.b2].concat();
        if params.len() != PARAM_COUNT || params.iter().any(|w| !w.is_finite()) {
            return Err(Error::invalid("model weights are malformed"));
        }
        let s = &f.standardizer;
        if s.std.iter().chain([&s.target_std]).any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::invalid("standardization scales must be positive"));
        }
        let mut net = ValueNet::from_params(params);
        net.standardizer = f.standardizer;
        net.adam = f.adam;
        net.fingerprint = f.fingerprint;
        Ok(net)
    }
}

/// Offline cost estimator used for shaped costs.
pub trait VrpEstimator: Sync {
    fn estimate(&self, problem: &Problem) -> Result<Seconds>;
}

/// Cost of the greedy construction.
#[derive(Debug, Clone, Default)]
pub struct GreedyEstimator(pub GreedyParams);

impl VrpEstimator for GreedyEstimator {
    fn estimate(&self, problem: &Problem) -> Result<Seconds> {
        problem.cost(&greedy_solve(problem, &self.0)?)
    }
}

/// Optimal cost from the exact solver; only for tiny days.
#[derive(Debug, Clone)]
pub struct ExactEstimator {
    pub limit: usize,
}

impl Default for ExactEstimator {
    fn default() -> Self {
        Self { limit: crate::oracle::DEFAULT_LIMIT }
    }
}

impl VrpEstimator for ExactEstimator {
    fn estimate(&self, problem: &Problem) -> Result<Seconds> {
        Ok(solve_exact(problem, self.limit)?.cost)
    }
}

/// Shaped cost of the `tight.len()`-th decision: the estimated offline cost
/// with the first `i` windows tight minus the cost with only the first
/// `i - 1` tight, all later requests keeping their broad windows.
pub fn shaped_cost(
    requests: &[TripRequest],
    tight: &[TimeWindow],
    estimator: &dyn VrpEstimator,
    cfg: &ProblemConfig,
    m: &TravelTimeMatrix,
) -> Result<Seconds> {
    let i = tight.len();
    if i == 0 || i > requests.len() {
        return Err(Error::invalid("shaped cost needs 1..=n tight windows"));
    }
    let windows = |k: usize| -> Vec<TimeWindow> {
        tight[..k].iter().copied().chain(requests[k..].iter().map(|r| r.broad_window)).collect()
    };
    let after = estimator.estimate(&Problem::new(requests, windows(i), cfg, m)?)?;
    let before = estimator.estimate(&Problem::new(requests, windows(i - 1), cfg, m)?)?;
    Ok(after - before)
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub episodes: usize,
    /// Leading episodes with uniformly random actions and no gradient steps;
    /// their experiences fix the standardization.
    pub warmup_episodes: usize,
    pub epsilon: f64,
    /// Multiplier applied to epsilon after each episode.
    pub epsilon_decay: f64,
    pub batch: usize,
    pub replay_capacity: usize,
    pub lr: f64,
    /// Scale applied to the between-call annealing budgets.
    pub budget_scale: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 50,
            warmup_episodes: 3,
            epsilon: 0.3,
            epsilon_decay: 0.95,
            batch: 32,
            replay_capacity: 10_000,
            lr: 1e-3,
            budget_scale: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) || !(0.0..=1.0).contains(&self.epsilon_decay) {
            return Err(Error::invalid("epsilon and its decay must lie in [0, 1]"));
        }
        if self.batch == 0 || self.replay_capacity < self.batch {
            return Err(Error::invalid("need 0 < batch <= replay capacity"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || self.budget_scale.is_nan() || self.budget_scale < 0.0 {
            return Err(Error::invalid("learning rate must be positive and budget scale non-negative"));
        }
        Ok(())
    }
}

/// Bounded experience store with uniform minibatch sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Experience>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, items: VecDeque::with_capacity(capacity.min(1 << 16)) }
    }

    pub fn push(&mut self, e: Experience) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(e);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> impl Iterator<Item = &Experience> {
        self.items.iter()
    }

    /// `n` distinct experiences, or all of them when fewer are stored.
    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Vec<Experience> {
        let n = n.min(self.items.len());
        rand::seq::index::sample(rng, self.items.len(), n).into_iter().map(|i| self.items[i]).collect()
    }
}

/// Plain supervised fitting on a fixed set of experiences. Returns the full
/// set's loss after each epoch; the standardizer is left as is.
pub fn fit_experiences(
    net: &mut ValueNet,
    experiences: &[Experience],
    epochs: usize,
    batch: usize,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    let data: Vec<_> = experiences.iter().map(|e| net.example(e)).collect();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut losses = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), rng);
        for chunk in order.chunks(batch.max(1)) {
            let b: Vec<_> = chunk.iter().map(|&i| data[i]).collect();
            net.train_step(&b)?;
        }
        losses.push(net.loss(&data));
    }
    Ok(losses)
}

/// Something that picks a window for the current request.
pub trait WindowPolicy {
    fn choose(&mut self, state: &BookingState, ctx: &DecisionContext) -> Result<Decision>;

    /// Sees the features of the chosen action and, when computed, its
    /// shaped cost.
    fn observe(&mut self, _features: &FeatureVector, _shaped: Option<Seconds>) -> Result<()> {
        Ok(())
    }
}

/// The trained decision rule.
#[derive(Debug, Clone)]
pub struct NetPolicy<'a> {
    pub net: &'a ValueNet,
    pub budget: Duration,
}

impl<'a> NetPolicy<'a> {
    pub fn new(net: &'a ValueNet) -> Self {
        Self { net, budget: DECISION_BUDGET }
    }
}

impl WindowPolicy for NetPolicy<'_> {
    fn choose(&mut self, state: &BookingState, ctx: &DecisionContext) -> Result<Decision> {
        decide_with(state, ctx, Some(self.budget), |f| self.net.q(f))
    }
}

/// Epsilon-greedy exploration around a network that learns online from
/// every observed shaped cost.
pub struct LearningPolicy {
    pub net: ValueNet,
    pub buffer: ReplayBuffer,
    pub epsilon: f64,
    pub batch: usize,
    /// Gradient steps are taken only when set.
    pub learning: bool,
    pub rng: ChaCha8Rng,
    /// Losses of the gradient steps taken so far.
    pub losses: Vec<f64>,
}

impl WindowPolicy for LearningPolicy {
    fn choose(&mut self, state: &BookingState, ctx: &DecisionContext) -> Result<Decision> {
        let net = &self.net;
        let mut d = decide_with(state, ctx, None, |f| net.q(f))?;
        if self.rng.random_bool(self.epsilon) {
            let all: Vec<usize> = (0..d.candidates.len()).collect();
            d.chosen = *all.choose(&mut self.rng).expect("non-empty");
        }
        Ok(d)
    }

    fn observe(&mut self, features: &FeatureVector, shaped: Option<Seconds>) -> Result<()> {
        let Some(target) = shaped else { return Ok(()) };
        self.buffer.push(Experience { features: *features, target: target as f64 });
        if self.learning && self.buffer.len() >= self.batch {
            let batch: Vec<_> = self.buffer.sample(self.batch, &mut self.rng).iter().map(|e| self.net.example(e)).collect();
            let loss = self.net.train_step(&batch)?;
            self.losses.push(loss);
        }
        Ok(())
    }
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: ValueNet,
    /// Mean minibatch loss of each learning episode.
    pub episode_losses: Vec<f64>,
    pub experiences: usize,
}

/// Trains a value network on simulated booking days.
///
/// Each episode samples a day, runs the booking loop with epsilon-greedy
/// decisions and the anytime solver between calls, and after every decision
/// stores the chosen action's features with its shaped cost and takes one
/// minibatch step. Warm-up episodes act at random and only collect data.
pub fn train(net: ValueNet, tc: &TrainConfig, env: &crate::simulator::TrainEnv) -> Result<TrainOutcome> {
    tc.validate()?;
    if tc.episodes == 0 {
        return Ok(TrainOutcome { net, episode_losses: Vec::new(), experiences: 0 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut policy = LearningPolicy {
        net,
        buffer: ReplayBuffer::new(tc.replay_capacity),
        epsilon: 1.0,
        batch: tc.batch,
        learning: false,
        rng: ChaCha8Rng::seed_from_u64(rng.random()),
        losses: Vec::new(),
    };
    policy.net.adam.lr = tc.lr;
    let mut epsilon = tc.epsilon;
    let mut episode_losses = Vec::new();
    for episode in 0..tc.episodes {
        if episode == tc.warmup_episodes.min(tc.episodes - 1) && !policy.learning {
            let data: Vec<Experience> = policy.buffer.items().copied().collect();
            if !data.is_empty() {
                policy.net.standardizer = Standardizer::fit(&data);
            }
            policy.learning = true;
        }
        if policy.learning {
            policy.epsilon = epsilon;
            epsilon *= tc.epsilon_decay;
        }
        let day_seed: u64 = rng.random();
        let day = crate::simulator::sample_day(env.demand, env.day, None, &mut ChaCha8Rng::seed_from_u64(day_seed))?;
        let before = policy.losses.len();
        let opts = crate::simulator::EpisodeOptions {
            anytime: true,
            budget_scale: tc.budget_scale,
            estimator: Some(env.estimator),
            seed: day_seed,
            ..crate::simulator::EpisodeOptions::new(*env.sa)
        };
        crate::simulator::run_episode(&day, &mut policy, env.demand, env.greedy, &opts)?;
        if policy.learning {
            let new = &policy.losses[before..];
            if !new.is_empty() {
                episode_losses.push(new.iter().sum::<f64>() / new.len() as f64);
            }
        }
    }
    let mut net = policy.net;
    net.fingerprint = format!(
        "episodes={} warmup={} epsilon={} decay={} batch={} replay={} lr={} budget_scale={} seed={}",
        tc.episodes, tc.warmup_episodes, tc.epsilon, tc.epsilon_decay, tc.batch, tc.replay_capacity, tc.lr, tc.budget_scale, tc.seed
    );
    Ok(TrainOutcome { net, episode_losses, experiences: policy.buffer.len() })
}
