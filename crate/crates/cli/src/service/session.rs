//! One live booking session: confirmed requests, the current routes, at most
//! one pending proposal, and the anytime worker that improves the routes
//! between calls.

use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use paraflex_core::demand::DemandModel;
use paraflex_core::features::{BookingState, DecisionContext, FeatureVector};
use paraflex_core::greedy::GreedyParams;
use paraflex_core::history::DayClass;
use paraflex_core::instance::{RouteDoc, SolutionDoc};
use paraflex_core::policy::{candidate_for, decide_with, is_admissible, ActionCandidate, ValueNet, DECISION_BUDGET};
use paraflex_core::simanneal::{anneal_observed, Budget, SaControl, SaParams};
use paraflex_core::{
    check_feasibility, Location, Problem, ProblemConfig, Seconds, Solution, TimeWindow, TravelTimeMatrix, TripId,
    TripRequest,
};
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

/// Minimum spacing of snapshot events published by the worker.
const WORKER_EMIT_SPACING: Duration = Duration::from_millis(100);

/// Models shared by every session.
#[derive(Debug)]
pub struct Models {
    pub net: ValueNet,
    pub demand: DemandModel,
}

/// Solver settings shared by every session.
#[derive(Debug, Clone)]
pub struct Settings {
    pub problem: ProblemConfig,
    pub greedy: GreedyParams,
    pub sa: SaParams,
    /// Wall time granted to each anytime run.
    pub anytime: Duration,
    pub speed_kmh: f64,
    pub decision_budget: Duration,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            problem: ProblemConfig::default(),
            greedy: GreedyParams::default(),
            sa: SaParams::default(),
            anytime: Duration::from_secs(300),
            speed_kmh: paraflex_core::model::URBAN_SPEED_KMH,
            decision_budget: DECISION_BUDGET,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverStatus {
    Idle,
    Annealing,
    Deciding,
}

/// A point given by the caller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Place {
    pub lat: f64,
    pub lon: f64,
    /// Area code, for demand models keyed by codes such as ZIP.
    #[serde(default)]
    pub area: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionParams {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub class: Option<DayClass>,
    /// Depot position; defaults to the centre of the demand model's areas.
    #[serde(default)]
    pub depot: Option<Place>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequestBody {
    pub pickup: Place,
    pub dropoff: Place,
    pub passengers: u32,
    pub broad_window: TimeWindow,
    /// Seconds since midnight when the call arrives; defaults to the latest
    /// booking instant seen in the session.
    #[serde(default)]
    pub booking_instant: Option<Seconds>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfirmBody {
    /// Position in the proposal's candidate list.
    #[serde(default)]
    pub index: Option<usize>,
    /// A grid start of the caller's choosing.
    #[serde(default)]
    pub start: Option<Seconds>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSummary {
    pub routes: usize,
    pub cost: Seconds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateView {
    pub window: TimeWindow,
    pub q_score: f64,
    /// Existing route that absorbs the trip; `None` for a new route.
    pub route: Option<usize>,
    pub cost_delta: Seconds,
    pub features: FeatureVector,
    pub plan_summary: PlanSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub trip: TripId,
    /// Sorted by ascending score.
    pub candidates: Vec<CandidateView>,
    pub recommended: usize,
    pub deadline_hit: bool,
    pub elapsed_ms: u64,
    /// Annealing iterations the worker completed after the stop request.
    pub worker_overrun: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Confirmation {
    pub trip: TripId,
    pub window: TimeWindow,
    pub route: usize,
    pub routes: usize,
    pub cost: Seconds,
}

/// Read-only view of a session, also the payload of every event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub id: String,
    /// Number of confirmed requests; changes exactly on confirm.
    pub epoch: usize,
    pub status: SolverStatus,
    pub pending: bool,
    pub cost: Seconds,
    pub routes: Vec<RouteDoc>,
}

/// Failures a caller can act on.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SessionError {
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Unprocessable(String),
    #[error("{0}")]
    Internal(String),
}

type Result<T> = std::result::Result<T, SessionError>;

fn internal(e: impl std::fmt::Display) -> SessionError {
    SessionError::Internal(e.to_string())
}

/// A confirmed booking, as written to the journal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Booking {
    pub request: RequestBody,
    pub window: TimeWindow,
}

struct Pending {
    request: TripRequest,
    body: RequestBody,
    locations: Vec<Location>,
    candidates: Vec<ActionCandidate>,
}

struct Worker {
    handle: JoinHandle<Option<Solution>>,
}

struct State {
    locations: Vec<Location>,
    confirmed: Vec<TripRequest>,
    windows: Vec<TimeWindow>,
    bodies: Vec<RequestBody>,
    routes: Solution,
    pending: Option<Pending>,
    worker: Option<Worker>,
    deciding: bool,
}

pub struct Session {
    pub id: String,
    pub params: SessionParams,
    class: DayClass,
    models: Arc<Models>,
    settings: Arc<Settings>,
    control: Arc<SaControl>,
    events: broadcast::Sender<SessionSnapshot>,
    state: Mutex<State>,
}

fn location(id: usize, p: &Place, demand: &DemandModel) -> Location {
    Location { id, lat: p.lat, lon: p.lon, area: demand.scheme.area(p.lat, p.lon, p.area.as_deref()) }
}

fn check_place(p: &Place, what: &str) -> Result<()> {
    if !(p.lat.is_finite() && p.lon.is_finite() && p.lat.abs() <= 90.0 && p.lon.abs() <= 180.0) {
        return Err(SessionError::Unprocessable(format!("{what} coordinates out of range")));
    }
    Ok(())
}

impl Session {
    pub fn new(id: String, params: SessionParams, models: Arc<Models>, settings: Arc<Settings>) -> Result<Self> {
        let depot = match &params.depot {
            Some(p) => {
                check_place(p, "depot")?;
                p.clone()
            }
            None => {
                let (lat, lon) = models
                    .demand
                    .centroid()
                    .ok_or_else(|| SessionError::Unprocessable("demand model has no areas; give a depot".into()))?;
                Place { lat, lon, area: None }
            }
        };
        let depot = Location { id: 0, lat: depot.lat, lon: depot.lon, area: "depot".into() };
        let (events, _) = broadcast::channel(64);
        Ok(Self {
            id,
            class: params.class.unwrap_or(DayClass::Weekday),
            params,
            models,
            settings,
            control: Arc::new(SaControl::new()),
            events,
            state: Mutex::new(State {
                locations: vec![depot],
                confirmed: Vec::new(),
                windows: Vec::new(),
                bodies: Vec::new(),
                routes: Solution::default(),
                pending: None,
                worker: None,
                deciding: false,
            }),
        })
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn cfg(&self) -> ProblemConfig {
        ProblemConfig { depot: 0, ..self.settings.problem.clone() }
    }

    pub fn subscribe(&self) -> broadcast::Receiver<SessionSnapshot> {
        self.events.subscribe()
    }

    fn status(&self, st: &State) -> SolverStatus {
        if st.deciding {
            SolverStatus::Deciding
        } else if st.worker.as_ref().is_some_and(|w| !w.handle.is_finished()) {
            SolverStatus::Annealing
        } else {
            SolverStatus::Idle
        }
    }

    fn view(&self, st: &State, routes: &Solution, cost: Seconds) -> SessionSnapshot {
        let cfg = self.cfg();
        let m = TravelTimeMatrix::from_locations(&st.locations[..1 + 2 * st.confirmed.len()], self.settings.speed_kmh);
        let doc = SolutionDoc::new(routes, &cfg, &m).expect("session routes are non-empty");
        debug_assert_eq!(doc.cost, cost);
        SessionSnapshot {
            id: self.id.clone(),
            epoch: st.confirmed.len(),
            status: self.status(st),
            pending: st.pending.is_some(),
            cost,
            routes: doc.routes,
        }
    }

    /// The anytime worker's best routes when it is running, else the
    /// installed routes.
    pub fn snapshot(&self) -> SessionSnapshot {
        let st = self.lock();
        let running = st.worker.as_ref().is_some_and(|w| !w.handle.is_finished());
        match self.control.snapshot() {
            Some(s) if running || st.worker.is_some() => self.view(&st, &s.solution, s.cost),
            _ => {
                let cost = self.installed_cost(&st);
                self.view(&st, &st.routes, cost)
            }
        }
    }

    fn installed_cost(&self, st: &State) -> Seconds {
        let cfg = self.cfg();
        let m = TravelTimeMatrix::from_locations(&st.locations[..1 + 2 * st.confirmed.len()], self.settings.speed_kmh);
        paraflex_core::solution_cost(&st.routes, &cfg, &m).unwrap_or(0)
    }

    /// Stops the worker and installs its best routes. Returns the number of
    /// iterations the worker completed after the stop request.
    fn pause(&self, st: &mut State) -> Result<u64> {
        let Some(worker) = st.worker.take() else {
            return Ok(0);
        };
        let before = self.control.iterations();
        self.control.request_stop();
        let best = worker.handle.join().map_err(|_| internal("anytime worker panicked"))?;
        let overrun = self.control.iterations().saturating_sub(before);
        if let Some(best) = best {
            st.routes = best;
        }
        Ok(overrun)
    }

    fn resume(&self, st: &mut State) {
        let cfg = self.cfg();
        let locations = st.locations[..1 + 2 * st.confirmed.len()].to_vec();
        let matrix = TravelTimeMatrix::from_locations(&locations, self.settings.speed_kmh);
        let requests = st.confirmed.clone();
        let windows = st.windows.clone();
        let start = st.routes.clone();
        let sa = SaParams {
            budget: Budget::WallTime(self.settings.anytime),
            seed: self.params.seed.wrapping_add(requests.len() as u64),
            ..self.settings.sa
        };
        let gp = self.settings.greedy;
        let control = Arc::clone(&self.control);
        let events = self.events.clone();
        let id = self.id.clone();
        let epoch = requests.len();
        let start_cost = match paraflex_core::solution_cost(&start, &cfg, &matrix) {
            Ok(c) => c,
            Err(_) => return,
        };
        control.clear_stop();
        control.publish(&start, start_cost);
        let handle = std::thread::spawn(move || {
            let problem = Problem::new(&requests, windows, &cfg, &matrix).ok()?;
            let emit = |sol: &Solution, cost: Seconds, status: SolverStatus| {
                if let Ok(doc) = SolutionDoc::new(sol, &cfg, &matrix) {
                    let _ = events.send(SessionSnapshot {
                        id: id.clone(),
                        epoch,
                        status,
                        pending: false,
                        cost,
                        routes: doc.routes,
                    });
                }
            };
            let mut best = start_cost;
            let mut shown = start_cost;
            let mut last = Instant::now();
            let outcome = anneal_observed(&start, &sa, &problem, &gp, Some(&control), &mut |sol, cost| {
                if cost < best {
                    best = cost;
                }
                if best < shown && last.elapsed() >= WORKER_EMIT_SPACING {
                    let s = if cost == best { Some((sol.clone(), cost)) } else { control.snapshot().map(|s| (s.solution, s.cost)) };
                    if let Some((sol, cost)) = s {
                        emit(&sol, cost, SolverStatus::Annealing);
                        shown = cost;
                        last = Instant::now();
                    }
                }
            })
            .ok()?;
            if !outcome.interrupted {
                emit(&outcome.best, outcome.cost, SolverStatus::Idle);
            }
            Some(outcome.best)
        });
        st.worker = Some(Worker { handle });
    }

    fn context<'a>(&'a self, cfg: &'a ProblemConfig, m: &'a TravelTimeMatrix, locations: &'a [Location]) -> DecisionContext<'a> {
        DecisionContext { cfg, matrix: m, locations, demand: &self.models.demand, greedy: &self.settings.greedy }
    }

    fn booking_state(&self, st: &State, request: &TripRequest) -> BookingState {
        let mut state = BookingState::new(self.class);
        state.requests = st.confirmed.clone();
        state.requests.push(request.clone());
        state.windows = st.windows.clone();
        state.routes = st.routes.clone();
        state
    }

    fn build_request(&self, st: &State, body: &RequestBody) -> Result<(TripRequest, Vec<Location>)> {
        let cfg = self.cfg();
        check_place(&body.pickup, "pickup")?;
        check_place(&body.dropoff, "dropoff")?;
        if body.passengers == 0 || body.passengers > cfg.capacity {
            return Err(SessionError::Unprocessable(format!("passengers must lie in 1..={}", cfg.capacity)));
        }
        let w = body.broad_window;
        if w.end < w.start || w.len() < cfg.window_len {
            return Err(SessionError::Unprocessable(format!(
                "broad window must be at least {} s long",
                cfg.window_len
            )));
        }
        if paraflex_core::policy::grid_starts(&w, &cfg).is_empty() {
            return Err(SessionError::Unprocessable("broad window holds no grid-aligned tight window".into()));
        }
        let mut locations = st.locations[..1 + 2 * st.confirmed.len()].to_vec();
        let k = st.confirmed.len();
        locations.push(location(1 + 2 * k, &body.pickup, &self.models.demand));
        locations.push(location(2 + 2 * k, &body.dropoff, &self.models.demand));
        let booking_instant = body
            .booking_instant
            .unwrap_or_else(|| st.confirmed.iter().map(|r| r.booking_instant).max().unwrap_or(0));
        let request = TripRequest {
            id: k as TripId + 1,
            pickup: 1 + 2 * k,
            dropoff: 2 + 2 * k,
            passengers: body.passengers,
            booking_instant,
            broad_window: w,
        };
        Ok((request, locations))
    }

    /// Scores every admissible window for a new request and holds the result
    /// as the pending proposal.
    pub fn propose(&self, body: RequestBody) -> Result<Proposal> {
        let started = Instant::now();
        let mut st = self.lock();
        if st.pending.is_some() {
            return Err(SessionError::Conflict("a proposal is already pending".into()));
        }
        let (request, locations) = self.build_request(&st, &body)?;
        let overrun = self.pause(&mut st)?;
        st.deciding = true;
        let cfg = self.cfg();
        let matrix = TravelTimeMatrix::from_locations(&locations, self.settings.speed_kmh);
        let state = self.booking_state(&st, &request);
        let ctx = self.context(&cfg, &matrix, &locations);
        let net = &self.models.net;
        let decision = decide_with(&state, &ctx, Some(self.settings.decision_budget), |f| net.q(f));
        st.deciding = false;
        let decision = match decision {
            Ok(d) => d,
            Err(e) => {
                self.resume(&mut st);
                return Err(SessionError::Unprocessable(e.to_string()));
            }
        };
        let mut order: Vec<usize> = (0..decision.candidates.len()).collect();
        order.sort_by(|&a, &b| decision.scores[a].total_cmp(&decision.scores[b]));
        let recommended = order.iter().position(|&i| i == decision.chosen).expect("chosen is a candidate");
        let mut views = Vec::with_capacity(order.len());
        let mut candidates = Vec::with_capacity(order.len());
        for &i in &order {
            let c = &decision.candidates[i];
            let cost = paraflex_core::solution_cost(&c.plan, &cfg, &matrix).map_err(internal)?;
            views.push(CandidateView {
                window: c.window,
                q_score: decision.scores[i],
                route: c.route,
                cost_delta: c.cost_delta,
                features: c.features,
                plan_summary: PlanSummary { routes: c.plan.routes.len(), cost },
            });
            candidates.push(c.clone());
        }
        let trip = request.id;
        st.pending = Some(Pending { request, body, locations, candidates });
        Ok(Proposal {
            trip,
            candidates: views,
            recommended,
            deadline_hit: decision.deadline_hit,
            elapsed_ms: started.elapsed().as_millis() as u64,
            worker_overrun: overrun,
        })
    }

    /// Commits a window for the pending request and restarts the worker.
    pub fn confirm(&self, body: ConfirmBody) -> Result<Confirmation> {
        let mut st = self.lock();
        let Some(pending) = st.pending.as_ref() else {
            return Err(SessionError::Conflict("no proposal is pending".into()));
        };
        let cfg = self.cfg();
        let candidate = match (body.index, body.start) {
            (Some(i), None) => pending
                .candidates
                .get(i)
                .cloned()
                .ok_or_else(|| SessionError::Unprocessable(format!("no candidate {i}")))?,
            (None, Some(start)) => {
                let window = TimeWindow { start, end: start + cfg.window_len };
                if !is_admissible(&window, &pending.request.broad_window, &cfg) {
                    return Err(SessionError::Unprocessable(
                        "start must lie on the grid and keep the window inside the broad window".into(),
                    ));
                }
                match pending.candidates.iter().find(|c| c.window == window) {
                    Some(c) => c.clone(),
                    None => {
                        let matrix = TravelTimeMatrix::from_locations(&pending.locations, self.settings.speed_kmh);
                        let state = self.booking_state(&st, &pending.request);
                        let ctx = self.context(&cfg, &matrix, &pending.locations);
                        candidate_for(&state, window, &ctx).map_err(|e| SessionError::Unprocessable(e.to_string()))?
                    }
                }
            }
            _ => return Err(SessionError::Unprocessable("give exactly one of index and start".into())),
        };
        let pending = st.pending.take().expect("checked above");
        let confirmation = self.install(&mut st, pending.request, pending.body, pending.locations, candidate.window, candidate.plan)?;
        self.resume(&mut st);
        Ok(confirmation)
    }

    fn install(
        &self,
        st: &mut State,
        request: TripRequest,
        body: RequestBody,
        locations: Vec<Location>,
        window: TimeWindow,
        plan: Solution,
    ) -> Result<Confirmation> {
        let cfg = self.cfg();
        let matrix = TravelTimeMatrix::from_locations(&locations, self.settings.speed_kmh);
        let mut requests = st.confirmed.clone();
        requests.push(request.clone());
        let mut windows = st.windows.clone();
        windows.push(window);
        let problem = Problem::new(&requests, windows.clone(), &cfg, &matrix).map_err(internal)?;
        let violations = check_feasibility(&plan, &problem);
        if let Some(v) = violations.first() {
            return Err(internal(format!("plan is infeasible: {:?} {}", v.kind, v.detail)));
        }
        let cost = problem.cost(&plan).map_err(internal)?;
        let route = plan.route_of(request.id).expect("a feasible plan serves every trip");
        let confirmation = Confirmation { trip: request.id, window, route, routes: plan.routes.len(), cost };
        st.confirmed = requests;
        st.windows = windows;
        st.locations = locations;
        st.bodies.push(body);
        st.routes = plan;
        let view = self.view(st, &st.routes, cost);
        let _ = self.events.send(view);
        Ok(confirmation)
    }

    /// Confirmed bookings in order, enough to rebuild the session.
    pub fn bookings(&self) -> Vec<Booking> {
        let st = self.lock();
        st.bodies.iter().zip(&st.windows).map(|(b, w)| Booking { request: b.clone(), window: *w }).collect()
    }

    /// Re-applies a journaled booking, planning it by greedy insertion.
    pub fn replay(&self, booking: Booking) -> Result<Confirmation> {
        let mut st = self.lock();
        self.pause(&mut st)?;
        let (request, locations) = self.build_request(&st, &booking.request)?;
        let cfg = self.cfg();
        if !is_admissible(&booking.window, &request.broad_window, &cfg) {
            return Err(SessionError::Unprocessable("journaled window is not admissible".into()));
        }
        let matrix = TravelTimeMatrix::from_locations(&locations, self.settings.speed_kmh);
        let state = self.booking_state(&st, &request);
        let ctx = self.context(&cfg, &matrix, &locations);
        let candidate = candidate_for(&state, booking.window, &ctx).map_err(internal)?;
        self.install(&mut st, request, booking.request, locations, booking.window, candidate.plan)
    }

    /// Stops the worker for good.
    pub fn shutdown(&self) {
        let mut st = self.lock();
        let _ = self.pause(&mut st);
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        self.control.request_stop();
    }
}
