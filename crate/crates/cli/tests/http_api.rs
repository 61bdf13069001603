//! The booking service driven through its router.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use paraflex::service::{router, AppState, ServiceConfig, SessionSnapshot, Settings};
use paraflex_core::demand::{AreaScheme, DemandModel};
use paraflex_core::features::{BookingState, DecisionContext};
use paraflex_core::greedy::GreedyParams;
use paraflex_core::history::{synthesize_history, DayClass, SynthConfig};
use paraflex_core::policy::{candidate_for, decide, ValueNet};
use paraflex_core::{Location, ProblemConfig, Route, Solution, TimeWindow, TravelTimeMatrix, TripRequest};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tower::ServiceExt;

struct Files {
    _dir: tempfile::TempDir,
    model: PathBuf,
    demand: PathBuf,
    root: PathBuf,
}

fn files() -> Files {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig { weekday_mean: 20.0, weekend_mean: 10.0, ..SynthConfig::default() };
    let first = chrono::NaiveDate::from_ymd_opt(2024, 1, 1).unwrap();
    let records = synthesize_history(&cfg, first, 20, &mut ChaCha8Rng::seed_from_u64(1));
    let dm = DemandModel::build(&records, AreaScheme::auto(&records));
    let mut net = ValueNet::init(&mut ChaCha8Rng::seed_from_u64(2));
    net.standardizer.std = [1.0, 1.0, 1.0, 1.0, 10.0, 1000.0, 5000.0, 1.0];
    net.standardizer.target_std = 1000.0;
    let model = dir.path().join("net.json");
    let demand = dir.path().join("demand.json");
    net.save(&model).unwrap();
    dm.save(&demand).unwrap();
    Files { root: dir.path().to_path_buf(), _dir: dir, model, demand }
}

fn config(f: &Files, anytime: Duration) -> ServiceConfig {
    ServiceConfig {
        model: Some(f.model.clone()),
        demand: Some(f.demand.clone()),
        settings: Settings { anytime, ..Settings::default() },
        ..ServiceConfig::default()
    }
}

fn app(config: ServiceConfig) -> (Arc<AppState>, Router) {
    let state = AppState::new(config).unwrap();
    (Arc::clone(&state), router(state))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<&str>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or(Body::empty(), |b| Body::from(b.to_string())))
        .unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap_or(Value::Null) };
    (status, value)
}

async fn post(app: &Router, uri: &str, body: Value) -> (StatusCode, Value) {
    call(app, "POST", uri, Some(&body.to_string())).await
}

async fn session(app: &Router) -> String {
    let (status, body) = post(app, "/api/session", json!({"seed": 3})).await;
    assert_eq!(status, StatusCode::CREATED);
    body["id"].as_str().unwrap().to_string()
}

/// Trip `k` of a scripted day: short hops near the demand area centre.
fn trip(dm: &DemandModel, k: usize) -> Value {
    let (lat, lon) = dm.centroid().unwrap();
    let d = (k % 5) as f64 * 0.004;
    let start = 8 * 3600 + 900 * ((k * 7) % 24) as i64;
    json!({
        "pickup": {"lat": lat + d, "lon": lon - d},
        "dropoff": {"lat": lat - 0.01 + d, "lon": lon + 0.012},
        "passengers": 1 + k % 2,
        "broad_window": {"start": start, "end": start + 3 * 3600},
        "booking_instant": 7 * 3600 + 300 * k as i64,
    })
}

fn snapshot(v: &Value) -> SessionSnapshot {
    serde_json::from_value(v.clone()).unwrap()
}

#[tokio::test(flavor = "multi_thread")]
async fn sessions_get_distinct_ids() {
    let f = files();
    let (_, app) = app(config(&f, Duration::from_millis(50)));
    let a = session(&app).await;
    let b = session(&app).await;
    assert_ne!(a, b);
    let (status, _) = call(&app, "POST", "/api/session", None).await;
    assert_eq!(status, StatusCode::CREATED);
}

#[tokio::test(flavor = "multi_thread")]
async fn missing_model_files_give_503() {
    let f = files();
    let mut cfg = config(&f, Duration::from_millis(50));
    cfg.model = Some(f.root.join("absent.json"));
    let (_, app) = app(cfg);
    let (status, body) = post(&app, "/api/session", json!({})).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert!(body["error"].as_str().unwrap().contains("absent.json"));
    let (_, app) = app_without_files();
    assert_eq!(post(&app, "/api/session", json!({})).await.0, StatusCode::SERVICE_UNAVAILABLE);
}

fn app_without_files() -> (Arc<AppState>, Router) {
    app(ServiceConfig::default())
}

#[tokio::test(flavor = "multi_thread")]
async fn restart_gives_identical_initial_state() {
    let f = files();
    let mut views = Vec::new();
    for _ in 0..2 {
        let (_, app) = app(config(&f, Duration::from_millis(50)));
        let id = session(&app).await;
        let (status, v) = call(&app, "GET", &format!("/api/session/{id}/routes"), None).await;
        assert_eq!(status, StatusCode::OK);
        views.push(v);
    }
    assert_eq!(views[0], views[1]);
    let s = snapshot(&views[0]);
    assert!(s.routes.is_empty());
    assert_eq!(s.cost, 0);
    assert_eq!(s.epoch, 0);
}

#[tokio::test(flavor = "multi_thread")]
async fn unknown_session_is_404() {
    let f = files();
    let (_, app) = app(config(&f, Duration::from_millis(50)));
    let dm = DemandModel::load(&f.demand).unwrap();
    assert_eq!(call(&app, "GET", "/api/session/nope/routes", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&app, "GET", "/api/session/nope", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&app, "GET", "/api/session/nope/events", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(post(&app, "/api/session/nope/request", trip(&dm, 0)).await.0, StatusCode::NOT_FOUND);
    assert_eq!(post(&app, "/api/session/nope/confirm", json!({"index": 0})).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread")]
async fn request_validation() {
    let f = files();
    let (_, app) = app(config(&f, Duration::from_millis(50)));
    let dm = DemandModel::load(&f.demand).unwrap();
    let id = session(&app).await;
    let uri = format!("/api/session/{id}/request");
    assert_eq!(call(&app, "POST", &uri, Some("{not json")).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(post(&app, &uri, json!({"pickup": {"lat": 1.0, "lon": 2.0}})).await.0, StatusCode::BAD_REQUEST);
    let mut short = trip(&dm, 0);
    short["broad_window"] = json!({"start": 36000, "end": 36000 + 1700});
    assert_eq!(post(&app, &uri, short).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    let mut crowded = trip(&dm, 0);
    crowded["passengers"] = json!(10);
    assert_eq!(post(&app, &uri, crowded).await.0, StatusCode::UNPROCESSABLE_ENTITY);

    let (status, proposal) = post(&app, &uri, trip(&dm, 0)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(post(&app, &uri, trip(&dm, 1)).await.0, StatusCode::CONFLICT);
    assert_eq!(proposal["trip"], 1);
}

#[tokio::test(flavor = "multi_thread")]
async fn confirm_validation() {
    let f = files();
    let (_, app) = app(config(&f, Duration::from_millis(50)));
    let dm = DemandModel::load(&f.demand).unwrap();
    let id = session(&app).await;
    let confirm = format!("/api/session/{id}/confirm");
    assert_eq!(post(&app, &confirm, json!({"index": 0})).await.0, StatusCode::CONFLICT);
    let body = trip(&dm, 2);
    let start = body["broad_window"]["start"].as_i64().unwrap();
    assert_eq!(post(&app, &format!("/api/session/{id}/request"), body).await.0, StatusCode::OK);
    assert_eq!(call(&app, "POST", &confirm, Some("\"x\"")).await.0, StatusCode::BAD_REQUEST);
    for bad in [json!({"start": start + 60}), json!({"start": start - 900}), json!({"start": start + 3 * 3600}), json!({"index": 99}), json!({})] {
        assert_eq!(post(&app, &confirm, bad).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    }
    let (status, c) = post(&app, &confirm, json!({"start": start + 9000})).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(c["window"], json!({"start": start + 9000, "end": start + 10800}));
}

/// The library's view of the session just before the next request.
struct Mirror {
    locations: Vec<Location>,
    requests: Vec<TripRequest>,
    windows: Vec<TimeWindow>,
}

impl Mirror {
    fn new(dm: &DemandModel) -> Self {
        let (lat, lon) = dm.centroid().unwrap();
        Self { locations: vec![Location { id: 0, lat, lon, area: "depot".into() }], requests: Vec::new(), windows: Vec::new() }
    }

    fn push(&mut self, dm: &DemandModel, body: &Value) {
        let k = self.requests.len();
        for (i, key) in ["pickup", "dropoff"].iter().enumerate() {
            let (lat, lon) = (body[key]["lat"].as_f64().unwrap(), body[key]["lon"].as_f64().unwrap());
            self.locations.push(Location { id: 1 + 2 * k + i, lat, lon, area: dm.scheme.area(lat, lon, None) });
        }
        self.requests.push(TripRequest {
            id: k as u32 + 1,
            pickup: 1 + 2 * k,
            dropoff: 2 + 2 * k,
            passengers: body["passengers"].as_u64().unwrap() as u32,
            booking_instant: body["booking_instant"].as_i64().unwrap(),
            broad_window: serde_json::from_value(body["broad_window"].clone()).unwrap(),
        });
    }

    fn state(&self, routes: Solution) -> BookingState {
        let mut s = BookingState::new(DayClass::Weekday);
        s.requests = self.requests.clone();
        s.windows = self.windows.clone();
        s.routes = routes;
        s
    }
}

fn routes_of(s: &SessionSnapshot) -> Solution {
    Solution::new(s.routes.iter().map(|r| Route::new(r.stops.clone())).collect())
}

async fn settled(app: &Router, id: &str) -> SessionSnapshot {
    let started = Instant::now();
    loop {
        let (_, v) = call(app, "GET", &format!("/api/session/{id}/routes"), None).await;
        let s = snapshot(&v);
        if s.status == paraflex::service::SolverStatus::Idle || started.elapsed() > Duration::from_secs(10) {
            return s;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn proposals_match_the_library_decision() {
    let f = files();
    let (_, app) = app(config(&f, Duration::from_millis(30)));
    let dm = DemandModel::load(&f.demand).unwrap();
    let net = ValueNet::load(&f.model).unwrap();
    let cfg = ProblemConfig::default();
    let gp = GreedyParams::default();
    let id = session(&app).await;
    let mut mirror = Mirror::new(&dm);
    for k in 0..8 {
        let before = settled(&app, &id).await;
        assert_eq!(before.epoch, k);
        let body = trip(&dm, k);
        mirror.push(&dm, &body);
        let (status, p) = post(&app, &format!("/api/session/{id}/request"), body).await;
        assert_eq!(status, StatusCode::OK);
        let cands = p["candidates"].as_array().unwrap();
        assert_eq!(cands.len(), 11, "3 h window at the default grid");
        let scores: Vec<f64> = cands.iter().map(|c| c["q_score"].as_f64().unwrap()).collect();
        assert!(scores.windows(2).all(|w| w[0] <= w[1]));
        let rec = p["recommended"].as_u64().unwrap() as usize;

        let m = TravelTimeMatrix::from_locations(&mirror.locations, paraflex_core::model::URBAN_SPEED_KMH);
        let ctx = DecisionContext { cfg: &cfg, matrix: &m, locations: &mirror.locations, demand: &dm, greedy: &gp };
        let state = mirror.state(routes_of(&before));
        let d = decide(&net, &state, &ctx).unwrap();
        let expected: TimeWindow = d.choice().window;
        assert_eq!(serde_json::from_value::<TimeWindow>(cands[rec]["window"].clone()).unwrap(), expected);
        for (i, c) in cands.iter().enumerate() {
            let w: TimeWindow = serde_json::from_value(c["window"].clone()).unwrap();
            let lib = d.candidates.iter().position(|x| x.window == w).unwrap();
            assert_eq!(c["q_score"].as_f64().unwrap(), d.scores[lib], "candidate {i}");
        }

        // Alternate between the recommendation and a custom grid start.
        let choice = if k % 2 == 0 { json!({"index": rec}) } else { cands[(rec + 3) % cands.len()]["window"]["start"].clone() };
        let choice = if k % 2 == 0 { choice } else { json!({"start": choice}) };
        let (status, c) = post(&app, &format!("/api/session/{id}/confirm"), choice).await;
        assert_eq!(status, StatusCode::OK);
        let w: TimeWindow = serde_json::from_value(c["window"].clone()).unwrap();
        let lib = candidate_for(&state, w, &ctx).unwrap();
        assert_eq!(c["routes"].as_u64().unwrap() as usize, lib.plan.routes.len());
        assert_eq!(c["cost"].as_i64().unwrap(), paraflex_core::solution_cost(&lib.plan, &cfg, &m).unwrap());
        mirror.windows.push(w);
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn confirmed_routes_and_annealing() {
    let f = files();
    let (_, app) = app(config(&f, Duration::from_secs(2)));
    let dm = DemandModel::load(&f.demand).unwrap();
    let id = session(&app).await;
    let routes = format!("/api/session/{id}/routes");
    for k in 0..12 {
        let (status, p) = post(&app, &format!("/api/session/{id}/request"), trip(&dm, k)).await;
        assert_eq!(status, StatusCode::OK);
        assert!(p["worker_overrun"].as_u64().unwrap() <= 1, "worker stopped within one iteration");
        let rec = p["recommended"].clone();
        let plan_cost = p["candidates"][rec.as_u64().unwrap() as usize]["plan_summary"]["cost"].as_i64().unwrap();
        let (_, c) = post(&app, &format!("/api/session/{id}/confirm"), json!({"index": rec})).await;
        assert_eq!(c["cost"].as_i64().unwrap(), plan_cost);
        if k == 0 {
            assert_eq!(c["routes"], 1);
        }
        tokio::time::sleep(Duration::from_millis(30)).await;
        let s = snapshot(&call(&app, "GET", &routes, None).await.1);
        assert_eq!(s.epoch, k + 1);
        assert!(s.cost <= plan_cost);
        let served: usize = s.routes.iter().map(|r| r.stops.len()).sum();
        assert_eq!(served, 2 * (k + 1));
    }
}

/// Parses `event:`/`data:` frames from an event stream for `span`.
async fn collect_events(body: Body, span: Duration) -> Vec<(Instant, SessionSnapshot)> {
    let mut body = body;
    let mut buf = String::new();
    let mut out = Vec::new();
    let deadline = tokio::time::Instant::now() + span;
    while let Ok(Some(Ok(frame))) = tokio::time::timeout_at(deadline, body.frame()).await {
        let Some(data) = frame.data_ref() else { continue };
        buf.push_str(std::str::from_utf8(data).unwrap());
        while let Some(end) = buf.find("\n\n") {
            let block: String = buf.drain(..end + 2).collect();
            if let Some(line) = block.lines().find_map(|l| l.strip_prefix("data:")) {
                out.push((Instant::now(), serde_json::from_str(line.trim()).unwrap()));
            }
        }
    }
    out
}

#[tokio::test(flavor = "multi_thread")]
async fn event_costs_never_rise_between_confirms() {
    let f = files();
    let (_, app) = app(config(&f, Duration::from_secs(3)));
    let dm = DemandModel::load(&f.demand).unwrap();
    let id = session(&app).await;
    let req = Request::builder().uri(format!("/api/session/{id}/events")).body(Body::empty()).unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    assert_eq!(res.status(), StatusCode::OK);
    assert_eq!(res.headers()["content-type"], "text/event-stream");
    let reader = tokio::spawn(collect_events(res.into_body(), Duration::from_secs(6)));
    for k in 0..16 {
        let (_, p) = post(&app, &format!("/api/session/{id}/request"), trip(&dm, k)).await;
        post(&app, &format!("/api/session/{id}/confirm"), json!({"index": p["recommended"]})).await;
        tokio::time::sleep(Duration::from_millis(150)).await;
    }
    let events = reader.await.unwrap();
    assert!(events.len() >= 3, "{} events", events.len());
    assert_eq!(events[0].1.epoch, 0);
    for pair in events.windows(2) {
        let ((t0, a), (t1, b)) = (&pair[0], &pair[1]);
        assert!(b.epoch >= a.epoch);
        if a.epoch == b.epoch {
            assert!(b.cost <= a.cost, "cost rose within epoch {}: {} -> {}", a.epoch, a.cost, b.cost);
        }
        // Frames are sent at least 500 ms apart; allow for scheduling jitter on receipt.
        assert!(t1.duration_since(*t0) >= Duration::from_millis(400));
    }
    assert_eq!(events.last().unwrap().1.epoch, 16);
}

#[tokio::test(flavor = "multi_thread")]
async fn journal_replays_confirmed_bookings() {
    let f = files();
    let journal = f.root.join("journal.jsonl");
    let mut cfg = config(&f, Duration::from_millis(20));
    cfg.journal = Some(journal.clone());
    let dm = DemandModel::load(&f.demand).unwrap();
    let id;
    let windows: Vec<Value>;
    {
        let (state, app) = app(cfg.clone());
        id = session(&app).await;
        for k in 0..3 {
            let (_, p) = post(&app, &format!("/api/session/{id}/request"), trip(&dm, k)).await;
            post(&app, &format!("/api/session/{id}/confirm"), json!({"index": p["recommended"]})).await;
        }
        let s = settled(&app, &id).await;
        windows = s.routes.iter().map(|r| json!(r.stops.len())).collect();
        assert_eq!(s.epoch, 3);
        state.shutdown();
    }
    let (_, app) = app(cfg);
    let s = settled(&app, &id).await;
    assert_eq!(s.epoch, 3);
    let served: usize = s.routes.iter().map(|r| r.stops.len()).sum();
    assert_eq!(served, 6);
    assert!(!windows.is_empty());
    assert_ne!(session(&app).await, id);
    let lines = std::fs::read_to_string(&journal).unwrap();
    assert_eq!(lines.lines().count(), 5);
}

#[tokio::test(flavor = "multi_thread")]
async fn static_files_are_served() {
    let f = files();
    let dist = f.root.join("dist");
    std::fs::create_dir(&dist).unwrap();
    std::fs::write(dist.join("index.html"), "<html>console</html>").unwrap();
    let mut cfg = config(&f, Duration::from_millis(20));
    cfg.static_dir = Some(dist);
    let (_, app) = app(cfg);
    let res = app.clone().oneshot(Request::builder().uri("/").body(Body::empty()).unwrap()).await.unwrap();
    assert_eq!(res.status(), StatusCode::OK);
    let body = res.into_body().collect().await.unwrap().to_bytes();
    assert_eq!(&body[..], b"<html>console</html>");
    assert_eq!(session(&app).await, "s1");
}
