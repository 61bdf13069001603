//! HTTP service for live booking sessions.
//!
//! Routes, all JSON:
//!
//! | method | path | body | success |
//! |---|---|---|---|
//! | POST | `/api/session` | [`SessionParams`] (optional) | 201, `{"id": ...}` |
//! | GET | `/api/session/{id}` | | 200, [`SessionSnapshot`] |
//! | POST | `/api/session/{id}/request` | [`RequestBody`] | 200, [`Proposal`] |
//! | POST | `/api/session/{id}/confirm` | [`ConfirmBody`] | 200, [`Confirmation`] |
//! | GET | `/api/session/{id}/routes` | | 200, [`SessionSnapshot`] |
//! | GET | `/api/session/{id}/events` | | server-sent `snapshot` events |
//!
//! Errors carry `{"error": message}` with status 400 (malformed body), 404
//! (unknown session), 409 (proposal already pending, or none to confirm),
//! 422 (unusable request or start) or 503 (model files missing).

pub mod journal;
pub mod session;

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use axum::extract::rejection::JsonRejection;
use axum::extract::{FromRequest, Path, Request, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use paraflex_core::demand::DemandModel;
use paraflex_core::policy::ValueNet;
use serde::de::DeserializeOwned;
use serde::Serialize;
use tokio::sync::broadcast;
use tower_http::services::ServeDir;

use journal::{Journal, JournalEntry};
pub use session::{
    Booking, CandidateView, ConfirmBody, Confirmation, Models, Place, Proposal, RequestBody, Session, SessionError,
    SessionParams, SessionSnapshot, Settings, SolverStatus,
};

/// Minimum spacing of events on one stream.
pub const EVENT_SPACING: Duration = Duration::from_millis(500);

#[derive(Debug, Clone, Default)]
pub struct ServiceConfig {
    pub model: Option<PathBuf>,
    pub demand: Option<PathBuf>,
    /// Directory served at `/` (the console bundle).
    pub static_dir: Option<PathBuf>,
    pub journal: Option<PathBuf>,
    pub settings: Settings,
}

pub struct AppState {
    config: ServiceConfig,
    settings: Arc<Settings>,
    models: Mutex<Option<Arc<Models>>>,
    sessions: RwLock<HashMap<String, Arc<Session>>>,
    next_id: AtomicU64,
    journal: Option<Journal>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }

    fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("no session {id}"))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let status = match e {
            SessionError::Conflict(_) => StatusCode::CONFLICT,
            SessionError::Unprocessable(_) => StatusCode::UNPROCESSABLE_ENTITY,
            SessionError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

/// JSON body whose every rejection is a 400.
pub struct Body<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for Body<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(Body(v)),
            Err(e) => Err(ApiError::new(StatusCode::BAD_REQUEST, rejection_text(&e))),
        }
    }
}

fn rejection_text(e: &JsonRejection) -> String {
    e.body_text()
}

impl AppState {
    pub fn new(config: ServiceConfig) -> anyhow::Result<Arc<Self>> {
        let journal = config.journal.as_ref().map(Journal::open).transpose()?;
        let state = Arc::new(Self {
            settings: Arc::new(config.settings.clone()),
            config,
            models: Mutex::new(None),
            sessions: RwLock::new(HashMap::new()),
            next_id: AtomicU64::new(1),
            journal,
        });
        if let Some(path) = &state.config.journal {
            if let Err(e) = state.replay(&journal::read(path)?) {
                tracing::warn!("journal not replayed: {}", e.message);
            }
        }
        Ok(state)
    }

    /// Loads the model files on first use; later calls reuse them.
    fn models(&self) -> Result<Arc<Models>, ApiError> {
        let mut slot = self.models.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(m) = slot.as_ref() {
            return Ok(Arc::clone(m));
        }
        let unavailable = |what: &str| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, what.to_string());
        let model = self.config.model.as_ref().ok_or_else(|| unavailable("no value network file configured"))?;
        let demand = self.config.demand.as_ref().ok_or_else(|| unavailable("no demand model file configured"))?;
        let net = ValueNet::load(model)
            .map_err(|e| unavailable(&format!("cannot load value network {}: {e}", model.display())))?;
        let demand = DemandModel::load(demand)
            .map_err(|e| unavailable(&format!("cannot load demand model {}: {e}", demand.display())))?;
        let models = Arc::new(Models { net, demand });
        *slot = Some(Arc::clone(&models));
        Ok(models)
    }

    fn session(&self, id: &str) -> Result<Arc<Session>, ApiError> {
        self.sessions
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(id))
    }

    pub fn create_session(&self, params: SessionParams) -> Result<Arc<Session>, ApiError> {
        let models = self.models()?;
        let id = format!("s{}", self.next_id.fetch_add(1, Ordering::SeqCst));
        let session = Arc::new(Session::new(id.clone(), params.clone(), models, Arc::clone(&self.settings))?);
        self.sessions.write().unwrap_or_else(|p| p.into_inner()).insert(id.clone(), Arc::clone(&session));
        self.record(JournalEntry::Create { session: id, params });
        Ok(session)
    }

    fn record(&self, entry: JournalEntry) {
        if let Some(j) = &self.journal {
            if let Err(e) = j.append(&entry) {
                tracing::error!("journal write failed: {e}");
            }
        }
    }

    fn replay(&self, entries: &[JournalEntry]) -> Result<(), ApiError> {
        if entries.is_empty() {
            return Ok(());
        }
        let models = self.models()?;
        let mut max_id = 0;
        for entry in entries {
            match entry {
                JournalEntry::Create { session, params } => {
                    let s = Session::new(session.clone(), params.clone(), Arc::clone(&models), Arc::clone(&self.settings))?;
                    self.sessions.write().unwrap_or_else(|p| p.into_inner()).insert(session.clone(), Arc::new(s));
                    if let Some(n) = session.strip_prefix('s').and_then(|n| n.parse::<u64>().ok()) {
                        max_id = max_id.max(n);
                    }
                }
                JournalEntry::Confirm { session, booking } => {
                    self.session(session)?.replay(booking.clone())?;
                }
            }
        }
        self.next_id.store(max_id + 1, Ordering::SeqCst);
        Ok(())
    }

    /// Stops every anytime worker.
    pub fn shutdown(&self) {
        for s in self.sessions.read().unwrap_or_else(|p| p.into_inner()).values() {
            s.shutdown();
        }
    }
}

#[derive(Serialize)]
struct Created {
    id: String,
}

async fn create(State(app): State<Arc<AppState>>, body: axum::body::Bytes) -> Result<impl IntoResponse, ApiError> {
    let params: SessionParams = if body.iter().all(u8::is_ascii_whitespace) {
        SessionParams::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?
    };
    let session = tokio::task::spawn_blocking(move || app.create_session(params))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok((StatusCode::CREATED, Json(Created { id: session.id.clone() })))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

async fn request(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Body(body): Body<RequestBody>,
) -> Result<Json<Proposal>, ApiError> {
    let session = app.session(&id)?;
    blocking(move || Ok(session.propose(body)?)).await.map(Json)
}

async fn confirm(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Body(body): Body<ConfirmBody>,
) -> Result<Json<Confirmation>, ApiError> {
    let session = app.session(&id)?;
    let app2 = Arc::clone(&app);
    blocking(move || {
        let c = session.confirm(body)?;
        if let Some(booking) = session.bookings().pop() {
            app2.record(JournalEntry::Confirm { session: session.id.clone(), booking });
        }
        Ok(c)
    })
    .await
    .map(Json)
}

async fn routes(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<SessionSnapshot>, ApiError> {
    let session = app.session(&id)?;
    blocking(move || Ok(session.snapshot())).await.map(Json)
}

/// Snapshot events, at most one per [`EVENT_SPACING`]; when several arrive
/// inside one interval only the newest is sent.
fn event_stream(
    first: SessionSnapshot,
    rx: broadcast::Receiver<SessionSnapshot>,
) -> impl Stream<Item = Result<Event, std::convert::Infallible>> {
    let event = |s: &SessionSnapshot| Event::default().event("snapshot").json_data(s).expect("snapshots serialize");
    let start = futures::stream::once(std::future::ready(Ok(event(&first))));
    let rest = futures::stream::unfold((rx, tokio::time::Instant::now()), move |(mut rx, last)| async move {
        let mut next = loop {
            match rx.recv().await {
                Ok(s) => break s,
                Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        };
        tokio::time::sleep_until(last + EVENT_SPACING).await;
        loop {
            match rx.try_recv() {
                Ok(s) => next = s,
                Err(broadcast::error::TryRecvError::Lagged(_)) => continue,
                Err(_) => break,
            }
        }
        Some((Ok(event(&next)), (rx, tokio::time::Instant::now())))
    });
    futures::StreamExt::chain(start, rest)
}

async fn events(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    let session = app.session(&id)?;
    let rx = session.subscribe();
    let first = blocking(move || Ok(session.snapshot())).await?;
    Ok(Sse::new(event_stream(first, rx)).keep_alive(KeepAlive::default()))
}

pub fn router(app: Arc<AppState>) -> Router {
    let api = Router::new()
        .route("/session", post(create))
        .route("/session/{id}", get(routes))
        .route("/session/{id}/request", post(request))
        .route("/session/{id}/confirm", post(confirm))
        .route("/session/{id}/routes", get(routes))
        .route("/session/{id}/events", get(events));
    let router = Router::new().nest("/api", api);
    let router = match &app.config.static_dir {
        Some(dir) => router.fallback_service(ServeDir::new(dir)),
        None => router,
    };
    router.with_state(app)
}

/// Serves until the process is interrupted.
pub async fn serve(config: ServiceConfig, addr: std::net::SocketAddr) -> anyhow::Result<()> {
    let app = AppState::new(config)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on http://{}", listener.local_addr()?);
    let shutdown = Arc::clone(&app);
    axum::serve(listener, router(app))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    shutdown.shutdown();
    Ok(())
}
