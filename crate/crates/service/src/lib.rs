//! HTTP/JSON service exposing the simulator and inference operations. The
//! CLI talks to this surface exclusively, either against a remote server or
//! an in-process instance on a loopback port.

pub mod ops;

use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};

use decaytherm_api::*;
use decaytherm_core::error::Error;

use crate::ops::ArrayCache;

pub const SERVICE_NAME: &str = "decaytherm-service";
pub const SERVICE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Default)]
pub struct AppState {
    pub arrays: ArrayCache,
}

struct ServiceError(Error);

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let body = ApiError::from_core(&self.0);
        let status = match body.kind.as_str() {
            "config" | "argument" | "range" | "parse" | "version" | "serialization" => {
                StatusCode::BAD_REQUEST
            }
            "insufficient-data" | "insufficient-candidates" | "undefined-ber"
            | "degenerate-calibration" => StatusCode::UNPROCESSABLE_ENTITY,
            "refused" => StatusCode::FORBIDDEN,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(body)).into_response()
    }
}

impl From<Error> for ServiceError {
    fn from(e: Error) -> Self {
        ServiceError(e)
    }
}

type Handler<T> = Result<Json<T>, ServiceError>;

/// Run a compute-heavy op off the async workers.
async fn blocking<T, F>(f: F) -> Handler<T>
where
    T: Send + 'static,
    F: FnOnce() -> decaytherm_core::error::Result<T> + Send + 'static,
{
    match tokio::task::spawn_blocking(f).await {
        Ok(Ok(v)) => Ok(Json(v)),
        Ok(Err(e)) => Err(ServiceError(e)),
        Err(join) => Err(ServiceError(Error::Argument(format!(
            "worker panicked: {join}"
        )))),
    }
}

async fn h_version() -> Json<VersionResponse> {
    Json(VersionResponse {
        name: SERVICE_NAME.to_string(),
        version: SERVICE_VERSION.to_string(),
    })
}

async fn h_scenarios() -> Json<ScenarioListResponse> {
    Json(ops::op_scenario_list())
}

async fn h_simulate(
    State(state): State<Arc<AppState>>,
    Json(req): Json<SimulateRequest>,
) -> Handler<SimulateResponse> {
    blocking(move || ops::op_simulate(&state.arrays, &req)).await
}

async fn h_enroll(
    State(state): State<Arc<AppState>>,
    Json(req): Json<EnrollRequest>,
) -> Handler<EnrollResponse> {
    blocking(move || ops::op_enroll(&state.arrays, &req)).await
}

async fn h_sweep(
    State(state): State<Arc<AppState>>,
    Json(req): Json<SweepRequest>,
) -> Handler<SweepResponse> {
    blocking(move || ops::op_sweep(&state.arrays, &req)).await
}

async fn h_estimate_k(Json(req): Json<EstimateKRequest>) -> Handler<EstimateKResponse> {
    blocking(move || ops::op_estimate_k(&req)).await
}

async fn h_fit_model(Json(req): Json<FitModelRequest>) -> Handler<FitModelResponse> {
    blocking(move || ops::op_fit_model(&req)).await
}

async fn h_fit_indicators(
    Json(req): Json<FitIndicatorsRequest>,
) -> Handler<FitIndicatorsResponse> {
    blocking(move || ops::op_fit_indicators(&req)).await
}

async fn h_decode(Json(req): Json<DecodeRequest>) -> Handler<DecodeResponse> {
    blocking(move || ops::op_decode(&req)).await
}

async fn h_scenario_run(
    State(state): State<Arc<AppState>>,
    Json(req): Json<ScenarioRunRequest>,
) -> Handler<ScenarioRunResponse> {
    blocking(move || ops::op_scenario_run(&state.arrays, &req)).await
}

async fn h_defense_eval(
    State(state): State<Arc<AppState>>,
    Json(req): Json<DefenseEvalRequest>,
) -> Handler<DefenseEvalResponse> {
    blocking(move || ops::op_defense_eval(&state.arrays, &req)).await
}

/// The full API router.
pub fn router() -> Router {
    Router::new()
        .route("/v1/version", get(h_version))
        .route("/v1/scenarios", get(h_scenarios))
        .route("/v1/simulate", post(h_simulate))
        .route("/v1/enroll", post(h_enroll))
        .route("/v1/sweep", post(h_sweep))
        .route("/v1/estimate-k", post(h_estimate_k))
        .route("/v1/fit/model", post(h_fit_model))
        .route("/v1/fit/indicators", post(h_fit_indicators))
        .route("/v1/decode", post(h_decode))
        .route("/v1/scenario/run", post(h_scenario_run))
        .route("/v1/defense/evaluate", post(h_defense_eval))
        .with_state(Arc::new(AppState::default()))
}

/// Serve forever on the given address (the `decaythermd` entry point).
pub async fn serve(addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("decaythermd listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router()).await
}

/// An in-process service on an ephemeral loopback port, used by the CLI
/// when no `--server` is given. Shuts down when dropped.
pub struct LocalService {
    pub base_url: String,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl LocalService {
    pub fn spawn() -> std::io::Result<LocalService> {
        let std_listener = std::net::TcpListener::bind("127.0.0.1:0")?;
        std_listener.set_nonblocking(true)?;
        let addr = std_listener.local_addr()?;
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let thread = std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread()
                .worker_threads(2)
                .enable_all()
                .build()
                .expect("runtime");
            rt.block_on(async move {
                let listener =
                    tokio::net::TcpListener::from_std(std_listener).expect("listener");
                axum::serve(listener, router())
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await
                    .expect("serve");
            });
        });
        Ok(LocalService {
            base_url: format!("http://{addr}"),
            shutdown: Some(tx),
            thread: Some(thread),
        })
    }
}

impl Drop for LocalService {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
