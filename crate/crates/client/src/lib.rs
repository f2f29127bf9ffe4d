//! Thin blocking client for the decaytherm service.

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use decaytherm_api::*;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("transport error: {0}")]
    Transport(#[from] reqwest::Error),
    /// The service rejected the request; carries the typed error body.
    #[error("{} error from service: {}", .0.kind, .0.message)]
    Api(ApiError),
}

impl ClientError {
    /// Exit code for the CLI contract (2 config, 3 insufficient data,
    /// 4 refusal, 1 otherwise).
    pub fn exit_code(&self) -> i32 {
        match self {
            ClientError::Transport(_) => 1,
            ClientError::Api(e) => e.exit_code(),
        }
    }
}

pub type ClientResult<T> = Result<T, ClientError>;

/// Blocking HTTP client bound to one service base URL.
pub struct ServiceClient {
    base_url: String,
    http: reqwest::blocking::Client,
}

impl ServiceClient {
    pub fn new(base_url: &str) -> ServiceClient {
        ServiceClient {
            base_url: base_url.trim_end_matches('/').to_string(),
            http: reqwest::blocking::Client::builder()
                .timeout(std::time::Duration::from_secs(600))
                .build()
                .expect("client"),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    fn check<T: DeserializeOwned>(resp: reqwest::blocking::Response) -> ClientResult<T> {
        if resp.status().is_success() {
            Ok(resp.json()?)
        } else {
            let api: ApiError = resp.json()?;
            Err(ClientError::Api(api))
        }
    }

    fn post<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        path: &str,
        req: &Req,
    ) -> ClientResult<Resp> {
        let url = format!("{}{}", self.base_url, path);
        Self::check(self.http.post(url).json(req).send()?)
    }

    fn get<Resp: DeserializeOwned>(&self, path: &str) -> ClientResult<Resp> {
        let url = format!("{}{}", self.base_url, path);
        Self::check(self.http.get(url).send()?)
    }

    pub fn version(&self) -> ClientResult<VersionResponse> {
        self.get("/v1/version")
    }

    pub fn scenarios(&self) -> ClientResult<ScenarioListResponse> {
        self.get("/v1/scenarios")
    }

    pub fn simulate(&self, req: &SimulateRequest) -> ClientResult<SimulateResponse> {
        self.post("/v1/simulate", req)
    }

    pub fn enroll(&self, req: &EnrollRequest) -> ClientResult<EnrollResponse> {
        self.post("/v1/enroll", req)
    }

    pub fn sweep(&self, req: &SweepRequest) -> ClientResult<SweepResponse> {
        self.post("/v1/sweep", req)
    }

    pub fn estimate_k(&self, req: &EstimateKRequest) -> ClientResult<EstimateKResponse> {
        self.post("/v1/estimate-k", req)
    }

    pub fn fit_model(&self, req: &FitModelRequest) -> ClientResult<FitModelResponse> {
        self.post("/v1/fit/model", req)
    }

    pub fn fit_indicators(
        &self,
        req: &FitIndicatorsRequest,
    ) -> ClientResult<FitIndicatorsResponse> {
        self.post("/v1/fit/indicators", req)
    }

    pub fn decode(&self, req: &DecodeRequest) -> ClientResult<DecodeResponse> {
        self.post("/v1/decode", req)
    }

    pub fn scenario_run(&self, req: &ScenarioRunRequest) -> ClientResult<ScenarioRunResponse> {
        self.post("/v1/scenario/run", req)
    }

    pub fn defense_eval(&self, req: &DefenseEvalRequest) -> ClientResult<DefenseEvalResponse> {
        self.post("/v1/defense/evaluate", req)
    }
}
