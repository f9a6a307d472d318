#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use mvforge_core::mvrank::MvTrainConfig;
use mvforge_core::neural::{BiLstmScorer, ModelBundle, ModelKind};
use mvforge_core::ranker::SingleTrainConfig;
use mvforge_server::{router, AppState, Models, ServerConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use tower::ServiceExt;

pub const BOUNDARY: &str = "mvforgeboundary";

pub const NINE_COLUMNS: &str = "\
region,product,month,sales,profit,units,rating,returned,store_id
North,Lamp,Jan,120.5,20.1,12,4.5,no,S1
South,Desk,Feb,340.0,-12.5,3,3.9,yes,S2
East,Chair,Mar,89.9,15.0,9,4.1,no,S3
West,Lamp,Apr,130.2,22.4,14,4.8,no,S4
North,Desk,May,310.7,5.6,4,3.2,yes,S5
South,Chair,Jun,95.1,18.3,11,4.0,no,S6
East,Lamp,Jul,142.8,25.9,15,4.6,no,S7
West,Desk,Aug,298.4,-3.1,2,2.9,yes,S8
North,Chair,Sep,101.6,16.7,10,4.2,no,S9
South,Lamp,Oct,125.3,21.0,13,4.4,no,S10
East,Desk,Nov,360.9,9.8,5,3.6,no,S11
West,Chair,Dec,88.0,14.2,8,3.8,yes,S12
";

pub fn models(seed: u64) -> Models {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let single_cfg = SingleTrainConfig {
        hidden_dim: 8,
        head_dims: vec![8, 1],
        type_head_dims: vec![8, 5],
        ..SingleTrainConfig::default()
    };
    let mv_cfg = MvTrainConfig {
        hidden_dim: 8,
        head_dims: vec![8, 1],
        ..MvTrainConfig::default()
    };
    let single = BiLstmScorer::random(single_cfg.scorer_config(), &mut rng).unwrap();
    let mv = BiLstmScorer::random(mv_cfg.scorer_config(), &mut rng).unwrap();
    Models::new(
        ModelBundle::new(ModelKind::SingleChart, single, 1.0, 0.5),
        ModelBundle::new(ModelKind::Mv, mv, 1.0, 0.0),
    )
    .unwrap()
}

pub fn config(data_dir: &Path) -> ServerConfig {
    ServerConfig {
        data_dir: data_dir.to_path_buf(),
        logical_clock: true,
        seed: 42,
        ..ServerConfig::default()
    }
}

pub struct Api {
    pub state: Arc<AppState>,
    pub app: Router,
    pub token: Option<String>,
}

impl Api {
    pub fn new(config: ServerConfig) -> Self {
        let state = AppState::new(config, models(1));
        Api {
            app: router(state.clone()),
            state,
            token: None,
        }
    }

    pub async fn raw(&self, req: Request<Body>) -> (StatusCode, Value) {
        let res = self.app.clone().oneshot(req).await.unwrap();
        let status = res.status();
        let bytes = res.into_body().collect().await.unwrap().to_bytes();
        let value = if bytes.is_empty() {
            Value::Null
        } else {
            serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
        };
        (status, value)
    }

    fn builder(&self, method: Method, uri: &str) -> axum::http::request::Builder {
        let b = Request::builder().method(method).uri(uri);
        match &self.token {
            Some(t) => b.header("authorization", format!("Bearer {t}")),
            None => b,
        }
    }

    pub async fn call(&self, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
        let b = self.builder(method, uri);
        let req = match body {
            Some(v) => b
                .header("content-type", "application/json")
                .body(Body::from(v.to_string()))
                .unwrap(),
            None => b.body(Body::empty()).unwrap(),
        };
        self.raw(req).await
    }

    pub async fn get(&self, uri: &str) -> (StatusCode, Value) {
        self.call(Method::GET, uri, None).await
    }

    pub async fn post(&self, uri: &str, body: Value) -> (StatusCode, Value) {
        self.call(Method::POST, uri, Some(body)).await
    }

    pub async fn upload(&self, name: &str, csv: &[u8]) -> (StatusCode, Value) {
        let mut body = format!(
            "--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"file\"; filename=\"{name}\"\r\nContent-Type: text/csv\r\n\r\n"
        )
        .into_bytes();
        body.extend_from_slice(csv);
        body.extend_from_slice(format!("\r\n--{BOUNDARY}--\r\n").as_bytes());
        let req = self
            .builder(Method::POST, "/api/datasets")
            .header("content-type", format!("multipart/form-data; boundary={BOUNDARY}"))
            .body(Body::from(body))
            .unwrap();
        self.raw(req).await
    }

    /// Uploads and returns the session id.
    pub async fn session(&self, csv: &str) -> String {
        let (status, body) = self.upload("t.csv", csv.as_bytes()).await;
        assert_eq!(status, StatusCode::CREATED, "{body}");
        body["session_id"].as_str().unwrap().to_string()
    }
}
