#![allow(dead_code)]

use std::collections::{HashMap, HashSet};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use parking_lot::{Condvar, Mutex};
use provbase::config::{Config, UserEntry};
use provbase::kernel::Kernel;
use provbase::orchestrator::{Executor, Job, JobResult, SimExecutor};
use provbase_gateway::api::router;
use provbase_gateway::App;
use serde_json::Value;
use tower::ServiceExt;

pub const ALICE: &str = "alice-token";
pub const BOB: &str = "bob-token";

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

pub fn config() -> Config {
    let mut c = Config::default();
    c.auth.users = [("alice", ALICE), ("bob", BOB)]
        .into_iter()
        .map(|(id, token)| UserEntry {
            id: id.into(),
            name: id.to_uppercase(),
            token: token.into(),
        })
        .collect();
    c
}

pub struct Harness {
    pub app: Arc<App>,
    pub router: Router,
}

impl Harness {
    pub fn new(executor: Arc<dyn Executor>) -> Self {
        let app = App::new(config(), Arc::new(Kernel::in_memory()), executor);
        Harness {
            router: router(app.clone()),
            app,
        }
    }

    pub fn sim() -> Self {
        Self::new(Arc::new(SimExecutor::new(3, 0.0)))
    }

    pub async fn raw(
        &self,
        method: Method,
        path: &str,
        token: Option<&str>,
        body: Option<String>,
    ) -> (StatusCode, Vec<u8>) {
        let mut req = Request::builder().method(method).uri(path);
        if let Some(t) = token {
            req = req.header(header::AUTHORIZATION, format!("Bearer {t}"));
        }
        if body.is_some() {
            req = req.header(header::CONTENT_TYPE, "application/json");
        }
        let req = req.body(Body::from(body.unwrap_or_default())).unwrap();
        let resp = self.router.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        (
            status,
            resp.into_body()
                .collect()
                .await
                .unwrap()
                .to_bytes()
                .to_vec(),
        )
    }

    pub async fn call(
        &self,
        method: Method,
        path: &str,
        token: &str,
        body: Option<Value>,
    ) -> (StatusCode, Value) {
        let (status, bytes) = self
            .raw(method, path, Some(token), body.map(|b| b.to_string()))
            .await;
        let v = if bytes.is_empty() {
            Value::Null
        } else {
            serde_json::from_slice(&bytes).unwrap()
        };
        (status, v)
    }

    pub async fn get(&self, path: &str, token: &str) -> (StatusCode, Value) {
        self.call(Method::GET, path, token, None).await
    }

    pub async fn post(&self, path: &str, token: &str, body: Value) -> (StatusCode, Value) {
        self.call(Method::POST, path, token, Some(body)).await
    }

    /// Polls until the analysis is terminal and its run has wound down.
    pub async fn wait_terminal(&self, id: &str, token: &str) -> Value {
        let deadline = Instant::now() + Duration::from_secs(30);
        loop {
            let (status, v) = self.get(&format!("/api/v1/analyses/{id}"), token).await;
            assert_eq!(status, StatusCode::OK, "{v}");
            let state = v["state"].as_str().unwrap();
            if !matches!(state, "Defined" | "Running") && v["active"] == false {
                return v;
            }
            assert!(Instant::now() < deadline, "analysis {id} stuck in {state}");
            tokio::time::sleep(Duration::from_millis(10)).await;
        }
    }
}

#[derive(Default)]
struct GateState {
    closed: HashSet<String>,
    arrived: HashMap<String, usize>,
}

/// Holds back jobs of chosen steps until released.
pub struct Gate {
    inner: SimExecutor,
    state: Mutex<GateState>,
    cv: Condvar,
}

impl Gate {
    pub fn new(closed: &[&str]) -> Arc<Self> {
        let state = GateState {
            closed: closed.iter().map(|s| s.to_string()).collect(),
            ..Default::default()
        };
        Arc::new(Gate {
            inner: SimExecutor::new(5, 0.0).with_capacity(16),
            state: Mutex::new(state),
            cv: Condvar::new(),
        })
    }

    pub fn open(&self, step: &str) {
        self.state.lock().closed.remove(step);
        self.cv.notify_all();
    }

    /// Waits until `n` jobs of `step` have reached the executor.
    pub fn wait_for(&self, step: &str, n: usize) {
        let deadline = Instant::now() + Duration::from_secs(10);
        let mut st = self.state.lock();
        while st.arrived.get(step).copied().unwrap_or(0) < n {
            assert!(Instant::now() < deadline, "timed out waiting for {step}");
            self.cv.wait_for(&mut st, Duration::from_millis(20));
        }
    }
}

impl Executor for Gate {
    fn capacity(&self) -> usize {
        self.inner.capacity()
    }

    fn execute(&self, job: &Job) -> JobResult {
        let mut st = self.state.lock();
        *st.arrived.entry(job.step.clone()).or_default() += 1;
        self.cv.notify_all();
        while st.closed.contains(&job.step) {
            self.cv.wait(&mut st);
        }
        drop(st);
        self.inner.execute(job)
    }
}
