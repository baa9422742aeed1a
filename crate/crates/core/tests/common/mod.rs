#![allow(dead_code)]

pub mod fixture;
pub mod gen;
pub mod oracle;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use provbase::kernel::{ActorRef, ItemId, Kernel};
use provbase::model::{
    AnalysisRequest, DataElementSpec, DatasetSpec, ParamSpec, ParamType, PipelineSpec, Registry,
    StepSpec,
};
use provbase::orchestrator::{
    Executor, Job, JobResult, Orchestrator, OrchestratorSettings, SimExecutor,
};
use serde_json::json;

pub fn alice() -> ActorRef {
    ActorRef::new("alice", "Alice")
}

pub fn bob() -> ActorRef {
    ActorRef::new("bob", "Bob")
}

pub fn linear(name: &str, steps: usize) -> PipelineSpec {
    let steps = (0..steps)
        .map(|i| {
            let s = StepSpec::new(format!("s{i}"), format!("bin/s{i}.sh"));
            if i == 0 {
                s
            } else {
                s.after(format!("s{}", i - 1))
            }
        })
        .collect();
    PipelineSpec {
        name: name.into(),
        steps,
        default_env: Default::default(),
        common_dirs: vec![],
        param_schema: vec![ParamSpec {
            name: "iters".into(),
            ty: ParamType::Integer,
            default: Some(json!(1)),
            required: false,
        }],
    }
}

pub fn dataset(name: &str, n: usize) -> DatasetSpec {
    DatasetSpec {
        name: name.into(),
        schema_note: "subjects".into(),
        elements: (0..n)
            .map(|i| DataElementSpec {
                files: vec![format!("lfn://data/{name}/{i}.mnc")],
                metadata: [
                    ("subject".to_string(), json!(format!("S{i:03}"))),
                    ("age".to_string(), json!(60 + (i % 30))),
                ]
                .into_iter()
                .collect(),
            })
            .collect(),
    }
}

pub struct World {
    pub kernel: Arc<Kernel>,
    pub registry: Registry,
}

impl World {
    pub fn new() -> Self {
        let kernel = Arc::new(Kernel::in_memory());
        World {
            registry: Registry::new(kernel.clone()),
            kernel,
        }
    }

    pub fn with_kernel(kernel: Kernel) -> Self {
        let kernel = Arc::new(kernel);
        World {
            registry: Registry::new(kernel.clone()),
            kernel,
        }
    }

    pub fn orchestrator(&self, exec: Arc<dyn Executor>) -> Orchestrator {
        Orchestrator::new(self.kernel.clone(), exec, OrchestratorSettings::default())
    }

    pub fn sim(&self, seed: u64, p: f64) -> Orchestrator {
        self.orchestrator(Arc::new(
            SimExecutor::new(seed, p).with_clock(self.kernel.clock().clone()),
        ))
    }

    /// Registers a pipeline and dataset and defines an analysis over all elements.
    pub fn analysis(&self, pipeline: &PipelineSpec, n: usize, owner: &ActorRef) -> ItemId {
        let (p, _) = self
            .registry
            .register_pipeline(pipeline, owner, "setup")
            .unwrap();
        let ds = self
            .registry
            .register_dataset(&dataset("ds", n), owner, "setup")
            .unwrap();
        let elements = self.registry.dataset(ds).unwrap().elements;
        self.registry
            .create_analysis(
                &AnalysisRequest {
                    pipeline: p,
                    version: None,
                    dataset: ds,
                    element_ids: elements,
                    overrides: Default::default(),
                    post_processing: None,
                },
                owner,
            )
            .unwrap()
    }
}

/// Counts jobs crossing the executor boundary.
pub struct Counting {
    pub inner: Arc<dyn Executor>,
    pub dispatched: AtomicUsize,
}

impl Counting {
    pub fn new(inner: Arc<dyn Executor>) -> Arc<Self> {
        Arc::new(Counting {
            inner,
            dispatched: AtomicUsize::new(0),
        })
    }

    pub fn count(&self) -> usize {
        self.dispatched.load(Ordering::SeqCst)
    }
}

impl Executor for Counting {
    fn capacity(&self) -> usize {
        self.inner.capacity()
    }

    fn execute(&self, job: &Job) -> JobResult {
        self.dispatched.fetch_add(1, Ordering::SeqCst);
        self.inner.execute(job)
    }
}

/// Holds jobs of closed steps until the step is opened.
pub struct Gated {
    pub inner: Arc<dyn Executor>,
    closed: parking_lot::Mutex<std::collections::HashSet<String>>,
    cv: parking_lot::Condvar,
    pub seen: parking_lot::Mutex<Vec<Job>>,
}

impl Gated {
    pub fn new(inner: Arc<dyn Executor>, closed: &[&str]) -> Arc<Self> {
        Arc::new(Gated {
            inner,
            closed: parking_lot::Mutex::new(closed.iter().map(|s| s.to_string()).collect()),
            cv: parking_lot::Condvar::new(),
            seen: parking_lot::Mutex::new(Vec::new()),
        })
    }

    pub fn open(&self, step: &str) {
        self.closed.lock().remove(step);
        self.cv.notify_all();
    }

    /// Waits until `n` jobs of `step` have reached the executor.
    pub fn wait_for(&self, step: &str, n: usize) {
        let deadline = std::time::Instant::now() + std::time::Duration::from_secs(10);
        while self.seen.lock().iter().filter(|j| j.step == step).count() < n {
            assert!(
                std::time::Instant::now() < deadline,
                "timed out waiting for {step}"
            );
            std::thread::sleep(std::time::Duration::from_millis(2));
        }
    }
}

impl Executor for Gated {
    fn capacity(&self) -> usize {
        self.inner.capacity().max(16)
    }

    fn execute(&self, job: &Job) -> JobResult {
        self.seen.lock().push(job.clone());
        let mut closed = self.closed.lock();
        while closed.contains(&job.step) {
            self.cv.wait(&mut closed);
        }
        drop(closed);
        self.inner.execute(job)
    }
}
