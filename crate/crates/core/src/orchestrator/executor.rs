//! Execution backends and the worker pool that feeds them.

use std::io::Read;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::Arc;
use std::thread;
use std::time::Duration as StdDuration;

use chrono::Duration;
use crossbeam_channel::{Receiver, Sender};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wait_timeout::ChildExt;

use super::job::{Job, JobError, JobResult, JobStatus};
use crate::config::{ExecConfig, ExecKind};
use crate::kernel::{Clock, SystemClock};

const TAIL_BYTES: usize = 4096;

/// A compute backend. `execute` blocks until the job has finished and must
/// produce exactly one result, synthesizing a failure on timeout.
pub trait Executor: Send + Sync {
    /// Maximum number of jobs executed concurrently.
    fn capacity(&self) -> usize;

    fn execute(&self, job: &Job) -> JobResult;
}

pub fn from_config(cfg: &ExecConfig, clock: Arc<dyn Clock>) -> Arc<dyn Executor> {
    let timeout = StdDuration::from_secs_f64(cfg.timeout_s.max(0.0));
    match cfg.kind {
        ExecKind::Sim => Arc::new(SimExecutor {
            seed: cfg.sim.seed,
            failure_rate: cfg.sim.failure_rate,
            latency_ms: (
                cfg.sim.min_latency_ms,
                cfg.sim.max_latency_ms.max(cfg.sim.min_latency_ms),
            ),
            time_scale: cfg.sim.time_scale,
            timeout,
            capacity: cfg.capacity.max(1),
            clock,
        }),
        ExecKind::Local => Arc::new(LocalExecutor {
            work_dir: cfg.local.work_dir.clone(),
            timeout,
            capacity: cfg.capacity.max(1),
        }),
    }
}

/// Deterministic stand-in for a compute grid. Latency and failure of each
/// job are drawn from a generator seeded by the executor seed and the job's
/// position in the analysis (element index, step, fork slot, attempt), so a
/// given seed always reproduces the same outcomes.
#[derive(Clone)]
pub struct SimExecutor {
    pub seed: u64,
    pub failure_rate: f64,
    /// Inclusive range of simulated latency.
    pub latency_ms: (u64, u64),
    pub time_scale: f64,
    pub timeout: StdDuration,
    pub capacity: usize,
    pub clock: Arc<dyn Clock>,
}

impl SimExecutor {
    pub fn new(seed: u64, failure_rate: f64) -> Self {
        SimExecutor {
            seed,
            failure_rate,
            latency_ms: (50, 500),
            time_scale: 0.0,
            timeout: StdDuration::from_secs(3600),
            capacity: 4,
            clock: Arc::new(SystemClock),
        }
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn with_time_scale(mut self, scale: f64) -> Self {
        self.time_scale = scale;
        self
    }

    pub fn with_latency_ms(mut self, min: u64, max: u64) -> Self {
        self.latency_ms = (min, max.max(min));
        self
    }

    pub fn with_capacity(mut self, capacity: usize) -> Self {
        self.capacity = capacity.max(1);
        self
    }

    fn rng_for(&self, job: &Job) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed ^ fnv1a(job.sim_key().as_bytes()))
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(*b)).wrapping_mul(0x0100_0000_01b3)
    })
}

impl Executor for SimExecutor {
    fn capacity(&self) -> usize {
        self.capacity
    }

    fn execute(&self, job: &Job) -> JobResult {
        let mut rng = self.rng_for(job);
        let latency =
            StdDuration::from_millis(rng.gen_range(self.latency_ms.0..=self.latency_ms.1));
        let fails = rng.gen_bool(self.failure_rate.clamp(0.0, 1.0));
        let resource = format!("sim-node-{:02}", rng.gen_range(0..self.capacity));
        let now = self.clock.now();
        let started_at = job.not_before.map_or(now, |t| t.max(now));
        let timed_out = latency > self.timeout;
        let elapsed = if timed_out { self.timeout } else { latency };
        if self.time_scale > 0.0 {
            thread::sleep(elapsed.mul_f64(self.time_scale));
        }
        let ended_at = started_at + Duration::from_std(elapsed).unwrap_or(Duration::zero());
        let (status, error) = if timed_out {
            (JobStatus::Failed, Some(JobError::new("timeout")))
        } else if fails {
            (
                JobStatus::Failed,
                Some(JobError {
                    exit_status: Some(1),
                    message: format!("simulated failure in step `{}`", job.step),
                }),
            )
        } else {
            (JobStatus::Succeeded, None)
        };
        let outputs = match status {
            JobStatus::Succeeded => vec![format!(
                "sim://{}/{}-{}.out",
                job.id, job.step, job.fork_index
            )],
            JobStatus::Failed => Vec::new(),
        };
        JobResult {
            job_id: job.id,
            status,
            started_at,
            ended_at,
            resource,
            outputs,
            stdout_tail: String::new(),
            stderr_tail: error
                .as_ref()
                .map(|e| e.message.clone())
                .unwrap_or_default(),
            error,
        }
    }
}

/// Runs each step's script as a subprocess in a fresh per-job working
/// directory. Every file left in that directory is reported as an output.
#[derive(Debug, Clone)]
pub struct LocalExecutor {
    pub work_dir: PathBuf,
    pub timeout: StdDuration,
    pub capacity: usize,
}

impl LocalExecutor {
    pub fn new(work_dir: impl Into<PathBuf>) -> Self {
        LocalExecutor {
            work_dir: work_dir.into(),
            timeout: StdDuration::from_secs(3600),
            capacity: 4,
        }
    }

    pub fn with_timeout(mut self, timeout: StdDuration) -> Self {
        self.timeout = timeout;
        self
    }
}

fn script_path(script_ref: &str) -> PathBuf {
    PathBuf::from(script_ref.strip_prefix("file://").unwrap_or(script_ref))
}

fn tail_reader(mut r: impl Read + Send + 'static) -> thread::JoinHandle<String> {
    thread::spawn(move || {
        let mut buf = Vec::new();
        let mut chunk = [0u8; 8192];
        while let Ok(n) = r.read(&mut chunk) {
            if n == 0 {
                break;
            }
            buf.extend_from_slice(&chunk[..n]);
            if buf.len() > 2 * TAIL_BYTES {
                buf.drain(..buf.len() - TAIL_BYTES);
            }
        }
        if buf.len() > TAIL_BYTES {
            buf.drain(..buf.len() - TAIL_BYTES);
        }
        String::from_utf8_lossy(&buf).into_owned()
    })
}

fn collect_outputs(dir: &Path, out: &mut Vec<String>) -> std::io::Result<()> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)?.collect::<Result<_, _>>()?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let path = e.path();
        if e.file_type()?.is_dir() {
            collect_outputs(&path, out)?;
        } else {
            out.push(format!("file://{}", path.display()));
        }
    }
    Ok(())
}

impl Executor for LocalExecutor {
    fn capacity(&self) -> usize {
        self.capacity
    }

    fn execute(&self, job: &Job) -> JobResult {
        let resource = format!(
            "local:{}",
            std::env::var("HOSTNAME").unwrap_or_else(|_| "localhost".into())
        );
        let started_at = chrono::Utc::now();
        let workdir = self.work_dir.join(job.id.to_string());
        let workdir = match std::fs::create_dir_all(&workdir).and_then(|_| workdir.canonicalize()) {
            Ok(w) => w,
            Err(e) => {
                return JobResult::failed(
                    job,
                    started_at,
                    &resource,
                    JobError::new(format!("work dir: {e}")),
                )
            }
        };
        let program = script_path(&job.script_ref);
        let program = program.canonicalize().unwrap_or(program);
        let spawned = Command::new(&program)
            .args(job.args())
            .current_dir(&workdir)
            .envs(&job.env)
            .env("PROVBASE_JOB_ID", job.id.to_string())
            .env("PROVBASE_STEP", &job.step)
            .env("PROVBASE_WORKDIR", &workdir)
            .env("PROVBASE_COMMON_DIRS", job.common_dirs.join(":"))
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn();
        let mut child = match spawned {
            Ok(c) => c,
            Err(e) => {
                return JobResult::failed(
                    job,
                    started_at,
                    &resource,
                    JobError::new(format!("cannot start {}: {e}", program.display())),
                )
            }
        };
        let stdout = tail_reader(child.stdout.take().expect("piped"));
        let stderr = tail_reader(child.stderr.take().expect("piped"));
        let waited = child.wait_timeout(self.timeout);
        let (status, error) = match waited {
            Ok(Some(st)) if st.success() => (JobStatus::Succeeded, None),
            Ok(Some(st)) => (
                JobStatus::Failed,
                Some(JobError {
                    exit_status: st.code(),
                    message: format!("{} exited with {st}", job.step),
                }),
            ),
            Ok(None) => {
                let _ = child.kill();
                let _ = child.wait();
                (JobStatus::Failed, Some(JobError::new("timeout")))
            }
            Err(e) => (
                JobStatus::Failed,
                Some(JobError::new(format!("wait failed: {e}"))),
            ),
        };
        let ended_at = chrono::Utc::now();
        let stdout_tail = stdout.join().unwrap_or_default();
        let stderr_tail = stderr.join().unwrap_or_default();
        let mut outputs = Vec::new();
        if status == JobStatus::Succeeded {
            if let Err(e) = collect_outputs(&workdir, &mut outputs) {
                return JobResult::failed(
                    job,
                    started_at,
                    &resource,
                    JobError::new(format!("collecting outputs: {e}")),
                );
            }
        }
        let error = error.map(|mut e| {
            if let Some(last) = stderr_tail.lines().rev().find(|l| !l.trim().is_empty()) {
                e.message = format!("{}: {}", e.message, last.trim());
            }
            e
        });
        JobResult {
            job_id: job.id,
            status,
            started_at,
            ended_at,
            resource,
            outputs,
            error,
            stdout_tail,
            stderr_tail,
        }
    }
}

pub(crate) enum Completion {
    Done(Box<(Job, JobResult)>),
    Wake,
}

struct Submission {
    job: Job,
    reply: Sender<Completion>,
}

/// Fixed pool of `capacity` workers in front of an executor.
pub(crate) struct JobBroker {
    queue: Sender<Submission>,
    executor: Arc<dyn Executor>,
}

impl JobBroker {
    pub fn new(executor: Arc<dyn Executor>) -> Self {
        let (tx, rx) = crossbeam_channel::unbounded::<Submission>();
        for i in 0..executor.capacity().max(1) {
            let rx: Receiver<Submission> = rx.clone();
            let exec = executor.clone();
            thread::Builder::new()
                .name(format!("job-worker-{i}"))
                .spawn(move || {
                    for Submission { job, reply } in rx.iter() {
                        let result = catch_unwind(AssertUnwindSafe(|| exec.execute(&job)))
                            .unwrap_or_else(|_| {
                                JobResult::failed(
                                    &job,
                                    chrono::Utc::now(),
                                    "unknown",
                                    JobError::new("executor panicked"),
                                )
                            })
                            .normalized();
                        let _ = reply.send(Completion::Done(Box::new((job, result))));
                    }
                })
                .expect("spawn worker");
        }
        JobBroker {
            queue: tx,
            executor,
        }
    }

    pub fn submit(&self, job: Job, reply: Sender<Completion>) {
        self.queue
            .send(Submission { job, reply })
            .expect("workers outlive the broker");
    }

    pub fn executor(&self) -> &Arc<dyn Executor> {
        &self.executor
    }
}
