use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Receiver, Sender};

use super::run::{execute, RunError, SandboxRun};
use super::sandbox::Dimensions;
use crate::cancel::{CancelToken, Interrupted};
use crate::corpus::CorpusStats;
use crate::ihtm::{ModelParams, ModelState};
use crate::strategies::StrategyRegistry;

pub(super) struct Job {
    pub sandbox_id: String,
    pub origin: Arc<ModelState>,
    pub dims: Dimensions,
    pub budget: Duration,
    pub cancel: CancelToken,
    pub registry: Arc<StrategyRegistry>,
    pub stats: Arc<CorpusStats>,
    pub model: ModelParams,
}

pub(super) enum WorkerMsg {
    Started {
        sandbox_id: String,
    },
    Finished {
        sandbox_id: String,
        outcome: Result<Box<SandboxRun>, RunError>,
        runtime: Duration,
    },
}

/// Fixed set of worker threads fed from one job queue.
pub(super) struct Pool {
    jobs: Option<Sender<Job>>,
    handles: Vec<JoinHandle<()>>,
}

impl Pool {
    pub fn start(workers: usize) -> (Self, Receiver<WorkerMsg>) {
        let (job_tx, job_rx) = unbounded::<Job>();
        let (out_tx, out_rx) = unbounded();
        let handles = (0..workers.max(1))
            .map(|i| {
                let jobs = job_rx.clone();
                let out = out_tx.clone();
                std::thread::Builder::new()
                    .name(format!("sandbox-worker-{i}"))
                    .spawn(move || worker(jobs, out))
                    .expect("spawn worker thread")
            })
            .collect();
        (
            Self {
                jobs: Some(job_tx),
                handles,
            },
            out_rx,
        )
    }

    pub fn submit(&self, job: Job) {
        self.jobs
            .as_ref()
            .expect("pool is running")
            .send(job)
            .expect("workers alive while the pool exists");
    }
}

impl Drop for Pool {
    fn drop(&mut self) {
        self.jobs.take();
        for h in self.handles.drain(..) {
            let _ = h.join();
        }
    }
}

fn worker(jobs: Receiver<Job>, out: Sender<WorkerMsg>) {
    for job in jobs {
        if job.cancel.is_cancelled() {
            let _ = out.send(WorkerMsg::Finished {
                sandbox_id: job.sandbox_id,
                outcome: Err(RunError::Interrupted(Interrupted::Cancelled)),
                runtime: Duration::ZERO,
            });
            continue;
        }
        let _ = out.send(WorkerMsg::Started {
            sandbox_id: job.sandbox_id.clone(),
        });
        let token = job.cancel.child_with_budget(job.budget);
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(|| {
            execute(&job.origin, &job.dims, &job.registry, &job.stats, job.model, &token).map(Box::new)
        }))
        .unwrap_or_else(|_| {
            log::error!("sandbox {} panicked", job.sandbox_id);
            Err(RunError::Panicked)
        });
        let runtime = start.elapsed();
        let _ = out.send(WorkerMsg::Finished {
            sandbox_id: job.sandbox_id,
            outcome,
            runtime,
        });
    }
}
