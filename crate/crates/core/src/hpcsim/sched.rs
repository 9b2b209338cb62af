//! Event loop: FIFO per partition, whole-node allocation, no backfill.
//! Times are integer milliseconds; ties are broken by event sequence number.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};
use std::fmt;
use std::path::{Path, PathBuf};

use crate::qeio::{parse_input, parse_output};
use crate::surrogate::FixtureLibrary;

use super::{output_path, resource_path, ClusterSpec, HpcError, ResourceSuggestion};

pub type JobId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JobState {
    Pending,
    Running,
    Done,
    Failed,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Done | JobState::Failed)
    }
}

impl fmt::Display for JobState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            JobState::Pending => "pending",
            JobState::Running => "running",
            JobState::Done => "done",
            JobState::Failed => "failed",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub converged: bool,
    pub wall_seconds: f64,
}

/// Something that can execute one input file and write its output.
pub trait Backend {
    fn run(&self, input: &Path, output: &Path, ntasks: usize, seed: u64) -> Result<RunOutcome, String>;
}

impl Backend for FixtureLibrary {
    fn run(&self, input: &Path, output: &Path, ntasks: usize, seed: u64) -> Result<RunOutcome, String> {
        let (spec, s) = parse_input(input).map_err(|e| e.to_string())?;
        let fixture = self.resolve(&s).map_err(|e| e.to_string())?;
        let out = self
            .evaluate_to_file(fixture, &s, &spec, seed, ntasks, output)
            .map_err(|e| e.to_string())?;
        Ok(RunOutcome {
            converged: out.converged,
            wall_seconds: out.wall_seconds,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JobRecord {
    pub id: JobId,
    pub input: PathBuf,
    pub output: PathBuf,
    pub partition: String,
    pub nnodes: u32,
    pub ntasks: usize,
    pub state: JobState,
    pub submit_ms: u64,
    pub start_ms: Option<u64>,
    pub finish_ms: Option<u64>,
    /// Backend error text when the job could not run at all.
    pub error: Option<String>,
    outcome: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEvent {
    pub time_ms: u64,
    pub event: &'static str,
    pub job: JobId,
    pub partition: String,
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {} {}", self.time_ms, self.event, self.job, self.partition)
    }
}

pub struct Scheduler {
    cluster: ClusterSpec,
    backend: Box<dyn Backend>,
    seed: u64,
    now_ms: u64,
    seq: u64,
    jobs: Vec<JobRecord>,
    queues: BTreeMap<String, VecDeque<JobId>>,
    free_nodes: BTreeMap<String, u32>,
    events: BinaryHeap<Reverse<(u64, u64, JobId)>>,
    trace: Vec<TraceEvent>,
}

impl fmt::Debug for Scheduler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Scheduler")
            .field("now_ms", &self.now_ms)
            .field("jobs", &self.jobs.len())
            .finish_non_exhaustive()
    }
}

impl Scheduler {
    pub fn new(cluster: ClusterSpec, backend: Box<dyn Backend>, seed: u64) -> Self {
        let free_nodes = cluster.partitions.iter().map(|p| (p.name.clone(), p.node_count)).collect();
        let queues = cluster.partitions.iter().map(|p| (p.name.clone(), VecDeque::new())).collect();
        Scheduler {
            cluster,
            backend,
            seed,
            now_ms: 0,
            seq: 0,
            jobs: Vec::new(),
            queues,
            free_nodes,
            events: BinaryHeap::new(),
            trace: Vec::new(),
        }
    }

    pub fn cluster(&self) -> &ClusterSpec {
        &self.cluster
    }

    pub fn now_ms(&self) -> u64 {
        self.now_ms
    }

    pub fn jobs(&self) -> &[JobRecord] {
        &self.jobs
    }

    pub fn job(&self, id: JobId) -> Result<&JobRecord, HpcError> {
        self.jobs.get(id).ok_or(HpcError::UnknownJobId(id))
    }

    pub fn trace(&self) -> &[TraceEvent] {
        &self.trace
    }

    pub fn trace_text(&self) -> String {
        self.trace.iter().map(|e| format!("{e}\n")).collect()
    }

    fn log(&mut self, event: &'static str, job: JobId) {
        let partition = self.jobs[job].partition.clone();
        log::debug!("t={}ms {event} job {job} on {partition}", self.now_ms);
        self.trace.push(TraceEvent {
            time_ms: self.now_ms,
            event,
            job,
            partition,
        });
    }

    /// Queue jobs that already have persisted suggestions. All-or-nothing.
    pub fn submit(&mut self, inputs: &[PathBuf]) -> Result<Vec<JobId>, HpcError> {
        let mut staged = Vec::with_capacity(inputs.len());
        for input in inputs {
            let res = ResourceSuggestion::load(&resource_path(input))?;
            let bad = |reason: String| HpcError::BadSuggestion {
                path: resource_path(input),
                reason,
            };
            let p = self
                .cluster
                .partition(&res.partition)
                .ok_or_else(|| bad(format!("unknown partition {}", res.partition)))?;
            if res.nnodes > p.node_count || res.nnodes as u64 * p.cores_per_node as u64 > p.total_cores() {
                return Err(bad(format!("{} nodes exceed partition {}", res.nnodes, p.name)));
            }
            if res.ntasks as u64 > res.nnodes as u64 * p.cores_per_node as u64 {
                return Err(bad(format!("{} tasks do not fit on {} nodes", res.ntasks, res.nnodes)));
            }
            staged.push((input.clone(), res));
        }
        let mut ids = Vec::with_capacity(staged.len());
        for (input, res) in staged {
            let id = self.jobs.len();
            self.jobs.push(JobRecord {
                id,
                output: output_path(&input),
                input,
                partition: res.partition.clone(),
                nnodes: res.nnodes,
                ntasks: res.ntasks,
                state: JobState::Pending,
                submit_ms: self.now_ms,
                start_ms: None,
                finish_ms: None,
                error: None,
                outcome: None,
            });
            self.queues.get_mut(&res.partition).expect("validated partition").push_back(id);
            self.log("submit", id);
            ids.push(id);
        }
        self.dispatch();
        Ok(ids)
    }

    fn dispatch(&mut self) {
        let names: Vec<String> = self.queues.keys().cloned().collect();
        for name in names {
            loop {
                let Some(&head) = self.queues[&name].front() else { break };
                let need = self.jobs[head].nnodes;
                let free = self.free_nodes.get_mut(&name).expect("known partition");
                if need > *free {
                    break;
                }
                *free -= need;
                self.queues.get_mut(&name).expect("known partition").pop_front();
                self.start(head);
            }
        }
    }

    fn start(&mut self, id: JobId) {
        self.jobs[id].state = JobState::Running;
        self.jobs[id].start_ms = Some(self.now_ms);
        self.log("start", id);
        let job = &self.jobs[id];
        let duration_ms = match self.backend.run(&job.input, &job.output, job.ntasks, self.seed) {
            Ok(out) => {
                self.jobs[id].outcome = Some(out.converged);
                (out.wall_seconds.max(0.0) * 1000.0).ceil() as u64
            }
            Err(e) => {
                log::warn!("job {id} could not run: {e}");
                self.jobs[id].error = Some(e);
                self.jobs[id].outcome = Some(false);
                0
            }
        };
        self.seq += 1;
        self.events.push(Reverse((self.now_ms + duration_ms, self.seq, id)));
    }

    fn step(&mut self) -> bool {
        let Some(Reverse((t, _, id))) = self.events.pop() else {
            return false;
        };
        self.now_ms = t;
        let ok = self.jobs[id].outcome == Some(true);
        self.jobs[id].state = if ok { JobState::Done } else { JobState::Failed };
        self.jobs[id].finish_ms = Some(t);
        let p = self.jobs[id].partition.clone();
        *self.free_nodes.get_mut(&p).expect("known partition") += self.jobs[id].nnodes;
        self.log(if ok { "done" } else { "failed" }, id);
        self.dispatch();
        true
    }

    /// Advance simulated time until every listed job is terminal.
    pub fn wait_all(&mut self, ids: &[JobId]) -> Result<BTreeMap<JobId, JobState>, HpcError> {
        if let Some(&bad) = ids.iter().find(|&&id| id >= self.jobs.len()) {
            return Err(HpcError::UnknownJobId(bad));
        }
        while ids.iter().any(|&id| !self.jobs[id].state.is_terminal()) {
            if !self.step() {
                unreachable!("non-terminal jobs always have a pending event or a queue slot");
            }
        }
        Ok(ids.iter().map(|&id| (id, self.jobs[id].state)).collect())
    }

    /// Total energies (Ry) of finished jobs, in the order given.
    pub fn collect_energies(&self, ids: &[JobId]) -> Result<Vec<(JobId, f64)>, HpcError> {
        ids.iter()
            .map(|&id| {
                let job = self.job(id)?;
                if job.state != JobState::Done {
                    return Err(HpcError::JobNotFinished {
                        id,
                        input: job.input.display().to_string(),
                        state: job.state,
                    });
                }
                Ok((id, parse_output(&job.output)?.total_energy))
            })
            .collect()
    }
}
