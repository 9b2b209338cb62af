//! End-to-end pipelines: the shared workspace, the tool catalog, scripted
//! worker policies and the supervisor loop that drives them.

mod engine;
mod pipelines;
mod policy;
pub mod reference;
pub mod report;
mod tools;

pub use engine::{run_workflow, Outcome, WorkflowRun};
pub use pipelines::{
    run_adsorption, run_beef, run_lattice, AdsorptionResult, BeefResult, BeefSummary, ConfigEnergy, Environment,
    LatticeResult, LatticeRow, PipelineRun, MIN_ENSEMBLE,
};
pub use policy::{beef_verdict, dft_agent, hpc_agent, DftScript, HpcScript, Phase, Script, Scripted};
pub use tools::{json_to_value, tool_registry, value_to_json, TOOL_NAMES};

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::agentcore::{AgentError, CanvasHost};
use crate::canvas::{Canvas, SnapshotError};
use crate::hpcsim::{ClusterSpec, JobId, Scheduler};
use crate::planner::PlanError;
use crate::qeio::PseudoCatalog;
use crate::surrogate::FixtureLibrary;

/// Reserved and conventional canvas keys.
pub mod keys {
    pub const OBJECTIVE: &str = "objective";
    pub const PLAN: &str = "plan";
    pub const PAST_STEPS: &str = "past_steps";
    pub const JOB_LIST: &str = "job_list";
    pub const FAILED_JOBS: &str = "failed_jobs";
    pub const JOB_STATUS: &str = "job_status";
    pub const SUBMISSIONS: &str = "submissions";
    pub const BULK_STRUCTURE: &str = "bulk_structure";
    pub const SLAB_STRUCTURE: &str = "slab_structure";
    pub const ADSORPTION_SITES: &str = "adsorption_sites";
    pub const ADSORBATE_STRUCTURE: &str = "adsorbate_structure";
    pub const REFERENCE_SLAB: &str = "reference_slab";
    pub const PSEUDOPOTENTIALS: &str = "pseudopotentials";
    pub const TEMPLATE_INPUT: &str = "template_input";
    pub const CONVERGENCE_JOBS: &str = "convergence_jobs";
    pub const CONVERGED_PARAMETERS: &str = "converged_parameters";
    pub const EOS_JOBS: &str = "eos_jobs";
    pub const EOS_ENERGIES: &str = "eos_energies";
    pub const LATTICE_CONSTANT: &str = "lattice_constant";
    pub const BULK_MODULUS_GPA: &str = "bulk_modulus_gpa";
    pub const LATTICE_COMPARISON: &str = "lattice_comparison";
    pub const PRODUCTION_JOBS: &str = "production_jobs";
    pub const PRODUCTION_ENERGIES: &str = "production_energies";
    pub const ADSORPTION_ENERGIES: &str = "adsorption_energies";
    pub const FAVORABLE: &str = "favorable_configurations";
    pub const DELTA_BE_EV: &str = "delta_be_ev";
    pub const ADSORPTION_COMPARISON: &str = "adsorption_comparison";
    pub const ENSEMBLE_JOBS: &str = "ensemble_jobs";
    pub const BEEF_STATISTICS: &str = "beef_statistics";
    pub const BEEF_VERDICT: &str = "beef_verdict";

    /// Per-site configuration record, e.g. `configurations_fcc`.
    pub fn configurations(site: &str) -> String {
        format!("configurations_{site}")
    }
}

pub const CANVAS_SNAPSHOT: &str = "canvas.snap";
pub const TRANSCRIPT_LOG: &str = "transcripts.log";
pub const TRACE_LOG: &str = "scheduler.trace";

#[derive(Debug, Error)]
pub enum WorkflowError {
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
    #[error("{0}")]
    Setup(String),
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> WorkflowError + '_ {
    move |source| WorkflowError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Tunables shared by every pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub seed: u64,
    pub repair_limit: u32,
    /// meV/atom
    pub threshold_mev: f64,
    pub eos_step: f64,
    /// Tool calls per agent run.
    pub max_steps: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            seed: 42,
            repair_limit: crate::planner::DEFAULT_REPAIR_LIMIT,
            threshold_mev: 1.0,
            eos_step: 0.025,
            max_steps: 60,
        }
    }
}

/// Everything tools act on: files in one working directory, the canvas and the cluster.
pub struct Workspace {
    pub workdir: PathBuf,
    pub canvas: Canvas,
    pub catalog: PseudoCatalog,
    pub scheduler: Scheduler,
    pub settings: Settings,
    /// Agent currently acting; canvas writes made by tools are attributed to it.
    pub actor: String,
    latest_job: BTreeMap<String, JobId>,
}

impl CanvasHost for Workspace {
    fn canvas(&self) -> &Canvas {
        &self.canvas
    }
}

impl Workspace {
    pub fn new(
        workdir: impl Into<PathBuf>,
        fixtures: FixtureLibrary,
        cluster: ClusterSpec,
        catalog: PseudoCatalog,
        settings: Settings,
    ) -> Result<Self, WorkflowError> {
        let workdir = workdir.into();
        fs::create_dir_all(&workdir).map_err(io_err(&workdir))?;
        cluster.validate().map_err(|e| WorkflowError::Setup(e.to_string()))?;
        let scheduler = Scheduler::new(cluster, Box::new(fixtures), settings.seed);
        Ok(Workspace {
            workdir,
            canvas: Canvas::new(),
            catalog,
            scheduler,
            settings,
            actor: "user".into(),
            latest_job: BTreeMap::new(),
        })
    }

    /// Path of a bare file name inside the workdir. Directory parts are refused.
    pub fn file(&self, name: &str) -> Result<PathBuf, String> {
        let ok = !name.is_empty()
            && name != "."
            && name != ".."
            && !name.contains(['/', '\\'])
            && Path::new(name).file_name().is_some_and(|f| f == name);
        if !ok {
            return Err(format!("{name:?} must be a bare file name inside the working directory"));
        }
        Ok(self.workdir.join(name))
    }

    /// Most recent job that ran `file`.
    pub fn job_for(&self, file: &str) -> Option<JobId> {
        self.latest_job.get(file).copied()
    }

    pub(crate) fn record_job(&mut self, file: &str, id: JobId) {
        self.latest_job.insert(file.to_string(), id);
    }
}
