//! Planning supervisor: five-field plan state, step recording and replanning.

mod objective;
mod templates;

pub use objective::Objective;
pub use templates::{TemplatePolicy, DEFAULT_REPAIR_LIMIT};

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::agentcore::AgentReport;
use crate::canvas::Value;
use crate::structlab::SiteKind;

pub const DFT_WORKER: &str = "dft";
pub const HPC_WORKER: &str = "hpc";
/// Bound on stored step summaries, in characters.
pub const SUMMARY_BOUND: usize = 500;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("objective is empty")]
    EmptyObjective,
    #[error("unsupported objective: {0}")]
    UnsupportedObjective(String),
    #[error("no step is active")]
    NoActiveStep,
    #[error("step assigned to unknown worker {0}")]
    UnknownAssignee(String),
    #[error("repair loop exceeded {limit} rounds")]
    LoopLimitExceeded { limit: u32 },
    #[error("bad plan edit: {0}")]
    BadEdit(String),
}

/// A group of jobs submitted together.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Batch {
    Convergence,
    Eos,
    Production,
    Ensemble,
}

impl Batch {
    pub fn noun(self) -> &'static str {
        match self {
            Batch::Convergence => "convergence test",
            Batch::Eos => "EOS",
            Batch::Production => "production",
            Batch::Ensemble => "ensemble",
        }
    }
}

/// System an input file describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Target {
    Site(SiteKind),
    CleanSlab,
    Molecule,
}

/// What a step asks a worker to do; workers dispatch on this, not on prose.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StepKind {
    CreateBulk,
    CreateSlab,
    PlaceAdsorbate(SiteKind),
    CreateCleanSlab,
    FindPseudo,
    WriteTemplate,
    GenConvergence,
    AddResources(Batch),
    Submit(Batch),
    DetermineParams,
    GenEos,
    ReadEnergies(Batch),
    CalcLattice,
    CompareLattice,
    GenProduction(Target),
    Repair { batch: Batch, round: u32 },
    CalcAdsorption,
    IdentifyFavorable,
    CalcDeltaBe,
    CompareAdsorption,
    GenEnsemble,
    AnalyzeBeef,
    ReportBeef,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepStatus {
    Pending,
    Active,
    Done,
    Failed,
    Dropped,
}

impl StepStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            StepStatus::Pending => "pending",
            StepStatus::Active => "active",
            StepStatus::Done => "done",
            StepStatus::Failed => "failed",
            StepStatus::Dropped => "dropped",
        }
    }

    fn dispatched(self) -> bool {
        matches!(self, StepStatus::Done | StepStatus::Failed)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanStep {
    pub description: String,
    pub assignee: String,
    pub kind: StepKind,
    pub status: StepStatus,
}

impl PlanStep {
    pub fn new(description: impl Into<String>, assignee: &str, kind: StepKind) -> Self {
        PlanStep {
            description: description.into(),
            assignee: assignee.to_string(),
            kind,
            status: StepStatus::Pending,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepRecord {
    pub description: String,
    pub assignee: String,
    pub summary: String,
    pub status: RecordStatus,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Next {
    Worker(String),
    Finish,
}

impl fmt::Display for Next {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Next::Worker(w) => f.write_str(w),
            Next::Finish => f.write_str("FINISH"),
        }
    }
}

/// The supervisor's state: exactly input, plan, past_steps, response and next.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanState {
    pub input: String,
    pub plan: Vec<PlanStep>,
    pub past_steps: Vec<StepRecord>,
    pub response: Option<String>,
    pub next: Next,
}

impl PlanState {
    pub fn active_index(&self) -> Option<usize> {
        self.plan.iter().position(|s| s.status == StepStatus::Active)
    }

    pub fn active(&self) -> Option<&PlanStep> {
        self.active_index().map(|i| &self.plan[i])
    }

    pub fn is_finished(&self) -> bool {
        self.next == Next::Finish
    }

    /// Dispatched plan steps paired with their records, in execution order.
    pub fn history(&self) -> impl Iterator<Item = (&PlanStep, &StepRecord)> {
        self.plan.iter().filter(|s| s.status.dispatched()).zip(&self.past_steps)
    }

    /// Canvas mirror of the plan.
    pub fn plan_value(&self) -> Value {
        Value::List(
            self.plan
                .iter()
                .map(|s| {
                    Value::record([
                        ("description", Value::str(&s.description)),
                        ("assignee", Value::str(&s.assignee)),
                        ("status", Value::str(s.status.as_str())),
                    ])
                })
                .collect(),
        )
    }

    /// Canvas mirror of the past steps.
    pub fn past_steps_value(&self) -> Value {
        Value::List(
            self.past_steps
                .iter()
                .map(|r| {
                    Value::record([
                        ("description", Value::str(&r.description)),
                        ("assignee", Value::str(&r.assignee)),
                        ("summary", Value::str(&r.summary)),
                        (
                            "status",
                            Value::str(match r.status {
                                RecordStatus::Ok => "ok",
                                RecordStatus::Failed => "failed",
                            }),
                        ),
                    ])
                })
                .collect(),
        )
    }
}

/// Workers the supervisor may assign steps to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Capabilities {
    pub workers: BTreeMap<String, String>,
}

impl Default for Capabilities {
    fn default() -> Self {
        let mut workers = BTreeMap::new();
        workers.insert(
            DFT_WORKER.to_string(),
            "structures, pseudopotentials, input files, convergence repair and analysis".to_string(),
        );
        workers.insert(HPC_WORKER.to_string(), "resource suggestions, submission and monitoring".to_string());
        Capabilities { workers }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PlanEdit {
    Insert { index: usize, step: PlanStep },
    Drop { index: usize },
    Finish { response: String },
}

/// Decides plans from exactly the objective, the current plan and the past steps.
pub trait PlannerPolicy {
    fn initial_plan(&self, objective: &str) -> Result<Vec<PlanStep>, PlanError>;
    fn decide(&self, objective: &str, plan: &[PlanStep], past_steps: &[StepRecord]) -> Result<Vec<PlanEdit>, PlanError>;
}

fn bounded(s: &str) -> String {
    match s.char_indices().nth(SUMMARY_BOUND) {
        Some((i, _)) => s[..i].to_string(),
        None => s.to_string(),
    }
}

pub fn make_plan(objective: &str, caps: &Capabilities, policy: &dyn PlannerPolicy) -> Result<PlanState, PlanError> {
    if objective.trim().is_empty() {
        return Err(PlanError::EmptyObjective);
    }
    let mut plan = policy.initial_plan(objective)?;
    if plan.is_empty() {
        return Err(PlanError::UnsupportedObjective(objective.to_string()));
    }
    if let Some(s) = plan.iter().find(|s| !caps.workers.contains_key(&s.assignee)) {
        return Err(PlanError::UnknownAssignee(s.assignee.clone()));
    }
    plan[0].status = StepStatus::Active;
    let next = Next::Worker(plan[0].assignee.clone());
    Ok(PlanState {
        input: objective.to_string(),
        plan,
        past_steps: Vec::new(),
        response: None,
        next,
    })
}

/// Close the active step with a worker's report. Plan and next are left to `replan`.
pub fn record_step(mut state: PlanState, report: &AgentReport) -> Result<PlanState, PlanError> {
    let i = state.active_index().ok_or(PlanError::NoActiveStep)?;
    let step = &mut state.plan[i];
    let (status, rstatus) = if report.is_ok() {
        (StepStatus::Done, RecordStatus::Ok)
    } else {
        (StepStatus::Failed, RecordStatus::Failed)
    };
    step.status = status;
    state.past_steps.push(StepRecord {
        description: step.description.clone(),
        assignee: step.assignee.clone(),
        summary: bounded(&report.summary),
        status: rstatus,
    });
    Ok(state)
}

/// Apply the policy's edits, then finish or activate the next pending step.
pub fn replan(mut state: PlanState, policy: &dyn PlannerPolicy) -> Result<PlanState, PlanError> {
    if state.is_finished() {
        return Ok(state);
    }
    let edits = policy.decide(&state.input, &state.plan, &state.past_steps)?;
    for e in edits {
        match e {
            PlanEdit::Insert { index, step } => {
                // no inserting into the executed part of the plan
                let floor = state
                    .plan
                    .iter()
                    .rposition(|s| s.status.dispatched() || s.status == StepStatus::Active)
                    .map_or(0, |i| i + 1);
                if index < floor || index > state.plan.len() {
                    return Err(PlanError::BadEdit(format!("insert at {index}")));
                }
                state.plan.insert(index, PlanStep { status: StepStatus::Pending, ..step });
            }
            PlanEdit::Drop { index } => match state.plan.get_mut(index) {
                Some(s) if s.status == StepStatus::Pending => s.status = StepStatus::Dropped,
                _ => return Err(PlanError::BadEdit(format!("drop of non-pending step {index}"))),
            },
            PlanEdit::Finish { response } => {
                for s in state.plan.iter_mut().filter(|s| s.status == StepStatus::Pending) {
                    s.status = StepStatus::Dropped;
                }
                state.response = Some(response);
                state.next = Next::Finish;
                return Ok(state);
            }
        }
    }
    if state.active_index().is_some() {
        return Ok(state);
    }
    match state.plan.iter().position(|s| s.status == StepStatus::Pending) {
        Some(i) => {
            state.plan[i].status = StepStatus::Active;
            state.next = Next::Worker(state.plan[i].assignee.clone());
        }
        None => {
            let last = state.past_steps.last().map(|r| r.summary.clone()).unwrap_or_default();
            state.response = Some(last);
            state.next = Next::Finish;
        }
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct TwoStep;

    impl PlannerPolicy for TwoStep {
        fn initial_plan(&self, objective: &str) -> Result<Vec<PlanStep>, PlanError> {
            if objective != "go" {
                return Err(PlanError::UnsupportedObjective(objective.into()));
            }
            Ok(vec![
                PlanStep::new("a", DFT_WORKER, StepKind::FindPseudo),
                PlanStep::new("b", HPC_WORKER, StepKind::Submit(Batch::Eos)),
            ])
        }

        fn decide(&self, _: &str, _: &[PlanStep], _: &[StepRecord]) -> Result<Vec<PlanEdit>, PlanError> {
            Ok(vec![])
        }
    }

    #[test]
    fn lifecycle() {
        let caps = Capabilities::default();
        let s = make_plan("go", &caps, &TwoStep).unwrap();
        assert_eq!(s.next, Next::Worker(DFT_WORKER.into()));
        assert_eq!(s.active_index(), Some(0));
        let s = record_step(s, &AgentReport::ok("x".repeat(800), vec![])).unwrap();
        assert_eq!(s.past_steps[0].summary.chars().count(), SUMMARY_BOUND);
        assert!(s.active().is_none());
        assert!(matches!(record_step(s.clone(), &AgentReport::ok("", vec![])), Err(PlanError::NoActiveStep)));
        let s = replan(s, &TwoStep).unwrap();
        assert_eq!(s.next, Next::Worker(HPC_WORKER.into()));
        let s = record_step(s, &AgentReport::failed("boom")).unwrap();
        assert_eq!(s.past_steps[1].status, RecordStatus::Failed);
        assert!(s.past_steps[1].summary.starts_with("Job failed"));
        let s = replan(s, &TwoStep).unwrap();
        assert!(s.is_finished());
        assert_eq!(s.response.as_deref(), Some("Job failed: boom"));
        assert_eq!(s.history().count(), 2);
    }

    #[test]
    fn rejections() {
        let caps = Capabilities::default();
        assert_eq!(make_plan("  ", &caps, &TwoStep), Err(PlanError::EmptyObjective));
        assert!(matches!(make_plan("?", &caps, &TwoStep), Err(PlanError::UnsupportedObjective(_))));
        let only_dft = Capabilities {
            workers: [(DFT_WORKER.to_string(), String::new())].into_iter().collect(),
        };
        assert_eq!(make_plan("go", &only_dft, &TwoStep), Err(PlanError::UnknownAssignee(HPC_WORKER.into())));
    }
}
