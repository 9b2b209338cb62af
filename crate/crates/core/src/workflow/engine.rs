//! Supervisor loop: plan, dispatch each active step to its worker, record, replan.

use std::fs::{self, OpenOptions};
use std::io::Write;

use super::policy::{dft_agent, hpc_agent, DftScript, HpcScript, Scripted};
use super::{io_err, keys, tool_registry, Workspace, WorkflowError, CANVAS_SNAPSHOT, TRACE_LOG, TRANSCRIPT_LOG};
use crate::agentcore::{render_transcript, run_agent, AgentPolicy, Task};
use crate::canvas::{AccessMode, Value};
use crate::planner::{
    make_plan, record_step, replan, Capabilities, Next, Objective, PlanError, PlanState, StepKind, TemplatePolicy,
    DFT_WORKER,
};

const SUPERVISOR: &str = "supervisor";

/// How a workflow ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// A step failed and the planner stopped the workflow.
    PlanFailed,
    /// The convergence scan gave no parameter set within the threshold.
    ConvergenceUnresolved,
    RepairLimitExceeded,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Success => 0,
            Outcome::PlanFailed => 2,
            Outcome::ConvergenceUnresolved | Outcome::RepairLimitExceeded => 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct WorkflowRun {
    pub outcome: Outcome,
    pub state: PlanState,
    /// Final answer, or the reason the workflow stopped.
    pub response: String,
}

fn mirror(ws: &mut Workspace, state: &PlanState) -> Result<(), WorkflowError> {
    for (key, value) in [(keys::PLAN, state.plan_value()), (keys::PAST_STEPS, state.past_steps_value())] {
        ws.canvas
            .upsert(SUPERVISOR, key, value, AccessMode::Protected)
            .map_err(|e| WorkflowError::Setup(e.to_string()))?;
    }
    Ok(())
}

fn append_log(ws: &Workspace, text: &str) -> Result<(), WorkflowError> {
    let path = ws.workdir.join(TRANSCRIPT_LOG);
    let mut f = OpenOptions::new().create(true).append(true).open(&path).map_err(io_err(&path))?;
    f.write_all(text.as_bytes()).map_err(io_err(&path))
}

fn persist(ws: &Workspace) -> Result<(), WorkflowError> {
    ws.canvas.snapshot(ws.workdir.join(CANVAS_SNAPSHOT))?;
    let trace = ws.workdir.join(TRACE_LOG);
    fs::write(&trace, ws.scheduler.trace_text()).map_err(io_err(&trace))
}

/// Run one objective to completion in `ws`.
pub fn run_workflow(ws: &mut Workspace, objective: &Objective) -> Result<WorkflowRun, WorkflowError> {
    let text = objective.to_string();
    let policy = TemplatePolicy {
        repair_limit: ws.settings.repair_limit,
    };
    let transcript = ws.workdir.join(TRANSCRIPT_LOG);
    if transcript.exists() {
        fs::remove_file(&transcript).map_err(io_err(&transcript))?;
    }
    ws.canvas
        .create("user", keys::OBJECTIVE, Value::str(&text), AccessMode::ReadOnly)
        .map_err(|e| WorkflowError::Setup(e.to_string()))?;
    let mut state = make_plan(&text, &Capabilities::default(), &policy)?;
    mirror(ws, &state)?;
    let registry = tool_registry();
    let max_steps = ws.settings.max_steps;
    let mut outcome = Outcome::Success;

    while let Next::Worker(worker) = state.next.clone() {
        let step = state.active().ok_or(PlanError::NoActiveStep)?.clone();
        let task = Task {
            description: step.description.clone(),
            kind: step.kind,
        };
        let (config, mut agent): (_, Box<dyn AgentPolicy>) = if worker == DFT_WORKER {
            let script = DftScript {
                objective: objective.clone(),
                settings: ws.settings.clone(),
                workdir: ws.workdir.clone(),
            };
            (dft_agent(max_steps), Box::new(Scripted::new(script)))
        } else {
            let script = HpcScript {
                cluster: ws.scheduler.cluster().clone(),
                workdir: ws.workdir.clone(),
            };
            (hpc_agent(max_steps), Box::new(Scripted::new(script)))
        };
        ws.actor = config.name.clone();
        let run = run_agent(&config, &registry, agent.as_mut(), &task, ws)?;
        append_log(ws, &format!("{}\n", render_transcript(&config, &task, &run)))?;
        log::info!("[{}] {} -> {}", config.name, task.description, run.report.summary);
        ws.actor = SUPERVISOR.into();

        state = record_step(state, &run.report)?;
        let failed = !run.report.is_ok();
        state = match replan(state.clone(), &policy) {
            Ok(s) => s,
            Err(PlanError::LoopLimitExceeded { limit }) => {
                mirror(ws, &state)?;
                persist(ws)?;
                return Ok(WorkflowRun {
                    outcome: Outcome::RepairLimitExceeded,
                    response: format!("Repair limit of {limit} rounds reached: {}", run.report.summary),
                    state,
                });
            }
            Err(e) => return Err(e.into()),
        };
        mirror(ws, &state)?;
        if failed && state.is_finished() {
            outcome = if step.kind == StepKind::DetermineParams {
                Outcome::ConvergenceUnresolved
            } else {
                Outcome::PlanFailed
            };
        }
    }
    persist(ws)?;
    Ok(WorkflowRun {
        outcome,
        response: state.response.clone().unwrap_or_default(),
        state,
    })
}
