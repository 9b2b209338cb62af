//! Worker-agent runtime: tool registry, Thought/Action loop, convergence doctor.

mod doctor;
mod schema;

pub use doctor::{
    apply_suggestions, doctor_suggest, escalation_level, DoctorError, Suggestion, SuggestionAction, ATTEMPT_KEY,
};
pub use schema::{ArgType, Args, ParamSpec, ToolSpec};

use std::collections::BTreeMap;
use std::fmt;

use serde_json::Value as Json;
use thiserror::Error;

use crate::canvas::Canvas;
use crate::planner::StepKind;

/// Tool every run starts with.
pub const INSPECT_TOOL: &str = "inspect_my_canvas";
pub const FAILED_PREFIX: &str = "Job failed";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("tool {0} is already registered")]
    DuplicateTool(String),
    #[error("agent {agent} allowlists unregistered tool {tool}")]
    UnregisteredTool { agent: String, tool: String },
    #[error("agent {0} must allowlist {INSPECT_TOOL}")]
    NoInspectTool(String),
    #[error("agent config: {0}")]
    BadConfig(String),
}

/// Gives tools and the loop read access to the shared canvas.
pub trait CanvasHost {
    fn canvas(&self) -> &Canvas;
}

impl CanvasHost for Canvas {
    fn canvas(&self) -> &Canvas {
        self
    }
}

pub type ToolFn<C> = Box<dyn Fn(&mut C, &Args) -> Result<Json, String>>;

pub struct ToolRegistry<C> {
    tools: BTreeMap<&'static str, (ToolSpec, ToolFn<C>)>,
}

impl<C> Default for ToolRegistry<C> {
    fn default() -> Self {
        Self::new()
    }
}

impl<C> fmt::Debug for ToolRegistry<C> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.tools.keys()).finish()
    }
}

impl<C> ToolRegistry<C> {
    pub fn new() -> Self {
        ToolRegistry { tools: BTreeMap::new() }
    }

    pub fn register(
        &mut self,
        spec: ToolSpec,
        f: impl Fn(&mut C, &Args) -> Result<Json, String> + 'static,
    ) -> Result<(), AgentError> {
        if self.tools.contains_key(spec.name) {
            return Err(AgentError::DuplicateTool(spec.name.to_string()));
        }
        self.tools.insert(spec.name, (spec, Box::new(f)));
        Ok(())
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.tools.keys().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    pub fn spec(&self, name: &str) -> Option<&ToolSpec> {
        self.tools.get(name).map(|(s, _)| s)
    }

    /// Validate then invoke. Implementations never see arguments that fail the schema.
    pub fn call(&self, ctx: &mut C, name: &str, args: &Json) -> Result<Json, String> {
        let (spec, f) = self
            .tools
            .get(name)
            .ok_or_else(|| format!("unknown tool {name}; available: {}", self.names().join(", ")))?;
        let validated = spec.validate(args)?;
        f(ctx, &validated)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentConfig {
    pub name: String,
    pub role: String,
    pub objective: String,
    pub instructions: String,
    pub requirements: String,
    pub tools: Vec<String>,
    pub max_steps: usize,
}

impl AgentConfig {
    /// Render the four prompt blocks.
    pub fn prompt(&self) -> String {
        format!(
            "<Role>:\n{}\n\n<Objective>:\n{}\n\n<Instructions>:\n{}\n\n<Requirements>:\n{}\n",
            self.role, self.objective, self.instructions, self.requirements
        )
    }

    fn check<C>(&self, registry: &ToolRegistry<C>) -> Result<(), AgentError> {
        if self.max_steps == 0 {
            return Err(AgentError::BadConfig(format!("{}: max_steps must be > 0", self.name)));
        }
        if !self.tools.iter().any(|t| t == INSPECT_TOOL) {
            return Err(AgentError::NoInspectTool(self.name.clone()));
        }
        if let Some(t) = self.tools.iter().find(|t| registry.spec(t).is_none()) {
            return Err(AgentError::UnregisteredTool {
                agent: self.name.clone(),
                tool: t.clone(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Task {
    pub description: String,
    pub kind: StepKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentReport {
    pub status: ReportStatus,
    pub summary: String,
    /// Canvas keys and file paths the run produced.
    pub artifacts: Vec<String>,
}

impl AgentReport {
    pub fn ok(summary: impl Into<String>, artifacts: Vec<String>) -> Self {
        AgentReport {
            status: ReportStatus::Ok,
            summary: summary.into(),
            artifacts,
        }
    }

    /// Failed report; the summary always begins with "Job failed".
    pub fn failed(message: impl Into<String>) -> Self {
        let m = message.into();
        let summary = if m.starts_with(FAILED_PREFIX) {
            m
        } else {
            format!("{FAILED_PREFIX}: {m}")
        };
        AgentReport {
            status: ReportStatus::Failed,
            summary,
            artifacts: Vec::new(),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == ReportStatus::Ok
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Action {
    pub thought: String,
    pub tool: String,
    pub args: Json,
}

impl Action {
    pub fn new(thought: impl Into<String>, tool: &str, args: Json) -> Self {
        Action {
            thought: thought.into(),
            tool: tool.to_string(),
            args,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Decision {
    Act(Action),
    Finish(AgentReport),
}

/// One Thought/Action/Observation triple.
#[derive(Debug, Clone, PartialEq)]
pub struct Turn {
    pub thought: String,
    pub tool: String,
    pub args: Json,
    pub ok: bool,
    pub observation: Json,
}

impl Turn {
    pub fn error_text(&self) -> Option<&str> {
        if self.ok {
            None
        } else {
            self.observation.as_str()
        }
    }
}

/// Chooses the next step of a run. Policies see the canvas read-only;
/// all mutation goes through tools.
pub trait AgentPolicy {
    fn decide(&mut self, task: &Task, history: &[Turn], canvas: &Canvas) -> Decision;
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentRun {
    pub report: AgentReport,
    pub transcript: Vec<Turn>,
}

fn execute<C: CanvasHost>(
    config: &AgentConfig,
    registry: &ToolRegistry<C>,
    ctx: &mut C,
    action: Action,
) -> Turn {
    let result = if config.tools.contains(&action.tool) {
        registry.call(ctx, &action.tool, &action.args)
    } else {
        Err(format!(
            "tool {} is not available to agent {}; allowed: {}",
            action.tool,
            config.name,
            config.tools.join(", ")
        ))
    };
    let (ok, observation) = match result {
        Ok(v) => (true, v),
        Err(e) => (false, Json::String(e)),
    };
    log::debug!("{} -> {} ok={ok}", config.name, action.tool);
    Turn {
        thought: action.thought,
        tool: action.tool,
        args: action.args,
        ok,
        observation,
    }
}

/// Run one agent on one task until the policy finishes or `max_steps` tool calls are spent.
pub fn run_agent<C: CanvasHost>(
    config: &AgentConfig,
    registry: &ToolRegistry<C>,
    policy: &mut dyn AgentPolicy,
    task: &Task,
    ctx: &mut C,
) -> Result<AgentRun, AgentError> {
    config.check(registry)?;
    let mut transcript = vec![execute(
        config,
        registry,
        ctx,
        Action::new("Inspect the canvas before doing anything else.", INSPECT_TOOL, Json::Null),
    )];
    loop {
        match policy.decide(task, &transcript, ctx.canvas()) {
            Decision::Finish(report) => {
                let report = match report.status {
                    ReportStatus::Failed => AgentReport {
                        artifacts: report.artifacts,
                        ..AgentReport::failed(report.summary)
                    },
                    ReportStatus::Ok => report,
                };
                return Ok(AgentRun { report, transcript });
            }
            Decision::Act(action) => {
                if transcript.len() >= config.max_steps {
                    let report = AgentReport::failed(format!(
                        "max steps ({}) reached without a final answer",
                        config.max_steps
                    ));
                    return Ok(AgentRun { report, transcript });
                }
                transcript.push(execute(config, registry, ctx, action));
            }
        }
    }
}

/// Human-readable transcript for the audit log.
pub fn render_transcript(config: &AgentConfig, task: &Task, run: &AgentRun) -> String {
    let mut s = format!("agent: {}\ntask: {}\n\n", config.name, task.description);
    for (i, t) in run.transcript.iter().enumerate() {
        s.push_str(&format!(
            "[{}] Thought: {}\n    Action: {} {}\n    Observation{}: {}\n",
            i + 1,
            t.thought,
            t.tool,
            if t.args.is_null() { "{}".to_string() } else { t.args.to_string() },
            if t.ok { "" } else { " (error)" },
            t.observation
        ));
    }
    s.push_str(&format!("\nFinal Answer: {}\n", run.report.summary));
    s
}

/// External source of decisions, for plugging in a model service.
/// Replies are JSON: `{"thought": .., "action": .., "args": {..}}` or
/// `{"final": .., "status": "ok" | "failed"}`.
pub trait DecisionBackend {
    fn complete(&mut self, prompt: &str) -> Result<String, String>;
}

/// Policy that delegates every decision to a [`DecisionBackend`].
pub struct ExternalPolicy<B> {
    pub config: AgentConfig,
    pub tool_docs: String,
    pub backend: B,
}

impl<B: DecisionBackend> ExternalPolicy<B> {
    fn prompt(&self, task: &Task, history: &[Turn], canvas: &Canvas) -> String {
        let mut p = self.config.prompt();
        p.push_str("\n<Tools>:\n");
        p.push_str(&self.tool_docs);
        p.push_str(&format!("\n<Canvas keys>: {}\n\n<Task>: {}\n", canvas.inspect().join(", "), task.description));
        for t in history {
            p.push_str(&format!("Thought: {}\nAction: {} {}\nObservation: {}\n", t.thought, t.tool, t.args, t.observation));
        }
        p
    }
}

impl<B: DecisionBackend> AgentPolicy for ExternalPolicy<B> {
    fn decide(&mut self, task: &Task, history: &[Turn], canvas: &Canvas) -> Decision {
        let prompt = self.prompt(task, history, canvas);
        let reply = match self.backend.complete(&prompt) {
            Ok(r) => r,
            Err(e) => return Decision::Finish(AgentReport::failed(format!("decision backend error: {e}"))),
        };
        let parsed: Json = match serde_json::from_str(&reply) {
            Ok(v) => v,
            Err(e) => return Decision::Finish(AgentReport::failed(format!("unparseable decision: {e}"))),
        };
        if let Some(answer) = parsed.get("final").and_then(Json::as_str) {
            let failed = parsed.get("status").and_then(Json::as_str) == Some("failed");
            return Decision::Finish(if failed {
                AgentReport::failed(answer)
            } else {
                AgentReport::ok(answer, Vec::new())
            });
        }
        match parsed.get("action").and_then(Json::as_str) {
            Some(tool) => Decision::Act(Action::new(
                parsed.get("thought").and_then(Json::as_str).unwrap_or(""),
                tool,
                parsed.get("args").cloned().unwrap_or(Json::Null),
            )),
            None => Decision::Finish(AgentReport::failed("decision has neither an action nor a final answer")),
        }
    }
}
