//! Rule-based SCF convergence doctor.
//!
//! Level 1: electron_maxstep 300 (when the run hit the cap while still
//! improving), degauss 0.03 for smeared occupations.
//! Level 2 adds mixing_beta 0.3, mixing_mode local-TF, startingwfc atomic+random.
//! Level 3 adds ecutwfc 80, diagonalization david with david_ndim 4, conv_thr 1e-5.
//! Levels are cumulative. The level is `attempt + 1`, where `attempt` is the
//! number of repair rounds recorded in the input's extras.

use std::fmt;

use thiserror::Error;

use crate::qeio::{parse_input_str, parse_output_str, CalcSpec, OutputSummary, ParseMode, QeError};

pub const ATTEMPT_KEY: &str = "attempt";
pub const MAX_LEVEL: u32 = 3;

#[derive(Debug, Error)]
pub enum DoctorError {
    #[error("cannot parse input document: {0}")]
    Input(QeError),
    #[error("cannot parse output document: {0}")]
    Output(QeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SuggestionAction {
    Set,
    Add,
    /// Raise to the value; never lowers.
    IncreaseTo,
}

impl fmt::Display for SuggestionAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SuggestionAction::Set => "set",
            SuggestionAction::Add => "add",
            SuggestionAction::IncreaseTo => "increase-to",
        })
    }
}

impl std::str::FromStr for SuggestionAction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "set" => Ok(SuggestionAction::Set),
            "add" => Ok(SuggestionAction::Add),
            "increase-to" => Ok(SuggestionAction::IncreaseTo),
            other => Err(format!("unknown suggestion action {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Suggestion {
    pub parameter: String,
    pub action: SuggestionAction,
    pub value: String,
    pub reason: String,
}

impl Suggestion {
    pub fn new(parameter: &str, action: SuggestionAction, value: &str, reason: &str) -> Self {
        Suggestion {
            parameter: parameter.into(),
            action,
            value: value.into(),
            reason: reason.into(),
        }
    }
}

impl fmt::Display for Suggestion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {} ({})", self.parameter, self.action, self.value, self.reason)
    }
}

/// Repair level for the next attempt on this input.
pub fn escalation_level(spec: &CalcSpec) -> u32 {
    let attempt = spec
        .get_param(ATTEMPT_KEY)
        .and_then(|v| v.parse::<u32>().ok())
        .unwrap_or(0);
    (attempt + 1).min(MAX_LEVEL)
}

fn still_improving(out: &OutputSummary) -> bool {
    let s = &out.accuracy_series;
    let tail = &s[s.len().saturating_sub(5)..];
    tail.len() >= 2 && tail.windows(2).all(|w| w[1] < w[0])
}

fn level_rules(level: u32, spec: &CalcSpec, out: &OutputSummary) -> Vec<Suggestion> {
    use SuggestionAction::*;
    let mut v = Vec::new();
    if out.n_scf as u32 == spec.electron_maxstep && still_improving(out) {
        v.push(Suggestion::new(
            "electron_maxstep",
            IncreaseTo,
            "300",
            &format!(
                "The calculation stopped at {} iterations but was still making progress",
                spec.electron_maxstep
            ),
        ));
    }
    if spec.occupations == "smearing" {
        v.push(Suggestion::new("degauss", IncreaseTo, "0.03", "helps with metallic systems"));
    }
    if level >= 2 {
        v.push(Suggestion::new(
            "mixing_beta",
            Add,
            "0.3",
            &format!("The current value of {} is too high, leading to charge sloshing", spec.mixing_beta),
        ));
        v.push(Suggestion::new(
            "mixing_mode",
            Set,
            "local-TF",
            "Switching from plain mixing to local-TF can help with difficult convergence cases",
        ));
        v.push(Suggestion::new(
            "startingwfc",
            Set,
            "atomic+random",
            "Using a better initial guess for wavefunctions can accelerate convergence",
        ));
    }
    if level >= 3 {
        v.push(Suggestion::new(
            "ecutwfc",
            IncreaseTo,
            "80.0",
            "higher cutoff needed for ultrasoft pseudopotentials with transition metals",
        ));
        v.push(Suggestion::new("diagonalization", Set, "david", "explicitly select david"));
        v.push(Suggestion::new("david_ndim", Add, "4", "a higher david_ndim might help"));
        v.push(Suggestion::new("conv_thr", Set, "1.0e-5", "a looser threshold helps reach convergence faster"));
    }
    v
}

/// Entries the rule levels never apply; returned only when the question names them.
fn on_request(question: &str) -> Vec<Suggestion> {
    use SuggestionAction::*;
    let q = question.to_ascii_lowercase();
    let mut v = Vec::new();
    if q.contains("magnetization") {
        v.push(Suggestion::new(
            "starting_magnetization(1)",
            Add,
            "0.1",
            "helps break symmetry for transition metals",
        ));
    }
    if q.contains("vacuum") {
        v.push(Suggestion::new(
            "vacuum",
            IncreaseTo,
            "15.0",
            "current vacuum might be insufficient for adsorption (cell z-dimension)",
        ));
    }
    if q.contains("scf_must_converge") || q.contains("must converge") {
        v.push(Suggestion::new(
            "scf_must_converge",
            Set,
            ".false.",
            "intermediate relaxation steps may proceed without full SCF convergence",
        ));
    }
    v
}

/// Suggestions for one job from its input and output documents.
pub fn doctor_suggest(input_text: &str, output_text: &str, question: &str) -> Result<Vec<Suggestion>, DoctorError> {
    let (spec, _) = parse_input_str(input_text, ParseMode::Lenient).map_err(DoctorError::Input)?;
    let out = parse_output_str(output_text).map_err(DoctorError::Output)?;
    if out.converged {
        return Ok(Vec::new());
    }
    let mut v = level_rules(escalation_level(&spec), &spec, &out);
    v.extend(on_request(question));
    Ok(v)
}

/// Apply suggestions with set semantics; applying twice equals applying once.
pub fn apply_suggestions(spec: &CalcSpec, suggestions: &[Suggestion]) -> Result<CalcSpec, QeError> {
    let mut next = spec.clone();
    for s in suggestions {
        let value = match s.action {
            SuggestionAction::IncreaseTo => {
                let cur = next.get_param(&s.parameter).and_then(|c| crate::qeio::parse_fortran_f64(&c));
                let new = crate::qeio::parse_fortran_f64(&s.value);
                match (cur, new) {
                    (Some(c), Some(n)) if c >= n => continue,
                    _ => s.value.clone(),
                }
            }
            SuggestionAction::Set | SuggestionAction::Add => s.value.clone(),
        };
        next.set_param(&s.parameter, &value)?;
    }
    Ok(next)
}
