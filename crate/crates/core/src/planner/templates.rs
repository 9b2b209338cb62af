//! Template-plus-rules planner policy.
//!
//! Initial plans are fixed templates per objective family. Replanning rules:
//! a failed submission inserts a repair triple (modify inputs, add resources,
//! resubmit) up to the repair limit; a production input set missing one of the
//! required systems gains a generation step for it; any other failure ends
//! the workflow.

use std::collections::BTreeSet;
use std::sync::LazyLock;

use regex::Regex;

use super::{
    Batch, Objective, PlanEdit, PlanError, PlanStep, PlannerPolicy, RecordStatus, StepKind, StepRecord, StepStatus,
    Target, DFT_WORKER, HPC_WORKER,
};
use crate::qeio::Functional;
use crate::structlab::{parse_symbols, SiteKind};

pub const DEFAULT_REPAIR_LIMIT: u32 = 3;

/// Tags workers put in generation summaries, one per input file.
static CLASS_TAG: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\[(slab\+adsorbate|slab|molecule)\]").expect("valid regex"));

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplatePolicy {
    pub repair_limit: u32,
}

impl Default for TemplatePolicy {
    fn default() -> Self {
        TemplatePolicy {
            repair_limit: DEFAULT_REPAIR_LIMIT,
        }
    }
}

fn dft(d: impl Into<String>, k: StepKind) -> PlanStep {
    PlanStep::new(d, DFT_WORKER, k)
}

fn hpc(d: impl Into<String>, k: StepKind) -> PlanStep {
    PlanStep::new(d, HPC_WORKER, k)
}

/// "Pt", "Pt and C", "Pt, C, and O".
fn species_phrase(species: &[String]) -> String {
    match species {
        [] => String::new(),
        [a] => a.clone(),
        [a, b] => format!("{a} and {b}"),
        [init @ .., last] => format!("{}, and {last}", init.join(", ")),
    }
}

fn surface_species(metal: &str, adsorbate: &str) -> Vec<String> {
    let mut v = vec![metal.to_string()];
    for s in parse_symbols(adsorbate).unwrap_or_default() {
        if !v.contains(&s) {
            v.push(s);
        }
    }
    v
}

fn lattice_plan(element: &str, lattice: &str, a: f64) -> Vec<PlanStep> {
    let lat = lattice.to_ascii_uppercase();
    vec![
        dft(format!("Create initial structure of {lat} {element} with experimental lattice constant of {a} Å"), StepKind::CreateBulk),
        dft(format!("Find appropriate pseudopotential for {element}"), StepKind::FindPseudo),
        dft(format!("Write initial DFT script for {lat} {element}"), StepKind::WriteTemplate),
        dft("Generate convergence test input files for cutoff energy and k-points", StepKind::GenConvergence),
        hpc("Add resource suggestions for convergence test jobs", StepKind::AddResources(Batch::Convergence)),
        hpc("Submit convergence test jobs to HPC and monitor completion", StepKind::Submit(Batch::Convergence)),
        dft("Determine optimal parameters from convergence test results", StepKind::DetermineParams),
        dft("Generate equation of state (EOS) calculation input files using optimal parameters", StepKind::GenEos),
        hpc("Add resource suggestions for EOS calculation jobs", StepKind::AddResources(Batch::Eos)),
        hpc("Submit EOS calculation jobs to HPC and monitor completion", StepKind::Submit(Batch::Eos)),
        dft("Read output files to extract energy values", StepKind::ReadEnergies(Batch::Eos)),
        dft("Calculate equilibrium lattice constant from EOS data", StepKind::CalcLattice),
        dft("Compare calculated lattice constant with experimental value and report results", StepKind::CompareLattice),
    ]
}

fn surface_prefix(metal: &str, facet: &str, adsorbate: &str, cell: [usize; 2], functional: Functional) -> Vec<PlanStep> {
    let surf = format!("{metal}({facet})");
    let p = format!("p({}x{})", cell[0], cell[1]);
    vec![
        dft(format!("Create initial structure for {surf} surface with {p} cell"), StepKind::CreateSlab),
        dft(
            format!("Create {adsorbate} molecule and place it at FCC site on {surf} surface with different orientations"),
            StepKind::PlaceAdsorbate(SiteKind::Fcc),
        ),
        dft(
            format!("Create {adsorbate} molecule and place it at ontop site on {surf} surface with different orientations"),
            StepKind::PlaceAdsorbate(SiteKind::Ontop),
        ),
        dft(format!("Create clean {surf} surface with {p} cell for reference calculation"), StepKind::CreateCleanSlab),
        dft(
            format!("Find appropriate pseudopotentials for {}", species_phrase(&surface_species(metal, adsorbate))),
            StepKind::FindPseudo,
        ),
        dft(format!("Write initial DFT script with {functional} exchange-correlation functional"), StepKind::WriteTemplate),
        dft(format!("Generate convergence test input files for {adsorbate} on {surf} system"), StepKind::GenConvergence),
        hpc("Add resource suggestions for convergence test jobs", StepKind::AddResources(Batch::Convergence)),
        hpc("Submit convergence test jobs to HPC and wait for completion", StepKind::Submit(Batch::Convergence)),
        dft("Determine optimal parameters from convergence test results", StepKind::DetermineParams),
    ]
}

fn adsorption_plan(metal: &str, facet: &str, adsorbate: &str, functional: Functional, cell: [usize; 2]) -> Vec<PlanStep> {
    let surf = format!("{metal}({facet})");
    let mut v = surface_prefix(metal, facet, adsorbate, cell, functional);
    v.extend([
        dft(
            format!("Generate input files for {adsorbate} at FCC site with different orientations using optimal parameters"),
            StepKind::GenProduction(Target::Site(SiteKind::Fcc)),
        ),
        dft(
            format!("Generate input files for {adsorbate} at ontop site with different orientations using optimal parameters"),
            StepKind::GenProduction(Target::Site(SiteKind::Ontop)),
        ),
        dft(
            format!("Generate input file for clean {surf} surface using optimal parameters"),
            StepKind::GenProduction(Target::CleanSlab),
        ),
        hpc("Add resource suggestions for production calculations", StepKind::AddResources(Batch::Production)),
        hpc("Submit production jobs to HPC and wait for completion", StepKind::Submit(Batch::Production)),
        dft("Extract energies from output files for all configurations", StepKind::ReadEnergies(Batch::Production)),
        dft("Calculate adsorption energies for all configurations", StepKind::CalcAdsorption),
        dft(
            "Identify most favorable configuration at FCC site and most favorable configuration at ontop site",
            StepKind::IdentifyFavorable,
        ),
        dft(
            "Calculate adsorption energy difference between most favorable FCC and ontop configurations",
            StepKind::CalcDeltaBe,
        ),
        dft("Compare results with literature value and assess accuracy", StepKind::CompareAdsorption),
    ]);
    v
}

fn ensemble_plan(metal: &str, facet: &str, adsorbate: &str, cell: [usize; 2]) -> Vec<PlanStep> {
    let surf = format!("{metal}({facet})");
    let mut v = surface_prefix(metal, facet, adsorbate, cell, Functional::BeefVdw);
    v.extend([
        dft(
            format!(
                "Generate BEEF ensemble input files for {adsorbate} at FCC and ontop sites, clean {surf} surface and isolated {adsorbate} molecule"
            ),
            StepKind::GenEnsemble,
        ),
        hpc("Add resource suggestions for ensemble calculations", StepKind::AddResources(Batch::Ensemble)),
        hpc("Submit ensemble jobs to HPC and wait for completion", StepKind::Submit(Batch::Ensemble)),
        dft("Analyze BEEF ensemble results for the adsorption energy difference", StepKind::AnalyzeBeef),
        dft("Report ensemble mean, spread and site preference", StepKind::ReportBeef),
    ]);
    v
}

fn repair_triple(batch: Batch, round: u32) -> [PlanStep; 3] {
    let noun = batch.noun();
    let (modify, add, submit) = match round {
        1 => (
            "Modify DFT input files to increase convergence criteria".to_string(),
            format!("Add resource suggestions for modified {noun} calculations"),
            format!("Submit modified {noun} jobs to HPC and wait for completion"),
        ),
        2 => (
            "Modify DFT input files with more aggressive convergence settings".to_string(),
            "Add resource suggestions for the newly modified calculations".to_string(),
            "Submit modified jobs to HPC and wait for completion".to_string(),
        ),
        n => (
            format!("Modify DFT input files with further convergence adjustments (round {n})"),
            format!("Add resource suggestions for the round {n} modified calculations"),
            format!("Submit round {n} modified jobs to HPC and wait for completion"),
        ),
    };
    [
        dft(modify, StepKind::Repair { batch, round }),
        hpc(add, StepKind::AddResources(batch)),
        hpc(submit, StepKind::Submit(batch)),
    ]
}

fn missing_targets(objective: &Objective, plan: &[PlanStep], past: &[StepRecord]) -> Vec<Target> {
    if !matches!(objective, Objective::Adsorption { .. }) {
        return Vec::new();
    }
    let generated: BTreeSet<&str> = plan
        .iter()
        .filter(|s| matches!(s.status, StepStatus::Done | StepStatus::Failed))
        .zip(past)
        .filter(|(s, _)| matches!(s.kind, StepKind::GenProduction(_)))
        .flat_map(|(_, r)| CLASS_TAG.captures_iter(&r.summary).map(|c| c.get(1).expect("group").as_str()))
        .collect();
    let queued = |t: Target| {
        plan.iter()
            .any(|s| s.status == StepStatus::Pending && s.kind == StepKind::GenProduction(t))
    };
    let mut out = Vec::new();
    if !generated.contains("slab+adsorbate") {
        out.extend([Target::Site(SiteKind::Fcc), Target::Site(SiteKind::Ontop)]);
    }
    if !generated.contains("slab") {
        out.push(Target::CleanSlab);
    }
    if !generated.contains("molecule") {
        out.push(Target::Molecule);
    }
    out.retain(|&t| !queued(t));
    out
}

fn generation_step(objective: &Objective, t: Target) -> PlanStep {
    let Objective::Adsorption { metal, facet, adsorbate, .. } = objective else {
        unreachable!("production generation only exists for adsorption objectives")
    };
    let d = match t {
        Target::Molecule => format!("Generate input file for isolated {adsorbate} molecule using optimal parameters"),
        Target::CleanSlab => format!("Generate input file for clean {metal}({facet}) surface using optimal parameters"),
        Target::Site(site) => format!(
            "Generate input files for {adsorbate} at {} site with different orientations using optimal parameters",
            if site == SiteKind::Fcc { "FCC".to_string() } else { site.name().to_string() }
        ),
    };
    dft(d, StepKind::GenProduction(t))
}

impl PlannerPolicy for TemplatePolicy {
    fn initial_plan(&self, objective: &str) -> Result<Vec<PlanStep>, PlanError> {
        let o = Objective::parse(objective).ok_or_else(|| PlanError::UnsupportedObjective(objective.to_string()))?;
        Ok(match &o {
            Objective::LatticeConstant { element, lattice, a_exp } => lattice_plan(element, lattice, *a_exp),
            Objective::Adsorption {
                metal,
                facet,
                adsorbate,
                functional,
                supercell,
            } => adsorption_plan(metal, facet, adsorbate, *functional, *supercell),
            Objective::Ensemble {
                metal,
                facet,
                adsorbate,
                supercell,
            } => ensemble_plan(metal, facet, adsorbate, *supercell),
        })
    }

    fn decide(&self, objective: &str, plan: &[PlanStep], past: &[StepRecord]) -> Result<Vec<PlanEdit>, PlanError> {
        let o = Objective::parse(objective).ok_or_else(|| PlanError::UnsupportedObjective(objective.to_string()))?;
        let Some(last_idx) = plan.iter().rposition(|s| matches!(s.status, StepStatus::Done | StepStatus::Failed)) else {
            return Ok(Vec::new());
        };
        let step = &plan[last_idx];
        let Some(record) = past.last() else {
            return Ok(Vec::new());
        };
        let pending_after = plan[last_idx + 1..].iter().find(|s| s.status == StepStatus::Pending);

        if record.status == RecordStatus::Failed {
            if let StepKind::Submit(batch) = step.kind {
                if matches!(pending_after.map(|s| s.kind), Some(StepKind::Repair { .. })) {
                    return Ok(Vec::new());
                }
                let rounds = plan
                    .iter()
                    .filter(|s| matches!(s.kind, StepKind::Repair { batch: b, .. } if b == batch))
                    .count() as u32;
                if rounds >= self.repair_limit {
                    return Err(PlanError::LoopLimitExceeded { limit: self.repair_limit });
                }
                return Ok(repair_triple(batch, rounds + 1)
                    .into_iter()
                    .enumerate()
                    .map(|(k, s)| PlanEdit::Insert { index: last_idx + 1 + k, step: s })
                    .collect());
            }
            return Ok(vec![PlanEdit::Finish {
                response: format!("Workflow stopped at \"{}\": {}", record.description, record.summary),
            }]);
        }

        if matches!(step.kind, StepKind::GenProduction(_))
            && !matches!(pending_after.map(|s| s.kind), Some(StepKind::GenProduction(_)))
        {
            let missing = missing_targets(&o, plan, past);
            if !missing.is_empty() {
                return Ok(missing
                    .into_iter()
                    .enumerate()
                    .map(|(k, t)| PlanEdit::Insert {
                        index: last_idx + 1 + k,
                        step: generation_step(&o, t),
                    })
                    .collect());
            }
        }

        if pending_after.is_none() && !plan.iter().any(|s| s.status == StepStatus::Pending) {
            return Ok(vec![PlanEdit::Finish {
                response: record.summary.clone(),
            }]);
        }
        Ok(Vec::new())
    }
}
