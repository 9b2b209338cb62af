//! The three end-to-end pipelines and their extracted results.

use std::path::{Path, PathBuf};

use serde_json::Value as Json;

use super::engine::{run_workflow, Outcome, WorkflowRun};
use super::reference::Sol27Entry;
use super::{keys, value_to_json, Settings, Workspace, WorkflowError};
use crate::canvas::Canvas;
use crate::hpcsim::ClusterSpec;
use crate::planner::{Batch, Objective, StepKind};
use crate::qeio::{find_pseudopotential, Functional, PseudoCatalog};
use crate::structlab::{parse_symbols, Orientation, SiteKind};
use crate::surrogate::FixtureLibrary;

pub use super::policy::MIN_ENSEMBLE;

/// Shared inputs of every pipeline.
#[derive(Debug, Clone)]
pub struct Environment {
    pub fixtures: FixtureLibrary,
    pub cluster: ClusterSpec,
    pub catalog: PseudoCatalog,
    pub settings: Settings,
}

impl Environment {
    pub fn builtin(settings: Settings) -> Self {
        Environment {
            fixtures: FixtureLibrary::builtin(),
            cluster: ClusterSpec::builtin(),
            catalog: PseudoCatalog::builtin(),
            settings,
        }
    }

    fn workspace(&self, workdir: &Path) -> Result<Workspace, WorkflowError> {
        Workspace::new(workdir, self.fixtures.clone(), self.cluster.clone(), self.catalog.clone(), self.settings.clone())
    }

    /// Fails with the catalog's message when an element has no pseudopotential.
    fn check_elements(&self, symbols: &[String]) -> Result<(), WorkflowError> {
        for el in symbols {
            find_pseudopotential(el, &self.catalog).map_err(|e| WorkflowError::Setup(e.to_string()))?;
        }
        Ok(())
    }
}

/// One finished workflow and where it ran.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub workdir: PathBuf,
    pub run: WorkflowRun,
    pub canvas: Canvas,
}

impl PipelineRun {
    pub fn outcome(&self) -> Outcome {
        self.run.outcome
    }

    fn get(&self, key: &str) -> Option<Json> {
        self.canvas.read(key).ok().map(value_to_json)
    }

    /// Submit steps in execution order with their (jobs, failed) counts.
    pub fn submissions(&self) -> Vec<(Batch, usize, usize)> {
        let records = self
            .get(keys::SUBMISSIONS)
            .and_then(|v| v.as_array().cloned())
            .unwrap_or_default();
        self.run
            .state
            .history()
            .filter_map(|(step, _)| match step.kind {
                StepKind::Submit(b) => Some(b),
                _ => None,
            })
            .zip(records)
            .map(|(b, r)| {
                let n = |k: &str| r[k].as_f64().unwrap_or(0.0) as usize;
                (b, n("jobs"), n("failed"))
            })
            .collect()
    }

    pub fn repair_rounds(&self, batch: Batch) -> u32 {
        self.run
            .state
            .history()
            .filter(|(s, _)| matches!(s.kind, StepKind::Repair { batch: b, .. } if b == batch))
            .count() as u32
    }
}

fn run(env: &Environment, workdir: &Path, objective: &Objective) -> Result<PipelineRun, WorkflowError> {
    let mut ws = env.workspace(workdir)?;
    let run = run_workflow(&mut ws, objective)?;
    Ok(PipelineRun {
        workdir: workdir.to_path_buf(),
        run,
        canvas: ws.canvas,
    })
}

#[derive(Debug, Clone)]
pub struct LatticeRow {
    pub entry: Sol27Entry,
    pub a_computed: Option<f64>,
    pub ecutwfc: Option<f64>,
    pub kgrid: Option<[u32; 3]>,
    pub run: PipelineRun,
}

impl LatticeRow {
    /// Signed error against the expert value, percent.
    pub fn error_vs_expert(&self) -> Option<f64> {
        self.a_computed.map(|a| 100.0 * (a - self.entry.a_expert) / self.entry.a_expert)
    }
}

#[derive(Debug, Clone)]
pub struct LatticeResult {
    pub rows: Vec<LatticeRow>,
}

impl LatticeResult {
    /// First unsuccessful outcome, or success.
    pub fn outcome(&self) -> Outcome {
        self.rows
            .iter()
            .map(|r| r.run.outcome())
            .find(|o| *o != Outcome::Success)
            .unwrap_or(Outcome::Success)
    }

    /// Mean absolute percentage error against the expert column for one lattice class.
    pub fn mape(&self, lattice: &str) -> Option<f64> {
        let errs: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.entry.lattice == lattice)
            .filter_map(LatticeRow::error_vs_expert)
            .map(f64::abs)
            .collect();
        (!errs.is_empty()).then(|| errs.iter().sum::<f64>() / errs.len() as f64)
    }
}

/// Lattice-constant workflow for each entry, each in `root/<system>`.
pub fn run_lattice(env: &Environment, root: &Path, entries: &[Sol27Entry]) -> Result<LatticeResult, WorkflowError> {
    let mut rows = Vec::new();
    for e in entries {
        env.check_elements(std::slice::from_ref(&e.system))?;
        let objective = Objective::LatticeConstant {
            element: e.system.clone(),
            lattice: e.lattice.clone(),
            a_exp: e.a_exp,
        };
        let run = run(env, &root.join(&e.system), &objective)?;
        let conv = run.get(keys::CONVERGED_PARAMETERS);
        rows.push(LatticeRow {
            entry: e.clone(),
            a_computed: run.get(keys::LATTICE_CONSTANT).and_then(|v| v.as_f64()),
            ecutwfc: conv.as_ref().and_then(|c| c["ecutwfc"].as_f64()),
            kgrid: conv
                .and_then(|c| serde_json::from_value::<[f64; 3]>(c["kgrid"].clone()).ok())
                .map(|k| k.map(|n| n as u32)),
            run,
        });
    }
    Ok(LatticeResult { rows })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigEnergy {
    pub file: String,
    pub site: SiteKind,
    pub orientation: Orientation,
    /// eV
    pub e_ads: f64,
}

#[derive(Debug, Clone)]
pub struct AdsorptionResult {
    pub functional: Functional,
    pub configs: Vec<ConfigEnergy>,
    /// Lowest-energy configuration per site, fcc then ontop.
    pub favored: Option<(ConfigEnergy, ConfigEnergy)>,
    /// E_ads(ontop) - E_ads(fcc), eV.
    pub delta_be: Option<f64>,
    /// Failed and total jobs of the first production submission.
    pub initial_failures: Option<(usize, usize)>,
    pub repair_rounds: u32,
    pub run: PipelineRun,
}

impl AdsorptionResult {
    pub fn favored_site(&self) -> Option<SiteKind> {
        self.delta_be.map(|d| if d > 0.0 { SiteKind::Fcc } else { SiteKind::Ontop })
    }
}

/// Site and orientation from a configuration name such as `Pt111_CO_fcc_upright.pwi`.
fn parse_config(file: &str) -> Option<(SiteKind, Orientation)> {
    let stem = file.strip_suffix(".pwi")?;
    let mut parts = stem.rsplit('_');
    let o = Orientation::parse(parts.next()?)?;
    let s = SiteKind::parse(parts.next()?)?;
    Some((s, o))
}

fn surface_symbols(metal: &str, adsorbate: &str) -> Result<Vec<String>, WorkflowError> {
    let mut v = vec![metal.to_string()];
    v.extend(parse_symbols(adsorbate).map_err(|e| WorkflowError::Setup(e.to_string()))?);
    Ok(v)
}

pub fn run_adsorption(
    env: &Environment,
    workdir: &Path,
    metal: &str,
    facet: &str,
    adsorbate: &str,
    functional: Functional,
    supercell: [usize; 2],
) -> Result<AdsorptionResult, WorkflowError> {
    env.check_elements(&surface_symbols(metal, adsorbate)?)?;
    let objective = Objective::Adsorption {
        metal: metal.into(),
        facet: facet.into(),
        adsorbate: adsorbate.into(),
        functional,
        supercell,
    };
    let run = run(env, workdir, &objective)?;
    let mut configs: Vec<ConfigEnergy> = run
        .get(keys::ADSORPTION_ENERGIES)
        .and_then(|v| v.as_object().cloned())
        .unwrap_or_default()
        .into_iter()
        .filter_map(|(file, e)| {
            let (site, orientation) = parse_config(&file)?;
            Some(ConfigEnergy {
                file,
                site,
                orientation,
                e_ads: e.as_f64()?,
            })
        })
        .collect();
    configs.sort_by_key(|c| (c.site, c.orientation));
    let best = |site: SiteKind| {
        configs
            .iter()
            .filter(|c| c.site == site)
            .min_by(|a, b| a.e_ads.total_cmp(&b.e_ads))
            .cloned()
    };
    let favored = best(SiteKind::Fcc).zip(best(SiteKind::Ontop));
    let delta_be = run.get(keys::DELTA_BE_EV).and_then(|v| v.as_f64());
    let initial_failures = run
        .submissions()
        .into_iter()
        .find(|(b, _, _)| *b == Batch::Production)
        .map(|(_, n, f)| (f, n));
    Ok(AdsorptionResult {
        functional,
        configs,
        favored,
        delta_be,
        initial_failures,
        repair_rounds: run.repair_rounds(Batch::Production),
        run,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeefSummary {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub sigma_distance: f64,
    pub route_discrepancy: f64,
    pub route_tolerance: f64,
}

#[derive(Debug, Clone)]
pub struct BeefResult {
    pub stats: Option<BeefSummary>,
    pub verdict: Option<String>,
    pub warnings: Vec<String>,
    pub run: PipelineRun,
}

/// BEEF-vdW ensemble workflow. `ensemble_size` overrides the fixture library's member count.
pub fn run_beef(
    env: &Environment,
    workdir: &Path,
    metal: &str,
    facet: &str,
    adsorbate: &str,
    supercell: [usize; 2],
    ensemble_size: Option<usize>,
) -> Result<BeefResult, WorkflowError> {
    env.check_elements(&surface_symbols(metal, adsorbate)?)?;
    let mut env = env.clone();
    if let Some(n) = ensemble_size {
        if n < 2 {
            return Err(WorkflowError::Setup(format!("an ensemble needs at least 2 members (got {n})")));
        }
        env.fixtures.constants.ensemble_size = n;
    }
    let objective = Objective::Ensemble {
        metal: metal.into(),
        facet: facet.into(),
        adsorbate: adsorbate.into(),
        supercell,
    };
    let run = run(&env, workdir, &objective)?;
    let stats = run.get(keys::BEEF_STATISTICS).and_then(|s| {
        let f = |k: &str| s[k].as_f64();
        Some(BeefSummary {
            n: s["n"].as_f64()? as usize,
            mean: f("mean_eV")?,
            std: f("std_eV")?,
            sigma_distance: match &s["sigma_distance"] {
                Json::String(x) if x == "inf" => f64::INFINITY,
                v => v.as_f64()?,
            },
            route_discrepancy: f("route_discrepancy_eV")?,
            route_tolerance: f("route_tolerance_eV")?,
        })
    });
    let mut warnings = Vec::new();
    if let Some(st) = &stats {
        if st.std == 0.0 || st.n < MIN_ENSEMBLE {
            warnings.push(format!(
                "ensemble σ from {} members is degenerate; the sigma distance does not support a site verdict",
                st.n
            ));
        }
        if st.route_discrepancy > st.route_tolerance {
            warnings.push(format!(
                "four-term and two-term ΔBE routes differ by {:.3e} eV (tolerance {:.3e} eV)",
                st.route_discrepancy, st.route_tolerance
            ));
        }
    }
    let verdict = run.get(keys::BEEF_VERDICT).and_then(|v| v.as_str().map(str::to_string));
    Ok(BeefResult {
        stats,
        verdict,
        warnings,
        run,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_names() {
        assert_eq!(parse_config("Pt111_CO_fcc_upright.pwi"), Some((SiteKind::Fcc, Orientation::Upright)));
        assert_eq!(parse_config("Pt111_CO_ontop_flipped.pwi"), Some((SiteKind::Ontop, Orientation::Flipped)));
        assert_eq!(parse_config("Pt111.pwi"), None);
    }
}
