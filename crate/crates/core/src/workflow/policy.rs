//! Scripted worker policies. Each step kind maps to a short sequence of
//! tool-call phases; a phase may look at earlier observations and the canvas.

use std::collections::{BTreeMap, VecDeque};
use std::path::{Path, PathBuf};

use serde_json::{json, Value as Json};

use super::reference::{adsorbate_geometry, co_pt111_delta_be, sol27_entry};
use super::{keys, value_to_json, Settings, TOOL_NAMES};
use crate::agentcore::{
    apply_suggestions, AgentConfig, AgentPolicy, AgentReport, Action, Decision, Suggestion, Task, Turn, ATTEMPT_KEY,
    INSPECT_TOOL,
};
use crate::canvas::Canvas;
use crate::hpcsim::{choose_partition, run_line, ClusterSpec};
use crate::numerics::delta_be;
use crate::planner::{Batch, Objective, StepKind, Target};
use crate::qeio::{parse_input, CalcSpec, Calculation, Functional};
use crate::structlab::{parse_symbols, read_traj, Orientation, SiteKind};
use crate::surrogate::FixtureClass;

/// What a script wants next.
#[derive(Debug, Clone, PartialEq)]
pub enum Phase {
    /// Run these tool calls in order; an empty list moves straight on.
    Act(Vec<Action>),
    Done(AgentReport),
}

pub trait Script {
    fn phase(&mut self, kind: StepKind, phase: usize, history: &[Turn], canvas: &Canvas) -> Result<Phase, String>;
}

/// Drives a [`Script`] as an agent policy. The first failed tool call ends the run.
pub struct Scripted<S> {
    script: S,
    next_phase: usize,
    queue: VecDeque<Action>,
}

impl<S: Script> Scripted<S> {
    pub fn new(script: S) -> Self {
        Scripted {
            script,
            next_phase: 0,
            queue: VecDeque::new(),
        }
    }
}

impl<S: Script> AgentPolicy for Scripted<S> {
    fn decide(&mut self, task: &Task, history: &[Turn], canvas: &Canvas) -> Decision {
        if let Some(t) = history.last().filter(|t| !t.ok) {
            return Decision::Finish(AgentReport::failed(format!(
                "{} returned an error: {}",
                t.tool,
                t.error_text().unwrap_or("unknown error")
            )));
        }
        loop {
            if let Some(a) = self.queue.pop_front() {
                return Decision::Act(a);
            }
            let n = self.next_phase;
            self.next_phase += 1;
            match self.script.phase(task.kind, n, history, canvas) {
                Err(e) => return Decision::Finish(AgentReport::failed(e)),
                Ok(Phase::Done(r)) => return Decision::Finish(r),
                Ok(Phase::Act(v)) => self.queue.extend(v),
            }
        }
    }
}

fn act(v: Vec<Action>) -> Result<Phase, String> {
    Ok(Phase::Act(v))
}

fn done(summary: impl Into<String>, artifacts: &[&str]) -> Result<Phase, String> {
    Ok(Phase::Done(AgentReport::ok(
        summary,
        artifacts.iter().map(|s| s.to_string()).collect(),
    )))
}

fn put(key: &str, value: Json) -> Action {
    Action::new(format!("Record {key} on the canvas."), "write_my_canvas", json!({"key": key, "value": value, "overwrite": true}))
}

fn read(canvas: &Canvas, key: &str) -> Result<Json, String> {
    canvas.read(key).map(value_to_json).map_err(|e| e.to_string())
}

fn read_str(canvas: &Canvas, key: &str) -> Result<String, String> {
    read(canvas, key)?.as_str().map(str::to_string).ok_or_else(|| format!("{key} is not a string"))
}

fn read_files(canvas: &Canvas, key: &str) -> Result<Vec<String>, String> {
    serde_json::from_value(read(canvas, key)?).map_err(|_| format!("{key} is not a list of file names"))
}

/// Observations of the last `n` turns.
fn recent(history: &[Turn], n: usize) -> Vec<&Json> {
    history[history.len().saturating_sub(n)..].iter().map(|t| &t.observation).collect()
}

fn last(history: &[Turn]) -> &Json {
    history.last().map(|t| &t.observation).unwrap_or(&Json::Null)
}

fn indices(n: usize) -> Json {
    json!((0..n).collect::<Vec<_>>())
}

fn pwi(traj: &str) -> String {
    format!("{}.pwi", traj.strip_suffix(".traj").unwrap_or(traj))
}

/// Arguments for `write_QE_script_w_ASE` that reproduce `spec` on `atoms`.
fn qe_args(spec: &CalcSpec, filename: &str, atoms: &str, nat: usize, ready: bool) -> Json {
    let elements: Vec<&String> = spec.pseudopotentials.keys().collect();
    let pps: Vec<&String> = spec.pseudopotentials.values().collect();
    let mut extra = serde_json::Map::new();
    extra.insert("mixing_beta".into(), json!(spec.mixing_beta));
    extra.insert("mixing_mode".into(), json!(spec.mixing_mode.to_string()));
    extra.insert("diagonalization".into(), json!(spec.diagonalization));
    extra.insert("startingwfc".into(), json!(spec.startingwfc));
    for (k, v) in &spec.extras {
        extra.insert(k.clone(), json!(v.trim_matches('\'')));
    }
    json!({
        "listofElements": elements,
        "ppfiles": pps,
        "filename": filename,
        "inputAtomsDir": atoms,
        "ensembleCalculation": spec.calculation == Calculation::Ensemble,
        "calculation": spec.calculation.to_string(),
        "restart_mode": spec.restart_mode.to_string(),
        "prefix": spec.prefix,
        "disk_io": spec.disk_io,
        "ibrav": spec.ibrav,
        "nat": nat,
        "ntyp": elements.len(),
        "ecutwfc": spec.ecutwfc,
        "ecutrho": spec.ecutrho,
        "occupations": spec.occupations,
        "smearing": spec.smearing,
        "degauss": spec.degauss,
        "conv_thr": spec.conv_thr,
        "electron_maxstep": spec.electron_maxstep,
        "kspacing": spec.kspacing,
        "input_dft": spec.input_dft.to_string(),
        "ready_to_run_job": ready,
        "additional_input": extra,
    })
}

fn write_qe(thought: &str, args: Json) -> Action {
    Action::new(thought, "write_QE_script_w_ASE", args)
}

/// DFT worker: structures, inputs, repair and analysis.
pub struct DftScript {
    pub objective: Objective,
    pub settings: Settings,
    pub workdir: PathBuf,
}

struct Surface<'a> {
    metal: &'a str,
    facet: &'a str,
    adsorbate: &'a str,
    functional: Functional,
    supercell: [usize; 2],
}

impl DftScript {
    fn path(&self, name: &str) -> PathBuf {
        self.workdir.join(name)
    }

    fn input(&self, name: &str) -> Result<(CalcSpec, crate::structlab::StructureModel), String> {
        parse_input(self.path(name)).map_err(|e| format!("{name}: {e}"))
    }

    fn nat_of(&self, file: &str) -> Result<usize, String> {
        let p = self.path(file);
        if file.ends_with(".traj") {
            read_traj(&p).map(|s| s.len()).map_err(|e| format!("{file}: {e}"))
        } else {
            self.input(file).map(|(_, s)| s.len())
        }
    }

    fn surface(&self) -> Result<Surface<'_>, String> {
        match &self.objective {
            Objective::Adsorption {
                metal,
                facet,
                adsorbate,
                functional,
                supercell,
            } => Ok(Surface {
                metal,
                facet,
                adsorbate,
                functional: *functional,
                supercell: *supercell,
            }),
            Objective::Ensemble {
                metal,
                facet,
                adsorbate,
                supercell,
            } => Ok(Surface {
                metal,
                facet,
                adsorbate,
                functional: Functional::BeefVdw,
                supercell: *supercell,
            }),
            Objective::LatticeConstant { .. } => Err("this step needs a surface objective".into()),
        }
    }

    /// Element, lattice and starting lattice constant of the bulk phase.
    fn bulk(&self) -> Result<(String, String, f64), String> {
        match &self.objective {
            Objective::LatticeConstant { element, lattice, a_exp } => Ok((element.clone(), lattice.clone(), *a_exp)),
            _ => {
                let metal = self.surface()?.metal;
                let e = sol27_entry(metal).ok_or_else(|| format!("no reference lattice data for {metal}"))?;
                Ok((e.system, e.lattice, e.a_exp))
            }
        }
    }

    fn species(&self) -> Result<Vec<String>, String> {
        match &self.objective {
            Objective::LatticeConstant { element, .. } => Ok(vec![element.clone()]),
            _ => {
                let s = self.surface()?;
                let mut v = vec![s.metal.to_string()];
                for x in parse_symbols(s.adsorbate).map_err(|e| e.to_string())? {
                    if !v.contains(&x) {
                        v.push(x);
                    }
                }
                Ok(v)
            }
        }
    }

    fn functional(&self) -> Functional {
        match &self.objective {
            Objective::LatticeConstant { .. } => Functional::Pbe,
            Objective::Adsorption { functional, .. } => *functional,
            Objective::Ensemble { .. } => Functional::BeefVdw,
        }
    }

    /// Template spec with the converged parameters applied.
    fn production_spec(&self, canvas: &Canvas, calc: Calculation) -> Result<CalcSpec, String> {
        let (mut spec, _) = self.input(&read_str(canvas, keys::TEMPLATE_INPUT)?)?;
        let conv = read(canvas, keys::CONVERGED_PARAMETERS)?;
        let num = |k: &str| conv[k].as_f64().ok_or_else(|| format!("converged_parameters lacks {k}"));
        spec.set_param("ecutwfc", &format!("{:?}", num("ecutwfc")?)).map_err(|e| e.to_string())?;
        spec.set_param("kspacing", &format!("{:?}", num("kspacing")?)).map_err(|e| e.to_string())?;
        let pps: BTreeMap<String, String> = serde_json::from_value(read(canvas, keys::PSEUDOPOTENTIALS)?)
            .map_err(|_| "pseudopotentials is not a record of file names".to_string())?;
        spec.calculation = calc;
        spec.pseudopotentials = pps;
        Ok(spec)
    }

    /// Write inputs for structure files, each restricted to its own species.
    fn production_inputs(&self, spec: &CalcSpec, trajs: &[String]) -> Result<(Vec<Action>, Vec<String>), String> {
        let mut actions = Vec::new();
        let mut files = Vec::new();
        for t in trajs {
            let s = read_traj(self.path(t)).map_err(|e| format!("{t}: {e}"))?;
            let mut sp = spec.clone();
            sp.pseudopotentials.retain(|el, _| s.species().contains(el));
            let name = pwi(t);
            sp.prefix = name.trim_end_matches(".pwi").to_string();
            actions.push(write_qe(&format!("Write the production input for {t}."), qe_args(&sp, &name, t, s.len(), true)));
            files.push(name);
        }
        Ok((actions, files))
    }

    fn class_tag(&self, file: &str) -> Result<&'static str, String> {
        Ok(FixtureClass::of(&self.input(file)?.1).name())
    }

    fn production_files(&self, canvas: &Canvas) -> Result<BTreeMap<&'static str, Vec<String>>, String> {
        let mut by_class: BTreeMap<&'static str, Vec<String>> = BTreeMap::new();
        for f in read_files(canvas, keys::PRODUCTION_JOBS)? {
            by_class.entry(self.class_tag(&f)?).or_default().push(f);
        }
        Ok(by_class)
    }

    fn one(&self, by_class: &BTreeMap<&'static str, Vec<String>>, class: FixtureClass) -> Result<String, String> {
        match by_class.get(class.name()).map(Vec::as_slice) {
            Some([f]) => Ok(f.clone()),
            Some(v) => Err(format!("expected one {} input, found {}", class.name(), v.len())),
            None => Err(format!("no {} input among the production jobs", class.name())),
        }
    }

    fn site_inputs(&self, canvas: &Canvas, site: SiteKind) -> Result<Vec<String>, String> {
        Ok(read_files(canvas, &keys::configurations(site.name()))?.iter().map(|t| pwi(t)).collect())
    }

    fn steps(&self, kind: StepKind, phase: usize, h: &[Turn], canvas: &Canvas) -> Result<Phase, String> {
        match kind {
            StepKind::CreateBulk => {
                let (el, lat, a) = self.bulk()?;
                match phase {
                    0 => act(vec![Action::new(
                        format!("Build {lat} {el} at a = {a} Å."),
                        "init_structure_data",
                        json!({"element": el, "lattice": lat, "a": a}),
                    )]),
                    1 => act(vec![put(keys::BULK_STRUCTURE, last(h)["file"].clone())]),
                    _ => {
                        let info = recent(h, 2)[0];
                        done(
                            format!("Created {} ({} atoms, {})", info["file"].as_str().unwrap_or(""), info["nat"], lat),
                            &[keys::BULK_STRUCTURE],
                        )
                    }
                }
            }
            StepKind::CreateSlab => {
                let s = self.surface()?;
                let (_, lat, a) = self.bulk()?;
                match phase {
                    0 => act(vec![Action::new(
                        format!("Build the {}({}) slab from the bulk lattice constant.", s.metal, s.facet),
                        "generateSurface_and_getPossibleSite",
                        json!({
                            "species": s.metal,
                            "crystal_structures": lat,
                            "a_dict": {s.metal: a},
                            "facets": s.facet,
                            "supercell_dim": [s.supercell[0], s.supercell[1], 6],
                        }),
                    )]),
                    1 => {
                        let o = last(h).clone();
                        act(vec![put(keys::SLAB_STRUCTURE, o["file"].clone()), put(keys::ADSORPTION_SITES, o["sites"].clone())])
                    }
                    _ => {
                        let o = recent(h, 3)[0];
                        done(
                            format!("Created {} with {} atoms; sites: ontop, bridge, fcc, hcp", o["file"].as_str().unwrap_or(""), o["nat"]),
                            &[keys::SLAB_STRUCTURE, keys::ADSORPTION_SITES],
                        )
                    }
                }
            }
            StepKind::PlaceAdsorbate(site) => {
                let s = self.surface()?;
                let ads_file = format!("{}.traj", s.adsorbate);
                match phase {
                    0 => {
                        if canvas.contains(keys::ADSORBATE_STRUCTURE) {
                            return act(vec![]);
                        }
                        let pos = adsorbate_geometry(s.adsorbate)
                            .ok_or_else(|| format!("no gas-phase geometry for {}", s.adsorbate))?;
                        act(vec![
                            Action::new(
                                format!("Create the {} molecule.", s.adsorbate),
                                "generate_myAdsorbate",
                                json!({"symbols": s.adsorbate, "positions": pos, "AdsorbateFileName": ads_file}),
                            ),
                            put(keys::ADSORBATE_STRUCTURE, json!(ads_file)),
                        ])
                    }
                    1 => {
                        let slab = read_str(canvas, keys::SLAB_STRUCTURE)?;
                        let sites = read(canvas, keys::ADSORPTION_SITES)?;
                        let xy = sites[site.name()].clone();
                        if xy.is_null() {
                            return Err(format!("no {site} site on {slab}"));
                        }
                        let ads = read_str(canvas, keys::ADSORBATE_STRUCTURE)?;
                        act(Orientation::ALL
                            .iter()
                            .map(|o| {
                                let rot: Vec<Json> = o.rotations().iter().map(|(d, ax)| json!([d, ax.to_string()])).collect();
                                Action::new(
                                    format!("Place {} {} at the {site} site.", s.adsorbate, o),
                                    "add_myAdsorbate",
                                    json!({
                                        "mySurfacePath": slab,
                                        "adsorbatePath": ads,
                                        "mySites": [xy],
                                        "rotations": rot,
                                        "surfaceWithAdsorbateFileName":
                                            format!("{}{}_{}_{}_{}.traj", s.metal, s.facet, s.adsorbate, site, o),
                                    }),
                                )
                            })
                            .collect())
                    }
                    2 => {
                        let files: Vec<Json> = recent(h, 3).iter().map(|o| o["file"].clone()).collect();
                        act(vec![put(&keys::configurations(site.name()), json!(files))])
                    }
                    _ => {
                        let files = read_files(canvas, &keys::configurations(site.name()))?;
                        done(
                            format!("Placed {} at the {site} site in {} orientations: {}", s.adsorbate, files.len(), files.join(", ")),
                            &[&keys::configurations(site.name())],
                        )
                    }
                }
            }
            StepKind::CreateCleanSlab => match phase {
                0 => act(vec![put(keys::REFERENCE_SLAB, json!(read_str(canvas, keys::SLAB_STRUCTURE)?))]),
                _ => done(
                    format!("Clean reference slab is {}", read_str(canvas, keys::REFERENCE_SLAB)?),
                    &[keys::REFERENCE_SLAB],
                ),
            },
            StepKind::FindPseudo => {
                let species = self.species()?;
                match phase {
                    0 => act(species
                        .iter()
                        .map(|el| Action::new(format!("Look up the pseudopotential for {el}."), "find_pseudopotential", json!({"element": el})))
                        .collect()),
                    1 => {
                        let found: BTreeMap<&String, &Json> = species.iter().zip(recent(h, species.len())).collect();
                        act(vec![put(keys::PSEUDOPOTENTIALS, json!(found))])
                    }
                    _ => {
                        let pps = read(canvas, keys::PSEUDOPOTENTIALS)?;
                        let list: Vec<String> = species.iter().map(|el| format!("{el}: {}", pps[el].as_str().unwrap_or("?"))).collect();
                        done(format!("Pseudopotentials: {}", list.join(", ")), &[keys::PSEUDOPOTENTIALS])
                    }
                }
            }
            StepKind::WriteTemplate => {
                let (el, lat, a) = self.bulk()?;
                let bulk = format!("{el}_{lat}.traj");
                let name = format!("{el}_template.pwi");
                match phase {
                    0 => {
                        if matches!(self.objective, Objective::LatticeConstant { .. }) {
                            return act(vec![]);
                        }
                        act(vec![Action::new(
                            format!("Convergence tests run on bulk {el}; build it at a = {a} Å."),
                            "init_structure_data",
                            json!({"element": el, "lattice": lat, "a": a}),
                        )])
                    }
                    1 => {
                        let pps = read(canvas, keys::PSEUDOPOTENTIALS)?;
                        let pp = pps[&el].as_str().ok_or_else(|| format!("no pseudopotential recorded for {el}"))?;
                        let mut spec = CalcSpec {
                            prefix: el.clone(),
                            input_dft: self.functional(),
                            ..CalcSpec::default()
                        };
                        spec.pseudopotentials.insert(el.clone(), pp.to_string());
                        act(vec![
                            write_qe(
                                &format!("Write the {} template for bulk {el}.", spec.input_dft),
                                qe_args(&spec, &name, &bulk, self.nat_of(&bulk)?, false),
                            ),
                            put(keys::TEMPLATE_INPUT, json!(name)),
                        ])
                    }
                    _ => done(
                        format!("Wrote {name} ({} functional, methfessel-paxton smearing)", self.functional()),
                        &[keys::TEMPLATE_INPUT],
                    ),
                }
            }
            StepKind::GenConvergence => match phase {
                0 => act(vec![Action::new(
                    "Scan ecutwfc at the finest k-spacing and k-spacing at the highest cutoff.",
                    "generate_convergence_test",
                    json!({
                        "input_file_name": read_str(canvas, keys::TEMPLATE_INPUT)?,
                        "kspacing": [0.25, 0.2, 0.15, 0.1],
                        "ecutwfc": [30, 40, 50, 60, 70, 120],
                    }),
                )]),
                1 => act(vec![put(keys::CONVERGENCE_JOBS, last(h)["jobs"].clone())]),
                _ => {
                    let jobs = read_files(canvas, keys::CONVERGENCE_JOBS)?;
                    done(format!("Generated {} convergence test inputs: {}", jobs.len(), jobs.join(", ")), &[keys::CONVERGENCE_JOBS])
                }
            },
            StepKind::DetermineParams => match phase {
                0 => {
                    let n = read_files(canvas, keys::CONVERGENCE_JOBS)?.len();
                    act(vec![Action::new(
                        "Pick the cheapest parameters whose tail stays within the threshold.",
                        "get_kspacing_ecutwfc",
                        json!({"jobFileIdx": indices(n), "threshold": self.settings.threshold_mev}),
                    )])
                }
                1 => act(vec![put(keys::CONVERGED_PARAMETERS, last(h).clone())]),
                _ => {
                    let c = read(canvas, keys::CONVERGED_PARAMETERS)?;
                    let k: Vec<String> = c["kgrid"]
                        .as_array()
                        .map(|v| v.iter().map(|n| format!("{}", n.as_f64().unwrap_or(0.0))).collect())
                        .unwrap_or_default();
                    done(
                        format!(
                            "Converged parameters: ecutwfc = {} Ry, kspacing = {} 1/Å (k-grid {})",
                            c["ecutwfc"].as_f64().unwrap_or(f64::NAN),
                            c["kspacing"].as_f64().unwrap_or(f64::NAN),
                            k.join("x")
                        ),
                        &[keys::CONVERGED_PARAMETERS],
                    )
                }
            },
            StepKind::GenEos => match phase {
                0 => {
                    let c = read(canvas, keys::CONVERGED_PARAMETERS)?;
                    act(vec![Action::new(
                        "Scale the cell around the experimental volume.",
                        "generate_eos_test",
                        json!({
                            "input_file_name": read_str(canvas, keys::TEMPLATE_INPUT)?,
                            "kspacing": c["kspacing"],
                            "ecutwfc": c["ecutwfc"].as_f64().unwrap_or(0.0).round() as i64,
                            "stepSize": self.settings.eos_step,
                        }),
                    )])
                }
                1 => act(vec![put(keys::EOS_JOBS, last(h)["jobs"].clone())]),
                _ => {
                    let jobs = read_files(canvas, keys::EOS_JOBS)?;
                    done(format!("Generated {} EOS inputs: {}", jobs.len(), jobs.join(", ")), &[keys::EOS_JOBS])
                }
            },
            StepKind::ReadEnergies(batch) => {
                let source = match batch {
                    Batch::Eos => keys::EOS_JOBS,
                    Batch::Production => keys::PRODUCTION_JOBS,
                    Batch::Ensemble => keys::ENSEMBLE_JOBS,
                    Batch::Convergence => keys::CONVERGENCE_JOBS,
                };
                let target = match batch {
                    Batch::Eos => keys::EOS_ENERGIES,
                    _ => keys::PRODUCTION_ENERGIES,
                };
                let files = read_files(canvas, source)?;
                match phase {
                    0 => act(vec![put(keys::JOB_LIST, json!(files))]),
                    1 => act(vec![Action::new(
                        "Read the total energies of the finished jobs.",
                        "read_energy_from_output",
                        json!({"jobFileIdx": indices(files.len())}),
                    )]),
                    2 => act(vec![put(target, last(h).clone())]),
                    _ => done(format!("Read {} energies", files.len()), &[target]),
                }
            }
            StepKind::CalcLattice => match phase {
                0 => {
                    let n = read_files(canvas, keys::EOS_JOBS)?.len();
                    act(vec![Action::new("Fit the equation of state.", "calculate_lc", json!({"jobFileIdx": indices(n)}))])
                }
                1 => {
                    let o = last(h).clone();
                    act(vec![put(keys::LATTICE_CONSTANT, o["lattice_constant"].clone()), put(keys::BULK_MODULUS_GPA, o["bulk_modulus_GPa"].clone())])
                }
                _ => {
                    let a = read(canvas, keys::LATTICE_CONSTANT)?.as_f64().unwrap_or(f64::NAN);
                    let b = read(canvas, keys::BULK_MODULUS_GPA)?.as_f64().unwrap_or(f64::NAN);
                    done(format!("Equilibrium lattice constant a = {a:.4} Å, bulk modulus B0 = {b:.1} GPa"), &[keys::LATTICE_CONSTANT, keys::BULK_MODULUS_GPA])
                }
            },
            StepKind::CompareLattice => {
                let (el, lat, a_exp) = self.bulk()?;
                let a = read(canvas, keys::LATTICE_CONSTANT)?.as_f64().ok_or("lattice_constant is not a number")?;
                let err = 100.0 * (a - a_exp) / a_exp;
                match phase {
                    0 => act(vec![put(keys::LATTICE_COMPARISON, json!({"computed": a, "experimental": a_exp, "error_percent": err}))]),
                    _ => done(
                        format!(
                            "The calculated lattice constant of {} {el} is {a:.4} Å versus the experimental {a_exp} Å ({err:+.2}%)",
                            lat.to_ascii_uppercase()
                        ),
                        &[keys::LATTICE_COMPARISON],
                    ),
                }
            }
            StepKind::GenProduction(target) => match phase {
                0 => {
                    if canvas.contains(keys::PRODUCTION_JOBS) {
                        return act(vec![]);
                    }
                    act(vec![put(keys::JOB_LIST, json!([]))])
                }
                1 => {
                    let spec = self.production_spec(canvas, Calculation::Scf)?;
                    let trajs = match target {
                        Target::Site(site) => read_files(canvas, &keys::configurations(site.name()))?,
                        Target::CleanSlab => vec![read_str(canvas, keys::REFERENCE_SLAB)?],
                        Target::Molecule => vec![read_str(canvas, keys::ADSORBATE_STRUCTURE)?],
                    };
                    let (mut actions, files) = self.production_inputs(&spec, &trajs)?;
                    let mut all = if canvas.contains(keys::PRODUCTION_JOBS) {
                        read_files(canvas, keys::PRODUCTION_JOBS)?
                    } else {
                        Vec::new()
                    };
                    all.extend(files.iter().filter(|f| !all.contains(f)).cloned().collect::<Vec<_>>());
                    actions.push(put(keys::PRODUCTION_JOBS, json!(all)));
                    act(actions)
                }
                _ => {
                    let n = read_files(canvas, keys::PRODUCTION_JOBS)?;
                    let new: Vec<String> = h
                        .iter()
                        .filter(|t| t.tool == "write_QE_script_w_ASE")
                        .filter_map(|t| t.observation["file"].as_str().map(str::to_string))
                        .collect();
                    let tagged = new
                        .iter()
                        .map(|f| Ok(format!("{f} [{}]", self.class_tag(f)?)))
                        .collect::<Result<Vec<_>, String>>()?;
                    done(
                        format!("Generated production inputs: {} ({} queued in total)", tagged.join(", "), n.len()),
                        &[keys::PRODUCTION_JOBS],
                    )
                }
            },
            StepKind::Repair { batch, round } => {
                let failed = read_files(canvas, keys::FAILED_JOBS)?;
                match phase {
                    0 => {
                        if failed.is_empty() {
                            return Err(format!("no failed {} jobs to repair", batch.noun()));
                        }
                        act(failed
                            .iter()
                            .map(|f| {
                                Action::new(
                                    format!("Ask for convergence advice on {f}."),
                                    "get_convergence_suggestions",
                                    json!({"filename": f, "question": "The SCF cycle did not converge. How should the input be adjusted?"}),
                                )
                            })
                            .collect())
                    }
                    1 => {
                        let mut actions = Vec::new();
                        for (f, obs) in failed.iter().zip(recent(h, failed.len())) {
                            let sugg = obs
                                .as_array()
                                .ok_or("suggestions are not a list")?
                                .iter()
                                .map(|s| {
                                    let a = s["action"].as_str().unwrap_or("").parse()?;
                                    Ok(Suggestion::new(
                                        s["parameter"].as_str().unwrap_or(""),
                                        a,
                                        s["value"].as_str().unwrap_or(""),
                                        s["reason"].as_str().unwrap_or(""),
                                    ))
                                })
                                .collect::<Result<Vec<_>, String>>()?;
                            if sugg.is_empty() {
                                return Err(format!("no suggestions for {f}"));
                            }
                            let (spec, s) = self.input(f)?;
                            let mut next = apply_suggestions(&spec, &sugg).map_err(|e| format!("{f}: {e}"))?;
                            next.set_param(ATTEMPT_KEY, &round.to_string()).map_err(|e| e.to_string())?;
                            actions.push(write_qe(
                                &format!("Rewrite {f} with {} suggested changes.", sugg.len()),
                                qe_args(&next, f, f, s.len(), false),
                            ));
                        }
                        actions.push(put(keys::JOB_LIST, json!(failed)));
                        act(actions)
                    }
                    _ => done(
                        format!("Modified {} inputs (repair round {round}): {}", failed.len(), failed.join(", ")),
                        &[keys::JOB_LIST],
                    ),
                }
            }
            StepKind::CalcAdsorption => match phase {
                0 => {
                    let by = self.production_files(canvas)?;
                    let slab = self.one(&by, FixtureClass::Slab)?;
                    let mol = self.one(&by, FixtureClass::Molecule)?;
                    let systems = by.get(FixtureClass::SlabAdsorbate.name()).cloned().unwrap_or_default();
                    if systems.is_empty() {
                        return Err("no adsorbate configurations among the production jobs".into());
                    }
                    act(systems
                        .iter()
                        .map(|f| {
                            Action::new(
                                format!("Adsorption energy of {f}."),
                                "calculate_formation_E",
                                json!({"slabFilePath": slab, "adsorbateFilePath": mol, "systemFilePath": f}),
                            )
                        })
                        .collect())
                }
                1 => {
                    let n = h.iter().filter(|t| t.tool == "calculate_formation_E").count();
                    let rec: BTreeMap<String, Json> = h[h.len() - n..]
                        .iter()
                        .map(|t| (t.args["systemFilePath"].as_str().unwrap_or("").to_string(), t.observation["E_ads_eV"].clone()))
                        .collect();
                    act(vec![put(keys::ADSORPTION_ENERGIES, json!(rec))])
                }
                _ => {
                    let rec = read(canvas, keys::ADSORPTION_ENERGIES)?;
                    let rows: Vec<String> = rec
                        .as_object()
                        .map(|m| m.iter().map(|(k, v)| format!("{k}: {:.4} eV", v.as_f64().unwrap_or(f64::NAN))).collect())
                        .unwrap_or_default();
                    done(format!("Adsorption energies: {}", rows.join("; ")), &[keys::ADSORPTION_ENERGIES])
                }
            },
            StepKind::IdentifyFavorable => {
                let rec = read(canvas, keys::ADSORPTION_ENERGIES)?;
                let best = |site: SiteKind| -> Result<(String, f64), String> {
                    self.site_inputs(canvas, site)?
                        .into_iter()
                        .filter_map(|f| rec[&f].as_f64().map(|e| (f, e)))
                        .min_by(|a, b| a.1.total_cmp(&b.1))
                        .ok_or_else(|| format!("no adsorption energies at the {site} site"))
                };
                let (fcc, e_fcc) = best(SiteKind::Fcc)?;
                let (top, e_top) = best(SiteKind::Ontop)?;
                match phase {
                    0 => act(vec![put(
                        keys::FAVORABLE,
                        json!({"fcc": fcc, "fcc_eV": e_fcc, "ontop": top, "ontop_eV": e_top}),
                    )]),
                    _ => done(
                        format!("Most favorable: {fcc} at FCC ({e_fcc:.4} eV), {top} at ontop ({e_top:.4} eV)"),
                        &[keys::FAVORABLE],
                    ),
                }
            }
            StepKind::CalcDeltaBe => {
                let fav = read(canvas, keys::FAVORABLE)?;
                let (e_fcc, e_top) = (
                    fav["fcc_eV"].as_f64().ok_or("favorable_configurations lacks fcc_eV")?,
                    fav["ontop_eV"].as_f64().ok_or("favorable_configurations lacks ontop_eV")?,
                );
                let d = delta_be(e_top, e_fcc);
                match phase {
                    0 => act(vec![put(keys::DELTA_BE_EV, json!(d))]),
                    _ => done(
                        format!(
                            "ΔBE = E_ads(ontop) - E_ads(FCC) = {d:.4} eV; {} site favored",
                            if d > 0.0 { "FCC" } else { "ontop" }
                        ),
                        &[keys::DELTA_BE_EV],
                    ),
                }
            }
            StepKind::CompareAdsorption => {
                let s = self.surface()?;
                let d = read(canvas, keys::DELTA_BE_EV)?.as_f64().ok_or("delta_be_ev is not a number")?;
                let reference = (s.metal == "Pt" && s.facet == "111" && s.adsorbate == "CO")
                    .then(|| co_pt111_delta_be(s.functional))
                    .flatten();
                match (phase, reference) {
                    (0, Some(r)) => act(vec![put(
                        keys::ADSORPTION_COMPARISON,
                        json!({"computed": d, "expert": r.expert, "literature_low": r.literature.0, "literature_high": r.literature.1}),
                    )]),
                    (0, None) => act(vec![put(keys::ADSORPTION_COMPARISON, json!({"computed": d}))]),
                    (_, Some(r)) => {
                        let inside = d >= r.literature.0 - 1e-9 && d <= r.literature.1 + 1e-9;
                        done(
                            format!(
                                "ΔBE = {d:.3} eV with {}; expert value {:.3} eV, literature {:.2}-{:.2} eV ({})",
                                s.functional,
                                r.expert,
                                r.literature.0,
                                r.literature.1,
                                if inside { "within range" } else { "outside range" }
                            ),
                            &[keys::ADSORPTION_COMPARISON],
                        )
                    }
                    (_, None) => done(
                        format!("ΔBE = {d:.3} eV with {}; no reference value available", s.functional),
                        &[keys::ADSORPTION_COMPARISON],
                    ),
                }
            }
            StepKind::GenEnsemble => match phase {
                0 => act(vec![put(keys::JOB_LIST, json!([]))]),
                1 => {
                    let upright = |site: SiteKind| -> Result<String, String> {
                        read_files(canvas, &keys::configurations(site.name()))?
                            .into_iter()
                            .find(|f| f.ends_with("_upright.traj"))
                            .ok_or_else(|| format!("no upright configuration at the {site} site"))
                    };
                    let trajs = [
                        read_str(canvas, keys::REFERENCE_SLAB)?,
                        read_str(canvas, keys::ADSORBATE_STRUCTURE)?,
                        upright(SiteKind::Ontop)?,
                        upright(SiteKind::Fcc)?,
                    ];
                    let spec = self.production_spec(canvas, Calculation::Ensemble)?;
                    let (mut actions, files) = self.production_inputs(&spec, &trajs)?;
                    actions.push(put(
                        keys::ENSEMBLE_JOBS,
                        json!({"slab": files[0], "molecule": files[1], "ontop": files[2], "fcc": files[3]}),
                    ));
                    act(actions)
                }
                _ => {
                    let e = read(canvas, keys::ENSEMBLE_JOBS)?;
                    let files: Vec<String> = ["slab", "molecule", "ontop", "fcc"]
                        .iter()
                        .map(|k| e[k].as_str().unwrap_or("").to_string())
                        .collect();
                    let tagged = files
                        .iter()
                        .map(|f| Ok(format!("{f} [{}]", self.class_tag(f)?)))
                        .collect::<Result<Vec<_>, String>>()?;
                    done(format!("Generated ensemble inputs: {}", tagged.join(", ")), &[keys::ENSEMBLE_JOBS])
                }
            },
            StepKind::AnalyzeBeef => {
                let e = read(canvas, keys::ENSEMBLE_JOBS)?;
                match phase {
                    0 => act(vec![Action::new(
                        "Propagate the ensemble through the adsorption energy difference.",
                        "analyze_BEEF_result",
                        json!({
                            "slabFilePath": e["slab"],
                            "adsorbateFilePath": e["molecule"],
                            "ontopFilePath": e["ontop"],
                            "fccFilePath": e["fcc"],
                        }),
                    )]),
                    1 => act(vec![put(keys::BEEF_STATISTICS, last(h).clone())]),
                    _ => {
                        let st = read(canvas, keys::BEEF_STATISTICS)?;
                        done(
                            format!(
                                "Ensemble of {}: mean ΔBE = {:.4} eV, σ = {:.4} eV, sigma distance = {}",
                                st["n"], st["mean_eV"].as_f64().unwrap_or(f64::NAN), st["std_eV"].as_f64().unwrap_or(f64::NAN), st["sigma_distance"]
                            ),
                            &[keys::BEEF_STATISTICS],
                        )
                    }
                }
            }
            StepKind::ReportBeef => {
                let st = read(canvas, keys::BEEF_STATISTICS)?;
                let mean = st["mean_eV"].as_f64().ok_or("beef_statistics lacks mean_eV")?;
                let sd = match &st["sigma_distance"] {
                    Json::String(s) if s == "inf" => f64::INFINITY,
                    v => v.as_f64().ok_or("beef_statistics lacks sigma_distance")?,
                };
                let n = st["n"].as_f64().unwrap_or(0.0) as usize;
                let verdict = beef_verdict(mean, sd, n);
                match phase {
                    0 => act(vec![put(keys::BEEF_VERDICT, json!(verdict))]),
                    _ => done(format!("BEEF-vdW ensemble verdict: {verdict} (mean {mean:.4} eV, sigma distance {sd:.1})"), &[keys::BEEF_VERDICT]),
                }
            }
            StepKind::AddResources(_) | StepKind::Submit(_) => Err(format!("{kind:?} is not a DFT task")),
        }
    }
}

/// Ensembles smaller than this give a σ too noisy to judge site preference.
pub const MIN_ENSEMBLE: usize = 10;

/// Site preference from ensemble statistics of E_ads(ontop) - E_ads(fcc).
pub fn beef_verdict(mean: f64, sigma_distance: f64, n: usize) -> &'static str {
    if n < MIN_ENSEMBLE {
        "inconclusive"
    } else if sigma_distance > 10.0 && mean > 0.0 {
        "fcc favored"
    } else if sigma_distance > 10.0 && mean < 0.0 {
        "ontop favored"
    } else {
        "inconclusive"
    }
}

impl Script for DftScript {
    fn phase(&mut self, kind: StepKind, phase: usize, history: &[Turn], canvas: &Canvas) -> Result<Phase, String> {
        self.steps(kind, phase, history, canvas)
    }
}

/// HPC worker: resources and submission.
pub struct HpcScript {
    pub cluster: ClusterSpec,
    pub workdir: PathBuf,
}

impl Script for HpcScript {
    fn phase(&mut self, kind: StepKind, phase: usize, h: &[Turn], canvas: &Canvas) -> Result<Phase, String> {
        match kind {
            StepKind::AddResources(batch) => {
                let files = read_files(canvas, keys::JOB_LIST)?;
                match phase {
                    0 => {
                        let mut actions = Vec::new();
                        for f in &files {
                            let (spec, s) = parse_input(self.workdir.join(f)).map_err(|e| format!("{f}: {e}"))?;
                            let minutes = self.cluster.runtime_minutes(spec.electron_maxstep);
                            let (p, nnodes) = choose_partition(&self.cluster, s.len(), minutes).map_err(|e| e.to_string())?;
                            let out = format!("{}.pwo", f.trim_end_matches(".pwi"));
                            actions.push(Action::new(
                                format!("{} tasks for {} atoms, {minutes} min on {}.", s.len(), s.len(), p.name),
                                "add_resource_suggestion",
                                json!({
                                    "qeInputFileName": f,
                                    "partition": p.name,
                                    "nnodes": nnodes,
                                    "ntasks": s.len(),
                                    "runtime": minutes.to_string(),
                                    "submissionScript": run_line(Path::new(f)),
                                    "outputFilename": out,
                                }),
                            ));
                        }
                        act(actions)
                    }
                    _ => {
                        let mut parts: BTreeMap<String, usize> = BTreeMap::new();
                        for o in recent(h, files.len()) {
                            *parts.entry(o["partition"].as_str().unwrap_or("?").to_string()).or_default() += 1;
                        }
                        let parts: Vec<String> = parts.iter().map(|(p, n)| format!("{n} on {p}")).collect();
                        done(
                            format!("Resource suggestions saved for {} {} jobs ({})", files.len(), batch.noun(), parts.join(", ")),
                            &[],
                        )
                    }
                }
            }
            StepKind::Submit(batch) => match phase {
                0 => act(vec![Action::new(
                    "Submit every queued job and wait for all of them.",
                    "submit_and_monitor_job",
                    json!({"jobType": "DFT"}),
                )]),
                _ => {
                    let o = last(h);
                    let n = o["submitted"].as_u64().unwrap_or(0);
                    let failed: Vec<&str> = o["failed"].as_array().map(|v| v.iter().filter_map(Json::as_str).collect()).unwrap_or_default();
                    if failed.is_empty() {
                        done(format!("All {n} {} jobs completed successfully", batch.noun()), &[keys::JOB_STATUS])
                    } else {
                        Ok(Phase::Done(AgentReport::failed(format!(
                            "{} of {n} {} jobs failed to converge: {}",
                            failed.len(),
                            batch.noun(),
                            failed.join(", ")
                        ))))
                    }
                }
            },
            other => Err(format!("{other:?} is not an HPC task")),
        }
    }
}

const HPC_TOOLS: [&str; 5] = [INSPECT_TOOL, "read_my_canvas", "write_my_canvas", "add_resource_suggestion", "submit_and_monitor_job"];

pub fn dft_agent(max_steps: usize) -> AgentConfig {
    AgentConfig {
        name: "dft".into(),
        role: "You are a DFT expert who prepares structures and Quantum Espresso inputs and analyzes results.".into(),
        objective: "Complete the assigned step using your tools and report what was produced.".into(),
        instructions: "Inspect the canvas first. Reuse recorded structures and parameters. Write every result you \
                       produce to the canvas under a descriptive key."
            .into(),
        requirements: "Only use file names inside the working directory. Start smearing with methfessel-paxton. \
                       Report failures starting with \"Job failed\"."
            .into(),
        tools: TOOL_NAMES
            .iter()
            .filter(|t| !HPC_TOOLS[3..].contains(t) || **t == INSPECT_TOOL)
            .map(|t| t.to_string())
            .collect(),
        max_steps,
    }
}

pub fn hpc_agent(max_steps: usize) -> AgentConfig {
    AgentConfig {
        name: "hpc".into(),
        role: "You are an HPC operator who sizes, submits and monitors DFT jobs.".into(),
        objective: "Run the queued jobs in job_list on the cluster.".into(),
        instructions: "Inspect the canvas first. Request one task per atom. Keep requested walltime within the \
                       partition limit."
            .into(),
        requirements: "Submit only after every queued input has a resource suggestion.".into(),
        tools: HPC_TOOLS.iter().map(|t| t.to_string()).collect(),
        max_steps,
    }
}
