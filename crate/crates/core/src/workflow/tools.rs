//! The worker tool catalog. Tools take bare file names relative to the
//! workspace directory and return JSON observations.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::Path;

use serde_json::{json, Map, Value as Json};

use super::{keys, Workspace};
use crate::agentcore::{doctor_suggest, ArgType as T, Args, ToolRegistry, ToolSpec, INSPECT_TOOL};
use crate::canvas::{AccessMode, Schema, Value};
use crate::hpcsim::{resource_path, run_line, sbatch_header, ResourceSuggestion, RESOURCE_FORMAT};
use crate::numerics::{
    adsorption_energy, analyze_beef, eos_scale_factors, fit_eos, lattice_from_fit, route_tolerance, select_converged,
    ConvParam, ConvergenceSeries,
};
use crate::qeio::{
    find_pseudopotential, kgrid_for, parse_input, parse_output, write_input, CalcSpec, Calculation, OutputSummary,
};
use crate::structlab::{
    build_bulk, build_molecule, build_surface, place_adsorbate, read_traj, scale, write_traj, Axis, StructureModel,
    ADSORBATE_TAG, DEFAULT_HEIGHT, DEFAULT_VACUUM,
};
use crate::surrogate::FixtureClass;
use crate::units::ry_to_ev;

pub const TOOL_NAMES: [&str; 19] = [
    INSPECT_TOOL,
    "read_my_canvas",
    "write_my_canvas",
    "init_structure_data",
    "generateSurface_and_getPossibleSite",
    "generate_myAdsorbate",
    "add_myAdsorbate",
    "write_QE_script_w_ASE",
    "find_pseudopotential",
    "generate_convergence_test",
    "generate_eos_test",
    "get_convergence_suggestions",
    "calculate_formation_E",
    "calculate_lc",
    "get_kspacing_ecutwfc",
    "analyze_BEEF_result",
    "add_resource_suggestion",
    "submit_and_monitor_job",
    "read_energy_from_output",
];

fn e<E: Display>(err: E) -> String {
    err.to_string()
}

/// Plain JSON to a canvas value. Objects become records; null is refused.
pub fn json_to_value(j: &Json) -> Result<Value, String> {
    Ok(match j {
        Json::Null => return Err("null cannot be stored on the canvas".into()),
        Json::Bool(b) => Value::Bool(*b),
        Json::Number(n) => Value::Num(n.as_f64().ok_or("number out of range")?),
        Json::String(s) => Value::Str(s.clone()),
        Json::Array(a) => Value::List(a.iter().map(json_to_value).collect::<Result<_, _>>()?),
        Json::Object(o) => Value::Record(
            o.iter()
                .map(|(k, v)| Ok((k.clone(), json_to_value(v)?)))
                .collect::<Result<_, String>>()?,
        ),
    })
}

/// Canvas value to plain JSON; path references become strings.
pub fn value_to_json(v: &Value) -> Json {
    match v {
        Value::Str(s) | Value::Path(s) => Json::String(s.clone()),
        Value::Num(x) => json!(x),
        Value::Bool(b) => Json::Bool(*b),
        Value::List(items) => Json::Array(items.iter().map(value_to_json).collect()),
        Value::Record(m) => Json::Object(m.iter().map(|(k, v)| (k.clone(), value_to_json(v))).collect()),
    }
}

fn structure_info(file: &str, s: &StructureModel) -> Json {
    json!({"file": file, "nat": s.len(), "species": s.species(), "formula": s.formula()})
}

fn need_ext(name: &str, ext: &str) -> Result<(), String> {
    match Path::new(name).extension() {
        Some(x) if x == ext => Ok(()),
        _ => Err(format!("{name:?} must end in .{ext}")),
    }
}

fn stem(name: &str) -> String {
    Path::new(name)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn sibling(name: &str, ext: &str) -> String {
    format!("{}.{ext}", stem(name))
}

fn load_structure(ws: &Workspace, name: &str) -> Result<StructureModel, String> {
    let path = ws.file(name)?;
    match Path::new(name).extension().and_then(|x| x.to_str()) {
        Some("traj") => read_traj(&path).map_err(e),
        Some("pwi") => parse_input(&path).map(|(_, s)| s).map_err(e),
        _ => Err(format!("{name:?} is neither a .traj structure nor a .pwi job")),
    }
}

fn load_input(ws: &Workspace, name: &str) -> Result<(CalcSpec, StructureModel), String> {
    need_ext(name, "pwi")?;
    parse_input(ws.file(name)?).map_err(|err| format!("{name}: {err}"))
}

fn job_list(ws: &Workspace) -> Result<Vec<String>, String> {
    ws.canvas
        .read(keys::JOB_LIST)
        .map_err(e)?
        .as_str_vec()
        .ok_or_else(|| "job_list is not a list of file names".to_string())
}

fn jobs_at(ws: &Workspace, idx: &[i64]) -> Result<Vec<String>, String> {
    let list = job_list(ws)?;
    if idx.is_empty() {
        return Err("jobFileIdx is empty".into());
    }
    idx.iter()
        .map(|&i| {
            usize::try_from(i)
                .ok()
                .and_then(|i| list.get(i).cloned())
                .ok_or_else(|| format!("job index {i} is outside job_list (length {})", list.len()))
        })
        .collect()
}

fn set_canvas(ws: &mut Workspace, key: &str, value: Value, mode: AccessMode) -> Result<(), String> {
    let actor = ws.actor.clone();
    ws.canvas.upsert(&actor, key, value, mode).map(|_| ()).map_err(e)
}

fn set_job_list(ws: &mut Workspace, files: &[String]) -> Result<(), String> {
    set_canvas(
        ws,
        keys::JOB_LIST,
        Value::str_list(files),
        AccessMode::FormatRestricted(Schema::FilenameList),
    )
}

/// Output of the latest successful run of `file`.
fn finished_output(ws: &Workspace, file: &str) -> Result<OutputSummary, String> {
    let id = ws
        .job_for(file)
        .ok_or_else(|| format!("{file} has not been submitted"))?;
    let job = ws.scheduler.job(id).map_err(e)?;
    if job.state != crate::hpcsim::JobState::Done {
        return Err(format!("{file} did not finish successfully (job {id} is {})", job.state));
    }
    parse_output(&job.output).map_err(|err| format!("{file}: {err}"))
}

fn write_spec(ws: &Workspace, spec: &CalcSpec, s: &StructureModel, name: &str) -> Result<(), String> {
    write_input(spec, s, ws.file(name)?).map(|_| ()).map_err(e)
}

fn canvas_tools(r: &mut ToolRegistry<Workspace>) {
    r.register(
        ToolSpec::new(INSPECT_TOOL, "Inspect the working canvas to get available keys", "list of str"),
        |ws, _| Ok(json!(ws.canvas.inspect())),
    )
    .expect("fresh registry");
    r.register(
        ToolSpec::new("read_my_canvas", "Read a value from the working canvas", "value").param(
            "key",
            T::Str,
            "key",
        ),
        |ws, a| Ok(value_to_json(ws.canvas.read(a.str("key")).map_err(e)?)),
    )
    .expect("fresh registry");
    r.register(
        ToolSpec::new(
            "write_my_canvas",
            "Write a value to the working canvas. If the key already exists, it will not overwrite unless specified.",
            "acknowledgment",
        )
        .param("key", T::Str, "key")
        .param("value", T::Any, "value")
        .optional("overwrite", T::Bool, Some(json!(false)), "True to overwrite an existing key"),
        |ws, a| {
            let v = json_to_value(a.json("value"))?;
            let actor = ws.actor.clone();
            let ack = ws.canvas.write(&actor, a.str("key"), v, a.bool("overwrite")).map_err(e)?;
            Ok(json!(format!("{} {} (seq {})", ack.op.as_str(), ack.key, ack.seq)))
        },
    )
    .expect("fresh registry");
}

fn structure_tools(r: &mut ToolRegistry<Workspace>) {
    r.register(
        ToolSpec::new(
            "init_structure_data",
            "Create single-element bulk initial structure based on crystal lattice and lattice constants, save to working directory, and return filename.",
            "structure info",
        )
        .param("element", T::Str, "Element symbol")
        .param("lattice", T::Str, "Lattice type")
        .param("a", T::Float, "Lattice constant a")
        .optional("b", T::Float, None, "Lattice constant b; alone with a it is read as c")
        .optional("c", T::Float, None, "Lattice constant c"),
        |ws, a| {
            let s = build_bulk(a.str("element"), a.str("lattice"), a.f64("a"), a.opt_f64("b"), a.opt_f64("c"))
                .map_err(e)?;
            let name = format!("{}_{}.traj", a.str("element"), a.str("lattice").to_ascii_lowercase());
            write_traj(&s, ws.file(&name)?).map_err(e)?;
            Ok(structure_info(&name, &s))
        },
    )
    .expect("fresh registry");
    r.register(
        ToolSpec::new(
            "generateSurface_and_getPossibleSite",
            "Generate a surface structure and return available adsorption sites.",
            "structure info with sites",
        )
        .param("species", T::Str, "Element symbol")
        .param("crystal_structures", T::Str, "Crystal structure")
        .param("a_dict", T::Dict, "Lattice parameter per species")
        .param("facets", T::Str, "Facet of the surface")
        .param("supercell_dim", T::IntList, "Supercell repetitions [int, int, int]")
        .optional("n_fixed_layers", T::Int, Some(json!(3)), "Number of fixed layers"),
        |ws, a| {
            let species = a.str("species");
            let a_dict = a.dict("a_dict");
            let lat = a_dict
                .get(species)
                .ok_or_else(|| format!("a_dict has no entry for {species}"))?
                .parse::<f64>()
                .map_err(|_| format!("a_dict[{species}] is not a number"))?;
            let dims = a.i64_list("supercell_dim");
            let [p, q, l] = dims[..] else {
                return Err(format!("supercell_dim needs 3 entries (got {})", dims.len()));
            };
            let dim = |v: i64| usize::try_from(v).map_err(|_| format!("negative supercell entry {v}"));
            let fixed = usize::try_from(a.i64("n_fixed_layers")).map_err(|_| "n_fixed_layers must be >= 0")?;
            let (slab, sites) = build_surface(
                species,
                a.str("crystal_structures"),
                lat,
                a.str("facets"),
                [dim(p)?, dim(q)?, dim(l)?],
                fixed,
                DEFAULT_VACUUM,
            )
            .map_err(e)?;
            let facet: String = a.str("facets").chars().filter(char::is_ascii_digit).collect();
            let name = format!("{species}{facet}.traj");
            write_traj(&slab, ws.file(&name)?).map_err(e)?;
            let mut info = structure_info(&name, &slab);
            info["sites"] = json!(sites);
            Ok(info)
        },
    )
    .expect("fresh registry");
    r.register(
        ToolSpec::new("generate_myAdsorbate", "Generate an adsorbate structure and save it.", "structure info")
            .param("symbols", T::Str, "Element symbols of the adsorbate (no delimiters)")
            .param("positions", T::FloatTriples, "Atom positions")
            .param("AdsorbateFileName", T::Str, "File name ending in .traj"),
        |ws, a| {
            let name = a.str("AdsorbateFileName");
            need_ext(name, "traj")?;
            let m = build_molecule(a.str("symbols"), &a.triples("positions")).map_err(e)?;
            write_traj(&m, ws.file(name)?).map_err(e)?;
            Ok(structure_info(name, &m))
        },
    )
    .expect("fresh registry");
    r.register(
        ToolSpec::new("add_myAdsorbate", "Add adsorbate(s) to a surface structure and save it.", "structure info")
            .param("mySurfacePath", T::Str, "Path to surface structure")
            .param("adsorbatePath", T::Str, "Path to adsorbate structure")
            .param("mySites", T::FloatPairs, "List of 2D site coordinates")
            .param("rotations", T::Rotations, "List of [angle, axis] rotations")
            .param("surfaceWithAdsorbateFileName", T::Str, "Output file name ending in .traj"),
        |ws, a| {
            let name = a.str("surfaceWithAdsorbateFileName");
            need_ext(name, "traj")?;
            let slab = load_structure(ws, a.str("mySurfacePath"))?;
            let mol = load_structure(ws, a.str("adsorbatePath"))?;
            let rotations = a
                .rotations("rotations")
                .into_iter()
                .map(|(deg, axis)| axis.parse::<Axis>().map(|ax| (deg, ax)))
                .collect::<Result<Vec<_>, _>>()?;
            let sites = a.pairs("mySites");
            if sites.is_empty() {
                return Err("mySites is empty".into());
            }
            // every copy is placed relative to the clean surface
            let mut out = slab.clone();
            for site in sites {
                let placed = place_adsorbate(&slab, &mol, site, &rotations, DEFAULT_HEIGHT).map_err(e)?;
                out.symbols.extend_from_slice(&placed.symbols[slab.len()..]);
                out.positions.extend_from_slice(&placed.positions[slab.len()..]);
                if let Some(tags) = out.layer_tags.as_mut() {
                    tags.extend(std::iter::repeat_n(ADSORBATE_TAG, mol.len()));
                }
            }
            out.validate().map_err(e)?;
            write_traj(&out, ws.file(name)?).map_err(e)?;
            Ok(structure_info(name, &out))
        },
    )
    .expect("fresh registry");
}

fn append_job(ws: &mut Workspace, name: &str) -> Result<(), String> {
    let mut list = if ws.canvas.contains(keys::JOB_LIST) {
        job_list(ws)?
    } else {
        Vec::new()
    };
    if !list.iter().any(|f| f == name) {
        list.push(name.to_string());
    }
    set_job_list(ws, &list)
}

fn write_qe_script(ws: &mut Workspace, a: &Args) -> Result<Json, String> {
    let name = a.str("filename");
    need_ext(name, "pwi")?;
    ws.file(name)?;
    let s = load_structure(ws, a.str("inputAtomsDir"))?;
    let mut spec = CalcSpec::default();
    let text = |k: &str| -> String {
        match a.json(k) {
            Json::String(v) => v.clone(),
            other => other.to_string(),
        }
    };
    for k in [
        "calculation",
        "restart_mode",
        "prefix",
        "disk_io",
        "ibrav",
        "nat",
        "ntyp",
        "ecutwfc",
        "ecutrho",
        "occupations",
        "smearing",
        "degauss",
        "conv_thr",
        "electron_maxstep",
        "kspacing",
        "input_dft",
    ] {
        spec.set_param(k, &text(k)).map_err(e)?;
    }
    if a.bool("ensembleCalculation") != (spec.calculation == Calculation::Ensemble) {
        return Err("ensembleCalculation must be true exactly when calculation = 'ensemble'".into());
    }
    let elements = a.str_list("listofElements");
    let pps = a.str_list("ppfiles");
    if elements.len() != pps.len() {
        return Err(format!("{} elements but {} ppfiles", elements.len(), pps.len()));
    }
    let species = s.species();
    let mut given = elements.clone();
    given.sort();
    let mut want = species.clone();
    want.sort();
    if given != want {
        return Err(format!("listofElements {elements:?} does not match the structure species {species:?}"));
    }
    for (el, pp) in elements.iter().zip(&pps) {
        let expected = find_pseudopotential(el, &ws.catalog).map_err(e)?;
        if *pp != expected {
            return Err(format!("{pp} is not the catalog pseudopotential for {el} ({expected})"));
        }
        spec.pseudopotentials.insert(el.clone(), pp.clone());
    }
    for (k, v) in a.dict("additional_input") {
        spec.set_param(&k, &v).map_err(|err| format!("additional_input {k}: {err}"))?;
    }
    let warnings = write_input(&spec, &s, ws.file(name)?).map_err(e)?;
    let kgrid = kgrid_for(&s, spec.kspacing).map_err(e)?;
    let ready = a.bool("ready_to_run_job");
    if ready {
        append_job(ws, name)?;
    }
    Ok(json!({
        "file": name,
        "kgrid": kgrid,
        "queued": ready,
        "warnings": warnings.iter().map(ToString::to_string).collect::<Vec<_>>(),
    }))
}

fn base_name(template: &str) -> String {
    let st = stem(template);
    st.strip_suffix("_template").map(str::to_string).unwrap_or(st)
}

fn dedup_sorted(mut v: Vec<f64>, descending: bool) -> Vec<f64> {
    v.sort_by(|a, b| a.total_cmp(b));
    v.dedup();
    if descending {
        v.reverse();
    }
    v
}

fn generation_tools(r: &mut ToolRegistry<Workspace>) {
    r.register(
        ToolSpec::new(
            "write_QE_script_w_ASE",
            "Write a Quantum Espresso input. Smearing starts with methfessel-paxton; choose ecutwfc 30-100 Ry; ensemble jobs require calculation='ensemble'.",
            "file, k-grid and warnings",
        )
        .param("listofElements", T::StrList, "List of element symbols")
        .param("ppfiles", T::StrList, "Pseudopotential filenames in element order")
        .param("filename", T::Str, "Input file name ending in .pwi")
        .param("inputAtomsDir", T::Str, "Atoms file or job name")
        .param("ensembleCalculation", T::Bool, "Ensemble calculation?")
        .param("calculation", T::Str, "'scf', 'relax' or 'ensemble'")
        .param("restart_mode", T::Str, "'from_scratch' or 'restart'")
        .param("prefix", T::Str, "Output prefix")
        .param("disk_io", T::Str, "Disk i/o level")
        .param("ibrav", T::Int, "Bravais index")
        .param("nat", T::Int, "Number of atoms")
        .param("ntyp", T::Int, "Number of types")
        .param("ecutwfc", T::Float, "Wavefunction cutoff (Ry)")
        .param("ecutrho", T::Float, "Charge density cutoff (Ry)")
        .param("occupations", T::Str, "'smearing', ...")
        .param("smearing", T::Str, "'gaussian', 'methfessel-paxton', ...")
        .param("degauss", T::Float, "Smearing width (Ry)")
        .param("conv_thr", T::Float, "SCF convergence threshold")
        .param("electron_maxstep", T::Int, "Max SCF iterations")
        .param("kspacing", T::Float, "K-point spacing (1/Å)")
        .param("input_dft", T::Str, "'LDA', 'PBE' or 'BEEF-vdW'")
        .optional("ready_to_run_job", T::Bool, Some(json!(false)), "Queue the file in job_list")
        .optional("additional_input", T::Dict, Some(json!({})), "Flat dict of extra input parameters"),
        write_qe_script,
    )
    .expect("fresh registry");
    r.register(
        ToolSpec::new(
            "find_pseudopotential",
            "Return pseudopotential file path for a given element symbol.",
            "str",
        )
        .param("element", T::Str, "Element symbol"),
        |ws, a| Ok(json!(find_pseudopotential(a.str("element"), &ws.catalog).map_err(e)?)),
    )
    .expect("fresh registry");
    r.register(
        ToolSpec::new(
            "generate_convergence_test",
            "Generate convergence-test QE input scripts from a template and save job list.",
            "job files",
        )
        .param("input_file_name", T::Str, "Template .pwi filename")
        .param("kspacing", T::FloatList, "K-spacings to test")
        .param("ecutwfc", T::IntList, "Ecutwfc values to test"),
        |ws, a| {
            let template = a.str("input_file_name");
            let (spec, s) = load_input(ws, template)?;
            let ks = dedup_sorted(a.f64_list("kspacing"), true);
            let cuts = dedup_sorted(a.i64_list("ecutwfc").into_iter().map(|v| v as f64).collect(), false);
            let (Some(&ks_ref), Some(&cut_ref)) = (ks.last(), cuts.last()) else {
                return Err("kspacing and ecutwfc lists must be non-empty".into());
            };
            let base = base_name(template);
            let mut jobs = Vec::new();
            let mut emit = |cut: f64, k: f64, name: String| -> Result<(), String> {
                let mut sp = spec.clone();
                sp.set_param("ecutwfc", &format!("{cut:?}")).map_err(e)?;
                sp.set_param("kspacing", &format!("{k:?}")).map_err(e)?;
                write_spec(ws, &sp, &s, &name)?;
                jobs.push(name);
                Ok(())
            };
            for &cut in &cuts {
                emit(cut, ks_ref, format!("{base}_ecut{cut}.pwi"))?;
            }
            for &k in ks.iter().filter(|&&k| k != ks_ref) {
                emit(cut_ref, k, format!("{base}_k{}.pwi", format!("{k}").replace('.', "p")))?;
            }
            set_job_list(ws, &jobs)?;
            Ok(json!({"jobs": jobs, "reference": {"ecutwfc": cut_ref, "kspacing": ks_ref}}))
        },
    )
    .expect("fresh registry");
    r.register(
        ToolSpec::new("generate_eos_test", "Generate EOS test QE input scripts and save job list.", "job files")
            .param("input_file_name", T::Str, "Template .pwi filename")
            .param("kspacing", T::Float, "K-spacing")
            .param("ecutwfc", T::Int, "Ecutwfc")
            .optional("stepSize", T::Float, Some(json!(0.025)), "Scale step for EOS (0.01-0.1)"),
        |ws, a| {
            let template = a.str("input_file_name");
            let step = a.f64("stepSize");
            if !(0.01..=0.1).contains(&step) {
                return Err(format!("stepSize must lie in [0.01, 0.1] (got {step})"));
            }
            let (mut spec, s) = load_input(ws, template)?;
            spec.set_param("ecutwfc", &format!("{:?}", a.i64("ecutwfc") as f64)).map_err(e)?;
            spec.set_param("kspacing", &format!("{:?}", a.f64("kspacing"))).map_err(e)?;
            let base = base_name(template);
            let factors = eos_scale_factors(step);
            let mut jobs = Vec::new();
            for (i, &f) in factors.iter().enumerate() {
                let name = format!("{base}_eos{i}.pwi");
                write_spec(ws, &spec, &scale(&s, f).map_err(e)?, &name)?;
                jobs.push(name);
            }
            set_job_list(ws, &jobs)?;
            Ok(json!({"jobs": jobs, "scale_factors": factors}))
        },
    )
    .expect("fresh registry");
}

fn energy_series(
    ws: &Workspace,
    files: &[String],
) -> Result<Vec<(String, CalcSpec, StructureModel, f64)>, String> {
    files
        .iter()
        .map(|f| {
            let (spec, s) = load_input(ws, f)?;
            let out = finished_output(ws, f)?;
            Ok((f.clone(), spec, s, out.total_energy))
        })
        .collect()
}

fn select_parameters(ws: &Workspace, files: &[String], threshold: f64) -> Result<Json, String> {
    let rows = energy_series(ws, files)?;
    let cut_ref = rows.iter().map(|r| r.1.ecutwfc).fold(f64::NEG_INFINITY, f64::max);
    let ks_ref = rows.iter().map(|r| r.1.kspacing).fold(f64::INFINITY, f64::min);
    let per_atom = |r: &(String, CalcSpec, StructureModel, f64)| r.3 / r.2.len() as f64;
    let reference = rows
        .iter()
        .find(|r| r.1.ecutwfc == cut_ref && r.1.kspacing == ks_ref)
        .ok_or_else(|| format!("no reference job at ecutwfc {cut_ref} and kspacing {ks_ref}"))?;
    let e_ref = per_atom(reference);
    let series = |p: ConvParam| -> Result<f64, String> {
        let mut pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| match p {
                ConvParam::Ecutwfc => r.1.kspacing == ks_ref,
                ConvParam::Kspacing => r.1.ecutwfc == cut_ref,
            })
            .map(|r| {
                let v = match p {
                    ConvParam::Ecutwfc => r.1.ecutwfc,
                    ConvParam::Kspacing => r.1.kspacing,
                };
                (v, per_atom(r))
            })
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        pts.dedup_by(|a, b| a.0 == b.0);
        let s = ConvergenceSeries {
            parameter: p,
            values: pts.iter().map(|x| x.0).collect(),
            energies: pts.iter().map(|x| x.1).collect(),
            reference: e_ref,
        };
        select_converged(&s, threshold).map_err(e)
    };
    let cut = series(ConvParam::Ecutwfc)?;
    let ks = series(ConvParam::Kspacing)?;
    let kgrid = kgrid_for(&reference.2, ks).map_err(e)?;
    Ok(json!({"ecutwfc": cut, "kspacing": ks, "kgrid": kgrid, "threshold_meV": threshold}))
}

fn class_of(ws: &Workspace, file: &str, want: FixtureClass) -> Result<(), String> {
    let (_, s) = load_input(ws, file)?;
    let got = FixtureClass::of(&s);
    if got != want {
        return Err(format!("{file} describes a {} system, expected {}", got.name(), want.name()));
    }
    Ok(())
}

fn ensemble(ws: &Workspace, file: &str) -> Result<Vec<f64>, String> {
    finished_output(ws, file)?
        .ensemble_energies
        .ok_or_else(|| format!("{file} has no ensemble energies (calculation must be 'ensemble')"))
}

fn analysis_tools(r: &mut ToolRegistry<Workspace>) {
    r.register(
        ToolSpec::new(
            "get_convergence_suggestions",
            "Get DFT convergence suggestions based on output files.",
            "list of suggestions",
        )
        .param("filename", T::Str, "Job .pwi filename")
        .param("question", T::Str, "Query about convergence or accuracy"),
        |ws, a| {
            let name = a.str("filename");
            let input = ws.file(&sibling(name, "pwi"))?;
            let output = ws.file(&sibling(name, "pwo"))?;
            let read = |p: &Path| fs::read_to_string(p).map_err(|err| format!("{}: {err}", p.display()));
            let v = doctor_suggest(&read(&input)?, &read(&output)?, a.str("question")).map_err(e)?;
            Ok(Json::Array(
                v.iter()
                    .map(|s| {
                        json!({
                            "parameter": s.parameter,
                            "action": s.action.to_string(),
                            "value": s.value,
                            "reason": s.reason,
                        })
                    })
                    .collect(),
            ))
        },
    )
    .expect("fresh registry");
    r.register(
        ToolSpec::new(
            "calculate_formation_E",
            "Calculate formation energy of an adsorbate on a slab.",
            "adsorption energy (eV)",
        )
        .param("slabFilePath", T::Str, "Slab .pwi filename")
        .param("adsorbateFilePath", T::Str, "Adsorbate .pwi filename")
        .param("systemFilePath", T::Str, "Slab+adsorbate .pwi filename"),
        |ws, a| {
            let (slab, mol, sys) = (a.str("slabFilePath"), a.str("adsorbateFilePath"), a.str("systemFilePath"));
            class_of(ws, slab, FixtureClass::Slab)?;
            class_of(ws, mol, FixtureClass::Molecule)?;
            class_of(ws, sys, FixtureClass::SlabAdsorbate)?;
            let (es, em, ey) = (
                finished_output(ws, slab)?.total_energy,
                finished_output(ws, mol)?.total_energy,
                finished_output(ws, sys)?.total_energy,
            );
            Ok(json!({
                "E_ads_eV": ry_to_ev(adsorption_energy(ey, es, em)),
                "E_system_Ry": ey,
                "E_slab_Ry": es,
                "E_adsorbate_Ry": em,
            }))
        },
    )
    .expect("fresh registry");
    r.register(
        ToolSpec::new("calculate_lc", "Read EOS outputs and calculate lattice constant.", "EOS fit")
            .param("jobFileIdx", T::IntList, "Indices of finished EOS jobs"),
        |ws, a| {
            let files = jobs_at(ws, &a.i64_list("jobFileIdx"))?;
            let rows = energy_series(ws, &files)?;
            let volumes: Vec<f64> = rows.iter().map(|r| r.2.volume()).collect();
            let energies: Vec<f64> = rows.iter().map(|r| r.3).collect();
            let fit = fit_eos(&volumes, &energies).map_err(e)?;
            let lc = lattice_from_fit(&fit, &rows[0].2).map_err(e)?;
            Ok(json!({
                "lattice_constant": lc,
                "bulk_modulus_GPa": fit.b0_gpa(),
                "V0": fit.v0,
                "E0": fit.e0,
                "B0_prime": fit.b0_prime,
                "residual_norm": fit.residual_norm,
            }))
        },
    )
    .expect("fresh registry");
    r.register(
        ToolSpec::new(
            "get_kspacing_ecutwfc",
            "Determine optimal k-spacing and ecutwfc from convergence tests.",
            "chosen parameters",
        )
        .param("jobFileIdx", T::IntList, "Indices of convergence jobs")
        .optional("threshold", T::Float, Some(json!(1.0)), "Energy threshold (meV/atom)"),
        |ws, a| {
            let files = jobs_at(ws, &a.i64_list("jobFileIdx"))?;
            select_parameters(ws, &files, a.f64("threshold"))
        },
    )
    .expect("fresh registry");
    r.register(
        ToolSpec::new(
            "analyze_BEEF_result",
            "Read BEEF ensemble outputs, compute adsorption energies, and analyze results.",
            "ensemble statistics (eV)",
        )
        .param("slabFilePath", T::Str, "Clean slab .pwi filename")
        .param("adsorbateFilePath", T::Str, "Adsorbate .pwi filename")
        .param("ontopFilePath", T::Str, "Ontop adsorbate .pwi filename")
        .param("fccFilePath", T::Str, "FCC adsorbate .pwi filename"),
        |ws, a| {
            let slab = ensemble(ws, a.str("slabFilePath"))?;
            let mol = ensemble(ws, a.str("adsorbateFilePath"))?;
            let ontop = ensemble(ws, a.str("ontopFilePath"))?;
            let fcc = ensemble(ws, a.str("fccFilePath"))?;
            let st = analyze_beef(&slab, &mol, &ontop, &fcc).map_err(e)?;
            Ok(json!({
                "n": st.n,
                "mean_eV": st.mean,
                "std_eV": st.std,
                "sigma_distance": if st.sigma_distance.is_finite() { json!(st.sigma_distance) } else { json!("inf") },
                "route_discrepancy_eV": st.route_discrepancy,
                "route_tolerance_eV": route_tolerance(&slab, &mol, &ontop, &fcc),
                "degenerate": st.is_degenerate(),
            }))
        },
    )
    .expect("fresh registry");
}

fn add_resource(ws: &mut Workspace, a: &Args) -> Result<Json, String> {
    let name = a.str("qeInputFileName");
    let (_, s) = load_input(ws, name)?;
    let input = ws.file(name)?;
    let expected_out = sibling(name, "pwo");
    if a.str("outputFilename") != expected_out {
        return Err(format!("outputFilename must be {expected_out} for {name}"));
    }
    let ntasks = usize::try_from(a.i64("ntasks")).map_err(|_| "ntasks must be >= 1")?;
    if ntasks != s.len() {
        return Err(format!("ntasks must equal the number of atoms ({}) in {name}, got {ntasks}", s.len()));
    }
    let nnodes = u32::try_from(a.i64("nnodes")).ok().filter(|&n| n >= 1).ok_or("nnodes must be >= 1")?;
    let minutes: u32 = a
        .str("runtime")
        .trim()
        .parse()
        .map_err(|_| format!("runtime must be whole minutes (got {:?})", a.str("runtime")))?;
    let cluster = ws.scheduler.cluster();
    let p = cluster
        .partition(a.str("partition"))
        .ok_or_else(|| format!("unknown partition {}", a.str("partition")))?;
    if nnodes > p.node_count {
        return Err(format!("partition {} has only {} nodes", p.name, p.node_count));
    }
    if ntasks > (nnodes * p.cores_per_node) as usize {
        return Err(format!("{ntasks} tasks do not fit on {nnodes} node(s) of {} cores", p.cores_per_node));
    }
    if minutes == 0 || minutes > p.max_walltime_minutes {
        return Err(format!("runtime {minutes} min outside partition limit {} min", p.max_walltime_minutes));
    }
    let body = a.str("submissionScript");
    if body.contains("#SBATCH") {
        return Err("submissionScript must not contain #SBATCH lines".into());
    }
    let mut script = sbatch_header(&stem(name), &p.name, nnodes, ntasks, minutes);
    script.push_str(if body.trim().is_empty() { run_line(&input) } else { format!("{}\n", body.trim_end()) }.as_str());
    let res = ResourceSuggestion {
        format: RESOURCE_FORMAT.into(),
        input: name.to_string(),
        partition: p.name.clone(),
        nnodes,
        ntasks,
        runtime_minutes: minutes,
        script,
    };
    let path = resource_path(&input);
    res.save(&path).map_err(e)?;
    Ok(json!({"file": sibling(name, "res"), "partition": res.partition, "nnodes": nnodes, "ntasks": ntasks, "runtime_minutes": minutes}))
}

fn submit(ws: &mut Workspace, a: &Args) -> Result<Json, String> {
    if a.str("jobType") != "DFT" {
        return Err(format!("unsupported jobType {:?}; only DFT jobs can be submitted", a.str("jobType")));
    }
    let files = job_list(ws)?;
    if files.is_empty() {
        return Err("job_list is empty".into());
    }
    let paths = files.iter().map(|f| ws.file(f)).collect::<Result<Vec<_>, _>>()?;
    let ids = ws.scheduler.submit(&paths).map_err(e)?;
    let states = ws.scheduler.wait_all(&ids).map_err(e)?;
    let mut status = BTreeMap::new();
    let mut done = Vec::new();
    let mut failed = Vec::new();
    for (f, id) in files.iter().zip(&ids) {
        ws.record_job(f, *id);
        let st = states[id];
        status.insert(f.clone(), Value::str(st.to_string()));
        if st == crate::hpcsim::JobState::Done {
            done.push(f.clone());
        } else {
            failed.push(f.clone());
        }
    }
    set_canvas(ws, keys::FAILED_JOBS, Value::str_list(&failed), AccessMode::FormatRestricted(Schema::FilenameList))?;
    set_canvas(ws, keys::JOB_STATUS, Value::Record(status), AccessMode::Normal)?;
    let mut history = match ws.canvas.read(keys::SUBMISSIONS).ok().and_then(Value::as_list) {
        Some(h) => h.to_vec(),
        None => Vec::new(),
    };
    history.push(Value::record([
        ("jobs", Value::Num(files.len() as f64)),
        ("failed", Value::Num(failed.len() as f64)),
        ("finished_ms", Value::Num(ws.scheduler.now_ms() as f64)),
    ]));
    set_canvas(ws, keys::SUBMISSIONS, Value::List(history), AccessMode::Normal)?;
    Ok(json!({
        "submitted": files.len(),
        "done": done,
        "failed": failed,
        "clock_ms": ws.scheduler.now_ms(),
    }))
}

fn hpc_tools(r: &mut ToolRegistry<Workspace>) {
    r.register(
        ToolSpec::new(
            "add_resource_suggestion",
            "Save DFT resource suggestions and submission script in the working directory.",
            "resource file",
        )
        .param("qeInputFileName", T::Str, "DFT input filename")
        .param("partition", T::Str, "SLURM partition")
        .param("nnodes", T::Int, "Number of nodes")
        .param("ntasks", T::Int, "Number of tasks")
        .param("runtime", T::Str, "Time limit in minutes")
        .param("submissionScript", T::Str, "Submission script body (no #SBATCH)")
        .param("outputFilename", T::Str, "Output filename"),
        add_resource,
    )
    .expect("fresh registry");
    r.register(
        ToolSpec::new(
            "submit_and_monitor_job",
            "Submit and monitor jobs using saved resource suggestions.",
            "done and failed files",
        )
        .param("jobType", T::Str, "Type of job, e.g. 'DFT'"),
        submit,
    )
    .expect("fresh registry");
    r.register(
        ToolSpec::new("read_energy_from_output", "Read total energy from finished job outputs.", "energies (Ry)")
            .param("jobFileIdx", T::IntList, "Indices of finished jobs"),
        |ws, a| {
            let files = jobs_at(ws, &a.i64_list("jobFileIdx"))?;
            let mut out = Vec::new();
            for f in files {
                let o = finished_output(ws, &f)?;
                let mut m = Map::new();
                m.insert("file".into(), json!(f));
                m.insert("energy_Ry".into(), json!(o.total_energy));
                out.push(Json::Object(m));
            }
            Ok(Json::Array(out))
        },
    )
    .expect("fresh registry");
}

/// Registry holding the full 19-tool catalog.
pub fn tool_registry() -> ToolRegistry<Workspace> {
    let mut r = ToolRegistry::new();
    canvas_tools(&mut r);
    structure_tools(&mut r);
    generation_tools(&mut r);
    analysis_tools(&mut r);
    hpc_tools(&mut r);
    debug_assert_eq!(r.len(), TOOL_NAMES.len());
    r
}
