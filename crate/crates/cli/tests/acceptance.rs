//! Acceptance criteria 1 to 9. Prints one PASS/FAIL line per criterion and
//! exits non-zero when any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use matscreen_core::agentcore::AgentReport;
use matscreen_core::canvas::{AccessMode, Canvas, CanvasError, ChangeOp, Schema, Value};
use matscreen_core::hpcsim::{
    resource_path, suggest_resources, Backend, ClusterSpec, JobState, Partition, ResourceSuggestion, RunOutcome,
    Scheduler, CLUSTER_FORMAT, RESOURCE_FORMAT,
};
use matscreen_core::numerics::{bm3_energy, fit_eos, select_converged, ConvParam, ConvergenceSeries};
use matscreen_core::planner::{
    make_plan, record_step, replan, Batch, Capabilities, Next, Objective, PlanState, StepKind, Target, TemplatePolicy,
};
use matscreen_core::qeio::{
    parse_input_str, render_input, write_input, Calculation, CalcSpec, Functional, MixingMode, ParseMode,
    PseudoCatalog, RestartMode,
};
use matscreen_core::structlab::{build_bulk, build_molecule, build_surface, place_adsorbate, Axis, StructureModel};
use matscreen_core::units::{mev_to_ry, RY_PER_A3_TO_GPA};
use matscreen_core::workflow::reference::sol27_table;
use matscreen_core::workflow::{run_adsorption, run_lattice, Environment, Settings};

type Verdict = Result<String, String>;

const S2_PLAN: &[&str] = &[
    "Create initial structure of BCC Li with experimental lattice constant of 3.451 Å",
    "Find appropriate pseudopotential for Li",
    "Write initial DFT script for BCC Li",
    "Generate convergence test input files for cutoff energy and k-points",
    "Add resource suggestions for convergence test jobs",
    "Submit convergence test jobs to HPC and monitor completion",
    "Determine optimal parameters from convergence test results",
    "Generate equation of state (EOS) calculation input files using optimal parameters",
    "Add resource suggestions for EOS calculation jobs",
    "Submit EOS calculation jobs to HPC and monitor completion",
    "Read output files to extract energy values",
    "Calculate equilibrium lattice constant from EOS data",
    "Compare calculated lattice constant with experimental value and report results",
];

const S4_PLAN: &[&str] = &[
    "Create initial structure for Pt(111) surface with p(2x2) cell",
    "Create CO molecule and place it at FCC site on Pt(111) surface with different orientations",
    "Create CO molecule and place it at ontop site on Pt(111) surface with different orientations",
    "Create clean Pt(111) surface with p(2x2) cell for reference calculation",
    "Find appropriate pseudopotentials for Pt, C, and O",
    "Write initial DFT script with PBE exchange-correlation functional",
    "Generate convergence test input files for CO on Pt(111) system",
    "Add resource suggestions for convergence test jobs",
    "Submit convergence test jobs to HPC and wait for completion",
    "Determine optimal parameters from convergence test results",
    "Generate input files for CO at FCC site with different orientations using optimal parameters",
    "Generate input files for CO at ontop site with different orientations using optimal parameters",
    "Generate input file for clean Pt(111) surface using optimal parameters",
    "Generate input file for isolated CO molecule using optimal parameters",
    "Add resource suggestions for production calculations",
    "Submit production jobs to HPC and wait for completion",
    "Modify DFT input files to increase convergence criteria",
    "Add resource suggestions for modified production calculations",
    "Submit modified production jobs to HPC and wait for completion",
    "Modify DFT input files with more aggressive convergence settings",
    "Add resource suggestions for the newly modified calculations",
    "Submit modified jobs to HPC and wait for completion",
    "Extract energies from output files for all configurations",
    "Calculate adsorption energies for all configurations",
    "Identify most favorable configuration at FCC site and most favorable configuration at ontop site",
    "Calculate adsorption energy difference between most favorable FCC and ontop configurations",
    "Compare results with literature value and assess accuracy",
];

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn matscreen(workdir: &Path, args: &[&str]) -> Result<i32, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_matscreen"))
        .arg("--workdir")
        .arg(workdir)
        .args(args)
        .output()
        .map_err(|e| format!("spawn matscreen: {e}"))?;
    out.status
        .code()
        .ok_or_else(|| format!("matscreen {args:?} killed by signal"))
}

/// Data rows plus `# key value...` trailer lines of a report CSV.
struct ReportCsv {
    rows: Vec<BTreeMap<String, String>>,
    trailers: BTreeMap<String, Vec<String>>,
}

fn read_report(path: &Path, version: &str) -> Result<ReportCsv, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    ensure(text.starts_with(version), || format!("{} lacks version line {version:?}", path.display()))?;
    let mut trailers = BTreeMap::new();
    for line in text.lines().skip(1).filter(|l| l.starts_with("# ")) {
        let mut parts = line[2..].split_whitespace().map(String::from);
        if let Some(k) = parts.next() {
            trailers.insert(k, parts.collect());
        }
    }
    let body: String = text.lines().skip(1).filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect();
    let rows = csv::Reader::from_reader(body.as_bytes())
        .deserialize()
        .collect::<Result<Vec<BTreeMap<String, String>>, _>>()
        .map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(ReportCsv { rows, trailers })
}

fn num(s: &str) -> Result<f64, String> {
    s.parse().map_err(|_| format!("not a number: {s:?}"))
}

fn criterion_1(work: &Path) -> Verdict {
    let code = matscreen(work, &["sol27lc", "--all"])?;
    ensure(code == 0, || format!("sol27lc --all exited {code}"))?;
    let r = read_report(&work.join("sol27lc.csv"), "# matscreen-sol27lc v1")?;
    let table = sol27_table();
    ensure(r.rows.len() == 27, || format!("{} rows, expected 27", r.rows.len()))?;
    let mut worst = (0.0f64, String::new());
    for (row, entry) in r.rows.iter().zip(&table) {
        ensure(row["system"] == entry.system, || format!("row order: {} vs {}", row["system"], entry.system))?;
        let a = num(&row["a_computed"])?;
        let dev = 100.0 * (a - entry.a_agent).abs() / entry.a_agent;
        if dev >= worst.0 {
            worst = (dev, entry.system.clone());
        }
    }
    ensure(worst.0 <= 0.2, || format!("{} deviates {:.4}% from the agent column", worst.1, worst.0))?;
    let mut parts = vec![format!("max dev vs agent {:.4}% ({})", worst.0, worst.1)];
    for (class, target) in [("bcc", 0.36), ("fcc", 0.51), ("diamond", 1.00)] {
        let m = r
            .trailers
            .get(&format!("MAPE_{class}"))
            .and_then(|v| v.first())
            .ok_or_else(|| format!("no MAPE_{class} trailer"))?;
        let m = num(m)?;
        ensure((m - target).abs() <= 0.05, || format!("{class} MAPE {m:.4}% vs {target}%"))?;
        parts.push(format!("{class} MAPE {m:.4}%"));
    }
    Ok(parts.join(", "))
}

fn criterion_2() -> Verdict {
    let mut rng = StdRng::seed_from_u64(2);
    let (mut worst_v, mut worst_b) = (0.0f64, 0.0f64);
    for draw in 0..100 {
        let e0 = rng.random_range(-600.0..-2.0);
        let v0 = rng.random_range(8.0..90.0);
        let b0 = rng.random_range(20.0..400.0) / RY_PER_A3_TO_GPA;
        let bp = rng.random_range(3.0..6.5);
        let volumes: Vec<f64> = (0..7).map(|i| v0 * (1.0 - 0.075 + 0.025 * i as f64)).collect();
        let energies: Vec<f64> = volumes.iter().map(|&v| bm3_energy(e0, v0, b0, bp, v)).collect();
        let fit = fit_eos(&volumes, &energies).map_err(|e| format!("draw {draw}: {e}"))?;
        let dv = (fit.v0 - v0).abs() / v0;
        let db = (fit.b0 - b0).abs() / b0;
        ensure(dv <= 1e-6, || format!("draw {draw}: V0 rel err {dv:.2e}"))?;
        ensure(db <= 1e-3, || format!("draw {draw}: B0 rel err {db:.2e}"))?;
        worst_v = worst_v.max(dv);
        worst_b = worst_b.max(db);
    }
    Ok(format!("100 draws, worst V0 rel err {worst_v:.1e}, worst B0 rel err {worst_b:.1e}"))
}

fn brute_converged(s: &ConvergenceSeries, thr_mev: f64) -> Option<f64> {
    let thr = mev_to_ry(thr_mev);
    let n = s.values.len();
    (0..n)
        .filter(|&i| {
            (0..n)
                .filter(|&j| j == i || s.parameter.cheaper(s.values[i], s.values[j]))
                .all(|j| (s.energies[j] - s.reference).abs() <= thr)
        })
        .map(|i| s.values[i])
        .reduce(|best, v| if s.parameter.cheaper(v, best) { v } else { best })
}

fn criterion_3() -> Verdict {
    let mut rng = StdRng::seed_from_u64(3);
    let (mut mismatches, mut unconverged) = (0, 0);
    for case in 0..500 {
        let n = rng.random_range(2..10);
        let parameter = if rng.random_bool(0.5) { ConvParam::Ecutwfc } else { ConvParam::Kspacing };
        let values: Vec<f64> = match parameter {
            ConvParam::Ecutwfc => (0..n).map(|i| 30.0 + 10.0 * i as f64).collect(),
            ConvParam::Kspacing => (0..n).map(|i| 0.3 - 0.025 * i as f64).collect(),
        };
        let amp = 10f64.powf(rng.random_range(-1.0..2.0));
        let decay = rng.random_range(0.2..2.5);
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let reference = rng.random_range(-300.0..-5.0);
        let energies = (0..n)
            .map(|i| reference + sign * mev_to_ry(amp * (-decay * i as f64).exp()))
            .collect();
        let s = ConvergenceSeries {
            parameter,
            values,
            energies,
            reference,
        };
        let got = select_converged(&s, 1.0).ok();
        let want = brute_converged(&s, 1.0);
        if want.is_none() {
            unconverged += 1;
        }
        if got != want {
            mismatches += 1;
            eprintln!("case {case}: select_converged {got:?}, brute force {want:?}");
        }
    }
    ensure(mismatches == 0, || format!("{mismatches} mismatches of 500"))?;
    Ok(format!("500 series, 0 mismatches ({unconverged} with no converged value)"))
}

#[allow(clippy::approx_constant)]
fn criterion_4(work: &Path) -> Verdict {
    let mut parts = Vec::new();
    for (xc, target) in [("PBE", 0.104), ("LDA", 0.318)] {
        let code = matscreen(work, &["adsorption", "Pt", "111", "CO", "--xc", xc, "--supercell", "2x2"])?;
        ensure(code == 0, || format!("{xc}: exit {code}"))?;
        let r = read_report(&work.join(format!("adsorption_Pt111_CO_{xc}_2x2.csv")), "# matscreen-adsorption v1")?;
        let t = |k: &str| r.trailers.get(k).cloned().ok_or_else(|| format!("{xc}: no {k} trailer"));
        let d = num(&t("delta_be_eV")?[0])?;
        let site = t("favored_site")?[0].clone();
        let fails = t("initial_failures")?;
        let rounds = t("repair_rounds")?[0].clone();
        ensure((d - target).abs() <= 0.002, || format!("{xc}: delta_BE {d:.4} vs {target}"))?;
        ensure(site == "fcc", || format!("{xc}: favored site {site}"))?;
        ensure(fails == ["7", "8"], || format!("{xc}: initial failures {fails:?}"))?;
        ensure(rounds == "2", || format!("{xc}: {rounds} repair rounds"))?;
        parts.push(format!("{xc} delta_BE {d:.4} eV fcc, 7/8 failed, 2 rounds"));
    }
    Ok(parts.join("; "))
}

fn criterion_5(work: &Path) -> Verdict {
    let code = matscreen(work, &["beef", "Pt", "111", "CO"])?;
    ensure(code == 0, || format!("beef exited {code}"))?;
    let r = read_report(&work.join("beef_Pt111_CO_2x2.csv"), "# matscreen-beef v1")?;
    let q: BTreeMap<&str, &str> = r.rows.iter().map(|row| (row["quantity"].as_str(), row["value"].as_str())).collect();
    let get = |k: &str| q.get(k).copied().ok_or_else(|| format!("no {k} row"));
    let n = num(get("members")?)?;
    let mean = num(get("mean_eV")?)?;
    let sd = num(get("std_eV")?)?;
    let dist = num(get("sigma_distance")?)?;
    let disc = num(get("route_discrepancy_eV")?)?;
    let tol = num(get("route_tolerance_eV")?)?;
    ensure(n == 2000.0, || format!("{n} members"))?;
    let bound = 3.0 * sd / 2000f64.sqrt();
    ensure((mean.abs() - 0.12).abs() <= bound, || format!("|mean| {mean:.6} outside 0.12 ± {bound:.6}"))?;
    ensure((sd - 0.01).abs() <= 0.002, || format!("sigma {sd:.6}"))?;
    ensure(dist > 10.0, || format!("sigma distance {dist}"))?;
    ensure(disc <= tol, || format!("route discrepancy {disc:e} > {tol:e}"))?;
    ensure(get("verdict")? == "fcc favored", || "verdict is not fcc favored".into())?;
    Ok(format!("mean {mean:.5} eV (±{bound:.5}), sigma {sd:.5} eV, sigma distance {dist:.2}, routes differ {disc:.1e} eV"))
}

#[derive(Debug, Clone)]
struct ModelEntry {
    value: Value,
    mode: AccessMode,
    creator: String,
}

fn random_value(rng: &mut StdRng) -> Value {
    match rng.random_range(0..8) {
        0 => Value::Num(rng.random_range(-1e3..1e3)),
        1 => Value::str(format!("s{}", rng.random_range(0..50))),
        2 => Value::Bool(rng.random_bool(0.5)),
        3 => Value::str_list((0..rng.random_range(0..4)).map(|i| format!("f{i}_{}.pwi", rng.random_range(0..9)))),
        4 => Value::num_list((0..rng.random_range(0..4)).map(|_| rng.random_range(-5.0..5.0))),
        5 => Value::str_list(["../escape.pwi"]),
        6 => Value::record([("k", Value::Num(rng.random_range(0.0..1.0))), ("p", Value::path("a/b.traj"))]),
        _ => Value::Num(f64::NAN),
    }
}

fn random_mode(rng: &mut StdRng) -> AccessMode {
    match rng.random_range(0..5) {
        0 => AccessMode::ReadOnly,
        1 => AccessMode::Protected,
        2 => AccessMode::FormatRestricted(Schema::FilenameList),
        3 => AccessMode::FormatRestricted(Schema::NumberList),
        _ => AccessMode::Normal,
    }
}

// Independent statement of the two schemas.
fn schema_ok(schema: Schema, v: &Value) -> bool {
    let Value::List(items) = v else { return false };
    items.iter().all(|x| match (schema, x) {
        (Schema::NumberList, Value::Num(n)) => n.is_finite(),
        (Schema::FilenameList, Value::Str(s)) => {
            let exts = ["pwi", "pwo", "traj", "res", "json", "csv", "log"];
            s.rsplit_once('.').is_some_and(|(stem, ext)| {
                !stem.is_empty()
                    && stem.chars().all(|c| c.is_ascii_alphanumeric() || "_-.+".contains(c))
                    && exts.contains(&ext)
            })
        }
        _ => false,
    })
}

fn finite(v: &Value) -> bool {
    match v {
        Value::Num(x) => x.is_finite(),
        Value::List(xs) => xs.iter().all(finite),
        Value::Record(m) => m.values().all(finite),
        _ => true,
    }
}

/// Expected op for a write or create attempt, or None when it must be rejected.
fn predict(
    model: &BTreeMap<String, ModelEntry>,
    actor: &str,
    key: &str,
    value: &Value,
    create_mode: Option<AccessMode>,
    overwrite: bool,
) -> Option<ChangeOp> {
    if key.is_empty() || !finite(value) {
        return None;
    }
    match (model.get(key), create_mode) {
        (None, Some(AccessMode::FormatRestricted(s))) => schema_ok(s, value).then_some(ChangeOp::Write),
        (None, _) => Some(ChangeOp::Write),
        (Some(_), Some(_)) => None,
        (Some(_), None) if !overwrite => None,
        (Some(e), None) => {
            let allowed = match e.mode {
                AccessMode::Normal => true,
                AccessMode::ReadOnly => false,
                AccessMode::Protected => e.creator == actor,
                AccessMode::FormatRestricted(s) => schema_ok(s, value),
            };
            allowed.then_some(ChangeOp::Overwrite)
        }
    }
}

fn canvas_sequence(seed: u64, ops: usize) -> Result<usize, String> {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut canvas = Canvas::new();
    let mut model: BTreeMap<String, ModelEntry> = BTreeMap::new();
    let keys = ["", "plan", "job_list", "energies", "a", "b", "c", "d", "e"];
    let actors = ["dft", "hpc", "supervisor"];
    let mut attempts = 0usize;
    for op in 0..ops {
        let key = keys[rng.random_range(0..keys.len())];
        let actor = actors[rng.random_range(0..actors.len())];
        let value = random_value(&mut rng);
        let at = |msg: String| format!("seed {seed} op {op} ({actor} {key:?}): {msg}");
        match rng.random_range(0..4) {
            0 => {
                let got = canvas.read(key).ok().cloned();
                let want = model.get(key).map(|e| e.value.clone());
                ensure(got == want, || at(format!("read {got:?}, model {want:?}")))?;
                if want.is_none() {
                    ensure(matches!(canvas.read(key), Err(CanvasError::KeyNotFound(_))), || at("missing key error".into()))?;
                }
                continue;
            }
            kind => {
                let (create_mode, overwrite) = match kind {
                    1 => (Some(random_mode(&mut rng)), false),
                    _ => (None, rng.random_bool(0.7)),
                };
                let before = model.get(key).map(|e| e.value.clone());
                let expect = predict(&model, actor, key, &value, create_mode, overwrite);
                let result = match create_mode {
                    Some(m) => canvas.create(actor, key, value.clone(), m),
                    None => canvas.write(actor, key, value.clone(), overwrite),
                };
                attempts += 1;
                let last = canvas.log().last().cloned().ok_or_else(|| at("no log record".into()))?;
                ensure(last.seq as usize == attempts, || at(format!("log seq {} after {attempts} attempts", last.seq)))?;
                ensure(last.actor == actor && last.key == key, || at("log record names the wrong actor or key".into()))?;
                match (expect, result) {
                    (Some(op), Ok(ack)) => {
                        ensure(ack.op == op && last.op == op, || at(format!("op {:?}, expected {op:?}", ack.op)))?;
                        ensure(canvas.read(key).ok() == Some(&value), || at("write-then-read mismatch".into()))?;
                        let mode = create_mode.unwrap_or_else(|| model.get(key).map_or(AccessMode::Normal, |e| e.mode));
                        let creator = model.get(key).map_or(actor.to_string(), |e| e.creator.clone());
                        model.insert(key.to_string(), ModelEntry { value: value.clone(), mode, creator });
                    }
                    (None, Err(_)) => {
                        ensure(last.op == ChangeOp::Rejected, || at("rejection not logged as rejected".into()))?;
                        let after = canvas.read(key).ok().cloned();
                        ensure(after == before, || at("rejected write changed the value".into()))?;
                    }
                    (want, got) => return Err(at(format!("expected {want:?}, got {got:?}"))),
                }
            }
        }
        if op % 100 == 99 {
            let text = canvas.to_snapshot_string();
            let back = Canvas::from_snapshot_str(&text).map_err(|e| at(format!("restore: {e}")))?;
            ensure(back.entries().eq(canvas.entries()), || at("restored entries differ".into()))?;
            ensure(back.log() == canvas.log(), || at("restored log differs".into()))?;
            ensure(back.to_snapshot_string() == text, || at("snapshot not byte-stable".into()))?;
        }
    }
    ensure(canvas.log().len() == attempts, || format!("seed {seed}: {} log records, {attempts} attempts", canvas.log().len()))?;
    let seqs: Vec<u64> = canvas.log().iter().map(|r| r.seq).collect();
    ensure(seqs == (1..=attempts as u64).collect::<Vec<_>>(), || format!("seed {seed}: log sequence has gaps"))?;
    Ok(attempts)
}

fn criterion_6() -> Verdict {
    let mut total = 0;
    for seed in 0..10 {
        total += canvas_sequence(seed, 1000)?;
    }
    Ok(format!("10 sequences x 1000 ops, {total} mutations, 0 violations"))
}

/// Duration and success drawn from the file name and run seed.
struct RandomBackend;

impl Backend for RandomBackend {
    fn run(&self, input: &Path, output: &Path, _ntasks: usize, seed: u64) -> Result<RunOutcome, String> {
        let name = input.file_name().unwrap_or_default().to_string_lossy().to_string();
        let mut h = seed;
        for b in name.bytes() {
            h = h.wrapping_mul(0x100000001b3).wrapping_add(b as u64);
        }
        let mut rng = StdRng::seed_from_u64(h);
        fs::write(output, "done\n").map_err(|e| e.to_string())?;
        Ok(RunOutcome {
            converged: rng.random_bool(0.8),
            wall_seconds: rng.random_range(0..5) as f64 * 30.0 + rng.random_range(1.0..600.0),
        })
    }
}

fn random_cluster(rng: &mut StdRng) -> ClusterSpec {
    let n = rng.random_range(1..4);
    ClusterSpec {
        format: CLUSTER_FORMAT.into(),
        c0_seconds: 30.0,
        c1_seconds: 2.0,
        partitions: (0..n)
            .map(|i| Partition {
                name: format!("p{i}"),
                node_count: rng.random_range(1..6),
                cores_per_node: [8, 16, 36, 64][rng.random_range(0..4)],
                max_walltime_minutes: 1440,
            })
            .collect(),
    }
}

fn run_schedule(dir: &Path, cluster: &ClusterSpec, jobs: &[(String, usize, u32)], seed: u64) -> Result<Scheduler, String> {
    let mut inputs = Vec::new();
    for (name, p, nnodes) in jobs {
        let part = &cluster.partitions[*p];
        let input = dir.join(name);
        ResourceSuggestion {
            format: RESOURCE_FORMAT.into(),
            input: name.clone(),
            partition: part.name.clone(),
            nnodes: *nnodes,
            ntasks: (*nnodes * part.cores_per_node) as usize,
            runtime_minutes: 60,
            script: String::new(),
        }
        .save(&resource_path(&input))
        .map_err(|e| e.to_string())?;
        inputs.push(input);
    }
    let mut s = Scheduler::new(cluster.clone(), Box::new(RandomBackend), seed);
    // submit in a few waves so later jobs queue behind running ones
    let mut ids = Vec::new();
    for chunk in inputs.chunks(7) {
        ids.extend(s.submit(chunk).map_err(|e| e.to_string())?);
    }
    s.wait_all(&ids).map_err(|e| e.to_string())?;
    Ok(s)
}

fn check_schedule(s: &Scheduler, cluster: &ClusterSpec) -> Result<(), String> {
    let mut used: BTreeMap<&str, u32> = BTreeMap::new();
    let mut started: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    let mut terminal: BTreeMap<usize, usize> = BTreeMap::new();
    for e in s.trace() {
        let job = &s.jobs()[e.job];
        let cap = cluster.partition(&e.partition).map(|p| p.node_count).unwrap_or(0);
        match e.event {
            "start" => {
                let u = used.entry(job.partition.as_str()).or_default();
                *u += job.nnodes;
                ensure(*u <= cap, || format!("t={} {} uses {u} of {cap} nodes", e.time_ms, e.partition))?;
                started.entry(job.partition.as_str()).or_default().push(e.job);
            }
            "done" | "failed" => {
                *used.get_mut(job.partition.as_str()).ok_or("finish before start")? -= job.nnodes;
                *terminal.entry(e.job).or_default() += 1;
            }
            _ => {}
        }
    }
    for (p, order) in &started {
        let mut sorted = order.clone();
        sorted.sort_unstable();
        ensure(order == &sorted, || format!("partition {p} started out of FIFO order: {order:?}"))?;
    }
    for j in s.jobs() {
        ensure(terminal.get(&j.id) == Some(&1), || format!("job {} has {:?} terminal events", j.id, terminal.get(&j.id)))?;
        ensure(matches!(j.state, JobState::Done | JobState::Failed), || format!("job {} ends {}", j.id, j.state))?;
    }
    Ok(())
}

fn suggestion_cases(dir: &Path, rng: &mut StdRng, cluster: &ClusterSpec) -> Result<usize, String> {
    let cat = PseudoCatalog::builtin();
    let mut checked = 0;
    for i in 0..40 {
        let s = random_structure(rng)?;
        let mut spec = CalcSpec::default();
        spec.attach(&s, &cat).map_err(|e| e.to_string())?;
        spec.electron_maxstep = rng.random_range(50..400);
        let input = dir.join(format!("sugg{i}.pwi"));
        write_input(&spec, &s, &input).map_err(|e| e.to_string())?;
        let res = suggest_resources(&input, cluster).map_err(|e| e.to_string())?;
        let p = cluster.partition(&res.partition).ok_or("unknown partition")?;
        ensure(res.ntasks == s.len(), || format!("ntasks {} for {} atoms", res.ntasks, s.len()))?;
        ensure(res.nnodes as usize * p.cores_per_node as usize >= res.ntasks, || "tasks exceed nodes".into())?;
        ensure(res.runtime_minutes <= p.max_walltime_minutes, || "walltime over partition limit".into())?;
        checked += 1;
    }
    Ok(checked)
}

fn criterion_7() -> Verdict {
    let mut rng = StdRng::seed_from_u64(7);
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut jobs_total = 0;
    for case in 0..30 {
        let cluster = random_cluster(&mut rng);
        let jobs: Vec<(String, usize, u32)> = (0..rng.random_range(1..40))
            .map(|j| {
                let p = rng.random_range(0..cluster.partitions.len());
                let nnodes = rng.random_range(1..=cluster.partitions[p].node_count);
                (format!("c{case}_j{j}.pwi"), p, nnodes)
            })
            .collect();
        jobs_total += jobs.len();
        let seed = rng.random();
        let runs: Vec<Scheduler> = (0..2)
            .map(|k| {
                let dir = tmp.path().join(format!("case{case}_{k}"));
                fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
                run_schedule(&dir, &cluster, &jobs, seed)
            })
            .collect::<Result<_, _>>()?;
        check_schedule(&runs[0], &cluster).map_err(|e| format!("case {case}: {e}"))?;
        ensure(runs[0].trace_text() == runs[1].trace_text(), || format!("case {case}: traces differ between runs"))?;
    }
    let checked = suggestion_cases(tmp.path(), &mut rng, &ClusterSpec::builtin())?;
    Ok(format!("30 clusters, {jobs_total} jobs, traces identical; {checked} suggestions with ntasks = atoms"))
}

fn random_structure(rng: &mut StdRng) -> Result<StructureModel, String> {
    let metals = ["Pt", "Cu", "Ag", "Pd", "Ni", "Au", "Rh", "Ir"];
    let el = metals[rng.random_range(0..metals.len())];
    let s = match rng.random_range(0..3) {
        0 => {
            let (el, lat) = [("Li", "bcc"), ("Na", "bcc"), ("Cu", "fcc"), ("Si", "diamond"), ("Mo", "bcc")][rng.random_range(0..5)];
            build_bulk(el, lat, rng.random_range(3.0..6.0), None, None)
        }
        1 => {
            let cell = [rng.random_range(1..4), rng.random_range(1..4), rng.random_range(2..6)];
            build_surface(el, "fcc", rng.random_range(3.5..4.2), "111", cell, 1, rng.random_range(8.0..15.0)).map(|x| x.0)
        }
        _ => {
            let (slab, sites) = build_surface(el, "fcc", rng.random_range(3.5..4.2), "111", [2, 2, 4], 2, 10.0)
                .map_err(|e| e.to_string())?;
            let co = build_molecule("CO", &[[0.0; 3], [0.0, 0.0, 1.143]]).map_err(|e| e.to_string())?;
            let site = ["fcc", "hcp", "ontop", "bridge"][rng.random_range(0..4)];
            let tilt = rng.random_range(0.0..180.0);
            place_adsorbate(&slab, &co, sites[site], &[(tilt, Axis::Y)], rng.random_range(1.5..2.5))
        }
    };
    s.map_err(|e| e.to_string())
}

fn random_spec(rng: &mut StdRng, s: &StructureModel) -> Result<CalcSpec, String> {
    let mut spec = CalcSpec::default();
    spec.attach(s, &PseudoCatalog::builtin()).map_err(|e| e.to_string())?;
    spec.calculation = [Calculation::Scf, Calculation::Relax, Calculation::Ensemble][rng.random_range(0..3)];
    spec.restart_mode = if rng.random_bool(0.5) { RestartMode::FromScratch } else { RestartMode::Restart };
    spec.prefix = format!("run{}_{}", rng.random_range(0..1000), ["a", "b-c", "x.y"][rng.random_range(0..3)]);
    spec.ecutwfc = rng.random_range(20.0..150.0);
    spec.ecutrho = spec.ecutwfc * rng.random_range(4.0..12.0);
    spec.degauss = rng.random_range(0.001..0.1);
    spec.conv_thr = 10f64.powf(rng.random_range(-12.0..-4.0));
    spec.electron_maxstep = rng.random_range(1..1000);
    spec.mixing_beta = rng.random_range(0.01..1.0);
    spec.mixing_mode = if rng.random_bool(0.5) { MixingMode::Plain } else { MixingMode::LocalTf };
    spec.kspacing = rng.random_range(0.05..0.5);
    spec.input_dft = [Functional::Lda, Functional::Pbe, Functional::BeefVdw][rng.random_range(0..3)];
    spec.smearing = ["methfessel-paxton", "gaussian", "marzari-vanderbilt"][rng.random_range(0..3)].into();
    let extras: [(&str, String); 5] = [
        ("nspin", "2".into()),
        ("tprnfor", ".true.".into()),
        ("assume_isolated", "mt".into()),
        ("attempt", rng.random_range(0..5).to_string()),
        ("mixing_ndim", rng.random_range(4..12).to_string()),
    ];
    for (k, v) in extras {
        if rng.random_bool(0.4) {
            spec.set_param(k, &v).map_err(|e| e.to_string())?;
        }
    }
    Ok(spec)
}

fn jitter(rng: &mut StdRng, s: &mut StructureModel) {
    for p in &mut s.positions {
        for x in p.iter_mut() {
            *x += rng.random_range(-1e-3..1e-3);
        }
    }
}

fn criterion_8() -> Verdict {
    let mut rng = StdRng::seed_from_u64(8);
    for case in 0..500 {
        let mut s = random_structure(&mut rng).map_err(|e| format!("case {case}: {e}"))?;
        jitter(&mut rng, &mut s);
        let spec = random_spec(&mut rng, &s).map_err(|e| format!("case {case}: {e}"))?;
        let (text, _) = render_input(&spec, &s).map_err(|e| format!("case {case}: render: {e}"))?;
        let (text2, _) = render_input(&spec, &s).map_err(|e| format!("case {case}: render: {e}"))?;
        ensure(text == text2, || format!("case {case}: writer output differs between calls"))?;
        let (spec_back, s_back) =
            parse_input_str(&text, ParseMode::Strict).map_err(|e| format!("case {case}: parse: {e}\n{text}"))?;
        ensure(spec_back == spec, || format!("case {case}: spec differs\n{spec:?}\n{spec_back:?}"))?;
        ensure(s_back == s, || format!("case {case}: structure differs"))?;
        let (text3, _) = render_input(&spec_back, &s_back).map_err(|e| e.to_string())?;
        ensure(text3 == text, || format!("case {case}: rewrite is not byte-identical"))?;
    }
    Ok("500 cases, parse(write(x)) == x, writer byte-deterministic".into())
}

/// Drive the planner alone with scripted worker reports for the CO/Pt run.
fn scripted_copt() -> Result<PlanState, String> {
    let objective = Objective::Adsorption {
        metal: "Pt".into(),
        facet: "111".into(),
        adsorbate: "CO".into(),
        functional: Functional::Pbe,
        supercell: [2, 2],
    }
    .to_string();
    let policy = TemplatePolicy::default();
    let mut state = make_plan(&objective, &Capabilities::default(), &policy).map_err(|e| e.to_string())?;
    let mut production_submits = 0;
    while let Next::Worker(_) = state.next {
        let step = state.active().ok_or("no active step")?.clone();
        let report = match step.kind {
            StepKind::GenProduction(Target::Site(site)) => {
                AgentReport::ok(format!("Wrote 3 {site} inputs [slab+adsorbate]"), vec![])
            }
            StepKind::GenProduction(Target::CleanSlab) => AgentReport::ok("Wrote clean slab input [slab]", vec![]),
            StepKind::GenProduction(Target::Molecule) => AgentReport::ok("Wrote CO input [molecule]", vec![]),
            StepKind::Submit(Batch::Production) => {
                production_submits += 1;
                match production_submits {
                    1 => AgentReport::failed("7 of 8 production jobs failed to converge"),
                    2 => AgentReport::failed("6 of 7 production jobs failed to converge"),
                    _ => AgentReport::ok("7 jobs done", vec![]),
                }
            }
            StepKind::CompareAdsorption => AgentReport::ok("delta_BE 0.104 eV, fcc favored", vec![]),
            _ => AgentReport::ok(format!("done: {}", step.description), vec![]),
        };
        state = record_step(state, &report).map_err(|e| e.to_string())?;
        state = replan(state, &policy).map_err(|e| e.to_string())?;
    }
    Ok(state)
}

fn descriptions(state: &PlanState) -> Vec<String> {
    state.plan.iter().map(|s| s.description.clone()).collect()
}

fn plan_diff(got: &[String], want: &[&str]) -> String {
    for (i, (g, w)) in got.iter().zip(want).enumerate() {
        if g != w {
            return format!("step {}: {g:?} vs {w:?}", i + 1);
        }
    }
    format!("{} steps vs {}", got.len(), want.len())
}

fn criterion_9(work: &Path) -> Verdict {
    let env = Environment::builtin(Settings::default());
    let li = sol27_table().into_iter().filter(|e| e.system == "Li").collect::<Vec<_>>();
    let lattice = run_lattice(&env, &work.join("replay_li"), &li).map_err(|e| e.to_string())?;
    let state = &lattice.rows[0].run.run.state;
    let got = descriptions(state);
    ensure(got == S2_PLAN, || format!("lattice plan: {}", plan_diff(&got, S2_PLAN)))?;
    ensure(state.past_steps.len() == 13, || format!("{} past steps", state.past_steps.len()))?;

    let scripted = scripted_copt()?;
    let got = descriptions(&scripted);
    ensure(got == S4_PLAN, || format!("scripted CO/Pt plan: {}", plan_diff(&got, S4_PLAN)))?;
    ensure(scripted_copt()? == scripted, || "scripted replay is not deterministic".into())?;

    let runs: Vec<PlanState> = (0..2)
        .map(|k| {
            run_adsorption(&env, &work.join(format!("replay_copt{k}")), "Pt", "111", "CO", Functional::Pbe, [2, 2])
                .map(|r| r.run.run.state)
                .map_err(|e| e.to_string())
        })
        .collect::<Result<_, _>>()?;
    let got = descriptions(&runs[0]);
    ensure(got == S4_PLAN, || format!("executed CO/Pt plan: {}", plan_diff(&got, S4_PLAN)))?;
    ensure(runs[0] == runs[1], || "end-to-end final plan state differs between runs".into())?;
    let repairs: BTreeSet<u32> = runs[0]
        .plan
        .iter()
        .filter_map(|s| match s.kind {
            StepKind::Repair { batch: Batch::Production, round } => Some(round),
            _ => None,
        })
        .collect();
    ensure(repairs == BTreeSet::from([1, 2]), || format!("repair rounds {repairs:?}"))?;
    Ok(format!(
        "lattice plan 13/13 steps, CO/Pt plan {} steps with molecule insert and 2 repair rounds, final state deterministic",
        S4_PLAN.len()
    ))
}

fn main() {
    let tmp = tempfile::tempdir().expect("temporary directory");
    let work: PathBuf = tmp.path().to_path_buf();
    let criteria: Vec<(&str, Box<dyn Fn() -> Verdict>)> = vec![
        ("Sol27LC end-to-end", Box::new(|| criterion_1(&work.join("c1")))),
        ("EOS oracle", Box::new(criterion_2)),
        ("convergence selection oracle", Box::new(criterion_3)),
        ("CO/Pt repair loop", Box::new(|| criterion_4(&work.join("c4")))),
        ("BEEF statistics", Box::new(|| criterion_5(&work.join("c5")))),
        ("canvas properties", Box::new(criterion_6)),
        ("scheduler properties", Box::new(criterion_7)),
        ("I/O round trip", Box::new(criterion_8)),
        ("planner replay", Box::new(|| criterion_9(&work.join("c9")))),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let verdict = check();
        let secs = t.elapsed().as_secs_f64();
        match verdict {
            Ok(detail) => println!("PASS {} {name}: {detail} [{secs:.2}s]", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {} {name}: {why} [{secs:.2}s]", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
