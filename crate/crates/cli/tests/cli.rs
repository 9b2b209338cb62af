use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn matscreen(workdir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_matscreen"))
        .arg("--workdir")
        .arg(workdir)
        .args(args)
        .env_remove("MATSCREEN_WORKDIR")
        .output()
        .expect("run matscreen")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn lithium_row_and_canvas_dump() {
    let dir = tempfile::tempdir().unwrap();
    let o = matscreen(dir.path(), &["sol27lc", "Li", "bcc", "3.451"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("sol27lc_Li.csv")).unwrap();
    assert!(csv.contains("Li,bcc,3.4510,3.4361,3.4400,40,13x13x13,0.1135,Success"), "{csv}");
    assert!(stdout(&o).contains("MAPE vs expert (BCC): 0.11%"));

    let snap = dir.path().join("sol27lc/Li/canvas.snap");
    let dump = matscreen(dir.path(), &["canvas", "dump", snap.to_str().unwrap()]);
    assert_eq!(dump.status.code(), Some(0));
    let text = stdout(&dump);
    for key in ["plan ", "converged_parameters ", "lattice_constant "] {
        assert!(text.lines().any(|l| l.starts_with(key)), "no {key:?} in dump:\n{text}");
    }

    let log = matscreen(dir.path(), &["canvas", "log", snap.to_str().unwrap()]);
    let snap_text = fs::read_to_string(&snap).unwrap();
    let records = snap_text.lines().filter(|l| l.starts_with("log ")).count();
    assert_eq!(stdout(&log).lines().count(), records);
    assert!(snap_text.ends_with(&format!("log={records}\n")));
}

#[test]
fn reports_are_byte_identical_for_a_seed() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        let o = matscreen(d.path(), &["adsorption", "Pt", "111", "CO", "--xc", "PBE"]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let o = matscreen(d.path(), &["beef", "Pt", "111", "CO"]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    for f in [
        "adsorption_Pt111_CO_PBE_2x2.txt",
        "adsorption_Pt111_CO_PBE_2x2.csv",
        "beef_Pt111_CO_2x2.txt",
        "beef_Pt111_CO_2x2.csv",
    ] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn seed_changes_the_ensemble() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    matscreen(a.path(), &["beef", "Pt", "111", "CO"]);
    matscreen(b.path(), &["--seed", "7", "beef", "Pt", "111", "CO"]);
    let f = "beef_Pt111_CO_2x2.csv";
    assert_ne!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap());
}

#[test]
fn usage_errors_exit_64() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["sol27lc", "Li", "hcp", "3.0"][..],
        &["sol27lc", "Li", "bcc"],
        &["sol27lc", "--all", "Li"],
        &["adsorption", "Pt", "111", "CO", "--xc", "HSE"],
        &["adsorption", "Pt", "111", "CO", "--supercell", "0x2"],
        &["sol27lc", "Li", "bcc", "-1"],
    ] {
        let o = matscreen(dir.path(), args);
        assert_eq!(o.status.code(), Some(64), "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn unsupported_metal_names_the_catalog() {
    let dir = tempfile::tempdir().unwrap();
    let o = matscreen(dir.path(), &["adsorption", "Xx", "111", "CO"]);
    assert_eq!(o.status.code(), Some(65));
    assert!(stderr(&o).contains("element \"Xx\" not in pseudopotential catalog"), "{}", stderr(&o));
}

#[test]
fn missing_snapshot_exits_66() {
    let dir = tempfile::tempdir().unwrap();
    let o = matscreen(dir.path(), &["canvas", "dump", "/nonexistent/canvas.snap"]);
    assert_eq!(o.status.code(), Some(66));
    assert!(stderr(&o).starts_with("error: snapshot not found"));
    assert!(stdout(&o).is_empty());
}

#[test]
fn exhausted_repairs_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = matscreen(dir.path(), &["--repair-limit", "1", "adsorption", "Pt", "111", "CO"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stdout(&o).contains("outcome: RepairLimitExceeded"));

    let o = matscreen(dir.path(), &["--repair-limit", "0", "beef", "Pt", "111", "CO"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stdout(&o).contains("ensemble jobs failed to converge"));
}

#[test]
fn system_without_fixture_is_a_plan_failure() {
    let dir = tempfile::tempdir().unwrap();
    let o = matscreen(dir.path(), &["sol27lc", "H", "fcc", "3.0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("PlanFailed"));
}

#[test]
fn two_member_ensemble_warns() {
    let dir = tempfile::tempdir().unwrap();
    let o = matscreen(dir.path(), &["beef", "Pt", "111", "CO", "-n", "2"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.contains("warning: ensemble σ from 2 members is degenerate"), "{out}");
    assert!(out.contains("inconclusive"));
}

#[test]
fn workdir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_matscreen"))
        .args(["sol27lc", "Na", "bcc", "4.214"])
        .env("MATSCREEN_WORKDIR", dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(dir.path().join("sol27lc_Na.csv").is_file());
}
