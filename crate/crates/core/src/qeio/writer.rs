//! Input writer. Layout:
//!
//! ```text
//! !@ matscreen-pwi v1
//! !@ kspacing = 0.1
//! !@ pbc = T T T
//! !@ <extra> = <token>          (extras with no namelist home, sorted)
//! &CONTROL ... /  &SYSTEM ... /  &ELECTRONS ... /
//! ATOMIC_SPECIES
//! CELL_PARAMETERS angstrom
//! ATOMIC_POSITIONS angstrom     (fixed atoms carry "0 0 0")
//! K_POINTS automatic
//! ```
//!
//! `!@` lines are comments to pw.x. Floats use the shortest round-trip form.

use std::fmt;
use std::fs;
use std::path::Path;

use crate::structlab::StructureModel;

use super::{atomic_mass, fortran_str, kgrid_for, namelist_of_extra, CalcSpec, QeError};

pub const INPUT_HEADER: &str = "!@ matscreen-pwi v1";

#[derive(Debug, Clone, PartialEq)]
pub enum Warning {
    EcutwfcOutsideGuidance(f64),
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Warning::EcutwfcOutsideGuidance(v) => {
                write!(f, "ecutwfc = {v} Ry is outside the usual 30-100 Ry range")
            }
        }
    }
}

fn check_pairing(spec: &CalcSpec, s: &StructureModel) -> Result<(), QeError> {
    let bad = |m: String| Err(QeError::InvariantViolation(m));
    s.validate()?;
    if spec.nat != s.len() {
        return bad(format!("nat = {} but structure has {} atoms", spec.nat, s.len()));
    }
    let species = s.species();
    if spec.ntyp != species.len() {
        return bad(format!("ntyp = {} but structure has {} species", spec.ntyp, species.len()));
    }
    for sp in &species {
        if !spec.pseudopotentials.contains_key(sp) {
            return bad(format!("no pseudopotential for {sp}"));
        }
        if atomic_mass(sp).is_none() {
            return bad(format!("no atomic mass for {sp}"));
        }
    }
    if spec.pseudopotentials.len() != species.len() {
        return bad("pseudopotentials list species absent from the structure".into());
    }
    Ok(())
}

/// Render the input text; warnings are advisory only.
pub fn render_input(spec: &CalcSpec, s: &StructureModel) -> Result<(String, Vec<Warning>), QeError> {
    spec.validate()?;
    check_pairing(spec, s)?;
    let mut warnings = Vec::new();
    if !(30.0..=100.0).contains(&spec.ecutwfc) {
        warnings.push(Warning::EcutwfcOutsideGuidance(spec.ecutwfc));
    }
    let tf = |b: bool| if b { "T" } else { "F" };
    let mut out = String::new();
    let mut line = |l: String| {
        out.push_str(&l);
        out.push('\n');
    };
    line(INPUT_HEADER.to_string());
    line(format!("!@ kspacing = {:?}", spec.kspacing));
    line(format!("!@ pbc = {} {} {}", tf(s.pbc[0]), tf(s.pbc[1]), tf(s.pbc[2])));
    if let Some(tags) = &s.layer_tags {
        let t: Vec<String> = tags.iter().map(u32::to_string).collect();
        line(format!("!@ tags = {}", t.join(" ")));
    }
    for (k, v) in &spec.extras {
        if namelist_of_extra(k).is_none() {
            line(format!("!@ {k} = {v}"));
        }
    }
    let extras_for = |nl: &str| -> Vec<String> {
        spec.extras
            .iter()
            .filter(|(k, _)| namelist_of_extra(k) == Some(nl))
            .map(|(k, v)| format!("  {k} = {v}"))
            .collect()
    };

    line("&CONTROL".into());
    line(format!("  calculation = {}", fortran_str(spec.calculation.as_str())));
    line(format!("  restart_mode = {}", fortran_str(spec.restart_mode.as_str())));
    line(format!("  prefix = {}", fortran_str(&spec.prefix)));
    line(format!("  disk_io = {}", fortran_str(&spec.disk_io)));
    for l in extras_for("CONTROL") {
        line(l);
    }
    line("/".into());

    line("&SYSTEM".into());
    line(format!("  ibrav = {}", spec.ibrav));
    line(format!("  nat = {}", spec.nat));
    line(format!("  ntyp = {}", spec.ntyp));
    line(format!("  ecutwfc = {:?}", spec.ecutwfc));
    line(format!("  ecutrho = {:?}", spec.ecutrho));
    line(format!("  occupations = {}", fortran_str(&spec.occupations)));
    line(format!("  smearing = {}", fortran_str(&spec.smearing)));
    line(format!("  degauss = {:?}", spec.degauss));
    line(format!("  input_dft = {}", fortran_str(spec.input_dft.as_str())));
    for l in extras_for("SYSTEM") {
        line(l);
    }
    line("/".into());

    line("&ELECTRONS".into());
    line(format!("  conv_thr = {:?}", spec.conv_thr));
    line(format!("  electron_maxstep = {}", spec.electron_maxstep));
    line(format!("  mixing_beta = {:?}", spec.mixing_beta));
    line(format!("  mixing_mode = {}", fortran_str(spec.mixing_mode.as_str())));
    line(format!("  diagonalization = {}", fortran_str(&spec.diagonalization)));
    line(format!("  startingwfc = {}", fortran_str(&spec.startingwfc)));
    for l in extras_for("ELECTRONS") {
        line(l);
    }
    line("/".into());

    line("ATOMIC_SPECIES".into());
    for sp in s.species() {
        let mass = atomic_mass(&sp).expect("checked above");
        line(format!("{sp} {mass:?} {}", spec.pseudopotentials[&sp]));
    }
    line("CELL_PARAMETERS angstrom".into());
    for r in &s.cell {
        line(format!("{:?} {:?} {:?}", r[0], r[1], r[2]));
    }
    line("ATOMIC_POSITIONS angstrom".into());
    for (i, (sym, p)) in s.symbols.iter().zip(&s.positions).enumerate() {
        let flags = if s.fixed.contains(&i) { " 0 0 0" } else { "" };
        line(format!("{sym} {:?} {:?} {:?}{flags}", p[0], p[1], p[2]));
    }
    let g = kgrid_for(s, spec.kspacing)?;
    line("K_POINTS automatic".into());
    line(format!("{} {} {} 0 0 0", g[0], g[1], g[2]));
    Ok((out, warnings))
}

/// Write `<path>` (must end in `.pwi`). Guidance warnings are logged and returned.
pub fn write_input(spec: &CalcSpec, s: &StructureModel, path: impl AsRef<Path>) -> Result<Vec<Warning>, QeError> {
    let path = path.as_ref();
    if path.extension().and_then(|e| e.to_str()) != Some("pwi") {
        return Err(QeError::InvariantViolation(format!(
            "input file name must end in .pwi: {}",
            path.display()
        )));
    }
    let (text, warnings) = render_input(spec, s)?;
    for w in &warnings {
        log::warn!("{}: {w}", path.display());
    }
    fs::write(path, text)?;
    Ok(warnings)
}

