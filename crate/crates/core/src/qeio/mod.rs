//! Plane-wave DFT input/output files: a pw.x namelist subset writer and
//! parser, the output-document grammar, pseudopotential lookup and k-grids.

mod elements;
mod output;
mod parser;
mod pseudo;
mod writer;

use std::collections::BTreeMap;
use std::fmt;
use std::io;
use std::str::FromStr;

use thiserror::Error;

use crate::structlab::{geom, Mat3, StructureError};

pub use elements::atomic_mass;
pub use output::{parse_output, parse_output_str, render_output, OutputSummary, OUTPUT_HEADER};
pub use parser::{parse_input, parse_input_str, ParseMode};
pub use pseudo::{find_pseudopotential, PseudoCatalog};
pub use writer::{render_input, write_input, Warning};

#[derive(Debug, Error)]
pub enum QeError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unknown field {key:?} at line {line}")]
    UnknownField { line: usize, key: String },
    #[error("missing field {0}")]
    MissingField(String),
    #[error("invalid calculation spec: {0}")]
    InvariantViolation(String),
    #[error("element {0:?} not in pseudopotential catalog")]
    ElementNotInCatalog(String),
    #[error("cell is singular")]
    SingularCell,
    #[error("output has no final total energy")]
    MissingEnergy,
    #[error(transparent)]
    Structure(#[from] StructureError),
}

macro_rules! keyword_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(format!(
                        concat!(stringify!($name), " must be one of {:?} (got {:?})"),
                        [$($text),+],
                        other
                    )),
                }
            }
        }
    };
}

keyword_enum!(Calculation { Scf => "scf", Relax => "relax", Ensemble => "ensemble" });
keyword_enum!(RestartMode { FromScratch => "from_scratch", Restart => "restart" });
keyword_enum!(MixingMode { Plain => "plain", LocalTf => "local-TF" });
keyword_enum!(Functional { Lda => "LDA", Pbe => "PBE", BeefVdw => "BEEF-vdW" });

#[derive(Debug, Clone, PartialEq)]
pub struct CalcSpec {
    pub calculation: Calculation,
    pub restart_mode: RestartMode,
    pub prefix: String,
    pub disk_io: String,
    pub ibrav: i64,
    pub nat: usize,
    pub ntyp: usize,
    pub ecutwfc: f64,
    pub ecutrho: f64,
    pub occupations: String,
    pub smearing: String,
    pub degauss: f64,
    pub conv_thr: f64,
    pub electron_maxstep: u32,
    pub mixing_beta: f64,
    pub mixing_mode: MixingMode,
    pub diagonalization: String,
    pub startingwfc: String,
    pub kspacing: f64,
    pub input_dft: Functional,
    pub pseudopotentials: BTreeMap<String, String>,
    /// Raw Fortran tokens keyed by parameter name (strings keep their quotes).
    pub extras: BTreeMap<String, String>,
}

impl Default for CalcSpec {
    fn default() -> Self {
        CalcSpec {
            calculation: Calculation::Scf,
            restart_mode: RestartMode::FromScratch,
            prefix: "calc".into(),
            disk_io: "low".into(),
            ibrav: 0,
            nat: 0,
            ntyp: 0,
            ecutwfc: 40.0,
            ecutrho: 320.0,
            occupations: "smearing".into(),
            smearing: "methfessel-paxton".into(),
            degauss: 0.02,
            conv_thr: 1e-6,
            electron_maxstep: 200,
            mixing_beta: 0.7,
            mixing_mode: MixingMode::Plain,
            diagonalization: "david".into(),
            startingwfc: "atomic+random".into(),
            kspacing: 0.1,
            input_dft: Functional::Pbe,
            pseudopotentials: BTreeMap::new(),
            extras: BTreeMap::new(),
        }
    }
}

/// Extra keywords the writer places inside a namelist. Any other extras are
/// carried as `!@ key = value` directive lines, which pw.x reads as comments.
pub const NAMELIST_EXTRAS: &[(&str, &str)] = &[
    ("tprnfor", "CONTROL"),
    ("tstress", "CONTROL"),
    ("outdir", "CONTROL"),
    ("pseudo_dir", "CONTROL"),
    ("verbosity", "CONTROL"),
    ("nstep", "CONTROL"),
    ("etot_conv_thr", "CONTROL"),
    ("forc_conv_thr", "CONTROL"),
    ("max_seconds", "CONTROL"),
    ("nspin", "SYSTEM"),
    ("starting_magnetization(1)", "SYSTEM"),
    ("starting_magnetization(2)", "SYSTEM"),
    ("assume_isolated", "SYSTEM"),
    ("nbnd", "SYSTEM"),
    ("tot_charge", "SYSTEM"),
    ("vdw_corr", "SYSTEM"),
    ("david_ndim", "ELECTRONS"),
    ("scf_must_converge", "ELECTRONS"),
    ("mixing_ndim", "ELECTRONS"),
    ("diago_full_acc", "ELECTRONS"),
    ("startingpot", "ELECTRONS"),
];

pub fn namelist_of_extra(key: &str) -> Option<&'static str> {
    NAMELIST_EXTRAS.iter().find(|(k, _)| *k == key).map(|&(_, n)| n)
}

/// Quote a string as a Fortran literal.
pub fn fortran_str(s: &str) -> String {
    format!("'{s}'")
}

/// Parse a Fortran numeric literal (`1.0d-6`, `1e-6`, `40`).
pub fn parse_fortran_f64(tok: &str) -> Option<f64> {
    let t = tok.replace(['d', 'D'], "e");
    t.parse::<f64>().ok().filter(|v| v.is_finite())
}

pub fn parse_fortran_bool(tok: &str) -> Option<bool> {
    match tok.to_ascii_lowercase().as_str() {
        ".true." | ".t." | "t" => Some(true),
        ".false." | ".f." | "f" => Some(false),
        _ => None,
    }
}

/// Fortran logical literal.
pub fn fortran_bool(b: bool) -> &'static str {
    if b {
        ".true."
    } else {
        ".false."
    }
}

impl CalcSpec {
    /// Fill nat, ntyp and pseudopotentials from a structure and catalog.
    pub fn attach(&mut self, structure: &crate::structlab::StructureModel, catalog: &PseudoCatalog) -> Result<(), QeError> {
        self.nat = structure.len();
        let species = structure.species();
        self.ntyp = species.len();
        self.pseudopotentials.clear();
        for sp in species {
            let f = find_pseudopotential(&sp, catalog)?;
            self.pseudopotentials.insert(sp, f);
        }
        Ok(())
    }

    /// Check the spec's own invariants (not the structure pairing).
    pub fn validate(&self) -> Result<(), QeError> {
        let bad = |m: String| Err(QeError::InvariantViolation(m));
        if !(self.ecutwfc > 0.0) || !self.ecutwfc.is_finite() {
            return bad(format!("ecutwfc must be > 0 (got {})", self.ecutwfc));
        }
        if !(self.ecutrho > 0.0) || !self.ecutrho.is_finite() {
            return bad(format!("ecutrho must be > 0 (got {})", self.ecutrho));
        }
        if !(self.kspacing > 0.0) || !self.kspacing.is_finite() {
            return bad(format!("kspacing must be > 0 (got {})", self.kspacing));
        }
        if !(self.mixing_beta > 0.0 && self.mixing_beta <= 1.0) {
            return bad(format!("mixing_beta must lie in (0, 1] (got {})", self.mixing_beta));
        }
        if self.electron_maxstep < 1 {
            return bad("electron_maxstep must be >= 1".into());
        }
        if !(self.degauss > 0.0) || !self.degauss.is_finite() {
            return bad(format!("degauss must be > 0 (got {})", self.degauss));
        }
        if !(self.conv_thr > 0.0) || !self.conv_thr.is_finite() {
            return bad(format!("conv_thr must be > 0 (got {})", self.conv_thr));
        }
        for (name, v) in [
            ("prefix", &self.prefix),
            ("disk_io", &self.disk_io),
            ("occupations", &self.occupations),
            ("smearing", &self.smearing),
            ("diagonalization", &self.diagonalization),
            ("startingwfc", &self.startingwfc),
        ] {
            if v.is_empty() || v.contains(['\'', '"', '\n', '\r', '!']) {
                return bad(format!("{name} must be a non-empty plain string (got {v:?})"));
            }
        }
        for (k, v) in &self.pseudopotentials {
            if v.is_empty() || v.contains(char::is_whitespace) || k.is_empty() {
                return bad(format!("bad pseudopotential entry {k:?} -> {v:?}"));
            }
        }
        for (k, v) in &self.extras {
            let key_ok = k.chars().next().is_some_and(|c| c.is_ascii_alphabetic())
                && k.chars().all(|c| c.is_ascii_alphanumeric() || "_()".contains(c));
            if !key_ok || parser::is_reserved_key(k) {
                return bad(format!("bad extras key {k:?}"));
            }
            if v.trim() != v || v.is_empty() || v.contains(['\n', '\r', ',', '!']) {
                return bad(format!("bad extras value for {k}: {v:?}"));
            }
        }
        Ok(())
    }

    /// Current value of a named parameter as text (typed field or extras).
    pub fn get_param(&self, key: &str) -> Option<String> {
        Some(match key {
            "calculation" => self.calculation.to_string(),
            "restart_mode" => self.restart_mode.to_string(),
            "prefix" => self.prefix.clone(),
            "disk_io" => self.disk_io.clone(),
            "ibrav" => self.ibrav.to_string(),
            "nat" => self.nat.to_string(),
            "ntyp" => self.ntyp.to_string(),
            "ecutwfc" => format!("{:?}", self.ecutwfc),
            "ecutrho" => format!("{:?}", self.ecutrho),
            "occupations" => self.occupations.clone(),
            "smearing" => self.smearing.clone(),
            "degauss" => format!("{:?}", self.degauss),
            "conv_thr" => format!("{:?}", self.conv_thr),
            "electron_maxstep" => self.electron_maxstep.to_string(),
            "mixing_beta" => format!("{:?}", self.mixing_beta),
            "mixing_mode" => self.mixing_mode.to_string(),
            "diagonalization" => self.diagonalization.clone(),
            "startingwfc" => self.startingwfc.clone(),
            "kspacing" => format!("{:?}", self.kspacing),
            "input_dft" => self.input_dft.to_string(),
            other => return self.extras.get(other).map(|v| v.trim_matches('\'').to_string()),
        })
    }

    /// Set a named parameter from text. Unknown names go to extras; string
    /// extras are quoted automatically unless numeric or logical.
    /// Raising ecutwfc keeps ecutrho at 8x when it was at 8x before.
    /// The spec is unchanged when the new value is rejected.
    pub fn set_param(&mut self, key: &str, value: &str) -> Result<(), QeError> {
        let mut next = self.clone();
        next.apply_param(key, value)?;
        next.validate()?;
        *self = next;
        Ok(())
    }

    fn apply_param(&mut self, key: &str, value: &str) -> Result<(), QeError> {
        let num = |v: &str| {
            parse_fortran_f64(v).ok_or_else(|| QeError::InvariantViolation(format!("{key} needs a number (got {v:?})")))
        };
        let int = |v: &str| {
            v.parse::<i64>()
                .map_err(|_| QeError::InvariantViolation(format!("{key} needs an integer (got {v:?})")))
        };
        let kw = |e: String| QeError::InvariantViolation(e);
        let v = value.trim().trim_matches('\'');
        match key {
            "calculation" => self.calculation = v.parse().map_err(kw)?,
            "restart_mode" => self.restart_mode = v.parse().map_err(kw)?,
            "prefix" => self.prefix = v.to_string(),
            "disk_io" => self.disk_io = v.to_string(),
            "ibrav" => self.ibrav = int(v)?,
            "nat" => self.nat = int(v)?.max(0) as usize,
            "ntyp" => self.ntyp = int(v)?.max(0) as usize,
            "ecutwfc" => {
                let new = num(v)?;
                if self.ecutrho == 8.0 * self.ecutwfc {
                    self.ecutrho = 8.0 * new;
                }
                self.ecutwfc = new;
            }
            "ecutrho" => self.ecutrho = num(v)?,
            "occupations" => self.occupations = v.to_string(),
            "smearing" => self.smearing = v.to_string(),
            "degauss" => self.degauss = num(v)?,
            "conv_thr" => self.conv_thr = num(v)?,
            "electron_maxstep" => {
                self.electron_maxstep = u32::try_from(int(v)?)
                    .map_err(|_| QeError::InvariantViolation(format!("electron_maxstep out of range: {v}")))?
            }
            "mixing_beta" => self.mixing_beta = num(v)?,
            "mixing_mode" => self.mixing_mode = v.parse().map_err(kw)?,
            "diagonalization" => self.diagonalization = v.to_string(),
            "startingwfc" => self.startingwfc = v.to_string(),
            "kspacing" => self.kspacing = num(v)?,
            "input_dft" => self.input_dft = v.parse().map_err(kw)?,
            other => {
                let tok = if parse_fortran_f64(v).is_some() || parse_fortran_bool(v).is_some() {
                    v.to_string()
                } else {
                    fortran_str(v)
                };
                self.extras.insert(other.to_string(), tok);
            }
        }
        Ok(())
    }
}

/// Monkhorst-Pack grid from a k-point spacing: n_i = max(1, ceil(|b_i| / kspacing)).
pub fn kgrid(cell: &Mat3, kspacing: f64) -> Result<[u32; 3], QeError> {
    if !(kspacing > 0.0) || !kspacing.is_finite() {
        return Err(QeError::InvariantViolation(format!("kspacing must be > 0 (got {kspacing})")));
    }
    let b = geom::reciprocal(cell).ok_or(QeError::SingularCell)?;
    let mut out = [1u32; 3];
    for (o, row) in out.iter_mut().zip(b.iter()) {
        let n = (geom::norm(*row) / kspacing).ceil();
        *o = if n.is_finite() && n >= 1.0 { n.min(u32::MAX as f64) as u32 } else { 1 };
    }
    Ok(out)
}

/// Effective k-grid for a structure: non-periodic axes get a single point.
pub fn kgrid_for(structure: &crate::structlab::StructureModel, kspacing: f64) -> Result<[u32; 3], QeError> {
    let mut g = kgrid(&structure.cell, kspacing)?;
    for k in 0..3 {
        if !structure.pbc[k] {
            g[k] = 1;
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cubic(a: f64) -> Mat3 {
        [[a, 0.0, 0.0], [0.0, a, 0.0], [0.0, 0.0, a]]
    }

    #[test]
    fn kgrid_examples() {
        let b = 2.0 * std::f64::consts::PI / 3.451;
        assert!((b - 1.8207).abs() < 1e-4);
        assert_eq!(kgrid(&cubic(3.451), 0.1).unwrap(), [19; 3]);
        assert_eq!(kgrid(&cubic(3.451), 5.0).unwrap(), [1; 3]);
        assert_eq!(kgrid(&cubic(3.451), 0.152).unwrap(), [12; 3]);
        assert!(matches!(kgrid(&[[1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]], 0.1), Err(QeError::SingularCell)));
        assert!(kgrid(&cubic(3.0), 0.0).is_err());
    }

    #[test]
    fn kgrid_monotone_in_spacing() {
        let cell = [[2.8, 0.0, 0.0], [-1.4, 2.42, 0.0], [0.0, 0.0, 21.0]];
        let mut prev = [u32::MAX; 3];
        for i in 1..200 {
            let g = kgrid(&cell, i as f64 * 0.005).unwrap();
            assert!((0..3).all(|k| g[k] <= prev[k]));
            prev = g;
        }
    }

    #[test]
    fn set_param_behaviour() {
        let mut s = CalcSpec::default();
        s.set_param("ecutwfc", "80").unwrap();
        assert_eq!((s.ecutwfc, s.ecutrho), (80.0, 640.0));
        s.set_param("ecutrho", "700").unwrap();
        s.set_param("ecutwfc", "90").unwrap();
        assert_eq!(s.ecutrho, 700.0);
        s.set_param("mixing_mode", "local-TF").unwrap();
        assert_eq!(s.mixing_mode, MixingMode::LocalTf);
        s.set_param("david_ndim", "4").unwrap();
        s.set_param("assume_isolated", "mt").unwrap();
        assert_eq!(s.extras["assume_isolated"], "'mt'");
        assert_eq!(s.get_param("assume_isolated").as_deref(), Some("mt"));
        assert_eq!(s.get_param("david_ndim").as_deref(), Some("4"));
        assert!(s.set_param("mixing_beta", "1.5").is_err());
        assert_eq!(s.mixing_beta, 0.7);
        assert!(s.set_param("mixing_mode", "broyden").is_err());
        assert!(s.set_param("degauss", "abc").is_err());
    }

    #[test]
    fn fortran_literals() {
        assert_eq!(parse_fortran_f64("1.0d-6"), Some(1e-6));
        assert_eq!(parse_fortran_f64("40"), Some(40.0));
        assert_eq!(parse_fortran_f64("x"), None);
        assert_eq!(parse_fortran_bool(".TRUE."), Some(true));
    }
}
