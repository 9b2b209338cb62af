//! Output document grammar.
//!
//! ```text
//! matscreen-pw-output v1
//! system = <label>
//! iter 1 accuracy 0.9
//! ...
//! ENSEMBLE <n>              (optional, n energies in Ry, one per line)
//! END ENSEMBLE
//! wall_seconds = 274.0
//! ! total energy = -15.1 Ry
//! ```
//!
//! An unconverged run replaces the last line with
//! `convergence NOT achieved after <n> iterations` followed by
//! `total energy = <E> Ry` (no leading `!`).

use std::fs;
use std::path::Path;

use super::QeError;

pub const OUTPUT_HEADER: &str = "matscreen-pw-output v1";
const NOT_CONVERGED: &str = "convergence NOT achieved";

#[derive(Debug, Clone, PartialEq)]
pub struct OutputSummary {
    pub total_energy: f64,
    pub converged: bool,
    pub n_scf: usize,
    pub accuracy_series: Vec<f64>,
    pub ensemble_energies: Option<Vec<f64>>,
    pub wall_seconds: f64,
}

pub fn render_output(system: &str, o: &OutputSummary) -> String {
    let mut out = format!("{OUTPUT_HEADER}\nsystem = {}\n", system.replace('\n', " "));
    for (i, a) in o.accuracy_series.iter().enumerate() {
        out.push_str(&format!("iter {} accuracy {a:?}\n", i + 1));
    }
    if let Some(ens) = &o.ensemble_energies {
        out.push_str(&format!("ENSEMBLE {}\n", ens.len()));
        for e in ens {
            out.push_str(&format!("{e:?}\n"));
        }
        out.push_str("END ENSEMBLE\n");
    }
    out.push_str(&format!("wall_seconds = {:?}\n", o.wall_seconds));
    if o.converged {
        out.push_str(&format!("! total energy = {:?} Ry\n", o.total_energy));
    } else {
        out.push_str(&format!("{NOT_CONVERGED} after {} iterations\n", o.n_scf));
        out.push_str(&format!("total energy = {:?} Ry\n", o.total_energy));
    }
    out
}

fn bad(line: usize, message: impl Into<String>) -> QeError {
    QeError::Syntax {
        line,
        column: 1,
        message: message.into(),
    }
}

fn num(line: usize, tok: &str) -> Result<f64, QeError> {
    tok.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| bad(line, format!("bad number {tok:?}")))
}

fn energy_of(line: usize, rest: &str) -> Result<f64, QeError> {
    let v = rest
        .trim()
        .strip_prefix('=')
        .and_then(|r| r.trim().strip_suffix("Ry"))
        .ok_or_else(|| bad(line, "expected 'total energy = <E> Ry'"))?;
    num(line, v)
}

/// Lines outside the grammar are ignored; malformed grammar lines are errors.
pub fn parse_output_str(text: &str) -> Result<OutputSummary, QeError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, h)) if h == OUTPUT_HEADER => {}
        _ => return Err(bad(1, format!("expected header {OUTPUT_HEADER:?}"))),
    }
    let mut series = Vec::new();
    let mut ensemble = None;
    let mut wall = 0.0;
    let mut energy = None;
    let mut converged_marker = false;
    let mut failed_marker = false;
    while let Some((n, l)) = lines.next() {
        if let Some(rest) = l.strip_prefix("iter ") {
            let f: Vec<&str> = rest.split_whitespace().collect();
            if f.len() != 3 || f[1] != "accuracy" {
                return Err(bad(n, "expected 'iter <n> accuracy <x>'"));
            }
            if f[0].parse::<usize>().ok() != Some(series.len() + 1) {
                return Err(bad(n, format!("iteration {} out of sequence", f[0])));
            }
            series.push(num(n, f[2])?);
        } else if let Some(rest) = l.strip_prefix("ENSEMBLE ") {
            let count: usize = rest.trim().parse().map_err(|_| bad(n, "expected 'ENSEMBLE <n>'"))?;
            let mut v = Vec::with_capacity(count);
            for _ in 0..count {
                let (m, e) = lines.next().ok_or_else(|| bad(n, "truncated ensemble block"))?;
                v.push(num(m, e)?);
            }
            match lines.next() {
                Some((_, "END ENSEMBLE")) => {}
                Some((m, _)) => return Err(bad(m, "expected 'END ENSEMBLE'")),
                None => return Err(bad(n, "truncated ensemble block")),
            }
            ensemble = Some(v);
        } else if let Some(rest) = l.strip_prefix("wall_seconds") {
            let v = rest.trim().strip_prefix('=').ok_or_else(|| bad(n, "expected 'wall_seconds = <s>'"))?;
            wall = num(n, v)?;
        } else if let Some(rest) = l.strip_prefix("! total energy") {
            energy = Some(energy_of(n, rest)?);
            converged_marker = true;
        } else if let Some(rest) = l.strip_prefix("total energy") {
            energy = Some(energy_of(n, rest)?);
        } else if l.starts_with(NOT_CONVERGED) {
            failed_marker = true;
        }
    }
    if converged_marker && failed_marker {
        return Err(bad(1, "output is marked both converged and not converged"));
    }
    let total_energy = energy.ok_or(QeError::MissingEnergy)?;
    Ok(OutputSummary {
        total_energy,
        converged: converged_marker && !failed_marker,
        n_scf: series.len(),
        accuracy_series: series,
        ensemble_energies: ensemble,
        wall_seconds: wall,
    })
}

pub fn parse_output(path: impl AsRef<Path>) -> Result<OutputSummary, QeError> {
    parse_output_str(&fs::read_to_string(path)?)
}
