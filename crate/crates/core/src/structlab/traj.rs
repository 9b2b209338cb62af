//! Plain-text structure file (`.traj`).
//!
//! ```text
//! matscreen-traj v1
//! cell
//! 3.451 0.0 0.0
//! 0.0 3.451 0.0
//! 0.0 0.0 3.451
//! pbc T T T
//! atoms 2
//! Li 0.0 0.0 0.0
//! Li 1.7255 1.7255 1.7255
//! tags 1 1          (optional)
//! fixed             (indices follow, possibly none)
//! end
//! ```
//!
//! Floats use the shortest representation that reads back bit-exactly.

use std::collections::BTreeSet;
use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use super::{StructureError, StructureModel};

pub const TRAJ_HEADER: &str = "matscreen-traj v1";

#[derive(Debug, Error)]
pub enum TrajError {
    #[error("structure file i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("structure file line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("invalid structure: {0}")]
    Invalid(#[from] StructureError),
}

pub fn to_traj_string(s: &StructureModel) -> String {
    let mut out = format!("{TRAJ_HEADER}\ncell\n");
    for row in &s.cell {
        out.push_str(&format!("{:?} {:?} {:?}\n", row[0], row[1], row[2]));
    }
    let flag = |b: bool| if b { "T" } else { "F" };
    out.push_str(&format!("pbc {} {} {}\n", flag(s.pbc[0]), flag(s.pbc[1]), flag(s.pbc[2])));
    out.push_str(&format!("atoms {}\n", s.len()));
    for (sym, p) in s.symbols.iter().zip(&s.positions) {
        out.push_str(&format!("{sym} {:?} {:?} {:?}\n", p[0], p[1], p[2]));
    }
    if let Some(tags) = &s.layer_tags {
        out.push_str("tags");
        for t in tags {
            out.push_str(&format!(" {t}"));
        }
        out.push('\n');
    }
    out.push_str("fixed");
    for i in &s.fixed {
        out.push_str(&format!(" {i}"));
    }
    out.push_str("\nend\n");
    out
}

struct Lines<'a> {
    it: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self, what: &str) -> Result<(usize, &'a str), TrajError> {
        match self.it.next() {
            Some((i, l)) => {
                self.last = i + 1;
                Ok((i + 1, l.trim()))
            }
            None => Err(perr(self.last + 1, format!("unexpected end of file, expected {what}"))),
        }
    }
}

fn perr(line: usize, reason: impl Into<String>) -> TrajError {
    TrajError::Parse {
        line,
        reason: reason.into(),
    }
}

fn floats<const N: usize>(line: usize, fields: &[&str]) -> Result<[f64; N], TrajError> {
    if fields.len() != N {
        return Err(perr(line, format!("expected {N} numbers, found {}", fields.len())));
    }
    let mut out = [0.0f64; N];
    for (o, f) in out.iter_mut().zip(fields) {
        *o = f.parse().map_err(|_| perr(line, format!("bad number {f:?}")))?;
        if !o.is_finite() {
            return Err(perr(line, format!("non-finite number {f:?}")));
        }
    }
    Ok(out)
}

pub fn from_traj_str(text: &str) -> Result<StructureModel, TrajError> {
    let mut lines = Lines {
        it: text.lines().enumerate(),
        last: 0,
    };
    let (n, l) = lines.next("header")?;
    if l != TRAJ_HEADER {
        return Err(perr(n, format!("expected header {TRAJ_HEADER:?}")));
    }
    let (n, l) = lines.next("cell")?;
    if l != "cell" {
        return Err(perr(n, "expected 'cell'"));
    }
    let mut cell = [[0.0; 3]; 3];
    for row in cell.iter_mut() {
        let (n, l) = lines.next("cell vector")?;
        *row = floats::<3>(n, &l.split_whitespace().collect::<Vec<_>>())?;
    }
    let (n, l) = lines.next("pbc")?;
    let f: Vec<&str> = l.split_whitespace().collect();
    if f.len() != 4 || f[0] != "pbc" {
        return Err(perr(n, "expected 'pbc <T|F> <T|F> <T|F>'"));
    }
    let mut pbc = [false; 3];
    for k in 0..3 {
        pbc[k] = match f[k + 1] {
            "T" => true,
            "F" => false,
            other => return Err(perr(n, format!("bad pbc flag {other:?}"))),
        };
    }
    let (n, l) = lines.next("atoms")?;
    let count: usize = l
        .strip_prefix("atoms ")
        .and_then(|c| c.trim().parse().ok())
        .ok_or_else(|| perr(n, "expected 'atoms <count>'"))?;
    let mut symbols = Vec::with_capacity(count);
    let mut positions = Vec::with_capacity(count);
    for _ in 0..count {
        let (n, l) = lines.next("atom line")?;
        let f: Vec<&str> = l.split_whitespace().collect();
        if f.is_empty() || !f[0].chars().next().is_some_and(|c| c.is_ascii_uppercase()) {
            return Err(perr(n, "expected '<symbol> x y z'"));
        }
        positions.push(floats::<3>(n, &f[1..])?);
        symbols.push(f[0].to_string());
    }
    let (mut n, mut l) = lines.next("fixed")?;
    let mut tags = None;
    if let Some(rest) = l.strip_prefix("tags") {
        let t: Result<Vec<u32>, _> = rest.split_whitespace().map(str::parse).collect();
        tags = Some(t.map_err(|_| perr(n, "bad layer tag"))?);
        (n, l) = lines.next("fixed")?;
    }
    let rest = l.strip_prefix("fixed").ok_or_else(|| perr(n, "expected 'fixed'"))?;
    let fixed: BTreeSet<usize> = rest
        .split_whitespace()
        .map(str::parse)
        .collect::<Result<_, _>>()
        .map_err(|_| perr(n, "bad fixed index"))?;
    let (n, l) = lines.next("end")?;
    if l != "end" {
        return Err(perr(n, "expected 'end'"));
    }
    if let Some((i, extra)) = lines.it.find(|(_, l)| !l.trim().is_empty()) {
        return Err(perr(i + 1, format!("content after end: {extra:?}")));
    }
    let mut s = StructureModel::new(symbols, positions, cell, pbc)?;
    s.fixed = fixed;
    s.layer_tags = tags;
    s.validate()?;
    Ok(s)
}

pub fn write_traj(s: &StructureModel, path: impl AsRef<Path>) -> Result<(), TrajError> {
    fs::write(path, to_traj_string(s))?;
    Ok(())
}

pub fn read_traj(path: impl AsRef<Path>) -> Result<StructureModel, TrajError> {
    from_traj_str(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::super::*;
    use super::*;

    #[test]
    fn round_trip_bit_exact() {
        let (slab, sites) = build_surface("Pt", "fcc", 3.9561, "111", [2, 2, 6], 3, 10.0).unwrap();
        let co = build_molecule("CO", &[[0.0; 3], [0.0, 0.0, 1.14]]).unwrap();
        let s = place_adsorbate(&slab, &co, sites["hcp"], &[(37.3, Axis::Y)], 2.0).unwrap();
        let back = from_traj_str(&to_traj_string(&s)).unwrap();
        assert_eq!(back, s);
        let bulk = build_bulk("Li", "bcc", 3.451, None, None).unwrap();
        assert_eq!(from_traj_str(&to_traj_string(&bulk)).unwrap(), bulk);
    }

    #[test]
    fn file_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("co.traj");
        let co = build_molecule("CO", &[[0.0; 3], [0.0, 0.0, 1.14]]).unwrap();
        write_traj(&co, &p).unwrap();
        assert_eq!(read_traj(&p).unwrap(), co);

        let text = to_traj_string(&co);
        let truncated: String = text.lines().take(8).map(|l| format!("{l}\n")).collect();
        assert!(matches!(from_traj_str(&truncated), Err(TrajError::Parse { .. })));
        let bad = text.replace("1.14", "abc");
        match from_traj_str(&bad) {
            Err(TrajError::Parse { line, .. }) => assert_eq!(line, 9),
            other => panic!("{other:?}"),
        }
        let oob = text.replace("fixed", "fixed 7");
        assert!(matches!(from_traj_str(&oob), Err(TrajError::Invalid(_))));
    }
}
