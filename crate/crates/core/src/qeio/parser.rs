//! Input parser, the inverse of the writer on everything the writer emits.
//!
//! Keys are case-insensitive. Unknown namelist keys go to `extras` in
//! lenient mode and are rejected in strict mode. `!@ key = value` directive
//! lines carry kspacing, periodicity, layer tags and extras that have no
//! namelist home.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use crate::structlab::{StructureModel, Vec3};

use super::{kgrid_for, namelist_of_extra, parse_fortran_f64, CalcSpec, QeError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParseMode {
    #[default]
    Lenient,
    Strict,
}

const TYPED_KEYS: &[&str] = &[
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
    "mixing_beta",
    "mixing_mode",
    "diagonalization",
    "startingwfc",
    "input_dft",
];

const DIRECTIVE_KEYS: &[&str] = &["kspacing", "pbc", "tags"];

pub(super) fn is_reserved_key(k: &str) -> bool {
    TYPED_KEYS.contains(&k) || DIRECTIVE_KEYS.contains(&k)
}

fn syntax(line: usize, column: usize, message: impl Into<String>) -> QeError {
    QeError::Syntax {
        line,
        column,
        message: message.into(),
    }
}

/// Byte offset of the first `!` or `#` outside quotes.
fn comment_start(s: &str) -> Option<usize> {
    let mut quote: Option<char> = None;
    for (i, c) in s.char_indices() {
        match quote {
            Some(q) if c == q => quote = None,
            Some(_) => {}
            None if c == '\'' || c == '"' => quote = Some(c),
            None if c == '!' || c == '#' => return Some(i),
            None => {}
        }
    }
    None
}

struct Assignment {
    key: String,
    value: String,
    value_col: usize,
}

fn col_of(line: &str, byte: usize) -> usize {
    line[..byte].chars().count() + 1
}

/// Split `a = 1, b = 'x'` into assignments (columns are 1-based characters).
fn assignments(line: &str, lineno: usize) -> Result<Vec<Assignment>, QeError> {
    let end = comment_start(line).unwrap_or(line.len());
    let body = &line[..end];
    let mut segments = Vec::new();
    let mut quote: Option<char> = None;
    let mut start = 0;
    for (i, c) in body.char_indices() {
        match quote {
            Some(q) if c == q => quote = None,
            Some(_) => {}
            None if c == '\'' || c == '"' => quote = Some(c),
            None if c == ',' => {
                segments.push((start, &body[start..i]));
                start = i + 1;
            }
            None => {}
        }
    }
    if quote.is_some() {
        return Err(syntax(lineno, col_of(line, start), "unterminated string"));
    }
    segments.push((start, &body[start..]));
    let mut out = Vec::new();
    for (off, seg) in segments {
        if seg.trim().is_empty() {
            continue;
        }
        let lead = seg.len() - seg.trim_start().len();
        let Some(eq) = seg.find('=') else {
            return Err(syntax(lineno, col_of(line, off + lead), format!("expected 'key = value', found {:?}", seg.trim())));
        };
        let key = seg[..eq].trim().to_ascii_lowercase();
        if key.is_empty() {
            return Err(syntax(lineno, col_of(line, off + lead), "missing key before '='"));
        }
        let raw_val = &seg[eq + 1..];
        let vlead = raw_val.len() - raw_val.trim_start().len();
        let value = raw_val.trim().to_string();
        let value_col = col_of(line, off + eq + 1 + vlead);
        if value.is_empty() {
            return Err(syntax(lineno, value_col, format!("missing value for {key}")));
        }
        out.push(Assignment { key, value, value_col });
    }
    Ok(out)
}

/// Inner text of a quoted literal, or the token itself.
fn unquote(v: &str) -> &str {
    for q in ['\'', '"'] {
        if v.len() >= 2 && v.starts_with(q) && v.ends_with(q) {
            return &v[1..v.len() - 1];
        }
    }
    v
}

/// Normalised raw token for extras: strings single-quoted, others verbatim.
fn raw_token(v: &str) -> String {
    if v.starts_with('"') || v.starts_with('\'') {
        format!("'{}'", unquote(v))
    } else {
        v.to_string()
    }
}

#[derive(PartialEq)]
enum Card {
    Species,
    Cell,
    Positions,
    KPoints,
    Skipped,
}

fn card_option(rest: &str) -> String {
    rest.trim()
        .trim_start_matches(['{', '('])
        .trim_end_matches(['}', ')'])
        .trim()
        .to_ascii_lowercase()
}

fn is_card_header(first: &str) -> bool {
    first.len() >= 4 && first.chars().all(|c| c.is_ascii_uppercase() || c == '_')
}

pub fn parse_input_str(text: &str, mode: ParseMode) -> Result<(CalcSpec, StructureModel), QeError> {
    let mut spec = CalcSpec::default();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut pbc: Option<[bool; 3]> = None;
    let mut tags: Option<Vec<u32>> = None;
    let mut namelist: Option<String> = None;
    let mut card: Option<Card> = None;
    let mut species: Vec<(String, String)> = Vec::new();
    let mut cell: Vec<Vec3> = Vec::new();
    let mut symbols: Vec<String> = Vec::new();
    let mut positions: Vec<Vec3> = Vec::new();
    let mut fixed: BTreeSet<usize> = BTreeSet::new();
    let mut kpts: Option<(usize, [u32; 3])> = None;
    let mut cards_seen: BTreeSet<&'static str> = BTreeSet::new();

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let trimmed = raw.trim();
        if let Some(d) = trimmed.strip_prefix("!@") {
            let d = d.trim();
            let Some(eq) = d.find('=') else { continue };
            let key = d[..eq].trim().to_ascii_lowercase();
            let value = d[eq + 1..].trim();
            let vcol = col_of(raw, raw.len() - raw.trim_start().len()) + 2 + eq;
            if !seen.insert(format!("!@{key}")) {
                return Err(syntax(lineno, 1, format!("duplicate directive {key}")));
            }
            match key.as_str() {
                "kspacing" => {
                    spec.kspacing = parse_fortran_f64(value)
                        .ok_or_else(|| syntax(lineno, vcol, format!("bad number {value:?}")))?;
                    seen.insert("kspacing".into());
                }
                "pbc" => {
                    let f: Vec<&str> = value.split_whitespace().collect();
                    let flags: Option<Vec<bool>> = f
                        .iter()
                        .map(|t| match *t {
                            "T" => Some(true),
                            "F" => Some(false),
                            _ => None,
                        })
                        .collect();
                    match flags {
                        Some(v) if v.len() == 3 => pbc = Some([v[0], v[1], v[2]]),
                        _ => return Err(syntax(lineno, vcol, "pbc needs three T/F flags")),
                    }
                }
                "tags" => {
                    let t: Result<Vec<u32>, _> = value.split_whitespace().map(str::parse).collect();
                    tags = Some(t.map_err(|_| syntax(lineno, vcol, "bad layer tag"))?);
                }
                _ if TYPED_KEYS.contains(&key.as_str()) => {
                    return Err(syntax(lineno, 1, format!("{key} belongs in a namelist, not a directive")));
                }
                _ => {
                    if value.is_empty() {
                        return Err(syntax(lineno, vcol, format!("missing value for {key}")));
                    }
                    spec.extras.insert(key, raw_token(value));
                }
            }
            continue;
        }
        let body = match comment_start(raw) {
            Some(c) => &raw[..c],
            None => raw,
        };
        let line = body.trim();
        if line.is_empty() {
            continue;
        }
        let lead_col = col_of(raw, raw.len() - raw.trim_start().len());

        if let Some(name) = &namelist {
            if line == "/" {
                namelist = None;
                continue;
            }
            for a in assignments(body, lineno)? {
                if !seen.insert(a.key.clone()) {
                    return Err(syntax(lineno, a.value_col, format!("duplicate key {}", a.key)));
                }
                let bad_value = |what: &str| syntax(lineno, a.value_col, format!("{} needs {what} (got {:?})", a.key, a.value));
                let v = unquote(&a.value);
                match a.key.as_str() {
                    "calculation" => spec.calculation = v.parse().map_err(|e: String| syntax(lineno, a.value_col, e))?,
                    "restart_mode" => spec.restart_mode = v.parse().map_err(|e: String| syntax(lineno, a.value_col, e))?,
                    "mixing_mode" => spec.mixing_mode = v.parse().map_err(|e: String| syntax(lineno, a.value_col, e))?,
                    "input_dft" => spec.input_dft = v.parse().map_err(|e: String| syntax(lineno, a.value_col, e))?,
                    "prefix" => spec.prefix = v.to_string(),
                    "disk_io" => spec.disk_io = v.to_string(),
                    "occupations" => spec.occupations = v.to_string(),
                    "smearing" => spec.smearing = v.to_string(),
                    "diagonalization" => spec.diagonalization = v.to_string(),
                    "startingwfc" => spec.startingwfc = v.to_string(),
                    "ibrav" => spec.ibrav = v.parse().map_err(|_| bad_value("an integer"))?,
                    "nat" => spec.nat = v.parse().map_err(|_| bad_value("a count"))?,
                    "ntyp" => spec.ntyp = v.parse().map_err(|_| bad_value("a count"))?,
                    "electron_maxstep" => spec.electron_maxstep = v.parse().map_err(|_| bad_value("a count"))?,
                    "ecutwfc" => spec.ecutwfc = parse_fortran_f64(v).ok_or_else(|| bad_value("a number"))?,
                    "ecutrho" => spec.ecutrho = parse_fortran_f64(v).ok_or_else(|| bad_value("a number"))?,
                    "degauss" => spec.degauss = parse_fortran_f64(v).ok_or_else(|| bad_value("a number"))?,
                    "conv_thr" => spec.conv_thr = parse_fortran_f64(v).ok_or_else(|| bad_value("a number"))?,
                    "mixing_beta" => spec.mixing_beta = parse_fortran_f64(v).ok_or_else(|| bad_value("a number"))?,
                    key => {
                        let known = namelist_of_extra(key) == Some(name.as_str());
                        if !known && mode == ParseMode::Strict {
                            return Err(QeError::UnknownField {
                                line: lineno,
                                key: key.to_string(),
                            });
                        }
                        if DIRECTIVE_KEYS.contains(&key) {
                            return Err(syntax(lineno, a.value_col, format!("{key} is not a namelist keyword")));
                        }
                        spec.extras.insert(key.to_string(), raw_token(&a.value));
                    }
                }
            }
            continue;
        }

        if let Some(name) = line.strip_prefix('&') {
            let name = name.trim().to_ascii_uppercase();
            if !["CONTROL", "SYSTEM", "ELECTRONS"].contains(&name.as_str()) && mode == ParseMode::Strict {
                return Err(QeError::UnknownField { line: lineno, key: format!("&{name}") });
            }
            namelist = Some(name);
            card = None;
            continue;
        }

        let mut toks = line.split_whitespace();
        let first = toks.next().unwrap_or("");
        if is_card_header(first) {
            let opt = card_option(&line[first.len()..]);
            let (c, key, want): (Card, &'static str, Option<&str>) = match first {
                "ATOMIC_SPECIES" => (Card::Species, "ATOMIC_SPECIES", None),
                "CELL_PARAMETERS" => (Card::Cell, "CELL_PARAMETERS", Some("angstrom")),
                "ATOMIC_POSITIONS" => (Card::Positions, "ATOMIC_POSITIONS", Some("angstrom")),
                "K_POINTS" => (Card::KPoints, "K_POINTS", Some("automatic")),
                other => {
                    if mode == ParseMode::Strict {
                        return Err(QeError::UnknownField { line: lineno, key: other.to_string() });
                    }
                    log::warn!("line {lineno}: skipping unsupported card {other}");
                    card = Some(Card::Skipped);
                    continue;
                }
            };
            if let Some(w) = want {
                if opt != w {
                    return Err(syntax(lineno, lead_col + first.len(), format!("{first} must use option {w} (got {opt:?})")));
                }
            }
            if !cards_seen.insert(key) {
                return Err(syntax(lineno, lead_col, format!("duplicate card {first}")));
            }
            card = Some(c);
            continue;
        }

        let fields: Vec<&str> = line.split_whitespace().collect();
        let num = |i: usize| -> Result<f64, QeError> {
            let tok = fields[i];
            let off = body.find(tok).unwrap_or(0);
            parse_fortran_f64(tok).ok_or_else(|| syntax(lineno, col_of(body, off), format!("bad number {tok:?}")))
        };
        match card {
            None => return Err(syntax(lineno, lead_col, format!("unexpected text {line:?}"))),
            Some(Card::Skipped) => {}
            Some(Card::Species) => {
                if fields.len() != 3 {
                    return Err(syntax(lineno, lead_col, "expected '<symbol> <mass> <file>'"));
                }
                num(1)?;
                species.push((fields[0].to_string(), fields[2].to_string()));
            }
            Some(Card::Cell) => {
                if fields.len() != 3 || cell.len() == 3 {
                    return Err(syntax(lineno, lead_col, "expected three cell vectors of three numbers"));
                }
                cell.push([num(0)?, num(1)?, num(2)?]);
            }
            Some(Card::Positions) => {
                if fields.len() != 4 && fields.len() != 7 {
                    return Err(syntax(lineno, lead_col, "expected '<symbol> x y z [fx fy fz]'"));
                }
                let p = [num(1)?, num(2)?, num(3)?];
                if fields.len() == 7 {
                    match (fields[4], fields[5], fields[6]) {
                        ("0", "0", "0") => {
                            fixed.insert(positions.len());
                        }
                        ("1", "1", "1") => {}
                        _ => return Err(syntax(lineno, lead_col, "partial position constraints are not supported")),
                    }
                }
                symbols.push(fields[0].to_string());
                positions.push(p);
            }
            Some(Card::KPoints) => {
                if kpts.is_some() {
                    return Err(syntax(lineno, lead_col, "K_POINTS automatic takes one line"));
                }
                let ints: Result<Vec<u32>, _> = fields.iter().map(|t| t.parse::<u32>()).collect();
                match ints {
                    Ok(v) if v.len() == 6 && v[..3].iter().all(|&n| n >= 1) && v[3..].iter().all(|&s| s <= 1) => {
                        kpts = Some((lineno, [v[0], v[1], v[2]]));
                    }
                    _ => return Err(syntax(lineno, lead_col, "expected 'n1 n2 n3 s1 s2 s3'")),
                }
            }
        }
    }

    if namelist.is_some() {
        return Err(syntax(text.lines().count() + 1, 1, "namelist not closed with '/'"));
    }
    for key in ["nat", "ntyp", "ecutwfc", "kspacing"] {
        if !seen.contains(key) {
            return Err(QeError::MissingField(key.into()));
        }
    }
    for c in ["ATOMIC_SPECIES", "CELL_PARAMETERS", "ATOMIC_POSITIONS"] {
        if !cards_seen.contains(c) {
            return Err(QeError::MissingField(c.into()));
        }
    }
    if !seen.contains("ecutrho") {
        spec.ecutrho = 8.0 * spec.ecutwfc;
    }
    if cell.len() != 3 {
        return Err(QeError::MissingField("three CELL_PARAMETERS vectors".into()));
    }
    if species.len() != spec.ntyp {
        return Err(QeError::InvariantViolation(format!("ntyp = {} but {} species listed", spec.ntyp, species.len())));
    }
    if positions.len() != spec.nat {
        return Err(QeError::InvariantViolation(format!("nat = {} but {} positions listed", spec.nat, positions.len())));
    }
    let pp: BTreeMap<String, String> = species.into_iter().collect();
    if pp.len() != spec.ntyp {
        return Err(QeError::InvariantViolation("duplicate species in ATOMIC_SPECIES".into()));
    }
    if let Some(sym) = symbols.iter().find(|s| !pp.contains_key(*s)) {
        return Err(QeError::InvariantViolation(format!("atom {sym} has no ATOMIC_SPECIES entry")));
    }
    spec.pseudopotentials = pp;
    spec.validate()?;

    let pbc = pbc.unwrap_or(if spec.extras.contains_key("assume_isolated") { [false; 3] } else { [true; 3] });
    let mut s = StructureModel::new(symbols, positions, [cell[0], cell[1], cell[2]], pbc)?;
    s.fixed = fixed;
    s.layer_tags = tags;
    s.validate()?;

    if let Some((line, grid)) = kpts {
        let want = kgrid_for(&s, spec.kspacing)?;
        if grid != want {
            if mode == ParseMode::Strict {
                return Err(syntax(line, 1, format!("K_POINTS {grid:?} disagrees with kspacing grid {want:?}")));
            }
            log::warn!("line {line}: K_POINTS {grid:?} ignored in favour of kspacing grid {want:?}");
        }
    }
    Ok((spec, s))
}

pub fn parse_input(path: impl AsRef<Path>) -> Result<(CalcSpec, StructureModel), QeError> {
    parse_input_str(&fs::read_to_string(path)?, ParseMode::Lenient)
}
