//! Atomistic structure construction: bulk cells, fcc(111) slabs with their
//! adsorption sites, gas-phase molecules, adsorbate placement and scaling.

pub mod geom;
mod traj;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub use geom::{Axis, Mat3, Vec3};
pub use traj::{read_traj, write_traj, TrajError};

pub const MOLECULE_BOX: f64 = 15.0;
pub const DEFAULT_VACUUM: f64 = 10.0;
pub const DEFAULT_HEIGHT: f64 = 2.0;
/// Tag given to adsorbate atoms; slab layers are tagged 1 (top) and downward.
pub const ADSORBATE_TAG: u32 = 0;

#[derive(Debug, Error, PartialEq)]
pub enum StructureError {
    #[error("unknown lattice {0:?}")]
    UnknownLattice(String),
    #[error("lattice {0:?} needs more than one species or cell angles and is not supported")]
    UnsupportedLattice(String),
    #[error("lattice {lattice} requires parameter {param}")]
    MissingParameter { lattice: String, param: &'static str },
    #[error("lattice parameter {param} must be positive and finite (got {value})")]
    NonPositiveParameter { param: &'static str, value: f64 },
    #[error("surface {crystal}({facet}) is not supported; only fcc(111)")]
    UnsupportedFacet { crystal: String, facet: String },
    #[error("invalid supercell: {0}")]
    InvalidSupercell(String),
    #[error("symbol count {symbols} does not match position count {positions}")]
    CountMismatch { symbols: usize, positions: usize },
    #[error("cannot parse element symbols from {0:?}")]
    BadSymbols(String),
    #[error("cell determinant must be positive (got {0})")]
    DegenerateCell(f64),
    #[error("fixed index {index} out of range for {n} atoms")]
    FixedOutOfRange { index: usize, n: usize },
    #[error("layer tags count {tags} does not match atom count {n}")]
    TagCountMismatch { tags: usize, n: usize },
    #[error("site ({x}, {y}) lies outside the in-plane cell footprint")]
    SiteOutOfCell { x: f64, y: f64 },
    #[error("scale factor must be positive and finite (got {0})")]
    NonPositiveScale(f64),
    #[error("structure is not a slab: {0}")]
    NotASlab(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructureModel {
    pub symbols: Vec<String>,
    pub positions: Vec<Vec3>,
    pub cell: Mat3,
    pub pbc: [bool; 3],
    pub fixed: BTreeSet<usize>,
    pub layer_tags: Option<Vec<u32>>,
}

impl StructureModel {
    pub fn new(
        symbols: Vec<String>,
        positions: Vec<Vec3>,
        cell: Mat3,
        pbc: [bool; 3],
    ) -> Result<Self, StructureError> {
        let s = StructureModel {
            symbols,
            positions,
            cell,
            pbc,
            fixed: BTreeSet::new(),
            layer_tags: None,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), StructureError> {
        if self.symbols.len() != self.positions.len() {
            return Err(StructureError::CountMismatch {
                symbols: self.symbols.len(),
                positions: self.positions.len(),
            });
        }
        let d = geom::det(&self.cell);
        if !(d > 0.0) || !d.is_finite() {
            return Err(StructureError::DegenerateCell(d));
        }
        let n = self.len();
        if let Some(&index) = self.fixed.iter().find(|&&i| i >= n) {
            return Err(StructureError::FixedOutOfRange { index, n });
        }
        if let Some(tags) = &self.layer_tags {
            if tags.len() != n {
                return Err(StructureError::TagCountMismatch { tags: tags.len(), n });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn volume(&self) -> f64 {
        geom::det(&self.cell)
    }

    /// Distinct element symbols in order of first appearance.
    pub fn species(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for s in &self.symbols {
            if !out.contains(s) {
                out.push(s.clone());
            }
        }
        out
    }

    /// Chemical formula with counts in order of first appearance, e.g. `Pt24CO`.
    pub fn formula(&self) -> String {
        self.species()
            .iter()
            .map(|sp| {
                let n = self.symbols.iter().filter(|s| *s == sp).count();
                if n == 1 {
                    sp.clone()
                } else {
                    format!("{sp}{n}")
                }
            })
            .collect()
    }

    pub fn is_periodic(&self) -> bool {
        self.pbc.iter().any(|&p| p)
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        geom::norm(geom::sub(self.positions[i], self.positions[j]))
    }

    /// Smallest interatomic distance including periodic images along periodic axes.
    pub fn min_distance(&self) -> Option<f64> {
        let n = self.len();
        let shifts: Vec<i32> = vec![-1, 0, 1];
        let mut best: Option<f64> = None;
        for i in 0..n {
            for j in 0..n {
                for &sa in &shifts {
                    for &sb in &shifts {
                        for &sc in &shifts {
                            let s = [sa, sb, sc];
                            if (0..3).any(|k| !self.pbc[k] && s[k] != 0) {
                                continue;
                            }
                            if i == j && s == [0, 0, 0] {
                                continue;
                            }
                            let mut t = self.positions[j];
                            for k in 0..3 {
                                t = geom::add(t, geom::scale(self.cell[k], s[k] as f64));
                            }
                            let d = geom::norm(geom::sub(t, self.positions[i]));
                            best = Some(best.map_or(d, |b: f64| b.min(d)));
                        }
                    }
                }
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Lattice {
    Sc,
    Fcc,
    Bcc,
    Tetragonal,
    Bct,
    Hcp,
    Rhombohedral,
    Orthorhombic,
    Mcl,
    Diamond,
    Zincblende,
    Rocksalt,
    CesiumChloride,
    Fluorite,
    Wurtzite,
}

impl Lattice {
    pub const ALL: [Lattice; 15] = [
        Lattice::Sc,
        Lattice::Fcc,
        Lattice::Bcc,
        Lattice::Tetragonal,
        Lattice::Bct,
        Lattice::Hcp,
        Lattice::Rhombohedral,
        Lattice::Orthorhombic,
        Lattice::Mcl,
        Lattice::Diamond,
        Lattice::Zincblende,
        Lattice::Rocksalt,
        Lattice::CesiumChloride,
        Lattice::Fluorite,
        Lattice::Wurtzite,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Lattice::Sc => "sc",
            Lattice::Fcc => "fcc",
            Lattice::Bcc => "bcc",
            Lattice::Tetragonal => "tetragonal",
            Lattice::Bct => "bct",
            Lattice::Hcp => "hcp",
            Lattice::Rhombohedral => "rhombohedral",
            Lattice::Orthorhombic => "orthorhombic",
            Lattice::Mcl => "mcl",
            Lattice::Diamond => "diamond",
            Lattice::Zincblende => "zincblende",
            Lattice::Rocksalt => "rocksalt",
            Lattice::CesiumChloride => "cesiumchloride",
            Lattice::Fluorite => "fluorite",
            Lattice::Wurtzite => "wurtzite",
        }
    }

    pub fn is_cubic(self) -> bool {
        matches!(self, Lattice::Sc | Lattice::Fcc | Lattice::Bcc | Lattice::Diamond)
    }
}

impl fmt::Display for Lattice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Lattice {
    type Err = StructureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        let key = match lower.as_str() {
            "dia" => "diamond",
            "monoclinic" => "mcl",
            other => other,
        };
        Lattice::ALL
            .iter()
            .copied()
            .find(|l| l.name() == key)
            .ok_or_else(|| StructureError::UnknownLattice(s.to_string()))
    }
}

fn positive(param: &'static str, value: f64) -> Result<f64, StructureError> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(StructureError::NonPositiveParameter { param, value })
    }
}

fn diag(a: f64, b: f64, c: f64) -> Mat3 {
    [[a, 0.0, 0.0], [0.0, b, 0.0], [0.0, 0.0, c]]
}

fn cartesian(cell: &Mat3, frac: Vec3) -> Vec3 {
    let mut p = [0.0; 3];
    for k in 0..3 {
        p = geom::add(p, geom::scale(cell[k], frac[k]));
    }
    p
}

/// Single-element bulk crystal. Cubic lattices use the conventional cell.
pub fn build_bulk(
    element: &str,
    lattice: &str,
    a: f64,
    b: Option<f64>,
    c: Option<f64>,
) -> Result<StructureModel, StructureError> {
    let lat: Lattice = lattice.parse()?;
    let a = positive("a", a)?;
    let b = b.map(|v| positive("b", v)).transpose()?;
    let c = c.map(|v| positive("c", v)).transpose()?;
    // a and b alone: b is read as c
    let c_axis = c.or(b);
    let need_c = |lat: Lattice| {
        c_axis.ok_or(StructureError::MissingParameter {
            lattice: lat.name().to_string(),
            param: "c",
        })
    };
    let (cell, frac): (Mat3, Vec<Vec3>) = match lat {
        Lattice::Sc => (diag(a, a, a), vec![[0.0; 3]]),
        Lattice::Bcc => (diag(a, a, a), vec![[0.0; 3], [0.5, 0.5, 0.5]]),
        Lattice::Fcc => (diag(a, a, a), fcc_basis()),
        Lattice::Diamond => {
            let mut f = fcc_basis();
            let shifted: Vec<Vec3> = f.iter().map(|p| [p[0] + 0.25, p[1] + 0.25, p[2] + 0.25]).collect();
            f.extend(shifted);
            (diag(a, a, a), f)
        }
        Lattice::Tetragonal => (diag(a, a, need_c(lat)?), vec![[0.0; 3]]),
        Lattice::Bct => (diag(a, a, need_c(lat)?), vec![[0.0; 3], [0.5, 0.5, 0.5]]),
        Lattice::Hcp => {
            let c = need_c(lat)?;
            let cell = [
                [a, 0.0, 0.0],
                [-a / 2.0, a * 3f64.sqrt() / 2.0, 0.0],
                [0.0, 0.0, c],
            ];
            (cell, vec![[1.0 / 3.0, 2.0 / 3.0, 0.25], [2.0 / 3.0, 1.0 / 3.0, 0.75]])
        }
        Lattice::Orthorhombic => {
            let (Some(b), Some(c)) = (b, c) else {
                return Err(StructureError::MissingParameter {
                    lattice: lat.name().to_string(),
                    param: if b.is_none() { "b" } else { "c" },
                });
            };
            (diag(a, b, c), vec![[0.0; 3]])
        }
        other => return Err(StructureError::UnsupportedLattice(other.name().to_string())),
    };
    let positions = frac.iter().map(|&f| cartesian(&cell, f)).collect::<Vec<_>>();
    let symbols = vec![element.to_string(); positions.len()];
    StructureModel::new(symbols, positions, cell, [true; 3])
}

fn fcc_basis() -> Vec<Vec3> {
    vec![[0.0, 0.0, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5], [0.5, 0.5, 0.0]]
}

/// Site name to in-plane Cartesian coordinate (Å) on the top surface.
pub type SiteMap = BTreeMap<String, [f64; 2]>;

/// fcc(111) slab. Layers stack ABC upward from the bottom; atom order is
/// bottom layer first. Layer tags count from 1 at the top surface.
pub fn build_surface(
    element: &str,
    crystal: &str,
    a: f64,
    facet: &str,
    supercell: [usize; 3],
    n_fixed: usize,
    vacuum: f64,
) -> Result<(StructureModel, SiteMap), StructureError> {
    let lat: Lattice = crystal.parse()?;
    let facet_norm = facet.trim().trim_start_matches('(').trim_end_matches(')').replace(',', "");
    if lat != Lattice::Fcc || facet_norm != "111" {
        return Err(StructureError::UnsupportedFacet {
            crystal: crystal.to_string(),
            facet: facet.to_string(),
        });
    }
    let a = positive("a", a)?;
    let vacuum = positive("vacuum", vacuum)?;
    let [p, q, layers] = supercell;
    if p == 0 || q == 0 || layers == 0 {
        return Err(StructureError::InvalidSupercell(format!("{supercell:?} has a zero repetition")));
    }
    if n_fixed > layers {
        return Err(StructureError::InvalidSupercell(format!(
            "{n_fixed} fixed layers exceed {layers} layers"
        )));
    }
    let d_nn = a / 2f64.sqrt();
    let spacing = a / 3f64.sqrt();
    let u1 = [d_nn, 0.0, 0.0];
    let u2 = [d_nn / 2.0, d_nn * 3f64.sqrt() / 2.0, 0.0];
    let height = (layers - 1) as f64 * spacing + vacuum;
    let cell = [geom::scale(u1, p as f64), geom::scale(u2, q as f64), [0.0, 0.0, height]];

    let mut symbols = Vec::new();
    let mut positions = Vec::new();
    let mut tags = Vec::new();
    let mut fixed = BTreeSet::new();
    for l in 0..layers {
        let from_top = layers - 1 - l;
        let off = match from_top % 3 {
            0 => 0.0,
            1 => 2.0 / 3.0,
            _ => 1.0 / 3.0,
        };
        let z = vacuum / 2.0 + l as f64 * spacing;
        for j in 0..q {
            for i in 0..p {
                let xy = geom::add(
                    geom::scale(u1, i as f64 + off),
                    geom::scale(u2, j as f64 + off),
                );
                if l < n_fixed {
                    fixed.insert(positions.len());
                }
                symbols.push(element.to_string());
                positions.push([xy[0], xy[1], z]);
                tags.push((from_top + 1) as u32);
            }
        }
    }
    let mut slab = StructureModel::new(symbols, positions, cell, [true, true, false])?;
    slab.fixed = fixed;
    slab.layer_tags = Some(tags);

    let frac_site = |f1: f64, f2: f64| {
        let v = geom::add(geom::scale(u1, f1), geom::scale(u2, f2));
        [v[0], v[1]]
    };
    let mut sites = SiteMap::new();
    sites.insert("ontop".into(), frac_site(0.0, 0.0));
    sites.insert("bridge".into(), frac_site(0.5, 0.0));
    sites.insert("fcc".into(), frac_site(1.0 / 3.0, 1.0 / 3.0));
    sites.insert("hcp".into(), frac_site(2.0 / 3.0, 2.0 / 3.0));
    Ok((slab, sites))
}

/// Split a delimiter-free formula such as `CO` or `NaCl` into element symbols.
pub fn parse_symbols(symbols: &str) -> Result<Vec<String>, StructureError> {
    let mut out: Vec<String> = Vec::new();
    for ch in symbols.chars() {
        if ch.is_ascii_uppercase() {
            out.push(ch.to_string());
        } else if ch.is_ascii_lowercase() {
            match out.last_mut() {
                Some(last) if last.len() < 3 => last.push(ch),
                _ => return Err(StructureError::BadSymbols(symbols.to_string())),
            }
        } else {
            return Err(StructureError::BadSymbols(symbols.to_string()));
        }
    }
    if out.is_empty() {
        return Err(StructureError::BadSymbols(symbols.to_string()));
    }
    Ok(out)
}

/// Isolated molecule: positions as given, non-periodic, inside a recorded cubic box.
pub fn build_molecule(symbols: &str, positions: &[Vec3]) -> Result<StructureModel, StructureError> {
    let syms = parse_symbols(symbols)?;
    if syms.len() != positions.len() {
        return Err(StructureError::CountMismatch {
            symbols: syms.len(),
            positions: positions.len(),
        });
    }
    StructureModel::new(
        syms,
        positions.to_vec(),
        diag(MOLECULE_BOX, MOLECULE_BOX, MOLECULE_BOX),
        [false; 3],
    )
}

/// Put `molecule` above `slab` with its first atom at `site` and `height` Å
/// above the highest slab atom. Rotations apply in order about that anchor.
pub fn place_adsorbate(
    slab: &StructureModel,
    molecule: &StructureModel,
    site: [f64; 2],
    rotations: &[(f64, Axis)],
    height: f64,
) -> Result<StructureModel, StructureError> {
    if slab.is_empty() {
        return Err(StructureError::NotASlab("no atoms".into()));
    }
    if molecule.is_empty() {
        return Err(StructureError::BadSymbols(String::new()));
    }
    let height = positive("height", height)?;
    let frac = geom::in_plane_fractional(&slab.cell, site)
        .ok_or_else(|| StructureError::NotASlab("in-plane cell vectors are collinear".into()))?;
    const EPS: f64 = 1e-9;
    if !site.iter().all(|v| v.is_finite()) || frac.iter().any(|&f| !(-EPS..1.0 - EPS).contains(&f)) {
        return Err(StructureError::SiteOutOfCell { x: site[0], y: site[1] });
    }
    let top = slab
        .positions
        .iter()
        .map(|p| p[2])
        .fold(f64::NEG_INFINITY, f64::max);
    let anchor = molecule.positions[0];
    let target = [site[0], site[1], top + height];

    let mut out = slab.clone();
    let base_tags = slab.layer_tags.clone();
    for (sym, pos) in molecule.symbols.iter().zip(&molecule.positions) {
        let mut rel = geom::sub(*pos, anchor);
        for &(deg, axis) in rotations {
            rel = geom::rotate(rel, deg, axis);
        }
        out.symbols.push(sym.clone());
        out.positions.push(geom::add(target, rel));
    }
    out.layer_tags = base_tags.map(|mut t| {
        t.extend(std::iter::repeat_n(ADSORBATE_TAG, molecule.len()));
        t
    });
    out.validate()?;
    Ok(out)
}

/// Uniform linear scaling of cell and positions.
pub fn scale(structure: &StructureModel, alpha: f64) -> Result<StructureModel, StructureError> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(StructureError::NonPositiveScale(alpha));
    }
    let mut out = structure.clone();
    for row in out.cell.iter_mut() {
        *row = geom::scale(*row, alpha);
    }
    for p in out.positions.iter_mut() {
        *p = geom::scale(*p, alpha);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SiteKind {
    Ontop,
    Bridge,
    Fcc,
    Hcp,
}

impl SiteKind {
    pub const ALL: [SiteKind; 4] = [SiteKind::Ontop, SiteKind::Bridge, SiteKind::Fcc, SiteKind::Hcp];

    pub fn name(self) -> &'static str {
        match self {
            SiteKind::Ontop => "ontop",
            SiteKind::Bridge => "bridge",
            SiteKind::Fcc => "fcc",
            SiteKind::Hcp => "hcp",
        }
    }

    pub fn parse(s: &str) -> Option<SiteKind> {
        SiteKind::ALL.iter().copied().find(|k| k.name() == s)
    }
}

impl fmt::Display for SiteKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Orientation {
    Upright,
    Tilted,
    Flipped,
}

impl Orientation {
    pub const ALL: [Orientation; 3] = [Orientation::Upright, Orientation::Tilted, Orientation::Flipped];

    pub fn name(self) -> &'static str {
        match self {
            Orientation::Upright => "upright",
            Orientation::Tilted => "tilted",
            Orientation::Flipped => "flipped",
        }
    }

    pub fn parse(s: &str) -> Option<Orientation> {
        Orientation::ALL.iter().copied().find(|k| k.name() == s)
    }

    /// Rotation list producing this orientation from an upright molecule.
    pub fn rotations(self) -> Vec<(f64, Axis)> {
        match self {
            Orientation::Upright => vec![],
            Orientation::Tilted => vec![(90.0, Axis::X)],
            Orientation::Flipped => vec![(180.0, Axis::X)],
        }
    }
}

impl fmt::Display for Orientation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Adsorption geometry recognised from coordinates alone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdsorptionGeometry {
    pub site: SiteKind,
    pub orientation: Orientation,
    /// Anchor to nearest candidate site, in plane (Å).
    pub offset: f64,
}

/// Identify site and orientation of the adsorbate (atoms not of `metal`) on an
/// fcc(111) slab. Returns `None` when the geometry matches no known site.
pub fn classify_adsorption(s: &StructureModel, metal: &str) -> Option<AdsorptionGeometry> {
    let ads: Vec<usize> = (0..s.len()).filter(|&i| s.symbols[i] != metal).collect();
    let metal_idx: Vec<usize> = (0..s.len()).filter(|&i| s.symbols[i] == metal).collect();
    if ads.is_empty() || metal_idx.len() < 3 {
        return None;
    }
    let mut zs: Vec<f64> = metal_idx.iter().map(|&i| s.positions[i][2]).collect();
    zs.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut layer_z: Vec<f64> = Vec::new();
    for z in zs {
        if layer_z.last().is_none_or(|&l| l - z > 0.3) {
            layer_z.push(z);
        }
    }
    let layer = |k: usize| -> Vec<[f64; 2]> {
        let Some(&lz) = layer_z.get(k) else { return vec![] };
        metal_idx
            .iter()
            .map(|&i| s.positions[i])
            .filter(|p| (p[2] - lz).abs() <= 0.3)
            .map(|p| [p[0], p[1]])
            .collect()
    };
    let top = layer(0);
    let mut bridges = Vec::new();
    let nn = top
        .iter()
        .enumerate()
        .flat_map(|(i, p)| top.iter().skip(i + 1).map(move |q| (*p, *q)))
        .map(|(p, q)| geom::min_image_distance_2d(&s.cell, p, q))
        .fold(f64::INFINITY, f64::min);
    for (i, p) in top.iter().enumerate() {
        for q in top.iter().skip(i) {
            for di in -1..=1 {
                for dj in -1..=1 {
                    let qx = q[0] + di as f64 * s.cell[0][0] + dj as f64 * s.cell[1][0];
                    let qy = q[1] + di as f64 * s.cell[0][1] + dj as f64 * s.cell[1][1];
                    let d = ((qx - p[0]).powi(2) + (qy - p[1]).powi(2)).sqrt();
                    if d > 1e-6 && (d - nn).abs() < 0.05 {
                        bridges.push([(p[0] + qx) / 2.0, (p[1] + qy) / 2.0]);
                    }
                }
            }
        }
    }
    let candidates = [
        (SiteKind::Ontop, top),
        (SiteKind::Bridge, bridges),
        (SiteKind::Hcp, layer(1)),
        (SiteKind::Fcc, layer(2)),
    ];
    let anchor = s.positions[ads[0]];
    let mut best: Option<(SiteKind, f64)> = None;
    for (kind, pts) in &candidates {
        for p in pts {
            let d = geom::min_image_distance_2d(&s.cell, [anchor[0], anchor[1]], *p);
            if best.is_none_or(|(_, b)| d < b) {
                best = Some((*kind, d));
            }
        }
    }
    let (site, offset) = best?;
    if offset > 0.5 {
        return None;
    }
    let orientation = if ads.len() < 2 {
        Orientation::Upright
    } else {
        let v = geom::sub(s.positions[ads[1]], anchor);
        let cos = v[2] / geom::norm(v);
        if cos > 0.7 {
            Orientation::Upright
        } else if cos < -0.7 {
            Orientation::Flipped
        } else {
            Orientation::Tilted
        }
    };
    Some(AdsorptionGeometry { site, orientation, offset })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pt_slab() -> (StructureModel, SiteMap) {
        build_surface("Pt", "fcc", 3.92, "111", [2, 2, 6], 3, DEFAULT_VACUUM).unwrap()
    }

    fn co() -> StructureModel {
        build_molecule("CO", &[[0.0, 0.0, 0.0], [0.0, 0.0, 1.14]]).unwrap()
    }

    // Independent oracle: all pairwise distances under periodic images, sorted.
    fn nn_oracle(s: &StructureModel) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..s.len() {
            for j in 0..s.len() {
                for a in -2i32..=2 {
                    for b in -2i32..=2 {
                        for c in -2i32..=2 {
                            if i == j && (a, b, c) == (0, 0, 0) {
                                continue;
                            }
                            let mut d2 = 0.0;
                            for k in 0..3 {
                                let x = s.positions[j][k]
                                    + a as f64 * s.cell[0][k]
                                    + b as f64 * s.cell[1][k]
                                    + c as f64 * s.cell[2][k]
                                    - s.positions[i][k];
                                d2 += x * x;
                            }
                            best = best.min(d2.sqrt());
                        }
                    }
                }
            }
        }
        best
    }

    #[test]
    fn bulk_cubic_counts_and_volume() {
        let li = build_bulk("Li", "bcc", 3.451, None, None).unwrap();
        assert_eq!(li.len(), 2);
        assert_eq!(li.volume(), 3.451f64 * 3.451 * 3.451);
        assert!((li.volume() - 41.099).abs() < 1e-3);
        let pt = build_bulk("Pt", "fcc", 3.92, None, None).unwrap();
        assert_eq!(pt.len(), 4);
        assert_eq!(pt.positions[0], [0.0, 0.0, 0.0]);
        for p in &pt.positions[1..] {
            let halves = p.iter().filter(|&&v| v == 1.96).count();
            assert_eq!(halves, 2, "{p:?} is not a face centre");
        }
        assert_eq!(build_bulk("Po", "sc", 3.35, None, None).unwrap().len(), 1);
    }

    #[test]
    fn diamond_nearest_neighbour() {
        let c = build_bulk("C", "diamond", 3.544, None, None).unwrap();
        assert_eq!(c.len(), 8);
        let d = nn_oracle(&c);
        assert!((d - 3.544 * 3f64.sqrt() / 4.0).abs() < 1e-12);
        assert!((d - 1.5346).abs() < 1e-4);
        assert!((c.min_distance().unwrap() - d).abs() < 1e-12);
    }

    #[test]
    fn bulk_errors_and_bc_rules() {
        assert!(matches!(build_bulk("X", "zigzag", 3.0, None, None), Err(StructureError::UnknownLattice(_))));
        assert!(matches!(
            build_bulk("Mg", "hcp", 3.2, None, None),
            Err(StructureError::MissingParameter { param: "c", .. })
        ));
        assert!(matches!(build_bulk("Na", "rocksalt", 5.6, None, None), Err(StructureError::UnsupportedLattice(_))));
        assert!(matches!(build_bulk("Li", "bcc", -1.0, None, None), Err(StructureError::NonPositiveParameter { .. })));
        let mg = build_bulk("Mg", "hcp", 3.21, Some(5.21), None).unwrap();
        assert_eq!(mg.cell[2][2], 5.21);
        assert!((mg.min_distance().unwrap() - 3.21f64.min(((3.21f64.powi(2)) / 3.0 + 5.21f64.powi(2) / 4.0).sqrt())).abs() < 1e-9);
        let t = build_bulk("In", "tetragonal", 3.25, Some(9.0), Some(4.95)).unwrap();
        assert_eq!(t.cell[2][2], 4.95);
        assert!(build_bulk("X", "orthorhombic", 3.0, Some(4.0), None).is_err());
        assert_eq!(build_bulk("X", "orthorhombic", 3.0, Some(4.0), Some(5.0)).unwrap().volume(), 60.0);
        assert_eq!("DIA".parse::<Lattice>().unwrap(), Lattice::Diamond);
    }

    #[test]
    fn pt111_slab() {
        let (slab, sites) = pt_slab();
        assert_eq!(slab.len(), 24);
        assert_eq!(slab.fixed.len(), 12);
        assert_eq!(sites.len(), 4);
        assert_eq!(
            sites.keys().cloned().collect::<Vec<_>>(),
            vec!["bridge", "fcc", "hcp", "ontop"]
        );
        assert_eq!(slab.pbc, [true, true, false]);
        let fixed_max_z = slab.fixed.iter().map(|&i| slab.positions[i][2]).fold(f64::MIN, f64::max);
        let free_min_z = (0..24)
            .filter(|i| !slab.fixed.contains(i))
            .map(|i| slab.positions[i][2])
            .fold(f64::MAX, f64::min);
        assert!(fixed_max_z < free_min_z);
        let (none, _) = build_surface("Pt", "fcc", 3.92, "111", [2, 2, 6], 0, DEFAULT_VACUUM).unwrap();
        assert!(none.fixed.is_empty());
    }

    #[test]
    fn interlayer_spacing() {
        let (slab, _) = pt_slab();
        let mut zs: Vec<f64> = slab.positions.iter().map(|p| p[2]).collect();
        zs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        zs.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
        assert_eq!(zs.len(), 6);
        for w in zs.windows(2) {
            assert!((w[1] - w[0] - 3.92 / 3f64.sqrt()).abs() < 1e-12);
        }
        // Bulk nearest-neighbour distance survives slab construction.
        assert!((nn_oracle(&slab) - 3.92 / 2f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn unsupported_facet() {
        assert!(matches!(
            build_surface("Pt", "fcc", 3.92, "100", [2, 2, 4], 2, 10.0),
            Err(StructureError::UnsupportedFacet { .. })
        ));
        assert!(matches!(
            build_surface("Fe", "bcc", 2.85, "111", [2, 2, 4], 2, 10.0),
            Err(StructureError::UnsupportedFacet { .. })
        ));
    }

    #[test]
    fn molecule() {
        let m = co();
        assert!((m.distance(0, 1) - 1.14).abs() < 1e-15);
        assert!(!m.is_periodic());
        assert_eq!(m.volume(), MOLECULE_BOX.powi(3));
        assert_eq!(build_molecule("O", &[[0.0; 3]]).unwrap().len(), 1);
        assert!(matches!(build_molecule("CO", &[[0.0; 3]]), Err(StructureError::CountMismatch { .. })));
        assert_eq!(parse_symbols("NaCl").unwrap(), vec!["Na", "Cl"]);
        assert!(parse_symbols("co").is_err());
    }

    #[test]
    fn placement_upright_and_flipped() {
        let (slab, sites) = pt_slab();
        let top_z = slab.positions.iter().map(|p| p[2]).fold(f64::MIN, f64::max);
        let up = place_adsorbate(&slab, &co(), sites["ontop"], &[], DEFAULT_HEIGHT).unwrap();
        assert_eq!(up.len(), 26);
        let c = up.positions[24];
        assert!((c[2] - top_z - 2.0).abs() < 1e-12);
        // a top-layer Pt sits directly under C
        assert!(slab.positions.iter().any(|p| (p[0] - c[0]).abs() < 1e-12 && (p[1] - c[1]).abs() < 1e-12 && p[2] == top_z));
        let flip = place_adsorbate(&slab, &co(), sites["fcc"], &[(180.0, Axis::X)], DEFAULT_HEIGHT).unwrap();
        assert!(flip.positions[25][2] < flip.positions[24][2]);
        assert_eq!(flip.formula(), "Pt24CO");
        assert_eq!(up.layer_tags.as_ref().unwrap()[25], ADSORBATE_TAG);
        assert!(matches!(
            place_adsorbate(&slab, &co(), [-1.0, 0.0], &[], 2.0),
            Err(StructureError::SiteOutOfCell { .. })
        ));
        assert!(matches!(
            place_adsorbate(&slab, &co(), [100.0, 0.5], &[], 2.0),
            Err(StructureError::SiteOutOfCell { .. })
        ));
    }

    #[test]
    fn classification_recovers_construction() {
        let (slab, sites) = pt_slab();
        for kind in SiteKind::ALL {
            for o in Orientation::ALL {
                let s = place_adsorbate(&slab, &co(), sites[kind.name()], &o.rotations(), 2.0).unwrap();
                let g = classify_adsorption(&s, "Pt").unwrap();
                assert_eq!((g.site, g.orientation), (kind, o));
                assert!(g.offset < 1e-9);
            }
        }
        assert!(classify_adsorption(&slab, "Pt").is_none());
    }

    #[test]
    fn scale_examples() {
        let li = build_bulk("Li", "bcc", 3.451, None, None).unwrap();
        assert_eq!(scale(&li, 1.0).unwrap(), li);
        let s = scale(&li, 1.025).unwrap();
        assert!((s.volume() - (1.025f64 * 3.451).powi(3)).abs() < 1e-10);
        assert!(matches!(scale(&li, 0.0), Err(StructureError::NonPositiveScale(_))));
        assert!(scale(&li, f64::NAN).is_err());
    }

    proptest! {
        #[test]
        fn volume_scales_cubically(alpha in 0.5f64..2.0, a in 2.0f64..7.0) {
            let s = build_bulk("Fe", "bcc", a, None, None).unwrap();
            let v = scale(&s, alpha).unwrap().volume();
            prop_assert!((v - alpha.powi(3) * s.volume()).abs() <= 1e-12 * v.abs());
        }

        #[test]
        fn geometry_independent_of_element(a in 2.0f64..7.0, lat in prop::sample::select(vec!["sc", "bcc", "fcc", "diamond"])) {
            let x = build_bulk("Cu", lat, a, None, None).unwrap();
            let y = build_bulk("Si", lat, a, None, None).unwrap();
            prop_assert_eq!(&x.positions, &y.positions);
            prop_assert_eq!(x.cell, y.cell);
        }

        #[test]
        fn sites_inside_footprint(a in 2.5f64..5.0, p in 1usize..4, q in 1usize..4, layers in 3usize..7) {
            let (slab, sites) = build_surface("Pt", "fcc", a, "111", [p, q, layers], 3, 10.0).unwrap();
            for xy in sites.values() {
                let f = geom::in_plane_fractional(&slab.cell, *xy).unwrap();
                prop_assert!(f.iter().all(|&v| (-1e-12..1.0).contains(&v)));
            }
        }

        #[test]
        fn placement_keeps_slab_bits(
            site_f in (0.0f64..0.99, 0.0f64..0.99),
            deg in -360.0f64..360.0,
            h in 1.0f64..3.0,
        ) {
            let (slab, _) = pt_slab();
            let xy = [
                site_f.0 * slab.cell[0][0] + site_f.1 * slab.cell[1][0],
                site_f.0 * slab.cell[0][1] + site_f.1 * slab.cell[1][1],
            ];
            let out = place_adsorbate(&slab, &co(), xy, &[(deg, Axis::Y)], h).unwrap();
            for i in 0..slab.len() {
                prop_assert_eq!(out.positions[i].map(f64::to_bits), slab.positions[i].map(f64::to_bits));
            }
            prop_assert!((out.distance(24, 25) - 1.14).abs() < 1e-12);
        }
    }
}
