//! Shipped reference data: the 27-solid lattice table, adsorbate geometries
//! and published adsorption-energy differences.

use serde::Deserialize;

use crate::qeio::Functional;

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct Sol27Entry {
    pub system: String,
    pub lattice: String,
    /// Experimental lattice constant (Å), used to build the initial structure.
    pub a_exp: f64,
    /// Human-expert DFT value (Å).
    pub a_expert: f64,
    /// Agent-team DFT value (Å).
    pub a_agent: f64,
    /// k-points along each axis in the reference calculation.
    pub kpoints: u32,
    /// Ry
    pub ecutwfc: f64,
}

const SOL27_CSV: &str = include_str!("../../data/sol27lc.csv");

pub fn sol27_table() -> Vec<Sol27Entry> {
    parse_sol27(SOL27_CSV).expect("shipped table parses")
}

pub fn parse_sol27(text: &str) -> Result<Vec<Sol27Entry>, csv::Error> {
    csv::Reader::from_reader(text.as_bytes()).deserialize().collect()
}

pub fn sol27_entry(system: &str) -> Option<Sol27Entry> {
    sol27_table().into_iter().find(|e| e.system == system)
}

/// Gas-phase geometry (Å) with the binding atom first.
pub fn adsorbate_geometry(formula: &str) -> Option<Vec<[f64; 3]>> {
    Some(match formula {
        "CO" => vec![[0.0, 0.0, 0.0], [0.0, 0.0, 1.143]],
        "NO" => vec![[0.0, 0.0, 0.0], [0.0, 0.0, 1.151]],
        "O" | "H" | "N" | "C" => vec![[0.0, 0.0, 0.0]],
        _ => return None,
    })
}

/// Published ΔBE for CO/Pt(111) at 1/4 ML.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaBeReference {
    pub expert: f64,
    pub literature: (f64, f64),
}

pub fn co_pt111_delta_be(functional: Functional) -> Option<DeltaBeReference> {
    match functional {
        Functional::Pbe => Some(DeltaBeReference {
            expert: 0.108,
            literature: (0.1, 0.24),
        }),
        Functional::Lda => Some(DeltaBeReference {
            expert: 0.32,
            literature: (0.32, 0.45),
        }),
        Functional::BeefVdw => None,
    }
}
