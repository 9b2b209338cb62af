//! Objective families and their canonical sentences.

use std::fmt;
use std::sync::LazyLock;

use regex::Regex;

use crate::qeio::Functional;

#[derive(Debug, Clone, PartialEq)]
pub enum Objective {
    LatticeConstant {
        element: String,
        /// Lower-case lattice name as the structure builder takes it.
        lattice: String,
        a_exp: f64,
    },
    Adsorption {
        metal: String,
        facet: String,
        adsorbate: String,
        functional: Functional,
        supercell: [usize; 2],
    },
    Ensemble {
        metal: String,
        facet: String,
        adsorbate: String,
        supercell: [usize; 2],
    },
}

static LATTICE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)lattice constant for (\w+) ([A-Z][a-z]?)\b.*?experimental value is ([0-9]+(?:\.[0-9]+)?)")
        .expect("valid regex")
});

static SURFACE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"for ([A-Z][A-Za-z0-9]*) (?:at FCC and ontop sites )?on ([A-Z][a-z]?)\((\d+)\) surface with p\((\d+)x(\d+)\)")
        .expect("valid regex")
});

static FUNCTIONAL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"using (LDA|PBE|BEEF-vdW) exchange").expect("valid regex"));

impl Objective {
    /// Recognize one of the supported objective families.
    pub fn parse(text: &str) -> Option<Objective> {
        if let Some(c) = LATTICE.captures(text) {
            return Some(Objective::LatticeConstant {
                element: c[2].to_string(),
                lattice: c[1].to_ascii_lowercase(),
                a_exp: c[3].parse().ok()?,
            });
        }
        let c = SURFACE.captures(text)?;
        let supercell = [c[4].parse().ok()?, c[5].parse().ok()?];
        let (adsorbate, metal, facet) = (c[1].to_string(), c[2].to_string(), c[3].to_string());
        let lower = text.to_ascii_lowercase();
        if lower.contains("bayesian ensemble") {
            return Some(Objective::Ensemble {
                metal,
                facet,
                adsorbate,
                supercell,
            });
        }
        if lower.contains("adsorption energy difference") {
            let functional = match FUNCTIONAL.captures(text) {
                Some(f) => f[1].parse().ok()?,
                None => Functional::Pbe,
            };
            return Some(Objective::Adsorption {
                metal,
                facet,
                adsorbate,
                functional,
                supercell,
            });
        }
        None
    }

    pub fn family(&self) -> &'static str {
        match self {
            Objective::LatticeConstant { .. } => "lattice-constant",
            Objective::Adsorption { .. } => "adsorption",
            Objective::Ensemble { .. } => "ensemble",
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Objective::LatticeConstant { element, lattice, a_exp } => write!(
                f,
                "You are going to calculate the lattice constant for {} {element} through DFT. \
                 The experimental value is {a_exp}; use this to create the initial structure.",
                lattice.to_ascii_uppercase()
            ),
            Objective::Adsorption {
                metal,
                facet,
                adsorbate,
                functional,
                supercell,
            } => write!(
                f,
                "Please find the adsorption energy difference between the most favorable configuration \
                 at FCC site and most favorable configuration at ontop site for {adsorbate} on {metal}({facet}) \
                 surface with p({}x{}) adsorbate overlayer using {functional} exchange correlation functional.",
                supercell[0], supercell[1]
            ),
            Objective::Ensemble {
                metal,
                facet,
                adsorbate,
                supercell,
            } => write!(
                f,
                "Perform Bayesian ensemble sampling with BEEF-vdW for {adsorbate} at FCC and ontop sites on \
                 {metal}({facet}) surface with p({}x{}) adsorbate overlayer and quantify the uncertainty of the \
                 adsorption energy difference.",
                supercell[0], supercell[1]
            ),
        }
    }
}
