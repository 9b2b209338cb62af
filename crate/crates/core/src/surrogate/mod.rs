//! Calibrated stand-in for the DFT code.
//!
//! Energy: E = E_phys + N * (a_c * exp(-ecutwfc / lambda_c) + a_k * kspacing^2) + eta,
//! with E_phys from a Birch-Murnaghan truth (bulk) or a per-functional,
//! per-site table (surfaces, molecules), and |eta| <= jitter_ry.
//!
//! SCF: R = ceil(scf_base * (degauss_anchor / degauss) * (mixing_beta / beta_anchor) * m)
//! with m = plain_factor or local_tf_factor; the run converges iff R <= electron_maxstep.
//! The ceiling is taken after subtracting 1e-9 so exact products such as
//! 180 * (2/3) land on 120 despite rounding.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::numerics::bm3_energy;
use crate::qeio::{render_input, render_output, Calculation, CalcSpec, Functional, MixingMode, OutputSummary, QeError};
use crate::rng::{fnv1a64, CounterRng};
use crate::structlab::{classify_adsorption, Orientation, SiteKind, StructureModel};

const BUILTIN: &str = include_str!("../../data/fixtures.toml");
pub const FIXTURE_FORMAT: &str = "matscreen-fixtures v1";

/// The surrogate's output is exactly the parsed output summary.
pub type SimOutput = OutputSummary;

#[derive(Debug, Error)]
pub enum SurrogateError {
    #[error("fixture file: {0}")]
    Format(String),
    #[error("fixture i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("no fixture for system {0:?}")]
    NoFixture(String),
    #[error("fixture {fixture} is {expected} but the structure is {found}")]
    ClassMismatch {
        fixture: String,
        expected: FixtureClass,
        found: FixtureClass,
    },
    #[error("fixture {fixture} has no {functional} energy for {what}")]
    NoEnergy {
        fixture: String,
        functional: Functional,
        what: String,
    },
    #[error("adsorbate geometry matches no known site")]
    UnrecognizedGeometry,
    #[error("ensemble calculations need input_dft = 'BEEF-vdW' (got {0})")]
    EnsembleNeedsBeef(Functional),
    #[error(transparent)]
    Spec(#[from] QeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Deserialize)]
pub enum FixtureClass {
    #[serde(rename = "bulk")]
    Bulk,
    #[serde(rename = "molecule")]
    Molecule,
    #[serde(rename = "slab")]
    Slab,
    #[serde(rename = "slab+adsorbate")]
    SlabAdsorbate,
}

impl FixtureClass {
    pub fn name(self) -> &'static str {
        match self {
            FixtureClass::Bulk => "bulk",
            FixtureClass::Molecule => "molecule",
            FixtureClass::Slab => "slab",
            FixtureClass::SlabAdsorbate => "slab+adsorbate",
        }
    }

    /// Kind of calculation a structure represents, from periodicity and composition.
    pub fn of(s: &StructureModel) -> FixtureClass {
        match s.pbc {
            [false, false, false] => FixtureClass::Molecule,
            [true, true, true] => FixtureClass::Bulk,
            _ if s.species().len() == 1 => FixtureClass::Slab,
            _ => FixtureClass::SlabAdsorbate,
        }
    }
}

impl fmt::Display for FixtureClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct Constants {
    pub lambda_c: f64,
    pub jitter_ry: f64,
    pub ensemble_size: usize,
    pub c0_seconds: f64,
    pub c1_seconds: f64,
    pub degauss_anchor: f64,
    pub beta_anchor: f64,
    pub plain_factor: f64,
    pub local_tf_factor: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct ScfBase {
    pub bulk: u32,
    pub molecule: u32,
    pub slab: u32,
    pub slab_adsorbate: u32,
}

impl ScfBase {
    pub fn for_class(&self, c: FixtureClass) -> u32 {
        match c {
            FixtureClass::Bulk => self.bulk,
            FixtureClass::Molecule => self.molecule,
            FixtureClass::Slab => self.slab,
            FixtureClass::SlabAdsorbate => self.slab_adsorbate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct BmTruth {
    pub e0: f64,
    pub v0: f64,
    pub b0: f64,
    pub b0_prime: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEnergy {
    functional: String,
    site: Option<String>,
    orientation: Option<String>,
    e: f64,
    #[serde(default)]
    beef_offset: f64,
    #[serde(default)]
    beef_w: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFixture {
    id: String,
    class: FixtureClass,
    lattice: Option<String>,
    cell_atoms: Option<usize>,
    e0: Option<f64>,
    v0: Option<f64>,
    b0: Option<f64>,
    b0_prime: Option<f64>,
    a_c: f64,
    a_k: f64,
    lambda_c: Option<f64>,
    scf_base: Option<u32>,
    seed: Option<u64>,
    #[serde(default)]
    energy: Vec<RawEnergy>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    format: String,
    constants: Constants,
    scf_base: ScfBase,
    fixture: Vec<RawFixture>,
}

/// Key of a site-table entry; `None` parts for slabs and molecules.
pub type EnergyKey = (Functional, Option<SiteKind>, Option<Orientation>);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SiteEnergy {
    /// Ry
    pub e: f64,
    /// Ensemble mean offset, Ry.
    pub beef_offset: f64,
    /// Ensemble spread weight, Ry.
    pub beef_w: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaterialFixture {
    pub id: String,
    pub class: FixtureClass,
    pub lattice: Option<String>,
    pub cell_atoms: usize,
    pub bm: Option<BmTruth>,
    pub a_c: f64,
    pub lambda_c: f64,
    pub a_k: f64,
    pub scf_base: u32,
    pub seed: u64,
    pub energies: BTreeMap<(String, Option<SiteKind>, Option<Orientation>), SiteEnergy>,
}

impl MaterialFixture {
    pub fn energy(&self, key: EnergyKey) -> Option<&SiteEnergy> {
        self.energies.get(&(key.0.as_str().to_string(), key.1, key.2))
    }

    /// Equilibrium lattice constant implied by the truth (cubic cells).
    pub fn a_truth(&self) -> Option<f64> {
        self.bm.map(|b| b.v0.cbrt())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureLibrary {
    pub constants: Constants,
    pub scf_base: ScfBase,
    fixtures: BTreeMap<String, MaterialFixture>,
}

fn positive(what: &str, v: f64) -> Result<f64, SurrogateError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(SurrogateError::Format(format!("{what} must be positive (got {v})")))
    }
}

impl FixtureLibrary {
    pub fn parse(text: &str) -> Result<Self, SurrogateError> {
        let raw: RawFile = toml::from_str(text).map_err(|e| SurrogateError::Format(e.to_string()))?;
        if raw.format != FIXTURE_FORMAT {
            return Err(SurrogateError::Format(format!("unsupported format {:?}", raw.format)));
        }
        let c = raw.constants;
        positive("lambda_c", c.lambda_c)?;
        positive("degauss_anchor", c.degauss_anchor)?;
        positive("beta_anchor", c.beta_anchor)?;
        positive("plain_factor", c.plain_factor)?;
        positive("local_tf_factor", c.local_tf_factor)?;
        if !(c.jitter_ry >= 0.0) || c.ensemble_size < 2 {
            return Err(SurrogateError::Format("jitter_ry must be >= 0 and ensemble_size >= 2".into()));
        }
        let mut fixtures = BTreeMap::new();
        for f in raw.fixture {
            let bm = match f.class {
                FixtureClass::Bulk => {
                    let need = |name: &str, v: Option<f64>| {
                        v.ok_or_else(|| SurrogateError::Format(format!("bulk fixture {} lacks {name}", f.id)))
                    };
                    let bm = BmTruth {
                        e0: need("e0", f.e0)?,
                        v0: positive("v0", need("v0", f.v0)?)?,
                        b0: positive("b0", need("b0", f.b0)?)?,
                        b0_prime: need("b0_prime", f.b0_prime)?,
                    };
                    Some(bm)
                }
                _ => None,
            };
            if !(f.a_c >= 0.0) || !(f.a_k >= 0.0) {
                return Err(SurrogateError::Format(format!("{}: amplitudes must be >= 0", f.id)));
            }
            let lambda_c = positive("lambda_c", f.lambda_c.unwrap_or(c.lambda_c))?;
            let scf_base = f.scf_base.unwrap_or(raw.scf_base.for_class(f.class));
            if scf_base < 1 {
                return Err(SurrogateError::Format(format!("{}: scf_base must be >= 1", f.id)));
            }
            let mut energies = BTreeMap::new();
            for e in f.energy {
                let fun: Functional = e.functional.parse().map_err(SurrogateError::Format)?;
                let site = e
                    .site
                    .as_deref()
                    .map(|s| SiteKind::parse(s).ok_or_else(|| SurrogateError::Format(format!("unknown site {s:?}"))))
                    .transpose()?;
                let orient = e
                    .orientation
                    .as_deref()
                    .map(|s| Orientation::parse(s).ok_or_else(|| SurrogateError::Format(format!("unknown orientation {s:?}"))))
                    .transpose()?;
                let key = (fun.as_str().to_string(), site, orient);
                let value = SiteEnergy {
                    e: e.e,
                    beef_offset: e.beef_offset,
                    beef_w: e.beef_w,
                };
                if energies.insert(key, value).is_some() {
                    return Err(SurrogateError::Format(format!("{}: duplicate energy entry", f.id)));
                }
            }
            let fx = MaterialFixture {
                id: f.id.clone(),
                class: f.class,
                lattice: f.lattice,
                cell_atoms: f.cell_atoms.unwrap_or(1),
                bm,
                a_c: f.a_c,
                lambda_c,
                a_k: f.a_k,
                scf_base,
                seed: f.seed.unwrap_or(0),
                energies,
            };
            if fixtures.insert(f.id.clone(), fx).is_some() {
                return Err(SurrogateError::Format(format!("duplicate fixture id {}", f.id)));
            }
        }
        Ok(FixtureLibrary {
            constants: c,
            scf_base: raw.scf_base,
            fixtures,
        })
    }

    pub fn builtin() -> Self {
        Self::parse(BUILTIN).expect("shipped fixture library parses")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SurrogateError> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn get(&self, id: &str) -> Option<&MaterialFixture> {
        self.fixtures.get(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.fixtures.keys().map(String::as_str)
    }

    /// Fixture id a structure maps to: element (bulk), formula (molecule),
    /// `<metal>111` (slab) or `<metal>111_<adsorbate formula>`.
    pub fn system_id(s: &StructureModel) -> String {
        let class = FixtureClass::of(s);
        let metal = s.symbols.first().cloned().unwrap_or_default();
        match class {
            FixtureClass::Bulk => s.formula().trim_end_matches(char::is_numeric).to_string(),
            FixtureClass::Molecule => s.formula(),
            FixtureClass::Slab => format!("{metal}111"),
            FixtureClass::SlabAdsorbate => {
                let ads: String = s.symbols.iter().filter(|x| **x != metal).map(String::as_str).collect();
                format!("{metal}111_{ads}")
            }
        }
    }

    pub fn resolve(&self, s: &StructureModel) -> Result<&MaterialFixture, SurrogateError> {
        if FixtureClass::of(s) == FixtureClass::Bulk && s.species().len() != 1 {
            return Err(SurrogateError::NoFixture(s.formula()));
        }
        let id = Self::system_id(s);
        self.get(&id).ok_or(SurrogateError::NoFixture(id))
    }

    /// Required SCF iterations for a fixture under a spec.
    pub fn scf_required(&self, fixture: &MaterialFixture, spec: &CalcSpec) -> u32 {
        let c = &self.constants;
        let m = match spec.mixing_mode {
            MixingMode::Plain => c.plain_factor,
            MixingMode::LocalTf => c.local_tf_factor,
        };
        let x = fixture.scf_base as f64 * (c.degauss_anchor / spec.degauss) * (spec.mixing_beta / c.beta_anchor) * m;
        (x - 1e-9).ceil().max(1.0) as u32
    }

    /// Simulated wall time (s): c0 + c1 * nat * n_scf / ntasks.
    pub fn wall_seconds(&self, nat: usize, n_scf: usize, ntasks: usize) -> f64 {
        self.constants.c0_seconds + self.constants.c1_seconds * (nat * n_scf) as f64 / ntasks.max(1) as f64
    }

    /// Physical (discretization-free) energy of a structure under a functional.
    pub fn physical_energy(
        &self,
        fixture: &MaterialFixture,
        s: &StructureModel,
        functional: Functional,
    ) -> Result<(f64, Option<SiteEnergy>), SurrogateError> {
        let found = FixtureClass::of(s);
        if found != fixture.class {
            return Err(SurrogateError::ClassMismatch {
                fixture: fixture.id.clone(),
                expected: fixture.class,
                found,
            });
        }
        match fixture.class {
            FixtureClass::Bulk => {
                // only a PBE truth exists for bulk; other functionals share it
                let bm = fixture.bm.expect("bulk fixtures carry a truth");
                let n_cell = fixture.cell_atoms as f64;
                let per = s.len() as f64 / n_cell;
                let e = per * bm3_energy(bm.e0, bm.v0, bm.b0, bm.b0_prime, s.volume() / per);
                Ok((e, None))
            }
            FixtureClass::Molecule | FixtureClass::Slab => {
                let se = fixture.energy((functional, None, None)).ok_or_else(|| SurrogateError::NoEnergy {
                    fixture: fixture.id.clone(),
                    functional,
                    what: fixture.class.name().into(),
                })?;
                Ok((se.e, Some(*se)))
            }
            FixtureClass::SlabAdsorbate => {
                let metal = &s.symbols[0];
                let g = classify_adsorption(s, metal).ok_or(SurrogateError::UnrecognizedGeometry)?;
                let se = fixture
                    .energy((functional, Some(g.site), Some(g.orientation)))
                    .ok_or_else(|| SurrogateError::NoEnergy {
                        fixture: fixture.id.clone(),
                        functional,
                        what: format!("{} {}", g.site, g.orientation),
                    })?;
                Ok((se.e, Some(*se)))
            }
        }
    }

    /// Deterministic outcome of one calculation.
    pub fn evaluate(
        &self,
        fixture: &MaterialFixture,
        s: &StructureModel,
        spec: &CalcSpec,
        seed: u64,
        ntasks: usize,
    ) -> Result<SimOutput, SurrogateError> {
        let (input_text, _) = render_input(spec, s)?;
        let (e_phys, site) = self.physical_energy(fixture, s, spec.input_dft)?;
        let c = &self.constants;
        let n = s.len() as f64;
        let discretization = n * (fixture.a_c * (-spec.ecutwfc / fixture.lambda_c).exp() + fixture.a_k * spec.kspacing * spec.kspacing);
        let jitter_rng = CounterRng::stream(seed ^ fixture.seed, "jitter");
        let eta = c.jitter_ry * (2.0 * jitter_rng.uniform_at(fnv1a64(input_text.as_bytes())) - 1.0);
        let energy = e_phys + discretization + eta;

        let required = self.scf_required(fixture, spec);
        let n_scf = required.min(spec.electron_maxstep) as usize;
        let converged = required <= spec.electron_maxstep;
        let thr = spec.conv_thr;
        let r = required as f64;
        let accuracy_series = (1..=n_scf)
            .map(|i| 0.9 * thr * (1.0 / thr).powf((r - i as f64) / r))
            .collect();

        let ensemble_energies = if spec.calculation == Calculation::Ensemble && converged {
            if spec.input_dft != Functional::BeefVdw {
                return Err(SurrogateError::EnsembleNeedsBeef(spec.input_dft));
            }
            let se = site.unwrap_or(SiteEnergy {
                e: e_phys,
                beef_offset: 0.0,
                beef_w: 0.0,
            });
            let z = CounterRng::stream(seed, "beef");
            Some(
                (0..c.ensemble_size as u64)
                    .map(|m| energy + se.beef_offset + se.beef_w * z.normal_at(m))
                    .collect(),
            )
        } else {
            None
        };
        Ok(SimOutput {
            total_energy: energy,
            converged,
            n_scf,
            accuracy_series,
            ensemble_energies,
            wall_seconds: self.wall_seconds(s.len(), n_scf, ntasks),
        })
    }

    /// Evaluate and write the output document to `path`.
    pub fn evaluate_to_file(
        &self,
        fixture: &MaterialFixture,
        s: &StructureModel,
        spec: &CalcSpec,
        seed: u64,
        ntasks: usize,
        path: impl AsRef<Path>,
    ) -> Result<SimOutput, SurrogateError> {
        let out = self.evaluate(fixture, s, spec, seed, ntasks)?;
        fs::write(path, render_output(&fixture.id, &out))?;
        Ok(out)
    }
}
