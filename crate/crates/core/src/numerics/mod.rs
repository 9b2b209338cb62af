//! Convergence selection, EOS fitting, adsorption-energy arithmetic and
//! ensemble statistics. Energies are in Ry unless a name says otherwise.

mod convergence;
mod eos;

use thiserror::Error;

pub use convergence::{select_converged, ConvParam, ConvergenceSeries};
pub use eos::{bm3_energy, bulk_modulus, eos_scale_factors, fit_eos, lattice_from_fit, EosFit};

use crate::units::ry_to_ev;

#[derive(Debug, Error, PartialEq)]
pub enum NumericsError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("no sampled {0} value meets the convergence threshold")]
    NoConvergedValue(&'static str),
    #[error("energies have no interior minimum over the sampled volumes")]
    NoInteriorMinimum,
    #[error("EOS fit diverged: {0}")]
    FitDiverged(String),
    #[error("reference structure is not a cubic conventional cell")]
    NonCubicReference,
    #[error("ensemble lengths differ: {0:?}")]
    LengthMismatch([usize; 4]),
    #[error("ensemble needs at least 2 members (got {0})")]
    TooFewMembers(usize),
}

/// E_ads = E_system - E_molecule - E_slab.
pub fn adsorption_energy(e_system: f64, e_slab: f64, e_molecule: f64) -> f64 {
    e_system - e_molecule - e_slab
}

/// ΔBE = E_ads(ontop) - E_ads(fcc); positive when the fcc hollow binds more strongly.
pub fn delta_be(e_ads_ontop: f64, e_ads_fcc: f64) -> f64 {
    e_ads_ontop - e_ads_fcc
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    /// eV
    pub mean: f64,
    /// Sample standard deviation (N-1), eV.
    pub std: f64,
    pub n: usize,
    /// |mean| / std; infinite when std is zero.
    pub sigma_distance: f64,
    /// Largest |four-term - two-term| difference over members, eV.
    pub route_discrepancy: f64,
    /// Per-member ΔBE (two-term route), eV.
    pub members: Vec<f64>,
}

impl EnsembleStats {
    pub fn is_degenerate(&self) -> bool {
        self.std == 0.0
    }
}

/// Per-member ΔBE over four member-aligned ensembles (Ry in, eV out).
pub fn analyze_beef(slab: &[f64], molecule: &[f64], ontop: &[f64], fcc: &[f64]) -> Result<EnsembleStats, NumericsError> {
    let lens = [slab.len(), molecule.len(), ontop.len(), fcc.len()];
    if lens.iter().any(|&l| l != lens[0]) {
        return Err(NumericsError::LengthMismatch(lens));
    }
    let n = lens[0];
    if n < 2 {
        return Err(NumericsError::TooFewMembers(n));
    }
    if slab.iter().chain(molecule).chain(ontop).chain(fcc).any(|v| !v.is_finite()) {
        return Err(NumericsError::InvalidInput("non-finite ensemble energy".into()));
    }
    let mut members = Vec::with_capacity(n);
    let mut discrepancy: f64 = 0.0;
    for m in 0..n {
        let full = delta_be(
            adsorption_energy(ontop[m], slab[m], molecule[m]),
            adsorption_energy(fcc[m], slab[m], molecule[m]),
        );
        let short = ontop[m] - fcc[m];
        discrepancy = discrepancy.max(ry_to_ev((full - short).abs()));
        members.push(ry_to_ev(short));
    }
    let mean = members.iter().sum::<f64>() / n as f64;
    let var = members.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let std = var.sqrt();
    let sigma_distance = if std > 0.0 { mean.abs() / std } else { f64::INFINITY };
    Ok(EnsembleStats {
        mean,
        std,
        n,
        sigma_distance,
        route_discrepancy: discrepancy,
        members,
    })
}

/// Floating-point tolerance for comparing the two ΔBE routes: a few ulps of
/// the largest magnitude entering the four-term sum.
pub fn route_tolerance(slab: &[f64], molecule: &[f64], ontop: &[f64], fcc: &[f64]) -> f64 {
    let big = slab
        .iter()
        .chain(molecule)
        .chain(ontop)
        .chain(fcc)
        .fold(0.0f64, |a, v| a.max(v.abs()));
    ry_to_ev(8.0 * f64::EPSILON * big)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::ev_to_ry;

    #[test]
    fn adsorption_arithmetic() {
        assert_eq!(adsorption_energy(-100.0, -90.0, -9.0), -1.0);
        assert_eq!(adsorption_energy(-99.0, -90.0, -9.0), 0.0);
        assert_eq!(delta_be(-1.2, -1.2), 0.0);
        assert!((delta_be(-1.5, -1.604) - 0.104).abs() < 1e-12);
        let c = 7.25;
        let base = adsorption_energy(-100.0, -90.0, -9.0);
        assert!((adsorption_energy(-100.0 + c, -90.0 + c, -9.0 + c) - (base - c)).abs() < 1e-12);
    }

    #[test]
    fn hand_computed_pair() {
        let z = [0.0, 0.0];
        let ontop = [ev_to_ry(0.0), ev_to_ry(2.0)];
        let s = analyze_beef(&z, &z, &ontop, &z).unwrap();
        assert!((s.mean - 1.0).abs() < 1e-12);
        assert!((s.std - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(s.n, 2);
    }

    #[test]
    fn constant_lists_are_degenerate() {
        let s = analyze_beef(&[-300.0; 5], &[-43.0; 5], &[-344.5; 5], &[-344.6; 5]).unwrap();
        assert!(s.is_degenerate());
        assert!((s.mean - ry_to_ev(0.1)).abs() < 1e-9);
        assert!(s.sigma_distance.is_infinite());
    }

    #[test]
    fn errors() {
        assert!(matches!(analyze_beef(&[0.0; 3], &[0.0; 3], &[0.0; 2], &[0.0; 3]), Err(NumericsError::LengthMismatch(_))));
        assert!(matches!(analyze_beef(&[0.0], &[0.0], &[0.0], &[0.0]), Err(NumericsError::TooFewMembers(1))));
    }

    #[test]
    fn routes_agree() {
        let slab: Vec<f64> = (0..50).map(|i| -5432.1 + i as f64 * 1e-3).collect();
        let mol: Vec<f64> = (0..50).map(|i| -43.2 - i as f64 * 7e-4).collect();
        let ontop: Vec<f64> = (0..50).map(|i| slab[i] + mol[i] - 0.13 + i as f64 * 1e-5).collect();
        let fcc: Vec<f64> = (0..50).map(|i| slab[i] + mol[i] - 0.14).collect();
        let s = analyze_beef(&slab, &mol, &ontop, &fcc).unwrap();
        assert!(s.route_discrepancy <= route_tolerance(&slab, &mol, &ontop, &fcc));
    }
}
