//! Unit conversions. Energies are carried in Ry internally; eV appears only in reports.

/// 1 Ry in eV (CODATA 2018).
pub const RY_TO_EV: f64 = 13.605693122994;

/// 1 eV/Å³ in GPa.
pub const EV_PER_A3_TO_GPA: f64 = 160.2176634;

/// 1 Ry/Å³ in GPa.
pub const RY_PER_A3_TO_GPA: f64 = RY_TO_EV * EV_PER_A3_TO_GPA;

pub fn ry_to_ev(e: f64) -> f64 {
    e * RY_TO_EV
}

pub fn ev_to_ry(e: f64) -> f64 {
    e / RY_TO_EV
}

/// meV converted to Ry.
pub fn mev_to_ry(e: f64) -> f64 {
    e * 1e-3 / RY_TO_EV
}

pub fn ry_to_mev(e: f64) -> f64 {
    e * RY_TO_EV * 1e3
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips() {
        assert!((ev_to_ry(ry_to_ev(1.234)) - 1.234).abs() < 1e-15);
        assert!((ry_to_mev(mev_to_ry(1.0)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bulk_modulus_factor() {
        assert!((RY_PER_A3_TO_GPA - 2179.8723).abs() < 1e-3);
    }
}
