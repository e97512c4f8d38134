//! Physical constants, SI units throughout.

use serde::{Deserialize, Serialize};

/// Constants entering every model. `Default` gives the values for ⁸⁷Rb in the F=2 manifold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    pub hbar: f64,
    pub mass_rb87: f64,
    pub mu_bohr: f64,
    pub mu0: f64,
    pub g_gravity: f64,
    pub lande_gf: f64,
    pub a_scatter: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self {
            hbar: HBAR,
            mass_rb87: MASS_RB87,
            mu_bohr: MU_BOHR,
            mu0: MU0,
            g_gravity: G_GRAVITY,
            lande_gf: LANDE_GF,
            a_scatter: A_SCATTER,
        }
    }
}

impl PhysicalConstants {
    pub fn is_valid(&self) -> bool {
        [self.hbar, self.mass_rb87, self.mu_bohr, self.mu0, self.g_gravity, self.a_scatter]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0)
            && self.lande_gf == 0.5
    }
}

pub const HBAR: f64 = 1.054_571_817e-34;
pub const MASS_RB87: f64 = 1.443_160_648e-25;
pub const MU_BOHR: f64 = 9.274_010_078_3e-24;
pub const MU0: f64 = 1.256_637_062_12e-6;
/// Standard gravity.
pub const G_GRAVITY: f64 = 9.806_65;
pub const LANDE_GF: f64 = 0.5;
/// s-wave scattering length of ⁸⁷Rb (98 Bohr radii).
pub const A_SCATTER: f64 = 5.18e-9;

/// Zeeman energy per tesla for the differential pair mF=2 vs mF=1, divided by ħ.
pub fn differential_rate_per_tesla() -> f64 {
    LANDE_GF * MU_BOHR / HBAR
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_valid() {
        assert!(PhysicalConstants::default().is_valid());
        let mut c = PhysicalConstants::default();
        c.lande_gf = 0.51;
        assert!(!c.is_valid());
    }

    #[test]
    fn differential_rate() {
        assert!((differential_rate_per_tesla() - 4.397e10).abs() < 1e7);
    }
}
