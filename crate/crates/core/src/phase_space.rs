//! Closed-form phase-space algebra of the half-loop: a splitting kick, a delay, a harmonic
//! stopping pulse and time of flight.
//!
//! Matrices act on (z, p) column vectors.

use crate::constants::{HBAR, MASS_RB87};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// The stopping-pulse frequency used when none is derived from the field, rad/s.
pub const DEFAULT_STOP_OMEGA: f64 = 2.0 * PI * 850.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalfLoopAnalytic {
    pub omega: f64,
    pub t_split: f64,
    pub t_delay: f64,
    pub t_stop: f64,
    /// Differential wavevector after splitting, 1/m.
    pub kick_k: f64,
    pub sigma_z0: f64,
}

impl HalfLoopAnalytic {
    /// Parameters with the kick given as κ·T1 and the optimal stop time.
    pub fn from_kappa(omega: f64, kappa: f64, t_split: f64, t_delay: f64, sigma_z0: f64) -> Self {
        Self {
            omega,
            t_split,
            t_delay,
            t_stop: optimal_stop_time(omega, t_delay),
            kick_k: kappa * t_split,
            sigma_z0,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.omega > 0.0 && self.t_split >= 0.0 && self.t_delay >= 0.0 && self.t_stop >= 0.0 && self.kick_k >= 0.0
    }
}

/// 2×2 real matrix acting on (z, p).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseSpaceMatrix(pub [[f64; 2]; 2]);

impl PhaseSpaceMatrix {
    pub const IDENTITY: Self = Self([[1.0, 0.0], [0.0, 1.0]]);

    pub fn det(&self) -> f64 {
        let m = self.0;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }

    pub fn apply(&self, v: [f64; 2]) -> [f64; 2] {
        let m = self.0;
        [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
    }
}

impl std::ops::Mul for PhaseSpaceMatrix {
    type Output = Self;

    fn mul(self, rhs: Self) -> Self {
        let (a, b) = (self.0, rhs.0);
        Self(std::array::from_fn(|i| std::array::from_fn(|j| a[i][0] * b[0][j] + a[i][1] * b[1][j])))
    }
}

/// Harmonic evolution for time `t`; `omega = 0` gives free flight.
pub fn rotation(omega: f64, t: f64) -> PhaseSpaceMatrix {
    let m = MASS_RB87;
    if omega == 0.0 {
        return PhaseSpaceMatrix([[1.0, t / m], [0.0, 1.0]]);
    }
    let (s, c) = (omega * t).sin_cos();
    PhaseSpaceMatrix([[c, s / (m * omega)], [-m * omega * s, c]])
}

/// Smallest positive T2 with ω·Td·tan(ω·T2) = 1.
pub fn optimal_stop_time(omega: f64, t_delay: f64) -> f64 {
    // acot(x) on (0, π/2] for x ≥ 0
    let x = omega * t_delay;
    let acot = if x == 0.0 { PI / 2.0 } else { (1.0 / x).atan() };
    acot / omega
}

pub fn squeeze_factor(omega: f64, t_delay: f64) -> f64 {
    (1.0 + (omega * t_delay).powi(2)).sqrt()
}

/// Delay, stop, delay.
pub fn composite_map(omega: f64, t_delay: f64, t_stop: f64) -> PhaseSpaceMatrix {
    rotation(0.0, t_delay) * rotation(omega, t_stop) * rotation(0.0, t_delay)
}

/// Final separation of the two packets after the stopping pulse.
pub fn separation_after_stop(p: &HalfLoopAnalytic) -> f64 {
    squeeze_factor(p.omega, p.t_delay) * HBAR * p.kick_k / (MASS_RB87 * p.omega)
}

/// Width of each packet at the focus of the stopping pulse.
pub fn focus_width(p: &HalfLoopAnalytic) -> f64 {
    squeeze_factor(p.omega, p.t_delay) * HBAR / (MASS_RB87 * p.omega * p.sigma_z0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FarField {
    pub lambda: f64,
    pub envelope: f64,
    pub n_fringes: f64,
    /// False when the time of flight is less than ten focus times; the values are then rough.
    pub far_field: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
#[error("separation and time of flight must be positive (d = {d:e}, t = {t:e})")]
pub struct FarFieldError {
    pub d: f64,
    pub t: f64,
}

/// Fringe period, envelope size and fringe count after a time of flight `t`.
pub fn farfield_fringes(d: f64, t: f64, sigma_min: f64, sigma_z0: f64, kick_k: f64) -> Result<FarField, FarFieldError> {
    if d <= 0.0 || t <= 0.0 {
        return Err(FarFieldError { d, t });
    }
    let m = MASS_RB87;
    Ok(FarField {
        lambda: 2.0 * PI * HBAR * t / (m * d),
        envelope: HBAR * t / (m * sigma_min),
        n_fringes: kick_k * sigma_z0 / PI,
        far_field: t >= 10.0 * m * sigma_min * sigma_min / HBAR,
    })
}

/// Separation implied by a measured fringe period after time of flight `t`.
pub fn separation_from_period(lambda: f64, t: f64) -> f64 {
    2.0 * PI * HBAR * t / (MASS_RB87 * lambda)
}
