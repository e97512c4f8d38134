//! Wigner function of a superposition of Gaussian packets along one axis, in closed form.
//!
//! W(z, k) = (1/π) ∫ ψ*(z + y) ψ(z − y) e^{2iky} dy, so that ∫ W dk = |ψ(z)|².

use crate::constants::PhysicalConstants;
use crate::dynamics::{axis_mode, gaussian_overlap, GaussianMode, WavepacketState};
use crate::error::SimError;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub const MAX_CELLS: usize = 4_000_000;

/// Phase-space grid: positions in m, wavevectors in 1/m, endpoints included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseGrid {
    pub z_min: f64,
    pub z_max: f64,
    pub nz: usize,
    pub k_min: f64,
    pub k_max: f64,
    pub nk: usize,
}

impl PhaseGrid {
    pub fn cells(&self) -> usize {
        self.nz.saturating_mul(self.nk)
    }

    fn axis(lo: f64, hi: f64, n: usize, i: usize) -> f64 {
        if n == 1 {
            lo
        } else {
            lo + (hi - lo) * i as f64 / (n - 1) as f64
        }
    }

    pub fn z(&self, i: usize) -> f64 {
        Self::axis(self.z_min, self.z_max, self.nz, i)
    }

    pub fn k(&self, j: usize) -> f64 {
        Self::axis(self.k_min, self.k_max, self.nk, j)
    }

    fn validate(&self) -> Result<(), SimError> {
        if self.cells() > MAX_CELLS {
            return Err(SimError::GridTooLarge { cells: self.cells(), limit: MAX_CELLS });
        }
        if self.nz == 0 || self.nk == 0 || !(self.z_max >= self.z_min) || !(self.k_max >= self.k_min) {
            return Err(SimError::Config("phase grid needs at least one cell and ordered bounds".into()));
        }
        Ok(())
    }
}

/// Values on a [`PhaseGrid`], row-major with z as the slow index.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WignerMap {
    pub grid: PhaseGrid,
    pub values: Vec<f64>,
}

impl WignerMap {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.grid.nk + j]
    }
}

/// (1/π) ∫ a*(z + y) b(z − y) e^{2iky} dy.
fn cross(a: &GaussianMode, b: &GaussianMode, z: f64, k: f64) -> Complex64 {
    let alpha = |g: &GaussianMode| Complex64::new(1.0 / (4.0 * g.width * g.width), -g.curvature);
    let (aa, ab) = (alpha(a).conj(), alpha(b));
    let (ua, ub) = (z - a.center, z - b.center);
    let i = Complex64::i();
    let big_a = aa + ab;
    let big_b = -2.0 * aa * ua + 2.0 * ab * ub + i * (2.0 * k - a.k - b.k);
    let big_c = -aa * ua * ua - ab * ub * ub + i * (b.k * ub - a.k * ua);
    let norm = (2.0 * PI * a.width * a.width).powf(-0.25) * (2.0 * PI * b.width * b.width).powf(-0.25);
    norm / PI * (PI / big_a).sqrt() * (big_b * big_b / (4.0 * big_a) + big_c).exp()
}

/// Wigner function of Σ c_j ψ_j. The coefficients are used as given, so the state is normalized
/// only if Σ c_i* c_j ⟨ψ_i|ψ_j⟩ = 1.
pub fn wigner_superposition(terms: &[(Complex64, GaussianMode)], grid: &PhaseGrid) -> Result<WignerMap, SimError> {
    grid.validate()?;
    let mut values = Vec::with_capacity(grid.cells());
    for i in 0..grid.nz {
        let z = grid.z(i);
        for j in 0..grid.nk {
            let k = grid.k(j);
            let mut w = 0.0;
            for (p, (cp, mp)) in terms.iter().enumerate() {
                w += cp.norm_sqr() * cross(mp, mp, z, k).re;
                for (cq, mq) in &terms[p + 1..] {
                    w += 2.0 * (cp.conj() * cq * cross(mp, mq, z, k)).re;
                }
            }
            values.push(w);
        }
    }
    Ok(WignerMap { grid: *grid, values })
}

/// Equal-weight superposition of the two branches along z, normalized, with the relative action
/// phase and the transverse overlap folded into the second coefficient.
pub fn wigner_of_pair(a: &WavepacketState, b: &WavepacketState, grid: &PhaseGrid) -> Result<WignerMap, SimError> {
    let c = PhysicalConstants::default();
    let transverse: Complex64 = (0..2).map(|j| gaussian_overlap(&axis_mode(a, j, &c), &axis_mode(b, j, &c))).product();
    let (ma, mb) = (axis_mode(a, 2, &c), axis_mode(b, 2, &c));
    let rel = Complex64::from_polar(1.0, b.phase - a.phase) * transverse;
    let norm = (2.0 + 2.0 * (gaussian_overlap(&ma, &mb) * rel).re).sqrt();
    wigner_superposition(&[(Complex64::new(1.0 / norm, 0.0), ma), (rel / norm, mb)], grid)
}

/// Trapezoid integral over k at every z: the position density.
pub fn position_marginal(map: &WignerMap) -> Vec<f64> {
    let g = &map.grid;
    let dk = if g.nk > 1 { (g.k_max - g.k_min) / (g.nk - 1) as f64 } else { 0.0 };
    (0..g.nz)
        .map(|i| {
            let row = &map.values[i * g.nk..(i + 1) * g.nk];
            let inner: f64 = row.iter().sum();
            dk * (inner - 0.5 * (row[0] + row[g.nk - 1]))
        })
        .collect()
}
