//! One-dimensional Crank-Nicolson solver for the two spin components during the splitting
//! pulse, with the random multiplicative perturbation of the chip potential.

use crate::constants::{HBAR, LANDE_GF, MASS_RB87, MU0, MU_BOHR};
use crate::error::SolverError;
use crate::fringe::{fit_fringe, FitFringeOptions, FringeFit, FringePattern};
use crate::rng::shot_rng;
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    pub z_min: f64,
    pub dz: f64,
    pub n_points: usize,
}

impl Default for Grid1D {
    fn default() -> Self {
        Self { z_min: 95e-6 - 1500.0 * 5e-9, dz: 5e-9, n_points: 3000 }
    }
}

impl Grid1D {
    pub fn new(z_min: f64, dz: f64, n_points: usize) -> Result<Self, SolverError> {
        let g = Self { z_min, dz, n_points };
        g.validate()?;
        Ok(g)
    }

    /// Smallest grid with spacing `dz` containing [lo, hi].
    pub fn spanning(lo: f64, hi: f64, dz: f64) -> Result<Self, SolverError> {
        let n = ((hi - lo) / dz).ceil() as usize + 1;
        Self::new(lo, dz, n.max(16))
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        if self.n_points < 16 {
            return Err(SolverError::Grid(format!("{} points, need at least 16", self.n_points)));
        }
        if !(self.dz > 0.0 && self.dz.is_finite() && self.z_min.is_finite()) {
            return Err(SolverError::Grid(format!("spacing {:e}", self.dz)));
        }
        Ok(())
    }

    pub fn z(&self, i: usize) -> f64 {
        self.z_min + i as f64 * self.dz
    }

    pub fn z_max(&self) -> f64 {
        self.z(self.n_points - 1)
    }

    /// True when [center − margin·σ, center + margin·σ] lies inside the grid.
    pub fn covers(&self, center: f64, sigma: f64, margin: f64) -> bool {
        center - margin * sigma >= self.z_min && center + margin * sigma <= self.z_max()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaveFunction {
    pub grid: Grid1D,
    pub amplitudes: Vec<Complex64>,
}

impl WaveFunction {
    /// Normalised Gaussian whose density has standard deviation `sigma`, with wavevector `k0`.
    pub fn gaussian(grid: Grid1D, center: f64, sigma: f64, k0: f64) -> Self {
        let amplitudes = (0..grid.n_points)
            .map(|i| {
                let z = grid.z(i) - center;
                Complex64::from_polar((-(z * z) / (4.0 * sigma * sigma)).exp(), k0 * z)
            })
            .collect();
        let mut psi = Self { grid, amplitudes };
        let n = psi.norm().sqrt();
        psi.amplitudes.iter_mut().for_each(|a| *a /= n);
        psi
    }

    /// Σ|ψ|²·dz.
    pub fn norm(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>() * self.grid.dz
    }

    pub fn density(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.norm_sqr()).collect()
    }

    pub fn mean_position(&self) -> f64 {
        let w: f64 = self.amplitudes.iter().map(|a| a.norm_sqr()).sum();
        self.amplitudes.iter().enumerate().map(|(i, a)| a.norm_sqr() * self.grid.z(i)).sum::<f64>() / w
    }

    /// Standard deviation of the density.
    pub fn width(&self) -> f64 {
        let w: f64 = self.amplitudes.iter().map(|a| a.norm_sqr()).sum();
        let m = self.mean_position();
        (self.amplitudes.iter().enumerate().map(|(i, a)| a.norm_sqr() * (self.grid.z(i) - m).powi(2)).sum::<f64>() / w).sqrt()
    }

    /// max(|ψ| at the two edges) / max |ψ|.
    pub fn edge_ratio(&self) -> f64 {
        let peak = self.amplitudes.iter().fold(0.0f64, |a, c| a.max(c.norm()));
        let n = self.amplitudes.len();
        self.amplitudes[0].norm().max(self.amplitudes[n - 1].norm()) / peak
    }
}

/// Crank-Nicolson propagator for a fixed potential and time step, with the Thomas elimination
/// factors of the implicit side precomputed.
#[derive(Debug, Clone)]
pub struct CrankNicolson {
    grid: Grid1D,
    /// ħ dt / 4 m dz².
    r: f64,
    /// V dt / 2ħ per point.
    beta: Vec<f64>,
    c_prime: Vec<Complex64>,
    inv_denom: Vec<Complex64>,
}

impl CrankNicolson {
    pub fn new(grid: Grid1D, potential: &[f64], dt: f64) -> Result<Self, SolverError> {
        grid.validate()?;
        if potential.len() != grid.n_points {
            return Err(SolverError::GridMismatch { expected: grid.n_points, got: potential.len() });
        }
        if dt == 0.0 || !dt.is_finite() {
            return Err(SolverError::TimeStep);
        }
        let r = HBAR * dt / (4.0 * MASS_RB87 * grid.dz * grid.dz);
        let beta: Vec<f64> = potential.iter().map(|v| v * dt / (2.0 * HBAR)).collect();
        // implicit side: diag 1 + i(2r + β), off-diagonals −ir
        let off = Complex64::new(0.0, -r);
        let n = grid.n_points;
        let mut c_prime = vec![Complex64::new(0.0, 0.0); n];
        let mut inv_denom = vec![Complex64::new(0.0, 0.0); n];
        let mut prev = Complex64::new(0.0, 0.0);
        for i in 0..n {
            let diag = Complex64::new(1.0, 2.0 * r + beta[i]);
            let denom = diag - off * prev;
            inv_denom[i] = 1.0 / denom;
            prev = off * inv_denom[i];
            c_prime[i] = prev;
        }
        Ok(Self { grid, r, beta, c_prime, inv_denom })
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    /// One step in place; `scratch` is resized as needed. ψ = 0 beyond both edges.
    pub fn step(&self, psi: &mut [Complex64], scratch: &mut Vec<Complex64>) {
        let n = psi.len();
        scratch.resize(n, Complex64::new(0.0, 0.0));
        let ir = Complex64::new(0.0, self.r);
        let off = Complex64::new(0.0, -self.r);
        let mut prev = Complex64::new(0.0, 0.0);
        for i in 0..n {
            let left = if i > 0 { psi[i - 1] } else { Complex64::new(0.0, 0.0) };
            let right = if i + 1 < n { psi[i + 1] } else { Complex64::new(0.0, 0.0) };
            let d = Complex64::new(1.0, -(2.0 * self.r + self.beta[i])) * psi[i] + ir * (left + right);
            prev = (d - off * prev) * self.inv_denom[i];
            scratch[i] = prev;
        }
        psi[n - 1] = scratch[n - 1];
        for i in (0..n - 1).rev() {
            psi[i] = scratch[i] - self.c_prime[i] * psi[i + 1];
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evolution {
    pub psi: WaveFunction,
    /// |ψ| at an edge exceeded 1e-6 of its maximum at the end of the run.
    pub edge_contamination: bool,
}

/// Evolves `steps` Crank-Nicolson steps of size `dt` under a static potential.
pub fn evolve(psi: &WaveFunction, potential: &[f64], dt: f64, steps: usize) -> Result<Evolution, SolverError> {
    evolve_piecewise(psi, &[(potential, steps)], dt)
}

/// Evolves through consecutive segments, each a potential held for a number of steps; single-step
/// segments give a potential that changes every step.
pub fn evolve_piecewise(psi: &WaveFunction, segments: &[(&[f64], usize)], dt: f64) -> Result<Evolution, SolverError> {
    let mut out = psi.clone();
    let mut scratch = Vec::new();
    for (potential, steps) in segments {
        let cn = CrankNicolson::new(psi.grid, potential, dt)?;
        for _ in 0..*steps {
            cn.step(&mut out.amplitudes, &mut scratch);
        }
    }
    let edge_contamination = out.edge_ratio() > 1e-6;
    Ok(Evolution { psi: out, edge_contamination })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Correlation {
    Zero,
    #[default]
    Infinite,
}

/// Multiplicative disorder of the chip potential for one spin state in one shot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRealization {
    pub epsilon: f64,
    pub correlation: Correlation,
    pub seed: u64,
    pub values: Vec<f64>,
}

impl NoiseRealization {
    /// Uniform draws on [−1, 1]: one per point (zero correlation) or one for all points.
    pub fn draw<R: Rng>(n: usize, epsilon: f64, correlation: Correlation, seed: u64, rng: &mut R) -> Self {
        let values = match correlation {
            Correlation::Zero => (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect(),
            Correlation::Infinite => vec![rng.random_range(-1.0..=1.0); n],
        };
        Self { epsilon, correlation, seed, values }
    }
}

/// V + ε·(noise ⊙ V).
pub fn perturbed_potential(base: &[f64], noise: &NoiseRealization) -> Result<Vec<f64>, SolverError> {
    if base.len() != noise.values.len() {
        return Err(SolverError::GridMismatch { expected: base.len(), got: noise.values.len() });
    }
    Ok(base.iter().zip(&noise.values).map(|(v, u)| v * (1.0 + noise.epsilon * u)).collect())
}

/// Two spin states split by a thin-wire gradient pulse, interfered right after the pulse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomVectorModel {
    /// Chip current during the splitting pulse, A.
    pub current: f64,
    pub wire_spacing: f64,
    pub z_start: f64,
    /// Density width of the initial packet.
    pub sigma_z: f64,
    pub dt: f64,
    pub dz: f64,
    pub m_f: [i32; 2],
    /// Grid margin around the classical paths, in packet widths.
    pub margin_sigmas: f64,
}

impl Default for RandomVectorModel {
    fn default() -> Self {
        Self {
            current: 1.0,
            wire_spacing: 100e-6,
            z_start: 95e-6,
            sigma_z: 1.2e-6,
            dt: 1e-8,
            dz: 5e-9,
            m_f: [2, 1],
            margin_sigmas: 7.5,
        }
    }
}

/// Result of an ensemble run at one splitting time.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsemblePoint {
    pub t_split: f64,
    pub epsilon: f64,
    pub correlation: Correlation,
    pub shots: usize,
    pub seed: u64,
    pub pattern: FringePattern,
    pub reference: FringePattern,
    pub fit: FringeFit,
    pub reference_fit: FringeFit,
    /// Multi-shot visibility relative to the noise-free pattern.
    pub visibility: f64,
}

impl RandomVectorModel {
    /// Signed Zeeman energy on the symmetry axis from three thin wires, bias omitted.
    pub fn potential_at(&self, m_f: i32, z: f64) -> f64 {
        let alpha = m_f as f64 * LANDE_GF * MU_BOHR * MU0 * self.current / (2.0 * PI);
        let q = self.wire_spacing / z;
        alpha / z * (1.0 - 2.0 / (1.0 + q * q))
    }

    fn force_at(&self, m_f: i32, z: f64) -> f64 {
        let h = 1e-9;
        -(self.potential_at(m_f, z + h) - self.potential_at(m_f, z - h)) / (2.0 * h)
    }

    /// Differential wavevector growth rate at the start position, 1/(m·s).
    pub fn kappa(&self) -> f64 {
        (self.force_at(self.m_f[0], self.z_start) - self.force_at(self.m_f[1], self.z_start)).abs() / HBAR
    }

    /// Classical (position, momentum) of spin state `m_f` after time `t`, starting at rest.
    pub fn classical_state(&self, m_f: i32, t: f64) -> (f64, f64) {
        let n = ((t / 1e-7).ceil() as usize).max(1);
        let h = t / n as f64;
        let (mut z, mut v) = (self.z_start, 0.0);
        let mut a = self.force_at(m_f, z) / MASS_RB87;
        for _ in 0..n {
            v += 0.5 * h * a;
            z += h * v;
            a = self.force_at(m_f, z) / MASS_RB87;
            v += 0.5 * h * a;
        }
        (z, MASS_RB87 * v)
    }

    pub fn classical_position(&self, m_f: i32, t: f64) -> f64 {
        self.classical_state(m_f, t).0
    }

    /// Starting period and chirp for fitting the pattern at `t`, around position `z`: the relative
    /// wavevector is the classical momentum difference corrected by the potential curvature.
    pub fn fringe_guess(&self, t: f64, z: f64) -> (f64, f64) {
        let curv = |m: i32| {
            let h = 1e-8;
            (self.potential_at(m, z + h) - 2.0 * self.potential_at(m, z) + self.potential_at(m, z - h)) / (h * h)
        };
        let (za, pa) = self.classical_state(self.m_f[0], t);
        let (zb, pb) = self.classical_state(self.m_f[1], t);
        let (ca, cb) = (curv(self.m_f[0]), curv(self.m_f[1]));
        let dk = (pa - pb) / HBAR - ((z - za) * ca - (z - zb) * cb) * t / HBAR;
        let chirp = -(ca - cb) * t / (2.0 * HBAR);
        (2.0 * PI / dk.abs(), chirp * dk.signum())
    }

    /// Grid covering both classical paths up to `t_max` with the configured margin.
    pub fn grid_for(&self, t_max: f64) -> Result<Grid1D, SolverError> {
        let mut lo = self.z_start;
        let mut hi = self.z_start;
        for &m in &self.m_f {
            for k in 0..=20 {
                let z = self.classical_position(m, t_max * k as f64 / 20.0);
                lo = lo.min(z);
                hi = hi.max(z);
            }
        }
        let pad = self.margin_sigmas * self.sigma_z;
        Grid1D::spanning(lo - pad, hi + pad, self.dz)
    }

    pub fn base_potential(&self, grid: &Grid1D, m_f: i32) -> Vec<f64> {
        (0..grid.n_points).map(|i| self.potential_at(m_f, grid.z(i))).collect()
    }

    fn steps_for(&self, t: f64) -> usize {
        (t / self.dt).round() as usize
    }

    /// Wavefunction of spin `which` evolved under (1 + ε·noise)V. The energy offset
    /// (1 + ε·ū)V(z_start) is taken out of the propagator and restored as an exact phase, which
    /// keeps the per-step phase small; ū is the noise value (its mean for zero correlation, where
    /// the remaining spatial structure stays in the propagator).
    fn evolve_spin(&self, grid: &Grid1D, which: usize, noise: Option<&NoiseRealization>, snapshots: &[usize]) -> Result<Vec<Vec<Complex64>>, SolverError> {
        let base = self.base_potential(grid, self.m_f[which]);
        let full = match noise {
            Some(n) => perturbed_potential(&base, n)?,
            None => base,
        };
        let v0 = self.potential_at(self.m_f[which], self.z_start);
        let offset = match noise {
            Some(n) if n.correlation == Correlation::Infinite => v0 * (1.0 + n.epsilon * n.values[0]),
            _ => v0,
        };
        let shifted: Vec<f64> = full.iter().map(|v| v - offset).collect();
        let cn = CrankNicolson::new(*grid, &shifted, self.dt)?;
        let mut psi = WaveFunction::gaussian(*grid, self.z_start, self.sigma_z, 0.0).amplitudes;
        let mut scratch = Vec::new();
        let mut out = Vec::with_capacity(snapshots.len());
        let mut done = 0;
        for &s in snapshots {
            for _ in done..s {
                cn.step(&mut psi, &mut scratch);
            }
            done = s;
            let phase = Complex64::from_polar(1.0, -offset * s as f64 * self.dt / HBAR);
            out.push(psi.iter().map(|a| a * phase).collect());
        }
        Ok(out)
    }

    fn pattern(grid: &Grid1D, a: &[Complex64], b: &[Complex64], t: f64, shot: Option<usize>) -> FringePattern {
        let values = a.iter().zip(b).map(|(x, y)| 0.5 * (x + y).norm_sqr()).collect();
        FringePattern { z_min: grid.z_min, dz: grid.dz, values, time: t, shot }
    }

    fn draw_pair(&self, n: usize, epsilon: f64, correlation: Correlation, seed: u64, shot: usize) -> [NoiseRealization; 2] {
        let mut rng = shot_rng(seed, shot as u64);
        let first = NoiseRealization::draw(n, epsilon, correlation, seed, &mut rng);
        let second = match correlation {
            Correlation::Zero => NoiseRealization::draw(n, epsilon, correlation, seed, &mut rng),
            Correlation::Infinite => first.clone(),
        };
        [first, second]
    }

    /// Single-shot interference pattern |ψ1 + ψ2|²/2 after a splitting pulse of length `t_split`.
    pub fn split_and_interfere(&self, t_split: f64, epsilon: f64, correlation: Correlation, seed: u64, shot: usize) -> Result<FringePattern, SolverError> {
        let grid = self.grid_for(t_split)?;
        let steps = [self.steps_for(t_split)];
        let noise = self.draw_pair(grid.n_points, epsilon, correlation, seed, shot);
        let a = self.evolve_spin(&grid, 0, Some(&noise[0]), &steps)?;
        let b = self.evolve_spin(&grid, 1, Some(&noise[1]), &steps)?;
        Ok(Self::pattern(&grid, &a[0], &b[0], t_split, Some(shot)))
    }

    /// Chirped fit of a pattern produced by this model, started from the classical estimate.
    pub fn fit_pattern(&self, pattern: &FringePattern) -> Result<FringeFit, SolverError> {
        let (lambda, chirp) = self.fringe_guess(pattern.time, pattern.z_center());
        Ok(fit_fringe(pattern, FitFringeOptions { chirped: true, period_guess: Some(lambda), chirp_guess: Some(chirp) })?)
    }

    /// Number of Chebyshev nodes in the disorder amplitude u for a given ε and duration.
    pub fn chebyshev_nodes(&self, grid: &Grid1D, epsilon: f64, t_max: f64) -> usize {
        let vmax = self
            .m_f
            .iter()
            .flat_map(|&m| [self.potential_at(m, grid.z_min), self.potential_at(m, grid.z_max())])
            .fold(0.0f64, |a, v| a.max(v.abs()));
        let phi_max = epsilon * vmax * t_max / HBAR;
        ((12.0 + 2.0 * phi_max).ceil() as usize).max(12)
    }

    /// Solutions at the Chebyshev nodes of u ∈ [−1, 1] for infinite correlation, per snapshot:
    /// `out[snapshot][node]` is (ψ1 + ψ2)/√2 with both spins at that u.
    fn chebyshev_table(&self, grid: &Grid1D, epsilon: f64, nodes: usize, steps: &[usize]) -> Result<(Vec<f64>, Vec<Vec<Vec<Complex64>>>), SolverError> {
        let us: Vec<f64> = (0..nodes).map(|k| ((2 * k + 1) as f64 * PI / (2 * nodes) as f64).cos()).collect();
        let jobs: Vec<(usize, usize)> = (0..nodes).flat_map(|k| [(k, 0), (k, 1)]).collect();
        let solved: Vec<Vec<Vec<Complex64>>> = jobs
            .par_iter()
            .map(|&(k, which)| {
                let noise = NoiseRealization { epsilon, correlation: Correlation::Infinite, seed: 0, values: vec![us[k]; grid.n_points] };
                self.evolve_spin(grid, which, Some(&noise), steps)
            })
            .collect::<Result<_, _>>()?;
        let mut table = vec![Vec::with_capacity(nodes); steps.len()];
        for k in 0..nodes {
            for (s, slot) in table.iter_mut().enumerate() {
                let sum: Vec<Complex64> = solved[2 * k][s].iter().zip(&solved[2 * k + 1][s]).map(|(a, b)| (a + b) / 2f64.sqrt()).collect();
                slot.push(sum);
            }
        }
        Ok((us, table))
    }

    /// Multi-shot pattern and normalised visibility at each splitting time in `times`
    /// (ascending), from one seed. Infinite correlation uses Chebyshev interpolation in the shared
    /// disorder amplitude; zero correlation solves every shot.
    pub fn ensemble(&self, times: &[f64], epsilon: f64, correlation: Correlation, shots: usize, seed: u64) -> Result<Vec<EnsemblePoint>, SolverError> {
        if times.is_empty() {
            return Ok(Vec::new());
        }
        if times.windows(2).any(|w| w[1] < w[0]) || times[0] <= 0.0 {
            return Err(SolverError::Grid("splitting times must be positive and ascending".into()));
        }
        let t_max = *times.last().unwrap();
        let grid = self.grid_for(t_max)?;
        let steps: Vec<usize> = times.iter().map(|&t| self.steps_for(t)).collect();
        let n = grid.n_points;

        let ra = self.evolve_spin(&grid, 0, None, &steps)?;
        let rb = self.evolve_spin(&grid, 1, None, &steps)?;
        let sums: Vec<Vec<f64>> = match correlation {
            Correlation::Infinite => {
                let nodes = self.chebyshev_nodes(&grid, epsilon, t_max);
                let (us, table) = self.chebyshev_table(&grid, epsilon, nodes, &steps)?;
                let draws: Vec<f64> = (0..shots).map(|s| shot_rng(seed, s as u64).random_range(-1.0..=1.0)).collect();
                table
                    .par_iter()
                    .map(|node_vals| {
                        let mut acc = vec![0.0; n];
                        let mut psi = vec![Complex64::new(0.0, 0.0); n];
                        for &u in &draws {
                            let w = barycentric_weights(&us, u);
                            psi.iter_mut().for_each(|p| *p = Complex64::new(0.0, 0.0));
                            for (wk, vals) in w.iter().zip(node_vals) {
                                for (p, v) in psi.iter_mut().zip(vals) {
                                    *p += wk * v;
                                }
                            }
                            for (a, p) in acc.iter_mut().zip(&psi) {
                                *a += p.norm_sqr();
                            }
                        }
                        acc
                    })
                    .collect()
            }
            Correlation::Zero => {
                let mut acc = vec![vec![0.0; n]; steps.len()];
                for chunk in (0..shots).collect::<Vec<_>>().chunks(32) {
                    let part: Vec<Vec<Vec<f64>>> = chunk
                        .par_iter()
                        .map(|&s| {
                            let noise = self.draw_pair(n, epsilon, correlation, seed, s);
                            let a = self.evolve_spin(&grid, 0, Some(&noise[0]), &steps)?;
                            let b = self.evolve_spin(&grid, 1, Some(&noise[1]), &steps)?;
                            Ok(a.iter().zip(&b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| 0.5 * (p + q).norm_sqr()).collect()).collect())
                        })
                        .collect::<Result<_, SolverError>>()?;
                    for shot in part {
                        for (slot, dens) in acc.iter_mut().zip(shot) {
                            for (a, d) in slot.iter_mut().zip(dens) {
                                *a += d;
                            }
                        }
                    }
                }
                acc
            }
        };
        times
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let mean: Vec<f64> = sums[i].iter().map(|v| v / shots.max(1) as f64).collect();
                let pattern = FringePattern { z_min: grid.z_min, dz: grid.dz, values: mean, time: t, shot: None };
                let reference = Self::pattern(&grid, &ra[i], &rb[i], t, None);
                let rc = reference.support(1e-8);
                let lo = ((rc.z_min - grid.z_min) / grid.dz).round() as usize;
                let pc = FringePattern { z_min: rc.z_min, values: pattern.values[lo..lo + rc.len()].to_vec(), ..pattern.clone() };
                let reference_fit = self.fit_pattern(&rc)?;
                let fit = fit_fringe(&pc, FitFringeOptions { chirped: true, period_guess: Some(reference_fit.lambda), chirp_guess: reference_fit.chirp })?;
                Ok(EnsemblePoint {
                    t_split: t,
                    epsilon,
                    correlation,
                    shots,
                    seed,
                    visibility: fit.visibility_raw / reference_fit.visibility_raw,
                    pattern,
                    reference,
                    fit,
                    reference_fit,
                })
            })
            .collect()
    }
}

/// Barycentric interpolation weights at `u` for Chebyshev points of the first kind `nodes`.
pub fn barycentric_weights(nodes: &[f64], u: f64) -> Vec<f64> {
    let n = nodes.len();
    if let Some(k) = nodes.iter().position(|&x| x == u) {
        let mut w = vec![0.0; n];
        w[k] = 1.0;
        return w;
    }
    let raw: Vec<f64> = (0..n)
        .map(|k| {
            let s = ((2 * k + 1) as f64 * PI / (2 * n) as f64).sin();
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            sign * s / (u - nodes[k])
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}
