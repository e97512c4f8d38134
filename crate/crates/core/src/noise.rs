//! Multi-shot visibility under Gaussian shot-to-shot fluctuations, finite-sample statistics and
//! error bars.

use crate::error::FitError;
use crate::fringe::FringePattern;
use crate::rng::shot_rng;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Fit,
    Fft,
    Analytic,
    Overlap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisibilityEstimate {
    pub value: f64,
    pub uncertainty: f64,
    pub method: Method,
    pub samples: usize,
}

/// RMS shot-to-shot fluctuations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct FluctuationSpec {
    pub phase_rms: f64,
    /// Fringe wavevector jitter, 1/m.
    pub k_rms: f64,
    /// Initial-position jitter, m.
    pub pos_rms: f64,
    /// Relative splitting-current jitter δI/I.
    pub rel_current_rms: f64,
    /// Growth rate of the differential wavevector with splitting time, 1/(m·s).
    pub kappa: f64,
    /// Distance of the packet from the quadrupole center, m.
    pub z_offset: f64,
}

impl FluctuationSpec {
    pub fn is_valid(&self) -> bool {
        [self.phase_rms, self.k_rms, self.pos_rms, self.rel_current_rms, self.kappa, self.z_offset]
            .iter()
            .all(|v| *v >= 0.0 && v.is_finite())
    }

    /// σ̄ = √(σ² + ⟨δz²⟩).
    pub fn effective_width(&self, sigma_z: f64) -> f64 {
        sigma_z.hypot(self.pos_rms)
    }
}

/// Whether the phase and wavevector fluctuations are driven by the same source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    #[default]
    Correlated,
    Independent,
}

/// Multi-shot visibility of Gaussian packets with Gaussian phase and wavevector jitter.
pub fn analytic_visibility(spec: &FluctuationSpec, sigma_z: f64, coupling: Coupling) -> f64 {
    let sb = spec.effective_width(sigma_z);
    let q = 1.0 + (sb * spec.k_rms).powi(2);
    let dphi2 = spec.phase_rms * spec.phase_rms;
    match coupling {
        Coupling::Correlated => (-0.5 * dphi2 / q).exp() / q.sqrt(),
        Coupling::Independent => (-0.5 * dphi2).exp() / q.sqrt(),
    }
}

/// Visibility after splitting time `t` when a relative current jitter η drives δk = ηκT and a
/// correlated phase δφ = κ z0 η T.
pub fn visibility_vs_splittime(t: f64, spec: &FluctuationSpec, sigma_z: f64) -> f64 {
    let dk = spec.rel_current_rms * spec.kappa * t;
    let s = FluctuationSpec { k_rms: dk, phase_rms: dk * spec.z_offset, ..*spec };
    analytic_visibility(&s, sigma_z, Coupling::Correlated)
}

/// N → ∞ multi-shot visibility with mean packet position `z_mean` and fringe pivot `z_quad`.
pub fn extended_multishot(z_mean: f64, z_quad: f64, sigma_bar: f64, k_rms: f64, phase_rms: f64) -> f64 {
    let q = 1.0 + (sigma_bar * k_rms).powi(2);
    (-0.5 * phase_rms * phase_rms).exp() / q.sqrt() * (-0.5 * ((z_mean - z_quad) * k_rms).powi(2) / q).exp()
}

/// Standard error of a visibility estimated from `n` shots: √((1 − v²)/n).
pub fn finite_sample_std(v_mean: f64, n: usize) -> f64 {
    ((1.0 - v_mean * v_mean).max(0.0) / n as f64).sqrt()
}

/// Monte-Carlo counterpart of [`finite_sample_std`]: `trials` ensembles of `n` unit phasors whose
/// mean resultant length is `v` (uniform phases for v = 0, Gaussian otherwise). Returns the RMS
/// deviation of the estimated visibility |⟨e^{iφ}⟩| from `v`.
pub fn finite_sample_std_mc(v: f64, n: usize, trials: usize, seed: u64) -> f64 {
    let width = if v > 0.0 { (-2.0 * v.ln()).sqrt() } else { f64::INFINITY };
    let sum_sq: f64 = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = shot_rng(seed, t as u64);
            let mut acc = Complex64::new(0.0, 0.0);
            for _ in 0..n {
                let phi = if width.is_finite() {
                    width * rng.sample::<f64, _>(StandardNormal)
                } else {
                    rng.random_range(-PI..PI)
                };
                acc += Complex64::from_polar(1.0, phi);
            }
            (acc / n as f64).norm_sqr()
        })
        .sum();
    (sum_sq / trials as f64 - v * v).max(0.0).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorBar {
    pub value: f64,
    /// V_N was below 1e-6 and the V → 0 limit of the finite-sample term was returned.
    pub flagged: bool,
}

/// Uncertainty of V_N = V_a/⟨V_s⟩ from the multi-shot fit error, the single-shot scatter and the
/// finite ensemble size.
pub fn error_bar(v_norm: f64, fit_err_multishot: f64, singleshot_std: f64, singleshot_mean: f64, n: usize) -> ErrorBar {
    let nf = n.max(1) as f64;
    if v_norm < 1e-6 {
        return ErrorBar { value: (1.0 / (2.0 * nf)).sqrt(), flagged: true };
    }
    let v_a = v_norm * singleshot_mean;
    let t1 = if v_a > 0.0 { (fit_err_multishot / v_a).powi(2) } else { 0.0 };
    let t2 = if singleshot_mean > 0.0 { (singleshot_std / singleshot_mean).powi(2) / nf } else { 0.0 };
    let t3 = ((1.0 - v_norm * v_norm) / v_norm).powi(2) / (2.0 * nf);
    ErrorBar { value: v_norm * (t1 + t2 + t3).sqrt(), flagged: false }
}

/// Pointwise (weighted) mean of patterns sharing a grid.
pub fn synthesize_multishot(patterns: &[FringePattern], weights: Option<&[f64]>) -> Result<FringePattern, FitError> {
    let first = patterns.first().ok_or(FitError::TooFewPoints { need: 1, got: 0 })?;
    if patterns.iter().any(|p| !p.same_grid(first)) {
        return Err(FitError::GridMismatch);
    }
    if let Some(w) = weights {
        if w.len() != patterns.len() {
            return Err(FitError::Input(format!("{} weights for {} patterns", w.len(), patterns.len())));
        }
        if w.iter().any(|v| *v < 0.0 || !v.is_finite()) {
            return Err(FitError::Input("weights must be finite and non-negative".into()));
        }
    }
    let total: f64 = weights.map_or(patterns.len() as f64, |w| w.iter().sum());
    if total <= 0.0 {
        return Err(FitError::Input("weights sum to zero".into()));
    }
    let mut values = vec![0.0; first.len()];
    for (i, p) in patterns.iter().enumerate() {
        let w = weights.map_or(1.0, |w| w[i]);
        for (acc, v) in values.iter_mut().zip(&p.values) {
            *acc += w * v;
        }
    }
    for v in &mut values {
        *v /= total;
    }
    Ok(FringePattern { values, shot: None, ..first.clone() })
}

/// Weights that turn shots taken at `currents` into a Gaussian phase distribution of width
/// κ·z0·T1·η, given that the phase is linear in the current with slope κ·z0·T1/I_ref.
pub fn gaussian_phase_weights(currents: &[f64], reference_current: f64, kappa: f64, z_offset: f64, t_split: f64, eta: f64) -> Vec<f64> {
    let slope = kappa * z_offset * t_split / reference_current;
    let width = kappa * z_offset * t_split * eta;
    currents
        .iter()
        .map(|i| {
            let phi = slope * (i - reference_current);
            if width > 0.0 { (-0.5 * (phi / width).powi(2)).exp() } else if phi == 0.0 { 1.0 } else { 0.0 }
        })
        .collect()
}

/// Gaussian packets with cos fringes whose wavevector, phase and envelope position jitter from
/// shot to shot: n(z) = exp(−(z − z_i)²/2σ²)·[1 + cos((k0 + δk)(z − z_quad) + φ0 + δφ)].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticEnsemble {
    pub sigma: f64,
    pub z_mean: f64,
    pub z_quad: f64,
    pub k0: f64,
    pub phase0: f64,
    pub fluct: FluctuationSpec,
    pub coupling: Coupling,
    pub grid_min: f64,
    pub grid_dz: f64,
    pub grid_n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultishotSample {
    pub pattern: FringePattern,
    /// FFT visibility of the averaged pattern.
    pub visibility: f64,
    /// Standard error of that visibility from the scatter of the per-shot Fourier amplitudes.
    pub std_error: f64,
}

impl SyntheticEnsemble {
    fn shot(&self, seed: u64, i: usize) -> FringePattern {
        let mut rng = shot_rng(seed, i as u64);
        let unit = Normal::new(0.0, 1.0).unwrap();
        let dk = self.fluct.k_rms * unit.sample(&mut rng);
        let dphi = match self.coupling {
            Coupling::Correlated => self.fluct.z_offset * dk,
            Coupling::Independent => self.fluct.phase_rms * unit.sample(&mut rng),
        };
        let zc = self.z_mean + self.fluct.pos_rms * unit.sample(&mut rng);
        let mut p = FringePattern::from_fn(self.grid_min, self.grid_dz, self.grid_n, |z| {
            (-(z - zc).powi(2) / (2.0 * self.sigma * self.sigma)).exp()
                * (1.0 + ((self.k0 + dk) * (z - self.z_quad) + self.phase0 + dphi).cos())
        });
        p.shot = Some(i);
        p
    }

    pub fn patterns(&self, shots: usize, seed: u64) -> Vec<FringePattern> {
        (0..shots).into_par_iter().map(|i| self.shot(seed, i)).collect()
    }

    pub fn run(&self, shots: usize, seed: u64) -> Result<MultishotSample, FitError> {
        let patterns = self.patterns(shots, seed);
        let pattern = synthesize_multishot(&patterns, None)?;
        let visibility = crate::fringe::fft_visibility(&pattern)?;
        // per-shot complex amplitude at the nominal wavevector
        let zr = pattern.z_center();
        let amps: Vec<Complex64> = patterns
            .par_iter()
            .map(|p| {
                let (mut a0, mut ak) = (0.0, Complex64::new(0.0, 0.0));
                for (j, v) in p.values.iter().enumerate() {
                    let z = p.z(j) - zr;
                    a0 += v;
                    ak += Complex64::from_polar(*v, -self.k0 * z);
                }
                2.0 * ak / a0
            })
            .collect();
        let n = amps.len() as f64;
        let mean = amps.iter().sum::<Complex64>() / n;
        let var = amps.iter().map(|a| (a - mean).norm_sqr()).sum::<f64>() / (n - 1.0).max(1.0);
        Ok(MultishotSample { pattern, visibility, std_error: (var / n).sqrt() })
    }

    /// Analytic N → ∞ value for this ensemble.
    pub fn expected(&self) -> f64 {
        let sb = self.fluct.effective_width(self.sigma);
        match self.coupling {
            Coupling::Correlated => extended_multishot(self.z_mean, self.z_quad - self.fluct.z_offset, sb, self.fluct.k_rms, 0.0),
            Coupling::Independent => extended_multishot(self.z_mean, self.z_quad, sb, self.fluct.k_rms, self.fluct.phase_rms),
        }
    }
}
