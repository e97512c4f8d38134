//! Semiclassical wavepacket propagation: Newtonian centre-of-mass motion in the chip field plus
//! gravity, per-axis scale factors, action phase, and Gaussian overlap integrals.
//!
//! Potentials are taken in the frame rotating with the spin resonance at the bias field, i.e.
//! V = mF gF μB (|B| − |B_bias|) − m g z, so that a sequence without gradients accumulates no
//! differential phase.

use crate::constants::PhysicalConstants;
use crate::error::DynamicsError;
use crate::field::{magnitude_derivs, ChipField};
use crate::fringe::FringePattern;
use crate::hd::{BecParams, TF_GAUSSIAN_WIDTH};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScaleMode {
    /// Scaling equations of an interacting condensate in the Thomas-Fermi limit.
    #[default]
    ThomasFermi,
    /// Scaling of a non-interacting Gaussian, including the kinetic (dispersion) term.
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WavepacketState {
    pub position: [f64; 3],
    pub momentum: [f64; 3],
    pub scale: [f64; 3],
    pub scale_rate: [f64; 3],
    /// Accumulated action phase S/ħ (plus the Gouy phase in Gaussian mode), rad.
    pub phase: f64,
    pub spin_mf: i32,
    /// Gaussian-equivalent widths at the start, m.
    pub sigma0: [f64; 3],
    pub time: f64,
}

impl WavepacketState {
    pub fn at_rest(position: [f64; 3], spin_mf: i32, sigma0: [f64; 3]) -> Self {
        Self { position, momentum: [0.0; 3], scale: [1.0; 3], scale_rate: [0.0; 3], phase: 0.0, spin_mf, sigma0, time: 0.0 }
    }

    /// Condensate released from the trap of `bec`: Gaussian widths are 0.41 of the TF half-lengths.
    pub fn from_bec(position: [f64; 3], spin_mf: i32, bec: &BecParams) -> Option<Self> {
        let mu = bec.chem_potential?;
        let m = PhysicalConstants::default().mass_rb87;
        let sigma0 = bec.trap_freqs.map(|w| TF_GAUSSIAN_WIDTH * (2.0 * mu / m).sqrt() / w);
        Some(Self::at_rest(position, spin_mf, sigma0))
    }

    pub fn widths(&self) -> [f64; 3] {
        std::array::from_fn(|j| self.sigma0[j] * self.scale[j])
    }

    /// Quadratic phase coefficient (m/2ħ)·λ̇/λ per axis, rad/m².
    pub fn phase_curvature(&self, consts: &PhysicalConstants) -> [f64; 3] {
        std::array::from_fn(|j| consts.mass_rb87 / (2.0 * consts.hbar) * self.scale_rate[j] / self.scale[j])
    }
}

/// Integrates wavepackets through pulses of a gated chip field (`bias + gate·chip`).
pub struct Propagator<'a> {
    pub field: &'a dyn ChipField,
    pub consts: PhysicalConstants,
    pub mode: ScaleMode,
    /// Trap frequencies before release, rad/s; drive the Thomas-Fermi scaling.
    pub trap_omega: [f64; 3],
    pub gravity: bool,
    /// Step during pulses (≤ 1e-7 s).
    pub dt_pulse: f64,
    /// Step for the scale factors during field-free intervals.
    pub dt_free: f64,
    /// Spacing of recorded trajectory rows.
    pub trace_stride: f64,
}

struct Local {
    accel: [f64; 3],
    omega_sq: [f64; 3],
    potential: f64,
}

impl<'a> Propagator<'a> {
    pub fn new(field: &'a dyn ChipField, mode: ScaleMode, trap_omega: [f64; 3]) -> Self {
        Self { field, consts: PhysicalConstants::default(), mode, trap_omega, gravity: true, dt_pulse: 1e-8, dt_free: 1e-6, trace_stride: 1e-6 }
    }

    fn g(&self) -> f64 {
        if self.gravity {
            self.consts.g_gravity
        } else {
            0.0
        }
    }

    fn bias_magnitude(&self) -> f64 {
        let b = self.field.bias();
        (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt()
    }

    fn local(&self, r: [f64; 3], m_f: i32, gate: f64) -> Result<Local, DynamicsError> {
        let c = &self.consts;
        let d = magnitude_derivs(self.field, r, gate)?;
        let k = m_f as f64 * c.lande_gf * c.mu_bohr;
        let m = c.mass_rb87;
        let mut accel: [f64; 3] = std::array::from_fn(|j| -k * d.grad[j] / m);
        accel[2] += self.g();
        Ok(Local {
            accel,
            omega_sq: std::array::from_fn(|j| k * d.hess_diag[j] / m),
            potential: k * (d.value - self.bias_magnitude()) - m * self.g() * r[2],
        })
    }

    /// Total energy in the rotating frame at a fixed gate.
    pub fn energy(&self, s: &WavepacketState, gate: f64) -> Result<f64, DynamicsError> {
        let p2: f64 = s.momentum.iter().map(|p| p * p).sum();
        Ok(p2 / (2.0 * self.consts.mass_rb87) + self.local(s.position, s.spin_mf, gate)?.potential)
    }

    fn scale_accel(&self, s: &WavepacketState, lam: [f64; 3], omega_sq: [f64; 3]) -> [f64; 3] {
        match self.mode {
            ScaleMode::ThomasFermi => {
                let prod = lam[0] * lam[1] * lam[2];
                std::array::from_fn(|j| self.trap_omega[j].powi(2) / (lam[j] * prod) - omega_sq[j] * lam[j])
            }
            ScaleMode::Gaussian => std::array::from_fn(|j| {
                let w = self.consts.hbar / (2.0 * self.consts.mass_rb87 * s.sigma0[j] * s.sigma0[j]);
                w * w / lam[j].powi(3) - omega_sq[j] * lam[j]
            }),
        }
    }

    /// Gouy phase rate (Gaussian mode only).
    fn gouy_rate(&self, s: &WavepacketState, lam: [f64; 3]) -> f64 {
        match self.mode {
            ScaleMode::ThomasFermi => 0.0,
            ScaleMode::Gaussian => -(0..3)
                .map(|j| self.consts.hbar / (4.0 * self.consts.mass_rb87 * (s.sigma0[j] * lam[j]).powi(2)))
                .sum::<f64>(),
        }
    }

    /// RK4 over one step with ω² linear in time between `w0` and `w1`.
    fn step_scales(&self, s: &mut WavepacketState, dt: f64, w0: [f64; 3], w1: [f64; 3]) {
        let wm: [f64; 3] = std::array::from_fn(|j| 0.5 * (w0[j] + w1[j]));
        let (l0, v0) = (s.scale, s.scale_rate);
        let add = |a: [f64; 3], b: [f64; 3], h: f64| -> [f64; 3] { std::array::from_fn(|j| a[j] + h * b[j]) };
        let k1v = self.scale_accel(s, l0, w0);
        let k1l = v0;
        let k2v = self.scale_accel(s, add(l0, k1l, 0.5 * dt), wm);
        let k2l = add(v0, k1v, 0.5 * dt);
        let k3v = self.scale_accel(s, add(l0, k2l, 0.5 * dt), wm);
        let k3l = add(v0, k2v, 0.5 * dt);
        let k4v = self.scale_accel(s, add(l0, k3l, dt), w1);
        let k4l = add(v0, k3v, dt);
        let g0 = self.gouy_rate(s, l0);
        for j in 0..3 {
            s.scale[j] = l0[j] + dt / 6.0 * (k1l[j] + 2.0 * k2l[j] + 2.0 * k3l[j] + k4l[j]);
            s.scale_rate[j] = v0[j] + dt / 6.0 * (k1v[j] + 2.0 * k2v[j] + 2.0 * k3v[j] + k4v[j]);
        }
        s.phase += 0.5 * dt * (g0 + self.gouy_rate(s, s.scale));
    }

    fn check(&self, s: &WavepacketState) -> Result<(), DynamicsError> {
        for (axis, &value) in s.scale.iter().enumerate() {
            if !(value > 1e-4 && value < 1e4) {
                return Err(DynamicsError::Unstable { axis, value, time: s.time });
            }
        }
        Ok(())
    }

    /// A constant-gate interval integrated with velocity Verlet (centre) and RK4 (scales) at step `dt`.
    pub fn propagate(&self, state: &WavepacketState, gate: f64, dt: f64, duration: f64) -> Result<WavepacketState, DynamicsError> {
        let mut s = *state;
        if duration <= 0.0 {
            return Ok(s);
        }
        if gate != 0.0 && dt > 1e-7 {
            return Err(DynamicsError::StepTooLarge(dt));
        }
        let n = (duration / dt).ceil().max(1.0) as usize;
        let h = duration / n as f64;
        let m = self.consts.mass_rb87;
        let mut here = self.local(s.position, s.spin_mf, gate)?;
        for _ in 0..n {
            let p2: f64 = s.momentum.iter().map(|p| p * p).sum();
            let lag0 = p2 / (2.0 * m) - here.potential;
            let mut v: [f64; 3] = std::array::from_fn(|j| s.momentum[j] / m + 0.5 * h * here.accel[j]);
            for j in 0..3 {
                s.position[j] += h * v[j];
            }
            let next = self.local(s.position, s.spin_mf, gate)?;
            for j in 0..3 {
                v[j] += 0.5 * h * next.accel[j];
                s.momentum[j] = m * v[j];
            }
            let p2: f64 = s.momentum.iter().map(|p| p * p).sum();
            let lag1 = p2 / (2.0 * m) - next.potential;
            s.phase += 0.5 * h * (lag0 + lag1) / self.consts.hbar;
            self.step_scales(&mut s, h, here.omega_sq, next.omega_sq);
            s.time += h;
            self.check(&s)?;
            here = next;
        }
        Ok(s)
    }

    /// Field-free interval: exact ballistic centre motion and action, RK4 scales at `dt_free`.
    pub fn free(&self, state: &WavepacketState, duration: f64) -> Result<WavepacketState, DynamicsError> {
        let mut s = *state;
        if duration <= 0.0 {
            return Ok(s);
        }
        let m = self.consts.mass_rb87;
        let g = self.g();
        let (z0, pz0) = (s.position[2], s.momentum[2]);
        // the Lagrangian p²/2m + m g z is quadratic in t, so Simpson's rule is exact
        let lag = |t: f64| {
            let pz = pz0 + m * g * t;
            let z = z0 + pz0 / m * t + 0.5 * g * t * t;
            let pt2 = s.momentum[0].powi(2) + s.momentum[1].powi(2);
            (pt2 + pz * pz) / (2.0 * m) + m * g * z
        };
        let t = duration;
        s.phase += t / 6.0 * (lag(0.0) + 4.0 * lag(0.5 * t) + lag(t)) / self.consts.hbar;
        for j in 0..3 {
            s.position[j] += s.momentum[j] / m * t;
        }
        s.position[2] += 0.5 * g * t * t;
        s.momentum[2] += m * g * t;
        let n = (t / self.dt_free).ceil().max(1.0) as usize;
        let h = t / n as f64;
        for _ in 0..n {
            self.step_scales(&mut s, h, [0.0; 3], [0.0; 3]);
            s.time += h;
            self.check(&s)?;
        }
        Ok(s)
    }

    /// A pulse at `dt_pulse`, or a free interval when the gate is zero.
    pub fn segment(&self, state: &WavepacketState, gate: f64, duration: f64) -> Result<WavepacketState, DynamicsError> {
        if gate == 0.0 {
            self.free(state, duration)
        } else {
            self.propagate(state, gate, self.dt_pulse, duration)
        }
    }

    /// Runs a pair of branches through a step list, optionally recording a trajectory row every
    /// `trace_stride` and at the end of each step. Recording splits segments at the stride, which
    /// can change pulse results in the last digits.
    pub fn run_pair(&self, start: [WavepacketState; 2], steps: &[Step], mut trace: Option<&mut Vec<TrajectoryRow>>) -> Result<[WavepacketState; 2], DynamicsError> {
        let [mut a, mut b] = start;
        if let Some(t) = trace.as_deref_mut() {
            t.push(TrajectoryRow::from_pair(&a, &b));
        }
        for step in steps {
            match *step {
                Step::Segment { gate, duration } => match trace.as_deref_mut() {
                    Some(t) if self.trace_stride > 0.0 && duration > self.trace_stride => {
                        let chunks = (duration / self.trace_stride).ceil() as usize;
                        let h = duration / chunks as f64;
                        for c in 0..chunks {
                            a = self.segment(&a, gate, h)?;
                            b = self.segment(&b, gate, h)?;
                            if c + 1 < chunks {
                                t.push(TrajectoryRow::from_pair(&a, &b));
                            }
                        }
                    }
                    _ => {
                        a = self.segment(&a, gate, duration)?;
                        b = self.segment(&b, gate, duration)?;
                    }
                },
                Step::SetSpins(spins) => {
                    a.spin_mf = spins[0];
                    b.spin_mf = spins[1];
                }
                Step::Flip => std::mem::swap(&mut a.spin_mf, &mut b.spin_mf),
            }
            if let Some(t) = trace.as_deref_mut() {
                t.push(TrajectoryRow::from_pair(&a, &b));
            }
        }
        Ok([a, b])
    }
}

/// One element of a pulse sequence acting on both branches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Step {
    /// Chip gate held for `duration`; 0 = off, ±1 = nominal current in either direction, other
    /// values scale the current.
    Segment { gate: f64, duration: f64 },
    /// Instantaneous spin assignment (for example after a π/2 pulse both outputs of interest).
    SetSpins([i32; 2]),
    /// Ideal π pulse: the branches exchange spin states.
    Flip,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectoryRow {
    pub t: f64,
    pub z1: f64,
    pub z2: f64,
    pub p1: f64,
    pub p2: f64,
    pub lambda_z1: f64,
    pub lambda_z2: f64,
    pub phase_diff: f64,
}

impl TrajectoryRow {
    fn from_pair(a: &WavepacketState, b: &WavepacketState) -> Self {
        Self {
            t: a.time,
            z1: a.position[2],
            z2: b.position[2],
            p1: a.momentum[2],
            p2: b.momentum[2],
            lambda_z1: a.scale[2],
            lambda_z2: b.scale[2],
            phase_diff: b.phase - a.phase,
        }
    }
}

/// Parameters of the overlap of two scaled Gaussian packets along one axis. Deltas are branch 1
/// minus branch 2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapInputs {
    pub delta_p: f64,
    pub delta_z: f64,
    /// Common width σ_z·√(λ1 λ2).
    pub sigma: f64,
    /// Mean phase curvature (m/ħ)·½(λ̇1/λ1 + λ̇2/λ2), 1/m².
    pub chirp_xi: f64,
    pub scales: (f64, f64),
    pub rates: (f64, f64),
    /// Initial width the scale factors refer to.
    pub sigma_z: f64,
}

impl OverlapInputs {
    pub fn new(sigma_z: f64, scales: (f64, f64), rates: (f64, f64), delta_z: f64, delta_p: f64) -> Self {
        let c = PhysicalConstants::default();
        Self {
            delta_p,
            delta_z,
            sigma: sigma_z * (scales.0 * scales.1).sqrt(),
            chirp_xi: c.mass_rb87 / c.hbar * 0.5 * (rates.0 / scales.0 + rates.1 / scales.1),
            scales,
            rates,
            sigma_z,
        }
    }
}

/// One-axis Gaussian packet for overlap integrals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianMode {
    pub center: f64,
    /// Wavevector P/ħ.
    pub k: f64,
    /// Density standard deviation.
    pub width: f64,
    /// Quadratic phase coefficient, rad/m².
    pub curvature: f64,
}

impl GaussianMode {
    pub fn amplitude(&self, z: f64) -> Complex64 {
        let u = z - self.center;
        let norm = (2.0 * PI * self.width * self.width).powf(-0.25);
        Complex64::from_polar(norm * (-(u * u) / (4.0 * self.width * self.width)).exp(), self.k * u + self.curvature * u * u)
    }
}

/// ∫ ψ1* ψ2 dz in closed form.
pub fn gaussian_overlap(a: &GaussianMode, b: &GaussianMode) -> Complex64 {
    // shift the origin to the midpoint to keep the exponent terms small
    let mid = 0.5 * (a.center + b.center);
    let (z1, z2) = (a.center - mid, b.center - mid);
    let alpha = |g: &GaussianMode| Complex64::new(1.0 / (4.0 * g.width * g.width), -g.curvature);
    let a1 = alpha(a).conj();
    let a2 = alpha(b);
    let i = Complex64::i();
    let big_a = a1 + a2;
    let big_b = 2.0 * a1 * z1 + 2.0 * a2 * z2 + i * (b.k - a.k);
    let big_c = -a1 * z1 * z1 - a2 * z2 * z2 + i * (a.k * z1 - b.k * z2);
    let norm = (2.0 * PI * a.width * a.width).powf(-0.25) * (2.0 * PI * b.width * b.width).powf(-0.25);
    norm * (PI / big_a).sqrt() * (big_b * big_b / (4.0 * big_a) + big_c).exp()
}

/// |overlap| of two packets of the form ψ0((z−Z)/λ)/√λ · exp(iP(z−Z)/ħ + i m λ̇ (z−Z)²/2ħλ).
pub fn overlap_general(inputs: &OverlapInputs) -> f64 {
    let c = PhysicalConstants::default();
    let mode = |lam: f64, rate: f64, sign: f64| GaussianMode {
        center: sign * 0.5 * inputs.delta_z,
        k: sign * 0.5 * inputs.delta_p / c.hbar,
        width: inputs.sigma_z * lam,
        curvature: c.mass_rb87 / (2.0 * c.hbar) * rate / lam,
    };
    let a = mode(inputs.scales.0, inputs.rates.0, 1.0);
    let b = mode(inputs.scales.1, inputs.rates.1, -1.0);
    gaussian_overlap(&a, &b).norm().min(1.0)
}

/// Equal-size packets: propagate back (or forward) to the waist and apply the minimal-packet law.
pub fn overlap_projected(sigma: f64, chirp_xi: f64, delta_z: f64, delta_p: f64) -> f64 {
    let c = PhysicalConstants::default();
    let s4 = sigma.powi(4);
    let denom = 1.0 + 4.0 * chirp_xi * chirp_xi * s4;
    let sigma0 = sigma / denom.sqrt();
    let t = 4.0 * c.mass_rb87 / c.hbar * s4 * chirp_xi / denom;
    let dz0 = delta_z - t * delta_p / c.mass_rb87;
    (-(sigma0 * delta_p / c.hbar).powi(2) / 2.0).exp() * (-dz0 * dz0 / (8.0 * sigma0 * sigma0)).exp()
}

/// The packet's profile along one axis.
pub fn axis_mode(s: &WavepacketState, axis: usize, consts: &PhysicalConstants) -> GaussianMode {
    GaussianMode {
        center: s.position[axis],
        k: s.momentum[axis] / consts.hbar,
        width: s.sigma0[axis] * s.scale[axis],
        curvature: s.phase_curvature(consts)[axis],
    }
}

/// Full complex overlap ⟨a|b⟩ over the three axes, including the action phases.
pub fn state_overlap(a: &WavepacketState, b: &WavepacketState) -> Complex64 {
    let c = PhysicalConstants::default();
    let spatial: Complex64 = (0..3).map(|j| gaussian_overlap(&axis_mode(a, j, &c), &axis_mode(b, j, &c))).product();
    spatial * Complex64::from_polar(1.0, b.phase - a.phase)
}

/// Density ½|ψa + ψb|² along z at the packets' current time, with the transverse overlap
/// folded into the interference term. `n` samples over `[z_min, z_max]`.
pub fn fringe_density(a: &WavepacketState, b: &WavepacketState, z_min: f64, z_max: f64, n: usize) -> FringePattern {
    let c = PhysicalConstants::default();
    let transverse: Complex64 = (0..2).map(|j| gaussian_overlap(&axis_mode(a, j, &c), &axis_mode(b, j, &c))).product();
    let (ma, mb) = (axis_mode(a, 2, &c), axis_mode(b, 2, &c));
    let rel = Complex64::from_polar(1.0, b.phase - a.phase) * transverse;
    let dz = (z_max - z_min) / (n - 1) as f64;
    let values = (0..n)
        .map(|i| {
            let z = z_min + i as f64 * dz;
            let (pa, pb) = (ma.amplitude(z), mb.amplitude(z));
            0.5 * (pa.norm_sqr() + pb.norm_sqr() + 2.0 * (pa.conj() * pb * rel).re)
        })
        .collect();
    FringePattern { z_min, dz, values, time: a.time, shot: None }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{Chip, ChipGeometry, HarmonicField, UniformGradient, WireModel};
    use crate::phase_space;
    use crate::quadrature::{gauss_legendre, integrate};
    use proptest::prelude::*;

    fn consts() -> PhysicalConstants {
        PhysicalConstants::default()
    }

    const BIAS: f64 = 36.7e-4;

    #[test]
    fn free_particle_limits() {
        let field = UniformGradient { gradient: 0.0, z_ref: 0.0, bias: BIAS };
        let mut prop = Propagator::new(&field, ScaleMode::Gaussian, [0.0; 3]);
        prop.gravity = false;
        let c = consts();
        let mut s = WavepacketState::at_rest([0.0, 0.0, 90e-6], 2, [1e-6; 3]);
        s.momentum = [0.0, 0.0, 1e-28];
        let t = 2e-3;
        let out = prop.free(&s, t).unwrap();
        assert!((out.position[2] - (90e-6 + 1e-28 * t / c.mass_rb87)).abs() < 1e-15);
        let w = c.hbar / (2.0 * c.mass_rb87 * 1e-12);
        let gouy = -1.5 * (w * t).atan();
        let kinetic = 1e-56 * t / (2.0 * c.mass_rb87 * c.hbar);
        assert!((out.phase - kinetic - gouy).abs() < 1e-6, "{} {}", out.phase, kinetic + gouy);
        assert!((out.scale[2] - (1.0 + (w * t).powi(2)).sqrt()).abs() < 1e-9);
        // the pulse integrator agrees with the closed form when the gate is on but the field is flat
        let pulsed = prop.propagate(&s, 1.0, 1e-8, 1e-4).unwrap();
        let ballistic = prop.free(&s, 1e-4).unwrap();
        assert!((pulsed.position[2] - ballistic.position[2]).abs() < 1e-15);
        assert!((pulsed.phase - ballistic.phase).abs() < 1e-7);
    }

    #[test]
    fn gravity_free_fall_action() {
        let field = UniformGradient { gradient: 0.0, z_ref: 0.0, bias: BIAS };
        let prop = Propagator::new(&field, ScaleMode::ThomasFermi, [2.0 * PI * 126.0; 3]);
        let s = WavepacketState::at_rest([0.0, 0.0, 90e-6], 2, [1e-6; 3]);
        let a = prop.free(&s, 1e-3).unwrap();
        let b = prop.propagate(&s, 1.0, 1e-7, 1e-3).unwrap();
        assert!((a.position[2] - (90e-6 + 0.5 * 9.80665 * 1e-6)).abs() < 1e-15);
        assert!((a.phase - b.phase).abs() < 1e-7 * a.phase.abs(), "{} {}", a.phase, b.phase);
    }

    #[test]
    fn harmonic_orbit_period() {
        let c = consts();
        let w = 2.0 * PI * 850.0;
        let field = HarmonicField::for_frequency(w, 2, 100e-6, BIAS, &c);
        let mut prop = Propagator::new(&field, ScaleMode::Gaussian, [0.0; 3]);
        prop.gravity = false;
        let s = WavepacketState::at_rest([0.0, 0.0, 103e-6], 2, [1e-6; 3]);
        let period = 2.0 * PI / w;
        let half = prop.propagate(&s, 1.0, 1e-8, 0.5 * period).unwrap();
        assert!((half.position[2] - 97e-6).abs() < 1e-3 * 3e-6);
        let full = prop.propagate(&s, 1.0, 1e-8, period).unwrap();
        assert!((full.position[2] - 103e-6).abs() < 1e-3 * 3e-6);
        assert!(full.momentum[2].abs() < 1e-3 * c.mass_rb87 * w * 3e-6);
    }

    #[test]
    fn energy_conserved_in_static_chip_field() {
        let chip = Chip::new(ChipGeometry::default(), WireModel::Strip).unwrap();
        let prop = Propagator::new(&chip, ScaleMode::ThomasFermi, [2.0 * PI * 126.0; 3]);
        let s = WavepacketState::at_rest([0.0, 1e-6, 94e-6], 2, [1.6e-6, 1.2e-6, 1.2e-6]);
        let e0 = prop.energy(&s, 1.0).unwrap();
        let out = prop.propagate(&s, 1.0, 1e-8, 1e-3).unwrap();
        let e1 = prop.energy(&out, 1.0).unwrap();
        let scale = e0.abs().max(1e-30);
        assert!((e1 - e0).abs() / scale < 1e-6, "{}", (e1 - e0) / scale);
    }

    #[test]
    fn static_trap_keeps_tf_scale_stationary() {
        let c = consts();
        let w = 2.0 * PI * 500.0;
        let field = HarmonicField::for_frequency(w, 2, 100e-6, BIAS, &c);
        let mut prop = Propagator::new(&field, ScaleMode::ThomasFermi, [0.0, 0.0, w]);
        prop.gravity = false;
        let s = WavepacketState::at_rest([0.0, 0.0, 100e-6], 2, [1e-6; 3]);
        let out = prop.propagate(&s, 1.0, 1e-8, 2e-4).unwrap();
        assert!((out.scale[2] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn tf_free_expansion_asymptote() {
        let w = 2.0 * PI * 126.0;
        let field = UniformGradient { gradient: 0.0, z_ref: 0.0, bias: BIAS };
        let prop = Propagator::new(&field, ScaleMode::ThomasFermi, [w, w, w]);
        let s = WavepacketState::at_rest([0.0, 0.0, 90e-6], 2, [1e-6; 3]);
        let out = prop.free(&s, 0.2).unwrap();
        // isotropic: ½λ̇² + ω²/(3λ³) is conserved, so λ̇ → ω√(2/3)
        let iso = (out.scale_rate[2] / w - (2.0f64 / 3.0).sqrt()).abs();
        assert!(iso < 0.01, "{}", out.scale_rate[2] / w);
        // elongated trap: the tight axis follows √(1 + ω²t²) closely
        let prop = Propagator::new(&field, ScaleMode::ThomasFermi, [2.0 * PI * 5.0, w, w]);
        let t = 4e-3;
        let out = prop.free(&s, t).unwrap();
        let tf = crate::hd::tf_expansion(1.0, w, t);
        assert!((out.scale[2] / tf - 1.0).abs() < 0.05, "{} {}", out.scale[2], tf);
    }

    #[test]
    fn gaussian_mode_free_spreading_law() {
        let field = UniformGradient { gradient: 0.0, z_ref: 0.0, bias: BIAS };
        let mut prop = Propagator::new(&field, ScaleMode::Gaussian, [0.0; 3]);
        prop.dt_free = 1e-5;
        let s0 = 0.3e-6;
        let s = WavepacketState::at_rest([0.0, 0.0, 90e-6], 2, [s0; 3]);
        let t = 5e-3;
        let out = prop.free(&s, t).unwrap();
        let c = consts();
        let law = s0 * (1.0 + (c.hbar * t / (2.0 * c.mass_rb87 * s0 * s0)).powi(2)).sqrt();
        assert!((out.widths()[2] / law - 1.0).abs() < 1e-3);
    }

    #[test]
    fn unstable_scale_reported() {
        let c = consts();
        let w = 2.0 * PI * 2e4;
        let field = HarmonicField::for_frequency(w, 2, 100e-6, BIAS, &c);
        let mut prop = Propagator::new(&field, ScaleMode::ThomasFermi, [0.0, 0.0, 1.0]);
        prop.gravity = false;
        let s = WavepacketState::at_rest([0.0, 0.0, 100e-6], 2, [1e-6; 3]);
        let err = prop.propagate(&s, 1.0, 1e-8, 1e-3).unwrap_err();
        assert!(matches!(err, DynamicsError::Unstable { axis: 2, .. }), "{err}");
        assert!(matches!(prop.propagate(&s, 1.0, 2e-7, 1e-6), Err(DynamicsError::StepTooLarge(_))));
    }

    #[test]
    fn overlap_identical_is_one() {
        let o = OverlapInputs::new(1e-6, (1.3, 1.3), (40.0, 40.0), 0.0, 0.0);
        assert!((overlap_general(&o) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn overlap_momentum_shift_matches_quadrature() {
        let c = consts();
        let sigma = 1e-6;
        let dp = 0.8 * c.hbar / sigma;
        let o = OverlapInputs::new(sigma, (1.0, 1.0), (0.0, 0.0), 0.0, dp);
        let expect = (-(sigma * dp / c.hbar).powi(2) / 2.0).exp();
        assert!((overlap_general(&o) - expect).abs() < 1e-12);
        // numeric oracle on a grid
        let a = GaussianMode { center: 0.0, k: 0.5 * dp / c.hbar, width: sigma, curvature: 0.0 };
        let b = GaussianMode { center: 0.0, k: -0.5 * dp / c.hbar, width: sigma, curvature: 0.0 };
        let rule = gauss_legendre(16);
        let re = integrate(|z| (a.amplitude(z).conj() * b.amplitude(z)).re, -12e-6, 12e-6, 200, &rule);
        let im = integrate(|z| (a.amplitude(z).conj() * b.amplitude(z)).im, -12e-6, 12e-6, 200, &rule);
        assert!((re.hypot(im) - expect).abs() < 1e-10);
    }

    #[test]
    fn general_overlap_matches_quadrature_unequal_scales() {
        let c = consts();
        let a = GaussianMode { center: 0.4e-6, k: 2e5, width: 1.3e-6, curvature: 3e10 };
        let b = GaussianMode { center: -0.3e-6, k: -1e5, width: 0.9e-6, curvature: -1e10 };
        let rule = gauss_legendre(16);
        let f = |z: f64| a.amplitude(z).conj() * b.amplitude(z);
        let re = integrate(|z| f(z).re, -15e-6, 15e-6, 400, &rule);
        let im = integrate(|z| f(z).im, -15e-6, 15e-6, 400, &rule);
        let o = gaussian_overlap(&a, &b);
        assert!((o.re - re).abs() < 1e-10 && (o.im - im).abs() < 1e-10, "{o} vs {re} {im}");
        let inputs = OverlapInputs::new(
            1.0e-6,
            (1.3, 0.9),
            (3e10 * 1.3 * 2.0 * c.hbar / c.mass_rb87, -1e10 * 0.9 * 2.0 * c.hbar / c.mass_rb87),
            0.7e-6,
            3e5 * c.hbar,
        );
        assert!((overlap_general(&inputs) - o.norm()).abs() < 1e-10);
    }

    #[test]
    fn overlap_invariant_under_shared_free_propagation() {
        let field = UniformGradient { gradient: 0.0, z_ref: 0.0, bias: BIAS };
        let prop = Propagator::new(&field, ScaleMode::Gaussian, [0.0; 3]);
        let mut a = WavepacketState::at_rest([0.0, 0.0, 90e-6], 2, [1.2e-6; 3]);
        let mut b = a;
        b.position[2] += 0.8e-6;
        b.momentum[2] += 0.5 * consts().hbar / 1.2e-6;
        a.scale_rate = [0.0, 0.0, 30.0];
        b.scale_rate = a.scale_rate;
        let o0 = state_overlap(&a, &b).norm();
        let (a5, b5) = (prop.free(&a, 5e-3).unwrap(), prop.free(&b, 5e-3).unwrap());
        let o5 = state_overlap(&a5, &b5).norm();
        assert!((o0 - o5).abs() < 1e-6, "{o0} {o5}");
    }

    #[test]
    fn paper_scale_momentum_precision() {
        let dp = 2.0 * PI * consts().hbar * 1e3;
        let v = overlap_projected(1e-6, 0.0, 0.0, dp);
        assert!((v - (1.0 - 2e-5)).abs() < 1e-6, "{v}");
    }

    #[test]
    fn projected_reduces_to_plain_product_at_zero_chirp() {
        let c = consts();
        let v = overlap_projected(1.1e-6, 0.0, 0.5e-6, 2e5 * c.hbar);
        let plain = (-(1.1e-6f64 * 2e5).powi(2) / 2.0).exp() * (-0.25e-12f64 / (8.0 * 1.21e-12)).exp();
        assert!((v - plain).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn projected_equals_general_for_equal_scales(
            sz in 0.3e-6..3e-6f64, lam in 0.2..20.0f64, rate in -2e3..2e3f64,
            dz in -3e-6..3e-6f64, dk in -3e6..3e6f64,
        ) {
            let c = consts();
            let o = OverlapInputs::new(sz, (lam, lam), (rate, rate), dz, dk * c.hbar);
            let g = overlap_general(&o);
            let p = overlap_projected(o.sigma, o.chirp_xi, dz, dk * c.hbar);
            prop_assert!((g - p).abs() < 1e-10, "{g} {p}");
            prop_assert!((0.0..=1.0).contains(&g));
        }

        #[test]
        fn overlap_bounded(
            l1 in 0.1..10.0f64, l2 in 0.1..10.0f64, r1 in -1e3..1e3f64, r2 in -1e3..1e3f64,
            dz in -5e-6..5e-6f64, dk in -5e6..5e6f64,
        ) {
            let o = OverlapInputs::new(1e-6, (l1, l2), (r1, r2), dz, dk * consts().hbar);
            let v = overlap_general(&o);
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn quadratic_stop_reproduces_phase_space_analytics() {
        // kick by a uniform gradient, free delay, harmonic stop, then compare with the analytic maps
        let c = consts();
        let w = 2.0 * PI * 850.0;
        // short, strong kick so the displacement built up during the kick is negligible
        let t1 = 1e-6;
        let td = 90e-6;
        let t2 = phase_space::optimal_stop_time(w, td);
        let grad = UniformGradient { gradient: -200.0, z_ref: 95e-6, bias: BIAS };
        let trap = HarmonicField::for_frequency(w, 2, 95e-6, BIAS, &c);
        let sz = 1.2e-6;
        let start = [WavepacketState::at_rest([0.0, 0.0, 95e-6], 2, [sz; 3]), WavepacketState::at_rest([0.0, 0.0, 95e-6], 1, [sz; 3])];
        let mut p1 = Propagator::new(&grad, ScaleMode::Gaussian, [0.0; 3]);
        p1.gravity = false;
        let [a, b] = p1.run_pair(start, &[Step::Segment { gate: 1.0, duration: t1 }, Step::SetSpins([2, 2]), Step::Segment { gate: 0.0, duration: td }], None).unwrap();
        let kick_k = (a.momentum[2] - b.momentum[2]).abs() / c.hbar;
        let mut p2 = Propagator::new(&trap, ScaleMode::Gaussian, [0.0; 3]);
        p2.gravity = false;
        let [a, b] = p2.run_pair([a, b], &[Step::Segment { gate: 1.0, duration: t2 }], None).unwrap();
        let d = (a.position[2] - b.position[2]).abs();
        let d_expect = phase_space::squeeze_factor(w, td) * c.hbar * kick_k / (c.mass_rb87 * w);
        assert!((d / d_expect - 1.0).abs() < 0.01, "{d} {d_expect}");
        assert!((a.momentum[2] - b.momentum[2]).abs() / c.hbar < 1e-2 * kick_k);
        // far field
        let tof = 12e-3;
        let p3 = Propagator { gravity: false, ..Propagator::new(&grad, ScaleMode::Gaussian, [0.0; 3]) };
        let (fa, fb) = (p3.free(&a, tof).unwrap(), p3.free(&b, tof).unwrap());
        let zc = 0.5 * (fa.position[2] + fb.position[2]);
        let width = fa.widths()[2];
        let pat = fringe_density(&fa, &fb, zc - 4.0 * width, zc + 4.0 * width, 4096);
        let fit = crate::fringe::fit_fringe(&pat, Default::default()).unwrap();
        let lam = 2.0 * PI * c.hbar * tof / (c.mass_rb87 * d);
        assert!((fit.lambda / lam - 1.0).abs() < 0.01, "{} {}", fit.lambda, lam);
        assert!(fit.visibility > 0.98);
    }
}
