//! Half-loop and full-loop pulse sequences: definitions, Monte-Carlo execution, T2+T3 scans,
//! optimization and scenario files.

use crate::constants::PhysicalConstants;
use crate::dynamics::{fringe_density, state_overlap, Propagator, ScaleMode, Step, TrajectoryRow, WavepacketState};
use crate::error::{ScenarioError, SimError};
use crate::field::{magnitude_derivs, ChipField};
use crate::fringe::{fft_visibility, fit_fringe, FitFringeOptions, FringeFit, FringePattern};
use crate::hd::{bec_size, BecParams};
use crate::lm::golden_section_max;
use crate::noise::{error_bar, synthesize_multishot, visibility_vs_splittime, ErrorBar, FluctuationSpec, Method, VisibilityEstimate};
use crate::rng::shot_rng;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub const DEFAULT_DROP: f64 = 0.9e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalfLoopSequence {
    pub t_drop: f64,
    pub t_split: f64,
    pub t_delay: f64,
    pub t_stop: f64,
    pub tof: f64,
    /// Trap position before release, m from the wire plane.
    pub z_trap: f64,
    /// Splitting current, A.
    pub current: f64,
    /// Stopping current, A. Calibrated to bring the relative velocity to zero when absent.
    pub stop_current: Option<f64>,
}

impl HalfLoopSequence {
    pub fn validate(&self, label: &str) -> Result<(), ScenarioError> {
        let bad = |field: &str, msg: &str| Err(invalid(label, field, msg));
        for (name, v) in [("t_drop", self.t_drop), ("T1", self.t_split), ("Td", self.t_delay), ("T2", self.t_stop), ("TOF", self.tof)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(name, "times must be finite and non-negative");
            }
        }
        if !(self.z_trap > 50e-6 && self.z_trap < 150e-6) {
            return bad("z_trap_um", "must lie in (50, 150) μm");
        }
        if !self.current.is_finite() {
            return bad("current_mA", "must be finite");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Current reversed during the stopping and reversing pulses.
    #[default]
    CurrentInversion,
    /// Current direction fixed; π pulses just before T2 and just after T3 swap the spins.
    SpinInversion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Echo {
    /// One π pulse at the middle of the Ramsey interval.
    #[default]
    OnePi,
    /// π pulses at one and three quarters of the Ramsey interval.
    TwoPi,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FullLoopSequence {
    pub t_d0: f64,
    pub t1: f64,
    pub t_d1: f64,
    pub t2: f64,
    pub t3: f64,
    pub t_d2: f64,
    pub t4: f64,
    pub tof: f64,
    /// Ramsey interval between the two π/2 pulses.
    pub t_ramsey: f64,
    pub z0_trap: f64,
    pub current: f64,
    pub scheme: Scheme,
    pub echo: Echo,
}

impl FullLoopSequence {
    /// T1 through TOF.
    pub fn interferometer_time(&self) -> f64 {
        self.t1 + self.t_d1 + self.t2 + self.t3 + self.t_d2 + self.t4 + self.tof
    }

    pub fn reverse_time(&self) -> f64 {
        self.t2 + self.t3
    }

    pub fn validate(&self, label: &str) -> Result<(), ScenarioError> {
        let times = [
            ("T_d0", self.t_d0),
            ("T1", self.t1),
            ("T_d1", self.t_d1),
            ("T2", self.t2),
            ("T3", self.t3),
            ("T_d2", self.t_d2),
            ("T4", self.t4),
            ("TOF", self.tof),
            ("T_R", self.t_ramsey),
        ];
        for (name, v) in times {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(label, name, "times must be finite and non-negative"));
            }
        }
        if self.t_ramsey < self.interferometer_time() * (1.0 - 1e-12) {
            return Err(invalid(label, "T_R", "must cover T1 through TOF"));
        }
        let (start, end) = self.gradient_window();
        if self.echo_times().iter().any(|&t| t > start + 1e-12 && t < end - 1e-12) {
            return Err(invalid(label, "T_R", "an echo π pulse would fall between T1 and T4"));
        }
        if !(self.z0_trap > 50e-6 && self.z0_trap < 150e-6) {
            return Err(invalid(label, "z_trap_um", "must lie in (50, 150) μm"));
        }
        if !self.current.is_finite() {
            return Err(invalid(label, "current_mA", "must be finite"));
        }
        Ok(())
    }

    /// Start of T1 and end of T4, measured from release.
    pub fn gradient_window(&self) -> (f64, f64) {
        let start = self.t_d0;
        (start, start + self.interferometer_time() - self.tof)
    }

    /// Times of the echo π pulses from release; they sit at the time-symmetric points of the
    /// Ramsey interval, which ends with the TOF.
    pub fn echo_times(&self) -> Vec<f64> {
        let first = self.t_d0 + self.interferometer_time() - self.t_ramsey;
        match self.echo {
            Echo::OnePi => vec![first + 0.5 * self.t_ramsey],
            Echo::TwoPi => vec![first + 0.25 * self.t_ramsey, first + 0.75 * self.t_ramsey],
        }
    }

    /// Step list from release to the final π/2 pulse.
    pub fn steps(&self) -> Vec<Step> {
        let inv = match self.scheme {
            Scheme::CurrentInversion => -1.0,
            Scheme::SpinInversion => 1.0,
        };
        let i = self.current;
        let segments = [
            (0.0, self.t_d0),
            (i, self.t1),
            (0.0, self.t_d1),
            (inv * i, self.t2),
            (inv * i, self.t3),
            (0.0, self.t_d2),
            (i, self.t4),
            (0.0, self.tof),
        ];
        let mut flips = self.echo_times();
        if self.scheme == Scheme::SpinInversion {
            let t2_start = self.t_d0 + self.t1 + self.t_d1;
            flips.push(t2_start);
            flips.push(t2_start + self.t2 + self.t3);
        }
        flips.sort_by(f64::total_cmp);
        let mut steps = vec![Step::SetSpins([2, 1])];
        let mut t = 0.0;
        let mut next = flips.iter().copied().peekable();
        for (gate, duration) in segments {
            let end = t + duration;
            while let Some(&f) = next.peek() {
                if f > end - 1e-15 {
                    break;
                }
                if f > t {
                    steps.push(Step::Segment { gate, duration: f - t });
                    t = f;
                }
                steps.push(Step::Flip);
                next.next();
            }
            if end > t {
                steps.push(Step::Segment { gate, duration: end - t });
            }
            t = end;
        }
        // flips at or beyond the end change nothing measurable
        steps
    }
}

/// Shot-to-shot fluctuations injected into a half-loop run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseInjection {
    /// Relative splitting-current jitter.
    pub rel_current_std: f64,
    /// Jitter of the splitting-pulse duration, s.
    pub pulse_timing_jitter: f64,
    /// Trap-position jitter, m.
    pub initial_pos_std: f64,
    /// Extra relative phase jitter, rad.
    pub phase_std: f64,
    /// Relative stopping-current jitter.
    pub stop_current_std: f64,
    /// Phase added to every shot alike, rad.
    pub phase_offset: f64,
    pub shots: usize,
    pub seed: u64,
}

impl Default for NoiseInjection {
    fn default() -> Self {
        Self { rel_current_std: 0.0, pulse_timing_jitter: 0.0, initial_pos_std: 0.0, phase_std: 0.0, stop_current_std: 0.0, phase_offset: 0.0, shots: 1, seed: 0 }
    }
}

impl NoiseInjection {
    pub fn validate(&self, label: &str) -> Result<(), ScenarioError> {
        let fields = [
            ("rel_current_std", self.rel_current_std),
            ("pulse_timing_jitter_us", self.pulse_timing_jitter),
            ("initial_pos_std_um", self.initial_pos_std),
            ("phase_std_rad", self.phase_std),
            ("stop_current_std", self.stop_current_std),
        ];
        for (name, v) in fields {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(label, &format!("noise.{name}"), "must be finite and non-negative"));
            }
        }
        if self.shots == 0 {
            return Err(invalid(label, "noise.shots", "need at least one shot"));
        }
        Ok(())
    }

    fn is_quiet(&self) -> bool {
        self.rel_current_std == 0.0 && self.pulse_timing_jitter == 0.0 && self.initial_pos_std == 0.0 && self.phase_std == 0.0 && self.stop_current_std == 0.0
    }
}

/// Atom cloud and integration settings shared by all runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Setup {
    pub bec: BecParams,
    pub mode: ScaleMode,
    pub dt_pulse: f64,
    /// Visibility estimator for half-loop patterns.
    pub estimator: Method,
    /// Samples across the far-field pattern per fringe.
    pub samples_per_fringe: usize,
}

impl Default for Setup {
    fn default() -> Self {
        Self {
            bec: bec_size(BecParams::from_hz(1e4, [38.0, 127.0, 127.0]), crate::constants::A_SCATTER, &PhysicalConstants::default()),
            mode: ScaleMode::Gaussian,
            dt_pulse: 1e-8,
            estimator: Method::Fit,
            samples_per_fringe: 16,
        }
    }
}

impl Setup {
    fn propagator<'a>(&self, field: &'a dyn ChipField) -> Propagator<'a> {
        let mut p = Propagator::new(field, self.mode, self.bec.trap_freqs);
        p.dt_pulse = self.dt_pulse;
        p
    }

    fn start(&self, z: f64) -> Result<[WavepacketState; 2], SimError> {
        let s = WavepacketState::from_bec([0.0, 0.0, z], 2, &self.bec).ok_or_else(|| SimError::Config("BEC parameters lack a chemical potential".into()))?;
        Ok([s, s])
    }
}

fn invalid(label: &str, field: &str, msg: &str) -> ScenarioError {
    ScenarioError::Invalid { label: label.into(), field: field.into(), msg: msg.into() }
}

/// Nominal half-loop trajectory up to the end of the stopping pulse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HalfLoopNominal {
    pub stop_current: f64,
    /// Differential wavevector after the splitting pulse, 1/m.
    pub kick_wavevector: f64,
    /// Separation at the end of the stopping pulse, m.
    pub separation: f64,
    /// Residual relative momentum after the stopping pulse, kg·m/s.
    pub residual_momentum: f64,
    /// Packet width along z at the start of the splitting pulse, m.
    pub split_width: f64,
    /// Mean packet position at the start of the splitting pulse, m.
    pub split_position: f64,
}

fn half_steps_to_delay(seq: &HalfLoopSequence, current: f64, t_split: f64) -> [Step; 5] {
    [
        Step::Segment { gate: 0.0, duration: seq.t_drop },
        Step::SetSpins([2, 1]),
        Step::Segment { gate: current, duration: t_split },
        Step::SetSpins([2, 2]),
        Step::Segment { gate: 0.0, duration: seq.t_delay },
    ]
}

/// Stopping current that brings the relative velocity to zero at the end of T2: bracketing on
/// the nominal trajectory, then Illinois regula falsi.
pub fn calibrate_stop_current(before_stop: &[WavepacketState; 2], t_stop: f64, sign: f64, prop: &Propagator) -> Result<f64, SimError> {
    let rel = |i: f64| -> Result<f64, SimError> {
        let a = prop.segment(&before_stop[0], i, t_stop)?;
        let b = prop.segment(&before_stop[1], i, t_stop)?;
        Ok(a.momentum[2] - b.momentum[2])
    };
    let f0 = before_stop[0].momentum[2] - before_stop[1].momentum[2];
    if t_stop == 0.0 || f0 == 0.0 {
        return Ok(0.0);
    }
    let (mut lo, mut flo) = (0.0, f0);
    let mut hi = 0.05 * sign;
    let mut fhi = rel(hi)?;
    while fhi.signum() == f0.signum() {
        (lo, flo) = (hi, fhi);
        hi *= 1.5;
        if hi.abs() > 20.0 {
            return Err(SimError::Config(format!("no stopping current below 20 A zeroes the relative velocity within T2 = {t_stop:e} s")));
        }
        fhi = rel(hi)?;
    }
    let tol = 1e-9 * f0.abs();
    let mut side = 0;
    for _ in 0..100 {
        let mid = (lo * fhi - hi * flo) / (fhi - flo);
        let fm = rel(mid)?;
        if fm.abs() < tol || (hi - lo).abs() < 1e-12 * hi.abs() {
            return Ok(mid);
        }
        if fm.signum() == flo.signum() {
            (lo, flo) = (mid, fm);
            if side == -1 {
                fhi *= 0.5;
            }
            side = -1;
        } else {
            (hi, fhi) = (mid, fm);
            if side == 1 {
                flo *= 0.5;
            }
            side = 1;
        }
    }
    Ok((lo * fhi - hi * flo) / (fhi - flo))
}

/// The noise-free run: calibrates the stopping current when the sequence does not fix it.
pub fn half_loop_nominal(seq: &HalfLoopSequence, field: &dyn ChipField, setup: &Setup) -> Result<(HalfLoopNominal, [WavepacketState; 2]), SimError> {
    let prop = setup.propagator(field);
    let start = setup.start(seq.z_trap)?;
    let dropped = prop.free(&start[0], seq.t_drop)?;
    let pair = prop.run_pair(start, &half_steps_to_delay(seq, seq.current, seq.t_split), None)?;
    let kicked = prop.run_pair(start, &half_steps_to_delay(seq, seq.current, seq.t_split)[..3], None)?;
    let stop_current = match seq.stop_current {
        Some(i) => i,
        None => calibrate_stop_current(&pair, seq.t_stop, if seq.current < 0.0 { -1.0 } else { 1.0 }, &prop)?,
    };
    let [a, b] = prop.run_pair(pair, &[Step::Segment { gate: stop_current, duration: seq.t_stop }], None)?;
    let nominal = HalfLoopNominal {
        stop_current,
        kick_wavevector: (kicked[0].momentum[2] - kicked[1].momentum[2]).abs() / prop.consts.hbar,
        separation: (a.position[2] - b.position[2]).abs(),
        residual_momentum: a.momentum[2] - b.momentum[2],
        split_width: dropped.widths()[2],
        split_position: dropped.position[2],
    };
    Ok((nominal, [a, b]))
}

/// Closed-form multishot visibility for relative current jitter `eta`, with the growth rate of
/// the differential wavevector, the packet width and the distance to the field zero taken from
/// the nominal run at the splitting position.
pub fn half_loop_analytic(seq: &HalfLoopSequence, nominal: &HalfLoopNominal, eta: f64, field: &dyn ChipField) -> Result<f64, SimError> {
    let d = magnitude_derivs(field, [0.0, 0.0, nominal.split_position], seq.current)?;
    let bias = field.bias();
    let lever = (d.value - bias.iter().map(|b| b * b).sum::<f64>().sqrt()) / d.grad[2].abs();
    let spec = FluctuationSpec { rel_current_rms: eta, kappa: nominal.kick_wavevector / seq.t_split, z_offset: lever, ..Default::default() };
    Ok(visibility_vs_splittime(seq.t_split, &spec, nominal.split_width))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HalfLoopRun {
    pub nominal: HalfLoopNominal,
    /// Far-field fringe period of the noise-free run, m.
    pub period: f64,
    pub patterns: Vec<FringePattern>,
    pub multishot: FringePattern,
    pub single_shot: Vec<f64>,
    /// Per-shot fits (None when the fit failed or the FFT estimator is in use).
    pub shot_fits: Vec<Option<FringeFit>>,
    /// Multishot pattern visibility before normalization.
    pub multishot_raw: f64,
    pub multishot_fit: Option<FringeFit>,
    /// Normalized multishot visibility V_N.
    pub visibility: VisibilityEstimate,
    pub error_bar: ErrorBar,
}

struct ShotDraw {
    current: f64,
    t_split: f64,
    z_trap: f64,
    phase: f64,
    stop: f64,
}

fn draw_shot(seq: &HalfLoopSequence, noise: &NoiseInjection, stop: f64, shot: usize) -> ShotDraw {
    if noise.is_quiet() {
        return ShotDraw { current: seq.current, t_split: seq.t_split, z_trap: seq.z_trap, phase: noise.phase_offset, stop };
    }
    let mut rng = shot_rng(noise.seed, shot as u64);
    let mut g = || -> f64 { rng.sample(StandardNormal) };
    let (g1, g2, g3, g4, g5) = (g(), g(), g(), g(), g());
    ShotDraw {
        current: seq.current * (1.0 + noise.rel_current_std * g1),
        t_split: (seq.t_split + noise.pulse_timing_jitter * g2).max(0.0),
        z_trap: seq.z_trap + noise.initial_pos_std * g3,
        phase: noise.phase_offset + noise.phase_std * g4,
        stop: stop * (1.0 + noise.stop_current_std * g5),
    }
}

fn estimate(pattern: &FringePattern, method: Method, period: f64) -> Result<(f64, f64, Option<FringeFit>), SimError> {
    if method == Method::Fit {
        // far-field fringes carry a weak chirp; an unchirped fit would read envelope motion as
        // phase and contrast changes
        let chirped = FitFringeOptions { chirped: true, period_guess: Some(period), chirp_guess: Some(0.0) };
        let plain = FitFringeOptions { period_guess: Some(period), ..Default::default() };
        if let Some(fit) = fit_fringe(pattern, chirped).ok().or_else(|| fit_fringe(pattern, plain).ok()) {
            return Ok((fit.visibility_raw, fit.errors.visibility, Some(fit)));
        }
    }
    Ok((fft_visibility(pattern)?, 0.0, None))
}

struct ImagingGrid {
    z_min: f64,
    z_max: f64,
    n: usize,
    period: f64,
}

/// Far-field window of the noise-free run: four widths beyond either packet centre plus `drift`
/// on each side, sampled at `samples_per_fringe` of the shortest local period.
fn imaging_grid(seq: &HalfLoopSequence, stopped: [WavepacketState; 2], nominal: &HalfLoopNominal, drift: f64, prop: &Propagator, setup: &Setup) -> Result<ImagingGrid, SimError> {
    let [a, b] = prop.run_pair(stopped, &[Step::Segment { gate: 0.0, duration: seq.tof }], None)?;
    let c = &prop.consts;
    let center = 0.5 * (a.position[2] + b.position[2]);
    let width = a.widths()[2].max(b.widths()[2]);
    let half = 4.0 * width + 0.5 * (a.position[2] - b.position[2]).abs() + drift;
    let (ca, cb) = (a.phase_curvature(c)[2], b.phase_curvature(c)[2]);
    let local_k = |z: f64| ((b.momentum[2] - a.momentum[2]) / c.hbar + 2.0 * cb * (z - b.position[2]) - 2.0 * ca * (z - a.position[2])).abs();
    let k_max = local_k(center - half).max(local_k(center + half)).max(local_k(center));
    if k_max * 2.0 * half < 2.0 * PI * 3.0 {
        return Err(SimError::Config(format!("fewer than three far-field fringes (separation {:e} m)", nominal.separation)));
    }
    let period = 2.0 * PI / local_k(center);
    let n = ((2.0 * half * k_max / (2.0 * PI)) * setup.samples_per_fringe as f64).ceil().clamp(1024.0, 65536.0) as usize;
    Ok(ImagingGrid { z_min: center - half, z_max: center + half, n, period })
}

/// Noise-free half-loop trajectory from release to the end of the time of flight.
pub fn trace_half_loop(seq: &HalfLoopSequence, field: &dyn ChipField, setup: &Setup) -> Result<Vec<TrajectoryRow>, SimError> {
    seq.validate("half-loop")?;
    let (nominal, _) = half_loop_nominal(seq, field, setup)?;
    let prop = setup.propagator(field);
    let mut steps = half_steps_to_delay(seq, seq.current, seq.t_split).to_vec();
    steps.push(Step::Segment { gate: nominal.stop_current, duration: seq.t_stop });
    steps.push(Step::Segment { gate: 0.0, duration: seq.tof });
    let mut rows = Vec::new();
    prop.run_pair(setup.start(seq.z_trap)?, &steps, Some(&mut rows))?;
    Ok(rows)
}

/// Far-field displacement of the cloud centre per metre of initial-position offset.
fn image_shift_per_offset(seq: &HalfLoopSequence, nominal: &HalfLoopNominal, field: &dyn ChipField, setup: &Setup) -> Result<f64, SimError> {
    let prop = setup.propagator(field);
    let delta = 0.1e-6;
    let center = |z: f64| -> Result<f64, SimError> {
        let mut steps = half_steps_to_delay(seq, seq.current, seq.t_split).to_vec();
        steps.push(Step::Segment { gate: nominal.stop_current, duration: seq.t_stop });
        steps.push(Step::Segment { gate: 0.0, duration: seq.tof });
        let [a, b] = prop.run_pair(setup.start(z)?, &steps, None)?;
        Ok(0.5 * (a.position[2] + b.position[2]))
    };
    Ok((center(seq.z_trap + delta)? - center(seq.z_trap - delta)?) / (2.0 * delta))
}

/// Fringe phase of the noise-free far-field pattern for each splitting current, unwrapped along
/// the list. Stopping current and imaging window stay at their values for `seq.current`.
pub fn half_loop_phase_scan(seq: &HalfLoopSequence, currents: &[f64], field: &dyn ChipField, setup: &Setup) -> Result<Vec<f64>, SimError> {
    seq.validate("half-loop")?;
    let (nominal, stopped) = half_loop_nominal(seq, field, setup)?;
    let prop = setup.propagator(field);
    let grid = imaging_grid(seq, stopped, &nominal, 0.0, &prop, setup)?;
    let start = setup.start(seq.z_trap)?;
    let opts = FitFringeOptions { chirped: true, period_guess: Some(grid.period), chirp_guess: Some(0.0) };
    let raw: Vec<f64> = currents
        .par_iter()
        .map(|&i| {
            let mut steps = half_steps_to_delay(seq, i, seq.t_split).to_vec();
            steps.push(Step::Segment { gate: nominal.stop_current, duration: seq.t_stop });
            steps.push(Step::Segment { gate: 0.0, duration: seq.tof });
            let [a, b] = prop.run_pair(start, &steps, None)?;
            let fit = fit_fringe(&fringe_density(&a, &b, grid.z_min, grid.z_max, grid.n), opts)?;
            Ok(fit.phase)
        })
        .collect::<Result<_, SimError>>()?;
    let mut out = Vec::with_capacity(raw.len());
    for (j, &p) in raw.iter().enumerate() {
        let v = if j == 0 { p } else { let prev: f64 = out[j - 1]; prev + (p - prev + PI).rem_euclid(2.0 * PI) - PI };
        out.push(v);
    }
    Ok(out)
}

/// Monte-Carlo half-loop: every shot propagates both branches with its own noise draw; the
/// far-field patterns share the imaging grid of the noise-free run.
pub fn run_half_loop(seq: &HalfLoopSequence, noise: &NoiseInjection, field: &dyn ChipField, setup: &Setup) -> Result<HalfLoopRun, SimError> {
    seq.validate("half-loop")?;
    noise.validate("half-loop")?;
    let (nominal, stopped) = half_loop_nominal(seq, field, setup)?;
    let prop = setup.propagator(field);
    let drift = 4.0 * noise.initial_pos_std * image_shift_per_offset(seq, &nominal, field, setup)?.abs();
    let grid = imaging_grid(seq, stopped, &nominal, drift, &prop, setup)?;
    let (z_min, z_max, n, period) = (grid.z_min, grid.z_max, grid.n, grid.period);

    let prop_ref = &prop;
    let shots: Vec<Result<FringePattern, SimError>> = (0..noise.shots)
        .into_par_iter()
        .map(|shot| {
            let d = draw_shot(seq, noise, nominal.stop_current, shot);
            let start = setup.start(d.z_trap)?;
            let mut steps = half_steps_to_delay(seq, d.current, d.t_split).to_vec();
            steps.push(Step::Segment { gate: d.stop, duration: seq.t_stop });
            steps.push(Step::Segment { gate: 0.0, duration: seq.tof });
            let [a, mut b] = prop_ref.run_pair(start, &steps, None)?;
            b.phase += d.phase;
            let mut p = fringe_density(&a, &b, z_min, z_max, n);
            p.shot = Some(shot);
            Ok(p)
        })
        .collect();
    let patterns: Vec<FringePattern> = shots.into_iter().collect::<Result<_, _>>()?;
    let evaluated: Vec<(f64, f64, Option<FringeFit>)> = patterns.par_iter().map(|p| estimate(p, setup.estimator, period)).collect::<Result<_, _>>()?;
    let single_shot: Vec<f64> = evaluated.iter().map(|e| e.0).collect();
    let shot_fits = evaluated.into_iter().map(|e| e.2).collect();
    let multishot = synthesize_multishot(&patterns, None)?;
    let (v_multi, v_multi_err, multishot_fit) = estimate(&multishot, setup.estimator, period)?;
    let nf = single_shot.len() as f64;
    let mean = single_shot.iter().sum::<f64>() / nf;
    let std = if single_shot.len() > 1 { (single_shot.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt() } else { 0.0 };
    let v_norm = v_multi / mean;
    let bar = error_bar(v_norm, v_multi_err, std, mean, single_shot.len());
    Ok(HalfLoopRun {
        nominal,
        period,
        patterns,
        multishot,
        single_shot,
        shot_fits,
        multishot_raw: v_multi,
        multishot_fit,
        visibility: VisibilityEstimate { value: v_norm, uncertainty: bar.value, method: setup.estimator, samples: noise.shots },
        error_bar: bar,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FullLoopRun {
    pub overlap: Complex64,
    pub estimate: VisibilityEstimate,
    /// Largest |Δz| at any step boundary, m.
    pub max_separation: f64,
    /// Largest |Δp| at any step boundary, kg·m/s.
    pub max_momentum: f64,
    pub final_separation: f64,
    pub final_momentum: f64,
    /// Packet width along z at the end, m.
    pub final_width: f64,
    pub final_states: [WavepacketState; 2],
}

impl FullLoopRun {
    /// Output population ½(1 + |O| cos(arg O + φ)) for analysis phase φ.
    pub fn population(&self, analysis_phase: f64) -> f64 {
        0.5 * (1.0 + self.overlap.norm() * (self.overlap.arg() + analysis_phase).cos())
    }
}

/// Propagates both spin branches through the full loop and evaluates their overlap. Identical
/// branches (no gradients) give exactly 1, so no further normalization is applied.
pub fn run_full_loop(seq: &FullLoopSequence, field: &dyn ChipField, setup: &Setup) -> Result<FullLoopRun, SimError> {
    seq.validate("full-loop")?;
    full_loop_unchecked(seq, field, setup, None)
}

fn full_loop_unchecked(seq: &FullLoopSequence, field: &dyn ChipField, setup: &Setup, trace: Option<&mut Vec<TrajectoryRow>>) -> Result<FullLoopRun, SimError> {
    let prop = setup.propagator(field);
    let start = setup.start(seq.z0_trap)?;
    let mut rows = Vec::new();
    let [a, b] = prop.run_pair(start, &seq.steps(), Some(&mut rows))?;
    let overlap = state_overlap(&a, &b);
    let max_separation = rows.iter().map(|r| (r.z1 - r.z2).abs()).fold(0.0, f64::max);
    let max_momentum = rows.iter().map(|r| (r.p1 - r.p2).abs()).fold(0.0, f64::max);
    if let Some(t) = trace {
        *t = rows;
    }
    Ok(FullLoopRun {
        overlap,
        estimate: VisibilityEstimate { value: overlap.norm(), uncertainty: 0.0, method: Method::Overlap, samples: 1 },
        max_separation,
        max_momentum,
        final_separation: a.position[2] - b.position[2],
        final_momentum: a.momentum[2] - b.momentum[2],
        final_width: (a.widths()[2] * b.widths()[2]).sqrt(),
        final_states: [a, b],
    })
}

/// Full-loop run that also returns the branch trajectory at every step boundary.
pub fn trace_full_loop(seq: &FullLoopSequence, field: &dyn ChipField, setup: &Setup) -> Result<(FullLoopRun, Vec<TrajectoryRow>), SimError> {
    seq.validate("full-loop")?;
    let mut rows = Vec::new();
    let run = full_loop_unchecked(seq, field, setup, Some(&mut rows))?;
    Ok((run, rows))
}

/// Same sequence with T2+T3 set to `reverse`, keeping T2/(T2+T3) and T2+T3+T_d2 fixed.
pub fn with_reverse_time(seq: &FullLoopSequence, reverse: f64) -> FullLoopSequence {
    let sum = seq.reverse_time();
    let frac = if sum > 0.0 { seq.t2 / sum } else { 0.5 };
    let total = sum + seq.t_d2;
    FullLoopSequence { t2: frac * reverse, t3: (1.0 - frac) * reverse, t_d2: total - reverse, ..*seq }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScanPoint {
    pub reverse_time: f64,
    pub t2: f64,
    pub t3: f64,
    pub t_d2: f64,
    pub population: f64,
    pub visibility: f64,
    pub phase: f64,
}

/// Population at a fixed analysis phase versus T2+T3.
pub fn run_full_loop_scan(seq: &FullLoopSequence, reverse_times: &[f64], analysis_phase: f64, field: &dyn ChipField, setup: &Setup) -> Result<Vec<ScanPoint>, SimError> {
    seq.validate("full-loop scan")?;
    let total = seq.reverse_time() + seq.t_d2;
    if let Some(bad) = reverse_times.iter().find(|&&t| t < 0.0 || t > total) {
        return Err(SimError::Config(format!("T2+T3 = {bad:e} s leaves a negative delay (T2+T3+T_d2 = {total:e} s)")));
    }
    reverse_times
        .par_iter()
        .map(|&t| {
            let s = with_reverse_time(seq, t);
            let run = full_loop_unchecked(&s, field, setup, None)?;
            Ok(ScanPoint {
                reverse_time: t,
                t2: s.t2,
                t3: s.t3,
                t_d2: s.t_d2,
                population: run.population(analysis_phase),
                visibility: run.overlap.norm(),
                phase: run.overlap.arg(),
            })
        })
        .collect()
}

/// Sequence parameters the optimizer may vary. Total duration is preserved: the reverse pulse
/// trades against T_d2, the others against TOF.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreeParam {
    ReverseTime,
    T1,
    Td1,
    T4,
}

impl FreeParam {
    pub fn get(self, s: &FullLoopSequence) -> f64 {
        match self {
            FreeParam::ReverseTime => s.reverse_time(),
            FreeParam::T1 => s.t1,
            FreeParam::Td1 => s.t_d1,
            FreeParam::T4 => s.t4,
        }
    }

    pub fn set(self, s: &FullLoopSequence, v: f64) -> FullLoopSequence {
        match self {
            FreeParam::ReverseTime => with_reverse_time(s, v),
            FreeParam::T1 => FullLoopSequence { t1: v, tof: s.tof + s.t1 - v, ..*s },
            FreeParam::Td1 => FullLoopSequence { t_d1: v, tof: s.tof + s.t_d1 - v, ..*s },
            FreeParam::T4 => FullLoopSequence { t4: v, tof: s.tof + s.t4 - v, ..*s },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamRange {
    pub param: FreeParam,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizeResult {
    pub sequence: FullLoopSequence,
    pub visibility: f64,
    /// Parameters whose optimum sits on the edge of its range.
    pub at_boundary: Vec<FreeParam>,
    /// The overlap does not depend on the free parameters at all.
    pub degenerate: bool,
    pub evaluations: usize,
}

/// Coarse grid over up to four parameters followed by coordinate-wise golden-section
/// refinement of |overlap|. Deterministic for a given input.
pub fn optimize_sequence(seq: &FullLoopSequence, ranges: &[ParamRange], grid_points: usize, field: &dyn ChipField, setup: &Setup) -> Result<OptimizeResult, SimError> {
    seq.validate("optimize")?;
    if ranges.is_empty() || ranges.len() > 4 {
        return Err(SimError::Config(format!("need 1 to 4 free parameters, got {}", ranges.len())));
    }
    if ranges.iter().any(|r| !(r.lo <= r.hi) || r.lo < 0.0) {
        return Err(SimError::Config("parameter ranges must satisfy 0 ≤ lo ≤ hi".into()));
    }
    let grid_points = grid_points.max(2);
    let apply = |x: &[f64]| ranges.iter().zip(x).fold(*seq, |s, (r, &v)| r.param.set(&s, v));
    let score = |x: &[f64]| -> f64 {
        let s = apply(x);
        if s.validate("optimize").is_err() {
            return -1.0;
        }
        full_loop_unchecked(&s, field, setup, None).map(|r| r.overlap.norm()).unwrap_or(-1.0)
    };
    let axis = |r: &ParamRange, i: usize| r.lo + (r.hi - r.lo) * i as f64 / (grid_points - 1) as f64;
    let total = grid_points.pow(ranges.len() as u32);
    let values: Vec<f64> = (0..total)
        .into_par_iter()
        .map(|flat| {
            let mut idx = flat;
            let x: Vec<f64> = ranges
                .iter()
                .map(|r| {
                    let i = idx % grid_points;
                    idx /= grid_points;
                    axis(r, i)
                })
                .collect();
            score(&x)
        })
        .collect();
    let (best_flat, &best_v) = values.iter().enumerate().fold((0, &f64::NEG_INFINITY), |acc, (i, v)| if *v > *acc.1 { (i, v) } else { acc });
    let (vmin, vmax) = values.iter().filter(|v| **v >= 0.0).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let degenerate = vmax - vmin < 1e-12;
    let mut idx = best_flat;
    let mut x: Vec<f64> = ranges
        .iter()
        .map(|r| {
            let i = idx % grid_points;
            idx /= grid_points;
            axis(r, i)
        })
        .collect();
    let mut best = best_v;
    let mut evaluations = total + 1;
    // the incoming sequence competes with the grid, so re-optimizing a previous optimum with
    // more free parameters never loses visibility
    let start: Vec<f64> = ranges.iter().map(|r| r.param.get(seq).clamp(r.lo, r.hi)).collect();
    let v_start = score(&start);
    if v_start > best {
        best = v_start;
        x = start;
    }
    if !degenerate {
        for _sweep in 0..3 {
            for (k, r) in ranges.iter().enumerate() {
                let step = (r.hi - r.lo) / (grid_points - 1) as f64;
                if step == 0.0 {
                    continue;
                }
                let lo = (x[k] - step).max(r.lo);
                let hi = (x[k] + step).min(r.hi);
                let mut trial = x.clone();
                let (xk, vk) = golden_section_max(
                    |v| {
                        trial[k] = v;
                        evaluations += 1;
                        score(&trial)
                    },
                    lo,
                    hi,
                    1e-4 * step,
                );
                if vk > best {
                    best = vk;
                    x[k] = xk;
                }
            }
        }
    }
    let at_boundary = if degenerate {
        Vec::new()
    } else {
        ranges
            .iter()
            .zip(&x)
            .filter(|(r, v)| {
                let step = (r.hi - r.lo) / (grid_points - 1) as f64;
                r.hi > r.lo && ((**v - r.lo).abs() < 1e-3 * step || (r.hi - **v).abs() < 1e-3 * step)
            })
            .map(|(r, _)| r.param)
            .collect()
    };
    Ok(OptimizeResult { sequence: apply(&x), visibility: best, at_boundary, degenerate, evaluations })
}

/// A scenario parsed from JSON, tagged with its label and optional data-set name.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub label: String,
    pub set: Option<String>,
    pub kind: ScenarioKind,
    pub noise: NoiseInjection,
    pub seed: u64,
    /// Stated uncertainty of the trap position, m.
    pub z_uncertainty: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum ScenarioKind {
    Half(HalfLoopSequence),
    Full(FullLoopSequence),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNoise {
    #[serde(default)]
    rel_current_std: f64,
    #[serde(default)]
    pulse_timing_jitter_us: f64,
    #[serde(default)]
    initial_pos_std_um: f64,
    #[serde(default)]
    phase_std_rad: f64,
    #[serde(default)]
    stop_current_std: f64,
    #[serde(default = "one")]
    shots: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    label: String,
    #[serde(default)]
    set: Option<String>,
    #[serde(rename = "type")]
    kind: String,
    times_us: std::collections::BTreeMap<String, f64>,
    #[serde(rename = "current_mA")]
    current_ma: f64,
    #[serde(default, rename = "stop_current_mA")]
    stop_current_ma: Option<f64>,
    z_trap_um: f64,
    #[serde(default)]
    z_uncertainty_um: Option<f64>,
    #[serde(default)]
    scheme: Option<Scheme>,
    #[serde(default)]
    echo: Option<Echo>,
    #[serde(default)]
    noise: Option<RawNoise>,
    #[serde(default)]
    seed: u64,
}

const HALF_KEYS: [&str; 5] = ["t_drop", "T1", "Td", "T2", "TOF"];
const FULL_KEYS: [&str; 9] = ["T_d0", "T1", "T_d1", "T2", "T3", "T_d2", "T4", "TOF", "T_R"];

fn convert(raw: RawScenario) -> Result<Scenario, ScenarioError> {
    let label = raw.label.clone();
    let us = |key: &str| -> Result<f64, ScenarioError> {
        raw.times_us.get(key).map(|v| v * 1e-6).ok_or_else(|| invalid(&label, &format!("times_us.{key}"), "missing"))
    };
    let keys: &[&str] = match raw.kind.as_str() {
        "half" => &HALF_KEYS,
        "full" => &FULL_KEYS,
        other => return Err(invalid(&label, "type", &format!("expected \"half\" or \"full\", got \"{other}\""))),
    };
    if let Some(extra) = raw.times_us.keys().find(|k| !keys.contains(&k.as_str())) {
        return Err(invalid(&label, &format!("times_us.{extra}"), "unknown key"));
    }
    let kind = if raw.kind == "half" {
        let seq = HalfLoopSequence {
            t_drop: raw.times_us.get("t_drop").map_or(DEFAULT_DROP, |v| v * 1e-6),
            t_split: us("T1")?,
            t_delay: us("Td")?,
            t_stop: us("T2")?,
            tof: us("TOF")?,
            z_trap: raw.z_trap_um * 1e-6,
            current: raw.current_ma * 1e-3,
            stop_current: raw.stop_current_ma.map(|v| v * 1e-3),
        };
        seq.validate(&label)?;
        ScenarioKind::Half(seq)
    } else {
        let seq = FullLoopSequence {
            t_d0: us("T_d0")?,
            t1: us("T1")?,
            t_d1: us("T_d1")?,
            t2: us("T2")?,
            t3: us("T3")?,
            t_d2: us("T_d2")?,
            t4: us("T4")?,
            tof: us("TOF")?,
            t_ramsey: us("T_R")?,
            z0_trap: raw.z_trap_um * 1e-6,
            current: raw.current_ma * 1e-3,
            scheme: raw.scheme.unwrap_or_default(),
            echo: raw.echo.unwrap_or_default(),
        };
        seq.validate(&label)?;
        ScenarioKind::Full(seq)
    };
    let noise = raw.noise.map_or(NoiseInjection { seed: raw.seed, ..Default::default() }, |n| NoiseInjection {
        rel_current_std: n.rel_current_std,
        pulse_timing_jitter: n.pulse_timing_jitter_us * 1e-6,
        initial_pos_std: n.initial_pos_std_um * 1e-6,
        phase_std: n.phase_std_rad,
        stop_current_std: n.stop_current_std,
        phase_offset: 0.0,
        shots: n.shots,
        seed: raw.seed,
    });
    noise.validate(&label)?;
    if let Some(u) = raw.z_uncertainty_um {
        if !(u >= 0.0 && u.is_finite()) {
            return Err(invalid(&label, "z_uncertainty_um", "must be finite and non-negative"));
        }
    }
    Ok(Scenario { label: raw.label, set: raw.set, kind, noise, seed: raw.seed, z_uncertainty: raw.z_uncertainty_um.map(|u| u * 1e-6) })
}

/// Parses scenario JSON: either a list of scenarios or `{"scenarios": [...]}`.
pub fn parse_scenarios(text: &str, path: &str) -> Result<Vec<Scenario>, ScenarioError> {
    // parse once as a plain value for line/column diagnostics, then into the schema
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| ScenarioError::Parse { path: path.into(), line: e.line(), column: e.column(), msg: e.to_string() })?;
    let list = match &value {
        serde_json::Value::Array(items) => items.clone(),
        serde_json::Value::Object(map) => match map.get("scenarios") {
            Some(serde_json::Value::Array(items)) => items.clone(),
            _ => return Err(invalid("<file>", "scenarios", "expected a list of scenarios")),
        },
        _ => return Err(invalid("<file>", "<root>", "expected a list of scenarios")),
    };
    list.into_iter()
        .enumerate()
        .map(|(i, item)| {
            let label = item.get("label").and_then(|l| l.as_str()).map_or_else(|| format!("#{i}"), str::to_string);
            let raw: RawScenario = serde_json::from_value(item).map_err(|e| {
                let (line, column) = locate(text, &label);
                ScenarioError::Parse { path: path.into(), line, column, msg: format!("scenario {label}: {e}") }
            })?;
            convert(raw)
        })
        .collect()
}

fn locate(text: &str, label: &str) -> (usize, usize) {
    let needle = format!("\"{label}\"");
    text.lines()
        .enumerate()
        .find_map(|(i, l)| l.find(&needle).map(|c| (i + 1, c + 1)))
        .unwrap_or((0, 0))
}

pub fn load_scenarios(path: &std::path::Path) -> Result<Vec<Scenario>, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
    parse_scenarios(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{Chip, ChipGeometry, UniformGradient, WireModel};
    use crate::fringe::fit_envelope_sine;

    fn chip() -> Chip {
        Chip::new(ChipGeometry::default(), WireModel::Strip).unwrap()
    }

    fn fig1b() -> HalfLoopSequence {
        HalfLoopSequence {
            t_drop: DEFAULT_DROP,
            t_split: 4e-6,
            t_delay: 116e-6,
            t_stop: 200e-6,
            tof: 6760e-6,
            z_trap: 90e-6,
            current: 0.86,
            stop_current: None,
        }
    }

    #[test]
    fn stop_calibration_zeroes_relative_velocity() {
        let (nominal, _) = half_loop_nominal(&fig1b(), &chip(), &Setup::default()).unwrap();
        let hbar = PhysicalConstants::default().hbar;
        assert!(nominal.residual_momentum.abs() / hbar < 1e-6 * nominal.kick_wavevector);
        assert!(nominal.stop_current > 0.0 && nominal.stop_current < 5.0, "{}", nominal.stop_current);
    }

    #[test]
    fn zero_noise_normalized_visibility_is_one() {
        let run = run_half_loop(&fig1b(), &NoiseInjection { shots: 4, ..Default::default() }, &chip(), &Setup::default()).unwrap();
        assert!((run.visibility.value - 1.0).abs() < 0.01, "{}", run.visibility.value);
        assert!(run.multishot_raw > 0.9);
    }

    #[test]
    fn global_phase_offset_leaves_visibility_unchanged() {
        let noise = NoiseInjection { phase_std: 0.3, shots: 16, seed: 3, ..Default::default() };
        let setup = Setup::default();
        let a = run_half_loop(&fig1b(), &noise, &chip(), &setup).unwrap();
        let b = run_half_loop(&fig1b(), &NoiseInjection { phase_offset: 1.3, ..noise }, &chip(), &setup).unwrap();
        assert!(a.visibility.value < 0.99);
        assert!((a.visibility.value - b.visibility.value).abs() < 2e-3, "{} {}", a.visibility.value, b.visibility.value);
    }

    #[test]
    fn full_loop_without_current_is_perfect() {
        let seq = FullLoopSequence {
            t_d0: 1e-3,
            t1: 6e-6,
            t_d1: 300e-6,
            t2: 6e-6,
            t3: 6e-6,
            t_d2: 300e-6,
            t4: 6e-6,
            tof: 700e-6,
            t_ramsey: 1360e-6,
            z0_trap: 90e-6,
            current: 0.0,
            scheme: Scheme::CurrentInversion,
            echo: Echo::OnePi,
        };
        let run = run_full_loop(&seq, &chip(), &Setup::default()).unwrap();
        assert!((run.estimate.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn schemes_agree_for_antisymmetric_linear_gradient() {
        let field = UniformGradient { gradient: 20.0, z_ref: 95e-6, bias: 36.7e-4 };
        let base = FullLoopSequence {
            t_d0: 1e-3,
            t1: 6e-6,
            t_d1: 200e-6,
            t2: 6e-6,
            t3: 6e-6,
            t_d2: 200e-6,
            t4: 6e-6,
            tof: 450e-6,
            t_ramsey: 880e-6,
            z0_trap: 90e-6,
            current: 1.0,
            scheme: Scheme::CurrentInversion,
            echo: Echo::OnePi,
        };
        let setup = Setup::default();
        let a = run_full_loop(&base, &field, &setup).unwrap();
        let b = run_full_loop(&FullLoopSequence { scheme: Scheme::SpinInversion, ..base }, &field, &setup).unwrap();
        assert!(a.estimate.value > 0.999, "{} {:e} {:e}", a.estimate.value, a.final_separation, a.final_momentum);
        assert!((a.estimate.value - b.estimate.value).abs() < 1e-9, "{} {}", a.estimate.value, b.estimate.value);
        assert!((a.max_separation - b.max_separation).abs() < 1e-12);
    }

    #[test]
    fn step_list_places_flips() {
        let seq = FullLoopSequence {
            t_d0: 1e-3,
            t1: 1e-6,
            t_d1: 1e-6,
            t2: 1e-6,
            t3: 1e-6,
            t_d2: 1e-6,
            t4: 1e-6,
            tof: 10e-6,
            t_ramsey: 30e-6,
            z0_trap: 90e-6,
            current: 1.0,
            scheme: Scheme::SpinInversion,
            echo: Echo::TwoPi,
        };
        let steps = seq.steps();
        let flips = steps.iter().filter(|s| matches!(s, Step::Flip)).count();
        assert_eq!(flips, 4);
        let total: f64 = steps.iter().map(|s| if let Step::Segment { duration, .. } = s { *duration } else { 0.0 }).sum();
        assert!((total - 1.016e-3).abs() < 1e-15, "{total:e} {steps:?}");
    }

    #[test]
    fn scenario_round_trip_and_errors() {
        let text = r#"[
  {"label": "T1=4", "set": "table_s1", "type": "half",
   "times_us": {"T1": 4, "Td": 116, "T2": 200, "TOF": 6760},
   "current_mA": 860, "z_trap_um": 90, "seed": 1}
]"#;
        let s = parse_scenarios(text, "mem").unwrap();
        let ScenarioKind::Half(h) = s[0].kind else { panic!() };
        let us = [h.t_split, h.t_delay, h.t_stop, h.tof].map(|t| (t * 1e6 * 1e6).round() / 1e6);
        assert_eq!(us, [4.0, 116.0, 200.0, 6760.0]);
        assert_eq!(h.t_drop, DEFAULT_DROP);
        assert!(parse_scenarios("[]", "mem").unwrap().is_empty());
        let bad = text.replace("\"z_trap_um\": 90", "\"z_trap_um\": 200");
        match parse_scenarios(&bad, "mem") {
            Err(ScenarioError::Invalid { field, label, .. }) => {
                assert_eq!(field, "z_trap_um");
                assert_eq!(label, "T1=4");
            }
            other => panic!("{other:?}"),
        }
        match parse_scenarios("[{\"label\": 3,,}]", "mem") {
            Err(ScenarioError::Parse { line: 1, .. }) => {}
            other => panic!("{other:?}"),
        }
        let missing = text.replace("\"Td\": 116, ", "");
        assert!(matches!(parse_scenarios(&missing, "mem"), Err(ScenarioError::Invalid { field, .. }) if field == "times_us.Td"));
    }

    #[test]
    fn optimizer_flags_degenerate_case() {
        let seq = FullLoopSequence {
            t_d0: 1e-3,
            t1: 6e-6,
            t_d1: 100e-6,
            t2: 6e-6,
            t3: 6e-6,
            t_d2: 100e-6,
            t4: 6e-6,
            tof: 250e-6,
            t_ramsey: 490e-6,
            z0_trap: 90e-6,
            current: 0.0,
            scheme: Scheme::CurrentInversion,
            echo: Echo::OnePi,
        };
        let r = optimize_sequence(&seq, &[ParamRange { param: FreeParam::ReverseTime, lo: 8e-6, hi: 16e-6 }], 9, &chip(), &Setup::default()).unwrap();
        assert!(r.degenerate);
        assert!((r.visibility - 1.0).abs() < 1e-12);
    }

    fn table_row(t1: f64, td: f64, t2: f64, tof: f64) -> HalfLoopSequence {
        HalfLoopSequence {
            t_drop: DEFAULT_DROP,
            t_split: t1 * 1e-6,
            t_delay: td * 1e-6,
            t_stop: t2 * 1e-6,
            tof: tof * 1e-6,
            z_trap: 87.5e-6,
            current: 0.86,
            stop_current: None,
        }
    }

    fn loop80(scheme: Scheme, current: f64) -> FullLoopSequence {
        FullLoopSequence {
            t_d0: 0.9e-3,
            t1: 6e-6,
            t_d1: 300e-6,
            t2: 6e-6,
            t3: 6e-6,
            t_d2: 300e-6,
            t4: 6e-6,
            tof: 650e-6,
            t_ramsey: 1290e-6,
            z0_trap: 80e-6,
            current,
            scheme,
            echo: Echo::OnePi,
        }
    }

    fn scan_times() -> Vec<f64> {
        (0..=160).map(|i| 4e-6 + i as f64 * 0.1e-6).collect()
    }

    #[test]
    fn fringe_phase_is_linear_in_splitting_current() {
        let currents: Vec<f64> = (0..9).map(|i| 0.84 + 0.005 * i as f64).collect();
        let mut slopes = Vec::new();
        for (t1, td, t2, tof) in [(6.0, 174.0, 150.0, 6750.0), (10.0, 90.0, 220.0, 12760.0), (16.0, 114.0, 200.0, 13800.0)] {
            let phases = half_loop_phase_scan(&table_row(t1, td, t2, tof), &currents, &chip(), &Setup::default()).unwrap();
            let n = currents.len() as f64;
            let (mx, my) = (currents.iter().sum::<f64>() / n, phases.iter().sum::<f64>() / n);
            let sxy: f64 = currents.iter().zip(&phases).map(|(x, y)| (x - mx) * (y - my)).sum();
            let sxx: f64 = currents.iter().map(|x| (x - mx).powi(2)).sum();
            let slope = sxy / sxx;
            let worst = currents.iter().zip(&phases).map(|(x, y)| (y - my - slope * (x - mx)).abs()).fold(0.0, f64::max);
            assert!(worst < 0.05 * (slope * 0.04).abs(), "T1 {t1}: nonlinearity {worst} rad");
            slopes.push((slope / t1).abs());
        }
        let mean = slopes.iter().sum::<f64>() / slopes.len() as f64;
        for s in &slopes {
            assert!((s / mean - 1.0).abs() < 0.05, "{slopes:?}");
        }
        assert!((mean / 6.49 - 1.0).abs() < 0.2, "{mean} rad/A/us");
    }

    #[test]
    fn far_field_period_matches_measured_separation() {
        let seq = table_row(10.0, 90.0, 220.0, 12760.0);
        let run = run_half_loop(&seq, &NoiseInjection { shots: 1, ..Default::default() }, &chip(), &Setup::default()).unwrap();
        let c = PhysicalConstants::default();
        let lambda_exp = 2.0 * PI * c.hbar * seq.tof / (c.mass_rb87 * 1.31e-6);
        assert!((run.period / lambda_exp - 1.0).abs() < 0.04, "{} vs {}", run.period, lambda_exp);
    }

    #[test]
    fn fringe_phase_ignores_initial_position() {
        let noise = NoiseInjection { initial_pos_std: 1.5e-6, shots: 24, seed: 11, ..Default::default() };
        let run = run_half_loop(&table_row(4.0, 116.0, 200.0, 6760.0), &noise, &chip(), &Setup::default()).unwrap();
        let phases: Vec<f64> = run.shot_fits.iter().map(|f| f.as_ref().expect("fit fell back to FFT").phase).collect();
        let r = phases[0];
        let wrapped: Vec<f64> = phases.iter().map(|p| (p - r + PI).rem_euclid(2.0 * PI) - PI).collect();
        let m = wrapped.iter().sum::<f64>() / wrapped.len() as f64;
        let std = (wrapped.iter().map(|p| (p - m).powi(2)).sum::<f64>() / (wrapped.len() - 1) as f64).sqrt();
        assert!(std < 0.02, "phase std {std}");
    }

    #[test]
    fn reverse_time_scan_is_an_enveloped_sine_off_the_symmetric_point() {
        for scheme in [Scheme::CurrentInversion, Scheme::SpinInversion] {
            let seq = loop80(scheme, 0.86);
            let scan = run_full_loop_scan(&seq, &scan_times(), 0.0, &chip(), &Setup::default()).unwrap();
            let best = scan.iter().max_by(|a, b| a.visibility.total_cmp(&b.visibility)).unwrap();
            let samples: Vec<(f64, f64)> = scan.iter().map(|p| (p.reverse_time, p.population)).collect();
            let fit = fit_envelope_sine(&samples).unwrap();
            assert!(fit.r_squared > 0.95, "{scheme:?} R² {}", fit.r_squared);
            assert!((fit.t_peak - best.reverse_time).abs() < 2e-6, "{scheme:?}: {} vs {}", fit.t_peak, best.reverse_time);
            assert!((best.reverse_time - seq.t1 - seq.t4).abs() > 0.5e-6, "{scheme:?} peak on the symmetric point");
        }
    }

    #[test]
    fn envelope_narrows_with_splitting_momentum() {
        let width = |current: f64| {
            let scan = run_full_loop_scan(&loop80(Scheme::CurrentInversion, current), &scan_times(), 0.0, &chip(), &Setup::default()).unwrap();
            let samples: Vec<(f64, f64)> = scan.iter().map(|p| (p.reverse_time, p.population)).collect();
            fit_envelope_sine(&samples).unwrap().width.abs()
        };
        let (w_low, w_high) = (width(0.6), width(0.86));
        assert!(w_high < w_low, "{w_low} {w_high}");
    }

    #[test]
    fn optimizer_agrees_with_scan_and_more_freedom_never_hurts() {
        let seq = loop80(Scheme::CurrentInversion, 0.86);
        let scan = run_full_loop_scan(&seq, &scan_times(), 0.0, &chip(), &Setup::default()).unwrap();
        let best = scan.iter().max_by(|a, b| a.visibility.total_cmp(&b.visibility)).unwrap();
        let rev = ParamRange { param: FreeParam::ReverseTime, lo: 8e-6, hi: 18e-6 };
        let one = optimize_sequence(&seq, &[rev], 11, &chip(), &Setup::default()).unwrap();
        assert!((one.sequence.reverse_time() - best.reverse_time).abs() < 0.2e-6);
        assert!(one.visibility >= best.visibility - 1e-6);
        let t4 = ParamRange { param: FreeParam::T4, lo: 4e-6, hi: 8e-6 };
        let two = optimize_sequence(&one.sequence, &[rev, t4], 7, &chip(), &Setup::default()).unwrap();
        assert!(two.visibility >= one.visibility - 1e-9, "{} < {}", two.visibility, one.visibility);
    }
}
