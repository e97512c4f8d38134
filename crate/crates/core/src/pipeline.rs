//! Config-driven table builders behind the command-line subcommands.
//!
//! Each builder takes the config text and returns the artifacts to write plus the rows that
//! failed. Nothing here touches the filesystem.

use crate::constants::PhysicalConstants;
use crate::dynamics::{GaussianMode, TrajectoryRow};
use crate::error::{ScenarioError, SimError};
use crate::field::{Chip, ChipGeometry, WireModel};
use crate::fringe::fit_envelope_sine;
use crate::hd::{
    hd_visibility_gaussian, hd_visibility_tf_momentum, hd_visibility_tf_momentum_gaussian, hd_visibility_tf_position, tf_displacement_overlap,
    tf_momentum_width_factor, tf_position_width_factor, TF_CURVATURE_MATCHED_WIDTH, TF_GAUSSIAN_WIDTH, TF_POSITION_WIDTH_REFERENCE,
};
use crate::quantum::{Correlation, RandomVectorModel};
use crate::report::{num, Table};
use crate::sequence::{
    half_loop_analytic, half_loop_nominal, run_full_loop, run_full_loop_scan, run_half_loop, trace_full_loop, trace_half_loop, parse_scenarios, with_reverse_time, FreeParam,
    FullLoopSequence, HalfLoopRun, HalfLoopSequence, Scenario, ScenarioKind, Setup,
};
use crate::wigner::{wigner_of_pair, wigner_superposition, PhaseGrid, WignerMap};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Inputs that are not part of the config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    /// Replaces every scenario seed (and the config seed).
    pub seed: Option<u64>,
    /// Keeps scenarios whose label or set name equals this.
    pub scenario: Option<String>,
    /// Hash of the config bytes, echoed into every CSV.
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Artifact {
    Csv(Table),
    Json(Value),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub label: String,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CommandOutput {
    /// File name and content, in writing order.
    pub artifacts: Vec<(String, Artifact)>,
    pub failures: Vec<Failure>,
}

impl CommandOutput {
    fn fail(&mut self, label: impl Into<String>, e: impl ToString) {
        self.failures.push(Failure { label: label.into(), error: e.to_string() });
    }

    fn csv(&mut self, name: impl Into<String>, t: Table) {
        self.artifacts.push((name.into(), Artifact::Csv(t)));
    }

    fn json(&mut self, name: impl Into<String>, v: Value) {
        self.artifacts.push((name.into(), Artifact::Json(v)));
    }
}

fn strip_default() -> WireModel {
    WireModel::Strip
}

/// Chip and atom-cloud settings shared by the sequence commands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub geometry: ChipGeometry,
    #[serde(default = "strip_default")]
    pub wire_model: WireModel,
    pub setup: Setup,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { geometry: ChipGeometry::default(), wire_model: WireModel::Strip, setup: Setup::default() }
    }
}

impl ModelConfig {
    fn chip(&self) -> Result<Chip, SimError> {
        Ok(Chip::new(self.geometry, self.wire_model)?)
    }
}

fn config_error(path: &str, e: serde_json::Error) -> SimError {
    SimError::Scenario(ScenarioError::Parse { path: path.into(), line: e.line(), column: e.column(), msg: e.to_string() })
}

fn provenance(t: Table, command: &str, opts: &RunOptions, seed: u64) -> Table {
    t.meta("tool", format!("sgisim {TOOL_VERSION}")).meta("command", command).meta("config_sha256", &opts.config_hash).meta("seed", seed)
}

/// Scenarios after the label filter, with the seed override applied.
fn select(text: &str, path: &str, opts: &RunOptions) -> Result<Vec<Scenario>, SimError> {
    let all = parse_scenarios(text, path)?;
    let total = all.len();
    let mut chosen: Vec<Scenario> = all
        .into_iter()
        .filter(|s| opts.scenario.as_ref().is_none_or(|f| *f == s.label || s.set.as_deref() == Some(f.as_str())))
        .collect();
    if let Some(f) = &opts.scenario {
        if chosen.is_empty() && total > 0 {
            return Err(SimError::Config(format!("no scenario has label or set \"{f}\"")));
        }
    }
    if let Some(seed) = opts.seed {
        for s in &mut chosen {
            s.seed = seed;
            s.noise.seed = seed;
        }
    }
    Ok(chosen)
}

fn file_stem(label: &str) -> String {
    label.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' }).collect()
}

fn trajectory_table(rows: &[TrajectoryRow], head: Table) -> Table {
    let mut t = head;
    t.header = ["t_us", "z1_um", "z2_um", "p1_hbar_per_um", "p2_hbar_per_um", "lambda_z1", "lambda_z2", "phase_diff_rad"].iter().map(|s| s.to_string()).collect();
    let hbar = PhysicalConstants::default().hbar;
    for r in rows {
        t.push(vec![num(r.t * 1e6), num(r.z1 * 1e6), num(r.z2 * 1e6), num(r.p1 / hbar * 1e-6), num(r.p2 / hbar * 1e-6), num(r.lambda_z1), num(r.lambda_z2), num(r.phase_diff)]);
    }
    t
}

/// Settings of the random-vector columns of the half-loop table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomVectorConfig {
    pub enabled: bool,
    pub epsilon: f64,
    pub shots_zero_corr: usize,
    pub shots_inf_corr: usize,
    pub model: RandomVectorModel,
}

impl Default for RandomVectorConfig {
    fn default() -> Self {
        Self { enabled: true, epsilon: 1e-2, shots_zero_corr: 50, shots_inf_corr: 1000, model: RandomVectorModel::default() }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct HalfLoopConfig {
    #[allow(dead_code)]
    scenarios: Value,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    model: ModelConfig,
    #[serde(default)]
    random_vector: RandomVectorConfig,
    #[serde(default)]
    trajectories: bool,
}

pub const HALF_LOOP_COLUMNS: [&str; 22] = [
    "T1_us",
    "V_analytic",
    "V_mc",
    "V_mc_stderr",
    "V_randomvector_zero_corr",
    "V_randomvector_inf_corr",
    "label",
    "set",
    "t_drop_us",
    "Td_us",
    "T2_us",
    "TOF_us",
    "current_mA",
    "stop_current_mA",
    "z_trap_um",
    "rel_current_std",
    "pulse_timing_jitter_us",
    "initial_pos_std_um",
    "phase_std_rad",
    "shots",
    "seed",
    "separation_um",
];

fn random_vector_columns(cfg: &RandomVectorConfig, times: &[f64], seed: u64, out: &mut CommandOutput) -> Vec<(f64, [f64; 2])> {
    let mut unique: Vec<f64> = times.iter().copied().filter(|t| *t > 0.0).collect();
    unique.sort_by(f64::total_cmp);
    unique.dedup();
    if !cfg.enabled || unique.is_empty() {
        return Vec::new();
    }
    let mut cols: Vec<(f64, [f64; 2])> = unique.iter().map(|t| (*t, [f64::NAN; 2])).collect();
    for (slot, (corr, shots)) in [(Correlation::Zero, cfg.shots_zero_corr), (Correlation::Infinite, cfg.shots_inf_corr)].into_iter().enumerate() {
        match cfg.model.ensemble(&unique, cfg.epsilon, corr, shots, seed) {
            Ok(points) => {
                for (c, p) in cols.iter_mut().zip(points) {
                    c.1[slot] = p.visibility;
                }
            }
            Err(e) => out.fail(format!("random_vector/{corr:?}"), e),
        }
    }
    cols
}

#[derive(Serialize)]
struct HalfLoopReport<'a> {
    label: &'a str,
    seed: u64,
    sequence: &'a HalfLoopSequence,
    nominal: &'a crate::sequence::HalfLoopNominal,
    period_um: f64,
    visibility: &'a crate::noise::VisibilityEstimate,
    error_bar: &'a crate::noise::ErrorBar,
    multishot_raw: f64,
    multishot_fit: &'a Option<crate::fringe::FringeFit>,
    single_shot_mean: f64,
    fits_fell_back: usize,
}

/// Multishot visibility versus splitting time for every half-loop scenario:
/// `visibility_vs_T1.csv`, `half_loop_fits.json`, and optional trajectories.
pub fn half_loop(text: &str, path: &str, opts: &RunOptions) -> Result<CommandOutput, SimError> {
    let cfg: HalfLoopConfig = serde_json::from_str(text).map_err(|e| config_error(path, e))?;
    let scenarios = select(text, path, opts)?;
    let seed = opts.seed.unwrap_or(cfg.seed);
    let chip = cfg.model.chip()?;
    let setup = cfg.model.setup;
    let mut out = CommandOutput::default();

    let halves: Vec<(&Scenario, HalfLoopSequence)> = scenarios
        .iter()
        .filter_map(|s| match s.kind {
            ScenarioKind::Half(h) => Some((s, h)),
            ScenarioKind::Full(_) => None,
        })
        .collect();
    for s in scenarios.iter().filter(|s| matches!(s.kind, ScenarioKind::Full(_))) {
        out.fail(&s.label, "full-loop scenario passed to half-loop");
    }
    let times: Vec<f64> = halves.iter().map(|(_, h)| h.t_split).collect();
    let rv = random_vector_columns(&cfg.random_vector, &times, seed, &mut out);
    let rv_at = |t: f64| rv.iter().find(|(u, _)| *u == t).map_or([f64::NAN; 2], |c| c.1);

    let mut table = provenance(Table::new(&HALF_LOOP_COLUMNS), "half-loop", opts, seed)
        .meta("random_vector_epsilon", if cfg.random_vector.enabled { num(cfg.random_vector.epsilon) } else { "disabled".into() });
    let mut reports = Vec::new();
    let mut traces = Vec::new();
    for (s, h) in &halves {
        let run: Result<(HalfLoopRun, f64), SimError> = run_half_loop(h, &s.noise, &chip, &setup)
            .and_then(|r| half_loop_analytic(h, &r.nominal, s.noise.rel_current_std, &chip).map(|a| (r, a)));
        let (run, analytic) = match run {
            Ok(v) => v,
            Err(e) => {
                out.fail(&s.label, e);
                continue;
            }
        };
        let [rv0, rv_inf] = rv_at(h.t_split);
        let n = &s.noise;
        table.push(vec![
            num(h.t_split * 1e6),
            num(analytic),
            num(run.visibility.value),
            num(run.visibility.uncertainty),
            num(rv0),
            num(rv_inf),
            s.label.clone(),
            s.set.clone().unwrap_or_default(),
            num(h.t_drop * 1e6),
            num(h.t_delay * 1e6),
            num(h.t_stop * 1e6),
            num(h.tof * 1e6),
            num(h.current * 1e3),
            num(run.nominal.stop_current * 1e3),
            num(h.z_trap * 1e6),
            num(n.rel_current_std),
            num(n.pulse_timing_jitter * 1e6),
            num(n.initial_pos_std * 1e6),
            num(n.phase_std),
            n.shots.to_string(),
            s.seed.to_string(),
            num(run.nominal.separation * 1e6),
        ]);
        let mean = run.single_shot.iter().sum::<f64>() / run.single_shot.len() as f64;
        reports.push(serde_json::to_value(HalfLoopReport {
            label: &s.label,
            seed: s.seed,
            sequence: h,
            nominal: &run.nominal,
            period_um: run.period * 1e6,
            visibility: &run.visibility,
            error_bar: &run.error_bar,
            multishot_raw: run.multishot_raw,
            multishot_fit: &run.multishot_fit,
            single_shot_mean: mean,
            fits_fell_back: run.shot_fits.iter().filter(|f| f.is_none()).count(),
        })
        .map_err(|e| SimError::Config(e.to_string()))?);
        if cfg.trajectories {
            match trace_half_loop(h, &chip, &setup) {
                Ok(rows) => traces.push((format!("trajectory_{}.csv", file_stem(&s.label)), trajectory_table(&rows, provenance(Table::default(), "half-loop", opts, s.seed).meta("label", &s.label)))),
                Err(e) => out.fail(format!("{}/trajectory", s.label), e),
            }
        }
    }
    out.csv("visibility_vs_T1.csv", table);
    out.json("half_loop_fits.json", Value::Array(reports));
    for (name, t) in traces {
        out.csv(name, t);
    }
    Ok(out)
}

fn scan_default_phase() -> f64 {
    0.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    pub start_us: f64,
    pub stop_us: f64,
    pub step_us: f64,
    #[serde(default = "scan_default_phase")]
    pub analysis_phase_rad: f64,
}

impl ScanConfig {
    fn times(&self) -> Result<Vec<f64>, SimError> {
        if !(self.step_us > 0.0 && self.stop_us >= self.start_us) {
            return Err(SimError::Config("scan needs step_us > 0 and stop_us ≥ start_us".into()));
        }
        let n = ((self.stop_us - self.start_us) / self.step_us + 1e-9).floor() as usize + 1;
        if n > 100_000 {
            return Err(SimError::Config(format!("scan of {n} points exceeds 100000")));
        }
        Ok((0..n).map(|i| (self.start_us + i as f64 * self.step_us) * 1e-6).collect())
    }
}

fn sigma_z_default() -> f64 {
    1.2
}

fn sigma_v_default() -> f64 {
    0.3
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FullLoopConfig {
    #[allow(dead_code)]
    scenarios: Value,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    model: ModelConfig,
    #[serde(default = "sigma_z_default")]
    sigma_z_um: f64,
    #[serde(default = "sigma_v_default")]
    sigma_v_mm_s: f64,
    /// Offsets of T2+T3 from each scenario's value for the position-mismatch table, μs.
    #[serde(default)]
    reverse_offsets_us: Vec<f64>,
    /// Offsets of T4 from each scenario's value for the momentum-mismatch table, μs.
    #[serde(default)]
    t4_offsets_us: Vec<f64>,
    #[serde(default)]
    scan: Option<ScanConfig>,
    #[serde(default)]
    trajectories: bool,
}

pub const MISMATCH_COLUMNS: [&str; 18] = [
    "label",
    "set",
    "scheme",
    "echo",
    "T23_us",
    "T4_us",
    "dz_um",
    "dz_over_sigma_z",
    "dv_mm_s",
    "dv_over_sigma_v",
    "V",
    "V_hd_gaussian",
    "phase_rad",
    "current_mA",
    "z0_um",
    "z_uncertainty_um",
    "sigma_z_um",
    "sigma_v_mm_s",
];

pub const SCAN_COLUMNS: [&str; 9] = ["label", "T23_us", "T2_us", "T3_us", "Td2_us", "population", "visibility", "phase_rad", "analysis_phase_rad"];

fn mismatch_row(s: &Scenario, seq: &FullLoopSequence, cfg: &FullLoopConfig, chip: &Chip) -> Result<Vec<String>, SimError> {
    let run = run_full_loop(seq, chip, &cfg.model.setup)?;
    let c = PhysicalConstants::default();
    let dz = run.final_separation.abs();
    let dv = run.final_momentum.abs() / c.mass_rb87;
    let (sz, sv) = (cfg.sigma_z_um * 1e-6, cfg.sigma_v_mm_s * 1e-3);
    Ok(vec![
        s.label.clone(),
        s.set.clone().unwrap_or_default(),
        format!("{:?}", seq.scheme),
        format!("{:?}", seq.echo),
        num(seq.reverse_time() * 1e6),
        num(seq.t4 * 1e6),
        num(dz * 1e6),
        num(dz / sz),
        num(dv * 1e3),
        num(dv / sv),
        num(run.estimate.value),
        num(hd_visibility_gaussian(sz, dv * c.mass_rb87, sv * c.mass_rb87, dz)),
        num(run.overlap.arg()),
        num(seq.current * 1e3),
        num(seq.z0_trap * 1e6),
        s.z_uncertainty.map_or_else(String::new, |u| num(u * 1e6)),
        num(cfg.sigma_z_um),
        num(cfg.sigma_v_mm_s),
    ])
}

/// Full-loop visibility against final position and velocity mismatch, and the T2+T3 scan:
/// `visibility_vs_dz.csv`, `visibility_vs_dp.csv`, `scan_population.csv`, `scan_fits.json`.
pub fn full_loop(text: &str, path: &str, opts: &RunOptions) -> Result<CommandOutput, SimError> {
    let cfg: FullLoopConfig = serde_json::from_str(text).map_err(|e| config_error(path, e))?;
    if !(cfg.sigma_z_um > 0.0 && cfg.sigma_v_mm_s > 0.0) {
        return Err(SimError::Config("sigma_z_um and sigma_v_mm_s must be positive".into()));
    }
    let scenarios = select(text, path, opts)?;
    let seed = opts.seed.unwrap_or(cfg.seed);
    let chip = cfg.model.chip()?;
    let times = cfg.scan.map(|s| s.times()).transpose()?;
    let mut out = CommandOutput::default();
    let head = |t: Table| {
        provenance(t, "full-loop", opts, seed).meta("sigma_z_um", num(cfg.sigma_z_um)).meta("sigma_v_mm_s", num(cfg.sigma_v_mm_s))
    };
    let mut dz_table = head(Table::new(&MISMATCH_COLUMNS));
    let mut dp_table = head(Table::new(&MISMATCH_COLUMNS));
    let mut scan_table = provenance(Table::new(&SCAN_COLUMNS), "full-loop", opts, seed);
    let mut fits = Vec::new();
    let mut traces = Vec::new();
    for s in &scenarios {
        let ScenarioKind::Full(seq) = s.kind else {
            out.fail(&s.label, "half-loop scenario passed to full-loop");
            continue;
        };
        let rows = |variants: Vec<(String, FullLoopSequence)>, table: &mut Table, out: &mut CommandOutput| {
            for (tag, v) in variants {
                let checked = v.validate(&s.label).map_err(SimError::from).and_then(|_| mismatch_row(s, &v, &cfg, &chip));
                match checked {
                    Ok(row) => table.push(row),
                    Err(e) => out.fail(format!("{}{tag}", s.label), e),
                }
            }
        };
        let mut dz_variants = vec![(String::new(), seq)];
        dz_variants.extend(cfg.reverse_offsets_us.iter().map(|r| (format!("@T23{r:+}us"), with_reverse_time(&seq, seq.reverse_time() + r * 1e-6))));
        rows(dz_variants, &mut dz_table, &mut out);
        let mut dp_variants = vec![(String::new(), seq)];
        dp_variants.extend(cfg.t4_offsets_us.iter().map(|t| (format!("@T4{t:+}us"), FreeParam::T4.set(&seq, seq.t4 + t * 1e-6))));
        rows(dp_variants, &mut dp_table, &mut out);

        if let (Some(ts), Some(sc)) = (&times, cfg.scan) {
            match run_full_loop_scan(&seq, ts, sc.analysis_phase_rad, &chip, &cfg.model.setup) {
                Ok(points) => {
                    for p in &points {
                        scan_table.push(vec![
                            s.label.clone(),
                            num(p.reverse_time * 1e6),
                            num(p.t2 * 1e6),
                            num(p.t3 * 1e6),
                            num(p.t_d2 * 1e6),
                            num(p.population),
                            num(p.visibility),
                            num(p.phase),
                            num(sc.analysis_phase_rad),
                        ]);
                    }
                    let best = points.iter().max_by(|a, b| a.visibility.total_cmp(&b.visibility));
                    let samples: Vec<(f64, f64)> = points.iter().map(|p| (p.reverse_time * 1e6, p.population)).collect();
                    let fit = match fit_envelope_sine(&samples) {
                        Ok(f) => json!({"t_peak_us": f.t_peak, "t_peak_err_us": f.t_peak_err, "width_us": f.width.abs(), "omega_rad_per_us": f.omega, "phase_rad": f.phase, "amplitude": f.amplitude, "offset": f.offset, "r_squared": f.r_squared}),
                        Err(e) => json!({"error": e.to_string()}),
                    };
                    fits.push(json!({
                        "label": s.label,
                        "symmetric_point_us": (seq.t1 + seq.t4) * 1e6,
                        "overlap_peak_us": best.map(|b| b.reverse_time * 1e6),
                        "overlap_peak_visibility": best.map(|b| b.visibility),
                        "fit": fit,
                    }));
                }
                Err(e) => out.fail(format!("{}/scan", s.label), e),
            }
        }
        if cfg.trajectories {
            match trace_full_loop(&seq, &chip, &cfg.model.setup) {
                Ok((_, rows)) => traces.push((format!("trajectory_{}.csv", file_stem(&s.label)), trajectory_table(&rows, provenance(Table::default(), "full-loop", opts, seed).meta("label", &s.label)))),
                Err(e) => out.fail(format!("{}/trajectory", s.label), e),
            }
        }
    }
    out.csv("visibility_vs_dz.csv", dz_table);
    out.csv("visibility_vs_dp.csv", dp_table);
    out.csv("scan_population.csv", scan_table);
    out.json("scan_fits.json", Value::Array(fits));
    for (name, t) in traces {
        out.csv(name, t);
    }
    Ok(out)
}

/// Evenly spaced values, endpoints included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Span {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

impl Span {
    fn values(&self) -> Result<Vec<f64>, SimError> {
        if self.points == 0 || self.points > 1_000_000 || !(self.stop >= self.start) {
            return Err(SimError::Config("span needs 1 to 1e6 points and stop ≥ start".into()));
        }
        Ok((0..self.points)
            .map(|i| if self.points == 1 { self.start } else { self.start + (self.stop - self.start) * i as f64 / (self.points - 1) as f64 })
            .collect())
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct HdConfig {
    sigma_z_um: f64,
    /// TF half-length; by default the one whose 0.41-width Gaussian equals sigma_z.
    z_max_um: Option<f64>,
    dp_over_sigma_p: Span,
    dz_over_sigma_z: Span,
    seed: u64,
}

impl Default for HdConfig {
    fn default() -> Self {
        let span = Span { start: 0.0, stop: 6.0, points: 121 };
        Self { sigma_z_um: 1.2, z_max_um: None, dp_over_sigma_p: span, dz_over_sigma_z: span, seed: 0 }
    }
}

/// Recombination visibility laws for Gaussian and Thomas-Fermi packets: `hd_vs_dp.csv`,
/// `hd_vs_dz.csv`, `hd_constants.json`.
pub fn hd_curves(text: &str, path: &str, opts: &RunOptions) -> Result<CommandOutput, SimError> {
    let cfg: HdConfig = serde_json::from_str(text).map_err(|e| config_error(path, e))?;
    let sz = cfg.sigma_z_um * 1e-6;
    let z_max = cfg.z_max_um.map_or(sz / TF_GAUSSIAN_WIDTH, |z| z * 1e-6);
    if !(sz > 0.0 && z_max > 0.0) {
        return Err(SimError::Config("sigma_z_um and z_max_um must be positive".into()));
    }
    let hbar = PhysicalConstants::default().hbar;
    let sp = hbar / (2.0 * sz);
    let seed = opts.seed.unwrap_or(cfg.seed);
    let position_factor = tf_position_width_factor();
    let momentum_factor = tf_momentum_width_factor();
    let head = |t: Table| {
        provenance(t, "hd-curves", opts, seed)
            .meta("sigma_z_um", num(cfg.sigma_z_um))
            .meta("z_max_um", num(z_max * 1e6))
            .meta("tf_position_width_factor", num(position_factor))
            .meta("tf_momentum_width_factor", num(momentum_factor))
    };
    let mut dp = head(Table::new(&["dp_over_sigma_p", "dk_per_um", "V_gaussian", "V_tf", "V_tf_gaussian_041", "V_tf_gaussian_fit", "tf_over_gaussian"]));
    for x in cfg.dp_over_sigma_p.values()? {
        let p = x * sp;
        let (g, tf) = (hd_visibility_gaussian(sz, p, sp, 0.0), hd_visibility_tf_momentum(z_max, p));
        dp.push(vec![
            num(x),
            num(p / hbar * 1e-6),
            num(g),
            num(tf),
            num(hd_visibility_tf_momentum_gaussian(z_max, p, TF_GAUSSIAN_WIDTH)),
            num(hd_visibility_tf_momentum_gaussian(z_max, p, momentum_factor)),
            num(if g > 0.0 { tf / g } else { f64::NAN }),
        ]);
    }
    let mut dz = head(Table::new(&["dz_over_sigma_z", "dz_um", "V_gaussian", "V_tf_exact", "V_tf_gaussian_fit"]));
    for x in cfg.dz_over_sigma_z.values()? {
        let d = x * sz;
        dz.push(vec![num(x), num(d * 1e6), num(hd_visibility_gaussian(sz, 0.0, sp, d)), num(tf_displacement_overlap(d / z_max)), num(hd_visibility_tf_position(z_max, d))]);
    }
    let mut out = CommandOutput::default();
    out.csv("hd_vs_dp.csv", dp);
    out.csv("hd_vs_dz.csv", dz);
    out.json(
        "hd_constants.json",
        json!({
            "tf_position_width_factor": position_factor,
            "tf_position_width_reference": TF_POSITION_WIDTH_REFERENCE,
            "tf_momentum_width_factor": momentum_factor,
            "tf_gaussian_width": TF_GAUSSIAN_WIDTH,
            "tf_curvature_matched_width": TF_CURVATURE_MATCHED_WIDTH,
            "sigma_z_um": cfg.sigma_z_um,
            "z_max_um": z_max * 1e6,
        }),
    );
    Ok(out)
}

/// One packet of an explicit superposition, in μm units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeSpec {
    pub center_um: f64,
    #[serde(default)]
    pub k_per_um: f64,
    pub width_um: f64,
    #[serde(default)]
    pub curvature_per_um2: f64,
    #[serde(default = "unit")]
    pub weight_re: f64,
    #[serde(default)]
    pub weight_im: f64,
}

fn unit() -> f64 {
    1.0
}

impl ModeSpec {
    fn mode(&self) -> GaussianMode {
        GaussianMode { center: self.center_um * 1e-6, k: self.k_per_um * 1e6, width: self.width_um * 1e-6, curvature: self.curvature_per_um2 * 1e12 }
    }
}

/// Grid in μm and 1/μm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub z_min_um: f64,
    pub z_max_um: f64,
    pub nz: usize,
    pub k_min_per_um: f64,
    pub k_max_per_um: f64,
    pub nk: usize,
}

impl GridSpec {
    fn grid(&self) -> PhaseGrid {
        PhaseGrid { z_min: self.z_min_um * 1e-6, z_max: self.z_max_um * 1e-6, nz: self.nz, k_min: self.k_min_per_um * 1e6, k_max: self.k_max_per_um * 1e6, nk: self.nk }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct WignerConfig {
    /// Explicit packets; the superposition is normalized before evaluation.
    #[serde(default)]
    modes: Vec<ModeSpec>,
    /// Alternatively scenarios: half loops give the pair at the end of the stopping pulse,
    /// full loops the final pair.
    #[serde(default)]
    scenarios: Option<Value>,
    #[serde(default)]
    model: ModelConfig,
    #[serde(default)]
    grid: Option<GridSpec>,
    #[serde(default = "default_cells")]
    auto_points: usize,
    #[serde(default)]
    seed: u64,
}

fn default_cells() -> usize {
    201
}

/// Window covering every packet by five widths, in position and wavevector.
fn auto_grid(modes: &[GaussianMode], n: usize) -> PhaseGrid {
    let z_lo = modes.iter().map(|m| m.center - 5.0 * m.width).fold(f64::INFINITY, f64::min);
    let z_hi = modes.iter().map(|m| m.center + 5.0 * m.width).fold(f64::NEG_INFINITY, f64::max);
    let k_reach = |m: &GaussianMode| 5.0 / (2.0 * m.width) + 2.0 * m.curvature.abs() * 5.0 * m.width;
    let k_lo = modes.iter().map(|m| m.k - k_reach(m)).fold(f64::INFINITY, f64::min);
    let k_hi = modes.iter().map(|m| m.k + k_reach(m)).fold(f64::NEG_INFINITY, f64::max);
    PhaseGrid { z_min: z_lo, z_max: z_hi, nz: n, k_min: k_lo, k_max: k_hi, nk: n }
}

fn wigner_table(map: &WignerMap, head: Table) -> Table {
    let mut t = head;
    t.header = ["z_um", "k_per_um", "wigner"].iter().map(|s| s.to_string()).collect();
    let g = &map.grid;
    for i in 0..g.nz {
        for j in 0..g.nk {
            t.push(vec![num(g.z(i) * 1e6), num(g.k(j) * 1e-6), num(map.at(i, j))]);
        }
    }
    t
}

/// Wigner function of a two-packet state on a (z, k) grid: `wigner.csv` for explicit modes,
/// `wigner_<label>.csv` per scenario.
pub fn wigner_export(text: &str, path: &str, opts: &RunOptions) -> Result<CommandOutput, SimError> {
    use crate::dynamics::axis_mode;
    let cfg: WignerConfig = serde_json::from_str(text).map_err(|e| config_error(path, e))?;
    let seed = opts.seed.unwrap_or(cfg.seed);
    let mut out = CommandOutput::default();
    let head = || provenance(Table::default(), "wigner-export", opts, seed);
    if !cfg.modes.is_empty() {
        let modes: Vec<GaussianMode> = cfg.modes.iter().map(ModeSpec::mode).collect();
        let weights: Vec<Complex64> = cfg.modes.iter().map(|m| Complex64::new(m.weight_re, m.weight_im)).collect();
        let mut norm = 0.0;
        for (i, (wi, mi)) in weights.iter().zip(&modes).enumerate() {
            for (wj, mj) in weights.iter().zip(&modes).skip(i) {
                let term = (wi.conj() * wj * crate::dynamics::gaussian_overlap(mi, mj)).re;
                norm += if std::ptr::eq(mi, mj) { term } else { 2.0 * term };
            }
        }
        if !(norm > 0.0) {
            return Err(SimError::Config("mode weights give a zero state".into()));
        }
        let terms: Vec<(Complex64, GaussianMode)> = weights.iter().map(|w| w / norm.sqrt()).zip(modes.iter().copied()).collect();
        let grid = cfg.grid.map_or_else(|| auto_grid(&modes, cfg.auto_points), |g| g.grid());
        let map = wigner_superposition(&terms, &grid)?;
        out.csv("wigner.csv", wigner_table(&map, head()));
    }
    if cfg.scenarios.is_some() {
        let chip = cfg.model.chip()?;
        let setup = cfg.model.setup;
        for s in select(text, path, opts)? {
            let pair = match s.kind {
                ScenarioKind::Half(h) => half_loop_nominal(&h, &chip, &setup).map(|(_, pair)| pair),
                ScenarioKind::Full(f) => run_full_loop(&f, &chip, &setup).map(|r| r.final_states),
            };
            let result = pair.and_then(|[a, b]| {
                let c = PhysicalConstants::default();
                let grid = cfg.grid.map_or_else(|| auto_grid(&[axis_mode(&a, 2, &c), axis_mode(&b, 2, &c)], cfg.auto_points), |g| g.grid());
                wigner_of_pair(&a, &b, &grid)
            });
            match result {
                Ok(map) => out.csv(format!("wigner_{}.csv", file_stem(&s.label)), wigner_table(&map, head().meta("label", &s.label))),
                Err(e) => out.fail(&s.label, e),
            }
        }
    }
    if out.artifacts.is_empty() && out.failures.is_empty() {
        return Err(SimError::Config("wigner-export needs `modes` or `scenarios`".into()));
    }
    Ok(out)
}
