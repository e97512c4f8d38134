//! Fringe patterns and the fit models used to read visibility off them.

use crate::error::FitError;
use crate::lm::{golden_section_max, levenberg_marquardt, linear_lsq, LmOptions};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Density sampled on a uniform 1D grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FringePattern {
    pub z_min: f64,
    pub dz: f64,
    pub values: Vec<f64>,
    /// Time at which the pattern is taken, s.
    pub time: f64,
    pub shot: Option<usize>,
}

impl FringePattern {
    pub fn new(z_min: f64, dz: f64, values: Vec<f64>) -> Self {
        Self { z_min, dz, values, time: 0.0, shot: None }
    }

    /// Samples `f` on `n` points starting at `z_min`.
    pub fn from_fn(z_min: f64, dz: f64, n: usize, f: impl Fn(f64) -> f64) -> Self {
        Self::new(z_min, dz, (0..n).map(|i| f(z_min + i as f64 * dz)).collect())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn z(&self, i: usize) -> f64 {
        self.z_min + i as f64 * self.dz
    }

    pub fn z_center(&self) -> f64 {
        self.z_min + 0.5 * (self.len().saturating_sub(1)) as f64 * self.dz
    }

    pub fn same_grid(&self, other: &Self) -> bool {
        self.len() == other.len()
            && (self.z_min - other.z_min).abs() <= 1e-9 * self.dz
            && (self.dz - other.dz).abs() <= 1e-12 * self.dz
    }

    /// Sub-pattern spanning the samples above `rel` times the maximum, padded by 5 % each side.
    pub fn support(&self, rel: f64) -> Self {
        let peak = self.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let above = |v: &f64| v.abs() > rel * peak;
        let (Some(lo), Some(hi)) = (self.values.iter().position(above), self.values.iter().rposition(above)) else {
            return self.clone();
        };
        let pad = (hi - lo) / 20;
        let lo = lo.saturating_sub(pad);
        let hi = (hi + pad).min(self.len() - 1);
        Self { z_min: self.z(lo), values: self.values[lo..=hi].to_vec(), ..self.clone() }
    }

    /// Reads `z_m,density` rows; lines starting with `#` are skipped.
    pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Self, FitError> {
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).has_headers(true).from_reader(reader);
        let mut z = Vec::new();
        let mut v = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| FitError::Input(e.to_string()))?;
            let parse = |i: usize| -> Result<f64, FitError> {
                rec.get(i)
                    .ok_or_else(|| FitError::Input(format!("missing column {i}")))?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| FitError::Input(e.to_string()))
            };
            z.push(parse(0)?);
            v.push(parse(1)?);
        }
        if z.len() < 2 {
            return Err(FitError::TooFewPoints { need: 2, got: z.len() });
        }
        let dz = (z[z.len() - 1] - z[0]) / (z.len() - 1) as f64;
        if dz <= 0.0 || z.windows(2).any(|w| ((w[1] - w[0]) / dz - 1.0).abs() > 1e-6) {
            return Err(FitError::Input("grid is not uniform".into()));
        }
        Ok(Self::new(z[0], dz, v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct FringeFitErrors {
    pub amplitude: f64,
    pub center: f64,
    pub sigma: f64,
    pub visibility: f64,
    pub lambda: f64,
    pub phase: f64,
    pub offset: f64,
    pub chirp: Option<f64>,
}

/// Fit of `A exp(-(z-z0)²/2σ²) [1 + V sin(2π(z-z_ref)/λ + φ + k1 (z-z_ref)²)] + c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FringeFit {
    pub amplitude: f64,
    pub center: f64,
    pub sigma: f64,
    /// Visibility clamped to [0, 1].
    pub visibility: f64,
    /// Unclamped fitted visibility (after folding the sign into the phase).
    pub visibility_raw: f64,
    pub lambda: f64,
    pub phase: f64,
    pub offset: f64,
    pub chirp: Option<f64>,
    pub z_ref: f64,
    pub errors: FringeFitErrors,
    pub r_squared: f64,
    /// ‖residual‖ / ‖data‖.
    pub residual_rel: f64,
}

impl FringeFit {
    pub fn wavevector(&self) -> f64 {
        2.0 * PI / self.lambda
    }

    pub fn eval(&self, z: f64) -> f64 {
        let x = z - self.z_ref;
        let arg = 2.0 * PI * x / self.lambda + self.phase + self.chirp.unwrap_or(0.0) * x * x;
        self.amplitude * (-(z - self.center).powi(2) / (2.0 * self.sigma * self.sigma)).exp() * (1.0 + self.visibility_raw * arg.sin())
            + self.offset
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FitFringeOptions {
    pub chirped: bool,
    /// Skip the spectral period estimate and start from this period, m.
    pub period_guess: Option<f64>,
    /// Starting chirp coefficient, rad/m², used together with `period_guess`.
    pub chirp_guess: Option<f64>,
}

/// Dominant oscillation from the zero-padded spectrum of a pattern.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpectralPeak {
    /// Wavevector, rad/m.
    pub k0: f64,
    /// |F(k0)| / |F(0)|.
    pub ratio: f64,
    /// Phase of the sine component about the grid center.
    pub phase: f64,
}

fn dtft(values: &[f64], z_min: f64, dz: f64, z_ref: f64, k: f64) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    let step = Complex64::from_polar(1.0, -k * dz);
    let mut w = Complex64::from_polar(1.0, -k * (z_min - z_ref));
    for &v in values {
        acc += w * v;
        w *= step;
    }
    acc * dz
}

/// Locates the dominant nonzero spatial frequency. The zero-frequency lobe is skipped by walking
/// down to its first minimum; the peak must exceed 3× the median spectral magnitude beyond it.
pub fn spectral_peak(values: &[f64], z_min: f64, dz: f64) -> Result<SpectralPeak, FitError> {
    let n = values.len();
    if n < 16 {
        return Err(FitError::TooFewPoints { need: 16, got: n });
    }
    let nfft = (4 * n).next_power_of_two();
    let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    buf.resize(nfft, Complex64::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(nfft).process(&mut buf);
    let mag: Vec<f64> = buf[..nfft / 2].iter().map(|c| c.norm()).collect();
    // a baseline-subtracted pattern can have its low-frequency lobe peak slightly off zero
    let mut m0 = 0;
    while m0 + 1 < mag.len() && mag[m0 + 1] > mag[m0] {
        m0 += 1;
    }
    while m0 + 1 < mag.len() && mag[m0 + 1] < mag[m0] {
        m0 += 1;
    }
    if m0 + 3 >= mag.len() {
        return Err(FitError::DegeneratePeriod);
    }
    let tail = &mag[m0..];
    let (ipk, &pk) = tail.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
    let mut sorted = tail.to_vec();
    sorted.sort_by(f64::total_cmp);
    let floor = sorted[sorted.len() / 2];
    if !(pk > 3.0 * floor) || pk <= 0.0 {
        return Err(FitError::DegeneratePeriod);
    }
    let bin = 2.0 * PI / (nfft as f64 * dz);
    let m = (m0 + ipk) as f64;
    let z_ref = z_min + 0.5 * (n - 1) as f64 * dz;
    let lo = ((m - 2.0) * bin).max(0.5 * bin);
    let hi = (m + 2.0) * bin;
    let (k0, fk) = golden_section_max(|k| dtft(values, z_min, dz, z_ref, k).norm(), lo, hi, 1e-9 * hi);
    let f0 = dtft(values, z_min, dz, z_ref, 0.0).norm();
    if f0 <= 0.0 {
        return Err(FitError::DegeneratePeriod);
    }
    let phase = dtft(values, z_min, dz, z_ref, k0).arg() + PI / 2.0;
    Ok(SpectralPeak { k0, ratio: fk / f0, phase })
}

/// Visibility as the ratio of the summed ±k0 Fourier amplitudes to the zero-frequency amplitude.
/// The amplitude at k0 is the maximum of the continuous transform within ±2 padded bins of the
/// discrete peak.
pub fn fft_visibility(pattern: &FringePattern) -> Result<f64, FitError> {
    Ok(2.0 * spectral_peak(&pattern.values, pattern.z_min, pattern.dz)?.ratio)
}

pub fn fit_fringe(pattern: &FringePattern, opts: FitFringeOptions) -> Result<FringeFit, FitError> {
    let n = pattern.len();
    let np = if opts.chirped { 8 } else { 7 };
    if n < 2 * np {
        return Err(FitError::TooFewPoints { need: 2 * np, got: n });
    }
    let z_ref = pattern.z_center();
    let ymax = pattern.values.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    if ymax == 0.0 || !ymax.is_finite() {
        return Err(FitError::Input("pattern is zero or non-finite".into()));
    }
    // offset from the outer 5 % on each side, envelope from moments of what is left
    let edge = (n / 20).max(1);
    let c0 = (pattern.values[..edge].iter().sum::<f64>() + pattern.values[n - edge..].iter().sum::<f64>()) / (2 * edge) as f64;
    let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
    for (i, &v) in pattern.values.iter().enumerate() {
        let w = (v - c0).max(0.0);
        let z = pattern.z(i) - z_ref;
        s0 += w;
        s1 += w * z;
        s2 += w * z * z;
    }
    if s0 <= 0.0 {
        return Err(FitError::Input("no signal above the baseline".into()));
    }
    let zc = s1 / s0;
    let sigma0 = (s2 / s0 - zc * zc).max(pattern.dz * pattern.dz).sqrt();
    let amp0 = s0 * pattern.dz / ((2.0 * PI).sqrt() * sigma0);

    let detrended: Vec<f64> = pattern.values.iter().map(|v| v - c0).collect();
    let (k0, phi0, v0) = match opts.period_guess {
        Some(lambda) if lambda > 0.0 => {
            let k = 2.0 * PI / lambda;
            let f0 = dtft(&detrended, pattern.z_min, pattern.dz, z_ref, 0.0).norm();
            let c = opts.chirp_guess.unwrap_or(0.0);
            let fk: Complex64 = detrended
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    let x = pattern.z(i) - z_ref;
                    Complex64::from_polar(*v, -(k * x + c * x * x))
                })
                .sum::<Complex64>()
                * pattern.dz;
            (k, fk.arg() + PI / 2.0, 2.0 * fk.norm() / f0)
        }
        Some(_) => return Err(FitError::Input("period guess must be positive".into())),
        None => {
            let pk = spectral_peak(&detrended, pattern.z_min, pattern.dz)?;
            (pk.k0, pk.phase, 2.0 * pk.ratio)
        }
    };
    let n_osc = 6.0 * sigma0 * k0 / (2.0 * PI);
    if n_osc < 3.0 {
        return Err(FitError::TooFewOscillations(n_osc));
    }

    // nondimensional: x = (z - z_ref)/L, y/ymax
    let len = sigma0;
    let xs: Vec<f64> = (0..n).map(|i| (pattern.z(i) - z_ref) / len).collect();
    let ys: Vec<f64> = pattern.values.iter().map(|v| v / ymax).collect();
    let mut p0 = vec![amp0 / ymax, zc / len, 1.0, v0.clamp(0.0, 1.0), k0 * len, phi0, c0 / ymax];
    if opts.chirped {
        p0.push(match opts.period_guess {
            Some(_) => opts.chirp_guess.unwrap_or(0.0) * len * len,
            None => 0.0,
        });
    }
    let model = |p: &[f64], x: f64| {
        let chirp = if p.len() > 7 { p[7] * x * x } else { 0.0 };
        p[0] * (-(x - p[1]).powi(2) / (2.0 * p[2] * p[2])).exp() * (1.0 + p[3] * (p[4] * x + p[5] + chirp).sin()) + p[6]
    };
    let fit = levenberg_marquardt(
        |p, r| {
            for i in 0..n {
                r[i] = model(p, xs[i]) - ys[i];
            }
        },
        n,
        &p0,
        LmOptions::default(),
    )?;
    let mut p = fit.params.clone();
    let e = &fit.errors;
    if p[4] < 0.0 {
        p[4] = -p[4];
        p[5] = PI - p[5];
        if opts.chirped {
            p[7] = -p[7];
        }
    }
    if p[3] < 0.0 {
        p[3] = -p[3];
        p[5] += PI;
    }
    let phase = (p[5] + PI).rem_euclid(2.0 * PI) - PI;
    let ss_res = 2.0 * fit.cost;
    let mean = ys.iter().sum::<f64>() / n as f64;
    let ss_tot: f64 = ys.iter().map(|y| (y - mean).powi(2)).sum();
    let ss_y: f64 = ys.iter().map(|y| y * y).sum();
    Ok(FringeFit {
        amplitude: p[0] * ymax,
        center: z_ref + p[1] * len,
        sigma: p[2].abs() * len,
        visibility: p[3].clamp(0.0, 1.0),
        visibility_raw: p[3],
        lambda: 2.0 * PI * len / p[4],
        phase,
        offset: p[6] * ymax,
        chirp: opts.chirped.then(|| p[7] / (len * len)),
        z_ref,
        errors: FringeFitErrors {
            amplitude: e[0] * ymax,
            center: e[1] * len,
            sigma: e[2] * len,
            visibility: e[3],
            lambda: 2.0 * PI * len * e[4] / (p[4] * p[4]),
            phase: e[5],
            offset: e[6] * ymax,
            chirp: opts.chirped.then(|| e[7] / (len * len)),
        },
        r_squared: if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 },
        residual_rel: (ss_res / ss_y).sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RamseyFit {
    pub contrast: f64,
    pub contrast_err: f64,
    pub phi0: f64,
    pub phi0_err: f64,
    pub offset: f64,
    pub offset_err: f64,
}

/// Fits `P(φ) = ½ C sin(φ + φ0) + const`.
pub fn fit_ramsey(samples: &[(f64, f64)]) -> Result<RamseyFit, FitError> {
    if samples.len() < 6 {
        return Err(FitError::TooFewPoints { need: 6, got: samples.len() });
    }
    let (lo, hi) = samples.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), s| (a.min(s.0), b.max(s.0)));
    if hi - lo < 2.0 * PI * (1.0 - 1e-9) {
        return Err(FitError::PhaseSpan);
    }
    // ½C sin(φ+φ0) = a sin φ + b cos φ with a = ½C cos φ0, b = ½C sin φ0
    let x = DMatrix::from_fn(samples.len(), 3, |i, j| match j {
        0 => samples[i].0.sin(),
        1 => samples[i].0.cos(),
        _ => 1.0,
    });
    let y = DVector::from_iterator(samples.len(), samples.iter().map(|s| s.1));
    let (beta, cov) = linear_lsq(&x, &y)?;
    let (a, b) = (beta[0], beta[1]);
    let r = a.hypot(b);
    if r == 0.0 {
        return Err(FitError::Unidentifiable("zero contrast leaves the phase undefined"));
    }
    // gradients of r and atan2(b, a) with respect to (a, b)
    let gr = [a / r, b / r];
    let gp = [-b / (r * r), a / (r * r)];
    let quad = |g: [f64; 2]| {
        (g[0] * g[0] * cov[(0, 0)] + 2.0 * g[0] * g[1] * cov[(0, 1)] + g[1] * g[1] * cov[(1, 1)]).max(0.0).sqrt()
    };
    Ok(RamseyFit {
        contrast: 2.0 * r,
        contrast_err: 2.0 * quad(gr),
        phi0: b.atan2(a),
        phi0_err: quad(gp),
        offset: beta[2],
        offset_err: cov[(2, 2)].max(0.0).sqrt(),
    })
}

/// Ratio of a contrast to a reference contrast, relative errors added in quadrature.
pub fn normalize_contrast(c: f64, c_err: f64, reference: f64, reference_err: f64) -> (f64, f64) {
    let v = c / reference;
    (v, v * ((c_err / c).powi(2) + (reference_err / reference).powi(2)).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    /// Coefficients of t, t², t³ in −ln V.
    pub coeffs: [f64; 3],
    pub r_squared: f64,
    pub used_points: usize,
}

impl DecayFit {
    pub fn eval(&self, t: f64) -> f64 {
        let [a1, a2, a3] = self.coeffs;
        (-(a1 * t + a2 * t * t + a3 * t * t * t)).exp()
    }
}

/// Fits `V(t) = exp(−A1 t − A2 t² − A3 t³)` to the points with V > 0.2.
pub fn fit_visibility_decay(points: &[(f64, f64)]) -> Result<DecayFit, FitError> {
    let used: Vec<(f64, f64)> = points.iter().copied().filter(|p| p.1 > 0.2 && p.0.is_finite()).collect();
    if used.len() < 4 {
        return Err(FitError::TooFewPoints { need: 4, got: used.len() });
    }
    // scale time so the normal matrix is well conditioned
    let ts = used.iter().fold(0.0f64, |a, p| a.max(p.0.abs())).max(f64::MIN_POSITIVE);
    let x = DMatrix::from_fn(used.len(), 3, |i, j| (used[i].0 / ts).powi(j as i32 + 1));
    let y = DVector::from_iterator(used.len(), used.iter().map(|p| -p.1.ln()));
    let (beta, _) = linear_lsq(&x, &y)?;
    let coeffs = [beta[0] / ts, beta[1] / ts.powi(2), beta[2] / ts.powi(3)];
    let fit = DecayFit { coeffs, r_squared: 0.0, used_points: used.len() };
    let mean = used.iter().map(|p| p.1).sum::<f64>() / used.len() as f64;
    let ss_tot: f64 = used.iter().map(|p| (p.1 - mean).powi(2)).sum();
    let ss_res: f64 = used.iter().map(|p| (p.1 - fit.eval(p.0)).powi(2)).sum();
    Ok(DecayFit { r_squared: if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 }, ..fit })
}

/// `P(t) = offset + B exp(−(t − t_peak)²/2w²) sin(Ω t + θ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeSineFit {
    pub t_peak: f64,
    pub t_peak_err: f64,
    pub width: f64,
    pub omega: f64,
    pub phase: f64,
    pub amplitude: f64,
    pub offset: f64,
    pub r_squared: f64,
}

impl EnvelopeSineFit {
    pub fn eval(&self, t: f64) -> f64 {
        self.offset
            + self.amplitude * (-(t - self.t_peak).powi(2) / (2.0 * self.width * self.width)).exp() * (self.omega * t + self.phase).sin()
    }
}

pub fn fit_envelope_sine(samples: &[(f64, f64)]) -> Result<EnvelopeSineFit, FitError> {
    let n = samples.len();
    if n < 8 {
        return Err(FitError::TooFewPoints { need: 8, got: n });
    }
    let (t_lo, t_hi) = samples.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), s| (a.min(s.0), b.max(s.0)));
    let span = t_hi - t_lo;
    if span <= 0.0 {
        return Err(FitError::Input("scan has zero extent".into()));
    }
    let tm = 0.5 * (t_lo + t_hi);
    let u: Vec<f64> = samples.iter().map(|s| (s.0 - tm) / span).collect();
    let mean = samples.iter().map(|s| s.1).sum::<f64>() / n as f64;
    let y: Vec<f64> = samples.iter().map(|s| s.1 - mean).collect();
    let ymax = y.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if ymax <= 1e-12 * mean.abs().max(1e-300) || ymax == 0.0 {
        return Err(FitError::Unidentifiable("no oscillation in the scan"));
    }
    let ys: Vec<f64> = y.iter().map(|v| v / ymax).collect();
    // envelope from the weighted moments of y², carrier from a periodogram
    let w2: f64 = ys.iter().map(|v| v * v).sum();
    let up = u.iter().zip(&ys).map(|(u, v)| u * v * v).sum::<f64>() / w2;
    let var = u.iter().zip(&ys).map(|(u, v)| (u - up).powi(2) * v * v).sum::<f64>() / w2;
    let width0 = (2.0 * var).sqrt().max(0.05);
    let mut best = (0.0, 0.0);
    let omax = PI * n as f64;
    let nom = 4 * n;
    for j in 1..=nom {
        let om = omax * j as f64 / nom as f64;
        let (s, c) = u.iter().zip(&ys).fold((0.0, 0.0), |(s, c), (u, v)| (s + v * (om * u).sin(), c + v * (om * u).cos()));
        let p = s * s + c * c;
        if p > best.1 {
            best = (om, p);
        }
    }
    let om0 = best.0;
    let env: Vec<f64> = u.iter().map(|u| (-(u - up).powi(2) / (2.0 * width0 * width0)).exp()).collect();
    let x = DMatrix::from_fn(n, 2, |i, j| env[i] * if j == 0 { (om0 * u[i]).sin() } else { (om0 * u[i]).cos() });
    let (ab, _) = linear_lsq(&x, &DVector::from_column_slice(&ys))?;
    let b0 = ab[0].hypot(ab[1]);
    let th0 = ab[1].atan2(ab[0]);
    let p0 = [b0, up, width0, om0, th0, 0.0];
    let fit = levenberg_marquardt(
        |p, r| {
            for i in 0..n {
                let m = p[5] + p[0] * (-(u[i] - p[1]).powi(2) / (2.0 * p[2] * p[2])).exp() * (p[3] * u[i] + p[4]).sin();
                r[i] = m - ys[i];
            }
        },
        n,
        &p0,
        LmOptions::default(),
    )?;
    let p = &fit.params;
    if p[0].abs() < 1e-9 || !(fit.errors[1] < 10.0) {
        return Err(FitError::Unidentifiable("envelope amplitude vanishes"));
    }
    let (mut amp, mut th) = (p[0], p[4]);
    if amp < 0.0 {
        amp = -amp;
        th += PI;
    }
    let omega = p[3] / span;
    // θ is relative to the scan midpoint; refer the phase to t = 0
    let phase = (th - omega * tm).rem_euclid(2.0 * PI);
    let ss_tot: f64 = ys.iter().map(|v| v * v).sum::<f64>() - ys.iter().sum::<f64>().powi(2) / n as f64;
    Ok(EnvelopeSineFit {
        t_peak: tm + p[1] * span,
        t_peak_err: fit.errors[1] * span,
        width: p[2].abs() * span,
        omega,
        phase,
        amplitude: amp * ymax,
        offset: mean + p[5] * ymax,
        r_squared: 1.0 - 2.0 * fit.cost / ss_tot,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SqrtQuadFit {
    pub a: f64,
    pub b: f64,
    pub a_err: f64,
    pub b_err: f64,
    /// The fitted w(0)² came out negative.
    pub negative_a: bool,
}

/// Fits `w(t) = sqrt(a + b t²)` by linear least squares on w².
pub fn fit_sqrt_quadratic(samples: &[(f64, f64)]) -> Result<SqrtQuadFit, FitError> {
    if samples.len() < 3 {
        return Err(FitError::TooFewPoints { need: 3, got: samples.len() });
    }
    let ts = samples.iter().fold(0.0f64, |a, s| a.max(s.0.abs())).max(f64::MIN_POSITIVE);
    let ws = samples.iter().fold(0.0f64, |a, s| a.max(s.1.abs())).max(f64::MIN_POSITIVE);
    let x = DMatrix::from_fn(samples.len(), 2, |i, j| if j == 0 { 1.0 } else { (samples[i].0 / ts).powi(2) });
    let y = DVector::from_iterator(samples.len(), samples.iter().map(|s| (s.1 / ws).powi(2)));
    let (beta, cov) = linear_lsq(&x, &y)?;
    let a = beta[0] * ws * ws;
    let b = beta[1] * ws * ws / (ts * ts);
    Ok(SqrtQuadFit {
        a,
        b,
        a_err: cov[(0, 0)].max(0.0).sqrt() * ws * ws,
        b_err: cov[(1, 1)].max(0.0).sqrt() * ws * ws / (ts * ts),
        negative_a: a < 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    const UM: f64 = 1e-6;

    fn synth(v: f64, lambda: f64, phi: f64, chirp: f64) -> FringePattern {
        let zr = 199.5 * 0.5 * UM;
        FringePattern::from_fn(0.0, 0.5 * UM, 400, |z| {
            let x = z - zr;
            1.3 * (-(z - 52.0 * UM).powi(2) / (2.0 * (20.0 * UM).powi(2))).exp()
                * (1.0 + v * (2.0 * PI * x / lambda + phi + chirp * x * x).sin())
                + 0.05
        })
    }

    #[test]
    fn noiseless_fit_is_exact() {
        let p = synth(0.7, 8.0 * UM, 0.4, 0.0);
        let f = fit_fringe(&p, FitFringeOptions::default()).unwrap();
        assert!(f.residual_rel < 1e-10, "{}", f.residual_rel);
        assert!((f.visibility - 0.7).abs() < 1e-8);
        assert!((f.lambda / (8.0 * UM) - 1.0).abs() < 1e-9);
        assert!((f.phase - 0.4).abs() < 1e-7);
        assert!((f.center - 52.0 * UM).abs() < 1e-12);
    }

    #[test]
    fn noisy_round_trip_within_three_sigma() {
        let mut p = synth(0.6, 7.0 * UM, -1.1, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let noise = Normal::new(0.0, 0.01 * 1.3).unwrap();
        for v in &mut p.values {
            *v += noise.sample(&mut rng);
        }
        let f = fit_fringe(&p, FitFringeOptions::default()).unwrap();
        let e = f.errors;
        assert!((f.amplitude - 1.3).abs() < 3.0 * e.amplitude);
        assert!((f.center - 52.0 * UM).abs() < 3.0 * e.center);
        assert!((f.sigma - 20.0 * UM).abs() < 3.0 * e.sigma);
        assert!((f.visibility_raw - 0.6).abs() < 3.0 * e.visibility);
        assert!((f.lambda - 7.0 * UM).abs() < 3.0 * e.lambda);
        assert!((f.phase + 1.1).abs() < 3.0 * e.phase);
        assert!((f.offset - 0.05).abs() < 3.0 * e.offset);
    }

    #[test]
    fn flat_pattern_has_no_visibility() {
        let mut p = synth(0.0, 7.0 * UM, 0.0, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise = Normal::new(0.0, 0.01).unwrap();
        for v in &mut p.values {
            *v += noise.sample(&mut rng);
        }
        let f = fit_fringe(&p, FitFringeOptions { chirped: false, period_guess: Some(7.0 * UM), chirp_guess: None }).unwrap();
        assert!(f.visibility < 0.02, "{}", f.visibility);
    }

    #[test]
    fn chirped_model_halves_residual() {
        let mut p = synth(0.8, 7.0 * UM, 0.3, 3e8);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let noise = Normal::new(0.0, 0.005).unwrap();
        for v in &mut p.values {
            *v += noise.sample(&mut rng);
        }
        let plain = fit_fringe(&p, FitFringeOptions::default()).unwrap();
        let chirped = fit_fringe(&p, FitFringeOptions { chirped: true, ..Default::default() }).unwrap();
        assert!(plain.residual_rel >= 2.0 * chirped.residual_rel, "{} {}", plain.residual_rel, chirped.residual_rel);
        assert!((chirped.chirp.unwrap() / 3e8 - 1.0).abs() < 0.05);
    }

    #[test]
    fn too_few_fringes_rejected() {
        let p = synth(0.7, 45.0 * UM, 0.0, 0.0);
        assert!(matches!(
            fit_fringe(&p, FitFringeOptions::default()),
            Err(FitError::TooFewOscillations(_)) | Err(FitError::DegeneratePeriod)
        ));
    }

    #[test]
    fn fft_visibility_of_cosine_pattern() {
        for v in [1.0, 0.5, 0.2] {
            let p = FringePattern::from_fn(-200.0 * UM, 0.25 * UM, 1600, |z| {
                (-(z * z) / (2.0 * (40.0 * UM).powi(2))).exp() * (1.0 + v * (2.0 * PI * z / (5.0 * UM)).cos())
            });
            let got = fft_visibility(&p).unwrap();
            assert!((got / v - 1.0).abs() < 0.02, "{v} {got}");
        }
    }

    #[test]
    fn fft_and_fit_agree_for_many_fringes() {
        let p = synth(0.55, 4.0 * UM, 0.2, 0.0);
        let f = fit_fringe(&p, FitFringeOptions::default()).unwrap();
        let raw: Vec<f64> = p.values.iter().map(|v| v - 0.05).collect();
        let g = fft_visibility(&FringePattern { values: raw, ..p.clone() }).unwrap();
        assert!((f.visibility - g).abs() < 0.03);
    }

    #[test]
    fn ramsey_exact_and_normalised() {
        let s: Vec<(f64, f64)> = (0..12).map(|i| {
            let phi = i as f64 * 2.0 * PI / 11.0;
            (phi, 0.5 * 0.95 * (phi + 0.3).sin() + 0.5)
        }).collect();
        let f = fit_ramsey(&s).unwrap();
        assert!((f.contrast - 0.95).abs() < 1e-6 && (f.phi0 - 0.3).abs() < 1e-6);
        let (v, dv) = normalize_contrast(0.9102, 0.0732, 0.9544, 0.0501);
        assert!((v - 0.9537).abs() < 5e-5);
        assert!((dv - 0.0916).abs() < 5e-4);
        assert!(matches!(fit_ramsey(&s[..5]), Err(FitError::TooFewPoints { .. })));
        assert!(matches!(fit_ramsey(&s[..8]), Err(FitError::PhaseSpan)));
    }

    #[test]
    fn ramsey_error_matches_scatter() {
        let sd = 0.0335;
        let normal = Normal::new(0.0, sd).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (mut cs, mut es) = (Vec::new(), Vec::new());
        for _ in 0..2000 {
            let s: Vec<(f64, f64)> = (0..12).map(|i| {
                let phi = i as f64 * 2.0 * PI / 11.0;
                (phi, 0.5 * 0.9 * (phi + 1.0).sin() + 0.5 + normal.sample(&mut rng))
            }).collect();
            let f = fit_ramsey(&s).unwrap();
            cs.push(f.contrast);
            es.push(f.contrast_err);
        }
        let m = cs.iter().sum::<f64>() / cs.len() as f64;
        let sd_mc = (cs.iter().map(|c| (c - m).powi(2)).sum::<f64>() / (cs.len() - 1) as f64).sqrt();
        let e_mean = es.iter().sum::<f64>() / es.len() as f64;
        assert!((e_mean / sd_mc - 1.0).abs() < 0.2, "{e_mean} {sd_mc}");
    }

    #[test]
    fn decay_round_trips() {
        let lin: Vec<(f64, f64)> = (0..20).map(|i| { let t = i as f64 * 1e-6; (t, (-3e4 * t).exp()) }).collect();
        let f = fit_visibility_decay(&lin).unwrap();
        assert!((f.coeffs[0] / 3e4 - 1.0).abs() < 1e-6);
        assert!(f.coeffs[1].abs() * 1e-5 < 1e-6 * 3e4 && f.coeffs[2].abs() * 1e-10 < 1e-6 * 3e4);
        let quad: Vec<(f64, f64)> = (0..20).map(|i| { let t = i as f64 * 5e-6; (t, (-2e8 * t * t).exp()) }).collect();
        let g = fit_visibility_decay(&quad).unwrap();
        assert!((g.coeffs[1] / 2e8 - 1.0).abs() < 0.01);
        let few = [(0.0, 1.0), (1.0, 0.9), (2.0, 0.1), (3.0, 0.05), (4.0, 0.5)];
        assert!(fit_visibility_decay(&few).is_err());
    }

    #[test]
    fn envelope_sine_round_trip_and_degenerate() {
        let (tp, w) = (12e-6, 3e-6);
        let s: Vec<(f64, f64)> = (0..81).map(|i| {
            let t = i as f64 * 0.3e-6;
            (t, 0.5 + 0.4 * (-(t - tp).powi(2) / (2.0 * w * w)).exp() * (2.0 * PI * 0.5e6 * t + 0.7).sin())
        }).collect();
        let f = fit_envelope_sine(&s).unwrap();
        assert!((f.t_peak - tp).abs() < w / 10.0, "{}", f.t_peak);
        assert!(f.r_squared > 0.999);
        let flat: Vec<(f64, f64)> = s.iter().map(|p| (p.0, 0.5)).collect();
        assert!(matches!(fit_envelope_sine(&flat), Err(FitError::Unidentifiable(_))));
    }

    #[test]
    fn sqrt_quadratic_recovers_slope() {
        let (w0, om) = (2.88e-6, 2.0 * PI * 127.0);
        let s: Vec<(f64, f64)> = (0..10).map(|i| { let t = i as f64 * 0.5e-3; (t, w0 * (1.0 + (om * t).powi(2)).sqrt()) }).collect();
        let f = fit_sqrt_quadratic(&s).unwrap();
        assert!((f.b / (w0 * om).powi(2) - 1.0).abs() < 1e-3);
        assert!(!f.negative_a);
        let c: Vec<(f64, f64)> = (0..5).map(|i| (i as f64, 3e-6)).collect();
        assert!(fit_sqrt_quadratic(&c).unwrap().b.abs() < 1e-20);
    }

    #[test]
    fn csv_round_trip() {
        let text = "# seed=1\nz_m,density\n0.0,1.0\n1e-6,2.0\n2e-6,3.0\n";
        let p = FringePattern::read_csv(text.as_bytes()).unwrap();
        assert_eq!(p.values, vec![1.0, 2.0, 3.0]);
        assert!((p.dz - 1e-6).abs() < 1e-18);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn fft_visibility_translation_and_scale(shift in 0usize..100, scale in 0.1..10.0f64, v in 0.2..1.0f64) {
            let base = |z: f64| (-(z * z) / (2.0 * (30.0 * UM).powi(2))).exp() * (1.0 + v * (2.0 * PI * z / (4.0 * UM)).cos());
            let a = FringePattern::from_fn(-300.0 * UM, 0.25 * UM, 2400, base);
            let off = shift as f64 * 0.25 * UM;
            let b = FringePattern::from_fn(-300.0 * UM, 0.25 * UM, 2400, |z| scale * base(z - off));
            let (va, vb) = (fft_visibility(&a).unwrap(), fft_visibility(&b).unwrap());
            prop_assert!((va - vb).abs() < 1e-6 * va);
        }
    }
}
