//! Magnetic field of the three-wire chip quadrupole plus a homogeneous bias.
//!
//! Wires run along x at y = -s, 0, +s with their cross-sections centred on z = 0; z grows away
//! from the chip. The side wires carry +I and the centre wire -I, so on the axis y = 0 the chip
//! field points along y and vanishes near z = s.

use crate::constants::{PhysicalConstants, MU0};
use crate::error::FieldError;
use crate::quadrature::gauss_legendre;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Chip layout and operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChipGeometry {
    pub wire_spacing: f64,
    pub wire_width: f64,
    pub wire_thickness: f64,
    pub wire_length: f64,
    /// Current per wire, A.
    pub current: f64,
    /// Homogeneous bias along y, T.
    pub bias_y: f64,
}

impl Default for ChipGeometry {
    fn default() -> Self {
        Self {
            wire_spacing: 1.0e-4,
            wire_width: 4.0e-5,
            wire_thickness: 2.0e-6,
            wire_length: 1.0e-2,
            current: 1.0,
            bias_y: 36.7e-4,
        }
    }
}

impl ChipGeometry {
    pub fn validate(&self) -> Result<(), FieldError> {
        let ok = self.wire_width > 0.0
            && self.wire_spacing > self.wire_width
            && self.wire_thickness > 0.0
            && self.wire_length > 0.0
            && self.current.is_finite()
            && self.bias_y.is_finite();
        if ok {
            Ok(())
        } else {
            Err(FieldError::Geometry(format!("{self:?}")))
        }
    }

    pub fn with_current(mut self, current: f64) -> Self {
        self.current = current;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WireModel {
    /// Three infinite filaments.
    #[default]
    ThinWire,
    /// Finite-length wires with a rectangular cross-section.
    FiniteWire,
    /// Infinitely long wires with a rectangular cross-section: exact across the width,
    /// Gauss-Legendre through the thickness. Much cheaper than `FiniteWire`, for trajectories.
    Strip,
}

/// Field vector, magnitude, and the z-derivatives of the magnitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample {
    pub b_vector: [f64; 3],
    pub b_magnitude: f64,
    pub gradient_z: f64,
    pub curvature_z: f64,
}

/// A vector field with its first and second derivatives along each axis.
/// `d1[a]` is ∂B/∂x_a and `d2[a]` is ∂²B/∂x_a².
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VectorDerivs {
    pub b: [f64; 3],
    pub d1: [[f64; 3]; 3],
    pub d2: [[f64; 3]; 3],
}

/// |B| with its gradient and the diagonal of its Hessian.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MagnitudeDerivs {
    pub value: f64,
    pub grad: [f64; 3],
    pub hess_diag: [f64; 3],
}

/// A chip field that is linear in a gate factor, on top of a static bias.
///
/// The total field is `bias + scale * chip(r)`; pulses switch `scale` between 0 and ±1.
pub trait ChipField: Send + Sync {
    fn chip_derivs(&self, r: [f64; 3]) -> Result<VectorDerivs, FieldError>;

    fn chip_b(&self, r: [f64; 3]) -> Result<[f64; 3], FieldError> {
        Ok(self.chip_derivs(r)?.b)
    }

    fn bias(&self) -> [f64; 3];
}

/// Magnitude derivatives of `bias + scale * chip` at `r`.
pub fn magnitude_derivs(field: &dyn ChipField, r: [f64; 3], scale: f64) -> Result<MagnitudeDerivs, FieldError> {
    let bias = field.bias();
    if scale == 0.0 {
        return Ok(MagnitudeDerivs { value: norm(bias), ..Default::default() });
    }
    let c = field.chip_derivs(r)?;
    let b: [f64; 3] = std::array::from_fn(|i| bias[i] + scale * c.b[i]);
    let mag = norm(b);
    let mut out = MagnitudeDerivs { value: mag, ..Default::default() };
    if mag == 0.0 {
        return Ok(out);
    }
    for a in 0..3 {
        let d1: [f64; 3] = std::array::from_fn(|i| scale * c.d1[a][i]);
        let d2: [f64; 3] = std::array::from_fn(|i| scale * c.d2[a][i]);
        let bd1 = dot(b, d1);
        out.grad[a] = bd1 / mag;
        out.hess_diag[a] = (dot(d1, d1) + dot(b, d2)) / mag - bd1 * bd1 / (mag * mag * mag);
    }
    Ok(out)
}

/// Zeeman energy of state mF in a field of magnitude `b`.
pub fn zeeman_potential(m_f: i32, b_magnitude: f64, consts: &PhysicalConstants) -> f64 {
    m_f as f64 * consts.lande_gf * consts.mu_bohr * b_magnitude
}

/// The three-wire chip in either wire model.
#[derive(Debug, Clone)]
pub struct Chip {
    geometry: ChipGeometry,
    model: WireModel,
    filaments: Vec<Filament>,
    fd_step: f64,
}

#[derive(Debug, Clone, Copy)]
struct Filament {
    y: f64,
    z: f64,
    current: f64,
}

impl Chip {
    pub fn new(geometry: ChipGeometry, model: WireModel) -> Result<Self, FieldError> {
        geometry.validate()?;
        let s = geometry.wire_spacing;
        let wires = [(-s, geometry.current), (0.0, -geometry.current), (s, geometry.current)];
        let filaments = match model {
            WireModel::ThinWire => wires.iter().map(|&(y, i)| Filament { y, z: 0.0, current: i }).collect(),
            WireModel::Strip => {
                let (tn, tw) = gauss_legendre(4);
                wires
                    .iter()
                    .flat_map(|&(y, i)| {
                        tn.iter().zip(tw.clone()).map(move |(b, wb)| Filament { y, z: 0.5 * geometry.wire_thickness * b, current: i * wb / 2.0 })
                    })
                    .collect()
            }
            WireModel::FiniteWire => {
                let (wn, ww) = gauss_legendre(32);
                let (tn, tw) = gauss_legendre(8);
                let mut f = Vec::with_capacity(3 * 32 * 8);
                for &(yc, i) in &wires {
                    for (a, wa) in wn.iter().zip(&ww) {
                        for (b, wb) in tn.iter().zip(&tw) {
                            f.push(Filament {
                                y: yc + 0.5 * geometry.wire_width * a,
                                z: 0.5 * geometry.wire_thickness * b,
                                current: i * wa * wb / 4.0,
                            });
                        }
                    }
                }
                f
            }
        };
        Ok(Self { geometry, model, filaments, fd_step: 5e-8 })
    }

    pub fn geometry(&self) -> &ChipGeometry {
        &self.geometry
    }

    pub fn model(&self) -> WireModel {
        self.model
    }

    fn check_distance(&self, r: [f64; 3]) -> Result<(), FieldError> {
        let min = self
            .filaments
            .iter()
            .map(|f| (r[1] - f.y).hypot(r[2] - f.z))
            .fold(f64::INFINITY, f64::min);
        if min < 1e-9 {
            Err(FieldError::Singular { distance: min })
        } else {
            Ok(())
        }
    }

    fn finite_b(&self, r: [f64; 3]) -> [f64; 3] {
        let half = 0.5 * self.geometry.wire_length;
        let mut by = 0.0;
        let mut bz = 0.0;
        for f in &self.filaments {
            let ry = r[1] - f.y;
            let rz = r[2] - f.z;
            let rho2 = ry * ry + rz * rz;
            let a = r[0] + half;
            let b = r[0] - half;
            let cos_diff = a / (a * a + rho2).sqrt() - b / (b * b + rho2).sqrt();
            let k = MU0 * f.current / (4.0 * PI) * cos_diff / rho2;
            by -= k * rz;
            bz += k * ry;
        }
        [0.0, by, bz]
    }

    fn thin_derivs(&self, r: [f64; 3]) -> VectorDerivs {
        // With u = ρy - iρz each filament contributes B_z - i B_y = c/u, so derivatives
        // along y and z are derivatives of 1/u with du/dy = 1, du/dz = -i.
        let mut h = Complex64::new(0.0, 0.0);
        let mut hy = h;
        let mut hz = h;
        let mut hyy = h;
        let mut hzz = h;
        let i = Complex64::i();
        for f in &self.filaments {
            let c = MU0 * f.current / (2.0 * PI);
            let u = Complex64::new(r[1] - f.y, -(r[2] - f.z));
            let inv = 1.0 / u;
            let inv2 = inv * inv;
            let inv3 = inv2 * inv;
            h += c * inv;
            hy += -c * inv2;
            hz += i * c * inv2;
            hyy += 2.0 * c * inv3;
            hzz += -2.0 * c * inv3;
        }
        let vec = |w: Complex64| [0.0, -w.im, w.re];
        VectorDerivs {
            b: vec(h),
            d1: [[0.0; 3], vec(hy), vec(hz)],
            d2: [[0.0; 3], vec(hyy), vec(hzz)],
        }
    }

    /// Each filament stands for a flat ribbon of the wire width; h(u) = (c/w)·ln((u + w/2)/(u − w/2)).
    fn strip_derivs(&self, r: [f64; 3]) -> VectorDerivs {
        let half = Complex64::new(0.5 * self.geometry.wire_width, 0.0);
        let w = self.geometry.wire_width;
        let mut h = Complex64::new(0.0, 0.0);
        let mut h1 = h;
        let mut h2 = h;
        for f in &self.filaments {
            let c = MU0 * f.current / (2.0 * PI * w);
            let u = Complex64::new(r[1] - f.y, -(r[2] - f.z));
            let (p, m) = (1.0 / (u + half), 1.0 / (u - half));
            h += c * ((u + half).ln() - (u - half).ln());
            h1 += c * (p - m);
            h2 += c * (m * m - p * p);
        }
        let i = Complex64::i();
        let vec = |w: Complex64| [0.0, -w.im, w.re];
        VectorDerivs {
            b: vec(h),
            d1: [[0.0; 3], vec(h1), vec(-i * h1)],
            d2: [[0.0; 3], vec(h2), vec(-h2)],
        }
    }

    fn finite_derivs(&self, r: [f64; 3]) -> VectorDerivs {
        let h = self.fd_step;
        let b0 = self.finite_b(r);
        let mut out = VectorDerivs { b: b0, ..Default::default() };
        for a in 0..3 {
            let mut rp = r;
            let mut rm = r;
            rp[a] += h;
            rm[a] -= h;
            let bp = self.finite_b(rp);
            let bm = self.finite_b(rm);
            for c in 0..3 {
                out.d1[a][c] = (bp[c] - bm[c]) / (2.0 * h);
                out.d2[a][c] = (bp[c] - 2.0 * b0[c] + bm[c]) / (h * h);
            }
        }
        out
    }

    /// Signed y-component of the chip field on the axis y = 0, x = 0.
    pub fn axis_by(&self, z: f64) -> Result<f64, FieldError> {
        Ok(self.chip_b([0.0, 0.0, z])?[1])
    }
}

impl ChipField for Chip {
    fn chip_derivs(&self, r: [f64; 3]) -> Result<VectorDerivs, FieldError> {
        self.check_distance(r)?;
        Ok(match self.model {
            WireModel::ThinWire => self.thin_derivs(r),
            WireModel::Strip => self.strip_derivs(r),
            WireModel::FiniteWire => self.finite_derivs(r),
        })
    }

    fn chip_b(&self, r: [f64; 3]) -> Result<[f64; 3], FieldError> {
        self.check_distance(r)?;
        Ok(match self.model {
            WireModel::ThinWire => self.thin_derivs(r).b,
            WireModel::Strip => self.strip_derivs(r).b,
            WireModel::FiniteWire => self.finite_b(r),
        })
    }

    fn bias(&self) -> [f64; 3] {
        [0.0, self.geometry.bias_y, 0.0]
    }
}

/// Total field (chip + bias) with z-derivatives of |B|.
pub fn field_at(geometry: &ChipGeometry, position: [f64; 3], model: WireModel) -> Result<FieldSample, FieldError> {
    let chip = Chip::new(*geometry, model)?;
    sample(&chip, position, 1.0)
}

/// Same as [`field_at`] for an already constructed field.
pub fn sample(field: &dyn ChipField, position: [f64; 3], scale: f64) -> Result<FieldSample, FieldError> {
    let bias = field.bias();
    let chip = if scale == 0.0 { [0.0; 3] } else { field.chip_b(position)? };
    let b_vector: [f64; 3] = std::array::from_fn(|i| bias[i] + scale * chip[i]);
    let m = magnitude_derivs(field, position, scale)?;
    Ok(FieldSample { b_vector, b_magnitude: norm(b_vector), gradient_z: m.grad[2], curvature_z: m.hess_diag[2] })
}

/// Zero of the chip-only field below the centre wire, by bisection to 1e-9 m in [10 μm, 300 μm].
pub fn quadrupole_center(geometry: &ChipGeometry, model: WireModel) -> Result<f64, FieldError> {
    let chip = Chip::new(*geometry, model)?;
    let (mut lo, mut hi) = (10e-6, 300e-6);
    let mut flo = chip.axis_by(lo)?;
    let fhi = chip.axis_by(hi)?;
    if flo == 0.0 {
        return Ok(lo);
    }
    if flo.signum() == fhi.signum() {
        return Err(FieldError::NoRoot { lo, hi });
    }
    while hi - lo > 1e-9 {
        let mid = 0.5 * (lo + hi);
        let fm = chip.axis_by(mid)?;
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Idealised field with |B| rising linearly along z: chip part `(0, gradient·(z - z_ref), 0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformGradient {
    pub gradient: f64,
    pub z_ref: f64,
    pub bias: f64,
}

impl ChipField for UniformGradient {
    fn chip_derivs(&self, r: [f64; 3]) -> Result<VectorDerivs, FieldError> {
        let mut d = VectorDerivs { b: [0.0, self.gradient * (r[2] - self.z_ref), 0.0], ..Default::default() };
        d.d1[2] = [0.0, self.gradient, 0.0];
        Ok(d)
    }

    fn bias(&self) -> [f64; 3] {
        [0.0, self.bias, 0.0]
    }
}

/// Idealised field with |B| quadratic along z about `z_center`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarmonicField {
    pub curvature: f64,
    pub z_center: f64,
    pub bias: f64,
}

impl HarmonicField {
    /// Field giving trap frequency `omega` for state `m_f`.
    pub fn for_frequency(omega: f64, m_f: i32, z_center: f64, bias: f64, consts: &PhysicalConstants) -> Self {
        let curvature = consts.mass_rb87 * omega * omega / (m_f as f64 * consts.lande_gf * consts.mu_bohr);
        Self { curvature, z_center, bias }
    }
}

impl ChipField for HarmonicField {
    fn chip_derivs(&self, r: [f64; 3]) -> Result<VectorDerivs, FieldError> {
        let u = r[2] - self.z_center;
        let mut d = VectorDerivs { b: [0.0, 0.5 * self.curvature * u * u, 0.0], ..Default::default() };
        d.d1[2] = [0.0, self.curvature * u, 0.0];
        d.d2[2] = [0.0, self.curvature, 0.0];
        Ok(d)
    }

    fn bias(&self) -> [f64; 3] {
        [0.0, self.bias, 0.0]
    }
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn thin(current: f64, bias: f64) -> Chip {
        let g = ChipGeometry { current, bias_y: bias, ..Default::default() };
        Chip::new(g, WireModel::ThinWire).unwrap()
    }

    #[test]
    fn thin_center_is_at_wire_spacing() {
        let g = ChipGeometry::default();
        let z = quadrupole_center(&g, WireModel::ThinWire).unwrap();
        assert!((z - 100e-6).abs() < 1e-9, "{z}");
        let s = field_at(&ChipGeometry { bias_y: 0.0, ..g }, [0.0, 0.0, 100e-6], WireModel::ThinWire).unwrap();
        assert!(s.b_magnitude < 1e-12);
    }

    #[test]
    fn finite_center_near_98um() {
        let z = quadrupole_center(&ChipGeometry::default(), WireModel::FiniteWire).unwrap();
        assert!((z - 98e-6).abs() < 1e-6, "{z}");
    }

    #[test]
    fn center_independent_of_current() {
        for model in [WireModel::ThinWire, WireModel::FiniteWire] {
            let g = ChipGeometry::default();
            let a = quadrupole_center(&g, model).unwrap();
            let b = quadrupole_center(&g.with_current(2.0), model).unwrap();
            assert!((a - b).abs() < 2e-9);
        }
    }

    #[test]
    fn zero_current_is_bias_only() {
        let g = ChipGeometry { current: 0.0, ..Default::default() };
        let s = field_at(&g, [0.0, 3e-6, 80e-6], WireModel::ThinWire).unwrap();
        assert_eq!(s.b_vector, [0.0, g.bias_y, 0.0]);
    }

    #[test]
    fn finite_gradient_matches_cross_section_quadrature() {
        let g = ChipGeometry { bias_y: 0.0, ..Default::default() };
        let r = [0.0, 0.0, 90e-6];
        // oracle: direct quadrature of the infinite-wire field over each cross-section
        let (wn, ww) = gauss_legendre(64);
        let (tn, tw) = gauss_legendre(16);
        let by = |z: f64| {
            let mut s = 0.0;
            for (yc, i) in [(-1e-4, 1.0), (0.0, -1.0), (1e-4, 1.0)] {
                for (a, wa) in wn.iter().zip(&ww) {
                    for (b, wb) in tn.iter().zip(&tw) {
                        let ry = -(yc + 20e-6 * a);
                        let rz = z - 1e-6 * b;
                        s += -MU0 * i * wa * wb / 4.0 / (2.0 * PI) * rz / (ry * ry + rz * rz);
                    }
                }
            }
            s
        };
        let h = 1e-8;
        let oracle = (by(90e-6 + h) - by(90e-6 - h)) / (2.0 * h);
        let fin = field_at(&g, r, WireModel::FiniteWire).unwrap();
        let thn = field_at(&g, r, WireModel::ThinWire).unwrap();
        // |B| = |B_y| on axis; signs differ by the sign of B_y
        let fin_g = fin.gradient_z * fin.b_vector[1].signum();
        let thn_g = thn.gradient_z * thn.b_vector[1].signum();
        assert!((fin_g - oracle).abs() / oracle.abs() < 1e-3, "{fin_g} vs {oracle}");
        let _ = thn_g;
    }

    #[test]
    fn finite_and_thin_gradients_within_two_percent_at_90um() {
        // The 40 μm wide cross-section shifts the gradient by about 6% here, so this fails.
        let g = ChipGeometry { bias_y: 0.0, ..Default::default() };
        let r = [0.0, 0.0, 90e-6];
        let fin = field_at(&g, r, WireModel::FiniteWire).unwrap();
        let thn = field_at(&g, r, WireModel::ThinWire).unwrap();
        let fin_g = fin.gradient_z * fin.b_vector[1].signum();
        let thn_g = thn.gradient_z * thn.b_vector[1].signum();
        assert!((fin_g - thn_g).abs() / thn_g.abs() < 0.02, "{fin_g} vs {thn_g}");
    }

    #[test]
    fn strip_matches_cross_section_quadrature() {
        let g = ChipGeometry { bias_y: 0.0, ..Default::default() };
        let strip = Chip::new(g, WireModel::Strip).unwrap();
        let fin = Chip::new(g, WireModel::FiniteWire).unwrap();
        let (wn, ww) = gauss_legendre(64);
        let (tn, tw) = gauss_legendre(16);
        // oracle: infinite filaments summed over each cross-section
        let oracle = |r: [f64; 3]| {
            let mut b = [0.0; 3];
            for (yc, i) in [(-1e-4, 1.0), (0.0, -1.0), (1e-4, 1.0)] {
                for (a, wa) in wn.iter().zip(&ww) {
                    for (t, wt) in tn.iter().zip(&tw) {
                        let ry = r[1] - (yc + 20e-6 * a);
                        let rz = r[2] - 1e-6 * t;
                        let k = MU0 * i * wa * wt / 4.0 / (2.0 * PI) / (ry * ry + rz * rz);
                        b[1] -= k * rz;
                        b[2] += k * ry;
                    }
                }
            }
            b
        };
        for r in [[0.0, 0.0, 90e-6], [0.0, 7e-6, 97e-6], [0.0, -3e-6, 120e-6]] {
            let a = strip.chip_b(r).unwrap();
            let o = oracle(r);
            let f = fin.chip_b(r).unwrap();
            let scale = o[1].hypot(o[2]);
            for c in 1..3 {
                assert!((a[c] - o[c]).abs() < 1e-9 * scale, "{r:?} {c}: {} {}", a[c], o[c]);
                // finite length (10 mm) shifts the field by a few 1e-3 of the net value
                assert!((f[c] - o[c]).abs() < 5e-3 * scale);
            }
        }
        let zq = quadrupole_center(&g, WireModel::Strip).unwrap();
        assert!((zq - quadrupole_center(&g, WireModel::FiniteWire).unwrap()).abs() < 0.05e-6);
    }

    #[test]
    fn strip_derivatives_match_differences() {
        let chip = Chip::new(ChipGeometry::default(), WireModel::Strip).unwrap();
        let r = [0.0, 2e-6, 93e-6];
        let d = chip.chip_derivs(r).unwrap();
        let h = 1e-8;
        for a in 1..3 {
            let mut rp = r;
            let mut rm = r;
            rp[a] += h;
            rm[a] -= h;
            let (bp, bm) = (chip.chip_b(rp).unwrap(), chip.chip_b(rm).unwrap());
            for c in 1..3 {
                let fd1 = (bp[c] - bm[c]) / (2.0 * h);
                let fd2 = (bp[c] - 2.0 * d.b[c] + bm[c]) / (h * h);
                assert!((fd1 - d.d1[a][c]).abs() < 1e-6 * 20.0, "{a}{c} {fd1} {}", d.d1[a][c]);
                assert!((fd2 - d.d2[a][c]).abs() < 1e-3 * 6e5, "{a}{c} {fd2} {}", d.d2[a][c]);
            }
        }
    }

    #[test]
    fn thin_axis_field_matches_closed_form() {
        let chip = thin(1.0, 0.0);
        let consts = PhysicalConstants::default();
        let z: f64 = 95e-6;
        let zw: f64 = 100e-6;
        for m_f in [1, 2] {
            let alpha = m_f as f64 * consts.lande_gf * consts.mu_bohr * MU0 * 1.0 / (2.0 * PI);
            let closed = alpha / z * (1.0 - 2.0 / (1.0 + (zw / z).powi(2)));
            let v = zeeman_potential(m_f, chip.axis_by(z).unwrap(), &consts);
            assert!((v - closed).abs() / closed.abs() < 1e-12);
        }
    }

    #[test]
    fn zeeman_linear_in_mf() {
        let c = PhysicalConstants::default();
        assert_eq!(zeeman_potential(1, 0.0, &c), 0.0);
        assert_eq!(zeeman_potential(2, 1.3e-3, &c), 2.0 * zeeman_potential(1, 1.3e-3, &c));
    }

    #[test]
    fn singular_position_rejected() {
        let chip = thin(1.0, 0.0);
        assert!(matches!(chip.chip_derivs([0.0, 1e-4, 1e-10]), Err(FieldError::Singular { .. })));
    }

    #[test]
    fn gradient_nonzero_and_magnitude_minimum_at_center() {
        let chip = thin(1.0, 0.0);
        let m = magnitude_derivs(&chip, [0.0, 0.0, 100e-6 - 1e-7], 1.0).unwrap();
        let by = chip.chip_derivs([0.0, 0.0, 100e-6]).unwrap();
        assert!(by.d1[2][1].abs() > 10.0);
        assert!(m.value < chip.axis_by(90e-6).unwrap().abs());
    }

    proptest! {
        #[test]
        fn force_matches_finite_difference(y in -20e-6..20e-6f64, z in 60e-6..140e-6f64, bias in 1e-4..5e-3f64) {
            let chip = thin(1.0, bias);
            let r = [0.0, y, z];
            let m = magnitude_derivs(&chip, r, 1.0).unwrap();
            let h = 1e-9;
            for a in 1..3 {
                let mut rp = r; rp[a] += h;
                let mut rm = r; rm[a] -= h;
                let fp = magnitude_derivs(&chip, rp, 1.0).unwrap().value;
                let fm = magnitude_derivs(&chip, rm, 1.0).unwrap().value;
                let fd = (fp - fm) / (2.0 * h);
                prop_assert!((fd - m.grad[a]).abs() <= 1e-6 * m.grad[a].abs().max(1.0), "axis {a}: {fd} vs {}", m.grad[a]);
            }
        }

        #[test]
        fn curvature_matches_second_difference(y in -20e-6..20e-6f64, z in 60e-6..140e-6f64, bias in 1e-4..5e-3f64) {
            let chip = thin(1.0, bias);
            let r = [0.0, y, z];
            let m = magnitude_derivs(&chip, r, 1.0).unwrap();
            let h = 2e-8;
            let mut rp = r; rp[2] += h;
            let mut rm = r; rm[2] -= h;
            let fp = magnitude_derivs(&chip, rp, 1.0).unwrap().value;
            let fm = magnitude_derivs(&chip, rm, 1.0).unwrap().value;
            let fd = (fp - 2.0 * m.value + fm) / (h * h);
            prop_assert!((fd - m.hess_diag[2]).abs() <= 1e-4 * m.hess_diag[2].abs().max(1e3), "{fd} vs {}", m.hess_diag[2]);
        }

        #[test]
        fn magnitude_is_norm(y in -30e-6..30e-6f64, z in 40e-6..200e-6f64) {
            let g = ChipGeometry::default();
            let s = field_at(&g, [0.0, y, z], WireModel::ThinWire).unwrap();
            prop_assert!((s.b_magnitude - norm(s.b_vector)).abs() <= 1e-12 * s.b_magnitude);
        }
    }
}
