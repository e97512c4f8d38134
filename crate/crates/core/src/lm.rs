//! Damped Gauss-Newton (Levenberg-Marquardt) least squares with a numeric Jacobian.

use crate::error::FitError;
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    pub max_iter: usize,
    /// Relative change of the cost below which the fit has converged.
    pub ftol: f64,
    /// Step norm (relative to the parameter norm) below which the fit has converged.
    pub xtol: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self { max_iter: 200, ftol: 1e-10, xtol: 1e-12 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmFit {
    pub params: Vec<f64>,
    /// One-sigma errors from the scaled covariance; NaN when the normal matrix is singular.
    pub errors: Vec<f64>,
    /// Half the sum of squared residuals.
    pub cost: f64,
    pub iterations: usize,
    pub covariance: Option<DMatrix<f64>>,
}

/// Minimises ½‖r(p)‖² where `residuals(p, r)` fills `r` (length `n`).
pub fn levenberg_marquardt<F>(residuals: F, n: usize, p0: &[f64], opts: LmOptions) -> Result<LmFit, FitError>
where
    F: Fn(&[f64], &mut [f64]),
{
    let np = p0.len();
    if n < np {
        return Err(FitError::TooFewPoints { need: np, got: n });
    }
    let mut p = p0.to_vec();
    let mut r = vec![0.0; n];
    residuals(&p, &mut r);
    let mut cost = half_sq(&r);
    if !cost.is_finite() {
        return Err(FitError::Input("non-finite residuals at the initial guess".into()));
    }
    let mut mu = 1e-3;
    let mut trial = vec![0.0; n];
    let mut jac = jacobian(&residuals, &p, n);
    for iter in 1..=opts.max_iter {
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let g = &jt * DVector::from_column_slice(&r);
        let mut accepted = false;
        while mu < 1e20 {
            let mut a = jtj.clone();
            for i in 0..np {
                a[(i, i)] += mu * jtj[(i, i)].max(1e-300);
            }
            let Some(step) = solve(a, -&g) else {
                mu *= 4.0;
                continue;
            };
            let pt: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            residuals(&pt, &mut trial);
            let ct = half_sq(&trial);
            if ct.is_finite() && ct <= cost {
                let rel = (cost - ct) / cost.max(f64::MIN_POSITIVE);
                let pnorm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
                let snorm = step.norm();
                p = pt;
                std::mem::swap(&mut r, &mut trial);
                cost = ct;
                mu = (mu / 3.0).max(1e-12);
                accepted = true;
                if rel < opts.ftol || snorm < opts.xtol * (pnorm + opts.xtol) || cost < 1e-300 {
                    return Ok(finish(&residuals, p, cost, iter, n));
                }
                break;
            }
            mu *= 2.0;
        }
        if !accepted {
            // no downhill direction left at any damping: stationary point
            return Ok(finish(&residuals, p, cost, iter, n));
        }
        jac = jacobian(&residuals, &p, n);
    }
    Err(FitError::NoConvergence(opts.max_iter))
}

fn finish<F: Fn(&[f64], &mut [f64])>(residuals: &F, params: Vec<f64>, cost: f64, iterations: usize, n: usize) -> LmFit {
    let np = params.len();
    let jac = jacobian(residuals, &params, n);
    let jtj = jac.transpose() * &jac;
    let dof = (n - np).max(1) as f64;
    let s2 = 2.0 * cost / dof;
    let covariance = jtj.try_inverse().map(|inv| inv * s2);
    let errors = match &covariance {
        Some(c) => (0..np).map(|i| c[(i, i)].max(0.0).sqrt()).collect(),
        None => vec![f64::NAN; np],
    };
    LmFit { params, errors, cost, iterations, covariance }
}

fn jacobian<F: Fn(&[f64], &mut [f64])>(residuals: &F, p: &[f64], n: usize) -> DMatrix<f64> {
    let np = p.len();
    let mut jac = DMatrix::zeros(n, np);
    let mut rp = vec![0.0; n];
    let mut rm = vec![0.0; n];
    let mut q = p.to_vec();
    for j in 0..np {
        let h = 1e-6 * p[j].abs().max(1e-3);
        q[j] = p[j] + h;
        residuals(&q, &mut rp);
        q[j] = p[j] - h;
        residuals(&q, &mut rm);
        q[j] = p[j];
        for i in 0..n {
            jac[(i, j)] = (rp[i] - rm[i]) / (2.0 * h);
        }
    }
    jac
}

fn solve(a: DMatrix<f64>, b: DVector<f64>) -> Option<DVector<f64>> {
    match a.clone().cholesky() {
        Some(c) => Some(c.solve(&b)),
        None => a.lu().solve(&b),
    }
    .filter(|x| x.iter().all(|v| v.is_finite()))
}

fn half_sq(r: &[f64]) -> f64 {
    0.5 * r.iter().map(|v| v * v).sum::<f64>()
}

/// Ordinary linear least squares `X β ≈ y`; returns β and its covariance.
pub fn linear_lsq(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>), FitError> {
    let (n, p) = x.shape();
    if n < p {
        return Err(FitError::TooFewPoints { need: p, got: n });
    }
    let xtx = x.transpose() * x;
    let inv = xtx.try_inverse().ok_or(FitError::Singular)?;
    let beta = &inv * (x.transpose() * y);
    let res = y - x * &beta;
    let s2 = res.norm_squared() / ((n - p).max(1) as f64);
    Ok((beta, inv * s2))
}

/// Golden-section search for a maximum of `f` on `[a, b]`; returns (x, f(x)).
pub fn golden_section_max<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    if fc >= fd { (c, fc) } else { (d, fd) }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exponential() {
        let t: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = t.iter().map(|t| 2.5 * (-0.7 * t).exp() + 0.3).collect();
        let fit = levenberg_marquardt(
            |p, r| {
                for i in 0..t.len() {
                    r[i] = p[0] * (-p[1] * t[i]).exp() + p[2] - y[i];
                }
            },
            t.len(),
            &[1.0, 0.2, 0.0],
            LmOptions::default(),
        )
        .unwrap();
        assert!((fit.params[0] - 2.5).abs() < 1e-7);
        assert!((fit.params[1] - 0.7).abs() < 1e-7);
        assert!((fit.params[2] - 0.3).abs() < 1e-7);
    }

    #[test]
    fn golden_finds_parabola_top() {
        let (x, fx) = golden_section_max(|x| -(x - 0.3) * (x - 0.3) + 2.0, -1.0, 1.0, 1e-10);
        assert!((x - 0.3).abs() < 1e-6 && (fx - 2.0).abs() < 1e-12);
    }

    #[test]
    fn linear_fit() {
        let x = DMatrix::from_fn(5, 2, |i, j| if j == 0 { 1.0 } else { i as f64 });
        let y = DVector::from_fn(5, |i, _| 1.0 + 2.0 * i as f64);
        let (b, _) = linear_lsq(&x, &y).unwrap();
        assert!((b[0] - 1.0).abs() < 1e-12 && (b[1] - 2.0).abs() < 1e-12);
    }
}
