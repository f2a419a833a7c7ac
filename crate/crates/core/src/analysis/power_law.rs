//! Least-squares fits of `L(x) = A / x^alpha + L_inf`.
//!
//! Parameters are searched as `(ln A, ln alpha, L_inf)` so that `A` and
//! `alpha` stay positive. Every start on a fixed grid of exponents gets its
//! `A` and `L_inf` by linear least squares and is then polished with
//! Levenberg-Marquardt; the lowest residual wins.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Exponents tried as starting points.
pub const INIT_ALPHAS: [f64; 10] = [0.05, 0.1, 0.2, 0.35, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0];

const MAX_ITERATIONS: usize = 2000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub x: f64,
    pub loss: f64,
    #[serde(default)]
    pub label: String,
}

impl LossPoint {
    pub fn new(x: f64, loss: f64) -> Self {
        Self {
            x,
            loss,
            label: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    #[serde(rename = "A")]
    pub a: f64,
    pub alpha: f64,
    pub l_inf: f64,
    /// Root mean square of the residuals.
    pub residual: f64,
    pub n_points: usize,
    #[serde(default)]
    pub alpha_fixed: bool,
    #[serde(default)]
    pub iterations: usize,
}

impl PowerLawFit {
    /// A law given directly by its parameters.
    pub fn law(a: f64, alpha: f64, l_inf: f64) -> Self {
        Self {
            a,
            alpha,
            l_inf,
            residual: 0.0,
            n_points: 0,
            alpha_fixed: false,
            iterations: 0,
        }
    }

    pub fn predict(&self, x: f64) -> f64 {
        self.a * x.powf(-self.alpha) + self.l_inf
    }

    /// The asymptote lies below every observed loss.
    pub fn asymptote_below(&self, points: &[LossPoint]) -> bool {
        points.iter().all(|p| self.l_inf < p.loss)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum FitError {
    #[error("need at least {needed} points with distinct x, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("x must be positive and finite, and losses finite; bad point {0:?}")]
    BadPoint(LossPoint),
    #[error("fit did not converge after {iterations} iterations (sse {sse:e}, A {a}, alpha {alpha}, L_inf {l_inf})")]
    NonConvergence {
        iterations: usize,
        sse: f64,
        a: f64,
        alpha: f64,
        l_inf: f64,
    },
    #[error("losses do not decrease with x, so no positive scale fits")]
    NotDecreasing,
}

fn check(points: &[LossPoint], needed: usize) -> Result<(), FitError> {
    if let Some(p) = points
        .iter()
        .find(|p| !(p.x > 0.0 && p.x.is_finite() && p.loss.is_finite()))
    {
        return Err(FitError::BadPoint(p.clone()));
    }
    let mut xs: Vec<f64> = points.iter().map(|p| p.x).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    if xs.len() < needed {
        return Err(FitError::TooFewPoints {
            needed,
            got: xs.len(),
        });
    }
    Ok(())
}

/// Best `(A, L_inf)` for a fixed exponent and the resulting squared error.
fn linear_fit(points: &[LossPoint], alpha: f64) -> Option<(f64, f64, f64)> {
    let mut m = Matrix2::zeros();
    let mut v = Vector2::zeros();
    for p in points {
        let b = p.x.powf(-alpha);
        m += Matrix2::new(b * b, b, b, 1.0);
        v += Vector2::new(b * p.loss, p.loss);
    }
    let sol = m.lu().solve(&v)?;
    let (a, c) = (sol[0], sol[1]);
    let sse = points
        .iter()
        .map(|p| (a * p.x.powf(-alpha) + c - p.loss).powi(2))
        .sum();
    Some((a, c, sse))
}

/// Fit with the exponent held at `alpha`; closed form.
pub fn fit_power_law_fixed_alpha(points: &[LossPoint], alpha: f64) -> Result<PowerLawFit, FitError> {
    check(points, 2)?;
    let (a, l_inf, sse) = linear_fit(points, alpha).ok_or(FitError::TooFewPoints {
        needed: 2,
        got: 1,
    })?;
    if a <= 0.0 {
        return Err(FitError::NotDecreasing);
    }
    Ok(PowerLawFit {
        a,
        alpha,
        l_inf,
        residual: (sse / points.len() as f64).sqrt(),
        n_points: points.len(),
        alpha_fixed: true,
        iterations: 0,
    })
}

struct Lm {
    p: Vector3<f64>,
    sse: f64,
    iterations: usize,
}

fn sse_at(points: &[LossPoint], p: &Vector3<f64>) -> f64 {
    let (a, alpha) = (p[0].exp(), p[1].exp());
    points
        .iter()
        .map(|q| (a * q.x.powf(-alpha) + p[2] - q.loss).powi(2))
        .sum()
}

fn levenberg_marquardt(points: &[LossPoint], start: Vector3<f64>) -> Result<Lm, FitError> {
    let mut p = start;
    let mut sse = sse_at(points, &p);
    let mut lambda = 1e-3;
    for it in 0..MAX_ITERATIONS {
        if sse == 0.0 {
            return Ok(Lm { p, sse, iterations: it });
        }
        let (a, alpha) = (p[0].exp(), p[1].exp());
        let mut jtj = Matrix3::zeros();
        let mut jtr = Vector3::zeros();
        for q in points {
            let pw = a * q.x.powf(-alpha);
            let r = pw + p[2] - q.loss;
            let j = Vector3::new(pw, -pw * q.x.ln() * alpha, 1.0);
            jtj += j * j.transpose();
            jtr += j * r;
        }
        loop {
            let mut damped = jtj;
            for k in 0..3 {
                damped[(k, k)] += lambda * jtj[(k, k)].max(1e-300);
            }
            let Some(step) = damped.lu().solve(&(-jtr)) else {
                lambda *= 10.0;
                if lambda > 1e20 {
                    return Ok(Lm { p, sse, iterations: it });
                }
                continue;
            };
            let cand = p + step;
            let cand_sse = sse_at(points, &cand);
            if cand_sse.is_finite() && cand_sse <= sse {
                let small = step.norm() <= 1e-13 * (p.norm() + 1e-13);
                let flat = sse - cand_sse <= 1e-15 * sse;
                p = cand;
                sse = cand_sse;
                lambda = (lambda / 10.0).max(1e-15);
                if small || (flat && lambda <= 1e-12) {
                    return Ok(Lm { p, sse, iterations: it + 1 });
                }
                break;
            }
            lambda *= 10.0;
            if lambda > 1e20 {
                // no descent direction left at machine precision
                return Ok(Lm { p, sse, iterations: it });
            }
        }
    }
    Err(FitError::NonConvergence {
        iterations: MAX_ITERATIONS,
        sse,
        a: p[0].exp(),
        alpha: p[1].exp(),
        l_inf: p[2],
    })
}

/// Free fit of all three parameters. `init` adds an extra starting point.
pub fn fit_power_law(points: &[LossPoint], init: Option<&PowerLawFit>) -> Result<PowerLawFit, FitError> {
    check(points, 3)?;
    let mut starts: Vec<Vector3<f64>> = Vec::new();
    if let Some(i) = init {
        if i.a > 0.0 && i.alpha > 0.0 {
            starts.push(Vector3::new(i.a.ln(), i.alpha.ln(), i.l_inf));
        }
    }
    for alpha in INIT_ALPHAS {
        if let Some((a, c, _)) = linear_fit(points, alpha) {
            if a > 0.0 {
                starts.push(Vector3::new(a.ln(), alpha.ln(), c));
            }
        }
    }
    if starts.is_empty() {
        return Err(FitError::NotDecreasing);
    }

    let mut best: Option<Lm> = None;
    let mut last_err = None;
    for s in starts {
        match levenberg_marquardt(points, s) {
            Ok(r) => {
                if best.as_ref().is_none_or(|b| r.sse < b.sse) {
                    best = Some(r);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    let Some(b) = best else {
        return Err(last_err.expect("at least one start ran"));
    };
    Ok(PowerLawFit {
        a: b.p[0].exp(),
        alpha: b.p[1].exp(),
        l_inf: b.p[2],
        residual: (b.sse / points.len() as f64).sqrt(),
        n_points: points.len(),
        alpha_fixed: false,
        iterations: b.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(a: f64, alpha: f64, c: f64, xs: &[f64]) -> Vec<LossPoint> {
        xs.iter().map(|&x| LossPoint::new(x, a * x.powf(-alpha) + c)).collect()
    }

    #[test]
    fn recovers_ensemble_shape() {
        let pts = series(0.5, 1.0, 3.31, &[1.0, 2.0, 4.0, 8.0, 16.0]);
        let f = fit_power_law(&pts, None).unwrap();
        assert!((f.a - 0.5).abs() < 1e-6);
        assert!((f.alpha - 1.0).abs() < 1e-6);
        assert!((f.l_inf - 3.31).abs() < 1e-6);
        assert!(f.asymptote_below(&pts));
    }

    #[test]
    fn fixed_alpha_exact() {
        let pts = series(0.24, 1.0, 3.19, &[1.0, 2.0, 4.0, 8.0, 16.0]);
        let f = fit_power_law_fixed_alpha(&pts, 1.0).unwrap();
        assert!((f.l_inf - 3.19).abs() < 1e-12);
        assert!((f.a - 0.24).abs() < 1e-12);
        assert!(f.alpha_fixed);
    }

    #[test]
    fn too_few_points() {
        let pts = series(1.0, 1.0, 1.0, &[1.0, 2.0]);
        assert!(matches!(fit_power_law(&pts, None), Err(FitError::TooFewPoints { .. })));
        let dup = series(1.0, 1.0, 1.0, &[1.0, 2.0, 2.0]);
        assert!(matches!(fit_power_law(&dup, None), Err(FitError::TooFewPoints { .. })));
        assert!(matches!(
            fit_power_law(&vec![LossPoint::new(0.0, 1.0); 3], None),
            Err(FitError::BadPoint(_))
        ));
    }

    #[test]
    fn increasing_losses_rejected() {
        let pts: Vec<LossPoint> = [1.0, 2.0, 4.0].iter().map(|&x| LossPoint::new(x, x)).collect();
        assert_eq!(fit_power_law(&pts, None), Err(FitError::NotDecreasing));
    }

    #[test]
    fn deterministic() {
        let pts: Vec<LossPoint> = [(1.0, 3.6), (2.0, 3.45), (4.0, 3.41), (8.0, 3.36), (16.0, 3.35)]
            .iter()
            .map(|&(x, l)| LossPoint::new(x, l))
            .collect();
        assert_eq!(fit_power_law(&pts, None).unwrap(), fit_power_law(&pts, None).unwrap());
    }
}
