//! Gaussian window, its order-2 polynomial Fourier transform and the
//! companion functions used by the error bounds.
//!
//! All quantities here are dimensionless: the window has unit width and the
//! transform arguments are the scaled offsets `σ(η - φ')` and `σ²(λ - φ'')`.

use std::f64::consts::PI;
use std::sync::OnceLock;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// `1 - e^{-1/4}`, the largest admissible `b` for the Gaussian.
pub fn b0() -> f64 {
    1.0 - (-0.25f64).exp()
}

/// Decay constant `C = 2^{1/4} / √π`.
pub fn decay_constant() -> f64 {
    2f64.powf(0.25) / PI.sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    Gaussian,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub kind: WindowKind,
    /// Support half-width in units of the window scale.
    pub truncation_radius: f64,
    /// Quadrature step in units of the window scale.
    pub quadrature_step: f64,
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec { kind: WindowKind::Gaussian, truncation_radius: 6.0, quadrature_step: 0.01 }
    }
}

impl WindowSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.truncation_radius > 0.0 && self.truncation_radius.is_finite()) {
            return Err(invalid("truncation radius must be positive"));
        }
        if !(self.quadrature_step > 0.0 && self.quadrature_step < self.truncation_radius) {
            return Err(invalid("quadrature step must be positive and below the radius"));
        }
        Ok(())
    }

    pub fn value(&self, t: f64) -> f64 {
        match self.kind {
            WindowKind::Gaussian => gauss(t),
        }
    }

    /// Quadrature weights for nodes `m * step`, `|m| ≤ M`, normalized to unit sum.
    ///
    /// Returns `(M, weights)` with `weights[m + M]` the weight of node `m`.
    pub fn weights(&self, step: f64) -> (usize, Vec<f64>) {
        let half = (self.truncation_radius / step + 1e-9).floor() as usize;
        let mut w: Vec<f64> = (0..=2 * half)
            .map(|i| self.value((i as f64 - half as f64) * step))
            .collect();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= total);
        (half, w)
    }
}

/// Unit Gaussian `e^{-t²/2} / √(2π)`.
pub fn gauss(t: f64) -> f64 {
    (-0.5 * t * t).exp() / (2.0 * PI).sqrt()
}

/// Closed-form transform `(1 + i2πλ)^{-1/2} exp(-2π²η² / (1 + i2πλ))`,
/// principal square root.
pub fn pft_closed(eta: f64, lambda: f64) -> Complex64 {
    let z = Complex64::new(1.0, 2.0 * PI * lambda);
    let arg = Complex64::new(-2.0 * PI * PI * eta * eta, 0.0) / z;
    arg.exp() / z.sqrt()
}

/// Modulus of the Gaussian transform written as a function of `(|η|, |λ|)`.
pub fn pft_modulus(eta: f64, lambda: f64) -> f64 {
    let d = 1.0 + 4.0 * PI * PI * lambda * lambda;
    d.powf(-0.25) * (-2.0 * PI * PI * eta * eta / d).exp()
}

/// Quadrature of `∫ g(τ) exp(-i2πητ - iπλτ²) dτ` over the truncated support.
pub fn pft_numeric(window: &WindowSpec, eta: f64, lambda: f64) -> Complex64 {
    let h = window.quadrature_step;
    let (half, w) = window.weights(h);
    w.iter()
        .enumerate()
        .map(|(i, &wi)| {
            let tau = (i as f64 - half as f64) * h;
            let phase = -2.0 * PI * eta * tau - PI * lambda * tau * tau;
            Complex64::from_polar(wi, phase)
        })
        .sum()
}

/// Absolute moment `I_n = ∫ |g(t) tⁿ| dt` of the unit Gaussian.
pub fn moment(n: u32) -> Result<f64> {
    if n == 0 {
        return Err(invalid("moment order must be at least 1"));
    }
    // Composite Simpson on [0, 12]; the tail beyond 12 is below 1e-28.
    const UPPER: f64 = 12.0;
    const PANELS: usize = 24_000;
    let h = UPPER / PANELS as f64;
    let f = |t: f64| gauss(t) * t.powi(n as i32);
    let mut acc = f(0.0) + f(UPPER);
    for i in 1..PANELS {
        let coef = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += coef * f(i as f64 * h);
    }
    Ok(2.0 * acc * h / 3.0)
}

/// `[I₁, I₂, I₃]`, computed once.
pub fn gaussian_moments() -> [f64; 3] {
    static MOMENTS: OnceLock<[f64; 3]> = OnceLock::new();
    *MOMENTS.get_or_init(|| {
        [1, 2, 3].map(|n| moment(n).expect("positive order"))
    })
}

fn non_negative(x: f64, name: &str) -> Result<()> {
    if x >= 0.0 {
        Ok(())
    } else {
        Err(invalid(format!("{name} argument {x} must be non-negative")))
    }
}

fn unit_interval(xi: f64, name: &str) -> Result<()> {
    if xi > 0.0 && xi <= 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("{name} argument {xi} must lie in (0, 1]")))
    }
}

/// `β(η) = e^{-2π²η²}`
pub fn beta(eta: f64) -> Result<f64> {
    non_negative(eta, "beta")?;
    Ok((-2.0 * PI * PI * eta * eta).exp())
}

/// `γ(λ) = (1 + 4π²λ²)^{-1/4}`
pub fn gamma(lambda: f64) -> Result<f64> {
    non_negative(lambda, "gamma")?;
    Ok((1.0 + 4.0 * PI * PI * lambda * lambda).powf(-0.25))
}

pub fn beta_inv(xi: f64) -> Result<f64> {
    unit_interval(xi, "beta_inv")?;
    Ok((-xi.ln()).max(0.0).sqrt() / (PI * 2f64.sqrt()))
}

pub fn gamma_inv(xi: f64) -> Result<f64> {
    unit_interval(xi, "gamma_inv")?;
    Ok((1.0 - xi.powi(4)).max(0.0).sqrt() / (2.0 * PI * xi * xi))
}

/// Uniform sampling of the `(η, λ)` quadrant used by the admissibility check.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadrantGrid {
    pub eta_max: f64,
    pub lambda_max: f64,
    pub step: f64,
}

impl QuadrantGrid {
    fn axis(max: f64, step: f64) -> Vec<f64> {
        let n = (max / step + 1e-9).floor() as usize;
        (0..=n).map(|i| i as f64 * step).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub eta: f64,
    pub lambda: f64,
    pub value: f64,
    pub limit: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub b: f64,
    pub points_checked: usize,
    /// `|ğ(η, λ)| ≤ C / √(|η| + |λ|)`
    pub decay_violations: Vec<Violation>,
    /// `|ğ|` depends only on `(|η|, |λ|)`
    pub symmetry_violations: Vec<Violation>,
    /// `f ≥ 1 - b` implies `β(η) ≥ 1 - b` and `γ(λ) ≥ 1 - b`
    pub level_violations: Vec<Violation>,
    pub pass: bool,
}

/// Tolerance for the symmetry and level-set comparisons, which compare
/// quantities that agree analytically.
pub const ADMISSIBILITY_TOL: f64 = 1e-12;

/// Checks the admissibility conditions for an arbitrary window given through
/// its transform and candidate `β`, `γ`.
pub fn check_admissibility_with<P, B, G>(
    pft: P,
    beta_fn: B,
    gamma_fn: G,
    decay_c: f64,
    b: f64,
    grid: &QuadrantGrid,
) -> Result<AdmissibilityReport>
where
    P: Fn(f64, f64) -> Complex64,
    B: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
{
    if !(0.0..=b0()).contains(&b) {
        return Err(invalid(format!("b = {b} outside [0, 1 - e^(-1/4)]")));
    }
    if !(grid.step > 0.0 && grid.eta_max >= 0.0 && grid.lambda_max >= 0.0) {
        return Err(invalid("grid needs a positive step and non-negative extents"));
    }
    let etas = QuadrantGrid::axis(grid.eta_max, grid.step);
    let lambdas = QuadrantGrid::axis(grid.lambda_max, grid.step);
    let mut report = AdmissibilityReport {
        b,
        points_checked: 0,
        decay_violations: Vec::new(),
        symmetry_violations: Vec::new(),
        level_violations: Vec::new(),
        pass: false,
    };
    let level = 1.0 - b;
    for &eta in &etas {
        for &lambda in &lambdas {
            report.points_checked += 1;
            let f = pft(eta, lambda).norm();
            if eta + lambda > 0.0 {
                let limit = decay_c / (eta + lambda).sqrt();
                if f > limit {
                    report.decay_violations.push(Violation { eta, lambda, value: f, limit });
                }
            }
            for (se, sl) in [(-1.0, 1.0), (1.0, -1.0), (-1.0, -1.0)] {
                let mirrored = pft(se * eta, sl * lambda).norm();
                if (mirrored - f).abs() > ADMISSIBILITY_TOL {
                    report.symmetry_violations.push(Violation {
                        eta: se * eta,
                        lambda: sl * lambda,
                        value: mirrored,
                        limit: f,
                    });
                }
            }
            if f >= level {
                let worst = beta_fn(eta).min(gamma_fn(lambda));
                if worst < level - ADMISSIBILITY_TOL {
                    report.level_violations.push(Violation { eta, lambda, value: worst, limit: level });
                }
            }
        }
    }
    report.pass = report.decay_violations.is_empty()
        && report.symmetry_violations.is_empty()
        && report.level_violations.is_empty();
    Ok(report)
}

/// Admissibility check for the Gaussian window with `C = 2^{1/4}/√π`.
pub fn check_admissibility(
    window: &WindowSpec,
    b: f64,
    grid: &QuadrantGrid,
) -> Result<AdmissibilityReport> {
    window.validate()?;
    match window.kind {
        WindowKind::Gaussian => check_admissibility_with(
            pft_closed,
            |e| beta(e).unwrap_or(0.0),
            |l| gamma(l).unwrap_or(0.0),
            decay_constant(),
            b,
            grid,
        ),
    }
}
