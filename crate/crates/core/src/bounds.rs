//! Error certificates for the separation scheme with a Gaussian window.
//!
//! Everything here is evaluated at a single instant `t` from model ground
//! truth: amplitudes, IFs and chirp rates, plus the class constants `ε₁`
//! (relative amplitude Lipschitz constant) and `ε₃` (bound on `|φ'''|`).
//!
//! * `Π = ε₁ I₁ σ + (π/3) ε₃ I₃ σ³` bounds the local-LFM model error.
//! * `Υ` bounds `|ğ|` outside every component's `Z` box and `Υ_{ℓ,k}`
//!   bounds component `k`'s leakage into box `ℓ`.
//! * `Res_ℓ = M Π + Σ_{k≠ℓ} A_k Υ_{ℓ,k}` drives the three estimates
//!   `Bd₁` (IF), `Bd₂` (chirp rate) and `Bd₃` (component recovery).

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::signal::SignalModel;
use crate::window::{b0, beta_inv, gamma_inv, gaussian_moments};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundContext {
    pub epsilon1: f64,
    pub epsilon3: f64,
    pub sigma: f64,
    pub delta: f64,
    pub rho: f64,
    pub amplitudes: Vec<f64>,
    pub if_values: Vec<f64>,
    pub cr_values: Vec<f64>,
}

impl BoundContext {
    pub fn new(
        epsilon1: f64,
        epsilon3: f64,
        sigma: f64,
        delta: f64,
        rho: f64,
        amplitudes: Vec<f64>,
        if_values: Vec<f64>,
        cr_values: Vec<f64>,
    ) -> Result<Self> {
        let ctx = BoundContext { epsilon1, epsilon3, sigma, delta, rho, amplitudes, if_values, cr_values };
        ctx.validate()?;
        Ok(ctx)
    }

    /// Context at time `t` with `ε₁`, `ε₃` taken from the model's symbolic derivatives.
    pub fn from_model(model: &SignalModel, t: f64, sigma: f64, delta: f64, rho: f64) -> Result<Self> {
        let gt = model.ground_truth(t)?;
        Self::new(
            model.epsilon1(),
            model.epsilon3(),
            sigma,
            delta,
            rho,
            gt.iter().map(|g| g.amplitude).collect(),
            gt.iter().map(|g| g.inst_freq).collect(),
            gt.iter().map(|g| g.chirp_rate).collect(),
        )
    }

    fn validate(&self) -> Result<()> {
        if !(self.epsilon1 >= 0.0 && self.epsilon3 >= 0.0) {
            return Err(invalid("ε₁ and ε₃ must be non-negative"));
        }
        if !(self.sigma > 0.0 && self.delta > 0.0 && self.rho > 0.0) {
            return Err(invalid("σ, Δ and ρ must be positive"));
        }
        let n = self.amplitudes.len();
        if n == 0 || self.if_values.len() != n || self.cr_values.len() != n {
            return Err(invalid("amplitude, IF and chirp-rate lists must be non-empty and equal length"));
        }
        if self.amplitudes.iter().any(|&a| !(a > 0.0)) {
            return Err(invalid("amplitudes must be positive"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amplitudes.is_empty()
    }

    /// `μ = min_k A_k`
    pub fn mu(&self) -> f64 {
        self.amplitudes.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `M = Σ_k A_k`
    pub fn big_m(&self) -> f64 {
        self.amplitudes.iter().sum()
    }

    fn check_index(&self, l: usize) -> Result<()> {
        if l < self.len() {
            Ok(())
        } else {
            Err(Error::OutOfRange { index: l, len: self.len() })
        }
    }
}

pub fn pi_bound(ctx: &BoundContext) -> f64 {
    let [i1, _, i3] = gaussian_moments();
    ctx.epsilon1 * i1 * ctx.sigma + PI / 3.0 * ctx.epsilon3 * i3 * ctx.sigma.powi(3)
}

/// `L / (√σ min(√σ, 1) √Δ)` with `L = max(2^{1/4}, √ρ) / √π`.
pub fn upsilon(ctx: &BoundContext) -> f64 {
    let l = 2f64.powf(0.25).max(ctx.rho.sqrt()) / PI.sqrt();
    let s = ctx.sigma.sqrt();
    l / (s * s.min(1.0) * ctx.delta.sqrt())
}

/// Leakage bound of component `k` into the box of component `ℓ`.
///
/// Uses the exponential refinement when its monotonicity precondition
/// holds and never exceeds [`upsilon`].
pub fn upsilon_pair(ctx: &BoundContext, l: usize, k: usize) -> Result<f64> {
    ctx.check_index(l)?;
    ctx.check_index(k)?;
    if l == k {
        return Err(invalid("Υ_{ℓ,k} needs ℓ ≠ k"));
    }
    let generic = upsilon(ctx);
    Ok(refined_pair(ctx, l, k).map_or(generic, |r| r.min(generic)))
}

fn refined_pair(ctx: &BoundContext, l: usize, k: usize) -> Option<f64> {
    let d_if = (ctx.if_values[l] - ctx.if_values[k]).abs();
    let d_cr = (ctx.cr_values[l] - ctx.cr_values[k]).abs();
    if d_if <= ctx.delta {
        return None;
    }
    let s2 = ctx.sigma * ctx.sigma;
    let denom = 1.0 + 4.0 * PI * PI * s2 * s2 * (d_cr + ctx.delta / ctx.rho).powi(2);
    let c0 = 2.0 * PI * PI * s2 * (d_if - ctx.delta).powi(2);
    if denom > 4.0 * c0 {
        return None;
    }
    Some(denom.powf(-0.25) * (-c0 / denom).exp())
}

pub fn res_bound(ctx: &BoundContext) -> Vec<f64> {
    let base = ctx.big_m() * pi_bound(ctx);
    (0..ctx.len())
        .map(|l| {
            base + (0..ctx.len())
                .filter(|&k| k != l)
                .map(|k| ctx.amplitudes[k] * upsilon_pair(ctx, l, k).expect("indices in range"))
                .sum::<f64>()
        })
        .collect()
}

/// A certificate value, or the reason it does not apply.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum Bound {
    Valid { value: f64 },
    /// `2 Res_ℓ / A_ℓ` exceeds `1 - e^{-1/4}`.
    Invalid { ratio: f64 },
}

impl Bound {
    pub fn value(&self) -> Option<f64> {
        match self {
            Bound::Valid { value } => Some(*value),
            Bound::Invalid { .. } => None,
        }
    }
}

/// `ξ = 1 - 2 Res_ℓ / A_ℓ` when the smallness hypothesis holds.
fn level(ctx: &BoundContext, res: f64, l: usize) -> std::result::Result<f64, f64> {
    let ratio = 2.0 * res / ctx.amplitudes[l];
    if ratio <= b0() {
        Ok(1.0 - ratio)
    } else {
        Err(ratio)
    }
}

fn with_level(ctx: &BoundContext, l: usize, f: impl FnOnce(f64, f64) -> f64) -> Result<Bound> {
    ctx.check_index(l)?;
    let res = res_bound(ctx)[l];
    Ok(match level(ctx, res, l) {
        Ok(xi) => Bound::Valid { value: f(xi, res) },
        Err(ratio) => Bound::Invalid { ratio },
    })
}

/// IF error bound `β⁻¹(ξ) / σ` in Hz.
pub fn bd1(ctx: &BoundContext, l: usize) -> Result<Bound> {
    with_level(ctx, l, |xi, _| beta_inv(xi).expect("ξ in (0, 1]") / ctx.sigma)
}

/// Chirp-rate error bound `γ⁻¹(ξ) / σ²` in Hz/s.
pub fn bd2(ctx: &BoundContext, l: usize) -> Result<Bound> {
    with_level(ctx, l, |xi, _| gamma_inv(xi).expect("ξ in (0, 1]") / (ctx.sigma * ctx.sigma))
}

/// Recovery error bound in closed form:
/// `Res + 2e^{1/8} I₁ √(Res A) + I₂ A √(1 - ξ⁴) / (2ξ²)`.
pub fn bd3(ctx: &BoundContext, l: usize) -> Result<Bound> {
    let [i1, i2, _] = gaussian_moments();
    let a = ctx.amplitudes[l.min(ctx.len().saturating_sub(1))];
    with_level(ctx, l, |xi, res| {
        res + 2.0 * (0.125f64).exp() * i1 * (res * a).sqrt()
            + i2 * a * (1.0 - xi.powi(4)).max(0.0).sqrt() / (2.0 * xi * xi)
    })
}

/// Recovery error bound before the logarithm is linearized:
/// `Res + 2π I₁ A β⁻¹(ξ) + π I₂ A γ⁻¹(ξ)`. Never exceeds [`bd3`].
pub fn bd3_direct(ctx: &BoundContext, l: usize) -> Result<Bound> {
    let [i1, i2, _] = gaussian_moments();
    let a = ctx.amplitudes[l.min(ctx.len().saturating_sub(1))];
    with_level(ctx, l, |xi, res| {
        res + 2.0 * PI * i1 * a * beta_inv(xi).expect("ξ in (0, 1]")
            + PI * i2 * a * gamma_inv(xi).expect("ξ in (0, 1]")
    })
}

/// Separation and smallness parameters for hypothesis checks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    pub sigma: f64,
    pub delta: f64,
    pub rho: f64,
    /// Resolved absolute threshold `ε̃₁`; when absent the window check only
    /// asks that some admissible threshold exists.
    pub threshold: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub name: String,
    /// Non-negative when the inequality holds; `None` when vacuous.
    pub margin: Option<f64>,
    pub pass: bool,
}

impl Hypothesis {
    fn new(name: &str, margin: Option<f64>) -> Self {
        Hypothesis { name: name.into(), margin, pass: margin.is_none_or(|m| m >= 0.0) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub items: Vec<Hypothesis>,
    pub pass: bool,
}

impl HypothesisReport {
    pub fn get(&self, name: &str) -> Option<&Hypothesis> {
        self.items.iter().find(|h| h.name == name)
    }
}

pub const SEPARATION: &str = "separation";
pub const CLUSTER_CONDITION: &str = "cluster_condition";
pub const THRESHOLD_WINDOW: &str = "threshold_window";
pub const RECOVERY_SMALLNESS: &str = "recovery_smallness";

pub fn hypotheses_for(ctx: &BoundContext, threshold: Option<f64>) -> HypothesisReport {
    let n = ctx.len();
    let mut sep: Option<f64> = None;
    for l in 0..n {
        for k in l + 1..n {
            let d = (ctx.if_values[l] - ctx.if_values[k]).abs()
                + ctx.rho * (ctx.cr_values[l] - ctx.cr_values[k]).abs();
            let m = d - 2.0 * ctx.delta;
            sep = Some(sep.map_or(m, |s| s.min(m)));
        }
    }
    let (mu, big_m) = (ctx.mu(), ctx.big_m());
    let leak = big_m * (upsilon(ctx) + pi_bound(ctx));
    let cluster = mu - 2.0 * leak;
    let window = match threshold {
        Some(th) => (th - leak).min(mu - leak - th),
        None => cluster,
    };
    let res = res_bound(ctx);
    let small = (0..n)
        .map(|l| b0() - 2.0 * res[l] / ctx.amplitudes[l])
        .fold(f64::INFINITY, f64::min);
    let items = vec![
        Hypothesis::new(SEPARATION, sep),
        Hypothesis::new(CLUSTER_CONDITION, Some(cluster)),
        Hypothesis::new(THRESHOLD_WINDOW, Some(window)),
        Hypothesis::new(RECOVERY_SMALLNESS, Some(small)),
    ];
    let pass = items.iter().all(|h| h.pass);
    HypothesisReport { items, pass }
}

pub fn check_hypotheses(model: &SignalModel, t: f64, params: &BoundParams) -> Result<HypothesisReport> {
    let ctx = BoundContext::from_model(model, t, params.sigma, params.delta, params.rho)?;
    Ok(hypotheses_for(&ctx, params.threshold))
}

/// All certificate quantities at one instant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub t: f64,
    pub mu: f64,
    pub big_m: f64,
    pub pi: f64,
    pub upsilon: f64,
    pub upsilon_pairs: Vec<Vec<Option<f64>>>,
    pub res: Vec<f64>,
    pub bd1: Vec<Bound>,
    pub bd2: Vec<Bound>,
    pub bd3: Vec<Bound>,
    pub hypotheses: HypothesisReport,
}

pub fn bound_report(model: &SignalModel, t: f64, params: &BoundParams) -> Result<BoundReport> {
    let ctx = BoundContext::from_model(model, t, params.sigma, params.delta, params.rho)?;
    let n = ctx.len();
    let upsilon_pairs = (0..n)
        .map(|l| (0..n).map(|k| (l != k).then(|| upsilon_pair(&ctx, l, k).expect("ℓ ≠ k"))).collect())
        .collect();
    Ok(BoundReport {
        t,
        mu: ctx.mu(),
        big_m: ctx.big_m(),
        pi: pi_bound(&ctx),
        upsilon: upsilon(&ctx),
        upsilon_pairs,
        res: res_bound(&ctx),
        bd1: (0..n).map(|l| bd1(&ctx, l)).collect::<Result<_>>()?,
        bd2: (0..n).map(|l| bd2(&ctx, l)).collect::<Result<_>>()?,
        bd3: (0..n).map(|l| bd3(&ctx, l)).collect::<Result<_>>()?,
        hypotheses: hypotheses_for(&ctx, params.threshold),
    })
}

fn opt_cell(b: &Bound) -> String {
    b.value().map(|v| v.to_string()).unwrap_or_default()
}

/// Curve CSV `t,pi,res_k…,bd1_k…,bd2_k…,bd3_k…,pass`; invalid bounds are empty cells.
pub fn write_bound_curves<W: Write>(reports: &[BoundReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let n = reports.first().map_or(0, |r| r.res.len());
    let mut header = vec!["t".to_string(), "pi".to_string()];
    for name in ["res", "bd1", "bd2", "bd3"] {
        header.extend((0..n).map(|k| format!("{name}_{k}")));
    }
    header.push("pass".into());
    w.write_record(&header)?;
    for r in reports {
        let mut row = vec![r.t.to_string(), r.pi.to_string()];
        row.extend(r.res.iter().map(|v| v.to_string()));
        row.extend(r.bd1.iter().map(opt_cell));
        row.extend(r.bd2.iter().map(opt_cell));
        row.extend(r.bd3.iter().map(opt_cell));
        row.push(r.hypotheses.pass.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
