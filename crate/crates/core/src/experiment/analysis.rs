use serde::{Deserialize, Serialize};

use crate::balance::theoretical_bound_a;
use crate::error::{Error, Result};

/// Least-squares slope of `ln(gap)` against `ln(t)`.
///
/// Points with a nonpositive gap are dropped with a warning. Needs at least
/// five points as given and two surviving ones.
pub fn rate_fit(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 5 {
        return Err(Error::domain(format!(
            "rate_fit needs at least 5 points, got {}",
            points.len()
        )));
    }
    let mut xs = Vec::with_capacity(points.len());
    let mut ys = Vec::with_capacity(points.len());
    for &(t, gap) in points {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::domain(format!("rate_fit needs positive T, got {t}")));
        }
        if !(gap > 0.0 && gap.is_finite()) {
            log::warn!("rate_fit: dropping point T = {t} with gap {gap}");
            continue;
        }
        xs.push(t.ln());
        ys.push(gap.ln());
    }
    if xs.len() < 2 {
        return Err(Error::domain("rate_fit: fewer than 2 positive gaps"));
    }
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (x, y) in xs.iter().zip(&ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    if sxx == 0.0 {
        return Err(Error::domain("rate_fit: all T values coincide"));
    }
    Ok(sxy / sxx)
}

/// Principal branch `W₀(x)` for `x ≥ -1/e`, by Newton iteration on
/// `w·eʷ − x` to a relative step below 1e-12.
pub fn lambert_w0(x: f64) -> Result<f64> {
    let branch_point = -(-1.0f64).exp();
    if !x.is_finite() || x < branch_point {
        return Err(Error::domain(format!("W0 is undefined at {x}")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x == branch_point {
        return Ok(-1.0);
    }
    let mut w = if x < 1.0 {
        // branch-point series
        let p = (2.0 * (1.0 + std::f64::consts::E * x)).sqrt();
        -1.0 + p - p * p / 3.0
    } else {
        let l = x.ln();
        if l > 1.0 {
            l - l.ln()
        } else {
            l.max(0.5)
        }
    };
    for _ in 0..100 {
        let ew = w.exp();
        let f = w * ew - x;
        let step = f / (ew * (w + 1.0));
        w -= step;
        if step.abs() <= 1e-12 * (1.0 + w.abs()) {
            return Ok(w);
        }
    }
    Err(Error::domain(format!("W0({x}) did not converge")))
}

/// Problem constants for the prescribed learning rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateConstants {
    /// Cross-norm smoothness `L_{2,∞}`.
    pub l2inf: f64,
    /// Per-example gradient deviation `σ`.
    pub sigma: f64,
    /// Worker heterogeneity `ς`.
    pub varsigma: f64,
    /// P.L. constant `μ`; absent for the smooth non-convex rate only.
    pub mu: Option<f64>,
    /// Initial suboptimality `F₁`.
    pub f1: f64,
    pub m: usize,
    pub n: usize,
    pub epochs: usize,
    pub delta: f64,
    /// Gradient dimension, used in `Ã`.
    pub dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoreticalLr {
    pub a_tilde: f64,
    /// Rate for smooth objectives: the smaller of the two branches.
    pub alpha_smooth: f64,
    /// 1 when the step-size branch `1/(16 L (2n + Ã/m))` is the minimum, 2
    /// for the cube-root branch.
    pub smooth_branch: u8,
    /// `2W̃/(Tnμ)` under the P.L. condition.
    pub alpha_pl: Option<f64>,
    pub w_tilde: Option<f64>,
    /// `W̃ = 0` gives a zero step.
    pub pl_degenerate: bool,
    /// Whether `T` meets the epoch requirement of the P.L. rate.
    pub pl_epochs_sufficient: Option<bool>,
}

fn positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} must be positive, got {x}")))
    }
}

/// Prescribed learning rates for CD-GraB. Reported only; never applied.
pub fn theoretical_lr(c: &RateConstants) -> Result<TheoreticalLr> {
    positive("L2inf", c.l2inf)?;
    positive("sigma", c.sigma)?;
    positive("varsigma", c.varsigma)?;
    positive("F1", c.f1)?;
    if c.m == 0 || c.n == 0 || c.epochs == 0 || c.dim == 0 {
        return Err(Error::domain("m, n, T and d must be positive"));
    }
    if !(c.delta > 0.0 && c.delta < 1.0) {
        return Err(Error::domain(format!("delta must lie in (0, 1), got {}", c.delta)));
    }
    let (m, n, t) = (c.m as f64, c.n as f64, c.epochs as f64);
    let a = theoretical_bound_a(c.dim, c.m * c.n, c.delta)?;
    let l = c.l2inf;
    let dev = c.varsigma + c.sigma;
    let first = 1.0 / (16.0 * l * (2.0 * n + a / m));
    let second = (4.0 * c.f1 * m * m
        / (42.0 * l * l * dev * dev * a * a * n * t + 18.0 * l * l * m * m * n.powi(3) * c.sigma * c.sigma))
        .cbrt();
    let (alpha_smooth, smooth_branch) = if first <= second { (first, 1) } else { (second, 2) };
    let mut out = TheoreticalLr {
        a_tilde: a,
        alpha_smooth,
        smooth_branch,
        alpha_pl: None,
        w_tilde: None,
        pl_degenerate: false,
        pl_epochs_sufficient: None,
    };
    if let Some(mu) = c.mu {
        positive("mu", mu)?;
        let c3 = (c.f1 + c.sigma * c.sigma / l) * mu * mu / (224.0 * l * l * dev * dev * a * a);
        let w = lambert_w0((t * m * n).powi(2) * c3)?;
        out.alpha_pl = Some(pl_alpha(w, t, n, mu));
        out.w_tilde = Some(w);
        out.pl_degenerate = w == 0.0;
        out.pl_epochs_sufficient = Some(t >= 10.0 + 32.0 * l * (2.0 + a / (m * n)) * w / mu);
    }
    Ok(out)
}

/// `α = 2W̃/(Tnμ)`.
pub fn pl_alpha(w_tilde: f64, epochs: f64, n: f64, mu: f64) -> f64 {
    2.0 * w_tilde / (epochs * n * mu)
}
