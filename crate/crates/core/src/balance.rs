//! Online sign-generation engines.
//!
//! Each engine looks at the running signed sum `r` and an incoming vector `c`,
//! picks `s ∈ {+1, -1}` and updates `r ← r + s·c`. Three engines exist:
//!
//! * [`SignEngine::Randomized`]: `s = +1` with probability `(1 - <r,c>) / 2`,
//!   clamped to `[0, 1]`. The high-probability prefix bound of
//!   [`theoretical_bound_a`] applies when every `‖c‖₂ ≤ 1`.
//! * [`SignEngine::Thresholded`]: same draw with `p = 1/2 - <r,c>/(2w)`, but
//!   refuses (returns [`Error::BalanceFail`]) when `|<r,c>| > w` or
//!   `‖r‖∞ > w`. A refusal leaves the state untouched.
//! * [`SignEngine::Greedy`]: deterministic, `s = +1` iff
//!   `‖r + c‖₂ < ‖r - c‖₂`. Ties go to `-1`. The comparison is done on
//!   squared norms accumulated in index order.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::vector::{dot, inf_norm, DenseVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    #[inline]
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }

    #[inline]
    pub fn flip(self) -> Sign {
        match self {
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
        }
    }

    #[inline]
    pub fn is_plus(self) -> bool {
        self == Sign::Plus
    }
}

/// Running signed sum of everything balanced so far.
#[derive(Debug, Clone, PartialEq)]
pub struct BalanceState {
    r: Vec<f64>,
}

impl BalanceState {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "balance state dimension must be positive");
        Self { r: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.r.len()
    }

    pub fn sum(&self) -> &[f64] {
        &self.r
    }

    pub fn to_vector(&self) -> DenseVector {
        DenseVector::new(self.r.clone()).expect("running sum stays finite")
    }

    pub fn reset(&mut self) {
        self.r.iter_mut().for_each(|x| *x = 0.0);
    }

    fn check_dim(&self, c: &[f64]) -> Result<()> {
        if c.len() != self.r.len() {
            return Err(Error::DimensionMismatch {
                expected: self.r.len(),
                got: c.len(),
            });
        }
        Ok(())
    }

    #[inline]
    fn apply(&mut self, sign: Sign, c: &[f64]) {
        let s = sign.value();
        for (r, x) in self.r.iter_mut().zip(c) {
            *r += s * x;
        }
    }
}

/// Which rule picks the sign. Randomized variants own their stream.
#[derive(Debug, Clone)]
pub enum SignEngine {
    Randomized(RngStream),
    Thresholded { threshold: f64, stream: RngStream },
    Greedy,
}

impl SignEngine {
    pub fn kind(&self) -> EngineKind {
        match self {
            SignEngine::Randomized(_) => EngineKind::Randomized,
            SignEngine::Thresholded { threshold, .. } => EngineKind::Thresholded(*threshold),
            SignEngine::Greedy => EngineKind::Greedy,
        }
    }

    /// Signs `c` against `state` and updates the state.
    pub fn balance(&mut self, state: &mut BalanceState, c: &[f64]) -> Result<Sign> {
        state.check_dim(c)?;
        let sign = match self {
            SignEngine::Randomized(stream) => {
                let p = ((1.0 - dot(&state.r, c)) / 2.0).clamp(0.0, 1.0);
                draw(stream, p)
            }
            SignEngine::Thresholded { threshold, stream } => {
                let w = *threshold;
                let inner = dot(&state.r, c);
                let r_inf = inf_norm(&state.r);
                if inner.abs() > w || r_inf > w {
                    return Err(Error::BalanceFail {
                        inner,
                        r_inf,
                        threshold: w,
                    });
                }
                draw(stream, 0.5 - inner / (2.0 * w))
            }
            SignEngine::Greedy => greedy_sign(&state.r, c),
        };
        state.apply(sign, c);
        Ok(sign)
    }
}

#[inline]
fn draw(stream: &mut RngStream, p: f64) -> Sign {
    if stream.bernoulli(p) {
        Sign::Plus
    } else {
        Sign::Minus
    }
}

#[inline]
fn greedy_sign(r: &[f64], c: &[f64]) -> Sign {
    let mut plus = 0.0;
    let mut minus = 0.0;
    for (a, b) in r.iter().zip(c) {
        let p = a + b;
        let m = a - b;
        plus += p * p;
        minus += m * m;
    }
    if plus < minus {
        Sign::Plus
    } else {
        Sign::Minus
    }
}

/// Engine selector without runtime state; turned into a [`SignEngine`] once a
/// stream provenance is known.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub enum EngineKind {
    #[default]
    Greedy,
    Randomized,
    Thresholded(f64),
}

impl EngineKind {
    pub fn build(self, stream: RngStream) -> SignEngine {
        match self {
            EngineKind::Greedy => SignEngine::Greedy,
            EngineKind::Randomized => SignEngine::Randomized(stream),
            EngineKind::Thresholded(threshold) => SignEngine::Thresholded { threshold, stream },
        }
    }

    pub fn is_deterministic(self) -> bool {
        matches!(self, EngineKind::Greedy)
    }
}

impl fmt::Display for EngineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EngineKind::Greedy => f.write_str("greedy"),
            EngineKind::Randomized => f.write_str("randomized"),
            EngineKind::Thresholded(w) => write!(f, "thresholded:{w}"),
        }
    }
}

impl FromStr for EngineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(EngineKind::Greedy),
            "randomized" => Ok(EngineKind::Randomized),
            other => {
                let w = other
                    .strip_prefix("thresholded:")
                    .and_then(|w| w.parse::<f64>().ok())
                    .ok_or_else(|| {
                        Error::config(format!(
                            "unknown engine `{other}` (expected greedy, randomized or thresholded:W)"
                        ))
                    })?;
                if !(w.is_finite() && w > 0.0) {
                    return Err(Error::config(format!(
                        "threshold must be positive and finite, got {w}"
                    )));
                }
                Ok(EngineKind::Thresholded(w))
            }
        }
    }
}

pub fn randomized_balance(
    state: &mut BalanceState,
    c: &DenseVector,
    stream: &mut RngStream,
) -> Result<Sign> {
    state.check_dim(c.as_slice())?;
    let p = ((1.0 - dot(&state.r, c.as_slice())) / 2.0).clamp(0.0, 1.0);
    let sign = draw(stream, p);
    state.apply(sign, c.as_slice());
    Ok(sign)
}

pub fn randomized_balance_thresholded(
    state: &mut BalanceState,
    c: &DenseVector,
    threshold: f64,
    stream: &mut RngStream,
) -> Result<Sign> {
    if !(threshold > 0.0 && threshold.is_finite()) {
        return Err(Error::domain(format!(
            "threshold must be positive, got {threshold}"
        )));
    }
    let mut engine = SignEngine::Thresholded {
        threshold,
        stream: stream.clone(),
    };
    let result = engine.balance(state, c.as_slice());
    if let SignEngine::Thresholded { stream: advanced, .. } = engine {
        *stream = advanced;
    }
    result
}

pub fn greedy_balance(state: &mut BalanceState, c: &DenseVector) -> Result<Sign> {
    SignEngine::Greedy.balance(state, c.as_slice())
}

/// Balances the pair difference `z1 - z2` and returns `(s, -s)`.
pub fn pair_balance(
    state: &mut BalanceState,
    z1: &[f64],
    z2: &[f64],
    engine: &mut SignEngine,
) -> Result<(Sign, Sign)> {
    if z1.len() != z2.len() {
        return Err(Error::DimensionMismatch {
            expected: z1.len(),
            got: z2.len(),
        });
    }
    let diff: Vec<f64> = z1.iter().zip(z2).map(|(a, b)| a - b).collect();
    let s = engine.balance(state, &diff)?;
    Ok((s, s.flip()))
}

/// `√(2 ln(4d/δ) ln(4N/δ))`, the high-probability bound on the signed
/// prefix inf-norm produced by the randomized engine on `N` vectors in
/// `R^d` with `‖z‖₂ ≤ 1`.
pub fn theoretical_bound_a(dim: usize, count: usize, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::domain(format!("delta must lie in (0, 1), got {delta}")));
    }
    if dim == 0 || count == 0 {
        return Err(Error::domain("dimension and count must be positive"));
    }
    let a = (4.0 * dim as f64 / delta).ln();
    let b = (4.0 * count as f64 / delta).ln();
    Ok((2.0 * a * b).sqrt())
}
