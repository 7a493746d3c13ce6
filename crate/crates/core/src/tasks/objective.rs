use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::vector::{dot, DenseVector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObjectiveKind {
    /// `log(1 + exp(-y<w,x>)) + (λ/2)‖w‖²` with `y ∈ {-1, +1}`.
    Logistic { lambda: f64 },
    /// `½(<w,x> - y)²`.
    LeastSquares,
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ObjectiveKind::Logistic { .. } => f.write_str("logistic"),
            ObjectiveKind::LeastSquares => f.write_str("least_squares"),
        }
    }
}

impl FromStr for ObjectiveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logistic" | "logreg" => Ok(ObjectiveKind::Logistic { lambda: 0.0 }),
            "least_squares" | "least-squares" => Ok(ObjectiveKind::LeastSquares),
            other => Err(Error::config(format!(
                "unknown objective `{other}` (expected logistic or least_squares)"
            ))),
        }
    }
}

/// `ln(1 + e^t)` without overflow.
#[inline]
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// Logistic function, stable for large `|t|`.
#[inline]
fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn check_label(y: f64) -> Result<()> {
    if y == 1.0 || y == -1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("logistic label must be -1 or +1, got {y}")))
    }
}

fn check_dims(w: &[f64], x: &[f64]) -> Result<()> {
    if w.len() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: w.len(),
            got: x.len(),
        });
    }
    Ok(())
}

pub fn logreg_loss(w: &[f64], x: &[f64], y: f64, lambda: f64) -> Result<f64> {
    check_label(y)?;
    check_dims(w, x)?;
    Ok(softplus(-y * dot(w, x)) + 0.5 * lambda * dot(w, w))
}

pub fn logreg_grad(w: &[f64], x: &[f64], y: f64, lambda: f64) -> Result<DenseVector> {
    check_label(y)?;
    check_dims(w, x)?;
    let mut out = vec![0.0; w.len()];
    add_logreg_grad(w, x, y, lambda, &mut out);
    DenseVector::new(out)
}

pub fn least_squares_loss(w: &[f64], x: &[f64], y: f64) -> Result<f64> {
    check_dims(w, x)?;
    let r = dot(w, x) - y;
    Ok(0.5 * r * r)
}

pub fn least_squares_grad(w: &[f64], x: &[f64], y: f64) -> Result<DenseVector> {
    check_dims(w, x)?;
    let mut out = vec![0.0; w.len()];
    add_least_squares_grad(w, x, y, &mut out);
    DenseVector::new(out)
}

#[inline]
fn add_logreg_grad(w: &[f64], x: &[f64], y: f64, lambda: f64, out: &mut [f64]) {
    let coef = -y * sigmoid(-y * dot(w, x));
    for k in 0..out.len() {
        out[k] += coef * x[k] + lambda * w[k];
    }
}

#[inline]
fn add_least_squares_grad(w: &[f64], x: &[f64], y: f64, out: &mut [f64]) {
    let r = dot(w, x) - y;
    for k in 0..out.len() {
        out[k] += r * x[k];
    }
}

/// An objective bound to a dataset. Labels are validated once at construction.
#[derive(Debug, Clone)]
pub struct Objective {
    kind: ObjectiveKind,
    data: Arc<Dataset>,
}

impl Objective {
    pub fn new(kind: ObjectiveKind, data: Arc<Dataset>) -> Result<Self> {
        if let ObjectiveKind::Logistic { lambda } = kind {
            if !(lambda >= 0.0 && lambda.is_finite()) {
                return Err(Error::domain(format!("lambda must be nonnegative, got {lambda}")));
            }
            for (i, &y) in data.labels().iter().enumerate() {
                check_label(y).map_err(|_| {
                    Error::domain(format!("example {i}: logistic label must be -1 or +1, got {y}"))
                })?;
            }
        }
        Ok(Self { kind, data })
    }

    pub fn kind(&self) -> ObjectiveKind {
        self.kind
    }

    pub fn dataset(&self) -> &Arc<Dataset> {
        &self.data
    }

    pub fn dim(&self) -> usize {
        self.data.dim()
    }

    pub fn loss(&self, w: &[f64], index: usize) -> f64 {
        let x = self.data.features(index);
        let y = self.data.label(index);
        match self.kind {
            ObjectiveKind::Logistic { lambda } => softplus(-y * dot(w, x)) + 0.5 * lambda * dot(w, w),
            ObjectiveKind::LeastSquares => {
                let r = dot(w, x) - y;
                0.5 * r * r
            }
        }
    }

    /// `out += ∇f(w; index)`.
    #[inline]
    pub fn add_grad(&self, w: &[f64], index: usize, out: &mut [f64]) {
        let x = self.data.features(index);
        let y = self.data.label(index);
        match self.kind {
            ObjectiveKind::Logistic { lambda } => add_logreg_grad(w, x, y, lambda, out),
            ObjectiveKind::LeastSquares => add_least_squares_grad(w, x, y, out),
        }
    }

    /// Mean gradient over `indices`, summed in slice order.
    pub fn mean_grad(&self, w: &[f64], indices: &[usize]) -> Result<DenseVector> {
        if indices.is_empty() {
            return Err(Error::domain("gradient over zero examples"));
        }
        let mut out = vec![0.0; self.dim()];
        for &i in indices {
            self.add_grad(w, i, &mut out);
        }
        let count = indices.len() as f64;
        out.iter_mut().for_each(|g| *g /= count);
        DenseVector::new(out)
    }

    pub fn grad(&self, w: &[f64], index: usize) -> Result<DenseVector> {
        self.mean_grad(w, std::slice::from_ref(&index))
    }

    /// Mean loss over `indices`, summed in slice order.
    pub fn mean_loss(&self, w: &[f64], indices: &[usize]) -> Result<f64> {
        if indices.is_empty() {
            return Err(Error::domain("loss over zero examples"));
        }
        let total: f64 = indices.iter().fold(0.0, |acc, &i| acc + self.loss(w, i));
        Ok(total / indices.len() as f64)
    }
}
