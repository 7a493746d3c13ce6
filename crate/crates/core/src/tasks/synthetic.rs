use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetProvenance};
use crate::error::{Error, Result};
use crate::herding::VectorSet;
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    /// `y = <w*, x> + noise·ξ`.
    Regression,
    /// `y = sign(<w*, x> + noise·ξ)`, with `sign(0) = +1`.
    Classification,
}

/// Standard-normal features with labels from a hidden `w* ~ N(0, I/d)`.
///
/// Draw order from stream `(seed, 0, 0, "synthetic")`: the `d` entries of
/// `w*`, then per example its `d` features followed by one noise draw.
pub fn generate_synthetic(
    kind: SyntheticKind,
    examples: usize,
    dim: usize,
    seed: u64,
    noise: f64,
) -> Result<Dataset> {
    if examples == 0 || dim == 0 {
        return Err(Error::domain("synthetic dataset needs N >= 1 and d >= 1"));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::domain(format!("noise must be nonnegative, got {noise}")));
    }
    let mut stream = RngStream::new(seed, 0, 0, "synthetic");
    let scale = 1.0 / (dim as f64).sqrt();
    let true_weights: Vec<f64> = (0..dim).map(|_| stream.normal() * scale).collect();
    let mut features = Vec::with_capacity(examples * dim);
    let mut labels = Vec::with_capacity(examples);
    for _ in 0..examples {
        let start = features.len();
        for _ in 0..dim {
            features.push(stream.normal());
        }
        let xi = stream.normal();
        let signal = crate::vector::dot(&true_weights, &features[start..]);
        let y = match kind {
            SyntheticKind::Regression => signal + noise * xi,
            SyntheticKind::Classification => {
                if signal + noise * xi >= 0.0 {
                    1.0
                } else {
                    -1.0
                }
            }
        };
        labels.push(y);
    }
    Dataset::new(
        features,
        labels,
        dim,
        DatasetProvenance::Synthetic {
            kind,
            seed,
            noise,
            true_weights,
        },
    )
}

/// `Unif(0,1)^d` draws with the global mean subtracted, before normalization.
pub(crate) fn centered_uniform(count: usize, dim: usize, stream: &mut RngStream) -> Vec<f64> {
    let mut data: Vec<f64> = (0..count * dim).map(|_| stream.next_f64()).collect();
    loop {
        let mut mean = vec![0.0; dim];
        for chunk in data.chunks_exact(dim) {
            for (m, x) in mean.iter_mut().zip(chunk) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= count as f64);
        let mut centered = data.clone();
        for chunk in centered.chunks_exact_mut(dim) {
            for (x, m) in chunk.iter_mut().zip(&mean) {
                *x -= m;
            }
        }
        let degenerate: Vec<usize> = centered
            .chunks_exact(dim)
            .enumerate()
            .filter(|(_, v)| v.iter().all(|&x| x == 0.0))
            .map(|(i, _)| i)
            .collect();
        if degenerate.is_empty() {
            return centered;
        }
        for i in degenerate {
            for x in &mut data[i * dim..(i + 1) * dim] {
                *x = stream.next_f64();
            }
        }
    }
}

/// Random unit vectors: uniform on the cube, globally centered, then each
/// scaled to unit Euclidean norm. Stream `(seed, 0, 0, "vectors")`.
pub fn generate_vectors(count: usize, dim: usize, seed: u64) -> Result<VectorSet> {
    if count < 2 || dim == 0 {
        return Err(Error::domain("generate_vectors needs count >= 2 and d >= 1"));
    }
    let mut stream = RngStream::new(seed, 0, 0, "vectors");
    let mut data = centered_uniform(count, dim, &mut stream);
    for chunk in data.chunks_exact_mut(dim) {
        let norm = crate::vector::dot(chunk, chunk).sqrt();
        chunk.iter_mut().for_each(|x| *x /= norm);
    }
    VectorSet::from_flat(1, count, dim, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_dataset() {
        let a = generate_synthetic(SyntheticKind::Regression, 50, 3, 9, 0.1).unwrap();
        let b = generate_synthetic(SyntheticKind::Regression, 50, 3, 9, 0.1).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(SyntheticKind::Regression, 50, 3, 10, 0.1).unwrap();
        assert!(!a.same_examples(&c));
    }

    #[test]
    fn noiseless_regression_is_realizable() {
        let data = generate_synthetic(SyntheticKind::Regression, 100, 4, 1, 0.0).unwrap();
        let DatasetProvenance::Synthetic { true_weights, .. } = data.provenance() else {
            panic!("synthetic provenance expected");
        };
        for i in 0..data.len() {
            let pred = crate::vector::dot(true_weights, data.features(i));
            assert_eq!(pred, data.label(i));
        }
    }

    #[test]
    fn classification_labels_are_signs() {
        let data = generate_synthetic(SyntheticKind::Classification, 200, 5, 3, 0.5).unwrap();
        assert!(data.labels().iter().all(|&y| y == 1.0 || y == -1.0));
        assert!(data.labels().iter().any(|&y| y == 1.0));
        assert!(data.labels().iter().any(|&y| y == -1.0));
    }

    #[test]
    fn feature_means_near_zero() {
        let n = 10_000;
        let d = 20;
        let data = generate_synthetic(SyntheticKind::Regression, n, d, 4, 1.0).unwrap();
        for k in 0..d {
            let mean: f64 = (0..n).map(|i| data.features(i)[k]).sum::<f64>() / n as f64;
            assert!(mean.abs() < 4.0 / (n as f64).sqrt(), "coordinate {k}: {mean}");
        }
    }

    #[test]
    fn vectors_are_unit_and_centered_before_normalization() {
        let mut stream = RngStream::new(5, 0, 0, "vectors");
        let centered = centered_uniform(1000, 16, &mut stream);
        for k in 0..16 {
            let mean: f64 = centered.chunks_exact(16).map(|v| v[k]).sum::<f64>() / 1000.0;
            assert!(mean.abs() < 1e-12);
        }
        let set = generate_vectors(1000, 16, 5).unwrap();
        assert_eq!(set.len(), 1000);
        for j in 0..set.len() {
            let v = set.get(0, j);
            let norm = crate::vector::dot(v, v).sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn vectors_reject_tiny_counts() {
        assert!(generate_vectors(1, 4, 0).is_err());
    }
}
