//! Zero-indexed permutations.

use std::ops::Index;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// A bijection on `[0, n)`. `map[j]` is the item visited at position `j`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Permutation {
    map: Vec<usize>,
}

impl Permutation {
    pub fn new(map: Vec<usize>) -> Result<Self> {
        if !is_bijection(&map) {
            return Err(Error::domain(format!(
                "not a permutation of 0..{}: {:?}",
                map.len(),
                truncate(&map)
            )));
        }
        Ok(Self { map })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            map: (0..n).collect(),
        }
    }

    /// Uniformly random permutation drawn by Fisher-Yates from `stream`.
    pub fn random(n: usize, stream: &mut RngStream) -> Result<Self> {
        if n == 0 {
            return Err(Error::domain("random permutation of zero items"));
        }
        let mut map: Vec<usize> = (0..n).collect();
        stream.shuffle(&mut map);
        Ok(Self { map })
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.map
    }

    pub fn into_vec(self) -> Vec<usize> {
        self.map
    }

    /// `q` with `q[p[j]] = j`.
    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.map.len()];
        for (j, &p) in self.map.iter().enumerate() {
            inv[p] = j;
        }
        Self { map: inv }
    }

    /// `(self ∘ other)[j] = self[other[j]]`.
    pub fn compose(&self, other: &Permutation) -> Result<Self> {
        if self.len() != other.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: other.len(),
            });
        }
        Ok(Self {
            map: other.map.iter().map(|&j| self.map[j]).collect(),
        })
    }

    pub fn is_identity(&self) -> bool {
        self.map.iter().enumerate().all(|(j, &p)| j == p)
    }
}

impl Index<usize> for Permutation {
    type Output = usize;

    fn index(&self, j: usize) -> &usize {
        &self.map[j]
    }
}

impl TryFrom<Vec<usize>> for Permutation {
    type Error = Error;

    fn try_from(map: Vec<usize>) -> Result<Self> {
        Self::new(map)
    }
}

impl From<Permutation> for Vec<usize> {
    fn from(p: Permutation) -> Self {
        p.map
    }
}

pub fn random_permutation(n: usize, stream: &mut RngStream) -> Result<Permutation> {
    Permutation::random(n, stream)
}

pub fn inverse_permutation(p: &Permutation) -> Permutation {
    p.inverse()
}

/// Sorting `map` would yield `0, 1, ..., n-1`.
pub fn is_bijection(map: &[usize]) -> bool {
    let mut seen = vec![false; map.len()];
    for &x in map {
        if x >= map.len() || seen[x] {
            return false;
        }
        seen[x] = true;
    }
    true
}

fn truncate(map: &[usize]) -> &[usize] {
    &map[..map.len().min(16)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashMap;

    fn p(map: &[usize]) -> Permutation {
        Permutation::new(map.to_vec()).unwrap()
    }

    #[test]
    fn rejects_non_bijections() {
        assert!(Permutation::new(vec![0, 0]).is_err());
        assert!(Permutation::new(vec![1, 2]).is_err());
        assert!(Permutation::new(vec![]).is_ok());
    }

    #[test]
    fn random_of_one_and_zero() {
        let mut s = RngStream::new(0, 0, 0, "t");
        assert_eq!(Permutation::random(1, &mut s).unwrap(), p(&[0]));
        assert!(matches!(Permutation::random(0, &mut s), Err(Error::Domain(_))));
    }

    #[test]
    fn random_is_reproducible() {
        let a = Permutation::random(4, &mut RngStream::new(5, 1, 2, "t")).unwrap();
        let b = Permutation::random(4, &mut RngStream::new(5, 1, 2, "t")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn inverse_examples() {
        assert_eq!(p(&[0, 1, 2]).inverse(), p(&[0, 1, 2]));
        assert_eq!(p(&[2, 0, 1]).inverse(), p(&[1, 2, 0]));
    }

    #[test]
    fn uniform_over_all_720_permutations_of_six() {
        let draws = 60_000usize;
        let mut stream = RngStream::new(2024, 0, 0, "uniformity");
        let mut counts: HashMap<Vec<usize>, usize> = HashMap::new();
        for _ in 0..draws {
            let perm = Permutation::random(6, &mut stream).unwrap();
            *counts.entry(perm.into_vec()).or_default() += 1;
        }
        assert_eq!(counts.len(), 720);
        let prob = 1.0 / 720.0;
        let expected = draws as f64 * prob;
        let stderr = (draws as f64 * prob * (1.0 - prob)).sqrt();
        let mut chi2 = 0.0;
        for &c in counts.values() {
            let dev = c as f64 - expected;
            assert!(dev.abs() <= 5.0 * stderr, "count {c} vs expected {expected}");
            chi2 += dev * dev / expected;
        }
        // 719 degrees of freedom; upper 0.1% quantile is about 846.
        assert!(chi2 < 846.0, "chi-square {chi2}");
    }

    proptest! {
        #[test]
        fn random_is_bijection(n in 1usize..200, seed in any::<u64>()) {
            let perm = Permutation::random(n, &mut RngStream::new(seed, 0, 0, "prop")).unwrap();
            prop_assert!(is_bijection(perm.as_slice()));
        }

        #[test]
        fn compose_with_inverse_is_identity(n in 1usize..100, seed in any::<u64>()) {
            let perm = Permutation::random(n, &mut RngStream::new(seed, 0, 0, "prop")).unwrap();
            prop_assert!(perm.compose(&perm.inverse()).unwrap().is_identity());
            prop_assert!(perm.inverse().compose(&perm).unwrap().is_identity());
        }
    }
}
