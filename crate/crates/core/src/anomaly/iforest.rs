//! Isolation Forest: random axis-aligned partition trees over subsamples.
//! Points that isolate in few splits get scores close to 1.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Scalar;

const EULER_GAMMA: f64 = 0.5772156649;

/// Average path length of an unsuccessful binary-search-tree lookup among
/// `n` points; normalizes isolation depths.
pub fn average_path_length<F: Scalar>(n: usize) -> F {
    match n {
        0 | 1 => F::zero(),
        2 => F::one(),
        _ => {
            let m = F::from_usize_lossy(n - 1);
            let harmonic = m.ln() + F::lit(EULER_GAMMA);
            F::lit(2.0) * harmonic - F::lit(2.0) * m / F::from_usize_lossy(n)
        }
    }
}

/// Seed of tree `index` derived from a master seed (SplitMix64 finalizer).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestParams {
    pub trees: usize,
    pub sample_size: usize,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            trees: 100,
            sample_size: 256,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum INode<F> {
    Internal {
        feature: usize,
        split: F,
        left: usize,
        right: usize,
    },
    External {
        /// Training points that reached this node.
        size: usize,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ITree<F> {
    pub nodes: Vec<INode<F>>,
}

impl<F: Scalar> ITree<F> {
    fn grow(x: &[Vec<F>], idx: &mut [usize], depth: usize, limit: usize, rng: &mut ChaCha8Rng, nodes: &mut Vec<INode<F>>) -> usize {
        let me = nodes.len();
        nodes.push(INode::External { size: idx.len() });
        if depth >= limit || idx.len() <= 1 {
            return me;
        }
        let n_features = x[idx[0]].len();
        let ranges: Vec<(usize, F, F)> = (0..n_features)
            .filter_map(|j| {
                let (lo, hi) = idx.iter().fold((F::infinity(), F::neg_infinity()), |(lo, hi), &i| {
                    (lo.min(x[i][j]), hi.max(x[i][j]))
                });
                (hi > lo).then_some((j, lo, hi))
            })
            .collect();
        if ranges.is_empty() {
            return me;
        }
        let (feature, lo, hi) = ranges[rng.random_range(0..ranges.len())];
        let u = F::lit(rng.random::<f64>());
        let mut split = lo + u * (hi - lo);
        if !(split > lo) {
            split = hi;
        }
        // partition in place: values < split first
        let mut k = 0;
        for i in 0..idx.len() {
            if x[idx[i]][feature] < split {
                idx.swap(i, k);
                k += 1;
            }
        }
        let (l, r) = idx.split_at_mut(k);
        let left = Self::grow(x, l, depth + 1, limit, rng, nodes);
        let right = Self::grow(x, r, depth + 1, limit, rng, nodes);
        nodes[me] = INode::Internal {
            feature,
            split,
            left,
            right,
        };
        me
    }

    /// Depth of the terminal node plus the expected remaining depth of the
    /// training points it holds.
    pub fn path_length(&self, row: &[F]) -> F {
        let mut i = 0;
        let mut depth = 0usize;
        loop {
            match &self.nodes[i] {
                INode::External { size } => return F::from_usize_lossy(depth) + average_path_length(*size),
                INode::Internal {
                    feature,
                    split,
                    left,
                    right,
                } => {
                    i = if row[*feature] < *split { *left } else { *right };
                    depth += 1;
                }
            }
        }
    }

    pub fn height(&self) -> usize {
        fn rec<F>(nodes: &[INode<F>], i: usize) -> usize {
            match &nodes[i] {
                INode::External { .. } => 0,
                INode::Internal { left, right, .. } => 1 + rec(nodes, *left).max(rec(nodes, *right)),
            }
        }
        rec(&self.nodes, 0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IsolationForest<F> {
    pub trees: Vec<ITree<F>>,
    /// Effective subsample size (capped at the number of training rows).
    pub sample_size: usize,
    pub n_features: usize,
}

impl<F: Scalar> IsolationForest<F> {
    pub fn fit(x: &[Vec<F>], params: &ForestParams, seed: u64) -> Result<Self> {
        Self::validate(x, params)?;
        let samples = Self::subsamples(x.len(), params, seed);
        Self::fit_with_samples(x, &samples, seed)
    }

    /// Builds one tree per given subsample. Split randomness for tree `t`
    /// comes from the master seed and `t` alone.
    pub fn fit_with_samples(x: &[Vec<F>], samples: &[Vec<usize>], seed: u64) -> Result<Self> {
        if x.len() < 2 {
            return Err(Error::invalid(format!("isolation forest needs at least 2 rows, got {}", x.len())));
        }
        let n_features = x[0].len();
        if let Some(bad) = x.iter().find(|r| r.len() != n_features) {
            return Err(Error::ColumnMismatch {
                expected: n_features,
                actual: bad.len(),
            });
        }
        let psi = samples.first().map_or(0, Vec::len);
        if samples.is_empty() || psi < 2 || samples.iter().any(|s| s.len() != psi || s.iter().any(|&i| i >= x.len())) {
            return Err(Error::invalid("subsamples must share a size of at least 2 and index valid rows"));
        }
        let limit = (psi as f64).log2().ceil() as usize;
        let trees = samples
            .par_iter()
            .enumerate()
            .map(|(t, s)| {
                // split stream is distinct from the subsampling stream
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed ^ 0x005E_ED0F_5917, t as u64));
                let mut idx = s.clone();
                let mut nodes = Vec::new();
                ITree::grow(x, &mut idx, 0, limit, &mut rng, &mut nodes);
                ITree { nodes }
            })
            .collect();
        Ok(IsolationForest {
            trees,
            sample_size: psi,
            n_features,
        })
    }

    fn validate(x: &[Vec<F>], params: &ForestParams) -> Result<()> {
        if x.len() < 2 {
            return Err(Error::invalid(format!("isolation forest needs at least 2 rows, got {}", x.len())));
        }
        if params.trees == 0 || params.sample_size < 2 {
            return Err(Error::invalid("forest needs at least one tree and a sample size of at least 2"));
        }
        Ok(())
    }

    /// Subsample indices used for each tree by [`IsolationForest::fit`].
    pub fn subsamples(n_rows: usize, params: &ForestParams, seed: u64) -> Vec<Vec<usize>> {
        let psi = params.sample_size.min(n_rows);
        (0..params.trees)
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, t as u64));
                sample(&mut rng, n_rows, psi).into_vec()
            })
            .collect()
    }

    pub fn height_limit(&self) -> usize {
        (self.sample_size as f64).log2().ceil() as usize
    }

    /// Mean path length over trees, E[h(x)].
    pub fn mean_path_length(&self, row: &[F]) -> Result<F> {
        if row.len() != self.n_features {
            return Err(Error::ColumnMismatch {
                expected: self.n_features,
                actual: row.len(),
            });
        }
        let total: F = self.trees.iter().map(|t| t.path_length(row)).sum();
        Ok(total / F::from_usize_lossy(self.trees.len()))
    }

    /// Anomaly score in (0, 1]; higher is more anomalous.
    pub fn score(&self, row: &[F]) -> Result<F> {
        let eh = self.mean_path_length(row)?;
        let c = average_path_length::<F>(self.sample_size);
        Ok(F::lit(2.0).powf(-eh / c))
    }

    pub fn score_all(&self, x: &[Vec<F>]) -> Result<Vec<F>> {
        x.par_iter().map(|r| self.score(r)).collect()
    }
}
