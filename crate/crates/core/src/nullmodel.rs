//! Stance composition along the anomaly ranking, against a label-permutation
//! baseline.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::anomaly::derive_seed;
use crate::classifier::{PredictedLabel, StancePrediction};
use crate::corpus::AccountId;
use crate::error::{Error, Result};

/// `values[k-1]` is the apruebo fraction among the top `k` ranked accounts
/// with a disclosed stance.
#[derive(Clone, Debug, PartialEq)]
pub struct StanceCurve {
    pub values: Vec<f64>,
}

/// Disclosed stances (true = apruebo) in ranking order. Accounts without a
/// prediction or with an undisclosed label are skipped.
pub fn ranked_stances(ranking: &[AccountId], predictions: &[StancePrediction]) -> Vec<bool> {
    let by_id: BTreeMap<AccountId, PredictedLabel> = predictions.iter().map(|p| (p.account_id, p.effective())).collect();
    ranking
        .iter()
        .filter_map(|id| match by_id.get(id) {
            Some(PredictedLabel::Apruebo) => Some(true),
            Some(PredictedLabel::Rechazo) => Some(false),
            _ => None,
        })
        .collect()
}

fn prefix_fractions(seq: &[bool]) -> Vec<f64> {
    let mut hits = 0u32;
    seq.iter()
        .enumerate()
        .map(|(i, &a)| {
            hits += a as u32;
            hits as f64 / (i + 1) as f64
        })
        .collect()
}

pub fn stance_anomaly_curve(ranking: &[AccountId], predictions: &[StancePrediction]) -> Result<StanceCurve> {
    let seq = ranked_stances(ranking, predictions);
    if seq.is_empty() {
        return Err(Error::invalid("stance curve needs at least one ranked account with a disclosed stance"));
    }
    Ok(StanceCurve {
        values: prefix_fractions(&seq),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Envelope {
    pub observed: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// Observed value strictly outside `[lo, hi]`.
    pub outside: Vec<bool>,
}

impl Envelope {
    pub fn len(&self) -> usize {
        self.observed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observed.is_empty()
    }

    pub fn inside_fraction(&self) -> f64 {
        if self.is_empty() {
            return 1.0;
        }
        self.outside.iter().filter(|&&o| !o).count() as f64 / self.len() as f64
    }

    /// Maximal runs of consecutive out-of-band ranks as 1-based inclusive
    /// `(first_k, last_k)` pairs.
    pub fn outside_runs(&self) -> Vec<(usize, usize)> {
        let mut runs = Vec::new();
        let mut start = None;
        for (i, &o) in self.outside.iter().enumerate() {
            match (o, start) {
                (true, None) => start = Some(i + 1),
                (false, Some(s)) => {
                    runs.push((s, i));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            runs.push((s, self.outside.len()));
        }
        runs
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["k", "observed", "lo", "hi", "outside_flag"])?;
        for i in 0..self.len() {
            w.write_record([
                (i + 1).to_string(),
                self.observed[i].to_string(),
                self.lo[i].to_string(),
                self.hi[i].to_string(),
                (self.outside[i] as u8).to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Linear-interpolation percentile of sorted data, `q` in [0, 1].
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let j = (i + 1).min(sorted.len() - 1);
    let frac = pos - i as f64;
    if frac == 0.0 || sorted[i] == sorted[j] {
        sorted[i]
    } else {
        sorted[i] + frac * (sorted[j] - sorted[i])
    }
}

/// Curves of `m` uniform label permutations, one per derived seed.
pub fn permuted_curves(seq: &[bool], m: usize, seed: u64) -> Vec<Vec<f64>> {
    (0..m)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
            let mut s = seq.to_vec();
            s.shuffle(&mut rng);
            prefix_fractions(&s)
        })
        .collect()
}

/// Pointwise 2.5th–97.5th percentile band of `m` permuted curves.
pub fn permutation_envelope(ranking: &[AccountId], predictions: &[StancePrediction], m: usize, seed: u64) -> Result<Envelope> {
    if m < 2 {
        return Err(Error::invalid(format!("permutation envelope needs at least 2 permutations, got {m}")));
    }
    let observed = stance_anomaly_curve(ranking, predictions)?.values;
    let seq = ranked_stances(ranking, predictions);
    let curves = permuted_curves(&seq, m, seed);
    let n = observed.len();
    let mut lo = Vec::with_capacity(n);
    let mut hi = Vec::with_capacity(n);
    let mut column = vec![0.0; m];
    for k in 0..n {
        for (c, v) in curves.iter().zip(column.iter_mut()) {
            *v = c[k];
        }
        column.sort_by(f64::total_cmp);
        lo.push(percentile(&column, 0.025));
        hi.push(percentile(&column, 0.975));
    }
    let outside = (0..n).map(|k| observed[k] < lo[k] || observed[k] > hi[k]).collect();
    Ok(Envelope { observed, lo, hi, outside })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn preds(labels: &[PredictedLabel]) -> (Vec<AccountId>, Vec<StancePrediction>) {
        let ids: Vec<AccountId> = (0..labels.len() as u64).map(AccountId).collect();
        let p = labels
            .iter()
            .zip(&ids)
            .map(|(&l, &id)| StancePrediction {
                account_id: id,
                p_apruebo: 0.5,
                label: l,
                seed_label: None,
            })
            .collect();
        (ids, p)
    }

    #[test]
    fn all_apruebo_is_constant() {
        let (ids, p) = preds(&[PredictedLabel::Apruebo; 7]);
        assert!(stance_anomaly_curve(&ids, &p).unwrap().values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn alternating_hits_half_at_even_k() {
        let labels: Vec<_> = (0..10)
            .map(|i| if i % 2 == 0 { PredictedLabel::Apruebo } else { PredictedLabel::Rechazo })
            .collect();
        let (ids, p) = preds(&labels);
        let c = stance_anomaly_curve(&ids, &p).unwrap();
        for k in (2..=10).step_by(2) {
            assert_eq!(c.values[k - 1], 0.5);
        }
    }

    #[test]
    fn undisclosed_are_skipped_and_empty_is_error() {
        let (ids, p) = preds(&[PredictedLabel::Undisclosed, PredictedLabel::Rechazo]);
        assert_eq!(stance_anomaly_curve(&ids, &p).unwrap().values, vec![0.0]);
        let (ids, p) = preds(&[PredictedLabel::Undisclosed]);
        assert!(stance_anomaly_curve(&ids, &p).is_err());
    }

    #[test]
    fn envelope_collapses_at_n() {
        let labels: Vec<_> = (0..50)
            .map(|i| if i % 3 == 0 { PredictedLabel::Rechazo } else { PredictedLabel::Apruebo })
            .collect();
        let (ids, p) = preds(&labels);
        let e = permutation_envelope(&ids, &p, 20, 9).unwrap();
        let n = e.len();
        assert_eq!(e.lo[n - 1], e.hi[n - 1]);
        assert_eq!(e.lo[n - 1], e.observed[n - 1]);
        assert!(permutation_envelope(&ids, &p, 1, 9).is_err());
        assert_eq!(e, permutation_envelope(&ids, &p, 20, 9).unwrap());
    }

    #[test]
    fn runs_are_maximal() {
        let e = Envelope {
            observed: vec![0.0; 6],
            lo: vec![0.0; 6],
            hi: vec![0.0; 6],
            outside: vec![true, true, false, true, false, true],
        };
        assert_eq!(e.outside_runs(), vec![(1, 2), (4, 4), (6, 6)]);
    }
}
