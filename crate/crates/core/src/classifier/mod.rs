//! Stance propagation: a boosted tree classifier trained on seed labels,
//! thresholded predictions, stance shares and log-odds feature association.

pub mod gbt;

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::AccountId;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::seeding::{LabelSet, Stance};
use crate::Scalar;

pub use gbt::{train_gbt, FeatureColumns, GbtParams, TrainLog};

/// Minimum class probability for a stance to be assigned.
pub const DEFAULT_THRESHOLD: f64 = 0.55;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictedLabel {
    Apruebo,
    Rechazo,
    Undisclosed,
}

impl PredictedLabel {
    pub const ALL: [PredictedLabel; 3] = [PredictedLabel::Apruebo, PredictedLabel::Rechazo, PredictedLabel::Undisclosed];

    pub fn as_str(self) -> &'static str {
        match self {
            PredictedLabel::Apruebo => "apruebo",
            PredictedLabel::Rechazo => "rechazo",
            PredictedLabel::Undisclosed => "undisclosed",
        }
    }

    pub fn stance(self) -> Option<Stance> {
        match self {
            PredictedLabel::Apruebo => Some(Stance::Apruebo),
            PredictedLabel::Rechazo => Some(Stance::Rechazo),
            PredictedLabel::Undisclosed => None,
        }
    }
}

impl From<Stance> for PredictedLabel {
    fn from(s: Stance) -> Self {
        match s {
            Stance::Apruebo => PredictedLabel::Apruebo,
            Stance::Rechazo => PredictedLabel::Rechazo,
        }
    }
}

impl fmt::Display for PredictedLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PredictedLabel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        PredictedLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown label `{s}`")))
    }
}

/// Label implied by a positive-class probability.
pub fn label_for(p_apruebo: f64, threshold: f64) -> PredictedLabel {
    if p_apruebo >= threshold {
        PredictedLabel::Apruebo
    } else if 1.0 - p_apruebo >= threshold {
        PredictedLabel::Rechazo
    } else {
        PredictedLabel::Undisclosed
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StancePrediction {
    pub account_id: AccountId,
    pub p_apruebo: f64,
    /// Classifier label from `p_apruebo` and the threshold.
    pub label: PredictedLabel,
    /// Seed or manual label, when the account had one.
    pub seed_label: Option<Stance>,
}

impl StancePrediction {
    /// The seed label when present, otherwise the classifier label.
    pub fn effective(&self) -> PredictedLabel {
        self.seed_label.map_or(self.label, PredictedLabel::from)
    }
}

/// Training rows (indices into `fm`) and their targets (`true` = apruebo).
pub fn training_rows(fm: &FeatureMatrix, labels: &LabelSet) -> (Vec<usize>, Vec<bool>) {
    fm.row_ids
        .iter()
        .enumerate()
        .filter_map(|(i, &a)| labels.get(a).map(|l| (i, l.stance == Stance::Apruebo)))
        .unzip()
}

pub fn train_stance_model(
    fm: &FeatureMatrix,
    labels: &LabelSet,
    params: &GbtParams,
    seed: u64,
) -> Result<(gbt::GbtModel<f64>, TrainLog)> {
    let (rows, y) = training_rows(fm, labels);
    let cols = FeatureColumns::from_sparse(&fm.matrix, &rows);
    train_gbt(&cols, &y, params, seed)
}

pub fn predict_stances(
    model: &gbt::GbtModel<f64>,
    fm: &FeatureMatrix,
    labels: &LabelSet,
    threshold: f64,
) -> Result<Vec<StancePrediction>> {
    let probs = model.predict_proba_sparse(&fm.matrix)?;
    Ok(fm
        .row_ids
        .iter()
        .zip(probs)
        .map(|(&account_id, p)| StancePrediction {
            account_id,
            p_apruebo: p,
            label: label_for(p, threshold),
            seed_label: labels.get(account_id).map(|l| l.stance),
        })
        .collect())
}

pub fn write_predictions_csv<W: Write>(preds: &[StancePrediction], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["account_id", "p_apruebo", "label", "seed_label", "effective"])?;
    for p in preds {
        w.write_record([
            p.account_id.to_string().as_str(),
            &p.p_apruebo.to_string(),
            p.label.as_str(),
            p.seed_label.map_or("", Stance::as_str),
            p.effective().as_str(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("predictions", e))?;
    Ok(())
}

pub fn read_predictions_csv<R: std::io::Read>(input: R) -> Result<Vec<StancePrediction>> {
    let mut out = Vec::new();
    for rec in csv::Reader::from_reader(input).records() {
        let rec = rec?;
        let bad = || Error::Format {
            what: "predictions csv",
            detail: format!("{rec:?}"),
        };
        out.push(StancePrediction {
            account_id: rec.get(0).and_then(|s| s.parse().ok()).ok_or_else(bad)?,
            p_apruebo: rec.get(1).and_then(|s| s.parse().ok()).ok_or_else(bad)?,
            label: rec.get(2).and_then(|s| s.parse().ok()).ok_or_else(bad)?,
            seed_label: match rec.get(3) {
                Some("") | None => None,
                Some(s) => Some(s.parse()?),
            },
        });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StanceShares {
    pub apruebo: f64,
    pub rechazo: f64,
    pub undisclosed: f64,
}

/// Percentages of accounts per effective label.
pub fn stance_shares(preds: &[StancePrediction]) -> StanceShares {
    if preds.is_empty() {
        return StanceShares {
            apruebo: 0.0,
            rechazo: 0.0,
            undisclosed: 100.0,
        };
    }
    let mut counts = [0usize; 3];
    for p in preds {
        counts[p.effective() as usize] += 1;
    }
    let n = preds.len() as f64;
    StanceShares {
        apruebo: 100.0 * counts[0] as f64 / n,
        rechazo: 100.0 * counts[1] as f64 / n,
        undisclosed: 100.0 * counts[2] as f64 / n,
    }
}

/// Smoothed log-odds ratio of each feature between two groups; positive
/// values lean towards the first group. Returned sorted by descending score
/// (ties by feature index).
pub fn log_odds_terms<F: Scalar>(counts_a: &[F], counts_r: &[F], alpha: F) -> Result<Vec<(usize, F)>> {
    if counts_a.len() != counts_r.len() {
        return Err(Error::ColumnMismatch {
            expected: counts_a.len(),
            actual: counts_r.len(),
        });
    }
    if !(alpha > F::zero()) {
        return Err(Error::invalid("smoothing must be positive"));
    }
    let total_a: F = counts_a.iter().copied().sum();
    let total_r: F = counts_r.iter().copied().sum();
    if total_a <= F::zero() || total_r <= F::zero() {
        return Err(Error::invalid("log-odds needs two non-empty groups"));
    }
    let log_odds = |f: F, total: F| ((f + alpha) / (total - f + alpha)).ln();
    let mut scores: Vec<(usize, F)> = counts_a
        .iter()
        .zip(counts_r)
        .enumerate()
        .map(|(j, (&fa, &fr))| (j, log_odds(fa, total_a) - log_odds(fr, total_r)))
        .collect();
    scores.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal).then(a.0.cmp(&b.0)));
    Ok(scores)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TermAssociation {
    pub column: usize,
    pub label: String,
    pub count_apruebo: u64,
    pub count_rechazo: u64,
    pub score: f64,
}

/// Log-odds association of every feature column with the predicted
/// apruebo/rechazo account groups.
pub fn associate_features(fm: &FeatureMatrix, preds: &[StancePrediction], alpha: f64) -> Result<Vec<TermAssociation>> {
    let group: BTreeMap<AccountId, PredictedLabel> = preds.iter().map(|p| (p.account_id, p.effective())).collect();
    let mut ca = vec![0u64; fm.n_cols()];
    let mut cr = vec![0u64; fm.n_cols()];
    for (i, a) in fm.row_ids.iter().enumerate() {
        let target = match group.get(a) {
            Some(PredictedLabel::Apruebo) => &mut ca,
            Some(PredictedLabel::Rechazo) => &mut cr,
            _ => continue,
        };
        for (c, v) in fm.matrix.row(i) {
            target[c] += v as u64;
        }
    }
    let fa: Vec<f64> = ca.iter().map(|&c| c as f64).collect();
    let fr: Vec<f64> = cr.iter().map(|&c| c as f64).collect();
    let scores = log_odds_terms(&fa, &fr, alpha)?;
    Ok(scores
        .into_iter()
        .map(|(j, s)| TermAssociation {
            column: j,
            label: fm.column_label(j),
            count_apruebo: ca[j],
            count_rechazo: cr[j],
            score: s,
        })
        .collect())
}

pub fn write_associations_csv<W: Write>(rows: &[TermAssociation], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["rank", "feature", "count_apruebo", "count_rechazo", "log_odds"])?;
    for (k, r) in rows.iter().enumerate() {
        w.write_record([
            (k + 1).to_string(),
            r.label.clone(),
            r.count_apruebo.to_string(),
            r.count_rechazo.to_string(),
            r.score.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("associations", e))?;
    Ok(())
}
