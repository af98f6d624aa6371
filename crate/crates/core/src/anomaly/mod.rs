//! Per-account behavioral features and Isolation Forest scoring.

pub mod iforest;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::botcrit::digit_count;
use crate::corpus::{AccountId, Corpus, TweetKind};
use crate::error::{Error, Result};
use crate::netcomm::weak_components;

pub use iforest::{average_path_length, derive_seed, ForestParams, INode, ITree};

pub const FEATURE_NAMES: [&str; 15] = [
    "active_days",
    "rate_original",
    "rate_retweet",
    "rate_quote",
    "rate_reply",
    "daily_rhythm",
    "ff_ratio",
    "username_digits",
    "default_image",
    "in_interactions",
    "component_rank",
    "account_age_days",
    "rate_statuses",
    "rate_friends",
    "rate_followers",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BehaviorFeatures {
    pub active_days: f64,
    pub rate_original: f64,
    pub rate_retweet: f64,
    pub rate_quote: f64,
    pub rate_reply: f64,
    pub daily_rhythm: f64,
    pub ff_ratio: f64,
    pub username_digits: f64,
    pub default_image: f64,
    pub in_interactions: f64,
    pub component_rank: f64,
    pub account_age_days: f64,
    pub rate_statuses: f64,
    pub rate_friends: f64,
    pub rate_followers: f64,
}

impl BehaviorFeatures {
    pub fn to_vec(&self) -> Vec<f64> {
        vec![
            self.active_days,
            self.rate_original,
            self.rate_retweet,
            self.rate_quote,
            self.rate_reply,
            self.daily_rhythm,
            self.ff_ratio,
            self.username_digits,
            self.default_image,
            self.in_interactions,
            self.component_rank,
            self.account_age_days,
            self.rate_statuses,
            self.rate_friends,
            self.rate_followers,
        ]
    }
}

/// Interaction component of each corpus account.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionComponents {
    /// Size rank of the account's component (0 = largest). Isolated
    /// accounts get the number of non-trivial components.
    pub rank: BTreeMap<AccountId, usize>,
    pub n_components: usize,
}

impl InteractionComponents {
    pub fn is_connected(&self, id: AccountId) -> bool {
        self.rank.get(&id).is_some_and(|&r| r < self.n_components)
    }
}

/// Weak components of the union of retweet, quote and reply edges.
/// Targets outside the corpus take part in connectivity; self-interactions
/// are ignored. Equal-sized components are ordered by smallest account id.
pub fn interaction_components(corpus: &Corpus) -> InteractionComponents {
    let mut nodes: BTreeSet<AccountId> = corpus.accounts.keys().copied().collect();
    let mut pairs = Vec::new();
    for t in &corpus.tweets {
        if let (true, Some(target)) = (t.kind.is_interaction(), t.target_account_id) {
            if target != t.author_id {
                nodes.insert(target);
                pairs.push((t.author_id, target));
            }
        }
    }
    let index: BTreeMap<AccountId, usize> = nodes.iter().enumerate().map(|(i, &a)| (a, i)).collect();
    let (labels, sizes) = weak_components(nodes.len(), pairs.iter().map(|(a, b)| (index[a], index[b])));
    // labels are numbered by smallest member, so a stable sort on size keeps that tie order
    let mut order: Vec<usize> = (0..sizes.len()).filter(|&c| sizes[c] > 1).collect();
    order.sort_by_key(|&c| std::cmp::Reverse(sizes[c]));
    let mut rank_of = vec![order.len(); sizes.len()];
    for (r, &c) in order.iter().enumerate() {
        rank_of[c] = r;
    }
    let rank = corpus.accounts.keys().map(|a| (*a, rank_of[labels[index[a]]])).collect();
    InteractionComponents {
        rank,
        n_components: order.len(),
    }
}

/// Feature vectors for every account with at least one tweet, in account
/// id order.
pub fn behavior_features(corpus: &Corpus, components: &InteractionComponents) -> Result<Vec<(AccountId, BehaviorFeatures)>> {
    let end = corpus
        .end_date()
        .ok_or_else(|| Error::invalid("cannot compute behavior features of an empty corpus"))?;
    let mut days: BTreeMap<AccountId, BTreeSet<chrono::NaiveDate>> = BTreeMap::new();
    let mut kinds: BTreeMap<AccountId, [u64; 4]> = BTreeMap::new();
    for t in &corpus.tweets {
        days.entry(t.author_id).or_default().insert(t.created_at.date_naive());
        kinds.entry(t.author_id).or_default()[t.kind.index()] += 1;
    }
    let mut out = Vec::with_capacity(days.len());
    for (id, d) in &days {
        let acc = &corpus.accounts[id];
        let k = kinds[id];
        let active = d.len() as f64;
        let rate = |c: u64| (c as f64).ln_1p() / active;
        let age = ((end - acc.created_at.date_naive()).num_days()).max(1) as f64;
        let rank = *components.rank.get(id).unwrap_or(&components.n_components);
        out.push((
            *id,
            BehaviorFeatures {
                active_days: active,
                rate_original: rate(k[TweetKind::Original.index()]),
                rate_retweet: rate(k[TweetKind::Retweet.index()]),
                rate_quote: rate(k[TweetKind::Quote.index()]),
                rate_reply: rate(k[TweetKind::Reply.index()]),
                daily_rhythm: k.iter().sum::<u64>() as f64 / active,
                ff_ratio: acc.friends as f64 / (acc.followers as f64 + 1.0),
                username_digits: digit_count(&acc.username) as f64,
                default_image: if acc.default_profile_image { 1.0 } else { 0.0 },
                in_interactions: if rank < components.n_components { 1.0 } else { 0.0 },
                component_rank: rank as f64,
                account_age_days: age,
                rate_statuses: (acc.statuses as f64).ln_1p() / age,
                rate_friends: (acc.friends as f64).ln_1p() / age,
                rate_followers: (acc.followers as f64).ln_1p() / age,
            },
        ));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnomalyRecord {
    pub account_id: AccountId,
    pub features: BehaviorFeatures,
    pub score: f64,
    /// 1-based position in descending score order.
    pub rank: usize,
}

/// Scores accounts and ranks them by descending score, ties by account id.
pub fn score_accounts(model: &iforest::IsolationForest<f64>, features: &[(AccountId, BehaviorFeatures)]) -> Result<Vec<AnomalyRecord>> {
    let x: Vec<Vec<f64>> = features.iter().map(|(_, f)| f.to_vec()).collect();
    let scores = model.score_all(&x)?;
    let mut recs: Vec<AnomalyRecord> = features
        .iter()
        .zip(scores)
        .map(|((id, f), score)| AnomalyRecord {
            account_id: *id,
            features: f.clone(),
            score,
            rank: 0,
        })
        .collect();
    sort_records(&mut recs);
    Ok(recs)
}

pub(crate) fn sort_records(recs: &mut [AnomalyRecord]) {
    recs.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.account_id.cmp(&b.account_id)));
    for (i, r) in recs.iter_mut().enumerate() {
        r.rank = i + 1;
    }
}

/// Fits a forest to the behavior features and scores the same accounts.
pub fn fit_and_score(features: &[(AccountId, BehaviorFeatures)], params: &ForestParams, seed: u64) -> Result<Vec<AnomalyRecord>> {
    let x: Vec<Vec<f64>> = features.iter().map(|(_, f)| f.to_vec()).collect();
    let model = iforest::IsolationForest::fit(&x, params, seed)?;
    score_accounts(&model, features)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurvePoint {
    pub rank: usize,
    pub account_id: AccountId,
    pub score: f64,
    /// Share of all tweets published by the accounts ranked 1..=rank.
    pub cumulative_tweet_fraction: f64,
}

pub fn anomaly_curves(records: &[AnomalyRecord], corpus: &Corpus) -> Vec<CurvePoint> {
    let counts = corpus.tweets_per_account();
    let total: usize = records.iter().map(|r| counts.get(&r.account_id).copied().unwrap_or(0)).sum();
    let n = records.len();
    let mut acc = 0usize;
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            acc += counts.get(&r.account_id).copied().unwrap_or(0);
            let frac = if i + 1 == n {
                1.0
            } else if total == 0 {
                (i + 1) as f64 / n as f64
            } else {
                acc as f64 / total as f64
            };
            CurvePoint {
                rank: r.rank,
                account_id: r.account_id,
                score: r.score,
                cumulative_tweet_fraction: frac,
            }
        })
        .collect()
}

pub fn write_records_csv<W: Write>(records: &[AnomalyRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["account_id"];
    header.extend(FEATURE_NAMES);
    header.extend(["score", "rank"]);
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![r.account_id.to_string()];
        row.extend(r.features.to_vec().iter().map(|v| v.to_string()));
        row.push(r.score.to_string());
        row.push(r.rank.to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Reads records written by [`write_records_csv`].
pub fn read_records_csv<R: std::io::Read>(input: R) -> Result<Vec<AnomalyRecord>> {
    let mut rd = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for row in rd.records() {
        let row = row?;
        if row.len() != FEATURE_NAMES.len() + 3 {
            return Err(Error::ColumnMismatch {
                expected: FEATURE_NAMES.len() + 3,
                actual: row.len(),
            });
        }
        let num = |i: usize| -> Result<f64> {
            row[i].parse().map_err(|_| Error::Format {
                what: "anomaly csv",
                detail: format!("bad number {:?}", &row[i]),
            })
        };
        let v: Vec<f64> = (1..=FEATURE_NAMES.len()).map(num).collect::<Result<_>>()?;
        let id = row[0].parse().map(AccountId).map_err(|_| Error::Format {
            what: "anomaly csv",
            detail: format!("bad account id {:?}", &row[0]),
        })?;
        out.push(AnomalyRecord {
            account_id: id,
            features: BehaviorFeatures {
                active_days: v[0],
                rate_original: v[1],
                rate_retweet: v[2],
                rate_quote: v[3],
                rate_reply: v[4],
                daily_rhythm: v[5],
                ff_ratio: v[6],
                username_digits: v[7],
                default_image: v[8],
                in_interactions: v[9],
                component_rank: v[10],
                account_age_days: v[11],
                rate_statuses: v[12],
                rate_friends: v[13],
                rate_followers: v[14],
            },
            score: num(FEATURE_NAMES.len() + 1)?,
            rank: row[FEATURE_NAMES.len() + 2].parse().map_err(|_| Error::Format {
                what: "anomaly csv",
                detail: "bad rank".into(),
            })?,
        });
    }
    Ok(out)
}

pub fn write_curves_csv<W: Write>(points: &[CurvePoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["rank", "account_id", "score", "cumulative_tweet_fraction"])?;
    for p in points {
        w.write_record([
            p.rank.to_string(),
            p.account_id.to_string(),
            p.score.to_string(),
            p.cumulative_tweet_fraction.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{AccountRecord, TweetId, TweetRecord};
    use chrono::{TimeZone, Utc};

    fn account(id: u64, name: &str) -> AccountRecord {
        AccountRecord {
            account_id: AccountId(id),
            username: name.into(),
            full_name: String::new(),
            bio: String::new(),
            home_url: None,
            created_at: Utc.with_ymd_and_hms(2015, 1, 1, 0, 0, 0).unwrap(),
            followers: 0,
            friends: 0,
            statuses: 0,
            default_profile_image: false,
        }
    }

    fn tweet(id: u64, author: u64, day: u32, kind: TweetKind, target: Option<u64>) -> TweetRecord {
        TweetRecord {
            tweet_id: TweetId(id),
            author_id: AccountId(author),
            created_at: Utc.with_ymd_and_hms(2020, 9, day, 12, 0, 0).unwrap(),
            kind,
            target_account_id: target.map(AccountId),
            text: "hola".into(),
            hashtags: vec![],
        }
    }

    #[test]
    fn single_original_tweet() {
        let c = Corpus::new(vec![account(1, "alice")], vec![tweet(1, 1, 3, TweetKind::Original, None)], None).unwrap();
        let comps = interaction_components(&c);
        let f = behavior_features(&c, &comps).unwrap();
        let f = &f[0].1;
        assert_eq!(f.active_days, 1.0);
        assert!((f.rate_original - 2f64.ln()).abs() < 1e-15);
        assert_eq!(f.daily_rhythm, 1.0);
        assert_eq!(f.ff_ratio, 0.0);
        assert_eq!(f.in_interactions, 0.0);
        assert_eq!(f.component_rank, 0.0);
    }

    #[test]
    fn component_ranks_by_size() {
        let accounts: Vec<_> = (1..=6).map(|i| account(i, "u")).collect();
        let tweets = vec![
            tweet(1, 1, 1, TweetKind::Retweet, Some(2)),
            tweet(2, 3, 1, TweetKind::Reply, Some(4)),
            tweet(3, 4, 1, TweetKind::Quote, Some(5)),
            tweet(4, 6, 1, TweetKind::Retweet, Some(6)),
        ];
        let c = Corpus::new(accounts, tweets, None).unwrap();
        let comps = interaction_components(&c);
        assert_eq!(comps.n_components, 2);
        assert_eq!(comps.rank[&AccountId(3)], 0);
        assert_eq!(comps.rank[&AccountId(1)], 1);
        assert_eq!(comps.rank[&AccountId(6)], 2);
        assert!(!comps.is_connected(AccountId(6)));
    }

    #[test]
    fn cumulative_fraction_ends_at_one() {
        let accounts: Vec<_> = (1..=3).map(|i| account(i, "u")).collect();
        let tweets = vec![
            tweet(1, 1, 1, TweetKind::Original, None),
            tweet(2, 2, 1, TweetKind::Original, None),
            tweet(3, 3, 1, TweetKind::Original, None),
        ];
        let c = Corpus::new(accounts, tweets, None).unwrap();
        let comps = interaction_components(&c);
        let f = behavior_features(&c, &comps).unwrap();
        let recs = fit_and_score(&f, &ForestParams::default(), 1).unwrap();
        let curve = anomaly_curves(&recs, &c);
        for (k, p) in curve.iter().enumerate() {
            assert!((p.cumulative_tweet_fraction - (k + 1) as f64 / 3.0).abs() < 1e-12);
        }
        // identical features: ties go to account id order
        assert_eq!(recs.iter().map(|r| r.account_id.0).collect::<Vec<_>>(), vec![1, 2, 3]);
    }
}
