//! Anomaly groups, the three-condition bot criterion, and the registration
//! and content reports built on it.

use std::collections::BTreeMap;
use std::io::Write;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::anomaly::AnomalyRecord;
use crate::classifier::{PredictedLabel, StancePrediction};
use crate::corpus::{iso_week_start, AccountId, AccountRecord, Corpus};
use crate::error::{Error, Result};

pub const N_GROUPS: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BotParams {
    /// Share of accounts in the most anomalous group.
    pub anomaly_fraction: f64,
    /// Earliest registration date that counts towards the criterion.
    pub cutoff: NaiveDate,
    /// Usernames need strictly more digits than this.
    pub digit_threshold: usize,
}

impl Default for BotParams {
    fn default() -> Self {
        BotParams {
            anomaly_fraction: 0.075,
            cutoff: NaiveDate::from_ymd_opt(2020, 8, 8).unwrap(),
            digit_threshold: 4,
        }
    }
}

impl BotParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.anomaly_fraction > 0.0 && self.anomaly_fraction <= 1.0) {
            return Err(Error::Config(format!("anomaly_fraction must be in (0, 1], got {}", self.anomaly_fraction)));
        }
        Ok(())
    }
}

/// Zero code points of the Unicode decimal-digit (Nd) ranges; each range
/// spans ten consecutive characters.
const DIGIT_ZEROS: [u32; 65] = [
    0x30, 0x660, 0x6F0, 0x7C0, 0x966, 0x9E6, 0xA66, 0xAE6, 0xB66, 0xBE6, 0xC66, 0xCE6, 0xD66, 0xDE6, 0xE50, 0xED0,
    0xF20, 0x1040, 0x1090, 0x17E0, 0x1810, 0x1946, 0x19D0, 0x1A80, 0x1A90, 0x1B50, 0x1BB0, 0x1C40, 0x1C50, 0xA620,
    0xA8D0, 0xA900, 0xA9D0, 0xA9F0, 0xAA50, 0xABF0, 0xFF10, 0x104A0, 0x10D30, 0x11066, 0x110F0, 0x11136, 0x111D0,
    0x112F0, 0x11450, 0x114D0, 0x11650, 0x116C0, 0x11730, 0x118E0, 0x11950, 0x11C50, 0x11D50, 0x11DA0, 0x16A60,
    0x16B50, 0x1D7CE, 0x1D7D8, 0x1D7E2, 0x1D7EC, 0x1D7F6, 0x1E140, 0x1E2F0, 0x1E950, 0x1FBF0,
];

pub fn is_decimal_digit(c: char) -> bool {
    let c = c as u32;
    let i = DIGIT_ZEROS.partition_point(|&z| z <= c);
    i > 0 && c < DIGIT_ZEROS[i - 1] + 10
}

/// Number of decimal-digit characters in a username.
pub fn digit_count(username: &str) -> usize {
    username.chars().filter(|&c| is_decimal_digit(c)).count()
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnomalyGroups {
    /// Group 0..=4 of every ranked account.
    pub group: BTreeMap<AccountId, u8>,
    /// Score boundaries `[min, e1, e2, e3, max]` of the remainder; group
    /// `4 - j` covers `(e_j, e_{j+1}]`, and group 4 includes `min`.
    pub edges: [f64; 5],
}

impl AnomalyGroups {
    pub fn sizes(&self) -> [usize; N_GROUPS] {
        let mut s = [0; N_GROUPS];
        for &g in self.group.values() {
            s[g as usize] += 1;
        }
        s
    }

    pub fn get(&self, id: AccountId) -> Option<u8> {
        self.group.get(&id).copied()
    }
}

/// Size of the most anomalous group: `ceil(fraction * n)`.
pub fn top_group_size(n: usize, fraction: f64) -> usize {
    // guard against products like 0.075 * 1000 landing just above an integer
    let raw = fraction * n as f64;
    let size = (raw - 1e-9 * raw.abs().max(1.0)).ceil().max(0.0) as usize;
    size.min(n)
}

pub fn assign_anomaly_groups(records: &[AnomalyRecord], fraction: f64) -> Result<AnomalyGroups> {
    let n = records.len();
    if n < 5 {
        return Err(Error::invalid(format!("anomaly groups need at least 5 accounts, got {n}")));
    }
    let mut order: Vec<&AnomalyRecord> = records.iter().collect();
    order.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.account_id.cmp(&b.account_id)));
    let top = top_group_size(n, fraction);
    let mut group = BTreeMap::new();
    for r in &order[..top] {
        group.insert(r.account_id, 0u8);
    }
    let rest = &order[top..];
    let (lo, hi) = rest
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r.score), hi.max(r.score)));
    let width = (hi - lo) / 4.0;
    let edges = if rest.is_empty() {
        [0.0; 5]
    } else {
        [lo, lo + width, lo + 2.0 * width, lo + 3.0 * width, hi]
    };
    for r in rest {
        let above = edges[1..4].iter().filter(|&&e| r.score > e).count();
        group.insert(r.account_id, (4 - above) as u8);
    }
    Ok(AnomalyGroups { group, edges })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BotVerdict {
    pub account_id: AccountId,
    pub is_bot: bool,
    pub in_anomaly_group: bool,
    pub registered_after_cutoff: bool,
    pub digits_exceed: bool,
    pub digits: usize,
}

impl BotVerdict {
    pub fn reasons(&self) -> Vec<&'static str> {
        let mut r = Vec::new();
        if self.in_anomaly_group {
            r.push("anomaly_group");
        }
        if self.registered_after_cutoff {
            r.push("registration");
        }
        if self.digits_exceed {
            r.push("digits");
        }
        r
    }
}

pub fn bot_verdict(group: u8, account: &AccountRecord, params: &BotParams) -> BotVerdict {
    let digits = digit_count(&account.username);
    let in_anomaly_group = group == 0;
    let registered_after_cutoff = account.created_at.date_naive() >= params.cutoff;
    let digits_exceed = digits > params.digit_threshold;
    BotVerdict {
        account_id: account.account_id,
        is_bot: in_anomaly_group && registered_after_cutoff && digits_exceed,
        in_anomaly_group,
        registered_after_cutoff,
        digits_exceed,
        digits,
    }
}

/// Verdicts for every grouped account, in account id order.
pub fn flag_bots(groups: &AnomalyGroups, accounts: &BTreeMap<AccountId, AccountRecord>, params: &BotParams) -> Result<Vec<BotVerdict>> {
    groups
        .group
        .iter()
        .map(|(id, &g)| {
            let acc = accounts
                .get(id)
                .ok_or_else(|| Error::invalid(format!("grouped account {id} missing from the corpus")))?;
            Ok(bot_verdict(g, acc, params))
        })
        .collect()
}

pub fn write_verdicts_csv<W: Write>(verdicts: &[BotVerdict], groups: &AnomalyGroups, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["account_id", "group", "digits", "is_bot", "reasons"])?;
    for v in verdicts {
        w.write_record([
            v.account_id.to_string(),
            groups.get(v.account_id).map_or(String::new(), |g| g.to_string()),
            v.digits.to_string(),
            (v.is_bot as u8).to_string(),
            v.reasons().join(";"),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Reads `account_id` and `is_bot` back from a verdict CSV.
pub fn read_bot_flags<R: std::io::Read>(input: R) -> Result<BTreeMap<AccountId, bool>> {
    let mut rd = csv::Reader::from_reader(input);
    let mut out = BTreeMap::new();
    for row in rd.records() {
        let row = row?;
        let bad = || Error::Format {
            what: "bot verdict csv",
            detail: format!("bad row {:?}", row.iter().collect::<Vec<_>>()),
        };
        let id = row.get(0).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let flag = match row.get(3) {
            Some("1") => true,
            Some("0") => false,
            _ => return Err(bad()),
        };
        out.insert(AccountId(id), flag);
    }
    Ok(out)
}

fn label_map(predictions: &[StancePrediction]) -> BTreeMap<AccountId, PredictedLabel> {
    predictions.iter().map(|p| (p.account_id, p.effective())).collect()
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct RegistrationTables {
    /// Registrations per ISO week start, per anomaly group.
    pub by_group: BTreeMap<NaiveDate, [usize; N_GROUPS]>,
    /// Registrations per ISO week start, per effective stance
    /// (apruebo, rechazo, undisclosed).
    pub by_stance: BTreeMap<NaiveDate, [usize; 3]>,
}

impl RegistrationTables {
    /// Per-stance rows scaled to sum to 1.
    pub fn by_stance_normalized(&self) -> BTreeMap<NaiveDate, [f64; 3]> {
        self.by_stance
            .iter()
            .map(|(w, c)| {
                let t = c.iter().sum::<usize>() as f64;
                (*w, c.map(|x| x as f64 / t))
            })
            .collect()
    }

    pub fn write_group_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["week_start", "group0", "group1", "group2", "group3", "group4"])?;
        for (week, c) in &self.by_group {
            let mut row = vec![week.to_string()];
            row.extend(c.iter().map(|x| x.to_string()));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn write_stance_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["week_start", "accounts", "apruebo", "rechazo", "undisclosed"])?;
        let norm = self.by_stance_normalized();
        for (week, c) in &self.by_stance {
            let mut row = vec![week.to_string(), c.iter().sum::<usize>().to_string()];
            row.extend(norm[week].iter().map(|x| x.to_string()));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Weekly registration counts of the grouped accounts. Accounts without a
/// prediction count as undisclosed.
pub fn registrations_by_week(
    accounts: &BTreeMap<AccountId, AccountRecord>,
    groups: &AnomalyGroups,
    predictions: &[StancePrediction],
) -> Result<RegistrationTables> {
    let labels = label_map(predictions);
    let mut t = RegistrationTables::default();
    for (id, &g) in &groups.group {
        let acc = accounts
            .get(id)
            .ok_or_else(|| Error::invalid(format!("grouped account {id} missing from the corpus")))?;
        let week = iso_week_start(acc.created_at.date_naive());
        t.by_group.entry(week).or_default()[g as usize] += 1;
        let l = labels.get(id).copied().unwrap_or(PredictedLabel::Undisclosed);
        t.by_stance.entry(week).or_default()[l as usize] += 1;
    }
    Ok(t)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct Cell {
    pub accounts: usize,
    pub tweets: usize,
}

/// Accounts and tweets per (effective stance, bot status). Every corpus
/// account lands in exactly one cell; missing predictions count as
/// undisclosed and missing verdicts as not bot.
#[derive(Clone, Debug, PartialEq)]
pub struct ContentDistribution {
    pub cells: BTreeMap<(PredictedLabel, bool), Cell>,
}

impl ContentDistribution {
    pub fn get(&self, label: PredictedLabel, bot: bool) -> Cell {
        self.cells.get(&(label, bot)).copied().unwrap_or_default()
    }

    pub fn totals(&self) -> Cell {
        self.cells.values().fold(Cell::default(), |a, c| Cell {
            accounts: a.accounts + c.accounts,
            tweets: a.tweets + c.tweets,
        })
    }

    pub fn bot_share(&self) -> f64 {
        let total = self.totals().accounts;
        let bots: usize = PredictedLabel::ALL.iter().map(|&l| self.get(l, true).accounts).sum();
        if total == 0 {
            0.0
        } else {
            bots as f64 / total as f64
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let tot = self.totals();
        let share = |x: usize, t: usize| if t == 0 { 0.0 } else { x as f64 / t as f64 };
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["stance", "bot", "accounts", "tweets", "account_share", "tweet_share"])?;
        for l in PredictedLabel::ALL {
            for bot in [false, true] {
                let c = self.get(l, bot);
                w.write_record([
                    l.as_str().to_string(),
                    (bot as u8).to_string(),
                    c.accounts.to_string(),
                    c.tweets.to_string(),
                    share(c.accounts, tot.accounts).to_string(),
                    share(c.tweets, tot.tweets).to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

pub fn content_distribution(predictions: &[StancePrediction], verdicts: &[BotVerdict], corpus: &Corpus) -> ContentDistribution {
    let labels = label_map(predictions);
    let bots: BTreeMap<AccountId, bool> = verdicts.iter().map(|v| (v.account_id, v.is_bot)).collect();
    let tweets = corpus.tweets_per_account();
    let mut cells: BTreeMap<(PredictedLabel, bool), Cell> = BTreeMap::new();
    for id in corpus.accounts.keys() {
        let l = labels.get(id).copied().unwrap_or(PredictedLabel::Undisclosed);
        let b = bots.get(id).copied().unwrap_or(false);
        let c = cells.entry((l, b)).or_default();
        c.accounts += 1;
        c.tweets += tweets.get(id).copied().unwrap_or(0);
    }
    ContentDistribution { cells }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DigitQuantiles {
    pub digits: usize,
    pub n: usize,
    /// min, 25th, 50th, 75th percentile, max.
    pub quantiles: [f64; 5],
}

/// Anomaly score quantiles per username digit count (linear interpolation).
pub fn digit_score_quantiles(records: &[AnomalyRecord]) -> Vec<DigitQuantiles> {
    let mut by: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in records {
        by.entry(r.features.username_digits as usize).or_default().push(r.score);
    }
    by.into_iter()
        .map(|(digits, mut s)| {
            s.sort_by(f64::total_cmp);
            let q = |p: f64| {
                let pos = p * (s.len() - 1) as f64;
                let i = pos.floor() as usize;
                let j = (i + 1).min(s.len() - 1);
                s[i] + (pos - i as f64) * (s[j] - s[i])
            };
            DigitQuantiles {
                digits,
                n: s.len(),
                quantiles: [s[0], q(0.25), q(0.5), q(0.75), s[s.len() - 1]],
            }
        })
        .collect()
}

pub fn write_digit_quantiles_csv<W: Write>(rows: &[DigitQuantiles], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["digits", "accounts", "min", "q25", "median", "q75", "max"])?;
    for r in rows {
        let mut row = vec![r.digits.to_string(), r.n.to_string()];
        row.extend(r.quantiles.iter().map(|x| x.to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
