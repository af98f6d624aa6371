//! Seed-lexicon stance labeling with manual overrides.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::corpus::{AccountId, Corpus};
use crate::error::{Error, Result};
use crate::features::{tokenize, tweet_tokens};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stance {
    Apruebo,
    Rechazo,
}

impl Stance {
    pub fn as_str(self) -> &'static str {
        match self {
            Stance::Apruebo => "apruebo",
            Stance::Rechazo => "rechazo",
        }
    }

    pub fn other(self) -> Stance {
        match self {
            Stance::Apruebo => Stance::Rechazo,
            Stance::Rechazo => Stance::Apruebo,
        }
    }
}

impl fmt::Display for Stance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stance {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_lowercase().as_str() {
            "apruebo" => Ok(Stance::Apruebo),
            "rechazo" => Ok(Stance::Rechazo),
            other => Err(Error::invalid(format!("unknown stance `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedScope {
    Content,
    ProfileName,
    Bio,
}

/// A seed term, either a bare string (matched everywhere) or a table with
/// explicit scopes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeedTerm {
    Bare(String),
    Scoped { term: String, scopes: Vec<SeedScope> },
}

impl SeedTerm {
    pub fn term(&self) -> String {
        match self {
            SeedTerm::Bare(t) | SeedTerm::Scoped { term: t, .. } => t.trim().to_lowercase(),
        }
    }

    pub fn applies_to(&self, scope: SeedScope) -> bool {
        match self {
            SeedTerm::Bare(_) => true,
            SeedTerm::Scoped { scopes, .. } => scopes.contains(&scope),
        }
    }
}

impl From<&str> for SeedTerm {
    fn from(s: &str) -> Self {
        SeedTerm::Bare(s.to_string())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedLexicon {
    pub apruebo: Vec<SeedTerm>,
    pub rechazo: Vec<SeedTerm>,
}

impl Default for SeedLexicon {
    fn default() -> Self {
        let terms = |v: &[&str]| v.iter().map(|&t| SeedTerm::from(t)).collect();
        SeedLexicon {
            apruebo: terms(&["#apruebo", "#yoapruebo", "#votoapruebo"]),
            rechazo: terms(&["#rechazo", "#yorechazo", "#votorechazo"]),
        }
    }
}

impl SeedLexicon {
    pub fn terms(&self, stance: Stance) -> &[SeedTerm] {
        match stance {
            Stance::Apruebo => &self.apruebo,
            Stance::Rechazo => &self.rechazo,
        }
    }

    /// Case-folded set of every seed term, for removal from the feature space.
    pub fn all_terms(&self) -> BTreeSet<String> {
        self.apruebo.iter().chain(&self.rechazo).map(SeedTerm::term).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let a: HashSet<String> = self.apruebo.iter().map(SeedTerm::term).collect();
        if let Some(t) = self.rechazo.iter().map(SeedTerm::term).find(|t| a.contains(t)) {
            return Err(Error::Config(format!("seed term `{t}` is listed for both stances")));
        }
        if a.contains("") || self.rechazo.iter().any(|t| t.term().is_empty()) {
            return Err(Error::Config("empty seed term".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    Seed,
    Manual,
}

impl LabelSource {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelSource::Seed => "seed",
            LabelSource::Manual => "manual",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StanceLabel {
    pub stance: Stance,
    pub source: LabelSource,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManualLabel {
    pub account_id: AccountId,
    pub stance: Stance,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LabelSet {
    labels: BTreeMap<AccountId, StanceLabel>,
}

impl LabelSet {
    pub fn get(&self, id: AccountId) -> Option<StanceLabel> {
        self.labels.get(&id).copied()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (AccountId, StanceLabel)> + '_ {
        self.labels.iter().map(|(&a, &l)| (a, l))
    }

    pub fn insert(&mut self, id: AccountId, label: StanceLabel) {
        self.labels.insert(id, label);
    }

    pub fn count(&self, stance: Stance) -> usize {
        self.labels.values().filter(|l| l.stance == stance).count()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["account_id", "stance", "source"])?;
        for (a, l) in &self.labels {
            w.write_record([a.to_string().as_str(), l.stance.as_str(), l.source.as_str()])?;
        }
        w.flush().map_err(|e| Error::io("labels", e))?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Self> {
        let mut set = LabelSet::default();
        for rec in csv::Reader::from_reader(input).records() {
            let rec = rec?;
            let bad = |what: &str| Error::Format {
                what: "labels csv",
                detail: format!("bad {what} in {rec:?}"),
            };
            let id = rec.get(0).and_then(|s| s.parse().ok()).ok_or_else(|| bad("account_id"))?;
            let stance = rec.get(1).and_then(|s| s.parse().ok()).ok_or_else(|| bad("stance"))?;
            let source = match rec.get(2) {
                Some("seed") => LabelSource::Seed,
                Some("manual") => LabelSource::Manual,
                _ => return Err(bad("source")),
            };
            set.insert(id, StanceLabel { stance, source });
        }
        Ok(set)
    }
}

/// Hashtags appearing in profile full names, ranked by the number of
/// distinct accounts using them (descending, then lexicographic).
pub fn extract_profile_hashtags(corpus: &Corpus) -> Vec<(String, usize)> {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for a in corpus.accounts.values() {
        let tags: BTreeSet<String> = tokenize(&a.full_name).into_iter().filter(|t| t.starts_with('#')).collect();
        for t in tags {
            *counts.entry(t).or_default() += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked
}

/// Seed-labels accounts that match terms of exactly one stance, then applies
/// manual overrides. Overrides naming unknown accounts are skipped.
pub fn apply_seeds(corpus: &Corpus, lexicon: &SeedLexicon, overrides: &[ManualLabel]) -> Result<LabelSet> {
    lexicon.validate()?;
    let mut by_scope: HashMap<(SeedScope, String), Stance> = HashMap::new();
    for stance in [Stance::Apruebo, Stance::Rechazo] {
        for term in lexicon.terms(stance) {
            for scope in [SeedScope::Content, SeedScope::ProfileName, SeedScope::Bio] {
                if term.applies_to(scope) {
                    by_scope.insert((scope, term.term()), stance);
                }
            }
        }
    }
    let mut matched: BTreeMap<AccountId, [bool; 2]> = BTreeMap::new();
    let mut mark = |id: AccountId, scope: SeedScope, toks: Vec<String>| {
        for t in toks {
            if let Some(&s) = by_scope.get(&(scope, t)) {
                matched.entry(id).or_default()[s as usize] = true;
            }
        }
    };
    for t in &corpus.tweets {
        mark(t.author_id, SeedScope::Content, tweet_tokens(&t.text, &t.hashtags));
    }
    for a in corpus.accounts.values() {
        mark(a.account_id, SeedScope::ProfileName, tokenize(&a.full_name));
        mark(a.account_id, SeedScope::Bio, tokenize(&a.bio));
    }

    let mut set = LabelSet::default();
    for (id, hits) in matched {
        let stance = match hits {
            [true, false] => Stance::Apruebo,
            [false, true] => Stance::Rechazo,
            _ => continue,
        };
        set.insert(
            id,
            StanceLabel {
                stance,
                source: LabelSource::Seed,
            },
        );
    }
    for o in overrides {
        if !corpus.accounts.contains_key(&o.account_id) {
            warn!("manual label for unknown account {} skipped", o.account_id);
            continue;
        }
        set.insert(
            o.account_id,
            StanceLabel {
                stance: o.stance,
                source: LabelSource::Manual,
            },
        );
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{AccountRecord, TweetId, TweetKind, TweetRecord};
    use chrono::{TimeZone, Utc};

    fn account(id: u64, name: &str) -> AccountRecord {
        AccountRecord {
            account_id: AccountId(id),
            username: format!("user{id}"),
            full_name: name.into(),
            bio: String::new(),
            home_url: None,
            created_at: Utc.with_ymd_and_hms(2015, 1, 1, 0, 0, 0).unwrap(),
            followers: 1,
            friends: 1,
            statuses: 1,
            default_profile_image: false,
        }
    }

    fn tweet(id: u64, author: u64, text: &str) -> TweetRecord {
        TweetRecord {
            tweet_id: TweetId(id),
            author_id: AccountId(author),
            created_at: Utc.with_ymd_and_hms(2020, 9, 1, 0, 0, id as u32 % 60).unwrap(),
            kind: TweetKind::Original,
            target_account_id: None,
            text: text.into(),
            hashtags: vec![],
        }
    }

    #[test]
    fn profile_hashtags_are_case_folded() {
        let c = Corpus::new([account(1, "ana #apruebo"), account(2, "luis #Apruebo")], vec![], None).unwrap();
        assert_eq!(extract_profile_hashtags(&c), vec![("#apruebo".to_string(), 2)]);
        let c = Corpus::new([account(1, "ana"), account(2, "luis")], vec![], None).unwrap();
        assert!(extract_profile_hashtags(&c).is_empty());
    }

    #[test]
    fn seeds_conflicts_and_overrides() {
        let c = Corpus::new(
            [account(1, "a"), account(2, "b"), account(3, "c")],
            vec![
                tweet(1, 1, "hoy #YoApruebo"),
                tweet(2, 2, "#apruebo"),
                tweet(3, 2, "o #rechazo"),
                tweet(4, 3, "nada"),
            ],
            None,
        )
        .unwrap();
        let overrides = [
            ManualLabel { account_id: AccountId(3), stance: Stance::Rechazo },
            ManualLabel { account_id: AccountId(77), stance: Stance::Apruebo },
        ];
        let set = apply_seeds(&c, &SeedLexicon::default(), &overrides).unwrap();
        assert_eq!(set.get(AccountId(1)).map(|l| l.stance), Some(Stance::Apruebo));
        assert_eq!(set.get(AccountId(1)).map(|l| l.source), Some(LabelSource::Seed));
        assert_eq!(set.get(AccountId(2)), None);
        assert_eq!(
            set.get(AccountId(3)),
            Some(StanceLabel { stance: Stance::Rechazo, source: LabelSource::Manual })
        );
        assert_eq!(set.get(AccountId(77)), None);
        assert_eq!(set.len(), 2);
    }

    #[test]
    fn substring_is_not_a_match() {
        let c = Corpus::new([account(1, "a")], vec![tweet(1, 1, "#apruebooo apruebo")], None).unwrap();
        assert!(apply_seeds(&c, &SeedLexicon::default(), &[]).unwrap().is_empty());
    }

    #[test]
    fn scoped_terms_only_match_their_scope() {
        let lex = SeedLexicon {
            apruebo: vec![SeedTerm::Scoped { term: "dignidad".into(), scopes: vec![SeedScope::ProfileName] }],
            rechazo: vec![],
        };
        let c = Corpus::new([account(1, "x"), account(2, "Dignidad ya")], vec![tweet(1, 1, "dignidad")], None).unwrap();
        let set = apply_seeds(&c, &lex, &[]).unwrap();
        assert!(set.get(AccountId(1)).is_none());
        assert_eq!(set.get(AccountId(2)).unwrap().stance, Stance::Apruebo);
    }

    #[test]
    fn overlapping_lexicon_rejected() {
        let lex = SeedLexicon {
            apruebo: vec!["#x".into()],
            rechazo: vec!["#X".into()],
        };
        assert!(lex.validate().is_err());
    }

    #[test]
    fn label_csv_roundtrip() {
        let mut s = LabelSet::default();
        s.insert(AccountId(5), StanceLabel { stance: Stance::Rechazo, source: LabelSource::Manual });
        s.insert(AccountId(2), StanceLabel { stance: Stance::Apruebo, source: LabelSource::Seed });
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert_eq!(LabelSet::read_csv(buf.as_slice()).unwrap(), s);
    }
}
