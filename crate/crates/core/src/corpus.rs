//! Tweet corpus data model, JSONL ingestion, window filtering and
//! descriptive statistics.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, Datelike, Days, NaiveDate, Utc};
use log::warn;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

macro_rules! string_id {
    ($name:ident, $what:literal) => {
        #[doc = concat!("Numeric ", $what, " identifier, serialized as a decimal string.")]
        #[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(pub u64);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }

        impl FromStr for $name {
            type Err = std::num::ParseIntError;
            fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
                s.trim().parse().map($name)
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                s.collect_str(&self.0)
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
                #[derive(Deserialize)]
                #[serde(untagged)]
                enum Raw {
                    Str(String),
                    Num(u64),
                }
                match Raw::deserialize(d)? {
                    Raw::Num(n) => Ok($name(n)),
                    Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
                }
            }
        }
    };
}

string_id!(AccountId, "account");
string_id!(TweetId, "tweet");

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TweetKind {
    Original,
    Retweet,
    Quote,
    Reply,
}

impl TweetKind {
    pub const ALL: [TweetKind; 4] = [
        TweetKind::Original,
        TweetKind::Retweet,
        TweetKind::Quote,
        TweetKind::Reply,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TweetKind::Original => "original",
            TweetKind::Retweet => "retweet",
            TweetKind::Quote => "quote",
            TweetKind::Reply => "reply",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_interaction(self) -> bool {
        self != TweetKind::Original
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TweetRecord {
    pub tweet_id: TweetId,
    pub author_id: AccountId,
    pub created_at: DateTime<Utc>,
    pub kind: TweetKind,
    /// Retweeted, quoted or replied-to author. Present for every non-original.
    pub target_account_id: Option<AccountId>,
    pub text: String,
    pub hashtags: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AccountRecord {
    pub account_id: AccountId,
    pub username: String,
    pub full_name: String,
    pub bio: String,
    pub home_url: Option<String>,
    pub created_at: DateTime<Utc>,
    pub followers: u64,
    pub friends: u64,
    pub statuses: u64,
    pub default_profile_image: bool,
}

/// Inclusive range of UTC calendar days.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateWindow {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateWindow {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Result<Self> {
        if start > end {
            return Err(Error::InvertedWindow { start, end });
        }
        Ok(DateWindow { start, end })
    }

    pub fn contains(&self, t: &DateTime<Utc>) -> bool {
        let d = t.date_naive();
        self.start <= d && d <= self.end
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Corpus {
    pub accounts: BTreeMap<AccountId, AccountRecord>,
    /// Sorted by `(created_at, tweet_id)`.
    pub tweets: Vec<TweetRecord>,
    pub window: Option<DateWindow>,
}

impl Corpus {
    /// Builds a corpus, sorting tweets and deriving the window from the data
    /// when none is given.
    pub fn new(
        accounts: impl IntoIterator<Item = AccountRecord>,
        mut tweets: Vec<TweetRecord>,
        window: Option<DateWindow>,
    ) -> Result<Self> {
        let accounts: BTreeMap<_, _> = accounts.into_iter().map(|a| (a.account_id, a)).collect();
        tweets.sort_by_key(|t| (t.created_at, t.tweet_id));
        let mut seen = HashSet::with_capacity(tweets.len());
        for t in &tweets {
            if !seen.insert(t.tweet_id) {
                return Err(Error::invalid(format!("duplicate tweet_id {}", t.tweet_id)));
            }
            if !accounts.contains_key(&t.author_id) {
                return Err(Error::invalid(format!(
                    "tweet {} references unknown author {}",
                    t.tweet_id, t.author_id
                )));
            }
            if t.kind.is_interaction() && t.target_account_id.is_none() {
                return Err(Error::invalid(format!("tweet {} is a {} without target", t.tweet_id, t.kind.as_str())));
            }
        }
        let window = window.or_else(|| data_window(&tweets));
        Ok(Corpus {
            accounts,
            tweets,
            window,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.tweets.is_empty()
    }

    /// Last day of the study window, or of the data when no window is set.
    pub fn end_date(&self) -> Option<NaiveDate> {
        self.window.map(|w| w.end)
    }

    /// Account ids in canonical (ascending) order.
    pub fn account_ids(&self) -> Vec<AccountId> {
        self.accounts.keys().copied().collect()
    }

    pub fn tweets_per_account(&self) -> BTreeMap<AccountId, usize> {
        let mut out: BTreeMap<AccountId, usize> = self.accounts.keys().map(|&a| (a, 0)).collect();
        for t in &self.tweets {
            *out.entry(t.author_id).or_default() += 1;
        }
        out
    }
}

fn data_window(tweets: &[TweetRecord]) -> Option<DateWindow> {
    let first = tweets.first()?.created_at.date_naive();
    let last = tweets.last()?.created_at.date_naive();
    Some(DateWindow {
        start: first,
        end: last,
    })
}

// ---- JSONL schema ----

#[derive(Serialize, Deserialize)]
struct RawAuthor {
    id: AccountId,
    username: String,
    #[serde(default)]
    name: String,
    #[serde(default)]
    bio: String,
    #[serde(default)]
    url: Option<String>,
    created_at: DateTime<Utc>,
    #[serde(default)]
    followers: u64,
    #[serde(default)]
    friends: u64,
    #[serde(default)]
    statuses: u64,
    #[serde(default)]
    default_profile_image: bool,
}

#[derive(Serialize, Deserialize)]
struct RawTweet {
    tweet_id: TweetId,
    author: RawAuthor,
    created_at: DateTime<Utc>,
    kind: TweetKind,
    #[serde(default)]
    target_account_id: Option<AccountId>,
    #[serde(default)]
    text: String,
    #[serde(default)]
    hashtags: Vec<String>,
}

/// Options for [`ingest_jsonl`].
#[derive(Clone, Debug, Default)]
pub struct IngestConfig {
    /// Study window attached to the corpus. Derived from the data when unset.
    pub window: Option<DateWindow>,
    /// Fraction of malformed lines above which ingestion fails.
    pub max_malformed_fraction: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IngestReport {
    pub lines: usize,
    pub malformed: usize,
    pub duplicates: usize,
}

pub fn ingest_jsonl(path: &Path, config: &IngestConfig) -> Result<Corpus> {
    ingest_jsonl_with_report(path, config).map(|(c, _)| c)
}

pub fn ingest_jsonl_with_report(path: &Path, config: &IngestConfig) -> Result<(Corpus, IngestReport)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_jsonl(BufReader::new(file), path, config)
}

pub fn read_jsonl<R: BufRead>(reader: R, path: &Path, config: &IngestConfig) -> Result<(Corpus, IngestReport)> {
    let max_bad = config.max_malformed_fraction.unwrap_or(0.5);
    let mut report = IngestReport::default();
    let mut first_error: Option<(usize, String)> = None;

    let mut tweets = Vec::new();
    let mut seen_ids = HashSet::new();
    // account -> (observation time, line number, snapshot)
    let mut latest: HashMap<AccountId, (DateTime<Utc>, AccountRecord)> = HashMap::new();

    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        report.lines += 1;
        let raw: RawTweet = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                report.malformed += 1;
                first_error.get_or_insert((lineno + 1, e.to_string()));
                continue;
            }
        };
        if raw.kind.is_interaction() && raw.target_account_id.is_none() {
            report.malformed += 1;
            first_error.get_or_insert((lineno + 1, format!("{} without target_account_id", raw.kind.as_str())));
            continue;
        }
        if !seen_ids.insert(raw.tweet_id) {
            report.duplicates += 1;
            continue;
        }
        let author = AccountRecord {
            account_id: raw.author.id,
            username: raw.author.username,
            full_name: raw.author.name,
            bio: raw.author.bio,
            home_url: raw.author.url.filter(|u| !u.is_empty()),
            created_at: raw.author.created_at,
            followers: raw.author.followers,
            friends: raw.author.friends,
            statuses: raw.author.statuses,
            default_profile_image: raw.author.default_profile_image,
        };
        match latest.get(&author.account_id) {
            Some((seen_at, _)) if *seen_at > raw.created_at => {}
            _ => {
                latest.insert(author.account_id, (raw.created_at, author));
            }
        }
        tweets.push(TweetRecord {
            tweet_id: raw.tweet_id,
            author_id: raw.author.id,
            created_at: raw.created_at,
            kind: raw.kind,
            target_account_id: if raw.kind.is_interaction() {
                raw.target_account_id
            } else {
                None
            },
            text: raw.text,
            hashtags: raw.hashtags,
        });
    }

    if report.malformed > 0 {
        let (line, err) = first_error.clone().unwrap_or_default();
        warn!(
            "{}: skipped {} malformed line(s) of {} (first at line {}: {})",
            path.display(),
            report.malformed,
            report.lines,
            line,
            err
        );
    }
    if report.lines > 0 && report.malformed as f64 > max_bad * report.lines as f64 {
        let (first_line, first_error) = first_error.unwrap_or_default();
        return Err(Error::TooManyMalformed {
            path: path.to_path_buf(),
            malformed: report.malformed,
            total: report.lines,
            first_line,
            first_error,
        });
    }
    if report.duplicates > 0 {
        warn!("{}: dropped {} duplicate tweet id(s)", path.display(), report.duplicates);
    }

    let corpus = Corpus::new(latest.into_values().map(|(_, a)| a), tweets, config.window)?;
    Ok((corpus, report))
}

/// Writes the corpus in the ingestion schema, one tweet per line, each
/// carrying its author's profile snapshot.
pub fn write_jsonl<W: Write>(corpus: &Corpus, mut out: W) -> std::io::Result<()> {
    for t in &corpus.tweets {
        let a = &corpus.accounts[&t.author_id];
        let raw = RawTweet {
            tweet_id: t.tweet_id,
            author: RawAuthor {
                id: a.account_id,
                username: a.username.clone(),
                name: a.full_name.clone(),
                bio: a.bio.clone(),
                url: a.home_url.clone(),
                created_at: a.created_at,
                followers: a.followers,
                friends: a.friends,
                statuses: a.statuses,
                default_profile_image: a.default_profile_image,
            },
            created_at: t.created_at,
            kind: t.kind,
            target_account_id: t.target_account_id,
            text: t.text.clone(),
            hashtags: t.hashtags.clone(),
        };
        serde_json::to_writer(&mut out, &raw)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn save_jsonl(corpus: &Corpus, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_jsonl(corpus, std::io::BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

/// Keeps tweets whose UTC day lies in `window` and drops accounts left
/// without tweets.
pub fn filter_corpus(corpus: &Corpus, window: DateWindow) -> Result<Corpus> {
    let window = DateWindow::new(window.start, window.end)?;
    let tweets: Vec<TweetRecord> = corpus
        .tweets
        .iter()
        .filter(|t| window.contains(&t.created_at))
        .cloned()
        .collect();
    let authors: HashSet<AccountId> = tweets.iter().map(|t| t.author_id).collect();
    let accounts = corpus
        .accounts
        .iter()
        .filter(|(id, _)| authors.contains(id))
        .map(|(id, a)| (*id, a.clone()))
        .collect();
    Ok(Corpus {
        accounts,
        tweets,
        window: Some(window),
    })
}

/// Monday of the ISO week containing `d`.
pub fn iso_week_start(d: NaiveDate) -> NaiveDate {
    d - Days::new(d.weekday().num_days_from_monday() as u64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusStats {
    pub n_tweets: usize,
    pub n_accounts: usize,
    /// Per-kind counts, indexed by [`TweetKind::index`].
    pub kind_counts: [usize; 4],
    /// Per-kind fractions; all zero for an empty corpus.
    pub kind_fractions: [f64; 4],
    /// Tweet counts keyed by ISO week start (Monday).
    pub weekly_volume: BTreeMap<NaiveDate, usize>,
}

impl CorpusStats {
    pub fn fraction(&self, kind: TweetKind) -> f64 {
        self.kind_fractions[kind.index()]
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["metric", "value"])?;
        w.write_record(["n_tweets", &self.n_tweets.to_string()])?;
        w.write_record(["n_accounts", &self.n_accounts.to_string()])?;
        for k in TweetKind::ALL {
            w.write_record([format!("count_{}", k.as_str()), self.kind_counts[k.index()].to_string()])?;
        }
        for k in TweetKind::ALL {
            w.write_record([format!("fraction_{}", k.as_str()), self.fraction(k).to_string()])?;
        }
        w.flush().map_err(|e| Error::io("corpus stats", e))?;
        Ok(())
    }

    pub fn write_weekly_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["week_start", "tweets"])?;
        for (week, n) in &self.weekly_volume {
            w.write_record([week.to_string(), n.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("weekly volume", e))?;
        Ok(())
    }
}

pub fn corpus_stats(corpus: &Corpus) -> CorpusStats {
    let mut kind_counts = [0usize; 4];
    let mut weekly_volume = BTreeMap::new();
    for t in &corpus.tweets {
        kind_counts[t.kind.index()] += 1;
        *weekly_volume.entry(iso_week_start(t.created_at.date_naive())).or_insert(0) += 1;
    }
    let n = corpus.tweets.len();
    let mut kind_fractions = [0.0; 4];
    if n > 0 {
        for (f, c) in kind_fractions.iter_mut().zip(kind_counts) {
            *f = c as f64 / n as f64;
        }
    }
    CorpusStats {
        n_tweets: n,
        n_accounts: corpus.accounts.len(),
        kind_counts,
        kind_fractions,
        weekly_volume,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use std::io::Cursor;

    fn ts(y: i32, m: u32, d: u32) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(y, m, d, 12, 0, 0).unwrap()
    }

    fn line(id: u64, author: u64, kind: &str, target: Option<u64>, day: u32, followers: u64) -> String {
        let target = target.map_or("null".to_string(), |t| format!("\"{t}\""));
        format!(
            r#"{{"tweet_id":"{id}","author":{{"id":"{author}","username":"u{author}","name":"U","bio":"","url":null,"created_at":"2019-01-01T00:00:00Z","followers":{followers},"friends":1,"statuses":10,"default_profile_image":false}},"created_at":"2020-08-{day:02}T10:00:00Z","kind":"{kind}","target_account_id":{target},"text":"hola","hashtags":[]}}"#
        )
    }

    fn read(s: &str) -> Result<(Corpus, IngestReport)> {
        read_jsonl(Cursor::new(s.as_bytes()), Path::new("mem"), &IngestConfig::default())
    }

    #[test]
    fn empty_input_gives_empty_corpus() {
        let (c, r) = read("").unwrap();
        assert!(c.tweets.is_empty() && c.accounts.is_empty());
        assert_eq!(r.lines, 0);
    }

    #[test]
    fn duplicate_tweet_ids_keep_first() {
        let input = [
            line(1, 10, "original", None, 2, 5),
            line(2, 11, "retweet", Some(10), 3, 5),
            line(1, 12, "original", None, 4, 5),
        ]
        .join("\n");
        let (c, r) = read(&input).unwrap();
        assert_eq!(c.tweets.len(), 2);
        assert_eq!(r.duplicates, 1);
        assert_eq!(c.tweets[0].author_id, AccountId(10));
        assert!(!c.accounts.contains_key(&AccountId(12)));
    }

    #[test]
    fn latest_profile_snapshot_wins() {
        let input = [line(2, 10, "original", None, 9, 99), line(1, 10, "original", None, 2, 5)].join("\n");
        let (c, _) = read(&input).unwrap();
        assert_eq!(c.accounts[&AccountId(10)].followers, 99);
    }

    #[test]
    fn malformed_lines_counted_then_fatal_over_half() {
        let ok = [line(1, 10, "original", None, 2, 5), "{not json".into(), line(2, 10, "reply", None, 2, 5)].join("\n");
        // reply without target is malformed too: 2 of 3 bad
        assert!(matches!(read(&ok), Err(Error::TooManyMalformed { malformed: 2, .. })));

        let ok = [
            line(1, 10, "original", None, 2, 5),
            "garbage".into(),
            line(2, 10, "quote", Some(3), 2, 5),
        ]
        .join("\n");
        let (c, r) = read(&ok).unwrap();
        assert_eq!((c.tweets.len(), r.malformed), (2, 1));
    }

    #[test]
    fn missing_file_is_fatal() {
        let err = ingest_jsonl(Path::new("/nonexistent/x.jsonl"), &IngestConfig::default());
        assert!(matches!(err, Err(Error::Io { .. })));
    }

    fn small_corpus() -> Corpus {
        let acc = |id: u64| AccountRecord {
            account_id: AccountId(id),
            username: format!("u{id}"),
            full_name: String::new(),
            bio: String::new(),
            home_url: None,
            created_at: ts(2019, 1, 1),
            followers: 0,
            friends: 0,
            statuses: 0,
            default_profile_image: false,
        };
        let tw = |id: u64, a: u64, kind: TweetKind, day: u32| TweetRecord {
            tweet_id: TweetId(id),
            author_id: AccountId(a),
            created_at: ts(2020, 8, day),
            kind,
            target_account_id: kind.is_interaction().then_some(AccountId(99)),
            text: String::new(),
            hashtags: vec![],
        };
        Corpus::new(
            [acc(1), acc(2)],
            vec![
                tw(1, 1, TweetKind::Original, 3),
                tw(2, 1, TweetKind::Retweet, 4),
                tw(3, 2, TweetKind::Quote, 20),
                tw(4, 2, TweetKind::Reply, 21),
            ],
            None,
        )
        .unwrap()
    }

    #[test]
    fn one_of_each_kind_gives_quarter_fractions() {
        let s = corpus_stats(&small_corpus());
        assert_eq!(s.kind_fractions, [0.25; 4]);
        assert_eq!(s.weekly_volume.values().sum::<usize>(), 4);
    }

    #[test]
    fn empty_corpus_stats_are_zero() {
        let s = corpus_stats(&Corpus::default());
        assert_eq!(s.n_tweets, 0);
        assert_eq!(s.kind_fractions, [0.0; 4]);
    }

    #[test]
    fn filter_window_cases() {
        let c = small_corpus();
        let d = |day| NaiveDate::from_ymd_opt(2020, 8, day).unwrap();
        let all = filter_corpus(&c, DateWindow { start: d(1), end: d(31) }).unwrap();
        assert_eq!(all.tweets, c.tweets);
        assert_eq!(all.accounts, c.accounts);

        let none = filter_corpus(&c, DateWindow { start: d(25), end: d(26) }).unwrap();
        assert!(none.tweets.is_empty() && none.accounts.is_empty());

        let first = filter_corpus(&c, DateWindow { start: d(1), end: d(4) }).unwrap();
        assert_eq!(first.tweets.len(), 2);
        assert_eq!(first.account_ids(), vec![AccountId(1)]);
        assert_eq!(filter_corpus(&first, first.window.unwrap()).unwrap(), first);

        assert!(matches!(
            filter_corpus(&c, DateWindow { start: d(5), end: d(4) }),
            Err(Error::InvertedWindow { .. })
        ));
    }

    #[test]
    fn iso_week_start_is_monday() {
        let d = NaiveDate::from_ymd_opt(2020, 8, 8).unwrap(); // Saturday
        assert_eq!(iso_week_start(d), NaiveDate::from_ymd_opt(2020, 8, 3).unwrap());
    }
}
