//! Synthetic corpora with planted stances, bots and bot squads, and scoring
//! of pipeline outputs against the planted truth.
//!
//! Regular accounts are old, post at heavy-tailed rates, write from their
//! stance vocabulary mixed with a shared pool, and interact with
//! popularity-weighted targets of their own stance with probability
//! `homophily`. Bots are young, digit-heavy, mostly retweet, and belong to
//! squads that retweet a squad amplifier (its first member) in synchronized
//! bursts.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use chrono::{DateTime, Duration, NaiveDate, TimeZone, Utc};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{LogNormal, Pareto};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anomaly::derive_seed;
use crate::classifier::{PredictedLabel, StancePrediction};
use crate::corpus::{AccountId, AccountRecord, Corpus, DateWindow, TweetId, TweetKind, TweetRecord};
use crate::error::{Error, Result};
use crate::netcomm::nmi;
use crate::seeding::{SeedLexicon, Stance};

fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).unwrap()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassCounts {
    pub regular_apruebo: usize,
    pub regular_rechazo: usize,
    pub bot_apruebo: usize,
    pub bot_rechazo: usize,
}

impl Default for ClassCounts {
    fn default() -> Self {
        ClassCounts {
            regular_apruebo: 3980,
            regular_rechazo: 970,
            bot_apruebo: 20,
            bot_rechazo: 30,
        }
    }
}

impl ClassCounts {
    pub fn total(&self) -> usize {
        self.regular_apruebo + self.regular_rechazo + self.bot_apruebo + self.bot_rechazo
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassParams {
    pub registration_start: NaiveDate,
    pub registration_end: NaiveDate,
    /// Probability of registering inside the study window instead.
    pub late_registration_prob: f64,
    /// Relative weight of each username digit count (index = count).
    pub digit_weights: Vec<f64>,
    pub default_image_prob: f64,
    /// Median number of tweets over the study window.
    pub tweets_median: f64,
    /// Log-scale spread of the per-account tweet count.
    pub tweets_log_sd: f64,
    /// Weights of original, retweet, quote and reply tweets.
    pub kind_mix: [f64; 4],
    pub seed_usage_prob: f64,
    pub homophily: f64,
    /// Probability that a content word comes from the stance vocabulary.
    pub stance_word_prob: f64,
    /// Median follower count; friends scale with `ff_ratio`.
    pub followers_median: f64,
    pub ff_ratio: f64,
}

impl ClassParams {
    pub fn regular() -> Self {
        ClassParams {
            registration_start: date(2008, 1, 1),
            registration_end: date(2020, 6, 30),
            late_registration_prob: 0.02,
            digit_weights: vec![0.40, 0.08, 0.22, 0.05, 0.20, 0.015, 0.015, 0.01, 0.01],
            default_image_prob: 0.05,
            tweets_median: 8.0,
            tweets_log_sd: 1.0,
            kind_mix: [0.35, 0.45, 0.08, 0.12],
            seed_usage_prob: 0.1,
            homophily: 0.85,
            stance_word_prob: 0.45,
            followers_median: 150.0,
            ff_ratio: 1.2,
        }
    }

    pub fn bot() -> Self {
        let mut digit_weights = vec![0.0; 5];
        digit_weights.extend([1.0; 10]);
        ClassParams {
            registration_start: date(2020, 8, 8),
            registration_end: date(2020, 10, 15),
            late_registration_prob: 0.0,
            digit_weights,
            default_image_prob: 0.9,
            tweets_median: 120.0,
            tweets_log_sd: 0.3,
            kind_mix: [0.08, 0.88, 0.04, 0.0],
            seed_usage_prob: 0.1,
            homophily: 1.0,
            stance_word_prob: 0.4,
            followers_median: 5.0,
            ff_ratio: 40.0,
        }
    }

    fn validate(&self, what: &str, window: &DateWindow) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("synth {what}: {m}")));
        for (name, p) in [
            ("late_registration_prob", self.late_registration_prob),
            ("default_image_prob", self.default_image_prob),
            ("seed_usage_prob", self.seed_usage_prob),
            ("homophily", self.homophily),
            ("stance_word_prob", self.stance_word_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must be in [0, 1], got {p}"));
            }
        }
        if self.registration_start > self.registration_end {
            return bad("registration_start is after registration_end".into());
        }
        if self.registration_end > window.end {
            return bad("registration_end is after the study window".into());
        }
        if self.digit_weights.iter().any(|&w| !(w >= 0.0 && w.is_finite())) || self.digit_weights.iter().sum::<f64>() <= 0.0 {
            return bad("digit_weights must be non-negative with a positive sum".into());
        }
        if self.kind_mix.iter().any(|&w| !(w >= 0.0 && w.is_finite())) || self.kind_mix.iter().sum::<f64>() <= 0.0 {
            return bad("kind_mix must be non-negative with a positive sum".into());
        }
        if !(self.tweets_median >= 1.0 && self.tweets_log_sd >= 0.0 && self.followers_median >= 0.0 && self.ff_ratio >= 0.0) {
            return bad("tweet and follower parameters must be non-negative (tweets_median >= 1)".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SquadParams {
    /// Bots per squad; each stance's bots are chunked in id order.
    pub size: usize,
    pub bursts: usize,
    /// Probability a member joins a given burst.
    pub participation: f64,
    pub burst_minutes: i64,
    /// Probability that a bot's own retweet targets a squad mate.
    pub intra_squad_rate: f64,
}

impl Default for SquadParams {
    fn default() -> Self {
        SquadParams {
            size: 10,
            bursts: 15,
            participation: 0.8,
            burst_minutes: 30,
            intra_squad_rate: 0.3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocabParams {
    pub stance_size: usize,
    pub common_size: usize,
    pub words_min: usize,
    pub words_max: usize,
    /// Chance that a stance word is drawn from the opposite stance instead.
    pub crossover: f64,
}

impl Default for VocabParams {
    fn default() -> Self {
        VocabParams {
            stance_size: 80,
            common_size: 300,
            words_min: 5,
            words_max: 12,
            crossover: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub counts: ClassCounts,
    pub window: DateWindow,
    pub regular: ClassParams,
    pub bot: ClassParams,
    pub squads: SquadParams,
    pub vocab: VocabParams,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            counts: ClassCounts::default(),
            window: DateWindow {
                start: date(2020, 8, 1),
                end: date(2020, 10, 25),
            },
            regular: ClassParams::regular(),
            bot: ClassParams::bot(),
            squads: SquadParams::default(),
            vocab: VocabParams::default(),
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.window.start > self.window.end {
            return Err(Error::InvertedWindow {
                start: self.window.start,
                end: self.window.end,
            });
        }
        self.regular.validate("regular", &self.window)?;
        self.bot.validate("bot", &self.window)?;
        let s = &self.squads;
        if s.size == 0 || !(0.0..=1.0).contains(&s.participation) || !(0.0..=1.0).contains(&s.intra_squad_rate) || s.burst_minutes < 0 {
            return Err(Error::Config("synth squads: size >= 1, probabilities in [0, 1], burst_minutes >= 0".into()));
        }
        let v = &self.vocab;
        if v.stance_size == 0 || v.common_size == 0 || v.words_min == 0 || v.words_min > v.words_max || !(0.0..=1.0).contains(&v.crossover) {
            return Err(Error::Config("synth vocab: sizes >= 1, 1 <= words_min <= words_max, crossover in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TruthEntry {
    pub stance: Stance,
    pub is_bot: bool,
    pub squad: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct GroundTruth {
    pub accounts: BTreeMap<AccountId, TruthEntry>,
}

impl GroundTruth {
    pub fn bots(&self) -> BTreeSet<AccountId> {
        self.accounts.iter().filter(|(_, t)| t.is_bot).map(|(a, _)| *a).collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["account_id", "stance", "is_bot", "squad"])?;
        for (id, t) in &self.accounts {
            w.write_record([
                id.to_string(),
                t.stance.as_str().to_string(),
                (t.is_bot as u8).to_string(),
                t.squad.map_or(String::new(), |s| s.to_string()),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(input);
        let mut accounts = BTreeMap::new();
        for row in rd.records() {
            let row = row?;
            let bad = || Error::Format {
                what: "truth csv",
                detail: format!("bad row {:?}", row.iter().collect::<Vec<_>>()),
            };
            if row.len() != 4 {
                return Err(bad());
            }
            let id = AccountId(row[0].parse().map_err(|_| bad())?);
            let stance: Stance = row[1].parse().map_err(|_| bad())?;
            let is_bot = match &row[2] {
                "1" => true,
                "0" => false,
                _ => return Err(bad()),
            };
            let squad = if row[3].is_empty() {
                None
            } else {
                Some(row[3].parse().map_err(|_| bad())?)
            };
            accounts.insert(id, TruthEntry { stance, is_bot, squad });
        }
        Ok(GroundTruth { accounts })
    }
}

const SYLLABLES: [&str; 24] = [
    "ka", "lo", "mi", "ne", "ru", "sa", "ti", "vo", "pe", "da", "gu", "ri", "zo", "la", "me", "no", "bu", "che", "fa",
    "jo", "qui", "te", "xa", "yu",
];

/// Disjoint pseudo-word pools: apruebo, rechazo, common, names.
fn vocabularies(v: &VocabParams, seed: u64) -> [Vec<String>; 4] {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x0076_6f63_6162));
    let mut used = BTreeSet::new();
    let mut draw = |n: usize, rng: &mut ChaCha8Rng| {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let len = rng.random_range(2..=4);
            let w: String = (0..len).map(|_| SYLLABLES[rng.random_range(0..SYLLABLES.len())]).collect();
            if used.insert(w.clone()) {
                out.push(w);
            }
        }
        out
    };
    [
        draw(v.stance_size, &mut rng),
        draw(v.stance_size, &mut rng),
        draw(v.common_size, &mut rng),
        draw(200, &mut rng),
    ]
}

fn stance_idx(s: Stance) -> usize {
    match s {
        Stance::Apruebo => 0,
        Stance::Rechazo => 1,
    }
}

struct Plan {
    id: AccountId,
    stance: Stance,
    is_bot: bool,
    squad: Option<usize>,
    created_at: DateTime<Utc>,
    n_tweets: usize,
    seed_user: bool,
    username: String,
}

fn time_between(rng: &mut ChaCha8Rng, lo: DateTime<Utc>, hi: DateTime<Utc>) -> DateTime<Utc> {
    let span = (hi - lo).num_seconds().max(0);
    lo + Duration::seconds(rng.random_range(0..=span))
}

fn day_start(d: NaiveDate) -> DateTime<Utc> {
    Utc.from_utc_datetime(&d.and_hms_opt(0, 0, 0).unwrap())
}

fn day_end(d: NaiveDate) -> DateTime<Utc> {
    Utc.from_utc_datetime(&d.and_hms_opt(23, 59, 59).unwrap())
}

struct Text<'a> {
    vocab: &'a [Vec<String>; 4],
    params: &'a VocabParams,
    seed_tags: [Vec<String>; 2],
}

impl Text<'_> {
    fn words(&self, rng: &mut ChaCha8Rng, stance: Stance, stance_prob: f64) -> (String, Vec<String>) {
        let n = rng.random_range(self.params.words_min..=self.params.words_max);
        let mut words = Vec::with_capacity(n + 1);
        let mut tags = Vec::new();
        for _ in 0..n {
            if rng.random::<f64>() < stance_prob {
                let mut s = stance_idx(stance);
                if rng.random::<f64>() < self.params.crossover {
                    s = 1 - s;
                }
                let pool = &self.vocab[s];
                let w = &pool[rng.random_range(0..pool.len())];
                if rng.random::<f64>() < 0.15 {
                    words.push(format!("#{w}"));
                    tags.push(w.clone());
                } else {
                    words.push(w.clone());
                }
            } else {
                let pool = &self.vocab[2];
                words.push(pool[rng.random_range(0..pool.len())].clone());
            }
        }
        (words.join(" "), tags)
    }
}

/// Generates a corpus with the given planted structure. Identical spec and
/// seed give an identical corpus.
pub fn generate_corpus(spec: &SynthSpec, seed: u64) -> Result<(Corpus, GroundTruth)> {
    spec.validate()?;
    let c = &spec.counts;
    let n = c.total();
    if n == 0 {
        return Ok((Corpus::new(Vec::new(), Vec::new(), Some(spec.window))?, GroundTruth::default()));
    }
    let vocab = vocabularies(&spec.vocab, seed);
    let lex = SeedLexicon::default();
    let text = Text {
        vocab: &vocab,
        params: &spec.vocab,
        seed_tags: [Stance::Apruebo, Stance::Rechazo].map(|s| lex.terms(s).iter().map(|t| t.term()).collect()),
    };

    // shuffled ids so that class does not follow id order
    let mut id_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x0069_6473));
    let mut ids: Vec<u64> = (0..n as u64).map(|i| 1_000_000 + 37 * i).collect();
    ids.shuffle(&mut id_rng);

    let classes: Vec<(Stance, bool)> = std::iter::repeat_n((Stance::Apruebo, false), c.regular_apruebo)
        .chain(std::iter::repeat_n((Stance::Rechazo, false), c.regular_rechazo))
        .chain(std::iter::repeat_n((Stance::Apruebo, true), c.bot_apruebo))
        .chain(std::iter::repeat_n((Stance::Rechazo, true), c.bot_rechazo))
        .collect();

    let w_start = day_start(spec.window.start);
    let w_end = day_end(spec.window.end);
    let mut squad_counter = [0usize; 2];
    let mut squad_next = 0usize;
    let mut squad_of_stance: [Option<usize>; 2] = [None, None];
    let mut plans = Vec::with_capacity(n);
    let mut accounts = Vec::with_capacity(n);
    let mut popularity = Vec::with_capacity(n);
    for (i, &(stance, is_bot)) in classes.iter().enumerate() {
        let p = if is_bot { &spec.bot } else { &spec.regular };
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
        let created_at = if rng.random::<f64>() < p.late_registration_prob {
            let last = (spec.window.end - Duration::days(7)).max(spec.window.start);
            time_between(&mut rng, w_start, day_end(last))
        } else {
            time_between(&mut rng, day_start(p.registration_start), day_end(p.registration_end))
        };
        let digits = WeightedIndex::new(&p.digit_weights).expect("validated weights").sample(&mut rng);
        let name_words = &vocab[3];
        let mut username: String = (0..2).map(|_| name_words[rng.random_range(0..name_words.len())].as_str()).collect();
        for _ in 0..digits {
            username.push(char::from(b'0' + rng.random_range(0..10u8)));
        }
        let full_name = format!(
            "{} {}",
            name_words[rng.random_range(0..name_words.len())],
            name_words[rng.random_range(0..name_words.len())]
        );
        let seed_user = rng.random::<f64>() < p.seed_usage_prob;
        let (mut bio, _) = text.words(&mut rng, stance, p.stance_word_prob);
        let tags = &text.seed_tags[stance_idx(stance)];
        if seed_user && rng.random::<f64>() < 0.3 {
            bio.push(' ');
            bio.push_str(&tags[rng.random_range(0..tags.len())]);
        }
        let home_url = (rng.random::<f64>() < 0.3).then(|| {
            let pool = &vocab[stance_idx(stance)];
            let tld = ["cl", "com", "org"][rng.random_range(0..3)];
            format!("https://www.{}.{tld}/", pool[rng.random_range(0..pool.len().min(10))])
        });
        let pop: f64 = Pareto::new(1.0, 1.5).expect("valid pareto").sample(&mut rng);
        let followers = (p.followers_median * pop * LogNormal::new(0.0, 0.5).expect("valid").sample(&mut rng)).round();
        let friends = (followers.max(1.0) * p.ff_ratio * LogNormal::new(0.0, 0.5).expect("valid").sample(&mut rng)).round();
        let age_years = ((w_end - created_at).num_days() as f64 / 365.0).max(0.02);
        let statuses = (age_years * 400.0 * LogNormal::new(0.0, 1.0).expect("valid").sample(&mut rng)).round();
        let n_tweets = (p.tweets_median * LogNormal::new(0.0, p.tweets_log_sd).expect("valid").sample(&mut rng)).round().max(1.0) as usize;

        let squad = is_bot.then(|| {
            let s = stance_idx(stance);
            if squad_counter[s] % spec.squads.size == 0 {
                squad_of_stance[s] = Some(squad_next);
                squad_next += 1;
            }
            squad_counter[s] += 1;
            squad_of_stance[s].expect("squad opened")
        });
        let id = AccountId(ids[i]);
        popularity.push(if is_bot { 0.2 } else { pop });
        accounts.push(AccountRecord {
            account_id: id,
            username: username.clone(),
            full_name,
            bio,
            home_url,
            created_at,
            followers: followers as u64,
            friends: friends as u64,
            statuses: statuses as u64 + n_tweets as u64,
            default_profile_image: rng.random::<f64>() < p.default_image_prob,
        });
        plans.push(Plan {
            id,
            stance,
            is_bot,
            squad,
            created_at,
            n_tweets,
            seed_user,
            username,
        });
    }

    // popularity-weighted target pools per stance
    let pools: [Vec<usize>; 2] = [0, 1].map(|s| (0..n).filter(|&i| stance_idx(plans[i].stance) == s).collect());
    let samplers: [Option<WeightedIndex<f64>>; 2] = [0, 1].map(|s| WeightedIndex::new(pools[s].iter().map(|&i| popularity[i])).ok());
    let squads: Vec<Vec<usize>> = {
        let mut m: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, p) in plans.iter().enumerate() {
            if let Some(s) = p.squad {
                m.entry(s).or_default().push(i);
            }
        }
        m.into_values().collect()
    };

    let pick_target = |rng: &mut ChaCha8Rng, me: usize, homophily: f64| -> Option<usize> {
        let own = stance_idx(plans[me].stance);
        let s = if rng.random::<f64>() < homophily { own } else { 1 - own };
        let sampler = samplers[s].as_ref()?;
        for _ in 0..8 {
            let t = pools[s][sampler.sample(rng)];
            if t != me {
                return Some(t);
            }
        }
        None
    };

    let per_account: Vec<Vec<TweetRecord>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let plan = &plans[i];
            let p = if plan.is_bot { &spec.bot } else { &spec.regular };
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed ^ 0x0074_7765_6574, i as u64));
            let kinds = WeightedIndex::new(p.kind_mix).expect("validated mix");
            let lo = plan.created_at.max(w_start);
            let tags = &text.seed_tags[stance_idx(plan.stance)];
            let mut out = Vec::with_capacity(plan.n_tweets);
            for k in 0..plan.n_tweets {
                let mut kind = TweetKind::ALL[kinds.sample(&mut rng)];
                let mut target = None;
                if kind.is_interaction() {
                    let squad_mate = plan
                        .squad
                        .filter(|_| rng.random::<f64>() < spec.squads.intra_squad_rate)
                        .and_then(|s| {
                            let mates = &squads[s];
                            let t = mates[rng.random_range(0..mates.len())];
                            (t != i).then_some(t)
                        });
                    target = squad_mate.or_else(|| pick_target(&mut rng, i, p.homophily));
                    if target.is_none() {
                        kind = TweetKind::Original;
                    }
                }
                let (mut body, mut hashtags) = text.words(&mut rng, plan.stance, p.stance_word_prob);
                if plan.seed_user && (k == 0 || rng.random::<f64>() < 0.3) {
                    let tag = &tags[rng.random_range(0..tags.len())];
                    body.push(' ');
                    body.push_str(tag);
                    hashtags.push(tag.trim_start_matches('#').to_string());
                }
                let body = match (kind, target) {
                    (TweetKind::Retweet, Some(t)) => format!("RT @{}: {body}", plans[t].username),
                    (TweetKind::Reply, Some(t)) => format!("@{} {body}", plans[t].username),
                    _ => body,
                };
                out.push(TweetRecord {
                    tweet_id: TweetId(0),
                    author_id: plan.id,
                    created_at: time_between(&mut rng, lo, w_end),
                    kind,
                    target_account_id: target.map(|t| plans[t].id),
                    text: body,
                    hashtags,
                });
            }
            out
        })
        .collect();

    // coordinated bursts: squad members retweet the amplifier within minutes
    let mut bursts = Vec::new();
    for (s, members) in squads.iter().enumerate() {
        let amp = members[0];
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed ^ 0x0062_7572_7374, s as u64));
        let lo = members.iter().map(|&m| plans[m].created_at).max().expect("non-empty squad").max(w_start);
        for _ in 0..spec.squads.bursts {
            let t0 = time_between(&mut rng, lo, w_end);
            for &m in &members[1..] {
                if rng.random::<f64>() >= spec.squads.participation {
                    continue;
                }
                let at = (t0 + Duration::seconds(rng.random_range(0..=spec.squads.burst_minutes * 60))).min(w_end);
                let (body, hashtags) = text.words(&mut rng, plans[m].stance, spec.bot.stance_word_prob);
                bursts.push(TweetRecord {
                    tweet_id: TweetId(0),
                    author_id: plans[m].id,
                    created_at: at,
                    kind: TweetKind::Retweet,
                    target_account_id: Some(plans[amp].id),
                    text: format!("RT @{}: {body}", plans[amp].username),
                    hashtags,
                });
            }
        }
    }

    let mut tweets: Vec<TweetRecord> = per_account.into_iter().flatten().chain(bursts).collect();
    for (k, t) in tweets.iter_mut().enumerate() {
        t.tweet_id = TweetId(5_000_000_000 + k as u64);
    }
    let truth = GroundTruth {
        accounts: plans
            .iter()
            .map(|p| {
                (
                    p.id,
                    TruthEntry {
                        stance: p.stance,
                        is_bot: p.is_bot,
                        squad: p.squad,
                    },
                )
            })
            .collect(),
    };
    let corpus = Corpus::new(accounts, tweets, Some(spec.window))?;
    Ok((corpus, truth))
}

/// Fraction of retweet edges (by tweet) whose endpoints share a planted
/// stance.
pub fn intra_stance_retweet_fraction(corpus: &Corpus, truth: &GroundTruth) -> Option<f64> {
    let mut same = 0usize;
    let mut total = 0usize;
    for t in corpus.tweets.iter().filter(|t| t.kind == TweetKind::Retweet) {
        let (Some(a), Some(b)) = (truth.accounts.get(&t.author_id), t.target_account_id.and_then(|x| truth.accounts.get(&x))) else {
            continue;
        };
        total += 1;
        same += (a.stance == b.stance) as usize;
    }
    (total > 0).then(|| same as f64 / total as f64)
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Evaluation {
    pub accounts: usize,
    pub stance_correct: usize,
    pub stance_wrong: usize,
    pub abstentions: usize,
    /// Correct over disclosed predictions; `None` when all abstained.
    pub stance_accuracy: Option<f64>,
    pub abstention_rate: f64,
    pub bot_tp: usize,
    pub bot_fp: usize,
    pub bot_fn: usize,
    pub bot_precision: Option<f64>,
    pub bot_recall: Option<f64>,
    /// NMI between the blocks of squad members and their squad ids.
    pub squad_nmi: Option<f64>,
}

impl Evaluation {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| x.to_string());
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["metric", "value"])?;
        for (k, v) in [
            ("accounts", self.accounts.to_string()),
            ("stance_correct", self.stance_correct.to_string()),
            ("stance_wrong", self.stance_wrong.to_string()),
            ("abstentions", self.abstentions.to_string()),
            ("stance_accuracy", opt(self.stance_accuracy)),
            ("abstention_rate", self.abstention_rate.to_string()),
            ("bot_tp", self.bot_tp.to_string()),
            ("bot_fp", self.bot_fp.to_string()),
            ("bot_fn", self.bot_fn.to_string()),
            ("bot_precision", opt(self.bot_precision)),
            ("bot_recall", opt(self.bot_recall)),
            ("squad_nmi", opt(self.squad_nmi)),
        ] {
            w.write_record([k, v.as_str()])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Scores predictions (effective labels), bot flags and an optional block
/// assignment against the planted truth. Predictions and bot flags must
/// cover exactly the truth's accounts; blocks may cover a subset.
pub fn evaluate_against_truth(
    predictions: &[StancePrediction],
    bot_flags: &BTreeMap<AccountId, bool>,
    blocks: Option<&BTreeMap<AccountId, usize>>,
    truth: &GroundTruth,
) -> Result<Evaluation> {
    let pred: BTreeMap<AccountId, PredictedLabel> = predictions.iter().map(|p| (p.account_id, p.effective())).collect();
    let same = |keys: &mut dyn Iterator<Item = &AccountId>| keys.eq(truth.accounts.keys());
    if pred.len() != predictions.len() || !same(&mut pred.keys()) {
        return Err(Error::invalid("predictions and truth cover different accounts"));
    }
    if !same(&mut bot_flags.keys()) {
        return Err(Error::invalid("bot verdicts and truth cover different accounts"));
    }
    let mut e = Evaluation {
        accounts: truth.accounts.len(),
        ..Default::default()
    };
    for (id, t) in &truth.accounts {
        match pred[id].stance() {
            None => e.abstentions += 1,
            Some(s) if s == t.stance => e.stance_correct += 1,
            Some(_) => e.stance_wrong += 1,
        }
        match (bot_flags[id], t.is_bot) {
            (true, true) => e.bot_tp += 1,
            (true, false) => e.bot_fp += 1,
            (false, true) => e.bot_fn += 1,
            (false, false) => {}
        }
    }
    let disclosed = e.stance_correct + e.stance_wrong;
    e.stance_accuracy = (disclosed > 0).then(|| e.stance_correct as f64 / disclosed as f64);
    e.abstention_rate = if e.accounts == 0 { 0.0 } else { e.abstentions as f64 / e.accounts as f64 };
    let flagged = e.bot_tp + e.bot_fp;
    e.bot_precision = (flagged > 0).then(|| e.bot_tp as f64 / flagged as f64);
    let planted = e.bot_tp + e.bot_fn;
    e.bot_recall = (planted > 0).then(|| e.bot_tp as f64 / planted as f64);
    if let Some(blocks) = blocks {
        let (b, s): (Vec<usize>, Vec<usize>) = truth
            .accounts
            .iter()
            .filter_map(|(id, t)| Some((*blocks.get(id)?, t.squad?)))
            .unzip();
        e.squad_nmi = (b.len() >= 2).then(|| nmi(&b, &s));
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthSpec {
        SynthSpec {
            counts: ClassCounts {
                regular_apruebo: 80,
                regular_rechazo: 40,
                bot_apruebo: 5,
                bot_rechazo: 5,
            },
            ..Default::default()
        }
    }

    #[test]
    fn empty_spec_gives_empty_corpus() {
        let spec = SynthSpec {
            counts: ClassCounts {
                regular_apruebo: 0,
                regular_rechazo: 0,
                bot_apruebo: 0,
                bot_rechazo: 0,
            },
            ..Default::default()
        };
        let (c, t) = generate_corpus(&spec, 1).unwrap();
        assert!(c.is_empty() && c.accounts.is_empty() && t.accounts.is_empty());
    }

    #[test]
    fn counts_and_determinism() {
        let (c, t) = generate_corpus(&small(), 3).unwrap();
        assert_eq!(c.accounts.len(), 130);
        assert_eq!(t.bots().len(), 10);
        assert_eq!(c.tweets_per_account().values().filter(|&&n| n == 0).count(), 0);
        let (c2, _) = generate_corpus(&small(), 3).unwrap();
        assert_eq!(c, c2);
    }

    #[test]
    fn bots_follow_their_class() {
        let spec = small();
        let (c, t) = generate_corpus(&spec, 5).unwrap();
        for id in t.bots() {
            let a = &c.accounts[&id];
            let d = a.created_at.date_naive();
            assert!(d >= spec.bot.registration_start && d <= spec.bot.registration_end);
            assert!(crate::botcrit::digit_count(&a.username) >= 5);
        }
    }

    #[test]
    fn invalid_spec_rejected() {
        let mut spec = small();
        spec.regular.homophily = 1.5;
        assert!(generate_corpus(&spec, 0).is_err());
    }

    #[test]
    fn evaluation_hand_counts() {
        let mut truth = GroundTruth::default();
        let mut preds = Vec::new();
        let mut flags = BTreeMap::new();
        // (truth stance, is_bot, predicted label, flagged)
        let rows = [
            (Stance::Apruebo, false, PredictedLabel::Apruebo, false),
            (Stance::Apruebo, false, PredictedLabel::Apruebo, false),
            (Stance::Apruebo, false, PredictedLabel::Rechazo, false),
            (Stance::Apruebo, true, PredictedLabel::Apruebo, true),
            (Stance::Rechazo, true, PredictedLabel::Rechazo, false),
            (Stance::Rechazo, false, PredictedLabel::Undisclosed, true),
            (Stance::Rechazo, false, PredictedLabel::Rechazo, false),
            (Stance::Rechazo, true, PredictedLabel::Undisclosed, true),
            (Stance::Apruebo, false, PredictedLabel::Apruebo, false),
            (Stance::Rechazo, false, PredictedLabel::Apruebo, false),
        ];
        for (i, &(s, b, l, f)) in rows.iter().enumerate() {
            let id = AccountId(i as u64);
            truth.accounts.insert(id, TruthEntry { stance: s, is_bot: b, squad: None });
            preds.push(StancePrediction {
                account_id: id,
                p_apruebo: 0.5,
                label: l,
                seed_label: None,
            });
            flags.insert(id, f);
        }
        let e = evaluate_against_truth(&preds, &flags, None, &truth).unwrap();
        assert_eq!((e.stance_correct, e.stance_wrong, e.abstentions), (6, 2, 2));
        assert_eq!(e.stance_accuracy, Some(0.75));
        assert_eq!((e.bot_tp, e.bot_fp, e.bot_fn), (2, 1, 1));
        assert_eq!(e.bot_precision, Some(2.0 / 3.0));
        assert_eq!(e.bot_recall, Some(2.0 / 3.0));
        flags.remove(&AccountId(0));
        assert!(evaluate_against_truth(&preds, &flags, None, &truth).is_err());
    }
}
