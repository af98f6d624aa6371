//! Invariants checked over generated inputs.

mod common;

use std::collections::BTreeMap;
use std::io::Cursor;
use std::path::Path;

use botstance::anomaly::{average_path_length, BehaviorFeatures, ForestParams};
use botstance::botcrit::{self, BotParams};
use botstance::classifier::gbt::{train_gbt, FeatureColumns, GbtParams};
use botstance::classifier::{log_odds_terms, PredictedLabel, StancePrediction};
use botstance::corpus::{self, AccountId, AccountRecord, Corpus, DateWindow, IngestConfig};
use botstance::features::{self, FeatureParams};
use botstance::netcomm::{self, RetweetGraph, SbmParams};
use botstance::nullmodel;
use botstance::seeding::{self, SeedLexicon};
use botstance::synth;
use botstance::{IsolationForest, IsolationForest32};
use chrono::{Duration, TimeZone, Utc};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{small_corpus, small_spec};

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig { cases, ..ProptestConfig::default() }
}

fn reingest(c: &Corpus) -> Corpus {
    let mut buf = Vec::new();
    corpus::write_jsonl(c, &mut buf).unwrap();
    let cfg = IngestConfig { window: c.window, max_malformed_fraction: Some(0.0) };
    corpus::read_jsonl(Cursor::new(buf), Path::new("mem"), &cfg).unwrap().0
}

proptest! {
    #![proptest_config(config(24))]

    #[test]
    fn serialize_then_ingest_is_identity(regular in 0usize..120, bots in 0usize..6, seed in any::<u64>()) {
        let (c, _) = small_corpus(regular, bots, seed);
        prop_assert_eq!(reingest(&c), c);
    }

    #[test]
    fn kind_fractions_sum_to_one(regular in 1usize..120, bots in 0usize..6, seed in any::<u64>()) {
        let (c, _) = small_corpus(regular, bots, seed);
        let s = corpus::corpus_stats(&c);
        prop_assume!(s.n_tweets > 0);
        prop_assert!((s.kind_fractions.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn filter_is_idempotent(seed in any::<u64>(), a in 0i64..90, len in 0i64..90) {
        let (c, _) = small_corpus(80, 2, seed);
        let start = chrono::NaiveDate::from_ymd_opt(2020, 7, 20).unwrap() + Duration::days(a);
        let w = DateWindow::new(start, start + Duration::days(len)).unwrap();
        let once = corpus::filter_corpus(&c, w).unwrap();
        prop_assert_eq!(corpus::filter_corpus(&once, w).unwrap(), once);
    }

    #[test]
    fn seeding_ignores_tweet_order(seed in any::<u64>(), shuffle in any::<u64>()) {
        let (c, _) = small_corpus(150, 4, seed);
        let lex = SeedLexicon::default();
        let labels = seeding::apply_seeds(&c, &lex, &[]).unwrap();
        let mut tweets = c.tweets.clone();
        tweets.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle));
        let shuffled = Corpus::new(c.accounts.values().cloned(), tweets, c.window).unwrap();
        prop_assert_eq!(&seeding::apply_seeds(&shuffled, &lex, &[]).unwrap(), &labels);
        prop_assert!(labels.len() <= c.accounts.len());
        prop_assert_eq!(
            labels.count(seeding::Stance::Apruebo) + labels.count(seeding::Stance::Rechazo),
            labels.len()
        );
    }

    #[test]
    fn features_drop_seed_terms_and_rebuild_identically(seed in any::<u64>()) {
        let (c, _) = small_corpus(200, 4, seed);
        let lex = SeedLexicon::default();
        let labels = seeding::apply_seeds(&c, &lex, &[]).unwrap();
        let build = || {
            let blocks = features::build_all_blocks(&c, &labels, &FeatureParams { min_df: 2, min_target_count: 1 });
            features::assemble_features(&blocks, &lex.all_terms()).unwrap()
        };
        let fm = build();
        let seeds = lex.all_terms();
        for col in 0..fm.n_cols() {
            if fm.block_of(col).is_some_and(|b| b.is_term_block()) {
                prop_assert!(!seeds.contains(&fm.columns[col]), "seed term {} kept", fm.columns[col]);
            }
        }
        let (mut a, mut b) = (Vec::new(), Vec::new());
        features::write_triplets(&fm, &mut a).unwrap();
        features::write_triplets(&build(), &mut b).unwrap();
        prop_assert_eq!(a, b);
    }
}

fn dense_data(seed: u64, n: usize, dims: usize) -> (Vec<Vec<f64>>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let pos = !i.is_multiple_of(3);
        let row: Vec<f64> = (0..dims)
            .map(|j| {
                // sparse-ish columns with a class signal in the first two
                if rng.random_bool(0.3) {
                    0.0
                } else {
                    rng.random::<f64>() + if j < 2 && pos { 0.4 } else { 0.0 }
                }
            })
            .collect();
        x.push(row);
        y.push(pos ^ rng.random_bool(0.1));
    }
    (x, y)
}

proptest! {
    #![proptest_config(config(12))]

    #[test]
    fn boosting_is_monotone_deterministic_and_row_order_free(seed in any::<u64>(), perm in any::<u64>()) {
        let (x, y) = dense_data(seed, 120, 6);
        prop_assume!(y.iter().filter(|&&b| b).count() >= 2 && y.iter().filter(|&&b| !b).count() >= 2);
        let cols = FeatureColumns::from_dense(&x).unwrap();
        let params = GbtParams { rounds: 30, max_depth: 3, subsample: 0.8, ..GbtParams::default() };
        let (model, log) = train_gbt(&cols, &y, &params, seed).unwrap();
        for w in log.loss.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9, "loss rose {} -> {}", w[0], w[1]);
        }
        let (again, _) = train_gbt(&cols, &y, &params, seed).unwrap();
        let (mut t1, mut t2) = (Vec::new(), Vec::new());
        model.write_text(&mut t1).unwrap();
        again.write_text(&mut t2).unwrap();
        prop_assert_eq!(t1, t2);

        let p: Vec<f64> = x.iter().map(|r| model.predict_proba_dense(r).unwrap()).collect();
        let mut order: Vec<usize> = (0..x.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(perm));
        for &i in &order {
            prop_assert_eq!(model.predict_proba_dense(&x[i]).unwrap(), p[i]);
        }
    }

    #[test]
    fn boosting_in_f32_is_monotone(seed in any::<u64>()) {
        let (x, y) = dense_data(seed, 100, 4);
        prop_assume!(y.iter().filter(|&&b| b).count() >= 2 && y.iter().filter(|&&b| !b).count() >= 2);
        let x32: Vec<Vec<f32>> = x.iter().map(|r| r.iter().map(|&v| v as f32).collect()).collect();
        let cols = FeatureColumns::from_dense(&x32).unwrap();
        let (_, log) = train_gbt(&cols, &y, &GbtParams { rounds: 20, ..GbtParams::default() }, seed).unwrap();
        for w in log.loss.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-6);
        }
    }

    #[test]
    fn log_odds_is_antisymmetric(
        counts in prop::collection::vec((0u32..50, 0u32..50), 1..30),
        alpha in 0.01f64..5.0,
    ) {
        let a: Vec<f64> = counts.iter().map(|c| c.0 as f64 + 1.0).collect();
        let r: Vec<f64> = counts.iter().map(|c| c.1 as f64).collect();
        prop_assume!(r.iter().sum::<f64>() > 0.0);
        let fwd: BTreeMap<usize, f64> = log_odds_terms(&a, &r, alpha).unwrap().into_iter().collect();
        let back: BTreeMap<usize, f64> = log_odds_terms(&r, &a, alpha).unwrap().into_iter().collect();
        for (j, s) in &fwd {
            prop_assert!((s + back[j]).abs() < 1e-12);
        }
    }
}

fn gaussian_rows(seed: u64, n: usize, dims: usize) -> Vec<Vec<f64>> {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..dims).map(|_| StandardNormal.sample(&mut rng)).collect()).collect()
}

fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

proptest! {
    #![proptest_config(config(16))]

    #[test]
    fn affine_rescaling_keeps_ranking(seed in any::<u64>(), col in 0usize..3, scale in 0.1f64..50.0, shift in -100.0f64..100.0) {
        let x = gaussian_rows(seed, 300, 3);
        let params = ForestParams { trees: 50, sample_size: 64 };
        let samples = IsolationForest::subsamples(x.len(), &params, seed);
        let base = IsolationForest::fit_with_samples(&x, &samples, seed).unwrap().score_all(&x).unwrap();
        let mut y = x.clone();
        for r in &mut y {
            r[col] = r[col] * scale + shift;
        }
        let moved = IsolationForest::fit_with_samples(&y, &samples, seed).unwrap().score_all(&y).unwrap();
        prop_assert_eq!(ranking(&base), ranking(&moved));
    }

    #[test]
    fn expected_path_length_is_bounded(seed in any::<u64>(), psi in 2usize..300) {
        let x = gaussian_rows(seed, 400, 2);
        let params = ForestParams { trees: 20, sample_size: psi };
        let f = IsolationForest::fit(&x, &params, seed).unwrap();
        let bound = f.height_limit() as f64 + average_path_length::<f64>(psi.min(x.len()));
        for r in x.iter().take(100) {
            prop_assert!(f.mean_path_length(r).unwrap() <= bound + 1e-9);
        }
        let x32: Vec<Vec<f32>> = x.iter().map(|r| r.iter().map(|&v| v as f32).collect()).collect();
        let f32_forest = IsolationForest32::fit(&x32, &params, seed).unwrap();
        for r in x32.iter().take(20) {
            let s = f32_forest.score(r).unwrap();
            prop_assert!(s > 0.0 && s <= 1.0);
        }
    }
}

#[test]
fn more_trees_barely_move_scores() {
    let mut x = gaussian_rows(1, 1000, 2);
    for i in 0..10 {
        let a = i as f64 * std::f64::consts::TAU / 10.0;
        x.push(vec![10.0 * a.cos(), 10.0 * a.sin()]);
    }
    let s100 = IsolationForest::fit(&x, &ForestParams { trees: 100, sample_size: 256 }, 3).unwrap().score_all(&x).unwrap();
    let s200 = IsolationForest::fit(&x, &ForestParams { trees: 200, sample_size: 256 }, 3).unwrap().score_all(&x).unwrap();
    let mad = s100.iter().zip(&s200).map(|(a, b)| (a - b).abs()).sum::<f64>() / x.len() as f64;
    assert!(mad < 0.02, "mean absolute difference {mad}");
}

fn stance_preds(bits: &[bool]) -> (Vec<AccountId>, Vec<StancePrediction>) {
    let ids: Vec<AccountId> = (0..bits.len() as u64).map(AccountId).collect();
    let preds = ids
        .iter()
        .zip(bits)
        .map(|(&id, &a)| StancePrediction {
            account_id: id,
            p_apruebo: 0.5,
            label: if a { PredictedLabel::Apruebo } else { PredictedLabel::Rechazo },
            seed_label: None,
        })
        .collect();
    (ids, preds)
}

proptest! {
    #![proptest_config(config(32))]

    #[test]
    fn curves_meet_at_full_length(bits in prop::collection::vec(any::<bool>(), 1..300), seed in any::<u64>()) {
        let (ids, preds) = stance_preds(&bits);
        let env = nullmodel::permutation_envelope(&ids, &preds, 20, seed).unwrap();
        let last = env.len() - 1;
        let global = bits.iter().filter(|&&b| b).count() as f64 / bits.len() as f64;
        prop_assert_eq!(env.observed[last], global);
        prop_assert_eq!(env.lo[last], env.hi[last]);
        for c in nullmodel::permuted_curves(&bits, 20, seed) {
            prop_assert_eq!(c[last], global);
        }
        prop_assert_eq!(nullmodel::permutation_envelope(&ids, &preds, 20, seed).unwrap(), env);
    }
}

fn zero_features() -> BehaviorFeatures {
    BehaviorFeatures {
        active_days: 1.0,
        rate_original: 0.0,
        rate_retweet: 0.0,
        rate_quote: 0.0,
        rate_reply: 0.0,
        daily_rhythm: 0.0,
        ff_ratio: 0.0,
        username_digits: 0.0,
        default_image: 0.0,
        in_interactions: 0.0,
        component_rank: 0.0,
        account_age_days: 1.0,
        rate_statuses: 0.0,
        rate_friends: 0.0,
        rate_followers: 0.0,
    }
}

fn random_population(seed: u64, n: usize) -> (Vec<botstance::anomaly::AnomalyRecord>, BTreeMap<AccountId, AccountRecord>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    let mut accounts = BTreeMap::new();
    for i in 0..n as u64 {
        let id = AccountId(i);
        let score = if rng.random_bool(0.2) { 0.5 } else { rng.random::<f64>() };
        records.push(botstance::anomaly::AnomalyRecord { account_id: id, features: zero_features(), score, rank: 0 });
        let digits = rng.random_range(0..12);
        accounts.insert(
            id,
            AccountRecord {
                account_id: id,
                username: format!("user{}", "9".repeat(digits)),
                full_name: String::new(),
                bio: String::new(),
                home_url: None,
                created_at: Utc.with_ymd_and_hms(2020, 7, 1, 12, 0, 0).unwrap() + Duration::days(rng.random_range(0..90)),
                followers: 0,
                friends: 0,
                statuses: 0,
                default_profile_image: false,
            },
        );
    }
    (records, accounts)
}

proptest! {
    #![proptest_config(config(32))]

    #[test]
    fn bot_set_is_bounded_and_monotone(seed in any::<u64>(), n in 5usize..400, shift in 1i64..100) {
        let (records, accounts) = random_population(seed, n);
        let params = BotParams::default();
        let groups = botcrit::assign_anomaly_groups(&records, params.anomaly_fraction).unwrap();
        let verdicts = botcrit::flag_bots(&groups, &accounts, &params).unwrap();
        let bots = verdicts.iter().filter(|v| v.is_bot).count();
        let top = groups.sizes()[0];
        prop_assert!(bots <= top);
        prop_assert!(top <= (0.075 * n as f64).ceil() as usize);

        let mut last = bots;
        for t in params.digit_threshold + 1..params.digit_threshold + 6 {
            let p = BotParams { digit_threshold: t, ..params.clone() };
            let b = botcrit::flag_bots(&groups, &accounts, &p).unwrap().iter().filter(|v| v.is_bot).count();
            prop_assert!(b <= last);
            last = b;
        }

        for v in &verdicts {
            let mut earlier = accounts[&v.account_id].clone();
            earlier.created_at -= Duration::days(shift);
            let w = botcrit::bot_verdict(groups.get(v.account_id).unwrap(), &earlier, &params);
            prop_assert!(!w.is_bot || v.is_bot);
        }
    }
}

fn random_graph(seed: u64, n: usize, extra: usize) -> RetweetGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // a spanning path keeps the graph weakly connected
    let mut pairs: Vec<((AccountId, AccountId), u64)> =
        (1..n as u64).map(|i| ((AccountId(i - 1), AccountId(i)), rng.random_range(1..4))).collect();
    for _ in 0..extra {
        let (s, t) = (rng.random_range(0..n as u64), rng.random_range(0..n as u64));
        pairs.push(((AccountId(s), AccountId(t)), rng.random_range(1..4)));
    }
    RetweetGraph::from_weighted_pairs(pairs)
}

proptest! {
    #![proptest_config(config(16))]

    #[test]
    fn community_totals_and_local_optimality(seed in any::<u64>(), n in 4usize..40, extra in 0usize..120) {
        let g = random_graph(seed, n, extra);
        let (part, trace) = netcomm::fit_dcsbm_traced(&g, &SbmParams { b_min: 1, b_max: 8, max_sweeps: 200 }, seed).unwrap();
        for (_, obj) in &trace.refinements {
            for w in obj.windows(2) {
                prop_assert!(w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0));
            }
        }
        let profiles = netcomm::community_counts(&part, &|a: AccountId| a.0.is_multiple_of(3), &g).unwrap();
        prop_assert_eq!(profiles.iter().map(|p| p.size).sum::<usize>(), g.n_nodes());
        let intra: u64 = profiles.iter().map(|p| p.intra_weight).sum();
        let out: u64 = profiles.iter().map(|p| p.inter_out_weight).sum();
        let inn: u64 = profiles.iter().map(|p| p.inter_in_weight).sum();
        prop_assert_eq!(intra + out, g.total_weight());
        prop_assert_eq!(out, inn);

        // no single-node move that keeps every block occupied raises L
        let l = netcomm::log_likelihood(&g, &part.blocks);
        let mut sizes = vec![0usize; part.n_blocks];
        for &b in &part.blocks {
            sizes[b] += 1;
        }
        let mut blocks = part.blocks.clone();
        for v in 0..g.n_nodes() {
            let r = blocks[v];
            if sizes[r] <= 1 {
                continue;
            }
            for s in 0..part.n_blocks {
                if s != r {
                    blocks[v] = s;
                    let moved = netcomm::log_likelihood(&g, &blocks);
                    prop_assert!(moved <= l + 1e-7 * l.abs().max(1.0), "moving {} to {} raises L {} -> {}", v, s, l, moved);
                }
            }
            blocks[v] = r;
        }

        // relabeling blocks leaves L unchanged
        let relabeled: Vec<usize> = part.blocks.iter().map(|&b| part.n_blocks - 1 - b).collect();
        prop_assert!((netcomm::log_likelihood(&g, &relabeled) - l).abs() <= 1e-9 * l.abs().max(1.0));
    }

    #[test]
    fn synth_is_deterministic(seed in any::<u64>(), regular in 0usize..80, bots in 0usize..8) {
        let spec = small_spec(regular, bots);
        let (a, ta) = synth::generate_corpus(&spec, seed).unwrap();
        let (b, tb) = synth::generate_corpus(&spec, seed).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(ta, tb);
        let (mut ja, mut jb) = (Vec::new(), Vec::new());
        corpus::write_jsonl(&a, &mut ja).unwrap();
        corpus::write_jsonl(&b, &mut jb).unwrap();
        prop_assert_eq!(ja, jb);
    }
}

#[test]
fn homophily_raises_intra_stance_fraction() {
    let levels = [0.2, 0.5, 0.8, 1.0];
    let mut means = Vec::new();
    for &h in &levels {
        let mut total = 0.0;
        for seed in 0..10 {
            let mut spec = small_spec(300, 0);
            spec.regular.homophily = h;
            let (c, truth) = synth::generate_corpus(&spec, seed).unwrap();
            total += synth::intra_stance_retweet_fraction(&c, &truth).unwrap();
        }
        means.push(total / 10.0);
    }
    for w in means.windows(2) {
        assert!(w[1] > w[0], "intra-stance fractions {means:?}");
    }
    assert_eq!(means[3], 1.0);
}
