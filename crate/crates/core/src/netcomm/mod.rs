//! Retweet network, largest connected component, block-model communities
//! and per-community bot profiles.

pub mod dcsbm;

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::{AccountId, Corpus, TweetKind};
use crate::error::{Error, Result};

pub use dcsbm::{description_length, fit_dcsbm, fit_dcsbm_traced, log_likelihood, FitTrace, Partition, SbmParams};

/// Directed weighted retweet graph (retweeter -> retweeted).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RetweetGraph {
    /// Ascending account ids; node index = position.
    pub nodes: Vec<AccountId>,
    /// `(source, target, weight)` sorted by `(source, target)`, no self-loops.
    pub edges: Vec<(usize, usize, u64)>,
}

impl RetweetGraph {
    pub fn from_weighted_pairs(pairs: impl IntoIterator<Item = ((AccountId, AccountId), u64)>) -> Self {
        let agg: BTreeMap<(AccountId, AccountId), u64> = pairs
            .into_iter()
            .filter(|((s, t), w)| s != t && *w > 0)
            .fold(BTreeMap::new(), |mut m, (k, w)| {
                *m.entry(k).or_default() += w;
                m
            });
        let mut nodes: Vec<AccountId> = agg.keys().flat_map(|&(s, t)| [s, t]).collect();
        nodes.sort_unstable();
        nodes.dedup();
        let index: HashMap<AccountId, usize> = nodes.iter().enumerate().map(|(i, &a)| (a, i)).collect();
        let mut edges: Vec<(usize, usize, u64)> = agg.into_iter().map(|((s, t), w)| (index[&s], index[&t], w)).collect();
        edges.sort_unstable();
        RetweetGraph { nodes, edges }
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn total_weight(&self) -> u64 {
        self.edges.iter().map(|e| e.2).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Keeps the given node indices (ascending) and the edges among them.
    pub fn induced(&self, keep: &[usize]) -> RetweetGraph {
        let mut remap = vec![usize::MAX; self.nodes.len()];
        for (new, &old) in keep.iter().enumerate() {
            remap[old] = new;
        }
        RetweetGraph {
            nodes: keep.iter().map(|&i| self.nodes[i]).collect(),
            edges: self
                .edges
                .iter()
                .filter(|(s, t, _)| remap[*s] != usize::MAX && remap[*t] != usize::MAX)
                .map(|&(s, t, w)| (remap[s], remap[t], w))
                .collect(),
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["source", "target", "weight"])?;
        for &(s, t, wt) in &self.edges {
            w.write_record([self.nodes[s].to_string(), self.nodes[t].to_string(), wt.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("retweet graph", e))?;
        Ok(())
    }
}

/// One edge per (retweeter, retweeted) pair, weighted by the retweet count.
/// Self-retweets are dropped.
pub fn build_retweet_graph(corpus: &Corpus) -> RetweetGraph {
    RetweetGraph::from_weighted_pairs(
        corpus
            .tweets
            .iter()
            .filter(|t| t.kind == TweetKind::Retweet)
            .filter_map(|t| t.target_account_id.map(|target| ((t.author_id, target), 1))),
    )
}

/// Weakly connected components by breadth-first search. Returns a
/// component label per node (labels in order of smallest member) and the
/// component sizes.
pub fn weak_components(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> (Vec<usize>, Vec<usize>) {
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (s, t) in edges {
        if s != t {
            adj[s].push(t);
            adj[t].push(s);
        }
    }
    let mut label = vec![usize::MAX; n];
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..n {
        if label[start] != usize::MAX {
            continue;
        }
        let c = sizes.len();
        label[start] = c;
        queue.push_back(start);
        let mut size = 0;
        while let Some(v) = queue.pop_front() {
            size += 1;
            for &u in &adj[v] {
                if label[u] == usize::MAX {
                    label[u] = c;
                    queue.push_back(u);
                }
            }
        }
        sizes.push(size);
    }
    (label, sizes)
}

/// Largest weakly connected component; equal sizes resolved towards the
/// component holding the smallest account id.
pub fn extract_lcc(graph: &RetweetGraph) -> Result<RetweetGraph> {
    if graph.is_empty() {
        return Err(Error::invalid("retweet graph is empty"));
    }
    let (label, sizes) = weak_components(graph.n_nodes(), graph.edges.iter().map(|&(s, t, _)| (s, t)));
    // labels are numbered by smallest member, so the first maximum wins ties
    let best = (0..sizes.len()).fold(0, |b, c| if sizes[c] > sizes[b] { c } else { b });
    let keep: Vec<usize> = (0..graph.n_nodes()).filter(|&i| label[i] == best).collect();
    Ok(graph.induced(&keep))
}

/// Normalized mutual information (arithmetic-mean normalization) between
/// two labelings of the same items.
pub fn nmi<A: Ord + Clone, B: Ord + Clone>(a: &[A], b: &[B]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings must cover the same items");
    let n = a.len() as f64;
    if a.is_empty() {
        return 1.0;
    }
    let mut ca: BTreeMap<A, f64> = BTreeMap::new();
    let mut cb: BTreeMap<B, f64> = BTreeMap::new();
    let mut cab: BTreeMap<(A, B), f64> = BTreeMap::new();
    for (x, y) in a.iter().zip(b) {
        *ca.entry(x.clone()).or_default() += 1.0;
        *cb.entry(y.clone()).or_default() += 1.0;
        *cab.entry((x.clone(), y.clone())).or_default() += 1.0;
    }
    let entropy = |counts: &mut dyn Iterator<Item = &f64>| -> f64 { counts.map(|&c| -(c / n) * (c / n).ln()).sum() };
    let (ha, hb) = (entropy(&mut ca.values()), entropy(&mut cb.values()));
    if ha == 0.0 && hb == 0.0 {
        return 1.0;
    }
    let mi: f64 = cab
        .iter()
        .map(|((x, y), &c)| (c / n) * ((c * n) / (ca[x] * cb[y])).ln())
        .sum();
    (2.0 * mi / (ha + hb)).clamp(0.0, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommunityClass {
    BotHeavy,
    Mixed,
    BotScarce,
}

impl CommunityClass {
    pub fn as_str(self) -> &'static str {
        match self {
            CommunityClass::BotHeavy => "bot_heavy",
            CommunityClass::Mixed => "mixed",
            CommunityClass::BotScarce => "bot_scarce",
        }
    }

    pub fn from_z(z: f64) -> Self {
        if z > 1.0 {
            CommunityClass::BotHeavy
        } else if z < -1.0 {
            CommunityClass::BotScarce
        } else {
            CommunityClass::Mixed
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CommunityProfile {
    pub block: usize,
    pub size: usize,
    pub bots: usize,
    pub bot_fraction: f64,
    /// Standardized bot fraction; `None` for communities below the size floor.
    pub z: Option<f64>,
    pub class: Option<CommunityClass>,
    /// Retweet weight with both ends inside the community.
    pub intra_weight: u64,
    /// Retweet weight leaving the community (retweeter inside).
    pub inter_out_weight: u64,
    /// Retweet weight entering the community (retweeted account inside).
    pub inter_in_weight: u64,
}

/// Size, bot count and retweet weights per community, without
/// standardization (`z` and `class` unset), in block order.
pub fn community_counts(partition: &Partition, is_bot: &dyn Fn(AccountId) -> bool, graph: &RetweetGraph) -> Result<Vec<CommunityProfile>> {
    if partition.blocks.len() != graph.n_nodes() {
        return Err(Error::invalid(format!(
            "partition covers {} nodes, graph has {}",
            partition.blocks.len(),
            graph.n_nodes()
        )));
    }
    let b = partition.n_blocks;
    let mut size = vec![0usize; b];
    let mut bots = vec![0usize; b];
    for (i, &blk) in partition.blocks.iter().enumerate() {
        size[blk] += 1;
        if is_bot(graph.nodes[i]) {
            bots[blk] += 1;
        }
    }
    let mut intra = vec![0u64; b];
    let mut out = vec![0u64; b];
    let mut inn = vec![0u64; b];
    for &(s, t, w) in &graph.edges {
        let (bs, bt) = (partition.blocks[s], partition.blocks[t]);
        if bs == bt {
            intra[bs] += w;
        } else {
            out[bs] += w;
            inn[bt] += w;
        }
    }
    Ok((0..b)
        .map(|k| CommunityProfile {
            block: k,
            size: size[k],
            bots: bots[k],
            bot_fraction: if size[k] > 0 { bots[k] as f64 / size[k] as f64 } else { 0.0 },
            z: None,
            class: None,
            intra_weight: intra[k],
            inter_out_weight: out[k],
            inter_in_weight: inn[k],
        })
        .collect())
}

/// Bot presence per community, standardized over communities with at least
/// `min_size` members (population standard deviation). Sorted by size,
/// largest first.
pub fn community_bot_profile(
    partition: &Partition,
    is_bot: &dyn Fn(AccountId) -> bool,
    graph: &RetweetGraph,
    min_size: usize,
) -> Result<Vec<CommunityProfile>> {
    let mut profiles = community_counts(partition, is_bot, graph)?;
    let eligible: Vec<usize> = (0..profiles.len()).filter(|&k| profiles[k].size >= min_size).collect();
    if eligible.len() < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 communities with {min_size}+ members to standardize, found {}",
            eligible.len()
        )));
    }
    let m = eligible.len() as f64;
    let mean = eligible.iter().map(|&k| profiles[k].bot_fraction).sum::<f64>() / m;
    let var = eligible.iter().map(|&k| (profiles[k].bot_fraction - mean).powi(2)).sum::<f64>() / m;
    let sd = var.sqrt();
    for &k in &eligible {
        let p = &mut profiles[k];
        let z = if sd > 0.0 { (p.bot_fraction - mean) / sd } else { 0.0 };
        p.z = Some(z);
        p.class = Some(CommunityClass::from_z(z));
    }
    sort_profiles(&mut profiles);
    Ok(profiles)
}

pub fn sort_profiles(profiles: &mut [CommunityProfile]) {
    profiles.sort_by(|a, b| b.size.cmp(&a.size).then(a.block.cmp(&b.block)));
}

pub fn write_profiles_csv<W: Write>(profiles: &[CommunityProfile], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "block",
        "size",
        "bots",
        "bot_fraction",
        "z",
        "class",
        "intra_weight",
        "inter_out_weight",
        "inter_in_weight",
    ])?;
    for p in profiles {
        w.write_record([
            p.block.to_string(),
            p.size.to_string(),
            p.bots.to_string(),
            p.bot_fraction.to_string(),
            p.z.map_or(String::new(), |z| z.to_string()),
            p.class.map_or("ineligible", CommunityClass::as_str).to_string(),
            p.intra_weight.to_string(),
            p.inter_out_weight.to_string(),
            p.inter_in_weight.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("community profiles", e))?;
    Ok(())
}

pub fn write_partition_csv<W: Write>(graph: &RetweetGraph, partition: &Partition, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["account_id", "block"])?;
    for (a, b) in graph.nodes.iter().zip(&partition.blocks) {
        w.write_record([a.to_string(), b.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("partition", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(pairs: &[(u64, u64, u64)]) -> RetweetGraph {
        RetweetGraph::from_weighted_pairs(pairs.iter().map(|&(s, t, w)| ((AccountId(s), AccountId(t)), w)))
    }

    #[test]
    fn aggregates_weights_and_drops_self_loops() {
        let graph = g(&[(1, 2, 1), (1, 2, 1), (1, 2, 1), (3, 3, 4)]);
        assert_eq!(graph.nodes, vec![AccountId(1), AccountId(2)]);
        assert_eq!(graph.edges, vec![(0, 1, 3)]);
    }

    #[test]
    fn lcc_picks_largest_then_smallest_id() {
        let graph = g(&[(10, 11, 1), (11, 12, 1), (12, 13, 1), (13, 14, 1), (1, 2, 1), (2, 3, 1)]);
        let lcc = extract_lcc(&graph).unwrap();
        assert_eq!(lcc.n_nodes(), 5);
        assert_eq!(lcc.nodes[0], AccountId(10));

        let tie = g(&[(20, 21, 1), (5, 6, 1)]);
        assert_eq!(extract_lcc(&tie).unwrap().nodes, vec![AccountId(5), AccountId(6)]);

        let connected = g(&[(1, 2, 2), (3, 2, 1)]);
        assert_eq!(extract_lcc(&connected).unwrap(), connected);
        assert!(extract_lcc(&RetweetGraph::default()).is_err());
    }

    #[test]
    fn nmi_extremes() {
        assert!((nmi(&[0, 0, 1, 1], &[5, 5, 7, 7]) - 1.0).abs() < 1e-12);
        assert!(nmi(&[0, 1, 0, 1], &[0, 0, 1, 1]).abs() < 1e-12);
    }

    fn partition(blocks: Vec<usize>) -> Partition {
        let n_blocks = blocks.iter().max().map_or(0, |m| m + 1);
        Partition { blocks, n_blocks, log_likelihood: 0.0, description_length: 0.0 }
    }

    #[test]
    fn profile_all_equal_fractions_is_mixed() {
        let graph = g(&[(1, 2, 1), (2, 3, 1), (3, 4, 1), (4, 1, 2)]);
        let p = partition(vec![0, 0, 1, 1]);
        let bots = |a: AccountId| a.0 == 1 || a.0 == 3;
        let prof = community_bot_profile(&p, &bots, &graph, 1).unwrap();
        assert!(prof.iter().all(|c| c.z == Some(0.0) && c.class == Some(CommunityClass::Mixed)));
        let intra: u64 = prof.iter().map(|c| c.intra_weight).sum();
        let inter: u64 = prof.iter().map(|c| c.inter_out_weight).sum();
        assert_eq!(intra + inter, graph.total_weight());
    }

    #[test]
    fn profile_bot_holding_community_is_heavy() {
        let graph = g(&[(1, 2, 1), (2, 3, 1), (3, 4, 1), (4, 5, 1), (5, 6, 1)]);
        let p = partition(vec![0, 0, 1, 1, 2, 2]);
        let bots = |a: AccountId| a.0 == 3 || a.0 == 4;
        let prof = community_bot_profile(&p, &bots, &graph, 2).unwrap();
        let heavy: Vec<_> = prof.iter().filter(|c| c.class == Some(CommunityClass::BotHeavy)).collect();
        assert_eq!(heavy.len(), 1);
        assert_eq!(heavy[0].block, 1);
        assert!(community_bot_profile(&p, &bots, &graph, 3).is_err());
    }
}
