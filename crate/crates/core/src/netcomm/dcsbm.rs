//! Directed, weighted, degree-corrected stochastic block model.
//!
//! The objective is the profile log-likelihood
//! `L(b) = Σ_rs m_rs ln(m_rs / (κ⁺_r κ⁻_s))`, where `m_rs` is the edge weight
//! from block `r` to block `s` and `κ⁺`, `κ⁻` are block out/in weight sums.
//! Writing `f(x) = x ln x`, this is `Σ f(m_rs) − Σ f(κ⁺_r) − Σ f(κ⁻_s)`,
//! so merges and single-node moves change it through a handful of terms.
//!
//! Fitting merges blocks greedily from singletons down to the top of the
//! requested block range, then alternates node-move refinement and single
//! best merges through the range. The number of blocks is chosen by the
//! penalized objective `−L + N ln B + B² ln E`.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{weak_components, RetweetGraph};
use crate::error::{Error, Result};

fn xlnx(x: f64) -> f64 {
    if x > 0.0 {
        x * x.ln()
    } else {
        0.0
    }
}

/// Minimum objective gain for a node move to be accepted.
const MOVE_TOLERANCE: f64 = 1e-10;

/// Most strongly linked blocks considered as merge partners of a block
/// during agglomeration.
const MERGE_CANDIDATES: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SbmParams {
    pub b_min: usize,
    pub b_max: usize,
    /// Cap on node-move sweeps per block count.
    pub max_sweeps: usize,
}

impl Default for SbmParams {
    fn default() -> Self {
        SbmParams {
            b_min: 1,
            b_max: 40,
            max_sweeps: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    /// Block of each node, contiguous from 0.
    pub blocks: Vec<usize>,
    pub n_blocks: usize,
    pub log_likelihood: f64,
    pub description_length: f64,
}

/// Objective history of a fit.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FitTrace {
    /// For each refined block count: the objective before refinement, then
    /// after every accepted node move.
    pub refinements: Vec<(usize, Vec<f64>)>,
    /// `(B, L, description length)` of every candidate partition.
    pub candidates: Vec<(usize, f64, f64)>,
}

/// Log-likelihood of a block assignment, computed from scratch.
pub fn log_likelihood(graph: &RetweetGraph, blocks: &[usize]) -> f64 {
    let mut m: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut kout: BTreeMap<usize, f64> = BTreeMap::new();
    let mut kin: BTreeMap<usize, f64> = BTreeMap::new();
    for &(s, t, w) in &graph.edges {
        let (r, q, w) = (blocks[s], blocks[t], w as f64);
        *m.entry((r, q)).or_default() += w;
        *kout.entry(r).or_default() += w;
        *kin.entry(q).or_default() += w;
    }
    m.values().map(|&x| xlnx(x)).sum::<f64>()
        - kout.values().map(|&x| xlnx(x)).sum::<f64>()
        - kin.values().map(|&x| xlnx(x)).sum::<f64>()
}

pub fn description_length(log_likelihood: f64, n_nodes: usize, n_blocks: usize, n_edges: usize) -> f64 {
    let b = n_blocks as f64;
    -log_likelihood + n_nodes as f64 * b.ln() + b * b * (n_edges.max(1) as f64).ln()
}

struct Adjacency {
    out: Vec<Vec<(usize, f64)>>,
    inn: Vec<Vec<(usize, f64)>>,
}

impl Adjacency {
    fn new(graph: &RetweetGraph) -> Self {
        let n = graph.n_nodes();
        let mut out = vec![Vec::new(); n];
        let mut inn = vec![Vec::new(); n];
        for &(s, t, w) in &graph.edges {
            out[s].push((t, w as f64));
            inn[t].push((s, w as f64));
        }
        Adjacency { out, inn }
    }
}

// ---- sparse agglomeration from singletons ----

struct SparseState {
    block_of: Vec<usize>,
    members: Vec<Vec<usize>>,
    out: Vec<BTreeMap<usize, f64>>,
    inn: Vec<BTreeMap<usize, f64>>,
    kout: Vec<f64>,
    kin: Vec<f64>,
    alive: usize,
}

impl SparseState {
    fn singletons(graph: &RetweetGraph) -> Self {
        let n = graph.n_nodes();
        let mut st = SparseState {
            block_of: (0..n).collect(),
            members: (0..n).map(|i| vec![i]).collect(),
            out: vec![BTreeMap::new(); n],
            inn: vec![BTreeMap::new(); n],
            kout: vec![0.0; n],
            kin: vec![0.0; n],
            alive: n,
        };
        for &(s, t, w) in &graph.edges {
            st.add(s, t, w as f64);
            st.kout[s] += w as f64;
            st.kin[t] += w as f64;
        }
        st
    }

    fn add(&mut self, r: usize, s: usize, w: f64) {
        *self.out[r].entry(s).or_default() += w;
        *self.inn[s].entry(r).or_default() += w;
    }

    fn merge_delta(&self, r: usize, s: usize) -> f64 {
        let mut old = 0.0;
        let mut row: BTreeMap<usize, f64> = BTreeMap::new();
        let mut col: BTreeMap<usize, f64> = BTreeMap::new();
        const MERGED: usize = usize::MAX;
        for b in [r, s] {
            for (&c, &w) in &self.out[b] {
                old += xlnx(w);
                let key = if c == r || c == s { MERGED } else { c };
                *row.entry(key).or_default() += w;
            }
            for (&c, &w) in &self.inn[b] {
                if c != r && c != s {
                    old += xlnx(w);
                    *col.entry(c).or_default() += w;
                }
            }
        }
        let new: f64 = row.values().chain(col.values()).map(|&w| xlnx(w)).sum();
        let dk = xlnx(self.kout[r] + self.kout[s]) - xlnx(self.kout[r]) - xlnx(self.kout[s])
            + xlnx(self.kin[r] + self.kin[s])
            - xlnx(self.kin[r])
            - xlnx(self.kin[s]);
        (new - old) - dk
    }

    /// Absorbs block `u` into block `t`.
    fn merge(&mut self, t: usize, u: usize) {
        let urow = std::mem::take(&mut self.out[u]);
        let ucol = std::mem::take(&mut self.inn[u]);
        for &c in urow.keys() {
            if c != u {
                self.inn[c].remove(&u);
            }
        }
        for &c in ucol.keys() {
            if c != u {
                self.out[c].remove(&u);
            }
        }
        for (c, w) in urow {
            self.add(t, if c == u { t } else { c }, w);
        }
        for (c, w) in ucol {
            if c != u {
                self.add(c, t, w);
            }
        }
        self.kout[t] += self.kout[u];
        self.kin[t] += self.kin[u];
        self.kout[u] = 0.0;
        self.kin[u] = 0.0;
        let moved = std::mem::take(&mut self.members[u]);
        for &v in &moved {
            self.block_of[v] = t;
        }
        self.members[t].extend(moved);
        self.alive -= 1;
    }

    /// One round of best-partner merges, shrinking towards `target` blocks.
    /// Returns false when no merge was possible.
    fn merge_round(&mut self, target: usize) -> bool {
        let mut cands: Vec<(f64, usize, usize)> = Vec::new();
        for r in 0..self.members.len() {
            if self.members[r].is_empty() {
                continue;
            }
            let mut best: Option<(f64, usize)> = None;
            let mut linked: BTreeMap<usize, f64> = BTreeMap::new();
            for (&s, &w) in self.out[r].iter().chain(&self.inn[r]) {
                if s != r {
                    *linked.entry(s).or_default() += w;
                }
            }
            let mut partners: Vec<(usize, f64)> = linked.into_iter().collect();
            partners.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            partners.truncate(MERGE_CANDIDATES);
            for (s, _) in partners {
                let d = self.merge_delta(r, s);
                if best.is_none_or(|(bd, bs)| d > bd || (d == bd && s < bs)) {
                    best = Some((d, s));
                }
            }
            if let Some((d, s)) = best {
                cands.push((d, r.min(s), r.max(s)));
            }
        }
        if cands.is_empty() {
            return false;
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        cands.dedup_by(|a, b| a.1 == b.1 && a.2 == b.2);
        let mut touched = vec![false; self.members.len()];
        for (_, r, s) in cands {
            if self.alive <= target {
                break;
            }
            if touched[r] || touched[s] {
                continue;
            }
            touched[r] = true;
            touched[s] = true;
            self.merge(r, s);
        }
        true
    }

    /// Contiguous relabeling in order of the smallest member node.
    fn compact(&self) -> Vec<usize> {
        let mut map = vec![usize::MAX; self.members.len()];
        let mut next = 0;
        let mut out = Vec::with_capacity(self.block_of.len());
        for &b in &self.block_of {
            if map[b] == usize::MAX {
                map[b] = next;
                next += 1;
            }
            out.push(map[b]);
        }
        out
    }
}

// ---- dense refinement ----

/// Per-block link weights of one node, with the touched blocks listed.
struct Links {
    out: Vec<f64>,
    inn: Vec<f64>,
    out_blocks: Vec<usize>,
    in_blocks: Vec<usize>,
}

impl Links {
    fn new(b: usize) -> Self {
        Links {
            out: vec![0.0; b],
            inn: vec![0.0; b],
            out_blocks: Vec::new(),
            in_blocks: Vec::new(),
        }
    }

    fn clear(&mut self) {
        for &t in &self.out_blocks {
            self.out[t] = 0.0;
        }
        for &t in &self.in_blocks {
            self.inn[t] = 0.0;
        }
        self.out_blocks.clear();
        self.in_blocks.clear();
    }

    fn add_out(&mut self, t: usize, w: f64) {
        if self.out[t] == 0.0 {
            self.out_blocks.push(t);
        }
        self.out[t] += w;
    }

    fn add_in(&mut self, t: usize, w: f64) {
        if self.inn[t] == 0.0 {
            self.in_blocks.push(t);
        }
        self.inn[t] += w;
    }
}

struct DenseState<'a> {
    adj: &'a Adjacency,
    b: usize,
    block_of: Vec<usize>,
    size: Vec<usize>,
    m: Vec<f64>,
    kout: Vec<f64>,
    kin: Vec<f64>,
    dout: Vec<f64>,
    din: Vec<f64>,
    objective: f64,
}

impl<'a> DenseState<'a> {
    fn new(adj: &'a Adjacency, blocks: Vec<usize>) -> Self {
        let b = blocks.iter().max().map_or(0, |&x| x + 1);
        let n = blocks.len();
        let mut st = DenseState {
            adj,
            b,
            size: vec![0; b],
            m: vec![0.0; b * b],
            kout: vec![0.0; b],
            kin: vec![0.0; b],
            dout: vec![0.0; n],
            din: vec![0.0; n],
            block_of: blocks,
            objective: 0.0,
        };
        for v in 0..n {
            st.size[st.block_of[v]] += 1;
            for &(u, w) in &adj.out[v] {
                let (r, s) = (st.block_of[v], st.block_of[u]);
                st.m[r * b + s] += w;
                st.kout[r] += w;
                st.kin[s] += w;
                st.dout[v] += w;
                st.din[u] += w;
            }
        }
        st.objective = st.full_objective();
        st
    }

    fn full_objective(&self) -> f64 {
        self.m.iter().map(|&x| xlnx(x)).sum::<f64>()
            - self.kout.iter().map(|&x| xlnx(x)).sum::<f64>()
            - self.kin.iter().map(|&x| xlnx(x)).sum::<f64>()
    }

    /// Weight from `v` to each block and from each block to `v`.
    fn links(&self, v: usize, scratch: &mut Links) {
        scratch.clear();
        for &(u, w) in &self.adj.out[v] {
            scratch.add_out(self.block_of[u], w);
        }
        for &(u, w) in &self.adj.inn[v] {
            scratch.add_in(self.block_of[u], w);
        }
    }

    /// Part of a move's entry change that only depends on leaving `r`:
    /// row and column `r` outside the four corner entries, for every block.
    fn leave_gain(&self, r: usize, l: &Links) -> f64 {
        let b = self.b;
        let mut g = 0.0;
        for &t in &l.out_blocks {
            if t != r {
                let m = self.m[r * b + t];
                g += xlnx(m - l.out[t]) - xlnx(m);
            }
        }
        for &t in &l.in_blocks {
            if t != r {
                let m = self.m[t * b + r];
                g += xlnx(m - l.inn[t]) - xlnx(m);
            }
        }
        g
    }

    /// Objective change of moving `v` from its block `r` to `s`; `leave` is
    /// [`DenseState::leave_gain`] for `r`.
    fn move_delta(&self, v: usize, s: usize, l: &Links, leave: f64) -> f64 {
        let r = self.block_of[v];
        if r == s {
            return 0.0;
        }
        let b = self.b;
        let df = |e: usize, d: f64| xlnx(self.m[e] + d) - xlnx(self.m[e]);
        let mut dm = leave;
        // entries with t == s belong to the corners below
        if l.out[s] != 0.0 {
            dm -= df(r * b + s, -l.out[s]);
        }
        if l.inn[s] != 0.0 {
            dm -= df(s * b + r, -l.inn[s]);
        }
        for &t in &l.out_blocks {
            if t != r && t != s {
                dm += df(s * b + t, l.out[t]);
            }
        }
        for &t in &l.in_blocks {
            if t != r && t != s {
                dm += df(t * b + s, l.inn[t]);
            }
        }
        dm += df(r * b + r, -l.out[r] - l.inn[r]);
        dm += df(r * b + s, -l.out[s] + l.inn[r]);
        dm += df(s * b + r, l.out[r] - l.inn[s]);
        dm += df(s * b + s, l.out[s] + l.inn[s]);
        let (o, i) = (self.dout[v], self.din[v]);
        let dk = xlnx(self.kout[r] - o) - xlnx(self.kout[r]) + xlnx(self.kout[s] + o) - xlnx(self.kout[s])
            + xlnx(self.kin[r] - i)
            - xlnx(self.kin[r])
            + xlnx(self.kin[s] + i)
            - xlnx(self.kin[s]);
        dm - dk
    }

    fn apply_move(&mut self, v: usize, s: usize, delta: f64, l: &Links) {
        let r = self.block_of[v];
        let b = self.b;
        // integer weights stored as f64: these updates are exact
        for &t in &l.out_blocks {
            self.m[r * b + t] -= l.out[t];
            self.m[s * b + t] += l.out[t];
        }
        for &t in &l.in_blocks {
            self.m[t * b + r] -= l.inn[t];
            self.m[t * b + s] += l.inn[t];
        }
        self.kout[r] -= self.dout[v];
        self.kout[s] += self.dout[v];
        self.kin[r] -= self.din[v];
        self.kin[s] += self.din[v];
        self.size[r] -= 1;
        self.size[s] += 1;
        self.block_of[v] = s;
        self.objective += delta;
    }

    /// Greedy single-node moves until no move improves the objective by more
    /// than the tolerance. Moves never empty a block.
    fn refine(&mut self, rng: &mut ChaCha8Rng, max_sweeps: usize, trace: &mut Vec<f64>) {
        let n = self.block_of.len();
        let mut order: Vec<usize> = (0..n).collect();
        let mut links = Links::new(self.b);
        trace.push(self.objective);
        for _ in 0..max_sweeps {
            order.shuffle(rng);
            let mut moved = false;
            for &v in &order {
                let r = self.block_of[v];
                if self.size[r] <= 1 {
                    continue;
                }
                self.links(v, &mut links);
                let leave = self.leave_gain(r, &links);
                let mut best = (MOVE_TOLERANCE, usize::MAX);
                for s in 0..self.b {
                    if s == r {
                        continue;
                    }
                    let d = self.move_delta(v, s, &links, leave);
                    if d > best.0 {
                        best = (d, s);
                    }
                }
                if best.1 != usize::MAX {
                    self.apply_move(v, best.1, best.0, &links);
                    trace.push(self.objective);
                    moved = true;
                }
            }
            if !moved {
                break;
            }
        }
        // drop accumulated rounding before the value is reported
        self.objective = self.full_objective();
    }

    fn merge_delta(&self, r: usize, s: usize) -> f64 {
        let b = self.b;
        let mut old = 0.0;
        let mut new = 0.0;
        // rows/cols of r and s, merged entry (t,t) handled separately
        let tt = self.m[r * b + r] + self.m[r * b + s] + self.m[s * b + r] + self.m[s * b + s];
        old += xlnx(self.m[r * b + r]) + xlnx(self.m[r * b + s]) + xlnx(self.m[s * b + r]) + xlnx(self.m[s * b + s]);
        new += xlnx(tt);
        for c in 0..b {
            if c == r || c == s {
                continue;
            }
            let (a1, a2) = (self.m[r * b + c], self.m[s * b + c]);
            let (c1, c2) = (self.m[c * b + r], self.m[c * b + s]);
            old += xlnx(a1) + xlnx(a2) + xlnx(c1) + xlnx(c2);
            new += xlnx(a1 + a2) + xlnx(c1 + c2);
        }
        let dk = xlnx(self.kout[r] + self.kout[s]) - xlnx(self.kout[r]) - xlnx(self.kout[s])
            + xlnx(self.kin[r] + self.kin[s])
            - xlnx(self.kin[r])
            - xlnx(self.kin[s]);
        (new - old) - dk
    }

    /// Merges the pair with the largest objective change and relabels
    /// blocks contiguously.
    fn merge_best(&self) -> Vec<usize> {
        let mut best = (f64::NEG_INFINITY, 0, 1);
        for r in 0..self.b {
            for s in r + 1..self.b {
                let d = self.merge_delta(r, s);
                if d > best.0 {
                    best = (d, r, s);
                }
            }
        }
        let (_, r, s) = best;
        let blocks: Vec<usize> = self
            .block_of
            .iter()
            .map(|&x| if x == s { r } else { x })
            .collect();
        relabel(&blocks)
    }
}

/// Contiguous relabeling in order of first appearance.
fn relabel(blocks: &[usize]) -> Vec<usize> {
    let mut map: BTreeMap<usize, usize> = BTreeMap::new();
    blocks
        .iter()
        .map(|&b| {
            let next = map.len();
            *map.entry(b).or_insert(next)
        })
        .collect()
}

pub fn fit_dcsbm(graph: &RetweetGraph, params: &SbmParams, seed: u64) -> Result<Partition> {
    fit_dcsbm_traced(graph, params, seed).map(|(p, _)| p)
}

pub fn fit_dcsbm_traced(graph: &RetweetGraph, params: &SbmParams, seed: u64) -> Result<(Partition, FitTrace)> {
    let n = graph.n_nodes();
    if n == 0 {
        return Err(Error::invalid("cannot fit a block model to an empty graph"));
    }
    let (_, sizes) = weak_components(n, graph.edges.iter().map(|&(s, t, _)| (s, t)));
    if sizes.len() != 1 {
        return Err(Error::invalid(format!(
            "block model input must be weakly connected, found {} components (pass the LCC)",
            sizes.len()
        )));
    }
    if params.b_min < 1 || params.b_min > params.b_max {
        return Err(Error::invalid(format!("invalid block range [{}, {}]", params.b_min, params.b_max)));
    }
    let b_min = params.b_min.min(n);
    let b_max = params.b_max.min(n);

    let mut sparse = SparseState::singletons(graph);
    while sparse.alive > b_max {
        let target = (sparse.alive * 2 / 3).max(b_max);
        if !sparse.merge_round(target) {
            break;
        }
    }
    let adj = Adjacency::new(graph);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trace = FitTrace::default();
    let mut best: Option<Partition> = None;
    let mut blocks = sparse.compact();
    loop {
        let mut st = DenseState::new(&adj, blocks);
        let mut moves = Vec::new();
        st.refine(&mut rng, params.max_sweeps, &mut moves);
        trace.refinements.push((st.b, moves));
        let dl = description_length(st.objective, n, st.b, graph.n_edges());
        trace.candidates.push((st.b, st.objective, dl));
        if best.as_ref().is_none_or(|p| dl < p.description_length) {
            best = Some(Partition {
                blocks: relabel(&st.block_of),
                n_blocks: st.b,
                log_likelihood: st.objective,
                description_length: dl,
            });
        }
        if st.b <= b_min {
            break;
        }
        blocks = st.merge_best();
    }
    let mut best = best.expect("at least one candidate partition");
    best.log_likelihood = log_likelihood(graph, &best.blocks);
    Ok((best, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::AccountId;

    fn graph(pairs: &[(u64, u64, u64)]) -> RetweetGraph {
        RetweetGraph::from_weighted_pairs(pairs.iter().map(|&(s, t, w)| ((AccountId(s), AccountId(t)), w)))
    }

    #[test]
    fn single_block_likelihood_matches_hand_formula() {
        let g = graph(&[(1, 2, 3), (2, 3, 1), (3, 1, 2), (1, 3, 4)]);
        let w = g.total_weight() as f64;
        let l = log_likelihood(&g, &vec![0; g.n_nodes()]);
        assert!((l - w * (w / (w * w)).ln()).abs() < 1e-9);
    }

    #[test]
    fn label_permutation_invariance() {
        let g = graph(&[(1, 2, 3), (2, 3, 1), (3, 4, 2), (4, 1, 4), (2, 4, 1)]);
        let a = log_likelihood(&g, &[0, 0, 1, 1]);
        let b = log_likelihood(&g, &[1, 1, 0, 0]);
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn rejects_disconnected_graph() {
        let g = graph(&[(1, 2, 1), (3, 4, 1)]);
        assert!(fit_dcsbm(&g, &SbmParams::default(), 0).is_err());
    }

    #[test]
    fn two_cliques_are_separated() {
        let mut pairs = Vec::new();
        for base in [0u64, 10] {
            for i in 0..6 {
                for j in 0..6 {
                    if i != j {
                        pairs.push((base + i, base + j, 1));
                    }
                }
            }
        }
        pairs.push((0, 10, 1));
        let g = graph(&pairs);
        let p = fit_dcsbm(&g, &SbmParams { b_min: 1, b_max: 4, ..Default::default() }, 7).unwrap();
        assert_eq!(p.n_blocks, 2);
        assert!(p.blocks[..6].iter().all(|&b| b == p.blocks[0]));
        assert!(p.blocks[6..].iter().all(|&b| b == p.blocks[6]));
        assert_ne!(p.blocks[0], p.blocks[6]);
    }
}
