//! Second-order gradient boosting of regression trees on the logistic loss.
//!
//! Split search is exact and sparsity-aware: entries equal to zero are
//! treated as missing and sent down a per-split default branch, so the cost
//! of a level is proportional to the number of non-zero entries.

use std::io::{BufRead, Write};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::SparseMatrix;
use crate::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbtParams {
    pub rounds: usize,
    pub max_depth: usize,
    pub shrinkage: f64,
    pub l2: f64,
    /// Minimum curvature sum in each child of a split.
    pub min_child_weight: f64,
    /// Fraction of rows drawn (without replacement) for each tree.
    pub subsample: f64,
}

impl Default for GbtParams {
    fn default() -> Self {
        GbtParams {
            rounds: 200,
            max_depth: 6,
            shrinkage: 0.1,
            l2: 1.0,
            min_child_weight: 1.0,
            subsample: 1.0,
        }
    }
}

/// Column-major view of a training matrix: for each feature, its non-zero
/// entries sorted by value.
#[derive(Clone, Debug)]
pub struct FeatureColumns<F> {
    n_rows: usize,
    columns: Vec<Vec<(u32, F)>>,
}

impl<F: Scalar> FeatureColumns<F> {
    pub fn from_dense(rows: &[Vec<F>]) -> Result<Self> {
        let n_features = rows.first().map_or(0, Vec::len);
        let mut columns = vec![Vec::new(); n_features];
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n_features {
                return Err(Error::ColumnMismatch {
                    expected: n_features,
                    actual: row.len(),
                });
            }
            for (j, &v) in row.iter().enumerate() {
                if v != F::zero() {
                    columns[j].push((i as u32, v));
                }
            }
        }
        Ok(Self::finish(rows.len(), columns))
    }

    /// Uses the given rows of a sparse count matrix, in order.
    pub fn from_sparse(m: &SparseMatrix, rows: &[usize]) -> Self {
        let mut columns = vec![Vec::new(); m.n_cols];
        for (i, &r) in rows.iter().enumerate() {
            for (c, v) in m.row(r) {
                columns[c].push((i as u32, F::from_u32(v).unwrap_or_else(F::infinity)));
            }
        }
        Self::finish(rows.len(), columns)
    }

    fn finish(n_rows: usize, mut columns: Vec<Vec<(u32, F)>>) -> Self {
        columns.par_iter_mut().for_each(|c| {
            c.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal).then(a.0.cmp(&b.0)))
        });
        FeatureColumns { n_rows, columns }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn nnz(&self) -> usize {
        self.columns.iter().map(Vec::len).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Node<F> {
    Split {
        feature: usize,
        threshold: F,
        /// Branch taken by zero (missing) values.
        default_left: bool,
        left: usize,
        right: usize,
    },
    Leaf {
        weight: F,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tree<F> {
    pub nodes: Vec<Node<F>>,
}

impl<F: Scalar> Tree<F> {
    /// Raw (unshrunk) output for a row whose feature values are given by
    /// `value`; zero means missing.
    pub fn eval(&self, value: impl Fn(usize) -> F) -> F {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { weight } => return *weight,
                Node::Split {
                    feature,
                    threshold,
                    default_left,
                    left,
                    right,
                } => {
                    let v = value(*feature);
                    let go_left = if v == F::zero() { *default_left } else { v < *threshold };
                    i = if go_left { *left } else { *right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn rec<F>(nodes: &[Node<F>], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + rec(nodes, *left).max(rec(nodes, *right)),
            }
        }
        rec(&self.nodes, 0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GbtModel<F> {
    pub trees: Vec<Tree<F>>,
    pub shrinkage: F,
    pub base_score: F,
    pub n_features: usize,
}

/// Per-round training diagnostics.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    /// Mean training log-loss before any tree, then after each round.
    pub loss: Vec<f64>,
}

pub fn sigmoid<F: Scalar>(m: F) -> F {
    if m >= F::zero() {
        F::one() / (F::one() + (-m).exp())
    } else {
        let e = m.exp();
        e / (F::one() + e)
    }
}

/// ln(1 + e^m), stable for large |m|.
fn softplus<F: Scalar>(m: F) -> F {
    if m > F::zero() {
        m + (-m).exp().ln_1p()
    } else {
        m.exp().ln_1p()
    }
}

fn mean_log_loss<F: Scalar>(margin: &[F], y: &[bool]) -> f64 {
    let total: f64 = margin
        .iter()
        .zip(y)
        .map(|(&m, &yi)| {
            let l = softplus(m) - if yi { m } else { F::zero() };
            l.to_f64().unwrap_or(f64::NAN)
        })
        .sum();
    total / margin.len().max(1) as f64
}

impl<F: Scalar> GbtModel<F> {
    pub fn margin(&self, value: impl Fn(usize) -> F + Copy) -> F {
        self.trees
            .iter()
            .fold(self.base_score, |acc, t| acc + self.shrinkage * t.eval(value))
    }

    pub fn predict_proba_dense(&self, row: &[F]) -> Result<F> {
        if row.len() != self.n_features {
            return Err(Error::ColumnMismatch {
                expected: self.n_features,
                actual: row.len(),
            });
        }
        Ok(sigmoid(self.margin(|j| row[j])))
    }

    /// Positive-class probability for every row of a sparse count matrix.
    pub fn predict_proba_sparse(&self, m: &SparseMatrix) -> Result<Vec<F>> {
        if m.n_cols != self.n_features {
            return Err(Error::ColumnMismatch {
                expected: self.n_features,
                actual: m.n_cols,
            });
        }
        Ok((0..m.n_rows)
            .into_par_iter()
            .map(|i| {
                let (a, b) = (m.indptr[i], m.indptr[i + 1]);
                let idx = &m.indices[a..b];
                let vals = &m.values[a..b];
                let lookup = |j: usize| match idx.binary_search(&(j as u32)) {
                    Ok(k) => F::from_u32(vals[k]).unwrap_or_else(F::infinity),
                    Err(_) => F::zero(),
                };
                sigmoid(self.margin(lookup))
            })
            .collect())
    }

    // ---- text persistence ----
    //
    //   botstance-gbt v1
    //   features <n>
    //   base_score <x>
    //   shrinkage <x>
    //   trees <t>
    //   tree <i> <node count>
    //   split <node> <feature> <threshold> <default_left 0|1> <left> <right>
    //   leaf <node> <weight>

    pub fn write_text<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "botstance-gbt v1")?;
        writeln!(out, "features {}", self.n_features)?;
        writeln!(out, "base_score {}", self.base_score)?;
        writeln!(out, "shrinkage {}", self.shrinkage)?;
        writeln!(out, "trees {}", self.trees.len())?;
        for (t, tree) in self.trees.iter().enumerate() {
            writeln!(out, "tree {} {}", t, tree.nodes.len())?;
            for (i, node) in tree.nodes.iter().enumerate() {
                match node {
                    Node::Split {
                        feature,
                        threshold,
                        default_left,
                        left,
                        right,
                    } => writeln!(
                        out,
                        "split {i} {feature} {threshold} {} {left} {right}",
                        u8::from(*default_left)
                    )?,
                    Node::Leaf { weight } => writeln!(out, "leaf {i} {weight}")?,
                }
            }
        }
        out.flush()
    }

    pub fn read_text<R: BufRead>(input: R) -> Result<Self> {
        let bad = |detail: String| Error::Format {
            what: "gbt model",
            detail,
        };
        let lines: Vec<String> = input.lines().collect::<std::io::Result<_>>().map_err(|e| Error::io("model", e))?;
        let mut it = lines.iter().map(|l| l.trim()).filter(|l| !l.is_empty());
        let mut field = |name: &str| -> Result<String> {
            let line = it.next().ok_or_else(|| bad(format!("missing `{name}`")))?;
            if name == "header" || name == "node" {
                return Ok(line.to_string());
            }
            line.strip_prefix(name)
                .map(|s| s.trim().to_string())
                .ok_or_else(|| bad(format!("expected `{name}`, got `{line}`")))
        };
        if field("header")? != "botstance-gbt v1" {
            return Err(bad("unknown header".into()));
        }
        fn num<T: std::str::FromStr>(s: &str) -> Result<T> {
            s.parse().map_err(|_| Error::Format {
                what: "gbt model",
                detail: format!("bad number `{s}`"),
            })
        }
        let n_features: usize = num(&field("features")?)?;
        let base_score: F = num(&field("base_score")?)?;
        let shrinkage: F = num(&field("shrinkage")?)?;
        let n_trees: usize = num(&field("trees")?)?;
        let mut trees = Vec::with_capacity(n_trees);
        for t in 0..n_trees {
            let head = field("tree")?;
            let parts: Vec<&str> = head.split_whitespace().collect();
            if parts.len() != 2 || num::<usize>(parts[0])? != t {
                return Err(bad(format!("bad tree header `{head}`")));
            }
            let n_nodes: usize = num(parts[1])?;
            let mut nodes = Vec::with_capacity(n_nodes);
            for i in 0..n_nodes {
                let line = field("node")?;
                let p: Vec<&str> = line.split_whitespace().collect();
                let node = match p.as_slice() {
                    ["split", id, f, thr, dl, l, r] if num::<usize>(id)? == i => Node::Split {
                        feature: num(f)?,
                        threshold: num(thr)?,
                        default_left: *dl == "1",
                        left: num(l)?,
                        right: num(r)?,
                    },
                    ["leaf", id, w] if num::<usize>(id)? == i => Node::Leaf { weight: num(w)? },
                    _ => return Err(bad(format!("bad node line `{line}`"))),
                };
                if let Node::Split { feature, left, right, .. } = node {
                    if feature >= n_features || left >= n_nodes || right >= n_nodes {
                        return Err(bad(format!("node out of range `{line}`")));
                    }
                }
                nodes.push(node);
            }
            trees.push(Tree { nodes });
        }
        Ok(GbtModel {
            trees,
            shrinkage,
            base_score,
            n_features,
        })
    }
}

#[derive(Clone, Copy, Debug)]
struct Candidate<F> {
    gain: F,
    feature: usize,
    threshold: F,
    default_left: bool,
}

/// Per-slot running statistics while scanning one feature column.
#[derive(Clone, Copy)]
struct ScanState<F> {
    g_nz: F,
    h_nz: F,
    g_left: F,
    h_left: F,
    last: Option<F>,
}

struct SplitContext<'a, F> {
    lambda: F,
    min_child: F,
    node_g: &'a [F],
    node_h: &'a [F],
}

impl<F: Scalar> SplitContext<'_, F> {
    fn score(&self, g: F, h: F) -> F {
        g * g / (h + self.lambda)
    }

    /// Best of missing-left / missing-right for a given non-zero left part.
    fn evaluate(&self, slot: usize, st: &ScanState<F>, feature: usize, threshold: F) -> Option<Candidate<F>> {
        let (g, h) = (self.node_g[slot], self.node_h[slot]);
        let (gm, hm) = (g - st.g_nz, h - st.h_nz);
        let parent = self.score(g, h);
        let half = F::lit(0.5);
        let mut best: Option<Candidate<F>> = None;
        for default_left in [true, false] {
            let (gl, hl) = if default_left {
                (st.g_left + gm, st.h_left + hm)
            } else {
                (st.g_left, st.h_left)
            };
            let (gr, hr) = (g - gl, h - hl);
            if hl < self.min_child || hr < self.min_child || hl <= F::zero() || hr <= F::zero() {
                continue;
            }
            let gain = half * (self.score(gl, hl) + self.score(gr, hr) - parent);
            if gain > F::zero() && best.is_none_or(|b| gain > b.gain) {
                best = Some(Candidate {
                    gain,
                    feature,
                    threshold,
                    default_left,
                });
            }
        }
        best
    }
}

fn better<F: Scalar>(current: Option<Candidate<F>>, new: Option<Candidate<F>>) -> Option<Candidate<F>> {
    match (current, new) {
        (Some(c), Some(n)) if n.gain > c.gain => Some(n),
        (None, n) => n,
        (c, _) => c,
    }
}

/// Best split per frontier slot for one feature.
fn scan_feature<F: Scalar>(
    column: &[(u32, F)],
    feature: usize,
    slot_of_row: &[i32],
    g: &[F],
    h: &[F],
    ctx: &SplitContext<'_, F>,
    n_slots: usize,
) -> Vec<Option<Candidate<F>>> {
    let mut st = vec![
        ScanState {
            g_nz: F::zero(),
            h_nz: F::zero(),
            g_left: F::zero(),
            h_left: F::zero(),
            last: None,
        };
        n_slots
    ];
    for &(r, _) in column {
        let s = slot_of_row[r as usize];
        if s >= 0 {
            let s = s as usize;
            st[s].g_nz = st[s].g_nz + g[r as usize];
            st[s].h_nz = st[s].h_nz + h[r as usize];
        }
    }
    let mut best = vec![None; n_slots];
    for &(r, v) in column {
        let s = slot_of_row[r as usize];
        if s < 0 {
            continue;
        }
        let s = s as usize;
        match st[s].last {
            None => {
                // nothing non-zero on the left; only missing can go left
                best[s] = better(best[s], ctx.evaluate(s, &st[s], feature, v));
            }
            Some(prev) if v > prev => {
                let thr = prev + (v - prev) * F::lit(0.5);
                let thr = if thr > prev { thr } else { v };
                best[s] = better(best[s], ctx.evaluate(s, &st[s], feature, thr));
            }
            _ => {}
        }
        st[s].g_left = st[s].g_left + g[r as usize];
        st[s].h_left = st[s].h_left + h[r as usize];
        st[s].last = Some(v);
    }
    for s in 0..n_slots {
        if st[s].last.is_some() {
            best[s] = better(best[s], ctx.evaluate(s, &st[s], feature, F::infinity()));
        }
    }
    best
}

/// Grows one tree level by level. Returns the tree and the leaf index of
/// every row (`usize::MAX` for rows outside `rows_in_tree`).
fn build_tree<F: Scalar>(
    x: &FeatureColumns<F>,
    g: &[F],
    h: &[F],
    in_tree: &[bool],
    params: &GbtParams,
) -> (Tree<F>, Vec<usize>) {
    let n = x.n_rows;
    let lambda = F::lit(params.l2);
    let mut nodes: Vec<Node<F>> = vec![Node::Leaf { weight: F::zero() }];
    let mut node_of_row: Vec<usize> = (0..n).map(|i| if in_tree[i] { 0 } else { usize::MAX }).collect();
    let mut frontier: Vec<usize> = vec![0];
    let leaf_weight = |gs: F, hs: F| -gs / (hs + lambda);

    let sums = |frontier: &[usize], node_of_row: &[usize], nodes_len: usize| {
        let mut gs = vec![F::zero(); nodes_len];
        let mut hs = vec![F::zero(); nodes_len];
        for i in 0..n {
            let nd = node_of_row[i];
            if nd != usize::MAX {
                gs[nd] = gs[nd] + g[i];
                hs[nd] = hs[nd] + h[i];
            }
        }
        let fg: Vec<F> = frontier.iter().map(|&f| gs[f]).collect();
        let fh: Vec<F> = frontier.iter().map(|&f| hs[f]).collect();
        (fg, fh)
    };

    for depth in 0..=params.max_depth {
        if frontier.is_empty() {
            break;
        }
        let (fg, fh) = sums(&frontier, &node_of_row, nodes.len());
        if depth == params.max_depth {
            for (k, &nd) in frontier.iter().enumerate() {
                nodes[nd] = Node::Leaf {
                    weight: leaf_weight(fg[k], fh[k]),
                };
            }
            break;
        }
        let mut slot_of_node = vec![-1i32; nodes.len()];
        for (k, &nd) in frontier.iter().enumerate() {
            slot_of_node[nd] = k as i32;
        }
        let slot_of_row: Vec<i32> = node_of_row
            .iter()
            .map(|&nd| if nd == usize::MAX { -1 } else { slot_of_node[nd] })
            .collect();
        let ctx = SplitContext {
            lambda,
            min_child: F::lit(params.min_child_weight),
            node_g: &fg,
            node_h: &fh,
        };
        let per_feature: Vec<Vec<Option<Candidate<F>>>> = x
            .columns
            .par_iter()
            .enumerate()
            .map(|(j, col)| scan_feature(col, j, &slot_of_row, g, h, &ctx, frontier.len()))
            .collect();
        let mut best: Vec<Option<Candidate<F>>> = vec![None; frontier.len()];
        for cands in &per_feature {
            for (b, c) in best.iter_mut().zip(cands) {
                *b = better(*b, *c);
            }
        }

        let mut next = Vec::new();
        let mut split_of_node: Vec<Option<(Candidate<F>, usize, usize)>> = vec![None; nodes.len()];
        for (k, &nd) in frontier.iter().enumerate() {
            match best[k] {
                Some(c) => {
                    let left = nodes.len();
                    nodes.push(Node::Leaf { weight: F::zero() });
                    nodes.push(Node::Leaf { weight: F::zero() });
                    nodes[nd] = Node::Split {
                        feature: c.feature,
                        threshold: c.threshold,
                        default_left: c.default_left,
                        left,
                        right: left + 1,
                    };
                    split_of_node[nd] = Some((c, left, left + 1));
                    next.push(left);
                    next.push(left + 1);
                }
                None => {
                    nodes[nd] = Node::Leaf {
                        weight: leaf_weight(fg[k], fh[k]),
                    };
                }
            }
        }
        // route rows: default branch first, then non-zero entries by threshold
        for nd in node_of_row.iter_mut() {
            if *nd != usize::MAX {
                if let Some(Some((c, l, r))) = split_of_node.get(*nd) {
                    *nd = if c.default_left { *l } else { *r };
                }
            }
        }
        let mut by_feature: Vec<Vec<usize>> = vec![Vec::new(); x.n_features()];
        for (nd, s) in split_of_node.iter().enumerate() {
            if let Some((c, _, _)) = s {
                by_feature[c.feature].push(nd);
            }
        }
        for (j, parents) in by_feature.iter().enumerate() {
            if parents.is_empty() {
                continue;
            }
            for &(r, v) in &x.columns[j] {
                let r = r as usize;
                let cur = node_of_row[r];
                if cur == usize::MAX {
                    continue;
                }
                for &p in parents {
                    if let Some((c, l, rr)) = split_of_node[p] {
                        if cur == l || cur == rr {
                            node_of_row[r] = if v < c.threshold { l } else { rr };
                        }
                    }
                }
            }
        }
        frontier = next;
    }
    (Tree { nodes }, node_of_row)
}

/// Fits a boosted ensemble to binary labels (`true` = positive class).
pub fn train_gbt<F: Scalar>(
    x: &FeatureColumns<F>,
    y: &[bool],
    params: &GbtParams,
    seed: u64,
) -> Result<(GbtModel<F>, TrainLog)> {
    if x.n_rows() != y.len() {
        return Err(Error::invalid(format!("{} rows but {} labels", x.n_rows(), y.len())));
    }
    if x.n_rows() == 0 || x.n_features() == 0 {
        return Err(Error::invalid("empty feature matrix"));
    }
    let n_pos = y.iter().filter(|&&b| b).count();
    let n_neg = y.len() - n_pos;
    if n_pos < 2 || n_neg < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 examples per class, got {n_pos} positive / {n_neg} negative"
        )));
    }
    if !(params.shrinkage > 0.0) || params.l2 < 0.0 || !(params.subsample > 0.0 && params.subsample <= 1.0) {
        return Err(Error::invalid("invalid boosting parameters"));
    }

    let n = y.len();
    let base_score = F::lit((n_pos as f64 / n_neg as f64).ln());
    let shrinkage = F::lit(params.shrinkage);
    let mut margin = vec![base_score; n];
    let mut g = vec![F::zero(); n];
    let mut h = vec![F::zero(); n];
    let mut log = TrainLog {
        loss: vec![mean_log_loss(&margin, y)],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tiny = F::lit(1e-16);
    let mut trees = Vec::with_capacity(params.rounds);

    for _ in 0..params.rounds {
        for i in 0..n {
            let p = sigmoid(margin[i]);
            g[i] = p - if y[i] { F::one() } else { F::zero() };
            h[i] = (p * (F::one() - p)).max(tiny);
        }
        let in_tree = if params.subsample < 1.0 {
            let k = ((n as f64 * params.subsample).round() as usize).clamp(1, n);
            let mut mask = vec![false; n];
            for i in sample(&mut rng, n, k) {
                mask[i] = true;
            }
            mask
        } else {
            vec![true; n]
        };
        let (tree, leaf_of_row) = build_tree(x, &g, &h, &in_tree, params);
        if in_tree.iter().all(|&b| b) {
            for i in 0..n {
                if let Node::Leaf { weight } = tree.nodes[leaf_of_row[i]] {
                    margin[i] = margin[i] + shrinkage * weight;
                }
            }
        } else {
            let rows = &x.columns;
            // rows outside the sample need a full evaluation
            let mut dense = vec![Vec::new(); n];
            for (j, col) in rows.iter().enumerate() {
                for &(r, v) in col {
                    dense[r as usize].push((j, v));
                }
            }
            for i in 0..n {
                let entries = &dense[i];
                let w = tree.eval(|j| match entries.binary_search_by_key(&j, |e| e.0) {
                    Ok(k) => entries[k].1,
                    Err(_) => F::zero(),
                });
                margin[i] = margin[i] + shrinkage * w;
            }
        }
        trees.push(tree);
        log.loss.push(mean_log_loss(&margin, y));
    }

    Ok((
        GbtModel {
            trees,
            shrinkage,
            base_score,
            n_features: x.n_features(),
        },
        log,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_feature(n: usize) -> (Vec<Vec<f64>>, Vec<bool>) {
        let xs: Vec<Vec<f64>> = (0..n).map(|i| vec![(i as f64 + 0.5) / n as f64]).collect();
        let ys = xs.iter().map(|r| r[0] >= 0.5).collect();
        (xs, ys)
    }

    #[test]
    fn separable_data_first_tree_is_perfect() {
        let (xs, ys) = one_feature(40);
        let cols = FeatureColumns::from_dense(&xs).unwrap();
        let params = GbtParams { rounds: 1, ..Default::default() };
        let (model, _) = train_gbt(&cols, &ys, &params, 0).unwrap();
        let acc = xs
            .iter()
            .zip(&ys)
            .filter(|(x, &y)| (model.predict_proba_dense(x).unwrap() >= 0.5) == y)
            .count();
        assert_eq!(acc, xs.len());
        match &model.trees[0].nodes[0] {
            Node::Split { feature, threshold, .. } => {
                assert_eq!(*feature, 0);
                assert!((*threshold - 0.5).abs() < 0.02);
            }
            other => panic!("root should split, got {other:?}"),
        }
    }

    #[test]
    fn rejects_degenerate_inputs() {
        let (xs, _) = one_feature(10);
        let cols = FeatureColumns::from_dense(&xs).unwrap();
        let all_true = vec![true; 10];
        assert!(train_gbt(&cols, &all_true, &GbtParams::default(), 0).is_err());
        let empty = FeatureColumns::<f64>::from_dense(&[]).unwrap();
        assert!(train_gbt(&empty, &[], &GbtParams::default(), 0).is_err());
    }

    #[test]
    fn zeros_follow_default_branch() {
        // positives are exactly the rows with a non-zero value
        let xs: Vec<Vec<f64>> = (0..20).map(|i| vec![if i % 2 == 0 { 0.0 } else { 3.0 + i as f64 }]).collect();
        let ys: Vec<bool> = (0..20).map(|i| i % 2 == 1).collect();
        let cols = FeatureColumns::from_dense(&xs).unwrap();
        let (model, log) = train_gbt(&cols, &ys, &GbtParams { rounds: 20, ..Default::default() }, 0).unwrap();
        for (x, &y) in xs.iter().zip(&ys) {
            assert_eq!(model.predict_proba_dense(x).unwrap() >= 0.5, y);
        }
        assert!(log.loss.windows(2).all(|w| w[1] <= w[0] + 1e-9));
    }

    #[test]
    fn text_roundtrip_and_column_check() {
        let (xs, ys) = one_feature(30);
        let cols = FeatureColumns::from_dense(&xs).unwrap();
        let (model, _) = train_gbt(&cols, &ys, &GbtParams { rounds: 5, ..Default::default() }, 0).unwrap();
        let mut buf = Vec::new();
        model.write_text(&mut buf).unwrap();
        let back = GbtModel::<f64>::read_text(buf.as_slice()).unwrap();
        assert_eq!(back, model);
        assert!(matches!(model.predict_proba_dense(&[0.1, 0.2]), Err(Error::ColumnMismatch { .. })));
    }

    #[test]
    fn works_in_f32() {
        let xs: Vec<Vec<f32>> = (0..40).map(|i| vec![i as f32]).collect();
        let ys: Vec<bool> = (0..40).map(|i| i >= 20).collect();
        let cols = FeatureColumns::from_dense(&xs).unwrap();
        let (model, _) = train_gbt(&cols, &ys, &GbtParams { rounds: 10, ..Default::default() }, 0).unwrap();
        assert!(model.predict_proba_dense(&[35.0]).unwrap() > 0.5);
        assert!(model.predict_proba_dense(&[3.0]).unwrap() < 0.5);
    }
}
