//! Sparse account-by-feature matrix built from term, profile, domain,
//! interaction-adjacency and stance-interaction blocks.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{AccountId, Corpus, TweetKind};
use crate::error::{Error, Result};
use crate::seeding::{LabelSet, Stance};

// ---- tokenization ----

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

fn is_regional_indicator(c: char) -> bool {
    ('\u{1F1E6}'..='\u{1F1FF}').contains(&c)
}

fn is_emoji(c: char) -> bool {
    matches!(c as u32,
        0x1F000..=0x1FAFF
        | 0x2600..=0x27BF
        | 0x2B00..=0x2BFF
        | 0x2300..=0x23FF
        | 0x00A9 | 0x00AE | 0x203C | 0x2049 | 0x2122 | 0x2139
        | 0x3030 | 0x303D | 0x3297 | 0x3299)
}

fn is_emoji_modifier(c: char) -> bool {
    matches!(c as u32, 0xFE0E | 0xFE0F | 0x1F3FB..=0x1F3FF | 0x20E3 | 0xE0020..=0xE007F)
}

/// Registrable domain of a host name: the last two labels, or three when
/// the second-level label is a common country-code registry prefix
/// (`gob.cl`, `co.uk`, ...).
pub fn registrable_domain(host: &str) -> Option<String> {
    let host = host.trim().trim_end_matches('.').to_lowercase();
    let labels: Vec<&str> = host.split('.').filter(|l| !l.is_empty()).collect();
    match labels.len() {
        0 => None,
        1 => Some(labels[0].to_string()),
        n => {
            let tld = labels[n - 1];
            let sld = labels[n - 2];
            let registry_sld = matches!(sld, "co" | "com" | "org" | "net" | "gob" | "gov" | "edu" | "ac" | "mil" | "nom");
            if n >= 3 && tld.len() == 2 && registry_sld {
                Some(labels[n - 3..].join("."))
            } else {
                Some(labels[n - 2..].join("."))
            }
        }
    }
}

/// Host part of a URL, tolerating a missing scheme.
pub fn url_host(url: &str) -> Option<&str> {
    let url = url.trim();
    let rest = match url.find("://") {
        Some(i) => &url[i + 3..],
        None => url,
    };
    let rest = rest.rsplit_once('@').map_or(rest, |(_, h)| h);
    let end = rest.find(['/', ':', '?', '#']).unwrap_or(rest.len());
    let host = &rest[..end];
    (!host.is_empty()).then_some(host)
}

fn looks_like_url(chunk: &str) -> bool {
    let lower = chunk.get(..8).unwrap_or(chunk).to_ascii_lowercase();
    lower.starts_with("http://") || lower.starts_with("https://") || lower.starts_with("www.")
}

/// Splits text into case-folded tokens: words, `#hashtags`, `@mentions`,
/// one token per emoji (flags and ZWJ sequences kept whole), and URLs
/// replaced by their registrable domain.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        if looks_like_url(chunk) {
            if let Some(d) = url_host(chunk).and_then(registrable_domain) {
                out.push(d);
            }
            continue;
        }
        let chars: Vec<char> = chunk.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            if (c == '#' || c == '@') && chars.get(i + 1).is_some_and(|&n| is_word_char(n)) {
                let start = i;
                i += 1;
                while i < chars.len() && is_word_char(chars[i]) {
                    i += 1;
                }
                out.push(chars[start..i].iter().collect::<String>().to_lowercase());
            } else if is_word_char(c) {
                let start = i;
                while i < chars.len() && is_word_char(chars[i]) {
                    i += 1;
                }
                out.push(chars[start..i].iter().collect::<String>().to_lowercase());
            } else if is_regional_indicator(c) {
                let start = i;
                i += 1;
                if chars.get(i).is_some_and(|&n| is_regional_indicator(n)) {
                    i += 1;
                }
                out.push(chars[start..i].iter().collect());
            } else if is_emoji(c) {
                let start = i;
                i += 1;
                loop {
                    match chars.get(i) {
                        Some(&m) if is_emoji_modifier(m) => i += 1,
                        Some('\u{200D}') if chars.get(i + 1).is_some_and(|&n| is_emoji(n)) => i += 2,
                        _ => break,
                    }
                }
                out.push(chars[start..i].iter().collect());
            } else {
                i += 1;
            }
        }
    }
    out
}

/// Normalizes a hashtag from the structured `hashtags` field to token form.
pub fn hashtag_token(tag: &str) -> String {
    let tag = tag.trim();
    if tag.starts_with('#') {
        tag.to_lowercase()
    } else {
        format!("#{}", tag.to_lowercase())
    }
}

/// All content tokens an account produced: tokens of every authored text
/// plus the structured hashtags, once per tweet occurrence.
pub(crate) fn tweet_tokens(text: &str, hashtags: &[String]) -> Vec<String> {
    let mut toks = tokenize(text);
    let in_text: HashSet<String> = toks.iter().filter(|t| t.starts_with('#')).cloned().collect();
    for h in hashtags {
        let h = hashtag_token(h);
        if h.len() > 1 && !in_text.contains(&h) {
            toks.push(h);
        }
    }
    toks
}

// ---- sparse matrix ----

/// Compressed sparse row matrix of non-negative integer counts.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct SparseMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<u32>,
    pub values: Vec<u32>,
}

impl SparseMatrix {
    /// Builds from per-row maps of column -> count; zero counts dropped.
    pub fn from_rows(n_cols: usize, rows: &[BTreeMap<u32, u32>]) -> Self {
        let mut m = SparseMatrix {
            n_rows: rows.len(),
            n_cols,
            indptr: Vec::with_capacity(rows.len() + 1),
            ..Default::default()
        };
        m.indptr.push(0);
        for row in rows {
            for (&c, &v) in row {
                if v > 0 {
                    m.indices.push(c);
                    m.values.push(v);
                }
            }
            m.indptr.push(m.indices.len());
        }
        m
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, u32)> + '_ {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        self.indices[a..b].iter().zip(&self.values[a..b]).map(|(&c, &v)| (c as usize, v))
    }

    pub fn get(&self, i: usize, j: usize) -> u32 {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        match self.indices[a..b].binary_search(&(j as u32)) {
            Ok(k) => self.values[a + k],
            Err(_) => 0,
        }
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.row(i).map(|(_, v)| v as u64).sum()
    }

    pub fn column_sums(&self) -> Vec<u64> {
        let mut out = vec![0u64; self.n_cols];
        for (&c, &v) in self.indices.iter().zip(&self.values) {
            out[c as usize] += v as u64;
        }
        out
    }

    /// Keeps the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> SparseMatrix {
        let mut m = SparseMatrix {
            n_rows: rows.len(),
            n_cols: self.n_cols,
            indptr: vec![0],
            ..Default::default()
        };
        for &r in rows {
            let (a, b) = (self.indptr[r], self.indptr[r + 1]);
            m.indices.extend_from_slice(&self.indices[a..b]);
            m.values.extend_from_slice(&self.values[a..b]);
            m.indptr.push(m.indices.len());
        }
        m
    }

    /// Horizontal concatenation keeping, for each input, only the columns
    /// listed in `keep[i]` (in order).
    fn hstack_selected(parts: &[(&SparseMatrix, &[usize])]) -> SparseMatrix {
        let n_rows = parts.first().map_or(0, |(m, _)| m.n_rows);
        let mut remaps = Vec::with_capacity(parts.len());
        let mut offset = 0u32;
        for (m, keep) in parts {
            let mut remap = vec![u32::MAX; m.n_cols];
            for (new, &old) in keep.iter().enumerate() {
                remap[old] = offset + new as u32;
            }
            offset += keep.len() as u32;
            remaps.push(remap);
        }
        let mut out = SparseMatrix {
            n_rows,
            n_cols: offset as usize,
            indptr: vec![0],
            ..Default::default()
        };
        for i in 0..n_rows {
            for ((m, _), remap) in parts.iter().zip(&remaps) {
                let mut row: Vec<(u32, u32)> = m
                    .row(i)
                    .filter_map(|(c, v)| (remap[c] != u32::MAX).then_some((remap[c], v)))
                    .collect();
                row.sort_unstable();
                for (c, v) in row {
                    out.indices.push(c);
                    out.values.push(v);
                }
            }
            out.indptr.push(out.indices.len());
        }
        out
    }
}

// ---- blocks ----

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    AccountTerm,
    ProfileTerm,
    ProfileDomain,
    AdjRetweet,
    AdjReply,
    AdjQuote,
    StanceInterRetweet,
    StanceInterReply,
    StanceInterQuote,
}

impl BlockKind {
    pub const ALL: [BlockKind; 9] = [
        BlockKind::AccountTerm,
        BlockKind::ProfileTerm,
        BlockKind::ProfileDomain,
        BlockKind::AdjRetweet,
        BlockKind::AdjReply,
        BlockKind::AdjQuote,
        BlockKind::StanceInterRetweet,
        BlockKind::StanceInterReply,
        BlockKind::StanceInterQuote,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BlockKind::AccountTerm => "account_term",
            BlockKind::ProfileTerm => "profile_term",
            BlockKind::ProfileDomain => "profile_domain",
            BlockKind::AdjRetweet => "adj_retweet",
            BlockKind::AdjReply => "adj_reply",
            BlockKind::AdjQuote => "adj_quote",
            BlockKind::StanceInterRetweet => "stance_inter_retweet",
            BlockKind::StanceInterReply => "stance_inter_reply",
            BlockKind::StanceInterQuote => "stance_inter_quote",
        }
    }

    pub fn is_term_block(self) -> bool {
        matches!(self, BlockKind::AccountTerm | BlockKind::ProfileTerm)
    }

    fn interaction(self) -> Option<TweetKind> {
        match self {
            BlockKind::AdjRetweet | BlockKind::StanceInterRetweet => Some(TweetKind::Retweet),
            BlockKind::AdjReply | BlockKind::StanceInterReply => Some(TweetKind::Reply),
            BlockKind::AdjQuote | BlockKind::StanceInterQuote => Some(TweetKind::Quote),
            _ => None,
        }
    }
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BlockKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        BlockKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown feature block `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureParams {
    /// Minimum number of accounts using a term for it to become a column.
    pub min_df: usize,
    /// Minimum number of interactions received for an account to become an
    /// adjacency column.
    pub min_target_count: usize,
}

impl Default for FeatureParams {
    fn default() -> Self {
        FeatureParams {
            min_df: 5,
            min_target_count: 2,
        }
    }
}

/// Column names of one block with their document frequencies.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    pub block: BlockKind,
    pub tokens: Vec<String>,
    /// Number of rows with a non-zero count in each column.
    pub doc_freq: Vec<usize>,
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.tokens.iter().position(|t| t == token)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBlock {
    pub row_ids: Vec<AccountId>,
    pub vocab: Vocabulary,
    pub matrix: SparseMatrix,
}

/// Builds a block from per-row token counts, keeping tokens with document
/// frequency at least `min_df`. Columns are ordered by `order`.
fn block_from_counts<K: Ord + Clone + ToString>(
    kind: BlockKind,
    row_ids: Vec<AccountId>,
    rows: Vec<HashMap<K, u32>>,
    keep: impl Fn(&K, usize) -> bool,
) -> FeatureBlock {
    let mut df: BTreeMap<K, usize> = BTreeMap::new();
    for row in &rows {
        for k in row.keys() {
            *df.entry(k.clone()).or_default() += 1;
        }
    }
    df.retain(|k, &mut n| keep(k, n));
    let index: BTreeMap<&K, u32> = df.keys().enumerate().map(|(i, k)| (k, i as u32)).collect();
    let sparse_rows: Vec<BTreeMap<u32, u32>> = rows
        .iter()
        .map(|row| {
            row.iter()
                .filter_map(|(k, &v)| index.get(k).map(|&c| (c, v)))
                .collect()
        })
        .collect();
    let matrix = SparseMatrix::from_rows(df.len(), &sparse_rows);
    FeatureBlock {
        row_ids,
        vocab: Vocabulary {
            block: kind,
            tokens: df.keys().map(ToString::to_string).collect(),
            doc_freq: df.values().copied().collect(),
        },
        matrix,
    }
}

pub fn build_block(corpus: &Corpus, labels: &LabelSet, kind: BlockKind, params: &FeatureParams) -> FeatureBlock {
    let row_ids = corpus.account_ids();
    let row_of: HashMap<AccountId, usize> = row_ids.iter().enumerate().map(|(i, &a)| (a, i)).collect();
    let n = row_ids.len();

    match kind {
        BlockKind::AccountTerm => {
            let mut rows: Vec<HashMap<String, u32>> = vec![HashMap::new(); n];
            for t in &corpus.tweets {
                let row = &mut rows[row_of[&t.author_id]];
                for tok in tweet_tokens(&t.text, &t.hashtags) {
                    *row.entry(tok).or_default() += 1;
                }
            }
            block_from_counts(kind, row_ids, rows, |_, df| df >= params.min_df)
        }
        BlockKind::ProfileTerm => {
            let rows = corpus
                .accounts
                .values()
                .map(|a| {
                    let mut row: HashMap<String, u32> = HashMap::new();
                    for tok in tokenize(&a.full_name).into_iter().chain(tokenize(&a.bio)) {
                        *row.entry(tok).or_default() += 1;
                    }
                    row
                })
                .collect();
            block_from_counts(kind, row_ids, rows, |_, df| df >= params.min_df)
        }
        BlockKind::ProfileDomain => {
            let rows = corpus
                .accounts
                .values()
                .map(|a| {
                    let mut row = HashMap::new();
                    if let Some(domain) = a.home_url.as_deref().and_then(url_host).and_then(registrable_domain) {
                        if let Some((_, tld)) = domain.rsplit_once('.') {
                            row.insert(format!(".{tld}"), 1);
                        }
                        row.insert(domain, 1);
                    }
                    row
                })
                .collect();
            block_from_counts(kind, row_ids, rows, |_, _| true)
        }
        BlockKind::AdjRetweet | BlockKind::AdjReply | BlockKind::AdjQuote => {
            let ik = kind.interaction().expect("adjacency block");
            let mut received: HashMap<AccountId, usize> = HashMap::new();
            let mut rows: Vec<HashMap<AccountId, u32>> = vec![HashMap::new(); n];
            for t in corpus.tweets.iter().filter(|t| t.kind == ik) {
                let target = t.target_account_id.expect("interaction has target");
                *received.entry(target).or_default() += 1;
                *rows[row_of[&t.author_id]].entry(target).or_default() += 1;
            }
            let min = params.min_target_count;
            block_from_counts(kind, row_ids, rows, |k, _| received[k] >= min)
        }
        BlockKind::StanceInterRetweet | BlockKind::StanceInterReply | BlockKind::StanceInterQuote => {
            let ik = kind.interaction().expect("stance block");
            let mut rows: Vec<BTreeMap<u32, u32>> = vec![BTreeMap::new(); n];
            for t in corpus.tweets.iter().filter(|t| t.kind == ik) {
                let target = t.target_account_id.expect("interaction has target");
                if let Some(label) = labels.get(target) {
                    let col = match label.stance {
                        Stance::Apruebo => 0,
                        Stance::Rechazo => 1,
                    };
                    *rows[row_of[&t.author_id]].entry(col).or_default() += 1;
                }
            }
            let matrix = SparseMatrix::from_rows(2, &rows);
            let doc_freq = (0..2)
                .map(|c| (0..n).filter(|&i| matrix.get(i, c) > 0).count())
                .collect();
            FeatureBlock {
                row_ids,
                vocab: Vocabulary {
                    block: kind,
                    tokens: vec![Stance::Apruebo.as_str().into(), Stance::Rechazo.as_str().into()],
                    doc_freq,
                },
                matrix,
            }
        }
    }
}

/// Builds all nine blocks in their canonical order.
pub fn build_all_blocks(corpus: &Corpus, labels: &LabelSet, params: &FeatureParams) -> Vec<FeatureBlock> {
    BlockKind::ALL
        .par_iter()
        .map(|&k| build_block(corpus, labels, k, params))
        .collect()
}

// ---- assembled matrix ----

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpan {
    pub kind: BlockKind,
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub row_ids: Vec<AccountId>,
    /// Column names, without the block prefix.
    pub columns: Vec<String>,
    pub blocks: Vec<BlockSpan>,
    pub matrix: SparseMatrix,
}

impl FeatureMatrix {
    pub fn n_rows(&self) -> usize {
        self.matrix.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.matrix.n_cols
    }

    pub fn block_of(&self, col: usize) -> Option<BlockKind> {
        self.blocks.iter().find(|b| b.start <= col && col < b.end).map(|b| b.kind)
    }

    /// `block:name` label of a column.
    pub fn column_label(&self, col: usize) -> String {
        match self.block_of(col) {
            Some(b) => format!("{}:{}", b, self.columns[col]),
            None => self.columns[col].clone(),
        }
    }

    pub fn row_index(&self) -> HashMap<AccountId, usize> {
        self.row_ids.iter().enumerate().map(|(i, &a)| (a, i)).collect()
    }

    pub fn span(&self, kind: BlockKind) -> Option<&BlockSpan> {
        self.blocks.iter().find(|b| b.kind == kind)
    }
}

/// Concatenates blocks, dropping seed-term columns from the term blocks.
pub fn assemble_features(blocks: &[FeatureBlock], seed_terms: &BTreeSet<String>) -> Result<FeatureMatrix> {
    let row_ids = blocks.first().map(|b| b.row_ids.clone()).unwrap_or_default();
    for b in blocks {
        if b.matrix.n_rows != row_ids.len() || b.row_ids != row_ids {
            return Err(Error::invalid(format!(
                "block {} has {} rows, expected {} in canonical order",
                b.vocab.block,
                b.matrix.n_rows,
                row_ids.len()
            )));
        }
    }
    let keeps: Vec<Vec<usize>> = blocks
        .iter()
        .map(|b| {
            (0..b.vocab.len())
                .filter(|&c| !(b.vocab.block.is_term_block() && seed_terms.contains(&b.vocab.tokens[c])))
                .collect()
        })
        .collect();
    let parts: Vec<(&SparseMatrix, &[usize])> = blocks.iter().zip(&keeps).map(|(b, k)| (&b.matrix, k.as_slice())).collect();
    let matrix = SparseMatrix::hstack_selected(&parts);

    let mut columns = Vec::with_capacity(matrix.n_cols);
    let mut spans = Vec::with_capacity(blocks.len());
    for (b, keep) in blocks.iter().zip(&keeps) {
        let start = columns.len();
        columns.extend(keep.iter().map(|&c| b.vocab.tokens[c].clone()));
        spans.push(BlockSpan {
            kind: b.vocab.block,
            start,
            end: columns.len(),
        });
    }
    let mut matrix = matrix;
    matrix.n_rows = row_ids.len();
    Ok(FeatureMatrix {
        row_ids,
        columns,
        blocks: spans,
        matrix,
    })
}

// ---- persistence ----
//
// Triplet file layout:
//   %%botstance-sparse v1
//   %rows <n> cols <m> nnz <k>
//   %block <name> <start> <end>        (one per block)
//   <row> <col> <value>                (0-based, row-major order)
//
// Row ids and column names are stored as CSV side files.

pub fn write_triplets<W: Write>(fm: &FeatureMatrix, mut out: W) -> std::io::Result<()> {
    let m = &fm.matrix;
    writeln!(out, "%%botstance-sparse v1")?;
    writeln!(out, "%rows {} cols {} nnz {}", m.n_rows, m.n_cols, m.nnz())?;
    for b in &fm.blocks {
        writeln!(out, "%block {} {} {}", b.kind, b.start, b.end)?;
    }
    for i in 0..m.n_rows {
        for (c, v) in m.row(i) {
            writeln!(out, "{i} {c} {v}")?;
        }
    }
    out.flush()
}

pub fn write_rows_csv<W: Write>(fm: &FeatureMatrix, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["row", "account_id"])?;
    for (i, a) in fm.row_ids.iter().enumerate() {
        w.write_record([i.to_string(), a.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("feature rows", e))?;
    Ok(())
}

pub fn write_columns_csv<W: Write>(fm: &FeatureMatrix, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["col", "block", "name"])?;
    for (c, name) in fm.columns.iter().enumerate() {
        let block = fm.block_of(c).map_or("", BlockKind::as_str);
        w.write_record([c.to_string().as_str(), block, name])?;
    }
    w.flush().map_err(|e| Error::io("feature columns", e))?;
    Ok(())
}

fn fmt_err(detail: impl Into<String>) -> Error {
    Error::Format {
        what: "sparse triplet file",
        detail: detail.into(),
    }
}

pub fn read_feature_matrix<R1: BufRead, R2: std::io::Read, R3: std::io::Read>(
    triplets: R1,
    rows_csv: R2,
    columns_csv: R3,
) -> Result<FeatureMatrix> {
    let mut lines = triplets.lines();
    let mut next = || -> Result<Option<String>> { lines.next().transpose().map_err(|e| Error::io("triplets", e)) };
    if next()?.as_deref() != Some("%%botstance-sparse v1") {
        return Err(fmt_err("missing header"));
    }
    let dims = next()?.ok_or_else(|| fmt_err("missing dimensions"))?;
    let parts: Vec<&str> = dims.split_whitespace().collect();
    let (n_rows, n_cols, nnz) = match parts.as_slice() {
        ["%rows", r, "cols", c, "nnz", z] => (
            r.parse::<usize>().map_err(|e| fmt_err(e.to_string()))?,
            c.parse::<usize>().map_err(|e| fmt_err(e.to_string()))?,
            z.parse::<usize>().map_err(|e| fmt_err(e.to_string()))?,
        ),
        _ => return Err(fmt_err(format!("bad dimension line `{dims}`"))),
    };
    let mut blocks = Vec::new();
    let mut rows: Vec<BTreeMap<u32, u32>> = vec![BTreeMap::new(); n_rows];
    let mut seen = 0usize;
    while let Some(line) = next()? {
        if let Some(rest) = line.strip_prefix("%block ") {
            let p: Vec<&str> = rest.split_whitespace().collect();
            if p.len() != 3 {
                return Err(fmt_err(format!("bad block line `{line}`")));
            }
            blocks.push(BlockSpan {
                kind: p[0].parse()?,
                start: p[1].parse().map_err(|_| fmt_err(line.clone()))?,
                end: p[2].parse().map_err(|_| fmt_err(line.clone()))?,
            });
            continue;
        }
        let p: Vec<usize> = line
            .split_whitespace()
            .map(|x| x.parse().map_err(|_| fmt_err(format!("bad triplet `{line}`"))))
            .collect::<Result<_>>()?;
        match p.as_slice() {
            &[r, c, v] if r < n_rows && c < n_cols => {
                rows[r].insert(c as u32, v as u32);
                seen += 1;
            }
            _ => return Err(fmt_err(format!("triplet out of range `{line}`"))),
        }
    }
    if seen != nnz {
        return Err(fmt_err(format!("expected {nnz} entries, found {seen}")));
    }
    let matrix = SparseMatrix::from_rows(n_cols, &rows);

    let mut row_ids = vec![AccountId(0); n_rows];
    for rec in csv::Reader::from_reader(rows_csv).records() {
        let rec = rec?;
        let i: usize = rec[0].parse().map_err(|_| fmt_err("bad row index"))?;
        *row_ids.get_mut(i).ok_or_else(|| fmt_err("row index out of range"))? =
            rec[1].parse().map_err(|_| fmt_err("bad account id"))?;
    }
    let mut columns = vec![String::new(); n_cols];
    for rec in csv::Reader::from_reader(columns_csv).records() {
        let rec = rec?;
        let c: usize = rec[0].parse().map_err(|_| fmt_err("bad column index"))?;
        *columns.get_mut(c).ok_or_else(|| fmt_err("column index out of range"))? = rec[2].to_string();
    }
    Ok(FeatureMatrix {
        row_ids,
        columns,
        blocks,
        matrix,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_basic_rules() {
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("Voto #Apruebo 🇨🇱"), vec!["voto", "#apruebo", "🇨🇱"]);
        assert_eq!(tokenize("@Juan: ¡Dignidad!"), vec!["@juan", "dignidad"]);
        assert_eq!(
            tokenize("ver https://www.Emol.com/noticias?id=3 ya"),
            vec!["ver", "emol.com", "ya"]
        );
        assert_eq!(tokenize("👍🏽👍"), vec!["👍🏽", "👍"]);
        assert_eq!(tokenize("# suelto"), vec!["suelto"]);
    }

    #[test]
    fn registrable_domains() {
        assert_eq!(registrable_domain("blog.example.com").as_deref(), Some("example.com"));
        assert_eq!(registrable_domain("www.minsal.gob.cl").as_deref(), Some("minsal.gob.cl"));
        assert_eq!(registrable_domain("twitter.com").as_deref(), Some("twitter.com"));
        assert_eq!(url_host("https://blog.example.com/x"), Some("blog.example.com"));
        assert_eq!(url_host("example.org:8080/a"), Some("example.org"));
    }

    #[test]
    fn unknown_block_name_rejected() {
        assert!("adj_like".parse::<BlockKind>().is_err());
        assert_eq!("adj_quote".parse::<BlockKind>().unwrap(), BlockKind::AdjQuote);
    }

    #[test]
    fn hstack_drops_requested_columns() {
        let a = SparseMatrix::from_rows(3, &[BTreeMap::from([(0, 1), (2, 5)]), BTreeMap::from([(1, 2)])]);
        let b = SparseMatrix::from_rows(1, &[BTreeMap::from([(0, 7)]), BTreeMap::new()]);
        let m = SparseMatrix::hstack_selected(&[(&a, &[0, 2]), (&b, &[0])]);
        assert_eq!(m.n_cols, 3);
        assert_eq!((m.get(0, 0), m.get(0, 1), m.get(0, 2)), (1, 5, 7));
        assert_eq!(m.row_sum(1), 0);
    }
}
