//! Contextualized embedding matrix (CE): the frozen decoder vocabulary.
//!
//! Every target-token occurrence in the corpus is encoded in its document context,
//! the occurrences of each token are compressed to at most `k` centroids, and each
//! centroid becomes a decoder row. Ground-truth targets are remapped from token ids
//! to the row of the cluster their occurrence fell into.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, TargetMode, TokenId, Vocab, MAX_INPUT_TOKENS};
use crate::embedder::{ByteReader, ContextualOccurrence, EmbedderParams};
use crate::error::{Error, Result};
use crate::kmeans;
use crate::linalg::{mix_seed, Matrix};

pub const DEFAULT_K: usize = 5;
pub const DEFAULT_KMEANS_ITERS: usize = 50;

/// Special tokens that get exactly one frozen row, in row order.
pub const SPECIAL_TOKENS: [TokenId; 3] = [TokenId::BOS, TokenId::EOS, TokenId::PAD];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextMode {
    #[default]
    TitlePlusContent,
    /// Encode the target alone ("short" CE).
    TitleOnly,
}

impl FromStr for ContextMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "title_plus_content" | "title+content" => Ok(Self::TitlePlusContent),
            "title_only" | "title" => Ok(Self::TitleOnly),
            other => Err(Error::invalid(format!("unknown context mode {other:?}"))),
        }
    }
}

impl fmt::Display for ContextMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::TitlePlusContent => "title_plus_content",
            Self::TitleOnly => "title_only",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CeConfig {
    pub k_clusters: usize,
    pub kmeans_iters: usize,
    pub kmeans_seed: u64,
    pub context_mode: ContextMode,
    pub target_mode: TargetMode,
}

impl Default for CeConfig {
    fn default() -> Self {
        Self {
            k_clusters: DEFAULT_K,
            kmeans_iters: DEFAULT_KMEANS_ITERS,
            kmeans_seed: 0,
            context_mode: ContextMode::TitlePlusContent,
            target_mode: TargetMode::Title,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CeMatrix {
    tokens: Vec<TokenId>,
    vectors: Matrix,
    token_to_rows: BTreeMap<TokenId, Vec<usize>>,
}

impl CeMatrix {
    fn from_rows(rows: Vec<(TokenId, Vec<f64>)>, dim: usize) -> Self {
        let mut tokens = Vec::with_capacity(rows.len());
        let mut data = Vec::with_capacity(rows.len() * dim);
        let mut token_to_rows: BTreeMap<TokenId, Vec<usize>> = BTreeMap::new();
        for (r, (token, v)) in rows.into_iter().enumerate() {
            tokens.push(token);
            data.extend(v);
            token_to_rows.entry(token).or_default().push(r);
        }
        Self {
            vectors: Matrix::from_vec(tokens.len(), dim, data),
            tokens,
            token_to_rows,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        self.vectors.row(r)
    }

    pub fn row_token(&self, r: usize) -> TokenId {
        self.tokens[r]
    }

    pub fn vectors(&self) -> &Matrix {
        &self.vectors
    }

    /// Decoder rows of a token; empty when the token never occurs in a target.
    pub fn rows_of(&self, token: TokenId) -> &[usize] {
        self.token_to_rows.get(&token).map_or(&[], Vec::as_slice)
    }

    pub fn token_to_rows(&self) -> &BTreeMap<TokenId, Vec<usize>> {
        &self.token_to_rows
    }

    pub fn bos_row(&self) -> usize {
        self.rows_of(TokenId::BOS)[0]
    }

    pub fn eos_row(&self) -> usize {
        self.rows_of(TokenId::EOS)[0]
    }

    /// A CE with exactly one given row per token, in token order.
    pub fn from_token_table(entries: Vec<(TokenId, Vec<f64>)>) -> Result<Self> {
        let dim = entries.first().map_or(0, |(_, v)| v.len());
        let mut entries = entries;
        entries.sort_by_key(|(t, _)| *t);
        if entries.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::invalid("duplicate token in table"));
        }
        let ce = Self::from_rows(entries, dim);
        ce.validate()?;
        Ok(ce)
    }

    fn validate(&self) -> Result<()> {
        for s in SPECIAL_TOKENS {
            if self.rows_of(s).len() != 1 {
                return Err(Error::invalid(format!(
                    "special token {s} must have exactly one row"
                )));
            }
        }
        let mut seen = vec![false; self.len()];
        for (token, rows) in &self.token_to_rows {
            for &r in rows {
                if r >= self.len() || seen[r] || self.tokens[r] != *token {
                    return Err(Error::invalid("token_to_rows does not partition the rows"));
                }
                seen[r] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::invalid("row missing from token_to_rows"));
        }
        if !self.vectors.is_finite() {
            return Err(Error::Numeric("non-finite CE row".into()));
        }
        Ok(())
    }
}

/// Decoder row chosen for every (doc ordinal, target position).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClusterAssignment {
    map: BTreeMap<(usize, usize), usize>,
}

impl ClusterAssignment {
    pub fn get(&self, doc: usize, position: usize) -> Option<usize> {
        self.map.get(&(doc, position)).copied()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.map.iter().map(|(&(d, p), &r)| (d, p, r))
    }

    /// Decoder rows of a document's target followed by the `EOS` row.
    pub fn target_rows(&self, ce: &CeMatrix, doc: usize, body_len: usize) -> Result<Vec<usize>> {
        let mut rows = Vec::with_capacity(body_len + 1);
        for p in 0..body_len {
            rows.push(self.get(doc, p).ok_or_else(|| {
                Error::invalid(format!("no decoder row assigned to doc {doc} position {p}"))
            })?);
        }
        rows.push(ce.eos_row());
        Ok(rows)
    }
}

/// Encodes every target position of every document in its context.
pub fn collect_occurrences(
    corpus: &Corpus,
    vocab: &Vocab,
    embedder: &EmbedderParams,
    config: &CeConfig,
) -> Result<Vec<ContextualOccurrence>> {
    let per_doc: Vec<Result<Vec<ContextualOccurrence>>> = (0..corpus.len())
        .into_par_iter()
        .map(|ordinal| {
            let target = vocab.target(corpus, ordinal, config.target_mode);
            let context = match config.context_mode {
                ContextMode::TitleOnly => Vec::new(),
                ContextMode::TitlePlusContent => {
                    vocab.content_window(corpus.doc(ordinal), MAX_INPUT_TOKENS)
                }
            };
            embedder.embed_target_in_context(target.body(), &context, ordinal)
        })
        .collect();
    let mut out = Vec::new();
    for r in per_doc {
        out.extend(r?);
    }
    Ok(out)
}

/// Clusters the occurrences of a single token.
pub fn cluster_token(
    occurrences: &[&ContextualOccurrence],
    k: usize,
    iters: usize,
    seed: u64,
) -> Result<kmeans::Clustering> {
    let first = occurrences
        .first()
        .ok_or_else(|| Error::invalid("no occurrences to cluster"))?;
    if occurrences.iter().any(|o| o.token != first.token) {
        return Err(Error::invalid(
            "occurrences of different tokens passed to cluster_token",
        ));
    }
    let points: Vec<Vec<f64>> = occurrences.iter().map(|o| o.vector.clone()).collect();
    kmeans::cluster(&points, k, iters, seed)
}

pub fn build_ce(
    corpus: &Corpus,
    vocab: &Vocab,
    embedder: &EmbedderParams,
    config: &CeConfig,
) -> Result<(CeMatrix, ClusterAssignment)> {
    let occurrences = collect_occurrences(corpus, vocab, embedder, config)?;
    let specials = SPECIAL_TOKENS
        .iter()
        .map(|&t| (t, embedder.special_row(t)))
        .collect();
    build_ce_from_occurrences(&occurrences, specials, config)
}

/// Builds the CE from precomputed occurrences (e.g. an imported embedding dump).
pub fn build_ce_from_occurrences(
    occurrences: &[ContextualOccurrence],
    specials: Vec<(TokenId, Vec<f64>)>,
    config: &CeConfig,
) -> Result<(CeMatrix, ClusterAssignment)> {
    if config.k_clusters == 0 {
        return Err(Error::invalid("k_clusters must be at least 1"));
    }
    let dim = specials
        .first()
        .map(|(_, v)| v.len())
        .ok_or_else(|| Error::invalid("special rows are required"))?;
    if let Some(o) = occurrences.iter().find(|o| o.vector.len() != dim) {
        return Err(Error::invalid(format!(
            "occurrence of dim {} does not match dim {dim}",
            o.vector.len()
        )));
    }
    let mut by_token: BTreeMap<TokenId, Vec<&ContextualOccurrence>> = BTreeMap::new();
    for o in occurrences {
        if SPECIAL_TOKENS.contains(&o.token) {
            return Err(Error::invalid(format!(
                "special token {} occurs in a target",
                o.token
            )));
        }
        by_token.entry(o.token).or_default().push(o);
    }
    let groups: Vec<(TokenId, Vec<&ContextualOccurrence>)> = by_token.into_iter().collect();
    let clustered: Vec<Result<kmeans::Clustering>> = groups
        .par_iter()
        .map(|(token, occs)| {
            cluster_token(
                occs,
                config.k_clusters,
                config.kmeans_iters,
                mix_seed(config.kmeans_seed, token.0 as u64),
            )
        })
        .collect();

    let mut rows: Vec<(TokenId, Vec<f64>)> = specials;
    let mut assignment = ClusterAssignment::default();
    for ((token, occs), clustering) in groups.iter().zip(clustered) {
        let clustering = clustering?;
        let base = rows.len();
        for c in clustering.centroids {
            rows.push((*token, c));
        }
        for (o, a) in occs.iter().zip(&clustering.assignments) {
            if assignment
                .map
                .insert((o.doc, o.position), base + a)
                .is_some()
            {
                return Err(Error::invalid(format!(
                    "two occurrences at doc {} position {}",
                    o.doc, o.position
                )));
            }
        }
    }
    let ce = CeMatrix::from_rows(rows, dim);
    ce.validate()?;
    Ok((ce, assignment))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StorageReport {
    pub rows: usize,
    pub dim: usize,
    pub bytes: u64,
    pub total_occurrences: u64,
    pub distinct_tokens: u64,
    /// `rows / total_occurrences`: footprint relative to storing every occurrence.
    pub ratio_vs_all: f64,
    /// `rows / distinct_tokens`: footprint relative to one row per token (k = 1).
    pub ratio_vs_k1: f64,
}

impl StorageReport {
    pub fn from_counts(
        rows: usize,
        dim: usize,
        total_occurrences: u64,
        distinct_tokens: u64,
    ) -> Self {
        Self {
            rows,
            dim,
            bytes: rows as u64 * dim as u64 * 4,
            total_occurrences,
            distinct_tokens,
            ratio_vs_all: rows as f64 / total_occurrences as f64,
            ratio_vs_k1: rows as f64 / distinct_tokens as f64,
        }
    }

    pub fn gigabytes(&self) -> f64 {
        self.bytes as f64 / 1e9
    }
}

impl fmt::Display for StorageReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "rows\t{}", self.rows)?;
        writeln!(f, "dim\t{}", self.dim)?;
        writeln!(f, "bytes\t{}", self.bytes)?;
        writeln!(f, "gigabytes\t{:.4}", self.gigabytes())?;
        writeln!(f, "occurrences\t{}", self.total_occurrences)?;
        writeln!(f, "distinct_tokens\t{}", self.distinct_tokens)?;
        writeln!(f, "ratio_vs_all\t{:.6}", self.ratio_vs_all)?;
        write!(f, "ratio_vs_k1\t{:.6}", self.ratio_vs_k1)
    }
}

pub fn storage_report(ce: &CeMatrix, assignment: &ClusterAssignment) -> StorageReport {
    StorageReport::from_counts(
        ce.len(),
        ce.dim(),
        assignment.len() as u64,
        ce.token_to_rows().len() as u64,
    )
}

/// Lists, for every decoder row of `surface`, the occurrences assigned to it.
pub fn dump_clusters(
    ce: &CeMatrix,
    assignment: &ClusterAssignment,
    corpus: &Corpus,
    vocab: &Vocab,
    surface: &str,
) -> Result<String> {
    let token = vocab
        .id(surface)
        .ok_or_else(|| Error::invalid(format!("token {surface:?} is not in the vocabulary")))?;
    let rows = ce.rows_of(token);
    if rows.is_empty() || SPECIAL_TOKENS.contains(&token) {
        return Err(Error::invalid(format!(
            "token {surface:?} does not occur in any target"
        )));
    }
    let mut members: BTreeMap<usize, Vec<(usize, usize)>> =
        rows.iter().map(|&r| (r, Vec::new())).collect();
    for (doc, pos, row) in assignment.iter() {
        if let Some(m) = members.get_mut(&row) {
            m.push((doc, pos));
        }
    }
    let mut out = String::new();
    for (row, occ) in members {
        out.push_str(&format!("row {row}\t{} occurrences\n", occ.len()));
        for (doc, pos) in occ {
            let d = corpus.doc(doc);
            out.push_str(&format!("  {}\t{}\t{}\n", d.doc_id, pos, d.title));
        }
    }
    Ok(out)
}

const CE_MAGIC: &[u8; 5] = b"NPCE1";
const ASSIGN_MAGIC: &[u8; 7] = b"NPASGN1";

/// Path of the cluster-assignment file stored next to a CE file.
pub fn assignment_path(ce_path: &Path) -> PathBuf {
    let mut s = ce_path.as_os_str().to_owned();
    s.push(".assign");
    PathBuf::from(s)
}

pub fn save_ce(
    path: impl AsRef<Path>,
    ce: &CeMatrix,
    assignment: &ClusterAssignment,
) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    buf.extend_from_slice(CE_MAGIC);
    buf.extend_from_slice(&(ce.dim() as u32).to_le_bytes());
    buf.extend_from_slice(&(ce.len() as u32).to_le_bytes());
    for r in 0..ce.len() {
        buf.extend_from_slice(&ce.row_token(r).0.to_le_bytes());
        for &v in ce.row(r) {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    buf.extend_from_slice(&(ce.token_to_rows.len() as u32).to_le_bytes());
    for (token, rows) in &ce.token_to_rows {
        buf.extend_from_slice(&token.0.to_le_bytes());
        buf.extend_from_slice(&(rows.len() as u32).to_le_bytes());
        for &r in rows {
            buf.extend_from_slice(&(r as u32).to_le_bytes());
        }
    }
    fs::write(path, &buf).map_err(|e| Error::io(path, e))?;

    let apath = assignment_path(path);
    let mut buf = Vec::new();
    buf.extend_from_slice(ASSIGN_MAGIC);
    buf.extend_from_slice(&(assignment.len() as u64).to_le_bytes());
    for (doc, pos, row) in assignment.iter() {
        buf.extend_from_slice(&(doc as u64).to_le_bytes());
        buf.extend_from_slice(&(pos as u32).to_le_bytes());
        buf.extend_from_slice(&(row as u32).to_le_bytes());
    }
    fs::write(&apath, &buf).map_err(|e| Error::io(&apath, e))
}

pub fn load_ce(path: impl AsRef<Path>) -> Result<(CeMatrix, ClusterAssignment)> {
    let path = path.as_ref();
    let fmt_err = |message: &str| Error::Format {
        path: path.to_path_buf(),
        message: message.to_string(),
    };
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = ByteReader::new(&bytes);
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic).map_err(|_| fmt_err("truncated"))?;
    if &magic != CE_MAGIC {
        return Err(fmt_err("missing NPCE1 magic"));
    }
    let t = |_| fmt_err("truncated");
    let dim = r.u32().map_err(t)? as usize;
    let n = r.u32().map_err(t)? as usize;
    let mut tokens = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * dim);
    for _ in 0..n {
        tokens.push(TokenId(r.u32().map_err(t)?));
        for _ in 0..dim {
            data.push(r.f32().map_err(t)? as f64);
        }
    }
    let entries = r.u32().map_err(t)? as usize;
    let mut token_to_rows = BTreeMap::new();
    for _ in 0..entries {
        let token = TokenId(r.u32().map_err(t)?);
        let count = r.u32().map_err(t)? as usize;
        let mut rows = Vec::with_capacity(count);
        for _ in 0..count {
            rows.push(r.u32().map_err(t)? as usize);
        }
        token_to_rows.insert(token, rows);
    }
    if !r.is_empty() {
        return Err(fmt_err("trailing bytes"));
    }
    let ce = CeMatrix {
        tokens,
        vectors: Matrix::from_vec(n, dim, data),
        token_to_rows,
    };
    ce.validate().map_err(|e| fmt_err(&e.to_string()))?;

    let apath = assignment_path(path);
    let afmt = |message: &str| Error::Format {
        path: apath.clone(),
        message: message.to_string(),
    };
    let bytes = fs::read(&apath).map_err(|e| Error::io(&apath, e))?;
    let mut r = ByteReader::new(&bytes);
    let mut magic = [0u8; 7];
    r.read_exact(&mut magic).map_err(|_| afmt("truncated"))?;
    if &magic != ASSIGN_MAGIC {
        return Err(afmt("missing NPASGN1 magic"));
    }
    let count = r.u64().map_err(|_| afmt("truncated"))? as usize;
    let mut assignment = ClusterAssignment::default();
    for _ in 0..count {
        let doc = r.u64().map_err(|_| afmt("truncated"))? as usize;
        let pos = r.u32().map_err(|_| afmt("truncated"))? as usize;
        let row = r.u32().map_err(|_| afmt("truncated"))? as usize;
        if row >= ce.len() {
            return Err(afmt("row index out of range"));
        }
        assignment.map.insert((doc, pos), row);
    }
    Ok((ce, assignment))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Document;

    fn corpus(docs: &[(&str, &str, &str)]) -> Corpus {
        Corpus::new(
            docs.iter()
                .map(|(id, t, c)| Document {
                    doc_id: id.to_string(),
                    title: t.to_string(),
                    content: c.to_string(),
                })
                .collect(),
        )
        .unwrap()
    }

    fn setup(docs: &[(&str, &str, &str)], lambda: f64) -> (Corpus, Vocab, EmbedderParams) {
        let c = corpus(docs);
        let v = Vocab::build(&c, TargetMode::Title).unwrap();
        let p = EmbedderParams::init(v.len(), 8, lambda, 4, 1);
        (c, v, p)
    }

    #[test]
    fn occurrence_counts_follow_target_lengths() {
        let (c, v, p) = setup(&[("1", "a b c", "x y"), ("2", "d e f", "z")], 0.5);
        let title = CeConfig {
            context_mode: ContextMode::TitleOnly,
            ..CeConfig::default()
        };
        let full = CeConfig::default();
        let a = collect_occurrences(&c, &v, &p, &title).unwrap();
        let b = collect_occurrences(&c, &v, &p, &full).unwrap();
        assert_eq!(a.len(), 6);
        assert_eq!(b.len(), 6);
        assert!(a.iter().zip(&b).any(|(x, y)| x.vector != y.vector));

        let c = corpus(&[("42", "t", "")]);
        let v = Vocab::build(&c, TargetMode::Docid).unwrap();
        let p = EmbedderParams::init(v.len(), 8, 0.5, 4, 1);
        let cfg = CeConfig {
            target_mode: TargetMode::Docid,
            ..CeConfig::default()
        };
        let occ = collect_occurrences(&c, &v, &p, &cfg).unwrap();
        assert_eq!(
            occ.iter().map(|o| v.surface(o.token)).collect::<Vec<_>>(),
            ["4", "2"]
        );
    }

    #[test]
    fn repeated_token_keeps_distinct_vectors() {
        // Content breaks the symmetry between the two windows around "a".
        let (c, v, p) = setup(&[("1", "a a b", "x y z")], 0.5);
        let occ = collect_occurrences(&c, &v, &p, &CeConfig::default()).unwrap();
        assert_ne!(occ[0].vector, occ[1].vector);
        let (ce, asg) = build_ce(&c, &v, &p, &CeConfig::default()).unwrap();
        let a = v.id("a").unwrap();
        let b = v.id("b").unwrap();
        assert_eq!(ce.rows_of(a).len(), 2);
        assert_eq!(ce.rows_of(b).len(), 1);
        assert_eq!(ce.len(), 3 + 3);
        for (doc, pos, row) in asg.iter() {
            let target = v.target(&c, doc, TargetMode::Title);
            assert_eq!(ce.row_token(row), target.tokens[pos]);
        }
        for s in SPECIAL_TOKENS {
            assert_eq!(ce.row(ce.rows_of(s)[0]), p.special_row(s).as_slice());
        }
    }

    #[test]
    fn context_free_encoder_gives_one_row_per_token() {
        let docs = [
            ("1", "cape town", "sun sea"),
            ("2", "cape verde", "islands"),
            ("3", "town", "hall"),
        ];
        let (c, v, p) = setup(&docs, 0.0);
        let (ce, _) = build_ce(&c, &v, &p, &CeConfig::default()).unwrap();
        for (t, rows) in ce.token_to_rows() {
            assert_eq!(rows.len(), 1, "token {}", v.surface(*t));
        }
        let (c, v, p) = setup(&docs, 0.5);
        let (ce, _) = build_ce(
            &c,
            &v,
            &p,
            &CeConfig {
                k_clusters: 1,
                ..CeConfig::default()
            },
        )
        .unwrap();
        assert!(ce.token_to_rows().values().all(|r| r.len() == 1));
        // cape and town each have two occurrences in different contexts.
        let (ce5, _) = build_ce(&c, &v, &p, &CeConfig::default()).unwrap();
        assert_eq!(ce5.rows_of(v.id("cape").unwrap()).len(), 2);
    }

    #[test]
    fn cluster_token_rejects_empty_and_mixed() {
        assert!(cluster_token(&[], 2, 10, 0).is_err());
        let a = ContextualOccurrence {
            token: TokenId(5),
            vector: vec![0.0],
            doc: 0,
            position: 0,
        };
        let b = ContextualOccurrence {
            token: TokenId(6),
            vector: vec![1.0],
            doc: 0,
            position: 1,
        };
        assert!(cluster_token(&[&a, &b], 2, 10, 0).is_err());
    }

    #[test]
    fn storage_arithmetic() {
        let r = StorageReport::from_counts(117_508, 1024, 37_000_000, 32_000);
        assert_eq!(r.bytes, 481_312_768);
        assert!((r.ratio_vs_all - 0.003).abs() < 0.0005);
        let k1 = StorageReport::from_counts(32_000, 1024, 37_000_000, 32_000);
        assert!((k1.gigabytes() - 0.13).abs() < 0.005);
        assert_eq!(k1.ratio_vs_k1, 1.0);
    }

    #[test]
    fn dump_groups_cover_all_occurrences() {
        let docs = [
            ("1", "cape town", "sun sea"),
            ("2", "cape verde", "islands"),
        ];
        let (c, v, p) = setup(&docs, 0.5);
        let (ce, asg) = build_ce(&c, &v, &p, &CeConfig::default()).unwrap();
        let text = dump_clusters(&ce, &asg, &c, &v, "cape").unwrap();
        assert_eq!(text.matches("row ").count(), 2);
        assert_eq!(text.lines().filter(|l| l.starts_with("  ")).count(), 2);
        let text = dump_clusters(&ce, &asg, &c, &v, "town").unwrap();
        assert_eq!(text.matches("row ").count(), 1);
        assert!(dump_clusters(&ce, &asg, &c, &v, "sun").is_err());
        assert!(dump_clusters(&ce, &asg, &c, &v, "nope").is_err());
    }

    #[test]
    fn persistence_round_trip() {
        let (c, v, p) = setup(
            &[("1", "cape town", "sun sea"), ("2", "cape verde", "x")],
            0.5,
        );
        let (ce, asg) = build_ce(&c, &v, &p, &CeConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ce.bin");
        save_ce(&path, &ce, &asg).unwrap();
        let (ce2, asg2) = load_ce(&path).unwrap();
        assert_eq!(asg, asg2);
        assert_eq!(ce.token_to_rows(), ce2.token_to_rows());
        for r in 0..ce.len() {
            let rounded: Vec<f64> = ce.row(r).iter().map(|&x| x as f32 as f64).collect();
            assert_eq!(rounded, ce2.row(r));
        }
    }

    #[test]
    fn build_is_deterministic() {
        let docs = [("1", "a b a b a b", "q r s"), ("2", "a b", "t u v")];
        let (c, v, p) = setup(&docs, 0.5);
        let cfg = CeConfig {
            k_clusters: 2,
            ..CeConfig::default()
        };
        assert_eq!(
            build_ce(&c, &v, &p, &cfg).unwrap(),
            build_ce(&c, &v, &p, &cfg).unwrap()
        );
    }
}
