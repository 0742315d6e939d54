//! Trie-constrained beam search over decoder rows.
//!
//! At each step the softmax is restricted to the rows the trie allows, so every
//! finished hypothesis spells a complete corpus target. Scores are summed natural-log
//! probabilities without length normalization; ties break on the surface sequence.

use std::cmp::Ordering;
use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::ce::CeMatrix;
use crate::corpus::{Corpus, TokenId, Vocab, MAX_INPUT_TOKENS};
use crate::error::{Error, Result};
use crate::linalg::{dot, log_sum_exp, Matrix};
use crate::model::ModelParams;
use crate::trie::{NodeId, PrefixTrie, ROOT};

pub const DEFAULT_BEAM: usize = 10;

/// Softmax over `allowed` rows of `z_r = <h, row_r>`. Aligned with `allowed`.
pub fn step_distribution(h: &[f64], ce: &CeMatrix, allowed: &[usize]) -> Result<Vec<f64>> {
    Ok(step_log_probs(h, ce.vectors(), allowed)?
        .into_iter()
        .map(f64::exp)
        .collect())
}

fn step_log_probs(h: &[f64], rows: &Matrix, allowed: &[usize]) -> Result<Vec<f64>> {
    if allowed.is_empty() {
        return Err(Error::invalid("no allowed rows at this step"));
    }
    let z: Vec<f64> = allowed.iter().map(|&r| dot(h, rows.row(r))).collect();
    let lse = log_sum_exp(&z);
    if !lse.is_finite() {
        return Err(Error::Numeric("non-finite step normalizer".into()));
    }
    Ok(z.into_iter().map(|v| v - lse).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamHypothesis {
    pub rows: Vec<usize>,
    pub surfaces: Vec<String>,
    pub log_prob: f64,
    pub finished: bool,
    node: NodeId,
}

/// A retrieved document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Retrieved {
    pub doc: usize,
    pub doc_id: String,
    pub surfaces: Vec<String>,
    pub log_prob: f64,
}

fn rank(a: &BeamHypothesis, b: &BeamHypothesis) -> Ordering {
    b.log_prob
        .total_cmp(&a.log_prob)
        .then_with(|| a.surfaces.cmp(&b.surfaces))
        .then_with(|| b.finished.cmp(&a.finished))
        .then_with(|| a.rows.cmp(&b.rows))
}

/// Beam search over CE rows. Returns up to `topn` documents.
#[allow(clippy::too_many_arguments)]
pub fn constrained_beam_search(
    params: &ModelParams,
    query: &[TokenId],
    trie: &PrefixTrie,
    ce: &CeMatrix,
    corpus: &Corpus,
    vocab: &Vocab,
    beam: usize,
    topn: usize,
) -> Result<Vec<Retrieved>> {
    let finished = beam_hypotheses(params, query, trie, ce, vocab, beam)?;
    Ok(resolve(&finished, trie, corpus, topn))
}

/// All finished hypotheses banked by the search, best first (not deduplicated).
pub fn beam_hypotheses(
    params: &ModelParams,
    query: &[TokenId],
    trie: &PrefixTrie,
    ce: &CeMatrix,
    vocab: &Vocab,
    beam: usize,
) -> Result<Vec<BeamHypothesis>> {
    if beam == 0 {
        return Err(Error::invalid("beam size must be at least 1"));
    }
    let qbar = params.embedder.pooled(query)?;
    let rows = ce.vectors();
    let eos = ce.eos_row();
    let mut live = vec![BeamHypothesis {
        rows: Vec::new(),
        surfaces: Vec::new(),
        log_prob: 0.0,
        finished: false,
        node: ROOT,
    }];
    let mut bank = Vec::new();
    while !live.is_empty() {
        let mut candidates = Vec::new();
        for hyp in &live {
            let prev = hyp.rows.last().map(|&r| rows.row(r));
            let h = params.decoder.state(&qbar, prev);
            let allowed = trie.allowed_rows(hyp.node, ce);
            let lp = step_log_probs(&h, rows, &allowed)?;
            for (&r, l) in allowed.iter().zip(lp) {
                let mut next = hyp.clone();
                next.rows.push(r);
                next.log_prob += l;
                if r == eos {
                    next.finished = true;
                } else {
                    let surface = vocab.surface(ce.row_token(r));
                    next.node = trie
                        .child(hyp.node, surface)
                        .expect("allowed rows follow trie edges");
                    next.surfaces.push(surface.to_string());
                }
                candidates.push(next);
            }
        }
        candidates.sort_by(rank);
        candidates.truncate(beam);
        live.clear();
        for c in candidates {
            if c.finished {
                bank.push(c);
            } else {
                live.push(c);
            }
        }
    }
    bank.sort_by(rank);
    Ok(bank)
}

/// Keeps the best hypothesis per surface and expands surfaces into documents.
fn resolve(
    finished: &[BeamHypothesis],
    trie: &PrefixTrie,
    corpus: &Corpus,
    topn: usize,
) -> Vec<Retrieved> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for h in finished {
        if !seen.insert(h.surfaces.clone()) {
            continue;
        }
        for &doc in trie.completed_docs(&h.surfaces) {
            if out.len() == topn {
                return out;
            }
            out.push(Retrieved {
                doc,
                doc_id: corpus.doc(doc).doc_id.clone(),
                surfaces: h.surfaces.clone(),
                log_prob: h.log_prob,
            });
        }
    }
    out
}

/// Reference decoder over a per-token output table (one embedding per token id).
///
/// Written independently of the CE path: hypotheses carry token ids and the trie is
/// expanded surface by surface through the vocabulary.
pub fn vanilla_beam_search(
    params: &ModelParams,
    table: &Matrix,
    query: &[TokenId],
    trie: &PrefixTrie,
    corpus: &Corpus,
    beam: usize,
    topn: usize,
) -> Result<Vec<Retrieved>> {
    if beam == 0 {
        return Err(Error::invalid("beam size must be at least 1"));
    }
    struct Hyp {
        tokens: Vec<TokenId>,
        surfaces: Vec<String>,
        node: NodeId,
        score: f64,
        done: bool,
    }
    let order = |a: &Hyp, b: &Hyp| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.surfaces.cmp(&b.surfaces))
            .then_with(|| b.done.cmp(&a.done))
            .then_with(|| a.tokens.cmp(&b.tokens))
    };
    let qbar = params.embedder.pooled(query)?;
    let mut live = vec![Hyp {
        tokens: Vec::new(),
        surfaces: Vec::new(),
        node: ROOT,
        score: 0.0,
        done: false,
    }];
    let mut done: Vec<Hyp> = Vec::new();
    while !live.is_empty() {
        let mut next = Vec::new();
        for hyp in &live {
            let prev = hyp.tokens.last().map(|t| table.row(t.index()));
            let h = params.decoder.state(&qbar, prev);
            let mut options: Vec<(TokenId, Option<(String, NodeId)>)> = trie
                .children(hyp.node)
                .map(|(s, tok, n)| (tok, Some((s.to_string(), n))))
                .collect();
            if trie.is_terminal(hyp.node) {
                options.push((TokenId::EOS, None));
            }
            // Token-id order matches CE row order, so the softmax sums in the same order.
            options.sort_by_key(|(t, _)| *t);
            let logits: Vec<f64> = options
                .iter()
                .map(|(t, _)| dot(&h, table.row(t.index())))
                .collect();
            let norm = log_sum_exp(&logits);
            for ((tok, edge), z) in options.into_iter().zip(logits) {
                let mut tokens = hyp.tokens.clone();
                tokens.push(tok);
                let mut surfaces = hyp.surfaces.clone();
                let (node, finished) = match edge {
                    Some((s, n)) => {
                        surfaces.push(s);
                        (n, false)
                    }
                    None => (hyp.node, true),
                };
                next.push(Hyp {
                    tokens,
                    surfaces,
                    node,
                    score: hyp.score + (z - norm),
                    done: finished,
                });
            }
        }
        next.sort_by(order);
        next.truncate(beam);
        live = Vec::new();
        for h in next {
            if h.done {
                done.push(h);
            } else {
                live.push(h);
            }
        }
    }
    done.sort_by(order);
    let mut out = Vec::new();
    for h in done {
        for &doc in trie.completed_docs(&h.surfaces) {
            if out.len() == topn {
                return Ok(out);
            }
            out.push(Retrieved {
                doc,
                doc_id: corpus.doc(doc).doc_id.clone(),
                surfaces: h.surfaces.clone(),
                log_prob: h.score,
            });
        }
    }
    Ok(out)
}

/// Decoding backend: contextualized rows or the vanilla per-token table.
#[derive(Debug, Clone, Copy)]
pub enum Decoding<'a> {
    Contextual(&'a CeMatrix),
    Vanilla(&'a Matrix),
}

#[allow(clippy::too_many_arguments)]
pub fn retrieve(
    params: &ModelParams,
    decoding: Decoding<'_>,
    query: &[TokenId],
    trie: &PrefixTrie,
    corpus: &Corpus,
    vocab: &Vocab,
    beam: usize,
    topn: usize,
) -> Result<Vec<Retrieved>> {
    match decoding {
        Decoding::Contextual(ce) => {
            constrained_beam_search(params, query, trie, ce, corpus, vocab, beam, topn)
        }
        Decoding::Vanilla(table) => {
            vanilla_beam_search(params, table, query, trie, corpus, beam, topn)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HopPair {
    pub first: Retrieved,
    pub second: Retrieved,
    pub score: f64,
}

/// Hop-2 input: query, then the hop-1 title, then as much of its content window as fits.
pub fn second_hop_input(
    query: &[TokenId],
    corpus: &Corpus,
    vocab: &Vocab,
    first_doc: usize,
) -> Vec<TokenId> {
    let doc = corpus.doc(first_doc);
    let mut input = query.to_vec();
    input.extend(vocab.tokenize(&doc.title));
    input.extend(vocab.content_window(doc, MAX_INPUT_TOKENS));
    input.truncate(MAX_INPUT_TOKENS);
    input
}

/// Two-hop retrieval. Each of the top `beam` hop-1 documents seeds a hop-2 search
/// whose query is [`second_hop_input`]; pairs are ranked by summed log-probability.
#[allow(clippy::too_many_arguments)]
pub fn multihop_retrieve(
    params: &ModelParams,
    decoding: Decoding<'_>,
    query: &[TokenId],
    trie: &PrefixTrie,
    corpus: &Corpus,
    vocab: &Vocab,
    beam: usize,
    topn: usize,
    dedup: bool,
) -> Result<Vec<HopPair>> {
    let first = retrieve(params, decoding, query, trie, corpus, vocab, beam, beam)?;
    let mut pairs = Vec::new();
    for f in first {
        let input = second_hop_input(query, corpus, vocab, f.doc);
        for s in retrieve(params, decoding, &input, trie, corpus, vocab, beam, beam)? {
            if dedup && s.doc == f.doc {
                continue;
            }
            pairs.push(HopPair {
                score: f.log_prob + s.log_prob,
                first: f.clone(),
                second: s,
            });
        }
    }
    pairs.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.first.doc.cmp(&b.first.doc))
            .then_with(|| a.second.doc.cmp(&b.second.doc))
    });
    pairs.truncate(topn);
    Ok(pairs)
}

/// Flattens ranked pairs into a ranked document list (first appearance wins).
pub fn flatten_pairs(pairs: &[HopPair]) -> Vec<(usize, String, f64)> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for p in pairs {
        for r in [&p.first, &p.second] {
            if seen.insert(r.doc) {
                out.push((r.doc, r.doc_id.clone(), p.score));
            }
        }
    }
    out
}
