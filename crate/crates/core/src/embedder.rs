//! Toy contextual encoder used as the CE encoder, plus the binary embedding-dump format.
//!
//! For input tokens `x_1..x_m` the encoder computes
//!
//! ```text
//! ctx_i = mean(V[x_j] : j != i, |j - i| <= window)     (V[x_i] when the window is empty)
//! mix_i = (1 - lambda) V[x_i] + lambda ctx_i
//! e_i   = tanh(W mix_i + b)
//! ```

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{TokenId, Vocab, MAX_INPUT_TOKENS};
use crate::error::{Error, Result};
use crate::linalg::{mix_seed, random_vec, Matrix};

pub const DEFAULT_DIM: usize = 32;
pub const DEFAULT_LAMBDA: f64 = 0.5;
pub const DEFAULT_WINDOW: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbedderParams {
    /// Base embedding table, `vocab × d`.
    pub table: Matrix,
    /// Output projection, `d × d`.
    pub proj: Matrix,
    pub bias: Vec<f64>,
    /// Weight of the context mean in the mix, in `[0, 1]`.
    pub lambda: f64,
    /// Context half-window.
    pub window: usize,
}

impl EmbedderParams {
    pub fn init(vocab_size: usize, dim: usize, lambda: f64, window: usize, seed: u64) -> Self {
        let scale = 1.0 / (dim as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xE1));
        let table = Matrix::random(vocab_size, dim, 1.0, &mut rng);
        let proj = Matrix::random(dim, dim, scale, &mut rng);
        let bias = random_vec(dim, scale, &mut rng);
        Self {
            table,
            proj,
            bias,
            lambda,
            window,
        }
    }

    pub fn dim(&self) -> usize {
        self.table.cols()
    }

    pub fn vocab_size(&self) -> usize {
        self.table.rows()
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::invalid(format!(
                "lambda {} outside [0, 1]",
                self.lambda
            )));
        }
        if self.window == 0 {
            return Err(Error::invalid("context window must be positive"));
        }
        if !(self.table.is_finite()
            && self.proj.is_finite()
            && self.bias.iter().all(|b| b.is_finite()))
        {
            return Err(Error::Numeric("non-finite encoder parameter".into()));
        }
        Ok(())
    }

    pub fn encode_sequence(&self, tokens: &[TokenId]) -> Result<Vec<Vec<f64>>> {
        Ok(self.trace(tokens)?.outputs)
    }

    /// Forward pass keeping the intermediates needed for backpropagation.
    pub fn trace(&self, tokens: &[TokenId]) -> Result<EncoderTrace> {
        if tokens.is_empty() {
            return Err(Error::invalid("cannot encode an empty token sequence"));
        }
        if let Some(t) = tokens.iter().find(|t| t.index() >= self.vocab_size()) {
            return Err(Error::invalid(format!(
                "token id {t} outside the embedding table"
            )));
        }
        let d = self.dim();
        let m = tokens.len();
        let mut mixes = Vec::with_capacity(m);
        let mut outputs = Vec::with_capacity(m);
        for i in 0..m {
            let (lo, hi) = self.window_bounds(i, m);
            let own = self.table.row(tokens[i].index());
            let mut ctx = vec![0.0; d];
            let count = hi - lo - 1;
            if count == 0 {
                ctx.copy_from_slice(own);
            } else {
                for (j, t) in tokens.iter().enumerate().take(hi).skip(lo) {
                    if j != i {
                        crate::linalg::axpy(1.0, self.table.row(t.index()), &mut ctx);
                    }
                }
                let inv = 1.0 / count as f64;
                ctx.iter_mut().for_each(|c| *c *= inv);
            }
            let mix: Vec<f64> = own
                .iter()
                .zip(&ctx)
                .map(|(o, c)| (1.0 - self.lambda) * o + self.lambda * c)
                .collect();
            let mut out = self.proj.matvec(&mix);
            for (o, b) in out.iter_mut().zip(&self.bias) {
                *o = (*o + b).tanh();
            }
            mixes.push(mix);
            outputs.push(out);
        }
        Ok(EncoderTrace {
            tokens: tokens.to_vec(),
            mixes,
            outputs,
        })
    }

    /// Half-open range `[lo, hi)` of positions within the window of `i` (including `i`).
    fn window_bounds(&self, i: usize, len: usize) -> (usize, usize) {
        (
            i.saturating_sub(self.window),
            (i + self.window + 1).min(len),
        )
    }

    /// Mean of the encoder outputs.
    pub fn pooled(&self, tokens: &[TokenId]) -> Result<Vec<f64>> {
        Ok(self.trace(tokens)?.mean())
    }

    /// Backpropagates `d_mean`, the gradient w.r.t. the pooled output, into `grads`.
    pub fn backward_mean(&self, trace: &EncoderTrace, d_mean: &[f64], grads: &mut EmbedderGrads) {
        let m = trace.tokens.len();
        let inv_m = 1.0 / m as f64;
        for i in 0..m {
            let e = &trace.outputs[i];
            let da: Vec<f64> = d_mean
                .iter()
                .zip(e)
                .map(|(g, e)| g * inv_m * (1.0 - e * e))
                .collect();
            grads.proj.add_outer(1.0, &da, &trace.mixes[i]);
            crate::linalg::axpy(1.0, &da, &mut grads.bias);
            let dmix = self.proj.matvec_t(&da);
            let own = trace.tokens[i].index();
            crate::linalg::axpy(1.0 - self.lambda, &dmix, grads.table.row_mut(own));
            if self.lambda == 0.0 {
                continue;
            }
            let (lo, hi) = self.window_bounds(i, m);
            let count = hi - lo - 1;
            if count == 0 {
                crate::linalg::axpy(self.lambda, &dmix, grads.table.row_mut(own));
            } else {
                let w = self.lambda / count as f64;
                for j in (lo..hi).filter(|&j| j != i) {
                    crate::linalg::axpy(w, &dmix, grads.table.row_mut(trace.tokens[j].index()));
                }
            }
        }
    }

    /// Encodes `target ++ context` (capped at 512 positions) and keeps the target positions.
    pub fn embed_target_in_context(
        &self,
        target: &[TokenId],
        context: &[TokenId],
        doc: usize,
    ) -> Result<Vec<ContextualOccurrence>> {
        if target.is_empty() {
            return Err(Error::invalid("empty target sequence"));
        }
        if target.len() > MAX_INPUT_TOKENS {
            return Err(Error::invalid(format!(
                "target of {} tokens exceeds the {MAX_INPUT_TOKENS}-token input cap",
                target.len()
            )));
        }
        let mut input = target.to_vec();
        input.extend_from_slice(&context[..context.len().min(MAX_INPUT_TOKENS - target.len())]);
        let outputs = self.encode_sequence(&input)?;
        Ok(outputs
            .into_iter()
            .take(target.len())
            .enumerate()
            .map(|(position, vector)| ContextualOccurrence {
                token: target[position],
                vector,
                doc,
                position,
            })
            .collect())
    }

    /// Context-free output vector of a single token, `tanh(W V[t] + b)`.
    pub fn context_free(&self, token: TokenId) -> Vec<f64> {
        let mut out = self.proj.matvec(self.table.row(token.index()));
        for (o, b) in out.iter_mut().zip(&self.bias) {
            *o = (*o + b).tanh();
        }
        out
    }

    /// Frozen row used for special tokens: `tanh(V[t])`.
    pub fn special_row(&self, token: TokenId) -> Vec<f64> {
        self.table
            .row(token.index())
            .iter()
            .map(|v| v.tanh())
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct EncoderTrace {
    pub tokens: Vec<TokenId>,
    pub mixes: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<f64>>,
}

impl EncoderTrace {
    pub fn mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.outputs[0].len()];
        for o in &self.outputs {
            crate::linalg::axpy(1.0, o, &mut out);
        }
        let inv = 1.0 / self.outputs.len() as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbedderGrads {
    pub table: Matrix,
    pub proj: Matrix,
    pub bias: Vec<f64>,
}

impl EmbedderGrads {
    pub fn zeros_like(p: &EmbedderParams) -> Self {
        Self {
            table: Matrix::zeros(p.table.rows(), p.table.cols()),
            proj: Matrix::zeros(p.proj.rows(), p.proj.cols()),
            bias: vec![0.0; p.bias.len()],
        }
    }
}

/// One encoder output vector for a target token at a given position of a document.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextualOccurrence {
    pub token: TokenId,
    pub vector: Vec<f64>,
    /// Corpus ordinal of the source document.
    pub doc: usize,
    /// Position within the encoder input (equivalently, within the target).
    pub position: usize,
}

const DUMP_MAGIC: &[u8; 7] = b"NPDUMP1";

/// Writes occurrences in the `NPDUMP1` format.
pub fn export_embeddings(
    path: impl AsRef<Path>,
    vocab: &Vocab,
    occurrences: &[ContextualOccurrence],
) -> Result<()> {
    let path = path.as_ref();
    let dim = occurrences.first().map_or(0, |o| o.vector.len());
    let mut buf = Vec::new();
    buf.extend_from_slice(DUMP_MAGIC);
    buf.extend_from_slice(&(dim as u32).to_le_bytes());
    for o in occurrences {
        if o.vector.len() != dim {
            return Err(Error::invalid(format!(
                "occurrence vector of dim {} in a dim-{dim} dump",
                o.vector.len()
            )));
        }
        let surface = vocab.surface(o.token).as_bytes();
        buf.extend_from_slice(&(surface.len() as u32).to_le_bytes());
        buf.extend_from_slice(surface);
        buf.extend_from_slice(&(o.doc as u64).to_le_bytes());
        buf.extend_from_slice(&(o.position as u32).to_le_bytes());
        for &v in &o.vector {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Reads an `NPDUMP1` file, resolving surfaces against `vocab`. A zero-byte file is an empty dump.
pub fn import_embeddings(
    path: impl AsRef<Path>,
    vocab: &Vocab,
) -> Result<Vec<ContextualOccurrence>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.is_empty() {
        return Ok(Vec::new());
    }
    let fmt_err = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };
    let mut r = ByteReader::new(&bytes);
    let mut magic = [0u8; 7];
    r.read_exact(&mut magic)
        .map_err(|_| fmt_err("truncated header".into()))?;
    if &magic != DUMP_MAGIC {
        return Err(fmt_err("missing NPDUMP1 magic".into()));
    }
    let dim = r.u32().map_err(|_| fmt_err("truncated header".into()))? as usize;
    let mut out = Vec::new();
    while !r.is_empty() {
        let record = out.len();
        let framing = |_| {
            fmt_err(format!(
                "record {record} is truncated; record length does not match dim {dim}"
            ))
        };
        let len = r.u32().map_err(framing)? as usize;
        let mut surface = vec![0u8; len];
        r.read_exact(&mut surface).map_err(framing)?;
        let surface = String::from_utf8(surface)
            .map_err(|_| fmt_err(format!("record {record}: surface is not UTF-8")))?;
        let doc = r.u64().map_err(framing)? as usize;
        let position = r.u32().map_err(framing)? as usize;
        let mut vector = Vec::with_capacity(dim);
        for _ in 0..dim {
            let v = r.f32().map_err(framing)? as f64;
            if !v.is_finite() {
                return Err(fmt_err(format!("record {record}: non-finite component")));
            }
            vector.push(v);
        }
        let token = vocab.id(&surface).ok_or_else(|| {
            fmt_err(format!(
                "record {record}: surface {surface:?} not in vocabulary"
            ))
        })?;
        out.push(ContextualOccurrence {
            token,
            vector,
            doc,
            position,
        });
    }
    Ok(out)
}

/// Little-endian cursor over a byte slice.
pub(crate) struct ByteReader<'a> {
    inner: &'a [u8],
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(inner: &'a [u8]) -> Self {
        Self { inner }
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.inner.is_empty()
    }

    pub(crate) fn read_exact(&mut self, buf: &mut [u8]) -> io::Result<()> {
        self.inner.read_exact(buf)
    }

    pub(crate) fn u32(&mut self) -> io::Result<u32> {
        let mut b = [0u8; 4];
        self.inner.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    pub(crate) fn u64(&mut self) -> io::Result<u64> {
        let mut b = [0u8; 8];
        self.inner.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    pub(crate) fn f32(&mut self) -> io::Result<f32> {
        let mut b = [0u8; 4];
        self.inner.read_exact(&mut b)?;
        Ok(f32::from_le_bytes(b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Corpus, Document, TargetMode};

    fn params(vocab: usize, lambda: f64, window: usize) -> EmbedderParams {
        EmbedderParams::init(vocab, 8, lambda, window, 11)
    }

    fn ids(v: &[u32]) -> Vec<TokenId> {
        v.iter().map(|&i| TokenId(i)).collect()
    }

    #[test]
    fn lambda_zero_is_context_free() {
        let mut p = params(10, 0.0, 3);
        p.proj = Matrix::identity(8);
        p.bias = vec![0.0; 8];
        let out = p.encode_sequence(&ids(&[4, 5, 6, 4])).unwrap();
        for (i, t) in [4usize, 5, 6, 4].iter().enumerate() {
            let expect: Vec<f64> = p.table.row(*t).iter().map(|v| v.tanh()).collect();
            assert_eq!(out[i], expect);
        }
        assert_eq!(out[0], out[3]);
    }

    #[test]
    fn single_token_falls_back_to_own_embedding() {
        let p = params(10, 0.7, 2);
        let out = p.encode_sequence(&ids(&[5])).unwrap();
        assert_eq!(out[0], p.context_free(TokenId(5)));
    }

    #[test]
    fn lambda_one_window_one_swaps_neighbours() {
        let mut p = params(10, 1.0, 1);
        p.proj = Matrix::identity(8);
        p.bias = vec![0.0; 8];
        let out = p.encode_sequence(&ids(&[4, 7])).unwrap();
        let tanh = |r: &[f64]| r.iter().map(|v| v.tanh()).collect::<Vec<_>>();
        assert_eq!(out[0], tanh(p.table.row(7)));
        assert_eq!(out[1], tanh(p.table.row(4)));
    }

    #[test]
    fn empty_sequence_is_an_error() {
        assert!(params(5, 0.5, 2).encode_sequence(&[]).is_err());
    }

    #[test]
    fn target_in_context_returns_only_target_positions() {
        let p = params(20, 0.5, 4);
        let target = ids(&[4, 5]);
        let ctx: Vec<TokenId> = (0..600).map(|i| TokenId(6 + (i % 14) as u32)).collect();
        let occ = p.embed_target_in_context(&target, &ctx, 3).unwrap();
        assert_eq!(occ.len(), 2);
        assert!(occ.iter().all(|o| o.doc == 3));

        let alone = p.embed_target_in_context(&target, &[], 0).unwrap();
        let direct = p.encode_sequence(&target).unwrap();
        assert_eq!(
            alone.iter().map(|o| o.vector.clone()).collect::<Vec<_>>(),
            direct
        );

        let other = p
            .embed_target_in_context(&target, &ids(&[9, 9, 9]), 0)
            .unwrap();
        let first = p
            .embed_target_in_context(&target, &ids(&[12, 13, 14]), 0)
            .unwrap();
        assert_ne!(other[0].vector, first[0].vector);

        let too_long = vec![TokenId(4); MAX_INPUT_TOKENS + 1];
        assert!(p.embed_target_in_context(&too_long, &[], 0).is_err());
    }

    #[test]
    fn dump_round_trip_and_errors() {
        let corpus = Corpus::new(vec![Document {
            doc_id: "1".into(),
            title: "cape town".into(),
            content: "sea".into(),
        }])
        .unwrap();
        let vocab = Vocab::build(&corpus, TargetMode::Title).unwrap();
        let p = EmbedderParams::init(vocab.len(), 32, 0.5, 16, 0);
        let mut occ = p
            .embed_target_in_context(&vocab.tokenize("cape town sea"), &[], 0)
            .unwrap();
        assert_eq!(occ.len(), 3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bin");
        export_embeddings(&path, &vocab, &occ).unwrap();
        let back = import_embeddings(&path, &vocab).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in occ.iter().zip(&back) {
            assert_eq!(a.token, b.token);
            assert_eq!(a.position, b.position);
            for (x, y) in a.vector.iter().zip(&b.vector) {
                assert_eq!(*x as f32 as f64, *y);
            }
        }

        // Hand-build a dump whose middle record carries 16 floats instead of 32.
        let mut bytes = fs::read(&path).unwrap();
        let rec_len = 4 + "cape".len() + 8 + 4 + 32 * 4;
        let header = 7 + 4;
        bytes.drain(
            header + rec_len + 4 + "town".len() + 12..header + rec_len + 4 + "town".len() + 12 + 64,
        );
        fs::write(&path, &bytes).unwrap();
        assert!(import_embeddings(&path, &vocab).is_err());

        fs::write(&path, b"").unwrap();
        assert!(import_embeddings(&path, &vocab).unwrap().is_empty());

        occ[0].vector.truncate(16);
        assert!(export_embeddings(&path, &vocab, &occ).is_err());
    }

    #[test]
    fn import_rejects_unknown_surface() {
        let vocab = Vocab::from_surfaces(["a".to_string()]);
        let other = Vocab::from_surfaces(["zzz".to_string()]);
        let occ = vec![ContextualOccurrence {
            token: other.id("zzz").unwrap(),
            vector: vec![0.5; 4],
            doc: 0,
            position: 0,
        }];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bin");
        export_embeddings(&path, &other, &occ).unwrap();
        assert!(import_embeddings(&path, &vocab).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn outputs_lie_in_open_unit_interval(toks in proptest::collection::vec(4u32..30, 1..40), seed in 0u64..100) {
                let p = EmbedderParams::init(30, 8, 0.5, 3, seed);
                for v in p.encode_sequence(&ids(&toks)).unwrap() {
                    prop_assert!(v.iter().all(|x| x.abs() < 1.0));
                }
            }

            #[test]
            fn far_permutations_do_not_move_an_embedding(
                toks in proptest::collection::vec(4u32..30, 12..30),
                seed in 0u64..50,
            ) {
                let window = 2;
                let p = EmbedderParams::init(30, 8, 0.6, window, seed);
                let before = p.encode_sequence(&ids(&toks)).unwrap();
                // Reverse the tail beyond the window of position 0.
                let mut permuted = toks.clone();
                permuted[window + 1..].reverse();
                let after = p.encode_sequence(&ids(&permuted)).unwrap();
                prop_assert_eq!(&before[0], &after[0]);
            }
        }
    }
}
