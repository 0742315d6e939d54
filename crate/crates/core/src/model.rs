//! Trainable parameters of the toy encoder-decoder and their hand-derived gradients.
//!
//! The generator conditions on the pooled query encoding and the previous decoder row:
//!
//! ```text
//! q̄   = mean(encoder(query))
//! h_t = tanh(W_d [q̄ ; p_{t-1}] + b_d)       p_0 = u0 (BOS input), else row vector of t_{t-1}
//! z_r = <h_t, R_r>                          R = CE rows (frozen) or the vanilla output table
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::TokenId;
use crate::embedder::{EmbedderGrads, EmbedderParams, EncoderTrace};
use crate::error::{Error, Result};
use crate::linalg::{axpy, mix_seed, random_vec, Matrix};
use crate::loss::{check_positives, contrastive_from_scores, gr_loss_with_grad, LossVariant};

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams {
    /// `d × 2d`, applied to `[q̄ ; p]`.
    pub proj: Matrix,
    pub bias: Vec<f64>,
    /// Input vector standing in for the previous row at the first step.
    pub bos: Vec<f64>,
}

impl DecoderParams {
    pub fn init(dim: usize, seed: u64) -> Self {
        let scale = 1.0 / (dim as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xD1));
        Self {
            proj: Matrix::random(dim, 2 * dim, scale, &mut rng),
            bias: random_vec(dim, scale, &mut rng),
            bos: random_vec(dim, scale, &mut rng),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            proj: Matrix::zeros(dim, 2 * dim),
            bias: vec![0.0; dim],
            bos: vec![0.0; dim],
        }
    }

    /// Returns `(input, h)` for one decoding step.
    pub(crate) fn step(&self, qbar: &[f64], prev: Option<&[f64]>) -> (Vec<f64>, Vec<f64>) {
        let mut input = Vec::with_capacity(2 * qbar.len());
        input.extend_from_slice(qbar);
        input.extend_from_slice(prev.unwrap_or(&self.bos));
        let mut h = self.proj.matvec(&input);
        for (v, b) in h.iter_mut().zip(&self.bias) {
            *v = (*v + b).tanh();
        }
        (input, h)
    }

    pub fn state(&self, qbar: &[f64], prev: Option<&[f64]>) -> Vec<f64> {
        self.step(qbar, prev).1
    }
}

/// Previous-step input of the generator.
#[derive(Debug, Clone, Copy)]
pub enum Prev<'a> {
    Bos,
    Row(&'a [f64]),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub embedder: EmbedderParams,
    pub decoder: DecoderParams,
    /// Trainable per-token output table (vanilla decoding only), `vocab × d`.
    pub output_table: Option<Matrix>,
}

impl ModelParams {
    pub fn init(vocab_size: usize, dim: usize, lambda: f64, window: usize, seed: u64) -> Self {
        Self {
            embedder: EmbedderParams::init(vocab_size, dim, lambda, window, seed),
            decoder: DecoderParams::init(dim, seed),
            output_table: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.embedder.dim()
    }

    /// Installs the vanilla output table: context-free encoder outputs for ordinary
    /// tokens and `tanh(V[t])` for special tokens, matching a one-row-per-token CE.
    pub fn with_vanilla_table(mut self) -> Self {
        self.output_table = Some(vanilla_table(&self.embedder));
        self
    }

    /// Trainable tensors in a fixed order.
    pub fn trainable(&self) -> Vec<(&'static str, Vec<usize>, &[f64])> {
        let e = &self.embedder;
        let d = &self.decoder;
        let mut out = vec![
            (
                "encoder.table",
                vec![e.table.rows(), e.table.cols()],
                e.table.as_slice(),
            ),
            (
                "encoder.proj",
                vec![e.proj.rows(), e.proj.cols()],
                e.proj.as_slice(),
            ),
            ("encoder.bias", vec![e.bias.len()], e.bias.as_slice()),
            (
                "decoder.proj",
                vec![d.proj.rows(), d.proj.cols()],
                d.proj.as_slice(),
            ),
            ("decoder.bias", vec![d.bias.len()], d.bias.as_slice()),
            ("decoder.bos", vec![d.bos.len()], d.bos.as_slice()),
        ];
        if let Some(t) = &self.output_table {
            out.push((
                "decoder.output_table",
                vec![t.rows(), t.cols()],
                t.as_slice(),
            ));
        }
        out
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut [f64]> {
        let e = &mut self.embedder;
        let d = &mut self.decoder;
        let mut out: Vec<&mut [f64]> = vec![
            e.table.as_mut_slice(),
            e.proj.as_mut_slice(),
            e.bias.as_mut_slice(),
            d.proj.as_mut_slice(),
            d.bias.as_mut_slice(),
            d.bos.as_mut_slice(),
        ];
        if let Some(t) = &mut self.output_table {
            out.push(t.as_mut_slice());
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.trainable()
            .iter()
            .all(|(_, _, t)| t.iter().all(|v| v.is_finite()))
    }

    /// `params -= lr * grads`
    pub fn apply(&mut self, grads: &ModelGrads, lr: f64) {
        for (p, g) in self.trainable_mut().into_iter().zip(grads.tensors()) {
            axpy(-lr, g, p);
        }
    }
}

pub fn vanilla_table(embedder: &EmbedderParams) -> Matrix {
    let mut table = Matrix::zeros(embedder.vocab_size(), embedder.dim());
    for t in 0..embedder.vocab_size() {
        let tok = TokenId(t as u32);
        let row = if tok.is_reserved() {
            embedder.special_row(tok)
        } else {
            embedder.context_free(tok)
        };
        table.row_mut(t).copy_from_slice(&row);
    }
    table
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub embedder: EmbedderGrads,
    pub decoder: DecoderParams,
    pub output_table: Option<Matrix>,
}

impl ModelGrads {
    pub fn zeros_like(p: &ModelParams) -> Self {
        Self {
            embedder: EmbedderGrads::zeros_like(&p.embedder),
            decoder: DecoderParams::zeros(p.dim()),
            output_table: p
                .output_table
                .as_ref()
                .map(|t| Matrix::zeros(t.rows(), t.cols())),
        }
    }

    /// Same order as [`ModelParams::trainable`].
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = vec![
            self.embedder.table.as_slice(),
            self.embedder.proj.as_slice(),
            self.embedder.bias.as_slice(),
            self.decoder.proj.as_slice(),
            self.decoder.bias.as_slice(),
            self.decoder.bos.as_slice(),
        ];
        if let Some(t) = &self.output_table {
            out.push(t.as_slice());
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![
            self.embedder.table.as_mut_slice(),
            self.embedder.proj.as_mut_slice(),
            self.embedder.bias.as_mut_slice(),
            self.decoder.proj.as_mut_slice(),
            self.decoder.bias.as_mut_slice(),
            self.decoder.bos.as_mut_slice(),
        ];
        if let Some(t) = &mut self.output_table {
            out.push(t.as_mut_slice());
        }
        out
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// `h_t` for a query and previous-step input.
pub fn decode_state(params: &ModelParams, query: &[TokenId], prev: Prev<'_>) -> Result<Vec<f64>> {
    let qbar = params.embedder.pooled(query)?;
    Ok(params.decoder.state(&qbar, prev_slice(prev)))
}

/// First decoder output, used as the query embedding in contrastive training.
pub fn query_embedding(params: &ModelParams, query: &[TokenId]) -> Result<Vec<f64>> {
    decode_state(params, query, Prev::Bos)
}

fn prev_slice(prev: Prev<'_>) -> Option<&[f64]> {
    match prev {
        Prev::Bos => None,
        Prev::Row(r) => Some(r),
    }
}

/// Output vocabulary the generator scores against during training.
#[derive(Debug, Clone, Copy)]
pub enum OutputRows<'a> {
    /// Frozen CE rows.
    Frozen(&'a Matrix),
    /// The model's own trainable `output_table`.
    Table,
}

impl<'a> OutputRows<'a> {
    fn resolve(self, params: &'a ModelParams) -> Result<&'a Matrix> {
        match self {
            OutputRows::Frozen(m) => Ok(m),
            OutputRows::Table => params
                .output_table
                .as_ref()
                .ok_or_else(|| Error::invalid("vanilla decoding needs an output table")),
        }
    }
}

/// Backpropagates `dh` through one step; returns the gradient w.r.t. `q̄` and the
/// gradient w.r.t. the previous-row input.
fn step_backward(
    params: &ModelParams,
    input: &[f64],
    h: &[f64],
    dh: &[f64],
    grads: &mut ModelGrads,
) -> (Vec<f64>, Vec<f64>) {
    let d = h.len();
    let dg: Vec<f64> = dh.iter().zip(h).map(|(g, h)| g * (1.0 - h * h)).collect();
    grads.decoder.proj.add_outer(1.0, &dg, input);
    axpy(1.0, &dg, &mut grads.decoder.bias);
    let mut dinput = params.decoder.proj.matvec_t(&dg);
    let dprev = dinput.split_off(d);
    (dinput, dprev)
}

/// Generative-retrieval loss of one (query, target rows) pair; accumulates gradients
/// into `grads` when given. `target_rows` must end with the `EOS` row.
pub fn gr_example(
    params: &ModelParams,
    rows: OutputRows<'_>,
    query: &[TokenId],
    target_rows: &[usize],
    grads: Option<&mut ModelGrads>,
) -> Result<f64> {
    let table = rows.resolve(params)?;
    let trace = params.embedder.trace(query)?;
    let qbar = trace.mean();
    let mut steps = Vec::with_capacity(target_rows.len());
    let mut logits = Vec::with_capacity(target_rows.len());
    for t in 0..target_rows.len() {
        let prev = if t == 0 {
            None
        } else {
            let r = target_rows[t - 1];
            if r >= table.rows() {
                return Err(Error::invalid(format!("target row {r} out of range")));
            }
            Some(table.row(r))
        };
        let (input, h) = params.decoder.step(&qbar, prev);
        logits.push(table.matvec(&h));
        steps.push((input, h));
    }
    let (loss, dlogits) = gr_loss_with_grad(&logits, target_rows)?;
    if let Some(grads) = grads {
        let mut dqbar = vec![0.0; qbar.len()];
        for (t, ((input, h), dz)) in steps.iter().zip(&dlogits).enumerate() {
            let dh = table.matvec_t(dz);
            if let (OutputRows::Table, Some(g)) = (rows, grads.output_table.as_mut()) {
                g.add_outer(1.0, dz, h);
            }
            let (dq, dprev) = step_backward(params, input, h, &dh, grads);
            axpy(1.0, &dq, &mut dqbar);
            if t == 0 {
                axpy(1.0, &dprev, &mut grads.decoder.bos);
            } else if let (OutputRows::Table, Some(g)) = (rows, grads.output_table.as_mut()) {
                axpy(1.0, &dprev, g.row_mut(target_rows[t - 1]));
            }
        }
        backprop_query(params, &trace, &dqbar, grads);
    }
    Ok(loss)
}

fn backprop_query(
    params: &ModelParams,
    trace: &EncoderTrace,
    dqbar: &[f64],
    grads: &mut ModelGrads,
) {
    params
        .embedder
        .backward_mean(trace, dqbar, &mut grads.embedder);
}

/// Contrastive loss of one query against frozen CE rows.
pub fn contrastive_example(
    params: &ModelParams,
    rows: &Matrix,
    query: &[TokenId],
    positives: &[usize],
    negatives: &[usize],
    variant: LossVariant,
    grads: Option<&mut ModelGrads>,
) -> Result<f64> {
    check_positives(positives.len(), variant)?;
    let trace = params.embedder.trace(query)?;
    let qbar = trace.mean();
    let (input, q) = params.decoder.step(&qbar, None);
    let score = |r: &usize| crate::linalg::dot(&q, rows.row(*r));
    let pos: Vec<f64> = positives.iter().map(score).collect();
    let neg: Vec<f64> = negatives.iter().map(score).collect();
    let (loss, dpos, dneg) = contrastive_from_scores(&pos, &neg);
    if let Some(grads) = grads {
        let mut dq = vec![0.0; q.len()];
        for (r, g) in positives
            .iter()
            .zip(&dpos)
            .chain(negatives.iter().zip(&dneg))
        {
            axpy(*g, rows.row(*r), &mut dq);
        }
        let (dqbar, dprev) = step_backward(params, &input, &q, &dq, grads);
        axpy(1.0, &dprev, &mut grads.decoder.bos);
        backprop_query(params, &trace, &dqbar, grads);
    }
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &[u32]) -> Vec<TokenId> {
        v.iter().map(|&i| TokenId(i)).collect()
    }

    #[test]
    fn zero_decoder_gives_zero_state() {
        let mut p = ModelParams::init(12, 6, 0.5, 3, 0);
        p.decoder = DecoderParams::zeros(6);
        let h = decode_state(&p, &ids(&[4, 5, 6]), Prev::Bos).unwrap();
        assert!(h.iter().all(|&v| v == 0.0));
        let row = vec![0.3; 6];
        let h = decode_state(&p, &ids(&[7]), Prev::Row(&row)).unwrap();
        assert!(h.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn state_is_deterministic_and_tracks_prev() {
        let p = ModelParams::init(12, 6, 0.5, 3, 1);
        let q = ids(&[4, 5, 6]);
        assert_eq!(
            decode_state(&p, &q, Prev::Bos).unwrap(),
            decode_state(&p, &q, Prev::Bos).unwrap()
        );
        let a = vec![0.1; 6];
        let b = vec![-0.2; 6];
        assert_ne!(
            decode_state(&p, &q, Prev::Row(&a)).unwrap(),
            decode_state(&p, &q, Prev::Row(&b)).unwrap()
        );
    }

    #[test]
    fn query_embedding_is_the_bos_state() {
        let mut p = ModelParams::init(12, 6, 0.5, 3, 2);
        let q = ids(&[4, 9]);
        let e = query_embedding(&p, &q).unwrap();
        assert_eq!(e, decode_state(&p, &q, Prev::Bos).unwrap());
        p.decoder.proj.as_mut_slice()[0] += 0.5;
        assert_ne!(e, query_embedding(&p, &q).unwrap());
    }

    #[test]
    fn gr_example_equals_product_of_conditionals() {
        let p = ModelParams::init(12, 6, 0.5, 3, 3).with_vanilla_table();
        let table = p.output_table.clone().unwrap();
        let q = ids(&[4, 5, 6, 7]);
        let target = [8usize, 9, 10, 1];
        let loss = gr_example(&p, OutputRows::Table, &q, &target, None).unwrap();
        let mut prob = 1.0;
        let mut prev: Option<&[f64]> = None;
        for &t in &target {
            let h = decode_state(&p, &q, prev.map_or(Prev::Bos, Prev::Row)).unwrap();
            let z = table.matvec(&h);
            prob *= crate::linalg::softmax(&z)[t];
            prev = Some(table.row(t));
        }
        assert!((loss + prob.ln()).abs() < 1e-12);
    }
}
