//! Training loops: token-level contrastive pretraining and generative-retrieval
//! training over a frozen CE (with optional periodic CE rebuilds) or over a
//! trainable vanilla output table.
//!
//! Optimization is plain mini-batch gradient descent: mean over the batch, sum over
//! target steps, full softmax over every output row.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ce::{build_ce, CeConfig, CeMatrix, ClusterAssignment};
use crate::corpus::{Corpus, RetrievalExample, TargetMode, TokenId, Vocab};
use crate::error::{Error, Result};
use crate::linalg::mix_seed;
use crate::loss::LossVariant;
use crate::model::{contrastive_example, gr_example, ModelGrads, ModelParams, OutputRows};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Vanilla,
    #[default]
    NpBase,
    NpAsync,
    NpContra,
}

impl TrainMode {
    pub fn uses_ce(self) -> bool {
        self != TrainMode::Vanilla
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(Self::Vanilla),
            "np_base" => Ok(Self::NpBase),
            "np_async" => Ok(Self::NpAsync),
            "np_contra" => Ok(Self::NpContra),
            other => Err(Error::invalid(format!("unknown training mode {other:?}"))),
        }
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Vanilla => "vanilla",
            Self::NpBase => "np_base",
            Self::NpAsync => "np_async",
            Self::NpContra => "np_contra",
        })
    }
}

pub const DEFAULT_LEARNING_RATE: f64 = 1e-2;
pub const DEFAULT_ASYNC_PERIOD: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Rebuild the CE every this many epochs (`np_async`); 0 disables rebuilds.
    pub async_period: usize,
    pub loss_variant: LossVariant,
    pub mode: TrainMode,
    /// Epochs of contrastive pretraining (`np_contra`).
    pub contrastive_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: DEFAULT_LEARNING_RATE,
            epochs: 50,
            batch_size: 16,
            async_period: DEFAULT_ASYNC_PERIOD,
            loss_variant: LossVariant::V3,
            mode: TrainMode::NpBase,
            contrastive_epochs: 20,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(
                "learning rate must be a non-negative finite number",
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        Ok(())
    }

    /// Epoch boundaries (1-based) after which the CE is rebuilt.
    pub fn rebuild_epochs(&self) -> Vec<usize> {
        if self.mode != TrainMode::NpAsync || self.async_period == 0 {
            return Vec::new();
        }
        (1..=self.epochs)
            .filter(|e| e % self.async_period == 0)
            .collect()
    }
}

/// One (query, gold document) training pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainPair {
    pub query: Vec<TokenId>,
    pub doc: usize,
    /// Index of the source example; pairs of the same example are never negatives
    /// of one another.
    pub example: usize,
}

/// Expands every example into one pair per provenance document.
pub fn training_pairs(
    examples: &[RetrievalExample],
    corpus: &Corpus,
    vocab: &Vocab,
) -> Result<Vec<TrainPair>> {
    let mut out = Vec::new();
    for (i, ex) in examples.iter().enumerate() {
        let query = vocab.tokenize(&ex.query);
        if query.is_empty() {
            return Err(Error::invalid(format!("example {i} has an empty query")));
        }
        for id in &ex.provenance {
            let doc = corpus
                .ordinal_of(id)
                .ok_or_else(|| Error::invalid(format!("unknown provenance doc_id {id:?}")))?;
            out.push(TrainPair {
                query: query.clone(),
                doc,
                example: i,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// Final CE and assignment (np modes).
    pub ce: Option<(CeMatrix, ClusterAssignment)>,
    /// Mean generative loss per epoch, before the epoch's first update.
    pub epoch_losses: Vec<f64>,
    pub contrastive_losses: Vec<f64>,
    pub rebuilds: usize,
}

fn batches(n: usize, batch: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x7000 + epoch as u64));
    order.shuffle(&mut rng);
    order.chunks(batch).map(<[usize]>::to_vec).collect()
}

fn target_rows(
    mode: TrainMode,
    vocab: &Vocab,
    corpus: &Corpus,
    target_mode: TargetMode,
    ce: Option<&(CeMatrix, ClusterAssignment)>,
    doc: usize,
) -> Result<Vec<usize>> {
    let target = vocab.target(corpus, doc, target_mode);
    match (mode.uses_ce(), ce) {
        (true, Some((ce, asg))) => asg.target_rows(ce, doc, target.body().len()),
        (true, None) => Err(Error::invalid("np training needs a CE")),
        (false, _) => Ok(target.tokens.iter().map(|t| t.index()).collect()),
    }
}

/// Mean generative loss over all pairs at the current parameters.
pub fn mean_gr_loss(
    params: &ModelParams,
    pairs: &[TrainPair],
    rows: OutputRows<'_>,
    targets: &[Vec<usize>],
) -> Result<f64> {
    let mut total = 0.0;
    for (p, t) in pairs.iter().zip(targets) {
        total += gr_example(params, rows, &p.query, t, None)?;
    }
    Ok(total / pairs.len().max(1) as f64)
}

/// Generative-retrieval training. In np modes `ce` is frozen,
/// except that `np_async` rebuilds it from the current encoder at every scheduled
/// epoch boundary.
#[allow(clippy::too_many_arguments)]
pub fn train_generative(
    mut params: ModelParams,
    pairs: &[TrainPair],
    corpus: &Corpus,
    vocab: &Vocab,
    ce_config: &CeConfig,
    config: &TrainConfig,
    mut ce: Option<(CeMatrix, ClusterAssignment)>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(Error::invalid("no training pairs"));
    }
    if config.mode == TrainMode::Vanilla && params.output_table.is_none() {
        params = params.with_vanilla_table();
    }
    let rebuild_at: BTreeSet<usize> = config.rebuild_epochs().into_iter().collect();
    let remap = |ce: Option<&(CeMatrix, ClusterAssignment)>| -> Result<Vec<Vec<usize>>> {
        pairs
            .iter()
            .map(|p| target_rows(config.mode, vocab, corpus, ce_config.target_mode, ce, p.doc))
            .collect()
    };
    let mut targets = remap(ce.as_ref())?;
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut rebuilds = 0;
    for epoch in 1..=config.epochs {
        let rows = match &ce {
            Some((m, _)) if config.mode.uses_ce() => OutputRows::Frozen(m.vectors()),
            _ => OutputRows::Table,
        };
        let mut epoch_total = 0.0;
        for batch in batches(pairs.len(), config.batch_size, config.seed, epoch) {
            let mut grads = ModelGrads::zeros_like(&params);
            for &i in &batch {
                epoch_total += gr_example(
                    &params,
                    rows,
                    &pairs[i].query,
                    &targets[i],
                    Some(&mut grads),
                )?;
            }
            grads.scale(1.0 / batch.len() as f64);
            params.apply(&grads, config.learning_rate);
            if !params.is_finite() {
                return Err(Error::Numeric(format!(
                    "parameters diverged in epoch {epoch}"
                )));
            }
        }
        epoch_losses.push(epoch_total / pairs.len() as f64);
        if rebuild_at.contains(&epoch) {
            ce = Some(build_ce(corpus, vocab, &params.embedder, ce_config)?);
            targets = remap(ce.as_ref())?;
            rebuilds += 1;
        }
    }
    Ok(TrainOutcome {
        params,
        ce,
        epoch_losses,
        contrastive_losses: Vec::new(),
        rebuilds,
    })
}

/// A contrastive training unit: one query with its positive rows.
#[derive(Debug, Clone)]
struct ContrastUnit {
    pair: usize,
    positives: Vec<usize>,
}

fn contrast_units(targets: &[Vec<usize>], variant: LossVariant) -> Vec<ContrastUnit> {
    let mut out = Vec::new();
    for (i, t) in targets.iter().enumerate() {
        let body = &t[..t.len() - 1];
        match variant {
            LossVariant::V3 => {
                let mut rows: Vec<usize> = body.to_vec();
                rows.sort_unstable();
                rows.dedup();
                out.push(ContrastUnit {
                    pair: i,
                    positives: rows,
                });
            }
            LossVariant::V1 | LossVariant::V2 => {
                let mut seen = BTreeSet::new();
                for &r in body {
                    if seen.insert(r) {
                        out.push(ContrastUnit {
                            pair: i,
                            positives: vec![r],
                        });
                    }
                }
            }
        }
    }
    out
}

/// Negatives of `unit` within `batch` for the given variant.
fn negatives_for(
    unit: &ContrastUnit,
    batch: &[&ContrastUnit],
    pairs: &[TrainPair],
    targets: &[Vec<usize>],
    ce_rows: usize,
    variant: LossVariant,
) -> Vec<usize> {
    match variant {
        LossVariant::V2 | LossVariant::V3 => {
            let pos: BTreeSet<usize> = unit.positives.iter().copied().collect();
            (0..ce_rows).filter(|r| !pos.contains(r)).collect()
        }
        LossVariant::V1 => {
            let example = pairs[unit.pair].example;
            let own: BTreeSet<usize> = pairs
                .iter()
                .zip(targets)
                .filter(|(p, _)| p.example == example)
                .flat_map(|(_, t)| t[..t.len() - 1].iter().copied())
                .collect();
            let mut neg: BTreeSet<usize> = BTreeSet::new();
            for other in batch {
                if pairs[other.pair].example != example {
                    neg.extend(other.positives.iter().filter(|r| !own.contains(r)));
                }
            }
            neg.into_iter().collect()
        }
    }
}

/// Token-level contrastive training of the first decoder output against a frozen CE.
#[allow(clippy::too_many_arguments)]
pub fn train_contrastive(
    mut params: ModelParams,
    pairs: &[TrainPair],
    ce: &CeMatrix,
    assignment: &ClusterAssignment,
    corpus: &Corpus,
    vocab: &Vocab,
    target_mode: TargetMode,
    config: &TrainConfig,
) -> Result<(ModelParams, Vec<f64>)> {
    config.validate()?;
    let targets: Vec<Vec<usize>> = pairs
        .iter()
        .map(|p| {
            let body = vocab.target(corpus, p.doc, target_mode).body().len();
            assignment.target_rows(ce, p.doc, body)
        })
        .collect::<Result<_>>()?;
    let units = contrast_units(&targets, config.loss_variant);
    let mut losses = Vec::with_capacity(config.contrastive_epochs);
    for epoch in 1..=config.contrastive_epochs {
        let mut total = 0.0;
        for batch in batches(
            units.len(),
            config.batch_size,
            mix_seed(config.seed, 0xC0),
            epoch,
        ) {
            let members: Vec<&ContrastUnit> = batch.iter().map(|&i| &units[i]).collect();
            let mut grads = ModelGrads::zeros_like(&params);
            for unit in &members {
                let neg = negatives_for(
                    unit,
                    &members,
                    pairs,
                    &targets,
                    ce.len(),
                    config.loss_variant,
                );
                total += contrastive_example(
                    &params,
                    ce.vectors(),
                    &pairs[unit.pair].query,
                    &unit.positives,
                    &neg,
                    config.loss_variant,
                    Some(&mut grads),
                )?;
            }
            grads.scale(1.0 / members.len() as f64);
            params.apply(&grads, config.learning_rate);
            if !params.is_finite() {
                return Err(Error::Numeric(format!(
                    "contrastive training diverged in epoch {epoch}"
                )));
            }
        }
        losses.push(total / units.len().max(1) as f64);
    }
    Ok((params, losses))
}

/// Runs the full schedule for `config.mode` starting from `params`.
///
/// * `vanilla`: generative training over a trainable per-token table.
/// * `np_base`: CE built once from the initial encoder, then frozen.
/// * `np_async`: as `np_base`, with CE rebuilds every `async_period` epochs.
/// * `np_contra`: contrastive pretraining against the initial CE, a CE rebuild from
///   the trained encoder, then generative training.
pub fn train(
    params: ModelParams,
    pairs: &[TrainPair],
    corpus: &Corpus,
    vocab: &Vocab,
    ce_config: &CeConfig,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    match config.mode {
        TrainMode::Vanilla => {
            train_generative(params, pairs, corpus, vocab, ce_config, config, None)
        }
        TrainMode::NpBase | TrainMode::NpAsync => {
            let ce = build_ce(corpus, vocab, &params.embedder, ce_config)?;
            train_generative(params, pairs, corpus, vocab, ce_config, config, Some(ce))
        }
        TrainMode::NpContra => {
            let (ce, asg) = build_ce(corpus, vocab, &params.embedder, ce_config)?;
            let (params, contrastive_losses) = train_contrastive(
                params,
                pairs,
                &ce,
                &asg,
                corpus,
                vocab,
                ce_config.target_mode,
                config,
            )?;
            let ce = build_ce(corpus, vocab, &params.embedder, ce_config)?;
            let mut out =
                train_generative(params, pairs, corpus, vocab, ce_config, config, Some(ce))?;
            out.contrastive_losses = contrastive_losses;
            Ok(out)
        }
    }
}
