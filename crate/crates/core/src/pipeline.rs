//! End-to-end experiment runner: build CE, train, decode the test queries and score.

use serde::{Deserialize, Serialize};

use crate::ce::CeConfig;
use crate::corpus::{Corpus, RetrievalExample, Vocab};
use crate::decoder::{retrieve, Decoding, DEFAULT_BEAM};
use crate::embedder::{DEFAULT_DIM, DEFAULT_LAMBDA, DEFAULT_WINDOW};
use crate::error::{Error, Result};
use crate::eval::{evaluate_run, Metric, RankedResult, Report, ScoredDoc};
use crate::model::ModelParams;
use crate::training::{train, training_pairs, TrainConfig, TrainOutcome};
use crate::trie::PrefixTrie;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dim: usize,
    pub lambda: f64,
    pub window: usize,
    pub ce: CeConfig,
    pub train: TrainConfig,
    pub beam: usize,
    pub topn: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dim: DEFAULT_DIM,
            lambda: DEFAULT_LAMBDA,
            window: DEFAULT_WINDOW,
            ce: CeConfig::default(),
            train: TrainConfig::default(),
            beam: DEFAULT_BEAM,
            topn: DEFAULT_BEAM,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub outcome: TrainOutcome,
    pub results: Vec<RankedResult>,
    pub report: Report,
}

impl Experiment {
    pub fn hits_at_1(&self) -> f64 {
        self.report.mean(Metric::Hits(1), None).unwrap_or(0.0)
    }
}

/// Decodes every example with the trained model.
#[allow(clippy::too_many_arguments)]
pub fn decode_examples(
    params: &ModelParams,
    decoding: Decoding<'_>,
    examples: &[RetrievalExample],
    trie: &PrefixTrie,
    corpus: &Corpus,
    vocab: &Vocab,
    beam: usize,
    topn: usize,
) -> Result<Vec<RankedResult>> {
    examples
        .iter()
        .map(|ex| {
            let query = vocab.tokenize(&ex.query);
            let ranked = retrieve(params, decoding, &query, trie, corpus, vocab, beam, topn)?
                .into_iter()
                .map(|r| ScoredDoc {
                    doc_id: r.doc_id,
                    score: r.log_prob,
                })
                .collect();
            Ok(RankedResult {
                query: ex.query.clone(),
                ranked,
            })
        })
        .collect()
}

/// Trains from seed-initialised parameters on `train_set` and evaluates on `test_set`.
pub fn run_experiment(
    corpus: &Corpus,
    train_set: &[RetrievalExample],
    test_set: &[RetrievalExample],
    cfg: &ExperimentConfig,
) -> Result<Experiment> {
    let vocab = Vocab::build(corpus, cfg.ce.target_mode)?;
    let params = ModelParams::init(vocab.len(), cfg.dim, cfg.lambda, cfg.window, cfg.train.seed);
    let pairs = training_pairs(train_set, corpus, &vocab)?;
    let outcome = train(params, &pairs, corpus, &vocab, &cfg.ce, &cfg.train)?;
    let trie = PrefixTrie::build(&vocab.targets(corpus, cfg.ce.target_mode), &vocab)?;
    let decoding = match (&outcome.ce, &outcome.params.output_table) {
        (Some((ce, _)), _) => Decoding::Contextual(ce),
        (None, Some(table)) => Decoding::Vanilla(table),
        (None, None) => return Err(Error::invalid("trained model has no output vocabulary")),
    };
    let results = decode_examples(
        &outcome.params,
        decoding,
        test_set,
        &trie,
        corpus,
        &vocab,
        cfg.beam,
        cfg.topn,
    )?;
    let report = evaluate_run(
        &results,
        test_set,
        &[Metric::Hits(1), Metric::RPrecision, Metric::Recall(10)],
        None,
    )?;
    Ok(Experiment {
        outcome,
        results,
        report,
    })
}
