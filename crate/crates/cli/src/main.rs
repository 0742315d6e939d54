//! `npdec`: build vocabularies and CE matrices, train, decode and evaluate.

mod config;

use std::collections::BTreeSet;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use np_decoding::ce::{
    build_ce, build_ce_from_occurrences, dump_clusters, load_ce, save_ce, storage_report, CeConfig,
    ContextMode, StorageReport, DEFAULT_K, DEFAULT_KMEANS_ITERS, SPECIAL_TOKENS,
};
use np_decoding::checkpoint::{load_checkpoint, save_checkpoint};
use np_decoding::corpus::{load_examples, save_examples, Corpus, TargetMode, Vocab};
use np_decoding::decoder::{flatten_pairs, multihop_retrieve, Decoding, DEFAULT_BEAM};
use np_decoding::embedder::{import_embeddings, DEFAULT_DIM, DEFAULT_LAMBDA, DEFAULT_WINDOW};
use np_decoding::eval::{
    evaluate_run, lexical_overlap_split, load_results, save_results, Metric, RankedResult,
    ScoredDoc,
};
use np_decoding::gradcheck::{CheckInstance, CheckedLoss, DEFAULT_EPSILON};
use np_decoding::loss::LossVariant;
use np_decoding::model::ModelParams;
use np_decoding::pipeline::decode_examples;
use np_decoding::synth::{chain_corpus, homograph_corpus, SynthConfig};
use np_decoding::training::{
    train, train_generative, training_pairs, TrainConfig, TrainMode, DEFAULT_ASYNC_PERIOD,
};
use np_decoding::trie::PrefixTrie;
use np_decoding::Error;

use config::FileConfig;

const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(
    name = "npdec",
    version,
    about = "Nonparametric decoding for generative retrieval"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the surface vocabulary of a corpus.
    BuildVocab(BuildVocabArgs),
    /// Build the contextualized embedding matrix (CE).
    BuildCe(BuildCeArgs),
    /// Train a retrieval model and write a checkpoint.
    Train(TrainArgs),
    /// Retrieve documents for every query with constrained beam search.
    Decode(DecodeArgs),
    /// Score a results file against gold provenance.
    Eval(EvalArgs),
    /// Print the storage footprint of a CE.
    ReportStorage(ReportStorageArgs),
    /// List the occurrences clustered into each row of a token.
    DumpClusters(DumpClustersArgs),
    /// Write the synthetic homograph corpus (or the chained multi-hop corpus).
    GenSynth(GenSynthArgs),
    /// Verify analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
struct ConfigArg {
    /// Flat TOML config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EncoderArgs {
    /// Encoder checkpoint; when absent the encoder is initialised from the seed.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct CeArgs {
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    kmeans_iters: Option<usize>,
    #[arg(long)]
    kmeans_seed: Option<u64>,
    /// title_plus_content | title
    #[arg(long)]
    context_mode: Option<String>,
}

#[derive(Debug, Args)]
struct BuildVocabArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// title | docid
    #[arg(long = "mode")]
    target_mode: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BuildCeArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// title | docid
    #[arg(long = "mode")]
    target_mode: Option<String>,
    #[command(flatten)]
    ce: CeArgs,
    #[command(flatten)]
    encoder: EncoderArgs,
    /// External embedding dump (NPDUMP1) to cluster instead of running the encoder.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    examples: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Initial CE; built from the initial encoder when absent.
    #[arg(long)]
    ce: Option<PathBuf>,
    /// Where to write the final CE (default: `<out>.ce`).
    #[arg(long)]
    ce_out: Option<PathBuf>,
    /// vanilla | np_base | np_async | np_contra
    #[arg(long)]
    mode: Option<String>,
    /// title | docid
    #[arg(long)]
    target_mode: Option<String>,
    #[command(flatten)]
    ce_args: CeArgs,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    async_period: Option<usize>,
    /// v1 | v2 | v3
    #[arg(long)]
    loss_variant: Option<String>,
    #[arg(long)]
    contrastive_epochs: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DecodeArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    examples: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// CE to decode over; without it the checkpoint's vanilla table is used.
    #[arg(long)]
    ce: Option<PathBuf>,
    #[arg(long)]
    target_mode: Option<String>,
    #[arg(long)]
    beam: Option<usize>,
    #[arg(long)]
    topn: Option<usize>,
    #[arg(long)]
    hops: Option<usize>,
    /// Drop hop-2 documents equal to their hop-1 document.
    #[arg(long)]
    dedup: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    examples: Option<PathBuf>,
    #[arg(long)]
    results: Option<PathBuf>,
    /// Comma-separated list of rprec, hits@N, recall@K.
    #[arg(long)]
    metrics: Option<String>,
    /// Add low/high lexical-overlap breakdown rows.
    #[arg(long)]
    split_overlap: bool,
    #[arg(long)]
    target_mode: Option<String>,
}

#[derive(Debug, Args)]
struct ReportStorageArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    ce: Option<PathBuf>,
    /// Report hypothetical counts instead of a CE file: rows.
    #[arg(long, requires_all = ["dim", "occurrences", "distinct"], conflicts_with = "ce")]
    rows: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    occurrences: Option<u64>,
    #[arg(long)]
    distinct: Option<u64>,
}

#[derive(Debug, Args)]
struct DumpClustersArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    ce: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    target_mode: Option<String>,
    #[arg(long)]
    token: Option<String>,
}

#[derive(Debug, Args)]
struct GenSynthArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Write the three-document chained corpus instead.
    #[arg(long)]
    chain: bool,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    instances: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epsilon: Option<f64>,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Core(e) if e.is_numeric() => 3,
            Failure::Core(_) => 2,
        }
    }
}

impl Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "usage: {m}"),
            Failure::Core(e) => write!(f, "{e}"),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn required<T>(value: Option<T>, key: &str) -> Result<T, Failure> {
    value.ok_or_else(|| Failure::Usage(format!("--{} is required", key.replace('_', "-"))))
}

fn parse_enum<T: FromStr<Err = Error>>(value: Option<String>, default: T) -> Result<T, Failure> {
    value.map_or(Ok(default), |s| {
        s.parse().map_err(|e: Error| Failure::Usage(e.to_string()))
    })
}

fn load_vocab(path: Option<PathBuf>, corpus: &Corpus, mode: TargetMode) -> Result<Vocab, Error> {
    match path {
        Some(p) => Vocab::load(p),
        None => Vocab::build(corpus, mode),
    }
}

fn ce_config(
    args: CeArgs,
    file: &FileConfig,
    target_mode: TargetMode,
    seed: u64,
) -> Result<CeConfig, Failure> {
    Ok(CeConfig {
        k_clusters: args.k.or(file.k).unwrap_or(DEFAULT_K),
        kmeans_iters: args
            .kmeans_iters
            .or(file.kmeans_iters)
            .unwrap_or(DEFAULT_KMEANS_ITERS),
        kmeans_seed: args.kmeans_seed.or(file.kmeans_seed).unwrap_or(seed),
        context_mode: parse_enum(
            args.context_mode.or(file.context_mode.clone()),
            ContextMode::TitlePlusContent,
        )?,
        target_mode,
    })
}

fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::BuildVocab(a) => build_vocab(a),
        Command::BuildCe(a) => build_ce_cmd(a),
        Command::Train(a) => train_cmd(a),
        Command::Decode(a) => decode_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::ReportStorage(a) => report_storage(a),
        Command::DumpClusters(a) => dump_clusters_cmd(a),
        Command::GenSynth(a) => gen_synth(a),
        Command::Gradcheck(a) => gradcheck(a),
    }
}

fn build_vocab(a: BuildVocabArgs) -> CmdResult {
    let file = FileConfig::load_optional(a.config.config.as_deref())?;
    let corpus = Corpus::load(required(a.corpus.or(file.corpus), "corpus")?)?;
    let mode = parse_enum(a.target_mode.or(file.target_mode), TargetMode::Title)?;
    let out = required(a.out.or(file.out), "out")?;
    let vocab = Vocab::build(&corpus, mode)?;
    vocab.save(&out)?;
    println!("vocab\t{}\t{}", vocab.len(), out.display());
    Ok(())
}

struct Encoder {
    params: ModelParams,
    seed: u64,
}

fn encoder(a: EncoderArgs, file: &FileConfig, vocab: &Vocab) -> Result<Encoder, Failure> {
    let seed = a.seed.or(file.seed).unwrap_or(0);
    let params = match a.checkpoint.or(file.checkpoint.clone()) {
        Some(p) => load_checkpoint(p)?,
        None => ModelParams::init(
            vocab.len(),
            a.dim.or(file.dim).unwrap_or(DEFAULT_DIM),
            a.lambda.or(file.lambda).unwrap_or(DEFAULT_LAMBDA),
            a.window.or(file.window).unwrap_or(DEFAULT_WINDOW),
            seed,
        ),
    };
    if params.embedder.vocab_size() != vocab.len() {
        return Err(Failure::Core(Error::invalid(format!(
            "encoder vocabulary has {} tokens, corpus vocabulary has {}",
            params.embedder.vocab_size(),
            vocab.len()
        ))));
    }
    params.embedder.validate()?;
    Ok(Encoder { params, seed })
}

fn build_ce_cmd(a: BuildCeArgs) -> CmdResult {
    let file = FileConfig::load_optional(a.config.config.as_deref())?;
    let corpus = Corpus::load(required(a.corpus.or(file.corpus.clone()), "corpus")?)?;
    let target_mode = parse_enum(
        a.target_mode.or(file.target_mode.clone()),
        TargetMode::Title,
    )?;
    let vocab = load_vocab(a.vocab.or(file.vocab.clone()), &corpus, target_mode)?;
    let out = required(a.out.or(file.out.clone()), "out")?;
    let enc = encoder(a.encoder, &file, &vocab)?;
    let config = ce_config(a.ce, &file, target_mode, enc.seed)?;
    let (ce, asg) = match a.embeddings.or(file.embeddings.clone()) {
        Some(dump) => {
            let occs = import_embeddings(dump, &vocab)?;
            let specials = SPECIAL_TOKENS
                .iter()
                .map(|&t| (t, enc.params.embedder.special_row(t)))
                .collect();
            build_ce_from_occurrences(&occs, specials, &config)?
        }
        None => build_ce(&corpus, &vocab, &enc.params.embedder, &config)?,
    };
    save_ce(&out, &ce, &asg)?;
    println!("ce\t{}\t{}\t{}", ce.len(), ce.dim(), out.display());
    Ok(())
}

/// Resolved training run, echoed next to the checkpoint.
#[derive(Debug, Serialize)]
struct RunRecord {
    corpus: PathBuf,
    examples: PathBuf,
    mode: String,
    target_mode: String,
    context_mode: String,
    k: usize,
    kmeans_iters: usize,
    kmeans_seed: u64,
    dim: usize,
    lambda: f64,
    window: usize,
    seed: u64,
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    async_period: usize,
    loss_variant: String,
    contrastive_epochs: usize,
    rebuilds: usize,
    final_loss: f64,
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn train_cmd(a: TrainArgs) -> CmdResult {
    let file = FileConfig::load_optional(a.config.config.as_deref())?;
    let corpus_path = required(a.corpus.or(file.corpus.clone()), "corpus")?;
    let examples_path = required(a.examples.or(file.examples.clone()), "examples")?;
    let out = required(a.out.or(file.out.clone()), "out")?;
    let target_mode = parse_enum(
        a.target_mode.or(file.target_mode.clone()),
        TargetMode::Title,
    )?;
    let defaults = TrainConfig::default();
    let seed = a.seed.or(file.seed).unwrap_or(0);
    let cfg = TrainConfig {
        learning_rate: a
            .learning_rate
            .or(file.learning_rate)
            .unwrap_or(defaults.learning_rate),
        epochs: a.epochs.or(file.epochs).unwrap_or(defaults.epochs),
        batch_size: a
            .batch_size
            .or(file.batch_size)
            .unwrap_or(defaults.batch_size),
        async_period: a
            .async_period
            .or(file.async_period)
            .unwrap_or(DEFAULT_ASYNC_PERIOD),
        loss_variant: parse_enum(
            a.loss_variant.or(file.loss_variant.clone()),
            LossVariant::V3,
        )?,
        mode: parse_enum(a.mode.or(file.mode.clone()), TrainMode::NpBase)?,
        contrastive_epochs: a
            .contrastive_epochs
            .or(file.contrastive_epochs)
            .unwrap_or(defaults.contrastive_epochs),
        seed,
    };
    cfg.validate()?;
    let ce_cfg = ce_config(a.ce_args, &file, target_mode, seed)?;
    let dim = a.dim.or(file.dim).unwrap_or(DEFAULT_DIM);
    let lambda = a.lambda.or(file.lambda).unwrap_or(DEFAULT_LAMBDA);
    let window = a.window.or(file.window).unwrap_or(DEFAULT_WINDOW);
    let corpus = Corpus::load(&corpus_path)?;
    let examples = load_examples(&examples_path, &corpus)?;
    let vocab = load_vocab(a.vocab.or(file.vocab.clone()), &corpus, target_mode)?;
    let params = ModelParams::init(vocab.len(), dim, lambda, window, seed);
    params.embedder.validate()?;
    let pairs = training_pairs(&examples, &corpus, &vocab)?;
    let initial_ce = a.ce.or(file.ce.clone());
    let outcome = match (cfg.mode, initial_ce) {
        (TrainMode::NpBase | TrainMode::NpAsync, Some(path)) => {
            let ce = load_ce(path)?;
            if ce.0.dim() != dim {
                return Err(Failure::Core(Error::invalid(
                    "CE dimension does not match --dim",
                )));
            }
            train_generative(params, &pairs, &corpus, &vocab, &ce_cfg, &cfg, Some(ce))?
        }
        _ => train(params, &pairs, &corpus, &vocab, &ce_cfg, &cfg)?,
    };
    save_checkpoint(&out, &outcome.params)?;
    if let Some((ce, asg)) = &outcome.ce {
        let ce_out = a
            .ce_out
            .or(file.ce_out.clone())
            .unwrap_or_else(|| sidecar(&out, ".ce"));
        save_ce(&ce_out, ce, asg)?;
        println!("ce\t{}", ce_out.display());
    }
    let final_loss = outcome.epoch_losses.last().copied().unwrap_or(f64::NAN);
    let record = RunRecord {
        corpus: corpus_path,
        examples: examples_path,
        mode: cfg.mode.to_string(),
        target_mode: target_mode.to_string(),
        context_mode: ce_cfg.context_mode.to_string(),
        k: ce_cfg.k_clusters,
        kmeans_iters: ce_cfg.kmeans_iters,
        kmeans_seed: ce_cfg.kmeans_seed,
        dim,
        lambda,
        window,
        seed,
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        learning_rate: cfg.learning_rate,
        async_period: cfg.async_period,
        loss_variant: cfg.loss_variant.to_string(),
        contrastive_epochs: cfg.contrastive_epochs,
        rebuilds: outcome.rebuilds,
        final_loss,
    };
    let record_path = sidecar(&out, ".config.toml");
    let text =
        toml::to_string(&record).map_err(|e| Failure::Core(Error::invalid(e.to_string())))?;
    fs::write(&record_path, text).map_err(|e| Error::io(&record_path, e))?;
    println!("checkpoint\t{}", out.display());
    println!("final_loss\t{final_loss:.6}");
    println!("rebuilds\t{}", outcome.rebuilds);
    Ok(())
}

fn decode_cmd(a: DecodeArgs) -> CmdResult {
    let file = FileConfig::load_optional(a.config.config.as_deref())?;
    let corpus = Corpus::load(required(a.corpus.or(file.corpus.clone()), "corpus")?)?;
    let examples = load_examples(
        required(a.examples.or(file.examples.clone()), "examples")?,
        &corpus,
    )?;
    let target_mode = parse_enum(
        a.target_mode.or(file.target_mode.clone()),
        TargetMode::Title,
    )?;
    let vocab = load_vocab(a.vocab.or(file.vocab.clone()), &corpus, target_mode)?;
    let params = load_checkpoint(required(
        a.checkpoint.or(file.checkpoint.clone()),
        "checkpoint",
    )?)?;
    let out = required(a.out.or(file.out.clone()), "out")?;
    let beam = a.beam.or(file.beam).unwrap_or(DEFAULT_BEAM);
    let topn = a.topn.or(file.topn).unwrap_or(DEFAULT_BEAM);
    let hops = a.hops.or(file.hops).unwrap_or(1);
    let dedup = a.dedup || file.dedup.unwrap_or(false);
    if !(1..=2).contains(&hops) {
        return Err(Failure::Usage("--hops must be 1 or 2".into()));
    }
    let trie = PrefixTrie::build(&vocab.targets(&corpus, target_mode), &vocab)?;
    let ce = a.ce.or(file.ce.clone()).map(load_ce).transpose()?;
    let decoding = match (&ce, &params.output_table) {
        (Some((ce, _)), _) => Decoding::Contextual(ce),
        (None, Some(table)) => Decoding::Vanilla(table),
        (None, None) => return Err(Failure::Usage("--ce is required for np checkpoints".into())),
    };
    let results = if hops == 1 {
        decode_examples(
            &params, decoding, &examples, &trie, &corpus, &vocab, beam, topn,
        )?
    } else {
        examples
            .iter()
            .map(|ex| {
                let q = vocab.tokenize(&ex.query);
                let pairs = multihop_retrieve(
                    &params,
                    decoding,
                    &q,
                    &trie,
                    &corpus,
                    &vocab,
                    beam,
                    beam * beam,
                    dedup,
                )?;
                let ranked = flatten_pairs(&pairs)
                    .into_iter()
                    .take(topn)
                    .map(|(_, doc_id, score)| ScoredDoc { doc_id, score })
                    .collect();
                Ok(RankedResult {
                    query: ex.query.clone(),
                    ranked,
                })
            })
            .collect::<Result<Vec<_>, Error>>()?
    };
    save_results(&out, &results)?;
    println!("results\t{}\t{}", results.len(), out.display());
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> CmdResult {
    let file = FileConfig::load_optional(a.config.config.as_deref())?;
    let corpus = Corpus::load(required(a.corpus.or(file.corpus.clone()), "corpus")?)?;
    let examples = load_examples(
        required(a.examples.or(file.examples.clone()), "examples")?,
        &corpus,
    )?;
    let results = load_results(required(a.results.or(file.results.clone()), "results")?)?;
    let metrics = Metric::parse_list(
        &a.metrics
            .or(file.metrics.clone())
            .unwrap_or_else(|| "rprec".into()),
    )
    .map_err(|e| Failure::Usage(e.to_string()))?;
    let target_mode = parse_enum(
        a.target_mode.or(file.target_mode.clone()),
        TargetMode::Title,
    )?;
    let split = if a.split_overlap || file.split_overlap.unwrap_or(false) {
        Some(lexical_overlap_split(&examples, &corpus, target_mode)?)
    } else {
        None
    };
    let report = evaluate_run(&results, &examples, &metrics, split.as_ref())?;
    print!("{report}");
    Ok(())
}

fn report_storage(a: ReportStorageArgs) -> CmdResult {
    let file = FileConfig::load_optional(a.config.config.as_deref())?;
    let report = match a.rows {
        Some(rows) => StorageReport::from_counts(
            rows,
            required(a.dim, "dim")?,
            required(a.occurrences, "occurrences")?,
            required(a.distinct, "distinct")?,
        ),
        None => {
            let (ce, asg) = load_ce(required(a.ce.or(file.ce), "ce")?)?;
            storage_report(&ce, &asg)
        }
    };
    println!("{report}");
    Ok(())
}

fn dump_clusters_cmd(a: DumpClustersArgs) -> CmdResult {
    let file = FileConfig::load_optional(a.config.config.as_deref())?;
    let corpus = Corpus::load(required(a.corpus.or(file.corpus.clone()), "corpus")?)?;
    let target_mode = parse_enum(
        a.target_mode.or(file.target_mode.clone()),
        TargetMode::Title,
    )?;
    let vocab = load_vocab(a.vocab.or(file.vocab.clone()), &corpus, target_mode)?;
    let (ce, asg) = load_ce(required(a.ce.or(file.ce.clone()), "ce")?)?;
    let token = required(a.token.or(file.token.clone()), "token")?;
    print!("{}", dump_clusters(&ce, &asg, &corpus, &vocab, &token)?);
    Ok(())
}

fn gen_synth(a: GenSynthArgs) -> CmdResult {
    let file = FileConfig::load_optional(a.config.config.as_deref())?;
    let dir = required(a.out_dir.or(file.out_dir), "out_dir")?;
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    if a.chain {
        let (corpus, queries) = chain_corpus();
        corpus.save(dir.join("corpus.jsonl"))?;
        save_examples(dir.join("queries.jsonl"), &queries)?;
        println!("chain\t{}\t{}", corpus.len(), dir.display());
        return Ok(());
    }
    let cfg = SynthConfig {
        seed: a.seed.or(file.seed).unwrap_or(0),
        ..SynthConfig::default()
    };
    let data = homograph_corpus(&cfg)?;
    data.corpus.save(dir.join("corpus.jsonl"))?;
    save_examples(dir.join("train.jsonl"), &data.train)?;
    save_examples(dir.join("test.jsonl"), &data.test)?;
    let heads: BTreeSet<&str> = data.homographs.iter().map(|(h, _)| h.as_str()).collect();
    println!(
        "synth\t{} docs\t{} train\t{} test\t{} homographs\t{}",
        data.corpus.len(),
        data.train.len(),
        data.test.len(),
        heads.len(),
        dir.display()
    );
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> CmdResult {
    let file = FileConfig::load_optional(a.config.config.as_deref())?;
    let instances = a.instances.or(file.instances).unwrap_or(20);
    let seed = a.seed.or(file.seed).unwrap_or(0);
    let epsilon = a.epsilon.or(file.epsilon).unwrap_or(DEFAULT_EPSILON);
    let losses = [
        ("gr_loss", CheckedLoss::Generative),
        ("gr_loss_vanilla", CheckedLoss::GenerativeVanilla),
        ("contrastive_v1", CheckedLoss::Contrastive(LossVariant::V1)),
        ("contrastive_v2", CheckedLoss::Contrastive(LossVariant::V2)),
        ("contrastive_v3", CheckedLoss::Contrastive(LossVariant::V3)),
    ];
    let mut worst_overall: f64 = 0.0;
    for (name, loss) in losses {
        let mut worst: f64 = 0.0;
        for i in 0..instances {
            let r = CheckInstance::random(loss, seed.wrapping_add(i as u64)).check(epsilon)?;
            worst = worst.max(r.max_relative_error);
        }
        println!("{name}\t{worst:.3e}\t{instances}");
        worst_overall = worst_overall.max(worst);
    }
    if worst_overall >= GRADCHECK_TOLERANCE {
        return Err(Failure::Core(Error::Numeric(format!(
            "max relative error {worst_overall:.3e} exceeds {GRADCHECK_TOLERANCE:e}"
        ))));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("npdec: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
