//! Command-line front end: corpus generation, training, evaluation,
//! statistics and single-key prediction.

mod config;

pub use config::{merge_toml, ModelPreset, RunFile};

use crate::aspectfeat::AspectFlags;
use crate::docmodel::{load_corpus, AnnotatedPage, KeyIntent, LayoutCategory};
use crate::dualnet::{predict, train, write_metrics_log, ModelConfig, ModelError, ModelParams, TrainHistory};
use crate::evalkit::{
    cohen_kappa, component_stats, evaluate_docs, evaluate_parser_mode, hamming_loss, relation_ratio_stats, run_ablation, write_records,
    MetricRecord, StatsReport,
};
use crate::geoenc::PeVariant;
use crate::synthform::{generate_corpus, load_split, CorpusConfig, ProfileSet, Split, SplitCounts};
use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

pub const SEED_ENV: &str = "FORMPOINT_SEED";

#[derive(Debug, Parser)]
#[command(name = "formpoint", version, about = "Key-value extraction from form pages")]
pub struct Cli {
    /// TOML file with `seed`, `out`, `[corpus]` and `[model]` tables.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed. Falls back to the config file, then FORMPOINT_SEED, then 0.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run directory holding corpus/, params/, reports/ and config-echo/.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus.
    Generate(GenerateArgs),
    /// Train a model on the train split.
    Train(TrainArgs),
    /// Evaluate a trained model, optionally in parser mode or as an ablation grid.
    Evaluate(EvaluateArgs),
    /// Corpus statistics and annotator agreement.
    Stats(StatsArgs),
    /// Predict the value segment of one key on one page.
    Predict(PredictArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Digital documents, split 70/10/20 into train, val and test_digital.
    #[arg(long)]
    pub digital: Option<usize>,
    /// Printed-sim test documents.
    #[arg(long)]
    pub printed: Option<usize>,
    /// Handwritten-sim test documents.
    #[arg(long)]
    pub handwritten: Option<usize>,
    /// Exact train count; overrides the digital split.
    #[arg(long)]
    pub train: Option<usize>,
    /// Exact val count.
    #[arg(long)]
    pub val: Option<usize>,
    /// Exact test_digital count.
    #[arg(long)]
    pub test_digital: Option<usize>,
    /// Disable all noise before applying the overrides below.
    #[arg(long)]
    pub zero_noise: bool,
    #[command(flatten)]
    pub noise: NoiseArgs,
}

/// Overrides applied to the noise profile of every nature.
#[derive(Debug, Args, Default)]
pub struct NoiseArgs {
    /// Probability that a value is left blank.
    #[arg(long)]
    pub value_drop: Option<f64>,
    /// Per-character substitution rate on value texts.
    #[arg(long)]
    pub char_noise: Option<f64>,
    /// Standard deviation of per-box offsets, page units.
    #[arg(long)]
    pub bbox_jitter: Option<f64>,
    /// Standard deviation of the page rotation, degrees.
    #[arg(long)]
    pub rotation: Option<f64>,
    /// Probability that a pair uses the other alignment.
    #[arg(long)]
    pub flip_alignment: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    F32,
    F64,
}

/// Model and schedule overrides.
#[derive(Debug, Args, Default)]
pub struct ModelArgs {
    /// Base configuration the config file and flags are layered on.
    #[arg(long, value_enum)]
    pub preset: Option<ModelPreset>,
    /// Hidden width.
    #[arg(long)]
    pub d_model: Option<usize>,
    /// Fusion layers.
    #[arg(long)]
    pub dual_layers: Option<usize>,
    /// Attention heads.
    #[arg(long)]
    pub heads: Option<usize>,
    /// Feed-forward width.
    #[arg(long)]
    pub ffn_dim: Option<usize>,
    /// Entity encoder layers.
    #[arg(long)]
    pub entity_depth: Option<usize>,
    /// Token encoder layers.
    #[arg(long)]
    pub token_depth: Option<usize>,
    /// Token budget per page.
    #[arg(long)]
    pub max_tokens: Option<usize>,
    /// Positional grid resolution.
    #[arg(long)]
    pub xy_m: Option<usize>,
    /// Positional grid tiling factor.
    #[arg(long)]
    pub xy_n: Option<usize>,
    /// Aspect letters to keep, e.g. VTP or VTPDG.
    #[arg(long)]
    pub aspects: Option<AspectFlags>,
    /// Positional encoding: xy, linear or none.
    #[arg(long)]
    pub pe: Option<PeVariant>,
    /// Leave the key slot out of the fused sequence.
    #[arg(long)]
    pub no_key_in_sequence: bool,
    /// Leave the key embedding out of the scorer.
    #[arg(long)]
    pub no_key_in_scorer: bool,
    /// Dropout rate.
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Training epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Peak learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// SGD momentum.
    #[arg(long)]
    pub momentum: Option<f64>,
    /// Linear warmup steps.
    #[arg(long)]
    pub warmup_steps: Option<usize>,
    /// Global gradient-norm clip; 0 disables.
    #[arg(long)]
    pub clip_norm: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Corpus directory; defaults to <out>/corpus.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Scalar type used for training.
    #[arg(long, value_enum, default_value = "f32")]
    pub precision: Precision,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Parameter file; defaults to <out>/params/model.bin.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Splits to evaluate; defaults to every non-empty test split.
    #[arg(long = "split")]
    pub splits: Vec<String>,
    /// Re-segment pages with a simulated textline parser and score by IoU.
    #[arg(long)]
    pub parser_mode: bool,
    #[arg(long, default_value_t = 0.5)]
    pub iou: f64,
    #[arg(long, default_value_t = 0.0)]
    pub merge_rate: f64,
    #[arg(long, default_value_t = 0.0)]
    pub split_rate: f64,
    /// Ablation grid axis, `aspects=V,VT,VTP` or `pe=none,linear,xy`. Trains one model per cell.
    #[arg(long)]
    pub ablation: Vec<String>,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Two annotation files of the same pages; reports Cohen's kappa and Hamming loss over segment categories.
    #[arg(long = "labels", num_args = 1)]
    pub labels: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Annotation file holding the page.
    #[arg(long)]
    pub document: PathBuf,
    /// Document id inside the file; defaults to the first document.
    #[arg(long)]
    pub doc_id: Option<String>,
    /// Key intent name, e.g. com_nm.
    #[arg(long)]
    pub key: String,
    /// Key text to feed the model instead of the page's own key text.
    #[arg(long)]
    pub key_text: Option<String>,
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(m) => CliError::Usage(m),
            other => CliError::Runtime(other.into()),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

fn usage<T>(msg: impl Into<String>) -> Result<T, CliError> {
    Err(CliError::Usage(msg.into()))
}

/// Effective settings of a run after layering defaults, config file and flags.
struct RunContext {
    seed: u64,
    out: PathBuf,
    file: RunFile,
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                CliError::Usage(m) => eprintln!("error: {m}"),
                CliError::Runtime(err) => eprintln!("error: {err:#}"),
            }
            ExitCode::from(e.exit_code())
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(p) => RunFile::load(p).map_err(|e| CliError::Usage(format!("{e:#}")))?,
        None => RunFile::default(),
    };
    let env_seed = match std::env::var(SEED_ENV) {
        Ok(v) => Some(v.trim().parse::<u64>().map_err(|_| CliError::Usage(format!("{SEED_ENV}={v} is not an unsigned integer")))?),
        Err(_) => None,
    };
    let seed = cli.seed.or(file.seed).or(env_seed).unwrap_or(0);
    let out = cli.out.clone().or_else(|| file.out.clone()).unwrap_or_else(|| PathBuf::from("formpoint-out"));
    let ctx = RunContext { seed, out, file };
    match cli.command {
        Command::Generate(a) => cmd_generate(&ctx, &a),
        Command::Train(a) => cmd_train(&ctx, &a),
        Command::Evaluate(a) => cmd_evaluate(&ctx, &a),
        Command::Stats(a) => cmd_stats(&ctx, &a),
        Command::Predict(a) => cmd_predict(&ctx, &a),
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn echo_config<T: Serialize>(ctx: &RunContext, command: &str, echo: &T) -> anyhow::Result<()> {
    let text = toml::to_string_pretty(echo).context("serialising the config echo")?;
    write_file(&ctx.out.join("config-echo").join(format!("{command}.toml")), text)
}

fn corpus_dir(ctx: &RunContext, flag: &Option<PathBuf>) -> Result<PathBuf, CliError> {
    let dir = flag.clone().unwrap_or_else(|| ctx.out.join("corpus"));
    if !dir.is_dir() {
        return usage(format!("corpus directory {} does not exist", dir.display()));
    }
    Ok(dir)
}

fn load(dir: &Path, split: Split) -> anyhow::Result<Vec<AnnotatedPage>> {
    let path = dir.join(format!("{}.json", split.name()));
    if !path.exists() {
        return Ok(Vec::new());
    }
    load_split(dir, split).with_context(|| format!("loading {}", path.display()))
}

fn params_path(ctx: &RunContext, flag: &Option<PathBuf>) -> Result<PathBuf, CliError> {
    let p = flag.clone().unwrap_or_else(|| ctx.out.join("params").join("model.bin"));
    if !p.is_file() {
        return usage(format!("parameter file {} does not exist", p.display()));
    }
    Ok(p)
}

/// Corpus settings: defaults, then `[corpus]`, then flags.
pub fn corpus_config(file: &RunFile, seed: u64, a: &GenerateArgs) -> Result<CorpusConfig, CliError> {
    let mut cfg = file.corpus_config().map_err(|e| CliError::Usage(format!("{e:#}")))?;
    cfg.seed = seed;
    let any_count = [a.digital, a.printed, a.handwritten, a.train, a.val, a.test_digital].iter().any(Option::is_some);
    if any_count {
        let mut c = SplitCounts::new(0, 0, 0, 0, 0);
        if let Some(n) = a.digital {
            c.train = (n * 7).div_ceil(10);
            c.val = n / 10;
            c.test_digital = n - c.train - c.val;
        }
        c.train = a.train.unwrap_or(c.train);
        c.val = a.val.unwrap_or(c.val);
        c.test_digital = a.test_digital.unwrap_or(c.test_digital);
        c.test_printed = a.printed.unwrap_or(0);
        c.test_handwritten = a.handwritten.unwrap_or(0);
        cfg.counts = c;
    }
    if a.zero_noise {
        let zero = ProfileSet::zero();
        for n in crate::docmodel::Nature::ALL {
            let p = cfg.profiles.get_mut(n);
            *p = crate::synthform::NoiseProfile { nature: n, ..*zero.get(n) };
        }
    }
    for n in crate::docmodel::Nature::ALL {
        let p = cfg.profiles.get_mut(n);
        let o = &a.noise;
        p.value_drop_rate = o.value_drop.unwrap_or(p.value_drop_rate);
        p.char_noise_rate = o.char_noise.unwrap_or(p.char_noise_rate);
        p.bbox_jitter = o.bbox_jitter.unwrap_or(p.bbox_jitter);
        p.rotation = o.rotation.unwrap_or(p.rotation);
        p.flip_alignment_rate = o.flip_alignment.unwrap_or(p.flip_alignment_rate);
        p.validate().map_err(|e| CliError::Usage(format!("{} profile: {e}", n.name())))?;
    }
    cfg.template.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

/// Model settings: preset, then `[model]`, then flags.
pub fn model_config(file: &RunFile, seed: u64, a: &ModelArgs) -> Result<ModelConfig, CliError> {
    let mut m = file.model_config(a.preset).map_err(|e| CliError::Usage(format!("{e:#}")))?;
    m.seed = seed;
    macro_rules! set {
        ($flag:expr, $field:expr) => {
            if let Some(v) = $flag {
                $field = v;
            }
        };
    }
    set!(a.d_model, m.d_model);
    set!(a.dual_layers, m.dual_layers);
    set!(a.heads, m.attn_heads);
    set!(a.ffn_dim, m.ffn_dim);
    set!(a.entity_depth, m.entity_encoder_depth);
    set!(a.token_depth, m.token_encoder_depth);
    set!(a.max_tokens, m.max_tokens);
    set!(a.xy_m, m.xy.m);
    set!(a.xy_n, m.xy.n);
    set!(a.aspects, m.aspect_flags);
    set!(a.pe, m.pe_variant);
    set!(a.dropout, m.dropout);
    set!(a.epochs, m.schedule.epochs);
    set!(a.lr, m.schedule.lr);
    set!(a.momentum, m.schedule.momentum);
    set!(a.warmup_steps, m.schedule.warmup_steps);
    set!(a.clip_norm, m.schedule.clip_norm);
    if a.no_key_in_sequence {
        m.key_in_sequence = false;
    }
    if a.no_key_in_scorer {
        m.key_in_scorer = false;
    }
    m.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(m)
}

#[derive(Serialize)]
struct GenerateEcho<'a> {
    command: &'a str,
    seed: u64,
    out: String,
    corpus: &'a CorpusConfig,
}

fn cmd_generate(ctx: &RunContext, a: &GenerateArgs) -> Result<(), CliError> {
    let cfg = corpus_config(&ctx.file, ctx.seed, a)?;
    let corpus = generate_corpus(&cfg).map_err(|e| CliError::Usage(e.to_string()))?;
    let dir = ctx.out.join("corpus");
    corpus.save(&dir).with_context(|| format!("writing corpus to {}", dir.display()))?;
    echo_config(ctx, "generate", &GenerateEcho { command: "generate", seed: ctx.seed, out: ctx.out.display().to_string(), corpus: &cfg })?;
    let total: usize = corpus.manifest.documents.values().sum();
    println!("generated {total} documents in {}", dir.display());
    Ok(())
}

#[derive(Serialize)]
struct TrainEcho<'a> {
    command: &'a str,
    seed: u64,
    out: String,
    corpus: String,
    precision: &'a str,
    model: &'a ModelConfig,
}

fn train_and_save<S: crate::scalar::Scalar>(
    ctx: &RunContext,
    train_docs: &[AnnotatedPage],
    val_docs: &[AnnotatedPage],
    cfg: &ModelConfig,
) -> anyhow::Result<(String, TrainHistory, crate::evalkit::EvalReport, Option<crate::evalkit::EvalReport>)> {
    let (params, history) = train::<S>(train_docs, val_docs, cfg)?;
    let dir = ctx.out.join("params");
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    params.save(dir.join("model.bin"))?;
    let mut log = Vec::new();
    write_metrics_log(&history, &mut log)?;
    write_file(&dir.join("metrics.log"), log)?;
    let train_report = evaluate_docs(&params, train_docs, "train", "train")?;
    let report = if val_docs.is_empty() { None } else { Some(evaluate_docs(&params, val_docs, "train", "val")?) };
    Ok((params.hash(), history, train_report, report))
}

fn write_report_files(ctx: &RunContext, stem: &str, records: &[MetricRecord], table: &str) -> anyhow::Result<()> {
    let mut tsv = Vec::new();
    write_records(records, &mut tsv)?;
    let dir = ctx.out.join("reports");
    write_file(&dir.join(format!("{stem}.tsv")), tsv)?;
    write_file(&dir.join(format!("{stem}.txt")), table)
}

fn cmd_train(ctx: &RunContext, a: &TrainArgs) -> Result<(), CliError> {
    let cfg = model_config(&ctx.file, ctx.seed, &a.model)?;
    let dir = corpus_dir(ctx, &a.corpus)?;
    let train_docs = load(&dir, Split::Train)?;
    let val_docs = load(&dir, Split::Val)?;
    if train_docs.is_empty() {
        return usage(format!("{} has no training documents", dir.display()));
    }
    let precision = match a.precision {
        Precision::F32 => "f32",
        Precision::F64 => "f64",
    };
    echo_config(
        ctx,
        "train",
        &TrainEcho {
            command: "train",
            seed: ctx.seed,
            out: ctx.out.display().to_string(),
            corpus: dir.display().to_string(),
            precision,
            model: &cfg,
        },
    )?;
    let result = match a.precision {
        Precision::F32 => train_and_save::<f32>(ctx, &train_docs, &val_docs, &cfg),
        Precision::F64 => train_and_save::<f64>(ctx, &train_docs, &val_docs, &cfg),
    };
    let (hash, history, train_report, report) = result.map_err(|e| match e.downcast_ref::<ModelError>() {
        Some(ModelError::Config(m)) => CliError::Usage(m.clone()),
        _ => CliError::Runtime(e),
    })?;
    let mut records = train_report.records();
    let mut table = train_report.text_table();
    if let Some(r) = &report {
        records.extend(r.records());
        table.push('\n');
        table.push_str(&r.text_table());
    }
    write_report_files(ctx, "train_val", &records, &table)?;
    let last = history.epochs.last();
    println!(
        "trained {} epochs (selected {}), final loss {:.4}, val weighted F1 {}",
        history.epochs.len(),
        history.selected_epoch,
        last.map_or(f64::NAN, |e| e.loss),
        report.as_ref().map_or("n/a".to_string(), |r| format!("{:.4}", r.weighted_f1)),
    );
    println!("params sha256 {hash}");
    Ok(())
}

#[derive(Serialize)]
struct EvaluateEcho<'a> {
    command: &'a str,
    seed: u64,
    out: String,
    corpus: String,
    params: Option<String>,
    splits: Vec<String>,
    parser_mode: bool,
    iou: f64,
    merge_rate: f64,
    split_rate: f64,
    ablation_aspects: Vec<String>,
    ablation_pe: Vec<String>,
    model: Option<&'a ModelConfig>,
}

/// Parses `--ablation` axes into an aspect grid and a PE grid.
pub fn parse_ablation(specs: &[String]) -> Result<(Vec<AspectFlags>, Vec<PeVariant>), String> {
    let mut aspects = Vec::new();
    let mut pes = Vec::new();
    for spec in specs {
        let (axis, values) = spec.split_once('=').ok_or_else(|| format!("ablation '{spec}' is not axis=values"))?;
        for v in values.split(',').map(str::trim).filter(|v| !v.is_empty()) {
            match axis.trim() {
                "aspects" => aspects.push(v.parse::<AspectFlags>()?),
                "pe" => pes.push(v.parse::<PeVariant>().map_err(|e| e.to_string())?),
                other => return Err(format!("unknown ablation axis '{other}' (expected aspects or pe)")),
            }
        }
    }
    Ok((aspects, pes))
}

fn cmd_evaluate(ctx: &RunContext, a: &EvaluateArgs) -> Result<(), CliError> {
    let dir = corpus_dir(ctx, &a.corpus)?;
    if !(0.0..=1.0).contains(&a.iou) {
        return usage(format!("--iou {} must lie in [0, 1]", a.iou));
    }
    let splits: Vec<Split> = if a.splits.is_empty() {
        [Split::TestDigital, Split::TestPrinted, Split::TestHandwritten]
            .into_iter()
            .filter(|s| fs::metadata(dir.join(format!("{}.json", s.name()))).is_ok())
            .collect()
    } else {
        a.splits
            .iter()
            .map(|s| Split::from_name(s).ok_or_else(|| CliError::Usage(format!("unknown split '{s}'"))))
            .collect::<Result<_, _>>()?
    };
    let mut data = Vec::new();
    for s in &splits {
        let docs = load(&dir, *s)?;
        if !docs.is_empty() {
            data.push((s.name(), docs));
        }
    }
    if data.is_empty() {
        return usage(format!("no documents to evaluate in {}", dir.display()));
    }

    if !a.ablation.is_empty() {
        let (mut aspects, mut pes) = parse_ablation(&a.ablation).map_err(CliError::Usage)?;
        let base = model_config(&ctx.file, ctx.seed, &a.model)?;
        if aspects.is_empty() {
            aspects.push(base.aspect_flags);
        }
        if pes.is_empty() {
            pes.push(base.pe_variant);
        }
        echo_config(
            ctx,
            "evaluate",
            &EvaluateEcho {
                command: "evaluate",
                seed: ctx.seed,
                out: ctx.out.display().to_string(),
                corpus: dir.display().to_string(),
                params: None,
                splits: data.iter().map(|(n, _)| n.to_string()).collect(),
                parser_mode: false,
                iou: a.iou,
                merge_rate: a.merge_rate,
                split_rate: a.split_rate,
                ablation_aspects: aspects.iter().map(ToString::to_string).collect(),
                ablation_pe: pes.iter().map(|p| p.as_str().to_string()).collect(),
                model: Some(&base),
            },
        )?;
        let train_docs = load(&dir, Split::Train)?;
        let val_docs = load(&dir, Split::Val)?;
        let eval: Vec<(&str, &[AnnotatedPage])> = data.iter().map(|(n, d)| (*n, d.as_slice())).collect();
        let matrix = run_ablation(&train_docs, &val_docs, &eval, &base, &aspects, &pes);
        let table = matrix.text_table();
        write_report_files(ctx, "ablation", &matrix.records(), &table)?;
        print!("{table}");
        return Ok(());
    }

    let ppath = params_path(ctx, &a.params)?;
    let params = ModelParams::<f32>::load(&ppath).with_context(|| format!("loading {}", ppath.display()))?;
    echo_config(
        ctx,
        "evaluate",
        &EvaluateEcho {
            command: "evaluate",
            seed: ctx.seed,
            out: ctx.out.display().to_string(),
            corpus: dir.display().to_string(),
            params: Some(ppath.display().to_string()),
            splits: data.iter().map(|(n, _)| n.to_string()).collect(),
            parser_mode: a.parser_mode,
            iou: a.iou,
            merge_rate: a.merge_rate,
            split_rate: a.split_rate,
            ablation_aspects: Vec::new(),
            ablation_pe: Vec::new(),
            model: Some(&params.config),
        },
    )?;
    let run_id = format!("params={}", &params.hash()[..12]);
    for (name, docs) in &data {
        let report = evaluate_docs(&params, docs, &run_id, name)?;
        write_report_files(ctx, &format!("eval_{name}"), &report.records(), &report.text_table())?;
        let tag = report.nature.map_or("-", |n| n.tag());
        println!("{name} [{tag}] weighted F1 {:.4} accuracy {:.4} ({} keys)", report.weighted_f1, report.accuracy, report.instances);
        if a.parser_mode {
            let pm = evaluate_parser_mode(&params, docs, a.merge_rate, a.split_rate, ctx.seed, a.iou)?;
            let mut table =
                format!("parser mode on {name}: IoU >= {} accuracy {:.4} over {} keys\n", pm.threshold, pm.accuracy, pm.instances);
            for (intent, acc) in &pm.per_intent {
                let _ = writeln!(table, "{intent:<10} {acc:.4}");
            }
            write_report_files(ctx, &format!("parser_{name}"), &pm.records(&run_id, name), &table)?;
            println!("{name} parser-mode accuracy {:.4} at IoU {}", pm.accuracy, pm.threshold);
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct StatsEcho {
    command: &'static str,
    seed: u64,
    out: String,
    corpus: Option<String>,
    labels: Vec<String>,
}

/// Kappa and Hamming loss between the segment categories of two annotation
/// sets of the same pages.
pub fn category_agreement(a: &[AnnotatedPage], b: &[AnnotatedPage]) -> anyhow::Result<(f64, f64, usize)> {
    if a.len() != b.len() {
        bail!("label files hold {} and {} documents", a.len(), b.len());
    }
    let mut la: Vec<LayoutCategory> = Vec::new();
    let mut lb: Vec<LayoutCategory> = Vec::new();
    for (x, y) in a.iter().zip(b) {
        if x.doc_id != y.doc_id || x.page.segments.len() != y.page.segments.len() {
            bail!("documents {} and {} do not describe the same segments", x.doc_id, y.doc_id);
        }
        la.extend(x.page.segments.iter().map(|s| s.category));
        lb.extend(y.page.segments.iter().map(|s| s.category));
    }
    let kappa = cohen_kappa(&la, &lb)?;
    let hamming = hamming_loss(&la, &lb)?;
    Ok((kappa, hamming, la.len()))
}

fn stats_table(r: &StatsReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "components per split");
    let _ = write!(s, "{:<18}", "split");
    for c in LayoutCategory::ALL {
        let _ = write!(s, " {:>11}", c.name());
    }
    s.push('\n');
    for (split, counts) in &r.components {
        let _ = write!(s, "{split:<18}");
        for c in LayoutCategory::ALL {
            let _ = write!(s, " {:>11}", counts.get(c));
        }
        s.push('\n');
    }
    let _ = writeln!(s, "\nbox geometry per category");
    let _ = writeln!(s, "{:<12} {:>9} {:>9} {:>11} {:>8}", "category", "width", "height", "pixels", "tokens");
    for (c, g) in &r.geometry {
        let _ = writeln!(s, "{c:<12} {:>9.2} {:>9.2} {:>11.1} {:>8.2}", g.avg_width, g.avg_height, g.avg_pixels, g.avg_tokens);
    }
    let _ = writeln!(s, "\nper intent");
    let _ = writeln!(s, "{:<10} {:>9} {:>11} {:>7} {:>7}", "intent", "key chars", "value chars", "horiz%", "vert%");
    for intent in KeyIntent::ALL {
        let name = intent.name();
        let c = r.char_counts.get(name).copied().unwrap_or_default();
        let rel = r.relations.get(name).copied().unwrap_or_default();
        let _ = writeln!(
            s,
            "{name:<10} {:>9.2} {:>11.2} {:>7.2} {:>7.2}",
            c.avg_key_chars,
            c.avg_value_chars,
            rel.horizontal_pct(),
            rel.vertical_pct()
        );
    }
    let _ = writeln!(s, "\nvalue patterns (%)");
    for (intent, fams) in &r.value_patterns {
        let parts: Vec<String> = fams.iter().map(|(f, p)| format!("{f} {p:.1}")).collect();
        let _ = writeln!(s, "{intent:<10} {}", parts.join(", "));
    }
    s
}

fn cmd_stats(ctx: &RunContext, a: &StatsArgs) -> Result<(), CliError> {
    if !a.labels.is_empty() && a.labels.len() != 2 {
        return usage("--labels takes exactly two files");
    }
    let corpus = if a.labels.is_empty() || a.corpus.is_some() { Some(corpus_dir(ctx, &a.corpus)?) } else { None };
    echo_config(
        ctx,
        "stats",
        &StatsEcho {
            command: "stats",
            seed: ctx.seed,
            out: ctx.out.display().to_string(),
            corpus: corpus.as_ref().map(|d| d.display().to_string()),
            labels: a.labels.iter().map(|p| p.display().to_string()).collect(),
        },
    )?;
    let reports = ctx.out.join("reports");
    if let Some(dir) = &corpus {
        let mut data = Vec::new();
        for s in Split::ALL {
            if dir.join(format!("{}.json", s.name())).exists() {
                data.push((s.name(), load(dir, s)?));
            }
        }
        let named: Vec<(&str, &[AnnotatedPage])> = data.iter().map(|(n, d)| (*n, d.as_slice())).collect();
        let report = component_stats(&named);
        let mut json = serde_json::to_string_pretty(&report).context("serialising stats")?;
        json.push('\n');
        write_file(&reports.join("stats.json"), json)?;
        let table = stats_table(&report);
        write_file(&reports.join("stats.txt"), &table)?;
        let all: Vec<AnnotatedPage> = data.iter().flat_map(|(_, d)| d.iter().cloned()).collect();
        let mut rel = String::from("intent\thorizontal_pct\tvertical_pct\tpairs\n");
        for (intent, r) in relation_ratio_stats(&all) {
            let _ = writeln!(rel, "{}\t{}\t{}\t{}", intent.name(), r.horizontal_pct(), r.vertical_pct(), r.total());
        }
        write_file(&reports.join("relations.tsv"), rel)?;
        print!("{table}");
    }
    if let [pa, pb] = a.labels.as_slice() {
        let la = load_corpus(pa).with_context(|| format!("loading {}", pa.display()))?;
        let lb = load_corpus(pb).with_context(|| format!("loading {}", pb.display()))?;
        let (kappa, hamming, n) = category_agreement(&la, &lb)?;
        write_file(
            &reports.join("agreement.tsv"),
            format!("metric\tvalue\ncohen_kappa\t{kappa}\nhamming_loss\t{hamming}\nsegments\t{n}\n"),
        )?;
        println!("cohen kappa {kappa:.4}  hamming loss {hamming:.4}  over {n} segments");
    }
    Ok(())
}

fn cmd_predict(ctx: &RunContext, a: &PredictArgs) -> Result<(), CliError> {
    let Some(intent) = KeyIntent::from_name(&a.key) else {
        let names: Vec<&str> = KeyIntent::ALL.iter().map(|k| k.name()).collect();
        return usage(format!("unknown key '{}'; expected one of: {}", a.key, names.join(", ")));
    };
    let ppath = params_path(ctx, &a.params)?;
    if !a.document.is_file() {
        return usage(format!("document file {} does not exist", a.document.display()));
    }
    let params = ModelParams::<f32>::load(&ppath).with_context(|| format!("loading {}", ppath.display()))?;
    let docs = load_corpus(&a.document).with_context(|| format!("loading {}", a.document.display()))?;
    let doc = match &a.doc_id {
        Some(id) => docs
            .iter()
            .find(|d| &d.doc_id == id)
            .ok_or_else(|| CliError::Usage(format!("no document '{id}' in {}", a.document.display())))?,
        None => docs.first().ok_or_else(|| CliError::Usage(format!("{} holds no documents", a.document.display())))?,
    };
    let key_text = match &a.key_text {
        Some(t) => t.clone(),
        None => doc.page.key_segment(intent).map_or(intent.canonical_key_text().to_string(), |s| s.text.clone()),
    };
    match predict(&key_text, &doc.page, &params).context("predicting")? {
        Some(id) => {
            let s = &doc.page.segments[id];
            let b = s.bbox;
            println!("{id}\t{} {} {} {}\t{}", b.x, b.y, b.w, b.h, s.text);
        }
        None => println!("NO_VALUE"),
    }
    Ok(())
}
