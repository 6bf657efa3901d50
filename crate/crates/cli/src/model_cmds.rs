//! Subcommands that generate data, train, decode and benchmark.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use latsa_core::encoder::{MaskSetting, PositionKind};
use latsa_core::lattice::{parse_lattice, Format};
use latsa_core::numerics::LrPolicy;
use latsa_core::numerics::SplitRng;
use latsa_core::translator::{
    corpus_bleu, read_corpus, read_source_line, read_targets, token_accuracy, train as train_model,
    Example, Model, ModelConfig, Phase, TrainSchedule,
};
use latsa_core::vocab::Vocab;
use latsa_core::workbench::bench::{chain_lattice, confusion_lattice, mask_scaling, run_speed};
use latsa_core::workbench::experiment::{run_experiment, ExperimentConfig};
use latsa_core::workbench::{generate, write_corpus, BenchConfig, CorpusFiles, GenConfig};
use latsa_core::Lattice;
use serde_json::json;

use crate::lattice_cmds::read_text;

#[derive(Args)]
pub struct GenDataArgs {
    /// Output prefix; writes PREFIX.lat.jsonl, .1best.txt, .oracle.txt, .tgt.txt.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    sentences: usize,
    #[arg(long, default_value_t = 3)]
    width: usize,
    #[arg(long, default_value_t = 0.1)]
    margin: f64,
    /// Seed of the source language and symbol mapping; keep it fixed
    /// across train and test splits.
    #[arg(long, default_value_t = 7)]
    language_seed: u64,
}

pub fn gen_data(args: &GenDataArgs) -> Result<()> {
    let cfg = GenConfig {
        seed: args.seed,
        n_sentences: args.sentences,
        confusion_width: args.width,
        noise_margin: args.margin,
        language_seed: args.language_seed,
        ..GenConfig::default()
    };
    let (items, stats) = generate(&cfg)?;
    write_corpus(&items, &CorpusFiles::with_prefix(&args.out))?;
    println!("{}", serde_json::to_string(&stats)?);
    Ok(())
}

#[derive(Clone, Copy, ValueEnum)]
enum PhaseArg {
    Pretrain,
    Finetune,
}

#[derive(Clone, Copy, ValueEnum)]
enum LrArg {
    /// Warm-up then inverse square-root decay.
    Warmup,
    /// Constant 0.0001.
    Fixed,
}

#[derive(Clone, Copy, ValueEnum)]
enum MaskArg {
    Prob,
    Bin,
    None,
}

#[derive(Clone, Copy, ValueEnum)]
enum PosArg {
    Longest,
    Topological,
    None,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Source lines: JSON lattices (or PLF with `--format plf`) or plain token sequences.
    #[arg(long)]
    train_src: PathBuf,
    #[arg(long)]
    train_tgt: PathBuf,
    #[arg(long)]
    valid_src: PathBuf,
    #[arg(long)]
    valid_tgt: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    /// Continue from this checkpoint (vocabularies and shapes come from it).
    #[arg(long)]
    init: Option<PathBuf>,
    /// Model configuration as JSON; ignored with `--init`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training schedule as JSON; flags below override its fields.
    #[arg(long)]
    schedule: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = PhaseArg::Finetune)]
    phase: PhaseArg,
    #[arg(long, value_enum)]
    lr_policy: Option<LrArg>,
    #[arg(long, value_enum)]
    mask: Option<MaskArg>,
    #[arg(long, value_enum)]
    positions: Option<PosArg>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Tokens seen fewer times become `<unk>`.
    #[arg(long, default_value_t = 2)]
    min_count: usize,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn load_model(path: &Path) -> Result<Model> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Model::load(BufReader::new(f)).with_context(|| format!("loading {}", path.display()))
}

fn source_lattice(line: &str, format: Format) -> Result<Lattice> {
    Ok(match format {
        Format::Plf(_) => parse_lattice(line, format)?,
        Format::Json => read_source_line(line)?,
    })
}

fn corpus(src: &Path, tgt: &Path, format: Format) -> Result<Vec<Example>> {
    if format == Format::Json {
        return Ok(read_corpus(src, tgt)?);
    }
    let targets = read_targets(tgt)?;
    let lines: Vec<String> = read_text(Some(src))?.lines().map(String::from).collect();
    if lines.len() != targets.len() {
        bail!(
            "{} has {} lines but {} has {}",
            src.display(),
            lines.len(),
            tgt.display(),
            targets.len()
        );
    }
    lines
        .iter()
        .zip(targets)
        .enumerate()
        .map(|(i, (l, target))| {
            let source = source_lattice(l, format)
                .with_context(|| format!("{} line {}", src.display(), i + 1))?;
            Ok(Example { source, target })
        })
        .collect()
}

pub fn train(args: &TrainArgs, format: Format) -> Result<()> {
    let train_set = corpus(&args.train_src, &args.train_tgt, format)?;
    let valid_set = corpus(&args.valid_src, &args.valid_tgt, format)?;
    let mut schedule: TrainSchedule = match &args.schedule {
        Some(p) => read_json(p)?,
        None => TrainSchedule::default(),
    };
    schedule.phase = match args.phase {
        PhaseArg::Pretrain => Phase::PretrainSequential,
        PhaseArg::Finetune => Phase::FinetuneLattice,
    };
    if let Some(e) = args.epochs {
        schedule.max_epochs = e;
    }
    if let Some(s) = args.seed {
        schedule.seed = s;
    }
    let mut model = match &args.init {
        Some(p) => load_model(p)?,
        None => {
            let config: ModelConfig = match &args.config {
                Some(p) => read_json(p)?,
                None => ModelConfig::default(),
            };
            let src = Vocab::build(
                train_set
                    .iter()
                    .flat_map(|e| e.source.tokens().iter().map(String::as_str)),
                args.min_count,
            );
            let tgt = Vocab::build(
                train_set
                    .iter()
                    .flat_map(|e| e.target.iter().map(String::as_str)),
                args.min_count,
            );
            Model::new(config, src, tgt, schedule.seed)?
        }
    };
    match args.lr_policy {
        Some(LrArg::Fixed) => schedule.lr_policy = LrPolicy::fixed_default(),
        Some(LrArg::Warmup) => {
            schedule.lr_policy = LrPolicy::WarmupDecay {
                factor: 1.0,
                d_model: model.config().encoder.d_model,
                warmup_steps: 400,
            }
        }
        None => {}
    }
    if args.mask.is_some() || args.positions.is_some() {
        let mut enc = model.config().encoder.clone();
        if let Some(m) = args.mask {
            enc.mask_kind = match m {
                MaskArg::Prob => MaskSetting::Probabilistic,
                MaskArg::Bin => MaskSetting::Binary,
                MaskArg::None => MaskSetting::None,
            };
        }
        if let Some(p) = args.positions {
            enc.positions = match p {
                PosArg::Longest => PositionKind::LongestPath,
                PosArg::Topological => PositionKind::Topological,
                PosArg::None => PositionKind::None,
            };
        }
        model.set_encoder_config(enc)?;
    }
    let tr = model.prepare_examples(&train_set)?;
    let va = model.prepare_examples(&valid_set)?;
    let stdout = std::io::stdout();
    let mut log_err = None;
    let summary = train_model(&mut model, &tr, &va, &schedule, |e| {
        let line = serde_json::to_string(e).expect("epoch log serializes");
        if let Err(err) = writeln!(stdout.lock(), "{line}") {
            log_err.get_or_insert(err);
        }
    })?;
    if let Some(e) = log_err {
        return Err(e).context("writing training log");
    }
    let f = File::create(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut w = BufWriter::new(f);
    model.save(&mut w)?;
    w.flush()?;
    eprintln!(
        "best epoch {} (validation token accuracy {:.4}), {} epochs run; saved {}",
        summary.best_epoch,
        summary.best_val_token_accuracy,
        summary.epochs_run,
        args.out.display()
    );
    Ok(())
}

#[derive(Args)]
pub struct TranslateArgs {
    #[arg(long)]
    model: PathBuf,
    /// Source lines; stdin when absent or `-`.
    input: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    beam: usize,
}

pub fn translate(args: &TranslateArgs, format: Format) -> Result<()> {
    let model = load_model(&args.model)?;
    let text = read_text(args.input.as_deref())?;
    let mut out = std::io::stdout().lock();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let l = source_lattice(line, format).with_context(|| format!("line {}", i + 1))?;
        let ids = model.translate_prepared(&model.prepare(&l)?, args.beam)?;
        let words: Vec<&str> = ids.iter().map(|&t| model.tgt_vocab().token(t)).collect();
        writeln!(out, "{}", words.join(" "))?;
    }
    Ok(())
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    src: PathBuf,
    #[arg(long)]
    tgt: PathBuf,
    #[arg(long, default_value_t = 8)]
    beam: usize,
}

pub fn eval(args: &EvalArgs, format: Format) -> Result<()> {
    let model = load_model(&args.model)?;
    let data = corpus(&args.src, &args.tgt, format)?;
    let mut hyps = Vec::with_capacity(data.len());
    for e in &data {
        let ids = model.translate_prepared(&model.prepare(&e.source)?, args.beam)?;
        hyps.push(
            ids.iter()
                .map(|&t| model.tgt_vocab().token(t).to_string())
                .collect::<Vec<_>>(),
        );
    }
    let refs: Vec<Vec<String>> = data.into_iter().map(|e| e.target).collect();
    println!(
        "{}",
        json!({
            "sentences": refs.len(),
            "token_accuracy": token_accuracy(&hyps, &refs),
            "corpus_bleu": corpus_bleu(&hyps, &refs),
        })
    );
    Ok(())
}

#[derive(Args)]
pub struct BenchArgs {
    /// Benchmark configuration as JSON; defaults otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    sentences: Option<usize>,
    #[arg(long)]
    runs: Option<usize>,
    /// Skip the mask computation growth measurement.
    #[arg(long)]
    no_masks: bool,
}

pub fn bench(args: &BenchArgs) -> Result<()> {
    let mut cfg: BenchConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => BenchConfig::default(),
    };
    if let Some(n) = args.sentences {
        cfg.corpus.n_sentences = n;
    }
    if let Some(r) = args.runs {
        cfg.runs = r;
    }
    let reports = run_speed(&cfg)?;
    let scaling = if args.no_masks {
        None
    } else {
        let mut rng = SplitRng::new(cfg.seed);
        let confusion: Vec<Lattice> = [50, 100, 200, 400, 800]
            .iter()
            .map(|&n| confusion_lattice(n, &mut rng))
            .collect();
        let chains: Vec<Lattice> = [100, 200, 400].iter().map(|&n| chain_lattice(n)).collect();
        Some(json!({
            "confusion": mask_scaling(&confusion, 3),
            "chain": mask_scaling(&chains, 3),
        }))
    };
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({ "speed": reports, "mask_scaling": scaling }))?
    );
    Ok(())
}

#[derive(Args)]
pub struct ExperimentArgs {
    /// Experiment configuration as JSON; defaults otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated seeds, overriding the configuration.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
}

pub fn experiment(args: &ExperimentArgs) -> Result<()> {
    let mut cfg: ExperimentConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = &args.seeds {
        cfg.seeds = s.clone();
    }
    let report = run_experiment(&cfg, |seed, name, e| {
        eprintln!(
            "seed {seed} {name} epoch {} loss {:.4} valid {:.4}",
            e.epoch, e.loss, e.val_token_accuracy
        );
    })?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
