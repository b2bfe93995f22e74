//! Command-line driver. Exit codes: 0 success, 1 usage error, 2 data or
//! contract error.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fngram_core::corpus::{expand_dialog, mask_spans, DialogSession, Example, Truncation, MAX_SEQ_LEN};
use fngram_core::generation::{beam_generate, greedy_generate};
use fngram_core::model::ProphetModel;
use fngram_core::tokenizer::{VocabMode, Vocabulary, X_SEP};
use fngram_core::training::{scheduled_batch, Trainer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config_file::RunConfig;
use crate::error::{io_err, Error, Result};
use crate::{checkpoint, report, shard, vocab_file};

#[derive(Debug, Parser)]
#[command(name = "fngram", version, about = "Future n-gram seq2seq pre-training and generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a vocabulary file from a corpus (char) or a wordlist (subword).
    BuildVocab(BuildVocab),
    /// Turn a corpus into an example shard.
    Prepare(Prepare),
    /// Train from scratch (or resume) on span-masked shards.
    Pretrain(Train),
    /// Train from a pre-trained checkpoint on supervised shards.
    Finetune(Train),
    /// Decode one output line per input line.
    Generate(Generate),
    /// Score candidates against references.
    Score(Score),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Char,
    Subword,
}

impl From<ModeArg> for VocabMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Char => VocabMode::Char,
            ModeArg::Subword => VocabMode::Subword,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PrepareMode {
    Span,
    Dialog,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TruncateArg {
    Left,
    Right,
}

impl From<TruncateArg> for Truncation {
    fn from(t: TruncateArg) -> Self {
        match t {
            TruncateArg::Left => Truncation::Left,
            TruncateArg::Right => Truncation::Right,
        }
    }
}

#[derive(Debug, Args)]
struct VocabArgs {
    /// Vocabulary file, one token per line.
    #[arg(long)]
    vocab: PathBuf,
    /// Tokenization regime; inferred from the vocabulary when omitted.
    #[arg(long, value_enum)]
    vocab_mode: Option<ModeArg>,
}

impl VocabArgs {
    fn load(&self) -> Result<Vocabulary> {
        vocab_file::read(&self.vocab, self.vocab_mode.map(Into::into))
    }
}

#[derive(Debug, Args)]
struct BuildVocab {
    /// Corpus text (char mode) or wordlist, one piece per line (subword mode).
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "char")]
    mode: ModeArg,
    /// Upper bound on the vocabulary size, reserved tokens included.
    #[arg(long, default_value_t = 9360)]
    max_size: usize,
}

#[derive(Debug, Args)]
struct Prepare {
    /// One document per line (span) or one tab-separated session per line (dialog).
    #[arg(long)]
    corpus: PathBuf,
    #[command(flatten)]
    vocab: VocabArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    mode: PrepareMode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct Train {
    /// Run configuration, `key = value` per line.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Example shard; repeat to concatenate several.
    #[arg(long = "data", required = true)]
    data: Vec<PathBuf>,
    #[command(flatten)]
    vocab: VocabArgs,
    /// Checkpoint written at the end and every `--save-every` steps.
    #[arg(long)]
    out: PathBuf,
    /// Starting weights (required for finetune).
    #[arg(long)]
    init: Option<PathBuf>,
    /// Continue a run from its checkpoint, optimizer and generator included.
    #[arg(long, conflicts_with = "init")]
    resume: Option<PathBuf>,
    /// Override a configuration key.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 10)]
    log_every: u64,
    #[arg(long)]
    save_every: Option<u64>,
    /// Batches prepared ahead on a loader thread when above 1.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Which end of an over-length source to drop.
    #[arg(long, value_enum)]
    truncate: Option<TruncateArg>,
}

#[derive(Debug, Args)]
struct Generate {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    vocab: VocabArgs,
    /// One source per line; tabs separate dialog turns.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Beam width; 1 decodes greedily.
    #[arg(long, default_value_t = 4)]
    beam: usize,
    #[arg(long, default_value_t = 64)]
    max_out: usize,
    #[arg(long, default_value_t = 1.0)]
    length_norm: f64,
}

#[derive(Debug, Args)]
struct Score {
    #[arg(long)]
    candidates: PathBuf,
    #[arg(long)]
    references: PathBuf,
    /// Tokenize with this vocabulary instead of splitting on whitespace.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long, value_enum)]
    vocab_mode: Option<ModeArg>,
    /// Write the report here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parses `args` (program name first) and runs the subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::BuildVocab(a) => build_vocab(a),
        Command::Prepare(a) => prepare(a),
        Command::Pretrain(a) => train(a, false),
        Command::Finetune(a) => train(a, true),
        Command::Generate(a) => generate(a),
        Command::Score(a) => score(a),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn contract(msg: impl Into<String>) -> Error {
    Error::Core(fngram_core::Error::Contract(msg.into()))
}

fn build_vocab(a: BuildVocab) -> Result<()> {
    let text = read_text(&a.input)?;
    let vocab = match a.mode {
        // Tabs separate dialog turns and are never content.
        ModeArg::Char => Vocabulary::build_char(&text.replace('\t', "\n"), a.max_size)?,
        ModeArg::Subword => Vocabulary::build_subword(text.lines(), a.max_size)?,
    };
    vocab_file::write(&a.out, &vocab)
}

fn prepare(a: Prepare) -> Result<()> {
    let vocab = a.vocab.load()?;
    let text = read_text(&a.corpus)?;
    let mut examples = Vec::new();
    match a.mode {
        PrepareMode::Span => {
            let mut seeds = ChaCha8Rng::seed_from_u64(a.seed);
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                let ids = vocab.encode(line);
                for chunk in ids.chunks(MAX_SEQ_LEN) {
                    examples.push(mask_spans(chunk, seeds.random())?.into());
                }
            }
        }
        PrepareMode::Dialog => {
            for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let session = DialogSession::parse_line(line)
                    .map_err(|e| crate::error::format_err(&a.corpus, format!("line {}", i + 1), e.to_string()))?;
                examples.extend(expand_dialog(&session, &vocab));
            }
        }
    }
    shard::write(&a.out, &examples)
}

fn load_examples(paths: &[PathBuf]) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    for p in paths {
        out.extend(shard::read(p)?);
    }
    Ok(out)
}

fn apply_overrides(run: &mut RunConfig, a: &Train) -> Result<()> {
    for kv in &a.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| contract(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        run.set(k.trim(), v.trim()).map_err(contract)?;
    }
    if let Some(s) = a.steps {
        run.train.steps = s;
    }
    if let Some(s) = a.seed {
        run.train.seed = s;
    }
    Ok(())
}

fn train(a: Train, finetune: bool) -> Result<()> {
    let vocab = a.vocab.load()?;
    let examples = load_examples(&a.data)?;
    let mut trainer: Trainer<f32> = if let Some(path) = &a.resume {
        let mut t = checkpoint::load(path)?;
        let mut run = RunConfig::from_parts(t.model.config().clone(), t.settings.clone());
        apply_overrides(&mut run, &a)?;
        t.settings = run.train;
        t
    } else {
        let mut run = match &a.config {
            Some(p) => RunConfig::read(p)?,
            None => RunConfig::default(),
        };
        apply_overrides(&mut run, &a)?;
        match &a.init {
            Some(path) => {
                let base: Trainer<f32> = checkpoint::load(path)?;
                Trainer::new(base.model, run.train)
            }
            None if finetune => return Err(contract("finetune needs --init or --resume")),
            None => {
                if run.model.vocab_size == 0 {
                    run.model.vocab_size = vocab.size();
                }
                let seed = run.train.seed;
                Trainer::new(ProphetModel::new(run.model, seed)?, run.train)
            }
        }
    };
    if trainer.model.config().vocab_size != vocab.size() {
        return Err(contract(format!(
            "model vocabulary has {} entries but {} has {}",
            trainer.model.config().vocab_size,
            a.vocab.vocab.display(),
            vocab.size()
        )));
    }
    let truncation = a.truncate.map_or(if finetune { Truncation::Left } else { Truncation::Right }, Into::into);
    let start = trainer.step();
    let end = trainer.settings.steps;
    let settings = trainer.settings.clone();
    let max_len = trainer.model.config().max_len;
    let make = |step: u64| scheduled_batch(&settings, step, &examples, max_len, truncation);
    let mut stdout = io::stdout().lock();
    let mut step_once = |trainer: &mut Trainer<f32>, batch| -> Result<()> {
        let loss = trainer.train_step(&batch)?;
        let s = trainer.step();
        if s.is_multiple_of(a.log_every.max(1)) || s == end {
            writeln!(stdout, "{s}\t{loss:.6}").map_err(io_err(Path::new("<stdout>")))?;
        }
        if a.save_every.is_some_and(|k| k > 0 && s.is_multiple_of(k) && s != end) {
            checkpoint::save(&a.out, trainer)?;
        }
        Ok(())
    };
    if a.workers > 1 {
        std::thread::scope(|scope| -> Result<()> {
            let (tx, rx) = mpsc::sync_channel(a.workers);
            scope.spawn(move || {
                for s in start..end {
                    if tx.send(make(s)).is_err() {
                        break;
                    }
                }
            });
            for b in rx {
                step_once(&mut trainer, b?)?;
            }
            Ok(())
        })?;
    } else {
        for s in start..end {
            step_once(&mut trainer, make(s)?)?;
        }
    }
    checkpoint::save(&a.out, &trainer)
}

fn encode_source(vocab: &Vocabulary, line: &str, max_len: usize) -> Vec<u32> {
    let turns: Vec<&str> = line.split('\t').collect();
    let mut ids = Vec::new();
    for (i, t) in turns.iter().enumerate() {
        if i > 0 {
            ids.push(X_SEP);
        }
        ids.extend(vocab.encode(t));
    }
    if ids.len() > max_len {
        // Dialog contexts keep their latest turns, documents their start.
        if turns.len() > 1 {
            ids.drain(..ids.len() - max_len);
        } else {
            ids.truncate(max_len);
        }
    }
    ids
}

fn generate(a: Generate) -> Result<()> {
    let vocab = a.vocab.load()?;
    let trainer: Trainer<f32> = checkpoint::load(&a.checkpoint)?;
    let model = trainer.model;
    if model.config().vocab_size != vocab.size() {
        return Err(contract("checkpoint and vocabulary sizes differ"));
    }
    if a.beam == 0 {
        return Err(contract("--beam must be at least 1"));
    }
    let mut out = String::new();
    for line in read_text(&a.input)?.lines() {
        let src = encode_source(&vocab, line, model.config().max_len);
        if !src.is_empty() {
            let ids = if a.beam == 1 {
                greedy_generate(&model, &src, a.max_out)?
            } else {
                let hyps = beam_generate(&model, &src, a.beam, a.max_out, a.length_norm)?;
                hyps.into_iter().next().map(|h| h.ids).unwrap_or_default()
            };
            out.push_str(&vocab.decode(&ids, true)?);
        }
        out.push('\n');
    }
    fs::write(&a.out, out).map_err(io_err(&a.out))
}

fn score(a: Score) -> Result<()> {
    let cands = read_text(&a.candidates)?;
    let refs = read_text(&a.references)?;
    let (cl, rl): (Vec<&str>, Vec<&str>) = (cands.lines().collect(), refs.lines().collect());
    if cl.len() != rl.len() {
        return Err(contract(format!("{} candidate lines but {} reference lines", cl.len(), rl.len())));
    }
    let (tokenize, name): (Box<dyn Fn(&str) -> Vec<u32>>, String) = match &a.vocab {
        Some(p) => {
            let vocab = vocab_file::read(p, a.vocab_mode.map(Into::into))?;
            let mode = match vocab.mode() {
                VocabMode::Char => "char",
                VocabMode::Subword => "subword",
            };
            let name = format!("{mode} vocabulary {}", p.display());
            (Box::new(move |s: &str| vocab.encode(s)), name)
        }
        None => {
            // Whitespace words, numbered in order of first appearance.
            let mut table = std::collections::HashMap::new();
            for w in cl.iter().chain(&rl).flat_map(|l| l.split_whitespace()) {
                let next = table.len() as u32;
                table.entry(w.to_string()).or_insert(next);
            }
            (Box::new(move |s: &str| s.split_whitespace().map(|w| table[w]).collect()), "whitespace".to_string())
        }
    };
    let c: Vec<Vec<u32>> = cl.iter().map(|l| tokenize(l)).collect();
    let r: Vec<Vec<u32>> = rl.iter().map(|l| tokenize(l)).collect();
    let rep = report::score(&c, &r, &name)?;
    for w in &rep.warnings {
        eprintln!("warning: {w}");
    }
    match &a.out {
        Some(p) => fs::write(p, rep.render()).map_err(io_err(p)),
        None => io::stdout().write_all(rep.render().as_bytes()).map_err(io_err(Path::new("<stdout>"))),
    }
}
