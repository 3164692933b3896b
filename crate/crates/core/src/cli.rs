//! `a2net` command line.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::autodiff::grad_check;
use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::data::{generate_synthetic, parse_corpus, split_folds, Corpus, IntRange, SynthConfig};
use crate::encoder::{EncoderError, PrecomputedEmbeddings};
use crate::model::Network;
use crate::train::{evaluate, fit, TrainConfig};

#[derive(Parser, Debug)]
#[command(name = "a2net", version, about = "Emotion-cause pair extraction: train, evaluate and verify")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic JSONL corpus.
    Synth(Flags),
    /// Train a model and write checkpoint, log and effective config.
    Train(Flags),
    /// Score a corpus with a checkpoint and print metrics JSON.
    Eval(Flags),
    /// Compare analytic and numeric gradients on a random document.
    Gradcheck(Flags),
    /// Emit a seeded k-fold split manifest.
    Folds(Flags),
}

/// Every flag is also a config-file key (dashes read as underscores).
#[derive(Args, Debug, Default)]
struct Flags {
    /// key = value file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<String>,
    /// Held-out corpus for best-epoch selection.
    #[arg(long)]
    dev: Option<String>,
    /// Precomputed clause embeddings (A2NE binary).
    #[arg(long)]
    embeddings: Option<String>,
    #[arg(long)]
    checkpoint: Option<String>,
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    hidden: Option<String>,
    /// Clause embedding width.
    #[arg(long)]
    dim: Option<String>,
    #[arg(long)]
    dim_pos: Option<String>,
    #[arg(long)]
    max_offset: Option<String>,
    #[arg(long)]
    lambda1: Option<String>,
    #[arg(long)]
    lambda2: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    batch: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    dropout: Option<String>,
    #[arg(long)]
    weight_decay: Option<String>,
    #[arg(long)]
    threshold: Option<String>,
    /// pfn, shared or parallel.
    #[arg(long)]
    encoding: Option<String>,
    /// both, p2e, e2p or off.
    #[arg(long)]
    ita: Option<String>,
    /// on or off.
    #[arg(long)]
    aux: Option<String>,
    #[arg(long)]
    literal_loss: Option<String>,
    #[arg(long)]
    share_gate_params: Option<String>,
    /// none, pseudo or pair.
    #[arg(long)]
    detach_side: Option<String>,
    /// micro or macro.
    #[arg(long)]
    averaging: Option<String>,
    #[arg(long)]
    folds: Option<String>,
    #[arg(long)]
    num_docs: Option<String>,
    #[arg(long)]
    clauses_per_doc: Option<String>,
    #[arg(long)]
    tokens_per_clause: Option<String>,
    #[arg(long)]
    vocab_size: Option<String>,
    #[arg(long)]
    pair_distance: Option<String>,
    #[arg(long)]
    pairs_per_doc: Option<String>,
    /// Clauses in the gradcheck document.
    #[arg(long)]
    clauses: Option<String>,
}

impl Flags {
    fn pairs(&self) -> Vec<(&'static str, &Option<String>)> {
        vec![
            ("corpus", &self.corpus),
            ("dev", &self.dev),
            ("embeddings", &self.embeddings),
            ("checkpoint", &self.checkpoint),
            ("out", &self.out),
            ("seed", &self.seed),
            ("hidden", &self.hidden),
            ("embed_dim", &self.dim),
            ("dim_pos", &self.dim_pos),
            ("max_offset", &self.max_offset),
            ("lambda1", &self.lambda1),
            ("lambda2", &self.lambda2),
            ("learning_rate", &self.lr),
            ("batch_size", &self.batch),
            ("epochs", &self.epochs),
            ("dropout", &self.dropout),
            ("weight_decay", &self.weight_decay),
            ("threshold", &self.threshold),
            ("encoding", &self.encoding),
            ("ita", &self.ita),
            ("aux", &self.aux),
            ("literal_loss", &self.literal_loss),
            ("share_gate_params", &self.share_gate_params),
            ("detach_side", &self.detach_side),
            ("averaging", &self.averaging),
            ("folds", &self.folds),
            ("num_docs", &self.num_docs),
            ("clauses_per_doc", &self.clauses_per_doc),
            ("tokens_per_clause", &self.tokens_per_clause),
            ("vocab_size", &self.vocab_size),
            ("pair_distance", &self.pair_distance),
            ("pairs_per_doc", &self.pairs_per_doc),
            ("clauses", &self.clauses),
        ]
    }

    /// Defaults, then the config file, then flags.
    fn resolve(&self) -> Result<RunConfig, String> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path).map_err(|e| e.to_string())?;
        }
        for (key, value) in self.pairs() {
            if let Some(v) = value {
                cfg.set(key, v).map_err(|e| e.to_string())?;
            }
        }
        Ok(cfg)
    }
}

/// Runs the CLI and returns the process exit code: 0 on success, 1 on a
/// validation or runtime failure, 2 on a usage error.
pub fn run_cli<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let rendered = e.render().to_string();
            let _ = if code == 0 {
                stdout.write_all(rendered.as_bytes())
            } else {
                stderr.write_all(rendered.as_bytes())
            };
            return code;
        }
    };
    match dispatch(cli.command, stdout, stderr) {
        Ok(code) => code,
        Err(msg) => {
            let _ = writeln!(stderr, "error: {msg}");
            1
        }
    }
}

type CmdResult = Result<i32, String>;

fn dispatch(cmd: Command, stdout: &mut dyn Write, stderr: &mut dyn Write) -> CmdResult {
    match cmd {
        Command::Synth(f) => synth(&f.resolve()?, stdout),
        Command::Train(f) => train(&f.resolve()?, stdout, stderr),
        Command::Eval(f) => eval(&f.resolve()?, stdout, stderr),
        Command::Gradcheck(f) => gradcheck(&f.resolve()?, stdout),
        Command::Folds(f) => folds(&f.resolve()?, stdout),
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> String {
    format!("{}: {e}", path.display())
}

fn require<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a PathBuf, String> {
    p.as_ref().ok_or_else(|| format!("--{flag} is required"))
}

fn load_corpus(path: &Path) -> Result<Corpus, String> {
    parse_corpus(path).map_err(|e| io_err(path, e))
}

fn load_embeddings(cfg: &RunConfig) -> Result<Option<PrecomputedEmbeddings>, String> {
    cfg.embeddings
        .as_ref()
        .map(|p| PrecomputedEmbeddings::load(p).map_err(|e| io_err(p, e)))
        .transpose()
}

fn write_out(out: Option<&PathBuf>, text: &str, stdout: &mut dyn Write) -> Result<(), String> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| io_err(path, e)),
        None => stdout.write_all(text.as_bytes()).map_err(|e| e.to_string()),
    }
}

fn synth(cfg: &RunConfig, stdout: &mut dyn Write) -> CmdResult {
    let corpus = generate_synthetic(&cfg.synth, cfg.train.seed).map_err(|e| e.to_string())?;
    write_out(cfg.out.as_ref(), &corpus.to_jsonl_string(), stdout)?;
    Ok(0)
}

fn train(cfg: &RunConfig, stdout: &mut dyn Write, stderr: &mut dyn Write) -> CmdResult {
    cfg.train.validate().map_err(|e| e.to_string())?;
    let corpus = load_corpus(require(&cfg.corpus, "corpus")?)?;
    let dev = cfg.dev.as_deref().map(load_corpus).transpose()?;
    let out = require(&cfg.out, "out")?;
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    fs::write(out.join("config.txt"), cfg.to_config_string()).map_err(|e| io_err(out, e))?;

    let model = cfg.train.build_model(&corpus, load_embeddings(cfg)?).map_err(|e| e.to_string())?;
    let log_path = out.join("train_log.jsonl");
    let mut log = fs::File::create(&log_path).map_err(|e| io_err(&log_path, e))?;
    let mut log_err = None;
    let outcome = fit(model, &corpus, dev.as_ref(), &cfg.train, |entry| {
        let line = serde_json::to_string(entry).expect("plain data serializes");
        if let Err(e) = writeln!(log, "{line}") {
            log_err.get_or_insert(e);
        }
        let dev_f1 = entry.dev.map(|d| format!("  dev ecpe f1 {:.4}", d.ecpe.f1)).unwrap_or_default();
        let _ = writeln!(
            stderr,
            "epoch {:>3}  loss {:.4} (pair {:.4}, aux {:.4}, kl {:.4}){dev_f1}",
            entry.epoch, entry.loss.total, entry.loss.pair, entry.loss.aux, entry.loss.kl
        );
    })
    .map_err(|e| e.to_string())?;
    if let Some(e) = log_err {
        return Err(io_err(&log_path, e));
    }

    let ck_path = cfg.checkpoint.clone().unwrap_or_else(|| out.join("checkpoint.json"));
    Checkpoint::capture(&outcome.model, &cfg.train, &corpus.vocabulary)
        .save(&ck_path)
        .map_err(|e| io_err(&ck_path, e))?;
    let eval_on = dev.as_ref().unwrap_or(&corpus);
    let report = evaluate(&outcome.model, eval_on, cfg.train.threshold, cfg.train.averaging).map_err(|e| e.to_string())?;
    fs::write(out.join("metrics.json"), report.to_json() + "\n").map_err(|e| io_err(out, e))?;
    let _ = writeln!(stderr, "best epoch {}; checkpoint {}", outcome.best_epoch, ck_path.display());
    writeln!(stdout, "{}", report.to_json()).map_err(|e| e.to_string())?;
    Ok(0)
}

fn eval(cfg: &RunConfig, stdout: &mut dyn Write, stderr: &mut dyn Write) -> CmdResult {
    cfg.train.validate().map_err(|e| e.to_string())?;
    let ck_path = require(&cfg.checkpoint, "checkpoint")?;
    let corpus = load_corpus(require(&cfg.corpus, "corpus")?)?;
    let ck = Checkpoint::load(ck_path).map_err(|e| io_err(ck_path, e))?;
    let model = ck.restore(load_embeddings(cfg)?).map_err(|e| io_err(ck_path, e))?;
    let report = evaluate(&model, &corpus, cfg.train.threshold, cfg.train.averaging).map_err(|e| e.to_string())?;
    if let Some(out) = &cfg.out {
        fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
        fs::write(out.join("config.txt"), cfg.to_config_string()).map_err(|e| io_err(out, e))?;
        fs::write(out.join("metrics.json"), report.to_json() + "\n").map_err(|e| io_err(out, e))?;
    }
    let _ = write!(stderr, "{}", report.table());
    writeln!(stdout, "{}", report.to_json()).map_err(|e| e.to_string())?;
    Ok(0)
}

/// Checks the configured model on one synthetic document of `clauses`
/// clauses, with a small vocabulary so every table row is exercised.
fn gradcheck(cfg: &RunConfig, stdout: &mut dyn Write) -> CmdResult {
    cfg.train.validate().map_err(|e| e.to_string())?;
    let n = cfg.clauses.max(1);
    let synth = SynthConfig {
        num_docs: 1,
        clauses_per_doc: IntRange::new(n, n),
        tokens_per_clause: IntRange::new(2, 4),
        vocab_size: 16,
        pair_distance: IntRange::new(0, n.saturating_sub(1).min(2)),
        pairs_per_doc: IntRange::new(1, 1),
    };
    let corpus = generate_synthetic(&synth, cfg.train.seed).map_err(|e| e.to_string())?;
    let train = TrainConfig {
        dropout: 0.0,
        ..cfg.train.clone()
    };
    let mut model = train.build_model(&corpus, None).map_err(|e| e.to_string())?;
    let net: Network = model.net.clone();
    let loss_cfg = train.loss_config();
    let doc = &corpus.documents[0];
    let report = grad_check(
        &mut model.params,
        |g, s| {
            let fwd = net.forward(g, s, doc, 0.0).map_err(|e| match e {
                EncoderError::Autodiff(a) => a,
                other => unreachable!("lookup encoding covers every synthetic token: {other}"),
            })?;
            Ok(net.losses(g, &fwd, doc, &loss_cfg)?.total)
        },
        1e-5,
        1e-4,
    )
    .map_err(|e| e.to_string())?;
    write!(stdout, "{report}").map_err(|e| e.to_string())?;
    Ok(if report.passed() { 0 } else { 1 })
}

#[derive(Serialize)]
struct FoldManifest {
    k: usize,
    seed: u64,
    folds: Vec<FoldIds>,
}

#[derive(Serialize)]
struct FoldIds {
    train: Vec<u64>,
    test: Vec<u64>,
}

fn folds(cfg: &RunConfig, stdout: &mut dyn Write) -> CmdResult {
    let corpus = load_corpus(require(&cfg.corpus, "corpus")?)?;
    let folds = split_folds(&corpus, cfg.folds, cfg.train.seed).map_err(|e| e.to_string())?;
    let ids = |idx: &[usize]| idx.iter().map(|&i| corpus.documents[i].doc_id).collect();
    let manifest = FoldManifest {
        k: cfg.folds,
        seed: cfg.train.seed,
        folds: folds
            .iter()
            .map(|f| FoldIds {
                train: ids(&f.train),
                test: ids(&f.test),
            })
            .collect(),
    };
    let text = serde_json::to_string_pretty(&manifest).expect("plain data serializes") + "\n";
    write_out(cfg.out.as_ref(), &text, stdout)?;
    Ok(0)
}

/// Entry point for the binary.
pub fn main_with_args(args: impl IntoIterator<Item = OsString>) -> i32 {
    let (mut out, mut err) = (io::stdout().lock(), io::stderr().lock());
    run_cli(args, &mut out, &mut err)
}
