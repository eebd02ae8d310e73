//! The `namer` command line.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::assignment::{loss_all, loss_pgd, loss_vat, match_sample};
use crate::config::{Config, Overrides};
use crate::decode::{decode_timed, DecodeConfig, Decoded, StageTimes};
use crate::latex::{
    build_vocab, emit_latex, emit_latex_lenient, parse_latex, CanonicalTokenSeq, TokenVocab,
    END_SYMBOL, EOS_SYMBOL, NONE_SYMBOL, SOS_SYMBOL,
};
use crate::metrics::{evaluate, time_stats};
use crate::synth::{generate, synth_vocab, NoiseSpec, DEFAULT_DIMS};
use crate::tensor_io::{
    export_dot, read_tensor, write_tensor, AttentionStack, Grid, ScoreMatrix, Tensor,
};

#[derive(Debug, Parser)]
#[command(
    name = "namer",
    version,
    about = "Graph decoding toolkit for handwritten math recognition outputs"
)]
pub struct Cli {
    /// JSON config file; flags override its values.
    #[arg(long, global = true, display_order = 101, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Vocabulary TSV (falls back to the config file, then NAMER_VOCAB).
    #[arg(long, global = true, display_order = 102, value_name = "FILE")]
    pub vocab: Option<PathBuf>,
    #[command(flatten)]
    pub tunables: Tunables,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Tunables {
    /// Edge pruning threshold [default: 0.5]
    #[arg(long, global = true, display_order = 103)]
    pub epsilon: Option<f64>,
    /// Matching window side, odd [default: 5]
    #[arg(long, global = true, display_order = 104)]
    pub km: Option<usize>,
    /// Graph-decoder loss weight [default: 0.5]
    #[arg(long, global = true, display_order = 105)]
    pub lambda: Option<f64>,
    /// Right-head edge weight [default: 1.0]
    #[arg(long, global = true, display_order = 106)]
    pub l2r: Option<f64>,
    /// Left-head edge weight [default: 1.0]
    #[arg(long, global = true, display_order = 107)]
    pub r2l: Option<f64>,
    /// Random seed [default: 0]
    #[arg(long, global = true, display_order = 108)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tokenize a LaTeX label into node tokens.
    Parse {
        /// LaTeX label to tokenize.
        #[arg(long)]
        latex: String,
    },
    /// Emit LaTeX from space-separated node tokens.
    Emit {
        /// Space-separated node tokens.
        #[arg(long)]
        tokens: String,
        /// Repair ill-nested input instead of failing.
        #[arg(long)]
        lenient: bool,
    },
    /// Build a vocabulary from a corpus of labels, one per line.
    Vocab {
        /// Label file, one expression per line.
        #[arg(long)]
        corpus: PathBuf,
        /// Write the TSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Assign training targets from a grid and teacher attention.
    Match {
        /// Symbol probability grid (NAMT).
        #[arg(long)]
        probs: PathBuf,
        /// Teacher attention stack (NAMT).
        #[arg(long)]
        attn: PathBuf,
        /// Ground-truth LaTeX label.
        #[arg(long)]
        label: String,
        /// Self-head scores; enables the graph loss.
        #[arg(long = "self", requires_all = ["left", "right"])]
        self_probs: Option<PathBuf>,
        /// Left-head scores.
        #[arg(long)]
        left: Option<PathBuf>,
        /// Right-head scores.
        #[arg(long)]
        right: Option<PathBuf>,
        /// Write the target grid as a NAMT tensor.
        #[arg(long)]
        target_out: Option<PathBuf>,
    },
    /// Decode score tensors into LaTeX.
    Decode(DecodeArgs),
    /// Score predictions against references.
    Eval {
        /// Predicted labels, one per line.
        #[arg(long)]
        pred: PathBuf,
        /// Reference labels, one per line.
        #[arg(long = "ref")]
        refs: PathBuf,
    },
    /// Write synthetic samples.
    Gen {
        /// Number of samples.
        #[arg(long, default_value_t = 10)]
        count: usize,
        /// Maximum structure nesting depth.
        #[arg(long, default_value_t = 2)]
        depth: usize,
        /// Noise as flip,spurious,temperature.
        #[arg(long, default_value = "0,0,0")]
        noise: NoiseSpec,
        /// Grid height.
        #[arg(long, default_value_t = DEFAULT_DIMS.0)]
        height: usize,
        /// Grid width.
        #[arg(long, default_value_t = DEFAULT_DIMS.1)]
        width: usize,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the resolved configuration.
    Config,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    /// Symbol probability grid (NAMT).
    #[arg(long, required_unless_present = "samples", requires_all = ["self_probs", "left", "right"])]
    probs: Option<PathBuf>,
    /// Self-head scores.
    #[arg(long = "self")]
    self_probs: Option<PathBuf>,
    /// Left-head scores.
    #[arg(long)]
    left: Option<PathBuf>,
    /// Right-head scores.
    #[arg(long)]
    right: Option<PathBuf>,
    /// Directory written by `gen`.
    #[arg(long, conflicts_with_all = ["probs", "dot"])]
    samples: Option<PathBuf>,
    /// Treat the grid as logits.
    #[arg(long)]
    logits: bool,
    /// Write the pruned graph with the chosen path in DOT.
    #[arg(long)]
    dot: Option<PathBuf>,
    /// Print stage timing to stderr.
    #[arg(long)]
    timing: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub count: usize,
    pub seed: u64,
    pub depth: usize,
    pub noise: NoiseSpec,
    pub height: usize,
    pub width: usize,
    pub samples: Vec<String>,
}

pub const SAMPLE_FILES: [&str; 5] = [
    "probs.namt",
    "attn.namt",
    "self.namt",
    "left.namt",
    "right.namt",
];

/// Runs the CLI; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}");
            2
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct UsageError(String);

pub fn resolve_config(cli: &Cli) -> Result<Config> {
    let base = match &cli.config {
        Some(path) => Config::load(path).with_context(|| format!("reading {}", path.display()))?,
        None => Config::default(),
    };
    let t = &cli.tunables;
    Ok(base.apply(&Overrides {
        epsilon: t.epsilon,
        km: t.km,
        lambda: t.lambda,
        alpha_l2r: t.l2r,
        alpha_r2l: t.r2l,
        vocab_path: cli.vocab.clone(),
        seed: t.seed,
    })?)
}

fn load_vocab(config: &Config) -> Result<Option<TokenVocab>> {
    config
        .vocab_path()
        .map(|p| {
            TokenVocab::load(&p).with_context(|| format!("reading vocabulary {}", p.display()))
        })
        .transpose()
}

fn require_vocab(config: &Config) -> Result<TokenVocab> {
    load_vocab(config)?.ok_or_else(|| {
        UsageError("a vocabulary is required (--vocab, config or NAMER_VOCAB)".into()).into()
    })
}

fn read<T>(path: &Path) -> Result<T>
where
    T: TryFrom<Tensor, Error = crate::tensor_io::TensorError>,
{
    let t = read_tensor(path).with_context(|| format!("reading {}", path.display()))?;
    T::try_from(t).with_context(|| format!("in {}", path.display()))
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    let config = resolve_config(&cli).map_err(|e| UsageError(format!("{e:#}")))?;
    match cli.command {
        Command::Parse { latex } => {
            let vocab = match load_vocab(&config)? {
                Some(v) => v,
                None => build_vocab(&[latex.as_str()])?,
            };
            let seq = parse_latex(&latex, &vocab)?;
            print_json(&json!({
                "tokens": seq.symbols(&vocab),
                "ids": seq.tokens,
            }))
        }
        Command::Emit { tokens, lenient } => {
            let symbols: Vec<&str> = tokens.split_whitespace().collect();
            let vocab = match load_vocab(&config)? {
                Some(v) => v,
                None => {
                    let special = [END_SYMBOL, NONE_SYMBOL, SOS_SYMBOL, EOS_SYMBOL];
                    TokenVocab::from_symbols(
                        symbols.iter().filter(|s| !special.contains(s)).copied(),
                    )?
                }
            };
            let ids = symbols
                .iter()
                .map(|s| {
                    vocab
                        .lookup(s)
                        .ok_or_else(|| anyhow!("symbol {s:?} not in vocabulary"))
                })
                .collect::<Result<Vec<_>>>()?;
            let latex = if lenient {
                emit_latex_lenient(&ids, &vocab)
            } else {
                emit_latex(&CanonicalTokenSeq::new(ids), &vocab)?
            };
            println!("{latex}");
            Ok(())
        }
        Command::Vocab { corpus, out } => {
            let text = fs::read_to_string(&corpus)
                .with_context(|| format!("reading {}", corpus.display()))?;
            let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
            let vocab = build_vocab(&lines)?;
            match out {
                Some(path) => vocab.save(&path)?,
                None => print!("{}", vocab.to_tsv()),
            }
            Ok(())
        }
        Command::Match {
            probs,
            attn,
            label,
            self_probs,
            left,
            right,
            target_out,
        } => {
            let vocab = require_vocab(&config)?;
            let p: Grid = read(&probs)?;
            let a: AttentionStack = read(&attn)?;
            let seq = parse_latex(&label, &vocab)?;
            let target = match_sample(&p, &a, &seq, &vocab, config.km)?;
            let vat = loss_vat(&p, &target.grid)?;
            let mut report = json!({ "target": target, "loss_vat": vat });
            if let (Some(s), Some(l), Some(r)) = (self_probs, left, right) {
                let pgd = loss_pgd(&read(&s)?, &read(&l)?, &read(&r)?, &target.targets)?;
                report["loss_pgd"] = serde_json::to_value(pgd)?;
                report["loss_all"] = json!(loss_all(vat, &pgd, config.lambda));
            }
            if let Some(path) = target_out {
                write_tensor(&target.grid.to_tensor(), &path)?;
            }
            print_json(&report)
        }
        Command::Decode(args) => decode_command(args, &config),
        Command::Eval { pred, refs } => {
            let vocab = require_vocab(&config)?;
            let preds = read_lines(&pred)?;
            let refs = read_lines(&refs)?;
            print_json(&evaluate(&preds, &refs, &vocab)?)
        }
        Command::Gen {
            count,
            depth,
            noise,
            height,
            width,
            out,
        } => gen_command(count, depth, noise, (height, width), &out, config.seed),
        Command::Config => print_json(&config),
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text.lines().map(str::to_string).collect())
}

fn decode_config(config: &Config, logits: bool) -> DecodeConfig {
    DecodeConfig {
        epsilon: config.epsilon,
        alpha_l2r: config.alpha_l2r,
        alpha_r2l: config.alpha_r2l,
        logits,
    }
}

struct SampleTensors {
    p: Grid,
    self_probs: ScoreMatrix,
    left: ScoreMatrix,
    right: ScoreMatrix,
}

fn load_sample(probs: &Path, s: &Path, l: &Path, r: &Path) -> Result<SampleTensors> {
    Ok(SampleTensors {
        p: read(probs)?,
        self_probs: read(s)?,
        left: read(l)?,
        right: read(r)?,
    })
}

fn decode_one(
    t: &SampleTensors,
    cfg: &DecodeConfig,
    vocab: &TokenVocab,
) -> Result<(Decoded, StageTimes)> {
    Ok(decode_timed(
        &t.p,
        &t.self_probs,
        &t.left,
        &t.right,
        cfg,
        vocab,
    )?)
}

fn decode_command(args: DecodeArgs, config: &Config) -> Result<()> {
    let cfg = decode_config(config, args.logits);
    if let Some(dir) = &args.samples {
        let vocab = match load_vocab(config)? {
            Some(v) => v,
            None => {
                TokenVocab::load(dir.join("vocab.tsv")).context("reading the sample vocabulary")?
            }
        };
        let manifest: Manifest = serde_json::from_str(
            &fs::read_to_string(dir.join("manifest.json")).context("reading manifest.json")?,
        )?;
        let results: Vec<Result<(Decoded, StageTimes)>> = manifest
            .samples
            .par_iter()
            .map(|name| {
                let d = dir.join(name);
                let f = |i: usize| d.join(SAMPLE_FILES[i]);
                let t = load_sample(&f(0), &f(2), &f(3), &f(4))?;
                decode_one(&t, &cfg, &vocab).with_context(|| format!("sample {name}"))
            })
            .collect();
        let mut times = Vec::new();
        let mut failures = 0;
        for r in results {
            match r {
                Ok((d, t)) => {
                    println!("{}", d.latex);
                    times.push(t);
                }
                Err(e) => {
                    eprintln!("error: {e:#}");
                    println!();
                    failures += 1;
                }
            }
        }
        if args.timing && !times.is_empty() {
            eprintln!("{}", serde_json::to_string(&time_stats(&times)?)?);
        }
        if failures > 0 {
            bail!(
                "{failures} of {} samples failed to decode",
                manifest.samples.len()
            );
        }
        return Ok(());
    }

    let vocab = require_vocab(config)?;
    let path = |p: &Option<PathBuf>, flag: &str| {
        p.clone()
            .ok_or_else(|| anyhow::Error::from(UsageError(format!("--{flag} is required"))))
    };
    let t = load_sample(
        &path(&args.probs, "probs")?,
        &path(&args.self_probs, "self")?,
        &path(&args.left, "left")?,
        &path(&args.right, "right")?,
    )?;
    let (d, times) = decode_one(&t, &cfg, &vocab)?;
    if let Some(dot) = &args.dot {
        export_dot(&d.graph, Some(&d.path), dot)?;
    }
    if args.timing {
        eprintln!("{}", serde_json::to_string(&time_stats(&[times])?)?);
    }
    println!("{}", d.latex);
    Ok(())
}

fn gen_command(
    count: usize,
    depth: usize,
    noise: NoiseSpec,
    dims: (usize, usize),
    out: &Path,
    seed: u64,
) -> Result<()> {
    let started = Instant::now();
    let vocab = synth_vocab();
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    vocab.save(out.join("vocab.tsv"))?;
    let names: Vec<String> = (0..count).map(|i| format!("{i:05}")).collect();
    let labels = names
        .par_iter()
        .enumerate()
        .map(|(i, name)| {
            let s = generate(seed.wrapping_add(i as u64), depth, dims, noise, &vocab)?;
            let dir = out.join(name);
            fs::create_dir_all(&dir)?;
            let tensors: [Tensor; 5] = [
                s.p.into(),
                s.attention.into(),
                s.self_probs.into(),
                s.left.into(),
                s.right.into(),
            ];
            for (t, file) in tensors.iter().zip(SAMPLE_FILES) {
                write_tensor(t, dir.join(file))?;
            }
            fs::write(dir.join("label.txt"), format!("{}\n", s.latex))?;
            Ok(s.latex)
        })
        .collect::<Result<Vec<String>>>()?;
    let mut text = labels.join("\n");
    text.push('\n');
    fs::write(out.join("labels.txt"), text)?;
    let manifest = Manifest {
        count,
        seed,
        depth,
        noise,
        height: dims.0,
        width: dims.1,
        samples: names,
    };
    fs::write(
        out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    eprintln!(
        "wrote {count} samples to {} in {:.2?}",
        out.display(),
        started.elapsed()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("namer").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn defaults_resolve() {
        let c = resolve_config(&parse(&["config"])).unwrap();
        assert_eq!(
            (c.epsilon, c.km, c.lambda, c.alpha_l2r, c.alpha_r2l),
            (0.5, 5, 0.5, 1.0, 1.0)
        );
    }

    #[test]
    fn flags_override_anywhere() {
        let c = resolve_config(&parse(&["--epsilon", "0.2", "config", "--km", "7"])).unwrap();
        assert_eq!((c.epsilon, c.km), (0.2, 7));
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run(["namer", "frobnicate"]), 2);
        assert_eq!(run(["namer", "decode"]), 2);
        assert_eq!(run(["namer", "config", "--km", "4"]), 2);
    }
}
