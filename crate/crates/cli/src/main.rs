use std::io::{self, BufRead, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use cryptext_core::corpus::{self, BYDATE_URL};
use cryptext_core::pipeline::{self, Arm, ExperimentConfig};
use cryptext_core::wordcrypt::{derive_context, CipherContext};

#[derive(Parser)]
#[command(
    name = "cryptext",
    version,
    about = "Train text classifiers on word-level encrypted corpora"
)]
struct Cli {
    #[command(flatten)]
    opts: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalOpts {
    /// key = value experiment config
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Comma-separated category names
    #[arg(long, global = true)]
    categories: Option<String>,
    /// gbt, lstm or both
    #[arg(long, global = true)]
    classifier: Option<String>,
    /// Train document vectors over train+test jointly
    #[arg(long, global = true)]
    transductive: bool,
    /// Extra `key=value` overrides, applied last
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Download or unpack the 20news-bydate archive
    Fetch {
        /// Use a local archive instead of downloading
        #[arg(long)]
        archive: Option<PathBuf>,
        #[arg(long, default_value = "data/20news-bydate")]
        dest: PathBuf,
    },
    /// Clean and tokenize the corpus
    Prep,
    /// Encrypt the token files
    Encrypt {
        /// Decrypt again and check against the plaintext
        #[arg(long)]
        verify: bool,
    },
    /// Train document embeddings
    Embed {
        #[arg(long, default_value = "both")]
        arm: String,
    },
    /// Fit classifiers on document vectors
    Train {
        #[arg(long, default_value = "both")]
        arm: String,
    },
    /// Score classifiers on the test split
    Evaluate {
        #[arg(long, default_value = "both")]
        arm: String,
    },
    /// Run both arms end to end and compare them
    Compare {
        /// Do not fail when the arms differ
        #[arg(long)]
        allow_drift: bool,
    },
    /// Corpus inspection
    Corpus {
        #[command(subcommand)]
        command: CorpusCommand,
    },
}

#[derive(Subcommand)]
enum CorpusCommand {
    /// Print per-category document counts as JSON
    Stats,
}

fn load_config(opts: &GlobalOpts) -> Result<ExperimentConfig> {
    let mut cfg = match &opts.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = opts.seed {
        cfg.seed = s;
    }
    if let Some(c) = &opts.categories {
        cfg.set("categories", c)?;
    }
    if let Some(c) = &opts.classifier {
        cfg.set("classifier", c)?;
    }
    if opts.transductive {
        cfg.transductive = true;
    }
    for kv in &opts.set {
        let (k, v) = kv
            .split_once('=')
            .with_context(|| format!("--set expects KEY=VALUE, got {kv:?}"))?;
        cfg.set(k.trim(), v.trim())?;
    }
    Ok(cfg)
}

fn cipher_context(cfg: &ExperimentConfig) -> Result<CipherContext> {
    let pass = match std::env::var(&cfg.passphrase_env) {
        Ok(p) => p,
        Err(_) => {
            eprint!("passphrase ({} not set): ", cfg.passphrase_env);
            io::stderr().flush()?;
            let mut line = String::new();
            io::stdin().lock().read_line(&mut line)?;
            line.trim_end_matches(['\r', '\n']).to_string()
        }
    };
    Ok(derive_context(&pass)?)
}

fn arms(name: &str) -> Result<Vec<Arm>> {
    if name == "both" {
        Ok(Arm::BOTH.to_vec())
    } else {
        Ok(vec![name.parse()?])
    }
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn fetch(archive: Option<PathBuf>, dest: PathBuf) -> Result<()> {
    match archive {
        Some(a) => corpus::unpack_archive(&a, &dest)?,
        None => {
            eprintln!("downloading {BYDATE_URL}");
            let resp = ureq::get(BYDATE_URL).call().context("download failed")?;
            corpus::unpack_reader(resp.into_body().into_reader(), &dest)?;
        }
    }
    let c = corpus::load_corpus(&dest)?;
    eprintln!(
        "{}: {} categories, {} train, {} test",
        dest.display(),
        c.num_classes(),
        c.train.len(),
        c.test.len()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    if let Command::Fetch { archive, dest } = cli.command {
        fetch(archive, dest)?;
        return Ok(ExitCode::SUCCESS);
    }
    let cfg = load_config(&cli.opts)?;
    match cli.command {
        Command::Fetch { .. } => unreachable!(),
        Command::Prep => print_json(&pipeline::stage_prep(&cfg)?)?,
        Command::Encrypt { verify } => {
            let ctx = cipher_context(&cfg)?;
            pipeline::stage_encrypt(&cfg, &ctx)?;
            eprintln!("key fingerprint {}", ctx.fingerprint());
            if verify {
                let r = pipeline::stage_verify(&cfg, &ctx)?;
                println!(
                    "round trip: {}/{} tokens over {} documents ({:.2}%)",
                    r.matched,
                    r.tokens,
                    r.documents,
                    r.success_rate() * 100.0
                );
                if r.failures > 0 {
                    return Ok(ExitCode::FAILURE);
                }
            }
        }
        Command::Embed { arm } => {
            for a in arms(&arm)? {
                let s = pipeline::stage_embed(&cfg, a)
                    .with_context(|| format!("{} arm", a.as_str()))?;
                print_json(&s)?;
            }
        }
        Command::Train { arm } => {
            for a in arms(&arm)? {
                let s = pipeline::stage_train(&cfg, a)
                    .with_context(|| format!("{} arm", a.as_str()))?;
                print_json(&s)?;
            }
        }
        Command::Evaluate { arm } => {
            for a in arms(&arm)? {
                let evals = pipeline::stage_evaluate(&cfg, a)
                    .with_context(|| format!("{} arm", a.as_str()))?;
                for e in evals {
                    println!("== {} / {}", a.as_str(), e.classifier.as_str());
                    print!("{}", e.report.render());
                }
            }
        }
        Command::Compare { allow_drift } => {
            let ctx = cipher_context(&cfg)?;
            let (report, _) = pipeline::compare(&cfg, &ctx)?;
            print!("{}", report.render());
            if report.equivariance.plaintext_leaks > 0 {
                eprintln!("error: plaintext tokens found in the encrypted arm");
                return Ok(ExitCode::FAILURE);
            }
            if cfg.deterministic && !report.arms_identical() {
                if allow_drift {
                    eprintln!("warning: arms differ (allowed by --allow-drift)");
                } else {
                    eprintln!("error: plaintext and encrypted arms differ in deterministic mode");
                    return Ok(ExitCode::FAILURE);
                }
            }
        }
        Command::Corpus {
            command: CorpusCommand::Stats,
        } => print_json(&pipeline::load_configured_corpus(&cfg)?.stats())?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
