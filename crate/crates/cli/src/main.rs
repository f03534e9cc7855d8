//! `bbio` command-line interface.
//!
//! Exit codes: 0 success, 1 I/O, 2 configuration, 3 data, 4 numerical
//! failure, 5 verification failure, 10 curation retained nothing (warning).

mod config;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};

use bbio_core::balance::{balance_score, CapabilityScores};
use bbio_core::metrics::{integration_score, IntegrationConfig};
use bbio_core::taskgen::{curate, read_corpus, read_dataset, synthetic_corpus, write_dataset};
use bbio_core::train::train;
use bbio_core::verify::{run_suite, VerifyOptions};
use bbio_core::Error;

use config::RunConfig;

pub const EXIT_IO: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_NUMERICAL: u8 = 4;
pub const EXIT_VERIFY: u8 = 5;
pub const EXIT_EMPTY_DATASET: u8 = 10;

#[derive(Debug)]
pub struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn new(code: u8, error: anyhow::Error) -> Self {
        Self { code, error }
    }
    pub fn config(e: anyhow::Error) -> Self {
        Self::new(EXIT_CONFIG, e)
    }
    pub fn io(e: anyhow::Error) -> Self {
        Self::new(EXIT_IO, e)
    }
    pub fn data(e: anyhow::Error) -> Self {
        Self::new(EXIT_DATA, e)
    }

    pub fn from_core(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) | Error::InvalidWeights(_) => EXIT_CONFIG,
            Error::NonFinite { .. } | Error::NonPositiveMean(_) => EXIT_NUMERICAL,
            Error::Io(_) => EXIT_IO,
            Error::Dimension { .. }
            | Error::EmptyCapability(_)
            | Error::Generation { .. }
            | Error::EmptyGroup
            | Error::InsufficientStratum { .. }
            | Error::Parse { .. }
            | Error::Json(_) => EXIT_DATA,
        };
        Self::new(code, e.into())
    }
}

#[derive(Parser)]
#[command(name = "bbio", version, about = "Multi-capability GRPO training kernel")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, env = "BBIO_CONFIG")]
    config: Option<PathBuf>,
    /// Output directory, overriding the config.
    #[arg(long, env = "BBIO_OUT")]
    out: Option<PathBuf>,
    /// Seed, overriding the config.
    #[arg(long, env = "BBIO_SEED")]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate and curate a task dataset.
    GenTasks(RunArgs),
    /// Run SFT then GRPO and write the run log.
    Train(RunArgs),
    /// Print Balance and Integration scores for each row of a scores file.
    EvalMetrics {
        /// Three whitespace- or comma-separated scores per line.
        scores: PathBuf,
        /// Named mu_min_domain preset.
        #[arg(long, env = "BBIO_PRESET", default_value = "comparison")]
        preset: String,
        /// Explicit mu_min_domain; overrides the preset.
        #[arg(long)]
        mu_min_domain: Option<f64>,
    },
    /// Run the oracle self-check suite.
    Verify {
        #[arg(long, env = "BBIO_SEED", default_value_t = 0)]
        seed: u64,
        /// Groups averaged by the estimator check.
        #[arg(long, default_value_t = 20_000)]
        groups: usize,
        #[arg(long, hide = true)]
        mutate_advantage_sign: bool,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("BBIO_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenTasks(a) => gen_tasks(&a),
        Command::Train(a) => cmd_train(&a),
        Command::EvalMetrics {
            scores,
            preset,
            mu_min_domain,
        } => eval_metrics(&scores, &preset, mu_min_domain),
        Command::Verify {
            seed,
            groups,
            mutate_advantage_sign,
        } => verify(VerifyOptions {
            seed,
            estimator_groups: groups,
            mutate_advantage_sign,
        }),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .with_context(|| format!("creating {}", path.display()))
        .map_err(Failure::io)
}

fn gen_tasks(args: &RunArgs) -> Result<u8, Failure> {
    let cfg = RunConfig::load(args.config.as_deref(), args.out.clone(), args.seed)?;
    let corpus = match &cfg.generate.corpus {
        Some(p) => {
            let f = File::open(p)
                .with_context(|| format!("opening corpus {}", p.display()))
                .map_err(Failure::data)?;
            read_corpus(BufReader::new(f)).map_err(Failure::from_core)?
        }
        None => synthetic_corpus(cfg.generate.n_docs, cfg.seed),
    };
    let ds = curate(&corpus, &cfg.generate.templates, &cfg.generate.quality, cfg.seed).map_err(Failure::from_core)?;
    cfg.echo("config.toml")?;
    let mut w = create(&cfg.out.join("dataset.jsonl"))?;
    write_dataset(&mut w, &ds).map_err(Failure::from_core)?;
    w.flush().context("flushing dataset").map_err(Failure::io)?;
    let table = ds.report.to_table();
    std::fs::write(cfg.out.join("composition.txt"), &table)
        .context("writing composition report")
        .map_err(Failure::io)?;
    print!("{table}");
    println!("generated {} retained {}", ds.report.generated, ds.report.retained);
    if ds.is_empty() {
        eprintln!("warning: no instance reached tau_medical = {}", cfg.generate.quality.tau_medical);
        return Ok(EXIT_EMPTY_DATASET);
    }
    Ok(0)
}

fn cmd_train(args: &RunArgs) -> Result<u8, Failure> {
    let cfg = RunConfig::load(args.config.as_deref(), args.out.clone(), args.seed)?;
    let dataset = match &cfg.dataset {
        Some(p) => {
            let f = File::open(p)
                .with_context(|| format!("opening dataset {}", p.display()))
                .map_err(Failure::data)?;
            let ds = read_dataset(BufReader::new(f)).map_err(Failure::from_core)?;
            if ds.is_empty() {
                return Err(Failure::data(anyhow!("dataset {} has no instances", p.display())));
            }
            Some(ds)
        }
        None => None,
    };
    let env = cfg.train.build_environment(dataset.as_ref()).map_err(Failure::from_core)?;
    cfg.echo("config.toml")?;
    let mut log = create(&cfg.out.join("runlog.jsonl"))?;
    let run = train(&cfg.train, &env, &mut |rec| {
        serde_json::to_writer(&mut log, rec)?;
        log.write_all(b"\n")?;
        log.flush()?;
        Ok(())
    })
    .map_err(Failure::from_core)?;
    let state = serde_json::to_string_pretty(&run.final_state).context("serializing state").map_err(Failure::io)?;
    std::fs::write(cfg.out.join("final_state.json"), state)
        .context("writing final state")
        .map_err(Failure::io)?;
    let last = run.last();
    let s = last.capability_scores;
    println!(
        "iterations {} scores ({:.3}, {:.3}, {:.3}) balance {:.3} max cosine {:.4} group {} penalty {}",
        last.iteration,
        s.s_domain,
        s.s_reasoning,
        s.s_instruction,
        last.balance,
        last.max_pairwise_cosine,
        last.group_size,
        last.penalty_lambda
    );
    Ok(0)
}

/// Parses a scores file: three numbers per line separated by whitespace or
/// commas; blank lines and `#` comments are skipped.
fn parse_scores(text: &str) -> Result<Vec<(usize, CapabilityScores)>, Error> {
    let mut rows = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse { line: k + 1, message };
        let vals = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>().map_err(|e| parse_err(format!("{s:?}: {e}"))))
            .collect::<Result<Vec<f64>, Error>>()?;
        if vals.len() != 3 {
            return Err(parse_err(format!("expected 3 scores, found {}", vals.len())));
        }
        let scores = CapabilityScores::new(vals[0], vals[1], vals[2]).map_err(|e| parse_err(e.to_string()))?;
        rows.push((k + 1, scores));
    }
    Ok(rows)
}

fn eval_metrics(path: &Path, preset: &str, mu_min_domain: Option<f64>) -> Result<u8, Failure> {
    let mut icfg = IntegrationConfig::preset(preset).map_err(Failure::from_core)?;
    if let Some(mu) = mu_min_domain {
        icfg = IntegrationConfig {
            mu_min_domain: mu,
            cf_decimals: None,
            ..icfg
        };
    }
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading scores {}", path.display()))
        .map_err(Failure::data)?;
    let rows = parse_scores(&text).map_err(Failure::from_core)?;
    let cf = icfg.confidence_factor().map_err(Failure::from_core)?;
    println!("# mu_target {} mu_min_domain {} C_f {}", icfg.mu_target, icfg.mu_min_domain, cf);
    for (line, s) in rows {
        let b = balance_score(&s).map_err(|e| Failure::from_core(Error::Parse { line, message: e.to_string() }))?;
        let i = integration_score(&s, &icfg).map_err(Failure::from_core)?;
        println!("line {line}: balance {b:.3} integration {i:.3}");
    }
    Ok(0)
}

fn verify(opts: VerifyOptions) -> Result<u8, Failure> {
    let results = run_suite(&opts);
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(0);
    for r in &results {
        println!("{:<width$}  {}  {}", r.name, if r.passed { "PASS" } else { "FAIL" }, r.detail);
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    println!("{} checks, {} failed", results.len(), failed);
    Ok(if failed == 0 { 0 } else { EXIT_VERIFY })
}
