mod render;
mod stats;

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use tracescope_core::builder::{BuildConfig, DocumentRecord, IndexBuilder, Vocabulary, DEFAULT_SHARD_CAP};
use tracescope_core::index::shard_dirs;
use tracescope_core::tokenizer::TokenClassTable;
use tracescope_core::{validate_shard, Error as CoreError, Index, Stage, TraceConfig, Tracer};
use tracescope_service::ServiceConfig;

/// Trace language-model output back to verbatim matches in a training corpus.
#[derive(Parser)]
#[command(name = "tracescope", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build an index from a JSONL corpus of {text, source?, stage?} lines.
    Build {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Maximum tokens per shard, separators included.
        #[arg(long, default_value_t = DEFAULT_SHARD_CAP)]
        shard_cap: u64,
        /// `default`, or the path of a tokenizer.json vocabulary.
        #[arg(long, default_value = "default")]
        tokenizer: String,
    },
    /// Trace one response against an index.
    Trace {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        prompt_file: Option<PathBuf>,
        #[arg(long)]
        response_file: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        max_docs_per_span: Option<usize>,
        #[arg(long, value_enum, default_value_t = Format::Pretty)]
        format: Format,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, env = "TRACESCOPE_INDEX_ROOT")]
        index: PathBuf,
        #[arg(long, env = "TRACESCOPE_LISTEN", default_value = "127.0.0.1:8080")]
        listen: SocketAddr,
        /// Worker threads per trace; 0 uses every CPU.
        #[arg(long, default_value_t = 0)]
        parallelism: usize,
        #[arg(long, default_value_t = 30)]
        timeout_secs: u64,
        #[arg(long, default_value_t = 4 << 20)]
        body_limit: usize,
        /// Token required by the takedown endpoint. Takedowns are refused when unset.
        #[arg(long, env = "TRACESCOPE_ADMIN_TOKEN", hide_env_values = true)]
        admin_token: Option<String>,
    },
    /// Exclude documents from all future traces.
    Takedown {
        #[arg(long)]
        index: PathBuf,
        /// Document as `shard:doc`; repeatable.
        #[arg(long = "doc", required = true, value_parser = parse_doc_ref)]
        docs: Vec<(u32, u64)>,
    },
    /// Summarize saved trace results.
    ///
    /// Reads every *.json TraceResult in --traces and prints a span-length
    /// histogram, mean and median span length, and relevance-bucket
    /// fractions. Published corpus-scale figures depend on the original
    /// training data and are not reproduced by this command.
    Stats {
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long)]
        traces: Option<PathBuf>,
    },
    /// Check every shard for structural integrity.
    Validate {
        #[arg(long)]
        index: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Pretty,
}

/// Bad invocation or input the user must fix; exits 1.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn parse_doc_ref(s: &str) -> Result<(u32, u64), String> {
    let (shard, doc) = s.split_once(':').ok_or_else(|| format!("expected shard:doc, got {s:?}"))?;
    let shard = shard.parse().map_err(|_| format!("bad shard id in {s:?}"))?;
    let doc = doc.parse().map_err(|_| format!("bad doc id in {s:?}"))?;
    Ok((shard, doc))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Build {
            input,
            out,
            shard_cap,
            tokenizer,
        } => build(&input, &out, shard_cap, &tokenizer),
        Command::Trace {
            index,
            prompt_file,
            response_file,
            seed,
            max_docs_per_span,
            format,
        } => trace(&index, prompt_file.as_deref(), &response_file, seed, max_docs_per_span, format),
        Command::Serve {
            index,
            listen,
            parallelism,
            timeout_secs,
            body_limit,
            admin_token,
        } => {
            let mut config = ServiceConfig::new(index);
            config.listen = listen;
            config.parallelism = parallelism;
            config.timeout = Duration::from_secs(timeout_secs);
            config.body_limit = body_limit;
            config.admin_token = admin_token.filter(|t| !t.is_empty());
            config.validate().map_err(usage)?;
            let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            runtime.block_on(tracescope_service::serve(config))?;
            Ok(())
        }
        Command::Takedown { index, docs } => takedown(&index, &docs),
        Command::Stats { index, traces } => stats(index.as_deref(), traces.as_deref()),
        Command::Validate { index } => validate(&index),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InputLine {
    text: String,
    #[serde(default)]
    source: Option<String>,
    #[serde(default)]
    stage: Option<String>,
}

fn build(input: &Path, out: &Path, shard_cap: u64, tokenizer: &str) -> Result<()> {
    let vocab = if tokenizer == "default" {
        Vocabulary::default_tokenizer()
    } else {
        let table = TokenClassTable::load(Path::new(tokenizer))
            .with_context(|| format!("loading tokenizer {tokenizer}"))?;
        Vocabulary::Fixed(table)
    };
    let file = File::open(input).with_context(|| format!("opening {}", input.display()))?;
    if out.exists() && out.read_dir()?.next().is_some() {
        bail!("{} exists and is not empty", out.display());
    }
    let created = !out.exists();
    let result = build_into(BufReader::new(file), out, shard_cap, vocab);
    if result.is_err() && created && out.exists() {
        std::fs::remove_dir_all(out).with_context(|| format!("removing partial index {}", out.display()))?;
    }
    let summary = result?;
    let shards = summary.shards.len();
    println!(
        "{} docs, {} tokens, {} shard{}",
        summary.num_docs(),
        summary.num_tokens(),
        shards,
        if shards == 1 { "" } else { "s" }
    );
    Ok(())
}

fn build_into(
    reader: impl BufRead,
    out: &Path,
    shard_cap: u64,
    vocab: Vocabulary,
) -> Result<tracescope_core::BuildSummary> {
    let mut builder = IndexBuilder::new(out, BuildConfig { shard_cap }, vocab)?;
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.with_context(|| format!("reading line {lineno}"))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: InputLine = serde_json::from_str(&line).with_context(|| format!("line {lineno}: invalid JSON"))?;
        let stage = match rec.stage.as_deref() {
            None => Stage::Pretraining,
            Some(s) => s.parse().with_context(|| format!("line {lineno}"))?,
        };
        let source = rec.source.unwrap_or_else(|| format!("line-{lineno}"));
        builder
            .add(DocumentRecord::text(source, stage, rec.text))
            .with_context(|| format!("line {lineno}"))?;
    }
    Ok(builder.finish()?)
}

fn trace(
    index: &Path,
    prompt_file: Option<&Path>,
    response_file: &Path,
    seed: u64,
    max_docs_per_span: Option<usize>,
    format: Format,
) -> Result<()> {
    let response = std::fs::read_to_string(response_file)
        .with_context(|| format!("reading {}", response_file.display()))?;
    if response.is_empty() {
        return Err(usage(format!("{} is empty", response_file.display())));
    }
    let prompt = match prompt_file {
        Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        None => String::new(),
    };
    let mut config = TraceConfig {
        rng_seed: seed,
        ..TraceConfig::default()
    };
    if let Some(n) = max_docs_per_span {
        config.max_docs_per_span = n;
    }
    config.validate().map_err(|e| usage(e.to_string()))?;

    let index = Index::open(index).with_context(|| format!("opening index {}", index.display()))?;
    let tracer = Tracer::new(Arc::new(index), 0)?;
    let result = tracer.trace(&prompt, &response, &config)?;
    let mut stdout = std::io::stdout().lock();
    match format {
        Format::Json => writeln!(stdout, "{}", result.to_json())?,
        Format::Pretty => render::pretty(&mut stdout, &response, &result)?,
    }
    Ok(())
}

fn takedown(root: &Path, docs: &[(u32, u64)]) -> Result<()> {
    let index = Index::open(root).with_context(|| format!("opening index {}", root.display()))?;
    match index.take_down(docs) {
        Ok(report) => {
            println!(
                "{} applied, {} already present",
                report.applied, report.already_present
            );
            Ok(())
        }
        Err(CoreError::UnknownDocuments { unknown, report }) => {
            println!(
                "{} applied, {} already present, {} unknown",
                report.applied, report.already_present, report.unknown
            );
            let list: Vec<String> = unknown.iter().map(|(s, d)| format!("{s}:{d}")).collect();
            Err(anyhow!("unknown documents: {}", list.join(", ")))
        }
        Err(e) => Err(e.into()),
    }
}

fn stats(index: Option<&Path>, traces: Option<&Path>) -> Result<()> {
    if index.is_none() && traces.is_none() {
        return Err(usage("stats needs --traces, --index, or both"));
    }
    let mut stdout = std::io::stdout().lock();
    if let Some(root) = index {
        let index = Index::open(root).with_context(|| format!("opening index {}", root.display()))?;
        writeln!(
            stdout,
            "index: {} shards, {} docs, {} tokens",
            index.shards().len(),
            index.num_docs(),
            index.num_tokens()
        )?;
    }
    let results = match traces {
        Some(dir) => stats::load_traces(dir)?,
        None => Vec::new(),
    };
    stats::Summary::from_traces(&results).write(&mut stdout)?;
    Ok(())
}

fn validate(root: &Path) -> Result<()> {
    let dirs = shard_dirs(root).with_context(|| format!("reading {}", root.display()))?;
    if dirs.is_empty() {
        bail!("{} contains no shards", root.display());
    }
    let mut failures = Vec::new();
    for dir in &dirs {
        let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let report = match validate_shard(dir) {
            Ok(r) => r,
            Err(e) => {
                println!("{name}: error: {e}");
                failures.push(format!("{name}: {e}"));
                continue;
            }
        };
        for check in &report.checks {
            let status = if check.passed { "ok" } else { "FAILED" };
            if check.detail.is_empty() {
                println!("{name} {:<16} {status}", check.name);
            } else {
                println!("{name} {:<16} {status} ({})", check.name, check.detail);
            }
        }
        failures.extend(report.failed().map(|c| format!("{name}: {}", c.name)));
    }
    if !failures.is_empty() {
        bail!("validation failed: {}", failures.join(", "));
    }
    Index::open(root).context("shards are individually valid but the index does not open")?;
    println!("{} shards ok", dirs.len());
    Ok(())
}
