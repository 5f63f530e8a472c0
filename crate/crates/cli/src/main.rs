//! `ledgerlens` command-line tool.
//!
//! Exit status: 0 on success, 2 when the input is invalid (bad arguments,
//! malformed transactions or tags, bad generator config), 1 for any other
//! failure such as I/O errors or a damaged corpus directory.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use ledgerlens::timefmt::parse_time;
use ledgerlens::{generate_synthetic, import_tags, parse_transactions, Corpus, GeneratorConfig, Series};
use ledgerlens_server::ServerConfig;

#[derive(Parser)]
#[command(name = "ledgerlens", version, about = "Entity-centred Bitcoin ledger analytics")]
struct Cli {
    /// Print machine-readable JSON summaries instead of text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a transaction JSONL file and build a corpus directory.
    Ingest {
        /// Transaction JSONL, or `-` for stdin.
        #[arg(long, short)]
        input: PathBuf,
        #[arg(long, short, env = "LEDGERLENS_CORPUS")]
        corpus: PathBuf,
        /// Optional known-address CSV imported after the build.
        #[arg(long)]
        tags: Option<PathBuf>,
    },
    /// Import (or replace) the known-address tags of a corpus.
    Tags {
        #[arg(long, short, env = "LEDGERLENS_CORPUS")]
        corpus: PathBuf,
        #[arg(long)]
        tags: PathBuf,
    },
    /// Print the manifest of a corpus directory.
    Info {
        #[arg(long, short, env = "LEDGERLENS_CORPUS")]
        corpus: PathBuf,
    },
    /// Generate a synthetic ledger with planted entity profiles.
    Gen {
        /// Generator config as a JSON file; defaults apply to missing fields.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Transaction JSONL output, or `-` for stdout.
        #[arg(long, short)]
        output: PathBuf,
        /// Ground-truth JSONL sidecar (address, entity, profile).
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Known-address CSV sidecar.
        #[arg(long)]
        tags: Option<PathBuf>,
    },
    /// Write per-entity activity measures for a time range as CSV.
    ExportMeasures {
        #[arg(long, short, env = "LEDGERLENS_CORPUS")]
        corpus: PathBuf,
        /// Range start, unix seconds or ISO-8601 (default: first transaction).
        #[arg(long)]
        from: Option<String>,
        /// Exclusive range end (default: just after the last transaction).
        #[arg(long)]
        to: Option<String>,
        /// CSV output, or `-` for stdout.
        #[arg(long, short, default_value = "-")]
        output: PathBuf,
    },
    /// Write entity membership (`entity_id,address`) and entity tags as CSV.
    ExportEntities {
        #[arg(long, short, env = "LEDGERLENS_CORPUS")]
        corpus: PathBuf,
        /// Membership CSV, or `-` for stdout.
        #[arg(long, short, default_value = "-")]
        output: PathBuf,
        /// Optional `entity_id,label,category` CSV of tagged entities.
        #[arg(long)]
        tags_output: Option<PathBuf>,
    },
    /// Serve the HTTP API over a corpus.
    Serve {
        #[arg(long, short, env = "LEDGERLENS_CORPUS")]
        corpus: PathBuf,
        /// Known-address CSV applied in memory on top of the corpus tags.
        #[arg(long, env = "LEDGERLENS_TAGS")]
        tags: Option<PathBuf>,
        #[arg(long, env = "LEDGERLENS_LISTEN", default_value = "127.0.0.1:8080")]
        listen: SocketAddr,
        /// Idle session timeout in seconds.
        #[arg(long, env = "LEDGERLENS_SESSION_TIMEOUT", default_value_t = 7200)]
        session_timeout: u64,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("LEDGERLENS_LOG").unwrap_or_else(|_| "info".into()),
        )
        .with_writer(io::stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<ledgerlens::Error>() {
            return if err.is_input_error() { 2 } else { 1 };
        }
        if cause.downcast_ref::<serde_json::Error>().is_some() || cause.downcast_ref::<InputError>().is_some() {
            return 2;
        }
    }
    1
}

#[derive(Debug)]
struct InputError(String);

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

fn open_input(path: &Path) -> anyhow::Result<Box<dyn BufRead>> {
    if path.as_os_str() == "-" {
        return Ok(Box::new(BufReader::new(io::stdin())));
    }
    let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    Ok(Box::new(BufReader::new(f)))
}

fn open_output(path: &Path) -> anyhow::Result<Box<dyn Write>> {
    if path.as_os_str() == "-" {
        return Ok(Box::new(BufWriter::new(io::stdout())));
    }
    let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(Box::new(BufWriter::new(f)))
}

fn time_arg(s: &str) -> anyhow::Result<i64> {
    parse_time(s).map_err(|e| InputError(e).into())
}

fn print_manifest(json: bool, m: &ledgerlens::CorpusManifest) -> anyhow::Result<()> {
    if json {
        println!("{}", serde_json::to_string_pretty(m)?);
        return Ok(());
    }
    let c = &m.counts;
    println!("corpus {}", m.corpus_id);
    println!("  transactions {}  addresses {}  entities {}  day slices {}", c.transactions, c.addresses, c.entities, c.slices);
    println!("  tagged addresses {}  tagged entities {}", c.tagged_addresses, c.tagged_entities);
    if let Some((lo, hi)) = m.time_bounds {
        println!("  time {} .. {}", ledgerlens::timefmt::format_time(lo), ledgerlens::timefmt::format_time(hi));
    }
    Ok(())
}

fn load_tags(corpus: &mut Corpus, path: &Path) -> anyhow::Result<()> {
    let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let tags = import_tags(f, &corpus.store).with_context(|| format!("tags {}", path.display()))?;
    if tags.unknown_addresses > 0 {
        tracing::warn!(rows = tags.unknown_addresses, "tag rows name addresses absent from the corpus");
    }
    if tags.duplicate_warnings > 0 {
        tracing::warn!(rows = tags.duplicate_warnings, "duplicate tag rows ignored");
    }
    corpus.set_tags(tags);
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Ingest { input, corpus: dir, tags } => {
            let store = parse_transactions(open_input(&input)?).with_context(|| format!("input {}", input.display()))?;
            let mut corpus = Corpus::build(store)?;
            if let Some(path) = tags {
                load_tags(&mut corpus, &path)?;
            }
            let manifest = corpus.save(&dir)?;
            print_manifest(cli.json, &manifest)
        }
        Command::Tags { corpus: dir, tags } => {
            let (mut corpus, _) = Corpus::load(&dir)?;
            load_tags(&mut corpus, &tags)?;
            let manifest = corpus.save(&dir)?;
            print_manifest(cli.json, &manifest)
        }
        Command::Info { corpus: dir } => print_manifest(cli.json, &Corpus::read_manifest(&dir)?),
        Command::Gen { spec, seed, output, truth, tags } => {
            let mut cfg: GeneratorConfig = match spec {
                Some(path) => {
                    let raw = std::fs::read(&path).with_context(|| format!("cannot read {}", path.display()))?;
                    serde_json::from_slice(&raw).with_context(|| format!("generator config {}", path.display()))?
                }
                None => GeneratorConfig::default(),
            };
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let synth = generate_synthetic(&cfg)?;
            let mut out = open_output(&output)?;
            synth.write_jsonl(&mut out)?;
            out.flush()?;
            if let Some(path) = truth {
                let mut w = open_output(&path)?;
                synth.write_truth(&mut w)?;
                w.flush()?;
            }
            if let Some(path) = tags {
                let mut w = open_output(&path)?;
                synth.write_tags_csv(&mut w)?;
                w.flush()?;
            }
            if cli.json {
                let summary = serde_json::json!({ "transactions": synth.records.len(), "entities": cfg.n_entities, "seed": cfg.seed });
                eprintln!("{summary}");
            }
            Ok(())
        }
        Command::ExportMeasures { corpus: dir, from, to, output } => {
            let (corpus, manifest) = Corpus::load(&dir)?;
            let (lo, hi) = manifest.time_bounds.map_or((0, 1), |(lo, hi)| (lo, hi + 1));
            let from = from.as_deref().map(time_arg).transpose()?.unwrap_or(lo);
            let to = to.as_deref().map(time_arg).transpose()?.unwrap_or(hi);
            let table = corpus.slices.compute_measures(None, from, to)?;
            let series = Series::all();
            let mut w = csv::Writer::from_writer(open_output(&output)?);
            let mut header = vec!["entity".to_owned(), "tag".to_owned(), "num_txs".to_owned()];
            header.extend(series.iter().map(Series::name));
            w.write_record(&header)?;
            for m in table.rows() {
                let mut row = vec![
                    m.entity.0.to_string(),
                    corpus.index.tag(m.entity).map(|t| t.label.clone()).unwrap_or_default(),
                    m.num_txs.to_string(),
                ];
                row.extend(series.iter().map(|&s| m.value::<f64>(s).map(|v| v.to_string()).unwrap_or_default()));
                w.write_record(&row)?;
            }
            w.flush()?;
            Ok(())
        }
        Command::ExportEntities { corpus: dir, output, tags_output } => {
            let (corpus, _) = Corpus::load(&dir)?;
            let mut w = csv::Writer::from_writer(open_output(&output)?);
            w.write_record(["entity_id", "address"])?;
            for e in corpus.index.entities() {
                for &a in corpus.index.members(e) {
                    w.write_record([e.0.to_string().as_str(), corpus.store.address(a)])?;
                }
            }
            w.flush()?;
            if let Some(path) = tags_output {
                let mut w = csv::Writer::from_writer(open_output(&path)?);
                w.write_record(["entity_id", "label", "category"])?;
                for (e, tag) in corpus.index.tagged() {
                    w.write_record([e.0.to_string().as_str(), &tag.label, tag.category.as_str()])?;
                }
                w.flush()?;
            }
            Ok(())
        }
        Command::Serve { corpus: dir, tags, listen, session_timeout } => {
            if session_timeout == 0 {
                bail!(InputError("--session-timeout must be positive".into()));
            }
            let (mut corpus, _) = Corpus::load(&dir)?;
            if let Some(path) = tags {
                load_tags(&mut corpus, &path)?;
            }
            let config = ServerConfig { session_timeout: Duration::from_secs(session_timeout) };
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind(listen).await.with_context(|| format!("bind {listen}"))?;
                let shutdown = async {
                    let _ = tokio::signal::ctrl_c().await;
                };
                ledgerlens_server::serve(listener, Arc::new(corpus), config, shutdown).await?;
                Ok(())
            })
        }
    }
}
