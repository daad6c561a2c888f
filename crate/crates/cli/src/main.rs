//! `matrank` command-line tool.
//!
//! Exit codes: 0 success, 1 partial failure (failed cells or rows, outputs
//! still written), 2 usage or configuration error.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use matrank::dataset::{ingest_csv, write_rejects, DedupPolicy, SubjectKind};
use matrank::embedding::{EmbeddingProvider, EmbeddingRequest, VectorCache};
use matrank::harness::{
    emit_grid_reports, write_parity_csv, write_ranking_csv, DatasetSpec, ExperimentSpec,
    timestamp_now, ProviderConfig, ProviderKind, ReportFormat, DEFAULT_PARITY_BINS,
};
use matrank::{ground_truth_ranks, HarnessError, parse_formula, run_grid, run_ranking, ContextSpec, Pooling, Strategy};

#[derive(Parser, Debug)]
#[command(name = "matrank", version, about = "Rank compounds by embedding similarity and score the ranking with Spearman's rho")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse a formula and print its canonical form and atomic fractions.
    Parse { formula: String },
    /// Embed one text and print a summary of the vector.
    Embed(EmbedArgs),
    /// Rank a dataset against one query key.
    Rank(RankArgs),
    /// Run a (context term x query key) grid from a spec file.
    Grid(GridArgs),
    /// Inspect or clear an embedding cache file.
    Cache {
        #[command(subcommand)]
        action: CacheAction,
    },
}

#[derive(Subcommand, Debug)]
enum CacheAction {
    Stats {
        #[arg(long, env = "MATRANK_CACHE")]
        cache: PathBuf,
    },
    Clear {
        #[arg(long, env = "MATRANK_CACHE")]
        cache: PathBuf,
    },
}

#[derive(Args, Debug, Default)]
struct ProviderArgs {
    /// Embedding source; defaults to `remote` when a provider URL is set.
    #[arg(long, value_enum)]
    provider: Option<ProviderChoice>,
    /// Base URL of the embedding sidecar.
    #[arg(long, env = "MATRANK_PROVIDER_URL")]
    provider_url: Option<String>,
    #[arg(long, env = "MATRANK_MODEL")]
    model: Option<String>,
    /// Persistent embedding cache file.
    #[arg(long, env = "MATRANK_CACHE")]
    cache: Option<PathBuf>,
    /// Vector dimension of the mock provider.
    #[arg(long)]
    dim: Option<usize>,
    /// Concurrent requests to the sidecar.
    #[arg(long)]
    max_in_flight: Option<usize>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum ProviderChoice {
    Mock,
    Remote,
}

impl ProviderArgs {
    /// Flags (and their env fallbacks) override whatever `config` holds.
    fn apply(&self, config: &mut ProviderConfig) {
        if let Some(url) = &self.provider_url {
            config.base_url = Some(url.clone());
            if self.provider.is_none() {
                config.kind = ProviderKind::Remote;
            }
        }
        match self.provider {
            Some(ProviderChoice::Mock) => config.kind = ProviderKind::Mock,
            Some(ProviderChoice::Remote) => config.kind = ProviderKind::Remote,
            None => {}
        }
        if let Some(m) = &self.model {
            config.model = m.clone();
        }
        if let Some(c) = &self.cache {
            config.cache_path = Some(c.clone());
        }
        if let Some(d) = self.dim {
            config.dim = d;
        }
        if let Some(n) = self.max_in_flight {
            config.max_in_flight = n;
        }
    }
}

#[derive(Args, Debug)]
struct EmbedArgs {
    text: String,
    /// Pool only over this character range, as START:END.
    #[arg(long)]
    span: Option<String>,
    /// Write the full vector as JSON to this file.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    provider: ProviderArgs,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum StrategyArg {
    WholeFormula,
    Averaged,
    Entity,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::WholeFormula => Strategy::WholeFormula,
            StrategyArg::Averaged => Strategy::CompositionAveraged,
            StrategyArg::Entity => Strategy::Entity,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum PoolingArg {
    WholeInput,
    TargetSpan,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum DedupArg {
    Mean,
    Max,
    First,
}

#[derive(Args, Debug)]
struct RankArgs {
    /// Ground-truth CSV (`formula,value[,source]`, or `name,value` for entities).
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum, default_value = "averaged")]
    strategy: StrategyArg,
    /// Contextualization term placed before each element or entity name.
    #[arg(long, default_value = "")]
    context: String,
    /// Query key the compound vectors are compared against.
    #[arg(long, default_value = "")]
    key: String,
    #[arg(long, value_enum, default_value = "whole-input")]
    pooling: PoolingArg,
    #[arg(long, value_enum, default_value = "mean")]
    dedup: DedupArg,
    #[arg(long, default_value_t = DEFAULT_PARITY_BINS)]
    bins: usize,
    #[arg(long, default_value = "out/rank")]
    out: PathBuf,
    #[command(flatten)]
    provider: ProviderArgs,
}

#[derive(Args, Debug)]
struct GridArgs {
    /// Experiment spec (JSON).
    spec: PathBuf,
    /// Output directory; overrides the spec's `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Extra report formats besides CSV and JSON.
    #[arg(long, value_enum)]
    format: Vec<FormatArg>,
    #[command(flatten)]
    provider: ProviderArgs,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
    Svg,
}

enum Failure {
    Usage(anyhow::Error),
    Partial(String),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        Failure::Usage(e.into())
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Usage(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let outcome = match cli.command {
        Command::Parse { formula } => cmd_parse(&formula),
        Command::Embed(args) => cmd_embed(&args),
        Command::Rank(args) => cmd_rank(&args),
        Command::Grid(args) => cmd_grid(&args),
        Command::Cache { action } => cmd_cache(&action),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Partial(msg)) => {
            eprintln!("matrank: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(e)) => {
            eprintln!("matrank: {}", render_chain(&e));
            ExitCode::from(2)
        }
    }
}

/// Error chain on one line, skipping causes already quoted by their parent.
fn render_chain(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn cmd_parse(formula: &str) -> Result<(), Failure> {
    let composition = parse_formula(formula).map_err(|e| anyhow!("{}: {e}", e.kind()))?;
    println!("{}", composition.canonical_string());
    for (element, fraction) in composition.atomic_fractions() {
        println!("{:<3} {fraction:.4}", element.symbol());
    }
    Ok(())
}

fn parse_span(text: &str) -> Result<std::ops::Range<usize>> {
    let (a, b) = text
        .split_once(':')
        .ok_or_else(|| anyhow!("span must look like START:END"))?;
    Ok(a.trim().parse()?..b.trim().parse()?)
}

fn cmd_embed(args: &EmbedArgs) -> Result<(), Failure> {
    let mut config = ProviderConfig::default();
    args.provider.apply(&mut config);
    let provider = config.build()?;
    let request = match &args.span {
        Some(span) => EmbeddingRequest::span(args.text.clone(), parse_span(span)?)
            .map_err(anyhow::Error::from)?,
        None => EmbeddingRequest::whole(args.text.clone()),
    };
    let vector = provider
        .embed(&request)
        .map_err(|e| Failure::Partial(format!("embedding failed: {e}")))?;
    let head: Vec<String> = vector.values().iter().take(6).map(|v| format!("{v:.6}")).collect();
    println!(
        "model {}  dim {}  norm {:.6}\n[{}{}]",
        provider.model_id(),
        vector.dim(),
        vector.norm(),
        head.join(", "),
        if vector.dim() > 6 { ", ..." } else { "" }
    );
    if let Some(out) = &args.out {
        let body = json!({
            "model": provider.model_id(),
            "text": request.text(),
            "pooling": request.pooling(),
            "span": request.span_range().map(|s| [s.start, s.end]),
            "dim": vector.dim(),
            "values": vector.values(),
        });
        fs::write(out, serde_json::to_string_pretty(&body).expect("json"))
            .with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("cannot write {}", path.display()))?,
    ))
}

fn cmd_rank(args: &RankArgs) -> Result<(), Failure> {
    let strategy: Strategy = args.strategy.into();
    let pooling = match args.pooling {
        PoolingArg::WholeInput => Pooling::WholeInput,
        PoolingArg::TargetSpan => Pooling::TargetSpan,
    };
    let dataset_spec = DatasetSpec {
        path: args.dataset.clone(),
        dedup: match args.dedup {
            DedupArg::Mean => DedupPolicy::Mean,
            DedupArg::Max => DedupPolicy::Max,
            DedupArg::First => DedupPolicy::First,
        },
        kind: if strategy == Strategy::Entity {
            SubjectKind::Entities
        } else {
            SubjectKind::Compounds
        },
        ..DatasetSpec::default()
    };
    if strategy == Strategy::WholeFormula && !args.context.is_empty() {
        return Err(anyhow!("--context does not apply to --strategy whole-formula").into());
    }
    if args.bins == 0 {
        return Err(anyhow!("--bins must be positive").into());
    }
    let mut provider_config = ProviderConfig::default();
    args.provider.apply(&mut provider_config);

    let (dataset, report) = ingest_csv(&args.dataset, &dataset_spec.ingest_config())
        .with_context(|| format!("loading dataset {}", args.dataset.display()))?;
    let truth = ground_truth_ranks(&dataset).map_err(anyhow::Error::from)?;
    let provider = provider_config.build()?;

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    if !report.rejects.is_empty() {
        write_rejects(&report.rejects, create(&args.out.join("rejects.csv"))?)
            .map_err(anyhow::Error::from)?;
    }

    let outcome = run_ranking(
        &dataset,
        strategy,
        &ContextSpec::new(args.context.clone()),
        pooling,
        &args.key,
        &provider,
        args.bins,
    )
    .map_err(|e| Failure::Partial(format!("ranking failed: {e}")))?;

    write_ranking_csv(&dataset, &truth, &outcome, create(&args.out.join("ranking.csv"))?)
        .context("writing ranking.csv")?;
    write_parity_csv(&outcome.parity, create(&args.out.join("parity.csv"))?)
        .context("writing parity.csv")?;
    let summary = json!({
        "rho": outcome.rho,
        "n_items": dataset.len(),
        "rejects": report.rejects.len(),
        "merged_duplicates": report.merged_duplicates,
        "metadata": {
            "model_id": provider.model_id(),
            "dataset": dataset.name,
            "strategy": strategy.as_str(),
            "pooling": pooling.as_str(),
            "context": args.context,
            "query_key": args.key,
            "timestamp": timestamp_now(),
            "config": {
                "dataset": dataset_spec,
                "provider": provider_config,
                "bins": args.bins,
            },
        },
    });
    fs::write(
        args.out.join("summary.json"),
        serde_json::to_string_pretty(&summary).expect("json"),
    )
    .context("writing summary.json")?;

    println!(
        "{} items ({} rejected, {} merged), strategy {}, context {:?}, key {:?}: rho = {:.4}",
        dataset.len(),
        report.rejects.len(),
        report.merged_duplicates,
        strategy,
        args.context,
        args.key,
        outcome.rho
    );
    println!("outputs in {}", args.out.display());
    Ok(())
}

fn cmd_grid(args: &GridArgs) -> Result<(), Failure> {
    let mut spec = ExperimentSpec::load(&args.spec).map_err(anyhow::Error::from)?;
    args.provider.apply(&mut spec.provider);
    if let Some(out) = &args.out {
        spec.output_dir = out.clone();
    }
    spec.validate().map_err(anyhow::Error::from)?;

    let (dataset, report) = ingest_csv(&spec.dataset.path, &spec.dataset.ingest_config())
        .with_context(|| format!("loading dataset {}", spec.dataset.path.display()))?;
    let provider = spec.provider.build()?;
    let grid = run_grid(&spec, &dataset, &provider).map_err(anyhow::Error::from)?;

    let mut formats = vec![ReportFormat::Csv, ReportFormat::Json];
    for f in &args.format {
        let f = match f {
            FormatArg::Csv => ReportFormat::Csv,
            FormatArg::Json => ReportFormat::Json,
            FormatArg::Svg => ReportFormat::Svg,
        };
        if !formats.contains(&f) {
            formats.push(f);
        }
    }
    let written = emit_grid_reports(&grid, &spec.output_dir, &formats).map_err(anyhow::Error::from)?;
    if !report.rejects.is_empty() {
        write_rejects(&report.rejects, create(&spec.output_dir.join("rejects.csv"))?)
            .map_err(anyhow::Error::from)?;
    }

    let stats = provider.cache().stats();
    println!(
        "grid {}x{} over {} items ({} rejected), model {}",
        grid.terms.len(),
        grid.keys.len(),
        dataset.len(),
        report.rejects.len(),
        grid.metadata.model_id
    );
    println!(
        "cache: {} entries, {} hits, {} misses",
        stats.entries, stats.hits, stats.misses
    );
    for path in &written {
        println!("wrote {}", path.display());
    }
    let failed = grid.failed_cells();
    if failed > 0 {
        return Err(Failure::Partial(format!(
            "{failed} of {} cells failed; see grid.json for reasons",
            grid.terms.len() * grid.keys.len()
        )));
    }
    Ok(())
}

fn cmd_cache(action: &CacheAction) -> Result<(), Failure> {
    match action {
        CacheAction::Stats { cache } => {
            if !cache.exists() {
                return Err(anyhow!("no cache file at {}", cache.display()).into());
            }
            let c = VectorCache::open(cache).map_err(anyhow::Error::from)?;
            let bytes = fs::metadata(cache).map(|m| m.len()).unwrap_or(0);
            let stats = c.stats();
            println!(
                "{}: {} entries, {} bytes, {} corrupt records evicted",
                cache.display(),
                stats.entries,
                bytes,
                stats.evicted
            );
        }
        CacheAction::Clear { cache } => {
            let c = VectorCache::open(cache).map_err(anyhow::Error::from)?;
            let n = c.len();
            c.clear().map_err(anyhow::Error::from)?;
            println!("cleared {n} entries from {}", cache.display());
        }
    }
    Ok(())
}
