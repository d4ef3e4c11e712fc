//! Command-line driver for the offline stage and the query service.

use std::collections::HashMap;
use std::ffi::OsString;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::aggregate::{aggregate, attention_aggregate, mix_global, AggregationConfig, Method, RepresentativeSet};
use crate::error::{Error, Result};
use crate::eval::{evaluate, load_queries, CategoryFilter, EvalReport, EvalSpec};
use crate::index::{build_index, search, FlatIndex, QueryVector};
use crate::service::{encode_text, AppState, ServiceConfig};
use crate::store::{load_manifest, load_masks, load_weights, read_f32_file, read_pack, PackRecord, PackWriter};
use crate::synth::{generate, SynthSpec};
use crate::tensor::{dense_project, global_attention_pool, ProjectionWeights};
use crate::SegmentMask;

const BATCH: usize = 256;

#[derive(Debug, Parser)]
#[command(name = "clusterlens", version, about = "Aggregate, index and search dense image embeddings")]
pub struct Cli {
    /// Global random seed.
    #[arg(long, global = true, env = "CLUSTERLENS_SEED")]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Condense dense packs into representative packs.
    Aggregate(AggregateArgs),
    /// Build and persist a flat index from representative packs.
    Index(IndexArgs),
    /// Rank indexed images for one query.
    Query(QueryArgs),
    /// Score an index against a labelled manifest.
    Eval(EvalArgs),
    /// Generate a planted-concept benchmark dataset.
    Synth(SynthArgs),
    /// Serve the HTTP query API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct AggregateArgs {
    #[arg(long)]
    pub method: Method,
    /// Target representatives per image.
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// RLE mask file, required by region_proposal.
    #[arg(long)]
    pub masks: Option<PathBuf>,
    /// Attention weights; the input pack then holds backbone feature grids.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Append each image's global embedding as an extra representative.
    #[arg(long)]
    pub global: bool,
    #[arg(long, value_delimiter = ',')]
    pub candidates: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub divisions: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    #[arg(long, required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[arg(long)]
    pub index: PathBuf,
    /// Raw little-endian f32 query vector.
    #[arg(long, conflicts_with = "text", required_unless_present = "text")]
    pub vector_file: Option<PathBuf>,
    #[arg(long, requires = "encoder")]
    pub text: Option<String>,
    /// Base URL of a text encoder service.
    #[arg(long)]
    pub encoder: Option<String>,
    #[arg(long, default_value_t = 50)]
    pub top_k: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Query pack with one record per category id.
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub cutoff: usize,
    /// Max instance area (px²) for the size-banded metric.
    #[arg(long)]
    pub size_band: Option<f64>,
    #[arg(long)]
    pub rare_only: bool,
    /// Annotation-share threshold defining rare categories.
    #[arg(long)]
    pub rare_threshold: Option<f64>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub images: Option<usize>,
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub concepts: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: SocketAddr,
    #[arg(long, default_value_t = 1000)]
    pub max_top_k: usize,
    #[arg(long)]
    pub encoder: Option<String>,
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit status.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                2
            } else {
                let _ = write!(out, "{text}");
                0
            };
        }
    };
    match execute(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Aggregate(a) => run_aggregate(a, cli.seed.unwrap_or(0), out),
        Command::Index(a) => run_index(a, out),
        Command::Query(a) => run_query(a, out),
        Command::Eval(a) => run_eval(a, out),
        Command::Synth(a) => run_synth(a, cli.seed, out),
        Command::Serve(a) => run_serve(a, out),
    }
}

fn require_file(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::path(path, std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory")))
    }
}

fn keeps_assignment(method: Method) -> bool {
    matches!(method, Method::Kmeans | Method::AgT | Method::AgF | Method::AdaptiveKmeans | Method::Attention)
}

struct Aggregator<'a> {
    config: AggregationConfig,
    weights: Option<&'a ProjectionWeights>,
    masks: HashMap<String, SegmentMask>,
    with_global: bool,
}

impl Aggregator<'_> {
    fn apply(&self, record: &PackRecord, channels: usize) -> Result<RepresentativeSet> {
        let input = record.to_embedding_map(channels)?;
        let (set, global) = match self.weights {
            Some(w) => {
                let grid = input.as_feature_grid();
                let set = if self.config.method == Method::Attention {
                    attention_aggregate(&record.image_id, &grid, w, &self.config)?
                } else {
                    let mut dense = dense_project(&grid, w)?;
                    dense.image_id = record.image_id.clone();
                    aggregate(&dense, &self.config, self.masks.get(&record.image_id))?
                };
                let global = self.with_global.then(|| global_attention_pool(&grid, w)).transpose()?;
                (set, global)
            }
            None => {
                if self.config.method == Method::Attention {
                    return Err(Error::InvalidArgument("the attention method needs --weights".into()));
                }
                let set = aggregate(&input, &self.config, self.masks.get(&record.image_id))?;
                let global = self.with_global.then(|| RepresentativeSet::global_mean(&input).vectors);
                (set, global)
            }
        };
        match global {
            Some(g) => mix_global(&set, &g),
            None => Ok(set),
        }
    }
}

fn run_aggregate(args: &AggregateArgs, seed: u64, out: &mut dyn Write) -> Result<()> {
    require_file(&args.input)?;
    if args.method == Method::Mixed {
        return Err(Error::InvalidArgument("use --global with a base method to build mixed sets".into()));
    }
    let mut config = AggregationConfig { seed, ..AggregationConfig::with_method(args.method, args.k) };
    if let Some(c) = &args.candidates {
        config.adaptive_candidates = c.clone();
    }
    if let Some(d) = &args.divisions {
        config.anchors_divisions = d.clone();
    }
    let weights = args.weights.as_deref().map(load_weights).transpose()?;
    let masks = match &args.masks {
        Some(p) => load_masks(p)?.into_iter().map(|m| (m.image_id.clone(), m)).collect(),
        None if args.method == Method::RegionProposal => {
            return Err(Error::InvalidArgument("region_proposal needs --masks".into()));
        }
        None => HashMap::new(),
    };
    let aggregator = Aggregator { config, weights: weights.as_ref(), masks, with_global: args.global };

    let reader = read_pack(&args.input)?;
    let in_channels = reader.channels();
    let out_channels = match &weights {
        Some(w) if w.input_dim() != in_channels => {
            return Err(Error::Dimension(format!(
                "weights expect {} input channels, pack has {in_channels}",
                w.input_dim()
            )))
        }
        Some(w) => w.output_dim(),
        None => in_channels,
    };
    let with_assignments = keeps_assignment(args.method) && !args.global;
    let mut writer = PackWriter::create(&args.output, out_channels, with_assignments)?;
    let mut records = reader.peekable();
    let mut total_reps = 0usize;
    let mut fallbacks = 0usize;
    while records.peek().is_some() {
        let batch = records.by_ref().take(BATCH).collect::<Result<Vec<_>>>()?;
        let sets = batch.par_iter().map(|r| aggregator.apply(r, in_channels)).collect::<Result<Vec<_>>>()?;
        for set in &sets {
            total_reps += set.len();
            fallbacks += usize::from(set.fallback.is_some());
            writer.write_representatives(set)?;
        }
    }
    let (summary, _) = writer.finish()?;
    let avg = if summary.records == 0 { 0.0 } else { total_reps as f64 / summary.records as f64 };
    writeln!(
        out,
        "wrote {} records ({avg:.2} representatives per image, {fallbacks} fallbacks) to {}",
        summary.records,
        args.output.display()
    )?;
    Ok(())
}

fn run_index(args: &IndexArgs, out: &mut dyn Write) -> Result<()> {
    for p in &args.input {
        require_file(p)?;
    }
    let index = build_index(&args.input)?;
    index.save(&args.output)?;
    writeln!(
        out,
        "indexed {} vectors for {} images ({} channels) in {}",
        index.vector_count(),
        index.image_count(),
        index.channels(),
        args.output.display()
    )?;
    Ok(())
}

fn run_query(args: &QueryArgs, out: &mut dyn Write) -> Result<()> {
    require_file(&args.index)?;
    let index = FlatIndex::load(&args.index)?;
    let query = match (&args.vector_file, &args.text, &args.encoder) {
        (Some(path), _, _) => {
            require_file(path)?;
            QueryVector::new(&read_f32_file(path)?, None)?
        }
        (None, Some(text), Some(url)) => {
            QueryVector::new(&encode_text(url, text, Duration::from_secs(30))?, Some(text.clone()))?
        }
        _ => return Err(Error::InvalidArgument("query needs --vector-file or --text with --encoder".into())),
    };
    let ranked = search(&index, &query, args.top_k)?;
    for e in &ranked.entries {
        writeln!(out, "{}\t{:.6}", e.image_id, e.score)?;
    }
    Ok(())
}

fn run_eval(args: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    for p in [&args.index, &args.manifest, &args.queries] {
        require_file(p)?;
    }
    let index = FlatIndex::load(&args.index)?;
    let manifest = load_manifest(&args.manifest)?;
    let queries = load_queries(&args.queries)?;
    if args.cutoff == 0 {
        return Err(Error::InvalidArgument("--cutoff must be >= 1".into()));
    }
    let spec = EvalSpec {
        dataset: &manifest,
        cutoff: Some(args.cutoff),
        size_band: args.size_band,
        category_filter: if args.rare_only { CategoryFilter::RareOnly } else { CategoryFilter::All },
        rare_threshold: args.rare_threshold,
    };
    let report: EvalReport = evaluate(&index, &queries, &spec)?;
    let text = serde_json::to_string_pretty(&report.to_json())?;
    match &args.output {
        Some(path) => std::fs::write(path, text + "\n").map_err(|e| Error::path(path, e))?,
        None => writeln!(out, "{text}")?,
    }
    Ok(())
}

fn run_synth(args: &SynthArgs, seed: Option<u64>, out: &mut dyn Write) -> Result<()> {
    let defaults = SynthSpec::default();
    let spec = SynthSpec {
        image_count: args.images.unwrap_or(defaults.image_count),
        channels: args.channels.unwrap_or(defaults.channels),
        concept_count: args.concepts.unwrap_or(defaults.concept_count),
        noise_scale: args.noise.unwrap_or(defaults.noise_scale),
        seed: seed.unwrap_or(defaults.seed),
        ..defaults
    };
    let data = generate(&spec)?;
    data.write_to(&args.output)?;
    writeln!(
        out,
        "generated {} images, {} objects, {} concepts in {}",
        data.maps.len(),
        data.log.len(),
        spec.concept_count,
        args.output.display()
    )?;
    Ok(())
}

fn run_serve(args: &ServeArgs, out: &mut dyn Write) -> Result<()> {
    require_file(&args.index)?;
    let index = FlatIndex::load(&args.index)?;
    let config = ServiceConfig { max_top_k: args.max_top_k, encoder_url: args.encoder.clone(), ..Default::default() };
    let state = Arc::new(AppState::new(index, config));
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(args.bind).await?;
        writeln!(out, "listening on {}", listener.local_addr()?)?;
        out.flush()?;
        crate::service::serve(listener, state).await
    })?;
    Ok(())
}
