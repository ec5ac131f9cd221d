//! `saescope` command line.

use std::ffi::OsString;
use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use saescope_core::ballmapper::{DEFAULT_ETA, DEFAULT_MAX_NODE_SIZE, DEFAULT_SEED};
use saescope_core::concepts::{concepts_per_layer, AssignmentTable, LayerCount, DEFAULT_THRESHOLD};
use saescope_core::dataset::{ingest, Dataset, IngestSummary, MANIFEST_FILE};
use saescope_core::explore::{
    discover_concept_sets, install_concept_set, mapper_document, retrieve_all, ConceptBundle, MapperRequest,
};
use saescope_core::ingestion::cache::{CACHE_DIR_ENV, DEFAULT_CACHE_DIR};
use saescope_core::ingestion::explanations::to_json_lines;
use saescope_core::ingestion::remote::{fetch_layers, ClientConfig};
use saescope_core::ingestion::Cache;
use saescope_core::layout::DEFAULT_FORCE_ITERATIONS;
use saescope_core::synthetic::{write_synthetic_dataset, SyntheticConfig};
use saescope_core::{Epsilon, Error};
use serde::Serialize;

use crate::state::{AppState, ServiceConfig, DEFAULT_LINK_BASE, DEFAULT_PORT, DEFAULT_URL_TEMPLATE};

#[derive(Debug, Parser)]
#[command(name = "saescope", version, about = "Explore SAE features through concept sets and ball mapper graphs")]
pub struct Cli {
    /// Directory holding ingested datasets and concept sets.
    #[arg(long, global = true, env = "SAESCOPE_DATA_DIR", default_value = "data")]
    pub data_dir: PathBuf,
    /// Cache for derived artifacts.
    #[arg(long, global = true, env = CACHE_DIR_ENV, default_value = DEFAULT_CACHE_DIR)]
    pub cache_dir: PathBuf,
    /// Seed for distance sampling and force layouts.
    #[arg(long, global = true, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Print summaries as JSON.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a dataset manifest and copy it into the data directory.
    Ingest {
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Concept-set file (.json or .csv) to install alongside.
        #[arg(long)]
        concepts: Option<PathBuf>,
        /// Concept vectors; defaults to `<concepts stem>.vectors.json`.
        #[arg(long, requires = "concepts")]
        vectors: Option<PathBuf>,
    },
    /// Compute feature/concept assignments for every layer into the cache.
    Precompute {
        #[arg(long)]
        dataset: String,
        /// Installed concept-set name or a concept-set file.
        #[arg(long)]
        concepts: String,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
        /// Write the assignment tables here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the mapper graph and both layouts for one layer.
    ExportMapper {
        #[arg(long)]
        dataset: String,
        /// Installed concept-set name or file; defaults to the only installed set.
        #[arg(long)]
        concepts: Option<String>,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
        #[arg(long)]
        layer: u32,
        /// Comma-separated category names; empty means all retrieved features.
        #[arg(long, value_delimiter = ',')]
        categories: Vec<String>,
        #[arg(long, default_value = "auto")]
        epsilon: Epsilon,
        #[arg(long, default_value_t = DEFAULT_ETA)]
        eta: f64,
        #[arg(long, default_value_t = DEFAULT_MAX_NODE_SIZE)]
        max_node_size: usize,
        #[arg(long, default_value_t = DEFAULT_FORCE_ITERATIONS)]
        force_iterations: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value_t = DEFAULT_PORT)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        /// Built web UI to serve at `/`.
        #[arg(long)]
        ui_dir: Option<PathBuf>,
        #[arg(long, default_value = DEFAULT_LINK_BASE)]
        link_base: String,
        #[arg(long, default_value = DEFAULT_URL_TEMPLATE)]
        url_template: String,
        /// Serve without the assignment cache.
        #[arg(long)]
        no_cache: bool,
    },
    /// Write a small synthetic dataset with a matching concept set.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 160)]
        features_per_layer: usize,
        #[arg(long, value_delimiter = ',', default_value = "0,1")]
        layers: Vec<u32>,
        #[arg(long, default_value_t = 7)]
        data_seed: u64,
        /// Also ingest it and install the concept set into the data directory.
        #[arg(long)]
        install: bool,
    },
    /// Download explanations for some layers from a remote catalogue.
    Fetch {
        #[arg(long)]
        base_url: String,
        #[arg(long)]
        model: String,
        #[arg(long)]
        sae: String,
        #[arg(long, value_delimiter = ',', required = true)]
        layers: Vec<u32>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 1 for bad input, 2 for a computation that could not finish.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(Error::MaxIterations { .. }) => 2,
            _ => 1,
        }
    }
}

type CliResult<T = ()> = std::result::Result<T, CliError>;

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> CliResult {
    match &cli.command {
        Command::Ingest { manifest, concepts, vectors } => cmd_ingest(cli, manifest.as_deref(), concepts.as_deref(), vectors.as_deref()),
        Command::Precompute { dataset, concepts, threshold, out } => {
            cmd_precompute(cli, dataset, concepts, *threshold, out.as_deref())
        }
        Command::ExportMapper {
            dataset,
            concepts,
            threshold,
            layer,
            categories,
            epsilon,
            eta,
            max_node_size,
            force_iterations,
            out,
        } => {
            let mut request = MapperRequest::new(*layer);
            request.categories = categories.iter().map(|c| c.trim().to_string()).filter(|c| !c.is_empty()).collect();
            request.epsilon = *epsilon;
            request.eta = *eta;
            request.max_node_size = *max_node_size;
            request.seed = cli.seed;
            request.force_iterations = *force_iterations;
            cmd_export_mapper(cli, dataset, concepts.as_deref(), *threshold, &request, out)
        }
        Command::Serve { port, host, ui_dir, link_base, url_template, no_cache } => {
            let config = ServiceConfig {
                data_dir: cli.data_dir.clone(),
                cache_dir: (!no_cache).then(|| cli.cache_dir.clone()),
                seed: cli.seed,
                link_base: link_base.clone(),
                url_template: url_template.clone(),
                ui_dir: ui_dir.clone(),
            };
            cmd_serve(config, SocketAddr::new(*host, *port))
        }
        Command::Synth { out, features_per_layer, layers, data_seed, install } => {
            let config = SyntheticConfig {
                layers: layers.clone(),
                features_per_layer: *features_per_layer,
                seed: *data_seed,
                ..SyntheticConfig::default()
            };
            let paths = write_synthetic_dataset(out, &config)?;
            println!("manifest: {}", paths.manifest.display());
            println!("concepts: {}", paths.concepts.display());
            if *install {
                cmd_ingest(cli, Some(&paths.manifest), Some(&paths.concepts), None)?;
            }
            Ok(())
        }
        Command::Fetch { base_url, model, sae, layers, out } => {
            let config = ClientConfig::new(base_url);
            let cache = Cache::new(&cli.cache_dir);
            let per_layer = fetch_layers(&config, model, sae, layers, Some(&cache))?;
            let records: Vec<_> = per_layer.into_iter().flatten().collect();
            std::fs::write(out, to_json_lines(&records)).map_err(|e| Error::io(out, e))?;
            println!("{} explanations written to {}", records.len(), out.display());
            Ok(())
        }
    }
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("summaries serialize"));
}

fn cmd_ingest(cli: &Cli, manifest: Option<&Path>, concepts: Option<&Path>, vectors: Option<&Path>) -> CliResult {
    if manifest.is_none() && concepts.is_none() {
        return Err(CliError::Usage("ingest needs --manifest and/or --concepts".into()));
    }
    std::fs::create_dir_all(&cli.data_dir).map_err(|e| Error::io(&cli.data_dir, e))?;
    let summary = manifest.map(|m| ingest(m, &cli.data_dir)).transpose()?;
    let installed = concepts.map(|c| install_concept_set(&cli.data_dir, c, vectors)).transpose()?;
    if cli.json {
        print_json(&serde_json::json!({ "dataset": summary, "concept_set": installed }));
        return Ok(());
    }
    if let Some(s) = &summary {
        print_ingest_table(s);
    }
    if let Some(p) = installed {
        println!("concept set installed at {}", p.display());
    }
    Ok(())
}

fn print_ingest_table(s: &IngestSummary) {
    println!("dataset {} (model {}) -> {}", s.dataset, s.model, s.destination.display());
    println!("{:>6}  {:>9}  {:>5}  {:>9}  {:>8}  {:>9}  projection", "layer", "features", "dim", "explained", "embedded", "coverage");
    for l in &s.layers {
        println!(
            "{:>6}  {:>9}  {:>5}  {:>9}  {:>8}  {:>8.1}%  {}",
            l.layer_id, l.n_features, l.dim, l.explained, l.embedded, l.coverage_pct, l.projection
        );
    }
}

fn load_dataset(cli: &Cli, name: &str) -> CliResult<Dataset> {
    let candidates = [cli.data_dir.join(name).join(MANIFEST_FILE), PathBuf::from(name).join(MANIFEST_FILE), PathBuf::from(name)];
    match candidates.iter().find(|p| p.is_file()) {
        Some(p) => Ok(Dataset::load(p)?),
        None => Err(CliError::Usage(format!("no dataset {name:?} under {}", cli.data_dir.display()))),
    }
}

fn load_concepts(cli: &Cli, name: Option<&str>) -> CliResult<ConceptBundle> {
    if let Some(path) = name.map(Path::new).filter(|p| p.is_file()) {
        return Ok(ConceptBundle::load(path, None)?);
    }
    let mut installed = discover_concept_sets(&cli.data_dir)?;
    match name {
        Some(n) => installed
            .into_iter()
            .find(|b| b.set.name == n)
            .ok_or_else(|| CliError::Usage(format!("no concept set {n:?} under {}", cli.data_dir.display()))),
        None if installed.len() == 1 => Ok(installed.remove(0)),
        None => Err(CliError::Usage(format!(
            "{} concept sets installed; pick one with --concepts",
            installed.len()
        ))),
    }
}

fn check_threshold(threshold: f64) -> CliResult {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(CliError::Usage(format!("threshold must be in [0, 1], got {threshold}")));
    }
    Ok(())
}

#[derive(Serialize)]
struct PrecomputeArtifact<'a> {
    dataset: &'a str,
    concept_set: &'a str,
    threshold: f64,
    tables: &'a [AssignmentTable],
}

#[derive(Serialize)]
struct PrecomputeSummary<'a> {
    dataset: &'a str,
    concept_set: &'a str,
    threshold: f64,
    cache_hits: usize,
    cache_keys: Vec<String>,
    layers: &'a [LayerCount],
}

fn cmd_precompute(cli: &Cli, dataset: &str, concepts: &str, threshold: f64, out: Option<&Path>) -> CliResult {
    check_threshold(threshold)?;
    let dataset = load_dataset(cli, dataset)?;
    let bundle = load_concepts(cli, Some(concepts))?;
    let cache = Cache::new(&cli.cache_dir);
    let run = retrieve_all(&dataset, &bundle, threshold, Some(&cache))?;
    let counts = concepts_per_layer(&run.tables);
    if let Some(out) = out {
        let artifact = PrecomputeArtifact {
            dataset: dataset.name(),
            concept_set: &bundle.set.name,
            threshold,
            tables: &run.tables,
        };
        let mut bytes = serde_json::to_vec_pretty(&artifact).expect("assignments serialize");
        bytes.push(b'\n');
        std::fs::write(out, bytes).map_err(|e| Error::io(out, e))?;
    }
    if cli.json {
        print_json(&PrecomputeSummary {
            dataset: dataset.name(),
            concept_set: &bundle.set.name,
            threshold,
            cache_hits: run.cache_hits,
            cache_keys: run.keys.iter().map(|k| k.to_hex()).collect(),
            layers: &counts,
        });
        return Ok(());
    }
    println!("{} / {} at threshold {threshold}", dataset.name(), bundle.set.name);
    println!("{:>6}  discovered concepts", "layer");
    let widest = counts.iter().map(|c| c.discovered_concepts).max().unwrap_or(0).max(1);
    for c in &counts {
        let bar = "#".repeat((c.discovered_concepts * 40).div_ceil(widest));
        println!("{:>6}  {:>5}  {bar}", c.layer_id, c.discovered_concepts);
    }
    let pct = 100.0 * run.cache_hits as f64 / run.tables.len().max(1) as f64;
    println!("cache hits: {}/{} ({pct:.0}%)", run.cache_hits, run.tables.len());
    Ok(())
}

fn cmd_export_mapper(
    cli: &Cli,
    dataset: &str,
    concepts: Option<&str>,
    threshold: f64,
    request: &MapperRequest,
    out: &Path,
) -> CliResult {
    check_threshold(threshold)?;
    request.params().validate()?;
    let dataset = load_dataset(cli, dataset)?;
    let bundle = load_concepts(cli, concepts)?;
    let layer = dataset
        .layer(request.layer)
        .ok_or_else(|| CliError::Usage(format!("dataset {:?} has no layer {}", dataset.name(), request.layer)))?;
    let run = retrieve_all(&dataset, &bundle, threshold, Some(&Cache::new(&cli.cache_dir)))?;
    let table = run
        .tables
        .iter()
        .find(|t| t.layer_id == layer.layer_id)
        .expect("one table per layer");
    let doc = mapper_document(&dataset, table, &bundle.set, request)?;
    std::fs::write(out, doc.to_json_bytes()).map_err(|e| Error::io(out, e))?;
    if cli.json {
        print_json(&serde_json::json!({
            "out": out,
            "n_points": doc.n_points,
            "nodes": doc.graph.nodes.len(),
            "edges": doc.graph.edges.len(),
            "epsilon_used": doc.graph.epsilon_used,
            "shrink_iterations": doc.graph.shrink_iterations,
        }));
    } else {
        println!(
            "layer {}: {} features -> {} nodes, {} edges (epsilon {:.6}, {} shrink steps) written to {}",
            request.layer,
            doc.n_points,
            doc.graph.nodes.len(),
            doc.graph.edges.len(),
            doc.graph.epsilon_used,
            doc.graph.shrink_iterations,
            out.display()
        );
    }
    Ok(())
}

fn cmd_serve(config: ServiceConfig, addr: SocketAddr) -> CliResult {
    let state = Arc::new(AppState::load(config)?);
    log::info!("{} datasets, {} concept sets", state.datasets.len(), state.concept_sets.len());
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(crate::api::serve(state, addr, |bound| {
        println!("listening on http://{bound}");
        let _ = std::io::stdout().flush();
    }))?;
    Ok(())
}
