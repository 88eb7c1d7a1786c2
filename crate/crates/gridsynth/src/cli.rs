//! Command-line entry point wiring the pipeline: ingest -> topology ->
//! learn -> generate -> validate -> hostcap -> export -> stats.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/schema error,
//! 3 validation failure.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::bayes::mcmc::McmcConfig;
use crate::bayes::posterior::{load_posterior, save_posterior, ModelKind, Posterior};
use crate::bayes::records::{read_bus_records, read_line_records};
use crate::bayes::{learn_duration, learn_frequency, learn_impedance, learn_power, Priors};
use crate::gridio::dss::write_opendss;
use crate::gridio::geojson::write_geojson;
use crate::gridio::stats::write_ensemble_stats;
use crate::gridio::tables::write_grid_tables;
use crate::hostcap::{
    default_irradiance, default_load_profile, ensemble_hosting_capacity, HcLevel, SearchConfig,
    SnapshotInputs,
};
use crate::osm::{
    extract_power_features, extract_street_graph, fetch_region, parse_overpass_with_source,
    OsmExtract, RegionQuery, RetryPolicy,
};
use crate::powerflow::{build_pf_network, solve_fbs, summarize_voltages, PfResult};
use crate::synthesis::{
    generate_ensemble, load_ensemble, save_ensemble, GridSample, Posteriors, SynthesisOptions,
};
use crate::topology::{build_topology, GridTopology, TopologyConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;

#[derive(Debug)]
enum AppError {
    Usage(String),
    Data(String),
    Validation(String),
}

impl AppError {
    fn code(&self) -> i32 {
        match self {
            AppError::Usage(_) => EXIT_USAGE,
            AppError::Data(_) => EXIT_DATA,
            AppError::Validation(_) => EXIT_VALIDATION,
        }
    }

    fn message(&self) -> &str {
        match self {
            AppError::Usage(m) | AppError::Data(m) | AppError::Validation(m) => m,
        }
    }
}

fn data<E: std::fmt::Display>(e: E) -> AppError {
    AppError::Data(e.to_string())
}

#[derive(Parser)]
#[command(name = "gridsynth", version, about = "Probabilistic synthetic power grid generator")]
struct Cli {
    /// TOML config file; command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for sample-parallel stages (output is identical for any value).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Suppress progress output on stderr.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fetch or load an OpenStreetMap extract for a region.
    Ingest(IngestArgs),
    /// Build a radial georeferenced topology from an extract.
    Topology(TopologyArgs),
    /// Learn the Bayesian models from survey CSVs.
    Learn(LearnArgs),
    /// Generate an ensemble of synthetic grid samples.
    Generate(GenerateArgs),
    /// Run power flow over an ensemble and report voltage statistics.
    Validate(ValidateArgs),
    /// Probabilistic hosting-capacity analysis over an ensemble.
    Hostcap(HostcapArgs),
    /// Export one sample as DSS text, grid tables or GeoJSON.
    Export(ExportArgs),
    /// Ensemble statistics table with means and HDIs.
    Stats(StatsArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// Read a raw Overpass JSON document from disk instead of the network.
    #[arg(long)]
    from_file: Option<PathBuf>,
    /// Query by city name.
    #[arg(long)]
    city: Option<String>,
    /// Query around a point: LAT,LON (requires --dist-m).
    #[arg(long)]
    point: Option<String>,
    /// Radius in meters for --point/--address queries.
    #[arg(long)]
    dist_m: Option<f64>,
    /// Query a bounding box: SOUTH,WEST,NORTH,EAST.
    #[arg(long)]
    bbox: Option<String>,
    /// Query around a street address (needs a configured geocoder).
    #[arg(long)]
    address: Option<String>,
    /// Overpass endpoint; env GRIDSYNTH_OVERPASS_URL is the fallback.
    #[arg(long)]
    overpass_url: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TopologyArgs {
    /// Extract document produced by `ingest`.
    #[arg(long)]
    extract: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write a GeoJSON rendering for inspection.
    #[arg(long)]
    geojson: Option<PathBuf>,
    #[arg(long)]
    zones: Option<u32>,
    #[arg(long)]
    mv_kv: Option<f64>,
    #[arg(long)]
    lv_kv: Option<f64>,
    #[arg(long)]
    max_cluster: Option<usize>,
    /// Inject a substation at LAT,LON when OSM has none.
    #[arg(long)]
    inject_substation: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LearnModel {
    Power,
    Impedance,
    Frequency,
    Duration,
    All,
}

#[derive(Args)]
struct LearnArgs {
    /// Bus survey CSV (power, phase, reliability observations).
    #[arg(long)]
    bus_records: Option<PathBuf>,
    /// Line survey CSV (impedance observations).
    #[arg(long)]
    line_records: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "all")]
    model: LearnModel,
    #[arg(long)]
    zones: Option<u32>,
    /// MCMC steps (burn-in is half, thinning keeps 500 draws).
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct GenerateArgs {
    /// Topology document from `topology`.
    #[arg(long)]
    topo: PathBuf,
    /// Directory with power/impedance/frequency/duration posterior files,
    /// or the literal `default` for the shipped parameters.
    #[arg(long, default_value = "default")]
    params_dir: String,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    pf: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    topo: PathBuf,
    #[arg(long)]
    ensemble: PathBuf,
    #[arg(long)]
    tol: Option<f64>,
    /// Voltage band as LO,HI in p.u.
    #[arg(long)]
    band: Option<String>,
    #[arg(long)]
    out: PathBuf,
    /// Per-phase voltage histogram CSV.
    #[arg(long)]
    histogram: Option<PathBuf>,
    /// Per-phase voltage histogram SVG.
    #[arg(long)]
    svg: Option<PathBuf>,
    /// Exit 3 unless every sample converges inside the band.
    #[arg(long)]
    require_full_convergence: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum HostcapLevel {
    Bus,
    Transformer,
    System,
}

#[derive(Args)]
struct HostcapArgs {
    #[arg(long)]
    topo: PathBuf,
    #[arg(long)]
    ensemble: PathBuf,
    /// Load profile CSV `hour,multiplier` (24 or 8760 rows).
    #[arg(long)]
    profiles: Option<PathBuf>,
    /// Irradiance CSV `hour,irradiance` in [0,1].
    #[arg(long)]
    irradiance: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "transformer")]
    level: HostcapLevel,
    /// Sweep every daylight hour instead of the worst-case snapshot.
    #[arg(long)]
    full_horizon: bool,
    #[arg(long)]
    band: Option<String>,
    #[arg(long)]
    hdi: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ExportFormat {
    Opendss,
    Tables,
    Geojson,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    topo: PathBuf,
    /// Sample document (`sample_<k>.json` from an ensemble directory);
    /// optional for GeoJSON.
    #[arg(long)]
    sample: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: ExportFormat,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    ensemble: PathBuf,
    #[arg(long)]
    hdi: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

/// Optional config-file values; flags override these, these override
/// built-in defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct FileConfig {
    topology: TopologySection,
    learn: LearnSection,
    generate: GenerateSection,
    validate: ValidateSection,
    hostcap: HostcapSection,
    stats: StatsSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct TopologySection {
    zones: Option<u32>,
    mv_kv: Option<f64>,
    lv_kv: Option<f64>,
    max_cluster: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct LearnSection {
    zones: Option<u32>,
    steps: Option<usize>,
    seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct GenerateSection {
    samples: Option<usize>,
    seed: Option<u64>,
    pf: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ValidateSection {
    tol: Option<f64>,
    band: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct HostcapSection {
    band: Option<String>,
    hdi: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct StatsSection {
    hdi: Option<f64>,
}

fn load_config(path: Option<&Path>) -> Result<FileConfig, AppError> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| AppError::Data(format!("{}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| AppError::Data(format!("{}: {e}", p.display())))
        }
    }
}

fn parse_pair(s: &str, what: &str) -> Result<(f64, f64), AppError> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(AppError::Usage(format!("{what} must be two comma-separated numbers")));
    }
    let a = parts[0].trim().parse().map_err(|_| AppError::Usage(format!("bad {what}: {s}")))?;
    let b = parts[1].trim().parse().map_err(|_| AppError::Usage(format!("bad {what}: {s}")))?;
    Ok((a, b))
}

fn sha256_file(path: &Path) -> Option<String> {
    let bytes = std::fs::read(path).ok()?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Some(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// Machine-readable run manifest written next to each output so a step can
/// be reproduced from it.
fn write_manifest(
    output: &Path,
    subcommand: &str,
    inputs: &[(&str, &Path)],
    seed: Option<u64>,
    params: serde_json::Value,
) -> Result<(), AppError> {
    let mut input_map = serde_json::Map::new();
    for (label, path) in inputs {
        input_map.insert(
            label.to_string(),
            json!({
                "path": path.display().to_string(),
                "sha256": sha256_file(path),
            }),
        );
    }
    let manifest = json!({
        "tool": "gridsynth",
        "version": env!("CARGO_PKG_VERSION"),
        "subcommand": subcommand,
        "seed": seed,
        "inputs": input_map,
        "params": params,
    });
    let manifest_path = if output.is_dir() {
        output.join("manifest.json")
    } else {
        let mut name = output.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.json");
        output.with_file_name(name)
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    bytes.push(b'\n');
    std::fs::write(&manifest_path, bytes)
        .map_err(|e| AppError::Data(format!("{}: {e}", manifest_path.display())))
}

fn read_topology(path: &Path) -> Result<GridTopology, AppError> {
    let bytes = std::fs::read(path).map_err(|e| AppError::Data(format!("{}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| AppError::Data(format!("{}: {e}", path.display())))
}

fn read_sample(path: &Path) -> Result<GridSample, AppError> {
    let bytes = std::fs::read(path).map_err(|e| AppError::Data(format!("{}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| AppError::Data(format!("{}: {e}", path.display())))
}

fn read_profile_csv(path: &Path, value_col: &str) -> Result<Vec<f64>, AppError> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| AppError::Data(format!("{}: {e}", path.display())))?;
    let headers = reader.headers().map_err(data)?.clone();
    let col = headers
        .iter()
        .position(|h| h == value_col)
        .ok_or_else(|| AppError::Data(format!("{}: missing column {value_col}", path.display())))?;
    let hour_col = headers
        .iter()
        .position(|h| h == "hour")
        .ok_or_else(|| AppError::Data(format!("{}: missing column hour", path.display())))?;
    let mut rows: Vec<(usize, f64)> = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(data)?;
        let hour: usize = rec[hour_col].trim().parse().map_err(data)?;
        let value: f64 = rec[col].trim().parse().map_err(data)?;
        rows.push((hour, value));
    }
    rows.sort_by_key(|r| r.0);
    Ok(rows.into_iter().map(|r| r.1).collect())
}

pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return code;
        }
    };
    if let Some(jobs) = cli.jobs {
        // a second in-process call can only fail because a pool exists;
        // determinism does not depend on the thread count
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    let quiet = cli.quiet;
    let config = match load_config(cli.config.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {}", e.message());
            return e.code();
        }
    };
    let result = match cli.cmd {
        Cmd::Ingest(args) => cmd_ingest(args, quiet),
        Cmd::Topology(args) => cmd_topology(args, &config, quiet),
        Cmd::Learn(args) => cmd_learn(args, &config, quiet),
        Cmd::Generate(args) => cmd_generate(args, &config, quiet),
        Cmd::Validate(args) => cmd_validate(args, &config, quiet),
        Cmd::Hostcap(args) => cmd_hostcap(args, &config, quiet),
        Cmd::Export(args) => cmd_export(args, quiet),
        Cmd::Stats(args) => cmd_stats(args, &config, quiet),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.code()
        }
    }
}

fn cmd_ingest(args: IngestArgs, quiet: bool) -> Result<(), AppError> {
    let extract: OsmExtract = if let Some(path) = &args.from_file {
        let bytes =
            std::fs::read(path).map_err(|e| AppError::Data(format!("{}: {e}", path.display())))?;
        parse_overpass_with_source(&bytes, &path.display().to_string()).map_err(data)?
    } else {
        let query = if let Some(city) = args.city {
            RegionQuery::City { city_name: city }
        } else if let Some(point) = &args.point {
            let center = parse_pair(point, "--point")?;
            let dist_m = args
                .dist_m
                .ok_or_else(|| AppError::Usage("--point requires --dist-m".into()))?;
            RegionQuery::Point { center, dist_m }
        } else if let Some(bbox) = &args.bbox {
            let parts: Vec<&str> = bbox.split(',').collect();
            if parts.len() != 4 {
                return Err(AppError::Usage("--bbox needs SOUTH,WEST,NORTH,EAST".into()));
            }
            let mut vals = [0.0; 4];
            for (v, p) in vals.iter_mut().zip(&parts) {
                *v = p.trim().parse().map_err(|_| AppError::Usage(format!("bad --bbox: {bbox}")))?;
            }
            RegionQuery::Bbox { south: vals[0], west: vals[1], north: vals[2], east: vals[3] }
        } else if let Some(address) = args.address {
            let dist_m = args
                .dist_m
                .ok_or_else(|| AppError::Usage("--address requires --dist-m".into()))?;
            RegionQuery::Address { address, dist_m }
        } else {
            return Err(AppError::Usage(
                "one of --from-file, --city, --point, --bbox, --address is required".into(),
            ));
        };
        let endpoint = args
            .overpass_url
            .or_else(|| std::env::var("GRIDSYNTH_OVERPASS_URL").ok())
            .ok_or_else(|| {
                AppError::Usage("no Overpass endpoint: pass --overpass-url or set GRIDSYNTH_OVERPASS_URL".into())
            })?;
        fetch_region(&query, &endpoint, &RetryPolicy::default(), None).map_err(data)?
    };
    let mut bytes = serde_json::to_vec_pretty(&extract).expect("extract serializes");
    bytes.push(b'\n');
    std::fs::write(&args.out, bytes)
        .map_err(|e| AppError::Data(format!("{}: {e}", args.out.display())))?;
    let inputs: Vec<(&str, &Path)> =
        args.from_file.iter().map(|p| ("overpass_document", p.as_path())).collect();
    write_manifest(&args.out, "ingest", &inputs, None, json!({}))?;
    if !quiet {
        eprintln!(
            "ingest: {} nodes, {} ways -> {}",
            extract.nodes.len(),
            extract.ways.len(),
            args.out.display()
        );
    }
    Ok(())
}

fn cmd_topology(args: TopologyArgs, config: &FileConfig, quiet: bool) -> Result<(), AppError> {
    let bytes = std::fs::read(&args.extract)
        .map_err(|e| AppError::Data(format!("{}: {e}", args.extract.display())))?;
    let extract: OsmExtract = serde_json::from_slice(&bytes)
        .map_err(|e| AppError::Data(format!("{}: {e}", args.extract.display())))?;
    let street = extract_street_graph(&extract).map_err(data)?;
    let features = extract_power_features(&extract);

    let mut cfg = TopologyConfig::default();
    cfg.z_count = args.zones.or(config.topology.zones).unwrap_or(cfg.z_count);
    cfg.mv_kv = args.mv_kv.or(config.topology.mv_kv).unwrap_or(cfg.mv_kv);
    cfg.lv_kv = args.lv_kv.or(config.topology.lv_kv).unwrap_or(cfg.lv_kv);
    cfg.max_cluster = args.max_cluster.or(config.topology.max_cluster).unwrap_or(cfg.max_cluster);
    if let Some(spec) = &args.inject_substation {
        cfg.inject_substation = Some(parse_pair(spec, "--inject-substation")?);
    }

    let topo = build_topology(&street, &features, &cfg).map_err(data)?;
    let mut bytes = serde_json::to_vec(&topo).expect("topology serializes");
    bytes.push(b'\n');
    std::fs::write(&args.out, bytes)
        .map_err(|e| AppError::Data(format!("{}: {e}", args.out.display())))?;
    if let Some(gj) = &args.geojson {
        write_geojson(&topo, None, gj).map_err(data)?;
    }
    write_manifest(
        &args.out,
        "topology",
        &[("extract", args.extract.as_path())],
        None,
        json!({
            "zones": cfg.z_count,
            "mv_kv": cfg.mv_kv,
            "lv_kv": cfg.lv_kv,
            "max_cluster": cfg.max_cluster,
        }),
    )?;
    if !quiet {
        eprintln!(
            "topology: {} buses, {} branches, {} transformers, {} feeders -> {}",
            topo.buses.len(),
            topo.branches.len(),
            topo.transformers.len(),
            topo.feeders.len(),
            args.out.display()
        );
    }
    Ok(())
}

fn cmd_learn(args: LearnArgs, config: &FileConfig, quiet: bool) -> Result<(), AppError> {
    let zones = args.zones.or(config.learn.zones).unwrap_or(5);
    let seed = args.seed.or(config.learn.seed).unwrap_or(0);
    let mut mcmc = McmcConfig::default();
    if let Some(steps) = args.steps.or(config.learn.steps) {
        mcmc.steps = steps;
        mcmc.burn_in = steps / 2;
    }
    mcmc.seed = seed;
    let priors = Priors::default();
    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| AppError::Data(format!("{}: {e}", args.out_dir.display())))?;

    let want = |m: LearnModel| args.model == m || args.model == LearnModel::All;
    let bus_records = if want(LearnModel::Power) || want(LearnModel::Frequency) || want(LearnModel::Duration)
    {
        let path = args
            .bus_records
            .as_ref()
            .ok_or_else(|| AppError::Usage("--bus-records is required for this model".into()))?;
        Some(read_bus_records(path).map_err(data)?)
    } else {
        None
    };
    let line_records = if want(LearnModel::Impedance) {
        let path = args
            .line_records
            .as_ref()
            .ok_or_else(|| AppError::Usage("--line-records is required for this model".into()))?;
        Some(read_line_records(path).map_err(data)?)
    } else {
        None
    };

    let mut written: Vec<String> = Vec::new();
    let mut save = |name: &str, posterior: Posterior| -> Result<(), AppError> {
        let path = args.out_dir.join(format!("{name}.json"));
        save_posterior(&posterior, &path).map_err(data)?;
        written.push(path.display().to_string());
        Ok(())
    };
    if want(LearnModel::Power) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x01);
        let p = learn_power(bus_records.as_ref().unwrap(), zones, &priors, &mcmc, &mut rng)
            .map_err(data)?;
        save("power", Posterior::Power(p))?;
    }
    if want(LearnModel::Impedance) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x02);
        let p = learn_impedance(line_records.as_ref().unwrap(), zones, &priors, &mcmc, &mut rng)
            .map_err(data)?;
        save("impedance", Posterior::Impedance(p))?;
    }
    if want(LearnModel::Frequency) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x03);
        let p = learn_frequency(bus_records.as_ref().unwrap(), zones, &priors, &mcmc, &mut rng)
            .map_err(data)?;
        save("frequency", Posterior::Frequency(p))?;
    }
    if want(LearnModel::Duration) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x04);
        let p = learn_duration(bus_records.as_ref().unwrap(), zones, &priors, &mcmc, &mut rng)
            .map_err(data)?;
        save("duration", Posterior::Duration(p))?;
    }

    let mut inputs: Vec<(&str, &Path)> = Vec::new();
    if let Some(p) = &args.bus_records {
        inputs.push(("bus_records", p.as_path()));
    }
    if let Some(p) = &args.line_records {
        inputs.push(("line_records", p.as_path()));
    }
    write_manifest(
        &args.out_dir,
        "learn",
        &inputs,
        Some(seed),
        json!({ "zones": zones, "steps": mcmc.steps, "outputs": written }),
    )?;
    if !quiet {
        eprintln!("learn: wrote {} posterior file(s) to {}", written.len(), args.out_dir.display());
    }
    Ok(())
}

struct LoadedPosteriors {
    power: crate::bayes::PowerPosterior,
    impedance: crate::bayes::ImpedancePosterior,
    frequency: crate::bayes::FrequencyPosterior,
    duration: crate::bayes::DurationPosterior,
}

fn load_posteriors(params_dir: &str) -> Result<LoadedPosteriors, AppError> {
    let path_for = |name: &str| -> String {
        if params_dir == "default" {
            "default".to_string()
        } else {
            Path::new(params_dir).join(format!("{name}.json")).display().to_string()
        }
    };
    let Posterior::Power(power) =
        load_posterior(&path_for("power"), ModelKind::Power).map_err(data)?
    else {
        unreachable!()
    };
    let Posterior::Impedance(impedance) =
        load_posterior(&path_for("impedance"), ModelKind::Impedance).map_err(data)?
    else {
        unreachable!()
    };
    let Posterior::Frequency(frequency) =
        load_posterior(&path_for("frequency"), ModelKind::Frequency).map_err(data)?
    else {
        unreachable!()
    };
    let Posterior::Duration(duration) =
        load_posterior(&path_for("duration"), ModelKind::Duration).map_err(data)?
    else {
        unreachable!()
    };
    Ok(LoadedPosteriors { power, impedance, frequency, duration })
}

fn cmd_generate(args: GenerateArgs, config: &FileConfig, quiet: bool) -> Result<(), AppError> {
    let topo = read_topology(&args.topo)?;
    let loaded = load_posteriors(&args.params_dir)?;
    let post = Posteriors {
        power: &loaded.power,
        impedance: &loaded.impedance,
        frequency: &loaded.frequency,
        duration: &loaded.duration,
    };
    let n = args.samples.or(config.generate.samples).unwrap_or(100);
    let seed = args.seed.or(config.generate.seed).unwrap_or(0);
    let mut options = SynthesisOptions::default();
    options.power_factor = args.pf.or(config.generate.pf).unwrap_or(options.power_factor);
    let ensemble = generate_ensemble(&topo, &post, n, seed, &options).map_err(data)?;
    save_ensemble(&ensemble, &args.out).map_err(data)?;
    write_manifest(
        &args.out,
        "generate",
        &[("topology", args.topo.as_path())],
        Some(seed),
        json!({ "samples": n, "pf": options.power_factor, "params_dir": args.params_dir }),
    )?;
    if !quiet {
        eprintln!("generate: {} samples -> {}", n, args.out.display());
    }
    Ok(())
}

fn cmd_validate(args: ValidateArgs, config: &FileConfig, quiet: bool) -> Result<(), AppError> {
    let topo = read_topology(&args.topo)?;
    let ensemble = load_ensemble(&args.ensemble).map_err(data)?;
    let tol = args.tol.or(config.validate.tol).unwrap_or(crate::powerflow::DEFAULT_PF_TOL);
    let band_spec = args.band.or_else(|| config.validate.band.clone());
    let band = match band_spec {
        Some(s) => parse_pair(&s, "--band")?,
        None => (0.9, 1.1),
    };

    let mut results: Vec<(PfResult, Vec<u8>)> = Vec::with_capacity(ensemble.samples.len());
    let mut rows = Vec::new();
    for sample in &ensemble.samples {
        let net = build_pf_network(sample, &topo, crate::powerflow::DEFAULT_S_BASE_MVA)
            .map_err(data)?;
        let res = solve_fbs(&net, tol, crate::powerflow::DEFAULT_PF_MAX_ITER);
        results.push((res, net.phase_mask.clone()));
    }
    for ((res, masks), sample) in results.iter().zip(&ensemble.samples) {
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        let mut in_band = true;
        for (i, bus) in res.v.iter().enumerate() {
            for slot in 0..3 {
                if masks[i] & (1 << slot) != 0 {
                    let (re, im) = bus[slot];
                    let mag = (re * re + im * im).sqrt();
                    min[slot] = min[slot].min(mag);
                    max[slot] = max[slot].max(mag);
                    if mag < band.0 || mag > band.1 {
                        in_band = false;
                    }
                }
            }
        }
        rows.push((
            sample.sample_idx,
            res.converged,
            res.iterations,
            min,
            max,
            in_band && res.converged,
        ));
    }

    let mut w = csv::Writer::from_path(&args.out).map_err(data)?;
    w.write_record([
        "sample_idx",
        "converged",
        "iterations",
        "min_a",
        "max_a",
        "min_b",
        "max_b",
        "min_c",
        "max_c",
        "in_band",
    ])
    .map_err(data)?;
    for (idx, converged, iters, min, max, in_band) in &rows {
        w.write_record([
            idx.to_string(),
            converged.to_string(),
            iters.to_string(),
            min[0].to_string(),
            max[0].to_string(),
            min[1].to_string(),
            max[1].to_string(),
            min[2].to_string(),
            max[2].to_string(),
            in_band.to_string(),
        ])
        .map_err(data)?;
    }
    w.flush().map_err(data)?;

    let stats = summarize_voltages(&results, band).map_err(data)?;
    if let Some(hist_path) = &args.histogram {
        let mut w = csv::Writer::from_path(hist_path).map_err(data)?;
        w.write_record(["phase", "bin_lo", "bin_hi", "count"]).map_err(data)?;
        let bins = stats.histograms[0].len();
        let width = (stats.hist_hi - stats.hist_lo) / bins as f64;
        for (slot, name) in ["A", "B", "C"].iter().enumerate() {
            for (b, count) in stats.histograms[slot].iter().enumerate() {
                w.write_record([
                    name.to_string(),
                    (stats.hist_lo + b as f64 * width).to_string(),
                    (stats.hist_lo + (b + 1) as f64 * width).to_string(),
                    count.to_string(),
                ])
                .map_err(data)?;
            }
        }
        w.flush().map_err(data)?;
    }
    if let Some(svg_path) = &args.svg {
        std::fs::write(svg_path, histogram_svg(&stats)).map_err(data)?;
    }
    write_manifest(
        &args.out,
        "validate",
        &[("topology", args.topo.as_path())],
        None,
        json!({
            "ensemble": args.ensemble.display().to_string(),
            "tol": tol,
            "band": [band.0, band.1],
            "convergence_rate": stats.convergence_rate,
            "in_band_fraction": stats.in_band_fraction,
        }),
    )?;
    if !quiet {
        eprintln!(
            "validate: convergence {:.1}%, in-band {:.1}% -> {}",
            100.0 * stats.convergence_rate,
            100.0 * stats.in_band_fraction,
            args.out.display()
        );
    }
    if args.require_full_convergence && (stats.convergence_rate < 1.0 || stats.in_band_fraction < 1.0)
    {
        return Err(AppError::Validation(format!(
            "convergence {:.4}, in-band {:.4}: below required 1.0",
            stats.convergence_rate, stats.in_band_fraction
        )));
    }
    Ok(())
}

/// Minimal three-panel bar chart of the per-phase voltage histograms.
fn histogram_svg(stats: &crate::powerflow::VoltageStats) -> String {
    let (w, h, gap) = (360.0, 140.0, 20.0);
    let total_h = 3.0 * h + 4.0 * gap;
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{total_h}\" viewBox=\"0 0 {w} {total_h}\">\n"
    );
    for (slot, name) in ["A", "B", "C"].iter().enumerate() {
        let top = gap + slot as f64 * (h + gap);
        let hist = &stats.histograms[slot];
        let max = hist.iter().copied().max().unwrap_or(1).max(1) as f64;
        let bw = w / hist.len() as f64;
        out.push_str(&format!(
            "<text x=\"4\" y=\"{}\" font-size=\"11\">Phase {name}</text>\n",
            top + 12.0
        ));
        for (i, count) in hist.iter().enumerate() {
            let bh = (*count as f64 / max) * (h - 20.0);
            out.push_str(&format!(
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"#4878a8\"/>\n",
                i as f64 * bw,
                top + h - bh,
                bw.max(1.0) - 0.5,
                bh
            ));
        }
    }
    out.push_str("</svg>\n");
    out
}

fn cmd_hostcap(args: HostcapArgs, config: &FileConfig, quiet: bool) -> Result<(), AppError> {
    let topo = read_topology(&args.topo)?;
    let ensemble = load_ensemble(&args.ensemble).map_err(data)?;
    let load_profile = match &args.profiles {
        Some(p) => read_profile_csv(p, "multiplier")?,
        None => default_load_profile(),
    };
    let irradiance = match &args.irradiance {
        Some(p) => read_profile_csv(p, "irradiance")?,
        None => default_irradiance(),
    };
    let snapshot = SnapshotInputs { load_profile, irradiance };
    let band_spec = args.band.or_else(|| config.hostcap.band.clone());
    let band = match band_spec {
        Some(s) => parse_pair(&s, "--band")?,
        None => (0.9, 1.1),
    };
    let hdi = args.hdi.or(config.hostcap.hdi).unwrap_or(0.94);
    let level = match args.level {
        HostcapLevel::Bus => HcLevel::PerBus,
        HostcapLevel::Transformer => HcLevel::PerTransformer,
        HostcapLevel::System => HcLevel::System,
    };
    let dists = ensemble_hosting_capacity(
        &ensemble,
        &topo,
        &snapshot,
        band,
        &SearchConfig::default(),
        level,
        hdi,
        args.full_horizon,
    )
    .map_err(|e| match e {
        crate::hostcap::HcError::BaseCaseViolation => AppError::Validation(e.to_string()),
        other => AppError::Data(other.to_string()),
    })?;

    let mut w = csv::Writer::from_path(&args.out).map_err(data)?;
    w.write_record(["label", "mean_kw", "hdi_lo_kw", "hdi_hi_kw"]).map_err(data)?;
    for row in &dists.summary {
        w.write_record([
            row.label.clone(),
            row.mean_kw.to_string(),
            row.hdi_lo_kw.to_string(),
            row.hdi_hi_kw.to_string(),
        ])
        .map_err(data)?;
    }
    w.flush().map_err(data)?;
    write_manifest(
        &args.out,
        "hostcap",
        &[("topology", args.topo.as_path())],
        None,
        json!({
            "ensemble": args.ensemble.display().to_string(),
            "level": format!("{:?}", args.level),
            "band": [band.0, band.1],
            "hdi": hdi,
            "full_horizon": args.full_horizon,
        }),
    )?;
    if !quiet {
        eprintln!("hostcap: {} summary row(s) -> {}", dists.summary.len(), args.out.display());
    }
    Ok(())
}

fn cmd_export(args: ExportArgs, quiet: bool) -> Result<(), AppError> {
    let topo = read_topology(&args.topo)?;
    let sample = args.sample.as_ref().map(|p| read_sample(p)).transpose()?;
    match args.format {
        ExportFormat::Opendss => {
            let sample =
                sample.ok_or_else(|| AppError::Usage("--sample is required for opendss".into()))?;
            write_opendss(&sample, &topo, &args.out).map_err(data)?;
        }
        ExportFormat::Tables => {
            let sample =
                sample.ok_or_else(|| AppError::Usage("--sample is required for tables".into()))?;
            std::fs::create_dir_all(&args.out)
                .map_err(|e| AppError::Data(format!("{}: {e}", args.out.display())))?;
            write_grid_tables(&sample, &topo, &args.out.join("grid_tables.json")).map_err(data)?;
        }
        ExportFormat::Geojson => {
            std::fs::create_dir_all(&args.out)
                .map_err(|e| AppError::Data(format!("{}: {e}", args.out.display())))?;
            write_geojson(&topo, sample.as_ref(), &args.out.join("grid.geojson")).map_err(data)?;
        }
    }
    let mut inputs: Vec<(&str, &Path)> = vec![("topology", args.topo.as_path())];
    if let Some(p) = &args.sample {
        inputs.push(("sample", p.as_path()));
    }
    write_manifest(&args.out, "export", &inputs, None, json!({ "format": format!("{:?}", args.format) }))?;
    if !quiet {
        eprintln!("export: {:?} -> {}", args.format, args.out.display());
    }
    Ok(())
}

fn cmd_stats(args: StatsArgs, config: &FileConfig, quiet: bool) -> Result<(), AppError> {
    let ensemble = load_ensemble(&args.ensemble).map_err(data)?;
    let hdi = args.hdi.or(config.stats.hdi).unwrap_or(0.94);
    let rows = write_ensemble_stats(&ensemble, hdi, &args.out).map_err(data)?;
    write_manifest(
        &args.out,
        "stats",
        &[],
        None,
        json!({ "ensemble": args.ensemble.display().to_string(), "hdi": hdi }),
    )?;
    if !quiet {
        eprintln!("stats: {} row(s) -> {}", rows.len(), args.out.display());
    }
    Ok(())
}
