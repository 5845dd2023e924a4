mod config;

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use bigthick::enquiry::{self, answer, export_features, schema_of, Enquiry, EnquiryStore, Purpose, Source};
use bigthick::graph::{EntityGraph, ReferenceBox};
use bigthick::io::{self as bio, IoError};
use bigthick::personal::{build_streams, PersonalStream, StreamConfig, Vocabulary};
use bigthick::reference::{compute_near, compute_partin, ingest_reference};
use bigthick::synth::{generate, SynthSpec};
use bigthick::teleontology::presets::{personal_etg, reference_etg};
use bigthick::unify::{compute_stats, epu_align, unify, MappingConfig, ObservationContext, UnifyError};

use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Invalid(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    fn from_lib(path: &Path, e: IoError) -> Self {
        match e {
            IoError::Io(source) => CliError::io(path, source),
            other => CliError::Parse { path: path.to_path_buf(), message: other.to_string() },
        }
    }

    fn invalid(e: impl ToString) -> Self {
        CliError::Invalid(e.to_string())
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Io { .. } => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "bigthick", version, about = "Unify reference places with personal diary streams")]
struct Cli {
    /// TOML run configuration; built-in defaults when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set unification.near_threshold_m=40`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// More log output; repeat for debug.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate places, batteries, GPS and the planted ground truth.
    Synth,
    /// Build the reference entity graph from the places file.
    IngestReference,
    /// Build one personal stream per participant.
    IngestPersonal,
    /// Unify the reference graph with the streams.
    Unify,
    /// Answer a JSON enquiry against the observation context.
    Enquire {
        file: PathBuf,
        /// Bindings CSV; `<out>/<file stem>.csv` by default.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Print whether a purpose can be served by each dataset.
    Feasibility { id: String },
    /// Write the feature table of a purpose on one dataset.
    ExportFeatures {
        id: String,
        #[arg(long, value_enum, default_value = "unified")]
        source: SourceArg,
        /// `<out>/<id>-<source>.csv` by default.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Print unification statistics and export sizes.
    Stats,
    /// Print the effective configuration.
    ShowConfig,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum SourceArg {
    Reference,
    Personal,
    Unified,
}

impl From<SourceArg> for Source {
    fn from(s: SourceArg) -> Self {
        match s {
            SourceArg::Reference => Source::Reference,
            SourceArg::Personal => Source::Personal,
            SourceArg::Unified => Source::Unified,
        }
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<fs::File>, CliError> {
    fs::File::open(path).map(BufReader::new).map_err(|e| CliError::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable output");
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    serde_json::from_reader(open(path)?).map_err(|e| CliError::Parse { path: path.into(), message: e.to_string() })
}

/// JSON or TOML, chosen by extension.
fn read_structured<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let parse_err = |message: String| CliError::Parse { path: path.into(), message };
    if has_extension(path, &["toml"]) {
        toml::from_str(&read_text(path)?).map_err(|e| parse_err(e.to_string()))
    } else {
        serde_json::from_str(&read_text(path)?).map_err(|e| parse_err(e.to_string()))
    }
}

fn has_extension(path: &Path, exts: &[&str]) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| exts.iter().any(|x| e.eq_ignore_ascii_case(x)))
}

fn stream_config(cfg: &RunConfig) -> Result<StreamConfig, CliError> {
    let vocabulary: Vocabulary = match &cfg.paths.vocabulary {
        Some(p) => read_structured(p)?,
        None => Vocabulary::default(),
    };
    Ok(StreamConfig { schedule: cfg.personal.schedule.clone(), position: cfg.personal.position, vocabulary })
}

fn cmd_synth(cfg: &RunConfig) -> Result<(), CliError> {
    let s = &cfg.synth;
    let span = cfg.period.duration_secs() + 1;
    let week = 7 * 86_400;
    if span % week != 0 {
        return Err(CliError::Config(format!("synthetic period {} is not a whole number of weeks", cfg.period)));
    }
    let mut spec = SynthSpec::new(cfg.seed, s.n_places, s.n_participants, cfg.bbox, (span / week) as u32);
    spec.start = cfg.period.start;
    spec.schedule = cfg.personal.schedule.clone();
    spec.unanswered_rate = s.unanswered_rate;
    spec.step_sigma_m = s.step_sigma_m;
    spec.gps_noise_m = s.gps_noise_m;
    spec.plant_random(s.visits, s.colocations, s.max_jitter_m).map_err(CliError::invalid)?;
    let data = generate(&spec).map_err(CliError::invalid)?;

    let p = &cfg.paths;
    let mut buf = Vec::new();
    if has_extension(&p.places, &["geojson", "json"]) {
        return Err(CliError::Config("synth writes places as CSV; set paths.places to a .csv file".into()));
    }
    bio::write_places_csv(&data.places, &mut buf).map_err(|e| CliError::from_lib(&p.places, e))?;
    write_bytes(&p.places, &std::mem::take(&mut buf))?;
    bio::write_batteries_csv(&data.batteries, &mut buf).map_err(|e| CliError::from_lib(&p.batteries, e))?;
    write_bytes(&p.batteries, &std::mem::take(&mut buf))?;
    bio::write_gps_csv(&data.gps, &mut buf).map_err(|e| CliError::from_lib(&p.gps, e))?;
    write_bytes(&p.gps, &buf)?;
    write_json(&p.out.join("truth.json"), &data.truth)?;
    println!(
        "{} places, {} batteries, {} fixes, {} planted visits, {} planted co-locations",
        data.places.len(),
        data.batteries.len(),
        data.gps.len(),
        data.truth.visits.len(),
        data.truth.colocations.len()
    );
    Ok(())
}

fn cmd_ingest_reference(cfg: &RunConfig) -> Result<(), CliError> {
    let path = &cfg.paths.places;
    let records = if has_extension(path, &["geojson", "json"]) {
        bio::read_places_geojson(&read_text(path)?)
    } else {
        bio::read_places_csv(open(path)?)
    }
    .map_err(|e| CliError::from_lib(path, e))?;
    let meta = ReferenceBox { label: cfg.label.clone(), region: cfg.bbox, period: cfg.period };
    let ingested =
        ingest_reference(records, meta, reference_etg(&cfg.label, Some(cfg.period))).map_err(CliError::invalid)?;
    let graph = compute_near(compute_partin(ingested.graph), cfg.reference.place_near_m).map_err(CliError::invalid)?;
    write_json(&cfg.paths.reference(), &graph)?;
    println!(
        "{} entities, {} relations ({} outside the region, {} with the default etype)",
        graph.entities.len(),
        graph.triples.len(),
        ingested.dropped_outside,
        ingested.defaulted_class
    );
    Ok(())
}

fn cmd_ingest_personal(cfg: &RunConfig) -> Result<(), CliError> {
    let p = &cfg.paths;
    let batteries = bio::read_batteries_csv(open(&p.batteries)?).map_err(|e| CliError::from_lib(&p.batteries, e))?;
    let gps = bio::read_gps_csv(open(&p.gps)?).map_err(|e| CliError::from_lib(&p.gps, e))?;
    let streams = build_streams(&batteries, &gps, cfg.period, &stream_config(cfg)?).map_err(CliError::invalid)?;
    write_json(&p.streams(), &streams)?;
    let contexts: usize = streams.iter().map(|s| s.contexts.len()).sum();
    println!("{} streams, {contexts} contexts", streams.len());
    Ok(())
}

fn load_streams(cfg: &RunConfig) -> Result<Vec<PersonalStream>, CliError> {
    let path = cfg.paths.streams();
    if path.exists() {
        read_json(&path)
    } else {
        log::warn!("{} not found, continuing without personal streams", path.display());
        Ok(Vec::new())
    }
}

fn cmd_unify(cfg: &RunConfig) -> Result<(), CliError> {
    let reference: EntityGraph = read_json(&cfg.paths.reference())?;
    let streams = load_streams(cfg)?;
    let mapping = match &cfg.paths.mapping {
        Some(p) => read_structured(p)?,
        None => MappingConfig::preset(),
    };
    let (label, period) = (&reference.box_meta.label, Some(reference.box_meta.period));
    let alignment =
        epu_align(&personal_etg(label, period), &reference_etg(label, period), &mapping).map_err(CliError::invalid)?;
    let obs = unify(reference, streams, &alignment, &cfg.unification).map_err(|e| match e {
        UnifyError::Param { .. } => CliError::Config(e.to_string()),
        other => CliError::invalid(other),
    })?;

    let out = &cfg.paths.out;
    write_json(&cfg.paths.observation(), &obs)?;
    write_bytes(&out.join("derived.jsonl"), &bio::to_jsonl_bytes(&obs.derived))?;
    write_bytes(&out.join("resolutions.jsonl"), &bio::to_jsonl_bytes(&obs.resolutions))?;
    write_bytes(&out.join("unified.jsonl"), &enquiry::unified_export(&obs))?;
    write_json(&out.join("stats.json"), &enquiry::stats(&obs))?;
    println!(
        "{} of {} contexts resolved, {} derived relations",
        obs.stats.unified_context_count, obs.stats.context_count, obs.stats.derived_relation_count
    );
    Ok(())
}

/// The unified observation if there is one, else the ingested sources with
/// nothing resolved.
fn load_observation(cfg: &RunConfig) -> Result<ObservationContext, CliError> {
    let path = cfg.paths.observation();
    if path.exists() {
        return read_json(&path);
    }
    log::info!("{} not found, using the ingested sources without unification", path.display());
    let reference: EntityGraph = read_json(&cfg.paths.reference())?;
    let streams = load_streams(cfg)?;
    let stats = compute_stats(&reference, &streams, &[], &[]);
    Ok(ObservationContext { reference, streams, derived: Vec::new(), resolutions: Vec::new(), stats })
}

fn cmd_enquire(cfg: &RunConfig, file: &Path, output: Option<&Path>) -> Result<(), CliError> {
    let e: Enquiry = read_json(file)?;
    let obs = load_observation(cfg)?;
    let store = EnquiryStore::new(&obs);
    let a = answer(&e, &store).map_err(CliError::invalid)?;
    let default_out;
    let output = match output {
        Some(p) => p,
        None => {
            let stem = file.file_stem().and_then(|s| s.to_str()).unwrap_or("enquiry");
            default_out = cfg.paths.out.join(format!("{stem}.csv"));
            &default_out
        }
    };
    write_bytes(output, a.bindings.to_csv().as_bytes())?;
    println!("class\t{:?}", a.class);
    if let Some(n) = a.count {
        println!("count\t{n}");
    }
    println!("rows\t{}", a.bindings.rows.len());
    Ok(())
}

fn cmd_feasibility(cfg: &RunConfig, id: &str) -> Result<(), CliError> {
    let purpose = Purpose::by_id(id).map_err(CliError::invalid)?;
    let obs = load_observation(cfg)?;
    for source in Source::ALL {
        let schema = schema_of(&obs, source);
        let ok = enquiry::purpose_feasibility(&schema, &purpose.target, purpose.features_for(source));
        println!("{source}\t{ok}");
    }
    Ok(())
}

fn cmd_export_features(cfg: &RunConfig, id: &str, source: Source, output: Option<&Path>) -> Result<(), CliError> {
    let purpose = Purpose::by_id(id).map_err(CliError::invalid)?;
    let obs = load_observation(cfg)?;
    let table = export_features(&obs, &purpose, source).map_err(CliError::invalid)?;
    let default_out = cfg.paths.out.join(format!("{}-{source}.csv", purpose.id));
    write_bytes(output.unwrap_or(&default_out), table.to_csv().as_bytes())?;
    println!("{} rows", table.len());
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = RunConfig::load(cli.config.as_deref(), &cli.overrides)?;
    if cfg.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build_global()
            .map_err(|e| CliError::Config(format!("workers: {e}")))?;
    }
    match &cli.command {
        Command::Synth => cmd_synth(&cfg),
        Command::IngestReference => cmd_ingest_reference(&cfg),
        Command::IngestPersonal => cmd_ingest_personal(&cfg),
        Command::Unify => cmd_unify(&cfg),
        Command::Enquire { file, output } => cmd_enquire(&cfg, file, output.as_deref()),
        Command::Feasibility { id } => cmd_feasibility(&cfg, id),
        Command::ExportFeatures { id, source, output } => {
            cmd_export_features(&cfg, id, (*source).into(), output.as_deref())
        }
        Command::Stats => {
            let report = enquiry::stats(&load_observation(&cfg)?);
            println!("{}", serde_json::to_string_pretty(&report).expect("serializable report"));
            Ok(())
        }
        Command::ShowConfig => {
            print!("{}", cfg.to_toml());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
