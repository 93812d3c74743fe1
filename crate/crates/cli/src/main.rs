//! `cprism`: generate synthetic studies, discover subgroups, benchmark
//! against the exhaustive oracle, explain by matching, project, and serve.
//!
//! Summaries go to stdout as one JSON object per run; logs go to stderr.
//! Exit codes: 0 success, 1 usage error, 2 data error.

use std::io::{IsTerminal, Write};
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use cprism_core::dataset::{ingest_csv, DatasetConfig, Subgroup, SubgroupJson};
use cprism_core::discovery::{discover, SearchParams};
use cprism_core::estimate::PropensityParams;
use cprism_core::mask::UnitMask;
use cprism_core::matching::{match_report, MatchParams, DEFAULT_BIN_WIDTH, DEFAULT_DISPLAY_CAP, DEFAULT_EPSILON};
use cprism_core::projection::{project_dataset, NmdsParams, DEFAULT_POINT_CAP};
use cprism_core::report::front_report;
use cprism_core::synth::{bench_csv, bench_markdown, generate_synthetic, run_bench, SynthSpec, MAX_ORACLE_ATOMS};
use cprism_core::Study;
use serde::Deserialize;
use serde_json::json;

#[derive(Parser, Debug)]
#[command(name = "cprism", version, about = "Subgroups with heterogeneous treatment effects")]
struct Cli {
    /// Seed for every random choice; overrides seeds given in input files
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset with known ground truth
    Synth {
        /// Preset name (syn-1 .. syn-6) or path to a JSON generator spec
        #[arg(long)]
        spec: String,
        /// CSV output
        #[arg(long)]
        out: PathBuf,
        /// Ground truth output (propensities, effects, planted membership)
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Search the Pareto front of subgroups
    Discover {
        #[arg(long)]
        data: PathBuf,
        /// JSON with optional `dataset` (column roles) and `search` sections
        #[arg(long)]
        config: Option<PathBuf>,
        /// Front JSON output
        #[arg(long)]
        out: PathBuf,
        /// Also report the lower fronts
        #[arg(long)]
        all_fronts: bool,
    },
    /// Run the search and the exhaustive oracle and report P/S/L/C
    Bench {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Longest antecedent the oracle enumerates
        #[arg(long, default_value_t = 2, value_parser = clap::builder::RangedU64ValueParser::<usize>::new().range(1..=MAX_ORACLE_ATOMS as u64))]
        oracle_max_atoms: usize,
        /// CSV output, one row per method
        #[arg(long)]
        out: PathBuf,
        /// Markdown table output
        #[arg(long)]
        markdown: Option<PathBuf>,
    },
    /// Match treated and control units inside a subgroup
    Match {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Subgroup JSON (`atoms` list)
        #[arg(long)]
        subgroup: PathBuf,
        /// Caliper on the propensity score gap
        #[arg(long, default_value_t = DEFAULT_EPSILON)]
        epsilon: f64,
        #[arg(long, default_value_t = DEFAULT_BIN_WIDTH)]
        bin_width: f64,
        /// Pairs kept in the display sample
        #[arg(long, default_value_t = DEFAULT_DISPLAY_CAP)]
        display_cap: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Lay units out in 2-D by non-metric MDS on Gower distances
    Project {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Subgroup JSON files whose members are tagged in the layout
        #[arg(long)]
        subgroup: Vec<PathBuf>,
        /// Units above this count are subsampled
        #[arg(long, default_value_t = DEFAULT_POINT_CAP)]
        cap: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Start the HTTP/JSON service
    Serve {
        #[arg(long, env = "CPRISM_HOST", default_value = "127.0.0.1")]
        host: IpAddr,
        #[arg(long, env = "CPRISM_PORT", default_value_t = cprism_server::DEFAULT_PORT)]
        port: u16,
        /// Directory for session snapshots, reloaded on start
        #[arg(long, env = "CPRISM_SNAPSHOT_DIR")]
        snapshot_dir: Option<PathBuf>,
    },
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    dataset: DatasetConfig,
    search: SearchParams,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("CPRISM_LOG").unwrap_or_else(|_| "info".into()),
        )
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        // anything past argument parsing is a problem with the inputs
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Synth { spec, out, truth } => synth(&spec, &out, truth.as_deref(), seed),
        Command::Discover {
            data: path,
            config,
            out,
            all_fronts,
        } => discover_cmd(&path, config.as_deref(), &out, all_fronts, seed),
        Command::Bench {
            data: path,
            config,
            oracle_max_atoms,
            out,
            markdown,
        } => bench(&path, config.as_deref(), oracle_max_atoms, &out, markdown.as_deref(), seed),
        Command::Match {
            data: path,
            config,
            subgroup,
            epsilon,
            bin_width,
            display_cap,
            out,
        } => {
            let params = MatchParams {
                epsilon,
                bin_width,
                display_cap,
                seed: seed.unwrap_or(MatchParams::default().seed),
            };
            match_cmd(&path, config.as_deref(), &subgroup, &params, &out)
        }
        Command::Project {
            data: path,
            config,
            subgroup,
            cap,
            out,
        } => project(&path, config.as_deref(), &subgroup, cap, &out, seed),
        Command::Serve {
            host,
            port,
            snapshot_dir,
        } => serve(SocketAddr::new(host, port), snapshot_dir),
    }
}

/// Writes through a temporary file in the target directory, then renames.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("creating a file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))
}

fn summary(value: serde_json::Value) {
    println!("{value}");
}

fn load(path: &Path, config: Option<&Path>) -> Result<(Study, RunConfig)> {
    let config: RunConfig = config.map(read_json).transpose()?.unwrap_or_default();
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let (dataset, report) = ingest_csv(std::io::BufReader::new(file), &config.dataset)
        .with_context(|| format!("ingesting {}", path.display()))?;
    if report.dropped_rows > 0 {
        tracing::warn!(dropped = report.dropped_rows, "rows dropped for missing treatment or outcome");
    }
    let study = Study::fit(dataset, config.dataset.buckets, &PropensityParams::default())?;
    tracing::info!(n = study.n(), atoms = study.d(), "study fitted");
    Ok((study, config))
}

fn synth(spec: &str, out: &Path, truth: Option<&Path>, seed: Option<u64>) -> Result<()> {
    let mut spec = if Path::new(spec).is_file() {
        read_json::<SynthSpec>(Path::new(spec))?
    } else {
        SynthSpec::preset(spec)?
    };
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    let (dataset, gt) = generate_synthetic(&spec)?;
    let mut csv = Vec::new();
    dataset.write_csv(&mut csv)?;
    write_atomic(out, &csv)?;
    if let Some(path) = truth {
        write_atomic(path, &serde_json::to_vec(&gt)?)?;
    }
    summary(json!({
        "command": "synth",
        "out": out,
        "n": dataset.n(),
        "n_treated": dataset.n_treated(),
        "covariates": spec.n_covariates(),
        "planted": gt.planted_count(),
        "seed": spec.seed,
    }));
    Ok(())
}

fn discover_cmd(path: &Path, config: Option<&Path>, out: &Path, all_fronts: bool, seed: Option<u64>) -> Result<()> {
    let (study, mut config) = load(path, config)?;
    if let Some(seed) = seed {
        config.search.seed = seed;
    }
    let result = discover(&study, &config.search)?;
    tracing::info!(
        generations = result.generations_run,
        evaluations = result.evaluations,
        stop = ?result.stop_reason,
        "search finished"
    );
    let report = front_report(&result, &study.binarized.schema, all_fronts);
    write_atomic(out, &serde_json::to_vec_pretty(&report)?)?;
    summary(json!({
        "command": "discover",
        "out": out,
        "front_size": report.subgroups.len(),
        "generations": report.generations_run,
        "evaluations": report.evaluations,
        "stop_reason": report.stop_reason,
        "seed": config.search.seed,
    }));
    Ok(())
}

fn bench(
    path: &Path,
    config: Option<&Path>,
    oracle_max_atoms: usize,
    out: &Path,
    markdown: Option<&Path>,
    seed: Option<u64>,
) -> Result<()> {
    let (study, mut config) = load(path, config)?;
    if let Some(seed) = seed {
        config.search.seed = seed;
    }
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let (rows, _, oracle) = run_bench(&study, &config.search, oracle_max_atoms, &name)?;
    tracing::info!(oracle_front = oracle.len(), "oracle enumerated");
    write_atomic(out, bench_csv(&rows).as_bytes())?;
    if let Some(md) = markdown {
        write_atomic(md, bench_markdown(&rows).as_bytes())?;
    }
    summary(json!({ "command": "bench", "out": out, "rows": rows }));
    Ok(())
}

fn subgroup_mask(study: &Study, path: &Path) -> Result<(Subgroup, UnitMask)> {
    let json: SubgroupJson = read_json(path)?;
    let (subgroup, snapped) = Subgroup::from_json(&json, &study.binarized.schema)?;
    if snapped {
        tracing::warn!(path = %path.display(), "numeric bounds snapped outward to atom edges");
    }
    let mask = study.cover(&subgroup.genome)?;
    Ok((subgroup, mask))
}

fn match_cmd(path: &Path, config: Option<&Path>, subgroup: &Path, params: &MatchParams, out: &Path) -> Result<()> {
    let (study, _) = load(path, config)?;
    let (_, mask) = subgroup_mask(&study, subgroup)?;
    let report = match_report(&mask, &study.dataset, study.scores(), params)?;
    write_atomic(out, &serde_json::to_vec_pretty(&report)?)?;
    summary(json!({
        "command": "match",
        "out": out,
        "n_treated": report.n_treated,
        "n_control": report.n_control,
        "n_pairs": report.n_pairs,
        "mean_ite": report.mean_ite,
        "ci95": report.ci95,
    }));
    Ok(())
}

fn project(
    path: &Path,
    config: Option<&Path>,
    subgroups: &[PathBuf],
    cap: usize,
    out: &Path,
    seed: Option<u64>,
) -> Result<()> {
    let (study, _) = load(path, config)?;
    let mut memberships = Vec::new();
    for (k, p) in subgroups.iter().enumerate() {
        let (sg, mask) = subgroup_mask(&study, p)?;
        let id = if sg.id.is_empty() { format!("s{}", k + 1) } else { sg.id };
        memberships.push((id, mask));
    }
    let params = NmdsParams {
        seed: seed.unwrap_or(NmdsParams::default().seed),
        ..NmdsParams::default()
    };
    let report = project_dataset(&study.dataset, &memberships, &params, cap)?;
    write_atomic(out, &serde_json::to_vec_pretty(&report)?)?;
    summary(json!({
        "command": "project",
        "out": out,
        "points": report.points.len(),
        "n_total": report.n_total,
        "stress": report.stress,
        "iterations": report.iterations,
    }));
    Ok(())
}

fn serve(addr: SocketAddr, snapshot_dir: Option<PathBuf>) -> Result<()> {
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(cprism_server::serve(cprism_server::ServerConfig { addr, snapshot_dir }))?;
    Ok(())
}
