use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use sgisim::pipeline::{self, Artifact, CommandOutput, RunOptions, TOOL_VERSION};
use sgisim::report::{config_hash, write_json, RunManifest, MANIFEST_NAME};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

#[derive(Parser)]
#[command(name = "sgisim", version, about = "Stern-Gerlach interferometer simulations from JSON configs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Multishot visibility versus splitting time (visibility_vs_T1.csv).
    HalfLoop(RunArgs),
    /// Full-loop mismatch tables and the T2+T3 scan.
    FullLoop(RunArgs),
    /// Recombination visibility laws for Gaussian and Thomas-Fermi packets.
    HdCurves(RunArgs),
    /// Wigner function of a two-packet state on a phase-space grid.
    WignerExport(RunArgs),
    /// Re-run the command recorded in a manifest.
    Replay {
        manifest: PathBuf,
        /// Output directory; defaults to the recorded one.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Clone)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config and scenario seeds.
    #[arg(long)]
    seed: Option<u64>,
    /// Caps worker threads.
    #[arg(long, env = "SGISIM_THREADS")]
    threads: Option<usize>,
    /// Only scenarios with this label or set name.
    #[arg(long)]
    scenario: Option<String>,
}

type Builder = fn(&str, &str, &RunOptions) -> Result<CommandOutput, sgisim::SimError>;

fn builder(name: &str) -> Result<Builder> {
    Ok(match name {
        "half-loop" => pipeline::half_loop,
        "full-loop" => pipeline::full_loop,
        "hd-curves" => pipeline::hd_curves,
        "wigner-export" => pipeline::wigner_export,
        other => bail!("unknown command {other:?}"),
    })
}

fn write_artifact(dir: &Path, name: &str, artifact: &Artifact) -> Result<()> {
    let path = dir.join(name);
    match artifact {
        Artifact::Csv(t) => t.write(&path),
        Artifact::Json(v) => write_json(&path, v),
    }
    .with_context(|| format!("writing {}", path.display()))
}

/// Runs one command and writes its files; returns whether every row was computed.
fn run(name: &str, args: &RunArgs) -> Result<bool> {
    let threads = args.threads.unwrap_or(0);
    if threads > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().context("configuring the thread pool")?;
    }
    let started = Instant::now();
    let bytes = std::fs::read(&args.config).with_context(|| format!("reading {}", args.config.display()))?;
    let text = String::from_utf8(bytes.clone()).with_context(|| format!("{} is not UTF-8", args.config.display()))?;
    let opts = RunOptions { seed: args.seed, scenario: args.scenario.clone(), config_hash: config_hash(&bytes) };
    // Absolute, so a replay works from any directory.
    let config_path = std::fs::canonicalize(&args.config).unwrap_or_else(|_| args.config.clone()).display().to_string();
    let output = builder(name)?(&text, &config_path, &opts)?;

    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut files = Vec::new();
    for (file, artifact) in &output.artifacts {
        write_artifact(&args.out, file, artifact)?;
        files.push(file.clone());
    }
    for f in &output.failures {
        eprintln!("failed: {}: {}", f.label, f.error);
    }
    if name == "hd-curves" {
        println!("TF position-law width: {:.4} z_max", sgisim::hd::tf_position_width_factor());
    }
    let manifest = RunManifest {
        command: name.into(),
        config_path,
        config_hash: opts.config_hash.clone(),
        seed: args.seed,
        scenario_filter: args.scenario.clone(),
        threads: rayon::current_num_threads(),
        out_dir: std::fs::canonicalize(&args.out).unwrap_or_else(|_| args.out.clone()).display().to_string(),
        tool_version: TOOL_VERSION.into(),
        wall_clock_s: started.elapsed().as_secs_f64(),
        files,
        failed: output.failures.iter().map(|f| f.label.clone()).collect(),
    };
    manifest.write(&args.out).with_context(|| format!("writing {}", args.out.join(MANIFEST_NAME).display()))?;
    Ok(output.failures.is_empty())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::HalfLoop(a) => run("half-loop", a),
        Command::FullLoop(a) => run("full-loop", a),
        Command::HdCurves(a) => run("hd-curves", a),
        Command::WignerExport(a) => run("wigner-export", a),
        Command::Replay { manifest, out } => RunManifest::read(manifest)
            .with_context(|| format!("reading {}", manifest.display()))
            .and_then(|m| {
                let args = RunArgs {
                    config: PathBuf::from(&m.config_path),
                    out: out.clone().unwrap_or_else(|| PathBuf::from(&m.out_dir)),
                    seed: m.seed,
                    threads: None,
                    scenario: m.scenario_filter.clone(),
                };
                let bytes = std::fs::read(&args.config).with_context(|| format!("reading {}", args.config.display()))?;
                if config_hash(&bytes) != m.config_hash {
                    bail!("{} changed since the recorded run", args.config.display());
                }
                run(&m.command, &args)
            }),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
