use std::path::PathBuf;
use std::process::ExitCode;

use ccm_cli::artifacts::write;
use ccm_cli::commands::{cluster_summary, CENSUS_FILE};
use ccm_cli::config::parse_override;
use ccm_cli::{cmd_eval, cmd_generate, cmd_run, CliError, RunConfig};
use clap::{Args, Parser, Subcommand};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "ccm", version, about = "Consistent cross-view matching over a camera network")]
struct Cli {
    /// More log output on stderr (-v info, -vv debug); RUST_LOG overrides
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic feature file and its per-camera census
    Generate(RunArgs),
    /// Run the pipeline and write a run directory
    Run(RunArgs),
    /// Recompute the report of a finished run from its artifacts
    Eval(EvalArgs),
    /// Stop after intra-camera clustering (same as `run --stage cluster`)
    Cluster(RunArgs),
    /// Stop after the first matching and consistency pass (`run --stage match`)
    Match(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Config file with `key = value` lines
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override one config key; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Feature file to use as input
    #[arg(long, value_name = "PATH")]
    features: Option<PathBuf>,

    /// Reliability threshold: keep matches with RLT > theta
    #[arg(long, value_name = "N")]
    theta: Option<u32>,

    /// Maximum number of outer iterations
    #[arg(long, value_name = "N")]
    max_iter: Option<usize>,

    #[arg(long, value_name = "N")]
    seed: Option<u64>,

    /// Worker threads for per-camera and per-pair work
    #[arg(long, value_name = "N")]
    jobs: Option<usize>,

    /// Last stage to run: cluster, match or full
    #[arg(long, value_name = "NAME")]
    stage: Option<String>,

    /// Output directory
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Run directory written by `ccm run`
    run_dir: PathBuf,

    /// Feature file (default: the run's own features.ccmf)
    #[arg(long, value_name = "PATH")]
    features: Option<PathBuf>,

    /// Score retrieval with the identity metric only
    #[arg(long)]
    baseline: bool,

    /// Where to write the report (default: eval.json or eval_baseline.json in the run directory)
    #[arg(long, value_name = "PATH")]
    report: Option<PathBuf>,
}

impl RunArgs {
    fn resolve(&self, stage: Option<&str>, implied_synthetic: bool) -> Result<RunConfig, CliError> {
        let mut overrides = self
            .set
            .iter()
            .map(|s| parse_override(s))
            .collect::<Result<Vec<_>, _>>()?;
        let mut flag = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                overrides.push((k.to_string(), v));
            }
        };
        flag("features", self.features.as_ref().map(|p| p.display().to_string()));
        flag("theta", self.theta.map(|v| v.to_string()));
        flag("max_iter", self.max_iter.map(|v| v.to_string()));
        flag("seed", self.seed.map(|v| v.to_string()));
        flag("jobs", self.jobs.map(|v| v.to_string()));
        flag("stage", self.stage.clone().or(stage.map(str::to_string)));
        flag("out", self.out.as_ref().map(|p| p.display().to_string()));
        RunConfig::resolve(self.config.as_deref(), &overrides, implied_synthetic)
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(level));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Generate(args) => {
            let cfg = args.resolve(None, true)?;
            let census = cmd_generate(&cfg)?;
            let out = cfg.out_dir()?;
            println!("{:>8} {:>10} {:>10}", "camera", "identities", "tracklets");
            for c in &census {
                println!("{:>8} {:>10} {:>10}", c.camera_id, c.identities, c.tracklets);
            }
            println!("wrote {} and {}", out.join("features.ccmf").display(), out.join(CENSUS_FILE).display());
        }
        Command::Run(args) => run(args, None)?,
        Command::Cluster(args) => run(args, Some("cluster"))?,
        Command::Match(args) => run(args, Some("match"))?,
        Command::Eval(args) => {
            let report = cmd_eval(&args.run_dir, args.features.as_deref(), args.baseline)?;
            let json = report.to_json();
            let name = if args.baseline { "eval_baseline.json" } else { "eval.json" };
            let path = args.report.unwrap_or_else(|| args.run_dir.join(name));
            write(&path, &json)?;
            print!("{json}");
        }
    }
    Ok(())
}

fn run(args: RunArgs, stage: Option<&str>) -> Result<(), CliError> {
    let cfg = args.resolve(stage, false)?;
    let outcome = cmd_run(&cfg)?;
    let dir = outcome.dir.display();
    match &outcome.report {
        None => {
            for (cam, n) in cluster_summary(&outcome.dir)? {
                println!("camera {cam}: {n} clusters");
            }
            println!("wrote {dir}/clusters.csv");
        }
        Some(r) => {
            println!(
                "iterations {}  direct matches {}  consistent matches {}",
                r.iterations, r.counts.direct_matches, r.counts.consistent_matches
            );
            if let Some(e) = &r.evaluation {
                println!(
                    "precision {:.4}  recall {:.4}  f1 {:.4}  (micro)",
                    e.precision.micro, e.recall.micro, e.f1.micro
                );
                println!(
                    "rank-1 {:.4}  mAP {:.4}  (baseline rank-1 {:.4}  mAP {:.4})",
                    e.retrieval.rank1(),
                    e.retrieval.map,
                    e.baseline.rank1(),
                    e.baseline.map
                );
            }
            println!("wrote {dir}/report.json");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    init_logging(cli.verbose);
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
