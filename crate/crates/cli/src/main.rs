use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use doseconf::bench::{
    emit_report, parse_methods, read_report, run_experiment, seed_dataset, CoverageReport, EvalMode, ExperimentConfig,
    PropensityMode, ReportFormat,
};

#[derive(Parser)]
#[command(name = "bench", about = "Coverage benchmarks for conformal dose-response intervals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a multi-seed coverage experiment.
    Run(RunArgs),
    /// Write the generated and split datasets of each seed.
    Generate(GenerateArgs),
    /// Re-aggregate a written report.
    Report(ReportArgs),
}

#[derive(Args)]
struct ScenarioArgs {
    #[arg(long)]
    setup: Option<u8>,
    #[arg(long)]
    scenario: Option<u8>,
    /// Number of seeds.
    #[arg(long)]
    seeds: Option<usize>,
    /// Samples per seed.
    #[arg(long)]
    n: Option<usize>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// JSON experiment config; flags given on the command line override it.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Comma-separated significance levels.
    #[arg(long, value_delimiter = ',')]
    alphas: Option<Vec<f64>>,
    /// Number of treatment grid points.
    #[arg(long)]
    grid: Option<usize>,
    /// `all` or a comma-separated list of methods.
    #[arg(long)]
    methods: Option<String>,
    /// oracle, estimated or both.
    #[arg(long)]
    propensity: Option<PropensityMode>,
    /// grid or observed.
    #[arg(long)]
    eval: Option<EvalMode>,
    /// Boosting rounds of the outcome and treatment learners.
    #[arg(long)]
    rounds: Option<usize>,
    /// Use 50 seeds of 5000 samples unless overridden.
    #[arg(long)]
    paper_scale: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory written by `bench run`.
    #[arg(long)]
    dir: PathBuf,
    /// Also write the summary as JSON instead of CSV.
    #[arg(long)]
    json: bool,
}

fn base_config(args: &ScenarioArgs, paper_scale: bool) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::from_json_file(path).with_context(|| format!("reading {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if paper_scale {
        cfg = cfg.paper_scale();
    }
    if let Some(v) = args.setup {
        cfg.setup = v;
    }
    if let Some(v) = args.scenario {
        cfg.scenario = v;
    }
    if let Some(v) = args.seeds {
        cfg.n_seeds = v;
    }
    if let Some(v) = args.n {
        cfg.n_samples = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    Ok(cfg)
}

fn print_summary(report: &CoverageReport) {
    println!(
        "{:<24} {:>6} {:>6} {:>10} {:>12} {:>10} {:>8}",
        "method", "alpha", "seeds", "coverage", "cov_var", "width", "inf"
    );
    for s in report.summarize() {
        println!(
            "{:<24} {:>6} {:>6} {:>10.4} {:>12.3e} {:>10.3} {:>8.4}",
            s.method.name(),
            s.alpha,
            s.n_seeds,
            s.mean_coverage,
            s.coverage_variance,
            s.mean_width,
            s.inf_fraction
        );
    }
    for f in &report.failed_seeds {
        println!("failed seed {}: {}", f.seed, f.error);
    }
}

fn run(args: RunArgs) -> Result<()> {
    let mut cfg = base_config(&args.scenario, args.paper_scale)?;
    if let Some(v) = args.alphas {
        cfg.alphas = v;
    }
    if let Some(v) = args.grid {
        cfg.grid_k = v;
    }
    if let Some(v) = args.methods {
        cfg.methods = parse_methods(&v)?;
    }
    if let Some(v) = args.propensity {
        cfg.propensity = v;
    }
    if let Some(v) = args.eval {
        cfg.eval = v;
    }
    if let Some(v) = args.rounds {
        cfg.learner.n_rounds = v;
        cfg.propensity_model.learner.n_rounds = v;
    }
    if let Some(v) = args.out {
        cfg.output = Some(v);
    }
    let report = run_experiment(&cfg)?;
    print_summary(&report);
    if let Some(dir) = &cfg.output {
        emit_report(&report, dir, &[ReportFormat::Csv, ReportFormat::Json])?;
        std::fs::write(dir.join("config.json"), cfg.to_json()?)?;
        println!("report written to {}", dir.display());
    }
    Ok(())
}

fn generate(args: GenerateArgs) -> Result<()> {
    let cfg = base_config(&args.scenario, false)?;
    cfg.scenario_spec(0).scenario()?;
    std::fs::create_dir_all(&args.out)?;
    for s in 0..cfg.n_seeds {
        let data = seed_dataset(&cfg, s)?;
        let csv = args.out.join(format!("data_seed{s}.csv"));
        data.save(&csv, Some(&args.out.join(format!("split_seed{s}.json"))))?;
    }
    println!("{} datasets written to {}", cfg.n_seeds, args.out.display());
    Ok(())
}

fn report(args: ReportArgs) -> Result<()> {
    if !args.dir.is_dir() {
        bail!("{} is not a directory", args.dir.display());
    }
    let report = read_report(&args.dir)?;
    print_summary(&report);
    write_summary(&report, &args.dir, args.json)
}

fn write_summary(report: &CoverageReport, dir: &Path, json: bool) -> Result<()> {
    let summaries = report.summarize();
    if json {
        std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summaries)?)?;
    } else {
        let mut text = String::from("method,alpha,n_seeds,mean_coverage,coverage_variance,mean_width,inf_fraction\n");
        for s in &summaries {
            text.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                s.method, s.alpha, s.n_seeds, s.mean_coverage, s.coverage_variance, s.mean_width, s.inf_fraction
            ));
        }
        std::fs::write(dir.join("summary.csv"), text)?;
    }
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run(args) => run(args),
        Command::Generate(args) => generate(args),
        Command::Report(args) => report(args),
    }
}
