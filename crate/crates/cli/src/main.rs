use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use matchforge::experiment::{run_suite, SuiteConfig};
use matchforge::metrics::SmdAggregate;
use matchforge::pipeline::{run_on_dataset, CandidateSpec, RunConfig};
use matchforge::report::{write_confounder_tables, write_correlation_table, write_run_outputs};
use matchforge::synth::{export, generate, SynthConfig};
use matchforge::tabular::{load_csv, Schema};

#[derive(Parser)]
#[command(
    name = "matchforge",
    version,
    about = "Automated propensity score matching with A2A validation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate every candidate pipeline on one task and apply all strategies.
    Run(RunArgs),
    /// Synthetic-suite experiments.
    Experiment(ExperimentArgs),
    /// Write a synthetic task as data.csv + schema.json.
    Generate(GenerateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Aggregate {
    Mean,
    Max,
}

impl From<Aggregate> for SmdAggregate {
    fn from(a: Aggregate) -> Self {
        match a {
            Aggregate::Mean => SmdAggregate::Mean,
            Aggregate::Max => SmdAggregate::Max,
        }
    }
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long, default_value_t = 100)]
    bootstraps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "mean")]
    smd_agg: Aggregate,
    #[arg(long, default_value_t = 0.10)]
    smd_threshold: f64,
    /// DBSCAN radius in the normalized (SMD, A2A) plane.
    #[arg(long, default_value_t = 0.15)]
    eps: f64,
    #[arg(long, default_value_t = 2)]
    min_pts: usize,
    /// Comma-separated MODEL-LINK-MATCHER ids; defaults to the full grid.
    #[arg(long, value_delimiter = ',')]
    candidates: Vec<CandidateSpec>,
}

impl PipelineArgs {
    fn config(&self) -> RunConfig {
        let mut cfg = RunConfig {
            n_bootstraps: self.bootstraps,
            seed: self.seed,
            smd_aggregate: self.smd_agg.into(),
            smd_threshold: self.smd_threshold,
            ..Default::default()
        };
        cfg.strategy.eps = self.eps;
        cfg.strategy.min_pts = self.min_pts;
        if !self.candidates.is_empty() {
            cfg.candidates = self.candidates.clone();
        }
        cfg
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, requires = "schema", conflicts_with = "synth")]
    data: Option<PathBuf>,
    #[arg(long, requires = "data")]
    schema: Option<PathBuf>,
    /// Generate the task instead of reading it, e.g. `k=5`.
    #[arg(long, value_name = "k=K")]
    synth: Option<String>,
    /// Sample count of a generated task.
    #[arg(long, default_value_t = 3000)]
    samples: usize,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExperimentKind {
    Confounders,
    SmdCorrelation,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(value_enum)]
    kind: ExperimentKind,
    /// 600 samples and 20 bootstraps per setting.
    #[arg(long)]
    quick: bool,
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    /// Comma-separated confounder counts; defaults to 0..=10.
    #[arg(long, value_delimiter = ',')]
    k: Vec<usize>,
    #[arg(long)]
    bootstraps: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Also write the full suite result as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 0)]
    k: usize,
    #[arg(long, default_value_t = 3000)]
    samples: usize,
    #[arg(long, default_value_t = 10)]
    features: usize,
    #[arg(long, default_value_t = 1.0)]
    effect_scale: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn parse_synth(spec: &str) -> Result<usize> {
    let Some(k) = spec.strip_prefix("k=") else {
        bail!("--synth expects k=K, got `{spec}`");
    };
    k.parse().with_context(|| format!("bad confounder count `{k}`"))
}

fn run(args: RunArgs) -> Result<u8> {
    let cfg = args.pipeline.config();
    let report = match (&args.data, &args.schema, &args.synth) {
        (Some(data), Some(schema), None) => {
            let schema = Schema::from_json_file(schema).with_context(|| format!("reading {}", schema.display()))?;
            let d = load_csv(data, &schema).with_context(|| format!("reading {}", data.display()))?;
            run_on_dataset(&d, &cfg, &data.display().to_string())?
        }
        (None, None, Some(spec)) => {
            let k = parse_synth(spec)?;
            let task = generate(&SynthConfig {
                n_samples: args.samples,
                n_confounders: k,
                seed: cfg.seed,
                ..Default::default()
            })?;
            let mut r = run_on_dataset(&task.dataset, &cfg, &format!("synth k={k}"))?;
            r.synthetic = Some(task.summary());
            r
        }
        _ => bail!("give either --data and --schema, or --synth k=K"),
    };
    for path in write_run_outputs(&report, &args.out)? {
        println!("wrote {}", path.display());
    }
    for s in &report.strategies {
        println!(
            "{:<14} range {:>8.4}  {}",
            s.strategy.as_str(),
            s.ate_range,
            if s.selected.is_empty() {
                "-".to_string()
            } else {
                s.selected.join(",")
            }
        );
    }
    let code = report.exit_code();
    if code != 0 {
        eprintln!(
            "{} of {} candidates failed",
            report.candidates.len() - report.n_ok(),
            report.candidates.len()
        );
    }
    Ok(code as u8)
}

fn experiment(args: ExperimentArgs) -> Result<u8> {
    let mut suite = if args.quick {
        SuiteConfig::quick()
    } else {
        SuiteConfig::full()
    };
    suite.seeds = (0..args.seeds).collect();
    if !args.k.is_empty() {
        suite.k_values = args.k;
    }
    if let Some(b) = args.bootstraps {
        suite.run.n_bootstraps = b;
    }
    if let Some(n) = args.samples {
        suite.base.n_samples = n;
    }
    let result = run_suite(&suite)?;
    let files = match args.kind {
        ExperimentKind::Confounders => write_confounder_tables(&result, &args.out)?,
        ExperimentKind::SmdCorrelation => write_correlation_table(&result, &args.out)?,
    };
    for path in files {
        println!("wrote {}", path.display());
    }
    if args.json {
        let path = args.out.join("suite.json");
        std::fs::write(&path, matchforge::report::to_json(&result)?)?;
        println!("wrote {}", path.display());
    }
    Ok(0)
}

fn generate_cmd(args: GenerateArgs) -> Result<u8> {
    let task = generate(&SynthConfig {
        n_samples: args.samples,
        n_features: args.features,
        n_confounders: args.k,
        effect_scale: args.effect_scale,
        seed: args.seed,
        ..Default::default()
    })?;
    export(&task, &args.out)?;
    std::fs::write(
        args.out.join("truth.json"),
        matchforge::report::to_json(&task.summary())?,
    )?;
    println!("true ATE {:.6}; wrote {}", task.true_ate, args.out.display());
    Ok(0)
}

fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("MATCHFORGE_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .with_context(|| format!("MATCHFORGE_THREADS=`{v}` is not a count"))?;
    if n == 0 {
        bail!("MATCHFORGE_THREADS must be at least 1");
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = init_threads().and_then(|()| match cli.command {
        Command::Run(a) => run(a),
        Command::Experiment(a) => experiment(a),
        Command::Generate(a) => generate_cmd(a),
    });
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
