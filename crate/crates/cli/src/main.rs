use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hetplan::commands::{self, Inputs};
use hetplan::formats::{to_json, write_text};
use hetplan::{fixtures, CliError, Result};
use hetplan_core::cost::StrategyKind;

#[derive(Parser)]
#[command(
    name = "hetplan",
    version,
    about = "Training-plan search and pipeline simulation for heterogeneous GPU clusters"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StrategyArg {
    Zorse,
    #[value(name = "pp-zero2")]
    PpZero2,
    #[value(name = "pp-zero3")]
    PpZero3,
    All,
}

impl StrategyArg {
    fn kinds(self) -> Vec<StrategyKind> {
        match self {
            StrategyArg::Zorse => vec![StrategyKind::ZorseInterleaved],
            StrategyArg::PpZero2 => vec![StrategyKind::PpZero2],
            StrategyArg::PpZero3 => vec![StrategyKind::PpZero3],
            StrategyArg::All => StrategyKind::ALL.to_vec(),
        }
    }

    fn single(self) -> Result<StrategyKind> {
        match self.kinds().as_slice() {
            [k] => Ok(*k),
            _ => Err(CliError::invalid("planning needs a single strategy, not `all`")),
        }
    }
}

#[derive(Args)]
struct InputArgs {
    /// Cluster profile (JSON).
    #[arg(long)]
    cluster: PathBuf,
    /// Model and workload (JSON).
    #[arg(long)]
    model: PathBuf,
    /// Tokens per iteration; overrides the model file's global batch.
    #[arg(long)]
    batch_tokens: Option<u64>,
    /// Fraction of device memory a plan may use.
    #[arg(long)]
    headroom: Option<f64>,
    /// Planner tunables (JSON).
    #[arg(long)]
    comm_config: Option<PathBuf>,
}

impl From<InputArgs> for Inputs {
    fn from(a: InputArgs) -> Self {
        Inputs {
            cluster: a.cluster,
            model: a.model,
            batch_tokens: a.batch_tokens,
            headroom: a.headroom,
            comm_config: a.comm_config,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Split the cluster into k groups by bandwidth.
    Partition {
        #[arg(long)]
        cluster: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Search for the fastest plan that fits in memory.
    Plan {
        #[command(flatten)]
        inputs: InputArgs,
        #[arg(long, value_enum, default_value = "zorse")]
        strategy: StrategyArg,
        /// Plan file to write.
        #[arg(long)]
        out: PathBuf,
        /// Run report to write (JSON).
        #[arg(long)]
        report: Option<PathBuf>,
        /// Include wall-clock phase times in the report.
        #[arg(long)]
        timing: bool,
    },
    /// Simulate a plan file.
    Simulate {
        #[command(flatten)]
        inputs: InputArgs,
        #[arg(long)]
        plan: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        strategy: StrategyArg,
        /// Event timeline (CSV); with several strategies the strategy name
        /// is inserted before the extension.
        #[arg(long)]
        gantt: Option<PathBuf>,
        /// Memory trace (CSV), named like `--gantt`.
        #[arg(long)]
        mem_trace: Option<PathBuf>,
        /// Metrics text to write.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Plan and compare strategies, writing the run report.
    Report {
        #[command(flatten)]
        inputs: InputArgs,
        #[arg(long, value_enum, default_value = "zorse")]
        strategy: StrategyArg,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        timing: bool,
    },
    /// Write synthetic cluster.json and model.json.
    Synth {
        /// Named scenario; omit for a seeded random cluster.
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        nodes: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn per_strategy(path: &Path, strategy: StrategyKind, several: bool) -> PathBuf {
    if !several {
        return path.to_path_buf();
    }
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}.{}.{}", strategy.name(), ext.to_string_lossy()),
        None => format!("{stem}.{}", strategy.name()),
    };
    path.with_file_name(name)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Partition { cluster, k, out } => {
            let text = commands::partition(&commands::load_profile(&cluster)?, k)?;
            print!("{text}");
            if let Some(out) = out {
                write_text(&out, &text)?;
            }
        }
        Command::Plan { inputs, strategy, out, report, timing } => {
            let planned = commands::plan(&inputs.into(), strategy.single()?, timing)?;
            print!("{}", planned.summary());
            write_text(&out, &planned.plan_json())?;
            if let Some(r) = report {
                write_text(&r, &planned.report_json())?;
            }
        }
        Command::Simulate { inputs, plan, strategy, gantt, mem_trace, out } => {
            let ctx = commands::load_context(&inputs.into())?;
            let plan = commands::load_plan(&ctx, &plan)?;
            let kinds = strategy.kinds();
            let several = kinds.len() > 1;
            let runs = commands::simulate_plan(&ctx, &plan, &kinds)?;
            let mut text: String = runs.iter().map(|r| r.text.as_str()).collect();
            if several {
                text.push_str(&commands::comparison_table(&commands::compare(&ctx, &plan)?));
            }
            print!("{text}");
            for r in &runs {
                if let Some(p) = &gantt {
                    write_text(&per_strategy(p, r.strategy, several), &r.gantt)?;
                }
                if let Some(p) = &mem_trace {
                    write_text(&per_strategy(p, r.strategy, several), &r.memory)?;
                }
            }
            if let Some(out) = out {
                write_text(&out, &text)?;
            }
        }
        Command::Report { inputs, strategy, out, timing } => {
            let planned = commands::plan(&inputs.into(), strategy.single()?, timing)?;
            print!("{}", planned.summary());
            if let Some(out) = out {
                write_text(&out, &planned.report_json())?;
            }
        }
        Command::Synth { scenario, seed, nodes, out_dir } => {
            let (cluster, model) = match scenario {
                Some(name) => fixtures::scenario(&name)?,
                None => fixtures::random(seed, nodes)?,
            };
            std::fs::create_dir_all(&out_dir).map_err(|e| CliError::io(&out_dir, e))?;
            write_text(&out_dir.join("cluster.json"), &to_json(&cluster))?;
            write_text(&out_dir.join("model.json"), &to_json(&model))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
