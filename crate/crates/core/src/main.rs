use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use obsframe::estimation::estimation_report;
use obsframe::export::CsvTable;
use obsframe::frame::{build_frame, ObservabilityFrame, DEFAULT_FRAME_TOL};
use obsframe::harness::{self, ExperimentConfig, NetworkSpec, StrategySpec};
use obsframe::limits::limit_report;
use obsframe::netmodel::{generate_geometric_network, LtiNetwork};
use obsframe::sampling::SamplingStrategy;
use obsframe::sparsify::{default_draw_count, greedy_sparsify, random_partition, randomized_sparsify, Measure};
use obsframe::{Error, Result};

#[derive(Parser)]
#[command(name = "obsframe", version, about = "Observability frames for LTI networks")]
struct Cli {
    /// Master RNG seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    output: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Random geometric network; writes network.json.
    GenerateNetwork {
        #[arg(long, default_value_t = 20)]
        n: usize,
        #[arg(long, default_value_t = 1.0)]
        a: f64,
        #[arg(long, default_value_t = 0.5)]
        b: f64,
        #[arg(long, default_value_t = 0.3)]
        d: f64,
    },
    /// Builds the frame of a strategy; writes strategy and frame.csv.
    BuildFrame(Inputs),
    /// Estimation measures of a strategy's frame.
    Measure {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long, default_value_t = 0.1)]
        sigma: f64,
    },
    #[command(subcommand)]
    Sparsify(SparsifyCommand),
    /// Sample-count, Gramian and tradeoff limits.
    Limits {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long, default_value_t = 0.1)]
        sigma: f64,
        /// Lattice step for the Gramian limit.
        #[arg(long)]
        delta: Option<f64>,
    },
    /// Runs the experiment described by --config.
    Experiment,
}

#[derive(Subcommand)]
enum SparsifyCommand {
    /// Leverage-score sampling with replacement.
    Random {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long, default_value_t = 0.5)]
        epsilon: f64,
        /// Number of draws; ceil(4 n ln n / eps^2) by default.
        #[arg(long)]
        q: Option<usize>,
    },
    /// Random halving of the frame.
    Partition {
        #[command(flatten)]
        inputs: Inputs,
    },
    /// Greedy elimination.
    Greedy {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long, value_enum, default_value_t = MeasureArg::D)]
        measure: MeasureArg,
        #[arg(long, default_value_t = 0.1)]
        sigma: f64,
        #[arg(long, default_value_t = 1.0)]
        max_rel_loss: f64,
        #[arg(long, default_value_t = 0.1)]
        keep_ratio: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MeasureArg {
    D,
    E,
}

impl From<MeasureArg> for Measure {
    fn from(m: MeasureArg) -> Self {
        match m {
            MeasureArg::D => Measure::D,
            MeasureArg::E => Measure::E,
        }
    }
}

/// Network and strategy sources shared by the frame commands.
#[derive(Args)]
struct Inputs {
    /// Network JSON; a default geometric network from --seed if absent.
    #[arg(long)]
    network: Option<PathBuf>,
    /// Strategy CSV or JSON; random times otherwise.
    #[arg(long)]
    strategy: Option<PathBuf>,
    /// Samples per location for a random strategy.
    #[arg(long, default_value_t = 24)]
    samples: usize,
    /// Horizon for a random strategy.
    #[arg(long, default_value_t = 0.12)]
    tau: f64,
}

impl Inputs {
    fn load(&self, seed: u64) -> Result<(LtiNetwork, SamplingStrategy)> {
        let net_spec = match &self.network {
            Some(path) => NetworkSpec::File { path: path.clone() },
            None => NetworkSpec::default(),
        };
        let strategy_spec = match &self.strategy {
            Some(path) => StrategySpec::File { path: path.clone() },
            None => StrategySpec::Random { locations: None, samples: self.samples, tau: self.tau, seed: None },
        };
        let network = harness::load_network(&net_spec, harness::derive_seed(seed, 0))?;
        let strategy = harness::build_strategy(&network, &strategy_spec, harness::derive_seed(seed, 1))?;
        Ok((network, strategy))
    }
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), contents)?;
    println!("wrote {}", dir.join(name).display());
    Ok(())
}

fn write_strategy(cli: &Cli, stem: &str, strategy: &SamplingStrategy) -> Result<()> {
    match cli.format {
        Format::Csv => write(&cli.output, &format!("{stem}.csv"), &strategy.to_csv()),
        Format::Json => write(&cli.output, &format!("{stem}.json"), &strategy.to_json()?),
    }
}

/// Scalar report as `key,value` CSV or pretty JSON.
fn write_report<T: Serialize>(cli: &Cli, stem: &str, report: &T) -> Result<()> {
    let value = serde_json::to_value(report)?;
    match cli.format {
        Format::Json => write(&cli.output, &format!("{stem}.json"), &(serde_json::to_string_pretty(&value)? + "\n")),
        Format::Csv => {
            let mut table = CsvTable::new(["key", "value"]);
            if let serde_json::Value::Object(map) = &value {
                for (k, v) in map {
                    let text = match v {
                        serde_json::Value::String(s) => s.clone(),
                        other => other.to_string(),
                    };
                    table.push_row(&[k.as_str().into(), text.as_str().into()]);
                }
            }
            write(&cli.output, &format!("{stem}.csv"), table.as_str())
        }
    }
}

fn require_frame(frame: &ObservabilityFrame) -> Result<()> {
    let check = frame.is_frame(DEFAULT_FRAME_TOL);
    if check.is_frame {
        Ok(())
    } else {
        Err(Error::NotAFrame { lambda_min: check.alpha, lambda_max: check.beta })
    }
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenerateNetwork { n, a, b, d } => {
            let net = generate_geometric_network(*n, *a, *b, *d, cli.seed)?;
            write(&cli.output, "network.json", &net.to_json()?)
        }
        Command::BuildFrame(inputs) => {
            let (net, strategy) = inputs.load(cli.seed)?;
            let frame = build_frame(&net, &strategy)?;
            write_strategy(cli, "strategy", &strategy)?;
            write(&cli.output, "frame.csv", &frame.to_csv())?;
            let check = frame.is_frame(DEFAULT_FRAME_TOL);
            println!("components {}, is_frame {}", frame.len(), check.is_frame);
            Ok(())
        }
        Command::Measure { inputs, sigma } => {
            let (net, strategy) = inputs.load(cli.seed)?;
            let frame = build_frame(&net, &strategy)?;
            let report = estimation_report(&frame, *sigma)?;
            write_report(cli, "measures", &json!({ "rho_d": report.rho_d, "rho_e": report.rho_e, "sigma": sigma, "components": frame.len() }))
        }
        Command::Sparsify(cmd) => sparsify(cli, cmd),
        Command::Limits { inputs, sigma, delta } => {
            let (net, strategy) = inputs.load(cli.seed)?;
            write_report(cli, "limits", &limit_report(&net, &strategy, *sigma, *delta)?)
        }
        Command::Experiment => {
            let path = cli
                .config
                .as_ref()
                .ok_or_else(|| Error::Parameter("experiment needs --config".into()))?;
            let config = ExperimentConfig::from_json(&fs::read_to_string(path)?)?;
            let out = harness::run_experiment(&config, &cli.output)?;
            for f in out.files {
                println!("wrote {}", f.display());
            }
            Ok(())
        }
    }
}

fn sparsify(cli: &Cli, cmd: &SparsifyCommand) -> Result<()> {
    match cmd {
        SparsifyCommand::Random { inputs, epsilon, q } => {
            let (net, strategy) = inputs.load(cli.seed)?;
            let frame = build_frame(&net, &strategy)?;
            require_frame(&frame)?;
            let q = q.unwrap_or_else(|| default_draw_count(net.n(), *epsilon));
            let run = randomized_sparsify(&frame, q, *epsilon, cli.seed)?;
            write_strategy(cli, "sparsified_strategy", &run.result.kept_strategy()?)?;
            write_report(cli, "sparsify", &json!({
                "method": "random", "seed": cli.seed, "q": q, "epsilon": epsilon, "w_max": run.w_max,
                "result": run.result.summary(),
            }))
        }
        SparsifyCommand::Partition { inputs } => {
            let (net, strategy) = inputs.load(cli.seed)?;
            let frame = build_frame(&net, &strategy)?;
            require_frame(&frame)?;
            let out = random_partition(&frame, cli.seed)?;
            write_strategy(cli, "partition_1", &out.first.kept_strategy()?)?;
            write_strategy(cli, "partition_2", &out.second.kept_strategy()?)?;
            write_report(cli, "sparsify", &json!({
                "method": "partition", "seed": cli.seed, "r_star": out.r_star, "kappa": out.kappa,
                "bound_applicable": out.bound_applicable(),
                "first": out.first.summary(), "second": out.second.summary(),
            }))
        }
        SparsifyCommand::Greedy { inputs, measure, sigma, max_rel_loss, keep_ratio } => {
            let (net, strategy) = inputs.load(cli.seed)?;
            let frame = build_frame(&net, &strategy)?;
            require_frame(&frame)?;
            let out = greedy_sparsify(&frame, (*measure).into(), *sigma, *max_rel_loss, *keep_ratio)?;
            write_strategy(cli, "sparsified_strategy", &out.result.kept_strategy()?)?;
            write(&cli.output, "greedy_trace.csv", &out.trace_csv())?;
            write_report(cli, "sparsify", &json!({
                "method": "greedy", "measure": out.measure, "status": out.status, "steps": out.trace.len(),
                "result": out.result.summary(),
            }))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_infeasible() { 2 } else { 1 })
        }
    }
}
