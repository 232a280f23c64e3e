//! `resnc`: run Monte Carlo experiments on a scenario, sweep resilience
//! regions, compare control variants, dump flow-matching LPs and check
//! configs.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use resnc_core::config::{builtin_abilene, Overrides, ScenarioConfig};
use resnc_core::experiment::{self, Execution, RunOptions};
use resnc_core::metrics::RegionQuery;
use resnc_core::policy::Variant;
use resnc_core::Error;

const EXIT_CONFIG: u8 = 3;
const EXIT_SIMULATION: u8 = 4;
const EXIT_IO: u8 = 5;

#[derive(Parser, Debug)]
#[command(name = "resnc", version, about = "Reliable and resilient service-chain delivery simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the Monte Carlo trials and write traces, ensembles and plots.
    Run {
        #[command(flatten)]
        common: Common,
        /// Also record per-resource flows and draw flow-matching overlays.
        #[arg(long)]
        verbose: bool,
    },
    /// Evaluate resilience region membership over a threshold grid.
    Region {
        #[command(flatten)]
        common: Common,
        /// Grid axis as `key=v1,v2,...`; keys: lambda_o, gamma_long,
        /// gamma_short, t_recover, p_resil. Unswept axes use the scenario.
        #[arg(long = "sweep", value_name = "KEY=VALUES")]
        sweeps: Vec<String>,
    },
    /// Run several variants on the same seeds and overlay their ensembles.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "resrcnc,rcnc")]
        variants: Vec<Variant>,
    },
    /// Print the flow-matching LP of one trial at a given slot.
    DumpLp {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value_t = 0)]
        slot: usize,
        /// Trial seed (default: the scenario's master seed).
        #[arg(long)]
        seed: Option<u64>,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Load and validate a scenario, printing its summary and hash.
    Validate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Print the resolved config as TOML.
        #[arg(long)]
        print: bool,
    },
}

#[derive(Args, Debug)]
struct ScenarioArgs {
    /// `abilene` for the bundled scenario, otherwise a TOML file.
    #[arg(long, default_value = "abilene")]
    scenario: String,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    outage_at: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    lambda_scale: Option<f64>,
    #[arg(long)]
    variant: Option<Variant>,
}

#[derive(Args, Debug)]
struct Common {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long)]
    trials: Option<usize>,
    /// Master seed; trial i uses seed + i.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: one per core; 1 runs sequentially).
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    no_plots: bool,
}

impl Common {
    fn execution(&self) -> Execution {
        match self.threads {
            Some(1) => Execution::Sequential,
            threads => Execution::Parallel { threads },
        }
    }
}

fn load(args: &ScenarioArgs, trials: Option<usize>, seed: Option<u64>) -> Result<ScenarioConfig, Error> {
    let mut cfg = if args.scenario == "abilene" {
        builtin_abilene()
    } else {
        ScenarioConfig::load(Path::new(&args.scenario))?
    };
    Overrides {
        trials,
        horizon: args.horizon,
        outage_at: args.outage_at,
        lambda_scale: args.lambda_scale,
        seed,
        variant: args.variant,
    }
    .apply(&mut cfg)?;
    Ok(cfg)
}

fn parse_list<T: std::str::FromStr>(key: &str, values: &str) -> Result<Vec<T>, Error> {
    values
        .split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| Error::config(format!("--sweep {key}: cannot parse `{v}`")))
        })
        .collect()
}

fn region_query(cfg: &ScenarioConfig, sweeps: &[String]) -> Result<RegionQuery, Error> {
    let e = &cfg.experiment;
    let mut q = RegionQuery {
        lambda_scales: vec![cfg.outage.as_ref().map_or(1.0, |o| o.lambda_scale)],
        gamma_long: vec![cfg.commodities.first().map_or(0.9, |c| c.gamma_long)],
        gamma_short: vec![e.gamma_short],
        t_recover: vec![e.t_recover],
        p_resil: vec![e.p_resil],
    };
    for s in sweeps {
        let (key, values) = s
            .split_once('=')
            .ok_or_else(|| Error::config(format!("--sweep `{s}`: expected key=v1,v2,...")))?;
        match key.trim() {
            "lambda_o" | "lambda_scale" => q.lambda_scales = parse_list(key, values)?,
            "gamma_long" => q.gamma_long = parse_list(key, values)?,
            "gamma_short" => q.gamma_short = parse_list(key, values)?,
            "t_recover" => q.t_recover = parse_list(key, values)?,
            "p_resil" => q.p_resil = parse_list(key, values)?,
            other => return Err(Error::config(format!("--sweep: unknown axis `{other}`"))),
        }
    }
    q.validate()?;
    Ok(q)
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::UnknownUnit { .. } | Error::WindowOutOfRange { .. } => EXIT_CONFIG,
        Error::Io { .. } => EXIT_IO,
        Error::Trial { source, .. } => exit_code(source),
        _ => EXIT_SIMULATION,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run { common, verbose } => {
            let cfg = load(&common.scenario, common.trials, common.seed)?;
            let opts = RunOptions {
                exec: common.execution(),
                verbose,
                plots: !common.no_plots,
            };
            let m = experiment::run_experiment(&cfg, &common.out, opts)?;
            println!(
                "{} trials of {} slots in {:.1}s -> {}",
                m.trials.len(),
                m.horizon,
                m.wall_time_secs,
                common.out.display()
            );
        }
        Command::Region { common, sweeps } => {
            let cfg = load(&common.scenario, common.trials, common.seed)?;
            let query = region_query(&cfg, &sweeps)?;
            let opts = RunOptions {
                exec: common.execution(),
                verbose: false,
                plots: false,
            };
            let rows = experiment::region_experiment(&cfg, &query, &common.out, opts)?;
            println!("lambda_o  gamma_long  gamma_short  t_recover  p_resil  reliable_pre  reliable_post  resilient");
            for r in &rows {
                let t = r.thresholds;
                println!(
                    "{:<9} {:<11} {:<12} {:<10} {:<8} {:<13} {:<14} {}",
                    r.lambda_scale, t.gamma_long, t.gamma_short, t.t_recover, t.p_resil, r.reliable_pre, r.reliable_post, r.resilient
                );
            }
        }
        Command::Compare { common, variants } => {
            let cfg = load(&common.scenario, common.trials, common.seed)?;
            let opts = RunOptions {
                exec: common.execution(),
                verbose: false,
                plots: !common.no_plots,
            };
            for dir in experiment::compare_experiment(&cfg, &variants, &common.out, opts)? {
                println!("{}", dir.display());
            }
        }
        Command::DumpLp { scenario, slot, seed, out } => {
            let cfg = load(&scenario, None, None)?;
            let text = experiment::dump_lp(&cfg, seed.unwrap_or(cfg.experiment.seed), slot)?;
            match out {
                Some(path) => std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?,
                None => {
                    let mut out = std::io::stdout().lock();
                    if let Err(e) = out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
                        if e.kind() != std::io::ErrorKind::BrokenPipe {
                            return Err(Error::io("<stdout>", e));
                        }
                    }
                }
            }
        }
        Command::Validate { scenario, print } => {
            let cfg = load(&scenario, None, None)?;
            let s = cfg.to_scenario()?;
            println!(
                "{}: {} nodes, {} links, {} commodities, horizon {}, hash {}",
                cfg.name,
                s.network.nodes().len(),
                s.network.links().len(),
                s.commodities.len(),
                cfg.experiment.horizon,
                cfg.hash()
            );
            if print {
                print!("{}", cfg.to_toml());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::debug!("{e:?}");
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
