mod commands;
mod config;
mod fail;
mod serve;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{Override, RunConfig};
use fail::Failure;

/// Stateful intent-clustering guardrail: corpus generation, training,
/// calibration, evaluation, attack simulation and serving.
#[derive(Parser, Debug)]
#[command(name = "intentgate", version)]
struct Cli {
    /// TOML configuration file. Also read from INTENTGATE_CONFIG.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run directory for corpus, model and thresholds.
    #[arg(long, global = true)]
    dir: Option<PathBuf>,
    /// Override any configuration key, e.g. `--set train.epochs=4`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the labeled corpus and write one file per split.
    GenData {
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the intent head on the train split.
    Train {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Choose thresholds on the validation stream and freeze them.
    Calibrate {
        #[arg(long)]
        fpr_budget: Option<f64>,
        #[arg(long)]
        k: Option<usize>,
        #[command(flatten)]
        ext: External,
    },
    /// Score the frozen thresholds on the test stream.
    Eval {
        #[command(flatten)]
        ext: External,
    },
    /// Run adaptive attacks against the calibrated engine.
    Attack {
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        max_attempts: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Split whose malicious intents are attacked: train, validation, test or all.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Measure clean FPR after injecting crafted poison requests.
    Pollute {
        /// Comma-separated poison counts.
        #[arg(long, value_delimiter = ',')]
        n_poison: Option<Vec<usize>>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Relative AUC of bounded stores on the slow-loris test stream.
    CapacityStudy {
        /// Comma-separated capacity ratios.
        #[arg(long, value_delimiter = ',')]
        ratios: Option<Vec<f64>>,
    },
    /// Evaluate the geometric bounds.
    Bounds {
        #[arg(long)]
        tau_int: Option<f64>,
        #[arg(long)]
        r_mal: Option<f64>,
        #[arg(long)]
        d_int: Option<u32>,
        #[arg(long)]
        gamma: Option<f64>,
    },
    /// Adjudicate requests over a TCP line protocol.
    Serve {
        #[arg(long)]
        addr: Option<String>,
        /// Exit after the first connection closes.
        #[arg(long)]
        once: bool,
    },
    /// Query latency and sustainable arrival rate over a preloaded store.
    Bench {
        #[arg(long)]
        store_size: Option<usize>,
        #[arg(long)]
        queries: Option<usize>,
        #[arg(long)]
        requests: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Args, Debug)]
struct External {
    /// JSON lines of precomputed `{"semantic": [...], "intent": [...]}`
    /// vectors, one per stream request, used instead of the built-in encoders.
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

fn push<V: Into<toml::Value>>(out: &mut Vec<Override>, key: &str, v: Option<V>) {
    if let Some(v) = v {
        out.push(Override::new(key, v));
    }
}

fn int(v: Option<impl TryInto<i64>>) -> Option<i64> {
    v.and_then(|v| v.try_into().ok())
}

fn flag_overrides(cli: &Cli) -> Result<Vec<Override>, Failure> {
    let mut o: Vec<Override> = cli.set.iter().map(|s| Override::parse(s)).collect::<Result<_, _>>()?;
    if let Some(d) = &cli.dir {
        o.push(Override::new("dir", d.to_string_lossy().into_owned()));
    }
    let list = |v: &Option<Vec<usize>>| v.as_ref().map(|v| v.iter().map(|&n| n as i64).collect::<Vec<_>>());
    match &cli.command {
        Command::GenData { seed } => push(&mut o, "synth.seed", int(*seed)),
        Command::Train { seed, epochs } => {
            push(&mut o, "train.seed", int(*seed));
            push(&mut o, "train.epochs", int(*epochs));
        }
        Command::Calibrate { fpr_budget, k, .. } => {
            push(&mut o, "streams.fpr_budget", *fpr_budget);
            push(&mut o, "engine.k", int(*k));
        }
        Command::Eval { .. } => {}
        Command::Attack { mode, max_attempts, seed, .. } => {
            push(&mut o, "attack.mode", mode.clone());
            push(&mut o, "attack.max_attempts", int(*max_attempts));
            push(&mut o, "attack.seed", int(*seed));
        }
        Command::Pollute { n_poison, seed } => {
            push(&mut o, "pollution.n_poison", list(n_poison));
            push(&mut o, "pollution.seed", int(*seed));
        }
        Command::CapacityStudy { ratios } => push(&mut o, "capacity.ratios", ratios.clone()),
        Command::Bounds { tau_int, r_mal, d_int, gamma } => {
            push(&mut o, "bounds.tau_int", *tau_int);
            push(&mut o, "bounds.r_mal", *r_mal);
            push(&mut o, "bounds.d_int", int(*d_int));
            push(&mut o, "bounds.gamma", *gamma);
        }
        Command::Serve { addr, .. } => push(&mut o, "serve.addr", addr.clone()),
        Command::Bench { store_size, queries, requests, seed } => {
            push(&mut o, "bench.store_size", int(*store_size));
            push(&mut o, "bench.queries", int(*queries));
            push(&mut o, "bench.requests", int(*requests));
            push(&mut o, "bench.seed", int(*seed));
        }
    }
    Ok(o)
}

fn resolve(cli: &Cli) -> Result<RunConfig, Failure> {
    let file = cli.config.clone().or_else(|| std::env::var_os(format!("{}CONFIG", config::ENV_PREFIX)).map(PathBuf::from));
    let env = config::env_overrides(std::env::vars());
    config::load(file.as_deref(), &env, &flag_overrides(cli)?)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = resolve(&cli)?;
    let text = match &cli.command {
        Command::GenData { .. } => commands::gen_data(&cfg)?,
        Command::Train { .. } => commands::train_head(&cfg)?,
        Command::Calibrate { ext, .. } => commands::calibrate_thresholds(&cfg, ext.embeddings.as_deref())?,
        Command::Eval { ext } => commands::evaluate(&cfg, ext.embeddings.as_deref())?,
        Command::Attack { split, .. } => commands::attack(&cfg, split)?,
        Command::Pollute { .. } => commands::pollute(&cfg)?,
        Command::CapacityStudy { .. } => commands::capacity(&cfg)?,
        Command::Bounds { .. } => commands::bounds(&cfg)?,
        Command::Bench { .. } => commands::bench(&cfg)?,
        Command::Serve { once, .. } => {
            let engine = commands::serve_engine(&cfg)?;
            return serve::serve(engine, &cfg.serve.addr, *once);
        }
    };
    print!("{text}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{f}");
            ExitCode::from(f.code())
        }
    }
}
