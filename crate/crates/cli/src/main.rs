mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};
use ovproto::descriptions::{
    encode_corpus, generate_descriptions, load_description_entries, load_descriptions, save_descriptions,
    EncoderKind, FixtureClient, FixtureEncoder, GenerationClient, RemoteClient, RemoteEncoder, TextEncoder,
    ToyEncoder,
};
use ovproto::io::{read_json, write_json_atomic, write_jsonl_atomic};
use ovproto::prototypes::build_bank_with;
use ovproto::synthbench::{
    build_toy_bank, evaluate, evaluate_transfer, generate_world, grid_arms, run_ablation, run_single,
    seeds_from_root, LossSummary, Metrics, ProbeModel,
};
use ovproto::{Error, ErrorClass, Execution, Result, Strategy, ARTIFACT_VERSION};
use serde::Serialize;
use serde_json::{json, Value};

use config::{help_table, parse_override, resolve, ClientKind, Config};

#[derive(Debug, Parser)]
#[command(name = "ovproto", version, about = "State- and scene-augmented prototype banks, training and ablations")]
struct Cli {
    /// JSON config file; omitted sections take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Config override, repeatable: `--set train.lambda=0.2`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Output directory (`output.dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Aggregation strategy for class prototypes (`bank.strategy` and `train.aggregator`).
    #[arg(long, global = true)]
    aggregator: Option<Strategy>,
    /// State descriptions per class (`bank.k` and `train.k`).
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Scene phrases per class (`bank.l` and `train.l`).
    #[arg(long, global = true)]
    l: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Query the description client for generic, state and scene texts.
    GenDescriptions,
    /// Encode every description text into an embedding fixture.
    Encode,
    /// Build a prototype bank from descriptions and an encoder.
    BuildBank,
    /// Generate the synthetic world and write it out.
    Simulate,
    /// Train a probe on the synthetic world and evaluate it.
    Train,
    /// Evaluate a saved probe on the synthetic world.
    Evaluate {
        /// Also evaluate on a second world with unseen class directions.
        #[arg(long)]
        transfer: bool,
    },
    /// Run an ablation grid over seeds.
    Ablate {
        /// components, k, l, tau or aggregator (`ablation.grid`).
        #[arg(long)]
        grid: Option<String>,
        /// Number of seeds counted up from `world.seed` (`ablation.seeds`).
        #[arg(long)]
        seeds: Option<usize>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenDescriptions => "gen-descriptions",
            Command::Encode => "encode",
            Command::BuildBank => "build-bank",
            Command::Simulate => "simulate",
            Command::Train => "train",
            Command::Evaluate { .. } => "evaluate",
            Command::Ablate { .. } => "ablate",
        }
    }
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Config => 2,
        ErrorClass::Data => 3,
        ErrorClass::Numerical => 4,
    }
}

fn fail(class: ErrorClass, message: &str) -> ExitCode {
    let label = match class {
        ErrorClass::Config => "config",
        ErrorClass::Data => "data",
        ErrorClass::Numerical => "numerical",
    };
    let code = exit_code(class);
    eprintln!("{}", json!({ "error": label, "code": code, "message": message }));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let table = help_table();
    let command = Cli::command()
        .after_help(table.clone())
        .mut_subcommands(|sub| sub.after_help(table.clone()));
    let cli = match command.try_get_matches().and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail(ErrorClass::Config, e.to_string().lines().next().unwrap_or("invalid arguments")),
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.class(), &e.to_string()),
    }
}

/// Collects `--set` overrides followed by the dedicated flags (flags win).
fn overrides(cli: &Cli) -> Result<Vec<(String, Value)>> {
    let mut out = cli.set.iter().map(|s| parse_override(s)).collect::<Result<Vec<_>>>()?;
    if let Some(dir) = &cli.out {
        out.push(("output.dir".into(), json!(dir)));
    }
    if let Some(a) = cli.aggregator {
        out.push(("bank.strategy".into(), json!(a)));
        out.push(("train.aggregator".into(), json!(a)));
    }
    if let Some(k) = cli.k {
        out.push(("bank.k".into(), json!(k)));
        out.push(("train.k".into(), json!(k)));
    }
    if let Some(l) = cli.l {
        out.push(("bank.l".into(), json!(l)));
        out.push(("train.l".into(), json!(l)));
    }
    if let Command::Ablate { grid, seeds } = &cli.command {
        if let Some(g) = grid {
            out.push(("ablation.grid".into(), json!(g.parse::<ovproto::synthbench::GridKind>()?)));
        }
        if let Some(n) = seeds {
            out.push(("ablation.seeds".into(), json!(n)));
        }
    }
    Ok(out)
}

fn run(cli: &Cli) -> Result<()> {
    let config = resolve(cli.config.as_deref(), &overrides(cli)?)?;
    let out = config.output.dir.clone();
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    log::info!("{} -> {}", cli.command.name(), out.display());
    match &cli.command {
        Command::GenDescriptions => gen_descriptions(&config, &out)?,
        Command::Encode => encode_descriptions(&config, &out)?,
        Command::BuildBank => build_bank(&config, &out)?,
        Command::Simulate => {
            let world = generate_world(&config.world)?;
            write_json_atomic(&out.join("world.json"), &world)?;
        }
        Command::Train => train(&config, &out)?,
        Command::Evaluate { transfer } => evaluate_probe(&config, &out, *transfer)?,
        Command::Ablate { .. } => ablate(&config, &out)?,
    }
    // Written last: a complete echo marks a finished run, and re-running
    // with `--config <out>/resolved_config.json` reproduces the outputs.
    write_json_atomic(&out.join("resolved_config.json"), &config)
}

fn gen_descriptions(config: &Config, out: &Path) -> Result<()> {
    let client: Box<dyn GenerationClient> = match config.client.kind {
        ClientKind::Fixture => Box::new(FixtureClient::load(&config.data.descriptions)?),
        ClientKind::Remote => Box::new(RemoteClient::new(config.client.remote.clone())?),
    };
    let classes = if config.data.classes.is_empty() {
        match config.client.kind {
            ClientKind::Fixture => load_description_entries(&config.data.descriptions)?.into_keys().collect(),
            ClientKind::Remote => {
                return Err(Error::InvalidConfig("data.classes must list the classes to describe".into()))
            }
        }
    } else {
        config.data.classes.clone()
    };
    let sets = generate_descriptions(&classes, config.bank.k, config.bank.l, client.as_ref())?;
    save_descriptions(&out.join("descriptions.json"), &sets)
}

fn text_encoder(config: &Config) -> Result<Box<dyn TextEncoder>> {
    let enc = &config.encoder;
    Ok(match enc.kind {
        EncoderKind::FixtureFile => Box::new(FixtureEncoder::load(&config.data.embeddings)?),
        EncoderKind::DeterministicToy => Box::new(ToyEncoder::new(enc.dim, enc.seed)?),
        EncoderKind::RemoteService => Box::new(RemoteEncoder::new(enc.remote.clone(), enc.dim)?),
    })
}

fn encode_descriptions(config: &Config, out: &Path) -> Result<()> {
    let sets = load_descriptions(&config.data.descriptions)?;
    let encoder = text_encoder(config)?;
    let texts = sets.values().flat_map(|s| {
        std::iter::once(s.generic.as_str())
            .chain(s.states.iter().map(String::as_str))
            .chain(s.scenes.iter().map(String::as_str))
    });
    encode_corpus(texts, encoder.as_ref())?.save(&out.join("embeddings.json"))
}

fn build_bank(config: &Config, out: &Path) -> Result<()> {
    let sets = load_descriptions(&config.data.descriptions)?;
    let encoder = text_encoder(config)?;
    let bank = build_bank_with(&sets, encoder.as_ref(), &config.bank, Execution::default())?;
    bank.save(&out.join("bank.json"))
}

#[derive(Serialize)]
struct RunRecord<'a, T: Serialize> {
    artifact_version: &'a str,
    command: &'a str,
    config: &'a Config,
    #[serde(flatten)]
    result: T,
}

fn train(config: &Config, out: &Path) -> Result<()> {
    let world = generate_world(&config.world)?;
    let run = run_single(&world, &config.train, config.world.seed)?;
    write_json_atomic(&out.join("probe.json"), &run.probe)?;
    write_jsonl_atomic(&out.join("trace.jsonl"), &run.trace)?;
    let record = RunRecord {
        artifact_version: ARTIFACT_VERSION,
        command: "train",
        config,
        result: json!({ "metrics": run.metrics, "loss": LossSummary::from_trace(&run.trace) }),
    };
    write_json_atomic(&out.join("metrics.json"), &record)
}

fn evaluate_probe(config: &Config, out: &Path, transfer: bool) -> Result<()> {
    let probe: ProbeModel = read_json(&config.data.probe)?;
    let world = generate_world(&config.world)?;
    let bank = build_toy_bank(&world, config.train.desc_mode, &config.train.bank_options())?;
    let metrics = evaluate(&probe, &bank, &world.test, world.spec.n_base, config.train.temperature)?;
    let transfer: Option<Metrics> = if transfer {
        Some(evaluate_transfer(&probe, &config.world, &config.train)?)
    } else {
        None
    };
    let record = RunRecord {
        artifact_version: ARTIFACT_VERSION,
        command: "evaluate",
        config,
        result: json!({ "metrics": metrics, "transfer": transfer }),
    };
    write_json_atomic(&out.join("evaluation.json"), &record)
}

fn ablate(config: &Config, out: &Path) -> Result<()> {
    let grid = config.ablation.grid;
    if config.ablation.seeds == 0 {
        return Err(Error::InvalidConfig("ablation.seeds must be >= 1".into()));
    }
    let arms = grid_arms(grid, &config.train);
    let seeds = seeds_from_root(config.world.seed, config.ablation.seeds);
    let result = run_ablation(&config.world, grid.as_str(), &arms, &seeds, Execution::default())?;
    result.write(&out.join("results.jsonl"), &out.join("summary.json"))
}
