use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use humankernel::experiments::{ExperimentConfig, ExperimentParams};
use humankernel::responses::write_responses_csv;
use humankernel_service::demo::demo_study;
use humankernel_service::StudyStore;

#[derive(Parser)]
#[command(name = "humankernel", version, about = "Kernel learning from extrapolations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Recover a prediction kernel from W posterior draws.
    Reconstruct(RunArgs),
    /// Responders that adapt over a sequence of stimuli.
    Progressive(RunArgs),
    /// Sawtooth and step stimuli with grouped responses.
    Unconventional(RunArgs),
    /// Ranking tasks over seven length-scale candidates.
    Occam(RunArgs),
    /// Length-scale bias of marginal likelihood fits.
    Bias(RunArgs),
    /// Serve the study API from a store directory.
    Serve(ServeArgs),
    /// Dump a store's responses or rankings.
    Export(ExportArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for CSV, SVG and summary files.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON experiment config; `--seed` and `--out` override its values.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: SocketAddr,
    #[arg(long)]
    store: PathBuf,
    /// Create a demo study in an empty store.
    #[arg(long)]
    init: bool,
    /// Study seed used with `--init`.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExportKind {
    Responses,
    Rankings,
    /// One row per grid point: participant_id, stimulus_id, x, y, response_time_s.
    ResponsesCsv,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long, value_enum)]
    kind: ExportKind,
    /// Destination file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_config(name: &str, args: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let cfg: ExperimentConfig =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            if cfg.params.name() != name {
                bail!("{} configures {:?}, not {name:?}", path.display(), cfg.params.name());
            }
            cfg
        }
        None => ExperimentConfig {
            seed: 0,
            output_dir: PathBuf::from("out"),
            params: ExperimentParams::default_for(name)?,
        },
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn run_experiment(name: &str, args: &RunArgs) -> Result<()> {
    let cfg = load_config(name, args)?;
    let report = cfg.run()?;
    let manifest = humankernel::experiments::emit_report(&report, &cfg.output_dir)?;
    for path in &manifest.written {
        println!("wrote {}", path.display());
    }
    for note in &manifest.omitted {
        println!("omitted {note}");
    }
    println!("{}", serde_json::to_string_pretty(&report.summary)?);
    Ok(())
}

fn serve(args: &ServeArgs) -> Result<()> {
    if args.init && !args.store.join("study.json").exists() {
        let (study, stimuli, tasks) = demo_study(args.seed)?;
        StudyStore::create(&args.store, &study, &stimuli, &tasks)?;
        eprintln!("created demo study in {}", args.store.display());
    }
    eprintln!("listening on http://{}", args.bind);
    tokio::runtime::Runtime::new()?.block_on(humankernel_service::serve(args.bind, &args.store))?;
    Ok(())
}

fn export(args: &ExportArgs) -> Result<()> {
    let mut out: Box<dyn Write> = match &args.out {
        Some(p) => Box::new(fs::File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(std::io::stdout().lock()),
    };
    let raw = |file: &str| -> Result<Vec<u8>> {
        let p = args.store.join(file);
        fs::read(&p).with_context(|| format!("reading {}", p.display()))
    };
    match args.kind {
        ExportKind::Responses => out.write_all(&raw("responses.jsonl")?)?,
        ExportKind::Rankings => out.write_all(&raw("rankings.jsonl")?)?,
        ExportKind::ResponsesCsv => {
            let store = StudyStore::open(Path::new(&args.store))?;
            write_responses_csv(&mut out, &store.stimuli(), &store.responses())?;
        }
    }
    out.flush()?;
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Reconstruct(a) => run_experiment("reconstruct", &a),
        Command::Progressive(a) => run_experiment("progressive", &a),
        Command::Unconventional(a) => run_experiment("unconventional", &a),
        Command::Occam(a) => run_experiment("occam", &a),
        Command::Bias(a) => run_experiment("bias", &a),
        Command::Serve(a) => serve(&a),
        Command::Export(a) => export(&a),
    }
}
