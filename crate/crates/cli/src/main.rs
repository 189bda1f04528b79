//! `nerloop`: simulation matrices, reports, project import/export and the
//! annotation server.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use nerloop_cli::{project, report, simulate, ExperimentConfig};
use nerloop_core::corpus::synthetic::{generate_synthetic_corpus, generate_transfer_pair, SyntheticConfig};
use nerloop_core::corpus::{write_corpus, CorpusFormat};
use nerloop_core::CorpusSplit;
use nerloop_service::{Project, ServiceConfig};

#[derive(Parser)]
#[command(name = "nerloop", version, about = "Human-in-the-loop active learning for clinical NER")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one oracle-annotated loop per (strategy, seed) of the matrix.
    Simulate {
        /// Experiment file (also accepted as --config).
        config: Option<PathBuf>,
        #[arg(long = "config", value_name = "FILE", conflicts_with = "config")]
        config_flag: Option<PathBuf>,
        /// Output directory for logs, learning curve and summary.
        #[arg(long)]
        out: PathBuf,
        /// Worker threads; 0 uses one per core.
        #[arg(long, default_value_t = 0)]
        parallel: usize,
        /// Run only this seed instead of the matrix seeds.
        #[arg(long)]
        seed_override: Option<u64>,
    },
    /// Mean and standard deviation of F1 and workload per strategy and round.
    Report {
        /// Directory of round logs (*.jsonl).
        logdir: PathBuf,
    },
    /// Create a project directory from an experiment file's corpus and loop.
    ImportCorpus {
        #[arg(long, value_name = "FILE")]
        config: PathBuf,
        /// New project directory.
        project: PathBuf,
    },
    /// Write a project's annotations as JSON lines.
    ExportAnnotations {
        project: PathBuf,
        /// Output file; standard output if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Export the labeled training set as a corpus file instead.
        #[arg(long, value_name = "FORMAT")]
        labeled: Option<CorpusFormat>,
    },
    /// Serve a project over HTTP until interrupted.
    Serve {
        project: PathBuf,
        /// Service settings: the `[service]` table of an experiment file, or
        /// a file holding only those keys. NERLOOP_* variables override it.
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
    },
    /// Write a synthetic corpus as subtoken-format files.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Write a source/target language pair into `source/` and `target/`.
        #[arg(long)]
        transfer: bool,
        /// Generator settings as TOML (defaults otherwise).
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Simulate {
            config,
            config_flag,
            out,
            parallel,
            seed_override,
        } => {
            let Some(path) = config.or(config_flag) else {
                bail!("an experiment file is required");
            };
            let cfg = ExperimentConfig::load(&path)?;
            let outcome = simulate::run_matrix(&cfg, &out, parallel, seed_override)?;
            for r in &outcome.completed {
                println!(
                    "{}\tseed {}\tfinal F1 {:.4}\trounds to target {}",
                    r.spec.strategy,
                    r.spec.seed,
                    r.final_f1(),
                    r.rounds_to_target.map_or("-".into(), |n| n.to_string())
                );
            }
            if outcome.failed.is_empty() {
                return Ok(ExitCode::SUCCESS);
            }
            for (spec, e) in &outcome.failed {
                eprintln!("failed: {} seed {}: {e}", spec.strategy, spec.seed);
            }
            Ok(ExitCode::FAILURE)
        }
        Command::Report { logdir } => {
            print!("{}", report::report_dir(&logdir)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::ImportCorpus { config, project } => {
            let cfg = ExperimentConfig::load(&config)?;
            let p = project::import_corpus(&cfg, &project)?;
            println!(
                "created {} with {} pool instances; round {} open",
                project.display(),
                p.state().pool().len(),
                p.state().open_batch().map_or(0, |b| b.round)
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::ExportAnnotations { project, out, labeled } => {
            let p = Project::open(&project).with_context(|| format!("opening {}", project.display()))?;
            let text = match labeled {
                Some(format) => project::export_labeled(&p, format),
                None => project::export_annotations(&p),
            };
            match out {
                Some(path) => std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?,
                None => std::io::stdout().write_all(text.as_bytes())?,
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Serve { project, config } => {
            serve(&project, config.as_deref())?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Synth {
            out,
            seed,
            transfer,
            config,
        } => {
            let cfg: SyntheticConfig = match config {
                Some(p) => toml::from_str(&std::fs::read_to_string(&p)?).with_context(|| format!("parsing {}", p.display()))?,
                None => SyntheticConfig::default(),
            };
            if transfer {
                let (source, target) = generate_transfer_pair(&cfg, seed)?;
                write_split(&out.join("source"), &source)?;
                write_split(&out.join("target"), &target)?;
            } else {
                write_split(&out, &generate_synthetic_corpus(&cfg, seed)?)?;
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

/// `seed.txt`, `pool.txt`, `validation.txt` and `test.txt`, skipping empty
/// partitions. The pool keeps its gold labels for simulation.
fn write_split(dir: &Path, split: &CorpusSplit) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let pool: Vec<_> = split
        .unlabeled_pool
        .instances()
        .iter()
        .map(|s| {
            let tags = split.unlabeled_pool.reveal(s.id()).expect("generated pool is labeled");
            s.with_word_tags(tags)
        })
        .collect::<Result<_, _>>()?;
    for (name, seqs) in [
        ("seed", &split.labeled_seed),
        ("pool", &pool),
        ("validation", &split.validation),
        ("test", &split.test),
    ] {
        if !seqs.is_empty() {
            std::fs::write(dir.join(format!("{name}.txt")), write_corpus(seqs, CorpusFormat::Subtoken))?;
        }
    }
    Ok(())
}

fn service_config(path: Option<&Path>) -> Result<ServiceConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let mut table: toml::Table = toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
            let section = match table.remove("service") {
                Some(toml::Value::Table(t)) => t,
                Some(_) => bail!("{}: `service` must be a table", p.display()),
                None => table,
            };
            ServiceConfig::from_toml(&toml::to_string(&section)?)?
        }
        None => ServiceConfig::default(),
    };
    cfg.apply_env(std::env::vars())?;
    cfg.validate()?;
    Ok(cfg)
}

#[tokio::main]
async fn serve(dir: &Path, config: Option<&Path>) -> Result<()> {
    let cfg = service_config(config)?;
    let identities = cfg.identities()?;
    if identities.is_empty() {
        log::warn!("no annotator tokens configured; only /api/health will answer");
    }
    let mut project = Project::open(dir).with_context(|| format!("opening {}", dir.display()))?;
    project.set_lease_ms(cfg.lease_seconds * 1000);
    if project.settings().redundancy != cfg.redundancy {
        log::warn!(
            "project redundancy is {} (fixed at import); ignoring configured {}",
            project.settings().redundancy,
            cfg.redundancy
        );
    }
    let listener = tokio::net::TcpListener::bind(&cfg.bind)
        .await
        .with_context(|| format!("binding {}", cfg.bind))?;
    println!("listening on http://{}", listener.local_addr()?);
    std::io::stdout().flush()?;
    nerloop_service::serve(listener, project, identities, shutdown_signal()).await?;
    Ok(())
}

async fn shutdown_signal() {
    #[cfg(unix)]
    {
        let mut term = tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()).expect("signal handler");
        tokio::select! {
            _ = tokio::signal::ctrl_c() => {}
            _ = term.recv() => {}
        }
    }
    #[cfg(not(unix))]
    {
        let _ = tokio::signal::ctrl_c().await;
    }
    log::info!("shutting down");
}
