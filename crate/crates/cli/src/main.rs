//! `duet`: run evaluations, synthesize perceiver training data, and inspect
//! results.
//!
//! Exit status: 0 on success, 1 on configuration or input errors, 2 when
//! every model call of a run failed.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use duet_core::config::{AppConfig, BackendKind};
use duet_core::eval::{error_breakdown, load_benchmark, load_verdicts, run_matrix, TaskFilter};
use duet_core::orchestrator::store::render_pretty;
use duet_core::orchestrator::TranscriptStore;
use duet_core::synthesis::pipeline::read_records;
use duet_core::synthesis::{export_sft_dataset, run_synthesis, PipelineOptions};

#[derive(Parser)]
#[command(name = "duet", version, about = "Perceiver/reasoner dialogue evaluation and data synthesis")]
struct Cli {
    /// TOML configuration file; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// `http`, or `mock:<name>` for a scripted backend (a script path or
    /// fixtures/mocks/<name>.toml).
    #[arg(long, global = true, default_value = "http")]
    backend: String,
    /// Worker threads (overrides the config).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Seed for sampled generations and corpus subsampling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run settings over a benchmark and print the accuracy table.
    Eval {
        /// Benchmark file, or a directory holding tasks.jsonl.
        #[arg(long)]
        benchmark: PathBuf,
        /// Adapter: jsonl, mmmu or mathvista.
        #[arg(long, default_value = "jsonl")]
        format: String,
        /// Metadata filter such as `subject=Art|Music`.
        #[arg(long)]
        filter: Option<String>,
        /// `all` or comma-separated setting names.
        #[arg(long, default_value = "all")]
        settings: String,
    },
    /// Generate, answer and filter questions over an image directory.
    Synthesize {
        #[arg(long)]
        corpus: PathBuf,
        /// Maximum role-played conversations per question.
        #[arg(long)]
        budget: Option<u32>,
        /// Use at most this many images, drawn with --seed.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Rebuild the training dataset from a records file.
    Export {
        #[arg(long)]
        records: PathBuf,
        /// Directory the record image refs are relative to.
        #[arg(long)]
        images: PathBuf,
    },
    /// Joint correctness of three settings from their verdicts.jsonl files.
    Breakdown {
        #[arg(num_args = 3, required = true)]
        files: Vec<PathBuf>,
        /// Comma-separated setting names; defaults to the parent directory names.
        #[arg(long)]
        names: Option<String>,
        /// CSV destination; defaults to <out>/breakdown.csv.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Pretty-print a stored transcript.
    Transcript { run_id: String, task_id: String },
}

enum Failure {
    Config(String),
    Backend(String),
}

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Config(e.to_string())
    }
}

fn load_config(cli: &Cli) -> Result<AppConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => AppConfig::load(p)?,
        None => AppConfig::default(),
    };
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    if let Some(s) = cli.seed {
        cfg.dialogue.seed = Some(s);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn backend_kind(cli: &Cli) -> Result<BackendKind, Failure> {
    let cwd = PathBuf::from(".");
    let config_dir = cli.config.as_ref().and_then(|p| p.parent()).map(Path::to_path_buf);
    let mut search = vec![cwd.as_path()];
    if let Some(d) = &config_dir {
        search.push(d);
    }
    Ok(BackendKind::parse(&cli.backend, &search)?)
}

fn run(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Eval { benchmark, format, filter, settings } => {
            let cfg = load_config(cli)?;
            let filter = filter.as_deref().map(TaskFilter::parse).transpose()?;
            let bench = load_benchmark(benchmark, format, filter.as_ref())?;
            if bench.missing_images > 0 || bench.skipped_rows > 0 {
                eprintln!("skipped {} row(s) with missing images, {} unsupported row(s)", bench.missing_images, bench.skipped_rows);
            }
            let specs = cfg.select_settings(settings)?;
            let backends = cfg.build_backends(&backend_kind(cli)?, Some(bench.image_root.clone()))?;
            let matrix = cfg.matrix(bench.tasks, &specs, &backends, cfg.out.clone())?;
            let report = run_matrix(&matrix)?;
            print!("{}", report.to_text());
            if report.all_aborted() {
                return Err(Failure::Backend("every run failed; see the transcripts for the errors".into()));
            }
            Ok(())
        }
        Command::Synthesize { corpus, budget, limit } => {
            let cfg = load_config(cli)?;
            let mut synth = cfg.synthesis_config()?;
            if let Some(b) = budget {
                synth.budget = *b;
            }
            let backends = cfg.build_backends(&backend_kind(cli)?, Some(corpus.clone()))?;
            let teacher = backends
                .get(&cfg.synthesis.teacher)
                .ok_or_else(|| Failure::Config(format!("unknown teacher endpoint {:?}", cfg.synthesis.teacher)))?;
            let options = PipelineOptions { workers: cfg.workers, limit: *limit, seed: cli.seed.unwrap_or(0) };
            let summary = run_synthesis(corpus, teacher.as_ref(), &synth, &options, &cfg.out.join("dataset"))?;
            print!("{summary}");
            if summary.records > 0 && summary.dropped_generation_failed == summary.records {
                return Err(Failure::Backend("no question survived generation".into()));
            }
            Ok(())
        }
        Command::Export { records, images } => {
            let cfg = load_config(cli)?;
            if !records.is_file() {
                return Err(Failure::Config(format!("records file {} not found", records.display())));
            }
            let recs = read_records(records)?;
            let summary = export_sft_dataset(&recs, &cfg.dialogue, images, &cfg.out.join("dataset"))?;
            print!("{summary}");
            Ok(())
        }
        Command::Breakdown { files, names, csv } => {
            let cfg = load_config(cli)?;
            let names: Vec<String> = match names {
                Some(n) => n.split(',').map(|s| s.trim().to_string()).collect(),
                None => files
                    .iter()
                    .map(|f| {
                        f.parent()
                            .and_then(|p| p.file_name())
                            .map(|n| n.to_string_lossy().into_owned())
                            .unwrap_or_else(|| f.display().to_string())
                    })
                    .collect(),
            };
            if names.len() != 3 {
                return Err(Failure::Config("--names needs exactly three names".into()));
            }
            let maps = files.iter().map(|f| load_verdicts(f)).collect::<Result<Vec<_>, _>>()?;
            let b = error_breakdown([&names[0], &names[1], &names[2]].map(String::as_str), [&maps[0], &maps[1], &maps[2]])?;
            print!("{b}");
            let path = csv.clone().unwrap_or_else(|| cfg.out.join("breakdown.csv"));
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
            }
            std::fs::write(&path, b.to_csv()).map_err(|e| format!("{}: {e}", path.display()))?;
            Ok(())
        }
        Command::Transcript { run_id, task_id } => {
            let cfg = load_config(cli)?;
            let store = TranscriptStore::new(&cfg.out);
            match store.read(run_id, task_id)? {
                Some(t) => {
                    print!("{}", render_pretty(&t));
                    Ok(())
                }
                None => Err(Failure::Config(format!("no transcript for task {task_id:?} in run {run_id:?}"))),
            }
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Backend(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
