//! `w2c` command line: run the pipeline, validate output files, print stats.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use w2c::backends::{
    HttpGroundingBackend, HttpVlmBackend, RecordingGrounding, RecordingVlm, ReplayBackend,
    ReplayLog, RetryPolicy,
};
use w2c::codegen;
use w2c::datamodel::{
    validate_record, DropPolicy, ImageRecord, JsonlRecord, OutputFormat, W2CRecord,
};
use w2c::orchestrator::{self, run_pipeline, PipelineBackends, RunConfigFile};
use w2c::stages::PromptSet;

const TOKEN_ENV_VAR: &str = "W2C_BACKEND_TOKEN";

#[derive(Parser)]
#[command(
    name = "w2c",
    version,
    about = "Self-instructed multimodal data construction pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline over a manifest of images.
    Run(RunArgs),
    /// Validate a produced JSONL file (schema, invariants, code round-trip).
    Validate { file: PathBuf },
    /// Print the statistics of a finished run directory.
    Stats { dir: PathBuf },
}

#[derive(Args)]
struct RunArgs {
    /// Manifest JSONL: {"id","path","width","height"} per line.
    #[arg(long)]
    manifest: PathBuf,
    /// Run configuration JSON file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Replay file: read scripted responses instead of calling services
    /// (or, with --record, the destination for captured responses).
    #[arg(long)]
    replay: Option<PathBuf>,
    /// Call the real services and record their responses into --replay.
    #[arg(long)]
    record: bool,
    /// Output format: code, single, or multi.
    #[arg(long)]
    format: Option<String>,
    /// Disable the counting consistency filter.
    #[arg(long)]
    no_counting_filter: bool,
    /// Disable caption re-ranking (beam 0 is selected).
    #[arg(long)]
    no_reranking: bool,
    /// Drop policy for counting-inconsistent groups: record or group.
    #[arg(long)]
    drop_policy: Option<String>,
    /// Maximum concurrent images in flight.
    #[arg(long)]
    concurrency: Option<usize>,
    /// Continue an interrupted run in the same output directory.
    #[arg(long)]
    resume: bool,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run(args) => run(args),
        Command::Validate { file } => validate(&file),
        Command::Stats { dir } => stats(&dir),
    }
}

fn run(args: RunArgs) -> Result<()> {
    let mut file_config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read config {}", path.display()))?;
            serde_json::from_str::<RunConfigFile>(&text)
                .with_context(|| format!("cannot parse config {}", path.display()))?
        }
        None => RunConfigFile::default(),
    };

    if let Some(format) = &args.format {
        file_config.pipeline.output_format = match format.as_str() {
            "code" => OutputFormat::Code,
            "single" => OutputFormat::SingleRound,
            "multi" => OutputFormat::MultiRound,
            other => bail!("unknown format {other:?}; expected code, single, or multi"),
        };
    }
    if let Some(policy) = &args.drop_policy {
        file_config.pipeline.drop_policy = match policy.as_str() {
            "record" => DropPolicy::DropRecord,
            "group" => DropPolicy::DropGroup,
            other => bail!("unknown drop policy {other:?}; expected record or group"),
        };
    }
    if args.no_counting_filter {
        file_config.pipeline.counting_filter_enabled = false;
    }
    if args.no_reranking {
        file_config.pipeline.reranking_enabled = false;
    }
    if let Some(n) = args.concurrency {
        file_config.pipeline.max_concurrent_requests = n;
    }

    let prompts = match &file_config.prompt_template_file {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read prompt templates {path}"))?;
            PromptSet::from_json(&text).context("cannot parse prompt templates")?
        }
        None => PromptSet::default(),
    };

    let token = std::env::var(TOKEN_ENV_VAR).ok();
    let summary = match (&args.replay, args.record) {
        (Some(replay_path), false) => {
            let replay = ReplayBackend::load(replay_path)
                .with_context(|| format!("cannot load replay file {}", replay_path.display()))?;
            run_pipeline(
                &args.manifest,
                &file_config.pipeline,
                &prompts,
                PipelineBackends {
                    vlm: &replay,
                    grounding: &replay,
                },
                &args.out,
                args.resume,
            )?
        }
        (replay_path, record) => {
            let vlm_endpoint = file_config
                .vlm_endpoint
                .clone()
                .context("config must set vlm_endpoint for live runs")?;
            let grounding_endpoint = file_config
                .grounding_endpoint
                .clone()
                .context("config must set grounding_endpoint for live runs")?;
            let vlm = HttpVlmBackend::new(vlm_endpoint, token.clone(), RetryPolicy::default());
            let grounding =
                HttpGroundingBackend::new(grounding_endpoint, token, RetryPolicy::default());
            if record {
                let replay_path = replay_path
                    .as_ref()
                    .context("--record needs --replay <file> as its destination")?;
                let log = Arc::new(ReplayLog::create(replay_path).with_context(|| {
                    format!("cannot create replay file {}", replay_path.display())
                })?);
                let vlm = RecordingVlm {
                    inner: vlm,
                    log: Arc::clone(&log),
                };
                let grounding = RecordingGrounding {
                    inner: grounding,
                    log,
                };
                run_pipeline(
                    &args.manifest,
                    &file_config.pipeline,
                    &prompts,
                    PipelineBackends {
                        vlm: &vlm,
                        grounding: &grounding,
                    },
                    &args.out,
                    args.resume,
                )?
            } else {
                run_pipeline(
                    &args.manifest,
                    &file_config.pipeline,
                    &prompts,
                    PipelineBackends {
                        vlm: &vlm,
                        grounding: &grounding,
                    },
                    &args.out,
                    args.resume,
                )?
            }
        }
    };

    print!("{}", summary.stats.render());
    println!("output: {}", summary.output_path.display());
    Ok(())
}

/// Rebuilds a validatable record from one output line: image dimensions come
/// from the embedded code document.
fn record_from_line(line: &str) -> Result<W2CRecord, String> {
    let jsonl = JsonlRecord::from_line(line).map_err(|e| format!("not a record line: {e}"))?;
    let content = codegen::parse_code(&jsonl.code).map_err(|e| e.to_string())?;
    let width = u32::try_from(content.width).map_err(|_| "width overflows u32".to_string())?;
    let height = u32::try_from(content.height).map_err(|_| "height overflows u32".to_string())?;
    Ok(W2CRecord {
        image: ImageRecord::new(jsonl.id.clone(), String::new(), width, height),
        global_caption: jsonl.global_caption.clone(),
        groups: jsonl.to_groups(),
        code: jsonl.code,
    })
}

fn validate(file: &Path) -> Result<()> {
    let text =
        std::fs::read_to_string(file).with_context(|| format!("cannot read {}", file.display()))?;
    let mut problems = 0usize;
    let mut seen_ids = std::collections::HashSet::new();
    for (number, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = number + 1;
        match record_from_line(line) {
            Ok(record) => {
                if !seen_ids.insert(record.image.id.clone()) {
                    println!("line {line_no}: duplicate id {:?}", record.image.id);
                    problems += 1;
                }
                for violation in validate_record(&record) {
                    println!("line {line_no}: {violation}");
                    problems += 1;
                }
            }
            Err(message) => {
                println!("line {line_no}: {message}");
                problems += 1;
            }
        }
    }
    if problems > 0 {
        bail!("{problems} violation(s) found");
    }
    println!("ok");
    Ok(())
}

fn stats(dir: &Path) -> Result<()> {
    let path = dir.join(orchestrator::STATS_FILE);
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let stats: orchestrator::RunStats =
        serde_json::from_str(&text).context("corrupt stats file")?;
    print!("{}", stats.render());
    Ok(())
}
