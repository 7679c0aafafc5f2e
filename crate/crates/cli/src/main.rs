//! `docstruct` command-line front end.
//!
//! Settings resolve as: command-line flag, then environment (seed only),
//! then the `--config` TOML file, then built-in defaults.

use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use docstruct::crop::{layout_sequence, plan_crops, CropPlan, DEFAULT_CELL_PX, DEFAULT_MAX_CROPS, DEFAULT_VISUAL_TOKENS};
use docstruct::hreducer::self_check;
use docstruct::layout::{SpacingPolicy, DEFAULT_MAX_SPACES};
use docstruct::localization::{DEFAULT_PACK_LIMIT, DEFAULT_PER_PAGE_LIMIT};
use docstruct::metrics::{EvalReport, EvalTask, DEFAULT_IOU_THRESHOLD};
use docstruct::pipeline::{run_build, run_eval, run_stats, BuildConfig, BuildTask};
use docstruct::Granularity;

#[derive(Parser, Debug)]
#[command(name = "docstruct", version, about = "Build structure-learning corpora and score localization outputs")]
struct Cli {
    /// TOML file with default settings; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Document parsing samples from an OCR page corpus.
    BuildDoc(BuildArgs),
    /// Table parsing samples from HTML or row-form tables.
    BuildTable(BuildArgs),
    /// Chart parsing samples from chart data records.
    BuildChart(BuildArgs),
    /// Natural image parsing samples from captioned OCR pages.
    BuildNatural(BuildArgs),
    /// Packed text grounding and recognition samples from OCR pages.
    BuildLocalization(BuildArgs),
    /// Crop grid, indicator tokens and token budget for one image size.
    CropPlan(CropArgs),
    /// Shape, locality and gradient checks of the H-Reducer numerics.
    HreducerCheck(CheckArgs),
    /// IoU accuracy of predicted boxes.
    EvalGrounding(EvalArgs),
    /// Granularity-mapped BLEU of predicted texts.
    EvalRecognition(EvalArgs),
    /// Record counts and answer lengths of a built corpus.
    Stats(StatsArgs),
}

#[derive(Args, Debug)]
struct BuildArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, env = "DOCSTRUCT_SEED")]
    seed: Option<u64>,
    /// Cap on consecutive spaces between words on a line.
    #[arg(long)]
    max_spaces: Option<usize>,
    /// QA pairs per word or phrase sample.
    #[arg(long)]
    pack_limit: Option<usize>,
    /// Candidates kept per granularity per page.
    #[arg(long)]
    per_page_limit: Option<usize>,
    /// Localization granularities, comma-separated or repeated.
    #[arg(long, value_delimiter = ',', value_parser = parse_granularity)]
    granularity: Vec<Granularity>,
}

#[derive(Args, Debug)]
struct CropArgs {
    #[arg(long)]
    width: u32,
    #[arg(long)]
    height: u32,
    #[arg(long)]
    max_crops: Option<u32>,
    #[arg(long)]
    cell_px: Option<u32>,
    /// Visual tokens per image after reduction.
    #[arg(long, default_value_t = DEFAULT_VISUAL_TOKENS)]
    visual_tokens: usize,
    #[arg(long, default_value_t = 0)]
    instruction_tokens: usize,
    /// Also write the plan as JSON to this file.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CheckArgs {
    #[arg(long, env = "DOCSTRUCT_SEED")]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Predictions, one `{prediction, gold, granularity, task}` object per line.
    #[arg(long)]
    input: PathBuf,
    /// Also write the report as JSON to this file.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    iou_threshold: Option<f64>,
}

#[derive(Args, Debug)]
struct StatsArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: Option<PathBuf>,
}

fn parse_granularity(s: &str) -> std::result::Result<Granularity, String> {
    s.parse().map_err(|e: docstruct::Error| e.to_string())
}

/// Settings accepted in the `--config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    max_spaces: Option<usize>,
    max_crops: Option<u32>,
    cell_px: Option<u32>,
    pack_limit: Option<usize>,
    per_page_limit: Option<usize>,
    granularities: Option<Vec<Granularity>>,
    iou_threshold: Option<f64>,
    instructions: Option<Vec<String>>,
}

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Writes to stdout; a closed pipe (`docstruct ... | head`) is not an error.
fn emit(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        Err(e) if e.kind() == ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn build(task: BuildTask, a: BuildArgs, file: FileConfig) -> Result<ExitCode> {
    let mut cfg = BuildConfig::new(a.input, a.output, task);
    cfg.seed = a.seed.or(file.seed).unwrap_or(0);
    cfg.spacing = SpacingPolicy::new(a.max_spaces.or(file.max_spaces).unwrap_or(DEFAULT_MAX_SPACES))?;
    cfg.pack_limit = a.pack_limit.or(file.pack_limit).unwrap_or(DEFAULT_PACK_LIMIT);
    cfg.per_page_limit = a.per_page_limit.or(file.per_page_limit).unwrap_or(DEFAULT_PER_PAGE_LIMIT);
    cfg.granularities = if !a.granularity.is_empty() {
        a.granularity
    } else {
        file.granularities.unwrap_or_else(|| Granularity::ALL.to_vec())
    };
    cfg.instructions = file.instructions;
    let stats = run_build(&cfg)?;
    emit(&(serde_json::to_string_pretty(&stats)? + "\n"))?;
    eprintln!("wrote {} records to {}", stats.records, cfg.output.display());
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct CropReport {
    plan: CropPlan,
    segments: docstruct::crop::SequenceLayout,
    visual_tokens: usize,
    indicator_tokens: usize,
    total_tokens: usize,
}

fn crop(a: CropArgs, file: FileConfig) -> Result<ExitCode> {
    let max_crops = a.max_crops.or(file.max_crops).unwrap_or(DEFAULT_MAX_CROPS);
    let cell_px = a.cell_px.or(file.cell_px).unwrap_or(DEFAULT_CELL_PX);
    let plan = plan_crops(a.width, a.height, max_crops, cell_px)?;
    let layout = layout_sequence(&plan, a.visual_tokens, a.instruction_tokens)?;
    let report = CropReport {
        visual_tokens: layout.visual_tokens(),
        indicator_tokens: layout.indicator_tokens(),
        total_tokens: layout.total_tokens(),
        plan,
        segments: layout,
    };
    emit(&(serde_json::to_string_pretty(&report)? + "\n"))?;
    if let Some(out) = &a.output {
        write_json(out, &report)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn check(a: CheckArgs, file: FileConfig) -> Result<ExitCode> {
    let results = self_check(a.seed.or(file.seed).unwrap_or(0))?;
    let mut ok = true;
    for r in &results {
        emit(&format!("[{}] {}: {}\n", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail))?;
        ok &= r.passed;
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn eval(task: EvalTask, a: EvalArgs, file: FileConfig) -> Result<ExitCode> {
    let threshold = a.iou_threshold.or(file.iou_threshold).unwrap_or(DEFAULT_IOU_THRESHOLD);
    if !(0.0..=1.0).contains(&threshold) {
        bail!("iou threshold {threshold} must be in [0, 1]");
    }
    let report: EvalReport = run_eval(&a.input, task, threshold)?;
    emit(&report.render_table())?;
    if let Some(out) = &a.output {
        write_json(out, &report)?;
    }
    if report.scores.total() == 0 {
        eprintln!("warning: no records were scored in {}", a.input.display());
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

fn stats(a: StatsArgs) -> Result<ExitCode> {
    let stats = run_stats(&a.input)?;
    emit(&(serde_json::to_string_pretty(&stats)? + "\n"))?;
    if let Some(out) = &a.output {
        write_json(out, &stats)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode> {
    let file = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::BuildDoc(a) => build(BuildTask::Doc, a, file),
        Command::BuildTable(a) => build(BuildTask::Table, a, file),
        Command::BuildChart(a) => build(BuildTask::Chart, a, file),
        Command::BuildNatural(a) => build(BuildTask::Natural, a, file),
        Command::BuildLocalization(a) => build(BuildTask::Localization, a, file),
        Command::CropPlan(a) => crop(a, file),
        Command::HreducerCheck(a) => check(a, file),
        Command::EvalGrounding(a) => eval(EvalTask::Grounding, a, file),
        Command::EvalRecognition(a) => eval(EvalTask::Recognition, a, file),
        Command::Stats(a) => stats(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
