//! Corpus-level builders, statistics and evaluation over line-delimited JSON.
//!
//! Input is streamed in chunks; records inside a chunk are processed in
//! parallel and written back in input order, so output depends only on the
//! input and the seed. Output goes to a temporary file next to the target and
//! is moved into place only after every record re-parses and validates.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::chart::{build_chart_parse_sample, ChartData};
use crate::error::Error;
use crate::geometry::{parse_token_string, BBox};
use crate::layout::{build_doc_parse_sample, build_natural_parse_sample, SpacingPolicy};
use crate::localization::{
    build_localization_samples, LocalizationConfig, PackedSample, DEFAULT_PACK_LIMIT,
    DEFAULT_PER_PAGE_LIMIT,
};
use crate::metrics::{
    grounding_accuracy, recognition_score, EvalReport, EvalTask, GroundingRecord,
    RecognitionRecord,
};
use crate::model::{Granularity, OcrPage, Task, TrainingSample};
use crate::seeding::derive_seed;
use crate::table::{build_table_parse_sample, html_to_grid, TableCell, TableGrid};

const CHUNK_LINES: usize = 512;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Record {
        path: PathBuf,
        line: usize,
        #[source]
        source: Error,
    },
    #[error(transparent)]
    Config(Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_owned(),
        source,
    }
}

/// Which corpus `run_build` produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BuildTask {
    Doc,
    Table,
    Chart,
    Natural,
    Localization,
}

impl BuildTask {
    fn task(self) -> Task {
        match self {
            BuildTask::Doc => Task::DocParse,
            BuildTask::Table => Task::TableParse,
            BuildTask::Chart => Task::ChartParse,
            BuildTask::Natural => Task::NaturalParse,
            BuildTask::Localization => Task::TextGrounding,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BuildConfig {
    pub input: PathBuf,
    pub output: PathBuf,
    pub task: BuildTask,
    pub seed: u64,
    pub spacing: SpacingPolicy,
    pub per_page_limit: usize,
    pub pack_limit: usize,
    pub granularities: Vec<Granularity>,
    /// Overrides the default instruction pool of a parse task.
    pub instructions: Option<Vec<String>>,
}

impl BuildConfig {
    pub fn new(input: impl Into<PathBuf>, output: impl Into<PathBuf>, task: BuildTask) -> Self {
        Self {
            input: input.into(),
            output: output.into(),
            task,
            seed: 0,
            spacing: SpacingPolicy::default(),
            per_page_limit: DEFAULT_PER_PAGE_LIMIT,
            pack_limit: DEFAULT_PACK_LIMIT,
            granularities: Granularity::ALL.to_vec(),
            instructions: None,
        }
    }
}

/// Default instruction pool for a parse task.
pub fn default_instructions(task: Task) -> Vec<String> {
    let pool: &[&str] = match task {
        Task::DocParse => &[
            "Recognize text in the image.",
            "Read all the text in the image.",
            "Parse the document and keep its layout.",
            "Convert the document image to text, preserving spacing and line breaks.",
        ],
        Task::TableParse => &[
            "Parse the table in the image into Markdown.",
            "Convert the table to Markdown, keeping merged cells.",
            "Transcribe the table as Markdown.",
        ],
        Task::ChartParse => &[
            "Convert the chart to a Markdown table.",
            "Extract the data behind the chart as a Markdown table.",
            "What are the values shown in the chart? Answer with a Markdown table.",
        ],
        Task::NaturalParse => &[
            "Describe the image and read the text in it.",
            "Give a short caption of the image, then list the text it contains.",
            "Parse the image: caption first, then the scene text.",
        ],
        Task::TextGrounding | Task::TextRecognition => &[],
    };
    pool.iter().map(|s| s.to_string()).collect()
}

/// Record counts, QA pair counts and mean answer length of a corpus.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CorpusStats {
    pub records: usize,
    pub qa_pairs: usize,
    pub records_per_task: BTreeMap<Task, usize>,
    pub records_per_granularity: BTreeMap<Granularity, usize>,
    /// Mean whitespace-token length of answers, over QA pairs.
    pub mean_answer_tokens: f64,
    pub mean_answer_tokens_per_task: BTreeMap<Task, f64>,
}

#[derive(Default)]
struct StatsAcc {
    records: usize,
    qa: BTreeMap<Task, (usize, usize)>,
    per_task: BTreeMap<Task, usize>,
    per_granularity: BTreeMap<Granularity, usize>,
}

impl StatsAcc {
    fn add(&mut self, task: Task, g: Option<Granularity>, answers: impl Iterator<Item = usize>) {
        self.records += 1;
        *self.per_task.entry(task).or_default() += 1;
        if let Some(g) = g {
            *self.per_granularity.entry(g).or_default() += 1;
        }
        let e = self.qa.entry(task).or_default();
        for a in answers {
            e.0 += 1;
            e.1 += a;
        }
    }

    fn finish(self) -> CorpusStats {
        let mut out = CorpusStats {
            records: self.records,
            ..Default::default()
        };
        let (mut pairs, mut tokens) = (0, 0);
        for t in Task::ALL {
            out.records_per_task.insert(t, self.per_task.get(&t).copied().unwrap_or(0));
            let (n, len) = self.qa.get(&t).copied().unwrap_or((0, 0));
            pairs += n;
            tokens += len;
            out.mean_answer_tokens_per_task
                .insert(t, if n == 0 { 0.0 } else { len as f64 / n as f64 });
        }
        for g in Granularity::ALL {
            out.records_per_granularity
                .insert(g, self.per_granularity.get(&g).copied().unwrap_or(0));
        }
        out.qa_pairs = pairs;
        out.mean_answer_tokens = if pairs == 0 { 0.0 } else { tokens as f64 / pairs as f64 };
        out
    }
}

fn answer_tokens(s: &str) -> usize {
    s.split_whitespace().count()
}

/// Parses and validates one output record, feeding it to the accumulator.
fn check_output_line(line: &str, pack_limit: usize, acc: &mut StatsAcc) -> crate::Result<()> {
    let v: Value = serde_json::from_str(line).map_err(|e| Error::Parse(e.to_string()))?;
    let task: Task = v
        .get("task")
        .cloned()
        .ok_or_else(|| Error::Parse("record has no task".into()))
        .and_then(|t| serde_json::from_value(t).map_err(|e| Error::Parse(e.to_string())))?;
    if task.is_localization() && v.get("qa").is_some() {
        let s: PackedSample = serde_json::from_value(v).map_err(|e| Error::Parse(e.to_string()))?;
        s.validate(pack_limit)?;
        acc.add(s.task, Some(s.granularity), s.qa.iter().map(|q| answer_tokens(&q.answer)));
    } else {
        let s: TrainingSample =
            serde_json::from_value(v).map_err(|e| Error::Parse(e.to_string()))?;
        s.validate()?;
        acc.add(s.task, s.granularity, std::iter::once(answer_tokens(&s.answer)));
    }
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TableRecord {
    #[serde(default)]
    image_id: Option<String>,
    #[serde(default)]
    html: Option<String>,
    #[serde(default)]
    rows: Option<Vec<Vec<TableCell>>>,
}

fn from_json<T: for<'de> Deserialize<'de>>(line: &str) -> crate::Result<T> {
    serde_json::from_str(line).map_err(|e| Error::Parse(e.to_string()))
}

/// One input record turned into zero or more output lines.
struct Processed {
    image_id: String,
    lines: Vec<String>,
}

struct Ctx<'a> {
    cfg: &'a BuildConfig,
    pool: Vec<String>,
    loc: LocalizationConfig,
}

fn process(ctx: &Ctx, line_no: usize, index: u64, line: &str) -> crate::Result<Processed> {
    let cfg = ctx.cfg;
    let seed = cfg.seed.wrapping_add(index);
    let to_line = |s: &TrainingSample| serde_json::to_string(s).expect("samples serialize");
    let (image_id, lines) = match cfg.task {
        BuildTask::Doc | BuildTask::Natural | BuildTask::Localization => {
            let page: OcrPage = from_json(line)?;
            page.validate()?;
            let lines = match cfg.task {
                BuildTask::Doc => vec![to_line(&build_doc_parse_sample(&page, &cfg.spacing, &ctx.pool, seed)?)],
                BuildTask::Natural => vec![to_line(&build_natural_parse_sample(&page, &ctx.pool, seed)?)],
                _ => build_localization_samples(&page, &ctx.loc, derive_seed(cfg.seed, &page.image_id))
                    .iter()
                    .map(|s| serde_json::to_string(s).expect("samples serialize"))
                    .collect(),
            };
            (page.image_id, lines)
        }
        BuildTask::Table => {
            let rec: TableRecord = from_json(line)?;
            let grid = match (rec.html, rec.rows) {
                (Some(h), None) => html_to_grid(&h)?,
                (None, Some(rows)) => TableGrid::new(rows),
                _ => {
                    return Err(Error::Parse(
                        "table record needs exactly one of \"html\" or \"rows\"".into(),
                    ))
                }
            };
            let id = rec.image_id.unwrap_or_else(|| format!("table-{line_no}"));
            let s = build_table_parse_sample(id.clone(), &grid, &ctx.pool, seed)?;
            (id, vec![to_line(&s)])
        }
        BuildTask::Chart => {
            let mut v: Value = from_json(line)?;
            let obj = v
                .as_object_mut()
                .ok_or_else(|| Error::Parse("chart record must be an object".into()))?;
            let id = match obj.remove("image_id") {
                Some(Value::String(s)) => s,
                None => format!("chart-{line_no}"),
                Some(_) => return Err(Error::Parse("image_id must be a string".into())),
            };
            let chart = match obj.remove("csv") {
                Some(Value::String(text)) if obj.is_empty() => ChartData::from_csv(&text)?,
                Some(_) => {
                    return Err(Error::Parse(
                        "\"csv\" must be a string and the only data field".into(),
                    ))
                }
                None => serde_json::from_value(v).map_err(|e| Error::Parse(e.to_string()))?,
            };
            let s = build_chart_parse_sample(id.clone(), &chart, &ctx.pool, seed)?;
            (id, vec![to_line(&s)])
        }
    };
    Ok(Processed { image_id, lines })
}

/// Reads non-blank lines of `path` in chunks of `(line number, text)`.
fn for_each_chunk(
    path: &Path,
    mut f: impl FnMut(Vec<(usize, String)>) -> Result<(), PipelineError>,
) -> Result<(), PipelineError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut chunk = Vec::with_capacity(CHUNK_LINES);
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        chunk.push((i + 1, line));
        if chunk.len() == CHUNK_LINES {
            f(std::mem::take(&mut chunk))?;
        }
    }
    if !chunk.is_empty() {
        f(chunk)?;
    }
    Ok(())
}

/// Builds one corpus; on any error no output file is left behind.
pub fn run_build(cfg: &BuildConfig) -> Result<CorpusStats, PipelineError> {
    let task = cfg.task.task();
    let pool = cfg.instructions.clone().unwrap_or_else(|| default_instructions(task));
    if cfg.task != BuildTask::Localization && pool.is_empty() {
        return Err(PipelineError::Config(Error::Config("instruction pool is empty".into())));
    }
    if cfg.pack_limit == 0 {
        return Err(PipelineError::Config(Error::Config("pack limit must be at least 1".into())));
    }
    let ctx = Ctx {
        cfg,
        pool,
        loc: LocalizationConfig {
            granularities: cfg.granularities.clone(),
            per_page_limit: cfg.per_page_limit,
            pack_limit: cfg.pack_limit,
            ..Default::default()
        },
    };
    // fail on a missing input before touching the output directory
    File::open(&cfg.input).map_err(io_err(&cfg.input))?;

    let dir = match cfg.output.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_owned(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let tmp = tempfile::NamedTempFile::new_in(&dir).map_err(io_err(&dir))?;
    let mut out = BufWriter::new(tmp.as_file());
    let mut seen = HashSet::new();
    let mut index = 0u64;
    for_each_chunk(&cfg.input, |chunk| {
        let base = index;
        index += chunk.len() as u64;
        let results: Vec<_> = chunk
            .par_iter()
            .enumerate()
            .map(|(k, (n, line))| process(&ctx, *n, base + k as u64, line))
            .collect();
        for ((line_no, _), r) in chunk.iter().zip(results) {
            let rec = |source| PipelineError::Record {
                path: cfg.input.clone(),
                line: *line_no,
                source,
            };
            let p = r.map_err(rec)?;
            if !seen.insert(p.image_id.clone()) {
                return Err(rec(Error::Domain(format!("duplicate image_id {:?}", p.image_id))));
            }
            for l in p.lines {
                writeln!(out, "{l}").map_err(io_err(tmp.path()))?;
            }
        }
        Ok(())
    })?;
    out.flush().map_err(io_err(tmp.path()))?;
    drop(out);

    let stats = scan_corpus(tmp.path(), cfg.pack_limit)?;
    tmp.persist(&cfg.output).map_err(|e| PipelineError::Io {
        path: cfg.output.clone(),
        source: e.error,
    })?;
    Ok(stats)
}

fn scan_corpus(path: &Path, pack_limit: usize) -> Result<CorpusStats, PipelineError> {
    let mut acc = StatsAcc::default();
    for_each_chunk(path, |chunk| {
        for (n, line) in chunk {
            check_output_line(&line, pack_limit, &mut acc).map_err(|source| {
                PipelineError::Record {
                    path: path.to_owned(),
                    line: n,
                    source,
                }
            })?;
        }
        Ok(())
    })?;
    Ok(acc.finish())
}

/// Counts and validates the records of a built corpus.
pub fn run_stats(path: &Path) -> Result<CorpusStats, PipelineError> {
    scan_corpus(path, usize::MAX)
}

#[derive(Deserialize)]
struct EvalLine {
    prediction: String,
    gold: Value,
    granularity: Granularity,
    #[serde(default)]
    task: Option<Task>,
}

fn gold_box(v: &Value) -> crate::Result<BBox> {
    match v {
        Value::String(s) => parse_token_string(s),
        Value::Array(_) => serde_json::from_value(v.clone()).map_err(|e| Error::Parse(e.to_string())),
        _ => Err(Error::Parse("gold box must be an array or a token string".into())),
    }
}

/// Scores a prediction file of `{prediction, gold, granularity, task?}` lines.
///
/// Records tagged with the other localization task are skipped. A report
/// whose total count is zero means nothing was scored.
pub fn run_eval(path: &Path, task: EvalTask, iou_threshold: f64) -> Result<EvalReport, PipelineError> {
    let want = match task {
        EvalTask::Grounding => Task::TextGrounding,
        EvalTask::Recognition => Task::TextRecognition,
    };
    let mut grounding = Vec::new();
    let mut recognition = Vec::new();
    let mut skipped = 0usize;
    for_each_chunk(path, |chunk| {
        for (n, line) in chunk {
            let rec = |source| PipelineError::Record {
                path: path.to_owned(),
                line: n,
                source,
            };
            let r: EvalLine = from_json(&line).map_err(rec)?;
            if r.task.is_some_and(|t| t != want) {
                skipped += 1;
                continue;
            }
            match task {
                EvalTask::Grounding => grounding.push(GroundingRecord {
                    prediction: r.prediction,
                    gold: gold_box(&r.gold).map_err(rec)?,
                    granularity: r.granularity,
                }),
                EvalTask::Recognition => recognition.push(RecognitionRecord {
                    prediction: r.prediction,
                    gold: r
                        .gold
                        .as_str()
                        .ok_or_else(|| rec(Error::Parse("gold text must be a string".into())))?
                        .to_owned(),
                    granularity: r.granularity,
                }),
            }
        }
        Ok(())
    })?;
    let mut report = match task {
        EvalTask::Grounding => EvalReport::grounding(grounding_accuracy(&grounding, iou_threshold), iou_threshold),
        EvalTask::Recognition => EvalReport::recognition(recognition_score(&recognition)),
    };
    if skipped > 0 {
        report.notes.push(format!("{skipped} records of another task skipped"));
    }
    if report.scores.total() == 0 {
        report.notes.push("no records were scored".into());
    }
    Ok(report)
}
