//! Grounding accuracy at an IoU threshold and granularity-mapped BLEU for
//! text recognition.
//!
//! Text is case-folded and split on whitespace before BLEU. Word, phrase,
//! line and block spans are scored with BLEU-1 through BLEU-4 respectively.
//! Scores are unsmoothed.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::geometry::{parse_token_string, BBox};
use crate::model::Granularity;

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

/// Slack on the IoU comparison; dequantized bin centers make an IoU that is
/// exactly at the threshold land a few ulps below it.
const IOU_SLACK: f64 = 1e-9;

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundingRecord {
    pub prediction: String,
    pub gold: BBox,
    pub granularity: Granularity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecognitionRecord {
    pub prediction: String,
    pub gold: String,
    pub granularity: Granularity,
}

/// Mean score over a group of records.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Cell {
    pub count: usize,
    pub score: f64,
}

/// Per-granularity scores plus micro (over records) and macro (over
/// granularities) averages.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GranularityReport {
    pub word: Cell,
    pub phrase: Cell,
    pub line: Cell,
    pub block: Cell,
    pub all_micro: Cell,
    pub all_macro: f64,
}

impl GranularityReport {
    pub fn get(&self, g: Granularity) -> &Cell {
        match g {
            Granularity::Word => &self.word,
            Granularity::Phrase => &self.phrase,
            Granularity::Line => &self.line,
            Granularity::Block => &self.block,
        }
    }

    fn from_scores(scores: impl IntoIterator<Item = (Granularity, f64)>) -> Self {
        let mut sums: BTreeMap<Granularity, (usize, f64)> = BTreeMap::new();
        for (g, s) in scores {
            let e = sums.entry(g).or_default();
            e.0 += 1;
            e.1 += s;
        }
        let cell = |g| {
            sums.get(&g).map_or(Cell::default(), |&(n, s)| Cell {
                count: n,
                score: s / n as f64,
            })
        };
        let total: usize = sums.values().map(|v| v.0).sum();
        let sum: f64 = sums.values().map(|v| v.1).sum();
        let present: Vec<f64> = sums.values().map(|&(n, s)| s / n as f64).collect();
        Self {
            word: cell(Granularity::Word),
            phrase: cell(Granularity::Phrase),
            line: cell(Granularity::Line),
            block: cell(Granularity::Block),
            all_micro: Cell {
                count: total,
                score: if total == 0 { 0.0 } else { sum / total as f64 },
            },
            all_macro: if present.is_empty() {
                0.0
            } else {
                present.iter().sum::<f64>() / present.len() as f64
            },
        }
    }

    pub fn total(&self) -> usize {
        self.all_micro.count
    }
}

/// Whether a raw grounding prediction hits the gold box.
pub fn grounding_hit(prediction: &str, gold: &BBox, threshold: f64) -> bool {
    parse_token_string(prediction)
        .map(|p| iou(&p, gold) + IOU_SLACK >= threshold)
        .unwrap_or(false)
}

/// Fraction of records whose parsed prediction reaches `threshold` IoU;
/// unparseable predictions count as misses.
pub fn grounding_accuracy(records: &[GroundingRecord], threshold: f64) -> GranularityReport {
    GranularityReport::from_scores(records.iter().map(|r| {
        let hit = grounding_hit(&r.prediction, &r.gold, threshold);
        (r.granularity, if hit { 1.0 } else { 0.0 })
    }))
}

pub fn tokenize(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_lowercase).collect()
}

fn ngram_counts(tokens: &[String], k: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    for g in tokens.windows(k) {
        *counts.entry(g).or_insert(0) += 1;
    }
    counts
}

/// BLEU with uniform weights over orders `1..=min(n, prediction length)`,
/// clipped counts, and brevity penalty against the closest reference length.
pub fn bleu_n<S: AsRef<str>>(prediction: &str, references: &[S], n: usize) -> f64 {
    let pred = tokenize(prediction);
    let refs: Vec<Vec<String>> = references.iter().map(|r| tokenize(r.as_ref())).collect();
    if pred.is_empty() || refs.is_empty() || n == 0 {
        return 0.0;
    }
    let order = n.min(pred.len());

    let mut log_sum = 0.0;
    for k in 1..=order {
        let pc = ngram_counts(&pred, k);
        let mut max_ref: HashMap<&[String], usize> = HashMap::new();
        for r in &refs {
            for (g, c) in ngram_counts(r, k) {
                let e = max_ref.entry(g).or_insert(0);
                *e = (*e).max(c);
            }
        }
        let matched: usize = pc
            .iter()
            .map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0)))
            .sum();
        if matched == 0 {
            return 0.0;
        }
        let total = pred.len() + 1 - k;
        log_sum += (matched as f64 / total as f64).ln();
    }

    let c = pred.len();
    let r = refs
        .iter()
        .map(Vec::len)
        .min_by_key(|&len| (len.abs_diff(c), len))
        .expect("at least one reference");
    let bp = if c >= r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    bp * (log_sum / order as f64).exp()
}

/// BLEU order used for each granularity.
pub fn bleu_order(g: Granularity) -> usize {
    match g {
        Granularity::Word => 1,
        Granularity::Phrase => 2,
        Granularity::Line => 3,
        Granularity::Block => 4,
    }
}

pub fn recognition_score(records: &[RecognitionRecord]) -> GranularityReport {
    GranularityReport::from_scores(records.iter().map(|r| {
        (
            r.granularity,
            bleu_n(&r.prediction, &[r.gold.as_str()], bleu_order(r.granularity)),
        )
    }))
}

/// Which localization task a report covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalTask {
    Grounding,
    Recognition,
}

/// Machine-readable evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: EvalTask,
    pub metric: String,
    pub scores: GranularityReport,
    pub notes: Vec<String>,
}

impl EvalReport {
    pub fn grounding(scores: GranularityReport, threshold: f64) -> Self {
        Self {
            task: EvalTask::Grounding,
            metric: format!("IoU@{threshold} accuracy"),
            scores,
            notes: vec![
                "unparseable predictions count as incorrect".into(),
                "ALL(micro) averages records, ALL(macro) averages granularities".into(),
            ],
        }
    }

    pub fn recognition(scores: GranularityReport) -> Self {
        Self {
            task: EvalTask::Recognition,
            metric: "BLEU1/2/3/4 for word/phrase/line/block".into(),
            scores,
            notes: vec![
                "text is case-folded and whitespace-tokenized".into(),
                "BLEU is unsmoothed; order is capped at the prediction length".into(),
                "ALL(micro) averages records, ALL(macro) averages granularities".into(),
            ],
        }
    }

    /// Table with Word, Phrase, Line, Block and ALL columns.
    pub fn render_table(&self) -> String {
        let s = &self.scores;
        let pct = |v: f64| format!("{:.2}", 100.0 * v);
        let mut out = String::new();
        let _ = writeln!(out, "# {:?}: {}", self.task, self.metric);
        for n in &self.notes {
            let _ = writeln!(out, "# {n}");
        }
        let _ = writeln!(
            out,
            "{:<8} {:>8} {:>8} {:>8} {:>8} {:>10} {:>10}",
            "", "Word", "Phrase", "Line", "Block", "ALL(micro)", "ALL(macro)"
        );
        let _ = writeln!(
            out,
            "{:<8} {:>8} {:>8} {:>8} {:>8} {:>10} {:>10}",
            "score",
            pct(s.word.score),
            pct(s.phrase.score),
            pct(s.line.score),
            pct(s.block.score),
            pct(s.all_micro.score),
            pct(s.all_macro)
        );
        let _ = writeln!(
            out,
            "{:<8} {:>8} {:>8} {:>8} {:>8} {:>10} {:>10}",
            "count", s.word.count, s.phrase.count, s.line.count, s.block.count, s.all_micro.count, ""
        );
        out
    }
}
