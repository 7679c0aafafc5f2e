//! Line grouping and structure-aware text rendering of OCR pages.
//!
//! Words whose vertical centers are close relative to their heights share a
//! line. Lines are separated by a single line feed and words on a line by a
//! number of spaces that grows with their horizontal distance, capped by
//! [`SpacingPolicy::max_consecutive_spaces`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{pick_instruction, OcrPage, Task, TrainingSample, Word};

/// Default cap on consecutive spaces between two words.
pub const DEFAULT_MAX_SPACES: usize = 4;

/// How the per-page character width is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum CharWidthEstimator {
    /// Median over words of `box width / max(1, char count)`.
    #[default]
    MedianWordBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpacingPolicy {
    pub max_consecutive_spaces: usize,
    #[serde(default)]
    pub char_width_estimator: CharWidthEstimator,
}

impl Default for SpacingPolicy {
    fn default() -> Self {
        Self {
            max_consecutive_spaces: DEFAULT_MAX_SPACES,
            char_width_estimator: CharWidthEstimator::MedianWordBox,
        }
    }
}

impl SpacingPolicy {
    pub fn new(max_consecutive_spaces: usize) -> Result<Self> {
        if max_consecutive_spaces < 1 {
            return Err(Error::Config("max_consecutive_spaces must be at least 1".into()));
        }
        Ok(Self {
            max_consecutive_spaces,
            ..Self::default()
        })
    }

    /// Number of spaces separating two same-line words `gap` apart.
    pub fn space_count(&self, gap: f64, char_width: f64) -> usize {
        let max = self.max_consecutive_spaces.max(1);
        if gap <= 0.0 {
            return 1;
        }
        let ratio = gap / char_width;
        if ratio.is_nan() {
            return 1;
        }
        let k = ratio.round();
        if k >= max as f64 {
            max
        } else {
            (k as usize).max(1)
        }
    }
}

/// Words judged to lie on one horizontal line, left to right.
#[derive(Debug, Clone, PartialEq)]
pub struct LineGroup {
    pub words: Vec<Word>,
    /// Index of each word in the source page, parallel to `words`.
    pub indices: Vec<usize>,
    pub y_center: f64,
    /// Mean word-box height.
    pub height: f64,
}

impl LineGroup {
    /// Words joined by single spaces.
    pub fn text(&self) -> String {
        join_words(&self.words, " ")
    }
}

fn join_words(words: &[Word], sep: &str) -> String {
    let mut out = String::new();
    for (i, w) in words.iter().enumerate() {
        if i > 0 {
            out.push_str(sep);
        }
        out.push_str(w.text());
    }
    out
}

fn same_line(a: &Word, b: &Word) -> bool {
    let dy = (a.bbox().y_center() - b.bbox().y_center()).abs();
    dy == 0.0 || dy < 0.5 * 0.5 * (a.bbox().height() + b.bbox().height())
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Partitions the page's words into lines.
///
/// Two words share a line when their vertical centers differ by less than
/// half their mean height; lines are the transitive closure of that relation.
pub fn group_lines(page: &OcrPage) -> Vec<LineGroup> {
    let words = &page.words;
    let n = words.len();
    if n == 0 {
        return Vec::new();
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        words[a]
            .bbox()
            .y_center()
            .total_cmp(&words[b].bbox().y_center())
            .then(a.cmp(&b))
    });
    let max_h = words
        .iter()
        .map(|w| w.bbox().height())
        .fold(0.0f64, f64::max);

    let mut parent: Vec<usize> = (0..n).collect();
    for (pos, &i) in order.iter().enumerate() {
        let yi = words[i].bbox().y_center();
        for &j in &order[pos + 1..] {
            // mean height never exceeds max_h, so nothing further down can match
            if words[j].bbox().y_center() - yi >= 0.5 * max_h && max_h > 0.0 {
                break;
            }
            if same_line(&words[i], &words[j]) {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        let r = find(&mut parent, i);
        members[r].push(i);
    }

    let mut groups: Vec<LineGroup> = members
        .into_iter()
        .filter(|m| !m.is_empty())
        .map(|mut idx| {
            idx.sort_by(|&a, &b| {
                words[a]
                    .bbox()
                    .x1()
                    .total_cmp(&words[b].bbox().x1())
                    .then(a.cmp(&b))
            });
            let count = idx.len() as f64;
            let y_center = idx.iter().map(|&i| words[i].bbox().y_center()).sum::<f64>() / count;
            let height = idx.iter().map(|&i| words[i].bbox().height()).sum::<f64>() / count;
            LineGroup {
                words: idx.iter().map(|&i| words[i].clone()).collect(),
                indices: idx,
                y_center,
                height,
            }
        })
        .collect();

    groups.sort_by(|a, b| {
        a.y_center
            .total_cmp(&b.y_center)
            .then(a.words[0].bbox().x1().total_cmp(&b.words[0].bbox().x1()))
            .then(a.indices[0].cmp(&b.indices[0]))
    });
    groups
}

/// Estimated width of one character on the page, 0 for an empty page.
pub fn estimate_char_width(words: &[Word], estimator: CharWidthEstimator) -> f64 {
    match estimator {
        CharWidthEstimator::MedianWordBox => {
            let mut widths: Vec<f64> = words
                .iter()
                .map(|w| w.bbox().width() / w.text().chars().count().max(1) as f64)
                .collect();
            if widths.is_empty() {
                return 0.0;
            }
            widths.sort_by(f64::total_cmp);
            let mid = widths.len() / 2;
            if widths.len() % 2 == 1 {
                widths[mid]
            } else {
                0.5 * (widths[mid - 1] + widths[mid])
            }
        }
    }
}

/// Renders lines with line feeds and distance-dependent spacing.
pub fn render_structure_text(page: &OcrPage, policy: &SpacingPolicy) -> String {
    let groups = group_lines(page);
    let char_width = estimate_char_width(&page.words, policy.char_width_estimator);
    render_groups(&groups, policy, char_width)
}

pub(crate) fn render_groups(groups: &[LineGroup], policy: &SpacingPolicy, char_width: f64) -> String {
    let mut out = String::new();
    for (li, group) in groups.iter().enumerate() {
        if li > 0 {
            out.push('\n');
        }
        for (wi, word) in group.words.iter().enumerate() {
            if wi > 0 {
                let prev = &group.words[wi - 1];
                let gap = word.bbox().x1() - prev.bbox().x2();
                let k = policy.space_count(gap, char_width);
                out.extend(std::iter::repeat_n(' ', k));
            }
            out.push_str(word.text());
        }
    }
    out
}

/// Document parsing sample: the structure-aware rendering of the page.
pub fn build_doc_parse_sample(
    page: &OcrPage,
    policy: &SpacingPolicy,
    instruction_pool: &[String],
    seed: u64,
) -> Result<TrainingSample> {
    let instruction = pick_instruction(instruction_pool, seed)?.to_owned();
    Ok(TrainingSample::parse(
        page.image_id.clone(),
        Task::DocParse,
        instruction,
        render_structure_text(page, policy),
    ))
}

/// Caption followed by the scene texts in reading order.
pub fn natural_parse_text(page: &OcrPage) -> Result<String> {
    let caption = page.caption.as_deref().ok_or_else(|| {
        Error::Precondition(format!("page {} has no caption", page.image_id))
    })?;
    let lines: Vec<String> = group_lines(page).iter().map(LineGroup::text).collect();
    if lines.is_empty() {
        return Ok(caption.to_owned());
    }
    Ok(format!("{caption}\n{}", lines.join("\n")))
}

/// Natural image parsing sample; requires a caption.
pub fn build_natural_parse_sample(
    page: &OcrPage,
    instruction_pool: &[String],
    seed: u64,
) -> Result<TrainingSample> {
    let instruction = pick_instruction(instruction_pool, seed)?.to_owned();
    Ok(TrainingSample::parse(
        page.image_id.clone(),
        Task::NaturalParse,
        instruction,
        natural_parse_text(page)?,
    ))
}
