//! Multi-grained text grounding and recognition samples.
//!
//! Candidates are enumerated at four granularities from the page's line
//! groups. Grounding asks for the box of a text span, recognition asks for the
//! text inside a box. Word and phrase pairs are packed several to a sample,
//! line and block pairs go one per sample.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{bbox_to_token_string, BBox};
use crate::layout::{estimate_char_width, group_lines, CharWidthEstimator, LineGroup};
use crate::model::{Granularity, OcrPage, Task};
use crate::seeding::{derive_seed, shuffle};

/// Words smaller than this normalized area are never word candidates.
pub const MIN_WORD_AREA: f64 = 0.001;
/// Longest phrase, in words.
pub const MAX_PHRASE_WORDS: usize = 8;
/// Largest gap between consecutive phrase words, in character widths.
pub const MAX_PHRASE_GAP_CHARS: f64 = 2.0;
/// Default number of QA pairs packed into one word or phrase sample.
pub const DEFAULT_PACK_LIMIT: usize = 5;
/// Default number of candidates kept per granularity per page.
pub const DEFAULT_PER_PAGE_LIMIT: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct SpanCandidate {
    pub granularity: Granularity,
    pub text: String,
    /// Tight union of the member word boxes.
    pub bbox: BBox,
    /// Indices of the member words in the source page.
    pub member_indices: Vec<usize>,
}

fn union_of(groups_words: impl IntoIterator<Item = BBox>) -> BBox {
    let boxes: Vec<BBox> = groups_words.into_iter().collect();
    BBox::union_all(&boxes).expect("candidates have at least one word")
}

/// All candidates of granularity `g`, in reading order then span length.
pub fn enumerate_candidates(page: &OcrPage, g: Granularity) -> Vec<SpanCandidate> {
    let groups = group_lines(page);
    enumerate_from_groups(page, &groups, g)
}

/// Same as [`enumerate_candidates`] over precomputed line groups.
pub fn enumerate_from_groups(
    page: &OcrPage,
    groups: &[LineGroup],
    g: Granularity,
) -> Vec<SpanCandidate> {
    match g {
        Granularity::Word => word_candidates(page, groups),
        Granularity::Phrase => phrase_candidates(page, groups),
        Granularity::Line => groups
            .iter()
            .map(|line| SpanCandidate {
                granularity: g,
                text: line.text(),
                bbox: union_of(line.words.iter().map(|w| *w.bbox())),
                member_indices: line.indices.clone(),
            })
            .collect(),
        Granularity::Block => block_candidates(groups),
    }
}

fn word_candidates(page: &OcrPage, groups: &[LineGroup]) -> Vec<SpanCandidate> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for w in &page.words {
        *counts.entry(w.text()).or_default() += 1;
    }
    groups
        .iter()
        .flat_map(|line| line.words.iter().zip(&line.indices))
        .filter(|(w, _)| w.bbox().area() >= MIN_WORD_AREA && counts[w.text()] == 1)
        .map(|(w, &i)| SpanCandidate {
            granularity: Granularity::Word,
            text: w.text().to_owned(),
            bbox: *w.bbox(),
            member_indices: vec![i],
        })
        .collect()
}

fn phrase_candidates(page: &OcrPage, groups: &[LineGroup]) -> Vec<SpanCandidate> {
    let char_width = estimate_char_width(&page.words, CharWidthEstimator::MedianWordBox);
    let max_gap = MAX_PHRASE_GAP_CHARS * char_width;
    let mut out = Vec::new();
    for line in groups {
        let n = line.words.len();
        for start in 0..n {
            let max_len = MAX_PHRASE_WORDS.min(n - start);
            for len in 2..=max_len {
                let last = start + len - 1;
                let gap = line.words[last].bbox().x1() - line.words[last - 1].bbox().x2();
                if gap > max_gap {
                    break;
                }
                let words = &line.words[start..=last];
                out.push(SpanCandidate {
                    granularity: Granularity::Phrase,
                    text: words.iter().map(|w| w.text()).collect::<Vec<_>>().join(" "),
                    bbox: union_of(words.iter().map(|w| *w.bbox())),
                    member_indices: line.indices[start..=last].to_vec(),
                });
            }
        }
    }
    out
}

fn block_candidates(groups: &[LineGroup]) -> Vec<SpanCandidate> {
    let n = groups.len();
    let max_k = n / 2;
    let mut out = Vec::new();
    for start in 0..n {
        for k in 2..=max_k {
            if start + k > n {
                break;
            }
            let lines = &groups[start..start + k];
            out.push(SpanCandidate {
                granularity: Granularity::Block,
                text: lines.iter().map(LineGroup::text).collect::<Vec<_>>().join("\n"),
                bbox: union_of(lines.iter().flat_map(|l| l.words.iter().map(|w| *w.bbox()))),
                member_indices: lines.iter().flat_map(|l| l.indices.iter().copied()).collect(),
            });
        }
    }
    out
}

/// Instruction templates with a required placeholder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplatePool {
    templates: Vec<String>,
    placeholder: &'static str,
}

pub const TEXT_PLACEHOLDER: &str = "{text}";
pub const BBOX_PLACEHOLDER: &str = "{bbox}";

impl TemplatePool {
    fn new(templates: Vec<String>, placeholder: &'static str) -> Result<Self> {
        if templates.is_empty() {
            return Err(Error::Config("template pool is empty".into()));
        }
        if let Some(t) = templates.iter().find(|t| !t.contains(placeholder)) {
            return Err(Error::Config(format!("template {t:?} lacks {placeholder}")));
        }
        Ok(Self {
            templates,
            placeholder,
        })
    }

    /// Grounding templates; each must contain `{text}`.
    pub fn grounding(templates: Vec<String>) -> Result<Self> {
        Self::new(templates, TEXT_PLACEHOLDER)
    }

    /// Recognition templates; each must contain `{bbox}`.
    pub fn recognition(templates: Vec<String>) -> Result<Self> {
        Self::new(templates, BBOX_PLACEHOLDER)
    }

    pub fn render(&self, seed: u64, value: &str) -> String {
        let t = &self.templates[(seed % self.templates.len() as u64) as usize];
        t.replace(self.placeholder, value)
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPair {
    pub instruction: String,
    pub answer: String,
}

/// Text → box.
pub fn make_grounding_sample(c: &SpanCandidate, templates: &TemplatePool, seed: u64) -> QaPair {
    QaPair {
        instruction: templates.render(seed, &c.text),
        answer: bbox_to_token_string(&c.bbox),
    }
}

/// Box → text.
pub fn make_recognition_sample(c: &SpanCandidate, templates: &TemplatePool, seed: u64) -> QaPair {
    QaPair {
        instruction: templates.render(seed, &bbox_to_token_string(&c.bbox)),
        answer: c.text.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackedSample {
    pub image_id: String,
    pub task: Task,
    pub granularity: Granularity,
    pub qa: Vec<QaPair>,
}

impl PackedSample {
    pub fn validate(&self, pack_limit: usize) -> Result<()> {
        if !self.task.is_localization() {
            return Err(Error::Domain(format!(
                "packed sample has non-localization task {}",
                self.task
            )));
        }
        let max = match self.granularity {
            Granularity::Word | Granularity::Phrase => pack_limit,
            Granularity::Line | Granularity::Block => 1,
        };
        if self.qa.is_empty() || self.qa.len() > max {
            return Err(Error::Domain(format!(
                "{} {} sample has {} QA pairs, allowed 1..={max}",
                self.granularity,
                self.task,
                self.qa.len()
            )));
        }
        Ok(())
    }
}

/// Shuffles word/phrase pairs by `seed` and chunks them `pack_limit` at a
/// time; line and block pairs become one sample each.
pub fn pack_samples(
    image_id: &str,
    task: Task,
    g: Granularity,
    mut pairs: Vec<QaPair>,
    pack_limit: usize,
    seed: u64,
) -> Vec<PackedSample> {
    let chunk = match g {
        Granularity::Word | Granularity::Phrase => {
            shuffle(&mut pairs, seed);
            pack_limit.max(1)
        }
        Granularity::Line | Granularity::Block => 1,
    };
    let mut out = Vec::with_capacity(pairs.len().div_ceil(chunk));
    let mut it = pairs.into_iter().peekable();
    while it.peek().is_some() {
        out.push(PackedSample {
            image_id: image_id.to_owned(),
            task,
            granularity: g,
            qa: it.by_ref().take(chunk).collect(),
        });
    }
    out
}

/// Keeps at most `limit` candidates chosen by seeded shuffle, in their
/// original order.
pub fn subsample(cands: Vec<SpanCandidate>, limit: usize, seed: u64) -> Vec<SpanCandidate> {
    if cands.len() <= limit {
        return cands;
    }
    let mut idx: Vec<usize> = (0..cands.len()).collect();
    shuffle(&mut idx, seed);
    idx.truncate(limit);
    idx.sort_unstable();
    let mut keep = vec![false; cands.len()];
    for i in idx {
        keep[i] = true;
    }
    cands
        .into_iter()
        .zip(keep)
        .filter_map(|(c, k)| k.then_some(c))
        .collect()
}

pub fn default_grounding_templates() -> TemplatePool {
    TemplatePool::grounding(
        [
            "Identify the bounding box of the text: {text}",
            "Where is \"{text}\" located in the image? Answer with a bounding box.",
            "Give the position of the following text: {text}",
            "Detect the region containing: {text}",
            "Locate the text \"{text}\".",
        ]
        .map(String::from)
        .to_vec(),
    )
    .expect("default grounding templates are valid")
}

pub fn default_recognition_templates() -> TemplatePool {
    TemplatePool::recognition(
        [
            "Recognize the text in the bounding box {bbox}.",
            "What text is written inside {bbox}?",
            "Read the text located at {bbox}.",
            "Transcribe the content of region {bbox}.",
            "Identify the text within the bounding box {bbox}.",
        ]
        .map(String::from)
        .to_vec(),
    )
    .expect("default recognition templates are valid")
}

#[derive(Debug, Clone)]
pub struct LocalizationConfig {
    pub granularities: Vec<Granularity>,
    pub per_page_limit: usize,
    pub pack_limit: usize,
    pub grounding: TemplatePool,
    pub recognition: TemplatePool,
}

impl Default for LocalizationConfig {
    fn default() -> Self {
        Self {
            granularities: Granularity::ALL.to_vec(),
            per_page_limit: DEFAULT_PER_PAGE_LIMIT,
            pack_limit: DEFAULT_PACK_LIMIT,
            grounding: default_grounding_templates(),
            recognition: default_recognition_templates(),
        }
    }
}

/// Grounding then recognition samples for each configured granularity.
///
/// `page_seed` should be derived from the global seed and the image id.
pub fn build_localization_samples(
    page: &OcrPage,
    cfg: &LocalizationConfig,
    page_seed: u64,
) -> Vec<PackedSample> {
    let groups = group_lines(page);
    let mut out = Vec::new();
    for &g in &cfg.granularities {
        let cands = enumerate_from_groups(page, &groups, g);
        let cands = subsample(cands, cfg.per_page_limit, derive_seed(page_seed, &format!("subsample/{g}")));
        if cands.is_empty() {
            continue;
        }
        let t_seed = derive_seed(page_seed, &format!("template/{g}"));
        let grounding: Vec<QaPair> = cands
            .iter()
            .enumerate()
            .map(|(i, c)| make_grounding_sample(c, &cfg.grounding, t_seed.wrapping_add(i as u64)))
            .collect();
        let recognition: Vec<QaPair> = cands
            .iter()
            .enumerate()
            .map(|(i, c)| make_recognition_sample(c, &cfg.recognition, t_seed.wrapping_add(i as u64)))
            .collect();
        out.extend(pack_samples(
            &page.image_id,
            Task::TextGrounding,
            g,
            grounding,
            cfg.pack_limit,
            derive_seed(page_seed, &format!("pack/grounding/{g}")),
        ));
        out.extend(pack_samples(
            &page.image_id,
            Task::TextRecognition,
            g,
            recognition,
            cfg.pack_limit,
            derive_seed(page_seed, &format!("pack/recognition/{g}")),
        ));
    }
    out
}
