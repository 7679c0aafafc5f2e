//! Shared domain records: OCR words and pages, granularities, and the
//! instruction/answer training sample emitted by every builder.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

/// One OCR word with its box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawWord", into = "RawWord")]
pub struct Word {
    text: String,
    bbox: BBox,
}

#[derive(Serialize, Deserialize)]
struct RawWord {
    text: String,
    bbox: BBox,
}

impl TryFrom<RawWord> for Word {
    type Error = Error;

    fn try_from(raw: RawWord) -> Result<Self> {
        Word::new(raw.text, raw.bbox)
    }
}

impl From<Word> for RawWord {
    fn from(w: Word) -> Self {
        RawWord { text: w.text, bbox: w.bbox }
    }
}

impl Word {
    pub fn new(text: impl Into<String>, bbox: BBox) -> Result<Self> {
        let text = text.into();
        if text.is_empty() {
            return Err(Error::Domain("word text is empty".into()));
        }
        if text.contains(['\n', '\r']) {
            return Err(Error::Domain(format!("word text {text:?} contains a line feed")));
        }
        Ok(Self { text, bbox })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn bbox(&self) -> &BBox {
        &self.bbox
    }
}

/// Word-level OCR annotation of one image, plus an optional caption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcrPage {
    pub image_id: String,
    pub width_px: u32,
    pub height_px: u32,
    #[serde(default)]
    pub words: Vec<Word>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<String>,
}

impl OcrPage {
    /// Checks the invariants serde cannot: positive pixel dimensions.
    pub fn validate(&self) -> Result<()> {
        if self.width_px == 0 || self.height_px == 0 {
            return Err(Error::Domain(format!(
                "page {}: width_px and height_px must be positive",
                self.image_id
            )));
        }
        Ok(())
    }
}

/// Text span granularity for localization tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Granularity {
    #[serde(alias = "word")]
    Word,
    #[serde(alias = "phrase")]
    Phrase,
    #[serde(alias = "line")]
    Line,
    #[serde(alias = "block")]
    Block,
}

impl Granularity {
    pub const ALL: [Granularity; 4] = [
        Granularity::Word,
        Granularity::Phrase,
        Granularity::Line,
        Granularity::Block,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Granularity::Word => "word",
            Granularity::Phrase => "phrase",
            Granularity::Line => "line",
            Granularity::Block => "block",
        }
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Granularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "word" => Ok(Granularity::Word),
            "phrase" => Ok(Granularity::Phrase),
            "line" => Ok(Granularity::Line),
            "block" => Ok(Granularity::Block),
            other => Err(Error::Parse(format!("unknown granularity {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Task {
    DocParse,
    TableParse,
    ChartParse,
    NaturalParse,
    TextGrounding,
    TextRecognition,
}

impl Task {
    pub const ALL: [Task; 6] = [
        Task::DocParse,
        Task::TableParse,
        Task::ChartParse,
        Task::NaturalParse,
        Task::TextGrounding,
        Task::TextRecognition,
    ];

    pub fn is_localization(&self) -> bool {
        matches!(self, Task::TextGrounding | Task::TextRecognition)
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Instruction/answer pair; the output record of the parse builders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub image_id: String,
    pub task: Task,
    pub instruction: String,
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub granularity: Option<Granularity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boxes: Option<Vec<BBox>>,
}

impl TrainingSample {
    /// A parse-task sample: no granularity, no boxes.
    pub fn parse(image_id: impl Into<String>, task: Task, instruction: String, answer: String) -> Self {
        debug_assert!(!task.is_localization());
        Self {
            image_id: image_id.into(),
            task,
            instruction,
            answer,
            granularity: None,
            boxes: None,
        }
    }

    /// Localization samples carry a granularity and boxes, parse samples neither.
    pub fn validate(&self) -> Result<()> {
        let loc = self.task.is_localization();
        if loc != self.granularity.is_some() {
            return Err(Error::Domain(format!(
                "{}: granularity must be present iff the task is a localization task",
                self.task
            )));
        }
        if loc != self.boxes.is_some() {
            return Err(Error::Domain(format!(
                "{}: boxes must be present iff the task is a localization task",
                self.task
            )));
        }
        Ok(())
    }
}

/// Picks `pool[seed mod len]`, the seeded round-robin instruction choice.
pub fn pick_instruction(pool: &[String], seed: u64) -> Result<&str> {
    if pool.is_empty() {
        return Err(Error::Config("instruction pool is empty".into()));
    }
    Ok(&pool[(seed % pool.len() as u64) as usize])
}
