//! Shape-adaptive crop planning and visual token layout.
//!
//! A raw image is stretched onto a `rows × cols` canvas of fixed-size cells
//! whose aspect ratio best matches the image. Each cell becomes one crop, a
//! resized global view is added in front, and every view is announced to the
//! decoder by a textual indicator token.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_MAX_CROPS: u32 = 9;
pub const DEFAULT_CELL_PX: u32 = 448;
/// Visual tokens per view after the H-Reducer (1,024 patches / 4).
pub const DEFAULT_VISUAL_TOKENS: usize = 256;

pub const GLOBAL_IMAGE_TOKEN: &str = "<global_img>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropGrid {
    pub rows: u32,
    pub cols: u32,
    pub cell_px: u32,
}

impl CropGrid {
    pub fn crops(&self) -> u32 {
        self.rows * self.cols
    }
}

/// Pixel rectangle on the resized canvas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelRect {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl PixelRect {
    pub fn area(&self) -> u64 {
        u64::from(self.width) * u64::from(self.height)
    }

    pub fn intersects(&self, other: &PixelRect) -> bool {
        self.x < other.x + other.width
            && other.x < self.x + self.width
            && self.y < other.y + other.height
            && other.y < self.y + self.height
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResizeMode {
    /// Aspect-distorting stretch onto the grid canvas.
    Stretch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropPlan {
    pub grid: CropGrid,
    pub source_width_px: u32,
    pub source_height_px: u32,
    pub canvas_width_px: u32,
    pub canvas_height_px: u32,
    pub resize_mode: ResizeMode,
    /// Row-major crops over the canvas.
    pub crop_rects: Vec<PixelRect>,
    pub global_rect: PixelRect,
    /// Global indicator first, then one per crop in row-major order.
    pub indicator_tokens: Vec<String>,
}

/// Indicator token for the crop at 1-based `row`, `col`.
pub fn crop_token(row: u32, col: u32) -> String {
    format!("<row{row}_col{col}>")
}

/// `max(a, b) / min(a, b)` as an exact fraction, where `a / b` is the image
/// aspect divided by the grid aspect. Its log is the aspect score.
fn aspect_mismatch(width: u32, height: u32, rows: u32, cols: u32) -> (u128, u128) {
    let a = u128::from(width) * u128::from(rows);
    let b = u128::from(height) * u128::from(cols);
    (a.max(b), a.min(b))
}

/// Aspect score `|ln(width/height) − ln(cols/rows)|` of a candidate grid.
pub fn aspect_score(width: u32, height: u32, rows: u32, cols: u32) -> f64 {
    (f64::from(width).ln() - f64::from(height).ln() - (f64::from(cols).ln() - f64::from(rows).ln()))
        .abs()
}

/// Picks the grid with `rows · cols <= max_crops` whose aspect best matches
/// the image, preferring more cells and then more columns on ties.
///
/// Scores are compared as exact fractions so ties are detected exactly.
pub fn select_grid(width_px: u32, height_px: u32, max_crops: u32, cell_px: u32) -> Result<CropGrid> {
    if max_crops < 1 {
        return Err(Error::Config("max_crops must be at least 1".into()));
    }
    if cell_px < 1 {
        return Err(Error::Config("cell_px must be at least 1".into()));
    }
    if width_px < 1 || height_px < 1 {
        return Err(Error::Domain(format!(
            "image size {width_px}x{height_px} must be positive"
        )));
    }

    let mut best: Option<((u128, u128), u32, u32)> = None;
    for rows in 1..=max_crops {
        for cols in 1..=max_crops / rows {
            let score = aspect_mismatch(width_px, height_px, rows, cols);
            let better = match best {
                None => true,
                Some((bs, br, bc)) => {
                    // score < best  ⇔  s.0 / s.1 < b.0 / b.1
                    let lhs = score.0 * bs.1;
                    let rhs = bs.0 * score.1;
                    lhs < rhs
                        || (lhs == rhs
                            && (rows * cols > br * bc || (rows * cols == br * bc && cols > bc)))
                }
            };
            if better {
                best = Some((score, rows, cols));
            }
        }
    }
    let (_, rows, cols) = best.expect("at least the 1x1 grid is a candidate");
    Ok(CropGrid {
        rows,
        cols,
        cell_px,
    })
}

pub fn plan_crops(width_px: u32, height_px: u32, max_crops: u32, cell_px: u32) -> Result<CropPlan> {
    let grid = select_grid(width_px, height_px, max_crops, cell_px)?;
    let mut crop_rects = Vec::with_capacity(grid.crops() as usize);
    let mut indicator_tokens = vec![GLOBAL_IMAGE_TOKEN.to_owned()];
    for r in 0..grid.rows {
        for c in 0..grid.cols {
            crop_rects.push(PixelRect {
                x: c * cell_px,
                y: r * cell_px,
                width: cell_px,
                height: cell_px,
            });
            indicator_tokens.push(crop_token(r + 1, c + 1));
        }
    }
    Ok(CropPlan {
        grid,
        source_width_px: width_px,
        source_height_px: height_px,
        canvas_width_px: grid.cols * cell_px,
        canvas_height_px: grid.rows * cell_px,
        resize_mode: ResizeMode::Stretch,
        crop_rects,
        global_rect: PixelRect {
            x: 0,
            y: 0,
            width: cell_px,
            height: cell_px,
        },
        indicator_tokens,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    Indicator,
    Visual,
    Instruction,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: SegmentKind,
    pub length: usize,
    /// Indicator text for indicator segments.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token: Option<String>,
}

/// Decoder input layout: `T_0, V_0, T_1, V_1, …, T_C, V_C, X`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceLayout {
    pub segments: Vec<Segment>,
}

impl SequenceLayout {
    fn total(&self, kind: SegmentKind) -> usize {
        self.segments
            .iter()
            .filter(|s| s.kind == kind)
            .map(|s| s.length)
            .sum()
    }

    pub fn visual_tokens(&self) -> usize {
        self.total(SegmentKind::Visual)
    }

    pub fn indicator_tokens(&self) -> usize {
        self.total(SegmentKind::Indicator)
    }

    pub fn instruction_tokens(&self) -> usize {
        self.total(SegmentKind::Instruction)
    }

    pub fn total_tokens(&self) -> usize {
        self.segments.iter().map(|s| s.length).sum()
    }
}

pub fn layout_sequence(
    plan: &CropPlan,
    visual_tokens_per_image: usize,
    instruction_tokens: usize,
) -> Result<SequenceLayout> {
    if visual_tokens_per_image < 1 {
        return Err(Error::Config("visual_tokens_per_image must be at least 1".into()));
    }
    let mut segments = Vec::with_capacity(2 * plan.indicator_tokens.len() + 1);
    for token in &plan.indicator_tokens {
        segments.push(Segment {
            kind: SegmentKind::Indicator,
            length: 1,
            token: Some(token.clone()),
        });
        segments.push(Segment {
            kind: SegmentKind::Visual,
            length: visual_tokens_per_image,
            token: None,
        });
    }
    segments.push(Segment {
        kind: SegmentKind::Instruction,
        length: instruction_tokens,
        token: None,
    });
    Ok(SequenceLayout { segments })
}
