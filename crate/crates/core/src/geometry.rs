//! Normalized boxes and their discrete position-token encoding.
//!
//! Every coordinate lives in `[0, 1]` relative to the full raw image with the
//! origin at the top-left corner. A coordinate is discretized into one of
//! [`NUM_POSITION_TOKENS`] bins and a box is serialized as
//! `<bbox>X1,Y1,X2,Y2</bbox>`.

use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of discrete position tokens, `0..=999`.
pub const NUM_POSITION_TOKENS: u32 = 1000;

/// Largest position token.
pub const MAX_POSITION_TOKEN: u32 = NUM_POSITION_TOKENS - 1;

static BBOX_SPAN: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"<bbox>\s*(\d{1,3})\s*,\s*(\d{1,3})\s*,\s*(\d{1,3})\s*,\s*(\d{1,3})\s*</bbox>")
        .expect("bbox span pattern is valid")
});

/// Axis-aligned rectangle in normalized image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl BBox {
    /// Builds a box, checking `0 <= x1 <= x2 <= 1` and `0 <= y1 <= y2 <= 1`.
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let ok = [x1, y1, x2, y2]
            .iter()
            .all(|v| v.is_finite() && (0.0..=1.0).contains(v))
            && x1 <= x2
            && y1 <= y2;
        if !ok {
            return Err(Error::Domain(format!(
                "invalid box ({x1}, {y1}, {x2}, {y2}): need 0 <= x1 <= x2 <= 1 and 0 <= y1 <= y2 <= 1"
            )));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }

    pub fn y1(&self) -> f64 {
        self.y1
    }

    pub fn x2(&self) -> f64 {
        self.x2
    }

    pub fn y2(&self) -> f64 {
        self.y2
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn x_center(&self) -> f64 {
        0.5 * (self.x1 + self.x2)
    }

    pub fn y_center(&self) -> f64 {
        0.5 * (self.y1 + self.y2)
    }

    /// Area of the overlap with `other`, zero when disjoint.
    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0);
        let h = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0);
        w * h
    }

    /// Tight box around every box in `boxes`; `None` for an empty iterator.
    pub fn union_all<'a, I>(boxes: I) -> Option<BBox>
    where
        I: IntoIterator<Item = &'a BBox>,
    {
        boxes.into_iter().fold(None, |acc, b| {
            Some(match acc {
                None => *b,
                Some(a) => BBox {
                    x1: a.x1.min(b.x1),
                    y1: a.y1.min(b.y1),
                    x2: a.x2.max(b.x2),
                    y2: a.y2.max(b.y2),
                },
            })
        })
    }

    /// The box shifted by `(dx, dy)`, if the result stays inside the image.
    pub fn translated(&self, dx: f64, dy: f64) -> Result<BBox> {
        BBox::new(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.to_array()
    }
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&bbox_to_token_string(self))
    }
}

/// Maps a normalized coordinate to its position token, `floor(v * 1000)` clamped to 999.
pub fn quantize(v: f64) -> Result<u32> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Domain(format!("coordinate {v} is outside [0, 1]")));
    }
    let t = (v * f64::from(NUM_POSITION_TOKENS)).floor() as u32;
    Ok(t.min(MAX_POSITION_TOKEN))
}

/// Center of the bin of position token `t`.
pub fn dequantize(t: u32) -> Result<f64> {
    if t > MAX_POSITION_TOKEN {
        return Err(Error::Domain(format!(
            "position token {t} is outside [0, {MAX_POSITION_TOKEN}]"
        )));
    }
    Ok((f64::from(t) + 0.5) / f64::from(NUM_POSITION_TOKENS))
}

/// Position tokens of the four box coordinates.
pub fn quantize_box(b: &BBox) -> [u32; 4] {
    // BBox construction already guarantees every coordinate is in range.
    b.to_array().map(|v| quantize(v).expect("box coordinates lie in [0, 1]"))
}

/// Serializes a box as `<bbox>X1,Y1,X2,Y2</bbox>`.
pub fn bbox_to_token_string(b: &BBox) -> String {
    let [x1, y1, x2, y2] = quantize_box(b);
    format!("<bbox>{x1},{y1},{x2},{y2}</bbox>")
}

/// Extracts the first well-formed `<bbox>…</bbox>` span in `s` and returns the
/// box made of the bin centers of its four tokens.
pub fn parse_token_string(s: &str) -> Result<BBox> {
    for caps in BBOX_SPAN.captures_iter(s) {
        let tokens: Vec<u32> = (1..=4)
            .map(|i| caps[i].parse::<u32>().expect("regex matched digits"))
            .collect();
        if tokens.iter().any(|&t| t > MAX_POSITION_TOKEN) {
            continue;
        }
        let [x1, y1, x2, y2] = [tokens[0], tokens[1], tokens[2], tokens[3]]
            .map(|t| dequantize(t).expect("token range checked"));
        if let Ok(b) = BBox::new(x1, y1, x2, y2) {
            return Ok(b);
        }
    }
    Err(Error::Parse(format!("no well-formed <bbox> span in {s:?}")))
}
