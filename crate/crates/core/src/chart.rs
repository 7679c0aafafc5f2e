//! Chart source data as Markdown data tables.
//!
//! One row per x value and one column per series; every value is rounded to
//! four significant digits.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{pick_instruction, Task, TrainingSample};
use crate::table::escape_cell_text;

/// Significant digits kept for chart values.
pub const CHART_SIG_DIGITS: usize = 4;

/// An x-axis category or position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum XValue {
    Number(f64),
    Text(String),
}

impl fmt::Display for XValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            XValue::Number(v) => write!(f, "{v}"),
            XValue::Text(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    pub values: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ChartData {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_label: Option<String>,
    #[serde(rename = "x")]
    pub x_values: Vec<XValue>,
    #[serde(default)]
    pub series: Vec<Series>,
}

impl ChartData {
    pub fn validate(&self) -> Result<()> {
        let mut names = HashSet::new();
        for (i, s) in self.series.iter().enumerate() {
            if s.values.len() != self.x_values.len() {
                return Err(Error::Structure {
                    row: s.values.len().min(self.x_values.len()) + 1,
                    col: i + 1,
                    msg: format!(
                        "series {:?} has {} values for {} x values",
                        s.name,
                        s.values.len(),
                        self.x_values.len()
                    ),
                });
            }
            if !names.insert(s.name.as_str()) {
                return Err(Error::Structure {
                    row: 0,
                    col: i + 1,
                    msg: format!("duplicate series name {:?}", s.name),
                });
            }
        }
        Ok(())
    }

    /// Reads a CSV table: the header names the x column then each series,
    /// empty cells are missing values.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| Error::Parse(format!("csv header: {e}")))?
            .clone();
        let mut it = headers.iter();
        let x_label = it
            .next()
            .ok_or_else(|| Error::Parse("csv has no columns".into()))?;
        let mut chart = ChartData {
            x_label: (!x_label.is_empty()).then(|| x_label.to_owned()),
            series: it
                .map(|name| Series {
                    name: name.to_owned(),
                    values: Vec::new(),
                })
                .collect(),
            ..Default::default()
        };
        for (line, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse(format!("csv row {}: {e}", line + 2)))?;
            let mut fields = rec.iter();
            let x = fields.next().unwrap_or_default();
            chart.x_values.push(XValue::Text(x.to_owned()));
            for s in chart.series.iter_mut() {
                let cell = fields.next().unwrap_or_default();
                let v = if cell.is_empty() {
                    None
                } else {
                    Some(cell.parse::<f64>().map_err(|_| {
                        Error::Parse(format!("csv row {}: {cell:?} is not a number", line + 2))
                    })?)
                };
                s.values.push(v);
            }
        }
        chart.validate()?;
        Ok(chart)
    }
}

/// Rounds `v` to `n` significant digits, half away from zero.
///
/// Rounding applies to the shortest decimal form that reads back as `v`, so
/// `2.675` rounds to `2.68` at three digits. Magnitudes in `[1e-4, 1e7)` are
/// written positionally with trailing zeros trimmed, others as `mEk`.
pub fn round_sig(v: f64, n: usize) -> Result<String> {
    if !v.is_finite() {
        return Err(Error::Domain(format!("cannot round non-finite value {v}")));
    }
    if n == 0 {
        return Err(Error::Domain("significant digit count must be at least 1".into()));
    }
    if v == 0.0 {
        return Ok("0".into());
    }

    let sci = format!("{:e}", v.abs());
    let (mantissa, exp) = sci.split_once('e').expect("{:e} output has an exponent");
    let mut exp: i32 = exp.parse().expect("{:e} exponent is an integer");
    let mut digits: Vec<u8> = mantissa
        .bytes()
        .filter(u8::is_ascii_digit)
        .map(|b| b - b'0')
        .collect();

    if digits.len() > n {
        let round_up = digits[n] >= 5;
        digits.truncate(n);
        if round_up {
            let mut i = n;
            loop {
                if i == 0 {
                    digits.insert(0, 1);
                    digits.truncate(n);
                    exp += 1;
                    break;
                }
                i -= 1;
                if digits[i] == 9 {
                    digits[i] = 0;
                } else {
                    digits[i] += 1;
                    break;
                }
            }
        }
    }
    while digits.len() > 1 && digits.last() == Some(&0) {
        digits.pop();
    }

    let ds: String = digits.iter().map(|d| char::from(b'0' + d)).collect();
    let body = if (-4..7).contains(&exp) {
        let len = ds.len() as i32;
        if exp >= len - 1 {
            format!("{ds}{}", "0".repeat((exp - (len - 1)) as usize))
        } else if exp >= 0 {
            let (int, frac) = ds.split_at(exp as usize + 1);
            format!("{int}.{frac}")
        } else {
            format!("0.{}{ds}", "0".repeat((-exp - 1) as usize))
        }
    } else if ds.len() > 1 {
        format!("{}.{}E{exp}", &ds[..1], &ds[1..])
    } else {
        format!("{ds}E{exp}")
    };
    Ok(if v < 0.0 { format!("-{body}") } else { body })
}

fn md_row<I, S>(cells: I) -> String
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut line = String::from("|");
    for c in cells {
        line.push(' ');
        line.push_str(&escape_cell_text(c.as_ref()));
        line.push_str(" |");
    }
    line
}

/// Header row `| x_label | series… |` then one row per x value.
pub fn chart_to_markdown(c: &ChartData) -> Result<String> {
    c.validate()?;
    let header = std::iter::once(c.x_label.clone().unwrap_or_else(|| "x".into()))
        .chain(c.series.iter().map(|s| s.name.clone()));
    let mut lines = vec![md_row(header)];
    for (i, x) in c.x_values.iter().enumerate() {
        let mut cells = vec![x.to_string()];
        for s in &c.series {
            cells.push(match s.values[i] {
                Some(v) => round_sig(v, CHART_SIG_DIGITS)?,
                None => String::new(),
            });
        }
        lines.push(md_row(cells));
    }
    Ok(lines.join("\n"))
}

pub fn build_chart_parse_sample(
    image_id: impl Into<String>,
    c: &ChartData,
    instruction_pool: &[String],
    seed: u64,
) -> Result<TrainingSample> {
    let instruction = pick_instruction(instruction_pool, seed)?.to_owned();
    Ok(TrainingSample::parse(
        image_id,
        Task::ChartParse,
        instruction,
        chart_to_markdown(c)?,
    ))
}
