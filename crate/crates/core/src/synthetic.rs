//! Seeded generators for synthetic OCR pages, tables and charts.
//!
//! Used to produce the bundled fixture corpus and as input for property tests.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::chart::{ChartData, Series, XValue};
use crate::geometry::BBox;
use crate::model::{OcrPage, Word};
use crate::seeding::rng;
use crate::table::{TableCell, TableGrid};

const VOCAB: &[&str] = &[
    "Total", "Invoice", "Date", "Amount", "the", "of", "and", "Revenue", "2019", "2020", "Q1",
    "Q2", "Net", "income", "tax", "$12.50", "Name", "Address", "Phone", "Report", "Summary",
    "Table", "Page", "1", "2", "A", "B", "Notes", "Balance", "Sheet", "Cash", "Flow", "Units",
    "Price", "Qty", "Item", "Description", "No.", "ID", "Signature", "Approved", "by",
];

const CAPTIONS: &[&str] = &[
    "a storefront with a sign",
    "a printed invoice on a desk",
    "a bus at a stop",
    "a menu board in a cafe",
    "a poster on a wall",
];

fn pick<'a>(r: &mut ChaCha8Rng, items: &[&'a str]) -> &'a str {
    items.choose(r).expect("non-empty list")
}

/// A page of `1..=max_lines` left-to-right lines inside `[0.1, 0.9]²`.
///
/// Lines are far enough apart never to merge, and word centers on a line
/// jitter by less than the grouping tolerance. Vocabulary repeats and small
/// glyphs occur often enough to exercise the word filters.
pub fn random_page(seed: u64, image_id: &str, max_lines: usize) -> OcrPage {
    let mut r = rng(seed);
    let n_lines = r.gen_range(1..=max_lines.max(1));
    let line_h: f64 = r.gen_range(0.012f64..0.04).min(0.8 / (2.2 * n_lines as f64));
    let pitch = (0.8 - line_h) / n_lines.max(1) as f64;
    let char_w: f64 = r.gen_range(0.004..0.012);
    let mut words = Vec::new();
    for li in 0..n_lines {
        let top = 0.1 + li as f64 * pitch.max(2.2 * line_h);
        let mut x = 0.1 + r.gen_range(0.0..0.05);
        let n_words = r.gen_range(1..=8);
        for _ in 0..n_words {
            let text = pick(&mut r, VOCAB);
            let w = text.chars().count() as f64 * char_w * r.gen_range(0.9..1.1);
            if x + w > 0.9 {
                break;
            }
            let h = line_h * r.gen_range(0.9..1.1);
            let y1 = top + r.gen_range(-0.1..0.1) * line_h;
            let bbox = BBox::new(x, y1, x + w, (y1 + h).min(0.9)).expect("generated inside the page");
            words.push(Word::new(text, bbox).expect("vocabulary words are valid"));
            let gap_chars = if r.gen_bool(0.25) {
                r.gen_range(3.0..12.0)
            } else {
                r.gen_range(0.3..2.5)
            };
            x += w + gap_chars * char_w;
        }
    }
    // OCR output order is not reading order
    words.shuffle(&mut r);
    OcrPage {
        image_id: image_id.to_owned(),
        width_px: r.gen_range(400..2000),
        height_px: r.gen_range(400..2000),
        words,
        caption: Some(pick(&mut r, CAPTIONS).to_owned()),
    }
}

/// A rectangular grid of up to `max_rows × max_cols` with spans up to `max_span`.
pub fn random_table(seed: u64, max_rows: usize, max_cols: usize, max_span: usize) -> TableGrid {
    let mut r = rng(seed);
    let rows = r.gen_range(1..=max_rows);
    let cols = r.gen_range(1..=max_cols);
    let mut covered = vec![vec![false; cols]; rows];
    let mut anchors: Vec<Vec<TableCell>> = vec![Vec::new(); rows];
    for row in 0..rows {
        for col in 0..cols {
            if covered[row][col] {
                continue;
            }
            let mut rs = r.gen_range(1..=max_span).min(rows - row);
            let mut cs = r.gen_range(1..=max_span).min(cols - col);
            if r.gen_bool(0.6) {
                rs = 1;
                cs = 1;
            }
            // shrink the span until it fits over free cells
            while (row..row + rs).any(|rr| (col..col + cs).any(|cc| covered[rr][cc])) {
                if cs > 1 {
                    cs -= 1;
                } else {
                    rs -= 1;
                }
            }
            for line in &mut covered[row..row + rs] {
                line[col..col + cs].fill(true);
            }
            let words = r.gen_range(0..=3);
            let text = (0..words)
                .map(|_| pick(&mut r, VOCAB))
                .collect::<Vec<_>>()
                .join(" ");
            let text = if r.gen_bool(0.05) { format!("{text}|x") } else { text };
            anchors[row].push(TableCell::spanning(text, rs, cs));
        }
    }
    TableGrid::new(anchors)
}

/// A chart with `0..=3` series over `1..=8` x values, some missing.
pub fn random_chart(seed: u64) -> ChartData {
    let mut r = rng(seed);
    let n = r.gen_range(1..=8);
    let n_series = r.gen_range(0..=3);
    let scale = 10f64.powi(r.gen_range(-3..6));
    ChartData {
        title: Some(format!("Chart {seed}")),
        x_label: r.gen_bool(0.7).then(|| "Year".to_owned()),
        y_label: Some("Value".into()),
        x_values: (0..n).map(|i| XValue::Text(format!("{}", 2000 + i))).collect(),
        series: (0..n_series)
            .map(|s| Series {
                name: format!("series {}", s + 1),
                values: (0..n)
                    .map(|_| r.gen_bool(0.9).then(|| r.gen_range(-1.0..1.0) * scale))
                    .collect(),
            })
            .collect(),
    }
}
