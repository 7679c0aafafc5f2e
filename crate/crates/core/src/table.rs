//! Extended Markdown tables with `<COLSPAN=x>` / `<ROWSPAN=y>` span tokens.
//!
//! A table is written one line per row as `| c1 | c2 | … |`. Cells covered by
//! a span emit nothing; the anchor cell carries the span tokens before its
//! value, COLSPAN first. There is no header separator row.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{pick_instruction, Task, TrainingSample};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableCell {
    pub text: String,
    #[serde(default = "one")]
    pub rowspan: usize,
    #[serde(default = "one")]
    pub colspan: usize,
}

fn one() -> usize {
    1
}

impl TableCell {
    pub fn new(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            rowspan: 1,
            colspan: 1,
        }
    }

    pub fn spanning(text: impl Into<String>, rowspan: usize, colspan: usize) -> Self {
        Self {
            text: text.into(),
            rowspan,
            colspan,
        }
    }
}

/// Logical table: anchor cells only, row by row in reading order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TableGrid {
    pub rows: Vec<Vec<TableCell>>,
}

/// Where each anchor landed after span expansion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Expansion {
    pub width: usize,
    /// `(row, col)` of every anchor, parallel to `TableGrid::rows`.
    pub positions: Vec<Vec<(usize, usize)>>,
}

impl TableGrid {
    pub fn new(rows: Vec<Vec<TableCell>>) -> Self {
        Self { rows }
    }

    /// Places every anchor at the first free column of its row and checks the
    /// expanded grid is rectangular with no overlapping spans.
    pub fn expand(&self) -> Result<Expansion> {
        let n_rows = self.rows.len();
        let mut occupied: Vec<Vec<bool>> = vec![Vec::new(); n_rows];
        let mut positions = Vec::with_capacity(n_rows);

        for (r, row) in self.rows.iter().enumerate() {
            let mut col = 0;
            let mut placed = Vec::with_capacity(row.len());
            for cell in row {
                if cell.rowspan == 0 || cell.colspan == 0 {
                    return Err(Error::Structure {
                        row: r,
                        col,
                        msg: "rowspan and colspan must be at least 1".into(),
                    });
                }
                while occupied[r].get(col).copied().unwrap_or(false) {
                    col += 1;
                }
                if r + cell.rowspan > n_rows {
                    return Err(Error::Structure {
                        row: r,
                        col,
                        msg: format!(
                            "rowspan {} runs past the last row ({n_rows} rows)",
                            cell.rowspan
                        ),
                    });
                }
                for (rr, line) in occupied.iter_mut().enumerate().skip(r).take(cell.rowspan) {
                    for cc in col..col + cell.colspan {
                        if line.len() <= cc {
                            line.resize(cc + 1, false);
                        }
                        if line[cc] {
                            return Err(Error::Structure {
                                row: rr,
                                col: cc,
                                msg: "overlapping spans".into(),
                            });
                        }
                        line[cc] = true;
                    }
                }
                placed.push((r, col));
                col += cell.colspan;
            }
            positions.push(placed);
        }

        let width = occupied.first().map_or(0, Vec::len);
        for (r, line) in occupied.iter().enumerate() {
            if let Some(c) = line.iter().position(|&o| !o) {
                return Err(Error::Structure {
                    row: r,
                    col: c,
                    msg: "gap in expanded row".into(),
                });
            }
            if line.len() != width {
                return Err(Error::Structure {
                    row: r,
                    col: line.len().min(width),
                    msg: format!("row spans {} columns, expected {width}", line.len()),
                });
            }
        }
        Ok(Expansion { width, positions })
    }

    pub fn validate(&self) -> Result<()> {
        self.expand().map(|_| ())
    }

    pub fn anchor_count(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }
}

/// Escapes a cell value so it cannot break the row grammar.
pub fn escape_cell_text(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for ch in text.chars() {
        match ch {
            '|' => out.push_str("\\|"),
            '\n' | '\r' => out.push(' '),
            c => out.push(c),
        }
    }
    out
}

fn render_cell(cell: &TableCell, out: &mut String) {
    if cell.colspan > 1 {
        out.push_str(&format!("<COLSPAN={}>", cell.colspan));
    }
    if cell.rowspan > 1 {
        out.push_str(&format!("<ROWSPAN={}>", cell.rowspan));
    }
    out.push_str(&escape_cell_text(&cell.text));
}

/// Serializes a valid grid into the extended Markdown dialect.
pub fn grid_to_markdown(t: &TableGrid) -> Result<String> {
    t.validate()?;
    let lines: Vec<String> = t
        .rows
        .iter()
        .map(|row| {
            let mut line = String::from("|");
            for cell in row {
                line.push(' ');
                render_cell(cell, &mut line);
                line.push_str(" |");
            }
            line
        })
        .collect();
    Ok(lines.join("\n"))
}

fn strip_span_token<'a>(s: &'a str, name: &str) -> Result<Option<(usize, &'a str)>> {
    let prefix = format!("<{name}=");
    let Some(rest) = s.strip_prefix(prefix.as_str()) else {
        return Ok(None);
    };
    let end = rest
        .find('>')
        .ok_or_else(|| Error::Parse(format!("unterminated <{name}=…> token")))?;
    let n: usize = rest[..end]
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("bad {name} value {:?}", &rest[..end])))?;
    if n == 0 {
        return Err(Error::Parse(format!("{name} must be at least 1")));
    }
    Ok(Some((n, &rest[end + 1..])))
}

fn parse_cell(raw: &str) -> Result<TableCell> {
    let mut s = raw.trim();
    let mut rowspan = 1;
    let mut colspan = 1;
    let (mut seen_col, mut seen_row) = (false, false);
    loop {
        if !seen_col {
            if let Some((n, rest)) = strip_span_token(s, "COLSPAN")? {
                colspan = n;
                seen_col = true;
                s = rest;
                continue;
            }
        }
        if !seen_row {
            if let Some((n, rest)) = strip_span_token(s, "ROWSPAN")? {
                rowspan = n;
                seen_row = true;
                s = rest;
                continue;
            }
        }
        break;
    }
    Ok(TableCell {
        text: s.trim().to_owned(),
        rowspan,
        colspan,
    })
}

fn parse_row(line: &str) -> Result<Vec<TableCell>> {
    let body = line
        .trim()
        .strip_prefix('|')
        .ok_or_else(|| Error::Parse("row does not start with '|'".into()))?;
    let mut cells = Vec::new();
    let mut current = String::new();
    let mut chars = body.chars().peekable();
    while let Some(ch) = chars.next() {
        match ch {
            '\\' if chars.peek() == Some(&'|') => {
                chars.next();
                current.push('|');
            }
            '|' => {
                cells.push(parse_cell(&current)?);
                current.clear();
            }
            c => current.push(c),
        }
    }
    if !current.trim().is_empty() {
        return Err(Error::Parse("unbalanced '|': trailing cell is not closed".into()));
    }
    Ok(cells)
}

/// Parses the extended Markdown dialect back into a grid.
pub fn markdown_to_grid(s: &str) -> Result<TableGrid> {
    let mut rows = Vec::new();
    for (i, line) in s.lines().enumerate() {
        let row = parse_row(line).map_err(|e| match e {
            Error::Parse(msg) => Error::Parse(format!("line {}: {msg}", i + 1)),
            other => other,
        })?;
        rows.push(row);
    }
    let grid = TableGrid { rows };
    grid.validate().map_err(|e| match e {
        Error::Structure { row, col, msg } => {
            Error::Parse(format!("line {}: column {}: {msg}", row + 1, col + 1))
        }
        other => other,
    })?;
    Ok(grid)
}

pub fn build_table_parse_sample(
    image_id: impl Into<String>,
    t: &TableGrid,
    instruction_pool: &[String],
    seed: u64,
) -> Result<TrainingSample> {
    let instruction = pick_instruction(instruction_pool, seed)?.to_owned();
    Ok(TrainingSample::parse(
        image_id,
        Task::TableParse,
        instruction,
        grid_to_markdown(t)?,
    ))
}

// --- HTML subset -----------------------------------------------------------

#[derive(Debug, PartialEq)]
enum Tok<'a> {
    Open { name: String, attrs: &'a str },
    Close(String),
    Text(&'a str),
}

fn tokenize(h: &str) -> Result<Vec<Tok<'_>>> {
    let mut toks = Vec::new();
    let mut rest = h;
    while !rest.is_empty() {
        if let Some(after) = rest.strip_prefix("<!--") {
            let end = after
                .find("-->")
                .ok_or_else(|| Error::Parse("unclosed comment".into()))?;
            rest = &after[end + 3..];
            continue;
        }
        if rest.starts_with('<') {
            let end = rest
                .find('>')
                .ok_or_else(|| Error::Parse("unclosed tag".into()))?;
            let inner = rest[1..end].trim();
            rest = &rest[end + 1..];
            let (closing, inner) = match inner.strip_prefix('/') {
                Some(i) => (true, i.trim_start()),
                None => (false, inner),
            };
            let inner = inner.strip_suffix('/').unwrap_or(inner).trim_end();
            let name_end = inner
                .find(|c: char| c.is_whitespace())
                .unwrap_or(inner.len());
            let name = inner[..name_end].to_ascii_lowercase();
            if name.is_empty() || name.starts_with('!') {
                continue;
            }
            toks.push(if closing {
                Tok::Close(name)
            } else {
                Tok::Open {
                    name,
                    attrs: &inner[name_end..],
                }
            });
        } else {
            let end = rest.find('<').unwrap_or(rest.len());
            toks.push(Tok::Text(&rest[..end]));
            rest = &rest[end..];
        }
    }
    Ok(toks)
}

fn span_attr(attrs: &str, key: &str) -> Result<usize> {
    let lower = attrs.to_ascii_lowercase();
    let mut search = 0;
    while let Some(pos) = lower[search..].find(key) {
        let start = search + pos;
        search = start + key.len();
        let boundary_ok = start == 0 || !lower.as_bytes()[start - 1].is_ascii_alphanumeric();
        let after = lower[search..].trim_start();
        let Some(value) = after.strip_prefix('=') else {
            continue;
        };
        if !boundary_ok {
            continue;
        }
        let value = value.trim_start();
        let value = value.trim_start_matches(['"', '\'']);
        let digits: String = value.chars().take_while(char::is_ascii_digit).collect();
        let n: usize = digits
            .parse()
            .map_err(|_| Error::Parse(format!("bad {key} attribute in {attrs:?}")))?;
        if n == 0 {
            return Err(Error::Parse(format!("{key} must be at least 1")));
        }
        return Ok(n);
    }
    Ok(1)
}

fn decode_entities(s: &str) -> String {
    s.replace("&nbsp;", " ")
        .replace("&lt;", "<")
        .replace("&gt;", ">")
        .replace("&quot;", "\"")
        .replace("&#39;", "'")
        .replace("&amp;", "&")
}

fn collapse_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

const FORMATTING_TAGS: [&str; 2] = ["b", "i"];

/// Converts one `<table>` of the PubTabNet tag subset into a grid.
///
/// `table`, `tr`, `td`, `th`, `b` and `i` must be properly nested and closed;
/// other tags are dropped and their text kept.
pub fn html_to_grid(h: &str) -> Result<TableGrid> {
    let toks = tokenize(h)?;
    let mut rows: Vec<Vec<TableCell>> = Vec::new();
    let mut stack: Vec<String> = Vec::new();
    let mut tables_seen = 0;
    let mut cell: Option<TableCell> = None;

    for tok in toks {
        match tok {
            Tok::Open { name, attrs } => match name.as_str() {
                "table" => {
                    if stack.iter().any(|t| t == "table") {
                        return Err(Error::Parse("nested tables are not supported".into()));
                    }
                    if tables_seen > 0 {
                        return Err(Error::Parse("more than one <table>".into()));
                    }
                    tables_seen += 1;
                    stack.push(name);
                }
                "tr" => {
                    if !stack.iter().any(|t| t == "table") {
                        return Err(Error::Parse("<tr> outside <table>".into()));
                    }
                    if stack.iter().any(|t| t == "tr") {
                        return Err(Error::Parse("unclosed <tr>".into()));
                    }
                    rows.push(Vec::new());
                    stack.push(name);
                }
                "td" | "th" => {
                    if stack.last().map(String::as_str) != Some("tr") {
                        return Err(Error::Parse(format!("<{name}> not directly inside <tr>")));
                    }
                    cell = Some(TableCell {
                        text: String::new(),
                        rowspan: span_attr(attrs, "rowspan")?,
                        colspan: span_attr(attrs, "colspan")?,
                    });
                    stack.push(name);
                }
                n if FORMATTING_TAGS.contains(&n) => stack.push(name),
                _ => {}
            },
            Tok::Close(name) => {
                let tracked = matches!(name.as_str(), "table" | "tr" | "td" | "th")
                    || FORMATTING_TAGS.contains(&name.as_str());
                if !tracked {
                    continue;
                }
                match stack.pop() {
                    Some(open) if open == name => {}
                    Some(open) => {
                        return Err(Error::Parse(format!("</{name}> closes unclosed <{open}>")))
                    }
                    None => return Err(Error::Parse(format!("stray </{name}>"))),
                }
                if name == "td" || name == "th" {
                    let mut c = cell.take().expect("cell opened with td/th");
                    c.text = collapse_ws(&decode_entities(&c.text));
                    rows.last_mut().expect("td inside tr").push(c);
                }
            }
            Tok::Text(t) => {
                if let Some(c) = cell.as_mut() {
                    c.text.push_str(t);
                }
            }
        }
    }
    if let Some(open) = stack.last() {
        return Err(Error::Parse(format!("unclosed <{open}>")));
    }
    if tables_seen == 0 {
        return Err(Error::Parse("no <table> element".into()));
    }
    let grid = TableGrid { rows };
    grid.validate().map_err(|e| Error::Parse(e.to_string()))?;
    Ok(grid)
}
