//! Regenerates the bundled fixture corpus: `cargo run --example gen_fixtures`.

use std::fmt::Write as _;
use std::path::Path;

use docstruct::synthetic::{random_chart, random_page, random_table};
use docstruct::table::TableGrid;

fn grid_to_html(t: &TableGrid) -> String {
    let mut h = String::from("<table>");
    for row in &t.rows {
        h.push_str("<tr>");
        for c in row {
            h.push_str("<td");
            if c.rowspan > 1 {
                let _ = write!(h, " rowspan=\"{}\"", c.rowspan);
            }
            if c.colspan > 1 {
                let _ = write!(h, " colspan=\"{}\"", c.colspan);
            }
            let text = c.text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;");
            let _ = write!(h, ">{text}</td>");
        }
        h.push_str("</tr>");
    }
    h.push_str("</table>");
    h
}

fn write(dir: &Path, name: &str, lines: Vec<String>) {
    std::fs::write(dir.join(name), lines.join("\n") + "\n").expect("write fixture");
}

fn main() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    std::fs::create_dir_all(&dir).expect("create fixtures dir");

    let pages = (0..20)
        .map(|i| serde_json::to_string(&random_page(1000 + i, &format!("page-{i:03}"), 12)).unwrap())
        .collect();
    write(&dir, "pages.jsonl", pages);

    let tables = (0..20u64)
        .map(|i| {
            let t = random_table(2000 + i, 6, 6, 3);
            let id = format!("table-{i:03}");
            if i % 2 == 0 {
                serde_json::json!({ "image_id": id, "html": grid_to_html(&t) }).to_string()
            } else {
                serde_json::json!({ "image_id": id, "rows": t.rows }).to_string()
            }
        })
        .collect();
    write(&dir, "tables.jsonl", tables);

    let charts = (0..20u64)
        .map(|i| {
            let c = random_chart(3000 + i);
            let id = format!("chart-{i:03}");
            if i % 4 == 3 {
                let mut csv = String::from("year");
                for s in &c.series {
                    let _ = write!(csv, ",{}", s.name);
                }
                csv.push('\n');
                for (k, x) in c.x_values.iter().enumerate() {
                    csv.push_str(&x.to_string());
                    for s in &c.series {
                        csv.push(',');
                        if let Some(v) = s.values[k] {
                            let _ = write!(csv, "{v}");
                        }
                    }
                    csv.push('\n');
                }
                serde_json::json!({ "image_id": id, "csv": csv }).to_string()
            } else {
                let mut v = serde_json::to_value(&c).unwrap();
                v["image_id"] = id.into();
                v.to_string()
            }
        })
        .collect();
    write(&dir, "charts.jsonl", charts);
}
