//! Comparison tables: attributes and strategies, food categories, and the
//! K-correct distribution, one row per method.

use std::fmt::Write as _;

use super::EvalReport;
use crate::taxonomy::FoodCategory;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
    Json,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 3] = [
        ReportFormat::Markdown,
        ReportFormat::Csv,
        ReportFormat::Json,
    ];

    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Markdown => "md",
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
        }
    }
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            _ => Err(format!(
                "unknown report format {s:?} (expected markdown, csv or json)"
            )),
        }
    }
}

struct Table {
    key: &'static str,
    title: &'static str,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn pct(x: f64) -> String {
    format!("{:.2}", x * 100.0)
}

fn frac(x: f64) -> String {
    format!("{x:.4}")
}

fn row_prefix(r: &EvalReport) -> Vec<String> {
    vec![r.method.label().to_string(), r.model_id.clone()]
}

fn tables(reports: &[&EvalReport]) -> [Table; 3] {
    let lead = ["Method", "Model"].map(String::from);

    let mut header: Vec<String> = lead.to_vec();
    header.extend(
        [
            "N",
            "State",
            "Year",
            "Policy Type",
            "Strategy (Exact)",
            "Strategy (Partial)",
            "Strategy Indiv. (Type A)",
            "Strategy Indiv. (Type B)",
            "Hallucinations",
            "Missing",
        ]
        .map(String::from),
    );
    let attributes = Table {
        key: "attributes",
        title: "Attribute and legal strategy accuracy (%)",
        header,
        rows: reports
            .iter()
            .map(|r| {
                let mut row = row_prefix(r);
                row.push(r.n_records.to_string());
                row.extend(
                    [
                        r.attributes.state_acc,
                        r.attributes.year_acc,
                        r.attributes.policy_type_acc,
                        r.strategies.exact_acc,
                        r.strategies.partial_acc,
                        r.strategies.group_a_acc,
                        r.strategies.group_b_acc,
                    ]
                    .map(pct),
                );
                row.push(r.hallucination_count.to_string());
                row.push(r.missing_count.to_string());
                row
            })
            .collect(),
    };

    let mut header: Vec<String> = lead.to_vec();
    header.extend(FoodCategory::ALL.iter().map(|c| c.display().to_string()));
    header.push("Micro-F1".into());
    header.push("Hamming Loss".into());
    let food = Table {
        key: "food",
        title: "Food category accuracy (%)",
        header,
        rows: reports
            .iter()
            .map(|r| {
                let mut row = row_prefix(r);
                row.extend(r.food.per_category_acc.to_array().map(pct));
                row.push(frac(r.food.micro_f1));
                row.push(frac(r.food.hamming_loss));
                row
            })
            .collect(),
    };

    let mut header: Vec<String> = lead.to_vec();
    header.extend((0..=6).rev().map(|k| format!("K={k}")));
    let k_distribution = Table {
        key: "k_distribution",
        title: "Policies with exactly K food categories correct (%)",
        header,
        rows: reports
            .iter()
            .map(|r| {
                let mut row = row_prefix(r);
                row.extend(r.food.k_histogram.iter().rev().map(|p| format!("{p:.2}")));
                row
            })
            .collect(),
    };

    [attributes, food, k_distribution]
}

fn markdown(tables: &[Table]) -> String {
    let mut out = String::new();
    for (i, t) in tables.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let _ = writeln!(out, "## {}\n", t.title);
        let _ = writeln!(out, "| {} |", t.header.join(" | "));
        let align: Vec<&str> = (0..t.header.len())
            .map(|i| if i < 2 { "---" } else { "---:" })
            .collect();
        let _ = writeln!(out, "| {} |", align.join(" | "));
        for row in &t.rows {
            let _ = writeln!(out, "| {} |", row.join(" | "));
        }
    }
    out
}

fn csv(tables: &[Table]) -> String {
    let mut w = csv::WriterBuilder::new()
        .flexible(true)
        .from_writer(Vec::new());
    for t in tables {
        let mut header = vec!["Table".to_string()];
        header.extend(t.header.iter().cloned());
        w.write_record(&header).expect("in-memory write");
        for row in &t.rows {
            let mut record = vec![t.key.to_string()];
            record.extend(row.iter().cloned());
            w.write_record(&record).expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 cells")
}

/// Renders `reports` with rows ordered by method, then model id.
pub fn render_report(reports: &[EvalReport], format: ReportFormat) -> String {
    let mut sorted: Vec<&EvalReport> = reports.iter().collect();
    sorted.sort_by(|a, b| {
        a.method
            .cmp(&b.method)
            .then_with(|| a.model_id.cmp(&b.model_id))
    });
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(&sorted).expect("reports serialize");
            s.push('\n');
            s
        }
        ReportFormat::Markdown => markdown(&tables(&sorted)),
        ReportFormat::Csv => csv(&tables(&sorted)),
    }
}

pub fn parse_json_report(text: &str) -> serde_json::Result<Vec<EvalReport>> {
    serde_json::from_str(text)
}
