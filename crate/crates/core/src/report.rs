//! Markdown tables for run results.

use std::fmt::Write as _;

use crate::experiments::{AblationTable, RunResult, Setting, SweepTable};

/// A published accuracy row, in percent, quoted for comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceRow {
    pub label: String,
    pub values: Vec<(Setting, f64)>,
}

/// Published FewRel 1.0 validation accuracies of the BERT-based prototype
/// baseline and the direct-addition model.
pub fn published_validation_references() -> Vec<ReferenceRow> {
    let row = |label: &str, v: [f64; 4]| ReferenceRow {
        label: label.to_string(),
        values: Setting::STANDARD.into_iter().zip(v).collect(),
    };
    vec![
        row("Proto-BERT (published)", [84.77, 89.54, 76.85, 83.42]),
        row("Ours (BERT) (published)", [91.29, 94.05, 86.09, 89.68]),
    ]
}

/// A labelled row of results, one per setting.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub label: String,
    pub results: Vec<RunResult>,
}

fn columns(rows: &[ReportRow], references: &[ReferenceRow]) -> Vec<Setting> {
    let mut cols = Setting::STANDARD.to_vec();
    let extra = rows
        .iter()
        .flat_map(|r| r.results.iter().map(|x| x.setting))
        .chain(references.iter().flat_map(|r| r.values.iter().map(|v| v.0)));
    for s in extra {
        if !cols.contains(&s) {
            cols.push(s);
        }
    }
    cols
}

fn percent(r: &RunResult) -> String {
    format!("{:.2} ± {:.2}", 100.0 * r.accuracy, 100.0 * r.stderr)
}

fn header(out: &mut String, first: &str, cols: &[String]) {
    let _ = writeln!(out, "| {first} | {} |", cols.join(" | "));
    let _ = writeln!(out, "|---|{}", "---:|".repeat(cols.len()));
}

/// Rows of `acc ± stderr` (percent) under `N-w-K-s` columns, followed by
/// any reference rows. Missing cells render as `-`.
pub fn render_report(rows: &[ReportRow], references: &[ReferenceRow]) -> String {
    let cols = columns(rows, references);
    let mut out = String::new();
    header(
        &mut out,
        "Model",
        &cols.iter().map(Setting::to_string).collect::<Vec<_>>(),
    );
    for row in rows {
        let cells: Vec<String> = cols
            .iter()
            .map(|s| {
                row.results
                    .iter()
                    .find(|r| r.setting == *s)
                    .map_or_else(|| "-".to_string(), percent)
            })
            .collect();
        let _ = writeln!(out, "| {} | {} |", row.label, cells.join(" | "));
    }
    for reference in references {
        let cells: Vec<String> = cols
            .iter()
            .map(|s| {
                reference
                    .values
                    .iter()
                    .find(|v| v.0 == *s)
                    .map_or_else(|| "-".to_string(), |v| format!("{:.2}", v.1))
            })
            .collect();
        let _ = writeln!(out, "| {} | {} |", reference.label, cells.join(" | "));
    }
    out
}

/// One row per fusion rule in ablation order.
pub fn render_ablation(table: &AblationTable) -> String {
    let settings: Vec<Setting> = table
        .rows
        .first()
        .map(|r| r.results.iter().map(|x| x.setting).collect())
        .unwrap_or_default();
    let mut out = String::new();
    header(
        &mut out,
        "Model",
        &settings.iter().map(Setting::to_string).collect::<Vec<_>>(),
    );
    for row in &table.rows {
        let cells: Vec<String> = row.results.iter().map(percent).collect();
        let _ = writeln!(out, "| {} | {} |", row.fusion.label(), cells.join(" | "));
    }
    out
}

/// Settings as rows, one column per learning rate, plus an average row.
pub fn render_sweep(table: &SweepTable) -> String {
    let cols: Vec<String> = table.rates.iter().map(|r| format!("lr={r:e}")).collect();
    let mut out = String::new();
    header(&mut out, "Settings", &cols);
    for (si, setting) in table.settings.iter().enumerate() {
        let cells: Vec<String> = table.cells.iter().map(|row| percent(&row[si])).collect();
        let _ = writeln!(out, "| {setting} | {} |", cells.join(" | "));
    }
    let avgs: Vec<String> = table
        .averages()
        .iter()
        .map(|a| format!("{:.2}", 100.0 * a))
        .collect();
    let _ = writeln!(out, "| Average | {} |", avgs.join(" | "));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protonet::FusionKind;

    fn result(setting: Setting, correct: usize, total: usize) -> RunResult {
        let (accuracy, stderr) = crate::experiments::binomial(correct, total);
        RunResult {
            label: "x".into(),
            setting,
            correct,
            total,
            accuracy,
            stderr,
            mean_loss: 0.0,
            loss_curve: vec![],
            stream_fingerprint: 0,
            config: None,
            wall_time_secs: 0.0,
        }
    }

    #[test]
    fn references_quote_published_values() {
        let text = render_report(&[], &published_validation_references());
        assert!(text.contains("| Proto-BERT (published) | 84.77 | 89.54 | 76.85 | 83.42 |"));
        assert!(text.contains("| Ours (BERT) (published) | 91.29 | 94.05 | 86.09 | 89.68 |"));
    }

    #[test]
    fn empty_report_is_headers_only() {
        let text = render_report(&[], &[]);
        assert_eq!(
            text,
            "| Model | 5-w-1-s | 5-w-5-s | 10-w-1-s | 10-w-5-s |\n|---|---:|---:|---:|---:|\n"
        );
    }

    #[test]
    fn result_rows_fill_matching_columns() {
        let rows = [ReportRow {
            label: "toy".into(),
            results: vec![result(Setting::new(5, 1), 3, 4)],
        }];
        let text = render_report(&rows, &[]);
        assert!(
            text.contains("| toy | 75.00 ± 21.65 | - | - | - |"),
            "{text}"
        );
    }

    #[test]
    fn ablation_rows_follow_table_order() {
        let table = AblationTable {
            rows: FusionKind::ABLATION_ORDER
                .into_iter()
                .map(|fusion| crate::experiments::AblationRow {
                    fusion,
                    train_fingerprint: 0,
                    results: vec![result(Setting::new(5, 1), 1, 2)],
                })
                .collect(),
        };
        let text = render_ablation(&table);
        let labels: Vec<&str> = text
            .lines()
            .skip(2)
            .map(|l| l.split('|').nth(1).unwrap().trim())
            .collect();
        assert_eq!(
            labels,
            [
                "Ours",
                "w/o relation info.",
                "w/ concat",
                "w/ linear layer view#1",
                "w/ linear layer view#2"
            ]
        );
    }

    #[test]
    fn sweep_has_rate_columns_and_average() {
        let s = Setting::new(5, 1);
        let table = SweepTable {
            rates: vec![5e-6, 9e-6],
            settings: vec![s],
            cells: vec![vec![result(s, 1, 2)], vec![result(s, 1, 4)]],
        };
        let text = render_sweep(&table);
        assert!(text.starts_with("| Settings | lr=5e-6 | lr=9e-6 |"));
        assert!(text.contains("| Average | 50.00 | 25.00 |"));
    }
}
