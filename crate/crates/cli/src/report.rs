//! Report emission: the metrics CSV, run manifest, and formatted tables.
//!
//! CSV columns are `Loss, Perplexity, CR@1..5, MOR@3, MOR@5, MOR@10,
//! MOR@20` under the default ranges (custom ranges substitute their own
//! CR@k / MOR@k columns). One row per evaluation; the step-0 row is
//! labeled `Start`, the final row carries the bare objective name, and
//! intermediate rows append `@step`. Percentages carry two decimals.

use std::collections::BTreeMap;

use rankdistill::metrics::{ConsistencyReport, MultiModalReport};
use rankdistill::toylm::EvalRecord;
use serde::Serialize;

/// JSON-friendly mirror of a [`ConsistencyReport`].
#[derive(Debug, Serialize)]
pub struct ConsistencyJson {
    pub n_positions: u64,
    pub cr: BTreeMap<String, f64>,
    pub mor: BTreeMap<String, f64>,
}

impl From<&ConsistencyReport> for ConsistencyJson {
    fn from(report: &ConsistencyReport) -> Self {
        Self {
            n_positions: report.n_positions,
            cr: report
                .cr
                .iter()
                .map(|(k, v)| (format!("top{k}"), *v))
                .collect(),
            mor: report
                .mor
                .iter()
                .map(|(k, v)| (format!("top{k}"), *v))
                .collect(),
        }
    }
}

/// JSON-friendly mirror of a [`MultiModalReport`].
#[derive(Debug, Serialize)]
pub struct MultiModalJson {
    pub temperature: f64,
    pub top_p: f64,
    pub proportion_multimodal: f64,
    pub histogram: BTreeMap<usize, u64>,
}

impl From<&MultiModalReport> for MultiModalJson {
    fn from(report: &MultiModalReport) -> Self {
        Self {
            temperature: report.temperature,
            top_p: report.top_p,
            proportion_multimodal: report.proportion_multimodal,
            histogram: report.histogram.clone(),
        }
    }
}

/// The run manifest written next to the CSV.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub version: String,
    pub seed: u64,
    pub objective: String,
    pub steps: u64,
    /// Mean wall time per training step in seconds, evaluation excluded.
    pub seconds_per_step: f64,
    pub train_seconds: f64,
    pub final_loss: f64,
    pub final_perplexity: f64,
    pub config: BTreeMap<String, String>,
}

pub fn csv_header(cr_ks: &[usize], mor_ks: &[usize]) -> String {
    let mut cols = vec!["Loss".to_string(), "Perplexity".to_string()];
    cols.extend(cr_ks.iter().map(|k| format!("CR@{k}")));
    cols.extend(mor_ks.iter().map(|k| format!("MOR@{k}")));
    cols.join(",")
}

fn csv_row(label: &str, perplexity: f64, report: &ConsistencyReport) -> String {
    let mut fields = vec![label.to_string(), format!("{perplexity:.4}")];
    fields.extend(report.cr.values().map(|v| format!("{v:.2}")));
    fields.extend(report.mor.values().map(|v| format!("{v:.2}")));
    fields.join(",")
}

fn row_label(record: &EvalRecord, final_step: u64) -> String {
    if record.label == "Start" || record.step == final_step {
        record.label.clone()
    } else {
        format!("{}@{}", record.label, record.step)
    }
}

/// Renders the training-split history as CSV.
pub fn history_csv(records: &[EvalRecord], cr_ks: &[usize], mor_ks: &[usize]) -> String {
    let final_step = records.last().map(|r| r.step).unwrap_or(0);
    let mut out = csv_header(cr_ks, mor_ks);
    out.push('\n');
    for record in records {
        out.push_str(&csv_row(
            &row_label(record, final_step),
            record.perplexity,
            &record.report,
        ));
        out.push('\n');
    }
    out
}

/// Renders the held-out history as CSV; rows mirror [`history_csv`].
pub fn held_out_csv(records: &[EvalRecord], cr_ks: &[usize], mor_ks: &[usize]) -> Option<String> {
    if records.iter().any(|r| r.held_out.is_none()) {
        return None;
    }
    let final_step = records.last().map(|r| r.step).unwrap_or(0);
    let mut out = csv_header(cr_ks, mor_ks);
    out.push('\n');
    for record in records {
        let held = record.held_out.as_ref().expect("checked above");
        out.push_str(&csv_row(
            &row_label(record, final_step),
            held.perplexity,
            &held.report,
        ));
        out.push('\n');
    }
    Some(out)
}

/// Human-readable consistency table.
pub fn consistency_table(title: &str, report: &ConsistencyReport) -> String {
    let mut out = format!("{title} ({} positions)\n", report.n_positions);
    let mut header = String::from("  ");
    let mut values = String::from("  ");
    for (k, v) in &report.cr {
        header.push_str(&format!("{:>10}", format!("CR@{k}")));
        values.push_str(&format!("{v:>10.2}"));
    }
    for (k, v) in &report.mor {
        header.push_str(&format!("{:>10}", format!("MOR@{k}")));
        values.push_str(&format!("{v:>10.2}"));
    }
    out.push_str(&header);
    out.push('\n');
    out.push_str(&values);
    out.push('\n');
    out
}

/// Human-readable multi-modal table over several temperatures.
pub fn multimodal_table(reports: &[MultiModalReport]) -> String {
    let mut out = String::from("  temperature   top_p   multi-modal proportion\n");
    for r in reports {
        out.push_str(&format!(
            "  {:>11.2}  {:>6.2}  {:>21.4}\n",
            r.temperature, r.top_p, r.proportion_multimodal
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rankdistill::metrics::ConsistencyAccumulator;
    use rankdistill::prob::ProbVector;

    fn sample_report() -> ConsistencyReport {
        let mut acc = ConsistencyAccumulator::with_default_ranges();
        let a = ProbVector::new(vec![0.4, 0.3, 0.2, 0.1]).unwrap();
        let b = ProbVector::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        acc.push(&a, &a).unwrap();
        acc.push(&a, &b).unwrap();
        acc.report().unwrap()
    }

    #[test]
    fn csv_header_matches_table_layout() {
        assert_eq!(
            csv_header(&[1, 2, 3, 4, 5], &[3, 5, 10, 20]),
            "Loss,Perplexity,CR@1,CR@2,CR@3,CR@4,CR@5,MOR@3,MOR@5,MOR@10,MOR@20"
        );
    }

    #[test]
    fn csv_rows_have_two_decimal_percentages() {
        let report = sample_report();
        let row = csv_row("KL", 7.8462, &report);
        assert!(row.starts_with("KL,7.8462,50.00,"), "{row}");
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields.len(), 2 + 5 + 4);
    }

    #[test]
    fn json_mirror_keeps_all_ranges() {
        let report = sample_report();
        let json = serde_json::to_string(&ConsistencyJson::from(&report)).unwrap();
        assert!(json.contains("\"top1\""));
        assert!(json.contains("\"top20\""));
        assert!(json.contains("\"n_positions\":2"));
    }

    #[test]
    fn table_renders_cleanly() {
        let text = consistency_table("self-comparison", &sample_report());
        assert!(text.contains("CR@1"));
        assert!(text.contains("MOR@20"));
    }
}
