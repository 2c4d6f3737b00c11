//! Line-delimited records and plain-text summary tables.
//!
//! Each JSONL line is one object with a `kind` field:
//!
//! | kind | fields |
//! |------|--------|
//! | `epoch` | `epoch`, `train_loss`, `validation` (metrics), `improved` |
//! | `eval` | `name`, `metrics` |
//! | `ablation` | `variant`, `features`, `seed`, `test` (metrics) |
//! | `sweep` | `axis`, `value`, `test` (metrics) |
//! | `robustness` | `variant`, `mode`, `clean`, `perturbed` (metrics) |
//!
//! A metrics object holds `precision`, `dr`, `fpr`, `accuracy`, `f1` as
//! fractions in `[0, 1]` and `counts` with `tp`, `fp`, `fn`, `tn`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{AblationCell, EpochRecord, MetricsReport, RobustnessRow, SweepRow};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Record {
    Epoch(EpochRecord),
    Eval { name: String, metrics: MetricsReport },
    Ablation(AblationCell),
    Sweep(SweepRow),
    Robustness(RobustnessRow),
}

impl Record {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("records always serialize")
    }
}

pub fn to_jsonl<'a>(records: impl IntoIterator<Item = &'a Record>) -> String {
    records.into_iter().fold(String::new(), |mut s, r| {
        s.push_str(&r.to_line());
        s.push('\n');
        s
    })
}

/// Parses JSONL, skipping blank lines. Errors carry the 1-based line.
pub fn parse_jsonl(text: &str) -> Result<Vec<Record>, (usize, serde_json::Error)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| (i + 1, e)))
        .collect()
}

fn pct(x: f64) -> String {
    format!("{:.2}", x * 100.0)
}

fn table(title: &str, rows: &[(String, Vec<String>)], columns: &[&str]) -> String {
    let mut header = vec!["row"];
    header.extend_from_slice(columns);
    let widths: Vec<usize> = (0..header.len())
        .map(|c| {
            rows.iter()
                .map(|(name, cells)| if c == 0 { name.len() } else { cells[c - 1].len() })
                .chain([header[c].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = format!("{title}\n");
    let line = |cells: Vec<&str>| {
        let mut s = String::new();
        for (i, (cell, w)) in cells.iter().zip(&widths).enumerate() {
            if i == 0 {
                let _ = write!(s, "{cell:<w$}");
            } else {
                let _ = write!(s, "  {cell:>w$}");
            }
        }
        s.trim_end().to_string() + "\n"
    };
    out += &line(header.clone());
    out += &line(
        widths
            .iter()
            .map(|&w| "-".repeat(w))
            .collect::<Vec<_>>()
            .iter()
            .map(String::as_str)
            .collect(),
    );
    for (name, cells) in rows {
        let mut v = vec![name.as_str()];
        v.extend(cells.iter().map(String::as_str));
        out += &line(v);
    }
    out
}

const METRIC_COLUMNS: [&str; 5] = ["DR%", "FPR%", "Prec%", "F1%", "Acc%"];

fn metric_cells(m: &MetricsReport) -> Vec<String> {
    vec![pct(m.dr), pct(m.fpr), pct(m.precision), pct(m.f1), pct(m.accuracy)]
}

/// Human-readable tables, one per record kind present.
pub fn summary_table(records: &[Record]) -> String {
    let mut epochs = Vec::new();
    let mut evals = Vec::new();
    let mut ablation = Vec::new();
    let mut sweep = Vec::new();
    let mut robust = Vec::new();
    for r in records {
        match r {
            Record::Epoch(e) => {
                let mut cells = vec![format!("{:.5}", e.train_loss)];
                cells.extend(metric_cells(&e.validation));
                cells.push(if e.improved { "*".into() } else { String::new() });
                epochs.push((format!("epoch {}", e.epoch), cells));
            }
            Record::Eval { name, metrics } => evals.push((name.clone(), metric_cells(metrics))),
            Record::Ablation(c) => ablation.push((
                format!("{} / {} / seed {}", c.variant.as_str(), c.features.as_str(), c.seed),
                metric_cells(&c.test),
            )),
            Record::Sweep(s) => sweep.push((format!("{} = {}", s.axis, s.value), metric_cells(&s.test))),
            Record::Robustness(r) => robust.push((
                r.variant.as_str().to_string(),
                vec![
                    pct(r.clean.dr),
                    pct(r.perturbed.dr),
                    format!("{:.2}", r.dr_drop_points()),
                    pct(r.clean.fpr),
                    pct(r.perturbed.fpr),
                ],
            )),
        }
    }
    let mut sections = Vec::new();
    if !epochs.is_empty() {
        let mut cols = vec!["loss"];
        cols.extend(METRIC_COLUMNS);
        cols.push("best");
        sections.push(table("training (validation metrics)", &epochs, &cols));
    }
    for (title, rows) in [
        ("evaluation", &evals),
        ("ablation (test)", &ablation),
        ("sweep (test)", &sweep),
    ] {
        if !rows.is_empty() {
            sections.push(table(title, rows, &METRIC_COLUMNS));
        }
    }
    if !robust.is_empty() {
        sections.push(table(
            "random insertion (test)",
            &robust,
            &["DR% clean", "DR% noisy", "drop pts", "FPR% clean", "FPR% noisy"],
        ));
    }
    sections.join("\n")
}

/// A published full-scale result, kept for side-by-side comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceRow {
    pub experiment: &'static str,
    pub model: &'static str,
    /// Percentages.
    pub dr: f64,
    pub fpr: f64,
    /// `None` where no number was published.
    pub precision: Option<f64>,
    pub f1: Option<f64>,
    pub accuracy: Option<f64>,
}

const fn row(experiment: &'static str, model: &'static str, dr: f64, fpr: f64) -> ReferenceRow {
    ReferenceRow {
        experiment,
        model,
        dr,
        fpr,
        precision: None,
        f1: None,
        accuracy: None,
    }
}

/// Full-dataset numbers reported for the original CSIC 2010 experiments.
pub const REFERENCE_ROWS: [ReferenceRow; 10] = [
    row("detection", "full", 99.12, 0.22),
    row("ablation", "cnn_only / raw_bytes", 84.35, 3.56),
    row("ablation", "lstm_only / raw_bytes", 91.5, 4.76),
    row("ablation", "full / raw_bytes", 96.57, 0.72),
    row("ablation", "cnn_only / block", 98.82, 0.15),
    row("ablation", "lstm_only / block", 99.08, 0.44),
    row("ablation", "full / block", 99.12, 0.22),
    ReferenceRow {
        precision: Some(99.34),
        f1: Some(97.50),
        accuracy: Some(98.73),
        ..row("random insertion", "cnn_only", 95.72, 0.22)
    },
    ReferenceRow {
        precision: Some(98.68),
        f1: Some(98.07),
        accuracy: Some(99.02),
        ..row("random insertion", "lstm_only", 97.47, 0.45)
    },
    ReferenceRow {
        precision: Some(99.52),
        f1: Some(99.29),
        accuracy: Some(99.53),
        ..row("random insertion", "full", 98.67, 0.17)
    },
];

pub fn reference_table() -> String {
    let opt = |x: Option<f64>| x.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"));
    let rows: Vec<(String, Vec<String>)> = REFERENCE_ROWS
        .iter()
        .map(|r| {
            (
                format!("{}: {}", r.experiment, r.model),
                vec![
                    format!("{:.2}", r.dr),
                    format!("{:.2}", r.fpr),
                    opt(r.precision),
                    opt(r.f1),
                    opt(r.accuracy),
                ],
            )
        })
        .collect();
    table(
        "published full-scale reference (not reproduced here)",
        &rows,
        &METRIC_COLUMNS,
    )
}
