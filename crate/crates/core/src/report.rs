//! Markdown report: results table, significance lines and imagery grids.

use std::fmt::Write;

use crate::classifier::Variant;
use crate::experiments::MetricsArtifact;
use crate::metrics::SignificanceResult;

pub fn model_label(variant: Variant) -> &'static str {
    match variant {
        Variant::Vanilla => "Vanilla Baseline",
        Variant::Desc => "+ Desc.",
        Variant::DescImag => "+ Desc. + Imag.",
    }
}

pub fn backend_label(backend: &str) -> String {
    match backend {
        "tiny-base" | "base" => "Base".into(),
        "tiny-large" | "large" => "Large".into(),
        other => other.into(),
    }
}

/// One row per run: model, backend size, validation mean ± std and test F1, in percent.
pub fn results_table(runs: &[MetricsArtifact]) -> String {
    let mut out = String::from("| Model | LM | validation | test |\n|---|---|---|---|\n");
    for run in runs {
        let test = run.test_f1.map_or_else(|| "-".to_string(), |f| format!("{:.2}", 100.0 * f));
        let _ = writeln!(
            out,
            "| {} | {} | {:.2} ± {:.2} | {} |",
            model_label(run.variant),
            backend_label(&run.backend),
            100.0 * run.mean_f1,
            100.0 * run.std_f1,
            test
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageryRow {
    pub term: String,
    pub description: String,
    pub term_sheet: Option<String>,
    pub description_sheet: Option<String>,
}

pub fn render_report(
    runs: &[MetricsArtifact],
    significance: &[(String, SignificanceResult)],
    imagery: &[ImageryRow],
) -> String {
    let mut out = String::from("# Euphemism detection results\n\n");
    out.push_str(&results_table(runs));
    if !significance.is_empty() {
        out.push_str("\n## Paired t-tests\n\n");
        for (label, s) in significance {
            let verdict = if s.p_value < 0.05 { "significant" } else { "not significant" };
            let _ = writeln!(
                out,
                "- {label}: t = {:.4}, p = {:.4} (n = {}, two-sided), {verdict} at 0.05",
                s.t_statistic, s.p_value, s.n_pairs
            );
        }
    }
    if !imagery.is_empty() {
        out.push_str("\n## Descriptions and visual imagery\n\n| Term | Description | Term imagery | Description imagery |\n|---|---|---|---|\n");
        let cell = |path: &Option<String>| path.as_ref().map_or_else(|| "-".to_string(), |p| format!("![]({p})"));
        for row in imagery {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} |",
                row.term,
                row.description,
                cell(&row.term_sheet),
                cell(&row.description_sheet)
            );
        }
    }
    out
}
