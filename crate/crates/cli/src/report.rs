//! Text and markdown tables for metrics CSVs.

use drdb::bench::MetricsRow;

const HEADER: [&str; 10] = ["Method", "Bias", "MSE", "Cov", "CI-Len", "p", "s", "n", "reps", "failures"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Style {
    Plain,
    Markdown,
}

fn cells(row: &MetricsRow, digits: usize) -> [String; 10] {
    let f = |v: f64| format!("{v:.digits$}");
    let failures = if row.flagged() { format!("{}*", row.failures) } else { row.failures.to_string() };
    [
        row.method.to_string(),
        f(row.bias),
        f(row.mse),
        f(row.cov),
        f(row.ci_len),
        row.p.to_string(),
        row.s.to_string(),
        row.n.to_string(),
        row.reps.to_string(),
        failures,
    ]
}

/// The method column is left aligned, every other column right aligned.
pub fn render(rows: &[MetricsRow], style: Style, digits: usize) -> String {
    let body: Vec<[String; 10]> = rows.iter().map(|r| cells(r, digits)).collect();
    // Markdown rules need a colon and at least one dash.
    let min = if style == Style::Markdown { 3 } else { 1 };
    let mut widths = HEADER.map(|h| h.len().max(min));
    for r in &body {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let pad = |i: usize, text: &str| {
        if i == 0 {
            format!("{text:<w$}", w = widths[i])
        } else {
            format!("{text:>w$}", w = widths[i])
        }
    };
    let line = |texts: &[&str]| -> String {
        let padded: Vec<String> = texts.iter().enumerate().map(|(i, t)| pad(i, t)).collect();
        match style {
            Style::Plain => padded.join("  ").trim_end().to_string(),
            Style::Markdown => format!("| {} |", padded.join(" | ")),
        }
    };

    let mut out = String::new();
    out.push_str(&line(&HEADER));
    out.push('\n');
    let rule: Vec<String> = widths
        .iter()
        .enumerate()
        .map(|(i, &w)| match style {
            Style::Plain => "-".repeat(w),
            Style::Markdown if i == 0 => format!(":{}", "-".repeat(w - 1)),
            Style::Markdown => format!("{}:", "-".repeat(w - 1)),
        })
        .collect();
    out.push_str(&line(&rule.iter().map(String::as_str).collect::<Vec<_>>()));
    out.push('\n');
    for r in &body {
        out.push_str(&line(&r.iter().map(String::as_str).collect::<Vec<_>>()));
        out.push('\n');
    }
    if rows.iter().any(MetricsRow::flagged) {
        out.push_str("\n* more than 1% of replications failed\n");
    }
    out
}
