use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use super::{ReportBundle, ReportError};
use crate::corpus::Language;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Markdown,
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = ReportError;
    fn from_str(s: &str) -> Result<Self, ReportError> {
        match s {
            "markdown" | "md" => Ok(Format::Markdown),
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(ReportError::UnknownFormat(other.to_string())),
        }
    }
}

fn auc(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "n/a".into())
}

fn markdown(b: &ReportBundle) -> String {
    let mut s = String::new();
    let title = if b.title.is_empty() { "Report" } else { &b.title };
    let _ = writeln!(s, "# {title}\n");

    s.push_str("## Mean AUC\n\n| Model | Mean AUC |\n|---|---|\n");
    for r in &b.summary_table {
        let mean = match r.mean {
            Some(m) => format!("{m:.3}"),
            None => {
                let missing: Vec<&str> = r.missing.iter().map(|l| l.as_str()).collect();
                format!("incomplete (missing {})", missing.join(", "))
            }
        };
        let _ = writeln!(s, "| {} | {mean} |", r.config);
    }

    s.push_str("\n## AUC by language\n\n| Model |");
    for l in Language::ALL {
        let _ = write!(s, " {} |", l.display_name());
    }
    s.push_str("\n|---|---|---|---|\n");
    for r in &b.per_language_table {
        let _ = write!(s, "| {} |", r.config);
        for c in &r.cells {
            let _ = write!(s, " {} |", auc(c.auc));
        }
        s.push('\n');
    }

    s.push_str("\n## Relative improvements\n\n| Comparison | Base | New | Change (%) | Note |\n|---|---|---|---|---|\n");
    for i in &b.improvements {
        let _ = writeln!(
            s,
            "| {} | {:.3} | {:.3} | {:.1} | {} |",
            i.label,
            i.base,
            i.new,
            i.percent,
            i.note.as_deref().unwrap_or("")
        );
    }

    s.push_str("\n## Regression checks\n\n| Cell | Computed | Expected | Tolerance | Result |\n|---|---|---|---|---|\n");
    for c in &b.checks {
        let _ = writeln!(
            s,
            "| {} | {:.4} | {:.3} | {} | {} |",
            c.cell,
            c.computed,
            c.expected,
            c.tolerance,
            if c.pass { "pass" } else { "FAIL" }
        );
    }

    s.push_str("\n## Provenance\n\n");
    if let Some(f) = &b.provenance.fixture_id {
        let _ = writeln!(s, "- fixture: `{f}`");
    }
    for r in &b.provenance.run_ids {
        let _ = writeln!(s, "- run: `{r}`");
    }
    for h in &b.provenance.dataset_hashes {
        let _ = writeln!(s, "- dataset sha256: `{h}`");
    }
    s
}

fn csv_field(f: &str) -> String {
    if f.contains([',', '"', '\n']) {
        format!("\"{}\"", f.replace('"', "\"\""))
    } else {
        f.to_string()
    }
}

fn csv(b: &ReportBundle) -> String {
    let mut s = String::from("table,row,column,value,provenance\n");
    let mut line = |fields: [&str; 5]| {
        let row: Vec<String> = fields.iter().map(|f| csv_field(f)).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    };
    for r in &b.summary_table {
        let v = r.mean.map(|m| m.to_string()).unwrap_or_default();
        line(["summary", &r.config, "mean", &v, &r.provenance.join(";")]);
    }
    for r in &b.per_language_table {
        for c in &r.cells {
            let v = c.auc.map(|x| x.to_string()).unwrap_or_default();
            line(["auc", &r.config, c.language.as_str(), &v, c.provenance.as_deref().unwrap_or("")]);
        }
    }
    for i in &b.improvements {
        line(["improvement", &i.label, "percent", &i.percent.to_string(), &format!("{};{}", i.base_ref, i.new_ref)]);
    }
    for c in &b.checks {
        let status = if c.pass { "pass" } else { "fail" };
        line(["check", &c.cell, status, &c.computed.to_string(), &c.source]);
    }
    s
}

/// Deterministic rendering of `bundle`.
pub fn render(bundle: &ReportBundle, format: Format) -> String {
    match format {
        Format::Markdown => markdown(bundle),
        Format::Csv => csv(bundle),
        Format::Json => serde_json::to_string_pretty(bundle).expect("bundles serialize") + "\n",
    }
}

/// Render and write, leaving an identical existing file untouched.
pub fn write_report(bundle: &ReportBundle, format: Format, path: &Path) -> Result<(), ReportError> {
    crate::util::write_if_changed(path, render(bundle, format).as_bytes())
        .map_err(|e| ReportError::Io { path: path.display().to_string(), message: e.to_string() })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::{fixture_bundle, ReferenceFixture};
    use super::*;

    #[test]
    fn empty_bundle_renders_headers_only() {
        let b = ReportBundle::default();
        let md = render(&b, Format::Markdown);
        assert!(md.contains("| Model | Mean AUC |"));
        assert!(!md.contains("| baseline"));
        assert_eq!(render(&b, Format::Csv), "table,row,column,value,provenance\n");
    }

    #[test]
    fn rendering_is_deterministic_and_json_round_trips() {
        let b = fixture_bundle(&ReferenceFixture::builtin(), 0.005).unwrap();
        for f in [Format::Markdown, Format::Csv, Format::Json] {
            assert_eq!(render(&b, f), render(&b, f));
        }
        let back: ReportBundle = serde_json::from_str(&render(&b, Format::Json)).unwrap();
        assert_eq!(back, b);
        let md = render(&b, Format::Markdown);
        assert!(md.contains("| baseline | 0.822 |"));
        assert!(md.contains("| es_cs | incomplete (missing en) |"));
        assert!(md.contains("| baseline | 0.895 | 0.830 | 0.740 |"));
    }

    #[test]
    fn format_names() {
        assert_eq!("md".parse::<Format>().unwrap(), Format::Markdown);
        assert!("pdf".parse::<Format>().is_err());
    }
}
