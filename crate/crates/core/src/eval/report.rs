//! Tab-separated report documents.
//!
//! Metric reports (`WER WER-P WER-T MCD PESQ`) and rating tables
//! (`WER MCD PESQ Overall`) share one layout: a per-utterance section, then
//! a per-system section with `mean ± std` cells. Missing values are empty
//! cells.

use std::collections::BTreeMap;
use std::fmt::Write;

use super::{EvalError, MetricReport, MosRating};

pub const METRIC_COLUMNS: [&str; 5] = ["WER", "WER-P", "WER-T", "MCD", "PESQ"];
pub const RATING_COLUMNS: [&str; 4] = ["WER", "MCD", "PESQ", "Overall"];

pub const UTTERANCE_SECTION: &str = "## per-utterance";
pub const SYSTEM_SECTION: &str = "## per-system (mean ± std)";

/// Population mean and standard deviation; `None` for no values.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_default()
}

fn agg_cell(values: &[f64]) -> String {
    mean_std(values).map(|(m, s)| format!("{m:.4} ± {s:.4}")).unwrap_or_default()
}

fn render<R>(rows: &[R], columns: &[&str], system: impl Fn(&R) -> &str, utt: impl Fn(&R) -> &str, values: impl Fn(&R) -> Vec<Option<f64>>) -> String {
    let mut out = String::new();
    writeln!(out, "{UTTERANCE_SECTION}").unwrap();
    writeln!(out, "system\tutt_id\t{}", columns.join("\t")).unwrap();
    for r in rows {
        let cells: Vec<String> = values(r).into_iter().map(cell).collect();
        writeln!(out, "{}\t{}\t{}", system(r), utt(r), cells.join("\t")).unwrap();
    }
    writeln!(out).unwrap();
    writeln!(out, "{SYSTEM_SECTION}").unwrap();
    writeln!(out, "system\tn\t{}", columns.join("\t")).unwrap();
    let mut groups: BTreeMap<&str, Vec<&R>> = BTreeMap::new();
    for r in rows {
        groups.entry(system(r)).or_default().push(r);
    }
    for (sys, members) in groups {
        let per_col: Vec<String> = (0..columns.len())
            .map(|c| agg_cell(&members.iter().filter_map(|r| values(r)[c]).collect::<Vec<_>>()))
            .collect();
        writeln!(out, "{sys}\t{}\t{}", members.len(), per_col.join("\t")).unwrap();
    }
    out
}

pub fn format_metric_report(reports: &[MetricReport]) -> String {
    render(
        reports,
        &METRIC_COLUMNS,
        |r| &r.system_id,
        |r| &r.utt_id,
        |r| vec![Some(r.wer), Some(r.wer_p), Some(r.wer_t), Some(r.mcd), r.pesq],
    )
}

pub fn format_ratings(ratings: &[MosRating]) -> String {
    render(
        ratings,
        &RATING_COLUMNS,
        |r| &r.system_id,
        |r| &r.utt_id,
        |r| {
            vec![
                r.wer.map(f64::from),
                r.mcd.map(f64::from),
                r.pesq.map(f64::from),
                r.overall,
            ]
        },
    )
}

/// Reads the per-utterance rows of a metric report.
pub fn parse_metric_report(text: &str) -> Result<Vec<MetricReport>, EvalError> {
    let mut lines = text.lines().enumerate();
    lines
        .by_ref()
        .find(|(_, l)| l.trim() == UTTERANCE_SECTION)
        .ok_or(EvalError::MalformedLine {
            line: 0,
            reason: format!("missing `{UTTERANCE_SECTION}` section"),
        })?;
    let expected = format!("system\tutt_id\t{}", METRIC_COLUMNS.join("\t"));
    match lines.next() {
        Some((_, h)) if h == expected => {}
        Some((i, h)) => {
            return Err(EvalError::MalformedLine {
                line: i + 1,
                reason: format!("unexpected header `{h}`"),
            })
        }
        None => {
            return Err(EvalError::MalformedLine {
                line: 0,
                reason: "missing header".into(),
            })
        }
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() || line.starts_with("##") {
            break;
        }
        let bad = |reason: String| EvalError::MalformedLine { line: i + 1, reason };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 7 {
            return Err(bad(format!("expected 7 fields, found {}", f.len())));
        }
        let num = |s: &str, name: &str| -> Result<f64, EvalError> {
            s.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(format!("{name} `{s}` is not a finite number")))
        };
        out.push(MetricReport {
            system_id: f[0].to_string(),
            utt_id: f[1].to_string(),
            wer: num(f[2], "WER")?,
            wer_p: num(f[3], "WER-P")?,
            wer_t: num(f[4], "WER-T")?,
            mcd: num(f[5], "MCD")?,
            pesq: if f[6].trim().is_empty() { None } else { Some(num(f[6], "PESQ")?) },
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(sys: &str, utt: &str, wer: f64, pesq: Option<f64>) -> MetricReport {
        MetricReport {
            utt_id: utt.into(),
            system_id: sys.into(),
            wer,
            wer_p: wer / 2.0,
            wer_t: wer / 4.0,
            mcd: 3.0 + wer,
            pesq,
        }
    }

    #[test]
    fn mean_and_population_std() {
        assert_eq!(mean_std(&[]), None);
        assert_eq!(mean_std(&[1.0, 3.0]), Some((2.0, 1.0)));
    }

    #[test]
    fn metric_report_layout_and_round_trip() {
        let rows = vec![r("A", "u1", 0.5, Some(3.0)), r("A", "u2", 0.25, None), r("B", "u1", 0.0, None)];
        let text = format_metric_report(&rows);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[1], "system\tutt_id\tWER\tWER-P\tWER-T\tMCD\tPESQ");
        assert!(lines[3].ends_with("\t"), "blank PESQ cell: {:?}", lines[3]);
        assert!(text.contains("A\t2\t0.3750 ± 0.1250\t0.1875 ± 0.0625\t0.0938 ± 0.0312\t3.3750 ± 0.1250\t3.0000 ± 0.0000"));
        assert!(text.contains("B\t1\t0.0000 ± 0.0000\t0.0000 ± 0.0000\t0.0000 ± 0.0000\t3.0000 ± 0.0000\t\n"));
        assert_eq!(parse_metric_report(&text).unwrap(), rows);
    }

    #[test]
    fn ratings_layout() {
        let m = vec![
            MosRating::new("u1".into(), "A".into(), Some(5), Some(3), None),
            MosRating::new("u2".into(), "A".into(), Some(4), Some(4), None),
        ];
        let text = format_ratings(&m);
        assert!(text.contains("system\tutt_id\tWER\tMCD\tPESQ\tOverall"));
        assert!(text.contains("A\tu1\t5.0000\t3.0000\t\t4.0000"));
        assert!(text.contains("A\t2\t4.5000 ± 0.5000\t3.5000 ± 0.5000\t\t4.0000 ± 0.0000"));
    }

    #[test]
    fn malformed_reports() {
        assert!(parse_metric_report("nothing").is_err());
        let text = format!("{UTTERANCE_SECTION}\nsystem\tutt_id\tWER\tWER-P\tWER-T\tMCD\tPESQ\nA\tu\tx\t0\t0\t0\t\n");
        assert!(matches!(parse_metric_report(&text), Err(EvalError::MalformedLine { line: 3, .. })));
    }
}
