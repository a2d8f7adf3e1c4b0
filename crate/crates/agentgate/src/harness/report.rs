//! Report rendering: one JSON document and one aligned text table per
//! experiment. JSON bytes are a pure function of the summary (no
//! timestamps, no map iteration nondeterminism), so identical runs write
//! identical files.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde_json::Value;

use super::SummaryStats;

pub fn render_json(stats: &SummaryStats) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(&stats.to_json()).expect("report serializes");
    bytes.push(b'\n');
    bytes
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x:.4}"),
        _ => "-".to_string(),
    }
}

fn fmt_value(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

pub fn render_text(stats: &SummaryStats) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "experiment {}  seed {}  trials/arm {}  config {}",
        stats.experiment.as_str(),
        stats.seed,
        stats.trials_per_arm,
        &stats.config_hash[..12.min(stats.config_hash.len())],
    );

    if !stats.arms.is_empty() {
        let _ = writeln!(out, "\narms:");
        let _ = writeln!(
            out,
            "  {:<14} {:<10} {:>7} {:>9} {:>19} {:>11} {:>11}",
            "arm", "measure", "count", "prop", "ci95", "mean_ms", "median_ms"
        );
        for arm in &stats.arms {
            let _ = writeln!(
                out,
                "  {:<14} {:<10} {:>7} {:>9.4} [{:>7.4}, {:>7.4}] {:>11} {:>11}",
                arm.arm,
                arm.measure,
                format!("{}/{}", arm.count, arm.trials),
                arm.proportion,
                arm.ci95.0,
                arm.ci95.1,
                fmt_opt(arm.mean_ms),
                fmt_opt(arm.median_ms),
            );
        }
    }

    if !stats.comparisons.is_empty() {
        let _ = writeln!(out, "\ncomparisons:");
        for c in &stats.comparisons {
            let mut line = format!(
                "  {}: {} statistic {:.4}, p {:.6}",
                c.name, c.test, c.statistic, c.p_value
            );
            if let Some(e) = &c.effect {
                let _ = write!(line, ", {} {:.4}", e.name, e.value);
                if let Some((lo, hi)) = e.ci95 {
                    let _ = write!(line, " [{lo:.4}, {hi:.4}]");
                }
            }
            let _ = writeln!(out, "{line}");
        }
    }

    if !stats.metrics.is_empty() {
        let _ = writeln!(out, "\nmetrics:");
        for (k, v) in &stats.metrics {
            let _ = writeln!(out, "  {k}: {}", fmt_value(v));
        }
    }

    if !stats.targets.is_empty() {
        let _ = writeln!(out, "\ntargets:");
        for t in &stats.targets {
            let verdict = match t.met {
                Some(true) => "MET",
                Some(false) => "MISS",
                None => "N/A",
            };
            let _ = writeln!(
                out,
                "  {:<48} target {:>8.4}  measured {:>8}  {}",
                t.name,
                t.target,
                fmt_opt(t.measured),
                verdict
            );
        }
    }

    if !stats.hard_asserts.is_empty() {
        let _ = writeln!(out, "\nhard asserts:");
        for a in &stats.hard_asserts {
            let _ = writeln!(
                out,
                "  {:<48} {}  ({})",
                a.name,
                if a.pass { "PASS" } else { "FAIL" },
                a.detail
            );
        }
    }
    out
}

/// Writes `{out_dir}/{experiment}.json` and `.txt`, creating the directory
/// if needed. Returns the two paths in that order.
pub fn write_reports(stats: &SummaryStats, out_dir: &Path) -> io::Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(out_dir)?;
    let json_path = out_dir.join(format!("{}.json", stats.experiment.as_str()));
    let text_path = out_dir.join(format!("{}.txt", stats.experiment.as_str()));
    fs::write(&json_path, render_json(stats))?;
    fs::write(&text_path, render_text(stats))?;
    Ok((json_path, text_path))
}

#[cfg(test)]
mod tests {
    use super::super::{ArmSummary, ExperimentId, HardAssert, Target};
    use super::*;

    fn sample_stats() -> SummaryStats {
        let mut s = SummaryStats::new(ExperimentId::H1, 42, "abc123def456".into(), 10);
        s.arms.push(ArmSummary {
            arm: "direct".into(),
            trials: 10,
            measure: "leakage",
            count: 10,
            proportion: 1.0,
            ci95: (0.7, 1.0),
            mean_ms: None,
            median_ms: None,
        });
        s.targets.push(Target {
            name: "example_target".into(),
            target: 0.4,
            measured: Some(0.1),
            met: Some(false),
        });
        s.hard_asserts
            .push(HardAssert::check("example_assert", true, "fine"));
        s
    }

    #[test]
    fn text_report_names_every_section_it_renders() {
        let text = render_text(&sample_stats());
        assert!(text.contains("experiment h1"));
        assert!(text.contains("direct"));
        assert!(text.contains("MISS"));
        assert!(text.contains("PASS"));
        assert!(!text.contains("comparisons:"), "empty sections are omitted");
    }

    #[test]
    fn json_report_ends_with_newline_and_parses() {
        let bytes = render_json(&sample_stats());
        assert_eq!(*bytes.last().unwrap(), b'\n');
        let v: Value = serde_json::from_slice(&bytes).unwrap();
        assert_eq!(v["experiment"], "h1");
    }

    #[test]
    fn write_reports_creates_both_files() {
        let dir = tempfile::tempdir().unwrap();
        let stats = sample_stats();
        let (json_path, text_path) = write_reports(&stats, dir.path()).unwrap();
        assert!(json_path.ends_with("h1.json"));
        assert!(text_path.ends_with("h1.txt"));
        let again = write_reports(&stats, dir.path()).unwrap();
        assert_eq!(
            fs::read(&json_path).unwrap(),
            fs::read(&again.0).unwrap(),
            "rewrites are byte-identical"
        );
    }
}
