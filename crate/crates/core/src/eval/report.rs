//! CSV and SVG outputs of multi-seed runs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::experiment::{AblationCell, MultiSeedReport};
use super::metrics::{csv_field, metrics, ConfusionMatrix};
use crate::error::Result;
use crate::nn::params::write_atomic;

pub const REPORT_HEADER: &str = "pipeline,seed,metric,class,value";
pub const SUMMARY_HEADER: &str = "pipeline,metric,mean,std";

/// Long format: one row per (pipeline, seed, metric, class).
pub fn report_csv(reports: &[MultiSeedReport]) -> String {
    let mut s = format!("{REPORT_HEADER}\n");
    for r in reports {
        for sr in &r.reports {
            let m = &sr.metrics;
            let mut row = |metric: &str, class: &str, value: String| {
                let _ = writeln!(s, "{},{},{metric},{},{value}", r.pipeline, sr.seed, csv_field(class));
            };
            row("oa", "", m.overall_accuracy.to_string());
            row("macro_f1", "", m.macro_f1.to_string());
            row("weighted_f1", "", m.weighted_f1.to_string());
            for (c, name) in r.class_names.iter().enumerate() {
                row("precision", name, m.precision[c].to_string());
                row("recall", name, m.recall[c].to_string());
                row("f1", name, m.f1[c].to_string());
                row("support", name, m.support[c].to_string());
                row("degenerate", name, u8::from(m.degenerate.contains(&c)).to_string());
            }
        }
    }
    s
}

pub fn summary_csv(reports: &[MultiSeedReport]) -> String {
    let mut s = format!("{SUMMARY_HEADER}\n");
    for r in reports {
        for row in r.summary() {
            let _ = writeln!(s, "{},{},{},{}", r.pipeline, csv_field(&row.metric), row.mean, row.std);
        }
    }
    s
}

pub fn failures_csv(reports: &[MultiSeedReport]) -> String {
    let mut s = String::from("pipeline,seed,error\n");
    for r in reports {
        for (seed, e) in &r.failures {
            let _ = writeln!(s, "{},{seed},{}", r.pipeline, csv_field(e));
        }
    }
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Heatmap shaded by each row's share, annotated with counts, with the
/// per-class precision under each predicted-class column.
pub fn confusion_svg(conf: &ConfusionMatrix, title: &str) -> String {
    let k = conf.k();
    let cell = 44;
    let left = 170;
    let top = 150;
    let width = left + cell * k + 20;
    let height = top + cell * k + 70;
    let precision = metrics(conf).precision;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="10" y="20" font-size="14">{}</text>"#, xml_escape(title));
    let _ = writeln!(
        s,
        r#"<text x="{}" y="40" text-anchor="middle">predicted</text>"#,
        left + cell * k / 2
    );
    for (j, name) in conf.classes.iter().enumerate() {
        let x = left + cell * j + cell / 2;
        let _ = writeln!(
            s,
            r#"<text x="{x}" y="{}" transform="rotate(-60 {x} {})">{}</text>"#,
            top - 6,
            top - 6,
            xml_escape(name)
        );
    }
    for (i, name) in conf.classes.iter().enumerate() {
        let y = top + cell * i;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            left - 6,
            y + cell / 2 + 4,
            xml_escape(name)
        );
        let row_sum = conf.row_sum(i).max(1) as f64;
        for j in 0..k {
            let v = conf.counts[i][j];
            let share = v as f64 / row_sum;
            let shade = (255.0 * (1.0 - 0.85 * share)).round() as u8;
            let x = left + cell * j;
            let _ = writeln!(
                s,
                r#"<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="rgb({shade},{shade},255)" stroke="gray"/>"#
            );
            let ink = if share > 0.55 { "white" } else { "black" };
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="middle" fill="{ink}">{v}</text>"#,
                x + cell / 2,
                y + cell / 2 + 4
            );
        }
    }
    let y = top + cell * k + 18;
    let _ = writeln!(s, r#"<text x="{}" y="{y}" text-anchor="end">precision</text>"#, left - 6);
    for (j, p) in precision.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{y}" text-anchor="middle">{:.2}</text>"#,
            left + cell * j + cell / 2,
            p
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">reference rows, shaded by row share</text>"#,
        left + cell * k / 2,
        y + 24
    );
    s.push_str("</svg>\n");
    s
}

/// Writes report.csv, summary.csv, failures.csv and one confusion CSV and
/// SVG per pipeline and seed. Returns the written paths.
pub fn write_reports(dir: &Path, reports: &[MultiSeedReport]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| crate::Error::io(dir, e))?;
    let mut written = Vec::new();
    let mut put = |name: String, text: String| -> Result<()> {
        let path = dir.join(name);
        write_atomic(&path, text.as_bytes())?;
        written.push(path);
        Ok(())
    };
    put("report.csv".into(), report_csv(reports))?;
    put("summary.csv".into(), summary_csv(reports))?;
    put("failures.csv".into(), failures_csv(reports))?;
    for r in reports {
        for sr in &r.reports {
            let stem = format!("confusion_{}_{}", r.pipeline, sr.seed);
            put(format!("{stem}.csv"), sr.confusion.to_csv())?;
            let title = format!("{} seed {} (OA {:.3})", r.pipeline, sr.seed, sr.metrics.overall_accuracy);
            put(format!("{stem}.svg"), confusion_svg(&sr.confusion, &title))?;
        }
    }
    Ok(written)
}

/// One row per (feature set, sensor subset) cell.
pub fn ablation_csv(cells: &[AblationCell]) -> String {
    let mut s = String::from("feature_set,subset,oa_mean,oa_std,macro_f1_mean,macro_f1_std,seeds\n");
    for c in cells {
        let summary = c.report.summary();
        let get = |m: &str| summary.iter().find(|r| r.metric == m).map_or((f64::NAN, f64::NAN), |r| (r.mean, r.std));
        let (oa, oa_sd) = get("oa");
        let (f1, f1_sd) = get("macro_f1");
        let _ = writeln!(
            s,
            "{},{},{oa},{oa_sd},{f1},{f1_sd},{}",
            c.set.tag(),
            c.subset.tag(),
            c.report.reports.len()
        );
    }
    s
}

/// Overall accuracy as `mean±std` percentages, feature sets as rows and
/// sensor subsets as columns.
pub fn ablation_grid(cells: &[AblationCell]) -> String {
    use crate::features::{FeatureSet, SensorSubset};
    let mut s = String::from("feature_set");
    for sub in SensorSubset::ALL {
        let _ = write!(s, ",{}", sub.tag());
    }
    s.push('\n');
    for set in FeatureSet::ALL {
        s.push_str(set.tag());
        for sub in SensorSubset::ALL {
            let cell = cells.iter().find(|c| c.set == set && c.subset == sub);
            let text = cell.map_or(String::new(), |c| {
                let (m, sd) = super::metrics::mean_std(&c.report.values(|m| m.overall_accuracy));
                format!("{:.2}±{:.2}", 100.0 * m, 100.0 * sd)
            });
            let _ = write!(s, ",{text}");
        }
        s.push('\n');
    }
    s
}
