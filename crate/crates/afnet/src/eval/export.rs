//! Report files: CSVs as the canonical tabular output plus minimal SVG
//! line charts of the accuracy curves. Output depends only on the report
//! contents, byte for byte.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::EvalReport;
use crate::error::{Error, Result};

pub const ACC_BY_SNR_CSV: &str = "acc_by_snr.csv";
pub const ACC_BY_CLASS_SNR_CSV: &str = "acc_by_class_snr.csv";
pub const CONFIDENCE_CSV: &str = "confidence.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const ACC_BY_SNR_SVG: &str = "acc_by_snr.svg";
pub const ACC_BY_CLASS_SNR_SVG: &str = "acc_by_class_snr.svg";

/// Name of the per-SNR confusion matrix file, e.g. `confusion_-20.csv`.
pub fn confusion_csv_name(snr_db: i8) -> String {
    format!("confusion_{snr_db}.csv")
}

/// Distinguishable line colors; class index picks cyclically.
const PALETTE: [&str; 11] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf", "#111111",
];

/// Writes every analysis artifact under `out_dir` and returns the paths:
/// accuracy-vs-SNR and per-class accuracy tables, one confusion matrix
/// per SNR (rows are the true scheme, columns the prediction), the mean
/// confidence table, a scalar summary, and SVG charts of the two
/// accuracy curves. Cells without instances are omitted from the CSVs
/// rather than written as zero.
pub fn export_report(report: &EvalReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    report.validate()?;
    fs::create_dir_all(out_dir)
        .map_err(|e| Error::io(format!("creating output dir {}", out_dir.display()), e))?;
    let mut written = Vec::new();
    let mut emit = |name: String, content: String| -> Result<()> {
        let path = out_dir.join(name);
        fs::write(&path, content)
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        written.push(path);
        Ok(())
    };

    let mut csv = String::from("snr_db,accuracy\n");
    for (snr, acc) in report.snrs.iter().zip(&report.acc_by_snr) {
        writeln!(csv, "{snr},{acc:.9}").unwrap();
    }
    emit(ACC_BY_SNR_CSV.into(), csv)?;

    let mut csv = String::from("scheme,snr_db,accuracy\n");
    for (scheme, row) in report.schemes.iter().zip(&report.acc_by_class_snr) {
        for (snr, cell) in report.snrs.iter().zip(row) {
            if let Some(acc) = cell {
                writeln!(csv, "{},{snr},{acc:.9}", scheme.name()).unwrap();
            }
        }
    }
    emit(ACC_BY_CLASS_SNR_CSV.into(), csv)?;

    for (snr, matrix) in report.snrs.iter().zip(&report.confusion_by_snr) {
        let mut csv = String::from("truth");
        for scheme in &report.schemes {
            write!(csv, ",{}", scheme.name()).unwrap();
        }
        csv.push('\n');
        for (scheme, row) in report.schemes.iter().zip(matrix) {
            write!(csv, "{}", scheme.name()).unwrap();
            for n in row {
                write!(csv, ",{n}").unwrap();
            }
            csv.push('\n');
        }
        emit(confusion_csv_name(*snr), csv)?;
    }

    let mut csv = String::from("kind,key,mean_confidence\n");
    for (snr, w) in report.snrs.iter().zip(&report.mean_conf_by_snr) {
        writeln!(csv, "snr,{snr},{w:.9}").unwrap();
    }
    for (scheme, w) in report.schemes.iter().zip(&report.mean_conf_by_class) {
        if let Some(w) = w {
            writeln!(csv, "class,{},{w:.9}", scheme.name()).unwrap();
        }
    }
    emit(CONFIDENCE_CSV.into(), csv)?;

    let mut csv = String::from("metric,value\n");
    writeln!(csv, "overall_accuracy,{:.9}", report.overall_accuracy).unwrap();
    writeln!(csv, "average_accuracy,{:.9}", report.average_accuracy).unwrap();
    writeln!(csv, "max_accuracy,{:.9}", report.max_accuracy).unwrap();
    writeln!(csv, "topk,{}", report.topk).unwrap();
    emit(SUMMARY_CSV.into(), csv)?;

    let overall = [Series {
        label: "all schemes".into(),
        color: PALETTE[0],
        points: report
            .snrs
            .iter()
            .zip(&report.acc_by_snr)
            .map(|(s, a)| (*s, Some(*a)))
            .collect(),
    }];
    emit(
        ACC_BY_SNR_SVG.into(),
        line_chart("Accuracy vs SNR", &report.snrs, &overall),
    )?;

    let per_class: Vec<Series> = report
        .schemes
        .iter()
        .zip(&report.acc_by_class_snr)
        .enumerate()
        .map(|(i, (scheme, row))| Series {
            label: scheme.name().into(),
            color: PALETTE[i % PALETTE.len()],
            points: report.snrs.iter().zip(row).map(|(s, a)| (*s, *a)).collect(),
        })
        .collect();
    emit(
        ACC_BY_CLASS_SNR_SVG.into(),
        line_chart("Per-scheme accuracy vs SNR", &report.snrs, &per_class),
    )?;

    Ok(written)
}

struct Series {
    label: String,
    color: &'static str,
    points: Vec<(i8, Option<f64>)>,
}

/// A fixed-geometry line chart: accuracy in [0, 1] against SNR, one
/// polyline per series (split where cells are absent), legend at the
/// right. Pure text assembly, so identical input gives identical bytes.
fn line_chart(title: &str, snrs: &[i8], series: &[Series]) -> String {
    const W: f64 = 880.0;
    const H: f64 = 560.0;
    const L: f64 = 70.0;
    const T: f64 = 50.0;
    const PLOT_W: f64 = 600.0;
    const PLOT_H: f64 = 440.0;

    let lo = f64::from(*snrs.first().expect("validated nonempty"));
    let hi = f64::from(*snrs.last().expect("validated nonempty"));
    let x_of = |snr: i8| {
        if hi > lo {
            L + (f64::from(snr) - lo) / (hi - lo) * PLOT_W
        } else {
            L + PLOT_W / 2.0
        }
    };
    let y_of = |acc: f64| T + PLOT_H - acc * PLOT_H;

    let mut svg = String::new();
    writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\">"
    )
    .unwrap();
    writeln!(svg, "<rect width=\"{W}\" height=\"{H}\" fill=\"#ffffff\"/>").unwrap();
    writeln!(
        svg,
        "<text x=\"{:.2}\" y=\"28\" font-size=\"18\" text-anchor=\"middle\" fill=\"#111111\">{}</text>",
        L + PLOT_W / 2.0,
        escape(title)
    )
    .unwrap();

    for i in 0..=5 {
        let acc = f64::from(i) / 5.0;
        let y = y_of(acc);
        writeln!(
            svg,
            "<line x1=\"{L}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"#dddddd\"/>",
            L + PLOT_W
        )
        .unwrap();
        writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"end\" fill=\"#111111\">{acc:.1}</text>",
            L - 8.0,
            y + 4.0
        )
        .unwrap();
    }
    let label_step = if snrs.len() > 12 { 2 } else { 1 };
    for (i, &snr) in snrs.iter().enumerate() {
        let x = x_of(snr);
        writeln!(
            svg,
            "<line x1=\"{x:.2}\" y1=\"{:.2}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"#999999\"/>",
            T + PLOT_H,
            T + PLOT_H + 5.0
        )
        .unwrap();
        if i % label_step == 0 {
            writeln!(
                svg,
                "<text x=\"{x:.2}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"middle\" fill=\"#111111\">{snr}</text>",
                T + PLOT_H + 20.0
            )
            .unwrap();
        }
    }
    writeln!(
        svg,
        "<rect x=\"{L}\" y=\"{T}\" width=\"{PLOT_W}\" height=\"{PLOT_H}\" fill=\"none\" stroke=\"#111111\"/>"
    )
    .unwrap();
    writeln!(
        svg,
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"14\" text-anchor=\"middle\" fill=\"#111111\">SNR (dB)</text>",
        L + PLOT_W / 2.0,
        T + PLOT_H + 45.0
    )
    .unwrap();
    writeln!(
        svg,
        "<text x=\"22\" y=\"{:.2}\" font-size=\"14\" text-anchor=\"middle\" fill=\"#111111\" transform=\"rotate(-90 22 {:.2})\">accuracy</text>",
        T + PLOT_H / 2.0,
        T + PLOT_H / 2.0
    )
    .unwrap();

    for s in series {
        let mut run: Vec<(f64, f64)> = Vec::new();
        let flush = |run: &mut Vec<(f64, f64)>, svg: &mut String| {
            if run.len() > 1 {
                let pts: Vec<String> = run.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
                writeln!(
                    svg,
                    "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\"/>",
                    pts.join(" "),
                    s.color
                )
                .unwrap();
            }
            run.clear();
        };
        for (snr, acc) in &s.points {
            match acc {
                Some(a) => run.push((x_of(*snr), y_of(*a))),
                None => flush(&mut run, &mut svg),
            }
        }
        flush(&mut run, &mut svg);
        for (snr, acc) in &s.points {
            if let Some(a) = acc {
                writeln!(
                    svg,
                    "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{}\"/>",
                    x_of(*snr),
                    y_of(*a),
                    s.color
                )
                .unwrap();
            }
        }
    }

    let legend_x = L + PLOT_W + 25.0;
    for (i, s) in series.iter().enumerate() {
        let y = T + 15.0 + 22.0 * i as f64;
        writeln!(
            svg,
            "<line x1=\"{legend_x:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"{}\" stroke-width=\"3\"/>",
            legend_x + 24.0,
            s.color
        )
        .unwrap();
        writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"13\" fill=\"#111111\">{}</text>",
            legend_x + 32.0,
            y + 4.0,
            escape(&s.label)
        )
        .unwrap();
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{build_report, InstanceOutcome};
    use crate::signal::ModulationScheme;
    use tempfile::tempdir;

    fn sample_report() -> EvalReport {
        let schemes = vec![
            ModulationScheme::Bpsk,
            ModulationScheme::Qam16,
            ModulationScheme::AmDsb,
        ];
        let mut outcomes = Vec::new();
        for (si, &snr) in [-4i8, 2, 8].iter().enumerate() {
            for class in 0..3usize {
                // class 2 absent at the lowest snr
                if class == 2 && si == 0 {
                    continue;
                }
                for i in 0..4usize {
                    let pred = if i < 2 + si { class } else { (class + 1) % 3 };
                    outcomes.push(InstanceOutcome {
                        class,
                        snr_db: snr,
                        pred,
                        confidence: 0.25 * (i as f64 + si as f64) / 8.0 + 0.3,
                    });
                }
            }
        }
        build_report(&schemes, 2, &outcomes).unwrap()
    }

    #[test]
    fn export_writes_expected_files_byte_stably() {
        let report = sample_report();
        let dir = tempdir().unwrap();
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        let files_a = export_report(&report, &a).unwrap();
        let files_b = export_report(&report, &b).unwrap();
        // 4 fixed csvs + 2 svgs + one confusion matrix per snr
        assert_eq!(files_a.len(), 6 + report.snrs.len());
        for (fa, fb) in files_a.iter().zip(&files_b) {
            assert_eq!(fa.file_name(), fb.file_name());
            assert_eq!(
                std::fs::read(fa).unwrap(),
                std::fs::read(fb).unwrap(),
                "{} not byte-stable",
                fa.display()
            );
        }
    }

    #[test]
    fn csv_values_reparse_to_report() {
        let report = sample_report();
        let dir = tempdir().unwrap();
        export_report(&report, dir.path()).unwrap();

        let text = std::fs::read_to_string(dir.path().join(ACC_BY_SNR_CSV)).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("snr_db,accuracy"));
        for ((snr, acc), line) in report.snrs.iter().zip(&report.acc_by_snr).zip(lines) {
            let (s, a) = line.split_once(',').unwrap();
            assert_eq!(s.parse::<i8>().unwrap(), *snr);
            assert!((a.parse::<f64>().unwrap() - acc).abs() < 1e-9);
        }

        let text = std::fs::read_to_string(dir.path().join(ACC_BY_CLASS_SNR_CSV)).unwrap();
        let mut cells = 0;
        for line in text.lines().skip(1) {
            let mut f = line.split(',');
            let scheme = f.next().unwrap();
            let snr: i8 = f.next().unwrap().parse().unwrap();
            let acc: f64 = f.next().unwrap().parse().unwrap();
            let ci = report
                .schemes
                .iter()
                .position(|s| s.name() == scheme)
                .unwrap();
            let si = report.snrs.iter().position(|s| *s == snr).unwrap();
            assert!((report.acc_by_class_snr[ci][si].unwrap() - acc).abs() < 1e-9);
            cells += 1;
        }
        let present = report
            .acc_by_class_snr
            .iter()
            .flatten()
            .filter(|c| c.is_some())
            .count();
        assert_eq!(cells, present, "absent cells must be omitted");

        for (si, snr) in report.snrs.iter().enumerate() {
            let text = std::fs::read_to_string(dir.path().join(confusion_csv_name(*snr))).unwrap();
            let mut lines = text.lines();
            let header: Vec<&str> = lines.next().unwrap().split(',').collect();
            assert_eq!(header[0], "truth");
            for (ci, line) in lines.enumerate() {
                let mut f = line.split(',');
                assert_eq!(f.next().unwrap(), report.schemes[ci].name());
                let counts: Vec<u64> = f.map(|x| x.parse().unwrap()).collect();
                assert_eq!(counts, report.confusion_by_snr[si][ci]);
            }
        }
    }

    #[test]
    fn confidence_csv_covers_snrs_then_present_classes() {
        let report = sample_report();
        let dir = tempdir().unwrap();
        export_report(&report, dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join(CONFIDENCE_CSV)).unwrap();
        let rows: Vec<&str> = text.lines().skip(1).collect();
        let snr_rows = rows.iter().filter(|r| r.starts_with("snr,")).count();
        let class_rows = rows.iter().filter(|r| r.starts_with("class,")).count();
        assert_eq!(snr_rows, report.snrs.len());
        let present = report.mean_conf_by_class.iter().flatten().count();
        assert_eq!(class_rows, present);
    }

    #[test]
    fn svg_charts_are_well_formed() {
        let report = sample_report();
        let dir = tempdir().unwrap();
        export_report(&report, dir.path()).unwrap();
        for name in [ACC_BY_SNR_SVG, ACC_BY_CLASS_SNR_SVG] {
            let svg = std::fs::read_to_string(dir.path().join(name)).unwrap();
            assert!(svg.starts_with("<svg "), "{name}");
            assert!(svg.contains("xmlns=\"http://www.w3.org/2000/svg\""));
            assert!(svg.trim_end().ends_with("</svg>"));
            assert!(!svg.contains("NaN"), "{name} contains NaN coordinates");
            check_tag_balance(&svg);
        }
        // per-class chart draws one legend entry per scheme
        let svg = std::fs::read_to_string(dir.path().join(ACC_BY_CLASS_SNR_SVG)).unwrap();
        for scheme in &report.schemes {
            assert!(svg.contains(&format!(">{}</text>", scheme.name())));
        }
    }

    /// Minimal well-formedness check for the markup this module emits
    /// (plain tags and self-closing tags, no comments or CDATA).
    fn check_tag_balance(svg: &str) {
        let mut stack: Vec<String> = Vec::new();
        for chunk in svg.split('<').skip(1) {
            let tag = chunk.split('>').next().expect("unterminated tag");
            if let Some(name) = tag.strip_prefix('/') {
                assert_eq!(stack.pop().as_deref(), Some(name), "mismatched close");
            } else if !tag.ends_with('/') {
                let name = tag.split_whitespace().next().unwrap();
                stack.push(name.to_string());
            }
        }
        assert!(stack.is_empty(), "unclosed tags: {stack:?}");
    }
}
