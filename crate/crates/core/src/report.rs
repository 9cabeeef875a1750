//! `results.csv` reading/writing and static SVG/markdown reports.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const RESULTS_COLUMNS: [&str; 5] = ["method", "pca_dim", "acc", "mr", "macro_f1"];
pub const AVERAGE: &str = "AVERAGE";
pub const AGGREGATED: &str = "AGGREGATED";

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub method: String,
    /// A dimension, [`AVERAGE`] or [`AGGREGATED`].
    pub pca_dim: String,
    pub acc: f64,
    pub mr: f64,
    pub macro_f1: f64,
}

impl ResultRow {
    pub fn dim(&self) -> Option<usize> {
        self.pca_dim.parse().ok()
    }

    fn metric(&self, m: Metric) -> f64 {
        match m {
            Metric::Acc => self.acc,
            Metric::Mr => self.mr,
            Metric::MacroF1 => self.macro_f1,
        }
    }
}

pub fn results_to_csv(rows: &[ResultRow]) -> String {
    let mut s = RESULTS_COLUMNS.join(",");
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{:.6},{:.6},{:.6}",
            r.method, r.pca_dim, r.acc, r.mr, r.macro_f1
        );
    }
    s
}

/// Parses a results table. Column order is free; all five columns are
/// required.
pub fn parse_results(text: &str) -> Result<Vec<ResultRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::Schema(format!("unreadable header: {e}")))?
        .clone();
    if headers.is_empty() || headers.iter().all(str::is_empty) {
        return Err(Error::Schema(format!(
            "empty results table; expected columns {}",
            RESULTS_COLUMNS.join(",")
        )));
    }
    let idx: Vec<Option<usize>> = RESULTS_COLUMNS
        .iter()
        .map(|c| headers.iter().position(|h| h == *c))
        .collect();
    let missing: Vec<&str> = RESULTS_COLUMNS
        .iter()
        .zip(&idx)
        .filter(|(_, i)| i.is_none())
        .map(|(c, _)| *c)
        .collect();
    if !missing.is_empty() {
        return Err(Error::Schema(format!(
            "missing columns: {}",
            missing.join(", ")
        )));
    }
    let idx: Vec<usize> = idx.into_iter().flatten().collect();
    let mut rows = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Schema(format!("row {}: {e}", line + 1)))?;
        let field = |j: usize| rec.get(idx[j]).unwrap_or("");
        let num = |j: usize| -> Result<f64> {
            field(j).parse().map_err(|_| {
                Error::Schema(format!(
                    "row {}: {} is not a number: {:?}",
                    line + 1,
                    RESULTS_COLUMNS[j],
                    field(j)
                ))
            })
        };
        rows.push(ResultRow {
            method: field(0).to_string(),
            pca_dim: field(1).to_string(),
            acc: num(2)?,
            mr: num(3)?,
            macro_f1: num(4)?,
        });
    }
    if rows.is_empty() {
        return Err(Error::Schema(
            "results table has a header but no rows".into(),
        ));
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Acc,
    Mr,
    MacroF1,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Acc, Metric::Mr, Metric::MacroF1];

    pub fn key(self) -> &'static str {
        match self {
            Metric::Acc => "acc",
            Metric::Mr => "mr",
            Metric::MacroF1 => "macro_f1",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Metric::Acc => "Accuracy",
            Metric::Mr => "Macro recall",
            Metric::MacroF1 => "Macro F1",
        }
    }
}

/// Per-dimension series for `method`, sorted by dimension.
pub fn series(rows: &[ResultRow], method: &str, metric: Metric) -> Vec<(usize, f64)> {
    let mut s: Vec<(usize, f64)> = rows
        .iter()
        .filter(|r| r.method == method)
        .filter_map(|r| r.dim().map(|d| (d, r.metric(metric))))
        .collect();
    s.sort_by_key(|p| p.0);
    s
}

fn sentinel(rows: &[ResultRow], method: &str, tag: &str, metric: Metric) -> Option<f64> {
    rows.iter()
        .find(|r| r.method == method && r.pca_dim == tag)
        .map(|r| r.metric(metric))
}

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 56.0;

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (H - TOP - BOTTOM)
    }
}

const PCA_COLOR: &str = "#1f77b4";
const MPSL_COLOR: &str = "#d62728";

/// One line chart of `metric` against PCA dimension.
pub fn render_svg(rows: &[ResultRow], metric: Metric) -> String {
    let pca = series(rows, "PCA", metric);
    let mpsl = series(rows, "MPSL", metric);
    let avg = sentinel(rows, "MPSL", AVERAGE, metric);
    let agg = sentinel(rows, "MPSL", AGGREGATED, metric);

    let xs: Vec<f64> = pca.iter().chain(&mpsl).map(|p| p.0 as f64).collect();
    let (mut x0, mut x1) = xs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| {
            (a.min(x), b.max(x))
        });
    if !x0.is_finite() {
        (x0, x1) = (0.0, 1.0);
    }
    if x1 - x0 < 1e-9 {
        (x0, x1) = (x0 - 1.0, x1 + 1.0);
    }
    let ys: Vec<f64> = pca
        .iter()
        .chain(&mpsl)
        .map(|p| p.1)
        .chain(avg)
        .chain(agg)
        .collect();
    let lo = ys.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (y0, y1) = if lo.is_finite() {
        let pad = ((hi - lo) * 0.1).max(0.02);
        (
            (lo - pad).max(0.0),
            (hi + pad).min(1.0).max((lo - pad).max(0.0) + 0.04),
        )
    } else {
        (0.0, 1.0)
    };
    let f = Frame { x0, x1, y0, y1 };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{} vs. PCA dimension</text>"#,
        (LEFT + W - RIGHT) / 2.0,
        metric.title()
    );
    // axes and ticks
    let (bx, by) = (f.px(x0), f.py(y0));
    let _ = writeln!(
        s,
        r#"<path d="M{bx:.1},{:.1} L{bx:.1},{by:.1} L{:.1},{by:.1}" stroke="black" fill="none"/>"#,
        f.py(y1),
        f.px(x1)
    );
    for i in 0..=5 {
        let y = y0 + (y1 - y0) * i as f64 / 5.0;
        let _ = writeln!(
            s,
            r##"<line x1="{:.1}" y1="{py:.1}" x2="{:.1}" y2="{py:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{y:.2}</text>"##,
            bx,
            f.px(x1),
            bx - 6.0,
            f.py(y) + 4.0,
            py = f.py(y)
        );
    }
    let mut dims: Vec<usize> = pca.iter().chain(&mpsl).map(|p| p.0).collect();
    dims.sort_unstable();
    dims.dedup();
    for d in &dims {
        let x = f.px(*d as f64);
        let _ = writeln!(
            s,
            r#"<line x1="{x:.1}" y1="{by:.1}" x2="{x:.1}" y2="{:.1}" stroke="black"/><text x="{x:.1}" y="{:.1}" text-anchor="middle">{d}</text>"#,
            by + 5.0,
            by + 19.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">PCA dimension</text>"#,
        (LEFT + W - RIGHT) / 2.0,
        H - 14.0
    );

    let polyline = |s: &mut String, pts: &[(usize, f64)], color: &str| {
        if pts.is_empty() {
            return;
        }
        let path: Vec<String> = pts
            .iter()
            .map(|&(d, v)| format!("{:.1},{:.1}", f.px(d as f64), f.py(v)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" stroke="{color}" stroke-width="2" fill="none"/>"#,
            path.join(" ")
        );
        for &(d, v) in pts {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#,
                f.px(d as f64),
                f.py(v)
            );
        }
    };
    polyline(&mut s, &pca, PCA_COLOR);
    polyline(&mut s, &mpsl, MPSL_COLOR);
    let hline = |s: &mut String, v: f64, dash: &str| {
        let _ = writeln!(
            s,
            r#"<line x1="{bx:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="{MPSL_COLOR}" stroke-width="1.5"{dash}/>"#,
            f.px(x1),
            y = f.py(v)
        );
    };
    if let Some(v) = avg {
        hline(&mut s, v, r#" stroke-dasharray="6,4""#);
    }
    if let Some(v) = agg {
        hline(&mut s, v, "");
    }

    let lx = W - RIGHT + 14.0;
    let mut ly = TOP + 10.0;
    let mut legend = |s: &mut String, label: &str, color: &str, dash: &str| {
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"{dash}/><text x="{}" y="{}">{label}</text>"#,
            lx + 24.0,
            lx + 30.0,
            ly + 4.0
        );
        ly += 18.0;
    };
    if !pca.is_empty() {
        legend(&mut s, "PCA", PCA_COLOR, "");
    }
    if !mpsl.is_empty() {
        legend(&mut s, "MPSL", MPSL_COLOR, "");
    }
    if avg.is_some() {
        legend(
            &mut s,
            "MPSL average",
            MPSL_COLOR,
            r#" stroke-dasharray="6,4""#,
        );
    }
    if agg.is_some() {
        legend(&mut s, "MPSL aggregated", MPSL_COLOR, "");
    }
    s.push_str("</svg>\n");
    s
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (
        mean,
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt(),
    )
}

/// Markdown summary of a results table.
pub fn render_markdown(rows: &[ResultRow]) -> String {
    let mut s = String::from(
        "# Results\n\n| method | pca_dim | acc | mr | macro_f1 |\n|---|---|---|---|---|\n",
    );
    for r in rows {
        let _ = writeln!(
            s,
            "| {} | {} | {:.4} | {:.4} | {:.4} |",
            r.method, r.pca_dim, r.acc, r.mr, r.macro_f1
        );
    }
    s.push_str("\n## Accuracy across dimensions\n\n| method | dims | mean | std | min | max |\n|---|---|---|---|---|---|\n");
    for method in ["PCA", "MPSL"] {
        let acc: Vec<f64> = series(rows, method, Metric::Acc)
            .into_iter()
            .map(|p| p.1)
            .collect();
        if acc.is_empty() {
            continue;
        }
        let (mean, std) = mean_std(&acc);
        let min = acc.iter().copied().fold(f64::INFINITY, f64::min);
        let max = acc.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let _ = writeln!(
            s,
            "| {method} | {} | {mean:.4} | {std:.4} | {min:.4} | {max:.4} |",
            acc.len()
        );
    }
    let diverging: Vec<String> = rows
        .iter()
        .filter(|r| r.method == "PCA" && (r.acc - r.mr).abs() > 0.02)
        .map(|r| r.pca_dim.clone())
        .collect();
    if !diverging.is_empty() {
        let _ = writeln!(
            s,
            "\nPCA accuracy and macro recall differ by more than 0.02 at: {}\n",
            diverging.join(", ")
        );
    }
    s
}

/// Writes `{acc,mr,macro_f1}.svg` and `summary.md` into `out_dir`.
pub fn report(results_csv: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let text = std::fs::read_to_string(results_csv).map_err(|e| Error::io(results_csv, e))?;
    let rows = parse_results(&text)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    for metric in Metric::ALL {
        let path = out_dir.join(format!("{}.svg", metric.key()));
        write_atomic(&path, render_svg(&rows, metric).as_bytes())?;
        written.push(path);
    }
    let path = out_dir.join("summary.md");
    write_atomic(&path, render_markdown(&rows).as_bytes())?;
    written.push(path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    const COIL20: [(usize, f64, f64); 9] = [
        (200, 0.7604, 0.9049),
        (300, 0.5632, 0.9000),
        (400, 0.4396, 0.9146),
        (500, 0.3854, 0.9125),
        (600, 0.3410, 0.9118),
        (700, 0.2688, 0.9111),
        (800, 0.2104, 0.9118),
        (900, 0.1785, 0.9118),
        (1000, 0.1604, 0.9132),
    ];

    fn row(method: &str, dim: &str, v: f64) -> ResultRow {
        ResultRow {
            method: method.into(),
            pca_dim: dim.into(),
            acc: v,
            mr: v,
            macro_f1: v,
        }
    }

    fn coil_rows() -> Vec<ResultRow> {
        let mut rows: Vec<ResultRow> = COIL20
            .iter()
            .map(|&(d, p, _)| row("PCA", &d.to_string(), p))
            .collect();
        rows.extend(
            COIL20
                .iter()
                .map(|&(d, _, m)| row("MPSL", &d.to_string(), m)),
        );
        rows.push(row("PCA", AVERAGE, 0.3675));
        rows.push(row("MPSL", AVERAGE, 0.9091));
        rows.push(row("MPSL", AGGREGATED, 0.9167));
        rows
    }

    #[test]
    fn csv_round_trip() {
        let rows = coil_rows();
        assert_eq!(parse_results(&results_to_csv(&rows)).unwrap(), rows);
    }

    #[test]
    fn coil_table_series_shapes() {
        let rows = coil_rows();
        let mpsl = series(&rows, "MPSL", Metric::Acc);
        assert_eq!(mpsl.len(), 9);
        assert!(mpsl.iter().all(|p| (0.90..=0.92).contains(&p.1)));
        let pca = series(&rows, "PCA", Metric::Acc);
        assert!(pca.windows(2).all(|w| w[1].1 < w[0].1));
        let svg = render_svg(&rows, Metric::Acc);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(svg.matches("stroke-dasharray").count(), 2);
        assert!(render_markdown(&rows).contains("| MPSL | 9 |"));
    }

    #[test]
    fn degenerate_and_bad_tables() {
        let one = vec![row("MPSL", "10", 0.5)];
        let svg = render_svg(&one, Metric::Mr);
        assert!(svg.contains("<circle") && svg.ends_with("</svg>\n"));
        assert!(matches!(parse_results(""), Err(Error::Schema(_))));
        match parse_results("method,acc\nPCA,0.5\n") {
            Err(Error::Schema(msg)) => {
                assert!(msg.contains("pca_dim") && msg.contains("mr") && msg.contains("macro_f1"))
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse_results("method,pca_dim,acc,mr,macro_f1\nPCA,1,x,0,0\n").is_err());
    }

    #[test]
    fn report_writes_files() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("results.csv");
        std::fs::write(&csv, results_to_csv(&coil_rows())).unwrap();
        let files = report(&csv, &dir.path().join("plots")).unwrap();
        assert_eq!(files.len(), 4);
        for f in files {
            assert!(std::fs::metadata(f).unwrap().len() > 0);
        }
    }
}
