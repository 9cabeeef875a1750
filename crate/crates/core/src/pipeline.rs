//! End-to-end runs: ingest, PCA, features, classification, report.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::complex::{knn_graph, local_complex, LocalComplex};
use crate::config::{IntervalMode, RunConfig};
use crate::embed::{self, pairwise_distances, Embedding};
use crate::error::{Error, Result, StageExt};
use crate::eval::{self, CvConfig, EvalReport, Scores};
use crate::features::{
    assemble_features, spectrum_stats, CellKey, FeatureLayout, FeatureMatrix, SpectrumStats,
    Standardizer,
};
use crate::ingest::{self, container, DatasetMatrix};
use crate::io::write_atomic;
use crate::par::{self, Execution};
use crate::report::{self, ResultRow, AGGREGATED, AVERAGE};
use crate::sheaf::{build_sheaf, coboundaries};
use crate::spectral::{eigenvalues, laplacian, persistent_laplacian, Order};

/// Settings that determine the feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSpec {
    pub dims: Vec<usize>,
    pub ks: Vec<usize>,
    pub orders: Vec<usize>,
    pub interval: IntervalMode,
    pub zero_tol: f64,
    pub edge_cap: usize,
}

impl From<&RunConfig> for FeatureSpec {
    fn from(c: &RunConfig) -> Self {
        Self {
            dims: c.dims.clone(),
            ks: c.ks.clone(),
            orders: c.orders.clone(),
            interval: c.interval,
            zero_tol: c.zero_tol,
            edge_cap: c.edge_cap,
        }
    }
}

/// Linear-interpolation quantile of sorted values.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Spectral statistics of one local complex, one entry per order.
pub fn local_stats(complex: &LocalComplex, spec: &FeatureSpec) -> Result<Vec<SpectrumStats>> {
    let sheaf = build_sheaf(complex);
    let orders: Vec<Order> = spec
        .orders
        .iter()
        .map(|&h| Order::from_index(h))
        .collect::<Result<_>>()?;
    let laps = match spec.interval {
        IntervalMode::Full => {
            let cb = coboundaries(complex, &sheaf)?;
            orders
                .iter()
                .map(|&h| laplacian(&cb, h))
                .collect::<Vec<_>>()
        }
        IntervalMode::Quantile { a, b } => {
            let mut vals: Vec<f64> = complex.edges.iter().map(|e| e.value).collect();
            vals.sort_by(f64::total_cmp);
            let (ta, tb) = (quantile(&vals, a), quantile(&vals, b));
            orders
                .iter()
                .map(|&h| persistent_laplacian(complex, &sheaf, ta, tb, h))
                .collect::<Result<Vec<_>>>()?
        }
    };
    laps.iter()
        .map(|l| eigenvalues(l, spec.zero_tol).map(|s| spectrum_stats(&s)))
        .collect()
}

/// MPSL features from PCA coordinates of dimension at least `max(dims)`.
pub fn extract_features(
    coords: &Embedding,
    spec: &FeatureSpec,
    exec: Execution,
) -> Result<FeatureMatrix> {
    let layout = FeatureLayout::new(spec.orders.clone(), spec.dims.clone(), spec.ks.clone())?;
    let m = coords.coords.rows();
    let mut cells: HashMap<CellKey, SpectrumStats> =
        HashMap::with_capacity(m * layout.columns() / 7);
    for &d in &layout.dims {
        let dist = pairwise_distances(&coords.truncate(d)?, exec)?;
        for &k in &layout.ks {
            let graph = knn_graph(&dist, k, exec)?;
            let per_sample = par::try_map_indexed(m, exec, |i| {
                local_stats(&local_complex(&dist, &graph, i, spec.edge_cap)?, spec)
            })?;
            for (i, stats) in per_sample.into_iter().enumerate() {
                for (&h, s) in layout.orders.iter().zip(stats) {
                    cells.insert(
                        CellKey {
                            sample: i,
                            order: h,
                            dim: d,
                            k,
                        },
                        s,
                    );
                }
            }
        }
    }
    assemble_features(&cells, &coords.labels, &layout)
}

pub fn layout_sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".layout.json");
    PathBuf::from(s)
}

/// Writes features in the matrix container plus a `<path>.layout.json` sidecar.
pub fn save_features(
    fm: &FeatureMatrix,
    class_names: &BTreeMap<u32, String>,
    path: &Path,
) -> Result<()> {
    let ds = DatasetMatrix::new(fm.rows.clone(), fm.labels.clone(), class_names.clone())?;
    container::save_matrix(&ds, path)?;
    let json = serde_json::to_vec_pretty(&fm.layout).map_err(|e| Error::Format(e.to_string()))?;
    write_atomic(&layout_sidecar(path), &json)
}

pub fn load_features(path: &Path) -> Result<(FeatureMatrix, BTreeMap<u32, String>)> {
    let ds = container::load_matrix(path)?;
    let side = layout_sidecar(path);
    let text = std::fs::read(&side).map_err(|e| Error::io(&side, e))?;
    let layout: FeatureLayout = serde_json::from_slice(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", side.display())))?;
    if layout.columns() != ds.n() {
        return Err(Error::Format(format!(
            "{} describes {} columns but the matrix has {}",
            side.display(),
            layout.columns(),
            ds.n()
        )));
    }
    Ok((
        FeatureMatrix {
            layout,
            rows: ds.data,
            labels: ds.labels,
        },
        ds.class_names,
    ))
}

pub fn load_input(cfg: &RunConfig, exec: Execution) -> Result<DatasetMatrix> {
    if let Some(p) = &cfg.matrix {
        return container::load_matrix(p);
    }
    let root = cfg
        .dataset
        .as_ref()
        .ok_or_else(|| Error::Config("either dataset or matrix must be set".into()))?;
    let (records, names) = ingest::load_records(root, cfg.resolution, exec)?;
    ingest::from_records(&records, names)
}

fn sha_hex(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(h.finalize())
}

/// Cache key of the feature matrix for `ds` under `cfg`.
pub fn feature_cache_key(ds: &DatasetMatrix, cfg: &RunConfig) -> Result<String> {
    let bytes = container::encode(ds)?;
    Ok(sha_hex(&[&bytes, cfg.feature_key().as_bytes()]))
}

#[derive(Debug, Clone, Serialize)]
pub struct NamedReport {
    pub method: String,
    pub dim: String,
    pub report: EvalReport,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub rows: Vec<ResultRow>,
    pub reports: Vec<NamedReport>,
    pub features: FeatureMatrix,
    pub feature_cache_hit: bool,
}

fn row(method: &str, dim: &str, s: Scores) -> ResultRow {
    ResultRow {
        method: method.into(),
        pca_dim: dim.into(),
        acc: s.accuracy,
        mr: s.macro_recall,
        macro_f1: s.macro_f1,
    }
}

fn average(rows: &[&ResultRow]) -> Scores {
    let n = rows.len() as f64;
    Scores {
        accuracy: rows.iter().map(|r| r.acc).sum::<f64>() / n,
        macro_recall: rows.iter().map(|r| r.mr).sum::<f64>() / n,
        macro_f1: rows.iter().map(|r| r.macro_f1).sum::<f64>() / n,
    }
}

/// PCA baseline with the projection refitted on each training fold.
fn pca_per_fold(
    ds: &DatasetMatrix,
    d: usize,
    cv: &CvConfig,
    standardize: bool,
    exec: Execution,
) -> Result<EvalReport> {
    eval::cross_validate_with(
        &ds.labels,
        ds.class_count(),
        cv,
        standardize,
        exec,
        |fold| {
            let train = ds.data.select_rows(&fold.train);
            let test = ds.data.select_rows(&fold.test);
            let model = embed::fit_pca_rows(&train, d, exec)?;
            let tr = embed::project_rows(&model, &train, d, exec)?;
            let te = embed::project_rows(&model, &test, d, exec)?;
            if standardize {
                let all: Vec<usize> = (0..tr.rows()).collect();
                let st = Standardizer::fit(&tr, &all)?;
                Ok((st.apply(&tr), st.apply(&te)))
            } else {
                Ok((tr, te))
            }
        },
    )
}

/// Runs every stage in memory; `run_pipeline` adds the on-disk outputs.
pub fn compute(cfg: &RunConfig, ds: &DatasetMatrix, exec: Execution) -> Result<PipelineOutput> {
    cfg.validate()?;
    cfg.validate_for(ds.m())?;
    let d_max = *cfg.dims.last().expect("validated");
    let model = embed::fit_pca(ds, d_max, exec).stage("pca")?;
    let coords = embed::project(&model, ds, d_max, exec).stage("pca")?;
    let spec = FeatureSpec::from(cfg);

    let cache_path = if cfg.cache {
        let key = feature_cache_key(ds, cfg)?;
        Some(
            cfg.out
                .join("cache")
                .join(format!("features-{}.mpslmat", &key[..16])),
        )
    } else {
        None
    };
    let cached = cache_path
        .as_ref()
        .filter(|p| p.exists())
        .and_then(|p| load_features(p).ok())
        .filter(|(fm, _)| fm.labels == ds.labels);
    let feature_cache_hit = cached.is_some();
    let features = match cached {
        Some((fm, _)) => fm,
        None => {
            let fm = extract_features(&coords, &spec, exec).stage("features")?;
            if let Some(p) = &cache_path {
                if let Some(dir) = p.parent() {
                    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                }
                save_features(&fm, &ds.class_names, p).stage("features")?;
            }
            fm
        }
    };

    let classes = ds.class_count();
    let mut reports = Vec::new();
    let mut rows = Vec::new();
    for &d in &cfg.dims {
        let r = if cfg.pca_per_fold {
            pca_per_fold(ds, d, &cfg.cv, cfg.standardize, exec)
        } else {
            let x = coords.truncate(d)?.coords;
            eval::cross_validate(&x, &ds.labels, classes, &cfg.cv, cfg.standardize, exec)
        }
        .stage("classify")?;
        rows.push(row("PCA", &d.to_string(), r.mean));
        reports.push(NamedReport {
            method: "PCA".into(),
            dim: d.to_string(),
            report: r,
        });
    }
    for &d in &cfg.dims {
        let fm = features.select_dim(d)?;
        let r = eval::cross_validate(
            &fm.rows,
            &fm.labels,
            classes,
            &cfg.cv,
            cfg.standardize,
            exec,
        )
        .stage("classify")?;
        rows.push(row("MPSL", &d.to_string(), r.mean));
        reports.push(NamedReport {
            method: "MPSL".into(),
            dim: d.to_string(),
            report: r,
        });
    }
    for method in ["PCA", "MPSL"] {
        let per_dim: Vec<&ResultRow> = rows.iter().filter(|r| r.method == method).collect();
        let avg = average(&per_dim);
        rows.push(row(method, AVERAGE, avg));
    }
    let agg = eval::cross_validate(
        &features.rows,
        &features.labels,
        classes,
        &cfg.cv,
        cfg.standardize,
        exec,
    )
    .stage("classify")?;
    rows.push(row("MPSL", AGGREGATED, agg.mean));
    reports.push(NamedReport {
        method: "MPSL".into(),
        dim: AGGREGATED.into(),
        report: agg,
    });

    Ok(PipelineOutput {
        rows,
        reports,
        features,
        feature_cache_hit,
    })
}

pub fn fold_csv(reports: &[NamedReport]) -> String {
    let mut s = format!("{}\n", eval::FOLD_CSV_HEADER);
    for r in reports {
        s.push_str(&r.report.csv_rows(&r.method, &r.dim));
    }
    s
}

/// Full run: all numeric outputs plus plots, written atomically under
/// `cfg.out`, on a pool of `cfg.threads` workers.
pub fn run_pipeline(cfg: &RunConfig) -> Result<PipelineOutput> {
    par::with_threads(cfg.threads, || {
        let exec = Execution::Parallel;
        cfg.validate()?;
        let ds = load_input(cfg, exec).stage("ingest")?;
        let out = compute(cfg, &ds, exec)?;
        let dir = &cfg.out;
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, bytes: &[u8]| write_atomic(&dir.join(name), bytes).stage("write");
        save_features(
            &out.features,
            &ds.class_names,
            &dir.join("features.mpslmat"),
        )
        .stage("write")?;
        write("folds.csv", fold_csv(&out.reports).as_bytes())?;
        let summary =
            serde_json::to_vec_pretty(&out.reports).map_err(|e| Error::Format(e.to_string()))?;
        write("summary.json", &summary)?;
        write("config.txt", cfg.to_text().as_bytes())?;
        let results = dir.join("results.csv");
        write("results.csv", report::results_to_csv(&out.rows).as_bytes())?;
        report::report(&results, dir).stage("report")?;
        Ok(out)
    })
}
