use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mpsl::config::{RunConfig, THREADS_ENV};
use mpsl::embed::{self, Embedding};
use mpsl::error::{Error, Result};
use mpsl::eval::{self, CvConfig, FOLD_CSV_HEADER};
use mpsl::features::FeatureMatrix;
use mpsl::ingest::{self, container, DatasetMatrix};
use mpsl::io::write_atomic;
use mpsl::par::{self, Execution};
use mpsl::pipeline::{self, FeatureSpec};
use mpsl::report;

#[derive(Parser)]
#[command(
    name = "mpsl",
    version,
    about = "Persistent sheaf Laplacian features and evaluation"
)]
struct Cli {
    /// Worker threads (0 = all cores). Overrides MPSL_THREADS.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load an image tree into a matrix container.
    Ingest {
        #[arg(long)]
        root: PathBuf,
        #[arg(long, default_value_t = 128)]
        resolution: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit PCA and store the `dmax`-dimensional coordinates.
    Pca {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        dmax: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute MPSL features from stored PCA coordinates.
    Features(FeatureArgs),
    /// Cross-validate a k-NN classifier on a feature or coordinate matrix.
    Classify(ClassifyArgs),
    /// Run the whole pipeline from a config file and/or flags.
    Sweep(Box<SweepArgs>),
    /// Render plots and a markdown summary from results.csv.
    Report {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct FeatureArgs {
    /// Coordinates written by `mpsl pca`.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    dims: Vec<usize>,
    #[arg(long, value_delimiter = ',', required = true)]
    ks: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0,1")]
    orders: Vec<usize>,
    /// `full`, or a quantile pair `a,b` of local edge values.
    #[arg(long, default_value = "full")]
    interval: String,
    #[arg(long)]
    zero_tol: Option<f64>,
    #[arg(long)]
    edge_cap: Option<usize>,
    /// Also export the features as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct ClassifyArgs {
    /// Feature matrix (with layout sidecar) or any matrix container.
    #[arg(long = "in")]
    input: PathBuf,
    /// Restrict to one dimension: the features of that dimension, or the
    /// first `dim` columns of a plain matrix.
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    knn_k: usize,
    #[arg(long)]
    no_shuffle: bool,
    #[arg(long)]
    stratified: bool,
    #[arg(long)]
    no_standardize: bool,
    /// Label used in the method column of the per-fold CSV.
    #[arg(long, default_value = "MPSL")]
    method: String,
    #[arg(long)]
    out_csv: Option<PathBuf>,
    #[arg(long)]
    out_json: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// key = value file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    matrix: Option<String>,
    #[arg(long)]
    resolution: Option<String>,
    #[arg(long)]
    dims: Option<String>,
    #[arg(long)]
    ks: Option<String>,
    #[arg(long)]
    orders: Option<String>,
    #[arg(long)]
    interval: Option<String>,
    #[arg(long)]
    zero_tol: Option<String>,
    #[arg(long)]
    edge_cap: Option<String>,
    #[arg(long)]
    folds: Option<String>,
    #[arg(long)]
    shuffle: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    knn_k: Option<String>,
    #[arg(long)]
    stratified: Option<String>,
    #[arg(long)]
    standardize: Option<String>,
    #[arg(long)]
    no_standardize: bool,
    #[arg(long)]
    pca_per_fold: Option<String>,
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    cache: Option<String>,
}

impl SweepArgs {
    fn overrides(&self) -> Vec<(&'static str, &str)> {
        let pairs: [(&'static str, &Option<String>); 18] = [
            ("dataset", &self.dataset),
            ("matrix", &self.matrix),
            ("resolution", &self.resolution),
            ("dims", &self.dims),
            ("ks", &self.ks),
            ("orders", &self.orders),
            ("interval", &self.interval),
            ("zero-tol", &self.zero_tol),
            ("edge-cap", &self.edge_cap),
            ("folds", &self.folds),
            ("shuffle", &self.shuffle),
            ("seed", &self.seed),
            ("knn-k", &self.knn_k),
            ("stratified", &self.stratified),
            ("standardize", &self.standardize),
            ("pca-per-fold", &self.pca_per_fold),
            ("out", &self.out),
            ("cache", &self.cache),
        ];
        pairs
            .into_iter()
            .filter_map(|(k, v)| v.as_deref().map(|v| (k, v)))
            .collect()
    }
}

fn thread_count(flag: Option<usize>) -> Result<usize> {
    if let Some(t) = flag {
        return Ok(t);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{THREADS_ENV}={v:?} is not a thread count"))),
        Err(_) => Ok(0),
    }
}

fn save_embedding(e: &Embedding, like: &DatasetMatrix, path: &Path) -> Result<()> {
    let ds = DatasetMatrix::new(e.coords.clone(), e.labels.clone(), like.class_names.clone())?;
    container::save_matrix(&ds, path)
}

fn run_classify(a: &ClassifyArgs, exec: Execution) -> Result<()> {
    let (x, labels, classes) = if pipeline::layout_sidecar(&a.input).exists() {
        let (fm, names) = pipeline::load_features(&a.input)?;
        let fm: FeatureMatrix = match a.dim {
            Some(d) => fm.select_dim(d)?,
            None => fm,
        };
        let classes = DatasetMatrix::new(fm.rows.clone(), fm.labels.clone(), names)?.class_count();
        (fm.rows, fm.labels, classes)
    } else {
        let ds = container::load_matrix(&a.input)?;
        let classes = ds.class_count();
        let x = match a.dim {
            Some(d) if d == 0 || d > ds.n() => {
                return Err(Error::InvalidArgument(format!(
                    "--dim {d} outside 1..={}",
                    ds.n()
                )))
            }
            Some(d) => ds.data.select_cols(&(0..d).collect::<Vec<_>>()),
            None => ds.data,
        };
        (x, ds.labels, classes)
    };
    let cfg = CvConfig {
        folds: a.folds,
        shuffle: !a.no_shuffle,
        seed: a.seed,
        knn_k: a.knn_k,
        stratified: a.stratified,
    };
    let r = eval::cross_validate(&x, &labels, classes, &cfg, !a.no_standardize, exec)?;
    let dim = a.dim.map_or_else(|| "all".to_string(), |d| d.to_string());
    let csv = format!("{FOLD_CSV_HEADER}\n{}", r.csv_rows(&a.method, &dim));
    match &a.out_csv {
        Some(p) => write_atomic(p, csv.as_bytes())?,
        None => print!("{csv}"),
    }
    if let Some(p) = &a.out_json {
        let json = serde_json::to_vec_pretty(&r).map_err(|e| Error::Format(e.to_string()))?;
        write_atomic(p, &json)?;
    }
    eprintln!(
        "acc {:.4} ± {:.4}  mr {:.4}  macro_f1 {:.4}",
        r.mean.accuracy, r.std.accuracy, r.mean.macro_recall, r.mean.macro_f1
    );
    Ok(())
}

fn run_sweep(a: &SweepArgs, threads: Option<usize>) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_env()?;
    for (k, v) in a.overrides() {
        cfg.set(k, v)?;
    }
    if a.no_standardize {
        cfg.standardize = false;
    }
    if let Some(t) = threads {
        cfg.threads = t;
    }
    let out = pipeline::run_pipeline(&cfg)?;
    print!("{}", report::results_to_csv(&out.rows));
    eprintln!("wrote results to {}", cfg.out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let threads = thread_count(cli.threads)?;
    let exec = Execution::Parallel;
    match cli.command {
        Command::Ingest {
            root,
            resolution,
            out,
        } => par::with_threads(threads, || {
            let (records, names) = ingest::load_records(&root, resolution, exec)?;
            let ds = ingest::from_records(&records, names)?;
            container::save_matrix(&ds, &out)?;
            eprintln!(
                "{} images, {} classes, {} features",
                ds.m(),
                ds.class_count(),
                ds.n()
            );
            Ok(())
        }),
        Command::Pca { input, dmax, out } => par::with_threads(threads, || {
            let ds = container::load_matrix(&input)?;
            let model = embed::fit_pca(&ds, dmax, exec)?;
            let e = embed::project(&model, &ds, dmax, exec)?;
            save_embedding(&e, &ds, &out)
        }),
        Command::Features(a) => par::with_threads(threads, || {
            let ds = container::load_matrix(&a.input)?;
            let mut cfg = RunConfig {
                dims: a.dims.clone(),
                ks: a.ks.clone(),
                orders: a.orders.clone(),
                matrix: Some(a.input.clone()),
                ..RunConfig::default()
            };
            cfg.set("interval", &a.interval)?;
            if let Some(t) = a.zero_tol {
                cfg.zero_tol = t;
            }
            if let Some(c) = a.edge_cap {
                cfg.edge_cap = c;
            }
            cfg.validate()?;
            cfg.validate_for(ds.m())?;
            let coords = Embedding {
                d: ds.n(),
                coords: ds.data.clone(),
                labels: ds.labels.clone(),
            };
            let fm = pipeline::extract_features(&coords, &FeatureSpec::from(&cfg), exec)?;
            pipeline::save_features(&fm, &ds.class_names, &a.out)?;
            if let Some(p) = &a.csv {
                write_atomic(p, fm.to_csv().as_bytes())?;
            }
            eprintln!("{} x {} feature matrix", fm.rows.rows(), fm.rows.cols());
            Ok(())
        }),
        Command::Classify(a) => par::with_threads(threads, || run_classify(&a, exec)),
        Command::Sweep(a) => run_sweep(&a, cli.threads),
        Command::Report { results, out } => {
            for p in report::report(&results, &out)? {
                eprintln!("wrote {}", p.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 1 } else { 2 })
        }
    }
}
