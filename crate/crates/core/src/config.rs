//! Run configuration: flat `key = value` files, lists comma-separated.
//!
//! Every key can also be set from the command line with a flag of the same
//! name; keys accept `-` or `_` interchangeably.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::complex::DEFAULT_EDGE_CAP;
use crate::error::{Error, Result};
use crate::eval::CvConfig;
use crate::spectral::DEFAULT_ZERO_TOL;

pub const THREADS_ENV: &str = "MPSL_THREADS";

pub const DEFAULT_DIMS: [usize; 9] = [200, 300, 400, 500, 600, 700, 800, 900, 1000];
pub const DEFAULT_KS: [usize; 20] = [
    5, 7, 10, 12, 15, 17, 20, 25, 30, 35, 40, 45, 50, 55, 60, 70, 80, 90, 100, 110,
];

/// Which filtration interval each local complex contributes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IntervalMode {
    /// `a = b = infinity`: the plain Laplacian of the whole local complex.
    Full,
    /// `a` and `b` are quantiles of the local edge values.
    Quantile { a: f64, b: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Root of a one-directory-per-class image tree.
    pub dataset: Option<PathBuf>,
    /// Pre-ingested matrix container; takes precedence over `dataset`.
    pub matrix: Option<PathBuf>,
    pub resolution: usize,
    pub dims: Vec<usize>,
    pub ks: Vec<usize>,
    pub orders: Vec<usize>,
    pub interval: IntervalMode,
    pub zero_tol: f64,
    pub edge_cap: usize,
    pub cv: CvConfig,
    pub standardize: bool,
    pub pca_per_fold: bool,
    pub out: PathBuf,
    /// 0 means the library default.
    pub threads: usize,
    pub cache: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            matrix: None,
            resolution: 128,
            dims: DEFAULT_DIMS.to_vec(),
            ks: DEFAULT_KS.to_vec(),
            orders: vec![0, 1],
            interval: IntervalMode::Full,
            zero_tol: DEFAULT_ZERO_TOL,
            edge_cap: DEFAULT_EDGE_CAP,
            cv: CvConfig::default(),
            standardize: true,
            pca_per_fold: false,
            out: PathBuf::from("mpsl-out"),
            threads: 0,
            cache: true,
        }
    }
}

pub const KEYS: [&str; 19] = [
    "dataset",
    "matrix",
    "resolution",
    "dims",
    "ks",
    "orders",
    "interval",
    "zero-tol",
    "edge-cap",
    "folds",
    "shuffle",
    "seed",
    "knn-k",
    "stratified",
    "standardize",
    "pca-per-fold",
    "out",
    "threads",
    "cache",
];

fn bad(key: &str, value: &str, what: &str) -> Error {
    Error::Config(format!("{key}: cannot parse {value:?} as {what}"))
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| bad(key, value, "a number"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(bad(key, value, "a boolean")),
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_num(key, s))
        .collect()
}

fn parse_interval(key: &str, value: &str) -> Result<IntervalMode> {
    let v = value.trim();
    if v.eq_ignore_ascii_case("full") || v.eq_ignore_ascii_case("inf") {
        return Ok(IntervalMode::Full);
    }
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [a, b] => Ok(IntervalMode::Quantile {
            a: parse_num(key, a)?,
            b: parse_num(key, b)?,
        }),
        _ => Err(bad(key, value, "`full` or a quantile pair `a,b`")),
    }
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn strictly_ascending(key: &str, v: &[usize]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::Config(format!("{key} must not be empty")));
    }
    if v[0] == 0 || v.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!(
            "{key} must be strictly ascending positive integers, got {}",
            join(v)
        )));
    }
    Ok(())
}

impl RunConfig {
    /// Sets a single key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('_', "-");
        let k = key.as_str();
        let path = || PathBuf::from(value.trim());
        match k {
            "dataset" => self.dataset = Some(path()),
            "matrix" => self.matrix = Some(path()),
            "resolution" => self.resolution = parse_num(k, value)?,
            "dims" => self.dims = parse_list(k, value)?,
            "ks" => self.ks = parse_list(k, value)?,
            "orders" => self.orders = parse_list(k, value)?,
            "interval" => self.interval = parse_interval(k, value)?,
            "zero-tol" => self.zero_tol = parse_num(k, value)?,
            "edge-cap" => self.edge_cap = parse_num(k, value)?,
            "folds" => self.cv.folds = parse_num(k, value)?,
            "shuffle" => self.cv.shuffle = parse_bool(k, value)?,
            "seed" => self.cv.seed = parse_num(k, value)?,
            "knn-k" => self.cv.knn_k = parse_num(k, value)?,
            "stratified" => self.cv.stratified = parse_bool(k, value)?,
            "standardize" => self.standardize = parse_bool(k, value)?,
            "pca-per-fold" => self.pca_per_fold = parse_bool(k, value)?,
            "out" => self.out = path(),
            "threads" => self.threads = parse_num(k, value)?,
            "cache" => self.cache = parse_bool(k, value)?,
            _ => return Err(Error::Config(format!("unknown key {k:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`. `#` starts a comment.
    pub fn merge_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            self.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.merge_text(text)?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// Reads the thread override from the environment, if set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(THREADS_ENV) {
            self.threads = parse_num(THREADS_ENV, &v)?;
        }
        Ok(())
    }

    /// Checks everything that does not depend on the data.
    pub fn validate(&self) -> Result<()> {
        strictly_ascending("dims", &self.dims)?;
        strictly_ascending("ks", &self.ks)?;
        if self.orders.is_empty()
            || self.orders.iter().any(|&h| h > 1)
            || self.orders.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::Config(
                "orders must be a strictly ascending subset of 0,1".into(),
            ));
        }
        if self.resolution == 0 {
            return Err(Error::Config("resolution must be positive".into()));
        }
        if !(self.zero_tol > 0.0 && self.zero_tol.is_finite()) {
            return Err(Error::Config("zero-tol must be positive".into()));
        }
        if self.edge_cap == 0 {
            return Err(Error::Config("edge-cap must be positive".into()));
        }
        if let IntervalMode::Quantile { a, b } = self.interval {
            if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) || a > b {
                return Err(Error::Config(format!(
                    "interval quantiles must satisfy 0 <= a <= b <= 1, got {a},{b}"
                )));
            }
        }
        self.cv
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        if self.matrix.is_none() && self.dataset.is_none() {
            return Err(Error::Config("either dataset or matrix must be set".into()));
        }
        Ok(())
    }

    /// Checks that depend on the number of samples.
    pub fn validate_for(&self, m: usize) -> Result<()> {
        let kmax = *self.ks.last().unwrap_or(&0);
        if kmax >= m {
            return Err(Error::Config(format!(
                "largest k ({kmax}) must be below the sample count ({m})"
            )));
        }
        if m < self.cv.folds {
            return Err(Error::Config(format!(
                "{m} samples cannot fill {} folds",
                self.cv.folds
            )));
        }
        Ok(())
    }

    /// Canonical text form; `merge_text` on it reproduces `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        if let Some(p) = &self.dataset {
            kv("dataset", p.display().to_string());
        }
        if let Some(p) = &self.matrix {
            kv("matrix", p.display().to_string());
        }
        kv("resolution", self.resolution.to_string());
        kv("dims", join(&self.dims));
        kv("ks", join(&self.ks));
        kv("orders", join(&self.orders));
        kv(
            "interval",
            match self.interval {
                IntervalMode::Full => "full".into(),
                IntervalMode::Quantile { a, b } => format!("{a},{b}"),
            },
        );
        kv("zero-tol", format!("{:e}", self.zero_tol));
        kv("edge-cap", self.edge_cap.to_string());
        kv("folds", self.cv.folds.to_string());
        kv("shuffle", self.cv.shuffle.to_string());
        kv("seed", self.cv.seed.to_string());
        kv("knn-k", self.cv.knn_k.to_string());
        kv("stratified", self.cv.stratified.to_string());
        kv("standardize", self.standardize.to_string());
        kv("pca-per-fold", self.pca_per_fold.to_string());
        kv("out", self.out.display().to_string());
        kv("threads", self.threads.to_string());
        kv("cache", self.cache.to_string());
        s
    }

    /// The subset of settings that determines the feature matrix.
    pub fn feature_key(&self) -> String {
        format!(
            "dims={};ks={};orders={};interval={:?};zero_tol={:e};edge_cap={}",
            join(&self.dims),
            join(&self.ks),
            join(&self.orders),
            self.interval,
            self.zero_tol,
            self.edge_cap
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_cover_the_standard_grid() {
        let c = RunConfig::default();
        assert_eq!(c.dims.len() * c.ks.len() * c.orders.len() * 7, 2520);
        assert_eq!(c.cv, CvConfig::default());
    }

    #[test]
    fn parses_file_and_round_trips() {
        let c = RunConfig::from_text(
            "# comment\nmatrix = data.mpsl\ndims = 5, 10\nks=5,10\nzero_tol = 1e-7\n\
             interval = 0.25,0.75\nshuffle = off\nknn-k = 3\n",
        )
        .unwrap();
        assert_eq!(c.dims, vec![5, 10]);
        assert_eq!(c.zero_tol, 1e-7);
        assert_eq!(c.interval, IntervalMode::Quantile { a: 0.25, b: 0.75 });
        assert!(!c.cv.shuffle);
        assert_eq!(c.cv.knn_k, 3);
        c.validate().unwrap();
        assert_eq!(RunConfig::from_text(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(RunConfig::from_text("nope = 1").is_err());
        assert!(RunConfig::from_text("dims").is_err());
        assert!(RunConfig::from_text("seed = x").is_err());
        let mut c = RunConfig {
            matrix: Some("m".into()),
            ..Default::default()
        };
        c.validate().unwrap();
        c.ks = vec![5, 5];
        assert!(c.validate().is_err());
        c.ks = vec![5, 20];
        assert!(c.validate_for(20).is_err());
        c.validate_for(21).unwrap();
        c.orders = vec![2];
        assert!(c.validate().is_err());
        c.orders = vec![1];
        c.interval = IntervalMode::Quantile { a: 0.8, b: 0.2 };
        assert!(c.validate().is_err());
    }
}
