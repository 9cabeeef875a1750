//! Spectral summary statistics and the concatenated per-sample feature matrix.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::RowMatrix;
use crate::spectral::Spectrum;

pub const STATS_PER_SPECTRUM: usize = 7;
pub const STAT_NAMES: [&str; STATS_PER_SPECTRUM] =
    ["zero", "min_nonzero", "max", "sum", "mean", "median", "std"];

/// Columns whose fitted standard deviation falls below this are only centered.
const DEGENERATE_STD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SpectrumStats {
    pub zero_count: f64,
    pub min_nonzero: f64,
    pub max: f64,
    pub sum: f64,
    pub mean: f64,
    pub median: f64,
    pub std: f64,
}

impl SpectrumStats {
    pub fn to_array(&self) -> [f64; STATS_PER_SPECTRUM] {
        [
            self.zero_count,
            self.min_nonzero,
            self.max,
            self.sum,
            self.mean,
            self.median,
            self.std,
        ]
    }
}

pub fn spectrum_stats(spec: &Spectrum) -> SpectrumStats {
    stats_of(&spec.eigenvalues)
}

/// Statistics of an already thresholded multiset of non-negative values.
pub fn stats_of(values: &[f64]) -> SpectrumStats {
    if values.is_empty() {
        return SpectrumStats::default();
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let zero_count = sorted.iter().filter(|&&v| v == 0.0).count() as f64;
    let min_nonzero = sorted.iter().copied().find(|&v| v > 0.0).unwrap_or(0.0);
    let max = *sorted.last().expect("non-empty");
    let sum: f64 = sorted.iter().sum();
    let mean = sum / n;
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        0.5 * (sorted[mid - 1] + sorted[mid])
    };
    let var = sorted.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    SpectrumStats {
        zero_count,
        min_nonzero,
        max,
        sum,
        mean,
        median,
        std: var.sqrt(),
    }
}

/// Column nesting: order outermost, then dimension, then k, then statistic.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub orders: Vec<usize>,
    pub dims: Vec<usize>,
    pub ks: Vec<usize>,
}

fn ascending(mut v: Vec<usize>) -> Vec<usize> {
    v.sort_unstable();
    v.dedup();
    v
}

impl FeatureLayout {
    pub fn new(orders: Vec<usize>, dims: Vec<usize>, ks: Vec<usize>) -> Result<Self> {
        let layout = Self {
            orders: ascending(orders),
            dims: ascending(dims),
            ks: ascending(ks),
        };
        if layout.orders.is_empty() || layout.dims.is_empty() || layout.ks.is_empty() {
            return Err(Error::invalid(
                "feature layout needs at least one order, dimension and k",
            ));
        }
        Ok(layout)
    }

    /// Both Laplacian orders.
    pub fn standard(dims: Vec<usize>, ks: Vec<usize>) -> Result<Self> {
        Self::new(vec![0, 1], dims, ks)
    }

    pub fn columns(&self) -> usize {
        self.orders.len() * self.dims.len() * self.ks.len() * STATS_PER_SPECTRUM
    }

    pub fn column(&self, order_idx: usize, dim_idx: usize, k_idx: usize, stat: usize) -> usize {
        ((order_idx * self.dims.len() + dim_idx) * self.ks.len() + k_idx) * STATS_PER_SPECTRUM
            + stat
    }

    /// Inverse of [`FeatureLayout::column`].
    pub fn cell(&self, column: usize) -> (usize, usize, usize, usize) {
        let stat = column % STATS_PER_SPECTRUM;
        let rest = column / STATS_PER_SPECTRUM;
        let k_idx = rest % self.ks.len();
        let rest = rest / self.ks.len();
        (rest / self.dims.len(), rest % self.dims.len(), k_idx, stat)
    }

    pub fn column_names(&self) -> Vec<String> {
        (0..self.columns())
            .map(|c| {
                let (h, d, k, s) = self.cell(c);
                format!(
                    "h{}_d{}_k{}_{}",
                    self.orders[h], self.dims[d], self.ks[k], STAT_NAMES[s]
                )
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellKey {
    pub sample: usize,
    pub order: usize,
    pub dim: usize,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub layout: FeatureLayout,
    pub rows: RowMatrix,
    pub labels: Vec<u32>,
}

impl FeatureMatrix {
    /// Columns for one reduced dimension (all orders and ks).
    pub fn select_dim(&self, dim: usize) -> Result<FeatureMatrix> {
        let di = self
            .layout
            .dims
            .iter()
            .position(|&d| d == dim)
            .ok_or_else(|| Error::invalid(format!("dimension {dim} is not in the layout")))?;
        let layout = FeatureLayout {
            orders: self.layout.orders.clone(),
            dims: vec![dim],
            ks: self.layout.ks.clone(),
        };
        let mut cols = Vec::with_capacity(layout.columns());
        for h in 0..layout.orders.len() {
            for k in 0..layout.ks.len() {
                for s in 0..STATS_PER_SPECTRUM {
                    cols.push(self.layout.column(h, di, k, s));
                }
            }
        }
        Ok(FeatureMatrix {
            layout,
            rows: self.rows.select_cols(&cols),
            labels: self.labels.clone(),
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("label");
        for name in self.layout.column_names() {
            out.push(',');
            out.push_str(&name);
        }
        out.push('\n');
        for i in 0..self.rows.rows() {
            let _ = write!(out, "{}", self.labels[i]);
            for v in self.rows.row(i) {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

pub fn assemble_features(
    stats: &HashMap<CellKey, SpectrumStats>,
    labels: &[u32],
    layout: &FeatureLayout,
) -> Result<FeatureMatrix> {
    let m = labels.len();
    let mut rows = RowMatrix::zeros(m, layout.columns());
    for i in 0..m {
        for (hi, &h) in layout.orders.iter().enumerate() {
            for (di, &d) in layout.dims.iter().enumerate() {
                for (ki, &k) in layout.ks.iter().enumerate() {
                    let key = CellKey {
                        sample: i,
                        order: h,
                        dim: d,
                        k,
                    };
                    let s = stats.get(&key).ok_or(Error::MissingCell {
                        sample: i,
                        order: h,
                        dim: d,
                        k,
                    })?;
                    let base = layout.column(hi, di, ki, 0);
                    rows.row_mut(i)[base..base + STATS_PER_SPECTRUM].copy_from_slice(&s.to_array());
                }
            }
        }
    }
    Ok(FeatureMatrix {
        layout: layout.clone(),
        rows,
        labels: labels.to_vec(),
    })
}

/// Per-column z-score fitted on a subset of rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// `None` for degenerate columns, which are only centered.
    pub scale: Vec<Option<f64>>,
}

impl Standardizer {
    pub fn fit(rows: &RowMatrix, fit_rows: &[usize]) -> Result<Self> {
        if fit_rows.is_empty() {
            return Err(Error::invalid("standardization needs at least one row"));
        }
        let n = fit_rows.len() as f64;
        let cols = rows.cols();
        let mut mean = vec![0.0; cols];
        for &i in fit_rows {
            for (m, v) in mean.iter_mut().zip(rows.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; cols];
        for &i in fit_rows {
            for ((acc, v), m) in var.iter_mut().zip(rows.row(i)).zip(&mean) {
                *acc += (v - m) * (v - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|v| {
                let s = (v / n).sqrt();
                (s >= DEGENERATE_STD).then_some(s)
            })
            .collect();
        Ok(Self { mean, scale })
    }

    pub fn apply(&self, rows: &RowMatrix) -> RowMatrix {
        let mut out = rows.clone();
        for i in 0..out.rows() {
            for ((v, m), s) in out.row_mut(i).iter_mut().zip(&self.mean).zip(&self.scale) {
                *v -= m;
                if let Some(s) = s {
                    *v /= s;
                }
            }
        }
        out
    }

    pub fn invert(&self, rows: &RowMatrix) -> RowMatrix {
        let mut out = rows.clone();
        for i in 0..out.rows() {
            for ((v, m), s) in out.row_mut(i).iter_mut().zip(&self.mean).zip(&self.scale) {
                if let Some(s) = s {
                    *v *= s;
                }
                *v += m;
            }
        }
        out
    }
}

pub fn standardize(
    fm: &FeatureMatrix,
    fit_rows: &[usize],
) -> Result<(FeatureMatrix, Standardizer)> {
    let st = Standardizer::fit(&fm.rows, fit_rows)?;
    let out = FeatureMatrix {
        layout: fm.layout.clone(),
        rows: st.apply(&fm.rows),
        labels: fm.labels.clone(),
    };
    Ok((out, st))
}
