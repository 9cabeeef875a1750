//! Sheaf Laplacians of orders 0 and 1, their persistent variants, and
//! thresholded spectra.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::complex::LocalComplex;
use crate::error::{Error, Result};
use crate::sheaf::{self, CoboundaryPair, EdgeMaps, SheafAssignment, TriangleMaps};

pub const DEFAULT_ZERO_TOL: f64 = 1e-8;
/// Relative tolerance of the pseudo-inverse in the Schur complement.
pub const PINV_TOL: f64 = 1e-10;
/// Relative slack allowed below zero before a matrix is declared indefinite.
pub const PSD_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Order {
    Zero,
    One,
}

impl Order {
    pub fn from_index(h: usize) -> Result<Order> {
        match h {
            0 => Ok(Order::Zero),
            1 => Ok(Order::One),
            _ => Err(Error::invalid(format!("Laplacian order {h} is not 0 or 1"))),
        }
    }

    pub fn index(self) -> usize {
        match self {
            Order::Zero => 0,
            Order::One => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianMatrix {
    pub order: Order,
    pub values: DMatrix<f64>,
    pub interval: Option<(f64, f64)>,
}

impl LaplacianMatrix {
    pub fn size(&self) -> usize {
        self.values.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.values.trace()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    pub zero_tol: f64,
}

impl Spectrum {
    pub fn size(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Spectrum given directly by its values, already thresholded.
    pub fn from_values(mut eigenvalues: Vec<f64>) -> Self {
        eigenvalues.sort_by(f64::total_cmp);
        Self {
            eigenvalues,
            zero_tol: DEFAULT_ZERO_TOL,
        }
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

fn add_outer<const R: usize>(m: &mut DMatrix<f64>, row: &[(usize, f64); R]) {
    for &(a, x) in row {
        for &(b, y) in row {
            m[(a, b)] += x * y;
        }
    }
}

/// `delta_h^T delta_h` on `C^h`.
pub fn up_laplacian(cb: &CoboundaryPair, order: Order) -> DMatrix<f64> {
    match order {
        Order::Zero => {
            let mut m = DMatrix::zeros(cb.vertices, cb.vertices);
            cb.d0.iter().for_each(|r| add_outer(&mut m, r));
            m
        }
        Order::One => {
            let mut m = DMatrix::zeros(cb.edges(), cb.edges());
            cb.d1.iter().for_each(|r| add_outer(&mut m, r));
            m
        }
    }
}

/// `delta_{h-1} delta_{h-1}^T` on `C^h`; `None` for order 0.
pub fn down_laplacian(cb: &CoboundaryPair, order: Order) -> Option<DMatrix<f64>> {
    match order {
        Order::Zero => None,
        Order::One => {
            let mut incident: Vec<Vec<(usize, f64)>> = vec![Vec::new(); cb.vertices];
            for (e, row) in cb.d0.iter().enumerate() {
                for &(x, val) in row {
                    incident[x].push((e, val));
                }
            }
            let mut m = DMatrix::zeros(cb.edges(), cb.edges());
            for col in &incident {
                for &(a, x) in col {
                    for &(b, y) in col {
                        m[(a, b)] += x * y;
                    }
                }
            }
            Some(m)
        }
    }
}

fn combine(up: DMatrix<f64>, down: Option<DMatrix<f64>>) -> DMatrix<f64> {
    let mut m = match down {
        Some(d) => up + d,
        None => up,
    };
    symmetrize(&mut m);
    m
}

pub fn laplacian(cb: &CoboundaryPair, order: Order) -> LaplacianMatrix {
    LaplacianMatrix {
        order,
        values: combine(up_laplacian(cb, order), down_laplacian(cb, order)),
        interval: None,
    }
}

/// Moore-Penrose pseudo-inverse of a symmetric matrix; eigenvalues at or
/// below `PINV_TOL * max|lambda|` are discarded.
pub fn symmetric_pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let eig = SymmetricEigen::new(m.clone());
    let scale = eig.eigenvalues.iter().fold(0.0f64, |a, l| a.max(l.abs()));
    let cut = PINV_TOL * scale;
    let mut out = DMatrix::zeros(n, n);
    for (k, &l) in eig.eigenvalues.iter().enumerate() {
        if l.abs() > cut {
            let v = eig.eigenvectors.column(k);
            out += (v * v.transpose()) / l;
        }
    }
    out
}

/// Generalized Schur complement `A - B D^+ B^T` of `m` onto `retained`,
/// where `D` is the block on the remaining indices.
pub fn schur_complement(m: &DMatrix<f64>, retained: &[usize]) -> DMatrix<f64> {
    let n = m.nrows();
    let mut keep = vec![false; n];
    retained.iter().for_each(|&i| keep[i] = true);
    let dropped: Vec<usize> = (0..n).filter(|&i| !keep[i]).collect();
    let a = DMatrix::from_fn(retained.len(), retained.len(), |r, c| {
        m[(retained[r], retained[c])]
    });
    if dropped.is_empty() {
        return a;
    }
    let b = DMatrix::from_fn(retained.len(), dropped.len(), |r, c| {
        m[(retained[r], dropped[c])]
    });
    let d = DMatrix::from_fn(dropped.len(), dropped.len(), |r, c| {
        m[(dropped[r], dropped[c])]
    });
    let dp = symmetric_pinv(&d);
    a - &b * dp * b.transpose()
}

fn locate(large: &LocalComplex, global: usize) -> Option<usize> {
    large.vertices.iter().position(|&g| g == global)
}

/// Sheaf data of `small` read off the sheaf of `large`, matching simplices by
/// global vertex id.
fn pull_back(
    small: &LocalComplex,
    large: &LocalComplex,
    sheaf_large: &SheafAssignment,
) -> Result<(SheafAssignment, Vec<usize>, Vec<usize>)> {
    let vmap: Vec<usize> = small
        .vertices
        .iter()
        .map(|&g| {
            locate(large, g)
                .ok_or_else(|| Error::Structure(format!("vertex {g} of X_a is missing from X_b")))
        })
        .collect::<Result<_>>()?;
    let mut edge_map = Vec::with_capacity(small.edges.len());
    let mut edges = Vec::with_capacity(small.edges.len());
    for e in &small.edges {
        let (a, b) = (vmap[e.u], vmap[e.v]);
        let idx = large.edge_index(a, b).ok_or_else(|| {
            Error::Structure(format!("edge ({},{}) of X_a is missing from X_b", e.u, e.v))
        })?;
        let at = |x| sheaf_large.vertex_edge(x, a, b).expect("sheaf covers X_b");
        edges.push(EdgeMaps {
            u: e.u,
            v: e.v,
            at_u: at(a),
            at_v: at(b),
        });
        edge_map.push(idx);
    }
    let mut triangles = Vec::with_capacity(small.triangles.len());
    for t in &small.triangles {
        let (u, v, w) = (vmap[t.u], vmap[t.v], vmap[t.w]);
        if large.triangle_index(u, v, w).is_none() {
            return Err(Error::Structure(
                "triangle of X_a is missing from X_b".into(),
            ));
        }
        let f = |a, b| {
            sheaf_large
                .edge_triangle(a, b, [u, v, w])
                .expect("sheaf covers X_b")
        };
        triangles.push(TriangleMaps {
            u: t.u,
            v: t.v,
            w: t.w,
            faces: [f(v, w), f(u, w), f(u, v)],
        });
    }
    let sheaf = SheafAssignment {
        sigma: sheaf_large.sigma,
        edges,
        triangles,
    };
    Ok((sheaf, vmap, edge_map))
}

/// Persistent Laplacian of the inclusion `small ⊆ large`, acting on
/// `C^h(small)`. Simplices are matched by global vertex id.
pub fn persistent_laplacian_between(
    small: &LocalComplex,
    large: &LocalComplex,
    sheaf_large: &SheafAssignment,
    order: Order,
) -> Result<LaplacianMatrix> {
    let (sheaf_small, vmap, emap) = pull_back(small, large, sheaf_large)?;
    let cb_large = sheaf::coboundaries(large, sheaf_large)?;
    let retained = match order {
        Order::Zero => vmap,
        Order::One => emap,
    };
    let up = schur_complement(&up_laplacian(&cb_large, order), &retained);
    let down = match order {
        Order::Zero => None,
        Order::One => down_laplacian(&sheaf::coboundaries(small, &sheaf_small)?, order),
    };
    Ok(LaplacianMatrix {
        order,
        values: combine(up, down),
        interval: None,
    })
}

/// `(a, b)`-persistent Laplacian of the sublevel filtration of `complex`,
/// with the sheaf built once on the full complex.
pub fn persistent_laplacian(
    complex: &LocalComplex,
    sheaf_full: &SheafAssignment,
    a: f64,
    b: f64,
    order: Order,
) -> Result<LaplacianMatrix> {
    if a > b {
        return Err(Error::invalid(format!(
            "interval start {a} exceeds end {b}"
        )));
    }
    let x_a = complex.sublevel(a);
    let x_b = complex.sublevel(b);
    let sheaf_b = sheaf_full.restrict(&x_b)?;
    let mut lap = persistent_laplacian_between(&x_a, &x_b, &sheaf_b, order)?;
    lap.interval = Some((a, b));
    Ok(lap)
}

/// Ascending eigenvalues, unthresholded.
pub fn raw_eigenvalues(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("matrix has non-finite entries".into()));
    }
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    let mut vals: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
    vals.sort_by(f64::total_cmp);
    Ok(vals)
}

pub fn eigenvalues(lap: &LaplacianMatrix, zero_tol: f64) -> Result<Spectrum> {
    let mut vals = raw_eigenvalues(&lap.values)?;
    let top = vals.last().copied().unwrap_or(0.0);
    let scale = top.max(1.0);
    if let Some(&low) = vals.first() {
        if low < -PSD_TOL * scale {
            return Err(Error::Numerical(format!(
                "Laplacian is not positive semidefinite (min eigenvalue {low:e})"
            )));
        }
    }
    let cut = zero_tol * scale;
    for v in &mut vals {
        if *v < cut {
            *v = 0.0;
        }
    }
    Ok(Spectrum {
        eigenvalues: vals,
        zero_tol,
    })
}
