//! PCA embeddings and Euclidean distance matrices in the reduced spaces.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::matrix::{dot, euclidean, RowMatrix};
use crate::par::{self, Execution};

/// Gram/covariance eigenvalues below this fraction of the largest count as
/// zero. Round-off there is about eps * max, so the cut must sit well above it.
const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `d_max x n`, orthonormal rows in descending singular-value order.
    pub components: RowMatrix,
    pub singular_values: Vec<f64>,
}

impl PcaModel {
    pub fn d_max(&self) -> usize {
        self.components.rows()
    }
}

#[derive(Debug, Clone)]
pub struct Embedding {
    pub d: usize,
    pub coords: RowMatrix,
    pub labels: Vec<u32>,
}

impl Embedding {
    /// First `d` coordinates of every row.
    pub fn truncate(&self, d: usize) -> Result<Embedding> {
        if d == 0 || d > self.d {
            return Err(Error::invalid(format!(
                "cannot truncate a {}-d embedding to {d}",
                self.d
            )));
        }
        let cols: Vec<usize> = (0..d).collect();
        Ok(Embedding {
            d,
            coords: self.coords.select_cols(&cols),
            labels: self.labels.clone(),
        })
    }
}

/// Symmetric `m x m` distance matrix with an exact zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    m: usize,
    values: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_values(m: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != m * m {
            return Err(Error::invalid("distance buffer is not square"));
        }
        for i in 0..m {
            if values[i * m + i] != 0.0 {
                return Err(Error::invalid(format!("nonzero diagonal at {i}")));
            }
            for j in 0..i {
                let (a, b) = (values[i * m + j], values[j * m + i]);
                if !a.is_finite() || a < 0.0 || (a - b).abs() > 1e-12 * a.max(1.0) {
                    return Err(Error::invalid(format!(
                        "entry ({i},{j}) is not a symmetric distance"
                    )));
                }
            }
        }
        Ok(Self { m, values })
    }

    /// Euclidean distances between the rows of `points`.
    pub fn from_points(points: &RowMatrix, exec: Execution) -> Result<Self> {
        if !points.is_finite() {
            return Err(Error::Numerical("non-finite coordinates".into()));
        }
        let m = points.rows();
        let upper = par::map_indexed(m, exec, |i| {
            ((i + 1)..m)
                .map(|j| euclidean(points.row(i), points.row(j)))
                .collect::<Vec<_>>()
        });
        let mut values = vec![0.0; m * m];
        for (i, row) in upper.into_iter().enumerate() {
            for (off, v) in row.into_iter().enumerate() {
                let j = i + 1 + off;
                values[i * m + j] = v;
                values[j * m + i] = v;
            }
        }
        Ok(Self { m, values })
    }

    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        self.m == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.m + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.m..(i + 1) * self.m]
    }
}

fn center(data: &RowMatrix) -> (Vec<f64>, RowMatrix) {
    let (m, n) = (data.rows(), data.cols());
    let mut mean = vec![0.0; n];
    for i in 0..m {
        for (acc, v) in mean.iter_mut().zip(data.row(i)) {
            *acc += v;
        }
    }
    for v in &mut mean {
        *v /= m as f64;
    }
    let mut centered = data.clone();
    for i in 0..m {
        for (v, mu) in centered.row_mut(i).iter_mut().zip(&mean) {
            *v -= mu;
        }
    }
    (mean, centered)
}

/// Descending eigenpairs of a symmetric matrix.
fn sorted_eigen(mat: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(mat);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    (values, vectors)
}

/// Orthogonalizes `v` against `basis` (two passes of modified Gram-Schmidt)
/// and returns its residual norm; `v` is normalized in place when nonzero.
fn orthonormalize_against(v: &mut [f64], basis: &[Vec<f64>]) -> f64 {
    for _ in 0..2 {
        for b in basis {
            let p = dot(v, b);
            for (x, y) in v.iter_mut().zip(b) {
                *x -= p * y;
            }
        }
    }
    let norm = dot(v, v).sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
    norm
}

/// Flips `v` so that its largest-magnitude entry (lowest index on ties) is positive.
fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|&x| x < 0.0) {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
}

/// Fits PCA on the rows of `data`, keeping `d_max` components.
pub fn fit_pca_rows(data: &RowMatrix, d_max: usize, exec: Execution) -> Result<PcaModel> {
    let (m, n) = (data.rows(), data.cols());
    if m < 2 {
        return Err(Error::invalid("PCA needs at least two samples"));
    }
    if d_max == 0 || d_max > m.min(n) {
        return Err(Error::invalid(format!(
            "d_max={d_max} must lie in 1..={}",
            m.min(n)
        )));
    }
    if !data.is_finite() {
        return Err(Error::Numerical("non-finite input data".into()));
    }
    let (mean, xc) = center(data);

    let (eigvals, mut directions): (Vec<f64>, Vec<Vec<f64>>) = if m <= n {
        // Gram route: G = Xc Xc^T, v_j = Xc^T u_j / s_j.
        let rows = par::map_indexed(m, exec, |i| {
            (i..m)
                .map(|j| dot(xc.row(i), xc.row(j)))
                .collect::<Vec<_>>()
        });
        let mut gram = DMatrix::zeros(m, m);
        for (i, row) in rows.into_iter().enumerate() {
            for (off, v) in row.into_iter().enumerate() {
                gram[(i, i + off)] = v;
                gram[(i + off, i)] = v;
            }
        }
        let (vals, vecs) = sorted_eigen(gram);
        let lmax = vals[0].max(0.0);
        let keep = vals
            .iter()
            .take(d_max)
            .take_while(|&&l| l > RANK_TOL * lmax)
            .count();
        let dirs = par::map_indexed(keep, exec, |j| {
            let s = vals[j].sqrt();
            let mut v = vec![0.0; n];
            for i in 0..m {
                let u = vecs[(i, j)];
                for (acc, x) in v.iter_mut().zip(xc.row(i)) {
                    *acc += u * x;
                }
            }
            v.iter_mut().for_each(|x| *x /= s);
            v
        });
        (vals, dirs)
    } else {
        // Covariance route: C = Xc^T Xc.
        let mut cov = DMatrix::zeros(n, n);
        for i in 0..m {
            let r = xc.row(i);
            for a in 0..n {
                for b in a..n {
                    cov[(a, b)] += r[a] * r[b];
                }
            }
        }
        for a in 0..n {
            for b in 0..a {
                cov[(a, b)] = cov[(b, a)];
            }
        }
        let (vals, vecs) = sorted_eigen(cov);
        let lmax = vals[0].max(0.0);
        let keep = vals
            .iter()
            .take(d_max)
            .take_while(|&&l| l > RANK_TOL * lmax)
            .count();
        let dirs = (0..keep)
            .map(|j| (0..n).map(|r| vecs[(r, j)]).collect())
            .collect();
        (vals, dirs)
    };

    let keep = directions.len();
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(d_max);
    for mut v in directions.drain(..) {
        orthonormalize_against(&mut v, &basis);
        basis.push(v);
    }
    // Pad past the numerical rank with standard basis vectors.
    let mut next = 0;
    while basis.len() < d_max {
        let mut e = vec![0.0; n];
        e[next] = 1.0;
        next += 1;
        if orthonormalize_against(&mut e, &basis) > 0.5 {
            basis.push(e);
        }
    }
    for v in &mut basis {
        fix_sign(v);
    }
    let singular_values = (0..d_max)
        .map(|j| {
            if j < keep {
                eigvals[j].max(0.0).sqrt()
            } else {
                0.0
            }
        })
        .collect();
    Ok(PcaModel {
        mean,
        components: RowMatrix::from_vec(d_max, n, basis.concat())?,
        singular_values,
    })
}

pub fn fit_pca(
    ds: &crate::ingest::DatasetMatrix,
    d_max: usize,
    exec: Execution,
) -> Result<PcaModel> {
    fit_pca_rows(&ds.data, d_max, exec)
}

/// `(rows - mean) * components[..d]^T`.
pub fn project_rows(
    model: &PcaModel,
    rows: &RowMatrix,
    d: usize,
    exec: Execution,
) -> Result<RowMatrix> {
    if d == 0 || d > model.d_max() {
        return Err(Error::invalid(format!(
            "projection dimension {d} must lie in 1..={}",
            model.d_max()
        )));
    }
    if rows.cols() != model.mean.len() {
        return Err(Error::invalid(
            "feature count differs from the fitted model",
        ));
    }
    let out = par::map_indexed(rows.rows(), exec, |i| {
        let x: Vec<f64> = rows
            .row(i)
            .iter()
            .zip(&model.mean)
            .map(|(a, b)| a - b)
            .collect();
        (0..d)
            .map(|j| dot(&x, model.components.row(j)))
            .collect::<Vec<_>>()
    });
    RowMatrix::from_vec(rows.rows(), d, out.concat())
}

pub fn project(
    model: &PcaModel,
    ds: &crate::ingest::DatasetMatrix,
    d: usize,
    exec: Execution,
) -> Result<Embedding> {
    Ok(Embedding {
        d,
        coords: project_rows(model, &ds.data, d, exec)?,
        labels: ds.labels.clone(),
    })
}

pub fn pairwise_distances(e: &Embedding, exec: Execution) -> Result<DistanceMatrix> {
    DistanceMatrix::from_points(&e.coords, exec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::DatasetMatrix;
    use rand_xoshiro::rand_core::{RngCore, SeedableRng};
    use rand_xoshiro::Xoshiro256StarStar;

    fn uniform(rng: &mut Xoshiro256StarStar) -> f64 {
        (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    }

    fn random(m: usize, n: usize, seed: u64) -> RowMatrix {
        let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
        RowMatrix::from_vec(m, n, (0..m * n).map(|_| uniform(&mut rng)).collect()).unwrap()
    }

    fn gram_deviation(c: &RowMatrix) -> f64 {
        let mut worst: f64 = 0.0;
        for a in 0..c.rows() {
            for b in 0..c.rows() {
                let want = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((dot(c.row(a), c.row(b)) - want).abs());
            }
        }
        worst
    }

    #[test]
    fn line_y_equals_x() {
        let data = RowMatrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 2.0]]).unwrap();
        let model = fit_pca_rows(&data, 1, Execution::Sequential).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((model.components.get(0, 0) - h).abs() < 1e-12);
        assert!((model.components.get(0, 1) - h).abs() < 1e-12);
        let coords = project_rows(&model, &data, 1, Execution::Sequential).unwrap();
        let s2 = std::f64::consts::SQRT_2;
        for (got, want) in coords.as_slice().iter().zip([-s2, 0.0, s2]) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn both_routes_are_orthonormal_with_variance_identity() {
        // wide (Gram route) and tall (covariance route)
        for (m, n) in [(12, 30), (40, 6)] {
            let data = random(m, n, 7);
            let d_max = m.min(n) - 1;
            let model = fit_pca_rows(&data, d_max, Execution::Parallel).unwrap();
            assert!(gram_deviation(&model.components) < 1e-8);
            assert!(model.singular_values.windows(2).all(|w| w[0] >= w[1]));
            let coords = project_rows(&model, &data, d_max, Execution::Parallel).unwrap();
            for j in 0..d_max {
                let col: Vec<f64> = (0..m).map(|i| coords.get(i, j)).collect();
                let mu = col.iter().sum::<f64>() / m as f64;
                let var = col.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (m - 1) as f64;
                let want = model.singular_values[j].powi(2) / (m - 1) as f64;
                assert!(
                    (var - want).abs() <= 1e-6 * want,
                    "col {j}: {var} vs {want}"
                );
            }
            let energy: f64 = coords.as_slice().iter().map(|x| x * x).sum();
            let sv: f64 = model.singular_values.iter().map(|s| s * s).sum();
            assert!((energy - sv).abs() <= 1e-6 * sv);
        }
    }

    #[test]
    fn full_rank_reconstruction() {
        let data = random(6, 10, 3);
        // centered data has rank m-1 = 5
        let model = fit_pca_rows(&data, 5, Execution::Sequential).unwrap();
        let coords = project_rows(&model, &data, 5, Execution::Sequential).unwrap();
        for i in 0..6 {
            for c in 0..10 {
                let rec: f64 = model.mean[c]
                    + (0..5)
                        .map(|j| coords.get(i, j) * model.components.get(j, c))
                        .sum::<f64>();
                assert!((rec - data.get(i, c)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn rank_deficient_pads_with_zero_singular_values() {
        let data = random(6, 10, 5);
        let model = fit_pca_rows(&data, 6, Execution::Sequential).unwrap();
        assert_eq!(model.singular_values[5], 0.0);
        assert!(gram_deviation(&model.components) < 1e-8);
    }

    #[test]
    fn sign_convention_and_truncation() {
        let data = random(9, 14, 11);
        let model = fit_pca_rows(&data, 6, Execution::Sequential).unwrap();
        for j in 0..6 {
            let row = model.components.row(j);
            let big = row
                .iter()
                .cloned()
                .fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
            assert!(big > 0.0);
        }
        let ds = DatasetMatrix::new(data, vec![0; 9], [(0, "x".into())].into()).unwrap();
        let full = project(&model, &ds, 6, Execution::Sequential).unwrap();
        let part = project(&model, &ds, 3, Execution::Sequential).unwrap();
        assert_eq!(full.truncate(3).unwrap().coords, part.coords);
        assert!(project(&model, &ds, 0, Execution::Sequential).is_err());
        assert!(project(&model, &ds, 7, Execution::Sequential).is_err());
    }

    #[test]
    fn duplicate_rows_project_identically() {
        let mut rows: Vec<Vec<f64>> = (0..5)
            .map(|i| vec![i as f64, (i * i) as f64, 1.0])
            .collect();
        rows.push(rows[2].clone());
        let data = RowMatrix::from_rows(&rows).unwrap();
        let model = fit_pca_rows(&data, 2, Execution::Sequential).unwrap();
        let c = project_rows(&model, &data, 2, Execution::Sequential).unwrap();
        assert_eq!(c.row(2), c.row(5));
    }

    #[test]
    fn errors() {
        let one = random(1, 4, 1);
        assert!(fit_pca_rows(&one, 1, Execution::Sequential).is_err());
        let data = random(4, 3, 1);
        assert!(fit_pca_rows(&data, 4, Execution::Sequential).is_err());
        let mut bad = data.clone();
        bad.set(0, 0, f64::NAN);
        assert!(DistanceMatrix::from_points(&bad, Execution::Sequential).is_err());
    }

    #[test]
    fn distances_match_double_loop() {
        let pts = random(10, 4, 99);
        let dm = DistanceMatrix::from_points(&pts, Execution::Parallel).unwrap();
        for i in 0..10 {
            assert_eq!(dm.get(i, i), 0.0);
            for j in 0..10 {
                let mut s = 0.0;
                for c in 0..4 {
                    s += (pts.get(i, c) - pts.get(j, c)).powi(2);
                }
                assert!((dm.get(i, j) - s.sqrt()).abs() < 1e-12);
                assert_eq!(dm.get(i, j), dm.get(j, i));
                for k in 0..10 {
                    assert!(dm.get(i, k) <= dm.get(i, j) + dm.get(j, k) + 1e-12);
                }
            }
        }
        let p = RowMatrix::from_rows(&[vec![0.0, 0.0], vec![3.0, 4.0], vec![0.0, 0.0]]).unwrap();
        let dm = DistanceMatrix::from_points(&p, Execution::Sequential).unwrap();
        assert_eq!(dm.get(0, 1), 5.0);
        assert_eq!(dm.get(0, 2), 0.0);
    }
}
