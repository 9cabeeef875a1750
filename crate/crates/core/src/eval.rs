//! k-NN classification under seeded k-fold cross-validation.

use std::fmt::Write as _;

use rand_xoshiro::rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::Standardizer;
use crate::matrix::{euclidean, RowMatrix};
use crate::par::{self, Execution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CvConfig {
    pub folds: usize,
    pub shuffle: bool,
    pub seed: u64,
    pub knn_k: usize,
    pub stratified: bool,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            shuffle: true,
            seed: 42,
            knn_k: 5,
            stratified: false,
        }
    }
}

impl CvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::invalid("at least two folds are required"));
        }
        if self.knn_k == 0 {
            return Err(Error::invalid("knn_k must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Uniform draw from `0..bound` by multiply-shift.
fn below(rng: &mut Xoshiro256StarStar, bound: usize) -> usize {
    ((rng.next_u64() as u128 * bound as u128) >> 64) as usize
}

/// Seeded Fisher-Yates permutation of `0..m`.
pub fn permutation(m: usize, seed: u64) -> Vec<usize> {
    let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..m).collect();
    for i in (1..m).rev() {
        let j = below(&mut rng, i + 1);
        idx.swap(i, j);
    }
    idx
}

fn folds_from_assignment(m: usize, folds: usize, fold_of: &[usize]) -> Vec<Fold> {
    (0..folds)
        .map(|f| {
            let (test, train): (Vec<usize>, Vec<usize>) = (0..m).partition(|&i| fold_of[i] == f);
            Fold { train, test }
        })
        .collect()
}

/// Splits `0..m` into `cfg.folds` disjoint test blocks. The first `m % folds`
/// folds receive one extra sample. `labels` is only consulted when
/// `cfg.stratified` is set.
pub fn kfold_indices(m: usize, cfg: &CvConfig, labels: Option<&[u32]>) -> Result<Vec<Fold>> {
    cfg.validate()?;
    if m < cfg.folds {
        return Err(Error::invalid(format!(
            "{m} samples cannot fill {} folds",
            cfg.folds
        )));
    }
    let order = if cfg.shuffle {
        permutation(m, cfg.seed)
    } else {
        (0..m).collect()
    };
    let mut fold_of = vec![0; m];
    if cfg.stratified {
        let labels = labels.ok_or_else(|| Error::invalid("stratified folds need labels"))?;
        let mut by_class = std::collections::BTreeMap::<u32, Vec<usize>>::new();
        for &i in &order {
            by_class.entry(labels[i]).or_default().push(i);
        }
        for (slot, i) in by_class.into_values().flatten().enumerate() {
            fold_of[i] = slot % cfg.folds;
        }
    } else {
        let (base, extra) = (m / cfg.folds, m % cfg.folds);
        let mut pos = 0;
        for f in 0..cfg.folds {
            let size = base + usize::from(f < extra);
            for &i in &order[pos..pos + size] {
                fold_of[i] = f;
            }
            pos += size;
        }
    }
    Ok(folds_from_assignment(m, cfg.folds, &fold_of))
}

fn vote(neighbors: &[(f64, usize)], labels: &[u32]) -> u32 {
    // (class, count, summed distance)
    let mut tally: Vec<(u32, usize, f64)> = Vec::new();
    for &(d, j) in neighbors {
        let c = labels[j];
        match tally.iter_mut().find(|t| t.0 == c) {
            Some(t) => {
                t.1 += 1;
                t.2 += d;
            }
            None => tally.push((c, 1, d)),
        }
    }
    tally
        .into_iter()
        .min_by(|a, b| b.1.cmp(&a.1).then(a.2.total_cmp(&b.2)).then(a.0.cmp(&b.0)))
        .map(|t| t.0)
        .expect("at least one neighbor")
}

/// Brute-force Euclidean k-NN majority vote.
pub fn knn_predict(
    train: &RowMatrix,
    train_labels: &[u32],
    test: &RowMatrix,
    knn_k: usize,
    exec: Execution,
) -> Result<Vec<u32>> {
    if train.rows() == 0 {
        return Err(Error::invalid("empty training set"));
    }
    if train_labels.len() != train.rows() {
        return Err(Error::invalid("training labels do not match training rows"));
    }
    if knn_k == 0 || knn_k > train.rows() {
        return Err(Error::invalid(format!(
            "knn_k={knn_k} must lie in 1..={}",
            train.rows()
        )));
    }
    if test.rows() > 0 && test.cols() != train.cols() {
        return Err(Error::invalid(format!(
            "test dimension {} differs from training dimension {}",
            test.cols(),
            train.cols()
        )));
    }
    Ok(par::map_indexed(test.rows(), exec, |t| {
        let x = test.row(t);
        let mut d: Vec<(f64, usize)> = (0..train.rows())
            .map(|j| (euclidean(x, train.row(j)), j))
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if knn_k < d.len() {
            d.select_nth_unstable_by(knn_k - 1, cmp);
            d.truncate(knn_k);
        }
        d.sort_by(cmp);
        vote(&d, train_labels)
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Scores {
    pub accuracy: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub scores: Scores,
    /// `confusion[true][pred]`.
    pub confusion: Vec<Vec<u64>>,
}

/// Accuracy plus recall and F1 macro-averaged over the classes that occur in
/// `y_true`.
pub fn metrics(y_true: &[u32], y_pred: &[u32], class_count: usize) -> Result<Metrics> {
    if y_true.is_empty() {
        return Err(Error::invalid("no samples to score"));
    }
    if y_true.len() != y_pred.len() {
        return Err(Error::invalid("prediction count differs from truth count"));
    }
    if let Some(l) = y_true
        .iter()
        .chain(y_pred)
        .find(|&&l| l as usize >= class_count)
    {
        return Err(Error::invalid(format!(
            "label {l} outside 0..{class_count}"
        )));
    }
    let mut confusion = vec![vec![0u64; class_count]; class_count];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        confusion[t as usize][p as usize] += 1;
    }
    let correct: u64 = (0..class_count).map(|c| confusion[c][c]).sum();
    let total = y_true.len() as f64;
    let mut recall_sum = 0.0;
    let mut f1_sum = 0.0;
    let mut present = 0usize;
    for (c, row) in confusion.iter().enumerate() {
        let support: u64 = row.iter().sum();
        if support == 0 {
            continue;
        }
        present += 1;
        let tp = row[c] as f64;
        let predicted: u64 = (0..class_count).map(|r| confusion[r][c]).sum();
        let recall = tp / support as f64;
        let precision = if predicted == 0 {
            0.0
        } else {
            tp / predicted as f64
        };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        recall_sum += recall;
        f1_sum += f1;
    }
    Ok(Metrics {
        scores: Scores {
            accuracy: correct as f64 / total,
            macro_recall: recall_sum / present as f64,
            macro_f1: f1_sum / present as f64,
        },
        confusion,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_fold: Vec<Scores>,
    pub mean: Scores,
    /// Population standard deviation across folds.
    pub std: Scores,
    pub confusion: Vec<Vec<u64>>,
    pub config: CvConfig,
    pub standardized: bool,
}

impl EvalReport {
    /// `method,dim,fold,acc,mr,macro_f1` rows (no header).
    pub fn csv_rows(&self, method: &str, dim: &str) -> String {
        let mut s = String::new();
        for (f, sc) in self.per_fold.iter().enumerate() {
            let _ = writeln!(
                s,
                "{method},{dim},{f},{:.6},{:.6},{:.6}",
                sc.accuracy, sc.macro_recall, sc.macro_f1
            );
        }
        s
    }
}

pub const FOLD_CSV_HEADER: &str = "method,dim,fold,acc,mr,macro_f1";

fn aggregate(per_fold: &[Scores]) -> (Scores, Scores) {
    let n = per_fold.len() as f64;
    let pick = |f: fn(&Scores) -> f64| {
        let mean = per_fold.iter().map(f).sum::<f64>() / n;
        let var = per_fold.iter().map(|s| (f(s) - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    };
    let (a, sa) = pick(|s| s.accuracy);
    let (r, sr) = pick(|s| s.macro_recall);
    let (f, sf) = pick(|s| s.macro_f1);
    (
        Scores {
            accuracy: a,
            macro_recall: r,
            macro_f1: f,
        },
        Scores {
            accuracy: sa,
            macro_recall: sr,
            macro_f1: sf,
        },
    )
}

/// Cross-validation where `prepare(train, test)` produces the train and test
/// feature rows for each fold.
pub fn cross_validate_with<P>(
    labels: &[u32],
    class_count: usize,
    cfg: &CvConfig,
    standardized: bool,
    exec: Execution,
    prepare: P,
) -> Result<EvalReport>
where
    P: Fn(&Fold) -> Result<(RowMatrix, RowMatrix)> + Sync + Send,
{
    let folds = kfold_indices(labels.len(), cfg, Some(labels))?;
    let results = par::try_map_indexed(folds.len(), exec, |f| {
        let fold = &folds[f];
        let (train, test) = prepare(fold)?;
        let train_labels: Vec<u32> = fold.train.iter().map(|&i| labels[i]).collect();
        let truth: Vec<u32> = fold.test.iter().map(|&i| labels[i]).collect();
        let pred = knn_predict(&train, &train_labels, &test, cfg.knn_k, exec)?;
        metrics(&truth, &pred, class_count)
    })?;
    let mut confusion = vec![vec![0u64; class_count]; class_count];
    for r in &results {
        for (row, add) in confusion.iter_mut().zip(&r.confusion) {
            for (c, a) in row.iter_mut().zip(add) {
                *c += a;
            }
        }
    }
    let per_fold: Vec<Scores> = results.iter().map(|r| r.scores).collect();
    let (mean, std) = aggregate(&per_fold);
    Ok(EvalReport {
        per_fold,
        mean,
        std,
        confusion,
        config: *cfg,
        standardized,
    })
}

/// Standard protocol on a fixed feature matrix, optionally z-scoring each
/// fold with statistics from its training rows.
pub fn cross_validate(
    rows: &RowMatrix,
    labels: &[u32],
    class_count: usize,
    cfg: &CvConfig,
    standardize: bool,
    exec: Execution,
) -> Result<EvalReport> {
    if rows.rows() != labels.len() {
        return Err(Error::invalid("feature rows do not match labels"));
    }
    cross_validate_with(labels, class_count, cfg, standardize, exec, |fold| {
        let train = rows.select_rows(&fold.train);
        let test = rows.select_rows(&fold.test);
        if standardize {
            let st = Standardizer::fit(rows, &fold.train)?;
            Ok((st.apply(&train), st.apply(&test)))
        } else {
            Ok((train, test))
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rows(v: &[[f64; 2]]) -> RowMatrix {
        RowMatrix::from_rows(&v.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn folds_partition() {
        let cfg = CvConfig::default();
        let folds = kfold_indices(10, &cfg, None).unwrap();
        assert_eq!(folds.len(), 5);
        let mut all: Vec<usize> = folds.iter().flat_map(|f| f.test.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        for f in &folds {
            assert_eq!(f.test.len(), 2);
            assert_eq!(f.train.len(), 8);
            assert!(f.test.iter().all(|i| !f.train.contains(i)));
        }
        assert_eq!(folds, kfold_indices(10, &cfg, None).unwrap());
        assert!(kfold_indices(4, &cfg, None).is_err());
    }

    #[test]
    fn unshuffled_folds_are_consecutive() {
        let cfg = CvConfig {
            shuffle: false,
            folds: 3,
            ..CvConfig::default()
        };
        let folds = kfold_indices(7, &cfg, None).unwrap();
        assert_eq!(folds[0].test, vec![0, 1, 2]);
        assert_eq!(folds[1].test, vec![3, 4]);
        assert_eq!(folds[2].test, vec![5, 6]);
    }

    #[test]
    fn stratified_folds_balance_classes() {
        let labels: Vec<u32> = (0..20).map(|i| (i % 2) as u32).collect();
        let cfg = CvConfig {
            stratified: true,
            ..CvConfig::default()
        };
        for f in kfold_indices(20, &cfg, Some(&labels)).unwrap() {
            let ones = f.test.iter().filter(|&&i| labels[i] == 1).count();
            assert_eq!((f.test.len(), ones), (4, 2));
        }
    }

    #[test]
    fn knn_basic_cases() {
        let train = rows(&[
            [0.0, 0.0],
            [0.0, 0.0],
            [0.0, 0.0],
            [10.0, 10.0],
            [10.0, 10.0],
            [10.0, 10.0],
        ]);
        let labels = [0, 0, 0, 1, 1, 1];
        let pred = knn_predict(
            &train,
            &labels,
            &rows(&[[1.0, 1.0], [10.0, 10.0]]),
            3,
            Execution::Sequential,
        )
        .unwrap();
        assert_eq!(pred, vec![0, 1]);
        let pred = knn_predict(
            &train,
            &labels,
            &rows(&[[10.0, 10.0]]),
            1,
            Execution::Sequential,
        )
        .unwrap();
        assert_eq!(pred, vec![1]);
        let wide = RowMatrix::from_rows(&[vec![0.0; 3]]).unwrap();
        assert!(knn_predict(&train, &labels, &wide, 1, Execution::Sequential).is_err());
        assert!(knn_predict(&train, &labels, &wide, 7, Execution::Sequential).is_err());
    }

    #[test]
    fn vote_ties_use_distance_then_class() {
        // two neighbors of each class: class 1 closer in sum
        let n = [(1.0, 0), (0.5, 1), (2.0, 2), (0.6, 3)];
        assert_eq!(vote(&n, &[0, 1, 0, 1]), 1);
        let n = [(1.0, 0), (1.0, 1)];
        assert_eq!(vote(&n, &[3, 2]), 2);
    }

    #[test]
    fn metric_examples() {
        let m = metrics(&[0, 0, 1, 1], &[0, 1, 1, 1], 2).unwrap();
        assert!((m.scores.accuracy - 0.75).abs() < 1e-12);
        assert!((m.scores.macro_recall - 0.75).abs() < 1e-12);
        assert!((m.scores.macro_f1 - (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-12);
        let m = metrics(&[0, 0, 1, 1], &[0, 0, 0, 0], 2).unwrap();
        assert_eq!((m.scores.accuracy, m.scores.macro_recall), (0.5, 0.5));
        let m = metrics(&[2, 0], &[2, 0], 3).unwrap();
        assert_eq!(
            m.scores,
            Scores {
                accuracy: 1.0,
                macro_recall: 1.0,
                macro_f1: 1.0
            }
        );
        assert!(metrics(&[], &[], 2).is_err());
    }

    #[test]
    fn one_hot_features_are_perfect() {
        let labels: Vec<u32> = (0..30).map(|i| (i % 3) as u32).collect();
        let data: Vec<Vec<f64>> = labels
            .iter()
            .map(|&l| {
                (0..3)
                    .map(|c| if c == l as usize { 1.0 } else { 0.0 })
                    .collect()
            })
            .collect();
        let x = RowMatrix::from_rows(&data).unwrap();
        for std in [true, false] {
            let r = cross_validate(
                &x,
                &labels,
                3,
                &CvConfig::default(),
                std,
                Execution::Parallel,
            )
            .unwrap();
            assert_eq!(r.mean.accuracy, 1.0);
            let total: u64 = r.confusion.iter().flatten().sum();
            assert_eq!(total, 30);
        }
    }

    #[test]
    fn random_labels_near_chance() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(5);
        let labels: Vec<u32> = (0..200).map(|i| (i % 2) as u32).collect();
        let data: Vec<f64> = (0..200 * 4)
            .map(|_| (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64)
            .collect();
        let x = RowMatrix::from_vec(200, 4, data).unwrap();
        let cfg = CvConfig::default();
        let a = cross_validate(&x, &labels, 2, &cfg, true, Execution::Parallel).unwrap();
        assert!(
            (0.35..=0.65).contains(&a.mean.accuracy),
            "{}",
            a.mean.accuracy
        );
        let b = cross_validate(&x, &labels, 2, &cfg, true, Execution::Sequential).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn knn_matches_all_pairs_oracle(pts in proptest::collection::vec(-5.0f64..5.0, 60), k in 1usize..6) {
            let all = RowMatrix::from_vec(30, 2, pts).unwrap();
            let labels: Vec<u32> = (0..20).map(|i| (i % 3) as u32).collect();
            let train = all.select_rows(&(0..20).collect::<Vec<_>>());
            let test = all.select_rows(&(20..30).collect::<Vec<_>>());
            let got = knn_predict(&train, &labels, &test, k, Execution::Parallel).unwrap();
            for (t, &pred) in got.iter().enumerate() {
                let mut d: Vec<(f64, usize)> = (0..20).map(|j| {
                    let dx = test.get(t, 0) - train.get(j, 0);
                    let dy = test.get(t, 1) - train.get(j, 1);
                    ((dx * dx + dy * dy).sqrt(), j)
                }).collect();
                d.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let near = &d[..k];
                let mut best: Option<(usize, f64, u32)> = None;
                for c in 0..3u32 {
                    let members: Vec<_> = near.iter().filter(|(_, j)| labels[*j] == c).collect();
                    if members.is_empty() { continue; }
                    let cand = (members.len(), members.iter().map(|(x, _)| x).sum::<f64>(), c);
                    best = match best {
                        None => Some(cand),
                        Some(b) if cand.0 > b.0 || (cand.0 == b.0 && cand.1 < b.1) => Some(cand),
                        Some(b) => Some(b),
                    };
                }
                prop_assert_eq!(pred, best.unwrap().2);
            }
        }

        #[test]
        fn metric_ranges(truth in proptest::collection::vec(0u32..4, 1..40), seed in any::<u64>()) {
            let pred: Vec<u32> = truth.iter().enumerate().map(|(i, &t)| if (seed >> (i % 64)) & 1 == 1 { t } else { (t + 1) % 4 }).collect();
            let m = metrics(&truth, &pred, 4).unwrap();
            for v in [m.scores.accuracy, m.scores.macro_recall, m.scores.macro_f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            let trace: u64 = (0..4).map(|c| m.confusion[c][c]).sum();
            let total: u64 = m.confusion.iter().flatten().sum();
            prop_assert_eq!(m.scores.accuracy, trace as f64 / total as f64);
        }
    }
}
