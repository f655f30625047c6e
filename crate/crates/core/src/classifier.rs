//! Closed-form multi-class ridge regression on one-hot targets.

use std::collections::BTreeSet;

use nalgebra::{Cholesky, DMatrix};
use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::linalg::{to_nalgebra, to_ndarray};

pub const DEFAULT_LAMBDA: f64 = 1.0;
/// Per-column relative residual allowed for the regularized solve.
pub const RESIDUAL_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeModel {
    /// `D × C`.
    pub weights: Array2<f64>,
    /// Class labels in column order (sorted).
    pub classes: Vec<String>,
    pub lambda: f64,
}

impl RidgeModel {
    pub fn dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn scores(&self, x: ArrayView1<'_, f64>) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        Ok(x.dot(&self.weights).to_vec())
    }

    /// Index of the highest score; ties go to the lowest index.
    pub fn predict_index(&self, x: ArrayView1<'_, f64>) -> Result<usize> {
        Ok(argmax(&self.scores(x)?))
    }
}

fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (c, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = c;
        }
    }
    best
}

pub fn predict<'m>(model: &'m RidgeModel, x: ArrayView1<'_, f64>) -> Result<&'m str> {
    Ok(&model.classes[model.predict_index(x)?])
}

/// Which normal-equation system to solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RidgeForm {
    /// Dual when `N ≤ D`, primal otherwise.
    Auto,
    /// `W = (XᵀX + λI_D)⁻¹ XᵀY`.
    Primal,
    /// `W = Xᵀ (XXᵀ + λI_N)⁻¹ Y`.
    Dual,
}

pub fn train_ridge(x: ArrayView2<'_, f64>, labels: &[String], lambda: f64) -> Result<RidgeModel> {
    train_ridge_with(x, labels, lambda, RidgeForm::Auto)
}

pub fn train_ridge_with(
    x: ArrayView2<'_, f64>,
    labels: &[String],
    lambda: f64,
    form: RidgeForm,
) -> Result<RidgeModel> {
    let (n, d) = x.dim();
    if labels.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: labels.len() });
    }
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("design matrix has non-finite entries".into()));
    }
    let classes: Vec<String> = labels.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    if classes.len() < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 classes, got {}", classes.len())));
    }
    let y = one_hot(labels, &classes);

    let dual = match form {
        RidgeForm::Auto => n <= d,
        RidgeForm::Dual => true,
        RidgeForm::Primal => false,
    };
    let weights = if dual {
        let gram = to_nalgebra(&x.dot(&x.t()));
        let z = solve_regularized(gram, lambda, to_nalgebra(&y))?;
        x.t().dot(&to_ndarray(&z))
    } else {
        let gram = to_nalgebra(&x.t().dot(&x));
        let rhs = to_nalgebra(&x.t().dot(&y));
        to_ndarray(&solve_regularized(gram, lambda, rhs)?)
    };
    Ok(RidgeModel { weights, classes, lambda })
}

fn one_hot(labels: &[String], classes: &[String]) -> Array2<f64> {
    let mut y = Array2::zeros((labels.len(), classes.len()));
    for (i, l) in labels.iter().enumerate() {
        let c = classes.binary_search(l).expect("label is a class");
        y[[i, c]] = 1.0;
    }
    y
}

/// Solves `(G + λI) Z = B` by Cholesky with one step of iterative refinement,
/// then checks every column's relative residual.
fn solve_regularized(gram: DMatrix<f64>, lambda: f64, rhs: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = gram.nrows();
    let a = gram + DMatrix::identity(n, n) * lambda;
    let chol = Cholesky::new(a.clone())
        .ok_or_else(|| Error::InvalidArgument("regularized Gram matrix is not positive definite".into()))?;
    let mut z = chol.solve(&rhs);
    let r = &rhs - &a * &z;
    z += chol.solve(&r);

    let r = &rhs - &a * &z;
    for c in 0..rhs.ncols() {
        let denom = rhs.column(c).norm();
        let residual = if denom > 0.0 { r.column(c).norm() / denom } else { r.column(c).norm() };
        if residual.is_nan() || residual > RESIDUAL_TOLERANCE {
            return Err(Error::Residual { column: c, residual });
        }
    }
    Ok(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn labels(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn random_problem(rng: &mut ChaCha8Rng, n: usize, d: usize, c: usize) -> (Array2<f64>, Vec<String>) {
        let x = Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0));
        // every class appears at least once
        let l = (0..n).map(|i| if i < c { format!("c{i}") } else { format!("c{}", rng.random_range(0..c)) }).collect();
        (x, l)
    }

    #[test]
    fn identity_design_approaches_identity_weights() {
        let x = Array2::<f64>::eye(2);
        let m = train_ridge(x.view(), &labels(&["a", "b"]), 1e-9).unwrap();
        assert!((&m.weights - &x).iter().all(|v| v.abs() < 1e-8));
        assert_eq!(predict(&m, x.row(0)).unwrap(), "a");
        assert_eq!(predict(&m, x.row(1)).unwrap(), "b");
    }

    #[test]
    fn zero_input_breaks_ties_low() {
        let m = train_ridge(Array2::<f64>::eye(3).view(), &labels(&["a", "b", "c"]), 1.0).unwrap();
        assert_eq!(predict(&m, Array1::zeros(3).view()).unwrap(), "a");
    }

    #[test]
    fn primal_and_dual_agree_on_8x5() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (x, l) = random_problem(&mut rng, 8, 5, 3);
        let p = train_ridge_with(x.view(), &l, 1.0, RidgeForm::Primal).unwrap();
        let d = train_ridge_with(x.view(), &l, 1.0, RidgeForm::Dual).unwrap();
        assert!((&p.weights - &d.weights).iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn separable_blobs_classified_perfectly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let centers = [[4.0, 0.0, 0.0, 1.0], [0.0, 4.0, 0.0, 1.0], [0.0, 0.0, 4.0, 1.0]];
        let sample = |rng: &mut ChaCha8Rng, c: usize| -> Vec<f64> {
            centers[c].iter().map(|v| v + rng.random_range(-0.3..0.3)).collect()
        };
        let (mut xs, mut ls) = (Vec::new(), Vec::new());
        for c in 0..3 {
            for _ in 0..50 {
                xs.extend(sample(&mut rng, c));
                ls.push(format!("k{c}"));
            }
        }
        let x = Array2::from_shape_vec((150, 4), xs).unwrap();
        let m = train_ridge(x.view(), &ls, 1.0).unwrap();
        let mut correct = 0;
        for c in 0..3 {
            for _ in 0..10 {
                let probe = Array1::from(sample(&mut rng, c));
                // nearest-centroid oracle agrees on the label
                let oracle = (0..3)
                    .min_by(|&a, &b| {
                        let da: f64 = probe.iter().zip(&centers[a]).map(|(p, q)| (p - q).powi(2)).sum();
                        let db: f64 = probe.iter().zip(&centers[b]).map(|(p, q)| (p - q).powi(2)).sum();
                        da.total_cmp(&db)
                    })
                    .unwrap();
                assert_eq!(oracle, c);
                if predict(&m, probe.view()).unwrap() == format!("k{c}") {
                    correct += 1;
                }
            }
        }
        assert_eq!(correct, 30);
    }

    #[test]
    fn errors() {
        let x = Array2::<f64>::eye(2);
        assert!(train_ridge(x.view(), &labels(&["a", "a"]), 1.0).is_err());
        assert!(train_ridge(x.view(), &labels(&["a", "b"]), 0.0).is_err());
        assert!(train_ridge(x.view(), &labels(&["a"]), 1.0).is_err());
        let m = train_ridge(x.view(), &labels(&["a", "b"]), 1.0).unwrap();
        assert!(matches!(predict(&m, array![1.0, 2.0, 3.0].view()), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn training_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (x, l) = random_problem(&mut rng, 12, 30, 4);
        assert_eq!(train_ridge(x.view(), &l, 0.5).unwrap(), train_ridge(x.view(), &l, 0.5).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn dual_primal_equivalence(seed in any::<u64>(), n in 2usize..50, d in 1usize..50, c in 2usize..6) {
            prop_assume!(c <= n);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (x, l) = random_problem(&mut rng, n, d, c);
            for lambda in [0.01, 1.0, 100.0] {
                let p = train_ridge_with(x.view(), &l, lambda, RidgeForm::Primal).unwrap();
                let q = train_ridge_with(x.view(), &l, lambda, RidgeForm::Dual).unwrap();
                let diff = (&p.weights - &q.weights).iter().fold(0.0f64, |m, v| m.max(v.abs()));
                prop_assert!(diff < 1e-9, "lambda {} diff {}", lambda, diff);
            }
        }

        #[test]
        fn argmax_invariant_to_positive_scale(seed in any::<u64>(), a in 0.01f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (x, l) = random_problem(&mut rng, 10, 6, 3);
            let m = train_ridge(x.view(), &l, 1.0).unwrap();
            let probe = Array1::from_shape_fn(6, |_| rng.random_range(-1.0..1.0));
            prop_assert_eq!(m.predict_index(probe.view()).unwrap(), m.predict_index((&probe * a).view()).unwrap());
        }
    }
}
