use mocap_refine::lm::{FnProblem, Jacobian, LeastSquaresProblem, SparseJacobian};
use mocap_refine::{levenberg_marquardt, LmOptions, LmStatus, Result};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Dense = fn(&[f64]) -> DMatrix<f64>;

#[test]
fn rosenbrock_reaches_minimum() {
    let analytic = FnProblem {
        n: 2,
        residuals: |x: &[f64]| vec![10.0 * (x[1] - x[0] * x[0]), 1.0 - x[0]],
        jacobian: Some(|x: &[f64]| DMatrix::from_row_slice(2, 2, &[-20.0 * x[0], 10.0, -1.0, 0.0])),
    };
    let rep = levenberg_marquardt(&analytic, &[-1.2, 1.0], &LmOptions::default()).unwrap();
    assert!((rep.x[0] - 1.0).abs() < 1e-6 && (rep.x[1] - 1.0).abs() < 1e-6, "{:?}", rep);

    let numeric = FnProblem::<_, Dense> {
        n: 2,
        residuals: |x: &[f64]| vec![10.0 * (x[1] - x[0] * x[0]), 1.0 - x[0]],
        jacobian: None,
    };
    let rep = levenberg_marquardt(&numeric, &[-1.2, 1.0], &LmOptions::default()).unwrap();
    assert!((rep.x[0] - 1.0).abs() < 1e-6 && (rep.x[1] - 1.0).abs() < 1e-6, "{:?}", rep);
}

#[test]
fn linear_least_squares_matches_direct_solve() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10 {
        let (m, n) = (12, 5);
        let a = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
        let b = DVector::from_fn(m, |_, _| rng.random_range(-3.0..3.0));
        let direct = (a.transpose() * &a).lu().solve(&(a.transpose() * &b)).unwrap();
        let (a2, b2) = (a.clone(), b.clone());
        let p = FnProblem {
            n,
            residuals: move |x: &[f64]| (&a2 * DVector::from_column_slice(x) - &b2).iter().copied().collect(),
            jacobian: Some(move |_: &[f64]| a.clone()),
        };
        let rep = levenberg_marquardt(&p, &[0.0; 5], &LmOptions::default()).unwrap();
        for (x, d) in rep.x.iter().zip(direct.iter()) {
            assert!((x - d).abs() < 1e-8, "{x} vs {d}");
        }
    }
}

#[test]
fn cost_never_increases() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..100 {
        let n = rng.random_range(1..6);
        let m = n + rng.random_range(0..6);
        let coef: Vec<[f64; 4]> = (0..m * n)
            .map(|_| {
                [
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(0.5..3.0),
                    rng.random_range(-1.0..1.0),
                ]
            })
            .collect();
        let p = FnProblem::<_, Dense> {
            n,
            residuals: move |x: &[f64]| {
                (0..m)
                    .map(|i| {
                        (0..n)
                            .map(|j| {
                                let [a, b, f, c] = coef[i * n + j];
                                a * (f * x[j]).sin() + b * x[j] * x[j] + c
                            })
                            .sum()
                    })
                    .collect()
            },
            jacobian: None,
        };
        let x0: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let opts = LmOptions {
            max_iterations: 30,
            ..Default::default()
        };
        let rep = levenberg_marquardt(&p, &x0, &opts).unwrap();
        assert!(rep.final_cost <= rep.initial_cost, "case {case}");
        let recomputed: f64 = p.residuals(&rep.x).unwrap().iter().map(|r| r * r).sum();
        assert_eq!(recomputed, rep.final_cost, "case {case}");
    }
}

/// A chain `x_k - x_{k+1}` plus anchors, given with banded sparse rows.
struct Chain {
    n: usize,
    banded: bool,
}

impl LeastSquaresProblem for Chain {
    fn num_params(&self) -> usize {
        self.n
    }

    fn residuals(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut r: Vec<f64> = x.iter().enumerate().map(|(k, v)| v - (k as f64).cos()).collect();
        r.extend(x.windows(2).map(|w| 3.0 * (w[0] - w[1]) + (w[0] * w[1]).sin()));
        Ok(r)
    }

    fn jacobian(&self, x: &[f64]) -> Option<Result<Jacobian>> {
        let mut rows: Vec<Vec<(usize, f64)>> = (0..self.n).map(|k| vec![(k, 1.0)]).collect();
        for k in 0..self.n - 1 {
            let c = (x[k] * x[k + 1]).cos();
            rows.push(vec![(k, 3.0 + c * x[k + 1]), (k + 1, -3.0 + c * x[k])]);
        }
        Some(Ok(Jacobian::Sparse(SparseJacobian { ncols: self.n, rows })))
    }

    fn normal_bandwidth(&self) -> Option<usize> {
        self.banded.then_some(1)
    }
}

#[test]
fn banded_and_dense_paths_agree() {
    let x0 = vec![0.5; 40];
    let opts = LmOptions::default();
    let banded = levenberg_marquardt(&Chain { n: 40, banded: true }, &x0, &opts).unwrap();
    let dense = levenberg_marquardt(&Chain { n: 40, banded: false }, &x0, &opts).unwrap();
    assert!(banded.final_cost < banded.initial_cost);
    for (a, b) in banded.x.iter().zip(&dense.x) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn out_of_band_entries_are_reported() {
    struct Wide;
    impl LeastSquaresProblem for Wide {
        fn num_params(&self) -> usize {
            3
        }
        fn residuals(&self, x: &[f64]) -> Result<Vec<f64>> {
            Ok(vec![x[0] - x[2] - 1.0])
        }
        fn jacobian(&self, _: &[f64]) -> Option<Result<Jacobian>> {
            Some(Ok(Jacobian::Sparse(SparseJacobian {
                ncols: 3,
                rows: vec![vec![(0, 1.0), (2, -1.0)]],
            })))
        }
        fn normal_bandwidth(&self) -> Option<usize> {
            Some(1)
        }
    }
    assert!(levenberg_marquardt(&Wide, &[0.0; 3], &LmOptions::default()).is_err());
}

#[test]
fn iteration_cap_is_reported() {
    let p = FnProblem::<_, Dense> {
        n: 2,
        residuals: |x: &[f64]| vec![10.0 * (x[1] - x[0] * x[0]), 1.0 - x[0]],
        jacobian: None,
    };
    let opts = LmOptions {
        max_iterations: 2,
        ..Default::default()
    };
    let rep = levenberg_marquardt(&p, &[-1.2, 1.0], &opts).unwrap();
    assert_eq!(rep.status, LmStatus::MaxIterations);
    assert!(rep.final_cost < rep.initial_cost);
}
