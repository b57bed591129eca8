use nalgebra::{DMatrix, DVector};
use tabopt_core::data::{make_synthetic, make_synthetic_with, Split, SyntheticKind, SyntheticOptions};

fn numeric(split: &Split, n_num: usize) -> Vec<Vec<f64>> {
    (0..split.len()).map(|i| split.x.row(i)[..n_num].to_vec()).collect()
}

fn design(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let d = rows[0].len();
    DMatrix::from_fn(rows.len(), d + 1, |i, j| if j == d { 1.0 } else { rows[i][j] })
}

#[test]
fn noiseless_linear_regression_is_fit_exactly_by_least_squares() {
    let ds = make_synthetic(SyntheticKind::LinearRegression, 600, 3).unwrap();
    let n_num = ds.meta.num_features.len();
    let train = numeric(&ds.splits.train, n_num);
    let a = design(&train);
    let y = DVector::from_vec(ds.splits.train.y.clone());
    let beta = (a.transpose() * &a).lu().solve(&(a.transpose() * y)).unwrap();

    let test = design(&numeric(&ds.splits.test, n_num));
    let pred = test * beta;
    let se: f64 = pred
        .iter()
        .zip(&ds.splits.test.y)
        .map(|(p, y)| (p - y).powi(2))
        .sum();
    let rmse = (se / ds.splits.test.len() as f64).sqrt();
    assert!(rmse < 1e-6, "rmse {rmse}");
}

#[test]
fn well_separated_gaussians_are_linearly_separable() {
    let ds = make_synthetic(SyntheticKind::TwoGaussians, 2000, 0).unwrap();
    let n_num = ds.meta.num_features.len();
    let train = numeric(&ds.splits.train, n_num);
    let test = numeric(&ds.splits.test, n_num);

    // Logistic regression by full-batch gradient descent.
    let mut w = vec![0.0; n_num + 1];
    for _ in 0..2000 {
        let mut grad = vec![0.0; n_num + 1];
        for (x, &y) in train.iter().zip(&ds.splits.train.y) {
            let z = w[n_num] + x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
            let p = 1.0 / (1.0 + (-z).exp());
            for j in 0..n_num {
                grad[j] += (p - y) * x[j];
            }
            grad[n_num] += p - y;
        }
        for j in 0..=n_num {
            w[j] -= 0.1 * grad[j] / train.len() as f64;
        }
    }
    let correct = test
        .iter()
        .zip(&ds.splits.test.y)
        .filter(|(x, &y)| {
            let z = w[n_num] + x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
            (z > 0.0) == (y == 1.0)
        })
        .count();
    let acc = correct as f64 / test.len() as f64;
    assert!(acc > 0.99, "accuracy {acc}");
}

#[test]
fn friedman_noise_level_is_respected() {
    let mut opts = SyntheticOptions::new(SyntheticKind::Friedman, 400, 1);
    opts.noise = 0.0;
    let clean = make_synthetic_with(&opts).unwrap();
    opts.noise = 2.0;
    let noisy = make_synthetic_with(&opts).unwrap();
    let diff: Vec<f64> = clean
        .splits
        .train
        .y
        .iter()
        .zip(&noisy.splits.train.y)
        .map(|(a, b)| b - a)
        .collect();
    let n = diff.len() as f64;
    let mean = diff.iter().sum::<f64>() / n;
    let sd = (diff.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!((sd - 2.0).abs() < 0.3, "noise sd {sd}");
}
