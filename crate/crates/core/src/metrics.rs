//! Feature-space alignment and discriminability measures.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::par::{self, Execution};

/// Added to the diagonal of the within-class scatter before inversion.
pub const SW_RIDGE: f64 = 1e-6;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Median pairwise Euclidean distance over the pooled rows, or 1 when it is 0.
pub fn median_bandwidth(exec: Execution, a: &Matrix, b: &Matrix) -> f64 {
    let pooled: Vec<&[f64]> = a.iter_rows().chain(b.iter_rows()).collect();
    let n = pooled.len();
    let mut d: Vec<f64> = par::map_range(exec, n, |i| {
        (i + 1..n).map(|j| sq_dist(pooled[i], pooled[j])).collect::<Vec<_>>()
    })
    .into_iter()
    .flatten()
    .collect();
    if d.is_empty() {
        return 1.0;
    }
    let (len, mid) = (d.len(), d.len() / 2);
    let (lo, &mut hi, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    let med_sq = if len % 2 == 1 {
        hi
    } else {
        let below = lo.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (below + hi)
    };
    // median of squared distances then sqrt: monotone, so same median
    let med = med_sq.sqrt();
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

fn kernel_mean(exec: Execution, a: &Matrix, b: &Matrix, inv_two_sigma_sq: f64) -> f64 {
    let rows = par::map_range(exec, a.rows(), |i| {
        let x = a.row(i);
        b.iter_rows().map(|y| (-sq_dist(x, y) * inv_two_sigma_sq).exp()).sum::<f64>()
    });
    rows.iter().sum::<f64>() / (a.rows() as f64 * b.rows() as f64)
}

/// Squared MMD with a Gaussian kernel at an explicit bandwidth `sigma`
/// (biased V-statistic).
pub fn mmd_rbf_sigma(exec: Execution, a: &Matrix, b: &Matrix, sigma: f64) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidDataset("MMD needs two nonempty samples".into()));
    }
    if a.cols() != b.cols() {
        return Err(Error::DimensionMismatch { left: a.cols(), right: b.cols() });
    }
    let g = 1.0 / (2.0 * sigma * sigma);
    let v = kernel_mean(exec, a, a, g) + kernel_mean(exec, b, b, g) - 2.0 * kernel_mean(exec, a, b, g);
    Ok(v.max(0.0))
}

/// Squared MMD with the median-heuristic bandwidth.
pub fn mmd_rbf(a: &Matrix, b: &Matrix) -> Result<f64> {
    mmd_rbf_with(Execution::default(), a, b)
}

pub fn mmd_rbf_with(exec: Execution, a: &Matrix, b: &Matrix) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidDataset("MMD needs two nonempty samples".into()));
    }
    if a.cols() != b.cols() {
        return Err(Error::DimensionMismatch { left: a.cols(), right: b.cols() });
    }
    mmd_rbf_sigma(exec, a, b, median_bandwidth(exec, a, b))
}

/// Between-class and within-class scatter, each divided by the sample count.
/// The within-class matrix does not include the ridge.
pub fn scatter(features: &Matrix, labels: &[usize]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if features.rows() != labels.len() {
        return Err(Error::DimensionMismatch { left: features.rows(), right: labels.len() });
    }
    let d = features.cols();
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut counts = vec![0usize; k];
    let mut sums = vec![DVector::<f64>::zeros(d); k];
    for (x, &y) in features.iter_rows().zip(labels) {
        counts[y] += 1;
        sums[y] += DVector::from_column_slice(x);
    }
    let present = counts.iter().filter(|&&c| c > 0).count();
    if present < 2 {
        return Err(Error::InvalidDataset(format!("J(W) needs at least 2 classes, found {present}")));
    }
    if let Some(c) = counts.iter().position(|&c| c == 1) {
        return Err(Error::InvalidDataset(format!("class {c} has a single sample")));
    }
    let n = features.rows() as f64;
    let means: Vec<DVector<f64>> = sums.iter().zip(&counts).map(|(s, &c)| if c > 0 { s / c as f64 } else { s.clone() }).collect();
    let mean = sums.iter().fold(DVector::zeros(d), |acc, s| acc + s) / n;

    let mut sw = DMatrix::zeros(d, d);
    for (x, &y) in features.iter_rows().zip(labels) {
        let r = DVector::from_column_slice(x) - &means[y];
        sw += &r * r.transpose();
    }
    let mut sb = DMatrix::zeros(d, d);
    for (m, &c) in means.iter().zip(&counts) {
        if c > 0 {
            let r = m - &mean;
            sb += (c as f64) * &r * r.transpose();
        }
    }
    Ok((sb / n, sw / n))
}

/// Largest generalized eigenvalue of `S_b` against `S_w + 1e-6 I`.
pub fn discriminability_jw(features: &Matrix, labels: &[usize]) -> Result<f64> {
    let (sb, sw) = scatter(features, labels)?;
    let d = sw.nrows();
    let sw = sw + DMatrix::identity(d, d) * SW_RIDGE;
    let chol = sw
        .cholesky()
        .ok_or_else(|| Error::InvalidDataset("within-class scatter is not positive definite".into()))?;
    let l_inv = chol
        .l()
        .try_inverse()
        .ok_or_else(|| Error::InvalidDataset("within-class scatter is singular".into()))?;
    let m = &l_inv * sb * l_inv.transpose();
    let m = (&m + m.transpose()) * 0.5;
    let top = m.symmetric_eigenvalues().iter().cloned().fold(0.0f64, f64::max);
    Ok(top)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::seq::SliceRandom;
    use rand_distr::{Distribution, Normal};

    fn mat(rows: &[[f64; 2]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn mmd_of_sample_with_itself_is_zero() {
        let a = mat(&[[0.0, 1.0], [2.0, -1.0], [0.5, 0.5]]);
        assert_eq!(mmd_rbf(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn mmd_point_masses_closed_form() {
        let d = 7.0;
        let a = Matrix::from_rows(&vec![[0.0, 0.0]; 20]).unwrap();
        let b = Matrix::from_rows(&vec![[d, 0.0]; 20]).unwrap();
        // pooled pairs: 380 at distance 0, 400 at distance d, so the median is d
        assert_eq!(median_bandwidth(Execution::Sequential, &a, &b), d);
        let expected = 2.0 * (1.0 - (-d * d / (2.0 * d * d)).exp());
        assert!((mmd_rbf(&a, &b).unwrap() - expected).abs() < 1e-12);
        let s = 2.0;
        let expected = 2.0 * (1.0 - (-d * d / (2.0 * s * s)).exp());
        assert!((mmd_rbf_sigma(Execution::Sequential, &a, &b, s).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn mmd_errors_and_bandwidth_fallback() {
        let a = mat(&[[1.0, 1.0]]);
        assert!(mmd_rbf(&a, &Matrix::zeros(0, 2)).is_err());
        assert!(mmd_rbf(&a, &Matrix::zeros(1, 3)).is_err());
        assert_eq!(median_bandwidth(Execution::Sequential, &a, &a), 1.0);
    }

    fn gaussian(seed: u64, n: usize) -> Matrix {
        let mut r = rng::stream(seed, "test-mmd");
        let g = Normal::new(0.0, 1.0).unwrap();
        Matrix::new(n, 2, (0..2 * n).map(|_| g.sample(&mut r)).collect()).unwrap()
    }

    #[test]
    fn mmd_same_distribution_shrinks_with_n() {
        let avg = |n: usize| (0..5).map(|s| mmd_rbf(&gaussian(2 * s, n), &gaussian(2 * s + 1, n)).unwrap()).sum::<f64>() / 5.0;
        let (small, large) = (avg(20), avg(320));
        assert!(large < small, "{large} >= {small}");
        assert!(large < 0.02, "{large}");
    }

    #[test]
    fn mmd_parallel_matches_sequential() {
        let (a, b) = (gaussian(1, 60), gaussian(2, 45));
        let s = mmd_rbf_with(Execution::Sequential, &a, &b).unwrap();
        let p = mmd_rbf_with(Execution::Parallel, &a, &b).unwrap();
        assert_eq!(s, p);
    }

    /// Largest root of det(S_b - l S_w) = 0 for 2x2 symmetric matrices.
    fn jw_2x2(sb: [[f64; 2]; 2], sw: [[f64; 2]; 2]) -> f64 {
        let a = sw[0][0] * sw[1][1] - sw[0][1] * sw[1][0];
        let b = -(sb[0][0] * sw[1][1] + sb[1][1] * sw[0][0] - sb[0][1] * sw[1][0] - sb[1][0] * sw[0][1]);
        let c = sb[0][0] * sb[1][1] - sb[0][1] * sb[1][0];
        (-b + (b * b - 4.0 * a * c).max(0.0).sqrt()) / (2.0 * a)
    }

    fn two_clusters(seed: u64, sep: f64, spread: f64) -> (Matrix, Vec<usize>) {
        let mut r = rng::stream(seed, "test-jw");
        let g = Normal::new(0.0, spread).unwrap();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for k in 0..2 {
            for _ in 0..50 {
                rows.push([k as f64 * sep + g.sample(&mut r), 0.5 * k as f64 + g.sample(&mut r)]);
                labels.push(k);
            }
        }
        (Matrix::from_rows(&rows).unwrap(), labels)
    }

    fn to2(m: &DMatrix<f64>) -> [[f64; 2]; 2] {
        [[m[(0, 0)], m[(0, 1)]], [m[(1, 0)], m[(1, 1)]]]
    }

    #[test]
    fn jw_matches_closed_form_on_2x2() {
        for seed in 0..5 {
            let (x, y) = two_clusters(seed, 6.0, 0.3);
            let (sb, sw) = scatter(&x, &y).unwrap();
            let sw = sw + DMatrix::identity(2, 2) * SW_RIDGE;
            let oracle = jw_2x2(to2(&sb), to2(&sw));
            let j = discriminability_jw(&x, &y).unwrap();
            assert!((j - oracle).abs() <= 1e-9 * oracle, "{j} vs {oracle}");
            assert!(j > 50.0, "{j}");
        }
    }

    #[test]
    fn jw_shuffled_labels_near_baseline() {
        let (x, y) = two_clusters(7, 6.0, 0.3);
        let separated = discriminability_jw(&x, &y).unwrap();
        let mut shuffled = y.clone();
        let mut r = rng::stream(7, "test-shuffle");
        let mut vals = Vec::new();
        for _ in 0..10 {
            shuffled.shuffle(&mut r);
            vals.push(discriminability_jw(&x, &shuffled).unwrap());
        }
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        // with N = 100 and d = 2 a random split gives J of order d / N
        assert!(mean < 0.1, "{mean}");
        assert!(mean < 1e-3 * separated);
    }

    #[test]
    fn jw_point_classes_bounded_by_ridge() {
        let x = mat(&[[0.0, 0.0], [0.0, 0.0], [3.0, 4.0], [3.0, 4.0]]);
        let y = [0, 0, 1, 1];
        let (sb, sw) = scatter(&x, &y).unwrap();
        assert_eq!(sw, DMatrix::zeros(2, 2));
        let j = discriminability_jw(&x, &y).unwrap();
        let bound = sb.trace() / SW_RIDGE;
        assert!(j <= bound * (1.0 + 1e-9));
        assert!((j - bound).abs() <= 1e-6 * bound, "{j} vs {bound}");
    }

    #[test]
    fn jw_errors() {
        let x = mat(&[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]);
        assert!(discriminability_jw(&x, &[0, 0, 0]).is_err());
        assert!(discriminability_jw(&x, &[0, 0, 1]).is_err());
        assert!(discriminability_jw(&x, &[0, 1]).is_err());
    }
}
