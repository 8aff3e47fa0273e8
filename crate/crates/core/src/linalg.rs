//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

/// Solves `a x = b` for symmetric positive-definite `a`.
pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    a.clone().cholesky().map(|c| c.solve(b))
}

pub fn inverse_spd(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    a.clone().cholesky().map(|c| c.inverse())
}

/// General inverse via LU; `None` when numerically singular.
pub fn inverse(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let scale = a.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 {
        return None;
    }
    let inv = a.clone().try_inverse()?;
    if inv.iter().all(|x| x.is_finite()) {
        Some(inv)
    } else {
        None
    }
}

/// Moore-Penrose pseudo-inverse of a symmetric matrix.
pub fn pseudo_inverse_sym(a: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = a.clone().symmetric_eigen();
    let top = eig.eigenvalues.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let cutoff = top * 1e-12;
    let n = a.nrows();
    let mut out = DMatrix::zeros(n, n);
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda.abs() > cutoff && lambda.abs() > 0.0 {
            let v = eig.eigenvectors.column(k);
            out += (v * v.transpose()) / lambda;
        }
    }
    out
}

/// Columns participating in the near-null space of a symmetric PSD matrix.
/// Eigenvalues at or below `max(1e-10 * largest, floor)` count as null.
pub fn null_space_columns(a: &DMatrix<f64>, names: &[String], floor: f64) -> Vec<String> {
    let eig = a.clone().symmetric_eigen();
    let top = eig.eigenvalues.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let cutoff = (top * 1e-10).max(floor);
    let mut hit = vec![false; a.nrows()];
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda.abs() <= cutoff {
            for (j, v) in eig.eigenvectors.column(k).iter().enumerate() {
                if v.abs() > 0.1 {
                    hit[j] = true;
                }
            }
        }
    }
    hit.iter()
        .enumerate()
        .filter(|(_, h)| **h)
        .map(|(j, _)| names.get(j).cloned().unwrap_or_else(|| format!("#{}", j + 1)))
        .collect()
}

/// Lower factor `L` with `L L^T = cov`. Falls back to a symmetric square
/// root with eigenvalues clipped at `1e-12` when Cholesky fails; the flag
/// reports whether the fallback was used.
pub fn psd_factor(cov: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    if let Some(c) = cov.clone().cholesky() {
        return (c.l(), false);
    }
    let eig = cov.clone().symmetric_eigen();
    let clipped = eig.eigenvalues.map(|x| x.max(1e-12).sqrt());
    let v = &eig.eigenvectors;
    (v * DMatrix::from_diagonal(&clipped) * v.transpose(), true)
}

/// Empirical covariance (denominator `m - 1`) of the rows.
pub fn empirical_covariance(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let m = rows.len();
    let p = rows.first().map(Vec::len).unwrap_or(0);
    let mut mean = vec![0.0; p];
    for r in rows {
        for (acc, x) in mean.iter_mut().zip(r) {
            *acc += x;
        }
    }
    mean.iter_mut().for_each(|x| *x /= m as f64);
    let mut cov = DMatrix::zeros(p, p);
    for r in rows {
        for a in 0..p {
            let da = r[a] - mean[a];
            for b in a..p {
                cov[(a, b)] += da * (r[b] - mean[b]);
            }
        }
    }
    let denom = (m as f64 - 1.0).max(1.0);
    for a in 0..p {
        for b in a..p {
            let v = cov[(a, b)] / denom;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    cov
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for a in 0..n {
        for b in (a + 1)..n {
            let v = 0.5 * (m[(a, b)] + m[(b, a)]);
            m[(a, b)] = v;
            m[(b, a)] = v;
        }
    }
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|r| m.row(r).iter().copied().collect())
        .collect()
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covariance_of_duplicates_is_zero() {
        let rows = vec![vec![1.0, 2.0], vec![1.0, 2.0]];
        assert_eq!(empirical_covariance(&rows), DMatrix::zeros(2, 2));
    }

    #[test]
    fn covariance_matches_hand_computation() {
        let rows = vec![vec![1.0, 0.0], vec![3.0, 4.0]];
        let c = empirical_covariance(&rows);
        assert_eq!(c[(0, 0)], 2.0);
        assert_eq!(c[(1, 1)], 8.0);
        assert_eq!(c[(0, 1)], 4.0);
    }

    #[test]
    fn psd_factor_falls_back_on_singular() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let (l, clipped) = psd_factor(&cov);
        assert!(clipped);
        let back = &l * l.transpose();
        assert!((back - cov).abs().max() < 1e-5);
    }

    #[test]
    fn pseudo_inverse_of_zero_is_zero() {
        let z = DMatrix::<f64>::zeros(2, 2);
        assert_eq!(pseudo_inverse_sym(&z), z);
    }

    #[test]
    fn null_space_names_collinear_columns() {
        // x2 = 2 * x1, x3 independent
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.0, 2.0, 4.0, 0.0, 0.0, 0.0, 1.0]);
        let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        assert_eq!(null_space_columns(&m, &names, 0.0), vec!["a", "b"]);
    }
}
