use super::{DenseMatrix, Spectrum};
use crate::error::{Error, Result};

/// Sweep cap for the cyclic Jacobi iteration.
pub const MAX_SWEEPS: usize = 100;
/// Convergence target on ‖offdiag‖_F relative to ‖m‖_F.
pub const OFF_DIAGONAL_TOLERANCE: f64 = 1e-12;

/// Eigenvalues of the symmetric part of `m`, sorted descending.
///
/// Cyclic Jacobi rotations are applied to (m + mᵀ)/2 until the off-diagonal
/// Frobenius norm drops below `OFF_DIAGONAL_TOLERANCE · ‖m‖_F` or
/// `MAX_SWEEPS` sweeps have run. Rotations are not accumulated, so only the
/// spectrum is produced. The returned [`Spectrum`] has no threshold and an
/// empty retained set; the cleaning rules in `hessian` fill those in.
pub fn symmetric_eigenvalues(m: &DenseMatrix) -> Result<Spectrum> {
    if !m.is_square() {
        return Err(Error::Dimension(format!(
            "eigenvalues of a non-square {}x{} matrix",
            m.rows(),
            m.cols()
        )));
    }
    if !m.all_finite() {
        return Err(Error::NonFinite("eigensolver input"));
    }
    let n = m.rows();
    let mut a = m.clone();
    a.symmetrize();

    let scale = a.frobenius();
    if scale > 0.0 && n > 1 {
        jacobi_sweeps(a.as_mut_slice(), n, OFF_DIAGONAL_TOLERANCE * scale);
    }

    let mut eigenvalues: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    eigenvalues.sort_by(|x, y| y.total_cmp(x));
    Ok(Spectrum::new(eigenvalues))
}

fn off_diagonal_norm(a: &[f64], n: usize) -> f64 {
    let mut sum = 0.0;
    for p in 0..n {
        for q in (p + 1)..n {
            sum += a[p * n + q] * a[p * n + q];
        }
    }
    (2.0 * sum).sqrt()
}

fn jacobi_sweeps(a: &mut [f64], n: usize, tolerance: f64) -> usize {
    let mut row_p = vec![0.0; n];
    let mut row_q = vec![0.0; n];
    for sweep in 0..MAX_SWEEPS {
        if off_diagonal_norm(a, n) <= tolerance {
            return sweep;
        }
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                row_p.copy_from_slice(&a[p * n..(p + 1) * n]);
                row_q.copy_from_slice(&a[q * n..(q + 1) * n]);
                for k in 0..n {
                    let (x, y) = (row_p[k], row_q[k]);
                    row_p[k] = c * x - s * y;
                    row_q[k] = s * x + c * y;
                }
                row_p[p] = app - t * apq;
                row_q[q] = aqq + t * apq;
                row_p[q] = 0.0;
                row_q[p] = 0.0;
                a[p * n..(p + 1) * n].copy_from_slice(&row_p);
                a[q * n..(q + 1) * n].copy_from_slice(&row_q);
                for k in 0..n {
                    a[k * n + p] = row_p[k];
                    a[k * n + q] = row_q[k];
                }
            }
        }
    }
    MAX_SWEEPS
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;
    use proptest::prelude::*;

    fn random_symmetric(n: usize, seed: u64) -> DenseMatrix {
        let mut rng = RngStream::new(seed, 0);
        let mut m = DenseMatrix::zeros(n, n);
        for r in 0..n {
            for c in r..n {
                let v = rng.standard_normal();
                m[(r, c)] = v;
                m[(c, r)] = v;
            }
        }
        m
    }

    /// Random orthogonal matrix from Gram-Schmidt on Gaussian columns.
    fn random_rotation(n: usize, seed: u64) -> DenseMatrix {
        let mut rng = RngStream::new(seed, 1);
        let mut cols: Vec<Vec<f64>> = Vec::new();
        while cols.len() < n {
            let mut v: Vec<f64> = (0..n).map(|_| rng.standard_normal()).collect();
            for u in &cols {
                let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= norm);
            cols.push(v);
        }
        DenseMatrix::from_fn(n, n, |r, c| cols[c][r])
    }

    /// Cofactor expansion along the first row.
    fn cofactor_det(m: &DenseMatrix) -> f64 {
        let n = m.rows();
        if n == 1 {
            return m[(0, 0)];
        }
        (0..n)
            .map(|j| {
                let minor = DenseMatrix::from_fn(n - 1, n - 1, |r, c| {
                    m[(r + 1, if c < j { c } else { c + 1 })]
                });
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                sign * m[(0, j)] * cofactor_det(&minor)
            })
            .sum()
    }

    #[test]
    fn identity_and_diagonal() {
        let s = symmetric_eigenvalues(&DenseMatrix::identity(3)).unwrap();
        assert_eq!(s.eigenvalues, vec![1.0, 1.0, 1.0]);
        let s = symmetric_eigenvalues(&DenseMatrix::from_diagonal(&[1.0, 4.0])).unwrap();
        assert_eq!(s.eigenvalues, vec![4.0, 1.0]);
        assert!(s.retained.is_empty());
        assert_eq!(s.threshold, 0.0);
    }

    #[test]
    fn two_by_two_characteristic_polynomial() {
        // λ² - 4λ + 3 = 0
        let m = DenseMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let s = symmetric_eigenvalues(&m).unwrap();
        assert!((s.eigenvalues[0] - 3.0).abs() < 1e-14);
        assert!((s.eigenvalues[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn rejects_non_square() {
        let m = DenseMatrix::zeros(2, 3);
        assert!(matches!(
            symmetric_eigenvalues(&m),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn zero_matrix_has_zero_spectrum() {
        let s = symmetric_eigenvalues(&DenseMatrix::zeros(4, 4)).unwrap();
        assert_eq!(s.eigenvalues, vec![0.0; 4]);
    }

    #[test]
    fn trace_identity_large() {
        for &n in &[1usize, 7, 60, 600] {
            let m = random_symmetric(n, n as u64);
            let s = symmetric_eigenvalues(&m).unwrap();
            let sum: f64 = s.eigenvalues.iter().sum();
            let tr = m.trace();
            assert!((sum - tr).abs() <= 1e-9 * (1.0 + tr.abs()), "n={n}");
            assert!(s.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn product_matches_cofactor_determinant() {
        for n in 1..=8 {
            let m = random_symmetric(n, 100 + n as u64);
            let s = symmetric_eigenvalues(&m).unwrap();
            let prod: f64 = s.eigenvalues.iter().product();
            let det = cofactor_det(&m);
            assert!(
                (prod - det).abs() <= 1e-8 * det.abs().max(1e-300),
                "n={n}: {prod} vs {det}"
            );
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn orthogonal_similarity_invariance(n in 2usize..12, seed in any::<u64>()) {
            let m = random_symmetric(n, seed);
            let q = random_rotation(n, seed);
            let rotated = q.transpose().matmul(&m).unwrap().matmul(&q).unwrap();
            let a = symmetric_eigenvalues(&m).unwrap();
            let b = symmetric_eigenvalues(&rotated).unwrap();
            for (x, y) in a.eigenvalues.iter().zip(&b.eigenvalues) {
                prop_assert!((x - y).abs() < 1e-8);
            }
        }
    }
}
