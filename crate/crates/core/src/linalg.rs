//! Small dense linear-algebra helpers: one-sided Jacobi SVD and row
//! normalization. Matrices here are desk-scale (embedding dim squared),
//! so a dependency-free SVD is plenty.

use ndarray::{Array1, Array2, Axis};

use crate::scalar::Scalar;

/// Singular value decomposition A = U · diag(S) · Vᵀ for an m×n matrix
/// with m ≥ n, via one-sided Jacobi rotations. Singular values are
/// returned in descending order. The sign ambiguity is fixed by forcing
/// the largest-magnitude entry of each left singular vector non-negative.
pub fn svd<S: Scalar>(a: &Array2<S>) -> (Array2<S>, Array1<S>, Array2<S>) {
    let (m, n) = a.dim();
    assert!(m >= n, "svd requires m >= n (got {m}x{n})");
    let mut u = a.clone();
    let mut v = Array2::<S>::eye(n);
    let eps = S::from_f64_lossy(1e-14);

    // Sweep until all column pairs are orthogonal to working precision.
    for _sweep in 0..64 {
        let mut off = S::zero();
        for p in 0..n {
            for q in (p + 1)..n {
                let mut alpha = S::zero();
                let mut beta = S::zero();
                let mut gamma = S::zero();
                for i in 0..m {
                    alpha += u[(i, p)] * u[(i, p)];
                    beta += u[(i, q)] * u[(i, q)];
                    gamma += u[(i, p)] * u[(i, q)];
                }
                if gamma.abs() <= eps * (alpha * beta).sqrt() || gamma == S::zero() {
                    continue;
                }
                off = off.max(gamma.abs() / (alpha * beta).sqrt().max(S::min_positive_value()));
                // Jacobi rotation zeroing the (p,q) inner product.
                let zeta = (beta - alpha) / (S::from_f64_lossy(2.0) * gamma);
                let t = zeta.signum() / (zeta.abs() + (S::one() + zeta * zeta).sqrt());
                let c = S::one() / (S::one() + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let up = u[(i, p)];
                    let uq = u[(i, q)];
                    u[(i, p)] = c * up - s * uq;
                    u[(i, q)] = s * up + c * uq;
                }
                for i in 0..n {
                    let vp = v[(i, p)];
                    let vq = v[(i, q)];
                    v[(i, p)] = c * vp - s * vq;
                    v[(i, q)] = s * vp + c * vq;
                }
            }
        }
        if off < S::from_f64_lossy(1e-13) {
            break;
        }
    }

    let mut sigma = Array1::<S>::zeros(n);
    for j in 0..n {
        let norm = u.column(j).iter().map(|&x| x * x).sum::<S>().sqrt();
        sigma[j] = norm;
        if norm > S::min_positive_value() {
            for i in 0..m {
                u[(i, j)] = u[(i, j)] / norm;
            }
        }
    }

    // Descending singular-value order.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| sigma[b].partial_cmp(&sigma[a]).unwrap());
    let mut u_sorted = Array2::<S>::zeros((m, n));
    let mut v_sorted = Array2::<S>::zeros((n, n));
    let mut s_sorted = Array1::<S>::zeros(n);
    for (dst, &src) in order.iter().enumerate() {
        u_sorted.column_mut(dst).assign(&u.column(src));
        v_sorted.column_mut(dst).assign(&v.column(src));
        s_sorted[dst] = sigma[src];
    }

    // Zero singular values leave null left columns; complete to an
    // orthonormal basis so U stays orthogonal.
    complete_orthonormal(&mut u_sorted, &s_sorted);

    // Deterministic sign convention.
    for j in 0..n {
        let mut best = 0usize;
        for i in 0..m {
            if u_sorted[(i, j)].abs() > u_sorted[(best, j)].abs() {
                best = i;
            }
        }
        if u_sorted[(best, j)] < S::zero() {
            for i in 0..m {
                u_sorted[(i, j)] = -u_sorted[(i, j)];
            }
            for i in 0..n {
                v_sorted[(i, j)] = -v_sorted[(i, j)];
            }
        }
    }

    (u_sorted, s_sorted, v_sorted.t().to_owned())
}

fn complete_orthonormal<S: Scalar>(u: &mut Array2<S>, sigma: &Array1<S>) {
    let (m, n) = u.dim();
    let tol = S::from_f64_lossy(1e-12);
    for j in 0..n {
        if sigma[j] > tol {
            continue;
        }
        // Gram-Schmidt a standard basis vector against the filled columns.
        'candidates: for e in 0..m {
            let mut col = Array1::<S>::zeros(m);
            col[e] = S::one();
            for k in 0..n {
                if k == j || sigma[k] <= tol && k > j {
                    continue;
                }
                let dot = u.column(k).iter().zip(col.iter()).map(|(&a, &b)| a * b).sum::<S>();
                for i in 0..m {
                    let adj = dot * u[(i, k)];
                    col[i] = col[i] - adj;
                }
            }
            let norm = col.iter().map(|&x| x * x).sum::<S>().sqrt();
            if norm > S::from_f64_lossy(1e-6) {
                for i in 0..m {
                    u[(i, j)] = col[i] / norm;
                }
                break 'candidates;
            }
        }
    }
}

/// Scales every row to unit Euclidean norm. Rows with zero norm are an
/// error at call sites that require it; here they are left untouched.
pub fn unit_rows<S: Scalar>(a: &mut Array2<S>) {
    for mut row in a.rows_mut() {
        let norm = row.iter().map(|&x| x * x).sum::<S>().sqrt();
        if norm > S::min_positive_value() {
            row /= norm;
        }
    }
}

/// Subtracts the column mean from every column.
pub fn center_columns<S: Scalar>(a: &mut Array2<S>) {
    let n = S::from_f64_lossy(a.nrows() as f64);
    let means = a.sum_axis(Axis(0)) / n;
    for mut row in a.rows_mut() {
        row -= &means;
    }
}

/// Max absolute entry of AᵀA − I; zero for an orthogonal matrix.
pub fn orthogonality_defect<S: Scalar>(a: &Array2<S>) -> S {
    let gram = a.t().dot(a);
    let n = gram.nrows();
    let mut worst = S::zero();
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { S::one() } else { S::zero() };
            worst = worst.max((gram[(i, j)] - target).abs());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(m: usize, n: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((m, n), |_| rng.gen_range(-1.0..1.0))
    }

    /// Random orthogonal matrix via Jacobi-style rotations.
    pub fn random_orthogonal(n: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut q = Array2::<f64>::eye(n);
        for _ in 0..(n * n) {
            let p = rng.gen_range(0..n);
            let r = rng.gen_range(0..n);
            if p == r {
                continue;
            }
            let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let (s, c) = theta.sin_cos();
            for i in 0..n {
                let qp = q[(i, p)];
                let qr = q[(i, r)];
                q[(i, p)] = c * qp - s * qr;
                q[(i, r)] = s * qp + c * qr;
            }
        }
        q
    }

    #[test]
    fn svd_reconstructs_input() {
        for seed in 0..5 {
            let a = random_matrix(8, 8, seed);
            let (u, s, vt) = svd(&a);
            let mut recon = Array2::<f64>::zeros((8, 8));
            for k in 0..8 {
                for i in 0..8 {
                    for j in 0..8 {
                        recon[(i, j)] += u[(i, k)] * s[k] * vt[(k, j)];
                    }
                }
            }
            for (x, y) in a.iter().zip(recon.iter()) {
                assert!((x - y).abs() < 1e-9, "reconstruction error");
            }
        }
    }

    #[test]
    fn svd_factors_orthogonal() {
        let a = random_matrix(10, 6, 3);
        let (u, _s, vt) = svd(&a);
        assert!(orthogonality_defect(&u) < 1e-9);
        assert!(orthogonality_defect(&vt.t().to_owned()) < 1e-9);
    }

    #[test]
    fn svd_singular_values_descending_nonnegative() {
        let a = random_matrix(7, 7, 9);
        let (_u, s, _vt) = svd(&a);
        for w in s.windows(2) {
            assert!(w[0] >= w[1]);
        }
        assert!(s.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn svd_rank_deficient_still_orthogonal() {
        // Rank-1 matrix.
        let mut a = Array2::<f64>::zeros((4, 4));
        for i in 0..4 {
            for j in 0..4 {
                a[(i, j)] = (i + 1) as f64 * (j + 1) as f64;
            }
        }
        let (u, s, _vt) = svd(&a);
        assert!(s[1] < 1e-9);
        assert!(orthogonality_defect(&u) < 1e-9);
    }

    #[test]
    fn svd_sign_deterministic() {
        let a = random_matrix(6, 6, 17);
        let (u1, _, _) = svd(&a);
        let (u2, _, _) = svd(&a.clone());
        assert_eq!(u1, u2);
    }

    #[test]
    fn unit_rows_normalizes() {
        let mut a: Array2<f64> = ndarray::array![[3.0, 4.0], [0.6, 0.8]];
        unit_rows(&mut a);
        assert!((a[(0, 0)] - 0.6).abs() < 1e-12);
        assert!((a[(0, 1)] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn center_columns_zero_means() {
        let mut a: Array2<f64> = ndarray::array![[1.0, 0.0], [3.0, 0.0]];
        center_columns(&mut a);
        assert_eq!(a, ndarray::array![[-1.0, 0.0], [1.0, 0.0]]);
    }
}
