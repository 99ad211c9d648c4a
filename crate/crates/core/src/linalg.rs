//! Small dense linear algebra: Householder QR, LU determinant and a cyclic
//! Jacobi eigensolver for symmetric matrices.

use ndarray::{Array1, Array2, ArrayView2};

/// Householder QR of a square matrix. Returns `(Q, R)` with `A = Q R`.
pub fn qr(a: ArrayView2<'_, f64>) -> (Array2<f64>, Array2<f64>) {
    let (m, n) = a.dim();
    let mut r = a.to_owned();
    let mut q = Array2::<f64>::eye(m);
    for k in 0..n.min(m.saturating_sub(1)) {
        let mut v: Array1<f64> = r.slice(ndarray::s![k.., k]).to_owned();
        let alpha = v.dot(&v).sqrt();
        if alpha == 0.0 {
            continue;
        }
        // Reflect onto -sign(x0) * |x| e1 to avoid cancellation.
        v[0] += if v[0] >= 0.0 { alpha } else { -alpha };
        let vnorm2 = v.dot(&v);
        if vnorm2 == 0.0 {
            continue;
        }
        for j in 0..n {
            let mut col = r.slice_mut(ndarray::s![k.., j]);
            let f = 2.0 * v.dot(&col) / vnorm2;
            col.scaled_add(-f, &v);
        }
        for i in 0..m {
            let mut row = q.slice_mut(ndarray::s![i, k..]);
            let f = 2.0 * row.dot(&v) / vnorm2;
            row.scaled_add(-f, &v);
        }
    }
    for i in 0..m {
        for j in 0..i.min(n) {
            r[[i, j]] = 0.0;
        }
    }
    (q, r)
}

/// Determinant by LU decomposition with partial pivoting.
pub fn determinant(a: ArrayView2<'_, f64>) -> f64 {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "determinant of a non-square matrix");
    let mut lu = a.to_owned();
    let mut det = 1.0;
    for k in 0..n {
        let pivot = (k..n)
            .max_by(|&i, &j| lu[[i, k]].abs().total_cmp(&lu[[j, k]].abs()))
            .unwrap_or(k);
        if lu[[pivot, k]] == 0.0 {
            return 0.0;
        }
        if pivot != k {
            for j in 0..n {
                lu.swap([k, j], [pivot, j]);
            }
            det = -det;
        }
        let p = lu[[k, k]];
        det *= p;
        for i in k + 1..n {
            let f = lu[[i, k]] / p;
            if f != 0.0 {
                for j in k + 1..n {
                    lu[[i, j]] -= f * lu[[k, j]];
                }
            }
        }
    }
    det
}

/// Eigen-decomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    /// Eigenvalues sorted in descending order.
    pub values: Array1<f64>,
    /// Eigenvectors as columns, in the order of `values`.
    pub vectors: Array2<f64>,
}

/// Cyclic Jacobi rotations with a fixed row-major sweep order.
pub fn symmetric_eigen(a: ArrayView2<'_, f64>) -> SymmetricEigen {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "eigen-decomposition of a non-square matrix");
    let mut m = a.to_owned();
    // Work on the exactly symmetric part.
    for i in 0..n {
        for j in 0..i {
            let s = 0.5 * (m[[i, j]] + m[[j, i]]);
            m[[i, j]] = s;
            m[[j, i]] = s;
        }
    }
    let mut v = Array2::<f64>::eye(n);
    let scale: f64 = m.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);

    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[[i, j]] * m[[i, j]])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[[p, q]];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = m[[p, p]];
                let aqq = m[[q, q]];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
                m[[p, q]] = 0.0;
                m[[q, p]] = 0.0;
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[[j, j]].total_cmp(&m[[i, i]]).then(i.cmp(&j)));
    let values = Array1::from_iter(order.iter().map(|&i| m[[i, i]]));
    let mut vectors = Array2::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        vectors.column_mut(dst).assign(&v.column(src));
    }
    SymmetricEigen { values, vectors }
}

pub fn max_abs_diff(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;

    fn random_matrix(n: usize, seed: u64) -> Array2<f64> {
        let mut rng = crate::rng::stream(seed, &[]);
        Array2::from_shape_fn((n, n), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn qr_reconstructs_and_is_orthogonal() {
        for n in [1, 2, 5, 17] {
            let a = random_matrix(n, n as u64);
            let (q, r) = qr(a.view());
            assert!(max_abs_diff(q.dot(&r).view(), a.view()) < 1e-12);
            assert!(max_abs_diff(q.t().dot(&q).view(), Array2::eye(n).view()) < 1e-12);
            for i in 0..n {
                for j in 0..i {
                    assert_eq!(r[[i, j]], 0.0);
                }
            }
        }
    }

    #[test]
    fn determinant_matches_closed_forms() {
        assert!((determinant(array![[1.0, 2.0], [3.0, 4.0]].view()) + 2.0).abs() < 1e-12);
        assert!((determinant(array![[0.0, 1.0], [1.0, 0.0]].view()) + 1.0).abs() < 1e-12);
        assert_eq!(determinant(array![[1.0, 2.0], [2.0, 4.0]].view()), 0.0);
        let a = random_matrix(6, 3);
        let b = random_matrix(6, 4);
        let lhs = determinant(a.dot(&b).view());
        let rhs = determinant(a.view()) * determinant(b.view());
        assert!((lhs - rhs).abs() < 1e-10 * rhs.abs().max(1.0));
    }

    #[test]
    fn jacobi_diagonalises() {
        let a = random_matrix(12, 9);
        let s = &a + &a.t();
        let e = symmetric_eigen(s.view());
        let recon = e.vectors.dot(&Array2::from_diag(&e.values)).dot(&e.vectors.t());
        assert!(max_abs_diff(recon.view(), s.view()) < 1e-10);
        assert!(e.values.windows(2).into_iter().all(|w| w[0] >= w[1]));
        let blocks = array![
            [1.0, 1.0, 0.0, 0.0],
            [1.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 1.0],
            [0.0, 0.0, 1.0, 1.0]
        ];
        let e = symmetric_eigen(blocks.view());
        let expected = [2.0, 2.0, 0.0, 0.0];
        for (v, x) in e.values.iter().zip(expected) {
            assert!((v - x).abs() < 1e-12);
        }
    }
}
