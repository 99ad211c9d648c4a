use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{DncError, Result};
use crate::linalg;

/// A D×D rotation: orthogonal with determinant +1.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationMatrix {
    data: Array2<f64>,
}

impl RotationMatrix {
    pub const ORTHOGONALITY_TOLERANCE: f64 = 1e-8;
    pub const DETERMINANT_TOLERANCE: f64 = 1e-6;

    /// Accepts `data` if `RᵀR = I` elementwise within 1e-8 and `det R = +1`.
    pub fn new(data: Array2<f64>) -> Result<Self> {
        let (r, c) = data.dim();
        if r != c || r < 2 {
            return Err(DncError::DimensionMismatch(format!("rotation must be square D≥2, got {r}×{c}")));
        }
        let gram = data.t().dot(&data);
        let err = linalg::max_abs_diff(gram.view(), Array2::eye(r).view());
        if err > Self::ORTHOGONALITY_TOLERANCE {
            return Err(DncError::Validation(format!("RᵀR deviates from I by {err:e}")));
        }
        let det = linalg::determinant(data.view());
        if (det - 1.0).abs() > Self::DETERMINANT_TOLERANCE {
            return Err(DncError::Validation(format!("det R = {det}, expected +1")));
        }
        Ok(Self { data })
    }

    pub fn identity(dim: usize) -> Self {
        Self { data: Array2::eye(dim) }
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn data(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn transpose(&self) -> Self {
        Self {
            data: self.data.t().to_owned(),
        }
    }
}

/// Haar-distributed rotation on SO(D).
///
/// QR of a matrix with i.i.d. standard normal entries, with the columns of Q
/// multiplied by the signs of R's diagonal (this makes Q Haar on O(D)). If the
/// result has determinant −1 the first column is negated.
pub fn sample_rotation<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Result<RotationMatrix> {
    if dim < 2 {
        return Err(DncError::InvalidArgument(format!("rotation dimension {dim} < 2")));
    }
    let g = Array2::from_shape_simple_fn((dim, dim), || rng.sample::<f64, _>(StandardNormal));
    let (mut q, r) = linalg::qr(g.view());
    for j in 0..dim {
        if r[[j, j]] < 0.0 {
            q.column_mut(j).mapv_inplace(|x| -x);
        }
    }
    if linalg::determinant(q.view()) < 0.0 {
        q.column_mut(0).mapv_inplace(|x| -x);
    }
    Ok(RotationMatrix { data: q })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use ndarray::array;

    #[test]
    fn sampled_rotations_are_valid() {
        let mut rng = stream(11, &[]);
        for dim in [2, 3, 8, 32] {
            for _ in 0..20 {
                let r = sample_rotation(dim, &mut rng).unwrap();
                assert!(RotationMatrix::new(r.data().to_owned()).is_ok());
                let back = r.data().dot(&r.transpose().data());
                assert!(linalg::max_abs_diff(back.view(), Array2::eye(dim).view()) < 1e-8);
            }
        }
    }

    #[test]
    fn rejects_reflections_and_small_dims() {
        assert!(RotationMatrix::new(array![[1.0, 0.0], [0.0, -1.0]]).is_err());
        assert!(RotationMatrix::new(array![[1.0, 0.1], [0.0, 1.0]]).is_err());
        assert!(sample_rotation(1, &mut stream(0, &[])).is_err());
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let a = sample_rotation(2, &mut stream(5, &[])).unwrap();
        let b = sample_rotation(2, &mut stream(5, &[])).unwrap();
        assert_eq!(a, b);
    }
}
