//! L2 geometry on the unit hypersphere.

use ndarray::{Array1, ArrayView1, ArrayView2, Axis};

use crate::error::{DncError, Result};

/// Norms below this are treated as the zero vector.
const ZERO_NORM: f64 = 1e-12;

pub fn norm(v: ArrayView1<'_, f64>) -> f64 {
    v.dot(&v).sqrt()
}

/// Scales `v` to unit length.
pub fn l2_normalize(v: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    let n = norm(v);
    if !n.is_finite() || n <= ZERO_NORM {
        return Err(DncError::DegenerateInput(format!("cannot normalise vector of norm {n}")));
    }
    Ok(v.mapv(|x| x / n))
}

/// Segment embedding from window-level embeddings: normalise each window,
/// average, normalise again.
pub fn average_embedding(windows: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
    if windows.nrows() == 0 {
        return Err(DncError::DegenerateInput("no windows to average".into()));
    }
    let mut sum = Array1::zeros(windows.ncols());
    for w in windows.axis_iter(Axis(0)) {
        sum += &l2_normalize(w)?;
    }
    sum /= windows.nrows() as f64;
    l2_normalize(sum.view())
}

pub fn cosine(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.dot(&b) / (norm(a) * norm(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    #[test]
    fn normalize_examples() {
        let r = l2_normalize(array![3.0, 4.0].view()).unwrap();
        assert!((r[0] - 0.6).abs() < 1e-15 && (r[1] - 0.8).abs() < 1e-15);
        let e = array![1.0, 0.0, 0.0, 0.0];
        assert_eq!(l2_normalize(e.view()).unwrap(), e);
        assert!(matches!(
            l2_normalize(array![0.0, 0.0].view()),
            Err(DncError::DegenerateInput(_))
        ));
    }

    #[test]
    fn average_examples() {
        let single = array![[0.6, 0.8]];
        assert_eq!(average_embedding(single.view()).unwrap(), array![0.6, 0.8]);
        let r = average_embedding(array![[1.0, 0.0], [0.0, 1.0]].view()).unwrap();
        let h = 2f64.sqrt() / 2.0;
        assert!((r[0] - h).abs() < 1e-15 && (r[1] - h).abs() < 1e-15);
        assert!(matches!(
            average_embedding(array![[1.0, 0.0], [-1.0, 0.0]].view()),
            Err(DncError::DegenerateInput(_))
        ));
        assert!(average_embedding(Array2::zeros((0, 2)).view()).is_err());
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(v in prop::collection::vec(-10.0f64..10.0, 2..16)) {
            let v = Array1::from(v);
            prop_assume!(norm(v.view()) > 1e-3);
            let once = l2_normalize(v.view()).unwrap();
            let twice = l2_normalize(once.view()).unwrap();
            prop_assert!((norm(once.view()) - 1.0).abs() < 1e-9);
            for (a, b) in once.iter().zip(twice.iter()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            // direction preserved
            prop_assert!((cosine(v.view(), once.view()) - 1.0).abs() < 1e-12);
        }
    }
}
