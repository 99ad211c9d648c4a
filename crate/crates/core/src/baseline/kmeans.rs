//! K-means with cosine similarity and spherical centroids.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::{DncError, Result};

const MAX_ITERATIONS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    /// Cluster index in `0..k` per row.
    pub assignment: Vec<usize>,
    /// Sum over rows of the cosine similarity to the assigned centroid.
    pub objective: f64,
    /// Objective after each centroid update of the winning restart.
    pub history: Vec<f64>,
    pub restart: usize,
}

fn normalise_rows(rows: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let mut out = rows.to_owned();
    for (i, mut r) in out.rows_mut().into_iter().enumerate() {
        let n = r.dot(&r).sqrt();
        if !(n > 1e-300) || !n.is_finite() {
            return Err(DncError::DegenerateInput(format!("row {i} has no direction")));
        }
        r /= n;
    }
    Ok(out)
}

fn centroids(x: &Array2<f64>, assignment: &[usize], k: usize) -> (Array2<f64>, Vec<usize>) {
    let mut c = Array2::zeros((k, x.ncols()));
    let mut counts = vec![0; k];
    for (row, &a) in x.rows().into_iter().zip(assignment) {
        let mut cr = c.row_mut(a);
        cr += &row;
        counts[a] += 1;
    }
    for mut r in c.rows_mut() {
        let n = r.dot(&r).sqrt();
        if n > 0.0 {
            r /= n;
        }
    }
    (c, counts)
}

fn assign(x: &Array2<f64>, c: &Array2<f64>) -> (Vec<usize>, Array1<f64>) {
    let sims = x.dot(&c.t());
    let mut assignment = Vec::with_capacity(x.nrows());
    let mut best = Array1::zeros(x.nrows());
    for (i, row) in sims.axis_iter(Axis(0)).enumerate() {
        let mut arg = 0;
        for j in 1..row.len() {
            if row[j] > row[arg] {
                arg = j;
            }
        }
        assignment.push(arg);
        best[i] = row[arg];
    }
    (assignment, best)
}

fn objective(x: &Array2<f64>, c: &Array2<f64>, assignment: &[usize]) -> f64 {
    x.rows().into_iter().zip(assignment).map(|(r, &a)| r.dot(&c.row(a))).sum()
}

/// Gives every empty cluster the worst-fitting row of a cluster that has
/// more than one member.
fn reseed_empty(x: &Array2<f64>, assignment: &mut [usize], fit: &Array1<f64>, k: usize) {
    let mut counts = vec![0usize; k];
    for &a in assignment.iter() {
        counts[a] += 1;
    }
    for empty in 0..k {
        if counts[empty] > 0 {
            continue;
        }
        let worst = (0..x.nrows())
            .filter(|&i| counts[assignment[i]] > 1)
            .min_by(|&i, &j| fit[i].total_cmp(&fit[j]).then(i.cmp(&j)))
            .expect("some cluster has two members when another is empty");
        counts[assignment[worst]] -= 1;
        assignment[worst] = empty;
        counts[empty] = 1;
    }
}

fn run_once<R: Rng + ?Sized>(x: &Array2<f64>, k: usize, rng: &mut R) -> (Vec<usize>, f64, Vec<f64>) {
    let n = x.nrows();
    let seeds = rand::seq::index::sample(rng, n, k).into_vec();
    let mut c = x.select(Axis(0), &seeds);
    let mut assignment: Vec<usize> = Vec::new();
    let mut history = Vec::new();
    for _ in 0..MAX_ITERATIONS {
        let (mut next, fit) = assign(x, &c);
        reseed_empty(x, &mut next, &fit, k);
        if next == assignment {
            break;
        }
        assignment = next;
        c = centroids(x, &assignment, k).0;
        history.push(objective(x, &c, &assignment));
    }
    let obj = *history.last().expect("at least one iteration");
    (assignment, obj, history)
}

/// Cosine K-means with `restarts` random initialisations; the restart with
/// the highest objective wins, ties going to the earliest.
pub fn kmeans_cosine<R: Rng + ?Sized>(rows: ArrayView2<'_, f64>, k: usize, restarts: usize, rng: &mut R) -> Result<KMeansResult> {
    if k == 0 || restarts == 0 {
        return Err(DncError::InvalidArgument("k and restarts must be positive".into()));
    }
    if rows.nrows() < k {
        return Err(DncError::InvalidArgument(format!("{} rows cannot form {k} clusters", rows.nrows())));
    }
    let x = normalise_rows(rows)?;
    let mut best: Option<KMeansResult> = None;
    for restart in 0..restarts {
        let (assignment, objective, history) = run_once(&x, k, rng);
        if best.as_ref().is_none_or(|b| objective > b.objective) {
            best = Some(KMeansResult { assignment, objective, history, restart });
        }
    }
    Ok(best.expect("restarts > 0"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::relabel_equivalent;
    use crate::rng::stream;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest};

    fn blobs(seed: u64, n: usize, dim: usize) -> Array2<f64> {
        let mut rng = stream(seed, &[]);
        Array2::from_shape_simple_fn((n, dim), || rng.random_range(-1.0..1.0))
    }

    #[test]
    fn single_cluster() {
        let x = blobs(1, 10, 3);
        let r = kmeans_cosine(x.view(), 1, 3, &mut stream(2, &[])).unwrap();
        assert!(r.assignment.iter().all(|&a| a == 0));
    }

    #[test]
    fn antipodal_groups_split() {
        let mut x = Array2::zeros((8, 2));
        for i in 0..8 {
            let s = if i % 2 == 0 { 1.0 } else { -1.0 };
            x[[i, 0]] = s;
            x[[i, 1]] = 0.1 * i as f64 * s;
        }
        let r = kmeans_cosine(x.view(), 2, 10, &mut stream(3, &[])).unwrap();
        let truth: Vec<usize> = (0..8).map(|i| i % 2).collect();
        assert!(relabel_equivalent(&r.assignment, &truth).unwrap());
    }

    #[test]
    fn zero_rows_and_bad_k_are_errors() {
        let x = Array2::zeros((3, 2));
        assert!(kmeans_cosine(x.view(), 2, 1, &mut stream(1, &[])).is_err());
        let y = blobs(4, 2, 2);
        assert!(kmeans_cosine(y.view(), 3, 1, &mut stream(1, &[])).is_err());
    }

    proptest! {
        #[test]
        fn scaling_rows_changes_nothing(seed in 0u64..5000, k in 1usize..5) {
            let x = blobs(seed, 20, 4);
            let scales = blobs(seed + 1, 20, 1).mapv(|v| 0.1 + 10.0 * v.abs());
            let scaled = &x * &scales;
            let a = kmeans_cosine(x.view(), k, 3, &mut stream(seed, &[7])).unwrap();
            let b = kmeans_cosine(scaled.view(), k, 3, &mut stream(seed, &[7])).unwrap();
            prop_assert_eq!(a.assignment, b.assignment);
        }

        #[test]
        fn objective_never_decreases(seed in 0u64..5000, k in 2usize..6) {
            let x = blobs(seed, 30, 3);
            let r = kmeans_cosine(x.view(), k, 1, &mut stream(seed, &[8])).unwrap();
            for w in r.history.windows(2) {
                prop_assert!(w[1] >= w[0] - 1e-12);
            }
        }
    }
}
