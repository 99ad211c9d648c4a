//! Optimal one-to-one assignment (Hungarian algorithm with potentials).

use ndarray::Array2;

/// Maximum-weight matching of rows to columns. Returns, for each row, the
/// column it is assigned to; rows beyond the number of columns get `None`.
pub fn max_weight_assignment(weights: &Array2<f64>) -> Vec<Option<usize>> {
    let (rows, cols) = weights.dim();
    let n = rows.max(cols);
    if n == 0 {
        return Vec::new();
    }
    let cost = |i: usize, j: usize| if i < rows && j < cols { -weights[[i, j]] } else { 0.0 };
    // 1-based potentials; `way`/`matched` index columns.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut matched = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        matched[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched[j0] = matched[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![None; rows];
    for j in 1..=n {
        let i = matched[j];
        if i >= 1 && i <= rows && j <= cols {
            out[i - 1] = Some(j - 1);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;

    fn total(w: &Array2<f64>, a: &[Option<usize>]) -> f64 {
        a.iter().enumerate().filter_map(|(i, j)| j.map(|j| w[[i, j]])).sum()
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn known_three_by_three() {
        let w = array![[4.0, 1.0, 3.0], [2.0, 0.0, 5.0], [3.0, 2.0, 2.0]];
        let a = max_weight_assignment(&w);
        // Best: 4 + 5 + 2 = 11.
        assert_eq!(a, vec![Some(0), Some(2), Some(1)]);
    }

    #[test]
    fn matches_exhaustive_search() {
        let mut rng = crate::rng::stream(5, &[]);
        for _ in 0..200 {
            let w = Array2::from_shape_simple_fn((3, 3), || rng.random_range(0..20) as f64);
            let best = permutations(3)
                .iter()
                .map(|p| (0..3).map(|i| w[[i, p[i]]]).sum::<f64>())
                .fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(total(&w, &max_weight_assignment(&w)), best);
        }
    }

    #[test]
    fn rectangular_inputs() {
        let w = array![[1.0, 9.0], [8.0, 2.0], [7.0, 7.0]];
        let a = max_weight_assignment(&w);
        assert_eq!(total(&w, &a), 17.0);
        assert_eq!(a.iter().filter(|x| x.is_none()).count(), 1);
        let wide = array![[1.0, 5.0, 3.0]];
        assert_eq!(max_weight_assignment(&wide), vec![Some(1)]);
    }
}
