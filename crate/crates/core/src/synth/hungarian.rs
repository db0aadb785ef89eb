/// Minimum-cost assignment for a rectangular cost matrix (`rows × cols`,
/// row-major). Returns, for each row, the assigned column or `None` when
/// there are more rows than columns.
pub fn hungarian(cost: &[f64], rows: usize, cols: usize) -> Vec<Option<usize>> {
    assert_eq!(cost.len(), rows * cols);
    if rows == 0 || cols == 0 {
        return vec![None; rows];
    }
    // square padding; potentials method, 1-based internally
    let n = rows.max(cols);
    let big = cost.iter().fold(0.0f64, |m, &c| m.max(c.abs())) * 2.0 + 1.0;
    let at = |i: usize, j: usize| -> f64 {
        if i < rows && j < cols {
            cost[i * cols + j]
        } else {
            big
        }
    };
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = at(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![None; rows];
    for j in 1..=n {
        let i = p[j];
        if i >= 1 && i - 1 < rows && j - 1 < cols {
            out[i - 1] = Some(j - 1);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute(cost: &[f64], rows: usize, cols: usize) -> f64 {
        fn rec(cost: &[f64], rows: usize, cols: usize, i: usize, used: &mut Vec<bool>) -> f64 {
            if i == rows {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            let mut any = false;
            for j in 0..cols {
                if !used[j] {
                    any = true;
                    used[j] = true;
                    best = best.min(cost[i * cols + j] + rec(cost, rows, cols, i + 1, used));
                    used[j] = false;
                }
            }
            if !any {
                // more rows than columns: this row stays unassigned
                best = rec(cost, rows, cols, i + 1, used);
            }
            best
        }
        if rows > cols {
            // transpose so every column is used
            let t: Vec<f64> = (0..cols * rows).map(|k| cost[(k % rows) * cols + k / rows]).collect();
            return rec(&t, cols, rows, 0, &mut vec![false; rows]);
        }
        rec(cost, rows, cols, 0, &mut vec![false; cols])
    }

    fn total(cost: &[f64], cols: usize, a: &[Option<usize>]) -> f64 {
        a.iter()
            .enumerate()
            .filter_map(|(i, j)| j.map(|j| cost[i * cols + j]))
            .sum()
    }

    #[test]
    fn classic_three_by_three() {
        let c = [4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0];
        let a = hungarian(&c, 3, 3);
        assert_eq!(total(&c, 3, &a), 5.0);
    }

    proptest! {
        #[test]
        fn matches_brute_force(rows in 1usize..5, cols in 1usize..5, seed in proptest::collection::vec(0.0f64..10.0, 25)) {
            let c: Vec<f64> = seed[..rows * cols].to_vec();
            let a = hungarian(&c, rows, cols);
            let assigned = a.iter().filter(|x| x.is_some()).count();
            prop_assert_eq!(assigned, rows.min(cols));
            prop_assert!((total(&c, cols, &a) - brute(&c, rows, cols)).abs() < 1e-9);
        }
    }
}
