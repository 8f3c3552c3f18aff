//! Minimum-weight assignment of rows to distinct columns (Hungarian method
//! with potentials). Rows must not outnumber columns.

/// Cost marking a forbidden pair.
pub const FORBIDDEN: f64 = f64::INFINITY;

const BIG: f64 = 1e15;

/// Returns `(col_of_row, total_cost)` for a minimum-cost assignment, or `None`
/// if every complete assignment uses a forbidden pair.
///
/// Ties are resolved by the scan order: rows are inserted in index order and
/// the lowest column index wins among equal reduced costs.
pub fn min_cost_assignment(cost: &[Vec<f64>]) -> Option<(Vec<usize>, f64)> {
    let n = cost.len();
    if n == 0 {
        return Some((Vec::new(), 0.0));
    }
    let m = cost[0].len();
    if m < n || cost.iter().any(|r| r.len() != m) {
        return None;
    }
    let at = |i: usize, j: usize| {
        let c = cost[i - 1][j - 1];
        if c.is_finite() {
            c
        } else {
            BIG
        }
    };
    // 1-based arrays, index 0 is the virtual column
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = at(i0, j) - u[i0] - v[j];
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
            for j in 0..=m {
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
    let mut col_of_row = vec![0usize; n];
    for j in 1..=m {
        if p[j] != 0 {
            col_of_row[p[j] - 1] = j - 1;
        }
    }
    let mut total = 0.0;
    for (i, &j) in col_of_row.iter().enumerate() {
        let c = cost[i][j];
        if !c.is_finite() {
            return None;
        }
        total += c;
    }
    Some((col_of_row, total))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(cost: &[Vec<f64>]) -> Option<f64> {
        fn go(cost: &[Vec<f64>], i: usize, used: &mut Vec<bool>) -> f64 {
            if i == cost.len() {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for j in 0..used.len() {
                if !used[j] && cost[i][j].is_finite() {
                    used[j] = true;
                    best = best.min(cost[i][j] + go(cost, i + 1, used));
                    used[j] = false;
                }
            }
            best
        }
        let r = go(cost, 0, &mut vec![false; cost[0].len()]);
        r.is_finite().then_some(r)
    }

    #[test]
    fn square_example() {
        let c = vec![vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0], vec![3.0, 2.0, 2.0]];
        let (a, t) = min_cost_assignment(&c).unwrap();
        assert_eq!(t, 5.0);
        assert_eq!(a, vec![1, 0, 2]);
    }

    #[test]
    fn forbidden_pairs() {
        let c = vec![vec![FORBIDDEN, 1.0], vec![FORBIDDEN, 2.0]];
        assert!(min_cost_assignment(&c).is_none());
        let c = vec![vec![FORBIDDEN, 1.0], vec![7.0, 2.0]];
        assert_eq!(min_cost_assignment(&c).unwrap(), (vec![1, 0], 8.0));
    }

    #[test]
    fn matches_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..300 {
            let n = rng.gen_range(1..5);
            let m = rng.gen_range(n..6);
            let c: Vec<Vec<f64>> = (0..n)
                .map(|_| {
                    (0..m)
                        .map(|_| {
                            if rng.gen_bool(0.2) {
                                FORBIDDEN
                            } else {
                                rng.gen_range(0..10) as f64
                            }
                        })
                        .collect()
                })
                .collect();
            let got = min_cost_assignment(&c).map(|x| x.1);
            assert_eq!(got, brute(&c), "{c:?}");
        }
    }
}
