//! Gated rectangular linear assignment.
//!
//! Pairs that fail the gate are passed as `None`. The solver maximises the
//! number of matched pairs and, among maximum matchings, minimises the
//! total cost. Internally every admissible cost is shifted down by a margin
//! larger than any achievable matching cost and inadmissible cells cost
//! zero, which turns the problem into a plain square-free Hungarian solve.

/// Returns, for every row, the matched column if any.
///
/// Costs must be finite and non-negative.
pub fn solve(costs: &[Vec<Option<f64>>]) -> Vec<Option<usize>> {
    let rows = costs.len();
    let cols = costs.first().map_or(0, Vec::len);
    debug_assert!(costs.iter().all(|r| r.len() == cols));
    if rows == 0 || cols == 0 {
        return vec![None; rows];
    }

    let max_cost = costs
        .iter()
        .flatten()
        .flatten()
        .fold(0.0f64, |acc, &c| acc.max(c));
    let margin = (rows.min(cols) as f64 + 1.0) * (max_cost + 1.0);
    let shifted = |r: usize, c: usize| costs[r][c].map_or(0.0, |v| v - margin);

    let transposed = rows > cols;
    let (n, m) = if transposed { (cols, rows) } else { (rows, cols) };
    let matrix: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..m)
                .map(|j| if transposed { shifted(j, i) } else { shifted(i, j) })
                .collect()
        })
        .collect();

    let row_to_col = hungarian(&matrix);

    let mut out = vec![None; rows];
    for (i, j) in row_to_col.into_iter().enumerate() {
        let (r, c) = if transposed { (j, i) } else { (i, j) };
        if costs[r][c].is_some() {
            out[r] = Some(c);
        }
    }
    out
}

/// Total cost and cardinality of an assignment, summed in row order.
pub fn score(costs: &[Vec<Option<f64>>], assignment: &[Option<usize>]) -> (usize, f64) {
    assignment
        .iter()
        .enumerate()
        .filter_map(|(r, c)| c.and_then(|c| costs[r][c]))
        .fold((0, 0.0), |(n, total), c| (n + 1, total + c))
}

/// Shortest augmenting path Hungarian for `n <= m`; every row is assigned.
fn hungarian(a: &[Vec<f64>]) -> Vec<usize> {
    let n = a.len();
    let m = a[0].len();
    debug_assert!(n <= m);

    // 1-based with column 0 as the virtual source.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];

    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = a[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut result = vec![0; n];
    for j in 1..=m {
        if owner[j] > 0 {
            result[owner[j] - 1] = j - 1;
        }
    }
    result
}
