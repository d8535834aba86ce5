//! Rectangular linear assignment: optimal (Hungarian / shortest augmenting
//! path with potentials) and k-best (Murty's partitioning).
//!
//! Rows are assigned to distinct columns; `+∞` marks a forbidden pairing.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;

/// Dense row-major cost matrix. Entries are finite or `+∞`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix<T: Scalar> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> CostMatrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(invalid(format!(
                "cost matrix data has {} entries, expected {rows}x{cols}",
                data.len()
            )));
        }
        if let Some(i) = data
            .iter()
            .position(|x| x.is_nan() || *x == T::neg_infinity())
        {
            return Err(invalid(format!(
                "cost entry ({}, {}) must be finite or +inf",
                i / cols.max(1),
                i % cols.max(1)
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// All entries `+∞`.
    pub fn forbidden(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::infinity(); rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(invalid("ragged cost matrix"));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[row * self.cols + col]
    }

    /// Panics on NaN or `-∞`.
    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: T) {
        assert!(
            !value.is_nan() && value != T::neg_infinity(),
            "invalid cost {value}"
        );
        self.data[row * self.cols + col] = value;
    }

    #[inline]
    pub fn is_allowed(&self, row: usize, col: usize) -> bool {
        self.get(row, col).is_finite()
    }

    /// Sum of the selected entries, accumulated in row order.
    pub fn cost_of(&self, row_to_col: &[usize]) -> T {
        row_to_col
            .iter()
            .enumerate()
            .fold(T::zero(), |acc, (r, &c)| acc + self.get(r, c))
    }
}

/// One row→column selection and its cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment<T: Scalar> {
    pub row_to_col: Vec<usize>,
    pub total_cost: T,
}

/// Minimum-cost assignment of every row to a distinct column.
pub fn hungarian<T: Scalar>(cost: &CostMatrix<T>) -> Result<Assignment<T>> {
    let row_to_col = solve(cost)?;
    Ok(Assignment {
        total_cost: cost.cost_of(&row_to_col),
        row_to_col,
    })
}

/// Shortest augmenting path with row/column potentials, `O(n²·m)`.
/// Forbidden entries are replaced by a sentinel large enough that any
/// selection using one costs more than every all-finite selection.
fn solve<T: Scalar>(cost: &CostMatrix<T>) -> Result<Vec<usize>> {
    let n = cost.rows;
    let m = cost.cols;
    if n == 0 {
        return Ok(Vec::new());
    }
    if n > m {
        return Err(Error::Infeasible { row: m });
    }
    for r in 0..n {
        if !(0..m).any(|c| cost.is_allowed(r, c)) {
            return Err(Error::Infeasible { row: r });
        }
    }
    let max_abs = cost
        .data
        .iter()
        .filter(|x| x.is_finite())
        .fold(T::zero(), |acc, x| acc.max(x.abs()));
    let sentinel = (max_abs + T::one()) * T::lit((2 * n + 2) as f64);
    let a = |r: usize, c: usize| {
        let v = cost.get(r, c);
        if v.is_finite() {
            v
        } else {
            sentinel
        }
    };

    // 1-based arrays; column 0 is the virtual root.
    let mut u = vec![T::zero(); n + 1];
    let mut v = vec![T::zero(); m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    let mut minv = vec![T::zero(); m + 1];
    let mut used = vec![false; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        minv.iter_mut().for_each(|x| *x = T::infinity());
        used.iter_mut().for_each(|x| *x = false);
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = T::infinity();
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = a(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                // strict: lowest column index wins ties
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
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
    let mut row_to_col = vec![usize::MAX; n];
    for j in 1..=m {
        if p[j] != 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    if let Some(r) = (0..n).find(|&r| !cost.is_allowed(r, row_to_col[r])) {
        return Err(Error::Infeasible { row: r });
    }
    Ok(row_to_col)
}

/// Total order used for output ranking: cost, then assignment vector.
fn rank<T: Scalar>(a: &Assignment<T>, b: &Assignment<T>) -> Ordering {
    a.total_cost
        .partial_cmp(&b.total_cost)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.row_to_col.cmp(&b.row_to_col))
}

struct Node<T: Scalar> {
    solution: Assignment<T>,
    forced: Vec<(usize, usize)>,
    forbidden: Vec<(usize, usize)>,
}

impl<T: Scalar> PartialEq for Node<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<T: Scalar> Eq for Node<T> {}

impl<T: Scalar> PartialOrd for Node<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T: Scalar> Ord for Node<T> {
    // reversed so BinaryHeap pops the cheapest node
    fn cmp(&self, other: &Self) -> Ordering {
        rank(&other.solution, &self.solution)
    }
}

/// Solves the subproblem left after fixing `forced` pairs and removing
/// `forbidden` ones. `None` if infeasible.
fn solve_constrained<T: Scalar>(
    cost: &CostMatrix<T>,
    forced: &[(usize, usize)],
    forbidden: &[(usize, usize)],
) -> Option<Assignment<T>> {
    let mut row_forced = vec![None; cost.rows];
    let mut col_taken = vec![false; cost.cols];
    for &(r, c) in forced {
        row_forced[r] = Some(c);
        col_taken[c] = true;
    }
    let free_rows: Vec<usize> = (0..cost.rows)
        .filter(|&r| row_forced[r].is_none())
        .collect();
    let free_cols: Vec<usize> = (0..cost.cols).filter(|&c| !col_taken[c]).collect();

    let mut sub = CostMatrix::forbidden(free_rows.len(), free_cols.len());
    let mut col_index = vec![usize::MAX; cost.cols];
    for (k, &c) in free_cols.iter().enumerate() {
        col_index[c] = k;
    }
    for (i, &r) in free_rows.iter().enumerate() {
        for (k, &c) in free_cols.iter().enumerate() {
            sub.data[i * sub.cols + k] = cost.get(r, c);
        }
    }
    for &(r, c) in forbidden {
        if row_forced[r].is_none() && !col_taken[c] {
            let i = free_rows.binary_search(&r).expect("free row");
            sub.data[i * sub.cols + col_index[c]] = T::infinity();
        }
    }
    let sub_solution = solve(&sub).ok()?;

    let mut row_to_col = vec![0usize; cost.rows];
    for (r, slot) in row_to_col.iter_mut().enumerate() {
        if let Some(c) = row_forced[r] {
            *slot = c;
        }
    }
    for (i, &r) in free_rows.iter().enumerate() {
        row_to_col[r] = free_cols[sub_solution[i]];
    }
    Some(Assignment {
        total_cost: cost.cost_of(&row_to_col),
        row_to_col,
    })
}

/// The `k` cheapest distinct assignments in nondecreasing cost order.
pub fn murty_kbest<T: Scalar>(cost: &CostMatrix<T>, k: usize) -> Result<Vec<Assignment<T>>> {
    if k == 0 {
        return Err(invalid("k must be at least 1"));
    }
    let best = hungarian(cost)?;
    let mut out = Vec::with_capacity(k);
    let mut heap = BinaryHeap::new();
    heap.push(Node {
        solution: best,
        forced: Vec::new(),
        forbidden: Vec::new(),
    });
    while let Some(node) = heap.pop() {
        // Partition the node's solution space around its own solution.
        if out.len() + 1 < k {
            let mut forced = node.forced.clone();
            let mut is_forced = vec![false; cost.rows];
            for &(r, _) in &node.forced {
                is_forced[r] = true;
            }
            for (r, &c) in node.solution.row_to_col.iter().enumerate() {
                if is_forced[r] {
                    continue;
                }
                let mut forbidden = node.forbidden.clone();
                forbidden.push((r, c));
                if let Some(solution) = solve_constrained(cost, &forced, &forbidden) {
                    heap.push(Node {
                        solution,
                        forced: forced.clone(),
                        forbidden,
                    });
                }
                forced.push((r, c));
            }
        }
        out.push(node.solution);
        if out.len() == k {
            break;
        }
    }
    Ok(out)
}

/// Largest row count [`brute_force_kbest`] accepts.
pub const BRUTE_FORCE_MAX_ROWS: usize = 7;

/// Exhaustive enumeration oracle with the same contract as [`murty_kbest`].
pub fn brute_force_kbest<T: Scalar>(cost: &CostMatrix<T>, k: usize) -> Result<Vec<Assignment<T>>> {
    if k == 0 {
        return Err(invalid("k must be at least 1"));
    }
    if cost.rows > BRUTE_FORCE_MAX_ROWS {
        return Err(invalid(format!(
            "brute force limited to {BRUTE_FORCE_MAX_ROWS} rows, got {}",
            cost.rows
        )));
    }
    let mut all = Vec::new();
    let mut current = Vec::with_capacity(cost.rows);
    let mut used = vec![false; cost.cols];
    enumerate(cost, &mut current, &mut used, &mut all);
    if all.is_empty() {
        // delegate for the offending row
        hungarian(cost)?;
        return Err(Error::Infeasible { row: 0 });
    }
    let mut assignments: Vec<Assignment<T>> = all
        .into_iter()
        .map(|row_to_col| Assignment {
            total_cost: cost.cost_of(&row_to_col),
            row_to_col,
        })
        .collect();
    assignments.sort_by(rank);
    assignments.truncate(k);
    Ok(assignments)
}

fn enumerate<T: Scalar>(
    cost: &CostMatrix<T>,
    current: &mut Vec<usize>,
    used: &mut [bool],
    out: &mut Vec<Vec<usize>>,
) {
    let r = current.len();
    if r == cost.rows {
        out.push(current.clone());
        return;
    }
    for c in 0..cost.cols {
        if !used[c] && cost.is_allowed(r, c) {
            used[c] = true;
            current.push(c);
            enumerate(cost, current, used, out);
            current.pop();
            used[c] = false;
        }
    }
}
