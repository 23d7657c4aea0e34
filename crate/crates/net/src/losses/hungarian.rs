use ig_core::geometry::{iou3d, Box3D};
use serde::{Deserialize, Serialize};

/// Query-to-target assignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchResult {
    /// `(query, gt)` pairs sorted by query index.
    pub assignment: Vec<(usize, usize)>,
    pub unmatched_queries: Vec<usize>,
}

impl MatchResult {
    pub fn matched_queries(&self) -> impl Iterator<Item = usize> + '_ {
        self.assignment.iter().map(|(q, _)| *q)
    }

    pub fn is_matched(&self, query: usize) -> bool {
        self.assignment.iter().any(|(q, _)| *q == query)
    }
}

/// Weights of the pairwise matching cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatchWeights {
    pub l1: f64,
    pub iou: f64,
    /// Weight of the optional query-target affinity, subtracted from the cost.
    pub affinity: f64,
}

impl Default for MatchWeights {
    fn default() -> Self {
        Self {
            l1: 1.0,
            iou: 1.0,
            affinity: 0.0,
        }
    }
}

/// `l1 * |Δcenter, Δsize|₁ + iou * (1 − IoU)`.
pub fn box_pair_cost(pred: &Box3D, gt: &Box3D, w: &MatchWeights) -> f64 {
    let (a, b) = (pred.to_array(), gt.to_array());
    let l1: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
    w.l1 * l1 + w.iou * (1.0 - iou3d(pred, gt))
}

/// Minimum-cost injective assignment of queries to ground-truth boxes.
///
/// Matches `min(k, g)` pairs. `affinity`, when given, is `k × g`.
pub fn hungarian_match(
    pred_boxes: &[Box3D],
    gts: &[Box3D],
    affinity: Option<&[Vec<f64>]>,
    w: &MatchWeights,
) -> MatchResult {
    let cost: Vec<Vec<f64>> = pred_boxes
        .iter()
        .enumerate()
        .map(|(q, p)| {
            gts.iter()
                .enumerate()
                .map(|(j, g)| {
                    let a = affinity.map_or(0.0, |m| m[q][j]);
                    box_pair_cost(p, g, w) - w.affinity * a
                })
                .collect()
        })
        .collect();
    let mut assignment = linear_sum_assignment(&cost);
    assignment.sort_unstable();
    let unmatched_queries = (0..pred_boxes.len())
        .filter(|q| !assignment.iter().any(|(m, _)| m == q))
        .collect();
    MatchResult {
        assignment,
        unmatched_queries,
    }
}

/// Optimal assignment for a rectangular cost matrix, returned as
/// `(row, col)` pairs. Runs the shortest-augmenting-path method with dual
/// potentials in `O(n² m)` for `n ≤ m` (the matrix is transposed otherwise).
pub fn linear_sum_assignment(cost: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Vec::new();
    }
    if rows > cols {
        let t: Vec<Vec<f64>> = (0..cols).map(|j| (0..rows).map(|i| cost[i][j]).collect()).collect();
        return linear_sum_assignment(&t).into_iter().map(|(j, i)| (i, j)).collect();
    }
    let (n, m) = (rows, cols);
    // 1-based arrays; column 0 is the virtual start
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut col_row = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        col_row[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = col_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
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
                    u[col_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if col_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_row[j0] = col_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=m).filter(|&j| col_row[j] != 0).map(|j| (col_row[j] - 1, j - 1)).collect()
}

/// Sum of `cost[r][c]` over an assignment, in row order.
pub fn assignment_cost(cost: &[Vec<f64>], pairs: &[(usize, usize)]) -> f64 {
    let mut sorted = pairs.to_vec();
    sorted.sort_unstable();
    sorted.iter().map(|&(r, c)| cost[r][c]).sum()
}
