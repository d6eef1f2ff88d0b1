//! Hungarian-matched clustering accuracy over All/Old/New partitions, plus
//! the independent oracles that anchor correctness: exhaustive-permutation
//! assignment and the brute-force dual-route CMI computation.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::DatasetView;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{embed_matrix, ModelParams};

/// Clustering accuracies over the unlabeled pool under one global mapping.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub acc_all: f64,
    pub acc_old: f64,
    pub acc_new: f64,
    /// mapping[c] = ground-truth class assigned to predicted cluster c.
    pub mapping: Vec<usize>,
    /// contingency[c][y] = samples predicted in cluster c with ground truth y.
    pub contingency: Vec<Vec<u64>>,
}

/// Minimum-cost assignment via shortest augmenting paths with potentials,
/// O(n^3). Returns `perm` with `perm[row] = col`, tie-broken to the
/// lexicographically smallest permutation among cost-minimal assignments.
pub fn hungarian(cost: &Matrix) -> Result<Vec<usize>> {
    if cost.rows() != cost.cols() {
        return Err(Error::NonSquare { rows: cost.rows(), cols: cost.cols() });
    }
    if !cost.is_finite() {
        return Err(Error::Config("cost matrix must be finite".into()));
    }
    let n = cost.rows();
    if n == 1 {
        return Ok(vec![0]);
    }
    let base = solve_assignment(cost);
    let optimal: f64 = (0..n).map(|i| cost.get(i, base[i])).sum();
    let tol = 1e-9 * (1.0 + optimal.abs());

    // fix rows in order to the smallest column that preserves optimality
    let mut assignment = vec![usize::MAX; n];
    let mut used = vec![false; n];
    let mut fixed_cost = 0.0;
    for i in 0..n {
        let free: Vec<usize> = (0..n).filter(|&c| !used[c]).collect();
        let mut chosen = None;
        for &c in &free {
            let rest: Vec<usize> = free.iter().copied().filter(|&x| x != c).collect();
            let sub_cost = if i + 1 == n {
                0.0
            } else {
                let sub = submatrix(cost, i + 1, &rest);
                let sub_perm = solve_assignment(&sub);
                (0..sub.rows()).map(|r| sub.get(r, sub_perm[r])).sum()
            };
            if (fixed_cost + cost.get(i, c) + sub_cost - optimal).abs() <= tol {
                chosen = Some(c);
                break;
            }
        }
        let c = chosen.expect("some free column must preserve the optimal cost");
        assignment[i] = c;
        used[c] = true;
        fixed_cost += cost.get(i, c);
    }
    Ok(assignment)
}

fn submatrix(cost: &Matrix, row_start: usize, cols: &[usize]) -> Matrix {
    let rows = cost.rows() - row_start;
    let mut out = Matrix::zeros(rows, cols.len());
    for r in 0..rows {
        for (j, &c) in cols.iter().enumerate() {
            out.set(r, j, cost.get(row_start + r, c));
        }
    }
    out
}

/// Core augmenting-path solver; returns some optimal assignment.
fn solve_assignment(cost: &Matrix) -> Vec<usize> {
    let n = cost.rows();
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost.get(i0 - 1, j - 1) - u[i0] - v[j];
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
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        assignment[p[j] - 1] = j - 1;
    }
    assignment
}

/// Exhaustive-permutation oracle: scans all n! permutations in lexicographic
/// order keeping strict improvements, so ties resolve to the smallest
/// permutation. Guarded to n <= 10.
pub fn exhaustive_min_assignment(cost: &Matrix) -> Result<Vec<usize>> {
    if cost.rows() != cost.cols() {
        return Err(Error::NonSquare { rows: cost.rows(), cols: cost.cols() });
    }
    let n = cost.rows();
    if n > 10 {
        return Err(Error::Config(format!("exhaustive search guarded to n <= 10, got {n}")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = perm.clone();
    let mut best_cost: f64 = (0..n).map(|i| cost.get(i, perm[i])).sum();
    while next_permutation(&mut perm) {
        let c: f64 = (0..n).map(|i| cost.get(i, perm[i])).sum();
        if c < best_cost {
            best_cost = c;
            best = perm.clone();
        }
    }
    Ok(best)
}

/// Advance to the next lexicographic permutation; false after the last.
fn next_permutation(perm: &mut [usize]) -> bool {
    let n = perm.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && perm[i - 1] >= perm[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while perm[j] <= perm[i - 1] {
        j -= 1;
    }
    perm.swap(i - 1, j);
    perm[i..].reverse();
    true
}

/// Hungarian-matched clustering accuracy: builds the KxK contingency table,
/// maximizes the matched count via min-cost assignment on negated counts,
/// and reports All/Old/New accuracies under the single global mapping.
///
/// An empty Old or New subset reports accuracy 1.0 (vacuously correct).
pub fn clustering_accuracy(
    preds: &[usize],
    truth: &[usize],
    num_classes: usize,
    old_classes: &[usize],
) -> Result<EvalReport> {
    if preds.is_empty() {
        return Err(Error::EmptyBatch("clustering_accuracy"));
    }
    if preds.len() != truth.len() {
        return Err(Error::LengthMismatch { left: preds.len(), right: truth.len() });
    }
    for &id in preds.iter().chain(truth) {
        if id >= num_classes {
            return Err(Error::LabelOutOfRange { label: id, limit: num_classes });
        }
    }
    let k = num_classes;
    let mut contingency = vec![vec![0u64; k]; k];
    for (&c, &y) in preds.iter().zip(truth) {
        contingency[c][y] += 1;
    }
    let mut cost = Matrix::zeros(k, k);
    for c in 0..k {
        for y in 0..k {
            cost.set(c, y, -(contingency[c][y] as f64));
        }
    }
    let mapping = hungarian(&cost)?;

    let is_old = |y: usize| old_classes.contains(&y);
    let mut correct = [0usize; 3]; // all, old, new
    let mut total = [0usize; 3];
    for (&c, &y) in preds.iter().zip(truth) {
        let subset = if is_old(y) { 1 } else { 2 };
        let hit = mapping[c] == y;
        for s in [0, subset] {
            total[s] += 1;
            if hit {
                correct[s] += 1;
            }
        }
    }
    let acc = |s: usize| if total[s] == 0 { 1.0 } else { correct[s] as f64 / total[s] as f64 };
    Ok(EvalReport {
        acc_all: acc(0),
        acc_old: acc(1),
        acc_new: acc(2),
        mapping,
        contingency,
    })
}

/// Brute-force empirical CMI of predictions given labels, computed two ways:
/// (a) exact class-mean centroids then the mean KL estimator, and (b) the
/// joint-distribution expansion over the empirical uniform-over-samples
/// joint. The routes must agree to 1e-10 before the value is returned.
///
/// Labels must cover every class `0..max_label`; a class with zero samples is
/// an error.
pub fn oracle_cmi(preds: &Matrix, labels: &[usize]) -> Result<f64> {
    let n = preds.rows();
    if n == 0 {
        return Err(Error::EmptyBatch("oracle_cmi"));
    }
    if labels.len() != n {
        return Err(Error::LengthMismatch { left: labels.len(), right: n });
    }
    let num_classes = labels.iter().max().unwrap() + 1;
    let k = preds.cols();
    let mut class_count = vec![0usize; num_classes];
    for &y in labels {
        class_count[y] += 1;
    }
    if let Some(empty) = class_count.iter().position(|&c| c == 0) {
        return Err(Error::EmptyClass { class: empty });
    }

    // route (a): exact centroids, mean KL
    let mut centroids = vec![vec![0.0; k]; num_classes];
    for (i, &y) in labels.iter().enumerate() {
        for (c, &p) in centroids[y].iter_mut().zip(preds.row(i)) {
            *c += p;
        }
    }
    for (y, row) in centroids.iter_mut().enumerate() {
        for c in row.iter_mut() {
            *c /= class_count[y] as f64;
        }
    }
    let estimator: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            preds
                .row(i)
                .iter()
                .zip(&centroids[y])
                .filter(|(&p, _)| p > 0.0)
                .map(|(&p, &q)| p * (p / q).ln())
                .sum::<f64>()
        })
        .sum::<f64>()
        / n as f64;

    // route (b): joint expansion. P(x_i) = 1/n, P(yhat | x) = p_i,
    // P(y, yhat) = sum_{i: y_i = y} p_i[yhat] / n, P(yhat | y) = P(y, yhat) / P(y)
    let mut joint = vec![vec![0.0; k]; num_classes];
    for (i, &y) in labels.iter().enumerate() {
        for (j, &p) in joint[y].iter_mut().zip(preds.row(i)) {
            *j += p / n as f64;
        }
    }
    let mut expansion = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let p_y = class_count[y] as f64 / n as f64;
        for (&p, &jnt) in preds.row(i).iter().zip(&joint[y]) {
            if p > 0.0 {
                let cond = jnt / p_y;
                expansion += (1.0 / n as f64) * p * (p / cond).ln();
            }
        }
    }

    assert!(
        (estimator - expansion).abs() <= 1e-10,
        "CMI routes disagree: estimator {estimator} vs joint expansion {expansion}"
    );
    Ok(estimator)
}

/// Export encoder features as CSV `id,label,is_labeled,z0..z{d-1}` with
/// 17-significant-digit decimal floats (exact f64 round-trip). Reads ground
/// truth, so it requires an eval-role view.
pub fn export_embeddings(
    params: &ModelParams,
    view: &DatasetView<'_>,
    path: &Path,
) -> Result<()> {
    let z = embed_matrix(params, view.features())?;
    let mut file = fs::File::create(path)?;
    let header: Vec<String> = ["id", "label", "is_labeled"]
        .into_iter()
        .map(String::from)
        .chain((0..z.cols()).map(|j| format!("z{j}")))
        .collect();
    writeln!(file, "{}", header.join(","))?;
    for i in 0..z.rows() {
        let label = view
            .label(i)
            .ok_or_else(|| Error::Config("embedding export needs an eval-role view".into()))?;
        let mut fields =
            vec![i.to_string(), label.to_string(), (view.is_labeled(i) as u8).to_string()];
        fields.extend(z.row(i).iter().map(|v| format!("{v:.16e}")));
        writeln!(file, "{}", fields.join(","))?;
    }
    Ok(())
}
