//! Training objectives: category-level CMI against refined class centroids,
//! centroid separation, instance-level cross-view CMI, marginal-entropy
//! regularization, supervised cross-entropy, and both contrastive losses,
//! plus the weighted composites.
//!
//! Graph-valued losses take [`Var`] predictions/projections and return a 1x1
//! node, so one backward pass on the composite drives training. Targets
//! (refined centroids, sharpened cross-view predictions) are computed
//! eagerly from forward values and enter the graph as constants, which is
//! exactly the stop-gradient semantics the objectives call for.

use serde::{Deserialize, Serialize};

use crate::autodiff::{concat_rows, Tape, Var};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Length-K nonnegative vector summing to 1.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbVector {
    probs: Vec<f64>,
}

impl ProbVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidProbVector("empty probability vector".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidProbVector(format!(
                "entries must be finite and nonnegative: {probs:?}"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidProbVector(format!("sums to {sum}, expected 1")));
        }
        Ok(ProbVector { probs })
    }

    pub fn uniform(k: usize) -> Self {
        ProbVector { probs: vec![1.0 / k as f64; k] }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }
}

/// KL(p || q) = sum_k p_k ln(p_k / q_k), with p_k = 0 terms contributing 0.
///
/// `q` is expected to be smoothed (min entry >= eps floor) when used as a
/// KL target; a zero q entry under positive p yields +inf, the honest limit.
pub fn kl_divergence(p: &ProbVector, q: &ProbVector) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch { left: p.len(), right: q.len() });
    }
    Ok(kl_slices(p.as_slice(), q.as_slice()))
}

fn kl_slices(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pk, _)| pk > 0.0)
        .map(|(&pk, &qk)| pk * (pk / qk).ln())
        .sum()
}

/// Power sharpening: p_k^(1/tau) renormalized. tau = 1 is the identity.
pub fn sharpen(p: &ProbVector, tau_sharp: f64) -> ProbVector {
    assert!(tau_sharp > 0.0, "tau_sharp must be positive");
    let sharpened = sharpen_slice(p.as_slice(), tau_sharp);
    ProbVector { probs: sharpened }
}

fn sharpen_slice(p: &[f64], tau_sharp: f64) -> Vec<f64> {
    let powed: Vec<f64> = p.iter().map(|&v| v.powf(1.0 / tau_sharp)).collect();
    let sum: f64 = powed.iter().sum();
    powed.into_iter().map(|v| v / sum).collect()
}

/// Refined KL target built from a class centroid: the ground-truth entry is
/// forced to 1, the k largest other entries of the original centroid are
/// zeroed (ties broken toward the lower class index), the remaining soft
/// values are kept, and the result is renormalized, floored at `eps_floor`,
/// and renormalized again.
pub fn refine_target(q: &ProbVector, y: usize, k: usize, eps_floor: f64) -> Result<ProbVector> {
    let kk = q.len();
    if y >= kk {
        return Err(Error::LabelOutOfRange { label: y, limit: kk });
    }
    if k > kk - 1 {
        return Err(Error::Config(format!("top-k {k} exceeds K-1 = {}", kk - 1)));
    }
    let mut refined = refine_slice(q.as_slice(), y, k, eps_floor);
    // guard against residual rounding drift
    let sum: f64 = refined.iter().sum();
    for v in &mut refined {
        *v /= sum;
    }
    Ok(ProbVector { probs: refined })
}

fn refine_slice(q: &[f64], y: usize, k: usize, eps_floor: f64) -> Vec<f64> {
    let kk = q.len();
    let mut order: Vec<usize> = (0..kk).filter(|&j| j != y).collect();
    order.sort_by(|&a, &b| q[b].partial_cmp(&q[a]).unwrap().then(a.cmp(&b)));
    let mut out = q.to_vec();
    out[y] = 1.0;
    for &j in order.iter().take(k) {
        out[j] = 0.0;
    }
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    if eps_floor > 0.0 {
        for v in &mut out {
            *v = v.max(eps_floor);
        }
        let sum: f64 = out.iter().sum();
        for v in &mut out {
            *v /= sum;
        }
    }
    out
}

/// Per-class EMA estimates of the mean softmax prediction (the empirical
/// class-conditional posterior). Classes never observed hold the uniform
/// distribution and are excluded from the separation loss.
#[derive(Clone, Debug)]
pub struct ClassCentroids {
    q: Vec<Vec<f64>>,
    counts: Vec<u64>,
    momentum: f64,
}

impl ClassCentroids {
    pub fn new(num_classes: usize, momentum: f64) -> Self {
        assert!(num_classes > 0);
        assert!((0.0..1.0).contains(&momentum), "momentum must be in [0, 1)");
        ClassCentroids {
            q: vec![vec![1.0 / num_classes as f64; num_classes]; num_classes],
            counts: vec![0; num_classes],
            momentum,
        }
    }

    /// Build from explicit per-class vectors, all marked observed.
    pub fn from_vectors(vectors: Vec<ProbVector>, momentum: f64) -> Result<Self> {
        let k = vectors.len();
        for v in &vectors {
            if v.len() != k {
                return Err(Error::LengthMismatch { left: v.len(), right: k });
            }
        }
        Ok(ClassCentroids {
            q: vectors.into_iter().map(|v| v.probs).collect(),
            counts: vec![1; k],
            momentum,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.q.len()
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn get(&self, y: usize) -> &[f64] {
        &self.q[y]
    }

    pub fn observed(&self, y: usize) -> bool {
        self.counts[y] > 0
    }

    pub fn observed_classes(&self) -> Vec<usize> {
        (0..self.q.len()).filter(|&y| self.counts[y] > 0).collect()
    }

    /// EMA update from detached batch predictions: for each class present,
    /// q^y <- m q^y + (1-m) mean(predictions of class y), renormalized.
    /// Absent classes are unchanged.
    pub fn update(&mut self, preds: &Matrix, labels: &[usize]) -> Result<()> {
        self.accumulate(preds, labels, self.momentum)
    }

    /// Overwrite with exact class means (the full-dataset estimator), used
    /// by exact-centroid mode and oracle comparisons.
    pub fn set_exact(&mut self, preds: &Matrix, labels: &[usize]) -> Result<()> {
        self.accumulate(preds, labels, 0.0)
    }

    fn accumulate(&mut self, preds: &Matrix, labels: &[usize], m: f64) -> Result<()> {
        let k = self.num_classes();
        if preds.cols() != k {
            return Err(Error::Shape {
                context: "centroid update",
                expected: format!("predictions with {k} columns"),
                got: format!("{}", preds.cols()),
            });
        }
        if preds.rows() != labels.len() {
            return Err(Error::LengthMismatch { left: preds.rows(), right: labels.len() });
        }
        for &y in labels {
            if y >= k {
                return Err(Error::LabelOutOfRange { label: y, limit: k });
            }
        }
        let mut sums = vec![vec![0.0; k]; k];
        let mut n = vec![0u64; k];
        for (i, &y) in labels.iter().enumerate() {
            for (s, &p) in sums[y].iter_mut().zip(preds.row(i)) {
                *s += p;
            }
            n[y] += 1;
        }
        for y in 0..k {
            if n[y] == 0 {
                continue;
            }
            let mean_w = (1.0 - m) / n[y] as f64;
            for (qv, s) in self.q[y].iter_mut().zip(&sums[y]) {
                *qv = m * *qv + mean_w * s;
            }
            let total: f64 = self.q[y].iter().sum();
            for qv in &mut self.q[y] {
                *qv /= total;
            }
            self.counts[y] += n[y];
        }
        Ok(())
    }
}

/// How the category-level CMI loss builds its per-sample targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CmiTargets {
    /// Ground-truth entry forced to 1, top-k hard negatives zeroed, floored.
    Refined { top_k: usize, eps_floor: f64 },
    /// Raw centroids, no refinement or flooring. Requires strictly positive
    /// centroids; used for estimator-vs-oracle equivalence.
    Raw,
}

/// Target rows q-hat^{y_i} for a labeled batch.
pub fn cmi_target_rows(
    labels: &[usize],
    centroids: &ClassCentroids,
    mode: CmiTargets,
) -> Result<Matrix> {
    let k = centroids.num_classes();
    let mut rows = Vec::with_capacity(labels.len());
    for &y in labels {
        if y >= k {
            return Err(Error::LabelOutOfRange { label: y, limit: k });
        }
        let row = match mode {
            CmiTargets::Refined { top_k, eps_floor } => {
                refine_slice(centroids.get(y), y, top_k.min(k - 1), eps_floor)
            }
            CmiTargets::Raw => centroids.get(y).to_vec(),
        };
        rows.push(row);
    }
    Ok(Matrix::from_rows(&rows))
}

/// Mean KL(p_i || t_i) between prediction rows and constant target rows.
fn mean_kl_to_const_targets<'t>(tape: &'t Tape, probs: Var<'t>, targets: &Matrix) -> Var<'t> {
    let log_t = tape.leaf(targets.map(f64::ln));
    let log_p = probs.log();
    probs.mul(log_p.sub(log_t)).row_sum().mean_all()
}

/// Category-level CMI loss: mean over the labeled batch of
/// KL(p_i || q-hat^{y_i}) with gradient-detached targets.
pub fn loss_cmi<'t>(
    tape: &'t Tape,
    probs: Var<'t>,
    labels: &[usize],
    centroids: &ClassCentroids,
    mode: CmiTargets,
) -> Result<Var<'t>> {
    if labels.is_empty() {
        return Err(Error::EmptyBatch("loss_cmi"));
    }
    if probs.rows() != labels.len() {
        return Err(Error::LengthMismatch { left: probs.rows(), right: labels.len() });
    }
    let targets = cmi_target_rows(labels, centroids, mode)?;
    Ok(mean_kl_to_const_targets(tape, probs, &targets))
}

/// In-graph centroid rows for the separation loss. Classes present in the
/// labeled batch contribute `m * stored + (1 - m) * batch_mean(predictions)`
/// with gradient flowing through the batch-mean branch only; observed but
/// absent classes enter as constants; never-observed classes are excluded.
/// Returns the stacked rows and their class ids, or `None` when fewer than
/// two classes are estimable.
pub fn batch_centroid_nodes<'t>(
    tape: &'t Tape,
    probs: Var<'t>,
    labels: &[usize],
    centroids: &ClassCentroids,
) -> Result<Option<(Var<'t>, Vec<usize>)>> {
    if probs.rows() != labels.len() {
        return Err(Error::LengthMismatch { left: probs.rows(), right: labels.len() });
    }
    let k = centroids.num_classes();
    for &y in labels {
        if y >= k {
            return Err(Error::LabelOutOfRange { label: y, limit: k });
        }
    }
    let m = centroids.momentum();
    let mut classes: Vec<usize> = centroids.observed_classes();
    for &y in labels {
        if !classes.contains(&y) {
            classes.push(y);
        }
    }
    classes.sort_unstable();
    if classes.len() < 2 {
        return Ok(None);
    }
    let rows: Vec<Var<'t>> = classes
        .iter()
        .map(|&y| {
            let stored = Matrix::row_vector(centroids.get(y));
            let members: Vec<usize> =
                labels.iter().enumerate().filter(|(_, &l)| l == y).map(|(i, _)| i).collect();
            if members.is_empty() {
                tape.leaf(stored)
            } else {
                let batch_mean = probs.select_rows(&members).col_mean();
                tape.leaf(stored.scale(m)).add(batch_mean.scale(1.0 - m))
            }
        })
        .collect();
    Ok(Some((concat_rows(&rows), classes)))
}

/// Separation loss over stacked centroid rows (CxK):
/// (1/C) sum_i ln[ (1/(C-1)) sum_{j != i} exp(q_i . q_j / tau) ].
pub fn loss_sep_node<'t>(tape: &'t Tape, q: Var<'t>, tau_sep: f64) -> Result<Var<'t>> {
    let c = q.rows();
    if c < 2 {
        return Err(Error::TooFewCentroids(c));
    }
    let sims = q.matmul(q.t()).scale(1.0 / tau_sep);
    let mut mask = Matrix::filled(c, c, 1.0);
    for i in 0..c {
        mask.set(i, i, 0.0);
    }
    let off_diag = tape.leaf(mask);
    Ok(sims
        .exp()
        .mul(off_diag)
        .row_sum()
        .scale(1.0 / (c as f64 - 1.0))
        .log()
        .mean_all())
}

/// Eager separation loss over the estimable (observed) centroids.
pub fn loss_sep(centroids: &ClassCentroids, tau_sep: f64) -> Result<f64> {
    let observed = centroids.observed_classes();
    if observed.len() < 2 {
        return Err(Error::TooFewCentroids(observed.len()));
    }
    let rows: Vec<Vec<f64>> = observed.iter().map(|&y| centroids.get(y).to_vec()).collect();
    let tape = Tape::new();
    let q = tape.leaf(Matrix::from_rows(&rows));
    Ok(loss_sep_node(&tape, q, tau_sep)?.item())
}

/// Instance-level CMI: symmetric cross-view KL with sharpened, detached
/// targets, target-first argument order:
/// (1/(2|B|)) sum_i [ KL(q'_i || p_i) + KL(q_i || p'_i) ].
pub fn loss_inst<'t>(
    tape: &'t Tape,
    preds_v1: Var<'t>,
    preds_v2: Var<'t>,
    tau_sharp: f64,
) -> Result<Var<'t>> {
    let q1 = sharpen_rows(&preds_v1.value(), tau_sharp);
    let q2 = sharpen_rows(&preds_v2.value(), tau_sharp);
    loss_inst_with_targets(tape, preds_v1, preds_v2, &q1, &q2)
}

/// `loss_inst` with explicit frozen targets: q2 targets view 1, q1 targets
/// view 2. The finite-difference harness uses this to differentiate the same
/// partial the detached-target loss optimizes.
pub fn loss_inst_with_targets<'t>(
    tape: &'t Tape,
    preds_v1: Var<'t>,
    preds_v2: Var<'t>,
    q1: &Matrix,
    q2: &Matrix,
) -> Result<Var<'t>> {
    let b = preds_v1.rows();
    if b != preds_v2.rows() || preds_v1.cols() != preds_v2.cols() {
        return Err(Error::Shape {
            context: "loss_inst",
            expected: format!("{}x{}", b, preds_v1.cols()),
            got: format!("{}x{}", preds_v2.rows(), preds_v2.cols()),
        });
    }
    // sum_i sum_k q ln q, with 0 ln 0 = 0
    let target_entropy_term: f64 = q1
        .data()
        .iter()
        .chain(q2.data().iter())
        .filter(|&&v| v > 0.0)
        .map(|&v| v * v.ln())
        .sum();
    let cross1 = tape.leaf(q2.clone()).mul(preds_v1.log()).sum_all();
    let cross2 = tape.leaf(q1.clone()).mul(preds_v2.log()).sum_all();
    let total = tape
        .scalar(target_entropy_term)
        .sub(cross1)
        .sub(cross2)
        .scale(1.0 / (2.0 * b as f64));
    Ok(total)
}

/// Sharpen each row of a prediction matrix.
pub fn sharpen_matrix(p: &Matrix, tau_sharp: f64) -> Matrix {
    sharpen_rows(p, tau_sharp)
}

fn sharpen_rows(p: &Matrix, tau_sharp: f64) -> Matrix {
    let rows: Vec<Vec<f64>> = (0..p.rows()).map(|i| sharpen_slice(p.row(i), tau_sharp)).collect();
    Matrix::from_rows(&rows)
}

/// Marginal-entropy regularizer: sum_k pbar_k ln pbar_k (negative entropy of
/// the mean prediction over both views; minimizing it maximizes entropy).
pub fn loss_ent<'t>(preds_v1: Var<'t>, preds_v2: Var<'t>) -> Result<Var<'t>> {
    if preds_v1.rows() == 0 {
        return Err(Error::EmptyBatch("loss_ent"));
    }
    if preds_v1.cols() != preds_v2.cols() {
        return Err(Error::Shape {
            context: "loss_ent",
            expected: format!("{} columns", preds_v1.cols()),
            got: format!("{}", preds_v2.cols()),
        });
    }
    let pbar = concat_rows(&[preds_v1, preds_v2]).col_mean();
    // skip exactly-zero marginal entries: 0 ln 0 = 0 and they carry no gradient
    let nonzero: Vec<usize> =
        pbar.value().data().iter().enumerate().filter(|(_, &v)| v > 0.0).map(|(j, _)| j).collect();
    let active = pbar.t().select_rows(&nonzero);
    Ok(active.mul(active.log()).sum_all())
}

/// Supervised cross-entropy on labeled logits: mean of -ln softmax(logits)[y].
pub fn loss_ce<'t>(tape: &'t Tape, logits: Var<'t>, labels: &[usize]) -> Result<Var<'t>> {
    if labels.is_empty() {
        return Err(Error::EmptyBatch("loss_ce"));
    }
    if logits.rows() != labels.len() {
        return Err(Error::LengthMismatch { left: logits.rows(), right: labels.len() });
    }
    let k = logits.cols();
    let mut one_hot = Matrix::zeros(labels.len(), k);
    for (i, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(Error::LabelOutOfRange { label: y, limit: k });
        }
        one_hot.set(i, y, 1.0);
    }
    let picked = logits.softmax_rows().log().mul(tape.leaf(one_hot));
    Ok(picked.row_sum().mean_all().scale(-1.0))
}

/// Supervised contrastive loss over a pool of unit-norm projections with
/// labels. Anchors without positives are skipped; returns the loss node and
/// the skipped-anchor count.
pub fn loss_con_sup<'t>(
    tape: &'t Tape,
    h: Var<'t>,
    labels: &[usize],
    tau_c: f64,
) -> Result<(Var<'t>, usize)> {
    let n = h.rows();
    if n != labels.len() {
        return Err(Error::LengthMismatch { left: n, right: labels.len() });
    }
    if n == 0 {
        return Err(Error::EmptyBatch("loss_con_sup"));
    }
    let mut pos_weights = Matrix::zeros(n, n);
    let mut valid = Vec::new();
    for i in 0..n {
        let positives: Vec<usize> =
            (0..n).filter(|&q| q != i && labels[q] == labels[i]).collect();
        if positives.is_empty() {
            continue;
        }
        let w = 1.0 / positives.len() as f64;
        for q in positives {
            pos_weights.set(i, q, w);
        }
        valid.push(i);
    }
    let skipped = n - valid.len();
    if valid.is_empty() {
        return Ok((tape.scalar(0.0), skipped));
    }
    let sims = h.matmul(h.t()).scale(1.0 / tau_c);
    let mut off_diag = Matrix::filled(n, n, 1.0);
    for i in 0..n {
        off_diag.set(i, i, 0.0);
    }
    let log_denom = sims.exp().mul(tape.leaf(off_diag)).row_sum().log();
    let mean_pos_sim = sims.mul(tape.leaf(pos_weights)).row_sum();
    let per_anchor = log_denom.sub(mean_pos_sim);
    let loss = per_anchor.select_rows(&valid).mean_all();
    Ok((loss, skipped))
}

/// Unsupervised (cross-view) contrastive loss. The pool is both views'
/// projections; each anchor's positive is its other view; the loss averages
/// over all 2|B| anchors.
pub fn loss_con_unsup<'t>(
    tape: &'t Tape,
    h_v1: Var<'t>,
    h_v2: Var<'t>,
    tau_c: f64,
) -> Result<Var<'t>> {
    let b = h_v1.rows();
    if b != h_v2.rows() || h_v1.cols() != h_v2.cols() {
        return Err(Error::Shape {
            context: "loss_con_unsup",
            expected: format!("{}x{}", b, h_v1.cols()),
            got: format!("{}x{}", h_v2.rows(), h_v2.cols()),
        });
    }
    let pool = concat_rows(&[h_v1, h_v2]);
    let n = 2 * b;
    let sims = pool.matmul(pool.t()).scale(1.0 / tau_c);
    let mut off_diag = Matrix::filled(n, n, 1.0);
    let mut pos_mask = Matrix::zeros(n, n);
    for i in 0..n {
        off_diag.set(i, i, 0.0);
        pos_mask.set(i, (i + b) % n, 1.0);
    }
    let log_denom = sims.exp().mul(tape.leaf(off_diag)).row_sum().log();
    let pos_sim = sims.mul(tape.leaf(pos_mask)).row_sum();
    Ok(log_denom.sub(pos_sim).mean_all())
}

/// All loss weights and temperatures.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub lambda_cmi: f64,
    pub lambda_sep: f64,
    pub lambda_inst: f64,
    pub lambda_ent: f64,
    pub alpha: f64,
    pub beta: f64,
    pub tau_c: f64,
    pub tau_sep: f64,
    pub tau_sharp: f64,
    pub top_k: usize,
    pub eps_floor: f64,
    pub centroid_momentum: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_cmi: 0.1,
            lambda_sep: 0.1,
            lambda_inst: 1.0,
            lambda_ent: 2.0,
            alpha: 0.35,
            beta: 0.35,
            tau_c: 0.07,
            tau_sep: 0.1,
            tau_sharp: 0.5,
            top_k: 10,
            eps_floor: 1e-12,
            centroid_momentum: 0.9,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("lambda_cmi", self.lambda_cmi),
            ("lambda_sep", self.lambda_sep),
            ("lambda_inst", self.lambda_inst),
            ("lambda_ent", self.lambda_ent),
        ];
        for (name, v) in nonneg {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{name} must be nonnegative, got {v}")));
            }
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must be in [0, 1], got {v}")));
            }
        }
        for (name, v) in
            [("tau_c", self.tau_c), ("tau_sep", self.tau_sep), ("tau_sharp", self.tau_sharp)]
        {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !self.eps_floor.is_finite() || self.eps_floor <= 0.0 {
            return Err(Error::Config(format!(
                "eps_floor must be positive, got {}",
                self.eps_floor
            )));
        }
        if !(0.0..1.0).contains(&self.centroid_momentum) {
            return Err(Error::Config(format!(
                "centroid_momentum must be in [0, 1), got {}",
                self.centroid_momentum
            )));
        }
        Ok(())
    }
}

/// Scalar values of every component and both composites.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub cmi: f64,
    pub sep: f64,
    pub inst: f64,
    pub ent: f64,
    pub con_l: f64,
    pub con_u: f64,
    pub cls: f64,
    pub total: f64,
}

/// Graph nodes for every component and the composites
/// cls = lambda_cmi cmi + lambda_sep sep + lambda_inst inst + lambda_ent ent,
/// total = alpha ce + (1-alpha) cls + beta con_l + (1-beta) con_u.
pub struct LossTerms<'t> {
    pub ce: Var<'t>,
    pub cmi: Var<'t>,
    pub sep: Var<'t>,
    pub inst: Var<'t>,
    pub ent: Var<'t>,
    pub con_l: Var<'t>,
    pub con_u: Var<'t>,
    pub cls: Var<'t>,
    pub total: Var<'t>,
}

impl<'t> LossTerms<'t> {
    pub fn breakdown(&self) -> LossBreakdown {
        LossBreakdown {
            ce: self.ce.item(),
            cmi: self.cmi.item(),
            sep: self.sep.item(),
            inst: self.inst.item(),
            ent: self.ent.item(),
            con_l: self.con_l.item(),
            con_u: self.con_u.item(),
            cls: self.cls.item(),
            total: self.total.item(),
        }
    }
}

/// Combine component nodes into the weighted composites.
#[allow(clippy::too_many_arguments)]
pub fn combine_losses<'t>(
    ce: Var<'t>,
    cmi: Var<'t>,
    sep: Var<'t>,
    inst: Var<'t>,
    ent: Var<'t>,
    con_l: Var<'t>,
    con_u: Var<'t>,
    config: &LossConfig,
) -> LossTerms<'t> {
    let cls = cmi
        .scale(config.lambda_cmi)
        .add(sep.scale(config.lambda_sep))
        .add(inst.scale(config.lambda_inst))
        .add(ent.scale(config.lambda_ent));
    let total = ce
        .scale(config.alpha)
        .add(cls.scale(1.0 - config.alpha))
        .add(con_l.scale(config.beta))
        .add(con_u.scale(1.0 - config.beta));
    LossTerms { ce, cmi, sep, inst, ent, con_l, con_u, cls, total }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(v: &[f64]) -> ProbVector {
        ProbVector::new(v.to_vec()).unwrap()
    }

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() < tol, "{a} vs {b} (diff {})", (a - b).abs());
    }

    #[test]
    fn kl_of_identical_distributions_is_zero() {
        let p = pv(&[0.2, 0.5, 0.3]);
        assert_close(kl_divergence(&p, &p).unwrap(), 0.0, 1e-15);
    }

    #[test]
    fn kl_direct_summation_example() {
        let p = pv(&[0.5, 0.5]);
        let q = pv(&[0.25, 0.75]);
        let expected = 0.5 * (0.5f64 / 0.25).ln() + 0.5 * (0.5f64 / 0.75).ln();
        let got = kl_divergence(&p, &q).unwrap();
        assert_close(got, expected, 1e-15);
        assert_close(got, 0.143841, 1e-6);
    }

    #[test]
    fn kl_one_hot_vs_uniform_is_log_two() {
        let p = pv(&[1.0, 0.0]);
        let q = pv(&[0.5, 0.5]);
        assert_close(kl_divergence(&p, &q).unwrap(), std::f64::consts::LN_2, 1e-15);
    }

    #[test]
    fn kl_length_mismatch_errors() {
        let p = pv(&[1.0, 0.0]);
        let q = pv(&[0.5, 0.25, 0.25]);
        assert!(matches!(
            kl_divergence(&p, &q),
            Err(Error::LengthMismatch { left: 2, right: 3 })
        ));
    }

    #[test]
    fn prob_vector_rejects_bad_input() {
        assert!(ProbVector::new(vec![0.5, 0.6]).is_err());
        assert!(ProbVector::new(vec![-0.1, 1.1]).is_err());
        assert!(ProbVector::new(vec![]).is_err());
        assert!(ProbVector::new(vec![0.25; 4]).is_ok());
    }

    #[test]
    fn centroid_update_with_zero_momentum_copies_batch_mean() {
        let mut c = ClassCentroids::new(2, 0.0);
        let preds = Matrix::from_rows(&[vec![0.8, 0.2], vec![0.8, 0.2]]);
        c.update(&preds, &[0, 0]).unwrap();
        assert_close(c.get(0)[0], 0.8, 1e-15);
        assert_close(c.get(0)[1], 0.2, 1e-15);
    }

    #[test]
    fn centroid_update_leaves_absent_classes_unchanged() {
        let mut c = ClassCentroids::new(3, 0.5);
        let before = c.get(2).to_vec();
        let preds = Matrix::from_rows(&[vec![0.9, 0.05, 0.05]]);
        c.update(&preds, &[0]).unwrap();
        assert_eq!(c.get(2), &before[..]);
        assert!(!c.observed(2));
        assert!(c.observed(0));
    }

    #[test]
    fn centroid_ema_hand_computed_example() {
        // m = 0.9, prior uniform over 2, batch mean [0.9, 0.1] -> [0.54, 0.46]
        let mut c = ClassCentroids::new(2, 0.9);
        let preds = Matrix::from_rows(&[vec![0.9, 0.1]]);
        c.update(&preds, &[0]).unwrap();
        assert_close(c.get(0)[0], 0.54, 1e-12);
        assert_close(c.get(0)[1], 0.46, 1e-12);
    }

    #[test]
    fn centroid_update_rejects_out_of_range_label() {
        let mut c = ClassCentroids::new(2, 0.9);
        let preds = Matrix::from_rows(&[vec![0.9, 0.1]]);
        assert!(matches!(
            c.update(&preds, &[2]),
            Err(Error::LabelOutOfRange { label: 2, limit: 2 })
        ));
    }

    #[test]
    fn refine_full_suppression_gives_smoothed_one_hot() {
        let q = pv(&[0.4, 0.3, 0.2, 0.1]);
        let eps = 1e-12;
        let r = refine_target(&q, 1, 3, eps).unwrap();
        let denom = 1.0 + 3.0 * eps;
        assert_close(r.as_slice()[1], 1.0 / denom, 1e-15);
        for j in [0usize, 2, 3] {
            assert_close(r.as_slice()[j], eps / denom, 1e-18);
        }
    }

    #[test]
    fn refine_worked_example_pre_smoothing() {
        // K=5, q=[0.5,0.2,0.15,0.1,0.05], y=0, k=1:
        // set entry 0 to 1, zero the largest non-GT entry (index 1),
        // keep the rest, renormalize by 1.3
        let q = pv(&[0.5, 0.2, 0.15, 0.1, 0.05]);
        let r = refine_target(&q, 0, 1, 0.0).unwrap();
        let expected = [1.0 / 1.3, 0.0, 0.15 / 1.3, 0.1 / 1.3, 0.05 / 1.3];
        for (a, b) in r.as_slice().iter().zip(expected) {
            assert_close(*a, b, 1e-9);
        }
    }

    #[test]
    fn refine_is_idempotent_on_one_hot() {
        let q = pv(&[0.0, 1.0, 0.0]);
        let eps = 1e-12;
        let r = refine_target(&q, 1, 0, eps).unwrap();
        let denom = 1.0 + 2.0 * eps;
        assert_close(r.as_slice()[1], 1.0 / denom, 1e-15);
        assert_close(r.as_slice()[0], eps / denom, 1e-18);
    }

    #[test]
    fn refine_breaks_ties_toward_lower_class_index() {
        let q = pv(&[0.4, 0.2, 0.2, 0.2]);
        let r = refine_target(&q, 0, 1, 0.0).unwrap();
        // indices 1, 2, 3 tie at 0.2; index 1 must be the one zeroed
        assert_close(r.as_slice()[1], 0.0, 1e-18);
        assert!(r.as_slice()[2] > 0.0 && r.as_slice()[3] > 0.0);
    }

    #[test]
    fn refine_rejects_out_of_range_class() {
        let q = pv(&[0.5, 0.5]);
        assert!(refine_target(&q, 2, 0, 1e-12).is_err());
    }

    #[test]
    fn sharpen_with_unit_temperature_is_identity() {
        let p = pv(&[0.3, 0.45, 0.25]);
        let s = sharpen(&p, 1.0);
        for (a, b) in s.as_slice().iter().zip(p.as_slice()) {
            assert_close(*a, *b, 1e-12);
        }
    }

    #[test]
    fn sharpen_keeps_uniform_uniform() {
        let p = pv(&[0.25; 4]);
        for tau in [0.25, 0.5, 2.0] {
            let s = sharpen(&p, tau);
            for &v in s.as_slice() {
                assert_close(v, 0.25, 1e-12);
            }
        }
    }

    #[test]
    fn sharpen_direct_computation_example() {
        let p = pv(&[0.8, 0.2]);
        let s = sharpen(&p, 0.5);
        assert_close(s.as_slice()[0], 0.64 / 0.68, 1e-12);
        assert_close(s.as_slice()[1], 0.04 / 0.68, 1e-12);
    }

    #[test]
    fn loss_cmi_is_zero_when_predictions_equal_targets() {
        let centroids = ClassCentroids::from_vectors(
            vec![pv(&[0.7, 0.2, 0.1]), pv(&[0.1, 0.8, 0.1]), pv(&[0.2, 0.2, 0.6])],
            0.9,
        )
        .unwrap();
        let mode = CmiTargets::Refined { top_k: 1, eps_floor: 1e-12 };
        let labels = vec![0, 1, 2];
        let targets = cmi_target_rows(&labels, &centroids, mode).unwrap();
        let tape = Tape::new();
        let probs = tape.leaf(targets);
        let loss = loss_cmi(&tape, probs, &labels, &centroids, mode).unwrap();
        assert_close(loss.item(), 0.0, 1e-12);
    }

    #[test]
    fn loss_cmi_single_sample_direct_summation() {
        // p = [0.9, 0.1], target = smoothed one-hot at 0 with eps = 1e-12
        let centroids =
            ClassCentroids::from_vectors(vec![pv(&[1.0, 0.0]), pv(&[0.0, 1.0])], 0.9).unwrap();
        let eps = 1e-12;
        let tape = Tape::new();
        let probs = tape.leaf(Matrix::row_vector(&[0.9, 0.1]));
        let loss = loss_cmi(
            &tape,
            probs,
            &[0],
            &centroids,
            CmiTargets::Refined { top_k: 0, eps_floor: eps },
        )
        .unwrap();
        let denom = 1.0 + eps;
        let expected = 0.9 * (0.9f64 / (1.0 / denom)).ln() + 0.1 * (0.1f64 / (eps / denom)).ln();
        assert_close(loss.item(), expected, 1e-10);
        assert_close(loss.item(), 2.438, 2e-3);
    }

    #[test]
    fn loss_cmi_raw_matches_direct_summation() {
        let centroids =
            ClassCentroids::from_vectors(vec![pv(&[0.7, 0.3]), pv(&[0.4, 0.6])], 0.9).unwrap();
        let rows = vec![vec![0.8, 0.2], vec![0.6, 0.4], vec![0.3, 0.7]];
        let labels = vec![0, 0, 1];
        let tape = Tape::new();
        let probs = tape.leaf(Matrix::from_rows(&rows));
        let loss = loss_cmi(&tape, probs, &labels, &centroids, CmiTargets::Raw).unwrap();
        let expected: f64 = rows
            .iter()
            .zip(&labels)
            .map(|(r, &y)| kl_slices(r, centroids.get(y)))
            .sum::<f64>()
            / rows.len() as f64;
        assert_close(loss.item(), expected, 1e-14);
    }

    #[test]
    fn loss_sep_is_zero_for_orthogonal_one_hots() {
        let centroids = ClassCentroids::from_vectors(
            vec![pv(&[1.0, 0.0, 0.0]), pv(&[0.0, 1.0, 0.0]), pv(&[0.0, 0.0, 1.0])],
            0.9,
        )
        .unwrap();
        assert_close(loss_sep(&centroids, 1.0).unwrap(), 0.0, 1e-15);
    }

    #[test]
    fn loss_sep_identical_centroids_equals_squared_norm() {
        // all centroids equal with |q|^2 = s and tau = 1 -> loss = s
        let q = pv(&[0.5, 0.5]);
        let s: f64 = q.as_slice().iter().map(|v| v * v).sum();
        let centroids = ClassCentroids::from_vectors(vec![q.clone(), q], 0.9).unwrap();
        assert_close(loss_sep(&centroids, 1.0).unwrap(), s, 1e-12);
    }

    #[test]
    fn loss_sep_three_class_direct_evaluation() {
        let centroids = ClassCentroids::from_vectors(
            vec![pv(&[1.0, 0.0, 0.0]), pv(&[0.0, 1.0, 0.0]), pv(&[0.5, 0.5, 0.0])],
            0.9,
        )
        .unwrap();
        let e_half = 0.5f64.exp();
        let expected = (((1.0 + e_half) / 2.0).ln() * 2.0 + ((e_half + e_half) / 2.0).ln()) / 3.0;
        assert_close(loss_sep(&centroids, 1.0).unwrap(), expected, 1e-12);
    }

    #[test]
    fn loss_sep_requires_two_centroids() {
        let centroids = ClassCentroids::new(3, 0.9);
        assert!(matches!(loss_sep(&centroids, 1.0), Err(Error::TooFewCentroids(0))));
    }

    #[test]
    fn loss_inst_identical_views_is_zero() {
        let tape = Tape::new();
        let p = Matrix::from_rows(&[vec![0.6, 0.4], vec![0.3, 0.7]]);
        let v1 = tape.leaf(p.clone());
        let v2 = tape.leaf(p);
        let loss = loss_inst(&tape, v1, v2, 1.0).unwrap();
        assert_close(loss.item(), 0.0, 1e-14);
    }

    #[test]
    fn loss_inst_single_pair_direct_summation() {
        let tape = Tape::new();
        let v1 = tape.leaf(Matrix::row_vector(&[0.8, 0.2]));
        let v2 = tape.leaf(Matrix::row_vector(&[0.6, 0.4]));
        let loss = loss_inst(&tape, v1, v2, 1.0).unwrap();
        let kl_a = kl_slices(&[0.6, 0.4], &[0.8, 0.2]);
        let kl_b = kl_slices(&[0.8, 0.2], &[0.6, 0.4]);
        assert_close(loss.item(), 0.5 * (kl_a + kl_b), 1e-14);
    }

    #[test]
    fn loss_inst_invariant_under_simultaneous_reindexing() {
        let tape = Tape::new();
        let p1 = Matrix::from_rows(&[vec![0.8, 0.2], vec![0.5, 0.5], vec![0.1, 0.9]]);
        let p2 = Matrix::from_rows(&[vec![0.7, 0.3], vec![0.4, 0.6], vec![0.2, 0.8]]);
        let l = loss_inst(&tape, tape.leaf(p1.clone()), tape.leaf(p2.clone()), 0.5)
            .unwrap()
            .item();
        let perm = [2usize, 0, 1];
        let p1p = Matrix::from_rows(&perm.map(|i| p1.row(i).to_vec()));
        let p2p = Matrix::from_rows(&perm.map(|i| p2.row(i).to_vec()));
        let lp = loss_inst(&tape, tape.leaf(p1p), tape.leaf(p2p), 0.5).unwrap().item();
        assert_close(l, lp, 1e-14);
    }

    #[test]
    fn loss_inst_gradient_only_flows_through_prediction_branch() {
        // d loss / d p1 = -(q2 / p1) / (2B) exactly: targets are constants
        let tape = Tape::new();
        let p1v = Matrix::row_vector(&[0.8, 0.2]);
        let p2v = Matrix::row_vector(&[0.6, 0.4]);
        let p1 = tape.leaf(p1v.clone());
        let p2 = tape.leaf(p2v.clone());
        let loss = loss_inst(&tape, p1, p2, 1.0).unwrap();
        tape.backward(loss);
        let g1 = p1.grad();
        for j in 0..2 {
            let expected = -(p2v.get(0, j) / p1v.get(0, j)) / 2.0;
            assert_close(g1.get(0, j), expected, 1e-12);
        }
    }

    #[test]
    fn loss_ent_uniform_marginal_equals_minus_log_k() {
        let tape = Tape::new();
        let k = 10;
        let p = Matrix::filled(4, k, 1.0 / k as f64);
        let loss = loss_ent(tape.leaf(p.clone()), tape.leaf(p)).unwrap();
        assert_close(loss.item(), -(k as f64).ln(), 1e-12);
    }

    #[test]
    fn loss_ent_one_hot_marginal_is_zero() {
        let tape = Tape::new();
        let p = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]);
        let loss = loss_ent(tape.leaf(p.clone()), tape.leaf(p)).unwrap();
        assert_close(loss.item(), 0.0, 1e-15);
    }

    #[test]
    fn loss_ent_direct_computation_example() {
        let tape = Tape::new();
        let p = Matrix::row_vector(&[0.7, 0.3]);
        let loss = loss_ent(tape.leaf(p.clone()), tape.leaf(p)).unwrap();
        let expected = 0.7 * 0.7f64.ln() + 0.3 * 0.3f64.ln();
        assert_close(loss.item(), expected, 1e-14);
        assert_close(loss.item(), -0.610864, 1e-6);
    }

    #[test]
    fn loss_ce_one_hot_prediction_is_zero_and_uniform_is_log_k() {
        let tape = Tape::new();
        // logits strongly favoring the label
        let logits = tape.leaf(Matrix::from_rows(&[vec![100.0, 0.0, 0.0, 0.0]]));
        let loss = loss_ce(&tape, logits, &[0]).unwrap();
        assert_close(loss.item(), 0.0, 1e-12);

        let logits = tape.leaf(Matrix::zeros(3, 4));
        let loss = loss_ce(&tape, logits, &[1, 2, 3]).unwrap();
        assert_close(loss.item(), 4.0f64.ln(), 1e-12);
    }

    #[test]
    fn loss_ce_rejects_out_of_range_label() {
        let tape = Tape::new();
        let logits = tape.leaf(Matrix::zeros(1, 3));
        assert!(matches!(
            loss_ce(&tape, logits, &[3]),
            Err(Error::LabelOutOfRange { label: 3, limit: 3 })
        ));
    }

    #[test]
    fn loss_con_sup_worked_example() {
        // two identical same-label unit vectors plus one orthogonal
        // different-label vector, tau = 1 -> per-anchor -ln(e / (e + 1))
        let tape = Tape::new();
        let h = tape.leaf(Matrix::from_rows(&[
            vec![1.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
        ]));
        let (loss, skipped) = loss_con_sup(&tape, h, &[0, 0, 1], 1.0).unwrap();
        let e = std::f64::consts::E;
        let expected = -(e / (e + 1.0)).ln();
        assert_close(loss.item(), expected, 1e-12);
        assert_eq!(skipped, 1);
    }

    #[test]
    fn loss_con_sup_all_distinct_labels_skips_every_anchor() {
        let tape = Tape::new();
        let h = tape.leaf(Matrix::identity(3));
        let (loss, skipped) = loss_con_sup(&tape, h, &[0, 1, 2], 0.07).unwrap();
        assert_close(loss.item(), 0.0, 1e-15);
        assert_eq!(skipped, 3);
    }

    #[test]
    fn loss_con_sup_invariant_under_common_rotation() {
        let tape = Tape::new();
        let rows = [vec![1.0, 0.0], vec![0.6, 0.8], vec![0.0, 1.0], vec![-0.8, 0.6]];
        let labels = [0usize, 0, 1, 1];
        let h = tape.leaf(Matrix::from_rows(&rows));
        let (l0, _) = loss_con_sup(&tape, h, &labels, 0.5).unwrap();
        let (c, s) = (0.3f64.cos(), 0.3f64.sin());
        let rotated: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| vec![c * r[0] - s * r[1], s * r[0] + c * r[1]])
            .collect();
        let hr = tape.leaf(Matrix::from_rows(&rotated));
        let (l1, _) = loss_con_sup(&tape, hr, &labels, 0.5).unwrap();
        assert_close(l0.item(), l1.item(), 1e-12);
    }

    #[test]
    fn loss_con_unsup_worked_example() {
        let tape = Tape::new();
        let v1 = tape.leaf(Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]));
        let v2 = tape.leaf(Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]));
        let loss = loss_con_unsup(&tape, v1, v2, 1.0).unwrap();
        let e = std::f64::consts::E;
        let expected = -(e / (e + 2.0)).ln();
        assert_close(loss.item(), expected, 1e-12);
    }

    #[test]
    fn loss_con_unsup_degenerate_batch_is_zero() {
        let tape = Tape::new();
        let v1 = tape.leaf(Matrix::row_vector(&[1.0, 0.0]));
        let v2 = tape.leaf(Matrix::row_vector(&[0.6, 0.8]));
        let loss = loss_con_unsup(&tape, v1, v2, 0.07).unwrap();
        assert_close(loss.item(), 0.0, 1e-12);
    }

    #[test]
    fn combine_losses_weight_algebra() {
        let tape = Tape::new();
        let vals = [0.7, 0.3, 0.2, 1.1, -2.0, 0.9, 0.4];
        let nodes: Vec<_> = vals.iter().map(|&v| tape.scalar(v)).collect();
        let cfg = LossConfig {
            lambda_cmi: 0.0,
            lambda_sep: 0.0,
            lambda_inst: 0.0,
            lambda_ent: 0.0,
            alpha: 1.0,
            beta: 1.0,
            ..LossConfig::default()
        };
        let t = combine_losses(
            nodes[0], nodes[1], nodes[2], nodes[3], nodes[4], nodes[5], nodes[6], &cfg,
        );
        let b = t.breakdown();
        assert_close(b.total, b.ce + b.con_l, 1e-15);
        assert_close(b.cls, 0.0, 1e-15);
    }

    #[test]
    fn combine_losses_recomposes_within_tolerance() {
        let tape = Tape::new();
        let cfg = LossConfig::default();
        let vals = [0.31, 1.7, 0.05, 2.4, -1.9, 0.66, 1.02];
        let nodes: Vec<_> = vals.iter().map(|&v| tape.scalar(v)).collect();
        let t = combine_losses(
            nodes[0], nodes[1], nodes[2], nodes[3], nodes[4], nodes[5], nodes[6], &cfg,
        );
        let b = t.breakdown();
        let cls = cfg.lambda_cmi * b.cmi
            + cfg.lambda_sep * b.sep
            + cfg.lambda_inst * b.inst
            + cfg.lambda_ent * b.ent;
        let total = cfg.alpha * b.ce
            + (1.0 - cfg.alpha) * b.cls
            + cfg.beta * b.con_l
            + (1.0 - cfg.beta) * b.con_u;
        assert_close(b.cls, cls, 1e-12);
        assert_close(b.total, total, 1e-12);
    }

    #[test]
    fn default_config_carries_paper_weights() {
        let cfg = LossConfig::default();
        assert_eq!(cfg.lambda_cmi, 0.1);
        assert_eq!(cfg.lambda_inst, 1.0);
        assert_eq!(cfg.lambda_ent, 2.0);
        assert_eq!(cfg.top_k, 10);
        cfg.validate().unwrap();
    }

    #[test]
    fn losses_are_invariant_under_class_relabeling() {
        // relabel classes by a permutation, permute prediction columns and
        // centroid entries accordingly: every loss value is unchanged
        let perm = [2usize, 0, 1]; // new index of old class j
        let p1 = Matrix::from_rows(&[vec![0.5, 0.3, 0.2], vec![0.1, 0.6, 0.3]]);
        let p2 = Matrix::from_rows(&[vec![0.4, 0.4, 0.2], vec![0.2, 0.5, 0.3]]);
        let labels = [0usize, 1];
        let centroids = ClassCentroids::from_vectors(
            vec![pv(&[0.6, 0.2, 0.2]), pv(&[0.2, 0.7, 0.1]), pv(&[0.1, 0.2, 0.7])],
            0.9,
        )
        .unwrap();

        let permute_cols = |m: &Matrix| {
            let mut out = Matrix::zeros(m.rows(), m.cols());
            for i in 0..m.rows() {
                for j in 0..m.cols() {
                    out.set(i, perm[j], m.get(i, j));
                }
            }
            out
        };
        let perm_centroids = {
            let mut vecs = vec![vec![0.0; 3]; 3];
            for y in 0..3 {
                let src = centroids.get(y);
                for j in 0..3 {
                    vecs[perm[y]][perm[j]] = src[j];
                }
            }
            ClassCentroids::from_vectors(
                vecs.into_iter().map(|v| ProbVector::new(v).unwrap()).collect(),
                0.9,
            )
            .unwrap()
        };
        let perm_labels: Vec<usize> = labels.iter().map(|&y| perm[y]).collect();

        let tape = Tape::new();
        let mode = CmiTargets::Refined { top_k: 1, eps_floor: 1e-12 };
        let orig = (
            loss_cmi(&tape, tape.leaf(p1.clone()), &labels, &centroids, mode)
                .unwrap()
                .item(),
            loss_inst(&tape, tape.leaf(p1.clone()), tape.leaf(p2.clone()), 0.5)
                .unwrap()
                .item(),
            loss_ent(tape.leaf(p1.clone()), tape.leaf(p2.clone())).unwrap().item(),
            loss_sep(&centroids, 0.1).unwrap(),
        );
        let permuted = (
            loss_cmi(&tape, tape.leaf(permute_cols(&p1)), &perm_labels, &perm_centroids, mode)
                .unwrap()
                .item(),
            loss_inst(&tape, tape.leaf(permute_cols(&p1)), tape.leaf(permute_cols(&p2)), 0.5)
                .unwrap()
                .item(),
            loss_ent(tape.leaf(permute_cols(&p1)), tape.leaf(permute_cols(&p2)))
                .unwrap()
                .item(),
            loss_sep(&perm_centroids, 0.1).unwrap(),
        );
        assert_close(orig.0, permuted.0, 1e-12);
        assert_close(orig.1, permuted.1, 1e-12);
        assert_close(orig.2, permuted.2, 1e-12);
        assert_close(orig.3, permuted.3, 1e-12);
    }
}
