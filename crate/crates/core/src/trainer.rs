//! Training loop: two-view forward through encoder and both heads, composite
//! loss, single backward pass, SGD-with-momentum update, centroid
//! maintenance, and JSONL metrics emission.
//!
//! One run is one logical thread over its `RunState`; runs with independent
//! state may execute concurrently.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::autodiff::{concat_rows, Tape};
use crate::data::{make_batches, AugmentConfig, Batch, GcdDataset};
use crate::error::{Error, Result};
use crate::eval::{clustering_accuracy, EvalReport};
use crate::losses::{
    batch_centroid_nodes, combine_losses, loss_ce, loss_cmi, loss_con_sup, loss_con_unsup,
    loss_ent, loss_inst, loss_sep_node, ClassCentroids, CmiTargets, LossBreakdown, LossConfig,
};
use crate::matrix::Matrix;
use crate::model::{self, EncoderConfig, ModelParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    Constant,
    Cosine,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub lr_schedule: LrSchedule,
    pub seed: u64,
    pub eval_every: usize,
    /// Recompute exact class centroids over all labeled data each epoch
    /// instead of per-batch EMA updates.
    pub exact_centroids: bool,
    pub loss: LossConfig,
    pub encoder: EncoderConfig,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 128,
            learning_rate: 0.1,
            momentum: 0.9,
            lr_schedule: LrSchedule::Cosine,
            seed: 0,
            eval_every: 10,
            exact_centroids: false,
            loss: LossConfig::default(),
            encoder: EncoderConfig::default(),
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, dataset: &GcdDataset) -> Result<()> {
        self.loss.validate()?;
        self.augment.validate()?;
        self.encoder.validate()?;
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch_size must be at least 2, got {}",
                self.batch_size
            )));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be at least 1".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::Config(format!(
                "learning_rate must be nonnegative, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.encoder.input_dim != dataset.input_dim() {
            return Err(Error::Config(format!(
                "encoder input_dim {} does not match dataset dim {}",
                self.encoder.input_dim,
                dataset.input_dim()
            )));
        }
        if self.encoder.num_classes != dataset.num_classes() {
            return Err(Error::Config(format!(
                "encoder num_classes {} does not match dataset classes {}",
                self.encoder.num_classes,
                dataset.num_classes()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct DiagCounters {
    pub empty_labeled_batches: u64,
    pub skipped_anchors: u64,
}

/// Mutable training state: parameters, momentum buffers, centroids, counters.
pub struct RunState {
    pub params: ModelParams,
    velocity: Vec<Matrix>,
    pub centroids: ClassCentroids,
    pub step: usize,
    pub epoch: usize,
    pub diag: DiagCounters,
}

impl RunState {
    pub fn new(config: &TrainConfig) -> Result<Self> {
        let params = model::init(&config.encoder)?;
        let velocity = params
            .named_tensors()
            .iter()
            .map(|(_, m)| Matrix::zeros(m.rows(), m.cols()))
            .collect();
        let centroids =
            ClassCentroids::new(config.encoder.num_classes, config.loss.centroid_momentum);
        Ok(RunState { params, velocity, centroids, step: 0, epoch: 1, diag: DiagCounters::default() })
    }
}

/// Per-step metrics line.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub ce: f64,
    pub cmi: f64,
    pub sep: f64,
    pub inst: f64,
    pub ent: f64,
    pub con_l: f64,
    pub con_u: f64,
    pub cls: f64,
    pub total: f64,
    pub lr: f64,
}

/// Per-evaluation metrics line.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EvalRecord {
    pub epoch: usize,
    pub acc_all: f64,
    pub acc_old: f64,
    pub acc_new: f64,
}

pub struct TrainOutput {
    pub params: ModelParams,
    pub evals: Vec<EvalRecord>,
    pub diag: DiagCounters,
    pub steps: usize,
}

fn schedule_lr(config: &TrainConfig, epoch: usize) -> f64 {
    match config.lr_schedule {
        LrSchedule::Constant => config.learning_rate,
        LrSchedule::Cosine => {
            let t = (epoch.saturating_sub(1)) as f64 / config.epochs.max(1) as f64;
            config.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
        }
    }
}

fn check_finite(b: &LossBreakdown, step: usize) -> Result<()> {
    let fields = [
        ("ce", b.ce),
        ("cmi", b.cmi),
        ("sep", b.sep),
        ("inst", b.inst),
        ("ent", b.ent),
        ("con_l", b.con_l),
        ("con_u", b.con_u),
        ("cls", b.cls),
        ("total", b.total),
    ];
    for (component, value) in fields {
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss { component, value, step });
        }
    }
    Ok(())
}

/// One optimization step: forward both views, composite loss, backward, SGD
/// update v <- mu v - lr g, theta <- theta + v, then EMA centroid update
/// from the detached view-1 labeled predictions.
pub fn train_step(
    state: &mut RunState,
    batch: &Batch,
    config: &TrainConfig,
) -> Result<LossBreakdown> {
    let lr = schedule_lr(config, state.epoch);
    let k = config.encoder.num_classes;
    let tape = Tape::new();
    let vars = state.params.vars(&tape);

    let x1 = tape.leaf(batch.view1.clone());
    let x2 = tape.leaf(batch.view2.clone());
    let z1 = vars.embed(x1)?;
    let z2 = vars.embed(x2)?;
    let h1 = vars.project(z1)?;
    let h2 = vars.project(z2)?;
    let logits1 = vars.classify(z1)?;
    let logits2 = vars.classify(z2)?;
    let p1 = logits1.softmax_rows();
    let p2 = logits2.softmax_rows();

    let labeled_idx: Vec<usize> =
        (0..batch.ids.len()).filter(|&i| batch.is_labeled[i]).collect();
    let labels: Vec<usize> = labeled_idx
        .iter()
        .map(|&i| batch.labels[i].expect("labeled row must carry a label"))
        .collect();

    let (ce, cmi, sep, con_l) = if labels.is_empty() {
        state.diag.empty_labeled_batches += 1;
        (tape.scalar(0.0), tape.scalar(0.0), tape.scalar(0.0), tape.scalar(0.0))
    } else {
        let doubled: Vec<usize> = labels.iter().chain(labels.iter()).copied().collect();
        let lab_logits = concat_rows(&[
            logits1.select_rows(&labeled_idx),
            logits2.select_rows(&labeled_idx),
        ]);
        let ce = loss_ce(&tape, lab_logits, &doubled)?;
        let lab_probs =
            concat_rows(&[p1.select_rows(&labeled_idx), p2.select_rows(&labeled_idx)]);
        let mode = CmiTargets::Refined {
            top_k: config.loss.top_k.min(k - 1),
            eps_floor: config.loss.eps_floor,
        };
        let cmi = loss_cmi(&tape, lab_probs, &doubled, &state.centroids, mode)?;
        let p1_lab = p1.select_rows(&labeled_idx);
        let sep = match batch_centroid_nodes(&tape, p1_lab, &labels, &state.centroids)? {
            Some((q, _)) => loss_sep_node(&tape, q, config.loss.tau_sep)?,
            None => tape.scalar(0.0),
        };
        let h_pool =
            concat_rows(&[h1.select_rows(&labeled_idx), h2.select_rows(&labeled_idx)]);
        let (con_l, skipped) = loss_con_sup(&tape, h_pool, &doubled, config.loss.tau_c)?;
        state.diag.skipped_anchors += skipped as u64;
        (ce, cmi, sep, con_l)
    };
    let inst = loss_inst(&tape, p1, p2, config.loss.tau_sharp)?;
    let ent = loss_ent(p1, p2)?;
    let con_u = loss_con_unsup(&tape, h1, h2, config.loss.tau_c)?;

    let terms = combine_losses(ce, cmi, sep, inst, ent, con_l, con_u, &config.loss);
    let breakdown = terms.breakdown();
    check_finite(&breakdown, state.step)?;
    tape.backward(terms.total);

    let grads: Vec<Matrix> = vars.param_vars().iter().map(|v| v.grad()).collect();
    let momentum = config.momentum;
    let velocity = &mut state.velocity;
    let mut gi = 0;
    state.params.for_each_tensor_mut(|theta| {
        let g = &grads[gi];
        let v = &mut velocity[gi];
        for (vv, gv) in v.data_mut().iter_mut().zip(g.data()) {
            *vv = momentum * *vv - lr * gv;
        }
        theta.add_assign(v);
        gi += 1;
    });

    if !labels.is_empty() && !config.exact_centroids {
        let p1v = p1.value();
        let rows: Vec<Vec<f64>> = labeled_idx.iter().map(|&i| p1v.row(i).to_vec()).collect();
        state.centroids.update(&Matrix::from_rows(&rows), &labels)?;
    }
    state.step += 1;
    Ok(breakdown)
}

fn recompute_exact_centroids(state: &mut RunState, dataset: &GcdDataset) -> Result<()> {
    let tv = dataset.train_view();
    let labeled = tv.labeled_indices();
    if labeled.is_empty() {
        return Ok(());
    }
    let rows: Vec<Vec<f64>> = labeled.iter().map(|&i| tv.features().row(i).to_vec()).collect();
    let labels: Vec<usize> =
        labeled.iter().map(|&i| tv.label(i).expect("labeled sample")).collect();
    let preds = model::predict_probs(&state.params, &Matrix::from_rows(&rows))?;
    state.centroids.set_exact(&preds, &labels)
}

/// Hungarian-matched accuracies over the unlabeled pool.
pub fn evaluate_model(params: &ModelParams, dataset: &GcdDataset) -> Result<EvalReport> {
    let ev = dataset.eval_view();
    let unlabeled = ev.unlabeled_indices();
    if unlabeled.is_empty() {
        return Err(Error::EmptyBatch("evaluate_model"));
    }
    let rows: Vec<Vec<f64>> = unlabeled.iter().map(|&i| ev.features().row(i).to_vec()).collect();
    let preds = model::predict_clusters(params, &Matrix::from_rows(&rows))?;
    let truth: Vec<usize> =
        unlabeled.iter().map(|&i| ev.label(i).expect("eval view exposes labels")).collect();
    let old_classes: Vec<usize> = (0..dataset.k_old()).collect();
    clustering_accuracy(&preds, &truth, dataset.num_classes(), &old_classes)
}

/// Full training run. Writes one JSONL step line per optimization step and
/// one evaluation line every `eval_every` epochs (final epoch always;
/// `epochs = 0` evaluates the initialized parameters once).
pub fn train(
    dataset: &GcdDataset,
    config: &TrainConfig,
    metrics: &mut dyn Write,
) -> Result<TrainOutput> {
    config.validate(dataset)?;
    let mut state = RunState::new(config)?;
    let tv = dataset.train_view();
    let mut evals = Vec::new();

    let mut run_eval = |state: &RunState, epoch: usize, metrics: &mut dyn Write| -> Result<EvalRecord> {
        let report = evaluate_model(&state.params, dataset)?;
        let record = EvalRecord {
            epoch,
            acc_all: report.acc_all,
            acc_old: report.acc_old,
            acc_new: report.acc_new,
        };
        writeln!(metrics, "{}", serde_json::to_string(&record)?)?;
        Ok(record)
    };

    if config.epochs == 0 {
        evals.push(run_eval(&state, 0, metrics)?);
        return Ok(TrainOutput { params: state.params, evals, diag: state.diag, steps: 0 });
    }

    for epoch in 1..=config.epochs {
        state.epoch = epoch;
        if config.exact_centroids {
            recompute_exact_centroids(&mut state, dataset)?;
        }
        let batches = make_batches(&tv, config.batch_size, &config.augment, config.seed, epoch - 1)?;
        for batch in &batches {
            let step = state.step;
            let b = train_step(&mut state, batch, config)?;
            let record = StepRecord {
                step,
                epoch,
                ce: b.ce,
                cmi: b.cmi,
                sep: b.sep,
                inst: b.inst,
                ent: b.ent,
                con_l: b.con_l,
                con_u: b.con_u,
                cls: b.cls,
                total: b.total,
                lr: schedule_lr(config, epoch),
            };
            writeln!(metrics, "{}", serde_json::to_string(&record)?)?;
        }
        if epoch % config.eval_every == 0 || epoch == config.epochs {
            evals.push(run_eval(&state, epoch, metrics)?);
        }
    }
    Ok(TrainOutput { params: state.params, evals, diag: state.diag, steps: state.step })
}
