//! Finite-difference gradient checking: central differences against the
//! tape's analytic gradients, for every exported operator and every loss
//! term through the full model pipeline.
//!
//! Loss checks differentiate with respect to model parameters on small
//! random instances. Stop-gradient targets (sharpened cross-view
//! predictions, refined centroids) are frozen at the base point so the
//! finite difference measures the same partial derivative the detached
//! losses optimize.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{concat_rows, Tape, Var};
use crate::losses::{
    self, batch_centroid_nodes, combine_losses, ClassCentroids, CmiTargets, LossConfig,
};
use crate::matrix::Matrix;
use crate::model::{init, EncoderConfig, ModelParams};

/// Result of one named check over all its instances.
#[derive(Clone, Debug)]
pub struct CheckReport {
    pub name: String,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub instances: usize,
    pub coords: usize,
    pub passed: bool,
}

type ValueFn = Box<dyn Fn(&[f64]) -> f64>;
type GradFn = Box<dyn Fn(&[f64]) -> Vec<f64>>;

struct Instance {
    point: Vec<f64>,
    value: ValueFn,
    grad: GradFn,
}

struct Check {
    name: String,
    instances: Vec<Instance>,
}

/// Central-difference harness with the suite's tolerances:
/// h = 1e-5, relative tolerance 1e-4, absolute fallback 1e-7 near zero.
pub struct Harness {
    pub h: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    checks: Vec<Check>,
}

impl Default for Harness {
    fn default() -> Self {
        Harness::new()
    }
}

impl Harness {
    pub fn new() -> Self {
        Harness { h: 1e-5, rel_tol: 1e-4, abs_tol: 1e-7, checks: Vec::new() }
    }

    /// Register one instance under `name`; instances sharing a name are
    /// aggregated into a single report.
    pub fn add_instance(
        &mut self,
        name: &str,
        point: Vec<f64>,
        value: impl Fn(&[f64]) -> f64 + 'static,
        grad: impl Fn(&[f64]) -> Vec<f64> + 'static,
    ) {
        let instance = Instance { point, value: Box::new(value), grad: Box::new(grad) };
        if let Some(check) = self.checks.iter_mut().find(|c| c.name == name) {
            check.instances.push(instance);
        } else {
            self.checks.push(Check { name: name.to_string(), instances: vec![instance] });
        }
    }

    pub fn run(&self) -> Vec<CheckReport> {
        self.checks.iter().map(|c| self.run_check(c)).collect()
    }

    fn run_check(&self, check: &Check) -> CheckReport {
        let mut max_rel: f64 = 0.0;
        let mut max_abs: f64 = 0.0;
        let mut coords = 0;
        let mut passed = true;
        for inst in &check.instances {
            let analytic = (inst.grad)(&inst.point);
            assert_eq!(analytic.len(), inst.point.len(), "gradient length mismatch");
            let mut point = inst.point.clone();
            for i in 0..point.len() {
                coords += 1;
                let orig = point[i];
                point[i] = orig + self.h;
                let plus = (inst.value)(&point);
                point[i] = orig - self.h;
                let minus = (inst.value)(&point);
                point[i] = orig;
                let fd = (plus - minus) / (2.0 * self.h);
                let diff = (analytic[i] - fd).abs();
                max_abs = max_abs.max(diff);
                if diff <= self.abs_tol {
                    continue;
                }
                let rel = diff / analytic[i].abs().max(fd.abs());
                max_rel = max_rel.max(rel);
                if rel >= self.rel_tol {
                    passed = false;
                }
            }
        }
        CheckReport {
            name: check.name.clone(),
            max_rel_err: max_rel,
            max_abs_err: max_abs,
            instances: check.instances.len(),
            coords,
            passed,
        }
    }
}

// ── Operator-level checks ────────────────────────────────────────────

#[derive(Clone, Copy)]
enum Sample {
    /// uniform in [-2, 2]
    Signed,
    /// uniform in [0.2, 3.0], for log domains
    Positive,
    /// magnitude in [0.1, 2.0] with random sign; keeps ReLU kinks and row
    /// norms away from the finite-difference step
    AwayFromZero,
}

fn sample(rng: &mut ChaCha8Rng, kind: Sample) -> f64 {
    match kind {
        Sample::Signed => rng.random_range(-2.0..2.0),
        Sample::Positive => rng.random_range(0.2..3.0),
        Sample::AwayFromZero => {
            let mag = rng.random_range(0.1..2.0);
            if rng.random::<bool>() {
                mag
            } else {
                -mag
            }
        }
    }
}

fn leaves_from_flat<'t>(tape: &'t Tape, shapes: &[(usize, usize)], flat: &[f64]) -> Vec<Var<'t>> {
    let mut vars = Vec::with_capacity(shapes.len());
    let mut off = 0;
    for &(r, c) in shapes {
        vars.push(tape.leaf(Matrix::new(r, c, flat[off..off + r * c].to_vec())));
        off += r * c;
    }
    vars
}

/// Register a 10-instance operator check: the inputs are the differentiated
/// point; the scalar is a random-weighted sum of the operator output.
fn add_op_check<F>(
    harness: &mut Harness,
    rng: &mut ChaCha8Rng,
    name: &str,
    shapes: &[(usize, usize)],
    kind: Sample,
    build: F,
) where
    F: for<'t> Fn(&[Var<'t>]) -> Var<'t> + Copy + 'static,
{
    let shapes: Vec<(usize, usize)> = shapes.to_vec();
    for _ in 0..10 {
        let point: Vec<f64> = shapes
            .iter()
            .flat_map(|&(r, c)| (0..r * c).map(|_| sample(rng, kind)).collect::<Vec<_>>())
            .collect();
        let weights = {
            let tape = Tape::new();
            let out = build(&leaves_from_flat(&tape, &shapes, &point));
            let (r, c) = out.shape();
            Matrix::new(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect())
        };
        let shapes_v = shapes.clone();
        let w_v = weights.clone();
        let value = move |flat: &[f64]| {
            let tape = Tape::new();
            let out = build(&leaves_from_flat(&tape, &shapes_v, flat));
            out.mul(tape.leaf(w_v.clone())).sum_all().item()
        };
        let shapes_g = shapes.clone();
        let w_g = weights;
        let grad = move |flat: &[f64]| {
            let tape = Tape::new();
            let vars = leaves_from_flat(&tape, &shapes_g, flat);
            let out = build(&vars);
            let scalar = out.mul(tape.leaf(w_g.clone())).sum_all();
            tape.backward(scalar);
            vars.iter().flat_map(|v| v.grad().data().to_vec()).collect()
        };
        harness.add_instance(name, point, value, grad);
    }
}

// ── Loss checks through the model pipeline ───────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum LossKind {
    Ce,
    CmiRefined,
    CmiRaw,
    Sep,
    Inst,
    Ent,
    ConSup,
    ConUnsup,
    Total,
}

impl LossKind {
    fn name(self) -> &'static str {
        match self {
            LossKind::Ce => "loss_ce",
            LossKind::CmiRefined => "loss_cmi_refined",
            LossKind::CmiRaw => "loss_cmi_raw",
            LossKind::Sep => "loss_sep",
            LossKind::Inst => "loss_inst",
            LossKind::Ent => "loss_ent",
            LossKind::ConSup => "loss_con_sup",
            LossKind::ConUnsup => "loss_con_unsup",
            LossKind::Total => "loss_total",
        }
    }
}

struct LossFixture {
    template: ModelParams,
    view1: Matrix,
    view2: Matrix,
    labels: Vec<usize>,
    centroids: ClassCentroids,
    inst_q1: Matrix,
    inst_q2: Matrix,
    cfg: LossConfig,
    kind: LossKind,
}

impl LossFixture {
    fn random(rng: &mut ChaCha8Rng, kind: LossKind) -> Self {
        let k = rng.random_range(2..=5usize);
        let b = rng.random_range(3..=8usize);
        let encoder = EncoderConfig {
            input_dim: 3,
            hidden_dims: vec![5],
            feature_dim: 4,
            proj_dim: 3,
            num_classes: k,
            seed: rng.random::<u64>(),
            cosine_head: false,
            logit_tau: 0.1,
        };
        let template = init(&encoder).unwrap();
        let draw = |rng: &mut ChaCha8Rng, n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()
        };
        let view1 = Matrix::new(b, 3, draw(rng, b * 3));
        let view2 = Matrix::new(b, 3, draw(rng, b * 3));
        let mut labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..k)).collect();
        // guarantee at least one positive pair and two distinct classes
        labels[1] = labels[0];
        labels[2] = (labels[0] + 1) % k;
        let mut centroids = ClassCentroids::new(k, 0.9);
        let soft: Vec<Vec<f64>> = (0..k)
            .map(|_| {
                let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
                let sum: f64 = raw.iter().sum();
                raw.into_iter().map(|v| v / sum).collect()
            })
            .collect();
        let flat_labels: Vec<usize> = (0..k).collect();
        centroids.set_exact(&Matrix::from_rows(&soft), &flat_labels).unwrap();

        let mut fixture = LossFixture {
            template,
            view1,
            view2,
            labels,
            centroids,
            inst_q1: Matrix::zeros(1, 1),
            inst_q2: Matrix::zeros(1, 1),
            cfg: LossConfig::default(),
            kind,
        };
        // freeze sharpened targets at the base point
        let (p1, p2) = fixture.forward_probs(&fixture.template.flatten());
        fixture.inst_q1 = losses::sharpen_matrix(&p1, fixture.cfg.tau_sharp);
        fixture.inst_q2 = losses::sharpen_matrix(&p2, fixture.cfg.tau_sharp);
        fixture
    }

    fn forward_probs(&self, flat: &[f64]) -> (Matrix, Matrix) {
        let mut params = self.template.clone();
        params.set_from_flat(flat);
        let tape = Tape::new();
        let vars = params.vars(&tape);
        let p = |view: &Matrix| {
            let z = vars.embed(tape.leaf(view.clone())).unwrap();
            vars.classify(z).unwrap().softmax_rows().value()
        };
        (p(&self.view1), p(&self.view2))
    }

    fn build<'t>(&self, tape: &'t Tape, flat: &[f64]) -> (Var<'t>, Vec<Var<'t>>) {
        let mut params = self.template.clone();
        params.set_from_flat(flat);
        let vars = params.vars(tape);
        let param_vars = vars.param_vars();

        let z1 = vars.embed(tape.leaf(self.view1.clone())).unwrap();
        let z2 = vars.embed(tape.leaf(self.view2.clone())).unwrap();
        let logits1 = vars.classify(z1).unwrap();
        let logits2 = vars.classify(z2).unwrap();
        let p1 = logits1.softmax_rows();
        let p2 = logits2.softmax_rows();
        let doubled: Vec<usize> =
            self.labels.iter().chain(self.labels.iter()).copied().collect();
        let k = self.centroids.num_classes();

        let ce = || losses::loss_ce(tape, concat_rows(&[logits1, logits2]), &doubled).unwrap();
        let cmi = |mode: CmiTargets| {
            losses::loss_cmi(tape, concat_rows(&[p1, p2]), &doubled, &self.centroids, mode)
                .unwrap()
        };
        let sep = || match batch_centroid_nodes(tape, p1, &self.labels, &self.centroids).unwrap()
        {
            Some((q, _)) => losses::loss_sep_node(tape, q, self.cfg.tau_sep).unwrap(),
            None => tape.scalar(0.0),
        };
        let inst = || {
            losses::loss_inst_with_targets(tape, p1, p2, &self.inst_q1, &self.inst_q2).unwrap()
        };
        let ent = || losses::loss_ent(p1, p2).unwrap();
        let con_sup = || {
            let h1 = vars.project(z1).unwrap();
            let h2 = vars.project(z2).unwrap();
            losses::loss_con_sup(tape, concat_rows(&[h1, h2]), &doubled, self.cfg.tau_c)
                .unwrap()
                .0
        };
        let con_unsup = || {
            let h1 = vars.project(z1).unwrap();
            let h2 = vars.project(z2).unwrap();
            losses::loss_con_unsup(tape, h1, h2, self.cfg.tau_c).unwrap()
        };

        let refined = CmiTargets::Refined {
            top_k: self.cfg.top_k.min(k - 1),
            eps_floor: self.cfg.eps_floor,
        };
        let loss = match self.kind {
            LossKind::Ce => ce(),
            LossKind::CmiRefined => cmi(refined),
            LossKind::CmiRaw => cmi(CmiTargets::Raw),
            LossKind::Sep => sep(),
            LossKind::Inst => inst(),
            LossKind::Ent => ent(),
            LossKind::ConSup => con_sup(),
            LossKind::ConUnsup => con_unsup(),
            LossKind::Total => {
                combine_losses(
                    ce(),
                    cmi(refined),
                    sep(),
                    inst(),
                    ent(),
                    con_sup(),
                    con_unsup(),
                    &self.cfg,
                )
                .total
            }
        };
        (loss, param_vars)
    }
}

fn add_loss_check(harness: &mut Harness, rng: &mut ChaCha8Rng, kind: LossKind, instances: usize) {
    for _ in 0..instances {
        let fixture = std::rc::Rc::new(LossFixture::random(rng, kind));
        let point = fixture.template.flatten();
        let fv = fixture.clone();
        let value = move |flat: &[f64]| {
            let tape = Tape::new();
            fv.build(&tape, flat).0.item()
        };
        let fg = fixture;
        let grad = move |flat: &[f64]| {
            let tape = Tape::new();
            let (loss, params) = fg.build(&tape, flat);
            tape.backward(loss);
            params.iter().flat_map(|p| p.grad().data().to_vec()).collect()
        };
        harness.add_instance(kind.name(), point, value, grad);
    }
}

/// The full finite-difference battery: every exported operator at 10 random
/// points per shape class, then every loss term differentiated through the
/// model pipeline on 10 random small instances each (K <= 5, |B| <= 8).
pub fn standard_suite(seed: u64) -> Harness {
    let mut harness = Harness::new();
    let rng = &mut ChaCha8Rng::seed_from_u64(seed);

    add_op_check(&mut harness, rng, "matmul", &[(3, 4), (4, 2)], Sample::Signed, |v| {
        v[0].matmul(v[1])
    });
    add_op_check(&mut harness, rng, "transpose", &[(3, 4)], Sample::Signed, |v| v[0].t());
    add_op_check(&mut harness, rng, "add", &[(3, 4), (3, 4)], Sample::Signed, |v| v[0].add(v[1]));
    add_op_check(&mut harness, rng, "sub", &[(3, 4), (3, 4)], Sample::Signed, |v| v[0].sub(v[1]));
    add_op_check(&mut harness, rng, "mul", &[(3, 4), (3, 4)], Sample::Signed, |v| v[0].mul(v[1]));
    add_op_check(&mut harness, rng, "scale", &[(3, 4)], Sample::Signed, |v| v[0].scale(-1.37));
    add_op_check(&mut harness, rng, "add_row", &[(4, 3), (1, 3)], Sample::Signed, |v| {
        v[0].add_row(v[1])
    });
    add_op_check(&mut harness, rng, "softmax_rows", &[(4, 5)], Sample::Signed, |v| {
        v[0].softmax_rows()
    });
    add_op_check(&mut harness, rng, "log", &[(3, 4)], Sample::Positive, |v| v[0].log());
    add_op_check(&mut harness, rng, "exp", &[(3, 4)], Sample::Signed, |v| v[0].exp());
    add_op_check(&mut harness, rng, "relu", &[(3, 4)], Sample::AwayFromZero, |v| v[0].relu());
    add_op_check(&mut harness, rng, "l2norm_rows", &[(4, 3)], Sample::AwayFromZero, |v| {
        v[0].l2norm_rows()
    });
    add_op_check(&mut harness, rng, "row_sum", &[(3, 4)], Sample::Signed, |v| v[0].row_sum());
    add_op_check(&mut harness, rng, "row_mean", &[(3, 4)], Sample::Signed, |v| v[0].row_mean());
    add_op_check(&mut harness, rng, "col_mean", &[(3, 4)], Sample::Signed, |v| v[0].col_mean());
    add_op_check(&mut harness, rng, "sum_all", &[(3, 4)], Sample::Signed, |v| v[0].sum_all());
    add_op_check(&mut harness, rng, "mean_all", &[(3, 4)], Sample::Signed, |v| v[0].mean_all());
    add_op_check(&mut harness, rng, "concat_rows", &[(2, 3), (4, 3)], Sample::Signed, |v| {
        concat_rows(&[v[0], v[1]])
    });
    add_op_check(&mut harness, rng, "select_rows", &[(5, 3)], Sample::Signed, |v| {
        v[0].select_rows(&[0, 2, 2, 4])
    });
    add_op_check(
        &mut harness,
        rng,
        "log_softmax_composite",
        &[(2, 3), (3, 4)],
        Sample::Signed,
        |v| v[0].matmul(v[1]).softmax_rows().log(),
    );

    for kind in [
        LossKind::Ce,
        LossKind::CmiRefined,
        LossKind::CmiRaw,
        LossKind::Sep,
        LossKind::Inst,
        LossKind::Ent,
        LossKind::ConSup,
        LossKind::ConUnsup,
        LossKind::Total,
    ] {
        add_loss_check(&mut harness, rng, kind, 10);
    }
    harness
}
