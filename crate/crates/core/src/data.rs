//! Synthetic GCD benchmark: Gaussian-mixture generation under the standard
//! split protocol (half of each old class labeled, unlabeled pool mixing old
//! and new classes), two-view vector augmentation, epoch batching, and CSV
//! persistence.
//!
//! Ground-truth labels of unlabeled samples are stored but firewalled: a
//! train-role [`DatasetView`] masks them and only an eval-role view can read
//! them.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Partially-labeled dataset with an old/new class partition. Classes
/// `0..k_old` are old (appear in the labeled set); classes `k_old..k_old+k_new`
/// are new (unlabeled pool only).
#[derive(Clone, Debug)]
pub struct GcdDataset {
    features: Matrix,
    labels: Vec<usize>,
    is_labeled: Vec<bool>,
    k_old: usize,
    k_new: usize,
    seed: u64,
    generator: String,
}

/// Access role: train-role views mask hidden ground truth.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ViewRole {
    Train,
    Eval,
}

/// Role-gated view over a dataset.
#[derive(Clone, Copy)]
pub struct DatasetView<'a> {
    ds: &'a GcdDataset,
    role: ViewRole,
}

impl GcdDataset {
    /// Assemble and validate a dataset. Labeled samples must carry old-class
    /// labels; every label must be below `k_old + k_new`.
    pub fn from_parts(
        features: Matrix,
        labels: Vec<usize>,
        is_labeled: Vec<bool>,
        k_old: usize,
        k_new: usize,
        seed: u64,
        generator: String,
    ) -> Result<Self> {
        let n = features.rows();
        if labels.len() != n || is_labeled.len() != n {
            return Err(Error::LengthMismatch { left: labels.len(), right: n });
        }
        if k_old == 0 {
            return Err(Error::Config("k_old must be at least 1".into()));
        }
        let k = k_old + k_new;
        for (i, (&y, &lab)) in labels.iter().zip(&is_labeled).enumerate() {
            if y >= k {
                return Err(Error::Format {
                    row: i,
                    message: format!("label {y} out of range for {k} classes"),
                });
            }
            if lab && y >= k_old {
                return Err(Error::Format {
                    row: i,
                    message: format!("labeled sample carries new-class label {y} >= k_old {k_old}"),
                });
            }
        }
        Ok(GcdDataset { features, labels, is_labeled, k_old, k_new, seed, generator })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn k_old(&self) -> usize {
        self.k_old
    }

    pub fn k_new(&self) -> usize {
        self.k_new
    }

    pub fn num_classes(&self) -> usize {
        self.k_old + self.k_new
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn train_view(&self) -> DatasetView<'_> {
        DatasetView { ds: self, role: ViewRole::Train }
    }

    pub fn eval_view(&self) -> DatasetView<'_> {
        DatasetView { ds: self, role: ViewRole::Eval }
    }

    /// Copy with the hidden (unlabeled) ground-truth labels replaced.
    /// Labeled samples keep their labels. Used to demonstrate the firewall:
    /// training trajectories must not depend on hidden labels.
    pub fn with_poisoned_hidden_labels(&self, poison_seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(poison_seed);
        let k = self.num_classes();
        let mut labels = self.labels.clone();
        for (i, lab) in self.is_labeled.iter().enumerate() {
            if !lab {
                labels[i] = rng.random_range(0..k);
            }
        }
        GcdDataset { labels, ..self.clone() }
    }
}

impl<'a> DatasetView<'a> {
    pub fn role(&self) -> ViewRole {
        self.role
    }

    pub fn len(&self) -> usize {
        self.ds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ds.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.ds.input_dim()
    }

    pub fn k_old(&self) -> usize {
        self.ds.k_old
    }

    pub fn k_new(&self) -> usize {
        self.ds.k_new
    }

    pub fn num_classes(&self) -> usize {
        self.ds.num_classes()
    }

    pub fn features(&self) -> &Matrix {
        &self.ds.features
    }

    pub fn is_labeled(&self, i: usize) -> bool {
        self.ds.is_labeled[i]
    }

    /// Ground-truth label, gated by role: a train view yields labels only
    /// for labeled samples.
    pub fn label(&self, i: usize) -> Option<usize> {
        match self.role {
            ViewRole::Train => self.ds.is_labeled[i].then(|| self.ds.labels[i]),
            ViewRole::Eval => Some(self.ds.labels[i]),
        }
    }

    pub fn labeled_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.ds.is_labeled[i]).collect()
    }

    pub fn unlabeled_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.ds.is_labeled[i]).collect()
    }
}

/// Vector-space two-view augmentation: additive Gaussian noise then random
/// coordinate masking.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub noise_sigma: f64,
    pub mask_prob: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig { noise_sigma: 0.3, mask_prob: 0.1, seed: 0 }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return Err(Error::Config(format!(
                "noise_sigma must be nonnegative, got {}",
                self.noise_sigma
            )));
        }
        if !(0.0..1.0).contains(&self.mask_prob) {
            return Err(Error::Config(format!(
                "mask_prob must be in [0, 1), got {}",
                self.mask_prob
            )));
        }
        Ok(())
    }
}

/// Mini-batch carrying two augmented views of the same underlying rows.
/// `labels` are role-masked: `None` for samples whose ground truth is hidden.
#[derive(Clone, Debug)]
pub struct Batch {
    pub view1: Matrix,
    pub view2: Matrix,
    pub labels: Vec<Option<usize>>,
    pub is_labeled: Vec<bool>,
    pub ids: Vec<usize>,
}

/// Gaussian-mixture GCD benchmark: class means drawn uniformly on a sphere
/// of radius `sep * sqrt(d_in)`, unit-variance isotropic samples, exactly
/// ceil(per_class / 2) labeled samples per old class.
pub fn generate_gaussian_gcd(
    k_old: usize,
    k_new: usize,
    per_class: usize,
    d_in: usize,
    sep: f64,
    seed: u64,
) -> Result<GcdDataset> {
    if k_old < 1 {
        return Err(Error::Config("k_old must be at least 1".into()));
    }
    if per_class < 4 {
        return Err(Error::Config(format!("per_class must be at least 4, got {per_class}")));
    }
    if d_in == 0 {
        return Err(Error::Config("d_in must be positive".into()));
    }
    if !sep.is_finite() || sep < 0.0 {
        return Err(Error::Config(format!("sep must be nonnegative, got {sep}")));
    }
    let k = k_old + k_new;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = StandardNormal;
    let radius = sep * (d_in as f64).sqrt();
    let means: Vec<Vec<f64>> = (0..k)
        .map(|_| {
            let v: Vec<f64> = (0..d_in).map(|_| normal.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            v.into_iter().map(|x| x / norm * radius).collect()
        })
        .collect();

    let n = k * per_class;
    let labeled_per_class = per_class.div_ceil(2);
    let mut data = Vec::with_capacity(n * d_in);
    let mut labels = Vec::with_capacity(n);
    let mut is_labeled = Vec::with_capacity(n);
    for (c, mean) in means.iter().enumerate() {
        for s in 0..per_class {
            for m in mean {
                data.push(m + normal.sample::<f64, _>(&mut rng));
            }
            labels.push(c);
            is_labeled.push(c < k_old && s < labeled_per_class);
        }
    }
    GcdDataset::from_parts(
        Matrix::new(n, d_in, data),
        labels,
        is_labeled,
        k_old,
        k_new,
        seed,
        "gaussian".into(),
    )
}

/// Two independent augmented views of the given rows.
pub fn augment_two_views(
    x: &Matrix,
    config: &AugmentConfig,
    rng: &mut ChaCha8Rng,
) -> (Matrix, Matrix) {
    let mut view = || {
        let mut out = x.clone();
        for v in out.data_mut() {
            let noise: f64 = StandardNormal.sample(rng);
            *v += config.noise_sigma * noise;
            if rng.random::<f64>() < config.mask_prob {
                *v = 0.0;
            }
        }
        out
    };
    let v1 = view();
    let v2 = view();
    (v1, v2)
}

/// One epoch of batches: a seeded shuffle over the full dataset, every sample
/// exactly once, last short batch kept. The epoch index selects the RNG
/// stream so different epochs draw different orders under one seed.
pub fn make_batches(
    view: &DatasetView<'_>,
    batch_size: usize,
    aug: &AugmentConfig,
    seed: u64,
    epoch: usize,
) -> Result<Vec<Batch>> {
    if batch_size < 2 {
        return Err(Error::Config(format!("batch_size must be at least 2, got {batch_size}")));
    }
    aug.validate()?;
    let n = view.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seed);
    shuffle_rng.set_stream(1 + epoch as u64);
    order.shuffle(&mut shuffle_rng);

    let mut aug_rng = ChaCha8Rng::seed_from_u64(aug.seed);
    aug_rng.set_stream(1 + epoch as u64);

    let mut batches = Vec::with_capacity(n.div_ceil(batch_size));
    for chunk in order.chunks(batch_size) {
        let rows: Vec<Vec<f64>> = chunk.iter().map(|&i| view.features().row(i).to_vec()).collect();
        let x = Matrix::from_rows(&rows);
        let (view1, view2) = augment_two_views(&x, aug, &mut aug_rng);
        batches.push(Batch {
            view1,
            view2,
            labels: chunk.iter().map(|&i| view.label(i)).collect(),
            is_labeled: chunk.iter().map(|&i| view.is_labeled(i)).collect(),
            ids: chunk.to_vec(),
        });
    }
    Ok(batches)
}

#[derive(Serialize, Deserialize)]
struct DatasetManifest {
    k_old: usize,
    k_new: usize,
    d_in: usize,
    seed: u64,
    generator: String,
}

/// Manifest path sibling to a dataset CSV: extension replaced by
/// `manifest.json`.
pub fn manifest_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("manifest.json")
}

/// Write the dataset CSV (`id,label,is_labeled,f0..f{d-1}`) and its sibling
/// JSON manifest.
pub fn save_dataset(ds: &GcdDataset, path: &Path) -> Result<()> {
    let mut file = fs::File::create(path)?;
    let d = ds.input_dim();
    let header: Vec<String> = ["id", "label", "is_labeled"]
        .into_iter()
        .map(String::from)
        .chain((0..d).map(|j| format!("f{j}")))
        .collect();
    writeln!(file, "{}", header.join(","))?;
    for i in 0..ds.len() {
        let mut fields = vec![
            i.to_string(),
            ds.labels[i].to_string(),
            (ds.is_labeled[i] as u8).to_string(),
        ];
        fields.extend(ds.features.row(i).iter().map(|v| format!("{v}")));
        writeln!(file, "{}", fields.join(","))?;
    }
    let manifest = DatasetManifest {
        k_old: ds.k_old,
        k_new: ds.k_new,
        d_in: d,
        seed: ds.seed,
        generator: ds.generator.clone(),
    };
    fs::write(manifest_path(path), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(())
}

/// Load a dataset CSV and its manifest, enforcing the split invariants.
pub fn load_dataset(path: &Path) -> Result<GcdDataset> {
    let manifest_file = manifest_path(path);
    let manifest: DatasetManifest = serde_json::from_slice(&fs::read(&manifest_file).map_err(
        |e| Error::Format { row: 0, message: format!("missing manifest {manifest_file:?}: {e}") },
    )?)?;

    let reader = BufReader::new(fs::File::open(path)?);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format { row: 0, message: "empty file".into() })??;
    let expected_header: Vec<String> = ["id", "label", "is_labeled"]
        .into_iter()
        .map(String::from)
        .chain((0..manifest.d_in).map(|j| format!("f{j}")))
        .collect();
    if header.trim() != expected_header.join(",") {
        return Err(Error::Format { row: 0, message: format!("unexpected header `{header}`") });
    }

    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut is_labeled = Vec::new();
    for (row, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 + manifest.d_in {
            return Err(Error::Format {
                row,
                message: format!("expected {} fields, got {}", 3 + manifest.d_in, fields.len()),
            });
        }
        let id: usize = fields[0]
            .parse()
            .map_err(|_| Error::Format { row, message: format!("bad id `{}`", fields[0]) })?;
        if id != row {
            return Err(Error::Format {
                row,
                message: format!("ids must be sequential, got {id}"),
            });
        }
        let label: usize = fields[1]
            .parse()
            .map_err(|_| Error::Format { row, message: format!("bad label `{}`", fields[1]) })?;
        let lab = match fields[2] {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::Format {
                    row,
                    message: format!("is_labeled must be 0 or 1, got `{other}`"),
                })
            }
        };
        for f in &fields[3..] {
            let v: f64 = f
                .parse()
                .map_err(|_| Error::Format { row, message: format!("non-numeric cell `{f}`") })?;
            data.push(v);
        }
        labels.push(label);
        is_labeled.push(lab);
    }
    if labels.is_empty() {
        return Err(Error::Format { row: 0, message: "no data rows".into() });
    }
    let features = Matrix::new(labels.len(), manifest.d_in, data);
    GcdDataset::from_parts(
        features,
        labels,
        is_labeled,
        manifest.k_old,
        manifest.k_new,
        manifest.seed,
        manifest.generator,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generate_respects_split_protocol() {
        let ds = generate_gaussian_gcd(3, 3, 100, 16, 3.0, 0).unwrap();
        assert_eq!(ds.len(), 600);
        let tv = ds.train_view();
        let labeled = tv.labeled_indices();
        assert_eq!(labeled.len(), 150);
        assert_eq!(tv.unlabeled_indices().len(), 450);
        for &i in &labeled {
            assert!(tv.label(i).unwrap() < 3);
        }
        // unlabeled pool holds both old and new classes
        let ev = ds.eval_view();
        let hidden: Vec<usize> =
            ev.unlabeled_indices().iter().map(|&i| ev.label(i).unwrap()).collect();
        assert!(hidden.iter().any(|&y| y < 3));
        assert!(hidden.iter().any(|&y| y >= 3));
    }

    #[test]
    fn generate_without_new_classes() {
        let ds = generate_gaussian_gcd(4, 0, 10, 8, 2.0, 1).unwrap();
        assert_eq!(ds.train_view().labeled_indices().len(), 4 * 5);
        let ev = ds.eval_view();
        for i in 0..ds.len() {
            assert!(ev.label(i).unwrap() < 4);
        }
    }

    #[test]
    fn generate_is_deterministic_per_seed() {
        let a = generate_gaussian_gcd(2, 2, 8, 4, 1.5, 7).unwrap();
        let b = generate_gaussian_gcd(2, 2, 8, 4, 1.5, 7).unwrap();
        assert_eq!(a.features, b.features);
        let c = generate_gaussian_gcd(2, 2, 8, 4, 1.5, 8).unwrap();
        assert_ne!(a.features, c.features);
    }

    #[test]
    fn generate_rejects_bad_sizes() {
        assert!(generate_gaussian_gcd(0, 1, 10, 4, 1.0, 0).is_err());
        assert!(generate_gaussian_gcd(1, 1, 3, 4, 1.0, 0).is_err());
        assert!(generate_gaussian_gcd(1, 1, 10, 0, 1.0, 0).is_err());
    }

    #[test]
    fn train_view_masks_hidden_labels() {
        let ds = generate_gaussian_gcd(2, 2, 6, 4, 2.0, 0).unwrap();
        let tv = ds.train_view();
        let ev = ds.eval_view();
        for i in 0..ds.len() {
            if tv.is_labeled(i) {
                assert_eq!(tv.label(i), ev.label(i));
            } else {
                assert_eq!(tv.label(i), None);
                assert!(ev.label(i).is_some());
            }
        }
    }

    #[test]
    fn identity_augmentation_returns_input() {
        let cfg = AugmentConfig { noise_sigma: 0.0, mask_prob: 0.0, seed: 0 };
        let x = Matrix::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0]]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (v1, v2) = augment_two_views(&x, &cfg, &mut rng);
        assert_eq!(v1, x);
        assert_eq!(v2, x);
    }

    #[test]
    fn full_masking_is_rejected_at_validation() {
        let cfg = AugmentConfig { mask_prob: 1.0, ..AugmentConfig::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn augmentation_noise_variance_matches_sigma() {
        let sigma = 0.3;
        let cfg = AugmentConfig { noise_sigma: sigma, mask_prob: 0.0, seed: 0 };
        let x = Matrix::zeros(1000, 100);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (v1, _) = augment_two_views(&x, &cfg, &mut rng);
        let n = (v1.rows() * v1.cols()) as f64;
        let var = v1.data().iter().map(|v| v * v).sum::<f64>() / n;
        assert!(
            (var - sigma * sigma).abs() < 0.05 * sigma * sigma,
            "empirical variance {var} vs {}",
            sigma * sigma
        );
    }

    #[test]
    fn batches_partition_the_dataset() {
        let ds = generate_gaussian_gcd(2, 1, 10, 4, 2.0, 0).unwrap();
        let tv = ds.train_view();
        let aug = AugmentConfig::default();
        let batches = make_batches(&tv, 8, &aug, 0, 0).unwrap();
        let mut seen: Vec<usize> = batches.iter().flat_map(|b| b.ids.clone()).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..30).collect::<Vec<_>>());
        // last short batch kept
        assert_eq!(batches.last().unwrap().ids.len(), 30 % 8);
    }

    #[test]
    fn different_epochs_draw_different_orders() {
        let ds = generate_gaussian_gcd(2, 1, 20, 4, 2.0, 0).unwrap();
        let tv = ds.train_view();
        let aug = AugmentConfig::default();
        let e0: Vec<usize> = make_batches(&tv, 16, &aug, 5, 0)
            .unwrap()
            .iter()
            .flat_map(|b| b.ids.clone())
            .collect();
        let e1: Vec<usize> = make_batches(&tv, 16, &aug, 5, 1)
            .unwrap()
            .iter()
            .flat_map(|b| b.ids.clone())
            .collect();
        assert_ne!(e0, e1);
        // same (seed, epoch) reproduces exactly
        let e0_again: Vec<usize> = make_batches(&tv, 16, &aug, 5, 0)
            .unwrap()
            .iter()
            .flat_map(|b| b.ids.clone())
            .collect();
        assert_eq!(e0, e0_again);
    }

    #[test]
    fn batch_labeled_fraction_tracks_dataset_fraction() {
        let ds = generate_gaussian_gcd(3, 3, 100, 8, 2.0, 0).unwrap();
        let tv = ds.train_view();
        let aug = AugmentConfig::default();
        let p = 150.0 / 600.0;
        let mut fractions = Vec::new();
        for epoch in 0..20 {
            for b in make_batches(&tv, 64, &aug, 0, epoch).unwrap() {
                if b.ids.len() == 64 {
                    let labeled = b.is_labeled.iter().filter(|&&l| l).count();
                    fractions.push(labeled as f64 / 64.0);
                }
            }
        }
        let mean = fractions.iter().sum::<f64>() / fractions.len() as f64;
        let sigma_mean = (p * (1.0 - p) / (64.0 * fractions.len() as f64)).sqrt();
        assert!(
            (mean - p).abs() < 3.0 * sigma_mean + 1e-9,
            "mean labeled fraction {mean} vs expected {p} (3 sigma {})",
            3.0 * sigma_mean
        );
    }

    #[test]
    fn batch_views_share_sample_identity() {
        let ds = generate_gaussian_gcd(2, 1, 8, 4, 2.0, 0).unwrap();
        let tv = ds.train_view();
        let batches = make_batches(&tv, 6, &AugmentConfig::default(), 0, 0).unwrap();
        for b in &batches {
            assert_eq!(b.view1.rows(), b.view2.rows());
            assert_eq!(b.view1.rows(), b.ids.len());
            assert_eq!(b.labels.len(), b.ids.len());
        }
    }

    #[test]
    fn dataset_round_trip_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bench.csv");
        let ds = generate_gaussian_gcd(3, 3, 100, 16, 3.0, 0).unwrap();
        save_dataset(&ds, &path).unwrap();
        let loaded = load_dataset(&path).unwrap();
        assert_eq!(loaded.len(), 600);
        assert_eq!(loaded.features, ds.features);
        assert_eq!(loaded.labels, ds.labels);
        assert_eq!(loaded.is_labeled, ds.is_labeled);
        assert_eq!(loaded.k_old(), 3);
        assert_eq!(loaded.k_new(), 3);
        assert_eq!(loaded.train_view().labeled_indices().len(), 150);
    }

    #[test]
    fn load_rejects_labeled_sample_with_new_class_label() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        let ds = generate_gaussian_gcd(2, 1, 4, 2, 1.0, 0).unwrap();
        save_dataset(&ds, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        // row 0 is labeled with class 0; rewrite its label to k_old = 2
        let mut fields: Vec<String> = lines[1].split(',').map(String::from).collect();
        fields[1] = "2".into();
        fields[2] = "1".into();
        lines[1] = fields.join(",");
        fs::write(&path, lines.join("\n")).unwrap();
        match load_dataset(&path) {
            Err(Error::Format { row, .. }) => assert_eq!(row, 0),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn load_rejects_non_numeric_cell() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        let ds = generate_gaussian_gcd(2, 0, 4, 2, 1.0, 0).unwrap();
        save_dataset(&ds, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let fixed = text.replace(&text.lines().nth(2).unwrap().to_string(), "1,0,0,abc,1.0");
        fs::write(&path, fixed).unwrap();
        match load_dataset(&path) {
            Err(Error::Format { row, .. }) => assert_eq!(row, 1),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn poisoning_changes_only_hidden_labels() {
        let ds = generate_gaussian_gcd(2, 2, 10, 4, 2.0, 0).unwrap();
        let poisoned = ds.with_poisoned_hidden_labels(99);
        let ev = ds.eval_view();
        let pv = poisoned.eval_view();
        let mut changed = 0;
        for i in 0..ds.len() {
            if ev.is_labeled(i) {
                assert_eq!(ev.label(i), pv.label(i));
            } else if ev.label(i) != pv.label(i) {
                changed += 1;
            }
        }
        assert!(changed > 0);
        assert_eq!(ds.features, poisoned.features);
    }
}
