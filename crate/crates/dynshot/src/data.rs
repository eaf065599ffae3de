//! Feature datasets: synthetic cluster generation, CSV ingestion, and
//! class-level train/heldout splitting.
//!
//! The file format is one CSV per dataset: header
//! `class_id,split,f0,...,f{d-1}`, one row per example, floats written with
//! 17 fractional digits so a round trip is lossless at double precision.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Heldout,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Heldout => "heldout",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "heldout" => Some(Split::Heldout),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClassRecord {
    pub examples: Vec<Vec<f64>>,
    pub split: Split,
}

/// Feature vectors grouped by class, each class tagged train or heldout.
/// Every class holds at least 2 examples; train and heldout class sets are
/// disjoint by construction (the tag lives on the class).
#[derive(Debug, Clone)]
pub struct FeatureDataset {
    feature_dim: usize,
    classes: BTreeMap<String, ClassRecord>,
}

impl FeatureDataset {
    pub fn new(feature_dim: usize) -> Self {
        FeatureDataset {
            feature_dim,
            classes: BTreeMap::new(),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn insert_class(
        &mut self,
        class_id: impl Into<String>,
        examples: Vec<Vec<f64>>,
        split: Split,
    ) -> Result<()> {
        let class_id = class_id.into();
        if examples.len() < 2 {
            return Err(Error::Data(format!(
                "class `{class_id}` has {} examples; at least 2 are required",
                examples.len()
            )));
        }
        for row in &examples {
            if row.len() != self.feature_dim {
                return Err(Error::Data(format!(
                    "class `{class_id}` row has {} features, dataset dimension is {}",
                    row.len(),
                    self.feature_dim
                )));
            }
            if !row.iter().all(|v| v.is_finite()) {
                return Err(Error::Data(format!(
                    "class `{class_id}` contains non-finite features"
                )));
            }
        }
        self.classes
            .insert(class_id, ClassRecord { examples, split });
        Ok(())
    }

    pub fn class_ids(&self) -> impl Iterator<Item = &str> {
        self.classes.keys().map(|k| k.as_str())
    }

    pub fn class(&self, id: &str) -> Option<&ClassRecord> {
        self.classes.get(id)
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn num_examples(&self) -> usize {
        self.classes.values().map(|c| c.examples.len()).sum()
    }

    /// Class ids in one split, in sorted order.
    pub fn classes_in(&self, split: Split) -> Vec<&str> {
        self.classes
            .iter()
            .filter(|(_, c)| c.split == split)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ClassRecord)> {
        self.classes.iter().map(|(k, v)| (k.as_str(), v))
    }
}

/// Synthetic cluster configuration. Class centers are isotropic with scale
/// `center_scale`; examples add isotropic noise with scale `noise_scale`.
/// The noise/center ratio controls difficulty.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub examples_per_class: usize,
    pub feature_dim: usize,
    pub center_scale: f64,
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_classes: 20,
            examples_per_class: 12,
            feature_dim: 32,
            center_scale: 1.0,
            noise_scale: 0.35,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be >= 2".into()));
        }
        if self.examples_per_class < 2 {
            return Err(Error::Config("examples_per_class must be >= 2".into()));
        }
        if self.feature_dim == 0 {
            return Err(Error::Config("feature_dim must be >= 1".into()));
        }
        if !(self.center_scale > 0.0) || !(self.noise_scale > 0.0) {
            return Err(Error::Config(
                "center_scale and noise_scale must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Standard normal via Box-Muller over ChaCha8: `sqrt(-2 ln u1) * cos(2 pi u2)`
/// with `u1` in (0,1]. One normal per pair of uniforms, so the stream is easy
/// to reproduce in any other implementation.
pub fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    use rand::Rng;
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Deterministic synthetic dataset; all classes start in the train split.
pub fn gen_synthetic(cfg: &SynthConfig) -> Result<FeatureDataset> {
    Ok(gen_synthetic_with_centers(cfg)?.0)
}

pub(crate) fn gen_synthetic_with_centers(
    cfg: &SynthConfig,
) -> Result<(FeatureDataset, Vec<Vec<f64>>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dataset = FeatureDataset::new(cfg.feature_dim);
    let mut centers = Vec::with_capacity(cfg.num_classes);
    let width = digits_for(cfg.num_classes);
    for c in 0..cfg.num_classes {
        let center: Vec<f64> = (0..cfg.feature_dim)
            .map(|_| cfg.center_scale * gaussian(&mut rng))
            .collect();
        let examples: Vec<Vec<f64>> = (0..cfg.examples_per_class)
            .map(|_| {
                center
                    .iter()
                    .map(|&m| m + cfg.noise_scale * gaussian(&mut rng))
                    .collect()
            })
            .collect();
        dataset.insert_class(format!("c{c:0width$}"), examples, Split::Train)?;
        centers.push(center);
    }
    Ok((dataset, centers))
}

fn digits_for(n: usize) -> usize {
    n.saturating_sub(1).to_string().len().max(3)
}

pub fn save_features(dataset: &FeatureDataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str("class_id,split");
    for i in 0..dataset.feature_dim() {
        write!(out, ",f{i}").unwrap();
    }
    out.push('\n');
    for (id, record) in dataset.iter() {
        for example in &record.examples {
            write!(out, "{id},{}", record.split.as_str()).unwrap();
            for v in example {
                write!(out, ",{v:.17e}").unwrap();
            }
            out.push('\n');
        }
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_features(path: &Path) -> Result<FeatureDataset> {
    let text = fs::read_to_string(path)?;
    let display = path.display().to_string();
    let mut lines = text.lines().enumerate();

    let (_, header) = lines.next().ok_or_else(|| Error::DataFormat {
        path: display.clone(),
        line: 1,
        msg: "empty file".into(),
    })?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 3 || cols[0] != "class_id" || cols[1] != "split" {
        return Err(Error::DataFormat {
            path: display,
            line: 1,
            msg: "header must start with `class_id,split,f0,...`".into(),
        });
    }
    for (i, col) in cols[2..].iter().enumerate() {
        if *col != format!("f{i}") {
            return Err(Error::DataFormat {
                path: display,
                line: 1,
                msg: format!("feature column {} named `{col}`, expected `f{i}`", i + 2),
            });
        }
    }
    let feature_dim = cols.len() - 2;

    let mut grouped: BTreeMap<String, (Split, Vec<Vec<f64>>)> = BTreeMap::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != feature_dim + 2 {
            return Err(Error::DataFormat {
                path: display,
                line: line_no,
                msg: format!(
                    "expected {} fields ({} features), got {}",
                    feature_dim + 2,
                    feature_dim,
                    fields.len()
                ),
            });
        }
        let split = Split::parse(fields[1]).ok_or_else(|| Error::DataFormat {
            path: display.clone(),
            line: line_no,
            msg: format!("unknown split `{}` (expected train|heldout)", fields[1]),
        })?;
        let mut row = Vec::with_capacity(feature_dim);
        for field in &fields[2..] {
            let v: f64 = field.parse().map_err(|_| Error::DataFormat {
                path: display.clone(),
                line: line_no,
                msg: format!("not a float: `{field}`"),
            })?;
            if !v.is_finite() {
                return Err(Error::DataFormat {
                    path: display,
                    line: line_no,
                    msg: "non-finite feature value".into(),
                });
            }
            row.push(v);
        }
        let entry = grouped
            .entry(fields[0].to_string())
            .or_insert_with(|| (split, Vec::new()));
        if entry.0 != split {
            return Err(Error::DataFormat {
                path: display,
                line: line_no,
                msg: format!("class `{}` appears in more than one split", fields[0]),
            });
        }
        entry.1.push(row);
    }

    let mut dataset = FeatureDataset::new(feature_dim);
    for (id, (split, examples)) in grouped {
        dataset.insert_class(id, examples, split)?;
    }
    if dataset.num_classes() == 0 {
        return Err(Error::Data("dataset has no classes".into()));
    }
    Ok(dataset)
}

/// Re-tag classes into disjoint train/heldout splits. The split is by class,
/// never by example, and is deterministic per seed.
pub fn split_classes(
    dataset: &FeatureDataset,
    heldout_fraction: f64,
    seed: u64,
) -> Result<FeatureDataset> {
    if !(heldout_fraction > 0.0 && heldout_fraction < 1.0) {
        return Err(Error::Config(format!(
            "heldout_fraction must be in (0, 1), got {heldout_fraction}"
        )));
    }
    let mut ids: Vec<&str> = dataset.class_ids().collect();
    let total = ids.len();
    let heldout_count = (total as f64 * heldout_fraction).round() as usize;
    if heldout_count < 2 || total - heldout_count < 2 {
        return Err(Error::TooFewClasses(format!(
            "{total} classes at fraction {heldout_fraction} leaves {heldout_count} heldout / {} train; both need >= 2",
            total - heldout_count
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let heldout: std::collections::BTreeSet<&str> =
        ids[..heldout_count].iter().copied().collect();

    let mut out = FeatureDataset::new(dataset.feature_dim());
    for (id, record) in dataset.iter() {
        let split = if heldout.contains(id) {
            Split::Heldout
        } else {
            Split::Train
        };
        out.insert_class(id, record.examples.clone(), split)?;
    }
    Ok(out)
}

/// Fraction of examples whose nearest empirical class mean is their own
/// class, with the example itself left out of its own class mean so small
/// classes are not self-attracting. A quick learnability probe for synthetic
/// datasets.
pub fn nearest_center_accuracy(dataset: &FeatureDataset) -> f64 {
    let ids: Vec<&str> = dataset.class_ids().collect();
    let sums: Vec<(Vec<f64>, usize)> = ids
        .iter()
        .map(|id| {
            let examples = &dataset.class(id).unwrap().examples;
            let mut sum = vec![0.0; dataset.feature_dim()];
            for row in examples {
                for (s, v) in sum.iter_mut().zip(row) {
                    *s += v;
                }
            }
            (sum, examples.len())
        })
        .collect();

    let mut correct = 0usize;
    let mut total = 0usize;
    for (ci, id) in ids.iter().enumerate() {
        for row in &dataset.class(id).unwrap().examples {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (cj, (sum, count)) in sums.iter().enumerate() {
                let d: f64 = if cj == ci {
                    let inv = 1.0 / (count - 1) as f64;
                    row.iter()
                        .zip(sum)
                        .map(|(a, s)| {
                            let center = (s - a) * inv;
                            (a - center) * (a - center)
                        })
                        .sum()
                } else {
                    let inv = 1.0 / *count as f64;
                    row.iter()
                        .zip(sum)
                        .map(|(a, s)| (a - s * inv) * (a - s * inv))
                        .sum()
                };
                if d < best_d {
                    best_d = d;
                    best = cj;
                }
            }
            correct += usize::from(best == ci);
            total += 1;
        }
    }
    correct as f64 / total as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let cfg = SynthConfig::default();
        let a = gen_synthetic(&cfg).unwrap();
        let b = gen_synthetic(&cfg).unwrap();
        assert_eq!(a.num_classes(), b.num_classes());
        for (id, record) in a.iter() {
            assert_eq!(record.examples, b.class(id).unwrap().examples);
        }
    }

    #[test]
    fn vanishing_noise_duplicates_examples() {
        let cfg = SynthConfig {
            noise_scale: 1e-300,
            num_classes: 3,
            examples_per_class: 4,
            feature_dim: 5,
            ..SynthConfig::default()
        };
        let ds = gen_synthetic(&cfg).unwrap();
        for (_, record) in ds.iter() {
            for row in &record.examples[1..] {
                for (a, b) in row.iter().zip(&record.examples[0]) {
                    assert!((a - b).abs() < 1e-250);
                }
            }
        }
    }

    #[test]
    fn mild_noise_is_nearest_center_separable() {
        let cfg = SynthConfig {
            center_scale: 1.0,
            noise_scale: 0.2,
            num_classes: 10,
            examples_per_class: 10,
            feature_dim: 16,
            seed: 4,
        };
        let ds = gen_synthetic(&cfg).unwrap();
        assert!(nearest_center_accuracy(&ds) > 0.95);
    }

    #[test]
    fn class_means_stay_near_their_centers() {
        let cfg = SynthConfig {
            num_classes: 5,
            examples_per_class: 64,
            feature_dim: 8,
            center_scale: 1.0,
            noise_scale: 0.5,
            seed: 11,
        };
        let (ds, centers) = gen_synthetic_with_centers(&cfg).unwrap();
        let bound = 3.0 * cfg.noise_scale / (cfg.examples_per_class as f64).sqrt();
        for (ci, (_, record)) in ds.iter().enumerate() {
            let m = cfg.examples_per_class as f64;
            for d in 0..cfg.feature_dim {
                let mean: f64 = record.examples.iter().map(|r| r[d]).sum::<f64>() / m;
                assert!(
                    (mean - centers[ci][d]).abs() < bound,
                    "class {ci} dim {d} drifted"
                );
            }
        }
    }

    #[test]
    fn save_load_round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("features.csv");
        let cfg = SynthConfig {
            num_classes: 4,
            examples_per_class: 3,
            feature_dim: 6,
            ..SynthConfig::default()
        };
        let ds = split_classes(&gen_synthetic(&cfg).unwrap(), 0.5, 1).unwrap();
        save_features(&ds, &path).unwrap();
        let loaded = load_features(&path).unwrap();
        assert_eq!(loaded.feature_dim(), ds.feature_dim());
        assert_eq!(loaded.num_classes(), ds.num_classes());
        for (id, record) in ds.iter() {
            let got = loaded.class(id).unwrap();
            assert_eq!(got.split, record.split);
            assert_eq!(got.examples, record.examples);
        }
    }

    #[test]
    fn malformed_rows_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(
            &path,
            "class_id,split,f0,f1\na,train,1.0,2.0\na,train,1.0\n",
        )
        .unwrap();
        match load_features(&path) {
            Err(Error::DataFormat { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected DataFormat error, got {other:?}"),
        }
    }

    #[test]
    fn single_example_class_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("small.csv");
        std::fs::write(
            &path,
            "class_id,split,f0\na,train,1.0\na,train,2.0\nb,train,3.0\n",
        )
        .unwrap();
        assert!(matches!(load_features(&path), Err(Error::Data(_))));
    }

    #[test]
    fn split_is_a_deterministic_partition() {
        let cfg = SynthConfig {
            num_classes: 10,
            examples_per_class: 4,
            feature_dim: 3,
            ..SynthConfig::default()
        };
        let base = gen_synthetic(&cfg).unwrap();
        let a = split_classes(&base, 0.3, 42).unwrap();
        let b = split_classes(&base, 0.3, 42).unwrap();
        assert_eq!(a.classes_in(Split::Heldout).len(), 3);
        assert_eq!(a.classes_in(Split::Train).len(), 7);
        assert_eq!(a.classes_in(Split::Heldout), b.classes_in(Split::Heldout));

        let heldout = a.classes_in(Split::Heldout);
        let train = a.classes_in(Split::Train);
        assert!(heldout.iter().all(|h| !train.contains(h)));
        assert_eq!(heldout.len() + train.len(), base.num_classes());
    }

    #[test]
    fn split_refuses_tiny_datasets() {
        let cfg = SynthConfig {
            num_classes: 3,
            examples_per_class: 4,
            feature_dim: 3,
            ..SynthConfig::default()
        };
        let base = gen_synthetic(&cfg).unwrap();
        assert!(matches!(
            split_classes(&base, 0.3, 1),
            Err(Error::TooFewClasses(_))
        ));
    }
}
