//! Episodic training and evaluation: randomized class-size sampling, the
//! optimizer loop over the model cache, and the train-size x eval-size
//! benchmark grid.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::assembly::{ModelCache, SizedBatch};
use crate::data::{FeatureDataset, Split};
use crate::error::{Error, Result};
use crate::metric::{MetricArch, QueryVec};
use crate::optim::{momentum_step, nesterov_step, MomentumKind, OptState, TrainConfig};
use crate::registry::splitmix64;
use crate::relational::{ClassSet, RelationArch};

/// One training or evaluation instance: a support set, a query, and whether
/// the query belongs to the support class (1) or not (0).
#[derive(Debug, Clone)]
pub struct Episode {
    pub class_set: ClassSet,
    pub query: QueryVec,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub mean_loss: f64,
    pub support_size: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingHistory {
    pub records: Vec<StepRecord>,
}

impl TrainingHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,loss,n\n");
        for r in &self.records {
            writeln!(out, "{},{},{}", r.step, r.mean_loss, r.support_size).unwrap();
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn mean_loss_over(&self, range: std::ops::Range<usize>) -> f64 {
        let slice = &self.records[range];
        slice.iter().map(|r| r.mean_loss).sum::<f64>() / slice.len() as f64
    }
}

/// `k` distinct indices from `0..m` via partial Fisher-Yates; deterministic
/// given the generator state.
fn sample_distinct(rng: &mut ChaCha8Rng, m: usize, k: usize) -> Vec<usize> {
    let mut indices: Vec<usize> = (0..m).collect();
    for i in 0..k {
        let j = rng.random_range(i..m);
        indices.swap(i, j);
    }
    indices.truncate(k);
    indices
}

/// One balanced episode at class size `n`. Positive episodes draw the query
/// from the support class, disjoint from the support examples; negative
/// episodes draw it from a different class of the same split.
pub fn sample_episode(
    dataset: &FeatureDataset,
    split: Split,
    n: usize,
    label: u8,
    rng: &mut ChaCha8Rng,
) -> Result<Episode> {
    let ids = dataset.classes_in(split);
    if ids.len() < 2 {
        return Err(Error::TooFewClasses(format!(
            "episode sampling needs >= 2 {} classes, have {}",
            split.as_str(),
            ids.len()
        )));
    }
    let class_idx = rng.random_range(0..ids.len());
    let class = dataset.class(ids[class_idx]).expect("listed id");
    let m = class.examples.len();

    let needed = if label == 1 { n + 1 } else { n };
    if m < needed {
        return Err(Error::ClassTooSmall { need: needed, have: m });
    }
    let picks = sample_distinct(rng, m, needed);
    let support: Vec<Vec<f64>> = picks[..n]
        .iter()
        .map(|&i| class.examples[i].clone())
        .collect();
    let query = if label == 1 {
        class.examples[picks[n]].clone()
    } else {
        let mut other_idx = rng.random_range(0..ids.len() - 1);
        if other_idx >= class_idx {
            other_idx += 1;
        }
        let other = dataset.class(ids[other_idx]).expect("listed id");
        other.examples[rng.random_range(0..other.examples.len())].clone()
    };
    Ok(Episode {
        class_set: ClassSet::from_rows(&support)?,
        query: QueryVec::new(query)?,
        label,
    })
}

/// One batch for a single step: the class size is drawn once per batch from
/// the shot range, so size varies between batches and is constant within.
/// Labels alternate 0/1, which balances an even batch exactly.
pub fn sample_training_batch(
    dataset: &FeatureDataset,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<SizedBatch> {
    let (lo, hi) = cfg.shot_range;
    let n = rng.random_range(lo..=hi);
    let episodes: Vec<Episode> = (0..cfg.batch_size)
        .map(|i| sample_episode(dataset, Split::Train, n, (i % 2) as u8, rng))
        .collect::<Result<_>>()?;
    Ok(SizedBatch { n, episodes })
}

fn validate_dataset_for(dataset: &FeatureDataset, split: Split, n_max: usize) -> Result<()> {
    let ids = dataset.classes_in(split);
    if ids.len() < 2 {
        return Err(Error::TooFewClasses(format!(
            "training needs >= 2 {} classes, have {}",
            split.as_str(),
            ids.len()
        )));
    }
    for id in ids {
        let m = dataset.class(id).expect("listed id").examples.len();
        if m < n_max + 1 {
            return Err(Error::Data(format!(
                "class `{id}` has {m} examples; positives at class size {n_max} need {}",
                n_max + 1
            )));
        }
    }
    Ok(())
}

/// Train over the model cache: per step, sample one size-homogeneous batch,
/// assemble (or fetch) the model for that size, average episode gradients,
/// and take one optimizer step. Deterministic given the seed.
pub fn train(
    cache: &mut ModelCache,
    dataset: &FeatureDataset,
    cfg: &TrainConfig,
) -> Result<TrainingHistory> {
    cfg.validate()?;
    validate_dataset_for(dataset, Split::Train, cfg.shot_range.1)?;
    if dataset.feature_dim() != cache.feature_dim() {
        return Err(Error::Data(format!(
            "dataset feature dimension {} does not match cache dimension {}",
            dataset.feature_dim(),
            cache.feature_dim()
        )));
    }

    let registry = cache.registry().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt_state = OptState::new();
    let mut history = TrainingHistory::default();
    let mut grad_accum: BTreeMap<String, Vec<f64>> = BTreeMap::new();

    for step in 0..cfg.steps {
        let batch = sample_training_batch(dataset, cfg, &mut rng)?;
        let model = cache.get_or_assemble(batch.n)?;

        grad_accum.clear();
        let mut loss_sum = 0.0;
        for episode in &batch.episodes {
            let feeds = model.feeds(&episode.class_set, &episode.query, episode.label)?;
            let values = model.graph().forward(&feeds)?;
            loss_sum += values.scalar(model.loss());
            model.graph().backward(model.loss(), &values)?;
            let reg = registry.read();
            for (name, entry) in reg.iter() {
                let acc = grad_accum
                    .entry(name.to_string())
                    .or_insert_with(|| vec![0.0; entry.grad().len()]);
                for (a, g) in acc.iter_mut().zip(entry.grad()) {
                    *a += g;
                }
            }
        }

        let mean_loss = loss_sum / batch.episodes.len() as f64;
        if !mean_loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss at step {step}")));
        }

        // Batch gradient is the mean over episodes, so the learning rate does
        // not depend on batch size.
        {
            let inv = 1.0 / batch.episodes.len() as f64;
            let mut reg = registry.write();
            for (name, acc) in &grad_accum {
                let scaled: Vec<f64> = acc.iter().map(|g| g * inv).collect();
                reg.set_grad(name, &scaled)?;
            }
        }
        match cfg.momentum_kind {
            MomentumKind::Classic => momentum_step(&registry, &mut opt_state, cfg)?,
            MomentumKind::Nesterov => nesterov_step(&registry, &mut opt_state, cfg)?,
        }

        history.records.push(StepRecord {
            step,
            mean_loss,
            support_size: batch.n,
        });
    }
    Ok(history)
}

/// Accuracy over balanced episodes sampled from one split at a fixed class
/// size. Predictions take `argmax(logits)` with ties going to non-member.
///
/// Each episode reseeds from the caller stream and its index, so two calls
/// with equally seeded generators draw the same class/label sequence even at
/// different class sizes. Paired episodes make accuracies comparable across
/// eval sizes instead of adding independent sampling noise per cell.
pub fn evaluate_on(
    cache: &mut ModelCache,
    dataset: &FeatureDataset,
    split: Split,
    n_eval: usize,
    num_episodes: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    if num_episodes == 0 {
        return Err(Error::EmptyEvaluation);
    }
    if n_eval < 2 {
        return Err(Error::ClassTooSmall {
            need: 2,
            have: n_eval,
        });
    }
    use rand::RngCore;
    let base = rng.next_u64();
    let mut correct = 0usize;
    for i in 0..num_episodes {
        let mut episode_rng =
            ChaCha8Rng::seed_from_u64(splitmix64(base ^ splitmix64(i as u64 + 1)));
        let label = (i % 2) as u8;
        let episode = sample_episode(dataset, split, n_eval, label, &mut episode_rng)?;
        let model = cache.get_or_assemble(n_eval)?;
        let logits = model.forward_logits(&episode.class_set, &episode.query)?;
        let prediction = u8::from(logits[1] > logits[0]);
        correct += usize::from(prediction == episode.label);
    }
    Ok(correct as f64 / num_episodes as f64)
}

/// Accuracy on held-out classes, the evaluation discipline used throughout.
pub fn evaluate(
    cache: &mut ModelCache,
    dataset: &FeatureDataset,
    n_eval: usize,
    num_episodes: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    evaluate_on(cache, dataset, Split::Heldout, n_eval, num_episodes, rng)
}

/// Configuration of the train-size x eval-size benchmark grid.
#[derive(Debug, Clone)]
pub struct GridConfig {
    pub base: TrainConfig,
    pub relation_arch: RelationArch,
    pub metric_arch: MetricArch,
    /// One fixed-size baseline per entry.
    pub train_sizes: Vec<usize>,
    pub eval_sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    pub eval_episodes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellStat {
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub label: String,
    /// `Some(k)` for a fixed-size baseline, `None` for the dynamic row.
    pub train_size: Option<usize>,
    pub cells: Vec<CellStat>,
    /// Train-minus-heldout accuracy gap, averaged over eval sizes and seeds.
    pub generalization_gap: Option<f64>,
}

impl GridRow {
    pub fn mean_over_eval_sizes(&self) -> f64 {
        self.cells.iter().map(|c| c.mean).sum::<f64>() / self.cells.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultGrid {
    pub eval_sizes: Vec<usize>,
    pub rows: Vec<GridRow>,
}

impl ResultGrid {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("train_size,eval_size,mean,sd\n");
        for row in &self.rows {
            let label = match row.train_size {
                Some(k) => k.to_string(),
                None => "dynamic".to_string(),
            };
            for (es, cell) in self.eval_sizes.iter().zip(&row.cells) {
                writeln!(out, "{label},{es},{},{}", cell.mean, cell.sd).unwrap();
            }
        }
        out
    }

    /// Aligned text table in the same layout as the CSV, one row per model.
    pub fn to_text(&self) -> String {
        let label_width = self
            .rows
            .iter()
            .map(|r| r.label.len())
            .max()
            .unwrap_or(0)
            .max("model".len());
        let mut out = String::new();
        write!(out, "{:<label_width$}", "model").unwrap();
        for es in &self.eval_sizes {
            write!(out, "  {:>14}", format!("eval n={es}")).unwrap();
        }
        let has_gap = self.rows.iter().any(|r| r.generalization_gap.is_some());
        if has_gap {
            write!(out, "  {:>8}", "gap").unwrap();
        }
        out.push('\n');
        for row in &self.rows {
            write!(out, "{:<label_width$}", row.label).unwrap();
            for cell in &row.cells {
                write!(
                    out,
                    "  {:>14}",
                    format!("{:.2}% ±{:.2}", 100.0 * cell.mean, 100.0 * cell.sd)
                )
                .unwrap();
            }
            if has_gap {
                match row.generalization_gap {
                    Some(gap) => write!(out, "  {:>7.2}%", 100.0 * gap).unwrap(),
                    None => write!(out, "  {:>8}", "-").unwrap(),
                }
            }
            out.push('\n');
        }
        out
    }
}

fn mix(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x5132_8ea1_77f0_1d3eu64, |acc, &p| splitmix64(acc ^ p))
}

struct TaskResult {
    row: usize,
    heldout: Vec<f64>,
    train: Vec<f64>,
    steps: usize,
}

/// Train one fixed-size baseline per train size plus one dynamic model, all
/// with the same step count, and evaluate every model at every eval size on
/// held-out classes. Cells report mean and sample standard deviation over
/// seeds. Runs are independent, so seeds execute in parallel.
pub fn run_grid(dataset: &FeatureDataset, cfg: &GridConfig) -> Result<ResultGrid> {
    if cfg.eval_sizes.is_empty() || cfg.eval_sizes.iter().any(|&e| e < 2) {
        return Err(Error::Config("eval_sizes must be >= 2".into()));
    }
    if cfg.train_sizes.iter().any(|&t| t < 2) {
        return Err(Error::Config("train_sizes must be >= 2".into()));
    }
    if cfg.seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    if cfg.eval_episodes == 0 {
        return Err(Error::EmptyEvaluation);
    }

    let mut row_specs: Vec<(String, Option<usize>, (usize, usize))> = cfg
        .train_sizes
        .iter()
        .map(|&k| (format!("{k}-shot"), Some(k), (k, k)))
        .collect();
    row_specs.push(("dynamic".to_string(), None, cfg.base.shot_range));

    let tasks: Vec<(usize, usize)> = (0..row_specs.len())
        .flat_map(|r| (0..cfg.seeds.len()).map(move |s| (r, s)))
        .collect();

    let results: Vec<TaskResult> = tasks
        .into_par_iter()
        .map(|(row, seed_idx)| -> Result<TaskResult> {
            let seed = cfg.seeds[seed_idx];
            let mut train_cfg = cfg.base.clone();
            train_cfg.shot_range = row_specs[row].2;
            train_cfg.seed = mix(&[seed, row as u64 + 1]);

            let mut cache = ModelCache::new(
                dataset.feature_dim(),
                cfg.relation_arch.clone(),
                cfg.metric_arch.clone(),
                train_cfg.seed,
            );
            let history = train(&mut cache, dataset, &train_cfg)?;

            // Eval streams are seeded per (seed, row, split) but not per size,
            // so every eval size scores the same paired episode sequence.
            let mut heldout = Vec::with_capacity(cfg.eval_sizes.len());
            let mut train_split = Vec::with_capacity(cfg.eval_sizes.len());
            for &es in &cfg.eval_sizes {
                let mut rng = ChaCha8Rng::seed_from_u64(mix(&[seed, row as u64, 1]));
                heldout.push(evaluate_on(
                    &mut cache,
                    dataset,
                    Split::Heldout,
                    es,
                    cfg.eval_episodes,
                    &mut rng,
                )?);
                let mut rng = ChaCha8Rng::seed_from_u64(mix(&[seed, row as u64, 2]));
                train_split.push(evaluate_on(
                    &mut cache,
                    dataset,
                    Split::Train,
                    es,
                    cfg.eval_episodes,
                    &mut rng,
                )?);
            }
            Ok(TaskResult {
                row,
                heldout,
                train: train_split,
                steps: history.records.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    // Every model must have been trained for the same number of steps.
    debug_assert!(results.iter().all(|r| r.steps == cfg.base.steps));

    let rows = row_specs
        .iter()
        .enumerate()
        .map(|(row, (label, train_size, _))| {
            let per_seed: Vec<&TaskResult> = results.iter().filter(|r| r.row == row).collect();
            let cells = (0..cfg.eval_sizes.len())
                .map(|e| {
                    let values: Vec<f64> = per_seed.iter().map(|r| r.heldout[e]).collect();
                    CellStat {
                        mean: mean(&values),
                        sd: sample_sd(&values),
                    }
                })
                .collect();
            let gaps: Vec<f64> = per_seed
                .iter()
                .flat_map(|r| {
                    r.train
                        .iter()
                        .zip(&r.heldout)
                        .map(|(t, h)| t - h)
                        .collect::<Vec<f64>>()
                })
                .collect();
            GridRow {
                label: label.clone(),
                train_size: *train_size,
                cells,
                generalization_gap: Some(mean(&gaps)),
            }
        })
        .collect();

    Ok(ResultGrid {
        eval_sizes: cfg.eval_sizes.clone(),
        rows,
    })
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn sample_sd(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64;
    var.sqrt()
}
