//! Self-contained invariant suite behind `dynshot verify`: gradient checks,
//! duplicate-collapse, instance census, cache idempotence, and optimizer
//! oracles. The `Sabotage::MeanToSum` hook rebuilds the relational reduction
//! as a sum so the duplicate-collapse check demonstrably fails; it is the
//! negative control that distinguishes averaging from summation.

use std::collections::HashMap;
use std::time::Instant;

use crate::assembly::{assembly_census, assemble_with_reduction, ModelCache};
use crate::gradcheck::grad_check;
use crate::graph::{Activation, Graph};
use crate::metric::MetricArch;
use crate::optim::{momentum_step, nesterov_step, OptState, TrainConfig};
use crate::registry::{Init, ParamRegistry};
use crate::relational::{build_pair_relation, unique_pairs, Reduction, RelationArch};
use crate::tensor::TensorValue;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sabotage {
    None,
    MeanToSum,
}

impl Sabotage {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "mean-to-sum" => Some(Sabotage::MeanToSum),
            _ => None,
        }
    }
}

#[derive(Debug)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub micros: u128,
}

const CHECK_NAMES: [&str; 5] = ["grad", "duplicate-collapse", "census", "cache", "optimizer"];

pub fn check_names() -> &'static [&'static str] {
    &CHECK_NAMES
}

/// Run the invariant suite, optionally restricted to one named check.
pub fn run_checks(only: Option<&str>, sabotage: Sabotage) -> Vec<CheckOutcome> {
    let checks: Vec<(&'static str, fn(Sabotage) -> Result<String, String>)> = vec![
        ("grad", check_grad),
        ("duplicate-collapse", check_duplicate_collapse),
        ("census", check_census),
        ("cache", check_cache),
        ("optimizer", check_optimizer),
    ];
    checks
        .into_iter()
        .filter(|(name, _)| only.is_none_or(|o| o == *name))
        .map(|(name, check)| {
            let start = Instant::now();
            let result = check(sabotage);
            let micros = start.elapsed().as_micros();
            match result {
                Ok(detail) => CheckOutcome {
                    name,
                    passed: true,
                    detail,
                    micros,
                },
                Err(detail) => CheckOutcome {
                    name,
                    passed: false,
                    detail,
                    micros,
                },
            }
        })
        .collect()
}

pub fn all_passed(outcomes: &[CheckOutcome]) -> bool {
    !outcomes.is_empty() && outcomes.iter().all(|o| o.passed)
}

fn default_arches() -> (RelationArch, MetricArch) {
    (RelationArch::default(), MetricArch::default())
}

fn check_grad(_sabotage: Sabotage) -> Result<String, String> {
    let feature_dim = 8;
    let (relation_arch, metric_arch) = default_arches();
    let mut worst: f64 = 0.0;
    for n in 2..=5 {
        let registry = ParamRegistry::shared(100 + n as u64);
        let model = crate::assembly::assemble(&registry, n, feature_dim, &relation_arch, &metric_arch)
            .map_err(|e| e.to_string())?;
        let mut rng_state = 0x9153u64;
        let mut next = || {
            rng_state = crate::registry::splitmix64(rng_state);
            (rng_state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        };
        let class: Vec<f64> = (0..n * feature_dim).map(|_| next()).collect();
        let query: Vec<f64> = (0..feature_dim).map(|_| next()).collect();
        let mut feeds = HashMap::new();
        feeds.insert(
            model.input_class(),
            TensorValue::matrix(n, feature_dim, class).map_err(|e| e.to_string())?,
        );
        feeds.insert(model.input_query(), TensorValue::vector(query));
        feeds.insert(model.input_label(), TensorValue::scalar(1.0));
        let err = grad_check(model.graph(), model.loss(), &feeds, 1e-5)
            .map_err(|e| e.to_string())?;
        worst = worst.max(err);
        if err >= 1e-4 {
            return Err(format!("grad check failed for n={n}: max rel err {err:.3e}"));
        }
    }
    Ok(format!("max relative error {worst:.3e} over n=2..5"))
}

fn check_duplicate_collapse(sabotage: Sabotage) -> Result<String, String> {
    let feature_dim = 4;
    let arch = RelationArch {
        hidden_sizes: vec![8],
        embed_dim: 4,
        activation: Activation::Relu,
        symmetrize: true,
    };
    let metric_arch = MetricArch {
        hidden_sizes: vec![8],
        activation: Activation::Relu,
    };
    let reduction = match sabotage {
        Sabotage::None => Reduction::Mean,
        Sabotage::MeanToSum => Reduction::Sum,
    };
    for n in 2..=6 {
        let registry = ParamRegistry::shared(55);
        let model = assemble_with_reduction(
            &registry,
            n,
            feature_dim,
            &arch,
            &metric_arch,
            reduction,
        )
        .map_err(|e| e.to_string())?;

        // Reference: one relation instance fed the duplicated example twice.
        let mut pair_graph = Graph::new(registry.clone());
        let left = pair_graph.input(&[feature_dim]).map_err(|e| e.to_string())?;
        let right = pair_graph.input(&[feature_dim]).map_err(|e| e.to_string())?;
        let pair_out =
            build_pair_relation(&mut pair_graph, left, right, &arch).map_err(|e| e.to_string())?;

        let example = [0.6, -1.1, 0.25, 2.0];
        let mut feeds = HashMap::new();
        feeds.insert(
            model.input_class(),
            TensorValue::matrix(n, feature_dim, example.repeat(n)).map_err(|e| e.to_string())?,
        );
        feeds.insert(model.input_query(), TensorValue::vector(example.to_vec()));
        feeds.insert(model.input_label(), TensorValue::scalar(1.0));
        let values = model.graph().forward(&feeds).map_err(|e| e.to_string())?;

        let mut pair_feeds = HashMap::new();
        pair_feeds.insert(left, TensorValue::vector(example.to_vec()));
        pair_feeds.insert(right, TensorValue::vector(example.to_vec()));
        let pair_values = pair_graph.forward(&pair_feeds).map_err(|e| e.to_string())?;

        let got = values.get(model.class_embedding()).data().to_vec();
        let want = pair_values.get(pair_out).data().to_vec();
        if got != want {
            return Err(format!(
                "duplicate collapse violated for n={n}: embedding {got:?} != pair output {want:?}"
            ));
        }
    }
    Ok("embedding equals single-pair output for n=2..6".into())
}

fn check_census(_sabotage: Sabotage) -> Result<String, String> {
    let (relation_arch, metric_arch) = default_arches();
    let mut cache = ModelCache::new(6, relation_arch, metric_arch, 77);
    let mut first_params = None;
    for n in 2..=8 {
        let census = assembly_census(cache.get_or_assemble(n).map_err(|e| e.to_string())?);
        let expected = n * (n - 1) / 2;
        if census.relation_instances != expected {
            return Err(format!(
                "census for n={n}: {} relation instances, expected {expected}",
                census.relation_instances
            ));
        }
        match first_params {
            None => first_params = Some(census.param_count),
            Some(p) if p != census.param_count => {
                return Err(format!(
                    "parameter count changed with n: {p} then {}",
                    census.param_count
                ))
            }
            _ => {}
        }
    }
    Ok(format!(
        "relation instances match C(n,2) for n=2..8, {} scalar parameters stay fixed",
        first_params.unwrap_or(0)
    ))
}

fn check_cache(_sabotage: Sabotage) -> Result<String, String> {
    let (relation_arch, metric_arch) = default_arches();
    let mut cache = ModelCache::new(6, relation_arch, metric_arch, 3);

    let miss_start = Instant::now();
    let (nodes, params) = {
        let model = cache.get_or_assemble(9).map_err(|e| e.to_string())?;
        (
            model.graph().node_count(),
            model.graph().registry().read().len(),
        )
    };
    let miss = miss_start.elapsed();

    let mut best_hit = u128::MAX;
    for _ in 0..64 {
        let hit_start = Instant::now();
        let model = cache.get_or_assemble(9).map_err(|e| e.to_string())?;
        let hit = hit_start.elapsed().as_nanos();
        if model.graph().node_count() != nodes
            || model.graph().registry().read().len() != params
        {
            return Err("cache hit changed the graph or the registry".into());
        }
        best_hit = best_hit.min(hit);
    }
    let miss_nanos = miss.as_nanos().max(1);
    if best_hit * 100 >= miss_nanos {
        return Err(format!(
            "cache hit too slow: {best_hit} ns vs miss {miss_nanos} ns"
        ));
    }
    Ok(format!(
        "hit {} ns vs miss {} ns, zero nodes added",
        best_hit, miss_nanos
    ))
}

fn check_optimizer(_sabotage: Sabotage) -> Result<String, String> {
    let cfg = TrainConfig {
        learning_rate: 0.1,
        momentum: 0.9,
        ..TrainConfig::default()
    };

    let classic = ParamRegistry::shared(0);
    classic
        .write()
        .get_or_create("w", &[1], &Init::Values(vec![1.0]))
        .map_err(|e| e.to_string())?;
    let mut state = OptState::new();
    let mut trace = Vec::new();
    for _ in 0..2 {
        classic.write().set_grad("w", &[2.0]).map_err(|e| e.to_string())?;
        momentum_step(&classic, &mut state, &cfg).map_err(|e| e.to_string())?;
        trace.push(classic.read().entry("w").map_err(|e| e.to_string())?.value()[0]);
    }
    let classic_expected = [0.8, 0.42];
    for (got, want) in trace.iter().zip(classic_expected) {
        if (got - want).abs() > 1e-12 {
            return Err(format!("classic trace {trace:?} != {classic_expected:?}"));
        }
    }

    let nesterov = ParamRegistry::shared(0);
    nesterov
        .write()
        .get_or_create("w", &[1], &Init::Values(vec![1.0]))
        .map_err(|e| e.to_string())?;
    let mut state = OptState::new();
    let mut trace = Vec::new();
    for _ in 0..2 {
        nesterov
            .write()
            .set_grad("w", &[2.0])
            .map_err(|e| e.to_string())?;
        nesterov_step(&nesterov, &mut state, &cfg).map_err(|e| e.to_string())?;
        trace.push(nesterov.read().entry("w").map_err(|e| e.to_string())?.value()[0]);
    }
    let nesterov_expected = [0.62, 0.078];
    for (got, want) in trace.iter().zip(nesterov_expected) {
        if (got - want).abs() > 1e-12 {
            return Err(format!("nesterov trace {trace:?} != {nesterov_expected:?}"));
        }
    }

    let pairs = unique_pairs(5).map_err(|e| e.to_string())?;
    if pairs.len() != 10 {
        return Err(format!("unique_pairs(5) returned {} pairs", pairs.len()));
    }
    Ok("two-step hand traces match for classic and nesterov".into())
}
