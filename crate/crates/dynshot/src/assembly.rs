//! Dynamic assembly: build one static graph per class size over shared
//! weights, cache the assembled models by size, and route mixed-size episode
//! streams into size-homogeneous batches.

use std::collections::BTreeMap;
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeRef};
use crate::metric::{build_metric, MetricArch, QueryVec};
use crate::registry::{ParamRegistry, SharedRegistry};
use crate::relational::{
    build_class_embedding_with_reduction, ClassSet, Reduction, RelationArch,
};
use crate::tensor::TensorValue;
use crate::trainer::Episode;

/// An assembled model for one class size: the class input, query input,
/// label input, logits, and loss head of a frozen graph.
pub struct AssembledModel {
    n: usize,
    feature_dim: usize,
    graph: Graph,
    input_class: NodeRef,
    input_query: NodeRef,
    input_label: NodeRef,
    embedding: NodeRef,
    logits: NodeRef,
    loss: NodeRef,
}

impl AssembledModel {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn input_class(&self) -> NodeRef {
        self.input_class
    }

    pub fn input_query(&self) -> NodeRef {
        self.input_query
    }

    pub fn input_label(&self) -> NodeRef {
        self.input_label
    }

    /// The averaged relational-stage output feeding the metric head.
    pub fn class_embedding(&self) -> NodeRef {
        self.embedding
    }

    pub fn logits(&self) -> NodeRef {
        self.logits
    }

    pub fn loss(&self) -> NodeRef {
        self.loss
    }

    /// Feed map for one episode. The label drives only the loss head, so any
    /// valid value works for inference.
    pub fn feeds(
        &self,
        class_set: &ClassSet,
        query: &QueryVec,
        label: u8,
    ) -> Result<HashMap<NodeRef, TensorValue>> {
        if class_set.n() != self.n {
            return Err(Error::WrongModelSize {
                expected: self.n,
                got: class_set.n(),
            });
        }
        if class_set.feature_dim() != self.feature_dim || query.len() != self.feature_dim {
            return Err(Error::Data(format!(
                "feature dimension mismatch: model expects {}, class set has {}, query has {}",
                self.feature_dim,
                class_set.feature_dim(),
                query.len()
            )));
        }
        let mut feeds = HashMap::new();
        feeds.insert(
            self.input_class,
            TensorValue::matrix(self.n, self.feature_dim, class_set.as_flat().to_vec())?,
        );
        feeds.insert(self.input_query, TensorValue::vector(query.as_slice().to_vec()));
        feeds.insert(self.input_label, TensorValue::scalar(f64::from(label)));
        Ok(feeds)
    }

    /// Run one episode forward and return the two logits.
    pub fn forward_logits(&self, class_set: &ClassSet, query: &QueryVec) -> Result<[f64; 2]> {
        let feeds = self.feeds(class_set, query, 0)?;
        let values = self.graph.forward(&feeds)?;
        let data = values.get(self.logits).data();
        Ok([data[0], data[1]])
    }
}

/// Build the full model for one class size: inputs, one relation instance per
/// unique pair, the averaging reduction, the metric head, and the loss. The
/// graph is frozen before it is returned; every parameter comes from the
/// shared registry.
pub fn assemble(
    registry: &SharedRegistry,
    n: usize,
    feature_dim: usize,
    relation_arch: &RelationArch,
    metric_arch: &MetricArch,
) -> Result<AssembledModel> {
    assemble_with_reduction(
        registry,
        n,
        feature_dim,
        relation_arch,
        metric_arch,
        Reduction::Mean,
    )
}

pub(crate) fn assemble_with_reduction(
    registry: &SharedRegistry,
    n: usize,
    feature_dim: usize,
    relation_arch: &RelationArch,
    metric_arch: &MetricArch,
    reduction: Reduction,
) -> Result<AssembledModel> {
    if n < 2 {
        return Err(Error::ClassTooSmall { need: 2, have: n });
    }
    if feature_dim == 0 {
        return Err(Error::Config("feature_dim must be >= 1".into()));
    }
    let mut graph = Graph::new(registry.clone());
    let input_class = graph.input(&[n, feature_dim])?;
    let input_query = graph.input(&[feature_dim])?;
    let embedding =
        build_class_embedding_with_reduction(&mut graph, input_class, n, relation_arch, reduction)?;
    let logits = build_metric(&mut graph, input_query, embedding, metric_arch)?;
    let input_label = graph.input(&[1])?;
    let loss = graph.softmax_xent(logits, input_label)?;
    graph.freeze();
    Ok(AssembledModel {
        n,
        feature_dim,
        graph,
        input_class,
        input_query,
        input_label,
        embedding,
        logits,
        loss,
    })
}

/// In-memory lookup table from class size to its assembled model. All cached
/// models alias one parameter registry, so an optimizer step through any of
/// them is visible to all of them. There is no eviction; the table grows by
/// one entry per distinct size requested.
pub struct ModelCache {
    registry: SharedRegistry,
    by_size: BTreeMap<usize, AssembledModel>,
    relation_arch: RelationArch,
    metric_arch: MetricArch,
    feature_dim: usize,
    max_n: usize,
}

pub const DEFAULT_MAX_N: usize = 32;

impl ModelCache {
    pub fn new(
        feature_dim: usize,
        relation_arch: RelationArch,
        metric_arch: MetricArch,
        seed: u64,
    ) -> Self {
        ModelCache {
            registry: ParamRegistry::shared(seed),
            by_size: BTreeMap::new(),
            relation_arch,
            metric_arch,
            feature_dim,
            max_n: DEFAULT_MAX_N,
        }
    }

    /// Cap on the supported class size; pair count grows quadratically, so
    /// large sizes are refused instead of silently exhausting memory.
    pub fn with_max_n(mut self, max_n: usize) -> Self {
        self.max_n = max_n;
        self
    }

    pub fn registry(&self) -> &SharedRegistry {
        &self.registry
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn relation_arch(&self) -> &RelationArch {
        &self.relation_arch
    }

    pub fn metric_arch(&self) -> &MetricArch {
        &self.metric_arch
    }

    pub fn contains(&self, n: usize) -> bool {
        self.by_size.contains_key(&n)
    }

    pub fn cached_sizes(&self) -> Vec<usize> {
        self.by_size.keys().copied().collect()
    }

    /// Cache hit returns the stored model without touching the graph; a miss
    /// assembles, stores, and returns it.
    pub fn get_or_assemble(&mut self, n: usize) -> Result<&AssembledModel> {
        if n < 2 {
            return Err(Error::ClassTooSmall { need: 2, have: n });
        }
        if n > self.max_n {
            return Err(Error::Config(format!(
                "class size {n} exceeds the cache limit of {}",
                self.max_n
            )));
        }
        if !self.by_size.contains_key(&n) {
            let model = assemble(
                &self.registry,
                n,
                self.feature_dim,
                &self.relation_arch,
                &self.metric_arch,
            )?;
            self.by_size.insert(n, model);
        }
        Ok(self.by_size.get(&n).expect("just inserted"))
    }
}

/// Structural counts of one assembled model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Census {
    /// Relation-network instances in the graph; equals `C(n,2)`.
    pub relation_instances: usize,
    /// Total graph nodes; grows with the pair count.
    pub node_count: usize,
    /// Registered scalar parameters; independent of `n`.
    pub param_count: usize,
}

pub fn assembly_census(model: &AssembledModel) -> Census {
    Census {
        relation_instances: model.graph.count_tag("relation"),
        node_count: model.graph.node_count(),
        param_count: model.graph.registry().read().total_scalars(),
    }
}

/// A batch of episodes that all share one class size.
#[derive(Debug, Clone)]
pub struct SizedBatch {
    pub n: usize,
    pub episodes: Vec<Episode>,
}

/// Stable-partition episodes by class size, preserving within-group order.
/// Batches appear in order of first occurrence; the union of the outputs is
/// exactly the input.
pub fn route_batches(episodes: Vec<Episode>) -> Vec<SizedBatch> {
    let mut batches: Vec<SizedBatch> = Vec::new();
    for episode in episodes {
        let n = episode.class_set.n();
        match batches.iter_mut().find(|b| b.n == n) {
            Some(batch) => batch.episodes.push(episode),
            None => batches.push(SizedBatch {
                n,
                episodes: vec![episode],
            }),
        }
    }
    batches
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Activation;
    use crate::optim::{momentum_step, OptState, TrainConfig};

    fn small_arches() -> (RelationArch, MetricArch) {
        (
            RelationArch {
                hidden_sizes: vec![4],
                embed_dim: 3,
                activation: Activation::Relu,
                symmetrize: true,
            },
            MetricArch {
                hidden_sizes: vec![4],
                activation: Activation::Relu,
            },
        )
    }

    fn episode(n: usize, seed: f64) -> Episode {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| vec![seed + i as f64, seed - i as f64])
            .collect();
        Episode {
            class_set: ClassSet::from_rows(&rows).unwrap(),
            query: QueryVec::new(vec![seed, -seed]).unwrap(),
            label: 1,
        }
    }

    #[test]
    fn census_counts_match_binomial() {
        let (ga, fa) = small_arches();
        let mut cache = ModelCache::new(2, ga, fa, 3);
        let c2 = assembly_census(cache.get_or_assemble(2).unwrap());
        assert_eq!(c2.relation_instances, 1);
        let c6 = assembly_census(cache.get_or_assemble(6).unwrap());
        assert_eq!(c6.relation_instances, 15);
        assert_eq!(c2.param_count, c6.param_count);
    }

    #[test]
    fn node_count_is_affine_in_pair_count() {
        let (ga, fa) = small_arches();
        let mut cache = ModelCache::new(3, ga, fa, 5);
        let pairs = |n: usize| n * (n - 1) / 2;
        let count = |cache: &mut ModelCache, n: usize| {
            assembly_census(cache.get_or_assemble(n).unwrap()).node_count
        };
        let n2 = count(&mut cache, 2);
        let n3 = count(&mut cache, 3);
        let per_pair = (n3 - n2) / (pairs(3) - pairs(2));
        let base = n2 - per_pair * pairs(2);
        for n in 4..=8 {
            assert_eq!(count(&mut cache, n), base + per_pair * pairs(n), "n={n}");
        }
    }

    #[test]
    fn cache_hit_adds_nothing() {
        let (ga, fa) = small_arches();
        let mut cache = ModelCache::new(2, ga, fa, 1);
        let (nodes, params) = {
            let model = cache.get_or_assemble(4).unwrap();
            (
                model.graph().node_count(),
                model.graph().registry().read().len(),
            )
        };
        let model = cache.get_or_assemble(4).unwrap();
        assert_eq!(model.graph().node_count(), nodes);
        assert_eq!(model.graph().registry().read().len(), params);
    }

    #[test]
    fn cache_holds_one_entry_per_distinct_size() {
        let (ga, fa) = small_arches();
        let mut cache = ModelCache::new(2, ga, fa, 1);
        for n in [2, 3, 2, 5] {
            cache.get_or_assemble(n).unwrap();
        }
        assert_eq!(cache.cached_sizes(), vec![2, 3, 5]);
    }

    #[test]
    fn cache_refuses_sizes_beyond_limit() {
        let (ga, fa) = small_arches();
        let mut cache = ModelCache::new(2, ga, fa, 1).with_max_n(6);
        assert!(cache.get_or_assemble(6).is_ok());
        assert!(matches!(cache.get_or_assemble(7), Err(Error::Config(_))));
        assert!(matches!(
            cache.get_or_assemble(1),
            Err(Error::ClassTooSmall { .. })
        ));
    }

    #[test]
    fn param_count_constant_across_sizes() {
        let (ga, fa) = small_arches();
        let mut cache = ModelCache::new(2, ga, fa, 7);
        cache.get_or_assemble(2).unwrap();
        let after_first = cache.registry().read().len();
        for n in 3..=8 {
            cache.get_or_assemble(n).unwrap();
        }
        assert_eq!(cache.registry().read().len(), after_first);
    }

    #[test]
    fn step_through_one_size_changes_every_size() {
        let (ga, fa) = small_arches();
        let mut cache = ModelCache::new(2, ga, fa, 9);
        let ep = episode(3, 0.5);
        let probe = episode(5, 0.25);

        cache.get_or_assemble(3).unwrap();
        let before = {
            let model5 = cache.get_or_assemble(5).unwrap();
            model5
                .forward_logits(&probe.class_set, &probe.query)
                .unwrap()
        };

        {
            let model3 = cache.get_or_assemble(3).unwrap();
            let feeds = model3.feeds(&ep.class_set, &ep.query, ep.label).unwrap();
            let values = model3.graph().forward(&feeds).unwrap();
            model3.graph().backward(model3.loss(), &values).unwrap();
        }
        let cfg = TrainConfig {
            learning_rate: 0.05,
            ..TrainConfig::default()
        };
        let mut opt = OptState::new();
        momentum_step(cache.registry(), &mut opt, &cfg).unwrap();

        let after = {
            let model5 = cache.get_or_assemble(5).unwrap();
            model5
                .forward_logits(&probe.class_set, &probe.query)
                .unwrap()
        };
        assert_ne!(before, after);
    }

    #[test]
    fn routing_partitions_by_size() {
        let eps = vec![episode(3, 0.1), episode(3, 0.2), episode(5, 0.3), episode(3, 0.4)];
        let batches = route_batches(eps);
        assert_eq!(batches.len(), 2);
        assert_eq!(batches[0].n, 3);
        assert_eq!(batches[0].episodes.len(), 3);
        assert_eq!(batches[1].n, 5);
        assert_eq!(batches[1].episodes.len(), 1);

        assert!(route_batches(Vec::new()).is_empty());
        let same = route_batches(vec![episode(4, 0.1), episode(4, 0.2)]);
        assert_eq!(same.len(), 1);
    }

    proptest::proptest! {
        #[test]
        fn routing_then_flattening_is_identity_on_episode_streams(
            sizes in proptest::collection::vec(2usize..7, 0..24)
        ) {
            let episodes: Vec<Episode> = sizes
                .iter()
                .enumerate()
                .map(|(i, &n)| episode(n, i as f64 * 0.1))
                .collect();
            let queries: Vec<Vec<f64>> =
                episodes.iter().map(|e| e.query.as_slice().to_vec()).collect();
            let batches = route_batches(episodes);

            // Homogeneous within each batch, grouped in first-seen order.
            for batch in &batches {
                proptest::prop_assert!(batch.episodes.iter().all(|e| e.class_set.n() == batch.n));
                proptest::prop_assert!(!batch.episodes.is_empty());
            }
            // Flattening recovers the input multiset, and within-group order
            // follows the original stream (queries are unique markers here).
            let mut flattened: Vec<Vec<f64>> = Vec::new();
            for batch in &batches {
                for e in &batch.episodes {
                    flattened.push(e.query.as_slice().to_vec());
                }
            }
            let mut expected = queries.clone();
            let mut sorted_flat = flattened.clone();
            expected.sort_by(|a, b| a.partial_cmp(b).unwrap());
            sorted_flat.sort_by(|a, b| a.partial_cmp(b).unwrap());
            proptest::prop_assert_eq!(expected, sorted_flat);

            for batch in &batches {
                let orig: Vec<&Vec<f64>> = queries
                    .iter()
                    .zip(&sizes)
                    .filter(|(_, &n)| n == batch.n)
                    .map(|(q, _)| q)
                    .collect();
                let got: Vec<Vec<f64>> = batch
                    .episodes
                    .iter()
                    .map(|e| e.query.as_slice().to_vec())
                    .collect();
                proptest::prop_assert_eq!(orig.len(), got.len());
                for (a, b) in orig.iter().zip(&got) {
                    proptest::prop_assert_eq!(*a, b);
                }
            }
        }
    }
}
