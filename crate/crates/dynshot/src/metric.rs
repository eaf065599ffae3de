//! Metric stage: a shared-weight network mapping (query, class embedding) to
//! two membership logits. Index 1 is "member", index 0 is "non-member".

use crate::assembly::AssembledModel;
use crate::error::{Error, Result};
use crate::graph::{softmax2, Activation, Graph, NodeRef};
use crate::relational::{dense, ClassSet};

/// Architecture of the membership head. The output width is fixed at 2.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricArch {
    pub hidden_sizes: Vec<usize>,
    pub activation: Activation,
}

impl Default for MetricArch {
    fn default() -> Self {
        MetricArch {
            hidden_sizes: vec![64],
            activation: Activation::Relu,
        }
    }
}

impl MetricArch {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_sizes.is_empty() {
            return Err(Error::Config("metric hidden_sizes must be non-empty".into()));
        }
        Ok(())
    }
}

/// A query feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryVec {
    values: Vec<f64>,
}

impl QueryVec {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Data("query vector must be non-empty".into()));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::Data("query vector contains non-finite values".into()));
        }
        Ok(QueryVec { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }
}

/// One instance of the metric network over shared `f/` weights, producing a
/// 2-logit node. The parameter set is the same regardless of the class size
/// the embedding came from.
pub fn build_metric(
    graph: &mut Graph,
    query_input: NodeRef,
    class_embedding: NodeRef,
    arch: &MetricArch,
) -> Result<NodeRef> {
    arch.validate()?;
    let mut x = graph.concat(&[query_input, class_embedding])?;
    let mut width = graph.node_shape(x)?[0];
    for (layer, &hidden) in arch.hidden_sizes.iter().enumerate() {
        x = dense(graph, x, width, hidden, &format!("f/layer{layer}"))?;
        x = graph.activation(x, arch.activation)?;
        width = hidden;
    }
    let out_layer = arch.hidden_sizes.len();
    let logits = dense(graph, x, width, 2, &format!("f/layer{out_layer}"))?;
    graph.set_node_tag(logits, "metric")?;
    Ok(logits)
}

/// Probability that the query belongs to the class, through an assembled
/// model. The class set's example count must match the model's size.
pub fn predict_prob(model: &AssembledModel, class_set: &ClassSet, query: &QueryVec) -> Result<f64> {
    let logits = model.forward_logits(class_set, query)?;
    Ok(softmax2(&logits)[1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::registry::{Init, ParamRegistry};
    use crate::tensor::TensorValue;
    use std::collections::HashMap;

    fn tiny_arch() -> MetricArch {
        MetricArch {
            hidden_sizes: vec![3],
            activation: Activation::Relu,
        }
    }

    #[test]
    fn hand_sized_logits_match_hand_arithmetic() {
        let registry = ParamRegistry::shared(0);
        let mut graph = Graph::new(registry);
        // query dim 2 + embedding dim 2 -> input width 4.
        let w0 = vec![
            0.1, -0.2, 0.3, //
            0.0, 0.5, -0.1, //
            0.2, 0.1, 0.0, //
            -0.3, 0.2, 0.4,
        ];
        let b0 = vec![0.05, -0.05, 0.1];
        let w1 = vec![1.0, -1.0, 0.5, 0.25, -0.2, 0.3];
        let b1 = vec![0.01, -0.02];
        graph
            .parameter("f/layer0/W", &[4, 3], Init::Values(w0))
            .unwrap();
        graph
            .parameter("f/layer0/b", &[3], Init::Values(b0))
            .unwrap();
        graph
            .parameter("f/layer1/W", &[3, 2], Init::Values(w1))
            .unwrap();
        graph
            .parameter("f/layer1/b", &[2], Init::Values(b1))
            .unwrap();

        let query = graph.input(&[2]).unwrap();
        let embedding = graph.input(&[2]).unwrap();
        let logits = build_metric(&mut graph, query, embedding, &tiny_arch()).unwrap();

        let mut feeds = HashMap::new();
        feeds.insert(query, TensorValue::vector(vec![0.5, -1.0]));
        feeds.insert(embedding, TensorValue::vector(vec![0.25, 0.75]));
        let values = graph.forward(&feeds).unwrap();
        let got = values.get(logits).data();
        // x = [0.5, -1, 0.25, 0.75]; relu(x W0 + b0) = [0, 0, 0.65];
        // logits = [-0.12, 0.175].
        assert!((got[0] - (-0.12)).abs() < 1e-12);
        assert!((got[1] - 0.175).abs() < 1e-12);
    }

    #[test]
    fn zero_weights_give_even_odds() {
        let registry = ParamRegistry::shared(0);
        let mut graph = Graph::new(registry);
        graph
            .parameter("f/layer0/W", &[4, 3], Init::Zeros)
            .unwrap();
        graph.parameter("f/layer0/b", &[3], Init::Zeros).unwrap();
        graph
            .parameter("f/layer1/W", &[3, 2], Init::Zeros)
            .unwrap();
        graph.parameter("f/layer1/b", &[2], Init::Zeros).unwrap();
        let query = graph.input(&[2]).unwrap();
        let embedding = graph.input(&[2]).unwrap();
        let logits = build_metric(&mut graph, query, embedding, &tiny_arch()).unwrap();

        let mut feeds = HashMap::new();
        feeds.insert(query, TensorValue::vector(vec![3.0, -2.0]));
        feeds.insert(embedding, TensorValue::vector(vec![1.0, 1.0]));
        let values = graph.forward(&feeds).unwrap();
        assert_eq!(values.get(logits).data(), &[0.0, 0.0]);
        let p = softmax2(values.get(logits).data());
        assert_eq!(p, [0.5, 0.5]);
    }

    #[test]
    fn metric_instances_share_parameters() {
        let registry = ParamRegistry::shared(17);
        let mut graph = Graph::new(registry.clone());
        let q = graph.input(&[2]).unwrap();
        let e = graph.input(&[2]).unwrap();
        build_metric(&mut graph, q, e, &tiny_arch()).unwrap();
        let names_first: Vec<String> = registry
            .read()
            .names()
            .filter(|n| n.starts_with("f/"))
            .map(String::from)
            .collect();
        build_metric(&mut graph, q, e, &tiny_arch()).unwrap();
        let names_second: Vec<String> = registry
            .read()
            .names()
            .filter(|n| n.starts_with("f/"))
            .map(String::from)
            .collect();
        assert_eq!(names_first, names_second);
    }
}
