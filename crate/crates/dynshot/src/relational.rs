//! Relational stage: a shared-weight pairwise network applied to every unique
//! pair of class examples, reduced by element-wise averaging into a class
//! embedding whose size does not depend on the example count.

use crate::error::{Error, Result};
use crate::graph::{Activation, Graph, NodeRef};
use crate::registry::Init;

/// One class's examples: an `n x feature_dim` row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassSet {
    features: Vec<f64>,
    n: usize,
    feature_dim: usize,
}

impl ClassSet {
    pub fn new(n: usize, feature_dim: usize, features: Vec<f64>) -> Result<Self> {
        if n < 2 {
            return Err(Error::ClassTooSmall { need: 2, have: n });
        }
        if feature_dim == 0 {
            return Err(Error::Data("feature dimension must be >= 1".into()));
        }
        if features.len() != n * feature_dim {
            return Err(Error::Data(format!(
                "class set expects {} values ({n} x {feature_dim}), got {}",
                n * feature_dim,
                features.len()
            )));
        }
        if !features.iter().all(|v| v.is_finite()) {
            return Err(Error::Data("class set contains non-finite values".into()));
        }
        Ok(ClassSet {
            features,
            n,
            feature_dim,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let feature_dim = rows.first().map_or(0, |r| r.len());
        let mut features = Vec::with_capacity(n * feature_dim);
        for row in rows {
            if row.len() != feature_dim {
                return Err(Error::Data("ragged class set rows".into()));
            }
            features.extend_from_slice(row);
        }
        ClassSet::new(n, feature_dim, features)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.features
    }
}

/// Architecture of the pairwise relation network.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationArch {
    pub hidden_sizes: Vec<usize>,
    pub embed_dim: usize,
    pub activation: Activation,
    /// Average the network over both argument orders so the pair output is
    /// independent of which example comes first.
    pub symmetrize: bool,
}

impl Default for RelationArch {
    fn default() -> Self {
        RelationArch {
            hidden_sizes: vec![64],
            embed_dim: 32,
            activation: Activation::Relu,
            symmetrize: true,
        }
    }
}

impl RelationArch {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_sizes.is_empty() {
            return Err(Error::Config("relation hidden_sizes must be non-empty".into()));
        }
        if self.embed_dim == 0 {
            return Err(Error::Config("relation embed_dim must be >= 1".into()));
        }
        Ok(())
    }
}

/// All index pairs `(i, j)` with `i < j`, in lexicographic order.
pub fn unique_pairs(n: usize) -> Result<Vec<(usize, usize)>> {
    if n < 2 {
        return Err(Error::ClassTooSmall { need: 2, have: n });
    }
    Ok((0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect())
}

/// One instance of the pairwise network over shared `g/` weights. Every
/// instance in every graph on the same registry aliases the same parameters.
pub fn build_pair_relation(
    graph: &mut Graph,
    left: NodeRef,
    right: NodeRef,
    arch: &RelationArch,
) -> Result<NodeRef> {
    arch.validate()?;
    let forward = relation_mlp(graph, left, right, arch)?;
    let out = if arch.symmetrize {
        let reverse = relation_mlp(graph, right, left, arch)?;
        graph.mean_of(&[forward, reverse])?
    } else {
        forward
    };
    graph.set_node_tag(out, "relation")?;
    Ok(out)
}

fn relation_mlp(
    graph: &mut Graph,
    left: NodeRef,
    right: NodeRef,
    arch: &RelationArch,
) -> Result<NodeRef> {
    let mut x = graph.concat(&[left, right])?;
    let mut width = graph.node_shape(x)?[0];
    for (layer, &hidden) in arch.hidden_sizes.iter().enumerate() {
        x = dense(graph, x, width, hidden, &format!("g/layer{layer}"))?;
        x = graph.activation(x, arch.activation)?;
        width = hidden;
    }
    let out_layer = arch.hidden_sizes.len();
    dense(graph, x, width, arch.embed_dim, &format!("g/layer{out_layer}"))
}

pub(crate) fn dense(
    graph: &mut Graph,
    x: NodeRef,
    in_width: usize,
    out_width: usize,
    prefix: &str,
) -> Result<NodeRef> {
    let w = graph.parameter(&format!("{prefix}/W"), &[in_width, out_width], Init::Default)?;
    let b = graph.parameter(&format!("{prefix}/b"), &[out_width], Init::Zeros)?;
    let xw = graph.matmul(x, w)?;
    graph.add_bias(xw, b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Reduction {
    Mean,
    Sum,
}

/// Class embedding over all unique pairs of rows of `class_input`, an
/// `[n, feature_dim]` node. Exactly `C(n,2)` relation instances are created;
/// the output width is `arch.embed_dim` for every `n`.
pub fn build_class_embedding(
    graph: &mut Graph,
    class_input: NodeRef,
    n: usize,
    arch: &RelationArch,
) -> Result<NodeRef> {
    build_class_embedding_with_reduction(graph, class_input, n, arch, Reduction::Mean)
}

pub(crate) fn build_class_embedding_with_reduction(
    graph: &mut Graph,
    class_input: NodeRef,
    n: usize,
    arch: &RelationArch,
    reduction: Reduction,
) -> Result<NodeRef> {
    let pairs = unique_pairs(n)?;
    let mut outputs = Vec::with_capacity(pairs.len());
    for (i, j) in pairs {
        let left = graph.slice_row(class_input, i)?;
        let right = graph.slice_row(class_input, j)?;
        outputs.push(build_pair_relation(graph, left, right, arch)?);
    }
    let reduced = match reduction {
        Reduction::Mean => graph.mean_of(&outputs)?,
        Reduction::Sum => graph.sum_of(&outputs)?,
    };
    graph.set_node_tag(reduced, "class_embedding")?;
    Ok(reduced)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::ParamRegistry;
    use crate::tensor::TensorValue;
    use std::collections::HashMap;

    #[test]
    fn pairs_minimal_and_counts() {
        assert_eq!(unique_pairs(2).unwrap(), vec![(0, 1)]);
        let four = unique_pairs(4).unwrap();
        assert_eq!(four.len(), 6);
        assert_eq!(four[0], (0, 1));
        assert_eq!(four[5], (2, 3));
        assert_eq!(unique_pairs(5).unwrap().len(), 10);
        assert!(matches!(
            unique_pairs(1),
            Err(Error::ClassTooSmall { need: 2, have: 1 })
        ));
    }

    fn tiny_arch(symmetrize: bool) -> RelationArch {
        RelationArch {
            hidden_sizes: vec![3],
            embed_dim: 2,
            activation: Activation::Relu,
            symmetrize,
        }
    }

    fn plant_tiny_weights(graph: &mut Graph) {
        // 2 features per side -> concat width 4, hidden 3, output 2.
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
            .parameter("g/layer0/W", &[4, 3], Init::Values(w0))
            .unwrap();
        graph
            .parameter("g/layer0/b", &[3], Init::Values(b0))
            .unwrap();
        graph
            .parameter("g/layer1/W", &[3, 2], Init::Values(w1))
            .unwrap();
        graph
            .parameter("g/layer1/b", &[2], Init::Values(b1))
            .unwrap();
    }

    #[test]
    fn hand_sized_forward_matches_hand_arithmetic() {
        let registry = ParamRegistry::shared(0);
        let mut graph = Graph::new(registry);
        plant_tiny_weights(&mut graph);
        let left = graph.input(&[2]).unwrap();
        let right = graph.input(&[2]).unwrap();
        let out = build_pair_relation(&mut graph, left, right, &tiny_arch(false)).unwrap();

        let mut feeds = HashMap::new();
        feeds.insert(left, TensorValue::vector(vec![1.0, 2.0]));
        feeds.insert(right, TensorValue::vector(vec![-1.0, 0.5]));
        let values = graph.forward(&feeds).unwrap();
        let got = values.get(out).data();
        // x = [1, 2, -1, 0.5]; relu(x W0 + b0) = [0, 0.75, 0.4];
        // h W1 + b1 = [0.305, 0.2875].
        assert!((got[0] - 0.305).abs() < 1e-12);
        assert!((got[1] - 0.2875).abs() < 1e-12);
    }

    #[test]
    fn instances_share_weights() {
        let registry = ParamRegistry::shared(9);
        let mut graph = Graph::new(registry.clone());
        let a = graph.input(&[2]).unwrap();
        let b = graph.input(&[2]).unwrap();
        build_pair_relation(&mut graph, a, b, &tiny_arch(true)).unwrap();
        let count_after_first = registry.read().len();
        build_pair_relation(&mut graph, b, a, &tiny_arch(true)).unwrap();
        assert_eq!(registry.read().len(), count_after_first);
    }

    #[test]
    fn symmetrize_makes_order_irrelevant_exactly() {
        let registry = ParamRegistry::shared(42);
        let mut graph = Graph::new(registry);
        let a = graph.input(&[2]).unwrap();
        let b = graph.input(&[2]).unwrap();
        let ab = build_pair_relation(&mut graph, a, b, &tiny_arch(true)).unwrap();
        let ba = build_pair_relation(&mut graph, b, a, &tiny_arch(true)).unwrap();

        let mut feeds = HashMap::new();
        feeds.insert(a, TensorValue::vector(vec![0.3, -0.7]));
        feeds.insert(b, TensorValue::vector(vec![1.9, 0.2]));
        let values = graph.forward(&feeds).unwrap();
        assert_eq!(values.get(ab).data(), values.get(ba).data());
    }

    #[test]
    fn duplicate_rows_collapse_to_single_pair_output() {
        for n in 2..=6 {
            let registry = ParamRegistry::shared(7);
            let mut graph = Graph::new(registry);
            let class_input = graph.input(&[n, 2]).unwrap();
            let embedding =
                build_class_embedding(&mut graph, class_input, n, &tiny_arch(true)).unwrap();
            let left = graph.input(&[2]).unwrap();
            let right = graph.input(&[2]).unwrap();
            let single = build_pair_relation(&mut graph, left, right, &tiny_arch(true)).unwrap();

            let c = [0.4, -1.2];
            let mut feeds = HashMap::new();
            feeds.insert(
                class_input,
                TensorValue::matrix(n, 2, c.repeat(n)).unwrap(),
            );
            feeds.insert(left, TensorValue::vector(c.to_vec()));
            feeds.insert(right, TensorValue::vector(c.to_vec()));
            let values = graph.forward(&feeds).unwrap();
            assert_eq!(
                values.get(embedding).data(),
                values.get(single).data(),
                "collapse failed for n={n}"
            );
        }
    }

    #[test]
    fn embedding_matches_pair_loop_oracle() {
        let n = 3;
        let registry = ParamRegistry::shared(5);
        let mut graph = Graph::new(registry);
        plant_tiny_weights(&mut graph);
        let class_input = graph.input(&[n, 2]).unwrap();
        let arch = tiny_arch(false);
        let embedding = build_class_embedding(&mut graph, class_input, n, &arch).unwrap();

        let rows = [[1.0, 2.0], [-1.0, 0.5], [0.3, -0.6]];
        let mut feeds = HashMap::new();
        feeds.insert(
            class_input,
            TensorValue::matrix(n, 2, rows.concat()).unwrap(),
        );
        let values = graph.forward(&feeds).unwrap();
        let got = values.get(embedding).data();

        // Straight-line oracle: enumerate pairs, run the MLP by hand, average.
        let w0 = [
            [0.1, -0.2, 0.3],
            [0.0, 0.5, -0.1],
            [0.2, 0.1, 0.0],
            [-0.3, 0.2, 0.4],
        ];
        let b0 = [0.05, -0.05, 0.1];
        let w1 = [[1.0, -1.0], [0.5, 0.25], [-0.2, 0.3]];
        let b1 = [0.01, -0.02];
        let mlp = |a: &[f64], b: &[f64]| -> [f64; 2] {
            let x = [a[0], a[1], b[0], b[1]];
            let mut h = [0.0; 3];
            for (j, hj) in h.iter_mut().enumerate() {
                let mut acc = b0[j];
                for (i, xi) in x.iter().enumerate() {
                    acc += xi * w0[i][j];
                }
                *hj = acc.max(0.0);
            }
            let mut out = b1;
            for (i, hi) in h.iter().enumerate() {
                out[0] += hi * w1[i][0];
                out[1] += hi * w1[i][1];
            }
            out
        };
        let mut expected = [0.0; 2];
        let pairs = [(0, 1), (0, 2), (1, 2)];
        for (i, j) in pairs {
            let out = mlp(&rows[i], &rows[j]);
            expected[0] += out[0] / 3.0;
            expected[1] += out[1] / 3.0;
        }
        assert!((got[0] - expected[0]).abs() < 1e-12);
        assert!((got[1] - expected[1]).abs() < 1e-12);
    }

    #[test]
    fn permutation_invariance_with_symmetrize() {
        let n = 4;
        let rows = [
            [0.5, -0.25],
            [1.5, 0.75],
            [-0.4, 0.9],
            [2.0, -1.0],
        ];
        let permutations: [[usize; 4]; 3] = [[3, 2, 1, 0], [1, 3, 0, 2], [2, 0, 3, 1]];

        let registry = ParamRegistry::shared(13);
        let mut graph = Graph::new(registry);
        let class_input = graph.input(&[n, 2]).unwrap();
        let embedding =
            build_class_embedding(&mut graph, class_input, n, &tiny_arch(true)).unwrap();

        let eval = |graph: &Graph, order: &[usize]| -> Vec<f64> {
            let mut flat = Vec::new();
            for &i in order {
                flat.extend_from_slice(&rows[i]);
            }
            let mut feeds = HashMap::new();
            feeds.insert(class_input, TensorValue::matrix(n, 2, flat).unwrap());
            graph.forward(&feeds).unwrap().get(embedding).data().to_vec()
        };

        let base = eval(&graph, &[0, 1, 2, 3]);
        for perm in &permutations {
            let permuted = eval(&graph, perm);
            for (a, b) in base.iter().zip(&permuted) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn relation_gradient_equals_sum_of_per_pair_graphs() {
        let n = 4;
        let arch = tiny_arch(true);
        let rows: Vec<Vec<f64>> = vec![
            vec![0.2, -0.4],
            vec![1.1, 0.3],
            vec![-0.8, 0.5],
            vec![0.6, 1.4],
        ];
        let pairs = unique_pairs(n).unwrap();
        let k = pairs.len() as f64;

        // Full graph: scalar loss = mean-of-pairs embedding dotted with ones.
        let registry = ParamRegistry::shared(21);
        let mut graph = Graph::new(registry.clone());
        let class_input = graph.input(&[n, 2]).unwrap();
        let embedding = build_class_embedding(&mut graph, class_input, n, &arch).unwrap();
        let ones = graph.input(&[2, 1]).unwrap();
        let loss = graph.matmul(embedding, ones).unwrap();
        let mut feeds = HashMap::new();
        feeds.insert(
            class_input,
            TensorValue::matrix(n, 2, rows.concat()).unwrap(),
        );
        feeds.insert(ones, TensorValue::matrix(2, 1, vec![1.0, 1.0]).unwrap());
        let values = graph.forward(&feeds).unwrap();
        graph.backward(loss, &values).unwrap();
        let full: Vec<(String, Vec<f64>)> = registry
            .read()
            .iter()
            .map(|(name, e)| (name.to_string(), e.grad().to_vec()))
            .collect();

        // Oracle: one graph per pair, each contributing (pair . ones) / k.
        let mut summed: std::collections::BTreeMap<String, Vec<f64>> = Default::default();
        for (i, j) in pairs {
            let mut pair_graph = Graph::new(registry.clone());
            let left = pair_graph.input(&[2]).unwrap();
            let right = pair_graph.input(&[2]).unwrap();
            let out = build_pair_relation(&mut pair_graph, left, right, &arch).unwrap();
            let ones = pair_graph.input(&[2, 1]).unwrap();
            let pair_loss = pair_graph.matmul(out, ones).unwrap();
            let mut feeds = HashMap::new();
            feeds.insert(left, TensorValue::vector(rows[i].clone()));
            feeds.insert(right, TensorValue::vector(rows[j].clone()));
            feeds.insert(ones, TensorValue::matrix(2, 1, vec![1.0 / k, 1.0 / k]).unwrap());
            let vals = pair_graph.forward(&feeds).unwrap();
            pair_graph.backward(pair_loss, &vals).unwrap();
            for (name, entry) in registry.read().iter() {
                let acc = summed
                    .entry(name.to_string())
                    .or_insert_with(|| vec![0.0; entry.grad().len()]);
                for (a, g) in acc.iter_mut().zip(entry.grad()) {
                    *a += g;
                }
            }
        }

        for (name, grads) in &full {
            let oracle = &summed[name];
            for (a, b) in grads.iter().zip(oracle) {
                assert!((a - b).abs() < 1e-10, "grad mismatch for {name}");
            }
        }
    }
}
