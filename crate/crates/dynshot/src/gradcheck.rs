//! Central finite-difference verification of reverse-mode gradients.

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeRef};
use crate::tensor::TensorValue;

/// Compare analytic gradients against central differences over every entry of
/// every registered parameter. Returns the maximum relative error
/// `|analytic - numeric| / max(1e-12, |analytic| + |numeric|)`.
pub fn grad_check(
    graph: &Graph,
    loss: NodeRef,
    feeds: &HashMap<NodeRef, TensorValue>,
    epsilon: f64,
) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::BadEpsilon(epsilon));
    }
    let values = graph.forward(feeds)?;
    graph.backward(loss, &values)?;

    let analytic: BTreeMap<String, Vec<f64>> = {
        let reg = graph.registry().read();
        reg.iter()
            .map(|(name, entry)| (name.to_string(), entry.grad().to_vec()))
            .collect()
    };

    let mut max_rel: f64 = 0.0;
    for (name, grads) in &analytic {
        for (i, &analytic_grad) in grads.iter().enumerate() {
            let original = graph.registry().read().entry(name)?.value()[i];
            set_entry(graph, name, i, original + epsilon)?;
            let loss_plus = graph.forward(feeds)?.scalar(loss);
            set_entry(graph, name, i, original - epsilon)?;
            let loss_minus = graph.forward(feeds)?.scalar(loss);
            set_entry(graph, name, i, original)?;

            let numeric = (loss_plus - loss_minus) / (2.0 * epsilon);
            let rel = (analytic_grad - numeric).abs()
                / f64::max(1e-12, analytic_grad.abs() + numeric.abs());
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}

fn set_entry(graph: &Graph, name: &str, i: usize, v: f64) -> Result<()> {
    let mut reg = graph.registry().write();
    reg.value_mut(name)?[i] = v;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Activation;
    use crate::registry::{splitmix64, Init, ParamRegistry};

    #[test]
    fn linear_model_is_checked_to_machine_precision() {
        let registry = ParamRegistry::shared(2);
        let mut g = Graph::new(registry);
        let x = g.input(&[3]).unwrap();
        let w = g.parameter("w", &[3, 1], Init::Default).unwrap();
        let loss = g.matmul(x, w).unwrap();
        let mut feeds = HashMap::new();
        feeds.insert(x, TensorValue::vector(vec![0.4, -1.2, 2.5]));
        let err = grad_check(&g, loss, &feeds, 1e-5).unwrap();
        assert!(err < 1e-9, "linear model error {err}");
    }

    #[test]
    fn zero_epsilon_is_a_precondition_error() {
        let registry = ParamRegistry::shared(2);
        let mut g = Graph::new(registry);
        let x = g.input(&[1]).unwrap();
        let w = g.parameter("w", &[1, 1], Init::Default).unwrap();
        let loss = g.matmul(x, w).unwrap();
        let mut feeds = HashMap::new();
        feeds.insert(x, TensorValue::vector(vec![1.0]));
        assert!(matches!(
            grad_check(&g, loss, &feeds, 0.0),
            Err(Error::BadEpsilon(_))
        ));
    }

    #[test]
    fn randomized_small_graphs_pass_one_hundred_trials() {
        for trial in 0..100u64 {
            let mut state = splitmix64(trial + 1);
            let mut next = || {
                state = splitmix64(state);
                state
            };
            let in_dim = (next() % 3 + 1) as usize;
            let hidden = (next() % 4 + 1) as usize;
            let registry = ParamRegistry::shared(next());
            let mut g = Graph::new(registry);
            let x = g.input(&[in_dim]).unwrap();
            let w0 = g.parameter("w0", &[in_dim, hidden], Init::Default).unwrap();
            let b0 = g.parameter("b0", &[hidden], Init::Default).unwrap();
            let h = g.matmul(x, w0).unwrap();
            let h = g.add_bias(h, b0).unwrap();
            let h = g.activation(h, Activation::Tanh).unwrap();
            let w1 = g.parameter("w1", &[hidden, 2], Init::Default).unwrap();
            let logits = g.matmul(h, w1).unwrap();
            let label = g.input(&[1]).unwrap();
            let loss = g.softmax_xent(logits, label).unwrap();

            let xs: Vec<f64> = (0..in_dim)
                .map(|_| (next() >> 11) as f64 / (1u64 << 53) as f64 * 4.0 - 2.0)
                .collect();
            let mut feeds = HashMap::new();
            feeds.insert(x, TensorValue::vector(xs));
            feeds.insert(label, TensorValue::scalar((next() % 2) as f64));
            let err = grad_check(&g, loss, &feeds, 1e-5).unwrap();
            assert!(err < 1e-4, "trial {trial} failed with error {err}");
        }
    }
}
