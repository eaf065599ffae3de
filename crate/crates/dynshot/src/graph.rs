//! Static computation graph with named shared parameters and reverse-mode
//! gradients.
//!
//! Graphs are built append-only, frozen once assembly finishes, and evaluated
//! as many times as needed. Several graphs may share one [`SharedRegistry`];
//! a parameter node created under an existing name aliases the registered
//! storage instead of allocating new weights. Gradients accumulate additively
//! over every aliasing use, which is the semantics weight sharing requires.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::registry::{Init, SharedRegistry};
use crate::tensor::TensorValue;

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// Opaque handle to a node in one specific graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeRef {
    graph: u64,
    index: usize,
}

impl NodeRef {
    pub fn index(&self) -> usize {
        self.index
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OpKind {
    Input,
    Parameter(String),
    MatMul,
    AddBias,
    Activation(Activation),
    Concat,
    MeanOf,
    /// Sum instead of mean over the same inputs. Never produced by the public
    /// builders; reachable only through the verification suite's mutation
    /// hook, where it serves as the negative control for averaging.
    SumOf,
    SoftmaxXent,
    SliceRow(usize),
}

impl OpKind {
    fn label(&self) -> String {
        match self {
            OpKind::Input => "input".into(),
            OpKind::Parameter(name) => format!("parameter `{name}`"),
            OpKind::MatMul => "matmul".into(),
            OpKind::AddBias => "add_bias".into(),
            OpKind::Activation(a) => format!("activation {}", a.name()),
            OpKind::Concat => "concat".into(),
            OpKind::MeanOf => "mean_of".into(),
            OpKind::SumOf => "sum_of".into(),
            OpKind::SoftmaxXent => "softmax_xent".into(),
            OpKind::SliceRow(i) => format!("slice_row {i}"),
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: OpKind,
    inputs: Vec<usize>,
    shape: Vec<usize>,
    tag: Option<&'static str>,
}

/// Append-only dataflow graph over a shared parameter registry.
pub struct Graph {
    id: u64,
    nodes: Vec<Node>,
    registry: SharedRegistry,
    frozen: bool,
}

/// Per-node values from one forward pass, indexed by [`NodeRef`].
#[derive(Debug)]
pub struct ForwardValues {
    graph: u64,
    values: Vec<TensorValue>,
}

impl ForwardValues {
    pub fn get(&self, node: NodeRef) -> &TensorValue {
        assert_eq!(node.graph, self.graph, "NodeRef from a different graph");
        &self.values[node.index]
    }

    pub fn scalar(&self, node: NodeRef) -> f64 {
        self.get(node).data()[0]
    }
}

impl Graph {
    pub fn new(registry: SharedRegistry) -> Self {
        Graph {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            registry,
            frozen: false,
        }
    }

    pub fn registry(&self) -> &SharedRegistry {
        &self.registry
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// No nodes may be added after this.
    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn node_shape(&self, node: NodeRef) -> Result<&[usize]> {
        Ok(&self.nodes[self.own(node)?].shape)
    }

    pub fn count_tag(&self, tag: &str) -> usize {
        self.nodes.iter().filter(|n| n.tag == Some(tag)).count()
    }

    pub(crate) fn set_node_tag(&mut self, node: NodeRef, tag: &'static str) -> Result<()> {
        let idx = self.own(node)?;
        self.nodes[idx].tag = Some(tag);
        Ok(())
    }

    fn own(&self, node: NodeRef) -> Result<usize> {
        if node.graph != self.id || node.index >= self.nodes.len() {
            return Err(Error::ForeignNode(format!("#{}", node.index)));
        }
        Ok(node.index)
    }

    fn node_label(&self, index: usize) -> String {
        format!("node#{index} ({})", self.nodes[index].op.label())
    }

    fn push(&mut self, op: OpKind, inputs: Vec<usize>, shape: Vec<usize>) -> Result<NodeRef> {
        if self.frozen {
            return Err(Error::FrozenGraph);
        }
        let index = self.nodes.len();
        self.nodes.push(Node {
            op,
            inputs,
            shape,
            tag: None,
        });
        Ok(NodeRef {
            graph: self.id,
            index,
        })
    }

    /// Feedable placeholder. Forward fails if it is left unfed.
    pub fn input(&mut self, shape: &[usize]) -> Result<NodeRef> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::ShapeMismatch {
                node: "input".into(),
                detail: format!("extents must be >= 1, got {shape:?}"),
            });
        }
        self.push(OpKind::Input, vec![], shape.to_vec())
    }

    /// Node aliasing the registry storage under `name`. The first call per
    /// name initializes storage; later calls (from any graph on the same
    /// registry) must match the registered shape and share the weights.
    pub fn parameter(&mut self, name: &str, shape: &[usize], init: Init) -> Result<NodeRef> {
        if self.frozen {
            return Err(Error::FrozenGraph);
        }
        self.registry.write().get_or_create(name, shape, &init)?;
        self.push(OpKind::Parameter(name.to_string()), vec![], shape.to_vec())
    }

    pub fn matmul(&mut self, a: NodeRef, b: NodeRef) -> Result<NodeRef> {
        let ia = self.own(a)?;
        let ib = self.own(b)?;
        let sa = self.nodes[ia].shape.clone();
        let sb = self.nodes[ib].shape.clone();
        let out_shape = match (sa.as_slice(), sb.as_slice()) {
            ([k], [k2, c]) if k == k2 => vec![*c],
            ([r, k], [k2, c]) if k == k2 => vec![*r, *c],
            _ => {
                return Err(Error::ShapeMismatch {
                    node: format!("matmul of {} and {}", self.node_label(ia), self.node_label(ib)),
                    detail: format!("non-conformable shapes {sa:?} x {sb:?}"),
                })
            }
        };
        self.push(OpKind::MatMul, vec![ia, ib], out_shape)
    }

    pub fn add_bias(&mut self, x: NodeRef, b: NodeRef) -> Result<NodeRef> {
        let ix = self.own(x)?;
        let ib = self.own(b)?;
        let sx = self.nodes[ix].shape.clone();
        let sb = self.nodes[ib].shape.clone();
        let ok = match (sx.as_slice(), sb.as_slice()) {
            ([m], [m2]) => m == m2,
            ([_, c], [c2]) => c == c2,
            _ => false,
        };
        if !ok {
            return Err(Error::ShapeMismatch {
                node: format!("add_bias of {} and {}", self.node_label(ix), self.node_label(ib)),
                detail: format!("cannot broadcast {sb:?} onto {sx:?}"),
            });
        }
        self.push(OpKind::AddBias, vec![ix, ib], sx)
    }

    pub fn activation(&mut self, x: NodeRef, kind: Activation) -> Result<NodeRef> {
        let ix = self.own(x)?;
        let shape = self.nodes[ix].shape.clone();
        self.push(OpKind::Activation(kind), vec![ix], shape)
    }

    /// Concatenation along the last axis.
    pub fn concat(&mut self, parts: &[NodeRef]) -> Result<NodeRef> {
        if parts.is_empty() {
            return Err(Error::ShapeMismatch {
                node: "concat".into(),
                detail: "needs at least one part".into(),
            });
        }
        let idxs: Vec<usize> = parts
            .iter()
            .map(|p| self.own(*p))
            .collect::<Result<_>>()?;
        let first = self.nodes[idxs[0]].shape.clone();
        let out_shape = match first.as_slice() {
            [_] => {
                let mut total = 0;
                for &i in &idxs {
                    match self.nodes[i].shape.as_slice() {
                        [m] => total += m,
                        _ => {
                            return Err(Error::ShapeMismatch {
                                node: format!("concat including {}", self.node_label(i)),
                                detail: "mixed ranks".into(),
                            })
                        }
                    }
                }
                vec![total]
            }
            [rows, _] => {
                let mut total = 0;
                for &i in &idxs {
                    match self.nodes[i].shape.as_slice() {
                        [r, c] if r == rows => total += c,
                        other => {
                            return Err(Error::ShapeMismatch {
                                node: format!("concat including {}", self.node_label(i)),
                                detail: format!("expected [{rows}, _], got {other:?}"),
                            })
                        }
                    }
                }
                vec![*rows, total]
            }
            other => {
                return Err(Error::ShapeMismatch {
                    node: "concat".into(),
                    detail: format!("unsupported rank {other:?}"),
                })
            }
        };
        self.push(OpKind::Concat, idxs, out_shape)
    }

    /// Element-wise average of `parts`, which must all share one shape.
    pub fn mean_of(&mut self, parts: &[NodeRef]) -> Result<NodeRef> {
        let (idxs, shape) = self.reduction_inputs("mean_of", parts)?;
        self.push(OpKind::MeanOf, idxs, shape)
    }

    pub(crate) fn sum_of(&mut self, parts: &[NodeRef]) -> Result<NodeRef> {
        let (idxs, shape) = self.reduction_inputs("sum_of", parts)?;
        self.push(OpKind::SumOf, idxs, shape)
    }

    fn reduction_inputs(&mut self, what: &str, parts: &[NodeRef]) -> Result<(Vec<usize>, Vec<usize>)> {
        if parts.is_empty() {
            return Err(Error::ShapeMismatch {
                node: what.into(),
                detail: "needs at least one part".into(),
            });
        }
        let idxs: Vec<usize> = parts
            .iter()
            .map(|p| self.own(*p))
            .collect::<Result<_>>()?;
        let shape = self.nodes[idxs[0]].shape.clone();
        for &i in &idxs {
            if self.nodes[i].shape != shape {
                return Err(Error::ShapeMismatch {
                    node: format!("{what} including {}", self.node_label(i)),
                    detail: format!("expected {shape:?}, got {:?}", self.nodes[i].shape),
                });
            }
        }
        Ok((idxs, shape))
    }

    /// Scalar loss `-log softmax(logits)[label]`. `logits` must be a 2-vector
    /// and `label` a 1-vector holding 0 or 1, checked when fed.
    pub fn softmax_xent(&mut self, logits: NodeRef, label: NodeRef) -> Result<NodeRef> {
        let il = self.own(logits)?;
        let iy = self.own(label)?;
        if self.nodes[il].shape != [2] {
            return Err(Error::ShapeMismatch {
                node: format!("softmax_xent over {}", self.node_label(il)),
                detail: format!("logits must have shape [2], got {:?}", self.nodes[il].shape),
            });
        }
        if self.nodes[iy].shape != [1] {
            return Err(Error::ShapeMismatch {
                node: format!("softmax_xent label {}", self.node_label(iy)),
                detail: format!("label must have shape [1], got {:?}", self.nodes[iy].shape),
            });
        }
        self.push(OpKind::SoftmaxXent, vec![il, iy], vec![1])
    }

    /// Row `i` of a matrix node, as a vector.
    pub fn slice_row(&mut self, x: NodeRef, row: usize) -> Result<NodeRef> {
        let ix = self.own(x)?;
        let shape = self.nodes[ix].shape.clone();
        match shape.as_slice() {
            [r, c] if row < *r => self.push(OpKind::SliceRow(row), vec![ix], vec![*c]),
            [r, _] => Err(Error::ShapeMismatch {
                node: format!("slice_row of {}", self.node_label(ix)),
                detail: format!("row {row} out of range for {r} rows"),
            }),
            other => Err(Error::ShapeMismatch {
                node: format!("slice_row of {}", self.node_label(ix)),
                detail: format!("expected a matrix, got shape {other:?}"),
            }),
        }
    }

    /// Evaluate every node. Deterministic: identical feeds and parameter
    /// values produce bit-identical outputs.
    pub fn forward(&self, feeds: &HashMap<NodeRef, TensorValue>) -> Result<ForwardValues> {
        for node in feeds.keys() {
            let idx = self.own(*node)?;
            if self.nodes[idx].op != OpKind::Input {
                return Err(Error::ShapeMismatch {
                    node: self.node_label(idx),
                    detail: "only input nodes can be fed".into(),
                });
            }
        }
        let registry = self.registry.read();
        let mut values: Vec<TensorValue> = Vec::with_capacity(self.nodes.len());
        for (idx, node) in self.nodes.iter().enumerate() {
            let value = match &node.op {
                OpKind::Input => {
                    let fed = feeds
                        .get(&NodeRef {
                            graph: self.id,
                            index: idx,
                        })
                        .ok_or_else(|| Error::UnfedInput(self.node_label(idx)))?;
                    if fed.shape() != node.shape.as_slice() {
                        return Err(Error::ShapeMismatch {
                            node: self.node_label(idx),
                            detail: format!("fed shape {:?}, declared {:?}", fed.shape(), node.shape),
                        });
                    }
                    fed.clone()
                }
                OpKind::Parameter(name) => {
                    let entry = registry.entry(name)?;
                    TensorValue::new(entry.shape().to_vec(), entry.value().to_vec())?
                }
                OpKind::MatMul => {
                    let a = &values[node.inputs[0]];
                    let b = &values[node.inputs[1]];
                    matmul_forward(a, b, &node.shape)
                }
                OpKind::AddBias => {
                    let x = &values[node.inputs[0]];
                    let b = &values[node.inputs[1]];
                    add_bias_forward(x, b)
                }
                OpKind::Activation(kind) => {
                    let x = &values[node.inputs[0]];
                    let data = match kind {
                        Activation::Relu => x.data().iter().map(|v| v.max(0.0)).collect(),
                        Activation::Tanh => x.data().iter().map(|v| v.tanh()).collect(),
                    };
                    TensorValue::new(node.shape.clone(), data)?
                }
                OpKind::Concat => concat_forward(&node.inputs, &values, &node.shape),
                OpKind::MeanOf => mean_forward(&node.inputs, &values, &node.shape),
                OpKind::SumOf => sum_forward(&node.inputs, &values, &node.shape),
                OpKind::SoftmaxXent => {
                    let logits = values[node.inputs[0]].data();
                    let label = values[node.inputs[1]].data()[0];
                    let idx_label = label_index(label)?;
                    let (loss, _p) = xent_loss(logits, idx_label);
                    TensorValue::scalar(loss)
                }
                OpKind::SliceRow(row) => {
                    let x = &values[node.inputs[0]];
                    let cols = node.shape[0];
                    let start = row * cols;
                    TensorValue::vector(x.data()[start..start + cols].to_vec())
                }
            };
            if !value.all_finite() {
                return Err(Error::NonFinite(self.node_label(idx)));
            }
            values.push(value);
        }
        Ok(ForwardValues {
            graph: self.id,
            values,
        })
    }

    /// Reverse-mode gradients of a scalar loss with respect to every
    /// registered parameter. Grads are zeroed first, then accumulated as the
    /// sum over all aliasing uses of each parameter.
    pub fn backward(&self, loss: NodeRef, values: &ForwardValues) -> Result<()> {
        let loss_idx = self.own(loss)?;
        assert_eq!(values.graph, self.id, "forward values from a different graph");
        if self.nodes[loss_idx].shape != [1] {
            return Err(Error::NonScalarLoss(self.nodes[loss_idx].shape.clone()));
        }
        let mut registry = self.registry.write();
        registry.zero_grads();

        let mut adjoints: Vec<Option<Vec<f64>>> = vec![None; loss_idx + 1];
        adjoints[loss_idx] = Some(vec![1.0]);

        for idx in (0..=loss_idx).rev() {
            let Some(adj) = adjoints[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                OpKind::Input => {}
                OpKind::Parameter(name) => registry.add_grad(name, &adj),
                OpKind::MatMul => {
                    let (ia, ib) = (node.inputs[0], node.inputs[1]);
                    let a = &values.values[ia];
                    let b = &values.values[ib];
                    let (da, db) = matmul_backward(a, b, &adj);
                    add_adjoint(&mut adjoints, ia, a.len(), &da);
                    add_adjoint(&mut adjoints, ib, b.len(), &db);
                }
                OpKind::AddBias => {
                    let (ix, ib) = (node.inputs[0], node.inputs[1]);
                    let x = &values.values[ix];
                    let b = &values.values[ib];
                    add_adjoint(&mut adjoints, ix, x.len(), &adj);
                    if x.shape().len() == 1 {
                        add_adjoint(&mut adjoints, ib, b.len(), &adj);
                    } else {
                        let cols = b.len();
                        let mut db = vec![0.0; cols];
                        for (i, g) in adj.iter().enumerate() {
                            db[i % cols] += g;
                        }
                        add_adjoint(&mut adjoints, ib, cols, &db);
                    }
                }
                OpKind::Activation(kind) => {
                    let ix = node.inputs[0];
                    let x = values.values[ix].data();
                    let y = values.values[idx].data();
                    let dx: Vec<f64> = match kind {
                        Activation::Relu => adj
                            .iter()
                            .zip(x)
                            .map(|(g, xi)| if *xi > 0.0 { *g } else { 0.0 })
                            .collect(),
                        Activation::Tanh => adj
                            .iter()
                            .zip(y)
                            .map(|(g, yi)| g * (1.0 - yi * yi))
                            .collect(),
                    };
                    add_adjoint(&mut adjoints, ix, x.len(), &dx);
                }
                OpKind::Concat => {
                    let rank = node.shape.len();
                    if rank == 1 {
                        let mut offset = 0;
                        for &ip in &node.inputs {
                            let len = values.values[ip].len();
                            add_adjoint(&mut adjoints, ip, len, &adj[offset..offset + len]);
                            offset += len;
                        }
                    } else {
                        let rows = node.shape[0];
                        let total_cols = node.shape[1];
                        let mut col_offset = 0;
                        for &ip in &node.inputs {
                            let cols = values.values[ip].shape()[1];
                            let mut dp = vec![0.0; rows * cols];
                            for r in 0..rows {
                                let src = r * total_cols + col_offset;
                                dp[r * cols..(r + 1) * cols]
                                    .copy_from_slice(&adj[src..src + cols]);
                            }
                            add_adjoint(&mut adjoints, ip, rows * cols, &dp);
                            col_offset += cols;
                        }
                    }
                }
                OpKind::MeanOf => {
                    let k = node.inputs.len() as f64;
                    let scaled: Vec<f64> = adj.iter().map(|g| g / k).collect();
                    for &ip in &node.inputs {
                        add_adjoint(&mut adjoints, ip, scaled.len(), &scaled);
                    }
                }
                OpKind::SumOf => {
                    for &ip in &node.inputs {
                        add_adjoint(&mut adjoints, ip, adj.len(), &adj);
                    }
                }
                OpKind::SoftmaxXent => {
                    let il = node.inputs[0];
                    let logits = values.values[il].data();
                    let label = values.values[node.inputs[1]].data()[0];
                    let idx_label = label_index(label)?;
                    let (_loss, p) = xent_loss(logits, idx_label);
                    let mut dl = vec![p[0] * adj[0], p[1] * adj[0]];
                    dl[idx_label] -= adj[0];
                    add_adjoint(&mut adjoints, il, 2, &dl);
                }
                OpKind::SliceRow(row) => {
                    let ix = node.inputs[0];
                    let x = &values.values[ix];
                    let cols = node.shape[0];
                    let len = x.len();
                    let slot = adjoints[ix].get_or_insert_with(|| vec![0.0; len]);
                    for (c, g) in adj.iter().enumerate() {
                        slot[row * cols + c] += g;
                    }
                }
            }
        }
        Ok(())
    }
}

fn add_adjoint(adjoints: &mut [Option<Vec<f64>>], idx: usize, len: usize, delta: &[f64]) {
    let slot = adjoints[idx].get_or_insert_with(|| vec![0.0; len]);
    for (s, d) in slot.iter_mut().zip(delta) {
        *s += d;
    }
}

fn label_index(label: f64) -> Result<usize> {
    if label == 0.0 {
        Ok(0)
    } else if label == 1.0 {
        Ok(1)
    } else {
        Err(Error::LabelOutOfRange(label))
    }
}

/// Numerically stable loss and probabilities for a 2-way softmax.
pub(crate) fn xent_loss(logits: &[f64], label: usize) -> (f64, [f64; 2]) {
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    let z = e0 + e1;
    let p = [e0 / z, e1 / z];
    let loss = z.ln() - (logits[label] - m);
    (loss, p)
}

/// Membership softmax over a 2-vector of logits.
pub fn softmax2(logits: &[f64]) -> [f64; 2] {
    xent_loss(logits, 0).1
}

fn matmul_forward(a: &TensorValue, b: &TensorValue, out_shape: &[usize]) -> TensorValue {
    let bd = b.data();
    let ad = a.data();
    match (a.shape(), b.shape()) {
        ([k], [_, c]) => {
            let mut out = vec![0.0; *c];
            for (i, &ai) in ad.iter().enumerate().take(*k) {
                let row = &bd[i * c..(i + 1) * c];
                for (o, &bv) in out.iter_mut().zip(row) {
                    *o += ai * bv;
                }
            }
            TensorValue::vector(out)
        }
        ([r, k], [_, c]) => {
            let mut out = vec![0.0; r * c];
            for i in 0..*r {
                for l in 0..*k {
                    let av = ad[i * k + l];
                    let brow = &bd[l * c..(l + 1) * c];
                    let orow = &mut out[i * c..(i + 1) * c];
                    for (o, &bv) in orow.iter_mut().zip(brow) {
                        *o += av * bv;
                    }
                }
            }
            TensorValue::new(out_shape.to_vec(), out).expect("matmul shape")
        }
        _ => unreachable!("shapes validated at construction"),
    }
}

fn matmul_backward(a: &TensorValue, b: &TensorValue, dout: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let ad = a.data();
    let bd = b.data();
    match (a.shape(), b.shape()) {
        ([k], [_, c]) => {
            let mut da = vec![0.0; *k];
            let mut db = vec![0.0; k * c];
            for i in 0..*k {
                let brow = &bd[i * c..(i + 1) * c];
                let mut acc = 0.0;
                for (g, &bv) in dout.iter().zip(brow) {
                    acc += g * bv;
                }
                da[i] = acc;
                let ai = ad[i];
                let dbrow = &mut db[i * c..(i + 1) * c];
                for (d, g) in dbrow.iter_mut().zip(dout) {
                    *d += ai * g;
                }
            }
            (da, db)
        }
        ([r, k], [_, c]) => {
            let mut da = vec![0.0; r * k];
            let mut db = vec![0.0; k * c];
            for i in 0..*r {
                let gout = &dout[i * c..(i + 1) * c];
                for l in 0..*k {
                    let brow = &bd[l * c..(l + 1) * c];
                    let mut acc = 0.0;
                    for (g, &bv) in gout.iter().zip(brow) {
                        acc += g * bv;
                    }
                    da[i * k + l] = acc;
                    let av = ad[i * k + l];
                    let dbrow = &mut db[l * c..(l + 1) * c];
                    for (d, g) in dbrow.iter_mut().zip(gout) {
                        *d += av * g;
                    }
                }
            }
            (da, db)
        }
        _ => unreachable!("shapes validated at construction"),
    }
}

fn add_bias_forward(x: &TensorValue, b: &TensorValue) -> TensorValue {
    let bd = b.data();
    let data: Vec<f64> = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, v)| v + bd[i % bd.len()])
        .collect();
    TensorValue::new(x.shape().to_vec(), data).expect("add_bias shape")
}

fn concat_forward(inputs: &[usize], values: &[TensorValue], out_shape: &[usize]) -> TensorValue {
    if out_shape.len() == 1 {
        let mut data = Vec::with_capacity(out_shape[0]);
        for &i in inputs {
            data.extend_from_slice(values[i].data());
        }
        TensorValue::vector(data)
    } else {
        let rows = out_shape[0];
        let total_cols = out_shape[1];
        let mut data = vec![0.0; rows * total_cols];
        let mut col_offset = 0;
        for &i in inputs {
            let part = &values[i];
            let cols = part.shape()[1];
            for r in 0..rows {
                let dst = r * total_cols + col_offset;
                data[dst..dst + cols].copy_from_slice(&part.data()[r * cols..(r + 1) * cols]);
            }
            col_offset += cols;
        }
        TensorValue::new(out_shape.to_vec(), data).expect("concat shape")
    }
}

/// Element-wise average. For three or more parts the mean is computed as
/// `p0 + sum(p_i - p0)/k`, which returns identical inputs unchanged
/// bit-for-bit; for two parts the plain `(a+b)/2` keeps the result exactly
/// symmetric in argument order.
fn mean_forward(inputs: &[usize], values: &[TensorValue], out_shape: &[usize]) -> TensorValue {
    let k = inputs.len();
    let first = values[inputs[0]].data();
    let data: Vec<f64> = match k {
        1 => first.to_vec(),
        2 => {
            let second = values[inputs[1]].data();
            first
                .iter()
                .zip(second)
                .map(|(a, b)| (a + b) / 2.0)
                .collect()
        }
        _ => {
            let mut acc = vec![0.0; first.len()];
            for &i in &inputs[1..] {
                for (a, (v, f)) in acc.iter_mut().zip(values[i].data().iter().zip(first)) {
                    *a += v - f;
                }
            }
            first
                .iter()
                .zip(&acc)
                .map(|(f, a)| f + a / k as f64)
                .collect()
        }
    };
    TensorValue::new(out_shape.to_vec(), data).expect("mean shape")
}

fn sum_forward(inputs: &[usize], values: &[TensorValue], out_shape: &[usize]) -> TensorValue {
    let mut data = values[inputs[0]].data().to_vec();
    for &i in &inputs[1..] {
        for (a, v) in data.iter_mut().zip(values[i].data()) {
            *a += v;
        }
    }
    TensorValue::new(out_shape.to_vec(), data).expect("sum shape")
}
