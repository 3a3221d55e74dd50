//! Static reverse-mode differentiation graph.
//!
//! A [`Graph`] is built once and evaluated many times. Node values live in a
//! separate [`Evaluation`], so one graph can be evaluated from several
//! threads at once; parameters are stored on the graph itself.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::layers;
use crate::loss::{self, LossConfig};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::{Error, Result};

pub type NodeId = usize;
pub type Feeds = BTreeMap<String, Tensor>;

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    /// Fed at evaluation time; `None` extents are free (batch, spatial).
    Input { dims: Vec<Option<usize>> },
    /// Trainable tensor stored on the node.
    Param(Tensor),
    Add,
    Sub,
    Mul,
    Scale(f64),
    /// Sum of all elements, shape `[1]`.
    Sum,
    Relu,
    Sigmoid,
    /// `[x, kernel, bias]`, stride 1, "same" padding.
    Conv2d,
    /// `[x, kernel, bias]`, 2×2 stride-2 transposed convolution.
    ConvTranspose2,
    MaxPool2,
    /// Channel concatenation in input order.
    Concat,
    /// `[labels, probabilities]` → scalar hybrid loss.
    HybridLoss(LossConfig),
    /// Weighted sum of scalar inputs.
    WeightedSum(Vec<f64>),
}

impl Op {
    pub fn tag(&self) -> &'static str {
        match self {
            Op::Input { .. } => "input",
            Op::Param(_) => "param",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Scale(_) => "scale",
            Op::Sum => "sum",
            Op::Relu => "relu",
            Op::Sigmoid => "sigmoid",
            Op::Conv2d => "conv2d",
            Op::ConvTranspose2 => "conv_transpose2",
            Op::MaxPool2 => "max_pool2",
            Op::Concat => "concat",
            Op::HybridLoss(_) => "hybrid_loss",
            Op::WeightedSum(_) => "weighted_sum",
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            Op::Input { .. } | Op::Param(_) => Some(0),
            Op::Add | Op::Sub | Op::Mul | Op::HybridLoss(_) => Some(2),
            Op::Scale(_) | Op::Sum | Op::Relu | Op::Sigmoid | Op::MaxPool2 => Some(1),
            Op::Conv2d | Op::ConvTranspose2 => Some(3),
            Op::Concat => None,
            Op::WeightedSum(w) => Some(w.len()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub name: String,
    pub op: Op,
    pub inputs: Vec<NodeId>,
}

impl Node {
    pub fn is_param(&self) -> bool {
        matches!(self.op, Op::Param(_))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Graph {
    nodes: Vec<Node>,
    by_name: BTreeMap<String, NodeId>,
    outputs: Vec<(String, NodeId)>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a node; inputs must already exist, which keeps the order topological.
    pub fn push(&mut self, name: impl Into<String>, op: Op, inputs: &[NodeId]) -> Result<NodeId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::DuplicateNode(name));
        }
        if let Some(&bad) = inputs.iter().find(|&&i| i >= self.nodes.len()) {
            return Err(Error::Contract(format!("node `{name}` references missing input #{bad}")));
        }
        match op.arity() {
            Some(k) if k != inputs.len() => {
                return Err(Error::Contract(format!(
                    "node `{name}` ({}) takes {k} inputs, got {}",
                    op.tag(),
                    inputs.len()
                )))
            }
            None if inputs.is_empty() => {
                return Err(Error::Contract(format!("node `{name}` needs at least one input")))
            }
            _ => {}
        }
        let id = self.nodes.len();
        self.by_name.insert(name.clone(), id);
        self.nodes.push(Node {
            name,
            op,
            inputs: inputs.to_vec(),
        });
        Ok(id)
    }

    pub fn input(&mut self, name: impl Into<String>, dims: &[Option<usize>]) -> Result<NodeId> {
        self.push(name, Op::Input { dims: dims.to_vec() }, &[])
    }

    pub fn add_param(&mut self, name: impl Into<String>, value: Tensor) -> Result<NodeId> {
        self.push(name, Op::Param(value), &[])
    }

    pub fn op(&mut self, name: impl Into<String>, op: Op, inputs: &[NodeId]) -> Result<NodeId> {
        self.push(name, op, inputs)
    }

    pub fn mark_output(&mut self, label: impl Into<String>, id: NodeId) {
        self.outputs.push((label.into(), id));
    }

    pub fn outputs(&self) -> &[(String, NodeId)] {
        &self.outputs
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn id(&self, name: &str) -> Result<NodeId> {
        self.by_name.get(name).copied().ok_or_else(|| Error::UnknownNode(name.into()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.by_name.contains_key(name)
    }

    pub fn param_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().enumerate().filter(|(_, n)| n.is_param()).map(|(i, _)| i)
    }

    /// `(name, value)` of every trainable tensor, in node order.
    pub fn params(&self) -> impl Iterator<Item = (&str, &Tensor)> + '_ {
        self.nodes.iter().filter_map(|n| match &n.op {
            Op::Param(t) => Some((n.name.as_str(), t)),
            _ => None,
        })
    }

    pub fn param(&self, name: &str) -> Result<&Tensor> {
        match &self.nodes[self.id(name)?].op {
            Op::Param(t) => Ok(t),
            _ => Err(Error::Contract(format!("`{name}` is not a parameter"))),
        }
    }

    pub fn param_mut(&mut self, id: NodeId) -> Result<&mut Tensor> {
        let node = &mut self.nodes[id];
        match &mut node.op {
            Op::Param(t) => Ok(t),
            _ => Err(Error::Contract(format!("`{}` is not a parameter", node.name))),
        }
    }

    /// Replaces a parameter's value; the shape must not change.
    pub fn set_param(&mut self, name: &str, value: Tensor) -> Result<()> {
        let id = self.id(name)?;
        let slot = self.param_mut(id)?;
        if slot.shape() != value.shape() {
            return Err(Error::shape(format!(
                "parameter `{name}` has shape {:?}, got {:?}",
                slot.shape(),
                value.shape()
            )));
        }
        *slot = value;
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.params().map(|(_, t)| t.len()).sum()
    }

    /// Ancestors of `roots`, including the roots.
    pub fn ancestors(&self, roots: &[NodeId]) -> Vec<bool> {
        let mut keep = vec![false; self.nodes.len()];
        for &r in roots {
            keep[r] = true;
        }
        for id in (0..self.nodes.len()).rev() {
            if keep[id] {
                for &i in &self.nodes[id].inputs {
                    keep[i] = true;
                }
            }
        }
        keep
    }

    /// The sub-graph needed to compute `outputs`, with parameters copied and
    /// node order preserved. The listed nodes become the outputs.
    pub fn subgraph(&self, outputs: &[&str]) -> Result<Graph> {
        let roots: Vec<NodeId> = outputs.iter().map(|n| self.id(n)).collect::<Result<_>>()?;
        let keep = self.ancestors(&roots);
        let mut remap = vec![usize::MAX; self.nodes.len()];
        let mut g = Graph::new();
        for (id, node) in self.nodes.iter().enumerate() {
            if !keep[id] {
                continue;
            }
            let inputs: Vec<NodeId> = node.inputs.iter().map(|&i| remap[i]).collect();
            remap[id] = g.push(node.name.clone(), node.op.clone(), &inputs)?;
        }
        for (name, &r) in outputs.iter().zip(&roots) {
            g.mark_output(*name, remap[r]);
        }
        Ok(g)
    }

    /// Evaluates every node in topological order.
    pub fn forward(&self, feeds: &Feeds) -> Result<Evaluation<'_>> {
        self.evaluate(feeds, None)
    }

    /// Evaluates only what `targets` depend on.
    pub fn forward_to(&self, feeds: &Feeds, targets: &[&str]) -> Result<Evaluation<'_>> {
        let roots: Vec<NodeId> = targets.iter().map(|n| self.id(n)).collect::<Result<_>>()?;
        let mask = self.ancestors(&roots);
        self.evaluate(feeds, Some(&mask))
    }

    fn evaluate(&self, feeds: &Feeds, mask: Option<&[bool]>) -> Result<Evaluation<'_>> {
        let mut values: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        for (id, node) in self.nodes.iter().enumerate() {
            if mask.is_some_and(|m| !m[id]) {
                continue;
            }
            let v = {
                let get = |k: usize| -> &Tensor {
                    let i = node.inputs[k];
                    match &self.nodes[i].op {
                        Op::Param(t) => t,
                        _ => values[i].as_ref().expect("inputs precede their consumers"),
                    }
                };
                forward_node(node, feeds, get).map_err(|e| e.at_node(&node.name))?
            };
            values[id] = v;
        }
        Ok(Evaluation { graph: self, values })
    }

    /// Gradients of the scalar `loss` with respect to every parameter.
    pub fn backward(&self, eval: &Evaluation<'_>, loss: &str) -> Result<Gradients> {
        let loss_id = self.id(loss)?;
        let lv = eval.value_by_id(loss_id).ok_or_else(|| Error::Contract(format!("`{loss}` was not evaluated")))?;
        if lv.shape() != [1] {
            return Err(Error::Contract(format!(
                "loss `{loss}` must have shape [1], has {:?}",
                lv.shape()
            )));
        }
        // only propagate into nodes that lead to a parameter
        let mut needs = vec![false; self.nodes.len()];
        for (id, node) in self.nodes.iter().enumerate() {
            needs[id] = node.is_param() || node.inputs.iter().any(|&i| needs[i]);
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss_id] = Some(Tensor::scalar(1.0));
        for id in (0..=loss_id).rev() {
            let node = &self.nodes[id];
            if node.inputs.is_empty() || !needs[id] {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let input_grads = backward_node(node, eval, &g).map_err(|e| e.at_node(&node.name))?;
            for (&inp, ig) in node.inputs.iter().zip(input_grads) {
                let Some(ig) = ig else { continue };
                if !needs[inp] {
                    continue;
                }
                match &mut grads[inp] {
                    Some(acc) => acc.add_assign(&ig)?,
                    slot @ None => *slot = Some(ig),
                }
            }
        }
        let by_param = self
            .param_ids()
            .map(|id| {
                let t = grads[id].take().unwrap_or_else(|| match &self.nodes[id].op {
                    Op::Param(p) => p.zeros_like(),
                    _ => unreachable!(),
                });
                (id, t)
            })
            .collect();
        Ok(Gradients { by_param })
    }
}

/// Node values from one forward pass.
#[derive(Debug, Clone)]
pub struct Evaluation<'g> {
    graph: &'g Graph,
    values: Vec<Option<Tensor>>,
}

impl<'g> Evaluation<'g> {
    pub fn value_by_id(&self, id: NodeId) -> Option<&Tensor> {
        match &self.graph.nodes[id].op {
            Op::Param(t) => Some(t),
            _ => self.values[id].as_ref(),
        }
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        let id = self.graph.id(name)?;
        self.value_by_id(id)
            .ok_or_else(|| Error::Contract(format!("`{name}` was not evaluated")))
    }

    /// Output label → value for the graph's marked outputs that were computed.
    pub fn outputs(&self) -> BTreeMap<String, Tensor> {
        self.graph
            .outputs
            .iter()
            .filter_map(|(label, id)| self.value_by_id(*id).map(|v| (label.clone(), v.clone())))
            .collect()
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        let v = self.value(name)?;
        v.item().ok_or_else(|| Error::Contract(format!("`{name}` is not a scalar")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    by_param: Vec<(NodeId, Tensor)>,
}

impl Gradients {
    /// `(node id, gradient)` for every parameter in node order.
    pub fn iter(&self) -> impl Iterator<Item = &(NodeId, Tensor)> {
        self.by_param.iter()
    }

    pub fn get(&self, graph: &Graph, name: &str) -> Result<&Tensor> {
        let id = graph.id(name)?;
        self.by_param
            .iter()
            .find(|(i, _)| *i == id)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Contract(format!("`{name}` is not a parameter")))
    }

    pub fn to_map(&self, graph: &Graph) -> BTreeMap<String, Tensor> {
        self.by_param
            .iter()
            .map(|(id, t)| (graph.node(*id).name.clone(), t.clone()))
            .collect()
    }
}

fn same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!("operand shapes {:?} and {:?} differ", a.shape(), b.shape())));
    }
    Ok(())
}

fn forward_node<'a>(node: &Node, feeds: &Feeds, get: impl Fn(usize) -> &'a Tensor) -> Result<Option<Tensor>> {
    let out = match &node.op {
        Op::Param(_) => return Ok(None),
        Op::Input { dims } => {
            let t = feeds.get(&node.name).ok_or_else(|| Error::MissingFeed(node.name.clone()))?;
            let ok = t.rank() == dims.len() && t.shape().iter().zip(dims).all(|(&e, d)| d.is_none_or(|d| d == e));
            if !ok {
                return Err(Error::shape(format!("fed shape {:?} does not match {:?}", t.shape(), dims)));
            }
            t.clone()
        }
        Op::Add => {
            same_shape(get(0), get(1))?;
            get(0).add(get(1))?
        }
        Op::Sub => {
            same_shape(get(0), get(1))?;
            get(0).sub(get(1))?
        }
        Op::Mul => {
            same_shape(get(0), get(1))?;
            get(0).mul(get(1))?
        }
        Op::Scale(c) => get(0).scale(*c),
        Op::Sum => Tensor::scalar(get(0).sum_all()),
        Op::Relu => layers::relu(get(0)),
        Op::Sigmoid => layers::sigmoid(get(0)),
        Op::Conv2d => layers::conv2d(get(0), get(1), get(2))?,
        Op::ConvTranspose2 => layers::conv_transpose2(get(0), get(1), get(2))?,
        Op::MaxPool2 => layers::max_pool2(get(0))?,
        Op::Concat => {
            let parts: Vec<&Tensor> = (0..node.inputs.len()).map(&get).collect();
            Tensor::concat_channels(&parts)?
        }
        Op::HybridLoss(cfg) => Tensor::scalar(loss::hybrid_loss(get(0), get(1), cfg)?),
        Op::WeightedSum(w) => {
            let mut s = 0.0;
            for (k, wk) in w.iter().enumerate() {
                let v = get(k);
                s += wk * v.item().ok_or_else(|| Error::shape(format!("weighted sum input {k} is not a scalar")))?;
            }
            Tensor::scalar(s)
        }
    };
    Ok(Some(out))
}

/// Gradient contributions for each input of `node`, in input order.
fn backward_node(node: &Node, eval: &Evaluation<'_>, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
    let val = |k: usize| -> Result<&Tensor> {
        eval.value_by_id(node.inputs[k])
            .ok_or_else(|| Error::Contract("input was not evaluated".to_string()))
    };
    Ok(match &node.op {
        Op::Input { .. } | Op::Param(_) => Vec::new(),
        Op::Add => vec![Some(g.clone()), Some(g.clone())],
        Op::Sub => vec![Some(g.clone()), Some(g.scale(-1.0))],
        Op::Mul => vec![Some(g.mul(val(1)?)?), Some(g.mul(val(0)?)?)],
        Op::Scale(c) => vec![Some(g.scale(*c))],
        Op::Sum => {
            let s = g.item().unwrap_or(0.0);
            vec![Some(val(0)?.map(|_| s))]
        }
        Op::Relu => vec![Some(layers::relu_backward(val(0)?, g))],
        Op::Sigmoid => {
            let y = eval.value_by_id(eval.graph.id(&node.name)?).expect("evaluated");
            vec![Some(layers::sigmoid_backward(y, g))]
        }
        Op::Conv2d => {
            let (gx, gk, gb) = layers::conv2d_backward(val(0)?, val(1)?, g)?;
            vec![Some(gx), Some(gk), Some(gb)]
        }
        Op::ConvTranspose2 => {
            let (gx, gk, gb) = layers::conv_transpose2_backward(val(0)?, val(1)?, g)?;
            vec![Some(gx), Some(gk), Some(gb)]
        }
        Op::MaxPool2 => vec![Some(layers::max_pool2_backward(val(0)?, g)?)],
        Op::Concat => {
            let counts: Vec<usize> = (0..node.inputs.len())
                .map(|k| val(k).map(|t| t.shape()[1]))
                .collect::<Result<_>>()?;
            g.split_channels(&counts)?.into_iter().map(Some).collect()
        }
        Op::HybridLoss(cfg) => {
            let s = g.item().unwrap_or(0.0);
            let gp = loss::hybrid_loss_grad(val(0)?, val(1)?, cfg)?.scale(s);
            vec![None, Some(gp)]
        }
        Op::WeightedSum(w) => {
            let s = g.item().unwrap_or(0.0);
            w.iter().map(|wk| Some(Tensor::scalar(wk * s))).collect()
        }
    })
}

/// Outcome of [`finite_diff_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_error: f64,
    /// `(parameter, flat index, analytic, numeric)` at the largest error.
    pub worst: Option<(String, usize, f64, f64)>,
    pub tolerance: f64,
    pub passed: bool,
}

/// Step used by [`finite_diff_check`].
pub const FD_STEP: f64 = 1e-5;
/// Coordinates sampled by [`finite_diff_check`] at most.
pub const FD_MAX_COORDS: usize = 200;

/// Relative error, falling back to absolute when both magnitudes are below 1e-8.
pub fn gradient_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if analytic.abs() < 1e-8 && numeric.abs() < 1e-8 {
        diff
    } else {
        diff / analytic.abs().max(numeric.abs())
    }
}

/// Compares analytic gradients with central differences
/// `(L(θ+ε) − L(θ−ε)) / 2ε` on up to 200 sampled parameter coordinates.
pub fn finite_diff_check(
    graph: &Graph,
    feeds: &Feeds,
    loss: &str,
    rng: &mut Rng,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let eval = graph.forward_to(feeds, &[loss])?;
    let grads = graph.backward(&eval, loss)?;
    drop(eval);

    let sizes: Vec<(NodeId, usize)> = graph.param_ids().map(|id| (id, graph_param_len(graph, id))).collect();
    let total: usize = sizes.iter().map(|s| s.1).sum();
    let coords: Vec<(NodeId, usize)> = if total <= FD_MAX_COORDS {
        sizes.iter().flat_map(|&(id, n)| (0..n).map(move |k| (id, k))).collect()
    } else {
        let mut picked = BTreeSet::new();
        while picked.len() < FD_MAX_COORDS {
            picked.insert(rng.int_range(0, total - 1));
        }
        picked
            .into_iter()
            .map(|mut flat| {
                for &(id, n) in &sizes {
                    if flat < n {
                        return (id, flat);
                    }
                    flat -= n;
                }
                unreachable!()
            })
            .collect()
    };

    let mut probe = graph.clone();
    let mut report = GradCheckReport {
        checked: 0,
        max_error: 0.0,
        worst: None,
        tolerance,
        passed: true,
    };
    for (id, k) in coords {
        let original = probe.param_mut(id)?.data()[k];
        probe.param_mut(id)?.data_mut()[k] = original + FD_STEP;
        let hi = probe.forward_to(feeds, &[loss])?.scalar(loss)?;
        probe.param_mut(id)?.data_mut()[k] = original - FD_STEP;
        let lo = probe.forward_to(feeds, &[loss])?.scalar(loss)?;
        probe.param_mut(id)?.data_mut()[k] = original;

        let numeric = (hi - lo) / (2.0 * FD_STEP);
        let analytic = grads.by_param.iter().find(|(i, _)| *i == id).map(|(_, t)| t.data()[k]).unwrap_or(0.0);
        let err = gradient_error(analytic, numeric);
        report.checked += 1;
        if err > report.max_error || report.worst.is_none() {
            report.max_error = report.max_error.max(err);
            if err >= report.max_error {
                report.worst = Some((graph.node(id).name.clone(), k, analytic, numeric));
            }
        }
    }
    report.passed = report.max_error < tolerance;
    Ok(report)
}

fn graph_param_len(graph: &Graph, id: NodeId) -> usize {
    match &graph.node(id).op {
        Op::Param(t) => t.len(),
        _ => 0,
    }
}
