//! A small differentiable computation graph: the layer set needed to express
//! the six regression models, with forward/backward passes that are checkable
//! against central finite differences.
//!
//! Graphs are DAGs of named nodes over named inputs, ending in a single node
//! whose per-example output is a scalar. Parameters are owned by nodes and
//! enumerated in a stable order (node order, weight before bias), which fixes
//! the layout of optimizer updates and checkpoint files.

use rand::Rng;
use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;
use super::NnError;

/// Forward-pass mode. Dropout is the identity in [`Mode::Eval`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Handle to a node inside a [`GraphBuilder`] / [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum OpKind {
    Input { shape: Vec<usize> },
    Dense { units: usize },
    Conv2d { maps: usize, kernel: (usize, usize), pad: (usize, usize) },
    Relu,
    Dropout { rate: f64 },
    GlobalAvgPoolTime,
    ConcatChannels,
    /// Scalar convex-form blend of two scalar branches: `w*a + (1-w)*b`,
    /// with `w` a trainable unconstrained scalar.
    Blend { w_init: f64 },
}

impl OpKind {
    fn tag(&self) -> &'static str {
        match self {
            OpKind::Input { .. } => "input",
            OpKind::Dense { .. } => "dense",
            OpKind::Conv2d { .. } => "conv2d",
            OpKind::Relu => "relu",
            OpKind::Dropout { .. } => "dropout",
            OpKind::GlobalAvgPoolTime => "global_avg_pool_time",
            OpKind::ConcatChannels => "concat_channels",
            OpKind::Blend { .. } => "blend",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    name: String,
    op: OpKind,
    inputs: Vec<usize>,
    weight: Option<Tensor>,
    bias: Option<Tensor>,
    /// Per-example output shape, known statically.
    out_shape: Vec<usize>,
}

/// Builds a [`Graph`] node by node, checking shapes as it goes.
#[derive(Debug, Default)]
pub struct GraphBuilder {
    nodes: Vec<Node>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, node: Node) -> NodeId {
        self.nodes.push(node);
        NodeId(self.nodes.len() - 1)
    }

    fn shape_of(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].out_shape
    }

    fn check_name(&self, name: &str) -> Result<(), NnError> {
        if name.is_empty() || self.nodes.iter().any(|n| n.name == name) {
            return Err(NnError::Build(format!("duplicate or empty node name '{name}'")));
        }
        Ok(())
    }

    /// Declare a named input carrying the given per-example shape.
    pub fn input(&mut self, name: &str, shape: &[usize]) -> Result<NodeId, NnError> {
        self.check_name(name)?;
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(NnError::Build(format!("input '{name}' has invalid shape {shape:?}")));
        }
        Ok(self.push(Node {
            name: name.to_string(),
            op: OpKind::Input { shape: shape.to_vec() },
            inputs: vec![],
            weight: None,
            bias: None,
            out_shape: shape.to_vec(),
        }))
    }

    /// Fully connected layer over a rank-1 input.
    pub fn dense(&mut self, name: &str, input: NodeId, units: usize) -> Result<NodeId, NnError> {
        self.check_name(name)?;
        let in_shape = self.shape_of(input);
        if in_shape.len() != 1 {
            return Err(NnError::Shape {
                layer: name.into(),
                message: format!("dense expects a rank-1 input, got {in_shape:?}"),
            });
        }
        if units == 0 {
            return Err(NnError::Build(format!("dense '{name}' needs at least one unit")));
        }
        Ok(self.push(Node {
            name: name.into(),
            op: OpKind::Dense { units },
            inputs: vec![input.0],
            weight: None,
            bias: None,
            out_shape: vec![units],
        }))
    }

    /// 2-D convolution over a `[channels, height, width]` input.
    ///
    /// `pad` is the symmetric zero padding applied per side: `pad.0` rows on
    /// top and bottom, `pad.1` columns left and right. Valid (unpadded)
    /// convolution is `pad = (0, 0)`.
    pub fn conv2d(
        &mut self,
        name: &str,
        input: NodeId,
        maps: usize,
        kernel: (usize, usize),
        pad: (usize, usize),
    ) -> Result<NodeId, NnError> {
        self.check_name(name)?;
        let in_shape = self.shape_of(input).to_vec();
        if in_shape.len() != 3 {
            return Err(NnError::Shape {
                layer: name.into(),
                message: format!("conv2d expects [channels, height, width], got {in_shape:?}"),
            });
        }
        if maps == 0 || kernel.0 == 0 || kernel.1 == 0 {
            return Err(NnError::Build(format!("conv2d '{name}' has empty kernel or zero maps")));
        }
        let (h, w) = (in_shape[1] + 2 * pad.0, in_shape[2] + 2 * pad.1);
        if kernel.0 > h || kernel.1 > w {
            return Err(NnError::Shape {
                layer: name.into(),
                message: format!(
                    "kernel {}x{} does not fit padded input {}x{}",
                    kernel.0, kernel.1, h, w
                ),
            });
        }
        let out_shape = vec![maps, h - kernel.0 + 1, w - kernel.1 + 1];
        Ok(self.push(Node {
            name: name.into(),
            op: OpKind::Conv2d { maps, kernel, pad },
            inputs: vec![input.0],
            weight: None,
            bias: None,
            out_shape,
        }))
    }

    pub fn relu(&mut self, name: &str, input: NodeId) -> Result<NodeId, NnError> {
        self.check_name(name)?;
        let out_shape = self.shape_of(input).to_vec();
        Ok(self.push(Node {
            name: name.into(),
            op: OpKind::Relu,
            inputs: vec![input.0],
            weight: None,
            bias: None,
            out_shape,
        }))
    }

    /// Inverted dropout: in train mode units are zeroed with probability
    /// `rate` and survivors scaled by `1/(1-rate)`; eval mode is the identity.
    pub fn dropout(&mut self, name: &str, input: NodeId, rate: f64) -> Result<NodeId, NnError> {
        self.check_name(name)?;
        if !(0.0..1.0).contains(&rate) {
            return Err(NnError::Build(format!("dropout '{name}' rate {rate} outside [0,1)")));
        }
        let out_shape = self.shape_of(input).to_vec();
        Ok(self.push(Node {
            name: name.into(),
            op: OpKind::Dropout { rate },
            inputs: vec![input.0],
            weight: None,
            bias: None,
            out_shape,
        }))
    }

    /// Mean over the trailing (time) axis of a `[channels, height, width]`
    /// input, flattening the rest: output shape `[channels * height]`.
    pub fn global_avg_pool_time(&mut self, name: &str, input: NodeId) -> Result<NodeId, NnError> {
        self.check_name(name)?;
        let in_shape = self.shape_of(input).to_vec();
        if in_shape.len() != 3 {
            return Err(NnError::Shape {
                layer: name.into(),
                message: format!("global_avg_pool_time expects [channels, height, width], got {in_shape:?}"),
            });
        }
        Ok(self.push(Node {
            name: name.into(),
            op: OpKind::GlobalAvgPoolTime,
            inputs: vec![input.0],
            weight: None,
            bias: None,
            out_shape: vec![in_shape[0] * in_shape[1]],
        }))
    }

    /// Concatenate feature maps along the channel axis. All inputs must share
    /// height and width.
    pub fn concat_channels(&mut self, name: &str, inputs: &[NodeId]) -> Result<NodeId, NnError> {
        self.check_name(name)?;
        if inputs.is_empty() {
            return Err(NnError::Build(format!("concat '{name}' needs at least one input")));
        }
        let first = self.shape_of(inputs[0]).to_vec();
        if first.len() != 3 {
            return Err(NnError::Shape {
                layer: name.into(),
                message: format!("concat_channels expects [channels, height, width], got {first:?}"),
            });
        }
        let mut channels = 0;
        for &id in inputs {
            let s = self.shape_of(id);
            if s.len() != 3 || s[1] != first[1] || s[2] != first[2] {
                return Err(NnError::Shape {
                    layer: name.into(),
                    message: format!("concat input {:?} incompatible with {:?}", s, first),
                });
            }
            channels += s[0];
        }
        Ok(self.push(Node {
            name: name.into(),
            op: OpKind::ConcatChannels,
            inputs: inputs.iter().map(|id| id.0).collect(),
            weight: None,
            bias: None,
            out_shape: vec![channels, first[1], first[2]],
        }))
    }

    /// Trainable scalar blend `w*a + (1-w)*b` of two scalar-output branches.
    pub fn blend(&mut self, name: &str, a: NodeId, b: NodeId, w_init: f64) -> Result<NodeId, NnError> {
        self.check_name(name)?;
        for id in [a, b] {
            let s = self.shape_of(id);
            if s.iter().product::<usize>() != 1 {
                return Err(NnError::Shape {
                    layer: name.into(),
                    message: format!("blend branches must emit scalars, got {s:?}"),
                });
            }
        }
        Ok(self.push(Node {
            name: name.into(),
            op: OpKind::Blend { w_init },
            inputs: vec![a.0, b.0],
            weight: None,
            bias: None,
            out_shape: vec![1],
        }))
    }

    /// Append every node of `graph` under `prefix`, keeping parameter values.
    /// Input nodes keep their original names: an existing input of the same
    /// name and shape is reused, so merged branches can share features.
    /// Returns the id of `graph`'s output node within this builder.
    pub fn absorb(&mut self, graph: &Graph, prefix: &str) -> Result<NodeId, NnError> {
        let mut remap = vec![usize::MAX; graph.nodes.len()];
        for (idx, node) in graph.nodes.iter().enumerate() {
            if let OpKind::Input { shape } = &node.op {
                if let Some(existing) = self
                    .nodes
                    .iter()
                    .position(|n| matches!(&n.op, OpKind::Input { .. }) && n.name == node.name)
                {
                    if self.nodes[existing].out_shape != *shape {
                        return Err(NnError::Build(format!(
                            "input '{}' absorbed with conflicting shapes {:?} vs {:?}",
                            node.name, self.nodes[existing].out_shape, shape
                        )));
                    }
                    remap[idx] = existing;
                } else {
                    remap[idx] = self.input(&node.name, shape)?.0;
                }
                continue;
            }
            let name = format!("{prefix}{}", node.name);
            self.check_name(&name)?;
            let mut copied = node.clone();
            copied.name = name;
            copied.inputs = node.inputs.iter().map(|&i| remap[i]).collect();
            remap[idx] = self.push(copied).0;
        }
        Ok(NodeId(remap[graph.output]))
    }

    /// Finalize the graph with `output` as its head and initialize all not
    /// yet initialized parameters from `seed`: weights uniform in
    /// ±sqrt(6/(fan_in+fan_out)), biases zero, blend weights at their
    /// declared initial value. Parameters carried over by [`Self::absorb`]
    /// keep their values.
    pub fn finish(mut self, output: NodeId, seed: u64) -> Result<Graph, NnError> {
        let out_shape = self.shape_of(output).to_vec();
        if out_shape.iter().product::<usize>() != 1 {
            return Err(NnError::Build(format!(
                "graph output must be a per-example scalar, got shape {out_shape:?}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for idx in 0..self.nodes.len() {
            let in_shape = self.nodes[idx]
                .inputs
                .first()
                .map(|&i| self.nodes[i].out_shape.clone());
            let node = &mut self.nodes[idx];
            if node.weight.is_some() {
                continue;
            }
            match node.op {
                OpKind::Dense { units } => {
                    let in_dim = in_shape.as_ref().unwrap()[0];
                    node.weight = Some(glorot_uniform(&mut rng, &[units, in_dim], in_dim, units));
                    node.bias = Some(Tensor::zeros(&[units]));
                }
                OpKind::Conv2d { maps, kernel, .. } => {
                    let in_maps = in_shape.as_ref().unwrap()[0];
                    let fan_in = in_maps * kernel.0 * kernel.1;
                    let fan_out = maps * kernel.0 * kernel.1;
                    node.weight = Some(glorot_uniform(
                        &mut rng,
                        &[maps, in_maps, kernel.0, kernel.1],
                        fan_in,
                        fan_out,
                    ));
                    node.bias = Some(Tensor::zeros(&[maps]));
                }
                OpKind::Blend { w_init } => {
                    node.weight = Some(Tensor::vector(&[w_init]));
                }
                _ => {}
            }
        }
        let inputs = self
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| matches!(n.op, OpKind::Input { .. }))
            .map(|(i, _)| i)
            .collect();
        Ok(Graph {
            nodes: self.nodes,
            inputs,
            output: output.0,
        })
    }
}

fn glorot_uniform(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut t = Tensor::zeros(shape);
    for x in t.data_mut() {
        *x = rng.random_range(-bound..bound);
    }
    t
}

/// A batch of named inputs, each a tensor with a leading batch axis.
#[derive(Debug, Clone, Default)]
pub struct Batch {
    entries: Vec<(String, Tensor)>,
}

impl Batch {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: &str, tensor: Tensor) -> Self {
        self.entries.push((name.to_string(), tensor));
        self
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor) {
        self.entries.push((name.to_string(), tensor));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }
}

/// Retained intermediates of one forward pass, consumed by [`Graph::backward`].
#[derive(Debug, Clone)]
pub struct ForwardPass {
    outputs: Vec<Tensor>,
    dropout_masks: Vec<Option<Vec<f64>>>,
    predictions: Vec<f64>,
    mode: Mode,
    batch_len: usize,
}

impl ForwardPass {
    pub fn predictions(&self) -> &[f64] {
        &self.predictions
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn batch_len(&self) -> usize {
        self.batch_len
    }
}

/// Named parameter gradients in parameter-declaration order.
#[derive(Debug, Clone)]
pub struct Gradients {
    entries: Vec<(String, Tensor)>,
}

impl Gradients {
    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

/// An immutable-by-default differentiable computation graph.
#[derive(Debug, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
    inputs: Vec<usize>,
    output: usize,
}

impl Graph {
    pub fn input_names(&self) -> Vec<&str> {
        self.inputs.iter().map(|&i| self.nodes[i].name.as_str()).collect()
    }

    pub fn input_shape(&self, name: &str) -> Option<&[usize]> {
        self.inputs
            .iter()
            .map(|&i| &self.nodes[i])
            .find(|n| n.name == name)
            .map(|n| n.out_shape.as_slice())
    }

    /// Statically inferred per-example output shape of a named node.
    pub fn node_shape(&self, name: &str) -> Option<&[usize]> {
        self.nodes.iter().find(|n| n.name == name).map(|n| n.out_shape.as_slice())
    }

    /// `(node name, layer kind)` pairs in graph order, for structural checks.
    pub fn layer_kinds(&self) -> Vec<(&str, &'static str)> {
        self.nodes.iter().map(|n| (n.name.as_str(), n.op.tag())).collect()
    }

    /// Named parameters in stable declaration order (node order, weight
    /// before bias).
    pub fn parameters(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for node in &self.nodes {
            if let Some(w) = &node.weight {
                out.push((format!("{}.weight", node.name), w));
            }
            if let Some(b) = &node.bias {
                out.push((format!("{}.bias", node.name), b));
            }
        }
        out
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        let (node, field) = name.rsplit_once('.')?;
        let n = self.nodes.iter().find(|n| n.name == node)?;
        match field {
            "weight" => n.weight.as_ref(),
            "bias" => n.bias.as_ref(),
            _ => None,
        }
    }

    pub fn set_param(&mut self, name: &str, value: Tensor) -> Result<(), NnError> {
        let (node_name, field) = name
            .rsplit_once('.')
            .ok_or_else(|| NnError::UnknownParameter(name.into()))?;
        let node = self
            .nodes
            .iter_mut()
            .find(|n| n.name == node_name)
            .ok_or_else(|| NnError::UnknownParameter(name.into()))?;
        let slot = match field {
            "weight" => node.weight.as_mut(),
            "bias" => node.bias.as_mut(),
            _ => None,
        }
        .ok_or_else(|| NnError::UnknownParameter(name.into()))?;
        if slot.shape() != value.shape() {
            return Err(NnError::Shape {
                layer: node_name.into(),
                message: format!(
                    "parameter {} has shape {:?}, got {:?}",
                    name,
                    slot.shape(),
                    value.shape()
                ),
            });
        }
        *slot = value;
        Ok(())
    }

    pub(crate) fn add_to_param(&mut self, name: &str, idx: usize, delta: f64) -> Result<(), NnError> {
        let current = self
            .param(name)
            .ok_or_else(|| NnError::UnknownParameter(name.into()))?;
        let mut t = current.clone();
        t.data_mut()[idx] += delta;
        self.set_param(name, t)
    }

    /// Run the graph over a named batch. In train mode, dropout draws fresh
    /// masks from `rng`; eval mode needs no RNG and applies no dropout.
    pub fn forward(
        &self,
        batch: &Batch,
        mode: Mode,
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<ForwardPass, NnError> {
        let batch_len = self.batch_len(batch)?;
        let mut outputs: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        let mut masks: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];

        for (idx, node) in self.nodes.iter().enumerate() {
            let out = match &node.op {
                OpKind::Input { shape } => {
                    let provided = batch.get(&node.name).ok_or_else(|| NnError::MissingInput {
                        input: node.name.clone(),
                    })?;
                    if provided.shape().len() != shape.len() + 1 || &provided.shape()[1..] != shape.as_slice() {
                        return Err(NnError::Shape {
                            layer: node.name.clone(),
                            message: format!(
                                "input batch has shape {:?}, expected [batch, {:?}]",
                                provided.shape(),
                                shape
                            ),
                        });
                    }
                    provided.clone()
                }
                OpKind::Dense { units } => {
                    dense_forward(&outputs[node.inputs[0]], node, *units)
                }
                OpKind::Conv2d { maps, kernel, pad } => {
                    conv2d_forward(&outputs[node.inputs[0]], node, *maps, *kernel, *pad)
                }
                OpKind::Relu => {
                    let mut t = outputs[node.inputs[0]].clone();
                    t.data_mut().iter_mut().for_each(|x| {
                        if *x < 0.0 {
                            *x = 0.0;
                        }
                    });
                    t
                }
                OpKind::Dropout { rate } => {
                    let x = &outputs[node.inputs[0]];
                    if mode == Mode::Eval || *rate == 0.0 {
                        x.clone()
                    } else {
                        let rng = rng.as_deref_mut().ok_or_else(|| {
                            NnError::State(format!(
                                "dropout '{}' needs an RNG in train mode",
                                node.name
                            ))
                        })?;
                        let keep = 1.0 - rate;
                        let scale = 1.0 / keep;
                        let mut mask = vec![0.0; x.numel()];
                        for m in &mut mask {
                            if rng.random::<f64>() < keep {
                                *m = scale;
                            }
                        }
                        let mut t = x.clone();
                        t.data_mut()
                            .iter_mut()
                            .zip(&mask)
                            .for_each(|(v, m)| *v *= m);
                        masks[idx] = Some(mask);
                        t
                    }
                }
                OpKind::GlobalAvgPoolTime => pool_forward(&outputs[node.inputs[0]]),
                OpKind::ConcatChannels => {
                    let parts: Vec<&Tensor> = node.inputs.iter().map(|&i| &outputs[i]).collect();
                    concat_forward(&parts)
                }
                OpKind::Blend { .. } => {
                    let a = &outputs[node.inputs[0]];
                    let b = &outputs[node.inputs[1]];
                    let w = node.weight.as_ref().unwrap().data()[0];
                    let mut t = Tensor::zeros(&[batch_len, 1]);
                    for (o, (av, bv)) in t
                        .data_mut()
                        .iter_mut()
                        .zip(a.data().iter().zip(b.data().iter()))
                    {
                        *o = w * av + (1.0 - w) * bv;
                    }
                    t
                }
            };
            outputs.push(out);
        }

        let head = &outputs[self.output];
        let predictions = head.data().to_vec();
        debug_assert_eq!(predictions.len(), batch_len);
        if predictions.iter().any(|p| !p.is_finite()) {
            return Err(NnError::NonFinite("forward pass produced a non-finite prediction".into()));
        }
        Ok(ForwardPass {
            outputs,
            dropout_masks: masks,
            predictions,
            mode,
            batch_len,
        })
    }

    /// Per-node output of a previous forward pass, for tests and analyses.
    pub fn traced_output<'a>(&self, pass: &'a ForwardPass, name: &str) -> Option<&'a Tensor> {
        let idx = self.nodes.iter().position(|n| n.name == name)?;
        pass.outputs.get(idx)
    }

    /// Backpropagate `∂loss/∂prediction` (one value per example) through the
    /// retained forward pass. Parameters are not mutated.
    pub fn backward(&self, pass: &ForwardPass, out_grad: &[f64]) -> Result<Gradients, NnError> {
        if out_grad.len() != pass.batch_len {
            return Err(NnError::Shape {
                layer: "<backward>".into(),
                message: format!(
                    "output gradient has {} entries for a batch of {}",
                    out_grad.len(),
                    pass.batch_len
                ),
            });
        }
        if pass.outputs.len() != self.nodes.len() {
            return Err(NnError::State(
                "forward pass does not match this graph".into(),
            ));
        }

        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        let mut head = Tensor::zeros(pass.outputs[self.output].shape());
        head.data_mut().copy_from_slice(out_grad);
        grads[self.output] = Some(head);

        let mut param_grads: Vec<(String, Tensor)> = Vec::new();

        for idx in (0..self.nodes.len()).rev() {
            let Some(g_out) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                OpKind::Input { .. } => {}
                OpKind::Dense { units } => {
                    let x = &pass.outputs[node.inputs[0]];
                    let (dw, db, dx) = dense_backward(x, node, *units, &g_out);
                    param_grads.push((format!("{}.weight", node.name), dw));
                    param_grads.push((format!("{}.bias", node.name), db));
                    accumulate(&mut grads, node.inputs[0], dx);
                }
                OpKind::Conv2d { maps, kernel, pad } => {
                    let x = &pass.outputs[node.inputs[0]];
                    let (dw, db, dx) = conv2d_backward(x, node, *maps, *kernel, *pad, &g_out);
                    param_grads.push((format!("{}.weight", node.name), dw));
                    param_grads.push((format!("{}.bias", node.name), db));
                    accumulate(&mut grads, node.inputs[0], dx);
                }
                OpKind::Relu => {
                    let y = &pass.outputs[idx];
                    let mut dx = g_out;
                    dx.data_mut()
                        .iter_mut()
                        .zip(y.data())
                        .for_each(|(g, &v)| {
                            if v <= 0.0 {
                                *g = 0.0;
                            }
                        });
                    accumulate(&mut grads, node.inputs[0], dx);
                }
                OpKind::Dropout { .. } => {
                    let mut dx = g_out;
                    if let Some(mask) = &pass.dropout_masks[idx] {
                        dx.data_mut()
                            .iter_mut()
                            .zip(mask)
                            .for_each(|(g, m)| *g *= m);
                    }
                    accumulate(&mut grads, node.inputs[0], dx);
                }
                OpKind::GlobalAvgPoolTime => {
                    let x_shape = pass.outputs[node.inputs[0]].shape().to_vec();
                    accumulate(&mut grads, node.inputs[0], pool_backward(&x_shape, &g_out));
                }
                OpKind::ConcatChannels => {
                    let mut offset = 0;
                    for &input in &node.inputs {
                        let part_shape = pass.outputs[input].shape().to_vec();
                        let dx = concat_backward_part(&part_shape, &g_out, offset, node.out_shape[0]);
                        offset += part_shape[1];
                        accumulate(&mut grads, input, dx);
                    }
                }
                OpKind::Blend { .. } => {
                    let a = &pass.outputs[node.inputs[0]];
                    let b = &pass.outputs[node.inputs[1]];
                    let w = node.weight.as_ref().unwrap().data()[0];
                    let mut dw = 0.0;
                    let mut da = Tensor::zeros(a.shape());
                    let mut db = Tensor::zeros(b.shape());
                    for i in 0..pass.batch_len {
                        let g = g_out.data()[i];
                        dw += g * (a.data()[i] - b.data()[i]);
                        da.data_mut()[i] = g * w;
                        db.data_mut()[i] = g * (1.0 - w);
                    }
                    param_grads.push((format!("{}.weight", node.name), Tensor::vector(&[dw])));
                    accumulate(&mut grads, node.inputs[0], da);
                    accumulate(&mut grads, node.inputs[1], db);
                }
            }
        }

        // Reorder to match `parameters()` declaration order.
        let mut ordered = Vec::with_capacity(param_grads.len());
        for (name, tensor) in self.parameters() {
            let g = param_grads
                .iter()
                .find(|(n, _)| n == &name)
                .map(|(_, g)| g.clone())
                .unwrap_or_else(|| Tensor::zeros(tensor.shape()));
            ordered.push((name, g));
        }
        Ok(Gradients { entries: ordered })
    }

    fn batch_len(&self, batch: &Batch) -> Result<usize, NnError> {
        let mut len = None;
        for &i in &self.inputs {
            let name = &self.nodes[i].name;
            let t = batch
                .get(name)
                .ok_or_else(|| NnError::MissingInput { input: name.clone() })?;
            let b = t.shape().first().copied().unwrap_or(0);
            if b == 0 {
                return Err(NnError::Shape {
                    layer: name.clone(),
                    message: "empty batch".into(),
                });
            }
            match len {
                None => len = Some(b),
                Some(prev) if prev != b => {
                    return Err(NnError::Shape {
                        layer: name.clone(),
                        message: format!("inconsistent batch sizes: {prev} vs {b}"),
                    })
                }
                _ => {}
            }
        }
        len.ok_or_else(|| NnError::Build("graph has no inputs".into()))
    }
}

fn accumulate(grads: &mut [Option<Tensor>], idx: usize, delta: Tensor) {
    match &mut grads[idx] {
        Some(existing) => existing
            .data_mut()
            .iter_mut()
            .zip(delta.data())
            .for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(delta),
    }
}

fn dense_forward(x: &Tensor, node: &Node, units: usize) -> Tensor {
    let b = x.shape()[0];
    let in_dim = x.shape()[1];
    let w = node.weight.as_ref().unwrap().data();
    let bias = node.bias.as_ref().unwrap().data();
    let mut out = Tensor::zeros(&[b, units]);
    let od = out.data_mut();
    for bi in 0..b {
        let xrow = &x.data()[bi * in_dim..(bi + 1) * in_dim];
        let orow = &mut od[bi * units..(bi + 1) * units];
        for (o, orow_v) in orow.iter_mut().enumerate() {
            let wrow = &w[o * in_dim..(o + 1) * in_dim];
            let mut acc = bias[o];
            for (wv, xv) in wrow.iter().zip(xrow) {
                acc += wv * xv;
            }
            *orow_v = acc;
        }
    }
    out
}

fn dense_backward(x: &Tensor, node: &Node, units: usize, g: &Tensor) -> (Tensor, Tensor, Tensor) {
    let b = x.shape()[0];
    let in_dim = x.shape()[1];
    let w = node.weight.as_ref().unwrap().data();
    let mut dw = Tensor::zeros(&[units, in_dim]);
    let mut db = Tensor::zeros(&[units]);
    let mut dx = Tensor::zeros(&[b, in_dim]);
    for bi in 0..b {
        let xrow = &x.data()[bi * in_dim..(bi + 1) * in_dim];
        let grow = &g.data()[bi * units..(bi + 1) * units];
        let dxrow = &mut dx.data_mut()[bi * in_dim..(bi + 1) * in_dim];
        for (o, &gv) in grow.iter().enumerate() {
            db.data_mut()[o] += gv;
            let wrow = &w[o * in_dim..(o + 1) * in_dim];
            let dwrow = &mut dw.data_mut()[o * in_dim..(o + 1) * in_dim];
            for i in 0..in_dim {
                dwrow[i] += gv * xrow[i];
                dxrow[i] += gv * wrow[i];
            }
        }
    }
    (dw, db, dx)
}

fn conv2d_forward(
    x: &Tensor,
    node: &Node,
    maps: usize,
    kernel: (usize, usize),
    pad: (usize, usize),
) -> Tensor {
    let (b, c_in, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (kh, kw) = kernel;
    let (ph, pw) = pad;
    let oh = h + 2 * ph - kh + 1;
    let ow = w + 2 * pw - kw + 1;
    let weight = node.weight.as_ref().unwrap().data();
    let bias = node.bias.as_ref().unwrap().data();
    let mut out = Tensor::zeros(&[b, maps, oh, ow]);
    let od = out.data_mut();

    let in_plane = h * w;
    let out_plane = oh * ow;
    for bi in 0..b {
        for oc in 0..maps {
            let out_map = &mut od[(bi * maps + oc) * out_plane..(bi * maps + oc + 1) * out_plane];
            out_map.iter_mut().for_each(|v| *v = bias[oc]);
            for ic in 0..c_in {
                let x_map = &x.data()[(bi * c_in + ic) * in_plane..(bi * c_in + ic + 1) * in_plane];
                let w_base = ((oc * c_in) + ic) * kh * kw;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wv = weight[w_base + ky * kw + kx];
                        let dx = kx as isize - pw as isize;
                        let ox_lo = (-dx).max(0) as usize;
                        let ox_hi = ow.min(((w as isize) - dx).max(0) as usize);
                        if ox_lo >= ox_hi {
                            continue;
                        }
                        for oy in 0..oh {
                            let y = oy as isize + ky as isize - ph as isize;
                            if y < 0 || y >= h as isize {
                                continue;
                            }
                            let x_row = &x_map[y as usize * w..(y as usize + 1) * w];
                            let o_row = &mut out_map[oy * ow..(oy + 1) * ow];
                            let xs = &x_row[(ox_lo as isize + dx) as usize..(ox_hi as isize + dx) as usize];
                            let os = &mut o_row[ox_lo..ox_hi];
                            for (o, xv) in os.iter_mut().zip(xs) {
                                *o += wv * xv;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn conv2d_backward(
    x: &Tensor,
    node: &Node,
    maps: usize,
    kernel: (usize, usize),
    pad: (usize, usize),
    g: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let (b, c_in, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (kh, kw) = kernel;
    let (ph, pw) = pad;
    let oh = h + 2 * ph - kh + 1;
    let ow = w + 2 * pw - kw + 1;
    let weight = node.weight.as_ref().unwrap().data();
    let mut dw = Tensor::zeros(&[maps, c_in, kh, kw]);
    let mut db = Tensor::zeros(&[maps]);
    let mut dx = Tensor::zeros(&[b, c_in, h, w]);

    let in_plane = h * w;
    let out_plane = oh * ow;
    for bi in 0..b {
        for oc in 0..maps {
            let g_map = &g.data()[(bi * maps + oc) * out_plane..(bi * maps + oc + 1) * out_plane];
            db.data_mut()[oc] += g_map.iter().sum::<f64>();
            for ic in 0..c_in {
                let x_map = &x.data()[(bi * c_in + ic) * in_plane..(bi * c_in + ic + 1) * in_plane];
                let dx_map = &mut dx.data_mut()[(bi * c_in + ic) * in_plane..(bi * c_in + ic + 1) * in_plane];
                let w_base = ((oc * c_in) + ic) * kh * kw;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wv = weight[w_base + ky * kw + kx];
                        let mut wacc = 0.0;
                        let dxo = kx as isize - pw as isize;
                        let ox_lo = (-dxo).max(0) as usize;
                        let ox_hi = ow.min(((w as isize) - dxo).max(0) as usize);
                        if ox_lo >= ox_hi {
                            continue;
                        }
                        for oy in 0..oh {
                            let y = oy as isize + ky as isize - ph as isize;
                            if y < 0 || y >= h as isize {
                                continue;
                            }
                            let row = y as usize * w;
                            let g_row = &g_map[oy * ow..(oy + 1) * ow];
                            let x_lo = (ox_lo as isize + dxo) as usize;
                            let x_hi = (ox_hi as isize + dxo) as usize;
                            let xs = &x_map[row + x_lo..row + x_hi];
                            let gs = &g_row[ox_lo..ox_hi];
                            for (gv, xv) in gs.iter().zip(xs) {
                                wacc += gv * xv;
                            }
                            let dxs = &mut dx_map[row + x_lo..row + x_hi];
                            for (dv, gv) in dxs.iter_mut().zip(gs) {
                                *dv += wv * gv;
                            }
                        }
                        dw.data_mut()[w_base + ky * kw + kx] += wacc;
                    }
                }
            }
        }
    }
    (dw, db, dx)
}

fn pool_forward(x: &Tensor) -> Tensor {
    let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let mut out = Tensor::zeros(&[b, c * h]);
    let od = out.data_mut();
    for bi in 0..b {
        for ch in 0..c * h {
            let row = &x.data()[(bi * c * h + ch) * w..(bi * c * h + ch + 1) * w];
            od[bi * c * h + ch] = row.iter().sum::<f64>() / w as f64;
        }
    }
    out
}

fn pool_backward(x_shape: &[usize], g: &Tensor) -> Tensor {
    let (b, c, h, w) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
    let mut dx = Tensor::zeros(x_shape);
    let dd = dx.data_mut();
    for bi in 0..b {
        for ch in 0..c * h {
            let gv = g.data()[bi * c * h + ch] / w as f64;
            let row = &mut dd[(bi * c * h + ch) * w..(bi * c * h + ch + 1) * w];
            row.iter_mut().for_each(|v| *v = gv);
        }
    }
    dx
}

fn concat_forward(parts: &[&Tensor]) -> Tensor {
    let b = parts[0].shape()[0];
    let (h, w) = (parts[0].shape()[2], parts[0].shape()[3]);
    let total_c: usize = parts.iter().map(|p| p.shape()[1]).sum();
    let mut out = Tensor::zeros(&[b, total_c, h, w]);
    let plane = h * w;
    let od = out.data_mut();
    for bi in 0..b {
        let mut c_off = 0;
        for p in parts {
            let pc = p.shape()[1];
            let src = &p.data()[bi * pc * plane..(bi + 1) * pc * plane];
            let dst = &mut od[(bi * total_c + c_off) * plane..(bi * total_c + c_off + pc) * plane];
            dst.copy_from_slice(src);
            c_off += pc;
        }
    }
    out
}

fn concat_backward_part(part_shape: &[usize], g: &Tensor, c_offset: usize, total_c: usize) -> Tensor {
    let (b, pc, h, w) = (part_shape[0], part_shape[1], part_shape[2], part_shape[3]);
    let plane = h * w;
    let mut dx = Tensor::zeros(part_shape);
    let dd = dx.data_mut();
    for bi in 0..b {
        let src = &g.data()[(bi * total_c + c_offset) * plane..(bi * total_c + c_offset + pc) * plane];
        let dst = &mut dd[bi * pc * plane..(bi + 1) * pc * plane];
        dst.copy_from_slice(src);
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_dense_graph(in_dim: usize, seed: u64) -> Graph {
        let mut b = GraphBuilder::new();
        let x = b.input("x", &[in_dim]).unwrap();
        let d = b.dense("out", x, 1).unwrap();
        b.finish(d, seed).unwrap()
    }

    #[test]
    fn zero_weights_with_bias_return_bias() {
        let mut g = single_dense_graph(3, 0);
        g.set_param("out.weight", Tensor::zeros(&[1, 3])).unwrap();
        g.set_param("out.bias", Tensor::vector(&[0.7])).unwrap();
        let batch = Batch::new().with("x", Tensor::from_vec(&[2, 3], vec![1.0, -2.0, 5.0, 0.0, 0.0, 9.0]).unwrap());
        let pass = g.forward(&batch, Mode::Eval, None).unwrap();
        assert_eq!(pass.predictions(), &[0.7, 0.7]);
    }

    #[test]
    fn relu_matches_definition() {
        let mut b = GraphBuilder::new();
        let x = b.input("x", &[3]).unwrap();
        let r = b.relu("r", x).unwrap();
        let d = b.dense("head", r, 1).unwrap();
        let g = b.finish(d, 1).unwrap();
        let batch = Batch::new().with("x", Tensor::from_vec(&[1, 3], vec![-1.0, 0.0, 2.0]).unwrap());
        let pass = g.forward(&batch, Mode::Eval, None).unwrap();
        let relu_out = g.traced_output(&pass, "r").unwrap();
        assert_eq!(relu_out.data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn conv_shape_on_reference_input() {
        let mut b = GraphBuilder::new();
        let x = b.input("mel", &[1, 128, 646]).unwrap();
        let c = b.conv2d("conv1", x, 32, (128, 4), (0, 0)).unwrap();
        assert_eq!(b.shape_of(c), &[32, 1, 643]);
    }

    #[test]
    fn input_shape_mismatch_names_layer() {
        let g = single_dense_graph(4, 0);
        let batch = Batch::new().with("x", Tensor::zeros(&[2, 3]));
        let err = g.forward(&batch, Mode::Eval, None).unwrap_err();
        match err {
            NnError::Shape { layer, .. } => assert_eq!(layer, "x"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn dense_hand_gradient() {
        // y = w*x, x = 2, target 0, MSE over one example: dL/dw = 2*(w*2)*2 = 8w.
        let mut g = single_dense_graph(1, 0);
        g.set_param("out.weight", Tensor::from_vec(&[1, 1], vec![1.5]).unwrap())
            .unwrap();
        g.set_param("out.bias", Tensor::vector(&[0.0])).unwrap();
        let batch = Batch::new().with("x", Tensor::from_vec(&[1, 1], vec![2.0]).unwrap());
        let pass = g.forward(&batch, Mode::Eval, None).unwrap();
        let grad = crate::nn::train::mse_grad(pass.predictions(), &[0.0]).unwrap();
        let grads = g.backward(&pass, &grad).unwrap();
        let dw = grads.get("out.weight").unwrap().data()[0];
        assert!((dw - 8.0 * 1.5).abs() < 1e-12);
    }

    #[test]
    fn gradients_zero_at_exact_minimum() {
        let g = single_dense_graph(2, 7);
        let batch = Batch::new().with("x", Tensor::from_vec(&[1, 2], vec![0.3, -0.4]).unwrap());
        let pass = g.forward(&batch, Mode::Eval, None).unwrap();
        let target = pass.predictions().to_vec();
        let grad = crate::nn::train::mse_grad(pass.predictions(), &target).unwrap();
        let grads = g.backward(&pass, &grad).unwrap();
        for (_, g) in grads.entries() {
            assert!(g.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn pooling_of_time_constant_equals_single_column() {
        let mut b = GraphBuilder::new();
        let x = b.input("x", &[1, 2, 5]).unwrap();
        let p = b.global_avg_pool_time("pool", x).unwrap();
        let d = b.dense("head", p, 1).unwrap();
        let g = b.finish(d, 3).unwrap();
        let mut data = Vec::new();
        for row in [1.25, -0.5] {
            data.extend(std::iter::repeat(row).take(5));
        }
        let batch = Batch::new().with("x", Tensor::from_vec(&[1, 1, 2, 5], data).unwrap());
        let pass = g.forward(&batch, Mode::Eval, None).unwrap();
        let pooled = g.traced_output(&pass, "pool").unwrap();
        assert_eq!(pooled.data(), &[1.25, -0.5]);
    }

    #[test]
    fn blend_identities() {
        let mut b = GraphBuilder::new();
        let xa = b.input("a", &[1]).unwrap();
        let xb = b.input("b", &[1]).unwrap();
        let bl = b.blend("blend", xa, xb, 0.5).unwrap();
        let mut g = b.finish(bl, 0).unwrap();
        let batch = Batch::new()
            .with("a", Tensor::from_vec(&[1, 1], vec![2.0]).unwrap())
            .with("b", Tensor::from_vec(&[1, 1], vec![4.0]).unwrap());
        let p = g.forward(&batch, Mode::Eval, None).unwrap();
        assert_eq!(p.predictions(), &[3.0]);
        g.set_param("blend.weight", Tensor::vector(&[1.0])).unwrap();
        assert_eq!(g.forward(&batch, Mode::Eval, None).unwrap().predictions(), &[2.0]);
        g.set_param("blend.weight", Tensor::vector(&[0.0])).unwrap();
        assert_eq!(g.forward(&batch, Mode::Eval, None).unwrap().predictions(), &[4.0]);
    }

    #[test]
    fn same_seed_same_init() {
        let g1 = single_dense_graph(8, 42);
        let g2 = single_dense_graph(8, 42);
        for ((n1, t1), (n2, t2)) in g1.parameters().iter().zip(g2.parameters().iter()) {
            assert_eq!(n1, n2);
            assert_eq!(t1.data(), t2.data());
        }
    }
}
