//! Minimal neural-network engine.
//!
//! Dense-tensor forward evaluation over a layer DAG, ReLU activation-mask
//! capture, reverse-mode gradients of softmax cross-entropy, and
//! momentum-SGD updates. Just enough machinery to compile cell
//! architectures, score them from their activation patterns, and train
//! them at desk scale.

mod conv;
pub mod checkpoint;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::seed::stream_rng;
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch at node {node}: {detail}")]
    ShapeMismatch { node: usize, detail: String },
    #[error("configuration error at node {node}: {detail}")]
    Config { node: usize, detail: String },
    #[error("backward called without a completed forward pass")]
    NoForward,
    #[error("training divergence: non-finite gradient at node {node}")]
    Divergence { node: usize },
}

/// Where a layer reads its input from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Src {
    /// The network's input batch.
    Input,
    /// Output of an earlier node (by node id).
    Node(usize),
}

/// Layer kinds. Conv2d and Linear carry their parameters.
#[derive(Debug, Clone)]
pub enum LayerKind {
    Conv2d {
        k: usize,
        cin: usize,
        cout: usize,
        stride: usize,
        padding: usize,
        weight: Tensor,
        bias: Tensor,
    },
    Linear {
        fin: usize,
        fout: usize,
        weight: Tensor,
        bias: Tensor,
    },
    Relu,
    MaxPool2d {
        k: usize,
        stride: usize,
        padding: usize,
    },
    GlobalAvgPool,
    /// Elementwise mean of all inputs: a variance-preserving join, which
    /// keeps deep multi-branch graphs trainable without normalization
    /// layers.
    Add,
    /// Channel concatenation of all inputs.
    Concat,
}

impl LayerKind {
    /// Fresh Conv2d with zeroed parameters.
    pub fn conv2d(k: usize, cin: usize, cout: usize, stride: usize, padding: usize) -> Self {
        LayerKind::Conv2d {
            k,
            cin,
            cout,
            stride,
            padding,
            weight: Tensor::zeros(&[cout, cin, k, k]),
            bias: Tensor::zeros(&[cout]),
        }
    }

    /// Fresh Linear with zeroed parameters.
    pub fn linear(fin: usize, fout: usize) -> Self {
        LayerKind::Linear {
            fin,
            fout,
            weight: Tensor::zeros(&[fout, fin]),
            bias: Tensor::zeros(&[fout]),
        }
    }

    fn param_count(&self) -> usize {
        match self {
            LayerKind::Conv2d { weight, bias, .. } | LayerKind::Linear { weight, bias, .. } => {
                weight.len() + bias.len()
            }
            _ => 0,
        }
    }
}

/// One node of the layer DAG.
#[derive(Debug, Clone)]
pub struct Node {
    pub id: usize,
    pub kind: LayerKind,
    pub inputs: Vec<Src>,
}

/// Per-parameter-tensor gradients, aligned with the network's node list.
#[derive(Debug, Clone)]
pub struct GradStore {
    pub grads: Vec<Option<(Tensor, Tensor)>>,
}

#[derive(Debug, Clone)]
struct ForwardCache {
    batch: Tensor,
    outputs: Vec<Tensor>,
}

/// A compiled network: topologically ordered layer DAG plus the mutable
/// state of the last forward pass (per-ReLU activation masks).
#[derive(Debug, Clone)]
pub struct Network {
    layers: Vec<Node>,
    input_shape: [usize; 3],
    classes: usize,
    /// Per-sample output shape of each node.
    sample_shapes: Vec<Vec<usize>>,
    /// Node ids of ReLU layers, in layer order.
    relu_nodes: Vec<usize>,
    /// Boolean mask (output > 0) per ReLU layer, batch-major within layer,
    /// captured by the last forward pass.
    relu_mask_buffer: Vec<Vec<bool>>,
    param_count: usize,
    momentum: Vec<Option<(Tensor, Tensor)>>,
    cache: Option<ForwardCache>,
}

impl Network {
    /// Build and validate a network from a topologically ordered node list.
    pub fn new(layers: Vec<Node>, input_shape: [usize; 3], classes: usize) -> Result<Self, NnError> {
        let n = layers.len();
        if n == 0 {
            return Err(NnError::Config {
                node: 0,
                detail: "empty layer list".into(),
            });
        }
        let mut sample_shapes: Vec<Vec<usize>> = Vec::with_capacity(n);
        let mut consumed = vec![false; n];
        let mut uses_input = false;
        for (idx, node) in layers.iter().enumerate() {
            if node.id != idx {
                return Err(NnError::Config {
                    node: node.id,
                    detail: format!("node id {} at position {}", node.id, idx),
                });
            }
            let mut in_shapes: Vec<Vec<usize>> = Vec::with_capacity(node.inputs.len());
            for src in &node.inputs {
                match *src {
                    Src::Input => {
                        uses_input = true;
                        in_shapes.push(input_shape.to_vec());
                    }
                    Src::Node(j) => {
                        if j >= idx {
                            return Err(NnError::Config {
                                node: idx,
                                detail: format!("input node {} is not earlier in the order", j),
                            });
                        }
                        consumed[j] = true;
                        in_shapes.push(sample_shapes[j].clone());
                    }
                }
            }
            sample_shapes.push(infer_shape(idx, &node.kind, &in_shapes)?);
        }
        if !uses_input {
            return Err(NnError::Config {
                node: 0,
                detail: "no node reads the network input".into(),
            });
        }
        for (j, c) in consumed.iter().enumerate().take(n - 1) {
            if !c {
                return Err(NnError::Config {
                    node: j,
                    detail: "node output is never consumed (multiple sinks)".into(),
                });
            }
        }
        if sample_shapes[n - 1] != vec![classes] {
            return Err(NnError::Config {
                node: n - 1,
                detail: format!(
                    "sink shape {:?} is not the class count {}",
                    sample_shapes[n - 1],
                    classes
                ),
            });
        }
        let relu_nodes: Vec<usize> = layers
            .iter()
            .filter(|l| matches!(l.kind, LayerKind::Relu))
            .map(|l| l.id)
            .collect();
        let param_count = layers.iter().map(|l| l.kind.param_count()).sum();
        let momentum = vec![None; n];
        Ok(Network {
            layers,
            input_shape,
            classes,
            sample_shapes,
            relu_nodes,
            relu_mask_buffer: Vec::new(),
            param_count,
            momentum,
            cache: None,
        })
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    pub fn layers(&self) -> &[Node] {
        &self.layers
    }

    /// Total ReLU output elements per input sample (the activation-unit count).
    pub fn activation_units(&self) -> usize {
        self.relu_nodes
            .iter()
            .map(|&id| self.sample_shapes[id].iter().product::<usize>())
            .sum()
    }

    pub fn num_relu_layers(&self) -> usize {
        self.relu_nodes.len()
    }

    /// Masks captured by the last forward pass: one `Vec<bool>` per ReLU
    /// layer, laid out batch-major (sample i occupies elements
    /// `i*per_sample .. (i+1)*per_sample`).
    pub fn relu_mask_buffer(&self) -> &[Vec<bool>] {
        &self.relu_mask_buffer
    }

    /// Per-sample element count of ReLU layer `k` (layer order).
    pub fn relu_layer_elems(&self, k: usize) -> usize {
        self.sample_shapes[self.relu_nodes[k]].iter().product()
    }

    /// Parameter tensors in node order (weight, then bias, per layer).
    pub fn param_tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for node in &self.layers {
            match &node.kind {
                LayerKind::Conv2d { weight, bias, .. } | LayerKind::Linear { weight, bias, .. } => {
                    out.push(weight);
                    out.push(bias);
                }
                _ => {}
            }
        }
        out
    }

    pub fn param_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for node in &mut self.layers {
            match &mut node.kind {
                LayerKind::Conv2d { weight, bias, .. } | LayerKind::Linear { weight, bias, .. } => {
                    out.push(weight);
                    out.push(bias);
                }
                _ => {}
            }
        }
        out
    }

    /// FNV-1a checksum over all parameter bytes. Useful for asserting that
    /// a code path performed no parameter update.
    pub fn param_checksum(&self) -> u64 {
        let mut bytes = Vec::new();
        for t in self.param_tensors() {
            for v in t.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        crate::seed::fnv1a64(&bytes)
    }

    /// Draw conv/linear weights from a fan-in-scaled normal
    /// (std = sqrt(2/fan_in)), zero the biases, and clear optimizer state.
    /// Deterministic given `seed`.
    pub fn init_params(&mut self, seed: u64) {
        let mut rng = stream_rng(seed, "init-params", 0);
        for node in &mut self.layers {
            match &mut node.kind {
                LayerKind::Conv2d {
                    k,
                    cin,
                    weight,
                    bias,
                    ..
                } => {
                    let fan_in = *cin * *k * *k;
                    fill_normal(weight, fan_in, &mut rng);
                    bias.data_mut().fill(0.0);
                }
                LayerKind::Linear {
                    fin, weight, bias, ..
                } => {
                    fill_normal(weight, *fin, &mut rng);
                    bias.data_mut().fill(0.0);
                }
                _ => {}
            }
        }
        self.momentum = vec![None; self.layers.len()];
        self.cache = None;
    }

    /// Run the batch through the DAG. Stores per-ReLU masks and the
    /// activation cache needed by [`Network::backward`].
    pub fn forward(&mut self, batch: &Tensor) -> Result<Tensor, NnError> {
        let bshape = batch.shape();
        if bshape.len() != 4
            || bshape[1] != self.input_shape[0]
            || bshape[2] != self.input_shape[1]
            || bshape[3] != self.input_shape[2]
        {
            return Err(NnError::ShapeMismatch {
                node: 0,
                detail: format!(
                    "batch shape {:?} vs declared input {:?}",
                    bshape, self.input_shape
                ),
            });
        }
        let n = bshape[0];
        let mut outputs: Vec<Tensor> = Vec::with_capacity(self.layers.len());
        let mut masks: Vec<Vec<bool>> = Vec::with_capacity(self.relu_nodes.len());
        for node in &self.layers {
            let ins: Vec<&Tensor> = node
                .inputs
                .iter()
                .map(|src| match *src {
                    Src::Input => batch,
                    Src::Node(j) => &outputs[j],
                })
                .collect();
            let out = eval_node(node, &ins, n)?;
            if let LayerKind::Relu = node.kind {
                masks.push(out.data().iter().map(|&v| v > 0.0).collect());
            }
            outputs.push(out);
        }
        self.relu_mask_buffer = masks;
        let logits = outputs.last().unwrap().clone();
        self.cache = Some(ForwardCache {
            batch: batch.clone(),
            outputs,
        });
        Ok(logits)
    }

    /// Gradients of mean softmax cross-entropy w.r.t. all parameters.
    /// Requires a forward pass on the same batch to have just completed.
    /// Returns the gradient store and the loss value.
    pub fn backward(&mut self, labels: &[usize]) -> Result<(GradStore, f64), NnError> {
        let cache = self.cache.as_ref().ok_or(NnError::NoForward)?;
        let n = cache.batch.shape()[0];
        if labels.len() != n {
            return Err(NnError::ShapeMismatch {
                node: self.layers.len() - 1,
                detail: format!("{} labels for batch of {}", labels.len(), n),
            });
        }
        for (i, &l) in labels.iter().enumerate() {
            if l >= self.classes {
                return Err(NnError::Config {
                    node: self.layers.len() - 1,
                    detail: format!("label {} out of range at row {}", l, i),
                });
            }
        }
        let logits = cache.outputs.last().unwrap();
        let (loss, dlogits) = softmax_cross_entropy(logits, labels);

        // dL/d(node output), accumulated from consumers, walked in reverse.
        let mut out_grads: Vec<Option<Tensor>> = vec![None; self.layers.len()];
        let mut grads: Vec<Option<(Tensor, Tensor)>> = vec![None; self.layers.len()];
        *out_grads.last_mut().unwrap() = Some(dlogits);
        for idx in (0..self.layers.len()).rev() {
            let gout = match out_grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &self.layers[idx];
            let ins: Vec<&Tensor> = node
                .inputs
                .iter()
                .map(|src| match *src {
                    Src::Input => &cache.batch,
                    Src::Node(j) => &cache.outputs[j],
                })
                .collect();
            let (gins, pgrad) = backward_node(node, &ins, &cache.outputs[idx], &gout);
            grads[idx] = pgrad;
            for (src, gin) in node.inputs.iter().zip(gins) {
                if let Src::Node(j) = *src {
                    match &mut out_grads[j] {
                        Some(acc) => {
                            for (a, b) in acc.data_mut().iter_mut().zip(gin.data()) {
                                *a += b;
                            }
                        }
                        slot => *slot = Some(gin),
                    }
                }
            }
        }
        Ok((GradStore { grads }, loss))
    }

    /// Momentum-SGD update: v = mu*v + g; w -= lr*v. Momentum buffers
    /// persist across steps.
    pub fn sgd_step(&mut self, grads: &GradStore, lr: f64, momentum: f64) -> Result<(), NnError> {
        for (idx, g) in grads.grads.iter().enumerate() {
            let (gw, gb) = match g {
                Some(pair) => pair,
                None => continue,
            };
            if !gw.all_finite() || !gb.all_finite() {
                return Err(NnError::Divergence { node: idx });
            }
            let buf = self.momentum[idx].get_or_insert_with(|| {
                (
                    Tensor::zeros(gw.shape()),
                    Tensor::zeros(gb.shape()),
                )
            });
            update_momentum(&mut buf.0, gw, momentum);
            update_momentum(&mut buf.1, gb, momentum);
            let (vw, vb) = (buf.0.clone(), buf.1.clone());
            match &mut self.layers[idx].kind {
                LayerKind::Conv2d { weight, bias, .. } | LayerKind::Linear { weight, bias, .. } => {
                    for (w, v) in weight.data_mut().iter_mut().zip(vw.data()) {
                        *w -= lr * v;
                    }
                    for (b, v) in bias.data_mut().iter_mut().zip(vb.data()) {
                        *b -= lr * v;
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }
}

fn update_momentum(buf: &mut Tensor, grad: &Tensor, momentum: f64) {
    for (v, g) in buf.data_mut().iter_mut().zip(grad.data()) {
        *v = momentum * *v + g;
    }
}

fn fill_normal(t: &mut Tensor, fan_in: usize, rng: &mut impl Rng) {
    let std = (2.0 / fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("positive std");
    for v in t.data_mut() {
        *v = dist.sample(rng);
    }
}

/// Mean softmax cross-entropy and its gradient w.r.t. logits.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> (f64, Tensor) {
    let n = logits.shape()[0];
    let c = logits.shape()[1];
    let mut dlogits = Tensor::zeros(logits.shape());
    let mut loss = 0.0;
    for i in 0..n {
        let row = &logits.data()[i * c..(i + 1) * c];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for &v in row {
            sum += (v - max).exp();
        }
        let lse = max + sum.ln();
        loss += lse - row[labels[i]];
        let drow = &mut dlogits.data_mut()[i * c..(i + 1) * c];
        for (j, d) in drow.iter_mut().enumerate() {
            let p = (row[j] - lse).exp();
            *d = (p - if j == labels[i] { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    (loss / n as f64, dlogits)
}

/// Classification accuracy of logits against labels (argmax, first-max ties).
pub fn accuracy(logits: &Tensor, labels: &[usize]) -> f64 {
    let n = logits.shape()[0];
    let c = logits.shape()[1];
    let mut correct = 0usize;
    for i in 0..n {
        let row = &logits.data()[i * c..(i + 1) * c];
        let mut best = 0usize;
        for j in 1..c {
            if row[j] > row[best] {
                best = j;
            }
        }
        if best == labels[i] {
            correct += 1;
        }
    }
    correct as f64 / n as f64
}

fn infer_shape(node: usize, kind: &LayerKind, ins: &[Vec<usize>]) -> Result<Vec<usize>, NnError> {
    let arity_err = |want: &str| NnError::Config {
        node,
        detail: format!("expected {} input(s), got {}", want, ins.len()),
    };
    let mismatch = |detail: String| NnError::ShapeMismatch { node, detail };
    match kind {
        LayerKind::Conv2d {
            k,
            cin,
            cout,
            stride,
            padding,
            weight,
            bias,
        } => {
            if ins.len() != 1 {
                return Err(arity_err("1"));
            }
            let s = &ins[0];
            if s.len() != 3 || s[0] != *cin {
                return Err(mismatch(format!("conv input {:?}, cin {}", s, cin)));
            }
            if weight.shape() != [*cout, *cin, *k, *k] || bias.shape() != [*cout] {
                return Err(mismatch("conv parameter shapes".into()));
            }
            let oh = conv_out(s[1], *k, *stride, *padding)
                .ok_or_else(|| mismatch(format!("conv spatial {:?} with k={} s={} p={}", s, k, stride, padding)))?;
            let ow = conv_out(s[2], *k, *stride, *padding)
                .ok_or_else(|| mismatch(format!("conv spatial {:?}", s)))?;
            Ok(vec![*cout, oh, ow])
        }
        LayerKind::Linear {
            fin,
            fout,
            weight,
            bias,
        } => {
            if ins.len() != 1 {
                return Err(arity_err("1"));
            }
            let s = &ins[0];
            if s != &vec![*fin] {
                return Err(mismatch(format!("linear input {:?}, fin {}", s, fin)));
            }
            if weight.shape() != [*fout, *fin] || bias.shape() != [*fout] {
                return Err(mismatch("linear parameter shapes".into()));
            }
            Ok(vec![*fout])
        }
        LayerKind::Relu => {
            if ins.len() != 1 {
                return Err(arity_err("1"));
            }
            Ok(ins[0].clone())
        }
        LayerKind::MaxPool2d { k, stride, padding } => {
            if ins.len() != 1 {
                return Err(arity_err("1"));
            }
            let s = &ins[0];
            if s.len() != 3 {
                return Err(mismatch(format!("pool input {:?}", s)));
            }
            let oh = conv_out(s[1], *k, *stride, *padding)
                .ok_or_else(|| mismatch(format!("pool spatial {:?}", s)))?;
            let ow = conv_out(s[2], *k, *stride, *padding)
                .ok_or_else(|| mismatch(format!("pool spatial {:?}", s)))?;
            Ok(vec![s[0], oh, ow])
        }
        LayerKind::GlobalAvgPool => {
            if ins.len() != 1 {
                return Err(arity_err("1"));
            }
            let s = &ins[0];
            if s.len() != 3 {
                return Err(mismatch(format!("gap input {:?}", s)));
            }
            Ok(vec![s[0]])
        }
        LayerKind::Add => {
            if ins.is_empty() {
                return Err(arity_err(">=1"));
            }
            for s in &ins[1..] {
                if s != &ins[0] {
                    return Err(mismatch(format!("add branches {:?} vs {:?}", ins[0], s)));
                }
            }
            Ok(ins[0].clone())
        }
        LayerKind::Concat => {
            if ins.is_empty() {
                return Err(arity_err(">=1"));
            }
            let (h, w) = match ins[0].as_slice() {
                [_, h, w] => (*h, *w),
                s => return Err(mismatch(format!("concat input {:?}", s))),
            };
            let mut c = 0;
            for s in ins {
                match s.as_slice() {
                    [ci, hi, wi] if *hi == h && *wi == w => c += ci,
                    s => return Err(mismatch(format!("concat branch {:?}", s))),
                }
            }
            Ok(vec![c, h, w])
        }
    }
}

fn conv_out(extent: usize, k: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = extent + 2 * padding;
    if padded < k || stride == 0 {
        return None;
    }
    Some((padded - k) / stride + 1)
}

fn eval_node(node: &Node, ins: &[&Tensor], n: usize) -> Result<Tensor, NnError> {
    let out = match &node.kind {
        LayerKind::Conv2d {
            k,
            stride,
            padding,
            weight,
            bias,
            ..
        } => conv::conv2d_forward(ins[0], weight, bias, *k, *stride, *padding),
        LayerKind::Linear { weight, bias, .. } => conv::linear_forward(ins[0], weight, bias),
        LayerKind::Relu => {
            let mut out = ins[0].clone();
            for v in out.data_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            out
        }
        LayerKind::MaxPool2d { k, stride, padding } => {
            conv::maxpool_forward(ins[0], *k, *stride, *padding)
        }
        LayerKind::GlobalAvgPool => conv::gap_forward(ins[0]),
        LayerKind::Add => {
            let mut out = ins[0].clone();
            for t in &ins[1..] {
                for (a, b) in out.data_mut().iter_mut().zip(t.data()) {
                    *a += b;
                }
            }
            let scale = 1.0 / ins.len() as f64;
            for v in out.data_mut() {
                *v *= scale;
            }
            out
        }
        LayerKind::Concat => conv::concat_forward(ins),
    };
    debug_assert_eq!(out.shape()[0], n);
    Ok(out)
}

/// Per-input gradients and optional parameter gradients for one node.
fn backward_node(
    node: &Node,
    ins: &[&Tensor],
    out: &Tensor,
    gout: &Tensor,
) -> (Vec<Tensor>, Option<(Tensor, Tensor)>) {
    match &node.kind {
        LayerKind::Conv2d {
            k,
            stride,
            padding,
            weight,
            ..
        } => {
            let (gin, gw, gb) = conv::conv2d_backward(ins[0], weight, gout, *k, *stride, *padding);
            (vec![gin], Some((gw, gb)))
        }
        LayerKind::Linear { weight, .. } => {
            let (gin, gw, gb) = conv::linear_backward(ins[0], weight, gout);
            (vec![gin], Some((gw, gb)))
        }
        LayerKind::Relu => {
            let mut gin = gout.clone();
            for (g, &o) in gin.data_mut().iter_mut().zip(out.data()) {
                if o <= 0.0 {
                    *g = 0.0;
                }
            }
            (vec![gin], None)
        }
        LayerKind::MaxPool2d { k, stride, padding } => {
            let gin = conv::maxpool_backward(ins[0], gout, *k, *stride, *padding);
            (vec![gin], None)
        }
        LayerKind::GlobalAvgPool => (vec![conv::gap_backward(ins[0], gout)], None),
        LayerKind::Add => {
            let mut gin = gout.clone();
            let scale = 1.0 / ins.len() as f64;
            for v in gin.data_mut() {
                *v *= scale;
            }
            (ins.iter().map(|_| gin.clone()).collect(), None)
        }
        LayerKind::Concat => (conv::concat_backward(ins, gout), None),
    }
}
