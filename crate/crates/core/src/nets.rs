//! Fully connected ReLU classifiers, the student→teacher feature projector,
//! hand-written backpropagation, and SGD with momentum.
//!
//! Every affine layer computes `x · W + b` with `W` stored as
//! `fan_in × fan_out`. All layers but the last are followed by a ReLU. The
//! input to the last layer is the network's feature representation and its
//! output is the logit vector.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{KrdError, Result};
use crate::numerics::{fmt_row, Matrix, RngState};

pub const NET_MAGIC: &str = "KRDNET 1";

/// Default hidden-layer count of the feature projector.
pub const PROJECTOR_HIDDEN_LAYERS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedForwardNet {
    dims: Vec<usize>,
    weights: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
}

/// Output of a forward pass. `features` row k and `logits` row k come from input row k.
#[derive(Debug, Clone)]
pub struct NetOutput {
    pub features: Matrix,
    pub logits: Matrix,
    // inputs to every affine layer except the last (whose input is `features`)
    cache: Option<Vec<Matrix>>,
}

impl NetOutput {
    /// An output without a forward cache. Usable by losses, not by `backward`.
    pub fn from_parts(features: Matrix, logits: Matrix) -> Result<Self> {
        if features.rows() != logits.rows() {
            return Err(KrdError::invalid(format!(
                "features have {} rows but logits have {}",
                features.rows(),
                logits.rows()
            )));
        }
        Ok(NetOutput {
            features,
            logits,
            cache: None,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.logits.rows()
    }
}

/// Parameter gradients, shaped like the network, plus the gradient on the input batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
    pub input: Matrix,
}

impl Gradients {
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(2 * self.weights.len());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.push(w.as_slice());
            out.push(b.as_slice());
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|&v| v == 0.0))
    }
}

impl FeedForwardNet {
    /// Builds a net from explicit parameters. Shapes must compose.
    pub fn from_parameters(weights: Vec<Matrix>, biases: Vec<Vec<f64>>) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(KrdError::invalid(
                "network needs at least one layer and one bias vector per layer",
            ));
        }
        let mut dims = vec![weights[0].rows()];
        for (k, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.rows() != *dims.last().unwrap() {
                return Err(KrdError::invalid(format!(
                    "layer {k}: weight has {} rows, expected {}",
                    w.rows(),
                    dims.last().unwrap()
                )));
            }
            if b.len() != w.cols() {
                return Err(KrdError::invalid(format!(
                    "layer {k}: bias length {} does not match fan_out {}",
                    b.len(),
                    w.cols()
                )));
            }
            dims.push(w.cols());
        }
        if dims.contains(&0) {
            return Err(KrdError::invalid("layer widths must be positive"));
        }
        Ok(FeedForwardNet {
            dims,
            weights,
            biases,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn feature_dim(&self) -> usize {
        self.dims[self.dims.len() - 2]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn num_parameters(&self) -> usize {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| w.as_slice().len() + b.len())
            .sum()
    }

    /// Parameter slices in the order `W0, b0, W1, b1, ...`, matching [`Gradients::slices`].
    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(2 * self.weights.len());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.push(w.as_slice());
            out.push(b.as_slice());
        }
        out
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(2 * self.weights.len());
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(w.as_mut_slice());
            out.push(b.as_mut_slice());
        }
        out
    }

    pub fn zero_gradients(&self, batch: usize) -> Gradients {
        Gradients {
            weights: self
                .weights
                .iter()
                .map(|w| Matrix::zeros(w.rows(), w.cols()))
                .collect(),
            biases: self.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            input: Matrix::zeros(batch, self.input_dim()),
        }
    }

    fn affine(&self, k: usize, x: &Matrix) -> Result<Matrix> {
        let mut z = x.matmul(&self.weights[k])?;
        let b = &self.biases[k];
        for i in 0..z.rows() {
            for (v, &bj) in z.row_mut(i).iter_mut().zip(b) {
                *v += bj;
            }
        }
        Ok(z)
    }

    pub fn forward(&self, batch: &Matrix) -> Result<NetOutput> {
        if batch.cols() != self.input_dim() {
            return Err(KrdError::invalid(format!(
                "batch has {} columns, network expects {}",
                batch.cols(),
                self.input_dim()
            )));
        }
        let last = self.num_layers() - 1;
        let mut cache = Vec::with_capacity(last);
        let mut x = batch.clone();
        for k in 0..last {
            let mut z = self.affine(k, &x)?;
            z.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
            cache.push(std::mem::replace(&mut x, z));
        }
        let logits = self.affine(last, &x)?;
        Ok(NetOutput {
            features: x,
            logits,
            cache: Some(cache),
        })
    }

    /// Backpropagates upstream gradients on the logits and on the feature
    /// layer. The two paths are summed at the feature layer.
    pub fn backward(
        &self,
        output: &NetOutput,
        grad_logits: &Matrix,
        grad_features: &Matrix,
    ) -> Result<Gradients> {
        let cache = output
            .cache
            .as_ref()
            .ok_or_else(|| KrdError::Contract("backward called without a forward cache".into()))?;
        let b = output.batch_size();
        if grad_logits.shape() != (b, self.output_dim()) {
            return Err(KrdError::invalid(format!(
                "logit gradient shape {:?}, expected {:?}",
                grad_logits.shape(),
                (b, self.output_dim())
            )));
        }
        if grad_features.shape() != (b, self.feature_dim()) {
            return Err(KrdError::invalid(format!(
                "feature gradient shape {:?}, expected {:?}",
                grad_features.shape(),
                (b, self.feature_dim())
            )));
        }

        let layers = self.num_layers();
        let mut gw = vec![Matrix::zeros(0, 0); layers];
        let mut gb = vec![Vec::new(); layers];

        let mut delta = grad_logits.clone();
        let mut layer_input = &output.features;
        for k in (0..layers).rev() {
            gw[k] = layer_input.matmul_at(&delta)?;
            gb[k] = column_sums(&delta);
            let mut grad_in = delta.matmul_bt(&self.weights[k])?;
            if k == layers - 1 {
                grad_in.add_scaled(grad_features, 1.0)?;
            }
            if k == 0 {
                return Ok(Gradients {
                    weights: gw,
                    biases: gb,
                    input: grad_in,
                });
            }
            // layer_input = relu(pre-activation); the ReLU passes gradient where it is positive
            for (g, &a) in grad_in
                .as_mut_slice()
                .iter_mut()
                .zip(layer_input.as_slice())
            {
                if a <= 0.0 {
                    *g = 0.0;
                }
            }
            delta = grad_in;
            layer_input = &cache[k - 1];
        }
        unreachable!("network has at least one layer")
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        write_params(&mut s, NET_MAGIC, self);
        s
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        parse_params(text, path, NET_MAGIC)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| KrdError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| KrdError::io(path, e))?;
        Self::from_text(&text, path)
    }
}

fn column_sums(m: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; m.cols()];
    for r in m.iter_rows() {
        for (o, &v) in out.iter_mut().zip(r) {
            *o += v;
        }
    }
    out
}

fn write_params(s: &mut String, magic: &str, net: &FeedForwardNet) {
    let dims: Vec<String> = net.dims.iter().map(|d| d.to_string()).collect();
    let _ = writeln!(s, "{magic}");
    let _ = writeln!(s, "{}", dims.join(" "));
    for (w, b) in net.weights.iter().zip(&net.biases) {
        let _ = writeln!(s, "{}", fmt_row(w.as_slice()));
        let _ = writeln!(s, "{}", fmt_row(b));
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> KrdError {
    KrdError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

pub(crate) fn parse_number_line(
    line: &str,
    expected: usize,
    path: &Path,
    lineno: usize,
) -> Result<Vec<f64>> {
    let vals: Vec<f64> = line
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| parse_err(path, lineno, format!("not a number: `{t}`")))
        })
        .collect::<Result<_>>()?;
    if vals.len() != expected {
        return Err(parse_err(
            path,
            lineno,
            format!("expected {expected} values, found {}", vals.len()),
        ));
    }
    if let Some(v) = vals.iter().find(|v| !v.is_finite()) {
        return Err(parse_err(path, lineno, format!("non-finite value {v}")));
    }
    Ok(vals)
}

fn parse_params(text: &str, path: &Path, magic: &str) -> Result<FeedForwardNet> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, l)) if l.trim() == magic => {}
        Some((n, l)) => return Err(parse_err(path, n, format!("bad magic `{l}`, expected `{magic}`"))),
        None => return Err(parse_err(path, 1, "empty file")),
    }
    let (n, dims_line) = lines.next().ok_or_else(|| parse_err(path, 2, "missing dims line"))?;
    let dims: Vec<usize> = dims_line
        .split_whitespace()
        .map(|t| {
            t.parse::<usize>()
                .map_err(|_| parse_err(path, n, format!("bad layer width `{t}`")))
        })
        .collect::<Result<_>>()?;
    if dims.len() < 2 || dims.contains(&0) {
        return Err(parse_err(path, n, "need at least two positive layer widths"));
    }
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for k in 0..dims.len() - 1 {
        let (fi, fo) = (dims[k], dims[k + 1]);
        let (n, l) = lines
            .next()
            .ok_or_else(|| parse_err(path, n + 1 + 2 * k, format!("missing weights of layer {k}")))?;
        weights.push(Matrix::from_vec(fi, fo, parse_number_line(l, fi * fo, path, n)?)?);
        let (n, l) = lines
            .next()
            .ok_or_else(|| parse_err(path, n + 1, format!("missing bias of layer {k}")))?;
        biases.push(parse_number_line(l, fo, path, n)?);
    }
    if let Some((n, l)) = lines.find(|(_, l)| !l.trim().is_empty()) {
        return Err(parse_err(path, n, format!("trailing content `{}`", truncate(l))));
    }
    FeedForwardNet::from_parameters(weights, biases)
}

fn truncate(s: &str) -> &str {
    match s.char_indices().nth(32) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

/// He-initialized network: weights `N(0, 2 / fan_in)`, zero biases.
pub fn init_net(rng: &mut RngState, layer_dims: &[usize]) -> Result<FeedForwardNet> {
    if layer_dims.len() < 2 {
        return Err(KrdError::invalid(format!(
            "a network needs at least 2 layer widths, got {}",
            layer_dims.len()
        )));
    }
    if layer_dims.contains(&0) {
        return Err(KrdError::invalid("layer widths must be positive"));
    }
    let mut weights = Vec::with_capacity(layer_dims.len() - 1);
    let mut biases = Vec::with_capacity(layer_dims.len() - 1);
    for win in layer_dims.windows(2) {
        let (fan_in, fan_out) = (win[0], win[1]);
        let std = (2.0 / fan_in as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| std * rng.standard_normal())
            .collect();
        weights.push(Matrix::from_vec(fan_in, fan_out, data)?);
        biases.push(vec![0.0; fan_out]);
    }
    FeedForwardNet::from_parameters(weights, biases)
}

/// MLP mapping student features into the teacher feature space.
/// Hidden width is `max(d_student, d_teacher)`; the output layer is linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectorNet {
    pub net: FeedForwardNet,
}

impl ProjectorNet {
    pub fn new(
        rng: &mut RngState,
        student_dim: usize,
        teacher_dim: usize,
        hidden_layers: usize,
    ) -> Result<Self> {
        let width = student_dim.max(teacher_dim);
        let mut dims = vec![student_dim];
        dims.extend(std::iter::repeat_n(width, hidden_layers));
        dims.push(teacher_dim);
        Ok(ProjectorNet {
            net: init_net(rng, &dims)?,
        })
    }

    pub fn hidden_layers(&self) -> usize {
        self.net.num_layers() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.net.output_dim()
    }

    /// Projection of `student_features`; the projection lives in `logits`.
    pub fn forward(&self, student_features: &Matrix) -> Result<NetOutput> {
        self.net.forward(student_features)
    }

    /// Gradients of the projector parameters and of its input, given the
    /// gradient on the projection.
    pub fn backward(&self, output: &NetOutput, grad_projection: &Matrix) -> Result<Gradients> {
        let zero = Matrix::zeros(output.batch_size(), self.net.feature_dim());
        self.net.backward(output, grad_projection, &zero)
    }
}

/// Momentum SGD state.
///
/// Update rule, per parameter θ with gradient g:
/// `v ← momentum · v + g + weight_decay · θ`, then `θ ← θ − lr · v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub momentum: f64,
    pub weight_decay: f64,
    pub base_lr: f64,
    pub steps: u64,
    pub epoch: usize,
    velocity: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(shapes: &[usize], momentum: f64, weight_decay: f64, base_lr: f64) -> Self {
        OptimizerState {
            momentum,
            weight_decay,
            base_lr,
            steps: 0,
            epoch: 0,
            velocity: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_net(net: &FeedForwardNet, momentum: f64, weight_decay: f64, base_lr: f64) -> Self {
        let shapes: Vec<usize> = net.param_slices().iter().map(|s| s.len()).collect();
        Self::new(&shapes, momentum, weight_decay, base_lr)
    }

    pub fn velocity(&self) -> &[Vec<f64>] {
        &self.velocity
    }

    pub fn step_net(&mut self, net: &mut FeedForwardNet, grads: &Gradients, lr: f64) -> Result<()> {
        let g = grads.slices();
        let mut p = net.param_slices_mut();
        sgd_step(self, &mut p, &g, lr)
    }
}

pub fn sgd_step(
    state: &mut OptimizerState,
    params: &mut [&mut [f64]],
    grads: &[&[f64]],
    lr: f64,
) -> Result<()> {
    if !(lr > 0.0) || !lr.is_finite() {
        return Err(KrdError::invalid(format!("learning rate must be positive, got {lr}")));
    }
    if params.len() != grads.len() || params.len() != state.velocity.len() {
        return Err(KrdError::invalid(format!(
            "sgd_step: {} parameter tensors, {} gradients, {} momentum buffers",
            params.len(),
            grads.len(),
            state.velocity.len()
        )));
    }
    for ((theta, g), v) in params.iter_mut().zip(grads).zip(&mut state.velocity) {
        if theta.len() != g.len() || theta.len() != v.len() {
            return Err(KrdError::invalid("sgd_step: tensor shape mismatch"));
        }
        for ((t, &gi), vi) in theta.iter_mut().zip(g.iter()).zip(v.iter_mut()) {
            *vi = state.momentum * *vi + gi + state.weight_decay * *t;
            *t -= lr * *vi;
        }
    }
    state.steps += 1;
    Ok(())
}

/// `base_lr · ½ · (1 + cos(π · epoch / total_epochs))`.
pub fn cosine_lr(epoch: usize, total_epochs: usize, base_lr: f64) -> Result<f64> {
    if epoch >= total_epochs {
        return Err(KrdError::invalid(format!(
            "epoch {epoch} out of range for {total_epochs} total epochs"
        )));
    }
    if !(base_lr > 0.0) {
        return Err(KrdError::invalid(format!("base_lr must be positive, got {base_lr}")));
    }
    let phase = std::f64::consts::PI * epoch as f64 / total_epochs as f64;
    Ok(base_lr * 0.5 * (1.0 + phase.cos()))
}
