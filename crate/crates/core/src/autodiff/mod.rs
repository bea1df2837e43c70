//! Minimal dense-tensor arithmetic with reverse-mode automatic
//! differentiation, sized for the field and ray-drop networks: a handful of
//! coarse-grained ops on row-major f64 tensors, recorded on a replayable
//! tape.

mod adam;
mod fd;
mod kernels;

pub use adam::{AdamHyper, AdamState};
pub use fd::finite_difference_check;
pub(crate) use kernels::{gemm, gemm_at_b, transpose};

use std::collections::HashMap;
use std::sync::Arc;
use thiserror::Error;

/// Inputs to `exp` are clamped here to keep transmittance terms finite.
pub const EXP_CLAMP: f64 = 80.0;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {lhs} and {rhs}")]
    ShapeMismatch { op: &'static str, lhs: String, rhs: String },
    #[error("{op}: expected {want} inputs, got {got}")]
    Arity { op: &'static str, want: usize, got: usize },
    #[error("{op}: inputs must be rank-2, got {shape}")]
    Rank { op: &'static str, shape: String },
    #[error("backward requires a scalar loss, got shape {0}")]
    NonScalarLoss(String),
    #[error("backward requires a loss recorded on this tape")]
    UntrackedLoss,
    #[error("tensor shape {shape} does not match data length {len}")]
    BadShape { shape: String, len: usize },
    #[error("adam: parameter/gradient/accumulator shape mismatch at index {0}")]
    AdamShape(usize),
}

pub type Result<T> = std::result::Result<T, AutodiffError>;

fn fmt_shape(shape: &[usize]) -> String {
    let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
    format!("[{}]", dims.join("x"))
}

/// Immutable dense tensor. Cloning is cheap (shared storage); tensors are
/// safe to read from multiple threads.
#[derive(Debug, Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    node: Option<usize>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) || numel != data.len() {
            return Err(AutodiffError::BadShape { shape: fmt_shape(&shape), len: data.len() });
        }
        Ok(Tensor { shape, data: Arc::new(data), node: None })
    }

    pub fn from_vec(data: Vec<f64>) -> Tensor {
        let n = data.len();
        Tensor::new(vec![n], data).expect("non-empty vector")
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::from_vec(vec![v])
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let numel: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: Arc::new(vec![0.0; numel]), node: None }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Tensor> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    pub fn node_id(&self) -> Option<usize> {
        self.node
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.numel(), 1);
        self.data[0]
    }

    /// Metadata-only view with a new shape of equal element count. Keeps the
    /// tape node, so gradients flow through unchanged (grads are stored flat).
    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != self.numel() || shape.iter().any(|&d| d == 0) {
            return Err(AutodiffError::BadShape { shape: fmt_shape(&shape), len: self.numel() });
        }
        Ok(Tensor { shape, data: Arc::clone(&self.data), node: self.node })
    }

    /// Rows of a rank-2 tensor (rank-1 counts as a single row).
    fn dims2(&self) -> (usize, usize) {
        match self.shape.len() {
            1 => (1, self.shape[0]),
            2 => (self.shape[0], self.shape[1]),
            _ => (self.shape[0], self.numel() / self.shape[0]),
        }
    }

    fn detached(&self) -> Tensor {
        Tensor { shape: self.shape.clone(), data: Arc::clone(&self.data), node: None }
    }
}

/// Operation kinds recorded on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    MatMul,
    Add,
    Sub,
    Mul,
    Relu,
    Sigmoid,
    Softplus,
    Sin,
    Cos,
    Exp,
    Neg,
    Square,
    Sum,
    Mean,
    /// Column-wise concatenation of equal-row inputs.
    Concat,
    /// Per-ray volumetric integration: inputs (sigma, values i, values p,
    /// depths t, spacings delta), all [rays x samples]; output [rays x 3]
    /// holding (depth, intensity, raydrop) expectations.
    VolumeRender,
}

impl OpKind {
    fn name(self) -> &'static str {
        match self {
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Relu => "relu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Softplus => "softplus",
            OpKind::Sin => "sin",
            OpKind::Cos => "cos",
            OpKind::Exp => "exp",
            OpKind::Neg => "neg",
            OpKind::Square => "square",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::Concat => "concat",
            OpKind::VolumeRender => "volume_render",
        }
    }
}

struct Snapshot {
    id: Option<usize>,
    data: Arc<Vec<f64>>,
    shape: Vec<usize>,
}

struct Node {
    op: OpKind,
    inputs: Vec<Snapshot>,
    out_id: usize,
    out_data: Arc<Vec<f64>>,
}

/// Recording tape. Single-writer: ops are appended in execution order, so the
/// node list is topologically sorted by construction.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    leaves: Vec<(usize, Vec<usize>)>,
    next_id: usize,
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    /// Register a tensor as a differentiable leaf and return the tracked
    /// handle to use in subsequent ops.
    pub fn leaf(&mut self, t: &Tensor) -> Tensor {
        let id = self.next_id;
        self.next_id += 1;
        self.leaves.push((id, t.shape.clone()));
        Tensor { shape: t.shape.clone(), data: Arc::clone(&t.data), node: Some(id) }
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
        self.leaves.clear();
        self.next_id = 0;
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Generic entry point: validates shapes for `op`, computes the result,
    /// and records a node when any input is tracked.
    pub fn forward(&mut self, op: OpKind, inputs: &[&Tensor]) -> Result<Tensor> {
        let (shape, data) = eval_op(op, inputs)?;
        let tracked = inputs.iter().any(|t| t.requires_grad());
        let data = Arc::new(data);
        let mut out = Tensor { shape, data: Arc::clone(&data), node: None };
        if tracked {
            let id = self.next_id;
            self.next_id += 1;
            out.node = Some(id);
            self.nodes.push(Node {
                op,
                inputs: inputs
                    .iter()
                    .map(|t| Snapshot {
                        id: t.node,
                        data: Arc::clone(&t.data),
                        shape: t.shape.clone(),
                    })
                    .collect(),
                out_id: id,
                out_data: data,
            });
        }
        Ok(out)
    }

    pub fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.forward(OpKind::MatMul, &[a, b])
    }
    pub fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.forward(OpKind::Add, &[a, b])
    }
    pub fn sub(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.forward(OpKind::Sub, &[a, b])
    }
    pub fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.forward(OpKind::Mul, &[a, b])
    }
    pub fn relu(&mut self, x: &Tensor) -> Result<Tensor> {
        self.forward(OpKind::Relu, &[x])
    }
    pub fn sigmoid(&mut self, x: &Tensor) -> Result<Tensor> {
        self.forward(OpKind::Sigmoid, &[x])
    }
    pub fn softplus(&mut self, x: &Tensor) -> Result<Tensor> {
        self.forward(OpKind::Softplus, &[x])
    }
    pub fn sum(&mut self, x: &Tensor) -> Result<Tensor> {
        self.forward(OpKind::Sum, &[x])
    }
    pub fn mean(&mut self, x: &Tensor) -> Result<Tensor> {
        self.forward(OpKind::Mean, &[x])
    }
    pub fn square(&mut self, x: &Tensor) -> Result<Tensor> {
        self.forward(OpKind::Square, &[x])
    }
    pub fn concat(&mut self, inputs: &[&Tensor]) -> Result<Tensor> {
        self.forward(OpKind::Concat, inputs)
    }

    /// Gradients of a scalar loss with respect to every registered leaf.
    /// Leaves not reached by the loss get zero gradients.
    pub fn backward(&self, loss: &Tensor) -> Result<GradientMap> {
        if loss.numel() != 1 {
            return Err(AutodiffError::NonScalarLoss(fmt_shape(&loss.shape)));
        }
        let loss_id = loss.node.ok_or(AutodiffError::UntrackedLoss)?;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.next_id];
        grads[loss_id] = Some(vec![1.0]);

        for node in self.nodes.iter().rev() {
            let Some(gout) = grads[node.out_id].take() else { continue };
            let input_grads = backward_op(node, &gout);
            for (snap, gin) in node.inputs.iter().zip(input_grads) {
                let (Some(id), Some(gin)) = (snap.id, gin) else { continue };
                match &mut grads[id] {
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&gin) {
                            *a += *g;
                        }
                    }
                    slot => *slot = Some(gin),
                }
            }
        }

        let mut map = HashMap::new();
        for (id, shape) in &self.leaves {
            let data = grads[*id].take().unwrap_or_else(|| vec![0.0; shape.iter().product()]);
            map.insert(*id, Tensor { shape: shape.clone(), data: Arc::new(data), node: None });
        }
        Ok(GradientMap { map })
    }
}

/// Per-leaf gradients returned by `Tape::backward`.
pub struct GradientMap {
    map: HashMap<usize, Tensor>,
}

impl GradientMap {
    /// Gradient for a tracked leaf tensor.
    pub fn get(&self, leaf: &Tensor) -> Option<&Tensor> {
        leaf.node.and_then(|id| self.map.get(&id))
    }
}

fn shape_err(op: OpKind, a: &[usize], b: &[usize]) -> AutodiffError {
    AutodiffError::ShapeMismatch { op: op.name(), lhs: fmt_shape(a), rhs: fmt_shape(b) }
}

fn want_arity(op: OpKind, inputs: &[&Tensor], want: usize) -> Result<()> {
    if inputs.len() != want {
        return Err(AutodiffError::Arity { op: op.name(), want, got: inputs.len() });
    }
    Ok(())
}

/// Broadcast classification for elementwise binary ops: identical shapes, or
/// the right operand is a single row / single element repeated over the
/// leading batch dim.
enum Broadcast {
    Same,
    Row,
    Scalar,
}

fn classify_broadcast(op: OpKind, a: &Tensor, b: &Tensor) -> Result<Broadcast> {
    if a.shape == b.shape {
        return Ok(Broadcast::Same);
    }
    if b.numel() == 1 {
        return Ok(Broadcast::Scalar);
    }
    let (_, cols) = a.dims2();
    let brow = match b.shape.len() {
        1 => b.shape[0] == cols,
        2 => b.shape[0] == 1 && b.shape[1] == cols,
        _ => false,
    };
    if brow && a.numel() >= b.numel() {
        return Ok(Broadcast::Row);
    }
    Err(shape_err(op, &a.shape, &b.shape))
}

fn eval_binary(op: OpKind, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64 + Sync) -> Result<(Vec<usize>, Vec<f64>)> {
    let out = match classify_broadcast(op, a, b)? {
        Broadcast::Same => kernels::map_binary(a.data(), b.data(), f),
        Broadcast::Scalar => {
            let bv = b.data[0];
            kernels::map_unary(a.data(), |x| f(x, bv))
        }
        Broadcast::Row => {
            let cols = b.numel();
            let mut out = vec![0.0; a.numel()];
            for (orow, arow) in out.chunks_mut(cols).zip(a.data.chunks(cols)) {
                for ((o, x), y) in orow.iter_mut().zip(arow).zip(b.data()) {
                    *o = f(*x, *y);
                }
            }
            out
        }
    };
    Ok((a.shape.clone(), out))
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn stable_softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn eval_op(op: OpKind, inputs: &[&Tensor]) -> Result<(Vec<usize>, Vec<f64>)> {
    match op {
        OpKind::MatMul => {
            want_arity(op, inputs, 2)?;
            let (a, b) = (inputs[0], inputs[1]);
            if a.shape.len() != 2 {
                return Err(AutodiffError::Rank { op: op.name(), shape: fmt_shape(&a.shape) });
            }
            if b.shape.len() != 2 {
                return Err(AutodiffError::Rank { op: op.name(), shape: fmt_shape(&b.shape) });
            }
            let (n, k) = (a.shape[0], a.shape[1]);
            let (k2, m) = (b.shape[0], b.shape[1]);
            if k != k2 {
                return Err(shape_err(op, &a.shape, &b.shape));
            }
            let mut out = vec![0.0; n * m];
            gemm(a.data(), b.data(), n, k, m, &mut out);
            Ok((vec![n, m], out))
        }
        OpKind::Add => {
            want_arity(op, inputs, 2)?;
            eval_binary(op, inputs[0], inputs[1], |x, y| x + y)
        }
        OpKind::Sub => {
            want_arity(op, inputs, 2)?;
            eval_binary(op, inputs[0], inputs[1], |x, y| x - y)
        }
        OpKind::Mul => {
            want_arity(op, inputs, 2)?;
            eval_binary(op, inputs[0], inputs[1], |x, y| x * y)
        }
        OpKind::Relu => {
            want_arity(op, inputs, 1)?;
            Ok((inputs[0].shape.clone(), kernels::map_unary(inputs[0].data(), |x| x.max(0.0))))
        }
        OpKind::Sigmoid => {
            want_arity(op, inputs, 1)?;
            Ok((inputs[0].shape.clone(), kernels::map_unary(inputs[0].data(), stable_sigmoid)))
        }
        OpKind::Softplus => {
            want_arity(op, inputs, 1)?;
            Ok((inputs[0].shape.clone(), kernels::map_unary(inputs[0].data(), stable_softplus)))
        }
        OpKind::Sin => {
            want_arity(op, inputs, 1)?;
            Ok((inputs[0].shape.clone(), kernels::map_unary(inputs[0].data(), f64::sin)))
        }
        OpKind::Cos => {
            want_arity(op, inputs, 1)?;
            Ok((inputs[0].shape.clone(), kernels::map_unary(inputs[0].data(), f64::cos)))
        }
        OpKind::Exp => {
            want_arity(op, inputs, 1)?;
            Ok((
                inputs[0].shape.clone(),
                kernels::map_unary(inputs[0].data(), |x| x.min(EXP_CLAMP).exp()),
            ))
        }
        OpKind::Neg => {
            want_arity(op, inputs, 1)?;
            Ok((inputs[0].shape.clone(), kernels::map_unary(inputs[0].data(), |x| -x)))
        }
        OpKind::Square => {
            want_arity(op, inputs, 1)?;
            Ok((inputs[0].shape.clone(), kernels::map_unary(inputs[0].data(), |x| x * x)))
        }
        OpKind::Sum => {
            want_arity(op, inputs, 1)?;
            Ok((vec![1], vec![kernels::sum_slice(inputs[0].data())]))
        }
        OpKind::Mean => {
            want_arity(op, inputs, 1)?;
            let n = inputs[0].numel() as f64;
            Ok((vec![1], vec![kernels::sum_slice(inputs[0].data()) / n]))
        }
        OpKind::Concat => {
            if inputs.is_empty() {
                return Err(AutodiffError::Arity { op: op.name(), want: 1, got: 0 });
            }
            let (rows, _) = inputs[0].dims2();
            let mut cols = 0;
            for t in inputs {
                let (r, c) = t.dims2();
                if r != rows {
                    return Err(shape_err(op, &inputs[0].shape, &t.shape));
                }
                cols += c;
            }
            let mut out = vec![0.0; rows * cols];
            let mut offset = 0;
            for t in inputs {
                let (_, c) = t.dims2();
                for r in 0..rows {
                    out[r * cols + offset..r * cols + offset + c]
                        .copy_from_slice(&t.data()[r * c..(r + 1) * c]);
                }
                offset += c;
            }
            Ok((vec![rows, cols], out))
        }
        OpKind::VolumeRender => {
            want_arity(op, inputs, 5)?;
            let shape = inputs[0].shape.clone();
            for t in inputs.iter().skip(1) {
                if t.shape != shape {
                    return Err(shape_err(op, &shape, &t.shape));
                }
            }
            if shape.len() != 2 {
                return Err(AutodiffError::Rank { op: op.name(), shape: fmt_shape(&shape) });
            }
            let (rays, samples) = (shape[0], shape[1]);
            let sigma = inputs[0].data();
            let vi = inputs[1].data();
            let vp = inputs[2].data();
            let ts = inputs[3].data();
            let deltas = inputs[4].data();
            let mut out = vec![0.0; rays * 3];
            for r in 0..rays {
                let o = render_ray(
                    &sigma[r * samples..(r + 1) * samples],
                    &vi[r * samples..(r + 1) * samples],
                    &vp[r * samples..(r + 1) * samples],
                    &ts[r * samples..(r + 1) * samples],
                    &deltas[r * samples..(r + 1) * samples],
                );
                out[r * 3..r * 3 + 3].copy_from_slice(&o);
            }
            Ok((vec![rays, 3], out))
        }
    }
}

fn render_ray(sigma: &[f64], vi: &[f64], vp: &[f64], ts: &[f64], deltas: &[f64]) -> [f64; 3] {
    let mut trans = 1.0;
    let mut acc = [0.0f64; 3];
    for k in 0..sigma.len() {
        let att = (-sigma[k] * deltas[k]).exp();
        let w = trans * (1.0 - att);
        acc[0] += w * ts[k];
        acc[1] += w * vi[k];
        acc[2] += w * vp[k];
        trans *= att;
    }
    acc
}

/// Gradients for one recorded node. Entries align with the node's inputs;
/// `None` marks untracked inputs whose gradient is not needed.
fn backward_op(node: &Node, gout: &[f64]) -> Vec<Option<Vec<f64>>> {
    let ins = &node.inputs;
    let needs: Vec<bool> = ins.iter().map(|s| s.id.is_some()).collect();
    match node.op {
        OpKind::MatMul => {
            let (n, k) = (ins[0].shape[0], ins[0].shape[1]);
            let m = ins[1].shape[1];
            let ga = needs[0].then(|| {
                let bt = transpose(&ins[1].data, k, m);
                let mut g = vec![0.0; n * k];
                gemm(gout, &bt, n, m, k, &mut g);
                g
            });
            let gb = needs[1].then(|| {
                let mut g = vec![0.0; k * m];
                gemm_at_b(&ins[0].data, gout, n, k, m, &mut g);
                g
            });
            vec![ga, gb]
        }
        OpKind::Add | OpKind::Sub => {
            let sign = if node.op == OpKind::Sub { -1.0 } else { 1.0 };
            let ga = needs[0].then(|| gout.to_vec());
            let gb = needs[1].then(|| reduce_to_shape(gout, ins[1].data.len(), sign));
            vec![ga, gb]
        }
        OpKind::Mul => {
            let ga = needs[0].then(|| {
                let blen = ins[1].data.len();
                if blen == ins[0].data.len() {
                    kernels::map_binary(gout, &ins[1].data, |g, y| g * y)
                } else if blen == 1 {
                    let y = ins[1].data[0];
                    kernels::map_unary(gout, |g| g * y)
                } else {
                    let mut g = vec![0.0; gout.len()];
                    for (grow, orow) in g.chunks_mut(blen).zip(gout.chunks(blen)) {
                        for ((gv, ov), yv) in grow.iter_mut().zip(orow).zip(ins[1].data.iter()) {
                            *gv = ov * yv;
                        }
                    }
                    g
                }
            });
            let gb = needs[1].then(|| {
                let scaled = kernels::map_binary(gout, &ins[0].data, |g, x| g * x);
                reduce_to_shape(&scaled, ins[1].data.len(), 1.0)
            });
            vec![ga, gb]
        }
        OpKind::Relu => {
            let x = &ins[0].data;
            vec![needs[0].then(|| {
                gout.iter().zip(x.iter()).map(|(g, v)| if *v > 0.0 { *g } else { 0.0 }).collect()
            })]
        }
        OpKind::Sigmoid => {
            let y = &node.out_data;
            vec![needs[0]
                .then(|| gout.iter().zip(y.iter()).map(|(g, v)| g * v * (1.0 - v)).collect())]
        }
        OpKind::Softplus => {
            let x = &ins[0].data;
            vec![needs[0].then(|| {
                gout.iter().zip(x.iter()).map(|(g, v)| g * stable_sigmoid(*v)).collect()
            })]
        }
        OpKind::Sin => {
            let x = &ins[0].data;
            vec![needs[0].then(|| gout.iter().zip(x.iter()).map(|(g, v)| g * v.cos()).collect())]
        }
        OpKind::Cos => {
            let x = &ins[0].data;
            vec![needs[0].then(|| gout.iter().zip(x.iter()).map(|(g, v)| -g * v.sin()).collect())]
        }
        OpKind::Exp => {
            let x = &ins[0].data;
            let y = &node.out_data;
            vec![needs[0].then(|| {
                gout.iter()
                    .zip(y.iter())
                    .zip(x.iter())
                    .map(|((g, v), xin)| if *xin <= EXP_CLAMP { g * v } else { 0.0 })
                    .collect()
            })]
        }
        OpKind::Neg => vec![needs[0].then(|| gout.iter().map(|g| -g).collect())],
        OpKind::Square => {
            let x = &ins[0].data;
            vec![needs[0].then(|| gout.iter().zip(x.iter()).map(|(g, v)| 2.0 * g * v).collect())]
        }
        OpKind::Sum => {
            let n = ins[0].data.len();
            vec![needs[0].then(|| vec![gout[0]; n])]
        }
        OpKind::Mean => {
            let n = ins[0].data.len();
            vec![needs[0].then(|| vec![gout[0] / n as f64; n])]
        }
        OpKind::Concat => {
            let rows = ins[0].shape[0].max(1);
            let total_cols: usize = ins.iter().map(|s| s.data.len() / rows).sum();
            let mut offset = 0;
            let mut out = Vec::with_capacity(ins.len());
            for (snap, need) in ins.iter().zip(&needs) {
                let c = snap.data.len() / rows;
                out.push(need.then(|| {
                    let mut g = vec![0.0; snap.data.len()];
                    for r in 0..rows {
                        g[r * c..(r + 1) * c].copy_from_slice(
                            &gout[r * total_cols + offset..r * total_cols + offset + c],
                        );
                    }
                    g
                }));
                offset += c;
            }
            out
        }
        OpKind::VolumeRender => {
            let (rays, samples) = (ins[0].shape[0], ins[0].shape[1]);
            let sigma = &ins[0].data;
            let vi = &ins[1].data;
            let vp = &ins[2].data;
            let ts = &ins[3].data;
            let deltas = &ins[4].data;
            let mut gsigma = vec![0.0; rays * samples];
            let mut gi = vec![0.0; rays * samples];
            let mut gp = vec![0.0; rays * samples];
            for r in 0..rays {
                let lo = r * samples;
                let hi = lo + samples;
                let (gd, gvi, gvp) = (gout[r * 3], gout[r * 3 + 1], gout[r * 3 + 2]);
                backward_ray(
                    &sigma[lo..hi],
                    &vi[lo..hi],
                    &vp[lo..hi],
                    &ts[lo..hi],
                    &deltas[lo..hi],
                    gd,
                    gvi,
                    gvp,
                    &mut gsigma[lo..hi],
                    &mut gi[lo..hi],
                    &mut gp[lo..hi],
                );
            }
            vec![
                needs[0].then_some(gsigma),
                needs[1].then_some(gi),
                needs[2].then_some(gp),
                None,
                None,
            ]
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn backward_ray(
    sigma: &[f64],
    vi: &[f64],
    vp: &[f64],
    ts: &[f64],
    deltas: &[f64],
    gd: f64,
    gvi: f64,
    gvp: f64,
    gsigma: &mut [f64],
    gi: &mut [f64],
    gp: &mut [f64],
) {
    let s = sigma.len();
    // forward quantities: per-sample weight and transmittance before sample
    let mut w = vec![0.0f64; s];
    let mut tpre = vec![0.0f64; s];
    let mut trans = 1.0;
    for k in 0..s {
        tpre[k] = trans;
        let att = (-sigma[k] * deltas[k]).exp();
        w[k] = trans * (1.0 - att);
        trans *= att;
    }
    // value picked up by w_k in the scalar product with the output gradient
    let val = |k: usize| gd * ts[k] + gvi * vi[k] + gvp * vp[k];
    // suffix[k] = sum_{j>k} w_j * val_j
    let mut suffix = 0.0;
    for k in (0..s).rev() {
        let att = (-sigma[k] * deltas[k]).exp();
        gsigma[k] = deltas[k] * (tpre[k] * att * val(k) - suffix);
        gi[k] = gvi * w[k];
        gp[k] = gvp * w[k];
        suffix += w[k] * val(k);
    }
}

/// Accumulate a full-shape gradient down to a broadcast operand's shape.
fn reduce_to_shape(g: &[f64], target_len: usize, sign: f64) -> Vec<f64> {
    if target_len == g.len() {
        return if sign == 1.0 { g.to_vec() } else { g.iter().map(|v| v * sign).collect() };
    }
    if target_len == 1 {
        return vec![sign * kernels::sum_slice(g)];
    }
    let mut out = vec![0.0; target_len];
    for row in g.chunks(target_len) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += sign * v;
        }
    }
    out
}

/// Standalone volumetric rendering returning per-sample weights and
/// transmittances for diagnostics; same math as the tape op.
pub fn volume_render(
    ts: &[f64],
    deltas: &[f64],
    sigma: &[f64],
    vi: &[f64],
    vp: &[f64],
) -> VolumeRenderOut {
    let s = sigma.len();
    let mut weights = vec![0.0; s];
    let mut transmittance = vec![0.0; s + 1];
    let mut trans = 1.0;
    let mut acc = [0.0f64; 3];
    for k in 0..s {
        transmittance[k] = trans;
        let att = (-sigma[k] * deltas[k]).exp();
        let w = trans * (1.0 - att);
        weights[k] = w;
        acc[0] += w * ts[k];
        acc[1] += w * vi[k];
        acc[2] += w * vp[k];
        trans *= att;
    }
    transmittance[s] = trans;
    VolumeRenderOut {
        depth: acc[0],
        intensity: acc[1],
        raydrop: acc[2],
        weights,
        transmittance,
    }
}

/// Output of `volume_render`: expectations plus the weight/transmittance
/// profiles along the ray (`transmittance` has one trailing entry for the
/// residual T after the last sample).
pub struct VolumeRenderOut {
    pub depth: f64,
    pub intensity: f64,
    pub raydrop: f64,
    pub weights: Vec<f64>,
    pub transmittance: Vec<f64>,
}
