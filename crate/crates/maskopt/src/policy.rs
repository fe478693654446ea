//! The decision network: a strided convolutional embedder per segment
//! window, two rounds of mean-neighbor graph aggregation, three stacked
//! recurrent layers over the canonical segment order, and a 5-way movement
//! head. Forward evaluation and exact analytic gradients of action
//! log-probabilities are both hand-rolled so the training update
//! `theta += alpha * coefficient * grad log pi` is reproducible to the bit.
//!
//! The embedder uses non-overlapping patches (kernel equals stride), so each
//! convolution is a gather into a patch matrix followed by one small matrix
//! product: 6->8 channels down to a 16x16 grid (or the input side when it is
//! already below 16), then 8->16 channels down to 4x4, flattening to exactly
//! 256 values per node.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, Array3, ArrayViewD, ArrayViewMutD, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::graph::SegmentGraph;

pub const EMBED_DIM: usize = 256;
pub const HIDDEN_DIM: usize = 64;
pub const ACTION_COUNT: usize = 5;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite values in {layer}")]
    Numeric { layer: &'static str },
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Per-row action distributions: row i is pi(a | segment i) over the
/// movements (-2, -1, 0, +1, +2) nm.
pub type ActionDistribution = Array2<f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct SageLayer {
    pub w_self: Array2<f64>,
    pub w_neigh: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RnnLayer {
    pub u: Array2<f64>,
    pub w: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct EmbedderShape {
    dim: usize,
    patch1: usize,
    mid: usize,
    patch2: usize,
}

impl EmbedderShape {
    fn for_dim(dim: usize) -> Result<Self, PolicyError> {
        let patch1 = (dim / 16).max(1);
        if dim == 0 || dim % patch1 != 0 {
            return Err(PolicyError::Shape(format!("bad feature dim {dim}")));
        }
        let mid = dim / patch1;
        if mid % 4 != 0 {
            return Err(PolicyError::Shape(format!(
                "feature dim {dim} leaves a {mid}-wide grid not divisible by 4"
            )));
        }
        Ok(EmbedderShape {
            dim,
            patch1,
            mid,
            patch2: mid / 4,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub feature_dim: usize,
    pub conv1_w: Array2<f64>,
    pub conv1_b: Array1<f64>,
    pub conv2_w: Array2<f64>,
    pub conv2_b: Array1<f64>,
    pub sage: Vec<SageLayer>,
    pub rnn: Vec<RnnLayer>,
    pub head_w: Array2<f64>,
    pub head_b: Array1<f64>,
}

const CONV1_CH: usize = 8;
const CONV2_CH: usize = 16;

impl PolicyParams {
    /// Named views of every parameter array, in a fixed order shared with
    /// gradients, updates, and checkpoints.
    pub fn arrays(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut out: Vec<(String, ArrayViewD<'_, f64>)> = vec![
            ("conv1_w".into(), self.conv1_w.view().into_dyn()),
            ("conv1_b".into(), self.conv1_b.view().into_dyn()),
            ("conv2_w".into(), self.conv2_w.view().into_dyn()),
            ("conv2_b".into(), self.conv2_b.view().into_dyn()),
        ];
        for (i, layer) in self.sage.iter().enumerate() {
            out.push((format!("sage{i}_self"), layer.w_self.view().into_dyn()));
            out.push((format!("sage{i}_neigh"), layer.w_neigh.view().into_dyn()));
            out.push((format!("sage{i}_b"), layer.bias.view().into_dyn()));
        }
        for (i, layer) in self.rnn.iter().enumerate() {
            out.push((format!("rnn{i}_u"), layer.u.view().into_dyn()));
            out.push((format!("rnn{i}_w"), layer.w.view().into_dyn()));
            out.push((format!("rnn{i}_b"), layer.bias.view().into_dyn()));
        }
        out.push(("head_w".into(), self.head_w.view().into_dyn()));
        out.push(("head_b".into(), self.head_b.view().into_dyn()));
        out
    }

    pub fn arrays_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        let mut out: Vec<(String, ArrayViewMutD<'_, f64>)> = vec![
            ("conv1_w".into(), self.conv1_w.view_mut().into_dyn()),
            ("conv1_b".into(), self.conv1_b.view_mut().into_dyn()),
            ("conv2_w".into(), self.conv2_w.view_mut().into_dyn()),
            ("conv2_b".into(), self.conv2_b.view_mut().into_dyn()),
        ];
        for (i, layer) in self.sage.iter_mut().enumerate() {
            out.push((format!("sage{i}_self"), layer.w_self.view_mut().into_dyn()));
            out.push((format!("sage{i}_neigh"), layer.w_neigh.view_mut().into_dyn()));
            out.push((format!("sage{i}_b"), layer.bias.view_mut().into_dyn()));
        }
        for (i, layer) in self.rnn.iter_mut().enumerate() {
            out.push((format!("rnn{i}_u"), layer.u.view_mut().into_dyn()));
            out.push((format!("rnn{i}_w"), layer.w.view_mut().into_dyn()));
            out.push((format!("rnn{i}_b"), layer.bias.view_mut().into_dyn()));
        }
        out.push(("head_w".into(), self.head_w.view_mut().into_dyn()));
        out.push(("head_b".into(), self.head_b.view_mut().into_dyn()));
        out
    }

    /// Zero-filled gradient container with matching shapes.
    pub fn zeros_like(&self) -> PolicyParams {
        let mut z = self.clone();
        for (_, mut a) in z.arrays_mut() {
            a.fill(0.0);
        }
        z
    }

    /// In-place `self += scale * other`, used for gradient-ascent updates.
    pub fn add_scaled(&mut self, other: &PolicyParams, scale: f64) {
        for ((_, mut a), (_, b)) in self.arrays_mut().into_iter().zip(other.arrays()) {
            a.zip_mut_with(&b, |x, y| *x += scale * y);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.arrays()
            .iter()
            .all(|(_, a)| a.iter().all(|v| v.is_finite()))
    }
}

/// Uniform fan-in-scaled initialization (weights in +-1/sqrt(fan_in), biases
/// zero), deterministic per seed. `feature_dim` is the square canvas side the
/// embedder will accept.
pub fn init_params(seed: u64, feature_dim: usize) -> Result<PolicyParams, PolicyError> {
    let shape = EmbedderShape::for_dim(feature_dim)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut matrix = |rows: usize, cols: usize, fan_in: usize| -> Array2<f64> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..bound))
    };

    let in1 = shape.patch1 * shape.patch1 * 6;
    let conv1_w = matrix(in1, CONV1_CH, in1);
    let in2 = shape.patch2 * shape.patch2 * CONV1_CH;
    let conv2_w = matrix(in2, CONV2_CH, in2);
    let sage = (0..2)
        .map(|_| SageLayer {
            w_self: matrix(EMBED_DIM, EMBED_DIM, EMBED_DIM),
            w_neigh: matrix(EMBED_DIM, EMBED_DIM, EMBED_DIM),
            bias: Array1::zeros(EMBED_DIM),
        })
        .collect();
    let rnn = (0..3)
        .map(|i| {
            let input = if i == 0 { EMBED_DIM } else { HIDDEN_DIM };
            RnnLayer {
                u: matrix(input, HIDDEN_DIM, input),
                w: matrix(HIDDEN_DIM, HIDDEN_DIM, HIDDEN_DIM),
                bias: Array1::zeros(HIDDEN_DIM),
            }
        })
        .collect();
    let head_w = matrix(HIDDEN_DIM, ACTION_COUNT, HIDDEN_DIM);

    Ok(PolicyParams {
        feature_dim,
        conv1_w,
        conv1_b: Array1::zeros(CONV1_CH),
        conv2_w,
        conv2_b: Array1::zeros(CONV2_CH),
        sage,
        rnn,
        head_w,
        head_b: Array1::zeros(ACTION_COUNT),
    })
}

/// Gathers non-overlapping `patch x patch` blocks of a `(grid*grid, ch)`
/// grid into rows of `((grid/patch)^2, patch*patch*ch)`.
fn im2col(src: &Array2<f64>, grid: usize, patch: usize) -> Array2<f64> {
    let ch = src.dim().1;
    let out_grid = grid / patch;
    let mut out = Array2::zeros((out_grid * out_grid, patch * patch * ch));
    for pr in 0..out_grid {
        for pc in 0..out_grid {
            let row = pr * out_grid + pc;
            for dr in 0..patch {
                for dc in 0..patch {
                    let src_row = (pr * patch + dr) * grid + (pc * patch + dc);
                    let base = (dr * patch + dc) * ch;
                    for c in 0..ch {
                        out[(row, base + c)] = src[(src_row, c)];
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`im2col`]: accumulates patch-row gradients back onto the grid.
fn col2im_add(dst: &mut Array2<f64>, dcol: &Array2<f64>, grid: usize, patch: usize) {
    let ch = dst.dim().1;
    let out_grid = grid / patch;
    for pr in 0..out_grid {
        for pc in 0..out_grid {
            let row = pr * out_grid + pc;
            for dr in 0..patch {
                for dc in 0..patch {
                    let dst_row = (pr * patch + dr) * grid + (pc * patch + dc);
                    let base = (dr * patch + dc) * ch;
                    for c in 0..ch {
                        dst[(dst_row, c)] += dcol[(row, base + c)];
                    }
                }
            }
        }
    }
}

struct NodeTrace {
    x1: Array2<f64>,
    z1: Array2<f64>,
    x2: Array2<f64>,
    z2: Array2<f64>,
}

struct ForwardTrace {
    shape: EmbedderShape,
    nodes: Vec<NodeTrace>,
    /// Node embeddings entering each sage layer (index 0) and after each
    /// sage layer (indices 1..).
    sage_h: Vec<Array2<f64>>,
    sage_mean: Vec<Array2<f64>>,
    /// Hidden state sequences per recurrent layer, each (n, 64).
    hidden: Vec<Array2<f64>>,
    probs: Array2<f64>,
}

fn check_finite(name: &'static str, values: impl IntoIterator<Item = f64>) -> Result<(), PolicyError> {
    if values.into_iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(PolicyError::Numeric { layer: name })
    }
}

fn neighbor_mean(h: &Array2<f64>, graph: &SegmentGraph) -> Array2<f64> {
    let (n, d) = h.dim();
    let mut mean = Array2::zeros((n, d));
    for u in 0..n {
        let nbrs = graph.neighbors(u);
        if nbrs.is_empty() {
            continue;
        }
        let inv = 1.0 / nbrs.len() as f64;
        for &v in nbrs {
            for k in 0..d {
                mean[(u, k)] += h[(v, k)] * inv;
            }
        }
    }
    mean
}

fn run_forward(
    features: &[Array3<f64>],
    graph: &SegmentGraph,
    params: &PolicyParams,
) -> Result<ForwardTrace, PolicyError> {
    let n = features.len();
    if n == 0 {
        return Err(PolicyError::Shape("no nodes to evaluate".into()));
    }
    if graph.node_count() != n {
        return Err(PolicyError::Shape(format!(
            "graph has {} nodes, features have {n}",
            graph.node_count()
        )));
    }
    let shape = EmbedderShape::for_dim(params.feature_dim)?;
    let expect = (shape.dim, shape.dim, 6);
    let mut nodes = Vec::with_capacity(n);
    let mut embeddings = Array2::zeros((n, EMBED_DIM));
    for (i, f) in features.iter().enumerate() {
        if f.dim() != expect {
            return Err(PolicyError::Shape(format!(
                "node {i} features are {:?}, expected {expect:?}",
                f.dim()
            )));
        }
        // (dy, dx, 6) -> (dy*dx, 6) row-major grid.
        let flat = f
            .to_shape((shape.dim * shape.dim, 6))
            .map_err(|e| PolicyError::Shape(e.to_string()))?
            .to_owned();
        let x1 = im2col(&flat, shape.dim, shape.patch1);
        let z1 = (x1.dot(&params.conv1_w) + &params.conv1_b).mapv(f64::tanh);
        let x2 = im2col(&z1, shape.mid, shape.patch2);
        let z2 = (x2.dot(&params.conv2_w) + &params.conv2_b).mapv(f64::tanh);
        let embed = z2
            .to_shape(EMBED_DIM)
            .map_err(|e| PolicyError::Shape(e.to_string()))?
            .to_owned();
        embeddings.row_mut(i).assign(&embed);
        nodes.push(NodeTrace { x1, z1, x2, z2 });
    }
    check_finite("embedder", embeddings.iter().copied())?;

    let mut sage_h = vec![embeddings];
    let mut sage_mean = Vec::new();
    for layer in &params.sage {
        let h = sage_h.last().unwrap();
        let mean = neighbor_mean(h, graph);
        let next = (h.dot(&layer.w_self) + mean.dot(&layer.w_neigh) + &layer.bias).mapv(f64::tanh);
        sage_mean.push(mean);
        sage_h.push(next);
    }
    check_finite("graph aggregation", sage_h.last().unwrap().iter().copied())?;

    let mut hidden = Vec::with_capacity(params.rnn.len());
    for (l, layer) in params.rnn.iter().enumerate() {
        let input: &Array2<f64> = if l == 0 {
            sage_h.last().unwrap()
        } else {
            &hidden[l - 1]
        };
        let mut hs = Array2::zeros((n, HIDDEN_DIM));
        let mut prev = Array1::zeros(HIDDEN_DIM);
        for t in 0..n {
            let a = input.row(t).dot(&layer.u) + prev.dot(&layer.w) + &layer.bias;
            let h = a.mapv(f64::tanh);
            hs.row_mut(t).assign(&h);
            prev = h;
        }
        hidden.push(hs);
    }
    check_finite("recurrence", hidden.last().unwrap().iter().copied())?;

    let logits = hidden.last().unwrap().dot(&params.head_w) + &params.head_b;
    check_finite("head", logits.iter().copied())?;
    let mut probs = Array2::zeros((n, ACTION_COUNT));
    for t in 0..n {
        let row = logits.row(t);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        for a in 0..ACTION_COUNT {
            probs[(t, a)] = exps[a] / sum;
        }
    }
    Ok(ForwardTrace {
        shape,
        nodes,
        sage_h,
        sage_mean,
        hidden,
        probs,
    })
}

/// Evaluates the policy: action distributions for every segment, rows in
/// canonical segment order.
pub fn forward(
    features: &[Array3<f64>],
    graph: &SegmentGraph,
    params: &PolicyParams,
) -> Result<ActionDistribution, PolicyError> {
    Ok(run_forward(features, graph, params)?.probs)
}

/// Exact gradient of `coefficient * sum_i log pi(actions[i] | segment i)`
/// with respect to every parameter, via backpropagation through the head,
/// the recurrence (through time), the aggregation layers, and the embedder.
pub fn logprob_grad(
    features: &[Array3<f64>],
    graph: &SegmentGraph,
    params: &PolicyParams,
    actions: &[usize],
    coefficient: f64,
) -> Result<PolicyParams, PolicyError> {
    let n = features.len();
    if actions.len() != n {
        return Err(PolicyError::Shape(format!(
            "{} actions for {n} nodes",
            actions.len()
        )));
    }
    if let Some(&bad) = actions.iter().find(|&&a| a >= ACTION_COUNT) {
        return Err(PolicyError::Shape(format!("action index {bad} out of range")));
    }
    let trace = run_forward(features, graph, params)?;
    let mut grad = params.zeros_like();

    // d L / d logits = coefficient * (onehot - probs), per row.
    let mut dlogits = trace.probs.clone();
    dlogits.mapv_inplace(|p| -p);
    for (t, &a) in actions.iter().enumerate() {
        dlogits[(t, a)] += 1.0;
    }
    dlogits.mapv_inplace(|v| v * coefficient);

    let h_last = trace.hidden.last().unwrap();
    grad.head_w = h_last.t().dot(&dlogits);
    grad.head_b = dlogits.sum_axis(Axis(0));
    let mut dhidden = dlogits.dot(&params.head_w.t());

    // Backwards through the stacked recurrence, top layer first.
    let mut dsage_out = Array2::zeros((n, EMBED_DIM));
    for l in (0..params.rnn.len()).rev() {
        let layer = &params.rnn[l];
        let hs = &trace.hidden[l];
        let mut dinput = Array2::zeros((
            n,
            if l == 0 { EMBED_DIM } else { HIDDEN_DIM },
        ));
        let mut carry: Array1<f64> = Array1::zeros(HIDDEN_DIM);
        for t in (0..n).rev() {
            let dh = &dhidden.row(t) + &carry;
            let h = hs.row(t);
            let da: Array1<f64> =
                dh.iter().zip(h.iter()).map(|(g, v)| g * (1.0 - v * v)).collect();
            let x = if l == 0 {
                trace.sage_h.last().unwrap().row(t)
            } else {
                trace.hidden[l - 1].row(t)
            };
            let gl = &mut grad.rnn[l];
            for (r, &xv) in x.iter().enumerate() {
                for (c, &dv) in da.iter().enumerate() {
                    gl.u[(r, c)] += xv * dv;
                }
            }
            if t > 0 {
                let hp = hs.row(t - 1);
                for (r, &hv) in hp.iter().enumerate() {
                    for (c, &dv) in da.iter().enumerate() {
                        gl.w[(r, c)] += hv * dv;
                    }
                }
            }
            gl.bias += &da;
            carry = layer.w.dot(&da);
            dinput.row_mut(t).assign(&layer.u.dot(&da));
        }
        if l == 0 {
            dsage_out = dinput;
        } else {
            dhidden += &dinput;
            continue;
        }
    }

    // Backwards through the aggregation layers.
    let mut dh = dsage_out;
    for l in (0..params.sage.len()).rev() {
        let layer = &params.sage[l];
        let h_in = &trace.sage_h[l];
        let h_out = &trace.sage_h[l + 1];
        let mean = &trace.sage_mean[l];
        let da = ndarray::Zip::from(&dh)
            .and(h_out)
            .map_collect(|g, v| g * (1.0 - v * v));
        grad.sage[l].w_self += &h_in.t().dot(&da);
        grad.sage[l].w_neigh += &mean.t().dot(&da);
        grad.sage[l].bias += &da.sum_axis(Axis(0));
        let dmean = da.dot(&layer.w_neigh.t());
        let mut dh_next = da.dot(&layer.w_self.t());
        // mean_u = avg over neighbors v of h_v => dh_v += dmean_u / deg(u).
        for u in 0..n {
            let nbrs = graph.neighbors(u);
            if nbrs.is_empty() {
                continue;
            }
            let inv = 1.0 / nbrs.len() as f64;
            for &v in nbrs {
                for k in 0..EMBED_DIM {
                    dh_next[(v, k)] += dmean[(u, k)] * inv;
                }
            }
        }
        dh = dh_next;
    }

    // Backwards through the embedder, per node.
    let shape = trace.shape;
    for (i, node) in trace.nodes.iter().enumerate() {
        let de = dh.row(i);
        let dz2 = de
            .to_shape((shape.patch2 * shape.patch2 * 0 + 16, CONV2_CH))
            .map_err(|e| PolicyError::Shape(e.to_string()))?
            .to_owned();
        let da2 = ndarray::Zip::from(&dz2)
            .and(&node.z2)
            .map_collect(|g, v| g * (1.0 - v * v));
        grad.conv2_w += &node.x2.t().dot(&da2);
        grad.conv2_b += &da2.sum_axis(Axis(0));
        let dx2 = da2.dot(&params.conv2_w.t());
        let mut dz1 = Array2::zeros(node.z1.dim());
        col2im_add(&mut dz1, &dx2, shape.mid, shape.patch2);
        let da1 = ndarray::Zip::from(&dz1)
            .and(&node.z1)
            .map_collect(|g, v| g * (1.0 - v * v));
        grad.conv1_w += &node.x1.t().dot(&da1);
        grad.conv1_b += &da1.sum_axis(Axis(0));
    }

    Ok(grad)
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"MOPTCKPT";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub phase: u8,
    pub epoch: u32,
    pub params: PolicyParams,
}

/// Serializes a checkpoint: magic, version, phase, epoch, feature dim, then
/// every named parameter array with its shape, f64 little-endian. Exact
/// round trip.
pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.push(ckpt.phase);
    out.extend_from_slice(&ckpt.epoch.to_le_bytes());
    out.extend_from_slice(&(ckpt.params.feature_dim as u32).to_le_bytes());
    let arrays = ckpt.params.arrays();
    out.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
    for (name, view) in arrays {
        out.push(name.len() as u8);
        out.extend_from_slice(name.as_bytes());
        out.push(view.ndim() as u8);
        for d in view.shape() {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in view.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Parses a checkpoint produced by [`encode_checkpoint`]. Validates the
/// header, array names, and shapes against a fresh parameter skeleton for
/// the stored feature dimension.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, PolicyError> {
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8], PolicyError> {
        let start = *pos;
        let end = start
            .checked_add(n)
            .ok_or_else(|| PolicyError::Checkpoint("length overflow".into()))?;
        if end > bytes.len() {
            return Err(PolicyError::Checkpoint("truncated file".into()));
        }
        *pos = end;
        Ok(&bytes[start..end])
    };
    let take_u32 = |pos: &mut usize| -> Result<u32, PolicyError> {
        Ok(u32::from_le_bytes(take(pos, 4)?.try_into().unwrap()))
    };

    if take(&mut pos, 8)? != CHECKPOINT_MAGIC {
        return Err(PolicyError::Checkpoint("bad magic".into()));
    }
    let version = take_u32(&mut pos)?;
    if version != CHECKPOINT_VERSION {
        return Err(PolicyError::Checkpoint(format!(
            "unsupported version {version}"
        )));
    }
    let phase = take(&mut pos, 1)?[0];
    let epoch = take_u32(&mut pos)?;
    let feature_dim = take_u32(&mut pos)? as usize;
    let mut params = init_params(0, feature_dim)?;
    let count = take_u32(&mut pos)? as usize;
    let expected = params.arrays().len();
    if count != expected {
        return Err(PolicyError::Checkpoint(format!(
            "expected {expected} arrays, file has {count}"
        )));
    }
    for (expect_name, mut view) in params.arrays_mut() {
        let name_len = take(&mut pos, 1)?[0] as usize;
        let name = std::str::from_utf8(take(&mut pos, name_len)?)
            .map_err(|_| PolicyError::Checkpoint("non-utf8 array name".into()))?
            .to_string();
        if name != expect_name {
            return Err(PolicyError::Checkpoint(format!(
                "array {name:?} out of order, expected {expect_name:?}"
            )));
        }
        let ndim = take(&mut pos, 1)?[0] as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(take_u32(&mut pos)? as usize);
        }
        if dims != view.shape() {
            return Err(PolicyError::Checkpoint(format!(
                "array {name:?} has shape {dims:?}, expected {:?}",
                view.shape()
            )));
        }
        let len: usize = dims.iter().product();
        let data = take(&mut pos, len.checked_mul(8).ok_or_else(|| {
            PolicyError::Checkpoint("length overflow".into())
        })?)?;
        for (slot, chunk) in view.iter_mut().zip(data.chunks_exact(8)) {
            *slot = f64::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    if pos != bytes.len() {
        return Err(PolicyError::Checkpoint("trailing bytes".into()));
    }
    Ok(Checkpoint {
        phase,
        epoch,
        params,
    })
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), PolicyError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode_checkpoint(ckpt))?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, PolicyError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_checkpoint(&bytes)
}
