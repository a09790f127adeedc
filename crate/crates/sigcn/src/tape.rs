//! Reverse-mode gradient tape over [`Tensor`] values.
//!
//! A [`Tape`] is an append-only arena of nodes. Building an op records
//! its inputs and stores the forward value immediately; [`Tape::backward`]
//! walks the arena once in reverse and accumulates gradients. Replay
//! ([`Tape::replay_matches`]) recomputes every forward value through the
//! same kernels and compares bit-for-bit, which pins down any hidden
//! nondeterminism.
//!
//! Tapes are single-use: build once, run backward once. There is no
//! higher-order differentiation.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::tensor::{resize_coord, Tensor};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node on a specific tape. Using it with any other tape
/// is a lineage error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId {
    tape: u64,
    index: usize,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Constant,
    Add(usize, usize),
    Mul(usize, usize),
    Affine { x: usize, scale: f64, shift: f64 },
    MatMul(usize, usize),
    Relu(usize),
    Sigmoid(usize),
    Ln(usize),
    Clamp { x: usize, lo: f64, hi: f64 },
    Transpose(usize),
    Reshape { x: usize, dims: Vec<usize> },
    ConcatChannels(Vec<usize>),
    MeanPool(usize),
    MeanAll(usize),
    SumAll(usize),
    BilinearResize { x: usize, h: usize, w: usize },
    Conv2d { x: usize, w: usize, pad: usize, dil: usize },
    BiasAdd { x: usize, b: usize },
    NodeConv1d { x: usize, k: usize },
}

struct Node {
    op: Op,
    value: Tensor,
}

pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Differentiable input (a parameter).
    pub fn leaf(&mut self, value: Tensor) -> TensorId {
        self.push(Op::Leaf, value)
    }

    /// Non-differentiable input; backward treats it as fixed data.
    pub fn constant(&mut self, value: Tensor) -> TensorId {
        self.push(Op::Constant, value)
    }

    pub fn value(&self, id: TensorId) -> Result<&Tensor> {
        let i = self.check(id)?;
        Ok(&self.nodes[i].value)
    }

    fn push(&mut self, op: Op, value: Tensor) -> TensorId {
        self.nodes.push(Node { op, value });
        TensorId {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn check(&self, id: TensorId) -> Result<usize> {
        if id.tape != self.id {
            return Err(Error::Lineage(format!(
                "tensor belongs to tape {}, this is tape {}",
                id.tape, self.id
            )));
        }
        debug_assert!(id.index < self.nodes.len());
        Ok(id.index)
    }

    fn val(&self, index: usize) -> &Tensor {
        &self.nodes[index].value
    }

    fn record(&mut self, op: Op) -> Result<TensorId> {
        let value = eval(&op, &|i| self.val(i))?;
        Ok(self.push(op, value))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (a, b) = (self.check(a)?, self.check(b)?);
        self.record(Op::Add(a, b))
    }

    /// a − b, as add of the negation.
    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let nb = self.affine(b, -1.0, 0.0)?;
        self.add(a, nb)
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (a, b) = (self.check(a)?, self.check(b)?);
        self.record(Op::Mul(a, b))
    }

    pub fn affine(&mut self, x: TensorId, scale: f64, shift: f64) -> Result<TensorId> {
        let x = self.check(x)?;
        self.record(Op::Affine { x, scale, shift })
    }

    pub fn scale(&mut self, x: TensorId, c: f64) -> Result<TensorId> {
        self.affine(x, c, 0.0)
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (a, b) = (self.check(a)?, self.check(b)?);
        self.record(Op::MatMul(a, b))
    }

    pub fn relu(&mut self, x: TensorId) -> Result<TensorId> {
        let x = self.check(x)?;
        self.record(Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: TensorId) -> Result<TensorId> {
        let x = self.check(x)?;
        self.record(Op::Sigmoid(x))
    }

    pub fn ln(&mut self, x: TensorId) -> Result<TensorId> {
        let x = self.check(x)?;
        self.record(Op::Ln(x))
    }

    pub fn clamp(&mut self, x: TensorId, lo: f64, hi: f64) -> Result<TensorId> {
        let x = self.check(x)?;
        self.record(Op::Clamp { x, lo, hi })
    }

    pub fn transpose(&mut self, x: TensorId) -> Result<TensorId> {
        let x = self.check(x)?;
        self.record(Op::Transpose(x))
    }

    pub fn reshape(&mut self, x: TensorId, dims: Vec<usize>) -> Result<TensorId> {
        let x = self.check(x)?;
        self.record(Op::Reshape { x, dims })
    }

    pub fn concat_channels(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        let idx: Result<Vec<usize>> = parts.iter().map(|&p| self.check(p)).collect();
        self.record(Op::ConcatChannels(idx?))
    }

    /// Per-channel spatial mean, `[C,H,W]` -> `[C]`.
    pub fn mean_pool(&mut self, x: TensorId) -> Result<TensorId> {
        let x = self.check(x)?;
        self.record(Op::MeanPool(x))
    }

    pub fn mean_all(&mut self, x: TensorId) -> Result<TensorId> {
        let x = self.check(x)?;
        self.record(Op::MeanAll(x))
    }

    pub fn sum_all(&mut self, x: TensorId) -> Result<TensorId> {
        let x = self.check(x)?;
        self.record(Op::SumAll(x))
    }

    pub fn bilinear_resize(&mut self, x: TensorId, h: usize, w: usize) -> Result<TensorId> {
        let x = self.check(x)?;
        self.record(Op::BilinearResize { x, h, w })
    }

    pub fn conv2d(&mut self, x: TensorId, w: TensorId, pad: usize, dil: usize) -> Result<TensorId> {
        let (x, w) = (self.check(x)?, self.check(w)?);
        self.record(Op::Conv2d { x, w, pad, dil })
    }

    pub fn bias_add(&mut self, x: TensorId, b: TensorId) -> Result<TensorId> {
        let (x, b) = (self.check(x)?, self.check(b)?);
        self.record(Op::BiasAdd { x, b })
    }

    /// Depthwise 1-D convolution along the node axis; see
    /// [`Tensor::node_conv1d`].
    pub fn node_conv1d(&mut self, x: TensorId, kernel: TensorId) -> Result<TensorId> {
        let (x, k) = (self.check(x)?, self.check(kernel)?);
        self.record(Op::NodeConv1d { x, k })
    }

    /// Which side of its kink every piecewise-linear unit sits on: one
    /// flag per ReLU input element (positive side) and per clamp input
    /// element (strictly inside the band), in node order. Two
    /// evaluations of the same graph are locally on the same linear
    /// piece iff their patterns match — the condition for a central
    /// finite difference to see the true derivative.
    pub(crate) fn kink_pattern(&self) -> Vec<bool> {
        let mut pattern = Vec::new();
        for node in &self.nodes {
            match node.op {
                Op::Relu(x) => {
                    pattern.extend(self.nodes[x].value.data().iter().map(|&v| v > 0.0));
                }
                Op::Clamp { x, lo, hi } => {
                    pattern.extend(
                        self.nodes[x]
                            .value
                            .data()
                            .iter()
                            .map(|&v| v > lo && v < hi),
                    );
                }
                _ => {}
            }
        }
        pattern
    }

    /// Recompute every node from the recorded ops and compare against
    /// the stored values bit-for-bit.
    pub fn replay_matches(&self) -> bool {
        let mut redone: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match node.op {
                Op::Leaf | Op::Constant => node.value.clone(),
                ref op => match eval(op, &|i| &redone[i]) {
                    Ok(v) => v,
                    Err(_) => return false,
                },
            };
            redone.push(v);
        }
        self.nodes.iter().zip(&redone).all(|(n, r)| {
            n.value.dims() == r.dims()
                && n.value
                    .data()
                    .iter()
                    .zip(r.data())
                    .all(|(a, b)| a.to_bits() == b.to_bits())
        })
    }

    /// Accumulate d(loss)/d(node) for every node reachable from `loss`.
    /// The loss must be a single-element tensor.
    pub fn backward(&self, loss: TensorId) -> Result<Gradients> {
        let root = self.check(loss)?;
        if self.nodes[root].value.len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got dims {:?}",
                self.nodes[root].value.dims()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root] = Some(Tensor::filled(
            self.nodes[root].value.dims().to_vec(),
            1.0,
        ));
        for i in (0..=root).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.push_back(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients {
            tape: self.id,
            dims: self.nodes.iter().map(|n| n.value.dims().to_vec()).collect(),
            grads,
        })
    }

    /// Propagate the gradient `g` of node `i` into its inputs.
    fn push_back(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        match &self.nodes[i].op {
            Op::Leaf | Op::Constant => {}
            Op::Add(a, b) => {
                acc(grads, *a, g.clone())?;
                acc(grads, *b, g.clone())?;
            }
            Op::Mul(a, b) => {
                acc(grads, *a, g.mul(self.val(*b))?)?;
                acc(grads, *b, g.mul(self.val(*a))?)?;
            }
            Op::Affine { x, scale, .. } => acc(grads, *x, g.scale(*scale))?,
            Op::MatMul(a, b) => {
                acc(grads, *a, g.matmul(&self.val(*b).transpose()?)?)?;
                acc(grads, *b, self.val(*a).transpose()?.matmul(g)?)?;
            }
            Op::Relu(x) => {
                let mask = Tensor::from_fn(self.val(*x).dims().to_vec(), |j| {
                    if self.val(*x).data()[j] > 0.0 {
                        1.0
                    } else {
                        0.0
                    }
                });
                acc(grads, *x, g.mul(&mask)?)?;
            }
            Op::Sigmoid(x) => {
                let y = &self.nodes[i].value;
                let dy = Tensor::from_fn(y.dims().to_vec(), |j| {
                    let v = y.data()[j];
                    v * (1.0 - v)
                });
                acc(grads, *x, g.mul(&dy)?)?;
            }
            Op::Ln(x) => {
                let inv = Tensor::from_fn(self.val(*x).dims().to_vec(), |j| {
                    1.0 / self.val(*x).data()[j]
                });
                acc(grads, *x, g.mul(&inv)?)?;
            }
            Op::Clamp { x, lo, hi } => {
                let open = Tensor::from_fn(self.val(*x).dims().to_vec(), |j| {
                    let v = self.val(*x).data()[j];
                    if v > *lo && v < *hi {
                        1.0
                    } else {
                        0.0
                    }
                });
                acc(grads, *x, g.mul(&open)?)?;
            }
            Op::Transpose(x) => acc(grads, *x, g.transpose()?)?,
            Op::Reshape { x, .. } => {
                acc(grads, *x, g.reshape(self.val(*x).dims().to_vec())?)?
            }
            Op::ConcatChannels(parts) => {
                let dims = self.nodes[i].value.dims();
                let (h, w) = (dims[1], dims[2]);
                let mut off = 0;
                for &p in parts {
                    let c = self.val(p).dims()[0];
                    let slice = g.data()[off * h * w..(off + c) * h * w].to_vec();
                    acc(grads, p, Tensor::new(vec![c, h, w], slice)?)?;
                    off += c;
                }
            }
            Op::MeanPool(x) => {
                let d = self.val(*x).dims();
                let (c, h, w) = (d[0], d[1], d[2]);
                let inv_area = 1.0 / (h * w) as f64;
                let dx = Tensor::from_fn(vec![c, h, w], |j| {
                    g.data()[j / (h * w)] * inv_area
                });
                acc(grads, *x, dx)?;
            }
            Op::MeanAll(x) => {
                let src = self.val(*x);
                let v = g.data()[0] / src.len() as f64;
                acc(grads, *x, Tensor::filled(src.dims().to_vec(), v))?;
            }
            Op::SumAll(x) => {
                let src = self.val(*x);
                acc(grads, *x, Tensor::filled(src.dims().to_vec(), g.data()[0]))?;
            }
            Op::BilinearResize { x, h: oh, w: ow } => {
                let d = self.val(*x).dims();
                let (c, h, w) = (d[0], d[1], d[2]);
                let mut dx = vec![0.0; c * h * w];
                for ci in 0..c {
                    for oy in 0..*oh {
                        let (y0, y1, wy) = resize_coord(oy, *oh, h);
                        for ox in 0..*ow {
                            let (x0, x1, wx) = resize_coord(ox, *ow, w);
                            let go = g.data()[(ci * oh + oy) * ow + ox];
                            dx[(ci * h + y0) * w + x0] += (1.0 - wy) * (1.0 - wx) * go;
                            dx[(ci * h + y0) * w + x1] += (1.0 - wy) * wx * go;
                            dx[(ci * h + y1) * w + x0] += wy * (1.0 - wx) * go;
                            dx[(ci * h + y1) * w + x1] += wy * wx * go;
                        }
                    }
                }
                acc(grads, *x, Tensor::new(vec![c, h, w], dx)?)?;
            }
            Op::Conv2d { x, w, pad, dil } => {
                let xd = self.val(*x).dims();
                let (c_in, h, iw) = (xd[0], xd[1], xd[2]);
                let wd = self.val(*w).dims();
                let (c_out, kh, kw) = (wd[0], wd[2], wd[3]);
                let od = self.nodes[i].value.dims();
                let (out_h, out_w) = (od[1], od[2]);
                let xv = self.val(*x).data();
                let wv = self.val(*w).data();
                let mut dx = vec![0.0; c_in * h * iw];
                let mut dw = vec![0.0; wv.len()];
                for o in 0..c_out {
                    for y in 0..out_h {
                        for xo in 0..out_w {
                            let go = g.data()[(o * out_h + y) * out_w + xo];
                            if go == 0.0 {
                                continue;
                            }
                            for ci in 0..c_in {
                                for ky in 0..kh {
                                    let iy = (y + ky * dil) as isize - *pad as isize;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    for kx in 0..kw {
                                        let ix = (xo + kx * dil) as isize - *pad as isize;
                                        if ix < 0 || ix >= iw as isize {
                                            continue;
                                        }
                                        let xi = (ci * h + iy as usize) * iw + ix as usize;
                                        let wi = ((o * c_in + ci) * kh + ky) * kw + kx;
                                        dx[xi] += wv[wi] * go;
                                        dw[wi] += xv[xi] * go;
                                    }
                                }
                            }
                        }
                    }
                }
                acc(grads, *x, Tensor::new(xd.to_vec(), dx)?)?;
                acc(grads, *w, Tensor::new(wd.to_vec(), dw)?)?;
            }
            Op::BiasAdd { x, b } => {
                let d = self.val(*x).dims();
                let (c, h, w) = (d[0], d[1], d[2]);
                let db = Tensor::from_fn(vec![c], |ci| {
                    g.data()[ci * h * w..(ci + 1) * h * w].iter().sum()
                });
                acc(grads, *x, g.clone())?;
                acc(grads, *b, db)?;
            }
            Op::NodeConv1d { x, k } => {
                let (n, c) = {
                    let d = self.val(*x).dims();
                    (d[0], d[1])
                };
                let klen = self.val(*k).dims()[0];
                let half = (klen / 2) as isize;
                let xv = self.val(*x).data();
                let kv = self.val(*k).data();
                let mut dx = vec![0.0; n * c];
                let mut dk = vec![0.0; klen * c];
                for row in 0..n as isize {
                    for j in 0..klen as isize {
                        let src = row + j - half;
                        if src < 0 || src >= n as isize {
                            continue;
                        }
                        for ci in 0..c {
                            let go = g.data()[row as usize * c + ci];
                            dx[src as usize * c + ci] += kv[j as usize * c + ci] * go;
                            dk[j as usize * c + ci] += xv[src as usize * c + ci] * go;
                        }
                    }
                }
                acc(grads, *x, Tensor::new(vec![n, c], dx)?)?;
                acc(grads, *k, Tensor::new(vec![klen, c], dk)?)?;
            }
        }
        Ok(())
    }
}

/// Forward evaluation of one op against a node-value lookup. Both the
/// recording path and replay go through here, so they cannot diverge.
fn eval<'a>(op: &Op, get: &dyn Fn(usize) -> &'a Tensor) -> Result<Tensor> {
    match op {
        Op::Leaf | Op::Constant => unreachable!("inputs are never re-evaluated"),
        Op::Add(a, b) => get(*a).add(get(*b)),
        Op::Mul(a, b) => get(*a).mul(get(*b)),
        Op::Affine { x, scale, shift } => Ok(get(*x).affine(*scale, *shift)),
        Op::MatMul(a, b) => get(*a).matmul(get(*b)),
        Op::Relu(x) => Ok(get(*x).relu()),
        Op::Sigmoid(x) => Ok(get(*x).sigmoid()),
        Op::Ln(x) => Ok(get(*x).ln()),
        Op::Clamp { x, lo, hi } => Ok(get(*x).clamp(*lo, *hi)),
        Op::Transpose(x) => get(*x).transpose(),
        Op::Reshape { x, dims } => get(*x).reshape(dims.clone()),
        Op::ConcatChannels(parts) => {
            let refs: Vec<&Tensor> = parts.iter().map(|&p| get(p)).collect();
            Tensor::concat_channels(&refs)
        }
        Op::MeanPool(x) => get(*x).mean_pool(),
        Op::MeanAll(x) => Ok(get(*x).mean_all()),
        Op::SumAll(x) => Ok(get(*x).sum_all()),
        Op::BilinearResize { x, h, w } => get(*x).bilinear_resize(*h, *w),
        Op::Conv2d { x, w, pad, dil } => get(*x).conv2d(get(*w), *pad, *dil),
        Op::BiasAdd { x, b } => get(*x).bias_add(get(*b)),
        Op::NodeConv1d { x, k } => get(*x).node_conv1d(get(*k)),
    }
}

fn acc(grads: &mut [Option<Tensor>], i: usize, delta: Tensor) -> Result<()> {
    grads[i] = Some(match grads[i].take() {
        Some(g) => g.add(&delta)?,
        None => delta,
    });
    Ok(())
}

/// Result of one backward pass. Nodes the loss never touched get a
/// zero gradient of the node's dims.
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    dims: Vec<Vec<usize>>,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn wrt(&self, id: TensorId) -> Result<Tensor> {
        if id.tape != self.tape {
            return Err(Error::Lineage(format!(
                "gradient lookup across tapes ({} vs {})",
                id.tape, self.tape
            )));
        }
        Ok(match &self.grads[id.index] {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.dims[id.index].clone()),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grad_of_sum_is_ones() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, 3.0, -0.25, 7.0]).unwrap());
        let s = t.sum_all(x).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn grad_of_sum_of_squares() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        let xx = t.mul(x, x).unwrap();
        let s = t.sum_all(xx).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn matmul_grads_have_input_dims() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::from_fn(vec![2, 3], |i| i as f64 * 0.3 - 1.0));
        let b = t.leaf(Tensor::from_fn(vec![3, 4], |i| 0.1 * i as f64));
        let p = t.matmul(a, b).unwrap();
        let s = t.sum_all(p).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.wrt(a).unwrap().dims(), &[2, 3]);
        assert_eq!(g.wrt(b).unwrap().dims(), &[3, 4]);
    }

    #[test]
    fn cross_tape_use_is_lineage_error() {
        let mut t1 = Tape::new();
        let mut t2 = Tape::new();
        let x = t1.leaf(Tensor::scalar(1.0));
        let y = t2.leaf(Tensor::scalar(2.0));
        let e = t2.add(x, y).unwrap_err();
        assert_eq!(e.category(), "lineage");
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::zeros(vec![2, 2]));
        let e = t.backward(x).unwrap_err();
        assert_eq!(e.category(), "shape");
    }

    #[test]
    fn untouched_leaf_gets_zero_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(3.0));
        let y = t.leaf(Tensor::new(vec![2], vec![1.0, 1.0]).unwrap());
        let s = t.sum_all(x).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.wrt(y).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn concat_backward_splits_by_channel() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::filled(vec![2, 2, 2], 1.0));
        let b = t.leaf(Tensor::filled(vec![1, 2, 2], 1.0));
        let c = t.concat_channels(&[a, b]).unwrap();
        // Weight the channels differently so the split is visible.
        let w = t.constant(Tensor::from_fn(vec![3, 2, 2], |i| (i / 4) as f64));
        let prod = t.mul(c, w).unwrap();
        let s = t.sum_all(prod).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.wrt(a).unwrap().data(), &[0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
        assert_eq!(g.wrt(b).unwrap().data(), &[2.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn replay_reproduces_values_bit_exactly() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::from_fn(vec![3, 4, 4], |i| (i as f64).sin()));
        let w = t.leaf(Tensor::from_fn(vec![2, 3, 3, 3], |i| (i as f64 * 0.7).cos() * 0.1));
        let b = t.leaf(Tensor::new(vec![2], vec![0.01, -0.02]).unwrap());
        let c = t.conv2d(x, w, 1, 1).unwrap();
        let c = t.bias_add(c, b).unwrap();
        let r = t.relu(c).unwrap();
        let up = t.bilinear_resize(r, 7, 7).unwrap();
        let sg = t.sigmoid(up).unwrap();
        let _ = t.mean_all(sg).unwrap();
        assert!(t.replay_matches());
    }

    #[test]
    fn gradient_accumulates_over_reuse() {
        // s = sum(x + x) → ds/dx = 2 everywhere.
        let mut t = Tape::new();
        let x = t.leaf(Tensor::new(vec![2], vec![5.0, -3.0]).unwrap());
        let d = t.add(x, x).unwrap();
        let s = t.sum_all(d).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[2.0, 2.0]);
    }
}
