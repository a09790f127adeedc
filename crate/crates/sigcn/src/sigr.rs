//! Support-induced graph reasoning over the query feature map.
//!
//! The activation map picks the salient query pixels; those become a
//! fully connected graph with cosine edge weights, normalized the
//! standard symmetric way. Propagation uses a fixed kernel built from
//! support foreground prototypes — a depthwise 1-D convolution along
//! the node axis — instead of a learned weight matrix, and two such
//! layers form one branch. The branch output reshapes back to a
//! feature map, the "query instance".

use crate::episodes::{foreground_sequence, Mask};
use crate::error::{Error, Result};
use crate::tape::{Tape, TensorId};
use crate::tensor::{cosine, Tensor};

/// Degrees this close to zero (possible when negative cosines cancel
/// the self-loop) are clamped before the inverse square root.
const DEGREE_FLOOR: f64 = 1e-8;

/// Salient-pixel indicator over an H×W map.
#[derive(Debug, Clone, PartialEq)]
pub struct Salience {
    pub h: usize,
    pub w: usize,
    pub on: Vec<bool>,
}

impl Salience {
    pub fn count(&self) -> usize {
        self.on.iter().filter(|&&b| b).count()
    }

    /// Row-major indices of the salient pixels.
    pub fn indices(&self) -> Vec<usize> {
        (0..self.on.len()).filter(|&i| self.on[i]).collect()
    }
}

/// Pixels whose activation reaches `t`. An empty selection falls back
/// to the single argmax pixel (first in row-major order on ties) so
/// the graph is never empty.
pub fn select_salient(activation: &Tensor, t: f64) -> Result<Salience> {
    let (h, w) = match activation.dims() {
        [h, w] => (*h, *w),
        d => {
            return Err(Error::Shape(format!(
                "activation map must be [H,W], got {d:?}"
            )))
        }
    };
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Config(format!("threshold must be in [0,1], got {t}")));
    }
    let mut on: Vec<bool> = activation.data().iter().map(|&v| v >= t).collect();
    if !on.iter().any(|&b| b) {
        let mut best = 0;
        for (i, &v) in activation.data().iter().enumerate() {
            if v > activation.data()[best] {
                best = i;
            }
        }
        on[best] = true;
    }
    Ok(Salience { h, w, on })
}

/// Query graph: node features (one row per pixel) and the adjacency in
/// raw and normalized form. Non-salient nodes keep only their self
/// loop.
#[derive(Debug, Clone)]
pub struct Graph {
    /// [N, C] node features, N = H·W, row-major pixel order.
    pub x: Tensor,
    /// Cosine adjacency: zero diagonal, nonzero only on salient pairs.
    pub a0: Tensor,
    /// Symmetrically normalized self-looped adjacency.
    pub a_hat: Tensor,
}

pub fn build_graph(xq: &Tensor, sal: &Salience) -> Result<Graph> {
    let (h, w) = match xq.dims() {
        [_, h, w] => (*h, *w),
        d => return Err(Error::Shape(format!("features must be [C,H,W], got {d:?}"))),
    };
    if (sal.h, sal.w) != (h, w) {
        return Err(Error::Shape(format!(
            "salience {}x{} vs features {h}x{w}",
            sal.h, sal.w
        )));
    }
    let x = xq.pixels_as_rows()?;
    let n = h * w;
    let c = x.dims()[1];
    let salient = sal.indices();

    let mut a0 = vec![0.0; n * n];
    for (ii, &i) in salient.iter().enumerate() {
        for &j in &salient[ii + 1..] {
            let sim = cosine(
                &x.data()[i * c..(i + 1) * c],
                &x.data()[j * c..(j + 1) * c],
            );
            a0[i * n + j] = sim;
            a0[j * n + i] = sim;
        }
    }

    // Self loops, then degrees of the looped adjacency.
    let mut degree = vec![1.0; n];
    for i in 0..n {
        let row: f64 = a0[i * n..(i + 1) * n].iter().sum();
        degree[i] += row;
    }
    let inv_sqrt: Vec<f64> = degree
        .iter()
        .map(|&d| 1.0 / d.max(DEGREE_FLOOR).sqrt())
        .collect();
    let mut a_hat = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let looped = a0[i * n + j] + if i == j { 1.0 } else { 0.0 };
            a_hat[i * n + j] = inv_sqrt[i] * looped * inv_sqrt[j];
        }
    }
    Ok(Graph {
        x,
        a0: Tensor::new(vec![n, n], a0)?,
        a_hat: Tensor::new(vec![n, n], a_hat)?,
    })
}

/// k foreground prototypes: the row-major foreground sequence is split
/// into k contiguous near-equal bins and each bin averaged. Bins left
/// empty (fewer foreground pixels than k) fall back to the global
/// foreground mean.
pub fn support_prototypes(xs: &Tensor, ms: &Mask, k: usize) -> Result<Tensor> {
    if k < 1 {
        return Err(Error::Config("prototype count must be >= 1".into()));
    }
    foreground_sequence(xs, ms)?.pool_rows(k)
}

/// One graph layer: propagate the kernel-convolved node features over
/// the normalized adjacency, then rectify.
pub fn sigcn_layer(
    tape: &mut Tape,
    x: TensorId,
    a_hat: TensorId,
    theta: TensorId,
) -> Result<TensorId> {
    let conv = tape.node_conv1d(x, theta)?;
    let prop = tape.matmul(a_hat, conv)?;
    tape.relu(prop)
}

/// One full branch on the tape: salience and graph from the activation
/// map, a fused support kernel, two stacked layers, and the reshape
/// back to a `[C,H,W]` query instance. Shot list entries are
/// (features, mask) at this branch's feature level.
pub fn run_branch(
    tape: &mut Tape,
    xq: &Tensor,
    activation: &Tensor,
    shots: &[(&Tensor, &Mask)],
    t: f64,
    k: usize,
) -> Result<TensorId> {
    if shots.is_empty() {
        return Err(Error::Input("branch needs at least one support shot".into()));
    }
    let (c, h, w) = match xq.dims() {
        [c, h, w] => (*c, *h, *w),
        d => return Err(Error::Shape(format!("features must be [C,H,W], got {d:?}"))),
    };
    let sal = select_salient(activation, t)?;
    let graph = build_graph(xq, &sal)?;

    // Fuse the per-shot kernels by elementwise average.
    let mut theta: Option<Tensor> = None;
    for (xs, ms) in shots {
        let p = support_prototypes(xs, ms, k)?;
        theta = Some(match theta {
            Some(acc) => acc.add(&p)?,
            None => p,
        });
    }
    let theta = theta.unwrap().scale(1.0 / shots.len() as f64);

    let x = tape.constant(graph.x);
    let a_hat = tape.constant(graph.a_hat);
    let theta = tape.constant(theta);
    let l1 = sigcn_layer(tape, x, a_hat, theta)?;
    let l2 = sigcn_layer(tape, l1, a_hat, theta)?;
    let by_channel = tape.transpose(l2)?;
    tape.reshape(by_channel, vec![c, h, w])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::episodes::Mask;

    fn mask(h: usize, w: usize, fg: &[usize]) -> Mask {
        let mut on = vec![false; h * w];
        for &p in fg {
            on[p] = true;
        }
        Mask::from_bools(h, w, &on).unwrap()
    }

    #[test]
    fn salience_direct_threshold() {
        let a = Tensor::new(vec![2, 2], vec![0.8, 0.2, 0.7, 0.69]).unwrap();
        let s = select_salient(&a, 0.7).unwrap();
        assert_eq!(s.on, vec![true, false, true, false]);
        assert_eq!(s.count(), 2);
    }

    #[test]
    fn salience_zero_threshold_selects_all() {
        let a = Tensor::new(vec![2, 2], vec![0.0, 0.3, 0.6, 1.0]).unwrap();
        assert_eq!(select_salient(&a, 0.0).unwrap().count(), 4);
    }

    #[test]
    fn salience_empty_falls_back_to_argmax() {
        let a = Tensor::new(vec![2, 2], vec![0.1, 0.4, 0.4, 0.2]).unwrap();
        let s = select_salient(&a, 0.9).unwrap();
        // First of the tied maxima in row-major order.
        assert_eq!(s.indices(), vec![1]);
    }

    #[test]
    fn salience_monotone_in_threshold() {
        let a = Tensor::from_fn(vec![3, 3], |i| (i as f64) / 8.0);
        let loose = select_salient(&a, 0.25).unwrap();
        let tight = select_salient(&a, 0.75).unwrap();
        for (l, t) in loose.on.iter().zip(&tight.on) {
            assert!(*l || !*t);
        }
    }

    #[test]
    fn graph_identical_vectors_connect_at_one() {
        let xq = Tensor::new(vec![2, 1, 2], vec![1.0, 1.0, 2.0, 2.0]).unwrap();
        let sal = Salience {
            h: 1,
            w: 2,
            on: vec![true, true],
        };
        let g = build_graph(&xq, &sal).unwrap();
        assert!((g.a0.at2(0, 1) - 1.0).abs() < 1e-12);
        assert_eq!(g.a0.at2(0, 0), 0.0);
    }

    #[test]
    fn graph_orthogonal_vectors_disconnect() {
        let xq = Tensor::new(vec![2, 1, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let sal = Salience {
            h: 1,
            w: 2,
            on: vec![true, true],
        };
        let g = build_graph(&xq, &sal).unwrap();
        assert!(g.a0.at2(0, 1).abs() < 1e-12);
    }

    #[test]
    fn normalized_block_forced_arithmetic() {
        // Two salient nodes with identical vectors: A0 block [[0,1],[1,0]],
        // degrees 2, so the normalized block is all 0.5.
        let xq = Tensor::new(vec![2, 1, 2], vec![1.0, 1.0, 2.0, 2.0]).unwrap();
        let sal = Salience {
            h: 1,
            w: 2,
            on: vec![true, true],
        };
        let g = build_graph(&xq, &sal).unwrap();
        for v in g.a_hat.data() {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn prototypes_k1_is_global_mean() {
        let xs = Tensor::from_fn(vec![3, 2, 2], |i| i as f64);
        let ms = mask(2, 2, &[0, 3]);
        let p = support_prototypes(&xs, &ms, 1).unwrap();
        let mean = crate::episodes::masked_average_pool(&xs, &ms).unwrap();
        assert_eq!(p.dims(), &[1, 3]);
        assert_eq!(p.data(), mean.data());
    }

    #[test]
    fn prototypes_one_per_pixel_in_scan_order() {
        let xs = Tensor::from_fn(vec![2, 2, 2], |i| i as f64);
        let ms = mask(2, 2, &[1, 2]);
        let p = support_prototypes(&xs, &ms, 2).unwrap();
        assert_eq!(p.data(), &[1.0, 5.0, 2.0, 6.0]);
    }

    #[test]
    fn prototypes_pad_with_global_mean_when_short() {
        let xs = Tensor::from_fn(vec![2, 2, 2], |i| i as f64);
        let ms = mask(2, 2, &[3]);
        let p = support_prototypes(&xs, &ms, 3).unwrap();
        assert_eq!(p.dims(), &[3, 2]);
        // One foreground pixel: every bin is that pixel or the global
        // mean of it — identical rows.
        assert_eq!(p.data(), &[3.0, 7.0, 3.0, 7.0, 3.0, 7.0]);
    }

    #[test]
    fn layer_identity_kernel_identity_graph_is_relu() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![2, 2], vec![1.0, -2.0, 0.5, -0.1]).unwrap());
        let eye = tape.constant(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let theta = tape.constant(Tensor::filled(vec![1, 2], 1.0));
        let out = sigcn_layer(&mut tape, x, eye, theta).unwrap();
        assert_eq!(tape.value(out).unwrap().data(), &[1.0, 0.0, 0.5, 0.0]);
    }

    #[test]
    fn layer_hand_case() {
        // X = I2, Â = all 0.5, k=1, θ = [[1,2]]; conv scales the
        // columns, propagation averages the rows.
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let a = tape.constant(Tensor::filled(vec![2, 2], 0.5));
        let theta = tape.constant(Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap());
        let out = sigcn_layer(&mut tape, x, a, theta).unwrap();
        assert_eq!(tape.value(out).unwrap().data(), &[0.5, 1.0, 0.5, 1.0]);
    }

    #[test]
    fn branch_output_is_finite_map_even_when_nothing_is_salient() {
        let xq = Tensor::from_fn(vec![3, 4, 4], |i| (i as f64 * 0.11).sin());
        let xs = Tensor::from_fn(vec![3, 4, 4], |i| (i as f64 * 0.07).cos());
        let ms = mask(4, 4, &[5, 6, 9]);
        let activation = Tensor::zeros(vec![4, 4]);
        let mut tape = Tape::new();
        let out = run_branch(&mut tape, &xq, &activation, &[(&xs, &ms)], 0.7, 5).unwrap();
        let v = tape.value(out).unwrap();
        assert_eq!(v.dims(), &[3, 4, 4]);
        assert!(v.all_finite());
    }
}
