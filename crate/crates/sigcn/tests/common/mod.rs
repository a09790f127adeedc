//! Reference implementations shared by the integration tests: plain
//! nested loops over `Vec<f64>`, deliberately independent of the
//! library's kernels, plus small random-input helpers.
#![allow(dead_code)]

use std::collections::BTreeMap;

use sigcn::episodes::Mask;
use sigcn::rng::SplitMix64;
use sigcn::tensor::Tensor;

pub fn rand_tensor(rng: &mut SplitMix64, dims: Vec<usize>) -> Tensor {
    Tensor::from_fn(dims, |_| rng.uniform(-2.0, 2.0))
}

/// Random mask with at least one foreground pixel.
pub fn rand_mask(rng: &mut SplitMix64, h: usize, w: usize) -> Mask {
    loop {
        let on: Vec<bool> = (0..h * w).map(|_| rng.next_f64() < 0.4).collect();
        if on.iter().any(|&b| b) {
            return Mask::from_bools(h, w, &on).unwrap();
        }
    }
}

/// Random mask that may be empty or full.
pub fn rand_any_mask(rng: &mut SplitMix64, h: usize, w: usize) -> Mask {
    let density = rng.next_f64();
    let on: Vec<bool> = (0..h * w).map(|_| rng.next_f64() < density).collect();
    Mask::from_bools(h, w, &on).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "compared slices differ in length");
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na < 1e-12 || nb < 1e-12 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// [N,K]·[K,M] by triple loop.
pub fn matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for l in 0..k {
                s += a[i * k + l] * b[l * m + j];
            }
            out[i * m + j] = s;
        }
    }
    out
}

/// Depthwise convolution along the node axis with zero padding and a
/// centered kernel: out(n,c) = Σ_j k(j,c)·x(n+j−⌊klen/2⌋,c).
pub fn node_conv(x: &[f64], k: &[f64], n: usize, c: usize, klen: usize) -> Vec<f64> {
    let half = (klen / 2) as isize;
    let mut out = vec![0.0; n * c];
    for row in 0..n as isize {
        for j in 0..klen as isize {
            let src = row + j - half;
            if src < 0 || src >= n as isize {
                continue;
            }
            for ci in 0..c {
                out[row as usize * c + ci] += k[j as usize * c + ci] * x[src as usize * c + ci];
            }
        }
    }
    out
}

/// One graph layer: rectified propagation of the kernel-convolved node
/// features, σ(Â·F_θ(X)).
pub fn sigcn_layer(
    x: &[f64],
    a_hat: &[f64],
    theta: &[f64],
    n: usize,
    c: usize,
    klen: usize,
) -> Vec<f64> {
    let conv = node_conv(x, theta, n, c, klen);
    matmul(a_hat, &conv, n, n, c)
        .into_iter()
        .map(|v| v.max(0.0))
        .collect()
}

/// Instance association by explicit Gram products. All instances are
/// channel-major slices: q0/q1 have `nq` positions, vs has `ns`.
/// Returns (ṽq0, ṽq1) with both updates reading the original inputs.
pub fn associate(
    q0: &[f64],
    q1: &[f64],
    vs: &[f64],
    c: usize,
    nq: usize,
    ns: usize,
    alpha: f64,
    beta: f64,
) -> (Vec<f64>, Vec<f64>) {
    let gram = |m: &[f64], n: usize| -> Vec<f64> {
        let mut g = vec![0.0; c * c];
        for ci in 0..c {
            for cj in 0..c {
                let mut s = 0.0;
                for p in 0..n {
                    s += m[ci * n + p] * m[cj * n + p];
                }
                g[ci * c + cj] = s;
            }
        }
        g
    };
    let gs = gram(vs, ns);
    let g0 = gram(q0, nq);
    let g1 = gram(q1, nq);
    let update = |target: &[f64], gram_peer: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; c * nq];
        for ci in 0..c {
            for p in 0..nq {
                let mut from_support = 0.0;
                let mut from_peer = 0.0;
                for cj in 0..c {
                    from_support += gs[ci * c + cj] * target[cj * nq + p];
                    from_peer += gram_peer[ci * c + cj] * target[cj * nq + p];
                }
                out[ci * nq + p] =
                    0.5 * (target[ci * nq + p] + alpha * from_support + beta * from_peer);
            }
        }
        out
    };
    (update(q0, &g1), update(q1, &g0))
}

fn min_max(mut raw: Vec<f64>) -> Vec<f64> {
    let lo = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 0.0 {
        return vec![0.0; raw.len()];
    }
    for v in &mut raw {
        *v = (*v - lo) / (hi - lo);
    }
    raw
}

/// Pixel-to-pixel activation map: best cosine of each query pixel over
/// all support foreground pixels, per-shot maps averaged, then min-max
/// normalized.
pub fn pixel_activation(shots: &[(&Tensor, &Mask)], fq: &Tensor) -> Vec<f64> {
    let d = fq.dims();
    let (c, h, w) = (d[0], d[1], d[2]);
    let q = fq.data();
    let mut mean = vec![0.0; h * w];
    for (fs, ms) in shots {
        let s = fs.data();
        for p in 0..h * w {
            let qv: Vec<f64> = (0..c).map(|ci| q[ci * h * w + p]).collect();
            let mut best = f64::NEG_INFINITY;
            for sp in 0..h * w {
                if !ms.is_fg(sp) {
                    continue;
                }
                let sv: Vec<f64> = (0..c).map(|ci| s[ci * h * w + sp]).collect();
                best = best.max(cosine(&qv, &sv));
            }
            mean[p] += best / shots.len() as f64;
        }
    }
    min_max(mean)
}

/// Region-to-region activation map: both sides pooled onto an r×r grid
/// (support cells over their foreground pixels only), every query cell
/// scored by its best support cell, scores broadcast back to pixels,
/// shots averaged, then normalized.
pub fn region_activation(shots: &[(&Tensor, &Mask)], fq: &Tensor, r: usize) -> Vec<f64> {
    let d = fq.dims();
    let (c, h, w) = (d[0], d[1], d[2]);
    let edges = |len: usize| -> Vec<(usize, usize)> {
        (0..r).map(|b| (b * len / r, (b + 1) * len / r)).collect()
    };
    let rows = edges(h);
    let cols = edges(w);
    let q = fq.data();
    let mut mean = vec![0.0; h * w];
    for (fs, ms) in shots {
        let s = fs.data();
        let mut support_cells: Vec<Vec<f64>> = Vec::new();
        for (y0, y1) in &rows {
            for (x0, x1) in &cols {
                let mut sum = vec![0.0; c];
                let mut cnt = 0usize;
                for y in *y0..*y1 {
                    for x in *x0..*x1 {
                        if ms.is_fg(y * w + x) {
                            cnt += 1;
                            for (ci, acc) in sum.iter_mut().enumerate() {
                                *acc += s[ci * h * w + y * w + x];
                            }
                        }
                    }
                }
                if cnt > 0 {
                    for acc in &mut sum {
                        *acc /= cnt as f64;
                    }
                    support_cells.push(sum);
                }
            }
        }
        assert!(!support_cells.is_empty(), "oracle needs fg somewhere");
        for (y0, y1) in &rows {
            for (x0, x1) in &cols {
                let mut sum = vec![0.0; c];
                let mut cnt = 0usize;
                for y in *y0..*y1 {
                    for x in *x0..*x1 {
                        cnt += 1;
                        for (ci, acc) in sum.iter_mut().enumerate() {
                            *acc += q[ci * h * w + y * w + x];
                        }
                    }
                }
                for acc in &mut sum {
                    *acc /= cnt as f64;
                }
                let mut best = f64::NEG_INFINITY;
                for cell in &support_cells {
                    best = best.max(cosine(&sum, cell));
                }
                // Broadcast the cell score over its own pixels.
                for y in *y0..*y1 {
                    for x in *x0..*x1 {
                        mean[y * w + x] += best / shots.len() as f64;
                    }
                }
            }
        }
    }
    min_max(mean)
}

/// Class-wise mean IoU and FB-IoU by direct counting: intersections
/// and unions aggregate per class across episodes before dividing; an
/// empty union scores 1.
pub fn miou(
    preds: &[Mask],
    gts: &[Mask],
    class_ids: &[u32],
) -> (BTreeMap<u32, f64>, f64, f64) {
    let mut per_class: BTreeMap<u32, (u64, u64)> = BTreeMap::new();
    let (mut fi, mut fu, mut bi, mut bu) = (0u64, 0u64, 0u64, 0u64);
    for ((p, g), &cid) in preds.iter().zip(gts).zip(class_ids) {
        let slot = per_class.entry(cid).or_insert((0, 0));
        for idx in 0..p.height() * p.width() {
            let (a, b) = (p.is_fg(idx), g.is_fg(idx));
            slot.0 += (a && b) as u64;
            slot.1 += (a || b) as u64;
            fi += (a && b) as u64;
            fu += (a || b) as u64;
            bi += (!a && !b) as u64;
            bu += (!a || !b) as u64;
        }
    }
    let iou = |i: u64, u: u64| if u == 0 { 1.0 } else { i as f64 / u as f64 };
    let scores: BTreeMap<u32, f64> = per_class
        .iter()
        .map(|(&cid, &(i, u))| (cid, iou(i, u)))
        .collect();
    let mean = scores.values().sum::<f64>() / scores.len() as f64;
    let fb = 0.5 * (iou(fi, fu) + iou(bi, bu));
    (scores, mean, fb)
}
