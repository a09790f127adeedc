//! Dense row-major f64 tensors and the arithmetic kernels every other
//! module builds on.
//!
//! A [`Tensor`] is an immutable value: rank 1-4, row-major storage with
//! the last dimension fastest. All kernels are plain loops over `f64`;
//! speed is a non-goal, determinism and checkability are.

use crate::error::{Error, Result};

/// Norm guard for cosine similarity: vectors shorter than this are
/// treated as zero and their cosine defined as 0.
pub const COSINE_EPS: f64 = 1e-12;

/// Dense real tensor, row-major, last dimension fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Build a tensor from dims and flat data. Fails if the element
    /// count does not match or the rank is outside 1-4.
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
        if dims.is_empty() || dims.len() > 4 {
            return Err(Error::Shape(format!(
                "rank must be 1-4, got {}",
                dims.len()
            )));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!("zero-sized dimension in {dims:?}")));
        }
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "dims {:?} imply {} elements, data has {}",
                dims,
                n,
                data.len()
            )));
        }
        Ok(Tensor { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Tensor {
        let n = dims.iter().product();
        Tensor::new(dims, vec![0.0; n]).expect("zeros: valid dims")
    }

    pub fn filled(dims: Vec<usize>, value: f64) -> Tensor {
        let n = dims.iter().product();
        Tensor::new(dims, vec![value; n]).expect("filled: valid dims")
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor {
            dims: vec![1],
            data: vec![value],
        }
    }

    pub fn from_fn(dims: Vec<usize>, mut f: impl FnMut(usize) -> f64) -> Tensor {
        let n: usize = dims.iter().product();
        let data = (0..n).map(&mut f).collect();
        Tensor::new(dims, data).expect("from_fn: valid dims")
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::Shape(format!(
                "item() needs a one-element tensor, dims are {:?}",
                self.dims
            )));
        }
        Ok(self.data[0])
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Value at (row, col) of a rank-2 tensor.
    pub fn at2(&self, i: usize, j: usize) -> f64 {
        debug_assert_eq!(self.rank(), 2);
        self.data[i * self.dims[1] + j]
    }

    /// Value at (c, y, x) of a rank-3 tensor.
    pub fn at3(&self, c: usize, y: usize, x: usize) -> f64 {
        debug_assert_eq!(self.rank(), 3);
        self.data[(c * self.dims[1] + y) * self.dims[2] + x]
    }

    fn same_shape(&self, other: &Tensor, op: &str) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::Shape(format!(
                "{op}: dims {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.same_shape(other, "add")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Tensor {
            dims: self.dims.clone(),
            data,
        })
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.same_shape(other, "mul")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b)
            .collect();
        Ok(Tensor {
            dims: self.dims.clone(),
            data,
        })
    }

    /// Elementwise `scale * x + shift`. Covers negation (`-1, 0`) and
    /// complement (`-1, 1`).
    pub fn affine(&self, scale: f64, shift: f64) -> Tensor {
        let data = self.data.iter().map(|x| scale * x + shift).collect();
        Tensor {
            dims: self.dims.clone(),
            data,
        }
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.affine(c, 0.0)
    }

    pub fn relu(&self) -> Tensor {
        let data = self.data.iter().map(|x| x.max(0.0)).collect();
        Tensor {
            dims: self.dims.clone(),
            data,
        }
    }

    pub fn sigmoid(&self) -> Tensor {
        let data = self.data.iter().map(|x| sigmoid(*x)).collect();
        Tensor {
            dims: self.dims.clone(),
            data,
        }
    }

    pub fn ln(&self) -> Tensor {
        let data = self.data.iter().map(|x| x.ln()).collect();
        Tensor {
            dims: self.dims.clone(),
            data,
        }
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor {
        let data = self.data.iter().map(|x| x.clamp(lo, hi)).collect();
        Tensor {
            dims: self.dims.clone(),
            data,
        }
    }

    /// Matrix product of two rank-2 tensors, `[M,K] x [K,N] -> [M,N]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || other.rank() != 2 {
            return Err(Error::Shape(format!(
                "matmul needs rank-2 operands, got {:?} and {:?}",
                self.dims, other.dims
            )));
        }
        let (m, k) = (self.dims[0], self.dims[1]);
        let (k2, n) = (other.dims[0], other.dims[1]);
        if k != k2 {
            return Err(Error::Shape(format!(
                "matmul inner dims: {:?} x {:?}",
                self.dims, other.dims
            )));
        }
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            let row = &self.data[i * k..(i + 1) * k];
            for (p, &a) in row.iter().enumerate() {
                let brow = &other.data[p * n..(p + 1) * n];
                let out = &mut data[i * n..(i + 1) * n];
                for (o, &b) in out.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Ok(Tensor {
            dims: vec![m, n],
            data,
        })
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose(&self) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(Error::Shape(format!(
                "transpose needs rank 2, got {:?}",
                self.dims
            )));
        }
        let (m, n) = (self.dims[0], self.dims[1]);
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(Tensor {
            dims: vec![n, m],
            data,
        })
    }

    /// Same data, new dims; element count must match.
    pub fn reshape(&self, dims: Vec<usize>) -> Result<Tensor> {
        let n: usize = dims.iter().product();
        if n != self.data.len() || dims.is_empty() || dims.len() > 4 {
            return Err(Error::Shape(format!(
                "reshape {:?} -> {:?}",
                self.dims, dims
            )));
        }
        Ok(Tensor {
            dims,
            data: self.data.clone(),
        })
    }

    /// Concatenate rank-3 tensors along the channel (first) axis.
    pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(Error::Shape("concat of zero tensors".into()));
        }
        let (h, w) = match parts[0].dims() {
            [_, h, w] => (*h, *w),
            d => return Err(Error::Shape(format!("concat needs rank 3, got {d:?}"))),
        };
        let mut data = Vec::new();
        let mut channels = 0;
        for p in parts {
            match p.dims() {
                [c, ph, pw] if *ph == h && *pw == w => {
                    channels += c;
                    data.extend_from_slice(p.data());
                }
                d => {
                    return Err(Error::Shape(format!(
                        "concat: spatial dims differ, {d:?} vs [{h}, {w}]"
                    )))
                }
            }
        }
        Ok(Tensor {
            dims: vec![channels, h, w],
            data,
        })
    }

    /// Per-channel spatial mean of a rank-3 tensor: `[C,H,W] -> [C]`.
    pub fn mean_pool(&self) -> Result<Tensor> {
        let [c, h, w] = rank3(self, "mean_pool")?;
        let area = (h * w) as f64;
        let data = (0..c)
            .map(|ci| self.data[ci * h * w..(ci + 1) * h * w].iter().sum::<f64>() / area)
            .collect();
        Ok(Tensor {
            dims: vec![c],
            data,
        })
    }

    /// Mean over all elements, as a scalar tensor.
    pub fn mean_all(&self) -> Tensor {
        Tensor::scalar(self.data.iter().sum::<f64>() / self.data.len() as f64)
    }

    /// Sum over all elements, as a scalar tensor.
    pub fn sum_all(&self) -> Tensor {
        Tensor::scalar(self.data.iter().sum::<f64>())
    }

    /// Bilinear resize of a rank-3 tensor to (out_h, out_w), corner
    /// pixels aligned. Resizing to the input size is the identity.
    pub fn bilinear_resize(&self, out_h: usize, out_w: usize) -> Result<Tensor> {
        let [c, h, w] = rank3(self, "bilinear_resize")?;
        if out_h == 0 || out_w == 0 {
            return Err(Error::Shape("bilinear_resize to zero size".into()));
        }
        let mut data = vec![0.0; c * out_h * out_w];
        for ci in 0..c {
            let src = &self.data[ci * h * w..(ci + 1) * h * w];
            for oy in 0..out_h {
                let (y0, y1, wy) = resize_coord(oy, out_h, h);
                for ox in 0..out_w {
                    let (x0, x1, wx) = resize_coord(ox, out_w, w);
                    let v = (1.0 - wy) * (1.0 - wx) * src[y0 * w + x0]
                        + (1.0 - wy) * wx * src[y0 * w + x1]
                        + wy * (1.0 - wx) * src[y1 * w + x0]
                        + wy * wx * src[y1 * w + x1];
                    data[(ci * out_h + oy) * out_w + ox] = v;
                }
            }
        }
        Ok(Tensor {
            dims: vec![c, out_h, out_w],
            data,
        })
    }

    /// 2-D convolution, stride 1, zero padding `pad`, dilation `dil`.
    /// Input `[C_in,H,W]`, weight `[C_out,C_in,kh,kw] -> [C_out,H',W']`.
    pub fn conv2d(&self, weight: &Tensor, pad: usize, dil: usize) -> Result<Tensor> {
        let [c_in, h, w] = rank3(self, "conv2d input")?;
        let [c_out, wc_in, kh, kw] = match weight.dims() {
            [a, b, c, d] => [*a, *b, *c, *d],
            d => {
                return Err(Error::Shape(format!(
                    "conv2d weight needs rank 4, got {d:?}"
                )))
            }
        };
        if wc_in != c_in {
            return Err(Error::Shape(format!(
                "conv2d: input has {c_in} channels, weight expects {wc_in}"
            )));
        }
        if dil == 0 {
            return Err(Error::Shape("conv2d: dilation must be >= 1".into()));
        }
        let span_h = dil * (kh - 1);
        let span_w = dil * (kw - 1);
        if h + 2 * pad < span_h + 1 || w + 2 * pad < span_w + 1 {
            return Err(Error::Shape(format!(
                "conv2d: kernel span {}x{} exceeds padded input {}x{}",
                span_h + 1,
                span_w + 1,
                h + 2 * pad,
                w + 2 * pad
            )));
        }
        let out_h = h + 2 * pad - span_h;
        let out_w = w + 2 * pad - span_w;
        let mut data = vec![0.0; c_out * out_h * out_w];
        for o in 0..c_out {
            for y in 0..out_h {
                for x in 0..out_w {
                    let mut acc = 0.0;
                    for ci in 0..c_in {
                        for ky in 0..kh {
                            let iy = (y + ky * dil) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (x + kx * dil) as isize - pad as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let wv =
                                    weight.data[((o * c_in + ci) * kh + ky) * kw + kx];
                                acc += wv * self.data[(ci * h + iy as usize) * w + ix as usize];
                            }
                        }
                    }
                    data[(o * out_h + y) * out_w + x] = acc;
                }
            }
        }
        Ok(Tensor {
            dims: vec![c_out, out_h, out_w],
            data,
        })
    }

    /// Add a per-channel bias `[C]` to a rank-3 tensor `[C,H,W]`.
    pub fn bias_add(&self, bias: &Tensor) -> Result<Tensor> {
        let [c, h, w] = rank3(self, "bias_add input")?;
        if bias.dims() != [c] {
            return Err(Error::Shape(format!(
                "bias_add: bias dims {:?} vs {c} channels",
                bias.dims()
            )));
        }
        let mut data = self.data.clone();
        for ci in 0..c {
            let b = bias.data[ci];
            for v in &mut data[ci * h * w..(ci + 1) * h * w] {
                *v += b;
            }
        }
        Ok(Tensor {
            dims: self.dims.clone(),
            data,
        })
    }

    /// Adaptive average pooling over the rows of a rank-2 tensor:
    /// `bins` contiguous near-equal slices (slice b covers rows
    /// ⌊b·N/bins⌋..⌊(b+1)·N/bins⌋), each averaged. When N < bins some
    /// slices are empty; those fall back to the mean of all rows.
    pub fn pool_rows(&self, bins: usize) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(Error::Shape(format!(
                "pool_rows needs rank 2, got {:?}",
                self.dims
            )));
        }
        if bins == 0 {
            return Err(Error::Shape("pool_rows needs bins >= 1".into()));
        }
        let (n, c) = (self.dims[0], self.dims[1]);
        let row_mean = |start: usize, end: usize| -> Vec<f64> {
            let mut m = vec![0.0; c];
            for row in start..end {
                for (mi, &v) in m.iter_mut().zip(&self.data[row * c..(row + 1) * c]) {
                    *mi += v;
                }
            }
            for mi in &mut m {
                *mi /= (end - start) as f64;
            }
            m
        };
        let global = row_mean(0, n);
        let mut out = Vec::with_capacity(bins * c);
        for b in 0..bins {
            let (start, end) = (b * n / bins, (b + 1) * n / bins);
            if start == end {
                out.extend_from_slice(&global);
            } else {
                out.extend(row_mean(start, end));
            }
        }
        Tensor::new(vec![bins, c], out)
    }

    /// View a `[C,H,W]` map as a `[H·W, C]` matrix: one row per pixel in
    /// row-major scan order, one column per channel.
    pub fn pixels_as_rows(&self) -> Result<Tensor> {
        let [c, h, w] = rank3(self, "pixels_as_rows")?;
        let n = h * w;
        let mut data = vec![0.0; n * c];
        for ci in 0..c {
            for p in 0..n {
                data[p * c + ci] = self.data[ci * n + p];
            }
        }
        Ok(Tensor {
            dims: vec![n, c],
            data,
        })
    }

    /// Depthwise 1-D convolution along the row (node) axis of a
    /// rank-2 `[N,C]` tensor with per-column kernels `[k,C]`, zero padding,
    /// kernel centered at row offset `k/2`:
    /// `out[n,c] = sum_j kernel[j,c] * x[n + j - k/2, c]`.
    pub fn node_conv1d(&self, kernel: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || kernel.rank() != 2 {
            return Err(Error::Shape(format!(
                "node_conv1d: x {:?}, kernel {:?}",
                self.dims,
                kernel.dims()
            )));
        }
        let (n, c) = (self.dims[0], self.dims[1]);
        let (k, kc) = (kernel.dims()[0], kernel.dims()[1]);
        if kc != c {
            return Err(Error::Shape(format!(
                "node_conv1d: column count {c} vs kernel columns {kc}"
            )));
        }
        let half = (k / 2) as isize;
        let mut data = vec![0.0; n * c];
        for row in 0..n as isize {
            for j in 0..k as isize {
                let src = row + j - half;
                if src < 0 || src >= n as isize {
                    continue;
                }
                let xrow = &self.data[src as usize * c..(src as usize + 1) * c];
                let krow = &kernel.data[j as usize * c..(j as usize + 1) * c];
                let out = &mut data[row as usize * c..(row as usize + 1) * c];
                for ((o, &kv), &xv) in out.iter_mut().zip(krow).zip(xrow) {
                    *o += kv * xv;
                }
            }
        }
        Ok(Tensor {
            dims: vec![n, c],
            data,
        })
    }
}

/// Logistic function with a stable split for negative inputs.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Cosine similarity of two equal-length vectors; 0 if either norm is
/// below [`COSINE_EPS`].
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    let (na, nb) = (na.sqrt(), nb.sqrt());
    if na < COSINE_EPS || nb < COSINE_EPS {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Source interpolation coordinates for corner-aligned resize:
/// returns (low index, high index, weight of the high index).
pub(crate) fn resize_coord(out_idx: usize, out_len: usize, in_len: usize) -> (usize, usize, f64) {
    if out_len == 1 || in_len == 1 {
        return (0, 0, 0.0);
    }
    let scale = (in_len - 1) as f64 / (out_len - 1) as f64;
    let src = out_idx as f64 * scale;
    let lo = src.floor() as usize;
    let lo = lo.min(in_len - 1);
    let hi = (lo + 1).min(in_len - 1);
    (lo, hi, src - lo as f64)
}

fn rank3(t: &Tensor, what: &str) -> Result<[usize; 3]> {
    match t.dims() {
        [c, h, w] => Ok([*c, *h, *w]),
        d => Err(Error::Shape(format!("{what} needs rank 3, got {d:?}"))),
    }
}
