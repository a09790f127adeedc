//! Support/query activation maps: pixel-to-pixel and region-to-region
//! cosine matching, each at the mid and high feature level.
//!
//! Both matchers score every query position by its best cosine match
//! against the support foreground, then min-max normalize. With K > 1
//! support shots the per-shot raw maps are averaged before the
//! normalization. Region matching pools both sides onto an r×r grid
//! first and broadcasts the region scores back to pixels.

use crate::episodes::{foreground_sequence, Mask};
use crate::error::{Error, Result};
use crate::tensor::{cosine, Tensor};

/// (x − min) / (max − min); the extremes map to exactly 0 and 1, and a
/// constant map collapses to zeros.
pub fn min_max_normalize(raw: &Tensor) -> Tensor {
    let lo = raw.data().iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = raw.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 0.0 {
        return Tensor::zeros(raw.dims().to_vec());
    }
    let span = hi - lo;
    let data = raw.data().iter().map(|&v| (v - lo) / span).collect();
    Tensor::new(raw.dims().to_vec(), data).expect("dims unchanged")
}

/// Pixel-to-pixel activation map: each query pixel scores its best
/// cosine match over all support foreground pixels, averaged over
/// shots, then normalized to `[0,1]`.
pub fn pixel_activation(supports: &[(&Tensor, &Mask)], fq: &Tensor) -> Result<Tensor> {
    let mean = mean_raw(supports, fq, |s, m, q| pixel_raw(s, m, q))?;
    Ok(min_max_normalize(&mean))
}

/// Region-to-region activation map: both sides are average-pooled onto
/// an r×r grid (support regions over foreground pixels only), each
/// query region takes its best cosine match over the support regions,
/// scores broadcast back to pixels, shots averaged, then normalized.
pub fn region_activation(
    supports: &[(&Tensor, &Mask)],
    fq: &Tensor,
    r: usize,
) -> Result<Tensor> {
    let (h, w) = spatial(fq)?;
    if r < 1 || r > h.min(w) {
        return Err(Error::Config(format!(
            "region grid {r} out of range for {h}x{w} maps"
        )));
    }
    let mean = mean_raw(supports, fq, |s, m, q| region_raw(s, m, q, r))?;
    Ok(min_max_normalize(&mean))
}

fn spatial(f: &Tensor) -> Result<(usize, usize)> {
    match f.dims() {
        [_, h, w] => Ok((*h, *w)),
        d => Err(Error::Shape(format!("features must be [C,H,W], got {d:?}"))),
    }
}

fn mean_raw(
    supports: &[(&Tensor, &Mask)],
    fq: &Tensor,
    raw: impl Fn(&Tensor, &Mask, &Tensor) -> Result<Tensor>,
) -> Result<Tensor> {
    if supports.is_empty() {
        return Err(Error::Input("matching needs at least one support shot".into()));
    }
    let mut acc: Option<Tensor> = None;
    for (fs, ms) in supports {
        let m = raw(fs, ms, fq)?;
        acc = Some(match acc {
            Some(a) => a.add(&m)?,
            None => m,
        });
    }
    Ok(acc.unwrap().scale(1.0 / supports.len() as f64))
}

fn pixel_raw(fs: &Tensor, ms: &Mask, fq: &Tensor) -> Result<Tensor> {
    if fs.dims() != fq.dims() {
        return Err(Error::Shape(format!(
            "support {:?} vs query {:?}",
            fs.dims(),
            fq.dims()
        )));
    }
    let (h, w) = spatial(fq)?;
    let c = fq.dims()[0];
    let fg = foreground_sequence(fs, ms)?;
    let qrows = fq.pixels_as_rows()?;
    let mut out = vec![0.0; h * w];
    for p in 0..h * w {
        let qv = &qrows.data()[p * c..(p + 1) * c];
        let mut best = f64::NEG_INFINITY;
        for row in 0..fg.dims()[0] {
            let sv = &fg.data()[row * c..(row + 1) * c];
            best = best.max(cosine(qv, sv));
        }
        out[p] = best;
    }
    Tensor::new(vec![h, w], out)
}

fn region_raw(fs: &Tensor, ms: &Mask, fq: &Tensor, r: usize) -> Result<Tensor> {
    if fs.dims() != fq.dims() {
        return Err(Error::Shape(format!(
            "support {:?} vs query {:?}",
            fs.dims(),
            fq.dims()
        )));
    }
    let (h, w) = spatial(fq)?;
    let c = fq.dims()[0];
    let rows = bin_edges(h, r);
    let cols = bin_edges(w, r);

    // Support region vectors: mean over the foreground pixels of each
    // grid cell; cells without foreground contribute nothing.
    let mut support_regions: Vec<Vec<f64>> = Vec::new();
    for (y0, y1) in &rows {
        for (x0, x1) in &cols {
            let mut sum = vec![0.0; c];
            let mut count = 0usize;
            for y in *y0..*y1 {
                for x in *x0..*x1 {
                    if ms.is_fg(y * w + x) {
                        count += 1;
                        for (ci, s) in sum.iter_mut().enumerate() {
                            *s += fs.at3(ci, y, x);
                        }
                    }
                }
            }
            if count > 0 {
                for s in &mut sum {
                    *s /= count as f64;
                }
                support_regions.push(sum);
            }
        }
    }
    if support_regions.is_empty() {
        return Err(Error::ForegroundEmpty(
            "no support region contains foreground pixels".into(),
        ));
    }

    // Query region vectors (plain average) and their best match.
    let mut cell_scores = vec![0.0; r * r];
    for (gy, (y0, y1)) in rows.iter().enumerate() {
        for (gx, (x0, x1)) in cols.iter().enumerate() {
            let mut sum = vec![0.0; c];
            let mut count = 0usize;
            for y in *y0..*y1 {
                for x in *x0..*x1 {
                    count += 1;
                    for (ci, s) in sum.iter_mut().enumerate() {
                        *s += fq.at3(ci, y, x);
                    }
                }
            }
            for s in &mut sum {
                *s /= count as f64;
            }
            let mut best = f64::NEG_INFINITY;
            for sr in &support_regions {
                best = best.max(cosine(&sum, sr));
            }
            cell_scores[gy * r + gx] = best;
        }
    }

    // Broadcast each cell's score back over its own pixels.
    let y_bin = bin_lookup(&rows, h);
    let x_bin = bin_lookup(&cols, w);
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = cell_scores[y_bin[y] * r + x_bin[x]];
        }
    }
    Tensor::new(vec![h, w], out)
}

/// Contiguous near-equal bins: bin b covers ⌊b·len/r⌋ .. ⌊(b+1)·len/r⌋.
pub(crate) fn bin_edges(len: usize, r: usize) -> Vec<(usize, usize)> {
    (0..r).map(|b| (b * len / r, (b + 1) * len / r)).collect()
}

fn bin_lookup(edges: &[(usize, usize)], len: usize) -> Vec<usize> {
    let mut lut = vec![0usize; len];
    for (b, (start, end)) in edges.iter().enumerate() {
        for slot in &mut lut[*start..*end] {
            *slot = b;
        }
    }
    lut
}
