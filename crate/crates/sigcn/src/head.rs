//! Decoder, BCE objective, thresholding, SGD, and the IoU metrics.
//!
//! The decoder concatenates the two query instances with the four
//! activation maps, reduces to C channels, runs a small dilated
//! pyramid (three 3×3 branches plus a pointwise one, fused 1×1), three
//! residual 3×3 blocks, a 1×1 output conv to a single logit plane,
//! bilinear upsampling, and a sigmoid. The only learnable parameters
//! in the whole pipeline live here.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::episodes::Mask;
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tape::{Gradients, Tape, TensorId};
use crate::tensor::Tensor;

/// Probability clamp used by the loss so the logs stay finite.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams {
    pub reduce: (Tensor, Tensor),
    /// One (weight, bias) per pyramid branch: a 3×3 conv per dilation
    /// rate, then the pointwise branch last.
    pub aspp: Vec<(Tensor, Tensor)>,
    pub fuse: (Tensor, Tensor),
    pub res: Vec<(Tensor, Tensor)>,
    pub out: (Tensor, Tensor),
}

impl DecoderParams {
    /// Seeded init: weights uniform in ±√(6/fan_in), biases zero.
    /// `zero_output` additionally zeroes the output conv so the first
    /// prediction is exactly 0.5 everywhere (loss ln 2).
    pub fn init(
        channels: usize,
        aspp_rates: &[usize],
        rng: &mut SplitMix64,
        zero_output: bool,
    ) -> DecoderParams {
        let c = channels;
        let conv = |rng: &mut SplitMix64, c_out: usize, c_in: usize, k: usize| {
            let a = (6.0 / (c_in * k * k) as f64).sqrt();
            let w = Tensor::from_fn(vec![c_out, c_in, k, k], |_| rng.uniform(-a, a));
            (w, Tensor::zeros(vec![c_out]))
        };
        let reduce = conv(rng, c, 2 * c + 4, 1);
        let mut aspp = Vec::new();
        for _ in aspp_rates {
            aspp.push(conv(rng, c, c, 3));
        }
        aspp.push(conv(rng, c, c, 1));
        let fuse = conv(rng, c, c * aspp.len(), 1);
        let res = (0..3).map(|_| conv(rng, c, c, 3)).collect();
        let mut out = conv(rng, 1, c, 1);
        if zero_output {
            out.0 = Tensor::zeros(out.0.dims().to_vec());
        }
        DecoderParams {
            reduce,
            aspp,
            fuse,
            res,
            out,
        }
    }

    /// All-zero parameters of the same layout (useful as a neutral
    /// network: logits identically zero).
    pub fn zeros(channels: usize, aspp_rates: &[usize]) -> DecoderParams {
        let mut rng = SplitMix64::new(0);
        let mut p = DecoderParams::init(channels, aspp_rates, &mut rng, true);
        let zero = |w: &mut Tensor| *w = Tensor::zeros(w.dims().to_vec());
        zero(&mut p.reduce.0);
        for (w, _) in &mut p.aspp {
            zero(w);
        }
        zero(&mut p.fuse.0);
        for (w, _) in &mut p.res {
            zero(w);
        }
        zero(&mut p.out.0);
        p
    }

    fn pairs(&self) -> Vec<&(Tensor, Tensor)> {
        let mut v = vec![&self.reduce];
        v.extend(self.aspp.iter());
        v.push(&self.fuse);
        v.extend(self.res.iter());
        v.push(&self.out);
        v
    }

    /// Put every parameter on the tape, as leaves when training.
    pub fn register(&self, tape: &mut Tape, differentiable: bool) -> DecoderIds {
        let mut put = |t: &Tensor| {
            if differentiable {
                tape.leaf(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        DecoderIds {
            reduce: (put(&self.reduce.0), put(&self.reduce.1)),
            aspp: self.aspp.iter().map(|(w, b)| (put(w), put(b))).collect(),
            fuse: (put(&self.fuse.0), put(&self.fuse.1)),
            res: self.res.iter().map(|(w, b)| (put(w), put(b))).collect(),
            out: (put(&self.out.0), put(&self.out.1)),
        }
    }

    /// One SGD update from the gradients of a backward pass over the
    /// ids returned by [`DecoderParams::register`].
    pub fn apply_sgd(&mut self, ids: &DecoderIds, grads: &Gradients, lr: f64) -> Result<()> {
        let step = |param: &mut Tensor, id: TensorId| -> Result<()> {
            *param = sgd_step(param, &grads.wrt(id)?, lr)?;
            Ok(())
        };
        step(&mut self.reduce.0, ids.reduce.0)?;
        step(&mut self.reduce.1, ids.reduce.1)?;
        for ((w, b), (wi, bi)) in self.aspp.iter_mut().zip(&ids.aspp) {
            step(w, *wi)?;
            step(b, *bi)?;
        }
        step(&mut self.fuse.0, ids.fuse.0)?;
        step(&mut self.fuse.1, ids.fuse.1)?;
        for ((w, b), (wi, bi)) in self.res.iter_mut().zip(&ids.res) {
            step(w, *wi)?;
            step(b, *bi)?;
        }
        step(&mut self.out.0, ids.out.0)?;
        step(&mut self.out.1, ids.out.1)?;
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.pairs()
            .iter()
            .all(|(w, b)| w.all_finite() && b.all_finite())
    }
}

/// Tape handles of one registered parameter set.
pub struct DecoderIds {
    pub reduce: (TensorId, TensorId),
    pub aspp: Vec<(TensorId, TensorId)>,
    pub fuse: (TensorId, TensorId),
    pub res: Vec<(TensorId, TensorId)>,
    pub out: (TensorId, TensorId),
}

/// p ← p − lr·g.
pub fn sgd_step(param: &Tensor, grad: &Tensor, lr: f64) -> Result<Tensor> {
    param.add(&grad.scale(-lr))
}

/// Run the decoder on the concatenated parts (two instances plus four
/// maps, in that order) and upsample the logit plane to
/// (out_h, out_w). Returns (logits, probabilities).
pub fn decode(
    tape: &mut Tape,
    parts: &[TensorId],
    ids: &DecoderIds,
    aspp_rates: &[usize],
    out_h: usize,
    out_w: usize,
) -> Result<(TensorId, TensorId)> {
    if ids.aspp.len() != aspp_rates.len() + 1 {
        return Err(Error::Shape(format!(
            "{} pyramid branches registered for {} rates",
            ids.aspp.len(),
            aspp_rates.len()
        )));
    }
    let x = tape.concat_channels(parts)?;
    let d = tape.value(x)?.dims().to_vec();
    let (h, w) = (d[1], d[2]);
    if out_h < h || out_w < w {
        return Err(Error::Shape(format!(
            "output size {out_h}x{out_w} smaller than feature size {h}x{w}"
        )));
    }

    let conv = |tape: &mut Tape, x, (w, b): (TensorId, TensorId), pad, dil| -> Result<TensorId> {
        let c = tape.conv2d(x, w, pad, dil)?;
        tape.bias_add(c, b)
    };

    let x = conv(tape, x, ids.reduce, 0, 1)?;
    let x = tape.relu(x)?;

    let mut branches = Vec::new();
    for (i, &pair) in ids.aspp.iter().enumerate() {
        let b = match aspp_rates.get(i) {
            Some(&rate) => conv(tape, x, pair, rate, rate)?,
            None => conv(tape, x, pair, 0, 1)?,
        };
        branches.push(b);
    }
    let cat = tape.concat_channels(&branches)?;
    let x = conv(tape, cat, ids.fuse, 0, 1)?;
    let mut x = tape.relu(x)?;

    for &pair in &ids.res {
        let y = conv(tape, x, pair, 1, 1)?;
        let y = tape.relu(y)?;
        x = tape.add(x, y)?;
    }

    let logits = conv(tape, x, ids.out, 0, 1)?;
    let logits = tape.bilinear_resize(logits, out_h, out_w)?;
    let prob = tape.sigmoid(logits)?;
    Ok((logits, prob))
}

/// Mean binary cross-entropy between a probability map and a 0/1
/// target of the same dims, probabilities clamped away from {0,1}.
pub fn bce(tape: &mut Tape, prob: TensorId, target: TensorId) -> Result<TensorId> {
    if tape.value(prob)?.dims() != tape.value(target)?.dims() {
        return Err(Error::Shape(format!(
            "probabilities {:?} vs target {:?}",
            tape.value(prob)?.dims(),
            tape.value(target)?.dims()
        )));
    }
    let p = tape.clamp(prob, BCE_EPS, 1.0 - BCE_EPS)?;
    let ln_p = tape.ln(p)?;
    let one_minus_p = tape.affine(p, -1.0, 1.0)?;
    let ln_np = tape.ln(one_minus_p)?;
    let pos = tape.mul(target, ln_p)?;
    let neg_target = tape.affine(target, -1.0, 1.0)?;
    let neg = tape.mul(neg_target, ln_np)?;
    let sum = tape.add(pos, neg)?;
    let mean = tape.mean_all(sum)?;
    tape.affine(mean, -1.0, 0.0)
}

/// Binarize a probability plane (`[H,W]` or `[1,H,W]`) at 0.5.
pub fn threshold(prob: &Tensor) -> Result<Mask> {
    let (h, w) = match prob.dims() {
        [h, w] => (*h, *w),
        [1, h, w] => (*h, *w),
        d => {
            return Err(Error::Shape(format!(
                "thresholding needs one probability plane, got {d:?}"
            )))
        }
    };
    let on: Vec<bool> = prob.data().iter().map(|&p| p > 0.5).collect();
    Mask::from_bools(h, w, &on)
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub miou_per_class: BTreeMap<String, f64>,
    pub miou_mean: f64,
    pub fb_iou: f64,
}

/// Class-wise mean IoU: intersections and unions are aggregated over
/// all episodes of a class before dividing, then class scores are
/// averaged. An empty union scores 1.
pub fn miou(preds: &[Mask], gts: &[Mask], class_ids: &[u32]) -> Result<MetricsReport> {
    if preds.len() != gts.len() || preds.len() != class_ids.len() {
        return Err(Error::Input(format!(
            "{} predictions, {} ground truths, {} class ids",
            preds.len(),
            gts.len(),
            class_ids.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Input("metrics need at least one episode".into()));
    }
    let mut per_class: BTreeMap<u32, (u64, u64)> = BTreeMap::new();
    let mut fg = (0u64, 0u64);
    let mut bg = (0u64, 0u64);
    for ((p, g), &cid) in preds.iter().zip(gts).zip(class_ids) {
        let (i, u, bi, bu) = counts(p, g)?;
        let slot = per_class.entry(cid).or_insert((0, 0));
        slot.0 += i;
        slot.1 += u;
        fg.0 += i;
        fg.1 += u;
        bg.0 += bi;
        bg.1 += bu;
    }
    let iou = |(i, u): (u64, u64)| if u == 0 { 1.0 } else { i as f64 / u as f64 };
    let miou_per_class: BTreeMap<String, f64> = per_class
        .iter()
        .map(|(cid, &acc)| (cid.to_string(), iou(acc)))
        .collect();
    let miou_mean =
        miou_per_class.values().sum::<f64>() / miou_per_class.len() as f64;
    let fb_iou = 0.5 * (iou(fg) + iou(bg));
    Ok(MetricsReport {
        miou_per_class,
        miou_mean,
        fb_iou,
    })
}

/// Foreground-background IoU alone (both classes aggregated over all
/// episodes, then averaged).
pub fn fb_iou(preds: &[Mask], gts: &[Mask]) -> Result<f64> {
    let ids = vec![0u32; preds.len()];
    Ok(miou(preds, gts, &ids)?.fb_iou)
}

/// Foreground IoU of a single prediction; an empty union (both masks
/// empty) scores 1.
pub fn foreground_iou(pred: &Mask, gt: &Mask) -> Result<f64> {
    let (i, u, _, _) = counts(pred, gt)?;
    Ok(if u == 0 { 1.0 } else { i as f64 / u as f64 })
}

/// (fg intersection, fg union, bg intersection, bg union).
fn counts(p: &Mask, g: &Mask) -> Result<(u64, u64, u64, u64)> {
    if (p.height(), p.width()) != (g.height(), g.width()) {
        return Err(Error::Shape(format!(
            "prediction {}x{} vs ground truth {}x{}",
            p.height(),
            p.width(),
            g.height(),
            g.width()
        )));
    }
    let mut out = (0u64, 0u64, 0u64, 0u64);
    for idx in 0..p.height() * p.width() {
        let (a, b) = (p.is_fg(idx), g.is_fg(idx));
        out.0 += (a && b) as u64;
        out.1 += (a || b) as u64;
        out.2 += (!a && !b) as u64;
        out.3 += (!a || !b) as u64;
    }
    Ok(out)
}
