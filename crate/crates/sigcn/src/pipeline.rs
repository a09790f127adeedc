//! End-to-end composition: activation maps → graph reasoning per
//! branch → instance association → decoder, plus the toy training loop
//! and batch evaluation.
//!
//! The graph/association stages carry no learnable parameters — they
//! are fixed functions of the episode — so the training loop computes
//! them once and rebuilds only the decoder tape per step. The ablated
//! variant (for mechanism comparisons) feeds the decoder the raw query
//! features instead of the reasoned instances; both variants see
//! exactly the same channel layout.

use std::path::PathBuf;

use crate::config::Config;
use crate::episodes::{load_episode, Episode, Mask};
use crate::error::{Error, Result};
use crate::head::{self, DecoderParams, MetricsReport};
use crate::ia;
use crate::matching::{pixel_activation, region_activation};
use crate::rng::SplitMix64;
use crate::sigr;
use crate::tape::{Tape, TensorId};
use crate::tensor::Tensor;

/// The four activation maps, each `[H,W]` in `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Maps {
    pub mid_pixel: Tensor,
    pub mid_region: Tensor,
    pub high_pixel: Tensor,
    pub high_region: Tensor,
}

impl Maps {
    /// (name, map) pairs in decoder concat order.
    pub fn named(&self) -> [(&'static str, &Tensor); 4] {
        [
            ("map_mid_pixel", &self.mid_pixel),
            ("map_mid_region", &self.mid_region),
            ("map_high_pixel", &self.high_pixel),
            ("map_high_region", &self.high_region),
        ]
    }
}

pub fn compute_maps(ep: &Episode, cfg: &Config) -> Result<Maps> {
    let mid: Vec<(&Tensor, &Mask)> = ep
        .support
        .iter()
        .map(|s| (&s.feat_mid, &s.mask))
        .collect();
    let high: Vec<(&Tensor, &Mask)> = ep
        .support
        .iter()
        .map(|s| (&s.feat_high, &s.mask))
        .collect();
    Ok(Maps {
        mid_pixel: pixel_activation(&mid, &ep.query.feat_mid)?,
        mid_region: region_activation(&mid, &ep.query.feat_mid, cfg.region_grid)?,
        high_pixel: pixel_activation(&high, &ep.query.feat_high)?,
        high_region: region_activation(&high, &ep.query.feat_high, cfg.region_grid)?,
    })
}

/// Everything upstream of the decoder, evaluated to plain tensors.
///
/// The instances are standardized per channel before they reach the
/// decoder: the association products grow with the number of pooled
/// support positions and the graph branches leave channels at wildly
/// different scales, which would dwarf the `[0,1]` map channels and
/// destabilize SGD on the decoder. The ablated variant gets the same
/// treatment so the two are comparable.
#[derive(Debug, Clone)]
pub struct FrontEnd {
    pub maps: Maps,
    /// First decoder instance: ṽq0, or the raw mid-level query
    /// features in the ablated variant; channel-standardized.
    pub inst0: Tensor,
    /// Second decoder instance: ṽq1 or the raw high-level features;
    /// channel-standardized.
    pub inst1: Tensor,
}

/// Shift and scale each channel plane to zero mean and unit variance.
/// Constant channels (for instance fully gated ones) come out as zeros.
fn standardize_channels(t: &Tensor) -> Tensor {
    let d = t.dims();
    let (c, hw) = (d[0], d[1] * d[2]);
    let mut out = t.data().to_vec();
    for ci in 0..c {
        let plane = &mut out[ci * hw..(ci + 1) * hw];
        let mean = plane.iter().sum::<f64>() / hw as f64;
        let var = plane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / hw as f64;
        let inv = 1.0 / var.sqrt().max(1e-6);
        for v in plane.iter_mut() {
            *v = (*v - mean) * inv;
        }
    }
    Tensor::new(d.to_vec(), out).expect("dims unchanged")
}

/// Run matching, graph reasoning and association for an episode. With
/// `ablated` the reasoning stages are skipped entirely and the raw
/// query features stand in for the instances.
pub fn front_end(ep: &Episode, cfg: &Config, ablated: bool) -> Result<FrontEnd> {
    let maps = compute_maps(ep, cfg)?;
    if ablated {
        return Ok(FrontEnd {
            maps,
            inst0: standardize_channels(&ep.query.feat_mid),
            inst1: standardize_channels(&ep.query.feat_high),
        });
    }
    let mid: Vec<(&Tensor, &Mask)> = ep
        .support
        .iter()
        .map(|s| (&s.feat_mid, &s.mask))
        .collect();
    let high: Vec<(&Tensor, &Mask)> = ep
        .support
        .iter()
        .map(|s| (&s.feat_high, &s.mask))
        .collect();
    let mut tape = Tape::new();
    let vq0 = sigr::run_branch(
        &mut tape,
        &ep.query.feat_mid,
        &maps.mid_region,
        &mid,
        cfg.t,
        cfg.k,
    )?;
    let vq1 = sigr::run_branch(
        &mut tape,
        &ep.query.feat_high,
        &maps.high_region,
        &high,
        cfg.t,
        cfg.k,
    )?;
    // The support instance comes from the mid-level features, the same
    // level that feeds the first query instance.
    let vs_plain = ia::support_instance(&mid, cfg.s)?;
    let vs = tape.constant(vs_plain);
    let (t0, t1) = ia::associate(&mut tape, vq0, vq1, vs, cfg.alpha, cfg.beta)?;
    Ok(FrontEnd {
        maps,
        inst0: standardize_channels(tape.value(t0)?),
        inst1: standardize_channels(tape.value(t1)?),
    })
}

/// One full inference result.
#[derive(Debug, Clone)]
pub struct InferOutput {
    pub maps: Maps,
    /// Logit plane `[H,W]`.
    pub logits: Tensor,
    /// Probability plane `[H,W]`.
    pub prob: Tensor,
    pub mask: Mask,
}

/// The six decoder input tensors in concat order: the two instances,
/// then the four maps as single-channel planes.
pub fn decoder_inputs(fe: &FrontEnd) -> Result<Vec<Tensor>> {
    let d = fe.inst0.dims().to_vec();
    let (h, w) = (d[1], d[2]);
    let mut inputs = vec![fe.inst0.clone(), fe.inst1.clone()];
    for (_, m) in fe.maps.named() {
        inputs.push(m.reshape(vec![1, h, w])?);
    }
    Ok(inputs)
}

/// Push the decoder inputs onto a tape as constants.
fn decoder_parts(tape: &mut Tape, fe: &FrontEnd) -> Result<Vec<TensorId>> {
    Ok(decoder_inputs(fe)?
        .into_iter()
        .map(|t| tape.constant(t))
        .collect())
}

/// Decode an already-computed front end with the given parameters.
pub fn decode_front(fe: &FrontEnd, cfg: &Config, params: &DecoderParams) -> Result<InferOutput> {
    let d = fe.inst0.dims().to_vec();
    let (h, w) = (d[1], d[2]);
    let mut tape = Tape::new();
    let parts = decoder_parts(&mut tape, fe)?;
    let ids = params.register(&mut tape, false);
    let (logits, prob) = head::decode(&mut tape, &parts, &ids, &cfg.aspp_rates, h, w)?;
    let prob_plane = tape.value(prob)?.reshape(vec![h, w])?;
    let logits_plane = tape.value(logits)?.reshape(vec![h, w])?;
    let mask = head::threshold(&prob_plane)?;
    Ok(InferOutput {
        maps: fe.maps.clone(),
        logits: logits_plane,
        prob: prob_plane,
        mask,
    })
}

/// Full pipeline with decoder parameters freshly initialized from the
/// config seed.
pub fn infer(ep: &Episode, cfg: &Config, params: &DecoderParams) -> Result<InferOutput> {
    let fe = front_end(ep, cfg, false)?;
    decode_front(&fe, cfg, params)
}

/// Seeded decoder parameters for an episode's channel count.
pub fn seeded_params(ep: &Episode, cfg: &Config, zero_output: bool) -> DecoderParams {
    let (c, _, _) = ep.dims();
    let mut rng = SplitMix64::new(cfg.seed).fork(0xDEC0DE);
    DecoderParams::init(c, &cfg.aspp_rates, &mut rng, zero_output)
}

#[derive(Debug)]
pub struct OverfitResult {
    /// Loss before each step, then the final loss: `steps + 1` values.
    pub losses: Vec<f64>,
    pub params: DecoderParams,
    pub output: InferOutput,
    /// Foreground IoU of the final mask against the query ground truth.
    pub iou: f64,
}

/// Train the decoder on this single episode's query against its own
/// ground truth — a capacity/gradient sanity harness, not a benchmark.
/// The front end is computed once; each step rebuilds only the decoder
/// tape. The output conv starts at zero, so the first loss is ln 2.
pub fn overfit(
    ep: &Episode,
    cfg: &Config,
    steps: usize,
    lr: f64,
    ablated: bool,
) -> Result<OverfitResult> {
    if !(lr > 0.0) {
        return Err(Error::Config(format!("lr must be > 0, got {lr}")));
    }
    let gt = ep
        .query
        .mask
        .as_ref()
        .ok_or_else(|| Error::Input("training needs a query ground-truth mask".into()))?;
    let (_, h, w) = ep.dims();
    let fe = front_end(ep, cfg, ablated)?;
    let mut params = seeded_params(ep, cfg, true);
    let gt_plane = gt.tensor().reshape(vec![1, h, w])?;

    let mut losses = Vec::with_capacity(steps + 1);
    for _ in 0..steps {
        let mut tape = Tape::new();
        let parts = decoder_parts(&mut tape, &fe)?;
        let ids = params.register(&mut tape, true);
        let (_, prob) = head::decode(&mut tape, &parts, &ids, &cfg.aspp_rates, h, w)?;
        let y = tape.constant(gt_plane.clone());
        let loss = head::bce(&mut tape, prob, y)?;
        losses.push(tape.value(loss)?.item()?);
        let grads = tape.backward(loss)?;
        params.apply_sgd(&ids, &grads, lr)?;
    }

    let output = decode_front(&fe, cfg, &params)?;
    let final_loss = {
        let mut tape = Tape::new();
        let p = tape.constant(output.prob.reshape(vec![1, h, w])?);
        let y = tape.constant(gt_plane);
        let loss = head::bce(&mut tape, p, y)?;
        tape.value(loss)?.item()?
    };
    losses.push(final_loss);
    let iou = head::foreground_iou(&output.mask, gt)?;
    Ok(OverfitResult {
        losses,
        params,
        output,
        iou,
    })
}

#[derive(Debug)]
pub struct EvalOutcome {
    pub report: MetricsReport,
    pub episodes: usize,
}

/// Batch evaluation over episode manifests. With `steps > 0` the
/// decoder is overfit per episode before predicting; with `oracle` the
/// ground truth itself is used as the prediction (metrics plumbing
/// check). Every episode needs a ground-truth query mask.
pub fn evaluate(
    manifests: &[PathBuf],
    cfg: &Config,
    steps: usize,
    oracle: bool,
) -> Result<EvalOutcome> {
    if manifests.is_empty() {
        return Err(Error::Input("evaluation needs at least one manifest".into()));
    }
    let mut preds = Vec::new();
    let mut gts = Vec::new();
    let mut classes = Vec::new();
    for path in manifests {
        let ep = load_episode(path)?;
        let gt = ep.query.mask.clone().ok_or_else(|| {
            Error::Input(format!("{}: query has no ground-truth mask", path.display()))
        })?;
        let pred = if oracle {
            gt.clone()
        } else if steps > 0 {
            overfit(&ep, cfg, steps, cfg.lr, false)?.output.mask
        } else {
            let params = seeded_params(&ep, cfg, true);
            infer(&ep, cfg, &params)?.mask
        };
        preds.push(pred);
        gts.push(gt);
        classes.push(ep.class_id);
    }
    let report = head::miou(&preds, &gts, &classes)?;
    Ok(EvalOutcome {
        episodes: preds.len(),
        report,
    })
}
