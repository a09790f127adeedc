//! Central finite-difference verification of every differentiable op
//! and of the full episode loss with respect to the decoder
//! parameters.
//!
//! Each op is wrapped into a scalar loss (a randomly weighted sum of
//! its output) and its analytic gradients are compared elementwise
//! against central differences taken at h = 1e-4 and 2h, combined by
//! Richardson extrapolation. Entries where both gradients are below
//! 1e-8 are not compared. Two situations make a difference quotient
//! meaningless and are skipped rather than scored: ReLU and clamp make
//! the loss only piecewise smooth, so every evaluation reports which
//! side of its kink each such unit sits on and probes landing on a
//! different linear piece than the base point are rejected; and where
//! the two step sizes disagree, the quotient has not converged (the
//! log loss's curvature grows without bound toward the probability
//! clamp), so the entry is uninformative either way.
//!
//! Test points are also chosen so the comparison stays within f64
//! resolution: the episode case redraws its random decoder until no
//! output probability saturates, since a pixel pinned against 0 or 1
//! moves by less than one ulp under the probes and silently drops out
//! of every difference quotient while the analytic gradient keeps its
//! contribution.

use crate::config::Config;
use crate::episodes::{generate_episode, GeneratorConfig};
use crate::error::Result;
use crate::head::{self, DecoderIds, DecoderParams};
use crate::ia;
use crate::pipeline;
use crate::rng::SplitMix64;
use crate::sigr;
use crate::tape::{Tape, TensorId};
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-4;
pub const DEFAULT_TOL: f64 = 1e-4;
/// Entries where both gradients are this small are not compared.
const SKIP_BELOW: f64 = 1e-8;
const INSTANCES: usize = 20;

#[derive(Debug, Clone)]
pub struct OpReport {
    pub name: &'static str,
    pub instances: usize,
    /// Gradient entries actually compared.
    pub checked: usize,
    /// Entries dropped because a probe crossed a ReLU/clamp kink.
    pub skipped: usize,
    pub max_rel_err: f64,
}

impl OpReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_err <= tol
    }
}

/// One evaluation of a case's loss at given leaf values.
struct Eval {
    loss: f64,
    /// Analytic gradients per leaf; empty unless requested.
    grads: Vec<Tensor>,
    /// Kink-side pattern of this evaluation (see `Tape::kink_pattern`).
    kinks: Vec<bool>,
}

/// One check instance: initial leaf values plus a closure that maps
/// leaf values to the loss (and, on request, its analytic gradients).
struct Case {
    leaves: Vec<Tensor>,
    eval: Box<dyn Fn(&[Tensor], bool) -> Result<Eval>>,
}

/// Run the whole suite. Returns one report per op; `bool` is the
/// overall verdict at tolerance `tol`.
pub fn run(seed: u64, tol: f64) -> Result<(Vec<OpReport>, bool)> {
    let ops: Vec<(&'static str, Box<dyn Fn(&mut SplitMix64) -> Result<Case>>)> = vec![
        ("add", Box::new(case_add)),
        ("mul", Box::new(case_mul)),
        ("affine", Box::new(case_affine)),
        ("matmul", Box::new(case_matmul)),
        ("relu", Box::new(case_relu)),
        ("sigmoid", Box::new(case_sigmoid)),
        ("ln", Box::new(case_ln)),
        ("clamp", Box::new(case_clamp)),
        ("transpose", Box::new(case_transpose)),
        ("reshape", Box::new(case_reshape)),
        ("concat_channels", Box::new(case_concat)),
        ("mean_pool", Box::new(case_mean_pool)),
        ("mean_all", Box::new(case_mean_all)),
        ("sum_all", Box::new(case_sum_all)),
        ("bilinear_resize", Box::new(case_resize)),
        ("conv2d", Box::new(case_conv2d)),
        ("bias_add", Box::new(case_bias_add)),
        ("node_conv1d", Box::new(case_node_conv)),
        ("graph_layer", Box::new(case_graph_layer)),
        ("associate", Box::new(case_associate)),
        ("bce", Box::new(case_bce)),
        ("episode_loss", Box::new(case_episode_loss)),
    ];
    let mut reports = Vec::new();
    let mut all_ok = true;
    for (idx, (name, build)) in ops.iter().enumerate() {
        let mut rng = SplitMix64::new(seed).fork(idx as u64);
        let mut max_rel = 0.0f64;
        let mut checked = 0usize;
        let mut skipped = 0usize;
        for _ in 0..INSTANCES {
            let case = build(&mut rng)?;
            let outcome = check_case(&case)?;
            max_rel = max_rel.max(outcome.max_rel_err);
            checked += outcome.checked;
            skipped += outcome.skipped;
        }
        let report = OpReport {
            name,
            instances: INSTANCES,
            checked,
            skipped,
            max_rel_err: max_rel,
        };
        all_ok &= report.passed(tol);
        reports.push(report);
    }
    Ok((reports, all_ok))
}

struct CaseOutcome {
    max_rel_err: f64,
    checked: usize,
    skipped: usize,
}

/// Compare analytic and finite-difference gradients over every leaf
/// entry of one case.
fn check_case(case: &Case) -> Result<CaseOutcome> {
    let base = (case.eval)(&case.leaves, true)?;
    let mut max_rel = 0.0f64;
    let mut checked = 0usize;
    let mut skipped = 0usize;
    let mut work = case.leaves.clone();
    for (li, leaf) in case.leaves.iter().enumerate() {
        for j in 0..leaf.len() {
            let x = leaf.data()[j];
            let mut probe = |offset: f64| -> Result<Option<f64>> {
                work[li] = bump(leaf, j, x + offset);
                let eval = (case.eval)(&work, false)?;
                Ok((eval.kinks == base.kinks).then_some(eval.loss))
            };
            // Central differences at two step sizes. Probes that land
            // on a different linear piece than the base invalidate the
            // entry.
            let losses = [
                probe(FD_STEP)?,
                probe(-FD_STEP)?,
                probe(2.0 * FD_STEP)?,
                probe(-2.0 * FD_STEP)?,
            ];
            work[li] = leaf.clone();
            let [p1, m1, p2, m2] = match losses {
                [Some(p1), Some(m1), Some(p2), Some(m2)] => [p1, m1, p2, m2],
                _ => {
                    skipped += 1;
                    continue;
                }
            };
            let d1 = (p1 - m1) / (2.0 * FD_STEP);
            let d2 = (p2 - m2) / (4.0 * FD_STEP);
            let ga = base.grads[li].data()[j];
            // Richardson extrapolation cancels the quadratic truncation
            // term; where the two step sizes still disagree the
            // difference quotient has not converged (e.g. log-loss
            // curvature blowing up near the probability clamp) and the
            // entry says nothing about the analytic gradient.
            let fd = (4.0 * d1 - d2) / 3.0;
            let denom = ga.abs().max(fd.abs());
            if denom <= SKIP_BELOW {
                continue;
            }
            if (d1 - d2).abs() > 0.05 * DEFAULT_TOL * d1.abs().max(ga.abs()) {
                skipped += 1;
                continue;
            }
            max_rel = max_rel.max((ga - fd).abs() / denom);
            checked += 1;
        }
    }
    Ok(CaseOutcome {
        max_rel_err: max_rel,
        checked,
        skipped,
    })
}

fn bump(t: &Tensor, j: usize, value: f64) -> Tensor {
    let mut data = t.data().to_vec();
    data[j] = value;
    Tensor::new(t.dims().to_vec(), data).expect("same dims")
}

fn rand_tensor(rng: &mut SplitMix64, dims: Vec<usize>, lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(dims, |_| rng.uniform(lo, hi))
}

/// Values in ±[0.1, 1.5]: random sign, magnitude clear of zero.
fn rand_off_zero(rng: &mut SplitMix64, dims: Vec<usize>) -> Tensor {
    Tensor::from_fn(dims, |_| {
        let sign = if rng.next_f64() < 0.5 { -1.0 } else { 1.0 };
        sign * rng.uniform(0.1, 1.5)
    })
}

fn small(rng: &mut SplitMix64) -> usize {
    2 + rng.below(3)
}

/// Wrap a tape-building closure into a weighted-sum-loss case. The
/// builder receives the tape and the leaf ids and returns the op
/// output to be weighted.
fn weighted_case(
    leaves: Vec<Tensor>,
    weight: Tensor,
    op: impl Fn(&mut Tape, &[TensorId]) -> Result<TensorId> + 'static,
) -> Case {
    let eval = move |vals: &[Tensor], want_grads: bool| -> Result<Eval> {
        let mut tape = Tape::new();
        let ids: Vec<TensorId> = vals.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = op(&mut tape, &ids)?;
        let w = tape.constant(weight.clone());
        let prod = tape.mul(out, w)?;
        let loss = tape.sum_all(prod)?;
        finish(&mut tape, loss, &ids, want_grads)
    };
    Case {
        leaves,
        eval: Box::new(eval),
    }
}

/// Read the loss value, kink pattern, and (on request) the gradients
/// of `ids` off a finished tape.
fn finish(tape: &mut Tape, loss: TensorId, ids: &[TensorId], want_grads: bool) -> Result<Eval> {
    let value = tape.value(loss)?.item()?;
    let kinks = tape.kink_pattern();
    let grads = if want_grads {
        let g = tape.backward(loss)?;
        ids.iter().map(|&id| g.wrt(id)).collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    Ok(Eval {
        loss: value,
        grads,
        kinks,
    })
}

fn case_add(rng: &mut SplitMix64) -> Result<Case> {
    let (m, n) = (small(rng), small(rng));
    let a = rand_tensor(rng, vec![m, n], -2.0, 2.0);
    let b = rand_tensor(rng, vec![m, n], -2.0, 2.0);
    let w = rand_tensor(rng, vec![m, n], -1.0, 1.0);
    Ok(weighted_case(vec![a, b], w, |t, ids| t.add(ids[0], ids[1])))
}

fn case_mul(rng: &mut SplitMix64) -> Result<Case> {
    let (m, n) = (small(rng), small(rng));
    let a = rand_tensor(rng, vec![m, n], -2.0, 2.0);
    let b = rand_tensor(rng, vec![m, n], -2.0, 2.0);
    let w = rand_tensor(rng, vec![m, n], -1.0, 1.0);
    Ok(weighted_case(vec![a, b], w, |t, ids| t.mul(ids[0], ids[1])))
}

fn case_affine(rng: &mut SplitMix64) -> Result<Case> {
    let (m, n) = (small(rng), small(rng));
    let x = rand_tensor(rng, vec![m, n], -2.0, 2.0);
    let w = rand_tensor(rng, vec![m, n], -1.0, 1.0);
    let scale = rng.uniform(-2.0, 2.0);
    let shift = rng.uniform(-1.0, 1.0);
    Ok(weighted_case(vec![x], w, move |t, ids| {
        t.affine(ids[0], scale, shift)
    }))
}

fn case_matmul(rng: &mut SplitMix64) -> Result<Case> {
    let (m, k, n) = (small(rng), small(rng), small(rng));
    let a = rand_tensor(rng, vec![m, k], -1.5, 1.5);
    let b = rand_tensor(rng, vec![k, n], -1.5, 1.5);
    let w = rand_tensor(rng, vec![m, n], -1.0, 1.0);
    Ok(weighted_case(vec![a, b], w, |t, ids| {
        t.matmul(ids[0], ids[1])
    }))
}

fn case_relu(rng: &mut SplitMix64) -> Result<Case> {
    let (m, n) = (small(rng), small(rng));
    let x = rand_off_zero(rng, vec![m, n]);
    let w = rand_tensor(rng, vec![m, n], -1.0, 1.0);
    Ok(weighted_case(vec![x], w, |t, ids| t.relu(ids[0])))
}

fn case_sigmoid(rng: &mut SplitMix64) -> Result<Case> {
    let (m, n) = (small(rng), small(rng));
    let x = rand_tensor(rng, vec![m, n], -3.0, 3.0);
    let w = rand_tensor(rng, vec![m, n], -1.0, 1.0);
    Ok(weighted_case(vec![x], w, |t, ids| t.sigmoid(ids[0])))
}

fn case_ln(rng: &mut SplitMix64) -> Result<Case> {
    let (m, n) = (small(rng), small(rng));
    let x = rand_tensor(rng, vec![m, n], 0.2, 2.0);
    let w = rand_tensor(rng, vec![m, n], -1.0, 1.0);
    Ok(weighted_case(vec![x], w, |t, ids| t.ln(ids[0])))
}

fn case_clamp(rng: &mut SplitMix64) -> Result<Case> {
    let (m, n) = (small(rng), small(rng));
    let x = rand_tensor(rng, vec![m, n], -1.5, 1.5);
    let w = rand_tensor(rng, vec![m, n], -1.0, 1.0);
    Ok(weighted_case(vec![x], w, |t, ids| t.clamp(ids[0], -0.8, 0.8)))
}

fn case_transpose(rng: &mut SplitMix64) -> Result<Case> {
    let (m, n) = (small(rng), 1 + small(rng));
    let x = rand_tensor(rng, vec![m, n], -2.0, 2.0);
    let w = rand_tensor(rng, vec![n, m], -1.0, 1.0);
    Ok(weighted_case(vec![x], w, |t, ids| t.transpose(ids[0])))
}

fn case_reshape(rng: &mut SplitMix64) -> Result<Case> {
    let (m, n) = (small(rng), small(rng));
    let x = rand_tensor(rng, vec![m, n], -2.0, 2.0);
    let w = rand_tensor(rng, vec![m * n], -1.0, 1.0);
    Ok(weighted_case(vec![x], w, move |t, ids| {
        let flat = t.value(ids[0])?.len();
        t.reshape(ids[0], vec![flat])
    }))
}

fn case_concat(rng: &mut SplitMix64) -> Result<Case> {
    let (h, w_dim) = (small(rng), small(rng));
    let (c1, c2) = (1 + rng.below(2), 1 + rng.below(2));
    let a = rand_tensor(rng, vec![c1, h, w_dim], -2.0, 2.0);
    let b = rand_tensor(rng, vec![c2, h, w_dim], -2.0, 2.0);
    let w = rand_tensor(rng, vec![c1 + c2, h, w_dim], -1.0, 1.0);
    Ok(weighted_case(vec![a, b], w, |t, ids| {
        t.concat_channels(&[ids[0], ids[1]])
    }))
}

fn case_mean_pool(rng: &mut SplitMix64) -> Result<Case> {
    let (c, h, w_dim) = (small(rng), small(rng), small(rng));
    let x = rand_tensor(rng, vec![c, h, w_dim], -2.0, 2.0);
    let w = rand_tensor(rng, vec![c], -1.0, 1.0);
    Ok(weighted_case(vec![x], w, |t, ids| t.mean_pool(ids[0])))
}

fn case_mean_all(rng: &mut SplitMix64) -> Result<Case> {
    let (m, n) = (small(rng), small(rng));
    let x = rand_tensor(rng, vec![m, n], -2.0, 2.0);
    let w = rand_tensor(rng, vec![1], -1.0, 1.0);
    Ok(weighted_case(vec![x], w, |t, ids| t.mean_all(ids[0])))
}

fn case_sum_all(rng: &mut SplitMix64) -> Result<Case> {
    let (m, n) = (small(rng), small(rng));
    let x = rand_tensor(rng, vec![m, n], -2.0, 2.0);
    let w = rand_tensor(rng, vec![1], -1.0, 1.0);
    Ok(weighted_case(vec![x], w, |t, ids| t.sum_all(ids[0])))
}

fn case_resize(rng: &mut SplitMix64) -> Result<Case> {
    let (c, h, w_dim) = (1 + rng.below(2), small(rng), small(rng));
    let (oh, ow) = (2 + rng.below(6), 2 + rng.below(6));
    let x = rand_tensor(rng, vec![c, h, w_dim], -2.0, 2.0);
    let w = rand_tensor(rng, vec![c, oh, ow], -1.0, 1.0);
    Ok(weighted_case(vec![x], w, move |t, ids| {
        t.bilinear_resize(ids[0], oh, ow)
    }))
}

fn case_conv2d(rng: &mut SplitMix64) -> Result<Case> {
    let (c_in, c_out) = (1 + rng.below(3), 1 + rng.below(3));
    let (h, w_dim) = (4 + rng.below(3), 4 + rng.below(3));
    let k = if rng.next_f64() < 0.5 { 1 } else { 3 };
    let dil = if k == 3 && rng.next_f64() < 0.5 { 2 } else { 1 };
    let pad = dil * (k - 1) / 2;
    let x = rand_tensor(rng, vec![c_in, h, w_dim], -1.5, 1.5);
    let wt = rand_tensor(rng, vec![c_out, c_in, k, k], -1.0, 1.0);
    let w = rand_tensor(rng, vec![c_out, h, w_dim], -1.0, 1.0);
    Ok(weighted_case(vec![x, wt], w, move |t, ids| {
        t.conv2d(ids[0], ids[1], pad, dil)
    }))
}

fn case_bias_add(rng: &mut SplitMix64) -> Result<Case> {
    let (c, h, w_dim) = (small(rng), small(rng), small(rng));
    let x = rand_tensor(rng, vec![c, h, w_dim], -2.0, 2.0);
    let b = rand_tensor(rng, vec![c], -1.0, 1.0);
    let w = rand_tensor(rng, vec![c, h, w_dim], -1.0, 1.0);
    Ok(weighted_case(vec![x, b], w, |t, ids| {
        t.bias_add(ids[0], ids[1])
    }))
}

fn case_node_conv(rng: &mut SplitMix64) -> Result<Case> {
    let (n, c) = (2 + rng.below(5), small(rng));
    let k = [1usize, 2, 3, 5][rng.below(4)];
    let x = rand_tensor(rng, vec![n, c], -1.5, 1.5);
    let kt = rand_tensor(rng, vec![k, c], -1.0, 1.0);
    let w = rand_tensor(rng, vec![n, c], -1.0, 1.0);
    Ok(weighted_case(vec![x, kt], w, |t, ids| {
        t.node_conv1d(ids[0], ids[1])
    }))
}

fn case_graph_layer(rng: &mut SplitMix64) -> Result<Case> {
    let (n, c) = (3 + rng.below(3), small(rng));
    let k = if rng.next_f64() < 0.5 { 1 } else { 3 };
    let x = rand_tensor(rng, vec![n, c], -1.5, 1.5);
    let a = rand_tensor(rng, vec![n, n], -1.0, 1.0);
    let theta = rand_tensor(rng, vec![k, c], -1.0, 1.0);
    let w = rand_tensor(rng, vec![n, c], -1.0, 1.0);
    Ok(weighted_case(vec![x, a, theta], w, |t, ids| {
        sigr::sigcn_layer(t, ids[0], ids[1], ids[2])
    }))
}

fn case_associate(rng: &mut SplitMix64) -> Result<Case> {
    let (c, h, w_dim, s) = (small(rng), small(rng), small(rng), 1 + rng.below(2));
    let alpha = rng.uniform(0.0, 1.0);
    let beta = rng.uniform(0.0, 1.0);
    let vq0 = rand_tensor(rng, vec![c, h, w_dim], -1.0, 1.0);
    let vq1 = rand_tensor(rng, vec![c, h, w_dim], -1.0, 1.0);
    let vs = rand_tensor(rng, vec![c, s, s], -1.0, 1.0);
    let w0 = rand_tensor(rng, vec![c, h, w_dim], -1.0, 1.0);
    let w1 = rand_tensor(rng, vec![c, h, w_dim], -1.0, 1.0);
    let eval = move |vals: &[Tensor], want_grads: bool| -> Result<Eval> {
        let mut tape = Tape::new();
        let ids: Vec<TensorId> = vals.iter().map(|t| tape.leaf(t.clone())).collect();
        let (t0, t1) = ia::associate(&mut tape, ids[0], ids[1], ids[2], alpha, beta)?;
        let w0c = tape.constant(w0.clone());
        let w1c = tape.constant(w1.clone());
        let p0 = tape.mul(t0, w0c)?;
        let p1 = tape.mul(t1, w1c)?;
        let s0 = tape.sum_all(p0)?;
        let s1 = tape.sum_all(p1)?;
        let loss = tape.add(s0, s1)?;
        finish(&mut tape, loss, &ids, want_grads)
    };
    Ok(Case {
        leaves: vec![vq0, vq1, vs],
        eval: Box::new(eval),
    })
}

fn case_bce(rng: &mut SplitMix64) -> Result<Case> {
    let (h, w_dim) = (small(rng), small(rng));
    let prob = rand_tensor(rng, vec![1, h, w_dim], 0.05, 0.95);
    let target = Tensor::from_fn(vec![1, h, w_dim], |_| rng.below(2) as f64);
    let eval = move |vals: &[Tensor], want_grads: bool| -> Result<Eval> {
        let mut tape = Tape::new();
        let p = tape.leaf(vals[0].clone());
        let y = tape.constant(target.clone());
        let loss = head::bce(&mut tape, p, y)?;
        finish(&mut tape, loss, &[p], want_grads)
    };
    Ok(Case {
        leaves: vec![prob],
        eval: Box::new(eval),
    })
}

/// Decoder parameters in a fixed flat order (weight, bias per layer).
fn flatten_params(p: &DecoderParams) -> Vec<Tensor> {
    let mut v = vec![p.reduce.0.clone(), p.reduce.1.clone()];
    for (w, b) in &p.aspp {
        v.push(w.clone());
        v.push(b.clone());
    }
    v.push(p.fuse.0.clone());
    v.push(p.fuse.1.clone());
    for (w, b) in &p.res {
        v.push(w.clone());
        v.push(b.clone());
    }
    v.push(p.out.0.clone());
    v.push(p.out.1.clone());
    v
}

/// Re-register a flat parameter list (in [`flatten_params`] order) as
/// tape leaves; returns the handles both as decoder ids and as the
/// flat list for gradient extraction.
fn ids_from_flat(
    tape: &mut Tape,
    vals: &[Tensor],
    aspp_branches: usize,
) -> (DecoderIds, Vec<TensorId>) {
    let flat: Vec<TensorId> = vals.iter().map(|t| tape.leaf(t.clone())).collect();
    let mut it = flat.iter().copied();
    let mut next = || it.next().expect("flat layout matches");
    let reduce = (next(), next());
    let aspp = (0..aspp_branches).map(|_| (next(), next())).collect();
    let fuse = (next(), next());
    let res = (0..3).map(|_| (next(), next())).collect();
    let out = (next(), next());
    (
        DecoderIds {
            reduce,
            aspp,
            fuse,
            res,
            out,
        },
        flat,
    )
}

/// Full pipeline loss w.r.t. every decoder parameter. The front end
/// carries no parameters, so it is computed once per instance; each
/// evaluation rebuilds only the decoder tape.
fn case_episode_loss(rng: &mut SplitMix64) -> Result<Case> {
    let cfg = Config {
        channels: 4,
        height: 8,
        width: 8,
        ..Config::default()
    };
    let gen = GeneratorConfig {
        channels: 4,
        height: 8,
        width: 8,
        ..GeneratorConfig::default()
    };
    let ep = generate_episode(rng.next_u64(), &gen)?;
    let fe = pipeline::front_end(&ep, &cfg, false)?;
    let rates = cfg.aspp_rates.clone();
    let branches = rates.len() + 1;
    let inputs = pipeline::decoder_inputs(&fe)?;

    // Redraw the random decoder until no base probability saturates.
    // A pixel stuck near 0 or 1 moves by less than one f64 ulp under
    // the probe steps, so finite differences cannot see its (real)
    // gradient contribution; the check is only meaningful at a test
    // point where every pixel's probability is resolvable.
    let mut params = None;
    for attempt in 0..64u64 {
        let mut prng = rng.fork(0x9A1 + attempt);
        let candidate = DecoderParams::init(4, &cfg.aspp_rates, &mut prng, false);
        let mut tape = Tape::new();
        let parts: Vec<TensorId> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let (ids, _) = ids_from_flat(&mut tape, &flatten_params(&candidate), branches);
        let (_, prob) = head::decode(&mut tape, &parts, &ids, &rates, 8, 8)?;
        let p = tape.value(prob)?.data();
        if p.iter().all(|&v| (1e-3..=1.0 - 1e-3).contains(&v)) {
            params = Some(candidate);
            break;
        }
    }
    let params = params.expect("a moderate random decoder exists");
    let gt = ep.query.mask.as_ref().expect("generator always adds a mask");
    let gt_plane = gt.tensor().reshape(vec![1, 8, 8])?;

    let eval = move |vals: &[Tensor], want_grads: bool| -> Result<Eval> {
        let mut tape = Tape::new();
        let parts: Vec<TensorId> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let (ids, flat) = ids_from_flat(&mut tape, vals, branches);
        let (_, prob) = head::decode(&mut tape, &parts, &ids, &rates, 8, 8)?;
        let y = tape.constant(gt_plane.clone());
        let loss = head::bce(&mut tape, prob, y)?;
        finish(&mut tape, loss, &flat, want_grads)
    };
    Ok(Case {
        leaves: flatten_params(&params),
        eval: Box::new(eval),
    })
}
