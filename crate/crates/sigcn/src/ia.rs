//! Instance association: a support instance feature is pooled from the
//! foreground, and the two query instances exchange context through
//! channel Gram matrices.
//!
//! With R(·) flattening spatial dims to columns (`[C,H,W]` → `[C, H·W]`),
//! the messages into the first query instance are
//! `m_0 = R(vs)·R(vs)ᵀ·R(vq0)` and `m_10 = R(vq1)·R(vq1)ᵀ·R(vq0)`, and
//! the update is `ṽq0 = ½(vq0 + (α·m_0 + β·m_10))`; the second query
//! instance gets the mirrored messages. Both updates read the
//! pre-update peer, so their order cannot matter. The Gram products
//! are used as-is, without normalization; keeping their magnitude in
//! check is the decoder's job.

use crate::episodes::{foreground_sequence, Mask};
use crate::error::{Error, Result};
use crate::tape::{Tape, TensorId};
use crate::tensor::Tensor;

/// Pool the support foreground into a fixed [C, s, s] instance: the
/// row-major foreground sequence is adaptively averaged down (or
/// padded via the global mean) to s² rows, shots are averaged
/// elementwise, and the result is laid out channel-major.
pub fn support_instance(shots: &[(&Tensor, &Mask)], s: usize) -> Result<Tensor> {
    if s < 1 {
        return Err(Error::Config("instance size must be >= 1".into()));
    }
    if shots.is_empty() {
        return Err(Error::Input(
            "support instance needs at least one shot".into(),
        ));
    }
    let mut acc: Option<Tensor> = None;
    for (xs, ms) in shots {
        let pooled = foreground_sequence(xs, ms)?.pool_rows(s * s)?;
        acc = Some(match acc {
            Some(a) => a.add(&pooled)?,
            None => pooled,
        });
    }
    let mean = acc.unwrap().scale(1.0 / shots.len() as f64);
    let c = mean.dims()[1];
    mean.transpose()?.reshape(vec![c, s, s])
}

/// Exchange instance context between the two query instances and the
/// support instance. Returns (ṽq0, ṽq1); both read the original vq0
/// and vq1.
pub fn associate(
    tape: &mut Tape,
    vq0: TensorId,
    vq1: TensorId,
    vs: TensorId,
    alpha: f64,
    beta: f64,
) -> Result<(TensorId, TensorId)> {
    if alpha < 0.0 || beta < 0.0 {
        return Err(Error::Config(format!(
            "association weights must be >= 0, got {alpha} and {beta}"
        )));
    }
    let q_dims = tape.value(vq0)?.dims().to_vec();
    let q1_dims = tape.value(vq1)?.dims().to_vec();
    let s_dims = tape.value(vs)?.dims().to_vec();
    if q_dims.len() != 3 || q_dims != q1_dims {
        return Err(Error::Shape(format!(
            "query instances must share [C,H,W] dims, got {q_dims:?} and {q1_dims:?}"
        )));
    }
    if s_dims.len() != 3 || s_dims[0] != q_dims[0] {
        return Err(Error::Shape(format!(
            "support instance {s_dims:?} does not share channels with queries {q_dims:?}"
        )));
    }
    let c = q_dims[0];
    let n = q_dims[1] * q_dims[2];

    let r0 = tape.reshape(vq0, vec![c, n])?;
    let r1 = tape.reshape(vq1, vec![c, n])?;
    let rs = tape.reshape(vs, vec![c, s_dims[1] * s_dims[2]])?;
    let gram = |tape: &mut Tape, m: TensorId| -> Result<TensorId> {
        let mt = tape.transpose(m)?;
        tape.matmul(m, mt)
    };
    let gram_s = gram(tape, rs)?;
    let gram_q0 = gram(tape, r0)?;
    let gram_q1 = gram(tape, r1)?;

    let update = |tape: &mut Tape,
                      target: TensorId,
                      r_target: TensorId,
                      gram_peer: TensorId|
     -> Result<TensorId> {
        let from_support = tape.matmul(gram_s, r_target)?;
        let from_peer = tape.matmul(gram_peer, r_target)?;
        let a = tape.scale(from_support, alpha)?;
        let b = tape.scale(from_peer, beta)?;
        let msg = tape.add(a, b)?;
        let msg = tape.reshape(msg, q_dims.clone())?;
        let sum = tape.add(target, msg)?;
        tape.scale(sum, 0.5)
    };
    let t0 = update(tape, vq0, r0, gram_q1)?;
    let t1 = update(tape, vq1, r1, gram_q0)?;
    Ok((t0, t1))
}
