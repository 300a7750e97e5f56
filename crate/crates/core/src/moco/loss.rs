//! InfoNCE over unit-norm embeddings and its false-negative-masked variant.
//!
//! All arithmetic is in `f64`; logits are shifted by their maximum before
//! exponentiation so the loss stays finite for any temperature.

use super::{Embedding, MemoryQueue};
use crate::dataspec::GroupId;
use crate::{Error, Result};

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::Contract(format!("temperature must be positive, got {tau}")))
    }
}

/// `-log(exp(q.k+/t) / (exp(q.k+/t) + sum exp(q.k-/t)))` and, when asked,
/// its gradient with respect to `q`.
fn nce<'a>(
    q: &[f64],
    k_plus: &[f64],
    negatives: impl Iterator<Item = &'a [f64]>,
    tau: f64,
    want_grad: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    check_tau(tau)?;
    if k_plus.len() != q.len() {
        return Err(Error::Contract("query and key dimensions differ".into()));
    }
    let negs: Vec<&[f64]> = negatives.collect();
    if negs.iter().any(|k| k.len() != q.len()) {
        return Err(Error::Contract("negative key dimension differs from query".into()));
    }
    let pos = dot(q, k_plus) / tau;
    let logits: Vec<f64> = negs.iter().map(|k| dot(q, k) / tau).collect();
    let max = logits.iter().copied().fold(pos, f64::max);
    let mut sum = (pos - max).exp();
    for l in &logits {
        sum += (l - max).exp();
    }
    let lse = max + sum.ln();
    let loss = (lse - pos).max(0.0);
    let grad = want_grad.then(|| {
        // dL/dq = (sum_j p_j k_j - k+) / tau, with p the softmax over all logits.
        let p_pos = (pos - max).exp() / sum;
        let mut g: Vec<f64> = k_plus.iter().map(|k| (p_pos - 1.0) * k).collect();
        for (k, l) in negs.iter().zip(&logits) {
            let p = (l - max).exp() / sum;
            for (gi, ki) in g.iter_mut().zip(k.iter()) {
                *gi += p * ki;
            }
        }
        g.iter_mut().for_each(|v| *v /= tau);
        g
    });
    Ok((loss, grad))
}

pub fn info_nce(q: &Embedding, k_plus: &Embedding, negatives: &[Embedding], tau: f64) -> Result<f64> {
    Ok(nce(q.as_slice(), k_plus.as_slice(), negatives.iter().map(Embedding::as_slice), tau, false)?.0)
}

/// Loss and gradient with respect to the query vector.
pub fn info_nce_with_grad(
    q: &Embedding,
    k_plus: &Embedding,
    negatives: &[Embedding],
    tau: f64,
) -> Result<(f64, Vec<f64>)> {
    let (l, g) = nce(q.as_slice(), k_plus.as_slice(), negatives.iter().map(Embedding::as_slice), tau, true)?;
    Ok((l, g.expect("requested")))
}

/// InfoNCE against every filled queue entry (no masking).
pub fn queue_info_nce_with_grad(q: &Embedding, k_plus: &Embedding, queue: &MemoryQueue, tau: f64) -> Result<(f64, Vec<f64>)> {
    let (l, g) = nce(q.as_slice(), k_plus.as_slice(), queue.filled().map(|(k, _)| k), tau, true)?;
    Ok((l, g.expect("requested")))
}

/// InfoNCE against the filled queue entries whose group differs from
/// `q_group`; entries from the query's own location are left out of the
/// denominator entirely.
pub fn masked_info_nce(q: &Embedding, q_group: GroupId, k_plus: &Embedding, queue: &MemoryQueue, tau: f64) -> Result<f64> {
    Ok(masked_info_nce_with_grad_inner(q, q_group, k_plus, queue, tau, false)?.0)
}

pub fn masked_info_nce_with_grad(
    q: &Embedding,
    q_group: GroupId,
    k_plus: &Embedding,
    queue: &MemoryQueue,
    tau: f64,
) -> Result<(f64, Vec<f64>)> {
    let (l, g) = masked_info_nce_with_grad_inner(q, q_group, k_plus, queue, tau, true)?;
    Ok((l, g.expect("requested")))
}

fn masked_info_nce_with_grad_inner(
    q: &Embedding,
    q_group: GroupId,
    k_plus: &Embedding,
    queue: &MemoryQueue,
    tau: f64,
    want_grad: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    if queue.dim() != q.dim() {
        return Err(Error::Contract("queue and query dimensions differ".into()));
    }
    let negatives = queue.filled().filter(|(_, g)| *g != q_group).map(|(k, _)| k);
    nce(q.as_slice(), k_plus.as_slice(), negatives, tau, want_grad)
}
