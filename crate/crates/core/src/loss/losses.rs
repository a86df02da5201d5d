use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::labels::LabelVolume;
use crate::autodiff::{ops, record, Var};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

fn default_one() -> f64 {
    1.0
}

fn default_eps() -> f64 {
    1e-5
}

/// Weights of the joint cross-entropy + soft Dice objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    #[serde(default = "default_one")]
    pub ce_weight: f64,
    #[serde(default = "default_one")]
    pub dice_weight: f64,
    #[serde(default = "default_eps")]
    pub dice_eps: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            ce_weight: 1.0,
            dice_weight: 1.0,
            dice_eps: 1e-5,
        }
    }
}

/// `(N, K, V)` for logits `[N, K, D, H, W]` matching `labels`.
fn check(op: &'static str, logits: &[usize], labels: &LabelVolume) -> Result<(usize, usize, usize)> {
    let [n, d, h, w] = labels.dims();
    if logits.len() != 5 || logits[0] != n || logits[2..] != [d, h, w] {
        return Err(Error::shape(op, format!("logits {logits:?} vs labels {:?}", labels.dims())));
    }
    let k = logits[1];
    if let Some(bad) = labels.data().iter().find(|&&c| c as usize >= k) {
        return Err(Error::invalid(op, format!("label {bad} with only {k} classes")));
    }
    Ok((n, k, d * h * w))
}

/// Mean over voxels of `-log softmax(logits)[true class]`, via log-sum-exp.
pub fn cross_entropy<T: Element>(logits: &Var<T>, labels: &LabelVolume) -> Result<Var<T>> {
    let (n, k, v) = check("cross_entropy", logits.shape(), labels)?;
    let z = logits.value().data();
    let lab = labels.data();
    let m = (n * v) as f64;
    let mut probs = vec![T::zero(); z.len()];
    let mut total = 0.0f64;
    for ni in 0..n {
        for vi in 0..v {
            let at = |c: usize| (ni * k + c) * v + vi;
            let mx = (0..k).map(|c| z[at(c)]).fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for c in 0..k {
                let e = (z[at(c)] - mx).exp();
                probs[at(c)] = e;
                s += e;
            }
            for c in 0..k {
                probs[at(c)] /= s;
            }
            let t = lab[ni * v + vi] as usize;
            total += (mx + s.ln() - z[at(t)]).as_f64();
        }
    }
    let out = Tensor::scalar(T::of(total / m));
    let labels = labels.data().to_vec();
    let shape = logits.shape().to_vec();
    record("cross_entropy", &[logits], Arc::new(out), move |g, _| {
        let scale = T::of(g.item().as_f64() / m);
        let mut grad = probs;
        for ni in 0..n {
            for vi in 0..v {
                grad[(ni * k + labels[ni * v + vi] as usize) * v + vi] -= T::one();
            }
        }
        for x in &mut grad {
            *x *= scale;
        }
        vec![Some(Tensor::from_parts(shape, grad))]
    })
}

/// `1 - mean_k (2 I_k + eps) / (P_k + G_k + eps)` over foreground classes,
/// with sums taken over the whole batch. `probs` is `[N, K, D, H, W]`.
pub fn dice_from_probs<T: Element>(probs: &Var<T>, labels: &LabelVolume, eps: f64) -> Result<Var<T>> {
    let (n, k, v) = check("soft_dice", probs.shape(), labels)?;
    if k < 2 {
        return Err(Error::invalid("soft_dice", "needs at least one foreground class"));
    }
    let p = probs.value().data();
    let lab = labels.data();
    let mut inter = vec![0.0f64; k];
    let mut psum = vec![0.0f64; k];
    let mut gsum = vec![0.0f64; k];
    for ni in 0..n {
        for c in 1..k {
            let row = &p[(ni * k + c) * v..(ni * k + c + 1) * v];
            for (vi, &pv) in row.iter().enumerate() {
                let pv = pv.as_f64();
                psum[c] += pv;
                if lab[ni * v + vi] as usize == c {
                    inter[c] += pv;
                    gsum[c] += 1.0;
                }
            }
        }
    }
    let fg = (k - 1) as f64;
    let dice: f64 = (1..k).map(|c| (2.0 * inter[c] + eps) / (psum[c] + gsum[c] + eps)).sum::<f64>() / fg;
    let out = Tensor::scalar(T::of(1.0 - dice));
    let labels = labels.data().to_vec();
    let shape = probs.shape().to_vec();
    record("soft_dice", &[probs], Arc::new(out), move |g, _| {
        let gs = g.item().as_f64();
        // d(dice_c)/dp = 2 g / den - num / den^2
        let coef: Vec<(f64, f64)> = (0..k)
            .map(|c| {
                let den = psum[c] + gsum[c] + eps;
                let num = 2.0 * inter[c] + eps;
                (-gs / fg * 2.0 / den, gs / fg * num / (den * den))
            })
            .collect();
        let mut grad = vec![T::zero(); n * k * v];
        for ni in 0..n {
            for c in 1..k {
                let (a, b) = coef[c];
                let (on, off) = (T::of(a + b), T::of(b));
                let row = &mut grad[(ni * k + c) * v..(ni * k + c + 1) * v];
                for (vi, x) in row.iter_mut().enumerate() {
                    *x = if labels[ni * v + vi] as usize == c { on } else { off };
                }
            }
        }
        vec![Some(Tensor::from_parts(shape, grad))]
    })
}

/// Soft Dice loss on logits.
pub fn soft_dice_loss<T: Element>(logits: &Var<T>, labels: &LabelVolume, eps: f64) -> Result<Var<T>> {
    dice_from_probs(&ops::softmax(logits, 1)?, labels, eps)
}

/// `ce_weight * CE + dice_weight * Dice`.
pub fn joint_loss<T: Element>(logits: &Var<T>, labels: &LabelVolume, cfg: &LossConfig) -> Result<Var<T>> {
    let ce = ops::scale(&cross_entropy(logits, labels)?, cfg.ce_weight)?;
    let dice = ops::scale(&soft_dice_loss(logits, labels, cfg.dice_eps)?, cfg.dice_weight)?;
    ops::add(&ce, &dice)
}

/// Scale weights, finest first: proportional to `1, 1/2, 1/4, ...` and
/// normalized to sum to one.
pub fn deep_supervision_weights(scales: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..scales).map(|i| 0.5f64.powi(i as i32)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Weighted joint loss over multi-scale outputs given deepest first (as
/// returned by the network). Labels are subsampled to each output's grid.
pub fn deep_supervision_loss<T: Element>(outputs: &[Var<T>], labels: &LabelVolume, cfg: &LossConfig) -> Result<Var<T>> {
    if outputs.is_empty() {
        return Err(Error::invalid("deep_supervision", "no outputs"));
    }
    let weights = deep_supervision_weights(outputs.len());
    let full = labels.spatial();
    let mut total: Option<Var<T>> = None;
    for (i, out) in outputs.iter().rev().enumerate() {
        let s = out.shape();
        if s.len() != 5 || (0..3).any(|a| s[a + 2] == 0 || full[a] % s[a + 2] != 0) {
            return Err(Error::shape(
                "deep_supervision",
                format!("output {s:?} is not a subsampling of labels {full:?}"),
            ));
        }
        let factor = std::array::from_fn(|a| full[a] / s[a + 2]);
        let lab = if factor == [1; 3] { labels.clone() } else { labels.downsample(factor)? };
        let term = ops::scale(&joint_loss(out, &lab, cfg)?, weights[i])?;
        total = Some(match total {
            None => term,
            Some(t) => ops::add(&t, &term)?,
        });
    }
    Ok(total.expect("non-empty"))
}
