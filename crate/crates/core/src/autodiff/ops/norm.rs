use std::sync::Arc;

use crate::autodiff::{record, Var};
use crate::error::{Error, Result};
use crate::tensor::{numel, Element, Tensor};

/// Default epsilon for instance and layer normalization.
pub const NORM_EPS: f64 = 1e-5;

/// Per-group statistics over contiguous groups of `len` elements, using a
/// two-pass mean/variance in f64. Returns (mean, 1/sqrt(var + eps)).
fn group_stats<T: Element>(data: &[T], len: usize, eps: f64) -> (Vec<f64>, Vec<f64>) {
    data.chunks(len)
        .map(|g| {
            let mean = g.iter().map(|v| v.as_f64()).sum::<f64>() / len as f64;
            let var = g.iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / len as f64;
            (mean, 1.0 / (var + eps).sqrt())
        })
        .unzip()
}

/// Normalized group backward, given `dxhat` and `xhat` for one group.
fn group_backward(dxhat: &[f64], xhat: &[f64], rstd: f64, out: &mut [f64]) {
    let n = dxhat.len() as f64;
    let s1: f64 = dxhat.iter().sum();
    let s2: f64 = dxhat.iter().zip(xhat).map(|(a, b)| a * b).sum();
    for ((o, &d), &xh) in out.iter_mut().zip(dxhat).zip(xhat) {
        *o = rstd * (d - s1 / n - xh * s2 / n);
    }
}

/// Normalization over groups of `group` contiguous elements, with an affine
/// transform indexed by `channel(group_index)`.
#[allow(clippy::too_many_arguments)]
fn normalize<T: Element>(
    op: &'static str,
    x: &Var<T>,
    gamma: &Var<T>,
    beta: &Var<T>,
    eps: f64,
    group: usize,
    channels: usize,
    channel_of: fn(usize, usize, usize) -> usize,
) -> Result<Var<T>> {
    let xv = Arc::clone(x.value_arc());
    let (mean, rstd) = group_stats(xv.data(), group, eps);
    let (gd, bd) = (gamma.value().data(), beta.value().data());
    let ch = move |gi: usize, j: usize| channel_of(gi, channels, j);
    let mut out = Vec::with_capacity(xv.len());
    for (gi, g) in xv.data().chunks(group).enumerate() {
        for (j, &v) in g.iter().enumerate() {
            let c = ch(gi, j);
            let xh = (v.as_f64() - mean[gi]) * rstd[gi];
            out.push(gd[c] * T::of(xh) + bd[c]);
        }
    }
    let gv = Arc::clone(gamma.value_arc());
    let shape = xv.shape().to_vec();
    let out = Tensor::from_parts(shape.clone(), out);
    record(op, &[x, gamma, beta], Arc::new(out), move |g, needs| {
        let gdat = g.data();
        let mut dgamma = vec![0.0f64; channels];
        let mut dbeta = vec![0.0f64; channels];
        let mut dx = needs[0].then(|| Vec::with_capacity(xv.len()));
        let mut xhat = vec![0.0; group];
        let mut dxhat = vec![0.0; group];
        let mut tmp = vec![0.0; group];
        for (gi, xs) in xv.data().chunks(group).enumerate() {
            let gs = &gdat[gi * group..(gi + 1) * group];
            for j in 0..group {
                let c = ch(gi, j);
                xhat[j] = (xs[j].as_f64() - mean[gi]) * rstd[gi];
                let gj = gs[j].as_f64();
                dgamma[c] += gj * xhat[j];
                dbeta[c] += gj;
                dxhat[j] = gj * gv.data()[c].as_f64();
            }
            if let Some(dx) = dx.as_mut() {
                group_backward(&dxhat, &xhat, rstd[gi], &mut tmp);
                dx.extend(tmp.iter().map(|&v| T::of(v)));
            }
        }
        let to_t = |v: Vec<f64>| Tensor::from_parts(vec![channels], v.into_iter().map(T::of).collect());
        vec![
            dx.map(|d| Tensor::from_parts(shape.clone(), d)),
            needs[1].then(|| to_t(dgamma)),
            needs[2].then(|| to_t(dbeta)),
        ]
    })
}

fn check_affine<T: Element>(op: &'static str, gamma: &Var<T>, beta: &Var<T>, c: usize) -> Result<()> {
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::shape(
            op,
            format!("affine params {:?}/{:?}, expected [{c}]", gamma.shape(), beta.shape()),
        ));
    }
    Ok(())
}

/// Instance normalization of `x [N, C, spatial...]`: every `(n, c)` slice is
/// normalized with its biased variance, then scaled and shifted per channel.
pub fn instance_norm<T: Element>(x: &Var<T>, gamma: &Var<T>, beta: &Var<T>, eps: f64) -> Result<Var<T>> {
    let s = x.shape();
    if s.len() < 3 {
        return Err(Error::shape("instance_norm", format!("expected [N, C, spatial...], got {s:?}")));
    }
    let c = s[1];
    check_affine("instance_norm", gamma, beta, c)?;
    let spatial = numel(&s[2..]);
    if spatial < 2 {
        log::warn!("instance_norm: single-voxel slices in {s:?}; output is beta");
    }
    normalize("instance_norm", x, gamma, beta, eps, spatial, c, |gi, c, _| gi % c)
}

/// Layer normalization over the last (channel) axis.
pub fn layer_norm<T: Element>(x: &Var<T>, gamma: &Var<T>, beta: &Var<T>, eps: f64) -> Result<Var<T>> {
    let Some(&c) = x.shape().last() else {
        return Err(Error::shape("layer_norm", "scalar input"));
    };
    check_affine("layer_norm", gamma, beta, c)?;
    normalize("layer_norm", x, gamma, beta, eps, c, c, |_, _, j| j)
}
