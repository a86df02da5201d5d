//! Windowed multi-head self-attention with relative-position bias.

use std::sync::Arc;

use super::rel_pos::{bias_gather_index, table_len};
use crate::autodiff::{ops, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, Init, ParamBuilder, ParamId};
use crate::tensor::Element;

/// Deviation of the truncated-normal projection initializers.
pub const INIT_STD: f64 = 0.02;

/// Bias table `[heads, table_len]` plus its dense lookup.
#[derive(Clone, Debug)]
pub struct RelPosBias {
    pub table: ParamId,
    index: Arc<[u32]>,
    heads: usize,
    tokens: usize,
}

impl RelPosBias {
    pub fn build<T: Element>(b: &mut ParamBuilder<T>, name: &str, window: [usize; 3], heads: usize) -> Result<Self> {
        Ok(Self {
            table: b.param(name, &[heads, table_len(window)], Init::Zeros)?,
            index: bias_gather_index(window, heads),
            heads,
            tokens: window.iter().product(),
        })
    }

    /// Dense bias `[1, heads, L, L]`.
    pub fn dense<T: Element>(&self, p: &Bound<T>) -> Result<Var<T>> {
        ops::gather(&p[self.table], &self.index, &[1, self.heads, self.tokens, self.tokens])
    }
}

#[derive(Clone, Debug)]
pub struct WindowAttention {
    pub qkv_w: ParamId,
    pub qkv_b: ParamId,
    pub proj_w: ParamId,
    pub proj_b: ParamId,
    pub bias: RelPosBias,
    heads: usize,
    dim: usize,
}

pub struct AttentionOutput<T: Element> {
    /// `[B, L, C]`
    pub output: Var<T>,
    /// Post-softmax weights `[B, heads, L, L]`.
    pub weights: Var<T>,
}

impl WindowAttention {
    pub fn build<T: Element>(
        b: &mut ParamBuilder<T>,
        prefix: &str,
        dim: usize,
        heads: usize,
        window: [usize; 3],
    ) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::invalid(
                "window_attention",
                format!("{dim} channels are not divisible by {heads} heads"),
            ));
        }
        Ok(Self {
            qkv_w: b.param(format!("{prefix}.qkv.weight"), &[3 * dim, dim], Init::TruncNormal(INIT_STD))?,
            qkv_b: b.param(format!("{prefix}.qkv.bias"), &[3 * dim], Init::Zeros)?,
            proj_w: b.param(format!("{prefix}.proj.weight"), &[dim, dim], Init::TruncNormal(INIT_STD))?,
            proj_b: b.param(format!("{prefix}.proj.bias"), &[dim], Init::Zeros)?,
            bias: RelPosBias::build(b, &format!("{prefix}.rel_pos_bias"), window, heads)?,
            heads,
            dim,
        })
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    /// `x [B, L, C]`; `mask [nW, L, L]` with `B` a multiple of `nW`.
    pub fn forward<T: Element>(&self, p: &Bound<T>, x: &Var<T>, mask: Option<&Var<T>>) -> Result<AttentionOutput<T>> {
        let bias = self.bias.dense(p)?;
        self.forward_with_bias(p, x, &bias, mask)
    }

    /// As [`forward`](Self::forward) with an explicit dense bias `[1, heads, L, L]`.
    pub fn forward_with_bias<T: Element>(
        &self,
        p: &Bound<T>,
        x: &Var<T>,
        bias: &Var<T>,
        mask: Option<&Var<T>>,
    ) -> Result<AttentionOutput<T>> {
        let s = x.shape();
        if s.len() != 3 || s[2] != self.dim {
            return Err(Error::shape("window_attention", format!("expected [B, L, {}], got {s:?}", self.dim)));
        }
        let (bsz, l, c) = (s[0], s[1], s[2]);
        let (h, d) = (self.heads, self.dim / self.heads);
        let qkv = ops::linear(x, &p[self.qkv_w], Some(&p[self.qkv_b]))?;
        let qkv = ops::permute(&ops::reshape(&qkv, &[bsz, l, 3, h, d])?, &[2, 0, 3, 1, 4])?;
        let part = |i: usize| ops::reshape(&ops::narrow(&qkv, 0, i, 1)?, &[bsz, h, l, d]);
        let q = ops::scale(&part(0)?, 1.0 / (d as f64).sqrt())?;
        let kt = ops::permute(&part(1)?, &[0, 1, 3, 2])?;
        let v = part(2)?;
        drop(qkv);
        let mut logits = ops::add(&ops::matmul_batched(&q, &kt)?, bias)?;
        if let Some(m) = mask {
            let nw = m.shape()[0];
            if m.shape() != [nw, l, l] || bsz % nw != 0 {
                return Err(Error::shape(
                    "window_attention",
                    format!("mask {:?} does not fit {bsz} windows of {l} tokens", m.shape()),
                ));
            }
            let m = ops::reshape(m, &[1, nw, 1, l, l])?;
            let grouped = ops::reshape(&logits, &[bsz / nw, nw, h, l, l])?;
            logits = ops::reshape(&ops::add(&grouped, &m)?, &[bsz, h, l, l])?;
        }
        let weights = ops::softmax(&logits, 3)?;
        let out = ops::matmul_batched(&weights, &v)?;
        let out = ops::reshape(&ops::permute(&out, &[0, 2, 1, 3])?, &[bsz, l, c])?;
        let output = ops::linear(&out, &p[self.proj_w], Some(&p[self.proj_b]))?;
        Ok(AttentionOutput { output, weights })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamSet;
    use crate::swin3d::window::{build_attention_mask, WindowSpec};
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(dim: usize, heads: usize, window: [usize; 3], seed: u64) -> (ParamSet<f64>, WindowAttention) {
        let mut set = ParamSet::new();
        let mut b = ParamBuilder::new(&mut set, seed);
        let a = WindowAttention::build(&mut b, "attn", dim, heads, window).unwrap();
        // non-trivial biases and table so the oracle exercises every term
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        for id in [a.qkv_b, a.proj_b, a.bias.table, a.qkv_w] {
            let shape = set.get(id).shape().to_vec();
            set.set(id, Tensor::randn(shape, 0.5, &mut rng)).unwrap();
        }
        (set, a)
    }

    fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
        Tensor::randn(shape.to_vec(), 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Direct per-pair evaluation in f64.
    fn oracle(set: &ParamSet<f64>, a: &WindowAttention, x: &Tensor<f64>, mask: Option<&Tensor<f64>>, window: [usize; 3]) -> Vec<f64> {
        let [bsz, l, c]: [usize; 3] = x.shape().try_into().unwrap();
        let (h, d) = (a.heads, c / a.heads);
        let (wq, bq) = (set.get(a.qkv_w).data(), set.get(a.qkv_b).data());
        let (wp, bp) = (set.get(a.proj_w).data(), set.get(a.proj_b).data());
        let table = set.get(a.bias.table).data();
        let rel = crate::swin3d::rel_pos::build_rel_pos_index(window);
        let t = table_len(window);
        let xd = x.data();
        let lin = |row: &[f64], w: &[f64], b: &[f64], out_dim: usize, in_dim: usize| -> Vec<f64> {
            (0..out_dim).map(|o| b[o] + (0..in_dim).map(|i| w[o * in_dim + i] * row[i]).sum::<f64>()).collect()
        };
        let mut out = Vec::new();
        for bi in 0..bsz {
            let qkv: Vec<Vec<f64>> = (0..l).map(|i| lin(&xd[(bi * l + i) * c..(bi * l + i + 1) * c], wq, bq, 3 * c, c)).collect();
            let mut heads_out = vec![vec![0.0; c]; l];
            for hh in 0..h {
                for i in 0..l {
                    let logits: Vec<f64> = (0..l)
                        .map(|j| {
                            let dot: f64 = (0..d).map(|k| qkv[i][hh * d + k] * qkv[j][c + hh * d + k]).sum();
                            let mut s = dot / (d as f64).sqrt() + table[hh * t + rel[i * l + j] as usize];
                            if let Some(m) = mask {
                                let nw = m.shape()[0];
                                s += m.data()[((bi % nw) * l + i) * l + j];
                            }
                            s
                        })
                        .collect();
                    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let e: Vec<f64> = logits.iter().map(|v| (v - mx).exp()).collect();
                    let z: f64 = e.iter().sum();
                    for k in 0..d {
                        heads_out[i][hh * d + k] = (0..l).map(|j| e[j] / z * qkv[j][2 * c + hh * d + k]).sum();
                    }
                }
            }
            for row in &heads_out {
                out.extend(lin(row, wp, bp, c, c));
            }
        }
        out
    }

    fn max_rel(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-12)).fold(0.0, f64::max)
    }

    #[test]
    fn matches_brute_force_oracle_for_small_windows() {
        for (window, dim, heads) in [([1, 1, 2], 2, 1), ([1, 2, 2], 4, 2), ([2, 2, 2], 6, 3), ([2, 1, 3], 4, 1)] {
            let (set, a) = setup(dim, heads, window, 1);
            let l: usize = window.iter().product();
            let x = randn(&[3, l, dim], 2);
            let got = a.forward(&set.constants(), &Var::constant(x.clone()), None).unwrap();
            assert!(max_rel(got.output.value().data(), &oracle(&set, &a, &x, None, window)) < 1e-5);
        }
    }

    #[test]
    fn masked_oracle_and_negligible_cross_region_weight() {
        let window = [1, 2, 2];
        let dims = [1, 4, 4];
        let spec = WindowSpec::new(window, [0, 1, 1]).unwrap();
        let mask = build_attention_mask::<f64>(dims, &spec).unwrap();
        let (set, a) = setup(4, 2, window, 3);
        let x = randn(&[8, 4, 4], 4);
        let got = a.forward(&set.constants(), &Var::constant(x.clone()), Some(&Var::constant(mask.clone()))).unwrap();
        assert!(max_rel(got.output.value().data(), &oracle(&set, &a, &x, Some(&mask), window)) < 1e-5);
        let w = got.weights.value().data();
        let (nw, l) = (4, 4);
        for bi in 0..8 {
            for hh in 0..2 {
                for i in 0..l {
                    let row = &w[((bi * 2 + hh) * l + i) * l..((bi * 2 + hh) * l + i + 1) * l];
                    assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
                    for j in 0..l {
                        if mask.data()[((bi % nw) * l + i) * l + j] != 0.0 {
                            assert!(row[j] < 1e-8);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn single_token_returns_projected_values() {
        let (mut set, a) = setup(3, 1, [1, 1, 1], 5);
        // identity value projection, zero q/k rows
        let mut w = vec![0.0; 27];
        for i in 0..3 {
            w[(6 + i) * 3 + i] = 1.0;
        }
        set.set(a.qkv_w, Tensor::new(vec![9, 3], w).unwrap()).unwrap();
        set.set(a.qkv_b, Tensor::zeros(vec![9])).unwrap();
        let x = randn(&[2, 1, 3], 6);
        let got = a.forward(&set.constants(), &Var::constant(x.clone()), None).unwrap();
        let proj = ops::linear(&Var::constant(x), &set.constants()[a.proj_w], Some(&set.constants()[a.proj_b])).unwrap();
        assert!(got.output.value().max_abs_diff(proj.value()) < 1e-12);
    }

    #[test]
    fn identical_keys_give_uniform_weights() {
        let (mut set, a) = setup(2, 1, [1, 2, 2], 7);
        set.set(a.bias.table, Tensor::zeros(vec![1, 9])).unwrap();
        // identical tokens produce identical keys
        let x = Tensor::from_fn(vec![1, 4, 2], |i| if i % 2 == 0 { 0.3 } else { -1.1 });
        let got = a.forward(&set.constants(), &Var::constant(x), None).unwrap();
        assert!(got.weights.value().data().iter().all(|&v| (v - 0.25).abs() < 1e-12));
    }

    #[test]
    fn rejects_indivisible_heads() {
        let mut set = ParamSet::<f32>::new();
        let mut b = ParamBuilder::new(&mut set, 0);
        assert!(WindowAttention::build(&mut b, "a", 96, 5, [1, 1, 1]).is_err());
    }

    #[test]
    fn zero_mask_matches_unmasked() {
        let (set, a) = setup(4, 2, [1, 2, 2], 8);
        let x = Var::constant(randn(&[4, 4, 4], 9));
        let p = set.constants();
        let plain = a.forward(&p, &x, None).unwrap();
        let zero = Var::constant(Tensor::zeros(vec![2, 4, 4]));
        let masked = a.forward(&p, &x, Some(&zero)).unwrap();
        assert!(plain.output.value().bit_eq(masked.output.value()));
    }

    #[test]
    fn permuting_tokens_permutes_output() {
        let (set, a) = setup(4, 2, [1, 2, 2], 10);
        let p = set.constants();
        let l = 4;
        let perm = [2usize, 0, 3, 1];
        let x = randn(&[2, l, 4], 11);
        let bias = a.bias.dense(&p).unwrap();
        let mask = Tensor::<f64>::from_fn(vec![1, l, l], |k| if (k / l + k % l) % 3 == 0 { -1e4 } else { 0.0 });
        let base = a.forward_with_bias(&p, &Var::constant(x.clone()), &bias, Some(&Var::constant(mask.clone()))).unwrap();

        let px = Tensor::from_fn(vec![2, l, 4], |k| {
            let (b, i, c) = (k / (l * 4), (k / 4) % l, k % 4);
            x.data()[(b * l + perm[i]) * 4 + c]
        });
        let bd = bias.value().data();
        let pb = Tensor::from_fn(vec![1, 2, l, l], |k| {
            let (h, i, j) = (k / (l * l), (k / l) % l, k % l);
            bd[(h * l + perm[i]) * l + perm[j]]
        });
        let pm = Tensor::from_fn(vec![1, l, l], |k| mask.data()[perm[k / l] * l + perm[k % l]]);
        let got = a
            .forward_with_bias(&p, &Var::constant(px), &Var::constant(pb), Some(&Var::constant(pm)))
            .unwrap();
        let want = Tensor::from_fn(vec![2, l, 4], |k| {
            let (b, i, c) = (k / (l * 4), (k / 4) % l, k % 4);
            base.output.value().data()[(b * l + perm[i]) * 4 + c]
        });
        assert!(got.output.value().max_abs_diff(&want) < 1e-12);
    }
}
