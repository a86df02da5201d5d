use super::config::ModelConfig;
use crate::autodiff::{ops, Var};
use crate::conv_path::{ConvBlock, Head, Resample, ResampleKind};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamBuilder, ParamSet};
use crate::swin3d::StPath;
use crate::tensor::Element;

/// Parallel transformer + convolution paths at one resolution. Either path
/// may be disabled for ablations.
#[derive(Clone, Debug)]
pub struct Hybrid {
    pub st: Option<StPath>,
    pub conv: Option<ConvBlock>,
}

#[derive(Clone, Debug)]
pub enum EncoderStage {
    /// Conv block, or identity when PCM is disabled.
    Pcm(Option<ConvBlock>),
    /// `ST(x) + Conv(x)`.
    Hybrid(Hybrid),
}

#[derive(Clone, Debug)]
pub enum DecoderStage {
    /// `Conv([x_up, y])`, or `x_up + y` when PCM is disabled.
    Pcm(Option<ConvBlock>),
    /// `ST(x_up + y) + Conv([x_up, y])`.
    Hybrid(Hybrid),
}

/// The U-shaped network. Stage 0 is full resolution; stage `S-1` is the
/// bottleneck.
#[derive(Clone, Debug)]
pub struct PhTrans {
    cfg: ModelConfig,
    pub stem: Option<Resample>,
    pub encoder: Vec<EncoderStage>,
    /// `down[s]` maps stage `s` to `s+1`.
    pub down: Vec<Resample>,
    /// `up[s]` maps stage `s+1` to `s`.
    pub up: Vec<Resample>,
    /// Indexed by stage; the bottleneck has no decoder entry.
    pub decoder: Vec<DecoderStage>,
    /// One segmentation head per stage.
    pub heads: Vec<Head>,
}

/// Encoder skips, decoder outputs and per-stage logits of one forward.
pub struct StageActivations<T: Element> {
    /// `y_s`, one per stage.
    pub skips: Vec<Var<T>>,
    /// `z_s`, one per stage; the bottleneck's equals its skip.
    pub decoded: Vec<Var<T>>,
    /// Logits, deepest first.
    pub logits: Vec<Var<T>>,
}

impl PhTrans {
    /// Validates `cfg` and allocates all parameters from `seed`.
    pub fn build<T: Element>(cfg: &ModelConfig, seed: u64) -> Result<(Self, ParamSet<T>)> {
        let mut set = ParamSet::new();
        let net = Self::build_into(cfg, &mut ParamBuilder::new(&mut set, seed))?;
        Ok((net, set))
    }

    pub fn build_into<T: Element>(cfg: &ModelConfig, b: &mut ParamBuilder<T>) -> Result<Self> {
        cfg.check()?;
        let s_total = cfg.stages();
        let pcm_entry = cfg.use_pcm && cfg.n1 > 0;
        let stem = if pcm_entry {
            None
        } else {
            Some(Resample::build(b, "stem", ResampleKind::Down, cfg.in_channels, cfg.base_channels, [1; 3])?)
        };
        let mut encoder = Vec::with_capacity(s_total);
        let mut down = Vec::with_capacity(s_total.saturating_sub(1));
        for s in 0..s_total {
            let c = cfg.channels(s);
            let prefix = format!("enc.{s}");
            encoder.push(if cfg.is_hybrid(s) {
                EncoderStage::Hybrid(Hybrid::build(b, &prefix, cfg, s, c)?)
            } else if cfg.use_pcm {
                let cin = if s == 0 { cfg.in_channels } else { c };
                EncoderStage::Pcm(Some(ConvBlock::build(b, &format!("{prefix}.conv"), cfg.m2, cin, c)?))
            } else {
                EncoderStage::Pcm(None)
            });
            if s + 1 < s_total {
                down.push(Resample::build(b, &format!("down.{s}"), ResampleKind::Down, c, 2 * c, cfg.strides[s + 1])?);
            }
        }

        let mut up: Vec<Option<Resample>> = vec![None; s_total.saturating_sub(1)];
        let mut decoder: Vec<Option<DecoderStage>> = vec![None; s_total.saturating_sub(1)];
        for s in (0..s_total.saturating_sub(1)).rev() {
            let c = cfg.channels(s);
            up[s] = Some(Resample::build(b, &format!("up.{s}"), ResampleKind::Up, 2 * c, c, cfg.strides[s + 1])?);
            let prefix = format!("dec.{s}");
            decoder[s] = Some(if cfg.is_hybrid(s) {
                DecoderStage::Hybrid(Hybrid::build(b, &prefix, cfg, s, 2 * c)?)
            } else if cfg.use_pcm {
                DecoderStage::Pcm(Some(ConvBlock::build(b, &format!("{prefix}.conv"), cfg.m2, 2 * c, c)?))
            } else {
                DecoderStage::Pcm(None)
            });
        }
        let mut heads: Vec<Option<Head>> = vec![None; s_total];
        for s in (0..s_total).rev() {
            heads[s] = Some(Head::build(b, &format!("head.{s}"), cfg.channels(s), cfg.num_classes)?);
        }
        Ok(Self {
            cfg: cfg.clone(),
            stem,
            encoder,
            down,
            up: up.into_iter().flatten().collect(),
            decoder: decoder.into_iter().flatten().collect(),
            heads: heads.into_iter().flatten().collect(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Logits for every stage, deepest first; the last is full resolution.
    pub fn forward<T: Element>(&self, p: &Bound<T>, x: &Var<T>) -> Result<Vec<Var<T>>> {
        Ok(self.forward_stages(p, x)?.logits)
    }

    pub fn forward_stages<T: Element>(&self, p: &Bound<T>, x: &Var<T>) -> Result<StageActivations<T>> {
        let cfg = &self.cfg;
        let s = x.shape();
        if s.len() != 5 || s[1] != cfg.in_channels || s[2..] != cfg.patch_size {
            return Err(Error::shape(
                "phtrans",
                format!("input {s:?}, expected [N, {}, {:?}]", cfg.in_channels, cfg.patch_size),
            ));
        }
        let s_total = cfg.stages();
        let mut carrier = match &self.stem {
            Some(stem) => stem.forward(p, x)?,
            None => x.clone(),
        };
        let mut skips = Vec::with_capacity(s_total);
        for s in 0..s_total {
            let y = match &self.encoder[s] {
                EncoderStage::Pcm(Some(conv)) => conv.forward(p, &carrier)?,
                EncoderStage::Pcm(None) => carrier.clone(),
                EncoderStage::Hybrid(h) => h.forward(p, &carrier, &carrier)?,
            };
            if s + 1 < s_total {
                carrier = self.down[s].forward(p, &y)?;
            }
            skips.push(y);
        }
        drop(carrier);

        let mut decoded: Vec<Option<Var<T>>> = vec![None; s_total];
        let mut logits = Vec::with_capacity(s_total);
        let mut z = skips[s_total - 1].clone();
        logits.push(self.heads[s_total - 1].forward(p, &z)?);
        decoded[s_total - 1] = Some(z.clone());
        for s in (0..s_total - 1).rev() {
            let xu = self.up[s].forward(p, &z)?;
            let y = &skips[s];
            z = match &self.decoder[s] {
                DecoderStage::Pcm(Some(conv)) => conv.forward(p, &ops::concat(&xu, y, 1)?)?,
                DecoderStage::Pcm(None) => ops::add(&xu, y)?,
                DecoderStage::Hybrid(h) => {
                    let st_in = if h.st.is_some() { Some(ops::add(&xu, y)?) } else { None };
                    let conv_in = if h.conv.is_some() { Some(ops::concat(&xu, y, 1)?) } else { None };
                    h.forward_opt(p, st_in.as_ref(), conv_in.as_ref())?
                }
            };
            logits.push(self.heads[s].forward(p, &z)?);
            decoded[s] = Some(z.clone());
        }
        Ok(StageActivations {
            skips,
            decoded: decoded.into_iter().flatten().collect(),
            logits,
        })
    }
}

impl Hybrid {
    /// Paths of hybrid stage `s`; the conv path takes `conv_in` channels.
    pub fn build<T: Element>(b: &mut ParamBuilder<T>, prefix: &str, cfg: &ModelConfig, s: usize, conv_in: usize) -> Result<Self> {
        let c = cfg.channels(s);
        let st = cfg
            .use_st_path
            .then(|| StPath::build(b, &format!("{prefix}.st"), cfg.m1, c, cfg.heads_at(s), cfg.window, cfg.stage_dims(s), cfg.mlp_ratio))
            .transpose()?;
        let conv = cfg
            .use_conv_path
            .then(|| ConvBlock::build(b, &format!("{prefix}.conv"), cfg.m2, conv_in, c))
            .transpose()?;
        Ok(Hybrid { st, conv })
    }

    /// `ST(st_in) + Conv(conv_in)`, skipping disabled paths.
    pub fn forward<T: Element>(&self, p: &Bound<T>, st_in: &Var<T>, conv_in: &Var<T>) -> Result<Var<T>> {
        self.forward_opt(p, Some(st_in), Some(conv_in))
    }

    pub fn forward_opt<T: Element>(&self, p: &Bound<T>, st_in: Option<&Var<T>>, conv_in: Option<&Var<T>>) -> Result<Var<T>> {
        let st = match (&self.st, st_in) {
            (Some(st), Some(x)) => Some(st.forward(p, x)?),
            _ => None,
        };
        let conv = match (&self.conv, conv_in) {
            (Some(conv), Some(x)) => Some(conv.forward(p, x)?),
            _ => None,
        };
        match (st, conv) {
            (Some(a), Some(b)) => ops::add(&a, &b),
            (Some(a), None) | (None, Some(a)) => Ok(a),
            (None, None) => Err(Error::invalid("hybrid", "both paths disabled")),
        }
    }
}
