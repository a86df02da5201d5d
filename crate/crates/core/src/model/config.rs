use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violation};
use crate::swin3d::MLP_RATIO;

fn yes() -> bool {
    true
}

fn default_mlp_ratio() -> usize {
    MLP_RATIO
}

/// Network hyperparameters.
///
/// The network has `n1 + n2` stages: the first `n1` are pure convolution
/// stages, the rest are hybrid transformer/convolution stages. `strides[s]`
/// is the downsampling stride *into* stage `s`, so `strides[0]` is always
/// `[1, 1, 1]` and stage `s` has extents `patch_size / prod(strides[..=s])`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n1: usize,
    pub n2: usize,
    /// ST blocks per hybrid path.
    pub m1: usize,
    /// Conv units per conv block.
    pub m2: usize,
    pub base_channels: usize,
    /// Attention heads per hybrid stage.
    pub heads: Vec<usize>,
    pub window: [usize; 3],
    pub strides: Vec<[usize; 3]>,
    pub in_channels: usize,
    pub num_classes: usize,
    pub patch_size: [usize; 3],
    #[serde(default = "yes")]
    pub use_st_path: bool,
    #[serde(default = "yes")]
    pub use_conv_path: bool,
    #[serde(default = "yes")]
    pub use_pcm: bool,
    #[serde(default = "default_mlp_ratio")]
    pub mlp_ratio: usize,
}

impl ModelConfig {
    /// 13-organ abdominal CT setting: 48x192x192 crops, windows 3x6x6.
    pub fn bcv() -> Self {
        Self {
            n1: 2,
            n2: 4,
            m1: 2,
            m2: 2,
            base_channels: 24,
            heads: vec![3, 6, 12, 24],
            window: [3, 6, 6],
            strides: vec![[1, 1, 1], [2, 2, 2], [2, 2, 2], [2, 2, 2], [2, 2, 2], [1, 2, 2]],
            in_channels: 1,
            num_classes: 14,
            patch_size: [48, 192, 192],
            use_st_path: true,
            use_conv_path: true,
            use_pcm: true,
            mlp_ratio: MLP_RATIO,
        }
    }

    /// Cardiac MRI setting: 16x256x224 crops, windows 2x8x7.
    pub fn acdc() -> Self {
        Self {
            window: [2, 8, 7],
            strides: vec![[1, 1, 1], [1, 2, 2], [2, 2, 2], [2, 2, 2], [2, 2, 2], [1, 2, 2]],
            num_classes: 4,
            patch_size: [16, 256, 224],
            ..Self::bcv()
        }
    }

    pub fn stages(&self) -> usize {
        self.n1 + self.n2
    }

    pub fn is_hybrid(&self, stage: usize) -> bool {
        stage >= self.n1
    }

    /// Channels at stage `s`: `C * 2^s`.
    pub fn channels(&self, stage: usize) -> usize {
        self.base_channels << stage
    }

    /// Heads used at a hybrid stage.
    pub fn heads_at(&self, stage: usize) -> usize {
        self.heads[stage - self.n1]
    }

    /// Product of `strides[..=stage]`.
    pub fn cumulative_stride(&self, stage: usize) -> [usize; 3] {
        let mut c = [1; 3];
        for s in &self.strides[..=stage] {
            for a in 0..3 {
                c[a] *= s[a];
            }
        }
        c
    }

    /// Spatial extents at a stage (assumes a valid config).
    pub fn stage_dims(&self, stage: usize) -> [usize; 3] {
        let c = self.cumulative_stride(stage);
        std::array::from_fn(|a| self.patch_size[a] / c[a])
    }

    /// Every violated constraint, each naming its stage (1-based) and axis
    /// (1-based).
    pub fn validate(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        let mut bad = |loc: String, msg: String| v.push(Violation::new(loc, msg));
        let s_total = self.stages();
        if s_total == 0 {
            bad("n1 + n2".into(), "at least one stage is required".into());
        }
        if self.m2 == 0 && (self.use_conv_path || (self.use_pcm && self.n1 > 0)) {
            bad("m2".into(), "conv blocks need at least one unit".into());
        }
        if self.m1 == 0 && self.use_st_path && self.n2 > 0 {
            bad("m1".into(), "ST paths need at least one block".into());
        }
        if self.base_channels == 0 {
            bad("base_channels".into(), "must be positive".into());
        }
        if self.in_channels == 0 {
            bad("in_channels".into(), "must be positive".into());
        }
        if self.num_classes < 2 {
            bad("num_classes".into(), format!("{} classes; at least 2 (background + 1) required", self.num_classes));
        }
        if self.mlp_ratio == 0 {
            bad("mlp_ratio".into(), "must be positive".into());
        }
        if !self.use_st_path && !self.use_conv_path {
            bad("use_st_path / use_conv_path".into(), "at least one hybrid path must be enabled".into());
        }
        for a in 0..3 {
            if self.window[a] == 0 {
                bad(format!("window axis {}", a + 1), "must be positive".into());
            }
            if self.patch_size[a] == 0 {
                bad(format!("patch_size axis {}", a + 1), "must be positive".into());
            }
        }
        if self.heads.len() != self.n2 {
            bad("heads".into(), format!("{} entries for {} hybrid stages", self.heads.len(), self.n2));
        }
        if self.strides.len() != s_total {
            bad("strides".into(), format!("{} entries for {s_total} stages", self.strides.len()));
            return v;
        }
        if s_total > 0 && self.strides[0] != [1, 1, 1] {
            bad("strides[0]".into(), format!("{:?}; the first stage is full resolution, use [1, 1, 1]", self.strides[0]));
        }
        for (s, st) in self.strides.iter().enumerate() {
            for a in 0..3 {
                if !(1..=2).contains(&st[a]) {
                    bad(format!("strides[{s}] axis {}", a + 1), format!("stride {} is not 1 or 2", st[a]));
                }
            }
        }
        if !v.is_empty() || self.patch_size.contains(&0) || self.window.contains(&0) {
            return v;
        }
        for s in 0..s_total {
            let cum = self.cumulative_stride(s);
            for a in 0..3 {
                if self.patch_size[a] % cum[a] != 0 {
                    v.push(Violation::new(
                        format!("stage {} axis {}", s + 1, a + 1),
                        format!("patch extent {} is not divisible by cumulative stride {}", self.patch_size[a], cum[a]),
                    ));
                }
            }
        }
        if !v.is_empty() {
            return v;
        }
        for s in self.n1..s_total {
            let dims = self.stage_dims(s);
            let c = self.channels(s);
            let h = self.heads[s - self.n1];
            if self.use_st_path {
                for a in 0..3 {
                    if dims[a] % self.window[a] != 0 {
                        v.push(Violation::new(
                            format!("stage {} axis {}", s + 1, a + 1),
                            format!("extent {} is not divisible by window {}", dims[a], self.window[a]),
                        ));
                    }
                }
                if h == 0 || c % h != 0 {
                    v.push(Violation::new(
                        format!("stage {} heads", s + 1),
                        format!("{c} channels are not divisible by {h} heads"),
                    ));
                }
            }
        }
        v
    }

    pub fn check(&self) -> Result<()> {
        let v = self.validate();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }
}
