//! Closed-form parameter and multiply-accumulate counts.

use serde::Serialize;

use super::config::ModelConfig;
use crate::error::Result;
use crate::swin3d::table_len;

/// How FLOPs are derived from MACs.
pub const FLOP_CONVENTION: &str =
    "FLOPs = 2 x multiply-accumulates of convolutions, transposed convolutions, linear layers and attention matmuls; norms, activations, softmax and additions excluded";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Cost {
    pub params: u64,
    pub macs: u64,
}

impl std::ops::AddAssign for Cost {
    fn add_assign(&mut self, o: Self) {
        self.params += o.params;
        self.macs += o.macs;
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct StageReport {
    /// 1-based.
    pub stage: usize,
    pub kind: String,
    pub extents: [usize; 3],
    pub channels: usize,
    pub windows: Option<usize>,
    pub params: u64,
    pub macs: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct AnalysisReport {
    pub stages: Vec<StageReport>,
    pub outputs: usize,
    pub total_params: u64,
    pub total_macs: u64,
    pub total_flops: u64,
    pub flop_convention: &'static str,
}

fn vol(d: [usize; 3]) -> u64 {
    d.iter().map(|&v| v as u64).product()
}

/// 3x3x3 conv + instance norm at `dims`.
fn conv_unit(cin: usize, cout: usize, dims: [usize; 3]) -> Cost {
    let (ci, co) = (cin as u64, cout as u64);
    Cost {
        params: co * ci * 27 + co + 2 * co,
        macs: vol(dims) * co * ci * 27,
    }
}

fn conv_block(m2: usize, cin: usize, cout: usize, dims: [usize; 3]) -> Cost {
    let mut c = Cost::default();
    for i in 0..m2 {
        c += conv_unit(if i == 0 { cin } else { cout }, cout, dims);
    }
    c
}

/// Strided (de)conv without bias + instance norm; `fine` is the
/// high-resolution side's extents.
fn resample(cin: usize, cout: usize, stride: [usize; 3], fine: [usize; 3]) -> Cost {
    let (ci, co) = (cin as u64, cout as u64);
    Cost {
        params: ci * co * vol(stride) + 2 * co,
        // every fine voxel receives cin (down) or cin (up) products per output channel
        macs: vol(fine) * ci * co,
    }
}

fn st_block(c: usize, heads: usize, window: [usize; 3], ratio: usize, dims: [usize; 3]) -> Cost {
    let (c, h, r) = (c as u64, heads as u64, ratio as u64);
    let tokens = vol(dims);
    let l = vol(window);
    Cost {
        params: 2 * c + (3 * c * c + 3 * c) + (c * c + c) + h * table_len(window) as u64 + 2 * c + (r * c * c + r * c) + (r * c * c + c),
        // qkv + proj + two matmuls over L keys + MLP
        macs: tokens * (3 * c * c + c * c + 2 * l * c + 2 * r * c * c),
    }
}

fn hybrid(cfg: &ModelConfig, s: usize, conv_in: usize) -> Cost {
    let (c, dims) = (cfg.channels(s), cfg.stage_dims(s));
    let mut cost = Cost::default();
    if cfg.use_st_path {
        for _ in 0..cfg.m1 {
            cost += st_block(c, cfg.heads_at(s), cfg.window, cfg.mlp_ratio, dims);
        }
    }
    if cfg.use_conv_path {
        cost += conv_block(cfg.m2, conv_in, c, dims);
    }
    cost
}

/// Per-stage costs (encoder, resamplers, decoder, head) without building
/// the network.
pub fn analyze(cfg: &ModelConfig) -> Result<AnalysisReport> {
    cfg.check()?;
    let s_total = cfg.stages();
    let mut stages = Vec::with_capacity(s_total);
    for s in 0..s_total {
        let (c, dims) = (cfg.channels(s), cfg.stage_dims(s));
        let mut cost = Cost::default();
        if s == 0 && !(cfg.use_pcm && cfg.n1 > 0) {
            cost += resample(cfg.in_channels, cfg.base_channels, [1; 3], dims);
        }
        let kind = if cfg.is_hybrid(s) {
            cost += hybrid(cfg, s, c);
            if s + 1 < s_total {
                cost += hybrid(cfg, s, 2 * c);
            }
            match (cfg.use_st_path, cfg.use_conv_path) {
                (true, true) => "hybrid (ST + conv)",
                (true, false) => "hybrid (ST only)",
                _ => "hybrid (conv only)",
            }
        } else if cfg.use_pcm {
            cost += conv_block(cfg.m2, if s == 0 { cfg.in_channels } else { c }, c, dims);
            if s + 1 < s_total {
                cost += conv_block(cfg.m2, 2 * c, c, dims);
            }
            "pure conv"
        } else {
            "identity (no PCM)"
        };
        if s + 1 < s_total {
            // down into s+1 and up back from it
            cost += resample(c, 2 * c, cfg.strides[s + 1], dims);
            cost += resample(2 * c, c, cfg.strides[s + 1], dims);
        }
        cost += Cost {
            params: (c * cfg.num_classes + cfg.num_classes) as u64,
            macs: vol(dims) * (c * cfg.num_classes) as u64,
        };
        let windows = (cfg.is_hybrid(s) && cfg.use_st_path)
            .then(|| (0..3).map(|a| dims[a] / cfg.window[a]).product());
        stages.push(StageReport {
            stage: s + 1,
            kind: kind.to_string(),
            extents: dims,
            channels: c,
            windows,
            params: cost.params,
            macs: cost.macs,
        });
    }
    let total_params = stages.iter().map(|s| s.params).sum();
    let total_macs: u64 = stages.iter().map(|s| s.macs).sum();
    Ok(AnalysisReport {
        outputs: s_total,
        stages,
        total_params,
        total_macs,
        total_flops: 2 * total_macs,
        flop_convention: FLOP_CONVENTION,
    })
}

/// Number of parameters of a valid config.
pub fn count_params(cfg: &ModelConfig) -> Result<u64> {
    Ok(analyze(cfg)?.total_params)
}

/// Forward FLOPs for one input patch.
pub fn count_flops(cfg: &ModelConfig) -> Result<u64> {
    Ok(analyze(cfg)?.total_flops)
}

impl AnalysisReport {
    pub fn to_text(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        let _ = writeln!(out, "stage  kind                 extents        channels  windows  params        GMACs");
        for s in &self.stages {
            let ext = format!("{}x{}x{}", s.extents[0], s.extents[1], s.extents[2]);
            let win = s.windows.map_or("-".to_string(), |w| w.to_string());
            let _ = writeln!(
                out,
                "{:<6} {:<20} {:<14} {:<9} {:<8} {:<13} {:.3}",
                s.stage,
                s.kind,
                ext,
                s.channels,
                win,
                s.params,
                s.macs as f64 / 1e9
            );
        }
        let _ = writeln!(out, "outputs: {}", self.outputs);
        let _ = writeln!(out, "parameters: {} ({:.2} M)", self.total_params, self.total_params as f64 / 1e6);
        let _ = writeln!(out, "MACs: {} ({:.2} G)", self.total_macs, self.total_macs as f64 / 1e9);
        let _ = writeln!(out, "FLOPs: {} ({:.2} G)", self.total_flops, self.total_flops as f64 / 1e9);
        let _ = writeln!(out, "convention: {}", self.flop_convention);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Var;
    use crate::model::PhTrans;
    use crate::tensor::gemm::{mac_count, reset_mac_count};
    use crate::tensor::Tensor;

    fn tiny() -> ModelConfig {
        ModelConfig {
            n1: 1,
            n2: 2,
            m1: 2,
            m2: 2,
            base_channels: 4,
            heads: vec![1, 2],
            window: [2, 2, 2],
            strides: vec![[1, 1, 1], [2, 2, 2], [1, 2, 2]],
            in_channels: 2,
            num_classes: 3,
            patch_size: [8, 16, 16],
            use_st_path: true,
            use_conv_path: true,
            use_pcm: true,
            mlp_ratio: 4,
        }
    }

    fn variants() -> Vec<ModelConfig> {
        let mut out = vec![tiny()];
        for (st, conv, pcm) in [(false, true, true), (true, false, true), (true, true, false)] {
            let mut c = tiny();
            (c.use_st_path, c.use_conv_path, c.use_pcm) = (st, conv, pcm);
            out.push(c);
        }
        let mut c = tiny();
        c.n1 = 0;
        c.n2 = 3;
        c.heads = vec![1, 2, 4];
        out.push(c);
        out
    }

    #[test]
    fn params_match_materialized_network() {
        for cfg in variants() {
            let (_, set) = PhTrans::build::<f32>(&cfg, 0).unwrap();
            assert_eq!(count_params(&cfg).unwrap(), set.numel() as u64, "{cfg:?}");
        }
    }

    #[test]
    fn macs_match_executed_gemms() {
        for cfg in variants() {
            let (net, set) = PhTrans::build::<f32>(&cfg, 0).unwrap();
            let [d, h, w] = cfg.patch_size;
            let x = Var::constant(Tensor::<f32>::zeros(vec![1, cfg.in_channels, d, h, w]));
            reset_mac_count();
            net.forward(&set.constants(), &x).unwrap();
            assert_eq!(mac_count(), analyze(&cfg).unwrap().total_macs, "{cfg:?}");
        }
    }

    #[test]
    fn doubling_channels_roughly_quadruples_params() {
        let base = ModelConfig::bcv();
        let mut wide = base.clone();
        wide.base_channels *= 2;
        let ratio = count_params(&wide).unwrap() as f64 / count_params(&base).unwrap() as f64;
        assert!(ratio > 3.5 && ratio < 4.5, "{ratio}");
    }

    #[test]
    fn report_lists_stage_extents() {
        let r = analyze(&ModelConfig::bcv()).unwrap();
        let ext: Vec<[usize; 3]> = r.stages.iter().map(|s| s.extents).collect();
        assert_eq!(ext.first(), Some(&[48, 192, 192]));
        assert_eq!(ext.last(), Some(&[3, 6, 6]));
        assert_eq!(r.total_flops, 2 * r.total_macs);
        assert_eq!(r.stages[2].windows, Some(256));
        assert!(r.to_text().contains("3x6x6"));
    }
}
