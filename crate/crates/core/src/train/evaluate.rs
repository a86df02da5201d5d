use serde::Serialize;

use super::checkpoint::Checkpoint;
use super::synth::Case;
use super::volume::Volume;
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::loss::metrics::{score_case, HdStatus};
use crate::model::PhTrans;
use crate::params::ParamSet;
use crate::tensor::Tensor;

/// Per-voxel argmax over the class axis of `[N, K, D, H, W]` logits.
pub fn argmax_classes(logits: &Tensor<f32>) -> Vec<u32> {
    let s = logits.shape();
    let (n, k) = (s[0], s[1]);
    let v: usize = s[2..].iter().product();
    let z = logits.data();
    let mut out = Vec::with_capacity(n * v);
    for ni in 0..n {
        for vi in 0..v {
            let mut best = 0;
            for c in 1..k {
                if z[(ni * k + c) * v + vi] > z[(ni * k + best) * v + vi] {
                    best = c;
                }
            }
            out.push(best as u32);
        }
    }
    out
}

/// Hard labels for a batch `[N, C, D, H, W]` of patch-sized inputs.
pub fn predict_batch(net: &PhTrans, params: &ParamSet<f32>, x: &Tensor<f32>) -> Result<Vec<u32>> {
    let outs = net.forward(&params.constants(), &Var::constant(x.clone()))?;
    Ok(argmax_classes(outs.last().expect("at least one output").value()))
}

fn tile_starts(extent: usize, patch: usize) -> Vec<usize> {
    let mut s: Vec<usize> = (0..=extent - patch).step_by(patch).collect();
    if s.last() != Some(&(extent - patch)) {
        s.push(extent - patch);
    }
    s
}

/// Hard labels for a whole volume, tiled by patches; where tiles overlap
/// the later tile wins.
pub fn predict_volume(net: &PhTrans, params: &ParamSet<f32>, image: &Volume) -> Result<Vec<u32>> {
    let cfg = net.config();
    let [c, d, h, w] = image.dims;
    let [pd, ph, pw] = cfg.patch_size;
    if c != cfg.in_channels || d < pd || h < ph || w < pw {
        return Err(Error::shape("predict", format!("volume {:?} for patch {:?} with {} channels", image.dims, cfg.patch_size, cfg.in_channels)));
    }
    let mut out = vec![0u32; d * h * w];
    for &z0 in &tile_starts(d, pd) {
        for &y0 in &tile_starts(h, ph) {
            for &x0 in &tile_starts(w, pw) {
                let mut patch = Vec::with_capacity(c * pd * ph * pw);
                for ci in 0..c {
                    for z in 0..pd {
                        for y in 0..ph {
                            let base = ((ci * d + z0 + z) * h + y0 + y) * w + x0;
                            patch.extend_from_slice(&image.data[base..base + pw]);
                        }
                    }
                }
                let pred = predict_batch(net, params, &Tensor::new(vec![1, c, pd, ph, pw], patch)?)?;
                for z in 0..pd {
                    for y in 0..ph {
                        let dst = ((z0 + z) * h + y0 + y) * w + x0;
                        out[dst..dst + pw].copy_from_slice(&pred[(z * ph + y) * pw..(z * ph + y + 1) * pw]);
                    }
                }
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalRow {
    pub case_id: String,
    pub class: u32,
    pub dsc: f64,
    pub hd: f64,
    pub hd_status: HdStatus,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn mean_dsc(&self) -> f64 {
        self.rows.iter().map(|r| r.dsc).sum::<f64>() / self.rows.len().max(1) as f64
    }

    /// Mean over rows of the Hausdorff distance; infinite when any organ
    /// was missed entirely.
    pub fn mean_hd(&self) -> f64 {
        self.rows.iter().map(|r| r.hd).sum::<f64>() / self.rows.len().max(1) as f64
    }

    /// Tab-separated `case_id, class, dsc, hd, hd_status` with a header.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("case_id\tclass\tdsc\thd\thd_status\n");
        for r in &self.rows {
            let status = match r.hd_status {
                HdStatus::Ok => "ok",
                HdStatus::OneEmpty => "one_empty",
                HdStatus::BothEmpty => "both_empty",
            };
            s.push_str(&format!("{}\t{}\t{:.6}\t{}\t{status}\n", r.case_id, r.class, r.dsc, fmt_hd(r.hd)));
        }
        s
    }
}

fn fmt_hd(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.4}")
    }
}

/// DSC and HD per case and foreground class.
pub fn evaluate_params(net: &PhTrans, params: &ParamSet<f32>, cases: &[Case]) -> Result<EvalReport> {
    let k = net.config().num_classes;
    let mut rows = Vec::with_capacity(cases.len() * (k - 1));
    for case in cases {
        let pred = predict_volume(net, params, &case.image)?;
        for s in score_case(&pred, &case.labels, case.spatial(), case.image.spacing, k)? {
            rows.push(EvalRow {
                case_id: case.id.clone(),
                class: s.class,
                dsc: s.dsc,
                hd: s.hd.distance,
                hd_status: s.hd.status,
            });
        }
    }
    Ok(EvalReport { rows })
}

pub fn evaluate(ck: &Checkpoint, cases: &[Case]) -> Result<EvalReport> {
    let (net, params) = ck.instantiate()?;
    evaluate_params(&net, &params, cases)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::train::synth::{generate_synthetic, SynthSpec};

    fn cfg() -> ModelConfig {
        ModelConfig {
            n1: 1,
            n2: 1,
            m1: 1,
            m2: 1,
            base_channels: 4,
            heads: vec![2],
            window: [2, 2, 2],
            strides: vec![[1, 1, 1], [2, 2, 2]],
            in_channels: 1,
            num_classes: 3,
            patch_size: [4, 4, 4],
            use_st_path: true,
            use_conv_path: true,
            use_pcm: true,
            mlp_ratio: 4,
        }
    }

    fn cases(n: usize, dims: [usize; 3]) -> Vec<Case> {
        generate_synthetic(0, &SynthSpec { cases: n, dims, num_classes: 3, in_channels: 1, noise: 0.1, spacing: [1.0; 3] }).unwrap()
    }

    #[test]
    fn argmax_picks_first_maximum() {
        let t = Tensor::new(vec![1, 3, 1, 1, 2], vec![1.0f32, 0.0, 1.0, 2.0, 0.5, 2.0]).unwrap();
        assert_eq!(argmax_classes(&t), vec![0, 1]);
    }

    #[test]
    fn tiles_cover_the_volume() {
        assert_eq!(tile_starts(4, 4), vec![0]);
        assert_eq!(tile_starts(10, 4), vec![0, 4, 6]);
    }

    #[test]
    fn row_count_is_cases_times_foreground_classes() {
        let (net, params) = PhTrans::build::<f32>(&cfg(), 0).unwrap();
        let r = evaluate_params(&net, &params, &cases(3, [4, 6, 5])).unwrap();
        assert_eq!(r.rows.len(), 3 * 2);
        assert_eq!(r.to_tsv().lines().count(), 7);
    }

    #[test]
    fn empty_prediction_reports_zero_and_sentinel() {
        let (net, mut params) = PhTrans::build::<f32>(&cfg(), 0).unwrap();
        let id = params.id("head.0.bias").unwrap();
        params.set(id, Tensor::new(vec![3], vec![1e4f32, -1e4, -1e4]).unwrap()).unwrap();
        let data = cases(1, [4, 4, 4]);
        let r = evaluate_params(&net, &params, &data).unwrap();
        for row in &r.rows {
            if data[0].labels.contains(&row.class) {
                assert_eq!(row.dsc, 0.0);
                assert!(row.hd.is_infinite());
                assert_eq!(row.hd_status, HdStatus::OneEmpty);
            }
        }
        assert!(r.to_tsv().contains("inf\tone_empty"));
    }

    #[test]
    fn tiled_prediction_matches_single_patch() {
        let (net, params) = PhTrans::build::<f32>(&cfg(), 1).unwrap();
        let c = &cases(1, [4, 4, 4])[0];
        let direct = predict_batch(&net, &params, &Tensor::new(vec![1, 1, 4, 4, 4], c.image.data.clone()).unwrap()).unwrap();
        assert_eq!(predict_volume(&net, &params, &c.image).unwrap(), direct);
    }
}
