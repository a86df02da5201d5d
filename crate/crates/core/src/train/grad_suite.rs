//! Registry of finite-difference checks covering every differentiable op,
//! the composite blocks and a tiny end-to-end network.

use std::sync::Arc;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::gradcheck::{check, GradCheckReport};
use crate::autodiff::{ops, Tape, Var};
use crate::conv_path::{ConvBlock, Resample, ResampleKind};
use crate::error::Result;
use crate::loss::{cross_entropy, deep_supervision_loss, joint_loss, soft_dice_loss, LabelVolume, LossConfig};
use crate::model::{Hybrid, ModelConfig, PhTrans};
use crate::params::{Bound, ParamBuilder, ParamSet};
use crate::swin3d::{build_attention_mask, cyclic_shift, sequence_to_volume, volume_to_sequence, StBlock, WindowAttention, WindowSpec};
use crate::tensor::Tensor;

/// Tolerance for single ops and blocks.
pub const OP_TOLERANCE: f64 = 1e-4;
/// Tolerance for spot checks through the whole network.
pub const MODEL_TOLERANCE: f64 = 1e-3;
/// Parameter entries spot-checked through the tiny network.
pub const MODEL_SPOT_CHECKS: usize = 20;

#[derive(Clone, Debug, Serialize)]
pub struct SuiteEntry {
    pub report: GradCheckReport,
    pub tolerance: f64,
    pub passed: bool,
}

type CheckFn = fn(u64) -> Result<GradCheckReport>;

fn rnd(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::randn(shape.to_vec(), 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn labels(dims: [usize; 4], k: u32, seed: u64) -> LabelVolume {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = dims.iter().product();
    LabelVolume::new(dims, (0..n).map(|_| rng.random_range(0..k)).collect(), k as usize).expect("valid labels")
}

/// Jitters every parameter so zero-initialized ones are exercised too.
fn jitter(set: &mut ParamSet<f64>, std: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for id in set.ids().collect::<Vec<_>>() {
        let t = set.get(id);
        let noise = Tensor::<f64>::randn(t.shape().to_vec(), std, &mut rng);
        let mut t = t.clone();
        t.add_assign(&noise);
        set.set(id, t).expect("same shape");
    }
}

fn with_params(x: Vec<Tensor<f64>>, set: &ParamSet<f64>) -> Vec<Tensor<f64>> {
    let mut v = x;
    v.extend(set.iter().map(|(_, t)| t.clone()));
    v
}

fn c_gelu(s: u64) -> Result<GradCheckReport> {
    check("gelu", &[rnd(&[3, 5], s)], |v| ops::gelu(&v[0]), s, None)
}
fn c_add(s: u64) -> Result<GradCheckReport> {
    check("add (broadcast)", &[rnd(&[2, 3, 4], s), rnd(&[1, 3, 1], s + 1)], |v| ops::add(&v[0], &v[1]), s, None)
}
fn c_mul(s: u64) -> Result<GradCheckReport> {
    check("mul", &[rnd(&[6], s), rnd(&[6], s + 1)], |v| ops::mul(&v[0], &v[1]), s, None)
}
fn c_scale(s: u64) -> Result<GradCheckReport> {
    check("scale", &[rnd(&[4], s)], |v| ops::scale(&v[0], -0.7), s, None)
}
fn c_sum(s: u64) -> Result<GradCheckReport> {
    check("sum", &[rnd(&[2, 3], s)], |v| ops::sum(&v[0]), s, None)
}
fn c_mean(s: u64) -> Result<GradCheckReport> {
    check("mean", &[rnd(&[7], s)], |v| ops::mean(&v[0]), s, None)
}
fn c_softmax(s: u64) -> Result<GradCheckReport> {
    check("softmax", &[rnd(&[2, 3, 4], s)], |v| ops::softmax(&v[0], 1), s, None)
}
fn c_linear(s: u64) -> Result<GradCheckReport> {
    check("linear", &[rnd(&[2, 3, 4], s), rnd(&[5, 4], s + 1), rnd(&[5], s + 2)], |v| ops::linear(&v[0], &v[1], Some(&v[2])), s, None)
}
fn c_matmul(s: u64) -> Result<GradCheckReport> {
    check("matmul_batched", &[rnd(&[2, 3, 4], s), rnd(&[2, 4, 2], s + 1)], |v| ops::matmul_batched(&v[0], &v[1]), s, None)
}
fn c_layer_norm(s: u64) -> Result<GradCheckReport> {
    check("layer_norm", &[rnd(&[4, 5], s), rnd(&[5], s + 1), rnd(&[5], s + 2)], |v| ops::layer_norm(&v[0], &v[1], &v[2], ops::NORM_EPS), s, None)
}
fn c_instance_norm(s: u64) -> Result<GradCheckReport> {
    check(
        "instance_norm",
        &[rnd(&[2, 3, 2, 2, 3], s), rnd(&[3], s + 1), rnd(&[3], s + 2)],
        |v| ops::instance_norm(&v[0], &v[1], &v[2], ops::NORM_EPS),
        s,
        None,
    )
}
fn c_reshape(s: u64) -> Result<GradCheckReport> {
    check("reshape", &[rnd(&[2, 6], s)], |v| ops::reshape(&v[0], &[3, 4]), s, None)
}
fn c_permute(s: u64) -> Result<GradCheckReport> {
    check("permute", &[rnd(&[2, 3, 4], s)], |v| ops::permute(&v[0], &[2, 0, 1]), s, None)
}
fn c_concat(s: u64) -> Result<GradCheckReport> {
    check("concat", &[rnd(&[2, 3, 2], s), rnd(&[2, 1, 2], s + 1)], |v| ops::concat(&v[0], &v[1], 1), s, None)
}
fn c_narrow(s: u64) -> Result<GradCheckReport> {
    check("narrow", &[rnd(&[4, 3], s)], |v| ops::narrow(&v[0], 0, 1, 2), s, None)
}
fn c_gather(s: u64) -> Result<GradCheckReport> {
    let idx: Arc<[u32]> = vec![0u32, 2, 2, 1, 0, 3].into();
    check("gather", &[rnd(&[4], s)], |v| ops::gather(&v[0], &idx, &[2, 3]), s, None)
}
fn c_gather_rows(s: u64) -> Result<GradCheckReport> {
    let rows: Arc<[u32]> = vec![2u32, 0, 2, 1].into();
    check("gather_rows", &[rnd(&[3, 2], s)], |v| ops::gather_rows(&v[0], &rows, &[4, 2]), s, None)
}
fn c_conv3d(s: u64) -> Result<GradCheckReport> {
    check(
        "conv3d",
        &[rnd(&[2, 2, 4, 3, 5], s), rnd(&[3, 2, 3, 3, 3], s + 1), rnd(&[3], s + 2)],
        |v| ops::conv3d(&v[0], &v[1], Some(&v[2]), [1; 3], [1; 3]),
        s,
        None,
    )
}
fn c_conv3d_strided(s: u64) -> Result<GradCheckReport> {
    check(
        "conv3d (stride 2)",
        &[rnd(&[1, 2, 4, 4, 2], s), rnd(&[3, 2, 2, 2, 1], s + 1)],
        |v| ops::conv3d(&v[0], &v[1], None, [2, 2, 1], [0; 3]),
        s,
        None,
    )
}
fn c_deconv(s: u64) -> Result<GradCheckReport> {
    check(
        "conv_transpose3d",
        &[rnd(&[1, 3, 2, 2, 2], s), rnd(&[3, 2, 1, 2, 2], s + 1), rnd(&[2], s + 2)],
        |v| ops::conv_transpose3d(&v[0], &v[1], Some(&v[2]), [1, 2, 2]),
        s,
        None,
    )
}
fn c_cyclic_shift(s: u64) -> Result<GradCheckReport> {
    check("cyclic_shift", &[rnd(&[1, 2, 2, 4, 3], s)], |v| cyclic_shift(&v[0], [1, -2, 1]), s, None)
}
fn c_v2s(s: u64) -> Result<GradCheckReport> {
    let spec = WindowSpec::shifted_for([2, 2, 2], [2, 4, 4])?;
    check(
        "volume_to_sequence / sequence_to_volume",
        &[rnd(&[1, 3, 2, 4, 4], s)],
        |v| {
            let t = volume_to_sequence(&v[0], &spec)?;
            sequence_to_volume(&ops::scale(&t, 2.0)?, &spec, 1, [2, 4, 4])
        },
        s,
        None,
    )
}
fn c_cross_entropy(s: u64) -> Result<GradCheckReport> {
    let lab = labels([2, 1, 2, 3], 3, s);
    check("cross_entropy", &[rnd(&[2, 3, 1, 2, 3], s)], |v| cross_entropy(&v[0], &lab), s, None)
}
fn c_dice(s: u64) -> Result<GradCheckReport> {
    let lab = labels([2, 1, 2, 3], 3, s);
    check("soft_dice_loss", &[rnd(&[2, 3, 1, 2, 3], s)], |v| soft_dice_loss(&v[0], &lab, 1e-5), s, None)
}
fn c_joint(s: u64) -> Result<GradCheckReport> {
    let lab = labels([1, 2, 2, 2], 2, s);
    check("joint_loss", &[rnd(&[1, 2, 2, 2, 2], s)], |v| joint_loss(&v[0], &lab, &LossConfig::default()), s, None)
}
fn c_deep_sup(s: u64) -> Result<GradCheckReport> {
    let lab = labels([1, 2, 4, 4], 3, s);
    check(
        "deep_supervision_loss",
        &[rnd(&[1, 3, 1, 2, 2], s), rnd(&[1, 3, 2, 4, 4], s + 1)],
        |v| deep_supervision_loss(v, &lab, &LossConfig::default()),
        s,
        None,
    )
}

fn c_attention(s: u64) -> Result<GradCheckReport> {
    let mut set = ParamSet::new();
    let attn = WindowAttention::build(&mut ParamBuilder::new(&mut set, s), "attn", 4, 2, [2, 2, 2])?;
    jitter(&mut set, 0.3, s + 1);
    let spec = WindowSpec::shifted_for([2, 2, 2], [2, 4, 4])?;
    let mask = Var::constant(build_attention_mask::<f64>([2, 4, 4], &spec)?);
    check(
        "window_attention (masked)",
        &with_params(vec![rnd(&[4, 8, 4], s + 2)], &set),
        |v| Ok(attn.forward(&Bound::from_vars(v[1..].to_vec()), &v[0], Some(&mask))?.output),
        s,
        Some(8),
    )
}

fn c_st_block(s: u64) -> Result<GradCheckReport> {
    let mut set = ParamSet::new();
    let blk = StBlock::build(&mut ParamBuilder::new(&mut set, s), "st", 4, 2, [2, 2, 2], [2, 4, 4], true, 2)?;
    jitter(&mut set, 0.2, s + 1);
    check(
        "st_block (shifted)",
        &with_params(vec![rnd(&[1, 4, 2, 4, 4], s + 2)], &set),
        |v| blk.forward(&Bound::from_vars(v[1..].to_vec()), &v[0]),
        s,
        Some(8),
    )
}

fn block_cfg() -> ModelConfig {
    ModelConfig {
        n1: 1,
        n2: 1,
        m1: 2,
        m2: 1,
        base_channels: 2,
        heads: vec![2],
        window: [2, 2, 2],
        strides: vec![[1, 1, 1], [2, 2, 2]],
        in_channels: 1,
        num_classes: 2,
        patch_size: [4, 8, 8],
        use_st_path: true,
        use_conv_path: true,
        use_pcm: true,
        mlp_ratio: 2,
    }
}

fn c_trans_conv(s: u64) -> Result<GradCheckReport> {
    let cfg = block_cfg();
    let mut set = ParamSet::new();
    // decoder form: ST(x_up + y) + Conv([x_up, y])
    let h = Hybrid::build(&mut ParamBuilder::new(&mut set, s), "dec", &cfg, 1, 8)?;
    jitter(&mut set, 0.2, s + 1);
    check(
        "trans_conv_block",
        &with_params(vec![rnd(&[1, 4, 2, 4, 4], s + 2), rnd(&[1, 4, 2, 4, 4], s + 3)], &set),
        |v| {
            let p = Bound::from_vars(v[2..].to_vec());
            h.forward_opt(&p, Some(&ops::add(&v[0], &v[1])?), Some(&ops::concat(&v[0], &v[1], 1)?))
        },
        s,
        Some(6),
    )
}

fn c_conv_block(s: u64) -> Result<GradCheckReport> {
    let mut set = ParamSet::new();
    let blk = ConvBlock::build(&mut ParamBuilder::new(&mut set, s), "conv", 2, 2, 3)?;
    jitter(&mut set, 0.2, s + 1);
    check(
        "conv_block",
        &with_params(vec![rnd(&[1, 2, 3, 3, 2], s + 2)], &set),
        |v| blk.forward(&Bound::from_vars(v[1..].to_vec()), &v[0]),
        s,
        Some(8),
    )
}

fn c_resample(s: u64) -> Result<GradCheckReport> {
    let mut set = ParamSet::new();
    let mut b = ParamBuilder::new(&mut set, s);
    let down = Resample::build(&mut b, "down", ResampleKind::Down, 2, 4, [1, 2, 2])?;
    let up = Resample::build(&mut b, "up", ResampleKind::Up, 4, 2, [1, 2, 2])?;
    jitter(&mut set, 0.2, s + 1);
    check(
        "resample down + up",
        &with_params(vec![rnd(&[1, 2, 2, 4, 4], s + 2)], &set),
        |v| {
            let p = Bound::from_vars(v[1..].to_vec());
            up.forward(&p, &down.forward(&p, &v[0])?)
        },
        s,
        Some(8),
    )
}

/// The small end-to-end network used for spot checks.
pub fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        n1: 1,
        n2: 2,
        m1: 2,
        m2: 1,
        base_channels: 4,
        heads: vec![1, 2],
        window: [2, 2, 2],
        strides: vec![[1, 1, 1], [2, 2, 2], [2, 2, 2]],
        in_channels: 1,
        num_classes: 3,
        patch_size: [8, 16, 16],
        use_st_path: true,
        use_conv_path: true,
        use_pcm: true,
        mlp_ratio: 4,
    }
}

fn tiny_setup(seed: u64) -> Result<(PhTrans, ParamSet<f64>, Tensor<f64>, LabelVolume)> {
    let cfg = tiny_model_config();
    let (net, mut set) = PhTrans::build::<f64>(&cfg, seed)?;
    jitter(&mut set, 0.05, seed + 1);
    let [d, h, w] = cfg.patch_size;
    let x = rnd(&[1, 1, d, h, w], seed + 2);
    Ok((net, set, x, labels([1, d, h, w], 3, seed + 3)))
}

/// Spot checks of the deep-supervision loss of the tiny network with
/// respect to randomly chosen parameter entries.
fn c_tiny_model(s: u64) -> Result<GradCheckReport> {
    let (net, set, x, lab) = tiny_setup(s)?;
    let all: Vec<Tensor<f64>> = set.iter().map(|(_, t)| t.clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(s + 4);
    let picked: Vec<usize> = sample(&mut rng, all.len(), MODEL_SPOT_CHECKS.min(all.len())).into_vec();
    let inputs: Vec<Tensor<f64>> = picked.iter().map(|&i| all[i].clone()).collect();
    let consts: Vec<Var<f64>> = all.iter().map(|t| Var::constant(t.clone())).collect();
    let xv = Var::constant(x);
    check(
        "tiny end-to-end model",
        &inputs,
        |v| {
            let mut vars = consts.clone();
            for (k, &i) in picked.iter().enumerate() {
                vars[i] = v[k].clone();
            }
            let outs = net.forward(&Bound::from_vars(vars), &xv)?;
            deep_supervision_loss(&outs, &lab, &LossConfig::default())
        },
        s,
        Some(1),
    )
}

/// Names of tiny-network parameters whose loss gradient is missing or
/// identically zero.
pub fn tiny_model_dead_parameters(seed: u64) -> Result<Vec<String>> {
    let (net, set, x, lab) = tiny_setup(seed)?;
    let tape = Tape::new();
    let p = set.bind(&tape);
    let loss = deep_supervision_loss(&net.forward(&p, &Var::constant(x))?, &lab, &LossConfig::default())?;
    let g = tape.backward(&loss)?;
    Ok(set
        .iter()
        .zip(p.vars())
        .filter(|(_, v)| g.get(v).is_none_or(|t| t.data().iter().all(|&e| e == 0.0)))
        .map(|((n, _), _)| n.to_string())
        .collect())
}

/// Every registered check with its tolerance.
pub fn registry() -> Vec<(&'static str, f64, CheckFn)> {
    let op = OP_TOLERANCE;
    vec![
        ("gelu", op, c_gelu as CheckFn),
        ("add", op, c_add),
        ("mul", op, c_mul),
        ("scale", op, c_scale),
        ("sum", op, c_sum),
        ("mean", op, c_mean),
        ("softmax", op, c_softmax),
        ("linear", op, c_linear),
        ("matmul_batched", op, c_matmul),
        ("layer_norm", op, c_layer_norm),
        ("instance_norm", op, c_instance_norm),
        ("reshape", op, c_reshape),
        ("permute", op, c_permute),
        ("concat", op, c_concat),
        ("narrow", op, c_narrow),
        ("gather", op, c_gather),
        ("gather_rows", op, c_gather_rows),
        ("conv3d", op, c_conv3d),
        ("conv3d_strided", op, c_conv3d_strided),
        ("conv_transpose3d", op, c_deconv),
        ("cyclic_shift", op, c_cyclic_shift),
        ("volume_to_sequence", op, c_v2s),
        ("cross_entropy", op, c_cross_entropy),
        ("soft_dice_loss", op, c_dice),
        ("joint_loss", op, c_joint),
        ("deep_supervision_loss", op, c_deep_sup),
        ("window_attention", op, c_attention),
        ("st_block", op, c_st_block),
        ("trans_conv_block", op, c_trans_conv),
        ("conv_block", op, c_conv_block),
        ("resample", op, c_resample),
        ("tiny_model", MODEL_TOLERANCE, c_tiny_model),
    ]
}

/// Runs the whole registry.
pub fn run_all(seed: u64) -> Result<Vec<SuiteEntry>> {
    registry()
        .into_iter()
        .map(|(_, tol, f)| {
            let report = f(seed)?;
            Ok(SuiteEntry { passed: report.passes(tol), report, tolerance: tol })
        })
        .collect()
}
