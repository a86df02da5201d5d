//! Swin Transformer blocks over 3-D volumes.

use std::sync::Arc;

use super::attention::{WindowAttention, INIT_STD};
use super::window::{inverse_index, mask_from_codes, partition_index, region_codes, WindowSpec};
use crate::autodiff::{ops, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, Init, ParamBuilder, ParamId};
use crate::tensor::Element;

/// Hidden width of the MLP relative to the token width.
pub const MLP_RATIO: usize = 4;

#[derive(Clone, Debug)]
pub struct StBlock {
    pub ln1: (ParamId, ParamId),
    pub attn: WindowAttention,
    pub ln2: (ParamId, ParamId),
    pub fc1: (ParamId, ParamId),
    pub fc2: (ParamId, ParamId),
    spec: WindowSpec,
    dims: [usize; 3],
    codes: Option<Arc<[u8]>>,
}

fn layer_norm_params<T: Element>(b: &mut ParamBuilder<T>, prefix: &str, dim: usize) -> Result<(ParamId, ParamId)> {
    Ok((
        b.param(format!("{prefix}.weight"), &[dim], Init::Ones)?,
        b.param(format!("{prefix}.bias"), &[dim], Init::Zeros)?,
    ))
}

fn linear_params<T: Element>(b: &mut ParamBuilder<T>, prefix: &str, out: usize, inp: usize) -> Result<(ParamId, ParamId)> {
    Ok((
        b.param(format!("{prefix}.weight"), &[out, inp], Init::TruncNormal(INIT_STD))?,
        b.param(format!("{prefix}.bias"), &[out], Init::Zeros)?,
    ))
}

impl StBlock {
    /// A block for volumes of spatial extents `dims`. Shifted blocks roll by
    /// half a window (see [`WindowSpec::shifted_for`]).
    #[allow(clippy::too_many_arguments)]
    pub fn build<T: Element>(
        b: &mut ParamBuilder<T>,
        prefix: &str,
        dim: usize,
        heads: usize,
        window: [usize; 3],
        dims: [usize; 3],
        shifted: bool,
        mlp_ratio: usize,
    ) -> Result<Self> {
        let spec = if shifted {
            WindowSpec::shifted_for(window, dims)?
        } else {
            WindowSpec::unshifted(window)?
        };
        spec.num_windows(dims)?;
        let codes = if spec.is_shifted() { Some(region_codes(dims, &spec)?) } else { None };
        Ok(Self {
            ln1: layer_norm_params(b, &format!("{prefix}.norm1"), dim)?,
            attn: WindowAttention::build(b, &format!("{prefix}.attn"), dim, heads, window)?,
            ln2: layer_norm_params(b, &format!("{prefix}.norm2"), dim)?,
            fc1: linear_params(b, &format!("{prefix}.mlp.fc1"), mlp_ratio * dim, dim)?,
            fc2: linear_params(b, &format!("{prefix}.mlp.fc2"), dim, mlp_ratio * dim)?,
            spec,
            dims,
            codes,
        })
    }

    pub fn spec(&self) -> &WindowSpec {
        &self.spec
    }

    /// Channels-last forward: `x [N, D, H, W, C]`.
    pub fn forward_cl<T: Element>(&self, p: &Bound<T>, x: &Var<T>) -> Result<Var<T>> {
        let s = x.shape();
        if s.len() != 5 || s[1..4] != self.dims {
            return Err(Error::shape("st_block", format!("expected [N, {:?}, C], got {s:?}", self.dims)));
        }
        let (n, c) = (s[0], s[4]);
        let nw = self.spec.num_windows(self.dims)?;
        let l = self.spec.tokens();
        let idx = partition_index(n, self.dims, &self.spec)?;
        let inv = inverse_index(&idx);

        let h = ops::layer_norm(x, &p[self.ln1.0], &p[self.ln1.1], ops::NORM_EPS)?;
        let tokens = ops::gather_rows(&h, &idx, &[n * nw, l, c])?;
        drop(h);
        let mask = self.codes.as_ref().map(|codes| Var::constant(mask_from_codes::<T>(codes, l)));
        let attended = self.attn.forward(p, &tokens, mask.as_ref())?.output;
        drop(tokens);
        let back = ops::gather_rows(&attended, &inv, s)?;
        drop(attended);
        let x1 = ops::add(x, &back)?;
        drop(back);

        let h = ops::layer_norm(&x1, &p[self.ln2.0], &p[self.ln2.1], ops::NORM_EPS)?;
        let h = ops::gelu(&ops::linear(&h, &p[self.fc1.0], Some(&p[self.fc1.1]))?)?;
        let h = ops::linear(&h, &p[self.fc2.0], Some(&p[self.fc2.1]))?;
        ops::add(&x1, &h)
    }

    /// Volume forward: `x [N, C, D, H, W]`.
    pub fn forward<T: Element>(&self, p: &Bound<T>, x: &Var<T>) -> Result<Var<T>> {
        let cl = ops::permute(x, &[0, 2, 3, 4, 1])?;
        ops::permute(&self.forward_cl(p, &cl)?, &[0, 4, 1, 2, 3])
    }
}

/// `M1` blocks alternating regular and shifted windows, starting regular.
#[derive(Clone, Debug)]
pub struct StPath {
    pub blocks: Vec<StBlock>,
}

impl StPath {
    #[allow(clippy::too_many_arguments)]
    pub fn build<T: Element>(
        b: &mut ParamBuilder<T>,
        prefix: &str,
        depth: usize,
        dim: usize,
        heads: usize,
        window: [usize; 3],
        dims: [usize; 3],
        mlp_ratio: usize,
    ) -> Result<Self> {
        let blocks = (0..depth)
            .map(|i| StBlock::build(b, &format!("{prefix}.{i}"), dim, heads, window, dims, i % 2 == 1, mlp_ratio))
            .collect::<Result<_>>()?;
        Ok(Self { blocks })
    }

    /// `x [N, C, D, H, W]` through every block.
    pub fn forward<T: Element>(&self, p: &Bound<T>, x: &Var<T>) -> Result<Var<T>> {
        let mut cl = ops::permute(x, &[0, 2, 3, 4, 1])?;
        for blk in &self.blocks {
            cl = blk.forward_cl(p, &cl)?;
        }
        ops::permute(&cl, &[0, 4, 1, 2, 3])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck;
    use crate::params::ParamSet;
    use crate::swin3d::window::{cyclic_shift, sequence_to_volume, volume_to_sequence};
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn randn(shape: &[usize], std: f64, seed: u64) -> Tensor<f64> {
        Tensor::randn(shape.to_vec(), std, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn randomize(set: &mut ParamSet<f64>, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for id in set.ids().collect::<Vec<_>>() {
            let shape = set.get(id).shape().to_vec();
            set.set(id, Tensor::randn(shape, 0.3, &mut rng)).unwrap();
        }
    }

    #[test]
    fn zero_projections_make_identity() {
        let mut set = ParamSet::new();
        let blk = StBlock::build(&mut ParamBuilder::new(&mut set, 1), "b", 4, 2, [2, 2, 2], [2, 4, 4], true, 4).unwrap();
        randomize(&mut set, 2);
        for id in [blk.attn.proj_w, blk.attn.proj_b, blk.fc2.0, blk.fc2.1] {
            let shape = set.get(id).shape().to_vec();
            set.set(id, Tensor::zeros(shape)).unwrap();
        }
        let x = Var::constant(randn(&[2, 4, 2, 4, 4], 1.0, 3));
        let y = blk.forward(&set.constants(), &x).unwrap();
        assert!(y.value().bit_eq(x.value()));
    }

    #[test]
    fn matches_unfused_reference() {
        // x' = x + unshift(S2V(MSA(LN(V2S(shift x))))), x'' = x' + MLP(LN(x'))
        let (dims, window) = ([2, 4, 6], [2, 2, 3]);
        let mut set = ParamSet::new();
        let blk = StBlock::build(&mut ParamBuilder::new(&mut set, 4), "b", 6, 3, window, dims, true, 2).unwrap();
        randomize(&mut set, 5);
        let p = set.constants();
        let spec = *blk.spec();
        assert_eq!(spec.shift(), [0, 1, 1]);
        let x = Var::constant(randn(&[1, 6, 2, 4, 6], 1.0, 6));
        let o: [isize; 3] = std::array::from_fn(|a| spec.shift()[a] as isize);
        let plain = WindowSpec::unshifted(window).unwrap();
        let seq = volume_to_sequence(&cyclic_shift(&x, o).unwrap(), &plain).unwrap();
        let seq = ops::layer_norm(&seq, &p[blk.ln1.0], &p[blk.ln1.1], ops::NORM_EPS).unwrap();
        let mask = Var::constant(crate::swin3d::window::build_attention_mask::<f64>(dims, &spec).unwrap());
        let att = blk.attn.forward(&p, &seq, Some(&mask)).unwrap().output;
        let vol = sequence_to_volume(&att, &plain, 1, dims).unwrap();
        let x1 = ops::add(&x, &cyclic_shift(&vol, o.map(|v| -v)).unwrap()).unwrap();
        let cl = ops::permute(&x1, &[0, 2, 3, 4, 1]).unwrap();
        let h = ops::layer_norm(&cl, &p[blk.ln2.0], &p[blk.ln2.1], ops::NORM_EPS).unwrap();
        let h = ops::gelu(&ops::linear(&h, &p[blk.fc1.0], Some(&p[blk.fc1.1])).unwrap()).unwrap();
        let h = ops::linear(&h, &p[blk.fc2.0], Some(&p[blk.fc2.1])).unwrap();
        let want = ops::add(&x1, &ops::permute(&h, &[0, 4, 1, 2, 3]).unwrap()).unwrap();
        let got = blk.forward(&p, &x).unwrap();
        assert!(got.value().max_abs_diff(want.value()) < 1e-12);
    }

    #[test]
    fn zero_shift_equals_unshifted_bitwise() {
        // window spanning the volume forces a zero shift
        let dims = [2, 2, 2];
        let build = |shifted| {
            let mut set = ParamSet::<f32>::new();
            let blk = StBlock::build(&mut ParamBuilder::new(&mut set, 9), "b", 4, 1, dims, dims, shifted, 4).unwrap();
            (set, blk)
        };
        let ((s1, b1), (s2, b2)) = (build(false), build(true));
        assert!(!b2.spec().is_shifted());
        let x = Var::constant(Tensor::<f32>::randn(vec![1, 4, 2, 2, 2], 1.0, &mut ChaCha8Rng::seed_from_u64(1)));
        let y1 = b1.forward(&s1.constants(), &x).unwrap();
        let y2 = b2.forward(&s2.constants(), &x).unwrap();
        assert!(y1.value().bit_eq(y2.value()));
    }

    #[test]
    fn path_alternates_regular_and_shifted() {
        let mut set = ParamSet::<f32>::new();
        let path = StPath::build(&mut ParamBuilder::new(&mut set, 0), "st", 2, 8, 2, [2, 2, 2], [4, 4, 4], 4).unwrap();
        assert!(!path.blocks[0].spec().is_shifted());
        assert_eq!(path.blocks[1].spec().shift(), [1, 1, 1]);
        let x = Var::constant(Tensor::<f32>::zeros(vec![1, 8, 4, 4, 4]));
        assert_eq!(path.forward(&set.constants(), &x).unwrap().shape(), &[1, 8, 4, 4, 4]);
    }

    #[test]
    fn block_gradients_match_finite_differences() {
        let mut set = ParamSet::new();
        let path = StPath::build(&mut ParamBuilder::new(&mut set, 11), "st", 2, 4, 2, [1, 2, 2], [2, 2, 4], 2).unwrap();
        randomize(&mut set, 12);
        let mut inputs = vec![randn(&[1, 4, 2, 2, 4], 1.0, 13)];
        inputs.extend(set.ids().map(|id| set.get(id).clone()));
        let report = gradcheck::check(
            "st_path",
            &inputs,
            |v| path.forward(&Bound::from_vars(v[1..].to_vec()), &v[0]),
            14,
            Some(6),
        )
        .unwrap();
        assert!(report.passes(1e-4), "{report:?}");
    }

}
