//! Convolutional building blocks: conv units, conv blocks and resamplers.

use crate::autodiff::{ops, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, Init, ParamBuilder, ParamId};
use crate::tensor::Element;

/// Conv 3x3x3 (pad 1) -> GELU -> instance norm.
#[derive(Clone, Debug)]
pub struct ConvUnit {
    pub weight: ParamId,
    pub bias: ParamId,
    pub gamma: ParamId,
    pub beta: ParamId,
    cin: usize,
}

impl ConvUnit {
    pub fn build<T: Element>(b: &mut ParamBuilder<T>, prefix: &str, cin: usize, cout: usize) -> Result<Self> {
        Ok(Self {
            weight: b.param(format!("{prefix}.conv.weight"), &[cout, cin, 3, 3, 3], Init::He { fan_in: cin * 27 })?,
            bias: b.param(format!("{prefix}.conv.bias"), &[cout], Init::Zeros)?,
            gamma: b.param(format!("{prefix}.norm.weight"), &[cout], Init::Ones)?,
            beta: b.param(format!("{prefix}.norm.bias"), &[cout], Init::Zeros)?,
            cin,
        })
    }

    pub fn forward<T: Element>(&self, p: &Bound<T>, x: &Var<T>) -> Result<Var<T>> {
        if x.shape().get(1) != Some(&self.cin) {
            return Err(Error::shape("conv_unit", format!("expected {} channels, got {:?}", self.cin, x.shape())));
        }
        let y = ops::conv3d(x, &p[self.weight], Some(&p[self.bias]), [1; 3], [1; 3])?;
        let y = ops::gelu(&y)?;
        ops::instance_norm(&y, &p[self.gamma], &p[self.beta], ops::NORM_EPS)
    }
}

/// `M2` conv units in sequence; the first maps `cin` to `cout`.
#[derive(Clone, Debug)]
pub struct ConvBlock {
    pub units: Vec<ConvUnit>,
}

impl ConvBlock {
    pub fn build<T: Element>(b: &mut ParamBuilder<T>, prefix: &str, depth: usize, cin: usize, cout: usize) -> Result<Self> {
        if depth == 0 {
            return Err(Error::invalid("conv_block", "at least one unit is required"));
        }
        let units = (0..depth)
            .map(|i| ConvUnit::build(b, &format!("{prefix}.{i}"), if i == 0 { cin } else { cout }, cout))
            .collect::<Result<_>>()?;
        Ok(Self { units })
    }

    pub fn forward<T: Element>(&self, p: &Bound<T>, x: &Var<T>) -> Result<Var<T>> {
        let mut y = self.units[0].forward(p, x)?;
        for u in &self.units[1..] {
            y = u.forward(p, &y)?;
        }
        Ok(y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResampleKind {
    /// Strided convolution, kernel = stride.
    Down,
    /// Strided transposed convolution, kernel = stride.
    Up,
}

/// Strided (de)convolution followed by instance norm. The convolution has
/// no bias: the norm removes any per-channel constant.
#[derive(Clone, Debug)]
pub struct Resample {
    pub kind: ResampleKind,
    pub weight: ParamId,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub stride: [usize; 3],
}

impl Resample {
    pub fn build<T: Element>(
        b: &mut ParamBuilder<T>,
        prefix: &str,
        kind: ResampleKind,
        cin: usize,
        cout: usize,
        stride: [usize; 3],
    ) -> Result<Self> {
        if stride.iter().any(|&s| s == 0) {
            return Err(Error::invalid("resample", format!("stride {stride:?} has a zero component")));
        }
        let kv: usize = stride.iter().product();
        let [sd, sh, sw] = stride;
        let (shape, fan_in) = match kind {
            ResampleKind::Down => ([cout, cin, sd, sh, sw], cin * kv),
            ResampleKind::Up => ([cin, cout, sd, sh, sw], cin),
        };
        Ok(Self {
            kind,
            weight: b.param(format!("{prefix}.weight"), &shape, Init::He { fan_in })?,
            gamma: b.param(format!("{prefix}.norm.weight"), &[cout], Init::Ones)?,
            beta: b.param(format!("{prefix}.norm.bias"), &[cout], Init::Zeros)?,
            stride,
        })
    }

    pub fn forward<T: Element>(&self, p: &Bound<T>, x: &Var<T>) -> Result<Var<T>> {
        let y = match self.kind {
            ResampleKind::Down => {
                if let Some(a) = (0..3).find(|&a| x.shape().get(a + 2).is_some_and(|&e| e % self.stride[a] != 0)) {
                    return Err(Error::shape(
                        "downsample",
                        format!("axis {} extent {} is not divisible by stride {}", a + 1, x.shape()[a + 2], self.stride[a]),
                    ));
                }
                ops::conv3d(x, &p[self.weight], None, self.stride, [0; 3])?
            }
            ResampleKind::Up => ops::conv_transpose3d(x, &p[self.weight], None, self.stride)?,
        };
        ops::instance_norm(&y, &p[self.gamma], &p[self.beta], ops::NORM_EPS)
    }
}

/// 1x1x1 convolution to class logits.
#[derive(Clone, Debug)]
pub struct Head {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Head {
    pub fn build<T: Element>(b: &mut ParamBuilder<T>, prefix: &str, cin: usize, classes: usize) -> Result<Self> {
        Ok(Self {
            weight: b.param(format!("{prefix}.weight"), &[classes, cin, 1, 1, 1], Init::He { fan_in: cin })?,
            bias: b.param(format!("{prefix}.bias"), &[classes], Init::Zeros)?,
        })
    }

    pub fn forward<T: Element>(&self, p: &Bound<T>, x: &Var<T>) -> Result<Var<T>> {
        ops::conv3d(x, &p[self.weight], Some(&p[self.bias]), [1; 3], [0; 3])
    }
}
