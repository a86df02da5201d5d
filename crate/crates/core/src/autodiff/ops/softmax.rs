use std::sync::Arc;

use crate::autodiff::{record, Var};
use crate::error::{Error, Result};
use crate::tensor::{numel, Element, Tensor};

/// Calls `f(base, stride)` for every 1-D fiber along `axis`.
pub(crate) fn for_each_fiber(shape: &[usize], axis: usize, mut f: impl FnMut(usize, usize)) {
    let outer = numel(&shape[..axis]);
    let n = shape[axis];
    let inner = numel(&shape[axis + 1..]);
    for o in 0..outer {
        for i in 0..inner {
            f(o * n * inner + i, inner);
        }
    }
}

/// Max-subtracted softmax along `axis`.
pub fn softmax<T: Element>(x: &Var<T>, axis: usize) -> Result<Var<T>> {
    let shape = x.shape().to_vec();
    if axis >= shape.len() {
        return Err(Error::invalid("softmax", format!("axis {axis} out of range for {shape:?}")));
    }
    let n = shape[axis];
    let src = x.value().data();
    let mut out = vec![T::zero(); src.len()];
    for_each_fiber(&shape, axis, |base, stride| {
        let mut m = T::neg_infinity();
        for k in 0..n {
            m = m.max(src[base + k * stride]);
        }
        let mut z = T::zero();
        for k in 0..n {
            let e = (src[base + k * stride] - m).exp();
            out[base + k * stride] = e;
            z += e;
        }
        for k in 0..n {
            out[base + k * stride] /= z;
        }
    });
    let y = Arc::new(Tensor::from_parts(shape.clone(), out));
    let yb = Arc::clone(&y);
    record("softmax", &[x], y, move |g, _| {
        let (yd, gd) = (yb.data(), g.data());
        let mut gx = vec![T::zero(); yd.len()];
        for_each_fiber(&shape, axis, |base, stride| {
            let mut dot = T::zero();
            for k in 0..n {
                let i = base + k * stride;
                dot += gd[i] * yd[i];
            }
            for k in 0..n {
                let i = base + k * stride;
                gx[i] = yd[i] * (gd[i] - dot);
            }
        });
        vec![Some(Tensor::from_parts(shape, gx))]
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_logits_give_uniform_weights() {
        let x = Var::constant(Tensor::<f64>::full(vec![2, 5], 3.7));
        let y = softmax(&x, 1).unwrap();
        for v in y.value().data() {
            assert!((v - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn axis_out_of_range() {
        let x = Var::constant(Tensor::<f32>::zeros(vec![2, 2]));
        assert!(softmax(&x, 2).is_err());
    }

    proptest! {
        #[test]
        fn rows_sum_to_one_even_for_extreme_logits(
            vals in proptest::collection::vec(-1.0e4f64..1.0e4, 12), axis in 0usize..2,
        ) {
            let x = Var::constant(Tensor::new(vec![3, 4], vals).unwrap());
            let y = softmax(&x, axis).unwrap();
            let d = y.value().data();
            prop_assert!(d.iter().all(|&v| v >= 0.0));
            let (rows, cols) = (3, 4);
            if axis == 1 {
                for r in 0..rows {
                    let s: f64 = d[r * cols..(r + 1) * cols].iter().sum();
                    prop_assert!((s - 1.0).abs() < 1e-6);
                }
            } else {
                for c in 0..cols {
                    let s: f64 = (0..rows).map(|r| d[r * cols + c]).sum();
                    prop_assert!((s - 1.0).abs() < 1e-6);
                }
            }
        }

        #[test]
        fn rows_sum_to_one_in_single_precision(vals in proptest::collection::vec(-1.0e4f32..1.0e4, 8)) {
            let x = Var::constant(Tensor::new(vec![8], vals).unwrap());
            let y = softmax(&x, 0).unwrap();
            let s: f64 = y.value().data().iter().map(|&v| v as f64).sum();
            prop_assert!((s - 1.0).abs() < 1e-6);
        }
    }
}
