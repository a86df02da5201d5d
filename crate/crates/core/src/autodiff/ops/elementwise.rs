use std::sync::Arc;

use crate::autodiff::{record, Var};
use crate::error::{Error, Result};
use crate::tensor::{numel, strides, Element, Tensor};

/// Strides of `b` inside the broadcast frame of `a`: zero along broadcast axes.
fn broadcast_strides(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a.len() != b.len() {
        return Err(Error::shape("add", format!("rank mismatch {a:?} vs {b:?}")));
    }
    let bs = strides(b);
    a.iter()
        .zip(b)
        .zip(bs)
        .map(|((&da, &db), s)| match (da == db, db == 1) {
            (true, _) => Ok(if db == 1 { 0 } else { s }),
            (false, true) => Ok(0),
            _ => Err(Error::shape("add", format!("{b:?} does not broadcast to {a:?}"))),
        })
        .collect()
}

/// Calls `f(flat_out, flat_b)` for every element of the broadcast frame.
fn for_each_broadcast(shape: &[usize], bstr: &[usize], mut f: impl FnMut(usize, usize)) {
    let n = numel(shape);
    let rank = shape.len();
    let mut idx = vec![0usize; rank];
    let mut boff = 0usize;
    for out in 0..n {
        f(out, boff);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            boff += bstr[ax];
            if idx[ax] < shape[ax] {
                break;
            }
            boff -= bstr[ax] * shape[ax];
            idx[ax] = 0;
        }
    }
}

/// `a + b`, with `b` broadcast over axes where its extent is 1.
pub fn add<T: Element>(a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
    let (av, bv) = (a.value(), b.value());
    if av.shape() == bv.shape() {
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x + y).collect();
        let out = Tensor::from_parts(av.shape().to_vec(), data);
        return record("add", &[a, b], Arc::new(out), |g, needs| {
            vec![needs[0].then(|| g.clone()), needs[1].then(|| g.clone())]
        });
    }
    let bstr = broadcast_strides(av.shape(), bv.shape())?;
    let mut data = av.data().to_vec();
    let bd = bv.data();
    for_each_broadcast(av.shape(), &bstr, |o, bo| data[o] += bd[bo]);
    let out = Tensor::from_parts(av.shape().to_vec(), data);
    let out_shape = av.shape().to_vec();
    let b_shape = bv.shape().to_vec();
    record("add", &[a, b], Arc::new(out), move |g, needs| {
        let gb = needs[1].then(|| {
            let mut acc = Tensor::zeros(b_shape);
            let d = acc.data_mut();
            let gd = g.data();
            for_each_broadcast(&out_shape, &bstr, |o, bo| d[bo] += gd[o]);
            acc
        });
        vec![needs[0].then(|| g.clone()), gb]
    })
}

/// Elementwise product of equal-shaped tensors.
pub fn mul<T: Element>(a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
    if a.shape() != b.shape() {
        return Err(Error::shape("mul", format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let data = a.value().data().iter().zip(b.value().data()).map(|(&x, &y)| x * y).collect();
    let out = Tensor::from_parts(a.shape().to_vec(), data);
    let (av, bv) = (Arc::clone(a.value_arc()), Arc::clone(b.value_arc()));
    record("mul", &[a, b], Arc::new(out), move |g, needs| {
        let times = |other: &Tensor<T>| {
            let d = g.data().iter().zip(other.data()).map(|(&x, &y)| x * y).collect();
            Tensor::from_parts(g.shape().to_vec(), d)
        };
        vec![needs[0].then(|| times(&bv)), needs[1].then(|| times(&av))]
    })
}

/// `s * x` for a constant scalar `s`.
pub fn scale<T: Element>(x: &Var<T>, s: f64) -> Result<Var<T>> {
    let s = T::of(s);
    let out = x.value().map(|v| v * s);
    record("scale", &[x], Arc::new(out), move |g, _| vec![Some(g.map(|v| v * s))])
}

/// Sum of all elements, as a rank-0 tensor.
pub fn sum<T: Element>(x: &Var<T>) -> Result<Var<T>> {
    let shape = x.shape().to_vec();
    let out = Tensor::scalar(x.value().sum());
    record("sum", &[x], Arc::new(out), move |g, _| vec![Some(Tensor::full(shape, g.item()))])
}

pub fn mean<T: Element>(x: &Var<T>) -> Result<Var<T>> {
    let n = x.value().len() as f64;
    scale(&sum(x)?, 1.0 / n)
}

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact GELU, `x * Phi(x)` with the Gaussian CDF written through `erf`.
pub fn gelu<T: Element>(x: &Var<T>) -> Result<Var<T>> {
    let half = T::of(0.5);
    let inv_sqrt2 = T::of(std::f64::consts::FRAC_1_SQRT_2);
    let out = x.value().map(|v| half * v * (T::one() + (v * inv_sqrt2).erf()));
    let xv = Arc::clone(x.value_arc());
    record("gelu", &[x], Arc::new(out), move |g, _| {
        let c = T::of(FRAC_1_SQRT_2PI);
        let d = xv
            .data()
            .iter()
            .zip(g.data())
            .map(|(&v, &gv)| {
                let cdf = half * (T::one() + (v * inv_sqrt2).erf());
                let pdf = c * (-half * v * v).exp();
                gv * (cdf + v * pdf)
            })
            .collect();
        vec![Some(Tensor::from_parts(xv.shape().to_vec(), d))]
    })
}
