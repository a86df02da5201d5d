use std::sync::Arc;

use crate::autodiff::{record, Var};
use crate::error::{Error, Result};
use crate::tensor::gemm::{gemm, Layout};
use crate::tensor::{numel, Element, Tensor};

/// `y = x wᵀ + b` over the last axis: `x [..., cin]`, `w [cout, cin]`, `b [cout]`.
pub fn linear<T: Element>(x: &Var<T>, w: &Var<T>, b: Option<&Var<T>>) -> Result<Var<T>> {
    let xs = x.shape();
    let ws = w.shape();
    if xs.is_empty() || ws.len() != 2 || ws[1] != xs[xs.len() - 1] {
        return Err(Error::shape("linear", format!("x {xs:?}, w {ws:?}")));
    }
    let (cout, cin) = (ws[0], ws[1]);
    if let Some(b) = b {
        if b.shape() != [cout] {
            return Err(Error::shape("linear", format!("bias {:?}, expected [{cout}]", b.shape())));
        }
    }
    let rows = numel(&xs[..xs.len() - 1]);
    let mut out = vec![T::zero(); rows * cout];
    if let Some(b) = b {
        for r in out.chunks_mut(cout) {
            r.copy_from_slice(b.value().data());
        }
    }
    let beta = if b.is_some() { T::one() } else { T::zero() };
    gemm(
        rows,
        cin,
        cout,
        T::one(),
        x.value().data(),
        Layout::row_major(cin),
        w.value().data(),
        Layout::col_major(cin),
        beta,
        &mut out,
        Layout::row_major(cout),
    );
    let mut shape = xs.to_vec();
    *shape.last_mut().unwrap() = cout;
    let (xv, wv) = (Arc::clone(x.value_arc()), Arc::clone(w.value_arc()));
    let mut inputs = vec![x, w];
    inputs.extend(b);
    record("linear", &inputs, Arc::new(Tensor::from_parts(shape, out)), move |g, needs| {
        let gd = g.data();
        let gx = needs[0].then(|| {
            let mut d = vec![T::zero(); rows * cin];
            gemm(rows, cout, cin, T::one(), gd, Layout::row_major(cout), wv.data(), Layout::row_major(cin), T::zero(), &mut d, Layout::row_major(cin));
            Tensor::from_parts(xv.shape().to_vec(), d)
        });
        let gw = needs[1].then(|| {
            let mut d = vec![T::zero(); cout * cin];
            gemm(cout, rows, cin, T::one(), gd, Layout::col_major(cout), xv.data(), Layout::row_major(cin), T::zero(), &mut d, Layout::row_major(cin));
            Tensor::from_parts(vec![cout, cin], d)
        });
        let mut grads = vec![gx, gw];
        if needs.len() == 3 {
            grads.push(needs[2].then(|| {
                let mut d = vec![T::zero(); cout];
                for r in gd.chunks(cout) {
                    for (acc, &v) in d.iter_mut().zip(r) {
                        *acc += v;
                    }
                }
                Tensor::from_parts(vec![cout], d)
            }));
        }
        grads
    })
}

/// Batched product `[..., m, k] x [..., k, n] -> [..., m, n]` with equal batch dims.
pub fn matmul_batched<T: Element>(a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
    let (sa, sb) = (a.shape(), b.shape());
    let r = sa.len();
    if r < 2 || sb.len() != r || sa[..r - 2] != sb[..r - 2] || sa[r - 1] != sb[r - 2] {
        return Err(Error::shape("matmul_batched", format!("{sa:?} x {sb:?}")));
    }
    let (m, k, n) = (sa[r - 2], sa[r - 1], sb[r - 1]);
    let batch = numel(&sa[..r - 2]);
    let (ad, bd) = (a.value().data(), b.value().data());
    let mut out = vec![T::zero(); batch * m * n];
    for i in 0..batch {
        gemm(
            m, k, n, T::one(),
            ad, Layout::row_major(k).at(i * m * k),
            bd, Layout::row_major(n).at(i * k * n),
            T::zero(), &mut out, Layout::row_major(n).at(i * m * n),
        );
    }
    let mut shape = sa.to_vec();
    shape[r - 1] = n;
    let (av, bv) = (Arc::clone(a.value_arc()), Arc::clone(b.value_arc()));
    record("matmul_batched", &[a, b], Arc::new(Tensor::from_parts(shape, out)), move |g, needs| {
        let gd = g.data();
        let ga = needs[0].then(|| {
            // dA = dC Bᵀ
            let mut d = vec![T::zero(); batch * m * k];
            for i in 0..batch {
                gemm(
                    m, n, k, T::one(),
                    gd, Layout::row_major(n).at(i * m * n),
                    bv.data(), Layout::col_major(n).at(i * k * n),
                    T::zero(), &mut d, Layout::row_major(k).at(i * m * k),
                );
            }
            Tensor::from_parts(av.shape().to_vec(), d)
        });
        let gb = needs[1].then(|| {
            // dB = Aᵀ dC
            let mut d = vec![T::zero(); batch * k * n];
            for i in 0..batch {
                gemm(
                    k, m, n, T::one(),
                    av.data(), Layout::col_major(k).at(i * m * k),
                    gd, Layout::row_major(n).at(i * m * n),
                    T::zero(), &mut d, Layout::row_major(n).at(i * k * n),
                );
            }
            Tensor::from_parts(bv.shape().to_vec(), d)
        });
        vec![ga, gb]
    })
}
