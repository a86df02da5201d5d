use std::sync::Arc;

use crate::autodiff::{record, Var};
use crate::error::{Error, Result};
use crate::tensor::{numel, strides, Element, Tensor};

pub fn reshape<T: Element>(x: &Var<T>, shape: &[usize]) -> Result<Var<T>> {
    let out = x.value().clone().reshape(shape.to_vec())?;
    let in_shape = x.shape().to_vec();
    record("reshape", &[x], Arc::new(out), move |g, _| {
        vec![Some(Tensor::from_parts(in_shape, g.data().to_vec()))]
    })
}

fn permute_data<T: Element>(data: &[T], shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<T>) {
    let in_str = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let src_str: Vec<usize> = axes.iter().map(|&a| in_str[a]).collect();
    let rank = shape.len();
    let n = data.len();
    let mut out = Vec::with_capacity(n);
    if rank == 0 {
        out.extend_from_slice(data);
        return (out_shape, out);
    }
    let inner = out_shape[rank - 1];
    let inner_stride = src_str[rank - 1];
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    while out.len() < n {
        if inner_stride == 1 {
            out.extend_from_slice(&data[off..off + inner]);
        } else {
            out.extend((0..inner).map(|i| data[off + i * inner_stride]));
        }
        // advance the outer odometer (all axes but the last)
        for ax in (0..rank - 1).rev() {
            idx[ax] += 1;
            off += src_str[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            off -= src_str[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    (out_shape, out)
}

/// Reorders axes: output axis `i` is input axis `axes[i]`.
pub fn permute<T: Element>(x: &Var<T>, axes: &[usize]) -> Result<Var<T>> {
    let rank = x.value().rank();
    let mut seen = vec![false; rank];
    if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
        return Err(Error::invalid("permute", format!("{axes:?} is not a permutation of rank {rank}")));
    }
    let (shape, data) = permute_data(x.value().data(), x.shape(), axes);
    let mut inverse = vec![0; rank];
    for (i, &a) in axes.iter().enumerate() {
        inverse[a] = i;
    }
    record("permute", &[x], Arc::new(Tensor::from_parts(shape, data)), move |g, _| {
        let (s, d) = permute_data(g.data(), g.shape(), &inverse);
        vec![Some(Tensor::from_parts(s, d))]
    })
}

/// `out[i] = x[index[i]]`, reshaped to `shape`. The backward pass
/// scatter-adds, so repeated indices are allowed.
pub fn gather<T: Element>(x: &Var<T>, index: &Arc<[u32]>, shape: &[usize]) -> Result<Var<T>> {
    if numel(shape) != index.len() {
        return Err(Error::shape("gather", format!("{} indices for shape {shape:?}", index.len())));
    }
    let src = x.value().data();
    if let Some(&bad) = index.iter().find(|&&i| i as usize >= src.len()) {
        return Err(Error::invalid("gather", format!("index {bad} out of range {}", src.len())));
    }
    let data = index.iter().map(|&i| src[i as usize]).collect();
    let in_shape = x.shape().to_vec();
    let index = Arc::clone(index);
    record("gather", &[x], Arc::new(Tensor::from_parts(shape.to_vec(), data)), move |g, _| {
        let mut acc = Tensor::zeros(in_shape);
        let d = acc.data_mut();
        for (&i, &v) in index.iter().zip(g.data()) {
            d[i as usize] += v;
        }
        vec![Some(acc)]
    })
}

/// Row gather over the last axis: output row `i` is input row `index[i]`.
/// `shape` must end in the input's last extent.
pub fn gather_rows<T: Element>(x: &Var<T>, index: &Arc<[u32]>, shape: &[usize]) -> Result<Var<T>> {
    let row = *x.shape().last().ok_or_else(|| Error::shape("gather_rows", "scalar input"))?;
    if shape.last() != Some(&row) || numel(shape) != index.len() * row {
        return Err(Error::shape(
            "gather_rows",
            format!("{} rows of {row} do not fill {shape:?}", index.len()),
        ));
    }
    let src = x.value().data();
    let rows = src.len() / row;
    if let Some(&bad) = index.iter().find(|&&i| i as usize >= rows) {
        return Err(Error::invalid("gather_rows", format!("row {bad} out of range {rows}")));
    }
    let mut data = Vec::with_capacity(numel(shape));
    for &i in index.iter() {
        let i = i as usize;
        data.extend_from_slice(&src[i * row..(i + 1) * row]);
    }
    let in_shape = x.shape().to_vec();
    let index = Arc::clone(index);
    record("gather_rows", &[x], Arc::new(Tensor::from_parts(shape.to_vec(), data)), move |g, _| {
        let mut acc = Tensor::zeros(in_shape);
        let d = acc.data_mut();
        for (&i, gr) in index.iter().zip(g.data().chunks(row)) {
            let i = i as usize;
            for (a, &v) in d[i * row..(i + 1) * row].iter_mut().zip(gr) {
                *a += v;
            }
        }
        vec![Some(acc)]
    })
}

/// (outer, axis extent, inner) decomposition around `axis`.
fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (numel(&shape[..axis]), shape[axis], numel(&shape[axis + 1..]))
}

/// Joins two tensors along `axis`; all other extents must agree.
pub fn concat<T: Element>(a: &Var<T>, b: &Var<T>, axis: usize) -> Result<Var<T>> {
    let (sa, sb) = (a.shape(), b.shape());
    if axis >= sa.len() {
        return Err(Error::invalid("concat", format!("axis {axis} out of range for rank {}", sa.len())));
    }
    if sa.len() != sb.len() || sa.iter().zip(sb).enumerate().any(|(i, (x, y))| i != axis && x != y) {
        return Err(Error::shape("concat", format!("{sa:?} vs {sb:?} off axis {axis}")));
    }
    let (outer, na, inner) = split_at_axis(sa, axis);
    let nb = sb[axis];
    let (da, db) = (a.value().data(), b.value().data());
    let mut data = Vec::with_capacity(da.len() + db.len());
    for o in 0..outer {
        data.extend_from_slice(&da[o * na * inner..(o + 1) * na * inner]);
        data.extend_from_slice(&db[o * nb * inner..(o + 1) * nb * inner]);
    }
    let mut shape = sa.to_vec();
    shape[axis] = na + nb;
    let (shape_a, shape_b) = (sa.to_vec(), sb.to_vec());
    record("concat", &[a, b], Arc::new(Tensor::from_parts(shape, data)), move |g, needs| {
        let gd = g.data();
        let part = |start: usize, n: usize, shape: Vec<usize>| {
            let mut d = Vec::with_capacity(outer * n * inner);
            for o in 0..outer {
                let base = o * (na + nb) * inner + start * inner;
                d.extend_from_slice(&gd[base..base + n * inner]);
            }
            Tensor::from_parts(shape, d)
        };
        vec![
            needs[0].then(|| part(0, na, shape_a)),
            needs[1].then(|| part(na, nb, shape_b)),
        ]
    })
}

/// The sub-range `start..start+len` along `axis`.
pub fn narrow<T: Element>(x: &Var<T>, axis: usize, start: usize, len: usize) -> Result<Var<T>> {
    let shape = x.shape();
    if axis >= shape.len() || len == 0 || start + len > shape[axis] {
        return Err(Error::invalid(
            "narrow",
            format!("range {start}..{} on axis {axis} of {shape:?}", start + len),
        ));
    }
    let (outer, n, inner) = split_at_axis(shape, axis);
    let src = x.value().data();
    let mut data = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * n + start) * inner;
        data.extend_from_slice(&src[base..base + len * inner]);
    }
    let mut out_shape = shape.to_vec();
    out_shape[axis] = len;
    let in_shape = shape.to_vec();
    record("narrow", &[x], Arc::new(Tensor::from_parts(out_shape, data)), move |g, _| {
        let mut acc = Tensor::zeros(in_shape);
        let d = acc.data_mut();
        for o in 0..outer {
            let base = (o * n + start) * inner;
            d[base..base + len * inner].copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
        }
        vec![Some(acc)]
    })
}
