use std::ops::Range;
use std::sync::Arc;

use crate::autodiff::{record, Var};
use crate::error::{Error, Result};
use crate::tensor::gemm::{gemm, Layout};
use crate::tensor::{Element, Tensor};

/// Upper bound on im2col buffer elements; larger outputs are processed in
/// row chunks.
const COL_BUDGET: usize = 1 << 22;

#[cfg(test)]
thread_local! {
    static TEST_BUDGET: std::cell::Cell<usize> = const { std::cell::Cell::new(COL_BUDGET) };
}

fn col_budget() -> usize {
    #[cfg(test)]
    return TEST_BUDGET.with(|b| b.get());
    #[cfg(not(test))]
    COL_BUDGET
}

/// Spatial output extents of a cross-correlation, or an error when the
/// padded input is smaller than the kernel.
pub fn conv3d_output_dims(
    input: [usize; 3],
    kernel: [usize; 3],
    stride: [usize; 3],
    pad: [usize; 3],
) -> Result<[usize; 3]> {
    let mut out = [0; 3];
    for a in 0..3 {
        if stride[a] == 0 {
            return Err(Error::invalid("conv3d", format!("stride {stride:?} has a zero component")));
        }
        let padded = input[a] + 2 * pad[a];
        if padded < kernel[a] || kernel[a] == 0 {
            return Err(Error::shape(
                "conv3d",
                format!("kernel {kernel:?} does not fit padded input {input:?} (pad {pad:?})"),
            ));
        }
        out[a] = (padded - kernel[a]) / stride[a] + 1;
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug)]
struct Geom {
    cin: usize,
    inp: [usize; 3],
    k: [usize; 3],
    s: [usize; 3],
    p: [usize; 3],
    out: [usize; 3],
}

impl Geom {
    fn kvol(&self) -> usize {
        self.k.iter().product()
    }
    fn in_vol(&self) -> usize {
        self.inp.iter().product()
    }
    fn out_vol(&self) -> usize {
        self.out.iter().product()
    }
    /// im2col rows: one per (input channel, kernel offset).
    fn krows(&self) -> usize {
        self.cin * self.kvol()
    }
    fn pointwise(&self) -> bool {
        self.k == [1, 1, 1] && self.s == [1, 1, 1] && self.p == [0, 0, 0]
    }
    /// Chunks of output rows (each row is one `(od, oh)` line of `Wo` voxels).
    fn row_chunks(&self) -> impl Iterator<Item = Range<usize>> {
        let total = self.out[0] * self.out[1];
        let per = (col_budget() / (self.krows() * self.out[2])).max(1);
        (0..total).step_by(per).map(move |r| r..(r + per).min(total))
    }
}

fn dims5(op: &'static str, s: &[usize]) -> Result<[usize; 5]> {
    s.try_into()
        .map_err(|_| Error::shape(op, format!("expected rank 5, got {s:?}")))
}

/// Visits every (im2col row, chunk column range, source line) triple.
/// `f(dst_range_in_row, src_line_offset, ow -> Option<iw>)` is expanded
/// inline by the two callers below.
#[inline(always)]
fn for_each_line(
    g: &Geom,
    rows: Range<usize>,
    mut f: impl FnMut(usize, usize, Option<usize>, usize, isize),
) {
    let [_, ho, wo] = g.out;
    let [id_n, ih_n, iw_n] = g.inp;
    let chunk = rows.len() * wo;
    let kv = g.kvol();
    for ci in 0..g.cin {
        for kd in 0..g.k[0] {
            for kh in 0..g.k[1] {
                for kw in 0..g.k[2] {
                    let r = ((ci * g.k[0] + kd) * g.k[1] + kh) * g.k[2] + kw;
                    debug_assert!(r < g.cin * kv);
                    for (i, row) in rows.clone().enumerate() {
                        let (od, oh) = (row / ho, row % ho);
                        let id = (od * g.s[0] + kd) as isize - g.p[0] as isize;
                        let ih = (oh * g.s[1] + kh) as isize - g.p[1] as isize;
                        let dst = r * chunk + i * wo;
                        let src = (id >= 0 && (id as usize) < id_n && ih >= 0 && (ih as usize) < ih_n)
                            .then(|| ((ci * id_n + id as usize) * ih_n + ih as usize) * iw_n);
                        f(dst, wo, src, iw_n, kw as isize - g.p[2] as isize);
                    }
                }
            }
        }
    }
}

fn im2col<T: Element>(x: &[T], g: &Geom, rows: Range<usize>, cols: &mut [T]) {
    let sw = g.s[2];
    for_each_line(g, rows, |dst, wo, src, iw_n, off| {
        let line = &mut cols[dst..dst + wo];
        let Some(src) = src else {
            line.fill(T::zero());
            return;
        };
        let xs = &x[src..src + iw_n];
        if sw == 1 {
            // valid ow: 0 <= ow + off < iw_n
            let lo = (-off).clamp(0, wo as isize) as usize;
            let hi = (iw_n as isize - off).clamp(lo as isize, wo as isize) as usize;
            line[..lo].fill(T::zero());
            line[hi..].fill(T::zero());
            let s0 = (lo as isize + off) as usize;
            line[lo..hi].copy_from_slice(&xs[s0..s0 + (hi - lo)]);
        } else {
            for (ow, v) in line.iter_mut().enumerate() {
                let iw = (ow * sw) as isize + off;
                *v = if iw >= 0 && (iw as usize) < iw_n { xs[iw as usize] } else { T::zero() };
            }
        }
    });
}

fn col2im<T: Element>(cols: &[T], g: &Geom, rows: Range<usize>, gx: &mut [T]) {
    let sw = g.s[2];
    for_each_line(g, rows, |dst, wo, src, iw_n, off| {
        let Some(src) = src else { return };
        let line = &cols[dst..dst + wo];
        let xs = &mut gx[src..src + iw_n];
        for (ow, &v) in line.iter().enumerate() {
            let iw = (ow * sw) as isize + off;
            if iw >= 0 && (iw as usize) < iw_n {
                xs[iw as usize] += v;
            }
        }
    });
}

/// 3-D cross-correlation (no kernel flip).
///
/// `x [N, Cin, D, H, W]`, `w [Cout, Cin, kd, kh, kw]`, optional `b [Cout]`.
pub fn conv3d<T: Element>(
    x: &Var<T>,
    w: &Var<T>,
    b: Option<&Var<T>>,
    stride: [usize; 3],
    pad: [usize; 3],
) -> Result<Var<T>> {
    let [n, cin, d, h, wd] = dims5("conv3d", x.shape())?;
    let [cout, wcin, kd, kh, kw] = dims5("conv3d", w.shape())?;
    if wcin != cin {
        return Err(Error::shape(
            "conv3d",
            format!("input has {cin} channels, weight expects {wcin}"),
        ));
    }
    if let Some(b) = b {
        if b.shape() != [cout] {
            return Err(Error::shape("conv3d", format!("bias {:?}, expected [{cout}]", b.shape())));
        }
    }
    let out = conv3d_output_dims([d, h, wd], [kd, kh, kw], stride, pad)?;
    let g = Geom {
        cin,
        inp: [d, h, wd],
        k: [kd, kh, kw],
        s: stride,
        p: pad,
        out,
    };
    let (iv, ov, kr) = (g.in_vol(), g.out_vol(), g.krows());
    let xd = x.value().data();
    let wdat = w.value().data();
    let mut y = vec![T::zero(); n * cout * ov];
    let mut cols = if g.pointwise() { Vec::new() } else { vec![T::zero(); col_budget().min(kr * g.out_vol()).max(kr * out[2])] };
    for ni in 0..n {
        let xs = &xd[ni * cin * iv..(ni + 1) * cin * iv];
        let ys = &mut y[ni * cout * ov..(ni + 1) * cout * ov];
        let beta = if let Some(b) = b {
            for (co, row) in ys.chunks_mut(ov).enumerate() {
                row.fill(b.value().data()[co]);
            }
            T::one()
        } else {
            T::zero()
        };
        if g.pointwise() {
            gemm(cout, cin, ov, T::one(), wdat, Layout::row_major(cin), xs, Layout::row_major(iv), beta, ys, Layout::row_major(ov));
            continue;
        }
        for rows in g.row_chunks() {
            let p0 = rows.start * out[2];
            let chunk = rows.len() * out[2];
            im2col(xs, &g, rows, &mut cols);
            gemm(
                cout, kr, chunk, T::one(),
                wdat, Layout::row_major(kr),
                &cols, Layout::row_major(chunk),
                beta, ys, Layout { offset: p0, rs: ov, cs: 1 },
            );
        }
    }
    let y = Tensor::from_parts(vec![n, cout, out[0], out[1], out[2]], y);
    let (xv, wv) = (Arc::clone(x.value_arc()), Arc::clone(w.value_arc()));
    let mut inputs = vec![x, w];
    inputs.extend(b);
    record("conv3d", &inputs, Arc::new(y), move |gout, needs| {
        let gd = gout.data();
        let mut gx = needs[0].then(|| vec![T::zero(); n * cin * iv]);
        let mut gw = needs[1].then(|| vec![T::zero(); cout * kr]);
        let mut gb = needs.get(2).copied().unwrap_or(false).then(|| vec![T::zero(); cout]);
        let mut cols = if g.pointwise() { Vec::new() } else { vec![T::zero(); col_budget().min(kr * g.out_vol()).max(kr * out[2])] };
        for ni in 0..n {
            let xs = &xv.data()[ni * cin * iv..(ni + 1) * cin * iv];
            let gs = &gd[ni * cout * ov..(ni + 1) * cout * ov];
            if let Some(gb) = gb.as_mut() {
                for (co, row) in gs.chunks(ov).enumerate() {
                    gb[co] += row.iter().copied().sum::<T>();
                }
            }
            if g.pointwise() {
                if let Some(gw) = gw.as_mut() {
                    gemm(cout, ov, cin, T::one(), gs, Layout::row_major(ov), xs, Layout::col_major(iv), T::one(), gw, Layout::row_major(cin));
                }
                if let Some(gx) = gx.as_mut() {
                    let gxs = &mut gx[ni * cin * iv..(ni + 1) * cin * iv];
                    gemm(cin, cout, ov, T::one(), wv.data(), Layout::col_major(cin), gs, Layout::row_major(ov), T::zero(), gxs, Layout::row_major(iv));
                }
                continue;
            }
            for rows in g.row_chunks() {
                let p0 = rows.start * out[2];
                let chunk = rows.len() * out[2];
                let gview = Layout { offset: p0, rs: ov, cs: 1 };
                if let Some(gw) = gw.as_mut() {
                    im2col(xs, &g, rows.clone(), &mut cols);
                    gemm(cout, chunk, kr, T::one(), gs, gview, &cols, Layout::col_major(chunk), T::one(), gw, Layout::row_major(kr));
                }
                if let Some(gx) = gx.as_mut() {
                    gemm(kr, cout, chunk, T::one(), wv.data(), Layout::col_major(kr), gs, gview, T::zero(), &mut cols, Layout::row_major(chunk));
                    col2im(&cols, &g, rows, &mut gx[ni * cin * iv..(ni + 1) * cin * iv]);
                }
            }
        }
        let mut grads = vec![
            gx.map(|d| Tensor::from_parts(xv.shape().to_vec(), d)),
            gw.map(|d| Tensor::from_parts(wv.shape().to_vec(), d)),
        ];
        if needs.len() == 3 {
            grads.push(gb.map(|d| Tensor::from_parts(vec![cout], d)));
        }
        grads
    })
}

/// Scatters `tmp [cout*kvol, D*H*W]` into the strided output volume, or
/// gathers it back when `reverse` is set.
fn deconv_shuffle<T: Element>(tmp: &mut [T], vol: &mut [T], cout: usize, inp: [usize; 3], k: [usize; 3], reverse: bool) {
    let [d, h, w] = inp;
    let (od, oh, ow) = (d * k[0], h * k[1], w * k[2]);
    let p = d * h * w;
    for co in 0..cout {
        for a in 0..k[0] {
            for bb in 0..k[1] {
                for c in 0..k[2] {
                    let j = ((co * k[0] + a) * k[1] + bb) * k[2] + c;
                    let row = &mut tmp[j * p..(j + 1) * p];
                    for z in 0..d {
                        for y in 0..h {
                            let base = ((co * od + z * k[0] + a) * oh + y * k[1] + bb) * ow + c;
                            let src = &mut row[(z * h + y) * w..(z * h + y + 1) * w];
                            for (x, v) in src.iter_mut().enumerate() {
                                let o = &mut vol[base + x * k[2]];
                                if reverse {
                                    *v = *o;
                                } else {
                                    *o += *v;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Transposed convolution whose kernel extents equal its stride, so every
/// input voxel fills a disjoint output block.
///
/// `x [N, Cin, D, H, W]`, `w [Cin, Cout, sd, sh, sw]`, output
/// `[N, Cout, D*sd, H*sh, W*sw]`.
pub fn conv_transpose3d<T: Element>(
    x: &Var<T>,
    w: &Var<T>,
    b: Option<&Var<T>>,
    stride: [usize; 3],
) -> Result<Var<T>> {
    let [n, cin, d, h, wd] = dims5("conv_transpose3d", x.shape())?;
    let [wcin, cout, kd, kh, kw] = dims5("conv_transpose3d", w.shape())?;
    if wcin != cin {
        return Err(Error::shape(
            "conv_transpose3d",
            format!("input has {cin} channels, weight expects {wcin}"),
        ));
    }
    if [kd, kh, kw] != stride || stride.contains(&0) {
        return Err(Error::invalid(
            "conv_transpose3d",
            format!("kernel {:?} must equal stride {stride:?}", [kd, kh, kw]),
        ));
    }
    if let Some(b) = b {
        if b.shape() != [cout] {
            return Err(Error::shape("conv_transpose3d", format!("bias {:?}, expected [{cout}]", b.shape())));
        }
    }
    let k = stride;
    let kv = kd * kh * kw;
    let j = cout * kv;
    let p = d * h * wd;
    let ov = p * kv;
    let xd = x.value().data();
    let wdat = w.value().data();
    let mut y = vec![T::zero(); n * cout * ov];
    let mut tmp = vec![T::zero(); j * p];
    for ni in 0..n {
        let xs = &xd[ni * cin * p..(ni + 1) * cin * p];
        gemm(j, cin, p, T::one(), wdat, Layout::col_major(j), xs, Layout::row_major(p), T::zero(), &mut tmp, Layout::row_major(p));
        let ys = &mut y[ni * cout * ov..(ni + 1) * cout * ov];
        if let Some(b) = b {
            for (co, row) in ys.chunks_mut(ov).enumerate() {
                row.fill(b.value().data()[co]);
            }
        }
        deconv_shuffle(&mut tmp, ys, cout, [d, h, wd], k, false);
    }
    drop(tmp);
    let y = Tensor::from_parts(vec![n, cout, d * kd, h * kh, wd * kw], y);
    let (xv, wv) = (Arc::clone(x.value_arc()), Arc::clone(w.value_arc()));
    let mut inputs = vec![x, w];
    inputs.extend(b);
    record("conv_transpose3d", &inputs, Arc::new(y), move |gout, needs| {
        let mut gd = gout.data().to_vec();
        let mut gx = needs[0].then(|| vec![T::zero(); n * cin * p]);
        let mut gw = needs[1].then(|| vec![T::zero(); cin * j]);
        let gb = (needs.len() == 3 && needs[2]).then(|| {
            let mut acc = vec![T::zero(); cout];
            for (i, row) in gd.chunks(ov).enumerate() {
                acc[i % cout] += row.iter().copied().sum::<T>();
            }
            acc
        });
        let mut gtmp = vec![T::zero(); j * p];
        for ni in 0..n {
            let gs = &mut gd[ni * cout * ov..(ni + 1) * cout * ov];
            deconv_shuffle(&mut gtmp, gs, cout, [d, h, wd], k, true);
            if let Some(gx) = gx.as_mut() {
                let gxs = &mut gx[ni * cin * p..(ni + 1) * cin * p];
                gemm(cin, j, p, T::one(), wv.data(), Layout::row_major(j), &gtmp, Layout::row_major(p), T::zero(), gxs, Layout::row_major(p));
            }
            if let Some(gw) = gw.as_mut() {
                let xs = &xv.data()[ni * cin * p..(ni + 1) * cin * p];
                gemm(cin, p, j, T::one(), xs, Layout::row_major(p), &gtmp, Layout::col_major(p), T::one(), gw, Layout::row_major(j));
            }
        }
        let mut grads = vec![
            gx.map(|d| Tensor::from_parts(xv.shape().to_vec(), d)),
            gw.map(|d| Tensor::from_parts(wv.shape().to_vec(), d)),
        ];
        if needs.len() == 3 {
            grads.push(gb.map(|d| Tensor::from_parts(vec![cout], d)));
        }
        grads
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c<T: Element>(t: Tensor<T>) -> Var<T> {
        Var::constant(t)
    }

    #[test]
    fn unit_pointwise_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = Tensor::<f32>::randn(vec![1, 1, 3, 4, 5], 1.0, &mut rng);
        let y = conv3d(&c(x.clone()), &c(Tensor::ones(vec![1, 1, 1, 1, 1])), Some(&c(Tensor::zeros(vec![1]))), [1; 3], [0; 3]).unwrap();
        assert!(y.value().bit_eq(&x));
    }

    #[test]
    fn constant_input_with_ones_kernel_gives_27c() {
        let x = Tensor::<f64>::full(vec![1, 1, 4, 4, 4], 0.5);
        let y = conv3d(&c(x), &c(Tensor::ones(vec![1, 1, 3, 3, 3])), None, [1; 3], [0; 3]).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2, 2]);
        assert!(y.value().data().iter().all(|&v| v == 13.5));
    }

    #[test]
    fn output_extent_formula() {
        assert_eq!(conv3d_output_dims([5, 6, 7], [3, 3, 3], [2, 2, 1], [1, 1, 1]).unwrap(), [3, 3, 7]);
        assert!(conv3d_output_dims([1, 1, 1], [3, 3, 3], [1, 1, 1], [0, 0, 0]).is_err());
        assert!(conv3d_output_dims([4, 4, 4], [1, 1, 1], [0, 1, 1], [0, 0, 0]).is_err());
    }

    #[test]
    fn channel_mismatch_is_an_error() {
        let x = c(Tensor::<f32>::zeros(vec![1, 2, 3, 3, 3]));
        let w = c(Tensor::zeros(vec![1, 3, 3, 3, 3]));
        assert!(matches!(conv3d(&x, &w, None, [1; 3], [1; 3]), Err(Error::Shape { .. })));
    }

    /// Direct six-loop cross-correlation.
    fn naive(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], s: [usize; 3], p: [usize; 3]) -> Tensor<f64> {
        let [n, cin, d, h, wd]: [usize; 5] = x.shape().try_into().unwrap();
        let [cout, _, kd, kh, kw]: [usize; 5] = w.shape().try_into().unwrap();
        let o = conv3d_output_dims([d, h, wd], [kd, kh, kw], s, p).unwrap();
        let (xd, wdat) = (x.data(), w.data());
        let mut y = vec![0.0; n * cout * o[0] * o[1] * o[2]];
        let mut idx = 0;
        for ni in 0..n {
            for co in 0..cout {
                for z in 0..o[0] {
                    for r in 0..o[1] {
                        for q in 0..o[2] {
                            let mut acc = b[co];
                            for ci in 0..cin {
                                for a in 0..kd {
                                    for bb in 0..kh {
                                        for c in 0..kw {
                                            let iz = (z * s[0] + a) as isize - p[0] as isize;
                                            let ir = (r * s[1] + bb) as isize - p[1] as isize;
                                            let iq = (q * s[2] + c) as isize - p[2] as isize;
                                            if iz < 0 || ir < 0 || iq < 0 || iz as usize >= d || ir as usize >= h || iq as usize >= wd {
                                                continue;
                                            }
                                            let xi = (((ni * cin + ci) * d + iz as usize) * h + ir as usize) * wd + iq as usize;
                                            let wi = (((co * cin + ci) * kd + a) * kh + bb) * kw + c;
                                            acc += xd[xi] * wdat[wi];
                                        }
                                    }
                                }
                            }
                            y[idx] = acc;
                            idx += 1;
                        }
                    }
                }
            }
        }
        Tensor::new(vec![n, cout, o[0], o[1], o[2]], y).unwrap()
    }

    #[test]
    fn matches_direct_loops_with_chunking() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::<f64>::randn(vec![2, 3, 5, 6, 7], 1.0, &mut rng);
        let w = Tensor::<f64>::randn(vec![4, 3, 3, 3, 3], 1.0, &mut rng);
        let b = [0.1, -0.2, 0.3, 0.0];
        let want = naive(&x, &w, &b, [1, 2, 1], [1, 1, 1]);
        for budget in [1, 200, 1000, COL_BUDGET] {
            TEST_BUDGET.with(|c| c.set(budget));
            let got = conv3d(&c(x.clone()), &c(w.clone()), Some(&c(Tensor::new(vec![4], b.to_vec()).unwrap())), [1, 2, 1], [1, 1, 1]).unwrap();
            assert!(got.value().max_abs_diff(&want) < 1e-12, "budget {budget}");
        }
        TEST_BUDGET.with(|c| c.set(COL_BUDGET));
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]
        #[test]
        fn agrees_with_direct_loops(
            dims in proptest::array::uniform3(1usize..=5),
            k in proptest::array::uniform3(1usize..=3),
            s in proptest::array::uniform3(1usize..=2),
            p in proptest::array::uniform3(0usize..=1),
            cin in 1usize..=2, cout in 1usize..=2, seed in 0u64..1000,
        ) {
            proptest::prop_assume!((0..3).all(|a| dims[a] + 2 * p[a] >= k[a]));
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = Tensor::<f64>::randn(vec![1, cin, dims[0], dims[1], dims[2]], 1.0, &mut rng);
            let w = Tensor::<f64>::randn(vec![cout, cin, k[0], k[1], k[2]], 1.0, &mut rng);
            let b = vec![0.5; cout];
            let want = naive(&x, &w, &b, s, p);
            let got = conv3d(&c(x), &c(w), Some(&c(Tensor::new(vec![cout], b).unwrap())), s, p).unwrap();
            proptest::prop_assert!(got.value().max_abs_diff(&want) < 1e-12);
        }
    }

    #[test]
    fn deconv_grad_wrt_input_is_strided_correlation() {
        // d<G, deconv(x)>/dx = conv3d(G, W viewed as [Cin, Cout, s...], stride s)
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Tensor::<f64>::randn(vec![1, 2, 2, 3, 2], 1.0, &mut rng);
        let w = Tensor::<f64>::randn(vec![2, 3, 2, 1, 2], 1.0, &mut rng);
        let g = Tensor::<f64>::randn(vec![1, 3, 4, 3, 4], 1.0, &mut rng);
        let tape = crate::autodiff::Tape::new();
        let xl = tape.leaf(x);
        let y = conv_transpose3d(&xl, &c(w.clone()), None, [2, 1, 2]).unwrap();
        let loss = crate::autodiff::ops::sum(&crate::autodiff::ops::mul(&y, &c(g.clone())).unwrap()).unwrap();
        let grads = tape.backward(&loss).unwrap();
        let want = conv3d(&c(g), &c(w), None, [2, 1, 2], [0; 3]).unwrap();
        assert!(grads.get(&xl).unwrap().max_abs_diff(want.value()) < 1e-12);
    }

    #[test]
    fn deconv_unit_stride_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = Tensor::<f64>::randn(vec![2, 1, 2, 3, 2], 1.0, &mut rng);
        let y = conv_transpose3d(&c(x.clone()), &c(Tensor::ones(vec![1, 1, 1, 1, 1])), None, [1; 3]).unwrap();
        assert!(y.value().bit_eq(&x));
    }

    #[test]
    fn deconv_fills_disjoint_blocks() {
        let x = Tensor::<f64>::from_fn(vec![1, 1, 2, 2, 2], |i| i as f64 + 1.0);
        let y = conv_transpose3d(&c(x), &c(Tensor::ones(vec![1, 3, 2, 2, 2])), None, [2; 3]).unwrap();
        assert_eq!(y.shape(), &[1, 3, 4, 4, 4]);
        let yd = y.value().data();
        for ch in 0..3 {
            for z in 0..4 {
                for r in 0..4 {
                    for q in 0..4 {
                        let src = (z / 2) * 4 + (r / 2) * 2 + q / 2;
                        assert_eq!(yd[((ch * 4 + z) * 4 + r) * 4 + q], src as f64 + 1.0);
                    }
                }
            }
        }
    }

    #[test]
    fn deconv_requires_kernel_equal_stride() {
        let x = c(Tensor::<f32>::zeros(vec![1, 1, 2, 2, 2]));
        let w = c(Tensor::zeros(vec![1, 1, 3, 3, 3]));
        assert!(conv_transpose3d(&x, &w, None, [2; 3]).is_err());
    }
}
