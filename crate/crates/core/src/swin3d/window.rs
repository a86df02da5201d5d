//! Window partitioning, cyclic shifts and shifted-window masks.

use std::sync::Arc;

use crate::autodiff::{ops, Var};
use crate::error::{Error, Result, Violation};
use crate::tensor::{Element, Tensor};

/// Additive logit penalty between tokens from different pre-shift regions.
pub const MASK_VALUE: f64 = -1e4;

/// Window geometry: extents `(W_h, W_w, W_s)` and a cyclic shift.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowSpec {
    window: [usize; 3],
    shift: [usize; 3],
}

impl WindowSpec {
    pub fn new(window: [usize; 3], shift: [usize; 3]) -> Result<Self> {
        for a in 0..3 {
            if window[a] == 0 {
                return Err(Error::invalid("window", format!("zero extent in {window:?}")));
            }
            if shift[a] >= window[a] {
                return Err(Error::invalid(
                    "window",
                    format!("shift {shift:?} must be below window {window:?} on every axis"),
                ));
            }
        }
        Ok(Self { window, shift })
    }

    pub fn unshifted(window: [usize; 3]) -> Result<Self> {
        Self::new(window, [0; 3])
    }

    /// Half-window shift for a volume of extents `dims`. Axes covered by a
    /// single window are left unshifted: rolling them would only mask pairs
    /// that the unshifted layer already attends to.
    pub fn shifted_for(window: [usize; 3], dims: [usize; 3]) -> Result<Self> {
        let shift = std::array::from_fn(|a| if dims[a] == window[a] { 0 } else { window[a] / 2 });
        Self::new(window, shift)
    }

    pub fn window(&self) -> [usize; 3] {
        self.window
    }

    pub fn shift(&self) -> [usize; 3] {
        self.shift
    }

    /// Tokens per window, `L`.
    pub fn tokens(&self) -> usize {
        self.window.iter().product()
    }

    pub fn is_shifted(&self) -> bool {
        self.shift != [0; 3]
    }

    /// Windows per volume, or one violation per non-divisible axis (1-based).
    pub fn num_windows(&self, dims: [usize; 3]) -> Result<usize> {
        let bad: Vec<Violation> = (0..3)
            .filter(|&a| dims[a] % self.window[a] != 0)
            .map(|a| {
                Violation::new(
                    format!("axis {}", a + 1),
                    format!("extent {} is not divisible by window {}", dims[a], self.window[a]),
                )
            })
            .collect();
        if !bad.is_empty() {
            return Err(Error::Config(bad));
        }
        Ok((0..3).map(|a| dims[a] / self.window[a]).product())
    }
}

/// Row of the channels-last volume `[N, D, H, W, C]` read by each token of
/// `[N * nW, L, C]`, after rolling by the spec's shift.
///
/// Windows are ordered `n * nW + w` with `w` row-major over the window grid;
/// tokens within a window are row-major.
pub fn partition_index(n: usize, dims: [usize; 3], spec: &WindowSpec) -> Result<Arc<[u32]>> {
    let nw = spec.num_windows(dims)?;
    let [wd, wh, ww] = spec.window;
    let [sd, sh, sw] = spec.shift;
    let [d, h, w] = dims;
    let vol = d * h * w;
    if n * vol > u32::MAX as usize {
        return Err(Error::invalid("partition", "volume too large for 32-bit indices"));
    }
    let mut idx = Vec::with_capacity(n * vol);
    for ni in 0..n {
        for gd in 0..d / wd {
            for gh in 0..h / wh {
                for gw in 0..w / ww {
                    for a in 0..wd {
                        let z = (gd * wd + a + sd) % d;
                        for b in 0..wh {
                            let y = (gh * wh + b + sh) % h;
                            for c in 0..ww {
                                let x = (gw * ww + c + sw) % w;
                                idx.push((ni * vol + (z * h + y) * w + x) as u32);
                            }
                        }
                    }
                }
            }
        }
    }
    debug_assert_eq!(idx.len(), n * nw * spec.tokens());
    Ok(idx.into())
}

/// Inverse of a permutation index.
pub fn inverse_index(idx: &[u32]) -> Arc<[u32]> {
    let mut inv = vec![0u32; idx.len()];
    for (t, &v) in idx.iter().enumerate() {
        inv[v as usize] = t as u32;
    }
    inv.into()
}

fn volume_dims(op: &'static str, shape: &[usize]) -> Result<[usize; 5]> {
    shape
        .try_into()
        .map_err(|_| Error::shape(op, format!("expected [N, C, D, H, W], got {shape:?}")))
}

/// V2S: `[N, C, D, H, W]` to `[N * nW, L, C]`, reading the volume rolled by
/// the spec's shift (so a shifted spec equals V2S of [`cyclic_shift`]).
pub fn volume_to_sequence<T: Element>(x: &Var<T>, spec: &WindowSpec) -> Result<Var<T>> {
    let [n, c, d, h, w] = volume_dims("volume_to_sequence", x.shape())?;
    let nw = spec.num_windows([d, h, w])?;
    let idx = partition_index(n, [d, h, w], spec)?;
    let cl = ops::permute(x, &[0, 2, 3, 4, 1])?;
    ops::gather_rows(&cl, &idx, &[n * nw, spec.tokens(), c])
}

/// S2V: exact inverse of [`volume_to_sequence`] for the same spec.
pub fn sequence_to_volume<T: Element>(tokens: &Var<T>, spec: &WindowSpec, n: usize, dims: [usize; 3]) -> Result<Var<T>> {
    let nw = spec.num_windows(dims)?;
    let l = spec.tokens();
    let shape = tokens.shape();
    if shape.len() != 3 || shape[0] != n * nw || shape[1] != l {
        return Err(Error::shape(
            "sequence_to_volume",
            format!("{shape:?} is not [{}, {l}, C] for {n} volumes of {dims:?}", n * nw),
        ));
    }
    let c = shape[2];
    let inv = inverse_index(&partition_index(n, dims, spec)?);
    let cl = ops::gather_rows(tokens, &inv, &[n, dims[0], dims[1], dims[2], c])?;
    ops::permute(&cl, &[0, 4, 1, 2, 3])
}

/// Rolls each spatial axis: `out[i] = x[(i + o) mod E]`, so the voxel at
/// `i` moves to `(i - o) mod E`. Negative offsets undo positive ones.
pub fn cyclic_shift<T: Element>(x: &Var<T>, offsets: [isize; 3]) -> Result<Var<T>> {
    let [n, c, d, h, w] = volume_dims("cyclic_shift", x.shape())?;
    let total = n * c * d * h * w;
    if total > u32::MAX as usize {
        return Err(Error::invalid("cyclic_shift", "volume too large for 32-bit indices"));
    }
    let o: [usize; 3] = std::array::from_fn(|a| offsets[a].rem_euclid([d, h, w][a] as isize) as usize);
    let mut idx = Vec::with_capacity(total);
    for s in 0..n * c {
        let base = s * d * h * w;
        for z in 0..d {
            for y in 0..h {
                for xx in 0..w {
                    idx.push((base + (((z + o[0]) % d) * h + (y + o[1]) % h) * w + (xx + o[2]) % w) as u32);
                }
            }
        }
    }
    let idx: Arc<[u32]> = idx.into();
    ops::gather(x, &idx, x.shape())
}

/// Per-token region code for the shifted frame: tokens attend to each other
/// only when their codes match. Shape `[nW, L]`.
pub fn region_codes(dims: [usize; 3], spec: &WindowSpec) -> Result<Arc<[u8]>> {
    spec.num_windows(dims)?;
    let region = |a: usize, p: usize| -> u8 {
        let (e, win, s) = (dims[a], spec.window[a], spec.shift[a]);
        if p < e - win {
            0
        } else if p < e - s {
            1
        } else {
            2
        }
    };
    let [wd, wh, ww] = spec.window;
    let [d, h, w] = dims;
    let mut codes = Vec::with_capacity(d * h * w);
    for gd in 0..d / wd {
        for gh in 0..h / wh {
            for gw in 0..w / ww {
                for a in 0..wd {
                    for b in 0..wh {
                        for c in 0..ww {
                            let r = [region(0, gd * wd + a), region(1, gh * wh + b), region(2, gw * ww + c)];
                            codes.push(r[0] * 9 + r[1] * 3 + r[2]);
                        }
                    }
                }
            }
        }
    }
    Ok(codes.into())
}

/// Expands region codes into the additive mask `[nW, L, L]`.
pub fn mask_from_codes<T: Element>(codes: &[u8], l: usize) -> Tensor<T> {
    let nw = codes.len() / l;
    let penalty = T::of(MASK_VALUE);
    let mut data = Vec::with_capacity(nw * l * l);
    for win in codes.chunks(l) {
        for &ci in win {
            data.extend(win.iter().map(|&cj| if ci == cj { T::zero() } else { penalty }));
        }
    }
    Tensor::from_parts(vec![nw, l, l], data)
}

/// Additive attention mask `[nW, L, L]`: 0 within a pre-shift region,
/// [`MASK_VALUE`] across regions. All zeros when the spec is unshifted.
pub fn build_attention_mask<T: Element>(dims: [usize; 3], spec: &WindowSpec) -> Result<Tensor<T>> {
    Ok(mask_from_codes(&region_codes(dims, spec)?, spec.tokens()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vol(shape: &[usize], seed: u64) -> Var<f32> {
        Var::constant(Tensor::randn(shape.to_vec(), 1.0, &mut ChaCha8Rng::seed_from_u64(seed)))
    }

    #[test]
    fn spec_rejects_large_shift() {
        assert!(WindowSpec::new([2, 2, 2], [0, 2, 0]).is_err());
        assert!(WindowSpec::new([2, 0, 2], [0; 3]).is_err());
        let s = WindowSpec::shifted_for([3, 6, 6], [3, 12, 6]).unwrap();
        assert_eq!(s.shift(), [0, 3, 0]);
    }

    #[test]
    fn bcv_stage_window_count() {
        let s = WindowSpec::unshifted([3, 6, 6]).unwrap();
        assert_eq!(s.num_windows([12, 48, 48]).unwrap(), 256);
        assert_eq!(s.tokens(), 108);
    }

    #[test]
    fn non_divisible_axis_is_named() {
        let s = WindowSpec::unshifted([3, 6, 6]).unwrap();
        match s.num_windows([12, 10, 48]) {
            Err(Error::Config(v)) => {
                assert_eq!(v.len(), 1);
                assert_eq!(v[0].location, "axis 2");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn single_window_is_row_major_scan() {
        let x = vol(&[1, 2, 2, 3, 2], 1);
        let s = WindowSpec::unshifted([2, 3, 2]).unwrap();
        let seq = volume_to_sequence(&x, &s).unwrap();
        assert_eq!(seq.shape(), &[1, 12, 2]);
        let want = ops::permute(&ops::reshape(&x, &[1, 2, 12]).unwrap(), &[0, 2, 1]).unwrap();
        assert!(seq.value().bit_eq(want.value()));
    }

    #[test]
    fn rotation_along_one_axis() {
        let x = Var::constant(Tensor::<f64>::from_fn(vec![1, 1, 1, 1, 4], |i| i as f64));
        let y = cyclic_shift(&x, [0, 0, 1]).unwrap();
        assert_eq!(y.value().data(), &[1.0, 2.0, 3.0, 0.0]);
        let z = cyclic_shift(&x, [0, 0, 0]).unwrap();
        assert!(z.value().bit_eq(x.value()));
    }

    #[test]
    fn shifted_partition_equals_shift_then_partition() {
        let x = vol(&[2, 3, 4, 6, 4], 2);
        let shifted = WindowSpec::new([2, 3, 2], [1, 1, 1]).unwrap();
        let plain = WindowSpec::unshifted([2, 3, 2]).unwrap();
        let a = volume_to_sequence(&x, &shifted).unwrap();
        let b = volume_to_sequence(&cyclic_shift(&x, [1, 1, 1]).unwrap(), &plain).unwrap();
        assert!(a.value().bit_eq(b.value()));
    }

    #[test]
    fn unshifted_mask_is_zero() {
        let m = build_attention_mask::<f32>([4, 4, 4], &WindowSpec::unshifted([2, 2, 2]).unwrap()).unwrap();
        assert!(m.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_axis_wraparound_mask() {
        // Length 4, window 2, shift 1: shifted frame reads [1, 2, 3, 0].
        // Window 0 holds originals {1, 2} (both interior); window 1 holds
        // {3, 0}, which straddle the wrap and must not attend to each other.
        let spec = WindowSpec::new([1, 1, 2], [0, 0, 1]).unwrap();
        let m = build_attention_mask::<f64>([1, 1, 4], &spec).unwrap();
        assert_eq!(m.shape(), &[2, 2, 2]);
        assert_eq!(&m.data()[..4], &[0.0; 4]);
        assert_eq!(&m.data()[4..], &[0.0, MASK_VALUE, MASK_VALUE, 0.0]);
    }

    /// Brute-force oracle: two tokens of one shifted window share a region
    /// iff on every axis both or neither came through the wrap-around.
    fn oracle_same_region(dims: [usize; 3], spec: &WindowSpec, w: usize, i: usize, j: usize) -> bool {
        let win = spec.window();
        let grid: [usize; 3] = std::array::from_fn(|a| dims[a] / win[a]);
        let g = [w / (grid[1] * grid[2]), (w / grid[2]) % grid[1], w % grid[2]];
        let coord = |t: usize| -> [usize; 3] {
            let l = [t / (win[1] * win[2]), (t / win[2]) % win[1], t % win[2]];
            std::array::from_fn(|a| g[a] * win[a] + l[a])
        };
        let (pi, pj) = (coord(i), coord(j));
        (0..3).all(|a| {
            let cut = dims[a] - spec.shift()[a];
            (pi[a] >= cut) == (pj[a] >= cut)
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn partition_round_trips_bitwise(
            win in prop::array::uniform3(1usize..=3),
            mult in prop::array::uniform3(1usize..=3),
            shift_frac in prop::array::uniform3(0usize..=2),
            n in 1usize..=2, c in 1usize..=3, seed in 0u64..100,
        ) {
            let dims: [usize; 3] = std::array::from_fn(|a| win[a] * mult[a]);
            let shift: [usize; 3] = std::array::from_fn(|a| shift_frac[a] % win[a]);
            let spec = WindowSpec::new(win, shift).unwrap();
            let x = vol(&[n, c, dims[0], dims[1], dims[2]], seed);
            let seq = volume_to_sequence(&x, &spec).unwrap();
            let back = sequence_to_volume(&seq, &spec, n, dims).unwrap();
            prop_assert!(back.value().bit_eq(x.value()));
            let again = volume_to_sequence(&back, &spec).unwrap();
            prop_assert!(again.value().bit_eq(seq.value()));
            let o: [isize; 3] = std::array::from_fn(|a| shift[a] as isize);
            let neg: [isize; 3] = std::array::from_fn(|a| -o[a]);
            let rt = cyclic_shift(&cyclic_shift(&x, o).unwrap(), neg).unwrap();
            prop_assert!(rt.value().bit_eq(x.value()));
        }

        #[test]
        fn mask_matches_wraparound_oracle(
            win in prop::array::uniform3(1usize..=3),
            mult in prop::array::uniform3(1usize..=3),
            shift_frac in prop::array::uniform3(0usize..=2),
        ) {
            let dims: [usize; 3] = std::array::from_fn(|a| win[a] * mult[a]);
            let shift: [usize; 3] = std::array::from_fn(|a| shift_frac[a] % win[a]);
            let spec = WindowSpec::new(win, shift).unwrap();
            let m = build_attention_mask::<f64>(dims, &spec).unwrap();
            let l = spec.tokens();
            let nw = spec.num_windows(dims).unwrap();
            for w in 0..nw {
                for i in 0..l {
                    for j in 0..l {
                        let v = m.data()[(w * l + i) * l + j];
                        let want = if oracle_same_region(dims, &spec, w, i, j) { 0.0 } else { MASK_VALUE };
                        prop_assert_eq!(v, want);
                    }
                }
            }
        }
    }
}
