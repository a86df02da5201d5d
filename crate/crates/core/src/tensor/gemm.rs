//! Strided matrix multiply over flat buffers, plus a per-thread
//! multiply-accumulate counter used to cross-check the FLOP analyzer.

use std::cell::Cell;

use super::Element;

thread_local! {
    static MACS: Cell<u64> = const { Cell::new(0) };
}

/// Multiply-accumulates issued through [`gemm`] on this thread since the last reset.
pub fn mac_count() -> u64 {
    MACS.with(|c| c.get())
}

pub fn reset_mac_count() {
    MACS.with(|c| c.set(0));
}

/// Row-major strided view: element `(i, j)` lives at `offset + i*rs + j*cs`.
#[derive(Clone, Copy, Debug)]
pub struct Layout {
    pub offset: usize,
    pub rs: usize,
    pub cs: usize,
}

impl Layout {
    pub const fn row_major(cols: usize) -> Self {
        Layout {
            offset: 0,
            rs: cols,
            cs: 1,
        }
    }

    pub const fn col_major(rows: usize) -> Self {
        Layout {
            offset: 0,
            rs: 1,
            cs: rows,
        }
    }

    pub const fn at(self, offset: usize) -> Self {
        Layout { offset, ..self }
    }

    fn last(&self, rows: usize, cols: usize) -> usize {
        self.offset + (rows - 1) * self.rs + (cols - 1) * self.cs
    }
}

/// `C[m,n] <- alpha * A[m,k] B[k,n] + beta * C[m,n]`.
///
/// With `beta == 0` the previous contents of `C` are ignored.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Element>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: &[T],
    la: Layout,
    b: &[T],
    lb: Layout,
    beta: T,
    c: &mut [T],
    lc: Layout,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(lc.last(m, n) < c.len(), "gemm: C view out of bounds");
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                let x = &mut c[lc.offset + i * lc.rs + j * lc.cs];
                *x = if beta == T::zero() { T::zero() } else { *x * beta };
            }
        }
        return;
    }
    assert!(la.last(m, k) < a.len(), "gemm: A view out of bounds");
    assert!(lb.last(k, n) < b.len(), "gemm: B view out of bounds");
    MACS.with(|cnt| cnt.set(cnt.get() + (m * k * n) as u64));
    // SAFETY: the three asserts above bound every strided access.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.as_ptr().add(la.offset),
            la.rs as isize,
            la.cs as isize,
            b.as_ptr().add(lb.offset),
            lb.rs as isize,
            lb.cs as isize,
            beta,
            c.as_mut_ptr().add(lc.offset),
            lc.rs as isize,
            lc.cs as isize,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_loop_product_with_transposed_views() {
        // A is 2x3 stored transposed (column-major), B is 3x2 row-major.
        let a_t = [1.0f64, 4.0, 2.0, 5.0, 3.0, 6.0];
        let b = [7.0f64, 8.0, 9.0, 10.0, 11.0, 12.0];
        let mut c = [0.0f64; 4];
        gemm(
            2,
            3,
            2,
            1.0,
            &a_t,
            Layout::col_major(2),
            &b,
            Layout::row_major(2),
            0.0,
            &mut c,
            Layout::row_major(2),
        );
        assert_eq!(c, [58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn counts_macs() {
        reset_mac_count();
        let a = [1.0f32; 6];
        let mut c = [0.0f32; 4];
        gemm(2, 3, 2, 1.0, &a, Layout::row_major(3), &a, Layout::row_major(2), 0.0, &mut c, Layout::row_major(2));
        assert_eq!(mac_count(), 12);
    }
}
