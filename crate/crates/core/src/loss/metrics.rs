//! Overlap and surface-distance metrics on hard label maps.

use serde::Serialize;

use crate::error::{Error, Result};

/// Dice similarity coefficient of one class. Two empty masks agree
/// perfectly and score 1.
pub fn dsc(pred: &[u32], truth: &[u32], class: u32) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::shape("dsc", format!("{} vs {} voxels", pred.len(), truth.len())));
    }
    let (mut inter, mut p, mut t) = (0u64, 0u64, 0u64);
    for (&a, &b) in pred.iter().zip(truth) {
        let (a, b) = (a == class, b == class);
        inter += (a && b) as u64;
        p += a as u64;
        t += b as u64;
    }
    Ok(if p + t == 0 { 1.0 } else { 2.0 * inter as f64 / (p + t) as f64 })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HdStatus {
    Ok,
    /// Exactly one mask is empty; the distance is infinite.
    OneEmpty,
    /// Both masks are empty; the distance is 0.
    BothEmpty,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HausdorffResult {
    pub distance: f64,
    pub status: HdStatus,
}

fn check_dims(op: &'static str, a: &[bool], b: &[bool], dims: [usize; 3], spacing: [f64; 3]) -> Result<()> {
    let n: usize = dims.iter().product();
    if a.len() != n || b.len() != n {
        return Err(Error::shape(op, format!("masks of {} and {} voxels for dims {dims:?}", a.len(), b.len())));
    }
    if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
        return Err(Error::invalid(op, format!("spacing {spacing:?} must be positive")));
    }
    Ok(())
}

/// Foreground voxels with at least one background 6-neighbour; voxels
/// outside the volume count as background.
pub fn boundary(mask: &[bool], dims: [usize; 3]) -> Vec<bool> {
    let [d, h, w] = dims;
    let mut out = vec![false; mask.len()];
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let i = (z * h + y) * w + x;
                if !mask[i] {
                    continue;
                }
                let edge = z == 0 || y == 0 || x == 0 || z + 1 == d || y + 1 == h || x + 1 == w;
                out[i] = edge
                    || !mask[i - h * w]
                    || !mask[i + h * w]
                    || !mask[i - w]
                    || !mask[i + w]
                    || !mask[i - 1]
                    || !mask[i + 1];
            }
        }
    }
    out
}

/// Lower envelope of parabolas: `f[i] <- min_j f[j] + (s (i - j))^2`.
/// Infinite entries are sites that never win.
fn edt_1d(f: &mut [f64], s: f64, v: &mut Vec<usize>, z: &mut Vec<f64>, out: &mut Vec<f64>) {
    let n = f.len();
    v.clear();
    z.clear();
    for q in 0..n {
        if f[q].is_infinite() {
            continue;
        }
        let pq = q as f64 * s;
        loop {
            match v.last() {
                None => {
                    v.push(q);
                    z.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&p) => {
                    let pp = p as f64 * s;
                    let x = ((f[q] + pq * pq) - (f[p] + pp * pp)) / (2.0 * (pq - pp));
                    if x <= *z.last().expect("paired with v") {
                        v.pop();
                        z.pop();
                    } else {
                        v.push(q);
                        z.push(x);
                        break;
                    }
                }
            }
        }
    }
    if v.is_empty() {
        return;
    }
    out.clear();
    let mut k = 0;
    for q in 0..n {
        let x = q as f64 * s;
        while k + 1 < v.len() && z[k + 1] < x {
            k += 1;
        }
        let d = x - v[k] as f64 * s;
        out.push(f[v[k]] + d * d);
    }
    f.copy_from_slice(out);
}

/// Exact squared Euclidean distance (physical units) from every voxel to
/// the nearest `true` site. All infinite when there are no sites.
pub fn squared_distance_transform(sites: &[bool], dims: [usize; 3], spacing: [f64; 3]) -> Vec<f64> {
    let [d, h, w] = dims;
    let mut f: Vec<f64> = sites.iter().map(|&s| if s { 0.0 } else { f64::INFINITY }).collect();
    let (mut v, mut z, mut out) = (Vec::new(), Vec::new(), Vec::new());
    let mut line = Vec::new();
    // axis 2 (contiguous)
    for row in f.chunks_mut(w) {
        edt_1d(row, spacing[2], &mut v, &mut z, &mut out);
    }
    // axis 1
    for zi in 0..d {
        for x in 0..w {
            let at = |y: usize| (zi * h + y) * w + x;
            line.clear();
            line.extend((0..h).map(|y| f[at(y)]));
            edt_1d(&mut line, spacing[1], &mut v, &mut z, &mut out);
            for y in 0..h {
                f[at(y)] = line[y];
            }
        }
    }
    // axis 0
    for y in 0..h {
        for x in 0..w {
            let at = |zi: usize| (zi * h + y) * w + x;
            line.clear();
            line.extend((0..d).map(|zi| f[at(zi)]));
            edt_1d(&mut line, spacing[0], &mut v, &mut z, &mut out);
            for zi in 0..d {
                f[at(zi)] = line[zi];
            }
        }
    }
    f
}

/// Symmetric Hausdorff distance between the boundary surfaces of two
/// masks, in physical units of `spacing`.
pub fn hausdorff(pred: &[bool], truth: &[bool], dims: [usize; 3], spacing: [f64; 3]) -> Result<HausdorffResult> {
    check_dims("hausdorff", pred, truth, dims, spacing)?;
    let (pe, te) = (!pred.contains(&true), !truth.contains(&true));
    if pe && te {
        return Ok(HausdorffResult { distance: 0.0, status: HdStatus::BothEmpty });
    }
    if pe || te {
        return Ok(HausdorffResult { distance: f64::INFINITY, status: HdStatus::OneEmpty });
    }
    let (bp, bt) = (boundary(pred, dims), boundary(truth, dims));
    let directed = |from: &[bool], to: &[bool]| -> f64 {
        let dt = squared_distance_transform(to, dims, spacing);
        from.iter().zip(&dt).filter(|(b, _)| **b).map(|(_, &d)| d).fold(0.0, f64::max)
    };
    let d2 = directed(&bp, &bt).max(directed(&bt, &bp));
    Ok(HausdorffResult { distance: d2.sqrt(), status: HdStatus::Ok })
}

/// Per-class DSC and Hausdorff distance for classes `1..num_classes`.
#[derive(Clone, Debug, Serialize)]
pub struct ClassScore {
    pub class: u32,
    pub dsc: f64,
    pub hd: HausdorffResult,
}

pub fn score_case(pred: &[u32], truth: &[u32], dims: [usize; 3], spacing: [f64; 3], num_classes: usize) -> Result<Vec<ClassScore>> {
    (1..num_classes as u32)
        .map(|c| {
            let pm: Vec<bool> = pred.iter().map(|&v| v == c).collect();
            let tm: Vec<bool> = truth.iter().map(|&v| v == c).collect();
            Ok(ClassScore {
                class: c,
                dsc: dsc(pred, truth, c)?,
                hd: hausdorff(&pm, &tm, dims, spacing)?,
            })
        })
        .collect()
}

/// Mean over organs. Infinite if any organ distance is infinite.
pub fn average_hd(scores: &[ClassScore]) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    scores.iter().map(|s| s.hd.distance).sum::<f64>() / scores.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn coords(i: usize, dims: [usize; 3]) -> [f64; 3] {
        [(i / (dims[1] * dims[2])) as f64, ((i / dims[2]) % dims[1]) as f64, (i % dims[2]) as f64]
    }

    fn brute_hd(a: &[bool], b: &[bool], dims: [usize; 3], sp: [f64; 3]) -> f64 {
        let (ba, bb) = (boundary(a, dims), boundary(b, dims));
        let dist = |i: usize, j: usize| {
            let (p, q) = (coords(i, dims), coords(j, dims));
            (0..3).map(|k| ((p[k] - q[k]) * sp[k]).powi(2)).sum::<f64>().sqrt()
        };
        let directed = |x: &[bool], y: &[bool]| {
            (0..x.len())
                .filter(|&i| x[i])
                .map(|i| (0..y.len()).filter(|&j| y[j]).map(|j| dist(i, j)).fold(f64::INFINITY, f64::min))
                .fold(0.0, f64::max)
        };
        directed(&ba, &bb).max(directed(&bb, &ba))
    }

    #[test]
    fn dsc_cases() {
        assert_eq!(dsc(&[1, 1, 0, 0], &[1, 0, 1, 0], 1).unwrap(), 0.5);
        assert_eq!(dsc(&[0, 0], &[0, 0], 1).unwrap(), 1.0);
        assert_eq!(dsc(&[1, 0], &[0, 1], 1).unwrap(), 0.0);
        assert!(dsc(&[1], &[1, 1], 1).is_err());
    }

    #[test]
    fn empty_mask_cases() {
        let e = vec![false; 8];
        let mut one = e.clone();
        one[3] = true;
        let r = hausdorff(&e, &e, [2, 2, 2], [1.0; 3]).unwrap();
        assert_eq!((r.distance, r.status), (0.0, HdStatus::BothEmpty));
        let r = hausdorff(&one, &e, [2, 2, 2], [1.0; 3]).unwrap();
        assert!(r.distance.is_infinite() && r.status == HdStatus::OneEmpty);
    }

    #[test]
    fn single_voxels_with_anisotropic_spacing() {
        let dims = [3, 4, 5];
        let mut a = vec![false; 60];
        let mut b = vec![false; 60];
        a[0] = true;
        b[2 * 20 + 3 * 5 + 4] = true;
        let r = hausdorff(&a, &b, dims, [2.5, 0.5, 1.0]).unwrap();
        let want = (25.0f64 + 2.25 + 16.0).sqrt();
        assert!((r.distance - want).abs() < 1e-12, "{r:?}");
    }

    #[test]
    fn boundary_of_solid_cube_is_its_shell() {
        let dims = [5, 5, 5];
        let mask: Vec<bool> = (0..125).map(|i| coords(i, dims).iter().all(|&c| (1.0..=3.0).contains(&c))).collect();
        let b = boundary(&mask, dims);
        assert_eq!(b.iter().filter(|&&x| x).count(), 27 - 1);
        assert!(!b[(2 * 5 + 2) * 5 + 2]);
    }

    #[test]
    fn identical_masks_have_zero_distance() {
        let mask: Vec<bool> = (0..64).map(|i| i % 3 == 0).collect();
        assert_eq!(hausdorff(&mask, &mask, [4, 4, 4], [1.0, 2.0, 3.0]).unwrap().distance, 0.0);
    }

    fn mask_strategy() -> impl Strategy<Value = ([usize; 3], Vec<bool>, Vec<bool>, [f64; 3])> {
        ([1usize..5, 1usize..5, 1usize..6], [0.3f64..3.0, 0.3f64..3.0, 0.3f64..3.0]).prop_flat_map(|(d, sp)| {
            let n = d[0] * d[1] * d[2];
            (Just(d), proptest::collection::vec(any::<bool>(), n), proptest::collection::vec(any::<bool>(), n), Just(sp))
        })
    }

    proptest! {
        #[test]
        fn edt_matches_brute_force((dims, sites, _, sp) in mask_strategy()) {
            let dt = squared_distance_transform(&sites, dims, sp);
            for i in 0..sites.len() {
                let p = coords(i, dims);
                let want = (0..sites.len())
                    .filter(|&j| sites[j])
                    .map(|j| {
                        let q = coords(j, dims);
                        (0..3).map(|k| ((p[k] - q[k]) * sp[k]).powi(2)).sum::<f64>()
                    })
                    .fold(f64::INFINITY, f64::min);
                prop_assert!(dt[i] == want || (dt[i] - want).abs() < 1e-9 * want.max(1.0), "{} vs {}", dt[i], want);
            }
        }

        #[test]
        fn hausdorff_matches_brute_force((dims, a, b, sp) in mask_strategy()) {
            let r = hausdorff(&a, &b, dims, sp).unwrap();
            if r.status == HdStatus::Ok {
                let want = brute_hd(&a, &b, dims, sp);
                prop_assert!((r.distance - want).abs() < 1e-9 * want.max(1.0));
                let s = hausdorff(&b, &a, dims, sp).unwrap();
                prop_assert_eq!(r.distance, s.distance);
            }
        }
    }
}
