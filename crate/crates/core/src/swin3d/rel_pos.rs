//! Relative-position bias tables.

use std::sync::Arc;

/// Entries of the compact bias table, `(2W_h-1)(2W_w-1)(2W_s-1)`.
pub fn table_len(window: [usize; 3]) -> usize {
    window.iter().map(|&w| 2 * w - 1).product()
}

/// `L x L` map (row-major) from token pairs to table entries.
///
/// `index[i][j]` flattens `c_i - c_j + (W - 1)` row-major over the
/// `(2W_h-1, 2W_w-1, 2W_s-1)` grid, where `c` are in-window coordinates.
pub fn build_rel_pos_index(window: [usize; 3]) -> Vec<u32> {
    let [wd, wh, ww] = window;
    let l = wd * wh * ww;
    let coords: Vec<[usize; 3]> = (0..l).map(|t| [t / (wh * ww), (t / ww) % wh, t % ww]).collect();
    let span = [2 * wd - 1, 2 * wh - 1, 2 * ww - 1];
    let mut idx = Vec::with_capacity(l * l);
    for ci in &coords {
        for cj in &coords {
            let r: [usize; 3] = std::array::from_fn(|a| ci[a] + window[a] - 1 - cj[a]);
            idx.push(((r[0] * span[1] + r[1]) * span[2] + r[2]) as u32);
        }
    }
    idx
}

/// Flat indices into a `[heads, table_len]` tensor producing the dense bias
/// `[1, heads, L, L]`.
pub fn bias_gather_index(window: [usize; 3], heads: usize) -> Arc<[u32]> {
    let rel = build_rel_pos_index(window);
    let t = table_len(window) as u32;
    (0..heads as u32)
        .flat_map(|h| rel.iter().map(move |&r| h * t + r))
        .collect::<Vec<_>>()
        .into()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_token_window() {
        assert_eq!(table_len([1, 1, 2]), 3);
        assert_eq!(build_rel_pos_index([1, 1, 2]), vec![1, 0, 2, 1]);
    }

    #[test]
    fn single_token_window() {
        assert_eq!(build_rel_pos_index([1, 1, 1]), vec![0]);
    }

    #[test]
    fn gather_index_offsets_heads() {
        let g = bias_gather_index([1, 1, 2], 2);
        assert_eq!(&*g, &[1, 0, 2, 1, 4, 3, 5, 4]);
    }

    proptest! {
        #[test]
        fn index_properties(window in prop::array::uniform3(1usize..=4)) {
            let idx = build_rel_pos_index(window);
            let l: usize = window.iter().product();
            let t = table_len(window) as u32;
            prop_assert_eq!(idx.len(), l * l);
            prop_assert!(idx.iter().all(|&v| v < t));
            let centre = idx[0];
            prop_assert_eq!(centre, (t - 1) / 2);
            for i in 0..l {
                prop_assert_eq!(idx[i * l + i], centre);
                for j in 0..l {
                    // negated offset mirrors through the centre entry
                    prop_assert_eq!(idx[i * l + j] + idx[j * l + i], 2 * centre);
                }
            }
        }
    }
}
