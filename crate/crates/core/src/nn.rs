//! Exact nearest-neighbour search over descriptor fields.
//!
//! Ties are broken by descriptor index, which is `(t, y, x)` order. All-zero
//! descriptors in a frame are interchangeable, so only the first one of each
//! frame is ever examined.

use std::ops::Range;

use crate::needle::DescriptorField;

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Squared distance, abandoned once it exceeds `bound` (the returned value
/// is then some partial sum greater than `bound`).
#[inline]
pub(crate) fn sq_dist_bounded(a: &[f64], b: &[f64], bound: f64) -> f64 {
    let mut acc = 0.0;
    for (ca, cb) in a.chunks(6).zip(b.chunks(6)) {
        for (x, y) in ca.iter().zip(cb) {
            acc += (x - y) * (x - y);
        }
        if acc > bound {
            return acc;
        }
    }
    acc
}

/// `(squared distance, index)` ordering with index tie-break.
#[inline]
fn better(d: f64, i: usize, best: (f64, usize)) -> bool {
    d < best.0 || (d == best.0 && i < best.1)
}

fn scan_frame(
    field: &DescriptorField,
    t: usize,
    q: &[f64],
    best: &mut (f64, usize),
    ties: &mut Vec<usize>,
) {
    let bucket = field.bucket(t);
    let candidates = bucket.nonzero.iter().chain(bucket.zero.first());
    for &i in candidates {
        let i = i as usize;
        let d = sq_dist_bounded(q, field.entries(i), best.0);
        if d < best.0 {
            ties.clear();
        }
        if d <= best.0 {
            ties.push(i);
        }
        if better(d, i, *best) {
            *best = (d, i);
        }
    }
}

/// Nearest descriptor within frame `t`; `None` if `t` is outside the field.
pub(crate) fn nearest_in_frame(
    field: &DescriptorField,
    t: usize,
    q: &[f64],
) -> Option<(f64, usize)> {
    nearest_in_frames(field, t..t + 1, q)
}

/// Nearest descriptor over the frames of `frames` that lie in the field.
pub(crate) fn nearest_in_frames(
    field: &DescriptorField,
    frames: Range<usize>,
    q: &[f64],
) -> Option<(f64, usize)> {
    let region = field.region();
    let lo = frames.start.max(region.t0);
    let hi = frames.end.min(region.t1);
    if lo >= hi {
        return None;
    }
    let mut best = (f64::INFINITY, usize::MAX);
    let mut ties = Vec::new();
    for t in lo..hi {
        scan_frame(field, t, q, &mut best, &mut ties);
    }
    Some(best)
}

/// Nearest descriptor within frame `t`, with exact ties going to the one
/// closest to pixel `hint`, then to the lowest index.
pub(crate) fn nearest_in_frame_near(
    field: &DescriptorField,
    t: usize,
    q: &[f64],
    hint: (usize, usize),
) -> Option<(f64, usize)> {
    let region = field.region();
    if !(region.t0..region.t1).contains(&t) {
        return None;
    }
    let mut best = (f64::INFINITY, usize::MAX);
    let mut ties = Vec::new();
    scan_frame(field, t, q, &mut best, &mut ties);
    let bucket = field.bucket(t);
    let zero_tied = bucket
        .zero
        .first()
        .is_some_and(|&z| ties.contains(&(z as usize)));
    let extra = if zero_tied {
        &bucket.zero[1..]
    } else {
        &[][..]
    };
    let key = |i: usize| {
        let loc = field.location(i);
        let (dx, dy) = (loc.x.abs_diff(hint.0), loc.y.abs_diff(hint.1));
        (dx * dx + dy * dy, i)
    };
    let pick = ties
        .iter()
        .copied()
        .chain(extra.iter().map(|&i| i as usize))
        .min_by_key(|&i| key(i))?;
    Some((best.0, pick))
}

/// The `k` nearest descriptors of the whole field, closest first.
pub(crate) fn k_nearest(field: &DescriptorField, q: &[f64], k: usize) -> Vec<(f64, usize)> {
    let region = field.region();
    let mut heap: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
    let mut zeros_left = k;
    let offer = |heap: &mut Vec<(f64, usize)>, i: usize| {
        let bound = if heap.len() < k {
            f64::INFINITY
        } else {
            heap[k - 1].0
        };
        let d = sq_dist_bounded(q, field.entries(i), bound);
        if heap.len() == k && !better(d, i, heap[k - 1]) {
            return;
        }
        let pos = heap.partition_point(|&(hd, hi)| better(hd, hi, (d, i)));
        heap.insert(pos, (d, i));
        heap.truncate(k);
    };
    for t in region.t0..region.t1 {
        let bucket = field.bucket(t);
        for &i in &bucket.nonzero {
            offer(&mut heap, i as usize);
        }
        // the globally first k zero descriptors win every zero tie
        let take = zeros_left.min(bucket.zero.len());
        for &i in &bucket.zero[..take] {
            offer(&mut heap, i as usize);
        }
        zeros_left -= take;
    }
    heap
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::needle::NeedleParams;

    fn toy() -> DescriptorField {
        let params = NeedleParams {
            patch_radius: 1,
            gamma: 1,
            scales: 1,
            noise_percentile: 0.3,
        };
        // 3x1 spatial region, frames 1..4 -> 9 descriptors of length 2
        let data = vec![
            0.0, 0.0, 0.5, 0.5, 0.0, 0.0, //
            1.0, 0.0, 0.0, 0.0, 0.0, 1.0, //
            0.0, 0.0, 0.5, 0.5, 0.2, 0.8,
        ];
        DescriptorField::from_entries((5, 3, 5), params, 1.0, data).unwrap()
    }

    fn brute(field: &DescriptorField, q: &[f64]) -> Vec<(f64, usize)> {
        let mut all: Vec<_> = (0..field.len())
            .map(|i| (sq_dist(q, field.entries(i)), i))
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        all
    }

    #[test]
    fn frame_search_prefers_lowest_index_among_zeros() {
        let f = toy();
        assert_eq!(nearest_in_frame(&f, 1, &[0.0, 0.0]), Some((0.0, 0)));
        assert_eq!(
            nearest_in_frame(&f, 2, &[0.1, 0.1]),
            Some((sq_dist(&[0.1, 0.1], &[0.0, 0.0]), 4))
        );
        assert_eq!(nearest_in_frame(&f, 0, &[0.0, 0.0]), None);
        assert_eq!(nearest_in_frame(&f, 4, &[0.0, 0.0]), None);
    }

    #[test]
    fn hinted_search_breaks_ties_by_position() {
        let f = toy();
        // zeros at x = 1 and x = 3 in frame 1
        assert_eq!(
            nearest_in_frame_near(&f, 1, &[0.0, 0.0], (3, 1)),
            Some((0.0, 2))
        );
        assert_eq!(
            nearest_in_frame_near(&f, 1, &[0.0, 0.0], (1, 1)),
            Some((0.0, 0))
        );
        assert_eq!(
            nearest_in_frame_near(&f, 1, &[0.5, 0.5], (3, 1)),
            Some((0.0, 1))
        );
        assert_eq!(nearest_in_frame_near(&f, 9, &[0.5, 0.5], (3, 1)), None);
    }

    #[test]
    fn knn_matches_brute_force() {
        let f = toy();
        for q in [[0.0, 0.0], [0.4, 0.6], [1.0, 1.0], [0.2, 0.8]] {
            for k in 1..=9 {
                assert_eq!(
                    k_nearest(&f, &q, k),
                    brute(&f, &q)[..k].to_vec(),
                    "q={q:?} k={k}"
                );
            }
        }
    }

    #[test]
    fn range_search_matches_brute_force() {
        let f = toy();
        let q = [0.3, 0.6];
        assert_eq!(nearest_in_frames(&f, 0..100, &q), Some(brute(&f, &q)[0]));
    }
}
