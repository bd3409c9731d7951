//! Grouping a video collection by shared space-time regions.
//!
//! Each pair of videos is compared by randomized region growing: every
//! descriptor of one video tries a handful of random positions in the other,
//! then good matches spread to their neighbours over four sweeps. Pairs that
//! share rare, well-explained regions get high affinity, and a recursive
//! normalized cut splits the affinity graph into the requested clusters.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{ensure, Error, Result};
use crate::needle::{describe_video, DescriptorField, Location, NeedleParams};
use crate::nn::sq_dist_bounded;
use crate::significance::{build_codebook, saving_in_bits, Codebook};
use crate::video::Video;

/// Samples per descriptor and cluster: a region covering 1% of a video is
/// hit with probability 0.98.
pub const SAMPLES_PER_CLUSTER: usize = 392;

/// `ceil((N·F / |R|) · ln(1/δ))`, the number of uniform samples that hit a
/// region of `region` points among `pixels · frames` with probability
/// `1 - δ`. Values within 1e-9 above an integer round down, so that
/// floating-point noise cannot add a sample.
pub fn sample_count(pixels: usize, frames: usize, region: usize, delta: f64) -> Result<usize> {
    let total = pixels as f64 * frames as f64;
    ensure!(
        region > 0 && region as f64 <= total,
        InvalidArgument,
        "region size must lie in 1..=N·F"
    );
    ensure!(
        delta > 0.0 && delta < 1.0,
        InvalidArgument,
        "failure probability must lie in (0, 1)"
    );
    let s = total / region as f64 * (1.0 / delta).ln();
    Ok((s - 1e-9).ceil().max(0.0) as usize)
}

/// Best match found so far for every source descriptor, in source index
/// order.
#[derive(Debug, Clone)]
pub struct RegionGrowState {
    matches: Vec<u32>,
    dist_sq: Vec<f64>,
    sampled_sq: Vec<f64>,
    dst_region: crate::needle::ValidRegion,
}

impl RegionGrowState {
    pub fn len(&self) -> usize {
        self.matches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matches.is_empty()
    }

    pub fn match_of(&self, src_index: usize) -> Location {
        self.dst_region
            .location_of(self.matches[src_index] as usize)
    }

    /// Final match distance.
    pub fn distance(&self, src_index: usize) -> f64 {
        self.dist_sq[src_index].sqrt()
    }

    /// Match distance after random sampling, before propagation.
    pub fn sampled_distance(&self, src_index: usize) -> f64 {
        self.sampled_sq[src_index].sqrt()
    }
}

/// Random sampling followed by spatial (top-down, bottom-up) and temporal
/// (forward, backward) propagation sweeps. Each source descriptor draws
/// `samples` uniform positions from `dst`; a neighbour offers its own match
/// moved by the same offset that separates the two source points, and is
/// accepted unless it is strictly worse.
pub fn region_grow(
    src: &DescriptorField,
    dst: &DescriptorField,
    samples: usize,
    seed: u64,
) -> Result<RegionGrowState> {
    ensure!(
        src.dim() == dst.dim(),
        InvalidArgument,
        "descriptor dimensions differ"
    );
    ensure!(
        samples >= 1,
        InvalidArgument,
        "region growing needs at least one sample to propagate"
    );
    let sr = *src.region();
    let dr = *dst.region();
    let plane = sr.width() * sr.height();
    let n_dst = dst.len();
    let mut matches = vec![0u32; src.len()];
    let mut dist_sq = vec![f64::INFINITY; src.len()];

    matches
        .par_chunks_mut(plane)
        .zip(dist_sq.par_chunks_mut(plane))
        .enumerate()
        .for_each(|(k, (m, d))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let base = k * plane;
            for j in 0..plane {
                let q = src.entries(base + j);
                for _ in 0..samples {
                    let c = rng.gen_range(0..n_dst);
                    let dd = sq_dist_bounded(q, dst.entries(c), d[j]);
                    if dd < d[j] {
                        d[j] = dd;
                        m[j] = c as u32;
                    }
                }
            }
        });
    let sampled_sq = dist_sq.clone();

    let offer = |q: &[f64], from: Location, step: (i64, i64, i64), m: &mut u32, d: &mut f64| {
        let (x, y, t) = (
            from.x as i64 + step.0,
            from.y as i64 + step.1,
            from.t as i64 + step.2,
        );
        if !dr.contains_signed(x, y, t) {
            return;
        }
        let c = dr.index_of(Location::new(x as usize, y as usize, t as usize));
        let dd = sq_dist_bounded(q, dst.entries(c), *d);
        // equal offers are taken so coherent matches cross flat areas
        if dd <= *d {
            *d = dd;
            *m = c as u32;
        }
    };

    // spatial sweeps, frames independent
    let (w, h) = (sr.width(), sr.height());
    matches
        .par_chunks_mut(plane)
        .zip(dist_sq.par_chunks_mut(plane))
        .enumerate()
        .for_each(|(k, (m, d))| {
            let base = k * plane;
            for j in 0..plane {
                let (x, y) = (j % w, j / w);
                let q = src.entries(base + j);
                if x > 0 {
                    let from = dr.location_of(m[j - 1] as usize);
                    let (mut mj, mut dj) = (m[j], d[j]);
                    offer(q, from, (1, 0, 0), &mut mj, &mut dj);
                    (m[j], d[j]) = (mj, dj);
                }
                if y > 0 {
                    let from = dr.location_of(m[j - w] as usize);
                    let (mut mj, mut dj) = (m[j], d[j]);
                    offer(q, from, (0, 1, 0), &mut mj, &mut dj);
                    (m[j], d[j]) = (mj, dj);
                }
            }
            for j in (0..plane).rev() {
                let (x, y) = (j % w, j / w);
                let q = src.entries(base + j);
                if x + 1 < w {
                    let from = dr.location_of(m[j + 1] as usize);
                    let (mut mj, mut dj) = (m[j], d[j]);
                    offer(q, from, (-1, 0, 0), &mut mj, &mut dj);
                    (m[j], d[j]) = (mj, dj);
                }
                if y + 1 < h {
                    let from = dr.location_of(m[j + w] as usize);
                    let (mut mj, mut dj) = (m[j], d[j]);
                    offer(q, from, (0, -1, 0), &mut mj, &mut dj);
                    (m[j], d[j]) = (mj, dj);
                }
            }
        });

    // temporal sweeps, pixels independent within a frame
    let frames = sr.frames();
    for k in 1..frames {
        let (before, after) = matches.split_at_mut(k * plane);
        let prev = &before[(k - 1) * plane..];
        let cur = &mut after[..plane];
        let dcur = &mut dist_sq[k * plane..(k + 1) * plane];
        cur.par_iter_mut()
            .zip(dcur.par_iter_mut())
            .enumerate()
            .for_each(|(j, (m, d))| {
                let from = dr.location_of(prev[j] as usize);
                offer(src.entries(k * plane + j), from, (0, 0, 1), m, d);
            });
    }
    for k in (0..frames.saturating_sub(1)).rev() {
        let (before, after) = matches.split_at_mut((k + 1) * plane);
        let next = &after[..plane];
        let cur = &mut before[k * plane..];
        let dcur = &mut dist_sq[k * plane..(k + 1) * plane];
        cur.par_iter_mut()
            .zip(dcur.par_iter_mut())
            .enumerate()
            .for_each(|(j, (m, d))| {
                let from = dr.location_of(next[j] as usize);
                offer(src.entries(k * plane + j), from, (0, 0, -1), m, d);
            });
    }

    Ok(RegionGrowState {
        matches,
        dist_sq,
        sampled_sq,
        dst_region: dr,
    })
}

/// ΔH of every descriptor of `field`, in index order.
pub fn delta_h_all(field: &DescriptorField, cb: &Codebook) -> Result<Vec<f64>> {
    ensure!(
        field.dim() == cb.dim(),
        InvalidArgument,
        "field dim {} != codebook dim {}",
        field.dim(),
        cb.dim()
    );
    (0..field.len())
        .into_par_iter()
        .map(|i| cb.delta_h(field.entries(i)))
        .collect()
}

/// Sum of the positive savings in bits over all grown matches, given the
/// precomputed ΔH of each source descriptor.
pub fn affinity_from(state: &RegionGrowState, delta_h: &[f64]) -> Result<f64> {
    ensure!(
        delta_h.len() == state.len(),
        InvalidArgument,
        "ΔH count differs from the match count"
    );
    Ok((0..state.len())
        .map(|i| saving_in_bits(delta_h[i], state.distance(i)).max(0.0))
        .sum())
}

/// Directed affinity of `src` towards the video its matches point into.
pub fn affinity(state: &RegionGrowState, src: &DescriptorField, cb: &Codebook) -> Result<f64> {
    ensure!(
        src.len() == state.len(),
        InvalidArgument,
        "state does not belong to this field"
    );
    affinity_from(state, &delta_h_all(src, cb)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterConfig {
    pub needle: NeedleParams,
    pub codebook_k: usize,
    pub sample_fraction: f64,
    pub clusters: usize,
    /// Rounds of sampling; `None` uses `ceil(10·log10 M)`.
    pub iterations: Option<usize>,
    pub samples_per_cluster: usize,
    pub seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            needle: NeedleParams::default(),
            codebook_k: crate::significance::DEFAULT_CODEBOOK_K,
            sample_fraction: crate::significance::DEFAULT_SAMPLE_FRACTION,
            clusters: 2,
            iterations: None,
            samples_per_cluster: SAMPLES_PER_CLUSTER,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterResult {
    /// Cluster of each input video, numbered by first appearance in a
    /// content-defined order, so that relabelling is stable under input
    /// permutation.
    pub labels: Vec<usize>,
    /// Symmetric affinities with a zero diagonal, in input order.
    pub affinity: Vec<Vec<f64>>,
    pub iterations: usize,
}

pub fn default_iterations(videos: usize) -> usize {
    (10.0 * (videos as f64).log10()).ceil().max(1.0) as usize
}

/// SHA-256 of the dimensions and samples.
pub fn content_key(v: &Video) -> [u8; 32] {
    let mut h = Sha256::new();
    for d in [v.width(), v.height(), v.frame_count()] {
        h.update((d as u64).to_le_bytes());
    }
    for s in v.samples() {
        h.update(s.to_le_bytes());
    }
    h.finalize().into()
}

fn pair_seed(seed: u64, a: &[u8; 32], b: &[u8; 32], round: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(a);
    h.update(b);
    h.update((round as u64).to_le_bytes());
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("digest has 32 bytes"))
}

/// Splits `total` into integer parts proportional to `weights` by largest
/// remainder; ties go to the earlier entry. Uniform when all weights are 0.
pub fn allocate(total: usize, weights: &[f64]) -> Vec<usize> {
    if weights.is_empty() {
        return Vec::new();
    }
    let sum: f64 = weights.iter().sum();
    let shares: Vec<f64> = if sum > 0.0 {
        weights.iter().map(|w| total as f64 * w / sum).collect()
    } else {
        vec![total as f64 / weights.len() as f64; weights.len()]
    };
    let mut out: Vec<usize> = shares.iter().map(|s| s.floor() as usize).collect();
    let assigned: usize = out.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (shares[a] - shares[a].floor(), shares[b] - shares[b].floor());
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        out[i] += 1;
    }
    out
}

/// Describes every video, then runs the sampling rounds and partitions
/// the resulting affinity graph.
pub fn cluster_collection(videos: &[Video], cfg: &ClusterConfig) -> Result<ClusterResult> {
    let m = videos.len();
    ensure!(
        cfg.clusters >= 1,
        InvalidArgument,
        "need at least one cluster"
    );
    ensure!(
        m >= 2 * cfg.clusters,
        InvalidArgument,
        "{m} videos are too few for {} clusters",
        cfg.clusters
    );
    ensure!(
        cfg.samples_per_cluster >= 1,
        InvalidArgument,
        "samples per cluster must be positive"
    );
    let iterations = cfg.iterations.unwrap_or_else(|| default_iterations(m));
    ensure!(
        iterations >= 1,
        InvalidArgument,
        "need at least one iteration"
    );

    // work in a content-defined order so the input order cannot matter
    let keys: Vec<[u8; 32]> = videos.par_iter().map(content_key).collect();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| keys[a].cmp(&keys[b]).then(a.cmp(&b)));

    let fields: Vec<DescriptorField> = order
        .par_iter()
        .map(|&i| describe_video(&videos[i], &cfg.needle))
        .collect::<Result<_>>()?;
    let refs: Vec<&DescriptorField> = fields.iter().collect();
    let cb = build_codebook(&refs, cfg.sample_fraction, cfg.codebook_k, cfg.seed)?;
    let delta_h: Vec<Vec<f64>> = fields
        .iter()
        .map(|f| delta_h_all(f, &cb))
        .collect::<Result<_>>()?;
    let okeys: Vec<&[u8; 32]> = order.iter().map(|&i| &keys[i]).collect();

    let budget = cfg.samples_per_cluster * cfg.clusters;
    let mut directed = vec![vec![0.0f64; m]; m];
    let mut sym = vec![vec![0.0f64; m]; m];
    for round in 0..iterations {
        let mut jobs = Vec::new();
        for i in 0..m {
            let others: Vec<usize> = (0..m).filter(|&j| j != i).collect();
            let weights: Vec<f64> = if round == 0 {
                vec![1.0; others.len()]
            } else {
                others.iter().map(|&j| sym[i][j]).collect()
            };
            for (&j, s) in others.iter().zip(allocate(budget, &weights)) {
                if s > 0 {
                    jobs.push((i, j, s));
                }
            }
        }
        let results: Vec<(usize, usize, f64)> = jobs
            .par_iter()
            .map(|&(i, j, s)| {
                let state = region_grow(
                    &fields[i],
                    &fields[j],
                    s,
                    pair_seed(cfg.seed, okeys[i], okeys[j], round),
                )?;
                Ok((i, j, affinity_from(&state, &delta_h[i])?))
            })
            .collect::<Result<_>>()?;
        for (i, j, a) in results {
            directed[i][j] = directed[i][j].max(a);
        }
        for i in 0..m {
            for j in 0..m {
                sym[i][j] = if i == j {
                    0.0
                } else {
                    0.5 * (directed[i][j] + directed[j][i])
                };
            }
        }
    }

    let canonical_labels = if cfg.clusters == 1 {
        vec![0; m]
    } else {
        let w = DMatrix::from_fn(m, m, |i, j| sym[i][j]);
        ensure!(
            w.iter().any(|&x| x > 0.0),
            Degenerate,
            "all affinities are zero; the collection shares no informative regions"
        );
        ncut_partition(&w, cfg.clusters)?
    };

    let mut labels = vec![0; m];
    let mut affinity = vec![vec![0.0; m]; m];
    for (ci, &i) in order.iter().enumerate() {
        labels[i] = canonical_labels[ci];
        for (cj, &j) in order.iter().enumerate() {
            affinity[i][j] = sym[ci][cj];
        }
    }
    Ok(ClusterResult {
        labels,
        affinity,
        iterations,
    })
}

/// `cut(A, B)/assoc(A, V) + cut(A, B)/assoc(B, V)` within `w`.
pub fn ncut_value(w: &DMatrix<f64>, side: &[bool]) -> f64 {
    let n = w.nrows();
    let (mut cut, mut assoc_a, mut assoc_b) = (0.0, 0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            let x = w[(i, j)];
            if side[i] {
                assoc_a += x;
            } else {
                assoc_b += x;
            }
            if side[i] && !side[j] {
                cut += x;
            }
        }
    }
    let term = |assoc: f64| {
        if assoc > 0.0 {
            cut / assoc
        } else {
            f64::INFINITY
        }
    };
    term(assoc_a) + term(assoc_b)
}

/// Orders nodes by the second-smallest eigenvector of the symmetric
/// normalized Laplacian, mapped back through `D^{-1/2}`, and cuts that order
/// where the normalized cut is lowest (earliest on ties). Searching the
/// threshold, rather than splitting at zero, keeps whole groups together
/// when that eigenvalue is repeated. A vanishing link to every node keeps
/// isolated nodes from breaking the decomposition.
pub fn spectral_bipartition(w: &DMatrix<f64>) -> Result<Vec<bool>> {
    let n = w.nrows();
    ensure!(
        n >= 2 && w.ncols() == n,
        InvalidArgument,
        "need a square matrix of size at least 2"
    );
    let max = w.iter().cloned().fold(0.0, f64::max);
    let eps = if max > 0.0 { 1e-9 * max } else { 1.0 };
    let reg = DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { w[(i, j)] + eps });
    let inv_sqrt: Vec<f64> = (0..n).map(|i| 1.0 / reg.row(i).sum().sqrt()).collect();
    let lap = DMatrix::from_fn(n, n, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - inv_sqrt[i] * reg[(i, j)] * inv_sqrt[j]
    });
    let eig = SymmetricEigen::new(lap);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .total_cmp(&eig.eigenvalues[b])
            .then(a.cmp(&b))
    });
    let v = eig.eigenvectors.column(idx[1]);
    let y: Vec<f64> = (0..n).map(|i| v[i] * inv_sqrt[i]).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| y[a].total_cmp(&y[b]).then(a.cmp(&b)));
    let side_for = |k: usize| {
        let mut side = vec![false; n];
        for &i in &order[k..] {
            side[i] = true;
        }
        side
    };
    let best = (1..n)
        .map(|k| (ncut_value(&reg, &side_for(k)), k))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map_or(n / 2, |(_, k)| k);
    Ok(side_for(best))
}

/// Recursive bipartition into `clusters` parts: at every step the part
/// whose split has the lowest normalized cut is divided. Labels are
/// numbered by first appearance in index order.
pub fn ncut_partition(w: &DMatrix<f64>, clusters: usize) -> Result<Vec<usize>> {
    let n = w.nrows();
    ensure!(
        clusters >= 1 && clusters <= n,
        InvalidArgument,
        "cannot form {clusters} clusters from {n} nodes"
    );
    let mut parts: Vec<Vec<usize>> = vec![(0..n).collect()];
    while parts.len() < clusters {
        let mut best: Option<(f64, usize, Vec<usize>, Vec<usize>)> = None;
        for (p, members) in parts.iter().enumerate() {
            if members.len() < 2 {
                continue;
            }
            let sub = DMatrix::from_fn(members.len(), members.len(), |i, j| {
                w[(members[i], members[j])]
            });
            let side = spectral_bipartition(&sub)?;
            let value = ncut_value(&sub, &side);
            let a: Vec<usize> = members
                .iter()
                .zip(&side)
                .filter(|(_, &s)| s)
                .map(|(&i, _)| i)
                .collect();
            let b: Vec<usize> = members
                .iter()
                .zip(&side)
                .filter(|(_, &s)| !s)
                .map(|(&i, _)| i)
                .collect();
            if best.as_ref().is_none_or(|(v, ..)| value < *v) {
                best = Some((value, p, a, b));
            }
        }
        let (_, p, a, b) = best.ok_or_else(|| Error::Degenerate("no part left to split".into()))?;
        parts.remove(p);
        parts.push(a);
        parts.push(b);
    }
    let mut labels = vec![0; n];
    let mut numbering = BTreeMap::new();
    for (p, members) in parts.iter().enumerate() {
        let first = *members.iter().min().expect("parts are non-empty");
        numbering.insert(first, p);
    }
    for (label, (_, &p)) in numbering.iter().enumerate() {
        for &i in &parts[p] {
            labels[i] = label;
        }
    }
    Ok(labels)
}

/// Fraction of items whose cluster's majority class equals their own.
pub fn purity(labels: &[usize], truth: &[usize]) -> Result<f64> {
    ensure!(
        labels.len() == truth.len(),
        InvalidArgument,
        "label and truth lengths differ"
    );
    ensure!(!labels.is_empty(), Empty, "no items");
    let mut counts: BTreeMap<usize, BTreeMap<usize, usize>> = BTreeMap::new();
    for (&l, &t) in labels.iter().zip(truth) {
        *counts.entry(l).or_default().entry(t).or_default() += 1;
    }
    let hits: usize = counts
        .values()
        .map(|c| c.values().copied().max().unwrap_or(0))
        .sum();
    Ok(hits as f64 / labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_count_examples() {
        assert_eq!(sample_count(100, 1, 1, 0.02).unwrap(), 392);
        assert_eq!(sample_count(1000, 10, 10, 0.1).unwrap(), 2303);
        assert_eq!(sample_count(100, 1, 1, 1.0 - 1e-15).unwrap(), 0);
        assert!(sample_count(100, 1, 0, 0.5).is_err());
        assert!(sample_count(100, 1, 101, 0.5).is_err());
        assert!(sample_count(100, 1, 1, 1.0).is_err());
        assert!(sample_count(100, 1, 1, 0.0).is_err());
    }

    #[test]
    fn default_iteration_count() {
        assert_eq!(default_iterations(28), 15);
        assert_eq!(default_iterations(12), 11);
        assert_eq!(default_iterations(10), 10);
    }

    #[test]
    fn allocation_is_exact_and_proportional() {
        assert_eq!(allocate(10, &[1.0, 1.0, 2.0]), vec![3, 2, 5]);
        assert_eq!(allocate(7, &[0.0, 0.0]), vec![4, 3]);
        assert_eq!(allocate(5, &[0.0, 3.0]), vec![0, 5]);
        let a = allocate(784, &[0.3, 1.7, 0.0, 5.5, 2.2]);
        assert_eq!(a.iter().sum::<usize>(), 784);
        assert_eq!(a[2], 0);
    }

    #[test]
    fn purity_counts_majorities() {
        assert_eq!(purity(&[0, 0, 1, 1], &[5, 5, 6, 6]).unwrap(), 1.0);
        assert_eq!(purity(&[0, 0, 0, 1], &[5, 6, 6, 6]).unwrap(), 0.75);
        assert!(purity(&[0], &[]).is_err());
    }

    fn blocks() -> DMatrix<f64> {
        // two tight groups {0, 2, 4} and {1, 3, 5} with weak cross links
        DMatrix::from_fn(6, 6, |i, j| {
            if i == j {
                0.0
            } else if i % 2 == j % 2 {
                10.0
            } else {
                0.1
            }
        })
    }

    #[test]
    fn bipartition_separates_blocks() {
        let labels = ncut_partition(&blocks(), 2).unwrap();
        assert_eq!(labels, vec![0, 1, 0, 1, 0, 1]);
        assert_eq!(ncut_partition(&blocks(), 1).unwrap(), vec![0; 6]);
    }

    #[test]
    fn three_way_partition() {
        let group = |i: usize| i / 3;
        let w = DMatrix::from_fn(9, 9, |i, j| match (i == j, group(i) == group(j)) {
            (true, _) => 0.0,
            (false, true) => 5.0,
            (false, false) => 0.05 * (1 + (i + j) % 3) as f64,
        });
        assert_eq!(
            ncut_partition(&w, 3).unwrap(),
            vec![0, 0, 0, 1, 1, 1, 2, 2, 2]
        );
    }

    #[test]
    fn ncut_of_clean_split_is_small() {
        let side = [true, false, true, false, true, false];
        let bad = [true, true, true, false, false, false];
        assert!(ncut_value(&blocks(), &side) < ncut_value(&blocks(), &bad));
    }

    fn small_field(seed: u64) -> DescriptorField {
        use crate::synth::{mixed_scene, render, Background};
        let v = render(
            &mixed_scene(20, 20, Background::Textured(seed)),
            20,
            20,
            40,
            seed,
        )
        .unwrap();
        describe_video(&v, &NeedleParams::default()).unwrap()
    }

    #[test]
    fn self_growing_reaches_zero_distance() {
        let f = small_field(1);
        let state = region_grow(&f, &f, 8, 9).unwrap();
        let zero = (0..state.len())
            .filter(|&i| state.distance(i) == 0.0)
            .count();
        assert!(
            zero as f64 > 0.95 * state.len() as f64,
            "{zero} of {}",
            state.len()
        );
    }

    #[test]
    fn propagation_never_worsens_a_match() {
        let (a, b) = (small_field(1), small_field(2));
        let state = region_grow(&a, &b, 2, 4).unwrap();
        for i in 0..state.len() {
            assert!(state.distance(i) <= state.sampled_distance(i));
            let m = state.match_of(i);
            let exact = crate::nn::sq_dist(a.entries(i), b.entries_at(m).unwrap()).sqrt();
            assert_eq!(exact, state.distance(i));
        }
    }

    #[test]
    fn growing_is_deterministic_and_validates() {
        let (a, b) = (small_field(1), small_field(2));
        let s1 = region_grow(&a, &b, 2, 4).unwrap();
        let s2 = region_grow(&a, &b, 2, 4).unwrap();
        assert_eq!(s1.matches, s2.matches);
        assert!(region_grow(&a, &b, 0, 4).is_err());
    }
}
