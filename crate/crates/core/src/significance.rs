//! Descriptor rarity under a K-means codebook, and match reliability as the
//! log-likelihood gain of explaining a descriptor by its reference match
//! rather than by the codebook.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{ensure, Error, Result};
use crate::needle::{read_codebook_envelope, write_codebook_envelope, DescriptorField, Location};
use crate::nn;

pub const DEFAULT_CODEBOOK_K: usize = 300;
pub const DEFAULT_SAMPLE_FRACTION: f64 = 0.05;
pub const DEFAULT_QUOTA: usize = 2000;
const MAX_KMEANS_ITERATIONS: usize = 100;
/// Minimum sample size, as a multiple of K.
const SAMPLE_FLOOR_PER_WORD: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    words: Vec<f64>,
    dim: usize,
    sample_fraction: f64,
    sigma: f64,
}

impl Codebook {
    pub fn new(words: Vec<f64>, dim: usize, sample_fraction: f64, sigma: f64) -> Result<Self> {
        ensure!(
            dim >= 1,
            InvalidArgument,
            "codebook dimension must be positive"
        );
        ensure!(
            words.len() % dim == 0,
            InvalidArgument,
            "word buffer is not a multiple of {dim}"
        );
        ensure!(
            words.len() / dim >= 2,
            InvalidArgument,
            "codebook needs at least 2 words"
        );
        ensure!(
            words.iter().all(|v| v.is_finite()),
            InvalidArgument,
            "non-finite codebook word"
        );
        ensure!(
            sigma > 0.0 && sigma.is_finite(),
            InvalidArgument,
            "sigma must be positive"
        );
        Ok(Codebook {
            words,
            dim,
            sample_fraction,
            sigma,
        })
    }

    pub fn k(&self) -> usize {
        self.words.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn sample_fraction(&self) -> f64 {
        self.sample_fraction
    }

    pub fn word(&self, i: usize) -> &[f64] {
        &self.words[i * self.dim..(i + 1) * self.dim]
    }

    pub fn with_sigma(mut self, sigma: f64) -> Result<Self> {
        ensure!(
            sigma > 0.0 && sigma.is_finite(),
            InvalidArgument,
            "sigma must be positive"
        );
        self.sigma = sigma;
        Ok(self)
    }

    /// Index and squared distance of the closest word (first on ties).
    fn nearest_sq(&self, d: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (i, w) in self.words.chunks_exact(self.dim).enumerate() {
            let s = nn::sq_dist_bounded(d, w, best.1);
            if s < best.1 {
                best = (i, s);
            }
        }
        best
    }

    /// Distance from `d` to its closest word.
    pub fn delta_h(&self, d: &[f64]) -> Result<f64> {
        ensure!(
            d.len() == self.dim,
            InvalidArgument,
            "descriptor length {} != codebook dim {}",
            d.len(),
            self.dim
        );
        Ok(self.nearest_sq(d).1.sqrt())
    }

    /// Likelihood of `d` under the codebook model, `exp(-ΔH² / 2σ²)`.
    pub fn probability(&self, d: &[f64]) -> Result<f64> {
        let dh = self.delta_h(d)?;
        Ok((-dh * dh / (2.0 * self.sigma * self.sigma)).exp())
    }

    pub fn write<W: Write>(&self, w: W) -> std::io::Result<()> {
        write_codebook_envelope(w, self.dim, self.sample_fraction, self.sigma, &self.words)
    }

    pub fn read<R: Read>(r: R) -> Result<Self> {
        let (dim, fraction, sigma, words) = read_codebook_envelope(r)?;
        Codebook::new(words, dim, fraction, sigma).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Codebook::read(std::io::BufReader::new(file))
    }
}

/// Distinct rows of `points` with their multiplicities, in first-seen order.
fn dedupe(points: &[f64], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut unique = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    for p in points.chunks_exact(dim) {
        let key: Vec<u64> = p.iter().map(|v| v.to_bits()).collect();
        match seen.get(&key) {
            Some(&u) => weights[u] += 1.0,
            None => {
                seen.insert(key, weights.len());
                unique.extend_from_slice(p);
                weights.push(1.0);
            }
        }
    }
    (unique, weights)
}

/// Index drawn with probability proportional to `weights`.
fn weighted_pick(weights: &[f64], rng: &mut impl Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut target = rng.gen::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if target < w {
            return i;
        }
        target -= w;
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// Lloyd's K-means with k-means++ seeding on `points` (`dim` values each).
/// Empty clusters are re-seeded from the point farthest from its centre.
/// Returns the centres, flattened.
///
/// Repeated points are clustered once with a multiplicity, which gives the
/// same result as clustering every copy.
pub fn kmeans(
    points: &[f64],
    dim: usize,
    k: usize,
    max_iterations: usize,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    ensure!(
        dim >= 1 && points.len() % dim == 0,
        InvalidArgument,
        "point buffer does not match dim {dim}"
    );
    let total = points.len() / dim;
    ensure!(k >= 1, InvalidArgument, "K must be positive");
    ensure!(
        total >= k,
        InvalidArgument,
        "{total} points cannot seed {k} clusters"
    );
    let (points, weights) = dedupe(points, dim);
    let n = weights.len();
    let pt = |i: usize| &points[i * dim..(i + 1) * dim];

    // k-means++ seeding
    let mut centers = Vec::with_capacity(k * dim);
    centers.extend_from_slice(pt(weighted_pick(&weights, rng)));
    let mut d2: Vec<f64> = (0..n)
        .map(|i| nn::sq_dist(pt(i), &centers[..dim]))
        .collect();
    while centers.len() < k * dim {
        let mass: Vec<f64> = d2.iter().zip(&weights).map(|(d, w)| d * w).collect();
        let pick = if mass.iter().sum::<f64>() > 0.0 {
            weighted_pick(&mass, rng)
        } else {
            weighted_pick(&weights, rng)
        };
        let c = pt(pick).to_vec();
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(nn::sq_dist(pt(i), &c));
        }
        centers.extend(c);
    }

    let mut assign = vec![usize::MAX; n];
    for _ in 0..max_iterations {
        let next: Vec<(usize, f64)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut best = (0, f64::INFINITY);
                for (j, c) in centers.chunks_exact(dim).enumerate() {
                    let s = nn::sq_dist_bounded(pt(i), c, best.1);
                    if s < best.1 {
                        best = (j, s);
                    }
                }
                best
            })
            .collect();
        let changed = next.iter().zip(&assign).any(|(a, &b)| a.0 != b);
        for (a, nx) in assign.iter_mut().zip(&next) {
            *a = nx.0;
        }
        if !changed {
            break;
        }
        // means accumulated relative to each cluster's first member, so a
        // cluster of identical points reproduces that point exactly
        let mut anchor = vec![usize::MAX; k];
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0.0; k];
        for (i, &a) in assign.iter().enumerate() {
            if anchor[a] == usize::MAX {
                anchor[a] = i;
            }
            counts[a] += weights[i];
            for ((s, v), r) in sums[a * dim..(a + 1) * dim]
                .iter_mut()
                .zip(pt(i))
                .zip(pt(anchor[a]))
            {
                *s += weights[i] * (v - r);
            }
        }
        let mut taken = vec![false; n];
        for j in 0..k {
            let c = &mut centers[j * dim..(j + 1) * dim];
            if anchor[j] != usize::MAX {
                for ((cv, s), r) in c
                    .iter_mut()
                    .zip(&sums[j * dim..(j + 1) * dim])
                    .zip(pt(anchor[j]))
                {
                    *cv = r + s / counts[j];
                }
            } else {
                let far = (0..n)
                    .filter(|&i| !taken[i])
                    .max_by(|&a, &b| next[a].1.total_cmp(&next[b].1).then(b.cmp(&a)));
                if let Some(i) = far {
                    taken[i] = true;
                    c.copy_from_slice(pt(i));
                }
            }
        }
    }
    Ok(centers)
}

/// Samples descriptors uniformly from `fields`, clusters them and sets σ to
/// the median distance from the sample to its nearest word.
pub fn build_codebook(
    fields: &[&DescriptorField],
    fraction: f64,
    k: usize,
    seed: u64,
) -> Result<Codebook> {
    ensure!(k >= 2, InvalidArgument, "K must be at least 2");
    ensure!(
        fraction > 0.0 && fraction <= 1.0,
        InvalidArgument,
        "sample fraction must lie in (0, 1]"
    );
    ensure!(!fields.is_empty(), Empty, "no descriptor fields");
    let dim = fields[0].dim();
    ensure!(
        fields.iter().all(|f| f.dim() == dim),
        InvalidArgument,
        "fields have different descriptor lengths"
    );
    let total: usize = fields.iter().map(|f| f.len()).sum();
    ensure!(
        total >= k,
        InvalidArgument,
        "{total} descriptors cannot form {k} codebook words"
    );

    let wanted =
        ((fraction * total as f64).ceil() as usize).max(total.min(SAMPLE_FLOOR_PER_WORD * k));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = sample(&mut rng, total, wanted.min(total)).into_vec();
    picks.sort_unstable();

    let mut points = Vec::with_capacity(picks.len() * dim);
    let mut field_idx = 0;
    let mut offset = 0;
    for &p in &picks {
        while p >= offset + fields[field_idx].len() {
            offset += fields[field_idx].len();
            field_idx += 1;
        }
        points.extend_from_slice(fields[field_idx].entries(p - offset));
    }

    let words = kmeans(&points, dim, k, MAX_KMEANS_ITERATIONS, &mut rng)?;
    let provisional = Codebook {
        words,
        dim,
        sample_fraction: fraction,
        sigma: 1.0,
    };
    let (unique, weights) = dedupe(&points, dim);
    let mut dists: Vec<(f64, f64)> = unique
        .par_chunks_exact(dim)
        .map(|p| provisional.nearest_sq(p).1.sqrt())
        .zip(weights.par_iter().copied())
        .collect();
    dists.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = points.len() / dim;
    // value at 0-based rank `r` of the expanded sample
    let at_rank = |r: usize| {
        let mut seen = 0usize;
        for &(d, w) in &dists {
            seen += w as usize;
            if r < seen {
                return d;
            }
        }
        dists.last().map_or(0.0, |x| x.0)
    };
    let median = if n % 2 == 1 {
        at_rank(n / 2)
    } else {
        0.5 * (at_rank(n / 2 - 1) + at_rank(n / 2))
    };
    let mean = dists.iter().map(|(d, w)| d * w).sum::<f64>() / n as f64;
    let sigma = [median, mean, 1.0]
        .into_iter()
        .find(|&s| s > 0.0)
        .unwrap_or(1.0);
    Ok(Codebook {
        sigma,
        ..provisional
    })
}

/// Nearest reference descriptor to `d`, searched over `frames` (the whole
/// field if `None`). Returns the Euclidean distance and its location.
pub fn delta_r(
    d: &[f64],
    reference: &DescriptorField,
    frames: Option<Range<usize>>,
) -> Result<(f64, Location)> {
    ensure!(
        d.len() == reference.dim(),
        InvalidArgument,
        "descriptor length {} != field dim {}",
        d.len(),
        reference.dim()
    );
    let region = reference.region();
    let frames = frames.unwrap_or(region.t0..region.t1);
    let (sq, idx) = nn::nearest_in_frames(reference, frames.clone(), d).ok_or_else(|| {
        Error::Empty(format!("reference has no descriptors in frames {frames:?}"))
    })?;
    Ok((sq.sqrt(), reference.location(idx)))
}

/// `ΔH² − ΔR²`: positive when the reference explains the descriptor better
/// than chance does.
pub fn saving_in_bits(delta_h: f64, delta_r: f64) -> f64 {
    delta_h * delta_h - delta_r * delta_r
}

/// ΔH of every non-static descriptor, as `(index, ΔH)` in index order.
pub fn rarity(field: &DescriptorField, cb: &Codebook) -> Result<Vec<(usize, f64)>> {
    ensure!(
        field.dim() == cb.dim(),
        InvalidArgument,
        "field dim {} != codebook dim {}",
        field.dim(),
        cb.dim()
    );
    Ok((0..field.len())
        .into_par_iter()
        .filter(|&i| !field.is_zero(i))
        .map(|i| (i, cb.nearest_sq(field.entries(i)).1.sqrt()))
        .collect())
}

/// Up to `quota` non-static locations with the largest ΔH, ties in
/// `(t, y, x)` order. The result is sorted by rarity, rarest first.
pub fn select_informative(
    field: &DescriptorField,
    cb: &Codebook,
    quota: usize,
) -> Result<Vec<Location>> {
    ensure!(quota >= 1, InvalidArgument, "quota must be at least 1");
    let mut scored = rarity(field, cb)?;
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(quota);
    Ok(scored.into_iter().map(|(i, _)| field.location(i)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScoredMatch {
    pub query_location: Location,
    pub match_location: Location,
    pub delta_h: f64,
    pub delta_r: f64,
    pub saving_in_bits: f64,
}

impl ScoredMatch {
    pub fn new(
        query_location: Location,
        match_location: Location,
        delta_h: f64,
        delta_r: f64,
    ) -> Self {
        ScoredMatch {
            query_location,
            match_location,
            delta_h,
            delta_r,
            saving_in_bits: saving_in_bits(delta_h, delta_r),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::needle::NeedleParams;

    fn params() -> NeedleParams {
        NeedleParams {
            patch_radius: 1,
            gamma: 1,
            scales: 1,
            noise_percentile: 0.3,
        }
    }

    /// 3x1 region with `frames` valid frames.
    fn field(entries: &[[f64; 2]]) -> DescriptorField {
        let frames = entries.len() / 3;
        let data = entries.iter().flatten().copied().collect();
        DescriptorField::from_entries((5, 3, frames + 2), params(), 1.0, data).unwrap()
    }

    #[test]
    fn identical_descriptors_give_identical_words() {
        let f = field(&[[0.3, 0.7]; 6]);
        let cb = build_codebook(&[&f], 1.0, 2, 1).unwrap();
        assert_eq!(cb.k(), 2);
        assert_eq!(cb.word(0), &[0.3, 0.7]);
        assert_eq!(cb.word(1), &[0.3, 0.7]);
        assert_eq!(cb.sigma(), 1.0);
    }

    #[test]
    fn kmeans_finds_separated_blob_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut pts = Vec::new();
        let (mut sa, mut sb) = ([0.0; 2], [0.0; 2]);
        for i in 0..200 {
            let jitter = [rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05)];
            let (base, acc) = if i % 2 == 0 {
                ([0.1, 0.9], &mut sa)
            } else {
                ([0.8, 0.2], &mut sb)
            };
            for j in 0..2 {
                let v = base[j] + jitter[j];
                acc[j] += v / 100.0;
                pts.push(v);
            }
        }
        let c = kmeans(&pts, 2, 2, 100, &mut rng).unwrap();
        let (a, b) = if c[0] < 0.5 {
            (&c[..2], &c[2..])
        } else {
            (&c[2..], &c[..2])
        };
        for j in 0..2 {
            assert!((a[j] - sa[j]).abs() < 1e-3);
            assert!((b[j] - sb[j]).abs() < 1e-3);
        }
    }

    #[test]
    fn too_few_descriptors_is_an_error() {
        let f = field(&[[0.3, 0.7]; 3]);
        assert!(build_codebook(&[&f], 1.0, 4, 0).is_err());
    }

    #[test]
    fn delta_h_and_probability() {
        let cb = Codebook::new(vec![0.0, 0.0, 1.0, 0.0], 2, 1.0, 0.5).unwrap();
        assert_eq!(cb.delta_h(&[1.0, 0.0]).unwrap(), 0.0);
        assert_eq!(cb.probability(&[1.0, 0.0]).unwrap(), 1.0);
        let off = 0.5 * 2f64.sqrt();
        let p = cb.probability(&[0.0, off]).unwrap();
        assert!((p - (-1f64).exp()).abs() < 1e-12);
        assert!(cb.delta_h(&[1.0]).is_err());
    }

    #[test]
    fn delta_r_enumerates_toy_reference() {
        // distances from q: 0.5, 0.2, 0.9
        let q = [0.0, 0.0];
        let f = field(&[[0.5, 0.0], [0.0, 0.2], [0.9, 0.0]]);
        let (d, loc) = delta_r(&q, &f, None).unwrap();
        assert!((d - 0.2).abs() < 1e-15);
        assert_eq!(loc, Location::new(2, 1, 1));
        let (d0, l0) = delta_r(&[0.9, 0.0], &f, None).unwrap();
        assert_eq!((d0, l0), (0.0, Location::new(3, 1, 1)));
        assert!(delta_r(&q, &f, Some(5..9)).is_err());
    }

    #[test]
    fn restricted_search_is_never_better() {
        let f = field(&[
            [0.5, 0.0],
            [0.0, 0.2],
            [0.9, 0.0],
            [0.1, 0.1],
            [0.3, 0.3],
            [0.0, 0.0],
        ]);
        let q = [0.12, 0.1];
        let (full, loc) = delta_r(&q, &f, None).unwrap();
        let (part, _) = delta_r(&q, &f, Some(loc.t..loc.t + 1)).unwrap();
        assert!(full <= part);
    }

    #[test]
    fn saving_examples() {
        assert_eq!(saving_in_bits(1.3, 1.3), 0.0);
        assert_eq!(saving_in_bits(2.0, 0.0), 4.0);
        assert_eq!(saving_in_bits(0.0, 1.0), -1.0);
    }

    #[test]
    fn informative_selection_skips_static_and_orders_by_rarity() {
        let f = field(&[
            [0.0, 0.0],
            [0.1, 0.0],
            [0.9, 0.1],
            [0.0, 0.0],
            [0.5, 0.5],
            [0.9, 0.1],
        ]);
        let cb = Codebook::new(vec![0.0, 0.0, 0.5, 0.5], 2, 1.0, 1.0).unwrap();
        let sel = select_informative(&f, &cb, 10).unwrap();
        assert_eq!(
            sel,
            vec![
                Location::new(3, 1, 1),
                Location::new(3, 1, 2),
                Location::new(2, 1, 1),
                Location::new(2, 1, 2)
            ]
        );
        assert_eq!(
            select_informative(&f, &cb, 1).unwrap(),
            vec![Location::new(3, 1, 1)]
        );
        let zeros = field(&[[0.0, 0.0]; 6]);
        assert!(select_informative(&zeros, &cb, 5).unwrap().is_empty());
    }

    #[test]
    fn codebook_round_trips_through_envelope() {
        let cb = Codebook::new(vec![0.25, 0.5, 0.75, 1.0], 2, 0.05, 0.125).unwrap();
        let mut buf = Vec::new();
        cb.write(&mut buf).unwrap();
        assert_eq!(Codebook::read(buf.as_slice()).unwrap(), cb);
        assert!(Codebook::read(&buf[..10]).is_err());
    }
}
