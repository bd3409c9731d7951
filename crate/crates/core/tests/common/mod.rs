#![allow(dead_code)]

//! Brute-force reference implementations used as test oracles. Nothing here
//! shares code with the library beyond the `Video` container.

use tneedle::{NeedleParams, Video};

/// One temporal halving step: binomial `[1,4,6,4,1]` taps centred on every
/// even frame, renormalised over the taps that exist.
pub fn naive_halve(v: &Video) -> Video {
    let taps = [1.0, 4.0, 6.0, 4.0, 1.0];
    let f = v.frame_count() as i64;
    Video::from_fn(
        v.width(),
        v.height(),
        v.frame_count() / 2,
        v.fps() / 2.0,
        |x, y, k| {
            let mut acc = 0.0;
            let mut norm = 0.0;
            for (i, w) in taps.iter().enumerate() {
                let t = 2 * k as i64 + i as i64 - 2;
                if (0..f).contains(&t) {
                    acc += w * v.get(x, y, t as usize);
                    norm += w;
                }
            }
            acc / norm
        },
    )
    .unwrap()
}

pub fn naive_levels(v: &Video, scales: usize) -> Vec<Video> {
    let mut out = vec![v.clone()];
    for _ in 1..scales {
        let next = naive_halve(out.last().unwrap());
        out.push(next);
    }
    out
}

fn ssd(v: &Video, x: usize, y: usize, a: usize, b: usize, pr: usize) -> f64 {
    let mut s = 0.0;
    for py in y - pr..=y + pr {
        for px in x - pr..=x + pr {
            let d = v.get(px, py, a) - v.get(px, py, b);
            s += d * d;
        }
    }
    s
}

/// Every raw descriptor whose support lies inside the video, keyed by
/// location, plus the noise floor and the normalised field.
pub struct NaiveField {
    pub locations: Vec<(usize, usize, usize)>,
    pub raw: Vec<Vec<f64>>,
    pub noise_floor: f64,
    pub normalized: Vec<Vec<f64>>,
}

pub fn naive_field(v: &Video, p: &NeedleParams) -> NaiveField {
    let levels = naive_levels(v, p.scales);
    let g = p.gamma;
    let pr = p.patch_radius;
    let mut locations = Vec::new();
    let mut raw = Vec::new();
    for t in 0..v.frame_count() {
        // every level must hold frames tau - g ..= tau + g
        let fits = levels.iter().enumerate().all(|(l, lv)| {
            let tau = t >> l;
            tau >= g && tau + g < lv.frame_count()
        });
        if !fits {
            continue;
        }
        for y in pr..v.height() - pr {
            for x in pr..v.width() - pr {
                let mut d = Vec::new();
                for (l, lv) in levels.iter().enumerate() {
                    let tau = t >> l;
                    for r in (1..=g).rev() {
                        d.push(ssd(lv, x, y, tau, tau - r, pr));
                    }
                    for r in 1..=g {
                        d.push(ssd(lv, x, y, tau, tau + r, pr));
                    }
                }
                locations.push((x, y, t));
                raw.push(d);
            }
        }
    }
    let mut all: Vec<f64> = raw.iter().flatten().copied().collect();
    all.sort_by(f64::total_cmp);
    let rank = p.noise_percentile * (all.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = (lo + 1).min(all.len() - 1);
    let pct = all[lo] + (rank - lo as f64) * (all[hi] - all[lo]);
    let noise_floor = (p.descriptor_len() as f64 * pct).max(1e-12);
    let normalized = raw
        .iter()
        .map(|d| {
            let s: f64 = d.iter().sum();
            if s == 0.0 {
                d.clone()
            } else {
                d.iter().map(|e| e / s.max(noise_floor)).collect()
            }
        })
        .collect();
    NaiveField {
        locations,
        raw,
        noise_floor,
        normalized,
    }
}

/// Largest absolute difference between the library field and the oracle,
/// or `None` when their supports differ.
pub fn oracle_gap(v: &Video, p: &NeedleParams) -> Option<f64> {
    let field = tneedle::describe_video(v, p).ok()?;
    let naive = naive_field(v, p);
    if naive.locations.len() != field.len() {
        return None;
    }
    let mut gap = (field.noise_floor() - naive.noise_floor).abs();
    for (&(x, y, t), want) in naive.locations.iter().zip(&naive.normalized) {
        let got = field.entries_at(tneedle::Location::new(x, y, t))?;
        for (a, b) in got.iter().zip(want) {
            gap = gap.max((a - b).abs());
        }
    }
    Some(gap)
}

/// Deterministic pseudo-random video with values in `[0, 1]`.
pub fn noise_video(w: usize, h: usize, f: usize, seed: u64) -> Video {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let data = (0..w * h * f).map(|_| rng.gen::<f64>()).collect();
    Video::new(w, h, f, 25.0, data).unwrap()
}

/// A random video whose motion is sparse enough that many descriptors fall
/// below the noise floor: a few bright blobs over a textured static
/// background.
pub fn sparse_motion_video(w: usize, h: usize, f: usize, seed: u64) -> Video {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let bg: Vec<f64> = (0..w * h).map(|_| 0.2 + 0.3 * rng.gen::<f64>()).collect();
    let blobs: Vec<(f64, f64, f64, f64)> = (0..2)
        .map(|_| {
            (
                rng.gen_range(0.0..w as f64),
                rng.gen_range(0.0..h as f64),
                rng.gen_range(0.1..0.6),
                rng.gen_range(0.0..6.28),
            )
        })
        .collect();
    Video::from_fn(w, h, f, 25.0, |x, y, t| {
        let mut v = bg[y * w + x];
        for &(cx, cy, speed, phase) in &blobs {
            let px = cx + 2.0 * (speed * t as f64 + phase).sin();
            let d2 = (x as f64 - px).powi(2) + (y as f64 - cy).powi(2);
            v += 0.5 * (-d2 / 2.0).exp();
        }
        v.min(1.0)
    })
    .unwrap()
}
