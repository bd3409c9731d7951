//! Action detection by centre-frame voting.
//!
//! Every informative query descriptor looks up its `k` nearest neighbours
//! anywhere in the reference; a neighbour at reference frame `t_r` votes for
//! the frame where the query's centre would sit if that match were right.
//! Peaks of the smoothed vote curve that clear twice the mean are reported.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{ensure, Result};
use crate::needle::{describe_video, DescriptorField, Location, NeedleParams};
use crate::nn;
use crate::significance::{build_codebook, select_informative};
use crate::video::Video;

pub const DEFAULT_KNN: usize = 15;
pub const DEFAULT_WINDOW: usize = 5;
pub const SMOOTHING_RADIUS: usize = 2;
/// A peak must exceed this multiple of the mean smoothed score.
pub const PEAK_FACTOR: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreCurve {
    /// Unit votes per reference frame.
    pub raw: Vec<f64>,
    /// `raw` convolved with a triangular kernel of radius [`SMOOTHING_RADIUS`].
    pub smoothed: Vec<f64>,
}

impl ScoreCurve {
    pub fn from_raw(raw: Vec<f64>) -> Self {
        let smoothed = triangular_smooth(&raw, SMOOTHING_RADIUS);
        ScoreCurve { raw, smoothed }
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn total_votes(&self) -> f64 {
        self.raw.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Detection {
    pub frame: usize,
    pub score: f64,
}

/// Convolution with weights `1, 2, .., r+1, .., 2, 1` normalised to sum to
/// one; samples past either end count as zero.
pub fn triangular_smooth(values: &[f64], radius: usize) -> Vec<f64> {
    let r = radius as i64;
    let norm = ((radius + 1) * (radius + 1)) as f64;
    let n = values.len() as i64;
    (0..n)
        .map(|i| {
            (-r..=r)
                .filter(|&o| (0..n).contains(&(i + o)))
                .map(|o| (r + 1 - o.abs()) as f64 * values[(i + o) as usize])
                .sum::<f64>()
                / norm
        })
        .collect()
}

/// Votes for the reference centre frame. `q_center` is the query frame
/// taken as the action centre.
pub fn vote_centers(
    q_field: &DescriptorField,
    q_center: usize,
    r_field: &DescriptorField,
    q_inf: &[Location],
    k: usize,
) -> Result<ScoreCurve> {
    ensure!(!q_inf.is_empty(), Empty, "no informative query descriptors");
    ensure!(k >= 1, InvalidArgument, "k must be at least 1");
    ensure!(
        q_field.dim() == r_field.dim(),
        InvalidArgument,
        "descriptor dimensions differ"
    );
    let frames = r_field.video_dims().2;
    let raw = q_inf
        .par_iter()
        .fold(
            || vec![0.0; frames],
            |mut hist, &loc| {
                if let Some(d) = q_field.entries_at(loc) {
                    let delta = loc.t as i64 - q_center as i64;
                    for (_, idx) in nn::k_nearest(r_field, d, k) {
                        let c = r_field.location(idx).t as i64 - delta;
                        if (0..frames as i64).contains(&c) {
                            hist[c as usize] += 1.0;
                        }
                    }
                }
                hist
            },
        )
        .reduce(
            || vec![0.0; frames],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    Ok(ScoreCurve::from_raw(raw))
}

/// Frames of the smoothed curve that dominate their `±window` neighbourhood
/// and exceed [`PEAK_FACTOR`] times its mean, highest first. Within a flat
/// top only the leftmost frame is kept.
pub fn find_detections(curve: &ScoreCurve, window: usize) -> Vec<Detection> {
    let s = &curve.smoothed;
    if s.is_empty() {
        return Vec::new();
    }
    let mean = s.iter().sum::<f64>() / s.len() as f64;
    let threshold = PEAK_FACTOR * mean;
    let mut out: Vec<Detection> = (0..s.len())
        .filter(|&i| {
            let v = s[i];
            if v <= threshold || v <= 0.0 {
                return false;
            }
            let lo = i.saturating_sub(window);
            let hi = (i + window).min(s.len() - 1);
            (lo..i).all(|j| s[j] < v) && (i + 1..=hi).all(|j| s[j] <= v)
        })
        .map(|frame| Detection {
            frame,
            score: s[frame],
        })
        .collect();
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.frame.cmp(&b.frame)));
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectConfig {
    pub needle: NeedleParams,
    pub codebook_k: usize,
    pub sample_fraction: f64,
    pub quota: usize,
    pub knn: usize,
    pub window: usize,
    pub seed: u64,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig {
            needle: NeedleParams::default(),
            codebook_k: crate::significance::DEFAULT_CODEBOOK_K,
            sample_fraction: crate::significance::DEFAULT_SAMPLE_FRACTION,
            quota: crate::significance::DEFAULT_QUOTA,
            knn: DEFAULT_KNN,
            window: DEFAULT_WINDOW,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionResult {
    pub query_center: usize,
    pub curve: ScoreCurve,
    pub detections: Vec<Detection>,
}

/// Full pipeline with the middle query frame as the action centre.
pub fn detect_action(
    query: &Video,
    reference: &Video,
    cfg: &DetectConfig,
) -> Result<DetectionResult> {
    let q_field = describe_video(query, &cfg.needle)?;
    let r_field = describe_video(reference, &cfg.needle)?;
    let cb = build_codebook(
        &[&q_field, &r_field],
        cfg.sample_fraction,
        cfg.codebook_k,
        cfg.seed,
    )?;
    let q_inf = select_informative(&q_field, &cb, cfg.quota)?;
    let query_center = query.frame_count() / 2;
    let curve = vote_centers(&q_field, query_center, &r_field, &q_inf, cfg.knn)?;
    let detections = find_detections(&curve, cfg.window);
    Ok(DetectionResult {
        query_center,
        curve,
        detections,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smoothing_kernel_weights() {
        let mut spike = vec![0.0; 9];
        spike[4] = 9.0;
        let s = triangular_smooth(&spike, 2);
        assert_eq!(s, vec![0.0, 0.0, 1.0, 2.0, 3.0, 2.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn flat_curve_has_no_detections() {
        assert!(find_detections(&ScoreCurve::from_raw(vec![3.0; 50]), 5).is_empty());
        assert!(find_detections(&ScoreCurve::from_raw(vec![0.0; 50]), 5).is_empty());
        assert!(find_detections(&ScoreCurve::from_raw(Vec::new()), 5).is_empty());
    }

    #[test]
    fn single_spike_is_one_detection() {
        let mut raw = vec![1.0; 60];
        raw[30] = 10.0;
        let d = find_detections(&ScoreCurve::from_raw(raw), 5);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].frame, 30);
    }

    #[test]
    fn plateau_reports_leftmost_frame() {
        let mut raw = vec![0.0; 40];
        raw[20] = 5.0;
        raw[21] = 5.0;
        let d = find_detections(&ScoreCurve::from_raw(raw), 5);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].frame, 20);
    }

    #[test]
    fn detections_sorted_by_score() {
        let mut raw = vec![0.0; 80];
        raw[15] = 4.0;
        raw[60] = 9.0;
        let d = find_detections(&ScoreCurve::from_raw(raw), 5);
        assert_eq!(d.iter().map(|d| d.frame).collect::<Vec<_>>(), vec![60, 15]);
    }

    #[test]
    fn self_detection_peaks_at_centre() {
        use crate::synth::{mixed_scene, render, Background};
        let v = render(&mixed_scene(24, 24, Background::Flat), 24, 24, 48, 0).unwrap();
        let cfg = DetectConfig {
            codebook_k: 40,
            quota: 300,
            ..Default::default()
        };
        let res = detect_action(&v, &v, &cfg).unwrap();
        let argmax = (0..res.curve.len())
            .max_by(|&a, &b| {
                res.curve.raw[a]
                    .total_cmp(&res.curve.raw[b])
                    .then(b.cmp(&a))
            })
            .unwrap();
        assert_eq!(argmax, 24);
    }
}
