//! Temporal Gaussian pyramid: binomial low-pass along time, then keep the
//! even frames.

use crate::error::{ensure, Result};
use crate::video::Video;

/// Binomial approximation of a temporal Gaussian, in sixteenths.
const KERNEL: [f64; 5] = [1.0, 4.0, 6.0, 4.0, 1.0];

/// Blur every pixel's time series with `[1,4,6,4,1]/16` and keep frames
/// `0, 2, 4, …`. Near the temporal ends the kernel is renormalized over the
/// taps that fall inside the video. The output has `floor(F / 2)` frames.
pub fn temporal_downsample(v: &Video) -> Result<Video> {
    let frames = v.frame_count();
    ensure!(
        frames >= 2,
        TooShort,
        "temporal downsampling needs at least 2 frames, got {frames}"
    );
    let out_frames = frames / 2;
    let n = v.pixels_per_frame();
    let mut data = vec![0.0; out_frames * n];
    for (k, out) in data.chunks_exact_mut(n).enumerate() {
        let center = 2 * k as isize;
        let mut norm = 0.0;
        for (tap, &w) in KERNEL.iter().enumerate() {
            let t = center + tap as isize - 2;
            if t < 0 || t >= frames as isize {
                continue;
            }
            norm += w;
            for (o, &s) in out.iter_mut().zip(v.frame(t as usize)) {
                *o += w * s;
            }
        }
        for o in out.iter_mut() {
            *o /= norm;
        }
    }
    Ok(Video::from_parts_unchecked(
        v.width(),
        v.height(),
        out_frames,
        v.fps() / 2.0,
        data,
    ))
}

/// Videos at temporal scales `1, 1/2, …, 1/2^(L-1)`.
#[derive(Debug, Clone)]
pub struct TemporalPyramid {
    levels: Vec<Video>,
}

impl TemporalPyramid {
    pub fn levels(&self) -> &[Video] {
        &self.levels
    }

    pub fn level(&self, l: usize) -> &Video {
        &self.levels[l]
    }

    pub fn scale_count(&self) -> usize {
        self.levels.len()
    }

    pub fn base(&self) -> &Video {
        &self.levels[0]
    }
}

pub fn build_pyramid(v: &Video, scales: usize) -> Result<TemporalPyramid> {
    ensure!(
        scales >= 1,
        InvalidArgument,
        "scale count must be at least 1"
    );
    let mut levels = Vec::with_capacity(scales);
    levels.push(v.clone());
    for l in 1..scales {
        let prev = &levels[l - 1];
        ensure!(
            prev.frame_count() >= 2,
            TooShort,
            "{} frames cannot support {scales} temporal scales",
            v.frame_count()
        );
        let next = temporal_downsample(prev)?;
        levels.push(next);
    }
    Ok(TemporalPyramid { levels })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(values: &[f64]) -> Video {
        Video::new(1, 1, values.len(), 25.0, values.to_vec()).unwrap()
    }

    #[test]
    fn constant_video_stays_constant_at_half_length() {
        let v = Video::filled(3, 2, 9, 30.0, 0.37).unwrap();
        let d = temporal_downsample(&v).unwrap();
        assert_eq!(d.frame_count(), 4);
        for &s in d.samples() {
            assert!((s - 0.37).abs() < 1e-15);
        }
    }

    #[test]
    fn impulse_response_matches_hand_convolution() {
        let mut vals = vec![0.0; 10];
        vals[4] = 1.0;
        let d = temporal_downsample(&series(&vals)).unwrap();
        assert_eq!(d.samples(), &[0.0, 1.0 / 16.0, 6.0 / 16.0, 1.0 / 16.0, 0.0]);
    }

    #[test]
    fn border_kernel_is_renormalized() {
        let d = temporal_downsample(&series(&[1.0, 0.0, 0.0, 0.0])).unwrap();
        assert_eq!(d.samples()[0], 6.0 / 11.0);
        // frame 2 sees taps 0..=3 with weights 1,4,6,4
        assert_eq!(d.samples()[1], 1.0 / 15.0);
    }

    #[test]
    fn too_short_is_rejected() {
        assert!(temporal_downsample(&series(&[0.5])).is_err());
        assert!(build_pyramid(&series(&[0.5, 0.5, 0.5]), 3).is_err());
        assert!(build_pyramid(&series(&[0.5]), 0).is_err());
    }

    #[test]
    fn level_lengths_halve_with_floor() {
        let v = Video::filled(2, 2, 100, 25.0, 0.1).unwrap();
        let p = build_pyramid(&v, 3).unwrap();
        let lens: Vec<_> = p.levels().iter().map(Video::frame_count).collect();
        assert_eq!(lens, vec![100, 50, 25]);
        assert_eq!(p.base(), &v);
        let p1 = build_pyramid(&v, 1).unwrap();
        assert_eq!(p1.scale_count(), 1);
        assert_eq!(p1.level(0), &v);
    }

    #[test]
    fn odd_length_drops_trailing_frame() {
        let v = Video::filled(1, 1, 5, 25.0, 0.0).unwrap();
        assert_eq!(temporal_downsample(&v).unwrap().frame_count(), 2);
    }
}
