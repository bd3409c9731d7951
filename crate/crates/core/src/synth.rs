//! Synthetic ground-truth videos: periodic foreground motion over a static
//! background, plus the spatial, photometric and temporal transforms used
//! to build aligned pairs with known answers.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::geometry::AffineTransform;
use crate::video::Video;

pub const DEFAULT_FPS: f64 = 25.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pattern {
    /// Gaussian dot moving sinusoidally along x.
    OscillatingDot,
    /// Vertical bar sweeping left to right, then jumping back.
    TranslatingBar,
    /// Small square sweeping right for two thirds of the cycle, then up at
    /// twice the speed.
    TwoPhaseGesture,
}

impl std::str::FromStr for Pattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oscillating-dot" => Ok(Pattern::OscillatingDot),
            "translating-bar" => Ok(Pattern::TranslatingBar),
            "two-phase-gesture" => Ok(Pattern::TwoPhaseGesture),
            other => Err(Error::InvalidArgument(format!("unknown pattern {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Background {
    Flat,
    Gradient,
    /// Per-pixel uniform texture drawn from the given seed.
    Textured(u64),
}

/// A single periodic motion over a background.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionScript {
    pub pattern: Pattern,
    /// Frames per cycle at `speed_ratio == 1`.
    pub period: usize,
    /// Excursion in pixels.
    pub amplitude: f64,
    /// Speed-up factor β; the motion at frame `t` is the β=1 motion at `βt`.
    pub speed_ratio: f64,
    pub background: Background,
    pub foreground_intensity: f64,
    pub noise_sigma: f64,
}

impl Default for MotionScript {
    fn default() -> Self {
        MotionScript {
            pattern: Pattern::OscillatingDot,
            period: 8,
            amplitude: 4.0,
            speed_ratio: 1.0,
            background: Background::Flat,
            foreground_intensity: 0.9,
            noise_sigma: 0.0,
        }
    }
}

impl MotionScript {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.period >= 2,
            InvalidArgument,
            "period must be at least 2 frames"
        );
        ensure!(
            self.amplitude >= 1.0,
            InvalidArgument,
            "amplitude must be at least 1 pixel"
        );
        ensure!(
            self.speed_ratio >= 1.0,
            InvalidArgument,
            "speed ratio must be at least 1"
        );
        ensure!(
            (0.0..=1.0).contains(&self.foreground_intensity),
            InvalidArgument,
            "foreground intensity must lie in [0, 1]"
        );
        ensure!(
            self.noise_sigma >= 0.0,
            InvalidArgument,
            "noise sigma must be non-negative"
        );
        Ok(())
    }

    /// The script as a one-actor scene centred in a `width x height` frame.
    pub fn to_scene(&self, width: usize, height: usize) -> Scene {
        Scene {
            background: self.background,
            noise_sigma: self.noise_sigma,
            actors: vec![Actor {
                pattern: self.pattern,
                period: self.period,
                amplitude: self.amplitude,
                speed_ratio: self.speed_ratio,
                intensity: self.foreground_intensity,
                center: ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0),
                size: Actor::DEFAULT_SIZE,
                time_offset: 0.0,
                active: None,
                sway: None,
                hold: false,
            }],
        }
    }
}

/// One moving object in a [`Scene`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Actor {
    pub pattern: Pattern,
    pub period: usize,
    pub amplitude: f64,
    pub speed_ratio: f64,
    pub intensity: f64,
    pub center: (f64, f64),
    /// Dot sigma, bar half-width or square half-side, in pixels.
    pub size: f64,
    /// Added to the frame index before the speed ratio is applied.
    pub time_offset: f64,
    /// Frames `[start, end)` in which the actor is drawn; time restarts at
    /// `start`. `None` draws it in every frame.
    pub active: Option<(usize, usize)>,
    /// Extra vertical oscillation `(period, amplitude)` on the same clock.
    /// With a period coprime to `period` the path does not repeat for
    /// `period * sway period` frames.
    pub sway: Option<(usize, f64)>,
    /// With an `active` window, keep drawing the actor frozen at its first
    /// pose before the window and at its last pose after it.
    #[serde(default)]
    pub hold: bool,
}

impl Actor {
    pub const DEFAULT_SIZE: f64 = 1.2;

    pub fn new(pattern: Pattern, period: usize, amplitude: f64, center: (f64, f64)) -> Self {
        Actor {
            pattern,
            period,
            amplitude,
            speed_ratio: 1.0,
            intensity: 0.9,
            center,
            size: Self::DEFAULT_SIZE,
            time_offset: 0.0,
            active: None,
            sway: None,
            hold: false,
        }
    }

    fn validate(&self, width: usize, height: usize) -> Result<()> {
        ensure!(
            self.period >= 2,
            InvalidArgument,
            "period must be at least 2 frames"
        );
        ensure!(
            self.amplitude >= 1.0,
            InvalidArgument,
            "amplitude must be at least 1 pixel"
        );
        ensure!(
            self.speed_ratio >= 1.0,
            InvalidArgument,
            "speed ratio must be at least 1"
        );
        ensure!(
            self.size > 0.0,
            InvalidArgument,
            "actor size must be positive"
        );
        if let Some((p, amp)) = self.sway {
            ensure!(
                p >= 2 && amp.is_finite(),
                InvalidArgument,
                "sway needs a period of at least 2 frames"
            );
        }
        let (cx, cy) = self.center;
        let (rx, ry) = self.reach();
        ensure!(
            cx - rx >= 0.0
                && cx + rx <= (width - 1) as f64
                && cy - ry >= 0.0
                && cy + ry <= (height - 1) as f64,
            InvalidArgument,
            "motion of amplitude {} around ({cx}, {cy}) exceeds the {width}x{height} frame",
            self.amplitude
        );
        Ok(())
    }

    /// Half extents of the area the actor can touch.
    fn reach(&self) -> (f64, f64) {
        let a = self.amplitude;
        let sway = self.sway.map_or(0.0, |(_, amp)| amp.abs());
        let (rx, ry) = match self.pattern {
            Pattern::OscillatingDot => (a + 3.0 * self.size, 3.0 * self.size),
            Pattern::TranslatingBar => (a + self.size + 0.5, a + 0.5),
            Pattern::TwoPhaseGesture => (a / 2.0 + self.size + 0.5, a / 2.0 + self.size + 0.5),
        };
        (rx, ry + sway)
    }

    /// Cycle phase in `[0, 1)` and vertical sway offset at frame `t`, or
    /// `None` when inactive.
    fn pose(&self, t: usize) -> Option<(f64, f64)> {
        let local = match self.active {
            Some((start, end)) if (start..end).contains(&t) => (t - start) as f64,
            Some((start, _)) if self.hold && t < start => 0.0,
            Some((start, end)) if self.hold && end > start => (end - 1 - start) as f64,
            Some(_) => return None,
            None => t as f64,
        };
        let u = self.speed_ratio * (local + self.time_offset);
        let cycle = |p: usize| u.rem_euclid(p as f64) / p as f64;
        let dy = self
            .sway
            .map_or(0.0, |(p, amp)| amp * (TAU * cycle(p)).sin());
        Some((cycle(self.period), dy))
    }

    /// Foreground coverage in `[0, 1]` at pixel `(x, y)` for `phase`.
    fn coverage(&self, x: f64, y: f64, phase: f64) -> f64 {
        let (cx, cy) = self.center;
        let a = self.amplitude;
        let box_edge = |d: f64, half: f64| (half + 0.5 - d.abs()).clamp(0.0, 1.0);
        match self.pattern {
            Pattern::OscillatingDot => {
                let px = cx + a * (TAU * phase).sin();
                let d2 = (x - px).powi(2) + (y - cy).powi(2);
                let s = self.size;
                if d2 > 9.0 * s * s {
                    0.0
                } else {
                    (-d2 / (2.0 * s * s)).exp()
                }
            }
            Pattern::TranslatingBar => {
                let px = cx - a + 2.0 * a * phase;
                box_edge(x - px, self.size) * box_edge(y - cy, a)
            }
            Pattern::TwoPhaseGesture => {
                let split = 2.0 / 3.0;
                let (px, py) = if phase < split {
                    (cx - a / 2.0 + a * phase / split, cy + a / 2.0)
                } else {
                    (
                        cx + a / 2.0,
                        cy + a / 2.0 - a * (phase - split) / (1.0 - split),
                    )
                };
                box_edge(x - px, self.size) * box_edge(y - py, self.size)
            }
        }
    }
}

/// Background plus any number of actors and additive Gaussian noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub background: Background,
    pub noise_sigma: f64,
    pub actors: Vec<Actor>,
}

impl Scene {
    pub fn new(background: Background) -> Self {
        Scene {
            background,
            noise_sigma: 0.0,
            actors: Vec::new(),
        }
    }

    pub fn with_actor(mut self, actor: Actor) -> Self {
        self.actors.push(actor);
        self
    }

    pub fn with_noise(mut self, sigma: f64) -> Self {
        self.noise_sigma = sigma;
        self
    }
}

/// Three dots and a bar with pairwise coprime periods (11, 13, 17, 19), so
/// the joint motion does not repeat for tens of thousands of frames.
pub fn mixed_scene(width: usize, height: usize, background: Background) -> Scene {
    let (w, h) = (width as f64, height as f64);
    let a = (w.min(h) / 14.0).max(1.0);
    let at = |fx: f64, fy: f64| ((w - 1.0) * fx, (h - 1.0) * fy);
    let mut bar = Actor::new(Pattern::TranslatingBar, 19, a, at(0.7, 0.7));
    bar.intensity = 0.75;
    let mut dot3 = Actor::new(Pattern::OscillatingDot, 17, a, at(0.3, 0.72));
    dot3.intensity = 0.6;
    Scene::new(background)
        .with_actor(Actor::new(Pattern::OscillatingDot, 11, a, at(0.27, 0.27)))
        .with_actor(Actor::new(Pattern::OscillatingDot, 13, a, at(0.72, 0.3)))
        .with_actor(dot3)
        .with_actor(bar)
}

fn background_plane(bg: Background, width: usize, height: usize) -> Vec<f64> {
    match bg {
        Background::Flat => vec![0.25; width * height],
        Background::Gradient => (0..height)
            .flat_map(|_| (0..width).map(move |x| 0.1 + 0.4 * x as f64 / (width.max(2) - 1) as f64))
            .collect(),
        Background::Textured(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..width * height)
                .map(|_| 0.1 + 0.4 * rng.gen::<f64>())
                .collect()
        }
    }
}

pub fn render(
    scene: &Scene,
    width: usize,
    height: usize,
    frames: usize,
    seed: u64,
) -> Result<Video> {
    ensure!(
        width >= 1 && height >= 1 && frames >= 1,
        InvalidArgument,
        "dimensions must be positive"
    );
    ensure!(
        scene.noise_sigma >= 0.0,
        InvalidArgument,
        "noise sigma must be non-negative"
    );
    for actor in &scene.actors {
        actor.validate(width, height)?;
        ensure!(
            (0.0..=1.0).contains(&actor.intensity),
            InvalidArgument,
            "actor intensity outside [0, 1]"
        );
    }
    let bg = background_plane(scene.background, width, height);
    let n = width * height;
    let mut data = Vec::with_capacity(n * frames);
    for t in 0..frames {
        let mut frame = bg.clone();
        for actor in &scene.actors {
            let Some((phase, dy)) = actor.pose(t) else {
                continue;
            };
            for (i, v) in frame.iter_mut().enumerate() {
                let m = actor.coverage((i % width) as f64, (i / width) as f64 - dy, phase);
                if m > 0.0 {
                    *v = *v * (1.0 - m) + actor.intensity * m;
                }
            }
        }
        data.extend(frame);
    }
    if scene.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, scene.noise_sigma)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        for v in &mut data {
            *v += normal.sample(&mut rng);
        }
    }
    for v in &mut data {
        *v = v.clamp(0.0, 1.0);
    }
    Video::new(width, height, frames, DEFAULT_FPS, data)
}

/// Renders `script` with its actor centred in the frame. `seed` drives the
/// additive noise; a textured background carries its own seed.
pub fn generate(
    script: &MotionScript,
    width: usize,
    height: usize,
    frames: usize,
    seed: u64,
) -> Result<Video> {
    script.validate()?;
    render(&script.to_scene(width, height), width, height, frames, seed)
}

#[inline]
fn bilinear(v: &Video, t: usize, sx: f64, sy: f64) -> f64 {
    let (w, h) = (v.width(), v.height());
    if !(sx >= 0.0 && sy >= 0.0 && sx <= (w - 1) as f64 && sy <= (h - 1) as f64) {
        return 0.0;
    }
    let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
    let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let top = if fx == 0.0 {
        v.get(x0, y0, t)
    } else {
        (1.0 - fx) * v.get(x0, y0, t) + fx * v.get(x1, y0, t)
    };
    if fy == 0.0 {
        return top;
    }
    let bottom = if fx == 0.0 {
        v.get(x0, y1, t)
    } else {
        (1.0 - fx) * v.get(x0, y1, t) + fx * v.get(x1, y1, t)
    };
    (1.0 - fy) * top + fy * bottom
}

/// Warps every frame by `a` (input coordinates to output coordinates) with
/// bilinear sampling; samples from outside the input are 0.
pub fn warp_affine(v: &Video, a: &AffineTransform) -> Result<Video> {
    let inv = a.inverse()?;
    let (w, h, f) = (v.width(), v.height(), v.frame_count());
    let mut data = Vec::with_capacity(w * h * f);
    for t in 0..f {
        for y in 0..h {
            for x in 0..w {
                let (sx, sy) = inv.apply(x as f64, y as f64);
                data.push(bilinear(v, t, sx, sy).clamp(0.0, 1.0));
            }
        }
    }
    Video::new(w, h, f, v.fps(), data)
}

/// Sample-wise `1 - value`.
pub fn invert_appearance(v: &Video) -> Video {
    v.map(|s| 1.0 - s)
}

/// A time-shifted copy together with the shift that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftedVideo {
    pub video: Video,
    /// Frame `k` of `video` shows the source at time `k + shift`.
    pub shift: f64,
}

/// Linear interpolation of the source at real time `s`, clamped to the
/// first and last frames.
fn frame_at(v: &Video, s: f64, out: &mut Vec<f64>) {
    let last = v.frame_count() - 1;
    let base = s.floor();
    let alpha = s - base;
    let i0 = (base.max(0.0) as usize).min(last);
    let i1 = ((base + 1.0).max(0.0) as usize).min(last);
    if alpha == 0.0 || i0 == i1 {
        out.extend_from_slice(v.frame(i0));
    } else {
        out.extend(
            v.frame(i0)
                .iter()
                .zip(v.frame(i1))
                .map(|(a, b)| (1.0 - alpha) * a + alpha * b),
        );
    }
}

/// Frame `k` of the output is the source at time `k + dt`, with
/// `p(t+α) = (1-α)p(t) + αp(t+1)` for the fractional part. The output is
/// `ceil(|dt|)` frames shorter. For negative `dt` the first frames, which
/// would need source times before 0, repeat frame 0.
pub fn shift_time(v: &Video, dt: f64) -> Result<ShiftedVideo> {
    ensure!(dt.is_finite(), InvalidArgument, "shift must be finite");
    let frames = v.frame_count();
    ensure!(
        dt.abs() < frames as f64,
        InvalidArgument,
        "|shift| {dt} must be below {frames} frames"
    );
    let out_frames = frames - dt.abs().ceil() as usize;
    ensure!(out_frames >= 1, TooShort, "shift leaves no frames");
    let whole = dt.floor();
    let alpha = dt - whole;
    let mut data = Vec::with_capacity(out_frames * v.pixels_per_frame());
    for k in 0..out_frames {
        frame_at(v, k as f64 + whole + alpha, &mut data);
    }
    Ok(ShiftedVideo {
        video: Video::new(v.width(), v.height(), out_frames, v.fps(), data)?,
        shift: dt,
    })
}

/// Same-length resampling: frame `k` shows the source at `k + offset`,
/// clamped at both ends.
pub fn resample_time(v: &Video, offset: f64) -> Result<Video> {
    ensure!(offset.is_finite(), InvalidArgument, "offset must be finite");
    let whole = offset.floor();
    let alpha = offset - whole;
    let mut data = Vec::with_capacity(v.samples().len());
    for k in 0..v.frame_count() {
        frame_at(v, k as f64 + whole + alpha, &mut data);
    }
    Video::new(v.width(), v.height(), v.frame_count(), v.fps(), data)
}

/// A gesture template plus a cluttered reference that performs it twice and
/// a control reference that never does.
#[derive(Debug, Clone)]
pub struct DetectionScenario {
    pub query: Video,
    pub reference: Video,
    pub control: Video,
    /// Reference frames aligned with the query's middle frame.
    pub centers: Vec<usize>,
}

/// 32x32 videos: a 56-frame query holding one gesture, and 300-frame
/// references with a swaying dot as distractor. The gesture is held still
/// before and after each performance and every video carries mild noise.
pub fn detection_scenario(seed: u64) -> Result<DetectionScenario> {
    const SIZE: usize = 32;
    const LEN: usize = 56;
    const NOISE: f64 = 0.02;
    let gesture = |start: usize, center: (f64, f64)| {
        let mut a = Actor::new(Pattern::TwoPhaseGesture, LEN, 8.0, center);
        a.size = 1.5;
        a.active = Some((start, start + LEN));
        a.hold = true;
        a
    };
    let mut distractor = Actor::new(Pattern::OscillatingDot, 13, 4.0, (8.0, 24.0));
    distractor.sway = Some((17, 2.0));
    let starts = [60, 200];
    let query_scene = Scene::new(Background::Textured(seed ^ 0x51))
        .with_noise(NOISE)
        .with_actor(gesture(0, (16.0, 12.0)));
    let control_scene = Scene::new(Background::Textured(seed ^ 0xa7))
        .with_noise(NOISE)
        .with_actor(distractor);
    let mut ref_scene = control_scene.clone();
    for s in starts {
        ref_scene = ref_scene.with_actor(gesture(s, (20.0, 10.0)));
    }
    let ref_seed = seed.wrapping_add(100);
    Ok(DetectionScenario {
        query: render(&query_scene, SIZE, SIZE, LEN, seed)?,
        reference: render(&ref_scene, SIZE, SIZE, 300, ref_seed)?,
        control: render(&control_scene, SIZE, SIZE, 300, ref_seed)?,
        centers: starts.iter().map(|s| s + LEN / 2).collect(),
    })
}

/// A wide view and a 3x zoom into its centre, with the transform mapping
/// zoomed pixels back to the wide view.
#[derive(Debug, Clone)]
pub struct ZoomScenario {
    pub zoomed: Video,
    pub wide: Video,
    pub zoomed_to_wide: AffineTransform,
}

/// 96x96x64 wide view whose four actors sit within the central third, so
/// that all of them stay visible after zooming in by 3.
pub fn zoom_scenario(seed: u64) -> Result<ZoomScenario> {
    const SIZE: usize = 96;
    let c = (SIZE as f64 - 1.0) / 2.0;
    let off = SIZE as f64 / 8.0;
    let mut scene = Scene::new(Background::Textured(seed ^ 0x200));
    let placement = [
        (11, -1.0, -1.0),
        (13, 1.0, -0.8),
        (17, -0.8, 1.0),
        (19, 0.9, 0.9),
    ];
    for (i, (period, dx, dy)) in placement.into_iter().enumerate() {
        let pattern = if i == 3 {
            Pattern::TranslatingBar
        } else {
            Pattern::OscillatingDot
        };
        let mut a = Actor::new(pattern, period, 3.0, (c + dx * off, c + dy * off));
        a.size = 1.5;
        scene = scene.with_actor(a);
    }
    let wide = render(&scene, SIZE, SIZE, 64, seed)?;
    let zoom = AffineTransform::similarity(0.0, 3.0, 0.0, 0.0, (c, c));
    Ok(ZoomScenario {
        zoomed: warp_affine(&wide, &zoom)?,
        wide,
        zoomed_to_wide: zoom.inverse()?,
    })
}

/// Alternating oscillating-dot (label 0) and translating-bar (label 1)
/// videos of 28x28x48, `per_category` of each, with per-video background,
/// position and phase.
pub fn category_collection(per_category: usize, seed: u64) -> Result<(Vec<Video>, Vec<usize>)> {
    let mut videos = Vec::with_capacity(2 * per_category);
    let mut labels = Vec::with_capacity(2 * per_category);
    for i in 0..2 * per_category as u64 {
        let label = (i % 2) as usize;
        let pattern = [Pattern::OscillatingDot, Pattern::TranslatingBar][label];
        let center = (11.0 + (i % 3) as f64 * 2.0, 12.0 + (i % 4) as f64);
        let mut a = Actor::new(pattern, 12, 5.0, center);
        a.time_offset = i as f64 * 1.7;
        let scene = Scene::new(Background::Textured(seed.wrapping_add(100 + i)))
            .with_actor(a)
            .with_noise(0.01);
        videos.push(render(&scene, 28, 28, 48, seed.wrapping_add(i))?);
        labels.push(label);
    }
    Ok((videos, labels))
}
