//! The multi-scale temporal self-similarity ("needle") descriptor.
//!
//! For a point `(x, y, t)` and each pyramid level `l`, the per-scale vector
//! holds the patch SSD between level-local frame `τ = floor(t / 2^l)` and
//! frames `τ-Γ … τ-1, τ+1 … τ+Γ` at the same spatial position. The `L`
//! per-scale vectors are concatenated and divided by
//! `max(sum, Sum_noise)`, where `Sum_noise = 2ΓL · P` and `P` is a
//! percentile (30th by default) of all raw entries of the video.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::pyramid::{build_pyramid, TemporalPyramid};
use crate::video::Video;

/// Lower bound on `Sum_noise`; keeps the floor positive for noise-free
/// synthetic input where the percentile is exactly zero.
pub const MIN_NOISE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeedleParams {
    /// Patch side is `2 * patch_radius + 1`.
    pub patch_radius: usize,
    /// Temporal radius Γ, in level-local frames.
    pub gamma: usize,
    /// Number of temporal scales L.
    pub scales: usize,
    /// Percentile of raw entries that estimates the noise variance.
    pub noise_percentile: f64,
}

impl Default for NeedleParams {
    fn default() -> Self {
        NeedleParams {
            patch_radius: 1,
            gamma: 3,
            scales: 3,
            noise_percentile: 0.30,
        }
    }
}

impl NeedleParams {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.gamma >= 1, InvalidArgument, "gamma must be at least 1");
        ensure!(
            self.scales >= 1,
            InvalidArgument,
            "scale count must be at least 1"
        );
        ensure!(
            self.scales <= 16,
            InvalidArgument,
            "at most 16 temporal scales are supported"
        );
        ensure!(
            (0.0..=1.0).contains(&self.noise_percentile),
            InvalidArgument,
            "noise percentile must lie in [0, 1], got {}",
            self.noise_percentile
        );
        Ok(())
    }

    /// Descriptor length `2ΓL`.
    pub fn descriptor_len(&self) -> usize {
        2 * self.gamma * self.scales
    }

    /// Per-scale temporal support `λ = 2Γ + 1`.
    pub fn lambda(&self) -> usize {
        2 * self.gamma + 1
    }

    /// Full-resolution span of the coarsest level's window,
    /// `Λ = λ·2^(L-1) - (2^(L-1) - 1)`.
    pub fn temporal_context(&self) -> usize {
        let f = 1usize << (self.scales - 1);
        self.lambda() * f - (f - 1)
    }

    /// Frames excluded at the start of a video, `Γ·2^(L-1)`.
    pub fn temporal_margin(&self) -> usize {
        self.gamma << (self.scales - 1)
    }

    /// Shortest video that yields at least one descriptor.
    pub fn min_frames(&self) -> usize {
        (2 * self.gamma + 1) << (self.scales - 1)
    }
}

/// A space-time point at full temporal resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Location {
    pub x: usize,
    pub y: usize,
    pub t: usize,
}

impl Location {
    pub fn new(x: usize, y: usize, t: usize) -> Self {
        Location { x, y, t }
    }
}

impl Ord for Location {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.t, self.y, self.x).cmp(&(other.t, other.y, other.x))
    }
}

impl PartialOrd for Location {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeedleDescriptor {
    pub entries: Vec<f64>,
    pub location: Location,
    /// Set when the raw sum fell below `Sum_noise`, so the entries sum to
    /// less than one.
    pub normalized_by_noise_floor: bool,
}

/// Half-open box of points that have a full descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidRegion {
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub y1: usize,
    pub t0: usize,
    pub t1: usize,
}

impl ValidRegion {
    /// Region of points whose descriptor needs no out-of-range frame at
    /// any scale and no pixel outside the frame.
    pub fn for_video(
        width: usize,
        height: usize,
        frames: usize,
        params: &NeedleParams,
    ) -> Option<Self> {
        let r = params.patch_radius;
        if width <= 2 * r || height <= 2 * r {
            return None;
        }
        let g = params.gamma;
        let t0 = params.temporal_margin();
        let mut t1 = frames;
        for l in 0..params.scales {
            let level_frames = frames >> l;
            if level_frames < g {
                return None;
            }
            t1 = t1.min((level_frames - g) << l);
        }
        if t0 >= t1 {
            return None;
        }
        Some(ValidRegion {
            x0: r,
            x1: width - r,
            y0: r,
            y1: height - r,
            t0,
            t1,
        })
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn frames(&self) -> usize {
        self.t1 - self.t0
    }

    pub fn len(&self) -> usize {
        self.width() * self.height() * self.frames()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, loc: Location) -> bool {
        (self.x0..self.x1).contains(&loc.x)
            && (self.y0..self.y1).contains(&loc.y)
            && (self.t0..self.t1).contains(&loc.t)
    }

    pub fn contains_signed(&self, x: i64, y: i64, t: i64) -> bool {
        x >= self.x0 as i64
            && x < self.x1 as i64
            && y >= self.y0 as i64
            && y < self.y1 as i64
            && t >= self.t0 as i64
            && t < self.t1 as i64
    }

    /// Linear index in `(t, y, x)` order.
    #[inline]
    pub fn index_of(&self, loc: Location) -> usize {
        ((loc.t - self.t0) * self.height() + (loc.y - self.y0)) * self.width() + (loc.x - self.x0)
    }

    #[inline]
    pub fn location_of(&self, index: usize) -> Location {
        let w = self.width();
        let plane = w * self.height();
        let t = index / plane;
        let rem = index % plane;
        Location {
            x: self.x0 + rem % w,
            y: self.y0 + rem / w,
            t: self.t0 + t,
        }
    }

    /// Index range covering frame `t`.
    pub fn frame_range(&self, t: usize) -> std::ops::Range<usize> {
        let plane = self.width() * self.height();
        let start = (t - self.t0) * plane;
        start..start + plane
    }
}

/// Descriptors of one frame, split into the static (all-zero) ones and the
/// rest. The zero ones are interchangeable for nearest-neighbour purposes.
#[derive(Debug, Clone, Default)]
pub(crate) struct FrameBucket {
    pub(crate) nonzero: Vec<u32>,
    pub(crate) zero: Vec<u32>,
}

/// All descriptors of one video, stored contiguously in `(t, y, x)` order.
#[derive(Debug, Clone)]
pub struct DescriptorField {
    width: usize,
    height: usize,
    frames: usize,
    params: NeedleParams,
    region: ValidRegion,
    noise_floor: f64,
    data: Vec<f64>,
    below_floor: Vec<bool>,
    buckets: Vec<FrameBucket>,
}

impl DescriptorField {
    fn assemble(
        (width, height, frames): (usize, usize, usize),
        params: NeedleParams,
        region: ValidRegion,
        noise_floor: f64,
        data: Vec<f64>,
        below_floor: Vec<bool>,
    ) -> Self {
        let dim = params.descriptor_len();
        let plane = region.width() * region.height();
        let buckets = (0..region.frames())
            .map(|k| {
                let mut b = FrameBucket::default();
                for i in k * plane..(k + 1) * plane {
                    if data[i * dim..(i + 1) * dim].iter().all(|&v| v == 0.0) {
                        b.zero.push(i as u32);
                    } else {
                        b.nonzero.push(i as u32);
                    }
                }
                b
            })
            .collect();
        DescriptorField {
            width,
            height,
            frames,
            params,
            region,
            noise_floor,
            data,
            below_floor,
            buckets,
        }
    }

    /// Builds a field from already-normalized entries laid out in `(t, y, x)`
    /// order over the valid region implied by the dimensions and params.
    pub fn from_entries(
        (width, height, frames): (usize, usize, usize),
        params: NeedleParams,
        noise_floor: f64,
        data: Vec<f64>,
    ) -> Result<Self> {
        params.validate()?;
        let region = ValidRegion::for_video(width, height, frames, &params).ok_or_else(|| {
            Error::TooShort(format!("{width}x{height}x{frames} has no valid region"))
        })?;
        let dim = params.descriptor_len();
        ensure!(
            data.len() == region.len() * dim,
            InvalidArgument,
            "expected {} entries, got {}",
            region.len() * dim,
            data.len()
        );
        ensure!(
            data.iter().all(|v| v.is_finite() && *v >= 0.0),
            InvalidArgument,
            "entries must be finite and non-negative"
        );
        ensure!(
            noise_floor > 0.0,
            InvalidArgument,
            "noise floor must be positive"
        );
        let below_floor = data
            .chunks_exact(dim)
            .map(|d| d.iter().sum::<f64>() < 1.0 - 1e-9)
            .collect();
        Ok(Self::assemble(
            (width, height, frames),
            params,
            region,
            noise_floor,
            data,
            below_floor,
        ))
    }

    pub fn params(&self) -> &NeedleParams {
        &self.params
    }

    pub fn region(&self) -> &ValidRegion {
        &self.region
    }

    pub fn noise_floor(&self) -> f64 {
        self.noise_floor
    }

    pub fn dim(&self) -> usize {
        self.params.descriptor_len()
    }

    /// Video dimensions `(width, height, frame_count)`.
    pub fn video_dims(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.frames)
    }

    pub fn len(&self) -> usize {
        self.region.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat entries, `dim` per descriptor.
    pub fn raw_data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn entries(&self, index: usize) -> &[f64] {
        let d = self.dim();
        &self.data[index * d..(index + 1) * d]
    }

    pub fn entries_at(&self, loc: Location) -> Option<&[f64]> {
        self.region
            .contains(loc)
            .then(|| self.entries(self.region.index_of(loc)))
    }

    pub fn location(&self, index: usize) -> Location {
        self.region.location_of(index)
    }

    pub fn is_zero(&self, index: usize) -> bool {
        self.entries(index).iter().all(|&v| v == 0.0)
    }

    pub fn descriptor(&self, loc: Location) -> Option<NeedleDescriptor> {
        let entries = self.entries_at(loc)?.to_vec();
        let idx = self.region.index_of(loc);
        Some(NeedleDescriptor {
            entries,
            location: loc,
            normalized_by_noise_floor: self.below_floor[idx],
        })
    }

    pub fn descriptors(&self) -> impl Iterator<Item = NeedleDescriptor> + '_ {
        (0..self.len()).map(move |i| NeedleDescriptor {
            entries: self.entries(i).to_vec(),
            location: self.location(i),
            normalized_by_noise_floor: self.below_floor[i],
        })
    }

    /// Number of non-static descriptors.
    pub fn nonzero_count(&self) -> usize {
        self.buckets.iter().map(|b| b.nonzero.len()).sum()
    }

    pub(crate) fn bucket(&self, t: usize) -> &FrameBucket {
        &self.buckets[t - self.region.t0]
    }

    /// Replaces the descriptors inside `dst_box` (given as its minimum
    /// corner and extent) with those of `src` starting at `src_corner`.
    /// Used to plant shared space-time regions in tests and experiments.
    pub fn plant_from(
        &mut self,
        src: &DescriptorField,
        src_corner: Location,
        dst_corner: Location,
        extent: (usize, usize, usize),
    ) -> Result<()> {
        ensure!(
            src.dim() == self.dim(),
            InvalidArgument,
            "descriptor dimensions differ"
        );
        let (ex, ey, et) = extent;
        ensure!(
            ex > 0 && ey > 0 && et > 0,
            InvalidArgument,
            "empty plant extent"
        );
        for (corner, field) in [(src_corner, src), (dst_corner, &*self)] {
            let far = Location::new(corner.x + ex - 1, corner.y + ey - 1, corner.t + et - 1);
            ensure!(
                field.region.contains(corner) && field.region.contains(far),
                InvalidArgument,
                "plant box {corner:?}+{extent:?} leaves the valid region"
            );
        }
        let dim = self.dim();
        for dt in 0..et {
            for dy in 0..ey {
                for dx in 0..ex {
                    let s = src.region.index_of(Location::new(
                        src_corner.x + dx,
                        src_corner.y + dy,
                        src_corner.t + dt,
                    ));
                    let d = self.region.index_of(Location::new(
                        dst_corner.x + dx,
                        dst_corner.y + dy,
                        dst_corner.t + dt,
                    ));
                    self.data[d * dim..(d + 1) * dim].copy_from_slice(src.entries(s));
                    self.below_floor[d] = src.below_floor[s];
                }
            }
        }
        let rebuilt = DescriptorField::assemble(
            (self.width, self.height, self.frames),
            self.params,
            self.region,
            self.noise_floor,
            std::mem::take(&mut self.data),
            std::mem::take(&mut self.below_floor),
        );
        *self = rebuilt;
        Ok(())
    }
}

/// Patch SSD between frames `t` and `t + r` at `(x, y)`.
pub fn patch_ssd(
    v: &Video,
    x: usize,
    y: usize,
    t: usize,
    r: isize,
    patch_radius: usize,
) -> Result<f64> {
    let other = t as isize + r;
    ensure!(
        t < v.frame_count() && other >= 0 && (other as usize) < v.frame_count(),
        InvalidArgument,
        "frames {t} and {other} not both inside 0..{}",
        v.frame_count()
    );
    ensure!(
        x >= patch_radius
            && y >= patch_radius
            && x + patch_radius < v.width()
            && y + patch_radius < v.height(),
        InvalidArgument,
        "patch of radius {patch_radius} at ({x}, {y}) leaves the frame"
    );
    let other = other as usize;
    let mut sum = 0.0;
    for py in y - patch_radius..=y + patch_radius {
        for px in x - patch_radius..=x + patch_radius {
            let d = v.get(px, py, t) - v.get(px, py, other);
            sum += d * d;
        }
    }
    Ok(sum)
}

/// Raw per-scale vector: SSDs for offsets `-Γ … -1, +1 … +Γ`.
pub fn needle_at_scale(
    level: &Video,
    x: usize,
    y: usize,
    tau: usize,
    gamma: usize,
    patch_radius: usize,
) -> Result<Vec<f64>> {
    ensure!(
        tau >= gamma && tau + gamma < level.frame_count(),
        TooShort,
        "frame {tau} lacks a temporal margin of {gamma} in {} frames",
        level.frame_count()
    );
    let g = gamma as isize;
    (-g..=g)
        .filter(|&r| r != 0)
        .map(|r| patch_ssd(level, x, y, tau, r, patch_radius))
        .collect()
}

/// Box-summed squared frame differences for one level, indexed
/// `[r - 1][τ]`; entry `(x, y)` is the SSD between frames `τ` and `τ + r`.
fn level_ssd_planes(level: &Video, gamma: usize, pr: usize) -> Vec<Vec<Vec<f64>>> {
    let (w, h, f) = (level.width(), level.height(), level.frame_count());
    (1..=gamma)
        .map(|r| {
            (0..f.saturating_sub(r))
                .into_par_iter()
                .map(|tau| {
                    let a = level.frame(tau);
                    let b = level.frame(tau + r);
                    let sq: Vec<f64> = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).collect();
                    box_sum(&sq, w, h, pr)
                })
                .collect()
        })
        .collect()
}

/// `(2r+1)²` box sum, defined where the box fits inside the frame.
fn box_sum(img: &[f64], w: usize, h: usize, r: usize) -> Vec<f64> {
    let mut rows = vec![0.0; w * h];
    for y in 0..h {
        let row = &img[y * w..(y + 1) * w];
        for x in r..w.saturating_sub(r) {
            rows[y * w + x] = row[x - r..=x + r].iter().sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in r..h.saturating_sub(r) {
        for x in r..w.saturating_sub(r) {
            out[y * w + x] = (y - r..=y + r).map(|yy| rows[yy * w + x]).sum();
        }
    }
    out
}

/// Linear-interpolated percentile (`p` in `[0, 1]`) of `values`; reorders
/// the slice.
pub fn percentile(values: &mut [f64], p: f64) -> f64 {
    assert!(!values.is_empty());
    let n = values.len();
    let rank = p.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = rank.floor() as usize;
    let frac = rank - lo as f64;
    let (_, &mut lo_val, upper) = values.select_nth_unstable_by(lo, f64::total_cmp);
    if frac == 0.0 || upper.is_empty() {
        return lo_val;
    }
    let hi_val = upper.iter().copied().fold(f64::INFINITY, f64::min);
    lo_val + frac * (hi_val - lo_val)
}

pub fn compute_field(pyramid: &TemporalPyramid, params: &NeedleParams) -> Result<DescriptorField> {
    params.validate()?;
    ensure!(
        pyramid.scale_count() == params.scales,
        InvalidArgument,
        "pyramid has {} levels but params ask for {}",
        pyramid.scale_count(),
        params.scales
    );
    let base = pyramid.base();
    let (w, h, frames) = (base.width(), base.height(), base.frame_count());
    let region = ValidRegion::for_video(w, h, frames, params).ok_or_else(|| {
        Error::TooShort(format!(
            "{w}x{h}x{frames} video has no valid descriptor region for {params:?} (needs >= {} frames)",
            params.min_frames()
        ))
    })?;

    let g = params.gamma;
    let dim = params.descriptor_len();
    let planes: Vec<_> = pyramid
        .levels()
        .iter()
        .map(|level| level_ssd_planes(level, g, params.patch_radius))
        .collect();

    let plane_len = region.width() * region.height();
    let mut raw = vec![0.0; region.len() * dim];
    raw.par_chunks_mut(plane_len * dim)
        .enumerate()
        .for_each(|(k, chunk)| {
            let t = region.t0 + k;
            for (j, out) in chunk.chunks_exact_mut(dim).enumerate() {
                let x = region.x0 + j % region.width();
                let y = region.y0 + j / region.width();
                let px = y * w + x;
                for (l, level_planes) in planes.iter().enumerate() {
                    let tau = t >> l;
                    let seg = &mut out[l * 2 * g..(l + 1) * 2 * g];
                    for r in 1..=g {
                        seg[g - r] = level_planes[r - 1][tau - r][px];
                        seg[g + r - 1] = level_planes[r - 1][tau][px];
                    }
                }
            }
        });

    let mut scratch = raw.clone();
    let p = percentile(&mut scratch, params.noise_percentile);
    drop(scratch);
    let noise_floor = (dim as f64 * p).max(MIN_NOISE_FLOOR);

    let mut below_floor = vec![false; region.len()];
    raw.par_chunks_mut(dim)
        .zip(below_floor.par_iter_mut())
        .for_each(|(d, flag)| {
            let sum: f64 = d.iter().sum();
            let denom = sum.max(noise_floor);
            *flag = sum < noise_floor;
            if sum > 0.0 {
                for v in d.iter_mut() {
                    *v /= denom;
                }
            }
        });

    Ok(DescriptorField::assemble(
        (w, h, frames),
        *params,
        region,
        noise_floor,
        raw,
        below_floor,
    ))
}

/// Pyramid plus field in one call.
pub fn describe_video(v: &Video, params: &NeedleParams) -> Result<DescriptorField> {
    params.validate()?;
    let pyramid = build_pyramid(v, params.scales)?;
    compute_field(&pyramid, params)
}

/// Average and maximum per-entry temporal misalignment, in frames, between
/// two self-similarity windows of support `λ` whose deformation grows as
/// `α|t|` away from the centre.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MisalignmentBound {
    /// Continuum average `λα/4`.
    pub average: f64,
    /// Largest misalignment over the discrete window, `α(λ-1)/2`.
    pub maximum: f64,
}

pub fn misalignment_bound(lambda: f64, alpha: f64) -> Result<MisalignmentBound> {
    ensure!(
        lambda > 0.0 && lambda.is_finite(),
        InvalidArgument,
        "support must be positive"
    );
    ensure!(
        alpha >= 0.0 && alpha.is_finite(),
        InvalidArgument,
        "speed deviation must be non-negative"
    );
    Ok(MisalignmentBound {
        average: lambda * alpha / 4.0,
        maximum: alpha * (lambda - 1.0) / 2.0,
    })
}

/// Speed deviation `α = |1 - β|` for a speed ratio `β`.
pub fn speed_deviation(beta: f64) -> f64 {
    (1.0 - beta).abs()
}

const FIELD_MAGIC: &[u8; 8] = b"NDLFLD1\n";
const CODEBOOK_MAGIC: &[u8; 8] = b"NDLCBK1\n";

fn put_u32<W: Write>(w: &mut W, v: usize) -> std::io::Result<()> {
    let v = u32::try_from(v).map_err(|_| std::io::Error::other("value exceeds u32"))?;
    w.write_all(&v.to_le_bytes())
}

fn get_u32<R: Read>(r: &mut R) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| Error::Format("truncated header".into()))?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn get_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)
        .map_err(|_| Error::Format("truncated header".into()))?;
    Ok(f64::from_le_bytes(b))
}

fn get_f32s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; n * 4];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::Format(format!("payload shorter than {n} floats")))?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect())
}

/// Binary dump: magic `NDLFLD1\n`; u32 LE width, height, frame_count,
/// patch_radius, gamma, scales; f64 LE noise_percentile, noise_floor;
/// u32 LE x0, x1, y0, y1, t0, t1, dim; then every valid descriptor in
/// `(t, y, x)` order as `dim` f32 LE values.
pub fn write_field<W: Write>(field: &DescriptorField, mut w: W) -> std::io::Result<()> {
    w.write_all(FIELD_MAGIC)?;
    let p = &field.params;
    for v in [
        field.width,
        field.height,
        field.frames,
        p.patch_radius,
        p.gamma,
        p.scales,
    ] {
        put_u32(&mut w, v)?;
    }
    w.write_all(&p.noise_percentile.to_le_bytes())?;
    w.write_all(&field.noise_floor.to_le_bytes())?;
    let r = &field.region;
    for v in [r.x0, r.x1, r.y0, r.y1, r.t0, r.t1, field.dim()] {
        put_u32(&mut w, v)?;
    }
    let mut buf = Vec::with_capacity(field.data.len() * 4);
    for &v in &field.data {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&buf)
}

/// Reads a dump written by [`write_field`]. Entries come back rounded to
/// f32; the below-floor flags are reconstructed from the entry sums.
pub fn read_field<R: Read>(mut r: R) -> Result<DescriptorField> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("truncated field magic".into()))?;
    ensure!(&magic == FIELD_MAGIC, Format, "bad descriptor-field magic");
    let (width, height, frames) = (get_u32(&mut r)?, get_u32(&mut r)?, get_u32(&mut r)?);
    let params = NeedleParams {
        patch_radius: get_u32(&mut r)?,
        gamma: get_u32(&mut r)?,
        scales: get_u32(&mut r)?,
        noise_percentile: get_f64(&mut r)?,
    };
    params
        .validate()
        .map_err(|e| Error::Format(e.to_string()))?;
    let noise_floor = get_f64(&mut r)?;
    let region = ValidRegion {
        x0: get_u32(&mut r)?,
        x1: get_u32(&mut r)?,
        y0: get_u32(&mut r)?,
        y1: get_u32(&mut r)?,
        t0: get_u32(&mut r)?,
        t1: get_u32(&mut r)?,
    };
    let dim = get_u32(&mut r)?;
    ensure!(
        dim == params.descriptor_len(),
        Format,
        "dim {dim} disagrees with params"
    );
    ensure!(
        ValidRegion::for_video(width, height, frames, &params) == Some(region),
        Format,
        "valid region disagrees with dimensions and params"
    );
    ensure!(noise_floor > 0.0, Format, "noise floor must be positive");
    let data = get_f32s(&mut r, region.len() * dim)?;
    let below_floor = data
        .chunks_exact(dim)
        .map(|d| d.iter().sum::<f64>() < 1.0 - 1e-5)
        .collect();
    Ok(DescriptorField::assemble(
        (width, height, frames),
        params,
        region,
        noise_floor,
        data,
        below_floor,
    ))
}

pub(crate) fn write_codebook_envelope<W: Write>(
    mut w: W,
    dim: usize,
    sample_fraction: f64,
    sigma: f64,
    words: &[f64],
) -> std::io::Result<()> {
    w.write_all(CODEBOOK_MAGIC)?;
    put_u32(&mut w, dim)?;
    put_u32(&mut w, words.len() / dim.max(1))?;
    w.write_all(&sample_fraction.to_le_bytes())?;
    w.write_all(&sigma.to_le_bytes())?;
    for &v in words {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn read_codebook_envelope<R: Read>(mut r: R) -> Result<(usize, f64, f64, Vec<f64>)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("truncated codebook magic".into()))?;
    ensure!(&magic == CODEBOOK_MAGIC, Format, "bad codebook magic");
    let dim = get_u32(&mut r)?;
    let k = get_u32(&mut r)?;
    let fraction = get_f64(&mut r)?;
    let sigma = get_f64(&mut r)?;
    let words = get_f32s(&mut r, dim * k)?;
    Ok((dim, fraction, sigma, words))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_frame(a: f64, b: f64) -> Video {
        Video::from_fn(3, 3, 2, 25.0, |_, _, t| if t == 0 { a } else { b }).unwrap()
    }

    #[test]
    fn ssd_self_comparison_is_zero() {
        let v = two_frame(0.2, 0.4);
        assert_eq!(patch_ssd(&v, 1, 1, 0, 0, 1).unwrap(), 0.0);
    }

    #[test]
    fn ssd_hand_computed() {
        let v = two_frame(0.2, 0.4);
        let ssd = patch_ssd(&v, 1, 1, 0, 1, 1).unwrap();
        assert!((ssd - 0.36).abs() < 1e-12);
        let back = patch_ssd(&v, 1, 1, 1, -1, 1).unwrap();
        assert_eq!(ssd, back);
    }

    #[test]
    fn ssd_rejects_out_of_range() {
        let v = two_frame(0.2, 0.4);
        assert!(patch_ssd(&v, 1, 1, 1, 1, 1).is_err());
        assert!(patch_ssd(&v, 0, 1, 0, 1, 1).is_err());
        assert!(patch_ssd(&v, 2, 1, 0, 1, 1).is_err());
    }

    #[test]
    fn static_level_gives_zero_vector_of_length_two_gamma() {
        let v = Video::filled(5, 5, 9, 25.0, 0.6).unwrap();
        let d = needle_at_scale(&v, 2, 2, 4, 3, 1).unwrap();
        assert_eq!(d, vec![0.0; 6]);
        assert!(needle_at_scale(&v, 2, 2, 2, 3, 1).is_err());
        assert!(needle_at_scale(&v, 2, 2, 6, 3, 1).is_err());
    }

    #[test]
    fn offsets_are_ordered_negative_then_positive() {
        // frame value equals t / 10, so SSD to offset r is 9 * (r/10)^2
        let v = Video::from_fn(3, 3, 7, 25.0, |_, _, t| t as f64 / 10.0).unwrap();
        let d = needle_at_scale(&v, 1, 1, 3, 3, 1).unwrap();
        let expect: Vec<f64> = [-3.0, -2.0, -1.0, 1.0, 2.0, 3.0]
            .iter()
            .map(|r: &f64| 9.0 * (r / 10.0).powi(2))
            .collect();
        for (a, b) in d.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn valid_region_bounds() {
        let p = NeedleParams::default();
        let r = ValidRegion::for_video(10, 8, 100, &p).unwrap();
        assert_eq!((r.x0, r.x1, r.y0, r.y1, r.t0, r.t1), (1, 9, 1, 7, 12, 88));
        assert!(ValidRegion::for_video(10, 8, 27, &p).is_none());
        assert!(ValidRegion::for_video(10, 8, 28, &p).is_some());
        assert!(ValidRegion::for_video(2, 8, 100, &p).is_none());
        assert_eq!(p.min_frames(), 28);
    }

    #[test]
    fn region_index_round_trip() {
        let p = NeedleParams::default();
        let r = ValidRegion::for_video(9, 7, 40, &p).unwrap();
        for i in (0..r.len()).step_by(7) {
            assert_eq!(r.index_of(r.location_of(i)), i);
        }
    }

    #[test]
    fn default_context_is_radius_twelve() {
        let p = NeedleParams::default();
        assert_eq!(p.lambda(), 7);
        assert_eq!(p.temporal_context(), 25);
        assert_eq!(p.temporal_margin(), 12);
        assert_eq!(p.descriptor_len(), 18);
    }

    #[test]
    fn static_video_gives_all_zero_field() {
        let v = Video::filled(6, 6, 40, 25.0, 0.3).unwrap();
        let f = describe_video(&v, &NeedleParams::default()).unwrap();
        assert!(f.raw_data().iter().all(|&x| x == 0.0));
        assert_eq!(f.nonzero_count(), 0);
        assert!(f.noise_floor() > 0.0);
    }

    #[test]
    fn too_short_video_is_rejected() {
        let v = Video::filled(6, 6, 20, 25.0, 0.3).unwrap();
        assert!(matches!(
            describe_video(&v, &NeedleParams::default()),
            Err(Error::TooShort(_))
        ));
    }

    #[test]
    fn percentile_interpolates() {
        let mut v = vec![4.0, 1.0, 3.0, 2.0, 5.0];
        assert_eq!(percentile(&mut v, 0.0), 1.0);
        assert_eq!(percentile(&mut v, 1.0), 5.0);
        assert_eq!(percentile(&mut v, 0.5), 3.0);
        assert!((percentile(&mut v, 0.3) - 2.2).abs() < 1e-12);
    }

    #[test]
    fn misalignment_numbers() {
        let b = misalignment_bound(25.0, speed_deviation(1.25)).unwrap();
        assert_eq!(b.average, 1.5625);
        assert_eq!(b.maximum, 3.0);
        let b = misalignment_bound(7.0, 0.25).unwrap();
        assert_eq!(b.average, 0.4375);
        assert_eq!(b.maximum, 0.75);
        assert_eq!(misalignment_bound(7.0, 0.0).unwrap().average, 0.0);
        assert!(misalignment_bound(0.0, 0.1).is_err());
        assert!(misalignment_bound(7.0, -0.1).is_err());
    }

    #[test]
    fn field_dump_round_trip() {
        let v = Video::from_fn(7, 6, 32, 25.0, |x, y, t| {
            ((x * 3 + y * 5 + t * 7) % 11) as f64 / 10.0
        })
        .unwrap();
        let f = describe_video(&v, &NeedleParams::default()).unwrap();
        let mut buf = Vec::new();
        write_field(&f, &mut buf).unwrap();
        let g = read_field(&buf[..]).unwrap();
        assert_eq!(g.region(), f.region());
        assert_eq!(g.noise_floor(), f.noise_floor());
        assert_eq!(g.params(), f.params());
        for (a, b) in f.raw_data().iter().zip(g.raw_data()) {
            assert_eq!(*b, f64::from(*a as f32));
        }
        buf[0] = b'X';
        assert!(read_field(&buf[..]).is_err());
    }
}
