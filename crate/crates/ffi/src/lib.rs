//! C ABI over `tneedle`.
//!
//! Videos and descriptor fields are opaque handles created and released by
//! this library. Every function returns a [`TnStatus`]; on failure a
//! message is available from [`tn_last_error`] on the same thread until the
//! next call. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use tneedle::align::{align_videos, AlignConfig, SpatialModel};
use tneedle::cluster::{cluster_collection, sample_count, ClusterConfig};
use tneedle::detect::{detect_action, DetectConfig};
use tneedle::synth::{generate, MotionScript, Pattern};
use tneedle::{
    describe_video, load_video, save_video, DescriptorField, Error, Location, NeedleParams, Video,
    VideoFormat,
};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    TooShort = 3,
    Io = 4,
    Format = 5,
    Empty = 6,
    Degenerate = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

/// Opaque video handle.
pub struct TnVideo(Video);

/// Opaque descriptor-field handle.
pub struct TnField(DescriptorField);

/// Descriptor parameters; see [`tn_needle_params_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct TnNeedleParams {
    pub patch_radius: u32,
    pub gamma: u32,
    pub scales: u32,
    pub noise_percentile: f64,
}

/// Outcome of [`tn_align`]. `affine` is `[a11, a12, a13, a21, a22, a23]`.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct TnAlignResult {
    pub shift: f64,
    pub integer_shift: i64,
    pub alpha: f64,
    pub affine: [f64; 6],
    pub score: f64,
    pub matches: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> TnStatus {
    match e {
        Error::Io { .. } => TnStatus::Io,
        Error::Format(_) | Error::Image(_) => TnStatus::Format,
        Error::InvalidArgument(_) => TnStatus::InvalidArgument,
        Error::TooShort(_) => TnStatus::TooShort,
        Error::Empty(_) => TnStatus::Empty,
        Error::Degenerate(_) => TnStatus::Degenerate,
    }
}

struct Fail(TnStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(TnStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> TnStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TnStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            TnStatus::Panic
        }
    }
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(TnStatus::InvalidArgument, "path is not valid UTF-8".into()))
}

unsafe fn video_arg<'a>(v: *const TnVideo) -> Result<&'a Video, Fail> {
    v.as_ref().map(|v| &v.0).ok_or_else(|| null("video"))
}

fn params_from(p: &TnNeedleParams) -> Result<NeedleParams, Fail> {
    let params = NeedleParams {
        patch_radius: p.patch_radius as usize,
        gamma: p.gamma as usize,
        scales: p.scales as usize,
        noise_percentile: p.noise_percentile,
    };
    params.validate()?;
    Ok(params)
}

unsafe fn write_out<T>(out: *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    out.write(value);
    Ok(())
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn tn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Default parameters: 3x3 patches, temporal radius 3, 3 scales, 30th
/// percentile noise floor.
#[no_mangle]
pub extern "C" fn tn_needle_params_default() -> TnNeedleParams {
    let p = NeedleParams::default();
    TnNeedleParams {
        patch_radius: p.patch_radius as u32,
        gamma: p.gamma as u32,
        scales: p.scales as u32,
        noise_percentile: p.noise_percentile,
    }
}

/// Creates a video from `width * height * frames` intensities in `[0, 1]`,
/// frame by frame in row-major order.
///
/// # Safety
/// `data` must point to `len` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tn_video_new(
    width: usize,
    height: usize,
    frames: usize,
    fps: f64,
    data: *const f64,
    len: usize,
    out: *mut *mut TnVideo,
) -> TnStatus {
    guard(|| {
        if data.is_null() {
            return Err(null("data"));
        }
        let samples = std::slice::from_raw_parts(data, len).to_vec();
        let v = Video::new(width, height, frames, fps, samples)?;
        write_out(out, Box::into_raw(Box::new(TnVideo(v))))
    })
}

/// Loads a raw-y8 file or, for a directory, an image sequence.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tn_video_load(path: *const c_char, out: *mut *mut TnVideo) -> TnStatus {
    guard(|| {
        let path = path_arg(path)?;
        let format = if std::path::Path::new(path).is_dir() {
            VideoFormat::ImageSequence
        } else {
            VideoFormat::RawY8
        };
        let v = load_video(path, format)?;
        write_out(out, Box::into_raw(Box::new(TnVideo(v))))
    })
}

/// Writes a raw-y8 file.
///
/// # Safety
/// `video` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn tn_video_save(video: *const TnVideo, path: *const c_char) -> TnStatus {
    guard(|| {
        let v = video_arg(video)?;
        save_video(v, path_arg(path)?)?;
        Ok(())
    })
}

/// Width, height and frame count.
///
/// # Safety
/// `video` must come from this library; the outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn tn_video_dims(
    video: *const TnVideo,
    width: *mut usize,
    height: *mut usize,
    frames: *mut usize,
) -> TnStatus {
    guard(|| {
        let v = video_arg(video)?;
        write_out(width, v.width())?;
        write_out(height, v.height())?;
        write_out(frames, v.frame_count())
    })
}

/// Releases a video; null is ignored.
///
/// # Safety
/// `video` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tn_video_free(video: *mut TnVideo) {
    if !video.is_null() {
        drop(Box::from_raw(video));
    }
}

/// Renders one synthetic actor. `pattern` is `oscillating-dot`,
/// `translating-bar` or `two-phase-gesture`; the remaining motion settings
/// take their defaults.
///
/// # Safety
/// `pattern` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tn_synth_render(
    pattern: *const c_char,
    width: usize,
    height: usize,
    frames: usize,
    seed: u64,
    out: *mut *mut TnVideo,
) -> TnStatus {
    guard(|| {
        let pattern: Pattern = path_arg(pattern)?.parse()?;
        let script = MotionScript {
            pattern,
            ..MotionScript::default()
        };
        let v = generate(&script, width, height, frames, seed)?;
        write_out(out, Box::into_raw(Box::new(TnVideo(v))))
    })
}

/// Computes the descriptor field of `video`. `params` may be null for the
/// defaults.
///
/// # Safety
/// Handles must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tn_describe(
    video: *const TnVideo,
    params: *const TnNeedleParams,
    out: *mut *mut TnField,
) -> TnStatus {
    guard(|| {
        let v = video_arg(video)?;
        let p = match params.as_ref() {
            Some(p) => params_from(p)?,
            None => NeedleParams::default(),
        };
        let field = describe_video(v, &p)?;
        write_out(out, Box::into_raw(Box::new(TnField(field))))
    })
}

/// Number of descriptors and their length.
///
/// # Safety
/// `field` must come from this library; the outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn tn_field_shape(
    field: *const TnField,
    count: *mut usize,
    dim: *mut usize,
) -> TnStatus {
    guard(|| {
        let f = &field.as_ref().ok_or_else(|| null("field"))?.0;
        write_out(count, f.len())?;
        write_out(dim, f.dim())
    })
}

/// Copies the descriptor at pixel `(x, y)` of frame `t` into `out`, which
/// must hold at least `dim` values.
///
/// # Safety
/// `field` must come from this library; `out` must hold `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn tn_field_descriptor(
    field: *const TnField,
    x: usize,
    y: usize,
    t: usize,
    out: *mut f64,
    cap: usize,
) -> TnStatus {
    guard(|| {
        let f = &field.as_ref().ok_or_else(|| null("field"))?.0;
        if out.is_null() {
            return Err(null("output buffer"));
        }
        let d = f.entries_at(Location::new(x, y, t)).ok_or_else(|| {
            Fail(
                TnStatus::InvalidArgument,
                format!("({x}, {y}, {t}) is outside the valid region"),
            )
        })?;
        if cap < d.len() {
            return Err(Fail(
                TnStatus::BufferTooSmall,
                format!("buffer holds {cap} of {} values", d.len()),
            ));
        }
        std::slice::from_raw_parts_mut(out, d.len()).copy_from_slice(d);
        Ok(())
    })
}

/// Releases a field; null is ignored.
///
/// # Safety
/// `field` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tn_field_free(field: *mut TnField) {
    if !field.is_null() {
        drop(Box::from_raw(field));
    }
}

/// Aligns `query` to `reference` with default settings and an affine
/// spatial model.
///
/// # Safety
/// Handles must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tn_align(
    query: *const TnVideo,
    reference: *const TnVideo,
    seed: u64,
    out: *mut TnAlignResult,
) -> TnStatus {
    guard(|| {
        let (q, r) = (video_arg(query)?, video_arg(reference)?);
        let cfg = AlignConfig {
            seed,
            ..AlignConfig::default()
        };
        let a = align_videos(q, r, &cfg)?;
        let affine = match a.spatial {
            SpatialModel::Affine(t) => t.params,
            SpatialModel::Fundamental(_) => unreachable!("affine model requested"),
        };
        write_out(
            out,
            TnAlignResult {
                shift: a.temporal.shift,
                integer_shift: a.integer_shift,
                alpha: a.alpha,
                affine,
                score: a.score,
                matches: a.matches.len(),
            },
        )
    })
}

/// Detects the query action in `reference`. Up to `cap` detections are
/// written, strongest first; `count` receives the total number found.
///
/// # Safety
/// Handles must come from this library; `frames` and `scores` must hold
/// `cap` values each (they may be null when `cap` is 0).
#[no_mangle]
pub unsafe extern "C" fn tn_detect(
    query: *const TnVideo,
    reference: *const TnVideo,
    seed: u64,
    frames: *mut usize,
    scores: *mut f64,
    cap: usize,
    count: *mut usize,
) -> TnStatus {
    guard(|| {
        let (q, r) = (video_arg(query)?, video_arg(reference)?);
        let cfg = DetectConfig {
            seed,
            ..DetectConfig::default()
        };
        let res = detect_action(q, r, &cfg)?;
        write_out(count, res.detections.len())?;
        let n = res.detections.len().min(cap);
        if n > 0 && (frames.is_null() || scores.is_null()) {
            return Err(null("detection buffer"));
        }
        for (i, d) in res.detections.iter().take(n).enumerate() {
            frames.add(i).write(d.frame);
            scores.add(i).write(d.score);
        }
        Ok(())
    })
}

/// Clusters `count` videos into `clusters` groups; `labels` receives one
/// label per video.
///
/// # Safety
/// `videos` must hold `count` handles from this library; `labels` must
/// hold `count` values.
#[no_mangle]
pub unsafe extern "C" fn tn_cluster(
    videos: *const *const TnVideo,
    count: usize,
    clusters: usize,
    seed: u64,
    labels: *mut usize,
) -> TnStatus {
    guard(|| {
        if videos.is_null() || labels.is_null() {
            return Err(null("video list or label buffer"));
        }
        let handles = std::slice::from_raw_parts(videos, count);
        let list: Vec<Video> = handles
            .iter()
            .map(|&h| video_arg(h).cloned())
            .collect::<Result<_, _>>()?;
        let cfg = ClusterConfig {
            clusters,
            seed,
            ..ClusterConfig::default()
        };
        let res = cluster_collection(&list, &cfg)?;
        std::slice::from_raw_parts_mut(labels, count).copy_from_slice(&res.labels);
        Ok(())
    })
}

/// Samples needed to hit a region of `region` points among
/// `pixels * frames` with failure probability `delta`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tn_sample_count(
    pixels: usize,
    frames: usize,
    region: usize,
    delta: f64,
    out: *mut usize,
) -> TnStatus {
    guard(|| write_out(out, sample_count(pixels, frames, region, delta)?))
}
