//! Single-channel video volumes and the `raw-y8` container.
//!
//! A raw-y8 file is the magic `NDLY8\n`, one ASCII line
//! `width height frame_count fps\n`, then `width * height * frame_count`
//! bytes, frame-major and row-major within a frame.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{ensure, Error, Result};

pub const RAW_Y8_MAGIC: &[u8] = b"NDLY8\n";

/// Frame rate assumed for image sequences, which carry no timing.
pub const DEFAULT_FPS: f64 = 25.0;

/// Luminance volume with samples in `[0, 1]`, indexed `(x, y, t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Video {
    width: usize,
    height: usize,
    frames: usize,
    fps: f64,
    data: Vec<f64>,
}

impl Video {
    pub fn new(
        width: usize,
        height: usize,
        frames: usize,
        fps: f64,
        data: Vec<f64>,
    ) -> Result<Self> {
        ensure!(
            width >= 1 && height >= 1 && frames >= 1,
            InvalidArgument,
            "video dimensions must be positive, got {width}x{height}x{frames}"
        );
        ensure!(
            fps.is_finite() && fps > 0.0,
            InvalidArgument,
            "fps must be positive, got {fps}"
        );
        ensure!(
            data.len() == width * height * frames,
            InvalidArgument,
            "expected {} samples, got {}",
            width * height * frames,
            data.len()
        );
        if let Some(bad) = data
            .iter()
            .find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v)))
        {
            return Err(Error::InvalidArgument(format!(
                "sample {bad} outside [0, 1]"
            )));
        }
        Ok(Video {
            width,
            height,
            frames,
            fps,
            data,
        })
    }

    /// Builds a video by evaluating `f(x, y, t)`; values are clamped to `[0, 1]`.
    pub fn from_fn(
        width: usize,
        height: usize,
        frames: usize,
        fps: f64,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * frames);
        for t in 0..frames {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(x, y, t).clamp(0.0, 1.0));
                }
            }
        }
        Video::new(width, height, frames, fps, data)
    }

    pub fn filled(
        width: usize,
        height: usize,
        frames: usize,
        fps: f64,
        value: f64,
    ) -> Result<Self> {
        Video::new(
            width,
            height,
            frames,
            fps,
            vec![value; width * height * frames],
        )
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn frame_count(&self) -> usize {
        self.frames
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn pixels_per_frame(&self) -> usize {
        self.width * self.height
    }

    pub fn samples(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, t: usize) -> f64 {
        self.data[(t * self.height + y) * self.width + x]
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let n = self.pixels_per_frame();
        &self.data[t * n..(t + 1) * n]
    }

    /// Copies frames `range` into a new video.
    pub fn sub_frames(&self, range: std::ops::Range<usize>) -> Result<Video> {
        ensure!(
            range.start < range.end && range.end <= self.frames,
            InvalidArgument,
            "frame range {range:?} outside 0..{}",
            self.frames
        );
        let n = self.pixels_per_frame();
        Ok(Video {
            width: self.width,
            height: self.height,
            frames: range.len(),
            fps: self.fps,
            data: self.data[range.start * n..range.end * n].to_vec(),
        })
    }

    /// Applies `f` to every sample, clamping the result into `[0, 1]`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Video {
        Video {
            data: self.data.iter().map(|&v| f(v).clamp(0.0, 1.0)).collect(),
            ..self.clone()
        }
    }

    /// Rounds every sample onto the 8-bit grid used by raw-y8.
    pub fn quantized(&self) -> Video {
        self.map(|v| f64::from(quantize(v)) / 255.0)
    }

    pub(crate) fn from_parts_unchecked(
        width: usize,
        height: usize,
        frames: usize,
        fps: f64,
        data: Vec<f64>,
    ) -> Video {
        debug_assert_eq!(data.len(), width * height * frames);
        Video {
            width,
            height,
            frames,
            fps,
            data,
        }
    }
}

/// Round-half-up to 8 bits.
#[inline]
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VideoFormat {
    RawY8,
    ImageSequence,
}

impl std::str::FromStr for VideoFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw-y8" | "y8" => Ok(VideoFormat::RawY8),
            "image-sequence" | "images" => Ok(VideoFormat::ImageSequence),
            other => Err(Error::InvalidArgument(format!(
                "unknown video format {other:?}"
            ))),
        }
    }
}

pub fn load_video(path: impl AsRef<Path>, format: VideoFormat) -> Result<Video> {
    let path = path.as_ref();
    match format {
        VideoFormat::RawY8 => {
            let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
            read_raw_y8(BufReader::new(file))
        }
        VideoFormat::ImageSequence => load_image_sequence(path),
    }
}

/// Picks the format from the path: directories are image sequences.
pub fn load_video_auto(path: impl AsRef<Path>) -> Result<Video> {
    let path = path.as_ref();
    if path.is_dir() {
        load_video(path, VideoFormat::ImageSequence)
    } else {
        load_video(path, VideoFormat::RawY8)
    }
}

pub fn save_video(v: &Video, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_raw_y8(v, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_raw_y8<W: Write>(v: &Video, mut w: W) -> std::io::Result<()> {
    w.write_all(RAW_Y8_MAGIC)?;
    writeln!(w, "{} {} {} {}", v.width, v.height, v.frames, v.fps)?;
    let bytes: Vec<u8> = v.data.iter().map(|&s| quantize(s)).collect();
    w.write_all(&bytes)
}

pub fn read_raw_y8<R: BufRead>(mut r: R) -> Result<Video> {
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("truncated raw-y8 magic".into()))?;
    ensure!(magic == RAW_Y8_MAGIC, Format, "bad raw-y8 magic");

    let mut line = String::new();
    r.read_line(&mut line)
        .map_err(|e| Error::Format(format!("unreadable raw-y8 header: {e}")))?;
    ensure!(
        line.ends_with('\n'),
        Format,
        "raw-y8 header line not terminated"
    );
    let fields: Vec<&str> = line.split_ascii_whitespace().collect();
    ensure!(
        fields.len() == 4,
        Format,
        "raw-y8 header needs 4 fields, got {line:?}"
    );
    let dim = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::Format(format!("bad dimension {s:?}")))
    };
    let (width, height, frames) = (dim(fields[0])?, dim(fields[1])?, dim(fields[2])?);
    let fps: f64 = fields[3]
        .parse()
        .map_err(|_| Error::Format(format!("bad fps {:?}", fields[3])))?;
    ensure!(
        width >= 1 && height >= 1 && frames >= 1 && fps.is_finite() && fps > 0.0,
        Format,
        "non-positive raw-y8 header values {line:?}"
    );

    let n = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(frames))
        .ok_or_else(|| Error::Format("raw-y8 dimensions overflow".into()))?;
    let mut bytes = vec![0u8; n];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::Format(format!("raw-y8 payload shorter than {n} bytes")))?;
    let mut rest = [0u8; 1];
    ensure!(
        matches!(r.read(&mut rest), Ok(0)),
        Format,
        "trailing bytes after raw-y8 payload"
    );
    let data = bytes.into_iter().map(|b| f64::from(b) / 255.0).collect();
    Ok(Video::from_parts_unchecked(
        width, height, frames, fps, data,
    ))
}

/// Luminance of an 8-bit RGB triple, in 8-bit units. Integer weights keep
/// gray inputs exact.
#[inline]
pub fn luminance(r: u8, g: u8, b: u8) -> f64 {
    (299.0 * f64::from(r) + 587.0 * f64::from(g) + 114.0 * f64::from(b)) / 1000.0
}

fn load_image_sequence(dir: &Path) -> Result<Video> {
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    ensure!(!paths.is_empty(), Format, "no images in {}", dir.display());

    let mut dims = None;
    let mut data = Vec::new();
    for p in &paths {
        let img = image::open(p)?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        match dims {
            None => dims = Some((w, h)),
            Some(d) if d != (w, h) => {
                return Err(Error::Format(format!(
                    "{} is {w}x{h}, expected {}x{}",
                    p.display(),
                    d.0,
                    d.1
                )))
            }
            _ => {}
        }
        if img.color().has_color() {
            let rgb = img.to_rgb8();
            data.extend(
                rgb.pixels()
                    .map(|px| luminance(px[0], px[1], px[2]) / 255.0),
            );
        } else {
            let gray = img.to_luma8();
            data.extend(gray.pixels().map(|px| f64::from(px[0]) / 255.0));
        }
    }
    let (w, h) = dims.unwrap();
    Video::new(w, h, paths.len(), DEFAULT_FPS, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(w: usize, h: usize, f: usize, payload: &[u8]) -> Vec<u8> {
        let mut buf = RAW_Y8_MAGIC.to_vec();
        buf.extend(format!("{w} {h} {f} 25\n").bytes());
        buf.extend_from_slice(payload);
        buf
    }

    #[test]
    fn single_byte_extremes() {
        let v = read_raw_y8(&raw(1, 1, 1, &[255])[..]).unwrap();
        assert_eq!(v.samples(), &[1.0]);
        let v = read_raw_y8(&raw(1, 1, 1, &[0])[..]).unwrap();
        assert_eq!(v.samples(), &[0.0]);
    }

    #[test]
    fn half_gray_writes_128() {
        let v = Video::filled(3, 2, 2, 25.0, 0.5).unwrap();
        let mut buf = Vec::new();
        write_raw_y8(&v, &mut buf).unwrap();
        let header = RAW_Y8_MAGIC.len() + "3 2 2 25\n".len();
        assert_eq!(&buf[..RAW_Y8_MAGIC.len()], RAW_Y8_MAGIC);
        assert!(buf[header..].iter().all(|&b| b == 128));
        assert_eq!(buf.len(), header + 12);
    }

    #[test]
    fn zero_video_writes_zero_bytes() {
        let v = Video::filled(2, 2, 3, 25.0, 0.0).unwrap();
        let mut buf = Vec::new();
        write_raw_y8(&v, &mut buf).unwrap();
        assert!(buf[RAW_Y8_MAGIC.len() + "2 2 3 25\n".len()..]
            .iter()
            .all(|&b| b == 0));
    }

    #[test]
    fn malformed_headers_are_rejected() {
        assert!(matches!(
            read_raw_y8(&b"NDLY9\n1 1 1 25\n\0"[..]),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            read_raw_y8(&b"NDLY8\n1 1 25\n\0"[..]),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            read_raw_y8(&b"NDLY8\n0 1 1 25\n"[..]),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            read_raw_y8(&raw(2, 2, 1, &[1, 2, 3])[..]),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            read_raw_y8(&raw(1, 1, 1, &[1, 2])[..]),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_video("/nonexistent/clip.y8", VideoFormat::RawY8).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn gray_rgb_luminance_is_exact() {
        for g in 0..=255u8 {
            assert_eq!(luminance(g, g, g), f64::from(g));
        }
    }

    #[test]
    fn rejects_out_of_range_samples() {
        assert!(Video::new(1, 1, 1, 25.0, vec![1.5]).is_err());
        assert!(Video::new(1, 1, 1, 25.0, vec![f64::NAN]).is_err());
        assert!(Video::new(1, 1, 1, 0.0, vec![0.5]).is_err());
    }

    #[test]
    fn image_sequence_loads_in_lexicographic_order() {
        let dir = tempfile::tempdir().unwrap();
        for (i, level) in [10u8, 200, 90].iter().enumerate() {
            let img = image::GrayImage::from_pixel(3, 2, image::Luma([*level]));
            img.save(dir.path().join(format!("{i:04}.png"))).unwrap();
        }
        let rgb = image::RgbImage::from_pixel(3, 2, image::Rgb([255, 0, 0]));
        rgb.save(dir.path().join("0003.png")).unwrap();

        let v = load_video(dir.path(), VideoFormat::ImageSequence).unwrap();
        assert_eq!((v.width(), v.height(), v.frame_count()), (3, 2, 4));
        assert_eq!(v.get(0, 0, 0), 10.0 / 255.0);
        assert_eq!(v.get(2, 1, 1), 200.0 / 255.0);
        assert_eq!(v.get(1, 1, 2), 90.0 / 255.0);
        assert!((v.get(0, 0, 3) - 0.299).abs() < 1e-12);
    }

    #[test]
    fn image_sequence_rejects_mixed_sizes() {
        let dir = tempfile::tempdir().unwrap();
        image::GrayImage::new(3, 2)
            .save(dir.path().join("0.png"))
            .unwrap();
        image::GrayImage::new(2, 2)
            .save(dir.path().join("1.png"))
            .unwrap();
        let err = load_video(dir.path(), VideoFormat::ImageSequence).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
    }
}
