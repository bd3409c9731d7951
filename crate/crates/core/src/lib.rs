pub mod align;
pub mod cli;
pub mod cluster;
pub mod detect;
pub mod error;
pub mod geometry;
pub mod needle;
mod nn;
pub mod pyramid;
pub mod significance;
pub mod synth;
pub mod video;

pub use error::{Error, Result};
pub use geometry::{AffineTransform, FundamentalMatrix};
pub use needle::{
    describe_video, DescriptorField, Location, NeedleDescriptor, NeedleParams, ValidRegion,
};
pub use pyramid::{build_pyramid, TemporalPyramid};
pub use significance::{build_codebook, Codebook, ScoredMatch};
pub use synth::{render, Scene};
pub use video::{load_video, save_video, Video, VideoFormat};
