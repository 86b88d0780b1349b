//! Training-free 360° panorama translation by tiled latent denoising.
//!
//! The input panorama is doubled around a split point so that its wrap seam
//! becomes interior content, encoded to a latent, inverted with DDIM and
//! re-denoised window by window (including a wrapping stitch window). The
//! middle copy of the decoded result is the translated panorama.

pub mod codec;
pub mod control;
pub mod denoise;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod pipeline;
pub mod tensor;
pub mod tiler;

pub use codec::{BilinearBlockCodec, BlockAverageCodec, Codec, CodecDescriptor, CodecKind};
pub use control::{GuidanceControl, GuidanceSpec, InjectionPolicy, PnpControl};
pub use denoise::{
    ColumnPadding, Conditioning, ControlPayload, ConvToyDenoiser, Denoiser, LinearGaussianDenoiser,
    PayloadSet, Prediction, ZeroEpsDenoiser,
};
pub use diffusion::{NoiseSchedule, ScheduleParams, StepInfo, TrajectoryRecord};
pub use error::{Error, RawFormatError, Result};
pub use eval::{Halves, SeamReport, SweepConfig, SweepRow};
pub use geometry::{ExtendSpec, WindowMatches};
pub use pipeline::{ControlMode, DenoiserKind, PipelineConfig, RunReport, Translation};
pub use tensor::{ColumnRange, ImageTensor, LatentTensor, Tensor, WeightField};
pub use tiler::{NoControl, TileMode, Tiler, Window, WindowControl, WindowId, WindowSchedule};
