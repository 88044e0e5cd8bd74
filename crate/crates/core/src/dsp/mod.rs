//! Short-time Fourier analysis/synthesis at the filtering-framework
//! resolution, plus application of the complex spatial and post filters.
//!
//! All model-facing audio runs at [`SAMPLE_RATE`] = 16 kHz. The rate is
//! implied by a 2 ms analysis frame mapping onto a 32-point FFT; it is not
//! configurable, and WAV input at any other rate is rejected.

mod filter;
mod stft;
pub mod wav;

pub use filter::{apply_post_filter, filter_and_sum, BinauralSpectrum, FilterFrame, OUT_CHANNELS, SPEAKERS};
pub use stft::{
    istft, make_hann, make_sqrt_hann, stft, MultiChannelSpectrogram, Spectrogram, Stft,
    StftConfig,
};
pub use wav::{read_wav, write_wav, AudioBuffer, SampleFormat};

/// Sample rate of every model-facing signal.
pub const SAMPLE_RATE: u32 = 16_000;

/// Samples per analysis frame (2 ms).
pub const FRAME_LEN: usize = 32;

/// Frame advance (1 ms).
pub const HOP: usize = 16;

/// One-sided bins of the 32-point FFT.
pub const BINS: usize = FRAME_LEN / 2 + 1;

/// Frames per second at the filtering-framework hop.
pub const FRAME_RATE: usize = SAMPLE_RATE as usize / HOP;

/// Floating point types the transforms are generic over.
pub trait Real: rustfft::FftNum + num_traits::Float + num_traits::FloatConst {}

impl<T> Real for T where T: rustfft::FftNum + num_traits::Float + num_traits::FloatConst {}
