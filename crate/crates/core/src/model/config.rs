use crate::dsp::BINS;
use crate::error::{Error, Result};

pub const DEFAULT_LATENT: usize = 256;
pub const DEFAULT_MICS_PER_SIDE: usize = 2;
pub const SPEAKERS: usize = 2;

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    /// Number of parallel groups `G`.
    pub groups: usize,
    /// Hidden size `H` of each group.
    pub hidden: usize,
    /// Latent size `P`.
    pub latent: usize,
    /// Microphones per side `M`.
    pub mics_per_side: usize,
    /// Frequency bins `F`.
    pub bins: usize,
    pub speakers: usize,
    pub post_filter: bool,
    /// Factor applied to every `W` entry after tanh.
    pub w_scale: f64,
}

impl ModelConfig {
    pub fn new(groups: usize, hidden: usize) -> Self {
        Self {
            groups,
            hidden,
            latent: DEFAULT_LATENT,
            mics_per_side: DEFAULT_MICS_PER_SIDE,
            bins: BINS,
            speakers: SPEAKERS,
            post_filter: true,
            w_scale: 1.0,
        }
    }

    /// Drops the post filter; with `compensate` the spatial filter is scaled
    /// by sqrt(2) to recover the amplification range the post filter gave.
    pub fn without_post_filter(mut self, compensate: bool) -> Self {
        self.post_filter = false;
        self.w_scale = if compensate { std::f64::consts::SQRT_2 } else { 1.0 };
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.groups == 0 || self.hidden == 0 || self.latent == 0 {
            return bad(format!(
                "groups ({}), hidden ({}) and latent ({}) must be positive",
                self.groups, self.hidden, self.latent
            ));
        }
        if self.latent % self.groups != 0 {
            return bad(format!(
                "latent size {} is not divisible by {} groups",
                self.latent, self.groups
            ));
        }
        if self.mics_per_side == 0 {
            return bad("at least one microphone per side is required".into());
        }
        if self.bins != BINS {
            return bad(format!("bins must be {BINS}, got {}", self.bins));
        }
        if self.speakers != SPEAKERS {
            return bad(format!("exactly {SPEAKERS} speakers are supported"));
        }
        if !self.w_scale.is_finite() || self.w_scale <= 0.0 {
            return bad(format!("w_scale {} must be positive", self.w_scale));
        }
        Ok(())
    }

    /// Size `P / G` of each group's slice of the latent vector.
    pub fn group_size(&self) -> usize {
        self.latent / self.groups
    }

    /// Total microphones `2M`.
    pub fn mics(&self) -> usize {
        2 * self.mics_per_side
    }

    /// Input feature length `4FM` (real and imaginary parts of all mics).
    pub fn feature_len(&self) -> usize {
        2 * self.mics() * self.bins
    }

    /// Output length of one `W` head: re/im for every mic and bin.
    pub fn w_head_len(&self) -> usize {
        2 * self.mics() * self.bins
    }

    /// Output length of one `C` head: re/im for both output channels.
    pub fn c_head_len(&self) -> usize {
        2 * 2 * self.bins
    }

    /// Group communication only exists with more than one group.
    pub fn tac_enabled(&self) -> bool {
        self.groups > 1
    }
}

/// The ten (GC)BFSnet configurations of the published complexity table with
/// their reported sizes (parameters) and MACs per second.
pub const REFERENCE_CONFIGS: [(usize, usize, f64, f64); 10] = [
    (1, 256, 1.27e6, 1.27e9),
    (1, 128, 508.7e3, 0.51e9),
    (2, 128, 804.8e3, 1.27e9),
    (4, 128, 788.3e3, 2.14e9),
    (4, 64, 359.9e3, 0.71e9),
    (8, 64, 355.7e3, 1.15e9),
    (8, 32, 248.0e3, 0.46e9),
    (16, 32, 246.9e3, 0.68e9),
    (16, 16, 219.7e3, 0.34e9),
    (32, 16, 219.4e3, 0.46e9),
];
