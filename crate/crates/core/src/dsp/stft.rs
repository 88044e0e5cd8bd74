use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{Real, FRAME_LEN, HOP};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftConfig {
    pub frame_len: usize,
    pub shift: usize,
    pub fft_len: usize,
}

impl StftConfig {
    /// 2 ms frames, 1 ms shift, 32-point FFT.
    pub const FILTERBANK: StftConfig = StftConfig {
        frame_len: FRAME_LEN,
        shift: HOP,
        fft_len: FRAME_LEN,
    };

    pub fn validate(&self) -> Result<()> {
        if self.frame_len < 2 || self.frame_len % 2 != 0 {
            return Err(Error::InvalidConfig(format!(
                "frame length {} must be even and >= 2",
                self.frame_len
            )));
        }
        if self.shift * 2 != self.frame_len {
            return Err(Error::InvalidConfig(format!(
                "shift {} must be half the frame length {}",
                self.shift, self.frame_len
            )));
        }
        if self.fft_len < self.frame_len {
            return Err(Error::InvalidConfig(format!(
                "fft length {} shorter than frame {}",
                self.fft_len, self.frame_len
            )));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.fft_len / 2 + 1
    }

    /// Zeros prepended before the first frame so that frame `t` ends at
    /// input sample `t * shift + shift - 1`.
    pub fn leading_pad(&self) -> usize {
        self.frame_len - self.shift
    }
}

impl Default for StftConfig {
    fn default() -> Self {
        Self::FILTERBANK
    }
}

fn check_window_len(length: usize) -> Result<()> {
    if length < 2 || length % 2 != 0 {
        return Err(Error::InvalidConfig(format!(
            "window length {length} must be even and >= 2"
        )));
    }
    Ok(())
}

/// Periodic Hann window `0.5 - 0.5 cos(2 pi n / N)`.
pub fn make_hann<T: Real>(length: usize) -> Result<Vec<T>> {
    check_window_len(length)?;
    let half = T::from(0.5).unwrap();
    let step = T::TAU() / T::from(length).unwrap();
    Ok((0..length)
        .map(|n| half - half * (step * T::from(n).unwrap()).cos())
        .collect())
}

/// Square root of the periodic Hann window. Its square satisfies COLA at
/// 50% overlap, so using it for both analysis and synthesis reconstructs
/// perfectly.
pub fn make_sqrt_hann<T: Real>(length: usize) -> Result<Vec<T>> {
    Ok(make_hann::<T>(length)?
        .into_iter()
        // cos rounding can leave a tiny negative value at n = 0
        .map(|v| v.max(T::zero()).sqrt())
        .collect())
}

/// Single-channel complex spectrogram, `frames x bins`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram<T> {
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<Complex<T>>,
}

impl<T: Real> Spectrogram<T> {
    pub fn zeros(frames: usize, bins: usize) -> Self {
        Self {
            frames,
            bins,
            data: vec![Complex::new(T::zero(), T::zero()); frames * bins],
        }
    }

    pub fn frame(&self, t: usize) -> &[Complex<T>] {
        &self.data[t * self.bins..(t + 1) * self.bins]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [Complex<T>] {
        &mut self.data[t * self.bins..(t + 1) * self.bins]
    }
}

/// Complex tensor indexed `(mic, frame, bin)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiChannelSpectrogram<T> {
    pub mics: usize,
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<Complex<T>>,
}

impl<T: Real> MultiChannelSpectrogram<T> {
    pub fn from_channels(channels: Vec<Spectrogram<T>>) -> Result<Self> {
        let Some(first) = channels.first() else {
            return Ok(Self {
                mics: 0,
                frames: 0,
                bins: 0,
                data: Vec::new(),
            });
        };
        let (frames, bins) = (first.frames, first.bins);
        for (m, ch) in channels.iter().enumerate() {
            if ch.frames != frames || ch.bins != bins {
                return Err(Error::shape(
                    format!("mic {m} spectrogram"),
                    format!("{frames}x{bins}"),
                    format!("{}x{}", ch.frames, ch.bins),
                ));
            }
        }
        let mics = channels.len();
        let data = channels.into_iter().flat_map(|c| c.data).collect();
        Ok(Self {
            mics,
            frames,
            bins,
            data,
        })
    }

    pub fn get(&self, mic: usize, t: usize, f: usize) -> Complex<T> {
        self.data[(mic * self.frames + t) * self.bins + f]
    }

    /// Gathers one frame across all mics as a `mics x bins` block.
    pub fn frame(&self, t: usize) -> Vec<Complex<T>> {
        let mut out = Vec::with_capacity(self.mics * self.bins);
        for m in 0..self.mics {
            let start = (m * self.frames + t) * self.bins;
            out.extend_from_slice(&self.data[start..start + self.bins]);
        }
        out
    }
}

/// Planned STFT for one configuration. Forward transforms are unnormalized;
/// synthesis applies `1 / fft_len`.
pub struct Stft<T: Real> {
    cfg: StftConfig,
    window: Vec<T>,
    forward: Arc<dyn Fft<T>>,
    inverse: Arc<dyn Fft<T>>,
}

impl<T: Real> Stft<T> {
    pub fn new(cfg: StftConfig) -> Result<Self> {
        cfg.validate()?;
        let window = make_sqrt_hann(cfg.frame_len)?;
        Self::with_window(cfg, window)
    }

    pub fn with_window(cfg: StftConfig, window: Vec<T>) -> Result<Self> {
        cfg.validate()?;
        if window.len() != cfg.frame_len {
            return Err(Error::shape("window", cfg.frame_len, window.len()));
        }
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(cfg.fft_len);
        let inverse = planner.plan_fft_inverse(cfg.fft_len);
        Ok(Self {
            cfg,
            window,
            forward,
            inverse,
        })
    }

    pub fn config(&self) -> StftConfig {
        self.cfg
    }

    pub fn window(&self) -> &[T] {
        &self.window
    }

    /// Windowed FFT of exactly `frame_len` samples into `bins()` outputs.
    pub fn analyze_frame(&self, frame: &[T], out: &mut [Complex<T>], buf: &mut Vec<Complex<T>>) {
        debug_assert_eq!(frame.len(), self.cfg.frame_len);
        debug_assert_eq!(out.len(), self.cfg.bins());
        buf.clear();
        buf.extend(
            frame
                .iter()
                .zip(&self.window)
                .map(|(&x, &w)| Complex::new(x * w, T::zero())),
        );
        buf.resize(self.cfg.fft_len, Complex::new(T::zero(), T::zero()));
        self.forward.process(buf);
        out.copy_from_slice(&buf[..self.cfg.bins()]);
    }

    /// Inverse of one one-sided spectrum, multiplied by the synthesis window.
    /// Writes `frame_len` samples ready for overlap-add.
    pub fn synthesize_frame(&self, bins: &[Complex<T>], out: &mut [T], buf: &mut Vec<Complex<T>>) {
        let n = self.cfg.fft_len;
        debug_assert_eq!(bins.len(), self.cfg.bins());
        debug_assert_eq!(out.len(), self.cfg.frame_len);
        buf.clear();
        buf.extend_from_slice(bins);
        // Hermitian mirror; DC and Nyquist must be real for a real signal.
        buf[0].im = T::zero();
        buf[n / 2].im = T::zero();
        for k in 1..n / 2 {
            buf.push(bins[n / 2 - k].conj());
        }
        self.inverse.process(buf);
        let scale = T::one() / T::from(n).unwrap();
        for ((o, c), &w) in out.iter_mut().zip(buf.iter()).zip(&self.window) {
            *o = c.re * scale * w;
        }
    }

    /// Offline analysis. Frame `t` covers input samples
    /// `[t*shift - pad, t*shift - pad + frame_len)`, zeros before the start;
    /// a signal of `L` samples yields `L / shift` frames.
    pub fn stft(&self, signal: &[T]) -> Spectrogram<T> {
        let cfg = self.cfg;
        let frames = signal.len() / cfg.shift;
        let mut spec = Spectrogram::zeros(frames, cfg.bins());
        let pad = cfg.leading_pad();
        let mut segment = vec![T::zero(); cfg.frame_len];
        let mut buf = Vec::with_capacity(cfg.fft_len);
        for t in 0..frames {
            for (i, s) in segment.iter_mut().enumerate() {
                let idx = (t * cfg.shift + i) as isize - pad as isize;
                *s = if idx >= 0 {
                    signal.get(idx as usize).copied().unwrap_or(T::zero())
                } else {
                    T::zero()
                };
            }
            self.analyze_frame(&segment, spec.frame_mut(t), &mut buf);
        }
        spec
    }

    /// Overlap-add synthesis aligned to the input of [`Stft::stft`]: returns
    /// `frames * shift` samples. The final `shift` samples only receive one
    /// frame's contribution and are not fully reconstructed.
    pub fn istft(&self, spec: &Spectrogram<T>) -> Result<Vec<T>> {
        let cfg = self.cfg;
        if spec.bins != cfg.bins() {
            return Err(Error::shape("spectrogram bins", cfg.bins(), spec.bins));
        }
        let pad = cfg.leading_pad();
        let acc = self.overlap_add(spec)?;
        Ok(acc[pad..pad + spec.frames * cfg.shift].to_vec())
    }

    /// Untrimmed overlap-add: sample 0 is the first sample of frame 0, i.e.
    /// `leading_pad()` samples before the signal start. Returns
    /// `frames * shift + frame_len` samples.
    pub fn overlap_add(&self, spec: &Spectrogram<T>) -> Result<Vec<T>> {
        let cfg = self.cfg;
        if spec.bins != cfg.bins() {
            return Err(Error::shape("spectrogram bins", cfg.bins(), spec.bins));
        }
        let mut acc = vec![T::zero(); spec.frames * cfg.shift + cfg.frame_len];
        let mut frame = vec![T::zero(); cfg.frame_len];
        let mut buf = Vec::with_capacity(cfg.fft_len);
        for t in 0..spec.frames {
            self.synthesize_frame(spec.frame(t), &mut frame, &mut buf);
            for (a, &v) in acc[t * cfg.shift..].iter_mut().zip(&frame) {
                *a = *a + v;
            }
        }
        Ok(acc)
    }
}

/// [`Stft::stft`] with a freshly planned transform.
pub fn stft<T: Real>(signal: &[T], cfg: StftConfig) -> Result<Spectrogram<T>> {
    Ok(Stft::new(cfg)?.stft(signal))
}

/// [`Stft::istft`] with a freshly planned transform.
pub fn istft<T: Real>(spec: &Spectrogram<T>, cfg: StftConfig) -> Result<Vec<T>> {
    Stft::new(cfg)?.istft(spec)
}
