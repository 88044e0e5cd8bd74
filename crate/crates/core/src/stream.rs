//! Frame-by-frame separation pipeline.
//!
//! Input is four channels ordered `[front-L, rear-L, front-R, rear-R]`.
//! Every hop of 16 samples completes one analysis frame, which runs through
//! the network, the filter-and-sum and the post filter, and is overlap-added
//! into the two binaural outputs. The output is the reconstruction delayed
//! by [`LATENCY`] samples, so output sample `n` depends on input samples
//! `< n` only. The reconstruction includes the half frame before the first
//! input sample, which an identity filter maps to (numerically) zero.

use num_complex::Complex32;

use crate::dsp::{
    apply_post_filter, filter_and_sum, MultiChannelSpectrogram, Spectrogram, Stft, StftConfig,
    FRAME_LEN, HOP, OUT_CHANNELS, SPEAKERS,
};
use crate::error::{Error, Result};
use crate::model::{Model, ModelState};

/// Algorithmic latency in samples (one frame, 2 ms).
pub const LATENCY: usize = FRAME_LEN;

/// Number of input channels.
pub const INPUT_CHANNELS: usize = 4;

/// Separated binaural signals, indexed `[speaker][channel]` with channel 0
/// the left ear.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Separated {
    pub speakers: [[Vec<f32>; OUT_CHANNELS]; SPEAKERS],
}

impl Separated {
    fn with_len(len: usize) -> Self {
        let ch = || [vec![0.0; len], vec![0.0; len]];
        Self {
            speakers: [ch(), ch()],
        }
    }

    pub fn len(&self) -> usize {
        self.speakers[0][0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel(&self, speaker: usize, ch: usize) -> &[f32] {
        &self.speakers[speaker][ch]
    }

    pub fn append(&mut self, other: &Separated) {
        for (a, b) in self.speakers.iter_mut().flatten().zip(other.speakers.iter().flatten()) {
            a.extend_from_slice(b);
        }
    }

    /// Largest absolute sample difference.
    pub fn max_abs_diff(&self, other: &Separated) -> f32 {
        self.speakers
            .iter()
            .flatten()
            .zip(other.speakers.iter().flatten())
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f32::max)
    }

    /// Largest absolute sample value.
    pub fn peak(&self) -> f32 {
        self.speakers
            .iter()
            .flatten()
            .flatten()
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Causal state of one stream.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamState {
    /// Last hop of every input channel (first half of the next frame).
    input_tail: [[f32; HOP]; INPUT_CHANNELS],
    /// Second half of the last synthesized frame per output channel.
    ola_tail: [[f32; HOP]; SPEAKERS * OUT_CHANNELS],
    /// Completed hop waiting one frame before emission.
    pending: [[f32; HOP]; SPEAKERS * OUT_CHANNELS],
    pub model: ModelState,
    pub frames: u64,
}

/// A stream bound to a shared model.
pub struct Stream<'m> {
    model: &'m Model,
    stft: Stft<f32>,
    state: StreamState,
    frame: Vec<f32>,
    spectra: Vec<Complex32>,
    synth: Vec<f32>,
    buf: Vec<Complex32>,
}

/// A fresh zero-initialized stream.
pub fn create_stream(model: &Model) -> Stream<'_> {
    Stream::new(model)
}

fn check_inputs<C: AsRef<[f32]>>(input: &[C]) -> Result<usize> {
    if input.len() != INPUT_CHANNELS {
        return Err(Error::shape("input channels", INPUT_CHANNELS, input.len()));
    }
    let len = input[0].as_ref().len();
    if let Some(c) = input.iter().find(|c| c.as_ref().len() != len) {
        return Err(Error::shape("input channel length", len, c.as_ref().len()));
    }
    Ok(len)
}

impl<'m> Stream<'m> {
    pub fn new(model: &'m Model) -> Self {
        let bins = model.config().bins;
        Self {
            model,
            stft: Stft::new(StftConfig::FILTERBANK).expect("filterbank config is valid"),
            state: StreamState {
                input_tail: [[0.0; HOP]; INPUT_CHANNELS],
                ola_tail: [[0.0; HOP]; SPEAKERS * OUT_CHANNELS],
                pending: [[0.0; HOP]; SPEAKERS * OUT_CHANNELS],
                model: model.new_state(),
                frames: 0,
            },
            frame: vec![0.0; FRAME_LEN],
            spectra: vec![Complex32::new(0.0, 0.0); INPUT_CHANNELS * bins],
            synth: vec![0.0; FRAME_LEN],
            buf: Vec::new(),
        }
    }

    pub fn state(&self) -> &StreamState {
        &self.state
    }

    pub fn frames_processed(&self) -> u64 {
        self.state.frames
    }

    /// Processes `K` samples per channel, `K` a multiple of the hop, and
    /// returns exactly `K` samples per output channel.
    pub fn process_block<C: AsRef<[f32]>>(&mut self, input: &[C]) -> Result<Separated> {
        let len = check_inputs(input)?;
        if len % HOP != 0 {
            return Err(Error::InvalidConfig(format!(
                "block length {len} is not a multiple of the hop {HOP}"
            )));
        }
        let mut out = Separated::with_len(len);
        for start in (0..len).step_by(HOP) {
            let hop: [&[f32]; INPUT_CHANNELS] =
                std::array::from_fn(|m| &input[m].as_ref()[start..start + HOP]);
            self.process_hop(hop, &mut out, start)?;
        }
        Ok(out)
    }

    fn process_hop(&mut self, hop: [&[f32]; INPUT_CHANNELS], out: &mut Separated, at: usize) -> Result<()> {
        let bins = self.model.config().bins;
        let st = &mut self.state;
        for (m, samples) in hop.iter().enumerate() {
            self.frame[..HOP].copy_from_slice(&st.input_tail[m]);
            self.frame[HOP..].copy_from_slice(samples);
            st.input_tail[m].copy_from_slice(samples);
            self.stft.analyze_frame(
                &self.frame,
                &mut self.spectra[m * bins..(m + 1) * bins],
                &mut self.buf,
            );
        }
        let filters = self.model.forward_frame(&mut st.model, &self.spectra)?;
        let mut spectrum = filter_and_sum(&self.spectra, &filters)?;
        apply_post_filter(&mut spectrum, &filters)?;
        for (k, dst) in out.speakers.iter_mut().flatten().enumerate() {
            let (spk, ch) = (k / OUT_CHANNELS, k % OUT_CHANNELS);
            self.stft
                .synthesize_frame(spectrum.channel(spk, ch), &mut self.synth, &mut self.buf);
            dst[at..at + HOP].copy_from_slice(&st.pending[k]);
            for i in 0..HOP {
                st.pending[k][i] = st.ola_tail[k][i] + self.synth[i];
            }
            st.ola_tail[k].copy_from_slice(&self.synth[HOP..]);
        }
        st.frames += 1;
        Ok(())
    }
}

/// Whole-utterance reference path: batch analysis, the sequence forward pass
/// of the network and batch synthesis, aligned like the streaming output.
/// Inputs of any length are accepted; the output has the input length.
pub fn offline_process<C: AsRef<[f32]>>(model: &Model, input: &[C]) -> Result<Separated> {
    let len = check_inputs(input)?;
    let padded = len.div_ceil(HOP) * HOP;
    let stft = Stft::<f32>::new(StftConfig::FILTERBANK)?;
    let specs = input
        .iter()
        .map(|c| {
            let mut x = c.as_ref().to_vec();
            x.resize(padded, 0.0);
            stft.stft(&x)
        })
        .collect();
    let spec = MultiChannelSpectrogram::from_channels(specs)?;
    let filters = model.forward_sequence(&spec)?;

    let frames = spec.frames;
    let bins = model.config().bins;
    let mut outs: Vec<Spectrogram<f32>> = (0..SPEAKERS * OUT_CHANNELS)
        .map(|_| Spectrogram::zeros(frames, bins))
        .collect();
    for (t, f) in filters.iter().enumerate() {
        let mut s = filter_and_sum(&spec.frame(t), f)?;
        apply_post_filter(&mut s, f)?;
        for (k, o) in outs.iter_mut().enumerate() {
            o.frame_mut(t)
                .copy_from_slice(s.channel(k / OUT_CHANNELS, k % OUT_CHANNELS));
        }
    }
    let mut result = Separated::with_len(len);
    for (dst, o) in result.speakers.iter_mut().flatten().zip(&outs) {
        // raw[j] is the reconstruction at time j - HOP
        let raw = stft.overlap_add(o)?;
        for n in HOP..len {
            dst[n] = raw[n + HOP - LATENCY];
        }
    }
    Ok(result)
}
