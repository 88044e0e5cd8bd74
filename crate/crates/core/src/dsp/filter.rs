use num_complex::Complex32;

use crate::error::{Error, Result};

pub const SPEAKERS: usize = 2;
pub const OUT_CHANNELS: usize = 2;

/// Per-frame complex filters. `W` is indexed `(speaker, out_channel, mic,
/// bin)` and `C` `(speaker, out_channel, bin)`; `C` is absent when the post
/// filter is disabled. Output channel 0 is left, 1 is right.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterFrame {
    pub mics: usize,
    pub bins: usize,
    pub w: Vec<Complex32>,
    pub c: Option<Vec<Complex32>>,
}

impl FilterFrame {
    pub fn zeros(mics: usize, bins: usize, post_filter: bool) -> Self {
        Self {
            mics,
            bins,
            w: vec![Complex32::new(0.0, 0.0); SPEAKERS * OUT_CHANNELS * mics * bins],
            c: post_filter.then(|| vec![Complex32::new(0.0, 0.0); SPEAKERS * OUT_CHANNELS * bins]),
        }
    }

    pub fn w_index(&self, speaker: usize, ch: usize, mic: usize, bin: usize) -> usize {
        ((speaker * OUT_CHANNELS + ch) * self.mics + mic) * self.bins + bin
    }

    pub fn c_index(&self, speaker: usize, ch: usize, bin: usize) -> usize {
        (speaker * OUT_CHANNELS + ch) * self.bins + bin
    }

    pub fn w(&self, speaker: usize, ch: usize, mic: usize, bin: usize) -> Complex32 {
        self.w[self.w_index(speaker, ch, mic, bin)]
    }

    pub fn c(&self, speaker: usize, ch: usize, bin: usize) -> Option<Complex32> {
        self.c.as_ref().map(|c| c[self.c_index(speaker, ch, bin)])
    }

    /// Filters for one `(speaker, channel)` pair as a `mics x bins` block.
    pub fn w_block(&self, speaker: usize, ch: usize) -> &[Complex32] {
        let start = self.w_index(speaker, ch, 0, 0);
        &self.w[start..start + self.mics * self.bins]
    }

    pub fn scale_w(&mut self, scale: f32) {
        for v in &mut self.w {
            *v *= scale;
        }
    }

    /// Largest `|Re|` or `|Im|` over all entries of `W` and `C`.
    pub fn max_component(&self) -> f32 {
        self.w
            .iter()
            .chain(self.c.iter().flatten())
            .map(|z| z.re.abs().max(z.im.abs()))
            .fold(0.0, f32::max)
    }
}

/// Binaural spectra of both speakers for one frame, indexed
/// `(speaker, out_channel, bin)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BinauralSpectrum {
    pub bins: usize,
    pub data: Vec<Complex32>,
}

impl BinauralSpectrum {
    pub fn channel(&self, speaker: usize, ch: usize) -> &[Complex32] {
        let start = (speaker * OUT_CHANNELS + ch) * self.bins;
        &self.data[start..start + self.bins]
    }
}

/// Complex filter-and-sum: for every speaker and output channel,
/// `S(f) = sum_m Y(m, f) * W(m, f)`.
///
/// `y_frame` is one frame laid out `mics x bins`.
pub fn filter_and_sum(y_frame: &[Complex32], filters: &FilterFrame) -> Result<BinauralSpectrum> {
    let (mics, bins) = (filters.mics, filters.bins);
    if y_frame.len() != mics * bins {
        return Err(Error::shape("mixture frame (mics x bins)", mics * bins, y_frame.len()));
    }
    let mut data = vec![Complex32::new(0.0, 0.0); SPEAKERS * OUT_CHANNELS * bins];
    for (pair, out) in data.chunks_exact_mut(bins).enumerate() {
        let w = &filters.w[pair * mics * bins..(pair + 1) * mics * bins];
        for (y_mic, w_mic) in y_frame.chunks_exact(bins).zip(w.chunks_exact(bins)) {
            for ((o, &y), &w) in out.iter_mut().zip(y_mic).zip(w_mic) {
                *o += y * w;
            }
        }
    }
    Ok(BinauralSpectrum { bins, data })
}

/// Elementwise post filter `S_hat = S_tilde * C`. A frame without `C`
/// (post filter disabled) passes through unchanged.
pub fn apply_post_filter(spectrum: &mut BinauralSpectrum, filters: &FilterFrame) -> Result<()> {
    let Some(c) = &filters.c else {
        return Ok(());
    };
    if c.len() != spectrum.data.len() {
        return Err(Error::shape("post filter", spectrum.data.len(), c.len()));
    }
    for (s, &c) in spectrum.data.iter_mut().zip(c) {
        *s *= c;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_frame(rng: &mut ChaCha8Rng, n: usize) -> Vec<Complex32> {
        (0..n)
            .map(|_| Complex32::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect()
    }

    fn random_filters(rng: &mut ChaCha8Rng, post: bool) -> FilterFrame {
        let mut f = FilterFrame::zeros(4, 17, post);
        f.w = random_frame(rng, f.w.len());
        if let Some(c) = f.c.as_mut() {
            *c = random_frame(rng, c.len());
        }
        f
    }

    #[test]
    fn selector_filter_copies_mic() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y = random_frame(&mut rng, 4 * 17);
        let mut f = FilterFrame::zeros(4, 17, false);
        for bin in 0..17 {
            let i = f.w_index(0, 0, 0, bin);
            f.w[i] = Complex32::new(1.0, 0.0);
        }
        let s = filter_and_sum(&y, &f).unwrap();
        assert_eq!(s.channel(0, 0), &y[..17]);
        assert!(s.channel(1, 1).iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn zero_filter_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y = random_frame(&mut rng, 4 * 17);
        let s = filter_and_sum(&y, &FilterFrame::zeros(4, 17, true)).unwrap();
        assert!(s.data.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn matches_triple_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let y = random_frame(&mut rng, 4 * 17);
            let f = random_filters(&mut rng, false);
            let s = filter_and_sum(&y, &f).unwrap();
            for spk in 0..2 {
                for ch in 0..2 {
                    for bin in 0..17 {
                        let mut acc = Complex64::new(0.0, 0.0);
                        for m in 0..4 {
                            let yv = y[m * 17 + bin];
                            let wv = f.w(spk, ch, m, bin);
                            acc += Complex64::new(yv.re as f64, yv.im as f64)
                                * Complex64::new(wv.re as f64, wv.im as f64);
                        }
                        let got = s.channel(spk, ch)[bin];
                        let err = (Complex64::new(got.re as f64, got.im as f64) - acc).norm();
                        assert!(err <= 1e-6 * acc.norm().max(1.0), "{err}");
                    }
                }
            }
        }
    }

    #[test]
    fn mic_count_mismatch_is_shape_error() {
        let f = FilterFrame::zeros(4, 17, false);
        let y = vec![Complex32::new(0.0, 0.0); 3 * 17];
        assert!(matches!(filter_and_sum(&y, &f), Err(Error::Shape { .. })));
    }

    #[test]
    fn unit_post_filter_is_identity_and_zero_clears() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y = random_frame(&mut rng, 4 * 17);
        let mut f = random_filters(&mut rng, true);
        let s = filter_and_sum(&y, &f).unwrap();

        f.c = Some(vec![Complex32::new(1.0, 0.0); 68]);
        let mut id = s.clone();
        apply_post_filter(&mut id, &f).unwrap();
        assert_eq!(id, s);

        f.c = Some(vec![Complex32::new(0.0, 0.0); 68]);
        let mut zero = s.clone();
        apply_post_filter(&mut zero, &f).unwrap();
        assert!(zero.data.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn linear_in_mixture() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let y1 = random_frame(&mut rng, 68);
        let y2 = random_frame(&mut rng, 68);
        let f = random_filters(&mut rng, false);
        let (a, b) = (0.7f32, -1.3f32);
        let mixed: Vec<_> = y1.iter().zip(&y2).map(|(&p, &q)| p * a + q * b).collect();
        let lhs = filter_and_sum(&mixed, &f).unwrap();
        let s1 = filter_and_sum(&y1, &f).unwrap();
        let s2 = filter_and_sum(&y2, &f).unwrap();
        for i in 0..lhs.data.len() {
            let rhs = s1.data[i] * a + s2.data[i] * b;
            assert!((lhs.data[i] - rhs).norm() < 1e-5);
        }
    }
}
