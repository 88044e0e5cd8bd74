//! Training objective and evaluation metrics, in 64-bit.
//!
//! The compressed spectral MSE is computed on its own STFT (Hann, 20 ms
//! window, 10 ms shift). Frame `t` covers samples `[t*shift, t*shift + N)`;
//! the last frame is zero-padded so every sample is covered. The loss is a
//! sum over one-sided bins, frames and channels.

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

use crate::dsp::make_hann;
use crate::error::{Error, Result};

/// Loss-domain STFT geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossStftConfig {
    pub frame_len: usize,
    pub shift: usize,
    pub fft_len: usize,
}

impl Default for LossStftConfig {
    fn default() -> Self {
        Self {
            frame_len: 320,
            shift: 160,
            fft_len: 320,
        }
    }
}

impl LossStftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frame_len < 2 || self.frame_len % 2 != 0 || self.shift == 0 || self.fft_len < self.frame_len {
            return Err(Error::InvalidConfig(format!("bad loss STFT {self:?}")));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.fft_len / 2 + 1
    }

    /// Frames needed to cover `len` samples.
    pub fn frames(&self, len: usize) -> usize {
        if len == 0 {
            0
        } else if len <= self.frame_len {
            1
        } else {
            1 + (len - self.frame_len).div_ceil(self.shift)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParams {
    /// Compression exponent.
    pub c: f64,
    /// Weight of the complex term.
    pub alpha: f64,
    /// Magnitude floor.
    pub eps: f64,
}

impl Default for LossParams {
    fn default() -> Self {
        Self {
            c: 0.3,
            alpha: 0.3,
            eps: 1e-12,
        }
    }
}

impl LossParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c <= 1.0) || !(0.0..=1.0).contains(&self.alpha) || !(self.eps > 0.0) {
            return Err(Error::InvalidConfig(format!("bad loss parameters {self:?}")));
        }
        Ok(())
    }
}

/// `|X|^c * X / |X|`, with the magnitude floored at `eps` so that zero maps
/// to zero.
pub fn compress(x: Complex64, c: f64, eps: f64) -> Complex64 {
    x * x.norm().max(eps).powf(c - 1.0)
}

struct LossStft {
    cfg: LossStftConfig,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl LossStft {
    fn new(cfg: LossStftConfig) -> Result<Self> {
        cfg.validate()?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            window: make_hann(cfg.frame_len)?,
            forward: planner.plan_fft_forward(cfg.fft_len),
            inverse: planner.plan_fft_inverse(cfg.fft_len),
            cfg,
        })
    }

    /// One-sided spectra, `frames x bins`.
    fn analyze(&self, x: &[f64]) -> Vec<Vec<Complex64>> {
        let cfg = self.cfg;
        let mut buf = vec![Complex64::new(0.0, 0.0); cfg.fft_len];
        (0..cfg.frames(x.len()))
            .map(|t| {
                buf.fill(Complex64::new(0.0, 0.0));
                let start = t * cfg.shift;
                for (i, w) in self.window.iter().enumerate() {
                    if let Some(&v) = x.get(start + i) {
                        buf[i] = Complex64::new(v * w, 0.0);
                    }
                }
                self.forward.process(&mut buf);
                buf[..cfg.bins()].to_vec()
            })
            .collect()
    }

    /// Adjoint of [`LossStft::analyze`] for a real-valued loss of the
    /// one-sided spectra: `dL/dx_n = w_n * sum_f Re(G_f e^{i 2 pi f n / N})`,
    /// accumulated over frames.
    fn adjoint(&self, grads: &[Vec<Complex64>], len: usize) -> Vec<f64> {
        let cfg = self.cfg;
        let mut out = vec![0.0; len];
        let mut buf = vec![Complex64::new(0.0, 0.0); cfg.fft_len];
        for (t, g) in grads.iter().enumerate() {
            buf.fill(Complex64::new(0.0, 0.0));
            buf[..g.len()].copy_from_slice(g);
            self.inverse.process(&mut buf);
            let start = t * cfg.shift;
            for (i, w) in self.window.iter().enumerate() {
                if let Some(o) = out.get_mut(start + i) {
                    *o += w * buf[i].re;
                }
            }
        }
        out
    }
}

fn check_pair<E: AsRef<[f64]>, T: AsRef<[f64]>>(est: &[E], tgt: &[T]) -> Result<()> {
    if est.len() != tgt.len() {
        return Err(Error::shape("loss channels", tgt.len(), est.len()));
    }
    for (e, t) in est.iter().zip(tgt) {
        if e.as_ref().len() != t.as_ref().len() {
            return Err(Error::shape("loss signal length", t.as_ref().len(), e.as_ref().len()));
        }
    }
    Ok(())
}

/// Per-bin loss value and its gradient `dL/dRe + i dL/dIm` with respect to
/// the estimate.
fn bin_loss(z: Complex64, target: Complex64, p: &LossParams) -> (f64, Complex64) {
    let m = z.norm();
    let mg = m.max(p.eps);
    let scale = mg.powf(p.c - 1.0);
    let q = z * scale;
    let tq = compress(target, p.c, p.eps);
    let e = q - tq;
    let dmag = m.powf(p.c) - target.norm().powf(p.c);
    let loss = (1.0 - p.alpha) * dmag * dmag + p.alpha * e.norm_sqr();

    let grad = if m < p.eps {
        // compression is linear below the floor
        2.0 * p.alpha * scale * e
    } else {
        let u = z / m;
        let g_mag = 2.0 * dmag * p.c * m.powf(p.c - 1.0) * u;
        let g_cplx = 2.0 * scale * (e + (p.c - 1.0) * u * (u.conj() * e).re);
        (1.0 - p.alpha) * g_mag + p.alpha * g_cplx
    };
    (loss, grad)
}

fn cmse_impl<E: AsRef<[f64]>, T: AsRef<[f64]>>(
    est: &[E],
    tgt: &[T],
    p: &LossParams,
    cfg: LossStftConfig,
    want_grad: bool,
) -> Result<(f64, Vec<Vec<f64>>)> {
    p.validate()?;
    check_pair(est, tgt)?;
    let stft = LossStft::new(cfg)?;
    let mut total = 0.0;
    let mut grads = Vec::new();
    for (e, t) in est.iter().zip(tgt) {
        let se = stft.analyze(e.as_ref());
        let st = stft.analyze(t.as_ref());
        let mut g = Vec::with_capacity(se.len());
        for (fe, ft) in se.iter().zip(&st) {
            let mut row = Vec::with_capacity(fe.len());
            for (&z, &x) in fe.iter().zip(ft) {
                let (l, d) = bin_loss(z, x, p);
                total += l;
                row.push(d);
            }
            g.push(row);
        }
        if want_grad {
            grads.push(stft.adjoint(&g, e.as_ref().len()));
        }
    }
    Ok((total, grads))
}

/// Compressed spectral MSE between multichannel estimate and target:
/// `(1-a) sum (|X^|^c - |X|^c)^2 + a sum |X^^c - X^c|^2`.
pub fn cmse<E: AsRef<[f64]>, T: AsRef<[f64]>>(
    est: &[E],
    tgt: &[T],
    p: &LossParams,
    cfg: LossStftConfig,
) -> Result<f64> {
    Ok(cmse_impl(est, tgt, p, cfg, false)?.0)
}

/// Gradient of [`cmse`] with respect to every estimate sample.
pub fn cmse_grad<E: AsRef<[f64]>, T: AsRef<[f64]>>(
    est: &[E],
    tgt: &[T],
    p: &LossParams,
    cfg: LossStftConfig,
) -> Result<Vec<Vec<f64>>> {
    Ok(cmse_impl(est, tgt, p, cfg, true)?.1)
}

/// Speaker assignment: `perm[i]` is the target matched to estimate `i`.
pub type Permutation = [usize; 2];

/// Utterance-level permutation invariant cMSE over two speakers. Each
/// speaker is a stereo pair whose left and right channels move together.
pub fn upit_assign<E: AsRef<[f64]>, T: AsRef<[f64]>>(
    estimates: &[Vec<E>],
    targets: &[Vec<T>],
    p: &LossParams,
    cfg: LossStftConfig,
) -> Result<(f64, Permutation)> {
    if estimates.len() != 2 || targets.len() != 2 {
        return Err(Error::shape("uPIT speakers", 2, estimates.len().max(targets.len())));
    }
    let mut best: Option<(f64, Permutation)> = None;
    for perm in [[0, 1], [1, 0]] {
        let loss = cmse(&estimates[0], &targets[perm[0]], p, cfg)?
            + cmse(&estimates[1], &targets[perm[1]], p, cfg)?;
        if best.is_none_or(|(b, _)| loss < b) {
            best = Some((loss, perm));
        }
    }
    Ok(best.expect("two permutations evaluated"))
}

/// Cap for a perfect reconstruction.
pub const SI_SDR_MAX_DB: f64 = 100.0;

/// Scale-invariant SDR in dB, projection form without mean removal,
/// clamped to `[-100, 100]`.
pub fn si_sdr(est: &[f64], reference: &[f64]) -> Result<f64> {
    if est.len() != reference.len() || est.is_empty() {
        return Err(Error::shape("si-sdr length", reference.len(), est.len()));
    }
    let rr: f64 = reference.iter().map(|r| r * r).sum();
    if rr == 0.0 {
        return Err(Error::ZeroReference);
    }
    let a = est.iter().zip(reference).map(|(e, r)| e * r).sum::<f64>() / rr;
    let (mut num, mut den) = (0.0, 0.0);
    for (e, r) in est.iter().zip(reference) {
        let s = a * r;
        num += s * s;
        den += (e - s) * (e - s);
    }
    let db = 10.0 * (num / den).log10();
    Ok(if db.is_nan() { -SI_SDR_MAX_DB } else { db.clamp(-SI_SDR_MAX_DB, SI_SDR_MAX_DB) })
}

/// Mean SI-SDR over the channels of a binaural pair.
pub fn si_sdr_binaural<E: AsRef<[f64]>, R: AsRef<[f64]>>(est: &[E], reference: &[R]) -> Result<f64> {
    check_pair(est, reference)?;
    if est.is_empty() {
        return Err(Error::shape("si-sdr channels", 2, 0));
    }
    let mut sum = 0.0;
    for (e, r) in est.iter().zip(reference) {
        sum += si_sdr(e.as_ref(), r.as_ref())?;
    }
    Ok(sum / est.len() as f64)
}

/// Widens 32-bit samples for the metrics.
pub fn to_f64(x: &[f32]) -> Vec<f64> {
    x.iter().map(|&v| f64::from(v)).collect()
}
