//! Synthetic two-talker scenes for end-to-end checks.
//!
//! The receiver is a head at the origin, `x` pointing forward and `y` to the
//! left, with a front and a rear microphone on each side. Sources are point
//! sources in the horizontal plane at azimuth `theta` (counterclockwise from
//! the front, 90 degrees is full left). Impulse responses consist of a
//! fractional-delay direct path with `1/r` amplitude and, when a
//! reverberation time is given, an exponentially decaying noise tail that is
//! independent per microphone.

use std::fmt::Write as _;
use std::str::FromStr;
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rustfft::{Fft, FftPlanner};

use crate::dsp::SAMPLE_RATE;
use crate::error::{Error, Result};

pub const SPEED_OF_SOUND: f64 = 343.0;
pub const MICS: usize = 4;

/// Half-width (in taps) of the windowed-sinc fractional delay.
const SINC_HALF_WIDTH: usize = 16;

/// Microphone layout, channel order `[front-L, rear-L, front-R, rear-R]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MicGeometry {
    pub ear_distance: f64,
    pub front_rear_spacing: f64,
}

impl Default for MicGeometry {
    fn default() -> Self {
        Self {
            ear_distance: 0.18,
            front_rear_spacing: 0.015,
        }
    }
}

impl MicGeometry {
    pub fn positions(&self) -> [[f64; 2]; MICS] {
        let (x, y) = (self.front_rear_spacing / 2.0, self.ear_distance / 2.0);
        [[x, y], [-x, y], [x, -y], [-x, -y]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourcePosition {
    pub azimuth_deg: f64,
    pub distance: f64,
}

impl SourcePosition {
    pub fn new(azimuth_deg: f64, distance: f64) -> Self {
        Self {
            azimuth_deg,
            distance,
        }
    }

    fn xy(&self) -> [f64; 2] {
        let t = self.azimuth_deg.to_radians();
        [self.distance * t.cos(), self.distance * t.sin()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneSpec {
    pub speaker1: SourcePosition,
    pub speaker2: SourcePosition,
    pub noise: SourcePosition,
    /// Reverberation time in seconds; `None` renders an anechoic scene.
    pub t60: Option<f64>,
    pub geometry: MicGeometry,
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        for (what, s) in [("speaker1", self.speaker1), ("speaker2", self.speaker2)] {
            if !(0.75..=2.0).contains(&s.distance) {
                return Err(Error::InvalidConfig(format!(
                    "{what} distance {} outside 0.75..2 m",
                    s.distance
                )));
            }
        }
        if !(self.noise.distance >= 1.0 && self.noise.distance.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "noise distance {} below 1 m",
                self.noise.distance
            )));
        }
        if let Some(t60) = self.t60 {
            if !(0.1..=1.0).contains(&t60) {
                return Err(Error::InvalidConfig(format!("t60 {t60} outside 0.1..1 s")));
            }
        }
        let all = [self.speaker1, self.speaker2, self.noise];
        if all.iter().any(|s| !s.azimuth_deg.is_finite()) {
            return Err(Error::InvalidConfig("non-finite azimuth".into()));
        }
        Ok(())
    }
}

/// Direct-to-reverberant energy ratio used for the late tail: +10 dB at
/// 0.1 s falling linearly to -5 dB at 1 s.
pub fn drr_db(t60: f64) -> f64 {
    10.0 - (t60 - 0.1) / 0.9 * 15.0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectPath {
    /// Propagation delay in (fractional) samples.
    pub delay: f64,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseResponseParts {
    pub direct: [DirectPath; MICS],
    /// Late tail per mic, starting at the direct arrival. Empty when
    /// anechoic.
    pub late: Vec<Vec<f64>>,
}

fn windowed_sinc(delay: f64, gain: f64) -> Vec<f64> {
    let len = delay.ceil() as usize + SINC_HALF_WIDTH + 1;
    let hw = SINC_HALF_WIDTH as f64;
    (0..len)
        .map(|n| {
            let x = n as f64 - delay;
            if x.abs() > hw {
                return 0.0;
            }
            let sinc = if x == 0.0 {
                1.0
            } else {
                (std::f64::consts::PI * x).sin() / (std::f64::consts::PI * x)
            };
            let window = 0.5 + 0.5 * (std::f64::consts::PI * x / (hw + 1.0)).cos();
            gain * sinc * window
        })
        .collect()
}

impl ImpulseResponseParts {
    /// Direct-path impulse response of one mic.
    pub fn direct_ir(&self, mic: usize) -> Vec<f64> {
        let d = self.direct[mic];
        windowed_sinc(d.delay, d.gain)
    }

    /// Late-only impulse response of one mic (tail placed at the direct
    /// arrival). Empty when anechoic.
    pub fn late_ir(&self, mic: usize) -> Vec<f64> {
        let Some(tail) = self.late.get(mic) else {
            return Vec::new();
        };
        let offset = self.direct[mic].delay.round() as usize + 1;
        let mut h = vec![0.0; offset];
        h.extend_from_slice(tail);
        h
    }

    /// Direct plus late.
    pub fn full_ir(&self, mic: usize) -> Vec<f64> {
        let mut h = self.direct_ir(mic);
        let late = self.late_ir(mic);
        if late.len() > h.len() {
            h.resize(late.len(), 0.0);
        }
        for (a, b) in h.iter_mut().zip(&late) {
            *a += b;
        }
        h
    }
}

/// Impulse responses from one source position to every mic.
pub fn synth_ir(
    source: SourcePosition,
    geometry: &MicGeometry,
    t60: Option<f64>,
    seed: u64,
) -> Result<ImpulseResponseParts> {
    if !(source.distance > 0.0) {
        return Err(Error::InvalidConfig(format!("source distance {}", source.distance)));
    }
    let fs = f64::from(SAMPLE_RATE);
    let s = source.xy();
    let direct = geometry.positions().map(|m| {
        let d = ((s[0] - m[0]).powi(2) + (s[1] - m[1]).powi(2)).sqrt();
        DirectPath {
            delay: d / SPEED_OF_SOUND * fs,
            gain: 1.0 / d,
        }
    });
    let mut late = Vec::new();
    if let Some(t60) = t60 {
        if !(t60 > 0.0) {
            return Err(Error::InvalidConfig(format!("t60 {t60}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = (t60 * fs).ceil() as usize;
        for path in &direct {
            let direct_energy: f64 = windowed_sinc(path.delay, path.gain).iter().map(|v| v * v).sum();
            let mut tail: Vec<f64> = (0..len)
                .map(|n| {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    g * (-6.9 * n as f64 / fs / t60).exp()
                })
                .collect();
            let energy: f64 = tail.iter().map(|v| v * v).sum();
            let want = direct_energy * 10f64.powf(-drr_db(t60) / 10.0);
            let k = (want / energy).sqrt();
            tail.iter_mut().for_each(|v| *v *= k);
            late.push(tail);
        }
    }
    Ok(ImpulseResponseParts { direct, late })
}

/// Linear convolution truncated to `out_len` samples.
pub fn fft_convolve(x: &[f64], h: &[f64], out_len: usize) -> Vec<f64> {
    if x.is_empty() || h.is_empty() {
        return vec![0.0; out_len];
    }
    let n = (x.len() + h.len() - 1).next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd: Arc<dyn Fft<f64>> = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let pad = |v: &[f64]| {
        let mut b: Vec<Complex64> = v.iter().map(|&r| Complex64::new(r, 0.0)).collect();
        b.resize(n, Complex64::new(0.0, 0.0));
        b
    };
    let mut a = pad(x);
    let mut b = pad(h);
    fwd.process(&mut a);
    fwd.process(&mut b);
    a.iter_mut().zip(&b).for_each(|(p, q)| *p *= q);
    inv.process(&mut a);
    let scale = 1.0 / n as f64;
    let mut out: Vec<f64> = a.iter().take(out_len).map(|c| c.re * scale).collect();
    out.resize(out_len, 0.0);
    out
}

/// Unscaled scene components, all at the source signal length.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedScene {
    /// Reverberant images of each talker at the four mics.
    pub speech1: Vec<Vec<f64>>,
    pub speech2: Vec<Vec<f64>>,
    /// Noise image at the four mics (all zero without a noise signal).
    pub noise: Vec<Vec<f64>>,
    /// Direct-path images at the front mics `[left, right]`.
    pub target1: Vec<Vec<f64>>,
    pub target2: Vec<Vec<f64>>,
}

impl RenderedScene {
    pub fn len(&self) -> usize {
        self.speech1[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mixture(&self) -> Vec<Vec<f64>> {
        (0..MICS)
            .map(|m| {
                (0..self.len())
                    .map(|n| self.speech1[m][n] + self.speech2[m][n] + self.noise[m][n])
                    .collect()
            })
            .collect()
    }
}

const FRONT: [usize; 2] = [0, 2];

/// Renders both talkers through their full responses, the noise through the
/// late part only (a diffuse field), and the front-mic direct targets. In
/// an anechoic scene the noise takes its direct path.
pub fn render_scene(
    spec: &SceneSpec,
    speech1: &[f64],
    speech2: &[f64],
    noise: Option<&[f64]>,
) -> Result<RenderedScene> {
    spec.validate()?;
    let len = speech1.len();
    if speech2.len() != len {
        return Err(Error::shape("speech2 length", len, speech2.len()));
    }
    if let Some(n) = noise {
        if n.len() != len {
            return Err(Error::shape("noise length", len, n.len()));
        }
    }
    let seeds = {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        [rng.random::<u64>(), rng.random::<u64>(), rng.random::<u64>()]
    };
    let ir1 = synth_ir(spec.speaker1, &spec.geometry, spec.t60, seeds[0])?;
    let ir2 = synth_ir(spec.speaker2, &spec.geometry, spec.t60, seeds[1])?;
    let irn = synth_ir(spec.noise, &spec.geometry, spec.t60, seeds[2])?;
    let image = |x: &[f64], ir: &ImpulseResponseParts| -> Vec<Vec<f64>> {
        (0..MICS).map(|m| fft_convolve(x, &ir.full_ir(m), len)).collect()
    };
    let direct = |x: &[f64], ir: &ImpulseResponseParts| -> Vec<Vec<f64>> {
        FRONT.iter().map(|&m| fft_convolve(x, &ir.direct_ir(m), len)).collect()
    };
    let noise_img = match noise {
        Some(n) => (0..MICS)
            .map(|m| {
                let h = if spec.t60.is_some() { irn.late_ir(m) } else { irn.direct_ir(m) };
                fft_convolve(n, &h, len)
            })
            .collect(),
        None => vec![vec![0.0; len]; MICS],
    };
    Ok(RenderedScene {
        speech1: image(speech1, &ir1),
        speech2: image(speech2, &ir2),
        noise: noise_img,
        target1: direct(speech1, &ir1),
        target2: direct(speech2, &ir2),
    })
}

fn power(x: &[f64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
    }
}

/// Better-ear SNR in dB of `a` against `b`: the larger of the broadband
/// front-mic SNRs of the two sides.
pub fn better_ear_snr_db(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    FRONT
        .iter()
        .map(|&m| 10.0 * (power(&a[m]) / power(&b[m])).log10())
        .fold(f64::NEG_INFINITY, f64::max)
}

/// RMS level over all channels in dB full scale.
pub fn level_dbfs(x: &[Vec<f64>]) -> f64 {
    let n: usize = x.iter().map(Vec::len).sum();
    let e: f64 = x.iter().flatten().map(|v| v * v).sum();
    10.0 * (e / n as f64).log10()
}

/// The three random mixing values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixingDraws {
    /// Level of talker 2 relative to talker 1 (better-ear, dB).
    pub speaker2_gain_db: f64,
    /// Talker-1-to-noise better-ear SNR in dB.
    pub noise_snr_db: f64,
    /// Mixture RMS level in dB FS.
    pub level_dbfs: f64,
}

impl MixingDraws {
    /// `N(0, 4.1^2)`, `N(6.2, 4.4^2)` and `N(-26, 5^2)`.
    pub fn sample(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |mean: f64, sd: f64| Normal::new(mean, sd).expect("positive sd").sample(&mut rng);
        Self {
            speaker2_gain_db: draw(0.0, 4.1),
            noise_snr_db: draw(6.2, 4.4),
            level_dbfs: draw(-26.0, 5.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaledScene {
    pub mixture: Vec<Vec<f64>>,
    pub target1: Vec<Vec<f64>>,
    pub target2: Vec<Vec<f64>>,
    /// Scaled component images at the four mics; they sum to the mixture.
    pub speech1: Vec<Vec<f64>>,
    pub speech2: Vec<Vec<f64>>,
    pub noise: Vec<Vec<f64>>,
    pub draws: MixingDraws,
    /// Linear factors applied to talker 2, the noise and the final level.
    pub speaker2_gain: f64,
    pub noise_gain: f64,
    pub level_gain: f64,
}

/// [`scale_sources_with`] using draws from `seed`.
pub fn scale_sources(scene: &RenderedScene, seed: u64) -> Result<ScaledScene> {
    scale_sources_with(scene, MixingDraws::sample(seed))
}

/// Sets talker 2 to `speaker2_gain_db` and the noise to `noise_snr_db`
/// below talker 1 (better-ear, reverberant images), then scales everything,
/// targets included, so the mixture sits at `level_dbfs`.
pub fn scale_sources_with(scene: &RenderedScene, draws: MixingDraws) -> Result<ScaledScene> {
    let p1 = FRONT.iter().map(|&m| power(&scene.speech1[m])).fold(0.0, f64::max);
    let p2 = FRONT.iter().map(|&m| power(&scene.speech2[m])).fold(0.0, f64::max);
    if p1 == 0.0 || p2 == 0.0 {
        return Err(Error::InvalidConfig("silent talker cannot be level-normalized".into()));
    }
    let db = |x: f64| 10f64.powf(x / 20.0);
    let g2 = db(-better_ear_snr_db(&scene.speech2, &scene.speech1) + draws.speaker2_gain_db);
    let has_noise = scene.noise.iter().any(|c| c.iter().any(|&v| v != 0.0));
    let gn = if has_noise {
        db(better_ear_snr_db(&scene.speech1, &scene.noise) - draws.noise_snr_db)
    } else {
        0.0
    };
    let len = scene.len();
    let unscaled: Vec<Vec<f64>> = (0..MICS)
        .map(|m| {
            (0..len)
                .map(|n| scene.speech1[m][n] + g2 * scene.speech2[m][n] + gn * scene.noise[m][n])
                .collect()
        })
        .collect();
    let k = db(draws.level_dbfs - level_dbfs(&unscaled));
    let scale = |x: &[Vec<f64>], g: f64| -> Vec<Vec<f64>> {
        x.iter().map(|c| c.iter().map(|v| v * g).collect()).collect()
    };
    Ok(ScaledScene {
        mixture: scale(&unscaled, k),
        target1: scale(&scene.target1, k),
        target2: scale(&scene.target2, g2 * k),
        speech1: scale(&scene.speech1, k),
        speech2: scale(&scene.speech2, g2 * k),
        noise: scale(&scene.noise, gn * k),
        draws,
        speaker2_gain: g2,
        noise_gain: gn,
        level_gain: k,
    })
}

/// Human-readable `key=value` record of a generated scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneManifest {
    pub spec: SceneSpec,
    pub draws: MixingDraws,
    pub samples: usize,
}

impl SceneManifest {
    pub fn to_text(&self) -> String {
        let s = &self.spec;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k}={v}");
        };
        kv("seed", s.seed.to_string());
        kv("sample_rate", SAMPLE_RATE.to_string());
        kv("samples", self.samples.to_string());
        kv("t60", s.t60.map_or("none".into(), |t| t.to_string()));
        for (name, p) in [("speaker1", s.speaker1), ("speaker2", s.speaker2), ("noise", s.noise)] {
            kv(&format!("{name}.azimuth_deg"), p.azimuth_deg.to_string());
            kv(&format!("{name}.distance_m"), p.distance.to_string());
        }
        kv("geometry.ear_distance_m", s.geometry.ear_distance.to_string());
        kv("geometry.front_rear_spacing_m", s.geometry.front_rear_spacing.to_string());
        kv("speaker2_gain_db", self.draws.speaker2_gain_db.to_string());
        kv("noise_snr_db", self.draws.noise_snr_db.to_string());
        kv("level_dbfs", self.draws.level_dbfs.to_string());
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut map = std::collections::HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Malformed(format!("manifest line {}: missing '='", i + 1)))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        fn get<T: FromStr>(map: &std::collections::HashMap<String, String>, k: &str) -> Result<T> {
            map.get(k)
                .ok_or_else(|| Error::Malformed(format!("manifest key {k} missing")))?
                .parse()
                .map_err(|_| Error::Malformed(format!("manifest key {k} unparsable")))
        }
        let pos = |name: &str| -> Result<SourcePosition> {
            Ok(SourcePosition::new(
                get(&map, &format!("{name}.azimuth_deg"))?,
                get(&map, &format!("{name}.distance_m"))?,
            ))
        };
        let t60 = match map.get("t60").map(String::as_str) {
            Some("none") => None,
            _ => Some(get(&map, "t60")?),
        };
        Ok(Self {
            spec: SceneSpec {
                speaker1: pos("speaker1")?,
                speaker2: pos("speaker2")?,
                noise: pos("noise")?,
                t60,
                geometry: MicGeometry {
                    ear_distance: get(&map, "geometry.ear_distance_m")?,
                    front_rear_spacing: get(&map, "geometry.front_rear_spacing_m")?,
                },
                seed: get(&map, "seed")?,
            },
            draws: MixingDraws {
                speaker2_gain_db: get(&map, "speaker2_gain_db")?,
                noise_snr_db: get(&map, "noise_snr_db")?,
                level_dbfs: get(&map, "level_dbfs")?,
            },
            samples: get(&map, "samples")?,
        })
    }
}
