#![allow(dead_code)]

use gcbfs::dsp::FilterFrame;
use gcbfs::model::{Model, ModelConfig, WeightStore};
use num_complex::Complex32;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FRONT_L: usize = 0;
pub const REAR_L: usize = 1;
pub const FRONT_R: usize = 2;
pub const REAR_R: usize = 3;

pub fn random_model(groups: usize, hidden: usize, seed: u64) -> Model {
    let cfg = ModelConfig::new(groups, hidden);
    Model::build(&cfg, &WeightStore::init(&cfg, seed).unwrap()).unwrap()
}

pub fn random_audio(channels: usize, len: usize, seed: u64) -> Vec<Vec<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..channels)
        .map(|_| (0..len).map(|_| rng.random_range(-0.5..0.5)).collect())
        .collect()
}

/// Constant filters where output `(speaker, ch)` selects mic `pick(speaker,
/// ch, bin)` in every bin (`None` gives silence), with `C = 1`.
pub fn selector_filters(
    cfg: &ModelConfig,
    pick: impl Fn(usize, usize, usize) -> Option<usize>,
) -> FilterFrame {
    let mut f = FilterFrame::zeros(cfg.mics(), cfg.bins, cfg.post_filter);
    for spk in 0..2 {
        for ch in 0..2 {
            for bin in 0..cfg.bins {
                if let Some(mic) = pick(spk, ch, bin) {
                    let i = f.w_index(spk, ch, mic, bin);
                    f.w[i] = Complex32::new(1.0, 0.0);
                }
            }
        }
    }
    if let Some(c) = f.c.as_mut() {
        c.fill(Complex32::new(1.0, 0.0));
    }
    f
}

pub fn selector_model(
    groups: usize,
    hidden: usize,
    pick: impl Fn(usize, usize, usize) -> Option<usize>,
) -> Model {
    let cfg = ModelConfig::new(groups, hidden);
    let mut store = WeightStore::init(&cfg, 11).unwrap();
    store.set_constant_filters(&selector_filters(&cfg, pick)).unwrap();
    Model::build(&cfg, &store).unwrap()
}

/// Both speakers get the front mic of each side.
pub fn front_identity(_spk: usize, ch: usize, _bin: usize) -> Option<usize> {
    Some(if ch == 0 { FRONT_L } else { FRONT_R })
}

pub fn max_rel_dev(a: &[f32], b: &[f32]) -> f32 {
    let scale = b.iter().fold(0.0f32, |m, v| m.max(v.abs())).max(1e-12);
    a.iter()
        .zip(b)
        .fold(0.0f32, |m, (x, y)| m.max((x - y).abs()))
        / scale
}
