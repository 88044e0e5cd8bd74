//! Parameter and multiply-accumulate accounting.
//!
//! MAC counting rule: a fully connected layer costs `in * out` per
//! evaluation, a depthwise convolution `kernel * channels`, a pointwise one
//! `channels^2` and a GRU step `6 H^2` (three gates over input and state).
//! Shared group modules run `G` times per frame; in TAC the per-group layers
//! FC1 and FC3 run `G` times and FC2 once. Biases and activations are free.

use std::fmt::Write;

use crate::dsp::FRAME_RATE;
use crate::error::Result;
use crate::model::{tensor_layout, ModelConfig, Submodule, REFERENCE_CONFIGS};

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexityReport {
    pub config: ModelConfig,
    /// `(tensor name, scalar count)` in canonical order.
    pub tensors: Vec<(String, usize)>,
    /// Parameter subtotal per submodule, in [`Submodule::ALL`] order.
    pub submodules: Vec<(Submodule, usize)>,
    pub total_params: usize,
    pub macs_per_frame: u64,
    pub macs_per_second: u64,
}

impl ComplexityReport {
    pub fn submodule(&self, which: Submodule) -> usize {
        self.submodules
            .iter()
            .find(|(s, _)| *s == which)
            .map_or(0, |(_, n)| *n)
    }

    pub fn filter_head_params(&self) -> usize {
        self.submodule(Submodule::FilterHeads)
    }

    pub fn non_filter_params(&self) -> usize {
        self.total_params - self.filter_head_params()
    }

    /// Line-oriented `key=value` rendering.
    pub fn to_key_values(&self) -> String {
        let c = &self.config;
        let mut s = String::new();
        let _ = writeln!(s, "groups={}", c.groups);
        let _ = writeln!(s, "hidden={}", c.hidden);
        let _ = writeln!(s, "latent={}", c.latent);
        let _ = writeln!(s, "post_filter={}", c.post_filter);
        for (sub, n) in &self.submodules {
            let _ = writeln!(s, "params.{}={}", sub.name(), n);
        }
        let _ = writeln!(s, "params.total={}", self.total_params);
        let _ = writeln!(s, "macs_per_frame={}", self.macs_per_frame);
        let _ = writeln!(s, "macs_per_second={}", self.macs_per_second);
        s
    }
}

/// Enumerates every tensor of the configuration.
pub fn count_params(config: &ModelConfig) -> Result<ComplexityReport> {
    config.validate()?;
    let layout = tensor_layout(config);
    let tensors: Vec<(String, usize)> = layout.iter().map(|t| (t.name.clone(), t.numel())).collect();
    let submodules: Vec<(Submodule, usize)> = Submodule::ALL
        .iter()
        .map(|&s| {
            let n = layout.iter().filter(|t| t.submodule == s).map(|t| t.numel()).sum();
            (s, n)
        })
        .collect();
    let total_params = tensors.iter().map(|(_, n)| n).sum();
    let macs_per_frame = macs_per_frame(config);
    Ok(ComplexityReport {
        config: *config,
        tensors,
        submodules,
        total_params,
        macs_per_frame,
        macs_per_second: macs_per_frame * FRAME_RATE as u64,
    })
}

fn macs_per_frame(c: &ModelConfig) -> u64 {
    let (g, h, gs) = (c.groups as u64, c.hidden as u64, c.group_size() as u64);
    let fc = |i: u64, o: u64| i * o;
    let grouping = fc(c.feature_len() as u64, c.latent as u64);
    let ds = |k: u64| k * h + h * h;
    let conv = fc(gs, h) + ds(5) + ds(3) + h;
    let gru = 2 * 6 * h * h + h;
    let tac = if c.tac_enabled() {
        2 * (g * fc(h, 2 * h) + fc(2 * h, 2 * h) + g * fc(4 * h, h))
    } else {
        0
    };
    let ungroup = fc(h, gs);
    let mut heads = 4 * fc(c.latent as u64, c.w_head_len() as u64);
    if c.post_filter {
        heads += 2 * fc(c.latent as u64, c.c_head_len() as u64);
    }
    grouping + g * (conv + gru + ungroup) + tac + heads
}

/// MACs for one second of audio at `frames_per_second`.
pub fn count_macs(config: &ModelConfig, frames_per_second: u64) -> Result<u64> {
    config.validate()?;
    Ok(macs_per_frame(config) * frames_per_second)
}

fn pct(computed: f64, reference: f64) -> f64 {
    100.0 * (computed - reference) / reference
}

/// One row per `(groups, hidden)` configuration, with the published size and
/// MAC figures side by side where the configuration is one of the reference
/// rows.
pub fn report_table(configs: &[(usize, usize)]) -> Result<String> {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>4} {:>5} {:>12} {:>10} {:>8} {:>10} {:>8} {:>8}",
        "G", "H", "params", "ref", "delta%", "GMACs/s", "ref", "delta%"
    );
    for &(g, h) in configs {
        let r = count_params(&ModelConfig::new(g, h))?;
        let gmacs = r.macs_per_second as f64 / 1e9;
        let reference = REFERENCE_CONFIGS.iter().find(|c| c.0 == g && c.1 == h);
        let _ = match reference {
            Some(&(_, _, size, macs)) => writeln!(
                out,
                "{:>4} {:>5} {:>12} {:>10} {:>+8.2} {:>10.3} {:>8.2} {:>+8.2}",
                g,
                h,
                r.total_params,
                size as u64,
                pct(r.total_params as f64, size),
                gmacs,
                macs / 1e9,
                pct(r.macs_per_second as f64, macs)
            ),
            None => writeln!(
                out,
                "{:>4} {:>5} {:>12} {:>10} {:>8} {:>10.3} {:>8} {:>8}",
                g, h, r.total_params, "-", "-", gmacs, "-", "-"
            ),
        };
    }
    Ok(out)
}

/// The ten reference rows.
pub fn default_table_configs() -> Vec<(usize, usize)> {
    REFERENCE_CONFIGS.iter().map(|c| (c.0, c.1)).collect()
}
