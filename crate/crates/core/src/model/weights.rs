//! Canonical tensor layout, seeded initialization and the binary weight file.
//!
//! File layout (all little-endian):
//!
//! ```text
//! magic        4 bytes  "GCBF"
//! version      u32      1
//! config       u32 x 7  groups, hidden, latent, mics_per_side, bins, speakers, post_filter
//!              f64      w_scale
//! count        u32      number of tensors
//! per tensor:  u16 name length, UTF-8 name, u8 rank, u32 x rank dims,
//!              f32 x prod(dims) payload, row-major
//! ```

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use num_complex::Complex32;

use super::config::ModelConfig;
use crate::dsp::FilterFrame;
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"GCBF";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Submodule {
    Grouping,
    Conv,
    TacA,
    Gru,
    TacB,
    Ungrouping,
    FilterHeads,
}

impl Submodule {
    pub const ALL: [Submodule; 7] = [
        Submodule::Grouping,
        Submodule::Conv,
        Submodule::TacA,
        Submodule::Gru,
        Submodule::TacB,
        Submodule::Ungrouping,
        Submodule::FilterHeads,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Submodule::Grouping => "grouping",
            Submodule::Conv => "conv",
            Submodule::TacA => "tac_a",
            Submodule::Gru => "gru",
            Submodule::TacB => "tac_b",
            Submodule::Ungrouping => "ungroup",
            Submodule::FilterHeads => "heads",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorRole {
    /// Multiplicative weights, initialized uniform in `+-1/sqrt(fan_in)`.
    Weight { fan_in: usize },
    Bias,
    PreluSlope,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub dims: Vec<usize>,
    pub role: TensorRole,
    pub submodule: Submodule,
}

impl TensorSpec {
    pub fn numel(&self) -> usize {
        self.dims.iter().product()
    }
}

pub const PRELU_INIT: f32 = 0.25;

pub const HEAD_NAMES_W: [&str; 4] = ["s1.left", "s1.right", "s2.left", "s2.right"];
pub const HEAD_NAMES_C: [&str; 2] = ["s1", "s2"];

struct LayoutBuilder {
    specs: Vec<TensorSpec>,
    submodule: Submodule,
}

impl LayoutBuilder {
    fn push(&mut self, name: String, dims: Vec<usize>, role: TensorRole) {
        self.specs.push(TensorSpec {
            name,
            dims,
            role,
            submodule: self.submodule,
        });
    }

    fn fc(&mut self, prefix: &str, in_dim: usize, out_dim: usize) {
        self.push(
            format!("{prefix}.weight"),
            vec![in_dim, out_dim],
            TensorRole::Weight { fan_in: in_dim },
        );
        self.push(format!("{prefix}.bias"), vec![out_dim], TensorRole::Bias);
    }

    fn prelu(&mut self, prefix: &str, channels: usize) {
        self.push(format!("{prefix}.prelu"), vec![channels], TensorRole::PreluSlope);
    }

    fn dconv(&mut self, prefix: &str, channels: usize, kernel: usize) {
        self.push(
            format!("{prefix}.weight"),
            vec![channels, kernel],
            TensorRole::Weight { fan_in: kernel },
        );
        self.push(format!("{prefix}.bias"), vec![channels], TensorRole::Bias);
    }

    fn gru(&mut self, prefix: &str, input: usize, hidden: usize) {
        self.push(
            format!("{prefix}.weight_ih"),
            vec![3, input, hidden],
            TensorRole::Weight { fan_in: input },
        );
        self.push(
            format!("{prefix}.weight_hh"),
            vec![3, hidden, hidden],
            TensorRole::Weight { fan_in: hidden },
        );
        self.push(format!("{prefix}.bias_ih"), vec![3, hidden], TensorRole::Bias);
        self.push(format!("{prefix}.bias_hh"), vec![3, hidden], TensorRole::Bias);
    }

    fn tac(&mut self, prefix: &str, h: usize) {
        self.fc(&format!("{prefix}.fc1"), h, 2 * h);
        self.prelu(&format!("{prefix}.fc1"), 2 * h);
        self.fc(&format!("{prefix}.fc2"), 2 * h, 2 * h);
        self.prelu(&format!("{prefix}.fc2"), 2 * h);
        self.fc(&format!("{prefix}.fc3"), 4 * h, h);
        self.prelu(&format!("{prefix}.fc3"), h);
    }
}

/// Every tensor of a configuration, in canonical (file) order.
pub fn tensor_layout(config: &ModelConfig) -> Vec<TensorSpec> {
    let h = config.hidden;
    let gs = config.group_size();
    let mut b = LayoutBuilder {
        specs: Vec::new(),
        submodule: Submodule::Grouping,
    };

    b.fc("grouping.fc", config.feature_len(), config.latent);

    b.submodule = Submodule::Conv;
    b.fc("conv.fc", gs, h);
    b.prelu("conv.fc", h);
    for (name, k) in [("conv.ds5", 5), ("conv.ds3", 3)] {
        b.dconv(&format!("{name}.depthwise"), h, k);
        b.fc(&format!("{name}.pointwise"), h, h);
        b.prelu(name, h);
    }
    b.dconv("conv.skip", h, 1);

    if config.tac_enabled() {
        b.submodule = Submodule::TacA;
        b.tac("tac_a", h);
    }

    b.submodule = Submodule::Gru;
    b.gru("gru.gru1", h, h);
    b.gru("gru.gru2", h, h);
    b.dconv("gru.skip", h, 1);

    if config.tac_enabled() {
        b.submodule = Submodule::TacB;
        b.tac("tac_b", h);
    }

    b.submodule = Submodule::Ungrouping;
    b.fc("ungroup.fc", h, gs);

    b.submodule = Submodule::FilterHeads;
    for head in HEAD_NAMES_W {
        b.fc(&format!("heads.w.{head}"), config.latent, config.w_head_len());
    }
    if config.post_filter {
        for head in HEAD_NAMES_C {
            b.fc(&format!("heads.c.{head}"), config.latent, config.c_head_len());
        }
    }
    b.specs
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

/// All learned tensors of one model, plus the configuration they were
/// created for.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightStore {
    pub config: ModelConfig,
    pub tensors: Vec<Tensor>,
}

impl WeightStore {
    /// Deterministic seeded initialization: weights uniform in
    /// `[-1/sqrt(fan_in), 1/sqrt(fan_in))`, zero biases, PReLU slopes 0.25.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = tensor_layout(config)
            .into_iter()
            .map(|spec| {
                let n = spec.numel();
                let data = match spec.role {
                    TensorRole::Weight { fan_in } => {
                        let a = 1.0 / (fan_in as f32).sqrt();
                        (0..n).map(|_| rng.random_range(-a..a)).collect()
                    }
                    TensorRole::Bias => vec![0.0; n],
                    TensorRole::PreluSlope => vec![PRELU_INIT; n],
                };
                Tensor {
                    name: spec.name,
                    dims: spec.dims,
                    data,
                }
            })
            .collect();
        Ok(Self {
            config: *config,
            tensors,
        })
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.iter_mut().find(|t| t.name == name)
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Replaces the filter heads so that every frame yields exactly
    /// `filters`, independent of the input: head weights are zeroed and the
    /// biases set to `atanh` of the wanted value. Components of magnitude 1
    /// map to a bias of 20, where tanh rounds to 1 in 32-bit.
    ///
    /// `W` entries are given after the `w_scale` factor. `filters.c` is
    /// ignored when the post filter is disabled.
    pub fn set_constant_filters(&mut self, filters: &FilterFrame) -> Result<()> {
        let cfg = self.config;
        let (mics, bins) = (cfg.mics(), cfg.bins);
        if filters.mics != mics || filters.bins != bins {
            return Err(Error::shape(
                "constant filters (mics x bins)",
                format!("{mics}x{bins}"),
                format!("{}x{}", filters.mics, filters.bins),
            ));
        }
        let scale = cfg.w_scale as f32;
        for (pair, head) in HEAD_NAMES_W.iter().enumerate() {
            let w = &filters.w[pair * mics * bins..(pair + 1) * mics * bins];
            let bias = head_bias(w, 1.0 / scale)?;
            self.set_head(&format!("heads.w.{head}"), bias)?;
        }
        if !cfg.post_filter {
            return Ok(());
        }
        let c = filters
            .c
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("post filter enabled but no C given".into()))?;
        for (speaker, head) in HEAD_NAMES_C.iter().enumerate() {
            let bias = head_bias(&c[speaker * 2 * bins..(speaker + 1) * 2 * bins], 1.0)?;
            self.set_head(&format!("heads.c.{head}"), bias)?;
        }
        Ok(())
    }

    fn set_head(&mut self, prefix: &str, bias: Vec<f32>) -> Result<()> {
        let weight = format!("{prefix}.weight");
        let w = self.get_mut(&weight).ok_or(Error::MissingTensor(weight))?;
        w.data.fill(0.0);
        let name = format!("{prefix}.bias");
        self.get_mut(&name).ok_or(Error::MissingTensor(name))?.data = bias;
        Ok(())
    }

    /// Checks names and shapes against the layout of `config`, reporting the
    /// first offending tensor in canonical order.
    pub fn validate_against(&self, config: &ModelConfig) -> Result<()> {
        config.validate()?;
        let layout = tensor_layout(config);
        for spec in &layout {
            let tensor = self
                .get(&spec.name)
                .ok_or_else(|| Error::MissingTensor(spec.name.clone()))?;
            if tensor.dims != spec.dims || tensor.data.len() != spec.numel() {
                return Err(Error::TensorShape {
                    name: spec.name.clone(),
                    expected: spec.dims.clone(),
                    found: tensor.dims.clone(),
                });
            }
        }
        if let Some(extra) = self
            .tensors
            .iter()
            .find(|t| !layout.iter().any(|s| s.name == t.name))
        {
            return Err(Error::UnexpectedTensor(extra.name.clone()));
        }
        if let Some(bad) = self.tensors.iter().find(|t| t.data.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite(format!("tensor {}", bad.name)));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut out = Vec::with_capacity(64 + 4 * self.param_count());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        for v in [
            c.groups,
            c.hidden,
            c.latent,
            c.mics_per_side,
            c.bins,
            c.speakers,
            c.post_filter as usize,
        ] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&c.w_scale.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(t.dims.len() as u8);
            for &d in &t.dims {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Parses a weight file and checks its tensors against the configuration
    /// stored in its own header.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
        if magic != MAGIC {
            return Err(Error::BadMagic { found: magic });
        }
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let mut fields = [0usize; 7];
        for f in &mut fields {
            *f = r.u32("config block")? as usize;
        }
        let post_filter = match fields[6] {
            0 => false,
            1 => true,
            v => return Err(Error::Malformed(format!("post_filter flag {v}"))),
        };
        let w_scale = f64::from_le_bytes(r.take(8, "config block")?.try_into().unwrap());
        let config = ModelConfig {
            groups: fields[0],
            hidden: fields[1],
            latent: fields[2],
            mics_per_side: fields[3],
            bins: fields[4],
            speakers: fields[5],
            post_filter,
            w_scale,
        };
        config
            .validate()
            .map_err(|e| Error::ConfigMismatch(format!("header config invalid: {e}")))?;

        let count = r.u32("tensor count")? as usize;
        let mut tensors = Vec::with_capacity(count.min(1024));
        for i in 0..count {
            let ctx = |what: &str| format!("tensor {i} {what}");
            let name_len = u16::from_le_bytes(r.take(2, &ctx("name length"))?.try_into().unwrap());
            let name = std::str::from_utf8(r.take(name_len as usize, &ctx("name"))?)
                .map_err(|_| Error::Malformed(format!("tensor {i} name is not UTF-8")))?
                .to_string();
            let rank = r.take(1, &format!("{name} rank"))?[0] as usize;
            let dims = (0..rank)
                .map(|_| r.u32(&format!("{name} dims")).map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let numel: usize = dims.iter().product();
            let payload = r.take(numel * 4, &format!("{name} payload"))?;
            let data = payload
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            tensors.push(Tensor { name, dims, data });
        }
        if r.pos != bytes.len() {
            return Err(Error::Malformed(format!(
                "{} trailing bytes after last tensor",
                bytes.len() - r.pos
            )));
        }
        let store = Self { config, tensors };
        store.validate_against(&config)?;
        Ok(store)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, context: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Truncated {
                context: context.to_string(),
            });
        };
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, context: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, context)?.try_into().unwrap()))
    }
}

/// Part-major bias vector (all real parts, then all imaginary parts) whose
/// tanh reproduces `values * gain`.
fn head_bias(values: &[Complex32], gain: f32) -> Result<Vec<f32>> {
    let inv = |v: f32| -> Result<f32> {
        let v = v * gain;
        if !v.is_finite() || v.abs() > 1.0 + 1e-6 {
            return Err(Error::InvalidConfig(format!(
                "filter component {v} outside the tanh range"
            )));
        }
        Ok(if v.abs() >= 1.0 { 20.0f32.copysign(v) } else { v.atanh() })
    };
    values
        .iter()
        .map(|z| inv(z.re))
        .chain(values.iter().map(|z| inv(z.im)))
        .collect()
}

pub fn init_weights(config: &ModelConfig, seed: u64) -> Result<WeightStore> {
    WeightStore::init(config, seed)
}

pub fn save_weights(store: &WeightStore, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, store.to_bytes())?;
    Ok(())
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<WeightStore> {
    WeightStore::from_bytes(&std::fs::read(path)?)
}

/// Size in bytes of a weight file for `config`.
pub fn file_size(config: &ModelConfig) -> usize {
    let header = 4 + 4 + 7 * 4 + 8 + 4;
    header
        + tensor_layout(config)
            .iter()
            .map(|s| 2 + s.name.len() + 1 + 4 * s.dims.len() + 4 * s.numel())
            .sum::<usize>()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_per_seed() {
        let c = ModelConfig::new(8, 32);
        let a = WeightStore::init(&c, 5).unwrap();
        assert_eq!(a.to_bytes(), WeightStore::init(&c, 5).unwrap().to_bytes());
        assert_ne!(a, WeightStore::init(&c, 6).unwrap());
    }

    #[test]
    fn init_ranges() {
        let c = ModelConfig::new(4, 16);
        let s = WeightStore::init(&c, 1).unwrap();
        for spec in tensor_layout(&c) {
            let t = s.get(&spec.name).unwrap();
            match spec.role {
                TensorRole::Weight { fan_in } => {
                    let a = 1.0 / (fan_in as f32).sqrt();
                    assert!(t.data.iter().all(|v| v.abs() <= a), "{}", spec.name);
                }
                TensorRole::Bias => assert!(t.data.iter().all(|&v| v == 0.0)),
                TensorRole::PreluSlope => assert!(t.data.iter().all(|&v| v == PRELU_INIT)),
            }
        }
    }

    #[test]
    fn byte_round_trip_and_size() {
        let c = ModelConfig::new(2, 8).without_post_filter(true);
        let s = WeightStore::init(&c, 3).unwrap();
        let bytes = s.to_bytes();
        assert_eq!(bytes.len(), file_size(&c));
        assert_eq!(WeightStore::from_bytes(&bytes).unwrap(), s);
    }

    #[test]
    fn corrupt_files_rejected_distinctly() {
        let c = ModelConfig::new(2, 8);
        let bytes = WeightStore::init(&c, 3).unwrap().to_bytes();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(WeightStore::from_bytes(&bad), Err(Error::BadMagic { .. })));

        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(
            WeightStore::from_bytes(&bad),
            Err(Error::UnsupportedVersion { found: 2, .. })
        ));

        let bad = &bytes[..bytes.len() - 3];
        assert!(matches!(WeightStore::from_bytes(bad), Err(Error::Truncated { .. })));

        // header claims hidden = 9, tensors were written for hidden = 8
        let mut bad = bytes.clone();
        bad[12] = 9;
        assert!(matches!(WeightStore::from_bytes(&bad), Err(Error::TensorShape { .. })));

        let mut bad = bytes.clone();
        bad.push(0);
        assert!(matches!(WeightStore::from_bytes(&bad), Err(Error::Malformed(_))));
    }

    #[test]
    fn shape_error_names_first_offending_tensor() {
        let store = WeightStore::init(&ModelConfig::new(4, 64), 0).unwrap();
        match store.validate_against(&ModelConfig::new(4, 128)) {
            Err(Error::TensorShape { name, expected, found }) => {
                assert_eq!(name, "conv.fc.weight");
                assert_eq!(expected, vec![64, 128]);
                assert_eq!(found, vec![64, 64]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn tac_tensors_rejected_without_groups() {
        let mut store = WeightStore::init(&ModelConfig::new(1, 16), 0).unwrap();
        let with_tac = WeightStore::init(&ModelConfig::new(2, 16), 0).unwrap();
        store
            .tensors
            .extend(with_tac.tensors.into_iter().filter(|t| t.name.starts_with("tac_a")));
        assert!(matches!(
            store.validate_against(&ModelConfig::new(1, 16)),
            Err(Error::UnexpectedTensor(name)) if name.starts_with("tac_a")
        ));
    }

    #[test]
    fn non_finite_weights_rejected() {
        let c = ModelConfig::new(2, 8);
        let mut s = WeightStore::init(&c, 0).unwrap();
        s.tensors[3].data[0] = f32::NAN;
        assert!(matches!(s.validate_against(&c), Err(Error::NonFinite(_))));
    }
}
