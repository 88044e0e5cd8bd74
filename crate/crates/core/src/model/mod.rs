//! The filter estimation network.
//!
//! Per frame: the real and imaginary parts of all microphone spectra are
//! projected to a latent vector of size `P` and split into `G` contiguous
//! groups. Each group runs through a shared convolutional module, the groups
//! exchange information through TAC (transform, average, concatenate), run
//! through a shared two-layer GRU module, exchange again, and are projected
//! back and concatenated. Four tanh heads predict the spatial filters `W`
//! (one per speaker and output side) and two predict the post filters `C`
//! (one per speaker). With `G = 1` both TAC stages are absent.
//!
//! Head outputs are reshaped part-major: a `W` head of length `2 * 2M * F`
//! holds `Re(mic 0, bins 0..F), .., Re(mic 2M-1, ..), Im(mic 0, ..), ..`;
//! a `C` head of length `2 * 2 * F` holds `Re(left), Re(right), Im(left),
//! Im(right)`. Input features use the same part-major layout over mics.

mod config;
mod weights;

use num_complex::Complex32;

pub use config::{ModelConfig, DEFAULT_LATENT, DEFAULT_MICS_PER_SIDE, REFERENCE_CONFIGS, SPEAKERS};
pub use weights::{
    file_size, init_weights, load_weights, save_weights, tensor_layout, Submodule, Tensor,
    TensorRole, TensorSpec, WeightStore, FORMAT_VERSION, HEAD_NAMES_C, HEAD_NAMES_W, MAGIC,
    PRELU_INIT,
};

use crate::dsp::{FilterFrame, MultiChannelSpectrogram};
use crate::error::{Error, Result};
use crate::layers::{ConvHistory, DepthwiseConv, Fc, Gru, GruScratch, Prelu};

struct Loader<'a> {
    store: &'a WeightStore,
}

impl Loader<'_> {
    fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.store
            .get(name)
            .ok_or_else(|| Error::MissingTensor(name.to_string()))
    }

    fn data(&self, name: &str) -> Result<Vec<f32>> {
        Ok(self.tensor(name)?.data.clone())
    }

    fn fc(&self, prefix: &str) -> Result<Fc> {
        let w = self.tensor(&format!("{prefix}.weight"))?;
        Fc::new(w.dims[0], w.dims[1], w.data.clone(), self.data(&format!("{prefix}.bias"))?)
    }

    fn prelu(&self, prefix: &str) -> Result<Prelu> {
        Ok(Prelu::new(self.data(&format!("{prefix}.prelu"))?))
    }

    fn dconv(&self, prefix: &str) -> Result<DepthwiseConv> {
        let w = self.tensor(&format!("{prefix}.weight"))?;
        DepthwiseConv::new(w.dims[0], w.dims[1], w.data.clone(), self.data(&format!("{prefix}.bias"))?)
    }

    fn gru(&self, prefix: &str) -> Result<Gru> {
        let wi = self.tensor(&format!("{prefix}.weight_ih"))?;
        Gru::new(
            wi.dims[1],
            wi.dims[2],
            wi.data.clone(),
            self.data(&format!("{prefix}.weight_hh"))?,
            self.data(&format!("{prefix}.bias_ih"))?,
            self.data(&format!("{prefix}.bias_hh"))?,
        )
    }

    fn tac(&self, prefix: &str) -> Result<Tac> {
        Ok(Tac {
            fc1: self.fc(&format!("{prefix}.fc1"))?,
            act1: self.prelu(&format!("{prefix}.fc1"))?,
            fc2: self.fc(&format!("{prefix}.fc2"))?,
            act2: self.prelu(&format!("{prefix}.fc2"))?,
            fc3: self.fc(&format!("{prefix}.fc3"))?,
            act3: self.prelu(&format!("{prefix}.fc3"))?,
        })
    }
}

#[derive(Debug, Clone)]
struct DsConv {
    depthwise: DepthwiseConv,
    pointwise: Fc,
    act: Prelu,
}

/// Shared per-group convolutional module:
/// `u = PReLU(FC(x))`, `out = PReLU(DS3(PReLU(DS5(u)))) + DConv1(u)`.
#[derive(Debug, Clone)]
pub struct ConvModule {
    fc: Fc,
    fc_act: Prelu,
    ds5: DsConv,
    ds3: DsConv,
    skip: DepthwiseConv,
}

/// Streaming state of one group in the conv module.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGroupState {
    ds5: ConvHistory,
    ds3: ConvHistory,
}

impl ConvModule {
    pub fn new_state(&self) -> ConvGroupState {
        ConvGroupState {
            ds5: self.ds5.depthwise.new_history(),
            ds3: self.ds3.depthwise.new_history(),
        }
    }

    fn input_affine(&self, x: &[f32]) -> Vec<f32> {
        let mut u = vec![0.0; self.fc.out_dim()];
        self.fc.forward_into(x, &mut u);
        self.fc_act.apply_in_place(&mut u);
        u
    }

    fn step_group(&self, x: &[f32], state: &mut ConvGroupState) -> Vec<f32> {
        let h = self.fc.out_dim();
        let u = self.input_affine(x);
        let mut mid = vec![0.0; h];
        let mut a = vec![0.0; h];
        self.ds5.depthwise.step_into(&u, &mut state.ds5, &mut mid);
        self.ds5.pointwise.forward_into(&mid, &mut a);
        self.ds5.act.apply_in_place(&mut a);
        let mut b = vec![0.0; h];
        self.ds3.depthwise.step_into(&a, &mut state.ds3, &mut mid);
        self.ds3.pointwise.forward_into(&mid, &mut b);
        self.ds3.act.apply_in_place(&mut b);
        let mut skip_hist = ConvHistory::new(h, 0);
        self.skip.step_into(&u, &mut skip_hist, &mut mid);
        for (o, s) in b.iter_mut().zip(&mid) {
            *o += s;
        }
        b
    }

    /// One frame for all groups.
    pub fn step(&self, groups: &[Vec<f32>], state: &mut [ConvGroupState]) -> Result<Vec<Vec<f32>>> {
        if groups.len() != state.len() {
            return Err(Error::shape("conv module group states", groups.len(), state.len()));
        }
        for g in groups {
            if g.len() != self.fc.in_dim() {
                return Err(Error::shape("conv module group input", self.fc.in_dim(), g.len()));
            }
        }
        Ok(groups
            .iter()
            .zip(state.iter_mut())
            .map(|(x, s)| self.step_group(x, s))
            .collect())
    }

    /// Whole sequence of one group, layer by layer.
    fn forward_sequence(&self, xs: &[Vec<f32>]) -> Vec<Vec<f32>> {
        let pointwise = |ds: &DsConv, seq: Vec<Vec<f32>>| -> Vec<Vec<f32>> {
            seq.into_iter()
                .map(|v| {
                    let mut y = ds.pointwise.forward(&v).unwrap();
                    ds.act.apply_in_place(&mut y);
                    y
                })
                .collect()
        };
        let u: Vec<Vec<f32>> = xs.iter().map(|x| self.input_affine(x)).collect();
        let a = pointwise(&self.ds5, self.ds5.depthwise.forward_sequence(&u));
        let b = pointwise(&self.ds3, self.ds3.depthwise.forward_sequence(&a));
        let skip = self.skip.forward_sequence(&u);
        b.into_iter()
            .zip(skip)
            .map(|(m, s)| m.iter().zip(&s).map(|(p, q)| p + q).collect())
            .collect()
    }
}

/// Transform-average-concatenate across groups with hidden size `2H`.
#[derive(Debug, Clone)]
pub struct Tac {
    fc1: Fc,
    act1: Prelu,
    fc2: Fc,
    act2: Prelu,
    fc3: Fc,
    act3: Prelu,
}

impl Tac {
    /// `t_g = PReLU(FC1(x_g))`, `a = PReLU(FC2(mean_g t_g))`,
    /// `out_g = x_g + PReLU(FC3([t_g, a]))`. The mean is summed in group
    /// order.
    pub fn forward(&self, groups: &[Vec<f32>]) -> Result<Vec<Vec<f32>>> {
        if groups.len() < 2 {
            return Err(Error::InvalidConfig(format!(
                "TAC needs at least two groups, got {}",
                groups.len()
            )));
        }
        let h = self.fc3.out_dim();
        if let Some(g) = groups.iter().find(|g| g.len() != h) {
            return Err(Error::shape("tac group input", h, g.len()));
        }
        let transformed: Vec<Vec<f32>> = groups
            .iter()
            .map(|x| {
                let mut t = vec![0.0; 2 * h];
                self.fc1.forward_into(x, &mut t);
                self.act1.apply_in_place(&mut t);
                t
            })
            .collect();
        let mut mean = vec![0.0f32; 2 * h];
        for t in &transformed {
            for (m, v) in mean.iter_mut().zip(t) {
                *m += v;
            }
        }
        let inv = 1.0 / groups.len() as f32;
        mean.iter_mut().for_each(|m| *m *= inv);
        let mut avg = vec![0.0; 2 * h];
        self.fc2.forward_into(&mean, &mut avg);
        self.act2.apply_in_place(&mut avg);

        let mut cat = vec![0.0; 4 * h];
        cat[2 * h..].copy_from_slice(&avg);
        Ok(groups
            .iter()
            .zip(&transformed)
            .map(|(x, t)| {
                cat[..2 * h].copy_from_slice(t);
                let mut out = vec![0.0; h];
                self.fc3.forward_into(&cat, &mut out);
                self.act3.apply_in_place(&mut out);
                for (o, xi) in out.iter_mut().zip(x) {
                    *o += xi;
                }
                out
            })
            .collect())
    }
}

/// Shared per-group recurrent module: `GRU2(GRU1(x)) + DConv1(x)`.
#[derive(Debug, Clone)]
pub struct GruModule {
    gru1: Gru,
    gru2: Gru,
    skip: DepthwiseConv,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GruGroupState {
    pub h1: Vec<f32>,
    pub h2: Vec<f32>,
}

impl GruModule {
    pub fn new_state(&self) -> GruGroupState {
        GruGroupState {
            h1: vec![0.0; self.gru1.hidden()],
            h2: vec![0.0; self.gru2.hidden()],
        }
    }

    fn step_group(&self, x: &[f32], state: &mut GruGroupState, scratch: &mut GruScratch) -> Vec<f32> {
        self.gru1.step_into(x, &mut state.h1, scratch);
        self.gru2.step_into(&state.h1, &mut state.h2, scratch);
        let mut out = vec![0.0; x.len()];
        self.skip.step_into(x, &mut ConvHistory::new(x.len(), 0), &mut out);
        for (o, h) in out.iter_mut().zip(&state.h2) {
            *o += h;
        }
        out
    }

    pub fn step(&self, groups: &[Vec<f32>], state: &mut [GruGroupState]) -> Result<Vec<Vec<f32>>> {
        if groups.len() != state.len() {
            return Err(Error::shape("gru module group states", groups.len(), state.len()));
        }
        if let Some(g) = groups.iter().find(|g| g.len() != self.gru1.input()) {
            return Err(Error::shape("gru module group input", self.gru1.input(), g.len()));
        }
        let mut scratch = GruScratch::default();
        Ok(groups
            .iter()
            .zip(state.iter_mut())
            .map(|(x, s)| self.step_group(x, s, &mut scratch))
            .collect())
    }

    fn forward_sequence(&self, xs: &[Vec<f32>]) -> Vec<Vec<f32>> {
        let y = self.gru2.forward_sequence(&self.gru1.forward_sequence(xs));
        let skip = self.skip.forward_sequence(xs);
        y.into_iter()
            .zip(skip)
            .map(|(a, b)| a.iter().zip(&b).map(|(p, q)| p + q).collect())
            .collect()
    }
}

/// All causal state of the network for one stream.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub conv: Vec<ConvGroupState>,
    pub gru: Vec<GruGroupState>,
    pub frames: u64,
    /// Number of TAC evaluations so far (two per frame when enabled).
    pub tac_evaluations: u64,
}

/// Validated, immutable network. Shareable across threads; per-stream state
/// lives in [`ModelState`].
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    grouping: Fc,
    conv: ConvModule,
    tac_a: Option<Tac>,
    gru: GruModule,
    tac_b: Option<Tac>,
    ungroup: Fc,
    w_heads: Vec<Fc>,
    c_heads: Option<Vec<Fc>>,
}

/// Flattens one `mics x bins` frame into part-major real features.
pub fn frame_features(y_frame: &[Complex32]) -> Vec<f32> {
    y_frame
        .iter()
        .map(|z| z.re)
        .chain(y_frame.iter().map(|z| z.im))
        .collect()
}

impl Model {
    pub fn build(config: &ModelConfig, store: &WeightStore) -> Result<Self> {
        store.validate_against(config)?;
        if store.config != *config {
            return Err(Error::ConfigMismatch(format!(
                "weights were created for {:?}, requested {:?}",
                store.config, config
            )));
        }
        let l = Loader { store };
        let ds = |name: &str| -> Result<DsConv> {
            Ok(DsConv {
                depthwise: l.dconv(&format!("{name}.depthwise"))?,
                pointwise: l.fc(&format!("{name}.pointwise"))?,
                act: l.prelu(name)?,
            })
        };
        let conv = ConvModule {
            fc: l.fc("conv.fc")?,
            fc_act: l.prelu("conv.fc")?,
            ds5: ds("conv.ds5")?,
            ds3: ds("conv.ds3")?,
            skip: l.dconv("conv.skip")?,
        };
        let gru = GruModule {
            gru1: l.gru("gru.gru1")?,
            gru2: l.gru("gru.gru2")?,
            skip: l.dconv("gru.skip")?,
        };
        let (tac_a, tac_b) = if config.tac_enabled() {
            (Some(l.tac("tac_a")?), Some(l.tac("tac_b")?))
        } else {
            (None, None)
        };
        let w_heads = HEAD_NAMES_W
            .iter()
            .map(|h| l.fc(&format!("heads.w.{h}")))
            .collect::<Result<_>>()?;
        let c_heads = if config.post_filter {
            Some(
                HEAD_NAMES_C
                    .iter()
                    .map(|h| l.fc(&format!("heads.c.{h}")))
                    .collect::<Result<_>>()?,
            )
        } else {
            None
        };
        Ok(Self {
            config: *config,
            grouping: l.fc("grouping.fc")?,
            conv,
            tac_a,
            gru,
            tac_b,
            ungroup: l.fc("ungroup.fc")?,
            w_heads,
            c_heads,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn conv_module(&self) -> &ConvModule {
        &self.conv
    }

    pub fn gru_module(&self) -> &GruModule {
        &self.gru
    }

    /// First (after conv) and second (after GRU) TAC stages.
    pub fn tac_stages(&self) -> (Option<&Tac>, Option<&Tac>) {
        (self.tac_a.as_ref(), self.tac_b.as_ref())
    }

    pub fn new_state(&self) -> ModelState {
        let g = self.config.groups;
        ModelState {
            conv: (0..g).map(|_| self.conv.new_state()).collect(),
            gru: (0..g).map(|_| self.gru.new_state()).collect(),
            frames: 0,
            tac_evaluations: 0,
        }
    }

    /// Projects features to the latent size and splits them into `G`
    /// contiguous chunks.
    pub fn group_project(&self, features: &[f32]) -> Result<Vec<Vec<f32>>> {
        let latent = self.grouping.forward(features)?;
        Ok(latent
            .chunks_exact(self.config.group_size())
            .map(<[f32]>::to_vec)
            .collect())
    }

    /// Ungroups, concatenates and evaluates the filter heads.
    pub fn ungroup_and_estimate(&self, groups: &[Vec<f32>]) -> Result<FilterFrame> {
        if groups.len() != self.config.groups {
            return Err(Error::shape("ungroup groups", self.config.groups, groups.len()));
        }
        let gs = self.config.group_size();
        let mut latent = vec![0.0; self.config.latent];
        for (g, chunk) in groups.iter().zip(latent.chunks_exact_mut(gs)) {
            if g.len() != self.ungroup.in_dim() {
                return Err(Error::shape("ungroup input", self.ungroup.in_dim(), g.len()));
            }
            self.ungroup.forward_into(g, chunk);
        }
        Ok(self.estimate_filters(&latent))
    }

    fn estimate_filters(&self, latent: &[f32]) -> FilterFrame {
        let cfg = &self.config;
        let (mics, bins) = (cfg.mics(), cfg.bins);
        let mut frame = FilterFrame::zeros(mics, bins, cfg.post_filter);
        let scale = cfg.w_scale as f32;
        let mut out = vec![0.0; cfg.w_head_len()];
        for (pair, head) in self.w_heads.iter().enumerate() {
            head.forward_into(latent, &mut out);
            let (re, im) = out.split_at(mics * bins);
            let dst = &mut frame.w[pair * mics * bins..(pair + 1) * mics * bins];
            for ((d, &r), &i) in dst.iter_mut().zip(re).zip(im) {
                *d = Complex32::new(r.tanh() * scale, i.tanh() * scale);
            }
        }
        if let (Some(heads), Some(c)) = (&self.c_heads, frame.c.as_mut()) {
            let mut out = vec![0.0; cfg.c_head_len()];
            for (speaker, head) in heads.iter().enumerate() {
                head.forward_into(latent, &mut out);
                let (re, im) = out.split_at(2 * bins);
                let dst = &mut c[speaker * 2 * bins..(speaker + 1) * 2 * bins];
                for ((d, &r), &i) in dst.iter_mut().zip(re).zip(im) {
                    *d = Complex32::new(r.tanh(), i.tanh());
                }
            }
        }
        frame
    }

    /// Streaming forward pass for one frame (`mics x bins` spectra).
    pub fn forward_frame(&self, state: &mut ModelState, y_frame: &[Complex32]) -> Result<FilterFrame> {
        let expected = self.config.mics() * self.config.bins;
        if y_frame.len() != expected {
            return Err(Error::shape("mixture frame (mics x bins)", expected, y_frame.len()));
        }
        let groups = self.group_project(&frame_features(y_frame))?;
        let mut groups = self.conv.step(&groups, &mut state.conv)?;
        if let Some(tac) = &self.tac_a {
            groups = tac.forward(&groups)?;
            state.tac_evaluations += 1;
        }
        let mut groups = self.gru.step(&groups, &mut state.gru)?;
        if let Some(tac) = &self.tac_b {
            groups = tac.forward(&groups)?;
            state.tac_evaluations += 1;
        }
        state.frames += 1;
        self.ungroup_and_estimate(&groups)
    }

    /// Offline forward pass over a whole utterance, evaluated module by
    /// module with the sequence forms of the temporal layers.
    pub fn forward_sequence(&self, spec: &MultiChannelSpectrogram<f32>) -> Result<Vec<FilterFrame>> {
        let cfg = &self.config;
        if spec.mics != cfg.mics() || spec.bins != cfg.bins {
            return Err(Error::shape(
                "spectrogram (mics x bins)",
                format!("{}x{}", cfg.mics(), cfg.bins),
                format!("{}x{}", spec.mics, spec.bins),
            ));
        }
        let frames = spec.frames;
        // [group][time] sequences
        let mut per_group: Vec<Vec<Vec<f32>>> = vec![Vec::with_capacity(frames); cfg.groups];
        for t in 0..frames {
            for (g, chunk) in self
                .group_project(&frame_features(&spec.frame(t)))?
                .into_iter()
                .enumerate()
            {
                per_group[g].push(chunk);
            }
        }
        let mut per_group: Vec<_> = per_group.iter().map(|xs| self.conv.forward_sequence(xs)).collect();
        if let Some(tac) = &self.tac_a {
            per_group = tac_over_time(tac, &per_group)?;
        }
        let mut per_group: Vec<_> = per_group.iter().map(|xs| self.gru.forward_sequence(xs)).collect();
        if let Some(tac) = &self.tac_b {
            per_group = tac_over_time(tac, &per_group)?;
        }
        (0..frames)
            .map(|t| {
                let groups: Vec<Vec<f32>> = per_group.iter().map(|seq| seq[t].clone()).collect();
                self.ungroup_and_estimate(&groups)
            })
            .collect()
    }
}

fn tac_over_time(tac: &Tac, per_group: &[Vec<Vec<f32>>]) -> Result<Vec<Vec<Vec<f32>>>> {
    let frames = per_group.first().map_or(0, Vec::len);
    let mut out: Vec<Vec<Vec<f32>>> = vec![Vec::with_capacity(frames); per_group.len()];
    for t in 0..frames {
        let groups: Vec<Vec<f32>> = per_group.iter().map(|seq| seq[t].clone()).collect();
        for (g, v) in tac.forward(&groups)?.into_iter().enumerate() {
            out[g].push(v);
        }
    }
    Ok(out)
}
