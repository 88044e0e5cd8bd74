//! `gcbfs` command-line tool.
//!
//! Exit codes: 0 success, 2 usage, 3 file format or I/O, 4 shape or
//! configuration mismatch.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gcbfs::complexity::{count_params, ComplexityReport};
use gcbfs::dsp::{read_wav, write_wav, AudioBuffer, SampleFormat, HOP, SAMPLE_RATE};
use gcbfs::model::{load_weights, save_weights, Model, ModelConfig, WeightStore, REFERENCE_CONFIGS};
use gcbfs::objective::{si_sdr, to_f64, upit_assign, LossParams, LossStftConfig};
use gcbfs::scene::{
    render_scene, scale_sources, MicGeometry, SceneManifest, SceneSpec, SourcePosition,
};
use gcbfs::stream::{create_stream, Separated, INPUT_CHANNELS, LATENCY};
use gcbfs::Error;
use serde_json::json;

#[derive(Parser)]
#[command(name = "gcbfs", version, about = "Low-latency binaural two-speaker separation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Separate a 4-channel recording into two stereo files.
    Separate(SeparateArgs),
    /// Print parameter and MAC counts of a configuration.
    Info(InfoArgs),
    /// Render a synthetic two-talker scene.
    Simulate(SimulateArgs),
    /// Compute SI-SDR of estimates against references.
    Eval(EvalArgs),
    /// Write a seeded random weight file.
    InitWeights(InitArgs),
}

#[derive(Args, Clone)]
struct ModelFlags {
    #[arg(long, default_value_t = 16)]
    groups: usize,
    #[arg(long, default_value_t = 16)]
    hidden: usize,
    #[arg(long, default_value_t = 256)]
    latent: usize,
    /// Drop the post filter heads.
    #[arg(long)]
    no_post_filter: bool,
    /// Factor on W; defaults to sqrt(2) without post filter, 1 otherwise.
    #[arg(long)]
    w_scale: Option<f64>,
}

impl ModelFlags {
    fn config(&self) -> ModelConfig {
        let mut c = ModelConfig::new(self.groups, self.hidden);
        c.latent = self.latent;
        if self.no_post_filter {
            c = c.without_post_filter(true);
        }
        if let Some(s) = self.w_scale {
            c.w_scale = s;
        }
        c
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum WavFormat {
    Float32,
    Pcm16,
}

impl From<WavFormat> for SampleFormat {
    fn from(f: WavFormat) -> Self {
        match f {
            WavFormat::Float32 => SampleFormat::Float32,
            WavFormat::Pcm16 => SampleFormat::Pcm16,
        }
    }
}

#[derive(Args)]
struct SeparateArgs {
    #[arg(long)]
    weights: PathBuf,
    /// 16 kHz WAV, channels [front-L, rear-L, front-R, rear-R].
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Samples per processing block; a multiple of 16.
    #[arg(long, default_value_t = 160)]
    block: usize,
    #[arg(long, value_enum, default_value = "float32")]
    format: WavFormat,
    /// Remove the 32-sample latency so outputs align with the input.
    #[arg(long)]
    align: bool,
}

#[derive(Args)]
struct InfoArgs {
    #[command(flatten)]
    model: ModelFlags,
    #[arg(long)]
    json: bool,
    /// Print all reference rows instead of one configuration.
    #[arg(long)]
    table: bool,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    speech1: PathBuf,
    #[arg(long)]
    speech2: PathBuf,
    #[arg(long)]
    noise: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Reverberation time in seconds; anechoic when omitted.
    #[arg(long)]
    t60: Option<f64>,
    #[arg(long, default_value_t = 45.0, allow_negative_numbers = true)]
    azimuth1: f64,
    #[arg(long, default_value_t = 1.0)]
    distance1: f64,
    #[arg(long, default_value_t = -45.0, allow_negative_numbers = true)]
    azimuth2: f64,
    #[arg(long, default_value_t = 1.0)]
    distance2: f64,
    #[arg(long, default_value_t = 180.0, allow_negative_numbers = true)]
    noise_azimuth: f64,
    #[arg(long, default_value_t = 2.0)]
    noise_distance: f64,
    /// Also write the scaled component images.
    #[arg(long)]
    components: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Stereo estimate per speaker (one or two).
    #[arg(long = "estimate", required = true, num_args = 1..=2)]
    estimates: Vec<PathBuf>,
    /// Stereo reference per speaker, same count as estimates.
    #[arg(long = "reference", required = true, num_args = 1..=2)]
    references: Vec<PathBuf>,
    /// Choose the speaker assignment by minimum cMSE.
    #[arg(long)]
    upit: bool,
    /// Drop the 32-sample latency before comparing.
    #[arg(long)]
    reference_align: bool,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct InitArgs {
    #[command(flatten)]
    model: ModelFlags,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Separate(a) => separate(&a),
        Command::Info(a) => info(&a),
        Command::Simulate(a) => simulate(&a),
        Command::Eval(a) => eval(&a),
        Command::InitWeights(a) => init_weights(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_format_error() { 3 } else { 4 })
        }
    }
}

fn separate(a: &SeparateArgs) -> gcbfs::Result<()> {
    if a.block == 0 || a.block % HOP != 0 {
        return Err(Error::InvalidConfig(format!("block size {} is not a multiple of {HOP}", a.block)));
    }
    let audio = read_wav(&a.input)?;
    if audio.num_channels() != INPUT_CHANNELS {
        return Err(Error::UnsupportedAudio(format!(
            "{}: expected {INPUT_CHANNELS} channels, found {}",
            a.input.display(),
            audio.num_channels()
        )));
    }
    let store = load_weights(&a.weights)?;
    let model = Model::build(&store.config, &store)?;

    let len = audio.len();
    // with alignment the stream runs 32 samples past the end
    let wanted = if a.align { len + LATENCY } else { len };
    let padded = wanted.div_ceil(HOP) * HOP;
    let input: Vec<Vec<f32>> = audio
        .channels
        .iter()
        .map(|c| {
            let mut c = c.clone();
            c.resize(padded, 0.0);
            c
        })
        .collect();
    let mut stream = create_stream(&model);
    let mut out = Separated::default();
    for start in (0..padded).step_by(a.block) {
        let end = (start + a.block).min(padded);
        let block: Vec<&[f32]> = input.iter().map(|c| &c[start..end]).collect();
        out.append(&stream.process_block(&block)?);
    }
    let skip = if a.align { LATENCY } else { 0 };
    fs::create_dir_all(&a.out_dir)?;
    for (spk, pair) in out.speakers.iter().enumerate() {
        let channels = pair.iter().map(|c| c[skip..skip + len].to_vec()).collect();
        let buf = AudioBuffer::new(SAMPLE_RATE, channels)?;
        write_wav(a.out_dir.join(format!("speaker{}.wav", spk + 1)), &buf, a.format.into())?;
    }
    Ok(())
}

fn reference_row(c: &ModelConfig) -> Option<(f64, f64)> {
    if c.latent != 256 || !c.post_filter {
        return None;
    }
    REFERENCE_CONFIGS
        .iter()
        .find(|r| r.0 == c.groups && r.1 == c.hidden)
        .map(|r| (r.2, r.3))
}

fn report_json(r: &ComplexityReport) -> serde_json::Value {
    let c = &r.config;
    let subs: serde_json::Map<String, serde_json::Value> =
        r.submodules.iter().map(|(s, n)| (s.name().to_string(), json!(n))).collect();
    let mut v = json!({
        "groups": c.groups,
        "hidden": c.hidden,
        "latent": c.latent,
        "post_filter": c.post_filter,
        "params": r.total_params,
        "submodules": subs,
        "filter_head_params": r.filter_head_params(),
        "macs_per_frame": r.macs_per_frame,
        "macs_per_second": r.macs_per_second,
    });
    if let Some((size, macs)) = reference_row(c) {
        v["reference_params"] = json!(size);
        v["reference_macs_per_second"] = json!(macs);
        v["params_delta_pct"] = json!(100.0 * (r.total_params as f64 - size) / size);
        v["macs_delta_pct"] = json!(100.0 * (r.macs_per_second as f64 - macs) / macs);
    }
    v
}

fn report_text(r: &ComplexityReport) -> String {
    let mut s = r.to_key_values();
    s.push_str(&format!("params.filter_heads={}\n", r.filter_head_params()));
    if let Some((size, macs)) = reference_row(&r.config) {
        s.push_str(&format!(
            "reference.params={size}\nreference.macs_per_second={macs}\nparams_delta_pct={:.2}\nmacs_delta_pct={:.2}\n",
            100.0 * (r.total_params as f64 - size) / size,
            100.0 * (r.macs_per_second as f64 - macs) / macs
        ));
    }
    s
}

fn info(a: &InfoArgs) -> gcbfs::Result<()> {
    if a.table {
        let configs: Vec<_> = REFERENCE_CONFIGS.iter().map(|r| (r.0, r.1)).collect();
        if a.json {
            let rows = configs
                .iter()
                .map(|&(g, h)| count_params(&ModelConfig::new(g, h)).map(|r| report_json(&r)))
                .collect::<gcbfs::Result<Vec<_>>>()?;
            println!("{}", serde_json::Value::Array(rows));
        } else {
            print!("{}", gcbfs::complexity::report_table(&configs)?);
        }
        return Ok(());
    }
    let r = count_params(&a.model.config())?;
    if a.json {
        println!("{}", report_json(&r));
    } else {
        print!("{}", report_text(&r));
    }
    Ok(())
}

fn read_mono(path: &Path) -> gcbfs::Result<Vec<f64>> {
    let a = read_wav(path)?;
    if a.num_channels() != 1 {
        return Err(Error::UnsupportedAudio(format!(
            "{}: expected a mono source, found {} channels",
            path.display(),
            a.num_channels()
        )));
    }
    Ok(to_f64(&a.channels[0]))
}

fn write_f64(path: PathBuf, x: &[Vec<f64>]) -> gcbfs::Result<()> {
    let channels = x.iter().map(|c| c.iter().map(|&v| v as f32).collect()).collect();
    write_wav(path, &AudioBuffer::new(SAMPLE_RATE, channels)?, SampleFormat::Float32)
}

fn simulate(a: &SimulateArgs) -> gcbfs::Result<()> {
    let spec = SceneSpec {
        speaker1: SourcePosition::new(a.azimuth1, a.distance1),
        speaker2: SourcePosition::new(a.azimuth2, a.distance2),
        noise: SourcePosition::new(a.noise_azimuth, a.noise_distance),
        t60: a.t60,
        geometry: MicGeometry::default(),
        seed: a.seed,
    };
    spec.validate()?;
    let s1 = read_mono(&a.speech1)?;
    let s2 = read_mono(&a.speech2)?;
    let noise = a.noise.as_deref().map(read_mono).transpose()?;
    let rendered = render_scene(&spec, &s1, &s2, noise.as_deref())?;
    let scaled = scale_sources(&rendered, a.seed)?;

    fs::create_dir_all(&a.out_dir)?;
    let dir = &a.out_dir;
    write_f64(dir.join("mixture.wav"), &scaled.mixture)?;
    write_f64(dir.join("target1.wav"), &scaled.target1)?;
    write_f64(dir.join("target2.wav"), &scaled.target2)?;
    if a.components {
        write_f64(dir.join("image1.wav"), &scaled.speech1)?;
        write_f64(dir.join("image2.wav"), &scaled.speech2)?;
        write_f64(dir.join("image_noise.wav"), &scaled.noise)?;
    }
    let manifest = SceneManifest {
        spec,
        draws: scaled.draws,
        samples: s1.len(),
    };
    fs::write(dir.join("scene.txt"), manifest.to_text())?;
    Ok(())
}

fn read_stereo(path: &Path) -> gcbfs::Result<Vec<Vec<f64>>> {
    let a = read_wav(path)?;
    if a.num_channels() != 2 {
        return Err(Error::UnsupportedAudio(format!(
            "{}: expected 2 channels, found {}",
            path.display(),
            a.num_channels()
        )));
    }
    Ok(a.channels.iter().map(|c| to_f64(c)).collect())
}

fn eval(a: &EvalArgs) -> gcbfs::Result<()> {
    if a.estimates.len() != a.references.len() {
        return Err(Error::InvalidConfig(format!(
            "{} estimates but {} references",
            a.estimates.len(),
            a.references.len()
        )));
    }
    let mut est = a.estimates.iter().map(|p| read_stereo(p)).collect::<gcbfs::Result<Vec<_>>>()?;
    let mut refs = a.references.iter().map(|p| read_stereo(p)).collect::<gcbfs::Result<Vec<_>>>()?;
    if a.reference_align {
        for pair in &mut est {
            pair.iter_mut().for_each(|c| drop(c.drain(..LATENCY.min(c.len()))));
        }
        for pair in &mut refs {
            pair.iter_mut().for_each(|c| c.truncate(c.len().saturating_sub(LATENCY)));
        }
    }
    let perm: Vec<usize> = if a.upit && est.len() == 2 {
        let (_, p) = upit_assign(&est, &refs, &LossParams::default(), LossStftConfig::default())?;
        p.to_vec()
    } else {
        (0..est.len()).collect()
    };
    let mut rows = Vec::new();
    for (i, &j) in perm.iter().enumerate() {
        let l = si_sdr(&est[i][0], &refs[j][0])?;
        let r = si_sdr(&est[i][1], &refs[j][1])?;
        rows.push((i, j, l, r, (l + r) / 2.0));
    }
    if a.json {
        let speakers: Vec<_> = rows
            .iter()
            .map(|&(i, j, l, r, m)| json!({"estimate": i + 1, "reference": j + 1, "si_sdr_left": l, "si_sdr_right": r, "si_sdr": m}))
            .collect();
        let perm1: Vec<usize> = perm.iter().map(|p| p + 1).collect();
        println!("{}", json!({"permutation": perm1, "speakers": speakers}));
    } else {
        let perm1: Vec<String> = perm.iter().map(|p| (p + 1).to_string()).collect();
        println!("permutation={}", perm1.join(","));
        for (i, j, l, r, m) in rows {
            println!("speaker{}.reference={}", i + 1, j + 1);
            println!("speaker{}.si_sdr_left={l}", i + 1);
            println!("speaker{}.si_sdr_right={r}", i + 1);
            println!("speaker{}.si_sdr={m}", i + 1);
        }
    }
    Ok(())
}

fn init_weights(a: &InitArgs) -> gcbfs::Result<()> {
    let store = WeightStore::init(&a.model.config(), a.seed)?;
    save_weights(&store, &a.out)
}
