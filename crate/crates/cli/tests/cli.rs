use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gcbfs::dsp::{read_wav, write_wav, AudioBuffer, SampleFormat};
use gcbfs::model::{file_size, load_weights, ModelConfig};
use gcbfs::scene::{better_ear_snr_db, level_dbfs, SceneManifest};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn gcbfs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gcbfs")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn kv(text: &str, key: &str) -> String {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("{key} missing in\n{text}"))
        .to_string()
}

fn noise(seed: u64, channels: usize, len: usize, amp: f32) -> Vec<Vec<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..channels)
        .map(|_| (0..len).map(|_| rng.random_range(-amp..amp)).collect())
        .collect()
}

fn write(path: &Path, rate: u32, channels: Vec<Vec<f32>>) {
    write_wav(path, &AudioBuffer::new(rate, channels).unwrap(), SampleFormat::Float32).unwrap();
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn weights(dir: &Path, groups: &str, hidden: &str, seed: &str) -> PathBuf {
    let out = dir.join(format!("w-{groups}-{hidden}-{seed}.bin"));
    let o = gcbfs(&["init-weights", "--groups", groups, "--hidden", hidden, "--seed", seed, "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn info_reference_rows() {
    let o = gcbfs(&["info", "--groups", "8", "--hidden", "32"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let params: f64 = kv(&text, "params.total").parse().unwrap();
    assert!((params / 248.0e3 - 1.0).abs() < 0.02);
    let macs: f64 = kv(&text, "macs_per_second").parse().unwrap();
    assert!((macs / 0.46e9 - 1.0).abs() < 0.05);
    assert!(text.contains("params_delta_pct="));

    let o = gcbfs(&["info", "--groups", "1", "--hidden", "256", "--json"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((v["params"].as_f64().unwrap() / 1.27e6 - 1.0).abs() < 0.02);
    assert!((v["macs_per_second"].as_f64().unwrap() / 1.27e9 - 1.0).abs() < 0.05);
    assert_eq!(v["filter_head_params"], 174_760);
}

#[test]
fn info_table_lists_all_rows() {
    let o = gcbfs(&["info", "--table"]);
    assert_eq!(stdout(&o).lines().count(), 11);
}

#[test]
fn exit_codes() {
    assert_eq!(gcbfs(&["info", "--groups", "3"]).status.code(), Some(4));
    assert_eq!(gcbfs(&["info", "--bogus"]).status.code(), Some(2));
    assert_eq!(gcbfs(&[]).status.code(), Some(2));
}

#[test]
fn init_weights_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = weights(dir.path(), "4", "16", "7");
    let b = dir.path().join("copy.bin");
    gcbfs(&["init-weights", "--groups", "4", "--hidden", "16", "--seed", "7", "--out", p(&b)]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let c = weights(dir.path(), "4", "16", "8");
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
    let store = load_weights(&a).unwrap();
    assert_eq!(store.config, ModelConfig::new(4, 16));
    assert_eq!(std::fs::metadata(&a).unwrap().len() as usize, file_size(&store.config));
}

#[test]
fn separate_silence_and_lengths() {
    let dir = tempfile::tempdir().unwrap();
    let w = weights(dir.path(), "2", "8", "1");
    let input = dir.path().join("silence.wav");
    write(&input, 16_000, vec![vec![0.0; 1000]; 4]);
    let out = dir.path().join("out");
    let o = gcbfs(&["separate", "--weights", p(&w), "--input", p(&input), "--out-dir", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for name in ["speaker1.wav", "speaker2.wav"] {
        let a = read_wav(out.join(name)).unwrap();
        assert_eq!((a.num_channels(), a.len()), (2, 1000));
        assert!(a.channels.iter().flatten().all(|&v| v == 0.0));
    }
}

#[test]
fn separate_block_size_invariance() {
    let dir = tempfile::tempdir().unwrap();
    let w = weights(dir.path(), "4", "16", "2");
    let input = dir.path().join("in.wav");
    write(&input, 16_000, noise(3, 4, 8000, 0.5));
    let run = |block: &str, name: &str| {
        let out = dir.path().join(name);
        let o = gcbfs(&["separate", "--weights", p(&w), "--input", p(&input), "--out-dir", p(&out), "--block", block]);
        assert!(o.status.success());
        out
    };
    let a = run("16", "a");
    let b = run("1600", "b");
    for name in ["speaker1.wav", "speaker2.wav"] {
        let x = read_wav(a.join(name)).unwrap();
        let y = read_wav(b.join(name)).unwrap();
        let peak = x.channels.iter().flatten().fold(0.0f32, |m, v| m.max(v.abs()));
        let diff = x
            .channels
            .iter()
            .flatten()
            .zip(y.channels.iter().flatten())
            .fold(0.0f32, |m, (p, q)| m.max((p - q).abs()));
        assert!(diff <= 1e-6 * peak);
        assert_eq!(x.len(), 8000);
    }
}

#[test]
fn separate_rejects_bad_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let w = weights(dir.path(), "2", "8", "1");
    let wrong_rate = dir.path().join("rate.wav");
    write(&wrong_rate, 48_000, vec![vec![0.0; 160]; 4]);
    let stereo = dir.path().join("stereo.wav");
    write(&stereo, 16_000, vec![vec![0.0; 160]; 2]);
    let good = dir.path().join("good.wav");
    write(&good, 16_000, vec![vec![0.0; 160]; 4]);
    let corrupt = dir.path().join("corrupt.bin");
    let mut bytes = std::fs::read(&w).unwrap();
    bytes.truncate(bytes.len() / 2);
    std::fs::write(&corrupt, bytes).unwrap();
    let out = dir.path().join("out");
    let code = |weights: &Path, input: &Path, extra: &[&str]| {
        let mut args = vec!["separate", "--weights", p(weights), "--input", p(input), "--out-dir", p(&out)];
        args.extend_from_slice(extra);
        gcbfs(&args).status.code()
    };
    assert_eq!(code(&w, &wrong_rate, &[]), Some(3));
    assert_eq!(code(&w, &stereo, &[]), Some(3));
    assert_eq!(code(&corrupt, &good, &[]), Some(3));
    assert_eq!(code(&w, &good, &["--block", "20"]), Some(4));
    assert_eq!(code(&w, &good, &[]), Some(0));
}

fn simulate_into(dir: &Path, name: &str, seed: &str) -> PathBuf {
    let s1 = dir.join("s1.wav");
    let s2 = dir.join("s2.wav");
    let n = dir.join("n.wav");
    let mut src = noise(10, 3, 16_000, 0.5);
    write(&n, 16_000, vec![src.pop().unwrap()]);
    write(&s2, 16_000, vec![src.pop().unwrap()]);
    write(&s1, 16_000, vec![src.pop().unwrap()]);
    let out = dir.join(name);
    let o = gcbfs(&[
        "simulate", "--speech1", p(&s1), "--speech2", p(&s2), "--noise", p(&n), "--out-dir", p(&out),
        "--seed", seed, "--t60", "0.4", "--azimuth1", "30", "--azimuth2", "-60", "--components",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn simulate_outputs_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = simulate_into(dir.path(), "scene", "4");
    let chans = |f: &str| read_wav(out.join(f)).unwrap().num_channels();
    assert_eq!((chans("mixture.wav"), chans("target1.wav"), chans("target2.wav")), (4, 2, 2));

    let m = SceneManifest::parse(&std::fs::read_to_string(out.join("scene.txt")).unwrap()).unwrap();
    assert_eq!(m.samples, 16_000);
    assert_eq!(m.spec.t60, Some(0.4));
    let load = |f: &str| -> Vec<Vec<f64>> {
        read_wav(out.join(f)).unwrap().channels.iter().map(|c| c.iter().map(|&v| f64::from(v)).collect()).collect()
    };
    let (i1, i2, inz) = (load("image1.wav"), load("image2.wav"), load("image_noise.wav"));
    assert!((better_ear_snr_db(&i2, &i1) - m.draws.speaker2_gain_db).abs() < 0.1);
    assert!((better_ear_snr_db(&i1, &inz) - m.draws.noise_snr_db).abs() < 0.1);
    assert!((level_dbfs(&load("mixture.wav")) - m.draws.level_dbfs).abs() < 0.1);

    let again = simulate_into(dir.path(), "again", "4");
    for f in ["mixture.wav", "target1.wav", "target2.wav", "scene.txt"] {
        assert_eq!(std::fs::read(out.join(f)).unwrap(), std::fs::read(again.join(f)).unwrap());
    }
}

#[test]
fn eval_reports_si_sdr_and_permutation() {
    let dir = tempfile::tempdir().unwrap();
    let r1 = dir.path().join("r1.wav");
    let r2 = dir.path().join("r2.wav");
    write(&r1, 16_000, noise(20, 2, 4000, 0.5));
    write(&r2, 16_000, noise(21, 2, 4000, 0.5));

    let o = gcbfs(&["eval", "--estimate", p(&r1), "--reference", p(&r1)]);
    assert!(o.status.success());
    assert_eq!(kv(&stdout(&o), "speaker1.si_sdr"), "100");

    let o = gcbfs(&["eval", "--estimate", p(&r2), p(&r1), "--reference", p(&r1), p(&r2), "--upit", "--json"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["permutation"], serde_json::json!([2, 1]));
    assert_eq!(v["speakers"][0]["si_sdr"], 100.0);

    // the wrapper gives the library value
    let est = noise(22, 2, 4000, 0.5);
    let e = dir.path().join("e.wav");
    write(&e, 16_000, est.clone());
    let o = gcbfs(&["eval", "--estimate", p(&e), "--reference", p(&r1)]);
    let reference = read_wav(&r1).unwrap();
    let lib = gcbfs::objective::si_sdr(
        &gcbfs::objective::to_f64(&est[0]),
        &gcbfs::objective::to_f64(&reference.channels[0]),
    )
    .unwrap();
    assert_eq!(kv(&stdout(&o), "speaker1.si_sdr_left"), lib.to_string());

    let zero = dir.path().join("zero.wav");
    write(&zero, 16_000, vec![vec![0.0; 4000]; 2]);
    assert_eq!(gcbfs(&["eval", "--estimate", p(&r1), "--reference", p(&zero)]).status.code(), Some(4));
}

#[test]
fn reference_align_trims_latency() {
    let dir = tempfile::tempdir().unwrap();
    let r = noise(30, 2, 4000, 0.5);
    let delayed: Vec<Vec<f32>> = r
        .iter()
        .map(|c| {
            let mut d = vec![0.0; 32];
            d.extend_from_slice(&c[..c.len() - 32]);
            d
        })
        .collect();
    let rp = dir.path().join("r.wav");
    let ep = dir.path().join("e.wav");
    write(&rp, 16_000, r);
    write(&ep, 16_000, delayed);
    let o = gcbfs(&["eval", "--estimate", p(&ep), "--reference", p(&rp), "--reference-align"]);
    assert_eq!(kv(&stdout(&o), "speaker1.si_sdr"), "100");
    let o = gcbfs(&["eval", "--estimate", p(&ep), "--reference", p(&rp)]);
    let unaligned: f64 = kv(&stdout(&o), "speaker1.si_sdr").parse().unwrap();
    assert!(unaligned < 10.0);
}
