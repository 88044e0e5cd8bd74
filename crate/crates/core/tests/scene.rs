use gcbfs::scene::{
    better_ear_snr_db, drr_db, fft_convolve, level_dbfs, render_scene, scale_sources,
    scale_sources_with, synth_ir, MicGeometry, MixingDraws, SceneManifest, SceneSpec,
    SourcePosition,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn noise(seed: u64, len: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn spec(t60: Option<f64>) -> SceneSpec {
    SceneSpec {
        speaker1: SourcePosition::new(40.0, 1.0),
        speaker2: SourcePosition::new(-70.0, 1.5),
        noise: SourcePosition::new(180.0, 2.0),
        t60,
        geometry: MicGeometry::default(),
        seed: 5,
    }
}

#[test]
fn lateral_source_itd() {
    let ir = synth_ir(SourcePosition::new(90.0, 1.0), &MicGeometry::default(), None, 0).unwrap();
    let itd = ir.direct[2].delay - ir.direct[0].delay;
    let expected = 0.18 / 343.0 * 16000.0;
    assert!((itd - expected).abs() < 0.1, "{itd} vs {expected}");
    assert!(ir.direct[0].gain > ir.direct[2].gain);
}

#[test]
fn frontal_source_is_symmetric() {
    let ir = synth_ir(SourcePosition::new(0.0, 1.2), &MicGeometry::default(), None, 0).unwrap();
    assert!((ir.direct[0].delay - ir.direct[2].delay).abs() < 1e-12);
    assert!((ir.direct[1].delay - ir.direct[3].delay).abs() < 1e-12);
    // front mics are closer to a frontal source
    assert!(ir.direct[0].delay < ir.direct[1].delay);
}

#[test]
fn itd_monotone_in_sine_of_azimuth() {
    let g = MicGeometry::default();
    let mut last = f64::NEG_INFINITY;
    for az in (-90..=90).step_by(5) {
        let ir = synth_ir(SourcePosition::new(az as f64, 1.0), &g, None, 0).unwrap();
        let itd = ir.direct[2].delay - ir.direct[0].delay;
        assert!(itd > last);
        last = itd;
    }
}

#[test]
fn direct_path_is_a_delayed_impulse() {
    let ir = synth_ir(SourcePosition::new(30.0, 1.3), &MicGeometry::default(), None, 0).unwrap();
    for m in 0..4 {
        let h = ir.direct_ir(m);
        let peak = h
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
            .unwrap()
            .0;
        assert!((peak as f64 - ir.direct[m].delay).abs() <= 0.5);
        let dc: f64 = h.iter().sum();
        assert!((dc / ir.direct[m].gain - 1.0).abs() < 0.01);
    }
    assert!(ir.late.is_empty());
}

#[test]
fn tail_decays_sixty_db_over_t60() {
    let t60 = 0.5;
    let ir = synth_ir(SourcePosition::new(0.0, 1.0), &MicGeometry::default(), Some(t60), 9).unwrap();
    for tail in &ir.late {
        // least-squares line through windowed energies in dB
        let win = 160;
        let pts: Vec<(f64, f64)> = tail
            .chunks_exact(win)
            .enumerate()
            .map(|(i, c)| {
                let e = c.iter().map(|v| v * v).sum::<f64>() / win as f64;
                ((i as f64 + 0.5) * win as f64 / 16000.0, 10.0 * e.log10())
            })
            .collect();
        let n = pts.len() as f64;
        let (sx, sy) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
        let (mx, my) = (sx / n, sy / n);
        let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
            / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
        let drop = -slope * t60;
        assert!((drop - 60.0).abs() < 0.5, "drop {drop}");
    }
}

#[test]
fn tail_energy_follows_drr_rule() {
    assert!((drr_db(0.1) - 10.0).abs() < 1e-12);
    assert!((drr_db(1.0) + 5.0).abs() < 1e-12);
    let ir = synth_ir(SourcePosition::new(10.0, 1.0), &MicGeometry::default(), Some(0.4), 3).unwrap();
    for m in 0..4 {
        let d: f64 = ir.direct_ir(m).iter().map(|v| v * v).sum();
        let l: f64 = ir.late[m].iter().map(|v| v * v).sum();
        assert!((10.0 * (d / l).log10() - drr_db(0.4)).abs() < 1e-9);
    }
    // tails are decorrelated across mics
    let n = ir.late[0].len();
    let dot: f64 = (0..n).map(|i| ir.late[0][i] * ir.late[2][i]).sum();
    let e0: f64 = ir.late[0].iter().map(|v| v * v).sum();
    let e2: f64 = ir.late[2].iter().map(|v| v * v).sum();
    assert!(dot.abs() / (e0 * e2).sqrt() < 0.1);
}

#[test]
fn anechoic_scene_is_delayed_sum() {
    let s1 = noise(1, 4000);
    let s2 = noise(2, 4000);
    let sp = spec(None);
    let r = render_scene(&sp, &s1, &s2, None).unwrap();
    assert_eq!((r.speech1.len(), r.target1.len(), r.target2.len()), (4, 2, 2));
    let mix = r.mixture();
    assert_eq!(mix.len(), 4);
    // the targets are the front-mic images
    assert_eq!(r.target1[0], r.speech1[0]);
    assert_eq!(r.target2[1], r.speech2[2]);
    let ir1 = synth_ir(sp.speaker1, &sp.geometry, None, 0).unwrap();
    let want = fft_convolve(&s1, &ir1.direct_ir(1), 4000);
    for (a, b) in want.iter().zip(&r.speech1[1]) {
        assert!((a - b).abs() < 1e-12);
    }
    for n in 0..4000 {
        assert!((mix[3][n] - r.speech1[3][n] - r.speech2[3][n]).abs() < 1e-15);
    }
}

#[test]
fn reverberant_scene_keeps_direct_targets() {
    let s1 = noise(1, 8000);
    let s2 = noise(2, 8000);
    let nz = noise(3, 8000);
    let r = render_scene(&spec(Some(0.3)), &s1, &s2, Some(&nz)).unwrap();
    let dry = render_scene(&spec(None), &s1, &s2, None).unwrap();
    assert_eq!(r.target1, dry.target1);
    assert_ne!(r.speech1[0], dry.speech1[0]);
    assert!(r.noise.iter().all(|c| c.iter().any(|&v| v != 0.0)));
}

#[test]
fn forced_draws_are_remeasured() {
    let s1 = noise(1, 16000);
    let s2 = noise(2, 16000);
    let nz = noise(3, 16000);
    let r = render_scene(&spec(Some(0.5)), &s1, &s2, Some(&nz)).unwrap();
    for draws in [
        MixingDraws { speaker2_gain_db: 0.0, noise_snr_db: 6.2, level_dbfs: -26.0 },
        MixingDraws { speaker2_gain_db: -5.0, noise_snr_db: 1.0, level_dbfs: -31.0 },
    ] {
        let s = scale_sources_with(&r, draws).unwrap();
        let k = s.level_gain;
        let sc = |x: &[Vec<f64>], g: f64| -> Vec<Vec<f64>> {
            x.iter().map(|c| c.iter().map(|v| v * g).collect()).collect()
        };
        let img1 = sc(&r.speech1, k);
        let img2 = sc(&r.speech2, s.speaker2_gain * k);
        let imgn = sc(&r.noise, s.noise_gain * k);
        assert!((better_ear_snr_db(&img2, &img1) - draws.speaker2_gain_db).abs() < 0.1);
        assert!((better_ear_snr_db(&img1, &imgn) - draws.noise_snr_db).abs() < 0.1);
        assert!((level_dbfs(&s.mixture) - draws.level_dbfs).abs() < 0.1);
        // the level step keeps target/mixture ratios
        let ratio_before = level_dbfs(&r.target1) - level_dbfs(&(0..4).map(|m| {
            (0..16000).map(|n| r.speech1[m][n] + s.speaker2_gain * r.speech2[m][n] + s.noise_gain * r.noise[m][n]).collect()
        }).collect::<Vec<Vec<f64>>>());
        let ratio_after = level_dbfs(&s.target1) - level_dbfs(&s.mixture);
        assert!((ratio_before - ratio_after).abs() < 1e-9);
    }
}

#[test]
fn identical_talkers_get_equal_levels() {
    let s1 = noise(4, 8000);
    let mut sp = spec(None);
    sp.speaker2 = sp.speaker1;
    let r = render_scene(&sp, &s1, &s1, None).unwrap();
    let draws = MixingDraws { speaker2_gain_db: 0.0, noise_snr_db: 6.2, level_dbfs: -26.0 };
    let s = scale_sources_with(&r, draws).unwrap();
    assert!((s.speaker2_gain - 1.0).abs() < 0.012);
    assert_eq!(s.noise_gain, 0.0);
}

#[test]
fn seeded_scenes_are_identical() {
    let s1 = noise(1, 4000);
    let s2 = noise(2, 4000);
    let nz = noise(3, 4000);
    let a = scale_sources(&render_scene(&spec(Some(0.7)), &s1, &s2, Some(&nz)).unwrap(), 42).unwrap();
    let b = scale_sources(&render_scene(&spec(Some(0.7)), &s1, &s2, Some(&nz)).unwrap(), 42).unwrap();
    assert_eq!(a, b);
    let c = scale_sources(&render_scene(&spec(Some(0.7)), &s1, &s2, Some(&nz)).unwrap(), 43).unwrap();
    assert_ne!(a.draws, c.draws);
}

#[test]
fn draws_follow_their_distributions() {
    let n = 4000;
    let draws: Vec<MixingDraws> = (0..n).map(MixingDraws::sample).collect();
    let stats = |f: &dyn Fn(&MixingDraws) -> f64| {
        let m = draws.iter().map(f).sum::<f64>() / n as f64;
        let v = draws.iter().map(|d| (f(d) - m).powi(2)).sum::<f64>() / n as f64;
        (m, v.sqrt())
    };
    let (m, s) = stats(&|d| d.speaker2_gain_db);
    assert!(m.abs() < 0.3 && (s - 4.1).abs() < 0.2);
    let (m, s) = stats(&|d| d.noise_snr_db);
    assert!((m - 6.2).abs() < 0.3 && (s - 4.4).abs() < 0.2);
    let (m, s) = stats(&|d| d.level_dbfs);
    assert!((m + 26.0).abs() < 0.3 && (s - 5.0).abs() < 0.25);
}

#[test]
fn manifest_round_trip() {
    let m = SceneManifest {
        spec: spec(Some(0.25)),
        draws: MixingDraws::sample(3),
        samples: 12345,
    };
    assert_eq!(SceneManifest::parse(&m.to_text()).unwrap(), m);
    let anechoic = SceneManifest { spec: spec(None), ..m };
    assert_eq!(SceneManifest::parse(&anechoic.to_text()).unwrap(), anechoic);
    assert!(SceneManifest::parse("seed=1\nbroken").is_err());
}

#[test]
fn invalid_specs_are_rejected() {
    let x = vec![0.0; 100];
    let mut s = spec(Some(1.5));
    assert!(render_scene(&s, &x, &x, None).is_err());
    s.t60 = None;
    s.speaker1.distance = 0.5;
    assert!(render_scene(&s, &x, &x, None).is_err());
    assert!(render_scene(&spec(None), &x, &x[..50], None).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn fft_convolution_matches_direct(
        x in proptest::collection::vec(-1.0f64..1.0, 1..60),
        h in proptest::collection::vec(-1.0f64..1.0, 1..40),
    ) {
        let full = x.len() + h.len() - 1;
        let got = fft_convolve(&x, &h, full);
        for (n, g) in got.iter().enumerate() {
            let want: f64 = (0..h.len())
                .filter(|&k| n >= k && n - k < x.len())
                .map(|k| h[k] * x[n - k])
                .sum();
            prop_assert!((g - want).abs() < 1e-10);
        }
    }
}
