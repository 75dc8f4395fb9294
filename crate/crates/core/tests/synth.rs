use proptest::prelude::*;
use realtalk::container::MANIFEST;
use realtalk::morphable::gen_synthetic_model;
use realtalk::synth::{clip_seed, gen_coeff_track, generate_clip, oracle_render, Dataset, SynthConfig, SynthLaw};

/// Solves the normal equations `X^T X w = X^T y` by Gaussian elimination.
fn least_squares(x: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let n = x[0].len();
    let mut a = vec![vec![0.0; n + 1]; n];
    for (row, &yi) in x.iter().zip(y) {
        for i in 0..n {
            for j in 0..n {
                a[i][j] += row[i] * row[j];
            }
            a[i][n] += row[i] * yi;
        }
    }
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        for r in 0..n {
            if r != c {
                let f = a[r][c] / a[c][c];
                for k in c..=n {
                    a[r][k] -= f * a[c][k];
                }
            }
        }
    }
    (0..n).map(|i| a[i][n] / a[i][i]).collect()
}

#[test]
fn tracks_are_deterministic_and_seed_dependent() {
    let a = gen_coeff_track(7, 40, 8).unwrap();
    let b = gen_coeff_track(7, 40, 8).unwrap();
    let c = gen_coeff_track(8, 40, 8).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.expr, c.expr);
    assert_eq!(a.expr.shape(), [40, 8]);
    assert_eq!(a.pose.shape(), [40, 6]);
    assert_eq!(a.tau.shape(), [40, 2]);
}

#[test]
fn shape_is_constant_over_the_clip() {
    let t = gen_coeff_track(3, 12, 8).unwrap();
    let first = t.coeff(0).shape;
    assert!((0..12).all(|i| t.coeff(i).shape == first));
}

#[test]
fn noise_free_audio_is_linear_in_expression() {
    let cfg = SynthConfig::default();
    assert_eq!(cfg.audio_noise, 0.0);
    let law = SynthLaw::new(&cfg).unwrap();
    let mut xs = Vec::new();
    let mut ys: Vec<Vec<f64>> = vec![Vec::new(); 2 * cfg.audio_dim];
    for seed in 0..4 {
        let track = law.gen_coeff_track(seed, 50);
        let audio = law.derive_audio(&track, seed);
        assert_eq!(audio.shape(), [100, cfg.audio_dim]);
        for t in 0..50 {
            xs.push(track.expr_row(t).to_vec());
            for h in 0..2 {
                for i in 0..cfg.audio_dim {
                    ys[h * cfg.audio_dim + i].push(audio.at(&[2 * t + h, i]));
                }
            }
        }
    }
    for y in &ys {
        let w = least_squares(&xs, y);
        for (x, yi) in xs.iter().zip(y) {
            let pred: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum();
            assert!((pred - yi).abs() <= 1e-8, "{pred} vs {yi}");
        }
    }
}

#[test]
fn noisy_audio_differs_but_keeps_shape() {
    let cfg = SynthConfig { audio_noise: 0.1, ..SynthConfig::default() };
    let law = SynthLaw::new(&cfg).unwrap();
    let clean = SynthLaw::new(&SynthConfig::default()).unwrap();
    let t = law.gen_coeff_track(1, 10);
    let a = law.derive_audio(&t, 1);
    let b = clean.derive_audio(&t, 1);
    assert_eq!(a.shape(), b.shape());
    assert!(a.max_abs_diff(&b) > 0.0);
}

#[test]
fn oracle_render_is_deterministic_and_translates() {
    let cfg = SynthConfig::default();
    let m = gen_synthetic_model(cfg.global_seed, cfg.n_vertices, cfg.shape_dim, cfg.expr_dim).unwrap();
    let c = gen_coeff_track(2, 1, cfg.expr_dim).unwrap().coeff(0);
    let (h, w, f) = (cfg.height, cfg.width, cfg.focal_scale());
    let a = oracle_render(&m, &c, f, h, w).unwrap();
    let b = oracle_render(&m, &c, f, h, w).unwrap();
    assert_eq!(a.to_u8(), b.to_u8());
    let mut s = c.clone();
    s.tau[0] += 5.0;
    let shifted = oracle_render(&m, &s, f, h, w).unwrap();
    for ch in 0..3 {
        for y in 0..h {
            for x in 0..w - 5 {
                let (p, q) = (a.tensor().at(&[ch, y, x]), shifted.tensor().at(&[ch, y, x + 5]));
                assert!((p - q).abs() <= 1e-9, "({ch}, {y}, {x}): {p} vs {q}");
            }
        }
    }
}

#[test]
fn clips_carry_two_audio_rows_per_frame() {
    let cfg = SynthConfig::default();
    let law = SynthLaw::new(&cfg).unwrap();
    let m = gen_synthetic_model(0, cfg.n_vertices, cfg.shape_dim, cfg.expr_dim).unwrap();
    let c = generate_clip(&m, &law, 5, 6).unwrap();
    assert_eq!(c.audio.shape(), [12, cfg.audio_dim]);
    assert_eq!(c.frames.len(), 6 * 3 * cfg.height * cfg.width);
    assert!(generate_clip(&m, &law, 5, 0).is_err());
}

#[test]
fn dataset_round_trips_exactly() {
    let cfg = SynthConfig { height: 32, width: 32, ..SynthConfig::default() };
    let d = Dataset::generate(&cfg, 3, 2, 5).unwrap();
    assert_eq!(d.clips[0].clip_seed, clip_seed(cfg.global_seed, 3));
    let dir = tempfile::tempdir().unwrap();
    d.write(dir.path()).unwrap();
    assert_eq!(Dataset::read(dir.path()).unwrap(), d);
}

#[test]
fn corrupted_or_truncated_files_are_rejected() {
    let cfg = SynthConfig { height: 16, width: 16, ..SynthConfig::default() };
    let d = Dataset::generate(&cfg, 0, 1, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    d.write(dir.path()).unwrap();
    let file = dir.path().join("clip0000.frames.rta");
    let bytes = std::fs::read(&file).unwrap();

    let mut bad = bytes.clone();
    bad[0] ^= 0xff;
    std::fs::write(&file, &bad).unwrap();
    assert!(Dataset::read(dir.path()).is_err());

    for cut in [1, 4, 9, bytes.len() / 2, bytes.len() - 1] {
        std::fs::write(&file, &bytes[..cut]).unwrap();
        assert!(Dataset::read(dir.path()).is_err(), "cut at {cut}");
    }
    std::fs::write(&file, &bytes).unwrap();
    assert!(Dataset::read(dir.path()).is_ok());
    std::fs::remove_file(dir.path().join(MANIFEST)).unwrap();
    assert!(Dataset::read(dir.path()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn expression_steps_respect_the_bound(seed in 0u64..100_000, d_e in 2usize..12) {
        let t = gen_coeff_track(seed, 60, d_e).unwrap();
        for i in 0..59 {
            for (a, b) in t.expr_row(i).iter().zip(t.expr_row(i + 1)) {
                prop_assert!((b - a).abs() <= t.step_bound + 1e-12);
            }
        }
    }

    #[test]
    fn audio_length_is_twice_frames(frames in 1usize..30, seed in 0u64..1000) {
        let law = SynthLaw::new(&SynthConfig::default()).unwrap();
        let t = law.gen_coeff_track(seed, frames);
        let a = law.derive_audio(&t, seed);
        prop_assert_eq!(a.shape(), &[2 * frames, 16]);
    }
}
