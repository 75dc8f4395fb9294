use realtalk::baselines::AlignmentKind;
use realtalk::bench::{bench_suite, config_name, count_params, harness_overhead, time_forward, BenchReport};
use realtalk::nn::conv_param_count;
use realtalk::renderer::RendererConfig;

fn conv(ci: usize, co: usize) -> usize {
    co * ci * 9 + co
}

fn linear(i: usize, o: usize) -> usize {
    i * o + o
}

/// Parameter count written out from the architecture description.
fn closed_form(cfg: &RendererConfig) -> usize {
    let ch = |i: usize| cfg.level_channels(i);
    let d = cfg.stages;
    let nb = cfg.blocks_per_stage;
    let mut n = conv(3, ch(0));
    for i in 1..=d {
        n += conv(ch(i - 1), ch(i)) + nb * 2 * conv(ch(i), ch(i));
    }
    let mut w = cfg.coeff_dim();
    for _ in 0..cfg.adain_mlp_layers {
        n += linear(w, cfg.adain_hidden);
        w = cfg.adain_hidden;
    }
    for i in 0..d {
        let (ci, co) = (ch(d - i), ch(d - i - 1));
        if cfg.attention_stages.contains(&i) {
            n += match cfg.alignment {
                AlignmentKind::FiaCrossAttention => 4 * linear(ci, ci),
                AlignmentKind::FlowWarp => {
                    let hid = (ci / 4).max(1);
                    conv(2 * ci, hid) + conv(hid, 2)
                }
                AlignmentKind::Deformation => conv(ci, 18) + ci * ci * 9 + ci,
            };
        }
        n += linear(cfg.adain_hidden, 2 * co) + conv(ci, co) + nb * 2 * conv(co, co);
    }
    n + conv(ch(0), 3)
}

fn small(kind: AlignmentKind, blocks: usize) -> RendererConfig {
    RendererConfig { height: 32, width: 32, base_channels: 8, alignment: kind, blocks_per_stage: blocks, ..Default::default() }
}

#[test]
fn single_conv_closed_form() {
    assert_eq!(conv_param_count(3, 8, 3), 8 * 3 * 9 + 8);
    assert_eq!(conv_param_count(16, 4, 1), 68);
}

#[test]
fn counts_match_the_closed_form() {
    for kind in AlignmentKind::ALL {
        for blocks in 1..=3 {
            let cfg = small(kind, blocks);
            assert_eq!(count_params(&cfg).unwrap(), closed_form(&cfg), "{kind} b{blocks}");
        }
    }
    let full = RendererConfig::default();
    assert_eq!(count_params(&full).unwrap(), closed_form(&full));
}

#[test]
fn count_orderings() {
    for kind in AlignmentKind::ALL {
        let c: Vec<usize> = (1..=3).map(|b| count_params(&small(kind, b)).unwrap()).collect();
        assert!(c[0] < c[1] && c[1] < c[2], "{kind}: {c:?}");
    }
    for b in 1..=3 {
        let fia = count_params(&small(AlignmentKind::FiaCrossAttention, b)).unwrap();
        let def = count_params(&small(AlignmentKind::Deformation, b)).unwrap();
        assert!(fia < def);
    }
}

#[test]
fn doubling_width_roughly_quadruples_counts() {
    let a = count_params(&RendererConfig { base_channels: 16, ..small(AlignmentKind::FiaCrossAttention, 2) }).unwrap();
    let b = count_params(&RendererConfig { base_channels: 32, ..small(AlignmentKind::FiaCrossAttention, 2) }).unwrap();
    let r = b as f64 / a as f64;
    assert!((r - 4.0).abs() <= 0.4, "ratio {r}");
}

#[test]
fn suite_has_full_cross_product_and_round_trips() {
    let base = RendererConfig { height: 16, width: 16, base_channels: 4, attn_heads: 2, ..Default::default() };
    let report = bench_suite(&base, &AlignmentKind::ALL, &[1, 2, 3], 1, 0, 0).unwrap();
    assert_eq!(report.rows.len(), 9);
    for k in AlignmentKind::ALL {
        for b in 1..=3 {
            let row = report.row(&config_name(k, b)).unwrap();
            assert_eq!(row.input_shape, "1x3x16x16");
            assert!(row.iters >= 30 && row.median_ms > 0.0);
        }
    }
    assert!(report.overhead_ms >= 0.0);
    assert_eq!(BenchReport::from_csv(&report.to_csv()).unwrap(), report);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bench.csv");
    report.write(&path).unwrap();
    assert_eq!(BenchReport::read(&path).unwrap(), report);
}

#[test]
fn forward_timing_exceeds_harness_overhead() {
    let cfg = RendererConfig { height: 16, width: 16, base_channels: 4, attn_heads: 2, ..Default::default() };
    let t = time_forward(&cfg, 1, 0, 0).unwrap();
    let o = harness_overhead(30).unwrap();
    assert!(t.median_ms > o);
    assert!(t.median_ms <= t.mean_ms * 10.0);
}
