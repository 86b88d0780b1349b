use panotile_core::eval::{seam_metric, sweep, synth_corpus, synth_panorama, write_sweep_csv, SweepConfig};
use panotile_core::pipeline::{ControlMode, DenoiserKind};
use panotile_core::{Conditioning, PipelineConfig, Tensor, TileMode};

#[test]
fn synthetic_panoramas_have_no_seam() {
    let worst = (0..50)
        .map(|s| seam_metric(&synth_panorama(s, 256, 64, 3).unwrap()).unwrap().seam_ratio)
        .fold(0.0f64, f64::max);
    assert!(worst <= 1.2, "worst seam ratio {worst}");
}

#[test]
fn seam_ratio_barely_moves_under_rotation() {
    for seed in 0..10 {
        let img = synth_panorama(seed, 256, 32, 3).unwrap();
        let base = seam_metric(&img).unwrap().seam_ratio;
        for k in (1..256).step_by(5) {
            let r = seam_metric(&img.rotate_columns(k)).unwrap().seam_ratio;
            assert!((r - base).abs() < 0.1 * base, "seed {seed} k {k}: {r} vs {base}");
        }
    }
}

#[test]
fn hard_edge_counts_every_pair() {
    // One unit jump at the wrap, one inside: the interior mean spreads it
    // over W−1 adjacent pairs.
    let w = 32;
    let img = Tensor::from_fn(3, 4, w, |_, _, x| if x < w / 2 { 0.0 } else { 1.0 });
    let s = seam_metric(&img).unwrap();
    assert_eq!(s.wrap_gap, 1.0);
    assert!((s.interior_gap - 1.0 / (w - 1) as f64).abs() < 1e-12);
    assert!((s.seam_ratio - (w - 1) as f64).abs() < 1e-9);
}

fn small_sweep(threads: usize) -> SweepConfig {
    let mut base = PipelineConfig::for_image(128, 32);
    base.denoiser = DenoiserKind::Zero;
    base.control = ControlMode::None;
    base.schedule.ddim_steps = 3;
    base.threads = threads;
    SweepConfig {
        alphas: vec![128, 64, 96, 20],
        omegas: vec![2],
        modes: vec![TileMode::Paper, TileMode::Circular],
        base,
        target: Conditioning::null(),
        timing: false,
    }
}

#[test]
fn sweep_rows_are_ordered_and_byte_stable() {
    let corpus = synth_corpus(2, 40, 128, 32, 2).unwrap();
    let rows = sweep(&corpus, &small_sweep(1)).unwrap();
    assert_eq!(rows.len(), 2 * 4 * 2);
    let keys: Vec<(usize, usize, String)> = rows.iter().map(|r| (r.corpus, r.alpha, r.mode.clone())).collect();
    assert_eq!(keys[0], (0, 128, "paper".into()));
    assert_eq!(keys[1], (0, 128, "circular".into()));
    assert_eq!(keys[8], (1, 128, "paper".into()));

    let paper: Vec<Option<usize>> = rows[..8].iter().step_by(2).map(|r| r.matching_windows).collect();
    assert_eq!(paper, [Some(2), Some(2), Some(1), None]);
    assert!(rows[6].skip_reason.contains("multiple of 8"));
    assert!(rows.iter().all(|r| r.wall_ms == 0));

    let mut a = Vec::new();
    let mut b = Vec::new();
    write_sweep_csv(&rows, &mut a).unwrap();
    write_sweep_csv(&sweep(&corpus, &small_sweep(4)).unwrap(), &mut b).unwrap();
    assert_eq!(a, b);
    let header = String::from_utf8(a).unwrap();
    assert!(header.starts_with(
        "corpus,alpha,omega,mode,matching_windows,seam_ratio,halves_max,wall_ms,skip_reason\n"
    ));
}
