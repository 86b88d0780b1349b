use panotile_core::diffusion::run_sampling;
use panotile_core::eval::halves_discrepancy;
use panotile_core::tiler::{build_schedule, run_tiled_translation};
use panotile_core::{
    ColumnPadding, Conditioning, ConvToyDenoiser, LinearGaussianDenoiser, NoControl, NoiseSchedule, ScheduleParams,
    Tensor, TileMode, Tiler, ZeroEpsDenoiser,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn normal(c: usize, h: usize, w: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(c, h, w, |_, _, _| StandardNormal.sample(&mut rng))
}

fn half_symmetric(h: usize, w: usize, seed: u64) -> Tensor {
    let half = normal(4, h, w / 2, seed);
    Tensor::hconcat(&[&half, &half]).unwrap()
}

fn schedule(steps: usize) -> NoiseSchedule {
    NoiseSchedule::new(ScheduleParams {
        ddim_steps: steps,
        ..ScheduleParams::default()
    })
    .unwrap()
}

/// Per-column coverage counted from the layout rules directly: regular
/// windows of width `w` every ω latent columns, plus (paper mode) the
/// wrapping stitch `[3w/2, 2w) ∪ [0, w/2)` counted twice.
fn coverage(image_width: usize, omega: usize, mode: TileMode) -> Vec<u32> {
    let w = image_width / 8;
    let mut pi = vec![0u32; 2 * w];
    let mut add = |start: usize, times: u32| {
        for i in 0..w {
            pi[(start + i) % (2 * w)] += times;
        }
    };
    match mode {
        TileMode::Paper => {
            for s in (0..=w).step_by(omega) {
                add(s, 1);
            }
            add(3 * w / 2, 2);
        }
        TileMode::Circular => {
            for s in (0..2 * w).step_by(omega) {
                add(s, 1);
            }
        }
    }
    pi
}

#[test]
fn weight_field_matches_coverage_oracle() {
    for width in [256usize, 512, 1024] {
        for omega in [1, width / 64, width / 32] {
            for mode in [TileMode::Paper, TileMode::Circular] {
                let s = build_schedule(width, omega, mode).unwrap();
                let wf = s.weight_field(3);
                let want = coverage(width, omega, mode);
                for y in 0..3 {
                    for (x, &p) in want.iter().enumerate() {
                        assert_eq!(wf.get(y, x), p as f32, "W={width} ω={omega} {mode} x={x}");
                    }
                }
            }
        }
    }
}

#[test]
fn paper_stitch_covers_the_seam_of_the_extension() {
    // Regular windows never straddle column 2w−1 → 0; only the stitch does.
    let s = build_schedule(1024, 16, TileMode::Paper).unwrap();
    let straddling: Vec<_> = s.windows().iter().filter(|w| w.range.wrap).collect();
    assert_eq!(straddling.len(), 1);
    assert_eq!(straddling[0].multiplicity, 2);
    assert_eq!((straddling[0].range.start, straddling[0].range.len), (192, 128));
}

#[test]
fn zero_eps_tiling_equals_untiled_sampling() {
    let noise = schedule(10);
    let x = normal(4, 8, 64, 1);
    let (want, _) = run_sampling(&x, &ZeroEpsDenoiser, &Conditioning::null(), &noise, &|_| Ok(None), false).unwrap();
    for mode in [TileMode::Paper, TileMode::Circular] {
        let tiler = Tiler::new(build_schedule(256, 4, mode).unwrap(), 3).unwrap();
        let got = run_tiled_translation(&x, &tiler, &ZeroEpsDenoiser, &Conditioning::null(), &NoControl, &noise)
            .unwrap();
        assert!(got.bit_eq(&want), "{mode}");
    }
}

#[test]
fn circular_mode_keeps_halves_for_every_denoiser() {
    let noise = schedule(12);
    let tiler = Tiler::new(build_schedule(256, 4, TileMode::Circular).unwrap(), 0).unwrap();
    let x = half_symmetric(8, 64, 3);
    let cond = Conditioning::from_prompt("forest", 0);
    let lg = LinearGaussianDenoiser::new(0.1, 0.5).unwrap();
    let zero_pad = ConvToyDenoiser::with_padding(3, ColumnPadding::Zero);
    let circ_pad = ConvToyDenoiser::new(3);
    let denoisers: [&dyn panotile_core::Denoiser; 3] = [&lg, &zero_pad, &circ_pad];
    for d in denoisers {
        let mut worst = 0.0f64;
        tiler
            .run(&x, d, &cond, &NoControl, &noise, &mut |_, xi| {
                worst = worst.max(halves_discrepancy(xi).unwrap().max);
            })
            .unwrap();
        assert!(worst <= 1e-4, "{}: {worst}", d.name());
    }
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let noise = schedule(6);
    let d = ConvToyDenoiser::with_padding(8, ColumnPadding::Zero);
    let x = normal(4, 8, 64, 8);
    let cond = Conditioning::from_prompt("harbour", 0);
    let run = |threads| {
        let tiler = Tiler::new(build_schedule(256, 4, TileMode::Paper).unwrap(), threads).unwrap();
        run_tiled_translation(&x, &tiler, &d, &cond, &NoControl, &noise).unwrap()
    };
    let one = run(1);
    for threads in [2, 5, 8] {
        assert!(run(threads).bit_eq(&one), "threads {threads}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn circular_blend_preserves_half_symmetry(seed in any::<u64>(), om in prop::sample::select(vec![1usize, 2, 4, 8])) {
        let noise = schedule(3);
        let tiler = Tiler::new(build_schedule(256, om, TileMode::Circular).unwrap(), 1).unwrap();
        let d = ConvToyDenoiser::with_padding(seed, ColumnPadding::Zero);
        let x = half_symmetric(8, 64, seed);
        let out = run_tiled_translation(&x, &tiler, &d, &Conditioning::null(), &NoControl, &noise).unwrap();
        prop_assert!(halves_discrepancy(&out).unwrap().max <= 1e-4);
    }

    #[test]
    fn blended_step_stays_within_window_outputs(seed in any::<u64>()) {
        // Each column is a convex combination of window results; with the
        // zero predictor all windows agree, so the blend is the common value.
        let noise = schedule(4);
        let tiler = Tiler::new(build_schedule(128, 1, TileMode::Paper).unwrap(), 2).unwrap();
        let x = normal(4, 8, 32, seed);
        let info = noise.step_info(4);
        let got = tiler
            .blended_step(&x, &ZeroEpsDenoiser, &Conditioning::null(), &NoControl, &info, noise.alpha_bar(3))
            .unwrap();
        let k = (noise.alpha_bar(3) / info.alpha_bar).sqrt();
        for (a, b) in got.data().iter().zip(x.data()) {
            prop_assert!((*a as f64 - k * *b as f64).abs() <= 1e-5 * (1.0 + (k * *b as f64).abs()));
        }
    }
}
