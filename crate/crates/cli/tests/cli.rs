use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use panotile_core::codec::CodecKind;
use panotile_core::eval::{halves_discrepancy, synth_noncircular, synth_panorama};
use panotile_core::tensor::{read_png, write_png};
use panotile_core::Tensor;
use tempfile::TempDir;

fn panotile(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_panotile"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn value<'a>(text: &'a str, key: &str) -> Option<&'a str> {
    text.lines()
        .filter_map(|l| l.split_once(" = "))
        .find(|(k, _)| *k == key)
        .map(|(_, v)| v)
}

fn png(dir: &TempDir, name: &str, img: &Tensor) -> PathBuf {
    let p = dir.path().join(name);
    write_png(&p, img).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const PIPELINE_FLAGS: &[&str] = &[
    "--alpha",
    "--omega",
    "--mode",
    "--control",
    "--denoiser",
    "--denoiser-seed",
    "--conv-padding",
    "--lg-mean",
    "--lg-variance",
    "--codec",
    "--train-steps",
    "--beta-start",
    "--beta-end",
    "--ddim-steps",
    "--tau-f",
    "--tau-a",
    "--lambda-s",
    "--lambda-a",
    "--noise-seed",
    "--prompt-seed",
    "--prompt",
    "--threads",
    "--config",
];

#[test]
fn help_documents_every_flag() {
    let mut translate: Vec<&str> = vec!["--input", "--output", "--report", "--latent", "--dump-schedule"];
    translate.extend_from_slice(PIPELINE_FLAGS);
    let mut invert: Vec<&str> = vec!["--input", "--output", "--clean-latent"];
    invert.extend_from_slice(PIPELINE_FLAGS);
    let mut sweep: Vec<&str> = vec![
        "--width", "--height", "--corpus", "--seed", "--harmonics", "--alphas", "--omegas", "--modes",
        "--timing", "--out",
    ];
    sweep.extend_from_slice(PIPELINE_FLAGS);
    let cases: Vec<(&str, Vec<&str>)> = vec![
        ("extend", vec!["--input", "--output", "--alpha"]),
        ("invert", invert),
        ("translate", translate.clone()),
        ("translate-free", translate.clone()),
        ("baseline", translate),
        ("seam-metric", vec!["--input", "--halves"]),
        ("analyze-alpha", vec!["--width", "--alpha", "--omega", "--mode"]),
        ("sweep", sweep),
        ("dump-schedule", vec!["--width", "--omega", "--mode"]),
    ];
    for (sub, flags) in cases {
        let o = panotile(&[sub, "--help"]);
        assert!(o.status.success(), "{sub} --help failed");
        let text = stdout(&o);
        for flag in flags {
            let line = text
                .lines()
                .find(|l| l.trim_start().starts_with(&format!("{flag} ")) || l.trim() == flag)
                .unwrap_or_else(|| panic!("{sub}: {flag} missing from help"));
            // Every flag line carries a description after the value name.
            let words = line.split_whitespace().count();
            assert!(words >= 3, "{sub}: {flag} undocumented: {line:?}");
        }
    }
}

#[test]
fn analyze_alpha_counts() {
    for (alpha, want) in [("1024", "2"), ("512", "2"), ("768", "1")] {
        let o = panotile(&["analyze-alpha", "--width", "1024", "--omega", "16", "--alpha", alpha]);
        assert!(o.status.success());
        assert_eq!(value(&stdout(&o), "matching_windows"), Some(want), "alpha {alpha}");
    }
}

#[test]
fn extend_full_alpha_gives_identical_halves() {
    let dir = TempDir::new().unwrap();
    let img = synth_panorama(3, 1024, 16, 3).unwrap();
    let input = png(&dir, "in.png", &img);
    let out = dir.path().join("ext.png");
    let o = panotile(&["extend", "--input", s(&input), "--output", s(&out), "--alpha", "1024"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ext = read_png(&out).unwrap();
    assert_eq!(ext.dims(), (3, 16, 2048));
    assert_eq!(halves_discrepancy(&ext).unwrap().max, 0.0);
}

#[test]
fn zero_denoiser_translation_is_codec_round_trip() {
    let dir = TempDir::new().unwrap();
    let img = read_png(png(&dir, "src.png", &synth_panorama(5, 64, 16, 2).unwrap())).unwrap();
    let input = png(&dir, "in.png", &img);
    let out = dir.path().join("out.png");
    let o = panotile(&[
        "translate", "--input", s(&input), "--output", s(&out), "--denoiser", "zero", "--control", "none",
        "--ddim-steps", "10",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let codec = CodecKind::BlockAverage.build();
    let expect = codec.decode(&codec.encode(&img).unwrap()).unwrap();
    let expect_path = png(&dir, "expect.png", &expect);
    let got = read_png(&out).unwrap();
    assert!(got.max_abs_diff(&read_png(&expect_path).unwrap()).unwrap() <= 1.0 / 255.0 + 1e-6);

    let a = stdout(&panotile(&["seam-metric", "--input", s(&out)]));
    let b = stdout(&panotile(&["seam-metric", "--input", s(&expect_path)]));
    let ra: f64 = value(&a, "seam_ratio").unwrap().parse().unwrap();
    let rb: f64 = value(&b, "seam_ratio").unwrap().parse().unwrap();
    assert!((ra - rb).abs() <= 0.05 * rb.max(1.0), "{ra} vs {rb}");
}

#[test]
fn validation_errors_exit_1_without_output() {
    let dir = TempDir::new().unwrap();
    let input = png(&dir, "in.png", &synth_panorama(1, 64, 16, 2).unwrap());
    let out = dir.path().join("out.png");
    let o = panotile(&[
        "translate", "--input", s(&input), "--output", s(&out), "--alpha", "20", "--omega", "3",
    ]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("alpha") && err.contains("omega"), "{err}");
    assert!(!out.exists());

    assert_eq!(panotile(&["translate", "--nonsense"]).status.code(), Some(1));
    assert_eq!(
        panotile(&["analyze-alpha", "--width", "1024", "--mode", "spiral"]).status.code(),
        Some(1)
    );
}

#[test]
fn runtime_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out.png");
    let missing = dir.path().join("missing.png");
    let o = panotile(&["translate", "--input", s(&missing), "--output", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());

    // pnp needs payloads the zero denoiser never produces.
    let input = png(&dir, "in.png", &synth_panorama(1, 64, 16, 2).unwrap());
    let o = panotile(&[
        "translate", "--input", s(&input), "--output", s(&out), "--denoiser", "zero", "--ddim-steps", "2",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("stage"));
    assert!(!out.exists());
}

#[test]
fn config_file_merges_under_flags() {
    let dir = TempDir::new().unwrap();
    let input = png(&dir, "in.png", &synth_panorama(2, 64, 16, 2).unwrap());
    let cfg = dir.path().join("run.conf");
    fs::write(&cfg, "# test\ndenoiser = zero\ncontrol = none\nddim_steps = 3\nomega = 1\n").unwrap();
    let out = dir.path().join("out.png");
    let o = panotile(&[
        "translate", "--input", s(&input), "--output", s(&out), "--config", s(&cfg), "--ddim-steps", "4",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert_eq!(value(&text, "ddim_steps"), Some("4"));
    assert_eq!(value(&text, "denoiser"), Some("zero"));
    assert_eq!(value(&text, "alpha"), Some("48"));

    fs::write(&cfg, "colour = red\n").unwrap();
    let o = panotile(&["translate", "--input", s(&input), "--output", s(&out), "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn translation_bytes_do_not_depend_on_threads() {
    let dir = TempDir::new().unwrap();
    let input = png(&dir, "in.png", &synth_panorama(4, 64, 16, 3).unwrap());
    let run = |threads: &str| {
        let out = dir.path().join(format!("out{threads}.png"));
        let latent = dir.path().join(format!("lat{threads}.raw"));
        let o = panotile(&[
            "translate", "--input", s(&input), "--output", s(&out), "--latent", s(&latent), "--ddim-steps",
            "6", "--threads", threads,
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        (fs::read(out).unwrap(), fs::read(latent).unwrap())
    };
    assert_eq!(run("1"), run("4"));
}

#[test]
fn translate_free_flags_discontinuous_map() {
    let dir = TempDir::new().unwrap();
    let input = png(&dir, "map.png", &synth_noncircular(6, 64, 16, 2).unwrap());
    let out = dir.path().join("out.png");
    let report = dir.path().join("report.txt");
    let o = panotile(&[
        "translate-free", "--input", s(&input), "--output", s(&out), "--report", s(&report),
        "--ddim-steps", "4",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(report).unwrap();
    assert_eq!(value(&text, "pipeline"), Some("pant-free"));
    assert_eq!(value(&text, "control"), Some("freecontrol"));
    let input_ratio: f64 = value(&text, "input_seam_ratio").unwrap().parse().unwrap();
    assert!(input_ratio > 1.5);
}

#[test]
fn baseline_report_marks_boundary_encoding_off() {
    let dir = TempDir::new().unwrap();
    let input = png(&dir, "in.png", &synth_panorama(8, 64, 16, 2).unwrap());
    let out = dir.path().join("out.png");
    let o = panotile(&[
        "baseline", "--input", s(&input), "--output", s(&out), "--denoiser", "zero", "--control", "none",
        "--ddim-steps", "2",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(value(&stdout(&o), "boundary_encoding"), Some("off"));
}

#[test]
fn sweep_csv_is_stable() {
    let dir = TempDir::new().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = panotile(&[
            "sweep", "--width", "64", "--height", "16", "--corpus", "1", "--denoiser", "zero", "--control",
            "none", "--ddim-steps", "2", "--out", s(&out),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        fs::read_to_string(out).unwrap()
    };
    let a = run("a.csv");
    assert_eq!(a, run("b.csv"));
    let mut rdr = a.lines();
    let header: Vec<&str> = rdr.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "matching_windows").unwrap();
    let counts: Vec<&str> = rdr.map(|l| l.split(',').nth(col).unwrap()).collect();
    assert_eq!(counts, ["2", "2", "1"]);
}

#[test]
fn dump_schedule_shows_stitch() {
    let o = panotile(&["dump-schedule", "--width", "256", "--omega", "4"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert_eq!(value(&text, "stitch"), Some("[48,64)+[0,16) x2"));
    assert_eq!(value(&text, "regular_windows"), Some("9"));
}
