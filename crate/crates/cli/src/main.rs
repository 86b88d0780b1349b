mod config;

use std::fmt;
use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use panotile_core::eval::{halves_discrepancy, seam_metric, sweep, synth_corpus, write_sweep_csv, SweepConfig};
use panotile_core::geometry::{count_matching_windows, extend};
use panotile_core::pipeline::{baseline_translate, invert_panorama, translate, translate_freecontrol, ControlMode};
use panotile_core::tensor::{read_png, read_raw, write_png, write_raw};
use panotile_core::tiler::build_schedule;
use panotile_core::{Conditioning, ExtendSpec, TileMode, Tensor};

use config::{render_config, PipelineArgs};

/// A command-line mistake: bad flag values, unknown config keys, and the like.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

/// Seamless 360° panorama translation by tiled latent denoising.
#[derive(Debug, Parser)]
#[command(name = "panotile", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Double a panorama around its split column α
    Extend(ExtendArgs),
    /// Encode the extended panorama and DDIM-invert it to x_T
    Invert(InvertArgs),
    /// Boundary-encoded translation (pnp or no control)
    Translate(TranslateArgs),
    /// Boundary-encoded translation of random noise steered by energy guidance
    TranslateFree(TranslateArgs),
    /// Untiled translation of the input without boundary encoding
    Baseline(TranslateArgs),
    /// Seam statistics of an image (and halves discrepancy with --halves)
    SeamMetric(SeamArgs),
    /// Count schedule windows whose content equals the input panorama
    AnalyzeAlpha(AnalyzeArgs),
    /// Run an α/ω/mode grid over a synthetic corpus and write CSV
    Sweep(SweepArgs),
    /// Print the window schedule for a panorama width
    DumpSchedule(ScheduleArgs),
}

#[derive(Debug, Args)]
struct ExtendArgs {
    /// Input panorama (.png or .raw)
    #[arg(long)]
    input: PathBuf,
    /// Extended output (.png or .raw)
    #[arg(long)]
    output: PathBuf,
    /// Split column α [default: 3W/4]
    #[arg(long)]
    alpha: Option<usize>,
}

#[derive(Debug, Args)]
struct InvertArgs {
    /// Input panorama (.png or .raw)
    #[arg(long)]
    input: PathBuf,
    /// Raw file for the inverted latent x_T
    #[arg(long)]
    output: PathBuf,
    /// Raw file for the clean extended latent x_0
    #[arg(long)]
    clean_latent: Option<PathBuf>,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

#[derive(Debug, Args)]
struct TranslateArgs {
    /// Input panorama or condition map (.png or .raw)
    #[arg(long)]
    input: PathBuf,
    /// Translated panorama (.png or .raw)
    #[arg(long)]
    output: PathBuf,
    /// Write the run report here as well as to stdout
    #[arg(long)]
    report: Option<PathBuf>,
    /// Raw file for the final latent
    #[arg(long)]
    latent: Option<PathBuf>,
    /// Print the window schedule before running
    #[arg(long)]
    dump_schedule: bool,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

#[derive(Debug, Args)]
struct SeamArgs {
    /// Image to measure (.png or .raw)
    #[arg(long)]
    input: PathBuf,
    /// Also compare the left and right halves
    #[arg(long)]
    halves: bool,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    /// Panorama width W in pixels
    #[arg(long)]
    width: usize,
    /// Split column α [default: 3W/4]
    #[arg(long)]
    alpha: Option<usize>,
    /// Latent stride ω [default: W/64]
    #[arg(long)]
    omega: Option<usize>,
    /// Window layout: paper | circular
    #[arg(long, default_value = "paper")]
    mode: TileMode,
}

#[derive(Debug, Args)]
struct ScheduleArgs {
    /// Panorama width W in pixels
    #[arg(long)]
    width: usize,
    /// Latent stride ω [default: W/64]
    #[arg(long)]
    omega: Option<usize>,
    /// Window layout: paper | circular
    #[arg(long, default_value = "paper")]
    mode: TileMode,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// Panorama width of the synthetic corpus
    #[arg(long, default_value_t = 256)]
    width: usize,
    /// Panorama height of the synthetic corpus
    #[arg(long, default_value_t = 64)]
    height: usize,
    /// Number of synthetic panoramas
    #[arg(long, default_value_t = 20)]
    corpus: usize,
    /// Seed of the first panorama
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sinusoids per channel
    #[arg(long, default_value_t = 3)]
    harmonics: usize,
    /// Comma-separated α values; `W`, `W/2`, `3W/4` style terms allowed
    #[arg(long, default_value = "W,W/2,3W/4")]
    alphas: String,
    /// Comma-separated ω values [default: W/64]
    #[arg(long)]
    omegas: Option<String>,
    /// Comma-separated modes
    #[arg(long, default_value = "paper")]
    modes: String,
    /// Record wall time per row (makes the CSV run-dependent)
    #[arg(long)]
    timing: bool,
    /// CSV destination; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

fn is_raw(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("raw"))
}

fn load_image(path: &Path) -> Result<Tensor> {
    Ok(if is_raw(path) { read_raw(path)? } else { read_png(path)? })
}

fn save_image(path: &Path, t: &Tensor) -> Result<()> {
    if is_raw(path) {
        write_raw(path, t)?
    } else {
        write_png(path, t)?
    }
    Ok(())
}

/// Evaluates `n`, `W`, `W/d`, `kW` or `kW/d` against the panorama width.
fn width_term(term: &str, width: usize) -> Result<usize> {
    let term = term.trim();
    let bad = || Usage(format!("cannot read {term:?} as a column count"));
    if let Ok(n) = term.parse() {
        return Ok(n);
    }
    let (num, den) = match term.split_once('/') {
        Some((n, d)) => (n, d.parse::<usize>().map_err(|_| bad())?),
        None => (term, 1),
    };
    let k = match num.strip_suffix('W') {
        Some("") => 1,
        Some(k) => k.parse::<usize>().map_err(|_| bad())?,
        None => return Err(bad().into()),
    };
    if den == 0 {
        return Err(bad().into());
    }
    Ok(k * width / den)
}

fn list<T>(text: &str, parse: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    text.split(',').filter(|s| !s.trim().is_empty()).map(parse).collect()
}

fn print(text: &str) -> Result<()> {
    io::stdout().lock().write_all(text.as_bytes())?;
    Ok(())
}

fn cmd_extend(a: &ExtendArgs) -> Result<()> {
    let img = load_image(&a.input)?;
    let (_, h, w) = img.dims();
    let spec = ExtendSpec::new(a.alpha.unwrap_or(w / 4 * 3), w, h)?;
    print(&format!("alpha = {}\nwidth = {w}\nheight = {h}\n", spec.alpha))?;
    let out = extend(&img, &spec)?;
    save_image(&a.output, &out)
}

fn cmd_invert(mut a: InvertArgs) -> Result<()> {
    a.pipeline.merge_file()?;
    let img = load_image(&a.input)?;
    let cfg = a.pipeline.resolve(img.width(), img.height());
    print(&render_config(&cfg, a.pipeline.prompt()))?;
    let (xt, x0) = invert_panorama(&img, &cfg)?;
    write_raw(&a.output, &xt)?;
    if let Some(p) = &a.clean_latent {
        write_raw(p, &x0)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
enum Variant {
    Pant,
    Free,
    Baseline,
}

fn cmd_translate(mut a: TranslateArgs, variant: Variant) -> Result<()> {
    a.pipeline.merge_file()?;
    if let Variant::Free = variant {
        a.pipeline.control = Some(ControlMode::FreeControl);
    }
    let img = load_image(&a.input)?;
    let cfg = a.pipeline.resolve(img.width(), img.height());
    print(&render_config(&cfg, a.pipeline.prompt()))?;
    if a.dump_schedule {
        if let Ok(s) = build_schedule(cfg.width, cfg.omega, cfg.mode) {
            print(&s.dump())?;
        }
    }
    let target = Conditioning::from_prompt(a.pipeline.prompt(), cfg.prompt_seed);
    let t = match variant {
        Variant::Pant => translate(&img, &target, &cfg)?,
        Variant::Free => translate_freecontrol(&img, &target, &cfg)?,
        Variant::Baseline => baseline_translate(&img, &target, &cfg)?,
    };
    let report = t.report.render();
    print(&report)?;
    save_image(&a.output, &t.image)?;
    if let Some(p) = &a.report {
        fs::write(p, &report).with_context(|| format!("writing {}", p.display()))?;
    }
    if let Some(p) = &a.latent {
        write_raw(p, &t.latent)?;
    }
    Ok(())
}

fn cmd_seam(a: &SeamArgs) -> Result<()> {
    let img = load_image(&a.input)?;
    let s = seam_metric(&img)?;
    let mut out = format!(
        "wrap_gap = {}\ninterior_gap = {}\nseam_ratio = {}\n",
        s.wrap_gap, s.interior_gap, s.seam_ratio
    );
    if a.halves {
        let h = halves_discrepancy(&img)?;
        out.push_str(&format!("halves_max = {}\nhalves_mean = {}\n", h.max, h.mean));
    }
    print(&out)
}

fn cmd_analyze(a: &AnalyzeArgs) -> Result<()> {
    let alpha = a.alpha.unwrap_or(a.width / 4 * 3);
    let omega = a.omega.unwrap_or((a.width / 64).max(1));
    let spec = ExtendSpec {
        alpha,
        width: a.width,
        height: 8,
    };
    let m = count_matching_windows(&spec, omega, a.mode)?;
    let ids: Vec<String> = m.windows.iter().map(|w| w.to_string()).collect();
    print(&format!(
        "width = {}\nalpha = {alpha}\nomega = {omega}\nmode = {}\nmatching_windows = {}\nmatching = {}\n",
        a.width,
        a.mode,
        m.count,
        if ids.is_empty() { "none".to_string() } else { ids.join(",") }
    ))
}

fn cmd_schedule(a: &ScheduleArgs) -> Result<()> {
    let omega = a.omega.unwrap_or((a.width / 64).max(1));
    let s = build_schedule(a.width, omega, a.mode)?;
    print(&s.dump())
}

fn cmd_sweep(mut a: SweepArgs) -> Result<()> {
    a.pipeline.merge_file()?;
    let base = a.pipeline.resolve(a.width, a.height);
    let alphas = list(&a.alphas, |t| width_term(t, a.width))?;
    let omegas = match &a.omegas {
        Some(s) => list(s, |t| width_term(t, a.width))?,
        None => vec![base.omega],
    };
    let modes = list(&a.modes, |t| Ok(t.trim().parse::<TileMode>()?))?;
    let mut head = render_config(&base, a.pipeline.prompt());
    head.push_str(&format!(
        "corpus = {}\nseed = {}\nharmonics = {}\nalphas = {alphas:?}\nomegas = {omegas:?}\nmodes = {}\n",
        a.corpus, a.seed, a.harmonics, a.modes
    ));
    // Keep stdout pure CSV when no file is given.
    if a.out.is_some() {
        print(&head)?;
    } else {
        eprint!("{head}");
    }
    let corpus = synth_corpus(a.corpus, a.seed, a.width, a.height, a.harmonics)?;
    let cfg = SweepConfig {
        alphas,
        omegas,
        modes,
        target: Conditioning::from_prompt(a.pipeline.prompt(), base.prompt_seed),
        base,
        timing: a.timing,
    };
    let rows = sweep(&corpus, &cfg)?;
    let mut buf = Vec::new();
    write_sweep_csv(&rows, &mut buf)?;
    match &a.out {
        Some(p) => File::create(p)
            .and_then(|mut f| f.write_all(&buf))
            .with_context(|| format!("writing {}", p.display())),
        None => Ok(io::stdout().lock().write_all(&buf)?),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Extend(a) => cmd_extend(&a),
        Command::Invert(a) => cmd_invert(a),
        Command::Translate(a) => cmd_translate(a, Variant::Pant),
        Command::TranslateFree(a) => cmd_translate(a, Variant::Free),
        Command::Baseline(a) => cmd_translate(a, Variant::Baseline),
        Command::SeamMetric(a) => cmd_seam(&a),
        Command::AnalyzeAlpha(a) => cmd_analyze(&a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::DumpSchedule(a) => cmd_schedule(&a),
    }
}

/// 1 for anything the user can fix by changing arguments, 2 otherwise.
fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<Usage>().is_some() {
        return 1;
    }
    match e.downcast_ref::<panotile_core::Error>() {
        Some(core) if core.is_validation() => 1,
        _ => 2,
    }
}

fn describe(e: &anyhow::Error) -> String {
    // Core errors already print their own causes.
    let mut parts = Vec::new();
    for cause in e.chain() {
        parts.push(cause.to_string());
        if cause.is::<panotile_core::Error>() {
            break;
        }
    }
    parts.join(": ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
