//! Pipeline flags shared by the translating subcommands, merged with an
//! optional `key = value` file. Flags always win over the file.

use std::fs;
use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{Context, Result};
use clap::Args;
use panotile_core::pipeline::{parse_report, ControlMode, DenoiserKind, PipelineConfig};
use panotile_core::{CodecKind, ColumnPadding, TileMode};

use crate::Usage;

#[derive(Debug, Clone, Default, Args)]
pub struct PipelineArgs {
    /// Split column α (multiple of 8, 0 < α ≤ W) [default: 3W/4]
    #[arg(long)]
    pub alpha: Option<usize>,
    /// Latent stride ω between regular windows [default: W/64]
    #[arg(long)]
    pub omega: Option<usize>,
    /// Window layout: paper | circular
    #[arg(long)]
    pub mode: Option<TileMode>,
    /// Spatial control: pnp | freecontrol | none
    #[arg(long)]
    pub control: Option<ControlMode>,
    /// Noise predictor: zero | linear-gauss | conv-toy
    #[arg(long)]
    pub denoiser: Option<DenoiserKind>,
    /// Weight seed of the conv-toy denoiser
    #[arg(long)]
    pub denoiser_seed: Option<u64>,
    /// Column padding of the conv-toy denoiser: circular | zero
    #[arg(long)]
    pub conv_padding: Option<ColumnPadding>,
    /// Prior mean of the linear-gauss denoiser
    #[arg(long)]
    pub lg_mean: Option<f32>,
    /// Prior variance of the linear-gauss denoiser
    #[arg(long)]
    pub lg_variance: Option<f32>,
    /// Image codec: block-avg | block-avg-bilinear
    #[arg(long)]
    pub codec: Option<CodecKind>,
    /// Training timesteps of the linear beta schedule
    #[arg(long)]
    pub train_steps: Option<usize>,
    /// First beta of the linear schedule
    #[arg(long)]
    pub beta_start: Option<f64>,
    /// Last beta of the linear schedule
    #[arg(long)]
    pub beta_end: Option<f64>,
    /// DDIM steps used for inversion and sampling
    #[arg(long)]
    pub ddim_steps: Option<usize>,
    /// Fraction of steps with feature injection
    #[arg(long)]
    pub tau_f: Option<f64>,
    /// Fraction of steps with attention injection
    #[arg(long)]
    pub tau_a: Option<f64>,
    /// Structure guidance weight
    #[arg(long)]
    pub lambda_s: Option<f64>,
    /// Appearance guidance weight
    #[arg(long)]
    pub lambda_a: Option<f64>,
    /// Seed of the random starting latent for guided translation
    #[arg(long)]
    pub noise_seed: Option<u64>,
    /// Seed mixed into prompt hashing
    #[arg(long)]
    pub prompt_seed: Option<u64>,
    /// Target prompt; empty means the null conditioning
    #[arg(long)]
    pub prompt: Option<String>,
    /// Worker threads, 0 for all cores
    #[arg(long)]
    pub threads: Option<usize>,
    /// File of `key = value` lines; explicit flags override it
    #[arg(long)]
    pub config: Option<PathBuf>,
}

fn fill<T: FromStr>(slot: &mut Option<T>, key: &str, value: &str) -> Result<()>
where
    T::Err: std::fmt::Display,
{
    if slot.is_none() {
        let v = value
            .parse()
            .map_err(|e| Usage(format!("config key {key}: {e}")))?;
        *slot = Some(v);
    }
    Ok(())
}

impl PipelineArgs {
    /// Fills unset flags from the config file, if one was given.
    pub fn merge_file(&mut self) -> Result<()> {
        let Some(path) = self.config.clone() else {
            return Ok(());
        };
        let text = fs::read_to_string(&path).with_context(|| format!("reading config {}", path.display()))?;
        for (key, value) in parse_report(&text) {
            self.set(&key, &value)?;
        }
        Ok(())
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key.replace('-', "_").as_str() {
            "alpha" => fill(&mut self.alpha, key, value),
            "omega" => fill(&mut self.omega, key, value),
            "mode" => fill(&mut self.mode, key, value),
            "control" => fill(&mut self.control, key, value),
            "denoiser" => fill(&mut self.denoiser, key, value),
            "denoiser_seed" => fill(&mut self.denoiser_seed, key, value),
            "conv_padding" => fill(&mut self.conv_padding, key, value),
            "lg_mean" => fill(&mut self.lg_mean, key, value),
            "lg_variance" => fill(&mut self.lg_variance, key, value),
            "codec" => fill(&mut self.codec, key, value),
            "train_steps" => fill(&mut self.train_steps, key, value),
            "beta_start" => fill(&mut self.beta_start, key, value),
            "beta_end" => fill(&mut self.beta_end, key, value),
            "ddim_steps" => fill(&mut self.ddim_steps, key, value),
            "tau_f" => fill(&mut self.tau_f, key, value),
            "tau_a" => fill(&mut self.tau_a, key, value),
            "lambda_s" => fill(&mut self.lambda_s, key, value),
            "lambda_a" => fill(&mut self.lambda_a, key, value),
            "noise_seed" => fill(&mut self.noise_seed, key, value),
            "prompt_seed" => fill(&mut self.prompt_seed, key, value),
            "prompt" => fill(&mut self.prompt, key, value),
            "threads" => fill(&mut self.threads, key, value),
            _ => Err(Usage(format!("unknown config key {key:?}")).into()),
        }
    }

    /// Defaults for a `W × H` image with every given setting applied.
    pub fn resolve(&self, width: usize, height: usize) -> PipelineConfig {
        let mut c = PipelineConfig::for_image(width, height);
        macro_rules! apply {
            ($($src:ident => $($dst:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$src.clone() { c.$($dst).+ = v; })*
            };
        }
        apply! {
            alpha => alpha,
            omega => omega,
            mode => mode,
            control => control,
            denoiser => denoiser,
            denoiser_seed => denoiser_seed,
            conv_padding => conv_padding,
            lg_mean => lg_mean,
            lg_variance => lg_variance,
            codec => codec,
            train_steps => schedule.train_steps,
            beta_start => schedule.beta_start,
            beta_end => schedule.beta_end,
            ddim_steps => schedule.ddim_steps,
            tau_f => injection.feature_until,
            tau_a => injection.attention_until,
            lambda_s => lambda_s,
            lambda_a => lambda_a,
            noise_seed => noise_seed,
            prompt_seed => prompt_seed,
            threads => threads,
        }
        c
    }

    pub fn prompt(&self) -> &str {
        self.prompt.as_deref().unwrap_or("")
    }
}

/// The resolved configuration as `key = value` lines.
pub fn render_config(cfg: &PipelineConfig, prompt: &str) -> String {
    let mut out = String::new();
    for (k, v) in cfg.settings() {
        out.push_str(&format!("{k} = {v}\n"));
    }
    out.push_str(&format!("threads = {}\n", cfg.threads));
    out.push_str(&format!("prompt = {prompt}\n"));
    out
}
