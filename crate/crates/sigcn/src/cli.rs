//! Command-line surface: episode generation, inference, gradient
//! checks, toy training, batch evaluation, and map visualization.
//!
//! Every command is deterministic given its arguments. Configuration
//! precedence is flags > config file > built-in defaults.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::Config;
use crate::episodes::{generate_episode, load_episode, save_episode, GeneratorConfig};
use crate::error::{self, Error, Result};
use crate::gradcheck;
use crate::head;
use crate::io;
use crate::pipeline;

#[derive(Parser, Debug)]
#[command(
    name = "sigcn",
    version,
    about = "Few-shot segmentation on precomputed features: activation matching, graph reasoning, instance association, decoding"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic episode (manifest + tensors) to a directory
    Gen(GenArgs),
    /// Run the full pipeline on an episode and write its outputs
    Infer(InferArgs),
    /// Verify analytic gradients against central finite differences
    Gradcheck(GradcheckArgs),
    /// Train the decoder on one episode's own query; print the loss
    /// curve as CSV
    Overfit(OverfitArgs),
    /// Batch inference over episode manifests; print an IoU report as
    /// JSON
    Eval(EvalArgs),
    /// Export an episode's activation maps and masks as PGM images
    Viz(VizArgs),
}

/// Flags mirroring the config file; any flag set here overrides the
/// file value, which overrides the default.
#[derive(Args, Debug, Default, Clone)]
pub struct ConfigArgs {
    /// JSON config file
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Salience threshold in `[0,1]`
    #[arg(long)]
    pub t: Option<f64>,
    /// Graph kernel size (number of support prototypes)
    #[arg(long)]
    pub k: Option<usize>,
    /// Support instance side length (pooled to s*s positions)
    #[arg(long)]
    pub s: Option<usize>,
    /// Support-message weight in the association update
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Cross-query-message weight in the association update
    #[arg(long)]
    pub beta: Option<f64>,
    /// Region-matching grid side length
    #[arg(long)]
    pub region_grid: Option<usize>,
    /// Feature channels
    #[arg(long)]
    pub channels: Option<usize>,
    /// Feature height
    #[arg(long)]
    pub height: Option<usize>,
    /// Feature width
    #[arg(long)]
    pub width: Option<usize>,
    /// Pyramid dilation rates, comma separated
    #[arg(long, value_delimiter = ',')]
    pub aspp_rates: Option<Vec<usize>>,
    /// SGD learning rate
    #[arg(long)]
    pub lr: Option<f64>,
    /// Seed for all randomness
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<Config> {
        let mut cfg = match &self.config {
            Some(path) => Config::load(path)?,
            None => Config::default(),
        };
        macro_rules! over {
            ($($field:ident),*) => {
                $(if let Some(v) = &self.$field { cfg.$field = v.clone(); })*
            };
        }
        over!(t, k, s, alpha, beta, region_grid, channels, height, width, aspp_rates, lr, seed);
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Directory to write the episode into
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Number of support shots
    #[arg(long)]
    pub shots: Option<usize>,
    /// Query appearance-variation magnitude
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Gaussian noise scale around the class means
    #[arg(long)]
    pub noise: Option<f64>,
    /// Class id recorded in the manifest
    #[arg(long)]
    pub class_id: Option<u32>,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Episode manifest, or the directory containing manifest.json
    #[arg(long, value_name = "PATH")]
    pub episode: PathBuf,
    /// Directory to write outputs into
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Seed for the random instances
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Maximum accepted relative error
    #[arg(long, default_value_t = gradcheck::DEFAULT_TOL)]
    pub tolerance: f64,
}

#[derive(Args, Debug)]
pub struct OverfitArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Episode manifest, or the directory containing manifest.json
    #[arg(long, value_name = "PATH")]
    pub episode: PathBuf,
    /// Number of SGD steps
    #[arg(long, default_value_t = 500)]
    pub steps: usize,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Episode manifests (or directories) to evaluate
    #[arg(value_name = "MANIFEST")]
    pub manifests: Vec<PathBuf>,
    /// Overfit the decoder this many steps per episode before
    /// predicting (0 = plain seeded decoder)
    #[arg(long, default_value_t = 0)]
    pub steps: usize,
    /// Score the ground truth against itself (metrics plumbing check)
    #[arg(long)]
    pub oracle: bool,
}

#[derive(Args, Debug)]
pub struct VizArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Episode manifest, or the directory containing manifest.json
    #[arg(long, value_name = "PATH")]
    pub episode: PathBuf,
    /// Directory to write PGM images into
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

/// Accept either the manifest path or its directory.
fn manifest_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join("manifest.json")
    } else {
        p.to_path_buf()
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::Infer(args) => cmd_infer(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::Overfit(args) => cmd_overfit(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Viz(args) => cmd_viz(args),
    }
}

fn cmd_gen(args: &GenArgs) -> Result<()> {
    let cfg = args.cfg.resolve()?;
    let defaults = GeneratorConfig::default();
    let gen = GeneratorConfig {
        channels: cfg.channels,
        height: cfg.height,
        width: cfg.width,
        shots: args.shots.unwrap_or(defaults.shots),
        sigma: args.sigma.unwrap_or(defaults.sigma),
        noise: args.noise.unwrap_or(defaults.noise),
        class_id: args.class_id.unwrap_or(defaults.class_id),
    };
    let ep = generate_episode(cfg.seed, &gen)?;
    save_episode(&ep, &args.out)?;
    println!("{}", args.out.join("manifest.json").display());
    Ok(())
}

fn cmd_infer(args: &InferArgs) -> Result<()> {
    let cfg = args.cfg.resolve()?;
    let ep = load_episode(&manifest_path(&args.episode))?;
    let params = pipeline::seeded_params(&ep, &cfg, false);
    let out = pipeline::infer(&ep, &cfg, &params)?;
    fs::create_dir_all(&args.out).map_err(|e| error::io(&args.out, e))?;

    let mut written = Vec::new();
    let mask_path = args.out.join("pred_mask.pgm");
    io::save_pgm(&mask_path, out.mask.tensor())?;
    written.push(mask_path);
    for (name, map) in out.maps.named() {
        let path = args.out.join(format!("{name}.pgm"));
        io::save_pgm(&path, map)?;
        written.push(path);
    }
    if let Some(gt) = &ep.query.mask {
        let report = head::miou(
            std::slice::from_ref(&out.mask),
            std::slice::from_ref(gt),
            &[ep.class_id],
        )?;
        let path = args.out.join("metrics.json");
        let text = serde_json::to_string_pretty(&report).expect("report serializes");
        fs::write(&path, text).map_err(|e| error::io(&path, e))?;
        written.push(path);
    }
    for path in written {
        println!("{}", path.display());
    }
    Ok(())
}

fn cmd_gradcheck(args: &GradcheckArgs) -> Result<()> {
    let (reports, ok) = gradcheck::run(args.seed, args.tolerance)?;
    println!(
        "{:<18} {:>9} {:>9} {:>9} {:>12}  verdict",
        "op", "instances", "checked", "skipped", "max rel err"
    );
    for r in &reports {
        println!(
            "{:<18} {:>9} {:>9} {:>9} {:>12.3e}  {}",
            r.name,
            r.instances,
            r.checked,
            r.skipped,
            r.max_rel_err,
            if r.passed(args.tolerance) { "ok" } else { "FAIL" }
        );
    }
    if !ok {
        let worst = reports
            .iter()
            .filter(|r| !r.passed(args.tolerance))
            .map(|r| r.name)
            .collect::<Vec<_>>()
            .join(", ");
        return Err(Error::CheckFailed(format!(
            "gradients over tolerance {}: {worst}",
            args.tolerance
        )));
    }
    Ok(())
}

fn cmd_overfit(args: &OverfitArgs) -> Result<()> {
    let cfg = args.cfg.resolve()?;
    let ep = load_episode(&manifest_path(&args.episode))?;
    let result = pipeline::overfit(&ep, &cfg, args.steps, cfg.lr, false)?;
    println!("step,loss");
    for (i, loss) in result.losses.iter().enumerate() {
        println!("{i},{loss}");
    }
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let cfg = args.cfg.resolve()?;
    let manifests: Vec<PathBuf> = args.manifests.iter().map(|p| manifest_path(p)).collect();
    let outcome = pipeline::evaluate(&manifests, &cfg, args.steps, args.oracle)?;
    let mut v = serde_json::to_value(&outcome.report).expect("report serializes");
    v["episodes"] = outcome.episodes.into();
    println!("{}", serde_json::to_string_pretty(&v).expect("json serializes"));
    Ok(())
}

fn cmd_viz(args: &VizArgs) -> Result<()> {
    let cfg = args.cfg.resolve()?;
    let ep = load_episode(&manifest_path(&args.episode))?;
    let maps = pipeline::compute_maps(&ep, &cfg)?;
    fs::create_dir_all(&args.out).map_err(|e| error::io(&args.out, e))?;
    let mut written = Vec::new();
    for (name, map) in maps.named() {
        let path = args.out.join(format!("{name}.pgm"));
        io::save_pgm(&path, map)?;
        written.push(path);
    }
    for (i, shot) in ep.support.iter().enumerate() {
        let path = args.out.join(format!("support{i}_mask.pgm"));
        io::save_pgm(&path, shot.mask.tensor())?;
        written.push(path);
    }
    if let Some(gt) = &ep.query.mask {
        let path = args.out.join("query_mask.pgm");
        io::save_pgm(&path, gt.tensor())?;
        written.push(path);
    }
    for path in written {
        println!("{}", path.display());
    }
    Ok(())
}
