//! The `ride` command-line tool: dead-leaves data, training, evaluation,
//! sampling and inpainting.
//!
//! Exit status is 0 on success, 1 for usage errors and 2 when data, a model
//! file or a config file cannot be used.

pub mod config;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ride::eval::{ensemble_rate, Report, TransformSet};
use ride::imaging::{dequantize, generate_dead_leaves, load_image, quantize, save_fgrd, save_pgm, Image, ImageFormat};
use ride::ride::{load_model, save_model, train_mcgsm, train_ride, RideModel};
use ride::rng::stream;
use ride::sampling::{ancestral_sample, inpaint};

pub use config::{CliConfig, ConfigError};

#[derive(Debug, Parser)]
#[command(name = "ride", version, about = "Recurrent image density estimation")]
pub struct Cli {
    /// Worker threads for internal parallelism (default: all cores). Results
    /// do not depend on this.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate dead-leaves images as FGRD files
    Deadleaves(DeadleavesArgs),
    /// Train an MCGSM and then a recurrent model on a directory of images
    Train(TrainArgs),
    /// Report the log-likelihood rate of a model on a directory of images
    Eval(EvalArgs),
    /// Draw an image from a model
    Sample(SampleArgs),
    /// Fill masked pixels with a posterior sample
    Inpaint(InpaintArgs),
}

#[derive(Debug, Args)]
pub struct DeadleavesArgs {
    /// Number of images
    #[arg(long)]
    pub count: usize,
    /// Side length in pixels
    #[arg(long)]
    pub size: usize,
    /// Output directory, created if missing
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: u64,
    /// Config file for the disk model keys
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory of training images (.pgm, .fgrd)
    #[arg(long)]
    pub data: PathBuf,
    /// Directory of validation images
    #[arg(long)]
    pub val: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output model file
    #[arg(long)]
    pub out: PathBuf,
    /// Stop after the MCGSM stage
    #[arg(long)]
    pub mcgsm_only: bool,
    #[arg(long)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Side of the disjoint square patches scored
    #[arg(long, default_value_t = 64)]
    pub patch: usize,
    /// Transformation ensemble: identity or dihedral8
    #[arg(long, default_value = "identity")]
    pub ensemble: String,
    /// Output report file
    #[arg(long)]
    pub report: PathBuf,
    /// Seed for dequantizing 8-bit inputs
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub height: usize,
    #[arg(long)]
    pub width: usize,
    #[arg(long)]
    pub seed: u64,
    /// Output image; .pgm quantizes, anything else is written as FGRD
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InpaintArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    /// Mask image: nonzero marks a missing pixel
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub sweeps: usize,
    #[arg(long)]
    pub seed: u64,
    /// Config file for the remaining sampler keys
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output image; .pgm quantizes, anything else is written as FGRD
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) => f.write_str(m),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn data_err(context: impl fmt::Display) -> impl FnOnce(ride::Error) -> CliError {
    move |e| CliError::Data(format!("{context}: {e}"))
}

fn read_file(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn read_config(path: Option<&Path>) -> CliResult<CliConfig> {
    match path {
        None => Ok(CliConfig::default()),
        Some(p) => {
            let bytes = read_file(p)?;
            let text = String::from_utf8(bytes).map_err(|_| CliError::Data(format!("{}: not UTF-8", p.display())))?;
            CliConfig::parse(&text).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))
        }
    }
}

fn read_model(path: &Path) -> CliResult<RideModel> {
    load_model(&read_file(path)?).map_err(data_err(path.display()))
}

/// Loads an image, dequantizing 8-bit PGM data with the stream `(seed, key)`.
pub fn read_image(path: &Path, seed: u64, key: &[u64]) -> CliResult<Image> {
    let bytes = read_file(path)?;
    let img = load_image(&bytes).map_err(data_err(path.display()))?;
    match ImageFormat::sniff(&bytes) {
        Some(ImageFormat::Pgm) => dequantize(&img, &mut stream(seed, key)).map_err(data_err(path.display())),
        _ => Ok(img),
    }
}

fn is_pgm(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm"))
}

fn write_image(path: &Path, img: &Image) -> CliResult<()> {
    let bytes = if is_pgm(path) {
        save_pgm(&quantize(img)).map_err(data_err(path.display()))?
    } else {
        save_fgrd(img)
    };
    write_file(path, &bytes)
}

/// Image files (`.pgm`, `.fgrd`) directly inside `dir`, sorted by name.
pub fn list_images(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?.path();
        let known = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("pgm") || e.eq_ignore_ascii_case("fgrd"));
        if known && path.is_file() {
            paths.push(path);
        }
    }
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Data(format!("{}: no .pgm or .fgrd images", dir.display())));
    }
    Ok(paths)
}

fn read_dir_images(dir: &Path, seed: u64, group: u64) -> CliResult<Vec<Image>> {
    list_images(dir)?
        .iter()
        .enumerate()
        .map(|(k, p)| read_image(p, seed, &[group, k as u64]))
        .collect()
}

fn cmd_deadleaves(a: &DeadleavesArgs) -> CliResult<()> {
    if a.count == 0 || a.size == 0 {
        return Err(CliError::Usage("--count and --size must be positive".into()));
    }
    let cfg = read_config(a.config.as_deref())?.dead_leaves(a.size);
    cfg.validate().map_err(data_err("dead leaves config"))?;
    fs::create_dir_all(&a.out).map_err(|e| CliError::Data(format!("{}: {e}", a.out.display())))?;
    let images: Vec<CliResult<Image>> = (0..a.count)
        .map(|k| {
            let mut rng = stream(a.seed, &[k as u64]);
            let img = generate_dead_leaves(&cfg, &mut rng).map_err(data_err("dead leaves"))?;
            dequantize(&quantize(&img), &mut rng).map_err(data_err("dead leaves"))
        })
        .collect();
    let digits = (a.count - 1).to_string().len().max(4);
    for (k, img) in images.into_iter().enumerate() {
        write_file(&a.out.join(format!("leaves_{k:0digits$}.fgrd")), &save_fgrd(&img?))?;
    }
    eprintln!("wrote {} images to {}", a.count, a.out.display());
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> CliResult<()> {
    let cfg = read_config(a.config.as_deref())?;
    let train = read_dir_images(&a.data, a.seed, 0)?;
    let val = read_dir_images(&a.val, a.seed, 1)?;
    let mcgsm_cfg = cfg.mcgsm().map_err(data_err("config"))?;
    let (head, whitening, log) =
        train_mcgsm(&train, &val, &mcgsm_cfg, &mut stream(a.seed, &[0])).map_err(data_err("MCGSM training"))?;
    eprintln!(
        "mcgsm: {} iterations, loss {:.6} -> {:.6}{}",
        log.iterations,
        log.initial_loss,
        log.final_loss,
        if log.stopped_early { " (early stop)" } else { "" }
    );
    let spec = mcgsm_cfg.neighborhood;
    let mcgsm = RideModel::from_mcgsm(spec, whitening.clone(), head).map_err(data_err("MCGSM"))?;
    let model = if a.mcgsm_only || cfg.hidden.is_empty() {
        mcgsm
    } else {
        let mut rng = stream(a.seed, &[1]);
        let init = if cfg.warm_start {
            mcgsm.widen(&cfg.hidden, cfg.extended, &mut rng)
        } else {
            RideModel::init(spec, whitening, &cfg.hidden, cfg.extended, cfg.head_sizes(), &mut rng)
        }
        .map_err(data_err("model"))?;
        let (trained, logs) =
            train_ride(init, &train, &val, &cfg.schedule(), &mut stream(a.seed, &[2])).map_err(data_err("training"))?;
        for e in &logs {
            let val = e.val_rate.map_or_else(|| "-".to_string(), |r| format!("{r:.4}"));
            eprintln!(
                "epoch {}: lr {:.3e}, patch {}, {} batches, loss {:.6}, finetune {} iterations, val {} bit/px",
                e.epoch, e.learning_rate, e.patch_size, e.batches, e.train_loss, e.finetune_iterations, val
            );
        }
        trained
    };
    write_file(&a.out, &save_model(&model))?;
    eprintln!("saved {} parameters to {}", model.num_params(), a.out.display());
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> CliResult<()> {
    let ts: TransformSet = a.ensemble.parse().map_err(|e: ride::Error| CliError::Usage(e.to_string()))?;
    if a.patch == 0 {
        return Err(CliError::Usage("--patch must be positive".into()));
    }
    let model = read_model(&a.model)?;
    let images = read_dir_images(&a.data, a.seed, 0)?;
    let rate = ensemble_rate(&model, &ts, &images, a.patch).map_err(data_err("evaluation"))?;
    let patches: usize = images.iter().map(|im| (im.height() / a.patch) * (im.width() / a.patch)).sum();
    let mut report = Report::default();
    report.push("bits_per_pixel", format!("{rate:.6}"));
    report.push("images", images.len());
    report.push("patches", patches);
    report.push("patch_side", a.patch);
    report.push("ensemble", &a.ensemble);
    report.push("parameters", model.num_params());
    write_file(&a.report, report.render().as_bytes())?;
    eprintln!("{rate:.6} bit/px over {patches} patches");
    Ok(())
}

fn cmd_sample(a: &SampleArgs) -> CliResult<()> {
    if a.height == 0 || a.width == 0 {
        return Err(CliError::Usage("--height and --width must be positive".into()));
    }
    let model = read_model(&a.model)?;
    let img = ancestral_sample(&model, a.height, a.width, &mut stream(a.seed, &[]), None).map_err(data_err("sampling"))?;
    write_image(&a.out, &img)
}

fn cmd_inpaint(a: &InpaintArgs) -> CliResult<()> {
    let mut cfg = read_config(a.config.as_deref())?.inpaint();
    cfg.sweeps = a.sweeps;
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let model = read_model(&a.model)?;
    let image = read_image(&a.image, a.seed, &[0])?;
    let raw_mask = load_image(&read_file(&a.mask)?).map_err(data_err(a.mask.display()))?;
    let mask = Image::from_fn(raw_mask.height(), raw_mask.width(), |i, j| {
        if raw_mask.get(i, j) != 0.0 {
            1.0
        } else {
            0.0
        }
    })
    .map_err(data_err(a.mask.display()))?;
    let (out, stats) = inpaint(&model, &image, &mask, &cfg, &mut stream(a.seed, &[1])).map_err(data_err("inpainting"))?;
    eprintln!("{} sweeps, acceptance rate {:.3}", stats.sweeps.len(), stats.acceptance_rate());
    write_image(&a.out, &out)
}

pub fn execute(cli: &Cli) -> CliResult<()> {
    let run = || match &cli.command {
        Command::Deadleaves(a) => cmd_deadleaves(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sample(a) => cmd_sample(a),
        Command::Inpaint(a) => cmd_inpaint(a),
    };
    match cli.threads {
        None => run(),
        Some(0) => Err(CliError::Usage("--threads must be positive".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Data(format!("thread pool: {e}")))?
            .install(run),
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit status. Diagnostics go to stderr, help text to stdout.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
