use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use despeckle_core::io::{
    load_checkpoint, read_pfr, read_pnm, save_checkpoint, write_atomic, write_log_preview, write_pfr, write_stack,
    PfrMetadata,
};
use despeckle_core::metrics::Roi;
use despeckle_core::pipeline::{
    clean_from_gamma_reflectance, despeckle, despeckle_per_polarization, evaluate_synthetic, extract_patches,
    gamma_reflectance_from_clean, loss_log_csv, procedural_image, train_with_targets, InferenceOptions, OverlapPolicy,
    TrainConfig, TrainMode,
};
use despeckle_core::selfcheck::gradcheck_suite;
use despeckle_core::speckle::{
    apply_spatial_correlation, empirical_cross_covariance, sample_dual_pol, sample_single_pol, synth_gamma_stack,
    CovarianceField, PolStack, SpatialCorrelationKernel,
};
use despeckle_core::{Error, Raster};

#[derive(Parser)]
#[command(name = "despeckle", version, about = "Self-supervised polarimetric SAR despeckling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a speckled stack.
    Simulate(SimulateArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a network on a directory of PFR stacks.
    Train(TrainArgs),
    /// Despeckle a PFR stack with a trained checkpoint.
    Despeckle(DespeckleArgs),
    /// PSNR/SSIM/ENL of a despeckled image against a clean reference.
    Eval(EvalArgs),
    /// Empirical cross-covariance of a PFR stack.
    Stats { input: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum SimMode {
    /// Single polarization, reflectance `--rhh`.
    Singlepol,
    Dualpol,
    /// Multiplicative gamma replicas of a clean image.
    Gamma,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum, default_value = "dualpol")]
    mode: SimMode,
    #[arg(long, default_value_t = 1.0)]
    rhh: f64,
    #[arg(long, default_value_t = 1.0)]
    rvv: f64,
    #[arg(long, default_value_t = 0.0)]
    rhv: f64,
    /// Square extent; ignored when `--input` is given.
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated taps of the separable correlation kernel, normalised
    /// to unit sum.
    #[arg(long)]
    kernel: Option<String>,
    /// Clean PGM/PPM for gamma mode; a procedural scene otherwise.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Channels a grayscale clean image is replicated to.
    #[arg(long, default_value_t = 3)]
    polarizations: usize,
    /// Also write the clean reference (gamma mode).
    #[arg(long)]
    clean_out: Option<PathBuf>,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Polmerlin,
    #[value(name = "channel_only", alias = "channel-only")]
    ChannelOnly,
    #[value(name = "merlin_single_pol", alias = "merlin-single-pol")]
    MerlinSinglePol,
    #[value(name = "supervised_mse", alias = "supervised-mse")]
    SupervisedMse,
}

impl From<ModeArg> for TrainMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Polmerlin => TrainMode::Polmerlin,
            ModeArg::ChannelOnly => TrainMode::ChannelOnly,
            ModeArg::MerlinSinglePol => TrainMode::MerlinSinglePol,
            ModeArg::SupervisedMse => TrainMode::SupervisedMse,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Directory of `.pfr` stacks sharing P and extents.
    data: PathBuf,
    #[arg(long, value_enum, default_value = "polmerlin")]
    mode: ModeArg,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long = "mask-p")]
    mask_p: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    /// Small network, batch 4, lr 1e-3 with cosine decay.
    #[arg(long)]
    desk: bool,
    /// One masking direction per step instead of both.
    #[arg(long)]
    alternate: bool,
    /// Cut every stack into non-overlapping square patches of this size.
    #[arg(long)]
    patch: Option<usize>,
    /// Directory of clean PFR images with the same file names, for
    /// supervised_mse.
    #[arg(long)]
    targets: Option<PathBuf>,
    #[arg(short, long, default_value = "model.pmck")]
    output: PathBuf,
    /// Loss log CSV.
    #[arg(long, default_value = "loss.csv")]
    log: PathBuf,
}

#[derive(Args)]
struct DespeckleArgs {
    input: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    /// PGM preview of log r′ (first polarization).
    #[arg(long)]
    preview: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    patch: usize,
    #[arg(long)]
    stride: Option<usize>,
    /// Later patches overwrite earlier ones instead of averaging.
    #[arg(long)]
    no_average: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    clean: PathBuf,
    #[arg(long)]
    despeckled: PathBuf,
    #[arg(long)]
    noisy: PathBuf,
    /// ENL region `x,y,w,h`; repeatable.
    #[arg(long)]
    roi: Vec<Roi>,
    #[arg(long, default_value_t = 1.0)]
    peak: f64,
    /// Map a reflectance estimate of gamma replicas back to clean units first.
    #[arg(long)]
    gamma_calibrate: bool,
    /// CSV destination; stdout when absent.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

fn parse_taps(s: &str) -> Result<SpatialCorrelationKernel, Error> {
    let taps = s
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|e| Error::Contract(format!("kernel tap {t:?}: {e}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    SpatialCorrelationKernel::new(taps, true)
}

fn simulate(a: SimulateArgs) -> Result<(), Error> {
    let stack = match a.mode {
        SimMode::Singlepol => {
            let n = a.size * a.size;
            let f = sample_single_pol(&vec![a.rhh; n], a.size, a.size, a.seed)?;
            PolStack::new(Raster::from_planes(a.size, a.size, &[&f.a, &f.b])?, vec!["hh".into()])?
        }
        SimMode::Dualpol => sample_dual_pol(&CovarianceField::constant(a.size, a.size, a.rhh, a.rvv, a.rhv), a.seed)?,
        SimMode::Gamma => {
            let clean = match &a.input {
                Some(p) => read_pnm(p)?,
                None => procedural_image(a.size, a.seed),
            };
            let clean = if clean.channels() == 1 {
                let planes: Vec<&[f64]> = (0..a.polarizations).map(|_| clean.channel(0)).collect();
                Raster::from_planes(clean.height(), clean.width(), &planes)?
            } else {
                clean
            };
            if let Some(p) = &a.clean_out {
                write_pfr(p, &clean, None)?;
            }
            synth_gamma_stack(&clean, a.seed)?
        }
    };
    let stack = match &a.kernel {
        Some(k) => apply_spatial_correlation(&stack, &parse_taps(k)?),
        None => stack,
    };
    write_stack(&a.output, &stack)
}

fn run_gradcheck(seed: u64) -> Result<(), Error> {
    let suite = gradcheck_suite(seed)?;
    let mut failed = 0;
    for e in &suite {
        println!(
            "{:<28} {:.3e} {}",
            e.name,
            e.report.max_rel_err,
            if e.report.pass { "ok" } else { "FAIL" }
        );
        failed += !e.report.pass as usize;
    }
    if failed > 0 {
        return Err(Error::Contract(format!(
            "{failed} of {} gradient checks failed",
            suite.len()
        )));
    }
    Ok(())
}

fn pfr_files(dir: &Path) -> Result<Vec<PathBuf>, Error> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|e| e == "pfr"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Contract(format!("no .pfr files in {}", dir.display())));
    }
    Ok(files)
}

fn patches_of(r: &Raster, size: Option<usize>) -> Result<Vec<Raster>, Error> {
    match size {
        Some(s) => Ok(extract_patches(r, s, s)?.0),
        None => Ok(vec![r.clone()]),
    }
}

fn run_train(a: TrainArgs) -> Result<(), Error> {
    let base = if a.desk {
        TrainConfig::desk()
    } else {
        TrainConfig::default()
    };
    let cfg = TrainConfig {
        epochs: a.epochs.unwrap_or(base.epochs),
        batch_size: a.batch.unwrap_or(base.batch_size),
        lr: a.lr.unwrap_or(base.lr),
        drop_probability: a.mask_p.unwrap_or(base.drop_probability),
        base_width: a.width.unwrap_or(base.base_width),
        depth: a.depth.unwrap_or(base.depth),
        seed: a.seed,
        mode: a.mode.into(),
        alternate_directions: a.alternate,
        ..base
    };
    let mut data = Vec::new();
    let mut targets = Vec::new();
    for f in pfr_files(&a.data)? {
        let stack = read_pfr(&f)?.into_stack()?;
        let names = stack.polarization_names().to_vec();
        for p in patches_of(stack.raster(), a.patch)? {
            data.push(PolStack::new(p, names.clone())?);
        }
        if let Some(dir) = &a.targets {
            let name = f.file_name().expect("listed files have names");
            let clean = read_pfr(dir.join(name))?.raster;
            for p in patches_of(&clean, a.patch)? {
                targets.push(gamma_reflectance_from_clean(&p));
            }
        }
    }
    let out = train_with_targets(&data, a.targets.as_ref().map(|_| &targets[..]), &cfg)?;
    for (e, l) in out.checkpoint.loss_history.iter().enumerate() {
        eprintln!("epoch {:>4} loss {l:.6}", e + 1);
    }
    save_checkpoint(&a.output, &out.checkpoint)?;
    write_atomic(&a.log, loss_log_csv(&out.log).as_bytes())
}

fn run_despeckle(a: DespeckleArgs) -> Result<(), Error> {
    let stack = read_pfr(&a.input)?.into_stack()?;
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let opts = InferenceOptions {
        patch_size: a.patch,
        stride: a.stride.unwrap_or(a.patch),
        overlap: if a.no_average {
            OverlapPolicy::None
        } else {
            OverlapPolicy::Average
        },
    };
    let r = if ckpt.polarizations() == 1 && stack.polarizations() > 1 {
        despeckle_per_polarization(&stack, &ckpt, &opts)?
    } else {
        despeckle(&stack, &ckpt, &opts)?
    };
    let meta = PfrMetadata {
        labels: stack.polarization_names().to_vec(),
        polarizations: Some(stack.polarizations()),
        names: stack.polarization_names().to_vec(),
        notes: Some("despeckled reflectance r' = (r_Re + r_Im)/2, linear intensity".into()),
    };
    write_pfr(&a.output, &r, Some(&meta))?;
    if let Some(p) = &a.preview {
        write_log_preview(p, &Raster::from_planes(r.height(), r.width(), &[r.channel(0)])?)?;
    }
    Ok(())
}

fn run_eval(a: EvalArgs) -> Result<(), Error> {
    let clean = read_pfr(&a.clean)?.raster;
    let despeckled = read_pfr(&a.despeckled)?.raster;
    let despeckled = if a.gamma_calibrate {
        clean_from_gamma_reflectance(&despeckled)
    } else {
        despeckled
    };
    let noisy = read_pfr(&a.noisy)?.into_stack()?;
    let report = evaluate_synthetic(&clean, &despeckled, &noisy, &a.roi, a.peak)?;
    let csv = report.to_csv();
    match &a.output {
        Some(p) => write_atomic(p, csv.as_bytes()),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn run_stats(input: &Path) -> Result<(), Error> {
    let file = read_pfr(input)?;
    let labels = match &file.metadata {
        Some(m) if m.labels.len() == file.raster.channels() => m.labels.clone(),
        _ => (0..file.raster.channels()).map(|c| format!("c{c}")).collect(),
    };
    let cov = empirical_cross_covariance(&file.raster)?;
    let mut out = String::from("row,col,covariance,std_error\n");
    for i in 0..cov.size {
        for j in 0..cov.size {
            let _ = writeln!(out, "{},{},{},{}", labels[i], labels[j], cov.get(i, j), cov.se(i, j));
        }
    }
    print!("{out}");
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Gradcheck { seed } => run_gradcheck(seed),
        Command::Train(a) => run_train(a),
        Command::Despeckle(a) => run_despeckle(a),
        Command::Eval(a) => run_eval(a),
        Command::Stats { input } => run_stats(&input),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}
