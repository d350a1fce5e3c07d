//! `inpaint`: compress images by storing a few pixels chosen with an adjoint
//! topological gradient, reconstruct them by diffusion inpainting, and run
//! the comparison and validation studies.

// Parameters are validated with `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use inpaint_core::codec::{self, decode_bytes, encode_bytes, method_criterion};
use inpaint_core::criterion::DEFAULT_EPS_REG;
use inpaint_core::experiment::{
    default_alpha_grid, run_table, write_csv, NoiseKind, NoiseSpec, TableConfig,
};
use inpaint_core::pnm::{load_pgm, save_pgm};
use inpaint_core::validation::{
    bessel_sweep, fundamental_refinement, ranking_study, ReferenceProblem,
};
use inpaint_core::{
    synth, Budget, CostMode, Error, Field, Image, Method, ReconRhsMode, SolveParams,
};

const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_SOLVER: u8 = 4;
const EXIT_DECODE: u8 = 5;
const EXIT_VALIDATION: u8 = 6;

#[derive(Debug, Parser)]
#[command(name = "inpaint", version = "PIC1/1", about, max_term_width = 100)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "INPAINT_THREADS", value_parser = clap::value_parser!(u16).range(1..))]
    threads: Option<u16>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Select a pixel mask for a PGM image and write a PIC1 file.
    Compress(CompressArgs),
    /// Reconstruct a PGM image from a PIC1 file.
    Decompress(DecompressArgs),
    /// Best-alpha error table over noises x budgets x methods, as CSV.
    Experiment(ExperimentArgs),
    /// Run the numerical oracles and exit non-zero if any check fails.
    Validate(ValidateArgs),
    /// Apply a noise model to a PGM image.
    Noise(NoiseArgs),
    /// Write a selection criterion as a PGM heat map.
    Criterion(CriterionArgs),
}

#[derive(Debug, Clone, Copy, Args)]
struct CostArgs {
    /// Error exponent: 1 selects the regularised L1 cost, 2 the L2 cost.
    #[arg(long = "p", default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
    p: u8,

    /// Regularisation of the L1 cost sqrt(s^2 + eps).
    #[arg(long, default_value_t = DEFAULT_EPS_REG, value_parser = positive)]
    eps_reg: f64,
}

impl CostArgs {
    fn mode(&self) -> CostMode {
        if self.p == 1 {
            CostMode::L1Regularized { eps: self.eps_reg }
        } else {
            CostMode::L2
        }
    }
}

#[derive(Debug, Args)]
struct CompressArgs {
    /// Image to compress (PGM, P2 or P5).
    input: PathBuf,
    /// Destination PIC1 file.
    output: PathBuf,

    /// Selection method: adj-t, adj-h, h1-t or h1-h.
    #[arg(long, default_value = "adj-h")]
    method: Method,

    #[command(flatten)]
    cost: CostArgs,

    /// Fraction of pixels to store, in (0, 1].
    #[arg(long, default_value = "0.1", value_parser = budget)]
    budget: Budget,

    /// Diffusion weight used for selection and embedded for decoding.
    #[arg(long, default_value_t = 0.5, value_parser = positive)]
    alpha: f64,

    /// Decoder right-hand side: zero, nn or harmonic.
    #[arg(long, default_value = "zero")]
    rhs_mode: ReconRhsMode,
}

#[derive(Debug, Args)]
struct DecompressArgs {
    /// PIC1 file.
    input: PathBuf,
    /// Destination PGM file.
    output: PathBuf,

    /// Override the right-hand side mode stored in the file.
    #[arg(long)]
    rhs_mode: Option<ReconRhsMode>,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    /// Clean reference image (PGM).
    input: PathBuf,

    /// Noise model, repeatable: none, sp:<salt>,<pepper> or gauss:<sigma>.
    #[arg(long = "noise", default_value = "none")]
    noises: Vec<NoiseKind>,

    /// Comma-separated selection methods.
    #[arg(long, value_delimiter = ',', default_value = "adj-t,adj-h,h1-t,h1-h")]
    methods: Vec<Method>,

    /// Comma-separated budget fractions.
    #[arg(long, value_delimiter = ',', default_value = "0.1", value_parser = budget)]
    budgets: Vec<Budget>,

    #[command(flatten)]
    cost: CostArgs,

    /// Noise seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Comma-separated alpha values (default: 40 log-spaced points on [0.01, 5.5]).
    #[arg(long, value_delimiter = ',', value_parser = positive)]
    alpha_grid: Vec<f64>,

    /// Decoder right-hand side: zero, nn or harmonic.
    #[arg(long, default_value = "zero")]
    rhs_mode: ReconRhsMode,

    /// CSV destination (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    /// Side length of the synthetic test images.
    #[arg(long, default_value_t = 32, value_parser = clap::value_parser!(u32).range(8..=512))]
    grid: u32,

    /// Skip the Bessel and fundamental-solution checks.
    #[arg(long)]
    skip_bessel: bool,

    /// Diffusion weight of the ranking check.
    #[arg(long, default_value_t = 0.5, value_parser = positive)]
    alpha: f64,

    /// Oracle samples per image.
    #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u32).range(10..))]
    samples: u32,

    /// Sampling seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Per-sample oracle report as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct NoiseArgs {
    /// Clean image (PGM).
    input: PathBuf,
    /// Destination PGM file.
    output: PathBuf,

    /// Noise model: none, sp:<salt>,<pepper> or gauss:<sigma>.
    #[arg(long)]
    noise: NoiseKind,

    /// Noise seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct CriterionArgs {
    /// Image to score (PGM).
    input: PathBuf,
    /// Destination PGM heat map, min-max normalised.
    output: PathBuf,

    /// adj-* methods give the adjoint keep-score, h1-* the Laplacian magnitude.
    #[arg(long, default_value = "adj-h")]
    method: Method,

    #[command(flatten)]
    cost: CostArgs,

    /// Diffusion weight of the primal and adjoint solves.
    #[arg(long, default_value_t = 0.5, value_parser = positive)]
    alpha: f64,
}

fn positive(s: &str) -> Result<f64, String> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| format!("{s:?} is not a number"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("must be positive, got {v}"))
    }
}

fn budget(s: &str) -> Result<Budget, String> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| format!("{s:?} is not a number"))?;
    Budget::new(v).map_err(|e| e.to_string())
}

/// A failed command: exit status plus message.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    fn io(path: &Path, err: io::Error) -> Self {
        Self::new(EXIT_IO, format!("{}: {err}", path.display()))
    }

    fn at(path: &Path, err: Error) -> Self {
        let mut f = Self::from(err);
        f.message = format!("{}: {}", path.display(), f.message);
        f
    }
}

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        let code = match err {
            Error::InvalidParameter(_) | Error::DimensionMismatch { .. } => EXIT_USAGE,
            Error::Pgm { .. } | Error::Io(_) | Error::Csv(_) => EXIT_IO,
            Error::Decode(_) => EXIT_DECODE,
            Error::NoConvergence { .. } | Error::EmptyMask | Error::Domain(_) => EXIT_SOLVER,
        };
        Self::new(code, err.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| Failure::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> CmdResult {
    fs::write(path, bytes).map_err(|e| Failure::io(path, e))
}

fn read_pgm(path: &Path) -> Result<Image, Failure> {
    load_pgm(&read(path)?).map_err(|e| Failure::at(path, e))
}

fn cmd_compress(args: &CompressArgs) -> CmdResult {
    let img = read_pgm(&args.input)?;
    let mode = args.cost.mode();
    let params = SolveParams::new(args.alpha);
    let geom = img.geometry()?;
    let crit = method_criterion(&img, args.method, mode, &params, &geom)?;
    let c = codec::compress(
        &img,
        args.method,
        mode,
        args.budget,
        args.alpha,
        args.rhs_mode,
        &params,
    )?;
    let bytes = encode_bytes(&c)?;
    write(&args.output, &bytes)?;

    let (lo, hi) = crit.values.min_max();
    let mean = crit.values.data().iter().sum::<f64>() / crit.values.len() as f64;
    println!(
        "{}x{} {} alpha={} rhs={}",
        c.width, c.height, c.method, c.alpha_recon, c.rhs_mode
    );
    println!(
        "stored {} of {} pixels (density {:.6})",
        c.mask.count(),
        c.mask.len(),
        c.mask.density()
    );
    println!("criterion min {lo:.6e} max {hi:.6e} mean {mean:.6e}");
    println!("wrote {} bytes to {}", bytes.len(), args.output.display());
    Ok(())
}

fn cmd_decompress(args: &DecompressArgs) -> CmdResult {
    let bytes = read(&args.input)?;
    let c = decode_bytes(&bytes).map_err(|e| Failure::at(&args.input, e.into()))?;
    let rhs_mode = args.rhs_mode.unwrap_or(c.rhs_mode);
    let u = codec::decompress_with(&c, rhs_mode, &SolveParams::new(c.alpha_recon))?;
    write(&args.output, &save_pgm(&u, 255)?)?;
    println!(
        "{}x{} from {} stored pixels, rhs={rhs_mode}, wrote {}",
        c.width,
        c.height,
        c.mask.count(),
        args.output.display()
    );
    Ok(())
}

fn cmd_experiment(args: &ExperimentArgs) -> CmdResult {
    let clean = read_pgm(&args.input)?;
    let alpha_grid = if args.alpha_grid.is_empty() {
        default_alpha_grid()
    } else {
        args.alpha_grid.clone()
    };
    let cfg = TableConfig {
        noises: args
            .noises
            .iter()
            .map(|&kind| NoiseSpec::new(kind, args.seed))
            .collect(),
        methods: args.methods.clone(),
        budgets: args.budgets.clone(),
        mode: args.cost.mode(),
        alpha_grid,
        rhs_mode: args.rhs_mode,
        params: SolveParams::new(1.0),
    };
    let grid_text = cfg
        .alpha_grid
        .iter()
        .map(|a| inpaint_core::experiment::format_sig6(*a))
        .collect::<Vec<_>>()
        .join(",");
    eprintln!(
        "# p={} eps_reg={} rhs_mode={} seed={} alpha_grid={grid_text}",
        args.cost.p, args.cost.eps_reg, args.rhs_mode, args.seed
    );
    let start = Instant::now();
    let rows = run_table(&clean, &cfg)?;
    match &args.out {
        Some(path) => {
            let file = fs::File::create(path).map_err(|e| Failure::io(path, e))?;
            write_csv(&rows, file).map_err(|e| Failure::at(path, e))?;
        }
        None => write_csv(&rows, io::stdout().lock())?,
    }
    eprintln!(
        "# {} rows in {:.1} s",
        rows.len(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

const RANK_MIN_SPEARMAN: f64 = 0.7;
const RANK_MIN_OVERLAP: f64 = 0.5;
const BESSEL_MAX_REL_ERR: f64 = 1e-10;
const MIN_REFINEMENT_ORDER: f64 = 1.8;

fn cmd_validate(args: &ValidateArgs) -> CmdResult {
    let mut failed = Vec::new();
    if !args.skip_bessel {
        let sweep = bessel_sweep(400)?;
        println!(
            "bessel: 400 points on [1e-3, 50], max rel err K0 {:.2e}, K1 {:.2e}, positive/decreasing {}",
            sweep.max_rel_err_k0, sweep.max_rel_err_k1, sweep.positive_decreasing
        );
        if sweep.max_rel_err_k0.max(sweep.max_rel_err_k1) > BESSEL_MAX_REL_ERR
            || !sweep.positive_decreasing
        {
            failed.push("bessel".to_string());
        }
        let study = fundamental_refinement(0.01, &[512, 1024, 2048])?;
        println!(
            "fundamental solution: residuals {:.3e} {:.3e} {:.3e}, orders {:.3} {:.3}",
            study.residuals[0],
            study.residuals[1],
            study.residuals[2],
            study.orders[0],
            study.orders[1]
        );
        if study.orders.iter().any(|&o| o < MIN_REFINEMENT_ORDER) {
            failed.push("fundamental-solution".to_string());
        }
    }

    let n = args.grid as usize;
    let params = SolveParams::new(args.alpha);
    let mut csv = String::from("image,pixel,delta_j,keep_score\n");
    for (name, img) in [
        ("bump", synth::smooth_bump(n)),
        ("step", synth::step_edge(n)),
        ("bump-outlier", synth::bump_with_outlier(n)),
    ] {
        let study = ranking_study(
            &img,
            0.05,
            CostMode::L2,
            args.alpha,
            ReferenceProblem::Model,
            &params,
            args.samples as usize,
            args.seed,
        )?;
        let r = &study.report;
        for ((p, d), k) in r.pixels.iter().zip(&r.delta_j).zip(&r.keep_scores) {
            let _ = writeln!(csv, "{name},{p},{d:e},{k:e}");
        }
        let rho = r.spearman.unwrap_or(f64::NAN);
        let overlap = r.top_k_overlap.unwrap_or(f64::NAN);
        println!(
            "ranking {name} {n}x{n}: spearman {rho:.3}, top-{} overlap {overlap:.2}, best pixel {} dJ {:.3e}",
            r.top_k, study.best_pixel, study.best_delta_j
        );
        if !(rho >= RANK_MIN_SPEARMAN) {
            failed.push(format!("ranking-{name}-spearman"));
        }
        if !(overlap >= RANK_MIN_OVERLAP) {
            failed.push(format!("ranking-{name}-overlap"));
        }
        if !(study.best_delta_j < 0.0) {
            failed.push(format!("ranking-{name}-sign"));
        }
    }
    if let Some(path) = &args.out {
        write(path, csv.as_bytes())?;
    }
    if failed.is_empty() {
        println!("validation passed");
        Ok(())
    } else {
        Err(Failure::new(
            EXIT_VALIDATION,
            format!("validation failed: {}", failed.join(", ")),
        ))
    }
}

fn cmd_noise(args: &NoiseArgs) -> CmdResult {
    let img = read_pgm(&args.input)?;
    let noisy = NoiseSpec::new(args.noise, args.seed).apply(&img)?;
    write(&args.output, &save_pgm(&noisy, 255)?)?;
    let changed = inpaint_core::experiment::corruption_mask(&img, &noisy)?.count();
    println!(
        "{} applied, {changed} of {} pixels changed",
        args.noise,
        img.len()
    );
    Ok(())
}

fn cmd_criterion(args: &CriterionArgs) -> CmdResult {
    let img = read_pgm(&args.input)?;
    let geom = img.geometry()?;
    let crit = method_criterion(
        &img,
        args.method,
        args.cost.mode(),
        &SolveParams::new(args.alpha),
        &geom,
    )?;
    let (lo, hi) = crit.values.min_max();
    let span = if hi > lo { hi - lo } else { 1.0 };
    let heat = Field::new(
        crit.values.width(),
        crit.values.height(),
        crit.values.data().iter().map(|v| (v - lo) / span).collect(),
    )?;
    write(
        &args.output,
        &save_pgm(&Image::from_field_clamped(&heat), 255)?,
    )?;
    println!("{:?} criterion: min {lo:.6e} max {hi:.6e}", crit.kind);
    Ok(())
}

fn run(cli: &Cli) -> CmdResult {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n as usize)
            .build_global()
            .map_err(|e| Failure::new(EXIT_USAGE, format!("cannot start thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Compress(a) => cmd_compress(a),
        Command::Decompress(a) => cmd_decompress(a),
        Command::Experiment(a) => cmd_experiment(a),
        Command::Validate(a) => cmd_validate(a),
        Command::Noise(a) => cmd_noise(a),
        Command::Criterion(a) => cmd_criterion(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => {
            let _ = io::stdout().flush();
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
