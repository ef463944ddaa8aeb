use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::info;

use tucker_stream::datagen::{noisy_sine_tensor, noisy_slice, SineSpec};
use tucker_stream::io::{
    format_ranks, list_slices, read_checkpoint, read_model, read_tensor, slice_file_name, write_checkpoint,
    write_model, write_tensor, CompressRecord, MetricsSink, StreamRecord,
};
use tucker_stream::{memtrack, sthosvd, DenseTensor, Result, StreamingState, TuckerError};

/// Error-bounded Tucker compression of dense tensors, in batch or one slice
/// at a time.
#[derive(Parser)]
#[command(name = "tucker", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a noisy sum of sine waves with known Tucker ranks.
    Synth(SynthArgs),
    /// Compress a tensor file in one pass.
    Compress(CompressArgs),
    /// Compress a directory of slice files one slice at a time.
    Stream(StreamArgs),
    /// Expand a model back into a dense tensor file.
    Reconstruct(ReconstructArgs),
    /// Print ‖a - b‖ / ‖a‖ for two tensor files.
    Diff(DiffArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    dims: Vec<usize>,
    /// Highest frequency per mode; the mode-k rank is 2 J_k + 1.
    #[arg(long, value_delimiter = ',', required = true)]
    bandwidths: Vec<usize>,
    /// Noise-to-signal ratio per slice.
    #[arg(long, default_value_t = 0.0)]
    eta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the whole tensor to this file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write one file per last-mode slice into this directory.
    #[arg(long)]
    slices_dir: Option<PathBuf>,
}

#[derive(Args)]
struct CompressArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    tau: f64,
    #[arg(long)]
    out_model: PathBuf,
    /// CSV file to append to, or `-` for stdout.
    #[arg(long)]
    metrics_csv: Option<String>,
}

#[derive(Args)]
struct StreamArgs {
    /// Number of leading slices compressed in batch to start the stream.
    #[arg(long)]
    init_slices: usize,
    #[arg(long)]
    slices_dir: PathBuf,
    #[arg(long)]
    tau: f64,
    #[arg(long)]
    out_model: PathBuf,
    /// CSV file to append to, or `-` for stdout.
    #[arg(long)]
    metrics_csv: Option<String>,
    /// Save a resumable checkpoint every N streamed slices.
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Checkpoint path; defaults to the model path with `.ckpt` appended.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Continue from a checkpoint instead of initializing.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Stop after streaming N slices in this run, leaving a checkpoint.
    #[arg(long)]
    stop_after: Option<usize>,
}

#[derive(Args)]
struct ReconstructArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DiffArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
}

fn synth(args: &SynthArgs) -> Result<()> {
    if args.out.is_none() && args.slices_dir.is_none() {
        return Err(TuckerError::InvalidArgument("synth needs --out and/or --slices-dir".into()));
    }
    let spec = SineSpec::new(&args.dims, &args.bandwidths, args.seed)?;
    if let Some(out) = &args.out {
        write_tensor(out, &noisy_sine_tensor(&spec, args.eta)?)?;
        info!("wrote {}", out.display());
    }
    if let Some(dir) = &args.slices_dir {
        std::fs::create_dir_all(dir)?;
        let count = args.dims[args.dims.len() - 1];
        for i in 0..count {
            write_tensor(dir.join(slice_file_name(i)), &noisy_slice(&spec, args.eta, i)?)?;
        }
        info!("wrote {count} slices to {}", dir.display());
    }
    Ok(())
}

fn compress(args: &CompressArgs) -> Result<()> {
    let start = Instant::now();
    let (res, peak_bytes) = memtrack::measure(|| -> Result<_> {
        let x = read_tensor(&args.input)?;
        let out = sthosvd(&x, args.tau, None)?;
        Ok((x, out))
    });
    let (x, out) = res?;
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    let model = out.model;
    write_model(&args.out_model, &model)?;
    let rel_error = model.relative_error(&x)?;
    info!("ranks {:?}, relative error {rel_error:e}", model.ranks());
    if let Some(target) = &args.metrics_csv {
        let mut sink = MetricsSink::open(target)?;
        sink.record(&CompressRecord {
            algorithm: "batch",
            tau: args.tau,
            ranks: format_ranks(&model.ranks()),
            peak_bytes,
            wall_ms,
            rel_error,
        })?;
        sink.flush()?;
    }
    Ok(())
}

fn checkpoint_path(args: &StreamArgs) -> PathBuf {
    args.checkpoint.clone().unwrap_or_else(|| {
        let mut p = args.out_model.clone().into_os_string();
        p.push(".ckpt");
        PathBuf::from(p)
    })
}

/// Reads slice files one at a time into a preallocated stacked tensor.
fn stack_slices(paths: &[PathBuf]) -> Result<DenseTensor> {
    let first = read_tensor(&paths[0])?;
    let mut dims = first.dims().to_vec();
    dims.push(paths.len());
    let mut out = DenseTensor::zeros(&dims)?;
    let len = first.len();
    out.as_mut_slice()[..len].copy_from_slice(first.as_slice());
    drop(first);
    for (i, path) in paths.iter().enumerate().skip(1) {
        let s = read_tensor(path)?;
        if s.dims() != &dims[..dims.len() - 1] {
            return Err(TuckerError::ShapeMismatch(format!(
                "{} has dims {:?}, expected {:?}",
                path.display(),
                s.dims(),
                &dims[..dims.len() - 1]
            )));
        }
        out.as_mut_slice()[i * len..(i + 1) * len].copy_from_slice(s.as_slice());
    }
    Ok(out)
}

fn stream(args: &StreamArgs) -> Result<()> {
    let slices = list_slices(&args.slices_dir)?;
    let ckpt = checkpoint_path(args);
    let mut state = match &args.resume {
        Some(path) => {
            let s = read_checkpoint(path)?;
            if s.tau() != args.tau {
                return Err(TuckerError::InvalidArgument(format!(
                    "checkpoint was built with tau {}, not {}",
                    s.tau(),
                    args.tau
                )));
            }
            info!("resuming at slice {} from {}", s.n_d(), path.display());
            s
        }
        None => {
            if args.init_slices == 0 || slices.len() < args.init_slices {
                return Err(TuckerError::InvalidArgument(format!(
                    "need {} initial slices, found {}",
                    args.init_slices,
                    slices.len()
                )));
            }
            let x = stack_slices(&slices[..args.init_slices])?;
            let s = StreamingState::init(&x, args.tau)?;
            info!("initialized from {} slices with ranks {:?}", args.init_slices, s.ranks());
            s
        }
    };

    let mut sink = args.metrics_csv.as_deref().map(MetricsSink::open).transpose()?;
    let mut streamed = 0usize;
    for path in slices.iter().skip(state.n_d()) {
        if args.stop_after.is_some_and(|n| streamed >= n) {
            write_checkpoint(&ckpt, &state)?;
            info!("stopped after {streamed} slices; checkpoint at {}", ckpt.display());
            return Ok(());
        }
        let y = read_tensor(path)?;
        let m = state.update(&y)?;
        if let Some(sink) = sink.as_mut() {
            sink.record(&StreamRecord {
                algorithm: "streaming",
                step: m.step,
                n_d: m.n_d,
                tau: args.tau,
                ranks: format_ranks(&m.ranks),
                peak_bytes: m.peak_bytes,
                wall_ms: m.wall_ms,
                slice_norm: m.slice_norm,
                projected_norm: m.projected_norm,
                residual_norms: m.residual_norms.iter().map(|r| format!("{r:e}")).collect::<Vec<_>>().join(";"),
                rel_error_estimate: m.rel_error_estimate,
            })?;
        }
        streamed += 1;
        if args.checkpoint_every.is_some_and(|n| n > 0 && streamed.is_multiple_of(n)) {
            if let Some(sink) = sink.as_mut() {
                sink.flush()?;
            }
            write_checkpoint(&ckpt, &state)?;
        }
    }
    if let Some(sink) = sink.as_mut() {
        sink.flush()?;
    }
    if args.checkpoint_every.is_some() || args.stop_after.is_some() {
        write_checkpoint(&ckpt, &state)?;
    }
    write_model(&args.out_model, state.model())?;
    info!(
        "streamed {streamed} slices; ranks {:?}, estimated relative error {:e}",
        state.ranks(),
        state.estimate_relative_error()
    );
    Ok(())
}

fn reconstruct(args: &ReconstructArgs) -> Result<()> {
    let model = read_model(&args.model)?;
    write_tensor(&args.out, &model.reconstruct())
}

fn relative_difference(a: &Path, b: &Path) -> Result<f64> {
    let a = read_tensor(a)?;
    let b = read_tensor(b)?;
    let diff = a.sub(&b)?.frobenius_norm();
    let norm = a.frobenius_norm();
    if norm == 0.0 {
        return if diff == 0.0 { Ok(0.0) } else { Err(TuckerError::ZeroNorm) };
    }
    Ok(diff / norm)
}

fn exit_code(err: &TuckerError) -> u8 {
    match err {
        TuckerError::Io(_) | TuckerError::Csv(_) => 3,
        TuckerError::BadMagic { .. } => 4,
        TuckerError::TruncatedPayload | TuckerError::Corrupt(_) => 5,
        TuckerError::UnsupportedVersion(_) => 6,
        TuckerError::InvalidTolerance(_) | TuckerError::InvalidArgument(_) => 7,
        TuckerError::ShapeMismatch(_) | TuckerError::ModeOutOfRange { .. } | TuckerError::NotSquare { .. } => 8,
        TuckerError::ZeroNorm
        | TuckerError::NotOrthonormal(_)
        | TuckerError::CouplingViolation(_)
        | TuckerError::UnsortedEigenvalues => 9,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TUCKER_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Compress(a) => compress(a),
        Command::Stream(a) => stream(a),
        Command::Reconstruct(a) => reconstruct(a),
        Command::Diff(a) => relative_difference(&a.a, &a.b).map(|r| println!("{r:e}")),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tucker: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
