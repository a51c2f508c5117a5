//! `dlsn`: command-line front end for the GLA super-resolution engine.
//!
//! Machine-readable results go to stdout, diagnostics to stderr. Exit status
//! is 0 on success, 1 on a runtime failure and 2 on a usage error.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dlsn_core::bench::{measure_scaling, BenchOptions};
use dlsn_core::features::{bucket_histogram, read_fmap_file, write_histogram_csv};
use dlsn_core::imaging::{degrade, psnr_y, read_ppm_file, ssim_y, write_ppm_file, DegradationSpec};
use dlsn_core::network::{dlsn_forward, init_params, load_params_file, reference_grad_check, NetworkConfig};
use dlsn_core::training::{reference_spec, train_toy, write_log_csv, TrainOptions};

#[derive(Parser, Debug)]
#[command(name = "dlsn", version, about = "Global learnable attention super-resolution toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Super-resolve a PPM image.
    Sr {
        input: PathBuf,
        output: PathBuf,
        /// DLSN parameter file; without it a freshly initialised micro
        /// network (seeded by --seed) is used.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        scale: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Blur, downscale and add noise to a PPM image.
    Degrade {
        input: PathBuf,
        output: PathBuf,
        #[arg(long)]
        scale: usize,
        #[arg(long, default_value_t = 0.0)]
        blur_sigma: f64,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Y-channel PSNR and SSIM between two PPM images.
    Metrics { a: PathBuf, b: PathBuf },
    /// Bucket-occupancy histogram of an FMAP feature file.
    HashStats {
        features: PathBuf,
        #[arg(long, default_value_t = 4)]
        buckets: usize,
        #[arg(long, default_value_t = 1)]
        rounds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Finite-difference check of every GLA and DLSN gradient.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
    },
    /// Train the micro network on synthetic periodic textures.
    TrainToy {
        #[arg(long, default_value_t = 500)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the CSV log here instead of stdout.
        #[arg(long)]
        out_log: Option<PathBuf>,
        /// Keep the learned similarity scoring at zero.
        #[arg(long)]
        freeze_lss: bool,
        #[arg(long, default_value_t = 50)]
        eval_every: usize,
    },
    /// Time dense attention against GLA.
    Bench {
        /// Comma-separated feature counts (h·w).
        #[arg(long, value_delimiter = ',', default_value = "1024,2048,4096,8192,16384")]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 32)]
        l: usize,
        #[arg(long, default_value_t = 3)]
        reps: usize,
        #[arg(long, default_value_t = 8)]
        channels: usize,
        #[arg(long, default_value_t = 1)]
        rounds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Run GLA chunks in parallel.
        #[arg(long)]
        parallel: bool,
    },
}

type CmdResult = Result<ExitCode, Box<dyn std::error::Error>>;

fn run(cmd: Command) -> CmdResult {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match cmd {
        Command::Sr {
            input,
            output,
            params,
            scale,
            seed,
        } => {
            let params = match params {
                Some(path) => load_params_file(path)?,
                None => init_params(&NetworkConfig {
                    scale: scale.unwrap_or(2),
                    ..NetworkConfig::micro().with_seed(seed)
                })?,
            };
            if let Some(s) = scale {
                if s != params.config.scale {
                    return Err(format!(
                        "--scale {s} does not match the parameter file's scale {}",
                        params.config.scale
                    )
                    .into());
                }
            }
            let lr = read_ppm_file(input)?;
            let sr = dlsn_forward(&lr, &params, &params.config)?;
            write_ppm_file(&sr, output)?;
        }
        Command::Degrade {
            input,
            output,
            scale,
            blur_sigma,
            noise,
            seed,
        } => {
            let spec = DegradationSpec {
                scale,
                blur_sigma,
                noise_level: noise,
                rng_seed: seed,
            };
            write_ppm_file(&degrade(&read_ppm_file(input)?, &spec)?, output)?;
        }
        Command::Metrics { a, b } => {
            let (a, b) = (read_ppm_file(a)?, read_ppm_file(b)?);
            let psnr = psnr_y(&a, &b)?;
            let ssim = ssim_y(&a, &b)?;
            if psnr.is_infinite() {
                writeln!(out, "psnr=inf ssim={ssim:.6}")?;
            } else {
                writeln!(out, "psnr={psnr:.4} ssim={ssim:.6}")?;
            }
        }
        Command::HashStats {
            features,
            buckets,
            rounds,
            seed,
        } => {
            let map = read_fmap_file(features)?;
            write_histogram_csv(&bucket_histogram(&map, buckets, rounds, seed)?, &mut out)?;
        }
        Command::Gradcheck { seed, tol, step } => {
            let report = reference_grad_check(seed, step, tol)?;
            write!(out, "{report}")?;
            if !report.passed() {
                eprintln!("gradient check failed: max relative error {:.3e}", report.max_rel_error());
                return Ok(ExitCode::from(1));
            }
        }
        Command::TrainToy {
            steps,
            seed,
            out_log,
            freeze_lss,
            eval_every,
        } => {
            let opts = TrainOptions {
                steps,
                eval_every,
                freeze_lss,
                ..TrainOptions::default()
            };
            let cfg = NetworkConfig::micro().with_seed(seed);
            let report = train_toy(&cfg, &reference_spec(seed), &opts)?;
            match out_log {
                Some(path) => {
                    let mut buf = Vec::new();
                    write_log_csv(&report.log, &mut buf)?;
                    std::fs::write(path, buf)?;
                }
                None => write_log_csv(&report.log, &mut out)?,
            }
            let last = report.final_row();
            eprintln!(
                "step {}: loss {:.6}, psnr {:.3} dB (bicubic baseline {:.3} dB)",
                last.step, last.loss, last.psnr, report.baseline_psnr
            );
        }
        Command::Bench {
            sizes,
            l,
            reps,
            channels,
            rounds,
            seed,
            parallel,
        } => {
            let opts = BenchOptions {
                bucket_size: l,
                channels,
                rounds,
                repetitions: reps,
                seed,
                parallel,
            };
            let report = measure_scaling(&sizes, &opts)?;
            report.write_csv(&mut out)?;
            writeln!(out, "{}", report.summary())?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
