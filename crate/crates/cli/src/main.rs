use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mambadc::dsp::WavEncoding;
use mambadc::Scalar;
use mambadc_cli::{
    bench_csv, bench_scan, cmd_enhance, cmd_eval, cmd_train, eval_csv, run_gradcheck, write_text,
    BenchConfig, CliError, CliResult, GradPreset, RunConfig,
};

#[derive(Parser, Debug)]
#[command(name = "mambadc", version, about = "Selective state-space speech enhancement")]
struct Cli {
    /// Run configuration (`key = value` lines).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides `train.seed`; also seeds bench-scan and gradcheck.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Config override, applied after the file. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, global = true, value_enum, default_value_t = Precision::F32)]
    precision: Precision,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Precision {
    F32,
    F64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Encoding {
    Pcm16,
    Float32,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a mask estimator; writes checkpoints and metrics.csv to output.dir.
    Train,
    /// Enhance one WAV file with a trained checkpoint.
    Enhance {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_enum, default_value_t = Encoding::Pcm16)]
        encoding: Encoding,
    },
    /// Mix clean files with noise at fixed SNRs and report SI-SDR / segmental SNR.
    Eval {
        /// Required in model mode.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// model | oracle | passthrough (overrides eval.mode).
        #[arg(long)]
        mode: Option<String>,
        /// Comma-separated SNRs in dB (overrides eval.snrs).
        #[arg(long, allow_hyphen_values = true)]
        snrs: Option<String>,
        #[arg(long)]
        clean: Option<PathBuf>,
        #[arg(long)]
        noise: Option<PathBuf>,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Time the sequential and parallel scan evaluators.
    BenchScan {
        #[arg(long, value_delimiter = ',', default_value = "1024,2048,4096,8192,16384")]
        lengths: Vec<usize>,
        #[arg(long, default_value_t = 16)]
        d_inner: usize,
        #[arg(long, default_value_t = 16)]
        n_state: usize,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Central-difference gradient checks over every op and layer type.
    Gradcheck {
        /// all | mamba | mambadc | bimambadc
        #[arg(long, default_value = "all")]
        preset: String,
        /// Negative control: corrupt the matmul gradient.
        #[arg(long, hide = true)]
        inject_sign_flip: bool,
    },
}

fn load_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::load(cli.config.as_deref(), &cli.set)?;
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    Ok(cfg)
}

fn emit(output: Option<&PathBuf>, text: &str) -> CliResult<()> {
    match output {
        Some(p) => write_text(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run_typed<T: Scalar>(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Train => {
            let cfg = load_config(cli)?;
            let s = cmd_train::<T>(&cfg)?;
            println!(
                "steps={} final_loss={:e} reached_target={}",
                s.steps, s.final_loss, s.reached_target
            );
            if let Some((epoch, loss)) = s.best {
                println!("best_epoch={epoch} best_valid_loss={loss:e}");
            }
            println!("output={}", s.output_dir.display());
            Ok(())
        }
        Command::Enhance {
            checkpoint,
            input,
            output,
            encoding,
        } => {
            let cfg = load_config(cli)?;
            let encoding = match encoding {
                Encoding::Pcm16 => WavEncoding::Pcm16,
                Encoding::Float32 => WavEncoding::Float32,
            };
            cmd_enhance::<T>(checkpoint, input, output, &cfg.stft, encoding)
        }
        Command::Eval {
            checkpoint,
            mode,
            snrs,
            clean,
            noise,
            output,
        } => {
            let mut set = cli.set.clone();
            set.extend(mode.iter().map(|m| format!("eval.mode={m}")));
            set.extend(snrs.iter().map(|s| format!("eval.snrs={s}")));
            set.extend(clean.iter().map(|p| format!("data.clean={}", p.display())));
            set.extend(noise.iter().map(|p| format!("data.noise={}", p.display())));
            let mut cfg = RunConfig::load(cli.config.as_deref(), &set)?;
            if let Some(seed) = cli.seed {
                cfg.train.seed = seed;
            }
            let rows = cmd_eval::<T>(&cfg, checkpoint.as_deref())?;
            emit(output.as_ref(), &eval_csv(&rows))
        }
        Command::BenchScan {
            lengths,
            d_inner,
            n_state,
            repeats,
            output,
        } => {
            let rows = bench_scan::<T>(&BenchConfig {
                lengths: lengths.clone(),
                d_inner: *d_inner,
                n_state: *n_state,
                repeats: *repeats,
                seed: cli.seed.unwrap_or(0),
            })?;
            emit(output.as_ref(), &bench_csv(&rows))
        }
        Command::Gradcheck {
            preset,
            inject_sign_flip,
        } => {
            let preset: GradPreset = preset.parse()?;
            let sabotage = inject_sign_flip.then_some("matmul");
            let report = run_gradcheck(preset, cli.seed.unwrap_or(0), sabotage)?;
            print!("{report}");
            if report.passed() {
                Ok(())
            } else {
                Err(CliError::Failed(format!(
                    "gradient check failed: {}",
                    report.failures().join(", ")
                )))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.precision {
        Precision::F32 => run_typed::<f32>(&cli),
        Precision::F64 => run_typed::<f64>(&cli),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::from(e.exit_code())
        }
    }
}
