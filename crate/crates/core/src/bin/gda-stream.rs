use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gda_stream::adapter::AdapterConfig;
use gda_stream::drift_sim::{self, DriftSpec, GroundTruth, SPEC_FILE};
use gda_stream::gmm::GmmConfig;
use gda_stream::pipeline::{
    continue_stream, run_longterm, run_stream, run_zero_shot, write_run_artifacts, Component, ModeOverride, Pipeline,
    PipelineConfig,
};
use gda_stream::stream::{read_all, write_stream, StreamSource};
use gda_stream::{Error, Result};

#[derive(Parser)]
#[command(name = "gda-stream", version, about = "Streaming Gaussian discriminant test-time adaptation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Adapt over a stream directory and report accuracy.
    Run(RunArgs),
    /// Generate a synthetic drifting stream from a key=value spec file.
    Simulate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check the per-step KL bound of a simulated stream.
    VerifyDrift {
        #[arg(long)]
        stream: PathBuf,
        #[arg(long, allow_negative_numbers = true)]
        delta: f64,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    stream: PathBuf,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    alpha: f64,
    #[arg(long, default_value_t = 0.005, allow_negative_numbers = true)]
    lr: f64,
    #[arg(long, default_value_t = 0.99, allow_negative_numbers = true)]
    ema: f64,
    #[arg(long, default_value_t = 0.01, allow_negative_numbers = true)]
    eps: f64,
    #[arg(long, default_value_t = 0.1, allow_negative_numbers = true)]
    prior_var: f64,
    #[arg(long, default_value_t = 0.01, allow_negative_numbers = true)]
    tau: f64,
    #[arg(long, default_value_t = 0.05, allow_negative_numbers = true)]
    kappa: f64,
    #[arg(long, default_value_t = 10)]
    pca_dim: usize,
    #[arg(long, default_value_t = 1)]
    rounds: usize,
    #[arg(long, default_value = "auto")]
    force_mode: String,
    /// hypothesis-test, em, fusion, self-paced or continual-reset
    #[arg(long, num_args = 1..)]
    disable: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn config(&self) -> Result<PipelineConfig> {
        let config = PipelineConfig {
            alpha: self.alpha,
            adapter: AdapterConfig {
                lr: self.lr,
                ema_decay: self.ema,
            },
            gmm: GmmConfig {
                reg_strength: self.eps,
                prior_variance: self.prior_var,
            },
            temperature: self.tau,
            kappa: self.kappa,
            pca_dim: self.pca_dim,
            rounds: self.rounds,
            mode: self.force_mode.parse::<ModeOverride>()?,
            disabled: self.disable.iter().map(|c| c.parse::<Component>()).collect::<Result<_>>()?,
            seed: self.seed,
        };
        config.validate()?;
        Ok(config)
    }
}

fn run(args: RunArgs) -> Result<()> {
    let config = args.config()?;
    if !args.stream.is_dir() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("stream directory {} not found", args.stream.display()),
        )));
    }
    let source = StreamSource::open_with_temperature(&args.stream, config.temperature)?;
    let output = match (&args.resume, config.rounds) {
        (Some(path), 1) => continue_stream(Pipeline::resume(source.prototypes(), config.clone(), path)?, source.batches())?,
        (Some(_), _) => return Err(Error::Config("--resume supports a single round".into())),
        (None, 1) => run_stream(source.batches(), source.prototypes(), &config)?,
        (None, _) => {
            let batches = source.batches().collect::<Result<Vec<_>>>()?;
            run_longterm(&batches, source.prototypes(), &config)?
        }
    };
    print!("{config}{}", output.summary);
    if let Ok(batches) = source.batches().collect::<Result<Vec<_>>>() {
        if let Ok(zs) = run_zero_shot(&batches, source.prototypes()) {
            println!("zero_shot_accuracy={:.4}", zs.weighted_accuracy);
        }
    }
    if let Some(out) = &args.out {
        write_run_artifacts(out, &config, &output)?;
    }
    Ok(())
}

fn simulate(spec: PathBuf, out: PathBuf) -> Result<()> {
    let spec: DriftSpec = fs::read_to_string(&spec)?.parse()?;
    let generated = drift_sim::generate(&spec)?;
    let manifest = write_stream(&generated.batches, &generated.prototypes, &out)?;
    fs::write(out.join(SPEC_FILE), spec.to_string())?;
    print!("{manifest}");
    Ok(())
}

fn verify_drift(stream: PathBuf, delta: f64) -> Result<bool> {
    if !(delta > 0.0) {
        return Err(Error::Config(format!("delta must be positive, got {delta}")));
    }
    let spec: DriftSpec = fs::read_to_string(stream.join(SPEC_FILE))?.parse()?;
    let (manifest, batches, _) = read_all(&stream)?;
    if manifest.dim != spec.dim || manifest.classes != spec.classes || manifest.total_batches() != spec.total_batches() {
        return Err(Error::ManifestMismatch(format!("{SPEC_FILE} does not describe this stream")));
    }
    let truth = GroundTruth {
        domains: drift_sim::ground_truth_parameters(&spec)?,
        labels: batches.iter().flat_map(|b| b.labels().unwrap_or_default().to_vec()).collect(),
    };
    let report = drift_sim::verify_drift_bound(&truth, delta)?;
    print!("{report}");
    Ok(report.passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args).map(|_| true),
        Command::Simulate { spec, out } => simulate(spec, out).map(|_| true),
        Command::VerifyDrift { stream, delta } => verify_drift(stream, delta),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { 2 } else { 3 })
        }
    }
}
