use std::io::Write;
use std::path::PathBuf;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use fockscope::detector::{estimate_pair_leakage, DetectorConfig};
use fockscope::error::{Error, Result};
use fockscope::fock::{visibility_to_mode_match, EfficiencyBudget};
use fockscope::io::QuadratureFile;
use fockscope::pipeline::{benchmark, SegmentPipeline, SourceModel};
use fockscope::quadrature::{calibration_scale, QuadratureBatch};
use fockscope::report::{render_report, ReportFormat, RunSummary, TriggerInfo};
use fockscope::tomography::{fisher_covariance, maxlik_diag, ExtractModel, MaxLikConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "fockscope", version, about = "Heralded single-photon homodyne tomography")]
pub struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate heralded segments and write their integrated quadratures.
    Simulate(SimulateArgs),
    /// Reconstruct photon-number populations from a quadrature file.
    Reconstruct(ReconstructArgs),
    /// Convert a raw file to vacuum-variance-half units.
    Calibrate(CalibrateArgs),
    /// Measure unpaced pipeline throughput.
    Bench(BenchArgs),
    /// Run the live session service.
    Serve(ServeArgs),
    /// Export reference values for client cross-checks.
    Fixtures(FixturesArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Format {
    Text,
    Structured,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Text => ReportFormat::Text,
            Format::Structured => ReportFormat::Structured,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct PhysicsArgs {
    /// Pair probability per pulse.
    #[arg(long, default_value_t = 0.016)]
    pub gamma_sq: f64,
    /// Trigger detection efficiency.
    #[arg(long, default_value_t = 0.07)]
    pub eta_t: f64,
    /// Signal/local-oscillator interference visibility.
    #[arg(long, default_value_t = 0.85)]
    pub visibility: f64,
    #[arg(long, default_value_t = 0.96)]
    pub eta_l: f64,
    #[arg(long, default_value_t = 0.98)]
    pub eta_p: f64,
    #[arg(long, default_value_t = 0.85)]
    pub eta_d: f64,
    /// Optical efficiency of the signal path; replaces the stage product.
    #[arg(long)]
    pub eta: Option<f64>,
    /// Shot-to-electronic noise ratio in dB ("inf" for none).
    #[arg(long, default_value_t = 14.0)]
    pub snr_db: f64,
    #[arg(long, default_value_t = 8)]
    pub adc_bits: u32,
    /// Detector -3 dB bandwidth in Hz.
    #[arg(long, default_value_t = 90e6)]
    pub bandwidth: f64,
}

impl PhysicsArgs {
    pub fn detector(&self) -> DetectorConfig {
        DetectorConfig {
            snr_db: self.snr_db,
            adc_bits: self.adc_bits,
            bandwidth_3db: self.bandwidth,
            ..Default::default()
        }
    }

    pub fn source(&self) -> Result<SourceModel> {
        let budget = EfficiencyBudget::new(
            self.eta_p,
            visibility_to_mode_match(self.visibility)?,
            self.eta_l,
            self.eta_d,
            1.0,
        )?;
        match self.eta {
            Some(eta) => SourceModel::new(self.gamma_sq, self.eta_t, eta),
            None => SourceModel::from_budget(self.gamma_sq, self.eta_t, &budget),
        }
    }

    fn pipeline(&self, seed: u64) -> Result<SegmentPipeline> {
        SegmentPipeline::new(self.source()?.signal_state()?, self.detector(), seed)
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 100_000)]
    pub count: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(short, long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub physics: PhysicsArgs,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    pub input: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub n_max: usize,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long, default_value_t = 5000)]
    pub max_iter: usize,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    /// Remove the leakage of the preceding vacuum pulse before calibrating.
    #[arg(long)]
    pub decorrelate: bool,
    /// Invert the full herald-and-loss chain instead of the second-order model.
    #[arg(long)]
    pub exact_model: bool,
    /// Trigger rate in Hz; defaults to the file header.
    #[arg(long)]
    pub trigger_rate: Option<f64>,
    /// Laser repetition rate in Hz; defaults to the file header.
    #[arg(long)]
    pub rep_rate: Option<f64>,
    /// Trigger efficiency for --exact-model; defaults to the file header.
    #[arg(long)]
    pub eta_t: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    pub input: PathBuf,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Minimum wall time in seconds.
    #[arg(long, default_value_t = 1.0)]
    pub duration: f64,
    /// Minimum number of segments.
    #[arg(long, default_value_t = 1_000_000)]
    pub min_segments: u64,
    #[arg(long)]
    pub single_thread: bool,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    #[command(flatten)]
    pub physics: PhysicsArgs,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "FOCKSCOPE_HOST", default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, env = "FOCKSCOPE_PORT", default_value_t = 8080)]
    pub port: u16,
    #[arg(long, env = "FOCKSCOPE_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Generate segments as fast as possible instead of at the acquisition rate.
    #[arg(long)]
    pub unpaced: bool,
    #[command(flatten)]
    pub physics: PhysicsArgs,
}

#[derive(Debug, Args)]
pub struct FixturesArgs {
    /// Output path; standard output when absent.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

/// Outcome of a successful command that still warrants a nonzero exit.
pub struct Outcome {
    pub code: i32,
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidParameter(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

pub fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Reconstruct(a) => reconstruct(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Bench(a) => bench(a),
        Command::Serve(a) => serve(a),
        Command::Fixtures(a) => fixtures(a),
    }
}

const SIM_CHUNK: usize = 100_000;

fn simulate(a: SimulateArgs) -> Result<Outcome> {
    let source = a.physics.source()?;
    let pipeline = a.physics.pipeline(a.seed)?;
    let detector = *pipeline.detector();
    let s = detector.signal_index();
    let mut file = QuadratureFile {
        seed: Some(a.seed),
        calibrated: false,
        signal: Vec::with_capacity(a.count),
        vacuum: Some(Vec::with_capacity(a.count)),
        ..Default::default()
    };
    let (mut sum_sq, mut n_sq) = (0.0, 0usize);
    let mut done = 0;
    while done < a.count {
        let n = SIM_CHUNK.min(a.count - done);
        let block = pipeline.generate(done as u64, n);
        for i in 0..n {
            let row = block.vacuum_row(i);
            // the vacuum column is the pulse just before the heralded one
            file.vacuum.as_mut().unwrap().push(row[s - 1]);
            // reference pulses that follow another vacuum pulse
            for (k, v) in row.iter().enumerate() {
                if k != 0 && k != s {
                    sum_sq += v * v;
                    n_sq += 1;
                }
            }
        }
        file.signal.extend_from_slice(&block.signal);
        if block.clipped > 0 {
            log::warn!("{} segments clipped at the digitizer", block.clipped);
        }
        done += n;
    }
    let extra = &mut file.extra;
    extra.insert("rep_rate".into(), format!("{}", detector.rep_rate));
    extra.insert(
        "trigger_rate".into(),
        format!("{}", source.herald_probability()? * detector.rep_rate),
    );
    extra.insert("gamma_sq".into(), format!("{}", source.gamma_sq));
    extra.insert("eta_t".into(), format!("{}", source.eta_t));
    extra.insert("eta_optical".into(), format!("{}", source.eta));
    extra.insert("snr_db".into(), format!("{}", detector.snr_db));
    extra.insert("adc_bits".into(), format!("{}", detector.adc_bits));
    extra.insert("bandwidth".into(), format!("{}", detector.bandwidth_3db));
    if n_sq > 0 {
        extra.insert("vacuum_variance".into(), format!("{}", sum_sq / n_sq as f64));
    }
    file.save(&a.out)?;
    println!("wrote {} records to {}", a.count, a.out.display());
    Ok(Outcome { code: EXIT_OK })
}

/// Calibrated signal quadratures from a file, optionally with the neighbor leakage removed.
fn calibrated_signal(file: &QuadratureFile, decorrelate: bool) -> Result<QuadratureBatch> {
    if file.calibrated {
        if decorrelate {
            return Err(Error::InvalidParameter("--decorrelate needs a raw file".into()));
        }
        return Ok(QuadratureBatch::calibrated(file.signal.clone()));
    }
    let column_variance = |v: &[f64]| {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
    };
    let mut vacuum_variance = match (file.extra_f64("vacuum_variance"), &file.vacuum) {
        (Some(v), _) => v,
        (None, Some(col)) if !col.is_empty() => column_variance(col),
        _ => {
            return Err(Error::CalibrationFailed(
                "raw file has neither a vacuum column nor a vacuum_variance header".into(),
            ))
        }
    };
    let mut signal = file.signal.clone();
    if decorrelate {
        let vac = file
            .vacuum
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("--decorrelate needs a vacuum column".into()))?;
        let leak = estimate_pair_leakage(vac, &signal)?;
        log::info!("leakage of the preceding pulse: {leak:.5}");
        for (s, v) in signal.iter_mut().zip(vac) {
            *s -= leak * v;
        }
        // reference pulses carry the same leakage from their own predecessors
        vacuum_variance /= 1.0 + leak * leak;
    }
    let scale = calibration_scale(vacuum_variance)?;
    Ok(QuadratureBatch::calibrated(signal.iter().map(|v| v * scale).collect()))
}

fn reconstruct(a: ReconstructArgs) -> Result<Outcome> {
    let file = QuadratureFile::load(&a.input)?;
    let batch = calibrated_signal(&file, a.decorrelate)?;
    let config = MaxLikConfig {
        n_max: a.n_max,
        tol: a.tol,
        max_iter: a.max_iter,
    };
    config.validate()?;
    let result = maxlik_diag(&batch, &config)?;
    let cov = fisher_covariance(&result.state, &batch)?;
    let rep_rate = a
        .rep_rate
        .or_else(|| file.extra_f64("rep_rate"))
        .unwrap_or(DetectorConfig::default().rep_rate);
    let trigger = a
        .trigger_rate
        .or_else(|| file.extra_f64("trigger_rate"))
        .map(|trigger_rate| TriggerInfo { trigger_rate, rep_rate });
    let mut summary = RunSummary::from_reconstruction(&result, Some(&cov), trigger, rep_rate, batch.len())?;
    if a.exact_model {
        let eta_t = a.eta_t.or_else(|| file.extra_f64("eta_t")).unwrap_or(0.07);
        let model = ExtractModel::Exact { eta_t };
        let e = fockscope::tomography::extract_eta_gamma_with(&result.state, model)?;
        let (se, sg) = e.propagate(&result.state, &cov, model)?;
        summary.eta = Some(e.eta);
        summary.sigma_eta = Some(se);
        summary.gamma_sq = e.gamma_identified.then_some(e.gamma_sq);
        summary.sigma_gamma_sq = e.gamma_identified.then_some(sg);
    }
    print!("{}", render_report(&summary, a.format.into()));
    if !result.converged {
        eprintln!("maximum likelihood did not converge within {} iterations", a.max_iter);
        return Ok(Outcome {
            code: EXIT_NOT_CONVERGED,
        });
    }
    Ok(Outcome { code: EXIT_OK })
}

fn calibrate(a: CalibrateArgs) -> Result<Outcome> {
    let file = QuadratureFile::load(&a.input)?;
    if file.calibrated {
        return Err(Error::CalibrationFailed("file is already calibrated".into()));
    }
    let batch = calibrated_signal(&file, false)?;
    let out = QuadratureFile {
        seed: file.seed,
        calibrated: true,
        signal: batch.into_values(),
        vacuum: None,
        extra: file.extra.clone(),
    };
    out.save(&a.out)?;
    println!("wrote {} calibrated records to {}", out.len(), a.out.display());
    Ok(Outcome { code: EXIT_OK })
}

fn bench(a: BenchArgs) -> Result<Outcome> {
    let pipeline = a.physics.pipeline(a.seed)?;
    let run = || {
        benchmark(
            &pipeline,
            a.min_segments,
            Duration::from_secs_f64(a.duration.max(0.0)),
            5000,
        )
    };
    let result = if a.single_thread {
        rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .map_err(|e| Error::Io(e.to_string()))?
            .install(run)?
    } else {
        run()?
    };
    match a.format {
        Format::Text => println!(
            "{:.0} segments/s ({} segments in {:.3} s, {} threads, {} estimator updates)",
            result.segments_per_second, result.segments, result.seconds, result.threads, result.eta_updates
        ),
        Format::Structured => println!("{}", serde_json::to_string(&result).expect("bench result serializes")),
    }
    Ok(Outcome { code: EXIT_OK })
}

#[cfg(feature = "service")]
fn serve(a: ServeArgs) -> Result<Outcome> {
    use fockscope::service::{self, AlignmentKnobs, Pacing, Session, SessionConfig, BASE_GAMMA_SQ};
    use std::sync::Arc;

    if a.physics.eta.is_some() {
        return Err(Error::InvalidParameter(
            "--eta does not apply to serve; use the stage efficiencies".into(),
        ));
    }
    let p = &a.physics;
    let knobs = AlignmentKnobs {
        pump_power_scale: p.gamma_sq / BASE_GAMMA_SQ,
        visibility: p.visibility,
        eta_l: p.eta_l,
        eta_p: p.eta_p,
        eta_d: p.eta_d,
        eta_t: p.eta_t,
        snr_db: p.snr_db,
        adc_bits: p.adc_bits,
    };
    let session = Arc::new(Session::start(SessionConfig {
        knobs,
        seed: a.seed,
        pacing: if a.unpaced { Pacing::Unpaced } else { Pacing::Paced },
        ..Default::default()
    })?);
    let addr: std::net::SocketAddr = format!("{}:{}", a.host, a.port)
        .parse()
        .map_err(|e| Error::InvalidParameter(format!("bad listen address: {e}")))?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(service::serve(Arc::clone(&session), addr, async {
        let _ = tokio::signal::ctrl_c().await;
    }))?;
    session.stop();
    Ok(Outcome { code: EXIT_OK })
}

#[cfg(not(feature = "service"))]
fn serve(_: ServeArgs) -> Result<Outcome> {
    Err(Error::InvalidParameter("built without the service feature".into()))
}

fn fixtures(a: FixturesArgs) -> Result<Outcome> {
    let mut text = serde_json::to_string_pretty(&fockscope::fixtures::export()).expect("fixtures serialize");
    text.push('\n');
    match a.out {
        Some(path) => std::fs::write(&path, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(Outcome { code: EXIT_OK })
}
