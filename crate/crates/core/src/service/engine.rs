use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, Receiver, Sender, TrySendError};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::telemetry::{kind, Subscription, Telemetry, DEFAULT_QUEUE_CAPACITY};
use crate::detector::DetectorConfig;
use crate::error::{invalid, Error, Result};
use crate::fock::{check_unit, visibility_to_mode_match, EfficiencyBudget};
use crate::pipeline::{RunningCalibration, SegmentPipeline, SourceModel};
use crate::quadrature::{wigner_section, QuadratureBatch};
use crate::report::{RunSummary, TriggerInfo};
use crate::tomography::{fisher_covariance, maxlik_diag, MaxLikConfig, StreamingEstimator};

/// Pair probability per pulse at unit pump power.
pub const BASE_GAMMA_SQ: f64 = 0.016;
pub const TARGET_SEGMENT_RATE: f64 = 25_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentKnobs {
    /// Pump power relative to nominal; `gamma^2` scales linearly with it.
    pub pump_power_scale: f64,
    pub visibility: f64,
    pub eta_l: f64,
    pub eta_p: f64,
    pub eta_d: f64,
    pub eta_t: f64,
    pub snr_db: f64,
    pub adc_bits: u32,
}

impl Default for AlignmentKnobs {
    fn default() -> Self {
        Self {
            pump_power_scale: 1.0,
            visibility: 0.85,
            eta_l: 0.96,
            eta_p: 0.98,
            eta_d: 0.85,
            eta_t: 0.07,
            snr_db: 14.0,
            adc_bits: 8,
        }
    }
}

pub const KNOB_NAMES: [&str; 8] = [
    "pump_power_scale",
    "visibility",
    "eta_l",
    "eta_p",
    "eta_d",
    "eta_t",
    "snr_db",
    "adc_bits",
];

/// Quantities implied by a knob setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Derived {
    pub gamma_sq: f64,
    pub eta_m: f64,
    /// Optical transmission of the signal photon.
    pub eta_optical: f64,
    /// Loss-equivalent efficiency of detector noise and digitization.
    pub eta_electronic: f64,
    pub eta: f64,
    pub trigger_rate_hz: f64,
    /// Segments per second the source can supply, capped at the acquisition rate.
    pub segment_rate: f64,
}

impl AlignmentKnobs {
    pub fn validate(&self) -> Result<()> {
        if !(self.pump_power_scale >= 0.0 && self.pump_power_scale * BASE_GAMMA_SQ < 1.0) {
            return Err(invalid(format!(
                "pump_power_scale must lie in [0, {}), got {}",
                1.0 / BASE_GAMMA_SQ,
                self.pump_power_scale
            )));
        }
        check_unit("visibility", self.visibility)?;
        self.budget()?;
        check_unit("eta_t", self.eta_t)?;
        self.detector().validate()
    }

    pub fn budget(&self) -> Result<EfficiencyBudget> {
        EfficiencyBudget::new(
            self.eta_p,
            visibility_to_mode_match(self.visibility)?,
            self.eta_l,
            self.eta_d,
            1.0,
        )
    }

    pub fn detector(&self) -> DetectorConfig {
        DetectorConfig {
            snr_db: self.snr_db,
            adc_bits: self.adc_bits,
            ..Default::default()
        }
    }

    pub fn source(&self) -> Result<SourceModel> {
        SourceModel::from_budget(self.pump_power_scale * BASE_GAMMA_SQ, self.eta_t, &self.budget()?)
    }

    pub fn derived(&self) -> Result<Derived> {
        self.validate()?;
        let source = self.source()?;
        let detector = self.detector();
        let eta_electronic = detector.electronics_efficiency();
        let trigger_rate_hz = source.herald_probability()? * detector.rep_rate;
        Ok(Derived {
            gamma_sq: source.gamma_sq,
            eta_m: visibility_to_mode_match(self.visibility)?,
            eta_optical: source.eta,
            eta_electronic,
            eta: source.eta * eta_electronic,
            trigger_rate_hz,
            segment_rate: trigger_rate_hz.min(TARGET_SEGMENT_RATE),
        })
    }

    /// Copy with one knob changed; the original is untouched on error.
    pub fn with(&self, name: &str, value: f64) -> Result<Self> {
        if !value.is_finite() {
            return Err(invalid(format!("{name} must be finite")));
        }
        let mut k = *self;
        match name {
            "pump_power_scale" => k.pump_power_scale = value,
            "visibility" => k.visibility = value,
            "eta_l" => k.eta_l = value,
            "eta_p" => k.eta_p = value,
            "eta_d" => k.eta_d = value,
            "eta_t" => k.eta_t = value,
            "snr_db" => k.snr_db = value,
            "adc_bits" => {
                if value.fract() != 0.0 || !(4.0..=24.0).contains(&value) {
                    return Err(invalid(format!("adc_bits must be an integer in [4, 24], got {value}")));
                }
                k.adc_bits = value as u32;
            }
            _ => {
                return Err(invalid(format!(
                    "unknown knob {name:?}; expected one of {KNOB_NAMES:?}"
                )))
            }
        }
        k.validate()?;
        Ok(k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Pacing {
    /// Segments follow the wall clock at the source's segment rate.
    Paced,
    Unpaced,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub knobs: AlignmentKnobs,
    pub seed: u64,
    pub pacing: Pacing,
    pub block_size: usize,
    /// Samples in the rolling reconstruction window.
    pub recon_window: usize,
    /// Segments between reconstructions.
    pub recon_every: u64,
    pub recon_n_max: usize,
    pub recon_tol: f64,
    /// Calibrated samples carried by one quad-batch message.
    pub quad_batch_len: usize,
    pub queue_capacity: usize,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            knobs: AlignmentKnobs::default(),
            seed: 0,
            pacing: Pacing::Paced,
            block_size: StreamingEstimator::DEFAULT_BLOCK,
            recon_window: 50_000,
            recon_every: 50_000,
            recon_n_max: 4,
            recon_tol: 1e-8,
            quad_batch_len: 500,
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnobAck {
    pub name: String,
    pub value: f64,
    pub epoch: u64,
    pub derived: Derived,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateView {
    pub knobs: AlignmentKnobs,
    pub derived: Derived,
    pub epoch: u64,
    pub latest_eta: Option<f64>,
    pub segments_emitted: u64,
    pub segments_per_second: f64,
    pub reconstruction_ready: bool,
}

#[derive(Debug)]
struct Control {
    knobs: AlignmentKnobs,
    derived: Derived,
    epoch: u64,
    pipeline: Option<Arc<SegmentPipeline>>,
    summary: Option<(u64, RunSummary)>,
}

#[derive(Debug)]
struct Shared {
    config: SessionConfig,
    control: Mutex<Control>,
    telemetry: Telemetry,
    stop: AtomicBool,
    /// Bit pattern of the latest block estimate; NaN before the first block.
    latest_eta: AtomicU64,
    segments_emitted: AtomicU64,
    rate_bits: AtomicU64,
}

fn build_pipeline(knobs: &AlignmentKnobs, seed: u64) -> Result<Option<Arc<SegmentPipeline>>> {
    match knobs.source()?.signal_state() {
        Ok(state) => Ok(Some(Arc::new(SegmentPipeline::new(state, knobs.detector(), seed)?))),
        Err(Error::NoHeraldPossible) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Live pipeline: producer, streaming estimator, periodic reconstruction and telemetry.
#[derive(Debug)]
pub struct Session {
    shared: Arc<Shared>,
    threads: Mutex<Vec<JoinHandle<()>>>,
}

struct ReconJob {
    epoch: u64,
    samples: Vec<f64>,
    derived: Derived,
}

impl Session {
    pub fn start(config: SessionConfig) -> Result<Self> {
        let derived = config.knobs.derived()?;
        StreamingEstimator::new(config.block_size)?;
        MaxLikConfig {
            n_max: config.recon_n_max,
            tol: config.recon_tol,
            max_iter: 5000,
        }
        .validate()?;
        if config.recon_window < 10 * config.recon_n_max {
            return Err(invalid("reconstruction window too small"));
        }
        let pipeline = build_pipeline(&config.knobs, config.seed)?;
        let shared = Arc::new(Shared {
            control: Mutex::new(Control {
                knobs: config.knobs,
                derived,
                epoch: 0,
                pipeline,
                summary: None,
            }),
            telemetry: Telemetry::new(Instant::now()),
            stop: AtomicBool::new(false),
            latest_eta: AtomicU64::new(f64::NAN.to_bits()),
            segments_emitted: AtomicU64::new(0),
            rate_bits: AtomicU64::new(0f64.to_bits()),
            config,
        });
        let (tx, rx) = bounded::<ReconJob>(1);
        let producer = {
            let shared = Arc::clone(&shared);
            std::thread::Builder::new()
                .name("fockscope-producer".into())
                .spawn(move || produce(shared, tx))?
        };
        let worker = {
            let shared = Arc::clone(&shared);
            std::thread::Builder::new()
                .name("fockscope-recon".into())
                .spawn(move || reconstruct(shared, rx))?
        };
        Ok(Self {
            shared,
            threads: Mutex::new(vec![producer, worker]),
        })
    }

    pub fn config(&self) -> &SessionConfig {
        &self.shared.config
    }

    pub fn subscribe(&self) -> Subscription {
        self.shared.telemetry.subscribe(self.shared.config.queue_capacity)
    }

    pub fn elapsed_ms(&self) -> u64 {
        self.shared.telemetry.elapsed_ms()
    }

    /// Applies a knob; later segments use the new physics and estimator state restarts.
    pub fn set_knob(&self, name: &str, value: f64) -> Result<KnobAck> {
        let mut c = self.shared.control.lock().unwrap();
        let knobs = c.knobs.with(name, value)?;
        let derived = knobs.derived()?;
        let pipeline = build_pipeline(&knobs, self.shared.config.seed)?;
        c.knobs = knobs;
        c.derived = derived;
        c.pipeline = pipeline;
        c.epoch += 1;
        c.summary = None;
        self.shared.latest_eta.store(f64::NAN.to_bits(), Ordering::Relaxed);
        log::info!("knob {name} = {value}, epoch {}", c.epoch);
        Ok(KnobAck {
            name: name.to_string(),
            value,
            epoch: c.epoch,
            derived,
        })
    }

    pub fn latest_eta(&self) -> Option<f64> {
        let v = f64::from_bits(self.shared.latest_eta.load(Ordering::Relaxed));
        (!v.is_nan()).then_some(v)
    }

    pub fn segments_emitted(&self) -> u64 {
        self.shared.segments_emitted.load(Ordering::Relaxed)
    }

    pub fn state(&self) -> StateView {
        let c = self.shared.control.lock().unwrap();
        StateView {
            knobs: c.knobs,
            derived: c.derived,
            epoch: c.epoch,
            latest_eta: self.latest_eta(),
            segments_emitted: self.segments_emitted(),
            segments_per_second: f64::from_bits(self.shared.rate_bits.load(Ordering::Relaxed)),
            reconstruction_ready: c.summary.as_ref().is_some_and(|(e, _)| *e == c.epoch),
        }
    }

    /// Summary of the latest reconstruction under the current knobs.
    pub fn snapshot(&self) -> Result<RunSummary> {
        let c = self.shared.control.lock().unwrap();
        match &c.summary {
            Some((epoch, s)) if *epoch == c.epoch => Ok(s.clone()),
            _ => Err(Error::NotReady("no reconstruction since the last knob change".into())),
        }
    }

    pub fn stop(&self) {
        self.shared.stop.store(true, Ordering::Release);
        for t in self.threads.lock().unwrap().drain(..) {
            let _ = t.join();
        }
        self.shared.telemetry.close_all();
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        self.stop();
    }
}

fn set_latest(shared: &Shared, eta: f64) {
    shared.latest_eta.store(eta.to_bits(), Ordering::Relaxed);
}

fn produce(shared: Arc<Shared>, recon: Sender<ReconJob>) {
    let cfg = shared.config;
    let telemetry = &shared.telemetry;
    let mut epoch = u64::MAX;
    let mut next_index = 0u64;
    let mut estimator = StreamingEstimator::new(cfg.block_size).expect("validated at start");
    let mut calibration = RunningCalibration::default();
    let mut window: VecDeque<f64> = VecDeque::with_capacity(cfg.recon_window);
    let mut pending_quads: Vec<f64> = Vec::new();
    let mut since_recon = 0u64;
    let mut calibrated = Vec::new();
    let mut pace_start = Instant::now();
    let mut paced = 0u64;
    let mut rate_mark = (Instant::now(), 0u64);
    while !shared.stop.load(Ordering::Acquire) {
        let (current, pipeline, derived) = {
            let c = shared.control.lock().unwrap();
            (c.epoch, c.pipeline.clone(), c.derived)
        };
        if current != epoch {
            epoch = current;
            estimator.reset();
            calibration.reset();
            window.clear();
            pending_quads.clear();
            since_recon = 0;
            pace_start = Instant::now();
            paced = 0;
        }
        let now = Instant::now();
        if now.duration_since(rate_mark.0) >= Duration::from_secs(1) {
            let emitted = shared.segments_emitted.load(Ordering::Relaxed);
            let rate = (emitted - rate_mark.1) as f64 / now.duration_since(rate_mark.0).as_secs_f64();
            shared.rate_bits.store(rate.to_bits(), Ordering::Relaxed);
            telemetry.publish(
                kind::RATE_UPDATE,
                json!({
                    "segments_per_second": rate,
                    "trigger_rate_hz": derived.trigger_rate_hz,
                    "segments_emitted": emitted,
                    "epoch": epoch,
                }),
            );
            rate_mark = (now, emitted);
        }
        let Some(pipeline) = pipeline else {
            std::thread::sleep(Duration::from_millis(20));
            continue;
        };
        let batch = match cfg.pacing {
            Pacing::Paced => ((derived.segment_rate / 50.0) as usize).clamp(1, 500),
            Pacing::Unpaced => 5000,
        };
        let raw = pipeline.generate(next_index, batch);
        next_index += batch as u64;
        calibration.push_block(&raw);
        let scale = match calibration.scale() {
            Ok(s) => s,
            Err(e) => {
                log::warn!("calibration failed: {e}");
                continue;
            }
        };
        calibrated.clear();
        calibrated.extend(raw.signal.iter().map(|v| v * scale));
        shared.segments_emitted.fetch_add(batch as u64, Ordering::Relaxed);

        let mut offset = 0;
        let block_size = cfg.block_size;
        let vacuum_variance = calibration.variance() * scale * scale;
        estimator.update_with(&calibrated, |u| {
            set_latest(&shared, u.eta);
            telemetry.publish(
                kind::ETA_UPDATE,
                json!({
                    "eta": u.eta,
                    "std_error": u.std_error,
                    "block": u.block,
                    "block_size": block_size,
                    "epoch": epoch,
                    "derived_eta": derived.eta,
                }),
            );
            let need = block_size - pending_quads.len();
            let take = need.min(calibrated.len() - offset);
            pending_quads.extend_from_slice(&calibrated[offset..offset + take]);
            offset += take;
            let step = (block_size / cfg.quad_batch_len.max(1)).max(1);
            let samples: Vec<f64> = pending_quads.iter().step_by(step).copied().collect();
            telemetry.publish(
                kind::QUAD_BATCH,
                json!({
                    "block": u.block,
                    "epoch": epoch,
                    "decimation": step,
                    "vacuum_variance": vacuum_variance,
                    "samples": samples,
                }),
            );
            pending_quads.clear();
        });
        pending_quads.extend_from_slice(&calibrated[offset..]);

        for &q in &calibrated {
            if window.len() == cfg.recon_window {
                window.pop_front();
            }
            window.push_back(q);
        }
        since_recon += batch as u64;
        if since_recon >= cfg.recon_every && window.len() == cfg.recon_window {
            let job = ReconJob {
                epoch,
                samples: window.iter().copied().collect(),
                derived,
            };
            match recon.try_send(job) {
                Ok(()) => since_recon = 0,
                Err(TrySendError::Full(_)) => {}
                Err(TrySendError::Disconnected(_)) => break,
            }
        }

        if cfg.pacing == Pacing::Paced {
            paced += batch as u64;
            let due = pace_start + Duration::from_secs_f64(paced as f64 / derived.segment_rate);
            let now = Instant::now();
            if due > now {
                std::thread::sleep(due - now);
            }
        }
    }
}

fn reconstruct(shared: Arc<Shared>, jobs: Receiver<ReconJob>) {
    let cfg = shared.config;
    let ml = MaxLikConfig {
        n_max: cfg.recon_n_max,
        tol: cfg.recon_tol,
        max_iter: 5000,
    };
    let radii: Vec<f64> = (0..=60).map(|i| i as f64 * 0.05).collect();
    loop {
        let job = match jobs.recv_timeout(Duration::from_millis(50)) {
            Ok(job) => job,
            Err(crossbeam_channel::RecvTimeoutError::Timeout) => {
                if shared.stop.load(Ordering::Acquire) {
                    return;
                }
                continue;
            }
            Err(crossbeam_channel::RecvTimeoutError::Disconnected) => return,
        };
        let n = job.samples.len();
        let batch = QuadratureBatch::calibrated(job.samples);
        let result = match maxlik_diag(&batch, &ml) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("reconstruction failed: {e}");
                continue;
            }
        };
        let cov = fisher_covariance(&result.state, &batch).ok();
        let trigger = TriggerInfo {
            trigger_rate: job.derived.trigger_rate_hz,
            rep_rate: DetectorConfig::default().rep_rate,
        };
        let summary = match RunSummary::from_reconstruction(&result, cov.as_ref(), Some(trigger), trigger.rep_rate, n) {
            Ok(s) => s,
            Err(e) => {
                log::warn!("summary failed: {e}");
                continue;
            }
        };
        let wigner = wigner_section(&result.state, &radii);
        shared.telemetry.publish(
            kind::RECON_UPDATE,
            json!({
                "epoch": job.epoch,
                "samples": n,
                "diagonals": result.state.probs(),
                "sigma": result.sigma,
                "eta": summary.eta,
                "gamma_sq": summary.gamma_sq,
                "fidelity": summary.fidelity,
                "iterations": result.iterations,
                "converged": result.converged,
                "log_likelihood": result.log_likelihood,
                "wigner": wigner,
            }),
        );
        let mut c = shared.control.lock().unwrap();
        if c.epoch == job.epoch {
            c.summary = Some((job.epoch, summary));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_knobs_land_in_expected_band() {
        let d = AlignmentKnobs::default().derived().unwrap();
        assert!((d.eta_m - 0.7225).abs() < 1e-12);
        assert!(d.eta > 0.54 && d.eta < 0.60, "{d:?}");
        assert!((d.segment_rate - TARGET_SEGMENT_RATE).abs() < 1e-9);
        assert!(d.trigger_rate_hz > 70e3 && d.trigger_rate_hz < 100e3, "{d:?}");
    }

    #[test]
    fn visibility_knob() {
        let k = AlignmentKnobs::default().with("visibility", 0.90).unwrap();
        let d = k.derived().unwrap();
        assert!((d.eta_m - 0.81).abs() < 1e-12);
        assert!(d.eta > AlignmentKnobs::default().derived().unwrap().eta);
    }

    #[test]
    fn trigger_knob_changes_rate_not_eta() {
        let base = AlignmentKnobs::default().derived().unwrap();
        let d = AlignmentKnobs::default()
            .with("eta_t", 0.035)
            .unwrap()
            .derived()
            .unwrap();
        assert_eq!(d.eta, base.eta);
        assert!((d.trigger_rate_hz / base.trigger_rate_hz - 0.5).abs() < 0.01);
    }

    #[test]
    fn bad_knobs_rejected() {
        let k = AlignmentKnobs::default();
        assert!(k.with("nonsense", 1.0).is_err());
        assert!(k.with("visibility", 1.2).is_err());
        assert!(k.with("adc_bits", 8.5).is_err());
        assert!(k.with("pump_power_scale", 100.0).is_err());
        assert!(k.with("snr_db", f64::NAN).is_err());
        assert!(k.with("pump_power_scale", 0.0).is_ok());
    }
}
