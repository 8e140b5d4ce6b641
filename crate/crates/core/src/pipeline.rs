//! Source-to-quadrature segment generator.
//!
//! Every segment draws from its own random stream, keyed by the run seed and
//! the segment index, so any range of segments can be regenerated exactly and
//! in parallel.

use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::{integrate_samples, DetectorConfig, SegmentSynthesizer};
use crate::error::{invalid, Result};
use crate::fock::{
    herald_probability, heralded_lossy_state, pair_distribution, EfficiencyBudget, FockDiagonal, HeraldParams,
    SqueezeParam, SIMULATION_N_MAX,
};
use crate::quadrature::{calibration_scale, QuadratureSampler};
use crate::tomography::StreamingEstimator;

/// Segments generated per parallel work unit.
const CHUNK: usize = 512;

/// Heralded source as seen by the detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceModel {
    pub gamma_sq: f64,
    pub eta_t: f64,
    /// Optical transmission of the heralded photon up to the detector electronics.
    pub eta: f64,
}

impl SourceModel {
    pub fn new(gamma_sq: f64, eta_t: f64, eta: f64) -> Result<Self> {
        let s = Self { gamma_sq, eta_t, eta };
        s.validate()?;
        Ok(s)
    }

    pub fn from_budget(gamma_sq: f64, eta_t: f64, budget: &EfficiencyBudget) -> Result<Self> {
        budget.validate()?;
        Self::new(gamma_sq, eta_t, budget.optical())
    }

    pub fn validate(&self) -> Result<()> {
        SqueezeParam::from_gamma_sq(self.gamma_sq)?;
        HeraldParams::new(self.eta_t)?;
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(invalid(format!("eta must lie in [0, 1], got {}", self.eta)));
        }
        Ok(())
    }

    /// Photon-number distribution of the signal pulse after a herald.
    pub fn signal_state(&self) -> Result<FockDiagonal> {
        heralded_lossy_state(
            SqueezeParam::from_gamma_sq(self.gamma_sq)?,
            HeraldParams::new(self.eta_t)?,
            self.eta,
            SIMULATION_N_MAX,
        )
    }

    /// Herald probability per laser pulse.
    pub fn herald_probability(&self) -> Result<f64> {
        let pairs = pair_distribution(SqueezeParam::from_gamma_sq(self.gamma_sq)?, SIMULATION_N_MAX)?;
        Ok(herald_probability(&pairs, HeraldParams::new(self.eta_t)?))
    }
}

/// Integrated raw quadratures of a run of consecutive segments.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawBlock {
    pub first_segment: u64,
    pub signal: Vec<f64>,
    /// Row-major, `neighbors` values per segment.
    pub vacuum: Vec<f64>,
    pub neighbors: usize,
    /// Segments flagged for ADC clipping.
    pub clipped: usize,
}

impl RawBlock {
    pub fn len(&self) -> usize {
        self.signal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signal.is_empty()
    }

    pub fn vacuum_row(&self, i: usize) -> &[f64] {
        &self.vacuum[i * self.neighbors..(i + 1) * self.neighbors]
    }

    /// Mean square of one segment's vacuum pulses.
    pub fn vacuum_power(&self, i: usize) -> f64 {
        let row = self.vacuum_row(i);
        row.iter().map(|v| v * v).sum::<f64>() / row.len() as f64
    }

    /// Mean square over every vacuum pulse in the block.
    pub fn vacuum_variance(&self) -> f64 {
        self.vacuum.iter().map(|v| v * v).sum::<f64>() / self.vacuum.len() as f64
    }
}

/// Produces digitized and integrated segments for one source and detector.
#[derive(Debug, Clone)]
pub struct SegmentPipeline {
    synth: SegmentSynthesizer,
    sampler: QuadratureSampler,
    state: FockDiagonal,
    seed: u64,
}

impl SegmentPipeline {
    pub fn new(state: FockDiagonal, detector: DetectorConfig, seed: u64) -> Result<Self> {
        Ok(Self {
            synth: SegmentSynthesizer::new(detector)?,
            sampler: QuadratureSampler::new(&state),
            state,
            seed,
        })
    }

    pub fn detector(&self) -> &DetectorConfig {
        self.synth.config()
    }

    pub fn state(&self) -> &FockDiagonal {
        &self.state
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn segment_rng(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        rng
    }

    /// True pulse quadratures of one segment followed by its integrated raw values.
    fn run_segment(&self, index: u64, pulses: &mut Vec<f64>, samples: &mut Vec<f64>, raw: &mut Vec<f64>) -> bool {
        let config = self.synth.config();
        let signal_index = config.signal_index();
        let mut rng = self.segment_rng(index);
        pulses.clear();
        for k in 0..config.pulse_count() {
            let q = if k == signal_index {
                self.sampler.sample(&mut rng)
            } else {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * std::f64::consts::FRAC_1_SQRT_2
            };
            pulses.push(q);
        }
        let clipped = self.synth.synthesize_into(pulses, &mut rng, samples);
        integrate_samples(samples, self.synth.pulse_centers(), config.samples_per_period(), raw)
            .expect("synthesizer windows fit the segment");
        clipped
    }

    /// All integrated pulses of each segment, signal included.
    pub fn generate_rows(&self, first: u64, count: usize) -> Vec<Vec<f64>> {
        (0..count)
            .into_par_iter()
            .with_min_len(CHUNK)
            .map_init(
                || (Vec::new(), Vec::new(), Vec::new()),
                |(pulses, samples, raw), i| {
                    self.run_segment(first + i as u64, pulses, samples, raw);
                    raw.clone()
                },
            )
            .collect()
    }

    pub fn generate(&self, first: u64, count: usize) -> RawBlock {
        let neighbors = self.synth.config().neighbor_pulses;
        let signal_index = self.synth.config().signal_index();
        let chunks: Vec<(Vec<f64>, Vec<f64>, usize)> = (0..count.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let lo = c * CHUNK;
                let hi = (lo + CHUNK).min(count);
                let (mut pulses, mut samples, mut raw) = (Vec::new(), Vec::new(), Vec::new());
                let mut signal = Vec::with_capacity(hi - lo);
                let mut vacuum = Vec::with_capacity((hi - lo) * neighbors);
                let mut clipped = 0;
                for i in lo..hi {
                    if self.run_segment(first + i as u64, &mut pulses, &mut samples, &mut raw) {
                        clipped += 1;
                    }
                    signal.push(raw[signal_index]);
                    vacuum.extend(
                        raw.iter()
                            .enumerate()
                            .filter(|(k, _)| *k != signal_index)
                            .map(|(_, v)| *v),
                    );
                }
                (signal, vacuum, clipped)
            })
            .collect();
        let mut block = RawBlock {
            first_segment: first,
            signal: Vec::with_capacity(count),
            vacuum: Vec::with_capacity(count * neighbors),
            neighbors,
            clipped: 0,
        };
        for (s, v, c) in chunks {
            block.signal.extend(s);
            block.vacuum.extend(v);
            block.clipped += c;
        }
        block
    }
}

/// Running vacuum reference that converts raw signal values to calibrated quadratures.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunningCalibration {
    sum_sq: f64,
    count: u64,
}

impl RunningCalibration {
    pub fn push_block(&mut self, block: &RawBlock) {
        self.sum_sq += block.vacuum.iter().map(|v| v * v).sum::<f64>();
        self.count += block.vacuum.len() as u64;
    }

    pub fn variance(&self) -> f64 {
        self.sum_sq / self.count as f64
    }

    pub fn scale(&self) -> Result<f64> {
        calibration_scale(self.variance())
    }

    pub fn reset(&mut self) {
        *self = Self::default();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub segments: u64,
    pub seconds: f64,
    pub segments_per_second: f64,
    pub eta_updates: u64,
    pub last_eta: Option<f64>,
    pub threads: usize,
}

/// Unpaced generate, integrate, calibrate and stream-estimate loop.
///
/// Runs for at least `min_segments` segments and at least `min_duration`.
pub fn benchmark(
    pipeline: &SegmentPipeline,
    min_segments: u64,
    min_duration: Duration,
    block: usize,
) -> Result<BenchResult> {
    let mut estimator = StreamingEstimator::default();
    let mut calibration = RunningCalibration::default();
    let mut calibrated = Vec::with_capacity(block);
    let start = Instant::now();
    let mut done = 0u64;
    while done < min_segments || start.elapsed() < min_duration {
        let raw = pipeline.generate(done, block);
        calibration.push_block(&raw);
        let scale = calibration.scale()?;
        calibrated.clear();
        calibrated.extend(raw.signal.iter().map(|v| v * scale));
        estimator.update_with(&calibrated, |_| {});
        done += block as u64;
    }
    let seconds = start.elapsed().as_secs_f64();
    Ok(BenchResult {
        segments: done,
        seconds,
        segments_per_second: done as f64 / seconds,
        eta_updates: estimator.updates_emitted(),
        last_eta: estimator.latest_eta(),
        threads: rayon::current_num_threads(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet() -> DetectorConfig {
        DetectorConfig {
            snr_db: f64::INFINITY,
            adc_bits: 24,
            ..Default::default()
        }
    }

    #[test]
    fn source_validation() {
        assert!(SourceModel::new(1.2, 0.07, 0.5).is_err());
        assert!(SourceModel::new(0.016, 1.5, 0.5).is_err());
        assert!(SourceModel::new(0.016, 0.07, -0.1).is_err());
        let s = SourceModel::new(0.016, 0.07, 0.5787).unwrap();
        let p = s.herald_probability().unwrap();
        assert!((p / (0.07 * 0.016) - 1.0).abs() < 0.05, "{p}");
    }

    #[test]
    fn generation_is_index_addressable() {
        let state = SourceModel::new(0.016, 0.07, 0.58).unwrap().signal_state().unwrap();
        let p = SegmentPipeline::new(state, DetectorConfig::default(), 3).unwrap();
        let whole = p.generate(0, 1500);
        let tail = p.generate(1000, 500);
        assert_eq!(&whole.signal[1000..], &tail.signal[..]);
        assert_eq!(&whole.vacuum[8000..], &tail.vacuum[..]);
        let rows = p.generate_rows(1000, 3);
        assert_eq!(rows[0][4], tail.signal[0]);
        assert_eq!(rows[1][5], tail.vacuum_row(1)[4]);
    }

    #[test]
    fn ideal_detector_preserves_quadratures() {
        let state = FockDiagonal::vacuum(2).unwrap();
        let p = SegmentPipeline::new(state, quiet(), 1).unwrap();
        let block = p.generate(0, 20_000);
        let mut cal = RunningCalibration::default();
        cal.push_block(&block);
        let scale = cal.scale().unwrap();
        // one ADC step corresponds to config.lsb() quadrature units
        assert!((scale / quiet().lsb() - 1.0).abs() < 0.01, "{scale}");
        assert_eq!(block.clipped, 0);
    }

    #[test]
    fn benchmark_reports_rate() {
        let state = SourceModel::new(0.016, 0.07, 0.58).unwrap().signal_state().unwrap();
        let p = SegmentPipeline::new(state, DetectorConfig::default(), 2).unwrap();
        let r = benchmark(&p, 20_000, Duration::ZERO, 5000).unwrap();
        assert_eq!(r.segments, 20_000);
        assert_eq!(r.eta_updates, 4);
        assert!(r.segments_per_second > 0.0);
    }
}
