//! Waveform-level model of the pulsed homodyne detector and digitizer.
//!
//! Each optical pulse deposits its quadrature as a charge that the detector
//! spreads over time with a single-pole response `h(t) = exp(-t/tau)/tau`,
//! `tau = 1/(2 pi f_3dB)`. The digitizer integrates the voltage over each
//! sample aperture, adds white electronic noise and rounds to `adc_bits`
//! levels. A pulse's raw quadrature is the sum of the samples from its own
//! arrival bin up to the next pulse's arrival bin, so a finite bandwidth
//! leaks every pulse into the windows of the pulses that follow it.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numeric::Lu;

/// Fraction of railed samples above which a trace is flagged as clipped.
pub const CLIP_FRACTION: f64 = 1e-3;
/// Minimum number of vacuum segments for crosstalk estimation.
pub const MIN_CROSSTALK_SEGMENTS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// Pulse repetition rate, Hz.
    pub rep_rate: f64,
    /// -3 dB bandwidth of the detector, Hz.
    pub bandwidth_3db: f64,
    /// Duration of one acquired segment, s.
    pub segment_length: f64,
    /// Vacuum pulses recorded alongside the heralded one.
    pub neighbor_pulses: usize,
    /// Digitizer sample rate, Hz.
    pub sample_rate: f64,
    pub adc_bits: u32,
    /// Ratio of total vacuum noise to electronic noise, dB. `f64::INFINITY` disables noise.
    pub snr_db: f64,
    /// Digitizer half range in vacuum standard deviations of one pulse quadrature.
    pub full_scale_sigmas: f64,
    /// Arrival time of the first pulse after the segment start, s.
    pub first_pulse_delay: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            rep_rate: 76e6,
            bandwidth_3db: 90e6,
            segment_length: 128e-9,
            neighbor_pulses: 8,
            sample_rate: 2e9,
            adc_bits: 8,
            snr_db: 14.0,
            full_scale_sigmas: 8.0,
            first_pulse_delay: 1e-9,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rep_rate > 0.0) {
            return Err(invalid("rep_rate must be positive"));
        }
        if !(self.bandwidth_3db > 0.0) {
            return Err(invalid("bandwidth_3db must be positive"));
        }
        if !(self.sample_rate > 0.0) {
            return Err(invalid("sample_rate must be positive"));
        }
        if !(4..=24).contains(&self.adc_bits) {
            return Err(invalid(format!("adc_bits must lie in [4, 24], got {}", self.adc_bits)));
        }
        if !(self.snr_db > 0.0) {
            return Err(invalid(format!("snr_db must be positive, got {}", self.snr_db)));
        }
        if !(self.full_scale_sigmas > 0.0) {
            return Err(invalid("full_scale_sigmas must be positive"));
        }
        let pulses = (self.neighbor_pulses + 1) as f64;
        if self.segment_length < pulses / self.rep_rate {
            return Err(invalid(format!(
                "a {} ns segment cannot hold {} pulses at {} MHz",
                self.segment_length * 1e9,
                pulses,
                self.rep_rate * 1e-6
            )));
        }
        if self.first_pulse_delay < 0.0 || self.first_pulse_delay + pulses / self.rep_rate > self.segment_length {
            return Err(invalid("the last integration window extends past the segment"));
        }
        Ok(())
    }

    pub fn tau(&self) -> f64 {
        1.0 / (2.0 * std::f64::consts::PI * self.bandwidth_3db)
    }

    pub fn period(&self) -> f64 {
        1.0 / self.rep_rate
    }

    pub fn sample_interval(&self) -> f64 {
        1.0 / self.sample_rate
    }

    pub fn samples_per_segment(&self) -> usize {
        (self.segment_length * self.sample_rate).round() as usize
    }

    pub fn samples_per_period(&self) -> f64 {
        self.sample_rate / self.rep_rate
    }

    pub fn pulse_count(&self) -> usize {
        self.neighbor_pulses + 1
    }

    /// The heralded pulse sits in the middle of the segment.
    pub fn signal_index(&self) -> usize {
        self.neighbor_pulses / 2
    }

    pub fn arrival_time(&self, k: usize) -> f64 {
        self.first_pulse_delay + k as f64 * self.period()
    }

    /// Quadrature value of one ADC step.
    pub fn lsb(&self) -> f64 {
        2.0 * self.full_scale_sigmas * std::f64::consts::FRAC_1_SQRT_2 / 2f64.powi(self.adc_bits as i32)
    }

    /// Electronic noise variance per integrated pulse, quadrature units.
    pub fn electronic_noise_variance(&self) -> f64 {
        if self.snr_db.is_infinite() {
            0.0
        } else {
            0.5 / (10f64.powf(self.snr_db / 10.0) - 1.0)
        }
    }

    /// Rounding noise per integrated pulse, valid while the noise dithers the ADC.
    pub fn quantization_noise_variance(&self) -> f64 {
        self.lsb().powi(2) / 12.0 * self.samples_per_period()
    }

    /// Loss-equivalent efficiency of the electronics: additive noise and rounding.
    pub fn electronics_efficiency(&self) -> f64 {
        0.5 / (0.5 + self.electronic_noise_variance() + self.quantization_noise_variance())
    }
}

/// Loss-equivalent efficiency of additive electronic noise `snr_db` below the vacuum noise.
pub fn snr_to_eta_el(snr_db: f64) -> f64 {
    1.0 - 10f64.powf(-snr_db / 10.0)
}

/// One digitized segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentTrace {
    /// ADC codes.
    pub samples: Vec<f64>,
    /// Sample index in which each pulse arrives.
    pub pulse_centers: Vec<usize>,
    pub signal_index: usize,
    /// Samples per pulse period; sets the width of the last window.
    pub period_samples: f64,
    /// More than 0.1% of samples sat on a rail.
    pub clipped: bool,
}

/// Precomputed sample-level response of a detector configuration.
#[derive(Debug, Clone)]
pub struct SegmentSynthesizer {
    config: DetectorConfig,
    /// Per pulse: first bin touched and the charge in each bin from there on.
    responses: Vec<(usize, Vec<f64>)>,
    centers: Vec<usize>,
    noise_std: f64,
    lsb: f64,
    max_code: f64,
    min_code: f64,
}

impl SegmentSynthesizer {
    pub fn new(config: DetectorConfig) -> Result<Self> {
        config.validate()?;
        let dt = config.sample_interval();
        let tau = config.tau();
        let n_samples = config.samples_per_segment();
        let mut responses = Vec::with_capacity(config.pulse_count());
        let mut centers = Vec::with_capacity(config.pulse_count());
        for k in 0..config.pulse_count() {
            let t_k = config.arrival_time(k);
            let first = (t_k / dt).floor() as usize;
            centers.push(first);
            let weights = (first..n_samples)
                .map(|i| {
                    let a = (i as f64 * dt - t_k).max(0.0);
                    let b = ((i + 1) as f64 * dt - t_k).max(0.0);
                    (-a / tau).exp() - (-b / tau).exp()
                })
                .collect();
            responses.push((first, weights));
        }
        let noise_var = config.electronic_noise_variance() * dt / config.period();
        let half = 2f64.powi(config.adc_bits as i32 - 1);
        Ok(Self {
            config,
            responses,
            centers,
            noise_std: noise_var.sqrt(),
            lsb: config.lsb(),
            max_code: half - 1.0,
            min_code: -half,
        })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn pulse_centers(&self) -> &[usize] {
        &self.centers
    }

    /// Writes the ADC codes for one segment into `samples`; returns the clipping flag.
    pub fn synthesize_into<R: Rng + ?Sized>(
        &self,
        pulse_quadratures: &[f64],
        rng: &mut R,
        samples: &mut Vec<f64>,
    ) -> bool {
        let n_samples = self.config.samples_per_segment();
        samples.clear();
        samples.resize(n_samples, 0.0);
        for ((first, weights), &q) in self.responses.iter().zip(pulse_quadratures) {
            for (s, w) in samples[*first..].iter_mut().zip(weights) {
                *s += q * w;
            }
        }
        let mut railed = 0usize;
        for s in samples.iter_mut() {
            let noisy = if self.noise_std > 0.0 {
                let z: f64 = StandardNormal.sample(rng);
                *s + self.noise_std * z
            } else {
                *s
            };
            let code = (noisy / self.lsb).round();
            if code >= self.max_code || code <= self.min_code {
                railed += 1;
            }
            *s = code.clamp(self.min_code, self.max_code);
        }
        railed as f64 > CLIP_FRACTION * n_samples as f64
    }

    pub fn synthesize<R: Rng + ?Sized>(&self, pulse_quadratures: &[f64], rng: &mut R) -> Result<SegmentTrace> {
        if pulse_quadratures.len() != self.config.pulse_count() {
            return Err(invalid(format!(
                "expected {} pulse quadratures, got {}",
                self.config.pulse_count(),
                pulse_quadratures.len()
            )));
        }
        let mut samples = Vec::new();
        let clipped = self.synthesize_into(pulse_quadratures, rng, &mut samples);
        Ok(SegmentTrace {
            samples,
            pulse_centers: self.centers.clone(),
            signal_index: self.config.signal_index(),
            period_samples: self.config.samples_per_period(),
            clipped,
        })
    }

    /// Noiseless, unquantized integrated response: entry `[j][k]` is the
    /// share of pulse `k`'s quadrature that lands in pulse `j`'s window.
    pub fn window_response(&self) -> Vec<Vec<f64>> {
        let windows = window_bounds(&self.centers, self.config.samples_per_period(), usize::MAX)
            .expect("synthesizer windows are valid");
        windows
            .iter()
            .map(|&(lo, hi)| {
                self.responses
                    .iter()
                    .map(|(first, weights)| {
                        (lo.max(*first)..hi)
                            .map(|i| weights.get(i - first).copied().unwrap_or(0.0))
                            .sum()
                    })
                    .collect()
            })
            .collect()
    }
}

pub fn synthesize_segment(config: &DetectorConfig, pulse_quadratures: &[f64], seed: u64) -> Result<SegmentTrace> {
    let synth = SegmentSynthesizer::new(*config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    synth.synthesize(pulse_quadratures, &mut rng)
}

fn window_bounds(centers: &[usize], period_samples: f64, n_samples: usize) -> Result<Vec<(usize, usize)>> {
    if centers.is_empty() {
        return Err(Error::InvalidTrace("no pulses".into()));
    }
    if centers.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidTrace("pulse centers must be strictly increasing".into()));
    }
    let last = *centers.last().unwrap() + period_samples.round() as usize;
    if last > n_samples {
        return Err(Error::InvalidTrace(format!(
            "window of the last pulse ends at sample {last}, trace has {n_samples}"
        )));
    }
    Ok(centers
        .iter()
        .enumerate()
        .map(|(k, &c)| (c, centers.get(k + 1).copied().unwrap_or(last)))
        .collect())
}

/// Integrates raw samples into one quadrature per pulse.
pub fn integrate_samples(samples: &[f64], centers: &[usize], period_samples: f64, out: &mut Vec<f64>) -> Result<()> {
    let windows = window_bounds(centers, period_samples, samples.len())?;
    out.clear();
    out.extend(windows.iter().map(|&(lo, hi)| samples[lo..hi].iter().sum::<f64>()));
    Ok(())
}

pub fn integrate_segment(trace: &SegmentTrace) -> Result<Vec<f64>> {
    if trace.signal_index >= trace.pulse_centers.len() {
        return Err(Error::InvalidTrace("signal index out of range".into()));
    }
    let mut out = Vec::with_capacity(trace.pulse_centers.len());
    integrate_samples(&trace.samples, &trace.pulse_centers, trace.period_samples, &mut out)?;
    Ok(out)
}

/// Linear leakage between pulses of one segment.
///
/// `coefficient(k)` is the fraction of pulse `i + k`'s quadrature that lands in
/// pulse `i`'s window; negative `k` are earlier pulses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrosstalkModel {
    max_lag: usize,
    coefficients: Vec<f64>,
}

impl CrosstalkModel {
    pub fn identity() -> Self {
        Self {
            max_lag: 0,
            coefficients: vec![1.0],
        }
    }

    /// From coefficients indexed `-max_lag..=max_lag`.
    pub fn new(coefficients: Vec<f64>) -> Result<Self> {
        if coefficients.len() % 2 == 0 {
            return Err(invalid("crosstalk coefficients must span -K..=K"));
        }
        let max_lag = coefficients.len() / 2;
        if coefficients[max_lag] != 1.0 {
            return Err(invalid("c_0 must equal 1"));
        }
        if coefficients
            .iter()
            .enumerate()
            .any(|(i, c)| i != max_lag && !(c.abs() < 1.0))
        {
            return Err(invalid("|c_k| must be below 1 for k != 0"));
        }
        Ok(Self { max_lag, coefficients })
    }

    /// Causal model from the leakage of the `lag`-th previous pulse, `lag = 1..`.
    pub fn causal(leakage: &[f64]) -> Result<Self> {
        let k = leakage.len();
        let mut coefficients = vec![0.0; 2 * k + 1];
        coefficients[k] = 1.0;
        for (lag, c) in leakage.iter().enumerate() {
            coefficients[k - lag - 1] = *c;
        }
        Self::new(coefficients)
    }

    pub fn max_lag(&self) -> usize {
        self.max_lag
    }

    pub fn coefficient(&self, k: isize) -> f64 {
        let idx = k + self.max_lag as isize;
        if idx < 0 {
            return 0.0;
        }
        self.coefficients.get(idx as usize).copied().unwrap_or(0.0)
    }

    /// Leakage of the pulse `lag` positions earlier.
    pub fn leakage(&self, lag: usize) -> f64 {
        self.coefficient(-(lag as isize))
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    /// Applies the mixing to one segment's true quadratures.
    pub fn mix(&self, quadratures: &[f64]) -> Vec<f64> {
        let n = quadratures.len() as isize;
        let k = self.max_lag as isize;
        (0..n)
            .map(|i| {
                (-k..=k)
                    .filter(|d| (0..n).contains(&(i + d)))
                    .map(|d| self.coefficient(d) * quadratures[(i + d) as usize])
                    .sum()
            })
            .collect()
    }

    fn matrix(&self, n: usize) -> Vec<f64> {
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                m[i * n + j] = self.coefficient(j as isize - i as isize);
            }
        }
        m
    }
}

/// Undoes the mixing segment by segment (a banded solve over the pulses).
pub fn decorrelate(raw: &[Vec<f64>], model: &CrosstalkModel) -> Result<Vec<Vec<f64>>> {
    let Some(first) = raw.first() else {
        return Ok(Vec::new());
    };
    let n = first.len();
    if raw.iter().any(|r| r.len() != n) {
        return Err(invalid("all segments must hold the same number of pulses"));
    }
    let off_diagonal: f64 = (1..=model.max_lag as isize)
        .map(|k| model.coefficient(k).abs() + model.coefficient(-k).abs())
        .sum();
    if off_diagonal >= 1.0 {
        return Err(Error::IllConditioned(format!(
            "total leakage {off_diagonal:.3} leaves the mixing matrix without diagonal dominance"
        )));
    }
    let lu = Lu::factor(model.matrix(n), n).ok_or_else(|| Error::IllConditioned("singular mixing matrix".into()))?;
    Ok(raw
        .par_iter()
        .map(|row| {
            let mut out = vec![0.0; n];
            lu.solve(row, &mut out);
            out
        })
        .collect())
}

/// Mergeable lag-product sums over segments.
#[derive(Debug, Clone, PartialEq)]
pub struct LagAccumulator {
    max_lag: usize,
    skip: Option<usize>,
    sum: f64,
    count: u64,
    /// `products[l]` = sum of x_i x_{i+l}; `pairs[l]` = number of terms.
    products: Vec<f64>,
    pairs: Vec<u64>,
    segments: usize,
}

impl LagAccumulator {
    pub fn new(max_lag: usize, skip: Option<usize>) -> Self {
        Self {
            max_lag,
            skip,
            sum: 0.0,
            count: 0,
            products: vec![0.0; max_lag + 1],
            pairs: vec![0; max_lag + 1],
            segments: 0,
        }
    }

    pub fn push(&mut self, row: &[f64]) {
        self.segments += 1;
        let usable = |i: usize| Some(i) != self.skip;
        for (i, &x) in row.iter().enumerate() {
            if !usable(i) {
                continue;
            }
            self.sum += x;
            self.count += 1;
            for l in 0..=self.max_lag {
                if let Some(&y) = row.get(i + l) {
                    if usable(i + l) {
                        self.products[l] += x * y;
                        self.pairs[l] += 1;
                    }
                }
            }
        }
    }

    pub fn merge(&mut self, other: &LagAccumulator) {
        self.sum += other.sum;
        self.count += other.count;
        self.segments += other.segments;
        for l in 0..=self.max_lag {
            self.products[l] += other.products[l];
            self.pairs[l] += other.pairs[l];
        }
    }

    pub fn segments(&self) -> usize {
        self.segments
    }

    /// Autocorrelation at lags `1..=max_lag`.
    pub fn autocorrelation(&self) -> Result<Vec<f64>> {
        if self.pairs.contains(&0) || self.count == 0 {
            return Err(Error::EstimationFailed("no usable pulse pairs".into()));
        }
        let mean = self.sum / self.count as f64;
        let cov = |l: usize| self.products[l] / self.pairs[l] as f64 - mean * mean;
        let var = cov(0);
        if !(var > 0.0) {
            return Err(Error::EstimationFailed("vacuum quadratures have zero variance".into()));
        }
        Ok((1..=self.max_lag).map(|l| cov(l) / var).collect())
    }
}

/// Causal moving-average coefficients reproducing the given autocorrelations.
fn ma_from_autocorrelation(rho: &[f64]) -> Result<Vec<f64>> {
    let k = rho.len();
    let mut a = vec![0.0; k + 1];
    a[0] = 1.0;
    for _ in 0..500 {
        let energy: f64 = a.iter().map(|x| x * x).sum();
        let mut change: f64 = 0.0;
        let mut next = a.clone();
        for l in 1..=k {
            let cross: f64 = (1..=k - l).map(|j| a[j] * a[j + l]).sum();
            next[l] = rho[l - 1] * energy - cross;
            change = change.max((next[l] - a[l]).abs());
        }
        a = next;
        if a.iter().skip(1).any(|x| !(x.abs() < 1.0)) {
            return Err(Error::EstimationFailed(
                "correlations too strong for a leakage model".into(),
            ));
        }
        if change < 1e-15 {
            break;
        }
    }
    Ok(a[1..].to_vec())
}

fn estimate_with(vacuum: &[Vec<f64>], max_lag: usize, skip: Option<usize>) -> Result<CrosstalkModel> {
    if vacuum.len() < MIN_CROSSTALK_SEGMENTS {
        return Err(Error::EstimationFailed(format!(
            "need at least {MIN_CROSSTALK_SEGMENTS} segments, got {}",
            vacuum.len()
        )));
    }
    let pulses = vacuum[0].len();
    if max_lag > pulses.saturating_sub(1) / 2 {
        return Err(invalid(format!(
            "max_lag {max_lag} exceeds half the {} neighbor pulses",
            pulses.saturating_sub(1)
        )));
    }
    if max_lag == 0 {
        return Ok(CrosstalkModel::identity());
    }
    // fixed chunks, merged in order
    let acc = vacuum
        .par_chunks(4096)
        .map(|chunk| {
            let mut acc = LagAccumulator::new(max_lag, skip);
            for row in chunk {
                acc.push(row);
            }
            acc
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(LagAccumulator::new(max_lag, skip), |mut total, part| {
            total.merge(&part);
            total
        });
    let rho = acc.autocorrelation()?;
    CrosstalkModel::causal(&ma_from_autocorrelation(&rho)?)
}

/// Estimates pulse-to-pulse leakage from vacuum segments.
pub fn estimate_crosstalk(vacuum: &[Vec<f64>], max_lag: usize) -> Result<CrosstalkModel> {
    estimate_with(vacuum, max_lag, None)
}

/// Like [`estimate_crosstalk`], ignoring one non-vacuum column (the heralded pulse).
pub fn estimate_crosstalk_excluding(
    segments: &[Vec<f64>],
    max_lag: usize,
    signal_index: usize,
) -> Result<CrosstalkModel> {
    estimate_with(segments, max_lag, Some(signal_index))
}

/// Leakage of a vacuum pulse into the pulse after it, by regression over
/// `(previous, current)` pairs; valid when the current pulse is not vacuum.
pub fn estimate_pair_leakage(previous: &[f64], current: &[f64]) -> Result<f64> {
    if previous.len() != current.len() {
        return Err(invalid("columns differ in length"));
    }
    if previous.len() < 100 {
        return Err(Error::EstimationFailed("too few pulse pairs".into()));
    }
    let n = previous.len() as f64;
    let mx = previous.iter().sum::<f64>() / n;
    let my = current.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (x, y) in previous.iter().zip(current) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    if !(sxx > 0.0) {
        return Err(Error::EstimationFailed("reference column has zero variance".into()));
    }
    Ok(sxy / sxx)
}
