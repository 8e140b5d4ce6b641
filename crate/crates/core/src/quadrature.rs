//! Quadrature statistics of phase-randomized Fock-diagonal states.
//!
//! Units follow the vacuum-variance-half convention: a vacuum quadrature is
//! Gaussian with variance 1/2, and `|n>` has second moment `n + 1/2`.

use std::f64::consts::PI;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::FockDiagonal;
use crate::numeric::Moments;

/// pi^(-1/4)
const PI_M_QUARTER: f64 = 0.751_125_544_464_942_5;

/// Minimum vacuum samples accepted for calibration.
pub const MIN_CALIBRATION_SAMPLES: usize = 100;

/// Fills `out[n]` with the oscillator eigenfunction `psi_n(q)` for `n < out.len()`.
///
/// Normalized three-term recurrence; no Hermite polynomial or factorial is formed.
pub fn fock_wavefunctions(q: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    out[0] = PI_M_QUARTER * (-0.5 * q * q).exp();
    if out.len() > 1 {
        out[1] = std::f64::consts::SQRT_2 * q * out[0];
    }
    for n in 1..out.len().saturating_sub(1) {
        let nf = n as f64;
        out[n + 1] = q * (2.0 / (nf + 1.0)).sqrt() * out[n] - (nf / (nf + 1.0)).sqrt() * out[n - 1];
    }
}

/// Quadrature probability density `|psi_n(q)|^2` of the number state `|n>`.
pub fn fock_marginal(n: usize, q: f64) -> f64 {
    let mut psi = vec![0.0; n + 1];
    fock_wavefunctions(q, &mut psi);
    psi[n] * psi[n]
}

/// Quadrature density of a phase-randomized diagonal state.
pub fn marginal_density(state: &FockDiagonal, q: f64) -> f64 {
    let mut psi = vec![0.0; state.n_max() + 1];
    fock_wavefunctions(q, &mut psi);
    state.probs().iter().zip(&psi).map(|(p, f)| p * f * f).sum()
}

/// Quadrature samples plus their calibration status.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureBatch {
    values: Vec<f64>,
    calibrated: bool,
    vacuum_variance_ref: Option<f64>,
}

impl QuadratureBatch {
    /// Uncalibrated samples in arbitrary digitizer units.
    pub fn raw(values: Vec<f64>) -> Self {
        Self {
            values,
            calibrated: false,
            vacuum_variance_ref: None,
        }
    }

    /// Samples already expressed in vacuum-variance-half units.
    pub fn calibrated(values: Vec<f64>) -> Self {
        Self {
            values,
            calibrated: true,
            vacuum_variance_ref: None,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_calibrated(&self) -> bool {
        self.calibrated
    }

    /// Raw vacuum variance that set the scale, when calibrated from a reference.
    pub fn vacuum_variance_ref(&self) -> Option<f64> {
        self.vacuum_variance_ref
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn moments(&self) -> Moments {
        Moments::from_slice(&self.values)
    }

    pub fn variance(&self) -> f64 {
        self.moments().variance()
    }
}

/// Scale factor that maps a raw vacuum variance onto 1/2.
pub fn calibration_scale(vacuum_variance: f64) -> Result<f64> {
    if !(vacuum_variance > 0.0) || !vacuum_variance.is_finite() {
        return Err(Error::CalibrationFailed(format!(
            "vacuum variance must be positive, got {vacuum_variance}"
        )));
    }
    Ok((0.5 / vacuum_variance).sqrt())
}

/// Rescales raw signal quadratures so that the vacuum reference has variance 1/2.
pub fn calibrate(signal_raw: &QuadratureBatch, vacuum_raw: &QuadratureBatch) -> Result<QuadratureBatch> {
    if vacuum_raw.len() < MIN_CALIBRATION_SAMPLES {
        return Err(Error::CalibrationFailed(format!(
            "need at least {MIN_CALIBRATION_SAMPLES} vacuum samples, got {}",
            vacuum_raw.len()
        )));
    }
    let var = vacuum_raw.variance();
    let scale = calibration_scale(var)?;
    Ok(QuadratureBatch {
        values: signal_raw.values.iter().map(|v| v * scale).collect(),
        calibrated: true,
        vacuum_variance_ref: Some(var),
    })
}

/// Number of grid points in each inverse-CDF table.
pub const SAMPLER_GRID: usize = 4096;

/// Inverse-CDF table for one photon number.
#[derive(Debug, Clone)]
struct InverseCdf {
    grid: Vec<f64>,
    cdf: Vec<f64>,
}

impl InverseCdf {
    fn new(n: usize) -> Self {
        let span = 8.0 + 2.0 * (n as f64).sqrt();
        let step = 2.0 * span / (SAMPLER_GRID - 1) as f64;
        let grid: Vec<f64> = (0..SAMPLER_GRID).map(|i| -span + i as f64 * step).collect();
        let density: Vec<f64> = grid.iter().map(|&q| fock_marginal(n, q)).collect();
        let mut cdf = Vec::with_capacity(SAMPLER_GRID);
        let mut acc = 0.0;
        cdf.push(0.0);
        for w in density.windows(2) {
            acc += 0.5 * (w[0] + w[1]) * step;
            cdf.push(acc);
        }
        for c in cdf.iter_mut() {
            *c /= acc;
        }
        Self { grid, cdf }
    }

    #[inline]
    fn invert(&self, u: f64) -> f64 {
        let hi = self.cdf.partition_point(|&c| c <= u).clamp(1, SAMPLER_GRID - 1);
        let lo = hi - 1;
        let (c0, c1) = (self.cdf[lo], self.cdf[hi]);
        let t = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.5 };
        self.grid[lo] + t * (self.grid[hi] - self.grid[lo])
    }
}

/// Draws quadratures from a diagonal state: photon number first, then `q`
/// from that number state's marginal.
#[derive(Debug, Clone)]
pub struct QuadratureSampler {
    cumulative: Vec<f64>,
    tables: Vec<InverseCdf>,
}

impl QuadratureSampler {
    pub fn new(state: &FockDiagonal) -> Self {
        let mut acc = 0.0;
        let cumulative = state
            .probs()
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        let tables = (0..=state.n_max()).map(InverseCdf::new).collect();
        Self { cumulative, tables }
    }

    #[inline]
    pub fn photon_number<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random::<f64>() * self.cumulative[self.cumulative.len() - 1];
        self.cumulative
            .partition_point(|&c| c <= u)
            .min(self.cumulative.len() - 1)
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let n = self.photon_number(rng);
        self.tables[n].invert(rng.random::<f64>())
    }
}

/// `count` i.i.d. quadratures from `state`, reproducible for a given seed.
pub fn sample_quadratures(state: &FockDiagonal, count: usize, seed: u64) -> QuadratureBatch {
    let sampler = QuadratureSampler::new(state);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..count).map(|_| sampler.sample(&mut rng)).collect();
    QuadratureBatch::calibrated(values)
}

/// Radial cut through a phase-symmetric Wigner function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WignerSection {
    pub radii: Vec<f64>,
    pub values: Vec<f64>,
}

/// Laguerre polynomials `L_0(x) ..= L_n(x)` by the standard recurrence.
pub fn laguerre_sequence(n: usize, x: f64, out: &mut Vec<f64>) {
    out.clear();
    out.push(1.0);
    if n == 0 {
        return;
    }
    out.push(1.0 - x);
    for k in 1..n {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0 - x) * out[k] - kf * out[k - 1]) / (kf + 1.0);
        out.push(next);
    }
}

/// Wigner function of a diagonal state at phase-space radius `r`.
pub fn wigner_at(state: &FockDiagonal, r: f64) -> f64 {
    let mut lag = Vec::with_capacity(state.n_max() + 1);
    let r2 = r * r;
    laguerre_sequence(state.n_max(), 2.0 * r2, &mut lag);
    let envelope = (-r2).exp() / PI;
    state
        .probs()
        .iter()
        .zip(&lag)
        .enumerate()
        .map(|(n, (p, l))| if n % 2 == 0 { p * l } else { -p * l })
        .sum::<f64>()
        * envelope
}

pub fn wigner_section(state: &FockDiagonal, radii: &[f64]) -> WignerSection {
    WignerSection {
        radii: radii.to_vec(),
        values: radii.iter().map(|&r| wigner_at(state, r)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::effective_single_photon;
    use crate::numeric::adaptive_simpson;
    use approx::assert_abs_diff_eq;

    fn reference_state() -> FockDiagonal {
        FockDiagonal::new(vec![0.4138, 0.5758, 0.0104]).unwrap()
    }

    /// Explicit Hermite polynomial from its power series.
    fn hermite_naive(n: usize, x: f64) -> f64 {
        let mut sum = 0.0;
        for k in 0..=n / 2 {
            let mut coeff = 1.0;
            for i in 1..=n {
                coeff *= i as f64;
            }
            for i in 1..=k {
                coeff /= i as f64;
            }
            for i in 1..=(n - 2 * k) {
                coeff /= i as f64;
            }
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            sum += sign * coeff * (2.0 * x).powi((n - 2 * k) as i32);
        }
        sum
    }

    fn marginal_naive(n: usize, q: f64) -> f64 {
        let fact: f64 = (1..=n).map(|i| i as f64).product();
        hermite_naive(n, q).powi(2) * (-q * q).exp() / (2f64.powi(n as i32) * fact * PI.sqrt())
    }

    #[test]
    fn fock_marginal_examples() {
        assert_abs_diff_eq!(fock_marginal(0, 0.0), 1.0 / PI.sqrt(), epsilon = 1e-15);
        assert_eq!(fock_marginal(1, 0.0), 0.0);
        let second = adaptive_simpson(&|q| q * q * fock_marginal(1, q), -12.0, 12.0, 1e-13);
        assert_abs_diff_eq!(second, 1.5, epsilon = 1e-10);
    }

    #[test]
    fn recurrence_matches_power_series() {
        for n in 0..=10 {
            for i in 0..=120 {
                let q = -6.0 + 0.1 * i as f64;
                let a = fock_marginal(n, q);
                let b = marginal_naive(n, q);
                let scale = b.abs().max(1e-300);
                if b.abs() > 1e-200 {
                    assert!((a - b).abs() / scale < 1e-10, "n={n} q={q} {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn marginal_density_examples() {
        let vac = FockDiagonal::vacuum(2).unwrap();
        for q in [-1.3, 0.0, 0.4, 2.2] {
            assert_abs_diff_eq!(marginal_density(&vac, q), (-q * q).exp() / PI.sqrt(), epsilon = 1e-15);
        }
        let s = effective_single_photon(0.5758).unwrap();
        let var = adaptive_simpson(&|q| q * q * marginal_density(&s, q), -12.0, 12.0, 1e-13);
        assert_abs_diff_eq!(var, 0.5 + 0.5758, epsilon = 1e-9);

        // independent evaluation through the power-series marginals
        let t = reference_state();
        let oracle = 0.4138 * marginal_naive(0, 0.0) + 0.0104 * marginal_naive(2, 0.0);
        assert_abs_diff_eq!(marginal_density(&t, 0.0), oracle, epsilon = 1e-14);
        assert_abs_diff_eq!(marginal_density(&t, 0.0), 0.2364, epsilon = 1e-4);
    }

    #[test]
    fn marginal_normalization_and_second_moment() {
        for probs in [
            vec![0.4138, 0.5758, 0.0104],
            vec![0.1, 0.2, 0.3, 0.1, 0.1, 0.1, 0.1],
            vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0],
        ] {
            let s = FockDiagonal::new(probs).unwrap();
            let span = 8.0 + 2.0 * (s.n_max() as f64).sqrt();
            let norm = adaptive_simpson(&|q| marginal_density(&s, q), -span, span, 1e-12);
            assert_abs_diff_eq!(norm, 1.0, epsilon = 1e-8);
            let var = adaptive_simpson(&|q| q * q * marginal_density(&s, q), -span, span, 1e-12);
            assert_abs_diff_eq!(var, 0.5 + s.mean_photon_number(), epsilon = 1e-8);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let a = sample_quadratures(&reference_state(), 1000, 7);
        let b = sample_quadratures(&reference_state(), 1000, 7);
        assert_eq!(a, b);
        assert_ne!(a, sample_quadratures(&reference_state(), 1000, 8));
    }

    #[test]
    fn sampled_vacuum_variance() {
        let batch = sample_quadratures(&FockDiagonal::vacuum(2).unwrap(), 1_000_000, 1);
        assert_abs_diff_eq!(batch.variance(), 0.5, epsilon = 0.0015);
    }

    #[test]
    fn sampled_reference_variance() {
        let batch = sample_quadratures(&reference_state(), 1_000_000, 2);
        assert_abs_diff_eq!(batch.variance(), 1.0966, epsilon = 0.004);
    }

    #[test]
    fn calibrate_examples() {
        let vac = QuadratureBatch::raw(
            (0..200)
                .map(|i| if i % 2 == 0 { 2f64.sqrt() } else { -(2f64.sqrt()) })
                .collect(),
        );
        assert_abs_diff_eq!(vac.variance(), 2.0, epsilon = 1e-12);
        let out = calibrate(&QuadratureBatch::raw(vec![4.0]), &vac).unwrap();
        assert_abs_diff_eq!(out.values()[0], 2.0, epsilon = 1e-12);
        assert!(out.is_calibrated());
        assert_abs_diff_eq!(out.vacuum_variance_ref().unwrap(), 2.0, epsilon = 1e-12);

        let raw = sample_quadratures(&FockDiagonal::vacuum(2).unwrap(), 500, 3).into_values();
        let raw = QuadratureBatch::raw(raw.iter().map(|v| v * 37.0).collect());
        let cal = calibrate(&raw, &raw).unwrap();
        assert_abs_diff_eq!(cal.variance(), 0.5, epsilon = 1e-12);

        assert_abs_diff_eq!(calibration_scale(1.37e-3).unwrap(), 19.10, epsilon = 5e-3);
    }

    #[test]
    fn calibrate_failures() {
        let few = QuadratureBatch::raw(vec![1.0; 50]);
        assert!(matches!(calibrate(&few, &few), Err(Error::CalibrationFailed(_))));
        let flat = QuadratureBatch::raw(vec![1.0; 500]);
        assert!(matches!(calibrate(&flat, &flat), Err(Error::CalibrationFailed(_))));
    }

    /// Laguerre polynomial from its explicit finite sum.
    fn laguerre_naive(n: usize, x: f64) -> f64 {
        let mut sum = 0.0;
        let mut binom = 1.0;
        let mut kfact = 1.0;
        for k in 0..=n {
            if k > 0 {
                binom = binom * (n - k + 1) as f64 / k as f64;
                kfact *= k as f64;
            }
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            sum += sign * binom * x.powi(k as i32) / kfact;
        }
        sum
    }

    #[test]
    fn wigner_examples() {
        let vac = FockDiagonal::vacuum(2).unwrap();
        assert_abs_diff_eq!(wigner_at(&vac, 0.0), 1.0 / PI, epsilon = 1e-15);
        let one = FockDiagonal::number_state(1, 2).unwrap();
        assert_abs_diff_eq!(wigner_at(&one, 0.0), -1.0 / PI, epsilon = 1e-15);
        let w0 = wigner_at(&reference_state(), 0.0);
        assert_abs_diff_eq!(w0, (0.4138 - 0.5758 + 0.0104) / PI, epsilon = 1e-15);
        assert_abs_diff_eq!(w0, -0.0483, epsilon = 1e-4);
    }

    #[test]
    fn wigner_matches_laguerre_series_and_bounds() {
        let s = FockDiagonal::new(vec![0.1, 0.2, 0.3, 0.1, 0.1, 0.1, 0.1]).unwrap();
        let radii: Vec<f64> = (0..60).map(|i| i as f64 * 0.05).collect();
        let section = wigner_section(&s, &radii);
        for (r, w) in radii.iter().zip(&section.values) {
            let oracle: f64 = s
                .probs()
                .iter()
                .enumerate()
                .map(|(n, p)| {
                    let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
                    p * sign * laguerre_naive(n, 2.0 * r * r)
                })
                .sum::<f64>()
                * (-r * r).exp()
                / PI;
            assert_abs_diff_eq!(*w, oracle, epsilon = 1e-13);
            assert!(*w >= -1.0 / PI - 1e-12);
        }
        // normalization: integral of W over the plane, 2 pi r dr
        let norm = adaptive_simpson(&|r| 2.0 * PI * r * wigner_at(&s, r), 0.0, 12.0, 1e-12);
        assert_abs_diff_eq!(norm, 1.0, epsilon = 1e-9);
    }
}
