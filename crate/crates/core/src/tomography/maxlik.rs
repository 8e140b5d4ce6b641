use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fisher::covariance_from_table;
use super::REDUCTION_BLOCK;
use crate::error::{invalid, Error, Result};
use crate::fock::{FockDiagonal, MAX_N_MAX, MIN_N_MAX, RECONSTRUCTION_N_MAX};
use crate::quadrature::{fock_wavefunctions, QuadratureBatch};

/// Smallest mixture density used inside logarithms and divisions.
const DENSITY_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaxLikConfig {
    pub n_max: usize,
    /// Stop once the relative change of the log-likelihood falls below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for MaxLikConfig {
    fn default() -> Self {
        Self {
            n_max: RECONSTRUCTION_N_MAX,
            tol: 1e-10,
            max_iter: 5000,
        }
    }
}

impl MaxLikConfig {
    pub fn validate(&self) -> Result<()> {
        if !(MIN_N_MAX..=MAX_N_MAX).contains(&self.n_max) {
            return Err(invalid(format!("n_max must lie in [{MIN_N_MAX}, {MAX_N_MAX}]")));
        }
        if !(self.tol > 0.0) {
            return Err(invalid("tol must be positive"));
        }
        if self.max_iter == 0 {
            return Err(invalid("max_iter must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionResult {
    pub state: FockDiagonal,
    pub sigma: Vec<f64>,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Log-likelihood before each update, ending with the returned state's.
    #[serde(skip)]
    pub likelihood_trace: Vec<f64>,
}

/// Number-state marginals `pi_n(q_j)` for every sample, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalTable {
    width: usize,
    values: Vec<f64>,
}

impl MarginalTable {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn rows(&self) -> usize {
        self.values.len() / self.width
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.values[j * self.width..(j + 1) * self.width]
    }

    pub(crate) fn blocks(&self) -> impl IndexedParallelIterator<Item = &[f64]> {
        self.values.par_chunks(REDUCTION_BLOCK * self.width)
    }

    /// Log-likelihood of `p` and the EM responsibilities `sum_j pi_n(q_j) / Pr(q_j)`.
    fn e_step(&self, p: &[f64]) -> (f64, Vec<f64>) {
        let w = self.width;
        let partials: Vec<(f64, Vec<f64>)> = self
            .blocks()
            .map(|block| {
                let mut ll = 0.0;
                let mut resp = vec![0.0; w];
                for row in block.chunks_exact(w) {
                    let pr = row.iter().zip(p).map(|(a, b)| a * b).sum::<f64>().max(DENSITY_FLOOR);
                    ll += pr.ln();
                    let inv = 1.0 / pr;
                    for (r, a) in resp.iter_mut().zip(row) {
                        *r += a * inv;
                    }
                }
                (ll, resp)
            })
            .collect();
        let mut ll = 0.0;
        let mut resp = vec![0.0; w];
        for (l, r) in partials {
            ll += l;
            for (acc, v) in resp.iter_mut().zip(r) {
                *acc += v;
            }
        }
        (ll, resp)
    }

    pub fn log_likelihood(&self, p: &[f64]) -> f64 {
        self.e_step(p).0
    }
}

pub fn marginal_table(batch: &QuadratureBatch, n_max: usize) -> MarginalTable {
    let width = n_max + 1;
    let mut values = vec![0.0; batch.len() * width];
    values
        .par_chunks_mut(REDUCTION_BLOCK * width)
        .zip(batch.values().par_chunks(REDUCTION_BLOCK))
        .for_each(|(out, qs)| {
            for (row, &q) in out.chunks_exact_mut(width).zip(qs) {
                fock_wavefunctions(q, row);
                for v in row.iter_mut() {
                    *v *= *v;
                }
            }
        });
    MarginalTable { width, values }
}

/// Maximum-likelihood photon-number distribution by mixture EM.
pub fn maxlik_diag(batch: &QuadratureBatch, config: &MaxLikConfig) -> Result<ReconstructionResult> {
    config.validate()?;
    if !batch.is_calibrated() {
        return Err(Error::CalibrationRequired);
    }
    let needed = 10 * config.n_max;
    if batch.len() < needed {
        return Err(Error::InsufficientData(format!(
            "need at least {needed} samples for n_max = {}, got {}",
            config.n_max,
            batch.len()
        )));
    }
    let table = marginal_table(batch, config.n_max);
    let n = batch.len() as f64;
    let mut p = vec![1.0 / table.width() as f64; table.width()];
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    loop {
        let (ll, resp) = table.e_step(&p);
        if let Some(&prev) = trace.last() {
            let change: f64 = ll - prev;
            if change.abs() <= config.tol * f64::abs(ll) {
                trace.push(ll);
                converged = true;
                break;
            }
        }
        trace.push(ll);
        if iterations == config.max_iter {
            break;
        }
        for (pn, r) in p.iter_mut().zip(&resp) {
            *pn *= r / n;
        }
        let total: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= total);
        iterations += 1;
    }
    let state = FockDiagonal::new(p)?;
    let sigma = covariance_from_table(&state, &table)?.sigma();
    Ok(ReconstructionResult {
        state,
        sigma,
        log_likelihood: *trace.last().unwrap(),
        iterations,
        converged,
        likelihood_trace: trace,
    })
}
