use serde::{Deserialize, Serialize};

use super::maxlik::{marginal_table, MarginalTable};
use crate::error::{invalid, Error, Result};
use crate::fock::FockDiagonal;
use crate::numeric::Lu;
use crate::quadrature::QuadratureBatch;
use rayon::prelude::*;

/// Probabilities at or below this are treated as sitting on the simplex boundary.
pub const SUPPORT_THRESHOLD: f64 = 1e-8;

/// Inverse observed information of the photon-number probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FisherCovariance {
    dim: usize,
    /// Row-major `dim x dim`; zero rows and columns outside the support.
    covariance: Vec<f64>,
    support: Vec<usize>,
}

impl FisherCovariance {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, m: usize, n: usize) -> f64 {
        self.covariance[m * self.dim + n]
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn sigma(&self) -> Vec<f64> {
        (0..self.dim).map(|n| self.get(n, n).max(0.0).sqrt()).collect()
    }

    /// Variance of `sum_n g_n p_n` for a linear functional `g`.
    pub fn quadratic_form(&self, g: &[f64]) -> f64 {
        let mut v = 0.0;
        for m in 0..self.dim {
            for n in 0..self.dim {
                v += g.get(m).copied().unwrap_or(0.0) * self.get(m, n) * g.get(n).copied().unwrap_or(0.0);
            }
        }
        v
    }
}

pub(crate) fn covariance_from_table(state: &FockDiagonal, table: &MarginalTable) -> Result<FisherCovariance> {
    let p = state.probs();
    let dim = p.len();
    if table.width() != dim {
        return Err(invalid("state truncation does not match the marginal table"));
    }
    let support: Vec<usize> = (0..dim).filter(|&n| p[n] > SUPPORT_THRESHOLD).collect();
    let reference = *support
        .iter()
        .max_by(|&&a, &&b| p[a].total_cmp(&p[b]))
        .expect("a normalized state has positive support");
    let free: Vec<usize> = support.iter().copied().filter(|&n| n != reference).collect();
    let m = free.len();
    let mut covariance = vec![0.0; dim * dim];
    if m == 0 {
        return Ok(FisherCovariance {
            dim,
            covariance,
            support,
        });
    }
    // the normalization fixes p_ref = 1 - sum of the free probabilities
    let partials: Vec<Vec<f64>> = table
        .blocks()
        .map(|block| {
            let mut info = vec![0.0; m * m];
            let mut d = vec![0.0; m];
            for row in block.chunks_exact(dim) {
                let pr: f64 = row.iter().zip(p).map(|(a, b)| a * b).sum();
                if pr <= 0.0 {
                    continue;
                }
                for (dk, &k) in d.iter_mut().zip(&free) {
                    *dk = (row[k] - row[reference]) / pr;
                }
                for a in 0..m {
                    for b in a..m {
                        info[a * m + b] += d[a] * d[b];
                    }
                }
            }
            info
        })
        .collect();
    let mut info = vec![0.0; m * m];
    for part in partials {
        for (acc, v) in info.iter_mut().zip(part) {
            *acc += v;
        }
    }
    for a in 0..m {
        for b in 0..a {
            info[a * m + b] = info[b * m + a];
        }
    }
    let reduced = Lu::factor(info, m)
        .ok_or_else(|| Error::EstimationFailed("singular information matrix on the support".into()))?
        .inverse();
    for a in 0..m {
        for b in 0..m {
            covariance[free[a] * dim + free[b]] = reduced[a * m + b];
        }
    }
    let mut ref_var = 0.0;
    for a in 0..m {
        let row_sum: f64 = (0..m).map(|b| reduced[a * m + b]).sum();
        covariance[reference * dim + free[a]] = -row_sum;
        covariance[free[a] * dim + reference] = -row_sum;
        ref_var += row_sum;
    }
    covariance[reference * dim + reference] = ref_var;
    Ok(FisherCovariance {
        dim,
        covariance,
        support,
    })
}

pub fn fisher_covariance(state: &FockDiagonal, batch: &QuadratureBatch) -> Result<FisherCovariance> {
    if !batch.is_calibrated() {
        return Err(Error::CalibrationRequired);
    }
    if batch.is_empty() {
        return Err(Error::InsufficientData("empty batch".into()));
    }
    covariance_from_table(state, &marginal_table(batch, state.n_max()))
}

/// Standard deviations of the maximum-likelihood probabilities.
pub fn fisher_sigma(state: &FockDiagonal, batch: &QuadratureBatch) -> Result<Vec<f64>> {
    Ok(fisher_covariance(state, batch)?.sigma())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::sample_quadratures;
    use crate::tomography::{maxlik_diag, MaxLikConfig};

    fn reference_state() -> FockDiagonal {
        FockDiagonal::new(vec![0.4138, 0.5758, 0.0104]).unwrap()
    }

    #[test]
    fn sigma_scales_with_sample_count() {
        let cfg = MaxLikConfig {
            n_max: 2,
            ..Default::default()
        };
        let small = sample_quadratures(&reference_state(), 100_000, 11);
        let large = sample_quadratures(&reference_state(), 200_000, 12);
        let a = maxlik_diag(&small, &cfg).unwrap().sigma;
        let b = maxlik_diag(&large, &cfg).unwrap().sigma;
        for (x, y) in a.iter().zip(&b) {
            let ratio = x / y;
            assert!((ratio / 2f64.sqrt() - 1.0).abs() < 0.1, "{ratio}");
        }
    }

    #[test]
    fn covariance_respects_normalization() {
        let batch = sample_quadratures(&reference_state(), 50_000, 13);
        let r = maxlik_diag(&batch, &MaxLikConfig::default()).unwrap();
        let cov = fisher_covariance(&r.state, &batch).unwrap();
        // the probabilities sum to one, so their sum has zero variance
        let ones = vec![1.0; cov.dim()];
        assert!(cov.quadratic_form(&ones).abs() < 1e-12);
        for n in 0..cov.dim() {
            for m in 0..cov.dim() {
                assert!((cov.get(n, m) - cov.get(m, n)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn boundary_entries_get_zero_sigma() {
        let batch = sample_quadratures(&reference_state(), 20_000, 14);
        let state = FockDiagonal::new(vec![0.41, 0.58, 0.01, 0.0, 0.0]).unwrap();
        let sigma = fisher_sigma(&state, &batch).unwrap();
        assert_eq!(sigma[3], 0.0);
        assert_eq!(sigma[4], 0.0);
        assert!(sigma[1] > 0.0);
    }

    #[test]
    fn pure_vacuum_estimate_has_no_spread() {
        let batch = sample_quadratures(&FockDiagonal::vacuum(2).unwrap(), 1000, 15);
        let sigma = fisher_sigma(&FockDiagonal::vacuum(2).unwrap(), &batch).unwrap();
        assert_eq!(sigma, vec![0.0; 3]);
    }
}
