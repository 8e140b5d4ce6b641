use serde::{Deserialize, Serialize};

use super::fisher::FisherCovariance;
use crate::error::{invalid, Error, Result};
use crate::fock::{heralded_lossy_state, FockDiagonal, HeraldParams, SqueezeParam, SIMULATION_N_MAX};

const GAMMA_SQ_MAX: f64 = 0.25;
const RESIDUAL_MAX: f64 = 1e-10;

/// Forward model inverted by [`extract_eta_gamma_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub enum ExtractModel {
    /// Heralded pairs after loss, expanded to second order in the pair amplitude.
    #[default]
    Truncated,
    /// The full herald-and-loss chain at the given trigger efficiency.
    Exact { eta_t: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtaGamma {
    pub eta: f64,
    /// Zero when the two-photon population vanishes.
    pub gamma_sq: f64,
    pub gamma_identified: bool,
    /// Largest deviation between the fitted and the given normalized populations.
    pub residual: f64,
}

/// Normalized `(p_0, p_1, p_2)` of the second-order heralded loss model.
pub fn truncated_model(eta: f64, gamma_sq: f64) -> [f64; 3] {
    let a = 1.0 - eta;
    let g = gamma_sq;
    let r = [
        a * g + 2.0 * a * a * g * g,
        eta * g + 4.0 * eta * a * g * g,
        2.0 * eta * eta * g * g,
    ];
    let s: f64 = r.iter().sum();
    [r[0] / s, r[1] / s, r[2] / s]
}

fn exact_model(eta: f64, gamma_sq: f64, eta_t: f64) -> Result<[f64; 3]> {
    let s = heralded_lossy_state(
        SqueezeParam::from_gamma_sq(gamma_sq)?,
        HeraldParams::new(eta_t)?,
        eta,
        SIMULATION_N_MAX,
    )?;
    let p = s.probs();
    let t = p[0] + p[1] + p[2];
    Ok([p[0] / t, p[1] / t, p[2] / t])
}

fn normalized_head(rho: [f64; 3]) -> [f64; 3] {
    let t: f64 = rho.iter().sum();
    [rho[0] / t, rho[1] / t, rho[2] / t]
}

fn residual(model: [f64; 3], target: [f64; 3]) -> f64 {
    model
        .iter()
        .zip(&target)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

fn solve_truncated(rho: [f64; 3]) -> Result<EtaGamma> {
    let target = normalized_head(rho);
    if rho[2] == 0.0 {
        let eta = rho[1] / (rho[0] + rho[1]);
        return Ok(EtaGamma {
            eta,
            gamma_sq: 0.0,
            gamma_identified: false,
            residual: 0.0,
        });
    }
    if rho[0] <= 0.0 {
        return Err(Error::ModelMismatch("vanishing vacuum population".into()));
    }
    let x = rho[1] / rho[0];
    let z = rho[2] / rho[1];
    // p_2/p_1 pins gamma^2 for each eta; p_1/p_0 then fixes eta
    let gamma_of = |eta: f64| z / (2.0 * eta - 4.0 * (1.0 - eta) * z);
    let f = |eta: f64| {
        let a = 1.0 - eta;
        let g = gamma_of(eta);
        (eta + 4.0 * eta * a * g) / (a + 2.0 * a * a * g) - x
    };
    let mut lo = 2.0 * z / (1.0 + 2.0 * z);
    let mut hi = 1.0;
    let lo_probe = lo + 1e-12 * (1.0 - lo);
    if !(f(lo_probe) < 0.0) {
        return Err(Error::ModelMismatch(format!(
            "populations ({:.4}, {:.4}, {:.4}) admit no efficiency in (0, 1)",
            target[0], target[1], target[2]
        )));
    }
    lo = lo_probe;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let eta = 0.5 * (lo + hi);
    let gamma_sq = gamma_of(eta);
    if !(gamma_sq > 0.0 && gamma_sq < GAMMA_SQ_MAX) {
        return Err(Error::ModelMismatch(format!(
            "pair amplitude gamma^2 = {gamma_sq:.4} out of range"
        )));
    }
    let res = residual(truncated_model(eta, gamma_sq), target);
    if res > RESIDUAL_MAX {
        return Err(Error::ModelMismatch(format!("no exact root, residual {res:.2e}")));
    }
    Ok(EtaGamma {
        eta,
        gamma_sq,
        gamma_identified: true,
        residual: res,
    })
}

fn solve_exact(rho: [f64; 3], eta_t: f64) -> Result<EtaGamma> {
    HeraldParams::new(eta_t)?;
    let start = solve_truncated(rho)?;
    if !start.gamma_identified {
        return Ok(start);
    }
    let target = normalized_head(rho);
    let ratios = |eta: f64, g: f64| -> Result<[f64; 2]> {
        let m = exact_model(eta, g, eta_t)?;
        Ok([m[1] / m[0] - target[1] / target[0], m[2] / m[0] - target[2] / target[0]])
    };
    let (mut eta, mut g) = (start.eta, start.gamma_sq);
    let mut f = ratios(eta, g)?;
    for _ in 0..100 {
        let norm = f[0].abs().max(f[1].abs());
        if norm < 1e-14 {
            break;
        }
        let he = 1e-7 * eta.min(1.0 - eta);
        let hg = 1e-7 * g;
        let fe = ratios(eta + he, g)?;
        let fg = ratios(eta, g + hg)?;
        let j = [
            [(fe[0] - f[0]) / he, (fg[0] - f[0]) / hg],
            [(fe[1] - f[1]) / he, (fg[1] - f[1]) / hg],
        ];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if det == 0.0 || !det.is_finite() {
            break;
        }
        let de = (j[1][1] * f[0] - j[0][1] * f[1]) / det;
        let dg = (j[0][0] * f[1] - j[1][0] * f[0]) / det;
        let mut step = 1.0;
        loop {
            let (ne, ng) = (eta - step * de, g - step * dg);
            if ne > 0.0 && ne < 1.0 && ng > 0.0 && ng < GAMMA_SQ_MAX {
                let nf = ratios(ne, ng)?;
                if nf[0].abs().max(nf[1].abs()) < norm {
                    eta = ne;
                    g = ng;
                    f = nf;
                    break;
                }
            }
            step *= 0.5;
            if step < 1e-12 {
                break;
            }
        }
        if step < 1e-12 {
            break;
        }
    }
    let res = residual(exact_model(eta, g, eta_t)?, target);
    if res > RESIDUAL_MAX {
        return Err(Error::ModelMismatch(format!("no exact root, residual {res:.2e}")));
    }
    Ok(EtaGamma {
        eta,
        gamma_sq: g,
        gamma_identified: true,
        residual: res,
    })
}

fn head(state: &FockDiagonal) -> Result<[f64; 3]> {
    let rho = [state.get(0), state.get(1), state.get(2)];
    if !(rho[1] > 0.0) {
        return Err(invalid("the one-photon population must be positive"));
    }
    Ok(rho)
}

/// Efficiency and pair amplitude from the lowest three populations.
pub fn extract_eta_gamma(state: &FockDiagonal) -> Result<EtaGamma> {
    extract_eta_gamma_with(state, ExtractModel::Truncated)
}

pub fn extract_eta_gamma_with(state: &FockDiagonal, model: ExtractModel) -> Result<EtaGamma> {
    let rho = head(state)?;
    match model {
        ExtractModel::Truncated => solve_truncated(rho),
        ExtractModel::Exact { eta_t } => solve_exact(rho, eta_t),
    }
}

impl EtaGamma {
    /// Standard deviations of `(eta, gamma_sq)` propagated from the population covariance.
    pub fn propagate(&self, state: &FockDiagonal, cov: &FisherCovariance, model: ExtractModel) -> Result<(f64, f64)> {
        let rho = head(state)?;
        let solve = |r: [f64; 3]| match model {
            ExtractModel::Truncated => solve_truncated(r),
            ExtractModel::Exact { eta_t } => solve_exact(r, eta_t),
        };
        let mut grad_eta = [0.0; 3];
        let mut grad_gamma = [0.0; 3];
        for n in 0..3 {
            if rho[n] == 0.0 {
                continue;
            }
            let h = 1e-6 * rho[n];
            let mut up = rho;
            let mut down = rho;
            up[n] += h;
            down[n] -= h;
            let (a, b) = (solve(up)?, solve(down)?);
            grad_eta[n] = (a.eta - b.eta) / (2.0 * h);
            grad_gamma[n] = (a.gamma_sq - b.gamma_sq) / (2.0 * h);
        }
        let sigma_gamma = if self.gamma_identified {
            cov.quadratic_form(&grad_gamma).max(0.0).sqrt()
        } else {
            0.0
        };
        Ok((cov.quadratic_form(&grad_eta).max(0.0).sqrt(), sigma_gamma))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::effective_single_photon;
    use proptest::prelude::*;

    #[test]
    fn reference_diagonals() {
        let state = FockDiagonal::new(vec![0.4138, 0.5758, 0.0104]).unwrap();
        let r = extract_eta_gamma(&state).unwrap();
        assert!((r.eta - 0.5787).abs() < 0.003, "{r:?}");
        assert!((r.gamma_sq - 0.0160).abs() < 0.0015, "{r:?}");
        assert!(r.residual < 1e-10);
    }

    #[test]
    fn two_level_limit() {
        let r = extract_eta_gamma(&effective_single_photon(0.6).unwrap()).unwrap();
        assert!((r.eta - 0.6).abs() < 1e-15);
        assert_eq!(r.gamma_sq, 0.0);
        assert!(!r.gamma_identified);
    }

    #[test]
    fn forward_inverse_example() {
        let m = truncated_model(0.3, 0.05);
        let r = extract_eta_gamma(&FockDiagonal::new(m.to_vec()).unwrap()).unwrap();
        assert!((r.eta - 0.3).abs() < 1e-8);
        assert!((r.gamma_sq - 0.05).abs() < 1e-8);
    }

    #[test]
    fn rejects_states_outside_the_model() {
        // far too many pairs relative to singles
        let s = FockDiagonal::new(vec![0.1, 0.2, 0.7]).unwrap();
        assert!(matches!(extract_eta_gamma(&s), Err(Error::ModelMismatch(_))));
        let no_single = FockDiagonal::new(vec![0.5, 0.0, 0.5]).unwrap();
        assert!(matches!(extract_eta_gamma(&no_single), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn exact_model_round_trip() {
        let state = heralded_lossy_state(
            SqueezeParam::from_gamma_sq(0.016).unwrap(),
            HeraldParams::new(0.07).unwrap(),
            0.5787,
            SIMULATION_N_MAX,
        )
        .unwrap();
        let r = extract_eta_gamma_with(&state, ExtractModel::Exact { eta_t: 0.07 }).unwrap();
        assert!((r.eta - 0.5787).abs() < 1e-7, "{r:?}");
        assert!((r.gamma_sq - 0.016).abs() < 1e-7, "{r:?}");
    }

    proptest! {
        #[test]
        fn truncated_inverse_is_identity(eta in 0.1f64..0.9, gamma_sq in 0.001f64..0.1) {
            let m = truncated_model(eta, gamma_sq);
            let r = extract_eta_gamma(&FockDiagonal::new(m.to_vec()).unwrap()).unwrap();
            prop_assert!((r.eta - eta).abs() < 1e-6);
            prop_assert!((r.gamma_sq - gamma_sq).abs() < 1e-6);
        }
    }
}
