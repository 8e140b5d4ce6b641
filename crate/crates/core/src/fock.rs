//! Photon-number-diagonal state algebra.
//!
//! Everything in the pipeline that describes a light pulse is a [`FockDiagonal`]:
//! the pair-number statistics of the down-converter, the heralded signal mode,
//! the same mode after optical loss, and the tomographic estimate.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Smallest truncation order any state may carry.
pub const MIN_N_MAX: usize = 2;
/// Truncation used when simulating the source.
pub const SIMULATION_N_MAX: usize = 10;
/// Truncation used when reconstructing from quadrature data.
pub const RECONSTRUCTION_N_MAX: usize = 4;
/// Binomial coefficients are only evaluated up to this order.
pub const MAX_N_MAX: usize = 64;

/// Truncated photon-number distribution `p_0 ..= p_{n_max}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FockDiagonal {
    probs: Vec<f64>,
}

impl FockDiagonal {
    /// Builds a state from nonnegative weights, normalizing them to unit sum.
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.len() < MIN_N_MAX + 1 {
            return Err(invalid(format!(
                "n_max must be at least {MIN_N_MAX}, got {}",
                weights.len().saturating_sub(1)
            )));
        }
        if weights.len() > MAX_N_MAX + 1 {
            return Err(invalid(format!("n_max must not exceed {MAX_N_MAX}")));
        }
        if let Some((n, p)) = weights.iter().enumerate().find(|(_, p)| !p.is_finite() || **p < 0.0) {
            return Err(invalid(format!("p_{n} = {p} is not a nonnegative number")));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(invalid("all weights are zero"));
        }
        Ok(Self {
            probs: weights.into_iter().map(|p| p / total).collect(),
        })
    }

    pub fn vacuum(n_max: usize) -> Result<Self> {
        Self::number_state(0, n_max)
    }

    /// The pure Fock state `|n><n|` truncated at `n_max`.
    pub fn number_state(n: usize, n_max: usize) -> Result<Self> {
        if n > n_max {
            return Err(invalid(format!("n = {n} exceeds n_max = {n_max}")));
        }
        let mut probs = vec![0.0; n_max.max(MIN_N_MAX) + 1];
        probs[n] = 1.0;
        Self::new(probs)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn n_max(&self) -> usize {
        self.probs.len() - 1
    }

    /// Probability of `n` photons; zero beyond the truncation.
    pub fn get(&self, n: usize) -> f64 {
        self.probs.get(n).copied().unwrap_or(0.0)
    }

    pub fn mean_photon_number(&self) -> f64 {
        self.probs.iter().enumerate().map(|(n, p)| n as f64 * p).sum()
    }

    /// Re-truncates (dropping the tail and renormalizing) or zero-pads to `n_max`.
    pub fn with_n_max(&self, n_max: usize) -> Result<Self> {
        let mut probs = self.probs.clone();
        probs.resize(n_max + 1, 0.0);
        Self::new(probs)
    }
}

impl TryFrom<Vec<f64>> for FockDiagonal {
    type Error = Error;

    fn try_from(value: Vec<f64>) -> Result<Self> {
        Self::new(value)
    }
}

impl From<FockDiagonal> for Vec<f64> {
    fn from(value: FockDiagonal) -> Self {
        value.probs
    }
}

/// Pair amplitude of the down-converter; the pair-number distribution is
/// geometric in `gamma^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SqueezeParam {
    gamma: f64,
}

impl SqueezeParam {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(invalid(format!("gamma must lie in [0, 1), got {gamma}")));
        }
        Ok(Self { gamma })
    }

    pub fn from_gamma_sq(gamma_sq: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&gamma_sq) {
            return Err(invalid(format!("gamma^2 must lie in [0, 1), got {gamma_sq}")));
        }
        Self::new(gamma_sq.sqrt())
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn gamma_sq(&self) -> f64 {
        self.gamma * self.gamma
    }
}

/// Trigger-channel detection efficiency, including the trigger path losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeraldParams {
    eta_t: f64,
}

impl HeraldParams {
    pub fn new(eta_t: f64) -> Result<Self> {
        check_unit("eta_t", eta_t)?;
        Ok(Self { eta_t })
    }

    pub fn eta_t(&self) -> f64 {
        self.eta_t
    }

    /// Probability that a pulse carrying `n` trigger photons produces a click.
    pub fn click_probability(&self, n: usize) -> f64 {
        if n == 0 || self.eta_t == 0.0 {
            0.0
        } else if self.eta_t == 1.0 {
            1.0
        } else {
            // 1 - (1 - eta_t)^n without cancellation for small eta_t
            -(n as f64 * (-self.eta_t).ln_1p()).exp_m1()
        }
    }
}

impl Default for HeraldParams {
    fn default() -> Self {
        Self { eta_t: 0.07 }
    }
}

/// Per-stage transmissions of the signal channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyBudget {
    /// Preparation efficiency (fraction of genuine heralds).
    pub eta_p: f64,
    /// Mode matching with the local oscillator.
    pub eta_m: f64,
    /// Linear optical losses.
    pub eta_l: f64,
    /// Photodiode quantum efficiency.
    pub eta_d: f64,
    /// Electronic-noise equivalent efficiency.
    pub eta_el: f64,
}

impl EfficiencyBudget {
    pub fn new(eta_p: f64, eta_m: f64, eta_l: f64, eta_d: f64, eta_el: f64) -> Result<Self> {
        let budget = Self {
            eta_p,
            eta_m,
            eta_l,
            eta_d,
            eta_el,
        };
        budget.validate()?;
        Ok(budget)
    }

    pub fn validate(&self) -> Result<()> {
        check_unit("eta_p", self.eta_p)?;
        check_unit("eta_m", self.eta_m)?;
        check_unit("eta_l", self.eta_l)?;
        check_unit("eta_d", self.eta_d)?;
        check_unit("eta_el", self.eta_el)
    }

    /// Ideal detection everywhere.
    pub fn perfect() -> Self {
        Self {
            eta_p: 1.0,
            eta_m: 1.0,
            eta_l: 1.0,
            eta_d: 1.0,
            eta_el: 1.0,
        }
    }

    /// Product of every stage except the detector electronics.
    pub fn optical(&self) -> f64 {
        self.eta_p * self.eta_m * self.eta_l * self.eta_d
    }
}

pub(crate) fn check_unit(name: &str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(invalid(format!("{name} must lie in [0, 1], got {value}")))
    }
}

/// Pair-number distribution `p_n ∝ gamma^(2n)`, normalized over `0..=n_max`.
pub fn pair_distribution(gamma: SqueezeParam, n_max: usize) -> Result<FockDiagonal> {
    if n_max < MIN_N_MAX {
        return Err(invalid(format!("n_max must be at least {MIN_N_MAX}")));
    }
    let g2 = gamma.gamma_sq();
    let mut weights = Vec::with_capacity(n_max + 1);
    let mut w = 1.0;
    for _ in 0..=n_max {
        weights.push(w);
        w *= g2;
    }
    FockDiagonal::new(weights)
}

/// Probability mass of the untruncated geometric distribution beyond `n_max`.
pub fn pair_tail_mass(gamma: SqueezeParam, n_max: usize) -> f64 {
    gamma.gamma_sq().powi(n_max as i32 + 1)
}

/// Unnormalized herald weights `w_n = p_n (1 - (1 - eta_t)^n)`.
pub fn herald_weights(pairs: &FockDiagonal, h: HeraldParams) -> Vec<f64> {
    pairs
        .probs()
        .iter()
        .enumerate()
        .map(|(n, p)| p * h.click_probability(n))
        .collect()
}

/// Probability per pump pulse that the trigger detector clicks.
pub fn herald_probability(pairs: &FockDiagonal, h: HeraldParams) -> f64 {
    herald_weights(pairs, h).iter().sum()
}

/// Signal-mode state conditioned on at least one trigger click (no dark counts).
pub fn herald(pairs: &FockDiagonal, h: HeraldParams) -> Result<FockDiagonal> {
    let weights = herald_weights(pairs, h);
    if weights.iter().sum::<f64>() <= 0.0 {
        return Err(Error::NoHeraldPossible);
    }
    FockDiagonal::new(weights)
}

/// Row `C(n, 0..=n)` by the multiplicative recurrence.
fn binomial_row(n: usize) -> Vec<f64> {
    let mut row = Vec::with_capacity(n + 1);
    let mut c = 1.0;
    for m in 0..=n {
        row.push(c);
        c = c * (n - m) as f64 / (m + 1) as f64;
    }
    row
}

/// Binomial loss map with transmission `eta`.
pub fn loss_channel(state: &FockDiagonal, eta: f64) -> Result<FockDiagonal> {
    check_unit("eta", eta)?;
    let n_max = state.n_max();
    let mut out = vec![0.0; n_max + 1];
    for (n, &p) in state.probs().iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let row = binomial_row(n);
        for (m, c) in row.iter().enumerate() {
            out[m] += p * c * eta.powi(m as i32) * (1.0 - eta).powi((n - m) as i32);
        }
    }
    FockDiagonal::new(out)
}

/// The two-level model `(1 - eta)|0><0| + eta|1><1|` that ignores multipair events.
pub fn effective_single_photon(eta: f64) -> Result<FockDiagonal> {
    check_unit("eta", eta)?;
    FockDiagonal::new(vec![1.0 - eta, eta, 0.0])
}

pub fn overall_efficiency(budget: &EfficiencyBudget) -> f64 {
    budget.optical() * budget.eta_el
}

/// Mode-matching efficiency from the interference visibility with the local oscillator.
pub fn visibility_to_mode_match(visibility: f64) -> Result<f64> {
    check_unit("visibility", visibility)?;
    Ok(visibility * visibility)
}

/// Overlap of a diagonal state with `|n>`.
pub fn fidelity(state: &FockDiagonal, n: usize) -> Result<f64> {
    if n > state.n_max() {
        return Err(invalid(format!("n = {n} exceeds n_max = {}", state.n_max())));
    }
    Ok(state.probs()[n])
}

/// Full source chain: pairs, heralding, then optical loss.
pub fn heralded_lossy_state(gamma: SqueezeParam, h: HeraldParams, eta: f64, n_max: usize) -> Result<FockDiagonal> {
    let pairs = pair_distribution(gamma, n_max)?;
    loss_channel(&herald(&pairs, h)?, eta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn gsq(x: f64) -> SqueezeParam {
        SqueezeParam::from_gamma_sq(x).unwrap()
    }

    #[test]
    fn pair_distribution_examples() {
        let vac = pair_distribution(SqueezeParam::new(0.0).unwrap(), 2).unwrap();
        assert_eq!(vac.probs(), &[1.0, 0.0, 0.0]);

        let p = pair_distribution(gsq(0.0160), 10).unwrap();
        assert_abs_diff_eq!(p.get(1) / p.get(0), 0.0160, epsilon = 1e-15);
        assert_abs_diff_eq!(p.get(2) / p.get(0), 2.56e-4, epsilon = 1e-15);

        // direct summation oracle for 0.5^n over 0..=10
        let p = pair_distribution(gsq(0.5), 10).unwrap();
        let total: f64 = (0..=10).map(|n| 0.5f64.powi(n)).sum();
        for n in 0..=10 {
            assert_abs_diff_eq!(p.get(n), 0.5f64.powi(n as i32) / total, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(p.probs().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn pair_distribution_rejects_bad_input() {
        assert!(SqueezeParam::new(1.0).is_err());
        assert!(SqueezeParam::from_gamma_sq(1.2).is_err());
        assert!(pair_distribution(gsq(0.1), 1).is_err());
    }

    #[test]
    fn default_truncation_tail_is_negligible() {
        assert!(pair_tail_mass(gsq(0.0160), SIMULATION_N_MAX) < 1e-9);
        assert!(pair_tail_mass(gsq(0.05), SIMULATION_N_MAX) < 1e-9);
    }

    #[test]
    fn herald_examples() {
        let vac = pair_distribution(SqueezeParam::new(0.0).unwrap(), 4).unwrap();
        assert_eq!(
            herald(&vac, HeraldParams::new(0.1).unwrap()),
            Err(Error::NoHeraldPossible)
        );

        let pairs = pair_distribution(gsq(0.2), 6).unwrap();
        let h = herald(&pairs, HeraldParams::new(1.0).unwrap()).unwrap();
        let tail: f64 = pairs.probs()[1..].iter().sum();
        assert_eq!(h.get(0), 0.0);
        for n in 1..=6 {
            assert_abs_diff_eq!(h.get(n), pairs.get(n) / tail, epsilon = 1e-14);
        }
    }

    #[test]
    fn herald_matches_small_gamma_expansion() {
        // leading-order heralded state: eta_t g |1> + 2 eta_t g^2 |2>
        let g = 0.0160;
        let eta_t = 1e-4;
        let h = herald(
            &pair_distribution(gsq(g), 10).unwrap(),
            HeraldParams::new(eta_t).unwrap(),
        )
        .unwrap();
        let ratio = h.get(2) / h.get(1);
        assert!((ratio - 2.0 * g).abs() / (2.0 * g) < 1e-3, "ratio {ratio}");
        assert_abs_diff_eq!(ratio, 0.032, epsilon = 1e-4);
    }

    #[test]
    fn loss_channel_examples() {
        let s = FockDiagonal::new(vec![0.2, 0.5, 0.3]).unwrap();
        assert_eq!(loss_channel(&s, 1.0).unwrap(), s);
        assert_eq!(loss_channel(&s, 0.0).unwrap().probs(), &[1.0, 0.0, 0.0]);
        assert!(loss_channel(&s, 1.5).is_err());
        assert!(loss_channel(&s, -0.1).is_err());
    }

    #[test]
    fn heralded_lossy_chain_reproduces_reference_diagonals() {
        let eta = 0.5787;
        let g = 0.0160;
        let chain = heralded_lossy_state(gsq(g), HeraldParams::new(1e-4).unwrap(), eta, 10).unwrap();

        // Oracle: the O(gamma^4) expansion of the same chain, normalized.
        let w = [
            (1.0 - eta) * g + 2.0 * (1.0 - eta).powi(2) * g * g,
            eta * g + 4.0 * eta * (1.0 - eta) * g * g,
            2.0 * eta * eta * g * g,
        ];
        let total: f64 = w.iter().sum();
        let expansion: Vec<f64> = w.iter().map(|x| x / total).collect();
        let reference = [0.4138, 0.5758, 0.0104];
        for n in 0..3 {
            assert_abs_diff_eq!(chain.get(n), reference[n], epsilon = 5e-4);
            assert_abs_diff_eq!(expansion[n], reference[n], epsilon = 5e-4);
        }
    }

    #[test]
    fn effective_single_photon_examples() {
        assert_eq!(effective_single_photon(1.0).unwrap().probs(), &[0.0, 1.0, 0.0]);
        let s = effective_single_photon(0.5758).unwrap();
        assert_abs_diff_eq!(s.get(0), 0.4242, epsilon = 1e-12);
        assert_abs_diff_eq!(s.get(1), 0.5758, epsilon = 1e-12);
        assert_eq!(effective_single_photon(0.5).unwrap().probs(), &[0.5, 0.5, 0.0]);
        assert!(effective_single_photon(1.01).is_err());
    }

    #[test]
    fn efficiency_budget_product() {
        assert_eq!(overall_efficiency(&EfficiencyBudget::perfect()), 1.0);
        let nominal = EfficiencyBudget::new(0.98, 0.73, 0.96, 0.85, 0.93).unwrap();
        assert_abs_diff_eq!(overall_efficiency(&nominal), 0.5429, epsilon = 1e-4);
        let dead = EfficiencyBudget::new(0.98, 0.0, 0.96, 0.85, 0.93).unwrap();
        assert_eq!(overall_efficiency(&dead), 0.0);
        assert!(EfficiencyBudget::new(0.98, 1.2, 0.96, 0.85, 0.93).is_err());
    }

    #[test]
    fn mode_match_from_visibility() {
        assert_abs_diff_eq!(visibility_to_mode_match(0.85).unwrap(), 0.7225, epsilon = 1e-15);
        assert_eq!(visibility_to_mode_match(1.0).unwrap(), 1.0);
        assert_eq!(visibility_to_mode_match(0.0).unwrap(), 0.0);
        assert!(visibility_to_mode_match(1.1).is_err());
    }

    #[test]
    fn fidelity_examples() {
        let fock = FockDiagonal::new(vec![0.4138, 0.5758, 0.0104]).unwrap();
        assert_abs_diff_eq!(fidelity(&fock, 1).unwrap(), 0.5758, epsilon = 1e-12);
        assert_eq!(fidelity(&FockDiagonal::vacuum(2).unwrap(), 0).unwrap(), 1.0);
        let vac = FockDiagonal::new(vec![0.9987, 0.0, 0.0013]).unwrap();
        assert_abs_diff_eq!(fidelity(&vac, 2).unwrap(), 0.0013, epsilon = 1e-12);
        assert!(fidelity(&fock, 3).is_err());
    }

    #[test]
    fn state_invariants_enforced() {
        assert!(FockDiagonal::new(vec![0.5, 0.5]).is_err());
        assert!(FockDiagonal::new(vec![0.5, -0.1, 0.6]).is_err());
        assert!(FockDiagonal::new(vec![0.0, 0.0, 0.0]).is_err());
        assert!(FockDiagonal::new(vec![f64::NAN, 0.0, 1.0]).is_err());
    }

    #[test]
    fn binomial_row_no_overflow_at_max_order() {
        let row = binomial_row(64);
        assert_abs_diff_eq!(row[32], 1.832624140942591e18, epsilon = 1e4);
        assert_abs_diff_eq!(row.iter().sum::<f64>(), 2f64.powi(64), epsilon = 1e5);
    }

    fn arb_state() -> impl Strategy<Value = FockDiagonal> {
        prop::collection::vec(0.0f64..1.0, 3..12)
            .prop_filter("nonzero", |w| w.iter().sum::<f64>() > 1e-3)
            .prop_map(|w| FockDiagonal::new(w).unwrap())
    }

    proptest! {
        #[test]
        fn loss_composes(state in arb_state(), a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let twice = loss_channel(&loss_channel(&state, a).unwrap(), b).unwrap();
            let once = loss_channel(&state, a * b).unwrap();
            for n in 0..=state.n_max() {
                prop_assert!((twice.get(n) - once.get(n)).abs() < 1e-12);
            }
        }

        #[test]
        fn operations_preserve_normalization(
            state in arb_state(),
            eta in 0.0f64..=1.0,
            eta_t in 0.01f64..=1.0,
        ) {
            let lossy = loss_channel(&state, eta).unwrap();
            prop_assert!((lossy.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(lossy.probs().iter().all(|p| *p >= 0.0));
            if let Ok(h) = herald(&state, HeraldParams::new(eta_t).unwrap()) {
                prop_assert!((h.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn pair_mean_is_geometric(g in 0.0f64..0.3) {
            let p = pair_distribution(gsq(g), 40).unwrap();
            let exact = g / (1.0 - g);
            prop_assert!((p.mean_photon_number() - exact).abs() < 1e-12 + 41.0 * g.powi(41));
        }

        #[test]
        fn herald_then_loss_matches_expansion(g in 1e-4f64..0.05, eta in 0.05f64..0.95) {
            let chain = heralded_lossy_state(gsq(g), HeraldParams::new(1e-6).unwrap(), eta, 12).unwrap();
            let head: f64 = chain.probs()[..3].iter().sum();
            let coeffs = [
                (1.0 - eta) * g + 2.0 * (1.0 - eta).powi(2) * g * g,
                eta * g + 4.0 * eta * (1.0 - eta) * g * g,
                2.0 * eta * eta * g * g,
            ];
            let total: f64 = coeffs.iter().sum();
            for n in 0..3 {
                let got = chain.get(n) / head;
                let want = coeffs[n] / total;
                let rel = (got - want).abs() / want;
                prop_assert!(rel < 10.0 * g, "n={} rel={}", n, rel);
            }
        }
    }
}
