use fockscope::fock::{loss_channel, FockDiagonal};
use fockscope::numeric::adaptive_simpson;
use fockscope::quadrature::{marginal_density, sample_quadratures, wigner_at};
use fockscope::tomography::{eta_from_variance, marginal_table, maxlik_diag, MaxLikConfig};
use proptest::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

const BINS: usize = 50;
const EDGE: f64 = 4.5;

/// Pearson statistic over 50 equal-width bins on [-4.5, 4.5], tails folded into the end bins.
fn chi_squared_p(state: &FockDiagonal, samples: &[f64]) -> f64 {
    let width = 2.0 * EDGE / BINS as f64;
    let mut observed = [0usize; BINS];
    for &q in samples {
        let b = (((q + EDGE) / width).floor().max(0.0) as usize).min(BINS - 1);
        observed[b] += 1;
    }
    let density = |q: f64| marginal_density(state, q);
    let n = samples.len() as f64;
    let stat: f64 = (0..BINS)
        .map(|b| {
            let lo = if b == 0 { -12.0 } else { -EDGE + b as f64 * width };
            let hi = if b == BINS - 1 {
                12.0
            } else {
                -EDGE + (b + 1) as f64 * width
            };
            let expected = n * adaptive_simpson(&density, lo, hi, 1e-12);
            (observed[b] as f64 - expected).powi(2) / expected
        })
        .sum();
    1.0 - ChiSquared::new((BINS - 1) as f64).unwrap().cdf(stat)
}

#[test]
fn sampling_matches_marginal_chi_squared() {
    let states = [
        vec![1.0, 0.0, 0.0],
        vec![0.0, 1.0, 0.0],
        vec![0.4138, 0.5758, 0.0104],
        vec![0.1, 0.2, 0.3, 0.2, 0.1, 0.1],
    ];
    for (i, p) in states.into_iter().enumerate() {
        let state = FockDiagonal::new(p).unwrap();
        let batch = sample_quadratures(&state, 100_000, 1000 + i as u64);
        let pval = chi_squared_p(&state, batch.values());
        assert!(pval > 1e-3, "state {i}: p = {pval}");
    }
}

#[test]
fn chi_squared_rejects_wrong_state() {
    let truth = FockDiagonal::new(vec![0.4, 0.6, 0.0]).unwrap();
    let wrong = FockDiagonal::new(vec![0.5, 0.5, 0.0]).unwrap();
    let batch = sample_quadratures(&truth, 100_000, 5);
    assert!(chi_squared_p(&wrong, batch.values()) < 1e-3);
}

fn arb_state(max_len: usize) -> impl Strategy<Value = FockDiagonal> {
    proptest::collection::vec(0.0f64..1.0, 3..=max_len).prop_filter_map("nonzero", |w| {
        let s: f64 = w.iter().sum();
        (s > 1e-3).then(|| FockDiagonal::new(w.iter().map(|x| x / s).collect()).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn loss_channels_compose(state in arb_state(8), a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let two = loss_channel(&loss_channel(&state, a).unwrap(), b).unwrap();
        let one = loss_channel(&state, a * b).unwrap();
        for (x, y) in two.probs().iter().zip(one.probs()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_preserves_normalization(state in arb_state(10), eta in 0.0f64..=1.0) {
        let out = loss_channel(&state, eta).unwrap();
        prop_assert!((out.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(out.probs().iter().all(|p| *p >= 0.0));
        let mean_in = state.mean_photon_number();
        prop_assert!((out.mean_photon_number() - eta * mean_in).abs() < 1e-12);
    }

    #[test]
    fn wigner_respects_lower_bound(state in arb_state(10), r in 0.0f64..4.0) {
        prop_assert!(wigner_at(&state, r) >= -1.0 / std::f64::consts::PI - 1e-12);
    }

    #[test]
    fn marginal_is_normalized(state in arb_state(8)) {
        let d = |q: f64| marginal_density(&state, q);
        prop_assert!((adaptive_simpson(&d, -12.0, 12.0, 1e-12) - 1.0).abs() < 1e-8);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn em_likelihood_is_monotone(p1 in 0.2f64..0.8, p2 in 0.0f64..0.1, seed in 0u64..1000) {
        let state = FockDiagonal::new(vec![1.0 - p1 - p2, p1, p2]).unwrap();
        let batch = sample_quadratures(&state, 5_000, seed);
        let r = maxlik_diag(&batch, &MaxLikConfig { n_max: 4, tol: 1e-12, max_iter: 300 }).unwrap();
        for w in r.likelihood_trace.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-9 * w[0].abs());
        }
        prop_assert!((r.state.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(r.iterations <= 300);
    }

    #[test]
    fn em_beats_random_candidates(seed in 0u64..1000, a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let truth = FockDiagonal::new(vec![0.45, 0.5, 0.05]).unwrap();
        let batch = sample_quadratures(&truth, 5_000, seed);
        let r = maxlik_diag(&batch, &MaxLikConfig { n_max: 2, tol: 1e-13, max_iter: 5000 }).unwrap();
        let table = marginal_table(&batch, 2);
        let p0 = a * (1.0 - b);
        let candidate = [p0, (1.0 - p0) * b, (1.0 - p0) * (1.0 - b)];
        prop_assert!(table.log_likelihood(r.state.probs()) >= table.log_likelihood(&candidate) - 1e-6);
    }
}

#[test]
fn variance_estimator_matches_closed_form_moment() {
    // <q^2> = (2n + 1) / 2 for |n>, so var - 1/2 = sum n p_n
    let p = vec![0.2, 0.3, 0.25, 0.15, 0.1];
    let mean_n: f64 = p.iter().enumerate().map(|(n, x)| n as f64 * x).sum();
    let state = FockDiagonal::new(p).unwrap();
    let batch = sample_quadratures(&state, 400_000, 17);
    let e = eta_from_variance(&batch).unwrap();
    assert!(
        (e.eta - mean_n).abs() < 4.0 * e.std_error,
        "{} vs {mean_n} (se {})",
        e.eta,
        e.std_error
    );
}
