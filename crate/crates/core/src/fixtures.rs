//! Reference values for clients that re-evaluate marginals or parse session messages.

use serde_json::{json, Value};

use crate::fock::FockDiagonal;
use crate::quadrature::{fock_wavefunctions, marginal_density, wigner_section};

pub const FIXTURES_VERSION: &str = "fockscope-fixtures/1";
const N_MAX: usize = 10;

fn grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|i| lo + i as f64 * step).collect()
}

/// Marginals, mixture densities, Wigner cuts and one example of each message kind.
pub fn export() -> Value {
    let q = grid(-6.0, 6.0, 0.25);
    let mut psi = vec![0.0; N_MAX + 1];
    let wavefunctions: Vec<Vec<f64>> = (0..=N_MAX)
        .map(|n| {
            q.iter()
                .map(|&x| {
                    fock_wavefunctions(x, &mut psi);
                    psi[n]
                })
                .collect()
        })
        .collect();
    let marginals: Vec<Vec<f64>> = wavefunctions
        .iter()
        .map(|row| row.iter().map(|v| v * v).collect())
        .collect();
    let states = [
        ("vacuum", vec![1.0, 0.0, 0.0]),
        ("single-photon", vec![0.0, 1.0, 0.0]),
        ("heralded-reference", vec![0.4138, 0.5758, 0.0104]),
        ("two-level-0.6", vec![0.4, 0.6, 0.0]),
    ];
    let radii = grid(0.0, 3.0, 0.05);
    let mixtures: Vec<Value> = states
        .iter()
        .map(|(name, p)| {
            let state = FockDiagonal::new(p.clone()).expect("fixture states are valid");
            let density: Vec<f64> = q.iter().map(|&x| marginal_density(&state, x)).collect();
            let w = wigner_section(&state, &radii);
            json!({ "name": name, "diagonals": p, "density": density, "wigner": w })
        })
        .collect();
    json!({
        "version": FIXTURES_VERSION,
        "convention": "vacuum-variance-half",
        "q": q,
        "n_max": N_MAX,
        "wavefunctions": wavefunctions,
        "marginals": marginals,
        "radii": radii,
        "mixtures": mixtures,
        "messages": example_messages(),
    })
}

fn example_messages() -> Value {
    let envelope = |kind: &str, seq: u64, payload: Value| json!({ "kind": kind, "seq": seq, "t_ms": 200 * seq, "payload": payload });
    json!([
        envelope(
            "eta-update",
            0,
            json!({ "eta": 0.5652, "std_error": 0.0141, "block": 0, "block_size": 5000, "epoch": 0, "derived_eta": 0.5500 })
        ),
        envelope(
            "quad-batch",
            1,
            json!({ "block": 0, "epoch": 0, "decimation": 10, "vacuum_variance": 0.5, "samples": [0.12, -0.98, 1.44] })
        ),
        envelope(
            "rate-update",
            2,
            json!({ "segments_per_second": 25000.0, "trigger_rate_hz": 85000.0, "segments_emitted": 25000, "epoch": 0 })
        ),
        envelope(
            "recon-update",
            3,
            json!({
                "epoch": 0, "samples": 50000, "diagonals": [0.43, 0.56, 0.01, 0.0, 0.0], "sigma": [0.004, 0.006, 0.004, 0.0, 0.0],
                "eta": 0.56, "gamma_sq": 0.017, "fidelity": 0.56, "iterations": 412, "converged": true, "log_likelihood": -61234.5,
                "wigner": { "radii": [0.0, 0.5], "values": [-0.04, 0.02] }
            })
        ),
        envelope(
            "knob-ack",
            4,
            json!({ "accepted": true, "name": "visibility", "value": 0.9, "epoch": 1, "derived": {
                "gamma_sq": 0.016, "eta_m": 0.81, "eta_optical": 0.6477, "eta_electronic": 0.952, "eta": 0.6166, "trigger_rate_hz": 85000.0, "segment_rate": 25000.0
            }})
        ),
        envelope(
            "knob-ack",
            5,
            json!({ "accepted": false, "name": "visibility", "value": 1.5, "error": "invalid parameter: visibility must lie in [0, 1], got 1.5" })
        ),
        envelope(
            "snapshot",
            6,
            json!({ "ready": false, "error": "not ready: no reconstruction since the last knob change" })
        ),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::fock_marginal;

    #[test]
    fn fixtures_are_consistent() {
        let f = export();
        assert_eq!(f["version"], FIXTURES_VERSION);
        let q: Vec<f64> = serde_json::from_value(f["q"].clone()).unwrap();
        let m: Vec<Vec<f64>> = serde_json::from_value(f["marginals"].clone()).unwrap();
        assert_eq!(m.len(), N_MAX + 1);
        assert_eq!(m[3][7], fock_marginal(3, q[7]));
        let table = &f["mixtures"][2];
        let p: Vec<f64> = serde_json::from_value(table["diagonals"].clone()).unwrap();
        let d: Vec<f64> = serde_json::from_value(table["density"].clone()).unwrap();
        let mix: f64 = (0..3).map(|n| p[n] * m[n][24]).sum();
        assert!((d[24] - mix).abs() < 1e-15);
        assert!((table["wigner"]["values"][0].as_f64().unwrap() + 0.0483).abs() < 5e-4);
    }
}
