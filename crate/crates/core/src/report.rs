//! Trigger bookkeeping, multiphoton contamination and run summaries.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fock::{
    herald_weights, pair_distribution, FockDiagonal, HeraldParams, SqueezeParam, MAX_N_MAX, SIMULATION_N_MAX,
};
use crate::quadrature::wigner_at;
use crate::tomography::{extract_eta_gamma, ExtractModel, FisherCovariance, ReconstructionResult};

pub const REPORT_VERSION: &str = "fockscope-report/1";

/// Heralding probability per pulse.
pub fn trigger_probability(trigger_rate: f64, rep_rate: f64) -> Result<f64> {
    if !(rep_rate > 0.0) {
        return Err(invalid("rep_rate must be positive"));
    }
    if !(trigger_rate >= 0.0 && trigger_rate < rep_rate) {
        return Err(invalid("trigger_rate must lie in [0, rep_rate)"));
    }
    Ok(trigger_rate / rep_rate)
}

/// `(p_t, eta_t)` with `p_t = eta_t * gamma^2`.
pub fn trigger_bookkeeping(trigger_rate: f64, rep_rate: f64, gamma_sq: f64) -> Result<(f64, f64)> {
    let p_t = trigger_probability(trigger_rate, rep_rate)?;
    if !(gamma_sq > 0.0) {
        return Err(Error::Unidentifiable(
            "trigger efficiency needs a nonzero pair amplitude".into(),
        ));
    }
    if p_t == 0.0 {
        return Err(Error::Unidentifiable("no trigger events recorded".into()));
    }
    let eta_t = p_t / gamma_sq;
    if eta_t > 1.0 {
        return Err(Error::ModelMismatch(format!(
            "trigger rate implies eta_t = {eta_t:.3} above one"
        )));
    }
    Ok((p_t, eta_t))
}

/// Share of herald events caused by two or more pairs.
pub fn contamination_fraction(gamma_sq: f64, eta_t: f64) -> Result<f64> {
    HeraldParams::new(eta_t)?;
    if gamma_sq == 0.0 {
        return Ok(0.0);
    }
    let gamma = SqueezeParam::from_gamma_sq(gamma_sq)?;
    let n_max = ((1e-17f64.ln() / gamma_sq.ln()).ceil() as usize).clamp(SIMULATION_N_MAX, MAX_N_MAX);
    let pairs = pair_distribution(gamma, n_max)?;
    let weights: Vec<f64> = if eta_t == 0.0 {
        // vanishing trigger efficiency: clicks scale with the pair number
        pairs.probs().iter().enumerate().map(|(n, p)| n as f64 * p).collect()
    } else {
        herald_weights(&pairs, HeraldParams::new(eta_t)?)
    };
    let total: f64 = weights[1..].iter().sum();
    let multi: f64 = weights[2..].iter().sum();
    Ok(multi / total)
}

/// Table-style summary of one reconstructed run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub rep_rate: f64,
    pub trigger_rate: Option<f64>,
    pub p_t: Option<f64>,
    pub eta_t: Option<f64>,
    #[serde(rename = "diagonals")]
    pub state: FockDiagonal,
    pub sigma: Vec<f64>,
    pub eta: Option<f64>,
    pub sigma_eta: Option<f64>,
    pub gamma_sq: Option<f64>,
    pub sigma_gamma_sq: Option<f64>,
    pub fidelity: f64,
    pub wigner_origin: f64,
    pub contamination: Option<f64>,
    pub samples: usize,
    pub converged: bool,
}

/// Trigger side of a run, when known.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriggerInfo {
    pub trigger_rate: f64,
    pub rep_rate: f64,
}

impl RunSummary {
    /// Assembles a summary from a reconstruction; extraction failures leave `eta` and `gamma_sq` empty.
    pub fn from_reconstruction(
        result: &ReconstructionResult,
        covariance: Option<&FisherCovariance>,
        trigger: Option<TriggerInfo>,
        rep_rate: f64,
        samples: usize,
    ) -> Result<Self> {
        let state = result.state.clone();
        let extraction = extract_eta_gamma(&state).ok();
        let (sigma_eta, sigma_gamma_sq) = match (extraction, covariance) {
            (Some(e), Some(cov)) => match e.propagate(&state, cov, ExtractModel::Truncated) {
                Ok((se, sg)) => (Some(se), e.gamma_identified.then_some(sg)),
                Err(_) => (None, None),
            },
            _ => (None, None),
        };
        let gamma_sq = extraction.filter(|e| e.gamma_identified).map(|e| e.gamma_sq);
        let (p_t, eta_t) = match (trigger, gamma_sq) {
            (Some(t), Some(g)) => match trigger_bookkeeping(t.trigger_rate, t.rep_rate, g) {
                Ok((p, e)) => (Some(p), Some(e)),
                Err(_) => (Some(trigger_probability(t.trigger_rate, t.rep_rate)?), None),
            },
            (Some(t), None) => (Some(trigger_probability(t.trigger_rate, t.rep_rate)?), None),
            _ => (None, None),
        };
        let contamination = match (gamma_sq, eta_t) {
            (Some(g), Some(e)) => Some(contamination_fraction(g, e)?),
            _ => None,
        };
        Ok(Self {
            rep_rate: trigger.map(|t| t.rep_rate).unwrap_or(rep_rate),
            trigger_rate: trigger.map(|t| t.trigger_rate),
            p_t,
            eta_t,
            fidelity: state.get(1),
            wigner_origin: wigner_at(&state, 0.0),
            sigma: result.sigma.clone(),
            eta: extraction.map(|e| e.eta),
            sigma_eta,
            gamma_sq,
            sigma_gamma_sq,
            contamination,
            samples,
            converged: result.converged,
            state,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if let (Some(t), Some(p)) = (self.trigger_rate, self.p_t) {
            if (p * self.rep_rate - t).abs() > 1e-12 * t.max(1.0) {
                return Err(invalid("p_t is inconsistent with the trigger and repetition rates"));
            }
        }
        if let Some(c) = self.contamination {
            if !(0.0..=1.0).contains(&c) {
                return Err(invalid("contamination must lie in [0, 1]"));
            }
        }
        if !self.sigma.is_empty() && self.sigma.len() != self.state.probs().len() {
            return Err(invalid("sigma length does not match the state"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    #[default]
    Text,
    Structured,
}

#[derive(Serialize, Deserialize)]
struct Versioned<T> {
    version: String,
    #[serde(flatten)]
    body: T,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "n/a".into())
}

fn with_sigma(v: Option<f64>, s: Option<f64>) -> String {
    match (v, s) {
        (Some(v), Some(s)) => format!("{v:.4} ± {s:.4}"),
        _ => opt(v),
    }
}

fn render_text(s: &RunSummary) -> String {
    let mut out = String::new();
    let show_sigma = !s.sigma.is_empty();
    let _ = writeln!(
        out,
        "fockscope report ({} samples{})",
        s.samples,
        if s.converged { "" } else { ", NOT CONVERGED" }
    );
    if show_sigma {
        let _ = writeln!(out, "{:>3}  {:>8}  {:>8}", "n", "rho_nn", "sigma");
    } else {
        let _ = writeln!(out, "{:>3}  {:>8}", "n", "rho_nn");
    }
    for (n, p) in s.state.probs().iter().enumerate() {
        if show_sigma {
            let _ = writeln!(out, "{n:>3}  {p:>8.4}  {:>8.4}", s.sigma[n]);
        } else {
            let _ = writeln!(out, "{n:>3}  {p:>8.4}");
        }
    }
    let rows = [
        ("eta", with_sigma(s.eta, s.sigma_eta)),
        ("gamma_sq", with_sigma(s.gamma_sq, s.sigma_gamma_sq)),
        ("fidelity", format!("{:.4}", s.fidelity)),
        ("wigner(0)", format!("{:.4}", s.wigner_origin)),
        ("rep_rate_hz", format!("{:.4e}", s.rep_rate)),
        (
            "trigger_rate_hz",
            s.trigger_rate
                .map(|t| format!("{t:.4e}"))
                .unwrap_or_else(|| "n/a".into()),
        ),
        ("p_t", s.p_t.map(|p| format!("{p:.4e}")).unwrap_or_else(|| "n/a".into())),
        ("eta_t", opt(s.eta_t)),
        ("contamination", opt(s.contamination)),
    ];
    for (k, v) in rows {
        let _ = writeln!(out, "{k:<16} {v}");
    }
    out
}

/// Deterministic text table or versioned JSON object.
pub fn render_report(summary: &RunSummary, format: ReportFormat) -> String {
    match format {
        ReportFormat::Text => render_text(summary),
        ReportFormat::Structured => {
            let doc = Versioned {
                version: REPORT_VERSION.to_string(),
                body: summary,
            };
            let mut s = serde_json::to_string_pretty(&doc).expect("summary serializes");
            s.push('\n');
            s
        }
    }
}

/// Parses a structured report back into a summary.
pub fn parse_report(text: &str) -> Result<RunSummary> {
    let doc: Versioned<RunSummary> = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        message: e.to_string(),
    })?;
    if doc.version != REPORT_VERSION {
        return Err(Error::Parse {
            line: 1,
            message: format!("unsupported report version {:?}", doc.version),
        });
    }
    Ok(doc.body)
}
