use serde::{Deserialize, Serialize};

use super::{ChoiceParams, Eta, N_FACTORS};

/// One origin-destination stage: normalized alternatives and how often each was chosen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChoiceStage {
    pub x: Vec<[f64; N_FACTORS]>,
    pub counts: Vec<f64>,
    pub eta: Eta,
}

impl ChoiceStage {
    /// Builds a stage from raw factor rows.
    pub fn new(raw: &[[f64; N_FACTORS]], counts: Vec<f64>) -> Self {
        assert_eq!(raw.len(), counts.len());
        ChoiceStage {
            x: super::normalize_features(raw),
            counts,
            eta: super::scenario_vector(raw),
        }
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }
}

/// Utility is b minus the weighted normalized factors; b is common to all alternatives and cancels.
pub fn utilities(w: &[f64; N_FACTORS], eta: &Eta, x: &[[f64; N_FACTORS]]) -> Vec<f64> {
    x.iter()
        .map(|r| -(0..N_FACTORS).filter(|&k| eta.0[k]).map(|k| w[k] * r[k]).sum::<f64>())
        .collect()
}

pub fn probabilities(w: &[f64; N_FACTORS], eta: &Eta, x: &[[f64; N_FACTORS]]) -> Vec<f64> {
    crate::stats::softmax(&utilities(w, eta, x))
}

fn log_sum_exp(u: &[f64]) -> f64 {
    let m = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + u.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn log_likelihood(w: &[f64; N_FACTORS], stages: &[ChoiceStage]) -> f64 {
    stages
        .iter()
        .map(|s| {
            let u = utilities(w, &s.eta, &s.x);
            let lse = log_sum_exp(&u);
            s.counts.iter().zip(&u).map(|(c, ui)| c * (ui - lse)).sum::<f64>()
        })
        .sum()
}

pub fn gradient(w: &[f64; N_FACTORS], stages: &[ChoiceStage]) -> [f64; N_FACTORS] {
    let mut g = [0.0; N_FACTORS];
    for s in stages {
        let p = probabilities(w, &s.eta, &s.x);
        let total = s.total();
        for k in (0..N_FACTORS).filter(|&k| s.eta.0[k]) {
            let chosen: f64 = s.counts.iter().zip(&s.x).map(|(c, r)| c * r[k]).sum();
            let expected: f64 = p.iter().zip(&s.x).map(|(pi, r)| pi * r[k]).sum();
            g[k] += total * expected - chosen;
        }
    }
    g
}

/// Log-likelihood with all weights zero, i.e. uniform choice.
pub fn null_log_likelihood(stages: &[ChoiceStage]) -> f64 {
    stages.iter().map(|s| -s.total() * (s.x.len() as f64).ln()).sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct MnlFit {
    pub weights: [f64; N_FACTORS],
    pub log_likelihood: f64,
    pub r2: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Some weight sits at the upper bound, typically from perfect separation.
    pub clipped: bool,
}

/// Projected gradient ascent on the log-likelihood over 0 ≤ w ≤ max_weight.
pub fn fit_mnl(stages: &[ChoiceStage], params: &ChoiceParams) -> MnlFit {
    let active: [bool; N_FACTORS] = std::array::from_fn(|k| stages.iter().any(|s| s.eta.0[k]));
    let project = |v: f64| v.clamp(0.0, params.max_weight);
    let mut w = [0.0; N_FACTORS];
    let mut ll = log_likelihood(&w, stages);
    let mut step = 1.0 / stages.iter().map(ChoiceStage::total).sum::<f64>().max(1.0);
    let mut converged = false;
    let mut it = 0;
    while it < params.max_iter {
        it += 1;
        let g = gradient(&w, stages);
        let pg: f64 = (0..N_FACTORS)
            .filter(|&k| active[k])
            .map(|k| (project(w[k] + g[k]) - w[k]).powi(2))
            .sum::<f64>()
            .sqrt();
        if pg < params.tol {
            converged = true;
            break;
        }
        loop {
            let trial: [f64; N_FACTORS] = std::array::from_fn(|k| if active[k] { project(w[k] + step * g[k]) } else { 0.0 });
            let tl = log_likelihood(&trial, stages);
            if tl >= ll {
                let gain = tl - ll;
                w = trial;
                ll = tl;
                step *= 1.5;
                if gain <= params.tol * (1.0 + ll.abs()) {
                    converged = true;
                }
                break;
            }
            step /= 2.0;
            if step < 1e-14 {
                converged = true;
                break;
            }
        }
        if converged {
            break;
        }
    }
    let ll0 = null_log_likelihood(stages);
    MnlFit {
        weights: w,
        log_likelihood: ll,
        r2: (ll0 < 0.0).then(|| 1.0 - ll / ll0),
        iterations: it,
        converged,
        clipped: w.iter().any(|&v| v >= params.max_weight),
    }
}
