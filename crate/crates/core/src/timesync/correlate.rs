use serde::{Deserialize, Serialize};

use super::signal::PulseSignal;
use crate::{Error, Result};

/// Outcome of the offset search for one vehicle-day.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OffsetResult {
    /// Seconds to add to swipe timestamps.
    pub tau_star: i64,
    /// Swipe pulses overlapping an AVL pulse at `tau_star`.
    pub cor_peak: usize,
    pub n_cr: usize,
    pub n_vr: usize,
    pub sparsity: f64,
    pub accepted: bool,
    /// Second-highest correlation peak over the highest; a periodicity diagnostic.
    pub peak_ratio: f64,
    /// Word-level AND/popcount operations spent.
    pub ops: u64,
}

/// Correlation values over a contiguous lag range (in samples).
#[derive(Clone, Debug)]
pub struct Correlation {
    pub lag_lo: i64,
    pub values: Vec<u64>,
    pub ops: u64,
}

impl Correlation {
    pub fn at(&self, lag: i64) -> u64 {
        self.values[(lag - self.lag_lo) as usize]
    }

    /// Highest value; ties go to the smallest |lag|, then the negative lag.
    pub fn peak(&self) -> (i64, u64) {
        let mut best = (self.lag_lo, self.values[0]);
        for (i, &v) in self.values.iter().enumerate() {
            let lag = self.lag_lo + i as i64;
            let better = v > best.1
                || (v == best.1 && (lag.abs() < best.0.abs() || (lag.abs() == best.0.abs() && lag < best.0)));
            if better {
                best = (lag, v);
            }
        }
        best
    }

    /// Largest value further than `guard` lags from `lag`, relative to the value at `lag`.
    pub fn secondary_ratio(&self, lag: i64, guard: i64) -> f64 {
        let top = self.at(lag);
        if top == 0 {
            return 0.0;
        }
        let second = self
            .values
            .iter()
            .enumerate()
            .filter(|(i, _)| (self.lag_lo + *i as i64 - lag).abs() > guard)
            .map(|(_, v)| *v)
            .max()
            .unwrap_or(0);
        second as f64 / top as f64
    }
}

fn check_compatible(c: &PulseSignal, v: &PulseSignal) -> Result<()> {
    if c.resolution != v.resolution || c.start_ts != v.start_ts {
        return Err(Error::Parameter("signals must share start time and resolution".into()));
    }
    Ok(())
}

/// `cor(k) = Σ_i C[i − k] · V[i]` for `k ∈ [lag_lo, lag_hi]`, computed with packed AND + popcount.
pub fn correlate(c: &PulseSignal, v: &PulseSignal, lag_lo: i64, lag_hi: i64) -> Result<Correlation> {
    check_compatible(c, v)?;
    let words = v.words();
    let mut values = Vec::with_capacity((lag_hi - lag_lo + 1).max(0) as usize);
    let mut ops = 0u64;
    for k in lag_lo..=lag_hi {
        let mut acc = 0u64;
        for (j, &vw) in words.iter().enumerate() {
            acc += (vw & c.word_at(64 * j as i64 - k)).count_ones() as u64;
        }
        ops += words.len() as u64;
        values.push(acc);
    }
    Ok(Correlation { lag_lo, values, ops })
}

/// Number of `c` pulse blocks that overlap a `v` one when `c` is delayed by `lag` samples.
pub fn matched_blocks(c: &PulseSignal, v: &PulseSignal, lag: i64) -> usize {
    c.blocks()
        .into_iter()
        .filter(|&(s, e)| {
            (s as i64 + lag..=e as i64 + lag).any(|i| i >= 0 && v.get(i as usize))
        })
        .count()
}

/// γ = 1 − n_cr / n_vr, clamped to [0,1].
pub fn sparsity(n_cr: usize, n_vr: usize) -> Result<f64> {
    if n_vr == 0 {
        return Err(Error::NoAvlEvents);
    }
    Ok((1.0 - n_cr as f64 / n_vr as f64).clamp(0.0, 1.0))
}

pub fn accept_offset(result: &OffsetResult, eta: f64) -> bool {
    result.cor_peak as f64 >= eta * result.n_cr as f64
}

/// Full-range search of the offset between swipe signal `s_c` and AVL signal `s_v`.
pub fn cross_correlate_offset(s_c: &PulseSignal, s_v: &PulseSignal, tau_max: i64) -> Result<OffsetResult> {
    check_compatible(s_c, s_v)?;
    if s_c.ones() == 0 || s_v.ones() == 0 {
        return Err(Error::InsufficientEvents);
    }
    let k = tau_max / s_c.resolution;
    let cor = correlate(s_c, s_v, -k, k)?;
    let (lag, _) = cor.peak();
    let n_cr = s_c.blocks().len();
    let n_vr = s_v.blocks().len();
    let mut r = OffsetResult {
        tau_star: lag * s_c.resolution,
        cor_peak: matched_blocks(s_c, s_v, lag),
        n_cr,
        n_vr,
        sparsity: sparsity(n_cr, n_vr)?,
        accepted: false,
        peak_ratio: cor.secondary_ratio(lag, (s_c.t_w / s_c.resolution).max(1)),
        ops: cor.ops,
    };
    r.accepted = accept_offset(&r, super::DEFAULT_ETA);
    Ok(r)
}
