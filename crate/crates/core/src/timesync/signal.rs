use crate::{Error, Result};

/// Same-stop swipe group; `rep` is its earliest timestamp.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SwipeGroup {
    pub rep: i64,
    /// Indices into the input slice.
    pub members: Vec<usize>,
}

/// Splits time-sorted swipes where consecutive gaps reach `epsilon`.
pub fn segment_swipes(ts: &[i64], epsilon: i64) -> Vec<SwipeGroup> {
    let mut out: Vec<SwipeGroup> = Vec::new();
    for (i, &t) in ts.iter().enumerate() {
        match out.last_mut() {
            Some(g) if t - ts[*g.members.last().unwrap()] < epsilon => g.members.push(i),
            _ => out.push(SwipeGroup {
                rep: t,
                members: vec![i],
            }),
        }
    }
    out
}

/// Binary pulse train packed 64 samples per word, least significant bit first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PulseSignal {
    pub start_ts: i64,
    /// Seconds per sample.
    pub resolution: i64,
    /// Pulse width in seconds.
    pub t_w: i64,
    len: usize,
    bits: Vec<u64>,
}

impl PulseSignal {
    pub fn zeros(start_ts: i64, resolution: i64, t_w: i64, len: usize) -> Self {
        Self {
            start_ts,
            resolution,
            t_w,
            len,
            bits: vec![0; len.div_ceil(64)],
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, i: usize) -> bool {
        i < self.len && self.bits[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn set(&mut self, i: usize) {
        if i < self.len {
            self.bits[i / 64] |= 1 << (i % 64);
        }
    }

    pub fn samples(&self) -> Vec<u8> {
        (0..self.len).map(|i| self.get(i) as u8).collect()
    }

    pub fn ones(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn words(&self) -> &[u64] {
        &self.bits
    }

    /// 64 samples starting at `pos`; positions outside the signal read as zero.
    pub fn word_at(&self, pos: i64) -> u64 {
        if pos >= self.len as i64 || pos <= -64 {
            return 0;
        }
        let w = pos.div_euclid(64);
        let b = pos.rem_euclid(64) as u32;
        let get = |i: i64| {
            if i < 0 {
                0
            } else {
                self.bits.get(i as usize).copied().unwrap_or(0)
            }
        };
        let lo = get(w) >> b;
        let hi = if b > 0 { get(w + 1) << (64 - b) } else { 0 };
        lo | hi
    }

    /// Maximal runs of ones as `(first, last)` sample indices.
    pub fn blocks(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < self.len {
            if self.get(i) {
                let s = i;
                while i + 1 < self.len && self.get(i + 1) {
                    i += 1;
                }
                out.push((s, i));
            }
            i += 1;
        }
        out
    }
}

/// Pulse of width `t_w` at each timestamp; sample `i` covers `[start + i·res, start + (i+1)·res)`
/// and is 1 when it intersects some `[t, t + t_w)`. Requires `t_w ≤ epsilon/2` so pulses of
/// distinct swipe groups never merge.
pub fn build_pulse_signal(
    timestamps: &[i64],
    t_w: i64,
    resolution: i64,
    epsilon: i64,
    start_ts: i64,
    len: usize,
) -> Result<PulseSignal> {
    if resolution < 1 {
        return Err(Error::Parameter("resolution must be at least 1 s".into()));
    }
    if t_w < 1 || 2 * t_w > epsilon {
        return Err(Error::Parameter(format!(
            "pulse width {t_w} s must be positive and at most epsilon/2 = {} s",
            epsilon as f64 / 2.0
        )));
    }
    if resolution != 1 && t_w % resolution != 0 {
        return Err(Error::Parameter("resolution must divide the pulse width".into()));
    }
    let mut s = PulseSignal::zeros(start_ts, resolution, t_w, len);
    for &t in timestamps {
        let rel = t - start_ts;
        let first = rel.div_euclid(resolution).max(0);
        let last = (rel + t_w - 1).div_euclid(resolution);
        for i in first..=last {
            if i >= 0 {
                s.set(i as usize);
            }
        }
    }
    Ok(s)
}

/// Max-pools a signal to `t_s` seconds per sample.
pub fn downsample(signal: &PulseSignal, t_s: i64) -> Result<PulseSignal> {
    if 2 * t_s > signal.t_w {
        return Err(Error::Parameter(format!(
            "resample period {t_s} s exceeds half the pulse width ({} s)",
            signal.t_w
        )));
    }
    if t_s < signal.resolution || t_s % signal.resolution != 0 {
        return Err(Error::Parameter("resample period must be a multiple of the resolution".into()));
    }
    let f = (t_s / signal.resolution) as usize;
    if f == 1 {
        return Ok(signal.clone());
    }
    let len = signal.len().div_ceil(f);
    let mut out = PulseSignal::zeros(signal.start_ts, t_s, signal.t_w, len);
    for (wi, &w) in signal.words().iter().enumerate() {
        let mut w = w;
        while w != 0 {
            let b = w.trailing_zeros() as usize;
            out.set((wi * 64 + b) / f);
            w &= w - 1;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segmentation_examples() {
        let g = segment_swipes(&[0, 10, 30, 100], 40);
        assert_eq!(g.len(), 2);
        assert_eq!(g[0].members, vec![0, 1, 2]);
        assert_eq!((g[0].rep, g[1].rep), (0, 100));
        let one = segment_swipes(&[7], 40);
        assert_eq!(one, vec![SwipeGroup { rep: 7, members: vec![0] }]);
        assert!(segment_swipes(&[], 40).is_empty());
    }

    #[test]
    fn pulse_examples() {
        let s = build_pulse_signal(&[5], 3, 1, 40, 0, 12).unwrap();
        let ones: Vec<usize> = (0..12).filter(|&i| s.get(i)).collect();
        assert_eq!(ones, vec![5, 6, 7]);
        let z = build_pulse_signal(&[], 20, 1, 100, 0, 50).unwrap();
        assert_eq!(z.ones(), 0);
        let c = build_pulse_signal(&[0, 100], 20, 10, 100, 0, 20).unwrap();
        let ones: Vec<usize> = (0..20).filter(|&i| c.get(i)).collect();
        assert_eq!(ones, vec![0, 1, 10, 11]);
        assert!(matches!(build_pulse_signal(&[0], 25, 1, 40, 0, 10), Err(Error::Parameter(_))));
    }

    #[test]
    fn downsample_rules() {
        let s = build_pulse_signal(&[3, 200, 517], 20, 1, 100, 0, 700).unwrap();
        assert_eq!(downsample(&s, 1).unwrap(), s);
        let d = downsample(&s, 10).unwrap();
        assert_eq!(d.len(), 70);
        for i in 0..70 {
            let any = (i * 10..(i * 10 + 10).min(700)).any(|k| s.get(k));
            assert_eq!(d.get(i), any);
        }
        assert!(downsample(&s, 11).is_err());
    }

    #[test]
    fn word_at_reads_across_boundaries() {
        let mut s = PulseSignal::zeros(0, 1, 20, 200);
        for i in [0, 63, 64, 130, 199] {
            s.set(i);
        }
        for pos in -70..210i64 {
            let w = s.word_at(pos);
            for b in 0..64 {
                let i = pos + b;
                let expect = i >= 0 && s.get(i as usize);
                assert_eq!(w >> b & 1 == 1, expect, "pos {pos} bit {b}");
            }
        }
    }
}
