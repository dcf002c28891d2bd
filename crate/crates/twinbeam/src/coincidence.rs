//! Streaming coincidence analysis of time-tag streams.
//!
//! Counting is pulse-anchored: the laser channel defines one acceptance
//! window per pulse (half-open, centered on the trigger), tags inside it
//! set per-pulse click bits, and all estimators reduce to per-pulse
//! counting statistics:
//!
//! * `g²_{s,i}` — zero-delay herald/port-1 coincidences normalized by the
//!   mean of the neighbouring pulse-offset (accidental) peaks;
//!   `CAR = g² − 1`.
//! * `g²_{s,s}` — `p₂/p₁²` from the two output ports and the pulse count.
//! * `g²_her` — the Grangier ratio `N_12H N_H / (N_1H N_2H)`.
//!
//! Uncertainties are first-order Poisson propagation; triple coincidences
//! below 30 counts additionally get an exact Poisson interval. Memory use
//! is bounded by the side-peak span, never by the stream length.

use std::collections::VecDeque;

use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

use crate::tagstream::{TimeTag, CHANNEL_LASER};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("stream is not sorted: timestamp {current} after {previous}")]
    UnsortedStream { previous: u64, current: u64 },
    #[error("no laser channel tags; pulse-anchored analysis impossible")]
    NoLaserChannel,
    #[error("no herald channel tags within the acceptance windows")]
    NoHeraldChannel,
    #[error("need {needed} side peaks for normalization, stream provides {available}")]
    InsufficientSidePeaks { needed: u32, available: u32 },
    #[error("g² = {0} is not above 1; the approximation ⟨n⟩ ≃ 1/g² needs CAR > 0")]
    SubPoissonianInput(f64),
    #[error("g²_auto = {0} outside the thermal-multimode band (1, 2]")]
    OutOfRange(f64),
    #[error("window must be positive")]
    NonpositiveWindow,
}

/// A value with its one-standard-deviation uncertainty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub sigma: f64,
}

impl Estimate {
    pub fn new(value: f64, sigma: f64) -> Self {
        Self { value, sigma }
    }

    /// |self − other| in units of the combined σ.
    pub fn sigma_distance(&self, other: f64) -> f64 {
        (self.value - other).abs() / self.sigma.max(f64::MIN_POSITIVE)
    }
}

/// Everything the coincidence pass measures.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationReport {
    pub n_pulses: u64,
    pub window_ns: f64,
    /// Singles within the acceptance windows.
    pub n_h: u64,
    pub n_1: u64,
    pub n_2: u64,
    /// Same-pulse doubles and triples.
    pub n_1h: u64,
    pub n_2h: u64,
    pub n_12: u64,
    pub n_12h: u64,
    /// Tags falling outside every acceptance window (diagnostic).
    pub n_outside_windows: u64,
    /// Mean accidental coincidences per side peak (g²_cross normalization).
    pub accidental_per_peak: f64,
    pub side_peaks_used: u32,
    pub car: Option<Estimate>,
    pub g2_cross: Option<Estimate>,
    pub g2_auto: Option<Estimate>,
    pub g2_heralded: Option<Estimate>,
    /// Exact Poisson 95% interval on g²_her, reported when N_12H < 30.
    pub g2_heralded_ci95: Option<(f64, f64)>,
    pub mean_n_estimate: Option<Estimate>,
    pub schmidt_k_estimate: Option<Estimate>,
}

#[derive(Debug, Clone, Copy)]
pub struct AnalysisOptions {
    pub window_ns: f64,
    /// Total number of accidental peaks (half on each side of zero delay).
    pub side_peaks: u32,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            window_ns: 2.5,
            side_peaks: 10,
        }
    }
}

impl AnalysisOptions {
    pub fn with_window_ns(window_ns: f64) -> Self {
        Self {
            window_ns,
            ..Self::default()
        }
    }
}

const MASK_H: u8 = 1;
const MASK_1: u8 = 2;
const MASK_2: u8 = 4;

/// Single-pass, bounded-memory coincidence counter. Feed sorted tags with
/// [`push`](Self::push), then [`finish`](Self::finish).
pub struct CoincidenceAccumulator {
    window_ps: u64,
    side_half: u32,
    // stream state
    last_timestamp: u64,
    current: Option<(u64, u8)>, // (laser time, click mask)
    pending: VecDeque<TimeTag>,
    recent_masks: VecDeque<u8>,
    // tallies
    n_pulses: u64,
    n_h: u64,
    n_1: u64,
    n_2: u64,
    n_1h: u64,
    n_2h: u64,
    n_12: u64,
    n_12h: u64,
    n_outside: u64,
    side_total: u64,
    max_pending: usize,
    options: AnalysisOptions,
}

impl CoincidenceAccumulator {
    pub fn new(options: AnalysisOptions) -> Result<Self, AnalysisError> {
        if !(options.window_ns > 0.0) {
            return Err(AnalysisError::NonpositiveWindow);
        }
        Ok(Self {
            window_ps: (options.window_ns * 1e3).round() as u64,
            side_half: (options.side_peaks / 2).max(1),
            last_timestamp: 0,
            current: None,
            pending: VecDeque::new(),
            recent_masks: VecDeque::new(),
            n_pulses: 0,
            n_h: 0,
            n_1: 0,
            n_2: 0,
            n_1h: 0,
            n_2h: 0,
            n_12: 0,
            n_12h: 0,
            n_outside: 0,
            side_total: 0,
            max_pending: 0,
            options,
        })
    }

    /// Largest number of tags ever buffered (memory-bound telemetry).
    pub fn max_buffered(&self) -> usize {
        self.max_pending + self.side_half as usize
    }

    fn in_window(&self, laser: u64, t: u64) -> bool {
        // half-open [laser − w/2, laser + w/2)
        let half = self.window_ps / 2;
        t + half >= laser && t < laser + (self.window_ps - half)
    }

    fn mark(&mut self, channel: u16) {
        if let Some((_, mask)) = &mut self.current {
            *mask |= match channel {
                0 => MASK_H,
                1 => MASK_1,
                2 => MASK_2,
                _ => 0,
            };
        }
    }

    fn close_current(&mut self) {
        let Some((_, mask)) = self.current.take() else {
            return;
        };
        self.n_pulses += 1;
        let h = mask & MASK_H != 0;
        let c1 = mask & MASK_1 != 0;
        let c2 = mask & MASK_2 != 0;
        self.n_h += h as u64;
        self.n_1 += c1 as u64;
        self.n_2 += c2 as u64;
        self.n_1h += (h && c1) as u64;
        self.n_2h += (h && c2) as u64;
        self.n_12 += (c1 && c2) as u64;
        self.n_12h += (h && c1 && c2) as u64;
        // accidental peaks at pulse offsets ±1..±side_half
        for past in self.recent_masks.iter() {
            let past_h = past & MASK_H != 0;
            let past_1 = past & MASK_1 != 0;
            self.side_total += (past_h && c1) as u64 + (h && past_1) as u64;
        }
        self.recent_masks.push_back(mask);
        if self.recent_masks.len() > self.side_half as usize {
            self.recent_masks.pop_front();
        }
    }

    pub fn push(&mut self, tag: TimeTag) -> Result<(), AnalysisError> {
        if tag.timestamp_ps < self.last_timestamp {
            return Err(AnalysisError::UnsortedStream {
                previous: self.last_timestamp,
                current: tag.timestamp_ps,
            });
        }
        self.last_timestamp = tag.timestamp_ps;
        if tag.channel == CHANNEL_LASER {
            self.close_current();
            self.current = Some((tag.timestamp_ps, 0));
            // tags that arrived ahead of their trigger
            while let Some(front) = self.pending.front() {
                let t = front.timestamp_ps;
                let laser = tag.timestamp_ps;
                if self.in_window(laser, t) {
                    let channel = self.pending.pop_front().unwrap().channel;
                    self.mark(channel);
                } else if t < laser {
                    self.pending.pop_front();
                    self.n_outside += 1;
                } else {
                    break;
                }
            }
        } else if tag.channel < CHANNEL_LASER {
            match self.current {
                Some((laser, _)) if self.in_window(laser, tag.timestamp_ps) => {
                    self.mark(tag.channel);
                }
                Some((laser, _)) if tag.timestamp_ps < laser => {
                    // late pre-trigger tag of an already closed pulse
                    self.n_outside += 1;
                }
                _ => {
                    self.pending.push_back(tag);
                    self.max_pending = self.max_pending.max(self.pending.len());
                }
            }
        }
        Ok(())
    }

    pub fn finish(mut self) -> CorrelationReport {
        self.close_current();
        self.n_outside += self.pending.len() as u64;

        let side_peaks_used = 2 * self.side_half;
        // every closed pulse contributes up to 2·side_half offset slots;
        // early pulses see fewer, a negligible edge effect for long runs
        let accidental_per_peak = self.side_total as f64 / side_peaks_used as f64;

        let g2_cross = if self.side_total > 0 && self.n_1h > 0 {
            let value = self.n_1h as f64 / accidental_per_peak;
            let rel =
                (1.0 / self.n_1h as f64 + 1.0 / self.side_total as f64).sqrt();
            Some(Estimate::new(value, value * rel))
        } else {
            None
        };
        let car = g2_cross.map(|g| Estimate::new(g.value - 1.0, g.sigma));
        let mean_n_estimate = g2_cross.and_then(|g| {
            if g.value > 1.0 {
                let value = 1.0 / g.value;
                Some(Estimate::new(value, g.sigma / (g.value * g.value)))
            } else {
                None
            }
        });

        let g2_auto = if self.n_pulses > 0 && self.n_12 > 0 && self.n_1 + self.n_2 > 0 {
            let p = self.n_pulses as f64;
            let p1 = (self.n_1 + self.n_2) as f64 / (2.0 * p);
            let p2 = self.n_12 as f64 / p;
            let value = p2 / (p1 * p1);
            let rel = (1.0 / self.n_12 as f64 + 4.0 / (self.n_1 + self.n_2) as f64).sqrt();
            Some(Estimate::new(value, value * rel))
        } else {
            None
        };
        let schmidt_k_estimate = g2_auto.and_then(|g| {
            if g.value > 1.0 {
                let k = 1.0 / (g.value - 1.0);
                Some(Estimate::new(k, g.sigma / ((g.value - 1.0) * (g.value - 1.0))))
            } else {
                None
            }
        });

        let g2_heralded = if self.n_h > 0 && self.n_1h > 0 && self.n_2h > 0 {
            let scale = self.n_h as f64 / (self.n_1h as f64 * self.n_2h as f64);
            let value = self.n_12h as f64 * scale;
            let sigma = if self.n_12h > 0 {
                let rel = (1.0 / self.n_12h as f64
                    + 1.0 / self.n_h as f64
                    + 1.0 / self.n_1h as f64
                    + 1.0 / self.n_2h as f64)
                    .sqrt();
                value * rel
            } else {
                // one-sided 68% upper bound stands in for σ at zero counts
                1.14 * scale
            };
            Some(Estimate::new(value, sigma))
        } else {
            None
        };
        let g2_heralded_ci95 = match (&g2_heralded, self.n_12h < 30) {
            (Some(_), true) => {
                let scale = self.n_h as f64 / (self.n_1h as f64 * self.n_2h as f64);
                let (lo, hi) = poisson_interval_95(self.n_12h);
                Some((lo * scale, hi * scale))
            }
            _ => None,
        };

        CorrelationReport {
            n_pulses: self.n_pulses,
            window_ns: self.options.window_ns,
            n_h: self.n_h,
            n_1: self.n_1,
            n_2: self.n_2,
            n_1h: self.n_1h,
            n_2h: self.n_2h,
            n_12: self.n_12,
            n_12h: self.n_12h,
            n_outside_windows: self.n_outside,
            accidental_per_peak,
            side_peaks_used,
            car,
            g2_cross,
            g2_auto,
            g2_heralded,
            g2_heralded_ci95,
            mean_n_estimate,
            schmidt_k_estimate,
        }
    }
}

/// Exact Poisson 95% interval for a count `k` (Garwood construction; the
/// zero-count case is the one-sided upper limit).
pub fn poisson_interval_95(k: u64) -> (f64, f64) {
    if k == 0 {
        return (0.0, -(0.05f64.ln()));
    }
    let lo = ChiSquared::new(2.0 * k as f64).unwrap().inverse_cdf(0.025) / 2.0;
    let hi = ChiSquared::new(2.0 * (k + 1) as f64)
        .unwrap()
        .inverse_cdf(0.975)
        / 2.0;
    (lo, hi)
}

/// Run the full coincidence pass over sorted tags.
pub fn analyze(
    tags: impl IntoIterator<Item = TimeTag>,
    options: &AnalysisOptions,
) -> Result<CorrelationReport, AnalysisError> {
    let mut acc = CoincidenceAccumulator::new(*options)?;
    for tag in tags {
        acc.push(tag)?;
    }
    Ok(acc.finish())
}

/// Zero-delay cross-correlation normalized by accidental side peaks.
pub fn g2_cross_estimate(
    tags: impl IntoIterator<Item = TimeTag>,
    window_ns: f64,
) -> Result<Estimate, AnalysisError> {
    let options = AnalysisOptions::with_window_ns(window_ns);
    let report = analyze(tags, &options)?;
    if report.n_pulses == 0 {
        return Err(AnalysisError::NoLaserChannel);
    }
    if report.n_pulses <= report.side_peaks_used as u64 / 2 {
        return Err(AnalysisError::InsufficientSidePeaks {
            needed: report.side_peaks_used,
            available: report.n_pulses.saturating_sub(1) as u32 * 2,
        });
    }
    report.g2_cross.ok_or(AnalysisError::InsufficientSidePeaks {
        needed: options.side_peaks,
        available: 0,
    })
}

/// Unheralded autocorrelation `p₂/p₁²` from the two output ports.
pub fn g2_auto_estimate(
    tags: impl IntoIterator<Item = TimeTag>,
    window_ns: f64,
) -> Result<Estimate, AnalysisError> {
    let report = analyze(tags, &AnalysisOptions::with_window_ns(window_ns))?;
    if report.n_pulses == 0 {
        return Err(AnalysisError::NoLaserChannel);
    }
    report.g2_auto.ok_or(AnalysisError::NoLaserChannel)
}

/// Grangier heralded autocorrelation `N_12H N_H / (N_1H N_2H)`.
pub fn g2_heralded_estimate(
    tags: impl IntoIterator<Item = TimeTag>,
    window_ns: f64,
) -> Result<Estimate, AnalysisError> {
    let report = analyze(tags, &AnalysisOptions::with_window_ns(window_ns))?;
    if report.n_h == 0 {
        return Err(AnalysisError::NoHeraldChannel);
    }
    report.g2_heralded.ok_or(AnalysisError::NoHeraldChannel)
}

/// Grangier ratio straight from recorded counts.
pub fn g2_heralded_from_counts(n_h: u64, n_1h: u64, n_2h: u64, n_12h: u64) -> f64 {
    n_12h as f64 * n_h as f64 / (n_1h as f64 * n_2h as f64)
}

/// The paper's shortcut `⟨n⟩ ≃ 1/g²_{s,i}(0)`, valid for CAR ≫ 1.
pub fn mean_photon_from_car(g2_cross: f64) -> Result<f64, AnalysisError> {
    if g2_cross <= 1.0 {
        return Err(AnalysisError::SubPoissonianInput(g2_cross));
    }
    Ok(1.0 / g2_cross)
}

/// Exact inverse of `g² = 1 + 1/⟨n⟩`.
pub fn mean_photon_from_car_exact(g2_cross: f64) -> Result<f64, AnalysisError> {
    if g2_cross <= 1.0 {
        return Err(AnalysisError::SubPoissonianInput(g2_cross));
    }
    Ok(1.0 / (g2_cross - 1.0))
}

/// Schmidt number from the unheralded autocorrelation, `K = 1/(g² − 1)`.
pub fn schmidt_from_g2_auto(g2_auto: f64) -> Result<f64, AnalysisError> {
    if !(g2_auto > 1.0 && g2_auto <= 2.0) {
        return Err(AnalysisError::OutOfRange(g2_auto));
    }
    Ok(1.0 / (g2_auto - 1.0))
}

/// Start-stop delay histogram between two channels over ±span.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayHistogram {
    pub bin_ps: u64,
    pub span_ps: u64,
    pub counts: Vec<u64>,
}

impl DelayHistogram {
    /// Center delay of bin `i`, ps.
    pub fn delay_at(&self, index: usize) -> i64 {
        -(self.span_ps as i64) + index as i64 * self.bin_ps as i64 + self.bin_ps as i64 / 2
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, &count) in self.counts.iter().enumerate() {
            out.push_str(&format!("{} {count}\n", self.delay_at(i)));
        }
        out
    }
}

/// Histogram of `t_b − t_a` over all tag pairs within ±`span_ns`, built in
/// one pass with a bounded buffer. Self-pairs (a tag against itself) never
/// count; for `ch_a == ch_b` each unordered pair contributes at both signs.
pub fn histogram_delays(
    tags: impl IntoIterator<Item = TimeTag>,
    ch_a: u16,
    ch_b: u16,
    bin_ps: u64,
    span_ns: f64,
) -> Result<DelayHistogram, AnalysisError> {
    if !(span_ns > 0.0) || bin_ps == 0 {
        return Err(AnalysisError::NonpositiveWindow);
    }
    let span_ps = (span_ns * 1e3).round() as u64;
    let n_bins = (2 * span_ps).div_ceil(bin_ps) as usize;
    let mut counts = vec![0u64; n_bins];
    let mut buffer: VecDeque<TimeTag> = VecDeque::new();
    let mut last = 0u64;
    let record = |dt: i64, counts: &mut Vec<u64>| {
        if dt >= -(span_ps as i64) && dt < span_ps as i64 {
            let idx = ((dt + span_ps as i64) / bin_ps as i64) as usize;
            counts[idx.min(n_bins - 1)] += 1;
        }
    };
    for tag in tags {
        if tag.timestamp_ps < last {
            return Err(AnalysisError::UnsortedStream {
                previous: last,
                current: tag.timestamp_ps,
            });
        }
        last = tag.timestamp_ps;
        if tag.channel != ch_a && tag.channel != ch_b {
            continue;
        }
        while let Some(front) = buffer.front() {
            if tag.timestamp_ps - front.timestamp_ps > span_ps {
                buffer.pop_front();
            } else {
                break;
            }
        }
        for old in &buffer {
            let dt = tag.timestamp_ps as i64 - old.timestamp_ps as i64;
            if old.channel == ch_a && tag.channel == ch_b {
                record(dt, &mut counts);
            }
            if old.channel == ch_b && tag.channel == ch_a {
                record(-dt, &mut counts);
            }
        }
        buffer.push_back(tag);
    }
    Ok(DelayHistogram {
        bin_ps,
        span_ps,
        counts,
    })
}

/// Per-window dark-count probabilities on channels (H, 1, 2).
pub type DarkProbs = [f64; 3];

/// Subtract the expected dark-count accidentals from every count class
/// (first order in the dark probabilities) and recompute the estimators.
/// Corrected counts never go below zero; uncertainties grow by the
/// subtracted amounts.
pub fn background_correction(report: &CorrelationReport, dark: DarkProbs) -> CorrelationReport {
    let p = report.n_pulses as f64;
    let [d0, d1, d2] = dark;
    let sub = |obs: u64, amount: f64| (obs as f64 - amount).max(0.0);

    let h = sub(report.n_h, p * d0);
    let c1 = sub(report.n_1, p * d1);
    let c2 = sub(report.n_2, p * d2);
    let acc_1h = h * d1 + c1 * d0 + p * d0 * d1;
    let acc_2h = h * d2 + c2 * d0 + p * d0 * d2;
    let acc_12 = c1 * d2 + c2 * d1 + p * d1 * d2;
    let n_1h = sub(report.n_1h, acc_1h);
    let n_2h = sub(report.n_2h, acc_2h);
    let n_12 = sub(report.n_12, acc_12);
    let acc_12h = n_1h * d2 + n_2h * d1 + n_12 * d0
        + h * d1 * d2
        + c1 * d0 * d2
        + c2 * d0 * d1
        + p * d0 * d1 * d2;
    let n_12h = sub(report.n_12h, acc_12h);

    // inflate variances by what was subtracted
    let var = |obs: u64, corrected: f64| (obs as f64 - corrected).max(0.0) + obs as f64;

    let accidental_dark = h * d1 + c1 * d0 + p * d0 * d1;
    let acc_peak = (report.accidental_per_peak - accidental_dark).max(0.0);
    let zero_delay = n_1h;
    let g2_cross = if acc_peak > 0.0 && zero_delay > 0.0 {
        let value = zero_delay / acc_peak;
        let side_total = acc_peak * report.side_peaks_used as f64;
        let rel = (var(report.n_1h, zero_delay) / (zero_delay * zero_delay)
            + 1.0 / side_total)
            .sqrt();
        Some(Estimate::new(value, value * rel))
    } else {
        None
    };
    let car = g2_cross.map(|g| Estimate::new(g.value - 1.0, g.sigma));
    let mean_n_estimate = g2_cross.and_then(|g| {
        (g.value > 1.0).then(|| Estimate::new(1.0 / g.value, g.sigma / (g.value * g.value)))
    });

    let g2_auto = if p > 0.0 && n_12 > 0.0 && c1 + c2 > 0.0 {
        let p1 = (c1 + c2) / (2.0 * p);
        let value = (n_12 / p) / (p1 * p1);
        let rel = (var(report.n_12, n_12) / (n_12 * n_12)
            + 4.0 * (var(report.n_1, c1) + var(report.n_2, c2)) / ((c1 + c2) * (c1 + c2)))
            .sqrt();
        Some(Estimate::new(value, value * rel))
    } else {
        None
    };
    let schmidt_k_estimate = g2_auto.and_then(|g| {
        (g.value > 1.0)
            .then(|| Estimate::new(1.0 / (g.value - 1.0), g.sigma / ((g.value - 1.0) * (g.value - 1.0))))
    });

    let g2_heralded = if h > 0.0 && n_1h > 0.0 && n_2h > 0.0 {
        let scale = h / (n_1h * n_2h);
        let value = n_12h * scale;
        let sigma = if n_12h > 0.0 {
            let rel = (var(report.n_12h, n_12h) / (n_12h * n_12h)
                + 1.0 / h
                + var(report.n_1h, n_1h) / (n_1h * n_1h)
                + var(report.n_2h, n_2h) / (n_2h * n_2h))
                .sqrt();
            value * rel
        } else {
            1.14 * scale
        };
        Some(Estimate::new(value, sigma))
    } else {
        None
    };

    CorrelationReport {
        n_h: h.round() as u64,
        n_1: c1.round() as u64,
        n_2: c2.round() as u64,
        n_1h: n_1h.round() as u64,
        n_2h: n_2h.round() as u64,
        n_12: n_12.round() as u64,
        n_12h: n_12h.round() as u64,
        accidental_per_peak: acc_peak,
        car,
        g2_cross,
        g2_auto,
        g2_heralded,
        g2_heralded_ci95: report.g2_heralded_ci95,
        mean_n_estimate,
        schmidt_k_estimate,
        ..report.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn laser(t: u64, pulse: u32) -> TimeTag {
        TimeTag {
            timestamp_ps: t,
            channel: CHANNEL_LASER,
            flags: 0,
            pulse_index: pulse,
        }
    }

    fn click(t: u64, channel: u16, pulse: u32) -> TimeTag {
        TimeTag {
            timestamp_ps: t,
            channel,
            flags: 0,
            pulse_index: pulse,
        }
    }

    /// Deterministic toy stream: `pattern[p] = (h, c1, c2)` per pulse.
    fn stream_from_pattern(pattern: &[(bool, bool, bool)]) -> Vec<TimeTag> {
        let period = 10_000u64;
        let mut tags = Vec::new();
        for (p, &(h, c1, c2)) in pattern.iter().enumerate() {
            let t = (p as u64 + 1) * period;
            for (on, ch) in [(h, 0u16), (c1, 1), (c2, 2)] {
                if on {
                    tags.push(click(t + 100 + ch as u64, ch, p as u32));
                }
            }
            tags.push(laser(t, p as u32));
        }
        tags.sort_by_key(TimeTag::sort_key);
        tags
    }

    #[test]
    fn counts_follow_the_pattern() {
        let pattern = [
            (true, true, false),
            (false, false, false),
            (true, true, true),
            (false, true, true),
            (true, false, false),
        ];
        let report = analyze(stream_from_pattern(&pattern), &AnalysisOptions::default()).unwrap();
        assert_eq!(report.n_pulses, 5);
        assert_eq!(report.n_h, 3);
        assert_eq!(report.n_1, 3);
        assert_eq!(report.n_2, 2);
        assert_eq!(report.n_1h, 2);
        assert_eq!(report.n_2h, 1);
        assert_eq!(report.n_12, 2);
        assert_eq!(report.n_12h, 1);
        assert_eq!(report.n_outside_windows, 0);
    }

    #[test]
    fn grangier_ratio_from_paper_counts() {
        let g2 = g2_heralded_from_counts(17_128_410, 49_729, 88_262, 25);
        let expected = 25.0 * 17_128_410.0 / (49_729.0 * 88_262.0);
        assert_relative_eq!(g2, expected, epsilon = 1e-15);
        assert!((g2 - 0.0976).abs() < 5e-5, "g2 = {g2}");
        assert!((g2 - 0.10).abs() <= 0.02);
    }

    #[test]
    fn zero_triples_reports_zero_with_upper_bound() {
        let pattern: Vec<(bool, bool, bool)> = (0..200)
            .map(|i| (true, i % 2 == 0, i % 2 == 1))
            .collect();
        let report = analyze(stream_from_pattern(&pattern), &AnalysisOptions::default()).unwrap();
        assert_eq!(report.n_12h, 0);
        let g2 = report.g2_heralded.unwrap();
        assert_eq!(g2.value, 0.0);
        assert!(g2.sigma > 0.0);
        let (lo, hi) = report.g2_heralded_ci95.unwrap();
        assert_eq!(lo, 0.0);
        let scale = report.n_h as f64 / (report.n_1h as f64 * report.n_2h as f64);
        assert_relative_eq!(hi, 2.995_732_273_553_991 * scale, epsilon = 1e-9);
    }

    #[test]
    fn poisson_interval_matches_tabulated_values() {
        let (lo, hi) = poisson_interval_95(25);
        assert!((lo - 16.179).abs() < 5e-3, "lo = {lo}");
        assert!((hi - 36.905).abs() < 5e-3, "hi = {hi}");
        let (lo0, hi0) = poisson_interval_95(0);
        assert_eq!(lo0, 0.0);
        assert!((hi0 - 2.9957).abs() < 1e-4);
    }

    #[test]
    fn estimators_invariant_under_translation_and_resort() {
        let pattern: Vec<(bool, bool, bool)> = (0..500)
            .map(|i| (i % 3 == 0, i % 5 != 4, i % 7 == 2))
            .collect();
        let tags = stream_from_pattern(&pattern);
        let base = analyze(tags.clone(), &AnalysisOptions::default()).unwrap();
        let shifted: Vec<TimeTag> = tags
            .iter()
            .map(|t| TimeTag {
                timestamp_ps: t.timestamp_ps + 123_456_789,
                ..*t
            })
            .collect();
        let report = analyze(shifted, &AnalysisOptions::default()).unwrap();
        assert_eq!(report.n_1h, base.n_1h);
        assert_eq!(report.g2_auto, base.g2_auto);
        assert_eq!(report.g2_cross, base.g2_cross);
        let mut resorted = tags.clone();
        resorted.sort_by_key(TimeTag::sort_key);
        assert_eq!(
            analyze(resorted, &AnalysisOptions::default()).unwrap(),
            base
        );
    }

    #[test]
    fn unsorted_stream_is_rejected() {
        let tags = vec![laser(1000, 0), laser(500, 1)];
        assert!(matches!(
            analyze(tags, &AnalysisOptions::default()),
            Err(AnalysisError::UnsortedStream { .. })
        ));
    }

    #[test]
    fn missing_channels_error_cleanly() {
        let tags = vec![click(100, 0, 0), click(200, 1, 0)];
        assert!(matches!(
            g2_auto_estimate(tags.clone(), 2.5),
            Err(AnalysisError::NoLaserChannel)
        ));
        let lasers: Vec<TimeTag> = (0..100).map(|i| laser((i + 1) * 10_000, i as u32)).collect();
        assert!(matches!(
            g2_heralded_estimate(lasers.clone(), 2.5),
            Err(AnalysisError::NoHeraldChannel)
        ));
        let few = stream_from_pattern(&[(true, true, false); 4]);
        assert!(matches!(
            g2_cross_estimate(few, 2.5),
            Err(AnalysisError::InsufficientSidePeaks { .. })
        ));
    }

    #[test]
    fn pre_trigger_tags_are_assigned_to_their_pulse() {
        let period = 10_000u64;
        // herald arrives 300 ps before its laser trigger
        let tags = vec![
            click(period - 300, 0, 0),
            laser(period, 0),
            click(period + 200, 1, 0),
            laser(2 * period, 1),
        ];
        let report = analyze(tags, &AnalysisOptions::default()).unwrap();
        assert_eq!(report.n_pulses, 2);
        assert_eq!(report.n_h, 1);
        assert_eq!(report.n_1h, 1);
        assert_eq!(report.n_outside_windows, 0);
    }

    #[test]
    fn out_of_window_tags_are_counted_not_assigned() {
        let period = 10_000u64;
        let tags = vec![
            laser(period, 0),
            click(period + 5_000, 1, 0), // 5 ns after trigger, window 2.5 ns
            laser(2 * period, 1),
        ];
        let report = analyze(tags, &AnalysisOptions::default()).unwrap();
        assert_eq!(report.n_1, 0);
        assert_eq!(report.n_outside_windows, 1);
    }

    #[test]
    fn window_edges_are_half_open() {
        let period = 10_000u64;
        let w = 2_500u64;
        let tags = vec![
            click(period - w / 2, 0, 0),     // exactly at the lower edge: in
            laser(period, 0),
            click(period + w - w / 2, 1, 0), // exactly at the upper edge: out
            laser(2 * period, 1),
        ];
        let report = analyze(tags, &AnalysisOptions::default()).unwrap();
        assert_eq!(report.n_h, 1);
        assert_eq!(report.n_1, 0);
        assert_eq!(report.n_outside_windows, 1);
    }

    #[test]
    fn perfectly_correlated_pulses_give_huge_g2_cross() {
        // herald and port 1 click together every 50th pulse
        let pattern: Vec<(bool, bool, bool)> =
            (0..5_000).map(|i| (i % 50 == 0, i % 50 == 0, false)).collect();
        let report = analyze(stream_from_pattern(&pattern), &AnalysisOptions::default()).unwrap();
        let g2 = report.g2_cross.unwrap();
        // accidentals per peak: clicks are deterministic with rate 1/50,
        // side peaks at offsets ±1..±5 never coincide except offset 50
        assert!(g2.value > 10.0, "g2 = {}", g2.value);
    }

    #[test]
    fn histogram_finds_pulse_structure() {
        let pattern: Vec<(bool, bool, bool)> = (0..400).map(|_| (true, true, false)).collect();
        let tags = stream_from_pattern(&pattern);
        let hist = histogram_delays(tags, 0, 1, 100, 25.0).unwrap();
        // peaks at dt = +1 bin offset (clicks sit 1 ps apart, same pulse)
        // and at multiples of the 10 ns period
        let total: u64 = hist.counts.iter().sum();
        assert!(total > 0);
        let peak_bins: Vec<usize> = hist
            .counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 300)
            .map(|(i, _)| i)
            .collect();
        let expected_delays: Vec<i64> = (-2..=2).map(|k| k * 10_000).collect();
        for bin in &peak_bins {
            let delay = hist.delay_at(*bin);
            assert!(
                expected_delays.iter().any(|&d| (delay - d).abs() <= 200),
                "unexpected peak at {delay} ps"
            );
        }
        assert!(peak_bins.len() >= 5);
    }

    #[test]
    fn histogram_excludes_self_pairs() {
        let tags = vec![click(1_000, 1, 0), click(1_500, 1, 0)];
        let hist = histogram_delays(tags, 1, 1, 100, 2.0).unwrap();
        let zero_bin = (hist.span_ps / hist.bin_ps) as usize;
        assert_eq!(hist.counts[zero_bin], 0);
        let total: u64 = hist.counts.iter().sum();
        assert_eq!(total, 2); // one pair, both signs
    }

    #[test]
    fn background_correction_identity_at_zero_darks() {
        let pattern: Vec<(bool, bool, bool)> = (0..1_000)
            .map(|i| (i % 4 == 0, i % 3 == 0, i % 5 == 0))
            .collect();
        let report = analyze(stream_from_pattern(&pattern), &AnalysisOptions::default()).unwrap();
        let corrected = background_correction(&report, [0.0; 3]);
        assert_eq!(corrected.n_1h, report.n_1h);
        assert_eq!(corrected.g2_heralded, report.g2_heralded);
        assert_eq!(corrected.g2_cross, report.g2_cross);
    }

    #[test]
    fn background_correction_removes_dark_floor() {
        // pure darks: every count class is accidental and must correct to ~0
        let p = 200_000u64;
        let d = [0.01, 0.02, 0.015];
        let mut pattern = Vec::with_capacity(p as usize);
        let mut state = 0x12345u64;
        let mut chance = |prob: f64| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 * 0.5 < prob / 2.0
        };
        for _ in 0..p {
            pattern.push((chance(d[0]), chance(d[1]), chance(d[2])));
        }
        let report = analyze(stream_from_pattern(&pattern), &AnalysisOptions::default()).unwrap();
        let corrected = background_correction(&report, d);
        for (name, obs, corr) in [
            ("n_1h", report.n_1h, corrected.n_1h),
            ("n_2h", report.n_2h, corrected.n_2h),
            ("n_12", report.n_12, corrected.n_12),
        ] {
            let sigma = (obs as f64).sqrt().max(1.0);
            assert!(
                (corr as f64) < 3.0 * sigma,
                "{name}: corrected {corr} not consistent with 0 (obs {obs})"
            );
        }
        assert_eq!(corrected.n_12h, 0);
    }

    #[test]
    fn conversion_helpers() {
        assert_relative_eq!(mean_photon_from_car(44.0).unwrap(), 1.0 / 44.0);
        assert!((mean_photon_from_car(44.0).unwrap() - 0.0227).abs() < 1e-4);
        assert_relative_eq!(mean_photon_from_car(2.0).unwrap(), 0.5);
        assert_relative_eq!(mean_photon_from_car_exact(2.0).unwrap(), 1.0);
        assert_relative_eq!(
            mean_photon_from_car(101.0).unwrap(),
            0.009_900_990_099_009_9,
            epsilon = 1e-15
        );
        assert!(mean_photon_from_car(0.9).is_err());
        assert_relative_eq!(schmidt_from_g2_auto(1.714).unwrap(), 1.0 / 0.714, epsilon = 1e-12);
        assert!((schmidt_from_g2_auto(1.714).unwrap() - 1.4).abs() < 0.01);
        assert_relative_eq!(schmidt_from_g2_auto(2.0).unwrap(), 1.0);
        assert_relative_eq!(schmidt_from_g2_auto(1.5).unwrap(), 2.0);
        assert!(schmidt_from_g2_auto(1.0).is_err());
        assert!(schmidt_from_g2_auto(2.3).is_err());
    }

    #[test]
    fn memory_stays_bounded() {
        let pattern: Vec<(bool, bool, bool)> = (0..50_000).map(|_| (true, true, true)).collect();
        let tags = stream_from_pattern(&pattern);
        let mut acc = CoincidenceAccumulator::new(AnalysisOptions::default()).unwrap();
        for tag in tags {
            acc.push(tag).unwrap();
        }
        assert!(acc.max_buffered() < 64, "buffered {}", acc.max_buffered());
        let report = acc.finish();
        assert_eq!(report.n_pulses, 50_000);
    }
}
