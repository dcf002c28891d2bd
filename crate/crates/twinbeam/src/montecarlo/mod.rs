//! Per-pulse stochastic simulation of the full experiment: pair generation
//! in each Schmidt mode, heralding-arm loss, splitter routing, detection
//! with dark counts, jitter and gating, emitting a sorted, reproducible
//! time-tag stream.
//!
//! Pair numbers per mode follow the Bose-Einstein distribution
//! `P(n) = μⁿ/(1+μ)^{n+1}` of the squeezed-vacuum marginal — no photon
//! number truncation, so the truncated closed forms of
//! [`crate::squeezed_state`] can be validated against the simulation
//! rather than baked into it. Detectors are non-number-resolving: a
//! channel clicks at most once per pulse, at the earliest candidate time.
//!
//! Reproducibility contract: for a fixed configuration (including the
//! seed) the emitted stream is byte-identical regardless of worker count,
//! because every pulse draws from its own counter-based RNG
//! ([`rng::PulseRng`]) and the serializer orders tags by a total sort key.

pub mod rng;

use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::jsa::{GridKind, JsaGrid};
use crate::spectrograph::SpectrographCalibration;
use crate::squeezed_state::{SqueezedError, SqueezedSourceModel};
use crate::tagstream::{
    StreamError, TagStreamHeader, TagStreamWriter, TimeTag, CHANNEL_LASER, FLAG_DARK_COUNT,
};
use rng::PulseRng;

/// RNG stream labels: photon physics, dark counts and spectral sampling
/// are independent, so switching one off never disturbs the others.
const STREAM_SOURCE: u64 = 0;
const STREAM_DARK: u64 = 1;
const STREAM_SPECTRAL: u64 = 2;

/// Safety cap on pairs per mode per pulse; at sane pump levels
/// (μ ≲ 1) the probability of reaching it is below 1e-18.
const MAX_PAIRS_PER_MODE: u64 = 64;

const PULSES_PER_BLOCK: u64 = 1 << 16;
const PULSES_PER_TASK: u64 = 1 << 12;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{field} = {value} outside [0, 1]")]
    ProbabilityOutOfRange { field: &'static str, value: f64 },
    #[error("{field} = {value} must be positive")]
    NonpositiveField { field: &'static str, value: f64 },
    #[error("{field} = {value} must be non-negative")]
    NegativeField { field: &'static str, value: f64 },
    #[error("coincidence window {window_ps} ps exceeds the pulse period {period_ps} ps")]
    WindowExceedsPeriod { window_ps: u64, period_ps: u64 },
    #[error("calibration given but the source model is vacuum; no mode shape to scale")]
    VacuumNeedsShape,
    #[error("n_pulses = {0} exceeds the 32-bit pulse index space")]
    TooManyPulses(u64),
    #[error("spectral delays reach {reach_ps:.0} ps, beyond half the pulse period {half_period_ps} ps")]
    DelayExceedsHalfPeriod { reach_ps: f64, half_period_ps: u64 },
    #[error("spectral sampling requires a normalized intensity grid")]
    UnnormalizedGrid,
    #[error(transparent)]
    Squeezed(#[from] SqueezedError),
}

#[derive(Debug, Error)]
pub enum SimulateError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error("failed to build thread pool: {0}")]
    Pool(String),
}

/// One physical detector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorModel {
    /// Quantum efficiency of the detector itself; multiplies the path
    /// efficiency of its arm.
    pub efficiency: f64,
    /// Probability of a dark count within one acceptance window.
    pub dark_count_prob_per_window: f64,
    pub jitter_fwhm_ps: f64,
    /// Gated detectors register nothing outside the acceptance window.
    pub gated: bool,
    pub dead_time_ns: f64,
}

impl Default for DetectorModel {
    fn default() -> Self {
        Self {
            efficiency: 1.0,
            dark_count_prob_per_window: 0.0,
            jitter_fwhm_ps: 0.0,
            gated: true,
            dead_time_ns: 0.0,
        }
    }
}

impl DetectorModel {
    /// Telecom APD with 250 ps timing resolution.
    pub fn telecom_apd() -> Self {
        Self {
            jitter_fwhm_ps: 250.0,
            ..Self::default()
        }
    }

    /// Dark-count probability per window from a free-running rate.
    pub fn dark_prob_from_rate_hz(rate_hz: f64, window_ns: f64) -> f64 {
        1.0 - (-rate_hz * window_ns * 1e-9).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DetectorBank {
    pub herald: DetectorModel,
    pub port1: DetectorModel,
    pub port2: DetectorModel,
}

impl DetectorBank {
    pub fn channel(&self, ch: u16) -> &DetectorModel {
        match ch {
            0 => &self.herald,
            1 => &self.port1,
            _ => &self.port2,
        }
    }
}

/// Everything the simulator needs for one run.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    /// Mode structure at the calibration point.
    pub source: SqueezedSourceModel,
    pub pump_power_mw: f64,
    /// Mean pairs per pulse per mW. When set, the source is rescaled so
    /// its total mean is `calibration × pump_power`; when absent the
    /// source is used as-is and the power is metadata.
    pub calibration_pairs_per_mw: Option<f64>,
    pub rep_rate_mhz: f64,
    /// Fraction of the signal routed to output port 1.
    pub splitter_ratio: f64,
    /// Idler collection × coupling on the herald arm (the herald detector
    /// efficiency multiplies on top).
    pub herald_efficiency: f64,
    /// Signal collection × coupling per output arm.
    pub signal_efficiency: f64,
    pub detectors: DetectorBank,
    pub coincidence_window_ns: f64,
    pub n_pulses: u64,
    pub rng_seed: u64,
    /// When set, every generated pair is assigned wavelengths drawn from
    /// the grid and the detection delays follow the spectrograph mapping.
    pub spectral: Option<SpectralMode>,
}

/// Spectral ground-truth extension: pairs sample (λ_s, λ_i) from a joint
/// spectral intensity, and clicks arrive dispersed according to the
/// time-of-flight calibrations.
#[derive(Debug, Clone)]
pub struct SpectralMode {
    pub jsi: JsaGrid,
    pub cal_signal: SpectrographCalibration,
    pub cal_idler: SpectrographCalibration,
}

impl ExperimentConfig {
    /// A minimal, dark-free, jitter-free configuration; tests and examples
    /// override the fields they care about.
    pub fn new(source: SqueezedSourceModel) -> Self {
        Self {
            source,
            pump_power_mw: 60.0,
            calibration_pairs_per_mw: None,
            rep_rate_mhz: 3.8,
            splitter_ratio: 0.5,
            herald_efficiency: 1.0,
            signal_efficiency: 1.0,
            detectors: DetectorBank::default(),
            coincidence_window_ns: 2.5,
            n_pulses: 0,
            rng_seed: 1,
            spectral: None,
        }
    }

    pub fn rep_period_ps(&self) -> u64 {
        (1e6 / self.rep_rate_mhz).round() as u64
    }

    pub fn window_ps(&self) -> u64 {
        (self.coincidence_window_ns * 1e3).round() as u64
    }

    /// The source actually pumped at `pump_power_mw`.
    pub fn effective_source(&self) -> Result<SqueezedSourceModel, ConfigError> {
        match self.calibration_pairs_per_mw {
            None => Ok(self.source.clone()),
            Some(cal) => {
                let target = cal * self.pump_power_mw;
                if target == 0.0 {
                    return Ok(self.source.scaled(0.0));
                }
                let base = self.source.mean_photon_number();
                if base == 0.0 {
                    return Err(ConfigError::VacuumNeedsShape);
                }
                Ok(self.source.scaled(target / base))
            }
        }
    }

    /// Per-photon probability that an idler produces a herald click.
    pub fn herald_click_prob(&self) -> f64 {
        self.herald_efficiency * self.detectors.herald.efficiency
    }

    /// Per-photon probability that a signal produces a click on the given
    /// output port (routing fraction included).
    pub fn signal_click_prob(&self, port: u16) -> f64 {
        match port {
            1 => self.splitter_ratio * self.signal_efficiency * self.detectors.port1.efficiency,
            _ => {
                (1.0 - self.splitter_ratio)
                    * self.signal_efficiency
                    * self.detectors.port2.efficiency
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let prob = |field: &'static str, value: f64| {
            if !(0.0..=1.0).contains(&value) {
                Err(ConfigError::ProbabilityOutOfRange { field, value })
            } else {
                Ok(())
            }
        };
        prob("splitter_ratio", self.splitter_ratio)?;
        prob("herald_efficiency", self.herald_efficiency)?;
        prob("signal_efficiency", self.signal_efficiency)?;
        for (name, det) in [
            ("herald", &self.detectors.herald),
            ("port1", &self.detectors.port1),
            ("port2", &self.detectors.port2),
        ] {
            let _ = name;
            prob("detector efficiency", det.efficiency)?;
            prob("dark_count_prob_per_window", det.dark_count_prob_per_window)?;
            if det.jitter_fwhm_ps < 0.0 {
                return Err(ConfigError::NegativeField {
                    field: "jitter_fwhm_ps",
                    value: det.jitter_fwhm_ps,
                });
            }
            if det.dead_time_ns < 0.0 {
                return Err(ConfigError::NegativeField {
                    field: "dead_time_ns",
                    value: det.dead_time_ns,
                });
            }
        }
        if !(self.rep_rate_mhz > 0.0) {
            return Err(ConfigError::NonpositiveField {
                field: "rep_rate_mhz",
                value: self.rep_rate_mhz,
            });
        }
        if !(self.coincidence_window_ns > 0.0) {
            return Err(ConfigError::NonpositiveField {
                field: "coincidence_window_ns",
                value: self.coincidence_window_ns,
            });
        }
        if self.pump_power_mw < 0.0 {
            return Err(ConfigError::NegativeField {
                field: "pump_power_mw",
                value: self.pump_power_mw,
            });
        }
        if let Some(cal) = self.calibration_pairs_per_mw {
            if cal < 0.0 {
                return Err(ConfigError::NegativeField {
                    field: "calibration_pairs_per_mw",
                    value: cal,
                });
            }
        }
        let period = self.rep_period_ps();
        let window = self.window_ps();
        if window > period {
            return Err(ConfigError::WindowExceedsPeriod {
                window_ps: window,
                period_ps: period,
            });
        }
        if self.n_pulses > u32::MAX as u64 {
            return Err(ConfigError::TooManyPulses(self.n_pulses));
        }
        self.effective_source()?;
        if let Some(spectral) = &self.spectral {
            if spectral.jsi.kind() != GridKind::Intensity {
                return Err(ConfigError::UnnormalizedGrid);
            }
            let half_period = period / 2;
            for (cal, axis) in [
                (&spectral.cal_signal, spectral.jsi.signal_axis()),
                (&spectral.cal_idler, spectral.jsi.idler_axis()),
            ] {
                let ends = [axis[0], *axis.last().unwrap()];
                let jitter_slack = 6.0
                    * self
                        .detectors
                        .herald
                        .jitter_fwhm_ps
                        .max(self.detectors.port1.jitter_fwhm_ps)
                        .max(self.detectors.port2.jitter_fwhm_ps);
                for end in ends {
                    let reach = cal.wavelength_to_time(end).abs() + jitter_slack;
                    if reach >= half_period as f64 {
                        return Err(ConfigError::DelayExceedsHalfPeriod {
                            reach_ps: reach,
                            half_period_ps: half_period,
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

/// Probability that at least one of the Bose-Einstein distributed photons
/// of the pulse survives a per-photon thinning `per_photon`:
/// `1 − Π_k 1/(1 + μ_k η)`.
pub fn analytic_click_probability(model: &SqueezedSourceModel, per_photon: f64) -> f64 {
    1.0 - model
        .mode_means()
        .iter()
        .map(|mu| 1.0 / (1.0 + mu * per_photon))
        .product::<f64>()
}

struct ModeDist {
    ln_q: f64,
    p0: f64,
}

struct SpectralSampler {
    jsi: crate::spectrograph::JsiSampler,
    cal_signal: SpectrographCalibration,
    cal_idler: SpectrographCalibration,
}

impl SpectralSampler {
    fn new(mode: &SpectralMode) -> Result<Self, ConfigError> {
        let jsi =
            crate::spectrograph::JsiSampler::new(&mode.jsi).map_err(|_| ConfigError::UnnormalizedGrid)?;
        Ok(Self {
            jsi,
            cal_signal: mode.cal_signal,
            cal_idler: mode.cal_idler,
        })
    }

    /// Draw one pair; returns (signal delay ps, idler delay ps).
    fn sample_delays(&self, rng: &mut PulseRng) -> (f64, f64) {
        let (lambda_s, lambda_i) = self.jsi.sample(rng);
        (
            self.cal_signal.wavelength_to_time(lambda_s),
            self.cal_idler.wavelength_to_time(lambda_i),
        )
    }
}

/// Precomputed per-run sampling tables. Cheap to query once per pulse.
pub struct PulseSampler {
    seed: u64,
    period_ps: u64,
    modes: Vec<ModeDist>,
    herald_p: f64,
    route_r: f64,
    det_p: [f64; 2],
    dark_prob: [f64; 3],
    any_dark: bool,
    jitter_sigma: [f64; 3],
    gated: [bool; 3],
    window_half_ps: f64,
    clamp_ps: f64,
    spectral: Option<SpectralSampler>,
}

use crate::jsa::GAUSSIAN_FWHM_PER_SIGMA as FWHM_PER_SIGMA;

impl PulseSampler {
    pub fn new(config: &ExperimentConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        let source = config.effective_source()?;
        let modes = source
            .mode_means()
            .iter()
            .filter(|&&mu| mu > 0.0)
            .map(|&mu| {
                let q = mu / (1.0 + mu);
                ModeDist {
                    ln_q: q.ln(),
                    p0: 1.0 - q,
                }
            })
            .collect();
        let dets = &config.detectors;
        let dark_prob = [
            dets.herald.dark_count_prob_per_window,
            dets.port1.dark_count_prob_per_window,
            dets.port2.dark_count_prob_per_window,
        ];
        Ok(Self {
            seed: config.rng_seed,
            period_ps: config.rep_period_ps(),
            modes,
            herald_p: config.herald_click_prob(),
            route_r: config.splitter_ratio,
            det_p: [
                config.signal_efficiency * dets.port1.efficiency,
                config.signal_efficiency * dets.port2.efficiency,
            ],
            dark_prob,
            any_dark: dark_prob.iter().any(|&p| p > 0.0),
            jitter_sigma: [
                dets.herald.jitter_fwhm_ps / FWHM_PER_SIGMA,
                dets.port1.jitter_fwhm_ps / FWHM_PER_SIGMA,
                dets.port2.jitter_fwhm_ps / FWHM_PER_SIGMA,
            ],
            gated: [dets.herald.gated, dets.port1.gated, dets.port2.gated],
            window_half_ps: config.window_ps() as f64 / 2.0,
            clamp_ps: (config.rep_period_ps() / 2).saturating_sub(1) as f64,
            spectral: config
                .spectral
                .as_ref()
                .map(SpectralSampler::new)
                .transpose()?,
        })
    }

    pub fn period_ps(&self) -> u64 {
        self.period_ps
    }

    /// Generate all tags of one pulse, appending to `out`. The laser
    /// trigger (channel 3) is always emitted.
    pub fn sample_into(&self, pulse_index: u64, out: &mut Vec<TimeTag>) {
        let t_pulse = (pulse_index + 1) * self.period_ps;
        // candidate click per detector channel: (time offset ps, is_dark)
        let mut candidate: [Option<(f64, bool)>; 3] = [None; 3];

        let mut rng = PulseRng::new(self.seed, pulse_index, STREAM_SOURCE);
        let mut spectral_rng = self
            .spectral
            .as_ref()
            .map(|_| PulseRng::new(self.seed, pulse_index, STREAM_SPECTRAL));
        for mode in &self.modes {
            let u = rng.uniform();
            let pairs = if u < mode.p0 {
                0
            } else {
                (((1.0 - u).ln() / mode.ln_q) as u64).min(MAX_PAIRS_PER_MODE)
            };
            for _ in 0..pairs {
                let (signal_delay, idler_delay) = match (&self.spectral, &mut spectral_rng) {
                    (Some(sampler), Some(srng)) => sampler.sample_delays(srng),
                    _ => (0.0, 0.0),
                };
                // idler photon heads to the herald arm
                if rng.uniform() < self.herald_p {
                    let t = idler_delay + rng.standard_normal() * self.jitter_sigma[0];
                    merge_candidate(&mut candidate[0], t, false);
                }
                // signal photon picks exactly one output port
                let port = if rng.uniform() < self.route_r { 0 } else { 1 };
                if rng.uniform() < self.det_p[port] {
                    let t = signal_delay + rng.standard_normal() * self.jitter_sigma[1 + port];
                    merge_candidate(&mut candidate[1 + port], t, false);
                }
            }
        }

        if self.any_dark {
            let mut dark_rng = PulseRng::new(self.seed, pulse_index, STREAM_DARK);
            for ch in 0..3 {
                if self.dark_prob[ch] > 0.0 && dark_rng.uniform() < self.dark_prob[ch] {
                    let t = (dark_rng.uniform() - 0.5) * 2.0 * self.window_half_ps;
                    merge_candidate(&mut candidate[ch], t, true);
                }
            }
        }

        for ch in 0..3u16 {
            if let Some((offset, is_dark)) = candidate[ch as usize] {
                let offset = if self.gated[ch as usize] {
                    // the gate opens only for the acceptance window
                    if offset < -self.window_half_ps || offset >= self.window_half_ps {
                        continue;
                    }
                    offset
                } else {
                    offset.clamp(-self.clamp_ps, self.clamp_ps)
                };
                out.push(TimeTag {
                    timestamp_ps: (t_pulse as i64 + offset.round() as i64) as u64,
                    channel: ch,
                    flags: if is_dark { FLAG_DARK_COUNT } else { 0 },
                    pulse_index: pulse_index as u32,
                });
            }
        }
        out.push(TimeTag {
            timestamp_ps: t_pulse,
            channel: CHANNEL_LASER,
            flags: 0,
            pulse_index: pulse_index as u32,
        });
    }
}

#[inline]
fn merge_candidate(slot: &mut Option<(f64, bool)>, t: f64, is_dark: bool) {
    match slot {
        Some((existing, _)) if *existing <= t => {}
        _ => *slot = Some((t, is_dark)),
    }
}

/// One pulse worth of tags (spec-level convenience around
/// [`PulseSampler::sample_into`]).
pub fn sample_pulse(sampler: &PulseSampler, pulse_index: u64) -> Vec<TimeTag> {
    let mut out = Vec::new();
    sampler.sample_into(pulse_index, &mut out);
    out
}

/// Per-channel dead-time suppression, applied to the globally sorted
/// stream as it is emitted (the laser trigger is electronic and exempt).
struct DeadTimeFilter {
    dead_ps: [u64; 3],
    last: [Option<u64>; 3],
}

impl DeadTimeFilter {
    fn new(config: &ExperimentConfig) -> Self {
        let to_ps = |ns: f64| (ns * 1e3).round() as u64;
        Self {
            dead_ps: [
                to_ps(config.detectors.herald.dead_time_ns),
                to_ps(config.detectors.port1.dead_time_ns),
                to_ps(config.detectors.port2.dead_time_ns),
            ],
            last: [None; 3],
        }
    }

    fn accept(&mut self, tag: &TimeTag) -> bool {
        let ch = tag.channel as usize;
        if ch >= 3 || self.dead_ps[ch] == 0 {
            return true;
        }
        if let Some(last) = self.last[ch] {
            if tag.timestamp_ps - last < self.dead_ps[ch] {
                return false;
            }
        }
        self.last[ch] = Some(tag.timestamp_ps);
        true
    }
}

/// Drive the sampler over all pulses in blocks, delivering globally
/// time-sorted, dead-time-filtered tags to `visit`.
fn drive<E>(
    config: &ExperimentConfig,
    sampler: &PulseSampler,
    mut visit: impl FnMut(&[TimeTag]) -> Result<(), E>,
) -> Result<(), E> {
    let n_pulses = config.n_pulses;
    let mut dead = DeadTimeFilter::new(config);
    let mut carry: Vec<TimeTag> = Vec::new();
    let mut emit_buf: Vec<TimeTag> = Vec::new();
    let mut start = 0u64;
    while start < n_pulses {
        let end = (start + PULSES_PER_BLOCK).min(n_pulses);
        let tasks: Vec<(u64, u64)> = (start..end)
            .step_by(PULSES_PER_TASK as usize)
            .map(|a| (a, (a + PULSES_PER_TASK).min(end)))
            .collect();
        let mut parts: Vec<Vec<TimeTag>> = tasks
            .par_iter()
            .map(|&(a, b)| {
                let mut tags = Vec::with_capacity(((b - a) as usize * 5) / 4);
                for pulse in a..b {
                    sampler.sample_into(pulse, &mut tags);
                }
                tags
            })
            .collect();
        let mut block: Vec<TimeTag> = carry;
        for part in &mut parts {
            block.append(part);
        }
        // stable sort: the data is nearly ordered already (jitter is tiny
        // against the pulse period), which the run-detecting merge exploits
        block.sort_by_key(TimeTag::sort_key);

        // tags of pulse p live within ±period/2 of its pulse time, so
        // everything before the next block's earliest possible tag is safe
        // to emit now
        let is_last = end == n_pulses;
        let cutoff = (end + 1) * sampler.period_ps - sampler.period_ps / 2;
        emit_buf.clear();
        carry = Vec::new();
        for tag in block {
            if is_last || tag.timestamp_ps < cutoff {
                if dead.accept(&tag) {
                    emit_buf.push(tag);
                }
            } else {
                carry.push(tag);
            }
        }
        visit(&emit_buf)?;
        start = end;
    }
    Ok(())
}

fn with_pool<T>(
    threads: Option<usize>,
    f: impl FnOnce() -> T + Send,
) -> Result<T, SimulateError>
where
    T: Send,
{
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| SimulateError::Pool(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

/// Run the full simulation and persist the stream. Deterministic for a
/// fixed config: the same seed produces byte-identical files at any
/// worker count.
pub fn simulate_run(
    config: &ExperimentConfig,
    path: &Path,
    threads: Option<usize>,
) -> Result<TagStreamHeader, SimulateError> {
    let sampler = PulseSampler::new(config)?;
    let record_count = with_pool(threads, || -> Result<u64, SimulateError> {
        let mut writer = TagStreamWriter::create(path, sampler.period_ps)?;
        drive(config, &sampler, |tags| writer.write_all(tags))?;
        Ok(writer.finish()?)
    })??;
    Ok(TagStreamHeader {
        record_count,
        rep_period_ps: sampler.period_ps,
    })
}

/// In-memory simulation for pipelines and tests; same ordering and
/// filtering as [`simulate_run`].
pub fn simulate_collect(config: &ExperimentConfig) -> Result<Vec<TimeTag>, SimulateError> {
    let sampler = PulseSampler::new(config)?;
    let mut all = Vec::new();
    drive(config, &sampler, |tags| -> Result<(), SimulateError> {
        all.extend_from_slice(tags);
        Ok(())
    })?;
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tagstream::{CHANNEL_HERALD, CHANNEL_OUT1, CHANNEL_OUT2};

    fn base_config(mean_n: f64, k: f64, n_pulses: u64) -> ExperimentConfig {
        let source = SqueezedSourceModel::from_mean_and_schmidt(mean_n, k).unwrap();
        let mut config = ExperimentConfig::new(source);
        config.n_pulses = n_pulses;
        config.rng_seed = 0xfeed;
        config
    }

    #[test]
    fn vacuum_source_emits_only_laser_tags() {
        let mut config = ExperimentConfig::new(SqueezedSourceModel::new(vec![]).unwrap());
        config.n_pulses = 1000;
        let tags = simulate_collect(&config).unwrap();
        assert_eq!(tags.len(), 1000);
        assert!(tags.iter().all(|t| t.channel == CHANNEL_LASER));
        let period = config.rep_period_ps();
        assert!(tags
            .iter()
            .enumerate()
            .all(|(i, t)| t.timestamp_ps == (i as u64 + 1) * period));
    }

    #[test]
    fn zero_pulses_gives_empty_stream_with_valid_header() {
        let config = base_config(0.023, 1.4, 0);
        let dir = std::env::temp_dir().join(format!("twinbeam-mc-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("empty-run.ptag");
        let header = simulate_run(&config, &path, None).unwrap();
        assert_eq!(header.record_count, 0);
        let (read_header, tags) = crate::tagstream::read_tagstream(&path).unwrap();
        assert_eq!(read_header, header);
        assert!(tags.is_empty());
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn stream_is_sorted_and_deterministic() {
        let mut config = base_config(0.1, 1.4, 20_000);
        config.detectors.herald.jitter_fwhm_ps = 250.0;
        config.detectors.port1.jitter_fwhm_ps = 250.0;
        config.detectors.port2.jitter_fwhm_ps = 250.0;
        config.detectors.herald.dark_count_prob_per_window = 1e-3;
        let a = simulate_collect(&config).unwrap();
        let b = simulate_collect(&config).unwrap();
        assert_eq!(a, b);
        assert!(a.windows(2).all(|w| w[0].timestamp_ps <= w[1].timestamp_ps));
        let mut other_seed = config.clone();
        other_seed.rng_seed ^= 1;
        assert_ne!(simulate_collect(&other_seed).unwrap(), a);
    }

    #[test]
    fn worker_count_does_not_change_the_stream() {
        let mut config = base_config(0.05, 2.0, 30_000);
        config.detectors.port1.jitter_fwhm_ps = 250.0;
        let dir = std::env::temp_dir().join(format!("twinbeam-workers-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let mut bytes = Vec::new();
        for workers in [1usize, 4] {
            let path = dir.join(format!("w{workers}.ptag"));
            simulate_run(&config, &path, Some(workers)).unwrap();
            bytes.push(std::fs::read(&path).unwrap());
            std::fs::remove_file(&path).unwrap();
        }
        assert_eq!(bytes[0], bytes[1]);
    }

    #[test]
    fn herald_rate_matches_thinned_bose_einstein() {
        let mut config = base_config(0.023, 1.4, 2_000_000);
        config.herald_efficiency = 0.3;
        config.signal_efficiency = 0.25;
        let tags = simulate_collect(&config).unwrap();
        let n = config.n_pulses as f64;
        let source = config.effective_source().unwrap();
        for (ch, p_photon) in [
            (CHANNEL_HERALD, config.herald_click_prob()),
            (CHANNEL_OUT1, config.signal_click_prob(1)),
            (CHANNEL_OUT2, config.signal_click_prob(2)),
        ] {
            let expected = analytic_click_probability(&source, p_photon);
            let count = tags.iter().filter(|t| t.channel == ch).count() as f64;
            let sigma = (expected * (1.0 - expected) * n).sqrt();
            assert!(
                (count - expected * n).abs() < 3.0 * sigma,
                "channel {ch}: {count} clicks vs {} ± {sigma}",
                expected * n
            );
        }
    }

    #[test]
    fn splitter_routes_the_configured_fraction() {
        let mut config = base_config(0.05, 1.0, 1_000_000);
        config.splitter_ratio = 0.495;
        let tags = simulate_collect(&config).unwrap();
        let n1 = tags.iter().filter(|t| t.channel == CHANNEL_OUT1).count() as f64;
        let n2 = tags.iter().filter(|t| t.channel == CHANNEL_OUT2).count() as f64;
        let fraction = n1 / (n1 + n2);
        let sigma = (0.495 * 0.505 / (n1 + n2)).sqrt();
        assert!(
            (fraction - 0.495).abs() < 3.0 * sigma,
            "fraction {fraction} vs 0.495 ± {sigma}"
        );
    }

    #[test]
    fn one_photon_never_clicks_both_ports() {
        // with at most one pair per pulse (μ tiny) and perfect detection,
        // a double click on ports 1+2 would mean the splitter cloned a
        // photon
        let mut config = base_config(1e-4, 1.0, 1_000_000);
        config.herald_efficiency = 1.0;
        config.signal_efficiency = 1.0;
        let tags = simulate_collect(&config).unwrap();
        let mut by_pulse: std::collections::HashMap<u32, (bool, bool, bool)> =
            std::collections::HashMap::new();
        for tag in &tags {
            let entry = by_pulse.entry(tag.pulse_index).or_default();
            match tag.channel {
                CHANNEL_HERALD => entry.0 = true,
                CHANNEL_OUT1 => entry.1 = true,
                CHANNEL_OUT2 => entry.2 = true,
                _ => {}
            }
        }
        let heralded: Vec<_> = by_pulse.values().filter(|e| e.0).collect();
        assert!(heralded.len() > 50, "want some heralded pulses");
        for entry in &heralded {
            assert!(!(entry.1 && entry.2), "photon clicked both ports");
            assert!(entry.1 || entry.2, "heralded photon vanished at unit efficiency");
        }
    }

    #[test]
    fn geometric_sampler_matches_bose_einstein_pmf() {
        // exhaustive-enumeration oracle on the low-μ truncated state
        for &mu in &[0.01, 0.05] {
            let source = SqueezedSourceModel::new(vec![mu]).unwrap();
            let mut config = ExperimentConfig::new(source);
            config.herald_efficiency = 1.0;
            config.signal_efficiency = 0.0;
            config.n_pulses = 0;
            let sampler = PulseSampler::new(&config).unwrap();
            let draws = 2_000_000u64;
            let mut histogram = [0u64; 3];
            let mut out = Vec::new();
            for pulse in 0..draws {
                out.clear();
                sampler.sample_into(pulse, &mut out);
                // at unit herald efficiency the herald tag marks n ≥ 1;
                // count pair multiplicity from the raw distribution instead
                let u = PulseRng::new(config.rng_seed, pulse, STREAM_SOURCE).uniform();
                let q = mu / (1.0 + mu);
                let n = if u < 1.0 - q {
                    0
                } else {
                    ((1.0 - u).ln() / q.ln()) as u64
                };
                histogram[n.min(2) as usize] += 1;
                let _ = &out;
            }
            let q = mu / (1.0 + mu);
            for n in 0..2usize {
                let expected = (1.0 - q) * q.powi(n as i32) * draws as f64;
                let sigma = expected.sqrt().max(1.0);
                assert!(
                    (histogram[n] as f64 - expected).abs() < 4.0 * sigma,
                    "P({n}) off at μ = {mu}: {} vs {expected}",
                    histogram[n]
                );
            }
        }
    }

    #[test]
    fn dead_time_suppresses_consecutive_clicks() {
        let mut config = base_config(5.0, 1.0, 5_000);
        config.herald_efficiency = 1.0;
        // dead time longer than the pulse period: at most every other
        // pulse can click
        config.detectors.herald.dead_time_ns = 400.0;
        let tags = simulate_collect(&config).unwrap();
        let heralds: Vec<u64> = tags
            .iter()
            .filter(|t| t.channel == CHANNEL_HERALD)
            .map(|t| t.timestamp_ps)
            .collect();
        assert!(!heralds.is_empty());
        assert!(heralds.windows(2).all(|w| w[1] - w[0] >= 400_000));
    }

    #[test]
    fn gated_detector_drops_out_of_window_clicks() {
        let mut config = base_config(0.5, 1.0, 50_000);
        config.herald_efficiency = 1.0;
        // jitter far wider than the 2.5 ns gate: many candidates fall out
        config.detectors.herald.jitter_fwhm_ps = 10_000.0;
        let gated = simulate_collect(&config).unwrap();
        let gated_heralds = gated.iter().filter(|t| t.channel == CHANNEL_HERALD).count();
        config.detectors.herald.gated = false;
        let free = simulate_collect(&config).unwrap();
        let free_heralds = free.iter().filter(|t| t.channel == CHANNEL_HERALD).count();
        assert!(gated_heralds < free_heralds);
        let window_half = config.window_ps() / 2;
        let period = config.rep_period_ps();
        for tag in gated.iter().filter(|t| t.channel == CHANNEL_HERALD) {
            let pulse_time = (tag.pulse_index as u64 + 1) * period;
            let delta = tag.timestamp_ps as i64 - pulse_time as i64;
            assert!(delta.unsigned_abs() <= window_half);
        }
    }

    #[test]
    fn dark_counts_carry_truth_flags() {
        let mut config = ExperimentConfig::new(SqueezedSourceModel::new(vec![]).unwrap());
        config.n_pulses = 200_000;
        config.detectors.port1.dark_count_prob_per_window = 1e-3;
        let tags = simulate_collect(&config).unwrap();
        let darks: Vec<_> = tags.iter().filter(|t| t.channel == CHANNEL_OUT1).collect();
        let expected = 200.0;
        assert!(
            (darks.len() as f64 - expected).abs() < 4.0 * expected.sqrt(),
            "{} darks vs {expected}",
            darks.len()
        );
        assert!(darks.iter().all(|t| t.is_dark()));
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let mut config = base_config(0.023, 1.4, 10);
        config.splitter_ratio = 1.5;
        assert!(matches!(
            config.validate(),
            Err(ConfigError::ProbabilityOutOfRange { .. })
        ));
        let mut config = base_config(0.023, 1.4, 10);
        config.coincidence_window_ns = 1e6;
        assert!(matches!(
            config.validate(),
            Err(ConfigError::WindowExceedsPeriod { .. })
        ));
        let mut config = ExperimentConfig::new(SqueezedSourceModel::new(vec![]).unwrap());
        config.calibration_pairs_per_mw = Some(1e-3);
        assert!(matches!(
            config.validate(),
            Err(ConfigError::VacuumNeedsShape)
        ));
        let mut config = base_config(0.023, 1.4, 10);
        config.n_pulses = u32::MAX as u64 + 1;
        assert!(matches!(config.validate(), Err(ConfigError::TooManyPulses(_))));
    }

    #[test]
    fn calibration_scales_the_source_with_power() {
        let mut config = base_config(0.023, 1.4, 0);
        config.calibration_pairs_per_mw = Some(0.023 / 60.0);
        config.pump_power_mw = 30.0;
        let effective = config.effective_source().unwrap();
        assert!((effective.mean_photon_number() - 0.0115).abs() < 1e-12);
        let k = effective.effective_schmidt_number().unwrap();
        assert!((k - 1.4).abs() < 1e-9);
    }
}
