//! Time-of-flight fiber spectrograph: chromatic dispersion maps wavelength
//! to arrival delay, so tag delays relative to the laser trigger become a
//! spectral measurement. This module holds the affine calibration, the
//! histogram reconstruction of the joint spectral intensity from
//! coincident tags (with the herald arm carrying the idler), and the
//! ground-truth sampler that lets the simulator tag pairs with wavelengths
//! drawn from a model JSI.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jsa::{GridKind, GridSpec, JsaError, JsaGrid};
use crate::montecarlo::rng::PulseRng;
use crate::montecarlo::{ConfigError, ExperimentConfig, SpectralMode};
use crate::tagstream::{TimeTag, CHANNEL_HERALD, CHANNEL_LASER};
use nalgebra::DMatrix;

#[derive(Debug, Error)]
pub enum SpectrographError {
    #[error("dispersion must be non-zero")]
    ZeroDispersion,
    #[error("spectral resolution {0} nm must be positive")]
    NonpositiveResolution(f64),
    #[error("no herald/signal coincidences found in the stream")]
    NoCoincidences,
    #[error("stream is not sorted: timestamp {current} after {previous}")]
    UnsortedStream { previous: u64, current: u64 },
    #[error("sampling requires a normalized intensity grid, got {0}")]
    UnnormalizedGrid(GridKind),
    #[error("grids have different dimensions: {a_rows}x{a_cols} vs {b_rows}x{b_cols}")]
    GridShapeMismatch {
        a_rows: usize,
        a_cols: usize,
        b_rows: usize,
        b_cols: usize,
    },
    #[error(transparent)]
    Jsa(#[from] JsaError),
}

/// Affine delay ↔ wavelength calibration of one spectrograph arm.
///
/// `reference_delay_ps` is quoted relative to the laser trigger with the
/// fixed fiber transit absorbed, so delays stay within the acceptance
/// window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrographCalibration {
    /// Total fiber dispersion D·L, ps per nm; sign sets the direction.
    pub dispersion_ps_per_nm: f64,
    pub reference_delay_ps: f64,
    pub reference_wavelength_nm: f64,
    /// Achievable spectral resolution (FWHM), nm.
    pub resolution_nm: f64,
}

impl SpectrographCalibration {
    pub fn validate(&self) -> Result<(), SpectrographError> {
        if self.dispersion_ps_per_nm == 0.0 {
            return Err(SpectrographError::ZeroDispersion);
        }
        if !(self.resolution_nm > 0.0) {
            return Err(SpectrographError::NonpositiveResolution(self.resolution_nm));
        }
        Ok(())
    }

    /// `λ = λ_ref + (τ − τ_ref) / D`.
    pub fn time_to_wavelength(&self, delay_ps: f64) -> f64 {
        self.reference_wavelength_nm
            + (delay_ps - self.reference_delay_ps) / self.dispersion_ps_per_nm
    }

    /// Exact inverse of [`Self::time_to_wavelength`].
    pub fn wavelength_to_time(&self, lambda_nm: f64) -> f64 {
        self.reference_delay_ps
            + (lambda_nm - self.reference_wavelength_nm) * self.dispersion_ps_per_nm
    }

    /// Spectral blur (FWHM, nm) implied by a detector timing jitter.
    pub fn implied_resolution_nm(&self, jitter_fwhm_ps: f64) -> f64 {
        jitter_fwhm_ps / self.dispersion_ps_per_nm.abs()
    }
}

/// Inverse-transform sampler over a normalized intensity grid: draws
/// (λ_s, λ_i) pairs bin-weighted, uniform within each bin.
#[derive(Debug, Clone)]
pub struct JsiSampler {
    cumulative: Vec<f64>,
    n_idler: usize,
    signal_axis: Vec<f64>,
    idler_axis: Vec<f64>,
    signal_bin: f64,
    idler_bin: f64,
}

impl JsiSampler {
    pub fn new(jsi: &JsaGrid) -> Result<Self, SpectrographError> {
        if jsi.kind() != GridKind::Intensity {
            return Err(SpectrographError::UnnormalizedGrid(jsi.kind()));
        }
        let values = jsi.values();
        let mut cumulative = Vec::with_capacity(values.len());
        let mut acc = 0.0;
        for i in 0..values.nrows() {
            for j in 0..values.ncols() {
                acc += values[(i, j)];
                cumulative.push(acc);
            }
        }
        Ok(Self {
            cumulative,
            n_idler: values.ncols(),
            signal_axis: jsi.signal_axis().to_vec(),
            idler_axis: jsi.idler_axis().to_vec(),
            signal_bin: jsi.signal_bin_nm(),
            idler_bin: jsi.idler_bin_nm(),
        })
    }

    pub fn sample(&self, rng: &mut PulseRng) -> (f64, f64) {
        let u = rng.uniform() * self.cumulative.last().unwrap();
        let flat = self
            .cumulative
            .partition_point(|&c| c < u)
            .min(self.cumulative.len() - 1);
        let i = flat / self.n_idler;
        let j = flat % self.n_idler;
        (
            self.signal_axis[i] + (rng.uniform() - 0.5) * self.signal_bin,
            self.idler_axis[j] + (rng.uniform() - 0.5) * self.idler_bin,
        )
    }
}

/// Attach spectral ground truth to a simulation config: pairs draw their
/// wavelengths from `jsi` and clicks disperse through the calibrations.
pub fn spectral_sampling_mode(
    config: &ExperimentConfig,
    jsi: JsaGrid,
    cal_signal: SpectrographCalibration,
    cal_idler: SpectrographCalibration,
) -> Result<ExperimentConfig, ConfigError> {
    if jsi.kind() != GridKind::Intensity {
        return Err(ConfigError::UnnormalizedGrid);
    }
    let mut extended = config.clone();
    extended.spectral = Some(SpectralMode {
        jsi,
        cal_signal,
        cal_idler,
    });
    extended.validate()?;
    Ok(extended)
}

#[derive(Debug, Clone, Copy)]
pub struct ReconstructionOptions {
    pub window_ps: u64,
    /// Output port carrying the signal photons (1 in the reference setup).
    pub signal_channel: u16,
    /// Extra Gaussian smoothing (σ, nm) applied to the final histogram;
    /// usually `None` because detector jitter already blurs the delays.
    pub extra_blur_sigma_nm: Option<f64>,
}

impl Default for ReconstructionOptions {
    fn default() -> Self {
        Self {
            window_ps: 2_500,
            signal_channel: 1,
            extra_blur_sigma_nm: None,
        }
    }
}

/// Histogram coincident (herald, signal) delays into a measured JSI on the
/// requested axes. The herald channel carries the idler photon, so its
/// delay passes through `cal_idler`; the signal delay through
/// `cal_signal`. Pairs outside the grid range are dropped.
pub fn build_jsi_histogram(
    tags: impl IntoIterator<Item = TimeTag>,
    cal_signal: &SpectrographCalibration,
    cal_idler: &SpectrographCalibration,
    spec: &GridSpec,
    options: &ReconstructionOptions,
) -> Result<JsaGrid, SpectrographError> {
    cal_signal.validate()?;
    cal_idler.validate()?;
    let signal_axis = spec.signal_axis();
    let idler_axis = spec.idler_axis();
    let s_bin = signal_axis[1] - signal_axis[0];
    let i_bin = idler_axis[1] - idler_axis[0];
    let mut counts = DMatrix::<f64>::zeros(spec.n_signal, spec.n_idler);
    let mut total_pairs = 0u64;

    let half = options.window_ps / 2;
    let upper = options.window_ps - half;
    let mut last_timestamp = 0u64;
    let mut current: Option<(u64, Option<f64>, Option<f64>)> = None; // laser, idler delay, signal delay
    let mut pending: Vec<TimeTag> = Vec::new();

    let close =
        |pulse: Option<(u64, Option<f64>, Option<f64>)>,
         counts: &mut DMatrix<f64>,
         total: &mut u64| {
            if let Some((_, Some(idler_delay), Some(signal_delay))) = pulse {
                let lambda_s = cal_signal.time_to_wavelength(signal_delay);
                let lambda_i = cal_idler.time_to_wavelength(idler_delay);
                let i = ((lambda_s - (signal_axis[0] - 0.5 * s_bin)) / s_bin).floor();
                let j = ((lambda_i - (idler_axis[0] - 0.5 * i_bin)) / i_bin).floor();
                if i >= 0.0
                    && j >= 0.0
                    && (i as usize) < spec.n_signal
                    && (j as usize) < spec.n_idler
                {
                    counts[(i as usize, j as usize)] += 1.0;
                    *total += 1;
                }
            }
        };

    for tag in tags {
        if tag.timestamp_ps < last_timestamp {
            return Err(SpectrographError::UnsortedStream {
                previous: last_timestamp,
                current: tag.timestamp_ps,
            });
        }
        last_timestamp = tag.timestamp_ps;
        if tag.channel == CHANNEL_LASER {
            close(current.take(), &mut counts, &mut total_pairs);
            current = Some((tag.timestamp_ps, None, None));
            let laser = tag.timestamp_ps;
            pending.retain(|old| {
                if old.timestamp_ps + half >= laser && old.timestamp_ps < laser + upper {
                    let delay = old.timestamp_ps as f64 - laser as f64;
                    if let Some((_, idler, signal)) = &mut current {
                        if old.channel == CHANNEL_HERALD {
                            idler.get_or_insert(delay);
                        } else if old.channel == options.signal_channel {
                            signal.get_or_insert(delay);
                        }
                    }
                    false
                } else {
                    old.timestamp_ps >= laser
                }
            });
        } else if tag.channel == CHANNEL_HERALD || tag.channel == options.signal_channel {
            match &mut current {
                Some((laser, idler, signal))
                    if tag.timestamp_ps + half >= *laser
                        && tag.timestamp_ps < *laser + upper =>
                {
                    let delay = tag.timestamp_ps as f64 - *laser as f64;
                    if tag.channel == CHANNEL_HERALD {
                        idler.get_or_insert(delay);
                    } else {
                        signal.get_or_insert(delay);
                    }
                }
                Some((laser, _, _)) if tag.timestamp_ps < *laser => {}
                _ => pending.push(tag),
            }
        }
    }
    close(current.take(), &mut counts, &mut total_pairs);

    if total_pairs == 0 {
        return Err(SpectrographError::NoCoincidences);
    }
    let grid = JsaGrid::new(signal_axis, idler_axis, counts, GridKind::Intensity)?;
    match options.extra_blur_sigma_nm {
        Some(sigma) => Ok(crate::jsa::gaussian_blur(&grid, sigma)?),
        None => Ok(grid),
    }
}

/// Total-variation distance `½ Σ |p − q|` between two intensity grids of
/// the same shape.
pub fn total_variation(a: &JsaGrid, b: &JsaGrid) -> Result<f64, SpectrographError> {
    let (ar, ac) = (a.values().nrows(), a.values().ncols());
    let (br, bc) = (b.values().nrows(), b.values().ncols());
    if ar != br || ac != bc {
        return Err(SpectrographError::GridShapeMismatch {
            a_rows: ar,
            a_cols: ac,
            b_rows: br,
            b_cols: bc,
        });
    }
    Ok(a.values()
        .iter()
        .zip(b.values().iter())
        .map(|(p, q)| (p - q).abs())
        .sum::<f64>()
        / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cal(dispersion: f64) -> SpectrographCalibration {
        SpectrographCalibration {
            dispersion_ps_per_nm: dispersion,
            reference_delay_ps: 0.0,
            reference_wavelength_nm: 1540.0,
            resolution_nm: 0.2,
        }
    }

    #[test]
    fn calibration_point_maps_to_itself() {
        let c = cal(600.0);
        assert_relative_eq!(c.time_to_wavelength(0.0), 1540.0);
    }

    #[test]
    fn affine_arithmetic_example() {
        // 120 ps at 600 ps/nm is 0.2 nm
        let c = cal(600.0);
        assert_relative_eq!(c.time_to_wavelength(120.0) - 1540.0, 0.2, epsilon = 1e-12);
        assert_relative_eq!(c.implied_resolution_nm(120.0), 0.2, epsilon = 1e-12);
    }

    #[test]
    fn negative_dispersion_flips_monotonicity() {
        let c = cal(-600.0);
        assert!(c.time_to_wavelength(100.0) < c.time_to_wavelength(0.0));
    }

    #[test]
    fn mapping_round_trips_below_a_femtometer() {
        let c = cal(1250.0);
        for lambda in [1538.2, 1540.0, 1541.77] {
            let back = c.time_to_wavelength(c.wavelength_to_time(lambda));
            assert!((back - lambda).abs() < 1e-9);
        }
        for delay in [-900.0, 0.0, 333.3] {
            let back = c.wavelength_to_time(c.time_to_wavelength(delay));
            assert!((back - delay).abs() < 1e-6);
        }
    }

    #[test]
    fn validation_catches_degenerate_calibrations() {
        assert!(matches!(
            cal(0.0).validate(),
            Err(SpectrographError::ZeroDispersion)
        ));
        let mut bad = cal(600.0);
        bad.resolution_nm = 0.0;
        assert!(matches!(
            bad.validate(),
            Err(SpectrographError::NonpositiveResolution(_))
        ));
    }

    fn delta_jsi(lambda_s: f64, lambda_i: f64) -> JsaGrid {
        let s_axis: Vec<f64> = (0..32).map(|k| lambda_s - 0.8 + 0.05 * k as f64).collect();
        let i_axis: Vec<f64> = (0..32).map(|k| lambda_i - 0.8 + 0.05 * k as f64).collect();
        let mut values = DMatrix::zeros(32, 32);
        let si = s_axis
            .iter()
            .position(|&x| (x - lambda_s).abs() < 1e-9)
            .unwrap();
        let ij = i_axis
            .iter()
            .position(|&x| (x - lambda_i).abs() < 1e-9)
            .unwrap();
        values[(si, ij)] = 1.0;
        JsaGrid::new(s_axis, i_axis, values, GridKind::Intensity).unwrap()
    }

    #[test]
    fn delta_peaked_jsi_samples_one_wavelength_pair() {
        let jsi = delta_jsi(1540.0, 1536.0);
        let sampler = JsiSampler::new(&jsi).unwrap();
        let mut rng = PulseRng::new(5, 0, 0);
        for _ in 0..100 {
            let (ls, li) = sampler.sample(&mut rng);
            assert!((ls - 1540.0).abs() <= 0.025 + 1e-12);
            assert!((li - 1536.0).abs() <= 0.025 + 1e-12);
        }
    }

    #[test]
    fn sampler_rejects_amplitude_grids() {
        let axis: Vec<f64> = (0..8).map(|k| 1540.0 + 0.1 * k as f64).collect();
        let grid = JsaGrid::new(
            axis.clone(),
            axis,
            DMatrix::from_element(8, 8, 1.0),
            GridKind::Amplitude,
        )
        .unwrap();
        assert!(matches!(
            JsiSampler::new(&grid),
            Err(SpectrographError::UnnormalizedGrid(_))
        ));
    }

    /// Hand-built stream: one pulse with herald and port-1 clicks at fixed
    /// delays reconstructs into exactly one occupied bin.
    #[test]
    fn single_pair_lands_in_one_bin() {
        let cal_s = cal(1250.0);
        let cal_i = SpectrographCalibration {
            reference_wavelength_nm: 1536.0,
            ..cal(1250.0)
        };
        let period = 263_158u64;
        let mut tags = Vec::new();
        for pulse in 0..3u64 {
            let t = (pulse + 1) * period;
            // λs = 1540.2 → delay +250 ps; λi = 1535.8 → delay −250 ps
            tags.push(TimeTag {
                timestamp_ps: t - 250,
                channel: CHANNEL_HERALD,
                flags: 0,
                pulse_index: pulse as u32,
            });
            tags.push(TimeTag {
                timestamp_ps: t + 250,
                channel: 1,
                flags: 0,
                pulse_index: pulse as u32,
            });
            tags.push(TimeTag {
                timestamp_ps: t,
                channel: CHANNEL_LASER,
                flags: 0,
                pulse_index: pulse as u32,
            });
        }
        tags.sort_by_key(TimeTag::sort_key);
        let spec = GridSpec {
            signal_min_nm: 1539.0,
            signal_max_nm: 1541.0,
            n_signal: 21,
            idler_min_nm: 1535.0,
            idler_max_nm: 1537.0,
            n_idler: 21,
        };
        let jsi = build_jsi_histogram(
            tags,
            &cal_s,
            &cal_i,
            &spec,
            &ReconstructionOptions::default(),
        )
        .unwrap();
        let occupied: Vec<(usize, usize)> = (0..21)
            .flat_map(|i| (0..21).map(move |j| (i, j)))
            .filter(|&(i, j)| jsi.values()[(i, j)] > 0.0)
            .collect();
        assert_eq!(occupied.len(), 1);
        let (i, j) = occupied[0];
        assert_relative_eq!(jsi.signal_axis()[i], 1540.2, epsilon = 1e-9);
        assert_relative_eq!(jsi.idler_axis()[j], 1535.8, epsilon = 1e-9);
    }

    #[test]
    fn empty_stream_reports_no_coincidences() {
        let spec = GridSpec {
            signal_min_nm: 1539.0,
            signal_max_nm: 1541.0,
            n_signal: 8,
            idler_min_nm: 1535.0,
            idler_max_nm: 1537.0,
            n_idler: 8,
        };
        let result = build_jsi_histogram(
            Vec::new(),
            &cal(1250.0),
            &cal(1250.0),
            &spec,
            &ReconstructionOptions::default(),
        );
        assert!(matches!(result, Err(SpectrographError::NoCoincidences)));
    }

    #[test]
    fn total_variation_basics() {
        let a = delta_jsi(1540.0, 1536.0);
        assert_eq!(total_variation(&a, &a).unwrap(), 0.0);
        // same axes, peak moved one bin over: disjoint supports, TV = 1
        let mut values = DMatrix::zeros(32, 32);
        values[(17, 16)] = 1.0;
        let b = JsaGrid::new(
            a.signal_axis().to_vec(),
            a.idler_axis().to_vec(),
            values,
            GridKind::Intensity,
        )
        .unwrap();
        assert_relative_eq!(total_variation(&a, &b).unwrap(), 1.0, epsilon = 1e-12);
        let half = JsaGrid::new(
            a.signal_axis().to_vec(),
            a.idler_axis().to_vec(),
            a.values() * 0.5 + b.values() * 0.5,
            GridKind::Intensity,
        )
        .unwrap();
        assert_relative_eq!(total_variation(&a, &half).unwrap(), 0.5, epsilon = 1e-12);
    }
}
