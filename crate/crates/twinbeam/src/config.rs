//! Structured-text (TOML) configuration schemas. Keys carry their units
//! (`coincidence_window_ns`, `pump_power_mw`, `jitter_fwhm_ps`) and
//! unknown keys are hard errors, so unit mistakes fail loudly instead of
//! silently rescaling an experiment.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jsa::{self, GridSpec, JsaError, JsaGrid, PhaseMatchConfig, PumpConfig};
use crate::montecarlo::{
    ConfigError, DetectorBank, DetectorModel, ExperimentConfig, SpectralMode,
};
use crate::spectrograph::SpectrographCalibration;
use crate::squeezed_state::{SqueezedError, SqueezedSourceModel};

#[derive(Debug, Error)]
pub enum ConfigFileError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{path}: source needs either mode_means or (mean_n, schmidt_k)")]
    SourceUnderspecified { path: String },
    #[error("{path}: spectral section needs exactly one of jsi_file or jsa")]
    SpectralUnderspecified { path: String },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Squeezed(#[from] SqueezedError),
    #[error(transparent)]
    Jsa(#[from] JsaError),
}

fn read_to_string(path: &Path) -> Result<String, ConfigFileError> {
    fs::read_to_string(path).map_err(|source| ConfigFileError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn parse_toml<T: serde::de::DeserializeOwned>(
    text: &str,
    path: &str,
) -> Result<T, ConfigFileError> {
    toml::from_str(text).map_err(|e| ConfigFileError::Parse {
        path: path.to_string(),
        message: e.to_string(),
    })
}

/// `[source]` table: either explicit per-mode means or a
/// (mean, Schmidt number) pair expanded through
/// [`SqueezedSourceModel::from_mean_and_schmidt`].
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SourceSection {
    pub mode_means: Option<Vec<f64>>,
    pub mean_n: Option<f64>,
    pub schmidt_k: Option<f64>,
}

impl SourceSection {
    pub fn build(&self, path: &str) -> Result<SqueezedSourceModel, ConfigFileError> {
        match (&self.mode_means, self.mean_n, self.schmidt_k) {
            (Some(means), None, None) => Ok(SqueezedSourceModel::new(means.clone())?),
            (None, Some(mean_n), Some(k)) => {
                Ok(SqueezedSourceModel::from_mean_and_schmidt(mean_n, k)?)
            }
            _ => Err(ConfigFileError::SourceUnderspecified {
                path: path.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSection {
    #[serde(default = "one")]
    pub efficiency: f64,
    #[serde(default)]
    pub dark_count_prob_per_window: f64,
    #[serde(default)]
    pub jitter_fwhm_ps: f64,
    #[serde(default = "yes")]
    pub gated: bool,
    #[serde(default)]
    pub dead_time_ns: f64,
}

fn one() -> f64 {
    1.0
}
fn yes() -> bool {
    true
}

impl Default for DetectorSection {
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

impl From<&DetectorSection> for DetectorModel {
    fn from(s: &DetectorSection) -> Self {
        DetectorModel {
            efficiency: s.efficiency,
            dark_count_prob_per_window: s.dark_count_prob_per_window,
            jitter_fwhm_ps: s.jitter_fwhm_ps,
            gated: s.gated,
            dead_time_ns: s.dead_time_ns,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct DetectorsSection {
    #[serde(default)]
    pub herald: DetectorSection,
    #[serde(default)]
    pub port1: DetectorSection,
    #[serde(default)]
    pub port2: DetectorSection,
}

/// `[jsa]` table: pump settings plus grid resolution for the model joint
/// spectrum.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JsaSection {
    #[serde(default = "default_pump_center")]
    pub pump_center_nm: f64,
    #[serde(default = "default_pulse_fwhm")]
    pub pulse_fwhm_ps: f64,
    #[serde(default = "default_spot_fwhm")]
    pub spot_fwhm_mm: f64,
    #[serde(default = "default_angle")]
    pub incidence_angle_deg: f64,
    #[serde(default = "default_rep_rate")]
    pub rep_rate_mhz: f64,
    #[serde(default = "default_signal_center")]
    pub signal_center_nm: f64,
    /// Calibration coefficients of the width mapping; defaults reproduce
    /// the reference device.
    pub sum_width_coeff_rad: Option<f64>,
    pub diff_width_coeff_rad_m_per_s: Option<f64>,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    #[serde(default = "default_span_sigmas")]
    pub span_sigmas: f64,
}

fn default_pump_center() -> f64 {
    769.0
}
fn default_pulse_fwhm() -> f64 {
    5.0
}
fn default_spot_fwhm() -> f64 {
    1.5
}
fn default_angle() -> f64 {
    1.4
}
fn default_rep_rate() -> f64 {
    3.8
}
fn default_signal_center() -> f64 {
    1540.0
}
fn default_grid_points() -> usize {
    512
}
fn default_span_sigmas() -> f64 {
    4.0
}

impl Default for JsaSection {
    fn default() -> Self {
        parse_toml("", "builtin").expect("empty jsa section has defaults")
    }
}

impl JsaSection {
    pub fn pump(&self) -> PumpConfig {
        PumpConfig {
            center_wavelength_nm: self.pump_center_nm,
            pulse_fwhm_ps: self.pulse_fwhm_ps,
            spot_fwhm_mm: self.spot_fwhm_mm,
            incidence_angle_deg: self.incidence_angle_deg,
            rep_rate_mhz: self.rep_rate_mhz,
        }
    }

    pub fn phase_match(&self) -> Result<PhaseMatchConfig, JsaError> {
        PhaseMatchConfig::from_pump_with_coefficients(
            &self.pump(),
            self.signal_center_nm,
            self.sum_width_coeff_rad.unwrap_or(jsa::SUM_WIDTH_COEFF_RAD),
            self.diff_width_coeff_rad_m_per_s
                .unwrap_or(jsa::DIFF_WIDTH_COEFF_RAD_M_PER_S),
        )
    }

    pub fn grid_spec(&self) -> Result<GridSpec, JsaError> {
        Ok(GridSpec::centered(
            &self.phase_match()?,
            self.span_sigmas,
            self.grid_points,
        ))
    }

    /// Build the model amplitude grid.
    pub fn amplitude(&self) -> Result<JsaGrid, JsaError> {
        jsa::compute_jsa(&self.pump(), &self.phase_match()?, &self.grid_spec()?)
    }

    /// Build the model intensity grid.
    pub fn intensity(&self) -> Result<JsaGrid, JsaError> {
        jsa::jsi_from_jsa(&self.amplitude()?)
    }
}

/// `[spectral]` table of an experiment: the ground-truth joint spectrum
/// (file or model) and the two spectrograph calibrations.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralSection {
    pub jsi_file: Option<String>,
    pub jsa: Option<JsaSection>,
    pub cal_signal: SpectrographCalibration,
    pub cal_idler: SpectrographCalibration,
}

/// Top-level experiment configuration file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub source: SourceSection,
    #[serde(default = "default_power")]
    pub pump_power_mw: f64,
    pub calibration_pairs_per_mw: Option<f64>,
    #[serde(default = "default_rep_rate")]
    pub rep_rate_mhz: f64,
    #[serde(default = "default_ratio")]
    pub splitter_ratio: f64,
    pub herald_efficiency: f64,
    pub signal_efficiency: f64,
    #[serde(default = "default_window")]
    pub coincidence_window_ns: f64,
    pub n_pulses: u64,
    #[serde(default = "default_seed")]
    pub rng_seed: u64,
    #[serde(default)]
    pub detectors: DetectorsSection,
    pub spectral: Option<SpectralSection>,
}

fn default_power() -> f64 {
    60.0
}
fn default_ratio() -> f64 {
    0.5
}
fn default_window() -> f64 {
    2.5
}
fn default_seed() -> u64 {
    1
}

impl ExperimentSection {
    pub fn build(&self, path: &str) -> Result<ExperimentConfig, ConfigFileError> {
        let source = self.source.build(path)?;
        let spectral = match &self.spectral {
            None => None,
            Some(section) => {
                let jsi = match (&section.jsi_file, &section.jsa) {
                    (Some(file), None) => jsa::load_jsi(Path::new(file))?,
                    (None, Some(jsa_section)) => jsa_section.intensity()?,
                    _ => {
                        return Err(ConfigFileError::SpectralUnderspecified {
                            path: path.to_string(),
                        })
                    }
                };
                Some(SpectralMode {
                    jsi,
                    cal_signal: section.cal_signal,
                    cal_idler: section.cal_idler,
                })
            }
        };
        let config = ExperimentConfig {
            source,
            pump_power_mw: self.pump_power_mw,
            calibration_pairs_per_mw: self.calibration_pairs_per_mw,
            rep_rate_mhz: self.rep_rate_mhz,
            splitter_ratio: self.splitter_ratio,
            herald_efficiency: self.herald_efficiency,
            signal_efficiency: self.signal_efficiency,
            detectors: DetectorBank {
                herald: (&self.detectors.herald).into(),
                port1: (&self.detectors.port1).into(),
                port2: (&self.detectors.port2).into(),
            },
            coincidence_window_ns: self.coincidence_window_ns,
            n_pulses: self.n_pulses,
            rng_seed: self.rng_seed,
            spectral,
        };
        config.validate()?;
        Ok(config)
    }
}

pub fn parse_experiment(text: &str, origin: &str) -> Result<ExperimentConfig, ConfigFileError> {
    let section: ExperimentSection = parse_toml(text, origin)?;
    section.build(origin)
}

pub fn load_experiment(path: &Path) -> Result<ExperimentConfig, ConfigFileError> {
    parse_experiment(&read_to_string(path)?, &path.display().to_string())
}

/// Raw Grangier counts fixture (`analyze --counts`).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountsFixture {
    pub n_h: u64,
    pub n_1h: u64,
    pub n_2h: u64,
    pub n_12h: u64,
}

pub fn load_counts(path: &Path) -> Result<CountsFixture, ConfigFileError> {
    parse_toml(&read_to_string(path)?, &path.display().to_string())
}

/// Spectrograph settings for `analyze --jsi`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectroAnalysisFile {
    pub cal_signal: SpectrographCalibration,
    pub cal_idler: SpectrographCalibration,
    pub signal_min_nm: f64,
    pub signal_max_nm: f64,
    pub idler_min_nm: f64,
    pub idler_max_nm: f64,
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default = "default_signal_channel")]
    pub signal_channel: u16,
}

fn default_bins() -> usize {
    64
}
fn default_signal_channel() -> u16 {
    1
}

impl SpectroAnalysisFile {
    pub fn grid_spec(&self) -> GridSpec {
        GridSpec {
            signal_min_nm: self.signal_min_nm,
            signal_max_nm: self.signal_max_nm,
            n_signal: self.bins,
            idler_min_nm: self.idler_min_nm,
            idler_max_nm: self.idler_max_nm,
            n_idler: self.bins,
        }
    }
}

pub fn load_spectro_analysis(path: &Path) -> Result<SpectroAnalysisFile, ConfigFileError> {
    parse_toml(&read_to_string(path)?, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        herald_efficiency = 0.03
        signal_efficiency = 0.3
        n_pulses = 1000

        [source]
        mean_n = 0.023
        schmidt_k = 1.4
    "#;

    #[test]
    fn minimal_experiment_parses_with_defaults() {
        let config = parse_experiment(MINIMAL, "test").unwrap();
        assert_eq!(config.n_pulses, 1000);
        assert_eq!(config.rng_seed, 1);
        assert!((config.source.mean_photon_number() - 0.023).abs() < 1e-12);
        assert_eq!(config.coincidence_window_ns, 2.5);
        assert!(config.detectors.herald.gated);
    }

    #[test]
    fn unknown_keys_are_errors() {
        let bad = format!("{MINIMAL}\nwindow = 2.5\n");
        let err = parse_experiment(&bad, "test").unwrap_err();
        assert!(matches!(err, ConfigFileError::Parse { .. }), "{err}");
        let message = err.to_string();
        assert!(message.contains("window"), "{message}");
    }

    #[test]
    fn source_must_be_fully_specified() {
        let bad = r#"
            herald_efficiency = 0.03
            signal_efficiency = 0.3
            n_pulses = 10

            [source]
            mean_n = 0.023
        "#;
        assert!(matches!(
            parse_experiment(bad, "test"),
            Err(ConfigFileError::SourceUnderspecified { .. })
        ));
    }

    #[test]
    fn invalid_physics_is_rejected_at_build() {
        let bad = format!("{}\nsplitter_ratio = 1.4\n", MINIMAL);
        assert!(matches!(
            parse_experiment(&bad, "test"),
            Err(ConfigFileError::Config(_))
        ));
    }

    #[test]
    fn jsa_section_defaults_reproduce_reference_device() {
        let section: JsaSection = toml::from_str("").unwrap();
        assert_eq!(section.grid_points, 512);
        let pm = section.phase_match().unwrap();
        assert!((pm.signal_center_nm - 1540.0).abs() < 1e-12);
        // energy conservation fixes the idler side
        assert!((1.0 / pm.signal_center_nm + 1.0 / pm.idler_center_nm - 1.0 / 769.0).abs() < 1e-15);
    }

    #[test]
    fn detector_section_roundtrip() {
        let text = r#"
            efficiency = 0.2
            dark_count_prob_per_window = 1e-5
            jitter_fwhm_ps = 250.0
        "#;
        let section: DetectorSection = toml::from_str(text).unwrap();
        let model: DetectorModel = (&section).into();
        assert_eq!(model.efficiency, 0.2);
        assert!(model.gated);
        assert_eq!(model.dead_time_ns, 0.0);
    }
}
