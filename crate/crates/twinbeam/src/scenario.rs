//! Named regression scenarios: a configuration bundle plus expected
//! quantities with tolerances. Each expectation passes when the observed
//! value is within `max(tol_abs, n_sigma · σ)` of the target, so
//! deterministic quantities pin exact numbers while Monte-Carlo quantities
//! stay stable in regression runs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circuit::{
    self, extract_loss_from_contrast, fp_transmission_spectrum, splitting_ratio_estimate,
    Polarization, Port, WaveguideCircuit,
};
use crate::coincidence::{analyze, background_correction, AnalysisOptions, Estimate};
use crate::config::{ConfigFileError, ExperimentSection, JsaSection};
use crate::jsa::{self, MarginalAxis};
use crate::montecarlo::{simulate_collect, SimulateError};
use crate::squeezed_state::{power_sweep, SqueezedSourceModel};

/// Environment variable pointing at a directory of scenario files that
/// shadows the bundled set.
pub const SCENARIO_DIR_ENV: &str = "TWINBEAM_SCENARIO_DIR";

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario '{0}' not found (not a file, not in the scenario directory, not bundled)")]
    NotFound(String),
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("scenario kind '{kind}' requires a [{kind}] section")]
    MissingSection { kind: &'static str },
    #[error("scenario expects unknown quantity '{quantity}'; available: {available}")]
    UnknownQuantity { quantity: String, available: String },
    #[error(transparent)]
    Config(#[from] ConfigFileError),
    #[error(transparent)]
    Simulate(#[from] SimulateError),
    #[error(transparent)]
    Analysis(#[from] crate::coincidence::AnalysisError),
    #[error(transparent)]
    Circuit(#[from] circuit::CircuitError),
    #[error(transparent)]
    Jsa(#[from] jsa::JsaError),
    #[error(transparent)]
    Squeezed(#[from] crate::squeezed_state::SqueezedError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    Experiment,
    Jsa,
    Characterize,
    Sweep,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expectation {
    pub value: f64,
    #[serde(default)]
    pub tol_abs: f64,
    #[serde(default = "default_n_sigma")]
    pub n_sigma: f64,
}

fn default_n_sigma() -> f64 {
    3.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CharacterizeSection {
    pub device_length_cm: f64,
    pub facet_reflectivity: f64,
    #[serde(default)]
    pub loss_te_per_cm: f64,
    #[serde(default)]
    pub loss_tm_per_cm: f64,
    pub splitter_ratio: f64,
    #[serde(default)]
    pub splitter_phase_rad: f64,
    #[serde(default = "default_group_index")]
    pub group_index: f64,
    pub scan_min_nm: f64,
    pub scan_max_nm: f64,
    pub scan_step_nm: f64,
    pub polarization: String,
}

fn default_group_index() -> f64 {
    3.5
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub mean_n_at_ref: f64,
    pub schmidt_k: f64,
    pub ref_power_mw: f64,
    pub powers_mw: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    pub kind: ScenarioKind,
    #[serde(default)]
    pub background_correction: bool,
    pub experiment: Option<ExperimentSection>,
    pub jsa: Option<JsaSection>,
    pub characterize: Option<CharacterizeSection>,
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub expected: BTreeMap<String, Expectation>,
}

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub quantity: String,
    pub observed: Estimate,
    pub expected: Expectation,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub name: String,
    pub checks: Vec<CheckResult>,
    /// Quantities the scenario produced, for reporting.
    pub quantities: BTreeMap<String, Estimate>,
}

impl ScenarioOutcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

fn check(expected: &BTreeMap<String, Expectation>, quantities: &BTreeMap<String, Estimate>)
    -> Result<Vec<CheckResult>, ScenarioError> {
    let mut checks = Vec::new();
    for (quantity, expectation) in expected {
        let observed =
            quantities
                .get(quantity)
                .copied()
                .ok_or_else(|| ScenarioError::UnknownQuantity {
                    quantity: quantity.clone(),
                    available: quantities.keys().cloned().collect::<Vec<_>>().join(", "),
                })?;
        let tolerance = expectation
            .tol_abs
            .max(expectation.n_sigma * observed.sigma);
        checks.push(CheckResult {
            quantity: quantity.clone(),
            observed,
            expected: *expectation,
            tolerance,
            pass: (observed.value - expectation.value).abs() <= tolerance,
        });
    }
    Ok(checks)
}

fn exact(value: f64) -> Estimate {
    Estimate::new(value, 0.0)
}

fn count(value: u64) -> Estimate {
    Estimate::new(value as f64, (value as f64).sqrt())
}

fn run_experiment(file: &ScenarioFile) -> Result<BTreeMap<String, Estimate>, ScenarioError> {
    let section = file
        .experiment
        .as_ref()
        .ok_or(ScenarioError::MissingSection { kind: "experiment" })?;
    let config = section.build(&file.name)?;
    let tags = simulate_collect(&config)?;
    let options = AnalysisOptions::with_window_ns(config.coincidence_window_ns);
    let mut report = analyze(tags, &options)?;
    if file.background_correction {
        let dark = [
            config.detectors.herald.dark_count_prob_per_window,
            config.detectors.port1.dark_count_prob_per_window,
            config.detectors.port2.dark_count_prob_per_window,
        ];
        report = background_correction(&report, dark);
    }
    let mut q = BTreeMap::new();
    q.insert("n_pulses".into(), exact(report.n_pulses as f64));
    q.insert("n_h".into(), count(report.n_h));
    q.insert("n_1h".into(), count(report.n_1h));
    q.insert("n_2h".into(), count(report.n_2h));
    q.insert("n_12h".into(), count(report.n_12h));
    for (name, estimate) in [
        ("g2_cross", report.g2_cross),
        ("car", report.car),
        ("g2_auto", report.g2_auto),
        ("g2_heralded", report.g2_heralded),
        ("mean_n", report.mean_n_estimate),
        ("schmidt_k", report.schmidt_k_estimate),
    ] {
        if let Some(estimate) = estimate {
            q.insert(name.into(), estimate);
        }
    }
    Ok(q)
}

fn run_jsa(file: &ScenarioFile) -> Result<BTreeMap<String, Estimate>, ScenarioError> {
    let section = file
        .jsa
        .as_ref()
        .ok_or(ScenarioError::MissingSection { kind: "jsa" })?;
    let amplitude = section.amplitude()?;
    let (_, k) = jsa::schmidt_decompose(&amplitude)?;
    let jsi = jsa::jsi_from_jsa(&amplitude)?;
    let marginal = jsa::marginal_spectrum(&jsi, MarginalAxis::Signal)?;
    let mut spec = section.grid_spec()?;
    spec.n_signal /= 2;
    spec.n_idler /= 2;
    let (_, delta) = jsa::schmidt_convergence(&section.pump(), &section.phase_match()?, &spec)?;
    let mut q = BTreeMap::new();
    q.insert("schmidt_k".into(), exact(k));
    q.insert("marginal_fwhm_nm".into(), exact(marginal.fwhm_nm));
    q.insert("convergence_delta".into(), exact(delta));
    Ok(q)
}

fn run_characterize(file: &ScenarioFile) -> Result<BTreeMap<String, Estimate>, ScenarioError> {
    let section = file
        .characterize
        .as_ref()
        .ok_or(ScenarioError::MissingSection { kind: "characterize" })?;
    let circuit = WaveguideCircuit::new(
        section.device_length_cm,
        section.facet_reflectivity,
        section.loss_te_per_cm,
        section.loss_tm_per_cm,
        section.splitter_ratio,
        section.splitter_phase_rad,
        section.group_index,
    )?;
    let pol = match section.polarization.to_ascii_lowercase().as_str() {
        "te" => Polarization::Te,
        _ => Polarization::Tm,
    };
    let n = ((section.scan_max_nm - section.scan_min_nm) / section.scan_step_nm).round() as usize;
    let wavelengths: Vec<f64> = (0..=n)
        .map(|i| section.scan_min_nm + i as f64 * section.scan_step_nm)
        .collect();
    let spec1 = fp_transmission_spectrum(&circuit, Port::One, pol, &wavelengths);
    let spec2 = fp_transmission_spectrum(&circuit, Port::Two, pol, &wavelengths);
    let loss = extract_loss_from_contrast(
        &spec1,
        section.facet_reflectivity,
        section.device_length_cm,
    )?;
    let (ratio, ratio_sigma) = splitting_ratio_estimate(&spec1, &spec2)?;
    let mut q = BTreeMap::new();
    q.insert(
        "alpha_per_cm".into(),
        Estimate::new(loss.alpha_per_cm, loss.alpha_sigma),
    );
    q.insert(
        "splitting_ratio".into(),
        Estimate::new(ratio, ratio_sigma),
    );
    q.insert("fringes_used".into(), exact(loss.fringes.len() as f64));
    Ok(q)
}

fn run_sweep(file: &ScenarioFile) -> Result<BTreeMap<String, Estimate>, ScenarioError> {
    let section = file
        .sweep
        .as_ref()
        .ok_or(ScenarioError::MissingSection { kind: "sweep" })?;
    let model =
        SqueezedSourceModel::from_mean_and_schmidt(section.mean_n_at_ref, section.schmidt_k)?;
    let points = power_sweep(&model, section.ref_power_mw, &section.powers_mw)?;
    let k_ref = points
        .first()
        .map(|p| p.prediction.schmidt_k)
        .unwrap_or(section.schmidt_k);
    let k_drift = points
        .iter()
        .map(|p| (p.prediction.schmidt_k - k_ref).abs())
        .fold(0.0, f64::max);
    // linearity of g²_her against power
    let xy: Vec<(f64, f64)> = points
        .iter()
        .map(|p| (p.power_mw, p.prediction.g2_heralded))
        .collect();
    let r2 = r_squared(&xy);
    let last = points.last().expect("sweep has at least one power");
    let mut q = BTreeMap::new();
    q.insert("endpoint_g2_heralded".into(), exact(last.prediction.g2_heralded));
    q.insert("endpoint_mean_n".into(), exact(last.prediction.mean_n));
    q.insert("r_squared".into(), exact(r2));
    q.insert("k_drift_max".into(), exact(k_drift));
    Ok(q)
}

/// Coefficient of determination of the least-squares line through `xy`.
pub fn r_squared(xy: &[(f64, f64)]) -> f64 {
    let n = xy.len() as f64;
    if xy.len() < 2 {
        return 1.0;
    }
    let mean_x = xy.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = xy.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = xy.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    let sxy: f64 = xy.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    let syy: f64 = xy.iter().map(|p| (p.1 - mean_y).powi(2)).sum();
    if syy == 0.0 {
        return 1.0;
    }
    let slope = sxy / sxx;
    let ss_res: f64 = xy
        .iter()
        .map(|p| {
            let fit = mean_y + slope * (p.0 - mean_x);
            (p.1 - fit).powi(2)
        })
        .sum();
    1.0 - ss_res / syy
}

pub fn run_scenario(file: &ScenarioFile) -> Result<ScenarioOutcome, ScenarioError> {
    let quantities = match file.kind {
        ScenarioKind::Experiment => run_experiment(file)?,
        ScenarioKind::Jsa => run_jsa(file)?,
        ScenarioKind::Characterize => run_characterize(file)?,
        ScenarioKind::Sweep => run_sweep(file)?,
    };
    let checks = check(&file.expected, &quantities)?;
    Ok(ScenarioOutcome {
        name: file.name.clone(),
        checks,
        quantities,
    })
}

pub fn parse_scenario(text: &str, origin: &str) -> Result<ScenarioFile, ScenarioError> {
    toml::from_str(text).map_err(|e| ScenarioError::Parse {
        path: origin.to_string(),
        message: e.to_string(),
    })
}

/// The scenarios shipped with the crate.
pub fn bundled() -> Vec<(&'static str, &'static str)> {
    vec![
        (
            "paper-results",
            include_str!("../assets/scenarios/paper-results.toml"),
        ),
        (
            "device-characterization",
            include_str!("../assets/scenarios/device-characterization.toml"),
        ),
        (
            "joint-spectrum",
            include_str!("../assets/scenarios/joint-spectrum.toml"),
        ),
        (
            "power-sweep",
            include_str!("../assets/scenarios/power-sweep.toml"),
        ),
    ]
}

/// Resolve a scenario by explicit path, then by `<dir>/<name>.toml` for the
/// override directory (flag or `TWINBEAM_SCENARIO_DIR`), then by bundled
/// name.
pub fn load_scenario(
    name_or_path: &str,
    dir_override: Option<&Path>,
) -> Result<ScenarioFile, ScenarioError> {
    let as_path = Path::new(name_or_path);
    if as_path.is_file() {
        return parse_scenario(&fs::read_to_string(as_path)?, name_or_path);
    }
    let env_dir = std::env::var_os(SCENARIO_DIR_ENV).map(PathBuf::from);
    let dir = dir_override.map(Path::to_path_buf).or(env_dir);
    if let Some(dir) = dir {
        let candidate = dir.join(format!("{name_or_path}.toml"));
        if candidate.is_file() {
            let origin = candidate.display().to_string();
            return parse_scenario(&fs::read_to_string(candidate)?, &origin);
        }
    }
    for (name, text) in bundled() {
        if name == name_or_path {
            return parse_scenario(text, name);
        }
    }
    Err(ScenarioError::NotFound(name_or_path.to_string()))
}
