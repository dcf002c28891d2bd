//! Joint spectral amplitude of the transverse-pump pair source.
//!
//! The counterpropagating geometry factorizes the biphoton amplitude into a
//! Gaussian envelope in the sum frequency `ω_s + ω_i` (set by the pump pulse
//! duration) and a Gaussian phase-matching envelope in the difference
//! frequency `ω_s − ω_i` (set by the pump spot size along the waveguide).
//! The grid-sampled amplitude is decomposed by SVD to obtain the Schmidt
//! number `K = 1/Σ λ̃_k⁴`, the effective number of spectral mode pairs.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use thiserror::Error;

pub const SPEED_OF_LIGHT_M_PER_S: f64 = 299_792_458.0;

/// Angular frequency (rad/s) of vacuum wavelength `lambda_nm`.
pub fn angular_frequency(lambda_nm: f64) -> f64 {
    2.0 * std::f64::consts::PI * SPEED_OF_LIGHT_M_PER_S / (lambda_nm * 1e-9)
}

/// Local conversion factor dω/dλ (rad/s per nm) at `lambda_nm`.
pub fn omega_per_nm(lambda_nm: f64) -> f64 {
    angular_frequency(lambda_nm) / lambda_nm
}

/// FWHM of a Gaussian in units of its standard deviation, `2√(2 ln 2)`.
pub const GAUSSIAN_FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_4;

#[derive(Debug, Error)]
pub enum JsaError {
    #[error("grid too coarse: {points_per_sigma:.1} points per σ on the {axis} axis (need ≥ 32)")]
    GridTooCoarse { axis: &'static str, points_per_sigma: f64 },
    #[error("grid too narrow: spans {span_sigmas:.2}σ on the {axis} axis (need ≥ ±3σ)")]
    GridTooNarrow { axis: &'static str, span_sigmas: f64 },
    #[error("operation requires a {expected} grid but this one holds {found}")]
    WrongKind { expected: GridKind, found: GridKind },
    #[error("grid is identically zero")]
    DegenerateGrid,
    #[error("negative intensity {value} at bin ({row}, {col})")]
    NegativeIntensity { row: usize, col: usize, value: f64 },
    #[error("axis must be strictly increasing")]
    AxisNotIncreasing,
    #[error("axis length {axis_len} does not match grid dimension {grid_len}")]
    DimensionMismatch { axis_len: usize, grid_len: usize },
    #[error("signal/idler centers violate energy conservation with the pump by {mismatch_rad_per_s:.3e} rad/s")]
    EnergyConservation { mismatch_rad_per_s: f64 },
    #[error("phase-match width must be positive, got {0}")]
    NonpositiveWidth(f64),
    #[error("grid dimensions {rows}x{cols} not divisible by downsampling factor {factor}")]
    DownsampleMismatch { rows: usize, cols: usize, factor: usize },
    #[error("malformed grid file: {0}")]
    BadFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Pump beam settings of the transverse-pump geometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PumpConfig {
    pub center_wavelength_nm: f64,
    /// Intensity FWHM of the pump pulse, ps.
    pub pulse_fwhm_ps: f64,
    /// Intensity FWHM of the elliptical spot along the waveguide, mm.
    pub spot_fwhm_mm: f64,
    /// Incidence angle from vertical, degrees. Metadata: the emission
    /// centers are taken as inputs rather than derived from it.
    pub incidence_angle_deg: f64,
    pub rep_rate_mhz: f64,
}

impl PumpConfig {
    /// The pump settings used throughout the bundled scenarios: 769 nm,
    /// 5 ps pulses, 1.5 mm spot, 1.4° incidence, 3.8 MHz repetition rate.
    pub fn paper() -> Self {
        Self {
            center_wavelength_nm: 769.0,
            pulse_fwhm_ps: 5.0,
            spot_fwhm_mm: 1.5,
            incidence_angle_deg: 1.4,
            rep_rate_mhz: 3.8,
        }
    }
}

/// Width calibration mapping pump properties to the two Gaussian envelope
/// widths. The waveguide group indices needed for a first-principles map
/// are not available, so the two coefficients below are calibrated such
/// that the reference pump (5 ps, 1.5 mm) produces a Schmidt number of 1.2
/// and a 0.48 nm signal-marginal FWHM.
pub const SUM_WIDTH_COEFF_RAD: f64 = 1.426_531_357_711_578_8;
pub const DIFF_WIDTH_COEFF_RAD_M_PER_S: f64 = 2.296_751_328_638_343e8;

/// Gaussian envelope widths of the biphoton amplitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseMatchConfig {
    pub signal_center_nm: f64,
    pub idler_center_nm: f64,
    /// Amplitude σ of the sum-frequency envelope, rad/s.
    pub sum_freq_sigma: f64,
    /// Amplitude σ of the difference-frequency envelope, rad/s.
    pub diff_freq_sigma: f64,
}

impl PhaseMatchConfig {
    pub fn new(
        signal_center_nm: f64,
        idler_center_nm: f64,
        sum_freq_sigma: f64,
        diff_freq_sigma: f64,
    ) -> Result<Self, JsaError> {
        if !(sum_freq_sigma > 0.0) {
            return Err(JsaError::NonpositiveWidth(sum_freq_sigma));
        }
        if !(diff_freq_sigma > 0.0) {
            return Err(JsaError::NonpositiveWidth(diff_freq_sigma));
        }
        Ok(Self {
            signal_center_nm,
            idler_center_nm,
            sum_freq_sigma,
            diff_freq_sigma,
        })
    }

    /// Derive the envelope widths from the pump with explicit calibration
    /// coefficients. The idler center comes from energy conservation,
    /// `1/λ_i = 1/λ_p − 1/λ_s`.
    pub fn from_pump_with_coefficients(
        pump: &PumpConfig,
        signal_center_nm: f64,
        sum_coeff_rad: f64,
        diff_coeff_rad_m_per_s: f64,
    ) -> Result<Self, JsaError> {
        let idler_center_nm =
            1.0 / (1.0 / pump.center_wavelength_nm - 1.0 / signal_center_nm);
        Self::new(
            signal_center_nm,
            idler_center_nm,
            sum_coeff_rad / (pump.pulse_fwhm_ps * 1e-12),
            diff_coeff_rad_m_per_s / (pump.spot_fwhm_mm * 1e-3),
        )
    }

    /// [`Self::from_pump_with_coefficients`] with the calibrated defaults.
    pub fn from_pump(pump: &PumpConfig, signal_center_nm: f64) -> Result<Self, JsaError> {
        Self::from_pump_with_coefficients(
            pump,
            signal_center_nm,
            SUM_WIDTH_COEFF_RAD,
            DIFF_WIDTH_COEFF_RAD_M_PER_S,
        )
    }

    /// Intensity-marginal standard deviation on one wavelength axis, nm.
    /// For the double Gaussian both marginals share
    /// `σ_ω = sqrt(σ₊² + σ₋²)/2`.
    pub fn marginal_sigma_nm(&self, center_nm: f64) -> f64 {
        let sigma_omega =
            (self.sum_freq_sigma.powi(2) + self.diff_freq_sigma.powi(2)).sqrt() / 2.0;
        sigma_omega / omega_per_nm(center_nm)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridKind {
    Amplitude,
    Intensity,
}

impl std::fmt::Display for GridKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GridKind::Amplitude => write!(f, "amplitude"),
            GridKind::Intensity => write!(f, "intensity"),
        }
    }
}

/// Uniform wavelength grid holding either the joint spectral amplitude or
/// intensity. Rows follow the signal axis, columns the idler axis. Grids
/// are normalized so the total intensity (Σa² or Σp) is 1.
#[derive(Debug, Clone, PartialEq)]
pub struct JsaGrid {
    signal_axis: Vec<f64>,
    idler_axis: Vec<f64>,
    values: DMatrix<f64>,
    kind: GridKind,
}

fn check_axis(axis: &[f64]) -> Result<(), JsaError> {
    if axis.windows(2).any(|w| w[1] <= w[0]) {
        return Err(JsaError::AxisNotIncreasing);
    }
    Ok(())
}

impl JsaGrid {
    pub fn new(
        signal_axis: Vec<f64>,
        idler_axis: Vec<f64>,
        values: DMatrix<f64>,
        kind: GridKind,
    ) -> Result<Self, JsaError> {
        check_axis(&signal_axis)?;
        check_axis(&idler_axis)?;
        if signal_axis.len() != values.nrows() {
            return Err(JsaError::DimensionMismatch {
                axis_len: signal_axis.len(),
                grid_len: values.nrows(),
            });
        }
        if idler_axis.len() != values.ncols() {
            return Err(JsaError::DimensionMismatch {
                axis_len: idler_axis.len(),
                grid_len: values.ncols(),
            });
        }
        let mut grid = Self {
            signal_axis,
            idler_axis,
            values,
            kind,
        };
        grid.normalize()?;
        Ok(grid)
    }

    fn normalize(&mut self) -> Result<(), JsaError> {
        let total: f64 = match self.kind {
            GridKind::Amplitude => self.values.iter().map(|a| a * a).sum(),
            GridKind::Intensity => self.values.iter().sum(),
        };
        if total <= 0.0 {
            return Err(JsaError::DegenerateGrid);
        }
        match self.kind {
            GridKind::Amplitude => self.values /= total.sqrt(),
            GridKind::Intensity => self.values /= total,
        }
        Ok(())
    }

    pub fn signal_axis(&self) -> &[f64] {
        &self.signal_axis
    }

    pub fn idler_axis(&self) -> &[f64] {
        &self.idler_axis
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn kind(&self) -> GridKind {
        self.kind
    }

    pub fn signal_bin_nm(&self) -> f64 {
        self.signal_axis[1] - self.signal_axis[0]
    }

    pub fn idler_bin_nm(&self) -> f64 {
        self.idler_axis[1] - self.idler_axis[0]
    }

    /// Location (signal_nm, idler_nm) of the largest grid value.
    pub fn peak_position(&self) -> (f64, f64) {
        let mut best = (0, 0);
        let mut best_val = f64::NEG_INFINITY;
        for i in 0..self.values.nrows() {
            for j in 0..self.values.ncols() {
                if self.values[(i, j)] > best_val {
                    best_val = self.values[(i, j)];
                    best = (i, j);
                }
            }
        }
        (self.signal_axis[best.0], self.idler_axis[best.1])
    }

    /// Sum adjacent `factor × factor` blocks (axes become block centers).
    /// Intensity grids only; used to compare fine model grids against
    /// coarse reconstructions.
    pub fn downsample(&self, factor: usize) -> Result<JsaGrid, JsaError> {
        if self.kind != GridKind::Intensity {
            return Err(JsaError::WrongKind {
                expected: GridKind::Intensity,
                found: self.kind,
            });
        }
        let (rows, cols) = (self.values.nrows(), self.values.ncols());
        if factor == 0 || rows % factor != 0 || cols % factor != 0 {
            return Err(JsaError::DownsampleMismatch { rows, cols, factor });
        }
        let mut coarse = DMatrix::zeros(rows / factor, cols / factor);
        for i in 0..rows {
            for j in 0..cols {
                coarse[(i / factor, j / factor)] += self.values[(i, j)];
            }
        }
        let center = |axis: &[f64], block: usize| -> f64 {
            axis[block * factor..(block + 1) * factor].iter().sum::<f64>() / factor as f64
        };
        let signal_axis = (0..rows / factor).map(|b| center(&self.signal_axis, b)).collect();
        let idler_axis = (0..cols / factor).map(|b| center(&self.idler_axis, b)).collect();
        JsaGrid::new(signal_axis, idler_axis, coarse, GridKind::Intensity)
    }
}

/// Requested sampling of the (λ_s, λ_i) plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub signal_min_nm: f64,
    pub signal_max_nm: f64,
    pub n_signal: usize,
    pub idler_min_nm: f64,
    pub idler_max_nm: f64,
    pub n_idler: usize,
}

impl GridSpec {
    /// Square sampling centered on the emission centers, spanning
    /// ±`span_sigmas` marginal widths with `n` points per axis.
    pub fn centered(pm: &PhaseMatchConfig, span_sigmas: f64, n: usize) -> Self {
        let s_sigma = pm.marginal_sigma_nm(pm.signal_center_nm);
        let i_sigma = pm.marginal_sigma_nm(pm.idler_center_nm);
        Self {
            signal_min_nm: pm.signal_center_nm - span_sigmas * s_sigma,
            signal_max_nm: pm.signal_center_nm + span_sigmas * s_sigma,
            n_signal: n,
            idler_min_nm: pm.idler_center_nm - span_sigmas * i_sigma,
            idler_max_nm: pm.idler_center_nm + span_sigmas * i_sigma,
            n_idler: n,
        }
    }

    /// The default working resolution: 512×512 spanning ±4σ.
    pub fn default_for(pm: &PhaseMatchConfig) -> Self {
        Self::centered(pm, 4.0, 512)
    }

    pub fn signal_axis(&self) -> Vec<f64> {
        linspace(self.signal_min_nm, self.signal_max_nm, self.n_signal)
    }

    pub fn idler_axis(&self) -> Vec<f64> {
        linspace(self.idler_min_nm, self.idler_max_nm, self.n_idler)
    }
}

fn linspace(min: f64, max: f64, n: usize) -> Vec<f64> {
    let step = (max - min) / (n.max(2) - 1) as f64;
    (0..n).map(|i| min + i as f64 * step).collect()
}

fn check_sampling(
    axis_name: &'static str,
    min: f64,
    max: f64,
    n: usize,
    center: f64,
    sigma_nm: f64,
) -> Result<(), JsaError> {
    let span_sigmas = ((max - center).min(center - min)) / sigma_nm;
    if span_sigmas < 3.0 - 1e-9 {
        return Err(JsaError::GridTooNarrow {
            axis: axis_name,
            span_sigmas,
        });
    }
    let total_span = (max - min) / sigma_nm;
    let points_per_sigma = n as f64 / total_span;
    if points_per_sigma < 32.0 * (1.0 - 1e-9) {
        return Err(JsaError::GridTooCoarse {
            axis: axis_name,
            points_per_sigma,
        });
    }
    Ok(())
}

/// Sample the double-Gaussian joint spectral amplitude on the requested
/// grid. The pump enters through the energy-conservation check on the
/// emission centers; the envelope widths come pre-calibrated in `pm`.
pub fn compute_jsa(
    pump: &PumpConfig,
    pm: &PhaseMatchConfig,
    spec: &GridSpec,
) -> Result<JsaGrid, JsaError> {
    let omega_s0 = angular_frequency(pm.signal_center_nm);
    let omega_i0 = angular_frequency(pm.idler_center_nm);
    let omega_p0 = angular_frequency(pump.center_wavelength_nm);
    // Centers must sit on the energy-conservation ridge to within a few
    // grid bins, otherwise the sampled envelope is silently off-center.
    let bin_omega = (spec.signal_max_nm - spec.signal_min_nm)
        / (spec.n_signal.max(2) - 1) as f64
        * omega_per_nm(pm.signal_center_nm);
    let mismatch = (omega_s0 + omega_i0 - omega_p0).abs();
    if mismatch > 3.0 * bin_omega {
        return Err(JsaError::EnergyConservation {
            mismatch_rad_per_s: mismatch,
        });
    }

    let s_sigma_nm = pm.marginal_sigma_nm(pm.signal_center_nm);
    let i_sigma_nm = pm.marginal_sigma_nm(pm.idler_center_nm);
    check_sampling(
        "signal",
        spec.signal_min_nm,
        spec.signal_max_nm,
        spec.n_signal,
        pm.signal_center_nm,
        s_sigma_nm,
    )?;
    check_sampling(
        "idler",
        spec.idler_min_nm,
        spec.idler_max_nm,
        spec.n_idler,
        pm.idler_center_nm,
        i_sigma_nm,
    )?;

    let signal_axis = spec.signal_axis();
    let idler_axis = spec.idler_axis();
    let nu_s: Vec<f64> = signal_axis
        .iter()
        .map(|&nm| angular_frequency(nm) - omega_s0)
        .collect();
    let nu_i: Vec<f64> = idler_axis
        .iter()
        .map(|&nm| angular_frequency(nm) - omega_i0)
        .collect();
    let inv_sum = 1.0 / (4.0 * pm.sum_freq_sigma * pm.sum_freq_sigma);
    let inv_diff = 1.0 / (4.0 * pm.diff_freq_sigma * pm.diff_freq_sigma);
    let values = DMatrix::from_fn(signal_axis.len(), idler_axis.len(), |i, j| {
        let plus = nu_s[i] + nu_i[j];
        let minus = nu_s[i] - nu_i[j];
        (-(plus * plus) * inv_sum - (minus * minus) * inv_diff).exp()
    });
    JsaGrid::new(signal_axis, idler_axis, values, GridKind::Amplitude)
}

/// Elementwise square of an amplitude grid, renormalized to unit sum.
pub fn jsi_from_jsa(grid: &JsaGrid) -> Result<JsaGrid, JsaError> {
    if grid.kind != GridKind::Amplitude {
        return Err(JsaError::WrongKind {
            expected: GridKind::Amplitude,
            found: grid.kind,
        });
    }
    JsaGrid::new(
        grid.signal_axis.clone(),
        grid.idler_axis.clone(),
        grid.values.map(|a| a * a),
        GridKind::Intensity,
    )
}

fn schmidt_of_matrix(matrix: &DMatrix<f64>) -> Result<(Vec<f64>, f64), JsaError> {
    let frob2: f64 = matrix.iter().map(|a| a * a).sum();
    if frob2 <= 0.0 {
        return Err(JsaError::DegenerateGrid);
    }
    let svd = matrix.clone().svd(false, false);
    let mut singular: Vec<f64> = svd.singular_values.iter().copied().collect();
    singular.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let norm2: f64 = singular.iter().map(|s| s * s).sum();
    for s in &mut singular {
        *s /= norm2.sqrt();
    }
    let purity: f64 = singular.iter().map(|s| s.powi(4)).sum();
    Ok((singular, 1.0 / purity))
}

/// Schmidt decomposition of an amplitude grid: normalized singular values
/// (descending, Σλ̃² = 1) and the Schmidt number `K = 1/Σλ̃⁴`.
pub fn schmidt_decompose(grid: &JsaGrid) -> Result<(Vec<f64>, f64), JsaError> {
    if grid.kind != GridKind::Amplitude {
        return Err(JsaError::WrongKind {
            expected: GridKind::Amplitude,
            found: grid.kind,
        });
    }
    schmidt_of_matrix(&grid.values)
}

/// Schmidt number of the elementwise square root of a measured intensity.
/// Phase information is lost in an intensity measurement, so for a general
/// state this is a lower bound on the true Schmidt number; it is tight when
/// the underlying amplitude is real and non-negative.
pub fn schmidt_lower_bound(jsi: &JsaGrid) -> Result<f64, JsaError> {
    if jsi.kind != GridKind::Intensity {
        return Err(JsaError::WrongKind {
            expected: GridKind::Intensity,
            found: jsi.kind,
        });
    }
    for i in 0..jsi.values.nrows() {
        for j in 0..jsi.values.ncols() {
            let value = jsi.values[(i, j)];
            if value < 0.0 {
                return Err(JsaError::NegativeIntensity { row: i, col: j, value });
            }
        }
    }
    let root = jsi.values.map(f64::sqrt);
    schmidt_of_matrix(&root).map(|(_, k)| k)
}

/// Same Schmidt number as [`schmidt_decompose`] through the Gram-matrix
/// trace identity `K = (tr G)² / tr(G²)` with `G = A Aᵀ`, which avoids the
/// SVD for large grids. Used for resolution-convergence checks.
pub fn schmidt_number_via_gram(grid: &JsaGrid) -> Result<f64, JsaError> {
    if grid.kind != GridKind::Amplitude {
        return Err(JsaError::WrongKind {
            expected: GridKind::Amplitude,
            found: grid.kind,
        });
    }
    let trace: f64 = grid.values.iter().map(|a| a * a).sum();
    if trace <= 0.0 {
        return Err(JsaError::DegenerateGrid);
    }
    let gram = &grid.values * grid.values.transpose();
    let trace_sq: f64 = gram.iter().map(|g| g * g).sum();
    Ok(trace * trace / trace_sq)
}

/// Schmidt number at the working resolution together with the change
/// observed when the resolution doubles; `|delta| < 1e-3` means converged.
pub fn schmidt_convergence(
    pump: &PumpConfig,
    pm: &PhaseMatchConfig,
    spec: &GridSpec,
) -> Result<(f64, f64), JsaError> {
    let coarse = compute_jsa(pump, pm, spec)?;
    let k = schmidt_number_via_gram(&coarse)?;
    let mut doubled = *spec;
    doubled.n_signal *= 2;
    doubled.n_idler *= 2;
    let fine = compute_jsa(pump, pm, &doubled)?;
    let k_fine = schmidt_number_via_gram(&fine)?;
    Ok((k, k_fine - k))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarginalAxis {
    Signal,
    Idler,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginalSpectrum {
    pub wavelengths_nm: Vec<f64>,
    /// Normalized to Σw = 1.
    pub weights: Vec<f64>,
    pub fwhm_nm: f64,
}

/// Trace the intensity over the other axis and measure the FWHM of what
/// remains, interpolating linearly between the bracketing bins.
pub fn marginal_spectrum(jsi: &JsaGrid, axis: MarginalAxis) -> Result<MarginalSpectrum, JsaError> {
    if jsi.kind != GridKind::Intensity {
        return Err(JsaError::WrongKind {
            expected: GridKind::Intensity,
            found: jsi.kind,
        });
    }
    let (wavelengths, weights): (Vec<f64>, Vec<f64>) = match axis {
        MarginalAxis::Signal => (
            jsi.signal_axis.clone(),
            (0..jsi.values.nrows()).map(|i| jsi.values.row(i).sum()).collect(),
        ),
        MarginalAxis::Idler => (
            jsi.idler_axis.clone(),
            (0..jsi.values.ncols()).map(|j| jsi.values.column(j).sum()).collect(),
        ),
    };
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(JsaError::DegenerateGrid);
    }
    let weights: Vec<f64> = weights.into_iter().map(|w| w / total).collect();
    let fwhm_nm = fwhm_interpolated(&wavelengths, &weights);
    Ok(MarginalSpectrum {
        wavelengths_nm: wavelengths,
        weights,
        fwhm_nm,
    })
}

/// FWHM of a sampled profile by linear interpolation around the half-max
/// crossings. Degenerate single-bin peaks report one bin width.
pub fn fwhm_interpolated(x: &[f64], w: &[f64]) -> f64 {
    let peak = w
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap_or(0);
    let half = w[peak] / 2.0;
    let bin = if x.len() > 1 { x[1] - x[0] } else { 0.0 };

    let mut left = x[0];
    for i in (0..peak).rev() {
        if w[i] < half {
            let frac = (half - w[i]) / (w[i + 1] - w[i]);
            left = x[i] + frac * (x[i + 1] - x[i]);
            break;
        }
        if i == 0 {
            left = x[0];
        }
    }
    if peak == 0 {
        // peak sits on the boundary; treat the edge as the crossing minus
        // the usual half-bin of a lone peak
        left = x[0] - 0.5 * bin;
    }
    let mut right = *x.last().unwrap();
    let mut crossed = false;
    for i in peak + 1..w.len() {
        if w[i] < half {
            let frac = (w[i - 1] - half) / (w[i - 1] - w[i]);
            right = x[i - 1] + frac * (x[i] - x[i - 1]);
            crossed = true;
            break;
        }
    }
    if peak + 1 == w.len() {
        right = *x.last().unwrap() + 0.5 * bin;
    } else if !crossed {
        right = *x.last().unwrap();
    }
    right - left
}

/// Smear an intensity grid with an isotropic Gaussian kernel of standard
/// deviation `sigma_nm` (separable convolution, renormalized).
pub fn gaussian_blur(jsi: &JsaGrid, sigma_nm: f64) -> Result<JsaGrid, JsaError> {
    if jsi.kind != GridKind::Intensity {
        return Err(JsaError::WrongKind {
            expected: GridKind::Intensity,
            found: jsi.kind,
        });
    }
    if sigma_nm <= 0.0 {
        return Err(JsaError::NonpositiveWidth(sigma_nm));
    }
    let blur_axis = |values: &DMatrix<f64>, bin_nm: f64, along_rows: bool| -> DMatrix<f64> {
        let sigma_bins = sigma_nm / bin_nm;
        let half = (5.0 * sigma_bins).ceil() as i64;
        let kernel: Vec<f64> = (-half..=half)
            .map(|k| (-(k as f64).powi(2) / (2.0 * sigma_bins * sigma_bins)).exp())
            .collect();
        let ksum: f64 = kernel.iter().sum();
        let n = if along_rows { values.nrows() } else { values.ncols() };
        let m = if along_rows { values.ncols() } else { values.nrows() };
        let mut out = DMatrix::zeros(values.nrows(), values.ncols());
        for j in 0..m {
            for i in 0..n {
                let mut acc = 0.0;
                for (ki, &kw) in kernel.iter().enumerate() {
                    let src = i as i64 + ki as i64 - half;
                    if src >= 0 && (src as usize) < n {
                        let v = if along_rows {
                            values[(src as usize, j)]
                        } else {
                            values[(j, src as usize)]
                        };
                        acc += kw * v;
                    }
                }
                if along_rows {
                    out[(i, j)] = acc / ksum;
                } else {
                    out[(j, i)] = acc / ksum;
                }
            }
        }
        out
    };
    let pass1 = blur_axis(&jsi.values, jsi.signal_bin_nm(), true);
    let pass2 = blur_axis(&pass1, jsi.idler_bin_nm(), false);
    JsaGrid::new(
        jsi.signal_axis.clone(),
        jsi.idler_axis.clone(),
        pass2,
        GridKind::Intensity,
    )
}

/// Serialize an intensity grid as plain text: two header lines carrying the
/// axis ranges and bin counts, then one whitespace-separated row per signal
/// bin.
pub fn write_jsi_text(jsi: &JsaGrid) -> Result<String, JsaError> {
    if jsi.kind != GridKind::Intensity {
        return Err(JsaError::WrongKind {
            expected: GridKind::Intensity,
            found: jsi.kind,
        });
    }
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# signal_nm {} {} {}",
        jsi.signal_axis[0],
        jsi.signal_axis.last().unwrap(),
        jsi.signal_axis.len()
    );
    let _ = writeln!(
        out,
        "# idler_nm {} {} {}",
        jsi.idler_axis[0],
        jsi.idler_axis.last().unwrap(),
        jsi.idler_axis.len()
    );
    for i in 0..jsi.values.nrows() {
        let row: Vec<String> = (0..jsi.values.ncols())
            .map(|j| format!("{}", jsi.values[(i, j)]))
            .collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
    Ok(out)
}

pub fn save_jsi(jsi: &JsaGrid, path: &Path) -> Result<(), JsaError> {
    fs::write(path, write_jsi_text(jsi)?)?;
    Ok(())
}

fn parse_header(line: &str, label: &str) -> Result<(f64, f64, usize), JsaError> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 5 || fields[0] != "#" || fields[1] != label {
        return Err(JsaError::BadFormat(format!(
            "expected header '# {label} <min> <max> <n>', got '{line}'"
        )));
    }
    let min = fields[2]
        .parse()
        .map_err(|e| JsaError::BadFormat(format!("bad {label} min: {e}")))?;
    let max = fields[3]
        .parse()
        .map_err(|e| JsaError::BadFormat(format!("bad {label} max: {e}")))?;
    let n = fields[4]
        .parse()
        .map_err(|e| JsaError::BadFormat(format!("bad {label} count: {e}")))?;
    Ok((min, max, n))
}

pub fn read_jsi_text(text: &str) -> Result<JsaGrid, JsaError> {
    let mut lines = text.lines();
    let (s_min, s_max, n_s) = parse_header(
        lines.next().ok_or_else(|| JsaError::BadFormat("empty file".into()))?,
        "signal_nm",
    )?;
    let (i_min, i_max, n_i) = parse_header(
        lines.next().ok_or_else(|| JsaError::BadFormat("missing idler header".into()))?,
        "idler_nm",
    )?;
    let mut values = DMatrix::zeros(n_s, n_i);
    let mut row = 0;
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        if row >= n_s {
            return Err(JsaError::BadFormat(format!("more than {n_s} data rows")));
        }
        let mut col = 0;
        for field in line.split_whitespace() {
            if col >= n_i {
                return Err(JsaError::BadFormat(format!(
                    "row {row} has more than {n_i} columns"
                )));
            }
            values[(row, col)] = field
                .parse()
                .map_err(|e| JsaError::BadFormat(format!("row {row} col {col}: {e}")))?;
            col += 1;
        }
        if col != n_i {
            return Err(JsaError::BadFormat(format!(
                "row {row} has {col} columns, expected {n_i}"
            )));
        }
        row += 1;
    }
    if row != n_s {
        return Err(JsaError::BadFormat(format!(
            "found {row} data rows, expected {n_s}"
        )));
    }
    JsaGrid::new(
        linspace(s_min, s_max, n_s),
        linspace(i_min, i_max, n_i),
        values,
        GridKind::Intensity,
    )
}

pub fn load_jsi(path: &Path) -> Result<JsaGrid, JsaError> {
    read_jsi_text(&fs::read_to_string(path)?)
}
