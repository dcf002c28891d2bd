//! Classical linear-optics model of the chip and the inverse problems used
//! to characterize it.
//!
//! The device facets form a low-finesse Fabry-Perot cavity, so a wavelength
//! scan of the transmitted power shows fringes whose contrast encodes the
//! propagation loss independently of the coupling efficiencies:
//! `C = 2Ra/(1 + (Ra)²)` with `a = e^{−αL}`, inverted as
//! `Ra = (1 − √(1−C²))/C`, `α = −ln(Ra/R)/L`.

use std::fs;
use std::path::Path;

use nalgebra::Matrix2;
use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CircuitError {
    #[error("fewer than {needed} fringe extrema found ({found}); scan more periods")]
    NoFringesDetected { found: usize, needed: usize },
    #[error("fringe contrast {0} outside (0, 1)")]
    ContrastOutOfRange(f64),
    #[error("contrast implies round-trip factor Ra = {ra:.4} above the facet reflectivity R = {r}; R is inconsistent")]
    InconsistentReflectivity { ra: f64, r: f64 },
    #[error("spectra have different wavelength axes")]
    AxisMismatch,
    #[error("zero total power at sample {index} (λ = {wavelength_nm} nm)")]
    ZeroTotalPower { index: usize, wavelength_nm: f64 },
    #[error("splitting ratio {0} outside [0, 1]")]
    InvalidRatio(f64),
    #[error("facet reflectivity {0} outside [0, 1)")]
    InvalidReflectivity(f64),
    #[error("device length {0} cm must be positive")]
    NonpositiveLength(f64),
    #[error("loss coefficient {0} cm⁻¹ must be non-negative")]
    NegativeLoss(f64),
    #[error("spectrum has {0} samples; need at least {1}")]
    TooFewSamples(usize, usize),
    #[error("malformed spectrum file: {0}")]
    BadFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarization {
    Te,
    Tm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Port {
    One,
    Two,
}

/// Geometry and optical constants of the waveguide circuit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveguideCircuit {
    pub device_length_cm: f64,
    /// Power reflectivity per facet.
    pub facet_reflectivity: f64,
    pub loss_te_per_cm: f64,
    pub loss_tm_per_cm: f64,
    /// Fraction of the signal routed to port 1.
    pub splitter_ratio: f64,
    /// Shift of the port-2 Fabry-Perot phase relative to port 1, radians.
    /// The splitter geometry nominally contributes π/2, but fabrication
    /// offsets of order λ/4 move it device to device.
    pub splitter_phase: f64,
    pub group_index: f64,
}

/// Normal-incidence Fresnel estimate for a semiconductor/air facet; the
/// device reflectivity is not measured directly, so inversions take it as
/// an input with this default.
pub const DEFAULT_FACET_REFLECTIVITY: f64 = 0.27;

impl WaveguideCircuit {
    pub fn new(
        device_length_cm: f64,
        facet_reflectivity: f64,
        loss_te_per_cm: f64,
        loss_tm_per_cm: f64,
        splitter_ratio: f64,
        splitter_phase: f64,
        group_index: f64,
    ) -> Result<Self, CircuitError> {
        if !(device_length_cm > 0.0) {
            return Err(CircuitError::NonpositiveLength(device_length_cm));
        }
        if !(0.0..1.0).contains(&facet_reflectivity) {
            return Err(CircuitError::InvalidReflectivity(facet_reflectivity));
        }
        if !(loss_te_per_cm >= 0.0) {
            return Err(CircuitError::NegativeLoss(loss_te_per_cm));
        }
        if !(loss_tm_per_cm >= 0.0) {
            return Err(CircuitError::NegativeLoss(loss_tm_per_cm));
        }
        if !(0.0..=1.0).contains(&splitter_ratio) {
            return Err(CircuitError::InvalidRatio(splitter_ratio));
        }
        Ok(Self {
            device_length_cm,
            facet_reflectivity,
            loss_te_per_cm,
            loss_tm_per_cm,
            splitter_ratio,
            splitter_phase,
            group_index,
        })
    }

    /// The 3 mm characterized device: α = 1.3 cm⁻¹ (TM) / 0.9 cm⁻¹ (TE),
    /// splitting ratio 49.5 %, fringes of the two ports aligned (the
    /// measured sample compensates the nominal π/2 splitter phase).
    pub fn paper_device() -> Self {
        Self {
            device_length_cm: 0.3,
            facet_reflectivity: DEFAULT_FACET_REFLECTIVITY,
            loss_te_per_cm: 0.9,
            loss_tm_per_cm: 1.3,
            splitter_ratio: 0.495,
            splitter_phase: 0.0,
            group_index: 3.5,
        }
    }

    pub fn loss_per_cm(&self, pol: Polarization) -> f64 {
        match pol {
            Polarization::Te => self.loss_te_per_cm,
            Polarization::Tm => self.loss_tm_per_cm,
        }
    }

    /// Fringe period `Δλ = λ²/(2 n_g L)` in nm at wavelength `lambda_nm`.
    pub fn free_spectral_range_nm(&self, lambda_nm: f64) -> f64 {
        lambda_nm * lambda_nm / (2.0 * self.group_index * self.device_length_cm * 1e7)
    }
}

/// Transmitted power against wavelength at one output port.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionSpectrum {
    pub wavelengths_nm: Vec<f64>,
    pub power: Vec<f64>,
    pub port: Port,
}

impl TransmissionSpectrum {
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.wavelengths_nm.len() * 24);
        for (lambda, p) in self.wavelengths_nm.iter().zip(&self.power) {
            out.push_str(&format!("{lambda} {p}\n"));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), CircuitError> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    /// Parse two-column text (wavelength nm, power); `#` lines are comments
    /// and commas are accepted as delimiters.
    pub fn from_text(text: &str, port: Port) -> Result<Self, CircuitError> {
        let mut wavelengths_nm = Vec::new();
        let mut power = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|f| !f.is_empty())
                .collect();
            if fields.len() != 2 {
                return Err(CircuitError::BadFormat(format!(
                    "line {}: expected 2 columns, found {}",
                    lineno + 1,
                    fields.len()
                )));
            }
            let lambda: f64 = fields[0]
                .parse()
                .map_err(|e| CircuitError::BadFormat(format!("line {}: {e}", lineno + 1)))?;
            let p: f64 = fields[1]
                .parse()
                .map_err(|e| CircuitError::BadFormat(format!("line {}: {e}", lineno + 1)))?;
            if p < 0.0 {
                return Err(CircuitError::BadFormat(format!(
                    "line {}: negative power {p}",
                    lineno + 1
                )));
            }
            wavelengths_nm.push(lambda);
            power.push(p);
        }
        Ok(Self {
            wavelengths_nm,
            power,
            port,
        })
    }

    pub fn load(path: &Path, port: Port) -> Result<Self, CircuitError> {
        Self::from_text(&fs::read_to_string(path)?, port)
    }
}

/// Airy transmission of the facet cavity at one port:
/// `T(λ) = f_port (1−R)² a / [(1−Ra)² + 4Ra sin²(2π n_g L / λ + δ_port)]`
/// with `a = e^{−αL}` and `f_port` the splitter fraction.
pub fn fp_transmission_spectrum(
    circuit: &WaveguideCircuit,
    port: Port,
    pol: Polarization,
    wavelengths_nm: &[f64],
) -> TransmissionSpectrum {
    let r = circuit.facet_reflectivity;
    let alpha = circuit.loss_per_cm(pol);
    let a = (-alpha * circuit.device_length_cm).exp();
    let ra = r * a;
    let numerator = (1.0 - r) * (1.0 - r) * a;
    let (fraction, phase_offset) = match port {
        Port::One => (circuit.splitter_ratio, 0.0),
        Port::Two => (1.0 - circuit.splitter_ratio, circuit.splitter_phase),
    };
    let optical_length_nm = circuit.group_index * circuit.device_length_cm * 1e7;
    let power = wavelengths_nm
        .iter()
        .map(|&lambda| {
            let phi = 2.0 * std::f64::consts::PI * optical_length_nm / lambda + phase_offset;
            let s = phi.sin();
            fraction * numerator / ((1.0 - ra) * (1.0 - ra) + 4.0 * ra * s * s)
        })
        .collect();
    TransmissionSpectrum {
        wavelengths_nm: wavelengths_nm.to_vec(),
        power,
        port,
    }
}

fn median_filter_5(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(2);
            let hi = (i + 3).min(n);
            let mut window: Vec<f64> = values[lo..hi].to_vec();
            window.sort_by(|a, b| a.partial_cmp(b).unwrap());
            window[window.len() / 2]
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ExtremumKind {
    Max,
    Min,
}

/// Indices of alternating local extrema, located on a median-filtered copy
/// with a 5-point comparison window.
fn locate_extrema(power: &[f64]) -> Vec<(usize, ExtremumKind)> {
    let filtered = median_filter_5(power);
    let n = filtered.len();
    let mut extrema = Vec::new();
    for i in 2..n.saturating_sub(2) {
        let window = &filtered[i - 2..=i + 2];
        let center = filtered[i];
        let is_max = window.iter().all(|&v| v <= center)
            && (filtered[i - 2] < center || filtered[i + 2] < center);
        let is_min = window.iter().all(|&v| v >= center)
            && (filtered[i - 2] > center || filtered[i + 2] > center);
        let kind = if is_max {
            ExtremumKind::Max
        } else if is_min {
            ExtremumKind::Min
        } else {
            continue;
        };
        // keep strict alternation; plateaus produce runs collapsed here
        if let Some(&(last_i, last_kind)) = extrema.last() {
            if last_kind == kind {
                if i == last_i + 1 {
                    continue;
                }
                continue;
            }
        }
        extrema.push((i, kind));
    }
    extrema
}

/// One per-fringe loss estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FringeEstimate {
    pub wavelength_nm: f64,
    pub contrast: f64,
    pub alpha_per_cm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossEstimate {
    pub alpha_per_cm: f64,
    pub alpha_sigma: f64,
    pub fringes: Vec<FringeEstimate>,
}

/// Extract the propagation loss from fringe contrast, one estimate per
/// adjacent max/min pair, averaged. Needs the facet reflectivity as input;
/// coupling efficiencies cancel in the contrast.
pub fn extract_loss_from_contrast(
    spectrum: &TransmissionSpectrum,
    facet_reflectivity: f64,
    device_length_cm: f64,
) -> Result<LossEstimate, CircuitError> {
    if !(0.0..1.0).contains(&facet_reflectivity) || facet_reflectivity == 0.0 {
        return Err(CircuitError::InvalidReflectivity(facet_reflectivity));
    }
    if !(device_length_cm > 0.0) {
        return Err(CircuitError::NonpositiveLength(device_length_cm));
    }
    if spectrum.power.len() < 16 {
        return Err(CircuitError::TooFewSamples(spectrum.power.len(), 16));
    }
    let extrema = locate_extrema(&spectrum.power);
    let n_max = extrema
        .iter()
        .filter(|(_, k)| *k == ExtremumKind::Max)
        .count();
    if n_max < 3 {
        return Err(CircuitError::NoFringesDetected {
            found: n_max,
            needed: 3,
        });
    }

    // contrast from the raw samples around each located extremum, so the
    // median filter cannot bite into the fringe amplitude
    let raw_at = |index: usize, kind: ExtremumKind| -> f64 {
        let lo = index.saturating_sub(2);
        let hi = (index + 3).min(spectrum.power.len());
        let window = &spectrum.power[lo..hi];
        match kind {
            ExtremumKind::Max => window.iter().cloned().fold(f64::MIN, f64::max),
            ExtremumKind::Min => window.iter().cloned().fold(f64::MAX, f64::min),
        }
    };

    let mut fringes = Vec::new();
    for pair in extrema.windows(2) {
        let (i0, k0) = pair[0];
        let (i1, k1) = pair[1];
        if k0 == k1 {
            continue;
        }
        let (t_max, t_min) = match k0 {
            ExtremumKind::Max => (raw_at(i0, k0), raw_at(i1, k1)),
            ExtremumKind::Min => (raw_at(i1, k1), raw_at(i0, k0)),
        };
        let contrast = (t_max - t_min) / (t_max + t_min);
        if !(contrast > 0.0 && contrast < 1.0) {
            return Err(CircuitError::ContrastOutOfRange(contrast));
        }
        let ra = (1.0 - (1.0 - contrast * contrast).sqrt()) / contrast;
        if ra > facet_reflectivity * (1.0 + 1e-9) {
            return Err(CircuitError::InconsistentReflectivity {
                ra,
                r: facet_reflectivity,
            });
        }
        let alpha = -(ra / facet_reflectivity).min(1.0).ln() / device_length_cm;
        fringes.push(FringeEstimate {
            wavelength_nm: 0.5
                * (spectrum.wavelengths_nm[i0] + spectrum.wavelengths_nm[i1]),
            contrast,
            alpha_per_cm: alpha,
        });
    }
    let n = fringes.len() as f64;
    let mean = fringes.iter().map(|f| f.alpha_per_cm).sum::<f64>() / n;
    let var = fringes
        .iter()
        .map(|f| (f.alpha_per_cm - mean).powi(2))
        .sum::<f64>()
        / (n - 1.0).max(1.0);
    Ok(LossEstimate {
        alpha_per_cm: mean,
        alpha_sigma: var.sqrt(),
        fringes,
    })
}

/// Pointwise `P₁/(P₁+P₂)` averaged over the scanned band, with the sample
/// standard deviation as the uncertainty. A common rescaling of both
/// spectra (coupling drift) cancels exactly.
pub fn splitting_ratio_estimate(
    spec1: &TransmissionSpectrum,
    spec2: &TransmissionSpectrum,
) -> Result<(f64, f64), CircuitError> {
    if spec1.wavelengths_nm.len() != spec2.wavelengths_nm.len()
        || spec1
            .wavelengths_nm
            .iter()
            .zip(&spec2.wavelengths_nm)
            .any(|(a, b)| (a - b).abs() > 1e-9)
    {
        return Err(CircuitError::AxisMismatch);
    }
    let mut ratios = Vec::with_capacity(spec1.power.len());
    for (index, (p1, p2)) in spec1.power.iter().zip(&spec2.power).enumerate() {
        let total = p1 + p2;
        if total <= 0.0 {
            return Err(CircuitError::ZeroTotalPower {
                index,
                wavelength_nm: spec1.wavelengths_nm[index],
            });
        }
        ratios.push(p1 / total);
    }
    let n = ratios.len() as f64;
    let mean = ratios.iter().sum::<f64>() / n;
    let var = ratios.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    Ok((mean, var.sqrt()))
}

/// 2×2 transfer matrix of the splitter,
/// `[[√r, i√(1−r) e^{iδ}], [i√(1−r), √r e^{iδ}]]`, unitary for any real δ.
pub fn mmi_unitary(ratio: f64, phase: f64) -> Result<Matrix2<Complex64>, CircuitError> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(CircuitError::InvalidRatio(ratio));
    }
    let t = Complex64::new(ratio.sqrt(), 0.0);
    let k = Complex64::new(0.0, (1.0 - ratio).sqrt());
    let delta = Complex64::new(0.0, phase).exp();
    Ok(Matrix2::new(t, k * delta, k, t * delta))
}

/// Frobenius norm of `U†U − I`.
pub fn unitarity_defect(u: &Matrix2<Complex64>) -> f64 {
    let residual = u.adjoint() * u - Matrix2::identity();
    residual.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scan(min_nm: f64, max_nm: f64, step_nm: f64) -> Vec<f64> {
        let n = ((max_nm - min_nm) / step_nm).round() as usize;
        (0..=n).map(|i| min_nm + i as f64 * step_nm).collect()
    }

    /// Analytic fringe contrast of the Airy model, `2Ra/(1+(Ra)²)`.
    fn airy_contrast(r: f64, alpha: f64, length_cm: f64) -> f64 {
        let ra = r * (-alpha * length_cm).exp();
        2.0 * ra / (1.0 + ra * ra)
    }

    #[test]
    fn no_cavity_means_flat_spectrum() {
        let mut circuit = WaveguideCircuit::paper_device();
        circuit.facet_reflectivity = 0.0;
        let wl = scan(1539.0, 1541.0, 0.001);
        let spec = fp_transmission_spectrum(&circuit, Port::One, Polarization::Tm, &wl);
        let expected = circuit.splitter_ratio * (-1.3 * 0.3f64).exp();
        for p in &spec.power {
            assert_relative_eq!(*p, expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn fringe_spacing_matches_free_spectral_range() {
        let circuit = WaveguideCircuit::paper_device();
        let fsr = circuit.free_spectral_range_nm(1540.0);
        assert!((fsr - 0.1129333).abs() < 1e-6, "FSR = {fsr}");
        let span = 2.0;
        let wl = scan(1539.0, 1539.0 + span, 0.0005);
        let spec = fp_transmission_spectrum(&circuit, Port::One, Polarization::Tm, &wl);
        let maxima = locate_extrema(&spec.power)
            .into_iter()
            .filter(|(_, k)| *k == ExtremumKind::Max)
            .count();
        let expected = (span / fsr).floor();
        assert!(
            (maxima as f64 - expected).abs() <= 1.0,
            "{maxima} maxima over {span} nm, expected ≈ {expected}"
        );
    }

    #[test]
    fn forward_contrast_matches_analytic_anchor() {
        // C(R = 0.27, α = 1.3 cm⁻¹, L = 0.3 cm) = 2Ra/(1+(Ra)²) = 0.353788
        let anchor = airy_contrast(0.27, 1.3, 0.3);
        assert_relative_eq!(anchor, 0.353_787_899_586_481_8, epsilon = 1e-12);
        let circuit = WaveguideCircuit::paper_device();
        let wl = scan(1539.0, 1542.0, 0.0005);
        let spec = fp_transmission_spectrum(&circuit, Port::One, Polarization::Tm, &wl);
        let estimate = extract_loss_from_contrast(&spec, 0.27, 0.3).unwrap();
        let measured_contrast =
            estimate.fringes.iter().map(|f| f.contrast).sum::<f64>() / estimate.fringes.len() as f64;
        assert!(
            (measured_contrast - anchor).abs() < 2e-3,
            "sampled contrast {measured_contrast} vs {anchor}"
        );
    }

    #[test]
    fn loss_roundtrip_recovers_both_polarizations() {
        let circuit = WaveguideCircuit::paper_device();
        let wl = scan(1538.0, 1543.0, 0.0005);
        for (pol, alpha) in [(Polarization::Tm, 1.3), (Polarization::Te, 0.9)] {
            let spec = fp_transmission_spectrum(&circuit, Port::One, pol, &wl);
            let estimate = extract_loss_from_contrast(&spec, 0.27, 0.3).unwrap();
            assert!(
                (estimate.alpha_per_cm - alpha).abs() < 0.03,
                "recovered {} for α = {alpha}",
                estimate.alpha_per_cm
            );
            assert!(estimate.alpha_sigma < 0.05);
        }
    }

    #[test]
    fn lossless_contrast_bound_gives_zero_loss() {
        let mut circuit = WaveguideCircuit::paper_device();
        circuit.loss_tm_per_cm = 0.0;
        let wl = scan(1539.0, 1542.0, 0.0005);
        let spec = fp_transmission_spectrum(&circuit, Port::One, Polarization::Tm, &wl);
        let estimate = extract_loss_from_contrast(&spec, 0.27, 0.3).unwrap();
        assert!(
            estimate.alpha_per_cm.abs() < 0.01,
            "α = {}",
            estimate.alpha_per_cm
        );
    }

    #[test]
    fn inconsistent_reflectivity_is_reported() {
        let circuit = WaveguideCircuit::paper_device();
        let wl = scan(1539.0, 1542.0, 0.0005);
        let spec = fp_transmission_spectrum(&circuit, Port::One, Polarization::Tm, &wl);
        // claiming a smaller R than the one that generated the fringes
        // implies a > 1, which the inversion must refuse
        assert!(matches!(
            extract_loss_from_contrast(&spec, 0.10, 0.3),
            Err(CircuitError::InconsistentReflectivity { .. })
        ));
    }

    #[test]
    fn no_fringes_detected_on_flat_data() {
        let wl = scan(1539.0, 1542.0, 0.01);
        let spec = TransmissionSpectrum {
            power: vec![1.0; wl.len()],
            wavelengths_nm: wl,
            port: Port::One,
        };
        assert!(matches!(
            extract_loss_from_contrast(&spec, 0.27, 0.3),
            Err(CircuitError::NoFringesDetected { .. })
        ));
    }

    #[test]
    fn splitting_ratio_identical_spectra_is_half() {
        let circuit = WaveguideCircuit::paper_device();
        let wl = scan(1539.0, 1542.0, 0.001);
        let spec = fp_transmission_spectrum(&circuit, Port::One, Polarization::Tm, &wl);
        let (ratio, sigma) = splitting_ratio_estimate(&spec, &spec).unwrap();
        assert_relative_eq!(ratio, 0.5, epsilon = 1e-15);
        assert!(sigma < 1e-15);
    }

    #[test]
    fn splitting_ratio_recovers_configured_values() {
        let wl = scan(1538.0, 1543.0, 0.001);
        for r in [0.495, 0.492] {
            let mut circuit = WaveguideCircuit::paper_device();
            circuit.splitter_ratio = r;
            let s1 = fp_transmission_spectrum(&circuit, Port::One, Polarization::Tm, &wl);
            let s2 = fp_transmission_spectrum(&circuit, Port::Two, Polarization::Tm, &wl);
            let (ratio, sigma) = splitting_ratio_estimate(&s1, &s2).unwrap();
            assert!((ratio - r).abs() < 0.01, "ratio {ratio} vs {r}");
            assert!(sigma < 0.01);
        }
    }

    #[test]
    fn splitting_ratio_invariant_under_common_rescaling() {
        let circuit = WaveguideCircuit::paper_device();
        let wl = scan(1539.0, 1541.0, 0.001);
        let s1 = fp_transmission_spectrum(&circuit, Port::One, Polarization::Tm, &wl);
        let s2 = fp_transmission_spectrum(&circuit, Port::Two, Polarization::Tm, &wl);
        let (r0, _) = splitting_ratio_estimate(&s1, &s2).unwrap();
        let rescale = |s: &TransmissionSpectrum| TransmissionSpectrum {
            wavelengths_nm: s.wavelengths_nm.clone(),
            power: s.power.iter().map(|p| p * 0.037).collect(),
            port: s.port,
        };
        let (r1, _) = splitting_ratio_estimate(&rescale(&s1), &rescale(&s2)).unwrap();
        assert_relative_eq!(r0, r1, epsilon = 1e-12);
    }

    #[test]
    fn splitting_ratio_errors() {
        let circuit = WaveguideCircuit::paper_device();
        let wl = scan(1539.0, 1540.0, 0.001);
        let s1 = fp_transmission_spectrum(&circuit, Port::One, Polarization::Tm, &wl);
        let other = scan(1539.5, 1540.5, 0.001);
        let s2 = fp_transmission_spectrum(&circuit, Port::Two, Polarization::Tm, &other);
        assert!(matches!(
            splitting_ratio_estimate(&s1, &s2),
            Err(CircuitError::AxisMismatch)
        ));
        let mut dead = s1.clone();
        dead.power[3] = 0.0;
        let mut dead2 = fp_transmission_spectrum(&circuit, Port::Two, Polarization::Tm, &wl);
        dead2.power[3] = 0.0;
        assert!(matches!(
            splitting_ratio_estimate(&dead, &dead2),
            Err(CircuitError::ZeroTotalPower { index: 3, .. })
        ));
    }

    #[test]
    fn mmi_unitary_examples() {
        let balanced = mmi_unitary(0.5, 0.0).unwrap();
        for entry in balanced.iter() {
            assert_relative_eq!(entry.norm_sqr(), 0.25, epsilon = 1e-12);
        }
        let bar = mmi_unitary(1.0, 0.3).unwrap();
        assert_relative_eq!(bar[(0, 0)].norm(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(bar[(1, 0)].norm(), 0.0, epsilon = 1e-12);
        let measured = mmi_unitary(0.495, std::f64::consts::FRAC_PI_2).unwrap();
        assert_relative_eq!(measured[(0, 0)].norm_sqr(), 0.495, epsilon = 1e-12);
        assert_relative_eq!(measured[(1, 0)].norm_sqr(), 0.505, epsilon = 1e-12);
        assert!(mmi_unitary(1.2, 0.0).is_err());
    }

    #[test]
    fn spectrum_text_roundtrip() {
        let circuit = WaveguideCircuit::paper_device();
        let wl = scan(1539.0, 1539.2, 0.01);
        let spec = fp_transmission_spectrum(&circuit, Port::One, Polarization::Tm, &wl);
        let text = spec.to_text();
        let back = TransmissionSpectrum::from_text(&text, Port::One).unwrap();
        assert_eq!(back, spec);
        assert!(TransmissionSpectrum::from_text("1540 nm oops\n", Port::One).is_err());
        assert!(TransmissionSpectrum::from_text("1540 -3.0\n", Port::One).is_err());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]
            #[test]
            fn loss_roundtrip_within_two_percent(
                alpha in 0.1f64..5.0,
                r in 0.1f64..0.5,
            ) {
                let circuit = WaveguideCircuit::new(0.3, r, alpha, alpha, 0.5, 0.0, 3.5).unwrap();
                let wl: Vec<f64> = (0..8000).map(|i| 1539.0 + i as f64 * 0.0005).collect();
                let spec = fp_transmission_spectrum(&circuit, Port::One, Polarization::Tm, &wl);
                let estimate = extract_loss_from_contrast(&spec, r, 0.3).unwrap();
                prop_assert!(
                    (estimate.alpha_per_cm - alpha).abs() <= 0.02 * alpha.max(0.5),
                    "recovered {} for α = {alpha}, R = {r}",
                    estimate.alpha_per_cm
                );
            }

            #[test]
            fn mmi_is_always_unitary(ratio in 0.0f64..=1.0, phase in -6.3f64..6.3) {
                let u = mmi_unitary(ratio, phase).unwrap();
                prop_assert!(unitarity_defect(&u) < 1e-12);
            }
        }
    }
}
