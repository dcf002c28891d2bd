//! Closed-form statistics of the multimode twin-beam state.
//!
//! The source emits signal/idler pairs into a set of orthogonal spectral
//! modes. Each mode `k` is a two-mode squeezed vacuum with squeezing
//! parameter `λ_k`, equivalently a mean pair number `μ_k = λ_k²/(1−λ_k²)`
//! with thermal (Bose-Einstein) marginal statistics. Everything measurable
//! at the coincidence level — pair probabilities, the coincidence-to-
//! accidental ratio, the unheralded and heralded autocorrelations — follows
//! from the vector of `μ_k`, and this module evaluates those closed forms.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SqueezedError {
    #[error("all mode means are zero; the source is vacuum")]
    AllModesEmpty,
    #[error("mode mean μ_{index} = {value} is negative")]
    NegativeModeMean { index: usize, value: f64 },
    #[error("Schmidt number {0} is below the physical minimum of 1")]
    InvalidSchmidtNumber(f64),
    #[error("mean photon number {0} must be non-negative")]
    NegativeMeanPhoton(f64),
    #[error("mean photon number must be positive")]
    ZeroMeanPhoton,
    #[error("squeezing parameter λ² = {0} outside [0, 1)")]
    InvalidSqueezing(f64),
    #[error("herald efficiency must be positive")]
    ZeroHeraldEfficiency,
    #[error("herald efficiency {0} outside (0, 1]")]
    InvalidHeraldEfficiency(f64),
    #[error("pump power {0} mW must be positive")]
    NonpositivePower(f64),
    #[error("unheralded g² = {0} outside [1, 2]")]
    InvalidAutoCorrelation(f64),
}

/// Multimode squeezed-vacuum pair source, described by the per-mode mean
/// pair numbers `μ_k` of its Schmidt modes.
#[derive(Debug, Clone, PartialEq)]
pub struct SqueezedSourceModel {
    mode_means: Vec<f64>,
}

impl SqueezedSourceModel {
    /// Build a model from per-mode mean pair numbers. Every entry must be
    /// non-negative; an empty vector is the vacuum.
    pub fn new(mode_means: Vec<f64>) -> Result<Self, SqueezedError> {
        for (index, &value) in mode_means.iter().enumerate() {
            if !(value >= 0.0) {
                return Err(SqueezedError::NegativeModeMean { index, value });
            }
        }
        Ok(Self { mode_means })
    }

    /// `m` identical modes with squeezing parameter `λ²` each, so
    /// `μ = λ²/(1−λ²)` per mode.
    pub fn equal_modes(m: usize, lambda2: f64) -> Result<Self, SqueezedError> {
        if !(0.0..1.0).contains(&lambda2) {
            return Err(SqueezedError::InvalidSqueezing(lambda2));
        }
        let mu = lambda2 / (1.0 - lambda2);
        Ok(Self {
            mode_means: vec![mu; m],
        })
    }

    /// Build a μ-vector with total mean `mean_n` and effective Schmidt
    /// number `k` (which may be non-integer).
    ///
    /// Uses `⌈k⌉` modes: `⌈k⌉ − 1` equal strong modes plus one weaker mode,
    /// with the weight ratio chosen so that `(Σμ)²/Σμ² = k` exactly. For
    /// integer `k` this degenerates to `k` equal modes.
    pub fn from_mean_and_schmidt(mean_n: f64, k: f64) -> Result<Self, SqueezedError> {
        if !(mean_n >= 0.0) {
            return Err(SqueezedError::NegativeMeanPhoton(mean_n));
        }
        if !(k >= 1.0) {
            return Err(SqueezedError::InvalidSchmidtNumber(k));
        }
        if mean_n == 0.0 {
            return Ok(Self { mode_means: vec![] });
        }
        let m = k.ceil().max(1.0) as usize;
        if m == 1 {
            return Ok(Self {
                mode_means: vec![mean_n],
            });
        }
        // m-1 modes of weight 1 plus one mode of weight x in (0, 1]:
        // (a + x)² = k (a + x²) with a = m − 1, smaller root.
        let a = (m - 1) as f64;
        let disc = a * (a - (k - 1.0) * (k - a));
        let x = (a - disc.max(0.0).sqrt()) / (k - 1.0);
        let scale = mean_n / (a + x);
        let mut mode_means = vec![scale; m - 1];
        mode_means.push(scale * x);
        Ok(Self { mode_means })
    }

    pub fn mode_means(&self) -> &[f64] {
        &self.mode_means
    }

    pub fn is_vacuum(&self) -> bool {
        self.mode_means.iter().all(|&mu| mu == 0.0)
    }

    /// Total mean pair number per pulse, `⟨n⟩ = Σ_k μ_k`.
    pub fn mean_photon_number(&self) -> f64 {
        self.mode_means.iter().sum()
    }

    /// Effective Schmidt number `K = (Σμ)² / Σμ²`.
    pub fn effective_schmidt_number(&self) -> Result<f64, SqueezedError> {
        let sum: f64 = self.mode_means.iter().sum();
        let sum_sq: f64 = self.mode_means.iter().map(|mu| mu * mu).sum();
        if sum_sq == 0.0 {
            return Err(SqueezedError::AllModesEmpty);
        }
        Ok(sum * sum / sum_sq)
    }

    /// Scale every mode mean by a common factor (linear pump-power scaling;
    /// leaves the Schmidt number unchanged).
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            mode_means: self.mode_means.iter().map(|mu| mu * factor).collect(),
        }
    }
}

/// All the closed-form quantities for one source setting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticPrediction {
    pub mean_n: f64,
    pub schmidt_k: f64,
    /// `g²_{s,i}(0) = 1 + 1/⟨n⟩` (so CAR = 1/⟨n⟩).
    pub g2_cross: f64,
    /// `g²_{s,s}(0) = 1 + 1/K`.
    pub g2_auto: f64,
    /// Low-gain heralded autocorrelation `2⟨n⟩(1 + 1/K)`, the form used to
    /// extrapolate against pump power. The exact finite-efficiency value is
    /// [`g2_heralded_analytic`].
    pub g2_heralded: f64,
    pub p1_pair: f64,
    pub p2_pair: f64,
    /// True while P₁ ≤ 0.1, the regime where the two-pair truncation behind
    /// the closed forms is trustworthy.
    pub truncation_ok: bool,
}

impl AnalyticPrediction {
    pub fn from_model(model: &SqueezedSourceModel) -> Result<Self, SqueezedError> {
        let mean_n = model.mean_photon_number();
        let schmidt_k = model.effective_schmidt_number()?;
        let lambda2 = squeezing_from_mean(mean_n, schmidt_k)?;
        let (p1_pair, p2_pair) = pair_probabilities(lambda2, schmidt_k)?;
        let g2_auto = g2_auto_analytic(schmidt_k)?;
        Ok(Self {
            mean_n,
            schmidt_k,
            g2_cross: g2_cross_analytic(mean_n)?,
            g2_auto,
            g2_heralded: g2_heralded_from_unheralded(mean_n, g2_auto)?,
            p1_pair,
            p2_pair,
            truncation_ok: p1_pair <= TRUNCATION_P1_LIMIT,
        })
    }
}

/// Above this single-pair probability the two-pair truncation starts to
/// leak noticeable weight into n ≥ 3 terms.
pub const TRUNCATION_P1_LIMIT: f64 = 0.1;

/// Mean pair number per pulse, `Σ_k μ_k`.
pub fn mean_photon_number(model: &SqueezedSourceModel) -> f64 {
    model.mean_photon_number()
}

/// Effective Schmidt number `(Σμ)²/Σμ²`; equals the mode count for equal
/// means.
pub fn effective_schmidt_number(model: &SqueezedSourceModel) -> Result<f64, SqueezedError> {
    model.effective_schmidt_number()
}

/// Per-mode squeezing `λ² = ⟨n⟩ / (⟨n⟩ + K)` of the equal-mode state with
/// mean `⟨n⟩` spread over `K` modes.
pub fn squeezing_from_mean(mean_n: f64, k: f64) -> Result<f64, SqueezedError> {
    if !(k >= 1.0) {
        return Err(SqueezedError::InvalidSchmidtNumber(k));
    }
    if !(mean_n >= 0.0) {
        return Err(SqueezedError::NegativeMeanPhoton(mean_n));
    }
    Ok(mean_n / (mean_n + k))
}

/// Mean pair number of a single mode with squeezing `λ²`:
/// `μ = λ²/(1−λ²)`.
pub fn mode_mean_from_squeezing(lambda2: f64) -> Result<f64, SqueezedError> {
    if !(0.0..1.0).contains(&lambda2) {
        return Err(SqueezedError::InvalidSqueezing(lambda2));
    }
    Ok(lambda2 / (1.0 - lambda2))
}

/// Leading-order single- and double-pair emission probabilities
/// `P₁ = Kλ²`, `P₂ = K(K+1)λ⁴/2`.
pub fn pair_probabilities(lambda2: f64, k: f64) -> Result<(f64, f64), SqueezedError> {
    if !(0.0..1.0).contains(&lambda2) {
        return Err(SqueezedError::InvalidSqueezing(lambda2));
    }
    if !(k >= 1.0) {
        return Err(SqueezedError::InvalidSchmidtNumber(k));
    }
    let p1 = k * lambda2;
    let p2 = k * (k + 1.0) / 2.0 * lambda2 * lambda2;
    Ok((p1, p2))
}

/// Unheralded autocorrelation of one twin beam, `g²(0) = 1 + 1/K`.
pub fn g2_auto_analytic(k: f64) -> Result<f64, SqueezedError> {
    if !(k >= 1.0) {
        return Err(SqueezedError::InvalidSchmidtNumber(k));
    }
    Ok(1.0 + 1.0 / k)
}

/// Signal-idler cross-correlation `g²(0) = 1 + 1/⟨n⟩`, i.e. CAR = 1/⟨n⟩.
pub fn g2_cross_analytic(mean_n: f64) -> Result<f64, SqueezedError> {
    if mean_n <= 0.0 {
        return Err(SqueezedError::ZeroMeanPhoton);
    }
    Ok(1.0 + 1.0 / mean_n)
}

/// Exact heralded autocorrelation at herald path efficiency `η_H`:
/// `g²_her(0) = (K+1) λ² (1 − (1−η_H)²) / η_H`.
///
/// The efficiency factor spans [1, 2]: it is exactly 1 at η_H = 1 and tends
/// to 2 as η_H → 0 (a lost herald cannot distinguish one pair from two).
pub fn g2_heralded_analytic(lambda2: f64, k: f64, eta_h: f64) -> Result<f64, SqueezedError> {
    if !(0.0..1.0).contains(&lambda2) {
        return Err(SqueezedError::InvalidSqueezing(lambda2));
    }
    if !(k >= 1.0) {
        return Err(SqueezedError::InvalidSchmidtNumber(k));
    }
    if eta_h == 0.0 {
        return Err(SqueezedError::ZeroHeraldEfficiency);
    }
    if !(eta_h > 0.0 && eta_h <= 1.0) {
        return Err(SqueezedError::InvalidHeraldEfficiency(eta_h));
    }
    let one_minus = 1.0 - eta_h;
    Ok((k + 1.0) * lambda2 * (1.0 - one_minus * one_minus) / eta_h)
}

/// Low-efficiency limit of [`g2_heralded_analytic`], `2 (K+1) λ²`.
pub fn g2_heralded_low_eta_limit(lambda2: f64, k: f64) -> Result<f64, SqueezedError> {
    if !(0.0..1.0).contains(&lambda2) {
        return Err(SqueezedError::InvalidSqueezing(lambda2));
    }
    if !(k >= 1.0) {
        return Err(SqueezedError::InvalidSchmidtNumber(k));
    }
    Ok(2.0 * (k + 1.0) * lambda2)
}

/// Heralded autocorrelation from the two unheralded measurements,
/// `g²_her(0) = 2 ⟨n⟩ g²_{s,s}(0)`, valid in the low-gain regime.
pub fn g2_heralded_from_unheralded(mean_n: f64, g2_auto: f64) -> Result<f64, SqueezedError> {
    if !(mean_n >= 0.0) {
        return Err(SqueezedError::NegativeMeanPhoton(mean_n));
    }
    if !(1.0..=2.0).contains(&g2_auto) {
        return Err(SqueezedError::InvalidAutoCorrelation(g2_auto));
    }
    Ok(2.0 * mean_n * g2_auto)
}

/// One point of a pump-power sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub power_mw: f64,
    pub prediction: AnalyticPrediction,
}

/// Scale the calibrated source linearly with pump power and evaluate the
/// closed forms at each requested power. `⟨n⟩` scales as `P/P_ref`; every
/// `μ_k` scales by the same factor, so the Schmidt number is invariant
/// across the sweep.
pub fn power_sweep(
    model_at_ref: &SqueezedSourceModel,
    ref_power_mw: f64,
    powers_mw: &[f64],
) -> Result<Vec<SweepPoint>, SqueezedError> {
    if !(ref_power_mw > 0.0) {
        return Err(SqueezedError::NonpositivePower(ref_power_mw));
    }
    powers_mw
        .iter()
        .map(|&power_mw| {
            if !(power_mw > 0.0) {
                return Err(SqueezedError::NonpositivePower(power_mw));
            }
            let scaled = model_at_ref.scaled(power_mw / ref_power_mw);
            Ok(SweepPoint {
                power_mw,
                prediction: AnalyticPrediction::from_model(&scaled)?,
            })
        })
        .collect()
}
