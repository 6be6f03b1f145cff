//! Closed-form Lyapunov exponents for Gaussian and scaled-orthogonal weights.
//!
//! With Leaky ReLU slope `alpha` and width `d`:
//!
//! * Gaussian entries `N(0, sigma^2)`: `lambda = ln(sigma) + I(d, alpha)`
//! * Haar `eta * O(d)`: `lambda = ln(eta) + I(d, alpha) - I(d, 1)`
//!
//! where `I(d, alpha) = I(d, 1, alpha)` is evaluated by [`crate::quad`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::activation::ActivationSlopes;
use crate::error::{Error, Result};
use crate::quad::{integral_i, QuadSettings};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnsembleKind {
    /// i.i.d. `N(0, scale^2)` entries.
    #[serde(alias = "gaussian_iid")]
    Gaussian,
    /// `scale * Q` with `Q` Haar-distributed on `O(d)`.
    #[serde(alias = "scaled_orthogonal")]
    Orthogonal,
}

impl fmt::Display for EnsembleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EnsembleKind::Gaussian => f.write_str("gaussian"),
            EnsembleKind::Orthogonal => f.write_str("orthogonal"),
        }
    }
}

impl FromStr for EnsembleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "gaussian_iid" => Ok(EnsembleKind::Gaussian),
            "orthogonal" | "scaled_orthogonal" => Ok(EnsembleKind::Orthogonal),
            other => Err(Error::usage(format!("unknown ensemble kind '{other}'"))),
        }
    }
}

/// A weight-matrix distribution: kind, width, and scale (`sigma` or `eta`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub kind: EnsembleKind,
    pub d: usize,
    pub scale: f64,
}

impl EnsembleSpec {
    pub fn new(kind: EnsembleKind, d: usize, scale: f64) -> Result<Self> {
        if d == 0 {
            return Err(Error::domain("width d must be at least 1"));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::domain(format!(
                "scale must be positive, got {scale}"
            )));
        }
        Ok(Self { kind, d, scale })
    }

    pub fn gaussian(d: usize, sigma: f64) -> Result<Self> {
        Self::new(EnsembleKind::Gaussian, d, sigma)
    }

    pub fn orthogonal(d: usize, eta: f64) -> Result<Self> {
        Self::new(EnsembleKind::Orthogonal, d, eta)
    }

    /// Analytic exponent of this ensemble under Leaky ReLU slope `alpha`.
    pub fn lambda(&self, alpha: f64, settings: &QuadSettings) -> Result<f64> {
        match self.kind {
            EnsembleKind::Gaussian => lambda_gaussian(self.d, alpha, self.scale, settings),
            EnsembleKind::Orthogonal => lambda_orthogonal(self.d, alpha, self.scale, settings),
        }
    }

    /// The same ensemble rescaled to its critical scale.
    pub fn at_critical_scale(&self, alpha: f64, settings: &QuadSettings) -> Result<Self> {
        let scale = critical_scale(self.kind, self.d, alpha, settings)?;
        Self::new(self.kind, self.d, scale)
    }
}

fn check_alpha(alpha: f64) -> Result<ActivationSlopes> {
    ActivationSlopes::leaky(alpha)
}

fn check_scale(name: &str, v: f64) -> Result<()> {
    if !(v.is_finite() && v > 0.0) {
        return Err(Error::domain(format!("{name} must be positive, got {v}")));
    }
    Ok(())
}

/// `I(d, alpha)` for the slope pair `(1, alpha)`.
pub fn i_alpha(d: usize, alpha: f64, settings: &QuadSettings) -> Result<f64> {
    integral_i(d, &check_alpha(alpha)?, settings)
}

/// `ln(sigma) + I(d, alpha)`.
pub fn lambda_gaussian(d: usize, alpha: f64, sigma: f64, settings: &QuadSettings) -> Result<f64> {
    check_scale("sigma", sigma)?;
    Ok(sigma.ln() + i_alpha(d, alpha, settings)?)
}

/// `ln(eta) + I(d, alpha) - I(d, 1)`.
pub fn lambda_orthogonal(d: usize, alpha: f64, eta: f64, settings: &QuadSettings) -> Result<f64> {
    check_scale("eta", eta)?;
    Ok(eta.ln() + i_alpha(d, alpha, settings)? - i_alpha(d, 1.0, settings)?)
}

/// Gaussian standard deviation with zero exponent, `exp(-I(d, alpha))`.
pub fn sigma_crit(d: usize, alpha: f64, settings: &QuadSettings) -> Result<f64> {
    Ok((-i_alpha(d, alpha, settings)?).exp())
}

/// Orthogonal scale with zero exponent, `exp(I(d, 1) - I(d, alpha))`.
pub fn eta_crit(d: usize, alpha: f64, settings: &QuadSettings) -> Result<f64> {
    Ok((i_alpha(d, 1.0, settings)? - i_alpha(d, alpha, settings)?).exp())
}

pub fn critical_scale(
    kind: EnsembleKind,
    d: usize,
    alpha: f64,
    settings: &QuadSettings,
) -> Result<f64> {
    match kind {
        EnsembleKind::Gaussian => sigma_crit(d, alpha, settings),
        EnsembleKind::Orthogonal => eta_crit(d, alpha, settings),
    }
}

/// He standard deviation `sqrt(2 / (d (1 + alpha^2)))`.
pub fn sigma_he(d: usize, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if d == 0 {
        return Err(Error::domain("width d must be at least 1"));
    }
    Ok((2.0 / (d as f64 * (1.0 + alpha * alpha))).sqrt())
}

/// Exponent of He initialization.
pub fn lambda_he(d: usize, alpha: f64, settings: &QuadSettings) -> Result<f64> {
    lambda_gaussian(d, alpha, sigma_he(d, alpha)?, settings)
}

/// Moments of `X = phi(Z)^2` for standard normal `Z` and the ratio
/// `C_alpha = Var(X) / E[X]^2` driving the `1/d` correction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticCoefficients {
    pub c_alpha: f64,
    pub mu_x: f64,
    pub tau_sq: f64,
}

impl AsymptoticCoefficients {
    pub fn new(alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        let a2 = alpha * alpha;
        let mu_x = 0.5 * (1.0 + a2);
        let tau_sq = (5.0 - 2.0 * a2 + 5.0 * a2 * a2) / 4.0;
        Ok(Self {
            c_alpha: tau_sq / (mu_x * mu_x),
            mu_x,
            tau_sq,
        })
    }
}

/// Which `1/d` coefficient to use in the large-width expansion.
///
/// `Corrected` uses `-C_alpha / (4d)`, which is what the tabulated `I(d, alpha)`
/// values follow. `AsStated` uses `-C_alpha / (2d)` (and `-(C_alpha + 2) / (2d)`
/// for the orthogonal exponent), kept for comparison; its residual decays only
/// like `1/d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AsymptoticVariant {
    #[default]
    Corrected,
    AsStated,
}

/// Large-`d` approximation of `I(d, alpha)`.
pub fn asymptotic_i(d: usize, alpha: f64, variant: AsymptoticVariant) -> Result<f64> {
    if d == 0 {
        return Err(Error::domain("width d must be at least 1"));
    }
    let c = AsymptoticCoefficients::new(alpha)?.c_alpha;
    let df = d as f64;
    let lead = 0.5 * (df * (1.0 + alpha * alpha) / 2.0).ln();
    Ok(match variant {
        AsymptoticVariant::Corrected => lead - c / (4.0 * df),
        AsymptoticVariant::AsStated => lead - c / (2.0 * df),
    })
}

pub fn asymptotic_lambda_gaussian(
    d: usize,
    alpha: f64,
    sigma: f64,
    variant: AsymptoticVariant,
) -> Result<f64> {
    check_scale("sigma", sigma)?;
    Ok(sigma.ln() + asymptotic_i(d, alpha, variant)?)
}

/// Large-`d` approximation of the orthogonal exponent. The limit as
/// `d -> ∞` is `ln(eta^2 (1 + alpha^2) / 2) / 2`.
pub fn asymptotic_lambda_orthogonal(
    d: usize,
    alpha: f64,
    eta: f64,
    variant: AsymptoticVariant,
) -> Result<f64> {
    check_scale("eta", eta)?;
    if d == 0 {
        return Err(Error::domain("width d must be at least 1"));
    }
    let c = AsymptoticCoefficients::new(alpha)?.c_alpha;
    let df = d as f64;
    let lead = 0.5 * (eta * eta * (1.0 + alpha * alpha) / 2.0).ln();
    Ok(match variant {
        AsymptoticVariant::Corrected => lead - (c - 2.0) / (4.0 * df),
        AsymptoticVariant::AsStated => lead - (c + 2.0) / (2.0 * df),
    })
}

/// MGF of `phi(Z)^2`: `((1 - 2 a1^2 t)^{-1/2} + (1 - 2 a2^2 t)^{-1/2}) / 2`.
pub fn mgf_phi_sq(t: f64, slopes: &ActivationSlopes) -> Result<f64> {
    if !t.is_finite() {
        return Err(Error::domain(format!("t must be finite, got {t}")));
    }
    let a = 1.0 - 2.0 * slopes.alpha1 * slopes.alpha1 * t;
    let b = 1.0 - 2.0 * slopes.alpha2 * slopes.alpha2 * t;
    if a <= 0.0 || b <= 0.0 {
        return Err(Error::domain(format!(
            "t = {t} is outside the MGF domain t < 1 / (2 max alpha_i^2)"
        )));
    }
    Ok(0.5 * (a.sqrt().recip() + b.sqrt().recip()))
}

/// Everything the closed forms say about one ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovReport {
    pub ensemble: EnsembleSpec,
    pub alpha: f64,
    pub lambda: f64,
    pub i_alpha: f64,
    pub i_one: f64,
    pub sigma_crit: f64,
    pub eta_crit: f64,
    pub sigma_he: f64,
    pub lambda_he: f64,
    pub lambda_orth_unscaled: f64,
    pub c_alpha: f64,
    pub lambda_asymptotic: f64,
    pub asymptotic_residual: f64,
}

impl LyapunovReport {
    pub fn compute(ensemble: EnsembleSpec, alpha: f64, settings: &QuadSettings) -> Result<Self> {
        let d = ensemble.d;
        let i_alpha = i_alpha(d, alpha, settings)?;
        let i_one = self::i_alpha(d, 1.0, settings)?;
        let ln_scale = ensemble.scale.ln();
        let (lambda, lambda_asymptotic) = match ensemble.kind {
            EnsembleKind::Gaussian => (
                ln_scale + i_alpha,
                asymptotic_lambda_gaussian(d, alpha, ensemble.scale, AsymptoticVariant::Corrected)?,
            ),
            EnsembleKind::Orthogonal => (
                ln_scale + i_alpha - i_one,
                asymptotic_lambda_orthogonal(
                    d,
                    alpha,
                    ensemble.scale,
                    AsymptoticVariant::Corrected,
                )?,
            ),
        };
        let sigma_he = sigma_he(d, alpha)?;
        Ok(Self {
            ensemble,
            alpha,
            lambda,
            i_alpha,
            i_one,
            sigma_crit: (-i_alpha).exp(),
            eta_crit: (i_one - i_alpha).exp(),
            sigma_he,
            lambda_he: sigma_he.ln() + i_alpha,
            lambda_orth_unscaled: i_alpha - i_one,
            c_alpha: AsymptoticCoefficients::new(alpha)?.c_alpha,
            lambda_asymptotic,
            asymptotic_residual: lambda - lambda_asymptotic,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q() -> QuadSettings {
        QuadSettings::default()
    }

    #[test]
    fn gaussian_examples() {
        let he = sigma_he(2, 0.1).unwrap();
        assert!((he - 0.9950372).abs() < 1e-6);
        let l = lambda_gaussian(2, 0.1, he, &q()).unwrap();
        assert!((l - (-0.8215742)).abs() < 1e-5);
        let l = lambda_he(1024, 0.1, &q()).unwrap();
        assert!((l - (-0.0011938)).abs() < 1e-6);
    }

    #[test]
    fn orthogonal_examples() {
        let l = lambda_orthogonal(2, 0.1, 1.0, &q()).unwrap();
        assert!((l - (-0.8745648)).abs() < 1e-5);
        let l = lambda_orthogonal(10, 0.01, 1.0, &q()).unwrap();
        assert!((l - (-0.452173)).abs() < 1e-5);
    }

    #[test]
    fn critical_scales() {
        assert!((sigma_crit(2, 0.1, &q()).unwrap() - 2.262791).abs() < 1e-5);
        assert!((eta_crit(10, 0.1, &q()).unwrap() - 1.5442064).abs() < 1e-5);
    }

    #[test]
    fn critical_scales_zero_the_exponent_on_grid() {
        let dims = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 16, 64, 512];
        for &d in &dims {
            for alpha in [0.001, 0.01, 0.1, 0.5, 1.0] {
                let s = sigma_crit(d, alpha, &q()).unwrap();
                assert!(lambda_gaussian(d, alpha, s, &q()).unwrap().abs() < 1e-9);
                let e = eta_crit(d, alpha, &q()).unwrap();
                assert!(lambda_orthogonal(d, alpha, e, &q()).unwrap().abs() < 1e-9);
            }
        }
    }

    #[test]
    fn sigma_enters_only_through_log() {
        for sigma in [0.01, 0.3, 1.7, 42.0] {
            let diff = lambda_gaussian(5, 0.2, sigma, &q()).unwrap()
                - lambda_gaussian(5, 0.2, 1.0, &q()).unwrap();
            assert!((diff - sigma.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn domain_errors() {
        assert!(lambda_gaussian(2, 0.1, 0.0, &q()).is_err());
        assert!(lambda_gaussian(2, 0.1, -1.0, &q()).is_err());
        assert!(lambda_gaussian(2, 0.0, 1.0, &q()).is_err());
        assert!(lambda_orthogonal(2, 0.1, 0.0, &q()).is_err());
        assert!(lambda_orthogonal(2, 0.0, 1.0, &q()).is_err());
        assert!(sigma_he(0, 0.1).is_err());
        assert!(EnsembleSpec::gaussian(0, 1.0).is_err());
        assert!(EnsembleSpec::orthogonal(3, f64::NAN).is_err());
    }

    #[test]
    fn c_alpha_values() {
        assert_eq!(AsymptoticCoefficients::new(1.0).unwrap().c_alpha, 2.0);
        let c = AsymptoticCoefficients::new(0.1).unwrap();
        assert!((c.mu_x - 0.505).abs() < 1e-15);
        assert!((c.c_alpha - 4.9805 / 1.0201).abs() < 1e-12);
    }

    #[test]
    fn asymptotic_examples() {
        let a = asymptotic_i(1024, 0.1, AsymptoticVariant::Corrected).unwrap();
        assert!((a - 3.1229455).abs() < 1e-6, "{a}");
        assert!((a - 3.1229437).abs() < 3e-6);
        // ln(1024)/2 - 2/4096
        let a = asymptotic_i(1024, 1.0, AsymptoticVariant::Corrected).unwrap();
        assert!((a - 3.465_247_621_4).abs() < 1e-9, "{a}");
        assert!((a - 3.4652474).abs() < 1e-6);

        let o = asymptotic_lambda_orthogonal(1024, 0.1, 1.0, AsymptoticVariant::Corrected).unwrap();
        assert!((o - (-0.342_302_127_1)).abs() < 1e-9, "{o}");
        assert!((o - (-0.3423037)).abs() < 2e-6);
        let o = asymptotic_lambda_orthogonal(512, 0.1, 1.0, AsymptoticVariant::Corrected).unwrap();
        assert!((o - (-0.3430059)).abs() < 1e-6, "{o}");

        let far = asymptotic_lambda_orthogonal(usize::MAX, 0.3, 2.0, AsymptoticVariant::Corrected)
            .unwrap();
        assert!((far - 0.5 * (4.0f64 * 1.09 / 2.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn corrected_residual_shrinks_like_inverse_square() {
        for alpha in [0.1, 1.0] {
            let scaled: Vec<f64> = [64usize, 128, 256, 512, 1024]
                .iter()
                .map(|&d| {
                    let r = (i_alpha(d, alpha, &q()).unwrap()
                        - asymptotic_i(d, alpha, AsymptoticVariant::Corrected).unwrap())
                    .abs();
                    r * (d * d) as f64
                })
                .collect();
            let max = scaled.iter().cloned().fold(f64::MIN, f64::max);
            let min = scaled.iter().cloned().fold(f64::MAX, f64::min);
            assert!(max / min < 4.0, "alpha={alpha}: {scaled:?}");
        }
    }

    #[test]
    fn mgf_values() {
        let one = ActivationSlopes::identity();
        assert_eq!(
            mgf_phi_sq(0.0, &ActivationSlopes::leaky(0.3).unwrap()).unwrap(),
            1.0
        );
        assert!((mgf_phi_sq(-1.0, &one).unwrap() - 3f64.sqrt().recip()).abs() < 1e-15);
        let v = mgf_phi_sq(0.1, &ActivationSlopes::leaky(0.1).unwrap()).unwrap();
        assert!((v - 1.059_517_745_627_139).abs() < 1e-14);
        assert!(mgf_phi_sq(0.5, &one).is_err());
        assert!(mgf_phi_sq(0.7, &one).is_err());
    }

    #[test]
    fn report_is_consistent() {
        let ens = EnsembleSpec::orthogonal(10, 1.3).unwrap();
        let r = LyapunovReport::compute(ens, 0.1, &q()).unwrap();
        assert!((r.lambda - (1.3f64.ln() + r.i_alpha - r.i_one)).abs() < 1e-10);
        assert!((r.sigma_crit - (-r.i_alpha).exp()).abs() < 1e-15);
        assert!((r.eta_crit - 1.5442064).abs() < 1e-6);
        assert!((r.lambda_he - (-0.1445718)).abs() < 1e-6);
        assert!((r.lambda_orth_unscaled - (-0.4345101)).abs() < 1e-6);
    }

    #[test]
    fn kind_parsing() {
        assert_eq!(
            "Gaussian".parse::<EnsembleKind>().unwrap(),
            EnsembleKind::Gaussian
        );
        assert_eq!(
            "orthogonal".parse::<EnsembleKind>().unwrap(),
            EnsembleKind::Orthogonal
        );
        assert!("uniform".parse::<EnsembleKind>().is_err());
    }
}
