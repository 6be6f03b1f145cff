use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slopes of the generalized Leaky ReLU `phi(x) = max(alpha1 * x, alpha2 * x)`.
///
/// The usual single-slope Leaky ReLU `max(x, alpha * x)` is `(1, alpha)`.
/// Both slopes must be nonzero for the exponent formulas; a zero slope is
/// only accepted through [`ActivationSlopes::relu`], which the absorption
/// experiment uses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActivationSlopes {
    pub alpha1: f64,
    pub alpha2: f64,
}

impl ActivationSlopes {
    pub fn new(alpha1: f64, alpha2: f64) -> Result<Self> {
        if !(alpha1.is_finite() && alpha2.is_finite()) {
            return Err(Error::domain(format!(
                "slopes must be finite, got ({alpha1}, {alpha2})"
            )));
        }
        if alpha1 == 0.0 || alpha2 == 0.0 {
            return Err(Error::domain(format!(
                "slopes must be nonzero, got ({alpha1}, {alpha2})"
            )));
        }
        Ok(Self { alpha1, alpha2 })
    }

    /// Leaky ReLU `max(x, alpha * x)`.
    pub fn leaky(alpha: f64) -> Result<Self> {
        Self::new(1.0, alpha)
    }

    pub fn identity() -> Self {
        Self {
            alpha1: 1.0,
            alpha2: 1.0,
        }
    }

    /// Plain ReLU, `(1, 0)`.
    pub fn relu() -> Self {
        Self {
            alpha1: 1.0,
            alpha2: 0.0,
        }
    }

    pub fn is_relu(&self) -> bool {
        self.alpha1 == 0.0 || self.alpha2 == 0.0
    }

    pub fn swapped(&self) -> Self {
        Self {
            alpha1: self.alpha2,
            alpha2: self.alpha1,
        }
    }

    pub fn abs(&self) -> Self {
        Self {
            alpha1: self.alpha1.abs(),
            alpha2: self.alpha2.abs(),
        }
    }

    /// `min(alpha1^2, alpha2^2)`.
    pub fn min_sq(&self) -> f64 {
        (self.alpha1 * self.alpha1).min(self.alpha2 * self.alpha2)
    }

    /// `phi(x) = max(alpha1 x, alpha2 x)`.
    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        (self.alpha1 * x).max(self.alpha2 * x)
    }

    pub fn apply_in_place(&self, v: &mut [f64]) {
        for x in v.iter_mut() {
            *x = self.apply(*x);
        }
    }
}
