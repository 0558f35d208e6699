//! The quenched-annealed gap bound `E log(λγ + 1 - λ)`, `γ = exp(b e + h - ℓ)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environment::{annealed_strength, DisorderLaw, EnvironmentError, PinningParams};

/// Absolute tolerance of the Gaussian-law quadrature.
pub const GAUSSIAN_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum BoundError {
    #[error("lambda must lie in (0, 1], got {0}")]
    LambdaOutOfRange(f64),
    #[error("the bound needs l > 0, got l = {0}")]
    NonPositiveStrength(f64),
    #[error("the d = 2 bound needs l < 1, got l = {0}")]
    StrengthTooLarge(f64),
    #[error(transparent)]
    Environment(#[from] EnvironmentError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// `d >= 3`: `λ = C₁ℓ/(1 + C₁ℓ)`.
    ThreePlus,
    /// `d = 2`: `λ = C₁ℓ/√|log ℓ|`, and the bound uses `λ/|log λ|`.
    Two,
}

impl Regime {
    pub fn for_dim(d: usize) -> Self {
        if d >= 3 {
            Regime::ThreePlus
        } else {
            Regime::Two
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapBoundSpec {
    pub law: DisorderLaw,
    pub params: PinningParams,
    pub regime: Regime,
    pub c1: f64,
}

impl GapBoundSpec {
    /// `λ` of the regime.
    pub fn lambda(&self) -> Result<f64, BoundError> {
        let ell = annealed_strength(&self.law, &self.params)?.ell;
        if !(ell > 0.0) {
            return Err(BoundError::NonPositiveStrength(ell));
        }
        let lambda = match self.regime {
            Regime::ThreePlus => self.c1 * ell / (1.0 + self.c1 * ell),
            Regime::Two => {
                if ell >= 1.0 {
                    return Err(BoundError::StrengthTooLarge(ell));
                }
                self.c1 * ell / ell.ln().abs().sqrt()
            }
        };
        check_lambda(lambda)?;
        Ok(lambda)
    }

    /// The mixing weight inside the logarithm: `λ` for `d >= 3`,
    /// `λ/|log λ|` for `d = 2`.
    pub fn effective_lambda(&self) -> Result<f64, BoundError> {
        let lambda = self.lambda()?;
        match self.regime {
            Regime::ThreePlus => Ok(lambda),
            Regime::Two => {
                let alpha = lambda / lambda.ln().abs();
                check_lambda(alpha)?;
                Ok(alpha)
            }
        }
    }
}

fn check_lambda(lambda: f64) -> Result<(), BoundError> {
    if lambda > 0.0 && lambda <= 1.0 {
        Ok(())
    } else {
        Err(BoundError::LambdaOutOfRange(lambda))
    }
}

pub fn evaluate_gap_bound(spec: &GapBoundSpec) -> Result<f64, BoundError> {
    gap_bound_at(&spec.law, &spec.params, spec.effective_lambda()?)
}

/// `E log(λγ + 1 - λ)` for a given `λ ∈ (0, 1]`.
pub fn gap_bound_at(law: &DisorderLaw, params: &PinningParams, lambda: f64) -> Result<f64, BoundError> {
    check_lambda(lambda)?;
    let ell = annealed_strength(law, params)?.ell;
    let PinningParams { b, h, .. } = *params;
    if b == 0.0 {
        return Ok(0.0);
    }
    let term = |e: f64| {
        let g = (b * e + h - ell).exp();
        (lambda * (g - 1.0)).ln_1p()
    };
    Ok(match law {
        DisorderLaw::StandardGaussian => law.expectation(term, GAUSSIAN_TOLERANCE),
        _ => law.expectation(term, 0.0),
    })
}

/// Closed form for a two-point law `P(e = v₋) = p`, written out directly
/// from the atoms rather than through the law machinery.
pub fn two_point_closed_form(p: f64, low: f64, high: f64, b: f64, lambda: f64) -> f64 {
    // γ does not depend on h: exp(b e + h - h - log E e^{b e})
    let mgf = p * (b * low).exp() + (1.0 - p) * (b * high).exp();
    let g_low = (b * low).exp() / mgf;
    let g_high = (b * high).exp() / mgf;
    p * (lambda * g_low + 1.0 - lambda).ln() + (1.0 - p) * (lambda * g_high + 1.0 - lambda).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(b: f64, h: f64) -> PinningParams {
        PinningParams::new(1.0, b, h).unwrap()
    }

    #[test]
    fn zero_intensity_gives_zero() {
        for law in [DisorderLaw::BernoulliPm1, DisorderLaw::StandardGaussian] {
            assert_eq!(gap_bound_at(&law, &params(0.0, 0.3), 0.4).unwrap(), 0.0);
        }
    }

    #[test]
    fn gaussian_at_lambda_one_is_minus_half_b_squared() {
        // E log γ = E(b z - b²/2) = -b²/2
        let v = gap_bound_at(&DisorderLaw::StandardGaussian, &params(0.8, 0.1), 1.0).unwrap();
        assert!((v + 0.32).abs() < 1e-8, "{v}");
    }

    #[test]
    fn rejects_bad_lambda() {
        let law = DisorderLaw::BernoulliPm1;
        assert!(gap_bound_at(&law, &params(1.0, 0.0), 0.0).is_err());
        assert!(gap_bound_at(&law, &params(1.0, 0.0), 1.2).is_err());
        let spec = GapBoundSpec {
            law,
            params: params(1.0, -2.0),
            regime: Regime::ThreePlus,
            c1: 1.0,
        };
        assert!(matches!(evaluate_gap_bound(&spec), Err(BoundError::NonPositiveStrength(_))));
    }

    #[test]
    fn regimes() {
        let spec = GapBoundSpec {
            law: DisorderLaw::BernoulliPm1,
            params: params(0.5, 0.0),
            regime: Regime::ThreePlus,
            c1: 1.0,
        };
        let ell = 0.5f64.cosh().ln();
        assert!((spec.lambda().unwrap() - ell / (1.0 + ell)).abs() < 1e-15);
        let two = GapBoundSpec {
            regime: Regime::Two,
            ..spec
        };
        let lam = ell / ell.ln().abs().sqrt();
        assert!((two.lambda().unwrap() - lam).abs() < 1e-15);
        assert!((two.effective_lambda().unwrap() - lam / lam.ln().abs()).abs() < 1e-15);
        assert!(evaluate_gap_bound(&two).unwrap() < 0.0);
    }
}
