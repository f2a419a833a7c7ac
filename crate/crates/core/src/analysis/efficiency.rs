//! Data efficiency by inverting a loss-versus-data law.

use thiserror::Error;

use super::power_law::PowerLawFit;

pub const STANDARD_RECIPE: &str = "builtin:standard-recipe";

#[derive(Debug, Error, PartialEq)]
pub enum EfficiencyError {
    #[error("loss {loss} is at or below the asymptote {l_inf}")]
    BelowAsymptote { loss: f64, l_inf: f64 },
    #[error("law needs positive A and alpha")]
    BadLaw,
    #[error("ratio must be positive, got {0}")]
    BadRatio(f64),
    #[error("unknown law profile {0:?}")]
    UnknownProfile(String),
}

/// Standard-recipe law: `1.30 / D^0.23 + 1.89`.
pub fn reference_law() -> PowerLawFit {
    PowerLawFit::law(1.30, 0.23, 1.89)
}

pub fn law_profile(name: &str) -> Result<PowerLawFit, EfficiencyError> {
    match name {
        STANDARD_RECIPE | "standard-recipe" => Ok(reference_law()),
        _ => Err(EfficiencyError::UnknownProfile(name.to_string())),
    }
}

fn check_law(law: &PowerLawFit) -> Result<(), EfficiencyError> {
    if law.a > 0.0 && law.alpha > 0.0 {
        Ok(())
    } else {
        Err(EfficiencyError::BadLaw)
    }
}

/// Data amount at which `law` predicts `loss`: `((loss - L_inf) / A)^(-1/alpha)`.
///
/// Losses above `A + L_inf` are accepted and give `D < 1`; only ratios of
/// these amounts are meaningful.
pub fn effective_data(loss: f64, law: &PowerLawFit) -> Result<f64, EfficiencyError> {
    check_law(law)?;
    if !(loss > law.l_inf) {
        return Err(EfficiencyError::BelowAsymptote {
            loss,
            l_inf: law.l_inf,
        });
    }
    Ok(((loss - law.l_inf) / law.a).powf(-1.0 / law.alpha))
}

/// How much more data the baseline would need to reach `improved_loss`.
pub fn efficiency_ratio(baseline_loss: f64, improved_loss: f64, law: &PowerLawFit) -> Result<f64, EfficiencyError> {
    Ok(effective_data(improved_loss, law)? / effective_data(baseline_loss, law)?)
}

/// The loss that is `ratio` times as data-efficient as `baseline_loss`.
pub fn implied_loss(baseline_loss: f64, ratio: f64, law: &PowerLawFit) -> Result<f64, EfficiencyError> {
    check_law(law)?;
    if !(ratio > 0.0) {
        return Err(EfficiencyError::BadRatio(ratio));
    }
    if !(baseline_loss > law.l_inf) {
        return Err(EfficiencyError::BelowAsymptote {
            loss: baseline_loss,
            l_inf: law.l_inf,
        });
    }
    Ok(law.l_inf + (baseline_loss - law.l_inf) / ratio.powf(law.alpha))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_case() {
        let law = reference_law();
        assert!((effective_data(1.30 + 1.89, &law).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reference_ratios() {
        let law = reference_law();
        // ((3.55 - 1.89) / (3.41 - 1.89))^(1 / 0.23)
        let oracle = (1.66f64 / 1.52).powf(1.0 / 0.23);
        let r = efficiency_ratio(3.55, 3.41, &law).unwrap();
        assert!((r - oracle).abs() < 1e-12);
        assert!((r - 1.4668).abs() < 1e-4);
        let implied = implied_loss(3.55, 1.80, &law).unwrap();
        assert!((implied - (1.89 + 1.66 / 1.80f64.powf(0.23))).abs() < 1e-12);
        assert!((implied - 3.34).abs() < 0.005);
    }

    #[test]
    fn inversion_round_trip() {
        let law = reference_law();
        for d in [0.01, 0.3, 1.0, 7.5, 1e3, 1e6] {
            let back = effective_data(law.predict(d), &law).unwrap();
            assert!((back - d).abs() <= 1e-9 * d.max(1.0), "{d} -> {back}");
        }
    }

    #[test]
    fn ratio_unit_invariance() {
        let law = reference_law();
        let c: f64 = 1000.0;
        let rescaled = PowerLawFit::law(law.a * c.powf(law.alpha), law.alpha, law.l_inf);
        let r1 = efficiency_ratio(3.55, 3.34, &law).unwrap();
        let r2 = efficiency_ratio(3.55, 3.34, &rescaled).unwrap();
        assert!((r1 - r2).abs() < 1e-9);
    }

    #[test]
    fn errors() {
        let law = reference_law();
        assert!(matches!(effective_data(1.89, &law), Err(EfficiencyError::BelowAsymptote { .. })));
        assert!(implied_loss(3.55, 0.0, &law).is_err());
        assert!(law_profile("nope").is_err());
        assert_eq!(law_profile(STANDARD_RECIPE).unwrap(), law);
    }
}
