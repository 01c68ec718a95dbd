//! Digamma and log-gamma.

use crate::error::{Error, Result};

/// Below this the recurrence Ψ(x) = Ψ(x+1) − 1/x shifts the argument up.
const ASYMPTOTIC_FROM: f64 = 10.0;

/// Ψ(x) for x > 0.
///
/// Shifts x above 10 with the recurrence, then sums the asymptotic series
/// ln x − 1/(2x) − Σ B₂ₖ/(2k x²ᵏ) to seven terms.
pub fn digamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Numerical(format!("digamma domain error at x = {x}")));
    }
    Ok(digamma_unchecked(x))
}

pub(crate) fn digamma_unchecked(mut x: f64) -> f64 {
    debug_assert!(x > 0.0);
    let mut shift = 0.0;
    while x < ASYMPTOTIC_FROM {
        shift -= 1.0 / x;
        x += 1.0;
    }
    let inv2 = 1.0 / (x * x);
    // B2/2, B4/4, ..., B14/14
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2
                        * (1.0 / 252.0
                            - inv2
                                * (1.0 / 240.0
                                    - inv2 * (1.0 / 132.0 - inv2 * (691.0 / 32760.0 - inv2 / 12.0))))));
    shift + x.ln() - 0.5 / x - series
}

/// ln Γ(x) for x > 0.
pub fn ln_gamma(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    // Reference values evaluated with 30-digit arithmetic.
    const REFERENCE: &[(f64, f64)] = &[
        (0.001, -1_000.575_571_931_810_300_5),
        (0.01, -100.560_885_457_868_674_5),
        (0.1, -10.423_754_940_411_076_795),
        (0.5, -1.963_510_026_021_423_479_4),
        (1.0, -0.577_215_664_901_532_860_61),
        (1.5, 0.036_489_973_978_576_520_559),
        (2.0, 0.422_784_335_098_467_139_39),
        (3.7, 1.167_153_539_361_511_385_9),
        (6.0, 1.706_117_668_431_800_472_7),
        (10.0, 2.251_752_589_066_721_107_6),
        (123.456, 4.811_829_323_828_985_387_3),
        (1e4, 9.210_290_371_142_849_403_6),
        (1e6, 13.815_510_057_964_190_771),
    ];

    #[test]
    fn matches_reference_values() {
        for &(x, want) in REFERENCE {
            let got = digamma(x).unwrap();
            assert!((got - want).abs() < 1e-12, "x={x}: {got} vs {want}");
        }
    }

    #[test]
    fn euler_mascheroni_and_half() {
        let euler = 0.577_215_664_901_532_9;
        assert!((digamma(1.0).unwrap() + euler).abs() < 1e-15);
        let half = -euler - 2.0 * std::f64::consts::LN_2;
        assert!((digamma(0.5).unwrap() - half).abs() < 1e-14);
    }

    #[test]
    fn recurrence_holds() {
        for &x in &[0.003, 0.7, 1.0, 4.2, 9.99, 55.0, 3e3] {
            let lhs = digamma(x + 1.0).unwrap() - digamma(x).unwrap();
            assert!((lhs - 1.0 / x).abs() < 1e-12 * (1.0 / x).max(1.0), "x={x}");
        }
    }

    #[test]
    fn rejects_nonpositive() {
        assert!(digamma(0.0).is_err());
        assert!(digamma(-1.5).is_err());
        assert!(digamma(f64::NAN).is_err());
    }

    #[test]
    fn ln_gamma_small_integers() {
        assert!(ln_gamma(1.0).abs() < 1e-14);
        assert!((ln_gamma(5.0) - 24f64.ln()).abs() < 1e-13);
    }
}
