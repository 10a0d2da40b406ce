use std::f64::consts::PI;

use crate::{Error, Result};

/// Amplified sigmoid that maps raw phase increments into (0, lambda).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegulatorSpec {
    pub lambda: f64,
}

impl Default for RegulatorSpec {
    fn default() -> Self {
        Self { lambda: 2.0 * PI }
    }
}

impl RegulatorSpec {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!("regulator amplification must be positive, got {lambda}")));
        }
        Ok(Self { lambda })
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// lambda * sigmoid(x), entrywise. Saturated inputs are pulled back to the
/// nearest representable value inside the open interval.
pub fn regulator(raw: &[f64], spec: RegulatorSpec) -> Vec<f64> {
    let lam = spec.lambda;
    raw.iter()
        .map(|&x| {
            let y = lam * sigmoid(x);
            if lam <= 0.0 {
                y
            } else if y >= lam {
                f64::from_bits(lam.to_bits() - 1)
            } else if y <= 0.0 {
                f64::MIN_POSITIVE
            } else {
                y
            }
        })
        .collect()
}

/// d/dx of lambda * sigmoid(x).
pub fn regulator_derivative(raw: &[f64], spec: RegulatorSpec) -> Vec<f64> {
    raw.iter()
        .map(|&x| {
            let s = sigmoid(x);
            spec.lambda * s * (1.0 - s)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_input_gives_half_amplitude() {
        let out = regulator(&[0.0, 0.0], RegulatorSpec::default());
        assert!(out.iter().all(|v| (v - PI).abs() < 1e-15));
    }

    #[test]
    fn saturation_stays_inside_open_interval() {
        let spec = RegulatorSpec::default();
        let out = regulator(&[40.0, 1e6, f64::MAX, -800.0, -1e6], spec);
        for v in &out {
            assert!(*v > 0.0 && *v < 2.0 * PI, "{v}");
        }
        assert!((out[0] - 2.0 * PI).abs() < 1e-14);
    }

    #[test]
    fn known_value() {
        let out = regulator(&[-3.0], RegulatorSpec::default());
        // sigmoid(-3) = 1 / (1 + e^3)
        let expected = 2.0 * PI * 0.047_425_873_177_566_78;
        assert!((out[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let spec = RegulatorSpec::new(1.7).unwrap();
        for x in [-4.0, -0.3, 0.0, 0.8, 5.0] {
            let h = 1e-6;
            let fd = (regulator(&[x + h], spec)[0] - regulator(&[x - h], spec)[0]) / (2.0 * h);
            assert!((fd - regulator_derivative(&[x], spec)[0]).abs() < 1e-8);
        }
    }

    #[test]
    fn rejects_nonpositive_amplification() {
        assert!(RegulatorSpec::new(0.0).is_err());
        assert!(RegulatorSpec::new(-1.0).is_err());
    }
}
