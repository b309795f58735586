use serde::{Deserialize, Serialize};

use crate::error::{FedPaeError, Result};

/// `(method - base) / base`.
pub fn relative_change(method_acc: f64, base_acc: f64) -> Result<f64> {
    if base_acc == 0.0 {
        return Err(FedPaeError::UndefinedBase);
    }
    Ok((method_acc - base_acc) / base_acc)
}

/// Mean with a normal-approximation 95% interval across clients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator).
    pub sd: f64,
    /// `1.96 * sd / sqrt(n)`.
    pub ci95: f64,
    pub n: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Summary {
        let n = values.len();
        if n == 0 {
            return Summary {
                mean: f64::NAN,
                sd: f64::NAN,
                ci95: f64::NAN,
                n,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Summary {
            mean,
            sd,
            ci95: ci_half_width(sd, n),
            n,
        }
    }
}

pub fn ci_half_width(sd: f64, n: usize) -> f64 {
    1.96 * sd / (n as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_change_cases() {
        assert!((relative_change(0.55, 0.50).unwrap() - 0.10).abs() < 1e-12);
        assert_eq!(relative_change(0.5, 0.5).unwrap(), 0.0);
        assert!((relative_change(0.493, 0.500).unwrap() + 0.014).abs() < 1e-12);
        assert!(matches!(relative_change(0.3, 0.0), Err(FedPaeError::UndefinedBase)));
    }

    #[test]
    fn ci_matches_formula() {
        assert!((ci_half_width(0.1, 20) - 0.043827).abs() < 1e-6);
        let s = Summary::of(&[0.6, 0.8]);
        assert!((s.mean - 0.7).abs() < 1e-12);
        assert!((s.sd - 0.141421356).abs() < 1e-8);
        assert!((s.ci95 - 1.96 * s.sd / 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(Summary::of(&[0.4]).ci95, 0.0);
    }
}
