//! NSGA-II over fixed-cardinality binary chromosomes with two maximized objectives.

mod nsga;
mod sort;

pub use nsga::{evolve, repair_cardinality, Evolution, NsgaConfig, ParetoEntry, ParetoFront};
pub use sort::{crowding_distance, fast_nondominated_sort};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{FedPaeError, Result};
use crate::scalar::Scalar;

/// Objective values for one ensemble; both are maximized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveVector<T> {
    pub strength: T,
    pub diversity: T,
}

impl<T: Scalar> ObjectiveVector<T> {
    pub fn new(strength: T, diversity: T) -> Self {
        ObjectiveVector { strength, diversity }
    }

    pub fn has_nan(&self) -> bool {
        self.strength.is_nan() || self.diversity.is_nan()
    }

    fn get(&self, objective: usize) -> T {
        if objective == 0 {
            self.strength
        } else {
            self.diversity
        }
    }
}

/// Pareto dominance: no worse in both objectives and strictly better in one.
pub fn dominates<T: Scalar>(a: &ObjectiveVector<T>, b: &ObjectiveVector<T>) -> Result<bool> {
    if a.has_nan() || b.has_nan() {
        return Err(FedPaeError::input("dominance is undefined for NaN objectives"));
    }
    Ok(dominates_unchecked(a, b))
}

pub(crate) fn dominates_unchecked<T: Scalar>(a: &ObjectiveVector<T>, b: &ObjectiveVector<T>) -> bool {
    a.strength >= b.strength && a.diversity >= b.diversity && (a.strength > b.strength || a.diversity > b.diversity)
}

/// Binary inclusion mask over a model bench.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Chromosome {
    bits: Vec<bool>,
}

impl Chromosome {
    /// A mask with exactly `k` bits set.
    pub fn new(bits: Vec<bool>, k: usize) -> Result<Self> {
        let c = Chromosome { bits };
        if c.cardinality() != k {
            return Err(FedPaeError::input(format!(
                "mask {c} has {} bits set, expected {k}",
                c.cardinality()
            )));
        }
        Ok(c)
    }

    pub fn from_indices(len: usize, indices: &[usize]) -> Result<Self> {
        let mut bits = vec![false; len];
        for &i in indices {
            if i >= len || bits[i] {
                return Err(FedPaeError::input(format!(
                    "index {i} repeated or out of range for mask of length {len}"
                )));
            }
            bits[i] = true;
        }
        Ok(Chromosome { bits })
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn cardinality(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Indices of the set bits, ascending.
    pub fn selected(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }
}

impl fmt::Display for Chromosome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.bits {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for Chromosome {
    type Err = FedPaeError;

    fn from_str(s: &str) -> Result<Self> {
        let bits = s
            .chars()
            .map(|ch| match ch {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(FedPaeError::input(format!("bad mask character `{other}`"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Chromosome { bits })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ov(s: f64, d: f64) -> ObjectiveVector<f64> {
        ObjectiveVector::new(s, d)
    }

    #[test]
    fn dominance_cases() {
        assert!(dominates(&ov(0.9, 0.5), &ov(0.8, 0.5)).unwrap());
        assert!(!dominates(&ov(0.9, 0.4), &ov(0.8, 0.5)).unwrap());
        assert!(!dominates(&ov(0.8, 0.5), &ov(0.9, 0.4)).unwrap());
        assert!(!dominates(&ov(0.7, 0.7), &ov(0.7, 0.7)).unwrap());
        assert!(dominates(&ov(f64::NAN, 0.7), &ov(0.7, 0.7)).is_err());
    }

    #[test]
    fn mask_text_round_trip_and_order() {
        let c: Chromosome = "01101".parse().unwrap();
        assert_eq!(c.cardinality(), 3);
        assert_eq!(c.selected(), vec![1, 2, 4]);
        assert_eq!(c.to_string(), "01101");
        let smaller: Chromosome = "01011".parse().unwrap();
        assert!(smaller < c);
        assert!("01x".parse::<Chromosome>().is_err());
        assert!(Chromosome::new(vec![true, false], 2).is_err());
    }
}
