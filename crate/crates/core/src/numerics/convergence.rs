//! Convergence-parameter selection with the monotone-tail rule.

use std::fmt;

use super::NumericsError;
use crate::units::mev_to_ry;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvParam {
    Ecutwfc,
    Kspacing,
}

impl ConvParam {
    pub fn name(self) -> &'static str {
        match self {
            ConvParam::Ecutwfc => "ecutwfc",
            ConvParam::Kspacing => "kspacing",
        }
    }

    /// True when `a` is cheaper to compute with than `b`.
    pub fn cheaper(self, a: f64, b: f64) -> bool {
        match self {
            ConvParam::Ecutwfc => a < b,
            ConvParam::Kspacing => a > b,
        }
    }
}

impl fmt::Display for ConvParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceSeries {
    pub parameter: ConvParam,
    pub values: Vec<f64>,
    /// Energy per atom (Ry/atom) at each value.
    pub energies: Vec<f64>,
    /// Energy per atom at the strictest reference setting.
    pub reference: f64,
}

impl ConvergenceSeries {
    fn validate(&self) -> Result<(), NumericsError> {
        let bad = |m: String| Err(NumericsError::InvalidInput(m));
        if self.values.len() != self.energies.len() {
            return bad(format!("{} values but {} energies", self.values.len(), self.energies.len()));
        }
        if self.values.len() < 2 {
            return bad("need at least two samples".into());
        }
        if !self.reference.is_finite() || self.values.iter().chain(&self.energies).any(|v| !v.is_finite()) {
            return bad("non-finite sample".into());
        }
        let inc = self.values.windows(2).all(|w| w[0] < w[1]);
        let dec = self.values.windows(2).all(|w| w[0] > w[1]);
        if !inc && !dec {
            return bad(format!("{} values must be strictly monotone", self.parameter));
        }
        Ok(())
    }

    /// Sample indices from cheapest to strictest.
    pub fn cost_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.values.len()).collect();
        let p = self.parameter;
        idx.sort_by(|&a, &b| {
            let (x, y) = (self.values[a], self.values[b]);
            if p.cheaper(x, y) {
                std::cmp::Ordering::Less
            } else if p.cheaper(y, x) {
                std::cmp::Ordering::Greater
            } else {
                std::cmp::Ordering::Equal
            }
        });
        idx
    }
}

/// Cheapest sampled value whose error, and that of every stricter sample,
/// is within `threshold_mev` meV/atom of the reference.
pub fn select_converged(series: &ConvergenceSeries, threshold_mev: f64) -> Result<f64, NumericsError> {
    series.validate()?;
    if !(threshold_mev > 0.0) || !threshold_mev.is_finite() {
        return Err(NumericsError::InvalidInput(format!("threshold must be > 0 (got {threshold_mev})")));
    }
    let thr = mev_to_ry(threshold_mev);
    let order = series.cost_order();
    let passes = |i: usize| (series.energies[i] - series.reference).abs() <= thr;
    let mut chosen = None;
    for &i in order.iter().rev() {
        if !passes(i) {
            break;
        }
        chosen = Some(i);
    }
    chosen
        .map(|i| series.values[i])
        .ok_or(NumericsError::NoConvergedValue(series.parameter.name()))
}
