//! Parametric distributions for workload generation.

use rand::Rng;
use rand_distr::{Distribution, LogNormal, Pareto};
use serde::{Deserialize, Serialize};

use crate::SimError;

/// A positive-valued distribution with finite parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum Dist {
    Constant {
        value: f64,
    },
    Uniform {
        lo: f64,
        hi: f64,
    },
    /// Log-normal parameterised by its median and log-space standard deviation.
    LogNormal {
        median: f64,
        sigma: f64,
    },
    /// Pareto with minimum `scale` and tail index `shape`.
    Pareto {
        scale: f64,
        shape: f64,
    },
}

impl Dist {
    pub fn constant(value: f64) -> Self {
        Dist::Constant { value }
    }

    pub fn validate(&self, what: &str) -> Result<(), SimError> {
        let ok = |x: f64| x.is_finite() && x > 0.0;
        let fine = match *self {
            Dist::Constant { value } => ok(value),
            Dist::Uniform { lo, hi } => ok(lo) && ok(hi) && lo <= hi,
            Dist::LogNormal { median, sigma } => ok(median) && sigma.is_finite() && sigma >= 0.0,
            Dist::Pareto { scale, shape } => ok(scale) && ok(shape),
        };
        if fine {
            Ok(())
        } else {
            Err(SimError::InvalidConfig(format!("{what}: parameters must be finite and positive, got {self:?}")))
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        match *self {
            Dist::Constant { value } => value,
            Dist::Uniform { lo, hi } if lo == hi => lo,
            Dist::Uniform { lo, hi } => rng.random_range(lo..=hi),
            Dist::LogNormal { median, sigma } => {
                LogNormal::new(median.ln(), sigma).expect("validated parameters").sample(rng)
            }
            Dist::Pareto { scale, shape } => Pareto::new(scale, shape).expect("validated parameters").sample(rng),
        }
    }

    /// Sample rounded to a positive integer count.
    pub fn sample_count(&self, rng: &mut impl Rng) -> u64 {
        self.sample(rng).round().max(1.0) as u64
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Dist::Constant { .. }) || matches!(self, Dist::Uniform { lo, hi } if lo == hi)
    }
}
