//! Per-column monotone transforms between observed values and the latent
//! normal scale: empirical quantile maps for continuous columns, estimated
//! cutoff sets for ordinal columns.

use crate::error::{Error, Result};
use crate::normal;

/// Half-open interval (lower, upper] of latent values compatible with an
/// observed ordinal level. Endpoints may be infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentInterval {
    pub lower: f64,
    pub upper: f64,
}

impl LatentInterval {
    pub fn new(lower: f64, upper: f64) -> Self {
        assert!(lower < upper, "latent interval requires lower < upper");
        LatentInterval { lower, upper }
    }

    /// The whole real line (no constraint).
    pub fn unbounded() -> Self {
        LatentInterval {
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
        }
    }

    pub fn contains(&self, z: f64) -> bool {
        z > self.lower && z <= self.upper
    }
}

/// Fitted transform for a continuous column: the sorted observed sample,
/// which defines both the empirical CDF and its quantile inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousMarginal {
    sorted_observed: Vec<f64>,
}

impl ContinuousMarginal {
    /// Fit from the observed entries of a column. Requires at least two
    /// distinct finite values.
    pub fn fit(observed: &[f64]) -> Result<Self> {
        if observed.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "continuous marginal: observed values must be finite".into(),
            ));
        }
        let mut sorted = observed.to_vec();
        sorted.sort_by(f64::total_cmp);
        if sorted.len() < 2 || sorted[0] == sorted[sorted.len() - 1] {
            return Err(Error::DegenerateColumn {
                column: String::new(),
            });
        }
        Ok(ContinuousMarginal {
            sorted_observed: sorted,
        })
    }

    pub fn n_obs(&self) -> usize {
        self.sorted_observed.len()
    }

    pub fn sorted_observed(&self) -> &[f64] {
        &self.sorted_observed
    }

    pub fn min(&self) -> f64 {
        self.sorted_observed[0]
    }

    pub fn max(&self) -> f64 {
        *self.sorted_observed.last().unwrap()
    }

    /// Map an observed value to the latent normal scale:
    /// quantile(count(observed <= x) / (n + 1)), finite for every x.
    /// Values below the whole sample map to the smallest attainable mass
    /// 1/(n+1) rather than erroring.
    ///
    /// Depends on x only through ranks, so any strictly increasing
    /// relabeling of the column leaves the output bit-identical.
    pub fn to_latent(&self, x: f64) -> f64 {
        let n = self.sorted_observed.len();
        let count = self.sorted_observed.partition_point(|&v| v <= x).max(1);
        normal::quantile(count as f64 / (n as f64 + 1.0))
    }

    /// Map a latent value back to the observed scale by the empirical
    /// quantile function, interpolating linearly between order statistics
    /// at the knots k/(n+1) and clamping to the observed range.
    pub fn from_latent(&self, z: f64) -> f64 {
        let n = self.sorted_observed.len();
        let u = normal::cdf(z);
        let h = u * (n as f64 + 1.0);
        if h <= 1.0 {
            return self.sorted_observed[0];
        }
        if h >= n as f64 {
            return self.sorted_observed[n - 1];
        }
        let k = h.floor() as usize; // 1-based lower order statistic
        let frac = h - k as f64;
        let lo = self.sorted_observed[k - 1];
        let hi = self.sorted_observed[k];
        lo + frac * (hi - lo)
    }
}

/// Fitted transform for an ordinal column with `level_count` levels:
/// `level_count - 1` strictly increasing cutoffs on the latent scale.
#[derive(Debug, Clone, PartialEq)]
pub struct OrdinalMarginal {
    cutoffs: Vec<f64>,
    level_count: usize,
}

impl OrdinalMarginal {
    /// Fit from observed level indices in 1..=level_count. Every level must
    /// be observed at least once; otherwise the estimated cutoffs would not
    /// be strictly increasing.
    pub fn fit(observed_levels: &[usize], level_count: usize) -> Result<Self> {
        if level_count == 0 {
            return Err(Error::InvalidArgument(
                "ordinal marginal: level_count must be at least 1".into(),
            ));
        }
        let mut counts = vec![0usize; level_count];
        for &lv in observed_levels {
            if lv == 0 || lv > level_count {
                return Err(Error::InvalidArgument(format!(
                    "ordinal marginal: level {lv} outside 1..={level_count}"
                )));
            }
            counts[lv - 1] += 1;
        }
        if let Some(missing) = counts.iter().position(|&c| c == 0) {
            return Err(Error::UnobservedLevel {
                column: String::new(),
                level: missing + 1,
                levels: level_count,
            });
        }
        let n = observed_levels.len() as f64;
        let mut cum = 0usize;
        let cutoffs = counts[..level_count - 1]
            .iter()
            .map(|&c| {
                cum += c;
                normal::quantile(cum as f64 / (n + 1.0))
            })
            .collect();
        Ok(OrdinalMarginal {
            cutoffs,
            level_count,
        })
    }

    /// Construct directly from strictly increasing finite cutoffs.
    pub fn from_cutoffs(cutoffs: Vec<f64>) -> Result<Self> {
        if cutoffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument("cutoffs must be finite".into()));
        }
        if cutoffs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "cutoffs must be strictly increasing".into(),
            ));
        }
        let level_count = cutoffs.len() + 1;
        Ok(OrdinalMarginal {
            cutoffs,
            level_count,
        })
    }

    pub fn level_count(&self) -> usize {
        self.level_count
    }

    pub fn cutoffs(&self) -> &[f64] {
        &self.cutoffs
    }

    /// Apply the cutoff function: 1 + #{cutoffs strictly below z}.
    pub fn level_of(&self, z: f64) -> usize {
        1 + self.cutoffs.partition_point(|&s| s < z)
    }

    /// The set-valued inverse of the cutoff function: the latent interval
    /// (cutoff[level-2], cutoff[level-1]] with infinite sentinels at the
    /// ends. The intervals over all levels partition the real line.
    pub fn interval(&self, level: usize) -> Result<LatentInterval> {
        if level == 0 || level > self.level_count {
            return Err(Error::InvalidArgument(format!(
                "level {level} outside 1..={}",
                self.level_count
            )));
        }
        let lower = if level == 1 {
            f64::NEG_INFINITY
        } else {
            self.cutoffs[level - 2]
        };
        let upper = if level == self.level_count {
            f64::INFINITY
        } else {
            self.cutoffs[level - 1]
        };
        Ok(LatentInterval { lower, upper })
    }
}

/// The fitted transform of one column.
#[derive(Debug, Clone, PartialEq)]
pub enum MarginalModel {
    Continuous(ContinuousMarginal),
    Ordinal(OrdinalMarginal),
}

impl MarginalModel {
    pub fn as_continuous(&self) -> Option<&ContinuousMarginal> {
        match self {
            MarginalModel::Continuous(m) => Some(m),
            MarginalModel::Ordinal(_) => None,
        }
    }

    pub fn as_ordinal(&self) -> Option<&OrdinalMarginal> {
        match self {
            MarginalModel::Continuous(_) => None,
            MarginalModel::Ordinal(m) => Some(m),
        }
    }
}
