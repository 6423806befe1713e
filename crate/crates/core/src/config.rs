use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hyperparameters for the streaming indexer, the occupancy monitor and the
/// hierarchy builder. Defaults are the production settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexConfig {
    /// Match threshold: an item joins its best cluster iff cosine >= tau.
    pub tau: f64,
    /// EMA decay applied to every active slot once per step.
    pub gamma: f64,
    /// Edge threshold for the union-find pass over unmatched items.
    /// Values above 1 disable cluster extension entirely.
    pub tau_prime: f64,
    /// Minimum component size for a new cluster.
    pub min_cluster_size: usize,
    /// Below this EMA count a slot is underfilled.
    pub eps1: f64,
    /// At or above this EMA count a slot is stable.
    pub eps2: f64,
    /// Steps a slot may stay in the growing band before it is reset.
    pub growing_window: u64,
    /// Size penalty in the merge affinity.
    pub lambda: f64,
    /// Silhouette pruning threshold.
    pub silhouette_threshold: f64,
    pub batch_size: usize,
    pub dim: usize,
    /// Recycle queue bound; `None` means `10 * batch_size`.
    pub recycle_capacity: Option<usize>,
    /// Turning this off makes the indexer a plain EMA quantizer (used by the
    /// baseline differential test).
    pub monitor_occupancy: bool,
}

impl Default for IndexConfig {
    fn default() -> Self {
        Self {
            tau: 0.88,
            gamma: 0.9993,
            tau_prime: 0.83,
            min_cluster_size: 4,
            eps1: 0.25,
            eps2: 0.2644,
            growing_window: 80,
            lambda: 0.01,
            silhouette_threshold: 0.0,
            batch_size: 20480,
            dim: 64,
            recycle_capacity: None,
            monitor_occupancy: true,
        }
    }
}

impl IndexConfig {
    pub fn recycle_capacity(&self) -> usize {
        self.recycle_capacity
            .unwrap_or_else(|| self.batch_size.saturating_mul(10))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if !(-1.0..=1.0).contains(&self.tau) {
            return bad("tau must lie in [-1, 1]");
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !self.tau_prime.is_finite() || self.tau_prime < -1.0 {
            return bad("tau_prime must be finite and >= -1");
        }
        if self.min_cluster_size == 0 {
            return bad("min_cluster_size must be positive");
        }
        if !(self.eps1 >= 0.0 && self.eps1 <= self.eps2 && self.eps2.is_finite()) {
            return bad("occupancy thresholds need 0 <= eps1 <= eps2");
        }
        if self.growing_window == 0 {
            return bad("growing_window must be positive");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be >= 0");
        }
        if !(-1.0..=1.0).contains(&self.silhouette_threshold) {
            return bad("silhouette_threshold must lie in [-1, 1]");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.dim == 0 {
            return bad("dim must be positive");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_production_settings() {
        let c = IndexConfig::default();
        assert_eq!(c.tau, 0.88);
        assert_eq!(c.gamma, 0.9993);
        assert_eq!(c.tau_prime, 0.83);
        assert_eq!(c.lambda, 0.01);
        assert_eq!(c.growing_window, 80);
        assert_eq!(c.min_cluster_size, 4);
        assert_eq!(c.eps1, 0.25);
        assert_eq!(c.eps2, 0.2644);
        assert_eq!(c.batch_size, 20480);
        assert_eq!(c.dim, 64);
        assert_eq!(c.recycle_capacity(), 204800);
        c.validate().unwrap();
    }

    #[test]
    fn rejects_inverted_occupancy_band() {
        let c = IndexConfig {
            eps1: 0.3,
            eps2: 0.2,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn degenerate_gate_is_allowed() {
        let c = IndexConfig {
            tau: -1.0,
            tau_prime: 2.0,
            monitor_occupancy: false,
            ..Default::default()
        };
        c.validate().unwrap();
    }
}
