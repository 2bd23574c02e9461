use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceMode {
    /// Off-diagonal terms dropped, variances floored at `var_floor`.
    #[default]
    Diagonal,
    /// Full covariance with eigenvalues floored at `var_floor`, plus a small ridge.
    FullWithRidge,
}

/// Which records feed the tag-removal frequency counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RemovalSource {
    Raw,
    /// Records flagged by the coarse filter are excluded.
    #[default]
    Filtered,
}

/// Tunables for every detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectionConfig {
    /// Maximum plausible walking/running speed, m/s.
    pub rho: f64,
    /// Maximum gap between consecutive uploads inside one trajectory, seconds.
    pub tw: f64,
    /// Neighbor radius for removal scoring, meters.
    pub phi: f64,
    /// Posterior threshold: a record is truthful iff Q_i(1) >= tau.
    pub tau: f64,
    pub max_iters: usize,
    /// Relative log-likelihood change at which EM stops.
    pub ll_tol: f64,
    /// Minimum per-dimension variance.
    pub var_floor: f64,
    /// Reliabilities are kept in [beta_clamp, 1 - beta_clamp].
    pub beta_clamp: f64,
    /// Number of BSSIDs kept in the feature vocabulary.
    pub vocab_size: usize,
    pub covariance_mode: CovarianceMode,
    /// Include the mixing weights in the E-step likelihoods.
    pub alpha_weighting: bool,
    /// Append numeric payload values to the feature vectors.
    pub include_payload: bool,
    pub ssid_check: bool,
    /// Check each scan against its tag's own SSID list (when the tag has one).
    pub per_tag_ssid: bool,
    pub removal_source: RemovalSource,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        DetectionConfig {
            rho: 10.0,
            tw: 600.0,
            phi: 5.0,
            tau: 0.5,
            max_iters: 200,
            ll_tol: 1e-6,
            var_floor: 1.0,
            beta_clamp: 1e-4,
            vocab_size: 20,
            covariance_mode: CovarianceMode::Diagonal,
            alpha_weighting: true,
            include_payload: false,
            ssid_check: true,
            per_tag_ssid: false,
            removal_source: RemovalSource::Filtered,
        }
    }
}

/// False for NaN as well as for non-positive values.
fn positive(x: f64) -> bool {
    x > 0.0
}

impl DetectionConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if !positive(self.rho) {
            return fail("rho must be > 0");
        }
        if !positive(self.tw) {
            return fail("tw must be > 0");
        }
        if !positive(self.phi) {
            return fail("phi must be > 0");
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return fail("tau must lie in (0, 1)");
        }
        if !positive(self.var_floor) {
            return fail("var_floor must be > 0");
        }
        if !(self.beta_clamp > 0.0 && self.beta_clamp < 0.5) {
            return fail("beta_clamp must lie in (0, 0.5)");
        }
        if !(0.0..).contains(&self.ll_tol) {
            return fail("ll_tol must be >= 0");
        }
        if self.vocab_size == 0 {
            return fail("vocab_size must be >= 1");
        }
        Ok(())
    }
}
