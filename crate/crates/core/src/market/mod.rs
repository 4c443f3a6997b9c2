//! Bachelier Gaussian-basket reference model.
//!
//! Assets follow driftless arithmetic Brownian motion under the T-forward
//! measure (rate and drift fixed at zero, so spot equals forward). The basket
//! `B = Σ ωᵢ Fᵢ` is then normal with volatility `σ_B`, and the call on it has
//! closed-form price, Delta and Gamma which serve as the ground truth for
//! every accuracy metric in this crate.

mod dataset;
mod sampler;

pub use dataset::{Dataset, DatasetError, TrainingSample};
pub use sampler::{
    sample, sample_at, sampler_calls, smooth_payoff, smooth_payoff_deriv, terminal_increments,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interval::Interval;
use crate::special::{norm_cdf, norm_pdf};

const PSD_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MarketError {
    #[error("basket needs at least one asset")]
    NoAssets,
    #[error("{what} has length {got}, expected {expected}")]
    Length {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("basket weights sum to {0}, expected 1")]
    WeightSum(f64),
    #[error("volatility {0} must be positive and finite")]
    Volatility(f64),
    #[error("maturity {0} must be positive")]
    Maturity(f64),
    #[error("correlation matrix is not symmetric with unit diagonal")]
    CorrelationShape,
    #[error("correlation matrix is not positive semidefinite")]
    NotPositiveDefinite,
    #[error("smoothing width {0} must be positive")]
    SmoothingWidth(f64),
    #[error("sample count must be at least 1")]
    NoSamples,
    #[error("spot vector has {got} entries, basket has {expected} assets")]
    SpotLength { expected: usize, got: usize },
}

/// Correlated Bachelier basket with a European call payoff.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasketConfig {
    /// Basket weights ωᵢ, summing to one.
    pub weights: Vec<f64>,
    /// Absolute (normal) volatilities σᵢ in price units per √year.
    pub vols: Vec<f64>,
    /// Correlation matrix ρ, row-major `m × m`.
    pub correlation: Vec<Vec<f64>>,
    pub maturity: f64,
    pub strike: f64,
    /// Sampling range for every initial forward F₀ᵢ.
    pub spot_box: Interval,
    /// Sigmoidal smoothing width for the sampled payoff; `None` samples `(x)⁺`.
    #[serde(default)]
    pub smoothing: Option<f64>,
}

impl BasketConfig {
    /// Equally weighted basket with common volatility and pairwise correlation.
    pub fn uniform(
        assets: usize,
        vol: f64,
        correlation: f64,
        maturity: f64,
        strike: f64,
        spot_box: Interval,
    ) -> Result<Self, MarketError> {
        if assets == 0 {
            return Err(MarketError::NoAssets);
        }
        let corr = (0..assets)
            .map(|j| (0..assets).map(|k| if j == k { 1.0 } else { correlation }).collect())
            .collect();
        let cfg = BasketConfig {
            weights: vec![1.0 / assets as f64; assets],
            vols: vec![vol; assets],
            correlation: corr,
            maturity,
            strike,
            spot_box,
            smoothing: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn assets(&self) -> usize {
        self.weights.len()
    }

    pub fn validate(&self) -> Result<(), MarketError> {
        let m = self.weights.len();
        if m == 0 {
            return Err(MarketError::NoAssets);
        }
        if self.vols.len() != m {
            return Err(MarketError::Length {
                what: "vols",
                expected: m,
                got: self.vols.len(),
            });
        }
        if self.correlation.len() != m || self.correlation.iter().any(|r| r.len() != m) {
            return Err(MarketError::Length {
                what: "correlation",
                expected: m,
                got: self.correlation.len(),
            });
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(MarketError::WeightSum(sum));
        }
        if let Some(&v) = self.vols.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(MarketError::Volatility(v));
        }
        if !(self.maturity > 0.0 && self.maturity.is_finite()) {
            return Err(MarketError::Maturity(self.maturity));
        }
        for j in 0..m {
            if self.correlation[j][j] != 1.0 {
                return Err(MarketError::CorrelationShape);
            }
            for k in 0..j {
                if self.correlation[j][k] != self.correlation[k][j] {
                    return Err(MarketError::CorrelationShape);
                }
            }
        }
        if let Some(w) = self.smoothing {
            if !(w > 0.0) {
                return Err(MarketError::SmoothingWidth(w));
            }
        }
        self.cholesky().map(|_| ())
    }

    /// Lower-triangular Cholesky factor of the correlation matrix.
    ///
    /// Semidefinite matrices (perfectly correlated assets) are accepted; the
    /// factor then has zero columns.
    pub fn cholesky(&self) -> Result<Vec<Vec<f64>>, MarketError> {
        let m = self.correlation.len();
        let mut l = vec![vec![0.0; m]; m];
        for i in 0..m {
            for j in 0..=i {
                let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
                if i == j {
                    let d = self.correlation[i][i] - s;
                    if d < -PSD_TOL || !d.is_finite() {
                        return Err(MarketError::NotPositiveDefinite);
                    }
                    l[i][j] = d.max(0.0).sqrt();
                } else if l[j][j] > PSD_TOL {
                    l[i][j] = (self.correlation[i][j] - s) / l[j][j];
                } else if (self.correlation[i][j] - s).abs() > PSD_TOL {
                    // a zero pivot needs a zero residual, otherwise ρ is indefinite
                    return Err(MarketError::NotPositiveDefinite);
                }
            }
        }
        Ok(l)
    }

    /// σ_B = √(Σ_{j,k} ωⱼωₖσⱼσₖρⱼₖ).
    pub fn basket_vol(&self) -> Result<f64, MarketError> {
        self.cholesky()?;
        let m = self.assets();
        let mut var = 0.0;
        for j in 0..m {
            for k in 0..m {
                var += self.weights[j]
                    * self.weights[k]
                    * self.vols[j]
                    * self.vols[k]
                    * self.correlation[j][k];
            }
        }
        Ok(var.sqrt())
    }

    pub fn basket_spot(&self, spots: &[f64]) -> Result<f64, MarketError> {
        if spots.len() != self.assets() {
            return Err(MarketError::SpotLength {
                expected: self.assets(),
                got: spots.len(),
            });
        }
        Ok(self.weights.iter().zip(spots).map(|(w, s)| w * s).sum())
    }

    /// Standard deviation of the terminal basket, σ_B·√T.
    pub fn terminal_std(&self) -> Result<f64, MarketError> {
        Ok(self.basket_vol()? * self.maturity.sqrt())
    }

    fn moneyness(&self, spots: &[f64]) -> Result<(f64, f64, f64), MarketError> {
        let b = self.basket_spot(spots)?;
        let s = self.terminal_std()?;
        Ok((b - self.strike, s, (b - self.strike) / s))
    }

    /// V = (B₀ − K)Φ(z) + σ_B√T φ(z), z = (B₀ − K)/(σ_B√T).
    pub fn analytic_price(&self, spots: &[f64]) -> Result<f64, MarketError> {
        let (d, s, z) = self.moneyness(spots)?;
        Ok(d * norm_cdf(z) + s * norm_pdf(z))
    }

    /// ∂V/∂F₀ᵢ = ωᵢΦ(z).
    pub fn analytic_delta(&self, spots: &[f64]) -> Result<Vec<f64>, MarketError> {
        let (_, _, z) = self.moneyness(spots)?;
        let p = norm_cdf(z);
        Ok(self.weights.iter().map(|w| w * p).collect())
    }

    /// d²V/dB₀² = φ(z)/(σ_B√T).
    pub fn analytic_basket_gamma(&self, spots: &[f64]) -> Result<f64, MarketError> {
        let (_, s, z) = self.moneyness(spots)?;
        Ok(norm_pdf(z) / s)
    }

    /// Full Gamma matrix ωᵢωⱼ·φ(z)/(σ_B√T).
    pub fn analytic_gamma(&self, spots: &[f64]) -> Result<Vec<Vec<f64>>, MarketError> {
        let g = self.analytic_basket_gamma(spots)?;
        Ok(self
            .weights
            .iter()
            .map(|wi| self.weights.iter().map(|wj| wi * wj * g).collect())
            .collect())
    }
}
