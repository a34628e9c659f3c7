//! Underlying dynamics: geometric Brownian motion with dividend yield and
//! the two-factor mean-reverting jump-diffusion for electricity log-prices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbmAsset {
    pub x0: f64,
    /// Drift under the reference measure (`r - dividend`).
    pub mu: f64,
    pub sigma: f64,
}

/// `X_t = S0 · exp(f(t) + u_t + v_t)` with Gaussian OU factor `u` and a
/// spike factor `v` that decays at rate `kappa_v` and jumps by `jump` at
/// Poisson arrivals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoFactorParams {
    pub s0: f64,
    /// Tabulated seasonality `(t, f(t))`, linearly interpolated; absent means `f ≡ 0`.
    #[serde(default)]
    pub f: Option<Vec<[f64; 2]>>,
    pub kappa_u: f64,
    pub sigma_u: f64,
    pub kappa_v: f64,
    pub lambda_p: f64,
    pub jump: f64,
}

impl TwoFactorParams {
    pub fn seasonality(&self, t: f64) -> f64 {
        let Some(tab) = self.f.as_ref().filter(|t| !t.is_empty()) else {
            return 0.0;
        };
        if t <= tab[0][0] {
            return tab[0][1];
        }
        for w in tab.windows(2) {
            if t <= w[1][0] {
                let a = (t - w[0][0]) / (w[1][0] - w[0][0]);
                return w[0][1] + a * (w[1][1] - w[0][1]);
            }
        }
        tab[tab.len() - 1][1]
    }

    /// The jump coordinate only enters the filtration when it moves the price.
    pub fn has_jumps(&self) -> bool {
        self.lambda_p > 0.0 && self.jump != 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    GbmDividend { assets: Vec<GbmAsset> },
    TwoFactorJump(TwoFactorParams),
}

impl ModelConfig {
    pub fn gbm(x0: f64, mu: f64, sigma: f64) -> Self {
        ModelConfig::GbmDividend {
            assets: vec![GbmAsset { x0, mu, sigma }],
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelConfig::GbmDividend { assets } => {
                if assets.is_empty() {
                    return Err(Error::Config("gbm model needs at least one asset".into()));
                }
                for (i, a) in assets.iter().enumerate() {
                    if !(a.sigma >= 0.0) || !a.x0.is_finite() || !(a.x0 > 0.0) || !a.mu.is_finite()
                    {
                        return Err(Error::Config(format!(
                            "asset {i}: require x0 > 0, finite mu, sigma >= 0"
                        )));
                    }
                }
            }
            ModelConfig::TwoFactorJump(p) => {
                let ok = p.s0 > 0.0
                    && p.sigma_u >= 0.0
                    && p.kappa_u > 0.0
                    && p.kappa_v > 0.0
                    && p.lambda_p >= 0.0
                    && p.jump >= 0.0;
                if !ok {
                    return Err(Error::Config(
                        "two-factor model requires s0 > 0, sigma_u >= 0, kappa_u > 0, kappa_v > 0, lambda_p >= 0, jump >= 0"
                            .into(),
                    ));
                }
                if let Some(tab) = &p.f {
                    if tab.windows(2).any(|w| !(w[1][0] > w[0][0])) {
                        return Err(Error::Config(
                            "seasonality table times must increase".into(),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Dimension of the observed state `X`.
    pub fn state_dim(&self) -> usize {
        match self {
            ModelConfig::GbmDividend { assets } => assets.len(),
            ModelConfig::TwoFactorJump(_) => 1,
        }
    }

    pub fn brownian_dim(&self) -> usize {
        match self {
            ModelConfig::GbmDividend { assets } => assets.len(),
            ModelConfig::TwoFactorJump(_) => 1,
        }
    }

    pub fn jump_dim(&self) -> usize {
        match self {
            ModelConfig::TwoFactorJump(p) if p.has_jumps() => 1,
            _ => 0,
        }
    }

    /// Reference intensities `λ_P`, one per jump coordinate.
    pub fn intensities(&self) -> Vec<f64> {
        match self {
            ModelConfig::TwoFactorJump(p) if p.has_jumps() => vec![p.lambda_p],
            _ => Vec::new(),
        }
    }

    pub fn initial_state(&self) -> Vec<f64> {
        match self {
            ModelConfig::GbmDividend { assets } => assets.iter().map(|a| a.x0).collect(),
            ModelConfig::TwoFactorJump(p) => vec![p.s0 * p.seasonality(0.0).exp()],
        }
    }
}
