//! Exact conditional velocity for Gaussian-mixture targets under the straight
//! interpolant `x_t = x_0 + t (x_1 - x_0)` with `x_0 ~ N(0, I)`.
//!
//! For a component `x_1 ~ N(mu, sigma^2 I)`, the pair `(x_t, u = x_1 - x_0)`
//! is jointly Gaussian with
//!
//! ```text
//! E[x_t] = t mu            Var[x_t] = ((1 - t)^2 + t^2 sigma^2) I = s2 I
//! E[u]   = mu              Cov[x_t, u] = (t sigma^2 - (1 - t)) I = c I
//! ```
//!
//! so `E[u | x_t = x] = mu + (c / s2) (x - t mu)`. Mixtures average these
//! per-component expectations with posterior responsibilities
//! `r_k ~ N(x; t mu_k, s2 I)`.

use crate::conditioning::{log_sum_exp, ConditionPair, TaskSpec};
use crate::error::{check_dims, invalid, Result};
use crate::model::VelocityModel;
use crate::numerics::Vector;

const VAR_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct OracleModel {
    spec: TaskSpec,
}

impl OracleModel {
    pub fn new(spec: TaskSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self { spec })
    }

    pub fn spec(&self) -> &TaskSpec {
        &self.spec
    }

    /// Marginal variance and interpolant/velocity covariance at time `t`.
    pub fn moments(&self, t: f64) -> (f64, f64) {
        let var = self.spec.sigma * self.spec.sigma;
        let s2 = ((1.0 - t) * (1.0 - t) + t * t * var).max(VAR_FLOOR);
        let c = t * var - (1.0 - t);
        (s2, c)
    }

    /// Normalized component responsibilities at `(x, t)` for `cond`.
    pub fn responsibilities(&self, x: &Vector, t: f64, cond: &ConditionPair) -> Vec<f64> {
        let (s2, _) = self.moments(t);
        let logits: Vec<f64> =
            self.spec.component_means(cond).iter().map(|mu| -(x.add_scaled(-t, mu)).norm_sq() / (2.0 * s2)).collect();
        let z = log_sum_exp(&logits);
        logits.iter().map(|l| (l - z).exp()).collect()
    }

    fn check(&self, x: &Vector, t: f64, cond: &ConditionPair) -> Result<()> {
        check_dims(self.spec.dim, x.dim())?;
        if !(0.0..=1.0).contains(&t) {
            return Err(invalid(format!("t must lie in [0, 1], got {t}")));
        }
        self.spec.check_condition(cond)
    }
}

impl VelocityModel for OracleModel {
    fn dim(&self) -> usize {
        self.spec.dim
    }

    fn velocity(&self, x: &Vector, t: f64, cond: &ConditionPair) -> Result<Vector> {
        self.check(x, t, cond)?;
        let (s2, c) = self.moments(t);
        let gain = c / s2;
        let means = self.spec.component_means(cond);
        let resp = self.responsibilities(x, t, cond);
        // sum_k r_k (mu_k + gain (x - t mu_k)) = gain x + (1 - gain t) sum_k r_k mu_k
        let mut mean = Vector::zeros(x.dim());
        for (r, mu) in resp.iter().zip(&means) {
            mean = mean.add_scaled(*r, mu);
        }
        Ok(x.scale(gain).add_scaled(1.0 - gain * t, &mean))
    }
}
