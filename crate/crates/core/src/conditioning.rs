//! The synthetic two-factor task.
//!
//! Factor A plays the role of the text condition and factor B the speaker
//! condition. Each `(a, b)` pair selects an isotropic Gaussian whose mean is
//! `centers_a[a]` along `axis_a` plus `centers_b[b]` along `axis_b`.

use serde::{Deserialize, Serialize};

use crate::error::{check_dims, invalid, Result};
use crate::numerics::{Rng, Vector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Factor {
    A,
    B,
}

/// Which factors a model evaluation sees.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mask {
    Full,
    AOnly,
    BOnly,
    None,
}

impl Mask {
    pub const ALL: [Mask; 4] = [Mask::Full, Mask::AOnly, Mask::BOnly, Mask::None];
}

/// Class indices for the two factors; `None` means the factor is absent.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ConditionPair {
    pub a: Option<usize>,
    pub b: Option<usize>,
}

impl ConditionPair {
    pub const NONE: ConditionPair = ConditionPair { a: None, b: None };

    pub fn both(a: usize, b: usize) -> Self {
        Self { a: Some(a), b: Some(b) }
    }

    pub fn is_full(&self) -> bool {
        self.a.is_some() && self.b.is_some()
    }

    pub fn get(&self, factor: Factor) -> Option<usize> {
        match factor {
            Factor::A => self.a,
            Factor::B => self.b,
        }
    }

    /// Restricts the pair to the factors `mask` keeps.
    pub fn masked(&self, mask: Mask) -> Self {
        match mask {
            Mask::Full => *self,
            Mask::AOnly => Self { a: self.a, b: None },
            Mask::BOnly => Self { a: None, b: self.b },
            Mask::None => Self::NONE,
        }
    }

    pub fn mask(&self) -> Mask {
        match (self.a, self.b) {
            (Some(_), Some(_)) => Mask::Full,
            (Some(_), None) => Mask::AOnly,
            (None, Some(_)) => Mask::BOnly,
            (None, None) => Mask::None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskSpec {
    pub dim: usize,
    pub centers_a: Vec<f64>,
    pub centers_b: Vec<f64>,
    pub axis_a: usize,
    pub axis_b: usize,
    pub sigma: f64,
    pub drop_a: f64,
    pub drop_b: f64,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self {
            dim: 2,
            centers_a: vec![-3.0, -1.0, 1.0, 3.0],
            centers_b: vec![-3.0, -1.0, 1.0, 3.0],
            axis_a: 0,
            axis_b: 1,
            sigma: 0.35,
            drop_a: 0.15,
            drop_b: 0.15,
        }
    }
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(invalid("task dimension must be at least 1"));
        }
        if self.axis_a >= self.dim || self.axis_b >= self.dim {
            return Err(invalid("factor axis outside the task dimension"));
        }
        if self.centers_a.is_empty() || self.centers_b.is_empty() {
            return Err(invalid("each factor needs at least one class"));
        }
        for (name, centers) in [("a", &self.centers_a), ("b", &self.centers_b)] {
            if centers.iter().any(|c| !c.is_finite()) {
                return Err(invalid(format!("centers_{name} must be finite")));
            }
            for (i, x) in centers.iter().enumerate() {
                if centers[..i].contains(x) {
                    return Err(invalid(format!("centers_{name} must be distinct")));
                }
            }
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(invalid("sigma must be positive"));
        }
        for p in [self.drop_a, self.drop_b] {
            if !(0.0..1.0).contains(&p) {
                return Err(invalid("dropout probabilities must lie in [0, 1)"));
            }
        }
        Ok(())
    }

    pub fn classes(&self, factor: Factor) -> usize {
        match factor {
            Factor::A => self.centers_a.len(),
            Factor::B => self.centers_b.len(),
        }
    }

    pub fn check_condition(&self, cond: &ConditionPair) -> Result<()> {
        for f in [Factor::A, Factor::B] {
            if let Some(c) = cond.get(f) {
                if c >= self.classes(f) {
                    return Err(invalid(format!("class {c} out of range for factor {f:?}")));
                }
            }
        }
        Ok(())
    }

    /// Every `(a, b)` pair, a-major.
    pub fn all_conditions(&self) -> Vec<ConditionPair> {
        let kb = self.centers_b.len();
        (0..self.centers_a.len() * kb).map(|i| ConditionPair::both(i / kb, i % kb)).collect()
    }

    pub fn component_mean(&self, a: usize, b: usize) -> Vector {
        let mut m = vec![0.0; self.dim];
        m[self.axis_a] += self.centers_a[a];
        m[self.axis_b] += self.centers_b[b];
        Vector::from_raw(m)
    }

    /// Means of the mixture components compatible with `cond`; absent factors
    /// range over all their classes with equal weight.
    pub fn component_means(&self, cond: &ConditionPair) -> Vec<Vector> {
        let a_range = cond.a.map_or(0..self.centers_a.len(), |a| a..a + 1);
        let b_range = cond.b.map_or(0..self.centers_b.len(), |b| b..b + 1);
        a_range.flat_map(|a| b_range.clone().map(move |b| (a, b))).map(|(a, b)| self.component_mean(a, b)).collect()
    }
}

/// One draw from the fully conditioned target.
pub fn sample_target(spec: &TaskSpec, cond: &ConditionPair, rng: &mut Rng) -> Result<Vector> {
    let (Some(a), Some(b)) = (cond.a, cond.b) else {
        return Err(invalid("sample_target needs both factors present"));
    };
    spec.check_condition(cond)?;
    let mean = spec.component_mean(a, b);
    let x = mean.as_slice().iter().map(|m| m + spec.sigma * rng.normal()).collect();
    Ok(Vector::from_raw(x))
}

/// Independently drops each present factor with its training probability.
pub fn mask_dropout(cond: &ConditionPair, spec: &TaskSpec, rng: &mut Rng) -> ConditionPair {
    let drop_a = rng.bernoulli(spec.drop_a);
    let drop_b = rng.bernoulli(spec.drop_b);
    ConditionPair { a: if drop_a { None } else { cond.a }, b: if drop_b { None } else { cond.b } }
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Exact posterior over the classes of `factor` given `x`, with uniform
/// priors and the other factor marginalized.
pub fn bayes_posterior(spec: &TaskSpec, x: &Vector, factor: Factor) -> Result<Vec<f64>> {
    check_dims(spec.dim, x.dim())?;
    if !x.is_finite() {
        return Err(invalid("posterior input must be finite"));
    }
    let inv_two_var = 1.0 / (2.0 * spec.sigma * spec.sigma);
    let (ka, kb) = (spec.centers_a.len(), spec.centers_b.len());
    let (outer, inner) = match factor {
        Factor::A => (ka, kb),
        Factor::B => (kb, ka),
    };
    let mut scratch = vec![0.0; inner];
    let log_lik: Vec<f64> = (0..outer)
        .map(|k| {
            for (j, s) in scratch.iter_mut().enumerate() {
                let (a, b) = match factor {
                    Factor::A => (k, j),
                    Factor::B => (j, k),
                };
                let mean = spec.component_mean(a, b);
                *s = -(x - &mean).norm_sq() * inv_two_var;
            }
            log_sum_exp(&scratch)
        })
        .collect();
    let z = log_sum_exp(&log_lik);
    Ok(log_lik.iter().map(|l| (l - z).exp()).collect())
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate().skip(1) {
        if v > p[best] {
            best = i;
        }
    }
    best
}
