//! Small dense vectors, projections and the seeded random stream.
//!
//! Everything is `f64`. Vectors are short (the default task is 2-D), so the
//! representation is a plain heap `Vec<f64>` behind a newtype that keeps
//! components finite at construction.

use std::fmt;
use std::ops::{Add, Index, Mul, Sub};

use rand_core::{Rng as _, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::{check_dims, invalid, Result};

/// Relative scale of the degenerate-reference threshold in [`perp_component`].
pub const PROJECTION_EPS: f64 = 1e-12;

#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector(Vec<f64>);

impl Vector {
    /// Builds a vector, rejecting empty input and non-finite components.
    pub fn new(components: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(invalid("vector dimension must be at least 1"));
        }
        if let Some(i) = components.iter().position(|c| !c.is_finite()) {
            return Err(invalid(format!("component {i} is not finite")));
        }
        Ok(Self(components))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    /// Wraps components without validation. Callers guarantee finiteness
    /// or check it with [`Vector::is_finite`] afterwards.
    pub(crate) fn from_raw(components: Vec<f64>) -> Self {
        Self(components)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }

    pub fn dot(&self, other: &Vector) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn scale(&self, s: f64) -> Vector {
        Vector(self.0.iter().map(|c| c * s).collect())
    }

    /// `self + s * other`
    pub fn add_scaled(&self, s: f64, other: &Vector) -> Vector {
        debug_assert_eq!(self.dim(), other.dim());
        Vector(self.0.iter().zip(&other.0).map(|(a, b)| a + s * b).collect())
    }

    pub fn max_abs_diff(&self, other: &Vector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

impl fmt::Debug for Vector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(&self.0).finish()
    }
}

impl Index<usize> for Vector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl Add for &Vector {
    type Output = Vector;

    fn add(self, rhs: &Vector) -> Vector {
        self.add_scaled(1.0, rhs)
    }
}

impl Sub for &Vector {
    type Output = Vector;

    fn sub(self, rhs: &Vector) -> Vector {
        self.add_scaled(-1.0, rhs)
    }
}

impl Mul<&Vector> for f64 {
    type Output = Vector;

    fn mul(self, rhs: &Vector) -> Vector {
        rhs.scale(self)
    }
}

/// Coefficient `<v, r> / <r, r>` of the projection of `v` onto `r`, or `None`
/// when `r` is too small to serve as a reference.
pub fn projection_coefficient(v: &Vector, r: &Vector) -> Result<Option<f64>> {
    check_dims(v.dim(), r.dim())?;
    let rr = r.norm_sq();
    let threshold = PROJECTION_EPS * v.norm_sq().max(1.0);
    if rr < threshold {
        Ok(None)
    } else {
        Ok(Some(v.dot(r) / rr))
    }
}

/// Component of `v` perpendicular to `r`. A degenerate `r` leaves `v` as is.
pub fn perp_component(v: &Vector, r: &Vector) -> Result<Vector> {
    Ok(match projection_coefficient(v, r)? {
        Some(s) => v.add_scaled(-s, r),
        None => v.clone(),
    })
}

const SPLITMIX_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer; used to decorrelate derived seeds.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(SPLITMIX_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 64-bit FNV-1a over a byte string.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xCBF2_9CE4_8422_2325, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3))
}

/// Derives a child seed from a parent seed and a key.
pub fn derive_seed(seed: u64, key: u64) -> u64 {
    mix64(seed ^ mix64(key))
}

/// Seeded xoshiro256++ stream (state expanded from the seed by SplitMix64).
///
/// Normals come from Box-Muller with the second variate cached, so a stream
/// is fully specified by the seed and the order of calls.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: Xoshiro256PlusPlus,
    spare_normal: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self { seed, inner: Xoshiro256PlusPlus::seed_from_u64(seed), spare_normal: None }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream keyed by `key`, derived from this stream's seed
    /// (not its position), so the result does not depend on prior draws.
    pub fn split(&self, key: u64) -> Rng {
        Rng::new(derive_seed(self.seed, key))
    }

    /// Like [`Rng::split`] with a string key.
    pub fn split_str(&self, key: &str) -> Rng {
        self.split(fnv1a(key.as_bytes()))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.uniform() * n as f64) as usize % n
    }

    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        // u1 in (0, 1] keeps the log finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }
}

/// I.i.d. standard normal vector of dimension `dim`.
pub fn gaussian_sample(rng: &mut Rng, dim: usize) -> Result<Vector> {
    if dim == 0 {
        return Err(invalid("dimension must be at least 1"));
    }
    Ok(Vector((0..dim).map(|_| rng.normal()).collect()))
}
