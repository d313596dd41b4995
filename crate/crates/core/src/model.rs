//! The evaluation contract shared by the analytic oracle and the network.

use std::sync::Mutex;

use crate::conditioning::ConditionPair;
use crate::error::Result;
use crate::numerics::Vector;

/// `(state, time, condition) -> velocity`.
pub trait VelocityModel: Sync {
    fn dim(&self) -> usize;

    fn velocity(&self, x: &Vector, t: f64, cond: &ConditionPair) -> Result<Vector>;

    /// Evaluates many states under one `(t, cond)`. Each row counts as one
    /// model evaluation.
    fn velocity_batch(&self, xs: &[Vector], t: f64, cond: &ConditionPair) -> Result<Vec<Vector>> {
        xs.iter().map(|x| self.velocity(x, t, cond)).collect()
    }
}

impl<M: VelocityModel + ?Sized> VelocityModel for &M {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn velocity(&self, x: &Vector, t: f64, cond: &ConditionPair) -> Result<Vector> {
        (**self).velocity(x, t, cond)
    }

    fn velocity_batch(&self, xs: &[Vector], t: f64, cond: &ConditionPair) -> Result<Vec<Vector>> {
        (**self).velocity_batch(xs, t, cond)
    }
}

/// One logged call: the time and condition of a batch and its row count.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeCall {
    pub t: f64,
    pub cond: ConditionPair,
    pub rows: usize,
}

/// Wraps a model and logs every evaluation it serves.
pub struct CountingModel<M> {
    inner: M,
    calls: Mutex<Vec<ProbeCall>>,
}

impl<M: VelocityModel> CountingModel<M> {
    pub fn new(inner: M) -> Self {
        Self { inner, calls: Mutex::new(Vec::new()) }
    }

    pub fn calls(&self) -> Vec<ProbeCall> {
        self.calls.lock().unwrap().clone()
    }

    /// Total evaluations (rows) served so far.
    pub fn evaluations(&self) -> usize {
        self.calls.lock().unwrap().iter().map(|c| c.rows).sum()
    }

    pub fn reset(&self) {
        self.calls.lock().unwrap().clear();
    }

    fn log(&self, t: f64, cond: &ConditionPair, rows: usize) {
        self.calls.lock().unwrap().push(ProbeCall { t, cond: *cond, rows });
    }
}

impl<M: VelocityModel> VelocityModel for CountingModel<M> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn velocity(&self, x: &Vector, t: f64, cond: &ConditionPair) -> Result<Vector> {
        self.log(t, cond, 1);
        self.inner.velocity(x, t, cond)
    }

    fn velocity_batch(&self, xs: &[Vector], t: f64, cond: &ConditionPair) -> Result<Vec<Vector>> {
        self.log(t, cond, xs.len());
        self.inner.velocity_batch(xs, t, cond)
    }
}
