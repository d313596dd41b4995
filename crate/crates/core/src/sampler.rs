//! Fixed-grid ODE integration of a guided velocity field from noise at the
//! grid start to `t = 1`.

use serde::{Deserialize, Serialize};

use crate::conditioning::ConditionPair;
use crate::error::{invalid, Error, Result};
use crate::guidance::{guided_velocity_batch, GuidanceSpec};
use crate::model::VelocityModel;
use crate::numerics::{gaussian_sample, Rng, Vector};
use crate::schedule::TimeGrid;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Euler,
    Midpoint,
}

impl Method {
    pub fn evals_per_step(self) -> usize {
        match self {
            Method::Euler => 1,
            Method::Midpoint => 2,
        }
    }
}

/// One trajectory. `extrapolated[i]` is `states[i] + (1 - t_i) v_i` where
/// `v_i` is the guided velocity at the left end of step `i`; the final entry
/// is the end state itself.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleTrace {
    pub times: Vec<f64>,
    pub states: Vec<Vector>,
    pub extrapolated: Vec<Vector>,
    pub eval_count: usize,
}

/// Extrapolated end point `x + (1 - t) v`.
pub fn extrapolate(x: &Vector, t: f64, v: &Vector) -> Vector {
    x.add_scaled(1.0 - t, v)
}

/// Output of [`sample_batch`].
#[derive(Clone, Debug)]
pub struct BatchOutcome {
    pub samples: Vec<Vector>,
    /// Model evaluations spent per trajectory.
    pub eval_count: usize,
    pub traces: Option<Vec<SampleTrace>>,
}

/// Integrates `n` trajectories in lockstep. Initial noise is drawn from
/// `rng` in trajectory order, so `sample_batch(n)` matches `n` consecutive
/// [`sample`] calls on the same stream.
#[allow(clippy::too_many_arguments)]
pub fn sample_batch<M: VelocityModel + ?Sized>(
    model: &M,
    cond: &ConditionPair,
    grid: &TimeGrid,
    spec: &GuidanceSpec,
    rng: &mut Rng,
    method: Method,
    n: usize,
    record_trace: bool,
) -> Result<BatchOutcome> {
    if !cond.is_full() {
        return Err(invalid("sampling needs both factors present"));
    }
    spec.validate()?;
    let dim = model.dim();
    let mut xs: Vec<Vector> = (0..n).map(|_| gaussian_sample(rng, dim)).collect::<Result<_>>()?;
    let mut traces = record_trace.then(|| {
        xs.iter()
            .map(|x| SampleTrace {
                times: vec![grid.start()],
                states: vec![x.clone()],
                extrapolated: Vec::new(),
                eval_count: 0,
            })
            .collect::<Vec<_>>()
    });
    let mut eval_count = 0;

    for (step, (t0, t1)) in grid.intervals().enumerate() {
        let h = t1 - t0;
        let (v0, used) = guided_velocity_batch(model, &xs, t0, cond, spec)?;
        eval_count += used;
        if let Some(traces) = traces.as_mut() {
            for ((tr, x), v) in traces.iter_mut().zip(&xs).zip(&v0) {
                tr.extrapolated.push(extrapolate(x, t0, v));
            }
        }
        let velocity = match method {
            Method::Euler => v0,
            Method::Midpoint => {
                let mid: Vec<Vector> = xs.iter().zip(&v0).map(|(x, v)| x.add_scaled(0.5 * h, v)).collect();
                let (vm, used) = guided_velocity_batch(model, &mid, t0 + 0.5 * h, cond, spec)?;
                eval_count += used;
                vm
            }
        };
        for (x, v) in xs.iter_mut().zip(&velocity) {
            *x = x.add_scaled(h, v);
            if !x.is_finite() {
                return Err(Error::IntegrationFailure { step });
            }
        }
        if let Some(traces) = traces.as_mut() {
            for (tr, x) in traces.iter_mut().zip(&xs) {
                tr.times.push(t1);
                tr.states.push(x.clone());
            }
        }
    }

    if let Some(traces) = traces.as_mut() {
        for (tr, x) in traces.iter_mut().zip(&xs) {
            tr.extrapolated.push(x.clone());
            tr.eval_count = eval_count;
        }
    }
    Ok(BatchOutcome { samples: xs, eval_count, traces })
}

/// Single trajectory from pure noise at `grid.start()` to `t = 1`.
pub fn sample<M: VelocityModel + ?Sized>(
    model: &M,
    cond: &ConditionPair,
    grid: &TimeGrid,
    spec: &GuidanceSpec,
    rng: &mut Rng,
    method: Method,
    record_trace: bool,
) -> Result<(Vector, Option<SampleTrace>)> {
    let mut out = sample_batch(model, cond, grid, spec, rng, method, 1, record_trace)?;
    let x = out.samples.pop().expect("one sample");
    Ok((x, out.traces.and_then(|mut t| t.pop())))
}

/// Writes a trace as CSV: `step, t, x_0.., ex_0..`.
pub fn write_trace_csv<W: std::io::Write>(trace: &SampleTrace, out: W) -> Result<()> {
    let dim = trace.states.first().map_or(0, Vector::dim);
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["step".to_string(), "t".to_string()];
    header.extend((0..dim).map(|k| format!("x_{k}")));
    header.extend((0..dim).map(|k| format!("ex_{k}")));
    w.write_record(&header)?;
    for (i, (t, x)) in trace.times.iter().zip(&trace.states).enumerate() {
        let mut row = vec![i.to_string(), t.to_string()];
        row.extend(x.as_slice().iter().map(f64::to_string));
        if let Some(ex) = trace.extrapolated.get(i) {
            row.extend(ex.as_slice().iter().map(f64::to_string));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes samples as CSV: `sample, x_0..`.
pub fn write_samples_csv<W: std::io::Write>(samples: &[Vector], out: W) -> Result<()> {
    let dim = samples.first().map_or(0, Vector::dim);
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["sample".to_string()];
    header.extend((0..dim).map(|k| format!("x_{k}")));
    w.write_record(&header)?;
    for (i, x) in samples.iter().enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(x.as_slice().iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
