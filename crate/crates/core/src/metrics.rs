//! Adherence rates, energy distance, and grouped summaries of result rows.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::conditioning::{argmax, bayes_posterior, ConditionPair, Factor, TaskSpec};
use crate::error::{invalid, Result};
use crate::numerics::Vector;

/// Fraction of samples whose posterior argmax for `factor` is the
/// conditioned class.
pub fn adherence(samples: &[Vector], spec: &TaskSpec, cond: &ConditionPair, factor: Factor) -> Result<f64> {
    if samples.is_empty() {
        return Err(invalid("adherence needs at least one sample"));
    }
    let Some(target) = cond.get(factor) else {
        return Err(invalid(format!("factor {factor:?} is absent from the condition")));
    };
    let mut hits = 0usize;
    for x in samples {
        if argmax(&bayes_posterior(spec, x, factor)?) == target {
            hits += 1;
        }
    }
    Ok(hits as f64 / samples.len() as f64)
}

fn distance(a: &Vector, b: &Vector) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn mean_within(xs: &[Vector]) -> f64 {
    let n = xs.len();
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            sum += distance(&xs[i], &xs[j]);
        }
    }
    // Ordered pairs: each unordered pair counts twice.
    2.0 * sum
}

fn mean_between(xs: &[Vector], ys: &[Vector]) -> f64 {
    let mut sum = 0.0;
    for x in xs {
        for y in ys {
            sum += distance(x, y);
        }
    }
    sum / (xs.len() * ys.len()) as f64
}

/// Orders the two sets canonically so the floating-point result does not
/// depend on argument order.
fn canonical<'a>(xs: &'a [Vector], ys: &'a [Vector]) -> Result<(&'a [Vector], &'a [Vector])> {
    if xs.is_empty() || ys.is_empty() {
        return Err(invalid("energy distance needs two nonempty sample sets"));
    }
    let flat = |s: &'a [Vector]| s.iter().flat_map(|v| v.as_slice().iter());
    let order = xs.len().cmp(&ys.len()).then_with(|| {
        flat(xs).zip(flat(ys)).map(|(a, b)| a.total_cmp(b)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
    });
    Ok(if order == Ordering::Greater { (ys, xs) } else { (xs, ys) })
}

/// Unbiased two-sample energy distance
/// `2 E|X - Y| - E|X - X'| - E|Y - Y'|`, where the within-sample means skip
/// the diagonal. Can be slightly negative for identical distributions.
pub fn energy_distance(xs: &[Vector], ys: &[Vector]) -> Result<f64> {
    let (xs, ys) = canonical(xs, ys)?;
    let within = |s: &[Vector]| {
        let n = s.len() as f64;
        if s.len() < 2 {
            0.0
        } else {
            mean_within(s) / (n * (n - 1.0))
        }
    };
    let (wx, wy) = (within(xs), within(ys));
    Ok(2.0 * mean_between(xs, ys) - wx - wy)
}

/// V-statistic variant (diagonal included). Non-negative, and exactly zero
/// for identical sample sets.
pub fn energy_distance_v(xs: &[Vector], ys: &[Vector]) -> Result<f64> {
    let (xs, ys) = canonical(xs, ys)?;
    let within = |s: &[Vector]| mean_within(s) / (s.len() * s.len()) as f64;
    let (wx, wy) = (within(xs), within(ys));
    Ok((2.0 * mean_between(xs, ys) - wx - wy).max(0.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    Failed,
}

/// One results-CSV row: a sampled batch for one sweep cell and its metrics.
/// Metric fields are empty for failed cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub strategy: String,
    pub lambda: f64,
    pub lambda_text: f64,
    pub lambda_spk: f64,
    pub t_threshold: f64,
    pub n_steps: usize,
    pub seed: u64,
    pub adherence_a: Option<f64>,
    pub adherence_b: Option<f64>,
    pub energy_distance: Option<f64>,
    pub n_samples: usize,
    pub eval_count: usize,
    pub tz: f64,
    pub cond_a: usize,
    pub cond_b: usize,
    pub status: CellStatus,
    pub fingerprint: String,
}

pub fn write_records<W: std::io::Write>(records: &[MetricsRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records<R: std::io::Read>(input: R) -> Result<Vec<MetricsRecord>> {
    let mut r = csv::Reader::from_reader(input);
    Ok(r.deserialize().collect::<std::result::Result<Vec<_>, _>>()?)
}

/// Columns a summary can group by.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKey {
    Strategy,
    Lambda,
    LambdaText,
    LambdaSpk,
    TThreshold,
    NSteps,
    Tz,
    Seed,
    CondA,
    CondB,
}

impl GroupKey {
    /// Groups that average over seeds and conditions.
    pub const DEFAULT: [GroupKey; 7] = [
        GroupKey::Strategy,
        GroupKey::LambdaText,
        GroupKey::TThreshold,
        GroupKey::NSteps,
        GroupKey::Tz,
        GroupKey::LambdaSpk,
        GroupKey::Lambda,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GroupKey::Strategy => "strategy",
            GroupKey::Lambda => "lambda",
            GroupKey::LambdaText => "lambda_text",
            GroupKey::LambdaSpk => "lambda_spk",
            GroupKey::TThreshold => "t_threshold",
            GroupKey::NSteps => "n_steps",
            GroupKey::Tz => "tz",
            GroupKey::Seed => "seed",
            GroupKey::CondA => "cond_a",
            GroupKey::CondB => "cond_b",
        }
    }

    pub fn from_name(name: &str) -> Option<GroupKey> {
        use GroupKey::*;
        [Strategy, Lambda, LambdaText, LambdaSpk, TThreshold, NSteps, Tz, Seed, CondA, CondB]
            .into_iter()
            .find(|k| k.name() == name)
    }

    fn value(self, r: &MetricsRecord) -> KeyValue {
        match self {
            GroupKey::Strategy => KeyValue::Text(r.strategy.clone()),
            GroupKey::Lambda => KeyValue::Num(r.lambda),
            GroupKey::LambdaText => KeyValue::Num(r.lambda_text),
            GroupKey::LambdaSpk => KeyValue::Num(r.lambda_spk),
            GroupKey::TThreshold => KeyValue::Num(r.t_threshold),
            GroupKey::NSteps => KeyValue::Num(r.n_steps as f64),
            GroupKey::Tz => KeyValue::Num(r.tz),
            GroupKey::Seed => KeyValue::Num(r.seed as f64),
            GroupKey::CondA => KeyValue::Num(r.cond_a as f64),
            GroupKey::CondB => KeyValue::Num(r.cond_b as f64),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum KeyValue {
    Text(String),
    Num(f64),
}

impl std::fmt::Display for KeyValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            KeyValue::Text(s) => f.write_str(s),
            KeyValue::Num(x) => write!(f, "{x}"),
        }
    }
}

impl Eq for KeyValue {}

impl PartialOrd for KeyValue {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for KeyValue {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (KeyValue::Num(a), KeyValue::Num(b)) => a.total_cmp(b),
            (KeyValue::Text(a), KeyValue::Text(b)) => a.cmp(b),
            (KeyValue::Num(_), KeyValue::Text(_)) => Ordering::Less,
            (KeyValue::Text(_), KeyValue::Num(_)) => Ordering::Greater,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MeanSd {
    pub mean: f64,
    /// Sample standard deviation; zero for a single value.
    pub sd: f64,
}

impl MeanSd {
    pub fn of(values: &[f64]) -> Option<MeanSd> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Some(MeanSd { mean, sd })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub key: Vec<(GroupKey, KeyValue)>,
    pub n: usize,
    pub n_failed: usize,
    pub adherence_a: Option<MeanSd>,
    pub adherence_b: Option<MeanSd>,
    pub energy_distance: Option<MeanSd>,
    pub eval_count: f64,
}

/// Per-group mean and standard deviation of each metric. Rows come out
/// sorted by the group key in the given order, so putting `lambda` last
/// yields each curve in order of increasing weight. Failed cells are
/// counted but excluded from the statistics.
pub fn sweep_summary(records: &[MetricsRecord], group_keys: &[GroupKey]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<Vec<KeyValue>, Vec<&MetricsRecord>> = BTreeMap::new();
    for r in records {
        let key = group_keys.iter().map(|k| k.value(r)).collect();
        groups.entry(key).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(key, rows)| {
            let ok: Vec<&&MetricsRecord> = rows.iter().filter(|r| r.status == CellStatus::Ok).collect();
            let collect =
                |f: fn(&MetricsRecord) -> Option<f64>| MeanSd::of(&ok.iter().filter_map(|r| f(r)).collect::<Vec<_>>());
            SummaryRow {
                key: group_keys.iter().copied().zip(key).collect(),
                n: ok.len(),
                n_failed: rows.len() - ok.len(),
                adherence_a: collect(|r| r.adherence_a),
                adherence_b: collect(|r| r.adherence_b),
                energy_distance: collect(|r| r.energy_distance),
                eval_count: rows.iter().map(|r| r.eval_count as f64).sum::<f64>() / rows.len() as f64,
            }
        })
        .collect()
}

/// Writes summary rows as CSV with one column per group key followed by
/// `n, n_failed` and `<metric>_mean, <metric>_sd` pairs.
pub fn write_summary<W: std::io::Write>(rows: &[SummaryRow], group_keys: &[GroupKey], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = group_keys.iter().map(|k| k.name().to_string()).collect();
    header.extend(["n", "n_failed"].map(String::from));
    for m in ["adherence_a", "adherence_b", "energy_distance"] {
        header.push(format!("{m}_mean"));
        header.push(format!("{m}_sd"));
    }
    header.push("eval_count".into());
    w.write_record(&header)?;
    let cell = |m: Option<MeanSd>| match m {
        Some(m) => [m.mean.to_string(), m.sd.to_string()],
        None => [String::new(), String::new()],
    };
    for row in rows {
        let mut rec: Vec<String> = row.key.iter().map(|(_, v)| v.to_string()).collect();
        rec.push(row.n.to_string());
        rec.push(row.n_failed.to_string());
        rec.extend(cell(row.adherence_a));
        rec.extend(cell(row.adherence_b));
        rec.extend(cell(row.energy_distance));
        rec.push(row.eval_count.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
