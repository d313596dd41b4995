//! Classifier-free guidance strategies as pure maps from cached model
//! evaluations to a guided velocity.
//!
//! All single-weight strategies use the convention where a weight of zero
//! returns the fully conditioned prediction unchanged:
//! `guided = e_full + lambda * (e_full - e_ref)`.

use serde::{Deserialize, Serialize};

use crate::conditioning::{ConditionPair, Mask};
use crate::error::{check_dims, invalid, Error, Result};
use crate::model::VelocityModel;
use crate::numerics::{perp_component, Vector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    None,
    Standard,
    NegativePrompt,
    PerpNeg,
    CfgZeroStar,
    DualSeparated,
    MegaSeparated,
    InputText,
    InputAudio,
    DefText,
}

impl Strategy {
    pub const ALL: [Strategy; 10] = [
        Strategy::None,
        Strategy::Standard,
        Strategy::NegativePrompt,
        Strategy::PerpNeg,
        Strategy::CfgZeroStar,
        Strategy::DualSeparated,
        Strategy::MegaSeparated,
        Strategy::InputText,
        Strategy::InputAudio,
        Strategy::DefText,
    ];

    /// The lowercase tag used in configs and result files.
    pub fn name(self) -> &'static str {
        match self {
            Strategy::None => "none",
            Strategy::Standard => "standard",
            Strategy::NegativePrompt => "negative_prompt",
            Strategy::PerpNeg => "perp_neg",
            Strategy::CfgZeroStar => "cfg_zero_star",
            Strategy::DualSeparated => "dual_separated",
            Strategy::MegaSeparated => "mega_separated",
            Strategy::InputText => "input_text",
            Strategy::InputAudio => "input_audio",
            Strategy::DefText => "def_text",
        }
    }

    pub fn from_name(name: &str) -> Option<Strategy> {
        Strategy::ALL.into_iter().find(|s| s.name() == name)
    }

    pub fn is_separated(self) -> bool {
        matches!(self, Strategy::DualSeparated | Strategy::MegaSeparated)
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Time-dependent guidance weight for single-weight strategies.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightSchedule {
    #[default]
    Constant,
    Linear {
        w0: f64,
        w1: f64,
    },
    LinearClamped {
        w0: f64,
        w1: f64,
        w_min: f64,
    },
}

fn default_threshold() -> f64 {
    0.08
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuidanceSpec {
    pub strategy: Strategy,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default)]
    pub lambda_text: f64,
    #[serde(default)]
    pub lambda_spk: f64,
    #[serde(default = "default_threshold")]
    pub t_threshold: f64,
    #[serde(default)]
    pub schedule: WeightSchedule,
    /// Zero-init truncation applied to the pre-warp time axis.
    #[serde(default)]
    pub zero_init: f64,
    /// Condition used by the negative-prompt strategies; unconditioned when
    /// omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub negative: Option<ConditionPair>,
}

impl GuidanceSpec {
    pub fn new(strategy: Strategy, lambda: f64) -> Self {
        Self {
            strategy,
            lambda,
            lambda_text: 0.0,
            lambda_spk: 0.0,
            t_threshold: default_threshold(),
            schedule: WeightSchedule::Constant,
            zero_init: 0.0,
            negative: None,
        }
    }

    pub fn none() -> Self {
        Self::new(Strategy::None, 0.0)
    }

    pub fn separated(strategy: Strategy, lambda_text: f64, lambda_spk: f64) -> Self {
        Self { lambda_text, lambda_spk, ..Self::new(strategy, 0.0) }
    }

    pub fn def_text(lambda: f64, t_threshold: f64) -> Self {
        Self { t_threshold, ..Self::new(Strategy::DefText, lambda) }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.lambda, self.lambda_text, self.lambda_spk, self.t_threshold, self.zero_init];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(invalid("guidance parameters must be finite"));
        }
        if self.lambda < 0.0 || self.lambda_text < 0.0 || self.lambda_spk < 0.0 {
            return Err(invalid("guidance weights must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.t_threshold) {
            return Err(invalid("t_threshold must lie in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.zero_init) {
            return Err(invalid("zero_init must lie in [0, 1)"));
        }
        let weights: &[f64] = match &self.schedule {
            WeightSchedule::Constant => &[],
            WeightSchedule::Linear { w0, w1 } => &[*w0, *w1],
            WeightSchedule::LinearClamped { w0, w1, w_min } => &[*w0, *w1, *w_min],
        };
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(invalid("schedule weights must be finite"));
        }
        Ok(())
    }
}

/// Guidance weight at time `t`.
pub fn effective_lambda(spec: &GuidanceSpec, t: f64) -> f64 {
    match spec.schedule {
        WeightSchedule::Constant => spec.lambda,
        WeightSchedule::Linear { w0, w1 } => w0 + (w1 - w0) * t,
        WeightSchedule::LinearClamped { w0, w1, w_min } => (w0 + (w1 - w0) * t).max(w_min),
    }
}

/// A cached evaluation. `Negative` is the prediction under the spec's
/// negative condition; the rest are masks of the sampled condition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Slot {
    Full,
    AOnly,
    BOnly,
    None,
    Negative,
}

impl Slot {
    fn index(self) -> usize {
        self as usize
    }

    pub fn condition(self, cond: &ConditionPair, spec: &GuidanceSpec) -> ConditionPair {
        match self {
            Slot::Full => cond.masked(Mask::Full),
            Slot::AOnly => cond.masked(Mask::AOnly),
            Slot::BOnly => cond.masked(Mask::BOnly),
            Slot::None => cond.masked(Mask::None),
            Slot::Negative => spec.negative.unwrap_or(ConditionPair::NONE),
        }
    }
}

/// Model evaluations at one `(x, t)`, at most one per slot.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalSet {
    slots: [Option<Vector>; 5],
}

impl EvalSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, slot: Slot, v: Vector) -> Self {
        self.insert(slot, v);
        self
    }

    pub fn insert(&mut self, slot: Slot, v: Vector) {
        self.slots[slot.index()] = Some(v);
    }

    pub fn get(&self, slot: Slot) -> Result<&Vector> {
        self.slots[slot.index()].as_ref().ok_or(Error::MissingEvaluation(slot))
    }

    pub fn contains(&self, slot: Slot) -> bool {
        self.slots[slot.index()].is_some()
    }

    pub fn len(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Multiplies every cached evaluation by `s`.
    pub fn scaled(&self, s: f64) -> EvalSet {
        EvalSet { slots: self.slots.clone().map(|v| v.map(|v| v.scale(s))) }
    }
}

fn cfg_step(e_full: &Vector, e_ref: &Vector, lam: f64) -> Result<Vector> {
    check_dims(e_full.dim(), e_ref.dim())?;
    Ok(e_full.add_scaled(lam, &(e_full - e_ref)))
}

pub fn guide_standard(e_full: &Vector, e_none: &Vector, lam: f64) -> Result<Vector> {
    cfg_step(e_full, e_none, lam)
}

/// Standard CFG with the unconditioned branch replaced by a negative one.
pub fn guide_negative(e_full: &Vector, e_neg: &Vector, lam: f64) -> Result<Vector> {
    cfg_step(e_full, e_neg, lam)
}

/// Pushes away from the part of the negative prediction that is
/// perpendicular to the positive one.
pub fn guide_perp_neg(e_full: &Vector, e_neg: &Vector, lam: f64) -> Result<Vector> {
    let perp = perp_component(e_neg, e_full)?;
    Ok(e_full.add_scaled(-lam, &perp))
}

/// Rescaled-unconditional form `s* e_none + (1 + lam) (e_full - s* e_none)`
/// with `s* = <e_full, e_none> / |e_none|^2`; the bracket is the component
/// of `e_full` perpendicular to `e_none`.
pub fn guide_cfg_zero_star(e_full: &Vector, e_none: &Vector, lam: f64) -> Result<Vector> {
    let perp = perp_component(e_full, e_none)?;
    Ok(e_full.add_scaled(lam, &perp))
}

/// `e_full + lam_text (e_a - e_none) + lam_spk (e_b - e_none)`
pub fn guide_dual_separated(evals: &EvalSet, lam_text: f64, lam_spk: f64) -> Result<Vector> {
    let full = evals.get(Slot::Full)?;
    let a = evals.get(Slot::AOnly)?;
    let b = evals.get(Slot::BOnly)?;
    let none = evals.get(Slot::None)?;
    for v in [a, b, none] {
        check_dims(full.dim(), v.dim())?;
    }
    Ok(full.add_scaled(lam_text, &(a - none)).add_scaled(lam_spk, &(b - none)))
}

/// `e_none + lam_text (e_a - e_none) + lam_spk (e_full - e_a)`
pub fn guide_mega_separated(evals: &EvalSet, lam_text: f64, lam_spk: f64) -> Result<Vector> {
    let full = evals.get(Slot::Full)?;
    let a = evals.get(Slot::AOnly)?;
    let none = evals.get(Slot::None)?;
    for v in [a, none] {
        check_dims(full.dim(), v.dim())?;
    }
    Ok(none.add_scaled(lam_text, &(a - none)).add_scaled(lam_spk, &(full - a)))
}

/// Guidance against the prediction that sees only factor A, which leaves
/// factor B as the emphasized condition.
pub fn guide_input_text(evals: &EvalSet, lam: f64) -> Result<Vector> {
    cfg_step(evals.get(Slot::Full)?, evals.get(Slot::AOnly)?, lam)
}

/// Guidance against the prediction that sees only factor B.
pub fn guide_input_audio(evals: &EvalSet, lam: f64) -> Result<Vector> {
    cfg_step(evals.get(Slot::Full)?, evals.get(Slot::BOnly)?, lam)
}

/// Standard CFG strictly below `t_threshold`, input_text from it onwards.
pub fn guide_def_text(evals: &EvalSet, lam: f64, t: f64, t_threshold: f64) -> Result<Vector> {
    if t >= t_threshold {
        guide_input_text(evals, lam)
    } else {
        guide_standard(evals.get(Slot::Full)?, evals.get(Slot::None)?, lam)
    }
}

/// Slots the strategy reads at time `t`, in fetch order.
pub fn required_slots(spec: &GuidanceSpec, t: f64) -> &'static [Slot] {
    match spec.strategy {
        Strategy::None => &[Slot::Full],
        Strategy::Standard | Strategy::CfgZeroStar => &[Slot::Full, Slot::None],
        Strategy::NegativePrompt | Strategy::PerpNeg => &[Slot::Full, Slot::Negative],
        Strategy::DualSeparated => &[Slot::Full, Slot::AOnly, Slot::BOnly, Slot::None],
        Strategy::MegaSeparated => &[Slot::Full, Slot::AOnly, Slot::None],
        Strategy::InputText => &[Slot::Full, Slot::AOnly],
        Strategy::InputAudio => &[Slot::Full, Slot::BOnly],
        Strategy::DefText if t >= spec.t_threshold => &[Slot::Full, Slot::AOnly],
        Strategy::DefText => &[Slot::Full, Slot::None],
    }
}

/// Applies the strategy to already-fetched evaluations.
pub fn combine(spec: &GuidanceSpec, evals: &EvalSet, t: f64) -> Result<Vector> {
    let lam = effective_lambda(spec, t);
    let full = || evals.get(Slot::Full);
    match spec.strategy {
        Strategy::None => full().cloned(),
        Strategy::Standard => guide_standard(full()?, evals.get(Slot::None)?, lam),
        Strategy::NegativePrompt => guide_negative(full()?, evals.get(Slot::Negative)?, lam),
        Strategy::PerpNeg => guide_perp_neg(full()?, evals.get(Slot::Negative)?, lam),
        Strategy::CfgZeroStar => guide_cfg_zero_star(full()?, evals.get(Slot::None)?, lam),
        Strategy::DualSeparated => guide_dual_separated(evals, spec.lambda_text, spec.lambda_spk),
        Strategy::MegaSeparated => guide_mega_separated(evals, spec.lambda_text, spec.lambda_spk),
        Strategy::InputText => guide_input_text(evals, lam),
        Strategy::InputAudio => guide_input_audio(evals, lam),
        Strategy::DefText => guide_def_text(evals, lam, t, spec.t_threshold),
    }
}

fn check_condition(cond: &ConditionPair) -> Result<()> {
    if cond.is_full() {
        Ok(())
    } else {
        Err(invalid("guided sampling needs both factors present"))
    }
}

/// Guided velocity at one state plus the number of model evaluations spent.
pub fn guided_velocity<M: VelocityModel + ?Sized>(
    model: &M,
    x: &Vector,
    t: f64,
    cond: &ConditionPair,
    spec: &GuidanceSpec,
) -> Result<(Vector, usize)> {
    check_condition(cond)?;
    let slots = required_slots(spec, t);
    let mut evals = EvalSet::new();
    for &slot in slots {
        evals.insert(slot, model.velocity(x, t, &slot.condition(cond, spec))?);
    }
    Ok((combine(spec, &evals, t)?, slots.len()))
}

/// Batched [`guided_velocity`]: one model call per required slot. Returns
/// the guided velocities and the per-state evaluation count.
pub fn guided_velocity_batch<M: VelocityModel + ?Sized>(
    model: &M,
    xs: &[Vector],
    t: f64,
    cond: &ConditionPair,
    spec: &GuidanceSpec,
) -> Result<(Vec<Vector>, usize)> {
    check_condition(cond)?;
    let slots = required_slots(spec, t);
    let mut columns = Vec::with_capacity(slots.len());
    for &slot in slots {
        let out = model.velocity_batch(xs, t, &slot.condition(cond, spec))?;
        debug_assert_eq!(out.len(), xs.len());
        columns.push(out.into_iter());
    }
    let guided = (0..xs.len())
        .map(|_| {
            let mut evals = EvalSet::new();
            for (&slot, col) in slots.iter().zip(columns.iter_mut()) {
                evals.insert(slot, col.next().expect("batch length"));
            }
            combine(spec, &evals, t)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((guided, slots.len()))
}
