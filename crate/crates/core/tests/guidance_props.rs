mod common;

use flowcfg::guidance::{combine, guide_def_text, guide_input_text, guide_standard, EvalSet, Slot};
use flowcfg::numerics::gaussian_sample;
use flowcfg::*;

#[test]
fn algebraic_identities_hold() {
    let v = common::guidance_algebra(1000);
    println!("{}", v.detail);
    v.assert();
}

#[test]
fn evaluation_budget_matches_formulas() {
    let v = common::evaluation_budget();
    println!("{}", v.detail);
    v.assert();
}

#[test]
fn def_text_branch_is_selected_by_threshold() {
    let mut rng = Rng::new(3);
    let e = [Slot::Full, Slot::AOnly, Slot::BOnly, Slot::None]
        .into_iter()
        .fold(EvalSet::new(), |e, s| e.with(s, gaussian_sample(&mut rng, 2).unwrap()));
    let (full, none) = (e.get(Slot::Full).unwrap(), e.get(Slot::None).unwrap());
    for thr in [0.0, 0.02, 0.08, 0.5, 1.0] {
        for k in 0..=100 {
            let t = k as f64 / 100.0;
            let out = guide_def_text(&e, 2.0, t, thr).unwrap();
            let expected =
                if t >= thr { guide_input_text(&e, 2.0).unwrap() } else { guide_standard(full, none, 2.0).unwrap() };
            assert_eq!(out, expected, "t={t} thr={thr}");
        }
    }
}

#[test]
fn combine_matches_direct_formulas_under_schedules() {
    let mut rng = Rng::new(4);
    let e = [Slot::Full, Slot::AOnly, Slot::BOnly, Slot::None, Slot::Negative]
        .into_iter()
        .fold(EvalSet::new(), |e, s| e.with(s, gaussian_sample(&mut rng, 3).unwrap()));
    let spec = GuidanceSpec {
        schedule: WeightSchedule::LinearClamped { w0: 4.0, w1: 0.0, w_min: 1.0 },
        ..GuidanceSpec::new(Strategy::Standard, 0.0)
    };
    let (full, none) = (e.get(Slot::Full).unwrap(), e.get(Slot::None).unwrap());
    assert_eq!(combine(&spec, &e, 0.5).unwrap(), guide_standard(full, none, 2.0).unwrap());
    assert_eq!(combine(&spec, &e, 0.9).unwrap(), guide_standard(full, none, 1.0).unwrap());
}
