//! Check suites shared by the topic tests and the acceptance runner. Each
//! suite returns a verdict instead of panicking so the runner can report
//! every criterion.

#![allow(dead_code)]

use std::time::{Duration, Instant};

use flowcfg::conditioning::sample_target;
use flowcfg::experiment::{run_cells, ExperimentConfig, ModelSource};
use flowcfg::guidance::{
    guide_cfg_zero_star, guide_def_text, guide_dual_separated, guide_input_audio, guide_input_text,
    guide_mega_separated, guide_negative, guide_perp_neg, guide_standard, required_slots, EvalSet, Slot,
};
use flowcfg::metrics::{energy_distance, CellStatus, MetricsRecord};
use flowcfg::model::CountingModel;
use flowcfg::neural::{draw_fm_batch, Architecture, Trained};
use flowcfg::numerics::{gaussian_sample, perp_component};
use flowcfg::sampler::sample_batch;
use flowcfg::schedule::{make_grid, start_time, step_sizes};
use flowcfg::*;
use nalgebra::{DMatrix, DVector};

pub struct Verdict {
    pub pass: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl Verdict {
    fn new(pass: bool, detail: String, started: Instant) -> Self {
        Self { pass, detail, elapsed: started.elapsed() }
    }

    pub fn assert(&self) {
        assert!(self.pass, "{}", self.detail);
    }
}

fn vec(c: Vec<f64>) -> Vector {
    Vector::new(c).unwrap()
}

fn rel_err(a: &Vector, b: &Vector) -> f64 {
    (a - b).norm() / a.norm().max(b.norm()).max(1.0)
}

fn random_evals(rng: &mut Rng, dim: usize) -> EvalSet {
    let mut e = EvalSet::new();
    for slot in [Slot::Full, Slot::AOnly, Slot::BOnly, Slot::None, Slot::Negative] {
        e.insert(slot, gaussian_sample(rng, dim).unwrap().scale(1.0 + 3.0 * rng.uniform()));
    }
    e
}

// ---------------------------------------------------------------- guidance

/// Largest relative deviation of each identity over `draws` random
/// evaluation sets.
pub fn guidance_algebra(draws: usize) -> Verdict {
    let started = Instant::now();
    let mut rng = Rng::new(2024);
    let mut worst: Vec<(&str, f64)> = vec![
        ("zero_guidance", 0.0),
        ("mega_input_text", 0.0),
        ("dual_cancellation", 0.0),
        ("homogeneity", 0.0),
        ("perpendicular", 0.0),
        ("idempotent", 0.0),
    ];
    let mut bump = |name: &str, v: f64| {
        let slot = worst.iter_mut().find(|(n, _)| *n == name).unwrap();
        slot.1 = slot.1.max(v);
    };
    for i in 0..draws {
        let dim = [2, 3, 5][i % 3];
        let e = random_evals(&mut rng, dim);
        let full = e.get(Slot::Full).unwrap().clone();
        let (a, b, none, neg) = (
            e.get(Slot::AOnly).unwrap().clone(),
            e.get(Slot::BOnly).unwrap().clone(),
            e.get(Slot::None).unwrap().clone(),
            e.get(Slot::Negative).unwrap().clone(),
        );
        let t = rng.uniform();

        let neutral = [
            guide_standard(&full, &none, 0.0).unwrap(),
            guide_negative(&full, &neg, 0.0).unwrap(),
            guide_perp_neg(&full, &neg, 0.0).unwrap(),
            guide_cfg_zero_star(&full, &none, 0.0).unwrap(),
            guide_dual_separated(&e, 0.0, 0.0).unwrap(),
            guide_mega_separated(&e, 1.0, 1.0).unwrap(),
            guide_input_text(&e, 0.0).unwrap(),
            guide_input_audio(&e, 0.0).unwrap(),
            guide_def_text(&e, 0.0, t, 0.08).unwrap(),
        ];
        for out in &neutral {
            bump("zero_guidance", rel_err(out, &full));
        }

        for lam in [0.5, 1.0, 2.0, 4.0] {
            let mega = guide_mega_separated(&e, 1.0, 1.0 + lam).unwrap();
            bump("mega_input_text", rel_err(&mega, &guide_input_text(&e, lam).unwrap()));
        }

        let lt = 4.0 * rng.uniform();
        let only_text = guide_dual_separated(&e, lt, 0.0).unwrap();
        bump("dual_cancellation", rel_err(&only_text, &full.add_scaled(lt, &(&a - &none))));
        let only_spk = guide_dual_separated(&e, 0.0, lt).unwrap();
        bump("dual_cancellation", rel_err(&only_spk, &full.add_scaled(lt, &(&b - &none))));

        let s = 0.1 + 10.0 * rng.uniform();
        let lam = 4.0 * rng.uniform();
        let es = e.scaled(s);
        let (fs, ns, gs) = (es.get(Slot::Full).unwrap(), es.get(Slot::None).unwrap(), es.get(Slot::Negative).unwrap());
        let pairs = [
            (guide_standard(fs, ns, lam).unwrap(), guide_standard(&full, &none, lam).unwrap()),
            (guide_negative(fs, gs, lam).unwrap(), guide_negative(&full, &neg, lam).unwrap()),
            (guide_perp_neg(fs, gs, lam).unwrap(), guide_perp_neg(&full, &neg, lam).unwrap()),
            (guide_cfg_zero_star(fs, ns, lam).unwrap(), guide_cfg_zero_star(&full, &none, lam).unwrap()),
            (guide_dual_separated(&es, lam, lt).unwrap(), guide_dual_separated(&e, lam, lt).unwrap()),
            (guide_mega_separated(&es, lam, lt).unwrap(), guide_mega_separated(&e, lam, lt).unwrap()),
            (guide_input_text(&es, lam).unwrap(), guide_input_text(&e, lam).unwrap()),
            (guide_input_audio(&es, lam).unwrap(), guide_input_audio(&e, lam).unwrap()),
            (guide_def_text(&es, lam, t, 0.08).unwrap(), guide_def_text(&e, lam, t, 0.08).unwrap()),
        ];
        for (scaled, base) in &pairs {
            bump("homogeneity", rel_err(scaled, &base.scale(s)));
        }

        let p = perp_component(&neg, &full).unwrap();
        bump("perpendicular", p.dot(&full).abs() / (p.norm() * full.norm()).max(1e-300));
        let pneg = guide_perp_neg(&full, &neg, lam).unwrap();
        let delta = &pneg - &full;
        bump("perpendicular", delta.dot(&full).abs() / (delta.norm() * full.norm()).max(1e-300));
        bump("idempotent", rel_err(&perp_component(&p, &full).unwrap(), &p));
    }
    let tol = 1e-9;
    let pass = worst.iter().all(|(_, w)| *w <= tol);
    let detail = worst.iter().map(|(n, w)| format!("{n}={w:.1e}")).collect::<Vec<_>>().join(" ");
    Verdict::new(pass, format!("{draws} draws, max rel err: {detail}"), started)
}

// ---------------------------------------------------------------- schedule

pub fn scheduler() -> Verdict {
    let started = Instant::now();
    let mut fails = Vec::new();
    let g = make_grid(GridKind::Cosine, 32, 0.0).unwrap();
    let t6 = g.points()[6];
    if (t6 - 0.0430).abs() >= 1e-4 {
        fails.push(format!("t6={t6}"));
    }
    for n in [1, 2, 4, 8, 16, 32, 64, 128] {
        for tz in [0.0, 0.05, 0.1, 0.25, 0.5, 0.9] {
            let g = make_grid(GridKind::Cosine, n, tz).unwrap();
            let h = step_sizes(&g);
            if !h.windows(2).all(|w| w[1] > w[0]) || h[0] <= 0.0 {
                fails.push(format!("steps not increasing n={n} tz={tz}"));
            }
            let expected = 1.0 - (std::f64::consts::FRAC_PI_2 * tz).cos();
            if (g.start() - expected).abs() > 1e-12 || (start_time(GridKind::Cosine, tz) - expected).abs() > 1e-12 {
                fails.push(format!("start n={n} tz={tz}"));
            }
        }
    }
    let pass = fails.is_empty();
    let detail = if pass { format!("t6={t6:.6}") } else { fails.join("; ") };
    Verdict::new(pass, detail, started)
}

// ---------------------------------------------------------------- oracle

/// Independent path: per component, build the joint covariance of
/// `(x_t, x_1 - x_0)` from the linear map of `(x_0, x_1)`, condition it with
/// a Cholesky solve, and weight components by their marginal densities.
pub fn joint_gaussian_velocity(spec: &TaskSpec, x: &Vector, t: f64, cond: &ConditionPair) -> Vector {
    let d = spec.dim;
    // z = (x_t, u) = A (x_0, x_1)
    let mut a = DMatrix::<f64>::zeros(2 * d, 2 * d);
    for i in 0..d {
        a[(i, i)] = 1.0 - t;
        a[(i, d + i)] = t;
        a[(d + i, i)] = -1.0;
        a[(d + i, d + i)] = 1.0;
    }
    let mut src_cov = DMatrix::<f64>::identity(2 * d, 2 * d);
    for i in 0..d {
        src_cov[(d + i, d + i)] = spec.sigma * spec.sigma;
    }
    let cov = &a * src_cov * a.transpose();
    let sxx = cov.view((0, 0), (d, d)).into_owned();
    let sux = cov.view((d, 0), (d, d)).into_owned();
    let chol = sxx.clone().cholesky().expect("positive definite");
    let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let xv = DVector::from_column_slice(x.as_slice());

    let mut logw = Vec::new();
    let mut means = Vec::new();
    for mu in spec.component_means(cond) {
        let mut src_mean = DVector::<f64>::zeros(2 * d);
        for i in 0..d {
            src_mean[d + i] = mu[i];
        }
        let m = &a * src_mean;
        let mx = m.rows(0, d).into_owned();
        let mu_u = m.rows(d, d).into_owned();
        let r = &xv - &mx;
        let sol = chol.solve(&r);
        logw.push(-0.5 * r.dot(&sol) - 0.5 * log_det);
        means.push(mu_u + &sux * sol);
    }
    let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logw.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    let mut out = DVector::<f64>::zeros(d);
    for (wk, mk) in w.iter().zip(&means) {
        out += mk * (*wk / total);
    }
    vec(out.iter().copied().collect())
}

fn random_condition(spec: &TaskSpec, rng: &mut Rng) -> ConditionPair {
    let a = rng.below(spec.centers_a.len());
    let b = rng.below(spec.centers_b.len());
    ConditionPair::both(a, b).masked(Mask::ALL[rng.below(4)])
}

/// Kernel-weighted Monte-Carlo estimate of `E[x_1 - x_0 | x_t ~ x]` and its
/// per-coordinate standard error.
pub fn kernel_mc_velocity(
    spec: &TaskSpec,
    x: &Vector,
    t: f64,
    cond: &ConditionPair,
    draws: usize,
    bandwidth: f64,
    rng: &mut Rng,
) -> (Vec<f64>, Vec<f64>) {
    let d = spec.dim;
    let means = spec.component_means(cond);
    let mut ws = Vec::with_capacity(draws);
    let mut us = Vec::with_capacity(draws);
    for _ in 0..draws {
        let mu = &means[rng.below(means.len())];
        let x0 = gaussian_sample(rng, d).unwrap();
        let x1 = mu.add_scaled(spec.sigma, &gaussian_sample(rng, d).unwrap());
        let xt = x0.add_scaled(t, &(&x1 - &x0));
        let w = (-(&xt - x).norm_sq() / (2.0 * bandwidth * bandwidth)).exp();
        if w > 0.0 {
            ws.push(w);
            us.push(&x1 - &x0);
        }
    }
    let total: f64 = ws.iter().sum();
    let mut est = vec![0.0; d];
    for (w, u) in ws.iter().zip(&us) {
        for k in 0..d {
            est[k] += w * u[k] / total;
        }
    }
    let mut se = vec![0.0; d];
    for (w, u) in ws.iter().zip(&us) {
        for k in 0..d {
            se[k] += (w * (u[k] - est[k])).powi(2);
        }
    }
    for s in &mut se {
        *s = s.sqrt() / total;
    }
    (est, se)
}

pub fn oracle_suite() -> Verdict {
    let started = Instant::now();
    let spec = TaskSpec::default();
    let oracle = OracleModel::new(spec.clone()).unwrap();
    let mut rng = Rng::new(77);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let cond = random_condition(&spec, &mut rng);
        let t = rng.uniform();
        let x = gaussian_sample(&mut rng, spec.dim).unwrap().scale(2.5);
        let v = oracle.velocity(&x, t, &cond).unwrap();
        let reference = joint_gaussian_velocity(&spec, &x, t, &cond);
        worst = worst.max(v.max_abs_diff(&reference));
    }
    let mut z_max = 0.0f64;
    for _ in 0..10 {
        let cond = random_condition(&spec, &mut rng);
        let t = 0.1 + 0.8 * rng.uniform();
        // Query where the interpolant actually has mass.
        let means = spec.component_means(&cond);
        let mu = &means[rng.below(means.len())];
        let x0 = gaussian_sample(&mut rng, spec.dim).unwrap();
        let x1 = mu.add_scaled(spec.sigma, &gaussian_sample(&mut rng, spec.dim).unwrap());
        let x = x0.add_scaled(t, &(&x1 - &x0));
        let v = oracle.velocity(&x, t, &cond).unwrap();
        let (est, se) = kernel_mc_velocity(&spec, &x, t, &cond, 1_000_000, 0.03, &mut rng);
        for k in 0..spec.dim {
            z_max = z_max.max((est[k] - v[k]).abs() / se[k]);
        }
    }
    let pass = worst < 1e-9 && z_max < 3.0;
    Verdict::new(
        pass,
        format!("joint-Gaussian max abs diff {worst:.1e} (tol 1e-9); Monte-Carlo max |z| {z_max:.2} (tol 3)"),
        started,
    )
}

// ---------------------------------------------------------------- sampler

pub fn sample_oracle(
    spec: &TaskSpec,
    cond: &ConditionPair,
    n_steps: usize,
    method: Method,
    n: usize,
    seed: u64,
) -> Vec<Vector> {
    let oracle = OracleModel::new(spec.clone()).unwrap();
    let grid = make_grid(GridKind::Cosine, n_steps, 0.0).unwrap();
    let mut rng = Rng::new(seed);
    sample_batch(&oracle, cond, &grid, &GuidanceSpec::none(), &mut rng, method, n, false).unwrap().samples
}

fn target_draws(spec: &TaskSpec, cond: &ConditionPair, n: usize, seed: u64) -> Vec<Vector> {
    let mut rng = Rng::new(seed).split_str("reference");
    (0..n).map(|_| sample_target(spec, cond, &mut rng).unwrap()).collect()
}

/// Seed-averaged energy distance to fresh target draws. Every step count
/// shares the initial noise of a seed.
pub fn mean_energy_distance(spec: &TaskSpec, cond: &ConditionPair, n_steps: usize, method: Method, n: usize) -> f64 {
    let seeds = [0u64, 1, 2];
    let total: f64 = seeds
        .iter()
        .map(|&s| {
            let xs = sample_oracle(spec, cond, n_steps, method, n, s);
            energy_distance(&xs, &target_draws(spec, cond, n, s)).unwrap()
        })
        .sum();
    total / seeds.len() as f64
}

pub fn sampler_suite() -> Verdict {
    let started = Instant::now();
    let spec = TaskSpec::default();
    let var = spec.sigma * spec.sigma;
    let (mut mean_err, mut var_err) = (0.0f64, 0.0f64);
    for (i, cond) in spec.all_conditions().iter().enumerate() {
        let xs = sample_oracle(&spec, cond, 64, Method::Euler, 10_000, 100 + i as u64);
        let mu = spec.component_mean(cond.a.unwrap(), cond.b.unwrap());
        let n = xs.len() as f64;
        for k in 0..spec.dim {
            let m = xs.iter().map(|x| x[k]).sum::<f64>() / n;
            let v = xs.iter().map(|x| (x[k] - m).powi(2)).sum::<f64>() / (n - 1.0);
            mean_err = mean_err.max((m - mu[k]).abs());
            var_err = var_err.max((v - var).abs());
        }
    }
    let cond = ConditionPair::both(1, 2);
    let eds: Vec<f64> =
        [8, 16, 32, 64].iter().map(|&n| mean_energy_distance(&spec, &cond, n, Method::Euler, 2000)).collect();
    let monotone = eds.windows(2).all(|w| w[1] <= w[0]);
    let pass = mean_err < 0.05 && var_err < 0.1 && monotone;
    Verdict::new(
        pass,
        format!(
            "max mean err {mean_err:.4} (tol 0.05), max var err {var_err:.4} (tol 0.1), energy distance over n_steps 8/16/32/64: {}",
            eds.iter().map(|e| format!("{e:.5}")).collect::<Vec<_>>().join(" ")
        ),
        started,
    )
}

// ---------------------------------------------------------------- training

/// Tensor-wise relative error of the analytic gradient against central
/// differences with step `h`.
pub fn gradient_check(h: f64) -> Vec<(&'static str, f64)> {
    let spec = TaskSpec::default();
    let mut model = MlpModel::init(Architecture::for_task(&spec), &mut Rng::new(11));
    let mut rng = Rng::new(12);
    let conds = spec.all_conditions();
    let items: Vec<_> = (0..32)
        .map(|i| {
            let c = conds[i % conds.len()];
            (sample_target(&spec, &c, &mut rng).unwrap(), c)
        })
        .collect();
    let mut batch = draw_fm_batch(&spec, &items, &mut rng).unwrap();
    batch.conds[0] = ConditionPair::NONE;
    batch.conds[1] = ConditionPair { a: None, b: Some(2) };
    let (_, grad) = model.loss_and_grad(&batch).unwrap();
    let mut out = Vec::new();
    for (name, range) in model.tensor_ranges() {
        let (mut diff, mut scale) = (0.0, 0.0);
        for i in range {
            let p = model.params()[i];
            model.params_mut()[i] = p + h;
            let up = model.loss_and_grad(&batch).unwrap().0;
            model.params_mut()[i] = p - h;
            let down = model.loss_and_grad(&batch).unwrap().0;
            model.params_mut()[i] = p;
            let numeric = (up - down) / (2.0 * h);
            diff += (numeric - grad[i]).powi(2);
            scale += numeric.powi(2) + grad[i].powi(2);
        }
        out.push((name, diff.sqrt() / scale.sqrt().max(1e-12)));
    }
    out
}

pub fn training_suite(trained: &Trained, train_time: Duration) -> Verdict {
    let started = Instant::now();
    let grads = gradient_check(1e-4);
    let grad_worst = grads.iter().map(|g| g.1).fold(0.0, f64::max);

    let steps = trained.curve.len();
    let first = trained.mean_loss(0..1000);
    let last = trained.mean_loss(steps - 1000..steps);
    let ratio = last / first;

    let spec = TaskSpec::default();
    let cfg = TrainConfig { steps: 300, seed: 5, ..TrainConfig::default() };
    let a = flowcfg::neural::train(&spec, &cfg).unwrap();
    let b = flowcfg::neural::train(&spec, &cfg).unwrap();
    let ja = flowcfg::checkpoint::Checkpoint::from_model(&a.model, &spec, 5, 300).to_json().unwrap();
    let jb = flowcfg::checkpoint::Checkpoint::from_model(&b.model, &spec, 5, 300).to_json().unwrap();
    let deterministic = a.model == b.model && ja == jb;

    let elapsed = started.elapsed() + train_time;
    let pass = grad_worst < 1e-4 && ratio < 0.6 && deterministic;
    Verdict {
        pass,
        detail: format!(
            "gradient max rel err {grad_worst:.1e} (tol 1e-4); loss mean first 1000 {first:.4}, last 1000 {last:.4}, ratio {ratio:.3} (tol < 0.6); retrain identical: {deterministic}"
        ),
        elapsed,
    }
}

// ---------------------------------------------------------------- trade-off

#[derive(Clone, Copy, Debug, Default)]
pub struct Means {
    pub a: f64,
    pub b: f64,
}

fn means_of(rows: &[MetricsRecord], strategy: &str, lambda: f64) -> Means {
    let sel: Vec<&MetricsRecord> =
        rows.iter().filter(|r| r.strategy == strategy && r.lambda == lambda && r.status == CellStatus::Ok).collect();
    let n = sel.len() as f64;
    Means {
        a: sel.iter().map(|r| r.adherence_a.unwrap()).sum::<f64>() / n,
        b: sel.iter().map(|r| r.adherence_b.unwrap()).sum::<f64>() / n,
    }
}

pub struct TradeoffPoint {
    pub lambda: f64,
    pub standard: Means,
    pub input_text: Means,
    pub def_text: Means,
}

impl TradeoffPoint {
    /// input_text gains at least 0.5pp of B over standard and loses some A.
    pub fn b_holds(&self) -> bool {
        self.input_text.b - self.standard.b >= 0.005 && self.input_text.a < self.standard.a
    }

    /// def_text recovers half the A deficit and keeps half the B gain.
    pub fn c_holds(&self) -> bool {
        let deficit = self.standard.a - self.input_text.a;
        let gain = self.input_text.b - self.standard.b;
        deficit > 0.0
            && gain > 0.0
            && self.def_text.a - self.input_text.a >= 0.5 * deficit
            && self.def_text.b - self.standard.b >= 0.5 * gain
    }

    pub fn describe(&self) -> String {
        format!(
            "lambda={}: standard A={:.4} B={:.4}; input_text A={:.4} B={:.4}; def_text A={:.4} B={:.4}",
            self.lambda,
            self.standard.a,
            self.standard.b,
            self.input_text.a,
            self.input_text.b,
            self.def_text.a,
            self.def_text.b
        )
    }
}

pub fn tradeoff_sweep<M: VelocityModel>(model: &M, lambdas: &[f64], samples: usize) -> (Means, Vec<TradeoffPoint>) {
    let mut cfg = ExperimentConfig::new(
        ModelSource::Oracle,
        vec![
            GuidanceSpec::new(Strategy::Standard, 0.0),
            GuidanceSpec::new(Strategy::InputText, 0.0),
            GuidanceSpec::def_text(0.0, 0.08),
        ],
    );
    cfg.samples_per_cell = samples;
    cfg.energy_distance = false;
    let mut all = lambdas.to_vec();
    all.insert(0, 0.0);
    cfg.lambdas = Some(all);
    let rows = run_cells(&cfg, model, "acceptance", 1).unwrap();
    let baseline = means_of(&rows, "standard", 0.0);
    let points = lambdas
        .iter()
        .map(|&lambda| TradeoffPoint {
            lambda,
            standard: means_of(&rows, "standard", lambda),
            input_text: means_of(&rows, "input_text", lambda),
            def_text: means_of(&rows, "def_text", lambda),
        })
        .collect();
    (baseline, points)
}

pub fn tradeoff_suite<M: VelocityModel>(model: &M, train_time: Duration) -> Verdict {
    let started = Instant::now();
    let (baseline, at2) = tradeoff_sweep(model, &[2.0], 2000);
    let p2 = &at2[0];
    let a_ok = p2.standard.a > baseline.a && p2.standard.b > baseline.b;
    let mut lines = vec![format!("lambda=0: A={:.4} B={:.4}", baseline.a, baseline.b), p2.describe()];
    let mut bc_ok = p2.b_holds() && p2.c_holds();
    if !bc_ok {
        let (_, rest) = tradeoff_sweep(model, &[1.0, 3.0, 4.0], 2000);
        for p in &rest {
            lines.push(p.describe());
        }
        bc_ok = rest.iter().any(|p| p.b_holds() && p.c_holds());
    }
    Verdict {
        pass: a_ok && bc_ok,
        detail: format!("(a) {a_ok}, (b)+(c) {bc_ok} | {}", lines.join(" | ")),
        elapsed: started.elapsed() + train_time,
    }
}

// ---------------------------------------------------------------- budget

/// Per-step evaluation count of each strategy measured through a counting
/// wrapper, plus whether only referenced masks were fetched.
pub fn evaluation_budget() -> Verdict {
    let started = Instant::now();
    let spec = TaskSpec::default();
    let grid = make_grid(GridKind::Cosine, 32, 0.0).unwrap();
    let cond = ConditionPair::both(2, 1);
    let expected = [
        (Strategy::None, 1),
        (Strategy::Standard, 2),
        (Strategy::NegativePrompt, 2),
        (Strategy::PerpNeg, 2),
        (Strategy::CfgZeroStar, 2),
        (Strategy::InputText, 2),
        (Strategy::InputAudio, 2),
        (Strategy::DefText, 2),
        (Strategy::MegaSeparated, 3),
        (Strategy::DualSeparated, 4),
    ];
    let mut fails = Vec::new();
    let mut seen = Vec::new();
    for (strategy, per_step) in expected {
        let g = if strategy.is_separated() {
            GuidanceSpec::separated(strategy, 1.5, 2.0)
        } else {
            GuidanceSpec::new(strategy, 2.0)
        };
        let probe = CountingModel::new(OracleModel::new(spec.clone()).unwrap());
        let out = sample_batch(&probe, &cond, &grid, &g, &mut Rng::new(1), Method::Euler, 3, false).unwrap();
        let counted = probe.evaluations() / 3;
        if out.eval_count != per_step * 32 || counted != per_step * 32 {
            fails.push(format!("{strategy}: reported {} counted {counted}", out.eval_count));
        }
        for call in probe.calls() {
            let allowed: Vec<ConditionPair> =
                required_slots(&g, call.t).iter().map(|s| s.condition(&cond, &g)).collect();
            if !allowed.contains(&call.cond) {
                fails.push(format!("{strategy}: fetched unreferenced {:?} at t={}", call.cond, call.t));
                break;
            }
        }
        seen.push(format!("{strategy}={}", counted / 32));
    }
    let pass = fails.is_empty();
    let detail = if pass { seen.join(" ") } else { fails.join("; ") };
    Verdict::new(pass, detail, started)
}
