//! Checks shared by the integration tests and the acceptance run.

#![allow(dead_code)]

use attnpool_core::attention::{EnsembleStep, MultiHeadParams, SingleHeadParams};
use attnpool_core::covid::QUANTILE_LEVELS;
use attnpool_core::evaluation::{interval_score, WisConfig, WisIndex};
use attnpool_core::forecasting::{FeedForwardNet, Mse, Trainable};
use attnpool_core::lorenz::{integrate, rk4_step, LorenzParams, State};
use attnpool_core::numerics::{finite_difference_gradient, Matrix, ParamSet};
use attnpool_core::rng::{stream, uniform, StreamRng};

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-5;
pub const GRAD_SEEDS: u64 = 20;

/// `|a - b| / max(|a|, |b|)` in the Euclidean norm; two zero vectors agree.
pub fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

pub fn randomize<P: ParamSet>(p: &mut P, rng: &mut StreamRng) {
    for t in p.tensors_mut() {
        for v in t.as_mut_slice() {
            *v = uniform(rng, -0.5, 0.5);
        }
    }
}

pub fn random_step(m: usize, q: usize, k: usize, d: usize, rng: &mut StreamRng) -> EnsembleStep {
    EnsembleStep::new(
        Matrix::uniform(1, q, 1.0, rng).into_vec(),
        Matrix::uniform(m, k, 1.0, rng),
        Matrix::uniform(m, d, 1.0, rng),
    )
    .unwrap()
}

/// Worst tensor-wise error between the analytic gradient of the summed MSE
/// over `inputs` and its central finite difference. Both the per-sample and
/// the batched backward passes are checked.
pub fn model_grad_error<M: Trainable + Clone>(
    model: &M,
    inputs: &[M::Input],
    targets: &[Vec<f64>],
) -> f64 {
    let total = |m: &M| -> f64 {
        inputs
            .iter()
            .zip(targets)
            .map(|(x, y)| m.loss(x, y, &Mse).unwrap())
            .sum()
    };
    let mut single = model.zeros_like();
    for (x, y) in inputs.iter().zip(targets) {
        model
            .accumulate_loss_grad(x, y, &Mse, 1.0, &mut single)
            .unwrap();
    }
    let xs: Vec<&M::Input> = inputs.iter().collect();
    let ys: Vec<&[f64]> = targets.iter().map(|t| t.as_slice()).collect();
    let mut batched = model.zeros_like();
    model
        .accumulate_batch_loss_grad(&xs, &ys, &Mse, 1.0, &mut batched)
        .unwrap();

    let mut worst: f64 = 0.0;
    for k in 0..model.tensors().len() {
        let base = model.tensors()[k].clone();
        let fd = finite_difference_gradient(
            |p| {
                let mut m = model.clone();
                *m.tensors_mut()[k] = p.clone();
                total(&m)
            },
            &base,
            FD_STEP,
        )
        .unwrap();
        worst = worst
            .max(rel_error(single.tensors()[k].as_slice(), fd.as_slice()))
            .max(rel_error(batched.tensors()[k].as_slice(), fd.as_slice()));
    }
    worst
}

pub fn single_head_case(seed: u64) -> f64 {
    let mut rng = stream(seed, "grad/single");
    let (m, l, h) = (4, 2, 5);
    let mut p = SingleHeadParams::init(h, 3 * l, 3 * l, &mut rng);
    randomize(&mut p, &mut rng);
    let steps: Vec<EnsembleStep> = (0..3)
        .map(|_| random_step(m, 3 * l, 3 * l, 3, &mut rng))
        .collect();
    let targets: Vec<Vec<f64>> = (0..3)
        .map(|_| Matrix::uniform(1, 3, 1.0, &mut rng).into_vec())
        .collect();
    model_grad_error(&p, &steps, &targets)
}

pub fn multi_head_case(seed: u64) -> f64 {
    let mut rng = stream(seed, "grad/multi");
    let (m, heads, h, d) = (4, 3, 4, 2);
    let mut p = MultiHeadParams::init(heads, h, 3, 6, d, &mut rng);
    randomize(&mut p, &mut rng);
    let steps: Vec<EnsembleStep> = (0..3).map(|_| random_step(m, 3, 6, d, &mut rng)).collect();
    let targets: Vec<Vec<f64>> = (0..3)
        .map(|_| Matrix::uniform(1, d, 1.0, &mut rng).into_vec())
        .collect();
    model_grad_error(&p, &steps, &targets)
}

pub fn ffnn_case(seed: u64) -> f64 {
    let mut rng = stream(seed, "grad/ffnn");
    let mut p = FeedForwardNet::init(6, 7, 3, &mut rng);
    randomize(&mut p, &mut rng);
    let xs: Vec<Vec<f64>> = (0..3)
        .map(|_| Matrix::uniform(1, 6, 1.0, &mut rng).into_vec())
        .collect();
    let ys: Vec<Vec<f64>> = (0..3)
        .map(|_| Matrix::uniform(1, 3, 1.0, &mut rng).into_vec())
        .collect();
    model_grad_error(&p, &xs, &ys)
}

/// WIS gradient with respect to the quantiles at a point away from every
/// kink (`|y - q_k|` is much larger than the step).
pub fn wis_case(seed: u64) -> f64 {
    let mut rng = stream(seed, "grad/wis");
    let index = WisIndex::new(&QUANTILE_LEVELS, &WisConfig::hub()).unwrap();
    let mut asc: Vec<f64> = (0..QUANTILE_LEVELS.len())
        .map(|_| uniform(&mut rng, 0.0, 100.0))
        .collect();
    asc.sort_by(f64::total_cmp);
    let mut levels: Vec<(f64, usize)> = QUANTILE_LEVELS.iter().copied().zip(0..).collect();
    levels.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut q = vec![0.0; QUANTILE_LEVELS.len()];
    for (v, &(_, i)) in asc.iter().zip(&levels) {
        q[i] = *v;
    }
    let y = loop {
        let y = uniform(&mut rng, -10.0, 110.0);
        if q.iter().all(|v| (v - y).abs() > 1e-3) {
            break y;
        }
    };
    let analytic = index.gradient(&q, y).unwrap();
    let param = Matrix::from_vec(q.len(), 1, q.clone()).unwrap();
    let fd = finite_difference_gradient(|p| index.score(p.as_slice(), y).unwrap(), &param, FD_STEP)
        .unwrap();
    rel_error(&analytic, fd.as_slice())
}

/// Worst error over `GRAD_SEEDS` instances of each gradient family.
pub fn gradient_suite() -> Vec<(&'static str, f64)> {
    let families: [(&'static str, fn(u64) -> f64); 4] = [
        ("single_head", single_head_case),
        ("multi_head", multi_head_case),
        ("ffnn", ffnn_case),
        ("wis", wis_case),
    ];
    families
        .iter()
        .map(|&(name, f)| (name, (0..GRAD_SEEDS).map(f).fold(0.0, f64::max)))
        .collect()
}

fn max_abs_diff(a: &State, b: &State) -> f64 {
    (0..3).map(|c| (a[c] - b[c]).abs()).fold(0.0, f64::max)
}

fn integrate_to(u0: &State, t_end: f64, dt: f64, p: &LorenzParams) -> State {
    let n = (t_end / dt).round() as usize;
    let mut u = *u0;
    for k in 0..n {
        u = rk4_step(&u, k as f64 * dt, dt, p).unwrap();
    }
    u
}

/// Least-squares slope of `log(global error at t = 1)` against `log(dt)`
/// for the non-stationary system, against a `dt = 1e-4` reference.
pub fn rk4_order_slope() -> f64 {
    let p = LorenzParams::non_stationary();
    let u0 = [1.0, 1.0, 1.0];
    let reference = integrate_to(&u0, 1.0, 1e-4, &p);
    let dts: [f64; 4] = [0.02, 0.01, 0.005, 0.0025];
    let pts: Vec<(f64, f64)> = dts
        .iter()
        .map(|&dt| {
            (
                dt.ln(),
                max_abs_diff(&integrate_to(&u0, 1.0, dt, &p), &reference).ln(),
            )
        })
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

pub fn origin_is_fixed() -> bool {
    let ns = integrate(&[0.0; 3], 0.0, 100, &LorenzParams::non_stationary()).unwrap();
    let st = integrate(&[0.0; 3], 0.0, 100, &LorenzParams::stationary(28.0)).unwrap();
    ns.states.iter().chain(&st.states).all(|s| *s == [0.0; 3])
}

/// Largest `|u_c|` over a 30,000-sample non-stationary run.
pub fn long_run_max_abs() -> f64 {
    integrate(
        &[1.0, 1.0, 1.0],
        0.0,
        30_000,
        &LorenzParams::non_stationary(),
    )
    .unwrap()
    .max_abs()
}

/// The worked interval-score and WIS examples, compared with `==`.
pub fn wis_examples_exact() -> Vec<(&'static str, f64, f64)> {
    let k1 = WisIndex::new(&[0.5, 0.25, 0.75], &WisConfig::new(vec![0.5]).unwrap()).unwrap();
    vec![
        (
            "inside interval",
            interval_score(1.0, 3.0, 0.2, 2.0).unwrap(),
            2.0,
        ),
        (
            "below interval",
            interval_score(1.0, 3.0, 0.2, 0.0).unwrap(),
            12.0,
        ),
        (
            "k1 worked case",
            k1.score(&[2.0, 1.0, 3.0], 2.0).unwrap(),
            1.0 / 3.0,
        ),
    ]
}

fn random_quantiles(rng: &mut StreamRng) -> Vec<f64> {
    let mut asc: Vec<f64> = (0..QUANTILE_LEVELS.len())
        .map(|_| uniform(rng, -50.0, 50.0))
        .collect();
    asc.sort_by(f64::total_cmp);
    let mut order: Vec<usize> = (0..QUANTILE_LEVELS.len()).collect();
    order.sort_by(|&a, &b| QUANTILE_LEVELS[a].total_cmp(&QUANTILE_LEVELS[b]));
    let mut q = vec![0.0; asc.len()];
    for (v, &i) in asc.iter().zip(&order) {
        q[i] = *v;
    }
    q
}

/// Worst relative deviation from positive homogeneity and from translation
/// invariance over random instances.
pub fn wis_invariance_errors(cases: u64) -> (f64, f64) {
    let index = WisIndex::new(&QUANTILE_LEVELS, &WisConfig::hub()).unwrap();
    let mut rng = stream(0, "wis/invariance");
    let (mut homog, mut trans): (f64, f64) = (0.0, 0.0);
    for _ in 0..cases {
        let q = random_quantiles(&mut rng);
        let y = uniform(&mut rng, -60.0, 60.0);
        let base = index.score(&q, y).unwrap();
        let lambda = uniform(&mut rng, 0.1, 10.0);
        let scaled: Vec<f64> = q.iter().map(|v| v * lambda).collect();
        let s = index.score(&scaled, y * lambda).unwrap();
        homog = homog.max((s - lambda * base).abs() / (lambda * base).max(1.0));
        let c = uniform(&mut rng, -100.0, 100.0);
        let shifted: Vec<f64> = q.iter().map(|v| v + c).collect();
        let s = index.score(&shifted, y + c).unwrap();
        trans = trans.max((s - base).abs() / base.max(1.0));
    }
    (homog, trans)
}
