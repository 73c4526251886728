use attnpool_core::attention::SingleHeadParams;
use attnpool_core::forecasting::*;
use attnpool_core::lorenz::*;
use attnpool_core::numerics::{AdamConfig, Matrix};
use attnpool_core::rng::{stream, uniform};
use attnpool_core::Error;

fn stationary_truth(rho: f64, n: usize) -> Trajectory {
    let mut tr = integrate(
        &[1.0, 2.0, 20.0],
        0.0,
        200 + n,
        &LorenzParams::stationary(rho),
    )
    .unwrap();
    tr.states.drain(..200);
    tr.t0 = 0.0;
    tr
}

fn spec(kind: MethodKind, delay: usize, hidden: usize, epochs: usize, lr: f64) -> LorenzModelSpec {
    LorenzModelSpec {
        kind,
        delay,
        hidden,
        train: TrainConfig {
            epochs,
            batch_size: 32,
            adam: AdamConfig::default().with_learning_rate(lr),
        },
    }
}

#[test]
fn attention_learns_to_pick_the_true_candidate() {
    let ens = CandidateEnsemble::default();
    let truth = stationary_truth(36.0, 400);
    let m =
        train_lorenz_model(&spec(MethodKind::Additive, 1, 8, 80, 1e-2), &truth, &ens, 3).unwrap();
    let curve = &m.report.loss_curve;
    assert!(
        curve.last().unwrap() < &(0.1 * curve[0]),
        "{:?}",
        (curve[0], curve.last())
    );
    let set = lorenz_training_set(&truth, &ens, 1).unwrap();
    let Forecaster::Attention(p) = &m.model else {
        panic!("attention model expected")
    };
    let close = set
        .steps
        .iter()
        .filter(|s| {
            let w = p.forward_trace(s).unwrap().weights;
            let rho: f64 = w.iter().zip(&ens.rho_values).map(|(a, r)| a * r).sum();
            (rho - 36.0).abs() < 1.0
        })
        .count();
    assert!(
        close as f64 > 0.85 * set.len() as f64,
        "{close} of {}",
        set.len()
    );
}

#[test]
fn selecting_the_true_candidate_reproduces_the_truth() {
    // two hidden units form a bump in the y-error of each key, so the
    // candidate with zero error scores highest
    let ens = CandidateEnsemble::default();
    let truth = stationary_truth(36.0, 60);
    let a = 50.0;
    let p = SingleHeadParams {
        w_q: Matrix::zeros(2, 3),
        w_k: Matrix::from_vec(2, 3, vec![0.0, a, 0.0, 0.0, a, 0.0]).unwrap(),
        w_v: Matrix::from_vec(2, 1, vec![1.0, -1.0]).unwrap(),
        b: Matrix::from_vec(2, 1, vec![1.0, -1.0]).unwrap(),
    };
    let model = Forecaster::Attention(p);
    let f = closed_loop_forecast(
        &model,
        PoolingVariant::BestInitial,
        &ens,
        &truth.states[..2],
        truth.time(2),
        50,
    )
    .unwrap();
    let true_idx = ens.rho_values.iter().position(|&r| r == 36.0).unwrap();
    assert_eq!(argmax(f.weights.as_ref().unwrap().row(0)), true_idx);
    for (a, b) in f.predictions.iter().zip(&truth.states[2..52]) {
        assert!((0..3).all(|c| (a[c] - b[c]).abs() < 1e-9));
    }
}

#[test]
fn ridge_recovers_a_linear_map() {
    let mut rng = stream(1, "ridge");
    let w = Matrix::uniform(3, 6, 2.0, &mut rng);
    let b = [0.5, -1.0, 2.0];
    let xs: Vec<Vec<f64>> = (0..200)
        .map(|_| (0..6).map(|_| uniform(&mut rng, -3.0, 3.0)).collect())
        .collect();
    let ys: Vec<Vec<f64>> = xs
        .iter()
        .map(|x| {
            (0..3)
                .map(|r| w.row(r).iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + b[r])
                .collect()
        })
        .collect();
    let fit = LinearPooler::fit_ridge(&xs, &ys, 1e-10).unwrap();
    for (a, e) in fit.w.as_slice().iter().zip(w.as_slice()) {
        assert!((a - e).abs() < 1e-7);
    }
    for (a, e) in fit.b.as_slice().iter().zip(&b) {
        assert!((a - e).abs() < 1e-7);
    }
}

#[test]
fn adam_reduces_the_linear_pooler_loss() {
    let ens = CandidateEnsemble::default();
    let truth = stationary_truth(40.0, 300);
    let m = train_lorenz_model(&spec(MethodKind::Linear, 1, 0, 30, 1e-3), &truth, &ens, 0).unwrap();
    let c = &m.report.loss_curve;
    assert!(c.last().unwrap() < &c[0]);
}

fn small_model(l: usize) -> (Forecaster, CandidateEnsemble) {
    let mut rng = stream(9, "mutation");
    (
        Forecaster::Attention(SingleHeadParams::init(6, 3 * l, 3 * l, &mut rng)),
        CandidateEnsemble::default(),
    )
}

#[test]
fn one_step_forecasts_ignore_the_present_and_future() {
    let (model, ens) = small_model(3);
    let truth = integrate(&[1.0, 1.0, 1.0], 0.0, 60, &LorenzParams::non_stationary()).unwrap();
    let base = open_loop_forecast(&model, &ens, &truth, 10, 30).unwrap();
    for j in [10usize, 25, 39] {
        let mut mutated = truth.clone();
        for s in &mut mutated.states[j..] {
            *s = [99.0, -99.0, 0.0];
        }
        let f = open_loop_forecast(&model, &ens, &mutated, 10, 30).unwrap();
        assert_eq!(f.predictions[..j - 10], base.predictions[..j - 10]);
    }
}

#[test]
fn closed_loop_forecasts_depend_only_on_the_warmup() {
    let (model, ens) = small_model(2);
    let data = generate_dataset(&DatasetConfig {
        t_train: 10.0,
        t_val: 64.0,
        n_val_segments: 4,
        segment_len: 64,
        ..Default::default()
    })
    .unwrap();
    let vt = Default::default();
    let a = forecast_segment(&model, PoolingVariant::Additive, &ens, &data, 1, &vt).unwrap();
    let mut mutated = data.clone();
    let start = mutated.segment_starts[1];
    for s in &mut mutated.validation.states[start..] {
        *s = [0.0, 0.0, 0.0];
    }
    let b = forecast_segment(&model, PoolingVariant::Additive, &ens, &mutated, 1, &vt).unwrap();
    assert_eq!(a.forecast, b.forecast);
    let mut warm = data.clone();
    warm.validation.states[start - 1][0] += 1e-3;
    let c = forecast_segment(&model, PoolingVariant::Additive, &ens, &warm, 1, &vt).unwrap();
    assert_ne!(a.forecast.predictions, c.forecast.predictions);
}

#[test]
fn guard_failures_stop_training() {
    let mut p = LinearPooler::averaging(2, 1, 1);
    let xs = vec![vec![1.0, 2.0]; 10];
    let ys = vec![vec![1.5]; 10];
    let mut rng = stream(0, "guard");
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 4,
        adam: AdamConfig::default(),
    };
    let err = train(&mut p, &xs, &ys, &Mse, &cfg, &mut rng, |i| {
        if i == 7 {
            Err(Error::Leakage { week: 7 })
        } else {
            Ok(())
        }
    })
    .unwrap_err();
    assert!(matches!(err, Error::Leakage { week: 7 }));
}
