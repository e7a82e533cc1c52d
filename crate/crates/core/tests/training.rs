use nncommittee::gauss_newton::Batch;
use nncommittee::train::train_batch;
use nncommittee::{
    fit, generate_synthetic, init_weights, mse, split_train_test, train, Dataset, MlpModel,
    MlpTopology, Normalizer, Scheme, SolverKind, SyntheticSpec, TrainConfig, TrainStatus,
};

fn normalized_train(people: usize, dims: usize, spread: f64, seed: u64) -> Dataset {
    normalized_train_with(people, 8, dims, spread, seed)
}

fn normalized_train_with(
    people: usize,
    trials: usize,
    dims: usize,
    spread: f64,
    seed: u64,
) -> Dataset {
    let ds = generate_synthetic::<f64>(&SyntheticSpec {
        people,
        trials,
        dims,
        seed,
        spread,
    })
    .unwrap();
    let (train, _) = split_train_test(&ds, trials / 2).unwrap();
    Normalizer::fit(&train).apply_dataset(&train).unwrap()
}

#[test]
fn accepted_objectives_never_increase() {
    let data = normalized_train(4, 5, 1.0, 3);
    let topo = MlpTopology::new(5, 6, 4).unwrap();
    for seed in 0..10 {
        let (_, report) = fit(topo, &data, &TrainConfig::mse().with_seed(seed)).unwrap();
        let mut prev = report.initial_objective;
        for &obj in &report.epoch_objectives {
            assert!(obj <= prev);
            prev = obj;
        }
        assert!(report.is_monotone());
    }
}

#[test]
fn regularized_steps_decrease_their_own_objective() {
    let data = normalized_train(4, 5, 1.0, 4);
    let topo = MlpTopology::new(5, 6, 4).unwrap();
    for seed in 0..5 {
        let (_, report) = fit(topo, &data, &TrainConfig::msereg().with_seed(seed)).unwrap();
        for step in report.steps.iter().filter(|s| s.accepted) {
            assert!(step.objective < step.reference);
        }
        let w = topo.param_count() as f64;
        for h in &report.hyper_trace {
            assert!(h.gamma > 0.0 && h.gamma < w, "gamma {}", h.gamma);
            assert!(h.alpha > 0.0 && h.beta > 0.0);
        }
    }
}

#[test]
fn easy_two_person_problem() {
    let data = normalized_train(2, 3, 10.0, 1);
    let topo = MlpTopology::new(3, 4, 2).unwrap();
    let (model, report) = fit(topo, &data, &TrainConfig::mse().with_seed(1)).unwrap();
    assert!(report.final_mse < 0.1, "mse {}", report.final_mse);
    assert!((mse(&model, &data).unwrap() - report.final_mse).abs() < 1e-12);

    // a few hundred plain gradient steps reach the same regime
    let batch = Batch::from_dataset(&data).unwrap();
    let mut gd = init_weights::<f64>(topo, 1);
    let w = topo.param_count();
    for _ in 0..2000 {
        let sys = nncommittee::gauss_newton::FactoredSystem::assemble(&gd, &batch).unwrap();
        use nncommittee::gauss_newton::NormalEquations;
        let g = sys.gradient();
        let params: Vec<f64> = gd
            .flatten()
            .iter()
            .zip(&g)
            .map(|(p, g)| p + 0.01 * g)
            .collect();
        gd = MlpModel::unflatten(topo, params).unwrap();
    }
    assert_eq!(gd.flatten().len(), w);
    assert!(mse(&gd, &data).unwrap() < 0.1);
}

#[test]
fn exact_fit_is_a_fixed_point() {
    // zero weights fit all-zero targets exactly
    let topo = MlpTopology::new(2, 3, 2).unwrap();
    let batch = Batch::new(
        vec![vec![0.5, -0.5], vec![1.0, 2.0]],
        vec![vec![0.0, 0.0]; 2],
    )
    .unwrap();
    let m0 = MlpModel::<f64>::zeros(topo);
    let (model, report) = train_batch(&m0, &batch, &TrainConfig::mse()).unwrap();
    assert_eq!(model, m0);
    assert_eq!(report.status, TrainStatus::Converged);
    assert_eq!(report.final_mse, 0.0);
}

#[test]
fn training_is_deterministic() {
    let data = normalized_train(3, 4, 1.5, 9);
    let topo = MlpTopology::new(4, 5, 3).unwrap();
    for cfg in [
        TrainConfig::mse().with_seed(7),
        TrainConfig::msereg().with_seed(7),
    ] {
        let a = fit(topo, &data, &cfg).unwrap();
        let b = fit(topo, &data, &cfg).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }
}

#[test]
fn dense_and_factored_solvers_train_alike() {
    // 24 samples x 3 outputs against 43 parameters, so γ is well conditioned
    let data = normalized_train_with(3, 16, 4, 1.5, 2);
    let topo = MlpTopology::new(4, 5, 3).unwrap();
    for scheme in [Scheme::Mse, Scheme::MseReg] {
        let cfg = TrainConfig::new(scheme).with_seed(3).with_epochs(5);
        let (a, ra) = fit(topo, &data, &cfg).unwrap();
        let (b, rb) = fit(topo, &data, &cfg.clone().with_solver(SolverKind::Dense)).unwrap();
        assert_eq!(ra.accepted_steps, rb.accepted_steps);
        for (x, y) in a.flatten().iter().zip(b.flatten()) {
            assert!((x - y).abs() < 1e-6, "{x} vs {y}");
        }
    }
}

#[test]
fn regularization_shrinks_weights() {
    // 30 samples x 4 outputs against 44 parameters
    let data = normalized_train_with(4, 15, 5, 1.0, 5);
    let topo = MlpTopology::new(5, 4, 4).unwrap();
    let mut smaller = 0;
    let mut compared = 0;
    let seeds = 12;
    for seed in 0..seeds {
        let m0 = init_weights::<f64>(topo, seed);
        let plain = TrainConfig::mse().with_epochs(50);
        let (a, _) = train(&m0, &data, &plain).unwrap();
        let (b, rb) = train(&m0, &data, &TrainConfig::msereg()).unwrap();
        if rb.stalled() {
            continue;
        }
        compared += 1;
        if b.sum_squared_weights() < a.sum_squared_weights() {
            smaller += 1;
        }
    }
    assert!(compared >= 10, "{compared} usable runs");
    assert!(
        smaller * 2 > compared,
        "only {smaller} of {compared} runs shrank"
    );
}

#[test]
fn single_precision_trains() {
    let ds = generate_synthetic::<f32>(&SyntheticSpec {
        people: 3,
        trials: 8,
        dims: 4,
        seed: 1,
        spread: 3.0,
    })
    .unwrap();
    let (train, _) = split_train_test(&ds, 4).unwrap();
    let train = Normalizer::fit(&train).apply_dataset(&train).unwrap();
    let (_, report) = fit(
        MlpTopology::new(4, 5, 3).unwrap(),
        &train,
        &TrainConfig::<f32>::mse(),
    )
    .unwrap();
    // 12 samples, 3 outputs
    assert!(report.final_mse * 36.0 < report.initial_objective);
}

#[test]
fn mse_matches_a_double_loop() {
    let data = normalized_train(5, 4, 1.0, 12);
    let model = init_weights::<f64>(MlpTopology::new(4, 6, 5).unwrap(), 12);
    let mut total = 0.0;
    let mut count = 0;
    for s in data.samples() {
        let out = model.forward(&s.features).unwrap();
        for (j, o) in out.iter().enumerate() {
            let target = if j == s.person_id { 1.0 } else { -1.0 };
            total += (target - o) * (target - o);
            count += 1;
        }
    }
    assert!((mse(&model, &data).unwrap() - total / count as f64).abs() < 1e-12);
}
