use iflow_core::data::{make_dataset, Dataset, DatasetName, DatasetParams};
use iflow_core::net::NetConfig;
use iflow_core::persist;
use iflow_core::process::ProcessSpec;
use iflow_core::sampler::{initial_draws, refine_history};
use iflow_core::trainer::{
    resume, train, train_step, DirSink, MemorySink, NullSink, TrainConfig, TrainState,
};

fn gaussian_1d(count: usize) -> Dataset {
    make_dataset(DatasetName::Gaussian, count, &DatasetParams::gaussian(1, 1.0), 5).unwrap()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

#[test]
fn rf_gaussian_training_makes_progress() {
    let ds = gaussian_1d(10_000);
    let cfg = TrainConfig {
        iterations: 20_000,
        log_every: 1,
        seed: 1,
        ..TrainConfig::default()
    };
    let mut sink = MemorySink::default();
    let net = NetConfig::new(1, vec![64, 64]);
    train(&ds, &ProcessSpec::rf(), &net, &cfg, &mut sink).unwrap();
    let losses: Vec<f64> = sink.rows.iter().map(|r| r.loss).collect();
    assert_eq!(losses.len(), 20_000);
    assert!(losses.iter().all(|l| l.is_finite()));
    let first = mean(&losses[..1000]);
    let last = mean(&losses[losses.len() - 1000..]);
    assert!(last < 0.2 * first, "first 1k mean {first}, last 1k mean {last}");
}

#[test]
fn buffer_error_shrinks_over_epochs() {
    let ds = gaussian_1d(512);
    let spec = ProcessSpec::rf();
    let cfg = TrainConfig {
        batch_size: 128,
        iterations: 4000,
        seed: 2,
        ..TrainConfig::default()
    };
    let mut state = TrainState::new(&ds, &spec, &NetConfig::new(1, vec![32, 32]), &cfg).unwrap();
    let steps_per_epoch = 4;
    let mut errors = Vec::new();
    while state.step < cfg.iterations {
        train_step(&mut state, &ds, &spec, &cfg).unwrap();
        if state.step % steps_per_epoch == 0 {
            errors.push(state.buffer.mean_error(&ds));
        }
    }
    // After a burn-in of one quarter, window means (10% of the run each)
    // never rise by more than 10%.
    let window = errors.len() / 10;
    let means: Vec<f64> = errors[errors.len() / 4..].chunks(window).map(mean).collect();
    for w in means.windows(2) {
        assert!(w[1] <= 1.1 * w[0], "window means {means:?}");
    }
    assert!(errors.last().unwrap() < &(0.5 * errors[0]));
}

#[test]
fn ema_lag_is_bounded_by_update_history() {
    let ds = gaussian_1d(256);
    let spec = ProcessSpec::rf();
    let cfg = TrainConfig {
        batch_size: 64,
        iterations: 300,
        ema_decay: 0.99,
        seed: 3,
        ..TrainConfig::default()
    };
    let mut state = TrainState::new(&ds, &spec, &NetConfig::new(1, vec![16]), &cfg).unwrap();
    let mut max_update: f64 = 0.0;
    for _ in 0..cfg.iterations {
        let rep = train_step(&mut state, &ds, &spec, &cfg).unwrap();
        max_update = max_update.max(rep.max_update);
        let lag = state
            .params
            .weights
            .slices()
            .iter()
            .zip(state.ema_params.weights.slices())
            .flat_map(|(p, e)| p.iter().zip(e.iter()).map(|(a, b)| f64::from((a - b).abs())))
            .fold(0.0, f64::max);
        assert!(lag <= max_update / (1.0 - cfg.ema_decay) * (1.0 + 1e-4) + 1e-6);
    }
}

#[test]
fn untouched_buffer_entries_do_not_affect_a_step() {
    let ds = gaussian_1d(1000);
    let spec = ProcessSpec::rf();
    let cfg = TrainConfig {
        batch_size: 16,
        iterations: 1,
        seed: 4,
        ..TrainConfig::default()
    };
    let net = NetConfig::new(1, vec![8]);
    let mut a = TrainState::new(&ds, &spec, &net, &cfg).unwrap();
    let mut b = a.clone();
    let probe = train_step(&mut a.clone(), &ds, &spec, &cfg).unwrap();
    let outside = (0..ds.len()).find(|i| !probe.ids.contains(i)).unwrap();
    b.buffer.estimates[[outside, 0]] += 5.0;
    let ra = train_step(&mut a, &ds, &spec, &cfg).unwrap();
    let rb = train_step(&mut b, &ds, &spec, &cfg).unwrap();
    assert_eq!(ra.loss.to_bits(), rb.loss.to_bits());
    assert_eq!(a.params, b.params);

    // A buffer entry inside the batch changes the loss.
    let mut c = TrainState::new(&ds, &spec, &net, &cfg).unwrap();
    let mut d = c.clone();
    // The fresh network ignores its anchor, so train a little first.
    let warm = TrainConfig {
        iterations: 200,
        ..cfg.clone()
    };
    c = resume(c, &ds, &spec, &warm, &mut NullSink).unwrap();
    d = resume(d, &ds, &spec, &warm, &mut NullSink).unwrap();
    let next = train_step(&mut c.clone(), &ds, &spec, &warm).unwrap();
    d.buffer.estimates[[next.ids[0], 0]] += 5.0;
    let rc = train_step(&mut c, &ds, &spec, &warm).unwrap();
    let rd = train_step(&mut d, &ds, &spec, &warm).unwrap();
    assert_ne!(rc.loss, rd.loss);
}

#[test]
fn resume_from_disk_matches_uninterrupted_run() {
    let ds = gaussian_1d(600);
    let spec = ProcessSpec::ve(1000, 0.01, 50.0).unwrap();
    let net = NetConfig::new(1, vec![16, 16]);
    let cfg = TrainConfig {
        batch_size: 32,
        iterations: 120,
        checkpoint_every: 50,
        log_every: 10,
        seed: 9,
        ..TrainConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let full_dir = dir.path().join("full");
    train(&ds, &spec, &net, &cfg, &mut DirSink::new(&full_dir).unwrap()).unwrap();
    assert!(full_dir.join("step_00000050.ifck").exists());
    assert!(full_dir.join("step_00000100.ifck").exists());

    let ckpt = persist::load(full_dir.join("step_00000050.ifck")).unwrap();
    assert_eq!(ckpt.state.step, 50);
    let resumed_dir = dir.path().join("resumed");
    resume(ckpt.state, &ds, &spec, &cfg, &mut DirSink::new(&resumed_dir).unwrap()).unwrap();
    let a = std::fs::read(full_dir.join("final.ifck")).unwrap();
    let b = std::fs::read(resumed_dir.join("final.ifck")).unwrap();
    assert_eq!(a, b);

    let metrics = std::fs::read_to_string(full_dir.join("metrics.csv")).unwrap();
    let resumed = std::fs::read_to_string(resumed_dir.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("step,loss,ema_loss_window\n"));
    assert!(metrics.ends_with(resumed.lines().skip(1).map(|l| format!("{l}\n")).collect::<String>().as_str()));
}

#[test]
fn pfgmpp_trains_and_samples() {
    let ds = make_dataset(DatasetName::GmmRing, 500, &DatasetParams::default(), 6).unwrap();
    let spec = ProcessSpec::pfgmpp(1000, 0.01, 50.0, 2048, 2).unwrap();
    let cfg = TrainConfig {
        batch_size: 32,
        iterations: 50,
        seed: 6,
        ..TrainConfig::default()
    };
    let state = train(&ds, &spec, &NetConfig::new(2, vec![16]), &cfg, &mut NullSink).unwrap();
    let (x_t, anchors) = initial_draws(&spec, 2, 64, 1).unwrap();
    let hist = refine_history(&state.ema_params, &spec, &x_t, anchors, 3).unwrap();
    assert_eq!(hist.len(), 4);
    assert!(hist.iter().all(|h| h.iter().all(|v| v.is_finite())));
}

#[test]
fn anchor_iteration_contracts_on_a_trained_model() {
    let ds = gaussian_1d(5000);
    let spec = ProcessSpec::rf();
    let cfg = TrainConfig {
        iterations: 3000,
        seed: 7,
        ..TrainConfig::default()
    };
    let state = train(&ds, &spec, &NetConfig::new(1, vec![64, 64]), &cfg, &mut NullSink).unwrap();
    let (x_t, anchors) = initial_draws(&spec, 1, 256, 3).unwrap();
    let hist = refine_history(&state.params, &spec, &x_t, anchors, 5).unwrap();
    // Steps may expand by at most 10%, with a 10% violation budget.
    let mut checks = 0;
    let mut violations = 0;
    for i in 0..256 {
        let deltas: Vec<f64> = hist.windows(2).map(|w| (w[1][[i, 0]] - w[0][[i, 0]]).abs()).collect();
        for j in 1..deltas.len() - 1 {
            checks += 1;
            if deltas[j + 1] > 1.1 * deltas[j] + 1e-7 {
                violations += 1;
            }
        }
    }
    assert!(violations * 10 <= checks, "{violations} of {checks} steps expanded");
}
