use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rrpsr_autodiff::{gradcheck_report, Tape, Tensor, Var};
use rrpsr_core::checkpoint;
use rrpsr_core::dataset::write_dataset;
use rrpsr_core::network::{echo_batch, BnMode, DssrArch, DssrNet, ParamStore};
use rrpsr_core::signal::{generate_dataset, DatasetItem, RadarConfig};
use rrpsr_core::training::{
    adam_step, mse_loss, train, train_on, train_step, AdamConfig, AdamState, TrainConfig, EPOCH_LOG_FILE,
    STEP_LOG_FILE,
};
use rrpsr_core::Error;

fn tiny_items(n: usize, seed: u64) -> Vec<DatasetItem> {
    generate_dataset(n, &RadarConfig::new(8, 4, 0).unwrap(), seed).unwrap()
}

fn tiny_config(dir: &std::path::Path) -> TrainConfig {
    TrainConfig {
        epochs: 2,
        batch_size: 32,
        checkpoint_dir: dir.to_path_buf(),
        probe_trials: 20,
        arch: DssrArch::tiny(),
        seed: 3,
        ..TrainConfig::desk()
    }
}

fn loss_of(tape: &mut Tape<f64>, pred: Vec<f64>, labels: Vec<f64>, shape: [usize; 2]) -> f64 {
    let p = tape.leaf(Tensor::new(&shape, pred).unwrap());
    let l = tape.constant(Tensor::new(&shape, labels).unwrap());
    let loss = mse_loss(tape, p, l).unwrap();
    tape.value(loss).data()[0]
}

#[test]
fn loss_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (b, m) = (3, 1024);
    let labels: Vec<f64> = (0..b * m).map(|_| rng.random_range(0.0..2.0)).collect();
    let mut tape = Tape::new();
    assert_eq!(loss_of(&mut tape, labels.clone(), labels.clone(), [b, m]), 0.0);
    let shifted: Vec<f64> = labels.iter().map(|v| v + 0.25).collect();
    assert!((loss_of(&mut tape, shifted, labels.clone(), [b, m]) - 0.0625 * m as f64).abs() < 1e-9);
    let pred: Vec<f64> = (0..b * m).map(|_| rng.random_range(0.0..2.0)).collect();
    let mut direct = 0.0;
    for i in 0..b {
        let mut row = 0.0;
        for j in 0..m {
            row += (pred[i * m + j] - labels[i * m + j]).powi(2);
        }
        direct += row;
    }
    direct /= b as f64;
    assert!((loss_of(&mut tape, pred, labels, [b, m]) - direct).abs() < 1e-9 * direct);
}

fn scalar_store(v: f64) -> ParamStore<f64> {
    let mut s = ParamStore::default();
    s.insert("w", Tensor::new(&[1], vec![v]).unwrap()).unwrap();
    s
}

#[test]
fn adam_hand_computed_steps() {
    let cfg = AdamConfig {
        learning_rate: 0.1,
        beta1: 0.9,
        beta2: 0.999,
        epsilon: 1e-8,
    };
    let mut p = scalar_store(1.0);
    let mut st = AdamState::new(&p);
    adam_step(&mut p, &[Tensor::new(&[1], vec![1.0]).unwrap()], &mut st, &cfg).unwrap();
    assert!((p.values()[0].data()[0] - 0.9).abs() < 1e-6);

    let before = p.clone();
    let m_before = st.m[0].data()[0];
    adam_step(&mut p, &[Tensor::new(&[1], vec![0.0]).unwrap()], &mut st, &cfg).unwrap();
    assert!((st.m[0].data()[0] - 0.9 * m_before).abs() < 1e-15);
    // A zero gradient still moves along the decayed first moment.
    assert!(p.values()[0].data()[0] < before.values()[0].data()[0]);

    let mut q = scalar_store(2.0);
    let mut fresh = AdamState::new(&q);
    adam_step(&mut q, &[Tensor::new(&[1], vec![0.0]).unwrap()], &mut fresh, &cfg).unwrap();
    assert_eq!(q.values()[0].data()[0], 2.0);

    let err = adam_step(&mut q, &[Tensor::new(&[1], vec![f64::NAN]).unwrap()], &mut fresh, &cfg);
    assert!(matches!(err, Err(Error::NonFiniteGradient(name)) if name == "w"));
    assert_eq!(q.values()[0].data()[0], 2.0);
    assert_eq!(fresh.step, 1);
}

fn batch_loss(net: &DssrNet<f64>, items: &[&DatasetItem]) -> f64 {
    let mut tape = Tape::new();
    let vars = net.bind(&mut tape, false);
    let echoes: Vec<_> = items.iter().map(|i| i.echo.clone()).collect();
    let y = tape.complex_constant(echo_batch(&echoes, 8).unwrap());
    let labels: Vec<f64> = items.iter().flat_map(|i| i.label.values.clone()).collect();
    let l = tape.constant(Tensor::new(&[items.len(), 32], labels).unwrap());
    let mut buffers = net.buffers().clone();
    let out = net.build(&mut tape, &vars, y, BnMode::Train(&mut buffers)).unwrap();
    let loss = mse_loss(&mut tape, out.profile, l).unwrap();
    tape.value(loss).data()[0]
}

#[test]
fn one_small_step_descends() {
    let items = tiny_items(16, 4);
    let refs: Vec<&DatasetItem> = items.iter().collect();
    let cfg = AdamConfig {
        learning_rate: 1e-4,
        beta1: 0.9,
        beta2: 0.999,
        epsilon: 1e-8,
    };
    for seed in 0..5 {
        let mut net = DssrNet::<f64>::new(DssrArch::tiny(), seed).unwrap();
        let mut adam = AdamState::new(net.params());
        let before = train_step(&mut net, &mut adam, &cfg, &refs).unwrap();
        assert!((before - batch_loss(&DssrNet::<f64>::new(DssrArch::tiny(), seed).unwrap(), &refs)).abs() < 1e-9);
        let after = batch_loss(&net, &refs);
        assert!(after < before, "seed {seed}: {after} >= {before}");
    }
}

#[test]
fn loss_gradient_wrt_edu_matches_finite_differences() {
    let items = tiny_items(4, 5);
    let net = DssrNet::<f64>::new(DssrArch::tiny(), 6).unwrap();
    let edu = net.params().position("edu.w_re").unwrap();
    let echoes: Vec<_> = items.iter().map(|i| i.echo.clone()).collect();
    let input = echo_batch::<f64>(&echoes, 8).unwrap();
    let labels = Tensor::new(&[4, 32], items.iter().flat_map(|i| i.label.values.clone()).collect()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let entry = rng.random_range(0..net.params().values()[edu].numel());
    let point = Tensor::new(&[1], vec![net.params().values()[edu].data()[entry]]).unwrap();
    let report = gradcheck_report(
        |tape: &mut Tape<f64>, v: &[Var]| {
            let mut vars = net.bind(tape, false);
            // Rebuild the EDU matrix with the probed entry as the only leaf.
            let base = net.params().values()[edu].clone();
            let mask = Tensor::from_fn(base.shape(), |i| if i == entry { 1.0 } else { 0.0 });
            let mut rest = base.clone();
            rest.data_mut()[entry] = 0.0;
            let flat = tape.reshape(v[0], &[1, 1])?;
            let row = tape.constant(Tensor::ones(&[1, base.numel()]));
            let spread = tape.matmul(flat, row)?;
            let spread = tape.reshape(spread, base.shape())?;
            let m = tape.constant(mask);
            let picked = tape.mul(spread, m)?;
            let r = tape.constant(rest);
            vars[edu] = tape.add(picked, r)?;
            let y = tape.complex_constant(input.clone());
            let l = tape.constant(labels.clone());
            let mut buffers = net.buffers().clone();
            let out = net.build(tape, &vars, y, BnMode::Train(&mut buffers)).unwrap();
            Ok(mse_loss(tape, out.profile, l).unwrap())
        },
        &[point],
        1e-5,
    )
    .unwrap();
    assert!(report.max_rel_error <= 1e-4, "{report:?}");
}

#[test]
fn batching_arithmetic_and_logs() {
    let dir = tempfile::tempdir().unwrap();
    let out = train_on(&tiny_config(dir.path()), tiny_items(200, 1), &mut |_| {}).unwrap();
    assert_eq!(out.log.steps.len(), 12);
    assert_eq!(out.log.epochs.len(), 2);
    assert!(out.log.steps.windows(2).all(|w| w[1].step == w[0].step + 1));
    assert!(out.log.epochs.iter().all(|e| e.probe_success.is_some()));
    let steps = std::fs::read_to_string(dir.path().join(STEP_LOG_FILE)).unwrap();
    assert_eq!(steps.lines().count(), 13);
    let epochs = std::fs::read_to_string(dir.path().join(EPOCH_LOG_FILE)).unwrap();
    assert_eq!(epochs.lines().count(), 3);
    assert_eq!(checkpoint::load(&out.checkpoint).unwrap(), out.net);
}

#[test]
fn training_is_deterministic_and_resumable() {
    let items = tiny_items(96, 2);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let full = train_on(&tiny_config(a.path()), items.clone(), &mut |_| {}).unwrap();
    let again = train_on(&tiny_config(b.path()), items.clone(), &mut |_| {}).unwrap();
    assert_eq!(
        std::fs::read(&full.checkpoint).unwrap(),
        std::fs::read(&again.checkpoint).unwrap()
    );

    let c = tempfile::tempdir().unwrap();
    let first = TrainConfig {
        epochs: 1,
        ..tiny_config(c.path())
    };
    train_on(&first, items.clone(), &mut |_| {}).unwrap();
    let resumed = TrainConfig {
        resume: true,
        ..tiny_config(c.path())
    };
    let out = train_on(&resumed, items, &mut |_| {}).unwrap();
    assert_eq!(out.log.steps.len(), 3);
    assert_eq!(out.log.steps[0].step, 4);
    assert_eq!(out.net, full.net);
}

#[test]
fn corrupt_dataset_reports_index() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.bin");
    write_dataset(&path, 1, &tiny_items(40, 1)).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 100]).unwrap();
    let cfg = TrainConfig {
        dataset_path: path,
        ..tiny_config(dir.path())
    };
    match train(&cfg, &mut |_| {}) {
        Err(Error::CorruptDataset { index, .. }) => assert_eq!(index, 39),
        other => panic!("unexpected {:?}", other.map(|o| o.log)),
    }
}

#[test]
fn desk_and_paper_presets() {
    let d = TrainConfig::desk();
    assert_eq!((d.epochs, d.batch_size, d.learning_rate), (10, 256, 5e-4));
    let p = TrainConfig::paper();
    assert_eq!((p.epochs, p.batch_size), (100, 1024));
    let bad = TrainConfig {
        adam_beta1: 1.0,
        ..d
    };
    assert!(bad.validate().is_err());
}
