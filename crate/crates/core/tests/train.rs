use mambadc::dsp::{StftConfig, Waveform, SAMPLE_RATE};
use mambadc::masks::{mask_mse_loss, MaskKind};
use mambadc::model::{forward, init_params, network_mask, ModelConfig, NetworkWeights};
use mambadc::numerics::Tensor;
use mambadc::train::*;
use mambadc::{Error, Tape};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny() -> ModelConfig {
    ModelConfig {
        d_model: 8,
        n_layers: 1,
        n_state: 4,
        ..ModelConfig::mambadc(1)
    }
}

#[test]
fn warmup_reference_values() {
    let lr = warmup_lr(40_000, 256, 40_000).unwrap();
    assert!((lr - 3.125e-4).abs() < 1e-9);
    let first = warmup_lr(1, 256, 40_000).unwrap();
    assert!((first - 7.8125e-9).abs() < 1e-20);
    let (decay, ramp) = warmup_branches(40_000, 40_000);
    assert_eq!(decay, ramp);
    assert!(matches!(warmup_lr(0, 256, 40_000), Err(Error::InvalidArgument(_))));
}

#[test]
fn warmup_rises_then_decays() {
    let lr = |s| warmup_lr(s, 256, 10_000).unwrap();
    assert!(lr(5_000) < lr(10_000));
    assert!(lr(20_000) < lr(10_000));
    // One step either side of the crossover moves the rate by about 1e-4.
    assert!((lr(9_999) - lr(10_000)).abs() < 2e-4 * lr(10_000));
    assert!((lr(10_001) - lr(10_000)).abs() < 2e-4 * lr(10_000));
}

fn scalar_param(x: f64) -> NetworkWeights<f64> {
    let mut w = NetworkWeights::new();
    w.insert("x", Tensor::scalar(x)).unwrap();
    w
}

fn set_grad_of_square(w: &mut NetworkWeights<f64>) {
    let p = w.get_mut("x").unwrap();
    p.grad = Some(Tensor::scalar(2.0 * p.value.item()));
}

#[test]
fn adam_first_step_moves_by_lr() {
    let mut w = scalar_param(1.0);
    let mut state = AdamState::new(&w);
    set_grad_of_square(&mut w);
    adam_step(&mut w, &mut state, 0.1, AdamHyper::default()).unwrap();
    // m̂/√v̂ = g/|g| = 1 at the first step, up to eps.
    assert!((w.get("x").unwrap().item() - 0.9).abs() < 1e-8);
    assert_eq!(state.step, 1);
}

#[test]
fn adam_zero_gradient_leaves_parameters() {
    let mut w = scalar_param(0.37);
    let mut state = AdamState::new(&w);
    w.get_mut("x").unwrap().grad = Some(Tensor::scalar(0.0));
    adam_step(&mut w, &mut state, 0.1, AdamHyper::default()).unwrap();
    assert_eq!(w.get("x").unwrap().item(), 0.37);
}

#[test]
fn adam_converges_on_parabola() {
    let mut w = scalar_param(1.0);
    let mut state = AdamState::new(&w);
    for _ in 0..200 {
        set_grad_of_square(&mut w);
        adam_step(&mut w, &mut state, 0.1, AdamHyper::default()).unwrap();
    }
    assert!(w.get("x").unwrap().item().abs() < 1e-2);
}

#[test]
fn adam_rejects_mismatched_state() {
    let mut w = scalar_param(1.0);
    let mut state = AdamState::new(&NetworkWeights::<f64>::new());
    assert!(adam_step(&mut w, &mut state, 0.1, AdamHyper::default()).is_err());
}

#[test]
fn clip_values() {
    let mut w = NetworkWeights::new();
    w.insert("g", Tensor::zeros(&[4])).unwrap();
    let inside = [0.25, -0.999, 1.0, -1.0];
    w.get_mut("g").unwrap().grad = Some(Tensor::new(vec![4], vec![5.0, -3.0, 0.5, -1.0]).unwrap());
    clip_gradients(&mut w, -1.0, 1.0).unwrap();
    assert_eq!(w.get_mut("g").unwrap().grad.as_ref().unwrap().data(), &[1.0, -1.0, 0.5, -1.0]);

    let original = Tensor::new(vec![4], inside.to_vec()).unwrap();
    w.get_mut("g").unwrap().grad = Some(original.clone());
    clip_gradients(&mut w, -1.0, 1.0).unwrap();
    assert_eq!(w.get_mut("g").unwrap().grad.as_ref().unwrap(), &original);
    assert!(clip_gradients(&mut w, 1.0, -1.0).is_err());
}

proptest! {
    #[test]
    fn clipping_is_idempotent(values in proptest::collection::vec(-50.0f64..50.0, 1..64)) {
        let mut once = Tensor::new(vec![values.len()], values).unwrap();
        clip_tensor(&mut once, -1.0, 1.0);
        let mut twice = once.clone();
        clip_tensor(&mut twice, -1.0, 1.0);
        prop_assert_eq!(once, twice);
    }
}

fn tone(freq: f64, samples: usize) -> Waveform<f64> {
    sinusoid(freq, 0.3, samples).unwrap()
}

fn pools() -> (AudioPool<f64>, AudioPool<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let clean = AudioPool::from_waves(vec![tone(300.0, 4000), tone(700.0, 6000), tone(1200.0, 5000)]);
    let noise = AudioPool::from_waves(vec![
        white_noise(0.2, 9000, &mut rng).unwrap(),
        // Shorter than some clean utterances: tiled.
        white_noise(0.1, 3000, &mut rng).unwrap(),
    ]);
    (clean, noise)
}

#[test]
fn sample_mixture_is_reproducible() {
    let (clean, noise) = pools();
    let cfg = TrainConfig::default();
    let draw = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sample_mixture(&clean, &noise, &cfg, &mut rng).unwrap()
    };
    let (a, b) = (draw(5), draw(5));
    assert_eq!(a.meta, b.meta);
    assert_eq!(a.noisy, b.noisy);
    assert!((-10..=20).contains(&a.meta.snr_db));
    assert_eq!(a.noisy.len(), a.clean.len());
}

#[test]
fn snr_histogram_is_uniform() {
    let (clean, noise) = pools();
    let cfg = TrainConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut counts = [0usize; 31];
    let draws = 10_000;
    for _ in 0..draws {
        let m = sample_mixture(&clean, &noise, &cfg, &mut rng).unwrap();
        counts[(m.meta.snr_db + 10) as usize] += 1;
    }
    let p = 1.0 / 31.0;
    let mean = draws as f64 * p;
    let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
    for (i, &c) in counts.iter().enumerate() {
        assert!((c as f64 - mean).abs() < 4.0 * sigma, "snr {} drawn {c} times", i as i32 - 10);
    }
}

#[test]
fn silent_clean_pool_fails_after_resampling() {
    let (_, noise) = pools();
    let clean = AudioPool::from_waves(vec![Waveform::new(vec![0.0; 2000], SAMPLE_RATE).unwrap()]);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let err = sample_mixture(&clean, &noise, &TrainConfig::default(), &mut rng).unwrap_err();
    assert!(matches!(err, Error::Degenerate(_)), "{err}");
    let empty = AudioPool::<f64>::default();
    assert!(sample_mixture(&empty, &noise, &TrainConfig::default(), &mut rng).is_err());
}

fn example(frames: usize, bins: usize, seed: u64) -> Example<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Example {
        noisy_mag: Tensor::from_fn(&[frames, bins], |_| rng.gen_range(0.0..2.0)),
        target: Tensor::from_fn(&[frames, bins], |_| rng.gen_range(0.0..1.0)),
        meta: ItemMeta {
            clean_path: "c".into(),
            noise_path: "n".into(),
            snr_db: 0,
            noise_offset: 0,
            samples: 0,
            frames,
        },
    }
}

#[test]
fn make_batch_pads_and_flags() {
    let b = make_batch(&[example(3, 5, 1), example(3, 5, 2)]).unwrap();
    assert!(b.frame_valid.iter().all(|&v| v));

    let b = make_batch(&[example(3, 5, 1), example(5, 5, 2)]).unwrap();
    assert_eq!(b.noisy_mag.shape(), &[2, 5, 5]);
    assert_eq!(&b.frame_valid[..5], &[true, true, true, false, false]);
    assert!(b.frame_valid[5..].iter().all(|&v| v));
    assert!(b.noisy_mag.data()[15..25].iter().all(|&v| v == 0.0));
    assert!(b.target_mask.data()[15..25].iter().all(|&v| v == 0.0));
    assert!(make_batch::<f64>(&[]).is_err());
}

fn loss_of(batch: &Batch<f64>, w: &NetworkWeights<f64>, cfg: &ModelConfig) -> f64 {
    let tape = Tape::new();
    let bound = w.bind(&tape, false).unwrap();
    let l = batch_loss(&tape, batch, |x| network_mask(&tape, x, &bound, cfg)).unwrap();
    tape.value(l).item()
}

#[test]
fn batched_loss_is_mean_of_item_losses() {
    let cfg = ModelConfig { bins: 9, ..tiny() };
    let w = init_params::<f64>(&cfg, 3).unwrap();
    let items = [example(4, 9, 1), example(7, 9, 2), example(2, 9, 3)];
    let batch = make_batch(&items).unwrap();
    let unbatched: f64 = items
        .iter()
        .map(|e| {
            let m = forward(&e.noisy_mag, &w, &cfg).unwrap();
            mask_mse_loss(&m, &e.target, &vec![true; e.frames()]).unwrap()
        })
        .sum::<f64>()
        / items.len() as f64;
    assert!((loss_of(&batch, &w, &cfg) - unbatched).abs() < 1e-10);

    // A longer companion only adds padding to the others.
    let mut more = items.to_vec();
    more.push(example(30, 9, 4));
    let padded = make_batch(&more).unwrap();
    let (a, b) = (loss_of(&batch, &w, &cfg), loss_of(&padded, &w, &cfg));
    let fourth = {
        let e = &more[3];
        let m = forward(&e.noisy_mag, &w, &cfg).unwrap();
        mask_mse_loss(&m, &e.target, &vec![true; e.frames()]).unwrap()
    };
    assert!(((3.0 * a + fourth) / 4.0 - b).abs() < 1e-10);
}

fn overfit_source(samples: usize, seed: u64) -> DataSource<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = synthetic_mixture::<f32, _>(440.0, samples, 0.0, &mut rng).unwrap();
    DataSource::Fixed(vec![featurize(&m, &StftConfig::default(), MaskKind::Irm).unwrap()])
}

fn overfit_cfg(seed: u64, steps: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 1,
        schedule: Schedule::Constant,
        lr_base: 1e-3,
        epochs: 1,
        steps_per_epoch: steps,
        seed,
        ..TrainConfig::default()
    }
}

fn small_model() -> ModelConfig {
    ModelConfig { d_model: 16, n_layers: 1, ..ModelConfig::mambadc(1) }
}

#[test]
fn identical_seeds_identical_first_loss() {
    let src = overfit_source(4000, 1);
    let run = || {
        train_loop(&small_model(), &overfit_cfg(3, 2), &StftConfig::default(), &src, &[], None)
            .unwrap()
            .log[0]
            .loss
    };
    assert_eq!(run().to_bits(), run().to_bits());
}

#[test]
fn validation_does_not_touch_weights() {
    let cfg = small_model();
    let w = init_params::<f32>(&cfg, 2).unwrap();
    let DataSource::Fixed(items) = overfit_source(4000, 2) else { unreachable!() };
    let before = w.clone();
    evaluate_loss(&w, &cfg, &items).unwrap();
    assert_eq!(before, w);
}

#[test]
fn loss_trends_down_over_first_steps() {
    let src = overfit_source(8000, 4);
    let mut decreasing = 0;
    for seed in 0..10 {
        let report =
            train_loop(&small_model(), &overfit_cfg(seed, 50), &StftConfig::default(), &src, &[], None)
                .unwrap();
        let losses: Vec<f64> = report.log.iter().map(|r| r.loss).collect();
        // Least-squares slope of loss against step.
        let n = losses.len() as f64;
        let mean_x = (n - 1.0) / 2.0;
        let mean_y = losses.iter().sum::<f64>() / n;
        let slope = losses
            .iter()
            .enumerate()
            .map(|(i, &y)| (i as f64 - mean_x) * (y - mean_y))
            .sum::<f64>();
        if slope < 0.0 && losses[49] < losses[0] {
            decreasing += 1;
        }
    }
    assert!(decreasing >= 9, "{decreasing}/10 seeds trend downward");
}

#[test]
fn loop_writes_log_and_checkpoints() {
    let (clean, noise) = pools();
    let mcfg = ModelConfig { d_model: 8, n_layers: 1, n_state: 4, ..ModelConfig::mambadc(1) };
    let cfg = TrainConfig {
        batch_size: 2,
        epochs: 2,
        warmup_steps: 10,
        lr_scale: 1.0,
        ..TrainConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let valid: Vec<Example<f64>> = fixed_mixtures(&clean, &noise, &cfg, 2, &mut rng)
        .unwrap()
        .iter()
        .map(|m| featurize(m, &StftConfig::default(), cfg.target).unwrap())
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let out = OutputDir { dir: dir.path().join("run") };
    let report = train_loop(
        &mcfg,
        &cfg,
        &StftConfig::default(),
        &DataSource::Pools { clean, noise },
        &valid,
        Some(&out),
    )
    .unwrap();
    // Three clean utterances in batches of two: two steps per epoch.
    assert_eq!(report.steps, 4);
    let csv = std::fs::read_to_string(out.metrics_path()).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], LOG_HEADER);
    assert_eq!(lines.len(), 1 + 4 + 2);
    assert_eq!(lines.iter().filter(|l| l.contains(",valid,")).count(), 2);
    for p in [out.last_path(), out.best_path(), out.epoch_path(1), out.epoch_path(2)] {
        assert!(p.exists(), "{}", p.display());
    }
    assert!(report.best.is_some());
}
