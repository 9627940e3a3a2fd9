use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mambadc::dsp::{load_wav, save_wav, WavEncoding, Waveform, SAMPLE_RATE};
use mambadc::model::{init_params, save_checkpoint, ModelConfig};
use mambadc::train::{sinusoid, white_noise};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mambadc"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn mambadc")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn overfit_conf() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/overfit.conf")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// `<dir>/clean/{a,b}.wav` (sines) and `<dir>/noise/white.wav`.
fn corpus(dir: &Path) -> (PathBuf, PathBuf) {
    let (clean, noise) = (dir.join("clean"), dir.join("noise"));
    fs::create_dir_all(&clean).unwrap();
    fs::create_dir_all(&noise).unwrap();
    for (name, f) in [("a.wav", 440.0), ("b.wav", 1250.0)] {
        let w = sinusoid::<f32>(f, 0.5, 8000).unwrap();
        save_wav(clean.join(name), &w, WavEncoding::Float32).unwrap();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = white_noise::<f32, _>(0.1, 16000, &mut rng).unwrap();
    save_wav(noise.join("white.wav"), &n, WavEncoding::Float32).unwrap();
    (clean, noise)
}

/// Small model whose output projection is zero, so every mask value is
/// sigmoid(0) = 0.5.
fn half_mask_checkpoint(path: &Path, bins: usize) {
    let cfg = ModelConfig {
        d_model: 8,
        n_layers: 1,
        n_state: 4,
        bins,
        ..ModelConfig::mambadc(1)
    };
    let mut w = init_params::<f32>(&cfg, 5).unwrap();
    for name in ["output.conv.weight", "output.conv.bias"] {
        w.get_mut(name).unwrap().value.data_mut().fill(0.0);
    }
    save_checkpoint(path, &w, &cfg).unwrap();
}

#[test]
fn unknown_config_key_exits_2_naming_key() {
    let o = run(&["--set", "model.heads=4", "train"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.starts_with("error:"), "{err}");
    assert!(err.contains("model.heads"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);

    let dir = TempDir::new().unwrap();
    let conf = dir.path().join("run.conf");
    fs::write(&conf, "model.d_model = 32\ntrain.warmup = 10\n").unwrap();
    let o = run(&["--config", s(&conf), "train"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("train.warmup"));
}

#[test]
fn missing_noise_root_exits_2() {
    let dir = TempDir::new().unwrap();
    let (clean, _) = corpus(dir.path());
    let missing = dir.path().join("nowhere");
    let o = run(&[
        "--set",
        &format!("data.clean={}", s(&clean)),
        "--set",
        &format!("data.noise={}", s(&missing)),
        "train",
    ]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.starts_with("error:") && err.contains("noise root not found"), "{err}");
}

#[test]
fn bundled_overfit_config_trains_below_target() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("run");
    let o = run(&[
        "--config",
        s(&overfit_conf()),
        "--set",
        &format!("output.dir={}", s(&out)),
        "train",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let loss: f64 = text
        .split_whitespace()
        .find_map(|t| t.strip_prefix("final_loss="))
        .unwrap()
        .parse()
        .unwrap();
    assert!(loss < 1e-3, "{text}");
    assert!(text.contains("reached_target=true"));
    for f in ["metrics.csv", "last.mdck", "best.mdck"] {
        assert!(out.join(f).is_file(), "{f}");
    }
}

#[test]
fn dynamic_mixing_training_runs_in_f64() {
    let dir = TempDir::new().unwrap();
    let (clean, noise) = corpus(dir.path());
    let out = dir.path().join("run");
    let o = run(&[
        "--precision",
        "f64",
        "--seed",
        "9",
        "--set",
        &format!("data.clean={}", s(&clean)),
        "--set",
        &format!("data.noise={}", s(&noise)),
        "--set",
        &format!("output.dir={}", s(&out)),
        "--set",
        "model.d_model=8",
        "--set",
        "model.n_layers=1",
        "--set",
        "train.epochs=2",
        "--set",
        "train.batch_size=2",
        "--set",
        "train.valid_items=2",
        "train",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("steps=2"));
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().filter(|l| l.contains(",valid,")).count(), 2);
    assert!(out.join("epoch_0001.mdck").is_file() && out.join("epoch_0002.mdck").is_file());
}

#[test]
fn enhance_with_half_mask_scales_input() {
    let dir = TempDir::new().unwrap();
    let ckpt = dir.path().join("half.mdck");
    half_mask_checkpoint(&ckpt, 257);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let input: Waveform<f32> = white_noise(0.2, 12345, &mut rng).unwrap();
    let in_path = dir.path().join("in.wav");
    save_wav(&in_path, &input, WavEncoding::Float32).unwrap();

    let outs: Vec<PathBuf> = (0..2).map(|i| dir.path().join(format!("out{i}.wav"))).collect();
    for out in &outs {
        let o = run(&[
            "enhance",
            "--checkpoint",
            s(&ckpt),
            "--input",
            s(&in_path),
            "--output",
            s(out),
            "--encoding",
            "float32",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(fs::read(&outs[0]).unwrap(), fs::read(&outs[1]).unwrap());

    let out: Waveform<f32> = load_wav(&outs[0]).unwrap();
    assert_eq!(out.len(), input.len());
    assert_eq!(out.sample_rate, SAMPLE_RATE);
    // Sample 0 sits under a zero window weight and is not reconstructable.
    let worst = (1..input.len())
        .map(|i| (out.samples[i] - 0.5 * input.samples[i]).abs())
        .fold(0.0f32, f32::max);
    assert!(worst < 1e-5, "{worst}");
}

#[test]
fn enhance_rejects_mismatched_checkpoint_and_bad_wav() {
    let dir = TempDir::new().unwrap();
    let ckpt = dir.path().join("small.mdck");
    half_mask_checkpoint(&ckpt, 17);
    let in_path = dir.path().join("in.wav");
    save_wav(&in_path, &sinusoid::<f32>(300.0, 0.3, 4000).unwrap(), WavEncoding::Pcm16).unwrap();
    let out = dir.path().join("out.wav");
    let o = run(&["enhance", "--checkpoint", s(&ckpt), "--input", s(&in_path), "--output", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error:") && stderr(&o).contains("bins"), "{}", stderr(&o));
    assert!(!out.exists());

    let good = dir.path().join("good.mdck");
    half_mask_checkpoint(&good, 257);
    let junk = dir.path().join("junk.wav");
    fs::write(&junk, b"not a wav file").unwrap();
    let o = run(&["enhance", "--checkpoint", s(&good), "--input", s(&junk), "--output", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error:"));
}

fn eval(dir: &Path, mode: &str, snrs: &str, out: &Path, extra: &[&str]) -> Output {
    let (clean, noise) = (dir.join("clean"), dir.join("noise"));
    let mut args = vec![
        "--seed", "4", "eval", "--mode", mode, "--snrs", snrs, "--clean", s(&clean), "--noise", s(&noise),
        "--output", s(out),
    ];
    args.extend_from_slice(extra);
    run(&args)
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn eval_oracle_gains_and_is_deterministic() {
    let dir = TempDir::new().unwrap();
    corpus(dir.path());
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    for out in [&a, &b] {
        let o = eval(dir.path(), "oracle", "0", out, &[]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let text = fs::read_to_string(&a).unwrap();
    assert!(text.starts_with("clean,noise,snr_db,si_sdr_in_db,si_sdr_db,si_sdr_gain_db,seg_snr_db,mask_mse\n"));
    let rows = csv_rows(&a);
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0][0], "a.wav");
    assert_eq!(rows[2][0], "mean");
    for r in &rows {
        let gain: f64 = r[5].parse().unwrap();
        assert!(gain >= 5.0, "{r:?}");
    }
}

#[test]
fn eval_passthrough_matches_mixing_snr() {
    let dir = TempDir::new().unwrap();
    corpus(dir.path());
    let out = dir.path().join("p.csv");
    let o = eval(dir.path(), "passthrough", "-5,0,5,10", &out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&out);
    assert_eq!(rows.len(), 2 * 4 + 1);
    for r in &rows[..8] {
        let snr: f64 = r[2].parse().unwrap();
        let si: f64 = r[4].parse().unwrap();
        assert!((si - snr).abs() < 0.5, "{r:?}");
        assert_eq!(r[3], r[4]);
    }
}

#[test]
fn eval_with_model_checkpoint_and_error_paths() {
    let dir = TempDir::new().unwrap();
    corpus(dir.path());
    let ckpt = dir.path().join("half.mdck");
    half_mask_checkpoint(&ckpt, 257);
    let out = dir.path().join("m.csv");
    let o = eval(dir.path(), "model", "0", &out, &["--checkpoint", s(&ckpt)]);
    assert!(o.status.success(), "{}", stderr(&o));
    // A constant mask only rescales, so SI-SDR barely moves.
    for r in &csv_rows(&out)[..2] {
        let gain: f64 = r[5].parse().unwrap();
        assert!(gain.abs() < 0.5, "{r:?}");
    }

    let o = eval(dir.path(), "model", "0", &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    fs::create_dir_all(dir.path().join("empty")).unwrap();
    let o = run(&[
        "eval", "--mode", "oracle", "--clean", s(&dir.path().join("empty")), "--noise",
        s(&dir.path().join("noise")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no WAV files"));
}

#[test]
fn bench_scan_csv_shape_and_agreement() {
    let o = run(&["bench-scan", "--lengths", "64,256,1024", "--d-inner", "8", "--n-state", "4", "--repeats", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("L,evaluator,mean_ms,max_abs_diff"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 6);
    for r in &rows {
        assert!(["sequential", "parallel"].contains(&r[1]));
        assert!(r[2].parse::<f64>().unwrap() >= 0.0);
        assert!(r[3].parse::<f64>().unwrap() < 1e-5, "{r:?}");
    }
}

#[test]
fn gradcheck_passes_and_negative_control_fails() {
    let o = run(&["gradcheck"]);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    let report = stdout(&o);
    for op in ["matmul", "layer_norm", "selective_scan.parallel", "layer.bimambadc", "network.mambadc"] {
        assert!(report.lines().any(|l| l.starts_with(&format!("{op},"))), "{op}");
    }

    let o = run(&["gradcheck", "--inject-sign-flip"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.starts_with("error:") && err.contains("matmul"), "{err}");
}
