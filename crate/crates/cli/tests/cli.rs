use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use coordx::metrics::psnr;
use coordx::signal::{synth_signal, SynthSpec};
use coordx::tensor::matmul;
use coordx::{checkpoint, Model, ModelSpec, Rng, Tensor};
use serde_json::{json, Value};

fn coordx(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coordx"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .env("COORDX_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> PathBuf {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    PathBuf::from(String::from_utf8_lossy(&out.stdout).lines().last().unwrap().trim())
}

fn write_config(dir: &Path, name: &str, v: &Value) -> String {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p.to_string_lossy().into_owned()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn rank1_config(model: Value, epochs: usize, run: &str) -> Value {
    json!({
        "task": "image",
        "signal": {"synth": {"name": "rank1_image", "size": 16}},
        "model": model,
        "train": {"epochs": epochs, "seed": 3},
        "io": {"out_dir": "runs", "run_name": run},
    })
}

fn fully_split() -> Value {
    serde_json::to_value(ModelSpec::coordx(2, 1, 16, 2, 0).with_split(|s| s.reduce = 16)).unwrap()
}

#[test]
fn fit_baseline_and_coordx_write_comparable_csvs() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let mut headers = Vec::new();
    for (name, model) in [
        ("base", serde_json::to_value(ModelSpec::baseline(2, 1, 16, 3)).unwrap()),
        ("split", serde_json::to_value(ModelSpec::coordx(2, 1, 16, 3, 1)).unwrap()),
    ] {
        let cfg = write_config(d, &format!("{name}.json"), &rank1_config(model, 5, name));
        let run = d.join(ok(&coordx(d, &["fit", "--config", &cfg])));
        for f in ["model.cxcp", "train.csv", "summary.json", "run.json", "reconstruction.pgm"] {
            assert!(run.join(f).is_file(), "{name}: missing {f}");
        }
        let csv = std::fs::read_to_string(run.join("train.csv")).unwrap();
        headers.push(csv.lines().next().unwrap().to_string());
        assert_eq!(csv.lines().count(), 2);
        let meta = read_json(&run.join("run.json"));
        assert_eq!(meta["command"], "fit");
        assert!(meta["git"].is_string());
        assert_eq!(meta["config"]["train"]["seed"], 3);
        assert_eq!(meta["signal_extents"], json!([16, 16]));
    }
    assert_eq!(headers[0], headers[1]);
}

#[test]
fn zero_epoch_fit_saves_initialization() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let spec = ModelSpec::coordx(2, 1, 16, 3, 1);
    let cfg = write_config(d, "c.json", &rank1_config(serde_json::to_value(&spec).unwrap(), 0, "z"));
    let run = d.join(ok(&coordx(d, &["fit", "--config", &cfg])));
    let saved: Model = checkpoint::load(run.join("model.cxcp")).unwrap();
    let init = Model::<f64>::init(spec, &Rng::new(3)).unwrap();
    assert_eq!(saved.params, init.params);
}

#[test]
fn accelerated_fit_logs_decomposable_batches() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let mut c = rank1_config(serde_json::to_value(ModelSpec::coordx(2, 1, 16, 3, 1)).unwrap(), 4, "acc");
    c["sampler"] = json!({"points": 64});
    let cfg = write_config(d, "c.json", &c);
    let run = d.join(ok(&coordx(d, &["fit", "--config", &cfg, "--accelerated"])));
    let csv = std::fs::read_to_string(run.join("batches.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.ends_with(",true")), "{csv}");
    assert_eq!(read_json(&run.join("run.json"))["accelerated"], true);

    let out = coordx(d, &["fit", "--config", &cfg, "--accelerated", "--set", "sampler=null"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_errors_exit_two_with_field_names() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let cfg = write_config(d, "c.json", &rank1_config(fully_split(), 1, "e"));

    let out = coordx(d, &["fit", "--config", &cfg, "--set", "train.epoch=3"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epoch"));

    let out = coordx(d, &["fit", "--config", &cfg, "--set", "model.width=0"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("model"));

    let out = coordx(d, &["fit", "--config", &cfg, "--set", "task=occupancy"]);
    assert_eq!(out.status.code(), Some(2));

    let out = coordx(d, &["fit", "--config", "missing.json"]);
    assert_eq!(out.status.code(), Some(4));

    let out = Command::new(env!("CARGO_BIN_EXE_coordx"))
        .args(["fit", "--config", &cfg])
        .current_dir(d)
        .env("COORDX_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn divergence_exits_three() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let cfg = write_config(d, "c.json", &rank1_config(fully_split(), 3, "div"));
    let out = coordx(d, &["fit", "--config", &cfg, "--set", "train.learning_rate=1e300"]);
    assert_eq!(out.status.code(), Some(3));
}

fn read_tensor(p: &Path) -> Tensor {
    Tensor::read_from(&mut std::fs::File::open(p).unwrap()).unwrap()
}

#[test]
fn decompose_factors_reconstruct_the_fit() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let cfg = write_config(d, "c.json", &rank1_config(fully_split(), 30, "r1"));
    let run = d.join(ok(&coordx(d, &["fit", "--config", &cfg])));
    let fit_psnr = read_json(&run.join("summary.json"))["final"]["psnr"].as_f64().unwrap();

    let ckpt = run.join("model.cxcp");
    let out = d.join(ok(&coordx(
        d,
        &["decompose", "--checkpoint", ckpt.to_str().unwrap(), "--set", "io.run_name=dec"],
    )));
    let hx = read_tensor(&out.join("factor_0.cxt"));
    let hy = read_tensor(&out.join("factor_1.cxt"));
    assert_eq!(hx.shape(), &[16, 16]);
    assert!(out.join("factor_0.pgm").is_file());
    let recon = matmul(&hx, &hy.transpose().unwrap()).unwrap();
    let truth = synth_signal(&SynthSpec::Rank1Image { size: 16 }, &mut Rng::new(0)).unwrap();
    let p = psnr(recon.data(), truth.lattice_values().data()).unwrap();
    assert!((p - fit_psnr).abs() < 1e-9, "{p} vs {fit_psnr}");

    let bytes = std::fs::read(out.join("factor_0.cxt")).unwrap();
    assert_eq!(hx.to_bytes(), bytes);
}

#[test]
fn decompose_rejects_baseline_and_counts_branches() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let base: Model = Model::init(ModelSpec::baseline(2, 1, 8, 2), &Rng::new(0)).unwrap();
    checkpoint::save(&base, d.join("base.cxcp")).unwrap();
    let out = coordx(d, &["decompose", "--checkpoint", "base.cxcp", "--set", "decompose.extents=[4,4]"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nothing to decompose"));

    let occ: Model<f32> = Model::init(ModelSpec::coordx(3, 1, 8, 3, 1), &Rng::new(0)).unwrap();
    checkpoint::save(&occ, d.join("occ.cxcp")).unwrap();
    let out = d.join(ok(&coordx(
        d,
        &["decompose", "--checkpoint", "occ.cxcp", "--set", "decompose.extents=[5,6,7]"],
    )));
    for (i, b) in [5, 6, 7].into_iter().enumerate() {
        assert_eq!(read_tensor(&out.join(format!("factor_{i}.cxt"))).rows(), b);
    }
    assert!(!out.join("factor_3.cxt").exists());

    let out = coordx(d, &["decompose", "--checkpoint", "occ.cxcp"]);
    assert_eq!(out.status.code(), Some(2), "no extents known");
}

fn render_config(d: &Path) -> String {
    write_config(
        d,
        "render.json",
        &json!({
            "render": {
                "resolution": [16, 16, 16],
                "slices": [{"axis": "z", "size": 32}, {"axis": "x", "coord": 0.25, "size": 32}],
                "camera": {
                    "origin": [2.5, 0.0, 0.0], "look_at": [0.0, 0.0, 0.0], "fov": 40.0,
                    "resolution": [24, 16], "near": 1.0, "far": 4.0, "samples": 32
                }
            }
        }),
    )
}

#[test]
fn render_is_deterministic_and_uniform_for_untrained_model() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let m: Model = Model::init(ModelSpec::coordx(3, 1, 16, 3, 1), &Rng::new(1)).unwrap();
    checkpoint::save(&m, d.join("m.cxcp")).unwrap();
    let cfg = render_config(d);
    let a = d.join(ok(&coordx(d, &["render", "--config", &cfg, "--checkpoint", "m.cxcp", "--set", "io.run_name=a"])));
    let b = d.join(ok(&coordx(d, &["render", "--config", &cfg, "--checkpoint", "m.cxcp", "--set", "io.run_name=b"])));
    for f in ["slice_0_z.pgm", "slice_1_x.pgm", "render.pgm"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let img = coordx::pnm::Image8::load(a.join("slice_0_z.pgm")).unwrap();
    let lo = *img.data.iter().min().unwrap();
    let hi = *img.data.iter().max().unwrap();
    assert!(hi - lo <= 64, "untrained slice spans {lo}..{hi}");
}

#[test]
fn render_rejects_2d_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let m: Model = Model::init(ModelSpec::coordx(2, 1, 8, 3, 1), &Rng::new(1)).unwrap();
    checkpoint::save(&m, d.join("m.cxcp")).unwrap();
    let out = coordx(d, &["render", "--checkpoint", "m.cxcp"]);
    assert_eq!(out.status.code(), Some(3));
    let out = coordx(d, &["render", "--checkpoint", "absent.cxcp"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn bench_emits_records_and_verdict() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let cfg = write_config(
        d,
        "b.json",
        &json!({
            "model": ModelSpec::coordx(2, 1, 16, 5, 2),
            "precision": "f32",
            "bench": {"extents": [[1, 1], [16, 16], [32, 32]]},
        }),
    );
    let out = coordx(d, &["bench", "--config", &cfg]);
    let run = d.join(ok(&out));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("PASS") || stdout.contains("FAIL"));
    let csv = std::fs::read_to_string(run.join("bench.csv")).unwrap();
    assert!(csv.starts_with("extent,N,predicted_gamma,ma_ratio,t_baseline_ms,t_coordx_ms,ratio"));
    assert_eq!(csv.lines().count(), 4);
    let records = read_json(&run.join("records.json"));
    assert_eq!(records[0]["overhead_dominated"], true);
    assert_eq!(records[0]["mode"], "sequential");
    assert!(std::fs::read_to_string(run.join("verdict.txt")).unwrap().contains("gamma"));

    let out = coordx(d, &["bench", "--config", &cfg, "--set", "bench.trials=2"]);
    assert_eq!(out.status.code(), Some(2));
}
