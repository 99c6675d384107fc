use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use coordx::bench::{run_bench, verdict, write_csv};
use coordx::checkpoint;
use coordx::grid::make_grid;
use coordx::pnm::Image8;
use coordx::render::{precompute_grid, raymarch, slice_image, Axis, SliceMap};
use coordx::signal::{Signal, SignalKind};
use coordx::{CoordGrid, Error, Model, Result, Scalar, Tensor};
use log::info;
use serde_json::{json, Value};

use crate::config::{Command, Precision, RunConfig};

/// Resolution of the occupancy slice written after a fit.
const FIT_SLICE_SIZE: usize = 128;

pub fn fit(cfg: &RunConfig, accelerated: bool) -> Result<PathBuf> {
    match cfg.precision {
        Precision::F64 => fit_typed::<f64>(cfg, accelerated),
        Precision::F32 => fit_typed::<f32>(cfg, accelerated),
    }
}

fn fit_typed<T: Scalar>(cfg: &RunConfig, accelerated: bool) -> Result<PathBuf> {
    let train = cfg.train_config(accelerated)?;
    let signal = cfg.load_signal()?;
    let spec = cfg.model.clone().expect("validated");
    let dir = prepare_dir(cfg, Command::Fit)?;
    info!(
        "fit: {} epochs, {} model, batch {:?}",
        train.epochs,
        if spec.is_split() { "split" } else { "baseline" },
        train.batch
    );

    let mut report = coordx::train::fit::<T>(&spec, &signal, &train)?;
    for p in &report.trace {
        info!("epoch {}: loss {:.6e}, metric {:.4}, {:.2}s", p.epoch, p.loss, p.metric, p.seconds);
    }
    for b in &report.batch_log {
        info!("epoch {}: batch of {} points, decomposable {}", b.epoch, b.points, b.decomposable);
    }

    let ckpt = dir.join("model.cxcp");
    checkpoint::save(&report.model, &ckpt)?;
    report.checkpoint = Some(ckpt);
    report.write_csv(&mut BufWriter::new(File::create(dir.join("train.csv"))?))?;
    if !report.batch_log.is_empty() {
        let mut w = csv_writer(&dir.join("batches.csv"), "epoch,points,decomposable")?;
        for b in &report.batch_log {
            use std::io::Write;
            writeln!(w, "{},{},{}", b.epoch, b.points, b.decomposable)?;
        }
    }
    let images = write_reconstruction(&report.model, &signal, &dir)?;

    let summary = json!({
        "final": report.final_eval,
        "best_metric": report.best_metric(),
        "learning_rate": report.learning_rate,
        "loss": report.loss,
        "fc_ops_per_epoch": report.fc_ops_per_epoch,
        "train_seconds": report.epoch_seconds.iter().sum::<f64>(),
        "batches_checked": report.batches_checked,
        "batches_decomposable": report.batches_decomposable,
        "num_params": report.model.params.num_params(),
        "images": images,
    });
    write_json(&dir.join("summary.json"), &summary)?;
    let mut resolved = cfg.clone();
    resolved.train = Some(train);
    write_run_json(
        &dir,
        Command::Fit,
        &resolved,
        json!({
            "accelerated": accelerated,
            "signal_extents": signal.canonical_extents(),
            "learning_rate": report.learning_rate,
            "loss": report.loss,
        }),
    )?;
    info!("fit: final {:?}, wrote {}", report.final_eval, dir.display());
    Ok(dir)
}

pub fn bench(cfg: &RunConfig) -> Result<PathBuf> {
    let spec = cfg.model.clone().expect("validated");
    let bcfg = cfg.bench_config();
    let records = match cfg.precision {
        Precision::F64 => run_bench::<f64>(&spec.to_baseline(), &spec, &bcfg)?,
        Precision::F32 => run_bench::<f32>(&spec.to_baseline(), &spec, &bcfg)?,
    };
    let dir = prepare_dir(cfg, Command::Bench)?;
    write_csv(&records, &mut BufWriter::new(File::create(dir.join("bench.csv"))?))?;
    write_json(&dir.join("records.json"), &serde_json::to_value(&records)?)?;
    let v = verdict(&records);
    for r in &records {
        info!(
            "{}: MA ratio {:.4}, wall ratio {:.3}{}",
            r.extent_label(),
            r.ma_ratio,
            r.wall_ratio(),
            if r.overhead_dominated { " (overhead dominated)" } else { "" }
        );
    }
    fs::write(dir.join("verdict.txt"), format!("{v}\n"))?;
    println!("{v}");
    write_run_json(&dir, Command::Bench, cfg, json!({ "verdict_passed": v.passed() }))?;
    Ok(dir)
}

fn checkpoint_precision(path: &Path) -> Result<Precision> {
    let mut f = std::io::BufReader::new(File::open(path)?);
    let header = checkpoint::read_header(&mut f)?;
    match header.precision.as_str() {
        "f64" => Ok(Precision::F64),
        "f32" => Ok(Precision::F32),
        p => Err(Error::Parse(format!("unknown checkpoint precision `{p}`"))),
    }
}

pub fn decompose(cfg: &RunConfig) -> Result<PathBuf> {
    let path = cfg.io.checkpoint.clone().expect("validated");
    match checkpoint_precision(&path)? {
        Precision::F64 => decompose_typed::<f64>(cfg, &path),
        Precision::F32 => decompose_typed::<f32>(cfg, &path),
    }
}

fn decompose_typed<T: Scalar>(cfg: &RunConfig, path: &Path) -> Result<PathBuf> {
    let model = checkpoint::load::<T>(path)?;
    let Some(split) = model.spec.split.clone() else {
        return Err(Error::Task("nothing to decompose: the checkpoint holds a baseline model".into()));
    };
    let extents = match &cfg.decompose.extents {
        Some(e) => e.clone(),
        None => recorded_extents(path)?,
    };
    if extents.len() != model.spec.in_dim {
        return Err(Error::Config(format!(
            "decompose.extents: {extents:?} does not have {} axes",
            model.spec.in_dim
        )));
    }
    let grid = make_grid(&extents)?.with_branches(&split.branches)?;
    let features = model.branch_features(&grid.decompose())?;
    let dir = prepare_dir(cfg, Command::Decompose)?;
    let mut factors = Vec::new();
    for (i, f) in features.iter().enumerate() {
        let mut w = BufWriter::new(File::create(dir.join(format!("factor_{i}.cxt")))?);
        f.write_to(&mut w)?;
        heatmap(f).save(dir.join(format!("factor_{i}.pgm")))?;
        factors.push(json!({ "branch": i, "shape": f.shape() }));
    }
    let plan = model.spec.plan()?;
    write_run_json(
        &dir,
        Command::Decompose,
        cfg,
        json!({
            "extents": extents,
            "factors": factors,
            "reduce": plan.reduce,
            "fused_width": plan.fused_width,
            "fusion": plan.fusion,
        }),
    )?;
    info!("decompose: {} factors written to {}", features.len(), dir.display());
    Ok(dir)
}

/// Signal extents stored by `fit` in the `run.json` beside a checkpoint.
fn recorded_extents(checkpoint: &Path) -> Result<Vec<usize>> {
    let run = checkpoint.with_file_name("run.json");
    let text = fs::read_to_string(&run).map_err(|_| {
        Error::Config(format!(
            "decompose.extents is unset and {} is not readable",
            run.display()
        ))
    })?;
    let v: Value = serde_json::from_str(&text)?;
    serde_json::from_value(v["signal_extents"].clone())
        .map_err(|_| Error::Config(format!("{} records no signal_extents", run.display())))
}

/// Features as a grayscale image: rows are positions, columns features,
/// min-max normalized.
fn heatmap<T: Scalar>(t: &Tensor<T>) -> Image8 {
    let vals: Vec<f64> = t.data().iter().map(|v| v.to_f64()).collect();
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let unit: Vec<f64> = vals.iter().map(|v| (v - lo) / span).collect();
    Image8::from_unit(t.last_dim(), t.rows(), 1, &unit).expect("feature tensors are non-empty")
}

pub fn render(cfg: &RunConfig) -> Result<PathBuf> {
    let path = cfg.io.checkpoint.clone().expect("validated");
    match checkpoint_precision(&path)? {
        Precision::F64 => render_typed::<f64>(cfg, &path),
        Precision::F32 => render_typed::<f32>(cfg, &path),
    }
}

fn render_typed<T: Scalar>(cfg: &RunConfig, path: &Path) -> Result<PathBuf> {
    let model = checkpoint::load::<T>(path)?;
    let grid = precompute_grid(&model, cfg.render.resolution)?;
    let dir = prepare_dir(cfg, Command::Render)?;
    let mut images = Vec::new();
    for (i, s) in cfg.render.slices.iter().enumerate() {
        let name = format!("slice_{i}_{}.pgm", axis_name(s.axis));
        slice_image(&grid, s.axis, s.coord, s.size, s.map)?.save(dir.join(&name))?;
        images.push(name);
    }
    if let Some(camera) = &cfg.render.camera {
        raymarch(&grid, camera, &cfg.render.shading)?.save(dir.join("render.pgm"))?;
        images.push("render.pgm".into());
    }
    write_run_json(&dir, Command::Render, cfg, json!({ "images": images }))?;
    info!("render: {} images written to {}", images.len(), dir.display());
    Ok(dir)
}

fn axis_name(a: Axis) -> &'static str {
    match a {
        Axis::X => "x",
        Axis::Y => "y",
        Axis::Z => "z",
    }
}

/// Model output on every lattice point, `[N × O]` in lexicographic order.
fn predict<T: Scalar>(model: &Model<T>, grid: CoordGrid) -> Result<Tensor> {
    let out = if model.spec.is_split() {
        let grid = grid.with_branches(&model.spec.branch_spec())?;
        model.forward_coordx(&grid.decompose())?
    } else {
        model.forward_points(&grid.points())?
    };
    Ok(out.cast())
}

fn write_reconstruction<T: Scalar>(model: &Model<T>, signal: &Signal, dir: &Path) -> Result<Vec<String>> {
    let ext = |c: usize| if c == 1 { "pgm" } else { "ppm" };
    let mut names = Vec::new();
    match signal.kind() {
        SignalKind::Image2d => {
            let e = signal.canonical_extents();
            let out = predict(model, signal.canonical_grid())?;
            let c = out.last_dim();
            let name = format!("reconstruction.{}", ext(c));
            Image8::from_unit(e[1], e[0], c, out.data())?.save(dir.join(&name))?;
            names.push(name);
        }
        SignalKind::Video3d => {
            let e = signal.canonical_extents();
            let (h, w, frames) = (e[0], e[1], e[2]);
            let out = predict(model, signal.canonical_grid())?;
            let c = out.last_dim();
            for f in 0..frames {
                let mut px = Vec::with_capacity(h * w * c);
                for p in 0..h * w {
                    px.extend_from_slice(out.row(p * frames + f));
                }
                let name = format!("reconstruction_{f:03}.{}", ext(c));
                Image8::from_unit(w, h, c, &px)?.save(dir.join(&name))?;
                names.push(name);
            }
        }
        SignalKind::Occupancy3d => {
            let r = signal.canonical_extents()[0].max(2);
            let grid = precompute_grid(model, [r; 3])?;
            let name = "slice_z.pgm".to_string();
            slice_image(&grid, Axis::Z, 0.0, FIT_SLICE_SIZE, SliceMap::Sigmoid)?.save(dir.join(&name))?;
            names.push(name);
        }
    }
    Ok(names)
}

fn prepare_dir(cfg: &RunConfig, cmd: Command) -> Result<PathBuf> {
    let dir = cfg.run_dir(cmd);
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn csv_writer(path: &Path, header: &str) -> Result<BufWriter<File>> {
    use std::io::Write;
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{header}")?;
    Ok(w)
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(v)? + "\n")?;
    Ok(())
}

/// Provenance record: resolved config, source revision and command extras.
fn write_run_json(dir: &Path, cmd: Command, cfg: &RunConfig, extra: Value) -> Result<()> {
    let mut v = json!({
        "command": cmd.name(),
        "version": env!("CARGO_PKG_VERSION"),
        "git": git_describe(),
        "config": cfg,
    });
    if let (Some(obj), Value::Object(extra)) = (v.as_object_mut(), extra) {
        obj.extend(extra);
    }
    write_json(&dir.join("run.json"), &v)
}

fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .unwrap_or_else(|| "unknown".into())
}
