//! JSON run configuration and `--set` overrides.

use std::path::{Path, PathBuf};

use coordx::exec::ExecMode;
use coordx::render::{Axis, Camera, Shading, SliceMap};
use coordx::signal::{Signal, SignalKind, SynthSpec};
use coordx::train::{BatchMode, TrainConfig};
use coordx::{Error, ModelSpec, Result, Rng};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Image,
    Video,
    Occupancy,
}

impl Task {
    fn in_dim(self) -> usize {
        match self {
            Task::Image => 2,
            Task::Video | Task::Occupancy => 3,
        }
    }

    fn matches(self, kind: SignalKind) -> bool {
        matches!(
            (self, kind),
            (Task::Image, SignalKind::Image2d)
                | (Task::Video, SignalKind::Video3d)
                | (Task::Occupancy, SignalKind::Occupancy3d)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Precision {
    #[default]
    #[serde(rename = "f64")]
    F64,
    #[serde(rename = "f32")]
    F32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SignalSource {
    Synth(SynthSpec),
    /// A PGM or PPM image.
    File(PathBuf),
}

impl SignalSource {
    pub fn load(&self, seed: u64) -> Result<Signal> {
        match self {
            SignalSource::Synth(spec) => coordx::signal::synth_signal(spec, &mut Rng::new(seed)),
            SignalSource::File(path) => Signal::load_image(path),
        }
    }
}

/// Sampler settings used by `fit --accelerated`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerBlock {
    /// Target points per batch.
    pub points: usize,
    #[serde(default)]
    pub continuous: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IoBlock {
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Subdirectory of `out_dir`; defaults to the command name.
    #[serde(default)]
    pub run_name: Option<String>,
    /// Input checkpoint for `decompose` and `render`.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    /// Seed of synthetic signals and benchmark initialization.
    #[serde(default)]
    pub seed: u64,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs")
}

impl Default for IoBlock {
    fn default() -> Self {
        Self {
            out_dir: default_out_dir(),
            run_name: None,
            checkpoint: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchBlock {
    pub extents: Vec<Vec<usize>>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_warmup")]
    pub warmup: usize,
    #[serde(default = "default_bench_mode")]
    pub mode: ExecMode,
}

fn default_trials() -> usize {
    5
}
fn default_warmup() -> usize {
    2
}
fn default_bench_mode() -> ExecMode {
    ExecMode::Sequential
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceSpec {
    pub axis: Axis,
    #[serde(default)]
    pub coord: f64,
    #[serde(default = "default_slice_size")]
    pub size: usize,
    #[serde(default)]
    pub map: SliceMap,
}

fn default_slice_size() -> usize {
    128
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderBlock {
    /// Precomputed grid resolution per axis.
    #[serde(default = "default_render_resolution")]
    pub resolution: [usize; 3],
    #[serde(default = "default_slices")]
    pub slices: Vec<SliceSpec>,
    #[serde(default)]
    pub camera: Option<Camera>,
    #[serde(default)]
    pub shading: Shading,
}

fn default_render_resolution() -> [usize; 3] {
    [64; 3]
}

fn default_slices() -> Vec<SliceSpec> {
    vec![SliceSpec {
        axis: Axis::Z,
        coord: 0.0,
        size: default_slice_size(),
        map: SliceMap::Sigmoid,
    }]
}

impl Default for RenderBlock {
    fn default() -> Self {
        Self {
            resolution: default_render_resolution(),
            slices: default_slices(),
            camera: None,
            shading: Shading::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct DecomposeBlock {
    /// Lattice extents per input axis. Defaults to the signal extents
    /// recorded in the `run.json` beside the checkpoint.
    #[serde(default)]
    pub extents: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub task: Option<Task>,
    #[serde(default)]
    pub precision: Precision,
    #[serde(default)]
    pub signal: Option<SignalSource>,
    #[serde(default)]
    pub model: Option<ModelSpec>,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub sampler: Option<SamplerBlock>,
    #[serde(default)]
    pub io: IoBlock,
    #[serde(default)]
    pub bench: Option<BenchBlock>,
    #[serde(default)]
    pub render: RenderBlock,
    #[serde(default)]
    pub decompose: DecomposeBlock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Fit,
    Bench,
    Decompose,
    Render,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Fit => "fit",
            Command::Bench => "bench",
            Command::Decompose => "decompose",
            Command::Render => "render",
        }
    }
}

fn missing(field: &str, cmd: Command) -> Error {
    Error::Config(format!("`{field}` is required for {}", cmd.name()))
}

impl RunConfig {
    /// Reads `path` (or an empty object), applies `key=value` overrides and
    /// deserializes. Unknown keys are rejected after overriding, so a typo in
    /// `--set` fails the same way as one in the file.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)?;
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => Value::Object(Default::default()),
        };
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        default_epochs(&mut value);
        serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self, cmd: Command) -> Result<()> {
        if let Some(model) = &self.model {
            model.validate().map_err(|e| prefix("model", e))?;
            if let Some(task) = self.task {
                if model.in_dim != task.in_dim() {
                    return Err(Error::Config(format!(
                        "model.in_dim: {} does not fit a {task:?} task (needs {})",
                        model.in_dim,
                        task.in_dim()
                    )));
                }
            }
        }
        if let Some(train) = &self.train {
            train.validate().map_err(|e| prefix("train", e))?;
        }
        if let Some(s) = &self.sampler {
            if s.points == 0 {
                return Err(Error::Config("sampler.points: must be positive".into()));
            }
        }
        match cmd {
            Command::Fit => {
                self.task.ok_or_else(|| missing("task", cmd))?;
                self.signal.as_ref().ok_or_else(|| missing("signal", cmd))?;
                self.model.as_ref().ok_or_else(|| missing("model", cmd))?;
                self.train.as_ref().ok_or_else(|| missing("train", cmd))?;
            }
            Command::Bench => {
                let model = self.model.as_ref().ok_or_else(|| missing("model", cmd))?;
                if !model.is_split() {
                    return Err(Error::Config("model.split: bench needs a split model".into()));
                }
                let bench = self.bench.as_ref().ok_or_else(|| missing("bench", cmd))?;
                if let Some(e) = bench.extents.iter().find(|e| e.len() != model.in_dim) {
                    return Err(Error::Config(format!(
                        "bench.extents: {e:?} does not have {} axes",
                        model.in_dim
                    )));
                }
                self.bench_config().validate().map_err(|e| prefix("bench", e))?;
            }
            Command::Decompose | Command::Render => {
                self.io.checkpoint.as_ref().ok_or_else(|| missing("io.checkpoint", cmd))?;
            }
        }
        if cmd == Command::Render {
            if self.render.resolution.iter().any(|&r| r < 2) {
                return Err(Error::Config("render.resolution: every axis needs >= 2".into()));
            }
            if let Some(c) = &self.render.camera {
                c.validate().map_err(|e| prefix("render.camera", e))?;
            }
        }
        Ok(())
    }

    /// Training settings with the sampler block applied when accelerated.
    pub fn train_config(&self, accelerated: bool) -> Result<TrainConfig> {
        let mut train = self.train.clone().ok_or_else(|| missing("train", Command::Fit))?;
        if accelerated {
            let s = self
                .sampler
                .as_ref()
                .ok_or_else(|| Error::Config("`sampler` is required with --accelerated".into()))?;
            train.batch = BatchMode::Sampled {
                points: s.points,
                continuous: s.continuous,
            };
        }
        Ok(train)
    }

    /// Loads the signal and checks it against the task and model.
    pub fn load_signal(&self) -> Result<Signal> {
        let source = self.signal.as_ref().ok_or_else(|| missing("signal", Command::Fit))?;
        let signal = source.load(self.io.seed)?;
        if let Some(task) = self.task {
            if !task.matches(signal.kind()) {
                return Err(Error::Config(format!(
                    "signal: a {:?} signal does not fit a {task:?} task",
                    signal.kind()
                )));
            }
        }
        if let Some(m) = &self.model {
            if m.out_dim != signal.out_dim() {
                return Err(Error::Config(format!(
                    "model.out_dim: {} but the signal has {} channels",
                    m.out_dim,
                    signal.out_dim()
                )));
            }
        }
        Ok(signal)
    }

    pub fn bench_config(&self) -> coordx::bench::BenchConfig {
        let b = self.bench.clone().expect("validated");
        let mut c = coordx::bench::BenchConfig::new(b.extents);
        c.trials = b.trials;
        c.warmup = b.warmup;
        c.mode = b.mode;
        c.seed = self.io.seed;
        c
    }

    pub fn run_dir(&self, cmd: Command) -> PathBuf {
        let name = self.io.run_name.clone().unwrap_or_else(|| cmd.name().to_string());
        self.io.out_dir.join(name)
    }
}

fn prefix(field: &str, e: Error) -> Error {
    match e {
        Error::Config(msg) => Error::Config(format!("{field}: {msg}")),
        other => other,
    }
}

/// Desk-scale epoch counts used when a train block omits `epochs`.
fn default_epochs(root: &mut Value) {
    let epochs = match root.get("task").and_then(Value::as_str) {
        Some("occupancy") => 1000,
        _ => 2000,
    };
    if let Some(train) = root.get_mut("train").and_then(Value::as_object_mut) {
        train.entry("epochs").or_insert(epochs.into());
    }
}

/// Sets a dotted path such as `train.epochs=10` inside `root`, creating
/// objects along the way. The value is parsed as JSON and falls back to a
/// plain string.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("--set expects key=value, got `{assignment}`")))?;
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::Config(format!("--set has an empty key segment in `{key}`")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if !cur.is_object() {
            if cur.is_null() {
                *cur = Value::Object(Default::default());
            } else {
                return Err(Error::Config(format!(
                    "--set {key}: `{}` is not an object",
                    parts[..i].join(".")
                )));
            }
        }
        let map = cur.as_object_mut().expect("checked above");
        if i + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        cur = map.entry(part.to_string()).or_insert(Value::Null);
    }
    unreachable!("key has at least one segment")
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn override_nested_and_typed() {
        let mut v = json!({"train": {"epochs": 5}});
        apply_override(&mut v, "train.epochs=10").unwrap();
        apply_override(&mut v, "train.learning_rate=1e-3").unwrap();
        apply_override(&mut v, "io.run_name=abc").unwrap();
        apply_override(&mut v, "bench.extents=[[4,4]]").unwrap();
        assert_eq!(
            v,
            json!({"train": {"epochs": 10, "learning_rate": 1e-3}, "io": {"run_name": "abc"}, "bench": {"extents": [[4, 4]]}})
        );
        assert!(apply_override(&mut v, "novalue").is_err());
        assert!(apply_override(&mut v, "train..x=1").is_err());
        assert!(apply_override(&mut v, "train.epochs.x=1").is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = RunConfig::load(None, &["trian.epochs=3".into()]).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
        let err = RunConfig::load(None, &["train.epochs=3".into(), "train.lr=1".into()]).unwrap_err();
        assert!(err.to_string().contains("lr"), "{err}");
    }

    #[test]
    fn epochs_default_per_task() {
        let c = RunConfig::load(None, &["task=occupancy".into(), "train={}".into()]).unwrap();
        assert_eq!(c.train.unwrap().epochs, 1000);
        let c = RunConfig::load(None, &["task=image".into(), "train.seed=2".into()]).unwrap();
        assert_eq!(c.train.unwrap().epochs, 2000);
        let c = RunConfig::load(None, &["train.epochs=7".into()]).unwrap();
        assert_eq!(c.train.unwrap().epochs, 7);
    }

    #[test]
    fn fit_requires_blocks() {
        let c = RunConfig::load(None, &[]).unwrap();
        let err = c.validate(Command::Fit).unwrap_err();
        assert!(err.to_string().contains("task"));
    }

    #[test]
    fn model_must_fit_task() {
        let c = RunConfig::load(
            None,
            &[
                "task=occupancy".into(),
                r#"model={"in_dim":2,"out_dim":1,"width":8,"depth":2}"#.into(),
            ],
        )
        .unwrap();
        assert!(c.validate(Command::Fit).unwrap_err().to_string().contains("in_dim"));
    }

    #[test]
    fn accelerated_needs_sampler() {
        let c = RunConfig::load(None, &["train.epochs=1".into()]).unwrap();
        assert!(c.train_config(true).is_err());
        let c = RunConfig::load(None, &["train.epochs=1".into(), "sampler.points=64".into()]).unwrap();
        assert_eq!(
            c.train_config(true).unwrap().batch,
            BatchMode::Sampled {
                points: 64,
                continuous: false
            }
        );
    }
}
