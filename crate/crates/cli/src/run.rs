use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use synsel::PipelineConfig;

/// A run config file: every pipeline setting plus dataset paths. Relative
/// paths are resolved against the directory of the file.
#[derive(Debug, Clone, Default, Serialize)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pool: Option<PathBuf>,
    /// Class count for datasets without a header file.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
    #[serde(flatten)]
    pub pipeline: PipelineConfig,
}

impl RunConfig {
    /// The path keys are split off by hand so that the remaining keys are
    /// checked strictly against [`PipelineConfig`].
    pub fn load(path: &Path) -> Result<Self> {
        let mut map: serde_json::Map<String, serde_json::Value> = synsel::io::read_json_file(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let mut take_path = |key: &str| -> Result<Option<PathBuf>> {
            map.remove(key)
                .map(|v| {
                    let p: PathBuf =
                        serde_json::from_value(v).with_context(|| format!("{}: \"{key}\"", path.display()))?;
                    Ok(if p.is_relative() { base.join(p) } else { p })
                })
                .transpose()
        };
        let (train, val, test, pool) = (
            take_path("train")?,
            take_path("val")?,
            take_path("test")?,
            take_path("pool")?,
        );
        let num_classes = map
            .remove("num_classes")
            .map(serde_json::from_value)
            .transpose()
            .with_context(|| format!("{}: \"num_classes\"", path.display()))?;
        let pipeline: PipelineConfig = serde_json::from_value(serde_json::Value::Object(map))
            .with_context(|| format!("invalid config {}", path.display()))?;
        pipeline.validate()?;
        Ok(Self {
            train,
            val,
            test,
            pool,
            num_classes,
            pipeline,
        })
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    config: Option<&'a Path>,
    inputs: &'a BTreeMap<&'static str, PathBuf>,
    /// Relative to the run directory.
    outputs: &'a [String],
    seed: Option<u64>,
    tool_version: &'static str,
    status: &'a str,
    started_at: f64,
    finished_at: f64,
    wall_clock_secs: f64,
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// An output directory that records what was written to it and closes with
/// a `manifest.json`.
pub struct RunDir {
    dir: PathBuf,
    command: &'static str,
    config: Option<PathBuf>,
    inputs: BTreeMap<&'static str, PathBuf>,
    outputs: Vec<String>,
    seed: Option<u64>,
    started_at: f64,
    clock: Instant,
}

pub const MANIFEST: &str = "manifest.json";

impl RunDir {
    pub fn create(dir: &Path, command: &'static str) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            command,
            config: None,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            seed: None,
            started_at: unix_now(),
            clock: Instant::now(),
        })
    }

    pub fn config(&mut self, path: Option<&Path>) {
        self.config = path.map(Path::to_path_buf);
    }

    pub fn input(&mut self, name: &'static str, path: &Path) {
        self.inputs.insert(name, path.to_path_buf());
    }

    pub fn seed(&mut self, seed: u64) {
        self.seed = Some(seed);
    }

    /// Path of output `name`, recorded in the manifest.
    pub fn output(&mut self, name: &str) -> PathBuf {
        if !self.outputs.iter().any(|o| o == name) {
            self.outputs.push(name.to_string());
        }
        self.dir.join(name)
    }

    /// A dataset also gets a header file next to it.
    pub fn dataset_output(&mut self, name: &str) -> PathBuf {
        let path = self.output(name);
        let header = synsel::io::header_path(&path);
        let header_name = header
            .file_name()
            .expect("header has a file name")
            .to_string_lossy()
            .into_owned();
        self.output(&header_name);
        path
    }

    pub fn finish(self, status: &str) -> Result<()> {
        let manifest = RunManifest {
            command: self.command,
            config: self.config.as_deref(),
            inputs: &self.inputs,
            outputs: &self.outputs,
            seed: self.seed,
            tool_version: env!("CARGO_PKG_VERSION"),
            status,
            started_at: self.started_at,
            finished_at: unix_now(),
            wall_clock_secs: self.clock.elapsed().as_secs_f64(),
        };
        synsel::io::write_json(&self.dir.join(MANIFEST), &manifest)?;
        Ok(())
    }
}
