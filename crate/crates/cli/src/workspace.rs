//! Stage directories, manifests and the checks that chain them.
//!
//! Every stage writes `stage.json` next to its outputs. It holds the config,
//! its hash, the hash of each upstream `stage.json` and the hash of every
//! output file. Wall-clock times and endpoint URLs go in `stage.meta.json`,
//! which is never hashed.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, bail, Context, Result};
use megadoc_core::arena::{sha256_file, sha256_hex, write_atomic};
use megadoc_core::presets::Preset;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::logging;

pub const STAGE_MANIFEST: &str = "stage.json";
pub const STAGE_META: &str = "stage.meta.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    pub name: String,
    pub config: Value,
    pub config_hash: String,
    /// Upstream manifest path, relative to the workspace, to its sha256.
    pub inputs: BTreeMap<String, String>,
    /// Output file, relative to the stage directory, to its sha256.
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageMeta {
    pub started_unix: f64,
    pub finished_unix: f64,
    pub elapsed_seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    pub version: String,
}

pub struct Workspace {
    pub root: PathBuf,
    pub seed: u64,
    pub preset: Preset,
}

/// A verified upstream stage.
#[derive(Debug, Clone)]
pub struct Upstream {
    pub dir: PathBuf,
    pub manifest: StageManifest,
    rel: String,
    sha: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Ran(StageManifest),
    UpToDate(StageManifest),
}

impl Outcome {
    pub fn manifest(&self) -> &StageManifest {
        match self {
            Self::Ran(m) | Self::UpToDate(m) => m,
        }
    }

    pub fn is_up_to_date(&self) -> bool {
        matches!(self, Self::UpToDate(_))
    }
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

pub fn config_hash(config: &Value) -> String {
    sha256_hex(&serde_json::to_vec(config).expect("json values serialize"))
}

fn read_manifest(path: &Path) -> Result<StageManifest> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))
}

/// Files directly inside `dir` other than the stage's own bookkeeping.
fn output_hashes(dir: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        if !entry.file_type()?.is_file() {
            continue;
        }
        let name = entry.file_name().to_string_lossy().into_owned();
        if name == STAGE_MANIFEST || name == STAGE_META {
            continue;
        }
        out.insert(name, sha256_file(&entry.path())?);
    }
    Ok(out)
}

impl Workspace {
    pub fn open(root: &Path, seed: u64, preset: Preset) -> Result<Self> {
        fs::create_dir_all(root.join("logs"))
            .with_context(|| format!("creating workspace {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            seed,
            preset,
        })
    }

    pub fn stage_dir(&self, stage: &str, name: &str) -> PathBuf {
        self.root.join(stage).join(name)
    }

    fn rel(&self, path: &Path) -> String {
        path.strip_prefix(&self.root)
            .unwrap_or(path)
            .to_string_lossy()
            .replace('\\', "/")
    }

    fn verify_outputs(&self, dir: &Path, m: &StageManifest) -> Result<(), String> {
        for (file, sha) in &m.outputs {
            let path = dir.join(file);
            match sha256_file(&path) {
                Ok(h) if &h == sha => {}
                Ok(_) => return Err(format!("{} changed since its manifest was written", self.rel(&path))),
                Err(_) => return Err(format!("{} is missing", self.rel(&path))),
            }
        }
        Ok(())
    }

    fn verify_inputs(&self, m: &StageManifest) -> Result<(), String> {
        for (rel, sha) in &m.inputs {
            match sha256_file(&self.root.join(rel)) {
                Ok(h) if &h == sha => {}
                Ok(_) => return Err(format!("{rel} was rewritten after this stage ran")),
                Err(_) => return Err(format!("{rel} is missing")),
            }
        }
        Ok(())
    }

    /// Loads an upstream stage, refusing when it is missing or stale.
    pub fn require(&self, stage: &str, name: &str) -> Result<Upstream> {
        let dir = self.stage_dir(stage, name);
        let path = dir.join(STAGE_MANIFEST);
        if !path.exists() {
            bail!(
                "missing upstream manifest {}; run `megadoc {stage}` first",
                path.display()
            );
        }
        let manifest = read_manifest(&path)?;
        let stale = |why: String| {
            anyhow!(
                "upstream stage {stage}/{name} is stale: {why}; rerun `megadoc {stage}` before this stage"
            )
        };
        self.verify_outputs(&dir, &manifest).map_err(stale)?;
        self.verify_inputs(&manifest).map_err(stale)?;
        Ok(Upstream {
            rel: self.rel(&path),
            sha: sha256_file(&path)?,
            dir,
            manifest,
        })
    }

    pub fn begin(
        &self,
        stage: &'static str,
        name: &str,
        config: Value,
        upstream: &[&Upstream],
    ) -> StageRun<'_> {
        logging::set_stage(&self.root, stage);
        StageRun {
            ws: self,
            stage,
            name: name.to_string(),
            config_hash: config_hash(&config),
            config,
            inputs: upstream.iter().map(|u| (u.rel.clone(), u.sha.clone())).collect(),
            dir: self.stage_dir(stage, name),
            endpoint: None,
        }
    }
}

pub struct StageRun<'a> {
    ws: &'a Workspace,
    pub stage: &'static str,
    pub name: String,
    pub config: Value,
    pub config_hash: String,
    pub inputs: BTreeMap<String, String>,
    pub dir: PathBuf,
    pub endpoint: Option<String>,
}

impl StageRun<'_> {
    /// The stored manifest when config, inputs and outputs all still match.
    pub fn current(&self) -> Option<StageManifest> {
        let m = read_manifest(&self.dir.join(STAGE_MANIFEST)).ok()?;
        let same = m.config_hash == self.config_hash
            && m.inputs == self.inputs
            && self.ws.verify_outputs(&self.dir, &m).is_ok()
            && output_hashes(&self.dir).ok()? == m.outputs;
        same.then_some(m)
    }

    fn finish(&self, dir: &Path, started: f64, clock: Instant) -> Result<StageManifest> {
        let manifest = StageManifest {
            stage: self.stage.to_string(),
            name: self.name.clone(),
            config: self.config.clone(),
            config_hash: self.config_hash.clone(),
            inputs: self.inputs.clone(),
            outputs: output_hashes(dir)?,
        };
        write_atomic(&dir.join(STAGE_MANIFEST), &serde_json::to_vec_pretty(&manifest)?)?;
        let meta = StageMeta {
            started_unix: started,
            finished_unix: unix_now(),
            elapsed_seconds: clock.elapsed().as_secs_f64(),
            endpoint: self.endpoint.clone(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        };
        write_atomic(&dir.join(STAGE_META), &serde_json::to_vec_pretty(&meta)?)?;
        Ok(manifest)
    }

    /// Builds the outputs in a scratch directory and swaps it into place only
    /// on success, so a failed run leaves the previous outputs untouched.
    pub fn run_atomic(self, body: impl FnOnce(&Path) -> Result<()>) -> Result<Outcome> {
        if let Some(m) = self.current() {
            log::info!("{}/{} is up-to-date", self.stage, self.name);
            return Ok(Outcome::UpToDate(m));
        }
        let parent = self.dir.parent().expect("stage dirs have a parent");
        fs::create_dir_all(parent)?;
        let scratch = parent.join(format!(".{}.partial", self.name));
        let old = parent.join(format!(".{}.old", self.name));
        for d in [&scratch, &old] {
            if d.exists() {
                fs::remove_dir_all(d)?;
            }
        }
        fs::create_dir_all(&scratch)?;
        let started = unix_now();
        let clock = Instant::now();
        log::info!("running {}/{}", self.stage, self.name);
        let result = body(&scratch).and_then(|()| self.finish(&scratch, started, clock));
        let manifest = match result {
            Ok(m) => m,
            Err(e) => {
                let _ = fs::remove_dir_all(&scratch);
                log::error!("{}/{} failed: {e:#}", self.stage, self.name);
                return Err(e);
            }
        };
        if self.dir.exists() {
            fs::rename(&self.dir, &old)?;
        }
        fs::rename(&scratch, &self.dir)?;
        if old.exists() {
            fs::remove_dir_all(&old)?;
        }
        log::info!("{}/{} done", self.stage, self.name);
        Ok(Outcome::Ran(manifest))
    }

    /// For resumable stages that keep their own journal in the stage
    /// directory. The manifest is removed first and rewritten only when the
    /// body succeeds.
    pub fn run_in_place(self, body: impl FnOnce(&Path) -> Result<()>) -> Result<Outcome> {
        if let Some(m) = self.current() {
            log::info!("{}/{} is up-to-date", self.stage, self.name);
            return Ok(Outcome::UpToDate(m));
        }
        fs::create_dir_all(&self.dir)?;
        let path = self.dir.join(STAGE_MANIFEST);
        if path.exists() {
            fs::remove_file(&path)?;
        }
        let started = unix_now();
        let clock = Instant::now();
        log::info!("running {}/{}", self.stage, self.name);
        if let Err(e) = body(&self.dir) {
            log::error!("{}/{} failed: {e:#}", self.stage, self.name);
            return Err(e);
        }
        let m = self.finish(&self.dir, started, clock)?;
        log::info!("{}/{} done", self.stage, self.name);
        Ok(Outcome::Ran(m))
    }
}
