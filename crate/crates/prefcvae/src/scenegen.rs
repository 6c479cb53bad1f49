//! Synthetic multi-agent trajectory dataset: generation, I/O, normalization.
//!
//! Scenes hold 1 to 8 agents with 4 history and 12 future frames at 0.5 s.
//! Histories follow one of three kinematic primitives; at the history/future
//! boundary every agent independently redraws its speed regime, so future
//! speed is deliberately not a function of history. That ambiguity is what
//! leaves room for a semantic latent to control predicted velocity.
//!
//! File format: one scene per line as JSON
//! `{scene_id, split, agents:[{agent_id, history:[[x,y]x4], future:[[x,y]x12]}]}`
//! with coordinates printed to 9 significant digits. Coordinates are
//! quantized to that precision at generation time, so files round-trip
//! exactly and regenerate bit-identically from (seed, version).

use crate::rngstream::{Stream, StreamKind};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write as _};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const HISTORY_LEN: usize = 4;
pub const FUTURE_LEN: usize = 12;
/// Frame interval in seconds.
pub const DT: f64 = 0.5;
/// Hard speed clamp in m/s; implies per-frame displacement <= 7.5 m.
pub const SPEED_CAP: f64 = 15.0;
/// Validation bound on consecutive-frame displacement (30 m/s).
pub const MAX_STEP: f64 = 15.0;

pub const GENERATOR_VERSION: &str = "scenegen-1";

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at {path}:{line}: {detail}")]
    Parse { path: PathBuf, line: usize, detail: String },
    #[error("validation error: {detail}")]
    Validation { detail: String },
}

fn io_err(path: &Path, source: std::io::Error) -> SceneError {
    SceneError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.jsonl", self.as_str())
    }
}

/// One agent's observed and ground-truth trajectory, in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTrack {
    pub agent_id: u32,
    pub history: Vec<[f64; 2]>,
    pub future: Vec<[f64; 2]>,
}

impl AgentTrack {
    pub fn validate(&self) -> Result<(), SceneError> {
        if self.history.len() != HISTORY_LEN || self.future.len() != FUTURE_LEN {
            return Err(SceneError::Validation {
                detail: format!(
                    "agent {}: {} history / {} future frames (want {HISTORY_LEN}/{FUTURE_LEN})",
                    self.agent_id,
                    self.history.len(),
                    self.future.len()
                ),
            });
        }
        let all: Vec<[f64; 2]> = self.history.iter().chain(&self.future).copied().collect();
        for pair in all.windows(2) {
            let step = dist(pair[0], pair[1]);
            if !step.is_finite() || step > MAX_STEP {
                return Err(SceneError::Validation {
                    detail: format!("agent {}: frame step {step:.3} m exceeds {MAX_STEP}", self.agent_id),
                });
            }
        }
        Ok(())
    }

    /// Mean speed over the history displacements, m/s.
    pub fn history_speed(&self) -> f64 {
        mean_speed(&self.history)
    }

    /// Mean speed over the future displacements (including the boundary
    /// step from the last history frame), m/s.
    pub fn future_speed(&self) -> f64 {
        let mut pts = Vec::with_capacity(FUTURE_LEN + 1);
        pts.push(*self.history.last().expect("validated"));
        pts.extend_from_slice(&self.future);
        mean_speed(&pts)
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt()
}

fn mean_speed(pts: &[[f64; 2]]) -> f64 {
    let steps = pts.len() - 1;
    pts.windows(2).map(|p| dist(p[0], p[1])).sum::<f64>() / (steps as f64 * DT)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub scene_id: u64,
    pub split: Split,
    pub agents: Vec<AgentTrack>,
}

impl Scene {
    pub fn validate(&self) -> Result<(), SceneError> {
        if self.agents.is_empty() || self.agents.len() > 8 {
            return Err(SceneError::Validation {
                detail: format!("scene {}: {} agents (want 1..=8)", self.scene_id, self.agents.len()),
            });
        }
        let mut ids: Vec<u32> = self.agents.iter().map(|a| a.agent_id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.agents.len() {
            return Err(SceneError::Validation {
                detail: format!("scene {}: duplicate agent ids", self.scene_id),
            });
        }
        for a in &self.agents {
            a.validate()?;
        }
        Ok(())
    }
}

/// Generation parameters; the defaults are the dataset used throughout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub seed: u64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub jitter_sigma: f64,
    pub max_agents: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self { seed: 7, n_train: 2000, n_val: 200, n_test: 200, jitter_sigma: 0.05, max_agents: 8 }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), SceneError> {
        if self.n_train == 0 || self.n_val == 0 || self.n_test == 0 {
            return Err(SceneError::Validation { detail: "scene counts must be >= 1".into() });
        }
        if self.max_agents == 0 || self.max_agents > 8 {
            return Err(SceneError::Validation { detail: "max_agents must be in 1..=8".into() });
        }
        if !(self.jitter_sigma >= 0.0 && self.jitter_sigma.is_finite()) {
            return Err(SceneError::Validation { detail: "jitter_sigma must be finite, >= 0".into() });
        }
        Ok(())
    }

    /// Global scene-id range of a split; ids are unique across splits so
    /// per-scene random streams never collide.
    pub fn id_range(&self, split: Split) -> std::ops::Range<u64> {
        let (t, v) = (self.n_train as u64, self.n_val as u64);
        match split {
            Split::Train => 0..t,
            Split::Val => t..t + v,
            Split::Test => t + v..t + v + self.n_test as u64,
        }
    }
}

pub const PRIMITIVE_WEIGHTS: [f64; 3] = [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0];
pub const FUTURE_MODE_WEIGHTS: [f64; 3] = [0.4, 0.3, 0.3];
pub const FUTURE_MODE_SCALES: [f64; 3] = [1.0, 0.5, 1.5];

/// Sidecar metadata written next to the dataset files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: String,
    pub seed: u64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub jitter_sigma: f64,
    pub max_agents: usize,
    pub primitive_weights: [f64; 3],
    pub future_mode_weights: [f64; 3],
    /// SHA-256 over the train, val, test file bytes, in that order.
    pub digest: String,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<(), SceneError> {
        if self.n_train == 0 || self.n_val == 0 || self.n_test == 0 {
            return Err(SceneError::Validation { detail: "manifest counts must be > 0".into() });
        }
        for (name, w) in [
            ("primitive", &self.primitive_weights),
            ("future mode", &self.future_mode_weights),
        ] {
            let sum: f64 = w.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(SceneError::Validation {
                    detail: format!("{name} weights sum to {sum}, want 1"),
                });
            }
        }
        Ok(())
    }
}

/// Motion primitive governing one agent's whole trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Primitive {
    ConstantVelocity,
    /// Longitudinal acceleration in m/s^2.
    ConstantAccel(f64),
    /// Turn rate in rad/s.
    ConstantTurn(f64),
}

/// Fully-specified inputs of one synthetic track.
#[derive(Debug, Clone, Copy)]
pub struct TrackParams {
    pub spawn: [f64; 2],
    pub heading: f64,
    pub speed: f64,
    pub primitive: Primitive,
    /// Speed multiplier applied once at the history/future boundary.
    pub future_scale: f64,
}

/// Rounds to 9 significant digits, the on-disk precision.
pub fn quantize(x: f64) -> f64 {
    format!("{x:.8e}").parse().expect("formatted float reparses")
}

/// Deterministic kinematic rollout of one agent. `jitter` supplies one
/// pre-drawn position offset per frame (all 16), already scaled.
pub fn synth_track(agent_id: u32, p: &TrackParams, jitter: &[[f64; 2]]) -> AgentTrack {
    assert_eq!(jitter.len(), HISTORY_LEN + FUTURE_LEN);
    let mut pos = p.spawn;
    let mut heading = p.heading;
    let mut speed = p.speed.clamp(0.0, SPEED_CAP);
    let mut frames = Vec::with_capacity(HISTORY_LEN + FUTURE_LEN);
    frames.push(pos);
    for k in 1..HISTORY_LEN + FUTURE_LEN {
        if k == HISTORY_LEN {
            speed = (speed * p.future_scale).clamp(0.0, SPEED_CAP);
        }
        pos[0] += DT * speed * heading.cos();
        pos[1] += DT * speed * heading.sin();
        frames.push(pos);
        match p.primitive {
            Primitive::ConstantVelocity => {}
            Primitive::ConstantAccel(a) => speed = (speed + a * DT).clamp(0.0, SPEED_CAP),
            Primitive::ConstantTurn(w) => heading += w * DT,
        }
    }
    let frames: Vec<[f64; 2]> = frames
        .iter()
        .zip(jitter)
        .map(|(f, j)| [quantize(f[0] + j[0]), quantize(f[1] + j[1])])
        .collect();
    AgentTrack {
        agent_id,
        history: frames[..HISTORY_LEN].to_vec(),
        future: frames[HISTORY_LEN..].to_vec(),
    }
}

/// Synthesizes one scene from its own counter-based stream; callers may
/// build scenes in any order or in parallel and get identical results.
pub fn synth_scene(cfg: &GenConfig, scene_id: u64, split: Split) -> Scene {
    let mut rng = Stream::for_scene(cfg.seed, StreamKind::SceneGen, scene_id);
    let n_agents = 1 + rng.below(cfg.max_agents);
    let mut agents = Vec::with_capacity(n_agents);
    for agent_id in 0..n_agents as u32 {
        let spawn = [rng.uniform(-50.0, 50.0), rng.uniform(-50.0, 50.0)];
        let heading = rng.uniform(0.0, std::f64::consts::TAU);
        let speed = rng.uniform(0.5, 12.0);
        let primitive = match rng.weighted_choice(&PRIMITIVE_WEIGHTS) {
            0 => Primitive::ConstantVelocity,
            1 => Primitive::ConstantAccel(rng.uniform(-1.5, 1.5)),
            _ => Primitive::ConstantTurn(rng.uniform(-0.3, 0.3)),
        };
        let future_scale = FUTURE_MODE_SCALES[rng.weighted_choice(&FUTURE_MODE_WEIGHTS)];
        let jitter: Vec<[f64; 2]> = (0..HISTORY_LEN + FUTURE_LEN)
            .map(|_| {
                [
                    rng.normal(0.0, cfg.jitter_sigma),
                    rng.normal(0.0, cfg.jitter_sigma),
                ]
            })
            .collect();
        let params = TrackParams { spawn, heading, speed, primitive, future_scale };
        agents.push(synth_track(agent_id, &params, &jitter));
    }
    Scene { scene_id, split, agents }
}

fn push_coord_list(out: &mut String, pts: &[[f64; 2]]) {
    out.push('[');
    for (i, p) in pts.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        let _ = write!(out, "[{:.8e},{:.8e}]", p[0], p[1]);
    }
    out.push(']');
}

/// One dataset line; the inverse of parsing in [`load_split`].
pub fn scene_to_line(scene: &Scene) -> String {
    let mut out = String::with_capacity(scene.agents.len() * 600);
    let _ = write!(
        out,
        "{{\"scene_id\":{},\"split\":\"{}\",\"agents\":[",
        scene.scene_id,
        scene.split.as_str()
    );
    for (i, a) in scene.agents.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        let _ = write!(out, "{{\"agent_id\":{},\"history\":", a.agent_id);
        push_coord_list(&mut out, &a.history);
        out.push_str(",\"future\":");
        push_coord_list(&mut out, &a.future);
        out.push('}');
    }
    out.push_str("]}");
    out
}

/// Generates the three split files plus `manifest.json` under `out_dir` and
/// returns the manifest.
pub fn generate(cfg: &GenConfig, out_dir: &Path) -> Result<DatasetManifest, SceneError> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let mut hasher = Sha256::new();
    for split in [Split::Train, Split::Val, Split::Test] {
        let path = out_dir.join(split.file_name());
        let mut body = String::new();
        for scene_id in cfg.id_range(split) {
            let scene = synth_scene(cfg, scene_id, split);
            debug_assert!(scene.validate().is_ok());
            body.push_str(&scene_to_line(&scene));
            body.push('\n');
        }
        hasher.update(body.as_bytes());
        let mut file = std::fs::File::create(&path).map_err(|e| io_err(&path, e))?;
        file.write_all(body.as_bytes()).map_err(|e| io_err(&path, e))?;
    }
    let manifest = DatasetManifest {
        version: GENERATOR_VERSION.to_string(),
        seed: cfg.seed,
        n_train: cfg.n_train,
        n_val: cfg.n_val,
        n_test: cfg.n_test,
        jitter_sigma: cfg.jitter_sigma,
        max_agents: cfg.max_agents,
        primitive_weights: PRIMITIVE_WEIGHTS,
        future_mode_weights: FUTURE_MODE_WEIGHTS,
        digest: format!("{:x}", hasher.finalize()),
    };
    manifest.validate()?;
    let mpath = out_dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| SceneError::Validation { detail: e.to_string() })?;
    std::fs::write(&mpath, text).map_err(|e| io_err(&mpath, e))?;
    Ok(manifest)
}

pub fn load_manifest(dir: &Path) -> Result<DatasetManifest, SceneError> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| SceneError::Parse {
        path: path.clone(),
        line: e.line(),
        detail: e.to_string(),
    })?;
    manifest.validate()?;
    Ok(manifest)
}

/// Loads and validates one split from a dataset directory. Scene ids must
/// be strictly increasing and splits must match the file.
pub fn load_split(dir: &Path, split: Split) -> Result<Vec<Scene>, SceneError> {
    let path = dir.join(split.file_name());
    let file = std::fs::File::open(&path).map_err(|e| io_err(&path, e))?;
    let reader = BufReader::new(file);
    let mut scenes = Vec::new();
    let mut last_id: Option<u64> = None;
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| io_err(&path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let scene: Scene = serde_json::from_str(&line).map_err(|e| SceneError::Parse {
            path: path.clone(),
            line: idx + 1,
            detail: e.to_string(),
        })?;
        scene.validate()?;
        if scene.split != split {
            return Err(SceneError::Validation {
                detail: format!(
                    "scene {} tagged {} inside the {} file",
                    scene.scene_id,
                    scene.split.as_str(),
                    split.as_str()
                ),
            });
        }
        if let Some(prev) = last_id {
            if scene.scene_id <= prev {
                return Err(SceneError::Validation {
                    detail: format!("scene ids not increasing at {}:{}", path.display(), idx + 1),
                });
            }
        }
        last_id = Some(scene.scene_id);
        scenes.push(scene);
    }
    if scenes.is_empty() {
        return Err(SceneError::Validation { detail: format!("no scenes in {}", path.display()) });
    }
    Ok(scenes)
}

/// Hash of the three split files, for manifest verification.
pub fn dataset_digest(dir: &Path) -> Result<String, SceneError> {
    let mut hasher = Sha256::new();
    for split in [Split::Train, Split::Val, Split::Test] {
        let path = dir.join(split.file_name());
        let bytes = std::fs::read(&path).map_err(|e| io_err(&path, e))?;
        hasher.update(&bytes);
    }
    Ok(format!("{:x}", hasher.finalize()))
}

/// Rigid transform from world frame to an agent's canonical frame (last
/// history point at the origin, last history heading along +x).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub origin: [f64; 2],
    pub angle: f64,
    /// Heading was unrecoverable (no recent displacement); +x assumed.
    pub degenerate: bool,
}

impl RigidTransform {
    pub fn to_local(&self, p: [f64; 2]) -> [f64; 2] {
        let (dx, dy) = (p[0] - self.origin[0], p[1] - self.origin[1]);
        let (s, c) = self.angle.sin_cos();
        [c * dx + s * dy, -s * dx + c * dy]
    }

    pub fn to_world(&self, q: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.angle.sin_cos();
        [
            c * q[0] - s * q[1] + self.origin[0],
            s * q[0] + c * q[1] + self.origin[1],
        ]
    }
}

/// One agent expressed in its canonical frame.
#[derive(Debug, Clone)]
pub struct NormalizedAgent {
    pub agent_id: u32,
    pub history: Vec<[f64; 2]>,
    pub future: Vec<[f64; 2]>,
    pub transform: RigidTransform,
}

#[derive(Debug, Clone)]
pub struct NormalizedScene {
    pub scene_id: u64,
    pub agents: Vec<NormalizedAgent>,
}

/// Canonicalizes every agent of a scene and records the inverse transforms.
pub fn normalize(scene: &Scene) -> NormalizedScene {
    let agents = scene
        .agents
        .iter()
        .map(|a| {
            let origin = a.history[HISTORY_LEN - 1];
            let prev = a.history[HISTORY_LEN - 2];
            let (dx, dy) = (origin[0] - prev[0], origin[1] - prev[1]);
            let norm = (dx * dx + dy * dy).sqrt();
            let degenerate = norm < 1e-9;
            let angle = if degenerate { 0.0 } else { dy.atan2(dx) };
            let transform = RigidTransform { origin, angle, degenerate };
            NormalizedAgent {
                agent_id: a.agent_id,
                history: a.history.iter().map(|&p| transform.to_local(p)).collect(),
                future: a.future.iter().map(|&p| transform.to_local(p)).collect(),
                transform,
            }
        })
        .collect();
    NormalizedScene { scene_id: scene.scene_id, agents }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> GenConfig {
        GenConfig { seed: 42, n_train: 12, n_val: 3, n_test: 3, ..GenConfig::default() }
    }

    #[test]
    fn generation_is_byte_deterministic() {
        let cfg = small_cfg();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let m1 = generate(&cfg, d1.path()).unwrap();
        let m2 = generate(&cfg, d2.path()).unwrap();
        assert_eq!(m1.digest, m2.digest);
        for split in [Split::Train, Split::Val, Split::Test] {
            let b1 = std::fs::read(d1.path().join(split.file_name())).unwrap();
            let b2 = std::fs::read(d2.path().join(split.file_name())).unwrap();
            assert_eq!(b1, b2);
        }
        assert_eq!(dataset_digest(d1.path()).unwrap(), m1.digest);
    }

    #[test]
    fn constant_velocity_track_steps_exactly() {
        let params = TrackParams {
            spawn: [3.0, -2.0],
            heading: 0.7,
            speed: 2.0,
            primitive: Primitive::ConstantVelocity,
            future_scale: 1.0,
        };
        let zeros = vec![[0.0, 0.0]; HISTORY_LEN + FUTURE_LEN];
        let track = synth_track(0, &params, &zeros);
        let all: Vec<[f64; 2]> = track.history.iter().chain(&track.future).copied().collect();
        for pair in all.windows(2) {
            // 2 m/s over 0.5 s; tolerance covers 9-digit quantization.
            assert!((dist(pair[0], pair[1]) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn future_mode_rescales_speed_at_the_boundary() {
        let params = TrackParams {
            spawn: [0.0, 0.0],
            heading: 0.0,
            speed: 4.0,
            primitive: Primitive::ConstantVelocity,
            future_scale: 0.5,
        };
        let zeros = vec![[0.0, 0.0]; HISTORY_LEN + FUTURE_LEN];
        let track = synth_track(0, &params, &zeros);
        assert!((track.history_speed() - 4.0).abs() < 1e-6);
        assert!((track.future_speed() - 2.0).abs() < 1e-6);
    }

    #[test]
    fn speed_ratio_distribution_clusters_at_the_three_modes() {
        let cfg = GenConfig { seed: 9, n_train: 1, n_val: 1, n_test: 600, ..GenConfig::default() };
        let mut ratios = Vec::new();
        for scene_id in cfg.id_range(Split::Test) {
            let scene = synth_scene(&cfg, scene_id, Split::Test);
            for a in &scene.agents {
                let h = a.history_speed();
                if h > 0.3 {
                    ratios.push(a.future_speed() / h);
                }
            }
        }
        assert!(ratios.len() > 2000, "want > 2000 agents, got {}", ratios.len());
        let near = |m: f64| ratios.iter().filter(|&&r| (r - m).abs() < 0.05).count() as f64
            / ratios.len() as f64;
        assert!(near(0.5) > 0.08, "mass near 0.5: {}", near(0.5));
        assert!(near(1.0) > 0.10, "mass near 1.0: {}", near(1.0));
        assert!(near(1.5) > 0.06, "mass near 1.5: {}", near(1.5));
    }

    #[test]
    fn future_speed_is_ambiguous_given_history() {
        let cfg = GenConfig { seed: 3, n_train: 1, n_val: 1, n_test: 400, ..GenConfig::default() };
        let mut bucket = Vec::new();
        for scene_id in cfg.id_range(Split::Test) {
            let scene = synth_scene(&cfg, scene_id, Split::Test);
            for a in &scene.agents {
                if (a.history_speed() - 6.0).abs() <= 0.1 {
                    bucket.push(a.future_speed());
                }
            }
        }
        assert!(bucket.len() >= 10, "bucket too small: {}", bucket.len());
        let span = bucket.iter().cloned().fold(f64::MIN, f64::max)
            - bucket.iter().cloned().fold(f64::MAX, f64::min);
        assert!(span >= 3.0, "future speed span {span} for near-identical histories");
    }

    #[test]
    fn files_round_trip_exactly() {
        let cfg = small_cfg();
        let dir = tempfile::tempdir().unwrap();
        generate(&cfg, dir.path()).unwrap();
        for split in [Split::Train, Split::Val, Split::Test] {
            let loaded = load_split(dir.path(), split).unwrap();
            let expected: Vec<Scene> =
                cfg.id_range(split).map(|id| synth_scene(&cfg, id, split)).collect();
            assert_eq!(loaded, expected);
        }
    }

    #[test]
    fn truncated_line_reports_its_number() {
        let cfg = small_cfg();
        let dir = tempfile::tempdir().unwrap();
        generate(&cfg, dir.path()).unwrap();
        let path = dir.path().join(Split::Val.file_name());
        let mut text = std::fs::read_to_string(&path).unwrap();
        let keep = text.lines().next().unwrap().len() + 1 + 40;
        text.truncate(keep);
        std::fs::write(&path, text).unwrap();
        match load_split(dir.path(), Split::Val) {
            Err(SceneError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_a_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join(Split::Test.file_name()), "").unwrap();
        match load_split(dir.path(), Split::Test) {
            Err(SceneError::Validation { detail }) => assert!(detail.contains("no scenes")),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn wrong_split_tag_is_rejected() {
        let cfg = small_cfg();
        let dir = tempfile::tempdir().unwrap();
        generate(&cfg, dir.path()).unwrap();
        let train = std::fs::read_to_string(dir.path().join(Split::Train.file_name())).unwrap();
        std::fs::write(dir.path().join(Split::Val.file_name()), train).unwrap();
        assert!(matches!(load_split(dir.path(), Split::Val), Err(SceneError::Validation { .. })));
    }

    #[test]
    fn normalize_puts_agents_in_canonical_pose() {
        // Heading due north: last history displacement along +y.
        let agent = AgentTrack {
            agent_id: 0,
            history: vec![[5.0, 0.0], [5.0, 1.0], [5.0, 2.0], [5.0, 3.0]],
            future: (0..FUTURE_LEN as i32).map(|k| [5.0, 4.0 + k as f64]).collect(),
        };
        let scene = Scene { scene_id: 0, split: Split::Test, agents: vec![agent] };
        let norm = normalize(&scene);
        let a = &norm.agents[0];
        assert!(!a.transform.degenerate);
        assert!((a.transform.angle - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        // Last history point at origin, motion continues along +x.
        assert!(a.history[3][0].abs() < 1e-12 && a.history[3][1].abs() < 1e-12);
        assert!((a.future[0][0] - 1.0).abs() < 1e-12);
        assert!(a.future[0][1].abs() < 1e-12);
    }

    #[test]
    fn already_canonical_agent_gets_identity_transform() {
        let agent = AgentTrack {
            agent_id: 0,
            history: vec![[-3.0, 0.0], [-2.0, 0.0], [-1.0, 0.0], [0.0, 0.0]],
            future: (1..=FUTURE_LEN as i32).map(|k| [k as f64, 0.0]).collect(),
        };
        let scene = Scene { scene_id: 0, split: Split::Test, agents: vec![agent.clone()] };
        let norm = normalize(&scene);
        let a = &norm.agents[0];
        assert_eq!(a.transform.origin, [0.0, 0.0]);
        assert_eq!(a.transform.angle, 0.0);
        assert_eq!(a.history, agent.history);
    }

    #[test]
    fn stationary_history_falls_back_to_x_axis() {
        let agent = AgentTrack {
            agent_id: 0,
            history: vec![[1.0, 1.0]; HISTORY_LEN],
            future: vec![[1.0, 1.0]; FUTURE_LEN],
        };
        let scene = Scene { scene_id: 0, split: Split::Test, agents: vec![agent] };
        let norm = normalize(&scene);
        assert!(norm.agents[0].transform.degenerate);
        assert_eq!(norm.agents[0].transform.angle, 0.0);
    }

    #[test]
    fn transforms_invert_to_original_positions() {
        let cfg = small_cfg();
        let scene = synth_scene(&cfg, 7, Split::Train);
        let norm = normalize(&scene);
        for (a, na) in scene.agents.iter().zip(&norm.agents) {
            for (p, q) in a.future.iter().zip(&na.future) {
                let back = na.transform.to_world(*q);
                assert!((back[0] - p[0]).abs() < 1e-9);
                assert!((back[1] - p[1]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn generated_scenes_satisfy_track_invariants() {
        let cfg = small_cfg();
        for id in cfg.id_range(Split::Train) {
            synth_scene(&cfg, id, Split::Train).validate().unwrap();
        }
    }
}
