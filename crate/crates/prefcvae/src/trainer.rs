//! Deterministic training: Adam, the per-scene step loop, epoch logging,
//! best-validation tracking, and the multi-seed protocol.
//!
//! Every random draw comes from a named stream keyed by (run seed, stream
//! kind, epoch, scene id), so a (dataset, config, seed) triple reproduces
//! every logged number exactly. One scene is one optimization step.

use crate::evalsuite::EvalReport;
use crate::model::{ModelConfig, ModelError, ParamSet, PredictorModel};
use crate::prefloss::{
    sample_scene_pair, total_loss, LossDraws, PrefConfig, PrefError, VARIETY_K,
};
use crate::rngstream::{Stream, StreamKind};
use crate::scenegen::{normalize, Scene};
use crate::tensorgraph::{Graph, Tensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training configuration error: {detail}")]
    Config { detail: String },
    #[error("dataset split is empty")]
    EmptyDataset,
    #[error("numeric failure at epoch {epoch}, scene {scene_id}: {detail}")]
    Numeric {
        epoch: usize,
        scene_id: u64,
        detail: String,
        /// Parameters as of the last completed epoch.
        last_good: Box<PredictorModel>,
    },
    #[error("all seeds failed: {detail}")]
    AllSeedsFailed { detail: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seeds: Vec<u64>,
    pub pref: PrefConfig,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seeds: vec![1, 2, 3],
            pref: PrefConfig::default(),
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::Config { detail: "epochs must be >= 1".into() });
        }
        if !(self.learning_rate > 0.0) {
            return Err(TrainError::Config {
                detail: format!("learning rate {} must be > 0", self.learning_rate),
            });
        }
        for (name, b) in [("beta1", self.adam_beta1), ("beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(TrainError::Config { detail: format!("adam {name} = {b} outside [0,1)") });
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(TrainError::Config { detail: "adam eps must be > 0".into() });
        }
        if self.seeds.is_empty() {
            return Err(TrainError::Config { detail: "need at least one seed".into() });
        }
        self.model.validate()?;
        self.pref.validate().map_err(|e| TrainError::Config { detail: e.to_string() })?;
        Ok(())
    }
}

/// Short hex digest identifying a (training config, dataset, seed) cell;
/// keys sweep resumability and report rows.
pub fn config_digest(cfg: &TrainConfig, dataset_digest: &str, seed: u64) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_string(cfg).expect("config serializes").as_bytes());
    h.update(dataset_digest.as_bytes());
    h.update(seed.to_le_bytes());
    let hex: String = h.finalize().iter().map(|b| format!("{b:02x}")).collect();
    hex[..16].to_string()
}

/// Adam with bias correction; steps with any non-finite gradient are
/// skipped wholesale and counted.
pub struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
    pub skipped: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(params: &ParamSet, cfg: &TrainConfig) -> Self {
        let sizes: Vec<usize> = params.tensors().iter().map(|(_, t)| t.data.len()).collect();
        Adam {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
            skipped: 0,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
        }
    }

    /// Applies one update; `grads` follows the canonical tensor order, with
    /// `None` meaning "no gradient path" (treated as zero). Returns whether
    /// the step was applied.
    pub fn step(
        &mut self,
        params: &mut ParamSet,
        grads: &[Option<Tensor>],
        lr: f64,
    ) -> Result<bool, TrainError> {
        let mut tensors = params.tensors_mut();
        if tensors.len() != grads.len() || tensors.len() != self.m.len() {
            return Err(TrainError::Config {
                detail: format!("gradient count {} != parameter count {}", grads.len(), tensors.len()),
            });
        }
        for (t, g) in tensors.iter().zip(grads) {
            if let Some(g) = g {
                if g.data.len() != t.data.len() {
                    return Err(TrainError::Config {
                        detail: format!("gradient shape {:?} != parameter shape {:?}", g.shape, t.shape),
                    });
                }
                if !g.is_finite() {
                    self.skipped += 1;
                    eprintln!("warning: non-finite gradient, step skipped (total {})", self.skipped);
                    return Ok(false);
                }
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (k, t) in tensors.iter_mut().enumerate() {
            let zero_len = t.data.len();
            let g_data: &[f64] = grads[k].as_ref().map(|g| g.data.as_slice()).unwrap_or(&[]);
            for i in 0..zero_len {
                let g = if g_data.is_empty() { 0.0 } else { g_data[i] };
                self.m[k][i] = self.beta1 * self.m[k][i] + (1.0 - self.beta1) * g;
                self.v[k][i] = self.beta2 * self.v[k][i] + (1.0 - self.beta2) * g * g;
                let mh = self.m[k][i] / bc1;
                let vh = self.v[k][i] / bc2;
                t.data[i] -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(true)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean per-step base objective (ELBO + variety).
    pub base_loss: f64,
    /// Mean per-step unweighted preference loss; zero on gated-off steps.
    pub pref_loss: f64,
    /// Fraction of steps whose gate fired this epoch.
    pub gate_fraction: f64,
    /// Deterministic base loss on the validation split.
    pub val_loss: f64,
}

pub fn log_to_csv(log: &[EpochLog]) -> String {
    let mut s = String::from("epoch,base_loss,pref_loss,gate_fraction,val_loss\n");
    for e in log {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            e.epoch, e.base_loss, e.pref_loss, e.gate_fraction, e.val_loss
        );
    }
    s
}

pub struct TrainOutcome {
    pub final_model: PredictorModel,
    pub best_model: PredictorModel,
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
    /// Gate activation fraction over the whole run.
    pub gate_fraction: f64,
    pub skipped_steps: u64,
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Deterministic base loss (ELBO + variety, no preference term) over a
/// split, for validation tracking.
pub fn base_loss(
    model: &PredictorModel,
    scenes: &[Scene],
    seed: u64,
    epoch: usize,
) -> Result<f64, TrainError> {
    if scenes.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut sum = 0.0;
    for scene in scenes {
        let ns = normalize(scene);
        let mut rng = Stream::for_scene(epoch_seed(seed, epoch), StreamKind::Eval, scene.scene_id);
        let a = ns.agents.len();
        let m = model.config.latent.m_total;
        let value = (|| -> Result<f64, String> {
            let mut g = Graph::new();
            let pn = model.insert_params(&mut g).map_err(|e| e.to_string())?;
            let sn = model.encode_scene(&mut g, &pn, &ns).map_err(|e| e.to_string())?;
            let u_post: Vec<f64> = (0..a * m).map(|_| rng.u01()).collect();
            let parts =
                model.elbo_loss(&mut g, &pn, &ns, &sn, &u_post).map_err(|e| e.to_string())?;
            let variety_z = model
                .sample_prior_latents(&g, &sn, VARIETY_K, &mut rng)
                .map_err(|e| e.to_string())?;
            let variety = model
                .variety_loss(&mut g, &pn, &ns, sn.ctx, &variety_z)
                .map_err(|e| e.to_string())?;
            Ok(g.scalar_value(parts.elbo) + g.scalar_value(variety))
        })()
        .map_err(|detail| TrainError::Numeric {
            epoch,
            scene_id: scene.scene_id,
            detail,
            last_good: Box::new(model.clone()),
        })?;
        sum += value;
    }
    Ok(sum / scenes.len() as f64)
}

/// Trains one model. Scene order is reshuffled every epoch; each step draws
/// posterior noise, variety latents, the use-rate gate, and (when the gate
/// fires) a preference pair from independent per-scene streams.
pub fn train(
    train_scenes: &[Scene],
    val_scenes: &[Scene],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if train_scenes.is_empty() || val_scenes.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut model = PredictorModel::new(cfg.model.clone(), seed)?;
    let mut adam = Adam::new(&model.params, cfg);
    let mut order_rng = Stream::new(seed, StreamKind::DataOrder);
    let mut last_good = model.clone();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, PredictorModel)> = None;
    let mut gates_total = 0u64;
    let mut steps_total = 0u64;
    let m = cfg.model.latent.m_total;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_scenes.len()).collect();
        order_rng.shuffle(&mut order);
        let es = epoch_seed(seed, epoch);
        let mut base_sum = 0.0;
        let mut pref_sum = 0.0;
        let mut gates = 0u64;

        for &si in &order {
            let scene = &train_scenes[si];
            let ns = normalize(scene);
            let a = ns.agents.len();
            let mut post_rng = Stream::for_scene(es, StreamKind::PosteriorSampling, scene.scene_id);
            let mut var_rng = Stream::for_scene(es, StreamKind::VarietySampling, scene.scene_id);
            let mut pair_rng = Stream::for_scene(es, StreamKind::PreferencePair, scene.scene_id);
            let mut gate_rng = Stream::for_scene(es, StreamKind::Gate, scene.scene_id);

            let step = (|| -> Result<(f64, f64, bool, Vec<Option<Tensor>>), String> {
                let mut g = Graph::new();
                let pn = model.insert_params(&mut g).map_err(|e| e.to_string())?;
                let sn = model.encode_scene(&mut g, &pn, &ns).map_err(|e| e.to_string())?;
                let u_post: Vec<f64> = (0..a * m).map(|_| post_rng.u01()).collect();
                let variety_z = model
                    .sample_prior_latents(&g, &sn, VARIETY_K, &mut var_rng)
                    .map_err(|e| e.to_string())?;
                let gate = gate_rng.bernoulli(cfg.pref.use_rate);
                let pair = gate
                    .then(|| sample_scene_pair(&model.config.latent, a, &mut pair_rng));
                let draws = LossDraws { u_post, variety_z, pair };
                let parts = total_loss(&model, &mut g, &pn, &ns, &sn, &cfg.pref, &draws)
                    .map_err(|e: PrefError| e.to_string())?;
                g.backward(parts.total).map_err(|e| e.to_string())?;
                let base = g.scalar_value(parts.elbo) + g.scalar_value(parts.variety);
                let pref = parts.pref.as_ref().map_or(0.0, |p| g.scalar_value(p.loss));
                let grads = pn.node_list().iter().map(|&id| g.grad(id).cloned()).collect();
                Ok((base, pref, parts.gate, grads))
            })()
            .map_err(|detail| TrainError::Numeric {
                epoch,
                scene_id: scene.scene_id,
                detail,
                last_good: Box::new(last_good.clone()),
            })?;

            let (base, pref, gate, grads) = step;
            adam.step(&mut model.params, &grads, cfg.learning_rate)?;
            base_sum += base;
            pref_sum += pref;
            gates += gate as u64;
            steps_total += 1;
        }
        gates_total += gates;

        let val_loss = base_loss(&model, val_scenes, seed, epoch)?;
        let n = order.len() as f64;
        log.push(EpochLog {
            epoch,
            base_loss: base_sum / n,
            pref_loss: pref_sum / n,
            gate_fraction: gates as f64 / n,
            val_loss,
        });
        if best.as_ref().is_none_or(|(b, _, _)| val_loss < *b) {
            best = Some((val_loss, epoch, model.clone()));
        }
        last_good = model.clone();
    }

    let (_, best_epoch, best_model) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        final_model: model,
        best_model,
        best_epoch,
        log,
        gate_fraction: if steps_total == 0 { 0.0 } else { gates_total as f64 / steps_total as f64 },
        skipped_steps: adam.skipped,
    })
}

/// Per-metric mean or standard deviation across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub min_ade5: f64,
    pub min_fde5: f64,
    pub sw_vr: f64,
    pub mbw_vr: f64,
    pub aw_vr: f64,
    pub vel_range: f64,
    pub avg_jsd: f64,
    pub mode_loglik: f64,
    pub mode_deviation: f64,
}

fn metric_vector(r: &EvalReport) -> [f64; 9] {
    [
        r.min_ade5,
        r.min_fde5,
        r.sw_vr,
        r.mbw_vr,
        r.aw_vr,
        r.vel_range,
        r.avg_jsd,
        r.mode_loglik,
        r.mode_deviation,
    ]
}

fn stats_from(values: [f64; 9]) -> MetricStats {
    MetricStats {
        min_ade5: values[0],
        min_fde5: values[1],
        sw_vr: values[2],
        mbw_vr: values[3],
        aw_vr: values[4],
        vel_range: values[5],
        avg_jsd: values[6],
        mode_loglik: values[7],
        mode_deviation: values[8],
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateReport {
    pub reports: Vec<EvalReport>,
    /// Lowest agent-wise VR, ties broken by minADE5.
    pub best: EvalReport,
    pub mean: MetricStats,
    /// Population standard deviation across seeds.
    pub std: MetricStats,
    pub failures: Vec<(u64, String)>,
}

/// Selects the best report (minimum AW VR, then minimum minADE5) and
/// computes mean/std per metric.
pub fn aggregate_reports(
    reports: Vec<EvalReport>,
    failures: Vec<(u64, String)>,
) -> Result<AggregateReport, TrainError> {
    if reports.is_empty() {
        return Err(TrainError::AllSeedsFailed {
            detail: failures
                .iter()
                .map(|(s, e)| format!("seed {s}: {e}"))
                .collect::<Vec<_>>()
                .join("; "),
        });
    }
    let best = reports
        .iter()
        .min_by(|a, b| {
            (a.aw_vr, a.min_ade5)
                .partial_cmp(&(b.aw_vr, b.min_ade5))
                .unwrap_or(std::cmp::Ordering::Equal)
        })
        .expect("nonempty")
        .clone();
    let n = reports.len() as f64;
    let mut mean = [0.0; 9];
    for r in &reports {
        for (acc, v) in mean.iter_mut().zip(metric_vector(r)) {
            *acc += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= n);
    let mut var = [0.0; 9];
    for r in &reports {
        for ((acc, v), mu) in var.iter_mut().zip(metric_vector(r)).zip(mean) {
            *acc += (v - mu) * (v - mu);
        }
    }
    let std = var.map(|v| (v / n).sqrt());
    Ok(AggregateReport { reports, best, mean: stats_from(mean), std: stats_from(std), failures })
}

/// Runs `run_seed` for every seed, collecting failures per seed and
/// aggregating the survivors.
pub fn seed_protocol<F>(seeds: &[u64], mut run_seed: F) -> Result<AggregateReport, TrainError>
where
    F: FnMut(u64) -> Result<EvalReport, String>,
{
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for &seed in seeds {
        match run_seed(seed) {
            Ok(r) => reports.push(r),
            Err(e) => failures.push((seed, e)),
        }
    }
    aggregate_reports(reports, failures)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenegen::{AgentTrack, Split, DT, FUTURE_LEN, HISTORY_LEN};
    use approx::assert_abs_diff_eq;

    fn tiny_config(epochs: usize, use_rate: f64) -> TrainConfig {
        TrainConfig {
            epochs,
            pref: PrefConfig { use_rate, ..PrefConfig::default() },
            model: ModelConfig {
                hidden: 6,
                depth: 1,
                pool_dim: 3,
                future_dim: 3,
                decoder_hidden: 6,
                decoder_depth: 1,
                ..ModelConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    fn toy_scenes(n: usize, agents: u32) -> Vec<Scene> {
        (0..n)
            .map(|id| {
                let agents = (0..agents)
                    .map(|i| {
                        let speed = 1.0 + 0.5 * i as f64 + 0.2 * (id % 5) as f64;
                        let step = speed * DT;
                        let y = 5.0 * i as f64;
                        let hist: Vec<[f64; 2]> =
                            (0..HISTORY_LEN).map(|k| [step * (k as f64 - 3.0), y]).collect();
                        let fut: Vec<[f64; 2]> =
                            (1..=FUTURE_LEN).map(|k| [step * k as f64, y]).collect();
                        AgentTrack { agent_id: i, history: hist, future: fut }
                    })
                    .collect();
                Scene { scene_id: id as u64, split: Split::Train, agents }
            })
            .collect()
    }

    fn one_param_setup() -> (ParamSet, Vec<Option<Tensor>>) {
        let cfg = tiny_config(1, 1.0);
        let params = PredictorModel::new(cfg.model.clone(), 1).unwrap().params;
        let n = params.tensors().len();
        (params, vec![None; n])
    }

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let cfg = tiny_config(1, 1.0);
        let (mut params, mut grads) = one_param_setup();
        for (i, (_, t)) in params.tensors().iter().enumerate() {
            grads[i] = Some(Tensor::zeros(t.shape.clone()));
        }
        let before = params.clone();
        let mut adam = Adam::new(&params, &cfg);
        assert!(adam.step(&mut params, &grads, 1e-3).unwrap());
        assert_eq!(params, before);
    }

    #[test]
    fn first_step_with_unit_gradient_moves_by_the_learning_rate() {
        let cfg = tiny_config(1, 1.0);
        let (mut params, mut grads) = one_param_setup();
        let shape = params.tensors()[0].1.shape.clone();
        let ones = vec![1.0; params.tensors()[0].1.data.len()];
        grads[0] = Some(Tensor { shape, data: ones, requires_grad: false });
        let before = params.tensors()[0].1.data[0];
        let mut adam = Adam::new(&params, &cfg);
        adam.step(&mut params, &grads, 1e-3).unwrap();
        let delta = params.tensors()[0].1.data[0] - before;
        assert_abs_diff_eq!(delta, -1e-3, epsilon = 1e-9);
    }

    #[test]
    fn constant_gradients_converge_to_sign_steps() {
        let cfg = tiny_config(1, 1.0);
        let (mut params, mut grads) = one_param_setup();
        let n = params.tensors()[0].1.data.len();
        let shape = params.tensors()[0].1.shape.clone();
        grads[0] = Some(Tensor { shape, data: vec![0.7; n], requires_grad: false });
        let mut adam = Adam::new(&params, &cfg);
        let mut last = params.tensors()[0].1.data[0];
        let mut delta = 0.0;
        for _ in 0..5000 {
            adam.step(&mut params, &grads, 1e-3).unwrap();
            let now = params.tensors()[0].1.data[0];
            delta = now - last;
            last = now;
        }
        assert_abs_diff_eq!(delta, -1e-3, epsilon = 1e-5);
    }

    #[test]
    fn non_finite_gradients_skip_the_step() {
        let cfg = tiny_config(1, 1.0);
        let (mut params, mut grads) = one_param_setup();
        let n = params.tensors()[0].1.data.len();
        let shape = params.tensors()[0].1.shape.clone();
        let mut data = vec![1.0; n];
        data[0] = f64::NAN;
        grads[0] = Some(Tensor { shape, data, requires_grad: false });
        let before = params.clone();
        let mut adam = Adam::new(&params, &cfg);
        assert!(!adam.step(&mut params, &grads, 1e-3).unwrap());
        assert_eq!(params, before);
        assert_eq!(adam.skipped, 1);
    }

    #[test]
    fn training_twice_with_one_seed_is_bit_identical() {
        let cfg = tiny_config(2, 1.0);
        let scenes = toy_scenes(6, 2);
        let val = toy_scenes(2, 1);
        let a = train(&scenes, &val, &cfg, 7).unwrap();
        let b = train(&scenes, &val, &cfg, 7).unwrap();
        assert_eq!(a.final_model.params, b.final_model.params);
        assert_eq!(a.log, b.log);
        assert_eq!(a.best_epoch, b.best_epoch);
    }

    #[test]
    fn zero_use_rate_never_logs_preference_loss() {
        let cfg = tiny_config(3, 0.0);
        let scenes = toy_scenes(5, 2);
        let val = toy_scenes(2, 1);
        let out = train(&scenes, &val, &cfg, 3).unwrap();
        assert_eq!(out.gate_fraction, 0.0);
        for e in &out.log {
            assert_eq!(e.pref_loss, 0.0);
            assert_eq!(e.gate_fraction, 0.0);
        }
    }

    #[test]
    fn gate_fraction_concentrates_around_the_use_rate() {
        // 100 scenes x 100 epochs = 10^4 Bernoulli(0.25) draws.
        let cfg = tiny_config(100, 0.25);
        let scenes = toy_scenes(100, 1);
        let val = toy_scenes(1, 1);
        let out = train(&scenes, &val, &cfg, 11).unwrap();
        assert!(
            (out.gate_fraction - 0.25).abs() <= 0.02,
            "gate fraction {} strays from 0.25",
            out.gate_fraction
        );
    }

    #[test]
    fn best_checkpoint_tracks_the_validation_minimum() {
        let cfg = tiny_config(4, 1.0);
        let scenes = toy_scenes(6, 2);
        let val = toy_scenes(3, 2);
        let out = train(&scenes, &val, &cfg, 5).unwrap();
        let best_val = out.log.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(out.log[out.best_epoch].val_loss, best_val);
        let recomputed = base_loss(&out.best_model, &val, 5, out.best_epoch).unwrap();
        assert_eq!(recomputed, out.log[out.best_epoch].val_loss);
    }

    #[test]
    fn log_csv_has_one_row_per_epoch() {
        let cfg = tiny_config(2, 1.0);
        let scenes = toy_scenes(4, 1);
        let val = toy_scenes(1, 1);
        let out = train(&scenes, &val, &cfg, 2).unwrap();
        let csv = log_to_csv(&out.log);
        assert_eq!(csv.lines().count(), 1 + cfg.epochs);
        assert!(csv.starts_with("epoch,base_loss,pref_loss,gate_fraction,val_loss"));
    }

    fn synthetic_report(seed: u64, aw: f64, ade: f64) -> EvalReport {
        EvalReport {
            seed,
            config_digest: "d".into(),
            min_ade5: ade,
            min_fde5: 2.0 * ade,
            sw_vr: aw * 3.0,
            mbw_vr: aw * 2.0,
            aw_vr: aw,
            vel_min: 1.0,
            vel_max: 3.0,
            vel_range: 2.0,
            monotone: true,
            per_z_velocity: vec![0.0; 9],
            avg_jsd: 0.4,
            mode_loglik: 1.0,
            mode_deviation: 0.1,
        }
    }

    #[test]
    fn aggregation_matches_hand_computed_mean_and_std() {
        let reports = vec![
            synthetic_report(1, 2.0, 0.5),
            synthetic_report(2, 4.0, 0.4),
            synthetic_report(3, 6.0, 0.6),
        ];
        let agg = aggregate_reports(reports, Vec::new()).unwrap();
        assert_eq!(agg.best.seed, 1);
        assert_abs_diff_eq!(agg.mean.aw_vr, 4.0, epsilon = 1e-12);
        // Population std of {2, 4, 6} is sqrt(8/3).
        assert_abs_diff_eq!(agg.std.aw_vr, (8.0f64 / 3.0).sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(agg.mean.min_ade5, 0.5, epsilon = 1e-12);
        assert!(agg.best.aw_vr <= agg.mean.aw_vr);
    }

    #[test]
    fn identical_reports_have_zero_spread_and_ties_break_on_ade() {
        let reports = vec![
            synthetic_report(1, 3.0, 0.7),
            synthetic_report(2, 3.0, 0.5),
            synthetic_report(3, 3.0, 0.9),
        ];
        let agg = aggregate_reports(reports, Vec::new()).unwrap();
        assert_eq!(agg.best.seed, 2);
        assert_abs_diff_eq!(agg.std.aw_vr, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn seed_protocol_survives_partial_failures_but_not_total_ones() {
        let agg = seed_protocol(&[1, 2, 3], |s| {
            if s == 2 {
                Err("boom".into())
            } else {
                Ok(synthetic_report(s, s as f64, 0.5))
            }
        })
        .unwrap();
        assert_eq!(agg.reports.len(), 2);
        assert_eq!(agg.failures, vec![(2, "boom".to_string())]);
        assert_eq!(agg.best.seed, 1);

        let err = seed_protocol(&[1], |_| Err("nope".into()));
        assert!(matches!(err, Err(TrainError::AllSeedsFailed { .. })));
    }

    #[test]
    fn digests_separate_configs_and_seeds() {
        let a = tiny_config(1, 1.0);
        let mut b = a.clone();
        b.pref.lambda = 32.0;
        let d1 = config_digest(&a, "data", 1);
        let d2 = config_digest(&b, "data", 1);
        let d3 = config_digest(&a, "data", 2);
        let d4 = config_digest(&a, "other", 1);
        assert_eq!(d1.len(), 16);
        assert_ne!(d1, d2);
        assert_ne!(d1, d3);
        assert_ne!(d1, d4);
        assert_eq!(d1, config_digest(&a, "data", 1));
    }
}
