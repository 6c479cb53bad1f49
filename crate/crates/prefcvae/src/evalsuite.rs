//! Evaluation protocol: accuracy, violation rates, latent traversal,
//! posterior re-encoding quality, and cross-model encoder/decoder tests.
//!
//! Everything is deterministic given (model, dataset, seed): each operation
//! derives its own per-scene random stream, so consuming draws in one
//! metric never shifts another. All geometry lives in the per-agent
//! normalized frame; distances and speeds are rigid-invariant, so reported
//! numbers equal their world-frame counterparts.

use crate::betalat::{
    fit_mle, fit_moments, inv_inc_beta, log_pdf_scalar, mode_scalar, BetaError,
};
use crate::model::{ModelError, ParamNodes, PredictorModel, SceneNodes};
use crate::prefloss::avg_speed_positions;
use crate::rngstream::{Stream, StreamKind};
use crate::scenegen::{normalize, NormalizedScene, Scene, FUTURE_LEN};
use crate::tensorgraph::{Graph, Tensor, TensorError};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use thiserror::Error;

/// Semantic-slot pins used by traversal, violation rates and re-encoding.
pub const TRAVERSAL_GRID: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

/// Scene-group size emulating scene-wise aggregation over minibatches.
pub const GROUP_SIZE: usize = 22;

/// Best-of-K sample count for minADE/minFDE.
pub const ADE_K: usize = 5;

/// Velocity scales applied to ground-truth futures in cross-model tests.
pub const CROSS_FACTORS: [f64; 9] = [0.5, 0.625, 0.75, 0.875, 1.0, 1.125, 1.25, 1.375, 1.5];

/// Ground-truth speed band (m/s) for the cross-test ordering check. Every
/// scaled future must keep its average speed inside the generator's support;
/// outside it the encoders extrapolate and the check stops measuring
/// semantic transfer.
pub const CROSS_SPEED_BAND: [f64; 2] = [1.0, 10.0];

const JSD_POINTS: usize = 2048;

// Per-operation stream tags keep evaluation draws independent.
const TAG_ADE: u64 = 1;
const TAG_VR: u64 = 2;
const TAG_TRAVERSE: u64 = 3;
const TAG_REENCODE: u64 = 4;
const TAG_CROSS: u64 = 5;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("evaluation configuration error: {detail}")]
    Config { detail: String },
    #[error("latent fit failed at z = {z}: {detail}")]
    Fit { z: f64, detail: String },
    #[error(transparent)]
    Graph(#[from] TensorError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Beta(#[from] BetaError),
}

fn op_stream(seed: u64, tag: u64, scene_id: u64) -> Stream {
    Stream::for_scene(seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15), StreamKind::Eval, scene_id)
}

/// Average and final displacement error between a prediction and ground
/// truth over the same horizon.
pub fn ade_fde(pred: &[[f64; 2]], gt: &[[f64; 2]]) -> (f64, f64) {
    assert_eq!(pred.len(), gt.len());
    let mut acc = 0.0;
    let mut last = 0.0;
    for (p, q) in pred.iter().zip(gt) {
        let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
        acc += d;
        last = d;
    }
    (acc / pred.len() as f64, last)
}

fn scene_ctx(
    model: &PredictorModel,
    ns: &NormalizedScene,
) -> Result<(Graph, ParamNodes, SceneNodes), ModelError> {
    let mut g = Graph::new();
    let pn = model.insert_params(&mut g)?;
    let sn = model.encode_scene(&mut g, &pn, ns)?;
    Ok((g, pn, sn))
}

fn decode_rows(
    model: &PredictorModel,
    g: &mut Graph,
    pn: &ParamNodes,
    sn: &SceneNodes,
    z: Tensor,
) -> Result<Vec<Vec<[f64; 2]>>, ModelError> {
    let zc = g.constant(z)?;
    let out = model.decode(g, pn, sn.ctx, zc)?;
    let pos = g.value(out.positions);
    let a = pos.shape[0];
    Ok((0..a)
        .map(|i| {
            (0..FUTURE_LEN)
                .map(|t| {
                    [pos.data[i * 2 * FUTURE_LEN + 2 * t], pos.data[i * 2 * FUTURE_LEN + 2 * t + 1]]
                })
                .collect()
        })
        .collect())
}

/// Per-agent best-of-K displacement errors for one scene; minimum over K
/// taken independently for ADE and FDE.
pub fn min_ade_fde_scene(
    model: &PredictorModel,
    ns: &NormalizedScene,
    k: usize,
    rng: &mut Stream,
) -> Result<(Vec<f64>, Vec<f64>), EvalError> {
    if k == 0 {
        return Err(EvalError::Config { detail: "K must be >= 1".into() });
    }
    let (mut g, pn, sn) = scene_ctx(model, ns)?;
    let a = ns.agents.len();
    let samples = model.sample_prior_latents(&g, &sn, k, rng)?;
    let mut best_ade = vec![f64::INFINITY; a];
    let mut best_fde = vec![f64::INFINITY; a];
    for z in samples {
        let rows = decode_rows(model, &mut g, &pn, &sn, z)?;
        for (i, row) in rows.iter().enumerate() {
            let (ade, fde) = ade_fde(row, &ns.agents[i].future);
            best_ade[i] = best_ade[i].min(ade);
            best_fde[i] = best_fde[i].min(fde);
        }
    }
    Ok((best_ade, best_fde))
}

/// Dataset-level minADE_K / minFDE_K: agent mean over every scene.
pub fn min_ade_fde(
    model: &PredictorModel,
    scenes: &[Scene],
    k: usize,
    seed: u64,
) -> Result<(f64, f64), EvalError> {
    let mut ade_sum = 0.0;
    let mut fde_sum = 0.0;
    let mut n = 0usize;
    for scene in scenes {
        let ns = normalize(scene);
        let mut rng = op_stream(seed, TAG_ADE, scene.scene_id);
        let (ades, fdes) = min_ade_fde_scene(model, &ns, k, &mut rng)?;
        ade_sum += ades.iter().sum::<f64>();
        fde_sum += fdes.iter().sum::<f64>();
        n += ades.len();
    }
    if n == 0 {
        return Err(EvalError::Config { detail: "empty dataset".into() });
    }
    Ok((ade_sum / n as f64, fde_sum / n as f64))
}

/// Which agents get their semantic slots pinned during traversal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PinMode {
    AllAgents,
    SingleAgent,
}

/// One scene's traversal: trajectories and speeds per agent per grid value.
#[derive(Debug, Clone)]
pub struct SceneTraversal {
    pub grid: Vec<f64>,
    /// `[agent][z][frame]`, normalized frame.
    pub trajectories: Vec<Vec<Vec<[f64; 2]>>>,
    /// `[agent][z]` average speed, m/s.
    pub velocities: Vec<Vec<f64>>,
    /// `[agent][z]` displacement errors against ground truth.
    pub ade: Vec<Vec<f64>>,
    pub fde: Vec<Vec<f64>>,
    /// Agents whose semantic slots were pinned to the grid.
    pub pinned_agents: usize,
}

/// Decodes the scene at every grid pin. Implicit slots (and unpinned
/// agents' semantic slots) are drawn once per agent from the prior and held
/// fixed across the grid, isolating the pinned slot's effect.
pub fn traverse_scene(
    model: &PredictorModel,
    ns: &NormalizedScene,
    pin: PinMode,
    rng: &mut Stream,
) -> Result<SceneTraversal, EvalError> {
    let latent = model.config.latent;
    let a = ns.agents.len();
    let m = latent.m_total;
    let (mut g, pn, sn) = scene_ctx(model, ns)?;
    let u: Vec<f64> = (0..a * m).map(|_| rng.u01()).collect();
    let alpha = g.value(sn.alpha_p).data.clone();
    let beta = g.value(sn.beta_p).data.clone();
    let pinned_agents = match pin {
        PinMode::AllAgents => a,
        PinMode::SingleAgent => 1,
    };
    let mut trajectories = vec![Vec::with_capacity(TRAVERSAL_GRID.len()); a];
    let mut velocities = vec![Vec::with_capacity(TRAVERSAL_GRID.len()); a];
    let mut ade = vec![Vec::with_capacity(TRAVERSAL_GRID.len()); a];
    let mut fde = vec![Vec::with_capacity(TRAVERSAL_GRID.len()); a];
    // Unpinned slots reuse the same prior inverse-CDF values every pass.
    let mut base = vec![0.0; a * m];
    for i in 0..a * m {
        base[i] = inv_inc_beta(u[i], alpha[i], beta[i])?;
    }
    for &zv in TRAVERSAL_GRID.iter() {
        let mut data = base.clone();
        for agent in 0..pinned_agents {
            for slot in 0..latent.p_semantic {
                data[agent * m + slot] = zv;
            }
        }
        let z = Tensor { shape: vec![a, m], data, requires_grad: false };
        let rows = decode_rows(model, &mut g, &pn, &sn, z)?;
        for (i, row) in rows.into_iter().enumerate() {
            let (va, vf) = ade_fde(&row, &ns.agents[i].future);
            velocities[i].push(avg_speed_positions([0.0, 0.0], &row));
            ade[i].push(va);
            fde[i].push(vf);
            trajectories[i].push(row);
        }
    }
    Ok(SceneTraversal {
        grid: TRAVERSAL_GRID.to_vec(),
        trajectories,
        velocities,
        ade,
        fde,
        pinned_agents,
    })
}

/// Dataset-level traversal summary over the pinned agents.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraversalResult {
    pub grid: Vec<f64>,
    pub mean_velocity: Vec<f64>,
    pub ade: Vec<f64>,
    pub fde: Vec<f64>,
    pub vel_min: f64,
    pub vel_max: f64,
    pub vel_range: f64,
    pub strictly_increasing: bool,
    pub pin_mode: PinMode,
}

pub fn traverse(
    model: &PredictorModel,
    scenes: &[Scene],
    pin: PinMode,
    seed: u64,
) -> Result<TraversalResult, EvalError> {
    let nz = TRAVERSAL_GRID.len();
    let mut vel = vec![0.0; nz];
    let mut ade = vec![0.0; nz];
    let mut fde = vec![0.0; nz];
    let mut n = 0usize;
    for scene in scenes {
        let ns = normalize(scene);
        let mut rng = op_stream(seed, TAG_TRAVERSE, scene.scene_id);
        let t = traverse_scene(model, &ns, pin, &mut rng)?;
        for agent in 0..t.pinned_agents {
            for zi in 0..nz {
                vel[zi] += t.velocities[agent][zi];
                ade[zi] += t.ade[agent][zi];
                fde[zi] += t.fde[agent][zi];
            }
            n += 1;
        }
    }
    if n == 0 {
        return Err(EvalError::Config { detail: "empty dataset".into() });
    }
    for zi in 0..nz {
        vel[zi] /= n as f64;
        ade[zi] /= n as f64;
        fde[zi] /= n as f64;
    }
    let vel_min = vel.iter().cloned().fold(f64::INFINITY, f64::min);
    let vel_max = vel.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let strictly_increasing = vel.windows(2).all(|w| w[1] > w[0]);
    Ok(TraversalResult {
        grid: TRAVERSAL_GRID.to_vec(),
        mean_velocity: vel,
        ade,
        fde,
        vel_min,
        vel_max,
        vel_range: vel_max - vel_min,
        strictly_increasing,
        pin_mode: pin,
    })
}

/// Raw violation tallies at the three granularities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViolationCounts {
    pub agents: usize,
    pub violating_agents: usize,
    pub scenes: usize,
    pub violating_scenes: usize,
    pub groups: usize,
    pub violating_groups: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViolationRates {
    /// Scene-group-wise rate, %.
    pub sw: f64,
    /// Scene-wise ("minibatch") rate, %.
    pub mbw: f64,
    /// Agent-wise rate, %.
    pub aw: f64,
}

impl ViolationCounts {
    pub fn rates(&self) -> ViolationRates {
        let pct = |num: usize, den: usize| {
            if den == 0 {
                0.0
            } else {
                100.0 * num as f64 / den as f64
            }
        };
        ViolationRates {
            sw: pct(self.violating_groups, self.groups),
            mbw: pct(self.violating_scenes, self.scenes),
            aw: pct(self.violating_agents, self.agents),
        }
    }
}

/// Aggregates per-agent violation flags (`flags[scene][agent]`) into
/// agent/scene/group tallies; a violating agent always flags its scene and
/// its group of `group_size` consecutive scenes.
pub fn count_violations(flags: &[Vec<bool>], group_size: usize) -> ViolationCounts {
    assert!(group_size >= 1);
    let mut c = ViolationCounts {
        agents: 0,
        violating_agents: 0,
        scenes: flags.len(),
        violating_scenes: 0,
        groups: flags.len().div_ceil(group_size),
        violating_groups: 0,
    };
    for chunk in flags.chunks(group_size) {
        let mut group_hit = false;
        for scene in chunk {
            c.agents += scene.len();
            let hits = scene.iter().filter(|&&v| v).count();
            c.violating_agents += hits;
            if hits > 0 {
                c.violating_scenes += 1;
                group_hit = true;
            }
        }
        if group_hit {
            c.violating_groups += 1;
        }
    }
    c
}

/// Whether a speed-per-grid profile violates monotonicity anywhere over the
/// unordered grid pairs: a larger pin with a strictly smaller speed.
pub fn violates(vel_per_z: &[f64]) -> bool {
    for i in 0..vel_per_z.len() {
        for j in i + 1..vel_per_z.len() {
            if vel_per_z[j] < vel_per_z[i] {
                return true;
            }
        }
    }
    false
}

/// Grid-pin violation rates over a dataset.
pub fn violation_rates(
    model: &PredictorModel,
    scenes: &[Scene],
    seed: u64,
) -> Result<(ViolationRates, ViolationCounts), EvalError> {
    let mut flags = Vec::with_capacity(scenes.len());
    for scene in scenes {
        let ns = normalize(scene);
        let mut rng = op_stream(seed, TAG_VR, scene.scene_id);
        let t = traverse_scene(model, &ns, PinMode::AllAgents, &mut rng)?;
        flags.push(t.velocities.iter().map(|v| violates(v)).collect());
    }
    let counts = count_violations(&flags, GROUP_SIZE);
    Ok((counts.rates(), counts))
}

/// One grid value's fitted re-encoded latent distribution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitOutcome {
    pub z: f64,
    pub alpha: f64,
    pub beta: f64,
    pub used_fallback: bool,
    pub n_samples: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReencodeReport {
    pub avg_jsd: f64,
    pub mode_loglik: f64,
    pub mode_deviation: f64,
    pub fits: Vec<FitOutcome>,
}

/// Jensen-Shannon divergence (base e) between two Beta densities, 2048
/// interior trapezoid points on (0,1). Bounded by ln 2.
pub fn jsd_beta(a1: f64, b1: f64, a2: f64, b2: f64) -> Result<f64, EvalError> {
    let n = JSD_POINTS;
    let h = 1.0 / (n + 1) as f64;
    let mut acc_p = 0.0;
    let mut acc_q = 0.0;
    for k in 1..=n {
        let z = k as f64 * h;
        let p = log_pdf_scalar(z, a1, b1)?.exp();
        let q = log_pdf_scalar(z, a2, b2)?.exp();
        let m = 0.5 * (p + q);
        let w = if k == 1 || k == n { 0.5 * h } else { h };
        if p > 0.0 {
            acc_p += w * p * (p / m).ln();
        }
        if q > 0.0 {
            acc_q += w * q * (q / m).ln();
        }
    }
    Ok(0.5 * acc_p + 0.5 * acc_q)
}

/// Aggregates fitted densities: mean pairwise JSD, cumulative log-density
/// at each pin, and mean distance between fitted mode and pin.
pub fn reencode_aggregate(fits: &[FitOutcome]) -> Result<(f64, f64, f64), EvalError> {
    let n = fits.len();
    if n < 2 {
        return Err(EvalError::Config { detail: "need at least two fits".into() });
    }
    let mut jsd_sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            jsd_sum += jsd_beta(fits[i].alpha, fits[i].beta, fits[j].alpha, fits[j].beta)?;
            pairs += 1;
        }
    }
    let mut loglik = 0.0;
    let mut dev = 0.0;
    for f in fits {
        loglik += log_pdf_scalar(f.z, f.alpha, f.beta)?;
        dev += (mode_scalar(f.alpha, f.beta) - f.z).abs();
    }
    Ok((jsd_sum / pairs as f64, loglik, dev / n as f64))
}

/// Re-encoding protocol: decode at each pin, posterior-encode the decoded
/// future, sample one latent per agent, fit a Beta per pin over the whole
/// dataset, and summarize how distinct and well-centered the fits are.
pub fn reencode_quality(
    model: &PredictorModel,
    scenes: &[Scene],
    seed: u64,
) -> Result<ReencodeReport, EvalError> {
    let latent = model.config.latent;
    let m = latent.m_total;
    let nz = TRAVERSAL_GRID.len();
    let mut buckets: Vec<Vec<f64>> = vec![Vec::new(); nz];
    for scene in scenes {
        let ns = normalize(scene);
        let mut rng = op_stream(seed, TAG_REENCODE, scene.scene_id);
        let a = ns.agents.len();
        let (mut g, pn, sn) = scene_ctx(model, &ns)?;
        let u_imp: Vec<f64> = (0..a * m).map(|_| rng.u01()).collect();
        let u_draw: Vec<f64> = (0..a).map(|_| rng.u01()).collect();
        let alpha = g.value(sn.alpha_p).data.clone();
        let beta = g.value(sn.beta_p).data.clone();
        let mut base = vec![0.0; a * m];
        for i in 0..a * m {
            base[i] = inv_inc_beta(u_imp[i], alpha[i], beta[i])?;
        }
        for (zi, &zv) in TRAVERSAL_GRID.iter().enumerate() {
            let mut data = base.clone();
            for agent in 0..a {
                for slot in 0..latent.p_semantic {
                    data[agent * m + slot] = zv;
                }
            }
            let z = Tensor { shape: vec![a, m], data, requires_grad: false };
            let zc = g.constant(z)?;
            let out = model.decode(&mut g, &pn, sn.ctx, zc)?;
            let pos = g.value(out.positions).clone();
            let (aq, bq) = model.posterior_from_positions(&mut g, &pn, sn.ctx, &pos)?;
            let aq = g.value(aq).data.clone();
            let bq = g.value(bq).data.clone();
            for agent in 0..a {
                let s = inv_inc_beta(u_draw[agent], aq[agent * m], bq[agent * m])?;
                buckets[zi].push(s);
            }
        }
    }
    let mut fits = Vec::with_capacity(nz);
    for (zi, bucket) in buckets.iter().enumerate() {
        let zv = TRAVERSAL_GRID[zi];
        let (alpha, beta, used_fallback) = match fit_mle(bucket) {
            Ok((a, b)) => (a, b, false),
            Err(_) => match fit_moments(bucket) {
                Ok((a, b)) => (a, b, true),
                Err(e) => return Err(EvalError::Fit { z: zv, detail: e.to_string() }),
            },
        };
        fits.push(FitOutcome { z: zv, alpha, beta, used_fallback, n_samples: bucket.len() });
    }
    let (avg_jsd, mode_loglik, mode_deviation) = reencode_aggregate(&fits)?;
    Ok(ReencodeReport { avg_jsd, mode_loglik, mode_deviation, fits })
}

/// Cross-model report: reconstruction errors and ordering preservation
/// when `enc` provides posteriors and `dec` decodes them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrossReport {
    pub ade: f64,
    pub fde: f64,
    /// Agent-wise violation rate (%) over velocity-scaled reference
    /// futures encoded by `enc` and decoded by `dec`.
    pub aw_vr: f64,
    pub eligible_agents: usize,
}

pub fn cross_test(
    enc: &PredictorModel,
    dec: &PredictorModel,
    scenes: &[Scene],
    seed: u64,
) -> Result<CrossReport, EvalError> {
    if enc.config.latent != dec.config.latent {
        return Err(EvalError::Config {
            detail: format!(
                "latent configs differ: {:?} vs {:?}",
                enc.config.latent, dec.config.latent
            ),
        });
    }
    let m = enc.config.latent.m_total;
    let mut ade_sum = 0.0;
    let mut fde_sum = 0.0;
    let mut n_agents = 0usize;
    let mut eligible = 0usize;
    let mut violating = 0usize;
    for scene in scenes {
        let ns = normalize(scene);
        let mut rng = op_stream(seed, TAG_CROSS, scene.scene_id);
        let a = ns.agents.len();
        let (mut ge, pe, se) = scene_ctx(enc, &ns)?;
        let (mut gd, pd, sd) = scene_ctx(dec, &ns)?;
        let u_rec: Vec<f64> = (0..a * m).map(|_| rng.u01()).collect();
        let u_ord: Vec<f64> = (0..a * m).map(|_| rng.u01()).collect();

        // Reconstruction: encode the true future with enc, decode with dec.
        let (aq, bq) = enc.posterior(&mut ge, &pe, se.ctx, &ns)?;
        let aq = ge.value(aq).data.clone();
        let bq = ge.value(bq).data.clone();
        let mut zdata = vec![0.0; a * m];
        for i in 0..a * m {
            zdata[i] = inv_inc_beta(u_rec[i], aq[i], bq[i])?;
        }
        let z = Tensor { shape: vec![a, m], data: zdata, requires_grad: false };
        let rows = decode_rows(dec, &mut gd, &pd, &sd, z)?;
        for (i, row) in rows.iter().enumerate() {
            let (va, vf) = ade_fde(row, &ns.agents[i].future);
            ade_sum += va;
            fde_sum += vf;
        }
        n_agents += a;

        // Ordering: encode each velocity-scaled future with enc, transplant
        // only the semantic slots onto fixed draws from dec's prior, decode
        // with dec, and check the decoded speeds follow the scales. Pinning
        // the implicit slots mirrors the traversal protocol, so the check
        // isolates the semantic channel's transfer between the two models.
        let gt = enc.future_positions(&ns);
        let gt_speed: Vec<f64> = ns
            .agents
            .iter()
            .map(|ag| avg_speed_positions([0.0, 0.0], &ag.future))
            .collect();
        let p = enc.config.latent.p_semantic;
        let alpha_pd = gd.value(sd.alpha_p).data.clone();
        let beta_pd = gd.value(sd.beta_p).data.clone();
        let mut base_z = vec![0.0; a * m];
        for i in 0..a * m {
            base_z[i] = inv_inc_beta(u_ord[i], alpha_pd[i], beta_pd[i])?;
        }
        let mut vels: Vec<Vec<f64>> = vec![Vec::with_capacity(CROSS_FACTORS.len()); a];
        for &f in CROSS_FACTORS.iter() {
            let scaled = Tensor {
                shape: gt.shape.clone(),
                data: gt.data.iter().map(|v| v * f).collect(),
                requires_grad: false,
            };
            let (af, bf) = enc.posterior_from_positions(&mut ge, &pe, se.ctx, &scaled)?;
            let af = ge.value(af).data.clone();
            let bf = ge.value(bf).data.clone();
            let mut zdata = base_z.clone();
            for agent in 0..a {
                for slot in 0..p {
                    let i = agent * m + slot;
                    zdata[i] = inv_inc_beta(u_ord[i], af[i], bf[i])?;
                }
            }
            let z = Tensor { shape: vec![a, m], data: zdata, requires_grad: false };
            let rows = decode_rows(dec, &mut gd, &pd, &sd, z)?;
            for (i, row) in rows.iter().enumerate() {
                vels[i].push(avg_speed_positions([0.0, 0.0], row));
            }
        }
        for i in 0..a {
            if gt_speed[i] < CROSS_SPEED_BAND[0] || gt_speed[i] > CROSS_SPEED_BAND[1] {
                continue;
            }
            eligible += 1;
            if violates(&vels[i]) {
                violating += 1;
            }
        }
    }
    if n_agents == 0 {
        return Err(EvalError::Config { detail: "empty dataset".into() });
    }
    let aw_vr = if eligible == 0 { 0.0 } else { 100.0 * violating as f64 / eligible as f64 };
    Ok(CrossReport {
        ade: ade_sum / n_agents as f64,
        fde: fde_sum / n_agents as f64,
        aw_vr,
        eligible_agents: eligible,
    })
}

/// Full per-model evaluation row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: u64,
    pub config_digest: String,
    pub min_ade5: f64,
    pub min_fde5: f64,
    pub sw_vr: f64,
    pub mbw_vr: f64,
    pub aw_vr: f64,
    pub vel_min: f64,
    pub vel_max: f64,
    pub vel_range: f64,
    pub monotone: bool,
    pub per_z_velocity: Vec<f64>,
    pub avg_jsd: f64,
    pub mode_loglik: f64,
    pub mode_deviation: f64,
}

impl EvalReport {
    pub fn csv_header() -> String {
        let mut s = String::from(
            "seed,config_digest,min_ade5,min_fde5,sw_vr,mbw_vr,aw_vr,\
             vel_min,vel_max,vel_range,monotone,avg_jsd,mode_loglik,mode_deviation",
        );
        for z in TRAVERSAL_GRID {
            let _ = write!(s, ",vel_z{}", (z * 10.0).round() as usize);
        }
        s
    }

    pub fn to_csv_row(&self) -> String {
        let mut s = format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.seed,
            self.config_digest,
            self.min_ade5,
            self.min_fde5,
            self.sw_vr,
            self.mbw_vr,
            self.aw_vr,
            self.vel_min,
            self.vel_max,
            self.vel_range,
            self.monotone,
            self.avg_jsd,
            self.mode_loglik,
            self.mode_deviation
        );
        for v in &self.per_z_velocity {
            let _ = write!(s, ",{v}");
        }
        s
    }
}

/// Runs the whole measurement battery on one model.
pub fn evaluate(
    model: &PredictorModel,
    scenes: &[Scene],
    seed: u64,
    config_digest: &str,
) -> Result<EvalReport, EvalError> {
    let (ade, fde) = min_ade_fde(model, scenes, ADE_K, seed)?;
    let (rates, _) = violation_rates(model, scenes, seed)?;
    let traversal = traverse(model, scenes, PinMode::AllAgents, seed)?;
    let reencode = reencode_quality(model, scenes, seed)?;
    Ok(EvalReport {
        seed,
        config_digest: config_digest.to_string(),
        min_ade5: ade,
        min_fde5: fde,
        sw_vr: rates.sw,
        mbw_vr: rates.mbw,
        aw_vr: rates.aw,
        vel_min: traversal.vel_min,
        vel_max: traversal.vel_max,
        vel_range: traversal.vel_range,
        monotone: traversal.strictly_increasing,
        per_z_velocity: traversal.mean_velocity.clone(),
        avg_jsd: reencode.avg_jsd,
        mode_loglik: reencode.mode_loglik,
        mode_deviation: reencode.mode_deviation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::scenegen::{AgentTrack, Split, DT, HISTORY_LEN};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn tiny_model(seed: u64) -> PredictorModel {
        let config = ModelConfig {
            hidden: 8,
            depth: 2,
            pool_dim: 4,
            future_dim: 4,
            decoder_hidden: 8,
            decoder_depth: 1,
            ..ModelConfig::default()
        };
        PredictorModel::new(config, seed).unwrap()
    }

    fn toy_scene(scene_id: u64, n_agents: u32) -> Scene {
        let agents = (0..n_agents)
            .map(|i| {
                let speed = 1.5 + 0.7 * i as f64 + 0.1 * scene_id as f64;
                let step = speed * DT;
                let y = 4.0 * i as f64;
                let hist: Vec<[f64; 2]> =
                    (0..HISTORY_LEN).map(|k| [step * (k as f64 - 3.0), y]).collect();
                let fut: Vec<[f64; 2]> =
                    (1..=FUTURE_LEN).map(|k| [step * k as f64, y]).collect();
                AgentTrack { agent_id: i, history: hist, future: fut }
            })
            .collect();
        Scene { scene_id, split: Split::Test, agents }
    }

    fn stationary_scene(scene_id: u64) -> Scene {
        let mut s = toy_scene(scene_id, 1);
        let last = *s.agents[0].history.last().unwrap();
        for p in &mut s.agents[0].future {
            *p = last;
        }
        s
    }

    #[test]
    fn displacement_errors_match_hand_values() {
        let gt: Vec<[f64; 2]> = (1..=FUTURE_LEN).map(|k| [k as f64, 0.0]).collect();
        assert_eq!(ade_fde(&gt, &gt), (0.0, 0.0));
        let off: Vec<[f64; 2]> = gt.iter().map(|p| [p[0], p[1] + 1.0]).collect();
        let (ade, fde) = ade_fde(&off, &gt);
        assert_abs_diff_eq!(ade, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fde, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn counting_matches_the_worked_example() {
        // Ten scenes of three agents; exactly one violating agent.
        let mut flags = vec![vec![false; 3]; 10];
        flags[4][1] = true;
        let counts = count_violations(&flags, GROUP_SIZE);
        let rates = counts.rates();
        assert_abs_diff_eq!(rates.aw, 100.0 / 30.0, epsilon = 1e-9);
        assert_abs_diff_eq!(rates.mbw, 10.0, epsilon = 1e-12);
        // Ten scenes form a single (partial) group of 22, and it is hit.
        assert_eq!(counts.groups, 1);
        assert_abs_diff_eq!(rates.sw, 100.0, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn violations_propagate_upward(
            flags in proptest::collection::vec(
                proptest::collection::vec(any::<bool>(), 1..6), 1..50),
            group_size in 1usize..30,
        ) {
            let c = count_violations(&flags, group_size);
            prop_assert_eq!(c.scenes, flags.len());
            prop_assert_eq!(c.groups, flags.len().div_ceil(group_size));
            let agent_hits = flags.iter().flatten().filter(|&&v| v).count();
            prop_assert_eq!(c.violating_agents, agent_hits);
            if agent_hits > 0 {
                prop_assert!(c.violating_scenes >= 1);
                prop_assert!(c.violating_groups >= 1);
            } else {
                prop_assert_eq!(c.violating_scenes, 0);
                prop_assert_eq!(c.violating_groups, 0);
            }
            prop_assert!(c.violating_scenes <= c.scenes);
            prop_assert!(c.violating_groups <= c.groups);
        }

        #[test]
        fn jsd_is_symmetric_and_bounded(
            a1 in 1.01f64..30.0, b1 in 1.01f64..30.0,
            a2 in 1.01f64..30.0, b2 in 1.01f64..30.0,
        ) {
            let x = jsd_beta(a1, b1, a2, b2).unwrap();
            let y = jsd_beta(a2, b2, a1, b1).unwrap();
            prop_assert!((x - y).abs() < 1e-12);
            prop_assert!(x >= 0.0);
            prop_assert!(x <= std::f64::consts::LN_2 + 1e-9);
        }
    }

    #[test]
    fn jsd_vanishes_for_identical_densities_and_saturates_for_disjoint_ones() {
        assert!(jsd_beta(3.0, 5.0, 3.0, 5.0).unwrap().abs() < 1e-12);
        let sep = jsd_beta(50.0, 5.0, 5.0, 50.0).unwrap();
        assert_abs_diff_eq!(sep, std::f64::consts::LN_2, epsilon = 2e-3);
    }

    #[test]
    fn perfect_sample_among_k_gives_zero_errors() {
        let mut model = tiny_model(31);
        for l in &mut model.params.decoder {
            l.w.data.iter_mut().for_each(|v| *v = 0.0);
            l.b.data.iter_mut().for_each(|v| *v = 0.0);
        }
        let scenes = vec![stationary_scene(0)];
        let (ade, fde) = min_ade_fde(&model, &scenes, ADE_K, 7).unwrap();
        assert!(ade < 1e-15);
        assert!(fde < 1e-15);
    }

    #[test]
    fn more_samples_never_hurt_best_of_k() {
        let model = tiny_model(32);
        let ns = normalize(&toy_scene(3, 2));
        let run = |k: usize| {
            let mut rng = op_stream(11, TAG_ADE, 3);
            min_ade_fde_scene(&model, &ns, k, &mut rng).unwrap()
        };
        let (a1, f1) = run(1);
        let (a5, f5) = run(ADE_K);
        for i in 0..a1.len() {
            assert!(a5[i] <= a1[i] + 1e-15);
            assert!(f5[i] <= f1[i] + 1e-15);
        }
    }

    #[test]
    fn traversal_grid_is_nine_even_steps() {
        assert_eq!(TRAVERSAL_GRID.len(), 9);
        for (i, z) in TRAVERSAL_GRID.iter().enumerate() {
            assert_abs_diff_eq!(*z, 0.1 * (i + 1) as f64, epsilon = 1e-12);
        }
    }

    #[test]
    fn single_agent_pin_leaves_other_agents_untouched() {
        let model = tiny_model(33);
        let ns = normalize(&toy_scene(5, 3));
        let mut rng = op_stream(13, TAG_TRAVERSE, 5);
        let t = traverse_scene(&model, &ns, PinMode::SingleAgent, &mut rng).unwrap();
        assert_eq!(t.pinned_agents, 1);
        for agent in 1..3 {
            for zi in 1..t.grid.len() {
                assert_eq!(t.trajectories[agent][zi], t.trajectories[agent][0]);
            }
        }
        // The pinned agent's trajectory does move across the grid.
        assert!(t.trajectories[0].iter().any(|traj| traj != &t.trajectories[0][0]));
    }

    #[test]
    fn traversal_is_deterministic_given_the_seed() {
        let model = tiny_model(34);
        let scenes: Vec<Scene> = (0..3).map(|i| toy_scene(i, 2)).collect();
        let a = traverse(&model, &scenes, PinMode::AllAgents, 21).unwrap();
        let b = traverse(&model, &scenes, PinMode::AllAgents, 21).unwrap();
        assert_eq!(a.mean_velocity, b.mean_velocity);
        assert_eq!(a.ade, b.ade);
        assert_eq!(a.vel_range, b.vel_range);
    }

    #[test]
    fn zero_decoder_reencodes_identically_across_pins() {
        let mut model = tiny_model(35);
        for l in &mut model.params.decoder {
            l.w.data.iter_mut().for_each(|v| *v = 0.0);
            l.b.data.iter_mut().for_each(|v| *v = 0.0);
        }
        let scenes: Vec<Scene> = (0..12).map(|i| toy_scene(i, 2)).collect();
        let r = reencode_quality(&model, &scenes, 17).unwrap();
        // Identical predictions at every pin force identical fits.
        assert!(r.avg_jsd.abs() < 1e-9, "avg_jsd = {}", r.avg_jsd);
        assert_eq!(r.fits.len(), 9);
        for f in &r.fits {
            assert_eq!(f.n_samples, 24);
        }
    }

    #[test]
    fn aggregate_sees_zero_deviation_when_modes_hit_the_pins() {
        let fits: Vec<FitOutcome> = TRAVERSAL_GRID
            .iter()
            .map(|&z| FitOutcome {
                z,
                alpha: 1.0 + 5.0 * z,
                beta: 1.0 + 5.0 * (1.0 - z),
                used_fallback: false,
                n_samples: 100,
            })
            .collect();
        let (jsd, loglik, dev) = reencode_aggregate(&fits).unwrap();
        assert!(dev < 1e-12);
        assert!(jsd > 0.0);
        assert!(loglik.is_finite());
    }

    #[test]
    fn cross_test_requires_matching_latent_configs() {
        let a = tiny_model(36);
        let mut cfg = a.config.clone();
        cfg.latent.m_total = 3;
        let b = PredictorModel::new(cfg, 37).unwrap();
        let scenes = vec![toy_scene(0, 2)];
        assert!(matches!(
            cross_test(&a, &b, &scenes, 1),
            Err(EvalError::Config { .. })
        ));
    }

    #[test]
    fn cross_test_of_a_model_with_itself_is_deterministic_self_reconstruction() {
        let model = tiny_model(38);
        let scenes: Vec<Scene> = (0..4).map(|i| toy_scene(i, 2)).collect();
        let r1 = cross_test(&model, &model, &scenes, 3).unwrap();
        let clone = model.clone();
        let r2 = cross_test(&model, &clone, &scenes, 3).unwrap();
        assert_eq!(r1.ade, r2.ade);
        assert_eq!(r1.fde, r2.fde);
        assert_eq!(r1.aw_vr, r2.aw_vr);
        assert!(r1.eligible_agents > 0);
        assert!(r1.ade >= 0.0 && r1.aw_vr >= 0.0 && r1.aw_vr <= 100.0);
    }

    #[test]
    fn report_csv_row_matches_header_arity() {
        let report = EvalReport {
            seed: 1,
            config_digest: "abc".into(),
            min_ade5: 0.5,
            min_fde5: 0.9,
            sw_vr: 10.0,
            mbw_vr: 5.0,
            aw_vr: 1.0,
            vel_min: 2.0,
            vel_max: 4.5,
            vel_range: 2.5,
            monotone: true,
            per_z_velocity: TRAVERSAL_GRID.to_vec(),
            avg_jsd: 0.4,
            mode_loglik: 3.0,
            mode_deviation: 0.02,
        };
        let header_cols = EvalReport::csv_header().split(',').count();
        let row_cols = report.to_csv_row().split(',').count();
        assert_eq!(header_cols, row_cols);
        let json = serde_json::to_string(&report).unwrap();
        let back: EvalReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.config_digest, report.config_digest);
        assert_eq!(back.per_z_velocity, report.per_z_velocity);
    }
}
