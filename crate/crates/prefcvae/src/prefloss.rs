//! Preference supervision for the semantic latent slot.
//!
//! Each gated training step decodes two auxiliary predictions from freshly
//! sampled latent pairs, scores them with the differentiable average-speed
//! metric, soft-labels which one "should" carry the larger semantic value,
//! and penalizes disagreement with a cross-entropy against the latent
//! magnitudes themselves. Latent draws are targets, not model outputs, so
//! they enter the graph as constants.

use crate::betalat::LatentConfig;
use crate::model::{ModelError, ParamNodes, PredictorModel, SceneNodes};
use crate::rngstream::Stream;
use crate::scenegen::{NormalizedScene, DT, FUTURE_LEN};
use crate::tensorgraph::{Graph, NodeId, Tensor, TensorError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Smoothing inside the step norm, `sqrt(|d|^2 + EPS)`, keeps the speed
/// metric differentiable at zero displacement.
pub const NORM_EPS: f64 = 1e-12;

/// Latent samples per scene for the best-of-K variety objective.
pub const VARIETY_K: usize = 5;

#[derive(Debug, Error)]
pub enum PrefError {
    #[error("preference configuration error: {detail}")]
    Config { detail: String },
    #[error("latent pair error: {detail}")]
    Pair { detail: String },
    #[error(transparent)]
    Graph(#[from] TensorError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrefConfig {
    /// Label sensitivity per m/s of metric gap.
    pub eta: f64,
    /// Weight of the preference term in the total loss.
    pub lambda: f64,
    /// Bernoulli probability that a step uses its preference pair.
    pub use_rate: f64,
}

impl Default for PrefConfig {
    fn default() -> Self {
        Self { eta: 4.0, lambda: 16.0, use_rate: 1.0 }
    }
}

impl PrefConfig {
    pub fn validate(&self) -> Result<(), PrefError> {
        if !(self.eta > 0.0) {
            return Err(PrefError::Config { detail: format!("eta = {} must be > 0", self.eta) });
        }
        if !(self.lambda >= 0.0) {
            return Err(PrefError::Config { detail: format!("lambda = {} must be >= 0", self.lambda) });
        }
        if !(0.0..=1.0).contains(&self.use_rate) {
            return Err(PrefError::Config {
                detail: format!("use_rate = {} must lie in [0,1]", self.use_rate),
            });
        }
        Ok(())
    }
}

/// A scene-level latent pair: `[A, M]` each, semantic slots ordered
/// `z0 < z1` per agent, implicit slots independent.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSample {
    pub z0: Tensor,
    pub z1: Tensor,
}

impl PairSample {
    pub fn validate(&self, latent: &LatentConfig) -> Result<(), PrefError> {
        let m = latent.m_total;
        if self.z0.shape != self.z1.shape || self.z0.rank() != 2 || self.z0.shape[1] != m {
            return Err(PrefError::Pair {
                detail: format!("shapes {:?} / {:?}, want [A, {m}]", self.z0.shape, self.z1.shape),
            });
        }
        let a = self.z0.shape[0];
        for i in 0..a {
            for j in 0..m {
                let v0 = self.z0.data[i * m + j];
                let v1 = self.z1.data[i * m + j];
                if !(v0 > 0.0 && v0 < 1.0 && v1 > 0.0 && v1 < 1.0) {
                    return Err(PrefError::Pair {
                        detail: format!("agent {i} slot {j}: values ({v0}, {v1}) outside (0,1)"),
                    });
                }
                if j < latent.p_semantic && v0 >= v1 {
                    return Err(PrefError::Pair {
                        detail: format!("agent {i} semantic slot {j}: z0 = {v0} >= z1 = {v1}"),
                    });
                }
            }
        }
        Ok(())
    }

    /// First-semantic-slot values per agent, the pair the label compares.
    fn semantic_columns(&self, latent: &LatentConfig) -> (Vec<f64>, Vec<f64>) {
        let m = latent.m_total;
        let a = self.z0.shape[0];
        let col = |t: &Tensor| (0..a).map(|i| t.data[i * m]).collect();
        (col(&self.z0), col(&self.z1))
    }
}

/// Fixed randomness for one training step: everything `total_loss` needs so
/// the loss is a pure function of the parameters.
pub struct LossDraws {
    /// `A * M` uniforms feeding the posterior sample.
    pub u_post: Vec<f64>,
    /// Prior draws for the variety objective (gradient-stopped).
    pub variety_z: Vec<Tensor>,
    /// Present iff the use-rate gate fired this step.
    pub pair: Option<PairSample>,
}

/// Graph handles of the preference branch.
pub struct PrefNodes {
    pub m0: NodeId,
    pub m1: NodeId,
    /// Per-agent soft labels, `[A]`.
    pub label: NodeId,
    /// Agent-mean preference loss (unweighted).
    pub loss: NodeId,
}

/// Assembled training objective for one scene.
pub struct LossParts {
    pub total: NodeId,
    pub elbo: NodeId,
    pub mse: NodeId,
    pub kl: NodeId,
    pub variety: NodeId,
    pub pref: Option<PrefNodes>,
    /// Whether the gate fired (pair drawn), independent of lambda.
    pub gate: bool,
}

/// Mean speed (m/s) over the prediction horizon, smoothed norm, starting
/// from the last observed position. `displacements` is `[A, 24]`; the
/// result is `[A]`.
pub fn avg_speed_node(g: &mut Graph, displacements: NodeId) -> Result<NodeId, TensorError> {
    let a = g.shape(displacements)[0];
    let frames = g.reshape(displacements, &[a, FUTURE_LEN, 2])?;
    let step = g.norm_last(frames, NORM_EPS)?;
    let mean = g.mean_axis(step, 1)?;
    g.scale(mean, 1.0 / DT)
}

/// Same metric on plain positions, for evaluation paths.
pub fn avg_speed_positions(origin: [f64; 2], prediction: &[[f64; 2]]) -> f64 {
    let mut prev = origin;
    let mut acc = 0.0;
    for p in prediction {
        let dx = p[0] - prev[0];
        let dy = p[1] - prev[1];
        acc += (dx * dx + dy * dy + NORM_EPS).sqrt();
        prev = *p;
    }
    acc / prediction.len() as f64 / DT
}

/// Draws one latent pair for a single agent: semantic slots ordered,
/// implicit slots independent, all uniform on the semantic bounds.
pub fn sample_latent_pair(latent: &LatentConfig, rng: &mut Stream) -> (Vec<f64>, Vec<f64>) {
    let lo = latent.semantic_low;
    let hi = latent.semantic_high;
    let m = latent.m_total;
    let mut z0 = Vec::with_capacity(m);
    let mut z1 = Vec::with_capacity(m);
    for slot in 0..m {
        if slot < latent.p_semantic {
            // Ties have probability zero but would break strict ordering.
            let (a, b) = loop {
                let a = rng.uniform(lo, hi);
                let b = rng.uniform(lo, hi);
                if a != b {
                    break (a.min(b), a.max(b));
                }
            };
            z0.push(a);
            z1.push(b);
        } else {
            z0.push(rng.uniform(lo, hi));
            z1.push(rng.uniform(lo, hi));
        }
    }
    (z0, z1)
}

/// Stacks per-agent pairs into scene tensors.
pub fn sample_scene_pair(latent: &LatentConfig, n_agents: usize, rng: &mut Stream) -> PairSample {
    let m = latent.m_total;
    let mut d0 = Vec::with_capacity(n_agents * m);
    let mut d1 = Vec::with_capacity(n_agents * m);
    for _ in 0..n_agents {
        let (z0, z1) = sample_latent_pair(latent, rng);
        d0.extend(z0);
        d1.extend(z1);
    }
    PairSample {
        z0: Tensor { shape: vec![n_agents, m], data: d0, requires_grad: false },
        z1: Tensor { shape: vec![n_agents, m], data: d1, requires_grad: false },
    }
}

pub fn preference_label_scalar(m0: f64, m1: f64, z0: f64, z1: f64, eta: f64) -> f64 {
    let s = 1.0 / (1.0 + (-eta * (m0 - m1)).exp());
    ((z1 - z0) * s + z0) / (z0 + z1)
}

pub fn preference_loss_scalar(label: f64, z0: f64, z1: f64) -> f64 {
    let sum = z0 + z1;
    -(label * (z0 / sum).ln() + (1.0 - label) * (z1 / sum).ln())
}

/// Per-agent soft labels from metric nodes `m0`, `m1` (each `[A]`) and
/// constant latent values.
pub fn preference_label(
    g: &mut Graph,
    m0: NodeId,
    m1: NodeId,
    z0: &[f64],
    z1: &[f64],
    eta: f64,
) -> Result<NodeId, PrefError> {
    check_pair_values(z0, z1)?;
    if !(eta > 0.0) {
        return Err(PrefError::Config { detail: format!("eta = {eta} must be > 0") });
    }
    let gain: Vec<f64> = z0.iter().zip(z1).map(|(&a, &b)| (b - a) / (a + b)).collect();
    let base: Vec<f64> = z0.iter().zip(z1).map(|(&a, &b)| a / (a + b)).collect();
    let diff = g.sub(m0, m1)?;
    let scaled = g.scale(diff, eta)?;
    let sig = g.sigmoid(scaled)?;
    let gain = g.constant(Tensor::from_vec(gain))?;
    let base = g.constant(Tensor::from_vec(base))?;
    let t = g.mul(sig, gain)?;
    Ok(g.add(t, base)?)
}

/// Per-agent cross-entropy of the soft label against the latent-magnitude
/// target distribution; `[A]`.
pub fn preference_loss(
    g: &mut Graph,
    label: NodeId,
    z0: &[f64],
    z1: &[f64],
) -> Result<NodeId, PrefError> {
    check_pair_values(z0, z1)?;
    // -(P ln t0 + (1-P) ln t1) rewritten as P (ln t1 - ln t0) - ln t1.
    let slope: Vec<f64> =
        z0.iter().zip(z1).map(|(&a, &b)| (b / (a + b)).ln() - (a / (a + b)).ln()).collect();
    let offset: Vec<f64> = z0.iter().zip(z1).map(|(&a, &b)| (b / (a + b)).ln()).collect();
    let slope = g.constant(Tensor::from_vec(slope))?;
    let offset = g.constant(Tensor::from_vec(offset))?;
    let t = g.mul(label, slope)?;
    Ok(g.sub(t, offset)?)
}

fn check_pair_values(z0: &[f64], z1: &[f64]) -> Result<(), PrefError> {
    if z0.len() != z1.len() || z0.is_empty() {
        return Err(PrefError::Pair {
            detail: format!("semantic columns of length {} vs {}", z0.len(), z1.len()),
        });
    }
    if let Some((&a, &b)) = z0.iter().zip(z1).find(|(&a, &b)| !(a > 0.0 && b > 0.0)) {
        return Err(PrefError::Pair { detail: format!("non-positive latent values ({a}, {b})") });
    }
    Ok(())
}

/// Builds the full training objective for one scene on top of an existing
/// context/prior encoding. `total = elbo + variety + lambda * pref` when a
/// pair is present; the gate and every random draw live in `draws`.
pub fn total_loss(
    model: &PredictorModel,
    g: &mut Graph,
    pn: &ParamNodes,
    ns: &NormalizedScene,
    sn: &SceneNodes,
    cfg: &PrefConfig,
    draws: &LossDraws,
) -> Result<LossParts, PrefError> {
    cfg.validate()?;
    let latent = &model.config.latent;
    if latent.p_semantic == 0 {
        return Err(PrefError::Config { detail: "preference training needs p_semantic >= 1".into() });
    }
    let elbo_parts = model.elbo_loss(g, pn, ns, sn, &draws.u_post)?;
    let variety = model.variety_loss(g, pn, ns, sn.ctx, &draws.variety_z)?;
    let mut total = g.add(elbo_parts.elbo, variety)?;
    let mut pref = None;
    if let Some(pair) = &draws.pair {
        if cfg.lambda > 0.0 {
            pair.validate(latent)?;
            let z0 = g.constant(pair.z0.clone())?;
            let z1 = g.constant(pair.z1.clone())?;
            let d0 = model.decode(g, pn, sn.ctx, z0)?;
            let d1 = model.decode(g, pn, sn.ctx, z1)?;
            let m0 = avg_speed_node(g, d0.displacements)?;
            let m1 = avg_speed_node(g, d1.displacements)?;
            let (c0, c1) = pair.semantic_columns(latent);
            let label = preference_label(g, m0, m1, &c0, &c1, cfg.eta)?;
            let per_agent = preference_loss(g, label, &c0, &c1)?;
            let loss = g.mean_all(per_agent)?;
            let weighted = g.scale(loss, cfg.lambda)?;
            total = g.add(total, weighted)?;
            pref = Some(PrefNodes { m0, m1, label, loss });
        }
    }
    Ok(LossParts {
        total,
        elbo: elbo_parts.elbo,
        mse: elbo_parts.mse,
        kl: elbo_parts.kl,
        variety,
        pref,
        gate: draws.pair.is_some(),
    })
}
