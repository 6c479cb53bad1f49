//! The Beta-latent CVAE predictor.
//!
//! Per-agent MLP trunk over normalized history, mean neighbor pooling,
//! Beta prior and posterior heads (concentrations clipped above 1), and a
//! displacement decoder whose cumulative sum yields future positions in the
//! agent's canonical frame. Losses are assembled as graph nodes so one
//! backward pass differentiates everything.
//!
//! Latent layout: semantic dims occupy indices `0..P`, implicit dims the
//! rest. All loss math happens in the normalized frame; rigid transforms
//! preserve every distance-based metric, so values match the world frame.

use crate::betalat::{
    clip_concentration_node, inv_inc_beta, kl_beta_node, sample_reparam, BetaError, LatentConfig,
};
use crate::rngstream::{Stream, StreamKind};
use crate::scenegen::{NormalizedScene, FUTURE_LEN, HISTORY_LEN};
use crate::tensorgraph::{Graph, NodeId, Tensor, TensorError};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Feature scale applied to coordinates before the MLPs; keeps tanh units
/// out of saturation for scene-sized inputs.
const INPUT_SCALE: f64 = 0.1;

pub const CHECKPOINT_VERSION: &str = "prefcvae-ckpt-1";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model configuration error: {detail}")]
    Config { detail: String },
    #[error(transparent)]
    Graph(#[from] TensorError),
    #[error(transparent)]
    Beta(#[from] BetaError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint error: {detail}")]
    Checkpoint { detail: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub hidden: usize,
    pub depth: usize,
    pub pool_dim: usize,
    pub future_dim: usize,
    pub decoder_hidden: usize,
    pub decoder_depth: usize,
    pub latent: LatentConfig,
    pub neighbor_pooling: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            depth: 3,
            pool_dim: 32,
            future_dim: 64,
            decoder_hidden: 128,
            decoder_depth: 2,
            latent: LatentConfig::default(),
            neighbor_pooling: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.hidden == 0
            || self.depth == 0
            || self.pool_dim == 0
            || self.future_dim == 0
            || self.decoder_hidden == 0
            || self.decoder_depth == 0
        {
            return Err(ModelError::Config { detail: "widths and depths must be >= 1".into() });
        }
        self.latent.validate().map_err(|e| ModelError::Config { detail: e.to_string() })?;
        Ok(())
    }

    /// Width of the per-agent context embedding (trunk output plus pooled
    /// neighbor summary).
    pub fn ctx_dim(&self) -> usize {
        self.hidden + self.pool_dim
    }
}

/// Per-agent latent vector with a mask of pinned (externally assigned)
/// slots; unpinned slots are meant to be sampled before decoding.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentAssignment {
    pub values: Vec<f64>,
    pub pinned: Vec<bool>,
}

impl LatentAssignment {
    /// All slots sampled.
    pub fn free(m: usize) -> Self {
        Self { values: vec![0.5; m], pinned: vec![false; m] }
    }

    /// Semantic slots pinned to `z_s`, implicit slots free.
    pub fn pin_semantic(latent: &LatentConfig, z_s: f64) -> Self {
        let mut a = Self::free(latent.m_total);
        for i in 0..latent.p_semantic {
            a.values[i] = z_s;
            a.pinned[i] = true;
        }
        a
    }

    pub fn validate(&self, latent: &LatentConfig) -> Result<(), ModelError> {
        if self.values.len() != latent.m_total || self.pinned.len() != latent.m_total {
            return Err(ModelError::Config {
                detail: format!("latent assignment length {} != M = {}", self.values.len(), latent.m_total),
            });
        }
        for (i, (&v, &p)) in self.values.iter().zip(&self.pinned).enumerate() {
            if p && !(v > 0.0 && v < 1.0) {
                return Err(ModelError::Config {
                    detail: format!("pinned slot {i} value {v} outside (0,1)"),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub w: Tensor,
    pub b: Tensor,
}

impl Linear {
    fn init(rng: &mut Stream, fan_in: usize, fan_out: usize) -> Self {
        let scale = 1.0 / (fan_in as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| rng.normal(0.0, scale)).collect();
        Linear {
            w: Tensor { shape: vec![fan_in, fan_out], data, requires_grad: true },
            b: Tensor::zeros(vec![fan_out]).with_grad(),
        }
    }

    /// Zero weights: heads start at the near-uniform prior.
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Linear {
            w: Tensor::zeros(vec![fan_in, fan_out]).with_grad(),
            b: Tensor::zeros(vec![fan_out]).with_grad(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    pub trunk: Vec<Linear>,
    pub pool: Linear,
    pub future: Linear,
    pub prior_head: Linear,
    pub posterior_head: Linear,
    pub decoder: Vec<Linear>,
}

impl ParamSet {
    fn init(config: &ModelConfig, seed: u64) -> Self {
        let mut rng = Stream::new(seed, StreamKind::WeightInit);
        let m = config.latent.m_total;
        let mut trunk = Vec::with_capacity(config.depth);
        let mut fan_in = 2 * HISTORY_LEN;
        for _ in 0..config.depth {
            trunk.push(Linear::init(&mut rng, fan_in, config.hidden));
            fan_in = config.hidden;
        }
        let pool = Linear::init(&mut rng, config.hidden, config.pool_dim);
        let future = Linear::init(&mut rng, 2 * FUTURE_LEN, config.future_dim);
        let prior_head = Linear::zeros(config.ctx_dim(), 2 * m);
        let posterior_head = Linear::zeros(config.ctx_dim() + config.future_dim, 2 * m);
        let mut decoder = Vec::with_capacity(config.decoder_depth + 1);
        let mut fan_in = config.ctx_dim() + m;
        for _ in 0..config.decoder_depth {
            decoder.push(Linear::init(&mut rng, fan_in, config.decoder_hidden));
            fan_in = config.decoder_hidden;
        }
        decoder.push(Linear::init(&mut rng, fan_in, 2 * FUTURE_LEN));
        ParamSet { trunk, pool, future, prior_head, posterior_head, decoder }
    }

    /// Canonical (name, tensor) traversal order; Adam state, gradients and
    /// checkpoints all follow it.
    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        fn push<'a>(out: &mut Vec<(String, &'a Tensor)>, name: String, l: &'a Linear) {
            out.push((format!("{name}.w"), &l.w));
            out.push((format!("{name}.b"), &l.b));
        }
        let mut out = Vec::new();
        for (i, l) in self.trunk.iter().enumerate() {
            push(&mut out, format!("trunk{i}"), l);
        }
        push(&mut out, "pool".into(), &self.pool);
        push(&mut out, "future".into(), &self.future);
        push(&mut out, "prior_head".into(), &self.prior_head);
        push(&mut out, "posterior_head".into(), &self.posterior_head);
        for (i, l) in self.decoder.iter().enumerate() {
            push(&mut out, format!("decoder{i}"), l);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        for l in &mut self.trunk {
            out.push(&mut l.w);
            out.push(&mut l.b);
        }
        out.push(&mut self.pool.w);
        out.push(&mut self.pool.b);
        out.push(&mut self.future.w);
        out.push(&mut self.future.b);
        out.push(&mut self.prior_head.w);
        out.push(&mut self.prior_head.b);
        out.push(&mut self.posterior_head.w);
        out.push(&mut self.posterior_head.b);
        for l in &mut self.decoder {
            out.push(&mut l.w);
            out.push(&mut l.b);
        }
        out
    }
}

/// Graph handles of the inserted parameters, in [`ParamSet`] order.
pub struct ParamNodes {
    pub trunk: Vec<(NodeId, NodeId)>,
    pub pool: (NodeId, NodeId),
    pub future: (NodeId, NodeId),
    pub prior_head: (NodeId, NodeId),
    pub posterior_head: (NodeId, NodeId),
    pub decoder: Vec<(NodeId, NodeId)>,
}

impl ParamNodes {
    /// Flat id list matching `ParamSet::tensors` order.
    pub fn node_list(&self) -> Vec<NodeId> {
        let mut out = Vec::new();
        for &(w, b) in &self.trunk {
            out.push(w);
            out.push(b);
        }
        for &(w, b) in [&self.pool, &self.future, &self.prior_head, &self.posterior_head] {
            out.push(w);
            out.push(b);
        }
        for &(w, b) in &self.decoder {
            out.push(w);
            out.push(b);
        }
        out
    }
}

/// Shared per-scene graph pieces: context embedding and prior parameters.
pub struct SceneNodes {
    pub ctx: NodeId,
    pub alpha_p: NodeId,
    pub beta_p: NodeId,
}

/// Decoder output in the normalized frame.
pub struct DecodeNodes {
    /// `[A, 24]` per-step displacement vectors.
    pub displacements: NodeId,
    /// `[A, 24]` absolute positions (cumulative sum from the origin).
    pub positions: NodeId,
}

/// ELBO assembly plus the intermediate nodes diagnostics care about.
pub struct ElboNodes {
    pub elbo: NodeId,
    pub mse: NodeId,
    pub kl: NodeId,
    pub alpha_q: NodeId,
    pub beta_q: NodeId,
    pub z: NodeId,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Checkpoint {
    version: String,
    seed: u64,
    config: ModelConfig,
    params: ParamSet,
}

#[derive(Debug, Clone)]
pub struct PredictorModel {
    pub config: ModelConfig,
    pub params: ParamSet,
    pub seed: u64,
}

impl PredictorModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let params = ParamSet::init(&config, seed);
        Ok(Self { config, params, seed })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let ckpt = Checkpoint {
            version: CHECKPOINT_VERSION.to_string(),
            seed: self.seed,
            config: self.config.clone(),
            params: self.params.clone(),
        };
        let file = std::fs::File::create(path)
            .map_err(|e| ModelError::Io { path: path.to_path_buf(), source: e })?;
        serde_json::to_writer(std::io::BufWriter::new(file), &ckpt)
            .map_err(|e| ModelError::Checkpoint { detail: e.to_string() })?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let file = std::fs::File::open(path)
            .map_err(|e| ModelError::Io { path: path.to_path_buf(), source: e })?;
        let ckpt: Checkpoint = serde_json::from_reader(std::io::BufReader::new(file))
            .map_err(|e| ModelError::Checkpoint { detail: e.to_string() })?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint {
                detail: format!("version {} (want {CHECKPOINT_VERSION})", ckpt.version),
            });
        }
        ckpt.config.validate()?;
        let expected = ParamSet::init(&ckpt.config, 0);
        for ((name, t), (_, e)) in ckpt.params.tensors().iter().zip(expected.tensors().iter()) {
            if t.shape != e.shape {
                return Err(ModelError::Checkpoint {
                    detail: format!("tensor {name} has shape {:?}, config wants {:?}", t.shape, e.shape),
                });
            }
        }
        Ok(Self { config: ckpt.config, params: ckpt.params, seed: ckpt.seed })
    }

    /// Inserts every parameter tensor as a gradient-bearing leaf.
    pub fn insert_params(&self, g: &mut Graph) -> Result<ParamNodes, ModelError> {
        let lin = |g: &mut Graph, l: &Linear| -> Result<(NodeId, NodeId), TensorError> {
            Ok((g.insert(l.w.clone())?, g.insert(l.b.clone())?))
        };
        let mut trunk = Vec::with_capacity(self.params.trunk.len());
        for l in &self.params.trunk {
            trunk.push(lin(g, l)?);
        }
        let pool = lin(g, &self.params.pool)?;
        let future = lin(g, &self.params.future)?;
        let prior_head = lin(g, &self.params.prior_head)?;
        let posterior_head = lin(g, &self.params.posterior_head)?;
        let mut decoder = Vec::with_capacity(self.params.decoder.len());
        for l in &self.params.decoder {
            decoder.push(lin(g, l)?);
        }
        Ok(ParamNodes { trunk, pool, future, prior_head, posterior_head, decoder })
    }

    /// Flattened, scaled history per agent: `[A, 8]`.
    fn history_input(&self, ns: &NormalizedScene) -> Tensor {
        let a = ns.agents.len();
        let mut data = Vec::with_capacity(a * 2 * HISTORY_LEN);
        for ag in &ns.agents {
            for p in &ag.history {
                data.push(p[0] * INPUT_SCALE);
                data.push(p[1] * INPUT_SCALE);
            }
        }
        Tensor { shape: vec![a, 2 * HISTORY_LEN], data, requires_grad: false }
    }

    /// Scaled per-step displacement features from normalized-frame future
    /// positions (`[A, 24]`, starting at the origin).
    fn displacement_features(&self, positions: &Tensor) -> Tensor {
        let a = positions.shape[0];
        let mut data = Vec::with_capacity(a * 2 * FUTURE_LEN);
        for i in 0..a {
            let row = &positions.data[i * 2 * FUTURE_LEN..(i + 1) * 2 * FUTURE_LEN];
            let mut prev = [0.0, 0.0];
            for t in 0..FUTURE_LEN {
                data.push((row[2 * t] - prev[0]) * INPUT_SCALE);
                data.push((row[2 * t + 1] - prev[1]) * INPUT_SCALE);
                prev = [row[2 * t], row[2 * t + 1]];
            }
        }
        Tensor { shape: vec![a, 2 * FUTURE_LEN], data, requires_grad: false }
    }

    /// Ground-truth future positions in the normalized frame: `[A, 24]`.
    pub fn future_positions(&self, ns: &NormalizedScene) -> Tensor {
        let a = ns.agents.len();
        let mut data = Vec::with_capacity(a * 2 * FUTURE_LEN);
        for ag in &ns.agents {
            for p in &ag.future {
                data.push(p[0]);
                data.push(p[1]);
            }
        }
        Tensor { shape: vec![a, 2 * FUTURE_LEN], data, requires_grad: false }
    }

    /// Mean-pool mixing matrix; row i averages the other agents (zero when
    /// the agent is alone or pooling is disabled).
    fn neighbor_matrix(&self, a: usize) -> Tensor {
        let mut data = vec![0.0; a * a];
        if self.config.neighbor_pooling && a > 1 {
            let w = 1.0 / (a - 1) as f64;
            for i in 0..a {
                for j in 0..a {
                    if i != j {
                        data[i * a + j] = w;
                    }
                }
            }
        }
        Tensor { shape: vec![a, a], data, requires_grad: false }
    }

    /// Context embedding per agent: trunk MLP over history concatenated with
    /// the mean-pooled neighbor summary. `[A, ctx_dim]`.
    pub fn encode_history(
        &self,
        g: &mut Graph,
        pn: &ParamNodes,
        ns: &NormalizedScene,
    ) -> Result<NodeId, ModelError> {
        let mut x = g.constant(self.history_input(ns))?;
        for &(w, b) in &pn.trunk {
            let lin = g.linear(x, w, b)?;
            x = g.tanh(lin)?;
        }
        let pooled = {
            let lin = g.linear(x, pn.pool.0, pn.pool.1)?;
            g.tanh(lin)?
        };
        let mix = g.constant(self.neighbor_matrix(ns.agents.len()))?;
        let neigh = g.matmul(mix, pooled)?;
        Ok(g.concat_last(&[x, neigh])?)
    }

    fn head_to_beta(
        &self,
        g: &mut Graph,
        raw: NodeId,
    ) -> Result<(NodeId, NodeId), ModelError> {
        let m = self.config.latent.m_total;
        let a_raw = g.slice_last(raw, 0, m)?;
        let b_raw = g.slice_last(raw, m, 2 * m)?;
        let alpha = clip_concentration_node(g, a_raw)?;
        let beta = clip_concentration_node(g, b_raw)?;
        Ok((alpha, beta))
    }

    /// Prior concentrations, each `[A, M]`.
    pub fn prior(
        &self,
        g: &mut Graph,
        pn: &ParamNodes,
        ctx: NodeId,
    ) -> Result<(NodeId, NodeId), ModelError> {
        let raw = g.linear(ctx, pn.prior_head.0, pn.prior_head.1)?;
        self.head_to_beta(g, raw)
    }

    /// Posterior concentrations conditioned on the ground-truth future,
    /// each `[A, M]`.
    pub fn posterior(
        &self,
        g: &mut Graph,
        pn: &ParamNodes,
        ctx: NodeId,
        ns: &NormalizedScene,
    ) -> Result<(NodeId, NodeId), ModelError> {
        let gt = self.future_positions(ns);
        self.posterior_from_positions(g, pn, ctx, &gt)
    }

    /// Posterior conditioned on arbitrary normalized-frame future positions
    /// (predicted or synthetic); the future enters as a constant.
    pub fn posterior_from_positions(
        &self,
        g: &mut Graph,
        pn: &ParamNodes,
        ctx: NodeId,
        positions: &Tensor,
    ) -> Result<(NodeId, NodeId), ModelError> {
        let fut = g.constant(self.displacement_features(positions))?;
        let femb = {
            let lin = g.linear(fut, pn.future.0, pn.future.1)?;
            g.tanh(lin)?
        };
        let joint = g.concat_last(&[ctx, femb])?;
        let raw = g.linear(joint, pn.posterior_head.0, pn.posterior_head.1)?;
        self.head_to_beta(g, raw)
    }

    /// Context plus prior in one call.
    pub fn encode_scene(
        &self,
        g: &mut Graph,
        pn: &ParamNodes,
        ns: &NormalizedScene,
    ) -> Result<SceneNodes, ModelError> {
        let ctx = self.encode_history(g, pn, ns)?;
        let (alpha_p, beta_p) = self.prior(g, pn, ctx)?;
        Ok(SceneNodes { ctx, alpha_p, beta_p })
    }

    /// Decodes latents `z` (`[A, M]`, every entry in the open unit
    /// interval) into normalized-frame displacements and positions.
    pub fn decode(
        &self,
        g: &mut Graph,
        pn: &ParamNodes,
        ctx: NodeId,
        z: NodeId,
    ) -> Result<DecodeNodes, ModelError> {
        {
            let zt = g.value(z);
            if zt.shape != [g.value(ctx).shape[0], self.config.latent.m_total] {
                return Err(ModelError::Config {
                    detail: format!("latent shape {:?}", zt.shape),
                });
            }
            if let Some(&bad) = zt.data.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
                return Err(ModelError::Config {
                    detail: format!("latent value {bad} outside (0,1)"),
                });
            }
        }
        let mut x = g.concat_last(&[ctx, z])?;
        let n_layers = pn.decoder.len();
        for (i, &(w, b)) in pn.decoder.iter().enumerate() {
            x = g.linear(x, w, b)?;
            if i + 1 < n_layers {
                x = g.tanh(x)?;
            }
        }
        let cumsum = g.constant(cumsum_matrix())?;
        let positions = g.matmul(x, cumsum)?;
        Ok(DecodeNodes { displacements: x, positions })
    }

    /// Reconstruction + KL objective. `u_post` supplies the `A * M` uniform
    /// draws for the posterior sample, row-major by agent.
    pub fn elbo_loss(
        &self,
        g: &mut Graph,
        pn: &ParamNodes,
        ns: &NormalizedScene,
        scene_nodes: &SceneNodes,
        u_post: &[f64],
    ) -> Result<ElboNodes, ModelError> {
        let (alpha_q, beta_q) = self.posterior(g, pn, scene_nodes.ctx, ns)?;
        let z = sample_reparam(g, alpha_q, beta_q, u_post)?;
        let decoded = self.decode(g, pn, scene_nodes.ctx, z)?;
        let gt = g.constant(self.future_positions(ns))?;
        let diff = g.sub(decoded.positions, gt)?;
        let sq = g.square(diff)?;
        let mse = g.mean_all(sq)?;
        let kl_elem = kl_beta_node(g, alpha_q, beta_q, scene_nodes.alpha_p, scene_nodes.beta_p)?;
        let kl_per_agent = g.sum_axis(kl_elem, 1)?;
        let kl = g.mean_all(kl_per_agent)?;
        let elbo = g.add(mse, kl)?;
        Ok(ElboNodes { elbo, mse, kl, alpha_q, beta_q, z })
    }

    /// Best-of-K reconstruction: decode each latent sample, take the
    /// per-agent minimum of mean per-frame displacement error, average over
    /// agents. Latent draws are treated as inputs (no gradient into the
    /// prior); the argmin pattern is fixed by the forward values.
    pub fn variety_loss(
        &self,
        g: &mut Graph,
        pn: &ParamNodes,
        ns: &NormalizedScene,
        ctx: NodeId,
        z_samples: &[Tensor],
    ) -> Result<NodeId, ModelError> {
        if z_samples.is_empty() {
            return Err(ModelError::Config { detail: "variety loss needs K >= 1 samples".into() });
        }
        let a = ns.agents.len();
        let gt = g.constant(self.future_positions(ns))?;
        let mut errs = Vec::with_capacity(z_samples.len());
        for zt in z_samples {
            let z = g.constant(zt.clone())?;
            let decoded = self.decode(g, pn, ctx, z)?;
            let diff = g.sub(decoded.positions, gt)?;
            let frames = g.reshape(diff, &[a, FUTURE_LEN, 2])?;
            let dist = g.norm_last(frames, 1e-12)?;
            let err = g.mean_axis(dist, 1)?;
            errs.push(err);
        }
        // Constant one-hot masks select each agent's best sample.
        let mut best = vec![(f64::INFINITY, 0usize); a];
        for (ki, &err) in errs.iter().enumerate() {
            for (ai, &v) in g.value(err).data.iter().enumerate() {
                if v < best[ai].0 {
                    best[ai] = (v, ki);
                }
            }
        }
        let mut picked = None;
        for (ki, &err) in errs.iter().enumerate() {
            let mask: Vec<f64> =
                best.iter().map(|&(_, b)| if b == ki { 1.0 } else { 0.0 }).collect();
            let mask = g.constant(Tensor::from_vec(mask))?;
            let sel = g.mul(err, mask)?;
            picked = Some(match picked {
                None => sel,
                Some(acc) => g.add(acc, sel)?,
            });
        }
        Ok(g.mean_all(picked.expect("k >= 1"))?)
    }

    /// Draws K latent tensors `[A, M]` from the current prior values via
    /// inverse-CDF, consuming `A * M` uniforms per sample from `rng`.
    pub fn sample_prior_latents(
        &self,
        g: &Graph,
        scene_nodes: &SceneNodes,
        k: usize,
        rng: &mut Stream,
    ) -> Result<Vec<Tensor>, ModelError> {
        let alpha = g.value(scene_nodes.alpha_p);
        let beta = g.value(scene_nodes.beta_p);
        let shape = alpha.shape.clone();
        let n = alpha.numel();
        let mut out = Vec::with_capacity(k);
        for _ in 0..k {
            let mut z = Vec::with_capacity(n);
            for i in 0..n {
                z.push(inv_inc_beta(rng.u01(), alpha.data[i], beta.data[i])?);
            }
            out.push(Tensor::new(shape.clone(), z)?);
        }
        Ok(out)
    }

    /// Maps normalized-frame positions (`[A, 24]` data) back to world
    /// coordinates per agent.
    pub fn positions_to_world(
        &self,
        ns: &NormalizedScene,
        positions: &Tensor,
    ) -> Vec<Vec<[f64; 2]>> {
        ns.agents
            .iter()
            .enumerate()
            .map(|(i, ag)| {
                (0..FUTURE_LEN)
                    .map(|t| {
                        let x = positions.data[i * 2 * FUTURE_LEN + 2 * t];
                        let y = positions.data[i * 2 * FUTURE_LEN + 2 * t + 1];
                        ag.transform.to_world([x, y])
                    })
                    .collect()
            })
            .collect()
    }
}

/// Lower-triangular step-accumulation matrix: positions = displacements
/// times this, per coordinate.
fn cumsum_matrix() -> Tensor {
    let n = 2 * FUTURE_LEN;
    let mut data = vec![0.0; n * n];
    for j in 0..n {
        let (step_j, coord_j) = (j / 2, j % 2);
        for k in 0..n {
            let (step_k, coord_k) = (k / 2, k % 2);
            if coord_j == coord_k && step_j <= step_k {
                data[j * n + k] = 1.0;
            }
        }
    }
    Tensor { shape: vec![n, n], data, requires_grad: false }
}
