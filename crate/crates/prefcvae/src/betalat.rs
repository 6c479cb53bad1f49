//! Beta-distribution mathematics for the latent space.
//!
//! Covers the concentration parameterization, the closed-form KL divergence
//! between Beta distributions, differentiable sampling through the inverse
//! CDF (implicit reparameterization), density evaluation, and maximum
//! likelihood fitting used by the evaluation protocol. Everything is pure
//! and safe to call from multiple threads.

use crate::tensorgraph::special::{digamma, ln_beta, trigamma};
use crate::tensorgraph::{Graph, NodeId, Tensor, TensorError};
use thiserror::Error;

/// Concentration floor produced by [`clip_concentration`] for raw = -inf and
/// enforced when fitting; keeps the Beta unimodal with an interior mode.
pub const MIN_CONCENTRATION: f64 = 1.0 + CONC_EPS;

/// Margin above 1 in the concentration parameterization.
pub const CONC_EPS: f64 = 1e-4;

/// Guard against the clipped value rounding down to exactly 1.0.
const CONC_UNDERFLOW_FLOOR: f64 = 1.0 + 1e-12;

#[derive(Debug, Error)]
pub enum BetaError {
    #[error("invalid Beta parameters: {detail}")]
    InvalidParams { detail: String },
    #[error("{what} did not converge")]
    NoConvergence { what: &'static str },
    #[error("argument outside open unit interval: {value}")]
    DomainError { value: f64 },
    #[error("degenerate samples (variance {variance:.3e}), fit is ill-posed")]
    DegenerateSamples { variance: f64 },
    #[error(transparent)]
    Graph(#[from] TensorError),
}

/// Per-dimension concentration pair of a Beta latent.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaParams {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl BetaParams {
    /// Validates that both concentration vectors are finite, above 1, and of
    /// equal length.
    pub fn new(alpha: Vec<f64>, beta: Vec<f64>) -> Result<Self, BetaError> {
        if alpha.len() != beta.len() {
            return Err(BetaError::InvalidParams {
                detail: format!("alpha has {} dims, beta {}", alpha.len(), beta.len()),
            });
        }
        for (i, (&a, &b)) in alpha.iter().zip(&beta).enumerate() {
            if !(a.is_finite() && b.is_finite() && a > 1.0 && b > 1.0) {
                return Err(BetaError::InvalidParams {
                    detail: format!("dim {i}: alpha = {a}, beta = {b} (need finite, > 1)"),
                });
            }
        }
        Ok(Self { alpha, beta })
    }

    pub fn dim(&self) -> usize {
        self.alpha.len()
    }

    /// Interior mode (alpha-1)/(alpha+beta-2) per dimension.
    pub fn mode(&self) -> Vec<f64> {
        self.alpha
            .iter()
            .zip(&self.beta)
            .map(|(&a, &b)| mode_scalar(a, b))
            .collect()
    }
}

/// Latent layout: `m_total` dimensions of which the first `p_semantic` are
/// semantic, sampled from `[semantic_low, semantic_high]` when building
/// preference pairs.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct LatentConfig {
    pub m_total: usize,
    pub p_semantic: usize,
    pub semantic_low: f64,
    pub semantic_high: f64,
}

impl Default for LatentConfig {
    fn default() -> Self {
        Self { m_total: 2, p_semantic: 1, semantic_low: 0.1, semantic_high: 0.9 }
    }
}

impl LatentConfig {
    pub fn validate(&self) -> Result<(), BetaError> {
        if self.p_semantic == 0 || self.p_semantic > self.m_total {
            return Err(BetaError::InvalidParams {
                detail: format!(
                    "semantic dims {} must lie in 1..={}",
                    self.p_semantic, self.m_total
                ),
            });
        }
        if !(0.0 < self.semantic_low && self.semantic_low < self.semantic_high && self.semantic_high < 1.0) {
            return Err(BetaError::InvalidParams {
                detail: format!(
                    "semantic bounds ({}, {}) must satisfy 0 < low < high < 1",
                    self.semantic_low, self.semantic_high
                ),
            });
        }
        Ok(())
    }
}

/// Maps an unconstrained head output to a concentration strictly above 1.
///
/// Identity plus `1 + eps` on the positive side; an exponential-linear tail
/// `1 + eps*e^raw` on the negative side, so the value decays toward 1 but
/// never reaches it (floored just above 1 against rounding).
pub fn clip_concentration(raw: f64) -> f64 {
    if raw > 0.0 {
        1.0 + CONC_EPS + raw
    } else {
        (1.0 + CONC_EPS * raw.exp()).max(CONC_UNDERFLOW_FLOOR)
    }
}

/// Local derivative of [`clip_concentration`].
pub fn clip_concentration_grad(raw: f64) -> f64 {
    if raw > 0.0 {
        1.0
    } else {
        CONC_EPS * raw.exp()
    }
}

/// Graph-side clipping: custom node wrapping the closed-form value and
/// derivative of [`clip_concentration`], elementwise over `raw`.
pub fn clip_concentration_node(g: &mut Graph, raw: NodeId) -> Result<NodeId, BetaError> {
    let t = g.value(raw);
    let shape = t.shape.clone();
    let value: Vec<f64> = t.data.iter().map(|&x| clip_concentration(x)).collect();
    let partial: Vec<f64> = t.data.iter().map(|&x| clip_concentration_grad(x)).collect();
    let vt = Tensor::new(shape.clone(), value)?;
    let pt = Tensor::new(shape, partial)?;
    Ok(g.custom(&[raw], vt, vec![pt])?)
}

/// KL(q || p) for a single Beta dimension, closed form.
pub fn kl_beta_scalar(aq: f64, bq: f64, ap: f64, bp: f64) -> f64 {
    ln_beta(ap, bp) - ln_beta(aq, bq)
        + (aq - ap) * digamma(aq)
        + (bq - bp) * digamma(bq)
        + (ap - aq + bp - bq) * digamma(aq + bq)
}

/// KL(q || p) summed over dimensions.
pub fn kl_beta(q: &BetaParams, p: &BetaParams) -> Result<f64, BetaError> {
    if q.dim() != p.dim() {
        return Err(BetaError::InvalidParams {
            detail: format!("q has {} dims, p {}", q.dim(), p.dim()),
        });
    }
    let kl: f64 = (0..q.dim())
        .map(|i| kl_beta_scalar(q.alpha[i], q.beta[i], p.alpha[i], p.beta[i]))
        .sum();
    if !kl.is_finite() {
        return Err(BetaError::InvalidParams { detail: "non-finite KL".into() });
    }
    Ok(kl)
}

/// Elementwise KL(q || p) as a differentiable graph node; all four inputs
/// share one shape, as does the output. Callers reduce as needed.
pub fn kl_beta_node(
    g: &mut Graph,
    aq: NodeId,
    bq: NodeId,
    ap: NodeId,
    bp: NodeId,
) -> Result<NodeId, BetaError> {
    let ln_b = |g: &mut Graph, a: NodeId, b: NodeId| -> Result<NodeId, TensorError> {
        let la = g.log_gamma(a)?;
        let lb = g.log_gamma(b)?;
        let ab = g.add(a, b)?;
        let lab = g.log_gamma(ab)?;
        let s = g.add(la, lb)?;
        g.sub(s, lab)
    };
    let ln_bp = ln_b(g, ap, bp)?;
    let ln_bq = ln_b(g, aq, bq)?;
    let d_a = g.sub(aq, ap)?;
    let psi_aq = g.digamma(aq)?;
    let t1 = g.mul(d_a, psi_aq)?;
    let d_b = g.sub(bq, bp)?;
    let psi_bq = g.digamma(bq)?;
    let t2 = g.mul(d_b, psi_bq)?;
    let sum_q = g.add(aq, bq)?;
    let psi_q = g.digamma(sum_q)?;
    let neg_da = g.sub(ap, aq)?;
    let neg_db = g.sub(bp, bq)?;
    let neg = g.add(neg_da, neg_db)?;
    let t3 = g.mul(neg, psi_q)?;
    let mut kl = g.sub(ln_bp, ln_bq)?;
    kl = g.add(kl, t1)?;
    kl = g.add(kl, t2)?;
    Ok(g.add(kl, t3)?)
}

const CF_MAX_ITER: usize = 200;
const CF_EPS: f64 = 3e-14;
const CF_FPMIN: f64 = 1e-300;

/// Continued-fraction kernel of the regularized incomplete beta (modified
/// Lentz method).
fn beta_cf(z: f64, a: f64, b: f64) -> Result<f64, BetaError> {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * z / qap;
    if d.abs() < CF_FPMIN {
        d = CF_FPMIN;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=CF_MAX_ITER {
        let mf = m as f64;
        let m2 = 2.0 * mf;
        let aa = mf * (b - mf) * z / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < CF_FPMIN {
            d = CF_FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < CF_FPMIN {
            c = CF_FPMIN;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + mf) * (qab + mf) * z / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < CF_FPMIN {
            d = CF_FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < CF_FPMIN {
            c = CF_FPMIN;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < CF_EPS {
            return Ok(h);
        }
    }
    Err(BetaError::NoConvergence { what: "incomplete beta continued fraction" })
}

/// Regularized incomplete beta I_z(a, b); the CDF of Beta(a, b) at z.
/// Symmetry switch keeps the continued fraction in its fast region.
pub fn inc_beta(z: f64, a: f64, b: f64) -> Result<f64, BetaError> {
    if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
        return Err(BetaError::InvalidParams { detail: format!("a = {a}, b = {b}") });
    }
    if z <= 0.0 {
        return Ok(0.0);
    }
    if z >= 1.0 {
        return Ok(1.0);
    }
    let front = (a * z.ln() + b * (1.0 - z).ln() - ln_beta(a, b)).exp();
    if z < (a + 1.0) / (a + b + 2.0) {
        Ok(front * beta_cf(z, a, b)? / a)
    } else {
        Ok(1.0 - front * beta_cf(1.0 - z, b, a)? / b)
    }
}

/// Log-density of Beta(a, b) at z in the open unit interval.
pub fn log_pdf_scalar(z: f64, a: f64, b: f64) -> Result<f64, BetaError> {
    if !(z > 0.0 && z < 1.0) {
        return Err(BetaError::DomainError { value: z });
    }
    Ok((a - 1.0) * z.ln() + (b - 1.0) * (1.0 - z).ln() - ln_beta(a, b))
}

/// Per-dimension log-density of a latent vector.
pub fn log_pdf(params: &BetaParams, z: &[f64]) -> Result<Vec<f64>, BetaError> {
    if z.len() != params.dim() {
        return Err(BetaError::InvalidParams {
            detail: format!("z has {} dims, params {}", z.len(), params.dim()),
        });
    }
    z.iter()
        .zip(params.alpha.iter().zip(&params.beta))
        .map(|(&zi, (&a, &b))| log_pdf_scalar(zi, a, b))
        .collect()
}

/// Mode of a unimodal Beta (both concentrations above 1).
pub fn mode_scalar(a: f64, b: f64) -> f64 {
    (a - 1.0) / (a + b - 2.0)
}

const INV_TOL: f64 = 1e-10;
const INV_MAX_ITER: usize = 200;

/// Inverse CDF: the z in (0, 1) with |I_z(a, b) - u| <= 1e-10. Newton steps
/// guarded by a shrinking bisection bracket.
pub fn inv_inc_beta(u: f64, a: f64, b: f64) -> Result<f64, BetaError> {
    if !(u > 0.0 && u < 1.0) {
        return Err(BetaError::DomainError { value: u });
    }
    let mut lo = 0.0_f64;
    let mut hi = 1.0_f64;
    let mut z = a / (a + b);
    for _ in 0..INV_MAX_ITER {
        let err = inc_beta(z, a, b)? - u;
        if err.abs() <= INV_TOL {
            return Ok(z);
        }
        if err > 0.0 {
            hi = z;
        } else {
            lo = z;
        }
        let pdf = log_pdf_scalar(z, a, b)?.exp();
        let newton = z - err / pdf;
        z = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    Err(BetaError::NoConvergence { what: "inverse incomplete beta" })
}

/// Sampled z together with its implicit-gradient partials:
/// `dz/dtheta = -(dI_z/dtheta) / f(z)`, with the CDF sensitivities taken by
/// central finite differences over the concentrations.
pub fn sample_with_partials(u: f64, a: f64, b: f64) -> Result<(f64, f64, f64), BetaError> {
    const H: f64 = 1e-4;
    let z = inv_inc_beta(u, a, b)?;
    let pdf = log_pdf_scalar(z, a, b)?.exp();
    let di_da = (inc_beta(z, a + H, b)? - inc_beta(z, a - H, b)?) / (2.0 * H);
    let di_db = (inc_beta(z, a, b + H)? - inc_beta(z, a, b - H)?) / (2.0 * H);
    Ok((z, -di_da / pdf, -di_db / pdf))
}

/// Differentiable Beta draw: inverts the CDF at each element of `u` and
/// installs the implicit-reparameterization partials as a custom node over
/// the concentration nodes `alpha`, `beta` (equal shapes).
pub fn sample_reparam(
    g: &mut Graph,
    alpha: NodeId,
    beta: NodeId,
    u: &[f64],
) -> Result<NodeId, BetaError> {
    let (ta, tb) = (g.value(alpha).clone(), g.value(beta).clone());
    if ta.shape != tb.shape || ta.numel() != u.len() {
        return Err(BetaError::InvalidParams {
            detail: format!(
                "alpha {:?}, beta {:?}, {} uniform draws",
                ta.shape,
                tb.shape,
                u.len()
            ),
        });
    }
    let mut z = Vec::with_capacity(u.len());
    let mut pa = Vec::with_capacity(u.len());
    let mut pb = Vec::with_capacity(u.len());
    for ((&ui, &ai), &bi) in u.iter().zip(&ta.data).zip(&tb.data) {
        let (zi, dza, dzb) = sample_with_partials(ui, ai, bi)?;
        z.push(zi);
        pa.push(dza);
        pb.push(dzb);
    }
    let shape = ta.shape.clone();
    let value = Tensor::new(shape.clone(), z)?;
    let part_a = Tensor::new(shape.clone(), pa)?;
    let part_b = Tensor::new(shape, pb)?;
    Ok(g.custom(&[alpha, beta], value, vec![part_a, part_b])?)
}

/// Method-of-moments estimate, clamped into the unimodal domain.
pub fn fit_moments(samples: &[f64]) -> Result<(f64, f64), BetaError> {
    if samples.len() < 2 {
        return Err(BetaError::InvalidParams {
            detail: format!("need at least 2 samples, got {}", samples.len()),
        });
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|&z| (z - mean).powi(2)).sum::<f64>() / n;
    let var = var.max(1e-12);
    let scale = mean * (1.0 - mean) / var - 1.0;
    let a = (mean * scale).max(MIN_CONCENTRATION);
    let b = ((1.0 - mean) * scale).max(MIN_CONCENTRATION);
    Ok((a, b))
}

/// Mean log-likelihood of samples under Beta(a, b).
pub fn log_likelihood(samples: &[f64], a: f64, b: f64) -> f64 {
    let n = samples.len() as f64;
    let s_ln: f64 = samples.iter().map(|&z| z.ln()).sum::<f64>() / n;
    let s_ln1m: f64 = samples.iter().map(|&z| (1.0 - z).ln()).sum::<f64>() / n;
    (a - 1.0) * s_ln + (b - 1.0) * s_ln1m - ln_beta(a, b)
}

/// Maximum-likelihood Beta fit: Newton iteration on the stationarity
/// conditions, method-of-moments initialized, projected onto
/// concentrations >= 1 + 1e-4, with backtracking so the likelihood never
/// decreases below the initializer's.
pub fn fit_mle(samples: &[f64]) -> Result<(f64, f64), BetaError> {
    if samples.len() < 10 {
        return Err(BetaError::InvalidParams {
            detail: format!("need at least 10 samples, got {}", samples.len()),
        });
    }
    for &z in samples {
        if !(z > 0.0 && z < 1.0) {
            return Err(BetaError::DomainError { value: z });
        }
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|&z| (z - mean).powi(2)).sum::<f64>() / n;
    if var < 1e-12 {
        return Err(BetaError::DegenerateSamples { variance: var });
    }
    let (mut a, mut b) = fit_moments(samples)?;
    let s1 = samples.iter().map(|&z| z.ln()).sum::<f64>() / n;
    let s2 = samples.iter().map(|&z| (1.0 - z).ln()).sum::<f64>() / n;
    let mut ll = log_likelihood(samples, a, b);
    for _ in 0..100 {
        let psi_ab = digamma(a + b);
        let g1 = digamma(a) - psi_ab - s1;
        let g2 = digamma(b) - psi_ab - s2;
        if g1.hypot(g2) <= 1e-8 {
            break;
        }
        let tab = -trigamma(a + b);
        let taa = trigamma(a) + tab;
        let tbb = trigamma(b) + tab;
        let det = taa * tbb - tab * tab;
        if det.abs() < 1e-300 {
            break;
        }
        let da = -(tbb * g1 - tab * g2) / det;
        let db = -(taa * g2 - tab * g1) / det;
        let mut accepted = false;
        let mut step = 1.0;
        for _ in 0..40 {
            let na = (a + step * da).max(MIN_CONCENTRATION);
            let nb = (b + step * db).max(MIN_CONCENTRATION);
            let nll = log_likelihood(samples, na, nb);
            if nll >= ll && (na != a || nb != b) {
                a = na;
                b = nb;
                ll = nll;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rngstream::{Stream, StreamKind};
    use approx::assert_abs_diff_eq;
    use crate::tensorgraph::Graph;
    use proptest::prelude::*;

    /// 2048-cell midpoint integration over (0, 1), endpoints excluded.
    fn midpoint<F: Fn(f64) -> f64>(f: F) -> f64 {
        let n = 2048;
        let h = 1.0 / n as f64;
        (0..n).map(|k| f((k as f64 + 0.5) * h)).sum::<f64>() * h
    }

    #[test]
    fn clip_concentration_examples() {
        assert_eq!(clip_concentration(0.0), 1.0 + 1e-4);
        assert_abs_diff_eq!(clip_concentration(2.0), 3.0 + 1e-4, epsilon = 1e-12);
        let tail = clip_concentration(-20.0);
        assert!(tail > 1.0, "tail must stay strictly above 1, got {tail}");
        assert!(tail < 1.0 + 1e-4);
        // Saturated inputs still produce a value usable as a concentration.
        assert!(clip_concentration(-1e6) > 1.0);
    }

    #[test]
    fn clip_concentration_node_matches_scalar_and_differentiates() {
        let mut g = Graph::new();
        let raw = g
            .insert(Tensor::from_vec(vec![-2.0, -0.5, 0.0, 0.7, 3.0]).with_grad())
            .unwrap();
        let c = clip_concentration_node(&mut g, raw).unwrap();
        for (i, &x) in [-2.0, -0.5, 0.0, 0.7, 3.0].iter().enumerate() {
            assert_eq!(g.value(c).data[i], clip_concentration(x));
        }
        let root = g.sum_all(c).unwrap();
        g.backward(root).unwrap();
        let h = 1e-6;
        for (i, &x) in [-2.0, -0.5, 0.0, 0.7, 3.0].iter().enumerate() {
            if x == 0.0 {
                continue; // kink between the two branches
            }
            let fd = (clip_concentration(x + h) - clip_concentration(x - h)) / (2.0 * h);
            let an = g.grad(raw).unwrap().data[i];
            assert!((an - fd).abs() <= 1e-6 * fd.abs().max(1.0), "at {x}: {an} vs {fd}");
        }
    }

    #[test]
    fn kl_of_identical_distributions_is_zero() {
        let q = BetaParams::new(vec![2.0, 5.5], vec![3.0, 1.2]).unwrap();
        assert!(kl_beta(&q, &q).unwrap().abs() < 1e-12);
    }

    #[test]
    fn kl_matches_numeric_integration_near_uniform_prior() {
        let (aq, bq) = (2.0, 2.0);
        let (ap, bp) = (1.0001, 1.0001);
        let numeric = midpoint(|z| {
            let lq = log_pdf_scalar(z, aq, bq).unwrap();
            let lp = log_pdf_scalar(z, ap, bp).unwrap();
            lq.exp() * (lq - lp)
        });
        let closed = kl_beta_scalar(aq, bq, ap, bp);
        assert!((closed - numeric).abs() < 1e-4, "{closed} vs {numeric}");
    }

    #[test]
    fn kl_mirror_symmetry() {
        let forward = kl_beta_scalar(5.0, 2.0, 2.0, 5.0);
        let mirrored = kl_beta_scalar(2.0, 5.0, 5.0, 2.0);
        assert!((forward - mirrored).abs() < 1e-12);
    }

    #[test]
    fn kl_node_value_and_gradients_match_references() {
        let mut g = Graph::new();
        let aq = g.insert(Tensor::from_vec(vec![2.3]).with_grad()).unwrap();
        let bq = g.insert(Tensor::from_vec(vec![3.1]).with_grad()).unwrap();
        let ap = g.insert(Tensor::from_vec(vec![1.4]).with_grad()).unwrap();
        let bp = g.insert(Tensor::from_vec(vec![1.9]).with_grad()).unwrap();
        let kl = kl_beta_node(&mut g, aq, bq, ap, bp).unwrap();
        let root = g.sum_all(kl).unwrap();
        assert!((g.scalar_value(root) - kl_beta_scalar(2.3, 3.1, 1.4, 1.9)).abs() < 1e-12);
        g.backward(root).unwrap();
        let h = 1e-6;
        let fd = |f: &dyn Fn(f64) -> f64| (f(h) - f(-h)) / (2.0 * h);
        let cases: Vec<(NodeId, Box<dyn Fn(f64) -> f64>)> = vec![
            (aq, Box::new(|d| kl_beta_scalar(2.3 + d, 3.1, 1.4, 1.9))),
            (bq, Box::new(|d| kl_beta_scalar(2.3, 3.1 + d, 1.4, 1.9))),
            (ap, Box::new(|d| kl_beta_scalar(2.3, 3.1, 1.4 + d, 1.9))),
            (bp, Box::new(|d| kl_beta_scalar(2.3, 3.1, 1.4, 1.9 + d))),
        ];
        for (id, f) in &cases {
            let an = g.grad(*id).unwrap().data[0];
            let want = fd(f.as_ref());
            assert!(
                ((an - want) / want.abs().max(1e-6)).abs() < 1e-4,
                "grad {an} vs fd {want}"
            );
        }
    }

    #[test]
    fn symmetric_beta_median_is_half() {
        for &c in &[1.3, 2.0, 7.7] {
            assert!((inv_inc_beta(0.5, c, c).unwrap() - 0.5).abs() < 1e-9);
        }
    }

    #[test]
    fn cdf_inverse_round_trip() {
        for &(a, b) in &[(1.01, 1.01), (2.0, 2.0), (5.0, 2.0), (1.2, 9.0), (18.0, 17.0)] {
            for k in 1..100 {
                let u = k as f64 / 100.0;
                let z = inv_inc_beta(u, a, b).unwrap();
                assert!(z > 0.0 && z < 1.0);
                let back = inc_beta(z, a, b).unwrap();
                assert!((back - u).abs() < 1e-8, "({a},{b}) u={u}: {back}");
            }
        }
    }

    #[test]
    fn monte_carlo_mean_of_beta_2_2() {
        let mut rng = Stream::new(11, StreamKind::Eval);
        let n = 10_000;
        let mean = (0..n)
            .map(|_| inv_inc_beta(rng.u01(), 2.0, 2.0).unwrap())
            .sum::<f64>()
            / n as f64;
        // std of Beta(2,2) is sqrt(0.05); allow 3 standard errors.
        let tol = 3.0 * 0.05_f64.sqrt() / (n as f64).sqrt();
        assert!((mean - 0.5).abs() < tol, "mean {mean}, tol {tol}");
    }

    #[test]
    fn pathwise_moment_derivative_matches_analytic() {
        // d/d alpha of E[z] at Beta(2,2) is beta/(alpha+beta)^2 = 0.125.
        let mut rng = Stream::new(12, StreamKind::Eval);
        let n = 10_000;
        let mean_dz = (0..n)
            .map(|_| sample_with_partials(rng.u01(), 2.0, 2.0).unwrap().1)
            .sum::<f64>()
            / n as f64;
        assert!((mean_dz - 0.125).abs() < 0.01, "pathwise estimate {mean_dz}");
    }

    #[test]
    fn sampler_gradient_flows_through_graph() {
        let mut g = Graph::new();
        let a = g.insert(Tensor::from_vec(vec![2.0]).with_grad()).unwrap();
        let b = g.insert(Tensor::from_vec(vec![2.0]).with_grad()).unwrap();
        let z = sample_reparam(&mut g, a, b, &[0.3]).unwrap();
        let root = g.sum_all(z).unwrap();
        g.backward(root).unwrap();
        let (_, dza, dzb) = sample_with_partials(0.3, 2.0, 2.0).unwrap();
        assert_eq!(g.grad(a).unwrap().data[0], dza);
        assert_eq!(g.grad(b).unwrap().data[0], dzb);
        // At a symmetric Beta with u < 0.5, raising alpha moves mass right.
        assert!(dza > 0.0 && dzb < 0.0);
    }

    #[test]
    fn log_pdf_examples() {
        // Near-uniform density is close to 1 everywhere.
        assert!(log_pdf_scalar(0.5, 1.0001, 1.0001).unwrap().abs() < 1e-3);
        // Beta(2,2) at the mode: density 1.5.
        assert!((log_pdf_scalar(0.5, 2.0, 2.0).unwrap() - 1.5_f64.ln()).abs() < 1e-12);
        assert!(log_pdf_scalar(0.0, 2.0, 2.0).is_err());
        assert!(log_pdf_scalar(1.0, 2.0, 2.0).is_err());
    }

    #[test]
    fn density_normalizes_on_the_grid() {
        for &(a, b) in &[(1.0001, 1.0001), (2.0, 2.0), (5.0, 2.0), (12.0, 8.0)] {
            let mass = midpoint(|z| log_pdf_scalar(z, a, b).unwrap().exp());
            assert!((mass - 1.0).abs() < 1e-3, "({a},{b}) integrates to {mass}");
        }
    }

    #[test]
    fn mode_examples() {
        assert_eq!(mode_scalar(2.0, 2.0), 0.5);
        assert!((mode_scalar(5.0, 2.0) - 0.8).abs() < 1e-12);
        assert!((mode_scalar(1.5, 3.5) - 1.0 / 6.0).abs() < 1e-12);
        let p = BetaParams::new(vec![2.0, 5.0], vec![2.0, 2.0]).unwrap();
        assert_eq!(p.mode(), vec![0.5, 0.8]);
    }

    #[test]
    fn moment_init_recovers_two_two() {
        // mean 0.5, variance 0.05 solves to alpha = beta = 2.
        let samples = [0.5 - 0.05_f64.sqrt(), 0.5 + 0.05_f64.sqrt()];
        let (a, b) = fit_moments(&samples).unwrap();
        assert!((a - 2.0).abs() < 1e-9 && (b - 2.0).abs() < 1e-9, "({a}, {b})");
    }

    #[test]
    fn mle_recovers_known_parameters() {
        let mut rng = Stream::new(13, StreamKind::Eval);
        let samples: Vec<f64> = (0..50_000)
            .map(|_| inv_inc_beta(rng.u01(), 3.0, 7.0).unwrap())
            .collect();
        let (a, b) = fit_mle(&samples).unwrap();
        assert!((2.8..=3.2).contains(&a), "alpha {a}");
        assert!((6.6..=7.4).contains(&b), "beta {b}");
    }

    #[test]
    fn mle_on_concentrated_samples() {
        let mut rng = Stream::new(14, StreamKind::Eval);
        let samples: Vec<f64> = (0..200).map(|_| 0.5 + rng.uniform(-0.01, 0.01)).collect();
        let (a, b) = fit_mle(&samples).unwrap();
        assert!(a > 100.0 && b > 100.0, "({a}, {b})");
        assert!((a - b).abs() / a < 0.2, "({a}, {b}) should be nearly equal");
    }

    #[test]
    fn mle_rejects_degenerate_samples() {
        let samples = vec![0.5; 64];
        assert!(matches!(fit_mle(&samples), Err(BetaError::DegenerateSamples { .. })));
    }

    #[test]
    fn mle_never_fits_worse_than_moments() {
        let mut rng = Stream::new(15, StreamKind::Eval);
        for &(a, b) in &[(1.2, 4.0), (2.0, 2.0), (9.0, 3.0)] {
            let samples: Vec<f64> =
                (0..500).map(|_| inv_inc_beta(rng.u01(), a, b).unwrap()).collect();
            let (ma, mb) = fit_moments(&samples).unwrap();
            let (fa, fb) = fit_mle(&samples).unwrap();
            assert!(
                log_likelihood(&samples, fa, fb) >= log_likelihood(&samples, ma, mb),
                "({a},{b}): MLE worse than moments"
            );
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn kl_is_nonnegative_and_zero_only_at_equality(
            aq in 1.0001f64..20.0,
            bq in 1.0001f64..20.0,
            ap in 1.0001f64..20.0,
            bp in 1.0001f64..20.0,
        ) {
            let kl = kl_beta_scalar(aq, bq, ap, bp);
            prop_assert!(kl >= -1e-12);
            if (aq - ap).abs() > 1e-3 || (bq - bp).abs() > 1e-3 {
                prop_assert!(kl > 0.0);
            }
            prop_assert!(kl_beta_scalar(aq, bq, aq, bq).abs() < 1e-9);
        }

        #[test]
        fn samples_stay_inside_open_interval(
            a in 1.01f64..20.0,
            b in 1.01f64..20.0,
            u in 0.001f64..0.999,
        ) {
            let z = inv_inc_beta(u, a, b).unwrap();
            prop_assert!(z > 0.0 && z < 1.0);
        }

        #[test]
        fn mle_dominates_moment_init(seed in 0u64..1000, a in 1.05f64..9.0, b in 1.05f64..9.0) {
            let mut rng = Stream::new(seed, StreamKind::Eval);
            let samples: Vec<f64> = (0..120)
                .map(|_| inv_inc_beta(rng.u01(), a, b).unwrap())
                .collect();
            let (ma, mb) = fit_moments(&samples).unwrap();
            let (fa, fb) = fit_mle(&samples).unwrap();
            prop_assert!(
                log_likelihood(&samples, fa, fb) + 1e-12 >= log_likelihood(&samples, ma, mb)
            );
        }
    }
}
