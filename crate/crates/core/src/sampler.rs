//! Relation-aware relevance distributions and differentiable top-K neighbor
//! selection via repeated Gumbel-Softmax draws with masking.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::cograph::Neighbor;
use crate::error::{Error, Result};
use crate::ids::{ItemId, UserId};
use crate::numeric::{axpy, dot, log_sum_exp, softmax, softmax_in_place, ParamId, ParamStore, SparseGrad};

/// Neighbor scoring strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    /// Learned relevance with Gumbel-Softmax sampling; gradients reach the scorer.
    Gs,
    /// Uniformly random K neighbors.
    Uniform,
    /// Categorical over `−‖r − e‖₂`.
    L2,
    /// Categorical over `⟨r, e⟩`.
    Inner,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Uniform, Strategy::L2, Strategy::Inner, Strategy::Gs];

    /// Whether the selection is differentiable w.r.t. model parameters.
    pub fn is_learned(self) -> bool {
        self == Strategy::Gs
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Gs => "gs",
            Strategy::Uniform => "uniform",
            Strategy::L2 => "l2",
            Strategy::Inner => "inner",
        })
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gs" => Ok(Strategy::Gs),
            "uniform" => Ok(Strategy::Uniform),
            "l2" => Ok(Strategy::L2),
            "inner" => Ok(Strategy::Inner),
            other => Err(Error::Config(format!("unknown sampling strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeRef {
    User(UserId),
    Item(ItemId),
}

impl NodeRef {
    /// Stable key for RNG stream derivation.
    pub fn stream_key(self) -> u64 {
        match self {
            NodeRef::User(u) => u.0 as u64,
            NodeRef::Item(i) => (1 << 32) | i.0 as u64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceDistribution {
    pub node: NodeRef,
    /// Neighbor items in the graph's canonical order.
    pub neighbor_ids: Vec<ItemId>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

impl RelevanceDistribution {
    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    /// A distribution from raw logits.
    pub fn from_logits(node: NodeRef, neighbor_ids: Vec<ItemId>, logits: Vec<f64>) -> Result<Self> {
        if logits.is_empty() {
            return Err(Error::EmptyNeighbors);
        }
        if logits.len() != neighbor_ids.len() {
            return Err(Error::LengthMismatch {
                expected: neighbor_ids.len(),
                got: logits.len(),
            });
        }
        let probs = softmax(&logits)?;
        Ok(Self {
            node,
            neighbor_ids,
            logits,
            probs,
        })
    }
}

/// `logit_j = w · [r_j ‖ e_j] + b`, softmax over the neighbor list.
pub fn relevance_scores(
    node: NodeRef,
    neighbors: &[Neighbor],
    params: &ParamStore,
) -> Result<RelevanceDistribution> {
    let d = params.dim;
    let w = params.sampler_w();
    let (w_rel, w_item) = w.split_at(d);
    let b = params.sampler_b();
    let logits = neighbors
        .iter()
        .map(|n| dot(w_rel, params.relation(n.relation.index())) + dot(w_item, params.item(n.item.index())) + b)
        .collect();
    RelevanceDistribution::from_logits(node, neighbors.iter().map(|n| n.item).collect(), logits)
}

/// Accumulates the gradient of [`relevance_scores`]' logits into `grad`.
pub fn relevance_backward(
    neighbors: &[Neighbor],
    params: &ParamStore,
    dlogits: &[f64],
    grad: &mut SparseGrad,
) {
    let d = params.dim;
    let (w_rel, w_item) = params.sampler_w().split_at(d);
    let mut dw = vec![0.0; 2 * d];
    let mut db = 0.0;
    for (n, &g) in neighbors.iter().zip(dlogits) {
        let r = params.relation(n.relation.index());
        let e = params.item(n.item.index());
        for k in 0..d {
            dw[k] += g * r[k];
            dw[d + k] += g * e[k];
        }
        db += g;
        let dr = grad.block(ParamId::RelationEmb, n.relation.index(), d);
        axpy(g, w_rel, dr);
        let de = grad.block(ParamId::ItemEmb, n.item.index(), d);
        axpy(g, w_item, de);
    }
    axpy(1.0, &dw, grad.block(ParamId::SamplerW, 0, 2 * d));
    grad.block(ParamId::SamplerB, 0, 1)[0] += db;
}

/// Non-learned scorers for the sampling ablation. `Gs` defers to
/// [`relevance_scores`].
pub fn ablation_scores(
    node: NodeRef,
    neighbors: &[Neighbor],
    params: &ParamStore,
    strategy: Strategy,
) -> Result<RelevanceDistribution> {
    let ids = neighbors.iter().map(|n| n.item).collect();
    let pair = |n: &Neighbor| (params.relation(n.relation.index()), params.item(n.item.index()));
    let logits = match strategy {
        Strategy::Gs => return relevance_scores(node, neighbors, params),
        Strategy::Uniform => vec![0.0; neighbors.len()],
        Strategy::L2 => neighbors
            .iter()
            .map(|n| {
                let (r, e) = pair(n);
                -r.iter().zip(e).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
            })
            .collect(),
        Strategy::Inner => neighbors
            .iter()
            .map(|n| {
                let (r, e) = pair(n);
                dot(r, e)
            })
            .collect(),
    };
    RelevanceDistribution::from_logits(node, ids, logits)
}

/// Result of top-K neighbor selection.
#[derive(Debug, Clone, PartialEq)]
pub struct KHotSelection {
    /// Sum of the soft draws, length `n`.
    pub soft: Vec<f64>,
    /// Selected positions in draw order; distinct, `min(K, n)` of them.
    pub hard_indices: Vec<usize>,
    /// The individual soft draws, `min(K, n)` rows of length `n`.
    pub draws: Vec<Vec<f64>>,
    /// Gumbel noise, `min(K, n)` rows of length `n`, row-major. Empty for
    /// deterministic selections.
    pub gumbel_noise: Vec<f64>,
    pub tau: f64,
}

impl KHotSelection {
    pub fn len(&self) -> usize {
        self.soft.len()
    }

    pub fn is_empty(&self) -> bool {
        self.soft.is_empty()
    }

    /// Exact 0/1 K-hot vector of the hard selection.
    pub fn hard(&self) -> Vec<f64> {
        let mut h = vec![0.0; self.soft.len()];
        for &i in &self.hard_indices {
            h[i] = 1.0;
        }
        h
    }

    /// Maps a gradient w.r.t. `soft` to a gradient w.r.t. the distribution's
    /// logits, holding the noise and the hard picks fixed.
    pub fn backward(&self, dist: &RelevanceDistribution, dsoft: &[f64]) -> Vec<f64> {
        let n = self.soft.len();
        let mut dlogp = vec![0.0; n];
        for draw in &self.draws {
            let inner = dot(draw, dsoft);
            for j in 0..n {
                dlogp[j] += draw[j] * (dsoft[j] - inner) / self.tau;
            }
        }
        // log p = logits − logsumexp(logits)
        let total: f64 = dlogp.iter().sum();
        dlogp
            .iter()
            .zip(&dist.probs)
            .map(|(g, p)| g - p * total)
            .collect()
    }
}

/// Lower clamp for the uniform variate behind each Gumbel sample.
pub const GUMBEL_U_MIN: f64 = 1e-20;
/// Upper clamp for the uniform variate behind each Gumbel sample.
pub const GUMBEL_U_MAX: f64 = 1.0 - 1e-7;

/// One standard Gumbel sample `−ln(−ln u)`.
pub fn gumbel<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.gen::<f64>().clamp(GUMBEL_U_MIN, GUMBEL_U_MAX);
    -(-u.ln()).ln()
}

/// A `min(k, n) × n` noise matrix.
pub fn gumbel_noise<R: Rng + ?Sized>(rng: &mut R, n: usize, k: usize) -> Vec<f64> {
    (0..k.min(n) * n).map(|_| gumbel(rng)).collect()
}

/// Draws a K-hot selection with fresh noise from `rng`.
pub fn gumbel_topk<R: Rng + ?Sized>(
    dist: &RelevanceDistribution,
    k: usize,
    tau: f64,
    rng: &mut R,
) -> Result<KHotSelection> {
    check_k_tau(k, tau)?;
    let noise = gumbel_noise(rng, dist.len(), k);
    gumbel_topk_with_noise(dist, k, tau, noise)
}

fn check_k_tau(k: usize, tau: f64) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidArgument(format!("temperature must be > 0, got {tau}")));
    }
    Ok(())
}

/// Draws a K-hot selection with a given noise matrix.
///
/// Each of the `min(K, n)` draws is `softmax((log p + g) / τ)` over the
/// positions not yet selected; its argmax is then excluded from later draws.
pub fn gumbel_topk_with_noise(
    dist: &RelevanceDistribution,
    k: usize,
    tau: f64,
    noise: Vec<f64>,
) -> Result<KHotSelection> {
    check_k_tau(k, tau)?;
    let n = dist.len();
    let rounds = k.min(n);
    if noise.len() != rounds * n {
        return Err(Error::LengthMismatch {
            expected: rounds * n,
            got: noise.len(),
        });
    }
    let lse = log_sum_exp(&dist.logits);
    let mut masked = vec![false; n];
    let mut soft = vec![0.0; n];
    let mut draws = Vec::with_capacity(rounds);
    let mut hard_indices = Vec::with_capacity(rounds);
    for g in noise.chunks_exact(n.max(1)).take(rounds) {
        let mut z: Vec<f64> = (0..n)
            .map(|j| {
                if masked[j] {
                    f64::NEG_INFINITY
                } else {
                    (dist.logits[j] - lse + g[j]) / tau
                }
            })
            .collect();
        let mut best = usize::MAX;
        for j in 0..n {
            if !masked[j] && (best == usize::MAX || z[j] > z[best]) {
                best = j;
            }
        }
        softmax_in_place(&mut z);
        for (s, y) in soft.iter_mut().zip(&z) {
            *s += y;
        }
        masked[best] = true;
        hard_indices.push(best);
        draws.push(z);
    }
    Ok(KHotSelection {
        soft,
        hard_indices,
        draws,
        gumbel_noise: noise,
        tau,
    })
}

/// The K most probable neighbors, ties broken by smaller neighbor id.
pub fn deterministic_topk(dist: &RelevanceDistribution, k: usize) -> KHotSelection {
    let n = dist.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        dist.probs[b]
            .total_cmp(&dist.probs[a])
            .then(dist.neighbor_ids[a].cmp(&dist.neighbor_ids[b]))
    });
    order.truncate(k);
    let mut soft = vec![0.0; n];
    for &i in &order {
        soft[i] = 1.0;
    }
    KHotSelection {
        soft,
        hard_indices: order,
        draws: Vec::new(),
        gumbel_noise: Vec::new(),
        tau: 0.0,
    }
}
