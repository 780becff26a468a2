//! Preference-aware aggregation, scoring, the pairwise ranking objective with
//! hand-derived gradients, and the training loop.
//!
//! For a node with self embedding `s`, query `q`, and neighbors `j` with
//! attention keys `k_j`, embeddings `e_j` and K-hot gate `a_j`:
//!
//! ```text
//! c_j   = ⟨q, k_j⟩
//! φ_j   = a_j · exp(c_j) / Σ_m exp(c_m)
//! out   = σ(W (s + Σ_j φ_j e_j) + b)
//! ```
//!
//! Items use the user as query and relation embeddings as keys; users use
//! their own embedding as query and the interacted items as keys.

use std::collections::HashMap;

use rand::Rng;

use crate::cograph::{Neighbor, RelationalGraph};
use crate::config::{AttentionMode, BprInput, KHotMode, TrainConfig};
use crate::error::{Error, Result};
use crate::graph::InteractionGraph;
use crate::ids::{ItemId, UserId};
use crate::numeric::{
    axpy, dot, init_params, sigmoid, softmax_backward, softplus, GradStore, Optimizer, ParamId,
    ParamStore, Shapes, SparseGrad,
};
use crate::par;
use crate::rng;
use crate::sampler::{
    ablation_scores, deterministic_topk, gumbel_topk, relevance_backward, KHotSelection, NodeRef,
    RelevanceDistribution, Strategy,
};

const SHUFFLE_STREAM: u64 = 0x5f1e;
const NEGATIVE_STREAM: u64 = 0x2e9a;
const NOISE_STREAM: u64 = 0x6e01;
const INFERENCE_STREAM: u64 = 0x1f3c;
const TRIPLET_CHUNK: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BprTriplet {
    pub user: UserId,
    pub pos_item: ItemId,
    pub neg_item: ItemId,
}

/// Neighbor selection for one node plus the gate fed to attention.
#[derive(Debug, Clone)]
pub struct NodeSelection {
    pub dist: RelevanceDistribution,
    pub selection: KHotSelection,
    /// `a_j` per neighbor position.
    pub gate: Vec<f64>,
    /// Whether gradients flow from the gate into the learned scorer.
    learned: bool,
}

impl NodeSelection {
    /// Training-time selection. Returns `None` for isolated nodes. Nodes with
    /// at most `k` neighbors keep all of them with gate 1 and no sampling.
    pub fn train<R: Rng + ?Sized>(
        node: NodeRef,
        neighbors: &[Neighbor],
        params: &ParamStore,
        cfg: &TrainConfig,
        tau: f64,
        rng: &mut R,
    ) -> Result<Option<Self>> {
        if neighbors.is_empty() {
            return Ok(None);
        }
        let dist = ablation_scores(node, neighbors, params, cfg.strategy)?;
        if neighbors.len() <= cfg.k {
            return Ok(Some(Self::everything(dist)));
        }
        let selection = gumbel_topk(&dist, cfg.k, tau, rng)?;
        let learned = cfg.strategy.is_learned();
        let gate = match (learned, cfg.khot) {
            (true, KHotMode::Soft) => selection.soft.clone(),
            _ => selection.hard(),
        };
        Ok(Some(Self {
            dist,
            selection,
            gate,
            learned,
        }))
    }

    /// Inference-time selection: the `k` most probable neighbors, hard gate.
    /// Uniform scores carry no ranking, so that strategy takes a random
    /// `k`-subset drawn from a stream keyed by `seed` and the node.
    pub fn inference(
        node: NodeRef,
        neighbors: &[Neighbor],
        params: &ParamStore,
        strategy: Strategy,
        k: usize,
        seed: u64,
    ) -> Result<Option<Self>> {
        if neighbors.is_empty() {
            return Ok(None);
        }
        let dist = ablation_scores(node, neighbors, params, strategy)?;
        if neighbors.len() <= k {
            return Ok(Some(Self::everything(dist)));
        }
        let selection = if strategy == Strategy::Uniform {
            let mut rng = rng::stream(seed, &[INFERENCE_STREAM, node.stream_key()]);
            let mut s = gumbel_topk(&dist, k, 1.0, &mut rng)?;
            s.soft = s.hard();
            s
        } else {
            deterministic_topk(&dist, k)
        };
        let gate = selection.soft.clone();
        Ok(Some(Self {
            dist,
            selection,
            gate,
            learned: false,
        }))
    }

    fn everything(dist: RelevanceDistribution) -> Self {
        let n = dist.len();
        let selection = KHotSelection {
            soft: vec![1.0; n],
            hard_indices: (0..n).collect(),
            draws: Vec::new(),
            gumbel_noise: Vec::new(),
            tau: 0.0,
        };
        Self {
            dist,
            gate: vec![1.0; n],
            selection,
            learned: false,
        }
    }

    fn backward(&self, neighbors: &[Neighbor], params: &ParamStore, dgate: &[f64], grad: &mut SparseGrad) {
        if self.learned {
            let dlogits = self.selection.backward(&self.dist, dgate);
            relevance_backward(neighbors, params, &dlogits, grad);
        }
    }
}

/// Values from one aggregation kept for the backward pass.
#[derive(Debug, Clone)]
struct AggTrace {
    /// `exp(c_j − max c)`.
    expc: Vec<f64>,
    /// Normalizer of `φ`.
    norm: f64,
    phi: Vec<f64>,
    message: Vec<f64>,
    out: Vec<f64>,
}

struct AggInputs<'a> {
    self_emb: &'a [f64],
    query: &'a [f64],
    keys: Vec<&'a [f64]>,
    neigh: Vec<&'a [f64]>,
}

fn item_inputs<'a>(params: &'a ParamStore, rg: &RelationalGraph, item: ItemId, user: UserId) -> AggInputs<'a> {
    let ns = rg.item_neighbors(item);
    AggInputs {
        self_emb: params.item(item.index()),
        query: params.user(user.index()),
        keys: ns.iter().map(|n| params.relation(n.relation.index())).collect(),
        neigh: ns.iter().map(|n| params.item(n.item.index())).collect(),
    }
}

fn user_inputs<'a>(params: &'a ParamStore, rg: &RelationalGraph, user: UserId) -> AggInputs<'a> {
    let ns = rg.user_neighbors(user);
    let rows: Vec<&[f64]> = ns.iter().map(|n| params.item(n.item.index())).collect();
    AggInputs {
        self_emb: params.user(user.index()),
        query: params.user(user.index()),
        keys: rows.clone(),
        neigh: rows,
    }
}

fn aggregate_forward(params: &ParamStore, x: &AggInputs, gate: &[f64], mode: AttentionMode) -> AggTrace {
    let d = params.dim;
    let n = x.neigh.len();
    // Item-side keys repeat across runs of one relation; score each run once.
    let mut c = Vec::with_capacity(n);
    for (j, k) in x.keys.iter().enumerate() {
        let v = if j > 0 && std::ptr::eq(*k, x.keys[j - 1]) { c[j - 1] } else { dot(x.query, k) };
        c.push(v);
    }
    let cmax = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut expc = Vec::with_capacity(n);
    for j in 0..n {
        let v = if j > 0 && c[j] == c[j - 1] { expc[j - 1] } else { (c[j] - cmax).exp() };
        expc.push(v);
    }
    let norm = match mode {
        AttentionMode::Full => expc.iter().sum(),
        AttentionMode::Selected => expc.iter().zip(gate).map(|(e, a)| e * a).sum(),
    };
    let phi: Vec<f64> = (0..n)
        .map(|j| if norm > 0.0 { gate[j] * expc[j] / norm } else { 0.0 })
        .collect();
    let mut message = x.self_emb.to_vec();
    for (p, e) in phi.iter().zip(&x.neigh) {
        if *p != 0.0 {
            axpy(*p, e, &mut message);
        }
    }
    let w = params.agg_w();
    let out = (0..d)
        .map(|r| sigmoid(dot(w.row(r), &message) + params.agg_b()[r]))
        .collect();
    AggTrace {
        expc,
        norm,
        phi,
        message,
        out,
    }
}

/// Gradients of one aggregation w.r.t. its inputs. `dkeys`/`dneigh` are
/// flat `n × d`.
struct AggGrads {
    dself: Vec<f64>,
    dquery: Vec<f64>,
    dkeys: Vec<f64>,
    dneigh: Vec<f64>,
    dgate: Vec<f64>,
}

fn aggregate_backward(
    params: &ParamStore,
    x: &AggInputs,
    gate: &[f64],
    mode: AttentionMode,
    trace: &AggTrace,
    dout: &[f64],
    grad: &mut SparseGrad,
) -> AggGrads {
    let d = params.dim;
    let n = x.neigh.len();
    let dz: Vec<f64> = dout
        .iter()
        .zip(&trace.out)
        .map(|(g, o)| g * o * (1.0 - o))
        .collect();
    let w = params.agg_w();
    {
        let dw = grad.block(ParamId::AggW, 0, d * d);
        for r in 0..d {
            axpy(dz[r], &trace.message, &mut dw[r * d..(r + 1) * d]);
        }
    }
    axpy(1.0, &dz, grad.block(ParamId::AggB, 0, d));
    let mut dm = vec![0.0; d];
    for r in 0..d {
        axpy(dz[r], w.row(r), &mut dm);
    }

    let mut dneigh = vec![0.0; n * d];
    let dphi: Vec<f64> = (0..n)
        .map(|j| {
            axpy(trace.phi[j], &dm, &mut dneigh[j * d..(j + 1) * d]);
            dot(&dm, x.neigh[j])
        })
        .collect();

    let (dgate, dc) = match mode {
        AttentionMode::Full => {
            let att: Vec<f64> = trace.expc.iter().map(|e| e / trace.norm).collect();
            let dgate = (0..n).map(|j| dphi[j] * att[j]).collect();
            let datt: Vec<f64> = (0..n).map(|j| dphi[j] * gate[j]).collect();
            (dgate, softmax_backward(&att, &datt))
        }
        AttentionMode::Selected => {
            let inner = dot(&trace.phi, &dphi);
            let dv: Vec<f64> = (0..n).map(|j| (dphi[j] - inner) / trace.norm).collect();
            let dgate = (0..n).map(|j| dv[j] * trace.expc[j]).collect();
            let dc = (0..n).map(|j| dv[j] * gate[j] * trace.expc[j]).collect();
            (dgate, dc)
        }
    };

    let mut dquery = vec![0.0; d];
    let mut dkeys = vec![0.0; n * d];
    for j in 0..n {
        axpy(dc[j], x.keys[j], &mut dquery);
        axpy(dc[j], x.query, &mut dkeys[j * d..(j + 1) * d]);
    }
    AggGrads {
        dself: dm,
        dquery,
        dkeys,
        dneigh,
        dgate,
    }
}

fn check_selection(neighbors: &[Neighbor], sel: Option<&KHotSelection>) -> Result<Vec<f64>> {
    match sel {
        Some(s) if s.len() == neighbors.len() => Ok(s.soft.clone()),
        Some(s) => Err(Error::LengthMismatch {
            expected: neighbors.len(),
            got: s.len(),
        }),
        None if neighbors.is_empty() => Ok(Vec::new()),
        None => Err(Error::LengthMismatch {
            expected: neighbors.len(),
            got: 0,
        }),
    }
}

/// Item embedding conditioned on `user`, gated by `sel.soft`.
pub fn aggregate_item(
    item: ItemId,
    user: UserId,
    rg: &RelationalGraph,
    sel: Option<&KHotSelection>,
    params: &ParamStore,
    mode: AttentionMode,
) -> Result<Vec<f64>> {
    let gate = check_selection(rg.item_neighbors(item), sel)?;
    Ok(aggregate_forward(params, &item_inputs(params, rg, item, user), &gate, mode).out)
}

/// User embedding from interacted items, gated by `sel.soft`.
pub fn aggregate_user(
    user: UserId,
    rg: &RelationalGraph,
    sel: Option<&KHotSelection>,
    params: &ParamStore,
    mode: AttentionMode,
) -> Result<Vec<f64>> {
    let gate = check_selection(rg.user_neighbors(user), sel)?;
    Ok(aggregate_forward(params, &user_inputs(params, rg, user), &gate, mode).out)
}

pub(crate) fn item_embedding(
    params: &ParamStore,
    rg: &RelationalGraph,
    item: ItemId,
    user: UserId,
    sel: Option<&NodeSelection>,
    mode: AttentionMode,
) -> Vec<f64> {
    aggregate_forward(params, &item_inputs(params, rg, item, user), gate_of(sel), mode).out
}

pub(crate) fn user_embedding(
    params: &ParamStore,
    rg: &RelationalGraph,
    user: UserId,
    sel: Option<&NodeSelection>,
    mode: AttentionMode,
) -> Vec<f64> {
    aggregate_forward(params, &user_inputs(params, rg, user), gate_of(sel), mode).out
}

/// `σ(ê_uᵀ ê_i)`
pub fn predict(user_emb: &[f64], item_emb: &[f64]) -> f64 {
    sigmoid(dot(user_emb, item_emb))
}

/// One uniformly drawn non-interacted item per `(user, item)` pair.
pub fn sample_negatives<R: Rng + ?Sized>(
    train: &InteractionGraph,
    batch: &[(UserId, ItemId)],
    rng: &mut R,
) -> Result<Vec<BprTriplet>> {
    let n_items = train.num_items();
    batch
        .iter()
        .map(|&(user, pos_item)| {
            if train.user_items(user).len() >= n_items {
                return Err(Error::NoNegative(user.0));
            }
            let neg_item = loop {
                let cand = ItemId(rng.gen_range(0..n_items as u32));
                if !train.contains(user, cand) {
                    break cand;
                }
            };
            Ok(BprTriplet {
                user,
                pos_item,
                neg_item,
            })
        })
        .collect()
}

/// `Σ −ln σ(pos − neg) + λ · l2_sq_norm`.
pub fn bpr_loss(pos: &[f64], neg: &[f64], l2_sq_norm: f64, lambda: f64) -> f64 {
    pos.iter().zip(neg).map(|(p, n)| softplus(n - p)).sum::<f64>() + lambda * l2_sq_norm
}

/// Keys the Gumbel noise of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseKey {
    pub seed: u64,
    pub epoch: usize,
    pub step: usize,
}

impl NoiseKey {
    pub fn rng_for(&self, node: NodeRef) -> rng::StreamRng {
        rng::stream(
            self.seed,
            &[NOISE_STREAM, self.epoch as u64, self.step as u64, node.stream_key()],
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchLoss {
    /// Sum of per-triplet ranking losses.
    pub data: f64,
    /// `λ · Σ‖θ‖²` over the rows the batch touched.
    pub reg: f64,
}

impl BatchLoss {
    pub fn total(&self) -> f64 {
        self.data + self.reg
    }
}

fn node_neighbors(rg: &RelationalGraph, node: NodeRef) -> &[Neighbor] {
    match node {
        NodeRef::User(u) => rg.user_neighbors(u),
        NodeRef::Item(i) => rg.item_neighbors(i),
    }
}

fn gate_of(sel: Option<&NodeSelection>) -> &[f64] {
    sel.map_or(&[], |s| s.gate.as_slice())
}

fn write_item_side(g: &AggGrads, rg: &RelationalGraph, item: ItemId, user: UserId, d: usize, grad: &mut SparseGrad) {
    axpy(1.0, &g.dself, grad.block(ParamId::ItemEmb, item.index(), d));
    axpy(1.0, &g.dquery, grad.block(ParamId::UserEmb, user.index(), d));
    for (j, n) in rg.item_neighbors(item).iter().enumerate() {
        axpy(1.0, &g.dkeys[j * d..(j + 1) * d], grad.block(ParamId::RelationEmb, n.relation.index(), d));
        axpy(1.0, &g.dneigh[j * d..(j + 1) * d], grad.block(ParamId::ItemEmb, n.item.index(), d));
    }
}

fn write_user_side(g: &AggGrads, rg: &RelationalGraph, user: UserId, d: usize, grad: &mut SparseGrad) {
    let du = grad.block(ParamId::UserEmb, user.index(), d);
    for k in 0..d {
        du[k] += g.dself[k] + g.dquery[k];
    }
    for (j, n) in rg.user_neighbors(user).iter().enumerate() {
        let de = grad.block(ParamId::ItemEmb, n.item.index(), d);
        for k in 0..d {
            de[k] += g.dkeys[j * d + k] + g.dneigh[j * d + k];
        }
    }
}

/// Loss and sparse gradient of one triplet given its nodes' selections.
fn triplet_loss_grad(
    params: &ParamStore,
    rg: &RelationalGraph,
    cfg: &TrainConfig,
    t: &BprTriplet,
    sel_user: Option<&NodeSelection>,
    sel_pos: Option<&NodeSelection>,
    sel_neg: Option<&NodeSelection>,
    grad: &mut SparseGrad,
) -> f64 {
    let d = params.dim;
    let mode = cfg.attention;
    let xu = user_inputs(params, rg, t.user);
    let xi = item_inputs(params, rg, t.pos_item, t.user);
    let xj = item_inputs(params, rg, t.neg_item, t.user);
    let tu = aggregate_forward(params, &xu, gate_of(sel_user), mode);
    let ti = aggregate_forward(params, &xi, gate_of(sel_pos), mode);
    let tj = aggregate_forward(params, &xj, gate_of(sel_neg), mode);

    let raw_pos = dot(&tu.out, &ti.out);
    let raw_neg = dot(&tu.out, &tj.out);
    let (s_pos, s_neg) = match cfg.bpr_input {
        BprInput::Raw => (raw_pos, raw_neg),
        BprInput::Sigmoid => (sigmoid(raw_pos), sigmoid(raw_neg)),
    };
    let loss = softplus(s_neg - s_pos);
    // d loss / d s_pos = −σ(s_neg − s_pos)
    let g = sigmoid(s_neg - s_pos);
    let (mut d_pos, mut d_neg) = (-g, g);
    if cfg.bpr_input == BprInput::Sigmoid {
        d_pos *= s_pos * (1.0 - s_pos);
        d_neg *= s_neg * (1.0 - s_neg);
    }
    let mut du = vec![0.0; d];
    axpy(d_pos, &ti.out, &mut du);
    axpy(d_neg, &tj.out, &mut du);
    let di: Vec<f64> = tu.out.iter().map(|x| d_pos * x).collect();
    let dj: Vec<f64> = tu.out.iter().map(|x| d_neg * x).collect();

    let gu = aggregate_backward(params, &xu, gate_of(sel_user), mode, &tu, &du, grad);
    let gi = aggregate_backward(params, &xi, gate_of(sel_pos), mode, &ti, &di, grad);
    let gj = aggregate_backward(params, &xj, gate_of(sel_neg), mode, &tj, &dj, grad);
    write_user_side(&gu, rg, t.user, d, grad);
    write_item_side(&gi, rg, t.pos_item, t.user, d, grad);
    write_item_side(&gj, rg, t.neg_item, t.user, d, grad);
    if let Some(s) = sel_user {
        s.backward(rg.user_neighbors(t.user), params, &gu.dgate, grad);
    }
    if let Some(s) = sel_pos {
        s.backward(rg.item_neighbors(t.pos_item), params, &gi.dgate, grad);
    }
    if let Some(s) = sel_neg {
        s.backward(rg.item_neighbors(t.neg_item), params, &gj.dgate, grad);
    }
    loss
}

/// Evaluates the batch objective and accumulates its data gradient into
/// `grads`. Each distinct node in the batch draws one selection from its
/// own noise stream, shared by every triplet that touches it.
pub fn batch_objective(
    params: &ParamStore,
    rg: &RelationalGraph,
    cfg: &TrainConfig,
    triplets: &[BprTriplet],
    noise: NoiseKey,
    tau: f64,
    grads: &mut GradStore,
) -> Result<BatchLoss> {
    let mut nodes: Vec<NodeRef> = triplets
        .iter()
        .flat_map(|t| [NodeRef::User(t.user), NodeRef::Item(t.pos_item), NodeRef::Item(t.neg_item)])
        .collect();
    nodes.sort_unstable_by_key(|n| n.stream_key());
    nodes.dedup();
    let selections = par::try_map(&nodes, |&node| {
        NodeSelection::train(node, node_neighbors(rg, node), params, cfg, tau, &mut noise.rng_for(node))
    })?;
    let index: HashMap<NodeRef, usize> = nodes.iter().enumerate().map(|(k, &n)| (n, k)).collect();
    let sel = |node: NodeRef| selections[index[&node]].as_ref();

    // Fixed-size chunks keep the reduction order independent of the thread
    // count while letting each chunk merge its own rows.
    let chunks: Vec<&[BprTriplet]> = triplets.chunks(TRIPLET_CHUNK).collect();
    let parts = par::map(&chunks, |chunk| {
        let mut grad = SparseGrad::new();
        let mut loss = 0.0;
        for t in *chunk {
            loss += triplet_loss_grad(
                params,
                rg,
                cfg,
                t,
                sel(NodeRef::User(t.user)),
                sel(NodeRef::Item(t.pos_item)),
                sel(NodeRef::Item(t.neg_item)),
                &mut grad,
            );
        }
        (loss, grad)
    });
    let mut data = 0.0;
    for (loss, g) in &parts {
        data += loss;
        grads.accumulate(g);
    }
    let reg = cfg.lambda * grads.touched_sq_norm(params);
    Ok(BatchLoss { data, reg })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean objective per training triplet.
    pub loss: f64,
    pub tau: f64,
}

/// Owns the parameters and optimizer state for one training run.
pub struct Trainer<'g> {
    graph: &'g RelationalGraph,
    train: &'g InteractionGraph,
    config: TrainConfig,
    params: ParamStore,
    optimizer: Optimizer,
    grads: GradStore,
}

impl<'g> Trainer<'g> {
    pub fn new(graph: &'g RelationalGraph, train: &'g InteractionGraph, config: TrainConfig) -> Result<Self> {
        let shapes = Shapes {
            num_users: graph.num_users(),
            num_items: graph.num_items(),
            num_relations: graph.num_relations(),
            dim: config.dim,
        };
        config.validate()?;
        let params = init_params(shapes, config.seed, config.init_scale)?;
        Self::with_params(graph, train, config, params)
    }

    pub fn with_params(
        graph: &'g RelationalGraph,
        train: &'g InteractionGraph,
        config: TrainConfig,
        params: ParamStore,
    ) -> Result<Self> {
        config.validate()?;
        let shapes = params.shapes();
        if shapes.num_users != graph.num_users()
            || shapes.num_items != graph.num_items()
            || shapes.num_relations != graph.num_relations()
            || shapes.dim != config.dim
            || train.num_users() != graph.num_users()
            || train.num_items() != graph.num_items()
        {
            return Err(Error::IdMismatch(format!(
                "parameters {shapes:?} do not match graph ({} users, {} items, {} relations, dim {})",
                graph.num_users(),
                graph.num_items(),
                graph.num_relations(),
                config.dim
            )));
        }
        Ok(Self {
            graph,
            train,
            optimizer: Optimizer::new(config.optimizer, config.lr, config.lambda, shapes),
            grads: GradStore::new(shapes),
            config,
            params,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn into_params(self) -> ParamStore {
        self.params
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// One pass over the shuffled training edges.
    pub fn train_epoch(&mut self, epoch: usize) -> Result<EpochStats> {
        use rand::seq::SliceRandom;
        let cfg = &self.config;
        let tau = cfg.tau_at(epoch);
        let mut edges: Vec<(UserId, ItemId)> = self.train.edges().collect();
        edges.shuffle(&mut rng::stream(cfg.seed, &[SHUFFLE_STREAM, epoch as u64]));
        let mut total = 0.0;
        for (step, chunk) in edges.chunks(cfg.batch_size).enumerate() {
            let mut neg_rng = rng::stream(cfg.seed, &[NEGATIVE_STREAM, epoch as u64, step as u64]);
            let triplets = sample_negatives(self.train, chunk, &mut neg_rng)?;
            let key = NoiseKey {
                seed: cfg.seed,
                epoch,
                step,
            };
            let loss = batch_objective(&self.params, self.graph, cfg, &triplets, key, tau, &mut self.grads)?;
            if !loss.total().is_finite() {
                self.grads.clear();
                return Err(Error::Divergence {
                    epoch,
                    loss: loss.total(),
                });
            }
            total += loss.total();
            self.optimizer.step(&mut self.params, &mut self.grads)?;
        }
        if !self.params.is_finite() {
            return Err(Error::Divergence { epoch, loss: f64::NAN });
        }
        let loss = if edges.is_empty() { 0.0 } else { total / edges.len() as f64 };
        Ok(EpochStats { epoch, loss, tau })
    }

    /// Runs every configured epoch, reporting each.
    pub fn fit(&mut self, mut on_epoch: impl FnMut(&EpochStats)) -> Result<Vec<EpochStats>> {
        let mut out = Vec::with_capacity(self.config.epochs);
        for epoch in 0..self.config.epochs {
            let stats = self.train_epoch(epoch)?;
            on_epoch(&stats);
            out.push(stats);
        }
        Ok(out)
    }
}
