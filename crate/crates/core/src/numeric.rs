//! Dense math, parameter storage with sparse gradient accumulation,
//! optimizers and a finite-difference gradient checker.

use rand::Rng;
use rustc_hash::FxHashMap;

use crate::error::{Error, Result};
use crate::rng;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Identifies one learnable tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamId {
    UserEmb = 0,
    ItemEmb = 1,
    RelationEmb = 2,
    SamplerW = 3,
    SamplerB = 4,
    AggW = 5,
    AggB = 6,
}

impl ParamId {
    pub const ALL: [ParamId; 7] = [
        ParamId::UserEmb,
        ParamId::ItemEmb,
        ParamId::RelationEmb,
        ParamId::SamplerW,
        ParamId::SamplerB,
        ParamId::AggW,
        ParamId::AggB,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamId::UserEmb => "user_emb",
            ParamId::ItemEmb => "item_emb",
            ParamId::RelationEmb => "relation_emb",
            ParamId::SamplerW => "sampler_w",
            ParamId::SamplerB => "sampler_b",
            ParamId::AggW => "agg_w",
            ParamId::AggB => "agg_b",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shapes {
    pub num_users: usize,
    pub num_items: usize,
    /// Co-relations plus the interaction relation.
    pub num_relations: usize,
    pub dim: usize,
}

impl Shapes {
    fn of(&self, id: ParamId) -> (usize, usize) {
        let d = self.dim;
        match id {
            ParamId::UserEmb => (self.num_users, d),
            ParamId::ItemEmb => (self.num_items, d),
            ParamId::RelationEmb => (self.num_relations, d),
            ParamId::SamplerW => (1, 2 * d),
            ParamId::SamplerB => (1, 1),
            ParamId::AggW => (d, d),
            ParamId::AggB => (1, d),
        }
    }
}

/// All learnable tensors, indexed by [`ParamId`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    pub dim: usize,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn zeros(shapes: Shapes) -> Self {
        Self {
            dim: shapes.dim,
            tensors: ParamId::ALL
                .iter()
                .map(|&id| {
                    let (r, c) = shapes.of(id);
                    Tensor::zeros(r, c)
                })
                .collect(),
        }
    }

    /// Builds a store from tensors in [`ParamId::ALL`] order, checking shapes.
    pub fn from_tensors(tensors: Vec<Tensor>) -> Result<Self> {
        if tensors.len() != ParamId::ALL.len() {
            return Err(Error::Checkpoint(format!("expected 7 tensors, got {}", tensors.len())));
        }
        let dim = tensors[ParamId::AggB as usize].cols;
        let shapes = Shapes {
            num_users: tensors[0].rows,
            num_items: tensors[1].rows,
            num_relations: tensors[2].rows,
            dim,
        };
        for (&id, t) in ParamId::ALL.iter().zip(&tensors) {
            if (t.rows, t.cols) != shapes.of(id) || t.data.len() != t.rows * t.cols {
                return Err(Error::Checkpoint(format!("bad shape for {}", id.name())));
            }
        }
        Ok(Self { dim, tensors })
    }

    pub fn shapes(&self) -> Shapes {
        Shapes {
            num_users: self.tensors[0].rows,
            num_items: self.tensors[1].rows,
            num_relations: self.tensors[2].rows,
            dim: self.dim,
        }
    }

    #[inline]
    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.tensors[id as usize]
    }

    #[inline]
    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id as usize]
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    #[inline]
    pub fn user(&self, u: usize) -> &[f64] {
        self.tensors[ParamId::UserEmb as usize].row(u)
    }

    #[inline]
    pub fn item(&self, i: usize) -> &[f64] {
        self.tensors[ParamId::ItemEmb as usize].row(i)
    }

    #[inline]
    pub fn relation(&self, r: usize) -> &[f64] {
        self.tensors[ParamId::RelationEmb as usize].row(r)
    }

    /// Sampler weight over `[relation ‖ neighbor]`, length `2d`.
    #[inline]
    pub fn sampler_w(&self) -> &[f64] {
        &self.tensors[ParamId::SamplerW as usize].data
    }

    #[inline]
    pub fn sampler_b(&self) -> f64 {
        self.tensors[ParamId::SamplerB as usize].data[0]
    }

    #[inline]
    pub fn agg_w(&self) -> &Tensor {
        &self.tensors[ParamId::AggW as usize]
    }

    #[inline]
    pub fn agg_b(&self) -> &[f64] {
        &self.tensors[ParamId::AggB as usize].data
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }
}

/// Entries i.i.d. uniform in `[-scale, scale]`, deterministic per seed.
pub fn init_params(shapes: Shapes, seed: u64, scale: f64) -> Result<ParamStore> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidArgument(format!("init scale must be > 0, got {scale}")));
    }
    let mut store = ParamStore::zeros(shapes);
    let mut rng = rng::stream(seed, &[0x1417]);
    for t in &mut store.tensors {
        for x in &mut t.data {
            *x = rng.gen_range(-scale..=scale);
        }
    }
    Ok(store)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn log_sum_exp(x: &[f64]) -> f64 {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Max-subtracted softmax. `-inf` entries get probability 0.
pub fn softmax(x: &[f64]) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::InvalidArgument("softmax of empty vector".into()));
    }
    let mut out = x.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

pub(crate) fn softmax_in_place(x: &mut [f64]) {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in x.iter_mut() {
        *v = (*v - m).exp();
        sum += *v;
    }
    for v in x.iter_mut() {
        *v /= sum;
    }
}

/// Gradient of softmax: given `y = softmax(x)` and `dy`, returns `dx`.
pub(crate) fn softmax_backward(y: &[f64], dy: &[f64]) -> Vec<f64> {
    let inner = dot(y, dy);
    y.iter().zip(dy).map(|(yi, gi)| yi * (gi - inner)).collect()
}

/// Per-example gradient blocks keyed by `(tensor, first row)`, kept in
/// first-touch order.
#[derive(Debug, Clone, Default)]
pub struct SparseGrad {
    blocks: Vec<(ParamId, usize, usize, usize)>,
    index: FxHashMap<(ParamId, usize), usize>,
    values: Vec<f64>,
}

impl SparseGrad {
    pub fn new() -> Self {
        Self::default()
    }

    /// The accumulator for `len` values starting at row `row` of `id`,
    /// zeroed on first use. Callers add into it.
    pub fn block(&mut self, id: ParamId, row: usize, len: usize) -> &mut [f64] {
        let (start, existing) = match self.index.get(&(id, row)) {
            Some(&b) => (self.blocks[b].2, self.blocks[b].3),
            None => {
                let start = self.values.len();
                self.values.resize(start + len, 0.0);
                self.index.insert((id, row), self.blocks.len());
                self.blocks.push((id, row, start, len));
                (start, len)
            }
        };
        assert_eq!(existing, len, "block length changed for {} row {row}", id.name());
        &mut self.values[start..start + len]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, usize, &[f64])> {
        self.blocks
            .iter()
            .map(|&(id, row, start, len)| (id, row, &self.values[start..start + len]))
    }
}

/// Dense gradient accumulators plus the set of rows touched since the last
/// optimizer step.
#[derive(Debug, Clone)]
pub struct GradStore {
    grads: Vec<Tensor>,
    touched_flag: Vec<Vec<bool>>,
    touched: Vec<Vec<usize>>,
}

impl GradStore {
    pub fn new(shapes: Shapes) -> Self {
        let grads = ParamStore::zeros(shapes).tensors;
        let touched_flag = grads.iter().map(|t| vec![false; t.rows]).collect();
        Self {
            grads,
            touched_flag,
            touched: vec![Vec::new(); ParamId::ALL.len()],
        }
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.grads[id as usize]
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.grads
    }

    fn mark(&mut self, id: ParamId, row: usize) {
        let flag = &mut self.touched_flag[id as usize][row];
        if !*flag {
            *flag = true;
            self.touched[id as usize].push(row);
        }
    }

    /// Adds `values` at row `row` of `id`; blocks longer than one row span
    /// consecutive rows.
    pub fn add_block(&mut self, id: ParamId, row: usize, values: &[f64]) {
        let t = &mut self.grads[id as usize];
        let cols = t.cols;
        let start = row * cols;
        for (g, v) in t.data[start..start + values.len()].iter_mut().zip(values) {
            *g += v;
        }
        let rows = values.len().div_ceil(cols).max(1);
        for r in row..row + rows {
            self.mark(id, r);
        }
    }

    pub fn accumulate(&mut self, sparse: &SparseGrad) {
        for (id, row, vals) in sparse.iter() {
            self.add_block(id, row, vals);
        }
    }

    /// Touched rows of `id`, sorted.
    pub fn touched_rows(&self, id: ParamId) -> Vec<usize> {
        let mut rows = self.touched[id as usize].clone();
        rows.sort_unstable();
        rows
    }

    /// `Σ ‖θ_row‖²` over touched rows.
    pub fn touched_sq_norm(&self, params: &ParamStore) -> f64 {
        ParamId::ALL
            .iter()
            .map(|&id| {
                let t = params.tensor(id);
                self.touched_rows(id)
                    .into_iter()
                    .map(|r| dot(t.row(r), t.row(r)))
                    .sum::<f64>()
            })
            .sum()
    }

    /// Adds the gradient of `lambda · Σ_touched ‖θ‖²`.
    pub fn add_l2(&mut self, params: &ParamStore, lambda: f64) {
        for id in ParamId::ALL {
            let p = params.tensor(id);
            for r in self.touched_rows(id) {
                axpy(2.0 * lambda, p.row(r), self.grads[id as usize].row_mut(r));
            }
        }
    }

    fn check_finite(&self) -> Result<()> {
        for id in ParamId::ALL {
            let g = &self.grads[id as usize];
            if self.touched[id as usize]
                .iter()
                .any(|&r| g.row(r).iter().any(|x| !x.is_finite()))
            {
                return Err(Error::NonFiniteGradient { tensor: id.name() });
            }
        }
        Ok(())
    }

    pub fn clear(&mut self) {
        for id in ParamId::ALL {
            let k = id as usize;
            for &r in &self.touched[k] {
                self.grads[k].row_mut(r).fill(0.0);
                self.touched_flag[k][r] = false;
            }
            self.touched[k].clear();
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Applies `θ ← θ − lr·(g + 2λθ)` (or its Adam analogue) to touched rows and
/// zeroes the gradients.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    lambda: f64,
    adam: Option<AdamState>,
}

#[derive(Debug, Clone)]
struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: i32,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, lambda: f64, shapes: Shapes) -> Self {
        let adam = (kind == OptimizerKind::Adam).then(|| AdamState {
            m: ParamStore::zeros(shapes).tensors,
            v: ParamStore::zeros(shapes).tensors,
            step: 0,
        });
        Self {
            kind,
            lr,
            lambda,
            adam,
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &mut GradStore) -> Result<()> {
        grads.check_finite()?;
        if let Some(adam) = &mut self.adam {
            adam.step += 1;
        }
        for id in ParamId::ALL {
            let k = id as usize;
            for &r in &grads.touched[k] {
                let g = grads.grads[k].row(r);
                let theta = params.tensors[k].row_mut(r);
                match &mut self.adam {
                    None => {
                        for (t, gi) in theta.iter_mut().zip(g) {
                            *t -= self.lr * (gi + 2.0 * self.lambda * *t);
                        }
                    }
                    Some(adam) => {
                        let bc1 = 1.0 - ADAM_BETA1.powi(adam.step);
                        let bc2 = 1.0 - ADAM_BETA2.powi(adam.step);
                        let m = adam.m[k].row_mut(r);
                        let v = adam.v[k].row_mut(r);
                        for (((t, gi), mi), vi) in theta.iter_mut().zip(g).zip(m).zip(v) {
                            let gt = gi + 2.0 * self.lambda * *t;
                            *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * gt;
                            *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * gt * gt;
                            *t -= self.lr * (*mi / bc1) / ((*vi / bc2).sqrt() + ADAM_EPS);
                        }
                    }
                }
            }
        }
        grads.clear();
        Ok(())
    }
}

/// Plain SGD step with decoupled L2 on touched rows.
pub fn sgd_step(params: &mut ParamStore, grads: &mut GradStore, lr: f64, lambda: f64) -> Result<()> {
    Optimizer::new(OptimizerKind::Sgd, lr, lambda, params.shapes()).step(params, grads)
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Worst entry as `(tensor, flat index, analytic, numeric)`.
    pub worst: Option<(ParamId, usize, f64, f64)>,
    pub per_tensor: Vec<(ParamId, f64)>,
    pub checked: usize,
}

/// Relative error `|a − n| / max(|a|, |n|, floor)`.
///
/// `floor` keeps entries whose true gradient is zero (or nearly so) from
/// dividing finite-difference round-off by zero.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `analytic` against central differences of `loss_fn` for every
/// entry of every tensor in `ids`.
pub fn grad_check<F>(
    mut loss_fn: F,
    params: &ParamStore,
    analytic: &GradStore,
    ids: &[ParamId],
    eps: f64,
    floor: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> f64,
{
    let first = loss_fn(params);
    let second = loss_fn(params);
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministic { first, second });
    }
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        per_tensor: Vec::new(),
        checked: 0,
    };
    for &id in ids {
        let mut tensor_max: f64 = 0.0;
        for k in 0..params.tensor(id).data.len() {
            let orig = params.tensor(id).data[k];
            probe.tensor_mut(id).data[k] = orig + eps;
            let plus = loss_fn(&probe);
            probe.tensor_mut(id).data[k] = orig - eps;
            let minus = loss_fn(&probe);
            probe.tensor_mut(id).data[k] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.tensor(id).data[k];
            let err = relative_error(a, numeric, floor);
            tensor_max = tensor_max.max(err);
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((id, k, a, numeric));
            }
            report.checked += 1;
        }
        report.per_tensor.push((id, tensor_max));
    }
    Ok(report)
}
