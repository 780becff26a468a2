//! File-backed experiment commands. Every artifact lands under
//! `workdir/<run_id>/` with a fixed name.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::checkpoint::Checkpoint;
use crate::cograph::{build_cograph, degree_stats, unify, CoGraph, RelationalGraph};
use crate::config::{ExperimentConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::graph::{
    load_dense_interactions, load_interactions, load_triples, read_map, split_interactions, write_map,
    DatasetSplit, InteractionGraph, KnowledgeGraph,
};
use crate::metrics::{evaluate, MetricTable, Scorer};
use crate::model::{EpochStats, Trainer};
use crate::numeric::ParamStore;
use crate::par;
use crate::sampler::Strategy;

pub const CONFIG_FILE: &str = "config.effective";
pub const TRAIN_LOG: &str = "train.log.tsv";
pub const TIMING_LOG: &str = "train.timing.tsv";
pub const CHECKPOINT: &str = "checkpoint.bin";
pub const METRICS_TSV: &str = "metrics.tsv";
pub const METRICS_TXT: &str = "metrics.txt";
pub const ABLATION: &str = "ablation.tsv";
pub const ABLATION_RUNS: &str = "ablation.runs.tsv";

/// Cutoff reported by the ablation.
pub const ABLATION_N: usize = 20;

/// Split plus the unified graph built from its training half.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub split: DatasetSplit,
    pub cograph: CoGraph,
    pub graph: RelationalGraph,
}

impl Prepared {
    pub fn build(kg: &KnowledgeGraph, interactions: &InteractionGraph, cfg: &ExperimentConfig) -> Result<Self> {
        let split = split_interactions(interactions, cfg.test_fraction, cfg.train.seed)?;
        let cograph = build_cograph(kg, &interactions.items, cfg.degree_cap);
        let graph = unify(&cograph, &split.train)?;
        Ok(Self { split, cograph, graph })
    }

    /// Reads what [`preprocess`] wrote into `dir`.
    pub fn load(dir: &Path, seed: u64) -> Result<Self> {
        let users = read_map(dir.join("users.map"))?;
        let items = read_map(dir.join("items.map"))?;
        let co_relations = read_map(dir.join("co_relations.map"))?;
        let cograph = CoGraph::read_tsv(dir.join("co_graph.tsv"), items.len(), co_relations)?;
        let train = load_dense_interactions(dir.join("train.tsv"), &users, &items)?;
        let test = load_dense_interactions(dir.join("test.tsv"), &users, &items)?;
        let graph = unify(&cograph, &train)?;
        Ok(Self {
            split: DatasetSplit { train, test, seed },
            cograph,
            graph,
        })
    }
}

fn write(path: PathBuf, body: impl AsRef<[u8]>) -> Result<()> {
    fs::write(&path, body).map_err(|e| Error::io(&path, e))
}

fn create_run_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = cfg.run_dir();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write(dir.join(CONFIG_FILE), cfg.to_kv_text())?;
    Ok(dir)
}

fn require(path: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
    path.clone()
        .ok_or_else(|| Error::Config(format!("`{key}` must point at an input file")))
}

/// Counts reported after preprocessing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreprocessSummary {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    pub entities: usize,
    pub relations: usize,
    pub triples: usize,
    pub co_relations: usize,
    pub co_edges: usize,
    pub train: usize,
    pub test: usize,
}

impl PreprocessSummary {
    pub fn to_tsv(&self) -> String {
        let rows = [
            ("users", self.users),
            ("items", self.items),
            ("interactions", self.interactions),
            ("entities", self.entities),
            ("relations", self.relations),
            ("triples", self.triples),
            ("co_relations", self.co_relations),
            ("co_edges", self.co_edges),
            ("train_interactions", self.train),
            ("test_interactions", self.test),
        ];
        rows.iter().map(|(k, v)| format!("{k}\t{v}\n")).collect()
    }
}

/// Loads raw TSVs, splits, builds the co-graph and writes every artifact.
pub fn preprocess(cfg: &ExperimentConfig) -> Result<PreprocessSummary> {
    cfg.validate()?;
    let kg = load_triples(require(&cfg.triples, "triples")?)?;
    let interactions = load_interactions(require(&cfg.interactions, "interactions")?)?;
    let prepared = Prepared::build(&kg, &interactions, cfg)?;
    let dir = create_run_dir(cfg)?;

    write_map(dir.join("entities.map"), &kg.entities)?;
    write_map(dir.join("relations.map"), &kg.relations)?;
    write_map(dir.join("users.map"), &interactions.users)?;
    write_map(dir.join("items.map"), &interactions.items)?;
    write_map(dir.join("co_relations.map"), &prepared.cograph.co_relations)?;
    let mut buf = Vec::new();
    prepared.cograph.write_tsv(&mut buf).map_err(|e| Error::io(dir.join("co_graph.tsv"), e))?;
    write(dir.join("co_graph.tsv"), buf)?;
    for (name, g) in [("train.tsv", &prepared.split.train), ("test.tsv", &prepared.split.test)] {
        let mut buf = Vec::new();
        g.write_dense_tsv(&mut buf).map_err(|e| Error::io(dir.join(name), e))?;
        write(dir.join(name), buf)?;
    }
    let mut stats = String::from("degree\tnodes\n");
    for (deg, count) in degree_stats(&prepared.graph) {
        writeln!(stats, "{deg}\t{count}").expect("write to String");
    }
    write(dir.join("degree_stats.tsv"), stats)?;

    let summary = PreprocessSummary {
        users: interactions.num_users(),
        items: interactions.num_items(),
        interactions: interactions.num_edges(),
        entities: kg.num_entities(),
        relations: kg.num_relations(),
        triples: kg.triples.len(),
        co_relations: prepared.cograph.num_relations(),
        co_edges: prepared.cograph.edges.len() / 2,
        train: prepared.split.train.num_edges(),
        test: prepared.split.test.num_edges(),
    };
    write(dir.join("summary.tsv"), summary.to_tsv())?;
    Ok(summary)
}

fn log_header() -> String {
    "epoch\tloss\ttau\n".to_owned()
}

fn log_line(s: &EpochStats) -> String {
    format!("{}\t{}\t{}\n", s.epoch, s.loss, s.tau)
}

/// Trains on the preprocessed split. The checkpoint is rewritten after
/// every successful epoch, so on divergence the last good one remains.
pub fn train(cfg: &ExperimentConfig) -> Result<Vec<EpochStats>> {
    cfg.validate()?;
    let dir = cfg.run_dir();
    let prepared = Prepared::load(&dir, cfg.train.seed)?;
    write(dir.join(CONFIG_FILE), cfg.to_kv_text())?;
    let mut trainer = Trainer::new(&prepared.graph, &prepared.split.train, cfg.train.clone())?;
    let ckpt_path = dir.join(CHECKPOINT);
    let save = |params: &ParamStore, epochs_done: usize| {
        Checkpoint {
            epochs_done,
            config: cfg.train.clone(),
            params: params.clone(),
        }
        .save(&ckpt_path)
    };
    save(trainer.params(), 0)?;

    let mut log = log_header();
    let mut timing = String::from("epoch\tseconds\n");
    write(dir.join(TRAIN_LOG), &log)?;
    let mut out = Vec::new();
    for epoch in 0..cfg.train.epochs {
        let start = Instant::now();
        let stats = trainer.train_epoch(epoch)?;
        save(trainer.params(), epoch + 1)?;
        log.push_str(&log_line(&stats));
        writeln!(timing, "{epoch}\t{:.3}", start.elapsed().as_secs_f64()).expect("write to String");
        write(dir.join(TRAIN_LOG), &log)?;
        write(dir.join(TIMING_LOG), &timing)?;
        out.push(stats);
    }
    Ok(out)
}

/// Scores a parameter snapshot on a split.
pub fn evaluate_params(
    params: &ParamStore,
    prepared: &Prepared,
    train_cfg: &TrainConfig,
    ns: &[usize],
    eval_users: usize,
) -> Result<MetricTable> {
    let scorer = Scorer::new(params, &prepared.graph, train_cfg)?;
    evaluate(&prepared.split.train, &prepared.split.test, &scorer, ns, eval_users, train_cfg.seed)
}

/// Evaluates the run's checkpoint and writes both table renderings.
pub fn evaluate_checkpoint(cfg: &ExperimentConfig) -> Result<MetricTable> {
    cfg.validate()?;
    let dir = cfg.run_dir();
    let prepared = Prepared::load(&dir, cfg.train.seed)?;
    let ckpt = Checkpoint::load(&dir.join(CHECKPOINT))?;
    let shapes = ckpt.params.shapes();
    if shapes.dim != cfg.train.dim {
        return Err(Error::Checkpoint(format!(
            "checkpoint dimension {} does not match configured dim {}",
            shapes.dim, cfg.train.dim
        )));
    }
    if shapes.num_users != prepared.graph.num_users()
        || shapes.num_items != prepared.graph.num_items()
        || shapes.num_relations != prepared.graph.num_relations()
    {
        return Err(Error::Checkpoint(format!("checkpoint shapes {shapes:?} do not match the preprocessed graph")));
    }
    let table = evaluate_params(&ckpt.params, &prepared, &cfg.train, &cfg.eval_ns, cfg.eval_users)?;
    write(dir.join(METRICS_TSV), table.to_tsv())?;
    write(dir.join(METRICS_TXT), table.to_text())?;
    Ok(table)
}

/// Recall@N over every seed of one `(strategy, K)` setting.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationCell {
    pub strategy: Strategy,
    pub k: usize,
    pub seeds: Vec<u64>,
    pub recalls: Vec<f64>,
}

impl AblationCell {
    pub fn mean(&self) -> f64 {
        self.recalls.iter().sum::<f64>() / self.recalls.len() as f64
    }

    /// Sample standard deviation (0 for a single seed).
    pub fn std_dev(&self) -> f64 {
        let n = self.recalls.len();
        if n < 2 {
            return 0.0;
        }
        let m = self.mean();
        (self.recalls.iter().map(|r| (r - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    }

    /// Standard error of the mean.
    pub fn std_err(&self) -> f64 {
        self.std_dev() / (self.recalls.len() as f64).sqrt()
    }
}

/// Standard error of the difference of two cell means.
pub fn pooled_std_err(a: &AblationCell, b: &AblationCell) -> f64 {
    (a.std_err().powi(2) + b.std_err().powi(2)).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub cells: Vec<AblationCell>,
}

impl AblationReport {
    pub fn cell(&self, strategy: Strategy, k: usize) -> Option<&AblationCell> {
        self.cells.iter().find(|c| c.strategy == strategy && c.k == k)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = format!("strategy\tk\tseeds\tmean_recall@{ABLATION_N}\tstd_recall@{ABLATION_N}\n");
        for c in &self.cells {
            writeln!(out, "{}\t{}\t{}\t{}\t{}", c.strategy, c.k, c.recalls.len(), c.mean(), c.std_dev())
                .expect("write to String");
        }
        out
    }

    pub fn runs_tsv(&self) -> String {
        let mut out = format!("strategy\tk\tseed\trecall@{ABLATION_N}\n");
        for c in &self.cells {
            for (s, r) in c.seeds.iter().zip(&c.recalls) {
                writeln!(out, "{}\t{}\t{s}\t{r}", c.strategy, c.k).expect("write to String");
            }
        }
        out
    }
}

/// Trains and evaluates every `(strategy, K, seed)` combination on one
/// split. Seeds run from `cfg.train.seed` upward; the split is shared.
pub fn run_ablation(prepared: &Prepared, cfg: &ExperimentConfig) -> Result<AblationReport> {
    cfg.validate()?;
    let mut jobs = Vec::new();
    for &strategy in &cfg.ablate_strategies {
        for &k in &cfg.ablate_ks {
            for s in 0..cfg.ablate_seeds as u64 {
                jobs.push((strategy, k, cfg.train.seed + s));
            }
        }
    }
    let recalls = par::try_map(&jobs, |&(strategy, k, seed)| {
        let train_cfg = TrainConfig {
            strategy,
            k,
            seed,
            ..cfg.train.clone()
        };
        let mut trainer = Trainer::new(&prepared.graph, &prepared.split.train, train_cfg.clone())?;
        trainer.fit(|_| {})?;
        let table = evaluate_params(trainer.params(), prepared, &train_cfg, &[ABLATION_N], cfg.eval_users)?;
        Ok::<_, Error>(table.recall[0])
    })?;
    let mut cells: Vec<AblationCell> = Vec::new();
    for (&(strategy, k, seed), recall) in jobs.iter().zip(recalls) {
        match cells.last_mut() {
            Some(c) if c.strategy == strategy && c.k == k => {
                c.seeds.push(seed);
                c.recalls.push(recall);
            }
            _ => cells.push(AblationCell {
                strategy,
                k,
                seeds: vec![seed],
                recalls: vec![recall],
            }),
        }
    }
    Ok(AblationReport { cells })
}

/// Runs the configured sweep on the preprocessed split and writes the report.
pub fn ablate(cfg: &ExperimentConfig) -> Result<AblationReport> {
    cfg.validate()?;
    let dir = cfg.run_dir();
    let prepared = Prepared::load(&dir, cfg.train.seed)?;
    write(dir.join(CONFIG_FILE), cfg.to_kv_text())?;
    let report = run_ablation(&prepared, cfg)?;
    write(dir.join(ABLATION), report.to_tsv())?;
    write(dir.join(ABLATION_RUNS), report.runs_tsv())?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{generate, SyntheticConfig};

    fn small_cfg(dir: &Path) -> ExperimentConfig {
        let synth = SyntheticConfig {
            users: 24,
            items: 36,
            clusters: 3,
            interactions_per_user: 5,
            ..SyntheticConfig::default()
        };
        let data = dir.join("data");
        generate(&synth).unwrap().write(&data).unwrap();
        let mut cfg = ExperimentConfig {
            triples: Some(data.join("kg.tsv")),
            interactions: Some(data.join("interactions.tsv")),
            workdir: dir.join("runs"),
            synthetic: synth,
            ..ExperimentConfig::default()
        };
        cfg.train.dim = 4;
        cfg.train.epochs = 2;
        cfg.train.k = 2;
        cfg.ablate_ks = vec![2];
        cfg.ablate_seeds = 2;
        cfg
    }

    #[test]
    fn preprocess_then_load_matches_in_memory_build() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_cfg(dir.path());
        let summary = preprocess(&cfg).unwrap();
        assert_eq!(summary.users, 24);
        assert_eq!(summary.co_relations, 8);
        let loaded = Prepared::load(&cfg.run_dir(), cfg.train.seed).unwrap();
        let kg = load_triples(cfg.triples.as_ref().unwrap()).unwrap();
        let ui = load_interactions(cfg.interactions.as_ref().unwrap()).unwrap();
        let built = Prepared::build(&kg, &ui, &cfg).unwrap();
        assert_eq!(loaded.graph, built.graph);
        assert_eq!(loaded.split.test, built.split.test);
    }

    #[test]
    fn zero_epoch_checkpoint_is_initialization() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_cfg(dir.path());
        cfg.train.epochs = 0;
        preprocess(&cfg).unwrap();
        assert!(train(&cfg).unwrap().is_empty());
        let ckpt = Checkpoint::load(&cfg.run_dir().join(CHECKPOINT)).unwrap();
        let shapes = ckpt.params.shapes();
        let init = crate::numeric::init_params(shapes, cfg.train.seed, cfg.train.init_scale).unwrap();
        assert_eq!(ckpt.params, init);
        assert_eq!(ckpt.epochs_done, 0);
        let table = evaluate_checkpoint(&cfg).unwrap();
        assert!(table.recall.iter().all(|r| (0.0..=1.0).contains(r)));
    }

    #[test]
    fn evaluate_rejects_dimension_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_cfg(dir.path());
        preprocess(&cfg).unwrap();
        train(&cfg).unwrap();
        cfg.train.dim = 6;
        assert!(matches!(evaluate_checkpoint(&cfg), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn missing_inputs_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_cfg(dir.path());
        cfg.triples = None;
        assert_eq!(preprocess(&cfg).unwrap_err().exit_code(), 1);
        let mut cfg = small_cfg(dir.path());
        cfg.triples = Some(dir.path().join("absent.tsv"));
        assert_eq!(preprocess(&cfg).unwrap_err().exit_code(), 2);
        let cfg = small_cfg(dir.path());
        assert!(train(&cfg).is_err());
    }

    #[test]
    fn single_cell_ablation() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_cfg(dir.path());
        cfg.ablate_strategies = vec![Strategy::Gs];
        preprocess(&cfg).unwrap();
        let report = ablate(&cfg).unwrap();
        assert_eq!(report.cells.len(), 1);
        assert_eq!(report.cells[0].recalls.len(), 2);
        assert_eq!(report.to_tsv().lines().count(), 2);
    }

    #[test]
    fn vacuous_selection_makes_strategies_agree() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_cfg(dir.path());
        cfg.ablate_ks = vec![10_000];
        preprocess(&cfg).unwrap();
        let report = ablate(&cfg).unwrap();
        let first = &report.cells[0].recalls;
        assert!(report.cells.iter().all(|c| &c.recalls == first));
    }

    #[test]
    fn cell_statistics() {
        let c = AblationCell {
            strategy: Strategy::Gs,
            k: 8,
            seeds: vec![0, 1, 2],
            recalls: vec![0.1, 0.2, 0.3],
        };
        assert!((c.mean() - 0.2).abs() < 1e-15);
        assert!((c.std_dev() - 0.1).abs() < 1e-15);
        assert!((pooled_std_err(&c, &c) - (2.0 * 0.01 / 3.0f64).sqrt()).abs() < 1e-15);
    }
}
