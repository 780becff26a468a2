//! Knowledge-graph recommendation with learned, differentiable neighbor
//! sampling over an item co-occurrence graph.

pub mod checkpoint;
pub mod cograph;
pub mod config;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod ids;
pub mod metrics;
pub mod model;
pub mod numeric;
pub mod par;
pub mod rng;
pub mod sampler;
pub mod synthetic;

pub use checkpoint::Checkpoint;
pub use cograph::{build_cograph, unify, CoGraph, Neighbor, RelationalGraph};
pub use config::{ExperimentConfig, TrainConfig};
pub use error::{Error, Result};
pub use ids::{EntityId, IdMap, ItemId, RelationId, UserId};
pub use metrics::{evaluate, rank_items, MetricTable, RankedList, Ranker, Scorer};
pub use model::{aggregate_item, aggregate_user, bpr_loss, predict, Trainer};
pub use numeric::{ParamId, ParamStore};
pub use sampler::{deterministic_topk, gumbel_topk, KHotSelection, RelevanceDistribution, Strategy};
