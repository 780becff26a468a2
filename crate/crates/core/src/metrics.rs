//! Full-catalog ranking and top-N metrics.

use std::fmt::Write as _;

use rand::seq::IteratorRandom;

use crate::cograph::RelationalGraph;
use crate::config::{AttentionMode, TrainConfig};
use crate::error::{Error, Result};
use crate::graph::InteractionGraph;
use crate::ids::{ItemId, UserId};
use crate::model::{item_embedding, predict, user_embedding, NodeSelection};
use crate::numeric::ParamStore;
use crate::par;
use crate::rng;
use crate::sampler::NodeRef;

const EVAL_STREAM: u64 = 0xe7a1;

#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub user: UserId,
    pub ranked_items: Vec<ItemId>,
    pub scores: Vec<f64>,
}

impl RankedList {
    /// Sorts `(item, score)` pairs by score descending, then item ascending.
    pub fn from_scores(user: UserId, mut scored: Vec<(ItemId, f64)>) -> Self {
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let (ranked_items, scores) = scored.into_iter().unzip();
        Self {
            user,
            ranked_items,
            scores,
        }
    }

    fn top(&self, n: usize) -> &[ItemId] {
        &self.ranked_items[..n.min(self.ranked_items.len())]
    }
}

/// Anything that can produce a user's ranking over non-training items.
pub trait Ranker: Sync {
    fn rank(&self, user: UserId, train: &InteractionGraph) -> Result<RankedList>;
}

/// Inference-mode scorer over a frozen parameter snapshot.
///
/// Neighbor selections do not depend on the ranking user, so they are
/// computed once per node up front.
pub struct Scorer<'a> {
    params: &'a ParamStore,
    graph: &'a RelationalGraph,
    attention: AttentionMode,
    item_sel: Vec<Option<NodeSelection>>,
    user_sel: Vec<Option<NodeSelection>>,
}

impl<'a> Scorer<'a> {
    /// Uses `cfg`'s strategy, K, attention mode and seed.
    pub fn new(params: &'a ParamStore, graph: &'a RelationalGraph, cfg: &TrainConfig) -> Result<Self> {
        let TrainConfig {
            strategy,
            k,
            attention,
            seed,
            ..
        } = *cfg;
        let item_sel = par::try_map_range(graph.num_items(), |i| {
            let item = ItemId(i as u32);
            NodeSelection::inference(NodeRef::Item(item), graph.item_neighbors(item), params, strategy, k, seed)
        })?;
        let user_sel = par::try_map_range(graph.num_users(), |u| {
            let user = UserId(u as u32);
            NodeSelection::inference(NodeRef::User(user), graph.user_neighbors(user), params, strategy, k, seed)
        })?;
        Ok(Self {
            params,
            graph,
            attention,
            item_sel,
            user_sel,
        })
    }

    pub fn user_embedding(&self, user: UserId) -> Vec<f64> {
        user_embedding(self.params, self.graph, user, self.user_sel[user.index()].as_ref(), self.attention)
    }

    /// Item embedding as seen by `user`.
    pub fn item_embedding(&self, item: ItemId, user: UserId) -> Vec<f64> {
        item_embedding(self.params, self.graph, item, user, self.item_sel[item.index()].as_ref(), self.attention)
    }

    pub fn score(&self, user: UserId, item: ItemId) -> f64 {
        predict(&self.user_embedding(user), &self.item_embedding(item, user))
    }
}

impl Ranker for Scorer<'_> {
    fn rank(&self, user: UserId, train: &InteractionGraph) -> Result<RankedList> {
        if user.index() >= self.graph.num_users() {
            return Err(Error::UnknownUser(user.0));
        }
        let eu = self.user_embedding(user);
        let scored = (0..self.graph.num_items() as u32)
            .map(ItemId)
            .filter(|&i| !train.contains(user, i))
            .map(|i| (i, predict(&eu, &self.item_embedding(i, user))))
            .collect();
        Ok(RankedList::from_scores(user, scored))
    }
}

/// Ranks every non-training item for `user`.
pub fn rank_items<R: Ranker + ?Sized>(ranker: &R, user: UserId, train: &InteractionGraph) -> Result<RankedList> {
    ranker.rank(user, train)
}

fn hits(rl: &RankedList, relevant: &[ItemId], n: usize) -> Option<usize> {
    if relevant.is_empty() {
        return None;
    }
    Some(rl.top(n).iter().filter(|i| relevant.contains(i)).count())
}

/// `|top-N ∩ relevant| / |relevant|`; `None` when `relevant` is empty.
pub fn recall_at(rl: &RankedList, relevant: &[ItemId], n: usize) -> Option<f64> {
    hits(rl, relevant, n).map(|h| h as f64 / relevant.len() as f64)
}

/// `|top-N ∩ relevant| / N`, with `N` fixed even for short lists.
pub fn precision_at(rl: &RankedList, relevant: &[ItemId], n: usize) -> Option<f64> {
    if n == 0 {
        return hits(rl, relevant, n).map(|_| 0.0);
    }
    hits(rl, relevant, n).map(|h| h as f64 / n as f64)
}

/// Binary-gain NDCG with the ideal ranking truncated at `min(N, |relevant|)`.
pub fn ndcg_at(rl: &RankedList, relevant: &[ItemId], n: usize) -> Option<f64> {
    if relevant.is_empty() {
        return None;
    }
    let discount = |rank: usize| 1.0 / ((rank + 1) as f64).log2();
    let dcg: f64 = rl
        .top(n)
        .iter()
        .enumerate()
        .filter(|(_, i)| relevant.contains(i))
        .map(|(k, _)| discount(k + 1))
        .sum();
    let idcg: f64 = (1..=n.min(relevant.len())).map(discount).sum();
    Some(if idcg > 0.0 { dcg / idcg } else { 0.0 })
}

/// Macro-averaged metrics, one column per cutoff.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricTable {
    pub ns: Vec<usize>,
    pub recall: Vec<f64>,
    pub precision: Vec<f64>,
    pub ndcg: Vec<f64>,
    pub users: usize,
}

impl MetricTable {
    pub fn recall_at(&self, n: usize) -> Option<f64> {
        self.ns.iter().position(|&m| m == n).map(|k| self.recall[k])
    }

    fn rows(&self) -> [(&'static str, char, &[f64]); 3] {
        [
            ("recall", 'R', &self.recall),
            ("precision", 'P', &self.precision),
            ("ndcg", 'N', &self.ndcg),
        ]
    }

    /// `metric<TAB>N<TAB>value` lines after a header.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("metric\tN\tvalue\n");
        for (name, _, values) in self.rows() {
            for (n, v) in self.ns.iter().zip(values) {
                writeln!(out, "{name}\t{n}\t{v}").expect("write to String");
            }
        }
        writeln!(out, "users\t-\t{}", self.users).expect("write to String");
        out
    }

    /// One header row `R@5 … N@20` and one row of values.
    pub fn to_text(&self) -> String {
        let mut head = String::new();
        let mut vals = String::new();
        for (_, letter, values) in self.rows() {
            for (n, v) in self.ns.iter().zip(values) {
                write!(head, "{:>9}", format!("{letter}@{n}")).expect("write to String");
                write!(vals, "{v:>9.4}").expect("write to String");
            }
        }
        format!("{}\n{}\n", head.trim_start(), vals.trim_start())
    }
}

/// Ranks every test user (or a seeded subsample of `eval_users`) and
/// averages Recall, Precision and NDCG at each cutoff.
pub fn evaluate<R: Ranker + ?Sized>(
    train: &InteractionGraph,
    test: &InteractionGraph,
    ranker: &R,
    ns: &[usize],
    eval_users: usize,
    seed: u64,
) -> Result<MetricTable> {
    let mut users: Vec<UserId> = (0..test.num_users() as u32)
        .map(UserId)
        .filter(|&u| !test.user_items(u).is_empty())
        .collect();
    if users.is_empty() {
        return Err(Error::EmptyGraph);
    }
    if eval_users > 0 && eval_users < users.len() {
        let mut rng = rng::stream(seed, &[EVAL_STREAM]);
        users = users.into_iter().choose_multiple(&mut rng, eval_users);
        users.sort_unstable();
    }
    let per_user = par::try_map(&users, |&u| {
        let rl = ranker.rank(u, train)?;
        let rel = test.user_items(u);
        let row = |f: fn(&RankedList, &[ItemId], usize) -> Option<f64>| -> Vec<f64> {
            ns.iter().map(|&n| f(&rl, rel, n).expect("non-empty relevant set")).collect()
        };
        Ok::<_, Error>([row(recall_at), row(precision_at), row(ndcg_at)])
    })?;
    let mut sums = [vec![0.0; ns.len()], vec![0.0; ns.len()], vec![0.0; ns.len()]];
    for rows in &per_user {
        for (sum, row) in sums.iter_mut().zip(rows) {
            for (s, v) in sum.iter_mut().zip(row) {
                *s += v;
            }
        }
    }
    let m = users.len() as f64;
    let [recall, precision, ndcg] = sums.map(|v| v.into_iter().map(|s| s / m).collect());
    Ok(MetricTable {
        ns: ns.to_vec(),
        recall,
        precision,
        ndcg,
        users: users.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cograph::{build_cograph, unify};
    use crate::graph::KnowledgeGraph;
    use crate::ids::IdMap;
    use crate::numeric::{init_params, sigmoid, Shapes};
    use rand::seq::SliceRandom;
    use rand::Rng;
    use std::collections::HashSet;

    fn list(items: &[u32]) -> RankedList {
        RankedList {
            user: UserId(0),
            ranked_items: items.iter().map(|&i| ItemId(i)).collect(),
            scores: (0..items.len()).map(|k| -(k as f64)).collect(),
        }
    }

    fn ids(items: &[u32]) -> Vec<ItemId> {
        items.iter().map(|&i| ItemId(i)).collect()
    }

    #[test]
    fn closed_form_cases() {
        let rl = list(&[4, 7, 1, 9, 3, 2]);
        assert_eq!(recall_at(&rl, &ids(&[7, 3]), 5), Some(1.0));
        assert_eq!(recall_at(&rl, &ids(&[2]), 5), Some(0.0));
        assert_eq!(precision_at(&rl, &ids(&[4]), 5), Some(0.2));
        assert_eq!(precision_at(&rl, &ids(&[4, 7, 1, 9, 3]), 5), Some(1.0));
        assert_eq!(ndcg_at(&rl, &ids(&[4]), 5), Some(1.0));
        assert_eq!(ndcg_at(&rl, &ids(&[1]), 5), Some(0.5));
        assert_eq!(ndcg_at(&rl, &ids(&[4, 7, 1]), 5), Some(1.0));
        assert_eq!(recall_at(&rl, &[], 5), None);
    }

    #[test]
    fn short_lists_keep_n_in_the_denominator() {
        let rl = list(&[1, 2]);
        assert_eq!(precision_at(&rl, &ids(&[1, 2]), 10), Some(0.2));
        assert_eq!(recall_at(&rl, &ids(&[1, 2]), 10), Some(1.0));
    }

    fn oracle(rl: &RankedList, rel: &[ItemId], n: usize) -> (f64, f64, f64) {
        let top: HashSet<ItemId> = rl.ranked_items.iter().take(n).copied().collect();
        let rs: HashSet<ItemId> = rel.iter().copied().collect();
        let hit = top.intersection(&rs).count() as f64;
        let mut dcg = 0.0;
        for (pos, item) in rl.ranked_items.iter().enumerate().take(n) {
            if rs.contains(item) {
                dcg += 1.0 / (pos as f64 + 2.0).log2();
            }
        }
        let mut idcg = 0.0;
        for pos in 0..n.min(rs.len()) {
            idcg += 1.0 / (pos as f64 + 2.0).log2();
        }
        (hit / rs.len() as f64, hit / n as f64, dcg / idcg)
    }

    #[test]
    fn agrees_with_set_oracle_on_random_instances() {
        let mut rng = rng::stream(11, &[]);
        for _ in 0..1000 {
            let catalog = rng.gen_range(1..60u32);
            let mut order: Vec<u32> = (0..catalog).collect();
            order.shuffle(&mut rng);
            let rl = list(&order);
            let m = rng.gen_range(1..=catalog as usize);
            let rel: Vec<ItemId> = (0..catalog).map(ItemId).choose_multiple(&mut rng, m);
            let n = rng.gen_range(1..40);
            let (r, p, g) = oracle(&rl, &rel, n);
            assert!((recall_at(&rl, &rel, n).unwrap() - r).abs() <= 1e-12);
            assert!((precision_at(&rl, &rel, n).unwrap() - p).abs() <= 1e-12);
            assert!((ndcg_at(&rl, &rel, n).unwrap() - g).abs() <= 1e-12);
            let lhs = recall_at(&rl, &rel, n).unwrap() * rel.len() as f64;
            let rhs = precision_at(&rl, &rel, n).unwrap() * n as f64;
            assert!((lhs - rhs).abs() < 1e-9);
        }
    }

    #[test]
    fn ndcg_can_drop_before_the_relevant_set_is_covered() {
        let rl = list(&[0, 1, 2]);
        let rel = ids(&[0, 2]);
        assert_eq!(ndcg_at(&rl, &rel, 1), Some(1.0));
        assert!(ndcg_at(&rl, &rel, 2).unwrap() < 1.0);
    }

    #[test]
    fn monotone_in_n() {
        let mut rng = rng::stream(12, &[]);
        for _ in 0..200 {
            let mut order: Vec<u32> = (0..30).collect();
            order.shuffle(&mut rng);
            let rl = list(&order);
            let m = rng.gen_range(1..10);
            let rel: Vec<ItemId> = (0..30).map(ItemId).choose_multiple(&mut rng, m);
            for n in 1..35 {
                assert!(recall_at(&rl, &rel, n) <= recall_at(&rl, &rel, n + 1));
                let (a, b) = (ndcg_at(&rl, &rel, n).unwrap(), ndcg_at(&rl, &rel, n + 1).unwrap());
                assert!((0.0..=1.0).contains(&a));
                // The ideal DCG stops growing once N covers the relevant set.
                if n >= rel.len() {
                    assert!(a <= b + 1e-15);
                }
            }
        }
    }

    fn catalog(n_items: usize, train_edges: &[(u32, u32)]) -> (RelationalGraph, InteractionGraph) {
        let items: IdMap = (0..n_items).map(|i| format!("i{i}")).collect();
        let users: IdMap = ["u0", "u1"].into_iter().collect();
        let train = InteractionGraph::from_edges(
            users,
            items.clone(),
            train_edges.iter().map(|&(u, i)| (UserId(u), ItemId(i))),
        )
        .unwrap();
        let rg = unify(&build_cograph(&KnowledgeGraph::default(), &items, None), &train).unwrap();
        (rg, train)
    }

    fn shapes(rg: &RelationalGraph) -> Shapes {
        Shapes {
            num_users: rg.num_users(),
            num_items: rg.num_items(),
            num_relations: rg.num_relations(),
            dim: 4,
        }
    }

    #[test]
    fn ranking_excludes_training_items_and_breaks_ties_by_id() {
        let (rg, train) = catalog(3, &[(0, 1)]);
        let p = ParamStore::zeros(shapes(&rg));
        let s = Scorer::new(&p, &rg, &TrainConfig { dim: 4, k: 2, ..TrainConfig::default() }).unwrap();
        let rl = rank_items(&s, UserId(0), &train).unwrap();
        assert_eq!(rl.ranked_items, ids(&[0, 2]));
        // Zero parameters aggregate to σ(0) = 0.5 in every coordinate.
        assert_eq!(rl.scores, vec![sigmoid(4.0 * 0.25); 2]);
        assert!(matches!(rank_items(&s, UserId(7), &train), Err(Error::UnknownUser(7))));
    }

    #[test]
    fn ranking_matches_rescore_oracle() {
        let (rg, train) = catalog(12, &[(0, 1), (0, 5), (1, 2)]);
        let p = init_params(shapes(&rg), 3, 0.8).unwrap();
        let s = Scorer::new(&p, &rg, &TrainConfig { dim: 4, k: 1, ..TrainConfig::default() }).unwrap();
        let rl = rank_items(&s, UserId(0), &train).unwrap();
        let mut oracle: Vec<(ItemId, f64)> = (0..12)
            .map(ItemId)
            .filter(|i| !train.contains(UserId(0), *i))
            .map(|i| (i, s.score(UserId(0), i)))
            .collect();
        oracle.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        assert_eq!(rl.ranked_items, oracle.iter().map(|x| x.0).collect::<Vec<_>>());
        assert!(rl.scores.windows(2).all(|w| w[0] >= w[1]));
    }

    /// Ranks test items first, in id order.
    struct Perfect<'a>(&'a InteractionGraph);

    impl Ranker for Perfect<'_> {
        fn rank(&self, user: UserId, train: &InteractionGraph) -> Result<RankedList> {
            let scored = (0..train.num_items() as u32)
                .map(ItemId)
                .filter(|&i| !train.contains(user, i))
                .map(|i| (i, if self.0.contains(user, i) { 1.0 } else { 0.0 }))
                .collect();
            Ok(RankedList::from_scores(user, scored))
        }
    }

    /// Scores from a seeded hash of `(user, item)`.
    struct Random(u64);

    impl Ranker for Random {
        fn rank(&self, user: UserId, train: &InteractionGraph) -> Result<RankedList> {
            let scored = (0..train.num_items() as u32)
                .map(ItemId)
                .filter(|&i| !train.contains(user, i))
                .map(|i| (i, rng::derive_seed(self.0, &[user.0 as u64, i.0 as u64]) as f64))
                .collect();
            Ok(RankedList::from_scores(user, scored))
        }
    }

    fn split_of(n_users: usize, n_items: usize, per_user: usize, seed: u64) -> (InteractionGraph, InteractionGraph) {
        let mut rng = rng::stream(seed, &[]);
        let users: IdMap = (0..n_users).map(|u| format!("u{u}")).collect();
        let items: IdMap = (0..n_items).map(|i| format!("i{i}")).collect();
        let mut train = Vec::new();
        let mut test = Vec::new();
        for u in 0..n_users as u32 {
            let chosen = (0..n_items as u32).choose_multiple(&mut rng, 2 * per_user);
            train.extend(chosen[..per_user].iter().map(|&i| (UserId(u), ItemId(i))));
            test.extend(chosen[per_user..].iter().map(|&i| (UserId(u), ItemId(i))));
        }
        (
            InteractionGraph::from_edges(users.clone(), items.clone(), train).unwrap(),
            InteractionGraph::from_edges(users, items, test).unwrap(),
        )
    }

    #[test]
    fn perfect_ranker_scores_one() {
        let (train, test) = split_of(20, 100, 3, 1);
        let t = evaluate(&train, &test, &Perfect(&test), &[5, 10, 20], 0, 0).unwrap();
        assert_eq!(t.recall, vec![1.0; 3]);
        assert_eq!(t.ndcg, vec![1.0; 3]);
        assert_eq!(t.users, 20);
    }

    #[test]
    fn random_ranker_recall_tracks_n_over_catalog() {
        let (train, test) = split_of(400, 1000, 5, 2);
        let mut means = Vec::new();
        for seed in 0..5 {
            let t = evaluate(&train, &test, &Random(seed), &[20], 0, 0).unwrap();
            means.push(t.recall[0]);
        }
        let mean = means.iter().sum::<f64>() / means.len() as f64;
        // Expected 20 / 995 non-training candidates.
        let expect = 20.0 / 995.0;
        assert!((mean - expect).abs() < 0.25 * expect, "{mean} vs {expect}");
    }

    #[test]
    fn single_user_table_equals_that_user() {
        let (train, test) = split_of(1, 50, 4, 3);
        let r = Random(9);
        let t = evaluate(&train, &test, &r, &[5, 10], 0, 0).unwrap();
        let rl = r.rank(UserId(0), &train).unwrap();
        let rel = test.user_items(UserId(0));
        assert_eq!(t.recall, vec![recall_at(&rl, rel, 5).unwrap(), recall_at(&rl, rel, 10).unwrap()]);
        assert_eq!(t.ndcg[1], ndcg_at(&rl, rel, 10).unwrap());
    }

    #[test]
    fn subsample_and_empty_test() {
        let (train, test) = split_of(30, 80, 2, 4);
        let a = evaluate(&train, &test, &Random(1), &[5], 7, 5).unwrap();
        assert_eq!(a.users, 7);
        assert_eq!(a, evaluate(&train, &test, &Random(1), &[5], 7, 5).unwrap());
        let empty = InteractionGraph::from_edges(test.users.clone(), test.items.clone(), []).unwrap();
        assert!(matches!(evaluate(&train, &empty, &Random(1), &[5], 0, 0), Err(Error::EmptyGraph)));
    }

    #[test]
    fn table_renderings() {
        let t = MetricTable {
            ns: vec![5, 10],
            recall: vec![0.1, 0.2],
            precision: vec![0.05, 0.04],
            ndcg: vec![0.3, 0.35],
            users: 3,
        };
        let tsv = t.to_tsv();
        assert!(tsv.starts_with("metric\tN\tvalue\nrecall\t5\t0.1\n"));
        let text = t.to_text();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0].split_whitespace().collect::<Vec<_>>(),
            ["R@5", "R@10", "P@5", "P@10", "N@5", "N@10"]
        );
        assert_eq!(lines[1].split_whitespace().next(), Some("0.1000"));
    }
}
