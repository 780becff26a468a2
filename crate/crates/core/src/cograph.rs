//! Item-item co-interact graph and the unified relational graph.
//!
//! Two items are linked under the derived relation `co-r` whenever both are
//! heads of triples `(item, r, t)` with the same relation `r` and tail `t`.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::{InteractionGraph, KnowledgeGraph};
use crate::ids::{IdMap, ItemId, RelationId, UserId};
use crate::par;

/// Directed half of an undirected co-relation edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CoEdge {
    pub from: ItemId,
    pub relation: RelationId,
    pub to: ItemId,
    /// Number of distinct shared tails; used only for cap tie-breaking.
    pub shared_tails: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoGraph {
    pub num_items: usize,
    /// `co_relations.raw(r)` is the name of the co-relation derived from KG
    /// relation `r`; the id is shared.
    pub co_relations: IdMap,
    /// Both directions of every edge, sorted by `(from, relation, to)`.
    pub edges: Vec<CoEdge>,
}

impl CoGraph {
    pub fn num_relations(&self) -> usize {
        self.co_relations.len()
    }

    /// Writes dense `item<TAB>co_relation<TAB>item` lines.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for e in &self.edges {
            writeln!(out, "{}\t{}\t{}", e.from, e.relation, e.to)?;
        }
        Ok(())
    }

    /// Reads an export written by [`CoGraph::write_tsv`].
    pub fn read_tsv(path: impl AsRef<Path>, num_items: usize, co_relations: IdMap) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut edges = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                message,
            };
            let fields: Vec<u32> = line
                .split('\t')
                .map(|s| s.parse::<u32>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| parse_err(e.to_string()))?;
            let [a, r, b] = fields[..] else {
                return Err(parse_err(format!("expected 3 fields, found {}", fields.len())));
            };
            if a as usize >= num_items || b as usize >= num_items || r as usize >= co_relations.len()
            {
                return Err(parse_err("id out of range".into()));
            }
            edges.push(CoEdge {
                from: ItemId(a),
                relation: RelationId(r),
                to: ItemId(b),
                shared_tails: 1,
            });
        }
        edges.sort_unstable();
        Ok(Self {
            num_items,
            co_relations,
            edges,
        })
    }
}

/// Materializes the co-interact graph over the items in `items`.
///
/// With `cap = Some(c)`, each item keeps at most `c` neighbors per relation,
/// preferring more shared tails then smaller neighbor id. An edge survives
/// only if both endpoints keep it, so the result stays undirected.
pub fn build_cograph(kg: &KnowledgeGraph, items: &IdMap, cap: Option<usize>) -> CoGraph {
    let item_of = kg.item_entities(items);
    let co_relations: IdMap = kg.relations.iter().map(|(raw, _)| format!("co-{raw}")).collect();

    let mut groups: HashMap<(u32, u32), Vec<ItemId>> = HashMap::new();
    for t in &kg.triples {
        if let Some(item) = item_of[t.head.index()] {
            groups.entry((t.relation.0, t.tail.0)).or_default().push(item);
        }
    }
    let mut groups: Vec<((u32, u32), Vec<ItemId>)> =
        groups.into_iter().filter(|(_, g)| g.len() > 1).collect();
    groups.sort_unstable_by_key(|(k, _)| *k);

    // Pairs (a < b) per tail group, then merged and counted.
    let chunks = par::map(&groups, |((rel, _), members)| {
        let mut members = members.clone();
        members.sort_unstable();
        members.dedup();
        let mut pairs = Vec::with_capacity(members.len() * (members.len() - 1) / 2);
        for (x, &a) in members.iter().enumerate() {
            for &b in &members[x + 1..] {
                pairs.push((a, RelationId(*rel), b));
            }
        }
        pairs
    });
    let mut pairs: Vec<(ItemId, RelationId, ItemId)> = chunks.into_iter().flatten().collect();
    pairs.sort_unstable();

    let mut edges = Vec::new();
    for run in pairs.chunk_by(|x, y| x == y) {
        let (a, relation, b) = run[0];
        let shared_tails = run.len() as u32;
        edges.push(CoEdge { from: a, relation, to: b, shared_tails });
        edges.push(CoEdge { from: b, relation, to: a, shared_tails });
    }
    edges.sort_unstable();

    if let Some(cap) = cap {
        edges = apply_cap(edges, cap);
    }

    CoGraph {
        num_items: items.len(),
        co_relations,
        edges,
    }
}

fn apply_cap(edges: Vec<CoEdge>, cap: usize) -> Vec<CoEdge> {
    let mut kept = std::collections::HashSet::new();
    // `edges` is sorted by (from, relation, to), so each run is one list.
    for run in edges.chunk_by(|x, y| (x.from, x.relation) == (y.from, y.relation)) {
        let mut ranked: Vec<&CoEdge> = run.iter().collect();
        ranked.sort_by(|x, y| y.shared_tails.cmp(&x.shared_tails).then(x.to.cmp(&y.to)));
        kept.extend(ranked.into_iter().take(cap).map(|e| (e.from, e.relation, e.to)));
    }
    edges
        .into_iter()
        .filter(|e| kept.contains(&(e.from, e.relation, e.to)) && kept.contains(&(e.to, e.relation, e.from)))
        .collect()
}

/// A neighbor slot: the neighboring item and the relation of the edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Neighbor {
    pub item: ItemId,
    pub relation: RelationId,
}

/// Co-relation item-item edges plus training user-item edges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationalGraph {
    num_co_relations: usize,
    /// Sorted by `(relation, item)`.
    item_neighbors: Vec<Vec<Neighbor>>,
    /// Sorted by item; relation is always `interact_relation`.
    user_neighbors: Vec<Vec<Neighbor>>,
    item_users: Vec<Vec<UserId>>,
}

impl RelationalGraph {
    pub fn num_users(&self) -> usize {
        self.user_neighbors.len()
    }

    pub fn num_items(&self) -> usize {
        self.item_neighbors.len()
    }

    pub fn num_co_relations(&self) -> usize {
        self.num_co_relations
    }

    /// Co-relations plus the interaction relation.
    pub fn num_relations(&self) -> usize {
        self.num_co_relations + 1
    }

    /// The relation carried by every user-item edge.
    pub fn interact_relation(&self) -> RelationId {
        RelationId(self.num_co_relations as u32)
    }

    pub fn item_neighbors(&self, item: ItemId) -> &[Neighbor] {
        &self.item_neighbors[item.index()]
    }

    pub fn user_neighbors(&self, user: UserId) -> &[Neighbor] {
        &self.user_neighbors[user.index()]
    }

    pub fn item_users(&self, item: ItemId) -> &[UserId] {
        &self.item_users[item.index()]
    }

    /// The user-item edges the graph was built from, sorted.
    pub fn interactions(&self) -> Vec<(UserId, ItemId)> {
        self.user_neighbors
            .iter()
            .enumerate()
            .flat_map(|(u, ns)| ns.iter().map(move |n| (UserId(u as u32), n.item)))
            .collect()
    }
}

/// Unifies the co-graph with training interactions.
pub fn unify(co: &CoGraph, train: &InteractionGraph) -> Result<RelationalGraph> {
    if co.num_items != train.num_items() {
        return Err(Error::IdMismatch(format!(
            "co-graph has {} items, interactions have {}",
            co.num_items,
            train.num_items()
        )));
    }
    let mut item_neighbors = vec![Vec::new(); co.num_items];
    for e in &co.edges {
        item_neighbors[e.from.index()].push(Neighbor {
            item: e.to,
            relation: e.relation,
        });
    }
    for list in &mut item_neighbors {
        list.sort_unstable_by_key(|n| (n.relation, n.item));
        list.dedup();
    }
    let interact = RelationId(co.num_relations() as u32);
    let mut item_users = vec![Vec::new(); co.num_items];
    let user_neighbors = (0..train.num_users())
        .map(|u| {
            let u = UserId(u as u32);
            train
                .user_items(u)
                .iter()
                .map(|&item| {
                    item_users[item.index()].push(u);
                    Neighbor {
                        item,
                        relation: interact,
                    }
                })
                .collect()
        })
        .collect();
    Ok(RelationalGraph {
        num_co_relations: co.num_relations(),
        item_neighbors,
        user_neighbors,
        item_users,
    })
}

/// Histogram of item neighbor-list lengths.
pub fn degree_stats(rg: &RelationalGraph) -> BTreeMap<usize, usize> {
    let mut hist = BTreeMap::new();
    for list in &rg.item_neighbors {
        *hist.entry(list.len()).or_insert(0) += 1;
    }
    hist
}
