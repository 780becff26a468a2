//! Knowledge-graph and interaction ingestion, dense id assignment and
//! train/test splitting.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::ids::{EntityId, IdMap, ItemId, RelationId, UserId};
use crate::rng;

const SPLIT_STREAM: u64 = 0x5711;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

/// Directed heterogeneous triple store.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeGraph {
    pub entities: IdMap,
    pub relations: IdMap,
    /// Deduplicated, in first-seen order.
    pub triples: Vec<Triple>,
}

impl KnowledgeGraph {
    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    /// For every entity, the item id it denotes in `items`, if any.
    ///
    /// Items are entities whose raw id also appears in the interaction file.
    pub fn item_entities(&self, items: &IdMap) -> Vec<Option<ItemId>> {
        self.entities
            .iter()
            .map(|(raw, _)| items.get(raw).map(ItemId))
            .collect()
    }

    /// Writes the triples back as raw-id TSV.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for t in &self.triples {
            writeln!(
                out,
                "{}\t{}\t{}",
                self.entities.raw(t.head.0),
                self.relations.raw(t.relation.0),
                self.entities.raw(t.tail.0)
            )?;
        }
        Ok(())
    }
}

/// User-item implicit feedback graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionGraph {
    pub users: IdMap,
    pub items: IdMap,
    /// Sorted, deduplicated item lists indexed by user.
    by_user: Vec<Vec<ItemId>>,
}

impl InteractionGraph {
    /// Builds a graph over the given id tables. Duplicate edges are dropped.
    pub fn from_edges(
        users: IdMap,
        items: IdMap,
        edges: impl IntoIterator<Item = (UserId, ItemId)>,
    ) -> Result<Self> {
        let mut by_user = vec![Vec::new(); users.len()];
        for (u, i) in edges {
            if u.index() >= users.len() || i.index() >= items.len() {
                return Err(Error::IdMismatch(format!(
                    "edge ({u}, {i}) outside {} users / {} items",
                    users.len(),
                    items.len()
                )));
            }
            by_user[u.index()].push(i);
        }
        for list in &mut by_user {
            list.sort_unstable();
            list.dedup();
        }
        Ok(Self {
            users,
            items,
            by_user,
        })
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_items(&self) -> usize {
        self.items.len()
    }

    pub fn num_edges(&self) -> usize {
        self.by_user.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.num_edges() == 0
    }

    pub fn user_items(&self, user: UserId) -> &[ItemId] {
        &self.by_user[user.index()]
    }

    pub fn contains(&self, user: UserId, item: ItemId) -> bool {
        self.by_user
            .get(user.index())
            .is_some_and(|l| l.binary_search(&item).is_ok())
    }

    /// All edges sorted by `(user, item)`.
    pub fn edges(&self) -> impl Iterator<Item = (UserId, ItemId)> + '_ {
        self.by_user
            .iter()
            .enumerate()
            .flat_map(|(u, items)| items.iter().map(move |&i| (UserId(u as u32), i)))
    }

    /// Writes dense-id edges as `user<TAB>item`.
    pub fn write_dense_tsv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (u, i) in self.edges() {
            writeln!(out, "{u}\t{i}")?;
        }
        Ok(())
    }
}

/// Train/test partition of one interaction graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: InteractionGraph,
    pub test: InteractionGraph,
    pub seed: u64,
}

fn open(path: &Path) -> Result<BufReader<fs::File>> {
    fs::File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

/// Iterates non-empty lines as `(line_number, fields)`, requiring `arity`
/// tab-separated non-empty fields.
fn for_each_record<R: Read>(
    reader: R,
    label: &Path,
    arity: usize,
    mut f: impl FnMut(&[&str]),
) -> Result<()> {
    let reader = BufReader::new(reader);
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(label, e))?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != arity || fields.iter().any(|s| s.is_empty()) {
            return Err(Error::Parse {
                path: label.to_path_buf(),
                line: idx + 1,
                message: format!(
                    "expected {arity} tab-separated fields, found {}",
                    fields.len()
                ),
            });
        }
        f(&fields);
    }
    Ok(())
}

/// Parses `head<TAB>relation<TAB>tail` lines.
pub fn parse_triples<R: Read>(reader: R, label: &Path) -> Result<KnowledgeGraph> {
    let mut kg = KnowledgeGraph::default();
    let mut seen = HashSet::new();
    for_each_record(reader, label, 3, |f| {
        let t = Triple {
            head: EntityId(kg.entities.intern(f[0])),
            relation: RelationId(kg.relations.intern(f[1])),
            tail: EntityId(kg.entities.intern(f[2])),
        };
        if seen.insert(t) {
            kg.triples.push(t);
        }
    })?;
    Ok(kg)
}

pub fn load_triples(path: impl AsRef<Path>) -> Result<KnowledgeGraph> {
    let path = path.as_ref();
    parse_triples(open(path)?, path)
}

/// Parses `user<TAB>item` lines.
pub fn parse_interactions<R: Read>(reader: R, label: &Path) -> Result<InteractionGraph> {
    let mut users = IdMap::new();
    let mut items = IdMap::new();
    let mut edges = Vec::new();
    for_each_record(reader, label, 2, |f| {
        edges.push((UserId(users.intern(f[0])), ItemId(items.intern(f[1]))));
    })?;
    InteractionGraph::from_edges(users, items, edges)
}

pub fn load_interactions(path: impl AsRef<Path>) -> Result<InteractionGraph> {
    let path = path.as_ref();
    parse_interactions(open(path)?, path)
}

/// Parses dense-id `user<TAB>item` edges against known id tables.
pub fn load_dense_interactions(
    path: impl AsRef<Path>,
    users: &IdMap,
    items: &IdMap,
) -> Result<InteractionGraph> {
    let path = path.as_ref();
    let mut edges = Vec::new();
    let mut bad = None;
    for_each_record(open(path)?, path, 2, |f| {
        match (f[0].parse::<u32>(), f[1].parse::<u32>()) {
            (Ok(u), Ok(i)) => edges.push((UserId(u), ItemId(i))),
            _ => {
                bad.get_or_insert_with(|| format!("non-integer id in `{}\t{}`", f[0], f[1]));
            }
        }
    })?;
    if let Some(message) = bad {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message,
        });
    }
    InteractionGraph::from_edges(users.clone(), items.clone(), edges)
}

/// Writes `raw_id<TAB>dense_id` lines.
pub fn write_map(path: impl AsRef<Path>, map: &IdMap) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    for (raw, id) in map.iter() {
        writeln!(buf, "{raw}\t{id}").expect("write to Vec");
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Reads a map written by [`write_map`]; dense ids must be `0..n` in order.
pub fn read_map(path: impl AsRef<Path>) -> Result<IdMap> {
    let path = path.as_ref();
    let mut map = IdMap::new();
    let mut line_no = 0;
    let mut err = None;
    for_each_record(open(path)?, path, 2, |f| {
        line_no += 1;
        if err.is_some() {
            return;
        }
        let id = map.intern(f[0]);
        if f[1].parse::<u32>().ok() != Some(id) {
            err = Some(Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: format!("dense id `{}` out of sequence", f[1]),
            });
        }
    })?;
    match err {
        Some(e) => Err(e),
        None => Ok(map),
    }
}

/// Per-user random holdout of `⌊test_fraction · degree⌋` edges.
///
/// Every user keeps at least one training edge, so degree-1 users are
/// train-only.
pub fn split_interactions(
    g: &InteractionGraph,
    test_fraction: f64,
    seed: u64,
) -> Result<DatasetSplit> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "test_fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    if g.is_empty() {
        return Err(Error::EmptyGraph);
    }
    let mut rng = rng::stream(seed, &[SPLIT_STREAM]);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (u, items) in g.by_user.iter().enumerate() {
        let u = UserId(u as u32);
        let mut shuffled = items.clone();
        shuffled.shuffle(&mut rng);
        let held = (test_fraction * items.len() as f64).floor() as usize;
        let (t, rest) = shuffled.split_at(held);
        test.extend(t.iter().map(|&i| (u, i)));
        train.extend(rest.iter().map(|&i| (u, i)));
    }
    Ok(DatasetSplit {
        train: InteractionGraph::from_edges(g.users.clone(), g.items.clone(), train)?,
        test: InteractionGraph::from_edges(g.users.clone(), g.items.clone(), test)?,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kg(text: &str) -> Result<KnowledgeGraph> {
        parse_triples(text.as_bytes(), Path::new("kg.tsv"))
    }

    fn inter(text: &str) -> InteractionGraph {
        parse_interactions(text.as_bytes(), Path::new("ui.tsv")).unwrap()
    }

    #[test]
    fn empty_file_is_empty_graph() {
        let g = kg("").unwrap();
        assert_eq!((g.num_entities(), g.num_relations(), g.triples.len()), (0, 0, 0));
    }

    #[test]
    fn duplicate_triples_are_dropped() {
        let text = "a\tr\tb\nc\tr\tb\na\tr\tb\n";
        let g = kg(text).unwrap();
        let oracle: HashSet<&str> = text.lines().collect();
        assert_eq!(g.triples.len(), oracle.len());
        assert_eq!(g.triples.len(), 2);
        assert_eq!(g.num_entities(), 3);
        assert_eq!(g.num_relations(), 1);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = kg("a\tr\tb\n\na\tr\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let err = parse_interactions("u\ti\nu i x\n".as_bytes(), Path::new("x")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn ids_follow_first_seen_order() {
        let g = kg("z\tr2\ty\ny\tr1\tx\n").unwrap();
        assert_eq!(g.entities.get("z"), Some(0));
        assert_eq!(g.entities.get("y"), Some(1));
        assert_eq!(g.entities.get("x"), Some(2));
        assert_eq!(g.relations.get("r1"), Some(1));
    }

    #[test]
    fn export_round_trip() {
        let text = "a\tr\tb\nb\ts\tc\nc\tr\ta\n";
        let g = kg(text).unwrap();
        let mut out = Vec::new();
        g.write_tsv(&mut out).unwrap();
        let mut a: Vec<&str> = text.lines().collect();
        let out = String::from_utf8(out).unwrap();
        let mut b: Vec<&str> = out.lines().collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }

    #[test]
    fn singleton_and_duplicate_interactions() {
        let g = inter("u0\ti0\n");
        assert_eq!((g.num_users(), g.num_items(), g.num_edges()), (1, 1, 1));
        let g = inter("u0\ti0\nu0\ti0\n");
        assert_eq!(g.num_edges(), 1);
    }

    #[test]
    fn split_exact_counts() {
        let text: String = (0..10).map(|i| format!("u\ti{i}\n")).collect();
        let g = inter(&text);
        for seed in [0, 1, 99] {
            let s = split_interactions(&g, 0.2, seed).unwrap();
            assert_eq!(s.train.num_edges(), 8);
            assert_eq!(s.test.num_edges(), 2);
        }
        let a = split_interactions(&g, 0.2, 5).unwrap();
        let b = split_interactions(&g, 0.2, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn split_keeps_degree_one_users_in_train() {
        let g = inter("a\tx\nb\tx\nb\ty\n");
        let s = split_interactions(&g, 0.5, 3).unwrap();
        assert_eq!(s.train.user_items(UserId(0)), &[ItemId(0)]);
        assert!(s.test.user_items(UserId(0)).is_empty());
        assert_eq!(s.test.num_edges(), 1);
    }

    #[test]
    fn split_rejects_bad_input() {
        let g = inter("a\tx\n");
        assert!(split_interactions(&g, 0.0, 1).is_err());
        assert!(split_interactions(&g, 1.0, 1).is_err());
        let empty = InteractionGraph::from_edges(IdMap::new(), IdMap::new(), []).unwrap();
        assert!(matches!(split_interactions(&empty, 0.5, 1), Err(Error::EmptyGraph)));
    }

    #[test]
    fn map_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let map: IdMap = ["x", "y", "z"].into_iter().collect();
        let p = dir.path().join("m.map");
        write_map(&p, &map).unwrap();
        assert_eq!(read_map(&p).unwrap(), map);
    }
}
