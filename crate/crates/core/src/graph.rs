//! Graph and label loading, train/test splits, and persistence of the
//! node-token remap table.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Undirected, unweighted graph with a dense `0..N` node index.
///
/// Node tokens from the input file are kept so labels and outputs can be
/// joined back to the original ids.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    adjacency: Vec<Vec<usize>>,
    num_edges: usize,
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Graph {
    /// Builds a graph from token pairs.
    ///
    /// Self-loops are dropped and duplicate edges (in either direction)
    /// collapsed. Nodes are indexed in first-seen order over the surviving
    /// edges, so a node whose only edges were self-loops never receives an
    /// index: zero-degree nodes are removed by construction.
    pub fn from_edges<I, S>(edges: I) -> Result<Graph>
    where
        I: IntoIterator<Item = (S, S)>,
        S: AsRef<str>,
    {
        let mut tokens = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut adjacency: Vec<Vec<usize>> = Vec::new();
        let mut intern = |tok: &str, adjacency: &mut Vec<Vec<usize>>| -> usize {
            if let Some(&i) = index.get(tok) {
                return i;
            }
            let i = tokens.len();
            tokens.push(tok.to_string());
            index.insert(tok.to_string(), i);
            adjacency.push(Vec::new());
            i
        };
        for (a, b) in edges {
            let (a, b) = (a.as_ref(), b.as_ref());
            if a == b {
                continue;
            }
            let i = intern(a, &mut adjacency);
            let j = intern(b, &mut adjacency);
            adjacency[i].push(j);
            adjacency[j].push(i);
        }
        let mut num_edges = 0;
        for nbrs in adjacency.iter_mut() {
            nbrs.sort_unstable();
            nbrs.dedup();
            num_edges += nbrs.len();
        }
        if num_edges == 0 {
            return Err(Error::EmptyGraph);
        }
        Ok(Graph {
            adjacency,
            num_edges: num_edges / 2,
            tokens,
            index,
        })
    }

    /// Reassembles a graph from a token table and index-pair edges.
    fn from_indexed(tokens: Vec<String>, edges: &[(usize, usize)]) -> Result<Graph> {
        let n = tokens.len();
        let mut adjacency = vec![Vec::new(); n];
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::IndexOutOfRange { index: i.max(j), len: n });
            }
            if i != j {
                adjacency[i].push(j);
                adjacency[j].push(i);
            }
        }
        let mut num_edges = 0;
        for nbrs in adjacency.iter_mut() {
            nbrs.sort_unstable();
            nbrs.dedup();
            num_edges += nbrs.len();
        }
        if num_edges == 0 {
            return Err(Error::EmptyGraph);
        }
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        let graph = Graph {
            adjacency,
            num_edges: num_edges / 2,
            tokens,
            index,
        };
        graph.check_invariants()?;
        Ok(graph)
    }

    pub fn num_nodes(&self) -> usize {
        self.adjacency.len()
    }

    /// Number of undirected edges.
    pub fn num_edges(&self) -> usize {
        self.num_edges
    }

    /// Sorted neighbor list of node `i`.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    /// Original token of node `i`.
    pub fn token(&self, i: usize) -> &str {
        &self.tokens[i]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Iterates each undirected edge once as `(i, j)` with `i < j`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(i, nbrs)| nbrs.iter().filter(move |&&j| j > i).map(move |&j| (i, j)))
    }

    /// Verifies symmetry, sortedness, absence of self-loops and duplicates,
    /// index range, and positive degree for every node.
    pub fn check_invariants(&self) -> Result<()> {
        let n = self.num_nodes();
        let mut count = 0;
        for (i, nbrs) in self.adjacency.iter().enumerate() {
            if nbrs.is_empty() {
                return Err(Error::Degenerate(format!("node {i} has degree 0")));
            }
            for w in nbrs.windows(2) {
                if w[0] >= w[1] {
                    return Err(Error::Degenerate(format!(
                        "adjacency of node {i} is unsorted or has duplicates"
                    )));
                }
            }
            for &j in nbrs {
                if j >= n {
                    return Err(Error::IndexOutOfRange { index: j, len: n });
                }
                if j == i {
                    return Err(Error::Degenerate(format!("self-loop at node {i}")));
                }
                if self.adjacency[j].binary_search(&i).is_err() {
                    return Err(Error::Degenerate(format!("edge {i}-{j} is not symmetric")));
                }
            }
            count += nbrs.len();
        }
        if count != 2 * self.num_edges {
            return Err(Error::Degenerate("edge count mismatch".into()));
        }
        Ok(())
    }

    /// Writes `edges.txt` (index pairs) and `remap.csv` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_remap(self, &dir.join("remap.csv"))?;
        let path = dir.join("edges.txt");
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        for (i, j) in self.edges() {
            writeln!(w, "{i} {j}").map_err(|e| Error::io(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))
    }

    /// Inverse of [`Graph::save`].
    pub fn load_saved(dir: &Path) -> Result<Graph> {
        let tokens = read_remap(&dir.join("remap.csv"))?;
        let path = dir.join("edges.txt");
        let mut edges = Vec::new();
        for (line, a, b) in read_pairs(&path)? {
            let parse = |s: &str| {
                s.parse::<usize>().map_err(|_| Error::Parse {
                    path: path.clone(),
                    line,
                    message: format!("expected a node index, got `{s}`"),
                })
            };
            edges.push((parse(&a)?, parse(&b)?));
        }
        Graph::from_indexed(tokens, &edges)
    }
}

/// Reads whitespace-separated token pairs, skipping blank and `#` lines.
fn read_pairs(path: &Path) -> Result<Vec<(usize, String, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), None) => out.push((lineno + 1, a.to_string(), b.to_string())),
            _ => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    message: format!("expected two whitespace-separated tokens, got `{line}`"),
                })
            }
        }
    }
    Ok(out)
}

/// Loads an undirected edge list (one `a b` pair per line, `#` comments).
pub fn load_graph(path: impl AsRef<Path>) -> Result<Graph> {
    let pairs = read_pairs(path.as_ref())?;
    let total = {
        let mut seen = std::collections::HashSet::new();
        for (_, a, b) in &pairs {
            seen.insert(a.as_str());
            seen.insert(b.as_str());
        }
        seen.len()
    };
    let graph = Graph::from_edges(pairs.iter().map(|(_, a, b)| (a.as_str(), b.as_str())))?;
    if graph.num_nodes() < total {
        log::info!(
            "removed {} zero-degree node(s) from {}",
            total - graph.num_nodes(),
            path.as_ref().display()
        );
    }
    Ok(graph)
}

/// Writes the `node_token,index` table.
pub fn write_remap(graph: &Graph, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["node_token", "index"]).map_err(|e| csv_err(path, e))?;
    for (i, tok) in graph.tokens().iter().enumerate() {
        w.write_record([tok.as_str(), &i.to_string()])
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a remap table back into an index-ordered token list.
pub fn read_remap(path: &Path) -> Result<Vec<String>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut rows = Vec::new();
    for (lineno, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let bad = || Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 2,
            message: "expected `node_token,index`".into(),
        };
        let tok = rec.get(0).ok_or_else(bad)?.to_string();
        let idx: usize = rec.get(1).ok_or_else(bad)?.parse().map_err(|_| bad())?;
        rows.push((idx, tok));
    }
    rows.sort();
    for (expect, (idx, _)) in rows.iter().enumerate() {
        if *idx != expect {
            return Err(Error::Format(format!(
                "{}: remap indices are not contiguous",
                path.display()
            )));
        }
    }
    Ok(rows.into_iter().map(|(_, t)| t).collect())
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Format(format!("{}: {e}", path.display()))
}

/// Class labels for the labeled subset of nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelMap {
    labels: BTreeMap<usize, usize>,
    class_names: Vec<String>,
}

impl LabelMap {
    /// Builds a label map from `(node, class)` pairs; class ids must be
    /// contiguous from zero.
    pub fn new(labels: BTreeMap<usize, usize>, class_names: Vec<String>) -> Result<LabelMap> {
        if labels.is_empty() {
            return Err(Error::NoLabels);
        }
        let c = class_names.len();
        if let Some((&node, &class)) = labels.iter().find(|(_, &y)| y >= c) {
            return Err(Error::Degenerate(format!(
                "node {node} has class {class} outside 0..{c}"
            )));
        }
        let distinct: std::collections::BTreeSet<_> = labels.values().collect();
        if distinct.len() < 2 {
            return Err(Error::Degenerate("at least two distinct classes are required".into()));
        }
        Ok(LabelMap {
            labels,
            class_names,
        })
    }

    /// Convenience constructor with classes named by their id.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<LabelMap> {
        let labels: BTreeMap<usize, usize> = pairs.into_iter().collect();
        let c = labels.values().max().map_or(0, |m| m + 1);
        LabelMap::new(labels, (0..c).map(|i| i.to_string()).collect())
    }

    pub fn get(&self, node: usize) -> Option<usize> {
        self.labels.get(&node).copied()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_name(&self, class: usize) -> &str {
        &self.class_names[class]
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Labeled node indices in ascending order.
    pub fn labeled_nodes(&self) -> Vec<usize> {
        self.labels.keys().copied().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.labels.iter().map(|(&n, &c)| (n, c))
    }
}

/// What to do with label lines whose node is not in the graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum UnknownNodes {
    #[default]
    Error,
    /// Drop them; needed for datasets whose label file covers nodes that
    /// have no edges.
    Skip,
}

/// Loads `node class` lines; class tokens are interned in first-seen order.
pub fn load_labels(path: impl AsRef<Path>, graph: &Graph) -> Result<LabelMap> {
    load_labels_with(path, graph, UnknownNodes::Error)
}

pub fn load_labels_with(
    path: impl AsRef<Path>,
    graph: &Graph,
    unknown: UnknownNodes,
) -> Result<LabelMap> {
    let path = path.as_ref();
    let mut class_ids: HashMap<String, usize> = HashMap::new();
    let mut class_names: Vec<String> = Vec::new();
    let mut labels = BTreeMap::new();
    let mut skipped = 0usize;
    for (line, node_tok, class_tok) in read_pairs(path)? {
        let Some(node) = graph.index_of(&node_tok) else {
            match unknown {
                UnknownNodes::Error => {
                    return Err(Error::UnknownNode {
                        path: path.to_path_buf(),
                        line,
                        token: node_tok,
                    })
                }
                UnknownNodes::Skip => {
                    skipped += 1;
                    continue;
                }
            }
        };
        let class = *class_ids.entry(class_tok.clone()).or_insert_with(|| {
            class_names.push(class_tok.clone());
            class_names.len() - 1
        });
        if let Some(prev) = labels.insert(node, class) {
            if prev != class {
                return Err(Error::ConflictingLabel {
                    token: node_tok,
                    first: class_names[prev].clone(),
                    second: class_tok,
                });
            }
        }
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} label(s) for nodes absent from the graph");
    }
    if labels.is_empty() {
        return Err(Error::NoLabels);
    }
    LabelMap::new(labels, class_names)
}

/// How labeled nodes are divided into train and test.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SplitStrategy {
    #[default]
    Uniform,
    /// Applies the ratio within each class separately.
    Stratified,
}

/// Disjoint train/test partition of the labeled nodes (both sorted).
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub ratio: f64,
    pub seed: u64,
}

impl Split {
    pub fn is_train(&self, node: usize) -> bool {
        self.train.binary_search(&node).is_ok()
    }

    /// Writes `node_index,role` rows.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        w.write_record(["node_index", "role"]).map_err(|e| csv_err(path, e))?;
        for (nodes, role) in [(&self.train, "train"), (&self.test, "test")] {
            for n in nodes {
                w.write_record([n.to_string().as_str(), role])
                    .map_err(|e| csv_err(path, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, ratio: f64, seed: u64) -> Result<Split> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for rec in r.records() {
            let rec = rec.map_err(|e| csv_err(path, e))?;
            let node: usize = rec
                .get(0)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Format(format!("{}: bad node index", path.display())))?;
            match rec.get(1) {
                Some("train") => train.push(node),
                Some("test") => test.push(node),
                _ => return Err(Error::Format(format!("{}: bad role", path.display()))),
            }
        }
        train.sort_unstable();
        test.sort_unstable();
        Ok(Split {
            train,
            test,
            ratio,
            seed,
        })
    }
}

/// Uniform random split of the labeled nodes with
/// `|train| = round(ratio × |labeled|)`.
pub fn make_split(labels: &LabelMap, ratio: f64, seed: u64) -> Result<Split> {
    make_split_with(labels, ratio, seed, SplitStrategy::Uniform)
}

pub fn make_split_with(
    labels: &LabelMap,
    ratio: f64,
    seed: u64,
    strategy: SplitStrategy,
) -> Result<Split> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Split(format!("ratio {ratio} is not in (0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    let mut take = |mut nodes: Vec<usize>| {
        nodes.shuffle(&mut rng);
        let k = (ratio * nodes.len() as f64).round() as usize;
        train.extend_from_slice(&nodes[..k]);
        test.extend_from_slice(&nodes[k..]);
    };
    match strategy {
        SplitStrategy::Uniform => take(labels.labeled_nodes()),
        SplitStrategy::Stratified => {
            let mut by_class = vec![Vec::new(); labels.num_classes()];
            for (node, class) in labels.iter() {
                by_class[class].push(node);
            }
            for nodes in by_class {
                take(nodes);
            }
        }
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::Split(format!(
            "ratio {ratio} over {} labeled nodes leaves an empty {} set",
            labels.len(),
            if train.is_empty() { "train" } else { "test" }
        )));
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split {
        train,
        test,
        ratio,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        let mut f = fs::File::create(&p).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn path_graph_loads() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "e.txt", "0 1\n1 2\n");
        let g = load_graph(&p).unwrap();
        assert_eq!(g.num_nodes(), 3);
        assert_eq!(g.num_edges(), 2);
        let one = g.index_of("1").unwrap();
        let mut nb: Vec<&str> = g.neighbors(one).iter().map(|&j| g.token(j)).collect();
        nb.sort();
        assert_eq!(nb, ["0", "2"]);
        g.check_invariants().unwrap();
    }

    #[test]
    fn reversed_duplicate_collapses() {
        let g = Graph::from_edges([("0", "1"), ("1", "0")]).unwrap();
        assert_eq!(g.num_edges(), 1);
    }

    #[test]
    fn comments_self_loops_and_isolated_nodes() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "e.txt", "# header\n\na b\nc c\nb d\n");
        let g = load_graph(&p).unwrap();
        assert_eq!(g.num_nodes(), 3);
        assert!(g.index_of("c").is_none());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "e.txt", "0 1\n# ok\n2\n");
        match load_graph(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_and_empty_files() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_graph(dir.path().join("nope")), Err(Error::Io { .. })));
        let p = write(dir.path(), "e.txt", "# nothing\n5 5\n");
        assert!(matches!(load_graph(&p), Err(Error::EmptyGraph)));
    }

    #[test]
    fn labels_intern_in_first_seen_order() {
        let dir = tempfile::tempdir().unwrap();
        let g = Graph::from_edges([("0", "1"), ("1", "2")]).unwrap();
        let p = write(dir.path(), "l.txt", "0 A\n1 B\n2 A\n");
        let l = load_labels(&p, &g).unwrap();
        assert_eq!(l.num_classes(), 2);
        assert_eq!(l.class_name(0), "A");
        assert_eq!(l.get(g.index_of("0").unwrap()), Some(0));
        assert_eq!(l.get(g.index_of("1").unwrap()), Some(1));
        assert_eq!(l.get(g.index_of("2").unwrap()), Some(0));
    }

    #[test]
    fn label_errors() {
        let dir = tempfile::tempdir().unwrap();
        let g = Graph::from_edges([("0", "1"), ("1", "2")]).unwrap();
        let empty = write(dir.path(), "empty.txt", "");
        let err = load_labels(&empty, &g).unwrap_err();
        assert_eq!(err.to_string(), "no labels");
        let unknown = write(dir.path(), "u.txt", "0 A\n9 B\n");
        assert!(matches!(load_labels(&unknown, &g), Err(Error::UnknownNode { line: 2, .. })));
        let skipped = write(dir.path(), "s.txt", "0 A\n9 B\n1 B\n");
        let l = load_labels_with(&skipped, &g, UnknownNodes::Skip).unwrap();
        assert_eq!(l.len(), 2);
        let twice = write(dir.path(), "t.txt", "0 A\n1 B\n0 B\n");
        assert!(matches!(load_labels(&twice, &g), Err(Error::ConflictingLabel { .. })));
        let single = write(dir.path(), "one.txt", "0 A\n1 A\n");
        assert!(matches!(load_labels(&single, &g), Err(Error::Degenerate(_))));
    }

    fn hundred_labels() -> LabelMap {
        LabelMap::from_pairs((0..100).map(|i| (i, i % 3))).unwrap()
    }

    #[test]
    fn split_sizes_and_determinism() {
        let labels = hundred_labels();
        let s = make_split(&labels, 0.5, 7).unwrap();
        assert_eq!(s.train.len(), 50);
        assert_eq!(s.test.len(), 50);
        assert_eq!(s, make_split(&labels, 0.5, 7).unwrap());
        let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, labels.labeled_nodes());
        assert_ne!(s.train, make_split(&labels, 0.5, 8).unwrap().train);
    }

    #[test]
    fn degenerate_split_is_rejected() {
        let labels = LabelMap::from_pairs([(0, 0), (1, 1), (2, 0)]).unwrap();
        assert!(matches!(make_split(&labels, 0.999, 1), Err(Error::Split(_))));
        assert!(make_split(&labels, 1.0, 1).is_err());
    }

    #[test]
    fn stratified_split_keeps_class_proportions() {
        let labels = hundred_labels();
        let s = make_split_with(&labels, 0.3, 3, SplitStrategy::Stratified).unwrap();
        for c in 0..3 {
            let total = labels.iter().filter(|&(_, y)| y == c).count();
            let train = s.train.iter().filter(|&&n| labels.get(n) == Some(c)).count();
            assert_eq!(train, (0.3 * total as f64).round() as usize);
        }
    }

    #[test]
    fn saved_graph_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let g = Graph::from_edges([("x", "z"), ("y", "z"), ("w", "x"), ("y", "w")]).unwrap();
        g.save(dir.path()).unwrap();
        let back = Graph::load_saved(dir.path()).unwrap();
        assert_eq!(g, back);
    }

    #[test]
    fn split_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let s = make_split(&hundred_labels(), 0.4, 2).unwrap();
        let p = dir.path().join("split.csv");
        s.save(&p).unwrap();
        assert_eq!(Split::load(&p, 0.4, 2).unwrap(), s);
    }
}
