//! Rooted tree topologies. Nodes are numbered `1..=n` with node 1 as the root;
//! edges carry stable ids `1..=n-1`. Internally everything is 0-based.

use std::collections::VecDeque;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest node count a constructor will produce.
pub const MAX_NODES: usize = 1 << 22;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Graph {
    n: usize,
    /// `edges[id - 1] = (v, w)`, 1-based endpoints. The orientation is the one
    /// given at construction and is reused wherever an edge needs a direction.
    edges: Vec<(usize, usize)>,
    /// Per node (0-based): `(neighbor, edge id)` pairs, both 1-based.
    adjacency: Vec<Vec<(usize, usize)>>,
    /// Per node (0-based): `(parent, edge id)` toward the root; `None` for the root.
    parent: Vec<Option<(usize, usize)>>,
    depth: Vec<usize>,
}

/// The edges traversed from `node` to the root, in walking order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RootPath {
    pub node: usize,
    pub edges: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphMetrics {
    pub diameter: usize,
    /// `degree[v - 1]` is the degree of node `v`.
    pub degree: Vec<usize>,
    pub max_nonroot_degree: usize,
}

impl Graph {
    /// Build a graph from 1-based edges, rejecting anything that is not a tree
    /// spanning `1..=n`.
    pub fn from_edges(n: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidSize("graph needs at least one node".into()));
        }
        if n > MAX_NODES {
            return Err(Error::InvalidSize(format!("{n} nodes exceeds {MAX_NODES}")));
        }
        if edges.len() != n - 1 {
            return Err(Error::NotATree(format!(
                "{} edges for {} nodes (a tree has n - 1)",
                edges.len(),
                n
            )));
        }
        let mut adjacency = vec![Vec::new(); n];
        for (i, &(v, w)) in edges.iter().enumerate() {
            for u in [v, w] {
                if u == 0 || u > n {
                    return Err(Error::InvalidNode { node: u, n });
                }
            }
            if v == w {
                return Err(Error::NotATree(format!("self loop at node {v}")));
            }
            adjacency[v - 1].push((w, i + 1));
            adjacency[w - 1].push((v, i + 1));
        }
        let mut parent = vec![None; n];
        let mut depth = vec![usize::MAX; n];
        depth[0] = 0;
        let mut queue = VecDeque::from([1usize]);
        let mut seen = 1;
        while let Some(u) = queue.pop_front() {
            for &(w, e) in &adjacency[u - 1] {
                if depth[w - 1] == usize::MAX {
                    depth[w - 1] = depth[u - 1] + 1;
                    parent[w - 1] = Some((u, e));
                    seen += 1;
                    queue.push_back(w);
                }
            }
        }
        if seen != n {
            return Err(Error::NotATree(format!(
                "only {seen} of {n} nodes reachable from the root"
            )));
        }
        Ok(Graph {
            n,
            edges,
            adjacency,
            parent,
            depth,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Endpoints `(v, w)` of edge `id` (1-based), in stored orientation.
    pub fn edge(&self, id: usize) -> (usize, usize) {
        self.edges[id - 1]
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// `(neighbor, edge id)` pairs of node `v`.
    pub fn neighbors(&self, v: usize) -> &[(usize, usize)] {
        &self.adjacency[v - 1]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adjacency[v - 1].len()
    }

    /// `(parent, edge id)` of `v`, `None` for the root.
    pub fn parent(&self, v: usize) -> Option<(usize, usize)> {
        self.parent[v - 1]
    }

    pub fn depth(&self, v: usize) -> usize {
        self.depth[v - 1]
    }

    /// Children of `v` with the connecting edge ids, in adjacency order.
    pub fn children(&self, v: usize) -> Vec<(usize, usize)> {
        self.adjacency[v - 1]
            .iter()
            .copied()
            .filter(|&(w, _)| self.parent[w - 1].map(|(p, _)| p) == Some(v))
            .collect()
    }

    /// Nodes in breadth-first order from the root.
    pub fn bfs_order(&self) -> Vec<usize> {
        let mut order = Vec::with_capacity(self.n);
        let mut queue = VecDeque::from([1usize]);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            for (w, _) in self.children(u) {
                queue.push_back(w);
            }
        }
        order
    }

    pub fn check_node(&self, v: usize) -> Result<()> {
        if v == 0 || v > self.n {
            Err(Error::InvalidNode { node: v, n: self.n })
        } else {
            Ok(())
        }
    }

    /// Plain-text edge list: `n <count>` followed by one `v w` line per edge.
    pub fn to_edge_list(&self) -> String {
        let mut s = format!("n {}\n", self.n);
        for &(v, w) in &self.edges {
            let _ = writeln!(s, "{v} {w}");
        }
        s
    }

    pub fn from_edge_list(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (line, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "empty edge list".into(),
        })?;
        let n = match header.split_whitespace().collect::<Vec<_>>()[..] {
            ["n", count] => count.parse::<usize>().map_err(|e| Error::Parse {
                line,
                msg: e.to_string(),
            })?,
            _ => {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected `n <count>`, got `{header}`"),
                })
            }
        };
        let mut edges = Vec::new();
        for (line, l) in lines {
            let parts: Vec<_> = l.split_whitespace().collect();
            let parse = |s: &str| {
                s.parse::<usize>().map_err(|e| Error::Parse {
                    line,
                    msg: e.to_string(),
                })
            };
            match parts[..] {
                [v, w] => edges.push((parse(v)?, parse(w)?)),
                _ => {
                    return Err(Error::Parse {
                        line,
                        msg: format!("expected `v w`, got `{l}`"),
                    })
                }
            }
        }
        Graph::from_edges(n, edges)
    }
}

/// Chain `1 - 2 - ... - n`.
pub fn make_path(n: usize) -> Result<Graph> {
    if n == 0 {
        return Err(Error::InvalidSize("path needs n >= 1".into()));
    }
    Graph::from_edges(n, (1..n).map(|v| (v, v + 1)).collect())
}

/// Complete `branch`-ary tree of the given height, numbered breadth-first.
pub fn make_balanced_tree(branch: usize, height: usize) -> Result<Graph> {
    if branch == 0 {
        return Err(Error::InvalidSize("branch must be >= 1".into()));
    }
    let mut n: usize = 1;
    let mut level: usize = 1;
    for _ in 0..height {
        level = level
            .checked_mul(branch)
            .ok_or_else(|| Error::InvalidSize("balanced tree size overflows".into()))?;
        n = n
            .checked_add(level)
            .ok_or_else(|| Error::InvalidSize("balanced tree size overflows".into()))?;
        if n > MAX_NODES {
            return Err(Error::InvalidSize(format!(
                "balanced tree ({branch}, {height}) exceeds {MAX_NODES} nodes"
            )));
        }
    }
    // Node k (1-based) has parent (k - 2) / branch + 1.
    let edges = (2..=n).map(|k| ((k - 2) / branch + 1, k)).collect();
    Graph::from_edges(n, edges)
}

/// Star with centre 1.
pub fn make_star(n: usize) -> Result<Graph> {
    if n == 0 {
        return Err(Error::InvalidSize("star needs n >= 1".into()));
    }
    Graph::from_edges(n, (2..=n).map(|v| (1, v)).collect())
}

pub fn path_to_root(g: &Graph, v: usize) -> Result<RootPath> {
    g.check_node(v)?;
    let mut edges = Vec::with_capacity(g.depth(v));
    let mut u = v;
    while let Some((p, e)) = g.parent(u) {
        edges.push(e);
        u = p;
    }
    Ok(RootPath { node: v, edges })
}

/// All root paths, indexed by `node - 1`.
pub fn all_root_paths(g: &Graph) -> Vec<RootPath> {
    (1..=g.n())
        .map(|v| path_to_root(g, v).expect("node in range"))
        .collect()
}

fn bfs_farthest(g: &Graph, start: usize) -> (usize, usize) {
    let mut dist = vec![usize::MAX; g.n()];
    dist[start - 1] = 0;
    let mut queue = VecDeque::from([start]);
    let mut best = (start, 0);
    while let Some(u) = queue.pop_front() {
        let du = dist[u - 1];
        if du > best.1 {
            best = (u, du);
        }
        for &(w, _) in g.neighbors(u) {
            if dist[w - 1] == usize::MAX {
                dist[w - 1] = du + 1;
                queue.push_back(w);
            }
        }
    }
    best
}

pub fn graph_metrics(g: &Graph) -> GraphMetrics {
    // Double sweep is exact on trees.
    let (far, _) = bfs_farthest(g, 1);
    let (_, diameter) = bfs_farthest(g, far);
    let degree: Vec<usize> = (1..=g.n()).map(|v| g.degree(v)).collect();
    let max_nonroot_degree = degree.iter().skip(1).copied().max().unwrap_or(0);
    GraphMetrics {
        diameter,
        degree,
        max_nonroot_degree,
    }
}
