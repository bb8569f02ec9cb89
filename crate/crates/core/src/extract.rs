//! Network extraction: conductivity field → spatial graph → hypergraph.
//!
//! A triangle is active when its conductivity reaches a fraction of the
//! field maximum; the active triangles' vertices and edges form the graph.
//! Lifting a graph to a hypergraph adjoins every 3-clique as a size-3
//! hyperedge, so hyperedges have size 2 (edges) or 3 (triangles).

use crate::dmk::ConductivityField;
use crate::mesh::Mesh;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error("threshold_ratio must lie in (0, 1), got {0}")]
    ThresholdOutOfRange(f64),
    #[error("conductivity field is identically zero; no network to extract")]
    AllZeroField,
    #[error("conductivity field has {got} values but the mesh has {expected} triangles")]
    FieldSizeMismatch { got: usize, expected: usize },
    #[error("edge ({0}, {1}) is a self-loop")]
    SelfLoop(usize, usize),
    #[error("edge endpoint {0} is not a node of the graph")]
    UnknownEndpoint(usize),
    #[error("hyperedge {0:?} has size {1}; only sizes 2 and 3 are supported")]
    BadHyperedgeSize(Vec<usize>, usize),
    #[error("hyperedge {0:?} repeats a node")]
    RepeatedNode(Vec<usize>),
}

/// A graph node: stable id plus a position in the unit square.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: usize,
    pub x: f64,
    pub y: f64,
}

/// Undirected graph with geometric nodes. Nodes are kept sorted by id and
/// edges in canonical `[lo, hi]` lexicographic order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialGraph {
    nodes: Vec<Node>,
    edges: Vec<[usize; 2]>,
}

impl SpatialGraph {
    pub fn new(mut nodes: Vec<Node>, edges: Vec<[usize; 2]>) -> Result<Self, ExtractError> {
        nodes.sort_by_key(|n| n.id);
        nodes.dedup_by_key(|n| n.id);
        let ids: BTreeSet<usize> = nodes.iter().map(|n| n.id).collect();
        let mut canonical = BTreeSet::new();
        for [a, b] in edges {
            if a == b {
                return Err(ExtractError::SelfLoop(a, b));
            }
            for v in [a, b] {
                if !ids.contains(&v) {
                    return Err(ExtractError::UnknownEndpoint(v));
                }
            }
            canonical.insert(if a < b { [a, b] } else { [b, a] });
        }
        Ok(Self {
            nodes,
            edges: canonical.into_iter().collect(),
        })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Compact adjacency view: node ids mapped onto 0..n in sorted-id order.
    pub fn index_view(&self) -> GraphIndex {
        let ids: Vec<usize> = self.nodes.iter().map(|n| n.id).collect();
        let position: BTreeMap<usize, u32> = ids
            .iter()
            .enumerate()
            .map(|(k, &id)| (id, k as u32))
            .collect();
        let mut adjacency = vec![Vec::new(); ids.len()];
        for &[a, b] in &self.edges {
            let (ia, ib) = (position[&a], position[&b]);
            adjacency[ia as usize].push(ib);
            adjacency[ib as usize].push(ia);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        GraphIndex { ids, adjacency }
    }
}

/// Adjacency lists over dense indices, with the id table to map back.
#[derive(Debug, Clone)]
pub struct GraphIndex {
    pub ids: Vec<usize>,
    pub adjacency: Vec<Vec<u32>>,
}

/// Nodes plus hyperedges of size 2 or 3, in canonical sorted order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypergraph {
    nodes: Vec<Node>,
    hyperedges: Vec<Vec<usize>>,
}

impl Hypergraph {
    /// General constructor: validates sizes and membership, sorts members of
    /// every hyperedge and the hyperedge list itself.
    pub fn new(mut nodes: Vec<Node>, hyperedges: Vec<Vec<usize>>) -> Result<Self, ExtractError> {
        nodes.sort_by_key(|n| n.id);
        nodes.dedup_by_key(|n| n.id);
        let ids: BTreeSet<usize> = nodes.iter().map(|n| n.id).collect();
        let mut canonical = BTreeSet::new();
        for mut edge in hyperedges {
            edge.sort_unstable();
            let before = edge.len();
            edge.dedup();
            if edge.len() != before {
                return Err(ExtractError::RepeatedNode(edge));
            }
            if !(2..=3).contains(&edge.len()) {
                let size = edge.len();
                return Err(ExtractError::BadHyperedgeSize(edge, size));
            }
            for &v in &edge {
                if !ids.contains(&v) {
                    return Err(ExtractError::UnknownEndpoint(v));
                }
            }
            canonical.insert(edge);
        }
        Ok(Self {
            nodes,
            hyperedges: canonical.into_iter().collect(),
        })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Hyperedges in canonical lexicographic order.
    pub fn hyperedges(&self) -> &[Vec<usize>] {
        &self.hyperedges
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_hyperedges(&self) -> usize {
        self.hyperedges.len()
    }

    pub fn triangles(&self) -> impl Iterator<Item = &Vec<usize>> {
        self.hyperedges.iter().filter(|e| e.len() == 3)
    }

    pub fn position_of(&self, id: usize) -> Option<(f64, f64)> {
        self.nodes
            .binary_search_by_key(&id, |n| n.id)
            .ok()
            .map(|k| (self.nodes[k].x, self.nodes[k].y))
    }

    /// Canonical JSON: `{nodes: [{id, x, y}], hyperedges: [[i,j],[i,j,k],…]}`.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("hypergraph serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        let raw: Hypergraph = serde_json::from_str(s)?;
        Self::new(raw.nodes, raw.hyperedges).map_err(serde::de::Error::custom)
    }
}

/// Threshold rule: a triangle is active iff μ_T ≥ threshold_ratio · max μ.
/// The graph keeps every vertex and mesh edge of at least one active
/// triangle; vertices with no active incident triangle are dropped.
pub fn graph_from_field(
    mesh: &Mesh,
    mu: &ConductivityField,
    threshold_ratio: f64,
) -> Result<SpatialGraph, ExtractError> {
    if !(threshold_ratio > 0.0 && threshold_ratio < 1.0) {
        return Err(ExtractError::ThresholdOutOfRange(threshold_ratio));
    }
    if mu.mu().len() != mesh.n_triangles() {
        return Err(ExtractError::FieldSizeMismatch {
            got: mu.mu().len(),
            expected: mesh.n_triangles(),
        });
    }
    let max = mu.mu().iter().fold(0.0_f64, |a, &b| a.max(b));
    if max <= 0.0 {
        return Err(ExtractError::AllZeroField);
    }
    let cutoff = threshold_ratio * max;
    let active: Vec<bool> = mu.mu().iter().map(|&m| m >= cutoff).collect();

    let mut node_ids = BTreeSet::new();
    for (t, tri) in mesh.triangles().iter().enumerate() {
        if active[t] {
            node_ids.extend(tri.iter().copied());
        }
    }
    let nodes = node_ids
        .into_iter()
        .map(|id| {
            let [x, y] = mesh.vertices()[id];
            Node { id, x, y }
        })
        .collect();

    let mut edges = Vec::new();
    for (e, &pair) in mesh.edges().iter().enumerate() {
        let (first, second) = mesh.edge_triangles()[e];
        if active[first] || second.map_or(false, |t| active[t]) {
            edges.push(pair);
        }
    }
    SpatialGraph::new(nodes, edges)
}

/// Lift a graph to its hypergraph: all edges plus all 3-cliques.
pub fn hypergraph_from_graph(graph: &SpatialGraph) -> Hypergraph {
    let index = graph.index_view();
    let mut hyperedges: Vec<Vec<usize>> = graph.edges().iter().map(|e| e.to_vec()).collect();

    // 3-clique enumeration: for each edge (a, b) with a < b, every common
    // neighbor c > b closes a triangle counted exactly once.
    for (a, neighbors) in index.adjacency.iter().enumerate() {
        for &b in neighbors {
            if (b as usize) <= a {
                continue;
            }
            let b_neighbors = &index.adjacency[b as usize];
            for &c in neighbors {
                if c <= b {
                    continue;
                }
                if b_neighbors.binary_search(&c).is_ok() {
                    hyperedges.push(vec![
                        index.ids[a],
                        index.ids[b as usize],
                        index.ids[c as usize],
                    ]);
                }
            }
        }
    }
    Hypergraph::new(graph.nodes().to_vec(), hyperedges)
        .expect("lift of a valid graph is always a valid hypergraph")
}

/// 1-skeleton (clique expansion): every pair inside any hyperedge is an edge.
pub fn skeleton(h: &Hypergraph) -> SpatialGraph {
    let mut edges = Vec::new();
    for e in h.hyperedges() {
        for i in 0..e.len() {
            for j in i + 1..e.len() {
                edges.push([e[i], e[j]]);
            }
        }
    }
    SpatialGraph::new(h.nodes().to_vec(), edges)
        .expect("skeleton of a valid hypergraph is always a valid graph")
}
