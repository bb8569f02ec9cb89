//! Hypergraph analytics: generalized s-adjacency, s-line graphs, and the
//! graph/hypergraph property set used by the temporal analysis.
//!
//! Closeness is harmonic throughout: c(v) = Σ_{u≠v} 1/d(u,v) with
//! unreachable pairs contributing zero, so disconnected line graphs and
//! isolated nodes are handled without special cases.

use crate::extract::{Hypergraph, SpatialGraph};
use crate::mesh::triangle_area;
use std::collections::BTreeMap;
use std::collections::VecDeque;

/// Binary node s-adjacency matrix: entry (i, j) is set when nodes i and j
/// share at least `s` hyperedges. Rows/columns follow sorted node ids.
#[derive(Debug, Clone)]
pub struct SAdjacency {
    s: usize,
    ids: Vec<usize>,
    matrix: Vec<bool>,
}

impl SAdjacency {
    pub fn s(&self) -> usize {
        self.s
    }

    /// Node ids in row/column order.
    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn n(&self) -> usize {
        self.ids.len()
    }

    /// Entry by dense index (row-major, symmetric, zero diagonal).
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.matrix[i * self.ids.len() + j]
    }
}

/// Per-node scalar values for one property, keyed by node id.
#[derive(Debug, Clone)]
pub struct PropertyVector {
    pub name: String,
    pub s: Option<usize>,
    pub values: BTreeMap<usize, f64>,
}

impl PropertyVector {
    pub fn mean(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        self.values.values().sum::<f64>() / self.values.len() as f64
    }
}

/// Scalar graph properties: edge count, mean degree, mean harmonic closeness.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphProperties {
    pub edge_count: usize,
    pub avg_degree: f64,
    pub avg_closeness: f64,
}

/// Scalar hypergraph properties at one s value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HypergraphProperties {
    pub hyperedge_count: usize,
    pub triangle_count: usize,
    /// Total geometric area of all size-3 hyperedges.
    pub covered_area: f64,
    pub avg_s_degree: f64,
    pub avg_s_closeness: f64,
}

/// Count shared hyperedges per node pair and threshold at `s`.
pub fn s_adjacency(h: &Hypergraph, s: usize) -> SAdjacency {
    assert!(s >= 1, "s-adjacency requires s >= 1");
    let ids: Vec<usize> = h.nodes().iter().map(|n| n.id).collect();
    let position: BTreeMap<usize, usize> = ids
        .iter()
        .enumerate()
        .map(|(k, &id)| (id, k))
        .collect();
    let n = ids.len();
    let mut shared = vec![0u32; n * n];
    for e in h.hyperedges() {
        for i in 0..e.len() {
            for j in i + 1..e.len() {
                let (a, b) = (position[&e[i]], position[&e[j]]);
                shared[a * n + b] += 1;
                shared[b * n + a] += 1;
            }
        }
    }
    let matrix = shared.iter().map(|&count| count as usize >= s).collect();
    SAdjacency { s, ids, matrix }
}

/// Graph generated by the s-adjacency matrix, node positions carried over.
pub fn s_line_graph(h: &Hypergraph, s: usize) -> SpatialGraph {
    let adjacency = s_adjacency(h, s);
    let n = adjacency.n();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if adjacency.get(i, j) {
                edges.push([adjacency.ids[i], adjacency.ids[j]]);
            }
        }
    }
    SpatialGraph::new(h.nodes().to_vec(), edges)
        .expect("line graph nodes come from the hypergraph itself")
}

/// Harmonic closeness of every node via one BFS per node.
pub fn closeness_vector(graph: &SpatialGraph) -> PropertyVector {
    let index = graph.index_view();
    let n = index.ids.len();
    let mut values = BTreeMap::new();
    let mut distance = vec![u32::MAX; n];
    let mut queue = VecDeque::new();
    for start in 0..n {
        distance.iter_mut().for_each(|d| *d = u32::MAX);
        distance[start] = 0;
        queue.clear();
        queue.push_back(start as u32);
        let mut closeness = 0.0;
        while let Some(v) = queue.pop_front() {
            let d = distance[v as usize];
            if d > 0 {
                closeness += 1.0 / d as f64;
            }
            for &w in &index.adjacency[v as usize] {
                if distance[w as usize] == u32::MAX {
                    distance[w as usize] = d + 1;
                    queue.push_back(w);
                }
            }
        }
        values.insert(index.ids[start], closeness);
    }
    PropertyVector {
        name: "graph_closeness".into(),
        s: None,
        values,
    }
}

/// Number of incident hyperedges of size ≥ s, per node.
pub fn s_degree_vector(h: &Hypergraph, s: usize) -> PropertyVector {
    assert!(s >= 1, "s-degree requires s >= 1");
    let mut values: BTreeMap<usize, f64> = h.nodes().iter().map(|n| (n.id, 0.0)).collect();
    for e in h.hyperedges() {
        if e.len() >= s {
            for &v in e {
                *values.get_mut(&v).expect("hyperedge endpoints are nodes") += 1.0;
            }
        }
    }
    PropertyVector {
        name: "s_degree".into(),
        s: Some(s),
        values,
    }
}

/// Harmonic closeness of every node in the s-line graph L_s.
pub fn s_closeness_vector(h: &Hypergraph, s: usize) -> PropertyVector {
    let mut vector = closeness_vector(&s_line_graph(h, s));
    vector.name = "s_closeness".into();
    vector.s = Some(s);
    vector
}

/// Edge count, average degree, and average harmonic closeness.
/// An empty graph reports zeros across the board.
pub fn graph_properties(graph: &SpatialGraph) -> GraphProperties {
    if graph.is_empty() {
        return GraphProperties {
            edge_count: 0,
            avg_degree: 0.0,
            avg_closeness: 0.0,
        };
    }
    let avg_degree = 2.0 * graph.n_edges() as f64 / graph.n_nodes() as f64;
    GraphProperties {
        edge_count: graph.n_edges(),
        avg_degree,
        avg_closeness: closeness_vector(graph).mean(),
    }
}

/// The five hypergraph properties at one s value: |E_H|, |T|, covered area,
/// mean s-degree, mean s-closeness.
pub fn hypergraph_properties(h: &Hypergraph, s: usize) -> HypergraphProperties {
    let triangle_count = h.triangles().count();
    let covered_area = h
        .triangles()
        .map(|tri| {
            let pos = |id: usize| {
                let (x, y) = h
                    .position_of(id)
                    .expect("triangle endpoints are hypergraph nodes");
                [x, y]
            };
            triangle_area(pos(tri[0]), pos(tri[1]), pos(tri[2]))
        })
        .sum();
    HypergraphProperties {
        hyperedge_count: h.n_hyperedges(),
        triangle_count,
        covered_area,
        avg_s_degree: s_degree_vector(h, s).mean(),
        avg_s_closeness: s_closeness_vector(h, s).mean(),
    }
}
