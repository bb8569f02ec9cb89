//! Triangulated discretization of the unit square.
//!
//! The mesh is the geometric substrate for both the solver (piecewise-linear
//! potentials on vertices, piecewise-constant conductivities on triangles)
//! and for graph extraction (network nodes sit on mesh vertices).

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A 2-D point, serialized as `[x, y]`.
pub type Point = [f64; 2];

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("n_div must be at least 1")]
    ZeroDivisions,
    #[error("triangle {index} has non-positive area {area}")]
    DegenerateTriangle { index: usize, area: f64 },
    #[error("triangle {index} references vertex {vertex} but the mesh has {n_vertices} vertices")]
    VertexOutOfRange {
        index: usize,
        vertex: usize,
        n_vertices: usize,
    },
}

/// Immutable triangle mesh of Ω = \[0,1\]² with derived connectivity.
///
/// Construction is the only mutation point; afterwards the mesh is safe to
/// share across threads for concurrent reads.
#[derive(Debug, Clone)]
pub struct Mesh {
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    edges: Vec<[usize; 2]>,
    triangle_areas: Vec<f64>,
    /// For each edge, the one or two incident triangles.
    edge_triangles: Vec<(usize, Option<usize>)>,
    /// Lumped vertex area: one third of the area of each incident triangle.
    vertex_areas: Vec<f64>,
}

/// Serialization view: vertices and triangles only, connectivity is derived.
#[derive(Debug, Serialize, Deserialize)]
struct MeshJson {
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
}

/// Absolute area of the triangle spanned by three points (shoelace formula).
///
/// Degenerate (collinear) triples return 0; callers that need strict
/// positivity reject those themselves.
pub fn triangle_area(p1: Point, p2: Point, p3: Point) -> f64 {
    0.5 * signed_double_area(p1, p2, p3).abs()
}

fn signed_double_area(p1: Point, p2: Point, p3: Point) -> f64 {
    (p2[0] - p1[0]) * (p3[1] - p1[1]) - (p3[0] - p1[0]) * (p2[1] - p1[1])
}

/// Regular triangulation of the unit square: `n_div` cells per side, each
/// square cell split by its bottom-left to top-right diagonal.
///
/// Yields `(n_div+1)²` vertices and `2·n_div²` counterclockwise triangles.
pub fn triangulate_unit_square(n_div: usize) -> Result<Mesh, MeshError> {
    if n_div == 0 {
        return Err(MeshError::ZeroDivisions);
    }
    let n = n_div;
    let h = 1.0 / n as f64;
    let stride = n + 1;
    let mut vertices = Vec::with_capacity(stride * stride);
    for j in 0..=n {
        for i in 0..=n {
            vertices.push([i as f64 * h, j as f64 * h]);
        }
    }
    let mut triangles = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let bl = j * stride + i;
            let br = bl + 1;
            let tl = bl + stride;
            let tr = tl + 1;
            // diagonal bl->tr, both triangles counterclockwise
            triangles.push([bl, br, tr]);
            triangles.push([bl, tr, tl]);
        }
    }
    Mesh::from_parts(vertices, triangles)
}

impl Mesh {
    /// Build a mesh from raw vertices and triangles, deriving edges,
    /// edge-triangle adjacency, areas and lumped vertex areas.
    pub fn from_parts(vertices: Vec<Point>, triangles: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        let n_vertices = vertices.len();
        let mut triangle_areas = Vec::with_capacity(triangles.len());
        for (index, tri) in triangles.iter().enumerate() {
            for &v in tri {
                if v >= n_vertices {
                    return Err(MeshError::VertexOutOfRange {
                        index,
                        vertex: v,
                        n_vertices,
                    });
                }
            }
            let area = 0.5 * signed_double_area(vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]);
            if area <= 0.0 {
                return Err(MeshError::DegenerateTriangle { index, area });
            }
            triangle_areas.push(area);
        }

        let mut edge_map: std::collections::BTreeMap<[usize; 2], (usize, Option<usize>)> =
            std::collections::BTreeMap::new();
        for (t, tri) in triangles.iter().enumerate() {
            for (a, b) in [(tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])] {
                let key = if a < b { [a, b] } else { [b, a] };
                edge_map
                    .entry(key)
                    .and_modify(|inc| inc.1 = Some(t))
                    .or_insert((t, None));
            }
        }
        let edges: Vec<[usize; 2]> = edge_map.keys().copied().collect();
        let edge_triangles: Vec<(usize, Option<usize>)> = edge_map.values().copied().collect();

        let mut vertex_areas = vec![0.0; n_vertices];
        for (t, tri) in triangles.iter().enumerate() {
            let third = triangle_areas[t] / 3.0;
            for &v in tri {
                vertex_areas[v] += third;
            }
        }

        Ok(Self {
            vertices,
            triangles,
            edges,
            triangle_areas,
            edge_triangles,
            vertex_areas,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    /// Deduplicated undirected edges, each stored as `[lo, hi]`, sorted.
    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    pub fn triangle_areas(&self) -> &[f64] {
        &self.triangle_areas
    }

    /// Incident triangles per edge, aligned with [`Mesh::edges`].
    pub fn edge_triangles(&self) -> &[(usize, Option<usize>)] {
        &self.edge_triangles
    }

    /// Lumped vertex areas w(v) = Σ_{T ∋ v} area(T)/3.
    pub fn vertex_areas(&self) -> &[f64] {
        &self.vertex_areas
    }

    pub fn total_area(&self) -> f64 {
        self.triangle_areas.iter().sum()
    }

    /// Corner positions of a triangle.
    pub fn triangle_points(&self, t: usize) -> [Point; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&MeshJson {
            vertices: self.vertices.clone(),
            triangles: self.triangles.clone(),
        })
        .expect("mesh serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        let raw: MeshJson = serde_json::from_str(s)?;
        Self::from_parts(raw.vertices, raw.triangles).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn unit_square_two_triangles() {
        let mesh = triangulate_unit_square(1).unwrap();
        assert_eq!(mesh.n_vertices(), 4);
        assert_eq!(mesh.n_triangles(), 2);
        assert!((mesh.total_area() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eight_divisions_counts() {
        let mesh = triangulate_unit_square(8).unwrap();
        assert_eq!(mesh.n_vertices(), 81);
        assert_eq!(mesh.n_triangles(), 128);
    }

    #[test]
    fn rejects_zero_divisions() {
        assert!(matches!(
            triangulate_unit_square(0),
            Err(MeshError::ZeroDivisions)
        ));
    }

    #[test]
    fn edge_incidence_matches_brute_force() {
        // Exhaustive scan: recount incidences straight from the triangle list
        // and compare against the stored adjacency.
        let mesh = triangulate_unit_square(3).unwrap();
        for (e, &[a, b]) in mesh.edges().iter().enumerate() {
            let incident: Vec<usize> = mesh
                .triangles()
                .iter()
                .enumerate()
                .filter(|(_, tri)| tri.contains(&a) && tri.contains(&b))
                .map(|(t, _)| t)
                .collect();
            let (first, second) = mesh.edge_triangles()[e];
            let mut stored = vec![first];
            stored.extend(second);
            stored.sort_unstable();
            assert_eq!(incident, stored, "edge {:?}", [a, b]);
            assert!(matches!(incident.len(), 1 | 2));
        }
        // boundary edges: 4 sides of 3 cells each
        let boundary = mesh
            .edge_triangles()
            .iter()
            .filter(|(_, second)| second.is_none())
            .count();
        assert_eq!(boundary, 4 * 3);
        let interior = mesh.edge_triangles().len() - boundary;
        assert!(interior > 0);
    }

    #[test]
    fn area_additivity_across_resolutions() {
        for n_div in [1, 2, 3, 5, 8, 13, 32] {
            let mesh = triangulate_unit_square(n_div).unwrap();
            assert!(
                (mesh.total_area() - 1.0).abs() < 1e-12,
                "n_div={n_div}: total area {}",
                mesh.total_area()
            );
        }
    }

    #[test]
    fn stored_triangles_are_counterclockwise() {
        let mesh = triangulate_unit_square(5).unwrap();
        for t in 0..mesh.n_triangles() {
            let [a, b, c] = mesh.triangle_points(t);
            assert!(signed_double_area(a, b, c) > 0.0);
        }
    }

    #[test]
    fn edge_triangle_incidence_totals() {
        let mesh = triangulate_unit_square(4).unwrap();
        let incidences: usize = mesh
            .edge_triangles()
            .iter()
            .map(|(_, second)| 1 + second.is_some() as usize)
            .sum();
        assert_eq!(incidences, 3 * mesh.n_triangles());
    }

    #[test]
    fn right_triangle_area() {
        assert_eq!(triangle_area([0.0, 0.0], [1.0, 0.0], [0.0, 1.0]), 0.5);
    }

    #[test]
    fn collinear_area_is_zero() {
        assert_eq!(triangle_area([0.0, 0.0], [1.0, 1.0], [2.0, 2.0]), 0.0);
    }

    #[test]
    fn area_matches_cross_product_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let p1 = [rng.gen::<f64>(), rng.gen::<f64>()];
            let p2 = [rng.gen::<f64>(), rng.gen::<f64>()];
            let p3 = [rng.gen::<f64>(), rng.gen::<f64>()];
            // independent route: ½ |u × v| from the two edge vectors
            let u = [p2[0] - p1[0], p2[1] - p1[1]];
            let v = [p3[0] - p1[0], p3[1] - p1[1]];
            let oracle = 0.5 * (u[0] * v[1] - u[1] * v[0]).abs();
            assert!((triangle_area(p1, p2, p3) - oracle).abs() < 1e-15);
        }
    }

    #[test]
    fn vertex_areas_sum_to_total() {
        let mesh = triangulate_unit_square(6).unwrap();
        let sum: f64 = mesh.vertex_areas().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn json_round_trip() {
        let mesh = triangulate_unit_square(2).unwrap();
        let restored = Mesh::from_json(&mesh.to_json()).unwrap();
        assert_eq!(restored.vertices(), mesh.vertices());
        assert_eq!(restored.triangles(), mesh.triangles());
        assert_eq!(restored.edges(), mesh.edges());
    }

    #[test]
    fn from_parts_rejects_degenerate() {
        let verts = vec![[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]];
        assert!(matches!(
            Mesh::from_parts(verts, vec![[0, 1, 2]]),
            Err(MeshError::DegenerateTriangle { .. })
        ));
    }
}
