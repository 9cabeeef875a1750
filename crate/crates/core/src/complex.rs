//! Union k-NN graphs and the per-sample local clique complexes built on them.
//!
//! Local complexes are capped at dimension 2: only vertices, edges and
//! triangles ever enter the order-0 and order-1 Laplacians.

use std::fmt::Write as _;

use crate::embed::DistanceMatrix;
use crate::error::{Error, Result};
use crate::par::{self, Execution};

pub const DEFAULT_EDGE_CAP: usize = 8000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborGraph {
    m: usize,
    k: usize,
    /// `knn[i]`: the k nearest neighbors of `i`, ascending distance, ties by index.
    knn: Vec<Vec<usize>>,
    /// Sorted adjacency lists of the symmetrized (union) graph.
    adjacency: Vec<Vec<usize>>,
}

impl NeighborGraph {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn nearest(&self, i: usize) -> &[usize] {
        &self.knn[i]
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency[i].binary_search(&j).is_ok()
    }

    /// All edges `(i, j)` with `i < j`, lexicographically.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, nb) in self.adjacency.iter().enumerate() {
            out.extend(nb.iter().filter(|&&j| j > i).map(|&j| (i, j)));
        }
        out
    }
}

/// The `k` nearest other points of `i`, ascending distance, ties by index.
fn nearest_of(dist: &DistanceMatrix, i: usize, k: usize) -> Vec<usize> {
    let row = dist.row(i);
    let mut others: Vec<usize> = (0..dist.len()).filter(|&j| j != i).collect();
    let cmp = |a: &usize, b: &usize| row[*a].total_cmp(&row[*b]).then(a.cmp(b));
    if k < others.len() {
        others.select_nth_unstable_by(k, cmp);
        others.truncate(k);
    }
    others.sort_by(cmp);
    others
}

pub fn knn_graph(dist: &DistanceMatrix, k: usize, exec: Execution) -> Result<NeighborGraph> {
    let m = dist.len();
    if k == 0 || k >= m {
        return Err(Error::invalid(format!("k={k} must lie in 1..{m}")));
    }
    let knn = par::map_indexed(m, exec, |i| nearest_of(dist, i, k));
    let mut adjacency = vec![Vec::with_capacity(2 * k); m];
    for (i, nb) in knn.iter().enumerate() {
        for &j in nb {
            adjacency[i].push(j);
            adjacency[j].push(i);
        }
    }
    for nb in &mut adjacency {
        nb.sort_unstable();
        nb.dedup();
    }
    Ok(NeighborGraph {
        m,
        k,
        knn,
        adjacency,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triangle {
    pub u: usize,
    pub v: usize,
    pub w: usize,
    pub value: f64,
}

/// A filtered clique complex on local vertex indices `0..vertices.len()`.
///
/// Edges are sorted by `(u, v)` with `u < v`, triangles by `(u, v, w)` with
/// `u < v < w`. Vertices carry filtration value 0.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalComplex {
    pub center: usize,
    /// Global indices; `vertices[0]` is the center.
    pub vertices: Vec<usize>,
    pub edges: Vec<Edge>,
    pub triangles: Vec<Triangle>,
    pub(crate) local_distances: Vec<f64>,
}

impl LocalComplex {
    /// Clique-expands the graph `edges` on local vertices to dimension 2.
    /// Edge values are read from `local_distances` (row-major, `n x n`).
    pub fn from_graph(
        vertices: Vec<usize>,
        local_distances: Vec<f64>,
        edges: &[(usize, usize)],
    ) -> Result<Self> {
        let n = vertices.len();
        if local_distances.len() != n * n {
            return Err(Error::Structure(
                "local distance matrix has the wrong size".into(),
            ));
        }
        let mut adj = vec![false; n * n];
        for &(a, b) in edges {
            if a == b || a >= n || b >= n {
                return Err(Error::Structure(format!("invalid local edge ({a},{b})")));
            }
            adj[a * n + b] = true;
            adj[b * n + a] = true;
        }
        let d = |a: usize, b: usize| local_distances[a * n + b];
        let mut edge_list = Vec::new();
        for u in 0..n {
            for v in (u + 1)..n {
                if adj[u * n + v] {
                    edge_list.push(Edge {
                        u,
                        v,
                        value: d(u, v),
                    });
                }
            }
        }
        let mut triangles = Vec::new();
        for e in &edge_list {
            for w in (e.v + 1)..n {
                if adj[e.u * n + w] && adj[e.v * n + w] {
                    let value = e.value.max(d(e.u, w)).max(d(e.v, w));
                    triangles.push(Triangle {
                        u: e.u,
                        v: e.v,
                        w,
                        value,
                    });
                }
            }
        }
        Ok(Self {
            center: vertices.first().copied().unwrap_or(0),
            vertices,
            edges: edge_list,
            triangles,
            local_distances,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn local_distance(&self, a: usize, b: usize) -> f64 {
        self.local_distances[a * self.vertices.len() + b]
    }

    pub fn local_distances(&self) -> &[f64] {
        &self.local_distances
    }

    pub fn edge_index(&self, u: usize, v: usize) -> Option<usize> {
        let key = (u.min(v), u.max(v));
        self.edges.binary_search_by(|e| (e.u, e.v).cmp(&key)).ok()
    }

    pub fn triangle_index(&self, u: usize, v: usize, w: usize) -> Option<usize> {
        let mut key = [u, v, w];
        key.sort_unstable();
        self.triangles
            .binary_search_by(|t| [t.u, t.v, t.w].cmp(&key))
            .ok()
    }

    /// Largest filtration value in the complex (0 for a vertex-only complex).
    pub fn max_value(&self) -> f64 {
        self.edges.iter().map(|e| e.value).fold(0.0, f64::max)
    }

    /// Subcomplex of all simplices with filtration value `<= t`.
    pub fn sublevel(&self, t: f64) -> LocalComplex {
        LocalComplex {
            center: self.center,
            vertices: self.vertices.clone(),
            edges: self
                .edges
                .iter()
                .filter(|e| e.value <= t)
                .copied()
                .collect(),
            triangles: self
                .triangles
                .iter()
                .filter(|tr| tr.value <= t)
                .copied()
                .collect(),
            local_distances: self.local_distances.clone(),
        }
    }

    /// True when every simplex of `self` is also a simplex of `other`.
    pub fn is_subcomplex_of(&self, other: &LocalComplex) -> bool {
        self.vertices == other.vertices
            && self
                .edges
                .iter()
                .all(|e| other.edge_index(e.u, e.v).is_some())
            && self
                .triangles
                .iter()
                .all(|t| other.triangle_index(t.u, t.v, t.w).is_some())
    }

    /// Plain-text dump: one simplex per line, local vertex list then value.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for u in 0..self.vertices.len() {
            let _ = writeln!(s, "{u} 0");
        }
        for e in &self.edges {
            let _ = writeln!(s, "{} {} {}", e.u, e.v, e.value);
        }
        for t in &self.triangles {
            let _ = writeln!(s, "{} {} {} {}", t.u, t.v, t.w, t.value);
        }
        s
    }
}

/// Local complex around `center`: the center and its k nearest neighbors,
/// with the induced subgraph of `graph` clique-expanded to triangles.
pub fn local_complex(
    dist: &DistanceMatrix,
    graph: &NeighborGraph,
    center: usize,
    edge_cap: usize,
) -> Result<LocalComplex> {
    if center >= graph.m() || graph.m() != dist.len() {
        return Err(Error::invalid(format!(
            "center {center} out of range for {} points",
            graph.m()
        )));
    }
    let mut vertices = Vec::with_capacity(graph.k() + 1);
    vertices.push(center);
    vertices.extend_from_slice(graph.nearest(center));
    let n = vertices.len();
    let mut local = vec![0.0; n * n];
    for a in 0..n {
        for b in 0..n {
            local[a * n + b] = dist.get(vertices[a], vertices[b]);
        }
    }
    let mut edges = Vec::new();
    for a in 0..n {
        for b in (a + 1)..n {
            if graph.has_edge(vertices[a], vertices[b]) {
                edges.push((a, b));
            }
        }
    }
    if edges.len() > edge_cap {
        return Err(Error::Structure(format!(
            "local complex of sample {center} has {} edges, above the cap of {edge_cap}",
            edges.len()
        )));
    }
    LocalComplex::from_graph(vertices, local, &edges)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::RowMatrix;
    use proptest::prelude::*;

    fn line(points: &[f64]) -> DistanceMatrix {
        let rows: Vec<Vec<f64>> = points.iter().map(|&p| vec![p]).collect();
        DistanceMatrix::from_points(&RowMatrix::from_rows(&rows).unwrap(), Execution::Sequential)
            .unwrap()
    }

    fn unit_distances(n: usize) -> Vec<f64> {
        (0..n * n)
            .map(|i| if i / n == i % n { 0.0 } else { 1.0 })
            .collect()
    }

    #[test]
    fn knn_on_a_line() {
        let g = knn_graph(&line(&[0.0, 1.0, 3.0, 7.0]), 1, Execution::Sequential).unwrap();
        assert_eq!(g.edges(), vec![(0, 1), (1, 2), (2, 3)]);
    }

    #[test]
    fn knn_ties_prefer_smaller_index() {
        let g = knn_graph(&line(&[0.0, -1.0, 1.0]), 1, Execution::Sequential).unwrap();
        assert_eq!(g.nearest(0), &[1]);
    }

    #[test]
    fn complete_graph_at_k_max() {
        let g = knn_graph(&line(&[0.0, 2.0, 5.0, 9.0, 10.0]), 4, Execution::Sequential).unwrap();
        assert_eq!(g.edges().len(), 10);
        assert!(knn_graph(&line(&[0.0, 1.0]), 2, Execution::Sequential).is_err());
        assert!(knn_graph(&line(&[0.0, 1.0]), 0, Execution::Sequential).is_err());
    }

    #[test]
    fn clique_expansion_of_triangle_and_square() {
        let tri =
            LocalComplex::from_graph(vec![0, 1, 2], unit_distances(3), &[(0, 1), (1, 2), (0, 2)])
                .unwrap();
        assert_eq!(
            (tri.vertex_count(), tri.edges.len(), tri.triangles.len()),
            (3, 3, 1)
        );
        let c4 = LocalComplex::from_graph(
            vec![0, 1, 2, 3],
            unit_distances(4),
            &[(0, 1), (1, 2), (2, 3), (0, 3)],
        )
        .unwrap();
        assert_eq!((c4.edges.len(), c4.triangles.len()), (4, 0));
    }

    #[test]
    fn local_complex_vertex_order_and_cap() {
        let dist = line(&[0.0, 5.0, 1.0, 2.0, 9.0]);
        let g = knn_graph(&dist, 2, Execution::Sequential).unwrap();
        let c = local_complex(&dist, &g, 0, DEFAULT_EDGE_CAP).unwrap();
        assert_eq!(c.vertices, vec![0, 2, 3]);
        assert_eq!(c.center, 0);
        for e in &c.edges {
            assert_eq!(e.value, c.local_distance(e.u, e.v));
        }
        assert!(local_complex(&dist, &g, 0, 1).is_err());
        assert!(local_complex(&dist, &g, 5, DEFAULT_EDGE_CAP).is_err());
    }

    #[test]
    fn sublevel_counts() {
        // values 1, 2, 3 on a path plus chord
        let d = vec![
            0.0, 1.0, 3.0, 0.0, //
            1.0, 0.0, 2.0, 0.0, //
            3.0, 2.0, 0.0, 0.0, //
            0.0, 0.0, 0.0, 0.0,
        ];
        let c = LocalComplex::from_graph(vec![0, 1, 2, 3], d, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        assert_eq!(c.sublevel(f64::INFINITY), c);
        assert_eq!(c.sublevel(c.max_value()), c);
        let s = c.sublevel(2.5);
        assert_eq!(s.edges.len(), 2);
        assert!(s.triangles.is_empty());
        assert!(c.sublevel(0.0).edges.is_empty());
        assert!(c.to_text().contains("0 1 2 3"));
    }

    fn random_complex(n: usize, seed: &[u8], dists: &[f64]) -> LocalComplex {
        let mut edges = Vec::new();
        let mut idx = 0;
        for a in 0..n {
            for b in (a + 1)..n {
                if seed[idx % seed.len()] % 2 == 1 {
                    edges.push((a, b));
                }
                idx += 1;
            }
        }
        let mut d = vec![0.0; n * n];
        let mut idx = 0;
        for a in 0..n {
            for b in (a + 1)..n {
                d[a * n + b] = dists[idx % dists.len()];
                d[b * n + a] = d[a * n + b];
                idx += 1;
            }
        }
        LocalComplex::from_graph((0..n).collect(), d, &edges).unwrap()
    }

    proptest! {
        #[test]
        fn triangles_match_brute_force(
            n in 3usize..9,
            seed in proptest::collection::vec(any::<u8>(), 28),
            dists in proptest::collection::vec(0.1f64..5.0, 28),
        ) {
            let c = random_complex(n, &seed, &dists);
            let mut want = Vec::new();
            for a in 0..n { for b in (a+1)..n { for w in (b+1)..n {
                if c.edge_index(a, b).is_some() && c.edge_index(a, w).is_some() && c.edge_index(b, w).is_some() {
                    want.push((a, b, w));
                }
            }}}
            let got: Vec<_> = c.triangles.iter().map(|t| (t.u, t.v, t.w)).collect();
            prop_assert_eq!(got, want);
            for t in &c.triangles {
                let mx = c.local_distance(t.u, t.v).max(c.local_distance(t.u, t.w)).max(c.local_distance(t.v, t.w));
                prop_assert_eq!(t.value, mx);
            }
        }

        #[test]
        fn sublevels_are_nested_and_closed(
            n in 3usize..9,
            seed in proptest::collection::vec(any::<u8>(), 28),
            dists in proptest::collection::vec(0.1f64..5.0, 28),
            t1 in 0.0f64..5.0,
            t2 in 0.0f64..5.0,
        ) {
            let c = random_complex(n, &seed, &dists);
            let (lo, hi) = (t1.min(t2), t1.max(t2));
            let a = c.sublevel(lo);
            let b = c.sublevel(hi);
            prop_assert!(a.is_subcomplex_of(&b));
            prop_assert!(b.is_subcomplex_of(&c));
            for t in &a.triangles {
                prop_assert!(a.edge_index(t.u, t.v).is_some());
                prop_assert!(a.edge_index(t.u, t.w).is_some());
                prop_assert!(a.edge_index(t.v, t.w).is_some());
            }
        }

        #[test]
        fn knn_matches_row_sort_oracle(points in proptest::collection::vec(-10.0f64..10.0, 10), k in 1usize..5) {
            let rows: Vec<Vec<f64>> = points.chunks(2).map(|c| c.to_vec()).collect();
            let dist = DistanceMatrix::from_points(&RowMatrix::from_rows(&rows).unwrap(), Execution::Sequential).unwrap();
            let g = knn_graph(&dist, k, Execution::Sequential).unwrap();
            let m = rows.len();
            let mut want = std::collections::BTreeSet::new();
            for i in 0..m {
                let mut order: Vec<usize> = (0..m).filter(|&j| j != i).collect();
                order.sort_by(|&a, &b| dist.get(i, a).partial_cmp(&dist.get(i, b)).unwrap().then(a.cmp(&b)));
                for &j in &order[..k] {
                    want.insert((i.min(j), i.max(j)));
                }
            }
            prop_assert_eq!(g.edges(), want.into_iter().collect::<Vec<_>>());
        }
    }
}
