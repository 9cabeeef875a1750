//! Distance-kernel cellular sheaves with scalar stalks on local complexes,
//! and their weighted coboundary operators.

use nalgebra::DMatrix;

use crate::complex::LocalComplex;
use crate::error::{Error, Result};

/// Restriction values of the vertex-to-edge inclusions of one edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeMaps {
    pub u: usize,
    pub v: usize,
    pub at_u: f64,
    pub at_v: f64,
}

/// Restriction values of the edge-to-triangle inclusions of one triangle,
/// ordered as the faces `{v,w}`, `{u,w}`, `{u,v}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriangleMaps {
    pub u: usize,
    pub v: usize,
    pub w: usize,
    pub faces: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SheafAssignment {
    pub sigma: f64,
    pub edges: Vec<EdgeMaps>,
    pub triangles: Vec<TriangleMaps>,
}

impl SheafAssignment {
    /// Value of the inclusion `{vertex} -> {u,v}`.
    pub fn vertex_edge(&self, vertex: usize, u: usize, v: usize) -> Option<f64> {
        let key = (u.min(v), u.max(v));
        let e = self.edges[self.edges.binary_search_by(|e| (e.u, e.v).cmp(&key)).ok()?];
        match vertex {
            x if x == e.u => Some(e.at_u),
            x if x == e.v => Some(e.at_v),
            _ => None,
        }
    }

    /// Value of the inclusion `{a,b} -> {u,v,w}`.
    pub fn edge_triangle(&self, a: usize, b: usize, tri: [usize; 3]) -> Option<f64> {
        let mut key = tri;
        key.sort_unstable();
        let t = self.triangles[self
            .triangles
            .binary_search_by(|t| [t.u, t.v, t.w].cmp(&key))
            .ok()?];
        let edge = (a.min(b), a.max(b));
        [(t.v, t.w), (t.u, t.w), (t.u, t.v)]
            .iter()
            .position(|&f| f == edge)
            .map(|i| t.faces[i])
    }

    /// Keeps the entries for simplices of `sub`, which must be a subcomplex
    /// of the complex this sheaf was built on.
    pub fn restrict(&self, sub: &LocalComplex) -> Result<SheafAssignment> {
        let mut edges = Vec::with_capacity(sub.edges.len());
        let mut it = self.edges.iter();
        for e in &sub.edges {
            let found = it.find(|m| (m.u, m.v) == (e.u, e.v)).ok_or_else(|| {
                Error::Structure(format!("edge ({},{}) has no sheaf data", e.u, e.v))
            })?;
            edges.push(*found);
        }
        let mut triangles = Vec::with_capacity(sub.triangles.len());
        let mut it = self.triangles.iter();
        for t in &sub.triangles {
            let found = it
                .find(|m| (m.u, m.v, m.w) == (t.u, t.v, t.w))
                .ok_or_else(|| {
                    Error::Structure(format!(
                        "triangle ({},{},{}) has no sheaf data",
                        t.u, t.v, t.w
                    ))
                })?;
            triangles.push(*found);
        }
        Ok(SheafAssignment {
            sigma: self.sigma,
            edges,
            triangles,
        })
    }
}

/// Median of the strictly positive upper-triangle entries of a square
/// row-major matrix; 1 when there are none.
pub fn local_sigma(local_distances: &[f64], n: usize) -> f64 {
    let mut vals: Vec<f64> = (0..n)
        .flat_map(|a| ((a + 1)..n).map(move |b| (a, b)))
        .map(|(a, b)| local_distances[a * n + b])
        .filter(|&d| d > 0.0)
        .collect();
    if vals.is_empty() {
        return 1.0;
    }
    vals.sort_by(f64::total_cmp);
    let mid = vals.len() / 2;
    if vals.len() % 2 == 1 {
        vals[mid]
    } else {
        0.5 * (vals[mid - 1] + vals[mid])
    }
}

pub fn kernel(t: f64, sigma: f64) -> f64 {
    (-(t * t) / (sigma * sigma)).exp()
}

/// The distance-kernel sheaf with `sigma` taken from the complex's full local
/// distance matrix.
pub fn build_sheaf(complex: &LocalComplex) -> SheafAssignment {
    let sigma = local_sigma(complex.local_distances(), complex.vertex_count());
    build_sheaf_with_sigma(complex, sigma)
}

pub fn build_sheaf_with_sigma(complex: &LocalComplex, sigma: f64) -> SheafAssignment {
    let k = |a: usize, b: usize| kernel(complex.local_distance(a, b), sigma);
    let edges = complex
        .edges
        .iter()
        .map(|e| {
            let val = kernel(e.value, sigma);
            EdgeMaps {
                u: e.u,
                v: e.v,
                at_u: val,
                at_v: val,
            }
        })
        .collect();
    let triangles = complex
        .triangles
        .iter()
        .map(|t| TriangleMaps {
            u: t.u,
            v: t.v,
            w: t.w,
            faces: [
                0.5 * (k(t.v, t.u) + k(t.w, t.u)),
                0.5 * (k(t.u, t.v) + k(t.w, t.v)),
                0.5 * (k(t.u, t.w) + k(t.v, t.w)),
            ],
        })
        .collect();
    SheafAssignment {
        sigma,
        edges,
        triangles,
    }
}

/// All restriction maps equal to 1.
pub fn constant_sheaf(complex: &LocalComplex) -> SheafAssignment {
    SheafAssignment {
        sigma: 1.0,
        edges: complex
            .edges
            .iter()
            .map(|e| EdgeMaps {
                u: e.u,
                v: e.v,
                at_u: 1.0,
                at_v: 1.0,
            })
            .collect(),
        triangles: complex
            .triangles
            .iter()
            .map(|t| TriangleMaps {
                u: t.u,
                v: t.v,
                w: t.w,
                faces: [1.0; 3],
            })
            .collect(),
    }
}

/// Sparse coboundaries: every `d0` row has two entries, every `d1` row three.
#[derive(Debug, Clone, PartialEq)]
pub struct CoboundaryPair {
    pub vertices: usize,
    /// Row per edge: `[(u, -rho_u), (v, +rho_v)]`.
    pub d0: Vec<[(usize, f64); 2]>,
    /// Row per triangle: `[(e0, +), (e1, -), (e2, +)]` over faces
    /// `{v,w}`, `{u,w}`, `{u,v}`.
    pub d1: Vec<[(usize, f64); 3]>,
}

impl CoboundaryPair {
    pub fn edges(&self) -> usize {
        self.d0.len()
    }

    pub fn triangles(&self) -> usize {
        self.d1.len()
    }

    pub fn d0_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.edges(), self.vertices);
        for (r, row) in self.d0.iter().enumerate() {
            for &(c, v) in row {
                m[(r, c)] += v;
            }
        }
        m
    }

    pub fn d1_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.triangles(), self.edges());
        for (r, row) in self.d1.iter().enumerate() {
            for &(c, v) in row {
                m[(r, c)] += v;
            }
        }
        m
    }
}

pub fn coboundaries(complex: &LocalComplex, sheaf: &SheafAssignment) -> Result<CoboundaryPair> {
    if sheaf.edges.len() != complex.edges.len() || sheaf.triangles.len() != complex.triangles.len()
    {
        return Err(Error::Structure(
            "sheaf does not cover the complex's incidences".into(),
        ));
    }
    let mut d0 = Vec::with_capacity(complex.edges.len());
    for (e, maps) in complex.edges.iter().zip(&sheaf.edges) {
        if (e.u, e.v) != (maps.u, maps.v) {
            return Err(Error::Structure(format!(
                "missing sheaf data for edge ({},{})",
                e.u, e.v
            )));
        }
        d0.push([(e.u, -maps.at_u), (e.v, maps.at_v)]);
    }
    let mut d1 = Vec::with_capacity(complex.triangles.len());
    for (t, maps) in complex.triangles.iter().zip(&sheaf.triangles) {
        if (t.u, t.v, t.w) != (maps.u, maps.v, maps.w) {
            return Err(Error::Structure(format!(
                "missing sheaf data for triangle ({},{},{})",
                t.u, t.v, t.w
            )));
        }
        let face = |a, b| {
            complex.edge_index(a, b).ok_or_else(|| {
                Error::Structure(format!(
                    "triangle ({},{},{}) lacks face ({a},{b})",
                    t.u, t.v, t.w
                ))
            })
        };
        d1.push([
            (face(t.v, t.w)?, maps.faces[0]),
            (face(t.u, t.w)?, -maps.faces[1]),
            (face(t.u, t.v)?, maps.faces[2]),
        ]);
    }
    Ok(CoboundaryPair {
        vertices: complex.vertex_count(),
        d0,
        d1,
    })
}
