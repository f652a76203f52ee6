//! Triangle meshes of cross sections, prism meshes of channels, and the
//! element quadrature data shared by the finite-element modules.

use crate::error::{Error, Result};
use crate::polygon::{self, Point};
use crate::quadrature::{GaussLegendre, TRIANGLE_3};

#[derive(Debug, Clone)]
pub struct BoundaryEdge {
    pub nodes: [usize; 2],
    pub normal: Point,
    pub length: f64,
}

/// Conforming triangle mesh of a planar domain.
#[derive(Debug, Clone)]
pub struct TriMesh {
    pub vertices: Vec<Point>,
    pub triangles: Vec<[usize; 3]>,
    pub boundary_edges: Vec<BoundaryEdge>,
    /// Boundary nodes in counter-clockwise order.
    pub boundary_nodes: Vec<usize>,
}

impl TriMesh {
    /// Meshes a domain that is star-shaped with respect to `center` by
    /// concentric rings obtained from scaled copies of the boundary. The
    /// outermost ring is the boundary polygon itself (vertices preserved).
    pub fn star_shaped(boundary: &[Point], center: Point, n_rings: usize) -> Result<Self> {
        let m = boundary.len();
        if m < 3 || n_rings < 1 {
            return Err(Error::DegenerateGeometry("need at least 3 boundary vertices and one ring".into()));
        }
        if polygon::signed_area(boundary) <= 0.0 {
            return Err(Error::DegenerateGeometry("boundary polygon must be counter-clockwise with positive area".into()));
        }
        let params = polygon::arclength_params(boundary);
        let mut vertices = vec![center];
        let mut rings: Vec<(Vec<usize>, Vec<f64>)> = Vec::new();
        for k in 1..=n_rings {
            let (ts, pts): (Vec<f64>, Vec<Point>) = if k == n_rings {
                (params.clone(), boundary.to_vec())
            } else {
                let mk = ((m * k) as f64 / n_rings as f64).round().max(3.0) as usize;
                let s = k as f64 / n_rings as f64;
                (0..mk)
                    .map(|i| {
                        let t = i as f64 / mk as f64;
                        let p = polygon::point_at(boundary, &params, t);
                        (t, [center[0] + s * (p[0] - center[0]), center[1] + s * (p[1] - center[1])])
                    })
                    .unzip()
            };
            let ids: Vec<usize> = (vertices.len()..vertices.len() + pts.len()).collect();
            vertices.extend(pts);
            rings.push((ids, ts));
        }
        let mut triangles = Vec::new();
        let (first, _) = &rings[0];
        for i in 0..first.len() {
            triangles.push([0, first[i], first[(i + 1) % first.len()]]);
        }
        for w in rings.windows(2) {
            let (a, ta) = &w[0];
            let (b, tb) = &w[1];
            let (na, nb) = (a.len(), b.len());
            let t_at = |ts: &Vec<f64>, i: usize| ts[i % ts.len()] + (i / ts.len()) as f64;
            let (mut ia, mut ib) = (0usize, 0usize);
            while ia < na || ib < nb {
                let advance_inner = ib == nb || (ia < na && t_at(ta, ia + 1) < t_at(tb, ib + 1));
                if advance_inner {
                    triangles.push([a[ia % na], b[ib % nb], a[(ia + 1) % na]]);
                    ia += 1;
                } else {
                    triangles.push([a[ia % na], b[ib % nb], b[(ib + 1) % nb]]);
                    ib += 1;
                }
            }
        }
        let boundary_nodes = rings.last().unwrap().0.clone();
        let mesh = Self::with_boundary(vertices, triangles, boundary_nodes);
        mesh.validate()?;
        Ok(mesh)
    }

    /// Structured mesh of `[0, w] × [0, h]` with `nx × ny` squares, each
    /// split into two triangles.
    pub fn rectangle(nx: usize, ny: usize, w: f64, h: f64) -> Self {
        let mut vertices = Vec::new();
        for j in 0..=ny {
            for i in 0..=nx {
                vertices.push([w * i as f64 / nx as f64, h * j as f64 / ny as f64]);
            }
        }
        let id = |i: usize, j: usize| j * (nx + 1) + i;
        let mut triangles = Vec::new();
        for j in 0..ny {
            for i in 0..nx {
                let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
                if (i + j) % 2 == 0 {
                    triangles.push([a, b, c]);
                    triangles.push([a, c, d]);
                } else {
                    triangles.push([a, b, d]);
                    triangles.push([b, c, d]);
                }
            }
        }
        let mut boundary = Vec::new();
        for i in 0..nx {
            boundary.push(id(i, 0));
        }
        for j in 0..ny {
            boundary.push(id(nx, j));
        }
        for i in (1..=nx).rev() {
            boundary.push(id(i, ny));
        }
        for j in (1..=ny).rev() {
            boundary.push(id(0, j));
        }
        Self::with_boundary(vertices, triangles, boundary)
    }

    fn with_boundary(vertices: Vec<Point>, triangles: Vec<[usize; 3]>, boundary_nodes: Vec<usize>) -> Self {
        let n = boundary_nodes.len();
        let boundary_edges = (0..n)
            .map(|i| {
                let (a, b) = (boundary_nodes[i], boundary_nodes[(i + 1) % n]);
                let pa = vertices[a];
                let pb = vertices[b];
                let length = polygon::dist(pa, pb);
                let normal = [(pb[1] - pa[1]) / length, -(pb[0] - pa[0]) / length];
                BoundaryEdge { nodes: [a, b], normal, length }
            })
            .collect();
        Self { vertices, triangles, boundary_edges, boundary_nodes }
    }

    pub fn validate(&self) -> Result<()> {
        for (k, _) in self.triangles.iter().enumerate() {
            let a = self.signed_area(k);
            if !(a > 0.0) {
                return Err(Error::DegenerateGeometry(format!("triangle {k} has non-positive area {a:.3e}")));
            }
        }
        for e in &self.boundary_edges {
            if !(e.length > 0.0) {
                return Err(Error::DegenerateGeometry("zero-length boundary edge".into()));
            }
        }
        Ok(())
    }

    pub fn n_nodes(&self) -> usize {
        self.vertices.len()
    }

    pub fn signed_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        let (p, q, r) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        0.5 * ((q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0]))
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.signed_area(t)).sum()
    }

    /// Gradients of the three barycentric coordinates of triangle `t`.
    pub fn shape_gradients(&self, t: usize) -> [Point; 3] {
        let [a, b, c] = self.triangles[t];
        let (p, q, r) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        let two_a = 2.0 * self.signed_area(t);
        [
            [(q[1] - r[1]) / two_a, (r[0] - q[0]) / two_a],
            [(r[1] - p[1]) / two_a, (p[0] - r[0]) / two_a],
            [(p[1] - q[1]) / two_a, (q[0] - p[0]) / two_a],
        ]
    }

    pub fn barycentric(&self, t: usize, x: Point) -> [f64; 3] {
        let [a, b, c] = self.triangles[t];
        let (p, q, r) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        let det = (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0]);
        let l1 = ((x[0] - p[0]) * (r[1] - p[1]) - (x[1] - p[1]) * (r[0] - p[0])) / det;
        let l2 = ((q[0] - p[0]) * (x[1] - p[1]) - (q[1] - p[1]) * (x[0] - p[0])) / det;
        [1.0 - l1 - l2, l1, l2]
    }

    /// Triangle containing `x` with its barycentric coordinates; points
    /// outside the mesh get the triangle whose smallest barycentric
    /// coordinate is largest (linear extrapolation).
    pub fn locate(&self, x: Point) -> (usize, [f64; 3]) {
        let mut best = (0, [f64::NAN; 3], f64::NEG_INFINITY);
        for t in 0..self.triangles.len() {
            let l = self.barycentric(t, x);
            let lo = l[0].min(l[1]).min(l[2]);
            if lo >= -1e-12 {
                return (t, l);
            }
            if lo > best.2 {
                best = (t, l, lo);
            }
        }
        (best.0, best.1)
    }

    /// Outward unit normals at boundary nodes: normalized sum of the two
    /// adjacent edge normals. Indexed like `boundary_nodes`.
    pub fn boundary_vertex_normals(&self) -> Vec<Point> {
        let n = self.boundary_edges.len();
        (0..n)
            .map(|i| {
                let e0 = &self.boundary_edges[(i + n - 1) % n];
                let e1 = &self.boundary_edges[i];
                let s = [e0.normal[0] + e1.normal[0], e0.normal[1] + e1.normal[1]];
                let l = (s[0] * s[0] + s[1] * s[1]).sqrt();
                [s[0] / l, s[1] / l]
            })
            .collect()
    }

    pub fn scaled(&self, s: f64) -> Self {
        let vertices = self.vertices.iter().map(|p| [s * p[0], s * p[1]]).collect();
        Self::with_boundary(vertices, self.triangles.clone(), self.boundary_nodes.clone())
    }

    /// Maximum edge length.
    pub fn h_max(&self) -> f64 {
        let mut h: f64 = 0.0;
        for t in &self.triangles {
            for k in 0..3 {
                h = h.max(polygon::dist(self.vertices[t[k]], self.vertices[t[(k + 1) % 3]]));
            }
        }
        h
    }
}

/// Quadrature data of one element: node list, and per quadrature point the
/// weight (including the Jacobian), shape values and physical gradients.
#[derive(Debug, Clone)]
pub struct Element {
    pub nodes: Vec<usize>,
    pub points: Vec<QuadPoint>,
}

#[derive(Debug, Clone)]
pub struct QuadPoint {
    pub weight: f64,
    pub position: [f64; 3],
    pub phi: Vec<f64>,
    pub grad: Vec<[f64; 3]>,
}

/// Node coordinates and element quadrature for a P1 triangle mesh (planar
/// fields are embedded in ℝ³ with vanishing third components).
pub fn triangle_elements(mesh: &TriMesh) -> Vec<Element> {
    (0..mesh.triangles.len())
        .map(|t| {
            let nodes = mesh.triangles[t].to_vec();
            let area = mesh.signed_area(t);
            let g = mesh.shape_gradients(t);
            let grad: Vec<[f64; 3]> = g.iter().map(|v| [v[0], v[1], 0.0]).collect();
            let points = TRIANGLE_3
                .iter()
                .map(|(b, w)| {
                    let mut position = [0.0; 3];
                    for k in 0..3 {
                        let p = mesh.vertices[nodes[k]];
                        position[0] += b[k] * p[0];
                        position[1] += b[k] * p[1];
                    }
                    QuadPoint { weight: w * area, position, phi: b.to_vec(), grad: grad.clone() }
                })
                .collect();
            Element { nodes, points }
        })
        .collect()
}

/// Channel mesh: a fixed section topology extruded over `levels` z-values,
/// with physical node positions supplied per level.
#[derive(Debug, Clone)]
pub struct PrismMesh {
    pub section: TriMesh,
    pub z_levels: Vec<f64>,
    /// `nodes[level * n_section + i]` is the physical position.
    pub nodes: Vec<[f64; 3]>,
}

impl PrismMesh {
    /// `place(level, section_node)` returns the horizontal position of a node.
    pub fn extrude(section: TriMesh, z_levels: Vec<f64>, place: impl Fn(usize, usize) -> Point) -> Result<Self> {
        if z_levels.len() < 2 {
            return Err(Error::DegenerateGeometry("need at least two z-levels".into()));
        }
        let ns = section.n_nodes();
        let mut nodes = Vec::with_capacity(ns * z_levels.len());
        for (l, &z) in z_levels.iter().enumerate() {
            for i in 0..ns {
                let p = place(l, i);
                nodes.push([p[0], p[1], z]);
            }
        }
        Ok(Self { section, z_levels, nodes })
    }

    pub fn n_section(&self) -> usize {
        self.section.n_nodes()
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn node(&self, level: usize, i: usize) -> usize {
        level * self.n_section() + i
    }

    pub fn n_levels(&self) -> usize {
        self.z_levels.len()
    }

    /// Isoparametric six-node wedge elements with a 3 × 2 point rule.
    pub fn elements(&self) -> Result<Vec<Element>> {
        let gl = GaussLegendre::new(2);
        let mut out = Vec::with_capacity(self.section.triangles.len() * (self.n_levels() - 1));
        for l in 0..self.n_levels() - 1 {
            for tri in &self.section.triangles {
                let nodes: Vec<usize> = tri
                    .iter()
                    .map(|&i| self.node(l, i))
                    .chain(tri.iter().map(|&i| self.node(l + 1, i)))
                    .collect();
                let x: Vec<[f64; 3]> = nodes.iter().map(|&n| self.nodes[n]).collect();
                let mut points = Vec::with_capacity(6);
                for (b, wt) in TRIANGLE_3.iter() {
                    for (zeta, wz) in gl.on_interval(0.0, 1.0) {
                        // reference coordinates (ξ, η, ζ) with L = (1-ξ-η, ξ, η)
                        let lam = [b[0], b[1], b[2]];
                        let dl = [[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]];
                        let mut phi = vec![0.0; 6];
                        let mut dref = [[0.0; 3]; 6];
                        for k in 0..3 {
                            phi[k] = lam[k] * (1.0 - zeta);
                            phi[k + 3] = lam[k] * zeta;
                            dref[k] = [dl[k][0] * (1.0 - zeta), dl[k][1] * (1.0 - zeta), -lam[k]];
                            dref[k + 3] = [dl[k][0] * zeta, dl[k][1] * zeta, lam[k]];
                        }
                        let mut jac = [[0.0; 3]; 3];
                        let mut position = [0.0; 3];
                        for a in 0..6 {
                            for i in 0..3 {
                                position[i] += phi[a] * x[a][i];
                                for j in 0..3 {
                                    jac[i][j] += x[a][i] * dref[a][j];
                                }
                            }
                        }
                        let (inv, det) = invert3(&jac);
                        if !(det > 0.0) {
                            return Err(Error::DegenerateGeometry(format!("wedge with non-positive Jacobian {det:.3e}")));
                        }
                        // physical gradient: ∇φ = J^{-T} ∇_ref φ
                        let grad = dref
                            .iter()
                            .map(|d| {
                                let mut g = [0.0; 3];
                                for i in 0..3 {
                                    for j in 0..3 {
                                        g[i] += inv[j][i] * d[j];
                                    }
                                }
                                g
                            })
                            .collect();
                        // triangle rule weights sum to 1 on a reference area of 1/2
                        points.push(QuadPoint { weight: 0.5 * wt * wz * det, position, phi, grad });
                    }
                }
                out.push(Element { nodes, points });
            }
        }
        Ok(out)
    }

    /// Area vectors (outward normal times area) of the lateral
    /// quadrilateral faces adjacent to each node; empty for nodes off the
    /// lateral surface.
    pub fn lateral_face_normals(&self) -> Vec<Vec<[f64; 3]>> {
        let mut acc: Vec<Vec<[f64; 3]>> = vec![Vec::new(); self.n_nodes()];
        for l in 0..self.n_levels() - 1 {
            for e in &self.section.boundary_edges {
                let [a, b] = e.nodes;
                let p = [self.node(l, a), self.node(l, b), self.node(l + 1, b), self.node(l + 1, a)];
                let x: Vec<[f64; 3]> = p.iter().map(|&n| self.nodes[n]).collect();
                // quad area vector: ½ (d1 × d2) with diagonals
                let n = cross(sub(x[2], x[0]), sub(x[3], x[1]));
                let nv = [0.5 * n[0], 0.5 * n[1], 0.5 * n[2]];
                for &q in &p {
                    acc[q].push(nv);
                }
            }
        }
        acc
    }

    /// Outward unit normals of the lateral surface at lateral nodes,
    /// averaged over adjacent lateral quadrilateral faces (area weighted),
    /// and the largest angle between those face normals (corner detector).
    pub fn lateral_normals(&self) -> Vec<Option<([f64; 3], f64)>> {
        self.lateral_face_normals()
            .into_iter()
            .map(|list| {
                if list.is_empty() {
                    return None;
                }
                let mut s = [0.0; 3];
                for v in &list {
                    for i in 0..3 {
                        s[i] += v[i];
                    }
                }
                let ln = norm3(s);
                let n = [s[0] / ln, s[1] / ln, s[2] / ln];
                let mut max_angle: f64 = 0.0;
                for a in &list {
                    for b in &list {
                        let c = dot3(*a, *b) / (norm3(*a) * norm3(*b));
                        max_angle = max_angle.max(c.clamp(-1.0, 1.0).acos());
                    }
                }
                Some((n, max_angle))
            })
            .collect()
    }

    /// Total volume from element quadrature.
    pub fn volume(&self) -> Result<f64> {
        Ok(self.elements()?.iter().flat_map(|e| e.points.iter().map(|p| p.weight)).sum())
    }
}

pub(crate) fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub(crate) fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn norm3(a: [f64; 3]) -> f64 {
    dot3(a, a).sqrt()
}

fn invert3(m: &[[f64; 3]; 3]) -> ([[f64; 3]; 3], f64) {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let inv = [
        [
            (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / det,
            (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / det,
            (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / det,
        ],
        [
            (m[1][2] * m[2][0] - m[1][0] * m[2][2]) / det,
            (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / det,
            (m[0][2] * m[1][0] - m[0][0] * m[1][2]) / det,
        ],
        [
            (m[1][0] * m[2][1] - m[1][1] * m[2][0]) / det,
            (m[0][1] * m[2][0] - m[0][0] * m[2][1]) / det,
            (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / det,
        ],
    ];
    (inv, det)
}
