//! Korn and Poincaré constants of thin channels and their cross sections,
//! computed as extreme generalized eigenvalues of finite-element pencils.
//!
//! Fields are continuous piecewise linear (triangles for sections, six-node
//! wedges for channels). Boundary conditions are imposed by restricting each
//! node to its admissible directions, so `v·n = 0` and the cap condition hold
//! exactly in the discrete space.

use crate::error::{Error, Result};
use crate::fit::{self, PowerFit};
use crate::geometry::{ChannelGeometry, SectionShape};
use crate::linalg::{self, axpy, dot, CsrMatrix, EigenPair, SkylineCholesky};
use crate::mesh::{self, Element, PrismMesh, TriMesh};
use crate::polygon::{self, Point};
use crate::profile::Profile;
use crate::quadrature::{self, GaussLegendre};
use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Relative convergence tolerance of the eigensolver.
pub const EIGEN_TOL: f64 = 1e-8;
const MAX_RESTARTS: usize = 60;
/// Boundary nodes whose adjacent face normals differ by more than this
/// angle (radians) lie on a wall edge; fields there must be tangent to
/// every adjacent face.
pub const CORNER_ANGLE: f64 = 1.0;

/// Admissible directions of each node and the resulting unknown numbering.
#[derive(Debug, Clone)]
struct DofMap {
    n_dofs: usize,
    node: Vec<Vec<(usize, [f64; 3])>>,
}

impl DofMap {
    fn new(directions: &[Vec<[f64; 3]>]) -> Self {
        let mut n = 0;
        let node = directions
            .iter()
            .map(|dirs| {
                dirs.iter()
                    .map(|&d| {
                        n += 1;
                        (n - 1, d)
                    })
                    .collect()
            })
            .collect();
        Self { n_dofs: n, node }
    }

    fn expand(&self, x: &[f64]) -> Vec<[f64; 3]> {
        self.node
            .iter()
            .map(|dirs| {
                let mut v = [0.0; 3];
                for &(k, d) in dirs {
                    for i in 0..3 {
                        v[i] += x[k] * d[i];
                    }
                }
                v
            })
            .collect()
    }

    /// Orthogonal projection of nodal vectors onto the admissible directions.
    fn restrict(&self, values: &[[f64; 3]]) -> Vec<f64> {
        let mut x = vec![0.0; self.n_dofs];
        for (dirs, v) in self.node.iter().zip(values) {
            for &(k, d) in dirs {
                x[k] = mesh::dot3(d, *v);
            }
        }
        x
    }
}

/// Gradient, symmetric-gradient and mass forms on the admissible space.
#[derive(Debug, Clone)]
struct Forms {
    grad: CsrMatrix,
    sym: CsrMatrix,
    mass: CsrMatrix,
}

fn assemble(elements: &[Element], dofs: &DofMap) -> Forms {
    let (mut tg, mut ts, mut tm) = (Vec::new(), Vec::new(), Vec::new());
    for e in elements {
        let local: Vec<(usize, usize, [f64; 3])> = e
            .nodes
            .iter()
            .enumerate()
            .flat_map(|(a, &n)| dofs.node[n].iter().map(move |&(k, d)| (a, k, d)))
            .collect();
        let m = local.len();
        let (mut kg, mut ks, mut km) = (vec![0.0; m * m], vec![0.0; m * m], vec![0.0; m * m]);
        for p in &e.points {
            for (i, &(a, _, b)) in local.iter().enumerate() {
                for (j, &(c, _, d)) in local.iter().enumerate() {
                    let bd = mesh::dot3(b, d);
                    let gg = mesh::dot3(p.grad[a], p.grad[c]);
                    kg[i * m + j] += p.weight * bd * gg;
                    // sym∇(φ_a b) : sym∇(φ_c d)
                    ks[i * m + j] += p.weight * 0.5 * (bd * gg + mesh::dot3(b, p.grad[c]) * mesh::dot3(d, p.grad[a]));
                    km[i * m + j] += p.weight * bd * p.phi[a] * p.phi[c];
                }
            }
        }
        for (i, &(_, ki, _)) in local.iter().enumerate() {
            for (j, &(_, kj, _)) in local.iter().enumerate() {
                tg.push((ki, kj, kg[i * m + j]));
                ts.push((ki, kj, ks[i * m + j]));
                tm.push((ki, kj, km[i * m + j]));
            }
        }
    }
    let n = dofs.n_dofs;
    Forms {
        grad: CsrMatrix::from_triplets(n, n, tg),
        sym: CsrMatrix::from_triplets(n, n, ts),
        mass: CsrMatrix::from_triplets(n, n, tm),
    }
}

/// Deterministic pseudo-random start vector (xorshift).
fn start_vector(n: usize) -> Vec<f64> {
    let mut s: u64 = 0x9E37_79B9_7F4A_7C15;
    (0..n)
        .map(|_| {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        })
        .collect()
}

fn max_ratio(
    numerator: &dyn Fn(&[f64]) -> Vec<f64>,
    denominator: &CsrMatrix,
    factor: &SkylineCholesky,
    project: Option<&dyn Fn(&mut [f64])>,
) -> Result<EigenPair> {
    if denominator.n_rows == 0 {
        return Err(Error::DegenerateInput("no admissible unknowns".into()));
    }
    let start = start_vector(denominator.n_rows);
    linalg::largest_pencil_eigen(numerator, denominator, &|b| factor.solve(b), project, &start, EIGEN_TOL, MAX_RESTARTS)
}

fn unit(i: usize) -> [f64; 3] {
    let mut e = [0.0; 3];
    e[i] = 1.0;
    e
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let l = mesh::norm3(v);
    [v[0] / l, v[1] / l, v[2] / l]
}

/// Orthonormal basis of the plane orthogonal to the unit vector `n`.
fn complement(n: [f64; 3]) -> [[f64; 3]; 2] {
    let k = (0..3).min_by(|&a, &b| n[a].abs().partial_cmp(&n[b].abs()).unwrap()).unwrap();
    let t1 = normalize(mesh::cross(n, unit(k)));
    [t1, mesh::cross(n, t1)]
}

/// Tangent directions at a lateral node from its adjacent face area vectors.
fn tangent_directions(faces: &[[f64; 3]]) -> Vec<[f64; 3]> {
    let units: Vec<[f64; 3]> = faces.iter().map(|&f| normalize(f)).collect();
    let mut max_angle: f64 = 0.0;
    for a in &units {
        for b in &units {
            max_angle = max_angle.max(mesh::dot3(*a, *b).clamp(-1.0, 1.0).acos());
        }
    }
    if max_angle <= CORNER_ANGLE {
        let mut s = [0.0; 3];
        for f in faces {
            for i in 0..3 {
                s[i] += f[i];
            }
        }
        return complement(normalize(s)).to_vec();
    }
    // wall edge: tangent to every adjacent face
    let mut m = Matrix3::<f64>::zeros();
    for u in &units {
        for i in 0..3 {
            for j in 0..3 {
                m[(i, j)] += u[i] * u[j];
            }
        }
    }
    let eig = SymmetricEigen::new(m);
    let top = eig.eigenvalues.max();
    (0..3)
        .filter(|&k| eig.eigenvalues[k] < 0.1 * top)
        .map(|k| {
            let c = eig.eigenvectors.column(k);
            [c[0], c[1], c[2]]
        })
        .collect()
}

/// Gradient `∂_j v_i` of a nodal field at a quadrature point.
fn gradient_at(e: &Element, p: &mesh::QuadPoint, values: &[[f64; 3]]) -> [[f64; 3]; 3] {
    let mut g = [[0.0; 3]; 3];
    for (a, &n) in e.nodes.iter().enumerate() {
        let v = values[n];
        for i in 0..3 {
            for j in 0..3 {
                g[i][j] += v[i] * p.grad[a][j];
            }
        }
    }
    g
}

fn frobenius2(g: &[[f64; 3]; 3]) -> f64 {
    g.iter().flat_map(|r| r.iter()).map(|x| x * x).sum()
}

fn sym_norm2(g: &[[f64; 3]; 3]) -> f64 {
    let mut s = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let v = 0.5 * (g[i][j] + g[j][i]);
            s += v * v;
        }
    }
    s
}

// ---------------------------------------------------------------------------
// classical Korn constant

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassicalKorn {
    /// `max_v min_{A ∈ so(n)} ∫|∇v − A|² / ∫|sym∇v|²`.
    pub constant: f64,
    pub n_dofs: usize,
    pub iterations: usize,
}

/// Classical Korn constant of a planar domain (`n = 2`).
pub fn classical_korn_constant(mesh: &TriMesh) -> Result<ClassicalKorn> {
    mesh.validate()?;
    let nodes: Vec<[f64; 3]> = mesh.vertices.iter().map(|p| [p[0], p[1], 0.0]).collect();
    classical_korn(&mesh::triangle_elements(mesh), &nodes, 2)
}

/// Classical Korn constant of a prism-meshed solid (`n = 3`).
pub fn classical_korn_constant_3d(mesh: &PrismMesh) -> Result<ClassicalKorn> {
    classical_korn(&mesh.elements()?, &mesh.nodes, 3)
}

fn classical_korn(elements: &[Element], nodes: &[[f64; 3]], dim: usize) -> Result<ClassicalKorn> {
    if nodes.len() < dim + 1 {
        return Err(Error::DegenerateGeometry("too few nodes".into()));
    }
    let axes: Vec<[f64; 3]> = (0..dim).map(unit).collect();
    let mut dirs: Vec<Vec<[f64; 3]>> = vec![axes; nodes.len()];
    // rigid motions are removed by pinning: all of node p0, the components
    // of p1 transverse to p1 − p0 and (3D) the out-of-plane component of p2
    let x0 = nodes[0];
    let far = |f: &dyn Fn([f64; 3]) -> f64| {
        (0..nodes.len()).max_by(|&a, &b| f(nodes[a]).partial_cmp(&f(nodes[b])).unwrap()).unwrap()
    };
    let p1 = far(&|x| mesh::norm3(mesh::sub(x, x0)));
    let d = mesh::sub(nodes[p1], x0);
    let scale = mesh::norm3(d);
    if !(scale > 0.0) {
        return Err(Error::DegenerateGeometry("all nodes coincide".into()));
    }
    let d = normalize(d);
    dirs[0].clear();
    dirs[p1] = vec![d];
    if dim == 3 {
        let p2 = far(&|x| mesh::norm3(mesh::cross(mesh::sub(x, x0), d)));
        let off = mesh::cross(d, mesh::sub(nodes[p2], x0));
        if !(mesh::norm3(off) > 1e-9 * scale * scale) {
            return Err(Error::DegenerateGeometry("all nodes are collinear".into()));
        }
        let normal = normalize(off);
        dirs[p2] = vec![d, mesh::cross(normal, d)];
    }
    let dofs = DofMap::new(&dirs);
    let forms = assemble(elements, &dofs);
    let volume: f64 = elements.iter().flat_map(|e| e.points.iter().map(|p| p.weight)).sum();
    let pairs: &[(usize, usize)] = if dim == 2 { &[(0, 1)] } else { &[(0, 1), (0, 2), (1, 2)] };
    // ℓ_ij(v) = ∫ ½(∂_j v_i − ∂_i v_j)
    let mut ell = vec![vec![0.0; dofs.n_dofs]; pairs.len()];
    for e in elements {
        for p in &e.points {
            for (a, &n) in e.nodes.iter().enumerate() {
                for &(k, b) in &dofs.node[n] {
                    for (q, &(i, j)) in pairs.iter().enumerate() {
                        ell[q][k] += p.weight * 0.5 * (b[i] * p.grad[a][j] - b[j] * p.grad[a][i]);
                    }
                }
            }
        }
    }
    // min over A of ∫|∇v − A|² = ∫|∇v|² − (2/|Ω|) Σ_{i<j} ℓ_ij(v)²
    let numerator = |x: &[f64]| {
        let mut y = forms.grad.mul_vec(x);
        for l in &ell {
            axpy(-2.0 * dot(l, x) / volume, l, &mut y);
        }
        y
    };
    let factor = SkylineCholesky::factor(&forms.sym)?;
    let e = max_ratio(&numerator, &forms.sym, &factor, None)?;
    Ok(ClassicalKorn { constant: e.value, n_dofs: dofs.n_dofs, iterations: e.iterations })
}

// ---------------------------------------------------------------------------
// channel meshes and thin-channel constants

/// Section boundary vertices, section rings and axial cells of a channel mesh.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KornResolution {
    pub n_boundary: usize,
    pub n_rings: usize,
    pub n_cells_z: usize,
}

impl Default for KornResolution {
    fn default() -> Self {
        Self { n_boundary: 16, n_rings: 3, n_cells_z: 24 }
    }
}

impl KornResolution {
    /// Every count multiplied by `3/2` (rounded up).
    pub fn refined(&self) -> Self {
        let up = |n: usize| (3 * n).div_ceil(2);
        Self { n_boundary: up(self.n_boundary), n_rings: up(self.n_rings), n_cells_z: up(self.n_cells_z) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeKind {
    Interior,
    Lateral,
    Cap,
}

/// Wedge mesh of `Ω_ε` with the admissible directions of each node under
/// `v·n = 0` on the lateral wall and `v = 0` on the caps.
#[derive(Debug, Clone)]
pub struct ChannelMesh {
    pub prism: PrismMesh,
    /// Mesh of the unscaled section `ω_h(0)`.
    pub unit_section: TriMesh,
    pub epsilon: f64,
    pub resolution: KornResolution,
    pub kind: Vec<NodeKind>,
    directions: Vec<Vec<[f64; 3]>>,
}

impl ChannelMesh {
    pub fn new(geom: &ChannelGeometry, res: KornResolution) -> Result<Self> {
        if res.n_boundary < 3 || res.n_rings < 1 || res.n_cells_z < 2 {
            return Err(Error::Domain(
                "a channel mesh needs at least 3 boundary vertices, one ring and two axial cells".into(),
            ));
        }
        let eps = geom.epsilon;
        let nz = res.n_cells_z;
        let z_levels: Vec<f64> = (0..=nz).map(|k| k as f64 / nz as f64).collect();
        let sections = z_levels
            .iter()
            .map(|&z| {
                let poly = geom.section_polygon(z, res.n_boundary);
                TriMesh::star_shaped(&poly, polygon::centroid(&poly), res.n_rings)
            })
            .collect::<Result<Vec<_>>>()?;
        if sections.iter().any(|s| s.triangles != sections[0].triangles) {
            return Err(Error::DegenerateGeometry("section meshes along the channel do not share one topology".into()));
        }
        let unit_section = sections[0].clone();
        let prism = PrismMesh::extrude(unit_section.scaled(eps), z_levels, |l, i| {
            let p = sections[l].vertices[i];
            [eps * p[0], eps * p[1]]
        })?;
        let faces = prism.lateral_face_normals();
        let ns = prism.n_section();
        let mut kind = Vec::with_capacity(prism.n_nodes());
        let mut directions = Vec::with_capacity(prism.n_nodes());
        for (node, f) in faces.iter().enumerate() {
            let level = node / ns;
            if level == 0 || level == nz {
                kind.push(NodeKind::Cap);
                directions.push(Vec::new());
            } else if f.is_empty() {
                kind.push(NodeKind::Interior);
                directions.push((0..3).map(unit).collect());
            } else {
                kind.push(NodeKind::Lateral);
                directions.push(tangent_directions(f));
            }
        }
        Ok(Self { prism, unit_section, epsilon: eps, resolution: res, kind, directions })
    }

    /// True when every level repeats the horizontal node positions of the
    /// first one.
    pub fn is_straight(&self) -> bool {
        let ns = self.prism.n_section();
        let tol = 1e-12 * self.epsilon;
        (0..self.prism.n_nodes()).all(|n| {
            let (a, b) = (self.prism.nodes[n], self.prism.nodes[n % ns]);
            (a[0] - b[0]).abs() <= tol && (a[1] - b[1]).abs() <= tol
        })
    }
}

/// `∫|∇v|²`, `∫|sym∇v|²` and `∫|v|²` of a discrete field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Energies {
    pub grad: f64,
    pub sym: f64,
    pub mass: f64,
}

/// Assembled constrained pencils of one channel mesh.
pub struct KornProblem {
    pub mesh: ChannelMesh,
    elements: Vec<Element>,
    dofs: DofMap,
    forms: Forms,
    factor: SkylineCholesky,
    centre: Box<dyn Fn(f64) -> Point + Send + Sync>,
}

impl KornProblem {
    pub fn new(geom: &ChannelGeometry, res: KornResolution) -> Result<Self> {
        let mesh = ChannelMesh::new(geom, res)?;
        let elements = mesh.prism.elements()?;
        let dofs = DofMap::new(&mesh.directions);
        let forms = assemble(&elements, &dofs);
        let factor = SkylineCholesky::factor(&forms.sym)?;
        let eps = geom.epsilon;
        // rotation centre of kernel fields: the scaled centreline, or the
        // section centroid for tabulated channels
        let centre: Box<dyn Fn(f64) -> Point + Send + Sync> = match geom.centerline_profiles() {
            Some(c) => {
                let c = c.clone();
                Box::new(move |z| [eps * c[0].value(z), eps * c[1].value(z)])
            }
            None => {
                let g = geom.clone();
                let m = res.n_boundary;
                Box::new(move |z| {
                    let p = polygon::centroid(&g.section_polygon(z, m));
                    [eps * p[0], eps * p[1]]
                })
            }
        };
        Ok(Self { mesh, elements, dofs, forms, factor, centre })
    }

    pub fn n_dofs(&self) -> usize {
        self.dofs.n_dofs
    }

    pub fn epsilon(&self) -> f64 {
        self.mesh.epsilon
    }

    pub fn volume(&self) -> f64 {
        self.elements.iter().flat_map(|e| e.points.iter().map(|p| p.weight)).sum()
    }

    /// `max ∫|∇v|² / ∫|sym∇v|²` over the constrained space.
    pub fn ko1(&self) -> Result<EigenPair> {
        max_ratio(&|x| self.forms.grad.mul_vec(x), &self.forms.sym, &self.factor, None)
    }

    /// `max ∫|v|² / ∫|sym∇v|²` over the constrained space.
    pub fn ko2(&self) -> Result<EigenPair> {
        max_ratio(&|x| self.forms.mass.mul_vec(x), &self.forms.sym, &self.factor, None)
    }

    /// Nodal interpolant projected onto the admissible directions.
    pub fn interpolate(&self, f: impl Fn([f64; 3]) -> [f64; 3]) -> Vec<f64> {
        let values: Vec<[f64; 3]> = self.mesh.prism.nodes.iter().map(|&x| f(x)).collect();
        self.dofs.restrict(&values)
    }

    /// Nodal vectors of a discrete field.
    pub fn field(&self, x: &[f64]) -> Vec<[f64; 3]> {
        self.dofs.expand(x)
    }

    pub fn energies(&self, x: &[f64]) -> Energies {
        Energies {
            grad: self.forms.grad.quadratic_form(x),
            sym: self.forms.sym.quadratic_form(x),
            mass: self.forms.mass.quadratic_form(x),
        }
    }

    /// Interpolant of the rotation field `v_Q = (θ(z) J (x_h − c(z)), 0)`.
    pub fn kernel_field(&self, q: &KernelElement) -> Vec<f64> {
        self.interpolate(|x| {
            let (theta, _) = q.angle(x[2]);
            let c = (self.centre)(x[2]);
            let y = [x[0] - c[0], x[1] - c[1]];
            [-theta * y[1], theta * y[0], 0.0]
        })
    }

    fn kernel_constraints(&self, basis: &[KernelElement]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>, DMatrix<f64>)> {
        let v: Vec<Vec<f64>> = basis.iter().map(|q| self.kernel_field(q)).collect();
        let c: Vec<Vec<f64>> = v.iter().map(|x| self.forms.grad.mul_vec(x)).collect();
        let k = v.len();
        let gram = DMatrix::from_fn(k, k, |i, j| dot(&v[i], &c[j]));
        let scale: Vec<f64> = (0..k).map(|i| gram[(i, i)].max(0.0).sqrt()).collect();
        if scale.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::IllPosedConstraint("a kernel element has no gradient on this mesh".into()));
        }
        let normalized = DMatrix::from_fn(k, k, |i, j| gram[(i, j)] / (scale[i] * scale[j]));
        let smallest = SymmetricEigen::new(normalized).eigenvalues.min();
        if !(smallest > 1e-10) {
            return Err(Error::IllPosedConstraint(format!(
                "kernel basis is not linearly independent in the gradient inner product (smallest normalized Gram eigenvalue {smallest:.3e})"
            )));
        }
        Ok((v, c, gram))
    }

    /// Constant of the kernel-orthogonal problem: `max ∫|∇v|²/∫|sym∇v|²`
    /// over fields with `∫∇v : ∇v_Q = 0` for every basis element.
    pub fn constrained_ko1(&self, basis: &[KernelElement]) -> Result<EigenPair> {
        if basis.is_empty() {
            return self.ko1();
        }
        let (_, c, _) = self.kernel_constraints(basis)?;
        let k = c.len();
        let w: Vec<Vec<f64>> = c.iter().map(|ci| self.factor.solve(ci)).collect();
        let kmat = DMatrix::from_fn(k, k, |i, j| dot(&c[i], &w[j]));
        let chol = kmat
            .cholesky()
            .ok_or_else(|| Error::IllPosedConstraint("constraint matrix is not positive definite".into()))?;
        // D-orthogonal projector onto {x : Cᵀx = 0}
        let project = move |x: &mut [f64]| {
            let r = DVector::from_fn(k, |i, _| dot(&c[i], x));
            let y = chol.solve(&r);
            for i in 0..k {
                axpy(-y[i], &w[i], x);
            }
        };
        max_ratio(&|x| self.forms.grad.mul_vec(x), &self.forms.sym, &self.factor, Some(&project))
    }

    /// Cosine of the angle, in the gradient inner product, between `x` and
    /// the span of the kernel fields: the smallest `α` for which `x` meets
    /// the angle condition against that span is this value.
    pub fn kernel_alignment(&self, x: &[f64], basis: &[KernelElement]) -> Result<f64> {
        let (_, c, gram) = self.kernel_constraints(basis)?;
        let a = DVector::from_iterator(c.len(), c.iter().map(|ci| dot(ci, x)));
        let chol = gram
            .cholesky()
            .ok_or_else(|| Error::IllPosedConstraint("kernel Gram matrix is not positive definite".into()))?;
        let proj = a.dot(&chol.solve(&a));
        let norm2 = self.forms.grad.quadratic_form(x);
        if !(norm2 > 0.0) {
            return Err(Error::DegenerateInput("field has no gradient".into()));
        }
        Ok((proj / norm2).max(0.0).sqrt().min(1.0))
    }

    /// Upper bound for `∫|v|²/∫|sym∇v|²` assembled from the axial Poincaré
    /// inequality for `v_z` (constant `1/π²`) and the scaled tangent Poincaré
    /// inequality for `v_h` on each section (constant `ε²·section_poincare`):
    /// `[π⁻²∫(∂_z v_z)² + ε²P∫|∇_h v_h|²] / ∫|sym∇v|²`. Straight channels only.
    pub fn composite_ko2_bound(&self, x: &[f64], section_poincare: f64) -> Result<f64> {
        if !self.mesh.is_straight() {
            return Err(Error::UnsupportedKind("the composite bound needs a channel with constant sections".into()));
        }
        let values = self.field(x);
        let (mut axial, mut horizontal, mut sym) = (0.0, 0.0, 0.0);
        for e in &self.elements {
            for p in &e.points {
                let g = gradient_at(e, p, &values);
                axial += p.weight * g[2][2] * g[2][2];
                horizontal += p.weight * (g[0][0] * g[0][0] + g[0][1] * g[0][1] + g[1][0] * g[1][0] + g[1][1] * g[1][1]);
                sym += p.weight * sym_norm2(&g);
            }
        }
        if !(sym > 0.0) {
            return Err(Error::DegenerateInput("field has no symmetric gradient".into()));
        }
        let eps = self.epsilon();
        Ok((axial / (PI * PI) + eps * eps * section_poincare * horizontal) / sym)
    }
}

/// Thin-channel Korn constants with their extremal fields.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KornEstimate {
    pub epsilon: f64,
    /// `max ∫|∇v|² / ∫|sym∇v|²`.
    pub constant_ko1: f64,
    /// `max ∫|v|² / ∫|sym∇v|²`.
    pub constant_ko2: f64,
    pub resolution: KornResolution,
    pub n_dofs: usize,
    pub ko1_field: Vec<[f64; 3]>,
    pub ko2_field: Vec<[f64; 3]>,
}

pub fn thin_korn_constants(geom: &ChannelGeometry, res: KornResolution) -> Result<KornEstimate> {
    let problem = KornProblem::new(geom, res)?;
    let k1 = problem.ko1()?;
    let k2 = problem.ko2()?;
    Ok(KornEstimate {
        epsilon: geom.epsilon,
        constant_ko1: k1.value,
        constant_ko2: k2.value,
        resolution: res,
        n_dofs: problem.n_dofs(),
        ko1_field: problem.field(&k1.vector),
        ko2_field: problem.field(&k2.vector),
    })
}

// ---------------------------------------------------------------------------
// kernel elements and the blow-up example

/// Rotation angle `θ(z)` of a kernel element `Q(z) = θ(z) J`, vanishing at
/// both caps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelElement {
    /// Closed-form angle profile.
    Profile(Profile),
    /// Piecewise-linear angle on a uniform knot grid of `[0, 1]`.
    Spline(Vec<f64>),
}

impl KernelElement {
    pub fn profile(p: Profile) -> Result<Self> {
        if p.value(0.0).abs() > 1e-12 || p.value(1.0).abs() > 1e-12 {
            return Err(Error::Domain("kernel angle must vanish at both caps".into()));
        }
        Ok(Self::Profile(p))
    }

    pub fn spline(values: Vec<f64>) -> Result<Self> {
        if values.len() < 3 {
            return Err(Error::Domain("a kernel spline needs at least three knots".into()));
        }
        if values[0] != 0.0 || values[values.len() - 1] != 0.0 {
            return Err(Error::Domain("kernel angle must vanish at both caps".into()));
        }
        Ok(Self::Spline(values))
    }

    /// Hat function at interior knot `i` of `n_intervals` uniform intervals.
    pub fn hat(i: usize, n_intervals: usize) -> Result<Self> {
        if i == 0 || i >= n_intervals {
            return Err(Error::Domain(format!("hat index {i} is not an interior knot of {n_intervals} intervals")));
        }
        let mut v = vec![0.0; n_intervals + 1];
        v[i] = 1.0;
        Self::spline(v)
    }

    /// All interior hats of `n_intervals` uniform intervals.
    pub fn hat_basis(n_intervals: usize) -> Result<Vec<Self>> {
        (1..n_intervals).map(|i| Self::hat(i, n_intervals)).collect()
    }

    /// `(θ(z), θ'(z))`.
    pub fn angle(&self, z: f64) -> (f64, f64) {
        match self {
            Self::Profile(p) => {
                let (v, d, _) = p.eval(z);
                (v, d)
            }
            Self::Spline(v) => {
                let n = v.len() - 1;
                let s = (z.clamp(0.0, 1.0) * n as f64).min(n as f64 - 1e-12);
                let k = s.floor() as usize;
                let t = s - k as f64;
                (v[k] + t * (v[k + 1] - v[k]), (v[k + 1] - v[k]) * n as f64)
            }
        }
    }

    fn vanishes(&self) -> bool {
        match self {
            Self::Profile(_) => (0..=1000).all(|k| {
                let (v, d) = self.angle(k as f64 / 1000.0);
                v == 0.0 && d == 0.0
            }),
            Self::Spline(v) => v.iter().all(|&x| x == 0.0),
        }
    }
}

/// Quadrature data of the blow-up field `v = (Q(z)(x_h − εX(z)), 0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlowupField {
    pub epsilon: f64,
    /// Mean of `|∇v|²` over `Ω_ε`.
    pub mean_grad: f64,
    /// Mean of `|sym∇v|²` over `Ω_ε`.
    pub mean_sym: f64,
    pub ratio_sym_over_grad: f64,
    /// `mean_grad / mean_sym`, a certified lower bound for the ko1 constant.
    pub lower_bound: f64,
}

/// Value of the blow-up field at `x = (x_h, z)`.
pub fn blowup_value(q: &KernelElement, geom: &ChannelGeometry, x: [f64; 3]) -> Result<[f64; 3]> {
    let centre = geom
        .centerline_profiles()
        .ok_or_else(|| Error::UnsupportedKind("the blow-up field needs circular cross sections".into()))?;
    let eps = geom.epsilon;
    let (theta, _) = q.angle(x[2]);
    let y = [x[0] - eps * centre[0].value(x[2]), x[1] - eps * centre[1].value(x[2])];
    Ok([-theta * y[1], theta * y[0], 0.0])
}

/// Means of `|∇v|²` and `|sym∇v|²` of the blow-up field by quadrature
/// (Gauss in `z` and radius, trapezoidal in angle).
pub fn example_blowup_field(q: &KernelElement, geom: &ChannelGeometry) -> Result<BlowupField> {
    let (centre, radius) = match (geom.centerline_profiles(), geom.radius_profile()) {
        (Some(c), Some(r)) => (c, r),
        _ => return Err(Error::UnsupportedKind("the blow-up field needs circular cross sections".into())),
    };
    if q.vanishes() {
        return Err(Error::DegenerateInput("kernel angle vanishes identically".into()));
    }
    let eps = geom.epsilon;
    let gz = GaussLegendre::new(8);
    let gr = GaussLegendre::new(6);
    let n_panels = 64;
    let n_phi = 16;
    let (mut vol, mut grad, mut sym) = (0.0, 0.0, 0.0);
    for k in 0..n_panels {
        let (a, b) = (k as f64 / n_panels as f64, (k + 1) as f64 / n_panels as f64);
        for (z, wz) in gz.on_interval(a, b) {
            let (theta, dtheta) = q.angle(z);
            let r = eps * radius.value(z);
            let dx = [eps * centre[0].eval(z).1, eps * centre[1].eval(z).1];
            for (rho, wr) in gr.on_interval(0.0, r) {
                for j in 0..n_phi {
                    let phi = 2.0 * PI * j as f64 / n_phi as f64;
                    let w = wz * wr * rho * 2.0 * PI / n_phi as f64;
                    let y = [rho * phi.cos(), rho * phi.sin()];
                    // ∂_z v_h = J(θ' y − θ ε X'); J is an isometry
                    let s = [dtheta * y[0] - theta * dx[0], dtheta * y[1] - theta * dx[1]];
                    let s2 = s[0] * s[0] + s[1] * s[1];
                    vol += w;
                    grad += w * (2.0 * theta * theta + s2);
                    sym += w * 0.5 * s2;
                }
            }
        }
    }
    let (mean_grad, mean_sym) = (grad / vol, sym / vol);
    Ok(BlowupField {
        epsilon: eps,
        mean_grad,
        mean_sym,
        ratio_sym_over_grad: mean_sym / mean_grad,
        lower_bound: mean_grad / mean_sym,
    })
}

// ---------------------------------------------------------------------------
// approximation by a z-dependent rotation

/// Mollified cross-sectional mean of `skew∇v` and the two residual ratios
/// of the approximation estimates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApproxSkewField {
    pub epsilon: f64,
    pub z: Vec<f64>,
    /// `(A_01, A_02, A_12)` of the skew matrix at each `z`.
    pub skew: Vec<[f64; 3]>,
    /// `∫|∇v − A(z)|² / ∫|sym∇v|²`; `None` when `sym∇v ≡ 0`.
    pub ap1_ratio: Option<f64>,
    /// `ε²(∫|A|² + ∫|A'|²) / mean(|sym∇v|²)`; `None` when `sym∇v ≡ 0`.
    pub ap2_ratio: Option<f64>,
    /// `∫|∇v|² / ∫|sym∇v|²` for comparison.
    pub grad_over_sym: Option<f64>,
}

fn bump(s: f64) -> f64 {
    if s.abs() < 0.5 {
        (-1.0 / (1.0 - 4.0 * s * s)).exp()
    } else {
        0.0
    }
}

fn bump_slope(s: f64) -> f64 {
    if s.abs() < 0.5 {
        let q = 1.0 - 4.0 * s * s;
        bump(s) * (-8.0 * s / (q * q))
    } else {
        0.0
    }
}

fn skew_components(g: &[[f64; 3]; 3]) -> [f64; 3] {
    [0.5 * (g[0][1] - g[1][0]), 0.5 * (g[0][2] - g[2][0]), 0.5 * (g[1][2] - g[2][1])]
}

/// Builds `A = κ_ε * Ã` with `Ã(z)` the section mean of `skew∇v` (zero
/// outside `[0, 1]`) and `κ` the standard bump on `(−½, ½)`, and evaluates
/// the approximation residuals.
pub fn approx_skew_field(problem: &KornProblem, values: &[[f64; 3]]) -> Result<ApproxSkewField> {
    let prism = &problem.mesh.prism;
    if values.len() != prism.n_nodes() {
        return Err(Error::Domain("field and mesh sizes differ".into()));
    }
    let eps = problem.epsilon();
    let n_tri = prism.section.triangles.len();
    let n_layers = prism.n_levels() - 1;
    // section means at the two Gauss levels of each layer
    let mut acc = vec![[[0.0; 3]; 2]; n_layers];
    let mut wsum = vec![[0.0; 2]; n_layers];
    let (mut grad_int, mut sym_int, mut vol) = (0.0, 0.0, 0.0);
    for (ei, e) in problem.elements.iter().enumerate() {
        let layer = ei / n_tri;
        for (pi, p) in e.points.iter().enumerate() {
            let g = gradient_at(e, p, values);
            let s = skew_components(&g);
            let level = pi % 2;
            for c in 0..3 {
                acc[layer][level][c] += p.weight * s[c];
            }
            wsum[layer][level] += p.weight;
            grad_int += p.weight * frobenius2(&g);
            sym_int += p.weight * sym_norm2(&g);
            vol += p.weight;
        }
    }
    let gl2 = GaussLegendre::new(2);
    let zq: Vec<[f64; 2]> = (0..n_layers)
        .map(|l| {
            let pts: Vec<f64> = gl2.on_interval(prism.z_levels[l], prism.z_levels[l + 1]).map(|(z, _)| z).collect();
            [pts[0], pts[1]]
        })
        .collect();
    let mean: Vec<[[f64; 3]; 2]> = (0..n_layers)
        .map(|l| {
            let mut m = [[0.0; 3]; 2];
            for k in 0..2 {
                for c in 0..3 {
                    m[k][c] = acc[l][k][c] / wsum[l][k];
                }
            }
            m
        })
        .collect();
    // Ã is linear within each layer
    let a_tilde = |l: usize, z: f64| -> [f64; 3] {
        let t = (z - zq[l][0]) / (zq[l][1] - zq[l][0]);
        [0, 1, 2].map(|c| mean[l][0][c] + t * (mean[l][1][c] - mean[l][0][c]))
    };
    let norm = 1.0 / quadrature::adaptive(bump, -0.5, 0.5, 1e-14);
    let g8 = GaussLegendre::new(8);
    let mollify = |z: f64| -> ([f64; 3], [f64; 3]) {
        let (mut a, mut da) = ([0.0; 3], [0.0; 3]);
        for l in 0..n_layers {
            let (lo, hi) = (prism.z_levels[l], prism.z_levels[l + 1]);
            if hi <= z - 0.5 * eps || lo >= z + 0.5 * eps {
                continue;
            }
            for (zp, w) in g8.on_interval(lo.max(z - 0.5 * eps), hi.min(z + 0.5 * eps)) {
                let s = (z - zp) / eps;
                let k = norm * bump(s) / eps;
                let dk = norm * bump_slope(s) / (eps * eps);
                let at = a_tilde(l, zp);
                for c in 0..3 {
                    a[c] += w * k * at[c];
                    da[c] += w * dk * at[c];
                }
            }
        }
        (a, da)
    };
    let skew_matrix = |a: [f64; 3]| -> [[f64; 3]; 3] { [[0.0, a[0], a[1]], [-a[0], 0.0, a[2]], [-a[1], -a[2], 0.0]] };
    // ap1 residual with A evaluated at the quadrature levels
    let a_at: Vec<[[f64; 3]; 3]> =
        zq.iter().flat_map(|z| [skew_matrix(mollify(z[0]).0), skew_matrix(mollify(z[1]).0)]).collect();
    let mut ap1 = 0.0;
    for (ei, e) in problem.elements.iter().enumerate() {
        let layer = ei / n_tri;
        for (pi, p) in e.points.iter().enumerate() {
            let g = gradient_at(e, p, values);
            let a = &a_at[2 * layer + pi % 2];
            let mut d = g;
            for i in 0..3 {
                for j in 0..3 {
                    d[i][j] -= a[i][j];
                }
            }
            ap1 += p.weight * frobenius2(&d);
        }
    }
    // ap2 integrals over the support [−ε/2, 1 + ε/2] (trapezoidal, zero ends)
    let n_grid = ((1.0 + 2.0 * eps) / (eps / 40.0).min(0.25 / n_layers as f64)).ceil() as usize;
    let z: Vec<f64> = (0..=n_grid).map(|k| -eps + (1.0 + 2.0 * eps) * k as f64 / n_grid as f64).collect();
    let dz = (1.0 + 2.0 * eps) / n_grid as f64;
    let mut skew = Vec::with_capacity(z.len());
    let (mut a2, mut da2) = (0.0, 0.0);
    for &zk in &z {
        let (a, da) = mollify(zk);
        // |A|² = 2 Σ a_ij²
        a2 += dz * 2.0 * (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]);
        da2 += dz * 2.0 * (da[0] * da[0] + da[1] * da[1] + da[2] * da[2]);
        skew.push(a);
    }
    let (ap1_ratio, ap2_ratio, grad_over_sym) = if sym_int > 0.0 {
        (Some(ap1 / sym_int), Some(eps * eps * (a2 + da2) / (sym_int / vol)), Some(grad_int / sym_int))
    } else {
        (None, None, None)
    };
    Ok(ApproxSkewField { epsilon: eps, z, skew, ap1_ratio, ap2_ratio, grad_over_sym })
}

// ---------------------------------------------------------------------------
// cross-section inequalities

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoincareEstimate {
    /// `max ∫|v|² / ∫|∇v|²` over fields tangent to the boundary.
    pub constant: f64,
    pub n_dofs: usize,
    pub iterations: usize,
}

/// Poincaré constant for planar vector fields with `v·n = 0` at boundary
/// nodes (corner nodes are fixed).
pub fn tangent_poincare_constant(mesh: &TriMesh) -> Result<PoincareEstimate> {
    mesh.validate()?;
    let mut dirs: Vec<Vec<[f64; 3]>> = vec![vec![unit(0), unit(1)]; mesh.n_nodes()];
    let nb = mesh.boundary_edges.len();
    for (k, &node) in mesh.boundary_nodes.iter().enumerate() {
        let (e0, e1) = (&mesh.boundary_edges[(k + nb - 1) % nb], &mesh.boundary_edges[k]);
        let cos = e0.normal[0] * e1.normal[0] + e0.normal[1] * e1.normal[1];
        dirs[node] = if cos.clamp(-1.0, 1.0).acos() > CORNER_ANGLE {
            Vec::new()
        } else {
            let s = [e0.length * e0.normal[0] + e1.length * e1.normal[0], e0.length * e0.normal[1] + e1.length * e1.normal[1]];
            let l = (s[0] * s[0] + s[1] * s[1]).sqrt();
            vec![[-s[1] / l, s[0] / l, 0.0]]
        };
    }
    let dofs = DofMap::new(&dirs);
    let forms = assemble(&mesh::triangle_elements(mesh), &dofs);
    let factor = SkylineCholesky::factor(&forms.grad)?;
    let e = max_ratio(&|x| forms.mass.mul_vec(x), &forms.grad, &factor, None)?;
    Ok(PoincareEstimate { constant: e.value, n_dofs: dofs.n_dofs, iterations: e.iterations })
}

/// Boundary moment matrix `∮ n ⊗ n ds` (exact per side for polygons,
/// 2048-point trapezoidal rule for smooth shapes).
pub fn boundary_moment(shape: &SectionShape) -> Result<[[f64; 2]; 2]> {
    let valid = match shape {
        SectionShape::Disk { radius } => *radius > 0.0,
        SectionShape::Ellipse { a, b } => *a > 0.0 && *b > 0.0,
        SectionShape::Square { side } => *side > 0.0,
        SectionShape::Polygon { vertices } => vertices.len() >= 3 && polygon::perimeter(vertices) > 0.0,
    };
    if !valid {
        return Err(Error::Domain("section boundary has zero length".into()));
    }
    let mut m = [[0.0; 2]; 2];
    for (_, n, w) in shape.boundary_quadrature(2048) {
        if w == 0.0 {
            continue;
        }
        for r in 0..2 {
            for c in 0..2 {
                m[r][c] += w * n[r] * n[c];
            }
        }
    }
    Ok(m)
}

/// `min_{|a|=1} ∮ (a·n)² ds`, the smallest eigenvalue of the boundary moment.
pub fn normal_trace_bound(shape: &SectionShape) -> Result<f64> {
    let m = boundary_moment(shape)?;
    let (tr, det) = (m[0][0] + m[1][1], m[0][0] * m[1][1] - m[0][1] * m[1][0]);
    let disc = (0.25 * tr * tr - det).max(0.0).sqrt();
    Ok(0.5 * tr - disc)
}

// ---------------------------------------------------------------------------
// ε sweeps

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KornSweepOptions {
    pub resolution: KornResolution,
    /// Finer mesh for a self-convergence error bar.
    pub refined: Option<KornResolution>,
    pub ko2: bool,
    /// Knot intervals of the hat basis for the kernel-orthogonal constant.
    pub kernel_intervals: Option<usize>,
}

impl Default for KornSweepOptions {
    fn default() -> Self {
        Self { resolution: KornResolution::default(), refined: None, ko2: true, kernel_intervals: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KornSweepRow {
    pub epsilon: f64,
    pub n_dofs: usize,
    pub ko1: f64,
    pub ko2: Option<f64>,
    /// Relative change of ko1 and ko2 under refinement.
    pub ko1_errbar: Option<f64>,
    pub ko2_errbar: Option<f64>,
    /// Certified lower bound for ko1 from the blow-up field `sin(πz) J x_h`.
    pub blowup_lower_bound: Option<f64>,
    /// Kernel-orthogonal ko1 constant.
    pub constrained: Option<f64>,
    /// Composite Poincaré bound evaluated on the ko2 extremal field.
    pub composite_ko2_bound: Option<f64>,
    /// Tangent Poincaré constant of the scaled section `ε ω_h(0)`.
    pub section_poincare: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KornSweepReport {
    pub rows: Vec<KornSweepRow>,
    /// Power-law fit of ko1 against ε.
    pub ko1_fit: Option<PowerFit>,
    /// `max/min` of ko2 over the sweep.
    pub ko2_variation: Option<f64>,
    /// `max/min` of the kernel-orthogonal constant over the sweep.
    pub constrained_variation: Option<f64>,
}

fn variation(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let hi = v.iter().copied().fold(f64::MIN, f64::max);
    let lo = v.iter().copied().fold(f64::MAX, f64::min);
    Some(hi / lo)
}

fn sweep_row(geom: &ChannelGeometry, eps: f64, opts: &KornSweepOptions) -> Result<KornSweepRow> {
    let g = geom.with_epsilon(eps)?;
    let problem = KornProblem::new(&g, opts.resolution)?;
    let k1 = problem.ko1()?;
    let k2 = if opts.ko2 { Some(problem.ko2()?) } else { None };
    let unit_p = tangent_poincare_constant(&problem.mesh.unit_section)?.constant;
    let blowup_lower_bound = match g.centerline_profiles() {
        Some(_) => {
            let q = KernelElement::profile(Profile::constant(0.0).with_sin(&[1.0]))?;
            Some(example_blowup_field(&q, &g)?.lower_bound)
        }
        None => None,
    };
    let constrained = match opts.kernel_intervals {
        Some(n) => Some(problem.constrained_ko1(&KernelElement::hat_basis(n)?)?.value),
        None => None,
    };
    let composite_ko2_bound = match &k2 {
        Some(e) if problem.mesh.is_straight() => Some(problem.composite_ko2_bound(&e.vector, unit_p)?),
        _ => None,
    };
    let (mut ko1_errbar, mut ko2_errbar) = (None, None);
    if let Some(fine) = opts.refined {
        let pf = KornProblem::new(&g, fine)?;
        let f1 = pf.ko1()?.value;
        ko1_errbar = Some((f1 - k1.value).abs() / f1);
        if let Some(e) = &k2 {
            let f2 = pf.ko2()?.value;
            ko2_errbar = Some((f2 - e.value).abs() / f2);
        }
    }
    Ok(KornSweepRow {
        epsilon: eps,
        n_dofs: problem.n_dofs(),
        ko1: k1.value,
        ko2: k2.map(|e| e.value),
        ko1_errbar,
        ko2_errbar,
        blowup_lower_bound,
        constrained,
        composite_ko2_bound,
        section_poincare: eps * eps * unit_p,
    })
}

/// Thin-channel constants of `geom` rescaled to each `ε`; cells run in
/// parallel.
pub fn korn_sweep(geom: &ChannelGeometry, epsilons: &[f64], opts: &KornSweepOptions) -> Result<KornSweepReport> {
    if epsilons.iter().any(|&e| !(e > 0.0)) {
        return Err(Error::Domain("epsilon values must be positive".into()));
    }
    let rows = epsilons.par_iter().map(|&e| sweep_row(geom, e, opts)).collect::<Result<Vec<_>>>()?;
    let eps: Vec<f64> = rows.iter().map(|r| r.epsilon).collect();
    let ko1: Vec<f64> = rows.iter().map(|r| r.ko1).collect();
    let ko1_fit = if rows.len() >= 2 { Some(fit::power_law(&eps, &ko1)?) } else { None };
    let ko2: Vec<f64> = rows.iter().filter_map(|r| r.ko2).collect();
    let constrained: Vec<f64> = rows.iter().filter_map(|r| r.constrained).collect();
    Ok(KornSweepReport { ko1_fit, ko2_variation: variation(&ko2), constrained_variation: variation(&constrained), rows })
}

// ---------------------------------------------------------------------------
// optimal Korn experiment

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimalKornReport {
    pub epsilon: f64,
    pub alpha: f64,
    /// ko1 over the full constrained space.
    pub unconstrained: f64,
    /// ko1 over fields orthogonal to the kernel span.
    pub constrained: f64,
    /// Alignment of the blow-up field `sin(πz) J x_h` with the kernel span.
    pub blowup_alignment: Option<f64>,
    /// Alignment of the unconstrained extremal field with the kernel span.
    pub extremal_alignment: f64,
}

/// Compares the unconstrained constant with the kernel-orthogonal one.
/// Only the orthogonal case `α = 0` of the angle condition is computed.
pub fn optimal_korn_experiment(problem: &KornProblem, basis: &[KernelElement], alpha: f64) -> Result<OptimalKornReport> {
    if alpha != 0.0 {
        return Err(Error::UnsupportedKind(format!(
            "only the kernel-orthogonal case alpha = 0 is implemented, got alpha = {alpha}"
        )));
    }
    if basis.is_empty() {
        return Err(Error::IllPosedConstraint("empty kernel basis".into()));
    }
    let free = problem.ko1()?;
    let constrained = problem.constrained_ko1(basis)?;
    let extremal_alignment = problem.kernel_alignment(&free.vector, basis)?;
    let blowup_alignment = match problem.mesh.is_straight() {
        true => {
            let q = KernelElement::profile(Profile::constant(0.0).with_sin(&[1.0]))?;
            Some(problem.kernel_alignment(&problem.kernel_field(&q), basis)?)
        }
        false => None,
    };
    Ok(OptimalKornReport {
        epsilon: problem.epsilon(),
        alpha,
        unconstrained: free.value,
        constrained: constrained.value,
        blowup_alignment,
        extremal_alignment,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn disk(n: usize, rings: usize, r: f64) -> TriMesh {
        let c: Vec<Point> = (0..n)
            .map(|j| {
                let t = 2.0 * PI * j as f64 / n as f64;
                [r * t.cos(), r * t.sin()]
            })
            .collect();
        TriMesh::star_shaped(&c, [0.0, 0.0], rings).unwrap()
    }

    fn ellipse(a: f64, b: f64, n: usize, rings: usize) -> TriMesh {
        let c: Vec<Point> = (0..n)
            .map(|j| {
                let t = 2.0 * PI * j as f64 / n as f64;
                [a * t.cos(), b * t.sin()]
            })
            .collect();
        TriMesh::star_shaped(&c, [0.0, 0.0], rings).unwrap()
    }

    fn straight(eps: f64) -> ChannelGeometry {
        ChannelGeometry::circular([Profile::constant(0.0), Profile::constant(0.0)], Profile::constant(1.0), eps, 16)
            .unwrap()
    }

    fn sin_kernel() -> KernelElement {
        KernelElement::profile(Profile::constant(0.0).with_sin(&[1.0])).unwrap()
    }

    const SMALL: KornResolution = KornResolution { n_boundary: 12, n_rings: 2, n_cells_z: 12 };

    #[test]
    fn classical_constant_is_dilation_invariant() {
        let m = disk(24, 4, 1.0);
        let k = classical_korn_constant(&m).unwrap().constant;
        for s in [0.5, 2.0] {
            let ks = classical_korn_constant(&m.scaled(s)).unwrap().constant;
            assert_relative_eq!(k, ks, max_relative = 1e-7);
        }
    }

    #[test]
    fn classical_constant_on_disk_is_mesh_stable() {
        let a = classical_korn_constant(&disk(32, 6, 1.0)).unwrap().constant;
        let b = classical_korn_constant(&disk(48, 9, 1.0)).unwrap().constant;
        assert!(a > 1.0);
        assert!((a - b).abs() / b < 0.05, "{a} vs {b}");
    }

    #[test]
    fn classical_constant_in_three_dimensions_exceeds_one() {
        let sec = TriMesh::rectangle(3, 3, 1.0, 1.0);
        let prism = PrismMesh::extrude(sec.clone(), vec![0.0, 0.5, 1.0], |_, i| sec.vertices[i]).unwrap();
        let k = classical_korn_constant_3d(&prism).unwrap();
        assert!(k.constant > 1.0 && k.constant.is_finite());
    }

    #[test]
    fn tangent_directions_are_orthogonal_to_smooth_wall_normal() {
        let d = tangent_directions(&[[1.0, 0.0, 0.0], [0.9, 0.1, 0.0]]);
        assert_eq!(d.len(), 2);
        for t in d {
            assert_relative_eq!(mesh::norm3(t), 1.0, epsilon = 1e-12);
        }
        let corner = tangent_directions(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
        assert_eq!(corner.len(), 1);
        assert!(corner[0][2].abs() > 1.0 - 1e-12);
    }

    #[test]
    fn kernel_field_has_small_symmetric_gradient() {
        let p = KornProblem::new(&straight(0.1), SMALL).unwrap();
        let e = p.energies(&p.kernel_field(&sin_kernel()));
        assert!(e.sym < 0.05 * e.grad, "{e:?}");
    }

    #[test]
    fn ko1_grows_in_thin_circular_channels() {
        let k1 = KornProblem::new(&straight(0.4), SMALL).unwrap().ko1().unwrap().value;
        let k2 = KornProblem::new(&straight(0.2), SMALL).unwrap().ko1().unwrap().value;
        assert!(k2 > 2.5 * k1, "{k1} {k2}");
    }

    #[test]
    fn square_channel_has_bounded_ko1() {
        let sq = SectionShape::Square { side: 2.0 }.boundary_polygon(16);
        let mut ks = Vec::new();
        for eps in [0.4, 0.1] {
            let g = ChannelGeometry::tabulated(vec![0.0, 0.5, 1.0], vec![sq.clone(); 3], eps).unwrap();
            ks.push(KornProblem::new(&g, SMALL).unwrap().ko1().unwrap().value);
        }
        assert!(ks[1] < 1.5 * ks[0], "{ks:?}");
    }

    #[test]
    fn blowup_means_match_closed_form() {
        for eps in [0.4, 0.1] {
            let b = example_blowup_field(&sin_kernel(), &straight(eps)).unwrap();
            let s = eps * eps * PI * PI;
            assert_relative_eq!(b.mean_sym, s / 8.0, max_relative = 1e-8);
            assert_relative_eq!(b.mean_grad, 1.0 + s / 4.0, max_relative = 1e-8);
        }
    }

    #[test]
    fn blowup_ratio_is_invariant_under_angle_scaling() {
        let g = straight(0.2);
        let a = example_blowup_field(&sin_kernel(), &g).unwrap();
        let q = KernelElement::profile(Profile::constant(0.0).with_sin(&[3.5])).unwrap();
        let b = example_blowup_field(&q, &g).unwrap();
        assert_relative_eq!(a.ratio_sym_over_grad, b.ratio_sym_over_grad, max_relative = 1e-12);
    }

    #[test]
    fn blowup_field_meets_boundary_conditions() {
        let g = straight(0.3);
        let q = sin_kernel();
        for z in [0.0, 1.0] {
            let v = blowup_value(&q, &g, [0.1, 0.2, z]).unwrap();
            assert!(v.iter().all(|c| c.abs() < 1e-15));
        }
        for k in 0..8 {
            let t = 2.0 * PI * k as f64 / 8.0;
            let x = [0.3 * t.cos(), 0.3 * t.sin(), 0.37];
            let v = blowup_value(&q, &g, x).unwrap();
            assert!((v[0] * t.cos() + v[1] * t.sin()).abs() < 1e-15);
        }
    }

    #[test]
    fn vanishing_angle_is_degenerate() {
        let q = KernelElement::profile(Profile::constant(0.0)).unwrap();
        assert!(matches!(example_blowup_field(&q, &straight(0.2)), Err(Error::DegenerateInput(_))));
        assert!(KernelElement::profile(Profile::constant(1.0)).is_err());
        assert!(KernelElement::spline(vec![0.0, 1.0, 0.5]).is_err());
    }

    #[test]
    fn tangent_poincare_follows_dilation_law() {
        let m = disk(24, 4, 1.0);
        let p = tangent_poincare_constant(&m).unwrap().constant;
        for eps in [0.5, 0.1] {
            let q = tangent_poincare_constant(&m.scaled(eps)).unwrap().constant;
            assert_relative_eq!(q, eps * eps * p, max_relative = 1e-7);
        }
    }

    #[test]
    fn tangent_poincare_is_uniform_over_ellipses() {
        let ps: Vec<f64> =
            [1.0, 1.5, 2.0].iter().map(|&a| tangent_poincare_constant(&ellipse(a, 1.0, 32, 5)).unwrap().constant).collect();
        let hi = ps.iter().copied().fold(0.0, f64::max);
        let lo = ps.iter().copied().fold(f64::MAX, f64::min);
        assert!(hi / lo <= 5.0, "{ps:?}");
    }

    #[test]
    fn normal_trace_bound_of_circle_and_square() {
        let c = SectionShape::Disk { radius: 1.0 };
        assert_relative_eq!(normal_trace_bound(&c).unwrap(), PI, epsilon = 1e-8);
        let sq = SectionShape::Polygon { vertices: vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]] };
        assert_relative_eq!(normal_trace_bound(&sq).unwrap(), 2.0, epsilon = 1e-12);
        let sq = SectionShape::Square { side: 1.0 };
        assert_relative_eq!(normal_trace_bound(&sq).unwrap(), 2.0, epsilon = 1e-12);
        let e = SectionShape::Ellipse { a: 2.0, b: 0.5 };
        assert!(normal_trace_bound(&e).unwrap() > 0.0);
        let flat = SectionShape::Polygon { vertices: vec![[0.0, 0.0]; 4] };
        assert!(matches!(normal_trace_bound(&flat), Err(Error::Domain(_))));
    }

    #[test]
    fn dependent_kernel_basis_is_ill_posed() {
        let p = KornProblem::new(&straight(0.2), SMALL).unwrap();
        let h = KernelElement::hat(2, 4).unwrap();
        let r = p.constrained_ko1(&[h.clone(), h]);
        assert!(matches!(r, Err(Error::IllPosedConstraint(_))));
        assert!(matches!(optimal_korn_experiment(&p, &KernelElement::hat_basis(4).unwrap(), 0.5), Err(Error::UnsupportedKind(_))));
    }

    #[test]
    fn orthogonality_to_kernel_removes_blowup() {
        let p = KornProblem::new(&straight(0.1), SMALL).unwrap();
        let r = optimal_korn_experiment(&p, &KernelElement::hat_basis(6).unwrap(), 0.0).unwrap();
        assert!(r.constrained < 0.2 * r.unconstrained, "{r:?}");
        assert!(r.blowup_alignment.unwrap() > 0.9);
    }

    #[test]
    fn zero_field_gives_filtered_ratios() {
        let p = KornProblem::new(&straight(0.2), SMALL).unwrap();
        let a = approx_skew_field(&p, &vec![[0.0; 3]; p.mesh.prism.n_nodes()]).unwrap();
        assert!(a.ap1_ratio.is_none() && a.ap2_ratio.is_none());
        assert!(a.skew.iter().all(|s| s.iter().all(|&c| c == 0.0)));
    }

    #[test]
    fn approximate_rotation_captures_kernel_field() {
        let p = KornProblem::new(&straight(0.1), SMALL).unwrap();
        let v = p.field(&p.kernel_field(&sin_kernel()));
        let a = approx_skew_field(&p, &v).unwrap();
        // ∇v − A is dominated by the symmetric part once A tracks the rotation
        assert!(a.ap1_ratio.unwrap() < 0.2 * a.grad_over_sym.unwrap(), "{a:?}");
        assert!(a.ap2_ratio.unwrap().is_finite());
    }

    #[test]
    fn resolution_refines_every_count() {
        let r = KornResolution { n_boundary: 16, n_rings: 3, n_cells_z: 24 }.refined();
        assert_eq!(r, KornResolution { n_boundary: 24, n_rings: 5, n_cells_z: 36 });
    }

    #[test]
    fn unit_square_constant_settles_under_refinement() {
        // corner singularities make this converge slowly; 64 -> 96 is
        // the first step inside 5%
        let c64 = classical_korn_constant(&TriMesh::rectangle(64, 64, 1.0, 1.0)).unwrap().constant;
        let c96 = classical_korn_constant(&TriMesh::rectangle(96, 96, 1.0, 1.0)).unwrap().constant;
        assert!(c96 > c64);
        assert!((c96 - c64) / c96 < 0.05, "{c64} -> {c96}");
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(16))]

        #[test]
        fn blowup_closed_form_holds_for_any_eps(eps in 0.02f64..0.8) {
            let b = example_blowup_field(&sin_kernel(), &straight(eps)).unwrap();
            let s = eps * eps * PI * PI;
            proptest::prop_assert!((b.mean_sym / (s / 8.0) - 1.0).abs() < 1e-8);
            proptest::prop_assert!((b.mean_grad - 1.0 - s / 4.0).abs() < 1e-8);
            proptest::prop_assert!(b.lower_bound <= 1.0 / b.ratio_sym_over_grad * (1.0 + 1e-12));
        }

        #[test]
        fn poincare_follows_dilation_law(scale in 0.05f64..3.0) {
            let m = disk(12, 2, 1.0);
            let c = tangent_poincare_constant(&m).unwrap().constant;
            let cs = tangent_poincare_constant(&m.scaled(scale)).unwrap().constant;
            proptest::prop_assert!((cs / (scale * scale * c) - 1.0).abs() < 1e-7);
        }
    }
}
