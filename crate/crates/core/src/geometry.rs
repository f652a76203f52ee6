//! Thin channels `Ω_ε = {(x_h, z) : z ∈ (0,1), x_h ∈ εω_h(z)}`, their
//! cross-section families and the tilt field `V_h` whose flow transports
//! cross sections into each other.

use crate::error::{Error, Result};
use crate::linalg::{conjugate_gradient, CsrMatrix};
use crate::mesh::TriMesh;
use crate::polygon::{self, Point};
use crate::profile::Profile;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::Read;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GeometryKind {
    Circular,
    Tabulated,
}

#[derive(Debug, Clone)]
enum Shape {
    Circular { centerline: [Profile; 2], radius: Profile },
    Tabulated { z: Vec<f64>, sections: Vec<Vec<Point>> },
}

/// A channel given by closed-form centerline/radius profiles or by a
/// tabulated family of boundary polygons with matched vertices.
#[derive(Debug, Clone)]
pub struct ChannelGeometry {
    pub epsilon: f64,
    pub n_z_samples: usize,
    shape: Shape,
}

/// Minimum admissible radius of a circular channel.
pub const R_MIN: f64 = 1e-6;

impl ChannelGeometry {
    pub fn circular(centerline: [Profile; 2], radius: Profile, epsilon: f64, n_z_samples: usize) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::Domain(format!("epsilon must be positive (got {epsilon})")));
        }
        if n_z_samples < 2 {
            return Err(Error::Domain("need at least two z-samples".into()));
        }
        let g = Self { epsilon, n_z_samples, shape: Shape::Circular { centerline, radius } };
        for &z in &g.sample_z() {
            let (r, dr, _) = g.radius_profile().unwrap().eval(z);
            if !(r >= R_MIN) {
                return Err(Error::DegenerateGeometry(format!("radius {r:.3e} at z = {z} is below the minimum")));
            }
            if !dr.is_finite() {
                return Err(Error::DegenerateGeometry(format!("radius slope is not finite at z = {z}")));
            }
        }
        Ok(g)
    }

    /// Straight circular channel `X ≡ 0` with the given radius profile.
    pub fn axisymmetric(radius: Profile, epsilon: f64, n_z_samples: usize) -> Result<Self> {
        Self::circular([Profile::constant(0.0), Profile::constant(0.0)], radius, epsilon, n_z_samples)
    }

    /// Tabulated family: `z` strictly increasing from 0 to 1, one polygon
    /// per sample with a common vertex count (vertex `j` of each slice is
    /// matched with vertex `j` of its neighbours).
    pub fn tabulated(z: Vec<f64>, mut sections: Vec<Vec<Point>>, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::Domain(format!("epsilon must be positive (got {epsilon})")));
        }
        if z.len() < 3 || z.len() != sections.len() {
            return Err(Error::Domain("need at least three z-slices with one polygon each".into()));
        }
        if (z[0]).abs() > 1e-12 || (z[z.len() - 1] - 1.0).abs() > 1e-12 || z.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Domain("z-slices must increase strictly from 0 to 1".into()));
        }
        let m = sections[0].len();
        for (k, poly) in sections.iter_mut().enumerate() {
            if poly.len() < 16 {
                return Err(Error::DegenerateGeometry(format!("slice {k} has {} < 16 vertices", poly.len())));
            }
            if poly.len() != m {
                return Err(Error::DegenerateGeometry(format!("slice {k} has {} vertices, expected {m}", poly.len())));
            }
            let a = polygon::signed_area(poly);
            if a == 0.0 || !a.is_finite() {
                return Err(Error::DegenerateGeometry(format!("slice {k} has zero area")));
            }
            if a < 0.0 {
                poly.reverse();
                poly.rotate_right(1);
            }
            if !polygon::is_simple(poly) {
                return Err(Error::DegenerateGeometry(format!("slice {k} is self-intersecting")));
            }
        }
        let n = z.len() - 1;
        Ok(Self { epsilon, n_z_samples: n, shape: Shape::Tabulated { z, sections } })
    }

    /// Reads a tabulated family from CSV with columns `z, vertex_index, x, y`.
    pub fn from_csv<R: Read>(reader: R, epsilon: f64) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            z: f64,
            vertex_index: usize,
            x: f64,
            y: f64,
        }
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut rows: Vec<Row> = Vec::new();
        for (i, rec) in rdr.deserialize().enumerate() {
            rows.push(rec.map_err(|e| Error::Configuration(format!("boundary table row {}: {e}", i + 1)))?);
        }
        rows.sort_by(|a, b| a.z.partial_cmp(&b.z).unwrap().then(a.vertex_index.cmp(&b.vertex_index)));
        let mut z: Vec<f64> = Vec::new();
        let mut sections: Vec<Vec<Point>> = Vec::new();
        for r in rows {
            if z.last() != Some(&r.z) {
                z.push(r.z);
                sections.push(Vec::new());
            }
            let s = sections.last_mut().unwrap();
            if r.vertex_index != s.len() {
                return Err(Error::Configuration(format!("missing or duplicate vertex index {} at z = {}", r.vertex_index, r.z)));
            }
            s.push([r.x, r.y]);
        }
        Self::tabulated(z, sections, epsilon)
    }

    /// Samples a closed-form geometry into a tabulated family with `m`
    /// vertices per slice.
    pub fn tabulate(&self, m: usize) -> Result<Self> {
        let z = self.sample_z();
        let sections = z.iter().map(|&zz| self.section_polygon(zz, m)).collect();
        Self::tabulated(z, sections, self.epsilon)
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::Domain(format!("epsilon must be positive (got {epsilon})")));
        }
        let mut g = self.clone();
        g.epsilon = epsilon;
        Ok(g)
    }

    pub fn kind(&self) -> GeometryKind {
        match self.shape {
            Shape::Circular { .. } => GeometryKind::Circular,
            Shape::Tabulated { .. } => GeometryKind::Tabulated,
        }
    }

    pub fn radius_profile(&self) -> Option<&Profile> {
        match &self.shape {
            Shape::Circular { radius, .. } => Some(radius),
            _ => None,
        }
    }

    pub fn centerline_profiles(&self) -> Option<&[Profile; 2]> {
        match &self.shape {
            Shape::Circular { centerline, .. } => Some(centerline),
            _ => None,
        }
    }

    /// True for circular channels with a constant centerline.
    pub fn is_axisymmetric(&self) -> bool {
        self.centerline_profiles().is_some_and(|c| c[0].is_constant() && c[1].is_constant())
    }

    /// The z-sample grid.
    pub fn sample_z(&self) -> Vec<f64> {
        match &self.shape {
            Shape::Tabulated { z, .. } => z.clone(),
            Shape::Circular { .. } => (0..=self.n_z_samples).map(|k| k as f64 / self.n_z_samples as f64).collect(),
        }
    }

    fn check_z(z: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&z) {
            return Err(Error::Domain(format!("z = {z} lies outside [0, 1]")));
        }
        Ok(())
    }

    /// Boundary polygon of `ω_h(z)` (counter-clockwise). Circular sections
    /// are sampled with `m` vertices; tabulated ones interpolate matched
    /// vertices linearly in z.
    pub fn section_polygon(&self, z: f64, m: usize) -> Vec<Point> {
        match &self.shape {
            Shape::Circular { centerline, radius } => {
                let (x0, x1, r) = (centerline[0].value(z), centerline[1].value(z), radius.value(z));
                (0..m)
                    .map(|j| {
                        let t = 2.0 * PI * j as f64 / m as f64;
                        [x0 + r * t.cos(), x1 + r * t.sin()]
                    })
                    .collect()
            }
            Shape::Tabulated { z: zs, sections } => {
                let (k, s) = bracket(zs, z);
                sections[k]
                    .iter()
                    .zip(&sections[k + 1])
                    .map(|(a, b)| [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])])
                    .collect()
            }
        }
    }

    /// `A(z) = |ω_h(z)|`.
    pub fn area(&self, z: f64) -> Result<f64> {
        Self::check_z(z)?;
        Ok(match &self.shape {
            Shape::Circular { radius, .. } => PI * radius.value(z).powi(2),
            Shape::Tabulated { .. } => polygon::signed_area(&self.section_polygon(z, 0)),
        })
    }

    /// Analytic `∂_z A` (circular kind only).
    pub fn area_derivative_analytic(&self, z: f64) -> Result<f64> {
        Self::check_z(z)?;
        match &self.shape {
            Shape::Circular { radius, .. } => {
                let (r, dr, _) = radius.eval(z);
                Ok(2.0 * PI * r * dr)
            }
            Shape::Tabulated { .. } => Err(Error::UnsupportedKind("analytic area derivative needs a circular channel".into())),
        }
    }

    /// Areas at the sample grid.
    pub fn sample_areas(&self) -> Vec<f64> {
        self.sample_z().iter().map(|&z| self.area(z).unwrap()).collect()
    }

    /// `∂_z A` on the sample grid: centered differences in the interior,
    /// second-order one-sided differences at the ends.
    pub fn area_derivative_fd(&self) -> Vec<f64> {
        finite_difference(&self.sample_z(), &self.sample_areas())
    }

    /// `|Ω_ε| = ε² ∫₀¹ A(z) dz`.
    pub fn volume(&self) -> f64 {
        let g = crate::quadrature::GaussLegendre::new(8);
        let z = self.sample_z();
        let mut v = 0.0;
        for w in z.windows(2) {
            v += g.integrate(w[0], w[1], |s| self.area(s.clamp(0.0, 1.0)).unwrap());
        }
        self.epsilon * self.epsilon * v
    }

    /// Signed distance of `x` to `∂ω_h(z)` (negative inside).
    pub fn signed_distance(&self, x: Point, z: f64) -> f64 {
        match &self.shape {
            Shape::Circular { centerline, radius } => {
                let d = [x[0] - centerline[0].value(z), x[1] - centerline[1].value(z)];
                (d[0] * d[0] + d[1] * d[1]).sqrt() - radius.value(z)
            }
            Shape::Tabulated { .. } => polygon::signed_distance(&self.section_polygon(z, 0), x),
        }
    }

    /// Typical section diameter (square root of the mean area).
    pub fn length_scale(&self) -> f64 {
        let a = self.sample_areas();
        (a.iter().sum::<f64>() / a.len() as f64).sqrt()
    }
}

/// Interval index and local coordinate of `z` in a sorted grid.
fn bracket(zs: &[f64], z: f64) -> (usize, f64) {
    let n = zs.len();
    let k = zs.partition_point(|&v| v <= z).clamp(1, n - 1) - 1;
    let s = ((z - zs[k]) / (zs[k + 1] - zs[k])).clamp(0.0, 1.0);
    (k, s)
}

/// Second-order finite differences on a (possibly non-uniform) grid.
pub fn finite_difference(z: &[f64], f: &[f64]) -> Vec<f64> {
    let n = z.len();
    let three_point = |i0: usize, at: usize| {
        // derivative at z[at] of the quadratic through i0, i0+1, i0+2
        let (x0, x1, x2) = (z[i0], z[i0 + 1], z[i0 + 2]);
        let x = z[at];
        let l0 = ((x - x1) + (x - x2)) / ((x0 - x1) * (x0 - x2));
        let l1 = ((x - x0) + (x - x2)) / ((x1 - x0) * (x1 - x2));
        let l2 = ((x - x0) + (x - x1)) / ((x2 - x0) * (x2 - x1));
        l0 * f[i0] + l1 * f[i0 + 1] + l2 * f[i0 + 2]
    };
    (0..n)
        .map(|i| {
            if i == 0 {
                three_point(0, 0)
            } else if i == n - 1 {
                three_point(n - 3, n - 1)
            } else {
                three_point(i - 1, i)
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TiltProvenance {
    ClosedForm,
    NeumannSolved,
}

/// Per-slice finite-element tilt data.
#[derive(Debug, Clone)]
pub struct SliceTilt {
    pub z: f64,
    pub mesh: TriMesh,
    /// Recovered nodal values of `V_h = ∇_h U_h`.
    pub values: Vec<Point>,
    /// Area-weighted mean of `div_h V_h` over the slice.
    pub divergence_mean: f64,
    /// Area-weighted standard deviation of `div_h V_h` over the slice.
    pub divergence_spread: f64,
    /// `|∂_zA − ∮ w_h·n_h|` before solving.
    pub compatibility_residual: f64,
    /// `max |V_h·n_h − w_h·n_h|` over boundary nodes.
    pub tangency_residual: f64,
}

#[derive(Debug, Clone)]
enum TiltRepr {
    ClosedForm,
    Neumann(Vec<SliceTilt>),
}

/// The horizontal field `V_h(x_h, z)` on `Ω₁` with `[V_h, 1]` tangent to
/// the lateral boundary and `A div_h V_h = ∂_z A`.
#[derive(Debug, Clone)]
pub struct TiltField {
    geom: ChannelGeometry,
    repr: TiltRepr,
    escape_tolerance: f64,
}

/// `V_h(x_h, z) = (∂_zR/R)(x_h − X(z)) + ∂_zX(z)` for circular channels.
pub fn tilt_field_circular(geom: &ChannelGeometry) -> Result<TiltField> {
    if geom.kind() != GeometryKind::Circular {
        return Err(Error::UnsupportedKind("closed-form tilt field needs a circular channel".into()));
    }
    Ok(TiltField { geom: geom.clone(), repr: TiltRepr::ClosedForm, escape_tolerance: 1e-6 * geom.length_scale() })
}

/// Relative tolerance (w.r.t. the slice area) on the compatibility
/// residual of the Neumann data.
pub const COMPATIBILITY_TOLERANCE: f64 = 5e-2;

/// Solves `Δ_h U_h = ∂_zA/A`, `∇U_h·n_h = w_h·n_h` on every slice of a
/// tabulated channel with P1 elements on star-shaped ring meshes and
/// returns `V_h = ∇_h U_h`. The boundary velocity `w_h` comes from
/// differences of matched vertices between neighbouring slices.
pub fn tilt_field_neumann(geom: &ChannelGeometry, n_rings: usize) -> Result<TiltField> {
    let (zs, sections) = match &geom.shape {
        Shape::Tabulated { z, sections } => (z, sections),
        Shape::Circular { .. } => {
            return Err(Error::UnsupportedKind("Neumann tilt field needs a tabulated channel".into()))
        }
    };
    let n = zs.len();
    let m = sections[0].len();
    // vertex velocities w_j(z_k)
    let mut w = vec![vec![[0.0; 2]; m]; n];
    for j in 0..m {
        for c in 0..2 {
            let f: Vec<f64> = sections.iter().map(|s| s[j][c]).collect();
            let d = finite_difference(zs, &f);
            for k in 0..n {
                w[k][j][c] = d[k];
            }
        }
    }
    let areas: Vec<f64> = sections.iter().map(|s| polygon::signed_area(s)).collect();
    let da = finite_difference(zs, &areas);
    let slices: Vec<Result<SliceTilt>> = (0..n)
        .into_par_iter()
        .map(|k| solve_slice(zs[k], &sections[k], &w[k], areas[k], da[k], n_rings))
        .collect();
    let slices = slices.into_iter().collect::<Result<Vec<_>>>()?;
    for s in &slices {
        log::debug!("slice z = {:.4}: compatibility residual {:.3e}", s.z, s.compatibility_residual);
    }
    Ok(TiltField {
        geom: geom.clone(),
        repr: TiltRepr::Neumann(slices),
        escape_tolerance: 0.05 * geom.length_scale(),
    })
}

fn solve_slice(z: f64, poly: &[Point], w: &[Point], area: f64, da_fd: f64, n_rings: usize) -> Result<SliceTilt> {
    if !(area > 0.0) {
        return Err(Error::DegenerateGeometry(format!("slice at z = {z} has zero measure")));
    }
    let mesh = TriMesh::star_shaped(poly, polygon::centroid(poly), n_rings)?;
    let nn = mesh.n_nodes();
    let m = poly.len();
    // boundary node j of the mesh is polygon vertex j
    let bnode = |j: usize| mesh.boundary_nodes[j];
    let mut flux = 0.0;
    let mut rhs = vec![0.0; nn];
    for (e_idx, e) in mesh.boundary_edges.iter().enumerate() {
        let (ja, jb) = (e_idx, (e_idx + 1) % m);
        let ga = w[ja][0] * e.normal[0] + w[ja][1] * e.normal[1];
        let gb = w[jb][0] * e.normal[0] + w[jb][1] * e.normal[1];
        flux += 0.5 * e.length * (ga + gb);
        rhs[bnode(ja)] += e.length * (2.0 * ga + gb) / 6.0;
        rhs[bnode(jb)] += e.length * (ga + 2.0 * gb) / 6.0;
    }
    let residual = (flux - da_fd).abs();
    let tolerance = COMPATIBILITY_TOLERANCE * area;
    if residual > tolerance {
        return Err(Error::IncompatibleData { z, residual, tolerance });
    }
    // the vertex-velocity flux is the exact derivative of the polygon area,
    // so the source f = flux/A makes the discrete problem compatible
    let f = flux / area;
    let mut trip = Vec::with_capacity(9 * mesh.triangles.len());
    let mut lumped = vec![0.0; nn];
    for t in 0..mesh.triangles.len() {
        let g = mesh.shape_gradients(t);
        let a = mesh.signed_area(t);
        let tri = mesh.triangles[t];
        for p in 0..3 {
            lumped[tri[p]] += a / 3.0;
            for q in 0..3 {
                trip.push((tri[p], tri[q], a * (g[p][0] * g[q][0] + g[p][1] * g[q][1])));
            }
        }
    }
    for i in 0..nn {
        rhs[i] -= f * lumped[i];
    }
    let k = CsrMatrix::from_triplets(nn, nn, trip);
    let project = |v: &mut [f64]| {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        v.iter_mut().for_each(|x| *x -= mean);
    };
    let mut u = conjugate_gradient(|x| k.mul_vec(x), &k.diagonal(), &rhs, 1e-13, 20 * nn + 100, Some(&project))?;
    // zero-mean gauge
    let mean = u.iter().zip(&lumped).map(|(a, b)| a * b).sum::<f64>() / area;
    u.iter_mut().for_each(|x| *x -= mean);
    // area-weighted nodal recovery of the piecewise-constant gradient
    let mut vals = vec![[0.0; 2]; nn];
    let mut wsum = vec![0.0; nn];
    for t in 0..mesh.triangles.len() {
        let g = mesh.shape_gradients(t);
        let a = mesh.signed_area(t);
        let tri = mesh.triangles[t];
        let mut grad = [0.0; 2];
        for p in 0..3 {
            grad[0] += u[tri[p]] * g[p][0];
            grad[1] += u[tri[p]] * g[p][1];
        }
        for p in 0..3 {
            vals[tri[p]][0] += a * grad[0];
            vals[tri[p]][1] += a * grad[1];
            wsum[tri[p]] += a;
        }
    }
    for i in 0..nn {
        vals[i][0] /= wsum[i];
        vals[i][1] /= wsum[i];
    }
    // impose the Neumann datum on the normal component at boundary nodes
    let normals = mesh.boundary_vertex_normals();
    let mut tangency: f64 = 0.0;
    for j in 0..m {
        let node = bnode(j);
        let nv = normals[j];
        let g = w[j][0] * nv[0] + w[j][1] * nv[1];
        let cur = vals[node][0] * nv[0] + vals[node][1] * nv[1];
        vals[node][0] += (g - cur) * nv[0];
        vals[node][1] += (g - cur) * nv[1];
        let after = vals[node][0] * nv[0] + vals[node][1] * nv[1];
        tangency = tangency.max((after - g).abs());
    }
    let (dm, ds) = slice_divergence(&mesh, &vals);
    Ok(SliceTilt {
        z,
        mesh,
        values: vals,
        divergence_mean: dm,
        divergence_spread: ds,
        compatibility_residual: residual,
        tangency_residual: tangency,
    })
}

/// Area-weighted mean and standard deviation of the elementwise divergence
/// of a P1 vector field.
fn slice_divergence(mesh: &TriMesh, vals: &[Point]) -> (f64, f64) {
    let mut divs = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0;
    let mut acc = 0.0;
    for t in 0..mesh.triangles.len() {
        let g = mesh.shape_gradients(t);
        let a = mesh.signed_area(t);
        let tri = mesh.triangles[t];
        let d: f64 = (0..3).map(|p| vals[tri[p]][0] * g[p][0] + vals[tri[p]][1] * g[p][1]).sum();
        divs.push((a, d));
        total += a;
        acc += a * d;
    }
    let mean = acc / total;
    let var = divs.iter().map(|(a, d)| a * (d - mean).powi(2)).sum::<f64>() / total;
    (mean, var.sqrt())
}

fn eval_slice(s: &SliceTilt, x: Point) -> Point {
    let (t, l) = s.mesh.locate(x);
    let tri = s.mesh.triangles[t];
    let mut v = [0.0; 2];
    for p in 0..3 {
        v[0] += l[p] * s.values[tri[p]][0];
        v[1] += l[p] * s.values[tri[p]][1];
    }
    v
}

impl TiltField {
    pub fn provenance(&self) -> TiltProvenance {
        match self.repr {
            TiltRepr::ClosedForm => TiltProvenance::ClosedForm,
            TiltRepr::Neumann(_) => TiltProvenance::NeumannSolved,
        }
    }

    pub fn geometry(&self) -> &ChannelGeometry {
        &self.geom
    }

    pub fn slices(&self) -> Option<&[SliceTilt]> {
        match &self.repr {
            TiltRepr::Neumann(s) => Some(s),
            TiltRepr::ClosedForm => None,
        }
    }

    /// Distance outside the section tolerated by [`flow_map`].
    pub fn escape_tolerance(&self) -> f64 {
        self.escape_tolerance
    }

    pub fn with_escape_tolerance(mut self, tol: f64) -> Self {
        self.escape_tolerance = tol;
        self
    }

    /// `V_h(x_h, z)` in channel units of `Ω₁`.
    pub fn eval(&self, x: Point, z: f64) -> Point {
        match &self.repr {
            TiltRepr::ClosedForm => {
                let c = self.geom.centerline_profiles().unwrap();
                let (r, dr, _) = self.geom.radius_profile().unwrap().eval(z);
                let (x0, dx0, _) = c[0].eval(z);
                let (x1, dx1, _) = c[1].eval(z);
                let g = dr / r;
                [g * (x[0] - x0) + dx0, g * (x[1] - x1) + dx1]
            }
            TiltRepr::Neumann(slices) => {
                let zs: Vec<f64> = slices.iter().map(|s| s.z).collect();
                let (k, s) = bracket(&zs, z);
                let a = eval_slice(&slices[k], x);
                if s == 0.0 {
                    return a;
                }
                let b = eval_slice(&slices[k + 1], x);
                [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])]
            }
        }
    }

    /// Horizontal divergence at the sample z-values.
    pub fn sample_divergence(&self) -> Vec<f64> {
        match &self.repr {
            TiltRepr::ClosedForm => self
                .geom
                .sample_z()
                .iter()
                .map(|&z| {
                    let (r, dr, _) = self.geom.radius_profile().unwrap().eval(z);
                    2.0 * dr / r
                })
                .collect(),
            TiltRepr::Neumann(slices) => slices.iter().map(|s| s.divergence_mean).collect(),
        }
    }

    /// Largest within-slice standard deviation of `div_h V_h` (zero for the
    /// closed form, where it is constant in `x_h`).
    pub fn divergence_spread(&self) -> f64 {
        match &self.repr {
            TiltRepr::ClosedForm => 0.0,
            TiltRepr::Neumann(slices) => slices.iter().map(|s| s.divergence_spread).fold(0.0, f64::max),
        }
    }

    /// Largest `|V_h·n_h − w_h·n_h|` over boundary nodes.
    pub fn tangency_residual(&self) -> f64 {
        match &self.repr {
            TiltRepr::ClosedForm => 0.0,
            TiltRepr::Neumann(slices) => slices.iter().map(|s| s.tangency_residual).fold(0.0, f64::max),
        }
    }

    /// Sup-norm of `V_h` over `Ω₁`, estimated on section polygons with `m`
    /// boundary vertices and `n_r` radial samples at every z-sample.
    pub fn sup_norm(&self, m: usize, n_r: usize) -> f64 {
        let mut s: f64 = 0.0;
        for &z in &self.geom.sample_z() {
            let poly = self.geom.section_polygon(z, m);
            let c = polygon::centroid(&poly);
            for p in &poly {
                for k in 0..=n_r {
                    let t = k as f64 / n_r as f64;
                    let x = [c[0] + t * (p[0] - c[0]), c[1] + t * (p[1] - c[1])];
                    let v = self.eval(x, z);
                    s = s.max((v[0] * v[0] + v[1] * v[1]).sqrt());
                }
            }
        }
        s
    }
}

/// Which `∂_zA` the divergence identity is checked against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AreaSlope {
    /// Centered differences on the z-sample grid.
    FiniteDifference,
    /// Exact derivative (circular channels only).
    Analytic,
}

/// `max_z |A(z) div_h V_h(z) − ∂_zA(z)|` over the z-samples, with `∂_zA`
/// by finite differences.
pub fn check_divergence_identity(geom: &ChannelGeometry, tilt: &TiltField) -> f64 {
    check_divergence_identity_with(geom, tilt, AreaSlope::FiniteDifference).expect("finite differences always apply")
}

pub fn check_divergence_identity_with(geom: &ChannelGeometry, tilt: &TiltField, slope: AreaSlope) -> Result<f64> {
    let z = geom.sample_z();
    let a = geom.sample_areas();
    let da = match slope {
        AreaSlope::FiniteDifference => geom.area_derivative_fd(),
        AreaSlope::Analytic => z.iter().map(|&s| geom.area_derivative_analytic(s)).collect::<Result<Vec<_>>>()?,
    };
    let div = tilt.sample_divergence();
    Ok((0..z.len()).map(|k| (a[k] * div[k] - da[k]).abs()).fold(0.0, f64::max))
}

/// Integrates `dφ/dz = V_h(φ, z)` from `z = 0` with classical RK4 steps of
/// size `1/n_z_samples` (last step shortened to land on `z_end`).
pub fn flow_map(tilt: &TiltField, x0: Point, z_end: f64) -> Result<Point> {
    if !(0.0..=1.0).contains(&z_end) {
        return Err(Error::Domain(format!("z_end = {z_end} lies outside [0, 1]")));
    }
    let geom = &tilt.geom;
    let tol = tilt.escape_tolerance;
    let check = |x: Point, z: f64| -> Result<()> {
        let d = geom.signed_distance(x, z);
        if d > tol {
            return Err(Error::FlowEscape { z, distance: d });
        }
        Ok(())
    };
    check(x0, 0.0)?;
    let dz = 1.0 / geom.n_z_samples as f64;
    let mut z = 0.0;
    let mut x = x0;
    while z < z_end - 1e-14 {
        let h = dz.min(z_end - z);
        let k1 = tilt.eval(x, z);
        let k2 = tilt.eval([x[0] + 0.5 * h * k1[0], x[1] + 0.5 * h * k1[1]], z + 0.5 * h);
        let k3 = tilt.eval([x[0] + 0.5 * h * k2[0], x[1] + 0.5 * h * k2[1]], z + 0.5 * h);
        let k4 = tilt.eval([x[0] + h * k3[0], x[1] + h * k3[1]], z + h);
        for c in 0..2 {
            x[c] += h / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
        }
        z = (z + h).min(z_end);
        check(x, z)?;
    }
    Ok(x)
}

/// Largest distance between the flow image of `m` boundary samples of
/// `∂ω_h(0)` and the boundary `∂ω_h(z_end)`. The flow is a
/// diffeomorphism of sections, so this measures the one-sided Hausdorff
/// gap without polygonal chord errors.
pub fn flow_reconstruction_error(tilt: &TiltField, z_end: f64, m: usize) -> Result<f64> {
    let geom = &tilt.geom;
    let start = geom.section_polygon(0.0, m);
    let mut worst: f64 = 0.0;
    for p in start {
        let x = flow_map(tilt, p, z_end)?;
        worst = worst.max(geom.signed_distance(x, z_end).abs());
    }
    Ok(worst)
}

/// `V_{h,ε}(x_h, z) = ε V_h(x_h/ε, z)` on `Ω_ε`.
#[derive(Debug, Clone)]
pub struct ScaledTilt {
    pub field: TiltField,
    pub epsilon: f64,
}

impl ScaledTilt {
    pub fn eval(&self, x: Point, z: f64) -> Point {
        let e = self.epsilon;
        let v = self.field.eval([x[0] / e, x[1] / e], z);
        [e * v[0], e * v[1]]
    }
}

pub fn scale_to_epsilon(tilt: &TiltField, epsilon: f64) -> Result<ScaledTilt> {
    if !(epsilon > 0.0) {
        return Err(Error::Domain(format!("epsilon must be positive (got {epsilon})")));
    }
    Ok(ScaledTilt { field: tilt.clone(), epsilon })
}

/// Reference cross-section shapes for section-level experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum SectionShape {
    Disk { radius: f64 },
    Ellipse { a: f64, b: f64 },
    Square { side: f64 },
    Polygon { vertices: Vec<Point> },
}

impl SectionShape {
    /// Counter-clockwise boundary polygon centered at the origin. Squares
    /// use `m` rounded up to a multiple of four so corners are vertices.
    pub fn boundary_polygon(&self, m: usize) -> Vec<Point> {
        match self {
            SectionShape::Disk { radius } => SectionShape::Ellipse { a: *radius, b: *radius }.boundary_polygon(m),
            SectionShape::Ellipse { a, b } => (0..m)
                .map(|j| {
                    let t = 2.0 * PI * j as f64 / m as f64;
                    [a * t.cos(), b * t.sin()]
                })
                .collect(),
            SectionShape::Square { side } => {
                let per = m.div_ceil(4).max(1);
                let h = 0.5 * side;
                let corners = [[-h, -h], [h, -h], [h, h], [-h, h]];
                let mut out = Vec::with_capacity(4 * per);
                for c in 0..4 {
                    let (a, b) = (corners[c], corners[(c + 1) % 4]);
                    for k in 0..per {
                        let s = k as f64 / per as f64;
                        out.push([a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])]);
                    }
                }
                out
            }
            SectionShape::Polygon { vertices } => vertices.clone(),
        }
    }

    /// Boundary quadrature `(point, outward unit normal, weight)`: periodic
    /// trapezoid rule with exact normals for smooth shapes, one node per
    /// side for polygons (normals are constant on sides).
    pub fn boundary_quadrature(&self, n: usize) -> Vec<(Point, Point, f64)> {
        match self {
            SectionShape::Disk { radius } => SectionShape::Ellipse { a: *radius, b: *radius }.boundary_quadrature(n),
            SectionShape::Ellipse { a, b } => (0..n)
                .map(|j| {
                    let t = 2.0 * PI * j as f64 / n as f64;
                    let (c, s) = (t.cos(), t.sin());
                    let speed = ((a * s).powi(2) + (b * c).powi(2)).sqrt();
                    ([a * c, b * s], [b * c / speed, a * s / speed], speed * 2.0 * PI / n as f64)
                })
                .collect(),
            _ => {
                let poly = self.boundary_polygon(4);
                (0..poly.len())
                    .map(|i| {
                        let a = poly[i];
                        let b = poly[(i + 1) % poly.len()];
                        let mid = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
                        (mid, polygon::edge_normal(&poly, i), polygon::dist(a, b))
                    })
                    .collect()
            }
        }
    }
}
