//! Planar polygon utilities. Polygons are closed implicitly (last vertex
//! connects to the first) and counter-clockwise when positively oriented.

pub type Point = [f64; 2];

pub fn signed_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    let mut s = 0.0;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        s += a[0] * b[1] - a[1] * b[0];
    }
    0.5 * s
}

pub fn centroid(poly: &[Point]) -> Point {
    let n = poly.len();
    let (mut cx, mut cy, mut a2) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let p = poly[i];
        let q = poly[(i + 1) % n];
        let c = p[0] * q[1] - q[0] * p[1];
        a2 += c;
        cx += (p[0] + q[0]) * c;
        cy += (p[1] + q[1]) * c;
    }
    [cx / (3.0 * a2), cy / (3.0 * a2)]
}

pub fn perimeter(poly: &[Point]) -> f64 {
    let n = poly.len();
    (0..n).map(|i| dist(poly[i], poly[(i + 1) % n])).sum()
}

pub fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Outward unit normal of edge `i → i+1` of a counter-clockwise polygon.
pub fn edge_normal(poly: &[Point], i: usize) -> Point {
    let a = poly[i];
    let b = poly[(i + 1) % poly.len()];
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let l = (dx * dx + dy * dy).sqrt();
    [dy / l, -dx / l]
}

pub fn distance_to_segment(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let l2 = dx * dx + dy * dy;
    let t = if l2 > 0.0 { (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / l2).clamp(0.0, 1.0) } else { 0.0 };
    dist(p, [a[0] + t * dx, a[1] + t * dy])
}

pub fn distance_to_boundary(poly: &[Point], p: Point) -> f64 {
    let n = poly.len();
    (0..n).map(|i| distance_to_segment(p, poly[i], poly[(i + 1) % n])).fold(f64::INFINITY, f64::min)
}

/// Even-odd point inclusion test.
pub fn contains(poly: &[Point], p: Point) -> bool {
    let n = poly.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if p[0] < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Signed distance: negative inside, positive outside.
pub fn signed_distance(poly: &[Point], p: Point) -> f64 {
    let d = distance_to_boundary(poly, p);
    if contains(poly, p) {
        -d
    } else {
        d
    }
}

fn segments_intersect(a: Point, b: Point, c: Point, d: Point) -> bool {
    let orient = |p: Point, q: Point, r: Point| (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0]);
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    (d1 * d2 < 0.0) && (d3 * d4 < 0.0)
}

/// True when no two non-adjacent edges cross.
pub fn is_simple(poly: &[Point]) -> bool {
    let n = poly.len();
    for i in 0..n {
        for j in i + 2..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            if segments_intersect(poly[i], poly[(i + 1) % n], poly[j], poly[(j + 1) % n]) {
                return false;
            }
        }
    }
    true
}

/// Cumulative arclength fraction at each vertex (first vertex at 0).
pub fn arclength_params(poly: &[Point]) -> Vec<f64> {
    let total = perimeter(poly);
    let mut t = Vec::with_capacity(poly.len());
    let mut acc = 0.0;
    for i in 0..poly.len() {
        t.push(acc / total);
        acc += dist(poly[i], poly[(i + 1) % poly.len()]);
    }
    t
}

/// Point at arclength fraction `t ∈ [0, 1)` along the boundary.
pub fn point_at(poly: &[Point], params: &[f64], t: f64) -> Point {
    let n = poly.len();
    let t = t.rem_euclid(1.0);
    let mut i = match params.binary_search_by(|v| v.partial_cmp(&t).unwrap()) {
        Ok(i) => i,
        Err(i) => i - 1,
    };
    if i >= n {
        i = n - 1;
    }
    let t0 = params[i];
    let t1 = if i + 1 < n { params[i + 1] } else { 1.0 };
    let s = if t1 > t0 { (t - t0) / (t1 - t0) } else { 0.0 };
    let a = poly[i];
    let b = poly[(i + 1) % n];
    [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])]
}

/// Symmetric Hausdorff distance between two closed polylines, measured
/// from the vertices of each to the edges of the other.
pub fn hausdorff(a: &[Point], b: &[Point]) -> f64 {
    let ab = a.iter().map(|&p| distance_to_boundary(b, p)).fold(0.0, f64::max);
    let ba = b.iter().map(|&p| distance_to_boundary(a, p)).fold(0.0, f64::max);
    ab.max(ba)
}
