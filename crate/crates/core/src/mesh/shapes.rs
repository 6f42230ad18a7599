//! Defect geometry: closed shapes in the unit square and their membership,
//! intersection and size queries.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

fn sub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

fn cross(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    let d = sub(a, b);
    (d[0] * d[0] + d[1] * d[1]).sqrt()
}

fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = sub(b, a);
    let ap = sub(p, a);
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    if len2 == 0.0 {
        return dist(p, a);
    }
    let t = ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0);
    dist(p, [a[0] + t * ab[0], a[1] + t * ab[1]])
}

fn point_in_triangle(p: [f64; 2], tri: &[[f64; 2]; 3]) -> bool {
    // Closed test for CCW triangles.
    let d0 = cross(sub(tri[1], tri[0]), sub(p, tri[0]));
    let d1 = cross(sub(tri[2], tri[1]), sub(p, tri[1]));
    let d2 = cross(sub(tri[0], tri[2]), sub(p, tri[2]));
    d0 >= 0.0 && d1 >= 0.0 && d2 >= 0.0
}

fn segments_intersect(p1: [f64; 2], p2: [f64; 2], q1: [f64; 2], q2: [f64; 2]) -> bool {
    let o1 = cross(sub(p2, p1), sub(q1, p1));
    let o2 = cross(sub(p2, p1), sub(q2, p1));
    let o3 = cross(sub(q2, q1), sub(p1, q1));
    let o4 = cross(sub(q2, q1), sub(p2, q1));
    let on = |a: [f64; 2], b: [f64; 2], c: [f64; 2], o: f64| -> bool {
        o == 0.0
            && c[0] >= a[0].min(b[0])
            && c[0] <= a[0].max(b[0])
            && c[1] >= a[1].min(b[1])
            && c[1] <= a[1].max(b[1])
    };
    if (o1 > 0.0) != (o2 > 0.0) && o1 != 0.0 && o2 != 0.0 && (o3 > 0.0) != (o4 > 0.0) && o3 != 0.0 && o4 != 0.0 {
        return true;
    }
    on(p1, p2, q1, o1) || on(p1, p2, q2, o2) || on(q1, q2, p1, o3) || on(q1, q2, p2, o4)
}

/// A closed planar shape used to describe defect regions.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    /// Axis-aligned rectangle `[min, max]`.
    Rect { min: [f64; 2], max: [f64; 2] },
    /// Simple polygon, counterclockwise.
    Polygon { vertices: Vec<[f64; 2]> },
    /// Ellipse with semi-axes along the coordinate directions.
    Ellipse { center: [f64; 2], semi_axes: [f64; 2] },
}

impl Shape {
    /// Closed membership test.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        match self {
            Shape::Rect { min, max } => {
                p[0] >= min[0] && p[0] <= max[0] && p[1] >= min[1] && p[1] <= max[1]
            }
            Shape::Ellipse { center, semi_axes } => {
                let u = (p[0] - center[0]) / semi_axes[0];
                let v = (p[1] - center[1]) / semi_axes[1];
                u * u + v * v <= 1.0
            }
            Shape::Polygon { vertices } => {
                let n = vertices.len();
                // Boundary counts as inside.
                for i in 0..n {
                    let a = vertices[i];
                    let b = vertices[(i + 1) % n];
                    if cross(sub(b, a), sub(p, a)) == 0.0
                        && p[0] >= a[0].min(b[0])
                        && p[0] <= a[0].max(b[0])
                        && p[1] >= a[1].min(b[1])
                        && p[1] <= a[1].max(b[1])
                    {
                        return true;
                    }
                }
                let mut inside = false;
                for i in 0..n {
                    let a = vertices[i];
                    let b = vertices[(i + 1) % n];
                    if (a[1] > p[1]) != (b[1] > p[1]) {
                        let xi = a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
                        if p[0] < xi {
                            inside = !inside;
                        }
                    }
                }
                inside
            }
        }
    }

    pub fn bbox(&self) -> ([f64; 2], [f64; 2]) {
        match self {
            Shape::Rect { min, max } => (*min, *max),
            Shape::Ellipse { center, semi_axes } => (
                [center[0] - semi_axes[0], center[1] - semi_axes[1]],
                [center[0] + semi_axes[0], center[1] + semi_axes[1]],
            ),
            Shape::Polygon { vertices } => {
                let mut min = [f64::INFINITY; 2];
                let mut max = [f64::NEG_INFINITY; 2];
                for v in vertices {
                    for k in 0..2 {
                        min[k] = min[k].min(v[k]);
                        max[k] = max[k].max(v[k]);
                    }
                }
                (min, max)
            }
        }
    }

    pub fn diameter(&self) -> f64 {
        match self {
            Shape::Rect { min, max } => dist(*min, *max),
            Shape::Ellipse { semi_axes, .. } => 2.0 * semi_axes[0].max(semi_axes[1]),
            Shape::Polygon { vertices } => {
                let mut d = 0.0f64;
                for i in 0..vertices.len() {
                    for j in (i + 1)..vertices.len() {
                        d = d.max(dist(vertices[i], vertices[j]));
                    }
                }
                d
            }
        }
    }

    /// Size of the smallest feature a mesh must resolve: rectangle side,
    /// ellipse semi-axis, polygon edge.
    pub fn min_feature(&self) -> f64 {
        match self {
            Shape::Rect { min, max } => (max[0] - min[0]).min(max[1] - min[1]),
            Shape::Ellipse { semi_axes, .. } => semi_axes[0].min(semi_axes[1]),
            Shape::Polygon { vertices } => {
                let n = vertices.len();
                (0..n)
                    .map(|i| dist(vertices[i], vertices[(i + 1) % n]))
                    .fold(f64::INFINITY, f64::min)
            }
        }
    }

    /// Exact closed intersection test against a CCW triangle.
    pub fn intersects_triangle(&self, tri: &[[f64; 2]; 3]) -> bool {
        match self {
            Shape::Rect { min, max } => {
                let quad = [
                    [min[0], min[1]],
                    [max[0], min[1]],
                    [max[0], max[1]],
                    [min[0], max[1]],
                ];
                convex_overlap(&quad, tri)
            }
            Shape::Ellipse { center, semi_axes } => {
                // Scale space so the ellipse becomes the unit circle.
                let mapped = [
                    [
                        (tri[0][0] - center[0]) / semi_axes[0],
                        (tri[0][1] - center[1]) / semi_axes[1],
                    ],
                    [
                        (tri[1][0] - center[0]) / semi_axes[0],
                        (tri[1][1] - center[1]) / semi_axes[1],
                    ],
                    [
                        (tri[2][0] - center[0]) / semi_axes[0],
                        (tri[2][1] - center[1]) / semi_axes[1],
                    ],
                ];
                let origin = [0.0, 0.0];
                if point_in_triangle_any_orientation(origin, &mapped) {
                    return true;
                }
                (0..3)
                    .map(|i| point_segment_distance(origin, mapped[i], mapped[(i + 1) % 3]))
                    .fold(f64::INFINITY, f64::min)
                    <= 1.0
            }
            Shape::Polygon { vertices } => {
                if tri.iter().any(|&p| self.contains(p)) {
                    return true;
                }
                if vertices.iter().any(|&p| point_in_triangle(p, tri)) {
                    return true;
                }
                let n = vertices.len();
                for i in 0..n {
                    let a = vertices[i];
                    let b = vertices[(i + 1) % n];
                    for j in 0..3 {
                        if segments_intersect(a, b, tri[j], tri[(j + 1) % 3]) {
                            return true;
                        }
                    }
                }
                false
            }
        }
    }

    /// Distance from a point to the shape boundary. Exact for rectangles
    /// and polygons; for ellipses the scaled radial gap is used, which is
    /// within a factor of the true distance and adequate for blending
    /// weights.
    pub fn boundary_distance(&self, p: [f64; 2]) -> f64 {
        match self {
            Shape::Rect { min, max } => {
                let inside = self.contains(p);
                if inside {
                    (p[0] - min[0])
                        .min(max[0] - p[0])
                        .min(p[1] - min[1])
                        .min(max[1] - p[1])
                } else {
                    let dx = (min[0] - p[0]).max(0.0).max(p[0] - max[0]);
                    let dy = (min[1] - p[1]).max(0.0).max(p[1] - max[1]);
                    f64::hypot(dx, dy)
                }
            }
            Shape::Polygon { vertices } => {
                let n = vertices.len();
                (0..n)
                    .map(|i| point_segment_distance(p, vertices[i], vertices[(i + 1) % n]))
                    .fold(f64::INFINITY, f64::min)
            }
            Shape::Ellipse { center, semi_axes } => {
                let u = (p[0] - center[0]) / semi_axes[0];
                let v = (p[1] - center[1]) / semi_axes[1];
                let r = f64::hypot(u, v);
                (r - 1.0).abs() * semi_axes[0].min(semi_axes[1])
            }
        }
    }

    /// Ellipse scaled about its center; identity for other shapes.
    pub fn scaled_axes(&self, factor: f64) -> Shape {
        match self {
            Shape::Ellipse { center, semi_axes } => Shape::Ellipse {
                center: *center,
                semi_axes: [semi_axes[0] * factor, semi_axes[1] * factor],
            },
            other => other.clone(),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            Shape::Rect { min, max } => min[0] < max[0] && min[1] < max[1],
            Shape::Ellipse { semi_axes, .. } => semi_axes[0] > 0.0 && semi_axes[1] > 0.0,
            Shape::Polygon { vertices } => {
                vertices.len() >= 3 && {
                    let n = vertices.len();
                    let area2: f64 = (0..n)
                        .map(|i| cross(vertices[i], vertices[(i + 1) % n]))
                        .sum();
                    area2 > 0.0 // simple and counterclockwise
                }
            }
        };
        if !ok {
            return Err(Error::Geometry(format!("degenerate shape: {self:?}")));
        }
        let (lo, hi) = self.bbox();
        if lo[0] <= 0.0 || lo[1] <= 0.0 || hi[0] >= 1.0 || hi[1] >= 1.0 {
            return Err(Error::Geometry(format!(
                "shape must lie strictly inside the open unit square: {self:?}"
            )));
        }
        Ok(())
    }
}

fn point_in_triangle_any_orientation(p: [f64; 2], tri: &[[f64; 2]; 3]) -> bool {
    let d0 = cross(sub(tri[1], tri[0]), sub(p, tri[0]));
    let d1 = cross(sub(tri[2], tri[1]), sub(p, tri[1]));
    let d2 = cross(sub(tri[0], tri[2]), sub(p, tri[2]));
    (d0 >= 0.0 && d1 >= 0.0 && d2 >= 0.0) || (d0 <= 0.0 && d1 <= 0.0 && d2 <= 0.0)
}

/// Separating-axis overlap test for two convex CCW polygons (closed sets).
fn convex_overlap(a: &[[f64; 2]], b: &[[f64; 2]]) -> bool {
    for (poly, other) in [(a, b), (b, a)] {
        let n = poly.len();
        for i in 0..n {
            let e = sub(poly[(i + 1) % n], poly[i]);
            let axis = [-e[1], e[0]];
            let proj = |pts: &[[f64; 2]]| -> (f64, f64) {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for p in pts {
                    let d = p[0] * axis[0] + p[1] * axis[1];
                    lo = lo.min(d);
                    hi = hi.max(d);
                }
                (lo, hi)
            };
            let (alo, ahi) = proj(poly);
            let (blo, bhi) = proj(other);
            if ahi < blo || bhi < alo {
                return false;
            }
        }
    }
    true
}

/// Membership of a point in a union of closed shapes.
pub fn point_in_shapes(p: [f64; 2], shapes: &[Shape]) -> bool {
    shapes.iter().any(|s| s.contains(p))
}

/// Named defect families from the benchmark suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefectKind {
    Well,
    LShape,
    Porous,
    Custom,
}

/// A defect region: the core set K0 and, optionally, an explicit buffer K.
/// When `k_shapes` is absent, K is built by one-element-layer dilation of
/// the K0 elements on a given mesh.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DefectGeometry {
    pub kind: DefectKind,
    pub k0_shapes: Vec<Shape>,
    pub k_shapes: Option<Vec<Shape>>,
    /// diam K0 (largest component diameter for multi-component defects).
    pub diameter_d: f64,
}

impl DefectGeometry {
    /// Square defect K0 = [0.45, 0.55]^2 with buffer K = [0.44, 0.56]^2.
    pub fn well() -> DefectGeometry {
        DefectGeometry {
            kind: DefectKind::Well,
            k0_shapes: vec![Shape::Rect {
                min: [0.45, 0.45],
                max: [0.55, 0.55],
            }],
            k_shapes: Some(vec![Shape::Rect {
                min: [0.44, 0.44],
                max: [0.56, 0.56],
            }]),
            diameter_d: f64::hypot(0.1, 0.1),
        }
    }

    /// L-shaped defect with a 0.015-thick buffer layer.
    pub fn l_shape() -> DefectGeometry {
        let k0 = vec![
            [0.4, 0.4],
            [0.73, 0.4],
            [0.73, 0.43],
            [0.43, 0.43],
            [0.43, 0.73],
            [0.4, 0.73],
        ];
        let k = vec![
            [0.385, 0.385],
            [0.745, 0.385],
            [0.745, 0.445],
            [0.445, 0.445],
            [0.445, 0.745],
            [0.385, 0.745],
        ];
        let shape = Shape::Polygon { vertices: k0 };
        let d = shape.diameter();
        DefectGeometry {
            kind: DefectKind::LShape,
            k0_shapes: vec![shape],
            k_shapes: Some(vec![Shape::Polygon { vertices: k }]),
            diameter_d: d,
        }
    }

    /// Six-ellipse porous defect. The buffer ellipses share centers with
    /// the core ones; their semi-axes are the published per-ellipse values
    /// (1.4 times the core axes, except the fifth ellipse whose published
    /// y semi-axis is 0.0875).
    pub fn porous() -> DefectGeometry {
        let centers = [
            [0.2, 0.8],
            [0.2, 0.2],
            [0.4, 0.8],
            [0.5, 0.2],
            [0.7, 0.6],
            [0.9, 0.1],
        ];
        let k0_axes = [
            [0.0125, 0.025],
            [0.0125, 0.05],
            [0.025, 0.025],
            [0.05, 0.0125],
            [0.025, 0.0725],
            [0.025, 0.025],
        ];
        let k_axes = [
            [0.0175, 0.035],
            [0.0175, 0.07],
            [0.035, 0.035],
            [0.07, 0.0175],
            [0.035, 0.0875],
            [0.035, 0.035],
        ];
        let ellipses = |axes: &[[f64; 2]; 6]| -> Vec<Shape> {
            centers
                .iter()
                .zip(axes.iter())
                .map(|(&center, &semi_axes)| Shape::Ellipse { center, semi_axes })
                .collect()
        };
        let k0 = ellipses(&k0_axes);
        let d = k0.iter().map(Shape::diameter).fold(0.0, f64::max);
        DefectGeometry {
            kind: DefectKind::Porous,
            k0_shapes: k0,
            k_shapes: Some(ellipses(&k_axes)),
            diameter_d: d,
        }
    }

    /// User-provided shapes. `k_shapes`, when given, must cover `k0_shapes`.
    pub fn custom(k0_shapes: Vec<Shape>, k_shapes: Option<Vec<Shape>>) -> Result<DefectGeometry> {
        if k0_shapes.is_empty() {
            return Err(Error::Config("custom defect has an empty shape list".into()));
        }
        let d = k0_shapes.iter().map(Shape::diameter).fold(0.0, f64::max);
        let geom = DefectGeometry {
            kind: DefectKind::Custom,
            k0_shapes,
            k_shapes,
            diameter_d: d,
        };
        geom.validate()?;
        Ok(geom)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k0_shapes.is_empty() {
            return Err(Error::Config("defect has an empty shape list".into()));
        }
        for s in self.k0_shapes.iter().chain(self.k_shapes.iter().flatten()) {
            s.validate()?;
        }
        if self.kind == DefectKind::Porous {
            // Pairwise disjoint components, checked on bounding boxes.
            for i in 0..self.k0_shapes.len() {
                for j in (i + 1)..self.k0_shapes.len() {
                    let (alo, ahi) = self.k0_shapes[i].bbox();
                    let (blo, bhi) = self.k0_shapes[j].bbox();
                    let disjoint =
                        ahi[0] < blo[0] || bhi[0] < alo[0] || ahi[1] < blo[1] || bhi[1] < alo[1];
                    if !disjoint {
                        return Err(Error::Geometry(format!(
                            "porous defect shapes {i} and {j} are not disjoint"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Smallest feature among the K0 shapes; drives the mesh resolution rule.
    pub fn min_feature(&self) -> f64 {
        self.k0_shapes
            .iter()
            .map(Shape::min_feature)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn in_k0(&self, p: [f64; 2]) -> bool {
        point_in_shapes(p, &self.k0_shapes)
    }

    /// Shapes driving local refinement: the explicit K when present,
    /// otherwise K0.
    pub fn refinement_shapes(&self) -> &[Shape] {
        match &self.k_shapes {
            Some(k) => k,
            None => &self.k0_shapes,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rect_membership_is_closed() {
        let r = Shape::Rect {
            min: [0.45, 0.45],
            max: [0.55, 0.55],
        };
        assert!(r.contains([0.5, 0.5]));
        assert!(r.contains([0.45, 0.5])); // boundary
        assert!(!r.contains([0.1, 0.1]));
    }

    #[test]
    fn polygon_membership_l_shape() {
        let l = DefectGeometry::l_shape();
        assert!(l.in_k0([0.41, 0.5])); // vertical arm
        assert!(l.in_k0([0.6, 0.41])); // horizontal arm
        assert!(!l.in_k0([0.6, 0.6])); // notch
        assert!(l.in_k0([0.4, 0.4])); // corner vertex, closed
    }

    #[test]
    fn ellipse_triangle_intersection() {
        let e = Shape::Ellipse {
            center: [0.5, 0.5],
            semi_axes: [0.1, 0.05],
        };
        // Far triangle.
        assert!(!e.intersects_triangle(&[[0.1, 0.1], [0.2, 0.1], [0.1, 0.2]]));
        // Triangle containing the center.
        assert!(e.intersects_triangle(&[[0.4, 0.4], [0.7, 0.4], [0.4, 0.7]]));
        // Edge tangent to the ellipse at (0.6, 0.5).
        assert!(e.intersects_triangle(&[[0.6, 0.3], [0.9, 0.5], [0.6, 0.7]]));
        // Shifted just off the boundary: no intersection.
        assert!(!e.intersects_triangle(&[[0.62, 0.3], [0.9, 0.5], [0.62, 0.7]]));
    }

    #[test]
    fn rect_triangle_touching_counts() {
        let r = Shape::Rect {
            min: [0.5, 0.25],
            max: [0.75, 0.5],
        };
        // Shares only the vertex (0.5, 0.5).
        assert!(r.intersects_triangle(&[[0.25, 0.5], [0.5, 0.5], [0.25, 0.75]]));
        assert!(!r.intersects_triangle(&[[0.25, 0.5], [0.45, 0.5], [0.25, 0.75]]));
    }

    #[test]
    fn porous_geometry_is_valid_and_disjoint() {
        let p = DefectGeometry::porous();
        p.validate().unwrap();
        assert_eq!(p.k0_shapes.len(), 6);
        assert_eq!(p.k_shapes.as_ref().unwrap().len(), 6);
    }

    #[test]
    fn custom_rejects_empty_and_outside_shapes() {
        assert!(DefectGeometry::custom(vec![], None).is_err());
        let outside = Shape::Rect {
            min: [0.9, 0.9],
            max: [1.1, 1.1],
        };
        assert!(DefectGeometry::custom(vec![outside], None).is_err());
    }
}
