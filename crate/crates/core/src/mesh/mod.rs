//! Conforming triangulations of the unit square with local refinement near a
//! defect region, plus element classification into K0 / K\K0 / D\K.

mod refine;
mod shapes;
pub mod io;

pub use shapes::{point_in_shapes, DefectGeometry, DefectKind, Shape};

use crate::error::{Error, Result};
use refine::{triangle_diameter_sq, Refiner};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Default cap on generated vertices (~16.7M).
pub const DEFAULT_VERTEX_CAP: usize = 1 << 24;

/// Shape-regularity bound: element diameter over inradius.
pub const SHAPE_REGULARITY_BOUND: f64 = 10.0;

/// Per-element region tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Region {
    /// Inside the defect core K0.
    Defect,
    /// Inside the buffer K \ K0.
    Layer,
    /// The rest of the domain, D \ K.
    Exterior,
}

impl Region {
    pub fn to_index(self) -> u8 {
        match self {
            Region::Exterior => 0,
            Region::Layer => 1,
            Region::Defect => 2,
        }
    }

    pub fn from_index(i: u8) -> Result<Region> {
        match i {
            0 => Ok(Region::Exterior),
            1 => Ok(Region::Layer),
            2 => Ok(Region::Defect),
            other => Err(Error::Input(format!("unknown region code {other}"))),
        }
    }
}

/// Immutable conforming triangle mesh.
#[derive(Debug, Clone)]
pub struct Mesh {
    vertices: Vec<[f64; 2]>,
    elements: Vec<[usize; 3]>,
    boundary: Vec<bool>,
    region: Vec<Region>,
    h_local: Vec<f64>,
}

impl Mesh {
    /// Builds a mesh from raw vertex and element arrays. Checks indices,
    /// orientation and conformity; derives boundary flags from the edge
    /// incidence counts. All elements start tagged `Exterior`.
    pub fn from_raw(vertices: Vec<[f64; 2]>, elements: Vec<[usize; 3]>) -> Result<Mesh> {
        let nv = vertices.len();
        if nv < 3 || elements.is_empty() {
            return Err(Error::Mesh("mesh needs at least one triangle".into()));
        }
        for (e, tri) in elements.iter().enumerate() {
            for &v in tri {
                if v >= nv {
                    return Err(Error::Mesh(format!(
                        "element {e} references vertex {v} out of range {nv}"
                    )));
                }
            }
        }
        let mut mesh = Mesh {
            vertices,
            elements,
            boundary: vec![false; nv],
            region: Vec::new(),
            h_local: Vec::new(),
        };
        mesh.region = vec![Region::Exterior; mesh.elements.len()];
        for (e, tri) in mesh.elements.iter().enumerate() {
            let a = signed_area(
                mesh.vertices[tri[0]],
                mesh.vertices[tri[1]],
                mesh.vertices[tri[2]],
            );
            if a <= 0.0 {
                return Err(Error::Mesh(format!(
                    "element {e} is degenerate or clockwise (signed area {a:.3e})"
                )));
            }
        }
        mesh.h_local = (0..mesh.elements.len())
            .map(|e| triangle_diameter_sq(&mesh.element_coords(e)).sqrt())
            .collect();

        // Conformity scan; boundary edges have exactly one incident element.
        let mut edge_count: HashMap<(usize, usize), u32> = HashMap::new();
        for tri in &mesh.elements {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                let key = if a < b { (a, b) } else { (b, a) };
                *edge_count.entry(key).or_insert(0) += 1;
            }
        }
        for (&(a, b), &count) in &edge_count {
            match count {
                1 => {
                    mesh.boundary[a] = true;
                    mesh.boundary[b] = true;
                }
                2 => {}
                n => {
                    return Err(Error::Mesh(format!(
                        "edge ({a}, {b}) is shared by {n} elements; mesh is not conforming"
                    )));
                }
            }
        }
        Ok(mesh)
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn vertex(&self, i: usize) -> [f64; 2] {
        self.vertices[i]
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn element(&self, e: usize) -> [usize; 3] {
        self.elements[e]
    }

    pub fn elements(&self) -> &[[usize; 3]] {
        &self.elements
    }

    pub fn element_coords(&self, e: usize) -> [[f64; 2]; 3] {
        let [a, b, c] = self.elements[e];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn is_boundary_vertex(&self, i: usize) -> bool {
        self.boundary[i]
    }

    pub fn boundary_flags(&self) -> &[bool] {
        &self.boundary
    }

    pub fn boundary_vertices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.num_vertices()).filter(|&i| self.boundary[i])
    }

    pub fn region(&self, e: usize) -> Region {
        self.region[e]
    }

    pub fn regions(&self) -> &[Region] {
        &self.region
    }

    pub fn barycenter(&self, e: usize) -> [f64; 2] {
        let [a, b, c] = self.element_coords(e);
        [
            (a[0] + b[0] + c[0]) / 3.0,
            (a[1] + b[1] + c[1]) / 3.0,
        ]
    }

    pub fn area(&self, e: usize) -> f64 {
        let [a, b, c] = self.element_coords(e);
        signed_area(a, b, c)
    }

    /// Element diameter (longest edge).
    pub fn diameter(&self, e: usize) -> f64 {
        self.h_local[e]
    }

    pub fn max_diameter(&self) -> f64 {
        self.h_local.iter().copied().fold(0.0, f64::max)
    }

    /// Largest diameter among elements selected by the predicate.
    pub fn max_diameter_where(&self, mut pred: impl FnMut(usize) -> bool) -> f64 {
        (0..self.num_elements())
            .filter(|&e| pred(e))
            .map(|e| self.h_local[e])
            .fold(0.0, f64::max)
    }

    pub fn total_area(&self) -> f64 {
        (0..self.num_elements()).map(|e| self.area(e)).sum()
    }

    pub fn bbox(&self) -> ([f64; 2], [f64; 2]) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for v in &self.vertices {
            for k in 0..2 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        (lo, hi)
    }

    pub fn region_area(&self, region: Region) -> f64 {
        (0..self.num_elements())
            .filter(|&e| self.region[e] == region)
            .map(|e| self.area(e))
            .sum()
    }

    /// Elements tagged Defect or Layer, i.e. the buffer region K.
    pub fn k_elements(&self) -> Vec<usize> {
        (0..self.num_elements())
            .filter(|&e| matches!(self.region[e], Region::Defect | Region::Layer))
            .collect()
    }

    /// Vertex-to-element incidence.
    pub fn vertex_incidence(&self) -> Vec<Vec<u32>> {
        let mut inc = vec![Vec::new(); self.num_vertices()];
        for (e, tri) in self.elements.iter().enumerate() {
            for &v in tri {
                inc[v].push(e as u32);
            }
        }
        inc
    }

    /// Structural and quality invariants: conformity (checked on
    /// construction), positive orientation, shape regularity, area
    /// partition of the bounding box, and one region tag per element.
    pub fn validate(&self) -> Result<()> {
        for e in 0..self.num_elements() {
            let [a, b, c] = self.element_coords(e);
            let area = signed_area(a, b, c);
            if area <= 0.0 {
                return Err(Error::Mesh(format!("element {e} has non-positive area")));
            }
            let per = dist(a, b) + dist(b, c) + dist(c, a);
            let inradius = 2.0 * area / per;
            let ratio = self.h_local[e] / inradius;
            if ratio > SHAPE_REGULARITY_BOUND {
                return Err(Error::Mesh(format!(
                    "element {e} violates shape regularity: diameter/inradius = {ratio:.2}"
                )));
            }
        }
        let (lo, hi) = self.bbox();
        let bbox_area = (hi[0] - lo[0]) * (hi[1] - lo[1]);
        let total = self.total_area();
        if (total - bbox_area).abs() > 1e-12 * bbox_area.max(1.0) {
            return Err(Error::Mesh(format!(
                "element areas sum to {total} but the bounding box has area {bbox_area}"
            )));
        }
        if self.region.len() != self.num_elements() {
            return Err(Error::Mesh("region tags do not cover all elements".into()));
        }
        Ok(())
    }

    /// Unit-square specific checks: geometric boundary flags and the exact
    /// area partition.
    pub fn validate_unit_square(&self) -> Result<()> {
        self.validate()?;
        let on_boundary = |p: [f64; 2]| {
            p[0].abs() < 1e-12
                || (p[0] - 1.0).abs() < 1e-12
                || p[1].abs() < 1e-12
                || (p[1] - 1.0).abs() < 1e-12
        };
        for i in 0..self.num_vertices() {
            if self.boundary[i] != on_boundary(self.vertices[i]) {
                return Err(Error::Mesh(format!(
                    "vertex {i} boundary flag disagrees with its position {:?}",
                    self.vertices[i]
                )));
            }
        }
        if (self.total_area() - 1.0).abs() > 1e-12 {
            return Err(Error::Mesh("unit square mesh area differs from 1".into()));
        }
        Ok(())
    }

    /// Largest diameter ratio across any interior edge; NVB keeps this
    /// below sqrt(2).
    pub fn max_neighbor_diameter_ratio(&self) -> f64 {
        let mut edge_elems: HashMap<(usize, usize), [u32; 2]> = HashMap::new();
        let mut counts: HashMap<(usize, usize), u8> = HashMap::new();
        for (e, tri) in self.elements.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                let key = if a < b { (a, b) } else { (b, a) };
                let slot = edge_elems.entry(key).or_insert([0, 0]);
                let c = counts.entry(key).or_insert(0);
                slot[*c as usize] = e as u32;
                *c += 1;
            }
        }
        let mut worst = 1.0f64;
        for (key, &count) in &counts {
            if count == 2 {
                let [e0, e1] = edge_elems[key];
                let (d0, d1) = (self.h_local[e0 as usize], self.h_local[e1 as usize]);
                worst = worst.max(d0.max(d1) / d0.min(d1));
            }
        }
        worst
    }

    fn set_regions(&mut self, regions: Vec<Region>) {
        debug_assert_eq!(regions.len(), self.num_elements());
        self.region = regions;
    }
}

fn signed_area(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    f64::hypot(a[0] - b[0], a[1] - b[1])
}

/// Structured triangulation of an axis-aligned rectangle: nx-by-ny cells,
/// each split along the `p00 -> p11` diagonal. Vertex `(i, j)` has index
/// `j * (nx + 1) + i`.
pub(crate) fn structured_rect_mesh(
    lo: [f64; 2],
    hi: [f64; 2],
    nx: usize,
    ny: usize,
) -> Result<Mesh> {
    if nx == 0 || ny == 0 {
        return Err(Error::Input("subdivision count must be at least 1".into()));
    }
    if hi[0] <= lo[0] || hi[1] <= lo[1] {
        return Err(Error::Geometry(format!(
            "rectangle [{:?}, {:?}] is degenerate",
            lo, hi
        )));
    }
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            let x = lo[0] + (hi[0] - lo[0]) * (i as f64) / (nx as f64);
            let y = lo[1] + (hi[1] - lo[1]) * (j as f64) / (ny as f64);
            vertices.push([x, y]);
        }
    }
    let v = |i: usize, j: usize| j * (nx + 1) + i;
    let mut elements = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let p00 = v(i, j);
            let p10 = v(i + 1, j);
            let p01 = v(i, j + 1);
            let p11 = v(i + 1, j + 1);
            // Refinement edge = diagonal, newest vertex = right-angle corner.
            elements.push([p11, p00, p10]);
            elements.push([p00, p11, p01]);
        }
    }
    Mesh::from_raw(vertices, elements)
}

/// Uniform structured triangulation of the unit square: `(n+1)^2` vertices
/// and `2 n^2` right triangles.
pub fn build_structured_mesh(n: usize) -> Result<Mesh> {
    build_structured_mesh_with_cap(n, DEFAULT_VERTEX_CAP)
}

pub fn build_structured_mesh_with_cap(n: usize, vertex_cap: usize) -> Result<Mesh> {
    if n == 0 {
        return Err(Error::Input("subdivision count must be at least 1".into()));
    }
    if (n + 1) * (n + 1) > vertex_cap {
        return Err(Error::Capacity(format!(
            "structured mesh with n = {n} needs {} vertices, cap is {vertex_cap}",
            (n + 1) * (n + 1)
        )));
    }
    structured_rect_mesh([0.0, 0.0], [1.0, 1.0], n, n)
}

/// Controls for the locally refined mesh builder. `h_coarse` is the target
/// cell size away from the defect (the sweep parameter H), `h_fine` the
/// target cell size for elements meeting K (the parameter h). Element
/// diameters are at most sqrt(2) times the respective cell size.
#[derive(Debug, Clone)]
pub struct MeshSpec {
    pub h_coarse: f64,
    pub h_fine: f64,
    /// Upper bound on the diameter ratio of edge-adjacent elements the
    /// caller is willing to accept. NVB yields at most sqrt(2).
    pub grading_ratio: f64,
    pub defect: DefectGeometry,
    pub vertex_cap: usize,
}

impl MeshSpec {
    pub fn new(h_coarse: f64, h_fine: f64, defect: DefectGeometry) -> MeshSpec {
        MeshSpec {
            h_coarse,
            h_fine,
            grading_ratio: 2.0,
            defect,
            vertex_cap: DEFAULT_VERTEX_CAP,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h_fine > 0.0 && self.h_fine <= self.h_coarse && self.h_coarse <= 0.25) {
            return Err(Error::Config(format!(
                "mesh sizes must satisfy 0 < h ({}) <= H ({}) <= 1/4",
                self.h_fine, self.h_coarse
            )));
        }
        if self.grading_ratio < 2.0 {
            return Err(Error::Config(format!(
                "grading ratio {} must be at least 2",
                self.grading_ratio
            )));
        }
        self.defect.validate()?;
        let feature = self.defect.min_feature();
        if self.h_fine > feature / 4.0 + 1e-12 {
            return Err(Error::Config(format!(
                "h = {} does not resolve the defect: smallest shape feature is {} and at \
                 least 4 elements across it are required (h <= {})",
                self.h_fine,
                feature,
                feature / 4.0
            )));
        }
        Ok(())
    }
}

fn diam_exceeds(tri: &[[f64; 2]; 3], cell_size: f64) -> bool {
    // Diameter bound sqrt(2) * cell size, compared squared.
    triangle_diameter_sq(tri) > 2.0 * cell_size * cell_size * (1.0 + 1e-12)
}

/// Uniform NVB refinement of a structured `n0` grid until every element
/// diameter is at most sqrt(2) times `h_target`. The result refines every
/// adaptive mesh grown from the same base grid.
pub fn build_uniform_refined(n0: usize, h_target: f64, vertex_cap: usize) -> Result<Mesh> {
    let base = build_structured_mesh_with_cap(n0, vertex_cap)?;
    let mut refiner = Refiner::new(base.vertices().to_vec(), base.elements().to_vec(), vertex_cap);
    refiner.refine_where(|tri| diam_exceeds(tri, h_target))?;
    let (vertices, elements) = refiner.into_parts();
    Mesh::from_raw(vertices, elements)
}

/// Builds the locally refined unit-square mesh: a uniform coarse grid of
/// cell size `h_coarse`, with elements meeting the defect buffer K bisected
/// until their cell size reaches `h_fine`.
pub fn build_locally_refined_mesh(spec: &MeshSpec) -> Result<Mesh> {
    spec.validate()?;
    let n0 = (1.0 / spec.h_coarse - 1e-12).ceil() as usize;
    let base = build_structured_mesh_with_cap(n0, spec.vertex_cap)?;
    let mut refiner = Refiner::new(
        base.vertices().to_vec(),
        base.elements().to_vec(),
        spec.vertex_cap,
    );

    let shapes = spec.defect.refinement_shapes().to_vec();
    let h_fine = spec.h_fine;
    refiner.refine_where(|tri| {
        diam_exceeds(tri, h_fine) && shapes.iter().any(|s| s.intersects_triangle(tri))
    })?;

    let (vertices, elements) = refiner.into_parts();
    let mesh = Mesh::from_raw(vertices, elements)?;
    let mesh = tag_regions(mesh, &spec.defect)?;
    mesh.validate_unit_square()?;
    Ok(mesh)
}

/// Tags every element by the position of its barycenter: `Defect` inside the
/// closed set K0, `Layer` inside K \ K0, `Exterior` otherwise. With no
/// explicit K, the layer is the one-element dilation ring around the K0
/// elements.
pub fn tag_regions(mut mesh: Mesh, defect: &DefectGeometry) -> Result<Mesh> {
    let ne = mesh.num_elements();
    let mut regions = vec![Region::Exterior; ne];
    for e in 0..ne {
        if defect.in_k0(mesh.barycenter(e)) {
            regions[e] = Region::Defect;
        }
    }
    mesh.set_regions(regions);

    match &defect.k_shapes {
        Some(k_shapes) => {
            let mut regions = mesh.region.clone();
            let mut any_defect = false;
            for e in 0..ne {
                match regions[e] {
                    Region::Defect => any_defect = true,
                    _ => {
                        if point_in_shapes(mesh.barycenter(e), k_shapes) {
                            regions[e] = Region::Layer;
                        }
                    }
                }
            }
            if !any_defect {
                return Err(Error::Geometry(
                    "defect unresolved: no element barycenter lies in K0".into(),
                ));
            }
            mesh.set_regions(regions);
        }
        None => {
            let k = dilate_defect(&mesh, defect)?;
            let mut regions = mesh.region.clone();
            for e in k {
                if regions[e] == Region::Exterior {
                    regions[e] = Region::Layer;
                }
            }
            mesh.set_regions(regions);
        }
    }
    Ok(mesh)
}

/// One-element-layer dilation: K = K0 elements plus every element sharing at
/// least one vertex with a K0 element. Each defect shape (connected
/// component) is dilated separately; the union is returned sorted.
///
/// Requires `Defect` tags to be present; an empty defect aborts the run.
pub fn dilate_defect(mesh: &Mesh, defect: &DefectGeometry) -> Result<Vec<usize>> {
    let ne = mesh.num_elements();
    let any_defect = (0..ne).any(|e| mesh.region(e) == Region::Defect);
    if !any_defect {
        return Err(Error::Geometry(
            "defect unresolved: no element barycenter lies in K0".into(),
        ));
    }
    let incidence = mesh.vertex_incidence();
    let mut in_k = vec![false; ne];
    for shape in &defect.k0_shapes {
        let core: Vec<usize> = (0..ne)
            .filter(|&e| mesh.region(e) == Region::Defect && shape.contains(mesh.barycenter(e)))
            .collect();
        for &e in &core {
            in_k[e] = true;
            for &v in &mesh.element(e) {
                for &nb in &incidence[v] {
                    in_k[nb as usize] = true;
                }
            }
        }
    }
    let k: Vec<usize> = (0..ne).filter(|&e| in_k[e]).collect();
    if k.iter().any(|&e| {
        mesh.element(e)
            .iter()
            .any(|&v| mesh.is_boundary_vertex(v))
    }) {
        log::warn!(
            "dilated buffer K reaches the domain boundary although the defect is interior; \
             the mesh is too coarse around K0"
        );
    }
    Ok(k)
}
