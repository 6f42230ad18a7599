//! Error machinery: mesh-to-mesh transfer, region-restricted relative
//! L2/H1 errors, convergence-order fitting and the area-driven pollution
//! factor eta(K).

use crate::error::{Error, Result};
use crate::fem::{bary_point, p1_gradients, FeFunction, QUAD_DEG5};
use crate::mesh::{Mesh, Region};
use std::sync::Arc;

/// Regions over which relative errors are reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorRegion {
    /// D \ K: exterior elements only.
    GlobalMinusK,
    /// K0: defect elements only.
    Defect,
}

impl ErrorRegion {
    fn selects(self, r: Region) -> bool {
        match self {
            ErrorRegion::GlobalMinusK => r == Region::Exterior,
            ErrorRegion::Defect => r == Region::Defect,
        }
    }
}

/// Relative errors on one region.
#[derive(Debug, Clone, Copy)]
pub struct RegionError {
    /// Relative L2 error.
    pub e0: f64,
    /// Relative H1-seminorm error.
    pub e1: f64,
    pub region: ErrorRegion,
}

/// Grid-bucketed point locator over a mesh. Ties on shared edges resolve to
/// the lowest element id.
pub struct ElementLocator<'a> {
    mesh: &'a Mesh,
    lo: [f64; 2],
    cell: [f64; 2],
    grid: usize,
    buckets: Vec<Vec<u32>>,
}

const BARY_TOL: f64 = 1e-12;

impl<'a> ElementLocator<'a> {
    pub fn new(mesh: &'a Mesh) -> ElementLocator<'a> {
        let (lo, hi) = mesh.bbox();
        let grid = ((mesh.num_elements() as f64 / 2.0).sqrt().ceil() as usize).max(1);
        let cell = [
            ((hi[0] - lo[0]) / grid as f64).max(f64::MIN_POSITIVE),
            ((hi[1] - lo[1]) / grid as f64).max(f64::MIN_POSITIVE),
        ];
        let mut buckets = vec![Vec::new(); grid * grid];
        let clamp = |v: isize| -> usize { v.clamp(0, grid as isize - 1) as usize };
        for e in 0..mesh.num_elements() {
            let tri = mesh.element_coords(e);
            let (mut bl, mut bh) = (tri[0], tri[0]);
            for p in &tri[1..] {
                for k in 0..2 {
                    bl[k] = bl[k].min(p[k]);
                    bh[k] = bh[k].max(p[k]);
                }
            }
            let i0 = clamp(((bl[0] - lo[0]) / cell[0]).floor() as isize);
            let i1 = clamp(((bh[0] - lo[0]) / cell[0]).floor() as isize);
            let j0 = clamp(((bl[1] - lo[1]) / cell[1]).floor() as isize);
            let j1 = clamp(((bh[1] - lo[1]) / cell[1]).floor() as isize);
            for j in j0..=j1 {
                for i in i0..=i1 {
                    buckets[j * grid + i].push(e as u32);
                }
            }
        }
        ElementLocator {
            mesh,
            lo,
            cell,
            grid,
            buckets,
        }
    }

    fn barycentric(&self, e: usize, p: [f64; 2]) -> [f64; 3] {
        let [p0, p1, p2] = self.mesh.element_coords(e);
        let det = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p1[1] - p0[1]) * (p2[0] - p0[0]);
        let l1 = ((p[0] - p0[0]) * (p2[1] - p0[1]) - (p[1] - p0[1]) * (p2[0] - p0[0])) / det;
        let l2 = ((p1[0] - p0[0]) * (p[1] - p0[1]) - (p1[1] - p0[1]) * (p[0] - p0[0])) / det;
        [1.0 - l1 - l2, l1, l2]
    }

    /// Containing element (lowest id on ties) and barycentric coordinates.
    pub fn locate(&self, p: [f64; 2]) -> Option<(usize, [f64; 3])> {
        let clamp = |v: isize| -> usize { v.clamp(0, self.grid as isize - 1) as usize };
        let i = clamp(((p[0] - self.lo[0]) / self.cell[0]).floor() as isize);
        let j = clamp(((p[1] - self.lo[1]) / self.cell[1]).floor() as isize);
        for &e in &self.buckets[j * self.grid + i] {
            let b = self.barycentric(e as usize, p);
            if b.iter().all(|&l| l >= -BARY_TOL) {
                return Some((e as usize, b));
            }
        }
        // Rare fallback for points that sit exactly on bucket seams.
        for e in 0..self.mesh.num_elements() {
            let b = self.barycentric(e, p);
            if b.iter().all(|&l| l >= -BARY_TOL) {
                return Some((e, b));
            }
        }
        None
    }
}

/// Evaluates a coarse P1 function at the fine mesh vertices by barycentric
/// interpolation in the containing coarse element.
pub fn transfer_to_fine(coarse: &FeFunction, fine_mesh: &Arc<Mesh>) -> Result<FeFunction> {
    let locator = ElementLocator::new(&coarse.mesh);
    let mut values = Vec::with_capacity(fine_mesh.num_vertices());
    for i in 0..fine_mesh.num_vertices() {
        let p = fine_mesh.vertex(i);
        let (e, b) = locator.locate(p).ok_or_else(|| {
            Error::Geometry(format!(
                "fine vertex {i} at {p:?} lies outside the coarse mesh"
            ))
        })?;
        let idx = coarse.mesh.element(e);
        values.push(
            b[0] * coarse.values[idx[0]] + b[1] * coarse.values[idx[1]] + b[2] * coarse.values[idx[2]],
        );
    }
    FeFunction::from_values(fine_mesh.clone(), values, coarse.time)
}

/// Squared L2 norm and squared H1 seminorm of a P1 field over the elements
/// selected by `pred` (exact element-wise integration).
pub fn region_squared_norms(f: &FeFunction, mut pred: impl FnMut(Region) -> bool) -> (f64, f64) {
    let mesh = &f.mesh;
    let mut l2 = 0.0;
    let mut h1 = 0.0;
    for e in 0..mesh.num_elements() {
        if !pred(mesh.region(e)) {
            continue;
        }
        let area = mesh.area(e);
        let idx = mesh.element(e);
        let v = [f.values[idx[0]], f.values[idx[1]], f.values[idx[2]]];
        l2 += area / 12.0
            * (2.0 * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
                + 2.0 * (v[0] * v[1] + v[1] * v[2] + v[0] * v[2]));
        let g = f.element_gradient(e);
        h1 += area * (g[0] * g[0] + g[1] * g[1]);
    }
    (l2, h1)
}

/// Relative L2 and H1-seminorm errors of `u_num` against `u_ref`, restricted
/// to one region. Both fields must live on the same mesh.
pub fn region_relative_errors(
    u_ref: &FeFunction,
    u_num: &FeFunction,
    region: ErrorRegion,
) -> Result<RegionError> {
    if !Arc::ptr_eq(&u_ref.mesh, &u_num.mesh) {
        return Err(Error::Input(
            "region errors need both fields on the same mesh".into(),
        ));
    }
    let diff = FeFunction {
        mesh: u_ref.mesh.clone(),
        values: u_num
            .values
            .iter()
            .zip(&u_ref.values)
            .map(|(a, b)| a - b)
            .collect(),
        time: u_num.time,
    };
    let (d_l2, d_h1) = region_squared_norms(&diff, |r| region.selects(r));
    let (r_l2, r_h1) = region_squared_norms(u_ref, |r| region.selects(r));
    if r_l2 <= 0.0 || r_h1 <= 0.0 {
        return Err(Error::DegenerateReference(format!(
            "reference norms vanish on {region:?}: l2^2 = {r_l2}, h1^2 = {r_h1}"
        )));
    }
    Ok(RegionError {
        e0: (d_l2 / r_l2).sqrt(),
        e1: (d_h1 / r_h1).sqrt(),
        region,
    })
}

/// Relative L2 and H1-seminorm errors of a P1 field against a closed-form
/// solution, integrated with the degree-5 rule.
pub fn errors_vs_exact(
    f: &FeFunction,
    exact: impl Fn([f64; 2]) -> f64,
    grad_exact: impl Fn([f64; 2]) -> [f64; 2],
) -> (f64, f64) {
    let mesh = &f.mesh;
    let (mut d_l2, mut d_h1, mut r_l2, mut r_h1) = (0.0, 0.0, 0.0, 0.0);
    for e in 0..mesh.num_elements() {
        let tri = mesh.element_coords(e);
        let area = mesh.area(e);
        let (_, grads) = p1_gradients(&tri);
        let idx = mesh.element(e);
        let mut gf = [0.0, 0.0];
        for k in 0..3 {
            gf[0] += f.values[idx[k]] * grads[k][0];
            gf[1] += f.values[idx[k]] * grads[k][1];
        }
        for (bary, w) in &QUAD_DEG5 {
            let x = bary_point(&tri, bary);
            let fv = bary[0] * f.values[idx[0]]
                + bary[1] * f.values[idx[1]]
                + bary[2] * f.values[idx[2]];
            let u = exact(x);
            let gu = grad_exact(x);
            d_l2 += area * w * (fv - u) * (fv - u);
            r_l2 += area * w * u * u;
            let dx = gf[0] - gu[0];
            let dy = gf[1] - gu[1];
            d_h1 += area * w * (dx * dx + dy * dy);
            r_h1 += area * w * (gu[0] * gu[0] + gu[1] * gu[1]);
        }
    }
    ((d_l2 / r_l2).sqrt(), (d_h1 / r_h1).sqrt())
}

/// One fitted-order table row.
#[derive(Debug, Clone, Copy)]
pub struct OrderRow {
    pub parameter: f64,
    pub error: f64,
    /// log(e_prev / e) / log(p_prev / p); absent on the first row.
    pub order: Option<f64>,
}

/// Per-level errors with fitted convergence orders.
#[derive(Debug, Clone)]
pub struct ConvergenceTable {
    pub rows: Vec<OrderRow>,
}

impl ConvergenceTable {
    /// Order fitted from the last two rows.
    pub fn last_order(&self) -> Option<f64> {
        self.rows.last().and_then(|r| r.order)
    }

    /// Least-squares slope of log(error) against log(parameter).
    pub fn least_squares_order(&self) -> Option<f64> {
        if self.rows.len() < 2 {
            return None;
        }
        let logs: Vec<(f64, f64)> = self
            .rows
            .iter()
            .map(|r| (r.parameter.ln(), r.error.ln()))
            .collect();
        let n = logs.len() as f64;
        let mx = logs.iter().map(|(x, _)| x).sum::<f64>() / n;
        let my = logs.iter().map(|(_, y)| y).sum::<f64>() / n;
        let sxy: f64 = logs.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = logs.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
        Some(sxy / sxx)
    }
}

/// Fits pairwise convergence orders from `(parameter, error)` rows with
/// strictly decreasing positive parameters.
pub fn convergence_orders(pairs: &[(f64, f64)]) -> Result<ConvergenceTable> {
    for w in pairs.windows(2) {
        if !(w[1].0 > 0.0 && w[1].0 < w[0].0) {
            return Err(Error::Input(format!(
                "parameters must be strictly decreasing and positive: {} then {}",
                w[0].0, w[1].0
            )));
        }
    }
    for &(_, e) in pairs {
        if !(e > 0.0) {
            return Err(Error::Input(format!("errors must be positive, got {e}")));
        }
    }
    let mut rows = Vec::with_capacity(pairs.len());
    for (i, &(p, e)) in pairs.iter().enumerate() {
        let order = if i == 0 {
            None
        } else {
            let (pp, ep) = pairs[i - 1];
            Some((ep / e).ln() / (pp / p).ln())
        };
        rows.push(OrderRow {
            parameter: p,
            error: e,
            order,
        });
    }
    Ok(ConvergenceTable { rows })
}

/// Pollution factor sqrt(|K| |log |K||) of a region of the given area.
pub fn eta_k(area: f64) -> Result<f64> {
    if !(area > 0.0 && area < 1.0) {
        return Err(Error::Input(format!(
            "eta(K) needs an area in (0, 1), got {area}"
        )));
    }
    Ok((area * area.ln().abs()).sqrt())
}
