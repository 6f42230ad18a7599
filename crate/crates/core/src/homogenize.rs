//! Effective-coefficient approximation by HMM cell problems: local elliptic
//! solves on small cells whose averaged flux defines the effective tensor.

use crate::coefficient::{Coefficient, CoefficientField, SymTensor2};
use crate::error::{Error, Result};
use crate::fem::{assemble_gradient_form, assemble_stiffness, bary_point, QUAD_DEG2};
use crate::linalg::{cg_solve, SolverOptions, SparseMatrix};
use crate::mesh::{structured_rect_mesh, Mesh, Region};
use rayon::prelude::*;
use std::fmt::Write as _;
use std::path::Path;

/// Cell boundary condition for the corrector problems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellBc {
    /// v_j - x_j periodic over the cell; exact for periodic media when the
    /// cell spans a full period.
    Periodic,
    /// v_j = x_j on the cell boundary.
    Dirichlet,
}

impl std::fmt::Display for CellBc {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CellBc::Periodic => write!(f, "periodic"),
            CellBc::Dirichlet => write!(f, "dirichlet"),
        }
    }
}

/// One cell problem: a square cell of side `delta` centered at `center`,
/// meshed by `cell_n` subdivisions per side (clipped to the unit square when
/// it overlaps the boundary).
#[derive(Debug, Clone)]
pub struct CellProblemSpec {
    pub center: [f64; 2],
    pub delta: f64,
    pub bc: CellBc,
    pub cell_n: usize,
}

impl CellProblemSpec {
    fn validate(&self, micro_eps: Option<f64>) -> Result<()> {
        if self.delta <= 0.0 {
            return Err(Error::Config(format!(
                "cell size delta must be positive, got {}",
                self.delta
            )));
        }
        if self.cell_n < 8 {
            return Err(Error::Config(format!(
                "cell_n must be at least 8, got {}",
                self.cell_n
            )));
        }
        if let Some(eps) = micro_eps {
            let needed = (8.0 * self.delta / eps).ceil() as usize;
            if self.cell_n < needed {
                return Err(Error::Config(format!(
                    "cell_n = {} does not resolve the microscale: need at least {needed} \
                     for delta = {} and eps = {eps}",
                    self.cell_n, self.delta
                )));
            }
        }
        Ok(())
    }
}

/// Solves the two corrector problems on one cell and returns the averaged
/// flux tensor, symmetrized as (A + A')/2.
pub fn solve_cell_problem(spec: &CellProblemSpec, micro: &CoefficientField) -> Result<SymTensor2> {
    spec.validate(micro.epsilon())?;
    let mut lo = [
        (spec.center[0] - 0.5 * spec.delta).max(0.0),
        (spec.center[1] - 0.5 * spec.delta).max(0.0),
    ];
    let mut hi = [
        (spec.center[0] + 0.5 * spec.delta).min(1.0),
        (spec.center[1] + 0.5 * spec.delta).min(1.0),
    ];
    // Snap to the domain when the cell only grazes it.
    for k in 0..2 {
        if hi[k] - lo[k] <= 0.0 {
            lo[k] = lo[k].min(hi[k]);
            hi[k] = lo[k];
        }
    }
    if hi[0] - lo[0] < 1e-9 || hi[1] - lo[1] < 1e-9 {
        return Err(Error::Geometry(format!(
            "cell at {:?} with delta {} degenerates after clipping to the unit square",
            spec.center, spec.delta
        )));
    }

    let mesh = structured_rect_mesh(lo, hi, spec.cell_n, spec.cell_n)?;
    let cell_area = (hi[0] - lo[0]) * (hi[1] - lo[1]);
    let opts = SolverOptions {
        tol: 1e-12,
        ..Default::default()
    };

    let mut columns = [[0.0f64; 2]; 2];
    for j in 0..2 {
        let dir = if j == 0 { [1.0, 0.0] } else { [0.0, 1.0] };
        let w = match spec.bc {
            CellBc::Dirichlet => solve_corrector_dirichlet(&mesh, micro, dir, &opts)?,
            CellBc::Periodic => solve_corrector_periodic(&mesh, micro, dir, spec.cell_n, &opts)?,
        };

        // Averaged flux a (e_j + grad w).
        let mut flux = [0.0f64; 2];
        for e in 0..mesh.num_elements() {
            let tri = mesh.element_coords(e);
            let area = mesh.area(e);
            let (_, grads) = crate::fem::p1_gradients(&tri);
            let idx = mesh.element(e);
            let mut gw = [0.0, 0.0];
            for k in 0..3 {
                gw[0] += w[idx[k]] * grads[k][0];
                gw[1] += w[idx[k]] * grads[k][1];
            }
            let g = [dir[0] + gw[0], dir[1] + gw[1]];
            let wq = area / 3.0;
            for bary in &QUAD_DEG2 {
                let x = bary_point(&tri, bary);
                let f = micro.value(x).apply(g);
                flux[0] += wq * f[0];
                flux[1] += wq * f[1];
            }
        }
        columns[j] = [flux[0] / cell_area, flux[1] / cell_area];
    }

    let a12 = columns[1][0];
    let a21 = columns[0][1];
    let norm = columns[0][0].abs().max(columns[1][1].abs()).max(1e-300);
    if (a12 - a21).abs() > 1e-8 * norm {
        log::warn!(
            "cell at {:?}: averaged flux tensor asymmetric by {:.3e} (relative); the cell \
             mesh is likely under-resolved",
            spec.center,
            (a12 - a21).abs() / norm
        );
    }
    let tensor = SymTensor2::new(columns[0][0], 0.5 * (a12 + a21), columns[1][1]);
    if !tensor.is_positive_definite() {
        return Err(Error::Solver {
            message: format!(
                "cell problem at {:?} produced a non-positive-definite tensor {tensor:?}",
                spec.center
            ),
            iterations: 0,
            residual: f64::NAN,
        });
    }
    Ok(tensor)
}

/// Corrector with w = 0 on the cell boundary.
fn solve_corrector_dirichlet(
    mesh: &Mesh,
    micro: &CoefficientField,
    dir: [f64; 2],
    opts: &SolverOptions,
) -> Result<Vec<f64>> {
    let stiffness = assemble_stiffness(mesh, micro)?.eliminate_dirichlet(mesh.boundary_flags())?;
    let mut rhs = assemble_gradient_form(mesh, micro, move |_, _| dir);
    for r in rhs.iter_mut() {
        *r = -*r;
    }
    crate::fem::zero_dirichlet(mesh, &mut rhs);
    let (w, report) = cg_solve(&stiffness, &rhs, None, opts)?;
    if !report.converged {
        return Err(Error::Solver {
            message: "cell corrector (dirichlet) did not converge".into(),
            iterations: report.iterations,
            residual: report.relative_residual,
        });
    }
    Ok(w)
}

/// Corrector periodic over the cell; the constant mode is pinned at the
/// lower-left corner.
fn solve_corrector_periodic(
    mesh: &Mesh,
    micro: &CoefficientField,
    dir: [f64; 2],
    n: usize,
    opts: &SolverOptions,
) -> Result<Vec<f64>> {
    let nv = mesh.num_vertices();
    debug_assert_eq!(nv, (n + 1) * (n + 1));
    // Vertex (i, j) -> representative (i mod n, j mod n), compact id j*n + i.
    let compact_of = |v: usize| -> usize {
        let i = v % (n + 1);
        let j = v / (n + 1);
        (j % n) * n + (i % n)
    };
    let n_compact = n * n;

    let full = assemble_stiffness(mesh, micro)?;
    let mut triplets = Vec::with_capacity(full.nnz());
    for r in 0..nv {
        for (c, v) in full.row(r) {
            triplets.push((compact_of(r), compact_of(c), v));
        }
    }
    let folded = SparseMatrix::from_triplets(n_compact, &triplets)?;
    let mut pin = vec![false; n_compact];
    pin[0] = true;
    let system = folded.eliminate_dirichlet(&pin)?;

    let full_rhs = assemble_gradient_form(mesh, micro, move |_, _| dir);
    let mut rhs = vec![0.0; n_compact];
    for (v, val) in full_rhs.iter().enumerate() {
        rhs[compact_of(v)] -= val;
    }
    rhs[0] = 0.0;

    let (w_compact, report) = cg_solve(&system, &rhs, None, opts)?;
    if !report.converged {
        return Err(Error::Solver {
            message: "cell corrector (periodic) did not converge".into(),
            iterations: report.iterations,
            residual: report.relative_residual,
        });
    }
    Ok((0..nv).map(|v| w_compact[compact_of(v)]).collect())
}

/// How sample points for the effective field are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingPolicy {
    /// One cell problem per non-defect element, sampled at its barycenter.
    PerElement,
    /// Cell problems at the centers of an n-by-n patch grid over the unit
    /// square; every point in a patch shares its tensor. Mesh independent.
    PatchGrid(usize),
}

/// Policy for [`assemble_effective_field`].
#[derive(Debug, Clone, Copy)]
pub struct EffectivePolicy {
    pub delta: f64,
    pub bc: CellBc,
    pub cell_n: usize,
    pub sampling: SamplingPolicy,
}

impl EffectivePolicy {
    /// Periodic cells of size eps; the default when the microscale is known.
    pub fn periodic_default(eps: f64) -> EffectivePolicy {
        EffectivePolicy {
            delta: eps,
            bc: CellBc::Periodic,
            cell_n: 32,
            sampling: SamplingPolicy::PerElement,
        }
    }

    fn header_line(&self, coefficient_id: &str) -> String {
        let sampling = match self.sampling {
            SamplingPolicy::PerElement => "per_element".to_string(),
            SamplingPolicy::PatchGrid(n) => format!("patch:{n}"),
        };
        format!(
            "delta={} bc={} cell_n={} sampling={sampling} coefficient={coefficient_id}",
            self.delta, self.bc, self.cell_n
        )
    }
}

enum Storage {
    /// Tensor per element; defect elements carry no sample.
    PerElement(Vec<Option<SymTensor2>>),
    /// Row-major j*n + i tensors over the unit square.
    PatchGrid { n: usize, tensors: Vec<SymTensor2> },
}

/// Piecewise-constant effective tensor field produced by HMM sampling.
pub struct EffectiveField {
    storage: Storage,
    lambda: f64,
    lambda_max: f64,
    header: String,
}

impl Coefficient for EffectiveField {
    fn eval(&self, elem: usize, x: [f64; 2]) -> SymTensor2 {
        match &self.storage {
            Storage::PerElement(samples) => samples[elem].unwrap_or_else(|| {
                panic!("effective field queried on unsampled (defect) element {elem}")
            }),
            Storage::PatchGrid { n, tensors } => {
                let i = ((x[0] * *n as f64).floor() as usize).min(n - 1);
                let j = ((x[1] * *n as f64).floor() as usize).min(n - 1);
                tensors[j * n + i]
            }
        }
    }

    fn bounds(&self) -> (f64, f64) {
        (self.lambda, self.lambda_max)
    }
}

impl EffectiveField {
    fn from_storage(storage: Storage, header: String) -> EffectiveField {
        let mut lambda = f64::INFINITY;
        let mut lambda_max = 0.0f64;
        let each = |t: &SymTensor2, lambda: &mut f64, lambda_max: &mut f64| {
            let (lo, hi) = t.eigen_bounds();
            *lambda = lambda.min(lo);
            *lambda_max = lambda_max.max(hi);
        };
        match &storage {
            Storage::PerElement(samples) => {
                for t in samples.iter().flatten() {
                    each(t, &mut lambda, &mut lambda_max);
                }
            }
            Storage::PatchGrid { tensors, .. } => {
                for t in tensors {
                    each(t, &mut lambda, &mut lambda_max);
                }
            }
        }
        EffectiveField {
            storage,
            lambda,
            lambda_max,
            header,
        }
    }

    /// Bypass mode: samples an analytic tensor field at element barycenters
    /// instead of solving cell problems.
    pub fn bypass(mesh: &Mesh, field: &CoefficientField) -> EffectiveField {
        let samples: Vec<Option<SymTensor2>> = (0..mesh.num_elements())
            .map(|e| Some(field.value(mesh.barycenter(e))))
            .collect();
        EffectiveField::from_storage(
            Storage::PerElement(samples),
            format!("bypass coefficient={}", field.description()),
        )
    }

    pub fn sample(&self, elem: usize) -> Option<SymTensor2> {
        match &self.storage {
            Storage::PerElement(samples) => samples[elem],
            Storage::PatchGrid { .. } => None,
        }
    }

    /// Writes the sampled tensors with the policy header; text rows are
    /// `id a11 a12 a22`.
    pub fn save_cache(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        let _ = writeln!(out, "# effective-field cache");
        let _ = writeln!(out, "{}", self.header);
        match &self.storage {
            Storage::PerElement(samples) => {
                let _ = writeln!(out, "per_element {}", samples.len());
                for (e, t) in samples.iter().enumerate() {
                    if let Some(t) = t {
                        let _ = writeln!(out, "{e} {} {} {}", t.a11, t.a12, t.a22);
                    }
                }
            }
            Storage::PatchGrid { n, tensors } => {
                let _ = writeln!(out, "patch {n}");
                for (e, t) in tensors.iter().enumerate() {
                    let _ = writeln!(out, "{e} {} {} {}", t.a11, t.a12, t.a22);
                }
            }
        }
        std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
    }

    /// Reads a cache written by [`EffectiveField::save_cache`]; fails if the
    /// stored policy header differs from the expected one.
    pub fn load_cache(
        path: &Path,
        policy: &EffectivePolicy,
        coefficient_id: &str,
    ) -> Result<EffectiveField> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut lines = text.lines();
        let _banner = lines.next();
        let header = lines
            .next()
            .ok_or_else(|| Error::Input("cache file missing policy header".into()))?
            .to_string();
        let expected = policy.header_line(coefficient_id);
        if header != expected {
            return Err(Error::Input(format!(
                "cache policy mismatch: file has `{header}`, expected `{expected}`"
            )));
        }
        let mode = lines
            .next()
            .ok_or_else(|| Error::Input("cache file missing mode line".into()))?;
        let mut parts = mode.split_whitespace();
        let kind = parts.next().unwrap_or("");
        let count: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Input("cache mode line lacks a count".into()))?;
        let mut rows = Vec::new();
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            let mut p = line.split_whitespace();
            let id: usize = p
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Input("bad cache row id".into()))?;
            let vals: Vec<f64> = p.filter_map(|s| s.parse().ok()).collect();
            if vals.len() != 3 {
                return Err(Error::Input("cache row needs 3 tensor entries".into()));
            }
            rows.push((id, SymTensor2::new(vals[0], vals[1], vals[2])));
        }
        let storage = match kind {
            "per_element" => {
                let mut samples = vec![None; count];
                for (id, t) in rows {
                    if id >= count {
                        return Err(Error::Input(format!("cache row id {id} out of range")));
                    }
                    samples[id] = Some(t);
                }
                Storage::PerElement(samples)
            }
            "patch" => {
                let mut tensors = vec![SymTensor2::identity(); count * count];
                if rows.len() != count * count {
                    return Err(Error::Input("patch cache is incomplete".into()));
                }
                for (id, t) in rows {
                    if id >= count * count {
                        return Err(Error::Input(format!("cache row id {id} out of range")));
                    }
                    tensors[id] = t;
                }
                Storage::PatchGrid { n: count, tensors }
            }
            other => return Err(Error::Input(format!("unknown cache mode {other}"))),
        };
        Ok(EffectiveField::from_storage(storage, header))
    }
}

/// Samples the effective tensor by cell problems, one per non-defect
/// element or one per patch. Cell problems are independent and run on the
/// current rayon pool; each writes its own slot, so results do not depend
/// on the thread count.
pub fn assemble_effective_field(
    mesh: &Mesh,
    micro: &CoefficientField,
    policy: &EffectivePolicy,
) -> Result<EffectiveField> {
    if let Some(eps) = micro.epsilon() {
        if policy.delta < eps * (1.0 - 1e-12) {
            return Err(Error::Config(format!(
                "cell size delta = {} must be at least eps = {eps}",
                policy.delta
            )));
        }
    }
    let header = policy.header_line(micro.description());
    let storage = match policy.sampling {
        SamplingPolicy::PerElement => {
            let samples: Vec<Option<SymTensor2>> = (0..mesh.num_elements())
                .into_par_iter()
                .map(|e| {
                    if mesh.region(e) == Region::Defect {
                        return Ok(None);
                    }
                    let spec = CellProblemSpec {
                        center: mesh.barycenter(e),
                        delta: policy.delta,
                        bc: policy.bc,
                        cell_n: policy.cell_n,
                    };
                    solve_cell_problem(&spec, micro)
                        .map(Some)
                        .map_err(|err| {
                            Error::Solver {
                                message: format!("effective sample for element {e}: {err}"),
                                iterations: 0,
                                residual: f64::NAN,
                            }
                        })
                })
                .collect::<Result<Vec<_>>>()?;
            Storage::PerElement(samples)
        }
        SamplingPolicy::PatchGrid(n) => {
            if n == 0 {
                return Err(Error::Config("patch grid needs at least one patch".into()));
            }
            let tensors: Vec<SymTensor2> = (0..n * n)
                .into_par_iter()
                .map(|p| {
                    let (i, j) = (p % n, p / n);
                    let spec = CellProblemSpec {
                        center: [(i as f64 + 0.5) / n as f64, (j as f64 + 0.5) / n as f64],
                        delta: policy.delta,
                        bc: policy.bc,
                        cell_n: policy.cell_n,
                    };
                    solve_cell_problem(&spec, micro).map_err(|err| Error::Solver {
                        message: format!("effective sample for patch ({i}, {j}): {err}"),
                        iterations: 0,
                        residual: f64::NAN,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Storage::PatchGrid { n, tensors }
        }
    };
    Ok(EffectiveField::from_storage(storage, header))
}

/// Worst-case spectral-norm deviation `max |A - A_H|` over the barycenters
/// of exterior (D \ K) elements.
pub fn e_hmm_report(a_h: &EffectiveField, analytic: &CoefficientField, mesh: &Mesh) -> f64 {
    let mut worst = 0.0f64;
    for e in 0..mesh.num_elements() {
        if mesh.region(e) != Region::Exterior {
            continue;
        }
        let x = mesh.barycenter(e);
        let diff = analytic.value(x).sub(&a_h.eval(e, x));
        worst = worst.max(diff.spectral_norm());
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficient::{two_scale_coefficient, two_scale_effective};
    use crate::mesh::{build_structured_mesh, tag_regions, DefectGeometry};
    use std::f64::consts::PI;

    fn spec_at(center: [f64; 2], delta: f64, bc: CellBc, cell_n: usize) -> CellProblemSpec {
        CellProblemSpec {
            center,
            delta,
            bc,
            cell_n,
        }
    }

    #[test]
    fn constant_coefficient_is_exact() {
        let c = CoefficientField::constant(2.75).unwrap();
        for bc in [CellBc::Dirichlet, CellBc::Periodic] {
            let t = solve_cell_problem(&spec_at([0.5, 0.5], 0.1, bc, 16), &c).unwrap();
            assert!((t.a11 - 2.75).abs() < 1e-10, "{t:?}");
            assert!((t.a22 - 2.75).abs() < 1e-10);
            assert!(t.a12.abs() < 1e-10);
        }
    }

    fn laminate() -> CoefficientField {
        // Alternating {4, 1} on equal halves of each eps-period in x;
        // interfaces land on the cell mesh lines of an aligned cell.
        let eps = 0.25;
        CoefficientField::from_fn(
            move |x| {
                let frac = (x[0] / eps).fract();
                let v = if (0.0..0.5).contains(&frac) { 1.0 } else { 4.0 };
                SymTensor2::scalar(v)
            },
            1.0,
            4.0,
            Some(eps),
            "laminate{1,4}",
        )
    }

    #[test]
    fn laminate_recovers_harmonic_and_arithmetic_means() {
        // Closed-form homogenization of a 1D laminate: harmonic mean across
        // the layers, arithmetic mean along them.
        let harmonic = 1.0 / (0.5 / 1.0 + 0.5 / 4.0);
        let arithmetic = 0.5 * (1.0 + 4.0);
        let t = solve_cell_problem(
            &spec_at([0.5, 0.5], 0.25, CellBc::Periodic, 16),
            &laminate(),
        )
        .unwrap();
        assert!((t.a11 - harmonic).abs() / harmonic < 0.01, "{t:?}");
        assert!((t.a22 - arithmetic).abs() / arithmetic < 0.01, "{t:?}");
        assert!(t.a12.abs() < 1e-9);
        // Mesh-aligned interfaces make the P1 corrector exact.
        assert!((t.a11 - harmonic).abs() < 1e-9, "{t:?}");
    }

    #[test]
    fn two_scale_cell_matches_analytic_effective() {
        let micro = two_scale_coefficient(0.04, 2.5, 1.5).unwrap();
        let analytic = two_scale_effective(2.5, 1.5).unwrap();
        let x = [0.25, 0.25];
        let t = solve_cell_problem(&spec_at(x, 0.04, CellBc::Periodic, 32), &micro).unwrap();
        let a = analytic.value(x);
        let rel = t.sub(&a).spectral_norm() / a.spectral_norm();
        assert!(rel < 0.02, "relative deviation {rel}");
    }

    #[test]
    fn cell_convergence_under_mesh_refinement() {
        // Purely periodic separable coefficient with a known effective
        // tensor 0.2 I; the error must drop at least linearly in cell_n.
        let delta = 0.25;
        let (r1, r2) = (2.5, 1.5);
        let c = CoefficientField::from_fn(
            move |x| {
                let g1 = r1 + r2 * (2.0 * PI * x[0] / delta).sin();
                let g2 = r1 + r2 * (2.0 * PI * x[1] / delta).sin();
                SymTensor2::scalar(1.0 / (g1 * g2))
            },
            1.0 / 16.0,
            1.0,
            Some(delta),
            "periodic separable",
        );
        let exact = 1.0 / (r1 * (r1 * r1 - r2 * r2).sqrt());
        let mut errs = Vec::new();
        for n in [8usize, 16, 32] {
            let t =
                solve_cell_problem(&spec_at([0.5, 0.5], delta, CellBc::Periodic, n), &c).unwrap();
            errs.push((t.a11 - exact).abs().max((t.a22 - exact).abs()));
        }
        assert!(errs[0] / errs[1] >= 2.0, "errors {errs:?}");
        assert!(errs[1] / errs[2] >= 2.0, "errors {errs:?}");
    }

    #[test]
    fn eigenvalues_stay_within_micro_bounds() {
        let micro = two_scale_coefficient(0.04, 2.5, 1.5).unwrap();
        let (lambda, lambda_max) = crate::coefficient::Coefficient::bounds(&micro);
        for center in [[0.3, 0.3], [0.6, 0.4], [0.5, 0.7]] {
            let t =
                solve_cell_problem(&spec_at(center, 0.04, CellBc::Periodic, 32), &micro).unwrap();
            let (lo, hi) = t.eigen_bounds();
            assert!(lo >= lambda * 0.95, "lo {lo} vs lambda {lambda}");
            assert!(hi <= lambda_max * 1.05, "hi {hi} vs Lambda {lambda_max}");
        }
    }

    #[test]
    fn cell_determinism() {
        let micro = two_scale_coefficient(0.04, 2.5, 1.5).unwrap();
        let spec = spec_at([0.37, 0.61], 0.04, CellBc::Periodic, 16);
        let a = solve_cell_problem(&spec, &micro).unwrap();
        let b = solve_cell_problem(&spec, &micro).unwrap();
        assert_eq!(a.a11.to_bits(), b.a11.to_bits());
        assert_eq!(a.a12.to_bits(), b.a12.to_bits());
        assert_eq!(a.a22.to_bits(), b.a22.to_bits());
    }

    #[test]
    fn degenerate_cell_box_errors() {
        let c = CoefficientField::constant(1.0).unwrap();
        let err = solve_cell_problem(&spec_at([2.0, 2.0], 0.1, CellBc::Dirichlet, 16), &c)
            .unwrap_err();
        assert!(matches!(err, Error::Geometry(_)));

        // Corner cell survives clipping to a quarter box.
        let t = solve_cell_problem(&spec_at([0.0, 0.0], 0.2, CellBc::Dirichlet, 16), &c).unwrap();
        assert!((t.a11 - 1.0).abs() < 1e-10);
    }

    #[test]
    fn under_resolved_cell_is_rejected() {
        let micro = two_scale_coefficient(0.01, 2.5, 1.5).unwrap();
        // delta = 5 eps needs cell_n >= 40.
        let err = solve_cell_problem(&spec_at([0.5, 0.5], 0.05, CellBc::Periodic, 16), &micro)
            .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn per_element_field_constant_micro() {
        let defect = crate::mesh::DefectGeometry::custom(
            vec![crate::mesh::Shape::Rect {
                min: [0.3, 0.3],
                max: [0.7, 0.7],
            }],
            None,
        )
        .unwrap();
        let mesh = build_structured_mesh(8).unwrap();
        let mesh = tag_regions(mesh, &defect).unwrap();
        let c = CoefficientField::constant(1.5).unwrap();
        let policy = EffectivePolicy {
            delta: 0.1,
            bc: CellBc::Dirichlet,
            cell_n: 8,
            sampling: SamplingPolicy::PerElement,
        };
        let field = assemble_effective_field(&mesh, &c, &policy).unwrap();
        for e in 0..mesh.num_elements() {
            if mesh.region(e) != Region::Defect {
                let t = field.sample(e).unwrap();
                assert!((t.a11 - 1.5).abs() < 1e-9);
                assert!((t.a22 - 1.5).abs() < 1e-9);
            } else {
                assert!(field.sample(e).is_none());
            }
        }
    }

    #[test]
    fn single_patch_field_is_spatially_constant() {
        let mesh = build_structured_mesh(4).unwrap();
        let micro = two_scale_coefficient(0.25, 2.5, 1.5).unwrap();
        let policy = EffectivePolicy {
            delta: 0.25,
            bc: CellBc::Periodic,
            cell_n: 32,
            sampling: SamplingPolicy::PatchGrid(1),
        };
        let field = assemble_effective_field(&mesh, &micro, &policy).unwrap();
        let first = field.eval(0, [0.1, 0.1]);
        for e in 0..mesh.num_elements() {
            assert_eq!(field.eval(e, mesh.barycenter(e)), first);
        }
    }

    #[test]
    fn e_hmm_vanishes_for_bypass_and_constant() {
        let mesh = build_structured_mesh(8).unwrap();
        let mesh = tag_regions(mesh, &DefectGeometry::well()).unwrap();
        let analytic = two_scale_effective(2.5, 1.5).unwrap();
        let bypass = EffectiveField::bypass(&mesh, &analytic);
        assert_eq!(e_hmm_report(&bypass, &analytic, &mesh), 0.0);

        let c = CoefficientField::constant(2.0).unwrap();
        let policy = EffectivePolicy {
            delta: 0.1,
            bc: CellBc::Dirichlet,
            cell_n: 8,
            sampling: SamplingPolicy::PerElement,
        };
        let field = assemble_effective_field(&mesh, &c, &policy).unwrap();
        assert!(e_hmm_report(&field, &c, &mesh) < 1e-9);
    }

    #[test]
    fn e_hmm_small_for_two_scale_at_delta_eps() {
        let mesh = build_structured_mesh(8).unwrap();
        let mesh = tag_regions(mesh, &DefectGeometry::well()).unwrap();
        let micro = two_scale_coefficient(0.04, 2.5, 1.5).unwrap();
        let analytic = two_scale_effective(2.5, 1.5).unwrap();
        let field =
            assemble_effective_field(&mesh, &micro, &EffectivePolicy::periodic_default(0.04))
                .unwrap();
        let e = e_hmm_report(&field, &analytic, &mesh);
        // Worst analytic magnitude is 3.2; tolerance 5% of that.
        assert!(e <= 0.05 * 3.2, "e(HMM) = {e}");

        // Per-element samples also stay within 3% relative of the analytic
        // tensor.
        let mut worst_rel: f64 = 0.0;
        for e in 0..mesh.num_elements() {
            if let Some(t) = field.sample(e) {
                let a = analytic.value(mesh.barycenter(e));
                worst_rel = worst_rel.max(t.sub(&a).spectral_norm() / a.spectral_norm());
            }
        }
        assert!(worst_rel <= 0.03, "max relative deviation {worst_rel}");
    }

    #[test]
    fn cache_round_trip() {
        let dir = std::env::temp_dir().join("glocal_cache_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("eff.txt");

        let mesh = build_structured_mesh(4).unwrap();
        let micro = two_scale_coefficient(0.25, 2.5, 1.5).unwrap();
        let policy = EffectivePolicy {
            delta: 0.25,
            bc: CellBc::Periodic,
            cell_n: 16,
            sampling: SamplingPolicy::PatchGrid(2),
        };
        let field = assemble_effective_field(&mesh, &micro, &policy).unwrap();
        field.save_cache(&path).unwrap();
        let loaded = EffectiveField::load_cache(&path, &policy, micro.description()).unwrap();
        for p in [[0.2, 0.2], [0.8, 0.3], [0.4, 0.9]] {
            assert_eq!(field.eval(0, p), loaded.eval(0, p));
        }

        // A different policy must be rejected.
        let other = EffectivePolicy {
            cell_n: 32,
            ..policy
        };
        assert!(EffectiveField::load_cache(&path, &other, micro.description()).is_err());
    }
}
