//! P1 Lagrange finite element core: mass/stiffness/load assembly, symmetric
//! Dirichlet elimination, the elliptic initial projection and the backward
//! Euler time march.

use crate::coefficient::Coefficient;
use crate::error::{Error, Result};
use crate::linalg::{cg_solve, SolverOptions, SparseMatrix};
use crate::mesh::Mesh;
use std::sync::Arc;

/// Degree-2 interior quadrature rule in barycentric coordinates, weight
/// `area / 3` per point. Interior points keep piecewise-constant
/// coefficients with interfaces on mesh lines evaluated on the correct side.
pub(crate) const QUAD_DEG2: [[f64; 3]; 3] = [
    [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0],
    [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
    [1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0],
];

/// Degree-5 seven-point rule as (barycentric coords, weight) with weights
/// summing to one; used for error integrals against closed-form fields.
pub(crate) const QUAD_DEG5: [([f64; 3], f64); 7] = [
    ([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], 0.225),
    (
        [0.059715871789770, 0.470142064105115, 0.470142064105115],
        0.132394152788506,
    ),
    (
        [0.470142064105115, 0.059715871789770, 0.470142064105115],
        0.132394152788506,
    ),
    (
        [0.470142064105115, 0.470142064105115, 0.059715871789770],
        0.132394152788506,
    ),
    (
        [0.797426985353087, 0.101286507323456, 0.101286507323456],
        0.125939180544827,
    ),
    (
        [0.101286507323456, 0.797426985353087, 0.101286507323456],
        0.125939180544827,
    ),
    (
        [0.101286507323456, 0.101286507323456, 0.797426985353087],
        0.125939180544827,
    ),
];

pub(crate) fn bary_point(tri: &[[f64; 2]; 3], bary: &[f64; 3]) -> [f64; 2] {
    [
        bary[0] * tri[0][0] + bary[1] * tri[1][0] + bary[2] * tri[2][0],
        bary[0] * tri[0][1] + bary[1] * tri[1][1] + bary[2] * tri[2][1],
    ]
}

/// Area and the three constant P1 basis gradients of a triangle.
pub(crate) fn p1_gradients(tri: &[[f64; 2]; 3]) -> (f64, [[f64; 2]; 3]) {
    let [p0, p1, p2] = *tri;
    let det = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p1[1] - p0[1]) * (p2[0] - p0[0]);
    let area = 0.5 * det;
    let g = [
        [(p1[1] - p2[1]) / det, (p2[0] - p1[0]) / det],
        [(p2[1] - p0[1]) / det, (p0[0] - p2[0]) / det],
        [(p0[1] - p1[1]) / det, (p1[0] - p0[0]) / det],
    ];
    (area, g)
}

/// Piecewise linear scalar field: one nodal value per mesh vertex.
#[derive(Debug, Clone)]
pub struct FeFunction {
    pub mesh: Arc<Mesh>,
    pub values: Vec<f64>,
    pub time: Option<f64>,
}

impl FeFunction {
    pub fn zeros(mesh: Arc<Mesh>) -> FeFunction {
        let n = mesh.num_vertices();
        FeFunction {
            mesh,
            values: vec![0.0; n],
            time: None,
        }
    }

    pub fn from_values(mesh: Arc<Mesh>, values: Vec<f64>, time: Option<f64>) -> Result<FeFunction> {
        if values.len() != mesh.num_vertices() {
            return Err(Error::Input(format!(
                "nodal vector length {} does not match vertex count {}",
                values.len(),
                mesh.num_vertices()
            )));
        }
        Ok(FeFunction { mesh, values, time })
    }

    /// Nodal interpolant of a closed-form function.
    pub fn interpolate(
        mesh: Arc<Mesh>,
        f: impl Fn([f64; 2]) -> f64,
        time: Option<f64>,
    ) -> FeFunction {
        let values = (0..mesh.num_vertices()).map(|i| f(mesh.vertex(i))).collect();
        FeFunction { mesh, values, time }
    }

    /// Constant gradient on one element.
    pub fn element_gradient(&self, e: usize) -> [f64; 2] {
        let tri = self.mesh.element_coords(e);
        let (_, g) = p1_gradients(&tri);
        let idx = self.mesh.element(e);
        let mut out = [0.0, 0.0];
        for k in 0..3 {
            out[0] += self.values[idx[k]] * g[k][0];
            out[1] += self.values[idx[k]] * g[k][1];
        }
        out
    }
}

/// Stiffness matrix for the bilinear form `(a grad u, grad v)`; the
/// coefficient is sampled at the degree-2 quadrature points of each element.
pub fn assemble_stiffness(mesh: &Mesh, coeff: &dyn Coefficient) -> Result<SparseMatrix> {
    let mut triplets = Vec::with_capacity(9 * mesh.num_elements());
    for e in 0..mesh.num_elements() {
        let tri = mesh.element_coords(e);
        let (area, g) = p1_gradients(&tri);
        if area <= 0.0 {
            return Err(Error::Mesh(format!("element {e} has non-positive area")));
        }
        let idx = mesh.element(e);
        let w = area / 3.0;
        let mut local = [[0.0f64; 3]; 3];
        for bary in &QUAD_DEG2 {
            let x = bary_point(&tri, bary);
            let a = coeff.eval(e, x);
            let flux = [g[0], g[1], g[2]].map(|gi| a.apply(gi));
            for i in 0..3 {
                for j in 0..3 {
                    local[i][j] += w * (g[i][0] * flux[j][0] + g[i][1] * flux[j][1]);
                }
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                triplets.push((idx[i], idx[j], local[i][j]));
            }
        }
    }
    SparseMatrix::from_triplets(mesh.num_vertices(), &triplets)
}

/// Consistent (non-lumped) mass matrix, assembled from the exact local
/// matrix `area/12 * [[2,1,1],[1,2,1],[1,1,2]]`.
pub fn assemble_mass(mesh: &Mesh) -> Result<SparseMatrix> {
    let mut triplets = Vec::with_capacity(9 * mesh.num_elements());
    for e in 0..mesh.num_elements() {
        let area = mesh.area(e);
        if area <= 0.0 {
            return Err(Error::Mesh(format!("element {e} has non-positive area")));
        }
        let idx = mesh.element(e);
        for i in 0..3 {
            for j in 0..3 {
                let v = if i == j { area / 6.0 } else { area / 12.0 };
                triplets.push((idx[i], idx[j], v));
            }
        }
    }
    SparseMatrix::from_triplets(mesh.num_vertices(), &triplets)
}

/// Load vector `(f, phi_i)` by the degree-2 element rule.
pub fn assemble_load(mesh: &Mesh, f: impl Fn([f64; 2]) -> f64) -> Vec<f64> {
    let mut load = vec![0.0; mesh.num_vertices()];
    for e in 0..mesh.num_elements() {
        let tri = mesh.element_coords(e);
        let area = mesh.area(e);
        let idx = mesh.element(e);
        let w = area / 3.0;
        for bary in &QUAD_DEG2 {
            let x = bary_point(&tri, bary);
            let fv = f(x);
            for i in 0..3 {
                load[idx[i]] += w * fv * bary[i];
            }
        }
    }
    load
}

/// Right-hand side `(a g, grad phi_i)` for a per-element vector field `g`.
/// Drives both the initial projection (g = grad u0) and the HMM cell loads
/// (g = a coordinate direction).
pub fn assemble_gradient_form(
    mesh: &Mesh,
    coeff: &dyn Coefficient,
    g: impl Fn(usize, [f64; 2]) -> [f64; 2],
) -> Vec<f64> {
    let mut rhs = vec![0.0; mesh.num_vertices()];
    for e in 0..mesh.num_elements() {
        let tri = mesh.element_coords(e);
        let (area, grads) = p1_gradients(&tri);
        let idx = mesh.element(e);
        let w = area / 3.0;
        for bary in &QUAD_DEG2 {
            let x = bary_point(&tri, bary);
            let flux = coeff.eval(e, x).apply(g(e, x));
            for i in 0..3 {
                rhs[idx[i]] += w * (flux[0] * grads[i][0] + flux[1] * grads[i][1]);
            }
        }
    }
    rhs
}

/// Zeroes the entries of `v` at Dirichlet (boundary) vertices.
pub fn zero_dirichlet(mesh: &Mesh, v: &mut [f64]) {
    for (i, flag) in mesh.boundary_flags().iter().enumerate() {
        if *flag {
            v[i] = 0.0;
        }
    }
}

/// `integral (a grad u) . grad v` over the whole mesh.
pub fn energy_product(
    mesh: &Mesh,
    coeff: &dyn Coefficient,
    u: &FeFunction,
    v: &FeFunction,
) -> f64 {
    let mut acc = 0.0;
    for e in 0..mesh.num_elements() {
        let tri = mesh.element_coords(e);
        let area = mesh.area(e);
        let gu = u.element_gradient(e);
        let gv = v.element_gradient(e);
        let w = area / 3.0;
        for bary in &QUAD_DEG2 {
            let x = bary_point(&tri, bary);
            let flux = coeff.eval(e, x).apply(gu);
            acc += w * (flux[0] * gv[0] + flux[1] * gv[1]);
        }
    }
    acc
}

/// Consistent-mass L2 norm of a P1 field.
pub fn l2_norm(f: &FeFunction) -> f64 {
    let mesh = &f.mesh;
    let mut acc = 0.0;
    for e in 0..mesh.num_elements() {
        let area = mesh.area(e);
        let idx = mesh.element(e);
        let v = [f.values[idx[0]], f.values[idx[1]], f.values[idx[2]]];
        let quad = 2.0 * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
            + 2.0 * (v[0] * v[1] + v[1] * v[2] + v[0] * v[2]);
        acc += area / 12.0 * quad;
    }
    acc.max(0.0).sqrt()
}

/// Source term of a parabolic problem; constants are assembled once per march.
#[derive(Clone)]
pub enum SourceTerm {
    Constant(f64),
    Fn(Arc<dyn Fn([f64; 2], f64) -> f64 + Send + Sync>),
}

impl SourceTerm {
    pub fn eval(&self, x: [f64; 2], t: f64) -> f64 {
        match self {
            SourceTerm::Constant(c) => {
                let _ = (x, t);
                *c
            }
            SourceTerm::Fn(f) => f(x, t),
        }
    }
}

type ScalarFn = Arc<dyn Fn([f64; 2]) -> f64 + Send + Sync>;
type GradFn = Arc<dyn Fn([f64; 2]) -> [f64; 2] + Send + Sync>;

/// Backward-Euler discretization data for
/// `du/dt - div(a grad u) = f, u(0) = u0, u = 0 on the boundary`.
pub struct ParabolicProblem {
    pub mesh: Arc<Mesh>,
    pub coefficient: Arc<dyn Coefficient>,
    pub source: SourceTerm,
    pub initial: ScalarFn,
    /// Closed-form gradient of the initial value; when absent the gradient
    /// of the nodal interpolant is used instead (logged).
    pub initial_grad: Option<GradFn>,
    pub end_time: f64,
    pub dt: f64,
}

impl ParabolicProblem {
    /// Number of uniform steps; T/dt must be integral.
    pub fn num_steps(&self) -> Result<usize> {
        if !(self.dt > 0.0 && self.end_time > 0.0) {
            return Err(Error::Config(format!(
                "time data must be positive: T = {}, dt = {}",
                self.end_time, self.dt
            )));
        }
        let m = self.end_time / self.dt;
        let rounded = m.round();
        if rounded < 1.0 || (m - rounded).abs() > 1e-9 * rounded.max(1.0) {
            return Err(Error::Config(format!(
                "T/dt = {m} is not a positive integer"
            )));
        }
        Ok(rounded as usize)
    }
}

/// Elliptic projection of the initial value: find U0 in the homogeneous P1
/// space with `(b grad U0, grad V) = (b grad u0, grad V)` for all V.
pub fn project_initial(problem: &ParabolicProblem, opts: &SolverOptions) -> Result<FeFunction> {
    let mesh = &problem.mesh;
    let coeff = problem.coefficient.as_ref();
    let stiffness = assemble_stiffness(mesh, coeff)?;

    let mut rhs = match &problem.initial_grad {
        Some(grad) => {
            let g = grad.clone();
            assemble_gradient_form(mesh, coeff, move |_, x| g(x))
        }
        None => {
            log::warn!(
                "initial projection: no closed-form gradient, falling back to the gradient \
                 of the nodal interpolant"
            );
            let interp = FeFunction::interpolate(mesh.clone(), |x| (problem.initial)(x), None);
            let grads: Vec<[f64; 2]> = (0..mesh.num_elements())
                .map(|e| interp.element_gradient(e))
                .collect();
            assemble_gradient_form(mesh, coeff, move |e, _| grads[e])
        }
    };
    zero_dirichlet(mesh, &mut rhs);
    let eliminated = stiffness.eliminate_dirichlet(mesh.boundary_flags())?;
    let (values, report) = cg_solve(&eliminated, &rhs, None, opts)?;
    if !report.converged {
        return Err(Error::Solver {
            message: "initial projection did not converge".into(),
            iterations: report.iterations,
            residual: report.relative_residual,
        });
    }
    FeFunction::from_values(mesh.clone(), values, Some(0.0))
}

/// One backward Euler sweep: each step solves
/// `(M + dt K) U_k = M U_{k-1} + dt F_k` on the free vertices. The system
/// matrix is assembled and eliminated once; steps warm-start from the
/// previous solution. `on_step` sees every accepted step.
pub fn backward_euler_march(
    problem: &ParabolicProblem,
    u0: &FeFunction,
    opts: &SolverOptions,
    mut on_step: Option<&mut dyn FnMut(usize, f64, &[f64])>,
) -> Result<FeFunction> {
    let mesh = &problem.mesh;
    let steps = problem.num_steps()?;
    if u0.values.len() != mesh.num_vertices() {
        return Err(Error::Input("initial value lives on a different mesh".into()));
    }
    let mass = assemble_mass(mesh)?;
    let stiffness = assemble_stiffness(mesh, problem.coefficient.as_ref())?;
    let system = mass
        .add_scaled(&stiffness, problem.dt)?
        .eliminate_dirichlet(mesh.boundary_flags())?;

    let constant_load = match &problem.source {
        SourceTerm::Constant(c) => {
            let c = *c;
            Some(assemble_load(mesh, move |_| c))
        }
        SourceTerm::Fn(_) => None,
    };

    let mut u = u0.values.clone();
    zero_dirichlet(mesh, &mut u);
    let mut prev: Option<Vec<f64>> = None;
    let mut guess = vec![0.0; u.len()];
    for k in 1..=steps {
        let t_k = k as f64 * problem.dt;
        let mut rhs = mass.matvec(&u);
        match &constant_load {
            Some(load) => {
                for (r, l) in rhs.iter_mut().zip(load) {
                    *r += problem.dt * l;
                }
            }
            None => {
                let load = assemble_load(mesh, |x| problem.source.eval(x, t_k));
                for (r, l) in rhs.iter_mut().zip(&load) {
                    *r += problem.dt * l;
                }
            }
        }
        zero_dirichlet(mesh, &mut rhs);
        // Warm start: linear extrapolation from the last two states.
        match &prev {
            Some(p) => {
                for i in 0..u.len() {
                    guess[i] = 2.0 * u[i] - p[i];
                }
            }
            None => guess.copy_from_slice(&u),
        }
        let (next, report) = cg_solve(&system, &rhs, Some(&guess), opts).map_err(|e| match e {
            Error::Solver {
                message,
                iterations,
                residual,
            } => Error::Solver {
                message: format!("time step {k}: {message}"),
                iterations,
                residual,
            },
            other => other,
        })?;
        if !report.converged {
            return Err(Error::Solver {
                message: format!("time step {k}: linear solve did not converge"),
                iterations: report.iterations,
                residual: report.relative_residual,
            });
        }
        prev = Some(std::mem::replace(&mut u, next));
        if let Some(cb) = on_step.as_deref_mut() {
            cb(k, t_k, &u);
        }
    }
    FeFunction::from_values(mesh.clone(), u, Some(problem.end_time))
}

/// Convenience wrapper returning every step U_1..U_m; prefer the callback
/// form for large meshes.
pub fn march_collect(
    problem: &ParabolicProblem,
    u0: &FeFunction,
    opts: &SolverOptions,
) -> Result<Vec<FeFunction>> {
    let mut all = Vec::with_capacity(problem.num_steps()?);
    let mesh = problem.mesh.clone();
    let mut sink = |_k: usize, t: f64, values: &[f64]| {
        all.push(FeFunction {
            mesh: mesh.clone(),
            values: values.to_vec(),
            time: Some(t),
        });
    };
    backward_euler_march(problem, u0, opts, Some(&mut sink))?;
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficient::{
        hybrid, two_scale_coefficient, two_scale_effective, CoefficientField, RhoMode,
    };
    use crate::mesh::{build_structured_mesh, tag_regions, DefectGeometry, Mesh};
    use rand::{Rng, SeedableRng};
    use std::f64::consts::PI;

    fn unit_triangle() -> Arc<Mesh> {
        Arc::new(
            Mesh::from_raw(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], vec![[0, 1, 2]]).unwrap(),
        )
    }

    fn matrix_entries(m: &SparseMatrix) -> Vec<Vec<f64>> {
        let n = m.dim();
        let mut out = vec![vec![0.0; n]; n];
        for r in 0..n {
            for (c, v) in m.row(r) {
                out[r][c] = v;
            }
        }
        out
    }

    #[test]
    fn local_stiffness_of_unit_right_triangle() {
        let mesh = unit_triangle();
        let coeff = CoefficientField::constant(1.0).unwrap();
        let k = assemble_stiffness(&mesh, &coeff).unwrap();
        let d = matrix_entries(&k);
        let expect = [
            [1.0, -0.5, -0.5],
            [-0.5, 0.5, 0.0],
            [-0.5, 0.0, 0.5],
        ];
        for i in 0..3 {
            for j in 0..3 {
                assert!(
                    (d[i][j] - expect[i][j]).abs() < 1e-14,
                    "K[{i}][{j}] = {}",
                    d[i][j]
                );
            }
        }
    }

    #[test]
    fn stiffness_annihilates_constants() {
        let mesh = build_structured_mesh(8).unwrap();
        let mesh = tag_regions(mesh, &DefectGeometry::well()).unwrap();
        let micro = Arc::new(two_scale_coefficient(0.04, 2.5, 1.5).unwrap());
        let macro_f = Arc::new(two_scale_effective(2.5, 1.5).unwrap());
        let b = hybrid(
            micro,
            macro_f,
            &mesh,
            &DefectGeometry::well(),
            RhoMode::Indicator,
        )
        .unwrap();
        let k = assemble_stiffness(&mesh, &b).unwrap();
        let ones = vec![1.0; mesh.num_vertices()];
        for v in k.matvec(&ones) {
            assert!(v.abs() < 1e-12, "row sum {v}");
        }
    }

    #[test]
    fn stiffness_is_linear_in_the_coefficient() {
        let mesh = build_structured_mesh(4).unwrap();
        let k1 = assemble_stiffness(&mesh, &CoefficientField::constant(1.0).unwrap()).unwrap();
        let k3 = assemble_stiffness(&mesh, &CoefficientField::constant(3.0).unwrap()).unwrap();
        for r in 0..k1.dim() {
            let row1: Vec<_> = k1.row(r).collect();
            let row3: Vec<_> = k3.row(r).collect();
            // Patterns may differ by dropped exact zeros; compare via maps.
            let m1: std::collections::HashMap<_, _> = row1.into_iter().collect();
            for (c, v) in row3 {
                let base = m1.get(&c).copied().unwrap_or(0.0);
                assert!((v - 3.0 * base).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn mass_properties() {
        let mesh = unit_triangle();
        let m = assemble_mass(&mesh).unwrap();
        let d = matrix_entries(&m);
        let a = 0.5;
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 2.0 } else { 1.0 } * a / 12.0;
                assert!((d[i][j] - expect).abs() < 1e-15);
            }
        }

        let mesh = build_structured_mesh(7).unwrap();
        let m = assemble_mass(&mesh).unwrap();
        let total: f64 = (0..m.dim()).map(|r| m.row(r).map(|(_, v)| v).sum::<f64>()).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(m.is_symmetric());
    }

    #[test]
    fn load_of_unit_source_matches_mass_row_sums() {
        let mesh = build_structured_mesh(5).unwrap();
        let load = assemble_load(&mesh, |_| 1.0);
        let m = assemble_mass(&mesh).unwrap();
        for r in 0..m.dim() {
            let row_sum: f64 = m.row(r).map(|(_, v)| v).sum();
            assert!((load[r] - row_sum).abs() < 1e-14);
        }
        assert!((load.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        let zero = assemble_load(&mesh, |_| 0.0);
        assert!(zero.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn load_of_hat_function_matches_mass_column() {
        // On a single triangle the hat of vertex 1 is its barycentric
        // coordinate; the degree-2 rule integrates phi_i phi_j exactly.
        let mesh = unit_triangle();
        let m = assemble_mass(&mesh).unwrap();
        let load = assemble_load(&mesh, |x| x[0]); // phi_1 = x on this element
        let d = matrix_entries(&m);
        for i in 0..3 {
            assert!((load[i] - d[i][1]).abs() < 1e-15);
        }
    }

    fn bubble_problem(mesh: Arc<Mesh>, coeff: Arc<dyn Coefficient>, dt: f64, t: f64) -> ParabolicProblem {
        ParabolicProblem {
            mesh,
            coefficient: coeff,
            source: SourceTerm::Constant(1.0),
            initial: Arc::new(|x| x[0] * (1.0 - x[0]) * x[1] * (1.0 - x[1])),
            initial_grad: Some(Arc::new(|x| {
                [
                    (1.0 - 2.0 * x[0]) * x[1] * (1.0 - x[1]),
                    x[0] * (1.0 - x[0]) * (1.0 - 2.0 * x[1]),
                ]
            })),
            end_time: t,
            dt,
        }
    }

    #[test]
    fn initial_projection_reproduces_p1_data() {
        // The hat of the center vertex of the 2x2 grid, written in closed
        // form as a min of planes; it is already P1 on this mesh, so the
        // projection must return its interpolant (this also exercises the
        // interpolant-gradient fallback).
        let mesh = Arc::new(build_structured_mesh(2).unwrap());
        let hat = |x: [f64; 2]| -> f64 {
            let candidates = [
                2.0 * x[1],
                2.0 * x[0],
                2.0 - 2.0 * x[0],
                2.0 - 2.0 * x[1],
                1.0 + 2.0 * x[0] - 2.0 * x[1],
                1.0 - 2.0 * x[0] + 2.0 * x[1],
            ];
            candidates.iter().copied().fold(f64::INFINITY, f64::min).max(0.0)
        };
        let problem = ParabolicProblem {
            mesh: mesh.clone(),
            coefficient: Arc::new(two_scale_effective(2.5, 1.5).unwrap()),
            source: SourceTerm::Constant(0.0),
            initial: Arc::new(hat),
            initial_grad: None,
            end_time: 1.0,
            dt: 0.1,
        };
        let opts = SolverOptions {
            tol: 1e-12,
            ..Default::default()
        };
        let u0 = project_initial(&problem, &opts).unwrap();
        let interp = FeFunction::interpolate(mesh.clone(), hat, None);
        for (a, b) in u0.values.iter().zip(&interp.values) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn initial_projection_is_invariant_under_coefficient_scaling() {
        let mesh = Arc::new(build_structured_mesh(8).unwrap());
        let opts = SolverOptions::default();
        let p1 = bubble_problem(mesh.clone(), Arc::new(CoefficientField::constant(1.0).unwrap()), 0.1, 1.0);
        let p5 = bubble_problem(mesh, Arc::new(CoefficientField::constant(5.0).unwrap()), 0.1, 1.0);
        let u1 = project_initial(&p1, &opts).unwrap();
        let u5 = project_initial(&p5, &opts).unwrap();
        let scale = l2_norm(&u1).max(1e-30);
        for (a, b) in u1.values.iter().zip(&u5.values) {
            assert!((a - b).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn initial_projection_converges_at_first_order_in_h1() {
        // Ritz projection of the bubble: the H1 error against the exact
        // gradient must drop by about half per refinement.
        let grad = |x: [f64; 2]| {
            [
                (1.0 - 2.0 * x[0]) * x[1] * (1.0 - x[1]),
                x[0] * (1.0 - x[0]) * (1.0 - 2.0 * x[1]),
            ]
        };
        let mut errors = Vec::new();
        for n in [8usize, 16, 32] {
            let mesh = Arc::new(build_structured_mesh(n).unwrap());
            let problem = bubble_problem(
                mesh.clone(),
                Arc::new(CoefficientField::constant(1.0).unwrap()),
                0.1,
                1.0,
            );
            let u0 = project_initial(&problem, &SolverOptions::default()).unwrap();
            let mut err_sq = 0.0;
            for e in 0..mesh.num_elements() {
                let tri = mesh.element_coords(e);
                let area = mesh.area(e);
                let gu = u0.element_gradient(e);
                for (bary, w) in &QUAD_DEG5 {
                    let x = bary_point(&tri, bary);
                    let ge = grad(x);
                    let dx = gu[0] - ge[0];
                    let dy = gu[1] - ge[1];
                    err_sq += area * w * (dx * dx + dy * dy);
                }
            }
            errors.push(err_sq.sqrt());
        }
        let order1 = (errors[0] / errors[1]).log2();
        let order2 = (errors[1] / errors[2]).log2();
        assert!(order1 > 0.9, "order {order1}, errors {errors:?}");
        assert!(order2 > 0.9, "order {order2}, errors {errors:?}");
    }

    #[test]
    fn march_keeps_zero_state() {
        let mesh = Arc::new(build_structured_mesh(4).unwrap());
        let mut problem = bubble_problem(
            mesh.clone(),
            Arc::new(CoefficientField::constant(1.0).unwrap()),
            0.05,
            0.5,
        );
        problem.source = SourceTerm::Constant(0.0);
        let u0 = FeFunction::zeros(mesh);
        let um = backward_euler_march(&problem, &u0, &SolverOptions::default(), None).unwrap();
        assert!(um.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn march_is_stable_without_source() {
        let mesh = build_structured_mesh(16).unwrap();
        let defect = DefectGeometry::well();
        let mesh = Arc::new(tag_regions(mesh, &defect).unwrap());
        let micro = Arc::new(two_scale_coefficient(0.04, 2.5, 1.5).unwrap());
        let macro_f = Arc::new(two_scale_effective(2.5, 1.5).unwrap());
        let b: Arc<dyn Coefficient> =
            Arc::new(hybrid(micro, macro_f, &mesh, &defect, RhoMode::Indicator).unwrap());

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut values: Vec<f64> = (0..mesh.num_vertices())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        zero_dirichlet(&mesh, &mut values);
        let u0 = FeFunction::from_values(mesh.clone(), values, Some(0.0)).unwrap();

        let problem = ParabolicProblem {
            mesh: mesh.clone(),
            coefficient: b.clone(),
            source: SourceTerm::Constant(0.0),
            initial: Arc::new(|_| 0.0),
            initial_grad: None,
            end_time: 0.2,
            dt: 0.01,
        };
        let opts = SolverOptions {
            tol: 1e-13,
            ..Default::default()
        };
        let states = march_collect(&problem, &u0, &opts).unwrap();
        assert_eq!(states.len(), 20);

        let mut prev_l2 = l2_norm(&u0);
        let mut prev_energy = energy_product(&mesh, b.as_ref(), &u0, &u0);
        let scale_l2 = prev_l2;
        let scale_energy = prev_energy;
        for s in &states {
            let l2 = l2_norm(s);
            let en = energy_product(&mesh, b.as_ref(), s, s);
            assert!(l2 <= prev_l2 + 1e-12 * scale_l2, "L2 grew: {l2} > {prev_l2}");
            assert!(
                en <= prev_energy + 1e-12 * scale_energy,
                "energy grew: {en} > {prev_energy}"
            );
            prev_l2 = l2;
            prev_energy = en;
        }
    }

    #[test]
    fn march_satisfies_its_defining_equation() {
        let mesh = Arc::new(build_structured_mesh(8).unwrap());
        let problem = bubble_problem(
            mesh.clone(),
            Arc::new(CoefficientField::constant(1.0).unwrap()),
            0.05,
            0.25,
        );
        let opts = SolverOptions::default();
        let u0 = project_initial(&problem, &opts).unwrap();

        let mass = assemble_mass(&mesh).unwrap();
        let stiffness =
            assemble_stiffness(&mesh, problem.coefficient.as_ref()).unwrap();
        let system = mass
            .add_scaled(&stiffness, problem.dt)
            .unwrap()
            .eliminate_dirichlet(mesh.boundary_flags())
            .unwrap();
        let load = assemble_load(&mesh, |_| 1.0);

        let mut prev = u0.values.clone();
        let mut worst: f64 = 0.0;
        let mut sink = |_k: usize, _t: f64, values: &[f64]| {
            let mut rhs = mass.matvec(&prev);
            for (r, l) in rhs.iter_mut().zip(&load) {
                *r += problem.dt * l;
            }
            zero_dirichlet(&mesh, &mut rhs);
            let lhs = system.matvec(values);
            let num: f64 = lhs
                .iter()
                .zip(&rhs)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let den: f64 = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
            worst = worst.max(num / den);
            prev = values.to_vec();
        };
        backward_euler_march(&problem, &u0, &opts, Some(&mut sink)).unwrap();
        assert!(worst <= 10.0 * opts.tol, "residual {worst}");
    }

    #[test]
    fn march_tracks_separable_heat_decay() {
        // u = exp(-2 pi^2 t) sin(pi x) sin(pi y) with f = 0.
        let n = 16;
        let mesh = Arc::new(build_structured_mesh(n).unwrap());
        let problem = ParabolicProblem {
            mesh: mesh.clone(),
            coefficient: Arc::new(CoefficientField::constant(1.0).unwrap()),
            source: SourceTerm::Constant(0.0),
            initial: Arc::new(|x| (PI * x[0]).sin() * (PI * x[1]).sin()),
            initial_grad: Some(Arc::new(|x| {
                [
                    PI * (PI * x[0]).cos() * (PI * x[1]).sin(),
                    PI * (PI * x[0]).sin() * (PI * x[1]).cos(),
                ]
            })),
            end_time: 0.05,
            dt: 1e-3,
        };
        let opts = SolverOptions::default();
        let u0 = project_initial(&problem, &opts).unwrap();
        let um = backward_euler_march(&problem, &u0, &opts, None).unwrap();

        let factor = (-2.0 * PI * PI * 0.05_f64).exp();
        let exact = FeFunction::interpolate(
            mesh.clone(),
            |x| factor * (PI * x[0]).sin() * (PI * x[1]).sin(),
            None,
        );
        let diff = FeFunction::from_values(
            mesh,
            um.values
                .iter()
                .zip(&exact.values)
                .map(|(a, b)| a - b)
                .collect(),
            None,
        )
        .unwrap();
        let rel = l2_norm(&diff) / l2_norm(&exact);
        assert!(rel < 0.05, "relative error {rel}");
    }

    #[test]
    fn march_reports_failing_step() {
        let mesh = Arc::new(build_structured_mesh(6).unwrap());
        let problem = bubble_problem(
            mesh.clone(),
            Arc::new(CoefficientField::constant(1.0).unwrap()),
            0.1,
            0.5,
        );
        let opts = SolverOptions {
            tol: 1e-16,
            maxit: Some(1),
            precond: crate::linalg::Preconditioner::None,
        };
        let u0 = FeFunction::interpolate(mesh, |x| (problem.initial)(x), Some(0.0));
        let err = backward_euler_march(&problem, &u0, &opts, None).unwrap_err();
        assert!(err.to_string().contains("time step 1"), "{err}");
    }
}
