//! Tensor-valued diffusion coefficients: the benchmark microscale fields,
//! their analytic effective limits, and the hybrid field that switches
//! between microscale and effective data across the defect buffer K.

use crate::error::{Error, Result};
use crate::mesh::{DefectGeometry, Mesh, Region, Shape};
use std::f64::consts::PI;
use std::sync::Arc;

/// Symmetric 2x2 tensor. Symmetry holds by construction, so every evaluated
/// tensor equals its transpose exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymTensor2 {
    pub a11: f64,
    pub a12: f64,
    pub a22: f64,
}

impl SymTensor2 {
    pub fn scalar(c: f64) -> SymTensor2 {
        SymTensor2 {
            a11: c,
            a12: 0.0,
            a22: c,
        }
    }

    pub fn identity() -> SymTensor2 {
        SymTensor2::scalar(1.0)
    }

    pub fn new(a11: f64, a12: f64, a22: f64) -> SymTensor2 {
        SymTensor2 { a11, a12, a22 }
    }

    pub fn apply(&self, v: [f64; 2]) -> [f64; 2] {
        [
            self.a11 * v[0] + self.a12 * v[1],
            self.a12 * v[0] + self.a22 * v[1],
        ]
    }

    /// xi . (A xi)
    pub fn quad_form(&self, xi: [f64; 2]) -> f64 {
        xi[0] * (self.a11 * xi[0] + self.a12 * xi[1]) + xi[1] * (self.a12 * xi[0] + self.a22 * xi[1])
    }

    pub fn add(&self, o: &SymTensor2) -> SymTensor2 {
        SymTensor2::new(self.a11 + o.a11, self.a12 + o.a12, self.a22 + o.a22)
    }

    pub fn sub(&self, o: &SymTensor2) -> SymTensor2 {
        SymTensor2::new(self.a11 - o.a11, self.a12 - o.a12, self.a22 - o.a22)
    }

    pub fn scale(&self, f: f64) -> SymTensor2 {
        SymTensor2::new(f * self.a11, f * self.a12, f * self.a22)
    }

    /// (min, max) eigenvalue.
    pub fn eigen_bounds(&self) -> (f64, f64) {
        let mean = 0.5 * (self.a11 + self.a22);
        let disc = f64::hypot(0.5 * (self.a11 - self.a22), self.a12);
        (mean - disc, mean + disc)
    }

    /// Spectral norm (largest absolute eigenvalue).
    pub fn spectral_norm(&self) -> f64 {
        let (lo, hi) = self.eigen_bounds();
        lo.abs().max(hi.abs())
    }

    pub fn is_positive_definite(&self) -> bool {
        self.eigen_bounds().0 > 0.0
    }
}

/// A diffusion coefficient evaluated per element at quadrature points.
/// Pointwise fields ignore the element id; element-piecewise fields (the
/// hybrid and the HMM effective field) use it.
pub trait Coefficient: Send + Sync {
    fn eval(&self, elem: usize, x: [f64; 2]) -> SymTensor2;

    /// Conservative ellipticity bounds (lambda, Lambda).
    fn bounds(&self) -> (f64, f64);
}

type EvalFn = Arc<dyn Fn([f64; 2]) -> SymTensor2 + Send + Sync>;

/// A pointwise tensor field with ellipticity metadata.
#[derive(Clone)]
pub struct CoefficientField {
    eval_fn: EvalFn,
    lambda: f64,
    lambda_max: f64,
    epsilon: Option<f64>,
    description: String,
}

impl std::fmt::Debug for CoefficientField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CoefficientField")
            .field("lambda", &self.lambda)
            .field("lambda_max", &self.lambda_max)
            .field("epsilon", &self.epsilon)
            .field("description", &self.description)
            .finish()
    }
}

impl Coefficient for CoefficientField {
    fn eval(&self, _elem: usize, x: [f64; 2]) -> SymTensor2 {
        (self.eval_fn)(x)
    }

    fn bounds(&self) -> (f64, f64) {
        (self.lambda, self.lambda_max)
    }
}

impl CoefficientField {
    pub fn from_fn(
        f: impl Fn([f64; 2]) -> SymTensor2 + Send + Sync + 'static,
        lambda: f64,
        lambda_max: f64,
        epsilon: Option<f64>,
        description: impl Into<String>,
    ) -> CoefficientField {
        CoefficientField {
            eval_fn: Arc::new(f),
            lambda,
            lambda_max,
            epsilon,
            description: description.into(),
        }
    }

    pub fn constant(c: f64) -> Result<CoefficientField> {
        if c <= 0.0 {
            return Err(Error::Ellipticity(format!(
                "constant coefficient must be positive, got {c}"
            )));
        }
        Ok(CoefficientField::from_fn(
            move |_| SymTensor2::scalar(c),
            c,
            c,
            None,
            format!("constant:{c}"),
        ))
    }

    pub fn value(&self, x: [f64; 2]) -> SymTensor2 {
        (self.eval_fn)(x)
    }

    pub fn epsilon(&self) -> Option<f64> {
        self.epsilon
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    /// Probe ellipticity on an n-by-n grid along the directions e1, e2 and
    /// (e1+e2)/sqrt(2): xi.(a xi) >= lambda |xi|^2 and xi.(a xi) >= |a xi|^2 / Lambda.
    pub fn verify_probe_ellipticity(&self, n: usize) -> Result<()> {
        let s = 1.0 / (2.0f64).sqrt();
        let dirs = [[1.0, 0.0], [0.0, 1.0], [s, s]];
        for i in 0..n {
            for j in 0..n {
                let x = [(i as f64 + 0.5) / n as f64, (j as f64 + 0.5) / n as f64];
                let a = self.value(x);
                for xi in dirs {
                    let q = a.quad_form(xi);
                    let axi = a.apply(xi);
                    let axi2 = axi[0] * axi[0] + axi[1] * axi[1];
                    let xi2 = xi[0] * xi[0] + xi[1] * xi[1];
                    if q < self.lambda * xi2 * (1.0 - 1e-12) {
                        return Err(Error::Ellipticity(format!(
                            "lower bound fails at {x:?}: {q} < {}",
                            self.lambda * xi2
                        )));
                    }
                    if q * self.lambda_max < axi2 * (1.0 - 1e-12) {
                        return Err(Error::Ellipticity(format!(
                            "upper bound fails at {x:?}: {q} * Lambda < |a xi|^2 = {axi2}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Oscillatory two-scale benchmark coefficient,
/// `(R1 + R2 sin 2 pi x1)(R1 + R2 cos 2 pi x2) /
///  ((R1 + R2 sin(2 pi x1 / eps))(R1 + R2 sin(2 pi x2 / eps))) I`.
pub fn two_scale_coefficient(eps: f64, r1: f64, r2: f64) -> Result<CoefficientField> {
    check_two_scale_params(eps, r1, r2)?;
    let lambda = (r1 - r2.abs()).powi(2) / (r1 + r2.abs()).powi(2);
    let lambda_max = (r1 + r2.abs()).powi(2) / (r1 - r2.abs()).powi(2);
    Ok(CoefficientField::from_fn(
        move |x| {
            let num = (r1 + r2 * (2.0 * PI * x[0]).sin()) * (r1 + r2 * (2.0 * PI * x[1]).cos());
            let den = (r1 + r2 * (2.0 * PI * x[0] / eps).sin())
                * (r1 + r2 * (2.0 * PI * x[1] / eps).sin());
            SymTensor2::scalar(num / den)
        },
        lambda,
        lambda_max,
        Some(eps),
        format!("two_scale(eps={eps},R1={r1},R2={r2})"),
    ))
}

/// Analytic effective coefficient of [`two_scale_coefficient`]:
/// `(R1 + R2 sin 2 pi x1)(R1 + R2 cos 2 pi x2) / (R1 sqrt(R1^2 - R2^2)) I`.
pub fn two_scale_effective(r1: f64, r2: f64) -> Result<CoefficientField> {
    check_two_scale_params(1.0, r1, r2)?;
    let denom = r1 * (r1 * r1 - r2 * r2).sqrt();
    let lambda = (r1 - r2.abs()).powi(2) / denom;
    let lambda_max = (r1 + r2.abs()).powi(2) / denom;
    Ok(CoefficientField::from_fn(
        move |x| {
            let num = (r1 + r2 * (2.0 * PI * x[0]).sin()) * (r1 + r2 * (2.0 * PI * x[1]).cos());
            SymTensor2::scalar(num / denom)
        },
        lambda,
        lambda_max,
        None,
        format!("two_scale_effective(R1={r1},R2={r2})"),
    ))
}

fn check_two_scale_params(eps: f64, r1: f64, r2: f64) -> Result<()> {
    if eps <= 0.0 {
        return Err(Error::Config(format!("eps must be positive, got {eps}")));
    }
    if r1 <= r2.abs() {
        return Err(Error::Ellipticity(format!(
            "two-scale coefficient needs R1 > |R2|, got R1 = {r1}, R2 = {r2}"
        )));
    }
    Ok(())
}

/// Value of the discontinuous field used inside K0 by
/// [`no_scale_sep_coefficient`].
fn no_scale_sep_interior(x: [f64; 2]) -> f64 {
    let mut sum = 0.0;
    for j in 0..=4usize {
        for i in 1..=j {
            let (i_f, j_f) = (i as f64, j as f64);
            let arg = (8.0 * (i_f * x[1] - x[0] / (i_f + 1.0))).floor()
                + (150.0 * i_f * x[0]).floor()
                + (150.0 * x[1]).floor();
            sum += arg.cos() / (j_f + 1.0);
        }
    }
    3.0 + sum / 7.0
}

/// Value of the oscillatory field used outside K0 by
/// [`no_scale_sep_coefficient`].
fn no_scale_sep_exterior(x: [f64; 2], eps: f64) -> f64 {
    2.1 + (2.0 * PI * x[0] / eps).cos() * (2.0 * PI * x[1] / eps).cos()
        + (4.0 * x[0] * x[0] * x[1] * x[1]).sin()
}

/// Benchmark coefficient without scale separation: a discontinuous
/// floor-function field inside K0 and an oscillatory field outside.
pub fn no_scale_sep_coefficient(eps: f64, defect: &DefectGeometry) -> Result<CoefficientField> {
    if eps <= 0.0 {
        return Err(Error::Config(format!("eps must be positive, got {eps}")));
    }
    let shapes: Vec<Shape> = defect.k0_shapes.clone();
    // Interior range: 3 +- (1/2 + 2/3 + 3/4 + 4/5)/7; exterior minimum:
    // 2.1 - 1 + min sin on [0, 4].
    let spread = (0.5 + 2.0 / 3.0 + 0.75 + 0.8) / 7.0;
    let lambda = (2.1 - 1.0 + (4.0f64).sin()).min(3.0 - spread);
    let lambda_max = (3.0 + spread).max(4.1);
    Ok(CoefficientField::from_fn(
        move |x| {
            let v = if crate::mesh::point_in_shapes(x, &shapes) {
                no_scale_sep_interior(x)
            } else {
                no_scale_sep_exterior(x, eps)
            };
            SymTensor2::scalar(v)
        },
        lambda,
        lambda_max,
        Some(eps),
        format!("no_scale_sep(eps={eps})"),
    ))
}

/// Parameters available to [`from_preset`].
#[derive(Debug, Clone, Default)]
pub struct PresetParams {
    pub eps: Option<f64>,
    pub r1: Option<f64>,
    pub r2: Option<f64>,
    pub defect: Option<DefectGeometry>,
}

/// Builds a named coefficient: "two_scale", "two_scale_effective",
/// "no_scale_sep" or "constant:<value>".
pub fn from_preset(id: &str, params: &PresetParams) -> Result<CoefficientField> {
    let need = |opt: Option<f64>, what: &str| {
        opt.ok_or_else(|| Error::Config(format!("coefficient preset {id} needs {what}")))
    };
    match id {
        "two_scale" => two_scale_coefficient(
            need(params.eps, "eps")?,
            need(params.r1, "R1")?,
            need(params.r2, "R2")?,
        ),
        "two_scale_effective" => {
            two_scale_effective(need(params.r1, "R1")?, need(params.r2, "R2")?)
        }
        "no_scale_sep" => {
            let defect = params
                .defect
                .as_ref()
                .ok_or_else(|| Error::Config("no_scale_sep preset needs a defect".into()))?;
            no_scale_sep_coefficient(need(params.eps, "eps")?, defect)
        }
        other => {
            if let Some(v) = other.strip_prefix("constant:") {
                let c: f64 = v
                    .parse()
                    .map_err(|_| Error::Config(format!("bad constant coefficient value {v}")))?;
                CoefficientField::constant(c)
            } else {
                Err(Error::Config(format!("unknown coefficient preset {other}")))
            }
        }
    }
}

/// Transition-function mode of the hybrid field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhoMode {
    /// rho = indicator of K: microscale on Defect and Layer elements,
    /// effective data elsewhere. rho(1 - rho) = 0 everywhere.
    #[default]
    Indicator,
    /// Experimental: rho blends linearly across the layer, from 1 on K0 to
    /// 0 outside K, using barycenter distances. Held constant per element.
    LinearRamp,
}

/// The hybrid coefficient: microscale inside K, macroscale outside,
/// with a per-element transition weight.
#[derive(Clone)]
pub struct HybridField {
    micro: Arc<dyn Coefficient>,
    macro_field: Arc<dyn Coefficient>,
    rho: Vec<f64>,
    lambda: f64,
    lambda_max: f64,
}

impl std::fmt::Debug for HybridField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HybridField")
            .field("lambda", &self.lambda)
            .field("lambda_max", &self.lambda_max)
            .field("elements", &self.rho.len())
            .finish()
    }
}

impl HybridField {
    /// Per-element transition weight.
    pub fn rho(&self, elem: usize) -> f64 {
        self.rho[elem]
    }
}

impl Coefficient for HybridField {
    fn eval(&self, elem: usize, x: [f64; 2]) -> SymTensor2 {
        let rho = self.rho[elem];
        if rho == 1.0 {
            self.micro.eval(elem, x)
        } else if rho == 0.0 {
            self.macro_field.eval(elem, x)
        } else {
            let a = self.micro.eval(elem, x).scale(rho);
            let b = self.macro_field.eval(elem, x).scale(1.0 - rho);
            a.add(&b)
        }
    }

    fn bounds(&self) -> (f64, f64) {
        (self.lambda, self.lambda_max)
    }
}

/// Builds the hybrid field on a tagged mesh. Fails when the mesh carries no
/// K elements (empty buffer region).
pub fn hybrid(
    micro: Arc<dyn Coefficient>,
    macro_field: Arc<dyn Coefficient>,
    mesh: &Mesh,
    defect: &DefectGeometry,
    mode: RhoMode,
) -> Result<HybridField> {
    let ne = mesh.num_elements();
    let mut rho = vec![0.0; ne];
    let mut any = false;
    for e in 0..ne {
        match mesh.region(e) {
            Region::Defect => {
                rho[e] = 1.0;
                any = true;
            }
            Region::Layer => {
                any = true;
                rho[e] = match mode {
                    RhoMode::Indicator => 1.0,
                    RhoMode::LinearRamp => {
                        let x = mesh.barycenter(e);
                        let d_in = defect
                            .k0_shapes
                            .iter()
                            .map(|s| s.boundary_distance(x))
                            .fold(f64::INFINITY, f64::min);
                        let d_out = defect
                            .refinement_shapes()
                            .iter()
                            .map(|s| s.boundary_distance(x))
                            .fold(f64::INFINITY, f64::min);
                        (d_out / (d_in + d_out)).clamp(0.0, 1.0)
                    }
                };
            }
            Region::Exterior => {}
        }
    }
    if !any {
        return Err(Error::Config(
            "hybrid coefficient with an empty K region".into(),
        ));
    }
    let (l1, u1) = micro.bounds();
    let (l2, u2) = macro_field.bounds();
    Ok(HybridField {
        micro,
        macro_field,
        rho,
        lambda: l1.min(l2),
        lambda_max: u1.max(u2),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_structured_mesh, tag_regions};
    use rand::{Rng, SeedableRng};

    fn approx(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol * (1.0 + b.abs()), "{a} vs {b}");
    }

    #[test]
    fn two_scale_point_values() {
        let f = two_scale_coefficient(0.01, 2.5, 1.5).unwrap();
        // (2.5+1.5)(2.5-1.5) / ((2.5 + 1.5 sin 50 pi)(2.5 + 1.5 sin 100 pi)) = 0.64
        let t = f.value([0.25, 0.5]);
        approx(t.a11, 0.64, 1e-12);
        approx(t.a22, 0.64, 1e-12);
        assert_eq!(t.a12, 0.0);
    }

    #[test]
    fn two_scale_degenerate_r2_is_identity() {
        let f = two_scale_coefficient(0.01, 2.5, 0.0).unwrap();
        let t = f.value([0.3141, 0.2718]);
        assert_eq!(t, SymTensor2::identity());
    }

    #[test]
    fn two_scale_matches_independent_formula() {
        // Independent re-implementation, written directly from the formula.
        let oracle = |x: [f64; 2], eps: f64, r1: f64, r2: f64| -> f64 {
            let n1 = r1 + r2 * (2.0 * PI * x[0]).sin();
            let n2 = r1 + r2 * (2.0 * PI * x[1]).cos();
            let d1 = r1 + r2 * (2.0 * PI * x[0] / eps).sin();
            let d2 = r1 + r2 * (2.0 * PI * x[1] / eps).sin();
            n1 * n2 / (d1 * d2)
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for _ in 0..200 {
            let x = [rng.gen::<f64>(), rng.gen::<f64>()];
            let eps = rng.gen_range(0.005..0.2);
            let f = two_scale_coefficient(eps, 2.5, 1.5).unwrap();
            let got = f.value(x).a11;
            let want = oracle(x, eps, 2.5, 1.5);
            assert!((got - want).abs() <= 1e-14 * (1.0 + want.abs()));
        }
    }

    #[test]
    fn effective_point_values() {
        let f = two_scale_effective(2.5, 1.5).unwrap();
        // (2.5)(4.0) / (2.5 * 2.0) = 2.0
        approx(f.value([0.0, 0.0]).a11, 2.0, 1e-14);
        // (4.0)(4.0) / 5.0 = 3.2
        approx(f.value([0.25, 0.0]).a11, 3.2, 1e-14);
        let id = two_scale_effective(2.5, 0.0).unwrap();
        assert_eq!(id.value([0.7, 0.1]), SymTensor2::identity());
    }

    #[test]
    fn ellipticity_violation_rejected() {
        assert!(two_scale_coefficient(0.01, 1.0, 1.0).is_err());
        assert!(two_scale_effective(1.0, 2.0).is_err());
    }

    #[test]
    fn no_scale_sep_point_values() {
        // Exterior branch at the origin: 2.1 + 1*1 + sin 0 = 3.1.
        approx(no_scale_sep_exterior([0.0, 0.0], 0.0063), 3.1, 1e-15);

        // Interior branch at the origin against a term-by-term oracle.
        let mut oracle = 0.0;
        for j in 0..=4usize {
            for i in 1..=j {
                let i_f = i as f64;
                let j_f = j as f64;
                let arg = (8.0_f64 * (i_f * 0.0 - 0.0 / (i_f + 1.0))).floor()
                    + (150.0_f64 * i_f * 0.0).floor()
                    + (150.0 * 0.0_f64).floor();
                oracle += (1.0 / (j_f + 1.0)) * arg.cos();
            }
        }
        let want = 3.0 + oracle / 7.0;
        approx(no_scale_sep_interior([0.0, 0.0]), want, 1e-15);
        // The closed-form sum is 3 + (1/2 + 2/3 + 3/4 + 4/5)/7.
        approx(want, 3.0 + (0.5 + 2.0 / 3.0 + 0.75 + 0.8) / 7.0, 1e-15);
        assert!((want - 3.38810).abs() < 5e-6);
    }

    #[test]
    fn no_scale_sep_grid_ellipticity() {
        let f = no_scale_sep_coefficient(0.0063, &DefectGeometry::well()).unwrap();
        f.verify_probe_ellipticity(100).unwrap();
        for i in 0..100 {
            for j in 0..100 {
                let x = [(i as f64 + 0.5) / 100.0, (j as f64 + 0.5) / 100.0];
                assert!(f.value(x).eigen_bounds().0 > 0.0);
            }
        }
    }

    #[test]
    fn probe_ellipticity_of_benchmark_fields() {
        two_scale_coefficient(0.04, 2.5, 1.5)
            .unwrap()
            .verify_probe_ellipticity(50)
            .unwrap();
        two_scale_effective(2.5, 1.5)
            .unwrap()
            .verify_probe_ellipticity(50)
            .unwrap();
    }

    #[test]
    fn evaluation_is_deterministic() {
        let f = two_scale_coefficient(0.04, 2.5, 1.5).unwrap();
        let a = f.value([0.123456789, 0.987654321]);
        let b = f.value([0.123456789, 0.987654321]);
        assert_eq!(a.a11.to_bits(), b.a11.to_bits());
    }

    #[test]
    fn hybrid_switches_on_region() {
        let mesh = build_structured_mesh(16).unwrap();
        let mesh = tag_regions(mesh, &DefectGeometry::well()).unwrap();
        let micro = Arc::new(CoefficientField::constant(7.0).unwrap());
        let macro_f = Arc::new(two_scale_effective(2.5, 1.5).unwrap());
        let h = hybrid(
            micro,
            macro_f.clone(),
            &mesh,
            &DefectGeometry::well(),
            RhoMode::Indicator,
        )
        .unwrap();

        for e in 0..mesh.num_elements() {
            let x = mesh.barycenter(e);
            let got = h.eval(e, x);
            match mesh.region(e) {
                Region::Exterior => assert_eq!(got, macro_f.value(x)),
                _ => assert_eq!(got, SymTensor2::scalar(7.0)),
            }
            // Indicator never mixes.
            let rho = h.rho(e);
            assert_eq!(rho * (1.0 - rho), 0.0);
        }
    }

    #[test]
    fn hybrid_of_equal_constants_is_constant() {
        let mesh = build_structured_mesh(8).unwrap();
        let mesh = tag_regions(mesh, &DefectGeometry::well()).unwrap();
        let c = Arc::new(CoefficientField::constant(3.25).unwrap());
        let h = hybrid(
            c.clone(),
            c,
            &mesh,
            &DefectGeometry::well(),
            RhoMode::Indicator,
        )
        .unwrap();
        for e in 0..mesh.num_elements() {
            assert_eq!(h.eval(e, mesh.barycenter(e)), SymTensor2::scalar(3.25));
        }
    }

    #[test]
    fn hybrid_without_k_elements_is_rejected() {
        // Untagged mesh: all Exterior.
        let mesh = build_structured_mesh(4).unwrap();
        let c = Arc::new(CoefficientField::constant(1.0).unwrap());
        let err = hybrid(
            c.clone(),
            c,
            &mesh,
            &DefectGeometry::well(),
            RhoMode::Indicator,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn linear_ramp_blends_in_layer() {
        let mesh = build_structured_mesh(64).unwrap();
        let defect = DefectGeometry::well();
        let mesh = tag_regions(mesh, &defect).unwrap();
        let micro = Arc::new(CoefficientField::constant(2.0).unwrap());
        let macro_f = Arc::new(CoefficientField::constant(1.0).unwrap());
        let h = hybrid(micro, macro_f, &mesh, &defect, RhoMode::LinearRamp).unwrap();
        let mut saw_mixture = false;
        for e in 0..mesh.num_elements() {
            let rho = h.rho(e);
            assert!((0.0..=1.0).contains(&rho));
            if mesh.region(e) == Region::Layer && rho > 0.0 && rho < 1.0 {
                saw_mixture = true;
                let v = h.eval(e, mesh.barycenter(e));
                assert!(v.a11 > 1.0 && v.a11 < 2.0);
            }
        }
        assert!(saw_mixture);
    }

    #[test]
    fn preset_parser() {
        let params = PresetParams {
            eps: Some(0.04),
            r1: Some(2.5),
            r2: Some(1.5),
            defect: Some(DefectGeometry::well()),
        };
        for id in ["two_scale", "two_scale_effective", "no_scale_sep", "constant:2.5"] {
            from_preset(id, &params).unwrap();
        }
        let c = from_preset("constant:0.5", &params).unwrap();
        assert_eq!(c.value([0.1, 0.2]), SymTensor2::scalar(0.5));
        assert!(from_preset("nope", &params).is_err());
        assert!(from_preset("constant:x", &params).is_err());
    }
}
