//! Concurrent global-local finite element solver for multiscale parabolic
//! equations on the unit square.
//!
//! The solver marches a backward Euler scheme whose diffusion coefficient is
//! a hybrid: the rough microscale tensor inside a defect buffer K, and
//! effective (homogenized) data outside. Effective data comes either from a
//! closed form or from HMM cell problems on small cells. The crate also
//! carries the mesh generator, error metrics, and the experiment harness
//! behind the command-line front end.

pub mod coefficient;
pub mod error;
pub mod fem;
pub mod harness;
pub mod homogenize;
pub mod linalg;
pub mod mesh;
pub mod metrics;

pub use coefficient::{
    from_preset, hybrid, no_scale_sep_coefficient, two_scale_coefficient, two_scale_effective,
    Coefficient, CoefficientField, HybridField, PresetParams, RhoMode, SymTensor2,
};
pub use error::{Error, Result};
pub use fem::{
    assemble_load, assemble_mass, assemble_stiffness, backward_euler_march, march_collect,
    project_initial, FeFunction, ParabolicProblem, SourceTerm,
};
pub use harness::{
    build_example, emit_csv, emit_svg, run_experiment, ErrorReport, ExampleId, ExperimentConfig,
    LevelRow, RunOptions,
};
pub use homogenize::{
    assemble_effective_field, e_hmm_report, solve_cell_problem, CellBc, CellProblemSpec,
    EffectiveField, EffectivePolicy, SamplingPolicy,
};
pub use linalg::{cg_solve, Preconditioner, SolveReport, SolverOptions, SparseMatrix};
pub use mesh::{
    build_locally_refined_mesh, build_structured_mesh, build_uniform_refined, dilate_defect,
    tag_regions, DefectGeometry, DefectKind, Mesh, MeshSpec, Region, Shape,
};
pub use metrics::{
    convergence_orders, errors_vs_exact, eta_k, region_relative_errors, transfer_to_fine,
    ConvergenceTable, ErrorRegion, RegionError,
};
