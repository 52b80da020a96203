//! Reference 3D linear elasticity on S_δ, the δ → 0 convergence harness,
//! recovery and test sequences, and numeric checks of the weighted
//! inequalities on plane sectors.

pub mod locate;
pub mod mesher;
pub mod sectors;
pub mod sequences;
pub mod solver;
pub mod study;

pub use locate::TriangleLocator;
pub use mesher::{build_junction_mesh, JunctionMesh, MeshParams, NodeDof};
pub use sectors::{
    cone_lifting, lemma_checks, random_smooth_field, weighted_poincare_check, ConeLifting, LemmaReport, PoincareCheck, PolarGrid,
};
pub use sequences::{p1_h1_distance, p1_interpolate, recovery_sequence, test_sequence, RecoveryDistances, RecoverySequence};
pub use solver::{solve_3d, solve_3d_prescribed, Solution3D, Structure3DProblem};
pub use study::{convergence_study, ConvergenceRecord, ConvergenceRow, StrainDistances, TrendFlag};
