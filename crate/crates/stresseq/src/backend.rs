//! Sparse direct solver and thread pool executor.

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Col, Par};
use rayon::prelude::*;
use stresseq_core::equilibration::Executor;
use stresseq_core::linalg::{CsrMatrix, LinearSolver, SolverError};

/// Sparse LU with partial pivoting from faer. Factorisations run on one
/// thread so results do not depend on the machine.
#[derive(Clone, Copy, Debug, Default)]
pub struct SparseLuSolver;

impl LinearSolver for SparseLuSolver {
    fn solve(&self, a: &CsrMatrix, b: &[f64]) -> Result<Vec<f64>, SolverError> {
        let n = a.nrows();
        if a.ncols() != n || b.len() != n {
            return Err(SolverError::Backend(format!("shape mismatch: {}x{} with rhs {}", n, a.ncols(), b.len())));
        }
        faer::set_global_parallelism(Par::Seq);
        let triplets: Vec<Triplet<usize, usize, f64>> =
            a.triplets().map(|(i, j, v)| Triplet::new(i, j, v)).collect();
        let m = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &triplets)
            .map_err(|e| SolverError::Backend(format!("{e:?}")))?;
        let lu = m.sp_lu().map_err(|_| SolverError::Singular)?;
        let rhs = Col::<f64>::from_fn(n, |i| b[i]);
        let x = lu.solve(&rhs);
        let x: Vec<f64> = (0..n).map(|i| x[i]).collect();
        if x.iter().all(|v| v.is_finite()) {
            Ok(x)
        } else {
            Err(SolverError::Singular)
        }
    }
}

/// Runs tasks on a dedicated rayon pool. Results come back in index order,
/// so reductions over them do not depend on the thread count.
pub struct RayonExecutor {
    pool: rayon::ThreadPool,
}

impl RayonExecutor {
    /// `threads = 0` uses rayon's default.
    pub fn new(threads: usize) -> Result<Self, rayon::ThreadPoolBuildError> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
        Ok(RayonExecutor { pool })
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl std::fmt::Debug for RayonExecutor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RayonExecutor").field("threads", &self.threads()).finish()
    }
}

impl Executor for RayonExecutor {
    fn map<R: Send, F: Fn(usize) -> R + Sync>(&self, n: usize, f: F) -> Vec<R> {
        self.pool.install(|| (0..n).into_par_iter().map(&f).collect())
    }
}
