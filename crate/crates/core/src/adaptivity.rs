//! Dörfler marking and the solve, equilibrate, estimate, mark, refine loop.

use alloc::vec::Vec;

use crate::elasticity::{assemble_system, solve, ElasticityError, FieldPair, LoadData, Material, TaylorHood};
use crate::equilibration::{
    equilibrate, residual_scale, verify_equilibration, EquilibrationError, EquilibrationReport, Executor,
};
use crate::estimator::{
    compose_ancestors, energy_error, estimate, AnalyticSolution, BoundConstants, EstimatorError, EstimatorReport,
    FineReference, Reference,
};
use crate::linalg::LinearSolver;
use crate::mesh::{Mesh, MeshError};
use crate::spaces::RtSpace;
use crate::sqrt;

/// Smallest set of elements carrying at least `theta^2` of the total squared
/// indicator. Elements are taken by decreasing value, ties by index. The
/// result is sorted by element index.
pub fn doerfler_mark(eta: &[f64], theta: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..eta.len()).filter(|&t| eta[t] > 0.0).collect();
    order.sort_by(|&a, &b| eta[b].total_cmp(&eta[a]).then(a.cmp(&b)));
    if theta >= 1.0 {
        order.sort_unstable();
        return order;
    }
    let total: f64 = eta.iter().map(|x| x * x).sum();
    let target = theta * theta * total * (1.0 - 1e-12);
    let mut acc = 0.0;
    let mut n = 0;
    while n < order.len() && acc < target {
        acc += eta[order[n]] * eta[order[n]];
        n += 1;
    }
    order.truncate(n);
    order.sort_unstable();
    order
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EstimatorChoice {
    Equilibrated,
    Residual,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RefinementStrategy {
    Doerfler,
    Uniform,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdaptiveConfig {
    pub k: usize,
    pub material: Material,
    pub theta: f64,
    pub max_steps: usize,
    /// No further step is solved once the system would exceed this size.
    pub max_dofs: usize,
    pub estimator: EstimatorChoice,
    pub strategy: RefinementStrategy,
    pub constants: BoundConstants,
    /// Without an analytic solution, measure errors against the finest
    /// solution of the run. The two finest levels get no error.
    pub proxy_reference: bool,
    pub check_equilibration: bool,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AdaptivityError {
    #[error("Dörfler parameter must lie in (0, 1], got {0}")]
    InvalidTheta(f64),
    #[error("at least one step is required")]
    NoSteps,
    #[error("step {step}: {source}")]
    Step { step: usize, source: StepError },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StepError {
    #[error(transparent)]
    Elasticity(#[from] ElasticityError),
    #[error(transparent)]
    Equilibration(#[from] EquilibrationError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

impl AdaptiveConfig {
    pub fn validate(&self) -> Result<(), AdaptivityError> {
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return Err(AdaptivityError::InvalidTheta(self.theta));
        }
        if self.max_steps == 0 {
            return Err(AdaptivityError::NoSteps);
        }
        self.constants.validate().map_err(|e| AdaptivityError::Step { step: 0, source: e.into() })
    }
}

pub struct AdaptiveProblem {
    pub mesh: Mesh,
    pub load: LoadData,
    pub exact: Option<AnalyticSolution>,
}

/// One row of the convergence history.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    /// Free displacement dofs plus pressure dofs.
    pub n_dofs: usize,
    pub n_elements: usize,
    pub n_vertices: usize,
    pub min_angle: f64,
    pub h_max: f64,
    pub eta_a2: f64,
    pub eta_b2: f64,
    pub eta_c2: f64,
    pub eta_r2: f64,
    /// Squared bound with the configured constants.
    pub bound: f64,
    pub conservative_bound: f64,
    pub lambda_free_bound: f64,
    pub error: Option<f64>,
    pub efficiency_ratio: f64,
    pub n_marked: usize,
    /// Equilibration residuals and their scale, when checked.
    pub equilibration: Option<(EquilibrationReport, f64)>,
}

impl StepRecord {
    pub fn eta_total(&self) -> f64 {
        sqrt(self.eta_a2 + self.eta_b2 + self.eta_c2)
    }

    pub fn effectivity(&self) -> Option<f64> {
        self.error.filter(|&e| e > 0.0).map(|e| sqrt(self.bound) / e)
    }

    pub fn eta_a_effectivity(&self) -> Option<f64> {
        self.error.filter(|&e| e > 0.0).map(|e| sqrt(self.eta_a2) / e)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunHistory {
    pub steps: Vec<StepRecord>,
}

/// Solution data kept for every level of a run.
#[derive(Clone, Debug)]
pub struct Level {
    pub mesh: Mesh,
    pub spaces: TaylorHood,
    pub fields: FieldPair,
    pub report: EstimatorReport,
    /// Elements marked for refinement after this level.
    pub marked: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct AdaptiveRun {
    pub history: RunHistory,
    pub levels: Vec<Level>,
}

fn at(step: usize) -> impl Fn(StepError) -> AdaptivityError {
    move |source| AdaptivityError::Step { step, source }
}

pub fn adaptive_loop(
    problem: &AdaptiveProblem,
    config: &AdaptiveConfig,
    solver: &dyn LinearSolver,
    exec: &impl Executor,
) -> Result<AdaptiveRun, AdaptivityError> {
    adaptive_loop_with(problem, config, solver, exec, |_| {})
}

/// [`adaptive_loop`] with a callback after every recorded step.
pub fn adaptive_loop_with(
    problem: &AdaptiveProblem,
    config: &AdaptiveConfig,
    solver: &dyn LinearSolver,
    exec: &impl Executor,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<AdaptiveRun, AdaptivityError> {
    config.validate()?;
    let material = &config.material;
    let load = &problem.load;
    let mut mesh = problem.mesh.clone();
    let mut history = RunHistory::default();
    let mut levels: Vec<Level> = Vec::new();
    for step in 0..config.max_steps {
        let err = at(step);
        let spaces = TaylorHood::new(&mesh, config.k).map_err(|e| err(ElasticityError::from(e).into()))?;
        let system = assemble_system(&mesh, &spaces, material, load);
        let n_dofs = system.layout.size();
        if step > 0 && n_dofs > config.max_dofs {
            break;
        }
        let fields = solve(&mesh, &spaces, &system, solver).map_err(|e| err(e.into()))?;
        let rt = RtSpace::new(&mesh, config.k);
        let eq = equilibrate(&mesh, &spaces, &rt, &fields, material, load, exec).map_err(|e| err(e.into()))?;
        let equilibration = config.check_equilibration.then(|| {
            let scale = residual_scale(&mesh, &rt, &eq.discrete, load);
            (verify_equilibration(&mesh, &rt, &eq.reconstruction, load), scale)
        });
        let mut report =
            estimate(&mesh, &spaces, &rt, &fields, material, load, &eq, &config.constants, exec).map_err(|e| err(e.into()))?;
        if let Some(exact) = &problem.exact {
            let e = energy_error(&mesh, &spaces, &fields, material, Reference::Analytic(exact));
            report = report.with_error(e);
        }
        let last = step + 1 == config.max_steps;
        let marked = if last {
            Vec::new()
        } else {
            match config.strategy {
                RefinementStrategy::Uniform => (0..mesh.n_elements()).collect(),
                RefinementStrategy::Doerfler => {
                    let indicators = match config.estimator {
                        EstimatorChoice::Equilibrated => report.indicators(),
                        EstimatorChoice::Residual => report.eta_r.clone(),
                    };
                    doerfler_mark(&indicators, config.theta)
                }
            }
        };
        let record = StepRecord {
            step,
            n_dofs,
            n_elements: mesh.n_elements(),
            n_vertices: mesh.n_vertices(),
            min_angle: mesh.min_angle(),
            h_max: (0..mesh.n_elements()).map(|t| mesh.diameter(t)).fold(0.0, f64::max),
            eta_a2: report.sums.a,
            eta_b2: report.sums.b,
            eta_c2: report.sums.c,
            eta_r2: report.sum_r2,
            bound: report.bound,
            conservative_bound: report.conservative_bound,
            lambda_free_bound: report.lambda_free_bound,
            error: report.error,
            efficiency_ratio: report.efficiency_ratio(&mesh),
            n_marked: marked.len(),
            equilibration,
        };
        on_step(&record);
        history.steps.push(record);
        let next = if marked.is_empty() { None } else { Some(mesh.refine(&marked).map_err(|e| err(e.into()))?) };
        levels.push(Level { mesh, spaces, fields, report, marked });
        match next {
            Some(m) => mesh = m,
            None => break,
        }
    }
    if problem.exact.is_none() && config.proxy_reference {
        apply_proxy_reference(&mut history, &mut levels, material);
    }
    Ok(AdaptiveRun { history, levels })
}

/// Errors of every level but the two finest against the finest solution.
fn apply_proxy_reference(history: &mut RunHistory, levels: &mut [Level], material: &Material) {
    let n = levels.len();
    if n < 3 {
        return;
    }
    let (coarse, finest) = levels.split_at_mut(n - 1);
    let finest = &finest[0];
    for l in 0..n - 2 {
        let maps: Vec<&[usize]> = (l + 1..n)
            .map(|j| if j == n - 1 { finest.mesh.parents() } else { coarse[j].mesh.parents() })
            .map(|p| p.expect("refined meshes record their parents"))
            .collect();
        let ancestors = compose_ancestors(&maps);
        let reference =
            FineReference { mesh: &finest.mesh, spaces: &finest.spaces, fields: &finest.fields, ancestors: &ancestors };
        let lvl = &mut coarse[l];
        let e = energy_error(&lvl.mesh, &lvl.spaces, &lvl.fields, material, Reference::Fine(reference));
        lvl.report.error = Some(e);
        history.steps[l].error = Some(e);
    }
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let lx: Vec<f64> = x.iter().map(|v| libm::log(*v)).collect();
    let ly: Vec<f64> = y.iter().map(|v| libm::log(*v)).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibration::Sequential;
    use crate::linalg::DenseLuSolver;
    use crate::mesh::{structured_mesh, SideKind};
    use proptest::prelude::*;

    /// Minimal cardinality by exhaustive search over subsets.
    fn brute_force_min(eta: &[f64], theta: f64) -> usize {
        let total: f64 = eta.iter().map(|x| x * x).sum();
        let n = eta.len();
        (0u32..1 << n)
            .filter(|mask| {
                let s: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| eta[i] * eta[i]).sum();
                s >= theta * theta * total * (1.0 - 1e-12)
            })
            .map(|mask| mask.count_ones() as usize)
            .min()
            .unwrap()
    }

    #[test]
    fn marking_examples() {
        assert_eq!(doerfler_mark(&[3.0, 4.0, 0.0], 0.6), alloc::vec![1]);
        assert_eq!(brute_force_min(&[3.0, 4.0, 0.0], 0.6), 1);
        assert_eq!(doerfler_mark(&[3.0, 4.0, 0.0, 1e-9], 1.0), alloc::vec![0, 1, 3]);
        for n in 1..20 {
            let m = doerfler_mark(&alloc::vec![2.0; n], 0.5);
            assert_eq!(m.len(), n.div_ceil(4));
            assert_eq!(m, (0..m.len()).collect::<Vec<_>>());
        }
        assert!(doerfler_mark(&[0.0, 0.0], 0.5).is_empty());
    }

    proptest! {
        #[test]
        fn marking_is_minimal_and_sufficient(
            eta in prop::collection::vec(0.0..10.0f64, 1..12),
            theta in 0.05..1.0f64,
        ) {
            let m = doerfler_mark(&eta, theta);
            let total: f64 = eta.iter().map(|x| x * x).sum();
            let s: f64 = m.iter().map(|&i| eta[i] * eta[i]).sum();
            prop_assert!(s >= theta * theta * total * (1.0 - 1e-12));
            prop_assert_eq!(m.len(), brute_force_min(&eta, theta));
            // Every unmarked element is no larger than every marked one.
            let min_marked = m.iter().map(|&i| eta[i]).fold(f64::INFINITY, f64::min);
            for i in 0..eta.len() {
                if !m.contains(&i) {
                    prop_assert!(eta[i] <= min_marked);
                }
            }
        }
    }

    fn problem() -> AdaptiveProblem {
        let mesh = structured_mesh(2, 2, |s, t| [s, t], |_, _| true, |a, b| {
            if a[0] == 0.0 && b[0] == 0.0 {
                SideKind::Dirichlet
            } else {
                SideKind::Neumann
            }
        })
        .unwrap();
        let load = LoadData::new(|x| [libm::sin(4.0 * x[1]), 1.0], |_, _| [0.0, 0.1]);
        AdaptiveProblem { mesh, load, exact: None }
    }

    fn config(steps: usize) -> AdaptiveConfig {
        AdaptiveConfig {
            k: 1,
            material: Material::new(1.0, 0.0).unwrap(),
            theta: 0.5,
            max_steps: steps,
            max_dofs: 100_000,
            estimator: EstimatorChoice::Equilibrated,
            strategy: RefinementStrategy::Doerfler,
            constants: BoundConstants::conservative(),
            proxy_reference: true,
            check_equilibration: true,
        }
    }

    #[test]
    fn single_step_does_not_refine() {
        let run = adaptive_loop(&problem(), &config(1), &DenseLuSolver::default(), &Sequential).unwrap();
        assert_eq!(run.history.steps.len(), 1);
        assert!(run.levels[0].marked.is_empty());
        assert_eq!(run.history.steps[0].error, None);
    }

    #[test]
    fn loop_records_increasing_dofs_and_proxy_errors() {
        let run = adaptive_loop(&problem(), &config(5), &DenseLuSolver::default(), &Sequential).unwrap();
        let steps = &run.history.steps;
        assert_eq!(steps.len(), 5);
        assert!(steps.windows(2).all(|w| w[0].n_dofs < w[1].n_dofs));
        for (i, s) in steps.iter().enumerate() {
            assert_eq!(s.error.is_some(), i < 3, "step {i}");
            let (rep, scale) = s.equilibration.unwrap();
            assert!(rep.max() <= 1e-9 * scale);
            if let Some(e) = s.error {
                assert!(e * e <= s.bound);
            }
        }
    }

    #[test]
    fn dof_limit_stops_the_loop() {
        let mut c = config(10);
        c.max_dofs = 200;
        let run = adaptive_loop(&problem(), &c, &DenseLuSolver::default(), &Sequential).unwrap();
        assert!(run.history.steps.len() < 10);
        assert!(run.history.steps.iter().skip(1).all(|s| s.n_dofs <= 200));
    }

    #[test]
    fn invalid_configuration_is_rejected() {
        let mut c = config(3);
        c.theta = 0.0;
        assert!(matches!(adaptive_loop(&problem(), &c, &DenseLuSolver::default(), &Sequential), Err(AdaptivityError::InvalidTheta(_))));
        c.theta = 0.5;
        c.max_steps = 0;
        assert!(matches!(adaptive_loop(&problem(), &c, &DenseLuSolver::default(), &Sequential), Err(AdaptivityError::NoSteps)));
    }

    #[test]
    fn solver_failures_carry_the_step() {
        struct Failing;
        impl LinearSolver for Failing {
            fn solve(&self, _: &crate::linalg::CsrMatrix, _: &[f64]) -> Result<Vec<f64>, crate::linalg::SolverError> {
                Err(crate::linalg::SolverError::Singular)
            }
        }
        let err = adaptive_loop(&problem(), &config(3), &Failing, &Sequential).unwrap_err();
        assert!(matches!(err, AdaptivityError::Step { step: 0, .. }));
    }

    #[test]
    fn slope_of_power_law() {
        let x = [10.0, 100.0, 1000.0];
        let y: Vec<f64> = x.iter().map(|v| 3.0 / v).collect();
        assert!((loglog_slope(&x, &y) + 1.0).abs() < 1e-12);
    }
}
