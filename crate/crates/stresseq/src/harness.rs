//! Orchestration behind the command line: building the problem from a
//! configuration, running the adaptive loop and writing the outputs.

use std::path::{Path, PathBuf};

use stresseq_core::adaptivity::{adaptive_loop_with, AdaptiveConfig, AdaptiveProblem, AdaptiveRun, AdaptivityError, StepRecord};
use stresseq_core::elasticity::{assemble_system, solve, ElasticityError, Material, TaylorHood};
use stresseq_core::equilibration::{
    equilibrate, residual_scale, solve_patch, verify_equilibration, EquilibrationContext, EquilibrationError,
    EquilibrationReport,
};
use stresseq_core::estimator::BoundConstants;
use stresseq_core::mesh::{modified_patches, Mesh, SideKind};
use stresseq_core::spaces::RtSpace;

use crate::backend::{RayonExecutor, SparseLuSolver};
use crate::config::{Config, ConfigError};
use crate::meshio::{read_mesh, write_mesh};
use crate::output::{emit_diagnostics, emit_history, emit_report};
use crate::problems::{ProblemError, ProblemSpec};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl HarnessError {
    pub fn category(&self) -> &'static str {
        match self {
            HarnessError::Config(_) => "config",
            HarnessError::Problem(_) => "problem",
            HarnessError::Io { .. } => "io",
        }
    }
}

fn io_at(path: &Path) -> impl Fn(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

fn material(config: &Config) -> Result<Material, HarnessError> {
    Material::new(config.mu, config.inv_lambda).map_err(|e| HarnessError::Problem(e.into()))
}

/// The built-in problem with the configured initial mesh, if any.
pub fn load_problem(config: &Config) -> Result<ProblemSpec, HarnessError> {
    let spec = ProblemSpec::builtin(config.problem, &material(config)?)?;
    match &config.mesh {
        None => Ok(spec),
        Some(path) => {
            if !path.is_file() {
                return Err(ConfigError::MissingMesh(path.display().to_string()).into());
            }
            let mesh = read_mesh(path).map_err(ProblemError::from)?;
            Ok(spec.with_mesh(mesh)?)
        }
    }
}

/// Constants for the bound. A single configured constant is paired with the
/// conservative value of the other.
pub fn bound_constants(config: &Config) -> Result<BoundConstants, HarnessError> {
    let fallback = BoundConstants::conservative();
    match (config.c_k, config.c_a) {
        (None, None) => Ok(fallback),
        (c_k, c_a) => {
            let (c_k, c_a) = (c_k.unwrap_or(fallback.c_k), c_a.unwrap_or(fallback.c_a));
            BoundConstants::new(c_k, c_a).map_err(|e| {
                ConfigError::InvalidValue { key: "c_k, c_a".into(), value: format!("{c_k}, {c_a}"), reason: e.to_string() }
                    .into()
            })
        }
    }
}

pub fn adaptive_config(config: &Config) -> Result<AdaptiveConfig, HarnessError> {
    Ok(AdaptiveConfig {
        k: config.k,
        material: material(config)?,
        theta: config.theta,
        max_steps: config.steps,
        max_dofs: config.max_dofs,
        estimator: config.estimator,
        strategy: config.refinement,
        constants: bound_constants(config)?,
        proxy_reference: true,
        check_equilibration: true,
    })
}

fn executor(config: &Config) -> Result<RayonExecutor, HarnessError> {
    RayonExecutor::new(config.threads).map_err(|e| {
        ConfigError::InvalidValue { key: "threads".into(), value: config.threads.to_string(), reason: e.to_string() }.into()
    })
}

fn problem_error(e: impl Into<ProblemError>) -> HarnessError {
    HarnessError::Problem(e.into())
}

pub struct RunOutcome {
    pub run: AdaptiveRun,
    pub output_dir: PathBuf,
    pub files: Vec<PathBuf>,
}

pub fn run(config: &Config) -> Result<RunOutcome, HarnessError> {
    run_with(config, |_| {})
}

/// [`run`] with a callback after every step.
pub fn run_with(config: &Config, on_step: impl FnMut(&StepRecord)) -> Result<RunOutcome, HarnessError> {
    config.validate()?;
    let spec = load_problem(config)?;
    let acfg = adaptive_config(config)?;
    let exec = executor(config)?;
    let problem = AdaptiveProblem { mesh: spec.mesh, load: spec.load, exact: spec.exact };
    let run = adaptive_loop_with(&problem, &acfg, &SparseLuSolver, &exec, on_step).map_err(problem_error)?;

    let dir = config.effective_output_dir();
    std::fs::create_dir_all(&dir).map_err(io_at(&dir))?;
    let mut files = Vec::new();
    let config_path = dir.join("config.txt");
    std::fs::write(&config_path, config.emit()).map_err(io_at(&config_path))?;
    files.push(config_path);
    let history = dir.join("history.csv");
    emit_history(&run.history, &history).map_err(io_at(&history))?;
    files.push(history);
    let diagnostics = dir.join("diagnostics.csv");
    emit_diagnostics(&run.history, &diagnostics).map_err(io_at(&diagnostics))?;
    files.push(diagnostics);
    let finest = run.levels.last().expect("a run has at least one level");
    let report = dir.join("report.csv");
    emit_report(&finest.report, &finest.mesh, &report).map_err(io_at(&report))?;
    files.push(report);
    if config.write_meshes {
        for (i, level) in run.levels.iter().enumerate() {
            let path = dir.join(format!("mesh_{i:03}.txt"));
            write_mesh(&level.mesh, &path).map_err(io_at(&path))?;
            files.push(path);
        }
    }
    Ok(RunOutcome { run, output_dir: dir, files })
}

/// Equilibration diagnostics on the initial mesh.
#[derive(Clone, Debug, PartialEq)]
pub struct VerifyOutcome {
    pub residuals: EquilibrationReport,
    pub scale: f64,
    pub n_patches: usize,
    pub n_free_patches: usize,
    /// Largest `|y . rhs|` over the rigid-body multipliers of free patches.
    pub compatibility: f64,
    /// Rank deficiency of every free patch constraint matrix.
    pub rank_deficiencies: Vec<usize>,
    pub output_dir: PathBuf,
}

impl VerifyOutcome {
    /// Residuals and compatibility within `1e-9` of the scale, and three
    /// dependent constraints on every free patch.
    pub fn passed(&self) -> bool {
        let tol = 1e-9 * self.scale;
        self.residuals.max() <= tol && self.compatibility <= tol && self.rank_deficiencies.iter().all(|&d| d == 3)
    }
}

pub fn verify(config: &Config) -> Result<VerifyOutcome, HarnessError> {
    config.validate()?;
    let spec = load_problem(config)?;
    let material = material(config)?;
    let exec = executor(config)?;
    let mesh = &spec.mesh;
    let load = &spec.load;
    let at0 = |source| problem_error(AdaptivityError::Step { step: 0, source });
    let spaces = TaylorHood::new(mesh, config.k).map_err(|e| at0(ElasticityError::from(e).into()))?;
    let system = assemble_system(mesh, &spaces, &material, load);
    let fields = solve(mesh, &spaces, &system, &SparseLuSolver).map_err(|e| at0(e.into()))?;
    let rt = RtSpace::new(mesh, config.k);
    let eq = equilibrate(mesh, &spaces, &rt, &fields, &material, load, &exec).map_err(|e| at0(e.into()))?;
    let scale = residual_scale(mesh, &rt, &eq.discrete, load);
    let residuals = verify_equilibration(mesh, &rt, &eq.reconstruction, load);

    let patches = modified_patches(mesh).map_err(|e| at0(e.into()))?;
    let ctx = EquilibrationContext::new(mesh, &rt, &eq.discrete, load, &exec);
    let free: Vec<_> = patches.iter().filter(|p| !p.touches_dirichlet).collect();
    let checks: Vec<Result<(f64, usize), EquilibrationError>> = free
        .iter()
        .map(|patch| {
            let pb = ctx.patch_problem(patch);
            let compat = ctx
                .rigid_multipliers(&pb)
                .iter()
                .map(|y| y.iter().zip(&pb.rhs).map(|(a, b)| a * b).sum::<f64>().abs())
                .fold(0.0, f64::max);
            let sol = solve_patch(&pb)?;
            Ok((compat, pb.rhs.len() - sol.rank))
        })
        .collect();
    let mut compatibility = 0.0f64;
    let mut rank_deficiencies = Vec::with_capacity(free.len());
    for c in checks {
        let (compat, def) = c.map_err(|e| at0(e.into()))?;
        compatibility = compatibility.max(compat);
        rank_deficiencies.push(def);
    }

    let outcome = VerifyOutcome {
        residuals,
        scale,
        n_patches: patches.len(),
        n_free_patches: free.len(),
        compatibility,
        rank_deficiencies,
        output_dir: config.effective_output_dir(),
    };
    let dir = &outcome.output_dir;
    std::fs::create_dir_all(dir).map_err(io_at(dir))?;
    let path = dir.join("verify.csv");
    write_verify(&outcome, &path).map_err(io_at(&path))?;
    Ok(outcome)
}

fn write_verify(o: &VerifyOutcome, path: &Path) -> std::io::Result<()> {
    use crate::meshio::format_f64;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["quantity", "value"])?;
    let r = &o.residuals;
    let max_def = o.rank_deficiencies.iter().copied().max().unwrap_or(0);
    let min_def = o.rank_deficiencies.iter().copied().min().unwrap_or(0);
    for (k, v) in [
        ("residual_divergence", format_f64(r.divergence)),
        ("residual_jump", format_f64(r.jump)),
        ("residual_neumann", format_f64(r.neumann)),
        ("residual_symmetry", format_f64(r.symmetry)),
        ("scale", format_f64(o.scale)),
        ("patches", o.n_patches.to_string()),
        ("free_patches", o.n_free_patches.to_string()),
        ("compatibility", format_f64(o.compatibility)),
        ("rank_deficiency_min", min_def.to_string()),
        ("rank_deficiency_max", max_def.to_string()),
        ("passed", o.passed().to_string()),
    ] {
        w.write_record([k, v.as_str()])?;
    }
    w.flush()
}

/// Summary of a mesh file.
#[derive(Clone, Debug, PartialEq)]
pub struct MeshInfo {
    pub vertices: usize,
    pub elements: usize,
    pub dirichlet_sides: usize,
    pub neumann_sides: usize,
    pub area: f64,
    pub min_angle: f64,
    pub h_max: f64,
}

impl MeshInfo {
    pub fn of(mesh: &Mesh) -> Self {
        MeshInfo {
            vertices: mesh.n_vertices(),
            elements: mesh.n_elements(),
            dirichlet_sides: mesh.boundary_sides(SideKind::Dirichlet).len(),
            neumann_sides: mesh.boundary_sides(SideKind::Neumann).len(),
            area: mesh.total_area(),
            min_angle: mesh.min_angle(),
            h_max: (0..mesh.n_elements()).map(|t| mesh.diameter(t)).fold(0.0, f64::max),
        }
    }
}

impl std::fmt::Display for MeshInfo {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "vertices        {}", self.vertices)?;
        writeln!(f, "elements        {}", self.elements)?;
        writeln!(f, "dirichlet sides {}", self.dirichlet_sides)?;
        writeln!(f, "neumann sides   {}", self.neumann_sides)?;
        writeln!(f, "area            {}", self.area)?;
        writeln!(f, "min angle (deg) {}", self.min_angle.to_degrees())?;
        write!(f, "h_max           {}", self.h_max)
    }
}

pub fn mesh_info(path: &Path) -> Result<MeshInfo, HarnessError> {
    if !path.is_file() {
        return Err(ConfigError::MissingMesh(path.display().to_string()).into());
    }
    let mesh = read_mesh(path).map_err(ProblemError::from)?;
    Ok(MeshInfo::of(&mesh))
}
