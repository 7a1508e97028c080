//! Guaranteed error bounds from an equilibrated stress, the residual
//! estimator used for comparison, data oscillation and energy errors.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::elasticity::{load_rule, traction_rule, FieldPair, LoadData, Material, TaylorHood};
use crate::equilibration::{Equilibrated, Executor};
use crate::mesh::{Mesh, Point, SideKind};
use crate::quadrature::{LineRule, TriangleRule};
use crate::spaces::{project_traction, project_volume, BrokenStress, RtSpace};
use crate::tensor::Tensor2;
use crate::{sq, sqrt};

/// Spatial dimension of every mesh handled here.
pub const DIM: usize = 2;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EstimatorError {
    #[error("invalid bound constants C_K = {c_k}, C_A = {c_a} (need C_K >= 2 and C_A > 0)")]
    InvalidConstants { c_k: f64, c_a: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConstantsSource {
    UserSupplied,
    /// `C_K = 3 sqrt(8)` and `C_A = 3 * 2 sqrt(7)`: the Korn constant of a
    /// patch of six equilateral triangles, the dev-div constant derived from
    /// it, both scaled by the number of vertices per element.
    DefaultRegularPatch,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PatchConstants {
    pub vertex: usize,
    pub c_k: f64,
    pub c_a: f64,
}

/// Korn-type constant `C_K` and dev-div constant `C_A` of the bound.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundConstants {
    pub c_k: f64,
    pub c_a: f64,
    pub source: ConstantsSource,
    /// Per-patch values. They are validated and carried along but the bound
    /// only uses the global constants.
    pub patch_overrides: Vec<PatchConstants>,
}

fn check_constants(c_k: f64, c_a: f64) -> Result<(), EstimatorError> {
    if c_k >= 2.0 && c_k.is_finite() && c_a > 0.0 && c_a.is_finite() {
        Ok(())
    } else {
        Err(EstimatorError::InvalidConstants { c_k, c_a })
    }
}

impl BoundConstants {
    pub fn new(c_k: f64, c_a: f64) -> Result<Self, EstimatorError> {
        check_constants(c_k, c_a)?;
        Ok(BoundConstants { c_k, c_a, source: ConstantsSource::UserSupplied, patch_overrides: Vec::new() })
    }

    pub fn conservative() -> Self {
        let patch_korn = sqrt(8.0);
        let patch_dev_div = 2.0 * sqrt(sq(patch_korn) - 1.0);
        let n = (DIM + 1) as f64;
        BoundConstants {
            c_k: n * patch_korn,
            c_a: n * patch_dev_div,
            source: ConstantsSource::DefaultRegularPatch,
            patch_overrides: Vec::new(),
        }
    }

    pub fn with_patch_override(mut self, vertex: usize, c_k: f64, c_a: f64) -> Result<Self, EstimatorError> {
        check_constants(c_k, c_a)?;
        self.patch_overrides.retain(|p| p.vertex != vertex);
        self.patch_overrides.push(PatchConstants { vertex, c_k, c_a });
        self.patch_overrides.sort_by_key(|p| p.vertex);
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), EstimatorError> {
        check_constants(self.c_k, self.c_a)?;
        self.patch_overrides.iter().try_for_each(|p| check_constants(p.c_k, p.c_a))
    }
}

/// `lambda / (2 mu + d lambda)`, written with `1 / lambda` so that the
/// incompressible limit is `1 / d`.
pub fn trace_coefficient(material: &Material) -> f64 {
    1.0 / (2.0 * material.mu * material.inv_lambda + DIM as f64)
}

/// Compliance `A tau = (tau - c tr(tau) I) / (2 mu)` with `c` from
/// [`trace_coefficient`].
pub fn apply_a(tau: &Tensor2, material: &Material) -> Tensor2 {
    let c = trace_coefficient(material);
    (*tau - Tensor2::IDENTITY * (c * tau.trace())) * (0.5 / material.mu)
}

/// `|as tau|^2 = (tau_12 - tau_21)^2 / 2`.
pub fn asym_norm_sq(tau: &Tensor2) -> f64 {
    0.5 * sq(tau.0[0][1] - tau.0[1][0])
}

/// Squared estimator contributions summed over all elements.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EtaSums {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl EtaSums {
    pub fn from_elements(eta_a: &[f64], eta_b: &[f64], eta_c: &[f64]) -> Self {
        let s = |v: &[f64]| v.iter().map(|x| x * x).sum();
        EtaSums { a: s(eta_a), b: s(eta_b), c: s(eta_c) }
    }

    pub fn total(&self) -> f64 {
        sqrt(self.a + self.b + self.c)
    }
}

/// Weight of the compressibility term in the bound,
/// `2 (2 mu / lambda + d + C_A^2) / (2 mu / lambda + d)^2`. It increases
/// with `lambda` towards `2 (1/d + C_A^2 / d^2)`.
pub fn b_coefficient(material: &Material, c_a: f64) -> f64 {
    let s = 2.0 * material.mu * material.inv_lambda + DIM as f64;
    2.0 * (s + sq(c_a)) / sq(s)
}

/// Upper bound for the squared energy error.
pub fn guaranteed_bound(sums: &EtaSums, material: &Material, constants: &BoundConstants) -> Result<f64, EstimatorError> {
    constants.validate()?;
    Ok(2.0 * sums.a + b_coefficient(material, constants.c_a) * sums.b + 4.0 * sq(constants.c_k) * sums.c)
}

/// The bound with the compressibility weight replaced by its incompressible
/// limit, valid for every `lambda`.
pub fn lambda_free_bound(sums: &EtaSums, material: &Material, constants: &BoundConstants) -> Result<f64, EstimatorError> {
    let limit = Material { inv_lambda: 0.0, ..*material };
    guaranteed_bound(sums, &limit, constants)
}

fn volume_rule(k: usize) -> TriangleRule {
    TriangleRule::exact_for(2 * k + 2)
}

/// `|div u_h - p_h / lambda|^2` on element `t`.
fn compressibility_sq(mesh: &Mesh, spaces: &TaylorHood, fields: &FieldPair, material: &Material, t: usize) -> f64 {
    let rule = volume_rule(spaces.degree());
    let det = mesh.geometry(t).det;
    rule.points
        .iter()
        .zip(&rule.weights)
        .map(|(p, w)| {
            let du = spaces.displacement_gradient(mesh, fields, t, *p);
            let r = du[0][0] + du[1][1] - material.inv_lambda * spaces.pressure_at(fields, t, *p);
            w * det * r * r
        })
        .sum()
}

/// Elementwise `(eta_A, eta_B, eta_C)` for the correction `sigma_delta`.
#[derive(Clone, Debug, PartialEq)]
pub struct EtaComponents {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

impl EtaComponents {
    pub fn sums(&self) -> EtaSums {
        EtaSums::from_elements(&self.a, &self.b, &self.c)
    }

    pub fn total(&self, t: usize) -> f64 {
        sqrt(sq(self.a[t]) + sq(self.b[t]) + sq(self.c[t]))
    }
}

#[allow(clippy::too_many_arguments)]
pub fn eta_components(
    mesh: &Mesh,
    spaces: &TaylorHood,
    rt: &RtSpace,
    correction: &BrokenStress,
    fields: &FieldPair,
    material: &Material,
    exec: &impl Executor,
) -> EtaComponents {
    let rule = volume_rule(rt.degree());
    let two_mu = 2.0 * material.mu;
    let per_element = exec.map(mesh.n_elements(), |t| {
        let geo = mesh.geometry(t);
        let (vals, divs) = rt.tabulate(mesh, t, &rule.points);
        let n = rt.dim();
        let (mut a2, mut c2) = (0.0, 0.0);
        for (q, &w) in rule.weights.iter().enumerate() {
            let (s, _) = correction.combine(t, &vals[q * n..(q + 1) * n], &divs[q * n..(q + 1) * n]);
            a2 += w * geo.det * apply_a(&s, material).ddot(&s);
            c2 += w * geo.det * asym_norm_sq(&s);
        }
        let b2 = two_mu * compressibility_sq(mesh, spaces, fields, material, t);
        (sqrt(a2.max(0.0)), sqrt(b2), sqrt(c2 / two_mu))
    });
    EtaComponents {
        a: per_element.iter().map(|e| e.0).collect(),
        b: per_element.iter().map(|e| e.1).collect(),
        c: per_element.iter().map(|e| e.2).collect(),
    }
}

/// Elementwise residual estimator
///
/// ```text
/// eta_R^2 = h_T^2 |P_k f + div sigma_h|^2 + sum_S h_S |[sigma_h n]*|_S^2 + |div u_h - p_h / lambda|^2
/// ```
///
/// where the starred jump is `sigma_h n - P_k g` on Neumann sides and
/// Dirichlet sides are skipped.
#[allow(clippy::too_many_arguments)]
pub fn residual_estimator(
    mesh: &Mesh,
    spaces: &TaylorHood,
    rt: &RtSpace,
    sigma_h: &BrokenStress,
    fields: &FieldPair,
    material: &Material,
    load: &LoadData,
    exec: &impl Executor,
) -> Vec<f64> {
    let k = rt.degree();
    let pf = project_volume(mesh, k, 2 * k + 6, |x| load.f(x));
    let pg = project_traction(mesh, k, &traction_rule(k), |x, n| load.g(x, n));
    let side_rule = LineRule::gauss(k + 2);
    let side_terms = exec.map(mesh.n_sides(), |s| {
        let side = mesh.side(s);
        if side.kind == SideKind::Dirichlet {
            return 0.0;
        }
        let (pa, pb) = (mesh.vertex(side.vertices[0]), mesh.vertex(side.vertices[1]));
        let mut j2 = 0.0;
        for (&tq, &w) in side_rule.points.iter().zip(&side_rule.weights) {
            let x = [pa[0] + tq * (pb[0] - pa[0]), pa[1] + tq * (pb[1] - pa[1])];
            let a = sigma_h.value(rt, side.minus, x).apply(side.normal);
            let b = match side.plus {
                Some(p) => sigma_h.value(rt, p, x).apply(side.normal),
                None => pg.value(mesh, s, x),
            };
            j2 += w * side.length * (sq(a[0] - b[0]) + sq(a[1] - b[1]));
        }
        side.length * j2
    });
    let rule = volume_rule(k);
    exec.map(mesh.n_elements(), |t| {
        let geo = mesh.geometry(t);
        let (vals, divs) = rt.tabulate(mesh, t, &rule.points);
        let n = rt.dim();
        let mut r2 = 0.0;
        for (q, (p, &w)) in rule.points.iter().zip(&rule.weights).enumerate() {
            let (_, d) = sigma_h.combine(t, &vals[q * n..(q + 1) * n], &divs[q * n..(q + 1) * n]);
            let f = pf.value(t, geo.map(*p));
            r2 += w * geo.det * (sq(f[0] + d[0]) + sq(f[1] + d[1]));
        }
        let jumps: f64 = mesh.element_sides(t).iter().map(|&s| side_terms[s]).sum();
        let h = mesh.diameter(t);
        sqrt(h * h * r2 + jumps + compressibility_sq(mesh, spaces, fields, material, t))
    })
}

/// `h_T |f - P_k f|_T` per element and `h_S^(1/2) |g - P_k g|_S` per side
/// (zero off the Neumann boundary).
#[derive(Clone, Debug, PartialEq)]
pub struct DataOscillation {
    pub element: Vec<f64>,
    pub side: Vec<f64>,
}

impl DataOscillation {
    pub fn total(&self) -> f64 {
        sqrt(self.element.iter().chain(&self.side).map(|x| x * x).sum())
    }
}

pub fn data_oscillation(mesh: &Mesh, k: usize, load: &LoadData) -> DataOscillation {
    let pf = project_volume(mesh, k, 2 * k + 6, |x| load.f(x));
    let trule = traction_rule(k);
    let pg = project_traction(mesh, k, &trule, |x, n| load.g(x, n));
    let rule = load_rule(k);
    let element = (0..mesh.n_elements())
        .map(|t| {
            let geo = mesh.geometry(t);
            let mut e2 = 0.0;
            for (p, &w) in rule.points.iter().zip(&rule.weights) {
                let x = geo.map(*p);
                let (f, q) = (load.f(x), pf.value(t, x));
                e2 += w * geo.det * (sq(f[0] - q[0]) + sq(f[1] - q[1]));
            }
            mesh.diameter(t) * sqrt(e2)
        })
        .collect();
    let side = mesh
        .sides()
        .iter()
        .enumerate()
        .map(|(s, side)| {
            if side.kind != SideKind::Neumann {
                return 0.0;
            }
            let (pa, pb) = (mesh.vertex(side.vertices[0]), mesh.vertex(side.vertices[1]));
            let mut e2 = 0.0;
            for (&tq, &w) in trule.points.iter().zip(&trule.weights) {
                let x = [pa[0] + tq * (pb[0] - pa[0]), pa[1] + tq * (pb[1] - pa[1])];
                let (g, q) = (load.g(x, side.normal), pg.value(mesh, s, x));
                e2 += w * side.length * (sq(g[0] - q[0]) + sq(g[1] - q[1]));
            }
            sqrt(side.length * e2)
        })
        .collect();
    DataOscillation { element, side }
}

pub type GradientField = Arc<dyn Fn(Point) -> [[f64; 2]; 2] + Send + Sync>;
pub type ScalarField = Arc<dyn Fn(Point) -> f64 + Send + Sync>;

/// Exact displacement gradient (`[i][j] = d u_i / d x_j`) and pressure.
#[derive(Clone)]
pub struct AnalyticSolution {
    pub displacement_gradient: GradientField,
    pub pressure: ScalarField,
}

impl core::fmt::Debug for AnalyticSolution {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str("AnalyticSolution { .. }")
    }
}

/// A solution on a refinement of the mesh being measured. `ancestors[t]`
/// is the element of the coarse mesh containing fine element `t`.
#[derive(Clone, Copy, Debug)]
pub struct FineReference<'a> {
    pub mesh: &'a Mesh,
    pub spaces: &'a TaylorHood,
    pub fields: &'a FieldPair,
    pub ancestors: &'a [usize],
}

#[derive(Clone, Copy, Debug)]
pub enum Reference<'a> {
    Analytic(&'a AnalyticSolution),
    Fine(FineReference<'a>),
}

/// Composes parent maps, ordered from the first refinement to the last,
/// into the map from elements of the last mesh to elements of the first.
pub fn compose_ancestors(parent_maps: &[&[usize]]) -> Vec<usize> {
    let mut maps = parent_maps.iter().rev();
    let Some(last) = maps.next() else {
        return Vec::new();
    };
    let mut anc = last.to_vec();
    for m in maps {
        anc.iter_mut().for_each(|a| *a = m[*a]);
    }
    anc
}

/// `(2 mu |eps(u - u_h)|^2 + |p - p_h|^2 / lambda)^(1/2)` per element of the
/// measured mesh.
pub fn energy_error_elements(
    mesh: &Mesh,
    spaces: &TaylorHood,
    fields: &FieldPair,
    material: &Material,
    reference: Reference<'_>,
) -> Vec<f64> {
    let two_mu = 2.0 * material.mu;
    let iota = material.inv_lambda;
    let density = |du: Tensor2, dp: f64| two_mu * du.sym().norm_sq() + iota * dp * dp;
    let mut e2 = vec![0.0; mesh.n_elements()];
    match reference {
        Reference::Analytic(sol) => {
            let rule = TriangleRule::exact_for(2 * spaces.degree() + 10);
            for (t, e) in e2.iter_mut().enumerate() {
                let geo = mesh.geometry(t);
                for (p, &w) in rule.points.iter().zip(&rule.weights) {
                    let x = geo.map(*p);
                    let du = Tensor2((sol.displacement_gradient)(x)) - Tensor2(spaces.displacement_gradient(mesh, fields, t, *p));
                    let dp = if iota > 0.0 { (sol.pressure)(x) - spaces.pressure_at(fields, t, *p) } else { 0.0 };
                    *e += w * geo.det * density(du, dp);
                }
            }
        }
        Reference::Fine(fine) => {
            let rule = volume_rule(spaces.degree().max(fine.spaces.degree()));
            for tf in 0..fine.mesh.n_elements() {
                let t = fine.ancestors[tf];
                let (gf, gc) = (fine.mesh.geometry(tf), mesh.geometry(t));
                for (p, &w) in rule.points.iter().zip(&rule.weights) {
                    let pc = gc.pull_back(gf.map(*p));
                    let du = Tensor2(fine.spaces.displacement_gradient(fine.mesh, fine.fields, tf, *p))
                        - Tensor2(spaces.displacement_gradient(mesh, fields, t, pc));
                    let dp = if iota > 0.0 {
                        fine.spaces.pressure_at(fine.fields, tf, *p) - spaces.pressure_at(fields, t, pc)
                    } else {
                        0.0
                    };
                    e2[t] += w * gf.det * density(du, dp);
                }
            }
        }
    }
    e2.into_iter().map(sqrt).collect()
}

pub fn energy_error(
    mesh: &Mesh,
    spaces: &TaylorHood,
    fields: &FieldPair,
    material: &Material,
    reference: Reference<'_>,
) -> f64 {
    sqrt(energy_error_elements(mesh, spaces, fields, material, reference).iter().map(|e| e * e).sum())
}

/// Everything the estimator produces for one discrete solution.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorReport {
    pub eta: EtaComponents,
    pub eta_r: Vec<f64>,
    pub sums: EtaSums,
    pub sum_r2: f64,
    pub material: Material,
    pub dim: usize,
    pub constants: BoundConstants,
    /// Squared bound with `constants`.
    pub bound: f64,
    /// Squared bound with [`BoundConstants::conservative`].
    pub conservative_bound: f64,
    /// Squared `lambda`-independent bound with `constants`.
    pub lambda_free_bound: f64,
    pub error: Option<f64>,
}

impl EstimatorReport {
    pub fn new(
        eta: EtaComponents,
        eta_r: Vec<f64>,
        material: Material,
        constants: BoundConstants,
    ) -> Result<Self, EstimatorError> {
        let sums = eta.sums();
        let bound = guaranteed_bound(&sums, &material, &constants)?;
        let conservative_bound = guaranteed_bound(&sums, &material, &BoundConstants::conservative())?;
        let lambda_free = lambda_free_bound(&sums, &material, &constants)?;
        Ok(EstimatorReport {
            sum_r2: eta_r.iter().map(|x| x * x).sum(),
            eta,
            eta_r,
            sums,
            material,
            dim: DIM,
            constants,
            bound,
            conservative_bound,
            lambda_free_bound: lambda_free,
            error: None,
        })
    }

    pub fn n_elements(&self) -> usize {
        self.eta.a.len()
    }

    /// `(eta_A^2 + eta_B^2 + eta_C^2)^(1/2)` on element `t`, the refinement
    /// indicator.
    pub fn eta_total(&self, t: usize) -> f64 {
        self.eta.total(t)
    }

    pub fn indicators(&self) -> Vec<f64> {
        (0..self.n_elements()).map(|t| self.eta_total(t)).collect()
    }

    pub fn total(&self) -> f64 {
        self.sums.total()
    }

    pub fn with_error(mut self, error: f64) -> Self {
        self.error = Some(error);
        self
    }

    /// `sqrt(bound) / error`.
    pub fn effectivity(&self) -> Option<f64> {
        self.error.filter(|&e| e > 0.0).map(|e| sqrt(self.bound) / e)
    }

    /// `(sum eta_A^2)^(1/2) / error`.
    pub fn eta_a_effectivity(&self) -> Option<f64> {
        self.error.filter(|&e| e > 0.0).map(|e| sqrt(self.sums.a) / e)
    }

    /// `max_T eta_T^2 / sum_{T' in omega_T} eta_R,T'^2`, with `omega_T` the
    /// elements sharing a vertex with `T`.
    pub fn efficiency_ratio(&self, mesh: &Mesh) -> f64 {
        let star = mesh.vertex_elements();
        let mut nb = Vec::new();
        let mut worst = 0.0f64;
        for t in 0..mesh.n_elements() {
            nb.clear();
            for v in mesh.triangle(t) {
                nb.extend_from_slice(&star[v]);
            }
            nb.sort_unstable();
            nb.dedup();
            let r2: f64 = nb.iter().map(|&s| sq(self.eta_r[s])).sum();
            let e2 = sq(self.eta_total(t));
            if e2 > 0.0 {
                worst = worst.max(if r2 > 0.0 { e2 / r2 } else { f64::INFINITY });
            }
        }
        worst
    }
}

/// Equilibrated and residual estimators for one solution.
#[allow(clippy::too_many_arguments)]
pub fn estimate(
    mesh: &Mesh,
    spaces: &TaylorHood,
    rt: &RtSpace,
    fields: &FieldPair,
    material: &Material,
    load: &LoadData,
    equilibrated: &Equilibrated,
    constants: &BoundConstants,
    exec: &impl Executor,
) -> Result<EstimatorReport, EstimatorError> {
    constants.validate()?;
    let eta = eta_components(mesh, spaces, rt, &equilibrated.correction, fields, material, exec);
    let eta_r = residual_estimator(mesh, spaces, rt, &equilibrated.discrete, fields, material, load, exec);
    EstimatorReport::new(eta, eta_r, *material, constants.clone())
}
