//! Taylor-Hood discretisation of the displacement-pressure formulation
//!
//! ```text
//! (2 mu eps(u), eps(v)) + (p, div v) = (f, v) + <g, v>_N
//! (div u, q) - inv_lambda (p, q)     = 0
//! ```
//!
//! with `u = 0` on the Dirichlet boundary. `inv_lambda = 0` is the
//! incompressible limit.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::{CsrMatrix, LinearSolver, SolverError};
use crate::mesh::{Mesh, Point, SideKind};
use crate::quadrature::{LineRule, TriangleRule};
use crate::spaces::{check_degree, BrokenStress, LagrangeSpace, RtSpace, SpaceError};
use crate::tensor::Tensor2;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ElasticityError {
    #[error("shear modulus must be positive and finite, got {0}")]
    InvalidShearModulus(f64),
    #[error("inverse Lame parameter must be non-negative and finite, got {0}")]
    InvalidInverseLambda(f64),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error("the saddle point system is singular (relative residual {residual:e})")]
    SingularSystem { residual: f64 },
    #[error("linear solver failed: {0}")]
    Solver(SolverError),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Material {
    pub mu: f64,
    /// `1 / lambda`; zero means incompressible.
    pub inv_lambda: f64,
}

impl Material {
    pub fn new(mu: f64, inv_lambda: f64) -> Result<Self, ElasticityError> {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(ElasticityError::InvalidShearModulus(mu));
        }
        if !(inv_lambda >= 0.0 && inv_lambda.is_finite()) {
            return Err(ElasticityError::InvalidInverseLambda(inv_lambda));
        }
        Ok(Material { mu, inv_lambda })
    }
}

pub type BodyForce = Arc<dyn Fn(Point) -> [f64; 2] + Send + Sync>;
/// Traction as a function of the point and the outward unit normal.
pub type Traction = Arc<dyn Fn(Point, [f64; 2]) -> [f64; 2] + Send + Sync>;

#[derive(Clone)]
pub struct LoadData {
    pub body_force: BodyForce,
    pub traction: Traction,
}

impl LoadData {
    pub fn new(
        f: impl Fn(Point) -> [f64; 2] + Send + Sync + 'static,
        g: impl Fn(Point, [f64; 2]) -> [f64; 2] + Send + Sync + 'static,
    ) -> Self {
        LoadData { body_force: Arc::new(f), traction: Arc::new(g) }
    }

    pub fn zero() -> Self {
        Self::new(|_| [0.0; 2], |_, _| [0.0; 2])
    }

    pub fn f(&self, x: Point) -> [f64; 2] {
        (self.body_force)(x)
    }

    pub fn g(&self, x: Point, n: [f64; 2]) -> [f64; 2] {
        (self.traction)(x, n)
    }
}

impl core::fmt::Debug for LoadData {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str("LoadData { .. }")
    }
}

/// Volume rule used for every integral involving the body force.
pub fn load_rule(k: usize) -> TriangleRule {
    TriangleRule::exact_for(2 * k + 6)
}

/// Side rule used for every integral involving the traction.
pub fn traction_rule(k: usize) -> LineRule {
    LineRule::gauss(k + 4)
}

/// Continuous `P_{k+1}` displacement and `P_k` pressure spaces.
#[derive(Clone, Debug)]
pub struct TaylorHood {
    k: usize,
    pub displacement: LagrangeSpace,
    pub pressure: LagrangeSpace,
}

impl TaylorHood {
    pub fn new(mesh: &Mesh, k: usize) -> Result<Self, SpaceError> {
        check_degree(k)?;
        Ok(TaylorHood {
            k,
            displacement: LagrangeSpace::new(mesh, k + 1),
            pressure: LagrangeSpace::new(mesh, k),
        })
    }

    pub fn degree(&self) -> usize {
        self.k
    }

    pub fn displacement_at(&self, fields: &FieldPair, t: usize, xh: [f64; 2]) -> [f64; 2] {
        let phi = self.displacement.element().eval(xh);
        let mut u = [0.0; 2];
        for (a, &g) in self.displacement.cell_nodes(t).iter().enumerate() {
            u[0] += phi[a] * fields.displacement[2 * g];
            u[1] += phi[a] * fields.displacement[2 * g + 1];
        }
        u
    }

    /// `[i][j] = d u_i / d x_j` at reference point `xh` of element `t`.
    pub fn displacement_gradient(&self, mesh: &Mesh, fields: &FieldPair, t: usize, xh: [f64; 2]) -> [[f64; 2]; 2] {
        let geo = mesh.geometry(t);
        let grads = self.displacement.element().grad(xh);
        let mut du = [[0.0; 2]; 2];
        for (a, &g) in self.displacement.cell_nodes(t).iter().enumerate() {
            let gr = geo.grad(grads[a]);
            for i in 0..2 {
                let c = fields.displacement[2 * g + i];
                du[i][0] += c * gr[0];
                du[i][1] += c * gr[1];
            }
        }
        du
    }

    pub fn pressure_at(&self, fields: &FieldPair, t: usize, xh: [f64; 2]) -> f64 {
        let psi = self.pressure.element().eval(xh);
        self.pressure.cell_nodes(t).iter().enumerate().map(|(a, &g)| psi[a] * fields.pressure[g]).sum()
    }

    /// Discrete stress `2 mu eps(u_h) + p_h I`.
    pub fn stress_at(&self, mesh: &Mesh, fields: &FieldPair, material: &Material, t: usize, xh: [f64; 2]) -> Tensor2 {
        let du = Tensor2(self.displacement_gradient(mesh, fields, t, xh));
        du.sym() * (2.0 * material.mu) + Tensor2::IDENTITY * self.pressure_at(fields, t, xh)
    }

    /// Row-wise divergence of the discrete stress inside element `t`.
    pub fn stress_divergence_at(
        &self,
        mesh: &Mesh,
        fields: &FieldPair,
        material: &Material,
        t: usize,
        xh: [f64; 2],
    ) -> [f64; 2] {
        let geo = mesh.geometry(t);
        let hs = self.displacement.element().hessian(xh);
        // h[i] = Hessian of u_i as [xx, xy, yy].
        let mut h = [[0.0; 3]; 2];
        for (a, &g) in self.displacement.cell_nodes(t).iter().enumerate() {
            let ha = geo.hessian(hs[a]);
            for i in 0..2 {
                let c = fields.displacement[2 * g + i];
                for d in 0..3 {
                    h[i][d] += c * ha[d];
                }
            }
        }
        let gp = self.pressure.element().grad(xh);
        let mut dp = [0.0; 2];
        for (a, &g) in self.pressure.cell_nodes(t).iter().enumerate() {
            let gr = geo.grad(gp[a]);
            dp[0] += fields.pressure[g] * gr[0];
            dp[1] += fields.pressure[g] * gr[1];
        }
        let lap = [h[0][0] + h[0][2], h[1][0] + h[1][2]];
        let grad_div = [h[0][0] + h[1][1], h[0][1] + h[1][2]];
        let mu = material.mu;
        [mu * (lap[0] + grad_div[0]) + dp[0], mu * (lap[1] + grad_div[1]) + dp[1]]
    }
}

/// Coefficients of a discrete displacement and pressure. Displacement dofs
/// are interleaved per node, `2 * node + component`.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldPair {
    pub k: usize,
    pub displacement: Vec<f64>,
    pub pressure: Vec<f64>,
}

/// Maps free displacement dofs and pressure dofs to system rows.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemLayout {
    /// Row of each displacement dof, `None` for constrained dofs.
    pub displacement_row: Vec<Option<usize>>,
    pub n_free_displacement: usize,
    pub n_pressure: usize,
    /// Pressure dof fixed to zero when the pressure is only determined up
    /// to a constant.
    pub pinned_pressure: Option<usize>,
}

impl SystemLayout {
    pub fn size(&self) -> usize {
        self.n_free_displacement + self.n_pressure
    }

    pub fn pressure_row(&self, q: usize) -> usize {
        self.n_free_displacement + q
    }
}

#[derive(Clone, Debug)]
pub struct SaddlePointSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    pub layout: SystemLayout,
    pub k: usize,
}

pub fn assemble_system(mesh: &Mesh, spaces: &TaylorHood, material: &Material, load: &LoadData) -> SaddlePointSystem {
    let k = spaces.degree();
    let du = &spaces.displacement;
    let dp = &spaces.pressure;
    let mut displacement_row = vec![None; 2 * du.n_nodes()];
    let mut n_free = 0;
    for (d, row) in displacement_row.iter_mut().enumerate() {
        if !du.on_dirichlet(d / 2) {
            *row = Some(n_free);
            n_free += 1;
        }
    }
    let n_p = dp.n_nodes();
    let pinned = if !mesh.has_neumann() && material.inv_lambda == 0.0 { Some(0) } else { None };
    let layout = SystemLayout {
        displacement_row,
        n_free_displacement: n_free,
        n_pressure: n_p,
        pinned_pressure: pinned,
    };
    let n = layout.size();
    let mut trips: Vec<(usize, usize, f64)> = Vec::new();
    let mut rhs = vec![0.0; n];

    let rule = TriangleRule::exact_for(2 * k + 2);
    let lrule = load_rule(k);
    let nu = du.nodes_per_cell();
    let np = dp.nodes_per_cell();
    let mu = material.mu;
    let prow = |q: usize| if pinned == Some(q) { None } else { Some(n_free + q) };
    for t in 0..mesh.n_elements() {
        let geo = mesh.geometry(t);
        let unodes = du.cell_nodes(t);
        let pnodes = dp.cell_nodes(t);
        let mut a_loc = vec![0.0; (2 * nu) * (2 * nu)];
        let mut b_loc = vec![0.0; np * 2 * nu];
        let mut c_loc = vec![0.0; np * np];
        for (xh, &w) in rule.points.iter().zip(&rule.weights) {
            let wd = w * geo.det;
            let g: Vec<[f64; 2]> = du.element().grad(*xh).into_iter().map(|r| geo.grad(r)).collect();
            let psi = dp.element().eval(*xh);
            for a in 0..nu {
                for b in 0..nu {
                    let gg = g[a][0] * g[b][0] + g[a][1] * g[b][1];
                    for c in 0..2 {
                        for e in 0..2 {
                            let v = if c == e { gg } else { 0.0 } + g[a][e] * g[b][c];
                            a_loc[(2 * a + c) * 2 * nu + 2 * b + e] += mu * wd * v;
                        }
                    }
                }
            }
            for q in 0..np {
                for b in 0..nu {
                    for e in 0..2 {
                        b_loc[q * 2 * nu + 2 * b + e] += wd * psi[q] * g[b][e];
                    }
                }
                for r in 0..np {
                    c_loc[q * np + r] -= material.inv_lambda * wd * psi[q] * psi[r];
                }
            }
        }
        for (i, &gi) in unodes.iter().enumerate() {
            for c in 0..2 {
                let Some(ri) = layout.displacement_row[2 * gi + c] else { continue };
                for (j, &gj) in unodes.iter().enumerate() {
                    for e in 0..2 {
                        if let Some(rj) = layout.displacement_row[2 * gj + e] {
                            trips.push((ri, rj, a_loc[(2 * i + c) * 2 * nu + 2 * j + e]));
                        }
                    }
                }
                for (q, &gq) in pnodes.iter().enumerate() {
                    if let Some(rq) = prow(gq) {
                        let v = b_loc[q * 2 * nu + 2 * i + c];
                        trips.push((ri, rq, v));
                        trips.push((rq, ri, v));
                    }
                }
            }
        }
        if material.inv_lambda != 0.0 {
            for (q, &gq) in pnodes.iter().enumerate() {
                let Some(rq) = prow(gq) else { continue };
                for (r, &gr) in pnodes.iter().enumerate() {
                    if let Some(rr) = prow(gr) {
                        trips.push((rq, rr, c_loc[q * np + r]));
                    }
                }
            }
        }
        for (xh, &w) in lrule.points.iter().zip(&lrule.weights) {
            let f = load.f(geo.map(*xh));
            let phi = du.element().eval(*xh);
            for (a, &ga) in unodes.iter().enumerate() {
                for c in 0..2 {
                    if let Some(r) = layout.displacement_row[2 * ga + c] {
                        rhs[r] += w * geo.det * f[c] * phi[a];
                    }
                }
            }
        }
    }
    if let Some(q) = pinned {
        trips.push((n_free + q, n_free + q, 1.0));
    }

    let srule = traction_rule(k);
    for side in mesh.sides().iter().filter(|s| s.kind == SideKind::Neumann) {
        let t = side.minus;
        let geo = mesh.geometry(t);
        let (pa, pb) = (mesh.vertex(side.vertices[0]), mesh.vertex(side.vertices[1]));
        let unodes = du.cell_nodes(t);
        for (&s, &w) in srule.points.iter().zip(&srule.weights) {
            let x = [pa[0] + s * (pb[0] - pa[0]), pa[1] + s * (pb[1] - pa[1])];
            let g = load.g(x, side.normal);
            let phi = du.element().eval(geo.pull_back(x));
            for (a, &ga) in unodes.iter().enumerate() {
                for c in 0..2 {
                    if let Some(r) = layout.displacement_row[2 * ga + c] {
                        rhs[r] += w * side.length * g[c] * phi[a];
                    }
                }
            }
        }
    }

    SaddlePointSystem { matrix: CsrMatrix::from_triplets(n, n, trips), rhs, layout, k }
}

/// Solves `A x = b` with up to three steps of iterative refinement and
/// accepts the result only if the normwise backward error is below `1e-10`.
pub fn solve_checked(matrix: &CsrMatrix, rhs: &[f64], solver: &dyn LinearSolver) -> Result<Vec<f64>, ElasticityError> {
    let to_err = |e: SolverError| match e {
        SolverError::Singular => ElasticityError::SingularSystem { residual: f64::INFINITY },
        other => ElasticityError::Solver(other),
    };
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let a_norm = (0..matrix.nrows()).map(|i| matrix.row(i).map(|(_, v)| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let mut x = solver.solve(matrix, rhs).map_err(to_err)?;
    let mut backward = f64::INFINITY;
    for step in 0..4 {
        let ax = matrix.matvec(&x);
        let r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let denom = a_norm * inf(&x) + inf(rhs);
        backward = if denom > 0.0 { inf(&r) / denom } else { 0.0 };
        if !backward.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(ElasticityError::SingularSystem { residual: f64::INFINITY });
        }
        if backward <= 1e-14 || step == 3 {
            break;
        }
        let dx = solver.solve(matrix, &r).map_err(to_err)?;
        let trial: Vec<f64> = x.iter().zip(&dx).map(|(a, b)| a + b).collect();
        let rt: Vec<f64> = rhs.iter().zip(matrix.matvec(&trial)).map(|(b, a)| b - a).collect();
        if inf(&rt) >= inf(&r) {
            break;
        }
        x = trial;
    }
    if backward > 1e-10 {
        return Err(ElasticityError::SingularSystem { residual: backward });
    }
    Ok(x)
}

pub fn solve(
    mesh: &Mesh,
    spaces: &TaylorHood,
    system: &SaddlePointSystem,
    solver: &dyn LinearSolver,
) -> Result<FieldPair, ElasticityError> {
    let x = solve_checked(&system.matrix, &system.rhs, solver)?;
    let layout = &system.layout;
    let displacement = layout.displacement_row.iter().map(|r| r.map_or(0.0, |r| x[r])).collect();
    let mut pressure: Vec<f64> = x[layout.n_free_displacement..].to_vec();
    let mut fields = FieldPair { k: system.k, displacement, pressure: pressure.clone() };
    if layout.pinned_pressure.is_some() {
        let mean = integrate_pressure(mesh, spaces, &fields) / mesh.total_area();
        pressure.iter_mut().for_each(|p| *p -= mean);
        fields.pressure = pressure;
    }
    Ok(fields)
}

fn integrate_pressure(mesh: &Mesh, spaces: &TaylorHood, fields: &FieldPair) -> f64 {
    let rule = TriangleRule::exact_for(spaces.degree());
    (0..mesh.n_elements())
        .map(|t| {
            let det = mesh.geometry(t).det;
            rule.points.iter().zip(&rule.weights).map(|(p, w)| w * det * spaces.pressure_at(fields, t, *p)).sum::<f64>()
        })
        .sum()
}

/// The discrete stress `2 mu eps(u_h) + p_h I` as a broken Raviart-Thomas
/// field. Its rows are polynomials of degree `k`, so the representation is
/// exact.
pub fn direct_stress(
    mesh: &Mesh,
    spaces: &TaylorHood,
    rt: &RtSpace,
    fields: &FieldPair,
    material: &Material,
) -> BrokenStress {
    BrokenStress::interpolate(rt, mesh, |t, x| {
        let xh = mesh.geometry(t).pull_back(x);
        spaces.stress_at(mesh, fields, material, t, xh)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::DenseLuSolver;
    use crate::mesh::structured_mesh;

    fn unit_square(n: usize, dirichlet_left_only: bool) -> Mesh {
        structured_mesh(n, n, |s, t| [s, t], |_, _| true, |a, b| {
            if !dirichlet_left_only || (a[0] == 0.0 && b[0] == 0.0) {
                SideKind::Dirichlet
            } else {
                SideKind::Neumann
            }
        })
        .unwrap()
    }

    #[test]
    fn material_validation() {
        assert!(Material::new(0.0, 0.0).is_err());
        assert!(Material::new(1.0, -1.0).is_err());
        assert!(Material::new(1.0, f64::NAN).is_err());
    }

    #[test]
    fn incompressible_pressure_block_is_zero() {
        let m = unit_square(2, true);
        let sp = TaylorHood::new(&m, 1).unwrap();
        let sys = assemble_system(&m, &sp, &Material::new(1.0, 0.0).unwrap(), &LoadData::zero());
        let nf = sys.layout.n_free_displacement;
        for (i, j, v) in sys.matrix.triplets() {
            if i >= nf && j >= nf {
                assert_eq!(v, 0.0);
            }
        }
        assert_eq!(sys.layout.pinned_pressure, None);
    }

    #[test]
    fn reproduces_polynomial_solution() {
        // u = x (x + y, 2 y - x) vanishes at x = 0 and lies in P2, so the
        // discrete solution must reproduce it.
        let m = unit_square(2, true);
        let mat = Material::new(1.3, 0.5).unwrap();
        let mu = mat.mu;
        let iota = mat.inv_lambda;
        // u1 = x^2 + x y, u2 = 2 x y - x^2.
        let grad = |x: Point| [[2.0 * x[0] + x[1], x[0]], [2.0 * x[1] - 2.0 * x[0], 2.0 * x[0]]];
        let divu = |x: Point| 2.0 * x[0] + x[1] + 2.0 * x[0];
        let stress = move |x: Point| {
            let g = Tensor2(grad(x));
            g.sym() * (2.0 * mu) + Tensor2::IDENTITY * (divu(x) / iota)
        };
        // div sigma: mu (lap u + grad div u) + grad p, p = div u / iota.
        let f = move |_x: Point| {
            let lap = [2.0, -2.0];
            let gd = [4.0, 1.0];
            [-(mu * (lap[0] + gd[0]) + gd[0] / iota), -(mu * (lap[1] + gd[1]) + gd[1] / iota)]
        };
        let load = LoadData::new(f, move |x, n| stress(x).apply(n));
        let sp = TaylorHood::new(&m, 1).unwrap();
        let sys = assemble_system(&m, &sp, &mat, &load);
        let fields = solve(&m, &sp, &sys, &DenseLuSolver::default()).unwrap();
        for (node, x) in sp.displacement.coords().iter().enumerate() {
            let e = [x[0] * x[0] + x[0] * x[1], 2.0 * x[0] * x[1] - x[0] * x[0]];
            assert!((fields.displacement[2 * node] - e[0]).abs() < 1e-12);
            assert!((fields.displacement[2 * node + 1] - e[1]).abs() < 1e-12);
        }
        for (node, x) in sp.pressure.coords().iter().enumerate() {
            assert!((fields.pressure[node] - divu(*x) / iota).abs() < 1e-11);
        }
        let d = sp.stress_divergence_at(&m, &fields, &mat, 3, [0.2, 0.3]);
        let fx = f([0.0, 0.0]);
        assert!((d[0] + fx[0]).abs() < 1e-10 && (d[1] + fx[1]).abs() < 1e-10);
    }

    #[test]
    fn pure_dirichlet_incompressible_pins_pressure() {
        let m = unit_square(2, false);
        let sp = TaylorHood::new(&m, 1).unwrap();
        let mat = Material::new(1.0, 0.0).unwrap();
        let load = LoadData::new(|x| [x[1], -x[0]], |_, _| [0.0; 2]);
        let sys = assemble_system(&m, &sp, &mat, &load);
        assert_eq!(sys.layout.pinned_pressure, Some(0));
        let fields = solve(&m, &sp, &sys, &DenseLuSolver::default()).unwrap();
        assert!(integrate_pressure(&m, &sp, &fields).abs() < 1e-12);
    }

    #[test]
    fn singular_matrix_is_reported() {
        let a = CsrMatrix::from_triplets(2, 2, alloc::vec![(0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 1.0)]);
        let err = solve_checked(&a, &[1.0, 2.0], &DenseLuSolver::default()).unwrap_err();
        assert!(matches!(err, ElasticityError::SingularSystem { .. }));
    }

    #[test]
    fn direct_stress_is_symmetric() {
        let m = unit_square(2, true);
        let sp = TaylorHood::new(&m, 1).unwrap();
        let mat = Material::new(1.0, 0.0).unwrap();
        let nd = 2 * sp.displacement.n_nodes();
        let fields = FieldPair {
            k: 1,
            displacement: (0..nd).map(|i| libm::sin(i as f64)).collect(),
            pressure: (0..sp.pressure.n_nodes()).map(|i| libm::cos(i as f64)).collect(),
        };
        let s = sp.stress_at(&m, &fields, &mat, 2, [0.3, 0.1]);
        assert_eq!(s.0[0][1], s.0[1][0]);
        let rt = RtSpace::new(&m, 1);
        let b = direct_stress(&m, &sp, &rt, &fields, &mat);
        let x = m.geometry(2).map([0.3, 0.1]);
        let v = b.value(&rt, 2, x);
        assert!((v - s).norm_sq().sqrt() < 1e-12 * (1.0 + s.norm_sq().sqrt()));
        let dv = b.divergence(&rt, 2, x);
        let ds = sp.stress_divergence_at(&m, &fields, &mat, 2, [0.3, 0.1]);
        assert!((dv[0] - ds[0]).abs() < 1e-9 && (dv[1] - ds[1]).abs() < 1e-9);
    }
}
