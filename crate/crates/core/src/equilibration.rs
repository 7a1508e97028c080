//! Weakly symmetric stress equilibration on vertex patches.
//!
//! For every patch the correction `sigma_delta_z` is the broken
//! Raviart-Thomas field of minimal `L2` norm whose divergence, normal jumps
//! (and Neumann traces) and skew part are prescribed by the residual of the
//! discrete stress weighted with the patch hat function. Summing the patch
//! corrections and adding the discrete stress gives a field with
//! `div sigma_r = -P_k f`, continuous normal components, `sigma_r n = P_k g` on
//! the Neumann boundary and vanishing skew moments against continuous `P_k`.

use alloc::vec;
use alloc::vec::Vec;

use crate::elasticity::{direct_stress, load_rule, traction_rule, FieldPair, LoadData, Material, TaylorHood};
use crate::linalg::{cholesky, min_norm_solve, solve_lower, solve_lower_transpose, DenseMatrix};
use crate::mesh::{modified_patches, ElementGeometry, Mesh, MeshError, SideKind, VertexPatch};
use crate::poly::{legendre, monomial, monomials};
use crate::quadrature::{LineRule, TriangleRule};
use crate::spaces::{project_traction, project_volume, BrokenStress, LagrangeSpace, RtSpace};
use crate::{sq, sqrt};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EquilibrationError {
    #[error("patch of vertex {vertex} has an incompatible right-hand side (residual {residual:e})")]
    IncompatiblePatch { vertex: usize, residual: f64 },
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

/// Runs independent indexed tasks, possibly in parallel. Results are
/// returned in index order so any reduction stays deterministic.
pub trait Executor: Sync {
    fn map<R: Send, F: Fn(usize) -> R + Sync>(&self, n: usize, f: F) -> Vec<R>;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map<R: Send, F: Fn(usize) -> R + Sync>(&self, n: usize, f: F) -> Vec<R> {
        (0..n).map(f).collect()
    }
}

/// Integrals of basis functions on one element, shared by all patches.
#[derive(Clone, Debug)]
struct ElementBlocks {
    mass: DenseMatrix,
    /// `int div phi_l q_a`, rows `a`.
    div: DenseMatrix,
    /// `int phi_l[c] gamma_b`, rows `b`, one matrix per component `c`.
    skew: [DenseMatrix; 2],
    /// `-int (f + div sigma_h)_c lambda_i q_a`, indexed `[i][c][a]`.
    rhs: [[Vec<f64>; 2]; 3],
}

/// `-|S|^-1 <[sigma_h n]* lambda_end, L_j>`, indexed `[end][c][j]`, where
/// `end` is the position of the vertex in the sorted side vertex pair.
type SideRhs = [[Vec<f64>; 2]; 2];

/// Precomputed local data for all patch problems on one mesh.
pub struct EquilibrationContext<'a> {
    mesh: &'a Mesh,
    rt: &'a RtSpace,
    multipliers: LagrangeSpace,
    scalar: Vec<(u32, u32)>,
    elements: Vec<ElementBlocks>,
    sides: Vec<Option<SideRhs>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConstraintRow {
    Divergence { element: usize, component: usize, index: usize },
    Jump { side: usize, component: usize, index: usize },
    Symmetry { node: usize },
}

/// Local mixed problem of one patch: minimise `|tau|^2` subject to
/// `constraints * tau = rhs`.
#[derive(Clone, Debug)]
pub struct PatchProblem {
    pub patch: VertexPatch,
    /// Global broken-stress index of every local unknown.
    pub dofs: Vec<usize>,
    pub constraints: DenseMatrix,
    pub rhs: Vec<f64>,
    pub rows: Vec<ConstraintRow>,
    /// Mass matrix blocks along the diagonal: `(first unknown, block)`.
    pub mass_blocks: Vec<(usize, DenseMatrix)>,
}

impl PatchProblem {
    pub fn n_unknowns(&self) -> usize {
        self.dofs.len()
    }

    /// The full (block diagonal) mass matrix.
    pub fn mass(&self) -> DenseMatrix {
        let n = self.n_unknowns();
        let mut m = DenseMatrix::zeros(n, n);
        for (start, b) in &self.mass_blocks {
            for i in 0..b.rows() {
                for j in 0..b.cols() {
                    m[(start + i, start + j)] = b[(i, j)];
                }
            }
        }
        m
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchSolution {
    pub dofs: Vec<usize>,
    pub values: Vec<f64>,
    pub rank: usize,
    pub residual: f64,
}

impl<'a> EquilibrationContext<'a> {
    pub fn new(mesh: &'a Mesh, rt: &'a RtSpace, sigma_h: &BrokenStress, load: &LoadData, exec: &impl Executor) -> Self {
        let k = rt.degree();
        let multipliers = LagrangeSpace::new(mesh, k);
        let scalar = monomials(k);
        let elements = exec.map(mesh.n_elements(), |t| element_blocks(mesh, rt, &multipliers, &scalar, sigma_h, load, t));
        let sides = exec.map(mesh.n_sides(), |s| side_rhs(mesh, rt, sigma_h, load, s));
        EquilibrationContext { mesh, rt, multipliers, scalar, elements, sides }
    }

    pub fn mesh(&self) -> &Mesh {
        self.mesh
    }

    /// Continuous `P_k` space testing the weak symmetry.
    pub fn multiplier_space(&self) -> &LagrangeSpace {
        &self.multipliers
    }

    pub fn patch_problem(&self, patch: &VertexPatch) -> PatchProblem {
        let mesh = self.mesh;
        let rt = self.rt;
        let n_rt = rt.dim();
        let k = rt.degree();
        let ns = k + 1;
        let els = &patch.elements;
        let in_patch = |t: usize| els.binary_search(&t).is_ok();

        // Unknowns: all dofs of patch elements except traces on interior
        // sides that leave the patch.
        let mut col = vec![usize::MAX; els.len() * 2 * n_rt];
        let mut dofs = Vec::new();
        let mut mass_blocks = Vec::new();
        for (ti, &t) in els.iter().enumerate() {
            let mut kept = vec![true; n_rt];
            for (e, &s) in mesh.element_sides(t).iter().enumerate() {
                let side = mesh.side(s);
                if let Some(p) = side.plus {
                    let other = if p == t { side.minus } else { p };
                    if !in_patch(other) {
                        for j in 0..ns {
                            kept[rt.side_dof(e, j)] = false;
                        }
                    }
                }
            }
            let keep: Vec<usize> = (0..n_rt).filter(|&l| kept[l]).collect();
            let mut block = DenseMatrix::zeros(keep.len(), keep.len());
            for (i, &a) in keep.iter().enumerate() {
                for (j, &b) in keep.iter().enumerate() {
                    block[(i, j)] = self.elements[t].mass[(a, b)];
                }
            }
            for row in 0..2 {
                mass_blocks.push((dofs.len(), block.clone()));
                for &l in &keep {
                    col[(ti * 2 + row) * n_rt + l] = dofs.len();
                    dofs.push((2 * t + row) * n_rt + l);
                }
            }
        }
        let n = dofs.len();
        let mut rows_data: Vec<Vec<f64>> = Vec::new();
        let mut rhs = Vec::new();
        let mut rows = Vec::new();

        for (ti, &t) in els.iter().enumerate() {
            let blk = &self.elements[t];
            let w = patch.local_weights(mesh, t);
            for c in 0..2 {
                for a in 0..self.scalar.len() {
                    let mut r = vec![0.0; n];
                    for l in 0..n_rt {
                        let j = col[(ti * 2 + c) * n_rt + l];
                        if j != usize::MAX {
                            r[j] = blk.div[(a, l)];
                        }
                    }
                    rows_data.push(r);
                    rhs.push((0..3).map(|i| w[i] * blk.rhs[i][c][a]).sum());
                    rows.push(ConstraintRow::Divergence { element: t, component: c, index: a });
                }
            }
        }

        let mut sides: Vec<usize> = els.iter().flat_map(|&t| mesh.element_sides(t)).collect();
        sides.sort_unstable();
        sides.dedup();
        for &s in &sides {
            let side = mesh.side(s);
            let both = side.plus.is_some_and(|p| in_patch(p) && in_patch(side.minus));
            if !(both || side.kind == SideKind::Neumann) {
                continue;
            }
            let srhs = self.sides[s].as_ref().expect("side data exists for jump sides");
            let ends = side.vertices.map(|v| if patch.weights.contains(&v) { 1.0 } else { 0.0 });
            for c in 0..2 {
                for j in 0..ns {
                    let mut r = vec![0.0; n];
                    for (t, sign) in core::iter::once((side.minus, 1.0)).chain(side.plus.map(|p| (p, -1.0))) {
                        let ti = els.binary_search(&t).unwrap();
                        let e = local_edge_of(mesh, t, s);
                        let jj = col[(ti * 2 + c) * n_rt + rt.side_dof(e, j)];
                        debug_assert_ne!(jj, usize::MAX);
                        r[jj] = sign;
                    }
                    rows_data.push(r);
                    rhs.push(ends[0] * srhs[0][c][j] + ends[1] * srhs[1][c][j]);
                    rows.push(ConstraintRow::Jump { side: s, component: c, index: j });
                }
            }
        }

        let mut nodes: Vec<usize> = els.iter().flat_map(|&t| self.multipliers.cell_nodes(t).to_vec()).collect();
        nodes.sort_unstable();
        nodes.dedup();
        for &node in &nodes {
            let mut r = vec![0.0; n];
            for (ti, &t) in els.iter().enumerate() {
                let Some(b) = self.multipliers.cell_nodes(t).iter().position(|&g| g == node) else { continue };
                let blk = &self.elements[t];
                for l in 0..n_rt {
                    let j0 = col[(ti * 2) * n_rt + l];
                    if j0 != usize::MAX {
                        r[j0] += blk.skew[1][(b, l)];
                    }
                    let j1 = col[(ti * 2 + 1) * n_rt + l];
                    if j1 != usize::MAX {
                        r[j1] -= blk.skew[0][(b, l)];
                    }
                }
            }
            rows_data.push(r);
            rhs.push(0.0);
            rows.push(ConstraintRow::Symmetry { node });
        }

        let m = rows_data.len();
        let mut constraints = DenseMatrix::zeros(m, n);
        for (i, r) in rows_data.into_iter().enumerate() {
            constraints.row_mut(i).copy_from_slice(&r);
        }
        PatchProblem { patch: patch.clone(), dofs, constraints, rhs, rows, mass_blocks }
    }

    /// Constraint-row multipliers that annihilate every constraint column
    /// on a patch without Dirichlet sides, one per rigid body mode
    /// (two translations, one rotation).
    pub fn rigid_multipliers(&self, problem: &PatchProblem) -> [Vec<f64>; 3] {
        let mesh = self.mesh;
        let modes: [fn(crate::mesh::Point) -> [f64; 2]; 3] =
            [|_| [1.0, 0.0], |_| [0.0, 1.0], |x| [-x[1], x[0]]];
        let theta = [0.0, 0.0, -1.0];
        let mut out: [Vec<f64>; 3] = Default::default();
        for (m, rho) in modes.iter().enumerate() {
            out[m] = problem
                .rows
                .iter()
                .map(|row| match *row {
                    ConstraintRow::Divergence { element, component, index } => {
                        let frame = self.rt.frame(element);
                        // Express rho_c in the scaled monomial basis.
                        let c0 = rho(frame.center)[component];
                        let dx = (rho([frame.center[0] + 1.0, frame.center[1]])[component] - c0) * frame.scale;
                        let dy = (rho([frame.center[0], frame.center[1] + 1.0])[component] - c0) * frame.scale;
                        match self.scalar[index] {
                            (0, 0) => c0,
                            (1, 0) => dx,
                            (0, 1) => dy,
                            _ => 0.0,
                        }
                    }
                    ConstraintRow::Jump { side, component, index } => {
                        let sd = mesh.side(side);
                        let ra = rho(mesh.vertex(sd.vertices[0]))[component];
                        let rb = rho(mesh.vertex(sd.vertices[1]))[component];
                        match index {
                            0 => -sd.length * 0.5 * (ra + rb),
                            1 => -sd.length * 0.5 * (rb - ra),
                            _ => 0.0,
                        }
                    }
                    ConstraintRow::Symmetry { .. } => theta[m],
                })
                .collect();
        }
        out
    }
}

pub(crate) fn local_edge_of(mesh: &Mesh, t: usize, s: usize) -> usize {
    let es = mesh.element_sides(t);
    (0..3).find(|&e| es[e] == s).expect("side belongs to element")
}

fn element_blocks(
    mesh: &Mesh,
    rt: &RtSpace,
    multipliers: &LagrangeSpace,
    scalar: &[(u32, u32)],
    sigma_h: &BrokenStress,
    load: &LoadData,
    t: usize,
) -> ElementBlocks {
    let k = rt.degree();
    let n_rt = rt.dim();
    let geo = mesh.geometry(t);
    let frame = rt.frame(t);
    let nq = scalar.len();
    let nx = multipliers.nodes_per_cell();
    let mut mass = DenseMatrix::zeros(n_rt, n_rt);
    let mut div = DenseMatrix::zeros(nq, n_rt);
    let mut skew = [DenseMatrix::zeros(nx, n_rt), DenseMatrix::zeros(nx, n_rt)];
    let rule = TriangleRule::exact_for(2 * k + 2);
    let (mut v, mut d) = (Vec::new(), Vec::new());
    for (p, &w) in rule.points.iter().zip(&rule.weights) {
        let x = geo.map(*p);
        rt.eval(t, x, &mut v, &mut d);
        let wd = w * geo.det;
        let q: Vec<f64> = scalar.iter().map(|&e| monomial(e, frame.local(x))).collect();
        let gamma = multipliers.element().eval(*p);
        for a in 0..n_rt {
            for b in a..n_rt {
                let m = wd * (v[a][0] * v[b][0] + v[a][1] * v[b][1]);
                mass[(a, b)] += m;
                if a != b {
                    mass[(b, a)] += m;
                }
            }
            for (i, qi) in q.iter().enumerate() {
                div[(i, a)] += wd * d[a] * qi;
            }
            for (b, gb) in gamma.iter().enumerate() {
                skew[0][(b, a)] += wd * v[a][0] * gb;
                skew[1][(b, a)] += wd * v[a][1] * gb;
            }
        }
    }
    let mut rhs: [[Vec<f64>; 2]; 3] = Default::default();
    for r in rhs.iter_mut() {
        *r = [vec![0.0; nq], vec![0.0; nq]];
    }
    let lrule = load_rule(k);
    for (p, &w) in lrule.points.iter().zip(&lrule.weights) {
        let x = geo.map(*p);
        rt.eval(t, x, &mut v, &mut d);
        let (_, dsig) = sigma_h.combine(t, &v, &d);
        let f = load.f(x);
        let lam = ElementGeometry::barycentric(*p);
        let wd = w * geo.det;
        for (a, &e) in scalar.iter().enumerate() {
            let q = monomial(e, frame.local(x));
            for c in 0..2 {
                let val = -wd * (f[c] + dsig[c]) * q;
                for i in 0..3 {
                    rhs[i][c][a] += val * lam[i];
                }
            }
        }
    }
    ElementBlocks { mass, div, skew, rhs }
}

fn side_rhs(mesh: &Mesh, rt: &RtSpace, sigma_h: &BrokenStress, load: &LoadData, s: usize) -> Option<SideRhs> {
    let side = mesh.side(s);
    if side.kind == SideKind::Dirichlet {
        return None;
    }
    let k = rt.degree();
    let rule: LineRule = traction_rule(k);
    let (pa, pb) = (mesh.vertex(side.vertices[0]), mesh.vertex(side.vertices[1]));
    let n = side.normal;
    let mut out: SideRhs = [[vec![0.0; k + 1], vec![0.0; k + 1]], [vec![0.0; k + 1], vec![0.0; k + 1]]];
    for (&tq, &w) in rule.points.iter().zip(&rule.weights) {
        let x = [pa[0] + tq * (pb[0] - pa[0]), pa[1] + tq * (pb[1] - pa[1])];
        let mut jump = sigma_h.value(rt, side.minus, x).apply(n);
        match side.plus {
            Some(p) => {
                let other = sigma_h.value(rt, p, x).apply(n);
                jump[0] -= other[0];
                jump[1] -= other[1];
            }
            None => {
                let g = load.g(x, n);
                jump[0] -= g[0];
                jump[1] -= g[1];
            }
        }
        let lam = [1.0 - tq, tq];
        for j in 0..=k {
            let lj = legendre(j, tq);
            for c in 0..2 {
                for end in 0..2 {
                    out[end][c][j] -= w * jump[c] * lam[end] * lj;
                }
            }
        }
    }
    Some(out)
}

/// Minimum-norm solution of a patch problem in the mass-matrix norm.
///
/// With `M = L L^T` the problem becomes a Euclidean minimum-norm problem for
/// `y = L^T tau` with constraint matrix `C L^-T`, solved by column-pivoted
/// QR after normalising the rows. Dependent rows are dropped; the result is
/// rejected if any original constraint is violated.
pub fn solve_patch(problem: &PatchProblem) -> Result<PatchSolution, EquilibrationError> {
    let vertex = problem.patch.center;
    let n = problem.n_unknowns();
    let m = problem.rhs.len();
    let factors: Vec<(usize, DenseMatrix)> = problem
        .mass_blocks
        .iter()
        .map(|(s, b)| (*s, cholesky(b).expect("Raviart-Thomas mass matrix is positive definite")))
        .collect();
    let apply = |v: &mut [f64], transpose: bool| {
        for (s, l) in &factors {
            let seg = &mut v[*s..*s + l.rows()];
            if transpose {
                solve_lower_transpose(l, seg);
            } else {
                solve_lower(l, seg);
            }
        }
    };
    let mut b = DenseMatrix::zeros(m, n);
    let mut r = problem.rhs.clone();
    let mut norms = vec![0.0; m];
    for i in 0..m {
        let row = b.row_mut(i);
        row.copy_from_slice(problem.constraints.row(i));
        apply(row, false);
        norms[i] = sqrt(row.iter().map(|x| x * x).sum());
    }
    let max_norm = norms.iter().fold(0.0f64, |a, &x| a.max(x));
    let rhs_scale = r.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
    let mut keep = Vec::new();
    for i in 0..m {
        if norms[i] > 1e-13 * max_norm {
            b.row_mut(i).iter_mut().for_each(|x| *x /= norms[i]);
            r[i] /= norms[i];
            keep.push(i);
        } else if r[i].abs() > 1e-10 * rhs_scale.max(f64::MIN_POSITIVE) {
            return Err(EquilibrationError::IncompatiblePatch { vertex, residual: r[i].abs() });
        }
    }
    let mut bk = DenseMatrix::zeros(keep.len(), n);
    let mut rk = Vec::with_capacity(keep.len());
    for (ii, &i) in keep.iter().enumerate() {
        bk.row_mut(ii).copy_from_slice(b.row(i));
        rk.push(r[i]);
    }
    let sol = min_norm_solve(&bk, &rk, 1e-10);
    let mut values = sol.y;
    apply(&mut values, true);
    // Residual of the normalised system, relative to its right-hand side or
    // to the size of the products, whichever is larger. On nearly
    // equilibrated patches the right-hand side is itself a cancellation, so
    // its incompatible part only reaches about 1e-8 relative.
    let cv = problem.constraints.matvec(&values);
    let mut residual = 0.0f64;
    let mut scale = rk.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
    for &i in &keep {
        residual = residual.max((cv[i] - problem.rhs[i]).abs() / norms[i]);
        let mag: f64 = problem.constraints.row(i).iter().zip(&values).map(|(c, v)| (c * v).abs()).sum();
        scale = scale.max(mag / norms[i]);
    }
    if !(residual <= 1e-6 * scale) && residual > 0.0 {
        return Err(EquilibrationError::IncompatiblePatch { vertex, residual });
    }
    Ok(PatchSolution { dofs: problem.dofs.clone(), values, rank: sol.rank, residual })
}

/// Result of the equilibration of one discrete solution.
#[derive(Clone, Debug)]
pub struct Equilibrated {
    pub discrete: BrokenStress,
    pub correction: BrokenStress,
    pub reconstruction: BrokenStress,
    pub n_patches: usize,
}

/// Solves all patch problems and sums the corrections in patch order.
pub fn equilibrate(
    mesh: &Mesh,
    spaces: &TaylorHood,
    rt: &RtSpace,
    fields: &FieldPair,
    material: &Material,
    load: &LoadData,
    exec: &impl Executor,
) -> Result<Equilibrated, EquilibrationError> {
    let discrete = direct_stress(mesh, spaces, rt, fields, material);
    let patches = modified_patches(mesh)?;
    let ctx = EquilibrationContext::new(mesh, rt, &discrete, load, exec);
    let solutions = exec.map(patches.len(), |i| solve_patch(&ctx.patch_problem(&patches[i])));
    let mut correction = BrokenStress::zeros(rt);
    for sol in solutions {
        let sol = sol?;
        let c = correction.coefficients_mut();
        for (&d, &v) in sol.dofs.iter().zip(&sol.values) {
            c[d] += v;
        }
    }
    let mut reconstruction = discrete.clone();
    reconstruction.axpy(1.0, &correction);
    Ok(Equilibrated { discrete, correction, reconstruction, n_patches: patches.len() })
}

/// Residuals of the equilibration conditions for a reconstructed stress.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EquilibrationReport {
    /// `max_T |div sigma + P_k f|_{L2(T)}`.
    pub divergence: f64,
    /// Largest pointwise normal jump across interior sides.
    pub jump: f64,
    /// Largest pointwise deviation of the normal trace from `P_k g`.
    pub neumann: f64,
    /// Largest `|(sigma, J(gamma))|` over the continuous `P_k` nodal basis.
    pub symmetry: f64,
}

impl EquilibrationReport {
    pub fn max(&self) -> f64 {
        self.divergence.max(self.jump).max(self.neumann).max(self.symmetry)
    }
}

pub fn verify_equilibration(mesh: &Mesh, rt: &RtSpace, sigma: &BrokenStress, load: &LoadData) -> EquilibrationReport {
    let k = rt.degree();
    let pf = project_volume(mesh, k, 2 * k + 6, |x| load.f(x));
    let pg = project_traction(mesh, k, &traction_rule(k), |x, n| load.g(x, n));
    let mut rep = EquilibrationReport::default();
    let rule = TriangleRule::exact_for(2 * k + 2);
    let multipliers = LagrangeSpace::new(mesh, k);
    let mut skew = vec![0.0; multipliers.n_nodes()];
    let (mut v, mut d) = (Vec::new(), Vec::new());
    for t in 0..mesh.n_elements() {
        let geo = mesh.geometry(t);
        let mut err = 0.0;
        let nodes = multipliers.cell_nodes(t);
        for (p, &w) in rule.points.iter().zip(&rule.weights) {
            let x = geo.map(*p);
            rt.eval(t, x, &mut v, &mut d);
            let (s, ds) = sigma.combine(t, &v, &d);
            let f = pf.value(t, x);
            err += w * geo.det * (sq(ds[0] + f[0]) + sq(ds[1] + f[1]));
            let gamma = multipliers.element().eval(*p);
            for (b, &g) in nodes.iter().enumerate() {
                skew[g] += w * geo.det * (s.0[0][1] - s.0[1][0]) * gamma[b];
            }
        }
        rep.divergence = rep.divergence.max(sqrt(err));
    }
    rep.symmetry = skew.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
    let pts = LineRule::gauss(k + 2);
    for (s, side) in mesh.sides().iter().enumerate() {
        if side.kind == SideKind::Dirichlet {
            continue;
        }
        let (pa, pb) = (mesh.vertex(side.vertices[0]), mesh.vertex(side.vertices[1]));
        for &tq in &pts.points {
            let x = [pa[0] + tq * (pb[0] - pa[0]), pa[1] + tq * (pb[1] - pa[1])];
            let a = sigma.value(rt, side.minus, x).apply(side.normal);
            let b = match side.plus {
                Some(p) => sigma.value(rt, p, x).apply(side.normal),
                None => pg.value(mesh, s, x),
            };
            let e = sqrt(sq(a[0] - b[0]) + sq(a[1] - b[1]));
            if side.plus.is_some() {
                rep.jump = rep.jump.max(e);
            } else {
                rep.neumann = rep.neumann.max(e);
            }
        }
    }
    rep
}

/// `|sigma_h| + |f| + 1` in `L2`, the scale for equilibration tolerances.
pub fn residual_scale(mesh: &Mesh, rt: &RtSpace, sigma: &BrokenStress, load: &LoadData) -> f64 {
    let k = rt.degree();
    let rule = load_rule(k);
    let (mut s2, mut f2) = (0.0, 0.0);
    let (mut v, mut d) = (Vec::new(), Vec::new());
    for t in 0..mesh.n_elements() {
        let geo = mesh.geometry(t);
        for (p, &w) in rule.points.iter().zip(&rule.weights) {
            let x = geo.map(*p);
            rt.eval(t, x, &mut v, &mut d);
            let (s, _) = sigma.combine(t, &v, &d);
            let f = load.f(x);
            s2 += w * geo.det * s.norm_sq();
            f2 += w * geo.det * (f[0] * f[0] + f[1] * f[1]);
        }
    }
    sqrt(s2) + sqrt(f2) + 1.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elasticity::{assemble_system, solve};
    use crate::linalg::DenseLuSolver;
    use crate::mesh::structured_mesh;
    use nalgebra::DMatrix;

    struct Setup {
        mesh: Mesh,
        spaces: TaylorHood,
        rt: RtSpace,
        fields: FieldPair,
        material: Material,
        load: LoadData,
    }

    fn setup(n: usize, k: usize, inv_lambda: f64) -> Setup {
        let mesh = structured_mesh(n, n, |s, t| [s, t + 0.2 * s * t], |_, _| true, |a, b| {
            if a[0] == 0.0 && b[0] == 0.0 {
                SideKind::Dirichlet
            } else {
                SideKind::Neumann
            }
        })
        .unwrap();
        let material = Material::new(1.5, inv_lambda).unwrap();
        let load = LoadData::new(
            |x| [libm::sin(3.0 * x[1]) + x[0], libm::cos(x[0] * x[1])],
            |x, n| [0.3 * n[0] + x[1], libm::exp(x[0]) * n[1]],
        );
        let spaces = TaylorHood::new(&mesh, k).unwrap();
        let sys = assemble_system(&mesh, &spaces, &material, &load);
        let fields = solve(&mesh, &spaces, &sys, &DenseLuSolver::default()).unwrap();
        let rt = RtSpace::new(&mesh, k);
        Setup { mesh, spaces, rt, fields, material, load }
    }

    #[test]
    fn reconstruction_is_equilibrated() {
        for (k, iota) in [(1, 0.0), (1, 0.7), (2, 0.0)] {
            let s = setup(3, k, iota);
            let eq = equilibrate(&s.mesh, &s.spaces, &s.rt, &s.fields, &s.material, &s.load, &Sequential).unwrap();
            let scale = residual_scale(&s.mesh, &s.rt, &eq.discrete, &s.load);
            let rep = verify_equilibration(&s.mesh, &s.rt, &eq.reconstruction, &s.load);
            assert!(rep.max() <= 1e-9 * scale, "k={k}: {rep:?}");
            // The discrete stress alone is symmetric but not equilibrated.
            let raw = verify_equilibration(&s.mesh, &s.rt, &eq.discrete, &s.load);
            assert!(raw.symmetry <= 1e-12 * scale);
            assert!(raw.divergence > 1e-3);
        }
    }

    #[test]
    fn free_patches_are_compatible_with_rank_deficiency_three() {
        let s = setup(4, 1, 0.0);
        let sigma = direct_stress(&s.mesh, &s.spaces, &s.rt, &s.fields, &s.material);
        let ctx = EquilibrationContext::new(&s.mesh, &s.rt, &sigma, &s.load, &Sequential);
        let mut free = 0;
        for patch in modified_patches(&s.mesh).unwrap() {
            if patch.touches_dirichlet {
                continue;
            }
            free += 1;
            let pb = ctx.patch_problem(&patch);
            for y in ctx.rigid_multipliers(&pb) {
                let cty = pb.constraints.transpose().matvec(&y);
                assert!(cty.iter().all(|v| v.abs() < 1e-12), "{cty:?}");
                let dot: f64 = y.iter().zip(&pb.rhs).map(|(a, b)| a * b).sum();
                assert!(dot.abs() < 1e-12, "vertex {}: {dot}", patch.center);
            }
            let c = &pb.constraints;
            let m = DMatrix::from_row_slice(c.rows(), c.cols(), c.as_slice());
            let sv = m.singular_values();
            let rank = sv.iter().filter(|&&x| x > 1e-10 * sv.max()).count();
            assert_eq!(c.rows() - rank, 3);
        }
        assert!(free > 0);
    }

    /// Pseudo-inverse of a symmetric positive semidefinite matrix from its
    /// eigendecomposition.
    fn symmetric_pseudo_inverse(s: &DMatrix<f64>) -> DMatrix<f64> {
        let eig = s.clone().symmetric_eigen();
        let top = eig.eigenvalues.amax();
        let inv = eig.eigenvalues.map(|l| if l > 1e-10 * top { 1.0 / l } else { 0.0 });
        &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose()
    }

    #[test]
    fn patch_solution_matches_pseudo_inverse() {
        let s = setup(3, 1, 0.2);
        let sigma = direct_stress(&s.mesh, &s.spaces, &s.rt, &s.fields, &s.material);
        let ctx = EquilibrationContext::new(&s.mesh, &s.rt, &sigma, &s.load, &Sequential);
        for patch in modified_patches(&s.mesh).unwrap() {
            let pb = ctx.patch_problem(&patch);
            let sol = solve_patch(&pb).unwrap();
            let n = pb.n_unknowns();
            let mass = pb.mass();
            let m = DMatrix::from_row_slice(n, n, mass.as_slice());
            let c = DMatrix::from_row_slice(pb.constraints.rows(), n, pb.constraints.as_slice());
            let minv = m.clone().try_inverse().unwrap();
            let r = nalgebra::DVector::from_column_slice(&pb.rhs);
            let s_mat = &c * &minv * c.transpose();
            let oracle = &minv * c.transpose() * symmetric_pseudo_inverse(&s_mat) * r;
            let diff = nalgebra::DVector::from_column_slice(&sol.values) - &oracle;
            let en = |v: &nalgebra::DVector<f64>| (v.transpose() * &m * v)[(0, 0)].sqrt();
            assert!(en(&diff) <= 1e-10 * en(&oracle).max(1e-300), "vertex {} free={} {} {}", patch.center, !patch.touches_dirichlet, en(&diff), en(&oracle));
        }
    }

    #[test]
    fn inconsistent_right_hand_side_is_rejected() {
        let s = setup(3, 1, 0.0);
        let sigma = direct_stress(&s.mesh, &s.spaces, &s.rt, &s.fields, &s.material);
        let ctx = EquilibrationContext::new(&s.mesh, &s.rt, &sigma, &s.load, &Sequential);
        let patch = modified_patches(&s.mesh).unwrap().into_iter().find(|p| !p.touches_dirichlet).unwrap();
        let mut pb = ctx.patch_problem(&patch);
        let y = &ctx.rigid_multipliers(&pb)[0];
        for (r, yi) in pb.rhs.iter_mut().zip(y) {
            *r += yi;
        }
        assert!(matches!(solve_patch(&pb), Err(EquilibrationError::IncompatiblePatch { .. })));
    }

    /// Nearly parallel rows with a right-hand side far below the size of
    /// the solution: the residual is pure cancellation and must pass.
    #[test]
    fn cancellation_in_the_residual_is_tolerated() {
        let delta = 1e-9;
        let pb = PatchProblem {
            patch: VertexPatch { center: 0, weights: vec![0], elements: vec![0], touches_dirichlet: true },
            dofs: vec![0, 1],
            constraints: DenseMatrix::from_row_major(2, 2, vec![1.0, 1.0, 1.0, 1.0 + delta]),
            rhs: vec![0.0, delta * 3.0],
            rows: vec![ConstraintRow::Symmetry { node: 0 }, ConstraintRow::Symmetry { node: 1 }],
            mass_blocks: vec![(0, DenseMatrix::identity(2))],
        };
        let sol = solve_patch(&pb).unwrap();
        assert_eq!(sol.rank, 2);
        assert!((sol.values[0] + 3.0).abs() < 1e-6 && (sol.values[1] - 3.0).abs() < 1e-6, "{:?}", sol.values);
    }

    #[test]
    fn corrupted_reconstruction_is_detected() {
        let s = setup(3, 1, 0.0);
        let eq = equilibrate(&s.mesh, &s.spaces, &s.rt, &s.fields, &s.material, &s.load, &Sequential).unwrap();
        let scale = residual_scale(&s.mesh, &s.rt, &eq.discrete, &s.load);
        let mut bad = eq.reconstruction.clone();
        let idx = bad.index(4, 0, s.rt.dim() - 1);
        bad.coefficients_mut()[idx] += 1e-3;
        let rep = verify_equilibration(&s.mesh, &s.rt, &bad, &s.load);
        assert!(rep.max() > 1e-9 * scale);
    }
}
