//! Finite element spaces: Taylor-Hood displacement/pressure, broken
//! Raviart-Thomas stresses, piecewise polynomial test spaces and
//! L2 projections of the data.

mod lagrange;
mod rt;

pub use lagrange::{LagrangeElement, LagrangeSpace};
pub use rt::{piola, rt_dim, scalar_poly_dim, BrokenStress, ElementFrame, RtElement, RtSpace};

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::{cholesky, solve_lower, solve_lower_transpose, DenseMatrix};
use crate::mesh::{Mesh, Point, SideKind};
use crate::poly::{legendre, monomial, monomials};
use crate::quadrature::{LineRule, TriangleRule};

/// Highest polynomial degree `k` the spaces are set up for.
pub const MAX_DEGREE: usize = 2;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SpaceError {
    #[error("polynomial degree {0} is not supported (expected 1..={MAX_DEGREE})")]
    UnsupportedDegree(usize),
}

pub fn check_degree(k: usize) -> Result<(), SpaceError> {
    if (1..=MAX_DEGREE).contains(&k) {
        Ok(())
    } else {
        Err(SpaceError::UnsupportedDegree(k))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpaceKind {
    /// Continuous vector P_{k+1}.
    Displacement,
    /// Continuous scalar P_k.
    Pressure,
    /// Broken tensor Raviart-Thomas of degree k.
    BrokenStress,
    /// Discontinuous vector P_k, tests the divergence constraint.
    RigidTest,
    /// Continuous scalar P_k, tests the weak symmetry.
    SkewMultiplier,
}

/// Element to global dof numbering.
#[derive(Clone, Debug)]
pub struct DofMap {
    pub kind: SpaceKind,
    pub degree: usize,
    n_dofs: usize,
    per_cell: usize,
    cell_dofs: Vec<usize>,
    dirichlet: Vec<bool>,
}

impl DofMap {
    pub fn new(mesh: &Mesh, kind: SpaceKind, k: usize) -> Result<Self, SpaceError> {
        check_degree(k)?;
        let nt = mesh.n_elements();
        Ok(match kind {
            SpaceKind::Displacement => {
                let sp = LagrangeSpace::new(mesh, k + 1);
                let per = 2 * sp.nodes_per_cell();
                let mut cell_dofs = Vec::with_capacity(nt * per);
                for t in 0..nt {
                    for &g in sp.cell_nodes(t) {
                        cell_dofs.extend([2 * g, 2 * g + 1]);
                    }
                }
                let dirichlet = (0..2 * sp.n_nodes()).map(|d| sp.on_dirichlet(d / 2)).collect();
                DofMap { kind, degree: k, n_dofs: 2 * sp.n_nodes(), per_cell: per, cell_dofs, dirichlet }
            }
            SpaceKind::Pressure | SpaceKind::SkewMultiplier => {
                let sp = LagrangeSpace::new(mesh, k);
                let per = sp.nodes_per_cell();
                let cell_dofs = (0..nt).flat_map(|t| sp.cell_nodes(t).to_vec()).collect();
                DofMap {
                    kind,
                    degree: k,
                    n_dofs: sp.n_nodes(),
                    per_cell: per,
                    cell_dofs,
                    dirichlet: vec![false; sp.n_nodes()],
                }
            }
            SpaceKind::BrokenStress | SpaceKind::RigidTest => {
                let per = 2 * if kind == SpaceKind::BrokenStress { rt_dim(k) } else { scalar_poly_dim(k) };
                DofMap {
                    kind,
                    degree: k,
                    n_dofs: nt * per,
                    per_cell: per,
                    cell_dofs: (0..nt * per).collect(),
                    dirichlet: vec![false; nt * per],
                }
            }
        })
    }

    pub fn n_dofs(&self) -> usize {
        self.n_dofs
    }

    pub fn dofs_per_cell(&self) -> usize {
        self.per_cell
    }

    pub fn cell_dofs(&self, t: usize) -> &[usize] {
        &self.cell_dofs[t * self.per_cell..(t + 1) * self.per_cell]
    }

    pub fn is_dirichlet(&self, dof: usize) -> bool {
        self.dirichlet[dof]
    }

    pub fn n_dirichlet(&self) -> usize {
        self.dirichlet.iter().filter(|&&d| d).count()
    }
}

/// Elementwise polynomial of degree `k` in scaled monomials, with `ncomp`
/// components.
#[derive(Clone, Debug, PartialEq)]
pub struct PiecewisePolynomial {
    pub degree: usize,
    pub ncomp: usize,
    exps: Vec<(u32, u32)>,
    frames: Vec<ElementFrame>,
    coeffs: Vec<f64>,
}

impl PiecewisePolynomial {
    pub fn value(&self, t: usize, x: Point) -> Vec<f64> {
        let xi = self.frames[t].local(x);
        let n = self.exps.len();
        (0..self.ncomp)
            .map(|c| {
                let base = (t * self.ncomp + c) * n;
                self.exps.iter().enumerate().map(|(a, &e)| self.coeffs[base + a] * monomial(e, xi)).sum()
            })
            .collect()
    }

    pub fn coefficients(&self, t: usize, c: usize) -> &[f64] {
        let n = self.exps.len();
        let base = (t * self.ncomp + c) * n;
        &self.coeffs[base..base + n]
    }
}

/// Elementwise L2 projection of a vector field onto degree `k` polynomials,
/// integrated with a rule exact for degree `rule_degree`.
pub fn project_volume<const N: usize>(
    mesh: &Mesh,
    k: usize,
    rule_degree: usize,
    f: impl Fn(Point) -> [f64; N],
) -> PiecewisePolynomial {
    let exps = monomials(k);
    let n = exps.len();
    let rule = TriangleRule::exact_for(rule_degree.max(2 * k));
    let mut coeffs = vec![0.0; mesh.n_elements() * N * n];
    let mut frames = Vec::with_capacity(mesh.n_elements());
    for t in 0..mesh.n_elements() {
        let geo = mesh.geometry(t);
        let frame = ElementFrame::of(mesh, t);
        frames.push(frame);
        let mut g = DenseMatrix::zeros(n, n);
        let mut b = vec![vec![0.0; n]; N];
        for (p, &w) in rule.points.iter().zip(&rule.weights) {
            let x = geo.map(*p);
            let q: Vec<f64> = exps.iter().map(|&e| monomial(e, frame.local(x))).collect();
            let fx = f(x);
            let wd = w * geo.det;
            for a in 0..n {
                for c in 0..n {
                    g[(a, c)] += wd * q[a] * q[c];
                }
                for comp in 0..N {
                    b[comp][a] += wd * fx[comp] * q[a];
                }
            }
        }
        let l = cholesky(&g).expect("mass matrix of scaled monomials is positive definite");
        for (comp, mut rhs) in b.into_iter().enumerate() {
            solve_lower(&l, &mut rhs);
            solve_lower_transpose(&l, &mut rhs);
            let base = (t * N + comp) * n;
            coeffs[base..base + n].copy_from_slice(&rhs);
        }
    }
    PiecewisePolynomial { degree: k, ncomp: N, exps, frames, coeffs }
}

/// Per-side L2 projection of the traction onto degree `k` polynomials on
/// Neumann sides, in the Legendre basis running from the lower to the
/// higher vertex index. Other sides hold zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct SideProjection {
    pub degree: usize,
    coeffs: Vec<[f64; 2]>,
}

impl SideProjection {
    pub fn value(&self, mesh: &Mesh, s: usize, x: Point) -> [f64; 2] {
        let t = side_parameter(mesh, s, x);
        let base = s * (self.degree + 1);
        let mut out = [0.0; 2];
        for j in 0..=self.degree {
            let l = legendre(j, t);
            out[0] += self.coeffs[base + j][0] * l;
            out[1] += self.coeffs[base + j][1] * l;
        }
        out
    }
}

/// Position of `x` along side `s`, 0 at the lower and 1 at the higher vertex.
pub fn side_parameter(mesh: &Mesh, s: usize, x: Point) -> f64 {
    let side = mesh.side(s);
    let (a, b) = (mesh.vertex(side.vertices[0]), mesh.vertex(side.vertices[1]));
    let d = [b[0] - a[0], b[1] - a[1]];
    ((x[0] - a[0]) * d[0] + (x[1] - a[1]) * d[1]) / (side.length * side.length)
}

pub fn project_traction(
    mesh: &Mesh,
    k: usize,
    rule: &LineRule,
    g: impl Fn(Point, [f64; 2]) -> [f64; 2],
) -> SideProjection {
    let mut coeffs = vec![[0.0; 2]; mesh.n_sides() * (k + 1)];
    for (s, side) in mesh.sides().iter().enumerate() {
        if side.kind != SideKind::Neumann {
            continue;
        }
        let (a, b) = (mesh.vertex(side.vertices[0]), mesh.vertex(side.vertices[1]));
        for (&tq, &w) in rule.points.iter().zip(&rule.weights) {
            let x = [a[0] + tq * (b[0] - a[0]), a[1] + tq * (b[1] - a[1])];
            let gx = g(x, side.normal);
            for j in 0..=k {
                let f = (2 * j + 1) as f64 * w * legendre(j, tq);
                coeffs[s * (k + 1) + j][0] += f * gx[0];
                coeffs[s * (k + 1) + j][1] += f * gx[1];
            }
        }
    }
    SideProjection { degree: k, coeffs }
}
