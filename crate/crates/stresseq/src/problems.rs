//! Built-in problems: Cook's membrane, a smooth manufactured solution and an
//! L-shaped domain with a re-entrant corner.

use std::f64::consts::PI;
use std::sync::Arc;

use stresseq_core::adaptivity::AdaptivityError;
use stresseq_core::elasticity::{ElasticityError, LoadData, Material};
use stresseq_core::estimator::AnalyticSolution;
use stresseq_core::mesh::{structured_mesh, Mesh, MeshError, Point, SideKind};
use stresseq_core::tensor::Tensor2;

use crate::config::ProblemName;
use crate::meshio::MeshIoError;

#[derive(Debug, thiserror::Error)]
pub enum ProblemError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    MeshIo(#[from] MeshIoError),
    #[error(transparent)]
    Material(#[from] ElasticityError),
    #[error(transparent)]
    Run(#[from] AdaptivityError),
    #[error("the exact displacement does not vanish on Dirichlet side {a}-{b}")]
    InconsistentBoundary { a: usize, b: usize },
}

pub type DisplacementField = Arc<dyn Fn(Point) -> [f64; 2] + Send + Sync>;

pub struct ProblemSpec {
    pub name: ProblemName,
    pub mesh: Mesh,
    pub load: LoadData,
    pub exact: Option<AnalyticSolution>,
    pub exact_displacement: Option<DisplacementField>,
}

impl std::fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("name", &self.name)
            .field("elements", &self.mesh.n_elements())
            .field("exact", &self.exact.is_some())
            .finish()
    }
}

impl ProblemSpec {
    pub fn builtin(name: ProblemName, material: &Material) -> Result<Self, ProblemError> {
        match name {
            ProblemName::Cook => cook(),
            ProblemName::ManufacturedSmooth => manufactured_smooth(material, 4),
            ProblemName::SquareLShape => square_lshape(),
        }
    }

    /// Replaces the initial mesh, checking that a known exact solution is
    /// still admissible.
    pub fn with_mesh(mut self, mesh: Mesh) -> Result<Self, ProblemError> {
        self.mesh = mesh;
        self.check_boundary()?;
        Ok(self)
    }

    pub fn check_boundary(&self) -> Result<(), ProblemError> {
        let Some(u) = &self.exact_displacement else {
            return Ok(());
        };
        for [a, b] in self.mesh.boundary_sides(SideKind::Dirichlet) {
            let (pa, pb) = (self.mesh.vertex(a), self.mesh.vertex(b));
            for t in [0.0, 0.25, 0.5, 0.75, 1.0] {
                let x = [pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1])];
                let v = u(x);
                if v[0].abs() + v[1].abs() > 1e-12 {
                    return Err(ProblemError::InconsistentBoundary { a, b });
                }
            }
        }
        Ok(())
    }
}

/// Corners of Cook's membrane, counter-clockwise from the origin.
pub const COOK_CORNERS: [Point; 4] = [[0.0, 0.0], [0.48, 0.44], [0.48, 0.6], [0.0, 0.44]];

/// Bilinear image of an `n x n` grid on Cook's membrane; the left side is
/// clamped and everything else is a traction boundary.
pub fn cook_mesh(n: usize) -> Result<Mesh, MeshError> {
    let [a, b, c, d] = COOK_CORNERS;
    let map = move |s: f64, t: f64| {
        let w = [(1.0 - s) * (1.0 - t), s * (1.0 - t), s * t, (1.0 - s) * t];
        [
            w[0] * a[0] + w[1] * b[0] + w[2] * c[0] + w[3] * d[0],
            w[0] * a[1] + w[1] * b[1] + w[2] * c[1] + w[3] * d[1],
        ]
    };
    structured_mesh(n, n, map, |_, _| true, |p, q| {
        if p[0] == 0.0 && q[0] == 0.0 {
            SideKind::Dirichlet
        } else {
            SideKind::Neumann
        }
    })
}

/// No body force, vertical traction `0.01` on the right side, free top and
/// bottom.
pub fn cook() -> Result<ProblemSpec, ProblemError> {
    let load = LoadData::new(|_| [0.0; 2], |_, n| if n[0] > 0.99 { [0.0, 0.01] } else { [0.0; 2] });
    Ok(ProblemSpec { name: ProblemName::Cook, mesh: cook_mesh(4)?, load, exact: None, exact_displacement: None })
}

/// Unit square `n x n` grid clamped at `x = 0`.
pub fn unit_square_mesh(n: usize) -> Result<Mesh, MeshError> {
    structured_mesh(n, n, |s, t| [s, t], |_, _| true, |p, q| {
        if p[0] == 0.0 && q[0] == 0.0 {
            SideKind::Dirichlet
        } else {
            SideKind::Neumann
        }
    })
}

/// Exact solution on the unit square with `div u = p / lambda`:
///
/// ```text
/// u = (pi x^2 cos(pi y) + 3 x^2 y / lambda, -2 x sin(pi y) + x^3 / lambda),  p = 6 x y
/// ```
///
/// For `lambda = infinity` the displacement is divergence free. It vanishes
/// on `x = 0`; the other sides carry the matching traction.
pub fn manufactured_smooth(material: &Material, n: usize) -> Result<ProblemSpec, ProblemError> {
    let Material { mu, inv_lambda: iota } = *material;
    let grad = move |x: Point| {
        let (c, s) = ((PI * x[1]).cos(), (PI * x[1]).sin());
        [
            [2.0 * PI * x[0] * c + 6.0 * iota * x[0] * x[1], -PI * PI * x[0] * x[0] * s + 3.0 * iota * x[0] * x[0]],
            [-2.0 * s + 3.0 * iota * x[0] * x[0], -2.0 * PI * x[0] * c],
        ]
    };
    let pressure = |x: Point| 6.0 * x[0] * x[1];
    let stress = move |x: Point| Tensor2(grad(x)).sym() * (2.0 * mu) + Tensor2::IDENTITY * pressure(x);
    let f = move |x: Point| {
        let (c, s) = ((PI * x[1]).cos(), (PI * x[1]).sin());
        let k = 2.0 * mu * iota + 1.0;
        [
            -mu * (2.0 - PI * PI * x[0] * x[0]) * PI * c - k * 6.0 * x[1],
            -mu * 2.0 * PI * PI * x[0] * s - k * 6.0 * x[0],
        ]
    };
    let load = LoadData::new(f, move |x, n| stress(x).apply(n));
    let u = move |x: Point| {
        [
            PI * x[0] * x[0] * (PI * x[1]).cos() + 3.0 * iota * x[0] * x[0] * x[1],
            -2.0 * x[0] * (PI * x[1]).sin() + iota * x[0].powi(3),
        ]
    };
    Ok(ProblemSpec {
        name: ProblemName::ManufacturedSmooth,
        mesh: unit_square_mesh(n)?,
        load,
        exact: Some(AnalyticSolution { displacement_gradient: Arc::new(grad), pressure: Arc::new(pressure) }),
        exact_displacement: Some(Arc::new(u)),
    })
}

/// `(-1, 1)^2` without the lower right quadrant on an `n x n` grid
/// (`n` even), clamped on `x = -1` and `y = -1`.
pub fn lshape_mesh(n: usize) -> Result<Mesh, MeshError> {
    let h = 2.0 / n as f64;
    structured_mesh(
        n,
        n,
        move |s, t| [-1.0 + 2.0 * s, -1.0 + 2.0 * t],
        move |i, j| !(i >= n / 2 && j < n / 2),
        move |p, q| {
            let on = |v: f64| (v + 1.0).abs() < 1e-3 * h;
            if (on(p[0]) && on(q[0])) || (on(p[1]) && on(q[1])) {
                SideKind::Dirichlet
            } else {
                SideKind::Neumann
            }
        },
    )
}

/// Uniform downward body force, traction free apart from the clamped sides.
/// The stress is singular at the re-entrant corner at the origin.
pub fn square_lshape() -> Result<ProblemSpec, ProblemError> {
    let load = LoadData::new(|_| [0.0, -1.0], |_, _| [0.0; 2]);
    Ok(ProblemSpec { name: ProblemName::SquareLShape, mesh: lshape_mesh(4)?, load, exact: None, exact_displacement: None })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cook_has_32_elements_and_clamped_left_side() {
        let p = cook().unwrap();
        assert_eq!(p.mesh.n_elements(), 32);
        let area: f64 = p.mesh.total_area();
        // Shoelace formula for the quadrilateral.
        let c = COOK_CORNERS;
        let shoelace = 0.5 * (0..4).map(|i| c[i][0] * c[(i + 1) % 4][1] - c[(i + 1) % 4][0] * c[i][1]).sum::<f64>();
        assert!((area - shoelace).abs() < 1e-14);
        for [a, b] in p.mesh.boundary_sides(SideKind::Dirichlet) {
            assert_eq!(p.mesh.vertex(a)[0], 0.0);
            assert_eq!(p.mesh.vertex(b)[0], 0.0);
        }
        assert_eq!(p.load.g([0.48, 0.5], [1.0, 0.0]), [0.0, 0.01]);
        let bottom: [f64; 2] = [0.44, -0.48];
        let nb = (bottom[0] * bottom[0] + bottom[1] * bottom[1]).sqrt();
        assert_eq!(p.load.g([0.24, 0.22], [bottom[0] / nb, bottom[1] / nb]), [0.0, 0.0]);
    }

    /// Central differences of the exact fields reproduce gradient, the
    /// divergence constraint and the balance of forces.
    #[test]
    #[allow(clippy::needless_range_loop)]
    fn manufactured_solution_is_consistent() {
        for iota in [0.0, 1e-3, 1.0] {
            let m = Material::new(1.3, iota).unwrap();
            let p = manufactured_smooth(&m, 2).unwrap();
            let u = p.exact_displacement.clone().unwrap();
            let ex = p.exact.as_ref().unwrap();
            let h = 1e-4;
            for x in [[0.3, 0.7], [0.9, 0.1], [0.55, 0.45]] {
                let g = (ex.displacement_gradient)(x);
                for i in 0..2 {
                    for j in 0..2 {
                        let mut a = x;
                        let mut b = x;
                        a[j] += h;
                        b[j] -= h;
                        let fd = (u(a)[i] - u(b)[i]) / (2.0 * h);
                        assert!((fd - g[i][j]).abs() < 1e-6, "{fd} {}", g[i][j]);
                    }
                }
                assert!((g[0][0] + g[1][1] - iota * (ex.pressure)(x)).abs() < 1e-12);
                let stress = |y: Point| {
                    Tensor2((ex.displacement_gradient)(y)).sym() * (2.0 * m.mu) + Tensor2::IDENTITY * (ex.pressure)(y)
                };
                let mut div = [0.0; 2];
                for j in 0..2 {
                    let mut a = x;
                    let mut b = x;
                    a[j] += h;
                    b[j] -= h;
                    for i in 0..2 {
                        div[i] += (stress(a).0[i][j] - stress(b).0[i][j]) / (2.0 * h);
                    }
                }
                let f = p.load.f(x);
                assert!((div[0] + f[0]).abs() < 1e-6 && (div[1] + f[1]).abs() < 1e-6, "{div:?} {f:?}");
            }
            p.check_boundary().unwrap();
        }
    }

    #[test]
    fn lshape_is_valid_and_mesh_override_is_checked() {
        let p = square_lshape().unwrap();
        assert_eq!(p.mesh.n_elements(), 24);
        assert!((p.mesh.total_area() - 3.0).abs() < 1e-14);
        let m = manufactured_smooth(&Material::new(1.0, 0.0).unwrap(), 2).unwrap();
        let wrong = structured_mesh(2, 2, |s, t| [s, t], |_, _| true, |_, _| SideKind::Dirichlet).unwrap();
        assert!(matches!(m.with_mesh(wrong), Err(ProblemError::InconsistentBoundary { .. })));
    }
}
