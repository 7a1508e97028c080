//! Broken Raviart-Thomas spaces for row-wise tensor fields.
//!
//! Each element carries its own nodal basis, built in scaled coordinates
//! `xi = (x - centroid) / diameter` from the spanning set
//! `P_k^2 + xi * P~_k` (homogeneous degree `k`). The degrees of freedom are
//!
//! * side moments `|S|^-1 int_S tau . n_S L_j ds`, `j = 0..=k`, with the global
//!   side normal and a Legendre polynomial running from the lower to the
//!   higher vertex index, three sides in local edge order;
//! * interior moments `|T|^-1 int_T tau . (q e_c)`, `q` a scaled monomial of
//!   degree `k - 1`, `c = 0, 1`.
//!
//! Because side dofs use the global normal, the normal jump moments across
//! a side are differences of two dofs.

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::{DenseMatrix, Lu};
use crate::mesh::{ElementGeometry, Mesh, Point};
use crate::poly::{legendre, monomial, monomial_count, monomial_grad, monomials, powi};
use crate::quadrature::{LineRule, TriangleRule};
use crate::tensor::Tensor2;

/// Dimension of the local Raviart-Thomas space of degree `k`.
pub fn rt_dim(k: usize) -> usize {
    (k + 1) * (k + 3)
}

/// Scaled coordinates on one element.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElementFrame {
    pub center: Point,
    pub scale: f64,
}

impl ElementFrame {
    pub fn of(mesh: &Mesh, t: usize) -> Self {
        ElementFrame { center: mesh.centroid(t), scale: mesh.diameter(t) }
    }

    pub fn local(&self, x: Point) -> [f64; 2] {
        [(x[0] - self.center[0]) / self.scale, (x[1] - self.center[1]) / self.scale]
    }
}

#[derive(Clone, Debug)]
struct SpanSet {
    k: usize,
    full: Vec<(u32, u32)>,
}

impl SpanSet {
    fn new(k: usize) -> Self {
        SpanSet { k, full: monomials(k) }
    }

    /// Values and divergences (with respect to `xi`) of the spanning set.
    fn eval(&self, xi: [f64; 2], vals: &mut Vec<[f64; 2]>, divs: &mut Vec<f64>) {
        vals.clear();
        divs.clear();
        for &e in &self.full {
            vals.push([monomial(e, xi), 0.0]);
            divs.push(monomial_grad(e, xi)[0]);
        }
        for &e in &self.full {
            vals.push([0.0, monomial(e, xi)]);
            divs.push(monomial_grad(e, xi)[1]);
        }
        let k = self.k as u32;
        for a in 0..=k {
            let h = powi(xi[0], a) * powi(xi[1], k - a);
            vals.push([xi[0] * h, xi[1] * h]);
            divs.push((k + 2) as f64 * h);
        }
    }
}

/// Nodal Raviart-Thomas basis on one physical element.
#[derive(Clone, Debug)]
pub struct RtElement {
    frame: ElementFrame,
    /// Row `l` holds the spanning-set coefficients of basis function `l`.
    coeffs: DenseMatrix,
}

/// Broken Raviart-Thomas space of degree `k` on a mesh.
#[derive(Clone, Debug)]
pub struct RtSpace {
    k: usize,
    span: SpanSet,
    interior: Vec<(u32, u32)>,
    side_rule: LineRule,
    cell_rule: TriangleRule,
    elements: Vec<RtElement>,
}

impl RtSpace {
    pub fn new(mesh: &Mesh, k: usize) -> Self {
        assert!(k >= 1);
        let mut sp = RtSpace {
            k,
            span: SpanSet::new(k),
            interior: if k >= 1 { monomials(k - 1) } else { Vec::new() },
            side_rule: LineRule::gauss(k + 2),
            cell_rule: TriangleRule::exact_for(2 * k + 1),
            elements: Vec::with_capacity(mesh.n_elements()),
        };
        let n = rt_dim(k);
        let (mut vals, mut divs) = (Vec::new(), Vec::new());
        for t in 0..mesh.n_elements() {
            let frame = ElementFrame::of(mesh, t);
            // D[i][j] = functional i applied to spanning function j.
            let mut d = DenseMatrix::zeros(n, n);
            for j in 0..n {
                let col = sp.functionals(mesh, t, |x| {
                    sp.span.eval(frame.local(x), &mut vals, &mut divs);
                    vals[j]
                });
                for i in 0..n {
                    d[(i, j)] = col[i];
                }
            }
            let coeffs = Lu::factor(&d).expect("Raviart-Thomas dofs are unisolvent").inverse().transpose();
            sp.elements.push(RtElement { frame, coeffs });
        }
        sp
    }

    pub fn degree(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        rt_dim(self.k)
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn frame(&self, t: usize) -> ElementFrame {
        self.elements[t].frame
    }

    /// Local index of the side dof `j` on local edge `e`.
    pub fn side_dof(&self, e: usize, j: usize) -> usize {
        e * (self.k + 1) + j
    }

    /// Number of side dofs per side.
    pub fn side_dofs(&self) -> usize {
        self.k + 1
    }

    /// Applies the degrees of freedom of element `t` to a vector field.
    pub fn functionals(&self, mesh: &Mesh, t: usize, mut field: impl FnMut(Point) -> [f64; 2]) -> Vec<f64> {
        let mut out = Vec::with_capacity(rt_dim(self.k));
        for &s in &mesh.element_sides(t) {
            let side = mesh.side(s);
            let (pa, pb) = (mesh.vertex(side.vertices[0]), mesh.vertex(side.vertices[1]));
            let n = side.normal;
            let start = out.len();
            out.extend(core::iter::repeat_n(0.0, self.k + 1));
            for (&tq, &w) in self.side_rule.points.iter().zip(&self.side_rule.weights) {
                let x = [pa[0] + tq * (pb[0] - pa[0]), pa[1] + tq * (pb[1] - pa[1])];
                let v = field(x);
                let vn = v[0] * n[0] + v[1] * n[1];
                for j in 0..=self.k {
                    out[start + j] += w * vn * legendre(j, tq);
                }
            }
        }
        let geo = mesh.geometry(t);
        let frame = ElementFrame::of(mesh, t);
        let start = out.len();
        out.extend(core::iter::repeat_n(0.0, 2 * self.interior.len()));
        for (p, &w) in self.cell_rule.points.iter().zip(&self.cell_rule.weights) {
            let x = geo.map(*p);
            let v = field(x);
            let xi = frame.local(x);
            for (a, &e) in self.interior.iter().enumerate() {
                let q = 2.0 * w * monomial(e, xi);
                out[start + 2 * a] += q * v[0];
                out[start + 2 * a + 1] += q * v[1];
            }
        }
        out
    }

    /// Basis values and physical divergences at `x` on element `t`.
    pub fn eval(&self, t: usize, x: Point, vals: &mut Vec<[f64; 2]>, divs: &mut Vec<f64>) {
        let el = &self.elements[t];
        let (mut sv, mut sd) = (Vec::new(), Vec::new());
        self.span.eval(el.frame.local(x), &mut sv, &mut sd);
        let n = rt_dim(self.k);
        vals.clear();
        divs.clear();
        for l in 0..n {
            let c = el.coeffs.row(l);
            let mut v = [0.0; 2];
            let mut d = 0.0;
            for j in 0..n {
                v[0] += c[j] * sv[j][0];
                v[1] += c[j] * sv[j][1];
                d += c[j] * sd[j];
            }
            vals.push(v);
            divs.push(d / el.frame.scale);
        }
    }

    /// Tabulates basis values and divergences at the images of reference
    /// points; entry `q * dim + l`.
    pub fn tabulate(&self, mesh: &Mesh, t: usize, ref_points: &[[f64; 2]]) -> (Vec<[f64; 2]>, Vec<f64>) {
        let geo = mesh.geometry(t);
        let n = rt_dim(self.k);
        let mut all_v = Vec::with_capacity(n * ref_points.len());
        let mut all_d = Vec::with_capacity(n * ref_points.len());
        let (mut v, mut d) = (Vec::new(), Vec::new());
        for p in ref_points {
            self.eval(t, geo.map(*p), &mut v, &mut d);
            all_v.extend_from_slice(&v);
            all_d.extend_from_slice(&d);
        }
        (all_v, all_d)
    }
}

/// Contravariant Piola transform of a reference vector.
pub fn piola(geo: &ElementGeometry, v_hat: [f64; 2]) -> [f64; 2] {
    let j = geo.jacobian;
    [
        (j[0][0] * v_hat[0] + j[0][1] * v_hat[1]) / geo.det,
        (j[1][0] * v_hat[0] + j[1][1] * v_hat[1]) / geo.det,
    ]
}

/// A tensor field whose rows lie in the broken Raviart-Thomas space.
/// Coefficients are stored per element, per row, per local basis function.
#[derive(Clone, Debug, PartialEq)]
pub struct BrokenStress {
    k: usize,
    coeffs: Vec<f64>,
}

impl BrokenStress {
    pub fn zeros(space: &RtSpace) -> Self {
        BrokenStress { k: space.k, coeffs: vec![0.0; 2 * space.dim() * space.n_elements()] }
    }

    pub fn from_coefficients(k: usize, coeffs: Vec<f64>) -> Self {
        assert_eq!(coeffs.len() % (2 * rt_dim(k)), 0);
        BrokenStress { k, coeffs }
    }

    pub fn degree(&self) -> usize {
        self.k
    }

    pub fn n_dofs(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coefficients_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    /// Global index of local dof `i` of row `row` on element `t`.
    pub fn index(&self, t: usize, row: usize, i: usize) -> usize {
        (2 * t + row) * rt_dim(self.k) + i
    }

    pub fn row_coefficients(&self, t: usize, row: usize) -> &[f64] {
        let n = rt_dim(self.k);
        let s = (2 * t + row) * n;
        &self.coeffs[s..s + n]
    }

    /// Interpolates a tensor field row by row on every element.
    pub fn interpolate(space: &RtSpace, mesh: &Mesh, field: impl Fn(usize, Point) -> Tensor2) -> Self {
        let mut out = Self::zeros(space);
        let n = space.dim();
        for t in 0..mesh.n_elements() {
            for row in 0..2 {
                let d = space.functionals(mesh, t, |x| field(t, x).row(row));
                let s = (2 * t + row) * n;
                out.coeffs[s..s + n].copy_from_slice(&d);
            }
        }
        out
    }

    pub fn value(&self, space: &RtSpace, t: usize, x: Point) -> Tensor2 {
        let (mut v, mut d) = (Vec::new(), Vec::new());
        space.eval(t, x, &mut v, &mut d);
        self.combine(t, &v, &d).0
    }

    pub fn divergence(&self, space: &RtSpace, t: usize, x: Point) -> [f64; 2] {
        let (mut v, mut d) = (Vec::new(), Vec::new());
        space.eval(t, x, &mut v, &mut d);
        self.combine(t, &v, &d).1
    }

    /// Value and row-wise divergence from tabulated basis data.
    pub fn combine(&self, t: usize, vals: &[[f64; 2]], divs: &[f64]) -> (Tensor2, [f64; 2]) {
        let mut s = Tensor2::ZERO;
        let mut dv = [0.0; 2];
        for row in 0..2 {
            let c = self.row_coefficients(t, row);
            for (l, cl) in c.iter().enumerate() {
                s.0[row][0] += cl * vals[l][0];
                s.0[row][1] += cl * vals[l][1];
                dv[row] += cl * divs[l];
            }
        }
        (s, dv)
    }

    pub fn axpy(&mut self, a: f64, other: &BrokenStress) {
        assert_eq!(self.coeffs.len(), other.coeffs.len());
        for (x, y) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *x += a * y;
        }
    }
}

/// Number of scaled monomials of degree `k` used for divergence tests.
pub fn scalar_poly_dim(k: usize) -> usize {
    monomial_count(k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Mesh;

    fn mesh() -> Mesh {
        Mesh::new(
            vec![[0.0, 0.0], [1.0, 0.1], [1.2, 1.0], [0.1, 0.9], [0.6, 0.45]],
            vec![[0, 1, 4], [1, 2, 4], [2, 3, 4], [3, 0, 4]],
            &[[3, 0]],
            &[],
        )
        .unwrap()
    }

    #[test]
    fn basis_is_dual_to_dofs() {
        let m = mesh();
        for k in 1..=2 {
            let sp = RtSpace::new(&m, k);
            let n = sp.dim();
            for t in 0..m.n_elements() {
                for l in 0..n {
                    let dofs = sp.functionals(&m, t, |x| {
                        let (mut v, mut d) = (Vec::new(), Vec::new());
                        sp.eval(t, x, &mut v, &mut d);
                        v[l]
                    });
                    for (i, di) in dofs.iter().enumerate() {
                        let e = if i == l { 1.0 } else { 0.0 };
                        assert!((di - e).abs() < 1e-10, "k={k} t={t} l={l} i={i}: {di}");
                    }
                }
            }
        }
    }

    #[test]
    fn interpolation_reproduces_polynomials() {
        let m = mesh();
        let sp = RtSpace::new(&m, 1);
        let f = |x: Point| Tensor2([[1.0 + x[0] - 2.0 * x[1], 3.0 * x[1]], [x[0], -0.5 + x[0] + x[1]]]);
        let s = BrokenStress::interpolate(&sp, &m, |_, x| f(x));
        let x = [0.7, 0.3];
        let t = 0;
        let v = s.value(&sp, t, x);
        let e = f(x);
        assert!((v - e).norm_sq() < 1e-24);
        let d = s.divergence(&sp, t, x);
        assert!((d[0] - 4.0).abs() < 1e-11 && (d[1] - 2.0).abs() < 1e-11);
    }

    #[test]
    fn piola_preserves_side_flux() {
        let m = mesh();
        let geo = m.geometry(1);
        // Reference field (1 + x, y): flux through reference edge (1,0)-(0,1)
        // with unnormalised normal (1, 1) is int_0^1 (2 - s) + s ds = 2.
        let fhat = |p: [f64; 2]| [1.0 + p[0], p[1]];
        let [_, p1, p2] = geo.vertices;
        let d = [p2[0] - p1[0], p2[1] - p1[1]];
        let nn = [d[1], -d[0]];
        let r = LineRule::gauss(4);
        let mut flux = 0.0;
        for (s, w) in r.points.iter().zip(&r.weights) {
            let ph = [1.0 - s, *s];
            let v = piola(&geo, fhat(ph));
            flux += w * (v[0] * nn[0] + v[1] * nn[1]);
        }
        assert!((flux - 2.0).abs() < 1e-13);
    }
}
