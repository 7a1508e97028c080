//! Continuous Lagrange elements of arbitrary degree.

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::{DenseMatrix, Lu};
use crate::mesh::{local_edge, Mesh, Point, SideKind};
use crate::poly::{monomial, monomial_grad, monomial_hessian, monomials};

const REF_VERTICES: [[f64; 2]; 3] = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];

/// Nodal Lagrange basis of degree `m` on the reference triangle.
///
/// Node order: the three vertices, then `m - 1` nodes on each local edge
/// (edge `e` runs from vertex `e + 1` to vertex `e + 2`), then interior nodes.
#[derive(Clone, Debug)]
pub struct LagrangeElement {
    degree: usize,
    nodes: Vec<[f64; 2]>,
    exps: Vec<(u32, u32)>,
    /// Row `l` holds the monomial coefficients of basis function `l`.
    coeffs: DenseMatrix,
}

impl LagrangeElement {
    pub fn new(degree: usize) -> Self {
        assert!(degree >= 1);
        let m = degree as f64;
        let mut nodes: Vec<[f64; 2]> = REF_VERTICES.to_vec();
        for e in 0..3 {
            let a = REF_VERTICES[(e + 1) % 3];
            let b = REF_VERTICES[(e + 2) % 3];
            for j in 1..degree {
                let t = j as f64 / m;
                nodes.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
            }
        }
        for j in 1..degree {
            for i in 1..degree - j {
                nodes.push([i as f64 / m, j as f64 / m]);
            }
        }
        let exps = monomials(degree);
        let n = exps.len();
        debug_assert_eq!(nodes.len(), n);
        let mut v = DenseMatrix::zeros(n, n);
        for (i, p) in nodes.iter().enumerate() {
            for (j, &e) in exps.iter().enumerate() {
                v[(i, j)] = monomial(e, *p);
            }
        }
        // Basis coefficients C satisfy V C^T = I.
        let coeffs = Lu::factor(&v).expect("Lagrange nodes are unisolvent").inverse().transpose();
        LagrangeElement { degree, nodes, exps, coeffs }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn eval(&self, xh: [f64; 2]) -> Vec<f64> {
        let mono: Vec<f64> = self.exps.iter().map(|&e| monomial(e, xh)).collect();
        (0..self.len()).map(|l| crate::linalg::dot(self.coeffs.row(l), &mono)).collect()
    }

    /// Reference gradients.
    pub fn grad(&self, xh: [f64; 2]) -> Vec<[f64; 2]> {
        let g: Vec<[f64; 2]> = self.exps.iter().map(|&e| monomial_grad(e, xh)).collect();
        (0..self.len())
            .map(|l| {
                let c = self.coeffs.row(l);
                let mut out = [0.0; 2];
                for (ci, gi) in c.iter().zip(&g) {
                    out[0] += ci * gi[0];
                    out[1] += ci * gi[1];
                }
                out
            })
            .collect()
    }

    /// Reference Hessians `[xx, xy, yy]`.
    pub fn hessian(&self, xh: [f64; 2]) -> Vec<[f64; 3]> {
        let h: Vec<[f64; 3]> = self.exps.iter().map(|&e| monomial_hessian(e, xh)).collect();
        (0..self.len())
            .map(|l| {
                let c = self.coeffs.row(l);
                let mut out = [0.0; 3];
                for (ci, hi) in c.iter().zip(&h) {
                    for d in 0..3 {
                        out[d] += ci * hi[d];
                    }
                }
                out
            })
            .collect()
    }
}

/// Global numbering of a continuous Lagrange space of degree `m`.
#[derive(Clone, Debug)]
pub struct LagrangeSpace {
    element: LagrangeElement,
    n_nodes: usize,
    cell_nodes: Vec<usize>,
    coords: Vec<Point>,
    on_dirichlet: Vec<bool>,
}

impl LagrangeSpace {
    pub fn new(mesh: &Mesh, degree: usize) -> Self {
        let element = LagrangeElement::new(degree);
        let per_edge = degree - 1;
        let n_int = element.len() - 3 - 3 * per_edge;
        let nv = mesh.n_vertices();
        let ns = mesh.n_sides();
        let n_nodes = nv + ns * per_edge + mesh.n_elements() * n_int;
        let nloc = element.len();
        let mut cell_nodes = Vec::with_capacity(mesh.n_elements() * nloc);
        let mut coords = vec![[0.0; 2]; n_nodes];
        for t in 0..mesh.n_elements() {
            let tri = mesh.triangle(t);
            let geo = mesh.geometry(t);
            let sides = mesh.element_sides(t);
            let start = cell_nodes.len();
            cell_nodes.extend_from_slice(&tri);
            for e in 0..3 {
                let (a, b) = local_edge(tri, e);
                let base = nv + sides[e] * per_edge;
                for j in 0..per_edge {
                    let g = if a < b { j } else { per_edge - 1 - j };
                    cell_nodes.push(base + g);
                }
            }
            for i in 0..n_int {
                cell_nodes.push(nv + ns * per_edge + t * n_int + i);
            }
            for (l, &g) in cell_nodes[start..].iter().enumerate() {
                coords[g] = geo.map(element.nodes()[l]);
            }
        }
        let mut on_dirichlet = vec![false; n_nodes];
        for (s, side) in mesh.sides().iter().enumerate() {
            if side.kind == SideKind::Dirichlet {
                for &v in &side.vertices {
                    on_dirichlet[v] = true;
                }
                for j in 0..per_edge {
                    on_dirichlet[nv + s * per_edge + j] = true;
                }
            }
        }
        LagrangeSpace { element, n_nodes, cell_nodes, coords, on_dirichlet }
    }

    pub fn element(&self) -> &LagrangeElement {
        &self.element
    }

    pub fn degree(&self) -> usize {
        self.element.degree()
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn nodes_per_cell(&self) -> usize {
        self.element.len()
    }

    pub fn cell_nodes(&self, t: usize) -> &[usize] {
        let n = self.element.len();
        &self.cell_nodes[t * n..(t + 1) * n]
    }

    pub fn coords(&self) -> &[Point] {
        &self.coords
    }

    pub fn on_dirichlet(&self, node: usize) -> bool {
        self.on_dirichlet[node]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basis_is_nodal_and_sums_to_one() {
        for m in 1..=4 {
            let el = LagrangeElement::new(m);
            for (i, p) in el.nodes().iter().enumerate() {
                let v = el.eval(*p);
                for (l, vl) in v.iter().enumerate() {
                    let e = if l == i { 1.0 } else { 0.0 };
                    assert!((vl - e).abs() < 1e-12, "m={m}");
                }
            }
            let v = el.eval([0.21, 0.37]);
            assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let g = el.grad([0.21, 0.37]);
            assert!(g.iter().map(|x| x[0]).sum::<f64>().abs() < 1e-11);
        }
    }

    #[test]
    fn shared_edge_nodes_coincide() {
        let mesh = Mesh::new(
            vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
            vec![[0, 1, 2], [0, 2, 3]],
            &[[3, 0], [0, 1]],
            &[],
        )
        .unwrap();
        let sp = LagrangeSpace::new(&mesh, 3);
        for t in 0..2 {
            let geo = mesh.geometry(t);
            for (l, &g) in sp.cell_nodes(t).iter().enumerate() {
                let p = geo.map(sp.element().nodes()[l]);
                let q = sp.coords()[g];
                assert!((p[0] - q[0]).abs() < 1e-14 && (p[1] - q[1]).abs() < 1e-14);
            }
        }
        assert_eq!(sp.n_nodes(), 4 + 5 * 2 + 2);
    }
}
