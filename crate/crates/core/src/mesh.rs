//! Conforming triangulations with boundary classification, newest vertex
//! bisection, and the vertex patches used by the equilibration.
//!
//! Triangles are stored counter-clockwise as `[v0, v1, v2]` where `v0` is the
//! newest vertex and `(v1, v2)` is the refinement edge. Local edge `e` is the
//! edge opposite local vertex `e`, so local edge 0 is always the refinement
//! edge.

use alloc::vec;
use alloc::vec::Vec;

use crate::sqrt;

pub type Point = [f64; 2];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SideKind {
    Interior,
    Dirichlet,
    Neumann,
}

/// An edge of the triangulation. `vertices` is sorted ascending; `minus` is
/// the lower-indexed adjacent element and `normal` points out of it. On the
/// boundary `normal` is the outward normal.
#[derive(Clone, Debug, PartialEq)]
pub struct Side {
    pub vertices: [usize; 2],
    pub minus: usize,
    pub plus: Option<usize>,
    pub normal: [f64; 2],
    pub length: f64,
    pub kind: SideKind,
}

/// How the refinement edge of each input triangle is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RefinementEdge {
    /// Rotate each triangle so that its longest edge is the refinement edge.
    Longest,
    /// Keep the vertex order as given: `(v1, v2)` is the refinement edge.
    AsGiven,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MeshError {
    #[error("triangle {element} references vertex {vertex}, but there are only {count} vertices")]
    IndexOutOfRange { element: usize, vertex: usize, count: usize },
    #[error("triangle {element} is inverted or degenerate")]
    InvertedElement { element: usize },
    #[error("triangulation is not conforming at edge ({a}, {b})")]
    NonConforming { a: usize, b: usize },
    #[error("side ({a}, {b}) is not a boundary edge of the triangulation")]
    UnknownBoundarySide { a: usize, b: usize },
    #[error("side ({a}, {b}) is listed as both Dirichlet and Neumann")]
    ConflictingBoundarySide { a: usize, b: usize },
    #[error("the Dirichlet boundary has zero length")]
    EmptyDirichlet,
    #[error("Neumann vertex {vertex} has no edge to a vertex off the Neumann boundary")]
    IsolatedNeumannVertex { vertex: usize },
    #[error("element {0} does not exist")]
    UnknownElement(usize),
}

/// Affine map from the reference triangle to a physical element.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElementGeometry {
    pub vertices: [Point; 3],
    /// Columns are `v1 - v0` and `v2 - v0`.
    pub jacobian: [[f64; 2]; 2],
    pub inverse: [[f64; 2]; 2],
    pub det: f64,
}

impl ElementGeometry {
    pub fn new(vertices: [Point; 3]) -> Self {
        let [p0, p1, p2] = vertices;
        let j = [[p1[0] - p0[0], p2[0] - p0[0]], [p1[1] - p0[1], p2[1] - p0[1]]];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        let inverse = [[j[1][1] / det, -j[0][1] / det], [-j[1][0] / det, j[0][0] / det]];
        ElementGeometry { vertices, jacobian: j, inverse, det }
    }

    pub fn area(&self) -> f64 {
        0.5 * self.det
    }

    pub fn map(&self, xh: [f64; 2]) -> Point {
        let (p0, j) = (self.vertices[0], self.jacobian);
        [p0[0] + j[0][0] * xh[0] + j[0][1] * xh[1], p0[1] + j[1][0] * xh[0] + j[1][1] * xh[1]]
    }

    pub fn pull_back(&self, x: Point) -> [f64; 2] {
        let d = [x[0] - self.vertices[0][0], x[1] - self.vertices[0][1]];
        let k = self.inverse;
        [k[0][0] * d[0] + k[0][1] * d[1], k[1][0] * d[0] + k[1][1] * d[1]]
    }

    /// Maps a reference gradient to the physical one, `J^{-T} g`.
    pub fn grad(&self, g: [f64; 2]) -> [f64; 2] {
        let k = self.inverse;
        [k[0][0] * g[0] + k[1][0] * g[1], k[0][1] * g[0] + k[1][1] * g[1]]
    }

    /// Maps a reference Hessian `[xx, xy, yy]` to the physical one.
    pub fn hessian(&self, h: [f64; 3]) -> [f64; 3] {
        let k = self.inverse;
        let hm = [[h[0], h[1]], [h[1], h[2]]];
        let mut out = [[0.0; 2]; 2];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, o) in row.iter_mut().enumerate() {
                let mut s = 0.0;
                for a in 0..2 {
                    for b in 0..2 {
                        s += k[a][i] * hm[a][b] * k[b][j];
                    }
                }
                *o = s;
            }
        }
        [out[0][0], out[0][1], out[1][1]]
    }

    /// Barycentric coordinates of a reference point.
    pub fn barycentric(xh: [f64; 2]) -> [f64; 3] {
        [1.0 - xh[0] - xh[1], xh[0], xh[1]]
    }
}

#[derive(Clone, Debug)]
pub struct Mesh {
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    sides: Vec<Side>,
    element_sides: Vec<[usize; 3]>,
    parents: Option<Vec<usize>>,
    neumann_vertex: Vec<bool>,
    dirichlet_vertex: Vec<bool>,
}

fn dist(a: Point, b: Point) -> f64 {
    sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]))
}

fn key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Local edge `e` of a triangle, traversed counter-clockwise.
#[inline]
pub fn local_edge(t: [usize; 3], e: usize) -> (usize, usize) {
    (t[(e + 1) % 3], t[(e + 2) % 3])
}

impl Mesh {
    /// Builds a mesh from counter-clockwise triangles, using the longest
    /// edge of every triangle as its initial refinement edge. Boundary edges
    /// that appear in neither list are Neumann.
    pub fn new(
        vertices: Vec<Point>,
        triangles: Vec<[usize; 3]>,
        dirichlet: &[[usize; 2]],
        neumann: &[[usize; 2]],
    ) -> Result<Self, MeshError> {
        Self::build(vertices, triangles, dirichlet, neumann, RefinementEdge::Longest)
    }

    pub fn build(
        vertices: Vec<Point>,
        mut triangles: Vec<[usize; 3]>,
        dirichlet: &[[usize; 2]],
        neumann: &[[usize; 2]],
        edge: RefinementEdge,
    ) -> Result<Self, MeshError> {
        let nv = vertices.len();
        for (el, t) in triangles.iter_mut().enumerate() {
            for &v in t.iter() {
                if v >= nv {
                    return Err(MeshError::IndexOutOfRange { element: el, vertex: v, count: nv });
                }
            }
            let g = ElementGeometry::new([vertices[t[0]], vertices[t[1]], vertices[t[2]]]);
            let lens = [0, 1, 2].map(|e| {
                let (a, b) = local_edge(*t, e);
                dist(vertices[a], vertices[b])
            });
            let longest = lens.iter().fold(0.0f64, |m, &l| m.max(l));
            if !(g.det > 1e-13 * longest * longest) {
                return Err(MeshError::InvertedElement { element: el });
            }
            if edge == RefinementEdge::Longest {
                let mut best = 0;
                for e in 1..3 {
                    if lens[e] > lens[best] {
                        best = e;
                    }
                }
                t.rotate_left(best);
            }
        }

        // Sides from sorted edge incidences.
        let mut inc: Vec<(usize, usize, usize, usize)> = Vec::with_capacity(3 * triangles.len());
        for (el, t) in triangles.iter().enumerate() {
            for e in 0..3 {
                let (a, b) = local_edge(*t, e);
                let (lo, hi) = key(a, b);
                inc.push((lo, hi, el, e));
            }
        }
        inc.sort_unstable();
        let mut sides = Vec::new();
        let mut element_sides = vec![[usize::MAX; 3]; triangles.len()];
        let mut i = 0;
        while i < inc.len() {
            let mut j = i + 1;
            while j < inc.len() && inc[j].0 == inc[i].0 && inc[j].1 == inc[i].1 {
                j += 1;
            }
            let (lo, hi, el, e) = inc[i];
            if j - i > 2 {
                return Err(MeshError::NonConforming { a: lo, b: hi });
            }
            let (a, b) = local_edge(triangles[el], e);
            let (pa, pb) = (vertices[a], vertices[b]);
            let length = dist(pa, pb);
            let normal = [(pb[1] - pa[1]) / length, -(pb[0] - pa[0]) / length];
            let plus = if j - i == 2 {
                let (_, _, el2, e2) = inc[i + 1];
                // Neighbours must traverse the shared edge in opposite directions.
                if local_edge(triangles[el2], e2) != (b, a) {
                    return Err(MeshError::NonConforming { a: lo, b: hi });
                }
                element_sides[el2][e2] = sides.len();
                Some(el2)
            } else {
                None
            };
            element_sides[el][e] = sides.len();
            let kind = if plus.is_some() { SideKind::Interior } else { SideKind::Neumann };
            sides.push(Side { vertices: [lo, hi], minus: el, plus, normal, length, kind });
            i = j;
        }

        let find = |a: usize, b: usize| -> Result<usize, MeshError> {
            let k = key(a, b);
            let idx = sides
                .binary_search_by(|s: &Side| (s.vertices[0], s.vertices[1]).cmp(&k))
                .map_err(|_| MeshError::UnknownBoundarySide { a: k.0, b: k.1 })?;
            if sides[idx].plus.is_some() {
                return Err(MeshError::UnknownBoundarySide { a: k.0, b: k.1 });
            }
            Ok(idx)
        };
        let mut is_dirichlet = vec![false; sides.len()];
        for &[a, b] in dirichlet {
            is_dirichlet[find(a, b)?] = true;
        }
        for &[a, b] in neumann {
            let s = find(a, b)?;
            if is_dirichlet[s] {
                return Err(MeshError::ConflictingBoundarySide { a: sides[s].vertices[0], b: sides[s].vertices[1] });
            }
        }
        for (s, side) in sides.iter_mut().enumerate() {
            if is_dirichlet[s] {
                side.kind = SideKind::Dirichlet;
            }
        }

        check_hanging_nodes(&vertices, &sides)?;

        let dirichlet_length: f64 =
            sides.iter().filter(|s| s.kind == SideKind::Dirichlet).map(|s| s.length).sum();
        if !(dirichlet_length > 0.0) {
            return Err(MeshError::EmptyDirichlet);
        }

        let mut neumann_vertex = vec![false; nv];
        let mut dirichlet_vertex = vec![false; nv];
        for s in &sides {
            match s.kind {
                SideKind::Neumann => s.vertices.iter().for_each(|&v| neumann_vertex[v] = true),
                SideKind::Dirichlet => s.vertices.iter().for_each(|&v| dirichlet_vertex[v] = true),
                SideKind::Interior => {}
            }
        }
        let mut has_free_neighbour = vec![false; nv];
        for s in &sides {
            let [a, b] = s.vertices;
            if !neumann_vertex[b] {
                has_free_neighbour[a] = true;
            }
            if !neumann_vertex[a] {
                has_free_neighbour[b] = true;
            }
        }
        if let Some(v) = (0..nv).find(|&v| neumann_vertex[v] && !has_free_neighbour[v]) {
            return Err(MeshError::IsolatedNeumannVertex { vertex: v });
        }

        Ok(Mesh { vertices, triangles, sides, element_sides, parents: None, neumann_vertex, dirichlet_vertex })
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_elements(&self) -> usize {
        self.triangles.len()
    }

    pub fn n_sides(&self) -> usize {
        self.sides.len()
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn vertex(&self, v: usize) -> Point {
        self.vertices[v]
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn triangle(&self, t: usize) -> [usize; 3] {
        self.triangles[t]
    }

    pub fn sides(&self) -> &[Side] {
        &self.sides
    }

    pub fn side(&self, s: usize) -> &Side {
        &self.sides[s]
    }

    /// Global side indices of the three local edges of element `t`.
    pub fn element_sides(&self, t: usize) -> [usize; 3] {
        self.element_sides[t]
    }

    /// Parent element in the mesh this one was refined from.
    pub fn parents(&self) -> Option<&[usize]> {
        self.parents.as_deref()
    }

    pub fn geometry(&self, t: usize) -> ElementGeometry {
        let [a, b, c] = self.triangles[t];
        ElementGeometry::new([self.vertices[a], self.vertices[b], self.vertices[c]])
    }

    pub fn area(&self, t: usize) -> f64 {
        self.geometry(t).area()
    }

    pub fn diameter(&self, t: usize) -> f64 {
        self.element_sides[t].iter().fold(0.0f64, |m, &s| m.max(self.sides[s].length))
    }

    pub fn centroid(&self, t: usize) -> Point {
        let [a, b, c] = self.triangles[t].map(|v| self.vertices[v]);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    pub fn is_neumann_vertex(&self, v: usize) -> bool {
        self.neumann_vertex[v]
    }

    pub fn is_dirichlet_vertex(&self, v: usize) -> bool {
        self.dirichlet_vertex[v]
    }

    pub fn has_neumann(&self) -> bool {
        self.sides.iter().any(|s| s.kind == SideKind::Neumann)
    }

    pub fn boundary_sides(&self, kind: SideKind) -> Vec<[usize; 2]> {
        self.sides.iter().filter(|s| s.kind == kind).map(|s| s.vertices).collect()
    }

    pub fn total_area(&self) -> f64 {
        (0..self.n_elements()).map(|t| self.area(t)).sum()
    }

    /// Smallest interior angle over all elements, in radians.
    pub fn min_angle(&self) -> f64 {
        let mut best = core::f64::consts::PI;
        for t in &self.triangles {
            for i in 0..3 {
                let p = self.vertices[t[i]];
                let q = self.vertices[t[(i + 1) % 3]];
                let r = self.vertices[t[(i + 2) % 3]];
                let u = [q[0] - p[0], q[1] - p[1]];
                let w = [r[0] - p[0], r[1] - p[1]];
                let c = (u[0] * w[0] + u[1] * w[1]) / (dist(p, q) * dist(p, r));
                best = best.min(libm::acos(c.clamp(-1.0, 1.0)));
            }
        }
        best
    }

    /// Elements containing each vertex, ascending.
    pub fn vertex_elements(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_vertices()];
        for (t, tri) in self.triangles.iter().enumerate() {
            for &v in tri {
                out[v].push(t);
            }
        }
        out
    }

    /// Vertices joined to each vertex by an edge, ascending.
    pub fn vertex_neighbours(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_vertices()];
        for s in &self.sides {
            let [a, b] = s.vertices;
            out[a].push(b);
            out[b].push(a);
        }
        for n in &mut out {
            n.sort_unstable();
        }
        out
    }

    /// Newest vertex bisection: every edge of a marked element is bisected
    /// (each marked triangle becomes four), followed by the closure needed
    /// to keep the mesh conforming.
    pub fn refine(&self, marked: &[usize]) -> Result<Mesh, MeshError> {
        let ns = self.n_sides();
        let mut side_marked = vec![false; ns];
        for &t in marked {
            if t >= self.n_elements() {
                return Err(MeshError::UnknownElement(t));
            }
            for s in self.element_sides[t] {
                side_marked[s] = true;
            }
        }
        // Closure: an element with any marked edge must bisect its refinement edge.
        let mut queue: Vec<usize> = (0..ns).filter(|&s| side_marked[s]).collect();
        while let Some(s) = queue.pop() {
            let side = &self.sides[s];
            for t in core::iter::once(side.minus).chain(side.plus) {
                let r = self.element_sides[t][0];
                if !side_marked[r] {
                    side_marked[r] = true;
                    queue.push(r);
                }
            }
        }

        let mut vertices = self.vertices.clone();
        let mut midpoint = vec![usize::MAX; ns];
        for s in 0..ns {
            if side_marked[s] {
                let [a, b] = self.sides[s].vertices;
                let (pa, pb) = (self.vertices[a], self.vertices[b]);
                midpoint[s] = vertices.len();
                vertices.push([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]);
            }
        }

        let mut triangles = Vec::with_capacity(self.n_elements() + 2 * marked.len());
        let mut parents = Vec::with_capacity(triangles.capacity());
        for (t, &[v0, v1, v2]) in self.triangles.iter().enumerate() {
            let es = self.element_sides[t];
            if !side_marked[es[0]] {
                triangles.push([v0, v1, v2]);
                parents.push(t);
                continue;
            }
            let m = midpoint[es[0]];
            // Left child (m, v0, v1) has refinement edge (v0, v1) = local edge 2.
            if side_marked[es[2]] {
                let m2 = midpoint[es[2]];
                triangles.push([m2, m, v0]);
                triangles.push([m2, v1, m]);
                parents.extend([t, t]);
            } else {
                triangles.push([m, v0, v1]);
                parents.push(t);
            }
            // Right child (m, v2, v0) has refinement edge (v2, v0) = local edge 1.
            if side_marked[es[1]] {
                let m1 = midpoint[es[1]];
                triangles.push([m1, m, v2]);
                triangles.push([m1, v0, m]);
                parents.extend([t, t]);
            } else {
                triangles.push([m, v2, v0]);
                parents.push(t);
            }
        }

        let mut dirichlet = Vec::new();
        let mut neumann = Vec::new();
        for (s, side) in self.sides.iter().enumerate() {
            let list = match side.kind {
                SideKind::Interior => continue,
                SideKind::Dirichlet => &mut dirichlet,
                SideKind::Neumann => &mut neumann,
            };
            let [a, b] = side.vertices;
            if side_marked[s] {
                list.push([a, midpoint[s]]);
                list.push([midpoint[s], b]);
            } else {
                list.push([a, b]);
            }
        }
        let mut mesh = Mesh::build(vertices, triangles, &dirichlet, &neumann, RefinementEdge::AsGiven)?;
        mesh.parents = Some(parents);
        Ok(mesh)
    }

    /// Refines every element once (each triangle becomes four).
    pub fn refine_uniform(&self) -> Result<Mesh, MeshError> {
        let all: Vec<usize> = (0..self.n_elements()).collect();
        self.refine(&all)
    }
}

fn check_hanging_nodes(vertices: &[Point], sides: &[Side]) -> Result<(), MeshError> {
    let boundary: Vec<&Side> = sides.iter().filter(|s| s.plus.is_none()).collect();
    let mut bverts: Vec<usize> = boundary.iter().flat_map(|s| s.vertices).collect();
    bverts.sort_by(|&a, &b| vertices[a][0].total_cmp(&vertices[b][0]).then(a.cmp(&b)));
    bverts.dedup();
    for s in boundary {
        let [a, b] = s.vertices;
        let (pa, pb) = (vertices[a], vertices[b]);
        let eps = 1e-12 * s.length;
        let (xlo, xhi) = (pa[0].min(pb[0]) - eps, pa[0].max(pb[0]) + eps);
        let start = bverts.partition_point(|&v| vertices[v][0] < xlo);
        for &v in &bverts[start..] {
            let p = vertices[v];
            if p[0] > xhi {
                break;
            }
            if v == a || v == b {
                continue;
            }
            let d = [pb[0] - pa[0], pb[1] - pa[1]];
            let w = [p[0] - pa[0], p[1] - pa[1]];
            let cross = d[0] * w[1] - d[1] * w[0];
            let along = d[0] * w[0] + d[1] * w[1];
            let l2 = s.length * s.length;
            if cross.abs() <= 1e-10 * l2 && along > 1e-10 * l2 && along < (1.0 - 1e-10) * l2 {
                return Err(MeshError::NonConforming { a, b });
            }
        }
    }
    Ok(())
}

/// Triangulates a structured grid of `nx * ny` quadrilateral cells. Cell
/// `(i, j)` has corners `map(i / nx, j / ny)` etc.; cells for which `keep`
/// is false are dropped. Each cell is split along a diagonal, chosen to pass
/// through any vertex that belongs to this cell only (convex corners), so no
/// corner triangle has two boundary sides. `classify` labels each boundary
/// edge from its endpoints.
pub fn structured_mesh(
    nx: usize,
    ny: usize,
    map: impl Fn(f64, f64) -> Point,
    keep: impl Fn(usize, usize) -> bool,
    classify: impl Fn(Point, Point) -> SideKind,
) -> Result<Mesh, MeshError> {
    let id = |i: usize, j: usize| j * (nx + 1) + i;
    let mut cells_at = vec![0usize; (nx + 1) * (ny + 1)];
    for j in 0..ny {
        for i in 0..nx {
            if keep(i, j) {
                for (a, b) in [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)] {
                    cells_at[id(a, b)] += 1;
                }
            }
        }
    }
    let mut index = vec![usize::MAX; (nx + 1) * (ny + 1)];
    let mut vertices = Vec::new();
    for j in 0..=ny {
        for i in 0..=nx {
            if cells_at[id(i, j)] > 0 {
                index[id(i, j)] = vertices.len();
                vertices.push(map(i as f64 / nx as f64, j as f64 / ny as f64));
            }
        }
    }
    let mut triangles = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            if !keep(i, j) {
                continue;
            }
            let [a, b, c, d] = [id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1)].map(|v| index[v]);
            let lone = |v: usize| cells_at[v] == 1;
            let anti = (lone(id(i + 1, j)) || lone(id(i, j + 1))) && !(lone(id(i, j)) || lone(id(i + 1, j + 1)));
            if anti {
                triangles.push([a, b, d]);
                triangles.push([b, c, d]);
            } else {
                triangles.push([a, b, c]);
                triangles.push([a, c, d]);
            }
        }
    }
    // Boundary edges are the edges with a single incident triangle.
    let mut edges: Vec<(usize, usize)> = triangles
        .iter()
        .flat_map(|t| (0..3).map(move |e| {
            let (a, b) = local_edge(*t, e);
            key(a, b)
        }))
        .collect();
    edges.sort_unstable();
    let mut dirichlet = Vec::new();
    let mut neumann = Vec::new();
    let mut i = 0;
    while i < edges.len() {
        let mut j = i + 1;
        while j < edges.len() && edges[j] == edges[i] {
            j += 1;
        }
        if j - i == 1 {
            let (a, b) = edges[i];
            match classify(vertices[a], vertices[b]) {
                SideKind::Dirichlet => dirichlet.push([a, b]),
                _ => neumann.push([a, b]),
            }
        }
        i = j;
    }
    Mesh::new(vertices, triangles, &dirichlet, &neumann)
}

/// The support of a (possibly modified) hat function used for local
/// equilibration: the weight is one at `weights` and zero at all other
/// vertices, and `elements` is its support.
#[derive(Clone, Debug, PartialEq)]
pub struct VertexPatch {
    pub center: usize,
    /// Vertices where the weight is one: the centre followed by absorbed
    /// Neumann vertices, ascending.
    pub weights: Vec<usize>,
    pub elements: Vec<usize>,
    pub touches_dirichlet: bool,
}

impl VertexPatch {
    /// Nodal values of the weight at the three vertices of element `t`.
    pub fn local_weights(&self, mesh: &Mesh, t: usize) -> [f64; 3] {
        mesh.triangle(t).map(|v| if self.weights.contains(&v) { 1.0 } else { 0.0 })
    }

    pub fn contains(&self, t: usize) -> bool {
        self.elements.binary_search(&t).is_ok()
    }

    fn finish(mesh: &Mesh, center: usize, weights: Vec<usize>, star: &[Vec<usize>]) -> Self {
        let mut elements: Vec<usize> = weights.iter().flat_map(|&v| star[v].iter().copied()).collect();
        elements.sort_unstable();
        elements.dedup();
        let touches_dirichlet = elements
            .iter()
            .any(|&t| mesh.element_sides(t).iter().any(|&s| mesh.side(s).kind == SideKind::Dirichlet));
        VertexPatch { center, weights, elements, touches_dirichlet }
    }
}

/// One patch per vertex with the ordinary hat function.
pub fn standard_patches(mesh: &Mesh) -> Vec<VertexPatch> {
    let star = mesh.vertex_elements();
    (0..mesh.n_vertices()).map(|z| VertexPatch::finish(mesh, z, vec![z], &star)).collect()
}

/// Patches for the vertices off the Neumann boundary. Every Neumann vertex
/// is absorbed by its lowest-indexed edge neighbour that is not a Neumann
/// vertex, so the weights still form a partition of unity.
pub fn modified_patches(mesh: &Mesh) -> Result<Vec<VertexPatch>, MeshError> {
    let nv = mesh.n_vertices();
    let neighbours = mesh.vertex_neighbours();
    let mut absorbed: Vec<Vec<usize>> = vec![Vec::new(); nv];
    for z in 0..nv {
        if mesh.is_neumann_vertex(z) {
            let host = neighbours[z]
                .iter()
                .copied()
                .find(|&w| !mesh.is_neumann_vertex(w))
                .ok_or(MeshError::IsolatedNeumannVertex { vertex: z })?;
            absorbed[host].push(z);
        }
    }
    let star = mesh.vertex_elements();
    Ok((0..nv)
        .filter(|&z| !mesh.is_neumann_vertex(z))
        .map(|z| {
            let mut w = vec![z];
            w.extend_from_slice(&absorbed[z]);
            w.sort_unstable();
            VertexPatch::finish(mesh, z, w, &star)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Unit square split along the diagonal (0,0)-(1,1).
    fn square() -> Mesh {
        Mesh::new(
            vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
            vec![[0, 1, 2], [0, 2, 3]],
            &[[3, 0], [0, 1]],
            &[[1, 2], [2, 3]],
        )
        .unwrap()
    }

    #[test]
    fn longest_edge_becomes_refinement_edge() {
        let m = square();
        for t in 0..2 {
            let s = m.element_sides(t)[0];
            assert_eq!(m.side(s).vertices, [0, 2]);
        }
    }

    #[test]
    fn normals_point_from_minus_to_plus() {
        let m = square();
        for s in m.sides() {
            let cm = m.centroid(s.minus);
            let mid = m.vertex(s.vertices[0]);
            let d = [mid[0] - cm[0], mid[1] - cm[1]];
            assert!(d[0] * s.normal[0] + d[1] * s.normal[1] > 0.0);
        }
    }

    #[test]
    fn inverted_element_is_rejected() {
        let err = Mesh::new(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], vec![[0, 2, 1]], &[[0, 1]], &[]);
        assert_eq!(err.unwrap_err(), MeshError::InvertedElement { element: 0 });
    }

    #[test]
    fn hanging_node_is_rejected() {
        // Big triangle on top of two small ones: vertex 4 hangs on edge (0, 1).
        let v = vec![[0.0, 0.0], [2.0, 0.0], [1.0, 1.0], [1.0, -1.0], [1.0, 0.0]];
        let t = vec![[0, 1, 2], [0, 3, 4], [4, 3, 1]];
        let err = Mesh::new(v, t, &[[0, 2]], &[]).unwrap_err();
        assert!(matches!(err, MeshError::NonConforming { .. }));
    }

    #[test]
    fn missing_dirichlet_is_rejected() {
        let err = Mesh::new(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], vec![[0, 1, 2]], &[], &[]);
        assert_eq!(err.unwrap_err(), MeshError::EmptyDirichlet);
    }

    #[test]
    fn bowtie_has_isolated_neumann_vertex() {
        let v = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]];
        let t = vec![[0, 1, 2], [0, 3, 4]];
        let err = Mesh::new(v, t, &[[1, 2]], &[]).unwrap_err();
        assert_eq!(err, MeshError::IsolatedNeumannVertex { vertex: 0 });
    }

    #[test]
    fn marked_element_splits_into_four_with_closure() {
        let m = square();
        let r = m.refine(&[0]).unwrap();
        // Element 0 splits into four; the closure bisects its neighbour
        // across the shared diagonal once.
        assert_eq!(r.n_elements(), 6);
        assert!(r.vertices().contains(&[0.5, 0.5]));
        assert!((r.total_area() - 1.0).abs() < 1e-15);
        assert_eq!(r.parents().unwrap(), &[0, 0, 0, 0, 1, 1]);
    }

    #[test]
    fn uniform_refinement_quadruples() {
        let mut m = square();
        for level in 1..=4 {
            m = m.refine_uniform().unwrap();
            assert_eq!(m.n_elements(), 2 * 4usize.pow(level));
            assert_eq!(m.boundary_sides(SideKind::Dirichlet).len(), 2 * 2usize.pow(level));
        }
    }

    #[test]
    fn modified_patches_absorb_neumann_vertices() {
        let m = square().refine_uniform().unwrap().refine_uniform().unwrap();
        let patches = modified_patches(&m).unwrap();
        let mut count = vec![0; m.n_vertices()];
        for p in &patches {
            assert!(!m.is_neumann_vertex(p.center));
            for &w in &p.weights {
                count[w] += 1;
            }
        }
        assert!(count.iter().all(|&c| c == 1));
    }
}
