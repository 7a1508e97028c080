//! Plain-text mesh files.
//!
//! ```text
//! vertices 4
//! 0.0000000000000000e0 0.0000000000000000e0
//! ...
//! triangles 2
//! 0 1 2
//! ...
//! sides_dirichlet 1
//! 3 0
//! sides_neumann 3
//! 0 1
//! ...
//! ```
//!
//! Indices are 0-based. Triangles are counter-clockwise and the side
//! opposite the first vertex is the edge bisected on refinement. Blank
//! lines and lines starting with `#` are skipped. Unlisted boundary sides
//! are traction boundaries.

use std::fmt::Write as _;
use std::path::Path;

use stresseq_core::mesh::{Mesh, MeshError, RefinementEdge, SideKind};

#[derive(Debug, thiserror::Error)]
pub enum MeshIoError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

fn parse_err(line: usize, message: impl Into<String>) -> MeshIoError {
    MeshIoError::Parse { line, message: message.into() }
}

struct Lines<'a> {
    inner: std::iter::Peekable<Box<dyn Iterator<Item = (usize, &'a str)> + 'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        let it: Box<dyn Iterator<Item = (usize, &'a str)>> = Box::new(
            text.lines()
                .enumerate()
                .map(|(i, l)| (i + 1, l.trim()))
                .filter(|(_, l)| !l.is_empty() && !l.starts_with('#')),
        );
        Lines { inner: it.peekable(), last: 0 }
    }

    fn next(&mut self) -> Result<(usize, &'a str), MeshIoError> {
        let (n, l) = self.inner.next().ok_or_else(|| parse_err(self.last + 1, "unexpected end of file"))?;
        self.last = n;
        Ok((n, l))
    }

    fn header(&mut self, key: &str) -> Result<usize, MeshIoError> {
        let (n, l) = self.next()?;
        let mut parts = l.split_whitespace();
        if parts.next() != Some(key) {
            return Err(parse_err(n, format!("expected `{key} <count>`")));
        }
        let count = parts.next().and_then(|c| c.parse().ok()).ok_or_else(|| parse_err(n, "missing count"))?;
        if parts.next().is_some() {
            return Err(parse_err(n, "trailing tokens"));
        }
        Ok(count)
    }

    fn row<T: std::str::FromStr, const N: usize>(&mut self) -> Result<[T; N], MeshIoError> {
        let (n, l) = self.next()?;
        let vals: Vec<T> = l
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| parse_err(n, format!("invalid number `{t}`"))))
            .collect::<Result<_, _>>()?;
        let len = vals.len();
        vals.try_into().map_err(|_| parse_err(n, format!("expected {N} values, found {len}")))
    }
}

/// Vertices, triangles and boundary sides as read from a file.
#[derive(Clone, Debug, PartialEq)]
pub struct MeshData {
    pub vertices: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    pub dirichlet: Vec<[usize; 2]>,
    pub neumann: Vec<[usize; 2]>,
}

impl MeshData {
    pub fn from_mesh(mesh: &Mesh) -> Self {
        MeshData {
            vertices: mesh.vertices().to_vec(),
            triangles: mesh.triangles().to_vec(),
            dirichlet: mesh.boundary_sides(SideKind::Dirichlet),
            neumann: mesh.boundary_sides(SideKind::Neumann),
        }
    }

    pub fn build(&self) -> Result<Mesh, MeshError> {
        Mesh::build(
            self.vertices.clone(),
            self.triangles.clone(),
            &self.dirichlet,
            &self.neumann,
            RefinementEdge::AsGiven,
        )
    }
}

pub fn parse_mesh_data(text: &str) -> Result<MeshData, MeshIoError> {
    let mut lines = Lines::new(text);
    let nv = lines.header("vertices")?;
    let vertices = (0..nv).map(|_| lines.row::<f64, 2>()).collect::<Result<Vec<_>, _>>()?;
    let nt = lines.header("triangles")?;
    let triangles = (0..nt).map(|_| lines.row::<usize, 3>()).collect::<Result<Vec<_>, _>>()?;
    let nd = lines.header("sides_dirichlet")?;
    let dirichlet = (0..nd).map(|_| lines.row::<usize, 2>()).collect::<Result<Vec<_>, _>>()?;
    let nn = lines.header("sides_neumann")?;
    let neumann = (0..nn).map(|_| lines.row::<usize, 2>()).collect::<Result<Vec<_>, _>>()?;
    if let Some((n, _)) = lines.inner.next() {
        return Err(parse_err(n, "trailing content"));
    }
    Ok(MeshData { vertices, triangles, dirichlet, neumann })
}

pub fn parse_mesh(text: &str) -> Result<Mesh, MeshIoError> {
    Ok(parse_mesh_data(text)?.build()?)
}

pub fn read_mesh(path: &Path) -> Result<Mesh, MeshIoError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| MeshIoError::Io { path: path.display().to_string(), source })?;
    parse_mesh(&text)
}

/// Floats with 17 significant digits, enough to read back the same value.
pub fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_mesh_string(mesh: &Mesh) -> String {
    let data = MeshData::from_mesh(mesh);
    let mut out = String::new();
    let _ = writeln!(out, "vertices {}", data.vertices.len());
    for v in &data.vertices {
        let _ = writeln!(out, "{} {}", format_f64(v[0]), format_f64(v[1]));
    }
    let _ = writeln!(out, "triangles {}", data.triangles.len());
    for t in &data.triangles {
        let _ = writeln!(out, "{} {} {}", t[0], t[1], t[2]);
    }
    for (key, sides) in [("sides_dirichlet", &data.dirichlet), ("sides_neumann", &data.neumann)] {
        let _ = writeln!(out, "{key} {}", sides.len());
        for s in sides {
            let _ = writeln!(out, "{} {}", s[0], s[1]);
        }
    }
    out
}

pub fn write_mesh(mesh: &Mesh, path: &Path) -> std::io::Result<()> {
    std::fs::write(path, write_mesh_string(mesh))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SQUARE: &str = "# unit square\nvertices 5\n0 0\n1 0\n1 1\n0 1\n0.5 0.5\n\ntriangles 4\n4 0 1\n4 1 2\n4 2 3\n4 3 0\nsides_dirichlet 1\n3 0\nsides_neumann 3\n0 1\n1 2\n2 3\n";

    #[test]
    fn reads_the_square() {
        let m = parse_mesh(SQUARE).unwrap();
        assert_eq!(m.n_elements(), 4);
        assert_eq!(m.n_sides(), 8);
        assert_eq!(m.boundary_sides(SideKind::Dirichlet), vec![[0, 3]]);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let bad = SQUARE.replace("1 1\n", "1 x\n");
        match parse_mesh(&bad) {
            Err(MeshIoError::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_mesh("vertices 2\n0 0\n"), Err(MeshIoError::Parse { .. })));
        let no_dirichlet = SQUARE.replace("sides_dirichlet 1\n3 0\n", "sides_dirichlet 0\n");
        assert!(matches!(parse_mesh(&no_dirichlet), Err(MeshIoError::Mesh(MeshError::EmptyDirichlet))));
    }

    #[test]
    fn writer_is_a_fixed_point() {
        let m = parse_mesh(SQUARE).unwrap().refine(&[1]).unwrap();
        let text = write_mesh_string(&m);
        let back = parse_mesh(&text).unwrap();
        assert_eq!(back.vertices(), m.vertices());
        assert_eq!(back.triangles(), m.triangles());
        assert_eq!(write_mesh_string(&back), text);
    }
}
