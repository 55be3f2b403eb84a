use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Triangle mesh with a counter-clockwise surface loop.
#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    rest: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    surface: Vec<usize>,
    rest_area: Vec<f64>,
    dm_inv: Vec<[[f64; 2]; 2]>,
}

/// Per surface edge: midpoint, unit outward normal, length.
#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceGeometry {
    pub midpoints: Vec<[f64; 2]>,
    pub normals: Vec<[f64; 2]>,
    pub lengths: Vec<f64>,
}

/// Shoelace area, positive for a counter-clockwise loop.
pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|k| {
            let a = poly[k];
            let b = poly[(k + 1) % n];
            a[0] * b[1] - b[0] * a[1]
        })
        .sum::<f64>()
        * 0.5
}

impl Mesh {
    pub fn new(rest: Vec<[f64; 2]>, triangles: Vec<[usize; 3]>, surface: Vec<usize>) -> Result<Mesh> {
        let n = rest.len();
        if rest.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Degenerate("non-finite rest position".into()));
        }
        let mut rest_area = Vec::with_capacity(triangles.len());
        let mut dm_inv = Vec::with_capacity(triangles.len());
        for (e, t) in triangles.iter().enumerate() {
            if t.iter().any(|&i| i >= n) {
                return Err(Error::Degenerate(format!("triangle {e} references a missing node")));
            }
            let [x0, x1, x2] = t.map(|i| rest[i]);
            let d = [[x1[0] - x0[0], x2[0] - x0[0]], [x1[1] - x0[1], x2[1] - x0[1]]];
            let det = d[0][0] * d[1][1] - d[0][1] * d[1][0];
            if !(det > 0.0) {
                return Err(Error::Degenerate(format!("triangle {e} has non-positive rest area {:e}", 0.5 * det)));
            }
            rest_area.push(0.5 * det);
            dm_inv.push([[d[1][1] / det, -d[0][1] / det], [-d[1][0] / det, d[0][0] / det]]);
        }
        if surface.len() < 3 {
            return Err(Error::Degenerate("surface loop needs at least three vertices".into()));
        }
        let mut seen = vec![false; n];
        for &s in &surface {
            if s >= n || std::mem::replace(&mut seen[s], true) {
                return Err(Error::Degenerate(format!("surface vertex {s} is missing or repeated")));
            }
        }
        let loop_pts: Vec<[f64; 2]> = surface.iter().map(|&i| rest[i]).collect();
        if !(polygon_area(&loop_pts) > 0.0) {
            return Err(Error::Degenerate("surface loop is not counter-clockwise".into()));
        }
        Ok(Mesh { rest, triangles, surface, rest_area, dm_inv })
    }

    pub fn rest(&self) -> &[[f64; 2]] {
        &self.rest
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn surface(&self) -> &[usize] {
        &self.surface
    }

    pub fn rest_areas(&self) -> &[f64] {
        &self.rest_area
    }

    pub(crate) fn dm_inv(&self, e: usize) -> [[f64; 2]; 2] {
        self.dm_inv[e]
    }

    pub fn n_nodes(&self) -> usize {
        self.rest.len()
    }

    pub fn n_elements(&self) -> usize {
        self.triangles.len()
    }

    pub fn total_area(&self) -> f64 {
        self.rest_area.iter().sum()
    }

    /// Lumped nodal masses: a third of each incident triangle's mass.
    pub fn lumped_mass(&self, density: f64) -> Vec<f64> {
        let mut m = vec![0.0; self.n_nodes()];
        for (t, a) in self.triangles.iter().zip(&self.rest_area) {
            for &i in t {
                m[i] += density * a / 3.0;
            }
        }
        m
    }

    pub fn surface_points(&self, q: &[[f64; 2]]) -> Vec<[f64; 2]> {
        self.surface.iter().map(|&i| q[i]).collect()
    }

    /// Largest index distance between two nodes of one triangle.
    pub fn node_bandwidth(&self) -> usize {
        self.triangles
            .iter()
            .map(|t| {
                let lo = *t.iter().min().unwrap();
                let hi = *t.iter().max().unwrap();
                hi - lo
            })
            .max()
            .unwrap_or(0)
    }

    /// Serializes as the plain-text mesh format read by [`Mesh::parse`].
    pub fn to_text(&self) -> String {
        let mut s = String::from("softswim-mesh 1\n");
        let _ = writeln!(s, "nodes {}", self.rest.len());
        for p in &self.rest {
            let _ = writeln!(s, "{:?} {:?}", p[0], p[1]);
        }
        let _ = writeln!(s, "triangles {}", self.triangles.len());
        for t in &self.triangles {
            let _ = writeln!(s, "{} {} {}", t[0], t[1], t[2]);
        }
        let _ = writeln!(s, "surface {}", self.surface.len());
        for i in &self.surface {
            let _ = writeln!(s, "{i}");
        }
        s
    }

    /// Parses the text format:
    ///
    /// ```text
    /// softswim-mesh 1
    /// nodes N
    /// x y            (N lines)
    /// triangles M
    /// i j k          (M lines, counter-clockwise)
    /// surface K
    /// i              (K lines, counter-clockwise loop)
    /// ```
    ///
    /// Blank lines and text after `#` are ignored.
    pub fn parse(text: &str, origin: &Path) -> Result<Mesh> {
        let bad = |reason: String| Error::format(origin, reason);
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(n, l)| (n + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        let mut next = |what: &str| lines.next().ok_or_else(|| bad(format!("unexpected end of file, expected {what}")));
        let (n, header) = next("header")?;
        if header != "softswim-mesh 1" {
            return Err(bad(format!("line {n}: expected `softswim-mesh 1`")));
        }
        let count = |line: (usize, &str), key: &str| -> Result<usize> {
            let mut it = line.1.split_whitespace();
            match (it.next(), it.next().map(str::parse::<usize>), it.next()) {
                (Some(k), Some(Ok(c)), None) if k == key => Ok(c),
                _ => Err(bad(format!("line {}: expected `{key} <count>`", line.0))),
            }
        };
        fn numbers<T: std::str::FromStr>(line: (usize, &str), want: usize, origin: &Path) -> Result<Vec<T>> {
            let v: std::result::Result<Vec<T>, _> = line.1.split_whitespace().map(str::parse).collect();
            match v {
                Ok(v) if v.len() == want => Ok(v),
                _ => Err(Error::format(origin, format!("line {}: expected {want} numbers", line.0))),
            }
        }
        let nn = count(next("nodes")?, "nodes")?;
        let mut rest = Vec::with_capacity(nn);
        for _ in 0..nn {
            let v: Vec<f64> = numbers(next("node")?, 2, origin)?;
            rest.push([v[0], v[1]]);
        }
        let nt = count(next("triangles")?, "triangles")?;
        let mut tris = Vec::with_capacity(nt);
        for _ in 0..nt {
            let v: Vec<usize> = numbers(next("triangle")?, 3, origin)?;
            tris.push([v[0], v[1], v[2]]);
        }
        let ns = count(next("surface")?, "surface")?;
        let mut surface = Vec::with_capacity(ns);
        for _ in 0..ns {
            let v: Vec<usize> = numbers(next("surface index")?, 1, origin)?;
            surface.push(v[0]);
        }
        if let Some((n, _)) = lines.next() {
            return Err(bad(format!("line {n}: trailing content")));
        }
        Mesh::new(rest, tris, surface).map_err(|e| bad(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Mesh> {
        let text = std::fs::read_to_string(path)?;
        Mesh::parse(&text, path)
    }
}

/// Edge midpoints, outward unit normals and lengths of the surface loop at positions `q`.
///
/// Element `k` is the edge from surface vertex `k` to vertex `k+1`.
pub fn surface_geometry(q: &[[f64; 2]], mesh: &Mesh) -> Result<SurfaceGeometry> {
    let s = mesh.surface();
    let k = s.len();
    let mut g = SurfaceGeometry {
        midpoints: Vec::with_capacity(k),
        normals: Vec::with_capacity(k),
        lengths: Vec::with_capacity(k),
    };
    for e in 0..k {
        let a = q[s[e]];
        let b = q[s[(e + 1) % k]];
        let d = [b[0] - a[0], b[1] - a[1]];
        let l = d[0].hypot(d[1]);
        if !(l > 0.0) {
            return Err(Error::Degenerate(format!("surface edge {e} has zero length")));
        }
        g.midpoints.push([0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]);
        g.normals.push([d[1] / l, -d[0] / l]);
        g.lengths.push(l);
    }
    Ok(g)
}
