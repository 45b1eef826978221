//! Uniform quadrilateral meshes of `[-1,1]²`, nesting maps between dyadic
//! levels, and point location.

use serde::Serialize;

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Which side of the reference square a boundary edge lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Face {
    Bottom,
    Right,
    Top,
    Left,
}

impl Face {
    pub fn normal(self) -> [f64; 2] {
        match self {
            Face::Bottom => [0.0, -1.0],
            Face::Right => [1.0, 0.0],
            Face::Top => [0.0, 1.0],
            Face::Left => [-1.0, 0.0],
        }
    }

    /// Local node indices (counter-clockwise element numbering) spanning the face.
    pub fn local_nodes(self) -> [usize; 2] {
        match self {
            Face::Bottom => [0, 1],
            Face::Right => [1, 2],
            Face::Top => [2, 3],
            Face::Left => [3, 0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryEdge {
    pub element: usize,
    pub face: Face,
    pub nodes: [usize; 2],
    pub normal: [f64; 2],
    pub length: f64,
}

impl BoundaryEdge {
    /// Point at parameter `s ∈ [0,1]` along the edge, from `nodes[0]` to `nodes[1]`.
    pub fn point(&self, mesh: &Mesh, s: f64) -> Point {
        let a = mesh.nodes[self.nodes[0]];
        let b = mesh.nodes[self.nodes[1]];
        [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])]
    }
}

/// Uniform grid of `[-1,1]²` with `2^{ℓ+1}` elements per side and mesh size `h = 2^{-ℓ}`.
///
/// Nodes are numbered lexicographically with x running fastest; elements list their
/// nodes counter-clockwise starting at the lower-left corner. Element `(i, j)` (column,
/// row) has id `j·m + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub level: u32,
    pub h: f64,
    pub nodes: Vec<Point>,
    pub elements: Vec<[usize; 4]>,
    pub boundary_edges: Vec<BoundaryEdge>,
}

pub const MIN_LEVEL: u32 = 2;
/// Guard against accidental huge allocations.
pub const MAX_LEVEL: u32 = 12;

impl Mesh {
    pub fn new(level: u32) -> Result<Self> {
        if level < MIN_LEVEL || level > MAX_LEVEL {
            return Err(Error::InvalidLevel(level));
        }
        let m = 1usize << (level + 1);
        let h = 2.0 / m as f64;
        let np = m + 1;
        let nodes = (0..np)
            .flat_map(|j| (0..np).map(move |i| [-1.0 + i as f64 * h, -1.0 + j as f64 * h]))
            .collect();
        let elements = (0..m)
            .flat_map(|j| {
                (0..m).map(move |i| {
                    let ll = j * np + i;
                    [ll, ll + 1, ll + np + 1, ll + np]
                })
            })
            .collect::<Vec<_>>();

        let mut boundary_edges = Vec::with_capacity(4 * m);
        let mut push = |e: usize, face: Face, elements: &[[usize; 4]]| {
            let [a, b] = face.local_nodes();
            boundary_edges.push(BoundaryEdge {
                element: e,
                face,
                nodes: [elements[e][a], elements[e][b]],
                normal: face.normal(),
                length: h,
            });
        };
        for i in 0..m {
            push(i, Face::Bottom, &elements);
        }
        for j in 0..m {
            push(j * m + m - 1, Face::Right, &elements);
        }
        for i in (0..m).rev() {
            push((m - 1) * m + i, Face::Top, &elements);
        }
        for j in (0..m).rev() {
            push(j * m, Face::Left, &elements);
        }

        Ok(Self { level, h, nodes, elements, boundary_edges })
    }

    /// Elements per side.
    pub fn elements_per_side(&self) -> usize {
        1usize << (self.level + 1)
    }

    pub fn nodes_per_side(&self) -> usize {
        self.elements_per_side() + 1
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn node_index(&self, i: usize, j: usize) -> usize {
        j * self.nodes_per_side() + i
    }

    pub fn element_index(&self, i: usize, j: usize) -> usize {
        j * self.elements_per_side() + i
    }

    /// (column, row) of an element.
    pub fn element_ij(&self, e: usize) -> (usize, usize) {
        let m = self.elements_per_side();
        (e % m, e / m)
    }

    /// Lower-left corner of an element.
    pub fn element_origin(&self, e: usize) -> Point {
        self.nodes[self.elements[e][0]]
    }

    pub fn element_centroid(&self, e: usize) -> Point {
        let o = self.element_origin(e);
        [o[0] + 0.5 * self.h, o[1] + 0.5 * self.h]
    }

    /// Maps reference coordinates in `[0,1]²` to the physical element.
    pub fn map_to_physical(&self, e: usize, xi: [f64; 2]) -> Point {
        let o = self.element_origin(e);
        [o[0] + xi[0] * self.h, o[1] + xi[1] * self.h]
    }

    /// Finds the element containing `p` and its local coordinates. Points on shared
    /// edges or nodes go to the adjacent element with the lowest id.
    pub fn locate_point(&self, p: Point) -> Result<(usize, [f64; 2])> {
        if !(p[0] >= -1.0 && p[0] <= 1.0 && p[1] >= -1.0 && p[1] <= 1.0) {
            return Err(Error::PointOutside { x: p[0], y: p[1] });
        }
        let m = self.elements_per_side();
        let locate = |x: f64| -> (usize, f64) {
            let s = (x + 1.0) / self.h;
            let f = s.floor();
            let mut k = f as usize;
            // on a grid line the lower-index neighbour wins
            if s == f && k > 0 {
                k -= 1;
            }
            let k = k.min(m - 1);
            (k, s - k as f64)
        };
        let (i, xi) = locate(p[0]);
        let (j, eta) = locate(p[1]);
        Ok((self.element_index(i, j), [xi, eta]))
    }

    /// Elements whose closure contains `p` (one to four of them).
    pub fn elements_touching(&self, p: Point) -> Vec<usize> {
        let m = self.elements_per_side() as i64;
        let candidates = |x: f64| -> Vec<i64> {
            let s = (x + 1.0) / self.h;
            let f = s.floor();
            let k = f as i64;
            if s == f {
                vec![k - 1, k]
            } else {
                vec![k]
            }
        };
        let mut out = Vec::new();
        for j in candidates(p[1]) {
            for i in candidates(p[0]) {
                if (0..m).contains(&i) && (0..m).contains(&j) {
                    out.push(self.element_index(i as usize, j as usize));
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// Node permutation induced by the reflection `(x, y) ↦ (y, x)`.
    pub fn diagonal_reflection(&self) -> Vec<usize> {
        let np = self.nodes_per_side();
        (0..self.num_nodes()).map(|k| (k % np) * np + k / np).collect()
    }
}

/// Maps every fine element to the coarse element containing it.
///
/// Coarse local coordinates are `offset[e] + scale · ξ_fine`.
#[derive(Debug, Clone, PartialEq)]
pub struct NestingMap {
    pub coarse_level: u32,
    pub fine_level: u32,
    pub parent: Vec<usize>,
    pub offset: Vec<[f64; 2]>,
    pub scale: f64,
}

impl NestingMap {
    pub fn to_coarse_local(&self, fine_element: usize, xi: [f64; 2]) -> [f64; 2] {
        let o = self.offset[fine_element];
        [o[0] + self.scale * xi[0], o[1] + self.scale * xi[1]]
    }

    /// Fine elements grouped by coarse parent, in increasing fine id.
    pub fn children(&self, num_coarse: usize) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); num_coarse];
        for (e, &p) in self.parent.iter().enumerate() {
            out[p].push(e);
        }
        out
    }
}

pub fn build_nesting(coarse: &Mesh, fine: &Mesh) -> Result<NestingMap> {
    if fine.level < coarse.level {
        return Err(Error::NotNested { coarse: coarse.level, fine: fine.level });
    }
    let shift = fine.level - coarse.level;
    let ratio = 1usize << shift;
    let scale = 1.0 / ratio as f64;
    let mut parent = Vec::with_capacity(fine.num_elements());
    let mut offset = Vec::with_capacity(fine.num_elements());
    for e in 0..fine.num_elements() {
        let (i, j) = fine.element_ij(e);
        parent.push(coarse.element_index(i / ratio, j / ratio));
        offset.push([(i % ratio) as f64 * scale, (j % ratio) as f64 * scale]);
    }
    Ok(NestingMap { coarse_level: coarse.level, fine_level: fine.level, parent, offset, scale })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn level_two_counts() {
        let m = Mesh::new(2).unwrap();
        assert_eq!(m.num_nodes(), 81);
        assert_eq!(m.num_elements(), 64);
        assert_eq!(m.boundary_edges.len(), 32);
        assert_eq!(m.h, 0.25);
    }

    #[test]
    fn level_seven_counts() {
        let m = Mesh::new(7).unwrap();
        assert_eq!(m.num_nodes(), 66049);
        assert_eq!(m.h, 2f64.powi(-7));
    }

    #[test]
    fn rejects_level_one() {
        assert_eq!(Mesh::new(1), Err(Error::InvalidLevel(1)));
    }

    #[test]
    fn counts_and_normals_at_all_levels() {
        for l in 2..=6 {
            let m = Mesh::new(l).unwrap();
            let k = 1usize << (l + 1);
            assert_eq!(m.num_elements(), k * k);
            assert_eq!(m.num_nodes(), (k + 1) * (k + 1));
            assert_eq!(m.boundary_edges.len(), 4 * k);
            let area: f64 = (0..m.num_elements()).map(|_| m.h * m.h).sum();
            assert!((area - 4.0).abs() <= 4.0 * 1e-13);
            for be in &m.boundary_edges {
                let a = m.nodes[be.nodes[0]];
                let b = m.nodes[be.nodes[1]];
                let mid = [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];
                // normal points out of the square
                let out = [mid[0] + 0.1 * be.normal[0], mid[1] + 0.1 * be.normal[1]];
                assert!(out[0].abs() > 1.0 || out[1].abs() > 1.0);
                assert!(be.normal.iter().filter(|v| v.abs() == 1.0).count() == 1);
                assert_eq!(be.length, m.h);
            }
        }
    }

    #[test]
    fn axes_are_grid_lines() {
        let m = Mesh::new(3).unwrap();
        let np = m.nodes_per_side();
        let mid = np / 2;
        assert_eq!(m.nodes[m.node_index(mid, 0)][0], 0.0);
        assert_eq!(m.nodes[m.node_index(0, mid)][1], 0.0);
    }

    #[test]
    fn reflection_maps_mesh_onto_itself() {
        let m = Mesh::new(3).unwrap();
        let perm = m.diagonal_reflection();
        for (k, &p) in perm.iter().enumerate() {
            assert_eq!(m.nodes[p], [m.nodes[k][1], m.nodes[k][0]]);
        }
    }

    #[test]
    fn locate_examples() {
        let m = Mesh::new(2).unwrap();
        let (e, xi) = m.locate_point([1.0 / 3.0, 1.0 / 3.0]).unwrap();
        assert_eq!(m.element_ij(e), (5, 5));
        assert!((xi[0] - 1.0 / 3.0).abs() < 1e-14 && (xi[1] - 1.0 / 3.0).abs() < 1e-14);

        assert_eq!(m.locate_point([-1.0, -1.0]).unwrap(), (0, [0.0, 0.0]));
        let (e, xi) = m.locate_point([0.0, 0.0]).unwrap();
        assert_eq!(e, *m.elements_touching([0.0, 0.0]).iter().min().unwrap());
        assert_eq!(xi, [1.0, 1.0]);
        assert_eq!(m.locate_point([1.0, 1.0]).unwrap(), (63, [1.0, 1.0]));
        assert!(matches!(m.locate_point([1.5, 0.0]), Err(Error::PointOutside { .. })));
    }

    #[test]
    fn locate_inverts_element_map() {
        let m = Mesh::new(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let e = rng.random_range(0..m.num_elements());
            let xi = [rng.random_range(0.01..0.99), rng.random_range(0.01..0.99)];
            let p = m.map_to_physical(e, xi);
            let (e2, xi2) = m.locate_point(p).unwrap();
            assert_eq!(e, e2);
            assert!((xi[0] - xi2[0]).abs() < 1e-12 && (xi[1] - xi2[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn nesting_maps() {
        let c = Mesh::new(2).unwrap();
        let f = Mesh::new(3).unwrap();
        let nm = build_nesting(&c, &f).unwrap();
        assert!(nm.children(c.num_elements()).iter().all(|ch| ch.len() == 4));
        for e in 0..f.num_elements() {
            let (i, j) = f.element_ij(e);
            assert_eq!(nm.parent[e], c.element_index(i / 2, j / 2));
            for xi in [[0.0, 0.0], [1.0, 0.3], [0.25, 1.0]] {
                let pf = f.map_to_physical(e, xi);
                let pc = c.map_to_physical(nm.parent[e], nm.to_coarse_local(e, xi));
                assert!((pf[0] - pc[0]).abs() < 1e-15 && (pf[1] - pc[1]).abs() < 1e-15);
            }
        }
        let id = build_nesting(&c, &c).unwrap();
        assert!(id.parent.iter().enumerate().all(|(e, &p)| e == p));
        assert!(id.offset.iter().all(|o| *o == [0.0, 0.0]));
        assert_eq!(build_nesting(&f, &c), Err(Error::NotNested { coarse: 3, fine: 2 }));
    }
}
