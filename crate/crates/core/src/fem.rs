//! Q1 reference element, Gauss quadrature, and global assembly.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{pcg_solve, CsrMatrix};
use crate::mesh::{Mesh, Point};
use crate::problems::TestProblem;

pub const MAX_GAUSS_ORDER: usize = 8;

/// Gauss–Legendre rule on `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussRule {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussRule {
    /// `order` points; exact for polynomials of degree `2·order − 1`.
    pub fn new(order: usize) -> Result<Self> {
        if order == 0 || order > MAX_GAUSS_ORDER {
            return Err(Error::InvalidParameter(format!("Gauss order must be in 1..={MAX_GAUSS_ORDER}, got {order}")));
        }
        let n = order;
        let mut points = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n {
            // Chebyshev initial guess, then Newton on P_n
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            let w = 2.0 / ((1.0 - x * x) * d * d);
            // map [-1,1] → [0,1], ascending
            points[n - 1 - i] = 0.5 * (x + 1.0);
            weights[n - 1 - i] = 0.5 * w;
        }
        Ok(Self { points, weights })
    }

    pub fn order(&self) -> usize {
        self.points.len()
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.points.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let d = n as f64 * (x * p - p0) / (x * x - 1.0);
    (p, d)
}

/// Bilinear shape functions on `[0,1]²`, nodes counter-clockwise from `(0,0)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ReferenceElement;

impl ReferenceElement {
    pub fn shape(xi: [f64; 2]) -> [f64; 4] {
        let [x, y] = xi;
        [(1.0 - x) * (1.0 - y), x * (1.0 - y), x * y, (1.0 - x) * y]
    }

    /// Gradients with respect to the reference coordinates.
    pub fn gradients(xi: [f64; 2]) -> [[f64; 2]; 4] {
        let [x, y] = xi;
        [[-(1.0 - y), -(1.0 - x)], [1.0 - y, -x], [y, x], [-y, 1.0 - x]]
    }

    pub fn mass_matrix(h: f64, rule: &GaussRule) -> [[f64; 4]; 4] {
        let mut m = [[0.0; 4]; 4];
        for_each_tensor_point(rule, |xi, w| {
            let n = Self::shape(xi);
            for a in 0..4 {
                for b in 0..4 {
                    m[a][b] += w * h * h * n[a] * n[b];
                }
            }
        });
        m
    }

    /// Stiffness for unit conductivity; independent of `h` in two dimensions.
    pub fn stiffness_matrix(rule: &GaussRule) -> [[f64; 4]; 4] {
        let mut k = [[0.0; 4]; 4];
        for_each_tensor_point(rule, |xi, w| {
            let g = Self::gradients(xi);
            for a in 0..4 {
                for b in 0..4 {
                    k[a][b] += w * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
                }
            }
        });
        k
    }
}

fn for_each_tensor_point(rule: &GaussRule, mut f: impl FnMut([f64; 2], f64)) {
    for (j, &y) in rule.points.iter().enumerate() {
        for (i, &x) in rule.points.iter().enumerate() {
            f([x, y], rule.weights[i] * rule.weights[j]);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    pub bulk_order: usize,
    pub error_order: usize,
    /// Elements touching a singular point are split into `2^k × 2^k` cells.
    pub singular_depth: u32,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self { bulk_order: 3, error_order: 5, singular_depth: 4 }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bulk_order < 2 || self.error_order < self.bulk_order || self.error_order > MAX_GAUSS_ORDER {
            return Err(Error::InvalidParameter(format!(
                "quadrature orders must satisfy 2 <= bulk ({}) <= error ({}) <= {MAX_GAUSS_ORDER}",
                self.bulk_order, self.error_order
            )));
        }
        if self.singular_depth > 8 {
            return Err(Error::InvalidParameter(format!("singular depth {} exceeds 8", self.singular_depth)));
        }
        Ok(())
    }
}

/// Quadrature over one element with optional dyadic subdivision.
///
/// Calls `f(xi, x, w)` with reference coordinates, physical point and physical weight.
pub fn element_quadrature(mesh: &Mesh, e: usize, rule: &GaussRule, depth: u32, mut f: impl FnMut([f64; 2], Point, f64)) {
    let cells = 1usize << depth;
    let s = 1.0 / cells as f64;
    let area = mesh.h * mesh.h * s * s;
    let origin = mesh.element_origin(e);
    for cj in 0..cells {
        for ci in 0..cells {
            for (j, &py) in rule.points.iter().enumerate() {
                for (i, &px) in rule.points.iter().enumerate() {
                    let xi = [(ci as f64 + px) * s, (cj as f64 + py) * s];
                    let x = [origin[0] + mesh.h * xi[0], origin[1] + mesh.h * xi[1]];
                    f(xi, x, area * rule.weights[i] * rule.weights[j]);
                }
            }
        }
    }
}

/// Elements receiving subdivided quadrature around `singular`.
pub fn singular_elements(mesh: &Mesh, singular: Option<Point>) -> BTreeSet<usize> {
    singular.map(|p| mesh.elements_touching(p).into_iter().collect()).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssembledOperators {
    pub mass: CsrMatrix,
    pub stiffness: CsrMatrix,
    pub boundary_mass: CsrMatrix,
}

/// Assembles `M`, `K` and the boundary mass; `conductivity` is sampled at element centroids.
pub fn assemble_operators(mesh: &Mesh, conductivity: impl Fn(Point) -> f64, quad: &QuadratureConfig) -> Result<AssembledOperators> {
    quad.validate()?;
    let rule = GaussRule::new(quad.bulk_order)?;
    let me = ReferenceElement::mass_matrix(mesh.h, &rule);
    let ke = ReferenceElement::stiffness_matrix(&rule);

    let n = mesh.num_nodes();
    let mut mt = Vec::with_capacity(16 * mesh.num_elements());
    let mut kt = Vec::with_capacity(16 * mesh.num_elements());
    for (e, conn) in mesh.elements.iter().enumerate() {
        let a = conductivity(mesh.element_centroid(e));
        for r in 0..4 {
            for c in 0..4 {
                mt.push((conn[r], conn[c], me[r][c]));
                kt.push((conn[r], conn[c], a * ke[r][c]));
            }
        }
    }

    let edge_rule = GaussRule::new(quad.bulk_order)?;
    let mut bt = Vec::with_capacity(4 * mesh.boundary_edges.len());
    for edge in &mesh.boundary_edges {
        let mut be = [[0.0; 2]; 2];
        for (&s, &w) in edge_rule.points.iter().zip(&edge_rule.weights) {
            let phi = [1.0 - s, s];
            for a in 0..2 {
                for b in 0..2 {
                    be[a][b] += w * edge.length * phi[a] * phi[b];
                }
            }
        }
        for a in 0..2 {
            for b in 0..2 {
                bt.push((edge.nodes[a], edge.nodes[b], be[a][b]));
            }
        }
    }

    Ok(AssembledOperators {
        mass: CsrMatrix::from_triplets(n, n, mt).into_symmetric(1e-13)?,
        stiffness: CsrMatrix::from_triplets(n, n, kt).into_symmetric(1e-13)?,
        boundary_mass: CsrMatrix::from_triplets(n, n, bt).into_symmetric(1e-13)?,
    })
}

/// `(f, φ_i)` with `order`-point Gauss, subdivided on elements touching `singular`.
pub fn load_vector(mesh: &Mesh, density: impl Fn(Point) -> f64, order: usize, singular: Option<Point>, depth: u32) -> Result<Vec<f64>> {
    let rule = GaussRule::new(order)?;
    let special = singular_elements(mesh, singular);
    let mut load = vec![0.0; mesh.num_nodes()];
    for (e, conn) in mesh.elements.iter().enumerate() {
        let d = if special.contains(&e) { depth } else { 0 };
        let mut local = [0.0; 4];
        element_quadrature(mesh, e, &rule, d, |xi, x, w| {
            let fw = density(x) * w;
            let n = ReferenceElement::shape(xi);
            for a in 0..4 {
                local[a] += fw * n[a];
            }
        });
        for a in 0..4 {
            load[conn[a]] += local[a];
        }
    }
    Ok(load)
}

/// `(∇F, ∇φ_i)` for a vector field `grad`.
pub fn gradient_load_vector(
    mesh: &Mesh,
    grad: impl Fn(Point) -> [f64; 2],
    order: usize,
    singular: Option<Point>,
    depth: u32,
) -> Result<Vec<f64>> {
    let rule = GaussRule::new(order)?;
    let special = singular_elements(mesh, singular);
    let inv_h = 1.0 / mesh.h;
    let mut load = vec![0.0; mesh.num_nodes()];
    for (e, conn) in mesh.elements.iter().enumerate() {
        let d = if special.contains(&e) { depth } else { 0 };
        let mut local = [0.0; 4];
        element_quadrature(mesh, e, &rule, d, |xi, x, w| {
            let g = grad(x);
            let dn = ReferenceElement::gradients(xi);
            for a in 0..4 {
                local[a] += w * inv_h * (g[0] * dn[a][0] + g[1] * dn[a][1]);
            }
        });
        for a in 0..4 {
            load[conn[a]] += local[a];
        }
    }
    Ok(load)
}

/// `(g, φ_i)_∂` with `order`-point Gauss per boundary edge; `g` receives the outward normal.
pub fn boundary_load_vector(mesh: &Mesh, g: impl Fn(Point, [f64; 2]) -> f64, order: usize) -> Result<Vec<f64>> {
    let rule = GaussRule::new(order)?;
    let mut load = vec![0.0; mesh.num_nodes()];
    for edge in &mesh.boundary_edges {
        for (&s, &w) in rule.points.iter().zip(&rule.weights) {
            let gw = g(edge.point(mesh, s), edge.normal) * w * edge.length;
            load[edge.nodes[0]] += gw * (1.0 - s);
            load[edge.nodes[1]] += gw * s;
        }
    }
    Ok(load)
}

/// Adds `weight · φ_i(p)` to `load`.
pub fn add_point_load(mesh: &Mesh, p: Point, weight: f64, load: &mut [f64]) -> Result<()> {
    if p[0].abs() >= 1.0 || p[1].abs() >= 1.0 {
        return Err(Error::InvalidParameter(format!("point source ({}, {}) must lie inside the domain", p[0], p[1])));
    }
    let (e, xi) = mesh.locate_point(p)?;
    let n = ReferenceElement::shape(xi);
    for (a, &node) in mesh.elements[e].iter().enumerate() {
        load[node] += weight * n[a];
    }
    Ok(())
}

/// `F_i(t) = ⟨f(t), φ_i⟩ + ⟨g(t), φ_i⟩_∂`, assembled directly.
pub fn assemble_rhs(mesh: &Mesh, problem: &TestProblem, t: f64, quad: &QuadratureConfig) -> Result<Vec<f64>> {
    quad.validate()?;
    let singular = crate::problems::ExactField::singular_point(problem);
    let mut load = load_vector(mesh, |x| problem.forcing_density(x, t), quad.error_order, singular, quad.singular_depth)?;
    let boundary = boundary_load_vector(mesh, |x, n| problem.neumann(x, n, t), quad.error_order)?;
    for (l, b) in load.iter_mut().zip(&boundary) {
        *l += b;
    }
    if let Some((p, w)) = problem.point_source() {
        add_point_load(mesh, p, w * problem.time_factor(t), &mut load)?;
    }
    Ok(load)
}

/// Time-separated load: `F(t) = c′(t) · profile + c(t) · steady`.
///
/// Valid because every test problem has the form `ν = c(t) N(x)` with
/// time-independent conductivity.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparableLoad {
    /// `(N, φ_i)`.
    pub profile: Vec<f64>,
    /// Steady forcing, point source and conormal boundary data of `N`.
    pub steady: Vec<f64>,
}

impl SeparableLoad {
    pub fn new(mesh: &Mesh, problem: &TestProblem, quad: &QuadratureConfig) -> Result<Self> {
        quad.validate()?;
        let singular = crate::problems::ExactField::singular_point(problem);
        let profile = load_vector(mesh, |x| problem.profile(x), quad.error_order, singular, quad.singular_depth)?;
        let mut steady = load_vector(mesh, |x| problem.steady_forcing(x), quad.error_order, singular, quad.singular_depth)?;
        let boundary = boundary_load_vector(mesh, |x, n| problem.neumann_profile(x, n), quad.error_order)?;
        for (s, b) in steady.iter_mut().zip(&boundary) {
            *s += b;
        }
        if let Some((p, w)) = problem.point_source() {
            add_point_load(mesh, p, w, &mut steady)?;
        }
        Ok(Self { profile, steady })
    }

    pub fn at(&self, problem: &TestProblem, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.profile.len()];
        self.accumulate(problem, t, 1.0, &mut out);
        out
    }

    /// `out += scale · F(t)`.
    pub fn accumulate(&self, problem: &TestProblem, t: f64, scale: f64, out: &mut [f64]) {
        let a = scale * problem.time_factor_rate(t);
        let b = scale * problem.time_factor(t);
        for ((o, p), s) in out.iter_mut().zip(&self.profile).zip(&self.steady) {
            *o += a * p + b * s;
        }
    }
}

/// Discrete L² projection: solves `M c = ((func, φ_i))_i`.
pub fn l2_project(
    mass: &CsrMatrix,
    mesh: &Mesh,
    func: impl Fn(Point) -> f64,
    quad: &QuadratureConfig,
    singular: Option<Point>,
) -> Result<Vec<f64>> {
    quad.validate()?;
    let b = load_vector(mesh, func, quad.error_order, singular, quad.singular_depth)?;
    solve_mass(mass, &b)
}

/// Solves `M x = b` by Jacobi-preconditioned CG (the mass matrix is uniformly well conditioned).
pub fn solve_mass(mass: &CsrMatrix, b: &[f64]) -> Result<Vec<f64>> {
    if b.len() != mass.nrows() {
        return Err(Error::DimensionMismatch { expected: mass.nrows(), got: b.len() });
    }
    let diag = mass.diag();
    let out = pcg_solve(|x, y| mass.mul_vec_into(x, y), &diag, b, 1e-14, 10 * mass.nrows().max(10))?;
    Ok(out.x)
}

/// Nodal interpolant.
pub fn interpolate(mesh: &Mesh, func: impl Fn(Point) -> f64) -> Vec<f64> {
    mesh.nodes.iter().map(|&p| func(p)).collect()
}

/// Value and physical gradient of the discrete function `u` on element `e` at `xi`.
pub fn evaluate_fe_local(mesh: &Mesh, u: &[f64], e: usize, xi: [f64; 2]) -> (f64, [f64; 2]) {
    let conn = &mesh.elements[e];
    let n = ReferenceElement::shape(xi);
    let dn = ReferenceElement::gradients(xi);
    let mut v = 0.0;
    let mut g = [0.0; 2];
    for a in 0..4 {
        let ua = u[conn[a]];
        v += ua * n[a];
        g[0] += ua * dn[a][0];
        g[1] += ua * dn[a][1];
    }
    (v, [g[0] / mesh.h, g[1] / mesh.h])
}

/// Value of the discrete function `u` at a physical point.
pub fn evaluate_fe(mesh: &Mesh, u: &[f64], p: Point) -> Result<f64> {
    let (e, xi) = mesh.locate_point(p)?;
    Ok(evaluate_fe_local(mesh, u, e, xi).0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{make_problem, ProblemKind};
    use approx::assert_relative_eq;

    #[test]
    fn gauss_exactness() {
        for q in 1..=MAX_GAUSS_ORDER {
            let rule = GaussRule::new(q).unwrap();
            assert_relative_eq!(rule.weights.iter().sum::<f64>(), 1.0, epsilon = 1e-14);
            for deg in 0..2 * q {
                let exact = 1.0 / (deg as f64 + 1.0);
                assert_relative_eq!(rule.integrate(|x| x.powi(deg as i32)), exact, epsilon = 1e-14);
            }
            // first inexact degree
            let deg = 2 * q;
            assert!((rule.integrate(|x| x.powi(deg as i32)) - 1.0 / (deg as f64 + 1.0)).abs() > 1e-12);
        }
        assert!(GaussRule::new(0).is_err());
        assert!(GaussRule::new(9).is_err());
    }

    #[test]
    fn element_matrices_match_closed_form() {
        let rule = GaussRule::new(3).unwrap();
        let h = 0.125;
        let m = ReferenceElement::mass_matrix(h, &rule);
        let k = ReferenceElement::stiffness_matrix(&rule);
        let mref = [[4.0, 2.0, 1.0, 2.0], [2.0, 4.0, 2.0, 1.0], [1.0, 2.0, 4.0, 2.0], [2.0, 1.0, 2.0, 4.0]];
        let kref = [[4.0, -1.0, -2.0, -1.0], [-1.0, 4.0, -1.0, -2.0], [-2.0, -1.0, 4.0, -1.0], [-1.0, -2.0, -1.0, 4.0]];
        for a in 0..4 {
            for b in 0..4 {
                assert_relative_eq!(m[a][b], h * h / 36.0 * mref[a][b], epsilon = 1e-16);
                assert_relative_eq!(k[a][b], kref[a][b] / 6.0, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn operator_invariants() {
        let mesh = Mesh::new(3).unwrap();
        let quad = QuadratureConfig::default();
        let ops = assemble_operators(&mesh, |_| 1.0, &quad).unwrap();
        let ones = vec![1.0; mesh.num_nodes()];
        assert_relative_eq!(ops.mass.quad_form(&ones), 4.0, epsilon = 1e-13);
        assert!(ops.stiffness.mul_vec(&ones).iter().all(|v| v.abs() < 1e-12));
        assert_relative_eq!(ops.boundary_mass.quad_form(&ones), 8.0, epsilon = 1e-13);

        let scaled = assemble_operators(&mesh, |_| 3.5, &quad).unwrap();
        for (a, b) in scaled.stiffness.values().iter().zip(ops.stiffness.values()) {
            assert_relative_eq!(*a, 3.5 * b, epsilon = 1e-14);
        }
    }

    #[test]
    fn rhs_examples() {
        let quad = QuadratureConfig::default();
        let mesh = Mesh::new(3).unwrap();

        let smooth = make_problem(ProblemKind::Smooth, 0.0).unwrap();
        let domain = load_vector(&mesh, |x| smooth.forcing_density(x, 0.0), quad.error_order, None, 0).unwrap();
        assert_relative_eq!(domain.iter().sum::<f64>(), -16.0, epsilon = 1e-12);

        let dirac = make_problem(ProblemKind::Dirac, PI).unwrap();
        let mut point = vec![0.0; mesh.num_nodes()];
        add_point_load(&mesh, dirac.x0, dirac.time_factor(0.0), &mut point).unwrap();
        assert_relative_eq!(point.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
        assert!(add_point_load(&mesh, [1.0, 0.0], 1.0, &mut point).is_err());

        let zero = boundary_load_vector(&mesh, |_, _| 0.0, 5).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn separable_load_matches_direct_assembly() {
        let quad = QuadratureConfig::default();
        let mesh = Mesh::new(3).unwrap();
        for kind in ProblemKind::ALL {
            let p = make_problem(kind, PI).unwrap();
            let sep = SeparableLoad::new(&mesh, &p, &quad).unwrap();
            for t in [0.0, 0.37, 1.5] {
                let direct = assemble_rhs(&mesh, &p, t, &quad).unwrap();
                let fast = sep.at(&p, t);
                for (a, b) in direct.iter().zip(&fast) {
                    assert!((a - b).abs() < 1e-13, "{kind}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn projection_of_constant_and_coarse_hat() {
        let quad = QuadratureConfig::default();
        let mesh = Mesh::new(3).unwrap();
        let ops = assemble_operators(&mesh, |_| 1.0, &quad).unwrap();
        let c = l2_project(&ops.mass, &mesh, |_| 1.0, &quad, None).unwrap();
        assert!(c.iter().all(|v| (v - 1.0).abs() < 1e-12));

        // coarse hat at the node (0,0) of level 2 is bilinear on each level-2 element
        let hat = |x: Point| ((1.0 - x[0].abs() / 0.25).max(0.0)) * ((1.0 - x[1].abs() / 0.25).max(0.0));
        let c = l2_project(&ops.mass, &mesh, hat, &quad, None).unwrap();
        let nodal = interpolate(&mesh, hat);
        for (a, b) in c.iter().zip(&nodal) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn evaluate_fe_reproduces_bilinear() {
        let mesh = Mesh::new(2).unwrap();
        let f = |x: Point| 1.0 + 2.0 * x[0] - x[1] + 0.5 * x[0] * x[1];
        let u = interpolate(&mesh, f);
        for p in [[0.1, 0.2], [-0.93, 0.77], [1.0, 1.0]] {
            assert_relative_eq!(evaluate_fe(&mesh, &u, p).unwrap(), f(p), epsilon = 1e-14);
        }
    }
}
