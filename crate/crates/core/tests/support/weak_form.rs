//! Weak-solution oracle for the manufactured problems.
//!
//! The residual `⟨∂_t ν, v⟩ + a(ν, v) − ⟨f, v⟩ − ⟨g, v⟩_∂` is integrated with
//! quadrature written here: the square is cut into eight triangles with apex at
//! the singular point, each triangle is Duffy-collapsed onto the unit square and
//! the radial variable is graded (`u = w⁴`) so the integrands become smooth.

#![allow(dead_code)]

use std::f64::consts::PI;

use nudgefem::problems::{ExactField, ProblemKind, TestProblem};

pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        // map to [0, 1]
        out.push((0.5 * (1.0 - x), 1.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

pub struct TestFunction {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl TestFunction {
    pub fn value(&self, x: [f64; 2]) -> f64 {
        (self.a * x[0] + self.b * x[1] + self.c).cos()
    }

    pub fn gradient(&self, x: [f64; 2]) -> [f64; 2] {
        let s = -(self.a * x[0] + self.b * x[1] + self.c).sin();
        [self.a * s, self.b * s]
    }
}

/// Exact solution written out independently of the library for the two closed-form problems.
pub fn closed_form(problem: &TestProblem, x: [f64; 2], t: f64) -> Option<(f64, [f64; 2])> {
    let w = problem.omega;
    let d = [x[0] - problem.x0[0], x[1] - problem.x0[1]];
    let r2 = d[0] * d[0] + d[1] * d[1];
    match problem.kind {
        ProblemKind::Smooth => Some((-w * (w * t).sin() * r2, [2.0 * (w * t).cos() * d[0], 2.0 * (w * t).cos() * d[1]])),
        ProblemKind::Dirac => {
            let c = (w * t).cos() / (2.0 * PI);
            Some((-w * (w * t).sin() * r2.ln() / (4.0 * PI), [c * d[0] / r2, c * d[1] / r2]))
        }
        ProblemKind::Kellogg => None,
    }
}

pub fn weak_residual(problem: &TestProblem, v: &TestFunction, t: f64) -> f64 {
    let rule = gauss_legendre(24);
    let apex = problem.x0;
    let ring = [[-1.0, -1.0], [0.0, -1.0], [1.0, -1.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [-1.0, 1.0], [-1.0, 0.0]];

    let mut bulk = 0.0;
    for k in 0..8 {
        let p1 = ring[k];
        let p2 = ring[(k + 1) % 8];
        let e1 = [p1[0] - apex[0], p1[1] - apex[1]];
        let e2 = [p2[0] - p1[0], p2[1] - p1[1]];
        let det = (e1[0] * e2[1] - e1[1] * e2[0]).abs();
        for &(wq, ww) in &rule {
            let u = wq.powi(4);
            let du = 4.0 * wq.powi(3);
            for &(s, ws) in &rule {
                let x = [apex[0] + u * (e1[0] + s * e2[0]), apex[1] + u * (e1[1] + s * e2[1])];
                let jac = u * det * du * ww * ws;
                let (dt_nu, grad) = match closed_form(problem, x, t) {
                    Some(pair) => pair,
                    None => (problem.time_factor_rate(t) * problem.profile(x), problem.gradient(x, t)),
                };
                let gv = v.gradient(x);
                let a = problem.conductivity(x);
                let f = problem.forcing_density(x, t);
                bulk += jac * (dt_nu * v.value(x) + a * (grad[0] * gv[0] + grad[1] * gv[1]) - f * v.value(x));
            }
        }
    }

    let mut boundary = 0.0;
    for k in 0..8 {
        let p1 = ring[k];
        let p2 = ring[(k + 1) % 8];
        let len = ((p2[0] - p1[0]).powi(2) + (p2[1] - p1[1]).powi(2)).sqrt();
        let n = if p1[1] == -1.0 && p2[1] == -1.0 {
            [0.0, -1.0]
        } else if p1[0] == 1.0 && p2[0] == 1.0 {
            [1.0, 0.0]
        } else if p1[1] == 1.0 && p2[1] == 1.0 {
            [0.0, 1.0]
        } else {
            [-1.0, 0.0]
        };
        for &(s, ws) in &rule {
            let x = [p1[0] + s * (p2[0] - p1[0]), p1[1] + s * (p2[1] - p1[1])];
            boundary += len * ws * problem.neumann(x, n, t) * v.value(x);
        }
    }

    let point = problem.point_source().map_or(0.0, |(p, w)| w * problem.time_factor(t) * v.value(p));
    bulk - boundary - point
}

pub fn boundary_flux(problem: &TestProblem, t: f64) -> f64 {
    let rule = gauss_legendre(24);
    let sides: [([f64; 2], [f64; 2], [f64; 2]); 4] = [
        ([-1.0, -1.0], [1.0, -1.0], [0.0, -1.0]),
        ([1.0, -1.0], [1.0, 1.0], [1.0, 0.0]),
        ([1.0, 1.0], [-1.0, 1.0], [0.0, 1.0]),
        ([-1.0, 1.0], [-1.0, -1.0], [-1.0, 0.0]),
    ];
    let mut total = 0.0;
    for (a, b, n) in sides {
        // halves, so the quadrant kinks of the Kellogg data fall on cell ends
        for half in 0..2 {
            let (s0, s1) = (0.5 * half as f64, 0.5 * (half + 1) as f64);
            for &(s, w) in &rule {
                let r = s0 + (s1 - s0) * s;
                let x = [a[0] + r * (b[0] - a[0]), a[1] + r * (b[1] - a[1])];
                total += 2.0 * (s1 - s0) * w * problem.neumann(x, n, t);
            }
        }
    }
    total
}
