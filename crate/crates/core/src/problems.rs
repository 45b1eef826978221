//! Manufactured test problems on `[-1,1]²`: a smooth quadratic, a logarithmic
//! point-source solution, and the Kellogg checkerboard interface problem.
//!
//! Every exact solution separates as `ν(x, t) = cos(ωt) · N(x)`; the forcing is
//! `f = ∂_t ν − div(A∇ν)` and the Neumann data is the conormal derivative
//! `g = (A∇ν)·n`.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::Point;

pub const FINAL_TIME: f64 = 3.0;
pub const KELLOGG_ALPHA: f64 = 0.25;
pub const KELLOGG_B: f64 = 25.27414236908818;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Smooth,
    Dirac,
    Kellogg,
}

impl ProblemKind {
    pub const ALL: [ProblemKind; 3] = [ProblemKind::Smooth, ProblemKind::Dirac, ProblemKind::Kellogg];

    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::Smooth => "smooth",
            ProblemKind::Dirac => "dirac",
            ProblemKind::Kellogg => "kellogg",
        }
    }
}

impl std::str::FromStr for ProblemKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "smooth" => Ok(ProblemKind::Smooth),
            "dirac" => Ok(ProblemKind::Dirac),
            "kellogg" => Ok(ProblemKind::Kellogg),
            other => Err(Error::InvalidParameter(format!("unknown problem '{other}'"))),
        }
    }
}

impl std::fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A scalar field that can be sampled in space and time.
pub trait ExactField {
    fn value(&self, x: Point, t: f64) -> f64;
    fn gradient(&self, x: Point, t: f64) -> [f64; 2];
    /// Point where the field or its gradient is singular; quadrature refines around it.
    fn singular_point(&self) -> Option<Point> {
        None
    }
}

/// Angular factor `μ(θ)` of the Kellogg solution `N = ρ^α μ(θ)`.
///
/// On quadrant `q` (θ ∈ [qπ/2, (q+1)π/2]) the function is
/// `amplitude[q] · cos(α (θ − shift[q]))`, with
///
/// ```text
/// shift     = [π/2 − ρ,        π − σ,   π + ρ,   3π/2 + σ]
/// amplitude = [cos((π/2−σ)α),  cos(ρα), cos(σα), cos((π/2−ρ)α)]
/// ```
///
/// which is continuous at the four kinks by construction. The conductivity is `b`
/// on the first and third quadrants and 1 elsewhere; `(ρ, σ)` are fixed by
/// continuity of the angular flux `coefficient · μ′` at the kinks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KelloggAngular {
    pub alpha: f64,
    pub b: f64,
    pub rho: f64,
    pub sigma: f64,
}

impl KelloggAngular {
    pub fn from_parameters(alpha: f64, b: f64, rho: f64, sigma: f64) -> Self {
        Self { alpha, b, rho, sigma }
    }

    /// Solves the interface system for `(ρ, σ)` given `(α, b)`.
    ///
    /// `ρ` is held at `π/4` first; if that cannot drive the flux residual below
    /// `1e-12` it is released and both parameters are solved for.
    pub fn solve(alpha: f64, b: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 2.0) || !(b > 0.0) {
            return Err(Error::InvalidParameter(format!("Kellogg parameters out of range: alpha={alpha}, b={b}")));
        }
        // midpoint of the admissible interval max(0, π−πα) ≤ −2ασ ≤ min(π, 2π−πα)
        let lo = (PI - PI * alpha).max(0.0);
        let hi = PI.min(2.0 * PI - PI * alpha);
        let sigma0 = -(lo + hi) / (4.0 * alpha);

        match newton(alpha, b, FRAC_PI_4, sigma0, false) {
            Ok(sol) => Ok(sol),
            Err(_) => newton(alpha, b, FRAC_PI_4, sigma0, true),
        }
    }

    pub fn shifts(&self) -> [f64; 4] {
        [FRAC_PI_2 - self.rho, PI - self.sigma, PI + self.rho, 1.5 * PI + self.sigma]
    }

    pub fn amplitudes(&self) -> [f64; 4] {
        let a = self.alpha;
        [
            ((FRAC_PI_2 - self.sigma) * a).cos(),
            (self.rho * a).cos(),
            (self.sigma * a).cos(),
            ((FRAC_PI_2 - self.rho) * a).cos(),
        ]
    }

    /// Conductivity on quadrant `q`.
    pub fn coefficient(&self, q: usize) -> f64 {
        if q % 2 == 0 {
            self.b
        } else {
            1.0
        }
    }

    fn piece(theta: f64) -> usize {
        ((theta / FRAC_PI_2).floor().max(0.0) as usize).min(3)
    }

    fn piece_value(&self, q: usize, theta: f64) -> f64 {
        self.amplitudes()[q] * (self.alpha * (theta - self.shifts()[q])).cos()
    }

    fn piece_derivative(&self, q: usize, theta: f64) -> f64 {
        -self.alpha * self.amplitudes()[q] * (self.alpha * (theta - self.shifts()[q])).sin()
    }

    /// `μ(θ)` for θ in `[0, 2π)`.
    pub fn value(&self, theta: f64) -> f64 {
        self.piece_value(Self::piece(theta), theta)
    }

    pub fn derivative(&self, theta: f64) -> f64 {
        self.piece_derivative(Self::piece(theta), theta)
    }

    /// Jumps of `μ` at θ = 0, π/2, π, 3π/2.
    pub fn continuity_residuals(&self) -> [f64; 4] {
        std::array::from_fn(|k| {
            let theta = k as f64 * FRAC_PI_2;
            let left = (k + 3) % 4;
            let theta_left = if k == 0 { 2.0 * PI } else { theta };
            self.piece_value(left, theta_left) - self.piece_value(k, theta)
        })
    }

    /// Jumps of the angular flux `coefficient · μ′` at θ = 0, π/2, π, 3π/2.
    pub fn flux_residuals(&self) -> [f64; 4] {
        std::array::from_fn(|k| {
            let theta = k as f64 * FRAC_PI_2;
            let left = (k + 3) % 4;
            let theta_left = if k == 0 { 2.0 * PI } else { theta };
            self.coefficient(left) * self.piece_derivative(left, theta_left)
                - self.coefficient(k) * self.piece_derivative(k, theta)
        })
    }

    /// `∫₀^{2π} μ(θ) dθ`, integrated piecewise in closed form.
    pub fn angular_integral(&self) -> f64 {
        let (amp, shift) = (self.amplitudes(), self.shifts());
        (0..4)
            .map(|q| {
                let (a, b) = (q as f64 * FRAC_PI_2, (q + 1) as f64 * FRAC_PI_2);
                amp[q] / self.alpha * ((self.alpha * (b - shift[q])).sin() - (self.alpha * (a - shift[q])).sin())
            })
            .sum()
    }

    /// The coefficient ratio implied by `(α, ρ, σ)` through the flux condition at θ = π/2.
    pub fn derived_b(&self) -> f64 {
        -((FRAC_PI_2 - self.sigma) * self.alpha).tan() / (self.rho * self.alpha).tan()
    }

    /// `N(ρ, θ) = ρ^α μ(θ)`.
    pub fn profile(&self, x: Point) -> f64 {
        let r = x[0].hypot(x[1]);
        if r == 0.0 {
            return 0.0;
        }
        r.powf(self.alpha) * self.value(polar_angle(x))
    }

    pub fn profile_gradient(&self, x: Point) -> [f64; 2] {
        let r = x[0].hypot(x[1]);
        let theta = polar_angle(x);
        let (s, c) = theta.sin_cos();
        let rp = r.powf(self.alpha - 1.0);
        let d_rho = self.alpha * rp * self.value(theta);
        let d_theta_over_r = rp * self.derivative(theta);
        [d_rho * c - d_theta_over_r * s, d_rho * s + d_theta_over_r * c]
    }
}

fn polar_angle(x: Point) -> f64 {
    let t = x[1].atan2(x[0]);
    if t < 0.0 {
        t + 2.0 * PI
    } else {
        t
    }
}

fn newton(alpha: f64, b: f64, rho0: f64, sigma0: f64, free_rho: bool) -> Result<KelloggAngular> {
    const MAX_ITER: usize = 100;
    const TOL: f64 = 1e-12;
    let residual = |p: &[f64; 2]| KelloggAngular::from_parameters(alpha, b, p[0], p[1]).flux_residuals();
    let norm = |r: &[f64; 4]| r.iter().map(|v| v * v).sum::<f64>().sqrt();

    let mut p = [rho0, sigma0];
    let mut r = residual(&p);
    let unknowns: &[usize] = if free_rho { &[0, 1] } else { &[1] };
    for _ in 0..MAX_ITER {
        if norm(&r) <= TOL {
            return Ok(KelloggAngular::from_parameters(alpha, b, p[0], p[1]));
        }
        // forward-difference Jacobian, Gauss–Newton step
        let mut jac = nalgebra::DMatrix::<f64>::zeros(4, unknowns.len());
        for (col, &k) in unknowns.iter().enumerate() {
            let step = 1e-7 * p[k].abs().max(1.0);
            let mut q = p;
            q[k] += step;
            let rq = residual(&q);
            for row in 0..4 {
                jac[(row, col)] = (rq[row] - r[row]) / step;
            }
        }
        let rhs = nalgebra::DVector::from_iterator(4, r.iter().map(|v| -v));
        let svd = jac.clone().svd(true, true);
        let delta = svd.solve(&rhs, 1e-14).map_err(|e| Error::InvalidParameter(e.to_string()))?;

        let mut damping = 1.0;
        let current = norm(&r);
        loop {
            let mut trial = p;
            for (col, &k) in unknowns.iter().enumerate() {
                trial[k] += damping * delta[col];
            }
            let rt = residual(&trial);
            if norm(&rt) < current || damping < 1e-6 {
                p = trial;
                r = rt;
                break;
            }
            damping *= 0.5;
        }
    }
    if norm(&r) <= TOL {
        return Ok(KelloggAngular::from_parameters(alpha, b, p[0], p[1]));
    }
    Err(Error::KelloggNoConvergence { iterations: MAX_ITER, residual: norm(&r) })
}

/// Expected convergence orders, used only for labelling reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExpectedRates {
    pub l2: f64,
    pub h1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestProblem {
    pub kind: ProblemKind,
    pub omega: f64,
    /// Offset point of the smooth problem, source location of the point-source problem,
    /// the origin for Kellogg.
    pub x0: Point,
    pub kellogg: Option<KelloggAngular>,
    pub final_time: f64,
}

pub fn make_problem(kind: ProblemKind, omega: f64) -> Result<TestProblem> {
    if !omega.is_finite() {
        return Err(Error::InvalidParameter(format!("omega must be finite, got {omega}")));
    }
    let (x0, kellogg) = match kind {
        ProblemKind::Smooth => ([0.5, 0.5], None),
        ProblemKind::Dirac => ([1.0 / 3.0, 1.0 / 3.0], None),
        ProblemKind::Kellogg => ([0.0, 0.0], Some(KelloggAngular::solve(KELLOGG_ALPHA, KELLOGG_B)?)),
    };
    Ok(TestProblem { kind, omega, x0, kellogg, final_time: FINAL_TIME })
}

impl TestProblem {
    /// `cos(ωt)`.
    pub fn time_factor(&self, t: f64) -> f64 {
        (self.omega * t).cos()
    }

    /// `d/dt cos(ωt)`.
    pub fn time_factor_rate(&self, t: f64) -> f64 {
        -self.omega * (self.omega * t).sin()
    }

    /// Spatial profile `N(x)` with `ν = cos(ωt) N`.
    pub fn profile(&self, x: Point) -> f64 {
        match self.kind {
            ProblemKind::Smooth => sq_dist(x, self.x0),
            ProblemKind::Dirac => sq_dist(x, self.x0).ln() / (4.0 * PI),
            ProblemKind::Kellogg => self.kellogg.as_ref().unwrap().profile(x),
        }
    }

    pub fn profile_gradient(&self, x: Point) -> [f64; 2] {
        let d = [x[0] - self.x0[0], x[1] - self.x0[1]];
        match self.kind {
            ProblemKind::Smooth => [2.0 * d[0], 2.0 * d[1]],
            ProblemKind::Dirac => {
                let r2 = d[0] * d[0] + d[1] * d[1];
                [d[0] / (2.0 * PI * r2), d[1] / (2.0 * PI * r2)]
            }
            ProblemKind::Kellogg => self.kellogg.as_ref().unwrap().profile_gradient(x),
        }
    }

    /// Scalar conductivity `a(x)`, with `A = a(x) I`.
    pub fn conductivity(&self, x: Point) -> f64 {
        match &self.kellogg {
            Some(k) if x[0] * x[1] >= 0.0 => k.b,
            _ => 1.0,
        }
    }

    /// `−div(A∇N)` away from any point source.
    pub fn steady_forcing(&self, _x: Point) -> f64 {
        match self.kind {
            ProblemKind::Smooth => -4.0,
            ProblemKind::Dirac | ProblemKind::Kellogg => 0.0,
        }
    }

    /// Location and weight of the point source in `−div(A∇N)`.
    ///
    /// `Δ(ln r / 2π) = δ`, so the steady weight is −1.
    pub fn point_source(&self) -> Option<(Point, f64)> {
        match self.kind {
            ProblemKind::Dirac => Some((self.x0, -1.0)),
            _ => None,
        }
    }

    /// Regular part of the forcing density at time `t`.
    pub fn forcing_density(&self, x: Point, t: f64) -> f64 {
        let rate = self.time_factor_rate(t);
        let steady = self.steady_forcing(x);
        let transient = if rate == 0.0 { 0.0 } else { rate * self.profile(x) };
        transient + self.time_factor(t) * steady
    }

    /// Conormal derivative `(A∇N)·n` of the profile.
    pub fn neumann_profile(&self, x: Point, normal: [f64; 2]) -> f64 {
        let g = self.profile_gradient(x);
        self.conductivity(x) * (g[0] * normal[0] + g[1] * normal[1])
    }

    pub fn neumann(&self, x: Point, normal: [f64; 2], t: f64) -> f64 {
        self.time_factor(t) * self.neumann_profile(x, normal)
    }

    pub fn expected_rates(&self) -> ExpectedRates {
        match self.kind {
            ProblemKind::Smooth => ExpectedRates { l2: 2.0, h1: 1.0 },
            ProblemKind::Dirac => ExpectedRates { l2: 1.0, h1: 0.0 },
            ProblemKind::Kellogg => ExpectedRates { l2: 0.5, h1: 0.25 },
        }
    }

    fn is_singular_at(&self, x: Point) -> bool {
        match self.kind {
            ProblemKind::Smooth => false,
            ProblemKind::Dirac | ProblemKind::Kellogg => x == self.x0,
        }
    }
}

fn sq_dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

impl ExactField for TestProblem {
    fn value(&self, x: Point, t: f64) -> f64 {
        self.time_factor(t) * self.profile(x)
    }

    fn gradient(&self, x: Point, t: f64) -> [f64; 2] {
        let c = self.time_factor(t);
        let g = self.profile_gradient(x);
        [c * g[0], c * g[1]]
    }

    fn singular_point(&self) -> Option<Point> {
        match self.kind {
            ProblemKind::Smooth => None,
            ProblemKind::Dirac | ProblemKind::Kellogg => Some(self.x0),
        }
    }
}

/// Exact value and, optionally, gradient of `ν(x, t)`.
pub fn evaluate_exact(problem: &TestProblem, x: Point, t: f64, want_gradient: bool) -> Result<(f64, Option<[f64; 2]>)> {
    if want_gradient && problem.is_singular_at(x) {
        return Err(Error::SingularGradient);
    }
    let value = if problem.kind == ProblemKind::Dirac && x == problem.x0 {
        f64::NEG_INFINITY
    } else {
        problem.value(x, t)
    };
    Ok((value, want_gradient.then(|| problem.gradient(x, t))))
}
