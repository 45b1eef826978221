//! Error norms, space-time accumulated errors, convergence tables, exponential
//! rate fits and the nudged elliptic projection.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fem::{
    element_quadrature, evaluate_fe_local, gradient_load_vector, load_vector, singular_elements, solve_mass, GaussRule,
    QuadratureConfig,
};
use crate::linalg::{pcg_solve, CsrMatrix};
use crate::mesh::{Mesh, Point};
use crate::problems::{ExactField, TestProblem};
use crate::strategies::{nudging_correction, ObservationStrategy};
use crate::timestepper::RunRecord;

/// A discrete Q1 function viewed as a time-independent field.
pub struct DiscreteField<'a> {
    pub mesh: &'a Mesh,
    pub coefficients: &'a [f64],
}

impl ExactField for DiscreteField<'_> {
    fn value(&self, x: Point, _t: f64) -> f64 {
        let (e, xi) = self.mesh.locate_point(x).expect("point inside the domain");
        evaluate_fe_local(self.mesh, self.coefficients, e, xi).0
    }

    fn gradient(&self, x: Point, _t: f64) -> [f64; 2] {
        let (e, xi) = self.mesh.locate_point(x).expect("point inside the domain");
        evaluate_fe_local(self.mesh, self.coefficients, e, xi).1
    }
}

/// `(‖u_h − ν(t)‖₀, ‖∇(u_h − ν(t))‖₀)` by element-wise Gauss quadrature.
///
/// Elements touching the field's singular point are subdivided for the L²
/// integrand only.
pub fn error_norms(mesh: &Mesh, u: &[f64], field: &impl ExactField, t: f64, quad: &QuadratureConfig) -> Result<(f64, f64)> {
    quad.validate()?;
    if quad.error_order < 4 {
        return Err(Error::InvalidParameter(format!("error quadrature order must be at least 4, got {}", quad.error_order)));
    }
    if u.len() != mesh.num_nodes() {
        return Err(Error::DimensionMismatch { expected: mesh.num_nodes(), got: u.len() });
    }
    let rule = GaussRule::new(quad.error_order)?;
    let special = singular_elements(mesh, field.singular_point());
    let (mut l2, mut h1) = (0.0, 0.0);
    for e in 0..mesh.num_elements() {
        let depth = if special.contains(&e) { quad.singular_depth } else { 0 };
        element_quadrature(mesh, e, &rule, depth, |xi, x, w| {
            let (v, _) = evaluate_fe_local(mesh, u, e, xi);
            let d = v - field.value(x, t);
            l2 += w * d * d;
        });
        element_quadrature(mesh, e, &rule, 0, |xi, x, w| {
            let (_, g) = evaluate_fe_local(mesh, u, e, xi);
            let ge = field.gradient(x, t);
            h1 += w * ((g[0] - ge[0]).powi(2) + (g[1] - ge[1]).powi(2));
        });
    }
    Ok((l2.sqrt(), h1.sqrt()))
}

/// Per-step error evaluation for separable solutions `ν = c(t) N(x)`.
///
/// With `p` the discrete L² projection of `N` and `r` its discrete
/// `H¹`-seminorm projection (both computed with the quadrature used by
/// [`error_norms`]), Galerkin orthogonality gives
///
/// ```text
/// ‖u − cN‖₀²  = (u − cp)ᵀ M  (u − cp) + c² ‖N − p‖₀²
/// |u − cN|₁²  = (u − cr)ᵀ K₀ (u − cr) + c² |N − r|₁²
/// ```
///
/// so each step costs two sparse quadratic forms.
#[derive(Debug, Clone)]
pub struct ErrorEvaluator {
    mass: CsrMatrix,
    laplace: CsrMatrix,
    l2_projection: Vec<f64>,
    h1_projection: Vec<f64>,
    l2_defect_sq: f64,
    h1_defect_sq: f64,
}

impl ErrorEvaluator {
    /// `mass` and `laplace` are the mass matrix and the unit-conductivity stiffness.
    pub fn new(mesh: &Mesh, problem: &TestProblem, mass: &CsrMatrix, laplace: &CsrMatrix, quad: &QuadratureConfig) -> Result<Self> {
        quad.validate()?;
        let singular = problem.singular_point();
        let b = load_vector(mesh, |x| problem.profile(x), quad.error_order, singular, quad.singular_depth)?;
        let p = solve_mass(mass, &b)?;

        let d = gradient_load_vector(mesh, |x| problem.profile_gradient(x), quad.error_order, singular, 0)?;
        let r = solve_neumann_laplace(laplace, mass, &d)?;

        let profile = |x: Point, _t: f64| problem.profile(x);
        let profile_grad = |x: Point, _t: f64| problem.profile_gradient(x);
        let (l2_defect, _) = error_norms_with(mesh, &p, &profile, &profile_grad, singular, quad)?;
        let (_, h1_defect) = error_norms_with(mesh, &r, &profile, &profile_grad, singular, quad)?;

        Ok(Self {
            mass: mass.clone(),
            laplace: laplace.clone(),
            l2_projection: p,
            h1_projection: r,
            l2_defect_sq: l2_defect * l2_defect,
            h1_defect_sq: h1_defect * h1_defect,
        })
    }

    /// Errors of `u` against `c · N`.
    pub fn evaluate(&self, u: &[f64], c: f64) -> (f64, f64) {
        let dl: Vec<f64> = u.iter().zip(&self.l2_projection).map(|(u, p)| u - c * p).collect();
        let dh: Vec<f64> = u.iter().zip(&self.h1_projection).map(|(u, r)| u - c * r).collect();
        let l2 = self.mass.quad_form(&dl).max(0.0) + c * c * self.l2_defect_sq;
        let h1 = self.laplace.quad_form(&dh).max(0.0) + c * c * self.h1_defect_sq;
        (l2.sqrt(), h1.sqrt())
    }

    /// Best-approximation errors `(‖N − Π_h N‖₀, |N − R_h N|₁)` of the profile.
    pub fn profile_defects(&self) -> (f64, f64) {
        (self.l2_defect_sq.sqrt(), self.h1_defect_sq.sqrt())
    }

    pub fn l2_projection(&self) -> &[f64] {
        &self.l2_projection
    }
}

fn error_norms_with(
    mesh: &Mesh,
    u: &[f64],
    value: &impl Fn(Point, f64) -> f64,
    gradient: &impl Fn(Point, f64) -> [f64; 2],
    singular: Option<Point>,
    quad: &QuadratureConfig,
) -> Result<(f64, f64)> {
    struct Closure<'a, V, G> {
        value: &'a V,
        gradient: &'a G,
        singular: Option<Point>,
    }
    impl<V: Fn(Point, f64) -> f64, G: Fn(Point, f64) -> [f64; 2]> ExactField for Closure<'_, V, G> {
        fn value(&self, x: Point, t: f64) -> f64 {
            (self.value)(x, t)
        }
        fn gradient(&self, x: Point, t: f64) -> [f64; 2] {
            (self.gradient)(x, t)
        }
        fn singular_point(&self) -> Option<Point> {
            self.singular
        }
    }
    error_norms(mesh, u, &Closure { value, gradient, singular }, 0.0, quad)
}

/// Solves `K₀ r = d` for `d ⊥ 1`, fixing the constant by `∫ r = 0`.
fn solve_neumann_laplace(laplace: &CsrMatrix, mass: &CsrMatrix, d: &[f64]) -> Result<Vec<f64>> {
    let m = mass.row_sums();
    let area: f64 = m.iter().sum();
    let mut diag = laplace.diag();
    for (g, mi) in diag.iter_mut().zip(&m) {
        *g += mi * mi / area;
    }
    let n = d.len();
    let out = pcg_solve(
        |x, y| {
            laplace.mul_vec_into(x, y);
            let s = crate::linalg::dot(&m, x) / area;
            for (yi, mi) in y.iter_mut().zip(&m) {
                *yi += s * mi;
            }
        },
        &diag,
        d,
        1e-13,
        20 * n.max(10),
    )?;
    Ok(out.x)
}

/// Index of the first sample with `t_k ≥ start`.
pub fn window_start_index(times: &[f64], start: f64) -> Result<usize> {
    times
        .iter()
        .position(|&t| t >= start - 1e-12 * start.abs().max(1.0))
        .ok_or_else(|| Error::InvalidParameter(format!("window start {start} lies after the final time")))
}

/// `(Σ_{k=M}^{N} τ e_k²)^{1/2}` over the L² errors of `record`.
pub fn accumulated_error(record: &RunRecord, start: usize) -> Result<f64> {
    accumulated_series(&record.err_l2, record.tau, start)
}

pub fn accumulated_series(errors: &[f64], tau: f64, start: usize) -> Result<f64> {
    let n = errors.len().saturating_sub(1);
    if start == 0 || start > n {
        return Err(Error::InvalidParameter(format!("window start index {start} outside 1..={n}")));
    }
    Ok(errors[start..].iter().map(|e| tau * e * e).sum::<f64>().sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateRow {
    pub level: u32,
    pub value: f64,
    pub rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateTable {
    pub rows: Vec<RateRow>,
}

impl RateTable {
    pub fn rates(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.rate).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.value).collect()
    }
}

/// Rates `log₂(e_{ℓ−1}/e_ℓ)` per level step.
pub fn roc_table(errors: &[(u32, f64)]) -> Result<RateTable> {
    if errors.is_empty() {
        return Err(Error::InvalidParameter("rate table needs at least one level".into()));
    }
    let mut rows = Vec::with_capacity(errors.len());
    for (k, &(level, value)) in errors.iter().enumerate() {
        if !(value > 0.0) || !value.is_finite() {
            return Err(Error::InvalidParameter(format!("error at level {level} must be positive, got {value}")));
        }
        let rate = if k == 0 {
            None
        } else {
            let (prev_level, prev) = errors[k - 1];
            if level <= prev_level {
                return Err(Error::InvalidParameter(format!("levels must increase, got {prev_level} then {level}")));
            }
            Some((prev / value).log2() / f64::from(level - prev_level))
        };
        rows.push(RateRow { level, value, rate });
    }
    Ok(RateTable { rows })
}

pub const PLATEAU_SPREAD: f64 = 1.1;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExponentialFit {
    pub gamma: f64,
    pub window: (f64, f64),
    pub samples: usize,
}

/// Least-squares slope of `ln e(t)` against `t`, negated.
///
/// With `window = None` the fit uses the longest run of strictly decreasing
/// samples that stay at least 10× above the final plateau. The plateau is the
/// median of the last tenth of the series when that tail varies by at most
/// [`PLATEAU_SPREAD`]; otherwise the series has not levelled off and no
/// threshold applies.
pub fn fit_exponential_rate(times: &[f64], errors: &[f64], window: Option<(f64, f64)>) -> Result<ExponentialFit> {
    const MIN_SAMPLES: usize = 5;
    if times.len() != errors.len() {
        return Err(Error::DimensionMismatch { expected: times.len(), got: errors.len() });
    }
    let (a, b) = match window {
        Some((ta, tb)) => {
            let idx: Vec<usize> = (0..times.len()).filter(|&k| times[k] >= ta && times[k] <= tb).collect();
            match (idx.first(), idx.last()) {
                (Some(&a), Some(&b)) => (a, b),
                _ => return Err(Error::NoDecayPhase),
            }
        }
        None => auto_window(errors).ok_or(Error::NoDecayPhase)?,
    };
    if b + 1 < a + MIN_SAMPLES || errors[a..=b].iter().any(|&e| !(e > 0.0)) {
        return Err(Error::NoDecayPhase);
    }
    let xs = &times[a..=b];
    let ys: Vec<f64> = errors[a..=b].iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::NoDecayPhase);
    }
    Ok(ExponentialFit { gamma: -sxy / sxx, window: (times[a], times[b]), samples: b - a + 1 })
}

fn auto_window(errors: &[f64]) -> Option<(usize, usize)> {
    let n = errors.len();
    if n < 3 {
        return None;
    }
    let tail = (n / 10).max(2);
    let mut last: Vec<f64> = errors[n - tail..].to_vec();
    last.sort_by(f64::total_cmp);
    // a tail that still decays has no plateau; the whole decreasing run is used
    let flat = last[0] > 0.0 && last[tail - 1] / last[0] <= PLATEAU_SPREAD;
    let threshold = if flat { 10.0 * last[tail / 2] } else { 0.0 };

    let mut best: Option<(usize, usize)> = None;
    let mut k = 0;
    while k < n {
        if !(errors[k] >= threshold) || errors[k] <= 0.0 {
            k += 1;
            continue;
        }
        let start = k;
        while k + 1 < n && errors[k + 1] < errors[k] && errors[k + 1] >= threshold && errors[k + 1] > 0.0 {
            k += 1;
        }
        if best.is_none_or(|(a, b)| k - start > b - a) {
            best = Some((start, k));
        }
        k += 1;
    }
    best
}

/// Right-hand side data for the nudged elliptic projection.
pub enum ProjectionTarget<'a> {
    /// A discrete function `u ∈ V_h`.
    Discrete(&'a [f64]),
    /// `a(u, φ_i)` and the observation pairings `(L_H u, ψ_j)`.
    Loads { energy: &'a [f64], observation: &'a [f64] },
}

/// Solves `(K + μ C G⁻¹ Cᵀ) Q = a(u, ·) + μ C G⁻¹ b`.
pub fn nudged_elliptic_projection(
    stiffness: &CsrMatrix,
    strategy: &ObservationStrategy,
    mu: f64,
    target: ProjectionTarget<'_>,
) -> Result<Vec<f64>> {
    if !(mu > 0.0) {
        return Err(Error::InvalidParameter(format!("nudged elliptic projection needs mu > 0, got {mu}")));
    }
    let corr = nudging_correction(strategy, mu)?;
    let rhs = match target {
        ProjectionTarget::Discrete(u) => {
            let mut r = stiffness.mul_vec(u);
            for (ri, ci) in r.iter_mut().zip(corr.apply(u)) {
                *ri += ci;
            }
            r
        }
        ProjectionTarget::Loads { energy, observation } => {
            let mut r = energy.to_vec();
            for (ri, ci) in r.iter_mut().zip(strategy.nudging_rhs(mu, observation)) {
                *ri += ci;
            }
            r
        }
    };
    let mut diag = stiffness.diag();
    for (d, c) in diag.iter_mut().zip(corr.diag()) {
        *d += c;
    }
    let n = rhs.len();
    let out = pcg_solve(
        |x, y| {
            stiffness.mul_vec_into(x, y);
            for (yi, ci) in y.iter_mut().zip(corr.apply(x)) {
                *yi += ci;
            }
        },
        &diag,
        &rhs,
        1e-13,
        20 * n.max(10),
    )?;
    Ok(out.x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{assemble_operators, interpolate};
    use crate::problems::{make_problem, ProblemKind};
    use approx::assert_relative_eq;

    #[test]
    fn roc_examples() {
        let t = roc_table(&[(4, 1e-2), (5, 2.5e-3)]).unwrap();
        assert_relative_eq!(t.rates()[0], 2.0, epsilon = 1e-14);
        let t = roc_table(&[(4, 2.327e-2), (5, 5.831e-3), (6, 1.458e-3), (7, 3.646e-4)]).unwrap();
        for r in t.rates() {
            assert!((r - 2.0).abs() < 0.005, "{r}");
        }
        assert!(roc_table(&[(4, 1.0)]).unwrap().rates().is_empty());
        assert!(roc_table(&[(5, 1.0), (4, 0.5)]).is_err());
        assert!(roc_table(&[(4, 1.0), (5, 0.0)]).is_err());
    }

    #[test]
    fn accumulated_examples() {
        let tau = 0.25;
        let e = vec![0.3; 9];
        let m = 3;
        assert_relative_eq!(accumulated_series(&e, tau, m).unwrap(), 0.3 * ((8 - m + 1) as f64 * tau).sqrt(), epsilon = 1e-15);
        assert_relative_eq!(accumulated_series(&e, tau, 8).unwrap(), 0.3 * tau.sqrt(), epsilon = 1e-15);
        assert!(accumulated_series(&e, tau, 9).is_err());
        assert!(accumulated_series(&e, tau, 0).is_err());
    }

    #[test]
    fn window_start() {
        let times: Vec<f64> = (0..=8).map(|k| k as f64 * 3.0 / 8.0).collect();
        assert_eq!(window_start_index(&times, 0.4).unwrap(), 2);
        assert_eq!(window_start_index(&times, 0.375).unwrap(), 1);
        assert!(window_start_index(&times, 3.5).is_err());
    }

    #[test]
    fn exponential_fits() {
        let times: Vec<f64> = (0..=300).map(|k| k as f64 * 0.01).collect();
        let e: Vec<f64> = times.iter().map(|t| (-3.0 * t).exp()).collect();
        let fit = fit_exponential_rate(&times, &e, Some((0.0, 3.0))).unwrap();
        assert!((fit.gamma - 3.0).abs() < 1e-10);

        let e: Vec<f64> = times.iter().map(|t| (-5.0 * t).exp().max(1e-6)).collect();
        let fit = fit_exponential_rate(&times, &e, None).unwrap();
        assert!((fit.gamma - 5.0).abs() < 0.05, "{fit:?}");

        let flat = vec![1e-9; times.len()];
        assert_eq!(fit_exponential_rate(&times, &flat, None), Err(Error::NoDecayPhase));
    }

    #[test]
    fn error_norms_of_zero_against_smooth() {
        let mesh = Mesh::new(3).unwrap();
        let p = make_problem(ProblemKind::Smooth, 0.0).unwrap();
        let zero = vec![0.0; mesh.num_nodes()];
        let (l2, _) = error_norms(&mesh, &zero, &p, 0.0, &QuadratureConfig::default()).unwrap();
        // closed form of ∫∫ (a² + b²)² with a = x − 1/2, b = y − 1/2
        let m = |k: i32| ((0.5f64).powi(k + 1) - (-1.5f64).powi(k + 1)) / f64::from(k + 1);
        let exact = m(4) * m(0) + 2.0 * m(2) * m(2) + m(0) * m(4);
        assert_relative_eq!(l2, exact.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn error_norms_of_discrete_field_vanish() {
        let mesh = Mesh::new(3).unwrap();
        let u: Vec<f64> = (0..mesh.num_nodes()).map(|i| (i as f64 * 0.37).sin()).collect();
        let field = DiscreteField { mesh: &mesh, coefficients: &u };
        let (l2, h1) = error_norms(&mesh, &u, &field, 0.0, &QuadratureConfig::default()).unwrap();
        assert!(l2 < 1e-13 && h1 < 1e-13, "{l2} {h1}");
    }

    #[test]
    fn evaluator_matches_direct_quadrature() {
        let quad = QuadratureConfig::default();
        let mesh = Mesh::new(4).unwrap();
        for kind in ProblemKind::ALL {
            let p = make_problem(kind, std::f64::consts::PI).unwrap();
            let ops = assemble_operators(&mesh, |x| p.conductivity(x), &quad).unwrap();
            let lap = assemble_operators(&mesh, |_| 1.0, &quad).unwrap().stiffness;
            let ev = ErrorEvaluator::new(&mesh, &p, &ops.mass, &lap, &quad).unwrap();
            let u = interpolate(&mesh, |x| 0.8 * p.profile(x) + 0.1 * x[0]);
            let u: Vec<f64> = u.into_iter().map(|v| if v.is_finite() { v } else { 0.0 }).collect();
            for t in [0.0, 0.37, 1.5] {
                let direct = error_norms(&mesh, &u, &p, t, &quad).unwrap();
                let fast = ev.evaluate(&u, p.time_factor(t));
                assert_relative_eq!(direct.0, fast.0, max_relative = 1e-9);
                assert_relative_eq!(direct.1, fast.1, max_relative = 1e-9);
            }
        }
    }
}
