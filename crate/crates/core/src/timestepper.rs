//! Implicit-Euler integration of the nudged and reference schemes.
//!
//! Each step solves
//!
//! ```text
//! (M/τ + K + μ C G⁻¹ Cᵀ) u^{n+1} = M u^n / τ + F^{n+1} + μ C G⁻¹ b_H^{n+1}
//! ```
//!
//! which is the coupled fine/coarse system with the nudger eliminated.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::analysis::ErrorEvaluator;
use crate::error::{Error, Result};
use crate::fem::{assemble_operators, AssembledOperators, QuadratureConfig, SeparableLoad};
use crate::linalg::{factorize, pcg_solve, CsrMatrix, SmwSolver};
use crate::mesh::Mesh;
use crate::problems::{make_problem, ExactField, ProblemKind, TestProblem, FINAL_TIME};
use crate::strategies::{build_strategy, nudging_correction, MeanScaling, ObservationStrategy, StrategyKind, DEFAULT_COARSE_LEVEL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialCondition {
    #[default]
    Zero,
    Projected,
}

impl std::str::FromStr for InitialCondition {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(InitialCondition::Zero),
            "projected" => Ok(InitialCondition::Projected),
            other => Err(Error::InvalidParameter(format!("unknown initial condition '{other}'"))),
        }
    }
}

impl InitialCondition {
    pub fn name(self) -> &'static str {
        match self {
            InitialCondition::Zero => "zero",
            InitialCondition::Projected => "projected",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverPath {
    /// Banded factorization of `M/τ + K` with a Woodbury update for the nudging block.
    #[default]
    DirectSmw,
    Pcg,
}

impl std::str::FromStr for SolverPath {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" | "direct_smw" | "direct+smw" => Ok(SolverPath::DirectSmw),
            "pcg" => Ok(SolverPath::Pcg),
            other => Err(Error::InvalidParameter(format!("unknown solver path '{other}'"))),
        }
    }
}

impl SolverPath {
    pub fn name(self) -> &'static str {
        match self {
            SolverPath::DirectSmw => "direct_smw",
            SolverPath::Pcg => "pcg",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeConfig {
    pub level: u32,
    pub coarse_level: u32,
    pub mu: f64,
    pub strategy: StrategyKind,
    pub problem: ProblemKind,
    pub omega: f64,
    pub initial_condition: InitialCondition,
    pub final_time: f64,
    pub quadrature: QuadratureConfig,
    pub mean_scaling: MeanScaling,
    pub solver: SolverPath,
    pub keep_final_state: bool,
}

impl SchemeConfig {
    pub fn new(problem: ProblemKind, strategy: StrategyKind, level: u32, mu: f64, omega: f64) -> Self {
        Self {
            level,
            coarse_level: DEFAULT_COARSE_LEVEL,
            mu,
            strategy,
            problem,
            omega,
            initial_condition: InitialCondition::Zero,
            final_time: FINAL_TIME,
            quadrature: QuadratureConfig::default(),
            mean_scaling: MeanScaling::default(),
            solver: SolverPath::default(),
            keep_final_state: false,
        }
    }

    /// Reference scheme without nudging.
    pub fn reference(problem: ProblemKind, level: u32, omega: f64, ic: InitialCondition) -> Self {
        Self { initial_condition: ic, ..Self::new(problem, StrategyKind::None, level, 0.0, omega) }
    }

    /// `N = 2^{2ℓ−3}`.
    pub fn steps(&self) -> usize {
        1usize << (2 * self.level).saturating_sub(3)
    }

    pub fn tau(&self) -> f64 {
        self.final_time / self.steps() as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.level < crate::mesh::MIN_LEVEL || self.level > crate::mesh::MAX_LEVEL {
            return Err(Error::InvalidLevel(self.level));
        }
        if self.coarse_level > self.level || self.coarse_level < crate::mesh::MIN_LEVEL {
            return Err(Error::NotNested { coarse: self.coarse_level, fine: self.level });
        }
        if !(self.mu >= 0.0) || !self.mu.is_finite() {
            return Err(Error::InvalidParameter(format!("mu must be finite and non-negative, got {}", self.mu)));
        }
        if !(self.final_time > 0.0) || !self.final_time.is_finite() {
            return Err(Error::InvalidParameter(format!("final time must be positive, got {}", self.final_time)));
        }
        if !self.omega.is_finite() {
            return Err(Error::InvalidParameter(format!("omega must be finite, got {}", self.omega)));
        }
        self.quadrature.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub config: SchemeConfig,
    pub tau: f64,
    pub times: Vec<f64>,
    pub err_l2: Vec<f64>,
    pub err_h1: Vec<f64>,
    pub final_state: Option<Vec<f64>>,
    pub wall_seconds: f64,
}

impl RunRecord {
    pub fn steps(&self) -> usize {
        self.times.len().saturating_sub(1)
    }
}

/// Everything assembled once per run: mesh, operators, loads and strategy data.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub config: SchemeConfig,
    pub mesh: Mesh,
    pub problem: TestProblem,
    pub operators: AssembledOperators,
    /// Stiffness with unit conductivity, used by the error evaluator.
    pub laplace: CsrMatrix,
    pub strategy: ObservationStrategy,
    pub loads: SeparableLoad,
    /// `b_H` of the profile `N`, so that `b_H(t) = c(t) · observation_profile`.
    pub observation_profile: Vec<f64>,
}

impl Discretization {
    pub fn new(config: &SchemeConfig) -> Result<Self> {
        config.validate()?;
        let mesh = Mesh::new(config.level)?;
        let problem = make_problem(config.problem, config.omega)?;
        let quad = &config.quadrature;
        let operators = assemble_operators(&mesh, |x| problem.conductivity(x), quad)?;
        let laplace = if problem.kind == ProblemKind::Kellogg {
            assemble_operators(&mesh, |_| 1.0, quad)?.stiffness
        } else {
            operators.stiffness.clone()
        };
        let strategy = build_strategy(config.strategy, config.coarse_level, &mesh, quad, config.mean_scaling)?;
        let loads = SeparableLoad::new(&mesh, &problem, quad)?;
        let observation_profile = strategy.observe_field(&mesh, |x| problem.profile(x), quad, problem.singular_point())?;
        Ok(Self { config: config.clone(), mesh, problem, operators, laplace, strategy, loads, observation_profile })
    }
}

enum SystemSolver {
    Direct(SmwSolver<crate::linalg::Factorization>),
    Pcg { matrix: CsrMatrix, precond: Vec<f64> },
}

/// Implicit-Euler stepper with the system matrix prepared once.
pub struct Stepper<'a> {
    disc: &'a Discretization,
    mu: f64,
    tau: f64,
    correction: crate::linalg::LowRankCorrection,
    solver: SystemSolver,
    /// `μ C G⁻¹ b_H` for the profile.
    nudging_profile: Vec<f64>,
}

impl<'a> Stepper<'a> {
    pub fn new(disc: &'a Discretization, mu: f64, tau: f64, path: SolverPath) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(Error::InvalidParameter(format!("time step must be positive, got {tau}")));
        }
        let ops = &disc.operators;
        let base = CsrMatrix::linear_combination(&[(1.0 / tau, &ops.mass), (1.0, &ops.stiffness)]);
        let correction = nudging_correction(&disc.strategy, mu)?;
        let solver = match path {
            SolverPath::DirectSmw => SystemSolver::Direct(SmwSolver::new(factorize(&base, true)?, correction.clone())?),
            SolverPath::Pcg => {
                let mut precond = base.diag();
                for (p, c) in precond.iter_mut().zip(correction.diag()) {
                    *p += c;
                }
                SystemSolver::Pcg { matrix: base, precond }
            }
        };
        let nudging_profile = if correction.rank() == 0 {
            vec![0.0; disc.mesh.num_nodes()]
        } else {
            disc.strategy.nudging_rhs(mu, &disc.observation_profile)
        };
        Ok(Self { disc, mu, tau, correction, solver, nudging_profile })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Solves `S x = b` with the prepared system.
    pub fn solve_system(&self, b: &[f64]) -> Result<Vec<f64>> {
        match &self.solver {
            SystemSolver::Direct(s) => s.solve(b),
            SystemSolver::Pcg { matrix, precond } => {
                let out = pcg_solve(
                    |x, y| {
                        matrix.mul_vec_into(x, y);
                        if self.correction.rank() > 0 {
                            for (yi, ci) in y.iter_mut().zip(self.correction.apply(x)) {
                                *yi += ci;
                            }
                        }
                    },
                    precond,
                    b,
                    1e-12,
                    10_000,
                )?;
                Ok(out.x)
            }
        }
    }

    /// One step with explicit load `F^{n+1}` and observations `b_H^{n+1}`.
    pub fn step_with(&self, u: &[f64], load: &[f64], observation: &[f64]) -> Result<Vec<f64>> {
        let mut rhs = self.disc.operators.mass.mul_vec(u);
        for (r, f) in rhs.iter_mut().zip(load) {
            *r = *r / self.tau + f;
        }
        if self.correction.rank() > 0 {
            for (r, c) in rhs.iter_mut().zip(self.disc.strategy.nudging_rhs(self.mu, observation)) {
                *r += c;
            }
        }
        self.solve_system(&rhs)
    }

    /// One step of the problem's own data, observed exactly at `t_next`.
    pub fn advance_step(&self, u: &[f64], t_next: f64) -> Result<Vec<f64>> {
        let p = &self.disc.problem;
        let c = p.time_factor(t_next);
        let mut rhs = self.disc.operators.mass.mul_vec(u);
        for r in rhs.iter_mut() {
            *r /= self.tau;
        }
        self.disc.loads.accumulate(p, t_next, 1.0, &mut rhs);
        for (r, z) in rhs.iter_mut().zip(&self.nudging_profile) {
            *r += c * z;
        }
        self.solve_system(&rhs)
    }
}

/// Runs the scheme of `config` from `t = 0` to `T`, recording errors at every step.
pub fn run(config: &SchemeConfig) -> Result<RunRecord> {
    run_with(config, |_, _, _| {})
}

/// As [`run`], calling `observer(k, t_k, u_k)` after every step including `k = 0`.
pub fn run_with(config: &SchemeConfig, observer: impl FnMut(usize, f64, &[f64])) -> Result<RunRecord> {
    let disc = Discretization::new(config)?;
    run_discretized(&disc, observer)
}

pub fn run_discretized(disc: &Discretization, mut observer: impl FnMut(usize, f64, &[f64])) -> Result<RunRecord> {
    let start = Instant::now();
    let config = &disc.config;
    let n_steps = config.steps();
    let tau = config.tau();
    let problem = &disc.problem;
    let evaluator = ErrorEvaluator::new(&disc.mesh, problem, &disc.operators.mass, &disc.laplace, &config.quadrature)?;
    let stepper = Stepper::new(disc, config.mu, tau, config.solver)?;

    let mut u = match config.initial_condition {
        InitialCondition::Zero => vec![0.0; disc.mesh.num_nodes()],
        InitialCondition::Projected => {
            let c0 = problem.time_factor(0.0);
            evaluator.l2_projection().iter().map(|p| c0 * p).collect()
        }
    };

    let mut times = Vec::with_capacity(n_steps + 1);
    let mut err_l2 = Vec::with_capacity(n_steps + 1);
    let mut err_h1 = Vec::with_capacity(n_steps + 1);
    let mut record = |k: usize, u: &[f64]| {
        let t = k as f64 * tau;
        let (l2, h1) = evaluator.evaluate(u, problem.time_factor(t));
        times.push(t);
        err_l2.push(l2);
        err_h1.push(h1);
        t
    };
    let t0 = record(0, &u);
    observer(0, t0, &u);
    for k in 1..=n_steps {
        let t = k as f64 * tau;
        u = stepper
            .advance_step(&u, t)
            .map_err(|e| Error::StepFailed { step: k, source: Box::new(e) })?;
        record(k, &u);
        observer(k, t, &u);
    }

    Ok(RunRecord {
        config: config.clone(),
        tau,
        times,
        err_l2,
        err_h1,
        final_state: config.keep_final_state.then_some(u),
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}
