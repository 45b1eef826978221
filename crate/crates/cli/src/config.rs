//! Experiment specification: defaults, config file and command-line overrides.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context};
use clap::{Args, ValueEnum};
use nudgefem::fem::QuadratureConfig;
use nudgefem::problems::ProblemKind;
use nudgefem::strategies::{MeanScaling, StrategyKind, DEFAULT_COARSE_LEVEL};
use nudgefem::timestepper::{InitialCondition, SolverPath};
use serde::{Deserialize, Deserializer, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    #[default]
    Single,
    Saturation,
    Convergence,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Single => "single",
            ExperimentKind::Saturation => "saturation",
            ExperimentKind::Convergence => "convergence",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Fully resolved experiment description.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSpec {
    pub experiment: ExperimentKind,
    pub problem: ProblemKind,
    pub strategy: StrategyKind,
    pub mu: Vec<f64>,
    pub levels: Vec<u32>,
    pub omega: f64,
    pub ic: InitialCondition,
    pub out: PathBuf,
    /// Start of the accumulated-error window.
    pub window_start: f64,
    /// Explicit fit window for γ; automatic when absent.
    pub fit_window: Option<(f64, f64)>,
    pub mean_scaling: MeanScaling,
    pub solver: SolverPath,
    pub quadrature: QuadratureConfig,
    pub coarse_level: u32,
    pub jobs: usize,
}

/// Accumulated-error window start per strategy and problem.
pub fn default_window_start(strategy: StrategyKind, problem: ProblemKind) -> f64 {
    match (strategy, problem) {
        (StrategyKind::MeanValue, ProblemKind::Smooth) => 2.8,
        (StrategyKind::MeanValue, ProblemKind::Dirac) => 1.8,
        (StrategyKind::MeanValue, ProblemKind::Kellogg) => 0.8,
        _ => 0.4,
    }
}

pub fn default_mu_list(experiment: ExperimentKind, strategy: StrategyKind) -> Vec<f64> {
    match (experiment, strategy) {
        (ExperimentKind::Saturation, StrategyKind::FeProjection) => vec![4.0, 64.0, 1024.0, 16384.0],
        (ExperimentKind::Saturation, StrategyKind::BoundaryProjection) => vec![1.0, 4.0, 64.0, 16384.0],
        (ExperimentKind::Saturation, StrategyKind::MeanValue) => vec![1.0, 4.0, 16.0, 16384.0],
        (_, StrategyKind::None) => vec![0.0],
        _ => vec![64.0],
    }
}

pub fn default_levels(experiment: ExperimentKind) -> Vec<u32> {
    match experiment {
        ExperimentKind::Saturation => vec![6],
        ExperimentKind::Convergence => vec![4, 5, 6, 7],
        ExperimentKind::Single => vec![4],
    }
}

pub fn default_omega(experiment: ExperimentKind) -> f64 {
    match experiment {
        ExperimentKind::Saturation => 0.0,
        _ => std::f64::consts::PI,
    }
}

/// `pi`, `π`, or a plain number.
pub fn parse_omega(s: &str) -> anyhow::Result<f64> {
    match s.trim() {
        "pi" | "π" => Ok(std::f64::consts::PI),
        other => other.parse().with_context(|| format!("invalid omega '{other}'")),
    }
}

fn parse_kind<T: FromStr>(s: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    s.parse().map_err(|e: T::Err| e.to_string())
}

fn de_parsed<'de, D, T>(d: D) -> Result<Option<T>, D::Error>
where
    D: Deserializer<'de>,
    T: FromStr,
    T::Err: fmt::Display,
{
    let s: Option<String> = Option::deserialize(d)?;
    s.map(|s| s.parse().map_err(serde::de::Error::custom)).transpose()
}

fn de_omega<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Number(f64),
        Text(String),
    }
    match Option::<Raw>::deserialize(d)? {
        None => Ok(None),
        Some(Raw::Number(v)) => Ok(Some(v)),
        Some(Raw::Text(s)) => parse_omega(&s).map(Some).map_err(serde::de::Error::custom),
    }
}

/// Optional settings shared by the config file and the command line.
#[derive(Debug, Clone, Default, PartialEq, Deserialize, Args)]
#[serde(default, deny_unknown_fields)]
pub struct Overrides {
    #[arg(long, value_enum)]
    pub experiment: Option<ExperimentKind>,
    #[arg(long, value_parser = parse_kind::<ProblemKind>)]
    #[serde(deserialize_with = "de_parsed")]
    pub problem: Option<ProblemKind>,
    #[arg(long, value_parser = parse_kind::<StrategyKind>)]
    #[serde(deserialize_with = "de_parsed")]
    pub strategy: Option<StrategyKind>,
    /// Comma-separated nudging parameters.
    #[arg(long, value_delimiter = ',')]
    pub mu: Option<Vec<f64>>,
    /// Comma-separated refinement levels.
    #[arg(long, value_delimiter = ',')]
    pub levels: Option<Vec<u32>>,
    /// Angular frequency; accepts `pi`.
    #[arg(long, value_parser = |s: &str| parse_omega(s).map_err(|e| e.to_string()))]
    #[serde(deserialize_with = "de_omega")]
    pub omega: Option<f64>,
    #[arg(long, value_parser = parse_kind::<InitialCondition>)]
    #[serde(deserialize_with = "de_parsed")]
    pub ic: Option<InitialCondition>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub window_start: Option<f64>,
    /// Fit window for γ as `start,end`.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    pub fit_window: Option<Vec<f64>>,
    #[arg(long, value_parser = parse_kind::<MeanScaling>)]
    #[serde(deserialize_with = "de_parsed")]
    pub mean_scaling: Option<MeanScaling>,
    #[arg(long, value_parser = parse_kind::<SolverPath>)]
    #[serde(deserialize_with = "de_parsed")]
    pub solver: Option<SolverPath>,
    #[arg(long)]
    pub q_bulk: Option<usize>,
    #[arg(long)]
    pub q_err: Option<usize>,
    #[arg(long)]
    pub k_sing: Option<u32>,
    #[arg(long)]
    pub coarse_level: Option<u32>,
    /// Concurrent runs.
    #[arg(long)]
    pub jobs: Option<usize>,
}

macro_rules! take_later {
    ($base:ident, $later:ident; $($field:ident),*) => {
        $( if $later.$field.is_some() { $base.$field = $later.$field; } )*
    };
}

impl Overrides {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        toml::from_str(text).context("invalid config file")
    }

    pub fn from_file(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }

    /// Fields set in `later` replace those of `self`.
    pub fn merged(mut self, later: Overrides) -> Self {
        take_later!(self, later; experiment, problem, strategy, mu, levels, omega, ic, out, window_start, fit_window,
            mean_scaling, solver, q_bulk, q_err, k_sing, coarse_level, jobs);
        self
    }

    pub fn resolve(self) -> anyhow::Result<ExperimentSpec> {
        let experiment = self.experiment.unwrap_or_default();
        let problem = self.problem.unwrap_or(ProblemKind::Smooth);
        let strategy = self.strategy.unwrap_or(StrategyKind::FeProjection);
        let defaults = QuadratureConfig::default();
        let quadrature = QuadratureConfig {
            bulk_order: self.q_bulk.unwrap_or(defaults.bulk_order),
            error_order: self.q_err.unwrap_or(defaults.error_order),
            singular_depth: self.k_sing.unwrap_or(defaults.singular_depth),
        };
        let fit_window = match self.fit_window.as_deref() {
            None => None,
            Some(&[a, b]) if a < b => Some((a, b)),
            Some(w) => bail!("fit window must be two increasing times, got {w:?}"),
        };
        let spec = ExperimentSpec {
            experiment,
            problem,
            strategy,
            mu: self.mu.unwrap_or_else(|| default_mu_list(experiment, strategy)),
            levels: self.levels.unwrap_or_else(|| default_levels(experiment)),
            omega: self.omega.unwrap_or_else(|| default_omega(experiment)),
            ic: self.ic.unwrap_or_default(),
            out: self.out.unwrap_or_else(|| PathBuf::from("results")),
            window_start: self.window_start.unwrap_or_else(|| default_window_start(strategy, problem)),
            fit_window,
            mean_scaling: self.mean_scaling.unwrap_or_default(),
            solver: self.solver.unwrap_or_default(),
            quadrature,
            coarse_level: self.coarse_level.unwrap_or(DEFAULT_COARSE_LEVEL),
            jobs: self.jobs.unwrap_or(1).max(1),
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> anyhow::Result<()> {
        if self.mu.is_empty() || self.levels.is_empty() {
            bail!("mu and level lists must be non-empty");
        }
        if let Some(mu) = self.mu.iter().find(|m| !(**m >= 0.0) || !m.is_finite()) {
            bail!("mu must be finite and non-negative, got {mu}");
        }
        if self.strategy != StrategyKind::None && self.mu.contains(&0.0) && self.experiment != ExperimentKind::Single {
            bail!("mu = 0 is the reference scheme, which suites add on their own");
        }
        let mut sorted = self.levels.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted != self.levels {
            bail!("levels must be strictly increasing, got {:?}", self.levels);
        }
        if !(self.window_start >= 0.0 && self.window_start <= nudgefem::problems::FINAL_TIME) {
            bail!("window start {} outside [0, 3]", self.window_start);
        }
        for &level in &self.levels {
            self.scheme(level, self.mu[0]).validate()?;
        }
        Ok(())
    }

    /// Scheme configuration of the nudged run at `level` with parameter `mu`.
    pub fn scheme(&self, level: u32, mu: f64) -> nudgefem::timestepper::SchemeConfig {
        let mut c = nudgefem::timestepper::SchemeConfig::new(self.problem, self.strategy, level, mu, self.omega);
        c.initial_condition = self.ic;
        c.coarse_level = self.coarse_level;
        c.quadrature = self.quadrature;
        c.mean_scaling = self.mean_scaling;
        c.solver = self.solver;
        c
    }

    /// Scheme configuration of the non-nudged reference run.
    pub fn reference(&self, level: u32, ic: InitialCondition) -> nudgefem::timestepper::SchemeConfig {
        let mut c = nudgefem::timestepper::SchemeConfig::reference(self.problem, level, self.omega, ic);
        c.coarse_level = self.coarse_level;
        c.quadrature = self.quadrature;
        c.solver = self.solver;
        c
    }

    /// `<out>/<experiment>/<problem>/<strategy>`.
    pub fn run_dir(&self) -> PathBuf {
        self.out.join(self.experiment.name()).join(self.problem.name()).join(self.strategy.name())
    }
}
