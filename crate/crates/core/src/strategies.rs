//! Observation strategies: coarse FE projection, boundary projection and domain mean.
//!
//! A strategy is stored as a fine×coarse coupling matrix `C` with
//! `C_ij = (φ_i, ψ_j)` in the strategy's pairing and the coarse Gram matrix `G`
//! of that pairing. The nudging form is then `μ (Cᵀu)ᵀ G⁻¹ (Cᵀv)`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{element_quadrature, singular_elements, GaussRule, QuadratureConfig, ReferenceElement};
use crate::linalg::{CsrMatrix, LowRankCorrection};
use crate::mesh::{build_nesting, Mesh, NestingMap, Point};
use crate::problems::{ExactField, TestProblem};

pub const DEFAULT_COARSE_LEVEL: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    FeProjection,
    BoundaryProjection,
    MeanValue,
    None,
}

impl StrategyKind {
    pub const NUDGING: [StrategyKind; 3] = [StrategyKind::FeProjection, StrategyKind::BoundaryProjection, StrategyKind::MeanValue];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::FeProjection => "fe_projection",
            StrategyKind::BoundaryProjection => "boundary_projection",
            StrategyKind::MeanValue => "mean_value",
            StrategyKind::None => "none",
        }
    }
}

impl std::str::FromStr for StrategyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fe_projection" | "fe" => Ok(StrategyKind::FeProjection),
            "boundary_projection" | "boundary" => Ok(StrategyKind::BoundaryProjection),
            "mean_value" | "mean" => Ok(StrategyKind::MeanValue),
            "none" => Ok(StrategyKind::None),
            other => Err(Error::InvalidParameter(format!("unknown strategy '{other}'"))),
        }
    }
}

impl std::fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Weight of the mean-value pairing.
///
/// `YNorm` uses `μ|Ω| (ū − ν̄) v̄`, consistent with the `|Ω|^{1/2}|·|` norm on the
/// observation space; `Eq420` drops the `|Ω|` factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanScaling {
    #[default]
    YNorm,
    Eq420,
}

impl std::str::FromStr for MeanScaling {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "y_norm" => Ok(MeanScaling::YNorm),
            "eq420" => Ok(MeanScaling::Eq420),
            other => Err(Error::InvalidParameter(format!("unknown mean scaling '{other}'"))),
        }
    }
}

impl MeanScaling {
    pub fn name(self) -> &'static str {
        match self {
            MeanScaling::YNorm => "y_norm",
            MeanScaling::Eq420 => "eq420",
        }
    }
}

#[derive(Debug, Clone)]
enum Pairing {
    None,
    Domain { coarse: Mesh, nesting: NestingMap },
    /// Coarse boundary edge index for every fine boundary edge.
    Boundary { edge_map: Vec<usize> },
    Mean,
}

#[derive(Debug, Clone)]
pub struct ObservationStrategy {
    pub kind: StrategyKind,
    pub coarse_level: u32,
    pub fine_level: u32,
    /// `C`, fine×coarse.
    pub coupling: CsrMatrix,
    /// `G`, coarse×coarse.
    pub gram: DMatrix<f64>,
    gram_inv: DMatrix<f64>,
    /// Advisory saturation parameter `μ_s`.
    pub saturation_estimate: f64,
    pairing: Pairing,
}

pub fn build_strategy(
    kind: StrategyKind,
    coarse_level: u32,
    fine: &Mesh,
    quad: &QuadratureConfig,
    mean_scaling: MeanScaling,
) -> Result<ObservationStrategy> {
    quad.validate()?;
    if coarse_level > fine.level {
        return Err(Error::NotNested { coarse: coarse_level, fine: fine.level });
    }
    let n = fine.num_nodes();
    let (coupling, gram, saturation_estimate, pairing) = match kind {
        StrategyKind::None => (CsrMatrix::from_triplets(n, 0, Vec::new()), DMatrix::zeros(0, 0), 0.0, Pairing::None),
        StrategyKind::FeProjection => {
            let coarse = Mesh::new(coarse_level)?;
            let nesting = build_nesting(&coarse, fine)?;
            let c = domain_coupling(fine, &coarse, &nesting, quad.bulk_order)?;
            let g = coarse_mass(&coarse, quad.bulk_order)?;
            let mu_s = 1.0 / (coarse.h * coarse.h);
            (c, g, mu_s, Pairing::Domain { coarse, nesting })
        }
        StrategyKind::BoundaryProjection => {
            let coarse = Mesh::new(coarse_level)?;
            let edge_map = boundary_edge_map(fine, &coarse);
            let mut trip = Vec::with_capacity(2 * fine.boundary_edges.len());
            for (k, edge) in fine.boundary_edges.iter().enumerate() {
                for &node in &edge.nodes {
                    trip.push((node, edge_map[k], 0.5 * edge.length));
                }
            }
            let c = CsrMatrix::from_triplets(n, coarse.boundary_edges.len(), trip);
            let g = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
                coarse.boundary_edges.len(),
                coarse.boundary_edges.iter().map(|e| e.length),
            ));
            (c, g, 1.0, Pairing::Boundary { edge_map })
        }
        StrategyKind::MeanValue => {
            let mass = crate::fem::assemble_operators(fine, |_| 1.0, quad)?.mass;
            let m = mass.row_sums();
            let trip = m.iter().enumerate().map(|(i, &v)| (i, 0, v)).collect();
            let area = 4.0;
            let weight = match mean_scaling {
                MeanScaling::YNorm => area,
                MeanScaling::Eq420 => area * area,
            };
            // Poincaré constant of the square: C_P = (2/π)²
            let mu_s = (PI / 2.0).powi(2);
            (CsrMatrix::from_triplets(n, 1, trip), DMatrix::from_element(1, 1, weight), mu_s, Pairing::Mean)
        }
    };
    let gram_inv = if gram.nrows() == 0 {
        gram.clone()
    } else {
        gram.clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidParameter("coarse Gram matrix is not positive definite".into()))?
            .inverse()
    };
    Ok(ObservationStrategy {
        kind,
        coarse_level,
        fine_level: fine.level,
        coupling,
        gram,
        gram_inv,
        saturation_estimate,
        pairing,
    })
}

fn domain_coupling(fine: &Mesh, coarse: &Mesh, nesting: &NestingMap, order: usize) -> Result<CsrMatrix> {
    let rule = GaussRule::new(order)?;
    let mut trip = Vec::with_capacity(16 * fine.num_elements());
    for (e, conn) in fine.elements.iter().enumerate() {
        let parent = nesting.parent[e];
        let cconn = &coarse.elements[parent];
        let mut local = [[0.0; 4]; 4];
        element_quadrature(fine, e, &rule, 0, |xi, _, w| {
            let nf = ReferenceElement::shape(xi);
            let nc = ReferenceElement::shape(nesting.to_coarse_local(e, xi));
            for a in 0..4 {
                for b in 0..4 {
                    local[a][b] += w * nf[a] * nc[b];
                }
            }
        });
        for a in 0..4 {
            for b in 0..4 {
                trip.push((conn[a], cconn[b], local[a][b]));
            }
        }
    }
    Ok(CsrMatrix::from_triplets(fine.num_nodes(), coarse.num_nodes(), trip))
}

fn coarse_mass(coarse: &Mesh, order: usize) -> Result<DMatrix<f64>> {
    let me = ReferenceElement::mass_matrix(coarse.h, &GaussRule::new(order)?);
    let r = coarse.num_nodes();
    let mut g = DMatrix::zeros(r, r);
    for conn in &coarse.elements {
        for a in 0..4 {
            for b in 0..4 {
                g[(conn[a], conn[b])] += me[a][b];
            }
        }
    }
    Ok(g)
}

fn boundary_edge_map(fine: &Mesh, coarse: &Mesh) -> Vec<usize> {
    fine.boundary_edges
        .iter()
        .map(|edge| {
            let mid = edge.point(fine, 0.5);
            coarse
                .boundary_edges
                .iter()
                .position(|c| {
                    let a = coarse.nodes[c.nodes[0]];
                    let b = coarse.nodes[c.nodes[1]];
                    c.normal == edge.normal
                        && (0..2).all(|d| mid[d] >= a[d].min(b[d]) - 1e-14 && mid[d] <= a[d].max(b[d]) + 1e-14)
                })
                .expect("fine boundary edge lies on a coarse boundary edge")
        })
        .collect()
}

impl ObservationStrategy {
    pub fn rank(&self) -> usize {
        self.coupling.ncols()
    }

    pub fn gram_inverse(&self) -> &DMatrix<f64> {
        &self.gram_inv
    }

    /// `Cᵀ u`.
    pub fn pair(&self, u: &[f64]) -> Vec<f64> {
        self.coupling.transpose_mul_vec(u)
    }

    /// `G⁻¹ y`.
    pub fn apply_gram_inverse(&self, y: &[f64]) -> Vec<f64> {
        (0..self.rank()).map(|i| (0..self.rank()).map(|j| self.gram_inv[(i, j)] * y[j]).sum()).collect()
    }

    /// Coarse coefficients of the observation `L_H u`, i.e. `G⁻¹Cᵀu`.
    pub fn observe_discrete(&self, u: &[f64]) -> Vec<f64> {
        self.apply_gram_inverse(&self.pair(u))
    }

    /// `‖L_H u‖²_Y = (Cᵀu)ᵀ G⁻¹ (Cᵀu)`.
    pub fn observation_norm_sq(&self, u: &[f64]) -> f64 {
        let y = self.pair(u);
        let z = self.apply_gram_inverse(&y);
        y.iter().zip(&z).map(|(a, b)| a * b).sum()
    }

    /// `C y` for a coarse vector `y`.
    pub fn lift(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.coupling.nrows()];
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.coupling.row(i).map(|(j, v)| v * y[j]).sum();
        }
        out
    }

    /// `μ C G⁻¹ b`, the nudging contribution to the right-hand side.
    pub fn nudging_rhs(&self, mu: f64, b: &[f64]) -> Vec<f64> {
        let z: Vec<f64> = self.apply_gram_inverse(b).into_iter().map(|v| mu * v).collect();
        self.lift(&z)
    }

    /// Pairings `(f, ψ_j)` of a field with the coarse test objects.
    pub fn observe_field(&self, fine: &Mesh, f: impl Fn(Point) -> f64, quad: &QuadratureConfig, singular: Option<Point>) -> Result<Vec<f64>> {
        if fine.level != self.fine_level {
            return Err(Error::DimensionMismatch { expected: self.fine_level as usize, got: fine.level as usize });
        }
        match &self.pairing {
            Pairing::None => Ok(Vec::new()),
            Pairing::Domain { coarse, nesting } => {
                let rule = GaussRule::new(quad.error_order)?;
                let special = singular_elements(fine, singular);
                let mut b = vec![0.0; self.rank()];
                for e in 0..fine.num_elements() {
                    let depth = if special.contains(&e) { quad.singular_depth } else { 0 };
                    let cconn = &coarse.elements[nesting.parent[e]];
                    element_quadrature(fine, e, &rule, depth, |xi, x, w| {
                        let fw = f(x) * w;
                        let nc = ReferenceElement::shape(nesting.to_coarse_local(e, xi));
                        for a in 0..4 {
                            b[cconn[a]] += fw * nc[a];
                        }
                    });
                }
                Ok(b)
            }
            Pairing::Boundary { edge_map } => {
                let rule = GaussRule::new(quad.error_order)?;
                let mut b = vec![0.0; self.rank()];
                for (k, edge) in fine.boundary_edges.iter().enumerate() {
                    b[edge_map[k]] += edge.length * rule.integrate(|s| f(edge.point(fine, s)));
                }
                Ok(b)
            }
            Pairing::Mean => {
                let rule = GaussRule::new(quad.error_order)?;
                let special = singular_elements(fine, singular);
                let mut total = 0.0;
                for e in 0..fine.num_elements() {
                    let depth = if special.contains(&e) { quad.singular_depth } else { 0 };
                    element_quadrature(fine, e, &rule, depth, |_, x, w| total += f(x) * w);
                }
                Ok(vec![total])
            }
        }
    }
}

/// Exact observations `b_H(t)_j = (ν(t), ψ_j)`.
pub fn observe_exact(strategy: &ObservationStrategy, fine: &Mesh, problem: &TestProblem, t: f64, quad: &QuadratureConfig) -> Result<Vec<f64>> {
    strategy.observe_field(fine, |x| problem.value(x, t), quad, problem.singular_point())
}

/// `μ C G⁻¹ Cᵀ` as a low-rank correction.
pub fn nudging_correction(strategy: &ObservationStrategy, mu: f64) -> Result<LowRankCorrection> {
    if !(mu >= 0.0) || !mu.is_finite() {
        return Err(Error::InvalidParameter(format!("nudging parameter must be finite and non-negative, got {mu}")));
    }
    let n = strategy.coupling.nrows();
    if mu == 0.0 || strategy.rank() == 0 {
        return Ok(LowRankCorrection::zero(n));
    }
    let mut u = DMatrix::zeros(n, strategy.rank());
    for i in 0..n {
        for (j, v) in strategy.coupling.row(i) {
            u[(i, j)] = v;
        }
    }
    let w = strategy.gram_inv.map(|v| mu * v);
    LowRankCorrection::new(u, w, 1.0)
}

/// `z_H = μ G⁻¹(Cᵀu − b_H)`.
pub fn recover_nudger(strategy: &ObservationStrategy, mu: f64, u: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if strategy.kind == StrategyKind::None {
        return Err(Error::InvalidParameter("no nudger for the reference scheme".into()));
    }
    if b.len() != strategy.rank() {
        return Err(Error::DimensionMismatch { expected: strategy.rank(), got: b.len() });
    }
    let y: Vec<f64> = strategy.pair(u).iter().zip(b).map(|(a, b)| a - b).collect();
    Ok(strategy.apply_gram_inverse(&y).into_iter().map(|v| mu * v).collect())
}
