mod support;

use std::f64::consts::PI;

use nudgefem::problems::{make_problem, ProblemKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::weak_form::{boundary_flux, weak_residual, TestFunction};

fn check_problem(kind: ProblemKind) {
    let mut rng = ChaCha8Rng::seed_from_u64(7 + kind as u64);
    for omega in [0.0, PI] {
        let problem = make_problem(kind, omega).unwrap();
        for t in [0.0, 0.37, 1.5] {
            for _ in 0..20 {
                let v = TestFunction { a: rng.random_range(-3.0..3.0), b: rng.random_range(-3.0..3.0), c: rng.random_range(0.0..PI) };
                let r = weak_residual(&problem, &v, t);
                assert!(r.abs() <= 1e-8, "{kind} omega={omega} t={t}: residual {r:e}");
            }
        }
    }
}

#[test]
fn smooth_is_a_weak_solution() {
    check_problem(ProblemKind::Smooth);
}

#[test]
fn point_source_is_a_weak_solution() {
    check_problem(ProblemKind::Dirac);
}

#[test]
fn kellogg_is_a_weak_solution() {
    check_problem(ProblemKind::Kellogg);
}

#[test]
fn residual_detects_wrong_point_source_sign() {
    let problem = make_problem(ProblemKind::Dirac, 0.0).unwrap();
    let v = TestFunction { a: 0.0, b: 0.0, c: 0.0 };
    let r = weak_residual(&problem, &v, 0.0);
    assert!(r.abs() < 1e-8);
    // flipping the source leaves a residual of twice its mass
    let flipped = 2.0 * problem.point_source().unwrap().1 * v.value(problem.x0);
    assert!((r + flipped).abs() > 1.0);
}

#[test]
fn neumann_data_carries_the_source_mass() {
    let dirac = make_problem(ProblemKind::Dirac, 0.0).unwrap();
    assert!((boundary_flux(&dirac, 0.0) - 1.0).abs() <= 1e-8);
    let kellogg = make_problem(ProblemKind::Kellogg, 0.0).unwrap();
    assert!(boundary_flux(&kellogg, 0.0).abs() <= 1e-8);
    let smooth = make_problem(ProblemKind::Smooth, 0.0).unwrap();
    // ∫ ∂_n |x − x₀|² = ∫ Δ|x − x₀|² = 4 |Ω|
    assert!((boundary_flux(&smooth, 0.0) - 16.0).abs() <= 1e-10);
}
