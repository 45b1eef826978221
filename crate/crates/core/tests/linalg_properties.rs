use nalgebra::DMatrix;
use nudgefem::fem::{assemble_operators, QuadratureConfig};
use nudgefem::linalg::{factorize, pcg_solve, smw_solve, CsrMatrix, LowRankCorrection, SmwSolver};
use nudgefem::mesh::Mesh;
use nudgefem::strategies::{build_strategy, nudging_correction, MeanScaling, StrategyKind};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random sparse SPD matrix with a narrow band: a diagonally dominant tridiagonal-plus pattern.
fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> CsrMatrix {
    let mut t = Vec::new();
    for i in 0..n {
        t.push((i, i, 4.0 + rng.random_range(0.0..1.0)));
        for off in 1..=2 {
            if i + off < n {
                let v = rng.random_range(-1.0..1.0);
                t.push((i, i + off, v));
                t.push((i + off, i, v));
            }
        }
    }
    CsrMatrix::from_triplets(n, n, t)
}

fn random_correction(n: usize, r: usize, rng: &mut ChaCha8Rng) -> LowRankCorrection {
    let u = DMatrix::from_fn(n, r, |_, _| rng.random_range(-1.0..1.0));
    let b = DMatrix::from_fn(r, r, |_, _| rng.random_range(-1.0..1.0));
    let w = &b * b.transpose() + DMatrix::identity(r, r) * 0.1;
    LowRankCorrection::new(u, w, 1.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]
    #[test]
    fn woodbury_matches_dense_inverse(n in 3usize..=20, r in 0usize..=4, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_spd(n, &mut rng);
        let corr = random_correction(n, r.min(n), &mut rng);
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();

        let dense = a.to_dense() + &corr.u * &corr.w * corr.u.transpose() * corr.sign;
        let expected = dense.lu().solve(&nalgebra::DVector::from_vec(b.clone())).unwrap();
        let base = factorize(&a, true).unwrap();
        let x = smw_solve(&base, &corr, &b).unwrap();
        for (xi, ei) in x.iter().zip(expected.iter()) {
            prop_assert!((xi - ei).abs() <= 1e-11 * (1.0 + ei.abs()));
        }
    }
}

#[test]
fn woodbury_five_by_five_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = random_spd(5, &mut rng);
    let corr = random_correction(5, 2, &mut rng);
    let b = vec![1.0, -2.0, 0.5, 3.0, -1.0];
    let dense = a.to_dense() + &corr.u * &corr.w * corr.u.transpose();
    let inv = dense.try_inverse().unwrap();
    let expected = inv * nalgebra::DVector::from_vec(b.clone());
    let x = smw_solve(&factorize(&a, true).unwrap(), &corr, &b).unwrap();
    for (xi, ei) in x.iter().zip(expected.iter()) {
        assert!((xi - ei).abs() <= 1e-12);
    }
}

#[test]
fn reused_factorization_is_bitwise_deterministic() {
    let mesh = Mesh::new(3).unwrap();
    let ops = assemble_operators(&mesh, |_| 1.0, &QuadratureConfig::default()).unwrap();
    let a = CsrMatrix::linear_combination(&[(16.0, &ops.mass), (1.0, &ops.stiffness)]);
    let once = factorize(&a, true).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let b: Vec<f64> = (0..a.nrows()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let fresh = factorize(&a, true).unwrap();
        let x = once.solve(&b);
        let y = fresh.solve(&b);
        assert!(x.iter().zip(&y).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}

#[test]
fn mean_value_woodbury_agrees_with_pcg() {
    let mesh = Mesh::new(4).unwrap();
    let quad = QuadratureConfig::default();
    let ops = assemble_operators(&mesh, |_| 1.0, &quad).unwrap();
    let tau = 3.0 / 32.0;
    let base = CsrMatrix::linear_combination(&[(1.0 / tau, &ops.mass), (1.0, &ops.stiffness)]);
    let strategy = build_strategy(StrategyKind::MeanValue, 2, &mesh, &quad, MeanScaling::YNorm).unwrap();
    let corr = nudging_correction(&strategy, 64.0).unwrap();
    assert_eq!(corr.rank(), 1);
    let solver = SmwSolver::new(factorize(&base, true).unwrap(), corr.clone()).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let b: Vec<f64> = (0..mesh.num_nodes()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let x = solver.solve(&b).unwrap();
    let mut precond = base.diag();
    for (p, c) in precond.iter_mut().zip(corr.diag()) {
        *p += c;
    }
    let y = pcg_solve(
        |v, out| {
            base.mul_vec_into(v, out);
            for (o, c) in out.iter_mut().zip(corr.apply(v)) {
                *o += c;
            }
        },
        &precond,
        &b,
        1e-13,
        10_000,
    )
    .unwrap();
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(x.iter().zip(&y.x).all(|(p, q)| (p - q).abs() <= 1e-9 * scale));
}

#[test]
fn pcg_reports_forced_failure() {
    let mut t = Vec::new();
    for i in 0..6 {
        t.push((i, i, 2.0));
        if i + 1 < 6 {
            t.push((i, i + 1, -1.0));
            t.push((i + 1, i, -1.0));
        }
    }
    let a = CsrMatrix::from_triplets(6, 6, t);
    let b = [1.0, 0.0, 0.0, 0.0, 0.0, 1.5];
    let err = pcg_solve(|x, y| a.mul_vec_into(x, y), &[2.0; 6], &b, 1e-30, 2);
    assert!(matches!(err, Err(nudgefem::Error::NonConvergence { .. })));
}
