mod common;

use force_core::certificate::{certify, SearchMode, CERT_TOL};
use force_core::glatent::{
    build_instance, model_truth, sample, sample_cov, GLatentDesign, GammaChoice,
};
use force_core::matlin::SymMatrix;
use force_core::problem::{
    check_feasibility, feasible_start_fixed, partnership_matrix, primal_objective, SdpInstance,
};
use force_core::rounding::{best_of_n, clink, kmeanspp_lloyd, metric_d1, RoundingConfig};
use force_core::solver::iterate::lambda_min_augmented;
use force_core::solver::{
    force_default, smoothed_objective, solve_sdp, AugmentedIterate, SolverConfig, StartGeometry,
};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;

use common::*;

#[test]
fn clink_matches_naive_complete_linkage() {
    let mut r = rng(11);
    for trial in 0..40 {
        let d = 5 + trial % 20;
        let m = random_sym(d, 1.0, &mut r);
        let points: Vec<Vec<f64>> = (0..d)
            .map(|i| (0..d).map(|j| m.get(i, j)).collect())
            .collect();
        for k in [1, 2, 3, d / 2, d - 1] {
            assert_eq!(
                clink(&m, k).unwrap(),
                naive_complete_linkage(&points, k),
                "d={d} k={k}"
            );
        }
    }
}

#[test]
fn lloyd_recovers_separated_blocks() {
    let mut r = rng(3);
    let (dm, g) = planted_instance(&[4, 5, 6], 0.0, 10.0, 0.01, &mut r);
    let b = partnership_matrix(&g);
    let config = RoundingConfig {
        restarts: 5,
        ..Default::default()
    };
    assert_eq!(kmeanspp_lloyd(&b, 3, &config).unwrap(), g);
    let neg = dm.scale(-1.0);
    let (best, trials) = best_of_n(&neg, &dm, 3, 20, 7, 100).unwrap();
    assert_eq!(trials.len(), 20);
    let top = trials
        .iter()
        .map(|t| t.objective)
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(
        primal_objective(
            &SdpInstance::fixed(dm, 3).unwrap(),
            &partnership_matrix(&best)
        )
        .unwrap(),
        top
    );
}

#[test]
fn glatent_sample_covariance_converges() {
    let design = GLatentDesign::balanced(9, 3, 0.3, 0.5, 21).unwrap();
    let truth = model_truth(&design).unwrap();
    let n = 200_000;
    let s = sample_cov(&sample(&design, &truth, n).unwrap().x).unwrap();
    let l = truth.gstar.labels();
    let sigma = SymMatrix::from_fn(9, |i, j| {
        truth.c_star.get(l[i], l[j]) + if i == j { truth.gamma_star[i] } else { 0.0 }
    });
    // Entrywise standard error is at most sqrt(2/n) * max variance.
    let var_max = sigma.diagonal().into_iter().fold(0.0, f64::max);
    let tol = 6.0 * (2.0 / n as f64).sqrt() * var_max;
    assert!(
        s.max_abs_diff(&sigma) < tol,
        "{} vs {tol}",
        s.max_abs_diff(&sigma)
    );
    assert!(truth.delta > 0.0);
}

#[test]
fn glatent_is_seed_reproducible() {
    let design = GLatentDesign::balanced(15, 3, 0.3, 0.2, 5).unwrap();
    let a = build_instance(&design, 50, true, GammaChoice::Pecok).unwrap();
    let b = build_instance(&design, 50, true, GammaChoice::Pecok).unwrap();
    assert_eq!(a.sample, b.sample);
    assert_eq!(a.gamma_hat, b.gamma_hat);
    let other = GLatentDesign { seed: 6, ..design };
    assert_ne!(
        build_instance(&other, 50, true, GammaChoice::Pecok)
            .unwrap()
            .sample,
        a.sample
    );
}

#[test]
fn pecok_estimate_is_close_at_large_n() {
    let design = GLatentDesign::balanced(20, 4, 0.3, 0.4, 2).unwrap();
    let sim = build_instance(&design, 20_000, true, GammaChoice::Pecok).unwrap();
    for g in &sim.gamma_hat {
        assert!((g - 0.4).abs() < 0.05, "{g}");
    }
}

#[test]
fn solver_agrees_with_admm_on_random_instances() {
    let mut r = rng(17);
    for trial in 0..4 {
        let d = 6;
        // Distance-like data so the optimum is well away from zero.
        let pts: Vec<f64> = (0..d).map(|_| r.random::<f64>() * 4.0).collect();
        let dm = SymMatrix::from_fn(d, |i, j| (pts[i] - pts[j]).abs() + 1.0);
        let inst = SdpInstance::fixed(dm.clone(), 2).unwrap();
        let admm = admm_sdp(&dm, Some(2), 200_000, 1e-11);
        assert!(
            admm.residual < 1e-9,
            "trial {trial}: ADMM residual {}",
            admm.residual
        );
        let config = SolverConfig {
            epsilon: 1e-3,
            stop_delta: 1e-9,
            t_max: 100_000,
            ..Default::default()
        };
        let res = solve_sdp(&inst, inst.feasible_start().unwrap(), &config).unwrap();
        let rep = check_feasibility(&inst, &res.u_final).unwrap();
        assert!(rep.is_feasible(1e-7), "{rep:?}");
        // The relaxed point is feasible, so it cannot beat the optimum.
        assert!(res.objective <= admm.value + 1e-7 * admm.value.abs());
        let rel = (admm.value - res.objective).abs() / admm.value.abs();
        assert!(rel < 2e-3, "trial {trial}: rel {rel}");
    }
}

#[test]
fn certified_solution_is_optimal() {
    let mut r = rng(23);
    let (dm, g) = planted_instance(&[3, 3, 4], 1.0, 3.0, 0.2, &mut r);
    let inst = SdpInstance::fixed(dm.clone(), 3).unwrap();
    let res = force_default(&inst, &SolverConfig::default()).unwrap();
    let cert = res
        .certificate
        .expect("well separated instance is certified");
    assert_eq!(res.rounded.as_ref(), Some(&g));
    let admm = admm_sdp(&dm, Some(3), 200_000, 1e-11);
    assert!((cert.value - admm.value).abs() < 1e-7 * admm.value.abs());
    assert!(
        certify(&inst, &g, SearchMode::Direct, CERT_TOL)
            .unwrap()
            .feasible
    );
    assert_eq!(metric_d1(res.rounded.as_ref().unwrap(), &g).unwrap(), 1.0);
}

#[test]
fn adaptive_certificate_matches_admm() {
    let mut r = rng(29);
    let (dm, g) = planted_instance(&[3, 4], 1.0, 3.0, 0.1, &mut r);
    // Large enough that singletons lose, small enough that merging loses.
    let kh = 2.0;
    let inst = SdpInstance::adaptive(dm.clone(), kh).unwrap();
    let cert = certify(&inst, &g, SearchMode::Direct, CERT_TOL).unwrap();
    assert!(cert.feasible);
    let admm = admm_sdp(&dm.shifted(kh), None, 200_000, 1e-11);
    assert!(
        (cert.value - admm.value).abs() < 1e-7 * admm.value.abs(),
        "{} vs {}",
        cert.value,
        admm.value
    );
}

/// Eigenvalues of `F'^{-1/2} V' F'^{-1/2}` with `V' = diag(V, diag(S))`, `F' = diag(F, diag(F_ab))`
/// assembled as a dense `(d + d^2)` square matrix.
fn materialized_spectrum(it: &AugmentedIterate, f: &SymMatrix) -> Vec<f64> {
    let d = f.dim();
    let n = d + d * d;
    let mut vp = DMatrix::zeros(n, n);
    let mut fp = DMatrix::zeros(n, n);
    for i in 0..d {
        for j in 0..d {
            vp[(i, j)] = it.v.get(i, j);
            fp[(i, j)] = f.get(i, j);
            vp[(d + i * d + j, d + i * d + j)] = it.slack.get(i, j);
            fp[(d + i * d + j, d + i * d + j)] = f.get(i, j);
        }
    }
    let e = SymmetricEigen::new(fp);
    let inv_sqrt = &e.eigenvectors
        * DMatrix::from_diagonal(&e.eigenvalues.map(|x| 1.0 / x.sqrt()))
        * e.eigenvectors.transpose();
    let m = &inv_sqrt * vp * &inv_sqrt;
    SymmetricEigen::new(0.5 * (&m + m.transpose()))
        .eigenvalues
        .iter()
        .copied()
        .collect()
}

#[test]
fn augmented_spectrum_matches_materialized_matrix() {
    let mut r = rng(31);
    for d in [3usize, 4] {
        let f = feasible_start_fixed(d, 2).unwrap();
        let geo = StartGeometry::new(f).unwrap();
        let fm = f.materialize();
        for _ in 0..10 {
            let mut v = fm.clone();
            v.add_scaled(0.3, &random_sym(d, 1.0, &mut r));
            let it = AugmentedIterate {
                v: v.clone(),
                slack: v,
            };
            let spec = materialized_spectrum(&it, &fm);
            let lmin = spec.iter().copied().fold(f64::INFINITY, f64::min);
            assert!((lambda_min_augmented(&it, &geo).unwrap() - lmin).abs() < 1e-10);
            let mu = 0.05;
            let expected = -mu
                * spec
                    .iter()
                    .map(|l| (-(l - lmin) / mu).exp())
                    .sum::<f64>()
                    .ln()
                + lmin;
            let got = smoothed_objective(&it, &geo, mu).unwrap();
            assert!((got - expected).abs() < 1e-10, "{got} vs {expected}");
        }
    }
}
