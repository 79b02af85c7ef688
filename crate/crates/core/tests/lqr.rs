use asynclqr::lqr::{
    analytic_gradient, estimate_h_grad, lqr_cost, optimum, HGradSampling, InitialStateSpec, PlantModel,
};
use asynclqr::oracle::{finite_difference_gradient, max_rel_err, truncated_rollout_cost};
use asynclqr::{nominal, Error, Mat};

fn init() -> InitialStateSpec {
    InitialStateSpec::identity(4)
}

#[test]
fn cost_matches_rollout() {
    let (p, k) = (nominal::plant(), nominal::initial_gain());
    let j = lqr_cost(&p, &k, &init()).unwrap();
    let rollout = truncated_rollout_cost(&p, &k, &init(), 5000);
    assert!((j - rollout).abs() <= 1e-8 * j, "{j} vs {rollout}");
}

#[test]
fn gradient_matches_finite_differences() {
    let (p, k) = (nominal::plant(), nominal::initial_gain());
    let g = analytic_gradient(&p, &k, &init()).unwrap();
    let fd = finite_difference_gradient(&p, &k, &init(), 1e-6).unwrap();
    assert!(max_rel_err(&g, &fd, 1e-3) <= 1e-5);
}

#[test]
fn gradient_vanishes_at_the_optimum() {
    let opt = optimum(&nominal::plant(), &init()).unwrap();
    let g = analytic_gradient(&nominal::plant(), &opt.k_star, &init()).unwrap();
    assert!(g.frobenius_norm() <= 1e-8, "{}", g.frobenius_norm());
    assert!(lqr_cost(&nominal::plant(), &nominal::initial_gain(), &init()).unwrap() > opt.cost);
}

#[test]
fn gradient_descent_reaches_the_riccati_gain() {
    let p = nominal::plant();
    let opt = optimum(&p, &init()).unwrap();
    let mut k = nominal::initial_gain();
    let mut g = analytic_gradient(&p, &k, &init()).unwrap();
    // near K* cost decreases drop below round-off, so only instability halves the step
    let mut eta = 3e-5;
    for _ in 0..300_000 {
        if (&k - &opt.k_star).frobenius_norm() <= 1e-6 {
            break;
        }
        let trial = &k - &g.scale(eta);
        match analytic_gradient(&p, &trial, &init()) {
            Ok(gt) => (k, g) = (trial, gt),
            Err(_) => eta /= 2.0,
        }
    }
    let err = (&k - &opt.k_star).frobenius_norm();
    assert!(err <= 1e-6, "‖K − K*‖ = {err}");
}

#[test]
fn destabilizing_gain_is_an_error() {
    let p = nominal::plant();
    let k = Mat::zeros(2, 4);
    // the open-loop plant is unstable
    assert!(matches!(lqr_cost(&p, &k, &init()), Err(Error::Unstable { system: 0 })));
    assert!(analytic_gradient(&p, &k, &init()).is_err());
}

#[test]
fn mismatched_dimensions_are_rejected() {
    let p = nominal::plant();
    assert!(lqr_cost(&p, &Mat::zeros(4, 2), &init()).is_err());
    assert!(PlantModel::new(0, Mat::identity(3), p.b.clone(), p.q.clone(), p.r.clone()).is_err());
}

#[test]
fn h_grad_estimate_is_reproducible() {
    let (p, k) = (nominal::plant(), nominal::initial_gain());
    let s = HGradSampling { radius: 0.05, pairs: 50 };
    let a = estimate_h_grad(&p, &k, &init(), &s, 3).unwrap();
    let b = estimate_h_grad(&p, &k, &init(), &s, 3).unwrap();
    assert_eq!(a.to_bits(), b.to_bits());
    assert!(a > 0.0 && a.is_finite());
}
