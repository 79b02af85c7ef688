//! Reference computations that take a different route from the solvers:
//! truncated series, explicit rollouts and finite differences. Used by the
//! verification suites and tests only.

use crate::error::Result;
use crate::lqr::{lqr_cost, InitialStateSpec, PlantModel};
use crate::matops::Mat;

/// `Σ_{t=0}^{T} (Fᵀ)ᵗ W Fᵗ`
pub fn truncated_lyapunov_series(f: &Mat, w: &Mat, horizon: usize) -> Mat {
    let ft = f.transpose();
    let mut term = w.clone();
    let mut sum = w.clone();
    for _ in 0..horizon {
        term = &ft * &term * f;
        sum = sum + &term;
    }
    sum
}

/// Expected cost over `T + 1` steps, propagating the state covariance
/// `Σ_{t+1} = (A−BK) Σ_t (A−BK)ᵀ` and summing `tr((Q + KᵀRK) Σ_t)`.
pub fn truncated_rollout_cost(model: &PlantModel, k: &Mat, init: &InitialStateSpec, horizon: usize) -> f64 {
    let f = &model.a - &(&model.b * k);
    let ft = f.transpose();
    let stage = &model.q + &(k.transpose() * &model.r * k);
    let mut sigma = init.sigma0.clone();
    let mut total = 0.0;
    for _ in 0..=horizon {
        total += (&stage * &sigma).trace();
        sigma = &f * &sigma * &ft;
    }
    total
}

/// Central differences of the exact cost, entry by entry.
pub fn finite_difference_gradient(model: &PlantModel, k: &Mat, init: &InitialStateSpec, step: f64) -> Result<Mat> {
    let (rows, cols) = k.shape();
    let mut g = Mat::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            let mut kp = k.clone();
            let mut km = k.clone();
            kp.set(i, j, k.get(i, j) + step);
            km.set(i, j, k.get(i, j) - step);
            let d = lqr_cost(model, &kp, init)? - lqr_cost(model, &km, init)?;
            g.set(i, j, d / (2.0 * step));
        }
    }
    Ok(g)
}

/// Largest entrywise relative error, with entries below `floor` compared absolutely.
pub fn max_rel_err(actual: &Mat, expected: &Mat, floor: f64) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..actual.rows() {
        for j in 0..actual.cols() {
            let (a, e) = (actual.get(i, j), expected.get(i, j));
            worst = worst.max((a - e).abs() / e.abs().max(floor));
        }
    }
    worst
}
