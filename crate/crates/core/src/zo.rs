//! Two-point zeroth-order policy-gradient estimation.
//!
//! ```text
//! ∇̂J(K) = n_x n_u / (2 r² m) · Σ_l (J(K + U_l) − J(K − U_l)) U_l,   ‖U_l‖_F = r
//! ```
//!
//! Costs are exact infinite-horizon values. Each sample `l` draws from its
//! own substream, so the estimate does not depend on execution order.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lqr::{lqr_cost, InitialStateSpec, PlantModel};
use crate::matops::Mat;
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZoConfig {
    /// Smoothing radius `r`.
    pub radius: f64,
    /// Number of perturbation pairs `m`.
    pub samples: usize,
    /// Redraws allowed per sample when `K ± U` destabilizes; zero aborts.
    pub max_redraws: usize,
}

impl ZoConfig {
    pub fn new(radius: f64, samples: usize) -> Self {
        ZoConfig {
            radius,
            samples,
            max_redraws: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::config("r", "smoothing radius must be positive"));
        }
        if self.samples == 0 {
            return Err(Error::config("m", "need at least one sample"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ZoEstimate {
    pub grad_hat: Mat,
    pub samples_used: usize,
    /// Perturbations discarded because `K ± U` was not stabilizing.
    pub rejected: usize,
}

/// Uniform direction on the Frobenius sphere of radius `r`.
pub fn draw_sphere_perturbation<R: Rng + ?Sized>(n_u: usize, n_x: usize, r: f64, rng: &mut R) -> Mat {
    loop {
        let g = Mat::from_fn(n_u, n_x, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = g.frobenius_norm();
        if norm > 0.0 {
            return g.scale(r / norm);
        }
    }
}

fn sample_difference(model: &PlantModel, k: &Mat, u: &Mat, init: &InitialStateSpec) -> std::result::Result<f64, char> {
    let plus = lqr_cost(model, &(k + u), init).map_err(|_| '+')?;
    let minus = lqr_cost(model, &(k - u), init).map_err(|_| '-')?;
    Ok(plus - minus)
}

fn combine(n_x: usize, n_u: usize, r: f64, terms: &[(f64, Mat)]) -> Mat {
    let mut acc = Mat::zeros(n_u, n_x);
    for (diff, u) in terms {
        acc = acc + u.scale(*diff);
    }
    let scale = (n_x * n_u) as f64 / (2.0 * r * r * terms.len() as f64);
    acc.scale(scale)
}

/// Estimate from caller-supplied perturbations (each should have norm `r`).
pub fn zo_estimate_with(model: &PlantModel, k: &Mat, perturbations: &[Mat], r: f64, init: &InitialStateSpec) -> Result<Mat> {
    if perturbations.is_empty() {
        return Err(Error::config("m", "need at least one sample"));
    }
    let terms = perturbations
        .iter()
        .enumerate()
        .map(|(l, u)| {
            sample_difference(model, k, u, init)
                .map(|d| (d, u.clone()))
                .map_err(|sign| Error::PerturbationUnstable {
                    system: model.id,
                    sample: l,
                    sign,
                })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(combine(model.n_x(), model.n_u(), r, &terms))
}

/// Runs the estimator with sample `l` drawn from `rng::stream(stream_key, [l])`.
pub fn zo_estimate(model: &PlantModel, k: &Mat, cfg: &ZoConfig, init: &InitialStateSpec, stream_key: u64) -> Result<ZoEstimate> {
    cfg.validate()?;
    let (n_u, n_x) = (model.n_u(), model.n_x());
    if k.shape() != (n_u, n_x) {
        return Err(Error::DimensionMismatch(format!("gain is {:?}", k.shape())));
    }
    let samples = (0..cfg.samples)
        .into_par_iter()
        .map(|l| {
            let mut rng = rng::stream(stream_key, &[l as u64]);
            let mut rejected = 0;
            loop {
                let u = draw_sphere_perturbation(n_u, n_x, cfg.radius, &mut rng);
                match sample_difference(model, k, &u, init) {
                    Ok(d) => return Ok(((d, u), rejected)),
                    Err(sign) if rejected >= cfg.max_redraws => {
                        return Err(Error::PerturbationUnstable {
                            system: model.id,
                            sample: l,
                            sign,
                        })
                    }
                    Err(_) => rejected += 1,
                }
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let rejected = samples.iter().map(|(_, r)| r).sum();
    let terms: Vec<(f64, Mat)> = samples.into_iter().map(|(t, _)| t).collect();
    Ok(ZoEstimate {
        grad_hat: combine(n_x, n_u, cfg.radius, &terms),
        samples_used: terms.len(),
        rejected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lqr::analytic_gradient;
    use crate::nominal;

    fn scalar_plant() -> PlantModel {
        let s = |v: f64| Mat::from_row_major(1, 1, &[v]).unwrap();
        PlantModel::new(0, s(0.5), s(1.0), s(1.0), s(1.0)).unwrap()
    }

    #[test]
    fn sphere_draws_have_radius_and_progress() {
        let mut rng = rng::stream(1, &[]);
        let u1 = draw_sphere_perturbation(2, 4, 0.37, &mut rng);
        let u2 = draw_sphere_perturbation(2, 4, 0.37, &mut rng);
        assert!((u1.frobenius_norm() - 0.37).abs() < 1e-12);
        assert!((u2.frobenius_norm() - 0.37).abs() < 1e-12);
        assert_ne!(u1, u2);
    }

    #[test]
    fn single_fixed_perturbation_matches_formula() {
        let model = nominal::plant();
        let init = InitialStateSpec::identity(4);
        let k = nominal::initial_gain();
        let r = 1e-2;
        let u = draw_sphere_perturbation(2, 4, r, &mut rng::stream(9, &[]));
        let est = zo_estimate_with(&model, &k, std::slice::from_ref(&u), r, &init).unwrap();
        let jp = lqr_cost(&model, &(&k + &u), &init).unwrap();
        let jm = lqr_cost(&model, &(&k - &u), &init).unwrap();
        let expected = u.scale(8.0 / (2.0 * r * r) * (jp - jm));
        assert!((&est - &expected).max_abs() <= 1e-12 * expected.max_abs());
    }

    #[test]
    fn antithetic_perturbations_give_same_estimate() {
        let model = nominal::plant();
        let init = InitialStateSpec::identity(4);
        let k = nominal::initial_gain();
        let mut rng = rng::stream(4, &[]);
        let us: Vec<Mat> = (0..5).map(|_| draw_sphere_perturbation(2, 4, 1e-3, &mut rng)).collect();
        let flipped: Vec<Mat> = us.iter().map(|u| -u).collect();
        let a = zo_estimate_with(&model, &k, &us, 1e-3, &init).unwrap();
        let b = zo_estimate_with(&model, &k, &flipped, 1e-3, &init).unwrap();
        assert!((&a - &b).max_abs() <= 1e-12 * a.max_abs());
    }

    #[test]
    fn scalar_estimate_close_to_analytic() {
        let model = scalar_plant();
        let init = InitialStateSpec::identity(1);
        let k = Mat::from_row_major(1, 1, &[0.5]).unwrap();
        let est = zo_estimate(&model, &k, &ZoConfig::new(1e-4, 2000), &init, 17).unwrap();
        let g = analytic_gradient(&model, &k, &init).unwrap().get(0, 0);
        assert!((est.grad_hat.get(0, 0) - g).abs() <= 0.02 * g);
        assert_eq!(est.samples_used, 2000);
    }

    #[test]
    fn deterministic_for_fixed_stream() {
        let model = nominal::plant();
        let init = InitialStateSpec::identity(4);
        let k = nominal::initial_gain();
        let cfg = ZoConfig::new(1e-3, 20);
        let a = zo_estimate(&model, &k, &cfg, &init, 123).unwrap();
        let b = zo_estimate(&model, &k, &cfg, &init, 123).unwrap();
        assert_eq!(a, b);
        let c = zo_estimate(&model, &k, &cfg, &init, 124).unwrap();
        assert_ne!(a.grad_hat, c.grad_hat);
    }

    #[test]
    fn oversized_radius_aborts_or_redraws() {
        let model = nominal::plant();
        let init = InitialStateSpec::identity(4);
        let k = nominal::initial_gain();
        let err = zo_estimate(&model, &k, &ZoConfig::new(50.0, 4), &init, 1).unwrap_err();
        assert!(matches!(err, Error::PerturbationUnstable { system: 0, .. }));

        let cfg = ZoConfig { radius: 50.0, samples: 4, max_redraws: 10 };
        match zo_estimate(&model, &k, &cfg, &init, 1) {
            Ok(est) => assert!(est.rejected > 0),
            Err(e) => assert!(matches!(e, Error::PerturbationUnstable { .. })),
        }
    }

    #[test]
    fn config_validation() {
        assert!(ZoConfig::new(0.0, 3).validate().is_err());
        assert!(ZoConfig::new(0.1, 0).validate().is_err());
    }
}
