//! Heterogeneous fleets: structured random perturbations of a nominal plant
//! and empirical gradient heterogeneity.
//!
//! System `i ≥ 1` is `(A + aÃ, B + bB̃, Q + qQ̃, R + rR̃)` with masks
//! `Ã = diag(1..n_x)`, `B̃ = ones`, `Q̃ = 2I`, `R̃ = 2I` and scalars drawn
//! half-normal, `|z|·ε` with `z ~ N(0, 1)`. System 0 is the nominal plant.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lqr::{analytic_gradient, Controller, InitialStateSpec, PlantModel};
use crate::matops::{is_contractive, Mat};
use crate::rng;

pub const FLEET_SCHEMA: &str = "asynclqr.fleet/1";

/// Redraws allowed per system before generation fails.
pub const MAX_REDRAWS: usize = 100;

/// Half-normal scale parameters of the four perturbation scalars.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeterogeneityRadii {
    pub eps_a: f64,
    pub eps_b: f64,
    pub eps_q: f64,
    pub eps_r: f64,
}

impl HeterogeneityRadii {
    pub const ZERO: HeterogeneityRadii = HeterogeneityRadii {
        eps_a: 0.0,
        eps_b: 0.0,
        eps_q: 0.0,
        eps_r: 0.0,
    };

    /// Radii of the straggler and staleness experiments.
    pub const REFERENCE: HeterogeneityRadii = HeterogeneityRadii {
        eps_a: 5.46e-2,
        eps_b: 2.74e-2,
        eps_q: 3.96e-2,
        eps_r: 2.82e-2,
    };

    /// Radii of the batch-size experiment.
    pub const LOW: HeterogeneityRadii = HeterogeneityRadii {
        eps_a: 5.25e-3,
        eps_b: 2.80e-3,
        eps_q: 4.00e-3,
        eps_r: 2.82e-3,
    };

    pub fn scaled(&self, s: f64) -> Self {
        HeterogeneityRadii {
            eps_a: self.eps_a * s,
            eps_b: self.eps_b * s,
            eps_q: self.eps_q * s,
            eps_r: self.eps_r * s,
        }
    }

    fn as_array(&self) -> [f64; 4] {
        [self.eps_a, self.eps_b, self.eps_q, self.eps_r]
    }

    pub fn validate(&self) -> Result<()> {
        if self.as_array().iter().all(|e| e.is_finite() && *e >= 0.0) {
            Ok(())
        } else {
            Err(Error::config("radii", "all radii must be finite and nonnegative"))
        }
    }
}

/// Perturbation scalars `(a, b, q, r)` actually applied to one system.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub a: f64,
    pub b: f64,
    pub q: f64,
    pub r: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fleet {
    pub schema: String,
    pub seed: u64,
    pub radii: HeterogeneityRadii,
    pub init: InitialStateSpec,
    pub models: Vec<PlantModel>,
    /// Scalars applied to each system (all zero for system 0).
    pub perturbations: Vec<Perturbation>,
    /// Redraws spent per system.
    pub retries: Vec<usize>,
}

impl Fleet {
    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn nominal(&self) -> &PlantModel {
        &self.models[0]
    }

    pub fn total_retries(&self) -> usize {
        self.retries.iter().sum()
    }

    /// Fleet of `m` unperturbed copies.
    pub fn homogeneous(nominal: &PlantModel, m: usize, init: InitialStateSpec) -> Self {
        let models = (0..m)
            .map(|i| PlantModel {
                id: i,
                ..nominal.clone()
            })
            .collect();
        Fleet {
            schema: FLEET_SCHEMA.into(),
            seed: 0,
            radii: HeterogeneityRadii::ZERO,
            init,
            models,
            perturbations: vec![Perturbation { a: 0.0, b: 0.0, q: 0.0, r: 0.0 }; m],
            retries: vec![0; m],
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let fleet: Fleet = serde_json::from_str(s)?;
        fleet.validate()?;
        Ok(fleet)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != FLEET_SCHEMA {
            return Err(Error::Malformed(format!("unknown fleet schema `{}`", self.schema)));
        }
        if self.models.is_empty() {
            return Err(Error::Malformed("fleet has no systems".into()));
        }
        let (nx, nu) = (self.models[0].n_x(), self.models[0].n_u());
        for (i, m) in self.models.iter().enumerate() {
            m.validate()?;
            if m.id != i || m.n_x() != nx || m.n_u() != nu {
                return Err(Error::Malformed(format!("system {i} has inconsistent id or shape")));
            }
        }
        self.init.validate()
    }
}

/// Perturbation masks `(Ã, B̃, Q̃, R̃)` for the given dimensions.
pub fn masks(n_x: usize, n_u: usize) -> (Mat, Mat, Mat, Mat) {
    let diag: Vec<f64> = (1..=n_x).map(|i| i as f64).collect();
    (
        Mat::from_diagonal(&diag),
        Mat::filled(n_x, n_u, 1.0),
        Mat::scaled_identity(n_x, 2.0),
        Mat::scaled_identity(n_u, 2.0),
    )
}

/// Generates `m` systems around `nominal`, redrawing any system that `k0`
/// fails to stabilize.
pub fn generate_fleet(
    nominal: &PlantModel,
    k0: &Mat,
    radii: HeterogeneityRadii,
    m: usize,
    seed: u64,
    init: InitialStateSpec,
) -> Result<Fleet> {
    if m == 0 {
        return Err(Error::config("M", "fleet needs at least one system"));
    }
    radii.validate()?;
    nominal.validate()?;
    let (nx, nu) = (nominal.n_x(), nominal.n_u());
    if k0.shape() != (nu, nx) {
        return Err(Error::DimensionMismatch(format!("K0 is {:?}", k0.shape())));
    }
    if init.sigma0.rows() != nx {
        return Err(Error::DimensionMismatch("Sigma0 does not match n_x".into()));
    }
    let (ma, mb, mq, mr) = masks(nx, nu);
    let eps = radii.as_array();

    let mut models = vec![PlantModel { id: 0, ..nominal.clone() }];
    let mut perturbations = vec![Perturbation { a: 0.0, b: 0.0, q: 0.0, r: 0.0 }];
    let mut retries = vec![0];

    for i in 1..m {
        // one independent stream per (system, matrix)
        let mut streams: Vec<_> = (0..4u64)
            .map(|j| rng::stream(seed, &[rng::domain::FLEET, i as u64, j]))
            .collect();
        let mut accepted = None;
        for attempt in 0..=MAX_REDRAWS {
            let s: Vec<f64> = streams
                .iter_mut()
                .zip(eps)
                .map(|(st, e)| st.sample::<f64, _>(StandardNormal).abs() * e)
                .collect();
            let candidate = PlantModel {
                id: i,
                a: &nominal.a + &ma.scale(s[0]),
                b: &nominal.b + &mb.scale(s[1]),
                q: &nominal.q + &mq.scale(s[2]),
                r: &nominal.r + &mr.scale(s[3]),
            };
            if candidate.has_valid_costs() && is_contractive(&candidate.closed_loop(k0)) {
                accepted = Some((candidate, Perturbation { a: s[0], b: s[1], q: s[2], r: s[3] }, attempt));
                break;
            }
        }
        let (model, pert, attempts) = accepted.ok_or(Error::GenerationFailed {
            system: i,
            retries: MAX_REDRAWS,
        })?;
        models.push(model);
        perturbations.push(pert);
        retries.push(attempts);
    }

    Ok(Fleet {
        schema: FLEET_SCHEMA.into(),
        seed,
        radii,
        init,
        models,
        perturbations,
        retries,
    })
}

/// Spectral-norm differences between two systems' matrices.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PairGap {
    pub i: usize,
    pub j: usize,
    pub a: f64,
    pub b: f64,
    pub q: f64,
    pub r: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FleetStats {
    /// `max_{i≠j} ‖∇J⁽ⁱ⁾(K) − ∇J⁽ʲ⁾(K)‖²_F` at the probe.
    pub eps_het_hat: f64,
    pub pairwise_norm_gaps: Vec<PairGap>,
}

fn spectral_norm(m: &Mat) -> f64 {
    let gram = m.transpose() * m;
    gram.symmetric_eigenvalues().last().copied().unwrap_or(0.0).max(0.0).sqrt()
}

pub fn measure_heterogeneity(fleet: &Fleet, probe: &Controller) -> Result<FleetStats> {
    let grads: Vec<Mat> = fleet
        .models
        .par_iter()
        .map(|m| analytic_gradient(m, &probe.k, &fleet.init))
        .collect::<Result<_>>()?;
    let n = fleet.models.len();
    let mut eps_het_hat = 0.0f64;
    let mut pairwise_norm_gaps = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            eps_het_hat = eps_het_hat.max((&grads[i] - &grads[j]).frobenius_norm_sq());
            let (mi, mj) = (&fleet.models[i], &fleet.models[j]);
            pairwise_norm_gaps.push(PairGap {
                i,
                j,
                a: spectral_norm(&(&mi.a - &mj.a)),
                b: spectral_norm(&(&mi.b - &mj.b)),
                q: spectral_norm(&(&mi.q - &mj.q)),
                r: spectral_norm(&(&mi.r - &mj.r)),
            });
        }
    }
    Ok(FleetStats {
        eps_het_hat,
        pairwise_norm_gaps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nominal;

    fn reference(radii: HeterogeneityRadii, m: usize, seed: u64) -> Fleet {
        generate_fleet(&nominal::plant(), &nominal::initial_gain(), radii, m, seed, InitialStateSpec::identity(4)).unwrap()
    }

    #[test]
    fn zero_radii_gives_identical_copies() {
        let f = reference(HeterogeneityRadii::ZERO, 5, 1);
        assert_eq!(f.len(), 5);
        for m in &f.models {
            assert_eq!(m.a, f.models[0].a);
            assert_eq!(m.b, f.models[0].b);
            assert_eq!(m.q, f.models[0].q);
            assert_eq!(m.r, f.models[0].r);
        }
        let stats = measure_heterogeneity(&f, &nominal::initial_controller()).unwrap();
        assert_eq!(stats.eps_het_hat, 0.0);
    }

    #[test]
    fn masks_for_reference_dims() {
        let (a, b, q, r) = masks(4, 2);
        assert_eq!(a, Mat::from_diagonal(&[1.0, 2.0, 3.0, 4.0]));
        assert_eq!(b, Mat::filled(4, 2, 1.0));
        assert_eq!(q, Mat::from_diagonal(&[2.0; 4]));
        assert_eq!(r, Mat::from_diagonal(&[2.0; 2]));
    }

    #[test]
    fn seeded_fleet_is_stabilized_and_reproducible() {
        let f1 = reference(HeterogeneityRadii::REFERENCE, 10, 7);
        let f2 = reference(HeterogeneityRadii::REFERENCE, 10, 7);
        assert_eq!(f1, f2);
        let k0 = nominal::initial_gain();
        assert!(f1.models.iter().all(|m| is_contractive(&m.closed_loop(&k0))));
        assert_eq!(f1.models[0], nominal::plant());
        assert!(f1.perturbations[1..].iter().all(|p| p.a >= 0.0 && p.b >= 0.0));
        let bits = |f: &Fleet| -> Vec<u64> { f.perturbations.iter().map(|p| p.a.to_bits()).collect() };
        assert_eq!(bits(&f1), bits(&f2));
    }

    #[test]
    fn prefix_is_stable_when_fleet_grows() {
        let small = reference(HeterogeneityRadii::REFERENCE, 4, 11);
        let large = reference(HeterogeneityRadii::REFERENCE, 8, 11);
        assert_eq!(small.models[..], large.models[..4]);
    }

    #[test]
    fn duplicated_model_has_zero_heterogeneity() {
        let mut f = reference(HeterogeneityRadii::REFERENCE, 2, 3);
        f.models[1] = PlantModel { id: 1, ..f.models[0].clone() };
        let probe = Controller::new(nominal::initial_gain().scale(1.01), 0);
        assert_eq!(measure_heterogeneity(&f, &probe).unwrap().eps_het_hat, 0.0);
    }

    #[test]
    fn heterogeneity_grows_with_radii() {
        let probe = nominal::initial_controller();
        let base = measure_heterogeneity(&reference(HeterogeneityRadii::REFERENCE, 10, 7), &probe).unwrap();
        let doubled = measure_heterogeneity(&reference(HeterogeneityRadii::REFERENCE.scaled(2.0), 10, 7), &probe).unwrap();
        assert!(base.eps_het_hat > 0.0);
        assert!(doubled.eps_het_hat >= base.eps_het_hat);
    }

    #[test]
    fn oversized_radii_fail_generation() {
        let err = generate_fleet(
            &nominal::plant(),
            &nominal::initial_gain(),
            HeterogeneityRadii { eps_a: 1e4, ..HeterogeneityRadii::ZERO },
            3,
            1,
            InitialStateSpec::identity(4),
        )
        .unwrap_err();
        assert!(matches!(err, Error::GenerationFailed { system: 1, .. }));
    }

    #[test]
    fn json_round_trip() {
        let f = reference(HeterogeneityRadii::REFERENCE, 3, 5);
        let back = Fleet::from_json(&f.to_json().unwrap()).unwrap();
        assert_eq!(f, back);
        let mut bad = f.clone();
        bad.schema = "other".into();
        assert!(Fleet::from_json(&bad.to_json().unwrap()).is_err());
    }
}
