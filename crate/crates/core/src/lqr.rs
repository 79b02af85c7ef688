//! Single-system LQR: exact infinite-horizon cost, analytic policy gradient,
//! the Riccati optimum, and the sub-level set / gradient dominance constants.
//!
//! The expectation over the initial state is taken in closed form,
//! `J(K) = tr(P_K Σ₀)`, where `P_K` solves `P = (A−BK)ᵀP(A−BK) + Q + KᵀRK`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matops::{solve_dare, solve_dlyap, Mat};
use crate::rng;

/// One system `x_{t+1} = A x_t + B u_t` with stage cost `xᵀQx + uᵀRu`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantModel {
    pub id: usize,
    pub a: Mat,
    pub b: Mat,
    pub q: Mat,
    pub r: Mat,
}

impl PlantModel {
    pub fn new(id: usize, a: Mat, b: Mat, q: Mat, r: Mat) -> Result<Self> {
        let model = PlantModel { id, a, b, q, r };
        model.validate()?;
        Ok(model)
    }

    pub fn n_x(&self) -> usize {
        self.a.rows()
    }

    pub fn n_u(&self) -> usize {
        self.b.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let (n, m) = (self.a.rows(), self.b.cols());
        if !self.a.is_square()
            || self.b.rows() != n
            || self.q.shape() != (n, n)
            || self.r.shape() != (m, m)
        {
            return Err(Error::DimensionMismatch(format!(
                "system {}: A {:?}, B {:?}, Q {:?}, R {:?}",
                self.id,
                self.a.shape(),
                self.b.shape(),
                self.q.shape(),
                self.r.shape()
            )));
        }
        if !self.has_valid_costs() {
            return Err(Error::Malformed(format!(
                "system {}: Q must be symmetric PSD and R symmetric PD",
                self.id
            )));
        }
        Ok(())
    }

    /// `Q` symmetric PSD and `R` symmetric PD.
    pub fn has_valid_costs(&self) -> bool {
        let q_psd = self.q.is_symmetric(1e-12)
            && self
                .q
                .symmetric_eigenvalues()
                .first()
                .is_some_and(|&l| l >= -1e-12);
        q_psd && self.r.is_symmetric(1e-12) && self.r.is_positive_definite()
    }

    pub fn closed_loop(&self, k: &Mat) -> Mat {
        &self.a - &(&self.b * k)
    }

    fn check_gain(&self, k: &Mat) -> Result<()> {
        if k.shape() != (self.n_u(), self.n_x()) {
            return Err(Error::DimensionMismatch(format!(
                "gain is {:?}, expected {}x{}",
                k.shape(),
                self.n_u(),
                self.n_x()
            )));
        }
        Ok(())
    }

    /// Cost-to-go matrix `P_K`.
    pub fn cost_to_go(&self, k: &Mat) -> Result<Mat> {
        self.check_gain(k)?;
        let w = &self.q + &(k.transpose() * &self.r * k);
        solve_dlyap(&self.closed_loop(k), &w)
            .map(|s| s.x)
            .map_err(|_| Error::Unstable { system: self.id })
    }

    /// Aggregate state covariance `Σ_K = Σ_t (A−BK)ᵗ Σ₀ (A−BK)ᵗᵀ`.
    pub fn state_covariance(&self, k: &Mat, init: &InitialStateSpec) -> Result<Mat> {
        self.check_gain(k)?;
        solve_dlyap(&self.closed_loop(k).transpose(), &init.sigma0)
            .map(|s| s.x)
            .map_err(|_| Error::Unstable { system: self.id })
    }
}

/// Zero-mean initial state with covariance `Σ₀ ⪰ μI`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialStateSpec {
    pub sigma0: Mat,
    pub mu_lower: f64,
}

impl InitialStateSpec {
    pub fn identity(n_x: usize) -> Self {
        InitialStateSpec {
            sigma0: Mat::identity(n_x),
            mu_lower: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.sigma0.rows();
        if self.mu_lower.is_nan() || self.mu_lower <= 0.0 {
            return Err(Error::Malformed("mu_lower must be positive".into()));
        }
        let shifted = &self.sigma0 - &Mat::scaled_identity(n, self.mu_lower);
        let min_eig = shifted.symmetric_eigenvalues().first().copied().unwrap_or(0.0);
        if !self.sigma0.is_symmetric(1e-12) || min_eig < -1e-12 {
            return Err(Error::Malformed(
                "Sigma0 must be symmetric with Sigma0 - mu*I PSD".into(),
            ));
        }
        Ok(())
    }
}

/// A broadcast controller together with the server iteration that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Controller {
    pub k: Mat,
    pub stamp: usize,
}

impl Controller {
    pub fn new(k: Mat, stamp: usize) -> Self {
        Controller { k, stamp }
    }
}

pub fn lqr_cost(model: &PlantModel, k: &Mat, init: &InitialStateSpec) -> Result<f64> {
    let p = model.cost_to_go(k)?;
    Ok((&p * &init.sigma0).trace())
}

/// `∇J(K) = 2((R + BᵀP_K B)K − BᵀP_K A) Σ_K`
pub fn analytic_gradient(model: &PlantModel, k: &Mat, init: &InitialStateSpec) -> Result<Mat> {
    cost_and_gradient(model, k, init).map(|(_, g)| g)
}

pub fn cost_and_gradient(model: &PlantModel, k: &Mat, init: &InitialStateSpec) -> Result<(f64, Mat)> {
    let p = model.cost_to_go(k)?;
    let sigma = model.state_covariance(k, init)?;
    let bt_p = model.b.transpose() * &p;
    let e = (&model.r + &(&bt_p * &model.b)) * k - &bt_p * &model.a;
    Ok(((&p * &init.sigma0).trace(), (e * sigma).scale(2.0)))
}

/// Optimal controller of one system.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LqrOptimum {
    pub p_star: Mat,
    pub k_star: Mat,
    pub cost: f64,
}

pub fn optimum(model: &PlantModel, init: &InitialStateSpec) -> Result<LqrOptimum> {
    let sol = solve_dare(&model.a, &model.b, &model.q, &model.r)?;
    let cost = lqr_cost(model, &sol.k, init)?;
    Ok(LqrOptimum {
        p_star: sol.p,
        k_star: sol.k,
        cost,
    })
}

/// Number-of-variables constant of the two-point second-moment bound, `8 n_x²`.
pub fn c_zo(n_x: usize) -> f64 {
    8.0 * (n_x * n_x) as f64
}

/// Constants the convergence theory is stated in.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TheoryConstants {
    pub lambda_gd: f64,
    pub c_zo: f64,
    pub h_grad_est: f64,
    pub gamma: f64,
    /// Initial gaps `J⁽ⁱ⁾(K₀) − J⁽ⁱ⁾(K*_i)`, indexed by system id.
    pub delta0: Vec<f64>,
    /// Optimal costs `J⁽ⁱ⁾(K*_i)`, indexed by system id.
    pub optimal_cost: Vec<f64>,
}

impl TheoryConstants {
    /// Computes every constant for a set of systems sharing `k0`.
    ///
    /// `h_grad_est` is sampled around `k0` on the first system.
    pub fn compute(
        models: &[PlantModel],
        optima: &[LqrOptimum],
        k0: &Mat,
        init: &InitialStateSpec,
        gamma: f64,
        seed: u64,
    ) -> Result<Self> {
        if gamma < 1.0 {
            return Err(Error::config("gamma", "must be at least 1"));
        }
        let first = models
            .first()
            .ok_or_else(|| Error::Malformed("no systems".into()))?;
        let mut delta0 = vec![0.0; models.len()];
        let mut optimal_cost = vec![0.0; models.len()];
        for (m, opt) in models.iter().zip(optima) {
            let slot = m.id;
            if slot >= models.len() {
                return Err(Error::Malformed(format!("system id {slot} out of range")));
            }
            delta0[slot] = lqr_cost(m, k0, init)? - opt.cost;
            optimal_cost[slot] = opt.cost;
        }
        Ok(TheoryConstants {
            lambda_gd: gradient_dominance_lambda(models, optima, init)?,
            c_zo: c_zo(first.n_x()),
            h_grad_est: estimate_h_grad(first, k0, init, &HGradSampling::default(), seed)?,
            gamma,
            delta0,
            optimal_cost,
        })
    }
}

/// True iff `K` stabilizes the system and its gap stays within `γ Δ₀`.
pub fn check_sublevel(model: &PlantModel, k: &Mat, consts: &TheoryConstants, init: &InitialStateSpec) -> bool {
    let (Some(&d0), Some(&j_star)) = (consts.delta0.get(model.id), consts.optimal_cost.get(model.id)) else {
        return false;
    };
    match lqr_cost(model, k, init) {
        Ok(j) => j - j_star <= consts.gamma * d0,
        Err(_) => false,
    }
}

/// `λ = 4μ² max_i σ_min(R⁽ⁱ⁾) / ‖Σ_{K*_i}‖`
pub fn gradient_dominance_lambda(models: &[PlantModel], optima: &[LqrOptimum], init: &InitialStateSpec) -> Result<f64> {
    if models.is_empty() || models.len() != optima.len() {
        return Err(Error::Malformed("need one optimum per system".into()));
    }
    let mut best = f64::NEG_INFINITY;
    for (m, opt) in models.iter().zip(optima) {
        let sigma = m.state_covariance(&opt.k_star, init)?;
        let sigma_norm = sigma.symmetric_eigenvalues().last().copied().unwrap_or(0.0);
        let r_min = m.r.symmetric_eigenvalues().first().copied().unwrap_or(0.0);
        best = best.max(r_min / sigma_norm);
    }
    Ok(4.0 * init.mu_lower * init.mu_lower * best)
}

#[derive(Clone, Debug)]
pub struct HGradSampling {
    pub radius: f64,
    pub pairs: usize,
}

impl Default for HGradSampling {
    fn default() -> Self {
        HGradSampling {
            radius: 0.1,
            pairs: 200,
        }
    }
}

/// Uniform sample from the Frobenius ball of the given radius.
pub(crate) fn sample_ball<R: Rng>(rows: usize, cols: usize, radius: f64, rng: &mut R) -> Mat {
    let g = Mat::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal));
    let u: f64 = rng.random();
    let d = (rows * cols) as f64;
    g.scale(radius * u.powf(1.0 / d) / g.frobenius_norm())
}

/// Empirical local Lipschitz constant of the gradient: the largest ratio
/// `‖∇J(K)−∇J(K′)‖_F / ‖K−K′‖_F` over seeded pairs in a ball around `center`.
/// Pairs that leave the stabilizing set are skipped.
pub fn estimate_h_grad(
    model: &PlantModel,
    center: &Mat,
    init: &InitialStateSpec,
    sampling: &HGradSampling,
    seed: u64,
) -> Result<f64> {
    let mut rng = rng::stream(seed, &[rng::domain::H_GRAD, model.id as u64]);
    let (nu, nx) = center.shape();
    let mut best = 0.0f64;
    let mut used = 0;
    for _ in 0..sampling.pairs {
        let k1 = center + &sample_ball(nu, nx, sampling.radius, &mut rng);
        let k2 = center + &sample_ball(nu, nx, sampling.radius, &mut rng);
        let (Ok(g1), Ok(g2)) = (analytic_gradient(model, &k1, init), analytic_gradient(model, &k2, init)) else {
            continue;
        };
        let dk = (&k1 - &k2).frobenius_norm();
        if dk > 0.0 {
            best = best.max((&g1 - &g2).frobenius_norm() / dk);
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::Unstable { system: model.id });
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar(a: f64, b: f64, q: f64, r: f64) -> PlantModel {
        let s = |v: f64| Mat::from_row_major(1, 1, &[v]).unwrap();
        PlantModel::new(0, s(a), s(b), s(q), s(r)).unwrap()
    }

    #[test]
    fn single_step_cost_is_trace_q() {
        let m = PlantModel::new(0, Mat::zeros(4, 4), Mat::zeros(4, 2), Mat::identity(4), Mat::identity(2)).unwrap();
        let j = lqr_cost(&m, &Mat::zeros(2, 4), &InitialStateSpec::identity(4)).unwrap();
        assert_eq!(j, 4.0);
    }

    #[test]
    fn scalar_deadbeat_cost_and_gradient() {
        let m = scalar(0.5, 1.0, 1.0, 1.0);
        let k = Mat::from_row_major(1, 1, &[0.5]).unwrap();
        let init = InitialStateSpec::identity(1);
        assert_relative_eq!(lqr_cost(&m, &k, &init).unwrap(), 1.25, epsilon = 1e-14);
        assert_relative_eq!(analytic_gradient(&m, &k, &init).unwrap().get(0, 0), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn unstable_gain_is_reported() {
        let m = scalar(1.5, 1.0, 1.0, 1.0);
        let k = Mat::zeros(1, 1);
        let init = InitialStateSpec::identity(1);
        assert!(matches!(lqr_cost(&m, &k, &init), Err(Error::Unstable { system: 0 })));
        assert!(matches!(analytic_gradient(&m, &k, &init), Err(Error::Unstable { .. })));
    }

    #[test]
    fn gain_shape_is_checked() {
        let m = scalar(0.5, 1.0, 1.0, 1.0);
        let err = lqr_cost(&m, &Mat::zeros(1, 2), &InitialStateSpec::identity(1)).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch(_)));
    }

    #[test]
    fn invalid_cost_matrices_rejected() {
        let s = |v: f64| Mat::from_row_major(1, 1, &[v]).unwrap();
        assert!(PlantModel::new(0, s(0.5), s(1.0), s(-1.0), s(1.0)).is_err());
        assert!(PlantModel::new(0, s(0.5), s(1.0), s(1.0), s(0.0)).is_err());
    }

    #[test]
    fn lambda_scalar_no_dynamics() {
        let m = scalar(0.0, 1.0, 1.0, 1.0);
        let init = InitialStateSpec::identity(1);
        let opt = optimum(&m, &init).unwrap();
        assert_relative_eq!(opt.k_star.get(0, 0), 0.0, epsilon = 1e-12);
        let lambda = gradient_dominance_lambda(std::slice::from_ref(&m), std::slice::from_ref(&opt), &init).unwrap();
        assert_relative_eq!(lambda, 4.0, epsilon = 1e-12);
        let twice = gradient_dominance_lambda(&[m.clone(), m], &[opt.clone(), opt], &init).unwrap();
        assert_eq!(lambda, twice);
    }

    #[test]
    fn sublevel_membership() {
        let m = scalar(1.2, 1.0, 1.0, 1.0);
        let init = InitialStateSpec::identity(1);
        let opt = optimum(&m, &init).unwrap();
        let k0 = Mat::from_row_major(1, 1, &[0.9]).unwrap();
        let consts = TheoryConstants::compute(std::slice::from_ref(&m), std::slice::from_ref(&opt), &k0, &init, 1.0, 3).unwrap();
        assert!(check_sublevel(&m, &k0, &consts, &init));
        assert!(check_sublevel(&m, &opt.k_star, &consts, &init));
        assert!(!check_sublevel(&m, &Mat::zeros(1, 1), &consts, &init));
        assert_eq!(consts.c_zo, 8.0);
    }

    #[test]
    fn gamma_below_one_rejected() {
        let m = scalar(0.5, 1.0, 1.0, 1.0);
        let init = InitialStateSpec::identity(1);
        let opt = optimum(&m, &init).unwrap();
        let k0 = Mat::zeros(1, 1);
        assert!(TheoryConstants::compute(&[m], &[opt], &k0, &init, 0.5, 0).is_err());
    }

    #[test]
    fn initial_state_validation() {
        assert!(InitialStateSpec::identity(3).validate().is_ok());
        let bad = InitialStateSpec {
            sigma0: Mat::identity(2),
            mu_lower: 2.0,
        };
        assert!(bad.validate().is_err());
    }
}
