//! Built-in nominal system and initial controller used by every preset.

use crate::lqr::{Controller, PlantModel};
use crate::matops::Mat;

#[rustfmt::skip]
const A: [f64; 16] = [
    1.22,  0.03, -0.02, -0.32,
    0.01,  0.47,  4.70,  0.00,
    0.02, -0.06,  0.40,  0.00,
    0.01, -0.04,  0.72,  1.55,
];

#[rustfmt::skip]
const B: [f64; 8] = [
     0.01, 0.99,
    -3.44, 1.66,
    -0.83, 0.44,
    -0.47, 0.25,
];

// Riccati gain of the input-penalized cost (Q, 10R), rounded to four decimals.
// Stabilizing (spectral radius ~0.689) with an initial gap of ~20.04.
#[rustfmt::skip]
const K0: [f64; 8] = [
    0.2528,  0.1011, -0.9695, -2.2689,
    0.4776, -0.0063,  0.2783,  0.4548,
];

pub const N_X: usize = 4;
pub const N_U: usize = 2;

/// Samples per zeroth-order estimate used in the reference experiments.
pub const ZO_SAMPLES: usize = 20;

/// The 4-state, 2-input nominal plant with `Q = I₄`, `R = I₂`.
pub fn plant() -> PlantModel {
    PlantModel {
        id: 0,
        a: Mat::from_row_major(N_X, N_X, &A).expect("static shape"),
        b: Mat::from_row_major(N_X, N_U, &B).expect("static shape"),
        q: Mat::identity(N_X),
        r: Mat::identity(N_U),
    }
}

/// Stabilizing, sub-optimal initial gain for the nominal plant.
pub fn initial_gain() -> Mat {
    Mat::from_row_major(N_U, N_X, &K0).expect("static shape")
}

pub fn initial_controller() -> Controller {
    Controller::new(initial_gain(), 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matops::{is_contractive, spectral_radius_estimate};

    #[test]
    fn initial_gain_stabilizes_nominal() {
        let p = plant();
        let f = p.closed_loop(&initial_gain());
        assert!(is_contractive(&f));
        assert!(spectral_radius_estimate(&f) < 1.0);
        // the open loop is unstable
        assert!(!is_contractive(&p.a));
    }

    #[test]
    fn entries_match_tables() {
        let p = plant();
        assert_eq!(p.a.get(1, 2), 4.70);
        assert_eq!(p.a.get(3, 3), 1.55);
        assert_eq!(p.b.get(1, 0), -3.44);
        assert_eq!(initial_gain().get(1, 3), 0.4548);
    }
}
