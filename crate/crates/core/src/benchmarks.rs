//! The three reference systems with their published parameters.

use std::f64::consts::PI;

use crate::dynamics::{Dynamics, SystemModel};
use crate::geometry::IntervalBox;

fn bx(lo: &[f64], hi: &[f64]) -> IntervalBox {
    IntervalBox::new(lo.to_vec(), hi.to_vec()).expect("static benchmark boxes are valid")
}

/// Double integrator with `tau = 1`, noise covariance `0.15 I`, inputs in
/// `[-5, 5]`, goal `[-4, 4] x [-2, 2]` and the safe set `[-21, 21]^2`.
pub fn double_integrator() -> SystemModel {
    let s = 0.15f64.sqrt();
    SystemModel {
        name: "double_integrator".into(),
        dynamics: Dynamics::DoubleIntegrator { tau: 1.0 },
        state_box: bx(&[-21.0, -21.0], &[21.0, 21.0]),
        input_box: bx(&[-5.0], &[5.0]),
        noise_std: vec![s, s],
        wrap_dims: vec![],
        goal_box: bx(&[-4.0, -2.0], &[4.0, 2.0]),
        unsafe_boxes: vec![],
        initial_state: vec![-2.0, -6.0],
    }
}

/// Mountain car with `tau = 2`, `P = 0.0015`, `g = 0.0025`; position in
/// `[-1.2, 0.6]`, velocity in `[-0.07, 0.07]`, goal `p >= 0.45`.
pub fn mountain_car() -> SystemModel {
    SystemModel {
        name: "mountain_car".into(),
        dynamics: Dynamics::MountainCar {
            tau: 2.0,
            power: 0.0015,
            gravity: 0.0025,
            hill_frequency: 3.0,
        },
        state_box: bx(&[-1.2, -0.07], &[0.6, 0.07]),
        input_box: bx(&[-1.0], &[1.0]),
        noise_std: vec![0.005, 0.0005],
        wrap_dims: vec![],
        goal_box: bx(&[0.45, -0.07], &[0.6, 0.07]),
        unsafe_boxes: vec![],
        initial_state: vec![-0.5, 0.0],
    }
}

/// Dubins car with `tau = 1`, `alpha = 0.85`, heading noise variance `0.01`,
/// goal `[-10, -5] x [5, 10]` (any heading) and two rectangular obstacles.
pub fn dubins() -> SystemModel {
    SystemModel {
        name: "dubins".into(),
        dynamics: Dynamics::Dubins {
            tau: 1.0,
            alpha: 0.85,
        },
        state_box: bx(&[-10.0, -10.0, -PI], &[10.0, 10.0, PI]),
        input_box: bx(&[-PI / 2.0, -3.0], &[PI / 2.0, 3.0]),
        noise_std: vec![0.0, 0.0, 0.1],
        wrap_dims: vec![2],
        goal_box: bx(&[-10.0, 5.0, -PI], &[-5.0, 10.0, PI]),
        unsafe_boxes: vec![
            bx(&[-4.0, -10.0, -PI], &[-2.0, 2.0, PI]),
            bx(&[2.0, 0.0, -PI], &[4.0, 10.0, PI]),
        ],
        initial_state: vec![0.5, 3.5, PI / 2.0],
    }
}

pub fn all() -> Vec<SystemModel> {
    vec![double_integrator(), mountain_car(), dubins()]
}
