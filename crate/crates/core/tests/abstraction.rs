mod common;

use certmpc::pipeline::build_abstraction;
use certmpc::robust_value_iteration;
use certmpc::Imdp;

use common::checks::{interval_soundness, nested};
use common::config;

fn check_soundness(name: &str) {
    let cfg = config(name);
    let abs = build_abstraction(&cfg, &cfg.actions.epsilon).unwrap();
    if let Err(e) = interval_soundness(&abs, &cfg.model, 50, 10_000, 99) {
        panic!("{name}: {e}");
    }
}

#[test]
fn double_integrator_intervals_are_sound() {
    check_soundness("double_integrator");
}

#[test]
fn mountain_car_intervals_are_sound() {
    check_soundness("mountain_car");
}

#[test]
fn dubins_intervals_are_sound() {
    check_soundness("dubins");
}

fn check_nesting(name: &str) {
    let cfg = config(name);
    let mut previous: Option<(Imdp, Vec<f64>)> = None;
    for eps in &cfg.sweep.epsilons {
        let abs = build_abstraction(&cfg, eps).unwrap();
        let (vb, _) = robust_value_iteration(&abs.imdp, cfg.synthesis.tol, cfg.synthesis.max_iters).unwrap();
        if let Some((imdp, v_lo)) = &previous {
            if let Err(e) = nested(imdp, v_lo, &abs.imdp, &vb.v_lo, abs.partition.outside(), cfg.synthesis.tol) {
                panic!("{name} eps {eps:?}: {e}");
            }
        }
        previous = Some((abs.imdp, vb.v_lo));
    }
}

#[test]
fn double_integrator_intervals_nest_in_epsilon() {
    check_nesting("double_integrator");
}

#[test]
fn dubins_intervals_nest_in_epsilon() {
    check_nesting("dubins");
}
