//! Piecewise affine prediction models, one first-order expansion per cell.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::abstraction::ActionSet;
use crate::dynamics::SystemModel;
use crate::partition::Partition;
use crate::synthesis::RobustPolicy;

/// `x' ≈ A x + B u + c`, valid on one cell.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DVector<f64>,
    pub validity_cell: usize,
}

impl AffineModel {
    pub fn predict(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let x = DVector::from_column_slice(x);
        let u = DVector::from_column_slice(u);
        (&self.a * x + &self.b * u + &self.c).iter().copied().collect()
    }
}

fn rows_to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let ncols = rows.first().map_or(0, |r| r.len());
    DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j])
}

/// Taylor expansion of the noise-free map at `(x_bar, u_bar)`. Wrapped
/// coordinates are expanded on the unwrapped chart.
pub fn linearize(model: &SystemModel, x_bar: &[f64], u_bar: &[f64], cell: usize) -> AffineModel {
    let (ja, jb) = model.jacobians(x_bar, u_bar);
    let a = rows_to_matrix(&ja);
    let b = rows_to_matrix(&jb);
    let f0 = DVector::from_vec(model.unwrapped_mean(x_bar, u_bar));
    let c = f0 - &a * DVector::from_column_slice(x_bar) - &b * DVector::from_column_slice(u_bar);
    AffineModel {
        a,
        b,
        c,
        validity_cell: cell,
    }
}

/// One model per interior cell, expanded at the cell center and the center
/// of the ball the policy prescribes there (the input-box center on
/// terminal cells).
pub fn pwa_table(
    model: &SystemModel,
    partition: &Partition,
    actions: &ActionSet,
    policy: &RobustPolicy,
) -> Vec<AffineModel> {
    let u_mid = model.input_box.center();
    (0..partition.num_cells())
        .into_par_iter()
        .map(|i| {
            let x = partition.cell_center(i).expect("interior cell");
            let u = if partition.is_terminal(i) {
                u_mid.clone()
            } else {
                actions.interface_set(policy.action[i]).center()
            };
            linearize(model, &x, &u, i)
        })
        .collect()
}

/// Largest `|f(x, u) - affine(x, u)|_inf` over the given samples.
pub fn approximation_error(model: &SystemModel, affine: &AffineModel, samples: &[(Vec<f64>, Vec<f64>)]) -> f64 {
    samples
        .iter()
        .map(|(x, u)| {
            let f = model.unwrapped_mean(x, u);
            let g = affine.predict(x, u);
            f.iter().zip(&g).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}
