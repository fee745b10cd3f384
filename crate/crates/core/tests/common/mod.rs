//! Test-only oracles and fixtures, written independently of the library code paths.

#![allow(dead_code)]

use drkf::model::{build_global_model, check_observability, check_reachability, GlobalModel, NodeModel};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| scale * (2.0 * rng.random::<f64>() - 1.0))
}

pub fn random_spd<R: Rng>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let m = random_matrix(rng, n, n, 1.0);
    &m * m.transpose() + DMatrix::identity(n, n) * 0.1
}

/// Standard Kalman predictor in gain form, evaluated with explicit inverses.
pub struct KalmanOracle {
    pub x: DVector<f64>,
    pub p: DMatrix<f64>,
}

impl KalmanOracle {
    /// Returns the gain used for this step.
    pub fn step(
        &mut self,
        a: &DMatrix<f64>,
        bbt: &DMatrix<f64>,
        c: &DMatrix<f64>,
        r: &DMatrix<f64>,
        y: &DVector<f64>,
    ) -> DMatrix<f64> {
        let s = c * &self.p * c.transpose() + r;
        let g = a * &self.p * c.transpose() * s.clone().try_inverse().expect("invertible innovation");
        self.x = a * &self.x + &g * (y - c * &self.x);
        self.p = a * &self.p * a.transpose() - &g * s * g.transpose() + bbt;
        self.p = (&self.p + self.p.transpose()) * 0.5;
        g
    }
}

/// Random reachable and observable model with `n ≤ 4` and `N ≤ 3` sensors.
pub fn random_model<R: Rng>(rng: &mut R) -> GlobalModel<f64> {
    loop {
        let n = rng.random_range(1..=4);
        let n_nodes = rng.random_range(1..=3);
        let p = rng.random_range(1..=2);
        let a = random_matrix(rng, n, n, 0.6);
        let b = random_matrix(rng, n, n, 0.5) + DMatrix::identity(n, n) * 0.2;
        let nodes: Vec<NodeModel<f64>> = (0..n_nodes)
            .map(|_| {
                let c = random_matrix(rng, p, n, 1.0);
                let d = random_matrix(rng, p, p, 0.3) + DMatrix::identity(p, p);
                NodeModel::new(c, d)
            })
            .collect::<Result<_, _>>()
            .unwrap_or_default();
        if nodes.len() != n_nodes {
            continue;
        }
        let Ok(model) = build_global_model(a, b, nodes) else {
            continue;
        };
        if check_reachability(model.a(), model.b()) && check_observability(model.a(), model.c()) {
            return model;
        }
    }
}

/// Two-state, three-sensor model used for the Monte Carlo cross-check.
pub fn small_line_model() -> GlobalModel<f64> {
    let a = DMatrix::from_row_slice(2, 2, &[0.95, 0.1, 0.0, 0.9]);
    let b = DMatrix::from_row_slice(2, 2, &[0.3, 0.0, 0.05, 0.25]);
    let nodes = vec![
        NodeModel::new(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]), DMatrix::from_element(1, 1, 0.8)).unwrap(),
        NodeModel::new(DMatrix::from_row_slice(1, 2, &[0.0, 1.0]), DMatrix::from_element(1, 1, 1.0)).unwrap(),
        NodeModel::new(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), DMatrix::from_element(1, 1, 1.2)).unwrap(),
    ];
    build_global_model(a, b, nodes).unwrap()
}

pub fn relative(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

pub fn relative_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1.0)
}
