//! Projectile tracking scenario and sensor network generation.
//!
//! The state is `x = [v_x, v_y, v_z, p_x, p_y, p_z]`, sampled every 0.1 s.
//! Each sensor observes two of the three position coordinates with noise
//! covariance `√k P R_0 P^T`, where `P` is a per-node permutation.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{build_global_model, build_local_models, GlobalModel, LocalModel, NodeModel, SensorNetwork};
use crate::scalar::{lit, Scalar};
use crate::simulate::{trajectory_rng, DeterministicInput};

pub const STATE_DIM: usize = 6;
pub const SENSOR_DIM: usize = 3;
pub const SAMPLING_TIME: f64 = 0.1;
pub const GRAVITY: f64 = -10.0;
pub const PROCESS_NOISE_VARIANCE: f64 = 0.001;
/// Diagonal of the base measurement noise covariance `R_0`.
pub const BASE_NOISE: [f64; 3] = [0.5, 2.0, 3.5];

/// Pair of position coordinates observed by a sensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SensorType {
    XY,
    XZ,
    YZ,
}

impl SensorType {
    pub const ALL: [SensorType; 3] = [SensorType::XY, SensorType::XZ, SensorType::YZ];

    /// Which of `(x, y, z)` the sensor observes.
    pub fn covers(self) -> [bool; 3] {
        match self {
            SensorType::XY => [true, true, false],
            SensorType::XZ => [true, false, true],
            SensorType::YZ => [false, true, true],
        }
    }

    /// `C_k = [0 | diag(pattern)]`, `3 x 6`.
    pub fn observation_matrix<T: Scalar>(self) -> DMatrix<T> {
        let mut c = DMatrix::zeros(SENSOR_DIM, STATE_DIM);
        for (i, on) in self.covers().into_iter().enumerate() {
            if on {
                c[(i, SENSOR_DIM + i)] = T::one();
            }
        }
        c
    }
}

/// `Φ = [[0, 0], [I_3, 0]]`: positions integrate velocities.
pub fn projectile_phi<T: Scalar>() -> DMatrix<T> {
    let mut phi = DMatrix::zeros(STATE_DIM, STATE_DIM);
    for i in 0..SENSOR_DIM {
        phi[(SENSOR_DIM + i, i)] = T::one();
    }
    phi
}

/// `A = I + 0.1 Φ`.
pub fn projectile_transition<T: Scalar>() -> DMatrix<T> {
    DMatrix::identity(STATE_DIM, STATE_DIM) + projectile_phi::<T>() * lit::<T>(SAMPLING_TIME)
}

/// Known input `(0.1 I + 0.1² Φ / 2) u^c` with `u^c = [0, 0, -g, 0, 0, 0]`.
pub fn gravity_input<T: Scalar>() -> DVector<T> {
    let mut uc = DVector::zeros(STATE_DIM);
    uc[2] = lit(-GRAVITY);
    let h = lit::<T>(SAMPLING_TIME);
    let map = DMatrix::identity(STATE_DIM, STATE_DIM) * h + projectile_phi::<T>() * (h * h / lit(2.0));
    map * uc
}

/// Row permutation `P` with `P e_i = e_{perm[i]}`.
pub fn permutation_matrix<T: Scalar>(perm: &[usize; 3]) -> DMatrix<T> {
    let mut p = DMatrix::zeros(3, 3);
    for (i, &j) in perm.iter().enumerate() {
        p[(j, i)] = T::one();
    }
    p
}

/// `D_k = k^{1/4} P chol(R_0)` for the 1-based sensor index `k`.
pub fn noise_factor<T: Scalar>(k: usize, perm: &[usize; 3]) -> DMatrix<T> {
    let chol = DMatrix::from_diagonal(&DVector::from_iterator(3, BASE_NOISE.iter().map(|v| lit::<T>(v.sqrt()))));
    permutation_matrix::<T>(perm) * chol * lit::<T>((k as f64).powf(0.25))
}

/// How the communication graph is produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NetworkRule {
    /// Random geometric graph on the unit square, radius grown until connected.
    Geometric {
        #[serde(default = "default_attempts")]
        max_attempts: usize,
    },
    Line,
    Full,
    /// Undirected edges; self loops are implicit.
    Explicit { edges: Vec<(usize, usize)> },
}

fn default_attempts() -> usize {
    100
}

impl Default for NetworkRule {
    fn default() -> Self {
        NetworkRule::Geometric {
            max_attempts: default_attempts(),
        }
    }
}

/// A generated network with the sensor assignment it was accepted with.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GeneratedNetwork {
    pub network: SensorNetwork,
    pub sensor_types: Vec<SensorType>,
    /// Noise permutation of each node.
    pub permutations: Vec<[usize; 3]>,
    /// Node coordinates for geometric graphs.
    pub positions: Option<Vec<[f64; 2]>>,
    pub radius: Option<f64>,
    /// Attempt index that produced the accepted network.
    pub attempt: usize,
}

/// Coordinates covered by the neighborhood of `k`.
pub fn covered_coordinates(network: &SensorNetwork, types: &[SensorType], k: usize) -> Vec<usize> {
    let mut covered = [false; 3];
    for &l in network.neighborhood(k) {
        for (c, on) in covered.iter_mut().zip(types[l].covers()) {
            *c |= on;
        }
    }
    (0..3).filter(|&i| covered[i]).collect()
}

fn first_uncovered(network: &SensorNetwork, types: &[SensorType]) -> Option<(usize, Vec<usize>)> {
    (0..network.len()).find_map(|k| {
        let covered = covered_coordinates(network, types, k);
        (covered.len() < 3).then_some((k, covered))
    })
}

fn geometric_graph<R: Rng>(n: usize, rng: &mut R) -> Result<(SensorNetwork, Vec<[f64; 2]>, f64)> {
    let positions: Vec<[f64; 2]> = (0..n).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect();
    let dist = |a: &[f64; 2], b: &[f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
    // connectivity threshold of random geometric graphs
    let mut radius = if n > 1 {
        ((n as f64).ln() / (std::f64::consts::PI * n as f64)).sqrt()
    } else {
        0.0
    };
    loop {
        let mut edges = vec![];
        for i in 0..n {
            for j in i + 1..n {
                if dist(&positions[i], &positions[j]) <= radius {
                    edges.push((i, j));
                }
            }
        }
        let network = SensorNetwork::from_edges(n, &edges)?;
        if network.is_connected() {
            return Ok((network, positions, radius));
        }
        radius *= 1.1;
    }
}

/// Seeded connected geometric graph without any sensor assignment, for models
/// other than the projectile. Returns the network, node positions and radius.
pub fn geometric_network(n: usize, seed: u64) -> Result<(SensorNetwork, Vec<[f64; 2]>, f64)> {
    if n == 0 {
        return Err(Error::InvalidParameter("a network needs at least one node".into()));
    }
    geometric_graph(n, &mut trajectory_rng(seed, 0))
}

fn assign_types<R: Rng>(n: usize, rng: &mut R) -> Vec<SensorType> {
    let mut types: Vec<SensorType> = (0..n).map(|k| SensorType::ALL[k % 3]).collect();
    types.shuffle(rng);
    types
}

/// Seeded network and sensor assignment in which every neighborhood observes all
/// three position coordinates.
///
/// Attempt `a` draws from stream `a` of `seed`; the noise permutations come
/// from a separate stream so they do not depend on the number of attempts.
pub fn generate_network(n: usize, seed: u64, rule: &NetworkRule) -> Result<GeneratedNetwork> {
    if n == 0 {
        return Err(Error::InvalidParameter("a network needs at least one node".into()));
    }
    let attempts = match rule {
        NetworkRule::Geometric { max_attempts } => (*max_attempts).max(1),
        _ => default_attempts(),
    };
    let mut last_gap = None;
    for attempt in 0..attempts {
        let mut rng = trajectory_rng(seed, attempt as u64);
        let (network, positions, radius) = match rule {
            NetworkRule::Geometric { .. } => {
                let (net, pos, r) = geometric_graph(n, &mut rng)?;
                (net, Some(pos), Some(r))
            }
            NetworkRule::Line => (SensorNetwork::line(n)?, None, None),
            NetworkRule::Full => (SensorNetwork::full(n)?, None, None),
            NetworkRule::Explicit { edges } => (SensorNetwork::from_edges(n, edges)?, None, None),
        };
        let sensor_types = assign_types(n, &mut rng);
        match first_uncovered(&network, &sensor_types) {
            None => {
                return Ok(GeneratedNetwork {
                    network,
                    sensor_types,
                    permutations: random_permutations(n, seed),
                    positions,
                    radius,
                    attempt,
                })
            }
            Some(gap) => last_gap = Some(gap),
        }
    }
    let (node, covered) = last_gap.expect("at least one attempt");
    Err(Error::NetworkGeneration {
        attempts,
        hint: format!(
            "node {node} still covers only coordinates {covered:?}; use more nodes, a denser graph or more attempts"
        ),
    })
}

/// Per-node noise permutations drawn from a stream reserved for them.
pub fn random_permutations(n: usize, seed: u64) -> Vec<[usize; 3]> {
    let mut rng = trajectory_rng(seed, u64::MAX);
    (0..n)
        .map(|_| {
            let mut p = [0, 1, 2];
            p.shuffle(&mut rng);
            p
        })
        .collect()
}

/// Fully specified projectile tracking problem.
#[derive(Clone, Debug)]
pub struct ProjectileScenario<T: Scalar> {
    pub model: GlobalModel<T>,
    pub locals: Vec<LocalModel<T>>,
    pub network: SensorNetwork,
    pub sensor_types: Vec<SensorType>,
    pub permutations: Vec<[usize; 3]>,
    pub input: DeterministicInput<T>,
    pub x0_hat: DVector<T>,
    pub v0: DMatrix<T>,
}

/// Builds the nominal model and local models for the given network and sensor
/// assignment. Fails if some neighborhood does not observe all coordinates.
pub fn build_projectile_scenario<T: Scalar>(
    network: &SensorNetwork,
    sensor_types: &[SensorType],
    permutations: &[[usize; 3]],
) -> Result<ProjectileScenario<T>> {
    let n_nodes = network.len();
    if sensor_types.len() != n_nodes || permutations.len() != n_nodes {
        return Err(Error::dims(
            "sensor assignment",
            format!("{n_nodes} nodes"),
            format!("{} sensor types, {} permutations", sensor_types.len(), permutations.len()),
        ));
    }
    for perm in permutations {
        let mut sorted = *perm;
        sorted.sort_unstable();
        if sorted != [0, 1, 2] {
            return Err(Error::InvalidParameter(format!("{perm:?} is not a permutation of 0..3")));
        }
    }
    if let Some((node, covered)) = first_uncovered(network, sensor_types) {
        return Err(Error::LocalUnobservable { node, covered });
    }
    let nodes = sensor_types
        .iter()
        .zip(permutations)
        .enumerate()
        .map(|(k, (ty, perm))| NodeModel::new(ty.observation_matrix(), noise_factor(k + 1, perm)))
        .collect::<Result<Vec<_>>>()?;
    let b = DMatrix::identity(STATE_DIM, STATE_DIM) * lit::<T>(PROCESS_NOISE_VARIANCE.sqrt());
    let model = build_global_model(projectile_transition(), b, nodes)?;
    let locals = build_local_models(network, &model)?;
    Ok(ProjectileScenario {
        model,
        locals,
        network: network.clone(),
        sensor_types: sensor_types.to_vec(),
        permutations: permutations.to_vec(),
        input: DeterministicInput::Constant(gravity_input()),
        x0_hat: DVector::zeros(STATE_DIM),
        v0: DMatrix::identity(STATE_DIM, STATE_DIM),
    })
}
