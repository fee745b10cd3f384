//! Sensor networks, nominal state-space models and diffusion weights.
//!
//! A network of `N` sensors observes a common state
//!
//! ```text
//! x_{t+1} = A x_t + B w_t
//! y_{k,t} = C_k x_t + D_k v_{k,t},   k = 1..N
//! ```
//!
//! [`GlobalModel`] stacks all sensors into one output map with the joint
//! noise `u_t = [w_t; v_t]`, so that `x_{t+1} = A x_t + Γ_B u_t` and
//! `y_t = C x_t + Γ_D u_t` with `Γ_B = [B 0]` and `Γ_D = [0 D]`.
//! [`LocalModel`] does the same for the neighborhood of a single node.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, block_diag, check_shape, check_square, numerical_rank, vstack};
use crate::scalar::{lit, to_f64, Scalar};

/// Relative singular-value threshold used by every rank test in the crate.
pub const RANK_TOLERANCE: f64 = 1e-9;

/// Undirected communication graph. Every node is its own neighbor.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorNetwork {
    adjacency: Vec<Vec<bool>>,
    neighborhoods: Vec<Vec<usize>>,
}

impl SensorNetwork {
    /// Builds a network from a symmetric 0/1 adjacency matrix with unit diagonal.
    pub fn from_adjacency(adjacency: Vec<Vec<bool>>) -> Result<Self> {
        let n = adjacency.len();
        if n == 0 {
            return Err(Error::InvalidAdjacency("network has no nodes".into()));
        }
        for (k, row) in adjacency.iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidAdjacency(format!(
                    "row {k} has {} entries, expected {n}",
                    row.len()
                )));
            }
            if !row[k] {
                return Err(Error::InvalidAdjacency(format!("node {k} is not its own neighbor")));
            }
        }
        for l in 0..n {
            for k in (l + 1)..n {
                if adjacency[l][k] != adjacency[k][l] {
                    return Err(Error::InvalidAdjacency(format!(
                        "entries ({l},{k}) and ({k},{l}) differ; links must be bidirectional"
                    )));
                }
            }
        }
        let neighborhoods = (0..n)
            .map(|k| (0..n).filter(|&l| adjacency[l][k]).collect())
            .collect();
        Ok(SensorNetwork {
            adjacency,
            neighborhoods,
        })
    }

    /// Builds a network from an undirected edge list. Self loops are implicit.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adj = vec![vec![false; n]; n];
        for (k, row) in adj.iter_mut().enumerate() {
            row[k] = true;
        }
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::NodeOutOfRange {
                    index: a.max(b),
                    len: n,
                });
            }
            adj[a][b] = true;
            adj[b][a] = true;
        }
        Self::from_adjacency(adj)
    }

    pub fn full(n: usize) -> Result<Self> {
        Self::from_adjacency(vec![vec![true; n]; n])
    }

    /// Nodes without links; every neighborhood is the node itself.
    pub fn isolated(n: usize) -> Result<Self> {
        Self::from_edges(n, &[])
    }

    /// Path graph `0 - 1 - ... - (n-1)`.
    pub fn line(n: usize) -> Result<Self> {
        let edges: Vec<_> = (1..n).map(|k| (k - 1, k)).collect();
        Self::from_edges(n, &edges)
    }

    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    pub fn adjacency(&self) -> &[Vec<bool>] {
        &self.adjacency
    }

    /// `true` when `l` belongs to the neighborhood of `k`.
    pub fn is_neighbor(&self, l: usize, k: usize) -> bool {
        self.adjacency[l][k]
    }

    /// Neighborhood of `k` in ascending index order, `k` included.
    pub fn neighborhood(&self, k: usize) -> &[usize] {
        &self.neighborhoods[k]
    }

    /// Number of neighbors of `k`, counting `k` itself.
    pub fn degree(&self, k: usize) -> usize {
        self.neighborhoods[k].len()
    }

    pub fn max_degree(&self) -> usize {
        (0..self.len()).map(|k| self.degree(k)).max().unwrap_or(0)
    }

    /// Adjacency matrix `J` with entries in `{0, 1}`.
    pub fn adjacency_matrix<T: Scalar>(&self) -> DMatrix<T> {
        let n = self.len();
        DMatrix::from_fn(n, n, |l, k| if self.adjacency[l][k] { T::one() } else { T::zero() })
    }

    pub fn is_connected(&self) -> bool {
        let n = self.len();
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(k) = stack.pop() {
            for &l in &self.neighborhoods[k] {
                if !seen[l] {
                    seen[l] = true;
                    stack.push(l);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    fn check_node(&self, k: usize) -> Result<()> {
        if k >= self.len() {
            return Err(Error::NodeOutOfRange {
                index: k,
                len: self.len(),
            });
        }
        Ok(())
    }
}

/// Output map and measurement noise shaping of a single sensor.
#[derive(Clone, Debug)]
pub struct NodeModel<T: Scalar> {
    c: DMatrix<T>,
    d: DMatrix<T>,
    r: DMatrix<T>,
    r_inv: DMatrix<T>,
}

impl<T: Scalar> NodeModel<T> {
    /// `c` is `p x n`, `d` is an invertible `p x p` noise shaping matrix.
    pub fn new(c: DMatrix<T>, d: DMatrix<T>) -> Result<Self> {
        let p = check_square(&d, "D_k")?;
        if c.nrows() != p {
            return Err(Error::dims("C_k rows", p, c.nrows()));
        }
        if numerical_rank(&d, lit(RANK_TOLERANCE)) < p {
            return Err(Error::InvalidParameter("D_k is singular".into()));
        }
        let r = linalg::symmetrized(&d * d.transpose());
        let r_inv = linalg::spd_inverse(&r, "R_k")?;
        Ok(NodeModel { c, d, r, r_inv })
    }

    /// Uses the lower Cholesky factor of `r` as `D_k`.
    pub fn from_covariance(c: DMatrix<T>, r: DMatrix<T>) -> Result<Self> {
        let d = linalg::cholesky_lower(&r, "R_k")?;
        Self::new(c, d)
    }

    pub fn c(&self) -> &DMatrix<T> {
        &self.c
    }

    pub fn d(&self) -> &DMatrix<T> {
        &self.d
    }

    /// `R_k = D_k D_k^T`.
    pub fn r(&self) -> &DMatrix<T> {
        &self.r
    }

    pub fn r_inv(&self) -> &DMatrix<T> {
        &self.r_inv
    }

    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    /// `C_k^T R_k^{-1} C_k`.
    pub fn information(&self) -> DMatrix<T> {
        linalg::symmetrized(self.c.transpose() * &self.r_inv * &self.c)
    }
}

/// Builds the sensors from raw `(C_k, D_k)` pairs and stacks them.
///
/// A singular `D_k` is reported as [`Error::SingularNoise`] with its index.
pub fn build_global_model_from_matrices<T: Scalar>(
    a: DMatrix<T>,
    b: DMatrix<T>,
    sensors: Vec<(DMatrix<T>, DMatrix<T>)>,
) -> Result<GlobalModel<T>> {
    let nodes = sensors
        .into_iter()
        .enumerate()
        .map(|(k, (c, d))| {
            if d.is_square() && numerical_rank(&d, lit(RANK_TOLERANCE)) < d.nrows() {
                return Err(Error::SingularNoise { node: k });
            }
            NodeModel::new(c, d).map_err(|e| e.at_node(k))
        })
        .collect::<Result<Vec<_>>>()?;
    build_global_model(a, b, nodes)
}

/// Centralized model with all sensors stacked.
#[derive(Clone, Debug)]
pub struct GlobalModel<T: Scalar> {
    a: DMatrix<T>,
    b: DMatrix<T>,
    bbt: DMatrix<T>,
    nodes: Vec<NodeModel<T>>,
    c: DMatrix<T>,
    d: DMatrix<T>,
    r: DMatrix<T>,
    gamma_b: DMatrix<T>,
    gamma_d: DMatrix<T>,
    s_tot: DMatrix<T>,
}

/// Stacks the per-sensor models into the centralized model.
pub fn build_global_model<T: Scalar>(
    a: DMatrix<T>,
    b: DMatrix<T>,
    nodes: Vec<NodeModel<T>>,
) -> Result<GlobalModel<T>> {
    let n = check_square(&a, "A")?;
    check_shape(&b, n, n, "B")?;
    let first = nodes
        .first()
        .ok_or_else(|| Error::InvalidParameter("at least one sensor is required".into()))?;
    let p = first.output_dim();
    for (k, node) in nodes.iter().enumerate() {
        check_shape(&node.c, p, n, "C_k").map_err(|e| e.at_node(k))?;
        check_shape(&node.d, p, p, "D_k").map_err(|e| e.at_node(k))?;
    }
    let big_n = nodes.len();
    let c = vstack(&nodes.iter().map(|m| &m.c).collect::<Vec<_>>());
    let d = block_diag(&nodes.iter().map(|m| &m.d).collect::<Vec<_>>());
    let r = block_diag(&nodes.iter().map(|m| &m.r).collect::<Vec<_>>());

    let noise = n + p * big_n;
    let mut gamma_b = DMatrix::zeros(n, noise);
    gamma_b.view_mut((0, 0), (n, n)).copy_from(&b);
    let mut gamma_d = DMatrix::zeros(p * big_n, noise);
    gamma_d.view_mut((0, n), (p * big_n, p * big_n)).copy_from(&d);

    let mut s_tot = DMatrix::zeros(n, n);
    for node in &nodes {
        s_tot += node.information();
    }
    let bbt = linalg::symmetrized(&b * b.transpose());
    Ok(GlobalModel {
        a,
        b,
        bbt,
        nodes,
        c,
        d,
        r,
        gamma_b,
        gamma_d,
        s_tot: linalg::symmetrized(s_tot),
    })
}

impl<T: Scalar> GlobalModel<T> {
    pub fn a(&self) -> &DMatrix<T> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<T> {
        &self.b
    }

    /// `B B^T = Γ_B Γ_B^T`.
    pub fn bbt(&self) -> &DMatrix<T> {
        &self.bbt
    }

    pub fn nodes(&self) -> &[NodeModel<T>] {
        &self.nodes
    }

    /// Stacked output matrix, `(pN) x n`.
    pub fn c(&self) -> &DMatrix<T> {
        &self.c
    }

    /// Block diagonal noise shaping, `(pN) x (pN)`.
    pub fn d(&self) -> &DMatrix<T> {
        &self.d
    }

    /// `R = D D^T = Γ_D Γ_D^T`.
    pub fn r(&self) -> &DMatrix<T> {
        &self.r
    }

    pub fn gamma_b(&self) -> &DMatrix<T> {
        &self.gamma_b
    }

    pub fn gamma_d(&self) -> &DMatrix<T> {
        &self.gamma_d
    }

    /// `S_tot = C^T R^{-1} C`.
    pub fn s_tot(&self) -> &DMatrix<T> {
        &self.s_tot
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    /// Per-sensor output dimension `p`.
    pub fn sensor_dim(&self) -> usize {
        self.nodes[0].output_dim()
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    /// Dimension `pN + n` of the joint noise `u_t`.
    pub fn noise_dim(&self) -> usize {
        self.gamma_b.ncols()
    }

    /// `[Γ_B; Γ_D]`, square of size `pN + n`.
    pub fn noise_map(&self) -> DMatrix<T> {
        vstack(&[&self.gamma_b, &self.gamma_d])
    }
}

/// Neighborhood-stacked model seen by one node.
#[derive(Clone, Debug)]
pub struct LocalModel<T: Scalar> {
    node: usize,
    neighbors: Vec<usize>,
    a: DMatrix<T>,
    bbt: DMatrix<T>,
    c_loc: DMatrix<T>,
    d_loc: DMatrix<T>,
    r_loc: DMatrix<T>,
    s: DMatrix<T>,
    info_gain: DMatrix<T>,
}

/// Builds the model of node `k`, neighbors stacked in ascending index order.
pub fn build_local_model<T: Scalar>(
    network: &SensorNetwork,
    model: &GlobalModel<T>,
    k: usize,
) -> Result<LocalModel<T>> {
    network.check_node(k)?;
    if network.len() != model.n_nodes() {
        return Err(Error::dims("network size", model.n_nodes(), network.len()));
    }
    let neighbors = network.neighborhood(k).to_vec();
    let sensors: Vec<&NodeModel<T>> = neighbors.iter().map(|&l| &model.nodes[l]).collect();
    let c_loc = vstack(&sensors.iter().map(|m| &m.c).collect::<Vec<_>>());
    let d_loc = block_diag(&sensors.iter().map(|m| &m.d).collect::<Vec<_>>());
    let r_loc = block_diag(&sensors.iter().map(|m| &m.r).collect::<Vec<_>>());
    let r_loc_inv = block_diag(&sensors.iter().map(|m| &m.r_inv).collect::<Vec<_>>());

    let mut s = DMatrix::zeros(model.state_dim(), model.state_dim());
    for m in &sensors {
        s += m.information();
    }
    let info_gain = c_loc.transpose() * r_loc_inv;
    Ok(LocalModel {
        node: k,
        neighbors,
        a: model.a.clone(),
        bbt: model.bbt.clone(),
        c_loc,
        d_loc,
        r_loc,
        s: linalg::symmetrized(s),
        info_gain,
    })
}

/// Local models of every node.
pub fn build_local_models<T: Scalar>(
    network: &SensorNetwork,
    model: &GlobalModel<T>,
) -> Result<Vec<LocalModel<T>>> {
    (0..network.len())
        .map(|k| build_local_model(network, model, k))
        .collect()
}

impl<T: Scalar> LocalModel<T> {
    pub fn node(&self) -> usize {
        self.node
    }

    pub fn neighbors(&self) -> &[usize] {
        &self.neighbors
    }

    pub fn a(&self) -> &DMatrix<T> {
        &self.a
    }

    pub fn bbt(&self) -> &DMatrix<T> {
        &self.bbt
    }

    pub fn c_loc(&self) -> &DMatrix<T> {
        &self.c_loc
    }

    pub fn d_loc(&self) -> &DMatrix<T> {
        &self.d_loc
    }

    pub fn r_loc(&self) -> &DMatrix<T> {
        &self.r_loc
    }

    /// `S_k = Σ_{l ∈ N_k} C_l^T R_l^{-1} C_l`.
    pub fn s(&self) -> &DMatrix<T> {
        &self.s
    }

    /// `(C_k^loc)^T (R_k^loc)^{-1}`, maps stacked innovations to state space.
    pub fn info_gain(&self) -> &DMatrix<T> {
        &self.info_gain
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.c_loc.nrows()
    }
}

fn krylov_rank<T: Scalar>(a: &DMatrix<T>, first: &DMatrix<T>, transpose: bool) -> usize {
    let n = a.nrows();
    let mut blocks = Vec::with_capacity(n);
    let mut block = first.clone();
    for _ in 0..n {
        let next = if transpose { &block * a } else { a * &block };
        blocks.push(std::mem::replace(&mut block, next));
    }
    let stacked = if transpose {
        vstack(&blocks.iter().collect::<Vec<_>>())
    } else {
        let cols = blocks.iter().map(|b| b.ncols()).sum();
        let mut out = DMatrix::zeros(n, cols);
        let mut c = 0;
        for b in &blocks {
            out.view_mut((0, c), (n, b.ncols())).copy_from(b);
            c += b.ncols();
        }
        out
    };
    numerical_rank(&stacked, lit(RANK_TOLERANCE))
}

/// Rank test on `[B, AB, ..., A^{n-1}B]`.
pub fn check_reachability<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>) -> bool {
    a.is_square() && b.nrows() == a.nrows() && krylov_rank(a, b, false) == a.nrows()
}

/// Rank test on `[C; CA; ...; CA^{n-1}]`.
pub fn check_observability<T: Scalar>(a: &DMatrix<T>, c: &DMatrix<T>) -> bool {
    a.is_square() && c.ncols() == a.nrows() && krylov_rank(a, c, true) == a.nrows()
}

/// How the diffusion weights are chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightRule {
    /// `w_{lk} ∝ n_l` on the neighborhood of `k`.
    Degree,
    /// `ε` on neighbors, `1 - ε (n_k - 1)` on the node itself.
    Consensus(f64),
    /// `W = I`: each node keeps its own intermediate prediction.
    Identity,
}

/// Column-stochastic combination matrix; column `k` holds the weights of node `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionWeights<T: Scalar> {
    w: DMatrix<T>,
}

impl<T: Scalar> DiffusionWeights<T> {
    /// Wraps an arbitrary matrix; use [`validate_weights`] to check it.
    pub fn from_matrix(w: DMatrix<T>) -> Self {
        DiffusionWeights { w }
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.w
    }

    /// Weight `w_{lk}` given by node `k` to node `l`.
    pub fn weight(&self, l: usize, k: usize) -> T {
        self.w[(l, k)]
    }

    pub fn len(&self) -> usize {
        self.w.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }
}

pub fn build_diffusion_weights<T: Scalar>(
    network: &SensorNetwork,
    rule: WeightRule,
) -> Result<DiffusionWeights<T>> {
    let n = network.len();
    let w = match rule {
        WeightRule::Identity => DMatrix::identity(n, n),
        WeightRule::Degree => {
            let mut w = DMatrix::zeros(n, n);
            for k in 0..n {
                let total: usize = network.neighborhood(k).iter().map(|&l| network.degree(l)).sum();
                let alpha = T::one() / lit::<T>(total as f64);
                for &l in network.neighborhood(k) {
                    w[(l, k)] = alpha * lit(network.degree(l) as f64);
                }
            }
            w
        }
        WeightRule::Consensus(eps) => {
            let links = network.max_degree().saturating_sub(1);
            let max = if links == 0 { f64::INFINITY } else { 1.0 / links as f64 };
            if !(eps > 0.0 && eps <= max) {
                return Err(Error::EpsilonOutOfRange { epsilon: eps, max });
            }
            let eps_t = lit::<T>(eps);
            let mut w = DMatrix::zeros(n, n);
            for k in 0..n {
                for &l in network.neighborhood(k) {
                    w[(l, k)] = if l == k {
                        T::one() - eps_t * lit((network.degree(k) - 1) as f64)
                    } else {
                        eps_t
                    };
                }
            }
            w
        }
    };
    Ok(DiffusionWeights { w })
}

/// Outcome of [`validate_weights`].
#[derive(Clone, Debug, PartialEq)]
pub struct WeightDiagnostics {
    /// Largest `|Σ_l w_{lk} - 1|` over the columns.
    pub max_column_deviation: f64,
    pub worst_column: Option<usize>,
    /// Entries `(l, k)` with `w_{lk} < 0`.
    pub negative_entries: Vec<(usize, usize)>,
    /// Entries `(l, k)` with `w_{lk} != 0` although `l` is not a neighbor of `k`.
    pub support_violations: Vec<(usize, usize)>,
    pub shape_ok: bool,
}

impl WeightDiagnostics {
    pub const DEFAULT_TOLERANCE: f64 = 1e-12;

    pub fn passed(&self) -> bool {
        self.passed_with(Self::DEFAULT_TOLERANCE)
    }

    pub fn passed_with(&self, tol: f64) -> bool {
        self.shape_ok
            && self.max_column_deviation <= tol
            && self.negative_entries.is_empty()
            && self.support_violations.is_empty()
    }
}

pub fn validate_weights<T: Scalar>(w: &DiffusionWeights<T>, network: &SensorNetwork) -> WeightDiagnostics {
    let n = network.len();
    let m = &w.w;
    if m.nrows() != n || m.ncols() != n {
        return WeightDiagnostics {
            max_column_deviation: f64::INFINITY,
            worst_column: None,
            negative_entries: vec![],
            support_violations: vec![],
            shape_ok: false,
        };
    }
    let mut diag = WeightDiagnostics {
        max_column_deviation: 0.0,
        worst_column: None,
        negative_entries: vec![],
        support_violations: vec![],
        shape_ok: true,
    };
    for k in 0..n {
        let mut sum = 0.0;
        for l in 0..n {
            let v = to_f64(m[(l, k)]);
            sum += v;
            if v < 0.0 {
                diag.negative_entries.push((l, k));
            }
            if v != 0.0 && !network.is_neighbor(l, k) {
                diag.support_violations.push((l, k));
            }
        }
        let dev = (sum - 1.0).abs();
        if diag.worst_column.is_none() || dev > diag.max_column_deviation {
            diag.max_column_deviation = dev;
            diag.worst_column = Some(k);
        }
    }
    diag
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar_node(c: f64, d: f64) -> NodeModel<f64> {
        NodeModel::new(DMatrix::from_element(1, 1, c), DMatrix::from_element(1, 1, d)).unwrap()
    }

    #[test]
    fn scalar_stacking() {
        let g = build_global_model(
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            vec![scalar_node(1.0, 1.0)],
        )
        .unwrap();
        assert_eq!(g.gamma_b(), &DMatrix::from_row_slice(1, 2, &[1.0, 0.0]));
        assert_eq!(g.gamma_d(), &DMatrix::from_row_slice(1, 2, &[0.0, 1.0]));
        assert_eq!(g.s_tot()[(0, 0)], 1.0);
    }

    #[test]
    fn two_identity_sensors_double_information() {
        let eye = DMatrix::<f64>::identity(2, 2);
        let node = NodeModel::new(eye.clone(), eye.clone()).unwrap();
        let g = build_global_model(eye.clone(), eye.clone(), vec![node.clone(), node]).unwrap();
        assert_relative_eq!(g.s_tot(), &(eye * 2.0), epsilon = 1e-15);
        assert!(g.gamma_b().clone() * g.gamma_d().transpose() == DMatrix::zeros(2, 4));
    }

    #[test]
    fn singular_noise_reports_node() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let err = build_global_model_from_matrices(
            one.clone(),
            one.clone(),
            vec![(one.clone(), one.clone()), (one.clone(), DMatrix::zeros(1, 1))],
        )
        .unwrap_err();
        assert!(matches!(err, Error::SingularNoise { node: 1 }));

        let good = scalar_node(1.0, 1.0);
        let mismatched = NodeModel::new(DMatrix::from_element(2, 1, 1.0), DMatrix::identity(2, 2)).unwrap();
        let err = build_global_model(
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            vec![good, mismatched],
        )
        .unwrap_err();
        assert!(matches!(err, Error::Node { node: 1, .. }));
    }

    #[test]
    fn local_model_of_isolated_node_is_lifted_node_model() {
        let eye = DMatrix::<f64>::identity(2, 2);
        let c = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let node = NodeModel::new(c.clone(), DMatrix::from_element(1, 1, 0.5)).unwrap();
        let g = build_global_model(eye.clone(), eye, vec![node.clone(), node.clone()]).unwrap();
        let net = SensorNetwork::isolated(2).unwrap();
        let loc = build_local_model(&net, &g, 1).unwrap();
        assert_eq!(loc.neighbors(), &[1]);
        assert_relative_eq!(loc.s(), &node.information(), epsilon = 1e-15);

        let full = SensorNetwork::full(2).unwrap();
        let loc = build_local_model(&full, &g, 1).unwrap();
        assert_relative_eq!(loc.s(), &(node.information() * 2.0), epsilon = 1e-14);
        assert_eq!(loc.c_loc(), g.c());
        assert!(build_local_model(&full, &g, 2).is_err());
    }

    #[test]
    fn observability_examples() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.1, 1.0]);
        assert!(check_observability(&a, &DMatrix::from_row_slice(1, 2, &[0.0, 1.0])));
        assert!(!check_observability(&a, &DMatrix::from_row_slice(1, 2, &[1.0, 0.0])));
        let b = DMatrix::<f64>::identity(2, 2) * 0.3;
        assert!(check_reachability(&a, &b));
        assert!(check_reachability(&DMatrix::zeros(2, 2), &b));
        assert!(!check_reachability(&a, &DMatrix::from_row_slice(2, 1, &[0.0, 1.0])));
    }

    #[test]
    fn weight_rules() {
        let net = SensorNetwork::from_edges(3, &[(0, 1), (0, 2)]).unwrap();
        let w: DiffusionWeights<f64> = build_diffusion_weights(&net, WeightRule::Identity).unwrap();
        assert_eq!(w.matrix(), &DMatrix::identity(3, 3));

        let w: DiffusionWeights<f64> = build_diffusion_weights(&net, WeightRule::Consensus(0.1)).unwrap();
        assert_relative_eq!(w.weight(0, 0), 0.8, epsilon = 1e-15);
        assert_relative_eq!(w.weight(1, 0), 0.1);
        assert_relative_eq!(w.weight(2, 0), 0.1);
        assert!(validate_weights(&w, &net).passed());

        let pair = SensorNetwork::full(2).unwrap();
        let w: DiffusionWeights<f64> = build_diffusion_weights(&pair, WeightRule::Degree).unwrap();
        assert_eq!(w.matrix(), &DMatrix::from_element(2, 2, 0.5));

        let err = build_diffusion_weights::<f64>(&net, WeightRule::Consensus(0.6)).unwrap_err();
        assert!(matches!(err, Error::EpsilonOutOfRange { .. }));
    }

    #[test]
    fn degree_rule_on_star() {
        let net = SensorNetwork::from_edges(3, &[(0, 1), (0, 2)]).unwrap();
        let w: DiffusionWeights<f64> = build_diffusion_weights(&net, WeightRule::Degree).unwrap();
        // node 0 has degree 3, leaves have degree 2
        assert_relative_eq!(w.weight(0, 0), 3.0 / 7.0, epsilon = 1e-15);
        assert_relative_eq!(w.weight(1, 0), 2.0 / 7.0, epsilon = 1e-15);
        assert_relative_eq!(w.weight(0, 1), 3.0 / 5.0, epsilon = 1e-15);
        assert_eq!(w.weight(2, 1), 0.0);
        assert!(validate_weights(&w, &net).passed());
    }

    #[test]
    fn validation_flags_problems() {
        let net = SensorNetwork::line(3).unwrap();
        let mut m = DMatrix::<f64>::identity(3, 3);
        m[(0, 0)] = 0.9;
        let diag = validate_weights(&DiffusionWeights::from_matrix(m.clone()), &net);
        assert!(!diag.passed());
        assert_relative_eq!(diag.max_column_deviation, 0.1, epsilon = 1e-12);
        assert_eq!(diag.worst_column, Some(0));

        m[(0, 0)] = 0.9;
        m[(2, 0)] = 0.1;
        let diag = validate_weights(&DiffusionWeights::from_matrix(m.clone()), &net);
        assert_eq!(diag.support_violations, vec![(2, 0)]);

        m[(2, 0)] = -0.1;
        m[(0, 0)] = 1.1;
        let diag = validate_weights(&DiffusionWeights::from_matrix(m), &net);
        assert_eq!(diag.negative_entries, vec![(2, 0)]);
    }

    #[test]
    fn adjacency_validation() {
        assert!(SensorNetwork::from_adjacency(vec![vec![true, true], vec![false, true]]).is_err());
        assert!(SensorNetwork::from_adjacency(vec![vec![false]]).is_err());
        let net = SensorNetwork::line(4).unwrap();
        assert_eq!(net.neighborhood(1), &[0, 1, 2]);
        assert_eq!(net.degree(3), 2);
        assert!(net.is_connected());
        assert!(!SensorNetwork::isolated(2).unwrap().is_connected());
    }
}
