//! Distributed robust Kalman prediction with a diffusion step.
//!
//! Every round runs in two synchronous phases. In the incremental phase each
//! node `k` performs a robust prediction from the measurements of its
//! neighborhood, producing an intermediate estimate `ψ_k`. In the diffusion
//! phase each node replaces its prediction by the convex combination
//! `Σ_l w_{lk} ψ_l`. Consensus and purely local filters are special choices of
//! the weight matrix; non-robust filters are obtained with `c = 0`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{check_len, symmetrized, vcat};
use crate::model::{DiffusionWeights, LocalModel};
use crate::robust::{posterior_covariance, risk_update, BisectionOptions, Tolerance};
use crate::scalar::Scalar;

/// Filter state held by one node.
#[derive(Clone, Debug)]
pub struct NodeState<T: Scalar> {
    pub x_hat: DVector<T>,
    pub v: DMatrix<T>,
    pub p: DMatrix<T>,
    pub theta: T,
    /// Intermediate prediction of the last round, before diffusion.
    pub psi: Option<DVector<T>>,
}

#[derive(Clone, Debug)]
pub struct NetworkFilterState<T: Scalar> {
    pub nodes: Vec<NodeState<T>>,
}

impl<T: Scalar> NetworkFilterState<T> {
    /// All nodes start from the same prediction and covariance.
    pub fn uniform(n_nodes: usize, x_hat: &DVector<T>, v: &DMatrix<T>) -> Self {
        let node = NodeState {
            x_hat: x_hat.clone(),
            v: v.clone(),
            p: v.clone(),
            theta: T::zero(),
            psi: None,
        };
        NetworkFilterState {
            nodes: vec![node; n_nodes],
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn predictions(&self) -> impl Iterator<Item = &DVector<T>> {
        self.nodes.iter().map(|n| &n.x_hat)
    }
}

/// Result of the incremental phase at one node.
#[derive(Clone, Debug)]
pub struct IncrementalOutput<T: Scalar> {
    pub psi: DVector<T>,
    pub p: DMatrix<T>,
    pub theta: T,
    pub v: DMatrix<T>,
}

/// Stacks `y_{l,t}` over the neighborhood of the node, ascending index order.
pub fn stack_neighborhood<T: Scalar>(local: &LocalModel<T>, measurements: &[DVector<T>]) -> DVector<T> {
    let parts: Vec<&DVector<T>> = local.neighbors().iter().map(|&l| &measurements[l]).collect();
    vcat(&parts)
}

/// Robust prediction at one node from its neighborhood measurements `y_loc`.
pub fn incremental_step<T: Scalar>(
    local: &LocalModel<T>,
    x_hat: &DVector<T>,
    v: &DMatrix<T>,
    y_loc: &DVector<T>,
    c: Tolerance<T>,
    opts: &BisectionOptions<T>,
) -> Result<IncrementalOutput<T>> {
    check_len(x_hat, local.state_dim(), "prediction")?;
    check_len(y_loc, local.output_dim(), "neighborhood measurement")?;
    let a = local.a();
    let posterior = posterior_covariance(v, local.s())?;
    let innovation = y_loc - local.c_loc() * x_hat;
    let correction = &posterior * (local.info_gain() * innovation);
    let psi = a * (x_hat + correction);
    let p = symmetrized(a * &posterior * a.transpose() + local.bbt());
    let (theta, v) = risk_update(&p, c, opts)?;
    Ok(IncrementalOutput { psi, p, theta, v })
}

/// Diffusion phase: `x̂_k = Σ_l w_{lk} ψ_l`.
pub fn diffuse<T: Scalar>(w: &DiffusionWeights<T>, psi: &[DVector<T>]) -> Vec<DVector<T>> {
    let n = psi.len();
    let dim = psi.first().map_or(0, |p| p.len());
    (0..n)
        .map(|k| {
            let mut acc = DVector::zeros(dim);
            for (l, p) in psi.iter().enumerate() {
                let wlk = w.weight(l, k);
                if wlk != T::zero() {
                    acc.axpy(wlk, p, T::one());
                }
            }
            acc
        })
        .collect()
}

/// One synchronous round: incremental step at every node, then diffusion.
///
/// `measurements[l]` is `y_{l,t}`; the known input `r_t`, when present, is
/// added to every intermediate prediction before diffusion.
pub fn dkf_step<T: Scalar>(
    state: &NetworkFilterState<T>,
    locals: &[LocalModel<T>],
    w: &DiffusionWeights<T>,
    measurements: &[DVector<T>],
    c: Tolerance<T>,
    input: Option<&DVector<T>>,
    opts: &BisectionOptions<T>,
) -> Result<NetworkFilterState<T>> {
    let n = state.len();
    if locals.len() != n || measurements.len() != n || w.len() != n {
        return Err(Error::dims(
            "network round",
            format!("{n} nodes"),
            format!(
                "{} models, {} measurements, {} weight columns",
                locals.len(),
                measurements.len(),
                w.len()
            ),
        ));
    }
    let outputs = state
        .nodes
        .par_iter()
        .zip(locals.par_iter())
        .enumerate()
        .map(|(k, (node, local))| {
            let y_loc = stack_neighborhood(local, measurements);
            let mut out = incremental_step(local, &node.x_hat, &node.v, &y_loc, c, opts).map_err(|e| e.at_node(k))?;
            if let Some(r) = input {
                check_len(r, out.psi.len(), "deterministic input")?;
                out.psi += r;
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let psi: Vec<DVector<T>> = outputs.iter().map(|o| o.psi.clone()).collect();
    let combined = diffuse(w, &psi);
    let nodes = outputs
        .into_iter()
        .zip(combined)
        .map(|(out, x_hat)| NodeState {
            x_hat,
            v: out.v,
            p: out.p,
            theta: out.theta,
            psi: Some(out.psi),
        })
        .collect();
    Ok(NetworkFilterState { nodes })
}

/// Covariance sequences of one node, which do not depend on the data or on `W`.
#[derive(Clone, Debug)]
pub struct CovarianceSchedule<T: Scalar> {
    /// `V_t` for `t = 0..=steps`.
    pub v: Vec<DMatrix<T>>,
    /// `P_t` for `t = 0..=steps`, with `P_0 = V_0`.
    pub p: Vec<DMatrix<T>>,
    /// `θ_t` for `t = 0..steps`.
    pub theta: Vec<T>,
}

/// Runs the covariance part of the incremental step for `steps` rounds.
pub fn covariance_schedule<T: Scalar>(
    local: &LocalModel<T>,
    v0: &DMatrix<T>,
    c: Tolerance<T>,
    steps: usize,
    opts: &BisectionOptions<T>,
) -> Result<CovarianceSchedule<T>> {
    let mut sched = CovarianceSchedule {
        v: Vec::with_capacity(steps + 1),
        p: Vec::with_capacity(steps + 1),
        theta: Vec::with_capacity(steps),
    };
    sched.v.push(v0.clone());
    sched.p.push(v0.clone());
    for _ in 0..steps {
        let v = sched.v.last().expect("nonempty");
        let p = crate::robust::riccati_map(local.a(), local.bbt(), v, local.s())?;
        let (theta, v_next) = risk_update(&p, c, opts)?;
        sched.p.push(p);
        sched.v.push(v_next);
        sched.theta.push(theta);
    }
    Ok(sched)
}
