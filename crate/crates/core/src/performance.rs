//! Exact least favorable performance of a bank of distributed predictors.
//!
//! Under the least favorable model the stacked node errors
//! `χ̃_t = [x_t - x̂_{1,t}; ...; x_t - x̂_{N,t}]` and the centralized error
//! `e_t` evolve jointly as `η_{t+1} = ℱ_t η_t + 𝒢_t ε_t` with
//! `η_t = [χ̃_t; e_t]`. Their covariance follows the Lyapunov recursion
//! `𝒬_{t+1} = ℱ_t 𝒬_t ℱ_t^T + 𝒢_t 𝒢_t^T`, whose diagonal blocks give the
//! per-node mean square deviation.

use std::ops::RangeInclusive;

use nalgebra::{DMatrix, DVector};

use crate::distributed::{covariance_schedule, CovarianceSchedule};
use crate::error::{Error, Result};
use crate::least_favorable::{LeastFavorableModel, LfParameters};
use crate::linalg::{self, block_diag, symmetrized, vstack};
use crate::model::{DiffusionWeights, GlobalModel, LocalModel, SensorNetwork};
use crate::robust::{risk_update, BisectionOptions, Tolerance};
use crate::scalar::{lit, Scalar};

/// Joint error dynamics at one time step.
#[derive(Clone, Debug)]
pub struct ErrorDynamics<T: Scalar> {
    /// `𝒜_t`, `Nn x Nn`
    pub a: DMatrix<T>,
    /// `ℬ_t`, `Nn x (pN + n)`
    pub b: DMatrix<T>,
    /// `𝒞_t`, `Nn x n`
    pub c: DMatrix<T>,
    /// `ℱ_t`, `(Nn + n) x (Nn + n)`
    pub f: DMatrix<T>,
    /// `𝒢_t`, `(Nn + n) x (pN + n)`
    pub g: DMatrix<T>,
}

/// Precomputes the time-invariant operators of the error dynamics for one
/// filter bank (network, local models and weights).
#[derive(Clone, Debug)]
pub struct ErrorDynamicsAssembler<T: Scalar> {
    n: usize,
    n_nodes: usize,
    /// `W^T ⊗ I_n`
    w_kron: DMatrix<T>,
    /// `(J^T ⊗ I_n) 𝒞^T R^{-1} D`
    coupling: DMatrix<T>,
    a: DMatrix<T>,
    b: DMatrix<T>,
    s: Vec<DMatrix<T>>,
}

impl<T: Scalar> ErrorDynamicsAssembler<T> {
    pub fn new(
        network: &SensorNetwork,
        locals: &[LocalModel<T>],
        weights: &DiffusionWeights<T>,
        model: &GlobalModel<T>,
    ) -> Result<Self> {
        let n = model.state_dim();
        let big_n = network.len();
        if locals.len() != big_n || weights.len() != big_n || model.n_nodes() != big_n {
            return Err(Error::dims(
                "filter bank",
                format!("{big_n} nodes"),
                format!("{} local models, {} weight columns, {} sensors", locals.len(), weights.len(), model.n_nodes()),
            ));
        }
        let eye_n = DMatrix::<T>::identity(n, n);
        let w_kron = weights.matrix().transpose().kronecker(&eye_n);
        let j_kron = network.adjacency_matrix::<T>().transpose().kronecker(&eye_n);
        let c_cal = block_diag(&model.nodes().iter().map(|m| m.c()).collect::<Vec<_>>());
        let r_inv = block_diag(&model.nodes().iter().map(|m| m.r_inv()).collect::<Vec<_>>());
        let coupling = j_kron * c_cal.transpose() * r_inv * model.d();
        Ok(ErrorDynamicsAssembler {
            n,
            n_nodes: big_n,
            w_kron,
            coupling,
            a: model.a().clone(),
            b: model.b().clone(),
            s: locals.iter().map(|l| l.s().clone()).collect(),
        })
    }

    /// `ℱ_t`, `𝒢_t` from the node covariances `V_{k,t}` and the least favorable model at `t`.
    pub fn at(&self, v_nodes: &[&DMatrix<T>], lf: &LfParameters<T>) -> Result<ErrorDynamics<T>> {
        let (n, big_n) = (self.n, self.n_nodes);
        if v_nodes.len() != big_n {
            return Err(Error::dims("node covariances", big_n, v_nodes.len()));
        }
        let mut left = Vec::with_capacity(big_n);
        let mut transition = Vec::with_capacity(big_n);
        for (k, v) in v_nodes.iter().enumerate() {
            let v_inv = linalg::spd_inverse(v, "V_k").map_err(|e| e.at_node(k))?;
            let post = linalg::spd_inverse(&symmetrized(&v_inv + &self.s[k]), "V_k^{-1} + S_k")
                .map_err(|e| e.at_node(k))?;
            let a_post = &self.a * post;
            transition.push(&a_post * v_inv);
            left.push(a_post);
        }
        // (W^T ⊗ I)(I ⊗ A)(𝒱^{-1} + 𝒮)^{-1}
        let gain_blocks = &self.w_kron * block_diag(&left.iter().collect::<Vec<_>>());
        let a_cal = &self.w_kron * block_diag(&transition.iter().collect::<Vec<_>>());
        let common = gain_blocks * &self.coupling;
        let ones = DMatrix::<T>::from_element(big_n, 1, T::one());
        let b_cal = ones.kronecker(&(&self.b * &lf.n)) - &common * &lf.l;
        let c_cal = ones.kronecker(&(&self.b * &lf.m)) - &common * &lf.h;

        let dim = big_n * n + n;
        let mut f = DMatrix::zeros(dim, dim);
        f.view_mut((0, 0), (big_n * n, big_n * n)).copy_from(&a_cal);
        f.view_mut((0, big_n * n), (big_n * n, n)).copy_from(&c_cal);
        f.view_mut((big_n * n, big_n * n), (n, n))
            .copy_from(&lf.error_transition());
        let g = vstack(&[&b_cal, &lf.error_noise()]);
        Ok(ErrorDynamics {
            a: a_cal,
            b: b_cal,
            c: c_cal,
            f,
            g,
        })
    }
}

/// One-shot version of [`ErrorDynamicsAssembler::at`].
pub fn assemble_error_dynamics<T: Scalar>(
    network: &SensorNetwork,
    locals: &[LocalModel<T>],
    weights: &DiffusionWeights<T>,
    model: &GlobalModel<T>,
    v_nodes: &[&DMatrix<T>],
    lf: &LfParameters<T>,
) -> Result<ErrorDynamics<T>> {
    ErrorDynamicsAssembler::new(network, locals, weights, model)?.at(v_nodes, lf)
}

/// Initial joint covariance when every node starts from the common prior mean:
/// all error components equal `e_0 ~ N(0, V_0)`, so `𝒬_0 = 𝟙𝟙^T ⊗ V_0`.
pub fn init_q0<T: Scalar>(v0: &DMatrix<T>, n_nodes: usize) -> DMatrix<T> {
    DMatrix::from_element(n_nodes + 1, n_nodes + 1, T::one()).kronecker(v0)
}

/// Per-node and network-average mean square deviation over time.
#[derive(Clone, Debug)]
pub struct PerformanceTrace<T: Scalar> {
    /// `MSD_{k,t}`, indexed `[t][k]` for `t = 0..=T+1`.
    pub msd: Vec<Vec<T>>,
    /// `MSD̄_t = tr(𝒫_t) / N`.
    pub msd_avg: Vec<T>,
    /// `tr(ℛ_t)`, the mean square error of the centralized robust predictor.
    pub central_msd: Vec<T>,
    /// Smallest eigenvalue of `𝒬_t` relative to its trace, when requested.
    pub min_eig_ratio: Vec<T>,
    /// `𝒬_{T+1}`.
    pub q_final: DMatrix<T>,
}

impl<T: Scalar> PerformanceTrace<T> {
    pub fn len(&self) -> usize {
        self.msd_avg.len()
    }

    pub fn is_empty(&self) -> bool {
        self.msd_avg.is_empty()
    }

    /// Time average of `MSD̄_t` over `window`.
    pub fn steady_average(&self, window: &RangeInclusive<usize>) -> Result<T> {
        window_mean(&self.msd_avg, window)
    }

    /// Time average of each `MSD_{k,t}` over `window`.
    pub fn steady_nodes(&self, window: &RangeInclusive<usize>) -> Result<Vec<T>> {
        let n_nodes = self.msd.first().map_or(0, |r| r.len());
        (0..n_nodes)
            .map(|k| {
                let series: Vec<T> = self.msd.iter().map(|row| row[k]).collect();
                window_mean(&series, window)
            })
            .collect()
    }
}

pub(crate) fn window_mean<T: Scalar>(series: &[T], window: &RangeInclusive<usize>) -> Result<T> {
    let (start, end) = (*window.start(), *window.end());
    if start > end || end >= series.len() {
        return Err(Error::EmptyWindow {
            start,
            end: end + 1,
            len: series.len(),
        });
    }
    let sum = series[start..=end].iter().fold(T::zero(), |a, &b| a + b);
    Ok(sum / lit((end - start + 1) as f64))
}

/// Options of [`lyapunov_sweep`].
#[derive(Clone, Copy, Debug, Default)]
pub struct SweepOptions {
    /// Record the smallest eigenvalue of every `𝒬_t` (costs one eigendecomposition per step).
    pub track_min_eigenvalue: bool,
}

fn record<T: Scalar>(trace: &mut PerformanceTrace<T>, q: &DMatrix<T>, n: usize, n_nodes: usize, opts: SweepOptions) {
    let mut row = Vec::with_capacity(n_nodes);
    for k in 0..n_nodes {
        row.push(q.view((k * n, k * n), (n, n)).trace());
    }
    let total = row.iter().fold(T::zero(), |a, &b| a + b);
    trace.msd_avg.push(total / lit(n_nodes as f64));
    trace.msd.push(row);
    trace
        .central_msd
        .push(q.view((n_nodes * n, n_nodes * n), (n, n)).trace());
    if opts.track_min_eigenvalue {
        let tr = q.trace();
        let min = linalg::min_sym_eigenvalue(q);
        trace
            .min_eig_ratio
            .push(if tr > T::zero() { min / tr } else { min });
    }
}

/// Runs `𝒬_{t+1} = ℱ_t 𝒬_t ℱ_t^T + 𝒢_t 𝒢_t^T` over the supplied dynamics.
///
/// `n` is the state dimension and `n_nodes` the number of nodes; the trace
/// covers `𝒬_0` through `𝒬_{T+1}`.
pub fn lyapunov_sweep<T: Scalar, I>(
    dynamics: I,
    q0: DMatrix<T>,
    n: usize,
    n_nodes: usize,
    opts: SweepOptions,
) -> Result<PerformanceTrace<T>>
where
    I: IntoIterator<Item = Result<(DMatrix<T>, DMatrix<T>)>>,
{
    let dim = n * n_nodes + n;
    linalg::check_shape(&q0, dim, dim, "Q_0")?;
    let mut trace = PerformanceTrace {
        msd: vec![],
        msd_avg: vec![],
        central_msd: vec![],
        min_eig_ratio: vec![],
        q_final: DMatrix::zeros(0, 0),
    };
    let mut q = q0;
    record(&mut trace, &q, n, n_nodes, opts);
    for item in dynamics {
        let (f, g) = item?;
        q = symmetrized(&f * &q * f.transpose() + &g * g.transpose());
        record(&mut trace, &q, n, n_nodes, opts);
    }
    trace.q_final = q;
    Ok(trace)
}

/// A bank of identical-structure predictors sharing a network and weights.
#[derive(Clone, Debug)]
pub struct FilterBank<'a, T: Scalar> {
    pub network: &'a SensorNetwork,
    pub locals: &'a [LocalModel<T>],
    pub weights: &'a DiffusionWeights<T>,
    /// Tolerance used by the predictors themselves (`0` for standard filters).
    pub tolerance: Tolerance<T>,
}

/// Covariance schedules of every node of `bank` over `steps` rounds.
pub fn node_schedules<T: Scalar>(
    locals: &[LocalModel<T>],
    v0: &DMatrix<T>,
    c: Tolerance<T>,
    steps: usize,
    opts: &BisectionOptions<T>,
) -> Result<Vec<CovarianceSchedule<T>>> {
    locals
        .iter()
        .enumerate()
        .map(|(k, l)| covariance_schedule(l, v0, c, steps, opts).map_err(|e| e.at_node(k)))
        .collect()
}

/// Least favorable performance of `bank` over the horizon of `lf`.
pub fn evaluate_bank<T: Scalar>(
    model: &GlobalModel<T>,
    lf: &LeastFavorableModel<T>,
    bank: &FilterBank<'_, T>,
    v0: &DMatrix<T>,
    opts: &BisectionOptions<T>,
    sweep: SweepOptions,
) -> Result<PerformanceTrace<T>> {
    let horizon = lf.horizon();
    let schedules = node_schedules(bank.locals, v0, bank.tolerance, horizon, opts)?;
    let assembler = ErrorDynamicsAssembler::new(bank.network, bank.locals, bank.weights, model)?;
    let dynamics = (0..=horizon).map(|t| {
        let params = lf.at(model, t)?;
        let v_nodes: Vec<&DMatrix<T>> = schedules.iter().map(|s| &s.v[t]).collect();
        let d = assembler.at(&v_nodes, &params)?;
        Ok((d.f, d.g))
    });
    lyapunov_sweep(dynamics, init_q0(v0, bank.network.len()), model.state_dim(), bank.network.len(), sweep)
}

/// Steady-state averaging window `[⌈αT⌉, ⌊βT⌋]` with `0 < α < β < 1`.
pub fn steady_window(horizon: usize, alpha: f64, beta: f64) -> Result<RangeInclusive<usize>> {
    if !(0.0 < alpha && alpha < beta && beta < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "window fractions must satisfy 0 < alpha < beta < 1, got ({alpha}, {beta})"
        )));
    }
    let start = (alpha * horizon as f64).ceil() as usize;
    let end = (beta * horizon as f64).floor() as usize;
    if start > end {
        return Err(Error::EmptyWindow {
            start,
            end: end + 1,
            len: horizon + 1,
        });
    }
    Ok(start..=end)
}

/// `D_KL(N(μ_1, K_1) || N(μ_2, K_2))`.
pub fn gaussian_kl<T: Scalar>(mu1: &DVector<T>, k1: &DMatrix<T>, mu2: &DVector<T>, k2: &DMatrix<T>) -> Result<T> {
    let d = mu1.len();
    linalg::check_len(mu2, d, "mean")?;
    linalg::check_shape(k1, d, d, "first covariance")?;
    linalg::check_shape(k2, d, d, "second covariance")?;
    let chol2 = linalg::cholesky(k2, "second covariance")?;
    let logdet1 = linalg::log_det_spd(k1, "first covariance")?;
    let l2 = chol2.l();
    let logdet2 = l2.diagonal().iter().fold(T::zero(), |acc, x| acc + lit::<T>(2.0) * x.ln());
    let trace = chol2.solve(k1).trace();
    let diff = mu2 - mu1;
    let quad = diff.dot(&chol2.solve(&diff));
    let half = lit::<T>(0.5);
    Ok(half * (trace + quad - lit(d as f64) + logdet2 - logdet1))
}

/// The two divergences compared at node `k`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KlComparison<T: Scalar> {
    /// `D_KL(p̃_t, p̃_t^loc)`: least favorable density against the robust local one.
    pub lf_vs_robust_local: T,
    /// `D_KL(p̃_t, p_t^loc)`: least favorable density against the nominal local one.
    pub lf_vs_nominal_local: T,
}

/// Prior covariance `A V A^T - A V C^T (C V C^T + R)^{-1} C V A^T + BB^T`.
fn kalman_prior<T: Scalar>(
    a: &DMatrix<T>,
    bbt: &DMatrix<T>,
    v: &DMatrix<T>,
    c: &DMatrix<T>,
    r: &DMatrix<T>,
) -> Result<DMatrix<T>> {
    let av = a * v;
    if c.nrows() == 0 {
        return Ok(symmetrized(&av * a.transpose() + bbt));
    }
    let s = symmetrized(c * v * c.transpose() + r);
    let cross = c * av.transpose();
    let correction = cross.transpose() * linalg::cholesky(&s, "innovation covariance")?.solve(&cross);
    Ok(symmetrized(&av * a.transpose() - correction + bbt))
}

/// Evaluates the one-step densities of `z_t = [x_{t+1}; y_t]` at node `k`
/// under a common prior `N(x̂_{k,t}, V_{k,t})` and returns the divergences of
/// the centralized least favorable density from the robust and from the
/// nominal local densities.
///
/// Measurements are ordered neighborhood first, then the remaining sensors;
/// `q_loc` is the covariance assigned to the sensors outside the neighborhood.
#[allow(clippy::too_many_arguments)]
pub fn kl_comparison<T: Scalar>(
    network: &SensorNetwork,
    model: &GlobalModel<T>,
    k: usize,
    x_hat: &DVector<T>,
    v: &DMatrix<T>,
    c: Tolerance<T>,
    q_loc: &DMatrix<T>,
    opts: &BisectionOptions<T>,
) -> Result<KlComparison<T>> {
    if k >= network.len() {
        return Err(Error::NodeOutOfRange {
            index: k,
            len: network.len(),
        });
    }
    let n = model.state_dim();
    let a = model.a();
    let bbt = model.bbt();
    let inside: Vec<usize> = network.neighborhood(k).to_vec();
    let outside: Vec<usize> = (0..network.len()).filter(|l| !network.is_neighbor(*l, k)).collect();
    let stack_c = |ids: &[usize]| -> DMatrix<T> {
        let parts: Vec<&DMatrix<T>> = ids.iter().map(|&l| model.nodes()[l].c()).collect();
        if parts.is_empty() {
            DMatrix::zeros(0, n)
        } else {
            vstack(&parts)
        }
    };
    let stack_r = |ids: &[usize]| -> DMatrix<T> {
        block_diag(&ids.iter().map(|&l| model.nodes()[l].r()).collect::<Vec<_>>())
    };
    let c_loc = stack_c(&inside);
    let c_out = stack_c(&outside);
    let r_loc = stack_r(&inside);
    let r_out = stack_r(&outside);
    linalg::check_shape(q_loc, c_out.nrows(), c_out.nrows(), "Q_k^loc")?;

    let zeros_out = DMatrix::<T>::zeros(c_out.nrows(), n);
    let map_loc = vstack(&[a, &c_loc, &zeros_out]);
    let map_full = vstack(&[a, &c_loc, &c_out]);
    let mu_loc = &map_loc * x_hat;
    let mu = &map_full * x_hat;

    let k_loc = symmetrized(&map_loc * v * map_loc.transpose() + block_diag(&[bbt, &r_loc, q_loc]));
    let k_full = symmetrized(&map_full * v * map_full.transpose() + block_diag(&[bbt, &r_loc, &r_out]));

    let p_local = kalman_prior(a, bbt, v, &c_loc, &r_loc)?;
    let (_, v_local) = risk_update(&p_local, c, opts)?;
    let c_all = vstack(&[&c_loc, &c_out]);
    let r_all = block_diag(&[&r_loc, &r_out]);
    let p_central = kalman_prior(a, bbt, v, &c_all, &r_all)?;
    let (_, v_central) = risk_update(&p_central, c, opts)?;

    let inflate = |base: &DMatrix<T>, extra: DMatrix<T>| -> DMatrix<T> {
        let mut out = base.clone();
        let mut block = out.view_mut((0, 0), (n, n));
        block += extra;
        symmetrized(out)
    };
    let k_loc_tilde = inflate(&k_loc, &v_local - &p_local);
    let k_tilde = inflate(&k_full, &v_central - &p_central);

    Ok(KlComparison {
        lf_vs_robust_local: gaussian_kl(&mu, &k_tilde, &mu_loc, &k_loc_tilde)?,
        lf_vs_nominal_local: gaussian_kl(&mu, &k_tilde, &mu_loc, &k_loc)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gaussian_kl_examples() {
        let z = DVector::from_element(1, 0.0);
        let one = DVector::from_element(1, 1.0);
        let i1 = DMatrix::from_element(1, 1, 1.0);
        let two = DMatrix::from_element(1, 1, 2.0);
        assert_eq!(gaussian_kl(&z, &i1, &z, &i1).unwrap(), 0.0);
        assert_relative_eq!(gaussian_kl(&z, &i1, &one, &i1).unwrap(), 0.5, epsilon = 1e-15);
        assert_relative_eq!(
            gaussian_kl(&z, &i1, &z, &two).unwrap(),
            0.5 * (2f64.ln() - 0.5),
            epsilon = 1e-15
        );
        assert!(gaussian_kl(&z, &i1, &z, &DMatrix::from_element(1, 1, -1.0)).is_err());
    }

    #[test]
    fn q0_structure() {
        let v0 = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let q = init_q0(&v0, 1);
        assert_eq!(q.shape(), (4, 4));
        for (i, j) in [(0, 0), (0, 2), (2, 0), (2, 2)] {
            assert_eq!(q.view((i, j), (2, 2)).into_owned(), v0);
        }
        let q = init_q0(&DMatrix::<f64>::identity(2, 2), 2);
        assert_eq!(linalg::numerical_rank(&q, 1e-9), 2);
        assert!(linalg::min_sym_eigenvalue(&q) > -1e-12);
    }

    #[test]
    fn lyapunov_geometric_series() {
        let f = DMatrix::from_element(2, 2, 0.0);
        let g = DMatrix::from_element(2, 1, 1.0);
        let q0 = DMatrix::zeros(2, 2);
        // n = 1, one node: η = [χ̃; e]
        let dynamics = (0..3).map(|_| Ok((f.clone(), g.clone())));
        let tr = lyapunov_sweep(dynamics, q0, 1, 1, SweepOptions::default()).unwrap();
        assert_eq!(tr.q_final, &g * g.transpose());

        let f = DMatrix::from_element(1, 1, 0.5);
        let g = DMatrix::from_element(1, 1, 1.0);
        let mut q = DMatrix::zeros(1, 1);
        for _ in 0..200 {
            q = &f * &q * f.transpose() + &g * g.transpose();
        }
        assert_relative_eq!(q[(0, 0)], 4.0 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn window_bounds() {
        assert_eq!(steady_window(300, 0.5, 0.9).unwrap(), 150..=270);
        assert!(steady_window(300, 0.9, 0.5).is_err());
        assert!(steady_window(1, 0.4, 0.6).is_err());
        assert!(window_mean(&[1.0, 2.0], &(1..=2)).is_err());
        assert_eq!(window_mean(&[1.0, 2.0, 3.0], &(1..=2)).unwrap(), 2.5);
    }
}
