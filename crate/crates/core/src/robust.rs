//! Centralized robust Kalman prediction under a relative-entropy budget.
//!
//! Each step propagates the pre-perturbation covariance `P_{t+1}`, finds the
//! risk sensitivity parameter `θ_t` with `γ(P_{t+1}, θ_t) = c`, and inflates
//! the covariance to `V_{t+1} = (P_{t+1}^{-1} - θ_t I)^{-1}`. With `c = 0`
//! the recursion is the ordinary Kalman predictor.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::linalg::{self, check_len, symmetrized};
use crate::model::GlobalModel;
use crate::scalar::{lit, to_f64, Scalar};

/// Per-step relative entropy budget `c >= 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerance<T: Scalar>(T);

impl<T: Scalar> Tolerance<T> {
    pub fn new(c: T) -> Result<Self> {
        if !(c >= T::zero()) {
            return Err(Error::InvalidParameter(format!(
                "tolerance must be nonnegative, got {}",
                to_f64(c)
            )));
        }
        Ok(Tolerance(c))
    }

    pub fn zero() -> Self {
        Tolerance(T::zero())
    }

    pub fn value(self) -> T {
        self.0
    }

    pub fn is_zero(self) -> bool {
        self.0 == T::zero()
    }
}

/// Stopping rule of the bisection for `θ`.
#[derive(Clone, Copy, Debug)]
pub struct BisectionOptions<T: Scalar> {
    /// Accept `θ` once `|γ(P, θ) - c| <= tol`.
    pub tol: T,
    pub max_iter: usize,
}

impl<T: Scalar> Default for BisectionOptions<T> {
    fn default() -> Self {
        BisectionOptions {
            tol: lit(1e-10),
            max_iter: 200,
        }
    }
}

/// Relative gap `δ` kept from the pole of `γ` at `θ = 1/λ_max(P)`.
const BRACKET_GAP: f64 = 1e-12;

/// Below this value of `1 - θ λ_max` the inflated covariance is formed from
/// the eigendecomposition of `P`.
const NEAR_SINGULAR: f64 = 1e-8;

fn gamma_from_eigenvalues<T: Scalar>(eigs: &[T], theta: T) -> T {
    eigs.iter().fold(T::zero(), |acc, &d| {
        let s = T::one() - theta * d;
        acc + s.ln() + T::one() / s - T::one()
    })
}

fn lambda_max<T: Scalar>(eigs: &[T]) -> T {
    eigs.iter().fold(T::zero(), |a, &b| a.max(b))
}

/// `γ(P, θ) = ln det(I - θP) + tr((I - θP)^{-1} - I)`.
///
/// Defined for `0 <= θ < 1/λ_max(P)`.
pub fn gamma<T: Scalar>(p: &DMatrix<T>, theta: T) -> Result<T> {
    let eig = linalg::sym_eigenvalues(p);
    let eigs = eig.as_slice();
    let lmax = lambda_max(eigs);
    let bound = if lmax > T::zero() {
        T::one() / lmax
    } else {
        T::max_value().unwrap_or_else(|| lit(f64::MAX))
    };
    if !(theta >= T::zero() && theta < bound) {
        return Err(Error::ThetaOutOfDomain {
            theta: to_f64(theta),
            bound: to_f64(bound),
        });
    }
    Ok(gamma_from_eigenvalues(eigs, theta))
}

fn bisect<T: Scalar>(eigs: &[T], c: T, opts: &BisectionOptions<T>) -> T {
    if c == T::zero() {
        return T::zero();
    }
    let lmax = lambda_max(eigs);
    let mut lo = T::zero();
    let mut hi = (T::one() - lit(BRACKET_GAP)) / lmax;
    if gamma_from_eigenvalues(eigs, hi) <= c {
        return hi;
    }
    let two = lit::<T>(2.0);
    let mut best = (hi, T::max_value().unwrap_or_else(|| lit(f64::MAX)));
    for _ in 0..opts.max_iter {
        let mid = (lo + hi) / two;
        let g = gamma_from_eigenvalues(eigs, mid);
        let err = (g - c).abs();
        if err < best.1 {
            best = (mid, err);
        }
        if err <= opts.tol || mid == lo || mid == hi {
            break;
        }
        if g < c {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    best.0
}

/// Finds `θ` with `γ(P, θ) = c` by bisection on `[0, (1 - δ)/λ_max(P)]`.
///
/// `c = 0` returns exactly zero.
pub fn solve_theta<T: Scalar>(p: &DMatrix<T>, c: Tolerance<T>, opts: &BisectionOptions<T>) -> T {
    if c.is_zero() {
        return T::zero();
    }
    let eig = linalg::sym_eigenvalues(p);
    bisect(eig.as_slice(), c.value(), opts)
}

/// Solves for `θ` and returns it with `V = (P^{-1} - θ I)^{-1}`.
pub fn risk_update<T: Scalar>(
    p: &DMatrix<T>,
    c: Tolerance<T>,
    opts: &BisectionOptions<T>,
) -> Result<(T, DMatrix<T>)> {
    if c.is_zero() {
        return Ok((T::zero(), p.clone()));
    }
    let eig = SymmetricEigen::new(p.clone());
    let eigs = eig.eigenvalues.as_slice();
    if eigs.iter().any(|&d| !(d > T::zero())) {
        return Err(Error::not_pd("P"));
    }
    let theta = bisect(eigs, c.value(), opts);
    let margin = T::one() - theta * lambda_max(eigs);
    let v = if margin < lit(NEAR_SINGULAR) {
        let scaled = eig.eigenvalues.map(|d| d / (T::one() - theta * d));
        &eig.eigenvectors * DMatrix::from_diagonal(&scaled) * eig.eigenvectors.transpose()
    } else {
        // (P^{-1} - θI)^{-1} = (I - θP)^{-1} P
        let n = p.nrows();
        let shifted = symmetrized(DMatrix::identity(n, n) - p * theta);
        linalg::cholesky(&shifted, "I - θP")?.solve(p)
    };
    Ok((theta, symmetrized(v)))
}

/// `A (V^{-1} + S)^{-1} A^T + B B^T`.
pub fn riccati_map<T: Scalar>(
    a: &DMatrix<T>,
    bbt: &DMatrix<T>,
    v: &DMatrix<T>,
    s: &DMatrix<T>,
) -> Result<DMatrix<T>> {
    let posterior = posterior_covariance(v, s)?;
    Ok(symmetrized(a * posterior * a.transpose() + bbt))
}

/// `(V^{-1} + S)^{-1}`.
pub fn posterior_covariance<T: Scalar>(v: &DMatrix<T>, s: &DMatrix<T>) -> Result<DMatrix<T>> {
    let info = linalg::spd_inverse(v, "V")? + s;
    linalg::spd_inverse(&symmetrized(info), "V^{-1} + S")
}

/// State of the centralized robust predictor.
#[derive(Clone, Debug)]
pub struct RobustFilterState<T: Scalar> {
    /// Prediction `x̂_t` of `x_t` given `y_0..y_{t-1}`.
    pub x_hat: DVector<T>,
    /// Inflated covariance `V_t`.
    pub v: DMatrix<T>,
    /// Pre-perturbation covariance `P_t` (equal to `V_0` initially).
    pub p: DMatrix<T>,
    /// `θ_{t-1}`, zero initially.
    pub theta: T,
    /// `G_{t-1}`, absent before the first step.
    pub gain: Option<DMatrix<T>>,
}

impl<T: Scalar> RobustFilterState<T> {
    pub fn new(x_hat: DVector<T>, v: DMatrix<T>) -> Self {
        RobustFilterState {
            x_hat,
            p: v.clone(),
            v,
            theta: T::zero(),
            gain: None,
        }
    }
}

/// `G = A V C^T (C V C^T + R)^{-1}`.
pub fn robust_gain<T: Scalar>(model: &GlobalModel<T>, v: &DMatrix<T>) -> Result<DMatrix<T>> {
    let c = model.c();
    let innovation = symmetrized(c * v * c.transpose() + model.r());
    let chol = linalg::cholesky(&innovation, "innovation covariance").map_err(|_| {
        Error::InnovationSingular {
            condition: linalg::sym_condition(&innovation),
        }
    })?;
    let rhs = c * v * model.a().transpose();
    Ok(chol.solve(&rhs).transpose())
}

/// One step of the centralized robust predictor with optional known input `r_t`.
pub fn robust_predict_step<T: Scalar>(
    model: &GlobalModel<T>,
    state: &RobustFilterState<T>,
    y: &DVector<T>,
    c: Tolerance<T>,
    input: Option<&DVector<T>>,
    opts: &BisectionOptions<T>,
) -> Result<RobustFilterState<T>> {
    let n = model.state_dim();
    check_len(&state.x_hat, n, "prediction")?;
    check_len(y, model.output_dim(), "measurement")?;
    let gain = robust_gain(model, &state.v)?;
    let innovation = y - model.c() * &state.x_hat;
    let mut x_hat = model.a() * &state.x_hat + &gain * innovation;
    if let Some(r) = input {
        check_len(r, n, "deterministic input")?;
        x_hat += r;
    }
    let p = riccati_map(model.a(), model.bbt(), &state.v, model.s_tot())?;
    let (theta, v) = risk_update(&p, c, opts)?;
    Ok(RobustFilterState {
        x_hat,
        v,
        p,
        theta,
        gain: Some(gain),
    })
}

#[derive(Clone, Copy, Debug)]
pub struct SteadyStateOptions<T: Scalar> {
    /// Stop once `|P_{t+1} - P_t|_F <= tol`.
    pub tol: T,
    pub max_iter: usize,
    pub bisection: BisectionOptions<T>,
}

impl<T: Scalar> Default for SteadyStateOptions<T> {
    fn default() -> Self {
        SteadyStateOptions {
            tol: lit(1e-12),
            max_iter: 10_000,
            bisection: BisectionOptions::default(),
        }
    }
}

/// Fixed point of the covariance recursion.
#[derive(Clone, Debug)]
pub struct SteadyState<T: Scalar> {
    pub p: DMatrix<T>,
    pub theta: T,
    pub v: DMatrix<T>,
    pub gain: DMatrix<T>,
    pub iterations: usize,
    /// Frobenius residual of `P = A (P^{-1} - θI + S)^{-1} A^T + BB^T`.
    pub residual: T,
}

/// Iterates `V -> P -> θ -> V` from `v0` until `P` stops changing.
pub fn steady_state<T: Scalar>(
    model: &GlobalModel<T>,
    c: Tolerance<T>,
    v0: &DMatrix<T>,
    opts: &SteadyStateOptions<T>,
) -> Result<SteadyState<T>> {
    let mut v = v0.clone();
    let mut p_prev: Option<DMatrix<T>> = None;
    let mut change = T::max_value().unwrap_or_else(|| lit(f64::MAX));
    for it in 1..=opts.max_iter {
        let p = riccati_map(model.a(), model.bbt(), &v, model.s_tot())?;
        let (theta, v_next) = risk_update(&p, c, &opts.bisection)?;
        if let Some(prev) = &p_prev {
            change = linalg::frobenius_distance(&p, prev);
        }
        let converged = change <= opts.tol;
        if converged {
            let gain = robust_gain(model, &v_next)?;
            let n = model.state_dim();
            let inner = linalg::spd_inverse(&p, "P")? - DMatrix::identity(n, n) * theta + model.s_tot();
            let rhs = model.a() * linalg::spd_inverse(&symmetrized(inner), "P^{-1} - θI + S")?
                * model.a().transpose()
                + model.bbt();
            let residual = (&p - rhs).norm();
            return Ok(SteadyState {
                p,
                theta,
                v: v_next,
                gain,
                iterations: it,
                residual,
            });
        }
        v = v_next;
        p_prev = Some(p);
    }
    Err(Error::NotConverged {
        iterations: opts.max_iter,
        change: to_f64(change),
        last_iterate: p_prev.map(|p| p.map(to_f64)).unwrap_or_else(|| DMatrix::zeros(0, 0)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_global_model, NodeModel};
    use approx::assert_relative_eq;

    fn scalar_model() -> GlobalModel<f64> {
        let one = DMatrix::from_element(1, 1, 1.0);
        build_global_model(one.clone(), one.clone(), vec![NodeModel::new(one.clone(), one).unwrap()])
            .unwrap()
    }

    #[test]
    fn gamma_hand_values() {
        let p = DMatrix::from_element(1, 1, 1.0);
        assert_eq!(gamma(&p, 0.0).unwrap(), 0.0);
        assert_relative_eq!(gamma(&p, 0.5).unwrap(), 1.0 - 2f64.ln(), epsilon = 1e-15);
        let p2 = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0]));
        assert_relative_eq!(gamma(&p2, 0.25).unwrap(), 0.375f64.ln() + 4.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn gamma_domain() {
        let p = DMatrix::from_element(1, 1, 2.0);
        assert!(matches!(gamma(&p, 0.5), Err(Error::ThetaOutOfDomain { .. })));
        assert!(gamma(&p, -0.1).is_err());
        assert!(gamma(&p, 0.49).is_ok());
    }

    #[test]
    fn solve_theta_inverts_hand_values() {
        let opts = BisectionOptions::default();
        let p = DMatrix::from_element(1, 1, 1.0);
        let c = Tolerance::new(1.0 - 2f64.ln()).unwrap();
        assert_relative_eq!(solve_theta(&p, c, &opts), 0.5, epsilon = 1e-9);
        let p2 = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0]));
        let c = Tolerance::new(0.375f64.ln() + 4.0 / 3.0).unwrap();
        assert_relative_eq!(solve_theta(&p2, c, &opts), 0.25, epsilon = 1e-9);
        assert_eq!(solve_theta(&p2, Tolerance::zero(), &opts), 0.0);
    }

    #[test]
    fn tolerance_rejects_negative() {
        assert!(Tolerance::new(-1e-3).is_err());
        assert!(Tolerance::new(f64::NAN).is_err());
    }

    #[test]
    fn near_pole_uses_eigen_path() {
        let p = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.5]));
        let (theta, v) = risk_update(&p, Tolerance::new(1e9).unwrap(), &BisectionOptions::default()).unwrap();
        assert!(1.0 - theta < 1e-8);
        assert!(v[(0, 0)] > 1e8);
        assert_relative_eq!(v[(1, 1)], 0.5 / (1.0 - 0.5 * theta), epsilon = 1e-12);
    }

    #[test]
    fn scalar_step_without_uncertainty() {
        let m = scalar_model();
        let s0 = RobustFilterState::new(DVector::zeros(1), DMatrix::from_element(1, 1, 1.0));
        let y = DVector::from_element(1, 1.0);
        let s1 = robust_predict_step(&m, &s0, &y, Tolerance::zero(), None, &BisectionOptions::default()).unwrap();
        assert_relative_eq!(s1.gain.as_ref().unwrap()[(0, 0)], 0.5, epsilon = 1e-15);
        assert_relative_eq!(s1.x_hat[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(s1.p[(0, 0)], 1.5, epsilon = 1e-15);
        assert_eq!(s1.v, s1.p);
        assert_eq!(s1.theta, 0.0);
    }

    #[test]
    fn scalar_step_with_uncertainty() {
        let m = scalar_model();
        let c = gamma(&DMatrix::from_element(1, 1, 1.5), 0.2).unwrap();
        assert_relative_eq!(c, 0.7f64.ln() + 1.0 / 0.7 - 1.0, epsilon = 1e-15);
        let s0 = RobustFilterState::new(DVector::zeros(1), DMatrix::from_element(1, 1, 1.0));
        let y = DVector::from_element(1, 1.0);
        let s1 = robust_predict_step(&m, &s0, &y, Tolerance::new(c).unwrap(), None, &BisectionOptions::default())
            .unwrap();
        assert_relative_eq!(s1.theta, 0.2, epsilon = 1e-9);
        assert_relative_eq!(s1.v[(0, 0)], 1.0 / (2.0 / 3.0 - 0.2), epsilon = 1e-8);
    }

    #[test]
    fn deterministic_input_shifts_prediction() {
        let m = scalar_model();
        let s0 = RobustFilterState::new(DVector::zeros(1), DMatrix::from_element(1, 1, 1.0));
        let y = DVector::from_element(1, 1.0);
        let r = DVector::from_element(1, 2.0);
        let opts = BisectionOptions::default();
        let s1 = robust_predict_step(&m, &s0, &y, Tolerance::zero(), Some(&r), &opts).unwrap();
        assert_relative_eq!(s1.x_hat[0], 2.5, epsilon = 1e-15);
        assert!(robust_predict_step(&m, &s0, &DVector::zeros(2), Tolerance::zero(), None, &opts).is_err());
    }

    #[test]
    fn scalar_steady_state_is_unique() {
        let m = scalar_model();
        let c = Tolerance::new(0.01).unwrap();
        let opts = SteadyStateOptions::default();
        let a = steady_state(&m, c, &DMatrix::from_element(1, 1, 0.1), &opts).unwrap();
        let b = steady_state(&m, c, &DMatrix::from_element(1, 1, 10.0), &opts).unwrap();
        assert_relative_eq!(a.p[(0, 0)], b.p[(0, 0)], epsilon = 1e-8);
        assert!((gamma(&a.p, a.theta).unwrap() - 0.01).abs() <= 1e-10);
        assert!(a.residual < 1e-10);
    }

    #[test]
    fn steady_state_reports_non_convergence() {
        let m = scalar_model();
        let opts = SteadyStateOptions {
            max_iter: 3,
            ..Default::default()
        };
        let err = steady_state(&m, Tolerance::new(0.01).unwrap(), &DMatrix::from_element(1, 1, 1.0), &opts)
            .unwrap_err();
        match err {
            Error::NotConverged { iterations, last_iterate, .. } => {
                assert_eq!(iterations, 3);
                assert_eq!(last_iterate.shape(), (1, 1));
            }
            other => panic!("unexpected {other}"),
        }
    }
}
