//! Least favorable model of the centralized robust filter over `[0, T]`.
//!
//! The model drives `ξ_t = [x_t; e_t]`, the state together with the error of
//! the centralized robust predictor:
//!
//! ```text
//! ξ_{t+1} = Ǎ_t ξ_t + B̌_t ε_t
//! y_t     = Č_t ξ_t + Ď_t ε_t
//! ```
//!
//! Building it takes a forward sweep of the robust filter for the gains
//! `G_t` and `θ_t`, then a backward sweep of `Ω_t^{-1}` from
//! `Ω_{T+1}^{-1} = 0`, which yields `K_t`, `Γ_{H_t}` and `Γ_{L_t}`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{self, symmetrized, vstack};
use crate::model::GlobalModel;
use crate::robust::{riccati_map, risk_update, robust_gain, BisectionOptions, Tolerance};
use crate::scalar::Scalar;

/// One step of the forward sweep.
#[derive(Clone, Debug)]
pub struct GainStep<T: Scalar> {
    /// `V_t`
    pub v: DMatrix<T>,
    /// `G_t = A V_t C^T (C V_t C^T + R)^{-1}`
    pub gain: DMatrix<T>,
    /// `P_{t+1}`
    pub p_next: DMatrix<T>,
    /// `θ_t`
    pub theta: T,
    /// `V_{t+1}`
    pub v_next: DMatrix<T>,
}

/// Gains and covariances of the centralized robust filter for `t = 0..=T`.
#[derive(Clone, Debug)]
pub struct GainSchedule<T: Scalar> {
    pub steps: Vec<GainStep<T>>,
}

impl<T: Scalar> GainSchedule<T> {
    /// Horizon `T`; the schedule holds `T + 1` steps.
    pub fn horizon(&self) -> usize {
        self.steps.len() - 1
    }

    pub fn thetas(&self) -> Vec<T> {
        self.steps.iter().map(|s| s.theta).collect()
    }

    /// `|G_{t+1} - G_t|_F` for consecutive steps.
    pub fn gain_changes(&self) -> Vec<T> {
        self.steps
            .windows(2)
            .map(|w| linalg::frobenius_distance(&w[1].gain, &w[0].gain))
            .collect()
    }
}

/// Forward sweep of the centralized robust filter for `t = 0..=horizon`.
///
/// Only the covariance recursion runs; measurements do not enter the gains.
pub fn forward_gain_sweep<T: Scalar>(
    model: &GlobalModel<T>,
    c: Tolerance<T>,
    v0: &DMatrix<T>,
    horizon: usize,
    opts: &BisectionOptions<T>,
) -> Result<GainSchedule<T>> {
    let mut steps = Vec::with_capacity(horizon + 1);
    let mut v = v0.clone();
    for _ in 0..=horizon {
        let gain = robust_gain(model, &v)?;
        let p_next = riccati_map(model.a(), model.bbt(), &v, model.s_tot())?;
        let (theta, v_next) = risk_update(&p_next, c, opts)?;
        steps.push(GainStep {
            v: std::mem::replace(&mut v, v_next.clone()),
            gain,
            p_next,
            theta,
            v_next,
        });
    }
    Ok(GainSchedule { steps })
}

/// Quantities produced by the backward sweep at time `t`.
#[derive(Clone, Debug)]
pub struct BackwardStep<T: Scalar> {
    /// `Ω_t^{-1}`
    pub omega_inv: DMatrix<T>,
    /// `K_t`
    pub k: DMatrix<T>,
    /// `Γ_{H_t}`, `(pN + n) x n`
    pub gamma_h: DMatrix<T>,
    /// Lower Cholesky factor `Γ_{L_t}` of `K_t`
    pub gamma_l: DMatrix<T>,
}

#[derive(Clone, Debug)]
pub struct BackwardSweep<T: Scalar> {
    /// Indexed by `t = 0..=T`.
    pub steps: Vec<BackwardStep<T>>,
}

impl<T: Scalar> BackwardSweep<T> {
    /// `|Ω_t^{-1} - Ω_{t+1}^{-1}|_F` for `t = 0..T`.
    pub fn omega_changes(&self) -> Vec<T> {
        self.steps
            .windows(2)
            .map(|w| linalg::frobenius_distance(&w[0].omega_inv, &w[1].omega_inv))
            .collect()
    }
}

/// `Γ_B - G_t Γ_D` and `A - G_t C`.
fn closed_loop<T: Scalar>(model: &GlobalModel<T>, gain: &DMatrix<T>) -> (DMatrix<T>, DMatrix<T>) {
    let noise = model.gamma_b() - gain * model.gamma_d();
    let state = model.a() - gain * model.c();
    (noise, state)
}

/// Lower-triangular `Γ_L` with `Γ_L Γ_L^T = K`.
pub fn factor_k<T: Scalar>(k: &DMatrix<T>) -> Result<DMatrix<T>> {
    linalg::cholesky_lower(k, "K_t")
}

/// Backward recursion for `Ω_t^{-1}`, `K_t` and `Γ_{H_t}`, starting from `Ω_{T+1}^{-1} = 0`.
///
/// Fails with [`Error::LeastFavorableBreakdown`] at the first `t` where
/// `K_t` is not positive definite.
pub fn backward_omega_sweep<T: Scalar>(
    model: &GlobalModel<T>,
    schedule: &GainSchedule<T>,
) -> Result<BackwardSweep<T>> {
    let n = model.state_dim();
    let m = model.noise_dim();
    let horizon = schedule.horizon();
    let mut omega_next = DMatrix::<T>::zeros(n, n);
    let mut rev = Vec::with_capacity(horizon + 1);
    for t in (0..=horizon).rev() {
        let step = &schedule.steps[t];
        let (noise, state) = closed_loop(model, &step.gain);
        let weight = &omega_next + DMatrix::identity(n, n) * step.theta;
        let k_inv = symmetrized(DMatrix::identity(m, m) - noise.transpose() * &weight * &noise);
        let k = linalg::spd_inverse(&k_inv, "K_t^{-1}").map_err(|_| Error::LeastFavorableBreakdown { t })?;
        let gamma_l = factor_k(&k).map_err(|_| Error::LeastFavorableBreakdown { t })?;
        let gamma_h = &k * noise.transpose() * &weight * &state;
        let omega_inv = symmetrized(state.transpose() * &weight * &state + gamma_h.transpose() * &k_inv * &gamma_h);
        omega_next = omega_inv.clone();
        rev.push(BackwardStep {
            omega_inv,
            k,
            gamma_h,
            gamma_l,
        });
    }
    rev.reverse();
    Ok(BackwardSweep { steps: rev })
}

/// State-space matrices of the least favorable model at one time, with the
/// row partitions `Γ_H = [M; H]` and `Γ_L = [N; L]`.
#[derive(Clone, Debug)]
pub struct LfParameters<T: Scalar> {
    pub a_check: DMatrix<T>,
    pub b_check: DMatrix<T>,
    pub c_check: DMatrix<T>,
    pub d_check: DMatrix<T>,
    /// `M_t`, `n x n`
    pub m: DMatrix<T>,
    /// `H_t`, `(pN) x n`
    pub h: DMatrix<T>,
    /// `N_t`, `n x (pN + n)`
    pub n: DMatrix<T>,
    /// `L_t`, `(pN) x (pN + n)`
    pub l: DMatrix<T>,
    /// `G_t`
    pub gain: DMatrix<T>,
    sensor_dim: usize,
}

impl<T: Scalar> LfParameters<T> {
    /// `H_{k,t}`, rows of `H_t` belonging to sensor `k`.
    pub fn h_node(&self, k: usize) -> DMatrix<T> {
        self.h.rows(k * self.sensor_dim, self.sensor_dim).into_owned()
    }

    /// `L_{k,t}`, rows of `L_t` belonging to sensor `k`.
    pub fn l_node(&self, k: usize) -> DMatrix<T> {
        self.l.rows(k * self.sensor_dim, self.sensor_dim).into_owned()
    }

    /// Lower-right block of `Ǎ_t`: `(A - G_t C) + (Γ_B - G_t Γ_D) Γ_{H_t}`.
    pub fn error_transition(&self) -> DMatrix<T> {
        let n = self.m.nrows();
        self.a_check.view((n, n), (n, n)).into_owned()
    }

    /// Lower block of `B̌_t`: `(Γ_B - G_t Γ_D) Γ_{L_t}`.
    pub fn error_noise(&self) -> DMatrix<T> {
        let n = self.m.nrows();
        self.b_check.rows(n, n).into_owned()
    }
}

/// Assembles `Ǎ_t, B̌_t, Č_t, Ď_t` and the partitions at time `t`.
pub fn assemble_lf_model<T: Scalar>(
    model: &GlobalModel<T>,
    schedule: &GainSchedule<T>,
    backward: &BackwardSweep<T>,
    t: usize,
) -> Result<LfParameters<T>> {
    if t > schedule.horizon() || backward.steps.len() != schedule.steps.len() {
        return Err(Error::InvalidParameter(format!(
            "time {t} outside the synthesized horizon {}",
            schedule.horizon()
        )));
    }
    let n = model.state_dim();
    let py = model.output_dim();
    let step = &schedule.steps[t];
    let back = &backward.steps[t];
    let (noise, state) = closed_loop(model, &step.gain);

    let mut a_check = DMatrix::zeros(2 * n, 2 * n);
    a_check.view_mut((0, 0), (n, n)).copy_from(model.a());
    a_check
        .view_mut((0, n), (n, n))
        .copy_from(&(model.gamma_b() * &back.gamma_h));
    a_check
        .view_mut((n, n), (n, n))
        .copy_from(&(&state + &noise * &back.gamma_h));

    let b_check = vstack(&[&(model.gamma_b() * &back.gamma_l), &(&noise * &back.gamma_l)]);

    let mut c_check = DMatrix::zeros(py, 2 * n);
    c_check.view_mut((0, 0), (py, n)).copy_from(model.c());
    c_check
        .view_mut((0, n), (py, n))
        .copy_from(&(model.gamma_d() * &back.gamma_h));
    let d_check = model.gamma_d() * &back.gamma_l;

    Ok(LfParameters {
        a_check,
        b_check,
        c_check,
        d_check,
        m: back.gamma_h.rows(0, n).into_owned(),
        h: back.gamma_h.rows(n, py).into_owned(),
        n: back.gamma_l.rows(0, n).into_owned(),
        l: back.gamma_l.rows(n, py).into_owned(),
        gain: step.gain.clone(),
        sensor_dim: model.sensor_dim(),
    })
}

/// Forward and backward sweeps bundled for a given nominal model and tolerance.
#[derive(Clone, Debug)]
pub struct LeastFavorableModel<T: Scalar> {
    pub schedule: GainSchedule<T>,
    pub backward: BackwardSweep<T>,
}

impl<T: Scalar> LeastFavorableModel<T> {
    pub fn synthesize(
        model: &GlobalModel<T>,
        c: Tolerance<T>,
        v0: &DMatrix<T>,
        horizon: usize,
        opts: &BisectionOptions<T>,
    ) -> Result<Self> {
        let schedule = forward_gain_sweep(model, c, v0, horizon, opts)?;
        let backward = backward_omega_sweep(model, &schedule)?;
        Ok(LeastFavorableModel { schedule, backward })
    }

    pub fn horizon(&self) -> usize {
        self.schedule.horizon()
    }

    pub fn at(&self, model: &GlobalModel<T>, t: usize) -> Result<LfParameters<T>> {
        assemble_lf_model(model, &self.schedule, &self.backward, t)
    }

    /// Parameters for every `t = 0..=T`.
    pub fn sequence(&self, model: &GlobalModel<T>) -> Result<Vec<LfParameters<T>>> {
        (0..=self.horizon()).map(|t| self.at(model, t)).collect()
    }

    /// `true` when every successive `Ω_t^{-1}` change inside `window` is below `tol`.
    pub fn omega_settled(&self, window: std::ops::Range<usize>, tol: T) -> bool {
        let changes = self.backward.omega_changes();
        window.into_iter().all(|t| changes.get(t).is_some_and(|d| *d < tol))
    }
}

/// Threshold on successive `Ω_t^{-1}` differences used to declare the
/// backward sweep settled inside the averaging window.
pub const OMEGA_SETTLE_TOLERANCE: f64 = 1e-9;
