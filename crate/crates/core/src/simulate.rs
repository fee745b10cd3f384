//! Monte Carlo harness for cross-checking the analytic performance.
//!
//! Trajectory `i` of a run with master seed `s` draws from
//! `ChaCha20Rng::seed_from_u64(s)` switched to stream `i`, so every trajectory
//! is reproducible on its own and runs can be generated in parallel. Runs are
//! processed in fixed-size chunks whose partial sums are merged in chunk order
//! with compensated summation, which makes the aggregates independent of the
//! thread count. All filters consume the same measurement realizations.

use std::ops::RangeInclusive;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::least_favorable::LfParameters;
use crate::linalg::{self, check_len, check_shape};
use crate::model::{
    build_diffusion_weights, build_local_models, DiffusionWeights, GlobalModel, LocalModel, SensorNetwork, WeightRule,
};
use crate::performance::{node_schedules, window_mean, FilterBank};
use crate::robust::{BisectionOptions, Tolerance};
use crate::scalar::{lit, to_f64, Scalar};

/// Known input `r_t` added to the state update and to every prediction.
#[derive(Clone, Debug, Default)]
pub enum DeterministicInput<T: Scalar> {
    #[default]
    None,
    Constant(DVector<T>),
    /// `r_t` for `t = 0, 1, ...`; zero past the end of the sequence.
    Sequence(Vec<DVector<T>>),
}

impl<T: Scalar> DeterministicInput<T> {
    pub fn at(&self, t: usize) -> Option<&DVector<T>> {
        match self {
            DeterministicInput::None => None,
            DeterministicInput::Constant(r) => Some(r),
            DeterministicInput::Sequence(rs) => rs.get(t),
        }
    }

    fn check(&self, n: usize) -> Result<()> {
        match self {
            DeterministicInput::None => Ok(()),
            DeterministicInput::Constant(r) => check_len(r, n, "deterministic input"),
            DeterministicInput::Sequence(rs) => rs.iter().try_for_each(|r| check_len(r, n, "deterministic input")),
        }
    }
}

/// One sampled realization over `t = 0..=T`.
#[derive(Clone, Debug)]
pub struct Trajectory<T: Scalar> {
    /// `x_t` for `t = 0..=T+1`.
    pub x: Vec<DVector<T>>,
    /// `y_{k,t}` indexed `[t][k]` for `t = 0..=T`.
    pub y: Vec<Vec<DVector<T>>>,
    /// `ξ_t = [x_t; x̃_t]` for `t = 0..=T+1` when drawn from the least favorable model.
    pub xi: Option<Vec<DVector<T>>>,
    /// Stream index within the master seed.
    pub stream: u64,
}

impl<T: Scalar> Trajectory<T> {
    pub fn horizon(&self) -> usize {
        self.y.len().saturating_sub(1)
    }
}

/// RNG of trajectory `stream` under `master_seed`.
pub fn trajectory_rng(master_seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(master_seed);
    rng.set_stream(stream);
    rng
}

/// `dim` independent standard normal draws.
pub fn standard_normal<T: Scalar, R: Rng + ?Sized>(rng: &mut R, dim: usize) -> DVector<T> {
    DVector::from_fn(dim, |_, _| lit(rng.sample::<f64, _>(StandardNormal)))
}

fn initial_state<T: Scalar, R: Rng + ?Sized>(x0_hat: &DVector<T>, v0_sqrt: &DMatrix<T>, rng: &mut R) -> DVector<T> {
    x0_hat + v0_sqrt * standard_normal::<T, _>(rng, x0_hat.len())
}

fn split_output<T: Scalar>(y: &DVector<T>, n_nodes: usize, p: usize) -> Vec<DVector<T>> {
    (0..n_nodes).map(|k| y.rows(k * p, p).into_owned()).collect()
}

/// Samples the nominal model `x_{t+1} = A x_t + Γ_B u_t + r_t`, `y_t = C x_t + Γ_D u_t`.
pub fn simulate_nominal<T: Scalar, R: Rng + ?Sized>(
    model: &GlobalModel<T>,
    x0_hat: &DVector<T>,
    v0: &DMatrix<T>,
    horizon: usize,
    input: &DeterministicInput<T>,
    rng: &mut R,
) -> Result<Trajectory<T>> {
    let n = model.state_dim();
    check_len(x0_hat, n, "initial mean")?;
    check_shape(v0, n, n, "V_0")?;
    input.check(n)?;
    let m = model.noise_dim();
    let mut x = Vec::with_capacity(horizon + 2);
    let mut y = Vec::with_capacity(horizon + 1);
    x.push(initial_state(x0_hat, &linalg::psd_sqrt(v0), rng));
    for t in 0..=horizon {
        let u = standard_normal::<T, _>(rng, m);
        let xt = &x[t];
        y.push(split_output(
            &(model.c() * xt + model.gamma_d() * &u),
            model.n_nodes(),
            model.sensor_dim(),
        ));
        let mut next = model.a() * xt + model.gamma_b() * &u;
        if let Some(r) = input.at(t) {
            next += r;
        }
        x.push(next);
    }
    Ok(Trajectory { x, y, xi: None, stream: 0 })
}

/// Samples the least favorable model `ξ_{t+1} = Ǎ_t ξ_t + B̌_t ε_t`,
/// `y_t = Č_t ξ_t + Ď_t ε_t` with `ξ_0 = [x_0; x_0 - x̂_0]`.
///
/// `params[t]` must cover `t = 0..=T`. A known input enters the state part of `ξ` only.
pub fn simulate_lf<T: Scalar, R: Rng + ?Sized>(
    model: &GlobalModel<T>,
    params: &[LfParameters<T>],
    x0_hat: &DVector<T>,
    v0: &DMatrix<T>,
    input: &DeterministicInput<T>,
    rng: &mut R,
) -> Result<Trajectory<T>> {
    let n = model.state_dim();
    check_len(x0_hat, n, "initial mean")?;
    check_shape(v0, n, n, "V_0")?;
    input.check(n)?;
    if params.is_empty() {
        return Err(Error::InvalidParameter("least favorable model has no time steps".into()));
    }
    let m = model.noise_dim();
    let horizon = params.len() - 1;
    let x0 = initial_state(x0_hat, &linalg::psd_sqrt(v0), rng);
    let mut xi0 = DVector::zeros(2 * n);
    xi0.rows_mut(0, n).copy_from(&x0);
    xi0.rows_mut(n, n).copy_from(&(&x0 - x0_hat));
    let mut xi = Vec::with_capacity(horizon + 2);
    let mut y = Vec::with_capacity(horizon + 1);
    xi.push(xi0);
    for (t, lf) in params.iter().enumerate() {
        let eps = standard_normal::<T, _>(rng, m);
        let cur = &xi[t];
        y.push(split_output(
            &(&lf.c_check * cur + &lf.d_check * &eps),
            model.n_nodes(),
            model.sensor_dim(),
        ));
        let mut next = &lf.a_check * cur + &lf.b_check * &eps;
        if let Some(r) = input.at(t) {
            let mut head = next.rows_mut(0, n);
            head += r;
        }
        xi.push(next);
    }
    let x = xi.iter().map(|v| v.rows(0, n).into_owned()).collect();
    Ok(Trajectory {
        x,
        y,
        xi: Some(xi),
        stream: 0,
    })
}

/// A labelled distributed predictor: network, local models, weights and tolerance.
#[derive(Clone, Debug)]
pub struct FilterConfig<T: Scalar> {
    pub label: String,
    pub network: SensorNetwork,
    pub locals: Vec<LocalModel<T>>,
    pub weights: DiffusionWeights<T>,
    pub tolerance: Tolerance<T>,
}

impl<T: Scalar> FilterConfig<T> {
    pub fn new(
        label: impl Into<String>,
        network: SensorNetwork,
        model: &GlobalModel<T>,
        rule: WeightRule,
        tolerance: Tolerance<T>,
    ) -> Result<Self> {
        let label = label.into();
        let build = || -> Result<(Vec<LocalModel<T>>, DiffusionWeights<T>)> {
            Ok((build_local_models(&network, model)?, build_diffusion_weights(&network, rule)?))
        };
        let (locals, weights) = build().map_err(|e| e.in_variant(&label))?;
        Ok(FilterConfig {
            label,
            network,
            locals,
            weights,
            tolerance,
        })
    }

    /// Every node sees all measurements and keeps its own prediction, so each
    /// node runs the centralized predictor.
    pub fn centralized(label: impl Into<String>, model: &GlobalModel<T>, tolerance: Tolerance<T>) -> Result<Self> {
        Self::new(
            label,
            SensorNetwork::full(model.n_nodes())?,
            model,
            WeightRule::Identity,
            tolerance,
        )
    }

    pub fn bank(&self) -> FilterBank<'_, T> {
        FilterBank {
            network: &self.network,
            locals: &self.locals,
            weights: &self.weights,
            tolerance: self.tolerance,
        }
    }

    /// Precomputes the data-independent gains over `horizon` rounds.
    pub fn compile(&self, v0: &DMatrix<T>, horizon: usize, opts: &BisectionOptions<T>) -> Result<CompiledFilter<T>> {
        let schedules =
            node_schedules(&self.locals, v0, self.tolerance, horizon + 1, opts).map_err(|e| e.in_variant(&self.label))?;
        let mut gains = Vec::with_capacity(horizon + 1);
        for t in 0..=horizon {
            let row = self
                .locals
                .iter()
                .zip(&schedules)
                .enumerate()
                .map(|(k, (local, sched))| {
                    let post = crate::robust::posterior_covariance(&sched.v[t], local.s())
                        .map_err(|e| e.at_node(k).in_variant(&self.label))?;
                    let gain = local.a() * post * local.info_gain();
                    let transition = local.a() - &gain * local.c_loc();
                    Ok(NodeGain { transition, gain })
                })
                .collect::<Result<Vec<_>>>()?;
            gains.push(row);
        }
        Ok(CompiledFilter {
            label: self.label.clone(),
            neighborhoods: self.locals.iter().map(|l| l.neighbors().to_vec()).collect(),
            weights: self.weights.clone(),
            gains,
        })
    }
}

#[derive(Clone, Debug)]
struct NodeGain<T: Scalar> {
    /// `A - K C_loc`
    transition: DMatrix<T>,
    /// `K = A (V^{-1} + S)^{-1} C_loc^T R_loc^{-1}`
    gain: DMatrix<T>,
}

/// A filter with its gain sequence precomputed; running it only touches the data.
#[derive(Clone, Debug)]
pub struct CompiledFilter<T: Scalar> {
    pub label: String,
    neighborhoods: Vec<Vec<usize>>,
    weights: DiffusionWeights<T>,
    gains: Vec<Vec<NodeGain<T>>>,
}

impl<T: Scalar> CompiledFilter<T> {
    pub fn horizon(&self) -> usize {
        self.gains.len().saturating_sub(1)
    }

    pub fn n_nodes(&self) -> usize {
        self.neighborhoods.len()
    }

    /// Runs the filter on `traj` and returns the errors `x_t - x̂_{k,t}`
    /// indexed `[t][k]` for `t = 0..=T+1`.
    pub fn errors(
        &self,
        traj: &Trajectory<T>,
        x0_hat: &DVector<T>,
        input: &DeterministicInput<T>,
    ) -> Result<Vec<Vec<DVector<T>>>> {
        let horizon = traj.horizon();
        if horizon > self.horizon() || traj.y.first().map_or(0, |y| y.len()) != self.n_nodes() {
            return Err(Error::dims(
                format!("trajectory for filter `{}`", self.label),
                format!("horizon <= {} with {} nodes", self.horizon(), self.n_nodes()),
                format!("horizon {horizon}"),
            ));
        }
        let n_nodes = self.n_nodes();
        let mut x_hat = vec![x0_hat.clone(); n_nodes];
        let mut out = Vec::with_capacity(horizon + 2);
        out.push(x_hat.iter().map(|x| &traj.x[0] - x).collect());
        for t in 0..=horizon {
            let ys = &traj.y[t];
            let mut psi: Vec<DVector<T>> = (0..n_nodes)
                .map(|k| {
                    let g = &self.gains[t][k];
                    let mut p = &g.transition * &x_hat[k];
                    let mut col = 0;
                    for &l in &self.neighborhoods[k] {
                        let yl = &ys[l];
                        p.gemv(T::one(), &g.gain.columns(col, yl.len()), yl, T::one());
                        col += yl.len();
                    }
                    p
                })
                .collect();
            if let Some(r) = input.at(t) {
                for p in &mut psi {
                    *p += r;
                }
            }
            x_hat = crate::distributed::diffuse(&self.weights, &psi);
            out.push(x_hat.iter().map(|x| &traj.x[t + 1] - x).collect());
        }
        Ok(out)
    }
}

/// Neumaier compensated sum.
#[derive(Clone, Copy, Debug)]
pub struct Neumaier<T: Scalar> {
    sum: T,
    comp: T,
}

impl<T: Scalar> Default for Neumaier<T> {
    fn default() -> Self {
        Neumaier {
            sum: T::zero(),
            comp: T::zero(),
        }
    }
}

impl<T: Scalar> Neumaier<T> {
    pub fn add(&mut self, x: T) {
        let s = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - s) + x;
        } else {
            self.comp += (x - s) + self.sum;
        }
        self.sum = s;
    }

    pub fn merge(&mut self, other: &Self) {
        self.add(other.sum);
        self.add(other.comp);
    }

    pub fn value(&self) -> T {
        self.sum + self.comp
    }
}

/// Running sums of squared errors and error components for one filter.
#[derive(Clone, Debug)]
struct Accumulator<T: Scalar> {
    runs: usize,
    n: usize,
    n_nodes: usize,
    sq: Vec<Neumaier<T>>,
    first: Vec<Neumaier<T>>,
    second: Vec<Neumaier<T>>,
}

impl<T: Scalar> Accumulator<T> {
    fn new(steps: usize, n_nodes: usize, n: usize) -> Self {
        Accumulator {
            runs: 0,
            n,
            n_nodes,
            sq: vec![Neumaier::default(); steps * n_nodes],
            first: vec![Neumaier::default(); steps * n_nodes * n],
            second: vec![Neumaier::default(); steps * n_nodes * n],
        }
    }

    fn push(&mut self, errors: &[Vec<DVector<T>>]) {
        self.runs += 1;
        for (t, row) in errors.iter().enumerate() {
            for (k, e) in row.iter().enumerate() {
                let idx = t * self.n_nodes + k;
                self.sq[idx].add(e.norm_squared());
                for (i, &ei) in e.iter().enumerate() {
                    self.first[idx * self.n + i].add(ei);
                    self.second[idx * self.n + i].add(ei * ei);
                }
            }
        }
    }

    fn merge(&mut self, other: &Self) {
        self.runs += other.runs;
        for (a, b) in self.sq.iter_mut().zip(&other.sq) {
            a.merge(b);
        }
        for (a, b) in self.first.iter_mut().zip(&other.first) {
            a.merge(b);
        }
        for (a, b) in self.second.iter_mut().zip(&other.second) {
            a.merge(b);
        }
    }

    fn finish(self, label: &str) -> ErrorTrace<T> {
        let m: T = lit(self.runs.max(1) as f64);
        let steps = self.sq.len() / self.n_nodes.max(1);
        let mut msd = Vec::with_capacity(steps);
        let mut mean_error = Vec::with_capacity(steps);
        let mut error_sd = Vec::with_capacity(steps);
        for t in 0..steps {
            let mut msd_row = Vec::with_capacity(self.n_nodes);
            let mut mean_row = Vec::with_capacity(self.n_nodes);
            let mut sd_row = Vec::with_capacity(self.n_nodes);
            for k in 0..self.n_nodes {
                let idx = t * self.n_nodes + k;
                msd_row.push(self.sq[idx].value() / m);
                let mean = DVector::from_fn(self.n, |i, _| self.first[idx * self.n + i].value() / m);
                let sd = DVector::from_fn(self.n, |i, _| {
                    let var = self.second[idx * self.n + i].value() / m - mean[i] * mean[i];
                    var.max(T::zero()).sqrt()
                });
                mean_row.push(mean);
                sd_row.push(sd);
            }
            msd.push(msd_row);
            mean_error.push(mean_row);
            error_sd.push(sd_row);
        }
        ErrorTrace {
            label: label.to_string(),
            runs: self.runs,
            msd,
            mean_error,
            error_sd,
        }
    }
}

/// Run-averaged error statistics of one filter, indexed `[t][k]` for `t = 0..=T+1`.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorTrace<T: Scalar> {
    pub label: String,
    pub runs: usize,
    /// Empirical `MSD_{k,t}`.
    pub msd: Vec<Vec<T>>,
    /// Empirical mean of `x_t - x̂_{k,t}`.
    pub mean_error: Vec<Vec<DVector<T>>>,
    /// Empirical standard deviation of each error component.
    pub error_sd: Vec<Vec<DVector<T>>>,
}

impl<T: Scalar> ErrorTrace<T> {
    /// Trace of a single run.
    pub fn from_run(label: &str, errors: &[Vec<DVector<T>>]) -> Self {
        let n_nodes = errors.first().map_or(0, |r| r.len());
        let n = errors.first().and_then(|r| r.first()).map_or(0, |e| e.len());
        let mut acc = Accumulator::new(errors.len(), n_nodes, n);
        acc.push(errors);
        acc.finish(label)
    }

    /// Empirical `MSD̄_t`.
    pub fn msd_avg(&self) -> Vec<T> {
        self.msd
            .iter()
            .map(|row| row.iter().fold(T::zero(), |a, &b| a + b) / lit(row.len().max(1) as f64))
            .collect()
    }

    /// Largest `|mean| / (σ / √M)` over all times, nodes and components with `σ > 0`.
    pub fn max_standardized_mean(&self) -> f64 {
        let root_m = (self.runs as f64).sqrt();
        let mut worst = 0.0f64;
        for (mrow, srow) in self.mean_error.iter().zip(&self.error_sd) {
            for (mean, sd) in mrow.iter().zip(srow) {
                for (mu, s) in mean.iter().zip(sd.iter()) {
                    let s = to_f64(*s);
                    if s > 0.0 {
                        worst = worst.max(to_f64(*mu).abs() * root_m / s);
                    }
                }
            }
        }
        worst
    }
}

/// Time- and run-averaged MSD over `window`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalMsd<T: Scalar> {
    pub nodes: Vec<T>,
    pub average: T,
}

pub fn empirical_msd<T: Scalar>(trace: &ErrorTrace<T>, window: &RangeInclusive<usize>) -> Result<EmpiricalMsd<T>> {
    let n_nodes = trace.msd.first().map_or(0, |r| r.len());
    let nodes = (0..n_nodes)
        .map(|k| {
            let series: Vec<T> = trace.msd.iter().map(|row| row[k]).collect();
            window_mean(&series, window)
        })
        .collect::<Result<Vec<T>>>()?;
    let average = window_mean(&trace.msd_avg(), window)?;
    Ok(EmpiricalMsd { nodes, average })
}

/// Runs every filter on every trajectory and aggregates sequentially.
pub fn run_filter_bank<T: Scalar>(
    trajectories: &[Trajectory<T>],
    filters: &[CompiledFilter<T>],
    x0_hat: &DVector<T>,
    input: &DeterministicInput<T>,
) -> Result<Vec<ErrorTrace<T>>> {
    let horizon = trajectories.first().map_or(0, |t| t.horizon());
    let mut accs = fresh_accumulators(filters, horizon, x0_hat.len());
    for traj in trajectories {
        push_trajectory(&mut accs, filters, traj, x0_hat, input)?;
    }
    Ok(accs.into_iter().zip(filters).map(|(a, f)| a.finish(&f.label)).collect())
}

fn fresh_accumulators<T: Scalar>(filters: &[CompiledFilter<T>], horizon: usize, n: usize) -> Vec<Accumulator<T>> {
    filters
        .iter()
        .map(|f| Accumulator::new(horizon + 2, f.n_nodes(), n))
        .collect()
}

fn push_trajectory<T: Scalar>(
    accs: &mut [Accumulator<T>],
    filters: &[CompiledFilter<T>],
    traj: &Trajectory<T>,
    x0_hat: &DVector<T>,
    input: &DeterministicInput<T>,
) -> Result<()> {
    for (acc, f) in accs.iter_mut().zip(filters) {
        let errors = f.errors(traj, x0_hat, input).map_err(|e| e.in_variant(&f.label))?;
        acc.push(&errors);
    }
    Ok(())
}

/// Model the trajectories are drawn from.
#[derive(Clone, Copy, Debug)]
pub enum TrajectorySource<'a, T: Scalar> {
    Nominal,
    LeastFavorable(&'a [LfParameters<T>]),
}

#[derive(Clone, Copy, Debug)]
pub struct MonteCarloSpec {
    pub runs: usize,
    pub master_seed: u64,
    /// Runs per work unit; fixes the summation order independently of the thread count.
    pub chunk: usize,
}

impl MonteCarloSpec {
    pub fn new(runs: usize, master_seed: u64) -> Self {
        MonteCarloSpec {
            runs,
            master_seed,
            chunk: 32,
        }
    }
}

/// Draws `spec.runs` trajectories and aggregates the errors of every filter.
#[allow(clippy::too_many_arguments)]
pub fn monte_carlo<T: Scalar>(
    model: &GlobalModel<T>,
    source: TrajectorySource<'_, T>,
    filters: &[CompiledFilter<T>],
    x0_hat: &DVector<T>,
    v0: &DMatrix<T>,
    horizon: usize,
    input: &DeterministicInput<T>,
    spec: MonteCarloSpec,
) -> Result<Vec<ErrorTrace<T>>> {
    if spec.chunk == 0 {
        return Err(Error::InvalidParameter("Monte Carlo chunk size must be positive".into()));
    }
    if let TrajectorySource::LeastFavorable(params) = source {
        if params.len() != horizon + 1 {
            return Err(Error::dims("least favorable model horizon", horizon + 1, params.len()));
        }
    }
    let n = model.state_dim();
    let draw = |stream: u64| -> Result<Trajectory<T>> {
        let mut rng = trajectory_rng(spec.master_seed, stream);
        let mut traj = match source {
            TrajectorySource::Nominal => simulate_nominal(model, x0_hat, v0, horizon, input, &mut rng)?,
            TrajectorySource::LeastFavorable(params) => simulate_lf(model, params, x0_hat, v0, input, &mut rng)?,
        };
        traj.stream = stream;
        Ok(traj)
    };
    let n_chunks = spec.runs.div_ceil(spec.chunk);
    let partials = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut accs = fresh_accumulators(filters, horizon, n);
            let end = ((c + 1) * spec.chunk).min(spec.runs);
            for run in c * spec.chunk..end {
                let traj = draw(run as u64)?;
                push_trajectory(&mut accs, filters, &traj, x0_hat, input)?;
            }
            Ok(accs)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = fresh_accumulators(filters, horizon, n);
    for part in &partials {
        for (a, b) in total.iter_mut().zip(part) {
            a.merge(b);
        }
    }
    Ok(total.into_iter().zip(filters).map(|(a, f)| a.finish(&f.label)).collect())
}
