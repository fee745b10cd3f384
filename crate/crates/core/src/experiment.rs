//! Least favorable analysis of the eight predictor variants.
//!
//! The analysis runs in three passes: the forward sweep of the centralized
//! robust filter, the backward synthesis of the least favorable model, and one
//! Lyapunov sweep per variant. Every variant is judged against the same least
//! favorable model.

use std::fmt;
use std::ops::RangeInclusive;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::distributed::CovarianceSchedule;
use crate::least_favorable::{LeastFavorableModel, OMEGA_SETTLE_TOLERANCE};
use crate::model::{GlobalModel, SensorNetwork, WeightRule};
use crate::performance::{evaluate_bank, node_schedules, steady_window, PerformanceTrace, SweepOptions};
use crate::robust::{BisectionOptions, Tolerance};
use crate::scalar::{lit, to_f64, Scalar};
use crate::simulate::{monte_carlo, DeterministicInput, ErrorTrace, FilterConfig, MonteCarloSpec, TrajectorySource};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Robust,
    Standard,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    Central,
    Diffusion,
    Consensus,
    Local,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Variant {
    pub family: Family,
    pub topology: Topology,
}

impl Variant {
    pub const fn new(family: Family, topology: Topology) -> Self {
        Variant { family, topology }
    }

    pub const ALL: [Variant; 8] = [
        Variant::new(Family::Robust, Topology::Central),
        Variant::new(Family::Robust, Topology::Diffusion),
        Variant::new(Family::Robust, Topology::Consensus),
        Variant::new(Family::Robust, Topology::Local),
        Variant::new(Family::Standard, Topology::Central),
        Variant::new(Family::Standard, Topology::Diffusion),
        Variant::new(Family::Standard, Topology::Consensus),
        Variant::new(Family::Standard, Topology::Local),
    ];

    pub fn label(self) -> String {
        let family = match self.family {
            Family::Robust => "rkf",
            Family::Standard => "kf",
        };
        let topology = match self.topology {
            Topology::Central => "central",
            Topology::Diffusion => "diff",
            Topology::Consensus => "cons",
            Topology::Local => "local",
        };
        format!("{family}_{topology}")
    }

    /// The same topology in the other family.
    pub fn counterpart(self) -> Self {
        let family = match self.family {
            Family::Robust => Family::Standard,
            Family::Standard => Family::Robust,
        };
        Variant::new(family, self.topology)
    }

    /// Filter configuration for this variant with robust tolerance `c` and
    /// consensus parameter `epsilon`.
    pub fn config<T: Scalar>(
        self,
        model: &GlobalModel<T>,
        network: &SensorNetwork,
        c: Tolerance<T>,
        epsilon: f64,
    ) -> Result<FilterConfig<T>> {
        let tolerance = match self.family {
            Family::Robust => c,
            Family::Standard => Tolerance::zero(),
        };
        let label = self.label();
        match self.topology {
            Topology::Central => FilterConfig::centralized(label, model, tolerance),
            Topology::Diffusion => FilterConfig::new(label, network.clone(), model, WeightRule::Degree, tolerance),
            Topology::Consensus => {
                FilterConfig::new(label, network.clone(), model, WeightRule::Consensus(epsilon), tolerance)
            }
            Topology::Local => FilterConfig::new(label, network.clone(), model, WeightRule::Identity, tolerance),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Parameters of one analysis run.
#[derive(Clone, Debug)]
pub struct AnalysisConfig<T: Scalar> {
    pub tolerance: Tolerance<T>,
    pub epsilon: f64,
    pub horizon: usize,
    /// Steady-state window fractions `(α, β)`.
    pub window: (f64, f64),
    pub variants: Vec<Variant>,
    pub bisection: BisectionOptions<T>,
    pub track_min_eigenvalue: bool,
}

impl<T: Scalar> AnalysisConfig<T> {
    pub fn new(tolerance: Tolerance<T>, epsilon: f64, horizon: usize) -> Self {
        AnalysisConfig {
            tolerance,
            epsilon,
            horizon,
            window: (0.5, 0.9),
            variants: Variant::ALL.to_vec(),
            bisection: BisectionOptions::default(),
            track_min_eigenvalue: false,
        }
    }

    pub fn steady_window(&self) -> Result<RangeInclusive<usize>> {
        steady_window(self.horizon, self.window.0, self.window.1)
    }
}

/// Analytic performance of one variant.
#[derive(Clone, Debug)]
pub struct VariantResult<T: Scalar> {
    pub variant: Variant,
    pub trace: PerformanceTrace<T>,
    /// Window average of `MSD̄_t`.
    pub steady_average: T,
    /// Window average of each `MSD_{k,t}`.
    pub steady_nodes: Vec<T>,
    /// Largest `|MSD̄_{t+1} - MSD̄_t|` inside the window.
    pub max_window_change: T,
}

/// Largest successive differences of the convergent sequences inside the window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    /// `|P_{k,t+1} - P_{k,t}|_F`, maximized over nodes.
    pub node_covariance: f64,
    /// `|θ_{k,t+1} - θ_{k,t}|`, maximized over nodes.
    pub node_theta: f64,
    /// `|Ω_t^{-1} - Ω_{t+1}^{-1}|_F`.
    pub omega: f64,
    /// `|MSD̄_{t+1} - MSD̄_t|`, maximized over variants.
    pub msd: f64,
}

#[derive(Clone, Debug)]
pub struct Analysis<T: Scalar> {
    /// Horizon `T` the analysis was run with.
    pub horizon: usize,
    pub lf: LeastFavorableModel<T>,
    pub window: RangeInclusive<usize>,
    pub variants: Vec<VariantResult<T>>,
    /// `θ_t` of the centralized robust filter, `t = 0..=T`.
    pub theta_central: Vec<T>,
    /// `θ_{k,t}` of the distributed robust filters, indexed `[t][k]`.
    pub theta_nodes: Vec<Vec<T>>,
    pub convergence: ConvergenceReport,
}

impl<T: Scalar> Analysis<T> {
    pub fn result(&self, variant: Variant) -> Option<&VariantResult<T>> {
        self.variants.iter().find(|r| r.variant == variant)
    }
}

fn max_change_in<T: Scalar>(series: &[T], window: &RangeInclusive<usize>) -> T {
    let end = (*window.end()).min(series.len().saturating_sub(1));
    (*window.start()..end).fold(T::zero(), |acc, t| acc.max((series[t + 1] - series[t]).abs()))
}

/// Thresholds on the largest successive change inside the steady-state window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTolerances {
    pub node_covariance: f64,
    pub node_theta: f64,
    pub omega: f64,
    pub msd: f64,
}

impl Default for ConvergenceTolerances {
    fn default() -> Self {
        ConvergenceTolerances {
            node_covariance: 1e-9,
            node_theta: 1e-9,
            omega: OMEGA_SETTLE_TOLERANCE,
            msd: 1e-6,
        }
    }
}

impl ConvergenceReport {
    fn sequences_within(&self, tol: &ConvergenceTolerances) -> bool {
        self.node_covariance < tol.node_covariance && self.node_theta < tol.node_theta && self.omega < tol.omega
    }

    pub fn within(&self, tol: &ConvergenceTolerances) -> bool {
        self.sequences_within(tol) && self.msd < tol.msd
    }
}

/// Forward and backward passes, before any Lyapunov sweep.
struct Prepared<T: Scalar> {
    lf: LeastFavorableModel<T>,
    window: RangeInclusive<usize>,
    schedules: Vec<CovarianceSchedule<T>>,
    convergence: ConvergenceReport,
}

fn prepare<T: Scalar>(
    model: &GlobalModel<T>,
    network: &SensorNetwork,
    v0: &DMatrix<T>,
    config: &AnalysisConfig<T>,
) -> Result<Prepared<T>> {
    let window = config.steady_window()?;
    let lf = LeastFavorableModel::synthesize(model, config.tolerance, v0, config.horizon, &config.bisection)?;
    let robust = Variant::new(Family::Robust, Topology::Local).config(model, network, config.tolerance, config.epsilon)?;
    let schedules = node_schedules(&robust.locals, v0, config.tolerance, config.horizon + 1, &config.bisection)?;

    let mut convergence = ConvergenceReport {
        node_covariance: 0.0,
        node_theta: 0.0,
        omega: 0.0,
        msd: 0.0,
    };
    let omega = lf.backward.omega_changes();
    for t in window.clone() {
        if t < config.horizon {
            convergence.omega = convergence.omega.max(to_f64(omega[t]));
        }
        for s in &schedules {
            let dp = crate::linalg::frobenius_distance(&s.p[t + 1], &s.p[t]);
            convergence.node_covariance = convergence.node_covariance.max(to_f64(dp));
            convergence.node_theta = convergence.node_theta.max(to_f64((s.theta[t + 1] - s.theta[t]).abs()));
        }
    }
    Ok(Prepared {
        lf,
        window,
        schedules,
        convergence,
    })
}

fn evaluate<T: Scalar>(
    prepared: Prepared<T>,
    model: &GlobalModel<T>,
    network: &SensorNetwork,
    v0: &DMatrix<T>,
    config: &AnalysisConfig<T>,
) -> Result<Analysis<T>> {
    let Prepared {
        lf,
        window,
        schedules,
        mut convergence,
    } = prepared;
    let sweep = SweepOptions {
        track_min_eigenvalue: config.track_min_eigenvalue,
    };
    let variants = config
        .variants
        .par_iter()
        .map(|&variant| {
            let cfg = variant.config(model, network, config.tolerance, config.epsilon)?;
            let trace = evaluate_bank(model, &lf, &cfg.bank(), v0, &config.bisection, sweep)
                .map_err(|e| e.in_variant(&cfg.label))?;
            let steady_average = trace.steady_average(&window)?;
            let steady_nodes = trace.steady_nodes(&window)?;
            let max_window_change = max_change_in(&trace.msd_avg, &window);
            Ok(VariantResult {
                variant,
                trace,
                steady_average,
                steady_nodes,
                max_window_change,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    convergence.msd = variants
        .iter()
        .fold(0.0, |acc: f64, v| acc.max(to_f64(v.max_window_change)));
    let theta_nodes: Vec<Vec<T>> = (0..=config.horizon)
        .map(|t| schedules.iter().map(|s| s.theta[t]).collect())
        .collect();
    Ok(Analysis {
        horizon: config.horizon,
        theta_central: lf.schedule.thetas(),
        lf,
        window,
        variants,
        theta_nodes,
        convergence,
    })
}

/// Three-pass least favorable analysis of the configured variants at the configured horizon.
pub fn run_analysis<T: Scalar>(
    model: &GlobalModel<T>,
    network: &SensorNetwork,
    v0: &DMatrix<T>,
    config: &AnalysisConfig<T>,
) -> Result<Analysis<T>> {
    let prepared = prepare(model, network, v0, config)?;
    evaluate(prepared, model, network, v0, config)
}

/// Like [`run_analysis`], but doubles the horizon until every sequence has
/// settled inside the steady-state window or `max_horizon` would be exceeded.
///
/// The cheap forward and backward passes are checked first; the Lyapunov
/// sweeps only run once those have settled. The returned analysis records the
/// horizon actually used; check [`ConvergenceReport::within`] for the outcome.
pub fn run_analysis_converged<T: Scalar>(
    model: &GlobalModel<T>,
    network: &SensorNetwork,
    v0: &DMatrix<T>,
    config: &AnalysisConfig<T>,
    tolerances: &ConvergenceTolerances,
    max_horizon: usize,
) -> Result<Analysis<T>> {
    let mut cfg = config.clone();
    loop {
        let can_grow = cfg.horizon * 2 <= max_horizon;
        let prepared = prepare(model, network, v0, &cfg)?;
        if prepared.convergence.sequences_within(tolerances) || !can_grow {
            let analysis = evaluate(prepared, model, network, v0, &cfg)?;
            if analysis.convergence.within(tolerances) || !can_grow {
                return Ok(analysis);
            }
        }
        cfg.horizon *= 2;
    }
}

/// Monte Carlo estimate of every configured variant on trajectories of the
/// least favorable model synthesized in `analysis`.
#[allow(clippy::too_many_arguments)]
pub fn run_monte_carlo<T: Scalar>(
    model: &GlobalModel<T>,
    network: &SensorNetwork,
    analysis: &Analysis<T>,
    config: &AnalysisConfig<T>,
    x0_hat: &DVector<T>,
    v0: &DMatrix<T>,
    input: &DeterministicInput<T>,
    spec: MonteCarloSpec,
) -> Result<Vec<ErrorTrace<T>>> {
    let params = analysis.lf.sequence(model)?;
    let filters = config
        .variants
        .iter()
        .map(|v| {
            v.config(model, network, config.tolerance, config.epsilon)?
                .compile(v0, config.horizon, &config.bisection)
        })
        .collect::<Result<Vec<_>>>()?;
    monte_carlo(
        model,
        TrajectorySource::LeastFavorable(&params),
        &filters,
        x0_hat,
        v0,
        config.horizon,
        input,
        spec,
    )
}

/// Steady-state checks on an analysis.
pub mod checks {
    use super::*;

    /// `central ≤ diffusion ≤ consensus ≤ local` within `family`, up to a relative slack.
    pub fn topology_ordering<T: Scalar>(analysis: &Analysis<T>, family: Family, slack: f64) -> Result<bool> {
        let order = [Topology::Central, Topology::Diffusion, Topology::Consensus, Topology::Local];
        let values = order
            .iter()
            .map(|&t| steady(analysis, Variant::new(family, t)))
            .collect::<Result<Vec<f64>>>()?;
        Ok(values.windows(2).all(|w| w[0] <= w[1] * (1.0 + slack)))
    }

    pub fn steady<T: Scalar>(analysis: &Analysis<T>, variant: Variant) -> Result<f64> {
        analysis
            .result(variant)
            .map(|r| to_f64(r.steady_average))
            .ok_or_else(|| Error::InvalidParameter(format!("variant {variant} was not analysed")))
    }

    /// Fraction of nodes at which `better` has lower steady-state MSD than `worse`.
    pub fn node_win_fraction<T: Scalar>(analysis: &Analysis<T>, better: Variant, worse: Variant) -> Result<f64> {
        let missing = |v: Variant| Error::InvalidParameter(format!("variant {v} was not analysed"));
        let a = analysis.result(better).ok_or_else(|| missing(better))?;
        let b = analysis.result(worse).ok_or_else(|| missing(worse))?;
        let wins = a
            .steady_nodes
            .iter()
            .zip(&b.steady_nodes)
            .filter(|(x, y)| x < y)
            .count();
        Ok(wins as f64 / a.steady_nodes.len().max(1) as f64)
    }

    /// `max_k θ_{k,t} < θ_t` for every `t ≥ from`.
    pub fn theta_ordering<T: Scalar>(analysis: &Analysis<T>, from: usize) -> bool {
        analysis
            .theta_nodes
            .iter()
            .zip(&analysis.theta_central)
            .skip(from)
            .all(|(nodes, &central)| nodes.iter().all(|&th| th < central))
    }

    /// Mean of `θ` over the window, central first then per node.
    pub fn steady_thetas<T: Scalar>(analysis: &Analysis<T>) -> (T, Vec<T>) {
        let w = &analysis.window;
        let count: T = lit((w.end() - w.start() + 1) as f64);
        let central = w.clone().fold(T::zero(), |a, t| a + analysis.theta_central[t]) / count;
        let n_nodes = analysis.theta_nodes.first().map_or(0, |r| r.len());
        let nodes = (0..n_nodes)
            .map(|k| w.clone().fold(T::zero(), |a, t| a + analysis.theta_nodes[t][k]) / count)
            .collect();
        (central, nodes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_global_model, NodeModel};

    fn line_model() -> (GlobalModel<f64>, SensorNetwork) {
        let a = DMatrix::from_row_slice(2, 2, &[0.95, 0.1, 0.0, 0.9]);
        let b = DMatrix::from_row_slice(2, 2, &[0.3, 0.0, 0.0, 0.3]);
        let nodes = vec![
            NodeModel::new(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]), DMatrix::from_element(1, 1, 0.8)).unwrap(),
            NodeModel::new(DMatrix::from_row_slice(1, 2, &[0.0, 1.0]), DMatrix::from_element(1, 1, 1.0)).unwrap(),
            NodeModel::new(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), DMatrix::from_element(1, 1, 1.2)).unwrap(),
        ];
        (build_global_model(a, b, nodes).unwrap(), SensorNetwork::line(3).unwrap())
    }

    #[test]
    fn labels_and_counterparts() {
        let labels: Vec<String> = Variant::ALL.iter().map(|v| v.label()).collect();
        assert_eq!(labels[1], "rkf_diff");
        assert_eq!(labels[7], "kf_local");
        for v in Variant::ALL {
            assert_eq!(v.counterpart().counterpart(), v);
            assert_ne!(v.counterpart().family, v.family);
        }
    }

    #[test]
    fn zero_tolerance_variants_coincide() {
        let (model, net) = line_model();
        let cfg = AnalysisConfig::new(Tolerance::zero(), 0.2, 40);
        let an = run_analysis(&model, &net, &DMatrix::identity(2, 2), &cfg).unwrap();
        for v in Variant::ALL.iter().filter(|v| v.family == Family::Robust) {
            let a = &an.result(*v).unwrap().trace.msd_avg;
            let b = &an.result(v.counterpart()).unwrap().trace.msd_avg;
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0));
            }
        }
    }

    #[test]
    fn central_node_errors_equal_centralized_error() {
        let (model, net) = line_model();
        let cfg = AnalysisConfig::new(Tolerance::new(0.05).unwrap(), 0.2, 30);
        let an = run_analysis(&model, &net, &DMatrix::identity(2, 2), &cfg).unwrap();
        let central = an.result(Variant::new(Family::Robust, Topology::Central)).unwrap();
        for (row, e) in central.trace.msd.iter().zip(&central.trace.central_msd) {
            for m in row {
                assert!((m - e).abs() <= 1e-9 * e.max(1.0));
            }
        }
    }
}
