mod common;

use common::{relative, small_line_model, KalmanOracle};
use drkf::distributed::{dkf_step, NetworkFilterState};
use drkf::experiment::{Family, Topology, Variant};
use drkf::least_favorable::{LeastFavorableModel, LfParameters};
use drkf::linalg::min_sym_eigenvalue;
use drkf::model::{build_global_model, build_local_models, DiffusionWeights, GlobalModel, NodeModel, SensorNetwork, WeightRule};
use drkf::performance::{assemble_error_dynamics, evaluate_bank, kl_comparison, SweepOptions};
use drkf::robust::{robust_predict_step, BisectionOptions, RobustFilterState, Tolerance};
use drkf::simulate::{
    empirical_msd, monte_carlo, simulate_lf, simulate_nominal, trajectory_rng, DeterministicInput, FilterConfig,
    MonteCarloSpec, TrajectorySource,
};
use nalgebra::{DMatrix, DVector};

fn opts() -> BisectionOptions<f64> {
    BisectionOptions::default()
}

fn single_sensor_model() -> drkf::Model {
    let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 0.95]);
    let b = DMatrix::from_row_slice(2, 2, &[0.2, 0.0, 0.0, 0.3]);
    let node = NodeModel::new(DMatrix::from_row_slice(1, 2, &[1.0, 0.5]), DMatrix::from_element(1, 1, 0.7)).unwrap();
    build_global_model(a, b, vec![node]).unwrap()
}

/// Sample covariance of the vectors.
fn covariance(samples: &[DVector<f64>]) -> DMatrix<f64> {
    let n = samples[0].len();
    let m = samples.len() as f64;
    let mean = samples.iter().fold(DVector::zeros(n), |acc, s| acc + s) / m;
    samples
        .iter()
        .fold(DMatrix::zeros(n, n), |acc, s| acc + (s - &mean) * (s - &mean).transpose())
        / (m - 1.0)
}

#[test]
fn single_node_standard_pipeline_matches_riccati_trace() {
    let model = single_sensor_model();
    let net = SensorNetwork::full(1).unwrap();
    let v0 = DMatrix::identity(2, 2);
    let lf = LeastFavorableModel::synthesize(&model, Tolerance::zero(), &v0, 40, &opts()).unwrap();
    let cfg = FilterConfig::new("kf", net, &model, WeightRule::Identity, Tolerance::zero()).unwrap();
    let trace = evaluate_bank(&model, &lf, &cfg.bank(), &v0, &opts(), SweepOptions::default()).unwrap();
    let mut oracle = KalmanOracle {
        x: DVector::zeros(2),
        p: v0,
    };
    assert!((trace.msd_avg[0] - 2.0).abs() < 1e-14);
    for t in 1..trace.len() {
        oracle.step(model.a(), model.bbt(), model.c(), model.r(), &DVector::zeros(1));
        let expect = oracle.p.trace();
        assert!((trace.msd_avg[t] - expect).abs() <= 1e-10 * expect, "t = {t}");
    }
}

#[test]
fn single_node_transition_is_closed_loop() {
    let model = single_sensor_model();
    let net = SensorNetwork::full(1).unwrap();
    let v0 = DMatrix::identity(2, 2);
    let lf = LeastFavorableModel::synthesize(&model, Tolerance::new(0.05).unwrap(), &v0, 10, &opts()).unwrap();
    let locals = build_local_models(&net, &model).unwrap();
    let w = DiffusionWeights::from_matrix(DMatrix::identity(1, 1));
    for t in [0, 4, 10] {
        let step = &lf.schedule.steps[t];
        let params = lf.at(&model, t).unwrap();
        let d = assemble_error_dynamics(&net, &locals, &w, &model, &[&step.v], &params).unwrap();
        let closed = model.a() - &step.gain * model.c();
        assert!(relative(&d.a, &closed) < 1e-12);
        assert!(d.f.view((2, 0), (2, 2)).iter().all(|&v| v == 0.0));
    }
}

#[test]
fn zero_tolerance_decouples_from_centralized_error() {
    let model = small_line_model();
    let net = SensorNetwork::line(3).unwrap();
    let v0 = DMatrix::identity(2, 2);
    let lf = LeastFavorableModel::synthesize(&model, Tolerance::zero(), &v0, 8, &opts()).unwrap();
    let locals = build_local_models(&net, &model).unwrap();
    let w = drkf::model::build_diffusion_weights(&net, WeightRule::Degree).unwrap();
    let v = vec![v0.clone(); 3];
    let refs: Vec<&DMatrix<f64>> = v.iter().collect();
    let d = assemble_error_dynamics(&net, &locals, &w, &model, &refs, &lf.at(&model, 3).unwrap()).unwrap();
    assert_eq!(d.c, DMatrix::zeros(6, 2));
    assert!(d.f.view((6, 0), (2, 6)).iter().all(|&x| x == 0.0));
}

#[test]
fn joint_covariance_stays_psd() {
    let model = small_line_model();
    let net = SensorNetwork::line(3).unwrap();
    let v0 = DMatrix::identity(2, 2);
    let lf = LeastFavorableModel::synthesize(&model, Tolerance::new(0.1).unwrap(), &v0, 60, &opts()).unwrap();
    for rule in [WeightRule::Degree, WeightRule::Consensus(0.3), WeightRule::Identity] {
        let cfg = FilterConfig::new("rkf", net.clone(), &model, rule, Tolerance::new(0.1).unwrap()).unwrap();
        let sweep = SweepOptions {
            track_min_eigenvalue: true,
        };
        let trace = evaluate_bank(&model, &lf, &cfg.bank(), &v0, &opts(), sweep).unwrap();
        assert!(trace.min_eig_ratio.iter().all(|&r| r >= -1e-10), "{rule:?}");
    }
}

#[test]
fn fully_connected_nodes_reproduce_centralized_predictor() {
    let model = small_line_model();
    let cfg = FilterConfig::centralized("rkf", &model, Tolerance::new(0.03).unwrap()).unwrap();
    let c = Tolerance::new(0.03).unwrap();
    let x0 = DVector::from_vec(vec![0.4, -0.1]);
    let v0 = DMatrix::identity(2, 2);
    let traj = simulate_nominal(&model, &x0, &v0, 25, &DeterministicInput::None, &mut trajectory_rng(3, 0)).unwrap();
    let mut central = RobustFilterState::new(x0.clone(), v0.clone());
    let mut net = NetworkFilterState::uniform(3, &x0, &v0);
    for t in 0..=25 {
        let y = DVector::from_iterator(3, traj.y[t].iter().map(|v| v[0]));
        central = robust_predict_step(&model, &central, &y, c, None, &opts()).unwrap();
        net = dkf_step(&net, &cfg.locals, &cfg.weights, &traj.y[t], c, None, &opts()).unwrap();
        for node in &net.nodes {
            assert!((&node.x_hat - &central.x_hat).norm() <= 1e-12 * central.x_hat.norm().max(1.0));
            assert!(relative(&node.v, &central.v) <= 1e-12);
        }
    }
}

#[test]
fn standard_central_filter_matches_riccati_under_nominal_model() {
    let model = small_line_model();
    let v0 = DMatrix::identity(2, 2);
    let x0 = DVector::zeros(2);
    let horizon = 30;
    let cfg = FilterConfig::centralized("kf", &model, Tolerance::zero()).unwrap();
    let filters = vec![cfg.compile(&v0, horizon, &opts()).unwrap()];
    let traces = monte_carlo(
        &model,
        TrajectorySource::Nominal,
        &filters,
        &x0,
        &v0,
        horizon,
        &DeterministicInput::None,
        MonteCarloSpec::new(10_000, 77),
    )
    .unwrap();
    let mut oracle = KalmanOracle { x: x0, p: v0 };
    let mut traces_p = vec![oracle.p.trace()];
    for _ in 0..=horizon {
        oracle.step(model.a(), model.bbt(), model.c(), model.r(), &DVector::zeros(3));
        traces_p.push(oracle.p.trace());
    }
    let window = 15..=27;
    let analytic = window.clone().map(|t| traces_p[t]).sum::<f64>() / 13.0;
    let empirical = empirical_msd(&traces[0], &window).unwrap().average;
    assert!((empirical - analytic).abs() / analytic < 0.03, "{empirical} vs {analytic}");
}

fn lf_error_samples(model: &GlobalModel<f64>, params: &[LfParameters<f64>], t: usize, runs: u64) -> Vec<DVector<f64>> {
    let v0 = DMatrix::identity(2, 2);
    let x0 = DVector::zeros(2);
    (0..runs)
        .map(|i| {
            let traj = simulate_lf(model, params, &x0, &v0, &DeterministicInput::None, &mut trajectory_rng(5, i)).unwrap();
            traj.xi.unwrap()[t].rows(2, 2).into_owned()
        })
        .collect()
}

#[test]
fn centralized_error_under_least_favorable_model_has_covariance_v() {
    let model = small_line_model();
    let v0 = DMatrix::identity(2, 2);
    let lf = LeastFavorableModel::synthesize(&model, Tolerance::new(0.1).unwrap(), &v0, 200, &opts()).unwrap();
    let params = lf.sequence(&model).unwrap();
    let t = 100;
    let samples = lf_error_samples(&model, &params, t, 10_000);
    let v = &lf.schedule.steps[t].v;
    let rel = relative(&covariance(&samples), v);
    assert!(rel < 0.05, "empirical cov(e) is {rel:.3} away from V in relative Frobenius norm");
}

#[test]
fn least_favorable_error_covariance_follows_exact_propagation() {
    let model = small_line_model();
    let v0 = DMatrix::identity(2, 2);
    let lf = LeastFavorableModel::synthesize(&model, Tolerance::new(0.1).unwrap(), &v0, 60, &opts()).unwrap();
    let params = lf.sequence(&model).unwrap();
    let t = 30;
    let mut q = DMatrix::from_element(2, 2, 1.0).kronecker(&v0);
    for p in &params[..t] {
        q = &p.a_check * &q * p.a_check.transpose() + &p.b_check * p.b_check.transpose();
    }
    let exact = q.view((2, 2), (2, 2)).into_owned();
    let samples = lf_error_samples(&model, &params, t, 10_000);
    assert!(relative(&covariance(&samples), &exact) < 0.05);
    // The worst case compounds over steps, so the realized error dominates the one-step bound V.
    assert!(min_sym_eigenvalue(&(&exact - &lf.schedule.steps[t].v)) > 0.0);
}

#[test]
fn zero_tolerance_least_favorable_model_matches_nominal_statistics() {
    let model = small_line_model();
    let v0 = DMatrix::identity(2, 2);
    let x0 = DVector::from_vec(vec![1.0, -1.0]);
    let lf = LeastFavorableModel::synthesize(&model, Tolerance::zero(), &v0, 20, &opts()).unwrap();
    let params = lf.sequence(&model).unwrap();
    let none = DeterministicInput::None;
    let mut nominal = vec![];
    let mut least = vec![];
    for i in 0..10_000 {
        nominal.push(simulate_nominal(&model, &x0, &v0, 20, &none, &mut trajectory_rng(8, i)).unwrap().x[10].clone());
        least.push(simulate_lf(&model, &params, &x0, &v0, &none, &mut trajectory_rng(9, i)).unwrap().x[10].clone());
    }
    let cn = covariance(&nominal);
    assert!(relative(&covariance(&least), &cn) < 0.05);
    let mean = |s: &[DVector<f64>]| s.iter().fold(DVector::zeros(2), |a, v| a + v) / s.len() as f64;
    let se = (cn.diagonal().max() / 10_000.0).sqrt();
    assert!((mean(&nominal) - mean(&least)).amax() < 6.0 * se);
}

#[test]
fn zero_tolerance_robust_variants_replay_standard_ones() {
    let model = small_line_model();
    let net = SensorNetwork::line(3).unwrap();
    let v0 = DMatrix::identity(2, 2);
    let x0 = DVector::zeros(2);
    let filters: Vec<_> = [Topology::Diffusion, Topology::Consensus, Topology::Local]
        .iter()
        .flat_map(|&t| [Variant::new(Family::Robust, t), Variant::new(Family::Standard, t)])
        .map(|v| v.config(&model, &net, Tolerance::zero(), 0.3).unwrap().compile(&v0, 15, &opts()).unwrap())
        .collect();
    let traces = monte_carlo(
        &model,
        TrajectorySource::Nominal,
        &filters,
        &x0,
        &v0,
        15,
        &DeterministicInput::None,
        MonteCarloSpec::new(64, 1),
    )
    .unwrap();
    for pair in traces.chunks(2) {
        for (a, b) in pair[0].msd.iter().flatten().zip(pair[1].msd.iter().flatten()) {
            assert!((a - b).abs() <= 1e-12 * b.max(1.0));
        }
    }
}

fn two_scalar_sensors() -> drkf::Model {
    let one = DMatrix::from_element(1, 1, 1.0);
    let nodes = vec![
        NodeModel::new(one.clone(), one.clone()).unwrap(),
        NodeModel::new(one.clone(), DMatrix::from_element(1, 1, 1.5)).unwrap(),
    ];
    build_global_model(DMatrix::from_element(1, 1, 0.9), one, nodes).unwrap()
}

#[test]
fn kl_divergences_coincide_without_uncertainty() {
    let model = two_scalar_sensors();
    let net = SensorNetwork::isolated(2).unwrap();
    let one = DMatrix::from_element(1, 1, 1.0);
    let x = DVector::from_element(1, 0.8);
    let d = kl_comparison(&net, &model, 0, &x, &one, Tolerance::zero(), &one, &opts()).unwrap();
    assert!((d.lf_vs_robust_local - d.lf_vs_nominal_local).abs() < 1e-14);
    assert!(d.lf_vs_nominal_local > 0.0);
}

#[test]
fn kl_local_equals_global_for_full_neighborhood() {
    let model = two_scalar_sensors();
    let net = SensorNetwork::full(2).unwrap();
    let one = DMatrix::from_element(1, 1, 1.0);
    let empty = DMatrix::zeros(0, 0);
    let x = DVector::from_element(1, 0.8);
    let d0 = kl_comparison(&net, &model, 1, &x, &one, Tolerance::zero(), &empty, &opts()).unwrap();
    assert!(d0.lf_vs_robust_local.abs() < 1e-12 && d0.lf_vs_nominal_local.abs() < 1e-12);
    let d = kl_comparison(&net, &model, 1, &x, &one, Tolerance::new(0.1).unwrap(), &empty, &opts()).unwrap();
    assert!(d.lf_vs_robust_local.abs() < 1e-12);
    assert!(d.lf_vs_nominal_local > 0.0);
}

#[test]
fn single_precision_tracks_double_precision() {
    let model = single_sensor_model();
    let to32 = |m: &DMatrix<f64>| m.map(|v| v as f32);
    let node = NodeModel::new(to32(model.nodes()[0].c()), to32(model.nodes()[0].d())).unwrap();
    let model32 = build_global_model(to32(model.a()), to32(model.b()), vec![node]).unwrap();
    let mut s64 = RobustFilterState::new(DVector::zeros(2), DMatrix::identity(2, 2));
    let mut s32 = RobustFilterState::new(DVector::<f32>::zeros(2), DMatrix::identity(2, 2));
    for t in 0..30 {
        let y = DVector::from_element(1, (t as f64 * 0.4).sin());
        s64 = robust_predict_step(&model, &s64, &y, Tolerance::new(0.05).unwrap(), None, &opts()).unwrap();
        s32 = robust_predict_step(
            &model32,
            &s32,
            &y.map(|v| v as f32),
            Tolerance::new(0.05f32).unwrap(),
            None,
            &BisectionOptions::default(),
        )
        .unwrap();
    }
    let v32 = s32.v.map(|v| v as f64);
    assert!(relative(&v32, &s64.v) < 1e-3);
    assert!((s32.theta as f64 - s64.theta).abs() < 1e-3 * s64.theta);
}
