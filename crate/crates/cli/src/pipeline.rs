//! Scenario construction, validation, analysis and output writing.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, ensure, Context};
use drkf::experiment::{run_analysis, run_analysis_converged, run_monte_carlo, ConvergenceReport, Topology};
use drkf::model::{
    build_diffusion_weights, build_global_model_from_matrices, build_local_models, check_observability,
    check_reachability, validate_weights, LocalModel, SensorNetwork, WeightRule,
};
use drkf::performance::steady_window;
use drkf::scenario::{build_projectile_scenario, generate_network, geometric_network, NetworkRule, SensorType};
use drkf::simulate::{empirical_msd, DeterministicInput, MonteCarloSpec};
use drkf::{Analysis, AnalysisConfig, Model, Tolerance};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::config::{CustomModel, ModelSource, ScenarioConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Config,
    Scenario,
    Validation,
    Analysis,
    MonteCarlo,
    Output,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Config => "config",
            Stage::Scenario => "scenario",
            Stage::Validation => "validation",
            Stage::Analysis => "analysis",
            Stage::MonteCarlo => "monte-carlo",
            Stage::Output => "output",
        })
    }
}

/// A failure tagged with the pipeline stage it happened in.
#[derive(Debug, thiserror::Error)]
#[error("[{stage}] {source:#}")]
pub struct StageError {
    pub stage: Stage,
    pub source: anyhow::Error,
}

pub type Result<T> = std::result::Result<T, StageError>;

pub trait InStage<T> {
    fn stage(self, stage: Stage) -> Result<T>;
}

impl<T, E: Into<anyhow::Error>> InStage<T> for std::result::Result<T, E> {
    fn stage(self, stage: Stage) -> Result<T> {
        self.map_err(|e| StageError {
            stage,
            source: e.into(),
        })
    }
}

/// Sensor placement details that are generated rather than configured.
#[derive(Clone, Debug, Default, Serialize)]
pub struct Layout {
    pub edges: Vec<(usize, usize)>,
    pub sensor_types: Option<Vec<SensorType>>,
    pub permutations: Option<Vec<[usize; 3]>>,
    pub positions: Option<Vec<[f64; 2]>>,
    pub radius: Option<f64>,
    pub attempt: Option<usize>,
}

pub struct Scenario {
    pub model: Model,
    pub network: SensorNetwork,
    pub locals: Vec<LocalModel<f64>>,
    pub input: DeterministicInput<f64>,
    pub x0_hat: DVector<f64>,
    pub v0: DMatrix<f64>,
    pub layout: Layout,
}

fn matrix(name: &str, rows: &[Vec<f64>]) -> anyhow::Result<DMatrix<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    ensure!(!rows.is_empty() && cols > 0, "{name} is empty");
    ensure!(rows.iter().all(|r| r.len() == cols), "{name} has rows of different lengths");
    ensure!(rows.iter().flatten().all(|x| x.is_finite()), "{name} has non-finite entries");
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

fn edges_of(network: &SensorNetwork) -> Vec<(usize, usize)> {
    (0..network.len())
        .flat_map(|k| network.neighborhood(k).iter().filter(move |&&l| l > k).map(move |&l| (k, l)))
        .collect()
}

fn plain_network(n: usize, seed: u64, rule: &NetworkRule) -> anyhow::Result<(SensorNetwork, Layout)> {
    let mut layout = Layout::default();
    let network = match rule {
        NetworkRule::Geometric { .. } => {
            let (net, positions, radius) = geometric_network(n, seed)?;
            layout.positions = Some(positions);
            layout.radius = Some(radius);
            net
        }
        NetworkRule::Line => SensorNetwork::line(n)?,
        NetworkRule::Full => SensorNetwork::full(n)?,
        NetworkRule::Explicit { edges } => SensorNetwork::from_edges(n, edges)?,
    };
    layout.edges = edges_of(&network);
    Ok((network, layout))
}

fn custom_scenario(cfg: &ScenarioConfig, custom: &CustomModel) -> anyhow::Result<Scenario> {
    let a = matrix("a", &custom.a)?;
    let b = matrix("b", &custom.b)?;
    let n = a.nrows();
    let sensors = custom
        .sensors
        .iter()
        .enumerate()
        .map(|(k, s)| Ok((matrix(&format!("sensors[{k}].c"), &s.c)?, matrix(&format!("sensors[{k}].d"), &s.d)?)))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let model = build_global_model_from_matrices(a, b, sensors)?;
    let x0_hat = match &custom.x0_hat {
        Some(x) => {
            ensure!(x.len() == n, "x0_hat has length {} but the state has dimension {n}", x.len());
            DVector::from_column_slice(x)
        }
        None => DVector::zeros(n),
    };
    let v0 = match &custom.v0 {
        Some(rows) => {
            let v = matrix("v0", rows)?;
            ensure!(v.shape() == (n, n), "v0 must be {n}x{n}");
            v
        }
        None => DMatrix::identity(n, n),
    };
    let input = match &custom.input {
        Some(u) => {
            ensure!(u.len() == n, "input has length {} but the state has dimension {n}", u.len());
            DeterministicInput::Constant(DVector::from_column_slice(u))
        }
        None => DeterministicInput::None,
    };
    let (network, layout) = plain_network(cfg.node_count(), cfg.network_seed(), &cfg.network.rule)?;
    let locals = build_local_models(&network, &model)?;
    Ok(Scenario {
        model,
        network,
        locals,
        input,
        x0_hat,
        v0,
        layout,
    })
}

fn projectile_scenario(cfg: &ScenarioConfig) -> anyhow::Result<Scenario> {
    let generated = generate_network(cfg.node_count(), cfg.network_seed(), &cfg.network.rule)?;
    let built = build_projectile_scenario::<f64>(&generated.network, &generated.sensor_types, &generated.permutations)?;
    let layout = Layout {
        edges: edges_of(&generated.network),
        sensor_types: Some(generated.sensor_types),
        permutations: Some(generated.permutations),
        positions: generated.positions,
        radius: generated.radius,
        attempt: Some(generated.attempt),
    };
    Ok(Scenario {
        model: built.model,
        network: built.network,
        locals: built.locals,
        input: built.input,
        x0_hat: built.x0_hat,
        v0: built.v0,
        layout,
    })
}

pub fn build_scenario(cfg: &ScenarioConfig) -> Result<Scenario> {
    match &cfg.model {
        ModelSource::Projectile => projectile_scenario(cfg),
        ModelSource::Custom(custom) => custom_scenario(cfg, custom),
    }
    .stage(Stage::Scenario)
}

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

fn weight_rules(cfg: &ScenarioConfig) -> anyhow::Result<Vec<WeightRule>> {
    let mut rules = vec![];
    for v in cfg.parsed_variants()? {
        let rule = match v.topology {
            Topology::Diffusion => WeightRule::Degree,
            Topology::Consensus => WeightRule::Consensus(cfg.epsilon),
            Topology::Local => WeightRule::Identity,
            Topology::Central => continue,
        };
        if !rules.contains(&rule) {
            rules.push(rule);
        }
    }
    Ok(rules)
}

/// Dry-run checks on dimensions, observability and weights.
pub fn validate(cfg: &ScenarioConfig, scenario: &Scenario) -> Vec<Check> {
    let model = &scenario.model;
    let mut checks = vec![Check::new(
        "dimensions",
        true,
        format!(
            "n = {}, {} sensors, {} outputs in total",
            model.state_dim(),
            model.n_nodes(),
            model.output_dim()
        ),
    )];
    checks.push(Check::new("reachability of (A, B)", check_reachability(model.a(), model.b()), ""));
    checks.push(Check::new("observability of (A, C)", check_observability(model.a(), model.c()), ""));
    let blind: Vec<usize> = scenario
        .locals
        .iter()
        .filter(|l| !check_observability(l.a(), l.c_loc()))
        .map(|l| l.node())
        .collect();
    checks.push(Check::new(
        "local observability",
        blind.is_empty(),
        if blind.is_empty() {
            format!("all {} neighborhoods", scenario.locals.len())
        } else {
            format!("unobservable at nodes {blind:?}")
        },
    ));
    checks.push(Check::new(
        "network connected",
        scenario.network.is_connected(),
        format!("{} edges", scenario.layout.edges.len()),
    ));
    match weight_rules(cfg) {
        Ok(rules) => {
            for rule in rules {
                let name = format!("weights {rule:?}");
                match build_diffusion_weights::<f64>(&scenario.network, rule) {
                    Ok(w) => {
                        let diag = validate_weights(&w, &scenario.network);
                        checks.push(Check::new(
                            name,
                            diag.passed(),
                            format!("column sum deviation {:e}", diag.max_column_deviation),
                        ));
                    }
                    Err(e) => checks.push(Check::new(name, false, e.to_string())),
                }
            }
        }
        Err(e) => checks.push(Check::new("variants", false, format!("{e:#}"))),
    }
    let (alpha, beta) = cfg.window;
    match steady_window(cfg.horizon.initial, alpha, beta) {
        Ok(w) => checks.push(Check::new(
            "steady-state window",
            true,
            format!("t = {}..={} of T = {}", w.start(), w.end(), cfg.horizon.initial),
        )),
        Err(e) => checks.push(Check::new("steady-state window", false, e.to_string())),
    }
    checks
}

/// Formats with 17 significant digits, enough to round-trip an `f64`.
pub fn fmt_number(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_csv(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<String>>) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct SteadyValue {
    pub variant: String,
    pub msd: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct HorizonReport {
    pub requested: usize,
    pub resolved: usize,
    pub window: (usize, usize),
    pub converged: bool,
    pub tolerances: drkf::experiment::ConvergenceTolerances,
    pub changes: ConvergenceReport,
}

#[derive(Clone, Debug, Serialize)]
pub struct MonteCarloReport {
    pub runs: usize,
    pub chunk: usize,
    pub steady: Vec<SteadyValue>,
}

/// Everything needed to reproduce a run.
#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub config: ScenarioConfig,
    pub network: Layout,
    pub horizon: HorizonReport,
    pub steady: Vec<SteadyValue>,
    pub monte_carlo: Option<MonteCarloReport>,
    pub files: Vec<String>,
}

pub struct RunOutput {
    pub dir: PathBuf,
    pub manifest: Manifest,
}

fn analysis_config(cfg: &ScenarioConfig, horizon: usize) -> anyhow::Result<AnalysisConfig<f64>> {
    let mut ac = AnalysisConfig::new(Tolerance::new(cfg.tolerance)?, cfg.epsilon, horizon);
    ac.window = cfg.window;
    ac.variants = cfg.parsed_variants()?;
    Ok(ac)
}

fn analyse(cfg: &ScenarioConfig, scenario: &Scenario) -> anyhow::Result<(Analysis<f64>, bool)> {
    let ac = analysis_config(cfg, cfg.horizon.initial)?;
    let tolerances = drkf::experiment::ConvergenceTolerances::default();
    let analysis = if cfg.horizon.auto_extend {
        run_analysis_converged(&scenario.model, &scenario.network, &scenario.v0, &ac, &tolerances, cfg.horizon.max)?
    } else {
        run_analysis(&scenario.model, &scenario.network, &scenario.v0, &ac)?
    };
    let converged = analysis.convergence.within(&tolerances);
    Ok((analysis, converged))
}

fn write_analysis(dir: &Path, analysis: &Analysis<f64>) -> anyhow::Result<Vec<String>> {
    let labels: Vec<String> = analysis.variants.iter().map(|v| v.variant.label()).collect();
    let len = analysis.variants[0].trace.msd_avg.len();
    let header: Vec<String> = std::iter::once("t".to_string()).chain(labels.iter().cloned()).collect();
    write_csv(
        &dir.join("msd_avg.csv"),
        &header,
        (0..len).map(|t| {
            std::iter::once(t.to_string())
                .chain(analysis.variants.iter().map(|v| fmt_number(v.trace.msd_avg[t])))
                .collect()
        }),
    )?;

    let n_nodes = analysis.variants[0].steady_nodes.len();
    let header: Vec<String> = std::iter::once("node".to_string()).chain(labels.iter().cloned()).collect();
    write_csv(
        &dir.join("msd_nodes.csv"),
        &header,
        (0..n_nodes).map(|k| {
            std::iter::once((k + 1).to_string())
                .chain(analysis.variants.iter().map(|v| fmt_number(v.steady_nodes[k])))
                .collect()
        }),
    )?;

    let header: Vec<String> = ["t".to_string(), "theta_central".to_string()]
        .into_iter()
        .chain((1..=n_nodes).map(|k| format!("theta_{k}")))
        .collect();
    write_csv(
        &dir.join("theta.csv"),
        &header,
        analysis.theta_central.iter().zip(&analysis.theta_nodes).enumerate().map(|(t, (central, nodes))| {
            [t.to_string(), fmt_number(*central)]
                .into_iter()
                .chain(nodes.iter().map(|&x| fmt_number(x)))
                .collect()
        }),
    )?;
    Ok(vec!["msd_avg.csv".into(), "msd_nodes.csv".into(), "theta.csv".into()])
}

fn monte_carlo(
    cfg: &ScenarioConfig,
    scenario: &Scenario,
    analysis: &Analysis<f64>,
    dir: &Path,
) -> anyhow::Result<(MonteCarloReport, Vec<String>)> {
    let ac = analysis_config(cfg, analysis.horizon)?;
    let mut spec = MonteCarloSpec::new(cfg.monte_carlo.runs, cfg.master_seed);
    spec.chunk = cfg.monte_carlo.chunk;
    let traces = run_monte_carlo(
        &scenario.model,
        &scenario.network,
        analysis,
        &ac,
        &scenario.x0_hat,
        &scenario.v0,
        &scenario.input,
        spec,
    )?;
    let labels: Vec<String> = traces.iter().map(|t| t.label.clone()).collect();
    let averages: Vec<Vec<f64>> = traces.iter().map(|t| t.msd_avg()).collect();
    let header: Vec<String> = std::iter::once("t".to_string()).chain(labels.iter().cloned()).collect();
    write_csv(
        &dir.join("mc_msd_avg.csv"),
        &header,
        (0..averages[0].len()).map(|t| {
            std::iter::once(t.to_string())
                .chain(averages.iter().map(|a| fmt_number(a[t])))
                .collect()
        }),
    )?;

    let steady = traces
        .iter()
        .map(|t| empirical_msd(t, &analysis.window))
        .collect::<drkf::Result<Vec<_>>>()?;
    let n_nodes = steady[0].nodes.len();
    let header: Vec<String> = std::iter::once("node".to_string()).chain(labels.iter().cloned()).collect();
    write_csv(
        &dir.join("mc_msd_nodes.csv"),
        &header,
        (0..n_nodes).map(|k| {
            std::iter::once((k + 1).to_string())
                .chain(steady.iter().map(|s| fmt_number(s.nodes[k])))
                .collect()
        }),
    )?;
    let report = MonteCarloReport {
        runs: spec.runs,
        chunk: spec.chunk,
        steady: labels
            .into_iter()
            .zip(&steady)
            .map(|(variant, s)| SteadyValue { variant, msd: s.average })
            .collect(),
    };
    Ok((report, vec!["mc_msd_avg.csv".into(), "mc_msd_nodes.csv".into()]))
}

/// Runs the whole experiment and writes its outputs. `log` receives one line
/// per completed stage.
pub fn run(cfg: &ScenarioConfig, mut log: impl FnMut(&str)) -> Result<RunOutput> {
    let scenario = build_scenario(cfg)?;
    let failed: Vec<String> = validate(cfg, &scenario)
        .into_iter()
        .filter(|c| !c.passed)
        .map(|c| format!("{} ({})", c.name, c.detail))
        .collect();
    if !failed.is_empty() {
        return Err(anyhow!("failed checks: {}", failed.join("; "))).stage(Stage::Validation);
    }
    log(&format!(
        "scenario: {} nodes, {} edges",
        scenario.network.len(),
        scenario.layout.edges.len()
    ));

    let (analysis, converged) = analyse(cfg, &scenario).stage(Stage::Analysis)?;
    log(&format!(
        "analysis: horizon {} ({})",
        analysis.horizon,
        if converged { "converged" } else { "not converged" }
    ));

    let dir = cfg.output_dir();
    fs::create_dir_all(&dir)
        .with_context(|| format!("creating {}", dir.display()))
        .stage(Stage::Output)?;
    let mut files = write_analysis(&dir, &analysis).stage(Stage::Output)?;

    let mc = if cfg.monte_carlo.runs > 0 {
        let (report, mc_files) = monte_carlo(cfg, &scenario, &analysis, &dir).stage(Stage::MonteCarlo)?;
        log(&format!("monte-carlo: {} runs", report.runs));
        files.extend(mc_files);
        Some(report)
    } else {
        None
    };
    files.push("manifest.json".into());

    let manifest = Manifest {
        config: cfg.clone(),
        network: scenario.layout,
        horizon: HorizonReport {
            requested: cfg.horizon.initial,
            resolved: analysis.horizon,
            window: (*analysis.window.start(), *analysis.window.end()),
            converged,
            tolerances: drkf::experiment::ConvergenceTolerances::default(),
            changes: analysis.convergence.clone(),
        },
        steady: analysis
            .variants
            .iter()
            .map(|v| SteadyValue {
                variant: v.variant.label(),
                msd: v.steady_average,
            })
            .collect(),
        monte_carlo: mc,
        files,
    };
    let json = serde_json::to_string_pretty(&manifest).stage(Stage::Output)?;
    fs::write(dir.join("manifest.json"), json + "\n")
        .with_context(|| format!("writing manifest in {}", dir.display()))
        .stage(Stage::Output)?;
    Ok(RunOutput { dir, manifest })
}
