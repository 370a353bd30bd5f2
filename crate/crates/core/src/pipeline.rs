//! End-to-end orchestration: identify, linearize, search an admissible
//! gain, collect data, learn the robust gains and deploy them.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cruise::{self, BenchmarkConfig, CruiseParams};
use crate::error::{Error, Result};
use crate::gare;
use crate::hinf::{self, SearchOptions};
use crate::learner::{self, KnownData, LearnerConfig, LearnerResult, Oracle};
use crate::lti::{self, AdmissibilityReport, FeedbackGain, LtiPlant, PlantFile, RealizabilityReport};
use crate::matops::{self, DenseMatrix};
use crate::narmax::{self, ChannelRoles, Dataset, EquilibriumPoint, FixedAssignment, FrolsOptions, NarmaxModel, RegressorSpec};
use crate::simsde::{self, Exploration, Scheme, SimConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Identify,
    Linearize,
    GainSearch,
    Collect,
    Learn,
    Deploy,
}

impl Stage {
    pub const ALL: [Stage; 6] = [Stage::Identify, Stage::Linearize, Stage::GainSearch, Stage::Collect, Stage::Learn, Stage::Deploy];
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Identify => "identify",
            Stage::Linearize => "linearize",
            Stage::GainSearch => "gain_search",
            Stage::Collect => "collect",
            Stage::Learn => "learn",
            Stage::Deploy => "deploy",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentificationConfig {
    pub degree: u32,
    pub err_threshold: f64,
    pub max_terms: usize,
    pub train_fraction: f64,
}

impl Default for IdentificationConfig {
    fn default() -> Self {
        IdentificationConfig { degree: 3, err_threshold: 1e-7, max_terms: 10, train_fraction: 0.75 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearizationConfig {
    pub x_eq: Vec<f64>,
    pub u_eq: Vec<f64>,
    pub fixed_states: Vec<bool>,
    pub fixed_inputs: Vec<bool>,
    pub control: Vec<usize>,
    pub disturbance: Vec<usize>,
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
}

impl Default for LinearizationConfig {
    fn default() -> Self {
        LinearizationConfig {
            x_eq: vec![20.0],
            u_eq: vec![0.0, 40.0, 0.0],
            fixed_states: vec![true],
            fixed_inputs: vec![false, true, true],
            control: vec![0, 1],
            disturbance: vec![2],
            q: vec![vec![1.0]],
            r: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GainSearchConfig {
    pub poles: Vec<f64>,
    pub allow_open_loop: bool,
    pub eta: f64,
}

impl Default for GainSearchConfig {
    fn default() -> Self {
        GainSearchConfig { poles: vec![-5.0, -4.0, -3.0, -2.0, -1.0, -0.5, -0.25], allow_open_loop: false, eta: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollectConfig {
    pub dt: f64,
    pub horizon: f64,
    pub noise_on: bool,
    pub scheme: Scheme,
    pub frequencies_per_channel: usize,
    pub frequency_min: f64,
    pub frequency_max: f64,
    pub amplitude: f64,
    pub interval_len: usize,
    pub x0: Option<Vec<f64>>,
}

impl Default for CollectConfig {
    fn default() -> Self {
        CollectConfig {
            dt: 1e-2,
            horizon: 400.0,
            noise_on: true,
            scheme: Scheme::default(),
            frequencies_per_channel: 12,
            frequency_min: 0.1,
            frequency_max: 10.0,
            amplitude: 20.0,
            interval_len: 100,
            x0: None,
        }
    }
}

impl CollectConfig {
    pub fn sim_config(&self, m: usize, seed: u64) -> SimConfig {
        SimConfig {
            dt: self.dt,
            horizon: self.horizon,
            seed,
            noise_on: self.noise_on,
            exploration: Exploration::log_spaced(m, self.frequencies_per_channel, self.frequency_min, self.frequency_max, self.amplitude),
            scheme: self.scheme,
            x0: self.x0.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnConfig {
    pub max_outer: usize,
    pub max_inner: usize,
    pub tol: f64,
    pub ridge: f64,
}

impl Default for LearnConfig {
    fn default() -> Self {
        LearnConfig { max_outer: 20, max_inner: 30, tol: 1e-9, ridge: 0.0 }
    }
}

impl LearnConfig {
    pub fn learner_config(&self, gamma: f64) -> LearnerConfig {
        LearnerConfig { gamma, max_outer: self.max_outer, max_inner: self.max_inner, tol: self.tol, ridge: self.ridge }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeployConfig {
    pub dt: f64,
    pub horizon: f64,
    pub noise_on: bool,
    /// Initial deviation from the equilibrium.
    pub x0: Vec<f64>,
    pub inject_worst_case: bool,
    /// Constant road slope (degrees) used for the steady-state deviation figure.
    pub slope_step_deg: f64,
}

impl Default for DeployConfig {
    fn default() -> Self {
        DeployConfig { dt: 1e-2, horizon: 20.0, noise_on: true, x0: vec![5.0], inject_worst_case: false, slope_step_deg: 40.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Identification data to use instead of generating the benchmark.
    pub dataset: Option<PathBuf>,
    /// Fitted model; required when the run starts at `linearize`.
    pub model: Option<PathBuf>,
    /// Linear plant; required when the run starts at `gain_search`.
    pub plant: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub schema_version: u32,
    pub stages: Vec<Stage>,
    pub seed: u64,
    pub gamma: f64,
    pub cruise: CruiseParams,
    pub benchmark: BenchmarkConfig,
    pub identification: IdentificationConfig,
    pub linearization: LinearizationConfig,
    pub gain_search: GainSearchConfig,
    pub collect: CollectConfig,
    pub learn: LearnConfig,
    pub deploy: DeployConfig,
    pub paths: PathsConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            schema_version: SCHEMA_VERSION,
            stages: Stage::ALL.to_vec(),
            seed: 0,
            gamma: 500.0,
            cruise: CruiseParams::default(),
            benchmark: BenchmarkConfig::default(),
            identification: IdentificationConfig::default(),
            linearization: LinearizationConfig::default(),
            gain_search: GainSearchConfig::default(),
            collect: CollectConfig::default(),
            learn: LearnConfig::default(),
            deploy: DeployConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&read(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let Some(first) = self.stages.first() else {
            return Err(Error::InvalidArgument("no stages selected".into()));
        };
        let start = Stage::ALL.iter().position(|s| s == first).expect("stage in ALL");
        if self.stages.iter().enumerate().any(|(i, s)| Stage::ALL.get(start + i) != Some(s)) {
            return Err(Error::InvalidArgument("stages must be a contiguous run of identify, linearize, gain_search, collect, learn, deploy".into()));
        }
        match first {
            Stage::Identify => {}
            Stage::Linearize if self.paths.model.is_some() => {}
            Stage::GainSearch if self.paths.plant.is_some() => {}
            other => {
                return Err(Error::InvalidArgument(format!("a run starting at {other} needs the previous stage's artifact in [paths]")))
            }
        }
        for p in [&self.paths.dataset, &self.paths.model, &self.paths.plant].into_iter().flatten() {
            if !p.exists() {
                return Err(Error::InvalidArgument(format!("referenced path {} does not exist", p.display())));
            }
        }
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(Error::InvalidArgument(format!("gamma must be positive, got {}", self.gamma)));
        }
        if !(self.identification.train_fraction > 0.0 && self.identification.train_fraction < 1.0) {
            return Err(Error::InvalidArgument("train_fraction must lie in (0, 1)".into()));
        }
        if self.gain_search.poles.is_empty() && !self.gain_search.allow_open_loop {
            return Err(Error::InvalidArgument("gain search needs candidate poles".into()));
        }
        self.cruise.validate()
    }

    pub fn search_options(&self) -> SearchOptions {
        let mut opts = SearchOptions { allow_open_loop: self.gain_search.allow_open_loop, ..SearchOptions::default() };
        opts.hinf.eta = self.gain_search.eta;
        opts
    }
}

pub fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io { path: path.display().to_string(), source })
}

pub fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|source| Error::Io { path: path.display().to_string(), source })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermReport {
    pub term: String,
    pub coefficient: f64,
    pub err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentificationReport {
    pub candidates: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    pub terms: Vec<TermReport>,
    pub rrse: Vec<f64>,
    pub has_sin_slope: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainSearchReport {
    pub pole: Option<f64>,
    pub k1: Vec<Vec<f64>>,
    pub admissibility: AdmissibilityReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub rank: usize,
    pub unknowns: usize,
    pub condition: f64,
    pub intervals: usize,
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub p_star: Vec<Vec<f64>>,
    pub k_star: Vec<Vec<f64>>,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningReport {
    pub k_hat: Vec<Vec<f64>>,
    pub l_hat: Vec<Vec<f64>>,
    pub p_hat: Vec<Vec<f64>>,
    pub converged: bool,
    pub outer_iterations: usize,
    pub iterates: usize,
    pub final_rel_err_p: Option<f64>,
    pub final_rel_err_k: Option<f64>,
    /// Errors of the last iterate of outer step 2 (value matrix and the gain it implies).
    pub rel_err_p_outer2: Option<f64>,
    pub rel_err_k_outer2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeploymentReport {
    pub quadratic_cost: f64,
    pub disturbance_energy: f64,
    pub settling_time: Option<f64>,
    pub overshoot: f64,
    pub inject_worst_case: bool,
    pub slope_step_deg: f64,
    /// Closed-loop steady-state deviation under the constant slope.
    pub steady_state_deviation: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub schema_version: u32,
    pub seed: u64,
    pub gamma: f64,
    pub stages: Vec<Stage>,
    pub identification: Option<IdentificationReport>,
    pub equilibrium: Option<EquilibriumPoint>,
    pub plant: Option<PlantFile>,
    pub realizability: Option<RealizabilityReport>,
    pub gain_search: Option<GainSearchReport>,
    pub batch: Option<BatchReport>,
    pub oracle: Option<OracleReport>,
    pub learning: Option<LearningReport>,
    pub deployment: Option<DeploymentReport>,
    pub artifacts: Vec<String>,
}

impl PipelineReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

struct Artifacts<'a> {
    dir: &'a Path,
    written: Vec<String>,
}

impl Artifacts<'_> {
    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        write(&self.dir.join(name), contents)?;
        self.written.push(name.to_string());
        Ok(())
    }
}

/// CSV of the pole sweep: pole, gain entries (row-major), norm.
pub fn sweep_csv(plant: &LtiPlant, sweep: &[hinf::SweepPoint]) -> String {
    let (m, n) = (plant.m(), plant.n());
    let mut out = String::from("pole");
    for i in 1..=m {
        for j in 1..=n {
            out.push_str(&format!(",k{i}{j}"));
        }
    }
    out.push_str(",norm\n");
    for pt in sweep {
        out.push_str(&format!("{}", pt.pole));
        let gain = hinf::place_repeated_pole(&plant.a, &plant.b1, pt.pole).ok();
        for i in 0..m {
            for j in 0..n {
                out.push_str(&format!(",{}", gain.as_ref().map_or(f64::NAN, |g| g[(i, j)])));
            }
        }
        out.push_str(&format!(",{}\n", pt.norm));
    }
    out
}

/// Prediction against held-out data: `t`, then actual, predicted and residual per output.
pub fn prediction_csv(data: &Dataset, pred: &narmax::Prediction) -> String {
    let mut out = String::from("t");
    for name in &data.output_names {
        out.push_str(&format!(",{name},{name}_pred,{name}_residual"));
    }
    out.push('\n');
    for k in 0..data.len() {
        out.push_str(&format!("{}", data.times[k]));
        for (truth, p) in data.outputs.iter().zip(&pred.outputs) {
            out.push_str(&format!(",{},{},{}", truth[k], p[k], truth[k] - p[k]));
        }
        out.push('\n');
    }
    out
}

#[derive(Serialize, Deserialize)]
pub struct GainsFile {
    pub k: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<Vec<Vec<f64>>>,
}

impl GainsFile {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("gains serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))
    }
}

/// Fits the model on the leading part of `data` and scores free-run prediction on the rest.
pub fn identify_stage(data: &Dataset, cfg: &IdentificationConfig) -> Result<(NarmaxModel, IdentificationReport, narmax::Prediction, Dataset)> {
    let spec = RegressorSpec::continuous(cfg.degree);
    let (train, test) = data.split(cfg.train_fraction);
    let opts = FrolsOptions { err_threshold: cfg.err_threshold, max_terms: cfg.max_terms };
    let model = narmax::identify(&train, &spec, &opts)?;
    let x0: Vec<f64> = test.outputs.iter().map(|s| s[0]).collect();
    let pred = narmax::free_run_predict(&model, &test, &x0)?;
    let slope = data.n_inputs().saturating_sub(1);
    let report = IdentificationReport {
        candidates: spec.candidates(data.n_outputs(), data.n_inputs())?.len(),
        train_samples: train.len(),
        test_samples: test.len(),
        terms: model
            .equations
            .iter()
            .flatten()
            .map(|t| TermReport { term: t.term.to_string(), coefficient: t.coefficient, err: t.err })
            .collect(),
        rrse: pred.rrse.clone(),
        has_sin_slope: model.has_term(|t| {
            t.wrapper == narmax::Wrapper::Sin && t.factors.iter().any(|f| f.var.signal == narmax::Signal::Input(slope))
        }),
    };
    Ok((model, report, pred, test))
}

/// Equilibrium and linearization from the configured operating point.
pub fn linearize_stage(model: &NarmaxModel, cfg: &LinearizationConfig) -> Result<(EquilibriumPoint, LtiPlant)> {
    let fixed = FixedAssignment { states: cfg.fixed_states.clone(), inputs: cfg.fixed_inputs.clone() };
    let eq = narmax::find_equilibrium(model, &cfg.x_eq, &cfg.u_eq, &fixed)?;
    let roles = ChannelRoles { control: cfg.control.clone(), disturbance: cfg.disturbance.clone() };
    let q = matops::from_rows(&cfg.q)?;
    let r = matops::from_rows(&cfg.r)?;
    let plant = narmax::linearize(model, &eq, &roles, &q, &r)?;
    Ok((eq, plant))
}

/// Model-based reference `(P*, K*)` from the game Riccati equation.
pub fn oracle_for(plant: &LtiPlant, gamma: f64) -> Result<(Oracle, f64)> {
    let p = gare::solve_gare_direct(plant, gamma)?;
    let k = plant.r_inverse()? * plant.b1.transpose() * p.as_matrix();
    let residual = gare::riccati_residual(plant, &p, gamma)?;
    Ok((Oracle { p, k }, residual))
}

pub fn learning_report(res: &LearnerResult) -> LearningReport {
    let finite = |v: f64| v.is_finite().then_some(v);
    let last = res.history.last();
    let at2 = res.history.iter().rev().find(|h| h.p == 2);
    LearningReport {
        k_hat: matops::to_rows(&res.k_hat),
        l_hat: matops::to_rows(&res.l_hat),
        p_hat: matops::to_rows(res.p_hat.as_matrix()),
        converged: res.converged,
        outer_iterations: last.map_or(0, |h| h.p),
        iterates: res.history.len(),
        final_rel_err_p: last.and_then(|h| finite(h.rel_err_p)),
        final_rel_err_k: last.and_then(|h| finite(h.rel_err_k)),
        rel_err_p_outer2: at2.and_then(|h| finite(h.rel_err_p)),
        rel_err_k_outer2: at2.and_then(|h| finite(h.rel_err_k)),
    }
}

/// Steady state of `dx = (A - B1 K) x + B2 w` under constant `w`.
pub fn steady_state(plant: &LtiPlant, k: &FeedbackGain, w: &DenseMatrix) -> Result<DenseMatrix> {
    let acl = plant.closed_loop_a(k);
    let rhs = -(&plant.b2 * w);
    acl.lu()
        .solve(&rhs)
        .ok_or(Error::IllConditioned { context: "steady state", condition: f64::INFINITY })
}

/// Runs the configured stages, writing artifacts into `out_dir`.
pub fn run_pipeline(cfg: &PipelineConfig, out_dir: &Path) -> Result<PipelineReport> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(|source| Error::Io { path: out_dir.display().to_string(), source })?;
    let mut art = Artifacts { dir: out_dir, written: Vec::new() };
    let mut report = PipelineReport {
        schema_version: SCHEMA_VERSION,
        seed: cfg.seed,
        gamma: cfg.gamma,
        stages: cfg.stages.clone(),
        identification: None,
        equilibrium: None,
        plant: None,
        realizability: None,
        gain_search: None,
        batch: None,
        oracle: None,
        learning: None,
        deployment: None,
        artifacts: Vec::new(),
    };
    let mut model: Option<NarmaxModel> = None;
    let mut plant: Option<LtiPlant> = None;
    let mut k1: Option<FeedbackGain> = None;
    let mut batch: Option<simsde::RegressionBatch> = None;
    let mut learned: Option<LearnerResult> = None;

    for &stage in &cfg.stages {
        log::info!("pipeline stage {stage}");
        let outcome = run_stage(stage, cfg, &mut art, &mut report, &mut model, &mut plant, &mut k1, &mut batch, &mut learned);
        if let Err(e) = outcome {
            return Err(Error::Stage { stage: stage.to_string(), completed: art.written.clone(), source: Box::new(e) });
        }
    }
    report.artifacts = art.written.clone();
    report.artifacts.push("report.json".into());
    art.write("report.json", &report.to_json())?;
    Ok(report)
}

#[allow(clippy::too_many_arguments)]
fn run_stage(
    stage: Stage,
    cfg: &PipelineConfig,
    art: &mut Artifacts<'_>,
    report: &mut PipelineReport,
    model: &mut Option<NarmaxModel>,
    plant: &mut Option<LtiPlant>,
    k1: &mut Option<FeedbackGain>,
    batch: &mut Option<simsde::RegressionBatch>,
    learned: &mut Option<LearnerResult>,
) -> Result<()> {
    match stage {
        Stage::Identify => {
            let data = match &cfg.paths.dataset {
                Some(p) => Dataset::from_csv(&read(p)?)?,
                None => {
                    let d = cruise::generate_benchmark(&cfg.cruise, &cfg.benchmark, cfg.seed)?;
                    art.write("dataset.csv", &d.to_csv())?;
                    d
                }
            };
            let (m, rep, pred, test) = identify_stage(&data, &cfg.identification)?;
            art.write("model.json", &m.to_json())?;
            art.write("prediction.csv", &prediction_csv(&test, &pred))?;
            report.identification = Some(rep);
            *model = Some(m);
        }
        Stage::Linearize => {
            let m = match model.take() {
                Some(m) => m,
                None => NarmaxModel::from_json(&read(cfg.paths.model.as_deref().expect("validated"))?)?,
            };
            let (eq, p) = linearize_stage(&m, &cfg.linearization)?;
            art.write("plant.json", &p.to_json())?;
            report.equilibrium = Some(eq);
            report.plant = Some(PlantFile::from(&p));
            *plant = Some(p);
            *model = Some(m);
        }
        Stage::GainSearch => {
            if plant.is_none() {
                let p = LtiPlant::from_json(&read(cfg.paths.plant.as_deref().expect("validated"))?)?;
                report.plant = Some(PlantFile::from(&p));
                *plant = Some(p);
            }
            let p = plant.as_ref().expect("plant set");
            let real = lti::check_realizability(p);
            if !real.satisfied() {
                log::warn!("realizability assumptions fail: {real:?}");
            }
            report.realizability = Some(real);
            let opts = cfg.search_options();
            let found = hinf::find_admissible_gain(p, cfg.gamma, &cfg.gain_search.poles, &opts)?;
            art.write("gain_search.csv", &sweep_csv(p, &found.sweep))?;
            let admissibility = hinf::admissibility(p, &found.gain, cfg.gamma, &opts.hinf)?;
            art.write("k1.json", &GainsFile { k: matops::to_rows(&found.gain), l: None, p: None }.to_json())?;
            report.gain_search = Some(GainSearchReport { pole: found.pole, k1: matops::to_rows(&found.gain), admissibility });
            *k1 = Some(found.gain);
        }
        Stage::Collect => {
            let p = plant.as_ref().expect("plant set");
            let k = k1.as_ref().expect("k1 set");
            let sim = cfg.collect.sim_config(p.m(), cfg.seed);
            let traj = simsde::simulate(p, k, &sim)?;
            art.write("collect_trajectory.csv", &traj.to_csv())?;
            let b = simsde::collect_batch(&traj, cfg.collect.interval_len)?;
            report.batch = Some(BatchReport {
                rank: b.rank,
                unknowns: b.unknowns(),
                condition: b.condition,
                intervals: b.intervals.len(),
                duration: b.duration,
            });
            *batch = Some(b);
        }
        Stage::Learn => {
            let p = plant.as_ref().expect("plant set");
            let oracle = match oracle_for(p, cfg.gamma) {
                Ok((o, residual)) => {
                    report.oracle = Some(OracleReport {
                        p_star: matops::to_rows(o.p.as_matrix()),
                        k_star: matops::to_rows(&o.k),
                        residual,
                    });
                    Some(o)
                }
                Err(e) => {
                    log::warn!("model-based reference unavailable: {e}");
                    None
                }
            };
            let res = learner::robust_gains(
                batch.as_ref().expect("batch set"),
                &KnownData::from_plant(p),
                &cfg.learn.learner_config(cfg.gamma),
                k1.as_ref().expect("k1 set"),
                oracle.as_ref(),
            )?;
            art.write("learning_history.csv", &res.history_csv())?;
            let gains = GainsFile {
                k: matops::to_rows(&res.k_hat),
                l: Some(matops::to_rows(&res.l_hat)),
                p: Some(matops::to_rows(res.p_hat.as_matrix())),
            };
            art.write("gains.json", &gains.to_json())?;
            report.learning = Some(learning_report(&res));
            *learned = Some(res);
        }
        Stage::Deploy => {
            let p = plant.as_ref().expect("plant set");
            let res = learned.as_ref().expect("learned gains set");
            let sim = SimConfig {
                dt: cfg.deploy.dt,
                horizon: cfg.deploy.horizon,
                seed: cfg.seed.wrapping_add(1),
                noise_on: cfg.deploy.noise_on,
                exploration: Exploration::none(p.m()),
                scheme: Scheme::default(),
                x0: Some(cfg.deploy.x0.clone()),
            };
            let pol = learner::apply_policy(p, &res.k_hat, &res.l_hat, &sim, cfg.deploy.inject_worst_case)?;
            art.write("deploy_trajectory.csv", &pol.trajectory.to_csv())?;
            let w = DenseMatrix::from_element(p.qw(), 1, cfg.deploy.slope_step_deg.to_radians());
            let ss = steady_state(p, &res.k_hat, &w)?;
            report.deployment = Some(DeploymentReport {
                quadratic_cost: pol.quadratic_cost,
                disturbance_energy: pol.disturbance_energy,
                settling_time: pol.settling_time,
                overshoot: pol.overshoot,
                inject_worst_case: cfg.deploy.inject_worst_case,
                slope_step_deg: cfg.deploy.slope_step_deg,
                steady_state_deviation: ss.iter().copied().collect(),
            });
        }
    }
    Ok(())
}
