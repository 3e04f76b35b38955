//! End-to-end experiment pipeline: configuration, simulation, fusion,
//! evaluation and on-disk artifacts.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::comms::{account, AccountingReport, BaselineCostModel, Codec, CodecError, CovarianceLayout, Message};
use crate::graph::{build_graph, AssociationConfig, BuildStats, FactorCounts, GraphError, GraphInput};
use crate::measurements::{AgentId, AnchorId, KeyframeMsg, MeasurementError, OdometryEdge, PriorFactor};
use crate::metrics::{self, Alignment, MetricsError};
use crate::plot;
use crate::sim3::{lift_se3, Matrix7, Se3Pose, Sim3Pose};
use crate::solver::{solve_lm, SolveReport, SolverConfig};
use crate::swarm::{
    availability_stats, dead_reckon, generate_odometry, generate_priors, generate_ranges, split_swarm,
    synthetic_trajectory, AvailabilityRow, OdometryNoiseConfig, PriorConfig, RangeStreams, RangingNoiseConfig,
    SwarmError, SwarmScenario,
};
use crate::trajectory::{format_tum, ingest_trajectory, Axes, IngestOptions, StampedPose, TrajectoryError, TrajectoryFormat};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Trajectory { path: PathBuf, source: TrajectoryError },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("seed {seed}: {source}")]
    Swarm { seed: u64, source: SwarmError },
    #[error("seed {seed}, mode {mode}: {source}")]
    Graph { seed: u64, mode: FusionMode, source: GraphError },
    #[error("seed {seed}, mode {mode}: {source}")]
    Metrics { seed: u64, mode: FusionMode, source: MetricsError },
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Measurement(#[from] MeasurementError),
    #[error("missing artifact {0}; run the earlier pipeline stage first")]
    MissingArtifact(PathBuf),
}

impl ExperimentError {
    /// Usage and configuration problems, as opposed to data or runtime failures.
    pub fn is_config(&self) -> bool {
        matches!(self, ExperimentError::Config(_))
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io { path: path.to_path_buf(), source }
}

/// Which measurements enter the fusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FusionMode {
    #[serde(rename = "vo-only")]
    VoOnly,
    #[serde(rename = "vo+inter")]
    VoInter,
    #[serde(rename = "vo+inter+anchor")]
    VoInterAnchor,
}

impl FusionMode {
    pub const ALL: [FusionMode; 3] = [FusionMode::VoOnly, FusionMode::VoInter, FusionMode::VoInterAnchor];

    pub fn name(self) -> &'static str {
        match self {
            FusionMode::VoOnly => "vo-only",
            FusionMode::VoInter => "vo+inter",
            FusionMode::VoInterAnchor => "vo+inter+anchor",
        }
    }

    /// File-system friendly name.
    pub fn slug(self) -> &'static str {
        match self {
            FusionMode::VoOnly => "vo-only",
            FusionMode::VoInter => "vo-inter",
            FusionMode::VoInterAnchor => "vo-inter-anchor",
        }
    }

    pub fn uses_inter(self) -> bool {
        self != FusionMode::VoOnly
    }

    pub fn uses_anchor(self) -> bool {
        self == FusionMode::VoInterAnchor
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FusionMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        FusionMode::ALL
            .into_iter()
            .find(|m| m.name() == s || m.slug() == s)
            .ok_or_else(|| format!("unknown fusion mode '{s}' (expected vo-only, vo+inter or vo+inter+anchor)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetConfig {
    File {
        path: PathBuf,
        format: TrajectoryFormat,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        times: Option<PathBuf>,
        #[serde(default = "default_rate")]
        rate_hz: f64,
        #[serde(default)]
        axes: Axes,
    },
    /// Built-in smooth test course.
    Synthetic { poses: usize, spacing: f64 },
}

fn default_rate() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SwarmConfig {
    pub agents: usize,
    /// Keep every n-th pose of each agent as a keyframe.
    pub keyframe_stride: usize,
    pub max_range: f64,
    /// Keyframe/range pairing tolerance (s).
    pub association_tolerance: f64,
    /// Antenna offset in the camera frame, used by the range factors.
    pub lever_arm: [f64; 3],
    /// Scale used to lift each agent's first pose for the initial guess; missing entries are 1.
    pub initial_scale: Vec<f64>,
}

impl Default for SwarmConfig {
    fn default() -> Self {
        Self {
            agents: 4,
            keyframe_stride: 5,
            max_range: 200.0,
            association_tolerance: 0.05,
            lever_arm: [0.0; 3],
            initial_scale: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnchorConfig {
    pub id: AnchorId,
    pub position: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    pub alignment: Alignment,
    pub covariance_layout: CovarianceLayout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seeds: Vec<u64>,
    #[serde(default = "all_modes")]
    pub modes: Vec<FusionMode>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub swarm: SwarmConfig,
    #[serde(default)]
    pub anchors: Vec<AnchorConfig>,
    #[serde(default)]
    pub odometry: OdometryNoiseConfig,
    #[serde(default)]
    pub ranging: RangingNoiseConfig,
    #[serde(default)]
    pub prior: PriorConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub baselines: BaselineCostModel,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
}

fn all_modes() -> Vec<FusionMode> {
    FusionMode::ALL.to_vec()
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    /// Default noise model on a built-in test course.
    pub fn synthetic(poses: usize, seeds: Vec<u64>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seeds,
            modes: all_modes(),
            output_dir: default_output(),
            dataset: DatasetConfig::Synthetic { poses, spacing: 0.5 },
            swarm: SwarmConfig { keyframe_stride: 1, ..SwarmConfig::default() },
            anchors: vec![AnchorConfig { id: 0, position: [0.0, 150.0, 10.0] }],
            odometry: OdometryNoiseConfig::default(),
            ranging: RangingNoiseConfig::default(),
            prior: PriorConfig::default(),
            solver: SolverConfig::default(),
            baselines: BaselineCostModel::default(),
            evaluation: EvaluationConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; dataset paths are resolved against its directory
/// and stored as absolute paths.
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ExperimentError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &Path| {
            let joined = base.join(p);
            std::path::absolute(&joined).unwrap_or(joined)
        };
        if let DatasetConfig::File { path, times, .. } = &mut cfg.dataset {
            *path = resolve(path);
            if let Some(t) = times {
                *t = resolve(t);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let fail = |m: String| Err(ExperimentError::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return fail(format!("unsupported schema_version {} (expected {SCHEMA_VERSION})", self.schema_version));
        }
        if self.seeds.is_empty() {
            return fail("at least one seed is required".into());
        }
        if self.modes.is_empty() {
            return fail("at least one fusion mode is required".into());
        }
        if self.swarm.agents == 0 || self.swarm.agents > u16::MAX as usize {
            return fail("swarm.agents must be between 1 and 65535".into());
        }
        if self.swarm.keyframe_stride == 0 {
            return fail("swarm.keyframe_stride must be positive".into());
        }
        if !(self.swarm.max_range > 0.0) || !(self.swarm.association_tolerance >= 0.0) {
            return fail("swarm.max_range must be positive and association_tolerance non-negative".into());
        }
        if self.swarm.initial_scale.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return fail("swarm.initial_scale entries must be positive".into());
        }
        match &self.dataset {
            DatasetConfig::Synthetic { poses, spacing } => {
                if *poses < self.swarm.agents || !(*spacing > 0.0) {
                    return fail("synthetic dataset needs at least one pose per agent and positive spacing".into());
                }
            }
            DatasetConfig::File { rate_hz, .. } => {
                if !(*rate_hz > 0.0) {
                    return fail("dataset.rate_hz must be positive".into());
                }
            }
        }
        let mut ids: Vec<AnchorId> = self.anchors.iter().map(|a| a.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return fail("duplicate anchor id".into());
        }
        if self.anchors.iter().any(|a| a.position.iter().any(|v| !v.is_finite())) {
            return fail("anchor positions must be finite".into());
        }
        self.odometry.validate().map_err(ExperimentError::Config)?;
        self.ranging.validate().map_err(ExperimentError::Config)?;
        self.prior.validate().map_err(ExperimentError::Config)?;
        self.solver.validate().map_err(ExperimentError::Config)?;
        self.baselines.validate().map_err(ExperimentError::Config)?;
        Ok(())
    }

    fn association(&self) -> AssociationConfig {
        AssociationConfig { tolerance: self.swarm.association_tolerance, lever_arm: self.swarm.lever_arm }
    }

    fn codec(&self) -> Codec {
        Codec { covariance: self.evaluation.covariance_layout }
    }
}

/// Loads the trajectory and builds the ground-truth swarm.
pub fn build_scenario(cfg: &ExperimentConfig) -> Result<SwarmScenario, ExperimentError> {
    let traj: Vec<StampedPose> = match &cfg.dataset {
        DatasetConfig::File { path, format, times, rate_hz, axes } => {
            let opts = IngestOptions { format: *format, times: times.clone(), rate_hz: *rate_hz, axes: *axes };
            ingest_trajectory(path, &opts)
                .map_err(|source| ExperimentError::Trajectory { path: path.clone(), source })?
        }
        DatasetConfig::Synthetic { poses, spacing } => synthetic_trajectory(*poses, *spacing),
    };
    let split = split_swarm(&traj, cfg.swarm.agents).map_err(|source| ExperimentError::Swarm { seed: 0, source })?;
    let mut scenario = split.subsample(cfg.swarm.keyframe_stride);
    scenario.anchors = cfg.anchors.iter().map(|a| (a.id, a.position)).collect();
    scenario.max_range = cfg.swarm.max_range;
    scenario.association_tolerance = cfg.swarm.association_tolerance;
    if scenario.agents.iter().any(|a| a.keyframes.len() < 2) {
        return Err(ExperimentError::Config("every agent needs at least two keyframes after subsampling".into()));
    }
    Ok(scenario)
}

/// Everything generated for one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Simulation {
    pub seed: u64,
    pub scenario: SwarmScenario,
    pub odometry: Vec<Vec<OdometryEdge>>,
    pub priors: Vec<PriorFactor>,
    pub ranges: RangeStreams,
    /// Dead-reckoned keyframe poses per agent: the pre-fusion estimate.
    pub initial: Vec<Vec<Sim3Pose>>,
}

fn covariance_of(information: &Matrix7) -> Matrix7 {
    let c = information.try_inverse().unwrap_or_else(Matrix7::identity);
    (c + c.transpose()) * 0.5
}

pub fn simulate(cfg: &ExperimentConfig, scenario: &SwarmScenario, seed: u64) -> Result<Simulation, ExperimentError> {
    let err = |source| ExperimentError::Swarm { seed, source };
    let odometry = generate_odometry(scenario, &cfg.odometry, seed).map_err(err)?;
    let priors = generate_priors(scenario, &cfg.prior, seed).map_err(err)?;
    let ranges = generate_ranges(scenario, &cfg.ranging, seed).map_err(err)?;
    let initial = priors
        .iter()
        .zip(&odometry)
        .enumerate()
        .map(|(i, (prior, edges))| {
            let scale = cfg.swarm.initial_scale.get(i).copied().unwrap_or(1.0);
            let p = &prior.prior_pose;
            let start = lift_se3(&Se3Pose::new(*p.rotation(), p.position()), scale)?;
            Ok(dead_reckon(start, edges))
        })
        .collect::<Result<_, crate::sim3::Sim3Error>>()
        .map_err(|e| err(MeasurementError::from(e).into()))?;
    Ok(Simulation { seed, scenario: scenario.clone(), odometry, priors, ranges, initial })
}

impl Simulation {
    /// Broadcast messages of a mode in time order.
    pub fn messages(&self, mode: FusionMode) -> Result<Vec<Message>, ExperimentError> {
        let mut out: Vec<(f64, u8, Message)> = Vec::new();
        for (a, agent) in self.scenario.agents.iter().enumerate() {
            for (k, kf) in agent.keyframes.iter().enumerate() {
                let info = if k == 0 { &self.priors[a].information } else { &self.odometry[a][k - 1].information };
                let msg = KeyframeMsg::new(agent.agent_id, kf.timestamp, self.initial[a][k], covariance_of(info))?;
                out.push((kf.timestamp, 0, Message::KeyframeMsg(msg)));
            }
        }
        if mode.uses_inter() {
            out.extend(self.ranges.inter.iter().map(|m| (m.timestamp, 1, Message::InterRangeMsg(*m))));
        }
        if mode.uses_anchor() {
            out.extend(self.ranges.anchor.iter().map(|m| (m.timestamp, 2, Message::AnchorRangeMsg(*m))));
        }
        out.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.agent_id().cmp(&y.2.agent_id())));
        Ok(out.into_iter().map(|(_, _, m)| m).collect())
    }

    pub fn graph_input(&self, mode: FusionMode) -> Result<GraphInput, ExperimentError> {
        let keyframes = self
            .messages(FusionMode::VoOnly)?
            .into_iter()
            .filter_map(|m| match m {
                Message::KeyframeMsg(k) => Some(k),
                _ => None,
            })
            .collect();
        Ok(GraphInput {
            keyframes,
            odometry: self.odometry.iter().flatten().cloned().collect(),
            inter_ranges: if mode.uses_inter() { self.ranges.inter.clone() } else { Vec::new() },
            anchor_ranges: if mode.uses_anchor() { self.ranges.anchor.clone() } else { Vec::new() },
            anchors: if mode.uses_anchor() { self.scenario.anchors.clone() } else { BTreeMap::new() },
            priors: self.priors.clone(),
        })
    }

    pub fn truth(&self, agent: AgentId) -> Vec<(f64, Sim3Pose)> {
        self.scenario
            .agent(agent)
            .map(|a| a.keyframes.iter().map(|k| (k.timestamp, k.sim3())).collect())
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentEstimate {
    pub agent_id: AgentId,
    pub poses: Vec<(f64, Sim3Pose)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionOutcome {
    pub seed: u64,
    pub mode: FusionMode,
    pub agents: Vec<AgentEstimate>,
    pub solver: SolveReport,
    pub factors: FactorCounts,
    pub build: BuildStats,
}

pub fn fuse(cfg: &ExperimentConfig, sim: &Simulation, mode: FusionMode) -> Result<FusionOutcome, ExperimentError> {
    let seed = sim.seed;
    let graph_err = |source| ExperimentError::Graph { seed, mode, source };
    let input = sim.graph_input(mode)?;
    let graph = build_graph(&input, &cfg.association()).map_err(graph_err)?;
    let (solved, solver) = solve_lm(&graph, &cfg.solver).map_err(graph_err)?;
    let agents = solved
        .agents()
        .into_iter()
        .map(|agent_id| AgentEstimate {
            agent_id,
            poses: solved.trajectory(agent_id).into_iter().map(|(k, p)| (k.timestamp, p)).collect(),
        })
        .collect();
    Ok(FusionOutcome { seed, mode, agents, solver, factors: solved.factor_counts(), build: solved.stats })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentMetrics {
    pub agent_id: AgentId,
    pub ate_rmse: f64,
    pub timestamps: Vec<f64>,
    pub position_errors: Vec<f64>,
    pub scale_errors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub seed: u64,
    pub mode: FusionMode,
    /// RMSE over every keyframe of every agent.
    pub ate_rmse: f64,
    pub median_scale_error: f64,
    pub agents: Vec<AgentMetrics>,
    pub availability: Vec<AvailabilityRow>,
    pub accounting: AccountingReport,
    pub solver: SolveReport,
    pub factors: FactorCounts,
    pub build: BuildStats,
}

pub fn evaluate(
    cfg: &ExperimentConfig,
    sim: &Simulation,
    fused: &FusionOutcome,
) -> Result<MetricsReport, ExperimentError> {
    let (seed, mode) = (sim.seed, fused.mode);
    let merr = |source| ExperimentError::Metrics { seed, mode, source };
    let mut agents = Vec::new();
    let (mut all_pos, mut all_scale) = (Vec::new(), Vec::new());
    for est in &fused.agents {
        let truth = sim.truth(est.agent_id);
        let position_errors = metrics::position_errors(&est.poses, &truth, cfg.evaluation.alignment).map_err(merr)?;
        let scale_errors = metrics::scale_error_series(&est.poses, &truth).map_err(merr)?;
        all_pos.extend_from_slice(&position_errors);
        all_scale.extend_from_slice(&scale_errors);
        agents.push(AgentMetrics {
            agent_id: est.agent_id,
            ate_rmse: metrics::rmse(&position_errors),
            timestamps: est.poses.iter().map(|p| p.0).collect(),
            position_errors,
            scale_errors,
        });
    }
    let stream = sim.messages(mode)?;
    Ok(MetricsReport {
        seed,
        mode,
        ate_rmse: metrics::rmse(&all_pos),
        median_scale_error: metrics::median(&all_scale),
        agents,
        availability: availability_stats(&sim.scenario, &sim.ranges),
        accounting: account(&stream, &cfg.codec(), &cfg.baselines),
        solver: fused.solver.clone(),
        factors: fused.factors,
        build: fused.build,
    })
}

/// Simulation, fusion and evaluation of one seed in memory.
pub fn run_seed(
    cfg: &ExperimentConfig,
    scenario: &SwarmScenario,
    seed: u64,
) -> Result<(Simulation, Vec<(FusionOutcome, MetricsReport)>), ExperimentError> {
    let sim = simulate(cfg, scenario, seed)?;
    let runs = cfg
        .modes
        .iter()
        .map(|&mode| {
            let fused = fuse(cfg, &sim, mode)?;
            let report = evaluate(cfg, &sim, &fused)?;
            Ok((fused, report))
        })
        .collect::<Result<_, ExperimentError>>()?;
    Ok((sim, runs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: FusionMode,
    pub seeds: Vec<u64>,
    pub ate_rmse: Vec<f64>,
    pub median_ate_rmse: f64,
    pub median_scale_error: f64,
    pub mean_iterations: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub modes: Vec<ModeSummary>,
    /// Median ATE does not increase from vo-only to vo+inter to vo+inter+anchor.
    pub monotone: Option<bool>,
    pub ratio_vs_dslam: Option<f64>,
    /// The byte ratio is an identity of the configured baseline constants, not a measurement.
    pub ratio_note: String,
}

pub fn summarize(reports: &[MetricsReport]) -> ExperimentSummary {
    let mut modes = Vec::new();
    for mode in FusionMode::ALL {
        let rs: Vec<&MetricsReport> = reports.iter().filter(|r| r.mode == mode).collect();
        if rs.is_empty() {
            continue;
        }
        let ate: Vec<f64> = rs.iter().map(|r| r.ate_rmse).collect();
        let scale: Vec<f64> = rs.iter().map(|r| r.median_scale_error).collect();
        modes.push(ModeSummary {
            mode,
            seeds: rs.iter().map(|r| r.seed).collect(),
            median_ate_rmse: metrics::median(&ate),
            ate_rmse: ate,
            median_scale_error: metrics::median(&scale),
            mean_iterations: rs.iter().map(|r| r.solver.iterations as f64).sum::<f64>() / rs.len() as f64,
        });
    }
    let monotone = (modes.len() == 3)
        .then(|| modes[2].median_ate_rmse <= modes[1].median_ate_rmse && modes[1].median_ate_rmse <= modes[0].median_ate_rmse);
    let ratio_vs_dslam = reports
        .iter()
        .filter(|r| r.mode == FusionMode::VoInterAnchor)
        .chain(reports.iter())
        .map(|r| r.accounting.ratio_vs_dslam)
        .next();
    ExperimentSummary {
        modes,
        monotone,
        ratio_vs_dslam,
        ratio_note: "CoVOR bytes are exact encoded totals; baseline bytes are configured per-keyframe constants"
            .into(),
    }
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ExperimentError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(dir))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| ExperimentError::Io { path: path.to_path_buf(), source: e.error })?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ExperimentError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|source| ExperimentError::Json { path: path.to_path_buf(), source })?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, ExperimentError> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => ExperimentError::MissingArtifact(path.to_path_buf()),
        _ => ExperimentError::Io { path: path.to_path_buf(), source: e },
    })?;
    serde_json::from_str(&text).map_err(|source| ExperimentError::Json { path: path.to_path_buf(), source })
}

fn csv_bytes<F>(header: &[&str], fill: F) -> Vec<u8>
where
    F: FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    fill(&mut w).expect("in-memory write");
    w.into_inner().expect("in-memory flush")
}

/// On-disk layout of an experiment.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.root.join(format!("seed_{seed}"))
    }

    pub fn simulation(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("simulation.json")
    }

    pub fn mode_dir(&self, seed: u64, mode: FusionMode) -> PathBuf {
        self.seed_dir(seed).join(mode.slug())
    }

    pub fn estimate(&self, seed: u64, mode: FusionMode) -> PathBuf {
        self.mode_dir(seed, mode).join("estimate.json")
    }

    pub fn metrics(&self, seed: u64, mode: FusionMode) -> PathBuf {
        self.mode_dir(seed, mode).join("metrics.json")
    }
}

/// Stage 1: generate measurements and message streams for every seed.
pub fn stage_simulate(cfg: &ExperimentConfig, layout: &Layout) -> Result<Vec<Simulation>, ExperimentError> {
    let scenario = build_scenario(cfg)?;
    write_atomic(&layout.root.join("config.resolved.toml"), cfg.to_toml().as_bytes())?;
    let codec = cfg.codec();
    cfg.seeds
        .par_iter()
        .map(|&seed| {
            let sim = simulate(cfg, &scenario, seed)?;
            let dir = layout.seed_dir(seed);
            write_json(&layout.simulation(seed), &sim)?;
            let stream = sim.messages(FusionMode::VoInterAnchor)?;
            write_atomic(&dir.join("messages.bin"), &codec.encode_stream(&stream)?)?;
            write_atomic(&dir.join("messages.jsonl"), crate::comms::to_json_lines(&stream).as_bytes())?;
            let rows = availability_stats(&sim.scenario, &sim.ranges);
            write_atomic(&dir.join("availability.csv"), &availability_csv(&rows))?;
            Ok(sim)
        })
        .collect()
}

/// Stage 2: solve every (seed, mode) from the stored simulations.
pub fn stage_fuse(cfg: &ExperimentConfig, layout: &Layout) -> Result<Vec<FusionOutcome>, ExperimentError> {
    let jobs: Vec<(u64, FusionMode)> =
        cfg.seeds.iter().flat_map(|&s| cfg.modes.iter().map(move |&m| (s, m))).collect();
    jobs.par_iter()
        .map(|&(seed, mode)| {
            let sim: Simulation = read_json(&layout.simulation(seed))?;
            let fused = fuse(cfg, &sim, mode)?;
            write_json(&layout.estimate(seed, mode), &fused)?;
            for a in &fused.agents {
                let tum: Vec<StampedPose> = a
                    .poses
                    .iter()
                    .map(|(t, p)| StampedPose { timestamp: *t, pose: Se3Pose::new(*p.rotation(), p.position()) })
                    .collect();
                let path = layout.mode_dir(seed, mode).join(format!("agent_{}.tum", a.agent_id));
                write_atomic(&path, format_tum(&tum).as_bytes())?;
            }
            Ok(fused)
        })
        .collect()
}

/// Stage 3: metrics for every fused (seed, mode).
pub fn stage_evaluate(cfg: &ExperimentConfig, layout: &Layout) -> Result<Vec<MetricsReport>, ExperimentError> {
    let jobs: Vec<(u64, FusionMode)> =
        cfg.seeds.iter().flat_map(|&s| cfg.modes.iter().map(move |&m| (s, m))).collect();
    jobs.par_iter()
        .map(|&(seed, mode)| {
            let sim: Simulation = read_json(&layout.simulation(seed))?;
            let fused: FusionOutcome = read_json(&layout.estimate(seed, mode))?;
            let report = evaluate(cfg, &sim, &fused)?;
            write_metrics(layout, &report)?;
            Ok(report)
        })
        .collect()
}

fn write_metrics(layout: &Layout, r: &MetricsReport) -> Result<(), ExperimentError> {
    let dir = layout.mode_dir(r.seed, r.mode);
    write_json(&layout.metrics(r.seed, r.mode), r)?;
    let pos = csv_bytes(&["agent_id", "timestamp", "position_error_m", "scale_error"], |w| {
        for a in &r.agents {
            for i in 0..a.timestamps.len() {
                w.serialize((a.agent_id, a.timestamps[i], a.position_errors[i], a.scale_errors[i]))?;
            }
        }
        Ok(())
    });
    write_atomic(&dir.join("errors.csv"), &pos)?;
    let acc = csv_bytes(&["keyframes", "covor_bytes", "ccm_slam_ub", "ccm_slam_lb", "dslam"], |w| {
        for row in &r.accounting.series {
            w.serialize((row.keyframes, row.covor_bytes, row.ccm_slam_ub, row.ccm_slam_lb, row.dslam))?;
        }
        Ok(())
    });
    write_atomic(&dir.join("accounting.csv"), &acc)
}

fn availability_csv(rows: &[AvailabilityRow]) -> Vec<u8> {
    csv_bytes(
        &[
            "agent_id",
            "anchor_pct",
            "peers_at_least_1_pct",
            "peers_at_least_2_pct",
            "peers_at_least_3_pct",
            "peers_exactly_1_pct",
            "peers_exactly_2_pct",
            "peers_exactly_3_pct",
        ],
        |w| {
            for r in rows {
                let [l1, l2, l3] = r.peers_at_least;
                let [e1, e2, e3] = r.peers_exactly;
                w.serialize((r.agent_id, r.anchor, l1, l2, l3, e1, e2, e3))?;
            }
            Ok(())
        },
    )
}

/// Stage 4: aggregate metrics over seeds and draw the plots.
pub fn stage_report(cfg: &ExperimentConfig, layout: &Layout) -> Result<ExperimentSummary, ExperimentError> {
    let mut reports = Vec::new();
    for &seed in &cfg.seeds {
        for &mode in &cfg.modes {
            reports.push(read_json::<MetricsReport>(&layout.metrics(seed, mode))?);
        }
    }
    let summary = summarize(&reports);
    write_json(&layout.root.join("summary.json"), &summary)?;
    let table = csv_bytes(&["mode", "seed", "ate_rmse_m", "median_scale_error", "iterations"], |w| {
        for r in &reports {
            w.serialize((r.mode.name(), r.seed, r.ate_rmse, r.median_scale_error, r.solver.iterations))?;
        }
        Ok(())
    });
    write_atomic(&layout.root.join("summary.csv"), &table)?;

    for &seed in &cfg.seeds {
        let sim: Simulation = read_json(&layout.simulation(seed))?;
        let mut series = Vec::new();
        for &mode in &cfg.modes {
            let fused: FusionOutcome = read_json(&layout.estimate(seed, mode))?;
            let tracks: Vec<Vec<Vector3<f64>>> =
                fused.agents.iter().map(|a| a.poses.iter().map(|(_, p)| p.position()).collect()).collect();
            series.push((mode, tracks));
        }
        let svg = plot::trajectory_svg(&sim.scenario, &series);
        write_atomic(&layout.seed_dir(seed).join("trajectories.svg"), svg.as_bytes())?;
        if let Some(r) = reports.iter().find(|r| r.seed == seed && Some(&r.mode) == cfg.modes.last()) {
            write_atomic(&layout.seed_dir(seed).join("accounting.svg"), plot::accounting_svg(&r.accounting).as_bytes())?;
        }
    }
    Ok(summary)
}

/// Runs every stage and returns the metrics of each (seed, mode).
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(Vec<MetricsReport>, ExperimentSummary), ExperimentError> {
    let layout = Layout::new(&cfg.output_dir);
    stage_simulate(cfg, &layout)?;
    stage_fuse(cfg, &layout)?;
    let reports = stage_evaluate(cfg, &layout)?;
    let summary = stage_report(cfg, &layout)?;
    Ok((reports, summary))
}

/// Parallel in-memory evaluation of many seeds; no files are written.
pub fn run_seeds(
    cfg: &ExperimentConfig,
    scenario: &SwarmScenario,
) -> Result<Vec<MetricsReport>, ExperimentError> {
    let per_seed: Vec<Vec<MetricsReport>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| Ok(run_seed(cfg, scenario, seed)?.1.into_iter().map(|(_, r)| r).collect()))
        .collect::<Result<_, ExperimentError>>()?;
    Ok(per_seed.into_iter().flatten().collect())
}
