//! Multi-agent scenarios built from a single trajectory: splitting, drifting
//! odometry, UWB-style ranging and connectivity statistics.
//!
//! Randomness is drawn from ChaCha streams keyed by `(seed, stream id)`, one
//! stream per agent or radio link, so every stream can be regenerated on its
//! own and the output does not depend on generation order.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::measurements::{
    AgentId, AnchorId, AnchorRangeMsg, InterRangeMsg, MeasurementError, OdometryEdge, PriorFactor,
};
use crate::sim3::{lift_se3, Matrix7, Se3Pose, Sim3Pose, Twist7, Vector7};
use crate::trajectory::StampedPose;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SwarmError {
    #[error("need at least {needed} poses to form {agents} agents, got {got}")]
    TooFewPoses { needed: usize, got: usize, agents: usize },
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error(transparent)]
    Measurement(#[from] MeasurementError),
}

/// Ground-truth keyframe of one agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrueKeyframe {
    pub timestamp: f64,
    pub pose: Se3Pose,
    /// True Sim(3) scale of the keyframe state (1 for metric ground truth).
    pub scale: f64,
}

impl TrueKeyframe {
    pub fn sim3(&self) -> Sim3Pose {
        lift_se3(&self.pose, self.scale).expect("true scale is positive")
    }

    pub fn position(&self) -> Vector3<f64> {
        self.sim3().position()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTrack {
    pub agent_id: AgentId,
    pub keyframes: Vec<TrueKeyframe>,
    /// Path length attributed to this agent: from its first pose to the first
    /// pose of the next segment (or its own last pose for the final agent).
    pub path_length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwarmScenario {
    pub agents: Vec<AgentTrack>,
    pub anchors: BTreeMap<AnchorId, [f64; 3]>,
    /// Links longer than this produce no measurement.
    pub max_range: f64,
    /// Largest keyframe time gap for pairing two agents in one ranging epoch.
    pub association_tolerance: f64,
}

impl SwarmScenario {
    pub fn validate(&self) -> Result<(), SwarmError> {
        if !(self.max_range > 0.0) {
            return Err(SwarmError::InvalidScenario("max_range must be positive".into()));
        }
        for a in &self.agents {
            if a.keyframes.is_empty() {
                return Err(SwarmError::InvalidScenario(format!("agent {} has no keyframes", a.agent_id)));
            }
            for w in a.keyframes.windows(2) {
                if !(w[1].timestamp > w[0].timestamp) {
                    return Err(SwarmError::InvalidScenario(format!(
                        "agent {} timestamps not strictly increasing",
                        a.agent_id
                    )));
                }
            }
        }
        Ok(())
    }

    /// Keeps every `stride`-th keyframe of each agent (always the first).
    pub fn subsample(&self, stride: usize) -> SwarmScenario {
        let stride = stride.max(1);
        let agents = self
            .agents
            .iter()
            .map(|a| AgentTrack {
                keyframes: a.keyframes.iter().step_by(stride).copied().collect(),
                ..a.clone()
            })
            .collect();
        SwarmScenario { agents, ..self.clone() }
    }

    pub fn agent(&self, id: AgentId) -> Option<&AgentTrack> {
        self.agents.iter().find(|a| a.agent_id == id)
    }

    pub fn num_keyframes(&self) -> usize {
        self.agents.iter().map(|a| a.keyframes.len()).sum()
    }
}

fn cumulative_length(traj: &[StampedPose]) -> Vec<f64> {
    let mut cum = Vec::with_capacity(traj.len());
    let mut acc = 0.0;
    for (i, p) in traj.iter().enumerate() {
        if i > 0 {
            acc += (p.pose.translation - traj[i - 1].pose.translation).norm();
        }
        cum.push(acc);
    }
    cum
}

/// Splits one trajectory into `k` contiguous segments of (near-)equal path
/// length. Segment `i` starts at the first pose whose cumulative length
/// reaches `i·L/k`. Each agent's clock is re-based to start at zero so the
/// agents travel simultaneously.
pub fn split_swarm(traj: &[StampedPose], k: usize) -> Result<SwarmScenario, SwarmError> {
    if k == 0 || traj.len() < k {
        return Err(SwarmError::TooFewPoses { needed: k.max(1), got: traj.len(), agents: k });
    }
    let cum = cumulative_length(traj);
    let total = *cum.last().unwrap();
    let mut bounds = vec![0usize];
    for i in 1..k {
        let target = total * i as f64 / k as f64;
        let b = cum.partition_point(|&c| c < target);
        bounds.push(b.max(bounds[i - 1] + 1));
    }
    bounds.push(traj.len());
    if bounds.windows(2).any(|w| w[1] <= w[0]) {
        return Err(SwarmError::TooFewPoses { needed: k, got: traj.len(), agents: k });
    }
    let agents = (0..k)
        .map(|i| {
            let (lo, hi) = (bounds[i], bounds[i + 1]);
            let t0 = traj[lo].timestamp;
            let end = if i + 1 == k { hi - 1 } else { hi };
            AgentTrack {
                agent_id: i as AgentId,
                keyframes: traj[lo..hi]
                    .iter()
                    .map(|p| TrueKeyframe { timestamp: p.timestamp - t0, pose: p.pose, scale: 1.0 })
                    .collect(),
                path_length: cum[end] - cum[lo],
            }
        })
        .collect();
    Ok(SwarmScenario {
        agents,
        anchors: BTreeMap::new(),
        max_range: 200.0,
        association_tolerance: 0.05,
    })
}

/// Stream identifiers for the seed-keyed generators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamId {
    Odometry(AgentId),
    Prior(AgentId),
    InterLink(AgentId, AgentId),
    AnchorLink(AgentId, AnchorId),
}

impl StreamId {
    fn to_u64(self) -> u64 {
        match self {
            StreamId::Odometry(a) => (1 << 40) | a as u64,
            StreamId::Prior(a) => (2 << 40) | a as u64,
            StreamId::InterLink(a, b) => (3 << 40) | ((a as u64) << 16) | b as u64,
            StreamId::AnchorLink(a, x) => (4 << 40) | ((a as u64) << 16) | x as u64,
        }
    }
}

/// Independent, replayable random stream for `(seed, id)`.
pub fn stream_rng(seed: u64, id: StreamId) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id.to_u64());
    rng
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OdometryMode {
    #[default]
    Monocular,
    Stereo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OdometryNoiseConfig {
    pub mode: OdometryMode,
    /// Per-axis rotation noise per edge (rad).
    pub rotation_sigma: [f64; 3],
    /// Translation noise per meter of edge length.
    pub translation_sigma: f64,
    /// Log-scale random-walk increment per edge (monocular only).
    pub scale_drift_sigma: f64,
    /// Lower bound on each standard deviation used for the information matrix.
    pub min_sigma: f64,
}

impl Default for OdometryNoiseConfig {
    fn default() -> Self {
        Self {
            mode: OdometryMode::Monocular,
            rotation_sigma: [1e-3, 1e-3, 1e-3],
            translation_sigma: 0.02,
            scale_drift_sigma: 0.01,
            min_sigma: 1e-4,
        }
    }
}

impl OdometryNoiseConfig {
    pub fn zero() -> Self {
        Self { rotation_sigma: [0.0; 3], translation_sigma: 0.0, scale_drift_sigma: 0.0, ..Self::default() }
    }

    fn scale_sigma(&self) -> f64 {
        match self.mode {
            OdometryMode::Monocular => self.scale_drift_sigma,
            OdometryMode::Stereo => 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let all = self
            .rotation_sigma
            .iter()
            .chain([&self.translation_sigma, &self.scale_drift_sigma]);
        if all.clone().any(|s| !(*s >= 0.0)) {
            return Err("odometry noise standard deviations must be non-negative".into());
        }
        if !(self.min_sigma > 0.0) {
            return Err("odometry.min_sigma must be positive".into());
        }
        Ok(())
    }
}

/// Information matrix of a twist whose local-frame covariance is
/// `diag(sigmas²)` and which is expressed in the global frame through `Ad_frame`.
fn conjugated_information(frame: &Sim3Pose, sigmas: &Vector7, floor: f64) -> Matrix7 {
    let inv_var = Matrix7::from_diagonal(&sigmas.map(|s| 1.0 / s.max(floor).powi(2)));
    let ad_inv = frame.inverse().adjoint();
    let w = ad_inv.transpose() * inv_var * ad_inv;
    (w + w.transpose()) * 0.5
}

/// Noisy relative motions `Z = exp(ξ_G) · S_j S_i⁻¹` for every consecutive
/// keyframe pair. The noise is sampled in the agent's own navigation frame
/// (its first true pose) and carried to the global frame by the adjoint, so
/// scale drift acts about the agent's starting point.
pub fn generate_odometry(
    scenario: &SwarmScenario,
    cfg: &OdometryNoiseConfig,
    seed: u64,
) -> Result<Vec<Vec<OdometryEdge>>, SwarmError> {
    scenario
        .agents
        .iter()
        .map(|agent| {
            let mut rng = stream_rng(seed, StreamId::Odometry(agent.agent_id));
            let frame = agent.keyframes[0].sim3();
            let ad = frame.adjoint();
            agent
                .keyframes
                .windows(2)
                .map(|w| {
                    let (si, sj) = (w[0].sim3(), w[1].sim3());
                    let length = (sj.position() - si.position()).norm();
                    let sigmas = Vector7::from_column_slice(&[
                        cfg.rotation_sigma[0],
                        cfg.rotation_sigma[1],
                        cfg.rotation_sigma[2],
                        cfg.translation_sigma * length,
                        cfg.translation_sigma * length,
                        cfg.translation_sigma * length,
                        cfg.scale_sigma(),
                    ]);
                    let local = Vector7::from_fn(|i, _| normal(&mut rng) * sigmas[i]);
                    let noise = Sim3Pose::exp(&Twist7(ad * local));
                    let z = noise.compose(&sj.between(&si));
                    let info = conjugated_information(&frame, &sigmas, cfg.min_sigma);
                    Ok(OdometryEdge::new(agent.agent_id, w[0].timestamp, w[1].timestamp, z, info)?)
                })
                .collect()
        })
        .collect()
}

/// Chains relative motions from a starting pose: `S_j = Z_ij S_i`.
pub fn dead_reckon(start: Sim3Pose, edges: &[OdometryEdge]) -> Vec<Sim3Pose> {
    let mut out = vec![start];
    for e in edges {
        let next = e.relative_pose.compose(out.last().unwrap());
        out.push(next);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorConfig {
    /// Sigmas `(rotation rad, translation m, log-scale)` of the gauge prior on the first agent.
    pub anchor_sigma: [f64; 3],
    /// Sigmas of the frame-alignment prior on every other agent's first pose.
    pub alignment_sigma: [f64; 3],
    /// Sample the alignment error into the prior mean (otherwise the prior is exact).
    pub perturb: bool,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self { anchor_sigma: [1e-6, 1e-6, 1e-6], alignment_sigma: [0.005, 0.1, 0.005], perturb: true }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.anchor_sigma.iter().chain(&self.alignment_sigma).any(|s| !(*s > 0.0)) {
            return Err("prior sigmas must be positive".into());
        }
        Ok(())
    }
}

fn sigma7(s: &[f64; 3]) -> Vector7 {
    Vector7::from_column_slice(&[s[0], s[0], s[0], s[1], s[1], s[1], s[2]])
}

/// One prior per agent on its first keyframe. The first agent receives the
/// gauge prior, the others the alignment prior.
pub fn generate_priors(
    scenario: &SwarmScenario,
    cfg: &PriorConfig,
    seed: u64,
) -> Result<Vec<PriorFactor>, SwarmError> {
    scenario
        .agents
        .iter()
        .enumerate()
        .map(|(i, agent)| {
            let first = &agent.keyframes[0];
            let truth = first.sim3();
            let sigmas = sigma7(if i == 0 { &cfg.anchor_sigma } else { &cfg.alignment_sigma });
            let mut rng = stream_rng(seed, StreamId::Prior(agent.agent_id));
            let mean = if cfg.perturb && i > 0 {
                let xi = Vector7::from_fn(|k, _| normal(&mut rng) * sigmas[k]);
                truth.retract(&Twist7(xi))
            } else {
                truth
            };
            let info = conjugated_information(&mean, &sigmas, f64::MIN_POSITIVE);
            Ok(PriorFactor::new(agent.agent_id, first.timestamp, mean, info)?)
        })
        .collect()
}

/// Systematic ranging bias
/// `b = c + a₁cosθ₁ + a₂cos²θ₁ + b₁cosθ₂ + b₂cos²θ₂ + e₁d + e₂d²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BiasModel {
    pub constant: f64,
    pub cos1: [f64; 2],
    pub cos2: [f64; 2],
    pub distance: [f64; 2],
}

impl Default for BiasModel {
    /// Spans roughly −0.4 m … +0.4 m over 0–200 m links.
    fn default() -> Self {
        Self { constant: 0.1, cos1: [0.02, -0.25], cos2: [0.02, -0.25], distance: [2.5e-3, -5e-6] }
    }
}

impl BiasModel {
    pub fn zero() -> Self {
        Self { constant: 0.0, cos1: [0.0; 2], cos2: [0.0; 2], distance: [0.0; 2] }
    }

    pub fn evaluate(&self, cos1: f64, cos2: f64, d: f64) -> f64 {
        self.constant
            + self.cos1[0] * cos1
            + self.cos1[1] * cos1 * cos1
            + self.cos2[0] * cos2
            + self.cos2[1] * cos2 * cos2
            + self.distance[0] * d
            + self.distance[1] * d * d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RangingNoiseConfig {
    /// Zero-mean Gaussian noise (m).
    pub sigma_eta: f64,
    /// Multipath random-walk increment per emitted sample (m).
    pub multipath_step_sigma: f64,
    pub bias_enabled: bool,
    pub bias: BiasModel,
    /// Lower bound on the reported standard deviation (m).
    pub min_sigma: f64,
}

impl Default for RangingNoiseConfig {
    fn default() -> Self {
        Self {
            sigma_eta: 0.1,
            multipath_step_sigma: 0.0,
            bias_enabled: false,
            bias: BiasModel::default(),
            min_sigma: 1e-3,
        }
    }
}

impl RangingNoiseConfig {
    pub fn zero() -> Self {
        Self { sigma_eta: 0.0, multipath_step_sigma: 0.0, bias_enabled: false, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.sigma_eta >= 0.0) || !(self.multipath_step_sigma >= 0.0) {
            return Err("ranging noise standard deviations must be non-negative".into());
        }
        if !(self.min_sigma > 0.0) {
            return Err("ranging.min_sigma must be positive".into());
        }
        Ok(())
    }

    pub fn reported_variance(&self) -> f64 {
        self.sigma_eta.max(self.min_sigma).powi(2)
    }

    fn bias_at(&self, cos1: f64, cos2: f64, d: f64) -> f64 {
        if self.bias_enabled {
            self.bias.evaluate(cos1, cos2, d)
        } else {
            0.0
        }
    }
}

/// Cosines of the angles between the line of sight and each antenna's body
/// x-axis. `los` points from the first to the second antenna.
pub fn los_cosines(los: &Vector3<f64>, first: &Matrix3<f64>, second: &Matrix3<f64>) -> (f64, f64) {
    let u = los.normalize();
    (first.column(0).dot(&u), -second.column(0).dot(&u))
}

/// Per-link random state advanced once per emitted sample.
pub struct LinkNoise {
    rng: ChaCha8Rng,
    multipath: f64,
}

impl LinkNoise {
    pub fn new(seed: u64, id: StreamId) -> Self {
        Self { rng: stream_rng(seed, id), multipath: 0.0 }
    }

    /// Returns `(multipath bias, white noise)` for the next sample.
    pub fn next(&mut self, cfg: &RangingNoiseConfig) -> (f64, f64) {
        let eta = normal(&mut self.rng) * cfg.sigma_eta;
        self.multipath += normal(&mut self.rng) * cfg.multipath_step_sigma;
        (self.multipath, eta)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RangeStreams {
    pub inter: Vec<InterRangeMsg>,
    pub anchor: Vec<AnchorRangeMsg>,
}

fn nearest_keyframe(kfs: &[TrueKeyframe], t: f64) -> Option<(usize, f64)> {
    let pos = kfs.partition_point(|k| k.timestamp < t);
    [pos.wrapping_sub(1), pos]
        .into_iter()
        .filter_map(|i| kfs.get(i).map(|k| (i, (k.timestamp - t).abs())))
        .min_by(|a, b| a.1.total_cmp(&b.1))
}

/// One candidate measurement per keyframe epoch and link; links longer than
/// `max_range` emit nothing. Inter-agent epochs are the lower-id agent's
/// keyframes paired with the peer's nearest keyframe. Anchors are oriented
/// with the world axes.
pub fn generate_ranges(
    scenario: &SwarmScenario,
    cfg: &RangingNoiseConfig,
    seed: u64,
) -> Result<RangeStreams, SwarmError> {
    let variance = cfg.reported_variance();
    let mut out = RangeStreams::default();
    for (i, a) in scenario.agents.iter().enumerate() {
        for b in &scenario.agents[i + 1..] {
            let (lo, hi) = if a.agent_id < b.agent_id { (a, b) } else { (b, a) };
            let mut link = LinkNoise::new(seed, StreamId::InterLink(lo.agent_id, hi.agent_id));
            for ka in &lo.keyframes {
                let Some((j, gap)) = nearest_keyframe(&hi.keyframes, ka.timestamp) else { continue };
                if gap > scenario.association_tolerance {
                    continue;
                }
                let kb = &hi.keyframes[j];
                let los = kb.position() - ka.position();
                let d = los.norm();
                if d > scenario.max_range || d < crate::measurements::MIN_RANGE_DISTANCE {
                    continue;
                }
                let (c1, c2) = los_cosines(&los, ka.pose.rotation.matrix(), kb.pose.rotation.matrix());
                let (mp, eta) = link.next(cfg);
                let range = (d + cfg.bias_at(c1, c2, d) + mp + eta).max(0.0);
                out.inter.push(InterRangeMsg::new(lo.agent_id, hi.agent_id, ka.timestamp, range, variance)?);
            }
        }
    }
    for agent in &scenario.agents {
        for (&anchor_id, anchor) in &scenario.anchors {
            let anchor = Vector3::from(*anchor);
            let mut link = LinkNoise::new(seed, StreamId::AnchorLink(agent.agent_id, anchor_id));
            for k in &agent.keyframes {
                let los = anchor - k.position();
                let d = los.norm();
                if d > scenario.max_range || d < crate::measurements::MIN_RANGE_DISTANCE {
                    continue;
                }
                let (c1, c2) = los_cosines(&los, k.pose.rotation.matrix(), &Matrix3::identity());
                let (mp, eta) = link.next(cfg);
                let range = (d + cfg.bias_at(c1, c2, d) + mp + eta).max(0.0);
                out.anchor.push(AnchorRangeMsg::new(agent.agent_id, anchor_id, k.timestamp, range, variance)?);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvailabilityRow {
    pub agent_id: AgentId,
    /// Percent of traveling time with at least one anchor link.
    pub anchor: f64,
    /// Percent of traveling time with at least 1, 2, 3 peer links.
    pub peers_at_least: [f64; 3],
    /// Percent of traveling time with exactly 1, 2, 3 peer links.
    pub peers_exactly: [f64; 3],
}

/// Dwell time of each keyframe: the interval to the next one, the last
/// keyframe reusing the previous interval.
fn dwell_weights(kfs: &[TrueKeyframe]) -> Vec<f64> {
    let n = kfs.len();
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| {
            if i + 1 < n {
                kfs[i + 1].timestamp - kfs[i].timestamp
            } else {
                kfs[n - 1].timestamp - kfs[n - 2].timestamp
            }
        })
        .collect()
}

/// Connectivity of each agent over its keyframes, weighted by dwell time.
pub fn availability_stats(scenario: &SwarmScenario, ranges: &RangeStreams) -> Vec<AvailabilityRow> {
    let tol = scenario.association_tolerance;
    scenario
        .agents
        .iter()
        .map(|agent| {
            let n = agent.keyframes.len();
            let mut anchor = vec![false; n];
            let mut peers: Vec<Vec<AgentId>> = vec![Vec::new(); n];
            for m in ranges.anchor.iter().filter(|m| m.agent_id == agent.agent_id) {
                if let Some((i, gap)) = nearest_keyframe(&agent.keyframes, m.timestamp) {
                    if gap <= tol {
                        anchor[i] = true;
                    }
                }
            }
            for m in &ranges.inter {
                let peer = if m.agent_a == agent.agent_id {
                    m.agent_b
                } else if m.agent_b == agent.agent_id {
                    m.agent_a
                } else {
                    continue;
                };
                if let Some((i, gap)) = nearest_keyframe(&agent.keyframes, m.timestamp) {
                    if gap <= tol && !peers[i].contains(&peer) {
                        peers[i].push(peer);
                    }
                }
            }
            let w = dwell_weights(&agent.keyframes);
            let total: f64 = w.iter().sum();
            let pct = |pred: &dyn Fn(usize) -> bool| {
                100.0 * (0..n).filter(|&i| pred(i)).fold(0.0, |acc, i| acc + w[i]) / total
            };
            AvailabilityRow {
                agent_id: agent.agent_id,
                anchor: pct(&|i| anchor[i]),
                peers_at_least: [1, 2, 3].map(|c| pct(&|i| peers[i].len() >= c)),
                peers_exactly: [1, 2, 3].map(|c| pct(&|i| peers[i].len() == c)),
            }
        })
        .collect()
}

/// Smooth closed test course (meters), one pose every `spacing` seconds at
/// roughly 8 m/s, heading along the direction of travel.
pub fn synthetic_trajectory(num_poses: usize, spacing: f64) -> Vec<StampedPose> {
    let speed = 8.0;
    let position = |t: f64| {
        let u = t * speed / 400.0;
        Vector3::new(
            300.0 * (u).sin() + 40.0 * (3.0 * u).sin(),
            200.0 * (2.0 * u).sin() * 0.5 + 120.0 * (1.0 - u.cos()),
            3.0 * (5.0 * u).sin(),
        )
    };
    (0..num_poses)
        .map(|i| {
            let t = i as f64 * spacing;
            let p = position(t);
            let fwd = (position(t + 0.01) - position(t - 0.01)).normalize();
            let up = Vector3::z();
            let left = up.cross(&fwd).normalize();
            let up = fwd.cross(&left);
            // body x-axis along travel, z up
            let r = Matrix3::from_columns(&[fwd, left, up]);
            StampedPose {
                timestamp: t,
                pose: Se3Pose::new(nalgebra::Rotation3::from_matrix_unchecked(r), p),
            }
        })
        .collect()
}
