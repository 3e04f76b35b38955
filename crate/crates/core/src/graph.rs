//! Multi-agent factor graph assembly and map-point correction.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};

use log::warn;
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::measurements::{
    AgentId, AnchorId, AnchorRangeMsg, Factor, FactorKind, InterRangeMsg, KeyframeMsg,
    MeasurementError, OdometryEdge, PriorFactor,
};
use crate::sim3::{Sim3Error, Sim3Pose};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("agent {0} has no prior factor on its first keyframe")]
    MissingPrior(AgentId),
    #[error("agent {agent}: {reason}")]
    InvalidPrior { agent: AgentId, reason: String },
    #[error("agent {agent}: {reason}")]
    InvalidKeyframes { agent: AgentId, reason: String },
    #[error("odometry edge of agent {agent} ({t_i} -> {t_j}) does not join consecutive keyframes")]
    InvalidOdometry { agent: AgentId, t_i: f64, t_j: f64 },
    #[error("no keyframe for agent {agent} at t = {timestamp}")]
    UnknownKeyframe { agent: AgentId, timestamp: f64 },
    #[error("linear system is singular: {0}")]
    SingularSystem(String),
    #[error("cost is not finite")]
    NonFiniteCost,
    #[error(transparent)]
    Measurement(#[from] MeasurementError),
}

impl From<Sim3Error> for GraphError {
    fn from(e: Sim3Error) -> Self {
        GraphError::Measurement(MeasurementError::Lie(e))
    }
}

/// Identifies a keyframe variable. Ordered agent-major, time-minor.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NodeKey {
    pub agent_id: AgentId,
    pub timestamp: f64,
}

impl NodeKey {
    pub fn new(agent_id: AgentId, timestamp: f64) -> Self {
        Self { agent_id, timestamp }
    }
}

impl PartialEq for NodeKey {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for NodeKey {}

impl PartialOrd for NodeKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for NodeKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.agent_id
            .cmp(&other.agent_id)
            .then(self.timestamp.total_cmp(&other.timestamp))
    }
}

/// How range messages bind to keyframes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AssociationConfig {
    /// Maximum |t_range − t_keyframe| in seconds.
    pub tolerance: f64,
    /// Antenna offset in the camera frame; zero when pre-compensated.
    pub lever_arm: [f64; 3],
}

impl Default for AssociationConfig {
    fn default() -> Self {
        Self { tolerance: 0.05, lever_arm: [0.0; 3] }
    }
}

/// Everything exchanged during a mission, ready to be turned into a graph.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct GraphInput {
    pub keyframes: Vec<KeyframeMsg>,
    pub odometry: Vec<OdometryEdge>,
    pub inter_ranges: Vec<InterRangeMsg>,
    pub anchor_ranges: Vec<AnchorRangeMsg>,
    pub anchors: BTreeMap<AnchorId, [f64; 3]>,
    pub priors: Vec<PriorFactor>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildStats {
    pub dangling_inter: usize,
    pub dangling_anchor: usize,
    pub coincident_skipped: usize,
    /// Largest keyframe/range timestamp gap among bound range factors.
    pub max_association_gap: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactorCounts {
    pub prior: usize,
    pub odometry: usize,
    pub inter_range: usize,
    pub anchor_range: usize,
}

/// Unknown poses, the factors over them and the deterministic variable ordering.
#[derive(Debug, Clone)]
pub struct GraphState {
    keys: Vec<NodeKey>,
    index: BTreeMap<NodeKey, usize>,
    pub poses: Vec<Sim3Pose>,
    pub factors: Vec<Factor>,
    pub stats: BuildStats,
}

impl GraphState {
    /// Creates a graph directly from nodes and factors; `keys` are sorted
    /// into agent-major order and factor indices remapped accordingly.
    pub fn from_parts(
        nodes: Vec<(NodeKey, Sim3Pose)>,
        factors: Vec<Factor>,
    ) -> Result<Self, GraphError> {
        let mut order: Vec<usize> = (0..nodes.len()).collect();
        order.sort_by(|&a, &b| nodes[a].0.cmp(&nodes[b].0));
        let mut remap = vec![0; nodes.len()];
        for (new, &old) in order.iter().enumerate() {
            remap[old] = new;
        }
        let keys: Vec<NodeKey> = order.iter().map(|&i| nodes[i].0).collect();
        let poses = order.iter().map(|&i| nodes[i].1).collect();
        let mut index = BTreeMap::new();
        for (i, k) in keys.iter().enumerate() {
            if index.insert(*k, i).is_some() {
                return Err(GraphError::InvalidKeyframes {
                    agent: k.agent_id,
                    reason: format!("duplicate keyframe at t = {}", k.timestamp),
                });
            }
        }
        let factors = factors.into_iter().map(|f| remap_factor(f, &remap)).collect::<Vec<_>>();
        for f in &factors {
            for v in f.variables() {
                assert!(v < keys.len(), "factor references a missing variable");
            }
        }
        Ok(Self { keys, index, poses, factors, stats: BuildStats::default() })
    }

    pub fn keys(&self) -> &[NodeKey] {
        &self.keys
    }

    pub fn num_variables(&self) -> usize {
        self.keys.len()
    }

    pub fn index_of(&self, key: &NodeKey) -> Option<usize> {
        self.index.get(key).copied()
    }

    pub fn pose(&self, key: &NodeKey) -> Option<&Sim3Pose> {
        self.index_of(key).map(|i| &self.poses[i])
    }

    pub fn poses_by_key(&self) -> BTreeMap<NodeKey, Sim3Pose> {
        self.keys.iter().copied().zip(self.poses.iter().copied()).collect()
    }

    pub fn agents(&self) -> Vec<AgentId> {
        let mut agents: Vec<AgentId> = self.keys.iter().map(|k| k.agent_id).collect();
        agents.dedup();
        agents
    }

    /// Keys and poses of one agent in time order.
    pub fn trajectory(&self, agent: AgentId) -> Vec<(NodeKey, Sim3Pose)> {
        self.keys
            .iter()
            .zip(&self.poses)
            .filter(|(k, _)| k.agent_id == agent)
            .map(|(k, p)| (*k, *p))
            .collect()
    }

    pub fn factor_counts(&self) -> FactorCounts {
        let mut c = FactorCounts::default();
        for f in &self.factors {
            match f.kind() {
                FactorKind::Prior => c.prior += 1,
                FactorKind::Odometry => c.odometry += 1,
                FactorKind::InterRange => c.inter_range += 1,
                FactorKind::AnchorRange => c.anchor_range += 1,
            }
        }
        c
    }

    /// Sum of `rᵀWr` over all factors.
    pub fn total_cost(&self) -> Result<f64, GraphError> {
        total_cost(&self.factors, &self.poses)
    }
}

pub(crate) fn total_cost(factors: &[Factor], poses: &[Sim3Pose]) -> Result<f64, GraphError> {
    let mut sum = 0.0;
    for f in factors {
        sum += f.cost(poses)?;
    }
    Ok(sum)
}

fn remap_factor(f: Factor, remap: &[usize]) -> Factor {
    match f {
        Factor::Prior { var, prior, information } => {
            Factor::Prior { var: remap[var], prior, information }
        }
        Factor::Odometry { from, to, measurement, information } => Factor::Odometry {
            from: remap[from],
            to: remap[to],
            measurement,
            information,
        },
        Factor::InterRange { a, b, range, information, lever_arm } => Factor::InterRange {
            a: remap[a],
            b: remap[b],
            range,
            information,
            lever_arm,
        },
        Factor::AnchorRange { var, anchor, range, information, lever_arm } => Factor::AnchorRange {
            var: remap[var],
            anchor,
            range,
            information,
            lever_arm,
        },
    }
}

/// Per-agent sorted keyframe timestamps with their variable indices.
struct KeyframeIndex {
    per_agent: HashMap<AgentId, Vec<(f64, usize)>>,
}

impl KeyframeIndex {
    fn nearest(&self, agent: AgentId, t: f64) -> Option<(usize, f64)> {
        let list = self.per_agent.get(&agent)?;
        let pos = list.partition_point(|(kt, _)| *kt < t);
        let mut best: Option<(usize, f64)> = None;
        for i in [pos.wrapping_sub(1), pos] {
            if let Some(&(kt, var)) = list.get(i) {
                let gap = (kt - t).abs();
                if best.is_none_or(|(_, g)| gap < g) {
                    best = Some((var, gap));
                }
            }
        }
        best
    }

    fn exact(&self, agent: AgentId, t: f64) -> Option<usize> {
        let list = self.per_agent.get(&agent)?;
        list.iter().find(|(kt, _)| *kt == t).map(|(_, v)| *v)
    }

    fn position(&self, agent: AgentId, var: usize) -> Option<usize> {
        self.per_agent.get(&agent)?.iter().position(|(_, v)| *v == var)
    }
}

/// Assembles the factor graph: one node per keyframe, one odometry factor per
/// consecutive keyframe pair, one prior per agent, and range factors bound to
/// the nearest keyframes within the association tolerance.
pub fn build_graph(input: &GraphInput, assoc: &AssociationConfig) -> Result<GraphState, GraphError> {
    let mut nodes: Vec<(NodeKey, Sim3Pose)> = input
        .keyframes
        .iter()
        .map(|k| (NodeKey::new(k.agent_id, k.timestamp), k.pose))
        .collect();
    nodes.sort_by(|a, b| a.0.cmp(&b.0));
    for w in nodes.windows(2) {
        if w[0].0.agent_id == w[1].0.agent_id && !(w[0].0.timestamp < w[1].0.timestamp) {
            return Err(GraphError::InvalidKeyframes {
                agent: w[0].0.agent_id,
                reason: format!("timestamps not strictly increasing at t = {}", w[1].0.timestamp),
            });
        }
    }

    let mut per_agent: HashMap<AgentId, Vec<(f64, usize)>> = HashMap::new();
    for (i, (k, _)) in nodes.iter().enumerate() {
        per_agent.entry(k.agent_id).or_default().push((k.timestamp, i));
    }
    let kf = KeyframeIndex { per_agent };
    let lever_arm = Vector3::from(assoc.lever_arm);
    let mut factors = Vec::new();
    let mut stats = BuildStats::default();

    let mut prior_seen: HashMap<AgentId, usize> = HashMap::new();
    for p in &input.priors {
        let var = kf.exact(p.agent_id, p.timestamp).ok_or(GraphError::UnknownKeyframe {
            agent: p.agent_id,
            timestamp: p.timestamp,
        })?;
        if kf.position(p.agent_id, var) != Some(0) {
            return Err(GraphError::InvalidPrior {
                agent: p.agent_id,
                reason: "prior must sit on the agent's first keyframe".into(),
            });
        }
        if prior_seen.insert(p.agent_id, var).is_some() {
            return Err(GraphError::InvalidPrior {
                agent: p.agent_id,
                reason: "more than one prior factor".into(),
            });
        }
        factors.push(Factor::Prior { var, prior: p.prior_pose, information: p.information });
    }
    let mut agents: Vec<AgentId> = kf.per_agent.keys().copied().collect();
    agents.sort_unstable();
    for a in &agents {
        if !prior_seen.contains_key(a) {
            return Err(GraphError::MissingPrior(*a));
        }
    }

    for e in &input.odometry {
        let bad = || GraphError::InvalidOdometry { agent: e.agent_id, t_i: e.timestamp_i, t_j: e.timestamp_j };
        let from = kf.exact(e.agent_id, e.timestamp_i).ok_or_else(bad)?;
        let to = kf.exact(e.agent_id, e.timestamp_j).ok_or_else(bad)?;
        let (pi, pj) = (kf.position(e.agent_id, from), kf.position(e.agent_id, to));
        if pj != pi.map(|p| p + 1) {
            return Err(bad());
        }
        factors.push(Factor::Odometry {
            from,
            to,
            measurement: e.relative_pose,
            information: e.information,
        });
    }

    for m in &input.inter_ranges {
        let bound = (kf.nearest(m.agent_a, m.timestamp), kf.nearest(m.agent_b, m.timestamp));
        match bound {
            (Some((a, ga)), Some((b, gb))) if ga <= assoc.tolerance && gb <= assoc.tolerance => {
                let dist = (nodes[a].1.transform_point(&lever_arm) - nodes[b].1.transform_point(&lever_arm)).norm();
                if dist < crate::measurements::MIN_RANGE_DISTANCE {
                    warn!("skipping inter-agent range at t = {}: coincident positions", m.timestamp);
                    stats.coincident_skipped += 1;
                    continue;
                }
                stats.max_association_gap = stats.max_association_gap.max(ga).max(gb);
                factors.push(Factor::InterRange {
                    a,
                    b,
                    range: m.range,
                    information: 1.0 / m.variance,
                    lever_arm,
                });
            }
            _ => stats.dangling_inter += 1,
        }
    }

    for m in &input.anchor_ranges {
        let Some(anchor) = input.anchors.get(&m.anchor_id).map(|a| Vector3::from(*a)) else {
            stats.dangling_anchor += 1;
            continue;
        };
        match kf.nearest(m.agent_id, m.timestamp) {
            Some((var, gap)) if gap <= assoc.tolerance => {
                let dist = (nodes[var].1.transform_point(&lever_arm) - anchor).norm();
                if dist < crate::measurements::MIN_RANGE_DISTANCE {
                    warn!("skipping anchor range at t = {}: coincident positions", m.timestamp);
                    stats.coincident_skipped += 1;
                    continue;
                }
                stats.max_association_gap = stats.max_association_gap.max(gap);
                factors.push(Factor::AnchorRange {
                    var,
                    anchor,
                    range: m.range,
                    information: 1.0 / m.variance,
                    lever_arm,
                });
            }
            _ => stats.dangling_anchor += 1,
        }
    }
    if stats.dangling_inter + stats.dangling_anchor > 0 {
        warn!(
            "dropped {} inter-agent and {} anchor ranges with no keyframe within {} s",
            stats.dangling_inter, stats.dangling_anchor, assoc.tolerance
        );
    }

    let mut state = GraphState::from_parts(nodes, Vec::new())?;
    state.factors = factors;
    state.stats = stats;
    Ok(state)
}

/// Moves map points with the correction of their anchoring keyframe:
/// `p ← (after · before⁻¹) p`.
pub fn update_map_points(
    points: &[(NodeKey, Vector3<f64>)],
    before: &BTreeMap<NodeKey, Sim3Pose>,
    after: &BTreeMap<NodeKey, Sim3Pose>,
) -> Result<Vec<(NodeKey, Vector3<f64>)>, GraphError> {
    points
        .iter()
        .map(|(key, p)| {
            let unknown = || GraphError::UnknownKeyframe { agent: key.agent_id, timestamp: key.timestamp };
            let b = before.get(key).ok_or_else(unknown)?;
            let a = after.get(key).ok_or_else(unknown)?;
            Ok((*key, a.between(b).transform_point(p)))
        })
        .collect()
}
