//! Damped normal equations and Levenberg–Marquardt over Sim(3) poses.
//!
//! The system `(H + dI) Δ = −b` is assembled in the graph's agent-major
//! variable order. The sparse backend factorizes it after a deterministic
//! time-interleaved permutation, which keeps the factor banded when agents
//! range to each other at similar mission times.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector, SMatrix};
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::graph::{total_cost, GraphError, GraphState};
use crate::measurements::{Factor, FactorKind, Linearized};
use crate::sim3::{Sim3Pose, Twist7, Vector7};

type Block = SMatrix<f64, 7, 7>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub initial_damping: f64,
    pub damping_increase: f64,
    pub damping_decrease: f64,
    /// Damping beyond which the solve gives up.
    pub max_damping: f64,
    pub max_iterations: usize,
    /// Stop when `(cost − new_cost) / cost` falls below this.
    pub relative_cost_tolerance: f64,
    /// Stop when the accepted step norm falls below this.
    pub update_norm_tolerance: f64,
    /// Largest allowed per-pose rotation/log-scale step norm.
    pub step_norm_cap: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            initial_damping: 1e-4,
            damping_increase: 10.0,
            damping_decrease: 10.0,
            max_damping: 1e12,
            max_iterations: 100,
            relative_cost_tolerance: 1e-9,
            update_norm_tolerance: 1e-10,
            step_norm_cap: 1.0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("initial_damping", self.initial_damping),
            ("damping_increase", self.damping_increase),
            ("damping_decrease", self.damping_decrease),
            ("max_damping", self.max_damping),
            ("relative_cost_tolerance", self.relative_cost_tolerance),
            ("update_norm_tolerance", self.update_norm_tolerance),
            ("step_norm_cap", self.step_norm_cap),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(format!("solver.{name} must be positive, got {v}"));
            }
        }
        if self.max_iterations == 0 {
            return Err("solver.max_iterations must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    ZeroCost,
    RelativeCostDecrease,
    SmallUpdate,
    MaxIterations,
    /// Damping grew past `max_damping` without finding a decreasing step.
    DampingLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    /// Initial cost followed by the cost after each accepted step.
    pub cost_history: Vec<f64>,
    pub final_gradient_norm: f64,
    pub final_damping: f64,
    pub termination: Termination,
}

impl SolveReport {
    pub fn initial_cost(&self) -> f64 {
        self.cost_history[0]
    }

    pub fn final_cost(&self) -> f64 {
        *self.cost_history.last().unwrap()
    }
}

/// Gauss–Newton system of one linearization.
#[derive(Debug, Clone)]
pub struct NormalEquations {
    /// Nonzero 7×7 blocks `(row, col) → block`, both triangles stored.
    pub blocks: BTreeMap<(usize, usize), Block>,
    pub b: DVector<f64>,
    pub num_variables: usize,
}

impl NormalEquations {
    pub fn dim(&self) -> usize {
        7 * self.num_variables
    }

    pub fn to_csc(&self) -> CscMatrix<f64> {
        let n = self.dim();
        let mut coo = CooMatrix::new(n, n);
        for (&(r, c), blk) in &self.blocks {
            for j in 0..7 {
                for i in 0..7 {
                    coo.push(7 * r + i, 7 * c + j, blk[(i, j)]);
                }
            }
        }
        CscMatrix::from(&coo)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut h = DMatrix::zeros(n, n);
        for (&(r, c), blk) in &self.blocks {
            h.view_mut((7 * r, 7 * c), (7, 7)).copy_from(blk);
        }
        h
    }

    /// Block coordinates of the nonzero pattern.
    pub fn block_pattern(&self) -> BTreeSet<(usize, usize)> {
        self.blocks.keys().copied().collect()
    }
}

fn linearize_all(
    factors: &[Factor],
    poses: &[Sim3Pose],
) -> Result<Vec<Linearized>, GraphError> {
    factors
        .par_iter()
        .map(|f| f.linearize(poses).map_err(GraphError::from))
        .collect()
}

/// Builds `H = Σ JᵀWJ` and `b = Σ JᵀW r` over all factors.
pub fn linearize(state: &GraphState) -> Result<NormalEquations, GraphError> {
    let lins = linearize_all(&state.factors, &state.poses)?;
    let n = state.num_variables();
    let mut blocks: BTreeMap<(usize, usize), Block> = BTreeMap::new();
    let mut b = DVector::zeros(7 * n);
    for lin in &lins {
        let wr = &lin.information * &lin.residual;
        for (vi, ji) in &lin.blocks {
            let jtw = ji.transpose() * &lin.information;
            let gi = ji.transpose() * &wr;
            let mut seg = b.rows_mut(7 * vi, 7);
            seg += gi;
            for (vj, jj) in &lin.blocks {
                let prod = &jtw * jj;
                let blk = blocks.entry((*vi, *vj)).or_insert_with(Block::zeros);
                *blk += Block::from_column_slice(prod.as_slice());
            }
        }
    }
    Ok(NormalEquations { blocks, b, num_variables: n })
}

/// Linear algebra used inside the LM loop.
pub trait LinearBackend {
    type System;
    fn assemble(&self, state: &GraphState) -> Result<(Self::System, DVector<f64>), GraphError>;
    /// Solves `(H + dI) Δ = −b`; `None` when the factorization fails.
    fn solve(&self, system: &Self::System, b: &DVector<f64>, damping: f64) -> Option<DVector<f64>>;
}

/// Sparse Cholesky on the time-interleaved permutation of `H`.
#[derive(Debug, Clone, Copy, Default)]
pub struct SparseBackend;

pub struct SparseSystem {
    /// Permuted `H` with an explicit diagonal so damping never changes the pattern.
    h: CscMatrix<f64>,
    diag_positions: Vec<usize>,
    /// `perm[new] = old` at scalar granularity.
    perm: Vec<usize>,
}

/// Variables sorted by `(timestamp, agent)`; ties keep agent-major order.
pub fn interleaved_ordering(state: &GraphState) -> Vec<usize> {
    let keys = state.keys();
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by(|&a, &b| {
        keys[a]
            .timestamp
            .total_cmp(&keys[b].timestamp)
            .then(keys[a].agent_id.cmp(&keys[b].agent_id))
    });
    order
}

impl LinearBackend for SparseBackend {
    type System = SparseSystem;

    fn assemble(&self, state: &GraphState) -> Result<(SparseSystem, DVector<f64>), GraphError> {
        let ne = linearize(state)?;
        let order = interleaved_ordering(state);
        let mut new_of = vec![0; order.len()];
        for (new, &old) in order.iter().enumerate() {
            new_of[old] = new;
        }
        let n = ne.dim();
        let mut coo = CooMatrix::new(n, n);
        for i in 0..n {
            coo.push(i, i, 0.0);
        }
        for (&(r, c), blk) in &ne.blocks {
            let (r, c) = (new_of[r], new_of[c]);
            for j in 0..7 {
                for i in 0..7 {
                    coo.push(7 * r + i, 7 * c + j, blk[(i, j)]);
                }
            }
        }
        let h = CscMatrix::from(&coo);
        let diag_positions = (0..n)
            .map(|i| {
                let col = h.col(i);
                let k = col.row_indices().binary_search(&i).expect("explicit diagonal");
                h.col_offsets()[i] + k
            })
            .collect();
        let perm = order.iter().flat_map(|&v| (0..7).map(move |k| 7 * v + k)).collect();
        Ok((SparseSystem { h, diag_positions, perm }, ne.b))
    }

    fn solve(&self, sys: &SparseSystem, b: &DVector<f64>, damping: f64) -> Option<DVector<f64>> {
        let mut values = sys.h.values().to_vec();
        for &p in &sys.diag_positions {
            values[p] += damping;
        }
        let damped = CscMatrix::try_from_pattern_and_values(sys.h.pattern().clone(), values).ok()?;
        let chol = CscCholesky::factor(&damped).ok()?;
        let rhs = DVector::from_iterator(sys.perm.len(), sys.perm.iter().map(|&old| -b[old]));
        let x = chol.solve(&rhs);
        let mut out = DVector::zeros(b.len());
        for (new, &old) in sys.perm.iter().enumerate() {
            out[old] = x[(new, 0)];
        }
        if out.iter().all(|v| v.is_finite()) {
            Some(out)
        } else {
            None
        }
    }
}

/// Dense reference: `H` accumulated as `Σ JᵀWJ` with full-width Jacobians and
/// solved by dense Cholesky. Only meant for small graphs.
#[derive(Debug, Clone, Copy, Default)]
pub struct DenseBackend;

impl LinearBackend for DenseBackend {
    type System = DMatrix<f64>;

    fn assemble(&self, state: &GraphState) -> Result<(DMatrix<f64>, DVector<f64>), GraphError> {
        let n = 7 * state.num_variables();
        let mut h = DMatrix::zeros(n, n);
        let mut b = DVector::zeros(n);
        for f in &state.factors {
            let lin = f.linearize(&state.poses)?;
            let mut j = DMatrix::zeros(lin.residual.len(), n);
            for (v, blk) in &lin.blocks {
                let mut view = j.view_mut((0, 7 * v), (blk.nrows(), 7));
                view += blk;
            }
            h += j.transpose() * &lin.information * &j;
            b += j.transpose() * &lin.information * &lin.residual;
        }
        Ok((h, b))
    }

    fn solve(&self, h: &DMatrix<f64>, b: &DVector<f64>, damping: f64) -> Option<DVector<f64>> {
        let damped = h + DMatrix::identity(h.nrows(), h.ncols()) * damping;
        let chol = damped.cholesky()?;
        let x = chol.solve(&(-b));
        x.iter().all(|v| v.is_finite()).then_some(x)
    }
}

/// Fails when some connected component of the graph has no prior factor.
pub fn check_gauge(state: &GraphState) -> Result<(), GraphError> {
    let n = state.num_variables();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for f in &state.factors {
        let vars = f.variables();
        for w in vars.windows(2) {
            let (a, b) = (find(&mut parent, w[0]), find(&mut parent, w[1]));
            parent[a] = b;
        }
    }
    let mut anchored = vec![false; n];
    for f in &state.factors {
        if f.kind() == FactorKind::Prior {
            for v in f.variables() {
                let r = find(&mut parent, v);
                anchored[r] = true;
            }
        }
    }
    for v in 0..n {
        let r = find(&mut parent, v);
        if !anchored[r] {
            let key = state.keys()[v];
            return Err(GraphError::SingularSystem(format!(
                "keyframe (agent {}, t = {}) is not connected to any prior",
                key.agent_id, key.timestamp
            )));
        }
    }
    Ok(())
}

/// Scales `delta` so that no per-pose `(ω, λ)` part exceeds `cap`. The
/// translational part has no branch cut and is left unbounded.
fn cap_step(delta: &mut DVector<f64>, cap: f64) {
    let worst = delta
        .as_slice()
        .chunks(7)
        .map(|c| (c[0] * c[0] + c[1] * c[1] + c[2] * c[2] + c[6] * c[6]).sqrt())
        .fold(0.0, f64::max);
    if worst > cap {
        *delta *= cap / worst;
    }
}

fn retract_all(poses: &[Sim3Pose], delta: &DVector<f64>) -> Vec<Sim3Pose> {
    poses
        .iter()
        .enumerate()
        .map(|(i, p)| p.retract(&Twist7(Vector7::from_column_slice(&delta.as_slice()[7 * i..7 * i + 7]))))
        .collect()
}

/// Levenberg–Marquardt with the sparse backend.
pub fn solve_lm(state: &GraphState, cfg: &SolverConfig) -> Result<(GraphState, SolveReport), GraphError> {
    solve_lm_with(state, cfg, &SparseBackend)
}

/// Levenberg–Marquardt with the dense reference backend.
pub fn solve_lm_dense(state: &GraphState, cfg: &SolverConfig) -> Result<(GraphState, SolveReport), GraphError> {
    solve_lm_with(state, cfg, &DenseBackend)
}

pub fn solve_lm_with<B: LinearBackend>(
    state: &GraphState,
    cfg: &SolverConfig,
    backend: &B,
) -> Result<(GraphState, SolveReport), GraphError> {
    check_gauge(state)?;
    let mut current = state.clone();
    let mut cost = current.total_cost()?;
    if !cost.is_finite() {
        return Err(GraphError::NonFiniteCost);
    }
    let mut damping = cfg.initial_damping;
    let mut report = SolveReport {
        iterations: 0,
        accepted_steps: 0,
        rejected_steps: 0,
        cost_history: vec![cost],
        final_gradient_norm: f64::NAN,
        final_damping: damping,
        termination: Termination::MaxIterations,
    };
    if cost == 0.0 {
        report.final_gradient_norm = 0.0;
        report.termination = Termination::ZeroCost;
        return Ok((current, report));
    }

    'outer: while report.iterations < cfg.max_iterations {
        report.iterations += 1;
        let (system, b) = backend.assemble(&current)?;
        report.final_gradient_norm = b.norm();
        loop {
            if damping > cfg.max_damping {
                report.termination = Termination::DampingLimit;
                break 'outer;
            }
            let Some(mut delta) = backend.solve(&system, &b, damping) else {
                report.rejected_steps += 1;
                damping *= cfg.damping_increase;
                continue;
            };
            cap_step(&mut delta, cfg.step_norm_cap);
            let candidate = retract_all(&current.poses, &delta);
            // steps that leave the principal branch count as rejections
            let new_cost = match total_cost(&current.factors, &candidate) {
                Ok(c) if c.is_finite() => c,
                _ => f64::INFINITY,
            };
            if new_cost < cost {
                let decrease = (cost - new_cost) / cost;
                current.poses = candidate;
                cost = new_cost;
                report.accepted_steps += 1;
                report.cost_history.push(cost);
                damping /= cfg.damping_decrease;
                if cost == 0.0 {
                    report.termination = Termination::ZeroCost;
                    break 'outer;
                }
                if decrease < cfg.relative_cost_tolerance {
                    report.termination = Termination::RelativeCostDecrease;
                    break 'outer;
                }
                if delta.norm() < cfg.update_norm_tolerance {
                    report.termination = Termination::SmallUpdate;
                    break 'outer;
                }
                break;
            }
            report.rejected_steps += 1;
            if delta.norm() < cfg.update_norm_tolerance {
                report.termination = Termination::SmallUpdate;
                break 'outer;
            }
            damping *= cfg.damping_increase;
        }
    }
    if report.accepted_steps == 0 && report.termination == Termination::DampingLimit {
        let (system, b) = backend.assemble(&current)?;
        if backend.solve(&system, &b, cfg.max_damping).is_none() {
            return Err(GraphError::SingularSystem(
                "factorization failed at maximum damping".into(),
            ));
        }
    }
    report.final_damping = damping;
    Ok((current, report))
}
