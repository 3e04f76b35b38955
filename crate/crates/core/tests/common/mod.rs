#![allow(dead_code)]

use covor::graph::{GraphState, NodeKey};
use covor::measurements::{Factor, FactorKind};
use covor::sim3::{so3_exp, Matrix7, Sim3Pose, Twist7, Vector7};
use nalgebra::{Matrix4, Vector3};
use rand::Rng;

pub fn kitti_path(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/kitti").join(name)
}

pub fn random_twist(rng: &mut impl Rng, max_norm: f64) -> Twist7 {
    let v = Vector7::from_fn(|_, _| rng.random_range(-1.0..1.0));
    Twist7(v.normalize() * rng.random_range(0.0..max_norm))
}

pub fn random_pose(rng: &mut impl Rng) -> Sim3Pose {
    let w = Vector3::from_fn(|_, _| rng.random_range(-1.5..1.5));
    let t = Vector3::from_fn(|_, _| rng.random_range(-10.0..10.0));
    Sim3Pose::new(so3_exp(&w), t, rng.random_range(0.3..3.0)).unwrap()
}

/// Random symmetric positive definite 7×7 matrix.
pub fn random_information(rng: &mut impl Rng) -> Matrix7 {
    let a = Matrix7::from_fn(|_, _| rng.random_range(-1.0..1.0));
    a * a.transpose() + Matrix7::identity() * 0.5
}

/// Truncated power series of a 4×4 matrix.
pub fn series_exp(a: &Matrix4<f64>, terms: usize) -> Matrix4<f64> {
    let mut sum = Matrix4::identity();
    let mut term = Matrix4::identity();
    for k in 1..terms {
        term = term * a / k as f64;
        sum += term;
    }
    sum
}

/// A random factor of the given kind over `poses` (two or more poses).
pub fn random_factor(rng: &mut impl Rng, kind: FactorKind, poses: &[Sim3Pose]) -> Factor {
    let lever = Vector3::from_fn(|_, _| rng.random_range(-0.5..0.5));
    match kind {
        FactorKind::Prior => Factor::Prior {
            var: 0,
            prior: poses[0].retract(&random_twist(rng, 0.5)),
            information: random_information(rng),
        },
        FactorKind::Odometry => Factor::Odometry {
            from: 0,
            to: 1,
            measurement: Sim3Pose::exp(&random_twist(rng, 0.3)).compose(&poses[1].between(&poses[0])),
            information: random_information(rng),
        },
        FactorKind::InterRange => Factor::InterRange {
            a: 0,
            b: 1,
            range: rng.random_range(0.0..30.0),
            information: rng.random_range(1.0..100.0),
            lever_arm: lever,
        },
        FactorKind::AnchorRange => Factor::AnchorRange {
            var: 0,
            anchor: Vector3::from_fn(|_, _| rng.random_range(-30.0..30.0)),
            range: rng.random_range(0.0..30.0),
            information: rng.random_range(1.0..100.0),
            lever_arm: lever,
        },
    }
}

/// Small random multi-agent graph: one chain per agent, one prior per chain,
/// a few inter-agent and anchor ranges, and a perturbed initial guess.
pub fn random_graph(rng: &mut impl Rng, max_nodes: usize) -> GraphState {
    let agents = rng.random_range(1..=3usize);
    let n = rng.random_range(agents.max(2)..=max_nodes);
    let mut truth = Vec::new();
    let mut keys = Vec::new();
    for i in 0..n {
        let agent = (i % agents) as u16;
        keys.push(NodeKey::new(agent, (i / agents) as f64));
        let w = Vector3::from_fn(|_, _| rng.random_range(-0.5..0.5));
        let t = Vector3::from_fn(|_, _| rng.random_range(-5.0..5.0));
        truth.push(Sim3Pose::new(so3_exp(&w), t, rng.random_range(0.8..1.2)).unwrap());
    }
    let mut factors = Vec::new();
    for a in 0..agents {
        let chain: Vec<usize> = (0..n).filter(|i| i % agents == a).collect();
        factors.push(Factor::Prior {
            var: chain[0],
            prior: truth[chain[0]].retract(&random_twist(rng, 0.05)),
            information: Matrix7::identity() * 100.0,
        });
        for w in chain.windows(2) {
            let z = truth[w[1]].between(&truth[w[0]]);
            factors.push(Factor::Odometry {
                from: w[0],
                to: w[1],
                measurement: Sim3Pose::exp(&random_twist(rng, 0.05)).compose(&z),
                information: Matrix7::identity() * 50.0,
            });
        }
    }
    for _ in 0..rng.random_range(1..=4) {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a != b && (truth[a].position() - truth[b].position()).norm() > 0.5 {
            factors.push(Factor::InterRange {
                a,
                b,
                range: (truth[a].position() - truth[b].position()).norm() + rng.random_range(-0.1..0.1),
                information: 25.0,
                lever_arm: Vector3::zeros(),
            });
        }
    }
    let anchor = Vector3::new(20.0, -10.0, 3.0);
    for _ in 0..rng.random_range(0..=3) {
        let v = rng.random_range(0..n);
        factors.push(Factor::AnchorRange {
            var: v,
            anchor,
            range: (truth[v].position() - anchor).norm() + rng.random_range(-0.1..0.1),
            information: 25.0,
            lever_arm: Vector3::zeros(),
        });
    }
    let nodes = keys
        .into_iter()
        .zip(&truth)
        .map(|(k, p)| (k, p.retract(&random_twist(rng, 0.3))))
        .collect();
    GraphState::from_parts(nodes, factors).unwrap()
}
