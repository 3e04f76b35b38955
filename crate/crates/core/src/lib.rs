pub mod sim3;
pub mod measurements;
pub mod graph;
pub mod solver;
pub mod trajectory;
pub mod swarm;
pub mod comms;
pub mod metrics;
pub mod plot;
pub mod experiment;
