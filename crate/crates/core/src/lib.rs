//! Episodic grounding at desk scale: a closed-world household simulator, an
//! MCTS planner that collects positive/negative trajectories, toy
//! autoregressive policy models with exact gradients, ratio-based
//! weak-to-strong decoding, distillation and preference losses, layer-wise
//! probing, and the metrics used to evaluate all of it.
//!
//! Everything is deterministic given a seed: the simulator is pure, search
//! derives per-rollout RNG streams, and training shuffles with a fixed
//! stream, so two runs with the same configuration produce byte-identical
//! artifacts.

pub mod corpus;
pub mod fixtures;
pub mod mcts;
pub mod metrics;
pub mod pipeline;
pub mod policy;
pub mod probe;
pub mod qa;
pub mod rng;
pub mod tasks;
pub mod train;
pub mod transfer;
pub mod w2s;
pub mod world;

pub use corpus::{InstructionRecord, PreferenceRecord, TaskWeights};
pub use mcts::{SearchConfig, SearchResult, Trajectory, TrajectoryLabel};
pub use policy::{Capacity, PolicyModel, Role, TokenId, Vocabulary};
pub use probe::{ProbeConfig, ProbeExample};
pub use w2s::{CombinedDistribution, W2sConfig};
pub use world::{Action, GoalSpec, Predicate, RewardParams, ThemeMap, WorldState};
