//! Solvers and a simulator for two-player zero-sum pursuit-evasion games
//! (PEGs) on grid worlds.
//!
//! Two pipelines solve the same game:
//!
//! * the flat route ([`flat_solver`]) runs Shapley value iteration over the
//!   joint state space, solving one matrix game ([`matrix_game`]) per
//!   non-terminal state per sweep;
//! * the hierarchical route partitions each agent's individual state space
//!   into superstates ([`abstraction`]), builds navigation options between
//!   adjacent superstates ([`options`]), solves the restricted games where
//!   capture is possible ([`local_games`]), and lifts their Nash values into
//!   a small game over superstates whose actions are the options
//!   ([`aggregated_game`]).
//!
//! [`simulator`] executes seeded episodes that pit the resulting policies
//! against each other and aggregates capture-time statistics.

pub mod abstraction;
pub mod aggregated_game;
pub mod flat_solver;
pub mod gridworld;
pub mod local_games;
pub mod matrix_game;
pub mod options;
pub mod simulator;
