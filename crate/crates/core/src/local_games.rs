//! Restricted games over joint superstates that intersect the capture set:
//! the game's dynamics inside the superstate are the unrestricted joint
//! kernel, its joint periphery is absorbing, and its reward is the capture
//! reward restricted to the local states.

use std::collections::BTreeMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::abstraction::{joint_periphery, JointSuperstate, Partition, SuperstateTopology};
use crate::flat_solver::{shapley_solve, SolveError, SolveStats, StagePolicy, TableGame, ValueTable};
use crate::gridworld::{AgentRole, JointState, PegEnv};

#[derive(Debug, Error)]
pub enum LocalGameError {
    #[error("superstate ({0}, {1}) does not intersect the capture set")]
    NotTerminalSuperstate(usize, usize),
}

/// The restricted game at one joint superstate.
#[derive(Debug, Clone)]
pub struct LocalGame {
    pub superstate: JointSuperstate,
    /// Joint states: the superstate's own states (ascending joint index)
    /// followed by its joint periphery (ascending joint index).
    pub states: Vec<usize>,
    pub n_domain: usize,
    pub game: TableGame,
}

impl LocalGame {
    /// Local position of a joint state index, if it belongs to the game.
    pub fn position_of(&self, joint_index: usize) -> Option<usize> {
        match self.states[..self.n_domain].binary_search(&joint_index) {
            Ok(i) => Some(i),
            Err(_) => self.states[self.n_domain..]
                .binary_search(&joint_index)
                .ok()
                .map(|i| i + self.n_domain),
        }
    }

    /// Matrix games per value-iteration sweep: the non-terminal states.
    pub fn lp_per_iteration(&self) -> u64 {
        self.game.terminal.iter().filter(|&&t| !t).count() as u64
    }
}

/// Nash solution of one local game, carrying the game's state list so
/// values and policies can be addressed by joint state index.
#[derive(Debug, Clone)]
pub struct LocalSolution {
    pub superstate: JointSuperstate,
    /// Joint states: superstate states then periphery, each ascending.
    pub states: Vec<usize>,
    pub n_domain: usize,
    pub values: ValueTable,
    pub pursuer: StagePolicy,
    pub evader: StagePolicy,
    pub stats: SolveStats,
}

impl LocalSolution {
    /// Local position of a joint state index, if it belongs to the game.
    pub fn position_of(&self, joint_index: usize) -> Option<usize> {
        match self.states[..self.n_domain].binary_search(&joint_index) {
            Ok(i) => Some(i),
            Err(_) => self.states[self.n_domain..]
                .binary_search(&joint_index)
                .ok()
                .map(|i| i + self.n_domain),
        }
    }
}

/// Sizes of a local game, without materializing its kernel. Used for LP
/// accounting on worlds too large to solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LocalGameShape {
    pub superstate: (usize, usize),
    pub n_domain: usize,
    pub n_periphery: usize,
    pub n_capture: usize,
    pub lp_per_iteration: u64,
}

/// All joint superstates whose state set intersects the capture set. With a
/// thin-walled map and capture radius 1 this includes neighboring-room pairs
/// reachable through doors, not just same-room pairs.
pub fn enumerate_terminal_superstates(env: &PegEnv, partition: &Partition) -> Vec<JointSuperstate> {
    let mut out = std::collections::BTreeSet::new();
    for cell in 0..env.n_cells() {
        for other in env.capture_zone(cell) {
            out.insert(JointSuperstate {
                pursuer_room: partition.label(cell),
                evader_room: partition.label(other),
            });
        }
    }
    out.into_iter().collect()
}

/// Build the restricted game at `gamma`; errors unless `gamma` intersects
/// the capture set.
pub fn build_local_game(
    env: &PegEnv,
    partition: &Partition,
    topology: &SuperstateTopology,
    gamma: JointSuperstate,
) -> Result<LocalGame, LocalGameError> {
    let domain = domain_states(env, partition, gamma);
    if !domain
        .iter()
        .any(|&j| env.is_capture(env.joint_state(j)))
    {
        return Err(LocalGameError::NotTerminalSuperstate(
            gamma.pursuer_room,
            gamma.evader_room,
        ));
    }
    let periphery: Vec<usize> = joint_periphery(env, partition, topology, gamma)
        .into_iter()
        .map(|s| env.joint_index(s))
        .collect();

    let n_domain = domain.len();
    let mut states = domain;
    states.extend_from_slice(&periphery);
    let index: std::collections::HashMap<usize, usize> =
        states.iter().enumerate().map(|(i, &s)| (s, i)).collect();

    let a1 = env.actions(AgentRole::Pursuer).len();
    let a2 = env.actions(AgentRole::Evader).len();
    let mut terminal = Vec::with_capacity(states.len());
    let mut reward = Vec::with_capacity(states.len());
    for (i, &joint) in states.iter().enumerate() {
        let s = env.joint_state(joint);
        terminal.push(env.is_capture(s) || i >= n_domain);
        reward.push(env.reward(s));
    }

    let mut rows = vec![Vec::new(); states.len() * a1 * a2];
    for (i, &joint) in states.iter().enumerate().take(n_domain) {
        if terminal[i] {
            continue;
        }
        let s = env.joint_state(joint);
        for act1 in 0..a1 {
            for act2 in 0..a2 {
                let row: Vec<(usize, f64)> = env
                    .joint_transition(s, act1, act2)
                    .into_iter()
                    .map(|(t, p)| {
                        let t_index = env.joint_index(t);
                        (
                            *index
                                .get(&t_index)
                                .expect("one-step target escaped the local state space"),
                            p,
                        )
                    })
                    .collect();
                rows[(i * a1 + act1) * a2 + act2] = row;
            }
        }
    }

    Ok(LocalGame {
        superstate: gamma,
        states,
        n_domain,
        game: TableGame {
            n_actions1: a1,
            n_actions2: a2,
            rows,
            reward,
            terminal,
            discount: env.discount(),
        },
    })
}

fn domain_states(env: &PegEnv, partition: &Partition, gamma: JointSuperstate) -> Vec<usize> {
    let mut out = Vec::new();
    for &s1 in partition.cells_of(gamma.pursuer_room) {
        for &s2 in partition.cells_of(gamma.evader_room) {
            out.push(env.joint_index(JointState {
                pursuer: s1,
                evader: s2,
            }));
        }
    }
    out.sort_unstable();
    out
}

/// Shape-only accounting for one local game.
pub fn local_game_shape(
    env: &PegEnv,
    partition: &Partition,
    topology: &SuperstateTopology,
    gamma: JointSuperstate,
) -> Result<LocalGameShape, LocalGameError> {
    let mut n_capture = 0usize;
    for &s1 in partition.cells_of(gamma.pursuer_room) {
        for &s2 in partition.cells_of(gamma.evader_room) {
            if env.is_capture(JointState {
                pursuer: s1,
                evader: s2,
            }) {
                n_capture += 1;
            }
        }
    }
    if n_capture == 0 {
        return Err(LocalGameError::NotTerminalSuperstate(
            gamma.pursuer_room,
            gamma.evader_room,
        ));
    }
    let n_domain =
        partition.cells_of(gamma.pursuer_room).len() * partition.cells_of(gamma.evader_room).len();
    let n_periphery = joint_periphery(env, partition, topology, gamma).len();
    Ok(LocalGameShape {
        superstate: (gamma.pursuer_room, gamma.evader_room),
        n_domain,
        n_periphery,
        n_capture,
        lp_per_iteration: (n_domain - n_capture) as u64,
    })
}

/// Solve every local game; the games are independent and run concurrently.
pub fn solve_local_games(
    games: &[LocalGame],
    tol: f64,
    max_iters: usize,
) -> Result<BTreeMap<JointSuperstate, LocalSolution>, SolveError> {
    let solved: Result<Vec<_>, SolveError> = games
        .par_iter()
        .map(|local| {
            let solution = shapley_solve(&local.game, tol, max_iters)?;
            Ok((
                local.superstate,
                LocalSolution {
                    superstate: local.superstate,
                    states: local.states.clone(),
                    n_domain: local.n_domain,
                    values: solution.values,
                    pursuer: solution.pursuer,
                    evader: solution.evader,
                    stats: solution.stats,
                },
            ))
        })
        .collect();
    Ok(solved?.into_iter().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abstraction::{compute_topology, partition_from_blocks};
    use crate::flat_solver::{JointPegGame, ZeroSumGame};
    use crate::gridworld::{room_world, GridMap};

    fn four_room() -> (PegEnv, Partition, SuperstateTopology) {
        let map = GridMap::parse(&room_world(2, 2, 4)).unwrap();
        let env = PegEnv::standard(map, 1, 0.95, 0.0).unwrap();
        let partition = partition_from_blocks(env.map(), 1, 2).unwrap();
        let topo = compute_topology(&env, &partition);
        (env, partition, topo)
    }

    #[test]
    fn four_room_terminal_superstates() {
        let (env, partition, _) = four_room();
        let terminal = enumerate_terminal_superstates(&env, &partition);
        // 4 same-room pairs plus both orders of the 4 door adjacencies.
        assert_eq!(terminal.len(), 12);
        for g in 0..4 {
            assert!(terminal.contains(&JointSuperstate {
                pursuer_room: g,
                evader_room: g
            }));
        }
        // Diagonal rooms share no door, so no cross capture.
        assert!(!terminal.contains(&JointSuperstate {
            pursuer_room: 0,
            evader_room: 3
        }));
        // Within the counting bound for 2x2 rooms.
        assert!(terminal.len() <= 5 * 4);
    }

    #[test]
    fn single_superstate_gives_one_local_game_equal_to_flat() {
        let (env, _, _) = four_room();
        let single = Partition::single(env.n_cells());
        let topo = compute_topology(&env, &single);
        let terminal = enumerate_terminal_superstates(&env, &single);
        assert_eq!(terminal.len(), 1);
        let local = build_local_game(&env, &single, &topo, terminal[0]).unwrap();
        assert_eq!(local.states.len(), env.n_joint_states());
        assert_eq!(local.n_domain, env.n_joint_states());

        // Rows equal the lazy joint game's rows bit for bit.
        let flat = JointPegGame::new(&env);
        let mut expect = Vec::new();
        for s in 0..64usize {
            // Sample of states; full equality is covered by the solve below.
            if flat.is_terminal(s) {
                continue;
            }
            for a1 in 0..9 {
                for a2 in 0..5 {
                    expect.clear();
                    flat.transitions(s, a1, a2, &mut expect);
                    assert_eq!(local.game.row(s, a1, a2), expect.as_slice());
                }
            }
        }
    }

    #[test]
    fn interior_rows_match_flat_and_periphery_absorbs() {
        let (env, partition, topo) = four_room();
        let gamma = JointSuperstate {
            pursuer_room: 0,
            evader_room: 0,
        };
        let local = build_local_game(&env, &partition, &topo, gamma).unwrap();
        assert_eq!(
            local.states.len(),
            local.n_domain + joint_periphery(&env, &partition, &topo, gamma).len()
        );
        let flat = JointPegGame::new(&env);
        let mut expect = Vec::new();
        for i in 0..local.n_domain {
            if local.game.terminal[i] {
                continue;
            }
            let joint = local.states[i];
            for a1 in 0..9 {
                for a2 in 0..5 {
                    expect.clear();
                    flat.transitions(joint, a1, a2, &mut expect);
                    let local_row = local.game.row(i, a1, a2);
                    assert_eq!(local_row.len(), expect.len());
                    for (&(lt, lp), &(ft, fp)) in local_row.iter().zip(&expect) {
                        assert_eq!(local.states[lt], ft);
                        assert_eq!(lp.to_bits(), fp.to_bits());
                    }
                }
            }
        }
        // Periphery states are terminal with reward equal to the capture
        // reward restricted to them.
        for i in local.n_domain..local.states.len() {
            assert!(local.game.terminal[i]);
            let s = env.joint_state(local.states[i]);
            assert_eq!(local.game.reward[i], env.reward(s));
        }
    }

    #[test]
    fn local_values_escape_zero_capture_full() {
        let (env, partition, topo) = four_room();
        let gamma = JointSuperstate {
            pursuer_room: 1,
            evader_room: 1,
        };
        let local = build_local_game(&env, &partition, &topo, gamma).unwrap();
        let solutions = solve_local_games(&[local.clone()], 1e-9, 100_000).unwrap();
        let sol = &solutions[&gamma];
        let beta = env.discount();
        for (i, &joint) in local.states.iter().enumerate() {
            let s = env.joint_state(joint);
            if env.is_capture(s) {
                assert!((sol.values.values[i] - 1.0 / (1.0 - beta)).abs() < 1e-9);
            } else if i >= local.n_domain {
                // Escape-only periphery state.
                assert_eq!(sol.values.values[i], 0.0);
            }
        }
    }

    #[test]
    fn local_values_dominated_by_flat_values() {
        let (env, partition, topo) = four_room();
        let flat = JointPegGame::new(&env);
        let flat_sol = shapley_solve(&flat, 1e-8, 10_000).unwrap();
        let terminal = enumerate_terminal_superstates(&env, &partition);
        let games: Vec<LocalGame> = terminal
            .iter()
            .map(|&g| build_local_game(&env, &partition, &topo, g).unwrap())
            .collect();
        let solutions = solve_local_games(&games, 1e-8, 10_000).unwrap();
        for local in &games {
            let sol = &solutions[&local.superstate];
            for i in 0..local.n_domain {
                let joint = local.states[i];
                assert!(
                    sol.values.values[i] <= flat_sol.values.values[joint] + 1e-6,
                    "local value exceeds flat at joint state {joint}"
                );
            }
        }
    }
}
