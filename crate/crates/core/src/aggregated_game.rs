//! The superstate-level game. Agents pick navigation options; transitions
//! between joint superstates are discounted first-exit probabilities
//! (computed as a fixed point per option pair), rewards are boundary
//! averages of the local-game Nash values, and superstates with local games
//! are absorbing.
//!
//! Because the discount is folded into the transition rows (each row sums to
//! at most the discount), the Shapley backup for this game applies no extra
//! discount factor.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use thiserror::Error;

use crate::abstraction::{
    joint_boundary, JointSuperstate, Partition, SuperstateTopology,
};
use crate::flat_solver::{
    shapley_solve, SolveError, SolveStats, StagePolicy, ValueTable, ZeroSumGame,
};
use crate::gridworld::{AgentRole, JointState, PegEnv};
use crate::local_games::LocalSolution;
use crate::options::{OptionDef, OptionSet};

#[derive(Debug, Error)]
pub enum AggregatedError {
    #[error("option for {agent:?} starts in superstate {source_room}, expected {expected}")]
    InapplicableOption {
        agent: AgentRole,
        source_room: usize,
        expected: usize,
    },
    #[error("discounted exit probabilities did not converge within {iterations} sweeps (residual {residual:e})")]
    PhiNotConverged { iterations: usize, residual: f64 },
    #[error("superstate ({0}, {1}) intersects the capture set but has no local solution")]
    MissingLocalSolution(usize, usize),
    #[error("non-terminal superstate ({0}, {1}) offers no options to {2:?}")]
    DeadEnd(usize, usize, AgentRole),
    #[error("transition row mass {mass} exceeds the discount {discount} at superstate ({0}, {1})", .gamma.0, .gamma.1)]
    RowMassExceeded {
        gamma: (usize, usize),
        mass: f64,
        discount: f64,
    },
    #[error(transparent)]
    Solve(#[from] SolveError),
}

/// Discounted probability of first exit from a joint superstate into each
/// adjacent joint superstate, per starting joint state, under a fixed joint
/// option.
#[derive(Debug, Clone)]
pub struct PhiTable {
    pub superstate: JointSuperstate,
    /// Exit superstates, sorted.
    pub targets: Vec<JointSuperstate>,
    /// Joint state indices of the superstate, ascending.
    pub states: Vec<usize>,
    /// `values[t][i]` = discounted probability of first exit into
    /// `targets[t]` starting from `states[i]`.
    pub values: Vec<Vec<f64>>,
}

impl PhiTable {
    pub fn position_of(&self, joint_index: usize) -> Option<usize> {
        self.states.binary_search(&joint_index).ok()
    }

    /// Total discounted exit mass from one starting state; at most the
    /// discount.
    pub fn row_mass(&self, position: usize) -> f64 {
        self.values.iter().map(|v| v[position]).sum()
    }
}

/// Fixed point of the first-exit recursion for `gamma` under the joint
/// option `(o1, o2)`: one step's discounted exit mass plus the discounted
/// expectation over staying inside. Iterates from zero, so the iterates grow
/// monotonically to the unique fixed point.
pub fn compute_phi(
    env: &PegEnv,
    partition: &Partition,
    gamma: JointSuperstate,
    o1: &OptionDef,
    o2: &OptionDef,
    tol: f64,
    max_iters: usize,
) -> Result<PhiTable, AggregatedError> {
    if o1.agent != AgentRole::Pursuer || o1.source != gamma.pursuer_room {
        return Err(AggregatedError::InapplicableOption {
            agent: AgentRole::Pursuer,
            source_room: o1.source,
            expected: gamma.pursuer_room,
        });
    }
    if o2.agent != AgentRole::Evader || o2.source != gamma.evader_room {
        return Err(AggregatedError::InapplicableOption {
            agent: AgentRole::Evader,
            source_room: o2.source,
            expected: gamma.evader_room,
        });
    }

    let beta = env.discount();
    let mut states = Vec::new();
    for &s1 in partition.cells_of(gamma.pursuer_room) {
        for &s2 in partition.cells_of(gamma.evader_room) {
            states.push(env.joint_index(JointState {
                pursuer: s1,
                evader: s2,
            }));
        }
    }
    states.sort_unstable();
    let position: HashMap<usize, usize> =
        states.iter().enumerate().map(|(i, &s)| (s, i)).collect();

    // One joint step per state under the deterministic option policies,
    // split into the mass staying inside and the one-step exit mass per
    // target superstate.
    let mut interior: Vec<Vec<(usize, f64)>> = Vec::with_capacity(states.len());
    let mut target_ids: BTreeMap<JointSuperstate, usize> = BTreeMap::new();
    let mut exits: Vec<Vec<(usize, f64)>> = Vec::with_capacity(states.len());
    for &joint in &states {
        let s = env.joint_state(joint);
        let mut inside = Vec::new();
        let mut exit = Vec::new();
        if env.is_capture(s) {
            // Absorbing: the process never exits.
            inside.push((position[&joint], 1.0));
        } else {
            let a1 = o1.action_at(s.pursuer).expect("pursuer cell outside option domain");
            let a2 = o2.action_at(s.evader).expect("evader cell outside option domain");
            for (t, p) in env.joint_transition(s, a1, a2) {
                let t_gamma = JointSuperstate::of(partition, t);
                if t_gamma == gamma {
                    inside.push((position[&env.joint_index(t)], p));
                } else {
                    let next_id = target_ids.len();
                    let id = *target_ids.entry(t_gamma).or_insert(next_id);
                    exit.push((id, p));
                }
            }
        }
        interior.push(inside);
        exits.push(exit);
    }

    let targets: Vec<JointSuperstate> = target_ids.keys().copied().collect();
    // target_ids were assigned in discovery order; remap to sorted order.
    let remap: Vec<usize> = {
        let mut by_discovery = vec![0usize; targets.len()];
        for (sorted_pos, gamma_t) in targets.iter().enumerate() {
            by_discovery[target_ids[gamma_t]] = sorted_pos;
        }
        by_discovery
    };
    let mut one_step = vec![vec![0.0; states.len()]; targets.len()];
    for (i, exit) in exits.iter().enumerate() {
        for &(discovery_id, p) in exit {
            one_step[remap[discovery_id]][i] += p;
        }
    }

    let mut values = vec![vec![0.0; states.len()]; targets.len()];
    let mut iterations = 0;
    loop {
        iterations += 1;
        let mut residual = 0.0f64;
        for t in 0..targets.len() {
            let prev = values[t].clone();
            for i in 0..states.len() {
                let mut inner = 0.0;
                for &(j, p) in &interior[i] {
                    inner += p * prev[j];
                }
                let next = beta * (one_step[t][i] + inner);
                debug_assert!(next >= prev[i] - 1e-12, "phi iterates must be monotone");
                residual = residual.max((next - prev[i]).abs());
                values[t][i] = next;
            }
        }
        if residual < tol {
            break;
        }
        if iterations >= max_iters {
            return Err(AggregatedError::PhiNotConverged {
                iterations,
                residual,
            });
        }
    }

    Ok(PhiTable {
        superstate: gamma,
        targets,
        states,
        values,
    })
}

/// Average the first-exit table over the joint boundary: the aggregated
/// transition row for this superstate and option pair. The boundary must be
/// nonempty.
pub fn aggregated_transition_row(
    phi: &PhiTable,
    boundary: &[usize],
) -> Option<Vec<(JointSuperstate, f64)>> {
    if boundary.is_empty() {
        return None;
    }
    let mut row = Vec::with_capacity(phi.targets.len());
    for (t, target) in phi.targets.iter().enumerate() {
        let mut total = 0.0;
        for &joint in boundary {
            let pos = phi
                .position_of(joint)
                .expect("boundary state outside the superstate");
            total += phi.values[t][pos];
        }
        row.push((*target, total / boundary.len() as f64));
    }
    row.retain(|&(_, p)| p > 0.0);
    Some(row)
}

/// Boundary-averaged local Nash value: the aggregated reward of a superstate
/// with a local game; superstates without one earn zero. An unreachable
/// superstate (empty boundary) also earns zero.
pub fn aggregated_reward(
    gamma: JointSuperstate,
    local: Option<&LocalSolution>,
    boundary: &[usize],
) -> Result<f64, AggregatedError> {
    let Some(solution) = local else {
        return Ok(0.0);
    };
    if boundary.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for &joint in boundary {
        let pos = solution
            .position_of(joint)
            .ok_or(AggregatedError::MissingLocalSolution(
                gamma.pursuer_room,
                gamma.evader_room,
            ))?;
        total += solution.values.values[pos];
    }
    Ok(total / boundary.len() as f64)
}

/// Value assigned to absorbing superstates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminalValueMode {
    /// The boundary-averaged local value is itself a discounted game value,
    /// so absorbing superstates keep it as a fixed terminal value.
    FixedReward,
    /// Alternative for sensitivity analysis: treat the aggregated reward as
    /// recurring under the discount.
    RecurringReward,
}

/// The aggregated game over joint superstates. Action menus vary per state:
/// at `(g1, g2)` the pursuer picks among its options out of room `g1`, the
/// evader out of room `g2`.
#[derive(Debug, Clone)]
pub struct AggregatedGame {
    pub n_rooms: usize,
    /// Option targets per (agent, room), parallel to the `OptionSet` menus.
    pub menus: [Vec<Vec<usize>>; 2],
    /// Transition rows per non-terminal state: `rows[state][o1][o2]` lists
    /// (joint superstate index, discounted mass).
    pub rows: Vec<Vec<Vec<Vec<(usize, f64)>>>>,
    pub reward: Vec<f64>,
    pub terminal: Vec<bool>,
    pub discount: f64,
    pub terminal_mode: TerminalValueMode,
    /// Non-terminal superstates with an empty joint boundary (unreachable
    /// from outside); their transition rows are empty and their value is 0.
    pub unreachable: Vec<JointSuperstate>,
}

impl AggregatedGame {
    pub fn state_index(&self, gamma: JointSuperstate) -> usize {
        gamma.pursuer_room * self.n_rooms + gamma.evader_room
    }

    pub fn superstate(&self, state: usize) -> JointSuperstate {
        JointSuperstate {
            pursuer_room: state / self.n_rooms,
            evader_room: state % self.n_rooms,
        }
    }
}

impl ZeroSumGame for AggregatedGame {
    fn num_states(&self) -> usize {
        self.n_rooms * self.n_rooms
    }

    fn num_actions(&self, state: usize) -> (usize, usize) {
        let gamma = self.superstate(state);
        (
            self.menus[0][gamma.pursuer_room].len(),
            self.menus[1][gamma.evader_room].len(),
        )
    }

    fn is_terminal(&self, state: usize) -> bool {
        self.terminal[state]
    }

    fn reward(&self, state: usize) -> f64 {
        self.reward[state]
    }

    fn discount(&self) -> f64 {
        self.discount
    }

    fn discount_in_transitions(&self) -> bool {
        true
    }

    fn terminal_value(&self, state: usize) -> f64 {
        match self.terminal_mode {
            TerminalValueMode::FixedReward => self.reward[state],
            TerminalValueMode::RecurringReward => self.reward[state] / (1.0 - self.discount),
        }
    }

    fn transitions(&self, state: usize, a1: usize, a2: usize, out: &mut Vec<(usize, f64)>) {
        if self.terminal[state] {
            out.push((state, 1.0));
            return;
        }
        out.extend_from_slice(&self.rows[state][a1][a2]);
    }
}

/// Nash solution of the aggregated game: a mixed policy over each agent's
/// option menu at every joint superstate.
#[derive(Debug, Clone)]
pub struct AggregatedSolution {
    pub values: ValueTable,
    pub pursuer: StagePolicy,
    pub evader: StagePolicy,
    pub stats: SolveStats,
    pub phi_tuples: usize,
}

/// Assemble the aggregated game from solved options and local games.
pub fn build_aggregated_game(
    env: &PegEnv,
    partition: &Partition,
    topology: &SuperstateTopology,
    options: &OptionSet,
    local_solutions: &BTreeMap<JointSuperstate, LocalSolution>,
    phi_tol: f64,
    max_iters: usize,
    terminal_mode: TerminalValueMode,
) -> Result<(AggregatedGame, usize), AggregatedError> {
    let n_rooms = partition.superstate_count();
    let n_states = n_rooms * n_rooms;
    let beta = env.discount();

    let menus = [
        (0..n_rooms)
            .map(|g| options.at(AgentRole::Pursuer, g).iter().map(|o| o.target).collect())
            .collect::<Vec<Vec<usize>>>(),
        (0..n_rooms)
            .map(|g| options.at(AgentRole::Evader, g).iter().map(|o| o.target).collect())
            .collect::<Vec<Vec<usize>>>(),
    ];

    let mut terminal = vec![false; n_states];
    let mut reward = vec![0.0; n_states];
    let mut unreachable = Vec::new();
    let mut boundaries: Vec<Vec<usize>> = vec![Vec::new(); n_states];
    for state in 0..n_states {
        let gamma = JointSuperstate {
            pursuer_room: state / n_rooms,
            evader_room: state % n_rooms,
        };
        let boundary: Vec<usize> = joint_boundary(env, partition, topology, gamma)
            .into_iter()
            .map(|s| env.joint_index(s))
            .collect();
        let local = local_solutions.get(&gamma);
        if local.is_some() {
            terminal[state] = true;
            reward[state] = aggregated_reward(gamma, local, &boundary)?;
        } else {
            for agent in AgentRole::BOTH {
                let room = if agent == AgentRole::Pursuer {
                    gamma.pursuer_room
                } else {
                    gamma.evader_room
                };
                if options.at(agent, room).is_empty() {
                    return Err(AggregatedError::DeadEnd(
                        gamma.pursuer_room,
                        gamma.evader_room,
                        agent,
                    ));
                }
            }
            if boundary.is_empty() {
                unreachable.push(gamma);
            }
        }
        boundaries[state] = boundary;
    }

    // Exit tables for every (non-terminal superstate, option pair).
    let mut tasks = Vec::new();
    for state in 0..n_states {
        if terminal[state] || boundaries[state].is_empty() {
            continue;
        }
        let gamma = JointSuperstate {
            pursuer_room: state / n_rooms,
            evader_room: state % n_rooms,
        };
        let menu1 = options.at(AgentRole::Pursuer, gamma.pursuer_room);
        let menu2 = options.at(AgentRole::Evader, gamma.evader_room);
        for i1 in 0..menu1.len() {
            for i2 in 0..menu2.len() {
                tasks.push((state, gamma, i1, i2));
            }
        }
    }
    let phi_tuples = tasks.len();
    let computed: Result<Vec<_>, AggregatedError> = tasks
        .par_iter()
        .map(|&(state, gamma, i1, i2)| {
            let o1 = &options.at(AgentRole::Pursuer, gamma.pursuer_room)[i1];
            let o2 = &options.at(AgentRole::Evader, gamma.evader_room)[i2];
            let phi = compute_phi(env, partition, gamma, o1, o2, phi_tol, max_iters)?;
            let row = aggregated_transition_row(&phi, &boundaries[state])
                .expect("boundary checked nonempty");
            let mass: f64 = row.iter().map(|&(_, p)| p).sum();
            if mass > beta + 1e-9 {
                return Err(AggregatedError::RowMassExceeded {
                    gamma: (gamma.pursuer_room, gamma.evader_room),
                    mass,
                    discount: beta,
                });
            }
            let indexed: Vec<(usize, f64)> = row
                .into_iter()
                .map(|(g, p)| (g.pursuer_room * n_rooms + g.evader_room, p))
                .collect();
            Ok((state, i1, i2, indexed))
        })
        .collect();

    let mut rows: Vec<Vec<Vec<Vec<(usize, f64)>>>> = (0..n_states)
        .map(|state| {
            if terminal[state] {
                return Vec::new();
            }
            let gamma = JointSuperstate {
                pursuer_room: state / n_rooms,
                evader_room: state % n_rooms,
            };
            let m1 = options.at(AgentRole::Pursuer, gamma.pursuer_room).len();
            let m2 = options.at(AgentRole::Evader, gamma.evader_room).len();
            vec![vec![Vec::new(); m2]; m1]
        })
        .collect();
    for (state, i1, i2, row) in computed? {
        rows[state][i1][i2] = row;
    }

    Ok((
        AggregatedGame {
            n_rooms,
            menus,
            rows,
            reward,
            terminal,
            discount: beta,
            terminal_mode,
            unreachable,
        },
        phi_tuples,
    ))
}

/// Build the aggregated game and solve it to a Nash equilibrium over
/// options.
#[allow(clippy::too_many_arguments)]
pub fn build_and_solve_aggregated(
    env: &PegEnv,
    partition: &Partition,
    topology: &SuperstateTopology,
    options: &OptionSet,
    local_solutions: &BTreeMap<JointSuperstate, LocalSolution>,
    phi_tol: f64,
    tol: f64,
    max_iters: usize,
    terminal_mode: TerminalValueMode,
) -> Result<(AggregatedGame, AggregatedSolution), AggregatedError> {
    let (game, phi_tuples) = build_aggregated_game(
        env,
        partition,
        topology,
        options,
        local_solutions,
        phi_tol,
        max_iters,
        terminal_mode,
    )?;
    let solution = shapley_solve(&game, tol, max_iters)?;
    Ok((
        game,
        AggregatedSolution {
            values: solution.values,
            pursuer: solution.pursuer,
            evader: solution.evader,
            stats: solution.stats,
            phi_tuples,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abstraction::{compute_topology, Partition};
    use crate::gridworld::{room_world, GridMap};
    use crate::options::build_all_options;

    /// Two 3x3 rooms joined by one door; capture on co-location only so the
    /// cross-room superstates stay non-terminal.
    fn two_room(slip: f64) -> (PegEnv, Partition, SuperstateTopology) {
        let map = GridMap::parse(&room_world(2, 1, 3)).unwrap();
        let env = PegEnv::standard(map, 0, 0.95, slip).unwrap();
        let mut labels = Vec::new();
        for id in 0..env.map().n_free() {
            let (_, c) = env.map().coords(id);
            labels.push(if c <= 4 { 0i64 } else { 1 });
        }
        let partition = Partition::from_labels(labels).unwrap();
        let topo = compute_topology(&env, &partition);
        (env, partition, topo)
    }

    #[test]
    fn phi_one_step_exit_is_beta() {
        let (env, partition, topo) = two_room(0.0);
        let options = build_all_options(&env, &partition, &topo, 1e-12, 100_000).unwrap();
        let gamma = JointSuperstate {
            pursuer_room: 0,
            evader_room: 1,
        };
        let o1 = &options.at(AgentRole::Pursuer, 0)[0];
        let o2 = &options.at(AgentRole::Evader, 1)[0];
        let phi = compute_phi(&env, &partition, gamma, o1, o2, 1e-12, 100_000).unwrap();
        let beta = env.discount();

        // Pursuer on the door cell (2,4), evader deep in room 1 at (2,7):
        // the pursuer's option exits east in one step while the evader needs
        // several steps west, so the joint superstate flips to (1, 1).
        let s = env.joint_index(JointState {
            pursuer: env.map().free_id(2, 4).unwrap(),
            evader: env.map().free_id(2, 7).unwrap(),
        });
        let pos = phi.position_of(s).unwrap();
        let into = JointSuperstate {
            pursuer_room: 1,
            evader_room: 1,
        };
        let t = phi.targets.iter().position(|&g| g == into).unwrap();
        assert!((phi.values[t][pos] - beta).abs() < 1e-9);
        assert!((phi.row_mass(pos) - beta).abs() < 1e-9);

        // One interior hop first: the pursuer at (2,2) cannot exit in one
        // move (a 2-step east lands on the door, still room 0), so the
        // chained exit carries two discount factors.
        let s2 = env.joint_index(JointState {
            pursuer: env.map().free_id(2, 2).unwrap(),
            evader: env.map().free_id(2, 7).unwrap(),
        });
        let pos2 = phi.position_of(s2).unwrap();
        let mass2 = phi.row_mass(pos2);
        assert!(
            (mass2 - beta * beta).abs() < 1e-9,
            "two-step exit mass {mass2}"
        );
    }

    #[test]
    fn phi_rows_bounded_by_beta() {
        for slip in [0.0, 0.5] {
            let (env, partition, topo) = two_room(slip);
            let options = build_all_options(&env, &partition, &topo, 1e-12, 100_000).unwrap();
            let gamma = JointSuperstate {
                pursuer_room: 0,
                evader_room: 1,
            };
            let o1 = &options.at(AgentRole::Pursuer, 0)[0];
            let o2 = &options.at(AgentRole::Evader, 1)[0];
            let phi = compute_phi(&env, &partition, gamma, o1, o2, 1e-9, 100_000).unwrap();
            for pos in 0..phi.states.len() {
                let mass = phi.row_mass(pos);
                assert!(mass <= env.discount() + 1e-9);
                assert!(mass >= 0.0);
                for t in 0..phi.targets.len() {
                    assert!(phi.values[t][pos] <= env.discount() + 1e-9);
                }
            }
        }
    }

    #[test]
    fn transition_row_averages_boundary() {
        let (env, partition, topo) = two_room(0.5);
        let options = build_all_options(&env, &partition, &topo, 1e-12, 100_000).unwrap();
        let gamma = JointSuperstate {
            pursuer_room: 0,
            evader_room: 1,
        };
        let o1 = &options.at(AgentRole::Pursuer, 0)[0];
        let o2 = &options.at(AgentRole::Evader, 1)[0];
        let phi = compute_phi(&env, &partition, gamma, o1, o2, 1e-12, 100_000).unwrap();
        let boundary: Vec<usize> = joint_boundary(&env, &partition, &topo, gamma)
            .into_iter()
            .map(|s| env.joint_index(s))
            .collect();
        let row = aggregated_transition_row(&phi, &boundary).unwrap();
        for (target, mass) in row {
            let t = phi.targets.iter().position(|&g| g == target).unwrap();
            let manual: f64 = boundary
                .iter()
                .map(|&j| phi.values[t][phi.position_of(j).unwrap()])
                .sum::<f64>()
                / boundary.len() as f64;
            assert!((mass - manual).abs() < 1e-15);
        }
        assert!(aggregated_transition_row(&phi, &[]).is_none());
    }

    #[test]
    fn inapplicable_options_rejected() {
        let (env, partition, topo) = two_room(0.0);
        let options = build_all_options(&env, &partition, &topo, 1e-9, 100_000).unwrap();
        let gamma = JointSuperstate {
            pursuer_room: 0,
            evader_room: 1,
        };
        // Evader option taken from room 0 cannot drive room 1.
        let o1 = &options.at(AgentRole::Pursuer, 0)[0];
        let wrong = &options.at(AgentRole::Evader, 0)[0];
        assert!(matches!(
            compute_phi(&env, &partition, gamma, o1, wrong, 1e-9, 1000),
            Err(AggregatedError::InapplicableOption { .. })
        ));
    }
}
