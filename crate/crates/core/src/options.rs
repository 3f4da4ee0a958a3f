//! Navigation options: for each agent and each adjacent superstate pair,
//! a restricted single-agent MDP whose pseudo-reward sits on the periphery
//! cells of the target superstate, solved to a deterministic local policy.

use std::collections::HashMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::abstraction::{Partition, SuperstateTopology};
use crate::flat_solver::SolveError;
use crate::gridworld::{AgentRole, PegEnv};

#[derive(Debug, Error)]
pub enum OptionError {
    #[error("superstate {target} is not adjacent to {source_room} for {agent:?}")]
    NotAdjacent {
        agent: AgentRole,
        source_room: usize,
        target: usize,
    },
    #[error(transparent)]
    Solve(#[from] SolveError),
}

/// The restricted MDP behind one option: the source superstate plus its
/// periphery, with periphery states absorbing and pseudo-reward +1 exactly
/// on periphery cells belonging to the target superstate.
#[derive(Debug, Clone)]
pub struct LocalMdp {
    pub agent: AgentRole,
    pub source: usize,
    pub target: usize,
    /// Domain cells (ascending) followed by periphery cells (ascending).
    pub states: Vec<usize>,
    pub n_domain: usize,
    /// Rows for domain states only, indexed `domain_pos * n_actions + a`,
    /// in local state positions. Periphery rows are self-loops.
    pub rows: Vec<Vec<(usize, f64)>>,
    pub reward: Vec<f64>,
    pub discount: f64,
    index: HashMap<usize, usize>,
}

impl LocalMdp {
    pub fn n_actions(&self) -> usize {
        self.rows.len() / self.n_domain.max(1)
    }

    pub fn position_of(&self, cell: usize) -> Option<usize> {
        self.index.get(&cell).copied()
    }

    pub fn is_periphery(&self, position: usize) -> bool {
        position >= self.n_domain
    }
}

/// Build the local MDP for navigating `agent` from `source` to the adjacent
/// `target`.
pub fn build_local_mdp(
    env: &PegEnv,
    partition: &Partition,
    topology: &SuperstateTopology,
    agent: AgentRole,
    source: usize,
    target: usize,
) -> Result<LocalMdp, OptionError> {
    if !topology.is_adjacent(agent, source, target) {
        return Err(OptionError::NotAdjacent {
            agent,
            source_room: source,
            target,
        });
    }
    let domain = partition.cells_of(source);
    let periphery = topology.periphery(agent, source);
    let mut states = Vec::with_capacity(domain.len() + periphery.len());
    states.extend_from_slice(domain);
    states.extend_from_slice(periphery);
    let index: HashMap<usize, usize> = states.iter().enumerate().map(|(i, &c)| (c, i)).collect();

    let n_actions = env.actions(agent).len();
    let mut rows = Vec::with_capacity(domain.len() * n_actions);
    for &cell in domain {
        for a in 0..n_actions {
            let row: Vec<(usize, f64)> = env
                .individual_transition(agent, cell, a)
                .iter()
                .map(|&(t, p)| (index[&t], p))
                .collect();
            rows.push(row);
        }
    }
    let reward: Vec<f64> = states
        .iter()
        .enumerate()
        .map(|(i, &cell)| {
            if i >= domain.len() && partition.label(cell) == target {
                1.0
            } else {
                0.0
            }
        })
        .collect();

    Ok(LocalMdp {
        agent,
        source,
        target,
        n_domain: domain.len(),
        states,
        rows,
        reward,
        discount: env.discount(),
        index,
    })
}

/// Value-iterate the local MDP and extract the greedy deterministic policy
/// over the domain. Periphery values are the closed-form absorbing series;
/// domain states whose value is exactly zero (the target is unreachable
/// within the restriction) get the stay action.
pub fn solve_local_mdp(
    mdp: &LocalMdp,
    tol: f64,
    max_iters: usize,
) -> Result<(Vec<f64>, Vec<usize>), SolveError> {
    if !(tol > 0.0) {
        return Err(SolveError::BadTolerance(tol));
    }
    let n_actions = mdp.n_actions();
    let mut values = vec![0.0; mdp.states.len()];
    for i in mdp.n_domain..mdp.states.len() {
        values[i] = mdp.reward[i] / (1.0 - mdp.discount);
    }
    let mut iter = 0;
    loop {
        iter += 1;
        let mut residual = 0.0f64;
        let snapshot = values.clone();
        for i in 0..mdp.n_domain {
            let mut best = f64::NEG_INFINITY;
            for a in 0..n_actions {
                let mut expect = 0.0;
                for &(t, p) in &mdp.rows[i * n_actions + a] {
                    expect += p * snapshot[t];
                }
                best = best.max(expect);
            }
            let v = mdp.reward[i] + mdp.discount * best;
            residual = residual.max((v - values[i]).abs());
            values[i] = v;
        }
        if residual < tol {
            break;
        }
        if iter >= max_iters {
            return Err(SolveError::NotConverged {
                iterations: iter,
                residual,
                tol,
            });
        }
    }

    let mut policy = Vec::with_capacity(mdp.n_domain);
    for i in 0..mdp.n_domain {
        if values[i] == 0.0 {
            policy.push(0);
            continue;
        }
        let mut best_action = 0;
        let mut best = f64::NEG_INFINITY;
        for a in 0..n_actions {
            let mut expect = 0.0;
            for &(t, p) in &mdp.rows[i * n_actions + a] {
                expect += p * values[t];
            }
            let q = mdp.reward[i] + mdp.discount * expect;
            if q > best + 1e-12 {
                best = q;
                best_action = a;
            }
        }
        policy.push(best_action);
    }
    Ok((values, policy))
}

/// A solved option: deterministic local policy over the domain, terminating
/// on the source superstate's periphery.
#[derive(Debug, Clone, PartialEq)]
pub struct OptionDef {
    pub agent: AgentRole,
    pub source: usize,
    pub target: usize,
    /// Domain cells, ascending.
    pub domain: Vec<usize>,
    /// Terminal cells (the source periphery), ascending.
    pub terminal: Vec<usize>,
    /// Action per domain cell, aligned with `domain`.
    pub policy: Vec<usize>,
}

impl OptionDef {
    /// The option's action at a domain cell.
    pub fn action_at(&self, cell: usize) -> Option<usize> {
        self.domain
            .binary_search(&cell)
            .ok()
            .map(|i| self.policy[i])
    }
}

/// All options of both agents, one per adjacent ordered superstate pair,
/// grouped by (agent, source superstate) and ordered by target id.
#[derive(Debug, Clone, PartialEq)]
pub struct OptionSet {
    by_source: [Vec<Vec<OptionDef>>; 2],
}

impl OptionSet {
    /// Options available to `agent` inside `source`.
    pub fn at(&self, agent: AgentRole, source: usize) -> &[OptionDef] {
        &self.by_source[agent.index()][source]
    }

    pub fn superstate_count(&self) -> usize {
        self.by_source[0].len()
    }

    pub fn total(&self, agent: AgentRole) -> usize {
        self.by_source[agent.index()].iter().map(Vec::len).sum()
    }

    pub fn iter(&self, agent: AgentRole) -> impl Iterator<Item = &OptionDef> {
        self.by_source[agent.index()].iter().flatten()
    }

    pub fn from_options(
        superstate_count: usize,
        options: impl IntoIterator<Item = OptionDef>,
    ) -> Self {
        let mut by_source = [
            vec![Vec::new(); superstate_count],
            vec![Vec::new(); superstate_count],
        ];
        for option in options {
            by_source[option.agent.index()][option.source].push(option);
        }
        for per_agent in by_source.iter_mut() {
            for menu in per_agent.iter_mut() {
                menu.sort_by_key(|o| o.target);
            }
        }
        OptionSet { by_source }
    }
}

/// Build and solve one option per (agent, adjacent ordered superstate pair).
pub fn build_all_options(
    env: &PegEnv,
    partition: &Partition,
    topology: &SuperstateTopology,
    tol: f64,
    max_iters: usize,
) -> Result<OptionSet, OptionError> {
    let mut pairs = Vec::new();
    for agent in AgentRole::BOTH {
        for source in 0..partition.superstate_count() {
            for &target in topology.adjacent(agent, source) {
                pairs.push((agent, source, target));
            }
        }
    }
    let solved: Result<Vec<OptionDef>, OptionError> = pairs
        .par_iter()
        .map(|&(agent, source, target)| {
            let mdp = build_local_mdp(env, partition, topology, agent, source, target)?;
            let (_, policy) = solve_local_mdp(&mdp, tol, max_iters)?;
            Ok(OptionDef {
                agent,
                source,
                target,
                domain: mdp.states[..mdp.n_domain].to_vec(),
                terminal: mdp.states[mdp.n_domain..].to_vec(),
                policy,
            })
        })
        .collect();
    Ok(OptionSet::from_options(
        partition.superstate_count(),
        solved?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abstraction::{compute_topology, partition_from_blocks, Partition};
    use crate::gridworld::{room_world, GridMap, Move, PegEnv};

    fn two_room() -> (PegEnv, Partition, SuperstateTopology) {
        let map = GridMap::parse(&room_world(2, 1, 3)).unwrap();
        let env = PegEnv::standard(map, 1, 0.95, 0.0).unwrap();
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
    fn local_mdp_shape_and_reward_support() {
        let (env, partition, topo) = two_room();
        let mdp = build_local_mdp(&env, &partition, &topo, AgentRole::Evader, 0, 1).unwrap();
        // Room 0 plus the door make 10 domain cells; one periphery cell.
        assert_eq!(mdp.n_domain, 10);
        assert_eq!(mdp.states.len(), 10 + topo.periphery(AgentRole::Evader, 0).len());
        let support: Vec<usize> = mdp
            .reward
            .iter()
            .enumerate()
            .filter(|&(_, &r)| r > 0.0)
            .map(|(i, _)| mdp.states[i])
            .collect();
        assert_eq!(support, vec![env.map().free_id(2, 5).unwrap()]);
    }

    #[test]
    fn periphery_rows_are_absorbing() {
        let (env, partition, topo) = two_room();
        let mdp = build_local_mdp(&env, &partition, &topo, AgentRole::Pursuer, 0, 1).unwrap();
        // Interior rows only reference local states; periphery is implicit
        // absorbing, so every stored row must stay within bounds.
        for row in &mdp.rows {
            let total: f64 = row.iter().map(|&(_, p)| p).sum();
            assert!((total - 1.0).abs() < 1e-12);
            for &(t, _) in row {
                assert!(t < mdp.states.len());
            }
        }
    }

    #[test]
    fn rejects_non_adjacent_pair() {
        let map = GridMap::parse(&room_world(2, 2, 4)).unwrap();
        let env = PegEnv::standard(map, 1, 0.95, 0.0).unwrap();
        let partition = partition_from_blocks(env.map(), 1, 2).unwrap();
        let topo = compute_topology(&env, &partition);
        assert!(matches!(
            build_local_mdp(&env, &partition, &topo, AgentRole::Evader, 0, 3),
            Err(OptionError::NotAdjacent { .. })
        ));
    }

    #[test]
    fn one_step_value_is_beta_over_one_minus_beta() {
        let (env, partition, topo) = two_room();
        let mdp = build_local_mdp(&env, &partition, &topo, AgentRole::Evader, 0, 1).unwrap();
        let (values, policy) = solve_local_mdp(&mdp, 1e-12, 100_000).unwrap();
        let beta = env.discount();
        // The door cell (2,4) is one deterministic step from the rewarded
        // periphery cell (2,5).
        let door = mdp.position_of(env.map().free_id(2, 4).unwrap()).unwrap();
        assert!((values[door] - beta / (1.0 - beta)).abs() < 1e-9);
        // Its greedy action is east distance 1 (index 3 in the move order).
        assert_eq!(
            env.actions(AgentRole::Evader).moves()[policy[door]],
            Move::Step(crate::gridworld::Direction::East, 1)
        );
    }

    #[test]
    fn greedy_policy_is_optimal_and_closed() {
        let (env, partition, topo) = two_room();
        for agent in AgentRole::BOTH {
            let mdp = build_local_mdp(&env, &partition, &topo, agent, 0, 1).unwrap();
            let (values, policy) = solve_local_mdp(&mdp, 1e-12, 100_000).unwrap();
            let n_actions = mdp.n_actions();
            for i in 0..mdp.n_domain {
                let q = |a: usize| -> f64 {
                    let mut expect = 0.0;
                    for &(t, p) in &mdp.rows[i * n_actions + a] {
                        expect += p * values[t];
                    }
                    mdp.reward[i] + mdp.discount * expect
                };
                let chosen = q(policy[i]);
                for a in 0..n_actions {
                    assert!(q(a) <= chosen + 1e-9, "action {a} beats policy at {i}");
                }
                assert!(values[i] >= 0.0 && values[i] <= 1.0 / (1.0 - mdp.discount) + 1e-9);
            }
        }
    }

    #[test]
    fn option_rollout_reaches_target() {
        let (env, partition, topo) = two_room();
        let options = build_all_options(&env, &partition, &topo, 1e-12, 100_000).unwrap();
        for agent in AgentRole::BOTH {
            let menu = options.at(agent, 0);
            assert_eq!(menu.len(), 1);
            let option = &menu[0];
            assert_eq!(option.target, 1);
            let mdp = build_local_mdp(&env, &partition, &topo, agent, 0, 1).unwrap();
            let (values, _) = solve_local_mdp(&mdp, 1e-12, 100_000).unwrap();
            for &cell in &option.domain {
                let start_value = values[mdp.position_of(cell).unwrap()];
                // Deterministic rollout (slip = 0).
                let mut at = cell;
                let mut steps = 0;
                while option.domain.binary_search(&at).is_ok() && steps <= env.n_cells() {
                    let a = option.action_at(at).unwrap();
                    let row = env.individual_transition(agent, at, a);
                    assert_eq!(row.len(), 1);
                    let next = row[0].0;
                    // Closure: every step stays within domain + terminal.
                    assert!(
                        option.domain.binary_search(&next).is_ok()
                            || option.terminal.binary_search(&next).is_ok()
                    );
                    if next == at {
                        break;
                    }
                    at = next;
                    steps += 1;
                }
                if start_value > 0.0 {
                    assert_eq!(
                        partition.label(at),
                        1,
                        "option from cell {cell} should end in the target room"
                    );
                }
            }
        }
    }

    #[test]
    fn four_room_world_option_inventory() {
        let map = GridMap::parse(&room_world(2, 2, 4)).unwrap();
        let env = PegEnv::standard(map, 1, 0.95, 0.0).unwrap();
        let partition = partition_from_blocks(env.map(), 1, 2).unwrap();
        let topo = compute_topology(&env, &partition);
        let options = build_all_options(&env, &partition, &topo, 1e-9, 100_000).unwrap();
        for agent in AgentRole::BOTH {
            // Room 0 neighbors rooms 1 and 2 in the 2x2 grid.
            let targets: Vec<usize> = options.at(agent, 0).iter().map(|o| o.target).collect();
            assert_eq!(targets, vec![1, 2]);
            // One option per adjacent ordered pair, at most 4 per superstate.
            assert_eq!(options.total(agent), 8);
            for source in 0..4 {
                assert!(options.at(agent, source).len() <= 4);
            }
        }
    }

    #[test]
    fn single_superstate_has_no_options() {
        let (env, _, _) = two_room();
        let single = Partition::single(env.n_cells());
        let topo = compute_topology(&env, &single);
        let options = build_all_options(&env, &single, &topo, 1e-9, 1000).unwrap();
        for agent in AgentRole::BOTH {
            assert_eq!(options.total(agent), 0);
        }
    }

    #[test]
    fn six_by_six_option_count_bound() {
        let map = GridMap::parse(&room_world(6, 6, 5)).unwrap();
        let env = PegEnv::standard(map, 1, 0.95, 0.0).unwrap();
        let partition = partition_from_blocks(env.map(), 1, 6).unwrap();
        let topo = compute_topology(&env, &partition);
        // Counting adjacent pairs suffices; no need to solve here.
        for agent in AgentRole::BOTH {
            let pair_count: usize = (0..36).map(|g| topo.adjacent(agent, g).len()).sum();
            assert!(pair_count <= 4 * 36);
            assert_eq!(pair_count, 2 * 2 * 6 * 5);
        }
    }
}
