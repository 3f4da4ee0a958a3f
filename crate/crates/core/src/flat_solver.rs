//! Shapley value iteration for zero-sum Markov games, plus policy
//! evaluation, best responses, and exploitability.
//!
//! The solver performs synchronous (Jacobi) sweeps: each sweep rebuilds the
//! Q-matrix of every non-terminal state from the previous value vector and
//! solves its matrix game, so the update is a sup-norm contraction with
//! factor at most the discount. Terminal states never enter the sweep; they
//! take their closed-form absorbing value up front.

use rayon::prelude::*;
use thiserror::Error;

use crate::gridworld::{AgentRole, JointState, PegEnv};
use crate::matrix_game::{self, MatrixGameError, MixedPolicy, QMatrix};

/// A finite zero-sum Markov game in flattened joint form. Action counts may
/// vary per state (the aggregated game's option menus do); transition rows
/// are generated on demand so large joint kernels are never materialized.
pub trait ZeroSumGame: Sync {
    fn num_states(&self) -> usize;

    /// (maximizer, minimizer) action counts at `state`.
    fn num_actions(&self, state: usize) -> (usize, usize);

    fn is_terminal(&self, state: usize) -> bool;

    fn reward(&self, state: usize) -> f64;

    fn discount(&self) -> f64;

    /// True when transition rows already carry the discount (sub-stochastic
    /// rows); the backup then applies no extra discount factor.
    fn discount_in_transitions(&self) -> bool {
        false
    }

    /// Value of an absorbing state: the recurring reward series by default.
    fn terminal_value(&self, state: usize) -> f64 {
        self.reward(state) / (1.0 - self.discount())
    }

    /// Append the sparse transition row for (state, a1, a2) to `out`.
    fn transitions(&self, state: usize, a1: usize, a2: usize, out: &mut Vec<(usize, f64)>);
}

/// Values indexed by state.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    pub values: Vec<f64>,
}

/// One agent's mixed policy, one distribution per state.
#[derive(Debug, Clone, PartialEq)]
pub struct StagePolicy {
    pub per_state: Vec<MixedPolicy>,
}

/// Instrumentation of a solve: every sweep solves one matrix game per
/// non-terminal state, so `lp_count = lp_per_iteration * iterations`.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    pub final_residual: f64,
    pub lp_count: u64,
    pub lp_per_iteration: u64,
}

#[derive(Debug, Clone)]
pub struct FlatSolution {
    pub values: ValueTable,
    pub pursuer: StagePolicy,
    pub evader: StagePolicy,
    pub stats: SolveStats,
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("value iteration did not reach tol {tol:e} within {iterations} sweeps (residual {residual:e})")]
    NotConverged {
        iterations: usize,
        residual: f64,
        tol: f64,
    },
    #[error("tolerance must be positive, got {0}")]
    BadTolerance(f64),
    #[error("policy covers {found} states, game has {expected}")]
    PolicyLength { found: usize, expected: usize },
    #[error(transparent)]
    MatrixGame(#[from] MatrixGameError),
}

/// Default sup-norm convergence tolerance.
pub const DEFAULT_TOL: f64 = 1e-6;
/// Default sweep cap.
pub const DEFAULT_MAX_ITERS: usize = 10_000;
/// Tolerance passed to the per-state matrix-game solves. Q-matrix entries
/// scale up to the discounted value bound (~20 at discount 0.95), so this is
/// looser than the matrix solver's public default, which targets unit-scale
/// payoffs.
pub const LP_TOL: f64 = 1e-8;

/// Driver for the value-iteration sweeps. `shapley_solve` is the one-call
/// wrapper; tests drive sweeps manually to observe the iterates.
pub struct ShapleySolver<'a, G: ZeroSumGame> {
    game: &'a G,
    values: Vec<f64>,
    pursuer: Vec<MixedPolicy>,
    evader: Vec<MixedPolicy>,
    non_terminal: Vec<usize>,
    sweeps: usize,
    lp_count: u64,
    last_residual: f64,
    prev_residual: f64,
}

impl<'a, G: ZeroSumGame> ShapleySolver<'a, G> {
    pub fn new(game: &'a G) -> Self {
        let n = game.num_states();
        let mut values = vec![0.0; n];
        let mut pursuer = Vec::with_capacity(n);
        let mut evader = Vec::with_capacity(n);
        let mut non_terminal = Vec::new();
        for s in 0..n {
            let (a1, a2) = game.num_actions(s);
            pursuer.push(MixedPolicy::uniform(a1));
            evader.push(MixedPolicy::uniform(a2));
            if game.is_terminal(s) {
                values[s] = game.terminal_value(s);
            } else {
                non_terminal.push(s);
            }
        }
        ShapleySolver {
            game,
            values,
            pursuer,
            evader,
            non_terminal,
            sweeps: 0,
            lp_count: 0,
            last_residual: f64::INFINITY,
            prev_residual: f64::INFINITY,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sweeps(&self) -> usize {
        self.sweeps
    }

    pub fn lp_per_iteration(&self) -> u64 {
        self.non_terminal.len() as u64
    }

    /// One synchronous sweep; returns the sup-norm value change.
    pub fn sweep(&mut self) -> Result<f64, MatrixGameError> {
        let game = self.game;
        let coef = if game.discount_in_transitions() {
            1.0
        } else {
            game.discount()
        };
        let values = &self.values;
        let updates: Result<Vec<_>, MatrixGameError> = self
            .non_terminal
            .par_iter()
            .map(|&s| {
                let (m, n) = game.num_actions(s);
                let reward = game.reward(s);
                let mut row = Vec::new();
                let mut q = Vec::with_capacity(m * n);
                for a1 in 0..m {
                    for a2 in 0..n {
                        row.clear();
                        game.transitions(s, a1, a2, &mut row);
                        let mut expect = 0.0;
                        for &(t, p) in &row {
                            expect += p * values[t];
                        }
                        q.push(reward + coef * expect);
                    }
                }
                let sol = matrix_game::solve_matrix_game(&QMatrix::from_flat(m, n, q)?, LP_TOL)?;
                Ok((s, sol))
            })
            .collect();
        let updates = updates?;

        let mut residual = 0.0f64;
        for (s, sol) in updates {
            residual = residual.max((sol.value - self.values[s]).abs());
            self.values[s] = sol.value;
            self.pursuer[s] = sol.row_policy;
            self.evader[s] = sol.col_policy;
        }
        self.lp_count += self.non_terminal.len() as u64;
        self.sweeps += 1;
        self.prev_residual = self.last_residual;
        self.last_residual = residual;
        if self.sweeps >= 2 && self.prev_residual.is_finite() {
            // Contraction of the synchronous sweep, with slack for the
            // matrix-game solves' rounding.
            assert!(
                residual <= self.game.discount() * self.prev_residual + 10.0 * LP_TOL,
                "sweep {} violated contraction: {} > {} * {}",
                self.sweeps,
                residual,
                self.game.discount(),
                self.prev_residual
            );
        }
        Ok(residual)
    }

    pub fn into_solution(self) -> FlatSolution {
        let lp_per_iteration = self.non_terminal.len() as u64;
        FlatSolution {
            values: ValueTable {
                values: self.values,
            },
            pursuer: StagePolicy {
                per_state: self.pursuer,
            },
            evader: StagePolicy {
                per_state: self.evader,
            },
            stats: SolveStats {
                iterations: self.sweeps,
                final_residual: self.last_residual,
                lp_count: self.lp_count,
                lp_per_iteration,
            },
        }
    }
}

/// Solve the game to its Nash values and per-state Nash policies by Shapley
/// value iteration from zero, stopping when the sup-norm change drops below
/// `tol`.
pub fn shapley_solve<G: ZeroSumGame>(
    game: &G,
    tol: f64,
    max_iters: usize,
) -> Result<FlatSolution, SolveError> {
    if !(tol > 0.0) {
        return Err(SolveError::BadTolerance(tol));
    }
    let mut solver = ShapleySolver::new(game);
    loop {
        let residual = solver.sweep()?;
        if residual < tol {
            return Ok(solver.into_solution());
        }
        if solver.sweeps() >= max_iters {
            return Err(SolveError::NotConverged {
                iterations: solver.sweeps(),
                residual,
                tol,
            });
        }
    }
}

fn check_policy_len<G: ZeroSumGame>(game: &G, policy: &StagePolicy) -> Result<(), SolveError> {
    if policy.per_state.len() != game.num_states() {
        return Err(SolveError::PolicyLength {
            found: policy.per_state.len(),
            expected: game.num_states(),
        });
    }
    Ok(())
}

/// Evaluate a fixed policy pair by iterating the linear backup to `tol`.
pub fn policy_evaluation<G: ZeroSumGame>(
    game: &G,
    pursuer: &StagePolicy,
    evader: &StagePolicy,
    tol: f64,
    max_iters: usize,
) -> Result<ValueTable, SolveError> {
    if !(tol > 0.0) {
        return Err(SolveError::BadTolerance(tol));
    }
    check_policy_len(game, pursuer)?;
    check_policy_len(game, evader)?;
    let coef = if game.discount_in_transitions() {
        1.0
    } else {
        game.discount()
    };
    let n = game.num_states();
    let mut values = vec![0.0; n];
    let mut non_terminal = Vec::new();
    for s in 0..n {
        if game.is_terminal(s) {
            values[s] = game.terminal_value(s);
        } else {
            non_terminal.push(s);
        }
    }
    for iter in 1..=max_iters {
        let snapshot = &values;
        let updates: Vec<(usize, f64)> = non_terminal
            .par_iter()
            .map(|&s| {
                let (m, nn) = game.num_actions(s);
                let mut row = Vec::new();
                let mut total = game.reward(s);
                for a1 in 0..m {
                    let p1 = pursuer.per_state[s].probs[a1];
                    if p1 == 0.0 {
                        continue;
                    }
                    for a2 in 0..nn {
                        let p2 = evader.per_state[s].probs[a2];
                        if p2 == 0.0 {
                            continue;
                        }
                        row.clear();
                        game.transitions(s, a1, a2, &mut row);
                        let mut expect = 0.0;
                        for &(t, p) in &row {
                            expect += p * snapshot[t];
                        }
                        total += coef * p1 * p2 * expect;
                    }
                }
                (s, total)
            })
            .collect();
        let mut residual = 0.0f64;
        for (s, v) in updates {
            residual = residual.max((v - values[s]).abs());
            values[s] = v;
        }
        if residual < tol {
            return Ok(ValueTable { values });
        }
        if iter == max_iters {
            return Err(SolveError::NotConverged {
                iterations: iter,
                residual,
                tol,
            });
        }
    }
    Ok(ValueTable { values })
}

/// Optimal value of `role` against a fixed opponent policy: marginalizing
/// the opponent's mixture collapses the game to a single-agent MDP, solved
/// here by value iteration. Values stay in pursuer-payoff units, so the
/// evader's best response minimizes.
pub fn best_response<G: ZeroSumGame>(
    game: &G,
    opponent: &StagePolicy,
    role: AgentRole,
    tol: f64,
    max_iters: usize,
) -> Result<ValueTable, SolveError> {
    if !(tol > 0.0) {
        return Err(SolveError::BadTolerance(tol));
    }
    check_policy_len(game, opponent)?;
    let coef = if game.discount_in_transitions() {
        1.0
    } else {
        game.discount()
    };
    let n = game.num_states();
    let mut values = vec![0.0; n];
    let mut non_terminal = Vec::new();
    for s in 0..n {
        if game.is_terminal(s) {
            values[s] = game.terminal_value(s);
        } else {
            non_terminal.push(s);
        }
    }
    for iter in 1..=max_iters {
        let snapshot = &values;
        let updates: Vec<(usize, f64)> = non_terminal
            .par_iter()
            .map(|&s| {
                let (m, nn) = game.num_actions(s);
                let (own, other) = match role {
                    AgentRole::Pursuer => (m, nn),
                    AgentRole::Evader => (nn, m),
                };
                let mut row = Vec::new();
                let mut best = match role {
                    AgentRole::Pursuer => f64::NEG_INFINITY,
                    AgentRole::Evader => f64::INFINITY,
                };
                for a in 0..own {
                    let mut expect = 0.0;
                    for b in 0..other {
                        let pb = opponent.per_state[s].probs[b];
                        if pb == 0.0 {
                            continue;
                        }
                        let (a1, a2) = match role {
                            AgentRole::Pursuer => (a, b),
                            AgentRole::Evader => (b, a),
                        };
                        row.clear();
                        game.transitions(s, a1, a2, &mut row);
                        let mut mass = 0.0;
                        for &(t, p) in &row {
                            mass += p * snapshot[t];
                        }
                        expect += pb * mass;
                    }
                    let q = game.reward(s) + coef * expect;
                    best = match role {
                        AgentRole::Pursuer => best.max(q),
                        AgentRole::Evader => best.min(q),
                    };
                }
                (s, best)
            })
            .collect();
        let mut residual = 0.0f64;
        for (s, v) in updates {
            residual = residual.max((v - values[s]).abs());
            values[s] = v;
        }
        if residual < tol {
            return Ok(ValueTable { values });
        }
        if iter == max_iters {
            return Err(SolveError::NotConverged {
                iterations: iter,
                residual,
                tol,
            });
        }
    }
    Ok(ValueTable { values })
}

/// How much a best-responding opponent gains over the pair's own value:
/// `max_s max(BR_pursuer(s) - V(s), V(s) - BR_evader(s))`. Nonnegative up to
/// solver tolerance, and zero exactly at a Nash equilibrium.
pub fn exploitability<G: ZeroSumGame>(
    game: &G,
    pursuer: &StagePolicy,
    evader: &StagePolicy,
    tol: f64,
    max_iters: usize,
) -> Result<f64, SolveError> {
    let value = policy_evaluation(game, pursuer, evader, tol, max_iters)?;
    let br_pursuer = best_response(game, evader, AgentRole::Pursuer, tol, max_iters)?;
    let br_evader = best_response(game, pursuer, AgentRole::Evader, tol, max_iters)?;
    let mut worst = f64::NEG_INFINITY;
    for s in 0..game.num_states() {
        worst = worst
            .max(br_pursuer.values[s] - value.values[s])
            .max(value.values[s] - br_evader.values[s]);
    }
    Ok(worst)
}

/// The full joint game of an environment, viewed lazily: transition rows are
/// products of the two individual kernels, built per query.
pub struct JointPegGame<'a> {
    env: &'a PegEnv,
}

impl<'a> JointPegGame<'a> {
    pub fn new(env: &'a PegEnv) -> Self {
        JointPegGame { env }
    }

    pub fn env(&self) -> &PegEnv {
        self.env
    }
}

impl ZeroSumGame for JointPegGame<'_> {
    fn num_states(&self) -> usize {
        self.env.n_joint_states()
    }

    fn num_actions(&self, _state: usize) -> (usize, usize) {
        (
            self.env.actions(AgentRole::Pursuer).len(),
            self.env.actions(AgentRole::Evader).len(),
        )
    }

    fn is_terminal(&self, state: usize) -> bool {
        self.env.is_capture(self.env.joint_state(state))
    }

    fn reward(&self, state: usize) -> f64 {
        self.env.reward(self.env.joint_state(state))
    }

    fn discount(&self) -> f64 {
        self.env.discount()
    }

    fn transitions(&self, state: usize, a1: usize, a2: usize, out: &mut Vec<(usize, f64)>) {
        let s = self.env.joint_state(state);
        if self.env.is_capture(s) {
            out.push((state, 1.0));
            return;
        }
        let n = self.env.n_cells();
        let row1 = self.env.individual_transition(AgentRole::Pursuer, s.pursuer, a1);
        let row2 = self.env.individual_transition(AgentRole::Evader, s.evader, a2);
        for &(t1, p1) in row1 {
            for &(t2, p2) in row2 {
                out.push((t1 * n + t2, p1 * p2));
            }
        }
    }
}

/// A fully materialized game over tabulated rows. Local games and test
/// fixtures use this form; rows of terminal states are implicit self-loops.
#[derive(Debug, Clone)]
pub struct TableGame {
    pub n_actions1: usize,
    pub n_actions2: usize,
    pub rows: Vec<Vec<(usize, f64)>>,
    pub reward: Vec<f64>,
    pub terminal: Vec<bool>,
    pub discount: f64,
}

impl TableGame {
    pub fn row(&self, state: usize, a1: usize, a2: usize) -> &[(usize, f64)] {
        &self.rows[(state * self.n_actions1 + a1) * self.n_actions2 + a2]
    }
}

impl ZeroSumGame for TableGame {
    fn num_states(&self) -> usize {
        self.reward.len()
    }

    fn num_actions(&self, _state: usize) -> (usize, usize) {
        (self.n_actions1, self.n_actions2)
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

    fn transitions(&self, state: usize, a1: usize, a2: usize, out: &mut Vec<(usize, f64)>) {
        if self.terminal[state] {
            out.push((state, 1.0));
            return;
        }
        out.extend_from_slice(self.row(state, a1, a2));
    }
}

/// Convenience: joint state of the environment game for a flat state index.
pub fn joint_state_of(env: &PegEnv, index: usize) -> JointState {
    env.joint_state(index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::{open_world, GridMap};

    fn env_3x3() -> PegEnv {
        let map = GridMap::parse(&open_world(3, 3)).unwrap();
        PegEnv::standard(map, 1, 0.95, 0.0).unwrap()
    }

    #[test]
    fn absorbing_unit_reward_state_value() {
        let env = env_3x3();
        let game = JointPegGame::new(&env);
        let sol = shapley_solve(&game, 1e-9, 10_000).unwrap();
        for s in 0..game.num_states() {
            if game.is_terminal(s) {
                assert!((sol.values.values[s] - 20.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn unreachable_reward_gives_zero_value() {
        // Two states, no reward anywhere, trivially absorbing dynamics.
        let game = TableGame {
            n_actions1: 2,
            n_actions2: 2,
            rows: (0..8).map(|_| vec![(0usize, 1.0)]).collect(),
            reward: vec![0.0, 0.0],
            terminal: vec![false, false],
            discount: 0.9,
        };
        let sol = shapley_solve(&game, 1e-10, 1000).unwrap();
        assert_eq!(sol.values.values, vec![0.0, 0.0]);
    }

    #[test]
    fn lp_count_identity() {
        let env = env_3x3();
        let game = JointPegGame::new(&env);
        let sol = shapley_solve(&game, 1e-6, 10_000).unwrap();
        let n_terminal = (0..game.num_states()).filter(|&s| game.is_terminal(s)).count();
        assert_eq!(
            sol.stats.lp_per_iteration,
            (game.num_states() - n_terminal) as u64
        );
        assert_eq!(
            sol.stats.lp_count,
            sol.stats.lp_per_iteration * sol.stats.iterations as u64
        );
    }

    #[test]
    fn monotone_from_zero_and_bounded() {
        let env = env_3x3();
        let game = JointPegGame::new(&env);
        let mut solver = ShapleySolver::new(&game);
        let mut prev = solver.values().to_vec();
        for _ in 0..40 {
            solver.sweep().unwrap();
            let cur = solver.values();
            for (a, b) in prev.iter().zip(cur) {
                assert!(*b >= *a - 1e-12);
                assert!(*b <= 1.0 / (1.0 - 0.95) + 1e-9);
                assert!(*b >= 0.0);
            }
            prev = cur.to_vec();
        }
    }

    #[test]
    fn policy_evaluation_consistency() {
        let env = env_3x3();
        let game = JointPegGame::new(&env);
        let tol = 1e-9;
        let sol = shapley_solve(&game, tol, 10_000).unwrap();
        let eval = policy_evaluation(&game, &sol.pursuer, &sol.evader, tol, 100_000).unwrap();
        for (a, b) in sol.values.values.iter().zip(&eval.values) {
            assert!((a - b).abs() < 10.0 * tol * 20.0, "{a} vs {b}");
        }
    }

    #[test]
    fn best_response_to_nash_matches_value() {
        let env = env_3x3();
        let game = JointPegGame::new(&env);
        let tol = 1e-9;
        let sol = shapley_solve(&game, tol, 10_000).unwrap();
        let br = best_response(&game, &sol.evader, AgentRole::Pursuer, tol, 100_000).unwrap();
        for (a, b) in sol.values.values.iter().zip(&br.values) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn best_response_to_stay_evader_dominates_nash() {
        let env = env_3x3();
        let game = JointPegGame::new(&env);
        let sol = shapley_solve(&game, 1e-9, 10_000).unwrap();
        // Evader always stays.
        let mut probs = vec![0.0; 5];
        probs[0] = 1.0;
        let stay = StagePolicy {
            per_state: (0..game.num_states())
                .map(|_| MixedPolicy {
                    probs: probs.clone(),
                })
                .collect(),
        };
        let br = best_response(&game, &stay, AgentRole::Pursuer, 1e-9, 100_000).unwrap();
        for (nash, b) in sol.values.values.iter().zip(&br.values) {
            assert!(*b >= nash - 1e-7);
        }
    }

    #[test]
    fn exploitability_of_nash_near_zero_and_corruption_positive() {
        let env = env_3x3();
        let game = JointPegGame::new(&env);
        let sol = shapley_solve(&game, 1e-9, 10_000).unwrap();
        let e = exploitability(&game, &sol.pursuer, &sol.evader, 1e-9, 100_000).unwrap();
        assert!(e >= -1e-7);
        assert!(e <= 1e-6, "exploitability {e}");

        // Corrupt the pursuer at one non-terminal state: force "stay".
        let mut corrupted = sol.pursuer.clone();
        let s = (0..game.num_states())
            .find(|&s| !game.is_terminal(s))
            .unwrap();
        let mut probs = vec![0.0; 9];
        probs[0] = 1.0;
        corrupted.per_state[s] = MixedPolicy { probs };
        let e2 = exploitability(&game, &corrupted, &sol.evader, 1e-9, 100_000).unwrap();
        assert!(e2 > 1e-4, "corrupted exploitability {e2}");
    }

    #[test]
    fn single_decision_state_matches_matrix_saddle_residual() {
        // State 0 is the only decision point; each joint action leads to a
        // distinct absorbing state whose value realizes one matrix entry:
        // Q = [[1, -2], [0.5, 3]] with beta = 0.5 and absorbing values 2r.
        let q_entries = [[1.0, -2.0], [0.5, 3.0]];
        let mut rows = Vec::new();
        for a1 in 0..2usize {
            for a2 in 0..2usize {
                rows.push(vec![(1 + a1 * 2 + a2, 1.0)]);
            }
        }
        let mut reward = vec![0.0];
        let mut terminal = vec![false];
        for a1 in 0..2 {
            for a2 in 0..2 {
                // terminal value = r / (1 - beta) = 2r; Q = beta * 2r = r.
                reward.push(q_entries[a1][a2]);
                terminal.push(true);
            }
        }
        let game = TableGame {
            n_actions1: 2,
            n_actions2: 2,
            rows,
            reward,
            terminal,
            discount: 0.5,
        };
        let uniform = StagePolicy {
            per_state: (0..5).map(|_| MixedPolicy::uniform(2)).collect(),
        };
        let e = exploitability(&game, &uniform, &uniform, 1e-12, 10_000).unwrap();
        // Saddle residual of the uniform pair on Q, by hand:
        // value 0.625, best row 1.75, best column 0.5 -> max(1.125, 0.125).
        assert!((e - 1.125).abs() < 1e-9, "exploitability {e}");
    }

    #[test]
    fn reports_non_convergence() {
        // A corridor world whose values need many sweeps to propagate.
        let map = GridMap::parse(&crate::gridworld::room_world(2, 1, 3)).unwrap();
        let env = PegEnv::standard(map, 1, 0.95, 0.0).unwrap();
        let game = JointPegGame::new(&env);
        match shapley_solve(&game, 1e-12, 3) {
            Err(SolveError::NotConverged {
                iterations,
                residual,
                ..
            }) => {
                assert_eq!(iterations, 3);
                assert!(residual > 0.0);
            }
            other => panic!("expected NotConverged, got {other:?}"),
        }
    }
}
