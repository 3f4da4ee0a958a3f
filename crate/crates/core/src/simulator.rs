//! Episode execution: flat Nash and hierarchical controllers, seeded
//! episodes, head-to-head matchups, and their CSV exports.
//!
//! A hierarchical controller is stateful: inside a superstate with a local
//! game it samples the local Nash policy; elsewhere it holds an option
//! chosen from the aggregated Nash policy and replays that option's
//! deterministic action until the joint superstate changes.

use std::collections::BTreeMap;
use std::fmt;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::abstraction::{
    compute_topology, JointSuperstate, Partition, SuperstateTopology,
};
use crate::aggregated_game::{
    build_and_solve_aggregated, AggregatedError, TerminalValueMode,
};
use crate::flat_solver::{SolveStats, StagePolicy};
use crate::matrix_game::MixedPolicy;
use crate::gridworld::{AgentRole, JointState, PegEnv};
use crate::local_games::{
    build_local_game, enumerate_terminal_superstates, solve_local_games, LocalGameError,
    LocalSolution,
};
use crate::options::{build_all_options, OptionDef, OptionError, OptionSet};

#[derive(Debug, Error)]
pub enum HierError {
    #[error(transparent)]
    Option(#[from] OptionError),
    #[error(transparent)]
    LocalGame(#[from] LocalGameError),
    #[error(transparent)]
    Aggregated(#[from] AggregatedError),
    #[error(transparent)]
    Solve(#[from] crate::flat_solver::SolveError),
}

/// Tolerances and switches for the hierarchical pipeline.
#[derive(Debug, Clone, Copy)]
pub struct HierConfig {
    pub tol: f64,
    pub phi_tol: f64,
    pub max_iters: usize,
    pub terminal_mode: TerminalValueMode,
}

impl Default for HierConfig {
    fn default() -> Self {
        HierConfig {
            tol: crate::flat_solver::DEFAULT_TOL,
            phi_tol: 1e-9,
            max_iters: crate::flat_solver::DEFAULT_MAX_ITERS,
            terminal_mode: TerminalValueMode::FixedReward,
        }
    }
}

/// Per-phase instrumentation of a hierarchical solve, one row per phase of
/// the pipeline (options, local games, aggregated game).
#[derive(Debug, Clone)]
pub struct HierStats {
    pub option_count: usize,
    pub option_seconds: f64,
    pub local_game_count: usize,
    pub local_lp_total: u64,
    /// Largest per-sweep LP count among the local games.
    pub local_lp_per_iteration_max: u64,
    pub local_seconds: f64,
    pub local_stats: Vec<((usize, usize), SolveStats)>,
    pub aggregated_lp_per_iteration: u64,
    pub aggregated_lp_total: u64,
    pub aggregated_iterations: usize,
    pub phi_tuples: usize,
    pub aggregated_seconds: f64,
}

impl HierStats {
    /// Matrix games per "iteration" of the whole pipeline: the largest local
    /// game plus the aggregated game.
    pub fn lp_per_iteration(&self) -> u64 {
        self.local_lp_per_iteration_max + self.aggregated_lp_per_iteration
    }
}

/// The aggregated game's Nash policy in deployable form: per joint
/// superstate, a mixed policy over each agent's option menu (ordered as in
/// the `OptionSet`), plus the solved values and rewards for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedPolicy {
    pub n_rooms: usize,
    pub values: Vec<f64>,
    pub reward: Vec<f64>,
    pub terminal: Vec<bool>,
    pub pursuer: Vec<MixedPolicy>,
    pub evader: Vec<MixedPolicy>,
}

impl AggregatedPolicy {
    pub fn state_index(&self, gamma: JointSuperstate) -> usize {
        gamma.pursuer_room * self.n_rooms + gamma.evader_room
    }
}

/// The deployable two-resolution policy: options, local-game Nash policies,
/// and the aggregated Nash policy over options.
#[derive(Debug, Clone)]
pub struct HierPolicy {
    pub partition: Partition,
    pub topology: SuperstateTopology,
    pub options: OptionSet,
    pub locals: BTreeMap<JointSuperstate, LocalSolution>,
    pub aggregated: AggregatedPolicy,
}

impl HierPolicy {
    /// Run the hierarchical pipeline: build and solve the options, the local
    /// games, then the aggregated game.
    pub fn build(
        env: &PegEnv,
        partition: Partition,
        config: HierConfig,
    ) -> Result<(HierPolicy, HierStats), HierError> {
        let topology = compute_topology(env, &partition);

        let start = Instant::now();
        let options = build_all_options(env, &partition, &topology, config.tol, config.max_iters)?;
        let option_seconds = start.elapsed().as_secs_f64();
        let option_count =
            options.total(AgentRole::Pursuer) + options.total(AgentRole::Evader);

        let start = Instant::now();
        let terminal_superstates = enumerate_terminal_superstates(env, &partition);
        let games: Result<Vec<_>, LocalGameError> = terminal_superstates
            .iter()
            .map(|&gamma| build_local_game(env, &partition, &topology, gamma))
            .collect();
        let games = games?;
        let locals = solve_local_games(&games, config.tol, config.max_iters)?;
        let local_seconds = start.elapsed().as_secs_f64();
        let local_stats: Vec<((usize, usize), SolveStats)> = terminal_superstates
            .iter()
            .map(|g| {
                (
                    (g.pursuer_room, g.evader_room),
                    locals[g].stats.clone(),
                )
            })
            .collect();
        let local_lp_total = local_stats.iter().map(|(_, s)| s.lp_count).sum();
        let local_lp_per_iteration_max = local_stats
            .iter()
            .map(|(_, s)| s.lp_per_iteration)
            .max()
            .unwrap_or(0);

        let start = Instant::now();
        let (aggregated_game, aggregated) = build_and_solve_aggregated(
            env,
            &partition,
            &topology,
            &options,
            &locals,
            config.phi_tol,
            config.tol,
            config.max_iters,
            config.terminal_mode,
        )?;
        let aggregated_seconds = start.elapsed().as_secs_f64();

        let stats = HierStats {
            option_count,
            option_seconds,
            local_game_count: games.len(),
            local_lp_total,
            local_lp_per_iteration_max,
            local_seconds,
            local_stats,
            aggregated_lp_per_iteration: aggregated.stats.lp_per_iteration,
            aggregated_lp_total: aggregated.stats.lp_count,
            aggregated_iterations: aggregated.stats.iterations,
            phi_tuples: aggregated.phi_tuples,
            aggregated_seconds,
        };
        let aggregated = AggregatedPolicy {
            n_rooms: aggregated_game.n_rooms,
            values: aggregated.values.values,
            reward: aggregated_game.reward.clone(),
            terminal: aggregated_game.terminal.clone(),
            pursuer: aggregated.pursuer.per_state,
            evader: aggregated.evader.per_state,
        };
        Ok((
            HierPolicy {
                partition,
                topology,
                options,
                locals,
                aggregated,
            },
            stats,
        ))
    }

    pub fn superstate_of(&self, s: JointState) -> JointSuperstate {
        JointSuperstate::of(&self.partition, s)
    }
}

/// What a controller was doing when it emitted an action.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeTag {
    /// Sampling the flat Nash policy.
    Flat,
    /// Sampling a local-game Nash policy.
    Local,
    /// Replaying an option's deterministic policy.
    Option { source: usize, target: usize },
    /// Sentinel for the final trajectory row.
    End,
}

impl fmt::Display for ModeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModeTag::Flat => write!(f, "flat"),
            ModeTag::Local => write!(f, "local"),
            ModeTag::Option { source, target } => write!(f, "opt{source}>{target}"),
            ModeTag::End => write!(f, "end"),
        }
    }
}

impl ModeTag {
    pub fn parse(text: &str) -> Option<ModeTag> {
        match text {
            "flat" => Some(ModeTag::Flat),
            "local" => Some(ModeTag::Local),
            "end" => Some(ModeTag::End),
            other => {
                let rest = other.strip_prefix("opt")?;
                let (source, target) = rest.split_once('>')?;
                Some(ModeTag::Option {
                    source: source.parse().ok()?,
                    target: target.parse().ok()?,
                })
            }
        }
    }
}

/// Which policy drives an agent.
#[derive(Clone, Copy)]
pub enum ControllerSpec<'a> {
    FlatNash(&'a StagePolicy),
    Hierarchical(&'a HierPolicy),
}

impl ControllerSpec<'_> {
    pub fn kind(&self) -> &'static str {
        match self {
            ControllerSpec::FlatNash(_) => "nash",
            ControllerSpec::Hierarchical(_) => "hier",
        }
    }
}

/// Per-episode controller state for one agent.
pub struct Controller<'a> {
    role: AgentRole,
    spec: ControllerSpec<'a>,
    running: Option<(JointSuperstate, &'a OptionDef)>,
}

impl<'a> Controller<'a> {
    pub fn new(role: AgentRole, spec: ControllerSpec<'a>) -> Self {
        Controller {
            role,
            spec,
            running: None,
        }
    }

    /// Choose a primitive action at the (non-terminal) joint state `s`.
    pub fn step(&mut self, env: &PegEnv, s: JointState, rng: &mut ChaCha8Rng) -> (usize, ModeTag) {
        match self.spec {
            ControllerSpec::FlatNash(policy) => {
                let action = policy.per_state[env.joint_index(s)].sample(rng);
                (action, ModeTag::Flat)
            }
            ControllerSpec::Hierarchical(hier) => {
                let gamma = hier.superstate_of(s);
                if let Some(local) = hier.locals.get(&gamma) {
                    self.running = None;
                    let pos = local
                        .position_of(env.joint_index(s))
                        .expect("current state outside its local game");
                    let policy = match self.role {
                        AgentRole::Pursuer => &local.pursuer,
                        AgentRole::Evader => &local.evader,
                    };
                    (policy.per_state[pos].sample(rng), ModeTag::Local)
                } else {
                    // Terminate the running option when the joint superstate
                    // it was selected in has changed.
                    let stale = self
                        .running
                        .map_or(true, |(selected_at, _)| selected_at != gamma);
                    if stale {
                        let state = hier.aggregated.state_index(gamma);
                        let policy = match self.role {
                            AgentRole::Pursuer => &hier.aggregated.pursuer,
                            AgentRole::Evader => &hier.aggregated.evader,
                        };
                        let menu_index = policy[state].sample(rng);
                        let room = match self.role {
                            AgentRole::Pursuer => gamma.pursuer_room,
                            AgentRole::Evader => gamma.evader_room,
                        };
                        let option = &hier.options.at(self.role, room)[menu_index];
                        self.running = Some((gamma, option));
                    }
                    let (_, option) = self.running.expect("option just selected");
                    let cell = match self.role {
                        AgentRole::Pursuer => s.pursuer,
                        AgentRole::Evader => s.evader,
                    };
                    let action = option
                        .action_at(cell)
                        .expect("agent cell outside its option domain");
                    (
                        action,
                        ModeTag::Option {
                            source: option.source,
                            target: option.target,
                        },
                    )
                }
            }
        }
    }
}

/// One trajectory row: the joint state at `step` and the actions taken
/// there. The final row carries the end state with no actions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepRecord {
    pub step: usize,
    pub pursuer_cell: usize,
    pub evader_cell: usize,
    pub pursuer_action: Option<usize>,
    pub evader_action: Option<usize>,
    pub pursuer_mode: ModeTag,
    pub evader_mode: ModeTag,
    pub pursuer_room: usize,
    pub evader_room: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub steps: usize,
    pub captured: bool,
    pub seed: u64,
    pub trajectory: Vec<StepRecord>,
}

/// Run one episode. All randomness flows from the seed through one
/// generator, in a fixed draw order: initial state (rejection-sampled until
/// non-terminal), then per step the pursuer's policy draw, the evader's
/// policy draw, and the kernel draw (pursuer's move then evader's).
pub fn run_episode(
    env: &PegEnv,
    pursuer: &mut Controller,
    evader: &mut Controller,
    seed: u64,
    step_cap: usize,
) -> EpisodeResult {
    assert!(step_cap > 0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = env.n_cells();
    let mut s = loop {
        let p = rng.gen_range(0..n);
        let e = rng.gen_range(0..n);
        let s = JointState {
            pursuer: p,
            evader: e,
        };
        if !env.is_capture(s) {
            break s;
        }
    };

    let partition = partition_of(pursuer, evader);
    let rooms = |s: JointState| match partition {
        Some(p) => (p.label(s.pursuer), p.label(s.evader)),
        None => (0, 0),
    };
    let mut trajectory = Vec::new();
    let mut steps = 0;
    let mut captured = false;
    loop {
        let (room1, room2) = rooms(s);
        let (a1, mode1) = pursuer.step(env, s, &mut rng);
        let (a2, mode2) = evader.step(env, s, &mut rng);
        trajectory.push(StepRecord {
            step: steps,
            pursuer_cell: s.pursuer,
            evader_cell: s.evader,
            pursuer_action: Some(a1),
            evader_action: Some(a2),
            pursuer_mode: mode1,
            evader_mode: mode2,
            pursuer_room: room1,
            evader_room: room2,
        });
        let next_p = sample_row(env.individual_transition(AgentRole::Pursuer, s.pursuer, a1), &mut rng);
        let next_e = sample_row(env.individual_transition(AgentRole::Evader, s.evader, a2), &mut rng);
        s = JointState {
            pursuer: next_p,
            evader: next_e,
        };
        steps += 1;
        if env.is_capture(s) {
            captured = true;
            break;
        }
        if steps >= step_cap {
            break;
        }
    }
    let (room1, room2) = rooms(s);
    trajectory.push(StepRecord {
        step: steps,
        pursuer_cell: s.pursuer,
        evader_cell: s.evader,
        pursuer_action: None,
        evader_action: None,
        pursuer_mode: ModeTag::End,
        evader_mode: ModeTag::End,
        pursuer_room: room1,
        evader_room: room2,
    });
    EpisodeResult {
        steps,
        captured,
        seed,
        trajectory,
    }
}

/// Room labels for trajectory records come from whichever controller is
/// hierarchical; flat-only matchups record room 0 for both agents.
fn partition_of<'a>(pursuer: &Controller<'a>, evader: &Controller<'a>) -> Option<&'a Partition> {
    for c in [pursuer, evader] {
        if let ControllerSpec::Hierarchical(h) = c.spec {
            return Some(&h.partition);
        }
    }
    None
}

fn sample_row(row: &[(usize, f64)], rng: &mut ChaCha8Rng) -> usize {
    let r: f64 = rng.gen::<f64>();
    let mut cum = 0.0;
    for &(t, p) in row {
        cum += p;
        if r < cum {
            return t;
        }
    }
    row.last().expect("empty transition row").0
}

/// Summary statistics of one matchup. Mean and standard deviation cover
/// captured episodes only; episodes censored at the step cap are counted
/// separately.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchupRow {
    pub pursuer: String,
    pub evader: String,
    pub episodes: usize,
    pub captured: usize,
    pub capture_rate: f64,
    pub mean_steps: f64,
    pub std_steps: f64,
    pub censored: usize,
    pub base_seed: u64,
}

impl MatchupRow {
    pub fn label(&self) -> String {
        format!("{}-vs-{}", self.pursuer, self.evader)
    }

    /// Standard error of the mean over captured episodes.
    pub fn std_error(&self) -> f64 {
        if self.captured == 0 {
            return f64::NAN;
        }
        self.std_steps / (self.captured as f64).sqrt()
    }
}

#[derive(Debug, Clone, Default)]
pub struct MatchupReport {
    pub rows: Vec<MatchupRow>,
}

/// Run `n_episodes` seeded episodes of one pairing; episodes are independent
/// and run concurrently, seeded `base_seed + k`.
pub fn run_matchup(
    env: &PegEnv,
    pursuer: ControllerSpec,
    evader: ControllerSpec,
    n_episodes: usize,
    base_seed: u64,
    step_cap: usize,
) -> (MatchupRow, Vec<EpisodeResult>) {
    assert!(n_episodes > 0);
    let episodes: Vec<EpisodeResult> = (0..n_episodes)
        .into_par_iter()
        .map(|k| {
            let mut p = Controller::new(AgentRole::Pursuer, pursuer);
            let mut e = Controller::new(AgentRole::Evader, evader);
            run_episode(env, &mut p, &mut e, base_seed + k as u64, step_cap)
        })
        .collect();

    let captured: Vec<usize> = episodes
        .iter()
        .filter(|e| e.captured)
        .map(|e| e.steps)
        .collect();
    let n_captured = captured.len();
    let mean = if n_captured > 0 {
        captured.iter().sum::<usize>() as f64 / n_captured as f64
    } else {
        f64::NAN
    };
    let std = if n_captured > 1 {
        let ss: f64 = captured
            .iter()
            .map(|&x| {
                let d = x as f64 - mean;
                d * d
            })
            .sum();
        (ss / (n_captured - 1) as f64).sqrt()
    } else {
        0.0
    };
    let row = MatchupRow {
        pursuer: pursuer.kind().to_string(),
        evader: evader.kind().to_string(),
        episodes: n_episodes,
        captured: n_captured,
        capture_rate: n_captured as f64 / n_episodes as f64,
        mean_steps: mean,
        std_steps: std,
        censored: n_episodes - n_captured,
        base_seed,
    };
    (row, episodes)
}

/// Run a list of pairings into one report.
pub fn run_matchups(
    env: &PegEnv,
    pairings: &[(ControllerSpec, ControllerSpec)],
    n_episodes: usize,
    base_seed: u64,
    step_cap: usize,
) -> (MatchupReport, Vec<Vec<EpisodeResult>>) {
    let mut report = MatchupReport::default();
    let mut all_episodes = Vec::new();
    for &(p, e) in pairings {
        let (row, episodes) = run_matchup(env, p, e, n_episodes, base_seed, step_cap);
        report.rows.push(row);
        all_episodes.push(episodes);
    }
    (report, all_episodes)
}

pub const TRAJECTORY_HEADER: &str =
    "step,pursuer_cell,evader_cell,pursuer_action,evader_action,pursuer_mode,evader_mode,pursuer_room,evader_room";

/// Render a trajectory as comma-separated text with a header row.
pub fn trajectory_to_csv(episode: &EpisodeResult) -> String {
    let mut out = String::from(TRAJECTORY_HEADER);
    out.push('\n');
    for r in &episode.trajectory {
        let fmt_action = |a: Option<usize>| match a {
            Some(a) => a.to_string(),
            None => "-1".to_string(),
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.step,
            r.pursuer_cell,
            r.evader_cell,
            fmt_action(r.pursuer_action),
            fmt_action(r.evader_action),
            r.pursuer_mode,
            r.evader_mode,
            r.pursuer_room,
            r.evader_room,
        ));
    }
    out
}

/// Parse a trajectory CSV back into step records.
pub fn trajectory_from_csv(text: &str) -> Result<Vec<StepRecord>, String> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == TRAJECTORY_HEADER => {}
        other => return Err(format!("bad trajectory header: {other:?}")),
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(format!("row {i}: expected 9 fields, found {}", fields.len()));
        }
        let parse_action = |f: &str| -> Result<Option<usize>, String> {
            if f == "-1" {
                Ok(None)
            } else {
                f.parse().map(Some).map_err(|e| format!("row {i}: {e}"))
            }
        };
        out.push(StepRecord {
            step: fields[0].parse().map_err(|e| format!("row {i}: {e}"))?,
            pursuer_cell: fields[1].parse().map_err(|e| format!("row {i}: {e}"))?,
            evader_cell: fields[2].parse().map_err(|e| format!("row {i}: {e}"))?,
            pursuer_action: parse_action(fields[3])?,
            evader_action: parse_action(fields[4])?,
            pursuer_mode: ModeTag::parse(fields[5]).ok_or(format!("row {i}: bad mode"))?,
            evader_mode: ModeTag::parse(fields[6]).ok_or(format!("row {i}: bad mode"))?,
            pursuer_room: fields[7].parse().map_err(|e| format!("row {i}: {e}"))?,
            evader_room: fields[8].parse().map_err(|e| format!("row {i}: {e}"))?,
        });
    }
    Ok(out)
}

pub const MATCHUP_HEADER: &str =
    "matchup,pursuer,evader,episodes,captured,capture_rate,mean_steps,std_steps,censored,base_seed";

/// Render a matchup report as comma-separated text with a header row.
pub fn report_to_csv(report: &MatchupReport) -> String {
    let mut out = String::from(MATCHUP_HEADER);
    out.push('\n');
    for r in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{:.6},{:.6},{:.6},{},{}\n",
            r.label(),
            r.pursuer,
            r.evader,
            r.episodes,
            r.captured,
            r.capture_rate,
            r.mean_steps,
            r.std_steps,
            r.censored,
            r.base_seed,
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abstraction::partition_from_blocks;
    use crate::flat_solver::{shapley_solve, JointPegGame};
    use crate::gridworld::{room_world, GridMap};

    fn small_world() -> PegEnv {
        // 2x1 rooms of side 3: a 19-cell corridor world, fast to solve.
        let map = GridMap::parse(&room_world(2, 1, 3)).unwrap();
        PegEnv::standard(map, 1, 0.9, 0.0).unwrap()
    }

    fn small_partition(env: &PegEnv) -> Partition {
        let mut labels = Vec::new();
        for id in 0..env.map().n_free() {
            let (_, c) = env.map().coords(id);
            labels.push(if c <= 4 { 0i64 } else { 1 });
        }
        Partition::from_labels(labels).unwrap()
    }

    #[test]
    fn fixed_seed_reproduces_trajectories() {
        let env = small_world();
        let flat = shapley_solve(&JointPegGame::new(&env), 1e-8, 10_000).unwrap();
        let spec = ControllerSpec::FlatNash(&flat.pursuer);
        let espec = ControllerSpec::FlatNash(&flat.evader);
        for seed in [0u64, 7, 123] {
            let mut p1 = Controller::new(AgentRole::Pursuer, spec);
            let mut e1 = Controller::new(AgentRole::Evader, espec);
            let a = run_episode(&env, &mut p1, &mut e1, seed, 1000);
            let mut p2 = Controller::new(AgentRole::Pursuer, spec);
            let mut e2 = Controller::new(AgentRole::Evader, espec);
            let b = run_episode(&env, &mut p2, &mut e2, seed, 1000);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn episode_invariants() {
        let env = small_world();
        let flat = shapley_solve(&JointPegGame::new(&env), 1e-8, 10_000).unwrap();
        let (row, episodes) = run_matchup(
            &env,
            ControllerSpec::FlatNash(&flat.pursuer),
            ControllerSpec::FlatNash(&flat.evader),
            200,
            0,
            1000,
        );
        assert_eq!(row.episodes, 200);
        for ep in &episodes {
            // The first recorded state is live.
            let first = &ep.trajectory[0];
            assert!(!env.is_capture(JointState {
                pursuer: first.pursuer_cell,
                evader: first.evader_cell
            }));
            // The last state is terminal iff captured.
            let last = ep.trajectory.last().unwrap();
            assert_eq!(last.step, ep.steps);
            assert_eq!(
                env.is_capture(JointState {
                    pursuer: last.pursuer_cell,
                    evader: last.evader_cell
                }),
                ep.captured
            );
            assert!(ep.steps <= 1000);
        }
        // The pursuer is strictly faster; it should always capture here.
        assert_eq!(row.capture_rate, 1.0);
    }

    #[test]
    fn hierarchical_modes_are_sound() {
        let env = small_world();
        let partition = small_partition(&env);
        let (hier, _) = HierPolicy::build(&env, partition, HierConfig::default()).unwrap();
        let flat = shapley_solve(&JointPegGame::new(&env), 1e-8, 10_000).unwrap();
        let (_, episodes) = run_matchup(
            &env,
            ControllerSpec::Hierarchical(&hier),
            ControllerSpec::FlatNash(&flat.evader),
            100,
            42,
            1000,
        );
        for ep in &episodes {
            let mut previous: Option<(JointSuperstate, ModeTag)> = None;
            for r in &ep.trajectory {
                if r.pursuer_action.is_none() {
                    break;
                }
                let gamma = JointSuperstate {
                    pursuer_room: r.pursuer_room,
                    evader_room: r.evader_room,
                };
                let has_local = hier.locals.contains_key(&gamma);
                match r.pursuer_mode {
                    ModeTag::Local => assert!(has_local),
                    ModeTag::Option { source, .. } => {
                        assert!(!has_local);
                        assert_eq!(source, gamma.pursuer_room);
                        // Option persistence: the same option keeps running
                        // until the joint superstate changes.
                        if let Some((prev_gamma, prev_mode)) = previous {
                            if prev_gamma == gamma {
                                assert_eq!(prev_mode, r.pursuer_mode);
                            }
                        }
                    }
                    ModeTag::Flat | ModeTag::End => panic!("pursuer is hierarchical"),
                }
                previous = Some((gamma, r.pursuer_mode));
            }
        }
    }

    #[test]
    fn trajectory_csv_round_trip() {
        let env = small_world();
        let flat = shapley_solve(&JointPegGame::new(&env), 1e-8, 10_000).unwrap();
        let mut p = Controller::new(AgentRole::Pursuer, ControllerSpec::FlatNash(&flat.pursuer));
        let mut e = Controller::new(AgentRole::Evader, ControllerSpec::FlatNash(&flat.evader));
        let ep = run_episode(&env, &mut p, &mut e, 5, 1000);
        let text = trajectory_to_csv(&ep);
        let parsed = trajectory_from_csv(&text).unwrap();
        assert_eq!(parsed, ep.trajectory);
    }

    #[test]
    fn matchup_csv_shape() {
        let report = MatchupReport {
            rows: vec![MatchupRow {
                pursuer: "nash".into(),
                evader: "hier".into(),
                episodes: 10,
                captured: 10,
                capture_rate: 1.0,
                mean_steps: 4.2,
                std_steps: 1.0,
                censored: 0,
                base_seed: 0,
            }],
        };
        let text = report_to_csv(&report);
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), MATCHUP_HEADER);
        let row = lines.next().unwrap();
        assert!(row.starts_with("nash-vs-hier,nash,hier,10,10,"));
    }
}
