//! Subcommand implementations.

use std::path::{Path, PathBuf};
use std::time::Instant;

use peg_core::abstraction::{
    compute_topology, partition_from_blocks, partition_from_file, Partition,
};
use peg_core::flat_solver::{shapley_solve, JointPegGame, ZeroSumGame, DEFAULT_MAX_ITERS};
use peg_core::gridworld::{AgentRole, GridMap, PegEnv};
use peg_core::local_games::{enumerate_terminal_superstates, local_game_shape};
use peg_core::simulator::{
    report_to_csv, run_matchup, trajectory_to_csv, ControllerSpec, HierConfig, HierPolicy,
    HierStats, MatchupReport,
};

use crate::archive::{self, FlatArchive, Payload};
use crate::config::RunConfig;
use crate::error::CliError;
use crate::rooms::detect_room_grid;

pub fn load_env(config: &RunConfig) -> Result<PegEnv, CliError> {
    let map_path = config
        .map
        .as_ref()
        .ok_or_else(|| CliError::Config("no map given (use --map or a config file)".into()))?;
    let text = std::fs::read_to_string(map_path).map_err(|e| {
        CliError::Config(format!("cannot read map {}: {e}", map_path.display()))
    })?;
    let map = GridMap::parse(&text)?;
    Ok(PegEnv::standard(
        map,
        config.capture_radius,
        config.beta,
        config.slip,
    )?)
}

pub fn load_partition(config: &RunConfig, env: &PegEnv) -> Result<Partition, CliError> {
    match (&config.partition, config.blocks) {
        (Some(path), None) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::Config(format!("cannot read partition {}: {e}", path.display()))
            })?;
            Ok(partition_from_file(env.map(), &text)?)
        }
        (None, Some(k)) => {
            let (rooms, _) = detect_room_grid(env.map()).ok_or_else(|| {
                CliError::Config(
                    "map has no regular room grid; supply --partition instead of --blocks".into(),
                )
            })?;
            Ok(partition_from_blocks(env.map(), k, rooms)?)
        }
        (None, None) => Err(CliError::Config(
            "a partition is required: give --partition FILE or --blocks K".into(),
        )),
        (Some(_), Some(_)) => Err(CliError::Config(
            "--partition and --blocks are mutually exclusive".into(),
        )),
    }
}

fn ensure_out_dir(config: &RunConfig) -> Result<(), CliError> {
    std::fs::create_dir_all(&config.out)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", config.out.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

pub fn cmd_solve_flat(config: &RunConfig) -> Result<(), CliError> {
    let env = load_env(config)?;
    let game = JointPegGame::new(&env);
    let n_states = game.num_states();
    let n_terminal = (0..n_states).filter(|&s| game.is_terminal(s)).count();

    let start = Instant::now();
    let solution = shapley_solve(&game, config.tol, DEFAULT_MAX_ITERS)?;
    let seconds = start.elapsed().as_secs_f64();

    ensure_out_dir(config)?;
    let archive_path = config.out.join("flat.archive");
    archive::save(
        &archive_path,
        &env,
        &Payload::Flat(FlatArchive {
            values: solution.values,
            pursuer: solution.pursuer,
            evader: solution.evader,
        }),
    )?;

    let stats = flat_stats_text(config, &env, n_states, n_terminal, &solution.stats, seconds);
    let stats_path = config.out.join("flat_stats.txt");
    write_text(&stats_path, &stats)?;
    print!("{stats}");
    println!("archive = {}", archive_path.display());
    Ok(())
}

fn flat_stats_text(
    config: &RunConfig,
    env: &PegEnv,
    n_states: usize,
    n_terminal: usize,
    stats: &peg_core::flat_solver::SolveStats,
    seconds: f64,
) -> String {
    let mut out = String::new();
    out.push_str("kind = flat\n");
    if let Some(map) = &config.map {
        out.push_str(&format!("map = {}\n", map.display()));
    }
    out.push_str(&format!("free_cells = {}\n", env.n_cells()));
    out.push_str(&format!("joint_states = {n_states}\n"));
    out.push_str(&format!("terminal_states = {n_terminal}\n"));
    out.push_str(&format!("lp_per_iteration = {}\n", stats.lp_per_iteration));
    out.push_str(&format!("iterations = {}\n", stats.iterations));
    out.push_str(&format!("lp_total = {}\n", stats.lp_count));
    out.push_str(&format!("final_residual = {:.3e}\n", stats.final_residual));
    out.push_str(&format!("solve_seconds = {seconds:.3}\n"));
    out
}

pub fn cmd_solve_hier(config: &RunConfig) -> Result<(), CliError> {
    let env = load_env(config)?;
    let partition = load_partition(config, &env)?;
    let hier_config = HierConfig {
        tol: config.tol,
        terminal_mode: if config.terminal_recurring {
            peg_core::aggregated_game::TerminalValueMode::RecurringReward
        } else {
            peg_core::aggregated_game::TerminalValueMode::FixedReward
        },
        ..HierConfig::default()
    };
    let (policy, stats) = HierPolicy::build(&env, partition, hier_config)?;

    ensure_out_dir(config)?;
    let archive_path = config.out.join("hier.archive");
    archive::save(&archive_path, &env, &Payload::Hier(policy))?;

    let text = hier_stats_text(config, &env, &stats);
    let stats_path = config.out.join("hier_stats.txt");
    write_text(&stats_path, &text)?;
    print!("{text}");
    println!("archive = {}", archive_path.display());
    Ok(())
}

fn hier_stats_text(config: &RunConfig, env: &PegEnv, stats: &HierStats) -> String {
    let mut out = String::new();
    out.push_str("kind = hier\n");
    if let Some(map) = &config.map {
        out.push_str(&format!("map = {}\n", map.display()));
    }
    out.push_str(&format!("free_cells = {}\n", env.n_cells()));
    out.push_str(&format!("joint_states = {}\n", env.n_joint_states()));
    out.push_str(&format!("option_count = {}\n", stats.option_count));
    out.push_str(&format!("option_seconds = {:.3}\n", stats.option_seconds));
    out.push_str(&format!("local_game_count = {}\n", stats.local_game_count));
    out.push_str(&format!("local_lp_total = {}\n", stats.local_lp_total));
    out.push_str(&format!(
        "local_lp_per_iteration_max = {}\n",
        stats.local_lp_per_iteration_max
    ));
    out.push_str(&format!("local_seconds = {:.3}\n", stats.local_seconds));
    out.push_str(&format!(
        "aggregated_lp_per_iteration = {}\n",
        stats.aggregated_lp_per_iteration
    ));
    out.push_str(&format!(
        "aggregated_lp_total = {}\n",
        stats.aggregated_lp_total
    ));
    out.push_str(&format!(
        "aggregated_iterations = {}\n",
        stats.aggregated_iterations
    ));
    out.push_str(&format!("phi_tuples = {}\n", stats.phi_tuples));
    out.push_str(&format!(
        "aggregated_seconds = {:.3}\n",
        stats.aggregated_seconds
    ));
    out.push_str(&format!(
        "hier_lp_per_iteration = {}\n",
        stats.lp_per_iteration()
    ));
    out
}

/// One side of a matchup: which policy kind drives it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    Nash,
    Hier,
}

impl PolicyKind {
    fn parse(text: &str) -> Result<Self, CliError> {
        match text {
            "nash" => Ok(PolicyKind::Nash),
            "hier" => Ok(PolicyKind::Hier),
            other => Err(CliError::Config(format!(
                "bad matchup side {other:?} (expected `nash` or `hier`)"
            ))),
        }
    }
}

/// Parse a matchup spec: `all` or a comma list of `P:E` pairs such as
/// `nash:nash,hier:nash`.
pub fn parse_matchups(
    spec: &str,
    have_flat: bool,
    have_hier: bool,
) -> Result<Vec<(PolicyKind, PolicyKind)>, CliError> {
    let kinds: Vec<PolicyKind> = match (have_flat, have_hier) {
        (true, true) => vec![PolicyKind::Nash, PolicyKind::Hier],
        (true, false) => vec![PolicyKind::Nash],
        (false, true) => vec![PolicyKind::Hier],
        (false, false) => {
            return Err(CliError::Config(
                "no archives given: supply --flat and/or --hier".into(),
            ))
        }
    };
    if spec == "all" {
        let mut out = Vec::new();
        for &p in &kinds {
            for &e in &kinds {
                out.push((p, e));
            }
        }
        return Ok(out);
    }
    let mut out = Vec::new();
    for part in spec.split(',') {
        let Some((p, e)) = part.split_once(':') else {
            return Err(CliError::Config(format!(
                "bad matchup {part:?} (expected `P:E`)"
            )));
        };
        let p = PolicyKind::parse(p.trim())?;
        let e = PolicyKind::parse(e.trim())?;
        for side in [p, e] {
            if !kinds.contains(&side) {
                return Err(CliError::Config(format!(
                    "matchup {part:?} needs a {} archive",
                    match side {
                        PolicyKind::Nash => "--flat",
                        PolicyKind::Hier => "--hier",
                    }
                )));
            }
        }
        out.push((p, e));
    }
    if out.is_empty() {
        return Err(CliError::Config("empty matchup spec".into()));
    }
    Ok(out)
}

pub fn cmd_simulate(
    config: &RunConfig,
    flat_path: Option<&Path>,
    hier_path: Option<&Path>,
    matchups: &str,
) -> Result<(), CliError> {
    let env = load_env(config)?;
    let flat = match flat_path {
        Some(p) => match archive::load(p, &env)? {
            Payload::Flat(f) => Some(f),
            Payload::Hier(_) => {
                return Err(CliError::Config(format!(
                    "{} is a hierarchical archive, pass it as --hier",
                    p.display()
                )))
            }
        },
        None => None,
    };
    let hier = match hier_path {
        Some(p) => match archive::load(p, &env)? {
            Payload::Hier(h) => Some(h),
            Payload::Flat(_) => {
                return Err(CliError::Config(format!(
                    "{} is a flat archive, pass it as --flat",
                    p.display()
                )))
            }
        },
        None => None,
    };
    let pairs = parse_matchups(matchups, flat.is_some(), hier.is_some())?;

    let spec_for = |kind: PolicyKind, role: AgentRole| -> ControllerSpec<'_> {
        match kind {
            PolicyKind::Nash => {
                let f = flat.as_ref().expect("checked by parse_matchups");
                ControllerSpec::FlatNash(match role {
                    AgentRole::Pursuer => &f.pursuer,
                    AgentRole::Evader => &f.evader,
                })
            }
            PolicyKind::Hier => {
                ControllerSpec::Hierarchical(hier.as_ref().expect("checked by parse_matchups"))
            }
        }
    };

    ensure_out_dir(config)?;
    let mut report = MatchupReport::default();
    for &(p, e) in &pairs {
        let (row, episodes) = run_matchup(
            &env,
            spec_for(p, AgentRole::Pursuer),
            spec_for(e, AgentRole::Evader),
            config.episodes,
            config.seed,
            config.step_cap,
        );
        if config.trajectories {
            let dir = config.out.join("trajectories");
            std::fs::create_dir_all(&dir)
                .map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
            for ep in &episodes {
                let path = dir.join(format!("{}-{}.csv", row.label(), ep.seed));
                write_text(&path, &trajectory_to_csv(ep))?;
            }
        }
        report.rows.push(row);
    }
    let csv = report_to_csv(&report);
    write_text(&config.out.join("matchups.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

pub const BENCH_HEADER: &str = "map,free_cells,joint_states,terminal_states,flat_lp_per_iter,superstates,option_count,local_games,max_local_lp_per_iter,aggregated_lp_per_iter,hier_lp_per_iter,option_seconds,local_seconds,aggregated_seconds,flat_seconds";

/// Per-world LP accounting (construction only), plus optional solve timings.
pub fn cmd_bench(
    config: &RunConfig,
    maps: &[PathBuf],
    solve_hier: bool,
    solve_flat: bool,
) -> Result<(), CliError> {
    if maps.is_empty() {
        return Err(CliError::Config("bench needs at least one --map".into()));
    }
    let mut csv = String::from(BENCH_HEADER);
    csv.push('\n');
    for map_path in maps {
        let mut world_config = config.clone();
        world_config.map = Some(map_path.clone());
        let env = load_env(&world_config)?;
        let partition = load_partition(&world_config, &env)?;
        let topology = compute_topology(&env, &partition);

        let n_states = env.n_joint_states();
        let n_terminal = env.n_terminal_states();
        let flat_lp_per_iter = (n_states - n_terminal) as u64;

        let option_count: usize = AgentRole::BOTH
            .iter()
            .map(|&role| {
                (0..partition.superstate_count())
                    .map(|g| topology.adjacent(role, g).len())
                    .sum::<usize>()
            })
            .sum();

        let terminal_superstates = enumerate_terminal_superstates(&env, &partition);
        let mut max_local_lp = 0u64;
        for &gamma in &terminal_superstates {
            let shape = local_game_shape(&env, &partition, &topology, gamma)?;
            max_local_lp = max_local_lp.max(shape.lp_per_iteration);
        }
        let n_rooms = partition.superstate_count();
        let aggregated_lp_per_iter =
            (n_rooms * n_rooms - terminal_superstates.len()) as u64;
        let hier_lp_per_iter = max_local_lp + aggregated_lp_per_iter;

        let (mut option_s, mut local_s, mut aggregated_s, mut flat_s) =
            (String::new(), String::new(), String::new(), String::new());
        if solve_hier {
            let (_, stats) = HierPolicy::build(
                &env,
                partition.clone(),
                HierConfig {
                    tol: config.tol,
                    ..HierConfig::default()
                },
            )?;
            option_s = format!("{:.3}", stats.option_seconds);
            local_s = format!("{:.3}", stats.local_seconds);
            aggregated_s = format!("{:.3}", stats.aggregated_seconds);
        }
        if solve_flat {
            let start = Instant::now();
            shapley_solve(&JointPegGame::new(&env), config.tol, DEFAULT_MAX_ITERS)?;
            flat_s = format!("{:.3}", start.elapsed().as_secs_f64());
        }

        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            map_path.display(),
            env.n_cells(),
            n_states,
            n_terminal,
            flat_lp_per_iter,
            n_rooms,
            option_count,
            terminal_superstates.len(),
            max_local_lp,
            aggregated_lp_per_iter,
            hier_lp_per_iter,
            option_s,
            local_s,
            aggregated_s,
            flat_s,
        ));
    }
    ensure_out_dir(config)?;
    write_text(&config.out.join("bench.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

pub fn cmd_inspect(path: &Path) -> Result<(), CliError> {
    print!("{}", archive::inspect(path)?);
    Ok(())
}
