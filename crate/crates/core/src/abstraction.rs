//! Partitions of individual state spaces into superstates ("rooms"), and
//! the periphery, boundary and adjacency structure they induce under each
//! agent's move kernel.
//!
//! Periphery: states outside a superstate reachable from inside in one
//! transition. Boundary: states inside reachable from outside in one
//! transition. Both are role-dependent because the pursuer's distance-2
//! moves reach deeper than the evader's.

use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

use crate::gridworld::{AgentRole, GridMap, JointState, PegEnv};

#[derive(Debug, Error)]
pub enum PartitionError {
    #[error("expected {expected} labels, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("label {label} on wall cell at row {row}, col {col}")]
    WallLabeled { label: i64, row: usize, col: usize },
    #[error("free cell at row {row}, col {col} carries no label")]
    FreeUnlabeled { row: usize, col: usize },
    #[error("superstate {0} is empty")]
    EmptySuperstate(usize),
    #[error("partition file: {0}")]
    Parse(String),
    #[error("block size {k} does not divide the {rooms}-room side")]
    BlockMismatch { k: usize, rooms: usize },
    #[error("map lacks the regular room structure required for block partitions: {0}")]
    NoRoomStructure(String),
}

/// A labeling of every individual state (free cell) with a superstate id.
/// Labels are dense in `0..superstate_count` and every superstate is
/// nonempty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    labels: Vec<usize>,
    groups: Vec<Vec<usize>>,
}

impl Partition {
    /// Build from per-cell labels; ids are normalized to `0..count` by
    /// sorted original id.
    pub fn from_labels(labels: Vec<i64>) -> Result<Self, PartitionError> {
        let distinct: BTreeSet<i64> = labels.iter().copied().collect();
        let remap: BTreeMap<i64, usize> = distinct
            .into_iter()
            .enumerate()
            .map(|(i, l)| (l, i))
            .collect();
        let labels: Vec<usize> = labels.into_iter().map(|l| remap[&l]).collect();
        let count = remap.len();
        let mut groups = vec![Vec::new(); count];
        for (cell, &label) in labels.iter().enumerate() {
            groups[label].push(cell);
        }
        for (id, group) in groups.iter().enumerate() {
            if group.is_empty() {
                return Err(PartitionError::EmptySuperstate(id));
            }
        }
        Ok(Partition { labels, groups })
    }

    /// The whole state space as one superstate.
    pub fn single(n_cells: usize) -> Self {
        Partition {
            labels: vec![0; n_cells],
            groups: vec![(0..n_cells).collect()],
        }
    }

    pub fn n_cells(&self) -> usize {
        self.labels.len()
    }

    pub fn superstate_count(&self) -> usize {
        self.groups.len()
    }

    pub fn label(&self, cell: usize) -> usize {
        self.labels[cell]
    }

    /// Cells of a superstate, ascending.
    pub fn cells_of(&self, superstate: usize) -> &[usize] {
        &self.groups[superstate]
    }

    /// Render as the partition file format: comma-separated labels aligned
    /// with the map grid, `-1` on walls.
    pub fn to_grid_text(&self, map: &GridMap) -> String {
        let mut out = String::new();
        for r in 0..map.height() {
            let mut first = true;
            for c in 0..map.width() {
                if !first {
                    out.push(',');
                }
                first = false;
                match map.free_id(r, c) {
                    Some(id) => out.push_str(&self.labels[id].to_string()),
                    None => out.push_str("-1"),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Partition aligned to a regular grid of rooms: each `k` x `k` block of
/// rooms becomes one superstate. The map must be the square room-grid layout
/// (outer wall, `rooms_per_side` rooms per side separated by 1-cell walls);
/// cells on a shared wall (doors) belong to the room on their north/west
/// side.
pub fn partition_from_blocks(
    map: &GridMap,
    k: usize,
    rooms_per_side: usize,
) -> Result<Partition, PartitionError> {
    let m = rooms_per_side;
    if k == 0 || m == 0 || m % k != 0 {
        return Err(PartitionError::BlockMismatch { k, rooms: m });
    }
    if map.width() != map.height() {
        return Err(PartitionError::NoRoomStructure(format!(
            "map is {}x{}, not square",
            map.width(),
            map.height()
        )));
    }
    let side = map.width();
    if (side - 1) % m != 0 || (side - 1) / m < 2 {
        return Err(PartitionError::NoRoomStructure(format!(
            "side {side} does not fit {m} rooms"
        )));
    }
    let pitch = (side - 1) / m; // room side + 1
    let blocks = m / k;
    let mut labels = Vec::with_capacity(map.n_free());
    for id in 0..map.n_free() {
        let (r, c) = map.coords(id);
        if r == 0 || c == 0 || r == side - 1 || c == side - 1 {
            return Err(PartitionError::NoRoomStructure(format!(
                "free cell on the outer border at row {r}, col {c}"
            )));
        }
        let room_r = (r - 1) / pitch;
        let room_c = (c - 1) / pitch;
        labels.push(((room_r / k) * blocks + room_c / k) as i64);
    }
    Partition::from_labels(labels)
}

/// Parse a partition file: one row of comma-separated integers per map row,
/// `-1` exactly on wall cells. Superstate ids need not be contiguous.
pub fn partition_from_file(map: &GridMap, text: &str) -> Result<Partition, PartitionError> {
    let lines: Vec<&str> = text.lines().collect();
    if lines.len() != map.height() {
        return Err(PartitionError::LengthMismatch {
            expected: map.height(),
            found: lines.len(),
        });
    }
    let mut labels = vec![0i64; map.n_free()];
    for (r, line) in lines.iter().enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != map.width() {
            return Err(PartitionError::LengthMismatch {
                expected: map.width(),
                found: fields.len(),
            });
        }
        for (c, field) in fields.iter().enumerate() {
            let value: i64 = field
                .trim()
                .parse()
                .map_err(|_| PartitionError::Parse(format!("bad label {field:?} at row {r}, col {c}")))?;
            match map.free_id(r, c) {
                Some(id) => {
                    if value < 0 {
                        return Err(PartitionError::FreeUnlabeled { row: r, col: c });
                    }
                    labels[id] = value;
                }
                None => {
                    if value != -1 {
                        return Err(PartitionError::WallLabeled {
                            label: value,
                            row: r,
                            col: c,
                        });
                    }
                }
            }
        }
    }
    Partition::from_labels(labels)
}

/// A pair of superstate ids, one per agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct JointSuperstate {
    pub pursuer_room: usize,
    pub evader_room: usize,
}

impl JointSuperstate {
    pub fn of(partition: &Partition, s: JointState) -> Self {
        JointSuperstate {
            pursuer_room: partition.label(s.pursuer),
            evader_room: partition.label(s.evader),
        }
    }

    pub fn contains(&self, partition: &Partition, s: JointState) -> bool {
        partition.label(s.pursuer) == self.pursuer_room
            && partition.label(s.evader) == self.evader_room
    }
}

/// Periphery, boundary and adjacency of every superstate under each agent's
/// kernel, plus the cached one-step reach and pre-image sets they derive
/// from.
#[derive(Debug, Clone)]
pub struct SuperstateTopology {
    periphery: [Vec<Vec<usize>>; 2],
    boundary: [Vec<Vec<usize>>; 2],
    adjacency: [Vec<Vec<usize>>; 2],
    reach: [Vec<Vec<usize>>; 2],
    pre: [Vec<Vec<usize>>; 2],
}

impl SuperstateTopology {
    /// States outside `superstate` reachable from inside in one transition.
    pub fn periphery(&self, role: AgentRole, superstate: usize) -> &[usize] {
        &self.periphery[role.index()][superstate]
    }

    /// States inside `superstate` reachable from outside in one transition.
    pub fn boundary(&self, role: AgentRole, superstate: usize) -> &[usize] {
        &self.boundary[role.index()][superstate]
    }

    /// Superstates adjacent to `superstate` (reachable via its periphery).
    pub fn adjacent(&self, role: AgentRole, superstate: usize) -> &[usize] {
        &self.adjacency[role.index()][superstate]
    }

    pub fn is_adjacent(&self, role: AgentRole, from: usize, to: usize) -> bool {
        self.adjacent(role, from).binary_search(&to).is_ok()
    }

    /// Cells reachable from `cell` in one transition with positive
    /// probability, under any action (includes `cell` via the stay move).
    pub fn one_step_reach(&self, role: AgentRole, cell: usize) -> &[usize] {
        &self.reach[role.index()][cell]
    }

    /// Cells from which `cell` is one-step reachable.
    pub fn one_step_pre(&self, role: AgentRole, cell: usize) -> &[usize] {
        &self.pre[role.index()][cell]
    }
}

/// Compute peripheries, boundaries and adjacency for every superstate and
/// both roles.
pub fn compute_topology(env: &PegEnv, partition: &Partition) -> SuperstateTopology {
    let n = env.n_cells();
    assert_eq!(partition.n_cells(), n, "partition does not match the map");
    let count = partition.superstate_count();

    let mut reach: [Vec<Vec<usize>>; 2] = [Vec::new(), Vec::new()];
    let mut pre: [Vec<Vec<usize>>; 2] = [Vec::new(), Vec::new()];
    let mut periphery: [Vec<Vec<usize>>; 2] = [Vec::new(), Vec::new()];
    let mut boundary: [Vec<Vec<usize>>; 2] = [Vec::new(), Vec::new()];
    let mut adjacency: [Vec<Vec<usize>>; 2] = [Vec::new(), Vec::new()];

    for role in AgentRole::BOTH {
        let idx = role.index();
        let mut role_reach = Vec::with_capacity(n);
        for cell in 0..n {
            let mut targets = BTreeSet::new();
            for a in 0..env.actions(role).len() {
                for &(t, p) in env.individual_transition(role, cell, a) {
                    if p > 0.0 {
                        targets.insert(t);
                    }
                }
            }
            role_reach.push(targets.into_iter().collect::<Vec<_>>());
        }
        let mut role_pre = vec![Vec::new(); n];
        for (cell, targets) in role_reach.iter().enumerate() {
            for &t in targets {
                role_pre[t].push(cell);
            }
        }
        for p in role_pre.iter_mut() {
            p.sort_unstable();
        }

        let mut role_peri = vec![BTreeSet::new(); count];
        let mut role_bndry = vec![BTreeSet::new(); count];
        for cell in 0..n {
            let label = partition.label(cell);
            for &t in &role_reach[cell] {
                let t_label = partition.label(t);
                if t_label != label {
                    role_peri[label].insert(t);
                    role_bndry[t_label].insert(t);
                }
            }
        }
        let role_peri: Vec<Vec<usize>> = role_peri
            .into_iter()
            .map(|s| s.into_iter().collect())
            .collect();
        let role_bndry: Vec<Vec<usize>> = role_bndry
            .into_iter()
            .map(|s| s.into_iter().collect())
            .collect();
        let role_adj: Vec<Vec<usize>> = role_peri
            .iter()
            .map(|peri| {
                let targets: BTreeSet<usize> =
                    peri.iter().map(|&t| partition.label(t)).collect();
                targets.into_iter().collect()
            })
            .collect();

        reach[idx] = role_reach;
        pre[idx] = role_pre;
        periphery[idx] = role_peri;
        boundary[idx] = role_bndry;
        adjacency[idx] = role_adj;
    }

    SuperstateTopology {
        periphery,
        boundary,
        adjacency,
        reach,
        pre,
    }
}

/// Joint states outside `gamma` reachable in one joint step from a
/// non-terminal state of `gamma`; sorted by joint index.
pub fn joint_periphery(
    env: &PegEnv,
    partition: &Partition,
    topology: &SuperstateTopology,
    gamma: JointSuperstate,
) -> Vec<JointState> {
    let mut out = BTreeSet::new();
    for &s1 in partition.cells_of(gamma.pursuer_room) {
        for &s2 in partition.cells_of(gamma.evader_room) {
            let s = JointState {
                pursuer: s1,
                evader: s2,
            };
            if env.is_capture(s) {
                // Absorbing source: no outgoing edges.
                continue;
            }
            for &t1 in topology.one_step_reach(AgentRole::Pursuer, s1) {
                for &t2 in topology.one_step_reach(AgentRole::Evader, s2) {
                    if partition.label(t1) != gamma.pursuer_room
                        || partition.label(t2) != gamma.evader_room
                    {
                        out.insert(JointState {
                            pursuer: t1,
                            evader: t2,
                        });
                    }
                }
            }
        }
    }
    out.into_iter().collect()
}

/// Joint states of `gamma` reachable in one joint step from a non-terminal
/// state outside `gamma`; sorted by joint index.
pub fn joint_boundary(
    env: &PegEnv,
    partition: &Partition,
    topology: &SuperstateTopology,
    gamma: JointSuperstate,
) -> Vec<JointState> {
    let mut out = Vec::new();
    for &s1 in partition.cells_of(gamma.pursuer_room) {
        for &s2 in partition.cells_of(gamma.evader_room) {
            let s = JointState {
                pursuer: s1,
                evader: s2,
            };
            let mut entered = false;
            'sources: for &u1 in topology.one_step_pre(AgentRole::Pursuer, s1) {
                for &u2 in topology.one_step_pre(AgentRole::Evader, s2) {
                    let outside = partition.label(u1) != gamma.pursuer_room
                        || partition.label(u2) != gamma.evader_room;
                    if outside
                        && !env.is_capture(JointState {
                            pursuer: u1,
                            evader: u2,
                        })
                    {
                        entered = true;
                        break 'sources;
                    }
                }
            }
            if entered {
                out.push(s);
            }
        }
    }
    out
}
