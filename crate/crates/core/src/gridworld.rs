//! Grid-world pursuit-evasion environments: map parsing, per-agent move
//! kernels, the capture set, and the joint product dynamics.

use std::collections::VecDeque;
use thiserror::Error;

/// Errors raised while parsing a map file.
#[derive(Debug, Error)]
pub enum MapError {
    #[error("map text is empty")]
    Empty,
    #[error("line {line} has length {found}, expected {expected}")]
    Ragged {
        line: usize,
        found: usize,
        expected: usize,
    },
    #[error("illegal character {found:?} at row {row}, col {col} (expected '.' or '#')")]
    IllegalChar { found: char, row: usize, col: usize },
    #[error("map has no free cells")]
    NoFreeCells,
    #[error("free cells are not 4-connected")]
    Disconnected,
}

/// A rectangular grid of free and wall cells.
///
/// Free cells are enumerated row-major; that enumeration is part of the
/// persistence contract, so policies and archives index cells by it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridMap {
    width: usize,
    height: usize,
    wall: Vec<bool>,
    free_index: Vec<Option<usize>>,
    free_cells: Vec<(usize, usize)>,
}

impl GridMap {
    /// Parse a map from text: `#` is a wall, `.` is free, one row per line.
    /// All lines must have equal length; a trailing newline is optional.
    pub fn parse(text: &str) -> Result<Self, MapError> {
        let lines: Vec<&str> = text.lines().collect();
        if lines.is_empty() {
            return Err(MapError::Empty);
        }
        let width = lines[0].chars().count();
        let height = lines.len();
        if width == 0 {
            return Err(MapError::Empty);
        }
        let mut wall = vec![false; width * height];
        for (r, line) in lines.iter().enumerate() {
            let row: Vec<char> = line.chars().collect();
            if row.len() != width {
                return Err(MapError::Ragged {
                    line: r,
                    found: row.len(),
                    expected: width,
                });
            }
            for (c, ch) in row.iter().enumerate() {
                match ch {
                    '#' => wall[r * width + c] = true,
                    '.' => {}
                    other => {
                        return Err(MapError::IllegalChar {
                            found: *other,
                            row: r,
                            col: c,
                        })
                    }
                }
            }
        }

        let mut free_index = vec![None; width * height];
        let mut free_cells = Vec::new();
        for r in 0..height {
            for c in 0..width {
                if !wall[r * width + c] {
                    free_index[r * width + c] = Some(free_cells.len());
                    free_cells.push((r, c));
                }
            }
        }
        if free_cells.is_empty() {
            return Err(MapError::NoFreeCells);
        }

        let map = GridMap {
            width,
            height,
            wall,
            free_index,
            free_cells,
        };
        if !map.free_graph_connected() {
            return Err(MapError::Disconnected);
        }
        Ok(map)
    }

    fn free_graph_connected(&self) -> bool {
        let n = self.free_cells.len();
        let mut seen = vec![false; n];
        let mut queue = VecDeque::new();
        seen[0] = true;
        queue.push_back(0usize);
        let mut count = 1;
        while let Some(id) = queue.pop_front() {
            let (r, c) = self.free_cells[id];
            for (dr, dc) in [(-1isize, 0isize), (1, 0), (0, -1), (0, 1)] {
                let (nr, nc) = (r as isize + dr, c as isize + dc);
                if let Some(next) = self.free_id_signed(nr, nc) {
                    if !seen[next] {
                        seen[next] = true;
                        count += 1;
                        queue.push_back(next);
                    }
                }
            }
        }
        count == n
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Number of free cells, i.e. the size of one agent's state space.
    pub fn n_free(&self) -> usize {
        self.free_cells.len()
    }

    pub fn is_wall(&self, row: usize, col: usize) -> bool {
        self.wall[row * self.width + col]
    }

    /// Free-cell id at (row, col), if the cell is inside the grid and free.
    pub fn free_id(&self, row: usize, col: usize) -> Option<usize> {
        if row < self.height && col < self.width {
            self.free_index[row * self.width + col]
        } else {
            None
        }
    }

    fn free_id_signed(&self, row: isize, col: isize) -> Option<usize> {
        if row < 0 || col < 0 {
            return None;
        }
        self.free_id(row as usize, col as usize)
    }

    /// (row, col) of a free cell id.
    pub fn coords(&self, id: usize) -> (usize, usize) {
        self.free_cells[id]
    }

    /// Chebyshev distance between two free cells.
    pub fn chebyshev(&self, a: usize, b: usize) -> usize {
        let (ar, ac) = self.coords(a);
        let (br, bc) = self.coords(b);
        let dr = ar.abs_diff(br);
        let dc = ac.abs_diff(bc);
        dr.max(dc)
    }

    /// Canonical text rendering (row per line, trailing newline).
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity((self.width + 1) * self.height);
        for r in 0..self.height {
            for c in 0..self.width {
                out.push(if self.is_wall(r, c) { '#' } else { '.' });
            }
            out.push('\n');
        }
        out
    }
}

/// Which side of the game an agent plays. The pursuer maximizes the
/// discounted capture reward, the evader minimizes it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AgentRole {
    Pursuer,
    Evader,
}

impl AgentRole {
    pub const BOTH: [AgentRole; 2] = [AgentRole::Pursuer, AgentRole::Evader];

    pub fn index(self) -> usize {
        match self {
            AgentRole::Pursuer => 0,
            AgentRole::Evader => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    North,
    South,
    East,
    West,
}

impl Direction {
    /// (row, col) delta; north decreases the row index.
    pub fn delta(self) -> (isize, isize) {
        match self {
            Direction::North => (-1, 0),
            Direction::South => (1, 0),
            Direction::East => (0, 1),
            Direction::West => (0, -1),
        }
    }
}

/// A single displacement an agent can command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Move {
    Stay,
    Step(Direction, u8),
}

/// An ordered list of moves. Policies index into this order, so it is fixed:
/// stay first, then one distance ring at a time (N, S, E, W at distance 1,
/// then N, S, E, W at distance 2, ...). The default evader set is therefore a
/// prefix of the default pursuer set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionSet {
    moves: Vec<Move>,
}

impl ActionSet {
    pub const STAY: usize = 0;

    /// Stay plus every direction at each distance `1..=max_distance`.
    pub fn with_max_distance(max_distance: u8) -> Self {
        let mut moves = vec![Move::Stay];
        for dist in 1..=max_distance {
            for dir in [
                Direction::North,
                Direction::South,
                Direction::East,
                Direction::West,
            ] {
                moves.push(Move::Step(dir, dist));
            }
        }
        ActionSet { moves }
    }

    /// The default pursuer set: stay + 4 directions x distances {1, 2}.
    pub fn pursuer_default() -> Self {
        Self::with_max_distance(2)
    }

    /// The default evader set: stay + 4 directions x distance 1.
    pub fn evader_default() -> Self {
        Self::with_max_distance(1)
    }

    pub fn len(&self) -> usize {
        self.moves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.moves.is_empty()
    }

    pub fn moves(&self) -> &[Move] {
        &self.moves
    }
}

/// Joint position of both agents, as free-cell ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct JointState {
    pub pursuer: usize,
    pub evader: usize,
}

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("discount must lie in (0, 1), got {0}")]
    BadDiscount(f64),
    #[error("slip probability must lie in [0, 1), got {0}")]
    BadSlip(f64),
    #[error("action set for {0:?} is empty")]
    EmptyActionSet(AgentRole),
}

/// A pursuit-evasion game environment: a map, per-agent action sets and move
/// kernels, the capture set, and the discount.
///
/// All data is immutable after construction; the environment can be shared
/// freely across threads.
#[derive(Debug, Clone)]
pub struct PegEnv {
    map: GridMap,
    actions: [ActionSet; 2],
    capture_radius: usize,
    discount: f64,
    slip: f64,
    // kernel[role][cell * n_actions + a] -> sparse distribution over cells
    kernel: [Vec<Vec<(usize, f64)>>; 2],
}

impl PegEnv {
    pub fn new(
        map: GridMap,
        pursuer_actions: ActionSet,
        evader_actions: ActionSet,
        capture_radius: usize,
        discount: f64,
        slip: f64,
    ) -> Result<Self, EnvError> {
        if !(discount > 0.0 && discount < 1.0) {
            return Err(EnvError::BadDiscount(discount));
        }
        if !(0.0..1.0).contains(&slip) {
            return Err(EnvError::BadSlip(slip));
        }
        if pursuer_actions.is_empty() {
            return Err(EnvError::EmptyActionSet(AgentRole::Pursuer));
        }
        if evader_actions.is_empty() {
            return Err(EnvError::EmptyActionSet(AgentRole::Evader));
        }
        let actions = [pursuer_actions, evader_actions];
        let kernel = [
            build_kernel(&map, &actions[0], slip),
            build_kernel(&map, &actions[1], slip),
        ];
        Ok(PegEnv {
            map,
            actions,
            capture_radius,
            discount,
            slip,
            kernel,
        })
    }

    /// Environment with the default action sets (pursuer 9 moves, evader 5).
    pub fn standard(
        map: GridMap,
        capture_radius: usize,
        discount: f64,
        slip: f64,
    ) -> Result<Self, EnvError> {
        Self::new(
            map,
            ActionSet::pursuer_default(),
            ActionSet::evader_default(),
            capture_radius,
            discount,
            slip,
        )
    }

    pub fn map(&self) -> &GridMap {
        &self.map
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn slip(&self) -> f64 {
        self.slip
    }

    pub fn capture_radius(&self) -> usize {
        self.capture_radius
    }

    pub fn actions(&self, role: AgentRole) -> &ActionSet {
        &self.actions[role.index()]
    }

    /// Number of individual states (free cells) per agent.
    pub fn n_cells(&self) -> usize {
        self.map.n_free()
    }

    /// Number of joint states.
    pub fn n_joint_states(&self) -> usize {
        self.n_cells() * self.n_cells()
    }

    pub fn joint_index(&self, s: JointState) -> usize {
        s.pursuer * self.n_cells() + s.evader
    }

    pub fn joint_state(&self, index: usize) -> JointState {
        let n = self.n_cells();
        JointState {
            pursuer: index / n,
            evader: index % n,
        }
    }

    /// One agent's move distribution. With probability `1 - slip` the
    /// commanded move executes, with probability `slip` the agent stays; a
    /// move whose path (every intermediate cell and the destination) is not
    /// free resolves to stay. Entries are ordered target-then-stay and sum
    /// to 1.
    pub fn individual_transition(&self, role: AgentRole, cell: usize, action: usize) -> &[(usize, f64)] {
        &self.kernel[role.index()][cell * self.actions[role.index()].len() + action]
    }

    /// Joint move distribution: the product of the two individual
    /// distributions on non-terminal states; capture states are absorbing.
    pub fn joint_transition(&self, s: JointState, a1: usize, a2: usize) -> Vec<(JointState, f64)> {
        if self.is_capture(s) {
            return vec![(s, 1.0)];
        }
        let row1 = self.individual_transition(AgentRole::Pursuer, s.pursuer, a1);
        let row2 = self.individual_transition(AgentRole::Evader, s.evader, a2);
        let mut out = Vec::with_capacity(row1.len() * row2.len());
        for &(t1, p1) in row1 {
            for &(t2, p2) in row2 {
                out.push((
                    JointState {
                        pursuer: t1,
                        evader: t2,
                    },
                    p1 * p2,
                ));
            }
        }
        out
    }

    /// True when the evader lies within the pursuer's capture zone, a closed
    /// Chebyshev ball of radius `capture_radius`.
    pub fn is_capture(&self, s: JointState) -> bool {
        self.map.chebyshev(s.pursuer, s.evader) <= self.capture_radius
    }

    /// Sparse reward: +1 exactly on capture states.
    pub fn reward(&self, s: JointState) -> f64 {
        if self.is_capture(s) {
            1.0
        } else {
            0.0
        }
    }

    /// Free cells within the capture zone of `cell` (including itself).
    pub fn capture_zone(&self, cell: usize) -> Vec<usize> {
        let (r, c) = self.map.coords(cell);
        let rad = self.capture_radius as isize;
        let mut out = Vec::new();
        for dr in -rad..=rad {
            for dc in -rad..=rad {
                if let Some(id) = self.map.free_id_signed(r as isize + dr, c as isize + dc) {
                    out.push(id);
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// Number of capture (terminal) joint states.
    pub fn n_terminal_states(&self) -> usize {
        (0..self.n_cells()).map(|c| self.capture_zone(c).len()).sum()
    }
}

fn resolve_move(map: &GridMap, from: usize, mv: Move) -> usize {
    match mv {
        Move::Stay => from,
        Move::Step(dir, dist) => {
            let (r, c) = map.coords(from);
            let (dr, dc) = dir.delta();
            let mut target = from;
            for step in 1..=dist as isize {
                match map.free_id_signed(r as isize + dr * step, c as isize + dc * step) {
                    Some(id) => target = id,
                    // Any blocked cell along the path voids the whole move.
                    None => return from,
                }
            }
            target
        }
    }
}

fn build_kernel(map: &GridMap, actions: &ActionSet, slip: f64) -> Vec<Vec<(usize, f64)>> {
    let n = map.n_free();
    let mut rows = Vec::with_capacity(n * actions.len());
    for cell in 0..n {
        for &mv in actions.moves() {
            let target = resolve_move(map, cell, mv);
            let row = if target == cell || slip == 0.0 {
                vec![(target, 1.0)]
            } else {
                vec![(target, 1.0 - slip), (cell, slip)]
            };
            rows.push(row);
        }
    }
    rows
}

/// Text for a grid of `rooms_x` x `rooms_y` square rooms of side `room_side`,
/// separated by 1-cell walls with a single door at the middle of each shared
/// wall, surrounded by a 1-cell outer wall. These are the benchmark worlds;
/// the 2x2 grid of 4x4 rooms is the 11x11 world with 68 free cells.
pub fn room_world(rooms_x: usize, rooms_y: usize, room_side: usize) -> String {
    assert!(rooms_x >= 1 && rooms_y >= 1 && room_side >= 1);
    let n = room_side;
    let width = rooms_x * (n + 1) + 1;
    let height = rooms_y * (n + 1) + 1;
    let mut grid = vec![vec!['#'; width]; height];
    for by in 0..rooms_y {
        for bx in 0..rooms_x {
            for r in 0..n {
                for c in 0..n {
                    grid[by * (n + 1) + 1 + r][bx * (n + 1) + 1 + c] = '.';
                }
            }
        }
    }
    // Doors at offset n/2 within each shared wall segment.
    for bx in 1..rooms_x {
        let col = bx * (n + 1);
        for by in 0..rooms_y {
            grid[by * (n + 1) + 1 + n / 2][col] = '.';
        }
    }
    for by in 1..rooms_y {
        let row = by * (n + 1);
        for bx in 0..rooms_x {
            grid[row][bx * (n + 1) + 1 + n / 2] = '.';
        }
    }
    let mut out = String::new();
    for row in grid {
        out.extend(row);
        out.push('\n');
    }
    out
}

/// Fully open rectangular map.
pub fn open_world(width: usize, height: usize) -> String {
    let mut out = String::new();
    for _ in 0..height {
        for _ in 0..width {
            out.push('.');
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn parses_the_four_room_world() {
        let map = GridMap::parse(&room_world(2, 2, 4)).unwrap();
        assert_eq!(map.width(), 11);
        assert_eq!(map.height(), 11);
        assert_eq!(map.n_free(), 68);
    }

    #[test]
    fn parses_smallest_map() {
        let map = GridMap::parse(".").unwrap();
        assert_eq!(map.n_free(), 1);
        assert_eq!(map.coords(0), (0, 0));
    }

    #[test]
    fn parses_ring_map() {
        let map = GridMap::parse("...\n.#.\n...").unwrap();
        assert_eq!(map.n_free(), 8);
    }

    #[test]
    fn rejects_ragged_and_illegal_and_disconnected() {
        assert!(matches!(GridMap::parse("..\n..."), Err(MapError::Ragged { .. })));
        assert!(matches!(
            GridMap::parse(".x\n.."),
            Err(MapError::IllegalChar { found: 'x', .. })
        ));
        assert!(matches!(GridMap::parse("##"), Err(MapError::NoFreeCells)));
        assert!(matches!(
            GridMap::parse(".#.\n###\n.#."),
            Err(MapError::Disconnected)
        ));
        assert!(matches!(GridMap::parse(""), Err(MapError::Empty)));
    }

    #[test]
    fn text_round_trip() {
        let text = room_world(2, 2, 4);
        let map = GridMap::parse(&text).unwrap();
        assert_eq!(map.to_text(), text);
    }

    #[test]
    fn action_set_sizes_and_order() {
        let p = ActionSet::pursuer_default();
        let e = ActionSet::evader_default();
        assert_eq!(p.len(), 9);
        assert_eq!(e.len(), 5);
        assert_eq!(p.moves()[0], Move::Stay);
        assert_eq!(p.moves()[1], Move::Step(Direction::North, 1));
        assert_eq!(p.moves()[5], Move::Step(Direction::North, 2));
        // The evader set is a prefix of the pursuer set.
        assert_eq!(&p.moves()[..5], e.moves());
    }

    fn env_3x3(slip: f64) -> PegEnv {
        let map = GridMap::parse(&open_world(3, 3)).unwrap();
        PegEnv::standard(map, 1, 0.95, slip).unwrap()
    }

    #[test]
    fn deterministic_move_north() {
        let env = env_3x3(0.0);
        let from = env.map().free_id(1, 1).unwrap();
        let to = env.map().free_id(0, 1).unwrap();
        let row = env.individual_transition(AgentRole::Evader, from, 1);
        assert_eq!(row, &[(to, 1.0)]);
    }

    #[test]
    fn wall_move_resolves_to_stay() {
        let env = env_3x3(0.0);
        let corner = env.map().free_id(0, 0).unwrap();
        // North from the top row leaves the grid.
        let row = env.individual_transition(AgentRole::Pursuer, corner, 1);
        assert_eq!(row, &[(corner, 1.0)]);
    }

    #[test]
    fn slip_splits_mass() {
        let env = env_3x3(0.2);
        let from = env.map().free_id(1, 1).unwrap();
        let to = env.map().free_id(0, 1).unwrap();
        let row = env.individual_transition(AgentRole::Evader, from, 1);
        assert_eq!(row.len(), 2);
        assert_eq!(row[0].0, to);
        assert!(close(row[0].1, 0.8));
        assert_eq!(row[1].0, from);
        assert!(close(row[1].1, 0.2));
    }

    #[test]
    fn distance_two_requires_clear_path() {
        // 1x5 corridor with a wall in the middle: ". . # . ."
        let map = GridMap::parse("..#..\n.....").unwrap();
        let env = PegEnv::standard(map, 0, 0.9, 0.0).unwrap();
        let from = env.map().free_id(0, 1).unwrap();
        // East distance 2 passes over the wall at (0,2): blocked, stay.
        let east2 = 7;
        assert_eq!(env.actions(AgentRole::Pursuer).moves()[east2], Move::Step(Direction::East, 2));
        let row = env.individual_transition(AgentRole::Pursuer, from, east2);
        assert_eq!(row, &[(from, 1.0)]);
        // From (1,1) the path along the bottom row is clear.
        let from2 = env.map().free_id(1, 1).unwrap();
        let to2 = env.map().free_id(1, 3).unwrap();
        let row2 = env.individual_transition(AgentRole::Pursuer, from2, east2);
        assert_eq!(row2, &[(to2, 1.0)]);
    }

    #[test]
    fn capture_uses_closed_chebyshev_ball() {
        let env = env_3x3(0.0);
        let a = env.map().free_id(0, 0).unwrap();
        let b = env.map().free_id(1, 1).unwrap();
        let c = env.map().free_id(2, 2).unwrap();
        assert!(env.is_capture(JointState { pursuer: a, evader: a }));
        assert!(env.is_capture(JointState { pursuer: a, evader: b })); // distance == radius
        assert!(!env.is_capture(JointState { pursuer: a, evader: c })); // distance 2
        assert!(close(env.reward(JointState { pursuer: a, evader: b }), 1.0));
        assert!(close(env.reward(JointState { pursuer: a, evader: c }), 0.0));
    }

    #[test]
    fn terminal_states_are_absorbing() {
        let env = env_3x3(0.5);
        let s = JointState { pursuer: 0, evader: 1 };
        assert!(env.is_capture(s));
        for a1 in 0..9 {
            for a2 in 0..5 {
                assert_eq!(env.joint_transition(s, a1, a2), vec![(s, 1.0)]);
            }
        }
    }

    #[test]
    fn joint_product_with_slip() {
        let env = env_3x3(0.5);
        // Far corners: (0,0) vs (2,2), not capture at radius 1.
        let s = JointState {
            pursuer: env.map().free_id(0, 0).unwrap(),
            evader: env.map().free_id(2, 2).unwrap(),
        };
        // Both command distance-1 open moves: south for pursuer, north for evader.
        let row = env.joint_transition(s, 2, 1);
        assert_eq!(row.len(), 4);
        for &(_, p) in &row {
            assert!(close(p, 0.25));
        }
        let total: f64 = row.iter().map(|&(_, p)| p).sum();
        assert!(close(total, 1.0));
    }

    #[test]
    fn kernel_rows_are_proper_distributions() {
        for slip in [0.0, 0.2, 0.7] {
            let env = env_3x3(slip);
            for role in AgentRole::BOTH {
                for cell in 0..env.n_cells() {
                    for a in 0..env.actions(role).len() {
                        let total: f64 = env
                            .individual_transition(role, cell, a)
                            .iter()
                            .map(|&(_, p)| p)
                            .sum();
                        assert!((total - 1.0).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn joint_transition_factorizes() {
        // Exhaustive factorization check on a small map with slip.
        let map = GridMap::parse(&room_world(1, 1, 3)).unwrap();
        let env = PegEnv::standard(map, 0, 0.9, 0.3).unwrap();
        let n = env.n_cells();
        for s1 in 0..n {
            for s2 in 0..n {
                let s = JointState { pursuer: s1, evader: s2 };
                if env.is_capture(s) {
                    continue;
                }
                for a1 in 0..9 {
                    for a2 in 0..5 {
                        let row = env.joint_transition(s, a1, a2);
                        let total: f64 = row.iter().map(|&(_, p)| p).sum();
                        assert!((total - 1.0).abs() < 1e-12);
                        for &(t, p) in &row {
                            let p1: f64 = env
                                .individual_transition(AgentRole::Pursuer, s1, a1)
                                .iter()
                                .filter(|&&(c, _)| c == t.pursuer)
                                .map(|&(_, q)| q)
                                .sum();
                            let p2: f64 = env
                                .individual_transition(AgentRole::Evader, s2, a2)
                                .iter()
                                .filter(|&&(c, _)| c == t.evader)
                                .map(|&(_, q)| q)
                                .sum();
                            assert!(close(p, p1 * p2));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn room_world_counts() {
        // 6x6 rooms of side 5: 36 * 25 cells + 60 doors.
        let map = GridMap::parse(&room_world(6, 6, 5)).unwrap();
        assert_eq!(map.n_free(), 960);
        // 4x4 rooms of side 4: 16 * 16 + 24 doors.
        let map = GridMap::parse(&room_world(4, 4, 4)).unwrap();
        assert_eq!(map.n_free(), 280);
        // 3x3 rooms of side 5: 9 * 25 + 12 doors.
        let map = GridMap::parse(&room_world(3, 3, 5)).unwrap();
        assert_eq!(map.n_free(), 237);
    }

    #[test]
    fn env_validation() {
        let map = GridMap::parse(".").unwrap();
        assert!(matches!(
            PegEnv::standard(map.clone(), 1, 1.0, 0.0),
            Err(EnvError::BadDiscount(_))
        ));
        assert!(matches!(
            PegEnv::standard(map, 1, 0.9, 1.0),
            Err(EnvError::BadSlip(_))
        ));
    }
}
