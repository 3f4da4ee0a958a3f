//! Detection of the regular room grid of a map, used by `--blocks` to build
//! block partitions without a separate geometry argument.

use peg_core::gridworld::GridMap;

/// Find the finest regular room grid the map fits: a square map with a full
/// outer wall and interior wall lines every `room_side + 1` cells, where the
/// only free cells on a wall line are doors (free on both sides across the
/// wall). Returns (rooms per side, room side).
pub fn detect_room_grid(map: &GridMap) -> Option<(usize, usize)> {
    if map.width() != map.height() {
        return None;
    }
    let side = map.width();
    if side < 3 {
        return None;
    }
    // Full outer wall.
    for i in 0..side {
        if !map.is_wall(0, i)
            || !map.is_wall(side - 1, i)
            || !map.is_wall(i, 0)
            || !map.is_wall(i, side - 1)
        {
            return None;
        }
    }
    // Try the finest grid first.
    for rooms in (1..=(side - 1) / 3).rev() {
        if (side - 1) % rooms != 0 {
            continue;
        }
        let pitch = (side - 1) / rooms;
        if pitch < 3 {
            continue;
        }
        if grid_fits(map, rooms, pitch) {
            return Some((rooms, pitch - 1));
        }
    }
    None
}

fn grid_fits(map: &GridMap, rooms: usize, pitch: usize) -> bool {
    let side = map.width();
    for k in 1..rooms {
        let line = k * pitch;
        let mut has_wall = false;
        for i in 1..side - 1 {
            // Horizontal wall line at `row == line`.
            if map.is_wall(line, i) {
                has_wall = true;
            } else {
                // A free cell on the line must be a proper door.
                if i % pitch == 0 {
                    return false; // wall intersection must stay walled
                }
                if map.free_id(line - 1, i).is_none() || map.free_id(line + 1, i).is_none() {
                    return false;
                }
            }
            // Vertical wall line at `col == line`.
            if !map.is_wall(i, line) {
                if i % pitch == 0 {
                    return false;
                }
                if map.free_id(i, line - 1).is_none() || map.free_id(i, line + 1).is_none() {
                    return false;
                }
            }
        }
        if !has_wall {
            return false;
        }
    }
    // Every room must contain at least one free cell.
    for room_r in 0..rooms {
        for room_c in 0..rooms {
            let mut any_free = false;
            'room: for r in room_r * pitch + 1..(room_r + 1) * pitch {
                for c in room_c * pitch + 1..(room_c + 1) * pitch {
                    if map.free_id(r, c).is_some() {
                        any_free = true;
                        break 'room;
                    }
                }
            }
            if !any_free {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use peg_core::gridworld::{open_world, room_world};

    #[test]
    fn detects_the_benchmark_worlds() {
        for (mx, n) in [(2, 4), (3, 5), (4, 4), (6, 5)] {
            let map = GridMap::parse(&room_world(mx, mx, n)).unwrap();
            assert_eq!(detect_room_grid(&map), Some((mx, n)), "world {mx}x{mx}");
        }
    }

    #[test]
    fn open_map_has_no_room_grid() {
        let map = GridMap::parse(&open_world(5, 5)).unwrap();
        assert_eq!(detect_room_grid(&map), None);
    }

    #[test]
    fn bordered_single_room_detects_as_one() {
        let map = GridMap::parse(&room_world(1, 1, 3)).unwrap();
        assert_eq!(detect_room_grid(&map), Some((1, 3)));
    }
}
