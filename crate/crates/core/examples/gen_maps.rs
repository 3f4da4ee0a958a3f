//! Regenerate the benchmark worlds under `maps/` at the workspace root.
//!
//! Usage: `cargo run -p peg-core --example gen_maps` from the workspace root.

use peg_core::gridworld::{room_world, GridMap};

fn main() {
    let worlds = [
        ("rooms-2x2.txt", 2usize, 4usize),
        ("rooms-3x3.txt", 3, 5),
        ("rooms-4x4.txt", 4, 4),
        ("rooms-6x6.txt", 6, 5),
    ];
    std::fs::create_dir_all("maps").expect("create maps/");
    for (name, rooms, side) in worlds {
        let text = room_world(rooms, rooms, side);
        std::fs::write(format!("maps/{name}"), &text).expect("write map");
        let map = GridMap::parse(&text).expect("generated map parses");
        println!(
            "{name}: {}x{} grid, {} free cells, {} joint states",
            map.width(),
            map.height(),
            map.n_free(),
            map.n_free() * map.n_free()
        );
    }
}
