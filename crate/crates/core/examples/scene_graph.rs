//! Builds one scene, extracts its relation graph and shows the pairwise label matrix.
//!
//!     cargo run --example scene_graph -- [seed]

use scenevl::graph::{extract_scene_graph, relation_matrix, RelationLabel, RelationThresholds};
use scenevl::scene::{generate_scene, Catalog, GenerationConfig};

fn main() -> scenevl::Result<()> {
    let seed: u64 = std::env::args().nth(1).map_or(7, |s| s.parse().expect("seed"));
    let catalog = Catalog::default();
    let generated = generate_scene(seed, &GenerationConfig::default(), &catalog)?;
    let scene = generated.scene;
    println!("scene {seed}: {} rooms, {} instances", scene.rooms.len(), scene.instances.len());
    for inst in &scene.instances {
        let on = inst.supported_by.map(|s| format!(" on {s}")).unwrap_or_default();
        println!(
            "  {:>3} {:<14} room {} center [{:.2}, {:.2}, {:.2}] size [{:.2}, {:.2}, {:.2}]{on}",
            inst.id,
            catalog.name(inst.category),
            inst.room_id,
            inst.obb.center[0],
            inst.obb.center[1],
            inst.obb.center[2],
            inst.obb.size[0],
            inst.obb.size[1],
            inst.obb.size[2],
        );
    }

    let graph = extract_scene_graph(&scene, &RelationThresholds::default());
    println!("{} edges", graph.edges.len());
    for e in graph.edges.iter().take(20) {
        println!("  {} {:?} {}", e.subject, e.label, e.object);
    }

    // Only the first room, to keep the matrix readable.
    let room = scene.rooms[0].id;
    let ids: Vec<u32> = scene.instances_in_room(room).map(|i| i.id).collect();
    let m = relation_matrix(&graph.restrict(&ids), &ids)?;
    println!("relation matrix for room {room}:");
    for i in 0..m.size() {
        let row: Vec<String> = (0..m.size())
            .map(|j| {
                let l = RelationLabel::from_index(m.get(i, j)).unwrap();
                format!("{:>12}", format!("{l:?}"))
            })
            .collect();
        println!("  {:>3} {}", ids[i], row.join(""));
    }
    Ok(())
}
