//! Fixtures for the criterion benchmarks.

use dksh_core::graph::Graph;
use dksh_core::synthetic::planted_partition;
use dksh_core::{build_structure_matrix, generate_walks, StructureMatrix, WalkConfig};

/// Planted-partition graph with `classes × per_class` nodes.
pub fn graph(classes: usize, per_class: usize, seed: u64) -> Graph {
    let g = planted_partition(classes, per_class, 0.1, 0.01, seed);
    Graph::from_edges(g.edges.iter().map(|(a, b)| (a.to_string(), b.to_string())))
        .expect("synthetic graph has edges")
}

/// Short walks, small window.
pub fn walk_config() -> WalkConfig {
    WalkConfig {
        window_size: 5,
        walk_length: 40,
        walks_per_node: 4,
        seed: 7,
        include_self_pairs: false,
    }
}

pub fn structure(graph: &Graph) -> StructureMatrix {
    let cfg = walk_config();
    let walks = generate_walks(graph, &cfg).expect("walks");
    build_structure_matrix(&walks, &cfg, graph.num_nodes()).expect("structure matrix")
}
