//! Post-clustering analysis: semantic tree over centroids, planar MDS view,
//! centroid interpolation, and validity scores.
//!
//! Run with `cargo run --example analyze_clusters`.

use ndarray::array;
use terraclust::analysis::{
    adjusted_rand_index, interpolate, mds_project, nearest_sequence, semantic_tree, silhouette,
};
use terraclust::kmeans::{lloyd, KMeansConfig};
use terraclust::mts::{Mts, MtsCollection, Provenance};

fn main() -> terraclust::Result<()> {
    // Four groups along a line, so the tree should be a chain.
    let raw = [0.0, 0.2, 3.0, 3.2, 6.0, 6.2, 9.0, 9.2];
    let items = raw
        .iter()
        .enumerate()
        .map(|(i, &v)| Mts {
            values: array![[v], [v + 0.1]],
            grid_index: i,
        })
        .collect();
    let coll = MtsCollection::new(items, Provenance::Clustering)?;

    let cfg = KMeansConfig {
        k: 4,
        restarts: 10,
        seed: 1,
        ..KMeansConfig::default()
    };
    let result = lloyd(&coll, &cfg)?;

    let tree = semantic_tree(&result.centroids, &result.partition, cfg.mode)?;
    println!("semantic tree, total weight {:.3}:", tree.total_weight());
    for edge in &tree.edges {
        println!("  {} -- {} (length {:.3})", edge.a, edge.b, edge.length);
    }
    println!("dot output:\n{}", tree.to_dot());

    let proj = mds_project(&coll, cfg.mode)?;
    println!(
        "mds: residual {:.2e}, non_euclidean {}",
        proj.eigen_residual, proj.non_euclidean
    );
    for (i, p) in proj.points.iter().enumerate() {
        println!("  item {i}: ({:.3}, {:.3})", p[0], p[1]);
    }

    // Walk a tree edge and name the nearest real sequence at each stop.
    let edge = &tree.edges[0];
    for w in [0.75, 0.5, 0.25] {
        let z = interpolate(
            &result.centroids.items[edge.a],
            &result.centroids.items[edge.b],
            w,
        )?;
        let rep = nearest_sequence(&coll, &z, cfg.mode)?;
        println!(
            "edge ({}, {}) at w={w}: nearest sequence has grid index {rep}",
            edge.a, edge.b
        );
    }

    let s = silhouette(&coll.flattened(), &result.partition)?;
    println!("silhouette {s:.3}");
    let planted = [0, 0, 1, 1, 2, 2, 3, 3];
    let ari = adjusted_rand_index(&planted, &result.partition.assignment)?;
    println!("ARI vs planted groups {ari:.3}");
    Ok(())
}
