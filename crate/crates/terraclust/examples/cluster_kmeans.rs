//! Cluster multivariate time series with seeded K-means, compare the
//! restarted Lloyd result against brute force, and inspect medoids.
//!
//! Run with `cargo run --example cluster_kmeans`.

use ndarray::array;
use terraclust::kmeans::{brute_force_kmeans, lloyd, medoid, KMeansConfig};
use terraclust::mts::{DistanceMode, Mts, MtsCollection, Provenance};

fn main() -> terraclust::Result<()> {
    // Three tight groups of scalar series, T=2.
    let raw = [
        [0.0, 0.1],
        [0.1, 0.0],
        [5.0, 5.1],
        [5.1, 4.9],
        [10.0, 9.9],
        [9.9, 10.1],
    ];
    let items = raw
        .iter()
        .enumerate()
        .map(|(i, r)| Mts {
            values: array![[r[0]], [r[1]]],
            grid_index: i,
        })
        .collect();
    let coll = MtsCollection::new(items, Provenance::Geographic)?;

    let cfg = KMeansConfig {
        k: 3,
        restarts: 10,
        seed: 0,
        ..KMeansConfig::default()
    };
    let result = lloyd(&coll, &cfg)?;
    println!(
        "lloyd: error {:.4} after {} iterations (restart {})",
        result.error, result.iterations, result.best_restart
    );
    println!("assignment: {:?}", result.partition.assignment);

    let (_, best_error) = brute_force_kmeans(&coll, 3, DistanceMode::ConcatEuclidean)?;
    println!("brute force optimum: {best_error:.4}");

    for c in 0..3 {
        let members = result.partition.members(c);
        let refs: Vec<&Mts> = members.iter().map(|&i| coll.item(i)).collect();
        let m = medoid(&refs, &result.centroids.items[c], cfg.mode)?;
        println!("cluster {c}: members {members:?}, medoid grid index {m}");
    }
    Ok(())
}
