//! Refine a trained encoder with cluster triplets: sample anchor/neighbor
//! pairs from one cluster and distants from another, resume training, and
//! compare silhouettes before and after.
//!
//! Run with `cargo run --release --example refine_embedding`.

use terraclust::analysis::embedded_space_scores;
use terraclust::encoder::{init_encoder, resume_train, train, EncoderConfig, TrainConfig};
use terraclust::kmeans::{lloyd, KMeansConfig};
use terraclust::mts::{embed_sequences, Provenance};
use terraclust::raster::{decompose_grid, generate_synthetic_scene, SyntheticSceneSpec, ZoneSpec};
use terraclust::triplets::{
    distant_cluster_distribution, sample_cluster_triplets, sample_geo_triplets,
    ClusterSamplerConfig, GeoSamplerConfig, SceneTriplets,
};

fn main() -> terraclust::Result<()> {
    let zones = vec![
        ZoneSpec {
            base_color: vec![0.40, 0.55, 0.45],
            seasonal_phase: 0.0,
            seasonal_amplitude: 0.08,
            noise_amplitude: 0.12,
        },
        ZoneSpec {
            base_color: vec![0.55, 0.45, 0.50],
            seasonal_phase: 2.1,
            seasonal_amplitude: 0.08,
            noise_amplitude: 0.12,
        },
        ZoneSpec {
            base_color: vec![0.45, 0.50, 0.60],
            seasonal_phase: 4.2,
            seasonal_amplitude: 0.08,
            noise_amplitude: 0.12,
        },
    ];
    // Three vertical strips.
    let layout: Vec<usize> = (0..100).map(|cell| (cell % 10) * 3 / 10).collect();
    let spec = SyntheticSceneSpec {
        zones,
        layout,
        grid_rows: 10,
        grid_cols: 10,
        tile_size: 8,
        t_len: 4,
        channels: 3,
    };
    let (seq, _) = generate_synthetic_scene(&spec, 5)?;
    let grid = decompose_grid(seq.width(), seq.height(), 8)?;

    // First stage: geographic training.
    let geo = sample_geo_triplets(
        &seq,
        &GeoSamplerConfig {
            count: 600,
            radius: 8.0,
            tile_size: 8,
            seed: 5,
            per_timestamp_quota: false,
        },
    )?;
    let source = SceneTriplets::new(&seq, grid.clone(), geo);
    let params = init_encoder(&EncoderConfig::desk_default(3, 8), 5)?;
    let train_cfg = TrainConfig {
        margin: 2.0,
        epochs: 25,
        ..TrainConfig::default()
    };
    let (params, _) = train(params, &source, &train_cfg)?;

    let coll = embed_sequences(&params, &seq, &grid, Provenance::Geographic)?;
    let kcfg = KMeansConfig {
        k: 3,
        seed: 5,
        ..KMeansConfig::default()
    };
    let result = lloyd(&coll, &kcfg)?;
    let before = embedded_space_scores(&coll, &result.partition)?;
    println!("geo stage: silhouette {:.3}", before.silhouette);

    // The distant-cluster draw favors large, far-away clusters.
    let dist = distant_cluster_distribution(&result.partition, &result.centroids, 0, kcfg.mode)?;
    println!("distant-cluster probabilities from cluster 0: {dist:?}");

    // Second stage: resume training on cluster triplets, then re-embed.
    let cluster = sample_cluster_triplets(
        &seq,
        &result.partition,
        &result.centroids,
        &ClusterSamplerConfig { count: 400, seed: 5 },
        kcfg.mode,
    )?;
    let source = SceneTriplets::new(&seq, grid.clone(), cluster);
    let refine_cfg = TrainConfig {
        margin: 2.0,
        epochs: 10,
        ..TrainConfig::default()
    };
    let (params, _) = resume_train(params, &source, &refine_cfg)?;

    let coll = embed_sequences(&params, &seq, &grid, Provenance::Clustering)?;
    let result = lloyd(&coll, &kcfg)?;
    let after = embedded_space_scores(&coll, &result.partition)?;
    println!("refined:   silhouette {:.3}", after.silhouette);
    Ok(())
}
