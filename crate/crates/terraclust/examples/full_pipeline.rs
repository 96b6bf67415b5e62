//! Run the whole pipeline on a reduced synthetic scene and print the
//! resulting scores and artifact manifest.
//!
//! Run with `cargo run --release --example full_pipeline`.

use terraclust::pipeline::{run_all, PipelineConfig, SceneSource, ScoresReport};
use terraclust::raster::SyntheticSceneSpec;

fn main() -> terraclust::Result<()> {
    let out = std::env::temp_dir().join("terraclust_example_pipeline");
    let mut cfg = PipelineConfig::desk_default(out.clone());

    // Shrink the default scene and training budget so the example finishes
    // in a few seconds.
    if let SceneSource::Synthetic { spec } = &mut cfg.scene {
        *spec = SyntheticSceneSpec {
            layout: SyntheticSceneSpec::quadrant_layout(10, 10),
            grid_rows: 10,
            grid_cols: 10,
            t_len: 4,
            ..spec.clone()
        };
    }
    cfg.train_geo.epochs = 10;
    cfg.train_refine.epochs = 4;
    cfg.geo_sampler.count = 600;
    cfg.cluster_sampler.count = 400;
    cfg.k_list = vec![4];
    cfg.seed = 11;

    let manifest = run_all(&cfg)?;
    for record in &manifest.stages {
        println!("{:<10} {:.2}s", record.stage, record.seconds);
    }
    println!("{} artifacts hashed into the manifest", manifest.artifacts.len());

    let path = out.join("analysis/scores.json");
    let text = std::fs::read_to_string(&path).map_err(|e| terraclust::Error::io(&path, e))?;
    let scores: ScoresReport =
        serde_json::from_str(&text).map_err(|e| terraclust::Error::json(&path, e))?;
    println!(
        "geo:     silhouette {:.3}, error {:.1}, ARI {:?}",
        scores.geo.embedded.silhouette, scores.geo.kmeans_error, scores.geo.ari_vs_planted
    );
    println!(
        "refined: silhouette {:.3}, error {:.1}, ARI {:?}",
        scores.refined.embedded.silhouette,
        scores.refined.kmeans_error,
        scores.refined.ari_vs_planted
    );
    println!("outputs under {}", out.display());
    Ok(())
}
