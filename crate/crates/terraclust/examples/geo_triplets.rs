//! Sample geographic triplets from a synthetic scene: anchors at random
//! pixel positions, neighbors within the radius, distant tiles outside it.
//!
//! Run with `cargo run --example geo_triplets`.

use terraclust::raster::{generate_synthetic_scene, SyntheticSceneSpec, ZoneSpec};
use terraclust::triplets::{geo_triplets_to_csv, sample_geo_triplets, GeoSamplerConfig, TileLoc};

fn main() -> terraclust::Result<()> {
    let spec = SyntheticSceneSpec {
        zones: vec![ZoneSpec {
            base_color: vec![0.5, 0.5, 0.5],
            seasonal_phase: 0.0,
            seasonal_amplitude: 0.1,
            noise_amplitude: 0.05,
        }],
        layout: vec![0; 64],
        grid_rows: 8,
        grid_cols: 8,
        tile_size: 8,
        t_len: 4,
        channels: 3,
    };
    let (seq, _) = generate_synthetic_scene(&spec, 0)?;

    let cfg = GeoSamplerConfig {
        count: 500,
        radius: 10.0,
        tile_size: 8,
        seed: 42,
        per_timestamp_quota: false,
    };
    let triplets = sample_geo_triplets(&seq, &cfg)?;
    println!("sampled {} triplets from a {}x{} scene", triplets.len(), seq.width(), seq.height());

    for triplet in &triplets[..3] {
        let (TileLoc::Pixel { x: ax, y: ay }, TileLoc::Pixel { x: bx, y: by }, TileLoc::Pixel { x: cx, y: cy }) =
            (triplet.anchor, triplet.neighbor, triplet.distant)
        else {
            unreachable!("geographic triplets are pixel anchored");
        };
        let near = (((ax as f64 - bx as f64).powi(2) + (ay as f64 - by as f64).powi(2)) as f64).sqrt();
        let far = (((ax as f64 - cx as f64).powi(2) + (ay as f64 - cy as f64).powi(2)) as f64).sqrt();
        println!(
            "t={} anchor=({ax},{ay}) neighbor at {near:.1}px distant at {far:.1}px",
            triplet.t
        );
    }

    let csv = geo_triplets_to_csv(&triplets)?;
    println!("csv header: {}", csv.lines().next().unwrap());
    Ok(())
}
