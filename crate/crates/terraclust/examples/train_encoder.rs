//! Train a small convolutional encoder on geographic triplets and embed
//! every tile sequence.
//!
//! Run with `cargo run --release --example train_encoder`.

use terraclust::encoder::{init_encoder, train, EncoderConfig, TrainConfig};
use terraclust::mts::{embed_sequences, Provenance};
use terraclust::raster::{decompose_grid, generate_synthetic_scene, SyntheticSceneSpec, ZoneSpec};
use terraclust::triplets::{sample_geo_triplets, GeoSamplerConfig, SceneTriplets};

fn main() -> terraclust::Result<()> {
    let zones = vec![
        ZoneSpec {
            base_color: vec![0.3, 0.6, 0.3],
            seasonal_phase: 0.0,
            seasonal_amplitude: 0.08,
            noise_amplitude: 0.1,
        },
        ZoneSpec {
            base_color: vec![0.6, 0.4, 0.3],
            seasonal_phase: 3.0,
            seasonal_amplitude: 0.08,
            noise_amplitude: 0.1,
        },
    ];
    let mut layout = vec![0; 64];
    for cell in 32..64 {
        layout[cell] = 1;
    }
    let spec = SyntheticSceneSpec {
        zones,
        layout,
        grid_rows: 8,
        grid_cols: 8,
        tile_size: 8,
        t_len: 4,
        channels: 3,
    };
    let (seq, _) = generate_synthetic_scene(&spec, 3)?;

    let sampler = GeoSamplerConfig {
        count: 400,
        radius: 8.0,
        tile_size: 8,
        seed: 3,
        per_timestamp_quota: false,
    };
    let triplets = sample_geo_triplets(&seq, &sampler)?;
    let grid = decompose_grid(seq.width(), seq.height(), 8)?;
    let source = SceneTriplets::new(&seq, grid.clone(), triplets);

    let encoder_cfg = EncoderConfig::desk_default(3, 8);
    let params = init_encoder(&encoder_cfg, 3)?;
    println!("encoder: {} parameters", params.num_params());

    let train_cfg = TrainConfig {
        margin: 2.0,
        epochs: 8,
        batch_size: 50,
        ..TrainConfig::default()
    };
    let (trained, report) = train(params, &source, &train_cfg)?;
    for (epoch, value) in report.per_epoch.iter().enumerate() {
        println!("epoch {:>2}: mean objective {value:.4}", epoch + 1);
    }

    let coll = embed_sequences(&trained, &seq, &grid, Provenance::Geographic)?;
    println!(
        "embedded {} tile sequences, each T={} x d={}",
        coll.len(),
        coll.t_len(),
        coll.dim()
    );
    Ok(())
}
