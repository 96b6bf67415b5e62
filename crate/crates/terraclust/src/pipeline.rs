//! Orchestration of the two-step procedure: geographic training, embedding,
//! clustering, clustering-driven refinement, and the analysis bundle, with a
//! reproducible run manifest. Every stage reads its inputs from disk and
//! writes its outputs atomically, so stages can be rerun in isolation.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand_chacha::rand_core::Rng as _;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    adjusted_rand_index, centroid_colors, embedded_space_scores, geographic_space_scores,
    interpolate, mds_project, nearest_sequence, pca_fit, render_cluster_map, save_png,
    semantic_tree, ClusterColorMap, Projection2D, SemanticTree, ValidityScores,
};
use crate::encoder::{
    init_encoder, load_checkpoint, resume_train, save_checkpoint, train, EncoderConfig,
    EncoderParams, TrainConfig,
};
use crate::error::{Error, Result};
use crate::kmeans::{
    kmeans_error, load_result, lloyd, lloyd_warm, medoid, save_result, Centroids, KMeansConfig,
    KMeansResult, Partition,
};
use crate::mts::{embed_sequences, load_collection, save_collection, MtsCollection, Provenance};
use crate::raster::{
    decompose_grid, extract_tile, generate_synthetic_scene, load_scene_dir, mean_rgb_features,
    save_scene_dir, GroundTruthLabels, SceneSequence, SyntheticSceneSpec, TileGrid, ZoneSpec,
};
use crate::triplets::{
    cluster_triplets_to_csv, geo_triplets_to_csv, sample_cluster_triplets, sample_geo_triplets,
    ClusterSamplerConfig, GeoSamplerConfig, SceneTriplets,
};
use crate::util::{sha256_file, stream_rng, write_atomic};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SceneSource {
    Synthetic { spec: SyntheticSceneSpec },
    Directory { path: PathBuf },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub scene: SceneSource,
    pub encoder: EncoderConfig,
    pub train_geo: TrainConfig,
    pub train_refine: TrainConfig,
    pub geo_sampler: GeoSamplerConfig,
    pub cluster_sampler: ClusterSamplerConfig,
    /// K and distance mode for the refinement clustering.
    pub kmeans: KMeansConfig,
    /// Every K to cluster and map in the geographic stage.
    pub k_list: Vec<usize>,
    /// Tile size for the pixel-mean baseline; defaults to the encoder tile
    /// size.
    pub baseline_tile_size: Option<usize>,
    /// Warm-start the refinement clustering from the geographic partition
    /// instead of fresh seeding.
    #[serde(default)]
    pub warm_start_refine: bool,
    pub out: PathBuf,
    pub seed: u64,
}

impl PipelineConfig {
    /// Laptop-scale default: a 4-zone synthetic quadrant scene with a compact
    /// encoder.
    pub fn desk_default(out: PathBuf) -> Self {
        let zones = vec![
            ZoneSpec {
                base_color: vec![0.45, 0.52, 0.48],
                seasonal_phase: 0.0,
                seasonal_amplitude: 0.08,
                noise_amplitude: 0.15,
            },
            ZoneSpec {
                base_color: vec![0.53, 0.45, 0.50],
                seasonal_phase: 1.6,
                seasonal_amplitude: 0.08,
                noise_amplitude: 0.15,
            },
            ZoneSpec {
                base_color: vec![0.48, 0.50, 0.56],
                seasonal_phase: 3.1,
                seasonal_amplitude: 0.08,
                noise_amplitude: 0.15,
            },
            ZoneSpec {
                base_color: vec![0.56, 0.48, 0.44],
                seasonal_phase: 4.7,
                seasonal_amplitude: 0.08,
                noise_amplitude: 0.15,
            },
        ];
        let spec = SyntheticSceneSpec {
            zones,
            layout: SyntheticSceneSpec::quadrant_layout(20, 20),
            grid_rows: 20,
            grid_cols: 20,
            tile_size: 8,
            t_len: 8,
            channels: 3,
        };
        PipelineConfig {
            scene: SceneSource::Synthetic { spec },
            encoder: EncoderConfig::desk_default(3, 8),
            train_geo: TrainConfig {
                margin: 2.0,
                epochs: 50,
                ..TrainConfig::default()
            },
            train_refine: TrainConfig {
                margin: 2.0,
                epochs: 12,
                ..TrainConfig::default()
            },
            geo_sampler: GeoSamplerConfig {
                count: 1500,
                radius: 8.0,
                tile_size: 8,
                seed: 0,
                per_timestamp_quota: false,
            },
            cluster_sampler: ClusterSamplerConfig {
                count: 1000,
                seed: 0,
            },
            kmeans: KMeansConfig {
                k: 4,
                ..KMeansConfig::default()
            },
            k_list: vec![3, 4, 5],
            baseline_tile_size: Some(1),
            warm_start_refine: false,
            out,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if let SceneSource::Synthetic { spec } = &self.scene {
            spec.validate()?;
        }
        if self.kmeans.k < 2 {
            return Err(Error::InvalidConfig("refinement needs K >= 2".into()));
        }
        if self.k_list.is_empty() || self.k_list.iter().any(|&k| k == 0) {
            return Err(Error::InvalidConfig("k_list must hold values >= 1".into()));
        }
        if self.geo_sampler.tile_size != self.encoder.tile_size {
            return Err(Error::InvalidConfig(
                "sampler tile size != encoder tile size".into(),
            ));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        write_atomic(path, text.as_bytes())
    }

    fn scene_dir(&self) -> PathBuf {
        match &self.scene {
            SceneSource::Synthetic { .. } => self.out.join("scene"),
            SceneSource::Directory { path } => path.clone(),
        }
    }

    fn every_k(&self) -> Vec<usize> {
        let mut ks = self.k_list.clone();
        if !ks.contains(&self.kmeans.k) {
            ks.push(self.kmeans.k);
        }
        ks.sort_unstable();
        ks
    }
}

// Per-stage RNG streams derived from the master seed, so each stage can be
// rerun without replaying the ones before it.
const STREAM_SCENE: u64 = 1;
const STREAM_GEO_SAMPLER: u64 = 2;
const STREAM_ENCODER_INIT: u64 = 3;
const STREAM_TRAIN_GEO: u64 = 4;
const STREAM_KMEANS_GEO: u64 = 0x4b00;
const STREAM_CLUSTER_SAMPLER: u64 = 6;
const STREAM_TRAIN_REFINE: u64 = 7;
const STREAM_KMEANS_REFINE: u64 = 8;

fn stage_seed(master: u64, stream: u64) -> u64 {
    stream_rng(master, stream).next_u64()
}

fn require(stage: &str, path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingArtifact {
            stage: stage.into(),
            path: path.to_path_buf(),
        })
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    write_atomic(path, text.as_bytes())
}

fn load_scene(cfg: &PipelineConfig, stage: &str) -> Result<SceneSequence> {
    let dir = cfg.scene_dir();
    require(stage, &dir.join("manifest.json"))?;
    load_scene_dir(&dir)
}

fn grid_for(cfg: &PipelineConfig, seq: &SceneSequence) -> Result<TileGrid> {
    decompose_grid(seq.width(), seq.height(), cfg.encoder.tile_size)
}

/// Materialize the scene: generate and persist the synthetic scene (plus its
/// planted labels), or check that the configured directory loads.
pub fn stage_synth(cfg: &PipelineConfig) -> Result<()> {
    cfg.validate()?;
    match &cfg.scene {
        SceneSource::Synthetic { spec } => {
            let (seq, labels) = generate_synthetic_scene(spec, stage_seed(cfg.seed, STREAM_SCENE))?;
            save_scene_dir(&seq, &cfg.out.join("scene"))?;
            write_json(&cfg.out.join("scene").join("labels.json"), &labels)
        }
        SceneSource::Directory { path } => {
            require("synth", &path.join("manifest.json"))?;
            load_scene_dir(path).map(|_| ())
        }
    }
}

/// Sample the geographic triplets and train the first-stage encoder.
pub fn stage_train_geo(cfg: &PipelineConfig) -> Result<()> {
    let seq = load_scene(cfg, "train-geo")?;
    let sampler = GeoSamplerConfig {
        seed: stage_seed(cfg.seed, STREAM_GEO_SAMPLER),
        ..cfg.geo_sampler.clone()
    };
    let triplets = sample_geo_triplets(&seq, &sampler)?;
    write_atomic(
        &cfg.out.join("geo_triplets.csv"),
        geo_triplets_to_csv(&triplets)?.as_bytes(),
    )?;
    let params = init_encoder(&cfg.encoder, stage_seed(cfg.seed, STREAM_ENCODER_INIT))?;
    let grid = grid_for(cfg, &seq)?;
    let source = SceneTriplets::new(&seq, grid, triplets);
    let train_cfg = TrainConfig {
        seed: stage_seed(cfg.seed, STREAM_TRAIN_GEO),
        ..cfg.train_geo.clone()
    };
    let (trained, report) = train(params, &source, &train_cfg)?;
    save_checkpoint(&trained, &cfg.out.join("encoder_geo"), cfg.seed, train_cfg.epochs)?;
    report.save_csv(&cfg.out.join("loss_geo.csv"))
}

fn embed_with(
    cfg: &PipelineConfig,
    checkpoint: &str,
    out_base: &str,
    provenance: Provenance,
    stage: &str,
) -> Result<()> {
    let seq = load_scene(cfg, stage)?;
    let ckpt = cfg.out.join(checkpoint);
    require(stage, &ckpt.with_extension("bin"))?;
    let (params, _) = load_checkpoint(&ckpt)?;
    let grid = grid_for(cfg, &seq)?;
    let coll = embed_sequences(&params, &seq, &grid, provenance)?;
    let hash = sha256_file(&ckpt.with_extension("bin"))?;
    save_collection(&coll, &cfg.out.join(out_base), Some(hash))
}

/// Embed every tile sequence with the geographic encoder.
pub fn stage_embed_geo(cfg: &PipelineConfig) -> Result<()> {
    embed_with(cfg, "encoder_geo", "mts_geo", Provenance::Geographic, "embed")
}

fn cluster_collection(
    cfg: &PipelineConfig,
    coll: &MtsCollection,
    k: usize,
    seed_stream: u64,
    base: &Path,
) -> Result<KMeansResult> {
    let kcfg = KMeansConfig {
        k,
        seed: stage_seed(cfg.seed, seed_stream + k as u64),
        ..cfg.kmeans.clone()
    };
    let result = lloyd(coll, &kcfg)?;
    save_result(&result, base, kcfg.seed)?;
    Ok(result)
}

/// Cluster the geographic embedding for every requested K.
pub fn stage_cluster_geo(cfg: &PipelineConfig) -> Result<()> {
    let base = cfg.out.join("mts_geo");
    require("cluster", &base.with_extension("bin"))?;
    let coll = load_collection(&base)?;
    for k in cfg.every_k() {
        cluster_collection(
            cfg,
            &coll,
            k,
            STREAM_KMEANS_GEO,
            &cfg.out.join(format!("kmeans_geo_k{k}")),
        )?;
    }
    Ok(())
}

/// Sample clustering triplets from the geographic partition, resume encoder
/// training, re-embed, and re-cluster.
pub fn stage_refine(cfg: &PipelineConfig) -> Result<()> {
    let seq = load_scene(cfg, "refine")?;
    let k = cfg.kmeans.k;
    let geo_base = cfg.out.join(format!("kmeans_geo_k{k}"));
    require("refine", &geo_base.with_extension("json"))?;
    let (_, partition, centroids) = load_result(&geo_base)?;
    let sampler = ClusterSamplerConfig {
        seed: stage_seed(cfg.seed, STREAM_CLUSTER_SAMPLER),
        ..cfg.cluster_sampler.clone()
    };
    let triplets =
        sample_cluster_triplets(&seq, &partition, &centroids, &sampler, cfg.kmeans.mode)?;
    write_atomic(
        &cfg.out.join("cluster_triplets.csv"),
        cluster_triplets_to_csv(&triplets)?.as_bytes(),
    )?;

    let ckpt = cfg.out.join("encoder_geo");
    require("refine", &ckpt.with_extension("bin"))?;
    let (params_geo, _) = load_checkpoint(&ckpt)?;
    let grid = grid_for(cfg, &seq)?;
    let source = SceneTriplets::new(&seq, grid.clone(), triplets);
    let train_cfg = TrainConfig {
        seed: stage_seed(cfg.seed, STREAM_TRAIN_REFINE),
        ..cfg.train_refine.clone()
    };
    let (refined, report) = resume_train(params_geo, &source, &train_cfg)?;
    save_checkpoint(&refined, &cfg.out.join("encoder_refined"), cfg.seed, train_cfg.epochs)?;
    report.save_csv(&cfg.out.join("loss_refined.csv"))?;

    embed_with(
        cfg,
        "encoder_refined",
        "mts_refined",
        Provenance::Clustering,
        "refine",
    )?;
    let coll = load_collection(&cfg.out.join("mts_refined"))?;
    let refined_base = cfg.out.join(format!("kmeans_refined_k{k}"));
    if cfg.warm_start_refine {
        // Seed Lloyd with the geographic partition's centroids recomputed in
        // the refined space.
        let items = (0..k)
            .map(|c| {
                let members: Vec<&crate::mts::Mts> =
                    partition.members(c).iter().map(|&i| coll.item(i)).collect();
                crate::kmeans::centroid(&members)
            })
            .collect::<Result<Vec<_>>>()?;
        let kcfg = KMeansConfig {
            seed: stage_seed(cfg.seed, STREAM_KMEANS_REFINE),
            ..cfg.kmeans.clone()
        };
        let result = lloyd_warm(&coll, Centroids { items }, &kcfg)?;
        save_result(&result, &refined_base, kcfg.seed)?;
    } else {
        cluster_collection(cfg, &coll, k, STREAM_KMEANS_REFINE, &refined_base)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EdgeInterpolation {
    pub edge: (usize, usize),
    pub w: f64,
    pub representative: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageScores {
    pub embedded: ValidityScores,
    pub kmeans_error: f64,
    pub ari_vs_planted: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoresReport {
    pub geo: StageScores,
    pub refined: StageScores,
    /// Which space the refinement silhouettes are computed in; embedded
    /// MTS space here, recorded so downstream readers need not guess.
    pub silhouette_space_assumption: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineReport {
    pub embedding: ValidityScores,
    pub pixel_baseline: ValidityScores,
    pub baseline_tile_size: usize,
    pub k: usize,
}

fn planted_labels(cfg: &PipelineConfig) -> Result<Option<GroundTruthLabels>> {
    let path = cfg.scene_dir().join("labels.json");
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(Some(
        serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?,
    ))
}

fn stage_scores(
    coll: &MtsCollection,
    result_base: &Path,
    labels: Option<&GroundTruthLabels>,
) -> Result<(StageScores, Partition, Centroids)> {
    let (header, partition, centroids) = load_result(result_base)?;
    let embedded = embedded_space_scores(coll, &partition)?;
    let ari = labels
        .map(|l| adjusted_rand_index(&partition.assignment, &l.labels))
        .transpose()?;
    Ok((
        StageScores {
            embedded,
            kmeans_error: header.error,
            ari_vs_planted: ari,
        },
        partition,
        centroids,
    ))
}

/// Render a horizontal strip of each cluster's medoid tile at the first
/// timestamp.
fn medoid_mosaic(
    seq: &SceneSequence,
    grid: &TileGrid,
    medoids: &[usize],
) -> Result<image::RgbImage> {
    let s = grid.tile_size as u32;
    let mut img = image::RgbImage::new(s * medoids.len() as u32, s);
    for (slot, &cell) in medoids.iter().enumerate() {
        let tile = extract_tile(seq, grid, cell, 1)?;
        let ch = tile.values.dim().0;
        for y in 0..s {
            for x in 0..s {
                let sample = |c: usize| {
                    (tile.values[[c.min(ch - 1), y as usize, x as usize]] * 255.0).round() as u8
                };
                img.put_pixel(
                    slot as u32 * s + x,
                    y,
                    image::Rgb([sample(0), sample(1), sample(2)]),
                );
            }
        }
    }
    Ok(img)
}

/// Emit the full report bundle: PCA-colored cluster maps, MDS scatter,
/// semantic tree with medoids and interpolation representatives, validity
/// scores, and the pixel-baseline comparison.
pub fn stage_analyze(cfg: &PipelineConfig) -> Result<()> {
    let seq = load_scene(cfg, "analyze")?;
    let grid = grid_for(cfg, &seq)?;
    let dir = cfg.out.join("analysis");
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    for base in ["mts_geo", "mts_refined"] {
        require("analyze", &cfg.out.join(base).with_extension("bin"))?;
    }
    let coll_geo = load_collection(&cfg.out.join("mts_geo"))?;
    let coll_refined = load_collection(&cfg.out.join("mts_refined"))?;
    let labels = planted_labels(cfg)?;
    let k = cfg.kmeans.k;

    // Cluster maps for every geographic K plus the refined partition.
    let basis_geo = pca_fit(&coll_geo)?;
    for gk in cfg.every_k() {
        let base = cfg.out.join(format!("kmeans_geo_k{gk}"));
        require("analyze", &base.with_extension("json"))?;
        let (_, partition, centroids) = load_result(&base)?;
        let colors = centroid_colors(&basis_geo, &centroids)?;
        let img = render_cluster_map(&grid, &partition, &colors)?;
        save_png(&img, &dir.join(format!("map_geo_k{gk}.png")))?;
    }
    let refined_base = cfg.out.join(format!("kmeans_refined_k{k}"));
    require("analyze", &refined_base.with_extension("json"))?;
    let basis_refined = pca_fit(&coll_refined)?;
    let (refined_scores, partition_refined, centroids_refined) =
        stage_scores(&coll_refined, &refined_base, labels.as_ref())?;
    let colors: ClusterColorMap = centroid_colors(&basis_refined, &centroids_refined)?;
    let img = render_cluster_map(&grid, &partition_refined, &colors)?;
    save_png(&img, &dir.join(format!("map_refined_k{k}.png")))?;

    // MDS scatter of the refined embedding.
    let projection: Projection2D = mds_project(&coll_refined, cfg.kmeans.mode)?;
    write_json(&dir.join("mds_refined.json"), &projection)?;

    // Semantic tree, medoids, and interpolation representatives.
    let tree: SemanticTree = semantic_tree(&centroids_refined, &partition_refined, cfg.kmeans.mode)?;
    write_json(&dir.join("tree.json"), &tree)?;
    write_atomic(&dir.join("tree.dot"), tree.to_dot().as_bytes())?;
    let mut medoids = Vec::with_capacity(k);
    for c in 0..k {
        let member_idx = partition_refined.members(c);
        let members: Vec<&crate::mts::Mts> =
            member_idx.iter().map(|&i| coll_refined.item(i)).collect();
        medoids.push(medoid(&members, &centroids_refined.items[c], cfg.kmeans.mode)?);
    }
    write_json(&dir.join("medoids.json"), &medoids)?;
    save_png(
        &medoid_mosaic(&seq, &grid, &medoids)?,
        &dir.join(format!("medoids_k{k}.png")),
    )?;
    let mut interpolations = Vec::new();
    for edge in &tree.edges {
        for w in [0.25, 0.5, 0.75] {
            let z_w = interpolate(
                &centroids_refined.items[edge.a],
                &centroids_refined.items[edge.b],
                w,
            )?;
            interpolations.push(EdgeInterpolation {
                edge: (edge.a, edge.b),
                w,
                representative: nearest_sequence(&coll_refined, &z_w, cfg.kmeans.mode)?,
            });
        }
    }
    write_json(&dir.join("interpolations.json"), &interpolations)?;

    // Before/after validity scores.
    let geo_base = cfg.out.join(format!("kmeans_geo_k{k}"));
    let (geo_scores, _, _) = stage_scores(&coll_geo, &geo_base, labels.as_ref())?;
    write_json(
        &dir.join("scores.json"),
        &ScoresReport {
            geo: geo_scores,
            refined: refined_scores,
            silhouette_space_assumption: "embedded".into(),
        },
    )?;

    // Pixel-mean baseline comparison in geographic space.
    let baseline_size = cfg.baseline_tile_size.unwrap_or(cfg.encoder.tile_size);
    let baseline_coll = mean_rgb_features(&seq, baseline_size)?;
    let baseline_grid = decompose_grid(seq.width(), seq.height(), baseline_size)?;
    let kcfg = KMeansConfig {
        seed: stage_seed(cfg.seed, STREAM_KMEANS_REFINE + 0xba5e),
        ..cfg.kmeans.clone()
    };
    let baseline_result = lloyd(&baseline_coll, &kcfg)?;
    let report = BaselineReport {
        embedding: geographic_space_scores(&grid, &partition_refined)?,
        pixel_baseline: geographic_space_scores(&baseline_grid, &baseline_result.partition)?,
        baseline_tile_size: baseline_size,
        k,
    };
    write_json(&dir.join("baseline.json"), &report)
}

// ---------------------------------------------------------------------------
// Full runs and the manifest
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub seed: u64,
    pub config: PipelineConfig,
    pub stages: Vec<StageRecord>,
    /// Relative path -> SHA-256 of every emitted file.
    pub artifacts: BTreeMap<String, String>,
}

fn collect_hashes(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    paths.sort();
    for path in paths {
        if path.is_dir() {
            collect_hashes(root, &path, out)?;
        } else {
            let rel = path
                .strip_prefix(root)
                .unwrap_or(&path)
                .to_string_lossy()
                .replace('\\', "/");
            if rel == "manifest.json" {
                continue;
            }
            out.insert(rel, sha256_file(&path)?);
        }
    }
    Ok(())
}

/// Run every stage in order and write a manifest hashing all artifacts.
pub fn run_all(cfg: &PipelineConfig) -> Result<RunManifest> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    let stages: [(&str, fn(&PipelineConfig) -> Result<()>); 6] = [
        ("synth", stage_synth),
        ("train-geo", stage_train_geo),
        ("embed", stage_embed_geo),
        ("cluster", stage_cluster_geo),
        ("refine", stage_refine),
        ("analyze", stage_analyze),
    ];
    let mut records = Vec::with_capacity(stages.len());
    for (name, run) in stages {
        let start = Instant::now();
        run(cfg).map_err(|e| e.in_stage(name))?;
        records.push(StageRecord {
            stage: name.to_string(),
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    let mut artifacts = BTreeMap::new();
    collect_hashes(&cfg.out, &cfg.out, &mut artifacts)?;
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        config: cfg.clone(),
        stages: records,
        artifacts,
    };
    write_json(&cfg.out.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Geographic stage as one call: train, embed, and cluster, returning the
/// persisted artifacts.
pub fn run_geo_stage(
    cfg: &PipelineConfig,
) -> Result<(EncoderParams, MtsCollection, KMeansResult)> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    stage_synth(cfg).map_err(|e| e.in_stage("synth"))?;
    stage_train_geo(cfg).map_err(|e| e.in_stage("train-geo"))?;
    stage_embed_geo(cfg).map_err(|e| e.in_stage("embed"))?;
    stage_cluster_geo(cfg).map_err(|e| e.in_stage("cluster"))?;
    load_geo_artifacts(cfg)
}

/// Load the persisted geographic-stage artifacts.
pub fn load_geo_artifacts(
    cfg: &PipelineConfig,
) -> Result<(EncoderParams, MtsCollection, KMeansResult)> {
    let (params, _) = load_checkpoint(&cfg.out.join("encoder_geo"))?;
    let coll = load_collection(&cfg.out.join("mts_geo"))?;
    let (header, partition, centroids) =
        load_result(&cfg.out.join(format!("kmeans_geo_k{}", cfg.kmeans.k)))?;
    let error = kmeans_error(&coll, &partition, &centroids, cfg.kmeans.mode)?;
    debug_assert!((error - header.error).abs() <= 1e-6 * header.error.max(1.0));
    Ok((
        params,
        coll,
        KMeansResult {
            partition,
            centroids,
            error: header.error,
            iterations: header.iterations,
            best_restart: 0,
        },
    ))
}

/// Refinement stage as one call, returning the persisted artifacts.
pub fn run_refine_stage(
    cfg: &PipelineConfig,
) -> Result<(EncoderParams, MtsCollection, KMeansResult)> {
    stage_refine(cfg).map_err(|e| e.in_stage("refine"))?;
    load_refined_artifacts(cfg)
}

/// Load the persisted refinement-stage artifacts.
pub fn load_refined_artifacts(
    cfg: &PipelineConfig,
) -> Result<(EncoderParams, MtsCollection, KMeansResult)> {
    let (params, _) = load_checkpoint(&cfg.out.join("encoder_refined"))?;
    let coll = load_collection(&cfg.out.join("mts_refined"))?;
    let (header, partition, centroids) =
        load_result(&cfg.out.join(format!("kmeans_refined_k{}", cfg.kmeans.k)))?;
    Ok((
        params,
        coll,
        KMeansResult {
            partition,
            centroids,
            error: header.error,
            iterations: header.iterations,
            best_restart: 0,
        },
    ))
}
